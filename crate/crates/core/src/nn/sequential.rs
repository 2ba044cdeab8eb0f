use rand::Rng;

use super::layers::{
    conv_backward_raw, conv_forward_raw, dense_backward, dense_forward, maxpool2x2,
    maxpool_backward, softmax, softmax_backward, ConvGeom,
};
use super::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerSpec {
    Conv2d {
        k_h: usize,
        k_w: usize,
        in_ch: usize,
        out_ch: usize,
    },
    MaxPool2x2,
    Relu,
    Flatten,
    Dense {
        inputs: usize,
        outputs: usize,
    },
    Softmax,
}

impl LayerSpec {
    /// Output shape for the given input shape, or a shape error.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let mismatch = |expected: Vec<usize>| Error::ShapeMismatch {
            expected,
            actual: input.to_vec(),
        };
        match *self {
            LayerSpec::Conv2d {
                in_ch,
                out_ch,
                k_h,
                k_w,
            } => match input {
                [c, h, w] if *c == in_ch && k_h > 0 && k_w > 0 => Ok(vec![out_ch, *h, *w]),
                _ => Err(mismatch(vec![in_ch, 0, 0])),
            },
            LayerSpec::MaxPool2x2 => match input {
                [c, h, w] if *h >= 2 && *w >= 2 => Ok(vec![*c, h / 2, w / 2]),
                _ => Err(mismatch(vec![0, 2, 2])),
            },
            LayerSpec::Relu => Ok(input.to_vec()),
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
            LayerSpec::Dense { inputs, outputs } => match input {
                [n] if *n == inputs => Ok(vec![outputs]),
                _ => Err(mismatch(vec![inputs])),
            },
            LayerSpec::Softmax => match input {
                [n] if *n > 0 => Ok(vec![*n]),
                _ => Err(mismatch(vec![0])),
            },
        }
    }

    /// `(weight count, bias count)`.
    pub fn param_counts(&self) -> (usize, usize) {
        match *self {
            LayerSpec::Conv2d {
                k_h,
                k_w,
                in_ch,
                out_ch,
            } => (out_ch * in_ch * k_h * k_w, out_ch),
            LayerSpec::Dense { inputs, outputs } => (inputs * outputs, outputs),
            _ => (0, 0),
        }
    }

    fn fan_in(&self) -> usize {
        match *self {
            LayerSpec::Conv2d {
                k_h, k_w, in_ch, ..
            } => in_ch * k_h * k_w,
            LayerSpec::Dense { inputs, .. } => inputs,
            _ => 0,
        }
    }
}

impl std::fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LayerSpec::Conv2d {
                k_h,
                k_w,
                in_ch,
                out_ch,
            } => write!(f, "conv2d({k_h}x{k_w}, {in_ch}->{out_ch})"),
            LayerSpec::MaxPool2x2 => f.write_str("maxpool2x2"),
            LayerSpec::Relu => f.write_str("relu"),
            LayerSpec::Flatten => f.write_str("flatten"),
            LayerSpec::Dense { inputs, outputs } => write!(f, "dense({inputs}->{outputs})"),
            LayerSpec::Softmax => f.write_str("softmax"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub spec: LayerSpec,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Forward-pass state kept for backpropagation.
enum Cache {
    Conv {
        cols: Vec<f64>,
        geom: ConvGeom,
    },
    Pool {
        argmax: Vec<usize>,
        in_shape: Vec<usize>,
    },
    Relu {
        output: Vec<f64>,
    },
    Flatten {
        in_shape: Vec<usize>,
    },
    Dense {
        input: Vec<f64>,
    },
    Softmax {
        output: Vec<f64>,
    },
}

/// Forward trace of one example.
pub struct Trace {
    caches: Vec<Cache>,
}

/// A feed-forward stack with a fixed input shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequential {
    input_shape: Vec<usize>,
    layers: Vec<Layer>,
}

impl Sequential {
    /// Checks that the specs compose and initializes weights He-uniform
    /// (`U(-sqrt(6/fan_in), +sqrt(6/fan_in))`), biases zero.
    pub fn new(input_shape: Vec<usize>, specs: &[LayerSpec], rng: &mut impl Rng) -> Result<Self> {
        let mut shape = input_shape.clone();
        let mut layers = Vec::with_capacity(specs.len());
        for spec in specs {
            shape = spec.output_shape(&shape)?;
            let (nw, nb) = spec.param_counts();
            let limit = if nw > 0 {
                (6.0 / spec.fan_in() as f64).sqrt()
            } else {
                0.0
            };
            let weights = (0..nw).map(|_| rng.random_range(-limit..=limit)).collect();
            layers.push(Layer {
                spec: *spec,
                weights,
                bias: vec![0.0; nb],
            });
        }
        if let Some(i) = specs[..specs.len().saturating_sub(1)]
            .iter()
            .position(|s| *s == LayerSpec::Softmax)
        {
            return Err(Error::invalid(format!(
                "softmax may only be the last layer (found at {i})"
            )));
        }
        Ok(Self {
            input_shape,
            layers,
        })
    }

    /// Rebuilds a stack from explicit parameters.
    pub fn from_layers(input_shape: Vec<usize>, layers: Vec<Layer>) -> Result<Self> {
        let mut shape = input_shape.clone();
        for l in &layers {
            shape = l.spec.output_shape(&shape)?;
            let (nw, nb) = l.spec.param_counts();
            if l.weights.len() != nw || l.bias.len() != nb {
                return Err(Error::ShapeMismatch {
                    expected: vec![nw, nb],
                    actual: vec![l.weights.len(), l.bias.len()],
                });
            }
        }
        Ok(Self {
            input_shape,
            layers,
        })
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_shape(&self) -> Vec<usize> {
        self.layers.iter().fold(self.input_shape.clone(), |s, l| {
            l.spec.output_shape(&s).expect("validated at construction")
        })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    /// Parameter buffers in layer order, weights before bias.
    pub fn params(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .filter(|l| !l.weights.is_empty())
            .flat_map(|l| [l.weights.as_slice(), l.bias.as_slice()])
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .filter(|l| !l.weights.is_empty())
            .flat_map(|l| [l.weights.as_mut_slice(), l.bias.as_mut_slice()])
            .collect()
    }

    pub fn zero_grads(&self) -> Vec<Vec<f64>> {
        self.params().iter().map(|p| vec![0.0; p.len()]).collect()
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.shape() != self.input_shape.as_slice() {
            return Err(Error::ShapeMismatch {
                expected: self.input_shape.clone(),
                actual: x.shape().to_vec(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.forward_trace(x)?.0)
    }

    pub fn forward_trace(&self, x: &Tensor) -> Result<(Tensor, Trace)> {
        self.check_input(x)?;
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut shape = x.shape().to_vec();
        let mut data = x.data().to_vec();
        for layer in &self.layers {
            match layer.spec {
                LayerSpec::Conv2d {
                    k_h,
                    k_w,
                    in_ch,
                    out_ch,
                } => {
                    let geom = ConvGeom {
                        in_ch,
                        out_ch,
                        k_h,
                        k_w,
                        h: shape[1],
                        w: shape[2],
                    };
                    let (y, cols) = conv_forward_raw(&data, &layer.weights, &layer.bias, &geom);
                    caches.push(Cache::Conv { cols, geom });
                    shape = vec![out_ch, geom.h, geom.w];
                    data = y;
                }
                LayerSpec::MaxPool2x2 => {
                    let t = Tensor::from_parts(shape.clone(), data);
                    let (y, argmax) = maxpool2x2(&t)?;
                    caches.push(Cache::Pool {
                        argmax,
                        in_shape: shape,
                    });
                    shape = y.shape().to_vec();
                    data = y.into_data();
                }
                LayerSpec::Relu => {
                    data.iter_mut().for_each(|v| *v = v.max(0.0));
                    caches.push(Cache::Relu {
                        output: data.clone(),
                    });
                }
                LayerSpec::Flatten => {
                    caches.push(Cache::Flatten {
                        in_shape: std::mem::replace(&mut shape, vec![data.len()]),
                    });
                }
                LayerSpec::Dense { outputs, .. } => {
                    let y = dense_forward(&data, &layer.weights, &layer.bias)?;
                    caches.push(Cache::Dense { input: data });
                    shape = vec![outputs];
                    data = y;
                }
                LayerSpec::Softmax => {
                    data = softmax(&data);
                    caches.push(Cache::Softmax {
                        output: data.clone(),
                    });
                }
            }
        }
        Ok((Tensor::from_parts(shape, data), Trace { caches }))
    }

    /// Backpropagates `dy` through the trace, adding parameter gradients into
    /// `grads` (laid out as [`Sequential::params`]). Returns the input
    /// gradient when `need_input_grad` is set.
    pub fn backward(
        &self,
        trace: Trace,
        dy: Tensor,
        grads: &mut [Vec<f64>],
        need_input_grad: bool,
    ) -> Result<Option<Tensor>> {
        let mut slot = grads.len();
        let mut shape = dy.shape().to_vec();
        let mut g = dy.into_data();
        let first_param_layer = self.layers.iter().position(|l| !l.weights.is_empty());
        for (idx, (layer, cache)) in self.layers.iter().zip(trace.caches).enumerate().rev() {
            // below the first parametric layer nothing else needs gradients
            let stop_after = !need_input_grad && Some(idx) == first_param_layer;
            match cache {
                Cache::Conv { cols, geom } => {
                    slot -= 2;
                    let (dw, db) = split_pair(grads, slot);
                    let dx =
                        conv_backward_raw(&cols, &layer.weights, &g, &geom, dw, db, !stop_after);
                    if stop_after {
                        return Ok(None);
                    }
                    g = dx.expect("requested");
                    shape = vec![geom.in_ch, geom.h, geom.w];
                }
                Cache::Pool { argmax, in_shape } => {
                    let dy = Tensor::from_parts(shape, g);
                    g = maxpool_backward(&argmax, &in_shape, &dy)?.into_data();
                    shape = in_shape;
                }
                Cache::Relu { output } => {
                    for (v, y) in g.iter_mut().zip(&output) {
                        if *y <= 0.0 {
                            *v = 0.0;
                        }
                    }
                }
                Cache::Flatten { in_shape } => shape = in_shape,
                Cache::Dense { input } => {
                    slot -= 2;
                    let (dw, db) = split_pair(grads, slot);
                    let dx = dense_backward(&input, &layer.weights, &g, dw, db)?;
                    if stop_after {
                        return Ok(None);
                    }
                    shape = vec![input.len()];
                    g = dx;
                }
                Cache::Softmax { output } => g = softmax_backward(&output, &g),
            }
        }
        Ok(need_input_grad.then(|| Tensor::from_parts(shape, g)))
    }
}

fn split_pair(grads: &mut [Vec<f64>], at: usize) -> (&mut [f64], &mut [f64]) {
    let (w, b) = grads[at..at + 2].split_at_mut(1);
    (&mut w[0], &mut b[0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;

    #[test]
    fn shapes_compose_or_fail() {
        let mut rng = seed::rng(0);
        let ok = Sequential::new(
            vec![1, 8, 8],
            &[
                LayerSpec::Conv2d {
                    k_h: 3,
                    k_w: 3,
                    in_ch: 1,
                    out_ch: 2,
                },
                LayerSpec::Relu,
                LayerSpec::MaxPool2x2,
                LayerSpec::Flatten,
                LayerSpec::Dense {
                    inputs: 32,
                    outputs: 3,
                },
                LayerSpec::Softmax,
            ],
            &mut rng,
        )
        .unwrap();
        assert_eq!(ok.output_shape(), vec![3]);
        assert_eq!(ok.param_count(), 2 * 9 + 2 + 32 * 3 + 3);
        let bad = Sequential::new(
            vec![1, 8, 8],
            &[
                LayerSpec::Flatten,
                LayerSpec::Dense {
                    inputs: 10,
                    outputs: 3,
                },
            ],
            &mut rng,
        );
        assert!(matches!(bad, Err(Error::ShapeMismatch { .. })));
        let softmax_mid = Sequential::new(
            vec![4],
            &[
                LayerSpec::Softmax,
                LayerSpec::Dense {
                    inputs: 4,
                    outputs: 2,
                },
            ],
            &mut rng,
        );
        assert!(softmax_mid.is_err());
    }

    #[test]
    fn he_uniform_bounds() {
        let mut rng = seed::rng(1);
        let s = Sequential::new(
            vec![3, 4, 4],
            &[LayerSpec::Conv2d {
                k_h: 3,
                k_w: 3,
                in_ch: 3,
                out_ch: 5,
            }],
            &mut rng,
        )
        .unwrap();
        let limit = (6.0f64 / 27.0).sqrt();
        assert!(s.layers()[0].weights.iter().all(|w| w.abs() <= limit));
        assert!(s.layers()[0].bias.iter().all(|b| *b == 0.0));
    }

    #[test]
    fn input_shape_checked() {
        let mut rng = seed::rng(2);
        let s = Sequential::new(vec![4], &[LayerSpec::Relu], &mut rng).unwrap();
        assert!(s.forward(&Tensor::zeros(vec![5])).is_err());
    }
}
