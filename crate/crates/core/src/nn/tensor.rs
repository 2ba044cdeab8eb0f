use crate::error::{Error, Result};

/// Dense row-major array of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::ShapeMismatch {
                expected: shape,
                actual: vec![data.len()],
            });
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite tensor element at {i}")));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; n],
        }
    }

    /// Skips the finiteness scan; used on internal hot paths.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<Self> {
        Self::check_len(&shape, self.data.len())?;
        Ok(Self {
            shape,
            data: self.data,
        })
    }

    fn check_len(shape: &[usize], len: usize) -> Result<()> {
        if shape.iter().product::<usize>() != len {
            return Err(Error::ShapeMismatch {
                expected: shape.to_vec(),
                actual: vec![len],
            });
        }
        Ok(())
    }

    /// Stacks equally shaped `[H, W]` or `[1, H, W]` planes into `[C, H, W]`.
    pub fn stack_channels(planes: &[&Tensor]) -> Result<Tensor> {
        let first = planes
            .first()
            .ok_or_else(|| Error::invalid("cannot stack zero planes"))?;
        let (h, w) = match first.shape() {
            [h, w] | [1, h, w] => (*h, *w),
            other => {
                return Err(Error::ShapeMismatch {
                    expected: vec![1, 0, 0],
                    actual: other.to_vec(),
                })
            }
        };
        let mut data = Vec::with_capacity(planes.len() * h * w);
        for p in planes {
            if p.len() != h * w {
                return Err(Error::ShapeMismatch {
                    expected: vec![h, w],
                    actual: p.shape().to_vec(),
                });
            }
            data.extend_from_slice(p.data());
        }
        Ok(Tensor::from_parts(vec![planes.len(), h, w], data))
    }

    /// Plane `c` of a `[C, H, W]` tensor as `[1, H, W]`.
    pub fn channel(&self, c: usize) -> Result<Tensor> {
        match self.shape() {
            [n, h, w] if c < *n => {
                let len = h * w;
                Ok(Tensor::from_parts(
                    vec![1, *h, *w],
                    self.data[c * len..(c + 1) * len].to_vec(),
                ))
            }
            other => Err(Error::ShapeMismatch {
                expected: vec![c + 1, 0, 0],
                actual: other.to_vec(),
            }),
        }
    }
}
