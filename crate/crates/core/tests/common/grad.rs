//! Finite-difference gradient checks. Each check returns the largest
//! relative error it saw.
#![allow(dead_code)]

use rand::Rng;
use sonar_gesture::dataset::{ClipImages, FusionMode};
use sonar_gesture::dsp::SpectrogramImage;
use sonar_gesture::models::{build_model, FusionModel};
use sonar_gesture::nn::{
    conv2d_backward, conv2d_forward, dense_backward, dense_forward, maxpool2x2, maxpool_backward,
    relu_backward, relu_forward, softmax, softmax_backward, softmax_cross_entropy, Classifier,
    LayerSpec, Sequential, Tensor,
};
use sonar_gesture::seed;

use super::{central_difference, relative_error, sample_indices};

fn random_vec(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn worst(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| relative_error(*a, *n))
        .fold(0.0, f64::max)
}

fn numeric_grad(params: &mut [f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    (0..params.len())
        .map(|i| central_difference(params, i, &mut f))
        .collect()
}

/// `L = <r, conv(x, w, b)>` against x, w and b, on a 2 x 5 x 6 input.
pub fn conv(k_h: usize, k_w: usize, seed_: u64) -> f64 {
    conv_shaped(2, 3, 5, 6, k_h, k_w, seed_)
}

pub fn conv_shaped(
    ci: usize,
    co: usize,
    h: usize,
    w: usize,
    k_h: usize,
    k_w: usize,
    seed_: u64,
) -> f64 {
    let mut rng = seed::rng(seed_);
    let mut x = random_vec(&mut rng, ci * h * w);
    let mut wt = random_vec(&mut rng, co * ci * k_h * k_w);
    let mut b = random_vec(&mut rng, co);
    let r = random_vec(&mut rng, co * h * w);
    let xs = vec![ci, h, w];
    let ws = vec![co, ci, k_h, k_w];
    let loss = |x: &[f64], wt: &[f64], b: &[f64]| {
        let y = conv2d_forward(
            &Tensor::new(xs.clone(), x.to_vec()).unwrap(),
            &Tensor::new(ws.clone(), wt.to_vec()).unwrap(),
            b,
        )
        .unwrap();
        dot(y.data(), &r)
    };
    let (dx, dw, db) = conv2d_backward(
        &Tensor::new(xs.clone(), x.clone()).unwrap(),
        &Tensor::new(ws.clone(), wt.clone()).unwrap(),
        &Tensor::new(vec![co, h, w], r.clone()).unwrap(),
    )
    .unwrap();
    let (w0, b0) = (wt.clone(), b.clone());
    let nx = numeric_grad(&mut x, |x| loss(x, &w0, &b0));
    let x0 = x.clone();
    let nw = numeric_grad(&mut wt, |w| loss(&x0, w, &b0));
    let nb = numeric_grad(&mut b, |b| loss(&x0, &w0, b));
    worst(dx.data(), &nx)
        .max(worst(dw.data(), &nw))
        .max(worst(&db, &nb))
}

/// `L = <r, maxpool(x)>` against x; odd sizes drop the last row / column.
pub fn maxpool(h: usize, w: usize, seed_: u64) -> f64 {
    let mut rng = seed::rng(seed_);
    let shape = vec![2, h, w];
    let mut x = random_vec(&mut rng, 2 * h * w);
    let r = random_vec(&mut rng, 2 * (h / 2) * (w / 2));
    let (_, argmax) = maxpool2x2(&Tensor::new(shape.clone(), x.clone()).unwrap()).unwrap();
    let dy = Tensor::new(vec![2, h / 2, w / 2], r.clone()).unwrap();
    let dx = maxpool_backward(&argmax, &shape, &dy).unwrap();
    let n = numeric_grad(&mut x, |x| {
        dot(
            maxpool2x2(&Tensor::new(shape.clone(), x.to_vec()).unwrap())
                .unwrap()
                .0
                .data(),
            &r,
        )
    });
    worst(dx.data(), &n)
}

/// `L = <r, relu(x)>` with inputs kept away from the kink.
pub fn relu(seed_: u64) -> f64 {
    let mut rng = seed::rng(seed_);
    let mut x: Vec<f64> = random_vec(&mut rng, 40)
        .into_iter()
        .map(|v| if v.abs() < 0.01 { v + 0.05 } else { v })
        .collect();
    let r = random_vec(&mut rng, 40);
    let shape = vec![40];
    let dx = relu_backward(
        &Tensor::new(shape.clone(), x.clone()).unwrap(),
        &Tensor::new(shape.clone(), r.clone()).unwrap(),
    )
    .unwrap();
    let n = numeric_grad(&mut x, |x| {
        dot(
            relu_forward(&Tensor::new(shape.clone(), x.to_vec()).unwrap()).data(),
            &r,
        )
    });
    worst(dx.data(), &n)
}

/// `L = <r, W x + b>` against x, W and b.
pub fn dense(seed_: u64) -> f64 {
    let mut rng = seed::rng(seed_);
    let (ni, no) = (7, 4);
    let mut x = random_vec(&mut rng, ni);
    let mut w = random_vec(&mut rng, no * ni);
    let mut b = random_vec(&mut rng, no);
    let r = random_vec(&mut rng, no);
    let (mut dw, mut db) = (vec![0.0; no * ni], vec![0.0; no]);
    let dx = dense_backward(&x, &w, &r, &mut dw, &mut db).unwrap();
    let loss = |x: &[f64], w: &[f64], b: &[f64]| dot(&dense_forward(x, w, b).unwrap(), &r);
    let (w0, b0) = (w.clone(), b.clone());
    let nx = numeric_grad(&mut x, |x| loss(x, &w0, &b0));
    let x0 = x.clone();
    let nw = numeric_grad(&mut w, |w| loss(&x0, w, &b0));
    let nb = numeric_grad(&mut b, |b| loss(&x0, &w0, b));
    worst(&dx, &nx).max(worst(&dw, &nw)).max(worst(&db, &nb))
}

/// `L = <r, softmax(z)>` against z.
pub fn softmax_layer(seed_: u64) -> f64 {
    let mut rng = seed::rng(seed_);
    let mut z: Vec<f64> = random_vec(&mut rng, 6).iter().map(|v| 3.0 * v).collect();
    let r = random_vec(&mut rng, 6);
    let dz = softmax_backward(&softmax(&z), &r);
    let n = numeric_grad(&mut z, |z| dot(&softmax(z), &r));
    worst(&dz, &n)
}

/// Cross-entropy of softmax against every label.
pub fn cross_entropy(seed_: u64) -> f64 {
    let mut rng = seed::rng(seed_);
    let mut z: Vec<f64> = random_vec(&mut rng, 6).iter().map(|v| 4.0 * v).collect();
    (0..6)
        .map(|label| {
            let (_, dz) = softmax_cross_entropy(&z, label).unwrap();
            let n = numeric_grad(&mut z, |z| softmax_cross_entropy(z, label).unwrap().0);
            worst(&dz, &n)
        })
        .fold(0.0, f64::max)
}

/// A small stack with every layer kind, checked end to end against its
/// input and all parameters.
pub fn sequential(seed_: u64) -> f64 {
    let specs = [
        LayerSpec::Conv2d {
            k_h: 3,
            k_w: 3,
            in_ch: 2,
            out_ch: 3,
        },
        LayerSpec::Relu,
        LayerSpec::MaxPool2x2,
        LayerSpec::Flatten,
        LayerSpec::Dense {
            inputs: 3 * 3 * 4,
            outputs: 5,
        },
        LayerSpec::Softmax,
    ];
    let mut net = Sequential::new(vec![2, 6, 8], &specs, &mut seed::rng(seed_)).unwrap();
    let mut rng = seed::rng(seed_ ^ 0xabc);
    let mut x = random_vec(&mut rng, 2 * 6 * 8);
    let r = random_vec(&mut rng, 5);
    let loss = |net: &Sequential, x: &[f64]| {
        dot(
            net.forward(&Tensor::new(vec![2, 6, 8], x.to_vec()).unwrap())
                .unwrap()
                .data(),
            &r,
        )
    };
    let mut grads = net.zero_grads();
    let (_, trace) = net
        .forward_trace(&Tensor::new(vec![2, 6, 8], x.clone()).unwrap())
        .unwrap();
    let dx = net
        .backward(
            trace,
            Tensor::new(vec![5], r.clone()).unwrap(),
            &mut grads,
            true,
        )
        .unwrap()
        .unwrap();
    let frozen = net.clone();
    let nx = numeric_grad(&mut x, |x| loss(&frozen, x));
    let mut err = worst(dx.data(), &nx);
    for (b, g) in grads.iter().enumerate() {
        let numeric: Vec<f64> = (0..g.len())
            .map(|i| {
                let orig = net.params()[b][i];
                net.params_mut()[b][i] = orig + super::FD_STEP;
                let up = loss(&net, &x);
                net.params_mut()[b][i] = orig - super::FD_STEP;
                let down = loss(&net, &x);
                net.params_mut()[b][i] = orig;
                (up - down) / (2.0 * super::FD_STEP)
            })
            .collect();
        err = err.max(worst(g, &numeric));
    }
    err
}

fn random_clip(seed_: u64) -> ClipImages {
    let mut rng = seed::rng(seed_);
    let mut img =
        || SpectrogramImage::new((0..10_000).map(|_| rng.random::<f64>()).collect()).unwrap();
    ClipImages {
        top: img(),
        bottom: img(),
        mix: img(),
    }
}

/// Cross-entropy gradient of a full fusion model, checked on
/// `per_buffer` sampled entries of every parameter buffer.
pub fn model(mode: FusionMode, per_buffer: usize, seed_: u64) -> f64 {
    let mut m: FusionModel = build_model(mode, seed_).unwrap();
    let x = random_clip(seed_ + 1).pack(mode);
    let label = (seed_ % 6) as usize;
    let mut grads = m.zero_grads();
    m.accumulate_gradients(&x, label, 1.0, &mut grads).unwrap();
    let loss = |m: &FusionModel| {
        softmax_cross_entropy(&m.logits(&x).unwrap(), label)
            .unwrap()
            .0
    };
    let mut err: f64 = 0.0;
    for (b, g) in grads.iter().enumerate() {
        for i in sample_indices(g.len(), per_buffer) {
            let orig = m.params()[b][i];
            m.params_mut()[b][i] = orig + super::FD_STEP;
            let up = loss(&m);
            m.params_mut()[b][i] = orig - super::FD_STEP;
            let down = loss(&m);
            m.params_mut()[b][i] = orig;
            err = err.max(relative_error(g[i], (up - down) / (2.0 * super::FD_STEP)));
        }
    }
    err
}
