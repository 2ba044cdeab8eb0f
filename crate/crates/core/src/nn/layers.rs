//! Layer kernels. Convolutions go through im2col and a GEMM.

use super::Tensor;
use crate::error::{Error, Result};

/// `c = op(a) * op(b) + beta * c` for row-major `m x k` by `k x n`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    trans_a: bool,
    b: &[f64],
    trans_b: bool,
    beta: f64,
    c: &mut [f64],
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if trans_a {
        (1, m as isize)
    } else {
        (k as isize, 1)
    };
    let (rsb, csb) = if trans_b {
        (1, k as isize)
    } else {
        (n as isize, 1)
    };
    // SAFETY: the bounds assert above covers every element addressed by the
    // given dimensions and strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Geometry of a stride-1 "same" convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub in_ch: usize,
    pub out_ch: usize,
    pub k_h: usize,
    pub k_w: usize,
    pub h: usize,
    pub w: usize,
}

impl ConvGeom {
    fn pad_top(&self) -> usize {
        (self.k_h - 1) / 2
    }

    fn pad_left(&self) -> usize {
        (self.k_w - 1) / 2
    }

    fn patch(&self) -> usize {
        self.in_ch * self.k_h * self.k_w
    }

    fn pixels(&self) -> usize {
        self.h * self.w
    }
}

/// Rows `(c, u, v)`, columns `(i, j)`: `x[c, i + u - pad_top, j + v - pad_left]`.
fn im2col(x: &[f64], g: &ConvGeom) -> Vec<f64> {
    let (h, w) = (g.h as isize, g.w as isize);
    let mut cols = vec![0.0; g.patch() * g.pixels()];
    let mut row = 0;
    for c in 0..g.in_ch {
        let plane = &x[c * g.pixels()..(c + 1) * g.pixels()];
        for u in 0..g.k_h {
            let du = u as isize - g.pad_top() as isize;
            for v in 0..g.k_w {
                let dv = v as isize - g.pad_left() as isize;
                let dst = &mut cols[row * g.pixels()..(row + 1) * g.pixels()];
                let j_lo = (-dv).clamp(0, w) as usize;
                let j_hi = (w - dv).clamp(0, w) as usize;
                for i in 0..h {
                    let si = i + du;
                    if si < 0 || si >= h || j_lo >= j_hi {
                        continue;
                    }
                    let src_row = si as usize * g.w;
                    let out_row = i as usize * g.w;
                    let s0 = (j_lo as isize + dv) as usize;
                    dst[out_row + j_lo..out_row + j_hi]
                        .copy_from_slice(&plane[src_row + s0..src_row + s0 + (j_hi - j_lo)]);
                }
                row += 1;
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`].
fn col2im(cols: &[f64], g: &ConvGeom) -> Vec<f64> {
    let (h, w) = (g.h as isize, g.w as isize);
    let mut dx = vec![0.0; g.in_ch * g.pixels()];
    let mut row = 0;
    for c in 0..g.in_ch {
        let plane = &mut dx[c * g.pixels()..(c + 1) * g.pixels()];
        for u in 0..g.k_h {
            let du = u as isize - g.pad_top() as isize;
            for v in 0..g.k_w {
                let dv = v as isize - g.pad_left() as isize;
                let src = &cols[row * g.pixels()..(row + 1) * g.pixels()];
                let j_lo = (-dv).clamp(0, w) as usize;
                let j_hi = (w - dv).clamp(0, w) as usize;
                for i in 0..h {
                    let si = i + du;
                    if si < 0 || si >= h || j_lo >= j_hi {
                        continue;
                    }
                    let dst_row = si as usize * g.w;
                    let in_row = i as usize * g.w;
                    let s0 = (j_lo as isize + dv) as usize;
                    for (d, s) in plane[dst_row + s0..dst_row + s0 + (j_hi - j_lo)]
                        .iter_mut()
                        .zip(&src[in_row + j_lo..in_row + j_hi])
                    {
                        *d += s;
                    }
                }
                row += 1;
            }
        }
    }
    dx
}

/// Returns the output plane stack and the im2col buffer for reuse in the
/// backward pass.
pub(crate) fn conv_forward_raw(
    x: &[f64],
    weights: &[f64],
    bias: &[f64],
    g: &ConvGeom,
) -> (Vec<f64>, Vec<f64>) {
    let cols = im2col(x, g);
    let mut y = vec![0.0; g.out_ch * g.pixels()];
    for (o, plane) in y.chunks_exact_mut(g.pixels()).enumerate() {
        plane.fill(bias[o]);
    }
    gemm(
        g.out_ch,
        g.patch(),
        g.pixels(),
        weights,
        false,
        &cols,
        false,
        1.0,
        &mut y,
    );
    (y, cols)
}

/// Accumulates `dw += dy colsᵀ`, `db += Σ dy`; returns `dx` when requested.
pub(crate) fn conv_backward_raw(
    cols: &[f64],
    weights: &[f64],
    dy: &[f64],
    g: &ConvGeom,
    dw: &mut [f64],
    db: &mut [f64],
    need_dx: bool,
) -> Option<Vec<f64>> {
    gemm(
        g.out_ch,
        g.pixels(),
        g.patch(),
        dy,
        false,
        cols,
        true,
        1.0,
        dw,
    );
    for (o, plane) in dy.chunks_exact(g.pixels()).enumerate() {
        db[o] += plane.iter().sum::<f64>();
    }
    need_dx.then(|| {
        let mut dcols = vec![0.0; g.patch() * g.pixels()];
        gemm(
            g.patch(),
            g.out_ch,
            g.pixels(),
            weights,
            true,
            dy,
            false,
            0.0,
            &mut dcols,
        );
        col2im(&dcols, g)
    })
}

fn conv_geom(x: &Tensor, w: &Tensor) -> Result<ConvGeom> {
    match (x.shape(), w.shape()) {
        ([c, h, wd], [o, wc, kh, kw]) if c == wc && *kh > 0 && *kw > 0 => Ok(ConvGeom {
            in_ch: *c,
            out_ch: *o,
            k_h: *kh,
            k_w: *kw,
            h: *h,
            w: *wd,
        }),
        (xs, ws) => Err(Error::ShapeMismatch {
            expected: vec![ws.get(1).copied().unwrap_or(0), 0, 0],
            actual: xs.iter().chain(ws).copied().collect(),
        }),
    }
}

/// Stride-1 "same" cross-correlation:
/// `y[o,i,j] = b[o] + Σ_{c,u,v} w[o,c,u,v] x_padded[c, i+u, j+v]`.
///
/// `x` is `[C, H, W]`, `weights` is `[O, C, kH, kW]`.
pub fn conv2d_forward(x: &Tensor, weights: &Tensor, bias: &[f64]) -> Result<Tensor> {
    let g = conv_geom(x, weights)?;
    if bias.len() != g.out_ch {
        return Err(Error::ShapeMismatch {
            expected: vec![g.out_ch],
            actual: vec![bias.len()],
        });
    }
    let (y, _) = conv_forward_raw(x.data(), weights.data(), bias, &g);
    Ok(Tensor::from_parts(vec![g.out_ch, g.h, g.w], y))
}

/// Gradients `(dx, dw, db)` given the upstream gradient `dy`.
pub fn conv2d_backward(
    x: &Tensor,
    weights: &Tensor,
    dy: &Tensor,
) -> Result<(Tensor, Tensor, Vec<f64>)> {
    let g = conv_geom(x, weights)?;
    if dy.shape() != [g.out_ch, g.h, g.w] {
        return Err(Error::ShapeMismatch {
            expected: vec![g.out_ch, g.h, g.w],
            actual: dy.shape().to_vec(),
        });
    }
    let cols = im2col(x.data(), &g);
    let mut dw = vec![0.0; weights.len()];
    let mut db = vec![0.0; g.out_ch];
    let dx = conv_backward_raw(&cols, weights.data(), dy.data(), &g, &mut dw, &mut db, true)
        .expect("dx requested");
    Ok((
        Tensor::from_parts(x.shape().to_vec(), dx),
        Tensor::from_parts(weights.shape().to_vec(), dw),
        db,
    ))
}

/// 2x2 stride-2 max pooling over `[C, H, W]`. Odd trailing rows/columns are
/// dropped. Ties go to the first element in row-major window order. Returns
/// the flat input index chosen for every output element.
pub fn maxpool2x2(x: &Tensor) -> Result<(Tensor, Vec<usize>)> {
    let [c, h, w] = match x.shape() {
        [c, h, w] => [*c, *h, *w],
        other => {
            return Err(Error::ShapeMismatch {
                expected: vec![0, 0, 0],
                actual: other.to_vec(),
            })
        }
    };
    let (oh, ow) = (h / 2, w / 2);
    let data = x.data();
    let mut y = Vec::with_capacity(c * oh * ow);
    let mut arg = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        let base = ch * h * w;
        for i in 0..oh {
            for j in 0..ow {
                let r0 = base + 2 * i * w + 2 * j;
                let mut best = r0;
                for idx in [r0 + 1, r0 + w, r0 + w + 1] {
                    if data[idx] > data[best] {
                        best = idx;
                    }
                }
                y.push(data[best]);
                arg.push(best);
            }
        }
    }
    Ok((Tensor::from_parts(vec![c, oh, ow], y), arg))
}

/// Routes each upstream gradient to its recorded argmax.
pub fn maxpool_backward(argmax: &[usize], input_shape: &[usize], dy: &Tensor) -> Result<Tensor> {
    if argmax.len() != dy.len() {
        return Err(Error::ShapeMismatch {
            expected: vec![argmax.len()],
            actual: dy.shape().to_vec(),
        });
    }
    let mut dx = vec![0.0; input_shape.iter().product()];
    for (&i, &g) in argmax.iter().zip(dy.data()) {
        dx[i] += g;
    }
    Ok(Tensor::from_parts(input_shape.to_vec(), dx))
}

pub fn relu_forward(x: &Tensor) -> Tensor {
    Tensor::from_parts(
        x.shape().to_vec(),
        x.data().iter().map(|v| v.max(0.0)).collect(),
    )
}

/// `dy` masked by `x > 0` (the subgradient at 0 is 0).
pub fn relu_backward(x: &Tensor, dy: &Tensor) -> Result<Tensor> {
    if x.shape() != dy.shape() {
        return Err(Error::ShapeMismatch {
            expected: x.shape().to_vec(),
            actual: dy.shape().to_vec(),
        });
    }
    Ok(Tensor::from_parts(
        x.shape().to_vec(),
        x.data()
            .iter()
            .zip(dy.data())
            .map(|(x, g)| if *x > 0.0 { *g } else { 0.0 })
            .collect(),
    ))
}

/// `y = W x + b` with `W` stored `[outputs, inputs]`.
pub fn dense_forward(x: &[f64], weights: &[f64], bias: &[f64]) -> Result<Vec<f64>> {
    let outputs = bias.len();
    if weights.len() != outputs * x.len() {
        return Err(Error::ShapeMismatch {
            expected: vec![outputs, x.len()],
            actual: vec![weights.len()],
        });
    }
    let mut y = bias.to_vec();
    gemm(outputs, x.len(), 1, weights, false, x, false, 1.0, &mut y);
    Ok(y)
}

/// Accumulates `dw += dy xᵀ`, `db += dy` and returns `dx = Wᵀ dy`.
pub fn dense_backward(
    x: &[f64],
    weights: &[f64],
    dy: &[f64],
    dw: &mut [f64],
    db: &mut [f64],
) -> Result<Vec<f64>> {
    if weights.len() != dy.len() * x.len() || dw.len() != weights.len() || db.len() != dy.len() {
        return Err(Error::ShapeMismatch {
            expected: vec![dy.len(), x.len()],
            actual: vec![weights.len()],
        });
    }
    gemm(dy.len(), 1, x.len(), dy, false, x, false, 1.0, dw);
    for (b, g) in db.iter_mut().zip(dy) {
        *b += g;
    }
    let mut dx = vec![0.0; x.len()];
    gemm(x.len(), dy.len(), 1, weights, true, dy, false, 0.0, &mut dx);
    Ok(dx)
}

/// Numerically stable softmax (max subtraction).
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Vector-Jacobian product of softmax given its output `p`.
pub fn softmax_backward(p: &[f64], dy: &[f64]) -> Vec<f64> {
    let dot: f64 = p.iter().zip(dy).map(|(p, g)| p * g).sum();
    p.iter().zip(dy).map(|(p, g)| p * (g - dot)).collect()
}

/// Cross-entropy of `softmax(logits)` against `label`, and its gradient
/// with respect to the logits, `p - onehot`.
pub fn softmax_cross_entropy(logits: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
    if label >= logits.len() {
        return Err(Error::invalid(format!(
            "label {label} out of range for {} logits",
            logits.len()
        )));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    let loss = lse - logits[label];
    let mut grad = softmax(logits);
    grad[label] -= 1.0;
    Ok((loss, grad))
}

/// Mean loss over a batch; each gradient row is `(p - onehot) / batch`.
pub fn softmax_cross_entropy_batch(
    logits: &[Vec<f64>],
    labels: &[usize],
) -> Result<(f64, Vec<Vec<f64>>)> {
    if logits.len() != labels.len() || logits.is_empty() {
        return Err(Error::ShapeMismatch {
            expected: vec![labels.len()],
            actual: vec![logits.len()],
        });
    }
    let scale = 1.0 / logits.len() as f64;
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(logits.len());
    for (z, &y) in logits.iter().zip(labels) {
        let (l, mut g) = softmax_cross_entropy(z, y)?;
        total += l;
        g.iter_mut().for_each(|v| *v *= scale);
        grads.push(g);
    }
    Ok((total * scale, grads))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: Vec<f64>) -> Tensor {
        Tensor::new(shape.to_vec(), data).unwrap()
    }

    /// Direct evaluation of the convolution sum.
    fn conv_naive(x: &Tensor, w: &Tensor, b: &[f64]) -> Vec<f64> {
        let [c, h, wd] = [x.shape()[0], x.shape()[1], x.shape()[2]];
        let [o, _, kh, kw] = [w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]];
        let (pt, pl) = ((kh - 1) / 2, (kw - 1) / 2);
        let mut y = vec![0.0; o * h * wd];
        for oo in 0..o {
            for i in 0..h {
                for j in 0..wd {
                    let mut acc = b[oo];
                    for cc in 0..c {
                        for u in 0..kh {
                            for v in 0..kw {
                                let (si, sj) = (i + u, j + v);
                                if si < pt || sj < pl || si - pt >= h || sj - pl >= wd {
                                    continue;
                                }
                                acc += w.data()[((oo * c + cc) * kh + u) * kw + v]
                                    * x.data()[(cc * h + si - pt) * wd + sj - pl];
                            }
                        }
                    }
                    y[(oo * h + i) * wd + j] = acc;
                }
            }
        }
        y
    }

    #[test]
    fn unit_kernel_is_identity() {
        let x = t(&[1, 3, 4], (0..12).map(|v| v as f64).collect());
        let w = t(&[1, 1, 1, 1], vec![1.0]);
        assert_eq!(conv2d_forward(&x, &w, &[0.0]).unwrap(), x);
    }

    #[test]
    fn delta_input_places_flipped_kernel() {
        // a unit impulse at the center of a 3x3 input picks up w[2-i][2-j] at (i, j)
        let mut xd = vec![0.0; 9];
        xd[4] = 1.0;
        let x = t(&[1, 3, 3], xd);
        let kernel: Vec<f64> = (1..=9).map(|v| v as f64).collect();
        let w = t(&[1, 1, 3, 3], kernel.clone());
        let y = conv2d_forward(&x, &w, &[0.0]).unwrap();
        let expected: Vec<f64> = (0..9).map(|i| kernel[8 - i]).collect();
        assert_eq!(y.data(), &expected[..]);
    }

    #[test]
    fn conv_matches_naive_sum() {
        let mut rng = crate::seed::rng(4);
        use rand::Rng;
        for (c, o, k, h, w) in [
            (2, 3, 3, 5, 7),
            (1, 2, 5, 4, 4),
            (3, 2, 2, 6, 5),
            (2, 1, 1, 3, 3),
        ] {
            let x = t(
                &[c, h, w],
                (0..c * h * w)
                    .map(|_| rng.random_range(-1.0..1.0))
                    .collect(),
            );
            let wt = t(
                &[o, c, k, k],
                (0..o * c * k * k)
                    .map(|_| rng.random_range(-1.0..1.0))
                    .collect(),
            );
            let b: Vec<f64> = (0..o).map(|_| rng.random_range(-1.0..1.0)).collect();
            let fast = conv2d_forward(&x, &wt, &b).unwrap();
            for (a, e) in fast.data().iter().zip(conv_naive(&x, &wt, &b)) {
                assert!((a - e).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conv_shape_mismatch_reports_shapes() {
        let x = Tensor::zeros(vec![2, 4, 4]);
        let w = Tensor::zeros(vec![3, 1, 3, 3]);
        let err = conv2d_forward(&x, &w, &[0.0; 3]).unwrap_err();
        assert!(matches!(err, Error::ShapeMismatch { .. }));
        let msg = err.to_string();
        assert!(msg.contains('2') && msg.contains('3'), "{msg}");
    }

    #[test]
    fn maxpool_basics() {
        let x = t(&[1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        let (y, arg) = maxpool2x2(&x).unwrap();
        assert_eq!(y.data(), &[4.0]);
        assert_eq!(arg, vec![3]);
        let (_, arg) = maxpool2x2(&t(&[1, 2, 2], vec![5.0; 4])).unwrap();
        assert_eq!(arg, vec![0]);
        let (y, _) = maxpool2x2(&Tensor::zeros(vec![2, 5, 7])).unwrap();
        assert_eq!(y.shape(), &[2, 2, 3]);
    }

    #[test]
    fn pool_chain_for_five_stages() {
        let mut n = 100;
        let mut chain = vec![n];
        for _ in 0..5 {
            n /= 2;
            chain.push(n);
        }
        assert_eq!(chain, [100, 50, 25, 12, 6, 3]);
    }

    #[test]
    fn maxpool_backward_routes_to_argmax() {
        let x = t(&[1, 2, 4], vec![1.0, 9.0, 0.0, 0.0, 3.0, 4.0, 0.0, 7.0]);
        let (_, arg) = maxpool2x2(&x).unwrap();
        let dx = maxpool_backward(&arg, x.shape(), &t(&[1, 1, 2], vec![10.0, 20.0])).unwrap();
        assert_eq!(dx.data(), &[0.0, 10.0, 0.0, 0.0, 0.0, 0.0, 0.0, 20.0]);
    }

    #[test]
    fn softmax_uniform_and_stability() {
        let (loss, g) = softmax_cross_entropy(&[0.0; 6], 2).unwrap();
        assert!((loss - 6f64.ln()).abs() < 1e-12);
        assert!((loss - 1.7918).abs() < 1e-4);
        for (i, v) in g.iter().enumerate() {
            let p = 1.0 / 6.0 - if i == 2 { 1.0 } else { 0.0 };
            assert!((v - p).abs() < 1e-12);
        }
        let p = softmax(&[1000.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert!(p.iter().all(|v| v.is_finite()));
        assert!((p[0] - 1.0).abs() < 1e-12);
        let (loss, _) = softmax_cross_entropy(&[1000.0, 0.0, 0.0, 0.0, 0.0, 0.0], 0).unwrap();
        assert!(loss.is_finite() && loss < 1e-12);
    }

    #[test]
    fn batch_gradient_is_scaled() {
        let logits = vec![vec![0.0; 6], vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0]];
        let (loss, grads) = softmax_cross_entropy_batch(&logits, &[0, 1]).unwrap();
        let (l0, g0) = softmax_cross_entropy(&logits[0], 0).unwrap();
        let (l1, _) = softmax_cross_entropy(&logits[1], 1).unwrap();
        assert!((loss - (l0 + l1) / 2.0).abs() < 1e-12);
        assert!((grads[0][3] - g0[3] / 2.0).abs() < 1e-15);
    }

    #[test]
    fn dense_forward_and_backward_shapes() {
        let w = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]; // 2 x 3
        let y = dense_forward(&[1.0, 0.0, -1.0], &w, &[0.5, -0.5]).unwrap();
        assert_eq!(y, vec![-1.5, -2.5]);
        let (mut dw, mut db) = (vec![0.0; 6], vec![0.0; 2]);
        let dx = dense_backward(&[1.0, 0.0, -1.0], &w, &[1.0, 2.0], &mut dw, &mut db).unwrap();
        assert_eq!(dx, vec![9.0, 12.0, 15.0]);
        assert_eq!(dw, vec![1.0, 0.0, -1.0, 2.0, 0.0, -2.0]);
        assert_eq!(db, vec![1.0, 2.0]);
        assert!(dense_forward(&[1.0], &w, &[0.0, 0.0]).is_err());
    }
}
