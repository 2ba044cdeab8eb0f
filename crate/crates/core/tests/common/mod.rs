//! Reference implementations used only by the integration tests. They are
//! written from the textbook definitions and share no code with the library.
#![allow(dead_code)]

pub mod grad;

use std::f64::consts::PI;

/// `|X[k]|` for `k = 0..=N/2` of the periodic-Hann-windowed frame, by the
/// direct O(N^2) sum with twiddles reduced exactly modulo N.
pub fn direct_dft_magnitudes(frame: &[f64]) -> Vec<f64> {
    let n = frame.len();
    let windowed: Vec<f64> = frame
        .iter()
        .enumerate()
        .map(|(i, x)| x * (0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos()))
        .collect();
    let cos: Vec<f64> = (0..n)
        .map(|m| (2.0 * PI * m as f64 / n as f64).cos())
        .collect();
    let sin: Vec<f64> = (0..n)
        .map(|m| (2.0 * PI * m as f64 / n as f64).sin())
        .collect();
    (0..=n / 2)
        .map(|k| {
            let (mut re, mut im) = (0.0, 0.0);
            for (i, x) in windowed.iter().enumerate() {
                let m = (i * k) % n;
                re += x * cos[m];
                im -= x * sin[m];
            }
            re.hypot(im)
        })
        .collect()
}

pub const FD_STEP: f64 = 1e-6;

/// Central difference `(f(x + h) - f(x - h)) / 2h` of `f` with respect to
/// `params[i]`, restoring the parameter afterwards.
pub fn central_difference(params: &mut [f64], i: usize, mut f: impl FnMut(&[f64]) -> f64) -> f64 {
    let orig = params[i];
    params[i] = orig + FD_STEP;
    let up = f(params);
    params[i] = orig - FD_STEP;
    let down = f(params);
    params[i] = orig;
    (up - down) / (2.0 * FD_STEP)
}

/// Relative error with a floor on the denominator, so that gradients that
/// are zero up to rounding compare by absolute error instead.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-4)
}

/// Evenly spaced sample of at most `k` indices from `0..n`.
pub fn sample_indices(n: usize, k: usize) -> Vec<usize> {
    if n <= k {
        return (0..n).collect();
    }
    (0..k)
        .map(|j| j * n / k + (j * 7) % (n / k).max(1))
        .collect()
}

pub fn rms(a: &[f64], b: &[f64]) -> f64 {
    (a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64).sqrt()
}

/// Closed-form literal Doppler shift.
pub fn doppler_closed_form(f: f64, v: f64, vo: f64, vs: f64) -> f64 {
    f * (v + vo) / (v - vs)
}
