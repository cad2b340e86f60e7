//! Dormand–Prince 5(4) with embedded error control for autonomous linear
//! systems `y' = f(y)`, stepping exactly onto requested output times.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdeOptions {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_steps: usize,
}

impl Default for OdeOptions {
    fn default() -> Self {
        Self {
            rel_tol: 1e-10,
            abs_tol: 1e-13,
            max_steps: 50_000_000,
        }
    }
}

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
// fifth minus fourth order weights
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

struct Work {
    k: [Vec<f64>; 7],
    tmp: Vec<f64>,
    y_new: Vec<f64>,
}

/// Integrates from `t = 0` and returns the state at every entry of `times`
/// (nondecreasing, nonnegative).
pub fn integrate<F>(f: F, y0: &[f64], times: &[f64], opts: &OdeOptions) -> Result<Vec<Vec<f64>>>
where
    F: Fn(&[f64], &mut [f64]),
{
    let n = y0.len();
    let mut w = Work {
        k: std::array::from_fn(|_| vec![0.0; n]),
        tmp: vec![0.0; n],
        y_new: vec![0.0; n],
    };
    let mut y = y0.to_vec();
    let mut t = 0.0;
    f(&y, &mut w.k[0]);
    let mut h = initial_step(&y, &w.k[0], opts);
    let mut steps = 0usize;
    let mut out = Vec::with_capacity(times.len());
    for &target in times {
        if target < t {
            return Err(Error::InvalidGrid(format!("time {target} precedes {t}")));
        }
        while t < target {
            let remaining = target - t;
            let last = h >= remaining;
            let step = if last { remaining } else { h };
            if step <= 8.0 * f64::EPSILON * t.abs().max(1e-300) {
                return Err(Error::StepSizeUnderflow(t));
            }
            steps += 1;
            if steps > opts.max_steps {
                return Err(Error::StepSizeUnderflow(t));
            }
            let err = trial_step(&f, &y, step, &mut w, opts);
            if err <= 1.0 {
                t = if last { target } else { t + step };
                std::mem::swap(&mut y, &mut w.y_new);
                // first-same-as-last
                let (head, tail) = w.k.split_at_mut(6);
                head[0].copy_from_slice(&tail[0]);
            }
            let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
            let factor = if err > 1.0 { factor.min(1.0) } else { factor };
            // a shortened final step must not shrink the next one
            h = if last && err <= 1.0 { h.max(step * factor) } else { step * factor };
        }
        out.push(y.clone());
    }
    Ok(out)
}

fn initial_step(y: &[f64], dy: &[f64], opts: &OdeOptions) -> f64 {
    let mut d0: f64 = 0.0;
    let mut d1: f64 = 0.0;
    for (&yi, &fi) in y.iter().zip(dy) {
        let sc = opts.abs_tol + opts.rel_tol * yi.abs();
        d0 = d0.max((yi / sc).abs());
        d1 = d1.max((fi / sc).abs());
    }
    if d0 < 1e-5 || d1 < 1e-5 {
        1e-6
    } else {
        (0.01 * d0 / d1).min(1.0)
    }
}

fn axpy_into(out: &mut [f64], y: &[f64], h: f64, terms: &[(f64, &[f64])]) {
    for i in 0..out.len() {
        let mut acc = 0.0;
        for &(c, k) in terms {
            acc += c * k[i];
        }
        out[i] = y[i] + h * acc;
    }
}

/// One Dormand–Prince step; leaves the candidate in `w.y_new` and its
/// derivative in `k[6]`, returns the scaled error norm.
fn trial_step<F>(f: &F, y: &[f64], h: f64, w: &mut Work, opts: &OdeOptions) -> f64
where
    F: Fn(&[f64], &mut [f64]),
{
    let [k1, k2, k3, k4, k5, k6, k7] = &mut w.k;
    let tmp = &mut w.tmp;
    axpy_into(tmp, y, h, &[(A21, k1)]);
    f(tmp, k2);
    axpy_into(tmp, y, h, &[(A31, k1), (A32, k2)]);
    f(tmp, k3);
    axpy_into(tmp, y, h, &[(A41, k1), (A42, k2), (A43, k3)]);
    f(tmp, k4);
    axpy_into(tmp, y, h, &[(A51, k1), (A52, k2), (A53, k3), (A54, k4)]);
    f(tmp, k5);
    axpy_into(tmp, y, h, &[(A61, k1), (A62, k2), (A63, k3), (A64, k4), (A65, k5)]);
    f(tmp, k6);
    axpy_into(&mut w.y_new, y, h, &[(B1, k1), (B3, k3), (B4, k4), (B5, k5), (B6, k6)]);
    f(&w.y_new, k7);
    let mut acc = 0.0;
    for i in 0..y.len() {
        let e = h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
        let sc = opts.abs_tol + opts.rel_tol * y[i].abs().max(w.y_new[i].abs());
        acc += (e / sc).powi(2);
    }
    let err = (acc / y.len().max(1) as f64).sqrt();
    if err.is_finite() {
        err
    } else {
        f64::INFINITY
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_decay() {
        let times = [0.0, 0.5, 1.0, 3.0];
        let out = integrate(|y, dy| dy[0] = -2.0 * y[0], &[1.0], &times, &OdeOptions::default()).unwrap();
        for (t, y) in times.iter().zip(&out) {
            assert!((y[0] - (-2.0 * t).exp()).abs() < 1e-11, "t {t}: {}", y[0]);
        }
    }

    #[test]
    fn rotation_and_stiff_component() {
        let f = |y: &[f64], dy: &mut [f64]| {
            dy[0] = -y[1];
            dy[1] = y[0];
            dy[2] = -500.0 * y[2];
        };
        let out = integrate(f, &[1.0, 0.0, 1.0], &[2.0], &OdeOptions::default()).unwrap();
        assert!((out[0][0] - 2f64.cos()).abs() < 1e-9);
        assert!((out[0][1] - 2f64.sin()).abs() < 1e-9);
        assert!(out[0][2].abs() < 1e-12);
    }

    #[test]
    fn rejects_backwards_grid() {
        let r = integrate(|y, dy| dy[0] = -y[0], &[1.0], &[1.0, 0.5], &OdeOptions::default());
        assert!(matches!(r, Err(Error::InvalidGrid(_))));
    }
}
