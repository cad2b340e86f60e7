//! Symmetric tridiagonal eigensolver: Sturm-sequence bisection for the
//! eigenvalues and inverse iteration for the vectors. Every mode is
//! independent, so both stages run data-parallel.

use crate::par;

/// Eigenpairs ordered by decreasing eigenvalue. `vectors` is mode-major:
/// mode `k` occupies `vectors[k*n..(k+1)*n]`, unit 2-norm, largest entry
/// positive.
#[derive(Debug, Clone)]
pub struct SymTridiagEigen {
    pub values: Vec<f64>,
    pub vectors: Vec<f64>,
    n: usize,
}

impl SymTridiagEigen {
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn vector(&self, k: usize) -> &[f64] {
        &self.vectors[k * self.n..(k + 1) * self.n]
    }

    /// Full decomposition of the matrix with diagonal `diag` and
    /// off-diagonal `offdiag`.
    pub fn compute(diag: &[f64], offdiag: &[f64]) -> Self {
        let n = diag.len();
        assert_eq!(offdiag.len() + 1, n.max(1));
        let values = eigenvalues(diag, offdiag);
        let norm = gershgorin_radius(diag, offdiag);
        let columns = par::map_slice(&values, |&lambda| inverse_iteration(diag, offdiag, lambda, norm));
        let mut vectors = Vec::with_capacity(n * n);
        for c in columns {
            vectors.extend_from_slice(&c);
        }
        Self { values, vectors, n }
    }
}

fn gershgorin_interval(diag: &[f64], offdiag: &[f64]) -> (f64, f64) {
    let n = diag.len();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..n {
        let mut r = 0.0;
        if i > 0 {
            r += offdiag[i - 1].abs();
        }
        if i + 1 < n {
            r += offdiag[i].abs();
        }
        lo = lo.min(diag[i] - r);
        hi = hi.max(diag[i] + r);
    }
    (lo, hi)
}

fn gershgorin_radius(diag: &[f64], offdiag: &[f64]) -> f64 {
    let (lo, hi) = gershgorin_interval(diag, offdiag);
    lo.abs().max(hi.abs()).max(f64::MIN_POSITIVE)
}

/// Number of eigenvalues strictly below `x`.
fn count_below(diag: &[f64], off_sq: &[f64], x: f64, pivmin: f64) -> usize {
    let mut count = 0;
    let mut q = diag[0] - x;
    if q.abs() < pivmin {
        q = -pivmin;
    }
    if q < 0.0 {
        count += 1;
    }
    for i in 1..diag.len() {
        q = diag[i] - x - off_sq[i - 1] / q;
        if q.abs() < pivmin {
            q = -pivmin;
        }
        if q < 0.0 {
            count += 1;
        }
    }
    count
}

/// All eigenvalues, descending.
pub fn eigenvalues(diag: &[f64], offdiag: &[f64]) -> Vec<f64> {
    let n = diag.len();
    if n <= 1 {
        return diag.to_vec();
    }
    let (lo, hi) = gershgorin_interval(diag, offdiag);
    let norm = lo.abs().max(hi.abs()).max(f64::MIN_POSITIVE);
    let off_sq: Vec<f64> = offdiag.iter().map(|e| e * e).collect();
    let max_off_sq = off_sq.iter().copied().fold(0.0, f64::max);
    let pivmin = f64::MIN_POSITIVE * max_off_sq.max(1.0);
    let tol = 2.0 * f64::EPSILON * norm;
    let pad = tol + 2.0 * pivmin;
    let (lo, hi) = (lo - pad, hi + pad);
    // k-th from the top is index n-1-k in ascending order
    par::map_range(n, |k| {
        let target = n - 1 - k;
        let (mut a, mut b) = (lo, hi);
        for _ in 0..200 {
            if b - a <= tol {
                break;
            }
            let mid = 0.5 * (a + b);
            if mid <= a || mid >= b {
                break;
            }
            if count_below(diag, &off_sq, mid, pivmin) > target {
                b = mid;
            } else {
                a = mid;
            }
        }
        0.5 * (a + b)
    })
}

/// LU factors of `T - shift I` with partial pivoting (second superdiagonal
/// from row swaps).
struct TridiagLu {
    d: Vec<f64>,
    du: Vec<f64>,
    du2: Vec<f64>,
    dl: Vec<f64>,
    swapped: Vec<bool>,
}

impl TridiagLu {
    fn factor(diag: &[f64], offdiag: &[f64], shift: f64, tiny: f64) -> Self {
        let n = diag.len();
        let mut d: Vec<f64> = diag.iter().map(|x| x - shift).collect();
        let mut du = offdiag.to_vec();
        let mut dl = offdiag.to_vec();
        let mut du2 = vec![0.0; n.saturating_sub(2)];
        let mut swapped = vec![false; n.saturating_sub(1)];
        for i in 0..n.saturating_sub(1) {
            if d[i].abs() >= dl[i].abs() {
                if d[i] == 0.0 {
                    d[i] = tiny;
                }
                let fact = dl[i] / d[i];
                dl[i] = fact;
                d[i + 1] -= fact * du[i];
            } else {
                let fact = d[i] / dl[i];
                d[i] = dl[i];
                dl[i] = fact;
                let temp = du[i];
                du[i] = d[i + 1];
                d[i + 1] = temp - fact * d[i + 1];
                if i + 2 < n {
                    du2[i] = du[i + 1];
                    du[i + 1] = -fact * du[i + 1];
                }
                swapped[i] = true;
            }
        }
        if n > 0 && d[n - 1] == 0.0 {
            d[n - 1] = tiny;
        }
        for x in d.iter_mut() {
            if x.abs() < tiny {
                *x = tiny.copysign(*x);
            }
        }
        Self { d, du, du2, dl, swapped }
    }

    fn solve(&self, b: &mut [f64]) {
        let n = b.len();
        for i in 0..n.saturating_sub(1) {
            if self.swapped[i] {
                let temp = b[i];
                b[i] = b[i + 1];
                b[i + 1] = temp - self.dl[i] * b[i];
            } else {
                b[i + 1] -= self.dl[i] * b[i];
            }
        }
        if n == 0 {
            return;
        }
        b[n - 1] /= self.d[n - 1];
        if n > 1 {
            b[n - 2] = (b[n - 2] - self.du[n - 2] * b[n - 1]) / self.d[n - 2];
        }
        for i in (0..n.saturating_sub(2)).rev() {
            b[i] = (b[i] - self.du[i] * b[i + 1] - self.du2[i] * b[i + 2]) / self.d[i];
        }
    }
}

fn normalize(v: &mut [f64]) -> bool {
    let max = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if !(max > 0.0) || !max.is_finite() {
        return false;
    }
    for x in v.iter_mut() {
        *x /= max;
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    for x in v.iter_mut() {
        *x /= norm;
    }
    true
}

fn inverse_iteration(diag: &[f64], offdiag: &[f64], lambda: f64, norm: f64) -> Vec<f64> {
    let n = diag.len();
    if n == 1 {
        return vec![1.0];
    }
    let tiny = f64::EPSILON * norm;
    let lu = TridiagLu::factor(diag, offdiag, lambda, tiny);
    // deterministic, generic start vector
    let mut v: Vec<f64> = (0..n).map(|i| 1.0 + 0.5 * ((i as f64) * 0.7548776662).sin()).collect();
    normalize(&mut v);
    for _ in 0..3 {
        lu.solve(&mut v);
        if !normalize(&mut v) {
            // overflow in the solve: restart from a unit vector at the peak
            v = vec![0.0; n];
            v[0] = 1.0;
            lu.solve(&mut v);
            normalize(&mut v);
        }
    }
    let (imax, _) = v
        .iter()
        .enumerate()
        .fold((0, 0.0f64), |(bi, bv), (i, &x)| if x.abs() > bv { (i, x.abs()) } else { (bi, bv) });
    if v[imax] < 0.0 {
        for x in v.iter_mut() {
            *x = -*x;
        }
    }
    v
}
