//! Offline and regularized ℓp Lewis weights.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{khatri_rao_matrix, leverage_scores, DenseMatrix, PsdQuadratic, DEFAULT_KR_CAP};
use crate::weights::WeightVector;

#[derive(Clone, Copy, Debug)]
pub struct IterOptions {
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for IterOptions {
    fn default() -> Self {
        Self { tol: 1e-10, max_iters: 100 }
    }
}

fn is_zero_row(r: &[f64]) -> bool {
    r.iter().all(|&x| x == 0.0)
}

/// Quadratic `AᵀW^{1−2/p}A + M` (zero rows skipped).
pub fn lewis_quadratic(a: &DenseMatrix, w: &[f64], p: f64, m: Option<&PsdQuadratic>) -> Result<PsdQuadratic> {
    let e = 1.0 - 2.0 / p;
    let c: Vec<f64> =
        a.rows_iter().zip(w).map(|(r, &wi)| if is_zero_row(r) || wi == 0.0 { 0.0 } else { wi.powf(e) }).collect();
    if c.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidInput("weight power overflowed".into()));
    }
    let mut g = a.weighted_gram(&c);
    if let Some(m) = m {
        if m.dim() != a.ncols() {
            return Err(Error::InvalidInput("regularizer dimension mismatch".into()));
        }
        g += m.matrix();
    }
    PsdQuadratic::from_matrix(g)
}

/// One application of `w ↦ scale·[a_iᵀ(AᵀW^{1−2/p}A + M)⁻a_i]^{p/2}`.
fn lewis_map(a: &DenseMatrix, w: &[f64], p: f64, m: Option<&PsdQuadratic>, scale: f64) -> Result<Vec<f64>> {
    let q = lewis_quadratic(a, w, p, m)?;
    let rows: Vec<&[f64]> = a.rows_iter().collect();
    Ok(rows
        .par_iter()
        .map(|r| if is_zero_row(r) { 0.0 } else { scale * q.pinv_value(r).max(0.0).powf(p / 2.0) })
        .collect())
}

fn residual(w: &[f64], next: &[f64], tol: f64) -> f64 {
    w.iter().zip(next).map(|(&a, &b)| (a - b).abs() / a.max(tol)).fold(0.0, f64::max)
}

fn initial_weights(a: &DenseMatrix, m: Option<&PsdQuadratic>) -> Result<Vec<f64>> {
    match m {
        None => Ok(leverage_scores(a).into_vec()),
        Some(m) => {
            let mut g = a.gram();
            g += m.matrix();
            let q = PsdQuadratic::from_matrix(g)?;
            Ok(a.rows_iter()
                .map(|r| if is_zero_row(r) { 0.0 } else { q.pinv_value(r).max(f64::MIN_POSITIVE) })
                .collect())
        }
    }
}

/// Lewis weights of `A` (regularized by `M` when given) for `p ∈ (0,4)` by
/// plain fixed-point iteration, which contracts in log space at rate |p/2−1|.
pub fn lewis_fixed_point(a: &DenseMatrix, p: f64, m: Option<&PsdQuadratic>, opts: IterOptions) -> Result<WeightVector> {
    if !(p > 0.0 && p < 4.0) {
        return Err(Error::Domain(format!("fixed-point iteration needs p in (0,4), got {p}")));
    }
    let mut w = initial_weights(a, m)?;
    let mut last = f64::INFINITY;
    for _ in 0..opts.max_iters {
        let next = lewis_map(a, &w, p, m, 1.0)?;
        last = residual(&w, &next, opts.tol);
        if last <= opts.tol {
            return Ok(WeightVector::new(p, w, 1.0));
        }
        w = next;
    }
    Err(Error::Convergence { iterations: opts.max_iters, residual: last })
}

/// `(p/2)^{(p/2)/(1−2/p)}`, the prefactor in the p ≥ 2 fixed point.
pub fn convex_prefactor(p: f64) -> f64 {
    (p / 2.0).powf((p / 2.0) / (1.0 - 2.0 / p))
}

/// Upper bound `(p/2)^{1/(1−2/p)}·d` on the total weight for p > 2.
pub fn convex_sum_bound(p: f64, d: usize) -> f64 {
    (p / 2.0).powf(1.0 / (1.0 - 2.0 / p)) * d as f64
}

/// Regularized weights for `p ≥ 2` with `M = LᵀL`, solving
/// `w_i = (p/2)^{(p/2)/(1−2/p)}·(a_iᵀ(AᵀW^{1−2/p}A + M)⁻a_i)^{p/2}`.
///
/// The log-space Jacobian of the map has spectrum in `[−(p/2−1), 0]`, so the
/// damped step `w^{1−η}·T(w)^η` with `η = 4/(p+2)` contracts at rate
/// `(p−2)/(p+2)` for every `p`.
pub fn lewis_convex(a: &DenseMatrix, l: &DenseMatrix, p: f64, opts: IterOptions) -> Result<WeightVector> {
    if !(p >= 2.0) || !p.is_finite() {
        return Err(Error::Domain(format!("convex weights need p >= 2, got {p}")));
    }
    if l.ncols() != a.ncols() {
        return Err(Error::InvalidInput("regularizer rows have the wrong dimension".into()));
    }
    let m = if l.nrows() > 0 { Some(PsdQuadratic::from_matrix(l.gram())?) } else { None };
    if p == 2.0 {
        return lewis_fixed_point(a, 2.0, m.as_ref(), opts);
    }
    let c = convex_prefactor(p);
    let eta = 4.0 / (p + 2.0);
    let mut w: Vec<f64> = initial_weights(a, m.as_ref())?.into_iter().map(|x| c * x).collect();
    let mut last = f64::INFINITY;
    for _ in 0..opts.max_iters {
        let next = lewis_map(a, &w, p, m.as_ref(), c)?;
        last = residual(&w, &next, opts.tol);
        if last <= opts.tol {
            return Ok(WeightVector::new(p, w, 1.0));
        }
        w = w.iter().zip(&next).map(|(&x, &y)| if x == 0.0 { 0.0 } else { x.powf(1.0 - eta) * y.powf(eta) }).collect();
    }
    Err(Error::Convergence { iterations: opts.max_iters, residual: last })
}

/// Sensitivity certificates for `p ≥ 4` via the Khatri–Rao power.
#[derive(Clone, Debug)]
pub struct TensorWeights {
    /// Tensor power `k = ⌊p/4⌋ + 1`.
    pub k: usize,
    /// Weights are ℓ_q Lewis weights of `A^{⊗k}` with `q = p/k`.
    pub weights: WeightVector,
}

impl TensorWeights {
    pub fn q(&self) -> f64 {
        self.weights.p()
    }

    /// `‖w‖₁^{q/2−1}·w_i`, an upper bound on the ℓp sensitivity of row i.
    pub fn sensitivity_bounds(&self) -> Vec<f64> {
        let t = self.weights.sum();
        let e = self.q() / 2.0 - 1.0;
        self.weights.weights().iter().map(|w| t.powf(e) * w).collect()
    }
}

pub fn lewis_highp(a: &DenseMatrix, p: f64, opts: IterOptions) -> Result<TensorWeights> {
    lewis_highp_with_cap(a, p, opts, DEFAULT_KR_CAP)
}

pub fn lewis_highp_with_cap(a: &DenseMatrix, p: f64, opts: IterOptions, cap: usize) -> Result<TensorWeights> {
    if !(p >= 4.0) || !p.is_finite() {
        return Err(Error::Domain(format!("tensor weights need p >= 4, got {p}")));
    }
    let k = (p / 4.0).floor() as usize + 1;
    let tensor = khatri_rao_matrix(a, k, cap)?;
    let q = p / k as f64;
    let weights = lewis_fixed_point(&tensor, q, None, opts)?;
    Ok(TensorWeights { k, weights })
}

#[derive(Clone, Debug)]
pub struct OneSidedReport {
    pub row_pass: Vec<bool>,
    /// Smallest `w_i − γ^{p/2}·target_i` over all rows.
    pub worst_margin: f64,
    pub pass: bool,
}

/// Checks `w_i ≥ γ^{p/2}·[a_iᵀ(AᵀW^{1−2/p}A)⁻a_i]^{p/2} − tol` row by row.
pub fn verify_one_sided(a: &DenseMatrix, w: &WeightVector, gamma: f64, tol: f64) -> OneSidedReport {
    let p = w.p();
    let ws = w.weights();
    let missing = a.rows_iter().zip(ws).any(|(r, &wi)| !is_zero_row(r) && !(wi > 0.0));
    let q = if missing && p < 2.0 { None } else { lewis_quadratic(a, ws, p, None).ok() };
    let g = gamma.powf(p / 2.0);
    let mut worst = f64::INFINITY;
    let row_pass: Vec<bool> = a
        .rows_iter()
        .zip(ws)
        .map(|(r, &wi)| {
            if is_zero_row(r) {
                return true;
            }
            let Some(q) = &q else { return wi > 0.0 };
            let target = q.pinv_value(r).max(0.0).powf(p / 2.0);
            let margin = wi - g * target;
            worst = worst.min(margin);
            margin >= -tol
        })
        .collect();
    let pass = row_pass.iter().all(|&b| b);
    OneSidedReport { row_pass, worst_margin: worst, pass }
}
