//! Online Lewis weights: exact maintenance of the online quadratic, row
//! flattening, the sampling-based estimator and online diagnostics.

use std::io::{Read, Write};

use nalgebra::DMatrix;
use rand::Rng as _;

use crate::error::{check_finite, Error, Result};
use crate::linalg::{min_nonzero_singular, spectral_norm, DenseMatrix, PsdQuadratic, QuadForm};
use crate::rng::{self, Namespace, Rng};
use crate::weights::WeightVector;

const SNAPSHOT_MAGIC: &[u8; 4] = b"LPOS";

/// Exact online ℓp Lewis weight state.
#[derive(Clone, Debug)]
pub struct OnlineLewisState {
    p: f64,
    q: PsdQuadratic,
    rows_seen: u64,
    weight_sum: f64,
    // Condition-number trackers. `gram` is the unweighted AᵀA of the prefix.
    gram: DMatrix<f64>,
    sigma_max: f64,
    sigma_min_floor: f64,
    since_refresh: usize,
}

impl OnlineLewisState {
    pub fn new(d: usize, p: f64) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidInput("dimension must be positive".into()));
        }
        if !(p > 0.0) || !p.is_finite() {
            return Err(Error::Domain(format!("p must be positive and finite, got {p}")));
        }
        Ok(Self {
            p,
            q: PsdQuadratic::zeros(d),
            rows_seen: 0,
            weight_sum: 0.0,
            gram: DMatrix::zeros(d, d),
            sigma_max: 0.0,
            sigma_min_floor: f64::INFINITY,
            since_refresh: 0,
        })
    }

    /// State for online leverage scores (p = 2).
    pub fn leverage(d: usize) -> Result<Self> {
        Self::new(d, 2.0)
    }

    pub fn p(&self) -> f64 {
        self.p
    }
    pub fn dim(&self) -> usize {
        self.q.dim()
    }
    pub fn rows_seen(&self) -> u64 {
        self.rows_seen
    }
    pub fn weight_sum(&self) -> f64 {
        self.weight_sum
    }
    pub fn rank(&self) -> usize {
        self.q.rank()
    }
    pub fn quadratic(&self) -> &PsdQuadratic {
        &self.q
    }

    /// Running estimate of κ^OL: a Frobenius upper bound on ‖A‖₂ over the
    /// smallest nonzero singular value seen at refresh points.
    pub fn kappa_estimate(&self) -> f64 {
        if self.sigma_min_floor.is_finite() && self.sigma_min_floor > 0.0 {
            self.sigma_max / self.sigma_min_floor
        } else {
            1.0
        }
    }

    /// The weight row `a` would receive, without updating the state.
    /// `None` means `a` increases the rank.
    pub fn peek(&self, a: &[f64]) -> Result<Option<f64>> {
        self.check_row(a)?;
        match self.q.quad_form_pinv(a)? {
            QuadForm::OutOfSpan => Ok(None),
            QuadForm::InSpan(v) => Ok(Some(v.max(0.0).powf(self.p / 2.0))),
        }
    }

    fn check_row(&self, a: &[f64]) -> Result<()> {
        if a.len() != self.dim() {
            return Err(Error::InvalidInput(format!("row has {} entries, expected {}", a.len(), self.dim())));
        }
        check_finite(a, "row")
    }

    /// Online Lewis weight of `a` followed by the quadratic update.
    pub fn step(&mut self, a: &[f64]) -> Result<f64> {
        self.step_detailed(a).map(|s| s.weight)
    }

    pub fn step_detailed(&mut self, a: &[f64]) -> Result<OnlineStep> {
        self.check_row(a)?;
        self.rows_seen += 1;
        if a.iter().all(|&x| x == 0.0) {
            return Ok(OnlineStep { weight: 0.0, rank_increase: false });
        }
        let (weight, rank_increase) = match self.q.quad_form_pinv(a)? {
            QuadForm::OutOfSpan => (1.0, true),
            QuadForm::InSpan(v) => (v.max(0.0).powf(self.p / 2.0).min(1.0), false),
        };
        // A numerically null direction inside the span would give weight 0;
        // treat it as rank-increasing rather than emitting a zero weight.
        let (weight, rank_increase) = if weight > 0.0 { (weight, rank_increase) } else { (1.0, true) };
        self.q.rank_one_update(a, weight.powf(1.0 - 2.0 / self.p))?;
        self.weight_sum += weight;
        self.track(a, rank_increase);
        Ok(OnlineStep { weight, rank_increase })
    }

    fn track(&mut self, a: &[f64], rank_increase: bool) {
        let d = self.dim();
        for j in 0..d {
            for k in 0..d {
                self.gram[(j, k)] += a[j] * a[k];
            }
        }
        self.sigma_max = self.gram.trace().sqrt();
        self.since_refresh += 1;
        if rank_increase || self.since_refresh >= d {
            self.since_refresh = 0;
            if let Some(s) = min_nonzero_singular(&self.gram) {
                self.sigma_min_floor = self.sigma_min_floor.min(s);
            }
        }
    }

    /// Serializes `{magic, d, p, i, rank, weight_sum, Q}` little-endian.
    pub fn write_snapshot<W: Write>(&self, mut out: W) -> Result<()> {
        let d = self.dim();
        out.write_all(SNAPSHOT_MAGIC)?;
        out.write_all(&(d as u32).to_le_bytes())?;
        out.write_all(&self.p.to_le_bytes())?;
        out.write_all(&self.rows_seen.to_le_bytes())?;
        out.write_all(&(self.rank() as u64).to_le_bytes())?;
        out.write_all(&self.weight_sum.to_le_bytes())?;
        for j in 0..d {
            for k in 0..d {
                out.write_all(&self.q.matrix()[(j, k)].to_le_bytes())?;
            }
        }
        Ok(())
    }

    /// Restores a snapshot. Condition-number trackers restart from the
    /// restored point since the snapshot does not carry them.
    pub fn read_snapshot<R: Read>(mut input: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        input.read_exact(&mut magic)?;
        if &magic != SNAPSHOT_MAGIC {
            return Err(Error::InvalidInput("not an online state snapshot".into()));
        }
        let mut b4 = [0u8; 4];
        let mut b8 = [0u8; 8];
        input.read_exact(&mut b4)?;
        let d = u32::from_le_bytes(b4) as usize;
        input.read_exact(&mut b8)?;
        let p = f64::from_le_bytes(b8);
        input.read_exact(&mut b8)?;
        let rows_seen = u64::from_le_bytes(b8);
        input.read_exact(&mut b8)?;
        let rank = u64::from_le_bytes(b8) as usize;
        input.read_exact(&mut b8)?;
        let weight_sum = f64::from_le_bytes(b8);
        let mut m = DMatrix::zeros(d, d);
        for j in 0..d {
            for k in 0..d {
                input.read_exact(&mut b8)?;
                m[(j, k)] = f64::from_le_bytes(b8);
            }
        }
        let q = PsdQuadratic::from_matrix(m)?;
        if q.rank() != rank {
            return Err(Error::InvalidInput(format!(
                "snapshot rank {rank} does not match restored quadratic rank {}",
                q.rank()
            )));
        }
        let mut s = Self::new(d, p)?;
        s.q = q;
        s.rows_seen = rows_seen;
        s.weight_sum = weight_sum;
        Ok(s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OnlineStep {
    pub weight: f64,
    pub rank_increase: bool,
}

pub fn online_lewis_step(state: &mut OnlineLewisState, a: &[f64]) -> Result<f64> {
    state.step(a)
}

pub fn online_leverage_step(state: &mut OnlineLewisState, a: &[f64]) -> Result<f64> {
    if state.p() != 2.0 {
        return Err(Error::Domain(format!("online leverage scores need a p = 2 state, got p = {}", state.p())));
    }
    state.step(a)
}

/// Online Lewis weights of every row of `a`, in order.
pub fn online_lewis_weights(a: &DenseMatrix, p: f64) -> Result<WeightVector> {
    let mut s = OnlineLewisState::new(a.ncols(), p)?;
    let w = a.rows_iter().map(|r| s.step(r)).collect::<Result<Vec<_>>>()?;
    Ok(WeightVector::new(p, w, 1.0))
}

/// `⌈1/β⌉`, computed so that exact reciprocals (β = 1/4, 1/20, ...) are not
/// pushed up by rounding.
pub fn flatten_count(beta: f64) -> usize {
    let r = 1.0 / beta;
    let k = r.round();
    if (r - k).abs() <= 1e-9 * k {
        k as usize
    } else {
        r.ceil() as usize
    }
}

/// `k = ⌈1/β⌉` copies of `a/k^{1/p}`.
pub fn flatten_row(a: &[f64], beta: f64, p: f64) -> Result<Vec<Vec<f64>>> {
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(Error::Config(format!("beta must be in (0,1], got {beta}")));
    }
    Ok(split_row(a, flatten_count(beta), p))
}

pub fn split_row(a: &[f64], k: usize, p: f64) -> Vec<Vec<f64>> {
    let s = (k as f64).powf(-1.0 / p);
    let copy: Vec<f64> = a.iter().map(|x| x * s).collect();
    vec![copy; k]
}

/// Number of copies needed so that a row with (uncapped) online weight
/// `u` contributes copies of weight at most `beta`: `max(⌈1/β⌉, ⌈u/β⌉)`.
pub fn copies_for(u: f64, beta: f64, max_copies: usize) -> Result<usize> {
    let need = (u / beta).ceil().max(flatten_count(beta) as f64);
    if !(need <= max_copies as f64) {
        return Err(Error::Capacity(format!("row needs {need} copies, cap is {max_copies}")));
    }
    Ok(need as usize)
}

/// Stream adapter that flattens every non-rank-increasing row so that each
/// emitted copy has online weight at most β in the flattened stream.
#[derive(Clone, Debug)]
pub struct FlatteningAdapter {
    beta: f64,
    max_copies: usize,
    state: OnlineLewisState,
}

impl FlatteningAdapter {
    pub fn new(d: usize, p: f64, beta: f64) -> Result<Self> {
        if !(beta > 0.0 && beta <= 1.0) {
            return Err(Error::Config(format!("beta must be in (0,1], got {beta}")));
        }
        Ok(Self { beta, max_copies: 1 << 20, state: OnlineLewisState::new(d, p)? })
    }

    pub fn with_max_copies(mut self, cap: usize) -> Self {
        self.max_copies = cap;
        self
    }

    /// Flattened copies of `a`; the first element of the pair says whether
    /// `a` increased the rank (and was therefore passed through whole).
    pub fn push(&mut self, a: &[f64]) -> Result<(bool, Vec<Vec<f64>>)> {
        let p = self.state.p();
        let (rank_increase, copies) = match self.state.peek(a)? {
            None => (true, vec![a.to_vec()]),
            Some(u) => (false, split_row(a, copies_for(u, self.beta, self.max_copies)?, p)),
        };
        for c in &copies {
            self.state.step(c)?;
        }
        Ok((rank_increase, copies))
    }

    pub fn state(&self) -> &OnlineLewisState {
        &self.state
    }
}

/// One step of the sampling-based estimator.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EstimateStep {
    pub w_tilde: f64,
    pub prob: f64,
    pub kept: bool,
    pub rank_increase: bool,
}

/// Sampling-based online Lewis weight estimator for `p ∈ (0,2)`.
///
/// Keeps `a/√p_i` for sampled rows and the quadratic
/// `Σ_stored w̃^{1−2/p}·(a/√p_i)(a/√p_i)ᵀ`.
#[derive(Clone, Debug)]
pub struct SampledEstimatorState {
    p: f64,
    alpha: f64,
    stored: Vec<(Vec<f64>, f64)>,
    q: PsdQuadratic,
    rng: Rng,
}

impl SampledEstimatorState {
    pub fn new(d: usize, p: f64, alpha: f64, seed: u64) -> Result<Self> {
        if !(p > 0.0 && p < 2.0) {
            return Err(Error::Domain(format!("the sampled estimator needs p in (0,2), got {p}")));
        }
        if !(alpha >= 0.0) || !alpha.is_finite() {
            return Err(Error::Config(format!("alpha must be finite and >= 0, got {alpha}")));
        }
        Ok(Self {
            p,
            alpha,
            stored: Vec::new(),
            q: PsdQuadratic::zeros(d),
            rng: rng::stream(seed, Namespace::EstimatorCoins, 0),
        })
    }

    pub fn step(&mut self, a: &[f64]) -> Result<EstimateStep> {
        if a.len() != self.q.dim() {
            return Err(Error::InvalidInput(format!("row has {} entries, expected {}", a.len(), self.q.dim())));
        }
        check_finite(a, "row")?;
        if a.iter().all(|&x| x == 0.0) {
            return Ok(EstimateStep { w_tilde: 0.0, prob: 1.0, kept: false, rank_increase: false });
        }
        let (w_tilde, prob, rank_increase) = match self.q.quad_form_pinv(a)? {
            QuadForm::OutOfSpan => (1.0, 1.0, true),
            QuadForm::InSpan(v) => {
                let w = v.max(0.0).powf(self.p / 2.0);
                let prob = if self.alpha == 0.0 { 1.0 } else { (w / self.alpha).min(1.0) };
                (w, prob, false)
            }
        };
        let (w_tilde, prob, rank_increase) =
            if w_tilde > 0.0 { (w_tilde, prob, rank_increase) } else { (1.0, 1.0, true) };
        let u: f64 = self.rng.random();
        let kept = prob >= 1.0 || u < prob;
        if kept {
            let s = prob.sqrt().recip();
            let row: Vec<f64> = a.iter().map(|x| x * s).collect();
            self.q.rank_one_update(&row, w_tilde.powf(1.0 - 2.0 / self.p))?;
            self.stored.push((row, w_tilde));
        }
        Ok(EstimateStep { w_tilde, prob, kept, rank_increase })
    }

    pub fn stored(&self) -> &[(Vec<f64>, f64)] {
        &self.stored
    }

    pub fn quadratic(&self) -> &PsdQuadratic {
        &self.q
    }

    pub fn p(&self) -> f64 {
        self.p
    }
}

pub fn sampled_estimate_step(state: &mut SampledEstimatorState, a: &[f64]) -> Result<EstimateStep> {
    state.step(a)
}

/// Estimator driven through flattening: each row is split into
/// `max(⌈1/β⌉, ⌈w̃/β⌉)` copies (rank-increasing rows pass through whole) and
/// the row's estimate is the sum of its copies' estimates.
#[derive(Clone, Debug)]
pub struct FlattenedEstimator {
    inner: SampledEstimatorState,
    beta: f64,
    max_copies: usize,
}

impl FlattenedEstimator {
    pub fn new(d: usize, p: f64, alpha: f64, beta: f64, seed: u64) -> Result<Self> {
        if !(beta > 0.0 && beta <= 1.0) {
            return Err(Error::Config(format!("beta must be in (0,1], got {beta}")));
        }
        Ok(Self { inner: SampledEstimatorState::new(d, p, alpha, seed)?, beta, max_copies: 1 << 20 })
    }

    /// Returns the row's estimate and whether it increased the rank.
    pub fn push(&mut self, a: &[f64]) -> Result<(f64, bool)> {
        check_finite(a, "row")?;
        let k = match self.inner.q.quad_form_pinv(a)? {
            QuadForm::OutOfSpan => 1,
            QuadForm::InSpan(v) => copies_for(v.max(0.0).powf(self.inner.p / 2.0), self.beta, self.max_copies)?,
        };
        if k == 1 {
            let s = self.inner.step(a)?;
            return Ok((s.w_tilde, s.rank_increase));
        }
        let mut total = 0.0;
        for c in split_row(a, k, self.inner.p) {
            total += self.inner.step(&c)?.w_tilde;
        }
        Ok((total, false))
    }

    pub fn estimator(&self) -> &SampledEstimatorState {
        &self.inner
    }
}

/// `‖w‖₁^{max(0,p/2−1)}·w_i`.
pub fn online_sensitivity_bound(w: &WeightVector, p: f64) -> Vec<f64> {
    let f = w.sum().powf((p / 2.0 - 1.0).max(0.0));
    w.weights().iter().map(|x| f * x).collect()
}

/// Exact online condition number `‖A‖₂·max_i ‖A_i⁻‖₂` over all prefixes.
pub fn kappa_online(a: &DenseMatrix) -> f64 {
    let d = a.ncols();
    let mut g = DMatrix::zeros(d, d);
    let mut floor = f64::INFINITY;
    for r in a.rows_iter() {
        if r.iter().all(|&x| x == 0.0) {
            continue;
        }
        for j in 0..d {
            for k in 0..d {
                g[(j, k)] += r[j] * r[k];
            }
        }
        if let Some(s) = min_nonzero_singular(&g) {
            floor = floor.min(s);
        }
    }
    if floor.is_finite() {
        spectral_norm(a) / floor
    } else {
        0.0
    }
}
