//! One-shot Bernoulli Lewis weight sampling, the online coreset driver and
//! the distortion oracle.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_finite, Error, Result};
use crate::linalg::{whitened_pencil, DenseMatrix};
use crate::online::{FlattenedEstimator, OnlineLewisState};
use crate::rng::{self, Namespace, Rng};
use crate::weights::WeightVector;

/// Which probability formula applies for a given `p`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Regime {
    /// p ∈ (0,1)
    BelowOne,
    /// p = 1
    One,
    /// p ∈ (1,2)
    OneToTwo,
    /// p = 2
    Two,
    /// p > 2
    AboveTwo,
}

impl Regime {
    pub fn of(p: f64) -> Result<Regime> {
        if !(p > 0.0) || !p.is_finite() {
            return Err(Error::Config(format!("p must be positive and finite, got {p}")));
        }
        Ok(if p < 1.0 {
            Regime::BelowOne
        } else if p == 1.0 {
            Regime::One
        } else if p < 2.0 {
            Regime::OneToTwo
        } else if p == 2.0 {
            Regime::Two
        } else {
            Regime::AboveTwo
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplingConfig {
    pub p: f64,
    pub epsilon: f64,
    pub delta: f64,
    /// Single constant absorbing the unspecified absolute constants.
    pub c: f64,
    pub regime: Regime,
}

fn ln_d(d: usize) -> f64 {
    if d <= 1 {
        1.0
    } else {
        (d as f64).ln()
    }
}

impl SamplingConfig {
    pub fn new(p: f64, epsilon: f64, delta: f64) -> Result<Self> {
        Self::with_constant(p, epsilon, delta, 1.0)
    }

    pub fn with_constant(p: f64, epsilon: f64, delta: f64, c: f64) -> Result<Self> {
        let regime = Regime::of(p)?;
        if !(epsilon > 0.0 && epsilon < 1.0) {
            return Err(Error::Config(format!("epsilon must be in (0,1), got {epsilon}")));
        }
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::Config(format!("delta must be in (0,1), got {delta}")));
        }
        if !(c > 0.0) || !c.is_finite() {
            return Err(Error::Config(format!("sampling constant must be positive, got {c}")));
        }
        Ok(Self { p, epsilon, delta, c, regime })
    }

    /// β for a stream of length `n` in dimension `d`; `t` bounds the total
    /// weight and only matters for p > 2.
    pub fn beta(&self, n: usize, d: usize, t: f64, gamma: f64) -> f64 {
        let e2 = self.epsilon * self.epsilon;
        let n = (n.max(1)) as f64;
        let ld = ln_d(d);
        let dd = d as f64;
        let inv_delta = (1.0 / self.delta).ln();
        match self.regime {
            Regime::BelowOne => e2 / (dd * (ld.powi(3) + inv_delta)),
            Regime::One | Regime::Two => e2 / (dd * (n / self.delta).ln()),
            Regime::OneToTwo => e2 / (dd * (ld * ld * n.ln() + inv_delta)),
            Regime::AboveTwo => {
                e2 / (t.max(f64::MIN_POSITIVE).powf(self.p / 2.0) * (ld * ld * n.ln() / gamma + inv_delta))
            }
        }
    }

    /// Uncapped multiplier `m` with `p_i = min{m·w_i, 1}`.
    pub fn rate(&self, n: usize, d: usize, t: f64, gamma: f64) -> f64 {
        let beta = self.beta(n, d, t, gamma);
        let base = self.c / (d as f64 * beta);
        match self.regime {
            Regime::AboveTwo => {
                let p = self.p;
                let lead = ((p / 2.0).powf(1.0 / (1.0 - 2.0 / p)) / gamma).powf(p / 2.0);
                lead * base
            }
            _ => base,
        }
    }

    pub fn probability(&self, w: f64, n: usize, d: usize, t: f64, gamma: f64) -> f64 {
        (self.rate(n, d, t, gamma) * w).min(1.0)
    }
}

/// Probabilities `p_i = min{C·(formula)·w_i, 1}` for every row.
pub fn sample_probabilities(w: &WeightVector, config: &SamplingConfig, n: usize, d: usize, t: f64) -> Vec<f64> {
    let rate = config.rate(n, d, t, w.gamma());
    w.weights().iter().map(|&x| (rate * x).min(1.0)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoresetEntry {
    pub index: usize,
    pub row: Vec<f64>,
    pub scale: f64,
    pub prob: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CoresetMeta {
    pub seed: u64,
    /// Number of source rows the coreset summarizes.
    pub n: usize,
    pub epsilon: f64,
    pub delta: f64,
    pub sum_weights: f64,
    pub kappa_ol_estimate: f64,
}

/// Rows kept with scale `s_i = p_i^{−1/p}`, ordered by original index.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Coreset {
    pub p: f64,
    pub d: usize,
    pub entries: Vec<CoresetEntry>,
    pub meta: CoresetMeta,
}

impl Coreset {
    pub fn empty(p: f64, d: usize) -> Self {
        Self { p, d, entries: Vec::new(), meta: CoresetMeta::default() }
    }

    /// Every row of `a` with probability 1.
    pub fn full(a: &DenseMatrix, p: f64) -> Self {
        let entries = a
            .rows_iter()
            .enumerate()
            .map(|(i, r)| CoresetEntry { index: i, row: r.to_vec(), scale: 1.0, prob: 1.0 })
            .collect();
        let mut c = Self { p, d: a.ncols(), entries, meta: CoresetMeta::default() };
        c.meta.n = a.nrows();
        c
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Rows `s_i·a_i`.
    pub fn scaled_rows(&self) -> DenseMatrix {
        let mut m = DenseMatrix::new(self.d).expect("coreset dimension is positive");
        for e in &self.entries {
            let r: Vec<f64> = e.row.iter().map(|x| x * e.scale).collect();
            m.push_row(&r).expect("coreset rows are finite");
        }
        m
    }

    /// `Σ s_i^p |⟨a_i, x⟩|^p`.
    pub fn cost(&self, x: &[f64]) -> f64 {
        self.entries.iter().map(|e| e.scale.powf(self.p) * crate::linalg::dot(&e.row, x).abs().powf(self.p)).sum()
    }

    /// Entries with original index `< end`.
    pub fn prefix(&self, end: usize) -> Coreset {
        let mut c = self.clone();
        c.entries.retain(|e| e.index < end);
        c.meta.n = end.min(self.meta.n);
        c
    }

    /// Checks `s_i = p_i^{−1/p}`, `p_i ∈ (0,1]` and strictly increasing indices.
    pub fn validate(&self) -> Result<()> {
        let mut last: Option<usize> = None;
        for e in &self.entries {
            if !(e.prob > 0.0 && e.prob <= 1.0) {
                return Err(Error::InvalidInput(format!("entry {} has probability {}", e.index, e.prob)));
            }
            let want = e.prob.powf(-1.0 / self.p);
            if (e.scale - want).abs() > 1e-9 * want {
                return Err(Error::InvalidInput(format!(
                    "entry {} has scale {} but expected {want}",
                    e.index, e.scale
                )));
            }
            if let Some(l) = last {
                if e.index <= l {
                    return Err(Error::InvalidInput("coreset indices are not strictly increasing".into()));
                }
            }
            if e.row.len() != self.d {
                return Err(Error::InvalidInput(format!("entry {} has wrong dimension", e.index)));
            }
            last = Some(e.index);
        }
        Ok(())
    }
}

fn check_prob(pi: f64, i: usize) -> Result<()> {
    if !(0.0..=1.0).contains(&pi) {
        return Err(Error::InvalidInput(format!("probability {pi} of row {i} is outside [0,1]")));
    }
    Ok(())
}

/// Keeps row `i` independently with probability `p_i` and scale `p_i^{−1/p}`.
pub fn bernoulli_sample(a: &DenseMatrix, probs: &[f64], p: f64, seed: u64) -> Result<Coreset> {
    if probs.len() != a.nrows() {
        return Err(Error::InvalidInput("one probability per row is required".into()));
    }
    let mut rng = rng::stream(seed, Namespace::SamplingCoins, 0);
    let mut c = Coreset::empty(p, a.ncols());
    for (i, (r, &pi)) in a.rows_iter().zip(probs).enumerate() {
        check_prob(pi, i)?;
        let u: f64 = rng.random();
        if pi > 0.0 && (pi >= 1.0 || u < pi) {
            c.entries.push(CoresetEntry { index: i, row: r.to_vec(), scale: pi.powf(-1.0 / p), prob: pi });
        }
    }
    c.meta.seed = seed;
    c.meta.n = a.nrows();
    Ok(c)
}

/// Source of per-row weight overestimates for the online driver.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum WeightMode {
    /// Exact online Lewis weights.
    #[default]
    Exact,
    /// Sampling-based estimator on a flattened stream (p < 2 only).
    Estimator,
}

#[derive(Clone, Debug)]
enum Source {
    Exact(OnlineLewisState),
    Estimator { est: FlattenedEstimator, kappa: OnlineKappa },
}

/// Cheap κ^OL tracker used when the exact state is not maintained.
#[derive(Clone, Debug)]
struct OnlineKappa(OnlineLewisState);

/// What happened to one streamed row.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RowDecision {
    pub index: usize,
    pub weight: f64,
    pub prob: f64,
    pub kept: bool,
}

/// Streaming coreset builder: per row, a weight overestimate, a probability
/// and an irrevocable keep/drop decision with its own sampling coin.
#[derive(Clone, Debug)]
pub struct OnlineCoreset {
    config: SamplingConfig,
    d: usize,
    seed: u64,
    source: Source,
    coins: Rng,
    coreset: Coreset,
    n: usize,
    weight_sum: f64,
}

impl OnlineCoreset {
    pub fn new(d: usize, config: SamplingConfig, seed: u64) -> Result<Self> {
        Self::with_mode(d, config, seed, WeightMode::Exact)
    }

    pub fn with_mode(d: usize, config: SamplingConfig, seed: u64, mode: WeightMode) -> Result<Self> {
        Self::with_coins(d, config, seed, mode, rng::stream(seed, Namespace::SamplingCoins, 0))
    }

    /// Builder drawing its sampling coins from `coins`.
    pub fn with_coins(d: usize, config: SamplingConfig, seed: u64, mode: WeightMode, coins: Rng) -> Result<Self> {
        let p = config.p;
        let source = match mode {
            WeightMode::Exact => Source::Exact(OnlineLewisState::new(d, p)?),
            WeightMode::Estimator => {
                if !(p < 2.0) {
                    return Err(Error::Config("the sampled estimator is only defined for p < 2".into()));
                }
                let (alpha, beta) = estimator_parameters(config.epsilon, config.delta, d);
                Source::Estimator {
                    est: FlattenedEstimator::new(d, p, alpha, beta, seed)?,
                    kappa: OnlineKappa(OnlineLewisState::leverage(d)?),
                }
            }
        };
        let mut coreset = Coreset::empty(p, d);
        coreset.meta.seed = seed;
        coreset.meta.epsilon = config.epsilon;
        coreset.meta.delta = config.delta;
        Ok(Self { config, d, seed, source, coins, coreset, n: 0, weight_sum: 0.0 })
    }

    pub fn push(&mut self, a: &[f64]) -> Result<RowDecision> {
        if a.len() != self.d {
            return Err(Error::InvalidInput(format!("row has {} entries, expected {}", a.len(), self.d)));
        }
        check_finite(a, "row")?;
        let (w, rank_increase) = match &mut self.source {
            Source::Exact(s) => {
                let st = s.step_detailed(a)?;
                (st.weight, st.rank_increase)
            }
            Source::Estimator { est, kappa } => {
                kappa.0.step(a)?;
                est.push(a)?
            }
        };
        let index = self.n;
        self.n += 1;
        self.weight_sum += w;
        let u: f64 = self.coins.random();
        let prob = if rank_increase { 1.0 } else { self.config.probability(w, self.n, self.d, self.weight_sum, 1.0) };
        let kept = prob > 0.0 && (prob >= 1.0 || u < prob);
        if kept {
            self.coreset.entries.push(CoresetEntry {
                index,
                row: a.to_vec(),
                scale: prob.powf(-1.0 / self.config.p),
                prob,
            });
        }
        Ok(RowDecision { index, weight: w, prob, kept })
    }

    pub fn rows_seen(&self) -> usize {
        self.n
    }

    pub fn weight_sum(&self) -> f64 {
        self.weight_sum
    }

    pub fn kappa_estimate(&self) -> f64 {
        match &self.source {
            Source::Exact(s) => s.kappa_estimate(),
            Source::Estimator { kappa, .. } => kappa.0.kappa_estimate(),
        }
    }

    /// The coreset of everything seen so far.
    pub fn coreset(&self) -> Coreset {
        let mut c = self.coreset.clone();
        c.meta.n = self.n;
        c.meta.sum_weights = self.weight_sum;
        c.meta.kappa_ol_estimate = self.kappa_estimate();
        c.meta.seed = self.seed;
        c
    }

    pub fn into_coreset(self) -> Coreset {
        self.coreset()
    }
}

/// Default `(α, β)` for the sampled estimator: `α = β = ε²/(2·ln(d/δ))`.
pub fn estimator_parameters(epsilon: f64, delta: f64, d: usize) -> (f64, f64) {
    let l = (d as f64 / delta).ln().max(1.0);
    let v = (epsilon * epsilon / (2.0 * l)).min(1.0);
    (v, v)
}

/// Runs the online driver over every row of `a`.
pub fn online_coreset(a: &DenseMatrix, config: &SamplingConfig, seed: u64) -> Result<Coreset> {
    online_coreset_with_mode(a, config, seed, WeightMode::Exact)
}

pub fn online_coreset_with_mode(
    a: &DenseMatrix,
    config: &SamplingConfig,
    seed: u64,
    mode: WeightMode,
) -> Result<Coreset> {
    let mut b = OnlineCoreset::with_mode(a.ncols(), config.clone(), seed, mode)?;
    for r in a.rows_iter() {
        b.push(r)?;
    }
    Ok(b.into_coreset())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OracleOptions {
    pub trials: usize,
    /// Number of best random directions refined by local search.
    pub refine: usize,
    /// Coordinate-ascent steps per refined direction.
    pub steps: usize,
    pub seed: u64,
}

impl Default for OracleOptions {
    fn default() -> Self {
        Self { trials: 10_000, refine: 32, steps: 50, seed: 0 }
    }
}

/// Exact p = 2 distortion: `max |λ − 1|` over the whitened Gram pencil.
/// Returns infinity when the coreset loses part of the row space.
pub fn exact_distortion_l2(a: &DenseMatrix, coreset: &Coreset) -> f64 {
    let g = a.gram();
    let s = coreset.scaled_rows();
    let h = s.gram();
    let ev = whitened_pencil(&g, &h);
    if ev.is_empty() {
        return 0.0;
    }
    if ev[0] <= 1e-10 {
        return f64::INFINITY;
    }
    ev.iter().map(|l| (l - 1.0).abs()).fold(0.0, f64::max)
}

/// Whitening basis (d×r) for the row space of `a`.
fn whitening(a: &DenseMatrix) -> Vec<Vec<f64>> {
    let g = a.gram();
    let d = a.ncols();
    let eig = nalgebra::SymmetricEigen::new(g);
    let lmax = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let cut = 16.0 * d as f64 * f64::EPSILON * lmax;
    (0..d)
        .filter(|&k| eig.eigenvalues[k] > cut)
        .map(|k| {
            let s = eig.eigenvalues[k].sqrt();
            eig.eigenvectors.column(k).iter().map(|v| v / s).collect()
        })
        .collect()
}

fn project(a: &DenseMatrix, basis: &[Vec<f64>], scales: Option<&[f64]>) -> (Vec<f64>, usize) {
    let r = basis.len();
    let mut out = Vec::with_capacity(a.nrows() * r);
    for (i, row) in a.rows_iter().enumerate() {
        let s = scales.map_or(1.0, |s| s[i]);
        for b in basis {
            out.push(s * crate::linalg::dot(row, b));
        }
    }
    (out, r)
}

fn lp_mass(m: &[f64], r: usize, y: &[f64], p: f64) -> f64 {
    m.chunks_exact(r)
        .map(|row| {
            let v: f64 = row.iter().zip(y).map(|(a, b)| a * b).sum::<f64>().abs();
            if p == 1.0 {
                v
            } else if p == 2.0 {
                v * v
            } else if p == 3.0 {
                v * v * v
            } else {
                v.powf(p)
            }
        })
        .sum()
}

/// Lower bound on `sup_x |‖SAx‖_p^p/‖Ax‖_p^p − 1|` from random directions
/// (sampled in whitened coordinates) refined by coordinate ascent.
pub fn randomized_distortion(a: &DenseMatrix, coreset: &Coreset, p: f64, opts: OracleOptions) -> f64 {
    if !rank_preserved(a, coreset) {
        return f64::INFINITY;
    }
    let basis = whitening(a);
    if basis.is_empty() {
        return 0.0;
    }
    let (full, r) = project(a, &basis, None);
    let sa = coreset.scaled_rows();
    let (sub, _) = project(&sa, &basis, None);
    let eval = |y: &[f64]| -> f64 {
        let den = lp_mass(&full, r, y, p);
        if den <= 0.0 {
            return 0.0;
        }
        (lp_mass(&sub, r, y, p) / den - 1.0).abs()
    };

    let mut rng = rng::stream(opts.seed, Namespace::Oracle, 0);
    let dirs: Vec<Vec<f64>> = (0..opts.trials)
        .map(|_| {
            let mut y: Vec<f64> = (0..r).map(|_| StandardNormal.sample(&mut rng)).collect();
            let n = y.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
            y.iter_mut().for_each(|v| *v /= n);
            y
        })
        .collect();
    let vals: Vec<f64> = dirs.par_iter().map(|y| eval(y)).collect();
    let mut order: Vec<usize> = (0..dirs.len()).collect();
    order.sort_by(|&i, &j| vals[j].partial_cmp(&vals[i]).unwrap().then(i.cmp(&j)));
    let best_random = order.first().map_or(0.0, |&i| vals[i]);

    let refined: Vec<f64> = order
        .iter()
        .take(opts.refine)
        .collect::<Vec<_>>()
        .par_iter()
        .map(|&&i| coordinate_ascent(&dirs[i], vals[i], opts.steps, &eval))
        .collect();
    refined.into_iter().fold(best_random, f64::max)
}

/// Best-improvement coordinate ascent on `f` with a halving step.
pub(crate) fn coordinate_ascent<F: Fn(&[f64]) -> f64>(start: &[f64], f0: f64, steps: usize, f: &F) -> f64 {
    let r = start.len();
    let mut y = start.to_vec();
    let mut best = f0;
    let mut h = 0.5;
    for _ in 0..steps {
        let mut cand: Option<(f64, Vec<f64>)> = None;
        for j in 0..r {
            for sign in [1.0, -1.0] {
                let mut z = y.clone();
                z[j] += sign * h;
                let v = f(&z);
                if v > cand.as_ref().map_or(best, |c| c.0) {
                    cand = Some((v, z));
                }
            }
        }
        match cand {
            Some((v, z)) => {
                best = v;
                let n = z.iter().map(|x| x * x).sum::<f64>().sqrt();
                y = z.into_iter().map(|x| x / n).collect();
            }
            None => h *= 0.5,
        }
    }
    best
}

fn rank_preserved(a: &DenseMatrix, coreset: &Coreset) -> bool {
    let ev = whitened_pencil(&a.gram(), &coreset.scaled_rows().gram());
    ev.first().map_or(true, |&l| l > 1e-10)
}

/// Distortion of `coreset` against `a`: exact for p = 2, otherwise the
/// randomized lower bound.
pub fn distortion_oracle(a: &DenseMatrix, coreset: &Coreset, p: f64, opts: OracleOptions) -> f64 {
    if p == 2.0 {
        exact_distortion_l2(a, coreset)
    } else {
        randomized_distortion(a, coreset, p, opts)
    }
}
