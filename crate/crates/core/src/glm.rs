//! Coresets for generalized linear models: nice hinge losses and p-probit
//! regression, plus the p-generalized normal cdf and μ_p estimation.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt;
use std::sync::Arc;

use rand::Rng as _;
use rand_distr::{Distribution, Exp1, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::linalg::{dot, DenseMatrix};
use crate::online::OnlineLewisState;
use crate::rng::{self, Namespace};

// ---------------------------------------------------------------------------
// p-generalized normal distribution

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbitSpec {
    pub p: f64,
    /// Tolerance of the quadrature fallback.
    pub quad_tol: f64,
}

impl ProbitSpec {
    pub fn new(p: f64) -> Result<Self> {
        if !(p >= 1.0) || !p.is_finite() {
            return Err(Error::Config(format!("probit p must be >= 1, got {p}")));
        }
        Ok(Self { p, quad_tol: 1e-12 })
    }
}

/// Density `p^{1−1/p}/(2Γ(1/p))·exp(−|t|^p/p)`.
pub fn density_p(t: f64, p: f64) -> f64 {
    let ln_norm = (1.0 - 1.0 / p) * p.ln() - std::f64::consts::LN_2 - ln_gamma(1.0 / p);
    (ln_norm - t.abs().powf(p) / p).exp()
}

const GAMMA_EPS: f64 = 1e-16;
const GAMMA_MAX_ITERS: usize = 10_000;

/// `ln P(a,x)` and `ln Q(a,x)` of the regularized incomplete gamma function,
/// or `None` when the expansion did not converge.
fn ln_incomplete_gamma(a: f64, x: f64) -> Option<(f64, f64)> {
    if x <= 0.0 {
        return Some((f64::NEG_INFINITY, 0.0));
    }
    let prefix = -x + a * x.ln() - ln_gamma(a);
    if x < a + 1.0 {
        // Series for P.
        let mut ap = a;
        let mut del = 1.0 / a;
        let mut sum = del;
        for _ in 0..GAMMA_MAX_ITERS {
            ap += 1.0;
            del *= x / ap;
            sum += del;
            if del.abs() < sum.abs() * GAMMA_EPS {
                let ln_p = prefix + sum.ln();
                return Some((ln_p, (-ln_p.exp()).ln_1p()));
            }
        }
        None
    } else {
        // Continued fraction for Q (modified Lentz).
        let tiny = 1e-300;
        let mut b = x + 1.0 - a;
        let mut c = 1.0 / tiny;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..GAMMA_MAX_ITERS {
            let an = -(i as f64) * (i as f64 - a);
            b += 2.0;
            d = an * d + b;
            if d.abs() < tiny {
                d = tiny;
            }
            c = b + an / c;
            if c.abs() < tiny {
                c = tiny;
            }
            d = 1.0 / d;
            let del = d * c;
            h *= del;
            if (del - 1.0).abs() < GAMMA_EPS {
                let ln_q = prefix + h.ln();
                return Some(((-ln_q.exp()).ln_1p(), ln_q));
            }
        }
        None
    }
}

/// Adaptive Simpson quadrature on `[a, b]`.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    fn rec<F: Fn(f64) -> f64>(
        f: &F,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = f(lm);
        let frm = f(rm);
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let diff = left + right - whole;
        if depth == 0 || diff.abs() <= 15.0 * tol {
            left + right + diff / 15.0
        } else {
            rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
                + rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
        }
    }
    let fa = f(a);
    let fb = f(b);
    let fm = f(0.5 * (a + b));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    rec(f, a, b, fa, fm, fb, whole, tol, 50)
}

/// `ln Φ_p(−|r|)`, the log of the lower tail mass.
fn ln_lower_tail(r: f64, spec: &ProbitSpec) -> f64 {
    let p = spec.p;
    let x = r.abs().powf(p) / p;
    match ln_incomplete_gamma(1.0 / p, x) {
        Some((_, ln_q)) => ln_q - std::f64::consts::LN_2,
        None => {
            let v = adaptive_simpson(&|t| density_p(t, p), r.abs(), r.abs() + 60.0 * p.powf(1.0 / p), spec.quad_tol);
            v.ln()
        }
    }
}

/// `ln Φ_p(r)`, accurate in both tails.
pub fn log_phi_p(r: f64, spec: &ProbitSpec) -> f64 {
    if r == 0.0 {
        return -std::f64::consts::LN_2;
    }
    let tail = ln_lower_tail(r, spec);
    if r < 0.0 {
        tail
    } else {
        (-tail.exp()).ln_1p()
    }
}

/// Cdf of the p-generalized normal distribution.
pub fn phi_p(r: f64, spec: &ProbitSpec) -> f64 {
    log_phi_p(r, spec).exp()
}

/// p-probit loss `ψ_p(x) = −ln Φ_p(−x)`.
pub fn psi_p(x: f64, spec: &ProbitSpec) -> f64 {
    -log_phi_p(-x, spec)
}

// ---------------------------------------------------------------------------
// Nice hinge functions

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum HingeKind {
    Relu,
    Hinge,
    Logistic,
    Custom,
}

#[derive(Clone)]
pub struct HingeSpec {
    pub kind: HingeKind,
    pub lipschitz: f64,
    pub a1: f64,
    pub a2: f64,
    custom: Option<Arc<dyn Fn(f64) -> f64 + Send + Sync>>,
}

impl fmt::Debug for HingeSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HingeSpec")
            .field("kind", &self.kind)
            .field("lipschitz", &self.lipschitz)
            .field("a1", &self.a1)
            .field("a2", &self.a2)
            .finish()
    }
}

impl HingeSpec {
    pub fn relu() -> Self {
        Self { kind: HingeKind::Relu, lipschitz: 1.0, a1: 0.0, a2: 0.0, custom: None }
    }

    /// `max(0, 1 + x)`.
    pub fn hinge() -> Self {
        Self { kind: HingeKind::Hinge, lipschitz: 1.0, a1: 1.0, a2: 1.0, custom: None }
    }

    /// `ln(1 + eˣ)`.
    pub fn logistic() -> Self {
        let l2 = std::f64::consts::LN_2;
        Self { kind: HingeKind::Logistic, lipschitz: 1.0, a1: l2, a2: l2, custom: None }
    }

    pub fn custom<F>(f: F, lipschitz: f64, a1: f64, a2: f64) -> Result<Self>
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        if !(lipschitz > 0.0) || !(a1 >= 0.0) || !(a2 >= 0.0) {
            return Err(Error::Config("hinge needs L > 0, a1 >= 0, a2 >= 0".into()));
        }
        Ok(Self { kind: HingeKind::Custom, lipschitz, a1, a2, custom: Some(Arc::new(f)) })
    }

    pub fn eval(&self, x: f64) -> f64 {
        match self.kind {
            HingeKind::Relu => x.max(0.0),
            HingeKind::Hinge => (1.0 + x).max(0.0),
            HingeKind::Logistic => {
                if x > 0.0 {
                    x + (-x).exp().ln_1p()
                } else {
                    x.exp().ln_1p()
                }
            }
            HingeKind::Custom => (self.custom.as_ref().expect("custom hinge has a function"))(x),
        }
    }
}

/// Loss applied to `⟨a_i, x⟩`.
#[derive(Clone, Debug)]
pub enum Loss {
    Hinge(HingeSpec),
    Probit(ProbitSpec),
}

impl Loss {
    pub fn eval(&self, t: f64) -> f64 {
        match self {
            Loss::Hinge(h) => h.eval(t),
            Loss::Probit(s) => psi_p(t, s),
        }
    }

    /// `Σ_i ℓ(⟨a_i, x⟩)` over all rows.
    pub fn total(&self, a: &DenseMatrix, x: &[f64]) -> f64 {
        a.rows_iter().map(|r| self.eval(dot(r, x))).sum()
    }
}

/// Rows `a_i = −(2y_i − 1)·z_i` for labels `y_i ∈ {0,1}`; labels given as
/// ±1 are mapped to `{0,1}` first.
pub fn labeled_to_rows(labels: &[f64], z: &DenseMatrix) -> Result<DenseMatrix> {
    if labels.len() != z.nrows() {
        return Err(Error::InvalidInput("one label per row is required".into()));
    }
    let mut out = DenseMatrix::new(z.ncols())?;
    for (i, (&y, r)) in labels.iter().zip(z.rows_iter()).enumerate() {
        let y01 = if y == 1.0 {
            1.0
        } else if y == -1.0 || y == 0.0 {
            0.0
        } else {
            return Err(Error::Parse { line: i + 1, msg: format!("label must be +1 or -1, got {y}") });
        };
        let s = -(2.0 * y01 - 1.0);
        out.push_row(&r.iter().map(|v| s * v).collect::<Vec<_>>())?;
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Weighted coresets

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightedEntry {
    pub index: usize,
    pub row: Vec<f64>,
    pub weight: f64,
    pub prob: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightedCoreset {
    pub d: usize,
    pub n: usize,
    pub seed: u64,
    pub entries: Vec<WeightedEntry>,
    pub sum_sensitivities: f64,
}

impl WeightedCoreset {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// `Σ_kept weight_i·ℓ(⟨a_i, x⟩)`.
    pub fn cost(&self, loss: &Loss, x: &[f64]) -> f64 {
        self.entries.iter().map(|e| e.weight * loss.eval(dot(&e.row, x))).sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HingeConfig {
    pub epsilon: f64,
    /// Sampling constant `C` in `p_i = C(μ/ε)²·max{w̃_i, 1/n}`.
    pub c: f64,
    pub seed: u64,
    /// Stream length if known in advance; otherwise the running row count
    /// is used, which only enlarges `1/n`.
    pub n_hint: Option<usize>,
}

fn running_n(hint: Option<usize>, i: usize) -> f64 {
    hint.unwrap_or(i).max(i).max(1) as f64
}

/// Bernoulli coreset for a nice hinge loss from online ℓ1 Lewis weights.
pub fn hinge_coreset(a: &DenseMatrix, spec: &HingeSpec, mu: f64, config: &HingeConfig) -> Result<WeightedCoreset> {
    if !(mu > 0.0) || !mu.is_finite() {
        return Err(Error::Config(format!("mu must be positive, got {mu}")));
    }
    if !(config.epsilon > 0.0) || !(config.c > 0.0) {
        return Err(Error::Config("epsilon and the sampling constant must be positive".into()));
    }
    if !(spec.a2 > 0.0 || spec.kind == HingeKind::Relu) {
        return Err(Error::Config("hinge coresets need a2 > 0 unless the loss is relu".into()));
    }
    let mut state = OnlineLewisState::new(a.ncols(), 1.0)?;
    let mut coins = rng::stream(config.seed, Namespace::Glm, 0);
    let lead = config.c * (mu / config.epsilon).powi(2);
    let mut entries = Vec::new();
    let mut sens = 0.0;
    for (i, r) in a.rows_iter().enumerate() {
        let w = state.step(r)?;
        let n = running_n(config.n_hint, i + 1);
        let s = w.max(1.0 / n);
        sens += s;
        let prob = (lead * s).min(1.0);
        let u: f64 = coins.random();
        if prob >= 1.0 || u < prob {
            entries.push(WeightedEntry { index: i, row: r.to_vec(), weight: 1.0 / prob, prob });
        }
    }
    Ok(WeightedCoreset { d: a.ncols(), n: a.nrows(), seed: config.seed, entries, sum_sensitivities: sens })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbitConfig {
    /// Reservoir size.
    pub size: usize,
    /// Constant in front of `μ_p` in `σ_i = C·μ_p·(1/n + ŝ_i)`.
    pub c_sens: f64,
    pub seed: u64,
    pub n_hint: Option<usize>,
}

/// Suggested reservoir size `C·S·d/ε²·ln S·ln(μ/ε)` with
/// `S = μ·(d·ln(nκ))^{max(1,p/2)}`.
pub fn suggested_probit_size(mu: f64, p: f64, d: usize, n: usize, kappa: f64, epsilon: f64, c: f64) -> usize {
    let l = ((n as f64) * kappa.max(1.0)).ln().max(1.0);
    let s = mu * (d as f64 * l).powf((p / 2.0).max(1.0));
    let v = c * s * d as f64 / (epsilon * epsilon) * s.ln().max(1.0) * (mu / epsilon).ln().max(1.0);
    v.ceil().min(usize::MAX as f64) as usize
}

#[derive(Clone, Copy, Debug)]
struct Keyed {
    key: f64,
    index: usize,
    sigma: f64,
}

impl PartialEq for Keyed {
    fn eq(&self, o: &Self) -> bool {
        self.cmp(o) == Ordering::Equal
    }
}
impl Eq for Keyed {}
impl PartialOrd for Keyed {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Keyed {
    fn cmp(&self, o: &Self) -> Ordering {
        self.key.total_cmp(&o.key).then(self.index.cmp(&o.index))
    }
}

/// One-pass weighted reservoir of fixed size with exponential keys `E/σ`
/// and exponential jumps.
///
/// One extra slot is kept so that the `(m+1)`-th smallest key `τ` is known;
/// kept items are then reweighted by `1/(1 − e^{−σ_i τ})`.
pub struct WeightedReservoir {
    size: usize,
    heap: BinaryHeap<Keyed>,
    rng: crate::rng::Rng,
    skip: f64,
    seen: usize,
}

impl WeightedReservoir {
    pub fn new(size: usize, seed: u64) -> Self {
        Self { size, heap: BinaryHeap::new(), rng: rng::stream(seed, Namespace::Glm, 1), skip: 0.0, seen: 0 }
    }

    fn threshold(&self) -> f64 {
        self.heap.peek().map_or(f64::INFINITY, |k| k.key)
    }

    /// Offers item `index` with weight `sigma > 0`; returns whether it entered.
    pub fn offer(&mut self, index: usize, sigma: f64) -> bool {
        self.seen += 1;
        if !(sigma > 0.0) {
            return false;
        }
        let cap = self.size + 1;
        if self.heap.len() < cap {
            let e: f64 = Exp1.sample(&mut self.rng);
            self.heap.push(Keyed { key: e / sigma, index, sigma });
            if self.heap.len() == cap {
                self.draw_skip();
            }
            return true;
        }
        self.skip -= sigma;
        if self.skip > 0.0 {
            return false;
        }
        // Key conditioned on falling below the current threshold.
        let tau = self.threshold();
        let u: f64 = self.rng.random();
        let key = -(-u * (-(-sigma * tau).exp_m1())).ln_1p() / sigma;
        self.heap.pop();
        self.heap.push(Keyed { key: key.min(tau), index, sigma });
        self.draw_skip();
        true
    }

    fn draw_skip(&mut self) {
        let e: f64 = Exp1.sample(&mut self.rng);
        self.skip = e / self.threshold();
    }

    /// Kept `(index, inclusion probability)` pairs sorted by index.
    pub fn finish(self) -> Vec<(usize, f64)> {
        let mut items = self.heap.into_sorted_vec();
        if items.len() <= self.size {
            let mut v: Vec<(usize, f64)> = items.iter().map(|k| (k.index, 1.0)).collect();
            v.sort_by_key(|x| x.0);
            return v;
        }
        let tau = items.pop().expect("reservoir holds size+1 items").key;
        let mut v: Vec<(usize, f64)> = items.iter().map(|k| (k.index, -(-k.sigma * tau).exp_m1())).collect();
        v.sort_by_key(|x| x.0);
        v
    }
}

/// Reservoir coreset for the p-probit loss with sensitivities from online
/// ℓp Lewis weights.
pub fn probit_coreset(a: &DenseMatrix, spec: &ProbitSpec, mu_p: f64, config: &ProbitConfig) -> Result<WeightedCoreset> {
    if !(mu_p > 0.0) || !mu_p.is_finite() {
        return Err(Error::Config(format!("mu_p must be positive, got {mu_p}")));
    }
    if !(config.c_sens > 0.0) || config.size == 0 {
        return Err(Error::Config("probit coresets need c_sens > 0 and size >= 1".into()));
    }
    let p = spec.p;
    let mut state = OnlineLewisState::new(a.ncols(), p)?;
    let mut res = WeightedReservoir::new(config.size, config.seed);
    let mut total = 0.0;
    for (i, r) in a.rows_iter().enumerate() {
        let w = state.step(r)?;
        let s_hat = if p > 2.0 { state.weight_sum().powf(p / 2.0 - 1.0) * w } else { w };
        let n = running_n(config.n_hint, i + 1);
        let sigma = config.c_sens * mu_p * (1.0 / n + s_hat);
        total += sigma;
        res.offer(i, sigma);
    }
    let entries = res
        .finish()
        .into_iter()
        .map(|(i, prob)| WeightedEntry { index: i, row: a.row(i).to_vec(), weight: 1.0 / prob, prob })
        .collect();
    Ok(WeightedCoreset { d: a.ncols(), n: a.nrows(), seed: config.seed, entries, sum_sensitivities: total })
}

// ---------------------------------------------------------------------------
// μ_p complexity

fn side_masses(m: &[f64], r: usize, y: &[f64], p: f64) -> (f64, f64) {
    let mut pos = 0.0;
    let mut neg = 0.0;
    for row in m.chunks_exact(r) {
        let v: f64 = row.iter().zip(y).map(|(a, b)| a * b).sum();
        if v > 0.0 {
            pos += v.powf(p);
        } else if v < 0.0 {
            neg += (-v).powf(p);
        }
    }
    (pos, neg)
}

fn side_ratio(m: &[f64], r: usize, y: &[f64], p: f64) -> f64 {
    let (pos, neg) = side_masses(m, r, y, p);
    match (pos > 0.0, neg > 0.0) {
        (false, false) => 0.0,
        (true, false) | (false, true) => f64::INFINITY,
        (true, true) => (pos / neg).max(neg / pos),
    }
}

/// Lower bound on `μ_p(A) = sup_x Σ_{⟨a,x⟩>0}|⟨a,x⟩|^p / Σ_{⟨a,x⟩<0}|⟨a,x⟩|^p`
/// from random directions refined by coordinate ascent; both `x` and `−x`
/// are scored.
pub fn mu_p_estimate(a: &DenseMatrix, p: f64, trials: usize, seed: u64) -> f64 {
    let g = a.gram();
    let d = a.ncols();
    let eig = nalgebra::SymmetricEigen::new(g);
    let lmax = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let cut = 16.0 * d as f64 * f64::EPSILON * lmax;
    let basis: Vec<Vec<f64>> = (0..d)
        .filter(|&k| eig.eigenvalues[k] > cut)
        .map(|k| {
            let s = eig.eigenvalues[k].sqrt();
            eig.eigenvectors.column(k).iter().map(|v| v / s).collect()
        })
        .collect();
    let r = basis.len();
    if r == 0 {
        return 0.0;
    }
    let mut m = Vec::with_capacity(a.nrows() * r);
    for row in a.rows_iter() {
        for b in &basis {
            m.push(dot(row, b));
        }
    }
    let mut rng = rng::stream(seed, Namespace::Oracle, 1);
    let dirs: Vec<Vec<f64>> = (0..trials.max(1))
        .map(|_| {
            let y: Vec<f64> = (0..r).map(|_| StandardNormal.sample(&mut rng)).collect();
            let n = y.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
            y.into_iter().map(|v| v / n).collect()
        })
        .collect();
    let mut basis_dirs = Vec::new();
    for j in 0..r {
        let mut e = vec![0.0; r];
        e[j] = 1.0;
        basis_dirs.push(e);
    }
    let all: Vec<Vec<f64>> = basis_dirs.into_iter().chain(dirs).collect();
    let vals: Vec<f64> = all.par_iter().map(|y| side_ratio(&m, r, y, p)).collect();
    if vals.iter().any(|v| v.is_infinite()) {
        return f64::INFINITY;
    }
    let mut order: Vec<usize> = (0..all.len()).collect();
    order.sort_by(|&i, &j| vals[j].total_cmp(&vals[i]).then(i.cmp(&j)));
    let f = |y: &[f64]| side_ratio(&m, r, y, p);
    let best = order.first().map_or(0.0, |&i| vals[i]);
    let refined: Vec<f64> = order
        .iter()
        .take(32)
        .copied()
        .collect::<Vec<_>>()
        .par_iter()
        .map(|&i| crate::sampling::coordinate_ascent(&all[i], vals[i], 50, &f))
        .collect();
    refined.into_iter().fold(best, f64::max)
}
