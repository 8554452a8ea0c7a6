//! Dense linear algebra used by every other module: row-major matrices,
//! PSD quadratics with an explicit rank basis, pseudoinverse quadratic forms,
//! leverage scores and Khatri–Rao row powers.

use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{check_finite, Error, Result};
use crate::weights::WeightVector;

pub const DEFAULT_TOL_SPAN: f64 = 1e-9;
const SPAN_FLOOR: f64 = 1e-300;

/// Largest number of entries `khatri_rao_power` will allocate by default.
pub const DEFAULT_KR_CAP: usize = 1 << 22;

/// Row-major dense matrix with at least one column.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn new(cols: usize) -> Result<Self> {
        if cols == 0 {
            return Err(Error::InvalidInput("matrix needs at least one column".into()));
        }
        Ok(Self { rows: 0, cols, data: Vec::new() })
    }

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if cols == 0 {
            return Err(Error::InvalidInput("matrix needs at least one column".into()));
        }
        if data.len() != rows * cols {
            return Err(Error::InvalidInput(format!(
                "expected {} entries for a {rows}x{cols} matrix, got {}",
                rows * cols,
                data.len()
            )));
        }
        check_finite(&data, "matrix")?;
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut m = Self::new(cols)?;
        for r in rows {
            m.push_row(r.as_ref())?;
        }
        Ok(m)
    }

    pub fn identity(d: usize) -> Result<Self> {
        let mut data = vec![0.0; d * d];
        for i in 0..d {
            data[i * d + i] = 1.0;
        }
        Self::from_row_major(d, d, data)
    }

    pub fn push_row(&mut self, row: &[f64]) -> Result<()> {
        if row.len() != self.cols {
            return Err(Error::InvalidInput(format!("row has {} entries, expected {}", row.len(), self.cols)));
        }
        check_finite(row, "row")?;
        self.data.extend_from_slice(row);
        self.rows += 1;
        Ok(())
    }

    pub fn nrows(&self) -> usize {
        self.rows
    }

    pub fn ncols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn rows_iter(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.cols)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Rows `start..end` as a new matrix.
    pub fn slice_rows(&self, start: usize, end: usize) -> DenseMatrix {
        DenseMatrix { rows: end - start, cols: self.cols, data: self.data[start * self.cols..end * self.cols].to_vec() }
    }

    /// Vertical concatenation `[self; other]`.
    pub fn vstack(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        if self.cols != other.cols {
            return Err(Error::InvalidInput("column mismatch in vstack".into()));
        }
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Ok(DenseMatrix { rows: self.rows + other.rows, cols: self.cols, data })
    }

    pub fn to_nalgebra(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rows, self.cols, &self.data)
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        self.rows_iter().map(|r| dot(r, x)).collect()
    }

    /// `Σ c_i a_i a_iᵀ`.
    pub fn weighted_gram(&self, c: &[f64]) -> DMatrix<f64> {
        let d = self.cols;
        let mut g = DMatrix::zeros(d, d);
        for (r, &ci) in self.rows_iter().zip(c) {
            if ci == 0.0 {
                continue;
            }
            for j in 0..d {
                let s = ci * r[j];
                if s == 0.0 {
                    continue;
                }
                for k in j..d {
                    g[(j, k)] += s * r[k];
                }
            }
        }
        symmetrize_upper(&mut g);
        g
    }

    pub fn gram(&self) -> DMatrix<f64> {
        self.weighted_gram(&vec![1.0; self.rows])
    }
}

pub(crate) fn symmetrize_upper(g: &mut DMatrix<f64>) {
    let d = g.nrows();
    for j in 0..d {
        for k in 0..j {
            g[(j, k)] = g[(k, j)];
        }
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Result of a pseudoinverse quadratic form query.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum QuadForm {
    InSpan(f64),
    OutOfSpan,
}

impl QuadForm {
    pub fn value(self) -> Option<f64> {
        match self {
            QuadForm::InSpan(v) => Some(v),
            QuadForm::OutOfSpan => None,
        }
    }
}

#[derive(Clone, Debug)]
struct PinvFactor {
    // Columns are eigenvectors in ambient coordinates, paired with 1/λ.
    vecs: DMatrix<f64>,
    inv_eigs: Vec<f64>,
}

/// Symmetric PSD matrix together with an orthonormal basis of its row space.
///
/// The matrix is updated exactly; the eigendecomposition used for
/// pseudoinverse queries is rebuilt lazily after an update.
#[derive(Clone, Debug)]
pub struct PsdQuadratic {
    matrix: DMatrix<f64>,
    basis: Vec<DVector<f64>>,
    tol_span: f64,
    factor: OnceLock<PinvFactor>,
}

impl PsdQuadratic {
    pub fn zeros(d: usize) -> Self {
        Self { matrix: DMatrix::zeros(d, d), basis: Vec::new(), tol_span: DEFAULT_TOL_SPAN, factor: OnceLock::new() }
    }

    /// Wraps an existing symmetric PSD matrix. The rank basis is the
    /// eigenspace above the cutoff `d·eps·λ_max`.
    pub fn from_matrix(m: DMatrix<f64>) -> Result<Self> {
        let d = m.nrows();
        if m.ncols() != d {
            return Err(Error::InvalidInput("quadratic must be square".into()));
        }
        check_finite(m.as_slice(), "quadratic")?;
        let scale = m.amax().max(f64::MIN_POSITIVE);
        for j in 0..d {
            for k in 0..j {
                if (m[(j, k)] - m[(k, j)]).abs() > 1e-10 * scale {
                    return Err(Error::InvalidInput("quadratic is not symmetric".into()));
                }
            }
        }
        let mut sym = m;
        symmetrize_upper(&mut sym);
        let eig = SymmetricEigen::new(sym.clone());
        let lmax = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
        if eig.eigenvalues.iter().any(|&l| l < -1e-9 * lmax.max(1e-300)) {
            return Err(Error::InvalidInput("quadratic is not PSD".into()));
        }
        let cut = eig_cutoff(d, lmax);
        let basis =
            (0..d).filter(|&k| eig.eigenvalues[k] > cut).map(|k| eig.eigenvectors.column(k).into_owned()).collect();
        Ok(Self { matrix: sym, basis, tol_span: DEFAULT_TOL_SPAN, factor: OnceLock::new() })
    }

    /// `Σ c_i a_i a_iᵀ` built row by row, so the rank basis follows the
    /// same span decisions as the online code path.
    pub fn from_weighted_rows(a: &DenseMatrix, c: &[f64]) -> Result<Self> {
        let mut q = Self::zeros(a.ncols());
        for (r, &ci) in a.rows_iter().zip(c) {
            q.rank_one_update(r, ci)?;
        }
        Ok(q)
    }

    pub fn with_tol_span(mut self, tol: f64) -> Self {
        self.tol_span = tol;
        self
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn rank(&self) -> usize {
        self.basis.len()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn basis(&self) -> &[DVector<f64>] {
        &self.basis
    }

    /// Component of `a` orthogonal to the rank basis (two Gram–Schmidt passes).
    fn residual(&self, a: &DVector<f64>) -> DVector<f64> {
        let mut r = a.clone();
        for _ in 0..2 {
            for v in &self.basis {
                let c = v.dot(&r);
                r.axpy(-c, v, 1.0);
            }
        }
        r
    }

    pub fn in_span(&self, a: &[f64]) -> bool {
        let av = DVector::from_column_slice(a);
        let res = self.residual(&av);
        res.norm() <= self.tol_span * av.norm().max(SPAN_FLOOR)
    }

    /// `Q ← Q + c·aaᵀ`; the rank basis grows iff `a` is outside the row space.
    pub fn rank_one_update(&mut self, a: &[f64], c: f64) -> Result<()> {
        if a.len() != self.dim() {
            return Err(Error::InvalidInput(format!("vector has {} entries, expected {}", a.len(), self.dim())));
        }
        check_finite(a, "update vector")?;
        if !c.is_finite() || c < 0.0 {
            return Err(Error::InvalidInput(format!("update coefficient must be finite and >= 0, got {c}")));
        }
        if c == 0.0 || a.iter().all(|&x| x == 0.0) {
            return Ok(());
        }
        let d = self.dim();
        for j in 0..d {
            let s = c * a[j];
            for k in 0..d {
                self.matrix[(j, k)] += s * a[k];
            }
        }
        let av = DVector::from_column_slice(a);
        let res = self.residual(&av);
        let rn = res.norm();
        if rn > self.tol_span * av.norm().max(SPAN_FLOOR) && self.basis.len() < d {
            self.basis.push(res / rn);
        }
        self.factor = OnceLock::new();
        Ok(())
    }

    fn factor(&self) -> &PinvFactor {
        self.factor.get_or_init(|| {
            let d = self.dim();
            let r = self.basis.len();
            if r == 0 {
                return PinvFactor { vecs: DMatrix::zeros(d, 0), inv_eigs: Vec::new() };
            }
            let v = DMatrix::from_columns(&self.basis);
            let mut restricted = v.transpose() * &self.matrix * &v;
            symmetrize_upper(&mut restricted);
            let eig = SymmetricEigen::new(restricted);
            let lmax = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
            let cut = eig_cutoff(d, lmax);
            let keep: Vec<usize> = (0..r).filter(|&k| eig.eigenvalues[k] > cut).collect();
            let vecs = DMatrix::from_fn(d, keep.len(), |i, j| {
                let k = keep[j];
                (0..r).map(|m| v[(i, m)] * eig.eigenvectors[(m, k)]).sum()
            });
            let inv_eigs = keep.iter().map(|&k| 1.0 / eig.eigenvalues[k]).collect();
            PinvFactor { vecs, inv_eigs }
        })
    }

    /// `aᵀQ⁻a` if `a` lies in the row space, otherwise the out-of-span signal.
    pub fn quad_form_pinv(&self, a: &[f64]) -> Result<QuadForm> {
        check_finite(a, "query vector")?;
        if !self.in_span(a) {
            return Ok(QuadForm::OutOfSpan);
        }
        Ok(QuadForm::InSpan(self.pinv_value(a)))
    }

    /// `aᵀQ⁻a` without the span test (the component outside the row space
    /// is ignored, as the pseudoinverse does).
    pub fn pinv_value(&self, a: &[f64]) -> f64 {
        let f = self.factor();
        let mut s = 0.0;
        for (k, &ie) in f.inv_eigs.iter().enumerate() {
            let c: f64 = f.vecs.column(k).iter().zip(a).map(|(x, y)| x * y).sum();
            s += c * c * ie;
        }
        s
    }
}

fn eig_cutoff(d: usize, lmax: f64) -> f64 {
    (d as f64) * f64::EPSILON * lmax.max(0.0)
}

/// `τ_i = a_iᵀ(AᵀA)⁻a_i`; zero rows get 0.
pub fn leverage_scores(a: &DenseMatrix) -> WeightVector {
    let q = PsdQuadratic::from_matrix(a.gram()).expect("Gram matrix of finite rows is PSD");
    let w = a
        .rows_iter()
        .map(|r| if r.iter().all(|&x| x == 0.0) { 0.0 } else { q.pinv_value(r).clamp(0.0, 1.0) })
        .collect();
    WeightVector::new(2.0, w, 1.0)
}

/// `a^{⊗k}` in lexicographic index order; refuses outputs above `cap` entries.
pub fn khatri_rao_power(a: &[f64], k: usize, cap: usize) -> Result<Vec<f64>> {
    if k == 0 {
        return Err(Error::InvalidInput("tensor power must be at least 1".into()));
    }
    let len = (a.len() as u128).checked_pow(k as u32).unwrap_or(u128::MAX);
    if len > cap as u128 {
        return Err(Error::Capacity(format!("{}^{k} entries exceeds cap {cap}", a.len())));
    }
    let mut out = a.to_vec();
    for _ in 1..k {
        let mut next = Vec::with_capacity(out.len() * a.len());
        for &x in &out {
            next.extend(a.iter().map(|&y| x * y));
        }
        out = next;
    }
    Ok(out)
}

/// Row-wise Khatri–Rao power of a matrix.
pub fn khatri_rao_matrix(a: &DenseMatrix, k: usize, cap: usize) -> Result<DenseMatrix> {
    let cols = (a.ncols() as u128).checked_pow(k as u32).unwrap_or(u128::MAX);
    if cols > cap as u128 {
        return Err(Error::Capacity(format!("{}^{k} columns exceeds cap {cap}", a.ncols())));
    }
    let mut data = Vec::with_capacity(a.nrows() * cols as usize);
    for r in a.rows_iter() {
        data.extend(khatri_rao_power(r, k, cap)?);
    }
    DenseMatrix::from_row_major(a.nrows(), cols as usize, data)
}

/// Eigenvalues of `H` relative to `G` on the range of `G`, i.e. of
/// `G^{-1/2} H G^{-1/2}` restricted to rowspan(G). Sorted ascending.
pub fn whitened_pencil(g: &DMatrix<f64>, h: &DMatrix<f64>) -> Vec<f64> {
    let d = g.nrows();
    let eig = SymmetricEigen::new(g.clone());
    let lmax = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let cut = eig_cutoff(d, lmax) * 16.0;
    let keep: Vec<usize> = (0..d).filter(|&k| eig.eigenvalues[k] > cut).collect();
    let r = keep.len();
    if r == 0 {
        return Vec::new();
    }
    let w = DMatrix::from_fn(d, r, |i, j| {
        let k = keep[j];
        eig.eigenvectors[(i, k)] / eig.eigenvalues[k].sqrt()
    });
    let mut m = w.transpose() * h * &w;
    symmetrize_upper(&mut m);
    let mut ev: Vec<f64> = SymmetricEigen::new(m).eigenvalues.iter().cloned().collect();
    ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
    ev
}

/// Largest singular value.
pub fn spectral_norm(a: &DenseMatrix) -> f64 {
    let g = a.gram();
    SymmetricEigen::new(g).eigenvalues.iter().cloned().fold(0.0, f64::max).max(0.0).sqrt()
}

/// Smallest singular value above the rank cutoff, or `None` for a zero matrix.
pub fn min_nonzero_singular(g: &DMatrix<f64>) -> Option<f64> {
    let d = g.nrows();
    let eig = SymmetricEigen::new(g.clone());
    let lmax = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    if lmax <= 0.0 {
        return None;
    }
    let cut = eig_cutoff(d, lmax);
    eig.eigenvalues
        .iter()
        .filter(|&&l| l > cut)
        .cloned()
        .fold(None, |m: Option<f64>, l| Some(m.map_or(l, |m| m.min(l))))
        .map(f64::sqrt)
}
