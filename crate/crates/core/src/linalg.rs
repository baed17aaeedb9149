//! Dense linear-algebra helpers built on nalgebra's SVD.
//!
//! Every solve in the crate goes through the Moore-Penrose pseudoinverse with
//! a relative singular-value cutoff, so rank decisions are made in one place.

use nalgebra::{DMatrix, DVector};

/// Relative cutoff used when inverting singular values.
pub const PINV_CUTOFF: f64 = 1e-10;

/// Relative threshold under which a singular value counts as zero when
/// extracting null spaces.
pub const NULL_CUTOFF: f64 = 1e-8;

/// Full singular value decomposition with singular values sorted in
/// descending order and a square `V`.
///
/// nalgebra's SVD is thin; wide matrices are padded with zero rows so that
/// the right singular vectors span the whole domain.
#[derive(Debug, Clone)]
pub struct FullSvd {
    pub u: DMatrix<f64>,
    pub singular_values: Vec<f64>,
    /// Columns are right singular vectors, ordered like `singular_values`
    /// (then any trailing null directions).
    pub v: DMatrix<f64>,
    pub rows: usize,
}

impl FullSvd {
    pub fn new(a: &DMatrix<f64>) -> Self {
        let (m, n) = a.shape();
        let padded = if m < n {
            let mut p = DMatrix::zeros(n, n);
            p.view_mut((0, 0), (m, n)).copy_from(a);
            p
        } else {
            a.clone()
        };
        let svd = padded.svd(true, true);
        let u = svd.u.expect("u requested");
        let v_t = svd.v_t.expect("v_t requested");
        let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
        order.sort_by(|&i, &j| {
            svd.singular_values[j]
                .partial_cmp(&svd.singular_values[i])
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        let sv: Vec<f64> = order.iter().map(|&i| svd.singular_values[i]).collect();
        let mut v = DMatrix::zeros(n, order.len());
        let mut us = DMatrix::zeros(u.nrows(), order.len());
        for (dst, &src) in order.iter().enumerate() {
            v.set_column(dst, &v_t.row(src).transpose());
            us.set_column(dst, &u.column(src));
        }
        Self {
            u: us,
            singular_values: sv,
            v,
            rows: m,
        }
    }

    pub fn sigma_max(&self) -> f64 {
        self.singular_values.first().copied().unwrap_or(0.0)
    }

    /// Number of singular values above `rel * sigma_max`, capped by the
    /// number of rows of the original matrix.
    pub fn rank(&self, rel: f64) -> usize {
        let cut = rel * self.sigma_max();
        self.singular_values
            .iter()
            .take(self.rows)
            .filter(|&&s| s > cut && s > 0.0)
            .count()
    }

    /// Orthonormal basis (as columns) of the numerical null space.
    pub fn null_space(&self, rel: f64) -> DMatrix<f64> {
        let r = self.rank(rel);
        let n = self.v.nrows();
        self.v.columns(r, n - r).into_owned()
    }
}

/// Moore-Penrose pseudoinverse with singular values below
/// `PINV_CUTOFF * sigma_max` discarded. Returns the inverse and the rank used.
pub fn pinv(a: &DMatrix<f64>) -> (DMatrix<f64>, usize) {
    let (m, n) = a.shape();
    if m == 0 || n == 0 {
        return (DMatrix::zeros(n, m), 0);
    }
    let svd = a.clone().svd(true, true);
    let u = svd.u.expect("u requested");
    let v_t = svd.v_t.expect("v_t requested");
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let cut = PINV_CUTOFF * smax;
    let mut out = DMatrix::zeros(n, m);
    let mut rank = 0;
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s > cut && s > 0.0 {
            rank += 1;
            out += (v_t.row(i).transpose() / s) * u.column(i).transpose();
        }
    }
    (out, rank)
}

/// Minimum-norm least-squares solution `A^+ b` and the numerical rank of `A`.
pub fn pinv_solve(a: &DMatrix<f64>, b: &DVector<f64>) -> (DVector<f64>, usize) {
    let (p, rank) = pinv(a);
    (p * b, rank)
}

/// Null-space basis of `a` with the crate-wide relative cutoff.
pub fn null_space(a: &DMatrix<f64>) -> DMatrix<f64> {
    FullSvd::new(a).null_space(NULL_CUTOFF)
}

/// Symmetric-part norm check helper: `‖A − Aᵀ‖_F`.
pub fn asymmetry(a: &DMatrix<f64>) -> f64 {
    (a - a.transpose()).norm()
}
