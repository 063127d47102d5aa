//! Dense complex tensors and the handful of linear-algebra kernels the rest of
//! the crate is built on.
//!
//! Data is stored row-major: the last index varies fastest. A tensor of shape
//! `[d0, d1, d2]` keeps entry `(i, j, k)` at offset `(i * d1 + j) * d2 + k`.
//! Matrices handed to and from nalgebra are converted explicitly, since
//! nalgebra is column-major.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64 as C64;
use num_traits::Zero;
use serde::{Deserialize, Serialize};

use crate::error::{TtnError, TtnResult};

const JACOBI_MAX_SWEEPS: usize = 60;
const HERMITIAN_TOL: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseTensor {
    shape: Vec<usize>,
    data: Vec<C64>,
}

impl DenseTensor {
    pub fn new(shape: Vec<usize>, data: Vec<C64>) -> TtnResult<Self> {
        if shape.iter().any(|&s| s == 0) {
            return Err(TtnError::ShapeMismatch(format!("zero extent in shape {shape:?}")));
        }
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(TtnError::ShapeMismatch(format!(
                "shape {shape:?} needs {len} entries, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        assert!(shape.iter().all(|&s| s > 0), "zero extent in shape {shape:?}");
        let len = shape.iter().product();
        Self { shape, data: vec![C64::zero(); len] }
    }

    pub fn from_fn(shape: Vec<usize>, mut f: impl FnMut(&[usize]) -> C64) -> Self {
        let mut t = Self::zeros(shape);
        let mut idx = vec![0; t.shape.len()];
        for entry in t.data.iter_mut() {
            *entry = f(&idx);
            increment(&mut idx, &t.shape);
        }
        t
    }

    pub fn scalar(value: C64) -> Self {
        Self { shape: vec![], data: vec![value] }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn data(&self) -> &[C64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [C64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<C64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, idx: &[usize]) -> C64 {
        self.data[self.offset(idx)]
    }

    pub fn set(&mut self, idx: &[usize], value: C64) {
        let off = self.offset(idx);
        self.data[off] = value;
    }

    fn offset(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.shape.len());
        idx.iter().zip(&self.shape).fold(0, |acc, (&i, &s)| {
            debug_assert!(i < s);
            acc * s + i
        })
    }

    /// Frobenius norm.
    pub fn norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, factor: C64) {
        self.data.iter_mut().for_each(|z| *z *= factor);
    }

    pub fn scaled(mut self, factor: C64) -> Self {
        self.scale(factor);
        self
    }

    pub fn conj(&self) -> Self {
        Self { shape: self.shape.clone(), data: self.data.iter().map(|z| z.conj()).collect() }
    }

    pub fn reshape(self, shape: Vec<usize>) -> TtnResult<Self> {
        Self::new(shape, self.data)
    }

    /// Largest entrywise modulus of `self - other`; `None` on shape mismatch.
    pub fn max_abs_diff(&self, other: &Self) -> Option<f64> {
        (self.shape == other.shape).then(|| {
            self.data.iter().zip(&other.data).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max)
        })
    }

    /// Multiply index `axis` entrywise by `factors` (a diagonal matrix).
    pub fn scale_axis(&mut self, axis: usize, factors: &[f64]) {
        assert_eq!(self.shape[axis], factors.len(), "axis extent mismatch");
        let post: usize = self.shape[axis + 1..].iter().product();
        let dim = self.shape[axis];
        for (chunk_idx, chunk) in self.data.chunks_mut(post).enumerate() {
            let f = factors[chunk_idx % dim];
            chunk.iter_mut().for_each(|z| *z *= f);
        }
    }

    /// Contract index `axis` with the rows of `m`: `out[.., b, ..] = Σ_a t[.., a, ..] m[a, b]`.
    pub fn apply_axis_matrix(&self, axis: usize, m: &DMatrix<C64>) -> TtnResult<Self> {
        let dim = self.shape[axis];
        if m.nrows() != dim {
            return Err(TtnError::ShapeMismatch(format!(
                "axis {axis} has extent {dim}, matrix has {} rows",
                m.nrows()
            )));
        }
        let new_dim = m.ncols();
        let pre: usize = self.shape[..axis].iter().product();
        let post: usize = self.shape[axis + 1..].iter().product();
        let mut shape = self.shape.clone();
        shape[axis] = new_dim;
        let mut out = vec![C64::zero(); pre * new_dim * post];
        for p in 0..pre {
            let src = &self.data[p * dim * post..(p + 1) * dim * post];
            let dst = &mut out[p * new_dim * post..(p + 1) * new_dim * post];
            for a in 0..dim {
                let row = &src[a * post..(a + 1) * post];
                for b in 0..new_dim {
                    let coef = m[(a, b)];
                    if coef == C64::zero() {
                        continue;
                    }
                    let target = &mut dst[b * post..(b + 1) * post];
                    for (t, s) in target.iter_mut().zip(row) {
                        *t += coef * s;
                    }
                }
            }
        }
        Ok(Self { shape, data: out })
    }

    /// Keep only the first `keep` values of index `axis`.
    pub fn truncate_axis(&self, axis: usize, keep: usize) -> Self {
        let dim = self.shape[axis];
        assert!(keep >= 1 && keep <= dim);
        if keep == dim {
            return self.clone();
        }
        let pre: usize = self.shape[..axis].iter().product();
        let post: usize = self.shape[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(pre * keep * post);
        for p in 0..pre {
            let start = p * dim * post;
            data.extend_from_slice(&self.data[start..start + keep * post]);
        }
        let mut shape = self.shape.clone();
        shape[axis] = keep;
        Self { shape, data }
    }

    /// Row-major matrix view grouping the first `rows_rank` indices as rows.
    pub fn to_matrix(&self, rows_rank: usize) -> DMatrix<C64> {
        let rows: usize = self.shape[..rows_rank].iter().product();
        let cols: usize = self.shape[rows_rank..].iter().product();
        DMatrix::from_row_slice(rows, cols, &self.data)
    }

    pub fn from_matrix(m: &DMatrix<C64>, shape: Vec<usize>) -> TtnResult<Self> {
        let mut data = Vec::with_capacity(m.len());
        for r in 0..m.nrows() {
            for c in 0..m.ncols() {
                data.push(m[(r, c)]);
            }
        }
        Self::new(shape, data)
    }
}

fn increment(idx: &mut [usize], shape: &[usize]) {
    for k in (0..idx.len()).rev() {
        idx[k] += 1;
        if idx[k] < shape[k] {
            return;
        }
        idx[k] = 0;
    }
}

fn check_permutation(order: &[usize], rank: usize) -> TtnResult<()> {
    let mut seen = vec![false; rank];
    if order.len() != rank {
        return Err(TtnError::InvalidPermutation(order.to_vec()));
    }
    for &o in order {
        if o >= rank || seen[o] {
            return Err(TtnError::InvalidPermutation(order.to_vec()));
        }
        seen[o] = true;
    }
    Ok(())
}

/// Reorder indices: result index `k` is input index `order[k]`.
pub fn permute(t: &DenseTensor, order: &[usize]) -> TtnResult<DenseTensor> {
    check_permutation(order, t.rank())?;
    if order.iter().enumerate().all(|(k, &o)| k == o) {
        return Ok(t.clone());
    }
    let rank = t.rank();
    let new_shape: Vec<usize> = order.iter().map(|&o| t.shape[o]).collect();
    // Input strides, gathered in output order.
    let mut in_strides = vec![1usize; rank];
    for k in (0..rank.saturating_sub(1)).rev() {
        in_strides[k] = in_strides[k + 1] * t.shape[k + 1];
    }
    let strides: Vec<usize> = order.iter().map(|&o| in_strides[o]).collect();
    let mut data = Vec::with_capacity(t.data.len());
    let mut idx = vec![0usize; rank];
    let mut src = 0usize;
    for _ in 0..t.data.len() {
        data.push(t.data[src]);
        for k in (0..rank).rev() {
            idx[k] += 1;
            src += strides[k];
            if idx[k] < new_shape[k] {
                break;
            }
            src -= strides[k] * idx[k];
            idx[k] = 0;
        }
    }
    Ok(DenseTensor { shape: new_shape, data })
}

pub fn inverse_permutation(order: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; order.len()];
    for (k, &o) in order.iter().enumerate() {
        inv[o] = k;
    }
    inv
}

/// Row-major matrix product `a (m×k) · b (k×n)`.
pub(crate) fn matmul(a: &[C64], b: &[C64], m: usize, k: usize, n: usize) -> Vec<C64> {
    let mut c = vec![C64::zero(); m * n];
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == C64::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cv, bv) in crow.iter_mut().zip(brow) {
                *cv += aip * bv;
            }
        }
    }
    c
}

/// Contract `a` and `b` over the index pairs `(index of a, index of b)`.
///
/// The result carries the unpaired indices of `a` followed by the unpaired
/// indices of `b`, each in their original order.
pub fn contract(a: &DenseTensor, b: &DenseTensor, pairs: &[(usize, usize)]) -> TtnResult<DenseTensor> {
    let mut used_a = vec![false; a.rank()];
    let mut used_b = vec![false; b.rank()];
    for &(ia, ib) in pairs {
        if ia >= a.rank() || ib >= b.rank() || used_a[ia] || used_b[ib] {
            return Err(TtnError::InvalidArgument(format!("bad contraction pairs {pairs:?}")));
        }
        if a.shape[ia] != b.shape[ib] {
            return Err(TtnError::ShapeMismatch(format!(
                "index {ia} of a has extent {}, index {ib} of b has extent {}",
                a.shape[ia], b.shape[ib]
            )));
        }
        used_a[ia] = true;
        used_b[ib] = true;
    }
    let free_a: Vec<usize> = (0..a.rank()).filter(|&i| !used_a[i]).collect();
    let free_b: Vec<usize> = (0..b.rank()).filter(|&i| !used_b[i]).collect();
    let order_a: Vec<usize> = free_a.iter().copied().chain(pairs.iter().map(|p| p.0)).collect();
    let order_b: Vec<usize> = pairs.iter().map(|p| p.1).chain(free_b.iter().copied()).collect();
    let pa = permute(a, &order_a)?;
    let pb = permute(b, &order_b)?;
    let m: usize = free_a.iter().map(|&i| a.shape[i]).product();
    let k: usize = pairs.iter().map(|p| a.shape[p.0]).product();
    let n: usize = free_b.iter().map(|&i| b.shape[i]).product();
    let data = matmul(&pa.data, &pb.data, m, k, n);
    let shape: Vec<usize> =
        free_a.iter().map(|&i| a.shape[i]).chain(free_b.iter().map(|&i| b.shape[i])).collect();
    Ok(DenseTensor { shape, data })
}

/// Truncation policy applied to singular value spectra.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Truncation {
    /// Hard cap on the number of kept singular values.
    pub max_rank: Option<usize>,
    /// Drop `s` when `s² / Σs² < cutoff`.
    pub cutoff: f64,
}

impl Truncation {
    pub const NONE: Truncation = Truncation { max_rank: None, cutoff: 0.0 };

    pub fn new(max_rank: Option<usize>, cutoff: f64) -> Self {
        Self { max_rank, cutoff }
    }

    /// Number of leading values of a sorted spectrum to keep (always ≥ 1).
    pub fn kept(&self, singular_values: &[f64]) -> usize {
        let total: f64 = singular_values.iter().map(|s| s * s).sum();
        let mut keep = singular_values.len();
        if let Some(cap) = self.max_rank {
            keep = keep.min(cap.max(1));
        }
        if total > 0.0 {
            while keep > 1 && singular_values[keep - 1].powi(2) / total < self.cutoff {
                keep -= 1;
            }
        }
        keep.max(1)
    }

    /// Same policy with the cutoff raised to at least `floor`.
    pub fn with_floor(self, floor: f64) -> Self {
        Self { max_rank: self.max_rank, cutoff: self.cutoff.max(floor) }
    }
}

impl Default for Truncation {
    fn default() -> Self {
        Self::NONE
    }
}

#[derive(Clone, Debug)]
pub struct SvdResult {
    /// Shape: left indices followed by the new bond.
    pub left: DenseTensor,
    pub singular_values: Vec<f64>,
    /// Shape: new bond followed by the right indices.
    pub right: DenseTensor,
    pub discarded_weight: f64,
}

/// Thin SVD of a matrix with sorted (non-increasing) singular values.
///
/// One-sided Jacobi on the columns: nalgebra's bidiagonal complex SVD
/// returns wrong factors on some degenerate inputs.
pub fn svd_matrix(m: DMatrix<C64>) -> TtnResult<(DMatrix<C64>, Vec<f64>, DMatrix<C64>)> {
    if m.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(TtnError::NonFinite("svd input".into()));
    }
    if m.nrows() < m.ncols() {
        let (u, s, vt) = svd_matrix(m.adjoint())?;
        return Ok((vt.adjoint(), s, u.adjoint()));
    }
    let (rows, cols) = m.shape();
    let mut a = m;
    let mut v = DMatrix::<C64>::identity(cols, cols);
    // Relative orthogonality target, and an absolute floor below which
    // overlaps are pure rounding noise.
    let tol = rows as f64 * f64::EPSILON;
    let floor = f64::EPSILON * f64::EPSILON * a.norm_squared();
    let mut converged = cols < 2;
    for _ in 0..JACOBI_MAX_SWEEPS {
        if converged {
            break;
        }
        converged = true;
        for p in 0..cols {
            for q in p + 1..cols {
                let alpha = a.column(p).norm_squared();
                let beta = a.column(q).norm_squared();
                let gamma = a.column(p).dotc(&a.column(q));
                let g = gamma.norm();
                if g <= tol * (alpha * beta).sqrt() || g <= floor {
                    continue;
                }
                converged = false;
                // Phase column q so the overlap is real, then rotate.
                let phase = gamma / g;
                let zeta = (beta - alpha) / (2.0 * g);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let sn = c * t;
                rotate(&mut a, p, q, phase, c, sn);
                rotate(&mut v, p, q, phase, c, sn);
            }
        }
    }
    if !converged {
        return Err(TtnError::Numerical("Jacobi SVD did not converge".into()));
    }
    let mut sv: Vec<(f64, usize)> = (0..cols).map(|j| (a.column(j).norm(), j)).collect();
    sv.sort_by(|x, y| y.0.total_cmp(&x.0));
    let scale = sv.first().map_or(0.0, |x| x.0);
    let mut u = DMatrix::<C64>::zeros(rows, cols);
    let mut vt = DMatrix::<C64>::zeros(cols, cols);
    let mut values = Vec::with_capacity(cols);
    for (k, &(sigma, j)) in sv.iter().enumerate() {
        values.push(sigma);
        for c in 0..cols {
            vt[(k, c)] = v[(c, j)].conj();
        }
        if sigma > f64::EPSILON * scale && sigma > 0.0 {
            u.set_column(k, &(a.column(j) / C64::new(sigma, 0.0)));
        } else {
            complete_column(&mut u, k);
        }
    }
    Ok((u, values, vt))
}

/// `(x_p, x_q) ← (c x_p − s x̃_q, s x_p + c x̃_q)` with `x̃_q = conj(phase) x_q`.
fn rotate(x: &mut DMatrix<C64>, p: usize, q: usize, phase: C64, c: f64, s: f64) {
    let ph = phase.conj();
    for r in 0..x.nrows() {
        let xp = x[(r, p)];
        let xq = x[(r, q)] * ph;
        x[(r, p)] = xp * c - xq * s;
        x[(r, q)] = xp * s + xq * c;
    }
}

/// Fill column `k` with a unit vector orthogonal to columns `0..k`.
fn complete_column(u: &mut DMatrix<C64>, k: usize) {
    let rows = u.nrows();
    let mut best: Option<(f64, nalgebra::DVector<C64>)> = None;
    for e in 0..rows {
        let mut x = nalgebra::DVector::<C64>::zeros(rows);
        x[e] = C64::new(1.0, 0.0);
        for _ in 0..2 {
            for j in 0..k {
                let proj = u.column(j).dotc(&x);
                x -= u.column(j) * proj;
            }
        }
        let n = x.norm();
        if best.as_ref().is_none_or(|b| n > b.0) {
            best = Some((n, x));
        }
        if n > 0.5 {
            break;
        }
    }
    if let Some((n, x)) = best {
        u.set_column(k, &(x / C64::new(n, 0.0)));
    }
}

/// Split `t` into `left · diag(s) · right` with `left_indices` on the left.
///
/// The remaining indices, in their original order, form the right group.
pub fn svd_split(t: &DenseTensor, left_indices: &[usize], trunc: Truncation) -> TtnResult<SvdResult> {
    if left_indices.is_empty() || left_indices.len() >= t.rank() {
        return Err(TtnError::InvalidArgument(format!(
            "left indices {left_indices:?} must be a nonempty proper subset of {} indices",
            t.rank()
        )));
    }
    let mut in_left = vec![false; t.rank()];
    for &i in left_indices {
        if i >= t.rank() || in_left[i] {
            return Err(TtnError::InvalidArgument(format!("bad left indices {left_indices:?}")));
        }
        in_left[i] = true;
    }
    let right_indices: Vec<usize> = (0..t.rank()).filter(|&i| !in_left[i]).collect();
    let order: Vec<usize> = left_indices.iter().chain(&right_indices).copied().collect();
    let p = permute(t, &order)?;
    let left_shape: Vec<usize> = left_indices.iter().map(|&i| t.shape[i]).collect();
    let right_shape: Vec<usize> = right_indices.iter().map(|&i| t.shape[i]).collect();
    let (u, s, vt) = svd_matrix(p.to_matrix(left_indices.len()))?;
    let keep = trunc.kept(&s);
    let discarded_weight = s[keep..].iter().map(|x| x * x).sum();
    let u = u.columns(0, keep).into_owned();
    let vt = vt.rows(0, keep).into_owned();
    let mut ls = left_shape;
    ls.push(keep);
    let mut rs = vec![keep];
    rs.extend(right_shape);
    Ok(SvdResult {
        left: DenseTensor::from_matrix(&u, ls)?,
        singular_values: s[..keep].to_vec(),
        right: DenseTensor::from_matrix(&vt, rs)?,
        discarded_weight,
    })
}

/// Eigendecomposition of a Hermitian matrix, eigenvalues non-increasing.
///
/// Input within `1e-10·‖m‖` of Hermitian is symmetrized first.
pub fn eigh(m: &DMatrix<C64>) -> TtnResult<(Vec<f64>, DMatrix<C64>)> {
    if !m.is_square() {
        return Err(TtnError::ShapeMismatch(format!("eigh of {}×{} matrix", m.nrows(), m.ncols())));
    }
    if m.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(TtnError::NonFinite("eigh input".into()));
    }
    let adj = m.adjoint();
    let scale = m.norm();
    let deviation = (m - &adj).norm();
    if deviation > HERMITIAN_TOL * scale.max(f64::MIN_POSITIVE) && deviation > 0.0 {
        return Err(TtnError::NotHermitian { deviation });
    }
    let sym = (m + adj).scale(0.5);
    let n = sym.nrows();
    let eig = SymmetricEigen::try_new(sym, 1e-15, 0)
        .ok_or_else(|| TtnError::Numerical("eigendecomposition did not converge".into()))?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    Ok((values, vectors))
}
