//! Exact dense reference implementation.
//!
//! Everything here works on [`Statevector`] amplitudes by direct index
//! arithmetic and dense linear algebra, independently of the tensor
//! network code paths.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64 as C64;
use num_traits::Zero;

use crate::error::{TtnError, TtnResult};
use crate::gates::GateOp;
use crate::hamiltonian::HamiltonianSpec;
use crate::observables::DensityMatrix;
use crate::state::{dense_budget, Statevector};

/// Largest Hilbert-space dimension for which dense Hamiltonians are built.
pub const DENSE_MATRIX_LIMIT: usize = 1 << 12;

fn digits(mut index: usize, n: usize, d: usize) -> Vec<usize> {
    let mut out = vec![0; n];
    for k in (0..n).rev() {
        out[k] = index % d;
        index /= d;
    }
    out
}

fn index_of(digits: &[usize], d: usize) -> usize {
    digits.iter().fold(0, |acc, &x| acc * d + x)
}

fn check_targets(n: usize, targets: &[usize]) -> TtnResult<()> {
    for (k, &q) in targets.iter().enumerate() {
        if q >= n {
            return Err(TtnError::UnknownQudit(q));
        }
        if targets[..k].contains(&q) {
            return Err(TtnError::InvalidArgument(format!("repeated target {q}")));
        }
    }
    Ok(())
}

/// Apply a dense operator on `targets` (first target most significant in
/// the operator's index).
pub fn sv_apply_matrix(v: &Statevector, m: &DMatrix<C64>, targets: &[usize]) -> TtnResult<Statevector> {
    check_targets(v.n, targets)?;
    let dim = v.d.pow(targets.len() as u32);
    if m.nrows() != dim || m.ncols() != dim {
        return Err(TtnError::ShapeMismatch(format!("operator is {}×{}, expected {dim}", m.nrows(), m.ncols())));
    }
    let mut out = vec![C64::zero(); v.amplitudes.len()];
    for (idx, amp) in v.amplitudes.iter().enumerate() {
        if *amp == C64::zero() {
            continue;
        }
        let mut dg = digits(idx, v.n, v.d);
        let col = index_of(&targets.iter().map(|&q| dg[q]).collect::<Vec<_>>(), v.d);
        for row in 0..dim {
            let coef = m[(row, col)];
            if coef == C64::zero() {
                continue;
            }
            let sub = digits(row, targets.len(), v.d);
            for (k, &q) in targets.iter().enumerate() {
                dg[q] = sub[k];
            }
            out[index_of(&dg, v.d)] += coef * amp;
        }
    }
    Ok(Statevector { n: v.n, d: v.d, amplitudes: out })
}

pub fn sv_apply_gate(v: &Statevector, g: &GateOp) -> TtnResult<Statevector> {
    if g.local_dim() != v.d {
        return Err(TtnError::ShapeMismatch("gate and state local dimensions differ".into()));
    }
    sv_apply_matrix(v, g.matrix(), g.targets())
}

/// Relabel qudits: new qudit `k` is old qudit `perm[k]`.
pub fn sv_permute(v: &Statevector, perm: &[usize]) -> TtnResult<Statevector> {
    if perm.len() != v.n {
        return Err(TtnError::InvalidPermutation(perm.to_vec()));
    }
    check_targets(v.n, perm)?;
    let mut out = vec![C64::zero(); v.amplitudes.len()];
    for (idx, amp) in v.amplitudes.iter().enumerate() {
        let old = digits(idx, v.n, v.d);
        let new: Vec<usize> = perm.iter().map(|&p| old[p]).collect();
        out[index_of(&new, v.d)] = *amp;
    }
    Ok(Statevector { n: v.n, d: v.d, amplitudes: out })
}

/// Reduced density matrix on one or two qudits, in the given order.
pub fn sv_partial_trace(v: &Statevector, keep: &[usize]) -> TtnResult<DensityMatrix> {
    if keep.is_empty() || keep.len() > 2 {
        return Err(TtnError::InvalidArgument("partial trace keeps one or two qudits".into()));
    }
    check_targets(v.n, keep)?;
    let dim = v.d.pow(keep.len() as u32);
    let rest: Vec<usize> = (0..v.n).filter(|q| !keep.contains(q)).collect();
    let env = v.d.pow(rest.len() as u32);
    let mut rho = DMatrix::<C64>::zeros(dim, dim);
    let mut full = vec![0usize; v.n];
    for e in 0..env {
        let ed = digits(e, rest.len(), v.d);
        for (k, &q) in rest.iter().enumerate() {
            full[q] = ed[k];
        }
        let amps: Vec<C64> = (0..dim)
            .map(|a| {
                let ad = digits(a, keep.len(), v.d);
                for (k, &q) in keep.iter().enumerate() {
                    full[q] = ad[k];
                }
                v.amplitudes[index_of(&full, v.d)]
            })
            .collect();
        for a in 0..dim {
            for b in 0..dim {
                rho[(a, b)] += amps[a] * amps[b].conj();
            }
        }
    }
    Ok(DensityMatrix { qudits: keep.to_vec(), d: v.d, matrix: rho })
}

/// Amplitude matrix with rows indexed by `side_a` (ascending) and columns
/// by the complement.
fn bipartition_matrix(v: &Statevector, side_a: &[usize]) -> TtnResult<DMatrix<C64>> {
    check_targets(v.n, side_a)?;
    if side_a.is_empty() || side_a.len() >= v.n {
        return Err(TtnError::InvalidArgument("bipartition side must be a proper nonempty subset".into()));
    }
    let mut a: Vec<usize> = side_a.to_vec();
    a.sort_unstable();
    let b: Vec<usize> = (0..v.n).filter(|q| !a.contains(q)).collect();
    let rows = v.d.pow(a.len() as u32);
    let cols = v.d.pow(b.len() as u32);
    let mut m = DMatrix::<C64>::zeros(rows, cols);
    for (idx, amp) in v.amplitudes.iter().enumerate() {
        let dg = digits(idx, v.n, v.d);
        let r = index_of(&a.iter().map(|&q| dg[q]).collect::<Vec<_>>(), v.d);
        let c = index_of(&b.iter().map(|&q| dg[q]).collect::<Vec<_>>(), v.d);
        m[(r, c)] = *amp;
    }
    Ok(m)
}

/// Square core of `M`: `M = Q R` (tall) or `M = R Q†` (wide) with `Q`
/// isometric, so `R` carries the singular values and best approximations
/// of `M` map back through `Q`.
struct Core {
    r: DMatrix<C64>,
    q: DMatrix<C64>,
    tall: bool,
}

impl Core {
    fn new(m: &DMatrix<C64>) -> Self {
        let tall = m.nrows() >= m.ncols();
        let qr = if tall { m.clone().qr() } else { m.adjoint().qr() };
        let (q, r) = qr.unpack();
        if tall {
            Core { r, q, tall }
        } else {
            Core { r: r.adjoint(), q, tall }
        }
    }

    fn lift(&self, x: DMatrix<C64>) -> DMatrix<C64> {
        if self.tall {
            &self.q * x
        } else {
            x * self.q.adjoint()
        }
    }
}

/// Eigen-decomposition of the Hermitian form `[[0, M], [M†, 0]]`, whose
/// eigenvalues are `±σ` with eigenvectors `(u; ±v)/√2`. Used because the
/// bidiagonal SVD path is unreliable on degenerate spectra.
fn jordan_wielandt(m: &DMatrix<C64>) -> (Vec<(f64, usize)>, DMatrix<C64>) {
    let (r, c) = m.shape();
    let mut h = DMatrix::<C64>::zeros(r + c, r + c);
    h.view_mut((0, r), (r, c)).copy_from(m);
    h.view_mut((r, 0), (c, r)).copy_from(&m.adjoint());
    let eig = SymmetricEigen::new(h);
    let mut order: Vec<(f64, usize)> = eig.eigenvalues.iter().copied().enumerate().map(|(i, x)| (x, i)).collect();
    order.sort_by(|a, b| b.0.total_cmp(&a.0));
    order.truncate(r.min(c));
    (order, eig.eigenvectors)
}

fn sorted_singular_values(m: DMatrix<C64>) -> Vec<f64> {
    jordan_wielandt(&Core::new(&m).r).0.into_iter().map(|(x, _)| x.max(0.0)).collect()
}

/// Relative size below which a Schmidt coefficient counts as zero.
pub const SCHMIDT_ZERO: f64 = 1e-14;

/// Nonzero Schmidt coefficients across `side_a | rest`, non-increasing.
pub fn sv_schmidt(v: &Statevector, side_a: &[usize]) -> TtnResult<Vec<f64>> {
    let s = sorted_singular_values(bipartition_matrix(v, side_a)?);
    let norm = s.iter().map(|x| x * x).sum::<f64>().sqrt();
    Ok(s.into_iter().filter(|&x| x > SCHMIDT_ZERO * norm).collect())
}

pub fn sv_schmidt_rank(v: &Statevector, side_a: &[usize]) -> TtnResult<usize> {
    Ok(sv_schmidt(v, side_a)?.len())
}

/// Fidelity `|⟨v|w⟩|` between `v` and its normalized best approximation
/// of Schmidt rank `k` across `side_a`.
pub fn sv_best_rank_fidelity(v: &Statevector, side_a: &[usize], k: usize) -> TtnResult<f64> {
    let m = bipartition_matrix(v, side_a)?;
    let core = Core::new(&m);
    let (r, c) = core.r.shape();
    let (order, vecs) = jordan_wielandt(&core.r);
    let mut approx = DMatrix::<C64>::zeros(r, c);
    for &(sigma, i) in order.iter().take(k) {
        let x = vecs.column(i);
        // x = (u; v)/√2, so σ u v† = 2σ x_u x_v†.
        approx += x.rows(0, r) * x.rows(r, c).adjoint() * C64::from(2.0 * sigma.max(0.0));
    }
    let approx = core.lift(approx);
    let norm = approx.norm();
    if norm == 0.0 {
        return Ok(0.0);
    }
    let overlap: C64 = m.iter().zip(approx.iter()).map(|(a, b)| a.conj() * b).sum();
    Ok(overlap.norm() / norm)
}

/// `⟨v|O|v⟩` for an operator on `targets`.
pub fn sv_expectation(v: &Statevector, m: &DMatrix<C64>, targets: &[usize]) -> TtnResult<C64> {
    let w = sv_apply_matrix(v, m, targets)?;
    Ok(v.inner(&w))
}

fn check_dense(h: &HamiltonianSpec) -> TtnResult<usize> {
    let limit = dense_budget().min(DENSE_MATRIX_LIMIT);
    let dim = (h.d as u128).pow(h.n as u32);
    if dim > limit as u128 {
        return Err(TtnError::BudgetExceeded { required: dim.min(usize::MAX as u128) as usize, budget: limit });
    }
    Ok(dim as usize)
}

/// Dense matrix of `H` in the big-endian computational basis.
pub fn dense_hamiltonian(h: &HamiltonianSpec) -> TtnResult<DMatrix<C64>> {
    let dim = check_dense(h)?;
    let mut out = DMatrix::<C64>::zeros(dim, dim);
    for col in 0..dim {
        let mut basis = vec![C64::zero(); dim];
        basis[col] = C64::new(1.0, 0.0);
        let e = Statevector { n: h.n, d: h.d, amplitudes: basis };
        for t in &h.terms {
            let w = sv_apply_matrix(&e, &t.matrix, &t.sites)?;
            for (row, z) in w.amplitudes.iter().enumerate() {
                out[(row, col)] += z;
            }
        }
    }
    Ok(out)
}

fn spectrum(h: &HamiltonianSpec) -> TtnResult<(Vec<f64>, DMatrix<C64>)> {
    let m = dense_hamiltonian(h)?;
    let eig = SymmetricEigen::new(m);
    Ok((eig.eigenvalues.iter().copied().collect(), eig.eigenvectors))
}

/// `⟨v|H|v⟩` from the dense matrix.
pub fn sv_energy(v: &Statevector, h: &HamiltonianSpec) -> TtnResult<f64> {
    let m = dense_hamiltonian(h)?;
    let psi = nalgebra::DVector::from_column_slice(&v.amplitudes);
    Ok((psi.adjoint() * &m * &psi)[(0, 0)].re)
}

/// `exp(−iHt)|v⟩`, or `exp(−Ht)|v⟩` renormalized when `imaginary`.
pub fn sv_evolve_exact(v: &Statevector, h: &HamiltonianSpec, t: f64, imaginary: bool) -> TtnResult<Statevector> {
    if v.n != h.n || v.d != h.d {
        return Err(TtnError::ShapeMismatch("state and Hamiltonian sizes differ".into()));
    }
    let (vals, vecs) = spectrum(h)?;
    let psi = nalgebra::DVector::from_column_slice(&v.amplitudes);
    let mut coeffs = vecs.adjoint() * psi;
    let e0 = vals.iter().copied().fold(f64::INFINITY, f64::min);
    for (k, c) in coeffs.iter_mut().enumerate() {
        *c *= if imaginary {
            C64::new((-(vals[k] - e0) * t).exp(), 0.0)
        } else {
            C64::from_polar(1.0, -vals[k] * t)
        };
    }
    let out = vecs * coeffs;
    let mut w = Statevector { n: v.n, d: v.d, amplitudes: out.iter().copied().collect() };
    if imaginary {
        w.normalize()?;
    }
    Ok(w)
}

/// Lowest eigenpair of the dense Hamiltonian.
pub fn sv_ground_state(h: &HamiltonianSpec) -> TtnResult<(f64, Statevector)> {
    let (vals, vecs) = spectrum(h)?;
    let (k, e) = vals
        .iter()
        .copied()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .ok_or_else(|| TtnError::InvalidArgument("empty Hamiltonian space".into()))?;
    let amplitudes = vecs.column(k).iter().copied().collect();
    Ok((e, Statevector { n: h.n, d: h.d, amplitudes }))
}

/// Born probability and normalized post-measurement state for each Kraus
/// operator on qudit `q` (`None` when the probability vanishes).
pub fn sv_measure(v: &Statevector, q: usize, ops: &[DMatrix<C64>]) -> TtnResult<Vec<(f64, Option<Statevector>)>> {
    ops.iter()
        .map(|e| {
            let w = sv_apply_matrix(v, e, &[q])?;
            let p = w.norm().powi(2);
            if p > 1e-300 {
                let mut w = w;
                w.normalize()?;
                Ok((p, Some(w)))
            } else {
                Ok((p, None))
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gates::{named_matrix, random_unitary};
    use crate::hamiltonian::{hamiltonian_library, ModelParams, Term};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::FRAC_1_SQRT_2;

    fn c(re: f64) -> C64 {
        C64::new(re, 0.0)
    }

    fn plus(n: usize) -> Statevector {
        Statevector::product(&vec![vec![c(FRAC_1_SQRT_2), c(FRAC_1_SQRT_2)]; n]).unwrap()
    }

    #[test]
    fn x_flips_zero() {
        let v = Statevector::basis(1, 2, &[0]).unwrap();
        let w = sv_apply_matrix(&v, &named_matrix("X").unwrap(), &[0]).unwrap();
        assert_eq!(w.amplitudes, vec![c(0.), c(1.)]);
    }

    #[test]
    fn cz_on_plus_pair() {
        let w = sv_apply_matrix(&plus(2), &named_matrix("CZ").unwrap(), &[0, 1]).unwrap();
        let want = [0.5, 0.5, 0.5, -0.5];
        for (a, b) in w.amplitudes.iter().zip(want) {
            assert!((a - c(b)).norm() < 1e-15);
        }
    }

    #[test]
    fn random_unitary_preserves_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let v = Statevector::random(5, 2, &mut rng).unwrap();
        let u = random_unitary(4, &mut rng);
        let w = sv_apply_matrix(&v, &u, &[3, 1]).unwrap();
        assert!((w.norm() - 1.0).abs() < 1e-13);
    }

    #[test]
    fn partial_traces() {
        let v = Statevector::basis(3, 2, &[1, 0, 1]).unwrap();
        let rho = sv_partial_trace(&v, &[2, 1]).unwrap();
        assert_eq!(rho.matrix[(2, 2)], c(1.0));
        let mut amps = vec![C64::zero(); 16];
        amps[0] = c(FRAC_1_SQRT_2);
        amps[15] = c(FRAC_1_SQRT_2);
        let ghz = Statevector::new(4, 2, amps).unwrap();
        let r1 = sv_partial_trace(&ghz, &[2]).unwrap();
        assert!((r1.matrix.clone() - DMatrix::identity(2, 2) * c(0.5)).norm() < 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let r = Statevector::random(6, 2, &mut rng).unwrap();
        let t = sv_partial_trace(&r, &[0, 4]).unwrap().matrix.trace();
        assert!((t - c(1.0)).norm() < 1e-13);
        assert!(sv_partial_trace(&r, &[0, 1, 2]).is_err());
    }

    #[test]
    fn schmidt_of_product_and_ghz() {
        assert_eq!(sv_schmidt(&plus(4), &[0, 1]).unwrap().len(), 1);
        let mut amps = vec![C64::zero(); 16];
        amps[0] = c(FRAC_1_SQRT_2);
        amps[15] = c(FRAC_1_SQRT_2);
        let ghz = Statevector::new(4, 2, amps).unwrap();
        let s = sv_schmidt(&ghz, &[1, 3]).unwrap();
        assert_eq!(s.len(), 2);
        assert!(s.iter().all(|x| (x - FRAC_1_SQRT_2).abs() < 1e-14));
        assert!(sv_schmidt(&ghz, &[]).is_err());
    }

    #[test]
    fn best_rank_fidelity_matches_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let v = Statevector::random(6, 2, &mut rng).unwrap();
        let s = sv_schmidt(&v, &[0, 2, 5]).unwrap();
        let f = sv_best_rank_fidelity(&v, &[0, 2, 5], 2).unwrap();
        assert!((f - (s[0] * s[0] + s[1] * s[1]).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn evolution_basics() {
        let zero = HamiltonianSpec::zero(3, 2);
        let v = plus(3);
        let w = sv_evolve_exact(&v, &zero, 2.0, false).unwrap();
        assert!((w.fidelity(&v) - 1.0).abs() < 1e-14);
        let hz = HamiltonianSpec::new("z", 1, 2, vec![Term { sites: vec![0], matrix: named_matrix("Z").unwrap() }])
            .unwrap();
        let w = sv_evolve_exact(&plus(1), &hz, std::f64::consts::FRAC_PI_2, false).unwrap();
        let minus = Statevector::new(1, 2, vec![c(FRAC_1_SQRT_2), c(-FRAC_1_SQRT_2)]).unwrap();
        assert!((w.fidelity(&minus) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn imaginary_time_reaches_ground_state() {
        let h = hamiltonian_library("tfim-chain", 6, ModelParams::default()).unwrap();
        let (_, g) = sv_ground_state(&h).unwrap();
        let w = sv_evolve_exact(&plus(6), &h, 60.0, true).unwrap();
        assert!(w.fidelity(&g) > 1.0 - 1e-10);
    }

    #[test]
    fn ground_energies() {
        let terms = (0..4).map(|i| Term { sites: vec![i], matrix: named_matrix("Z").unwrap() }).collect();
        let h = HamiltonianSpec::new("z", 4, 2, terms).unwrap();
        assert!((sv_ground_state(&h).unwrap().0 + 4.0).abs() < 1e-12);
        let zz = HamiltonianSpec::new("zz", 3, 2, vec![Term { sites: vec![0, 1], matrix: named_matrix("ZZ").unwrap() }])
            .unwrap();
        let (e, g) = sv_ground_state(&zz).unwrap();
        assert!((e + 1.0).abs() < 1e-12);
        assert!((sv_energy(&g, &zz).unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn evolution_composes() {
        let h = hamiltonian_library("heisenberg-chain", 5, ModelParams::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let v = Statevector::random(5, 2, &mut rng).unwrap();
        let a = sv_evolve_exact(&sv_evolve_exact(&v, &h, 0.3, false).unwrap(), &h, 0.4, false).unwrap();
        let b = sv_evolve_exact(&v, &h, 0.7, false).unwrap();
        let diff: f64 = a.amplitudes.iter().zip(&b.amplitudes).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max);
        assert!(diff < 1e-12);
    }

    #[test]
    fn spectra_are_real() {
        let h = hamiltonian_library("long-range-ising", 5, ModelParams::default()).unwrap();
        let m = dense_hamiltonian(&h).unwrap();
        assert!((&m - m.adjoint()).norm() < 1e-12);
    }

    #[test]
    fn dense_budget_is_enforced() {
        let h = hamiltonian_library("tfim-chain", 14, ModelParams::default()).unwrap();
        assert!(matches!(dense_hamiltonian(&h), Err(TtnError::BudgetExceeded { .. })));
    }

    #[test]
    fn measurement_probabilities_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let v = Statevector::random(4, 2, &mut rng).unwrap();
        let p0 = DMatrix::from_row_slice(2, 2, &[c(1.), c(0.), c(0.), c(0.)]);
        let p1 = DMatrix::from_row_slice(2, 2, &[c(0.), c(0.), c(0.), c(1.)]);
        let out = sv_measure(&v, 2, &[p0, p1]).unwrap();
        assert!((out[0].0 + out[1].0 - 1.0).abs() < 1e-13);
    }
}
