//! Reduced density matrices, expectation values, energies and fidelities
//! of canonical states.

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use num_traits::Zero;

use crate::canonical::{local_gram, Env};
use crate::error::{TtnError, TtnResult};
use crate::hamiltonian::HamiltonianSpec;
use crate::state::{Statevector, TtnState};
use crate::tensor::{contract, eigh, permute, DenseTensor};
use crate::topology::Endpoint;

const HERMITIAN_TOL: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrix {
    /// Target qudits; the first is the most significant matrix index.
    pub qudits: Vec<usize>,
    pub d: usize,
    pub matrix: DMatrix<C64>,
}

/// Deviations of a density matrix from its invariants.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DensityCheck {
    pub hermitian: f64,
    pub trace: f64,
    pub min_eigenvalue: f64,
}

impl DensityCheck {
    pub fn passes(&self, tol: f64) -> bool {
        self.hermitian <= tol && self.trace <= tol && self.min_eigenvalue >= -1e-9
    }
}

impl DensityMatrix {
    pub fn trace(&self) -> C64 {
        self.matrix.trace()
    }

    pub fn check(&self) -> TtnResult<DensityCheck> {
        let hermitian = (&self.matrix - self.matrix.adjoint()).norm();
        let trace = (self.trace() - C64::new(1.0, 0.0)).norm();
        let sym = (&self.matrix + self.matrix.adjoint()) * C64::new(0.5, 0.0);
        let (vals, _) = eigh(&sym)?;
        Ok(DensityCheck { hermitian, trace, min_eigenvalue: vals.last().copied().unwrap_or(0.0) })
    }

    /// Trace out the second qudit of a two-qudit matrix.
    pub fn marginal_first(&self) -> TtnResult<DensityMatrix> {
        if self.qudits.len() != 2 {
            return Err(TtnError::InvalidArgument("marginal of a one-qudit matrix".into()));
        }
        let d = self.d;
        let m = DMatrix::from_fn(d, d, |a, b| (0..d).map(|k| self.matrix[(a * d + k, b * d + k)]).sum());
        Ok(DensityMatrix { qudits: vec![self.qudits[0]], d, matrix: m })
    }

    pub fn max_abs_diff(&self, other: &DensityMatrix) -> f64 {
        (&self.matrix - &other.matrix).iter().map(|z| z.norm()).fold(0.0, f64::max)
    }
}

fn require_canonical(s: &TtnState) -> TtnResult<()> {
    if s.canonical {
        Ok(())
    } else {
        Err(TtnError::NotCanonical)
    }
}

fn weights_or_ones(s: &TtnState, e: usize) -> Vec<f64> {
    if s.topology.is_internal(e) {
        s.weights[e].clone()
    } else {
        vec![1.0; s.d]
    }
}

/// Single-qudit reduced density matrix.
pub fn rdm1(s: &TtnState, q: usize) -> TtnResult<DensityMatrix> {
    require_canonical(s)?;
    s.topology.check_qudit(q)?;
    let v = s.topology.leaf_vertex(q);
    let open = s.topology.slot_of(v, s.topology.leaf_edge(q)).expect("leaf slot");
    let envs: Vec<Env> = (0..3)
        .filter(|&k| k != open)
        .map(|k| {
            let e = s.topology.incidence(v)[k];
            if s.topology.is_internal(e) {
                Env::Diagonal(s.weights[e].iter().map(|x| x * x).collect())
            } else {
                Env::Identity
            }
        })
        .collect();
    // The local Gram is ρ transposed.
    let g = local_gram(&s.tensors[v], open, [&envs[0], &envs[1]])?;
    Ok(DensityMatrix { qudits: vec![q], d: s.d, matrix: g.transpose() })
}

/// Vertex tensor permuted to `[first, second, third]` slot order with the
/// given edges' weights absorbed.
fn oriented(s: &TtnState, v: usize, edges: [usize; 3], scaled: &[usize]) -> TtnResult<DenseTensor> {
    let order: Vec<usize> = edges.iter().map(|&e| s.topology.slot_of(v, e).expect("incident edge")).collect();
    let mut t = permute(&s.tensors[v], &order)?;
    for &k in scaled {
        t.scale_axis(k, &weights_or_ones(s, edges[k]));
    }
    Ok(t)
}

fn third_edge(s: &TtnState, v: usize, a: usize, b: usize) -> usize {
    s.topology.incidence(v).into_iter().find(|&e| e != a && e != b).expect("degree 3")
}

/// Two-qudit reduced density matrix, contracted column by column along the
/// path from `q1`'s vertex to `q2`'s.
pub fn rdm2(s: &TtnState, q1: usize, q2: usize) -> TtnResult<DensityMatrix> {
    require_canonical(s)?;
    let path = s.topology.path_between(q1, q2)?;
    let (l1, l2) = (s.topology.leaf_edge(q1), s.topology.leaf_edge(q2));
    let d = s.d;
    let m = path.len();
    let arranged = if m == 1 {
        let v = path[0];
        let side = third_edge(s, v, l1, l2);
        let w = oriented(s, v, [l1, l2, side], &[2])?;
        // [i1, i2, i1', i2']
        contract(&w, &w.conj(), &[(2, 2)])?
    } else {
        let v1 = path[0];
        let p = s.topology.edge_between(v1, path[1]).expect("path edge");
        let side = third_edge(s, v1, l1, p);
        let w = oriented(s, v1, [l1, side, p], &[1, 2])?;
        // [i, p, i', p'] → [i, i', p, p']
        let mut env = permute(&contract(&w, &w.conj(), &[(1, 1)])?, &[0, 2, 1, 3])?;
        for k in 1..m - 1 {
            let v = path[k];
            let back = s.topology.edge_between(v, path[k - 1]).expect("path edge");
            let ahead = s.topology.edge_between(v, path[k + 1]).expect("path edge");
            let side = third_edge(s, v, back, ahead);
            let w = oriented(s, v, [back, side, ahead], &[1, 2])?;
            // [i, i', x', s, p] then contract x', s with conj(W).
            let half = contract(&env, &w, &[(2, 0)])?;
            env = contract(&half, &w.conj(), &[(2, 0), (3, 1)])?;
        }
        let v = path[m - 1];
        let back = s.topology.edge_between(v, path[m - 2]).expect("path edge");
        let side = third_edge(s, v, back, l2);
        let w = oriented(s, v, [back, l2, side], &[2])?;
        let half = contract(&env, &w, &[(2, 0)])?;
        // [i, i', j, j'] → [i, j, i', j']
        permute(&contract(&half, &w.conj(), &[(2, 0), (4, 2)])?, &[0, 2, 1, 3])?
    };
    let matrix = arranged.to_matrix(2);
    debug_assert_eq!(matrix.nrows(), d * d);
    Ok(DensityMatrix { qudits: vec![q1, q2], d, matrix })
}

/// Reduced density matrix on one or two targets.
pub fn rdm(s: &TtnState, targets: &[usize]) -> TtnResult<DensityMatrix> {
    match targets {
        [q] => rdm1(s, *q),
        [q1, q2] => rdm2(s, *q1, *q2),
        _ => Err(TtnError::InvalidArgument(format!("observables act on 1 or 2 qudits, got {}", targets.len()))),
    }
}

/// `tr(O ρ)` for a Hermitian operator on one or two qudits.
pub fn expectation(s: &TtnState, obs: &DMatrix<C64>, targets: &[usize]) -> TtnResult<f64> {
    let deviation = (obs - obs.adjoint()).norm();
    if deviation > HERMITIAN_TOL * obs.norm().max(1.0) {
        return Err(TtnError::NotHermitian { deviation });
    }
    let rho = rdm(s, targets)?;
    if obs.nrows() != rho.matrix.nrows() || obs.ncols() != rho.matrix.ncols() {
        return Err(TtnError::ShapeMismatch(format!(
            "observable is {}×{}, targets need {}",
            obs.nrows(),
            obs.ncols(),
            rho.matrix.nrows()
        )));
    }
    let mut acc = C64::zero();
    for a in 0..obs.nrows() {
        for b in 0..obs.ncols() {
            acc += obs[(a, b)] * rho.matrix[(b, a)];
        }
    }
    Ok(acc.re)
}

/// `⟨Ψ|H|Ψ⟩` as a sum of term expectations.
pub fn energy(s: &TtnState, h: &HamiltonianSpec) -> TtnResult<f64> {
    if h.n != s.num_qudits() || h.d != s.d {
        return Err(TtnError::ShapeMismatch("Hamiltonian does not match the state".into()));
    }
    h.terms.iter().map(|t| expectation(s, &t.matrix, &t.sites)).sum()
}

/// `|⟨v|Ψ⟩|`.
pub fn fidelity(s: &TtnState, v: &Statevector) -> TtnResult<f64> {
    if v.n != s.num_qudits() || v.d != s.d {
        return Err(TtnError::ShapeMismatch("statevector does not match the state".into()));
    }
    Ok(v.fidelity(&s.to_statevector()?))
}

/// Per-site expectation of a one-qudit operator.
pub fn local_profile(s: &TtnState, obs: &DMatrix<C64>) -> TtnResult<Vec<f64>> {
    (0..s.num_qudits()).map(|q| expectation(s, obs, &[q])).collect()
}

/// Qudits hanging on vertex `v`.
pub fn leaves_of(s: &TtnState, v: usize) -> Vec<usize> {
    s.topology
        .incidence(v)
        .iter()
        .filter_map(|&e| match s.topology.across(e, v) {
            Endpoint::Leaf(q) => Some(q),
            Endpoint::Vertex(_) => None,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_traits::One;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::FRAC_1_SQRT_2;

    use crate::canonical::canonicalize;
    use crate::gates::{apply_gate_routed, named_matrix, random_unitary, GateOp};
    use crate::hamiltonian::{hamiltonian_library, ModelParams, Term};
    use crate::oracle;
    use crate::tensor::Truncation;
    use crate::topology::TreeTopology;

    const FIG1: &str = "v1 q1\nv1 q2\nv1 v3\nv2 q3\nv2 q4\nv2 v3\nv3 v4\nv4 q5\nv4 v5\nv5 q6\nv5 q7\n";

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn ghz4() -> Statevector {
        let mut amps = vec![C64::zero(); 16];
        amps[0] = C64::new(FRAC_1_SQRT_2, 0.0);
        amps[15] = amps[0];
        Statevector::new(4, 2, amps).unwrap()
    }

    fn random_canonical(topo: TreeTopology, chi: usize, seed: u64) -> TtnState {
        let mut s = TtnState::random(topo, 2, chi, &mut rng(seed)).unwrap();
        canonicalize(&mut s, 0.0).unwrap();
        s
    }

    fn random_local(r: &mut ChaCha8Rng) -> Vec<C64> {
        let v: Vec<C64> = (0..2).map(|_| C64::new(r.random::<f64>() - 0.5, r.random::<f64>() - 0.5)).collect();
        let n = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        v.into_iter().map(|z| z / n).collect()
    }

    #[test]
    fn product_rdms_are_projectors() {
        let mut r = rng(1);
        let locals: Vec<Vec<C64>> = (0..5).map(|_| random_local(&mut r)).collect();
        let s = TtnState::product_state(TreeTopology::balanced_binary(5).unwrap(), 2, &locals).unwrap();
        for (q, l) in locals.iter().enumerate() {
            let rho = rdm1(&s, q).unwrap();
            let want = DMatrix::from_fn(2, 2, |a, b| l[a] * l[b].conj());
            assert!((rho.matrix - want).norm() < 1e-14);
        }
        let rho = rdm2(&s, 0, 4).unwrap();
        let p0 = DMatrix::from_fn(2, 2, |a, b| locals[0][a] * locals[0][b].conj());
        let p4 = DMatrix::from_fn(2, 2, |a, b| locals[4][a] * locals[4][b].conj());
        assert!((rho.matrix - p0.kronecker(&p4)).norm() < 1e-14);
    }

    #[test]
    fn ghz_marginals() {
        let s = TtnState::from_statevector(&ghz4(), TreeTopology::caterpillar(4).unwrap()).unwrap();
        for q in 0..4 {
            let rho = rdm1(&s, q).unwrap();
            assert!((rho.matrix - DMatrix::identity(2, 2) * C64::new(0.5, 0.0)).norm() < 1e-12);
        }
        for (a, b) in [(0, 1), (0, 3), (1, 2), (3, 0)] {
            let rho = rdm2(&s, a, b).unwrap();
            let mut want = DMatrix::zeros(4, 4);
            want[(0, 0)] = C64::new(0.5, 0.0);
            want[(3, 3)] = C64::new(0.5, 0.0);
            assert!((rho.matrix - want).norm() < 1e-12);
        }
        let zz = named_matrix("ZZ").unwrap();
        assert!((expectation(&s, &zz, &[0, 2]).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn random_rdms_match_oracle_on_branched_tree() {
        let topo = TreeTopology::parse(FIG1).unwrap();
        let s = random_canonical(topo.clone(), 3, 2);
        let v = s.to_statevector().unwrap();
        for q in 0..7 {
            let got = rdm1(&s, q).unwrap();
            let want = oracle::sv_partial_trace(&v, &[q]).unwrap();
            assert!(got.max_abs_diff(&want) < 1e-10);
        }
        let mut lengths = std::collections::BTreeSet::new();
        for q1 in 0..7 {
            for q2 in 0..7 {
                if q1 == q2 {
                    continue;
                }
                lengths.insert(topo.path_between(q1, q2).unwrap().len());
                let got = rdm2(&s, q1, q2).unwrap();
                let want = oracle::sv_partial_trace(&v, &[q1, q2]).unwrap();
                assert!(got.max_abs_diff(&want) < 1e-10, "pair {q1} {q2}");
                assert!(got.check().unwrap().passes(1e-10));
                let m = got.marginal_first().unwrap();
                assert!(m.max_abs_diff(&rdm1(&s, q1).unwrap()) < 1e-10);
            }
        }
        assert!(lengths.is_superset(&[1, 2, 3, 4].into_iter().collect()));
    }

    #[test]
    fn requires_canonical_state() {
        let s = TtnState::random(TreeTopology::caterpillar(4).unwrap(), 2, 2, &mut rng(3)).unwrap();
        assert_eq!(rdm1(&s, 0), Err(TtnError::NotCanonical));
        assert_eq!(rdm2(&s, 0, 3), Err(TtnError::NotCanonical));
    }

    #[test]
    fn expectation_values() {
        let s = TtnState::zero_state(TreeTopology::caterpillar(4).unwrap(), 2).unwrap();
        let z = named_matrix("Z").unwrap();
        assert!((expectation(&s, &z, &[1]).unwrap() - 1.0).abs() < 1e-15);
        let bad = DMatrix::from_row_slice(2, 2, &[C64::zero(), C64::one(), C64::zero(), C64::zero()]);
        assert!(matches!(expectation(&s, &bad, &[0]), Err(TtnError::NotHermitian { .. })));
        assert!(expectation(&s, &z, &[0, 1, 2]).is_err());
    }

    #[test]
    fn random_observables_match_oracle() {
        let topo = TreeTopology::balanced_binary(7).unwrap();
        let s = random_canonical(topo, 3, 4);
        let v = s.to_statevector().unwrap();
        let mut r = rng(5);
        for _ in 0..5 {
            let a = DMatrix::from_fn(4, 4, |_, _| C64::new(r.random::<f64>() - 0.5, r.random::<f64>() - 0.5));
            let obs = &a + a.adjoint();
            let (q1, q2) = (r.random_range(0..7), r.random_range(0..7));
            if q1 == q2 {
                continue;
            }
            let got = expectation(&s, &obs, &[q1, q2]).unwrap();
            let want = oracle::sv_expectation(&v, &obs, &[q1, q2]).unwrap();
            assert!((got - want.re).abs() < 1e-10);
        }
    }

    #[test]
    fn energies() {
        let topo = TreeTopology::caterpillar(4).unwrap();
        let s = TtnState::zero_state(topo, 2).unwrap();
        let terms = (0..4).map(|i| Term { sites: vec![i], matrix: named_matrix("Z").unwrap() }).collect();
        let h = HamiltonianSpec::new("z", 4, 2, terms).unwrap();
        assert!((energy(&s, &h).unwrap() - 4.0).abs() < 1e-14);

        let g = TtnState::from_statevector(&ghz4(), TreeTopology::caterpillar(4).unwrap()).unwrap();
        let zz = HamiltonianSpec::new("zz", 4, 2, vec![Term { sites: vec![1, 2], matrix: named_matrix("ZZ").unwrap() }])
            .unwrap();
        assert!((energy(&g, &zz).unwrap() - 1.0).abs() < 1e-12);

        let h = hamiltonian_library("tfim-chain", 6, ModelParams::default()).unwrap();
        let s = random_canonical(TreeTopology::caterpillar(6).unwrap(), 3, 6);
        let want = oracle::sv_energy(&s.to_statevector().unwrap(), &h).unwrap();
        assert!((energy(&s, &h).unwrap() - want).abs() < 1e-9);
    }

    #[test]
    fn fidelities() {
        let s = TtnState::from_statevector(&ghz4(), TreeTopology::caterpillar(4).unwrap()).unwrap();
        assert!((fidelity(&s, &ghz4()).unwrap() - 1.0).abs() < 1e-12);
        let b = TtnState::zero_state(TreeTopology::caterpillar(4).unwrap(), 2).unwrap();
        let one = Statevector::basis(4, 2, &[1, 1, 1, 0]).unwrap();
        assert!(fidelity(&b, &one).unwrap().abs() < 1e-15);
        let mut t = s.clone();
        let e = t.topology().internal_edges()[0];
        crate::canonical::truncate_edge(&mut t, e, 1).unwrap();
        assert!((fidelity(&t, &ghz4()).unwrap() - 0.5f64.sqrt()).abs() < 1e-10);
    }

    #[test]
    fn rdm1_is_local() {
        let topo = TreeTopology::balanced_binary(8).unwrap();
        let mut s = random_canonical(topo, 3, 7);
        let before = rdm1(&s, 3).unwrap();
        let g = GateOp::two(random_unitary(4, &mut rng(8)), 0, 6, 2).unwrap();
        apply_gate_routed(&mut s, &g, Truncation::NONE).unwrap();
        assert!(rdm1(&s, 3).unwrap().max_abs_diff(&before) < 1e-10);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(20))]

            #[test]
            fn density_invariants(seed in any::<u64>(), n in 4usize..9, q1 in 0usize..8, shift in 1usize..8) {
                let q1 = q1 % n;
                let q2 = (q1 + shift) % n;
                prop_assume!(q1 != q2);
                let s = random_canonical(TreeTopology::balanced_binary(n).unwrap(), 2, seed);
                let r1 = rdm1(&s, q1).unwrap();
                prop_assert!(r1.check().unwrap().passes(1e-10));
                let r2 = rdm2(&s, q1, q2).unwrap();
                prop_assert!(r2.check().unwrap().passes(1e-10));
                prop_assert!(r2.marginal_first().unwrap().max_abs_diff(&r1) < 1e-10);
            }
        }
    }
}
