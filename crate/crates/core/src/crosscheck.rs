//! Named cross-validation suites comparing the network algorithms against
//! the dense oracle, plus the two scaling measurements.

use std::f64::consts::FRAC_1_SQRT_2;
use std::time::Instant;

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::canonical::{canonicalize, check_canonical, truncate_edge};
use crate::error::{TtnError, TtnResult};
use crate::gates::{apply_gate_routed, named_matrix, random_unitary, swap_step, GateOp};
use crate::hamiltonian::{hamiltonian_library, ModelParams};
use crate::locc::{
    cluster_topology, measure, run_locc_branch, tree_cluster_state, wire_pattern, MeasurementOp, RandomSource,
    TreeGraph,
};
use crate::observables::{fidelity, local_profile, rdm1, rdm2};
use crate::oracle;
use crate::state::{Statevector, TtnState};
use crate::tebd::{evolve_imag, evolve_real, ImagConfig, TebdConfig};
use crate::tensor::Truncation;
use crate::topology::{LayoutKind, TreeTopology};

/// Result of one suite.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    /// Worst observed deviation (or the measured quantity).
    pub metric: f64,
    pub tolerance: f64,
    pub detail: String,
    pub seconds: f64,
}

/// Workload of a suite; each suite documents how it reads the fields.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteParams {
    pub ns: Vec<usize>,
    pub trials: usize,
    pub seed: u64,
}

impl SuiteParams {
    pub fn new(ns: Vec<usize>, trials: usize, seed: u64) -> Self {
        Self { ns, trials, seed }
    }
}

pub const SUITES: &[&str] =
    &["canonical", "rdm", "gates", "truncation", "measurement", "cluster", "tebd-real", "ground-state", "complexity"];

/// Default workload for a named suite; `n` restricts the system sizes.
pub fn default_params(name: &str, n: Option<usize>, seed: u64) -> TtnResult<SuiteParams> {
    let (ns, trials): (Vec<usize>, usize) = match name {
        "canonical" => ((4..=8).collect(), 50),
        "rdm" => (vec![6, 7, 8], 50),
        "gates" => ((4..=8).collect(), 40),
        "truncation" => ((4..=8).collect(), 10),
        "measurement" => ((4..=7).collect(), 200),
        "cluster" => ((3..=12).collect(), 5),
        "tebd-real" => (vec![8], 1),
        "ground-state" => (vec![8], 1),
        "complexity" => (vec![8, 16, 32, 64], 5),
        _ => return Err(TtnError::InvalidArgument(format!("unknown suite {name:?}; known: {}", SUITES.join(", ")))),
    };
    let ns = match n {
        Some(n) => vec![n],
        None => ns,
    };
    Ok(SuiteParams::new(ns, trials, seed))
}

pub fn run_suite(name: &str, p: &SuiteParams) -> TtnResult<CheckOutcome> {
    match name {
        "canonical" => canonical_suite(p),
        "rdm" => rdm_suite(p),
        "gates" => gates_suite(p),
        "truncation" => truncation_suite(p),
        "measurement" => measurement_suite(p),
        "cluster" => cluster_suite(p),
        "tebd-real" => tebd_real_suite(p),
        "ground-state" => ground_state_suite(p),
        "complexity" => {
            let a = canonical_scaling(&[8, 16, 32, 64], p.trials, p.seed)?;
            let b = routing_suite(&p.ns, p.seed)?;
            Ok(CheckOutcome {
                name: "complexity".into(),
                passed: a.passed && b.passed,
                metric: a.metric,
                tolerance: a.tolerance,
                detail: format!("{}; {}", a.detail, b.detail),
                seconds: a.seconds + b.seconds,
            })
        }
        _ => Err(TtnError::InvalidArgument(format!("unknown suite {name:?}"))),
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Topology number `k` of a rotating family: caterpillar, balanced, random.
pub fn rotating_topology(n: usize, k: usize, rng: &mut impl Rng) -> TtnResult<TreeTopology> {
    match k % 3 {
        0 => TreeTopology::caterpillar(n),
        1 => TreeTopology::balanced_binary(n),
        _ => TreeTopology::random(n, rng),
    }
}

/// Random network of bond dimension `bond`, canonicalized.
pub fn random_canonical(topo: TreeTopology, bond: usize, rng: &mut impl Rng) -> TtnResult<TtnState> {
    let mut s = TtnState::random(topo, 2, bond, rng)?;
    canonicalize(&mut s, 0.0)?;
    Ok(s)
}

fn normalized(mut v: Statevector) -> TtnResult<Statevector> {
    v.normalize()?;
    Ok(v)
}

fn outcome(name: &str, passed: bool, metric: f64, tolerance: f64, detail: String, start: Instant) -> CheckOutcome {
    CheckOutcome { name: name.into(), passed, metric, tolerance, detail, seconds: start.elapsed().as_secs_f64() }
}

fn spectrum_diff(a: &[f64], b: &[f64]) -> f64 {
    (0..a.len().max(b.len()))
        .map(|i| (a.get(i).copied().unwrap_or(0.0) - b.get(i).copied().unwrap_or(0.0)).abs())
        .fold(0.0, f64::max)
}

/// Random non-canonical networks are canonicalized; every internal edge's
/// weights must equal the dense bipartition spectrum.
pub fn canonical_suite(p: &SuiteParams) -> TtnResult<CheckOutcome> {
    const TOL: f64 = 1e-10;
    let start = Instant::now();
    let mut r = rng(p.seed);
    let mut worst: f64 = 0.0;
    let mut failed_check = 0;
    let mut layouts = [0usize; 3];
    for k in 0..p.trials {
        let n = p.ns[k % p.ns.len()];
        let topo = rotating_topology(n, k, &mut r)?;
        layouts[k % 3] += 1;
        let bond = r.random_range(2..=5);
        let mut s = TtnState::random(topo.clone(), 2, bond, &mut r)?;
        let v = normalized(s.to_statevector()?)?;
        canonicalize(&mut s, 0.0)?;
        for e in topo.internal_edges() {
            let want = oracle::sv_schmidt(&v, &topo.bipartition_of(e)?.side_a)?;
            worst = worst.max(spectrum_diff(s.weights(e), &want));
        }
        if !check_canonical(&s, TOL)?.passes() {
            failed_check += 1;
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    let passed = worst < TOL && failed_check == 0 && elapsed < 60.0;
    let detail = format!(
        "{} states (caterpillar/balanced/random = {:?}), max weight error {worst:.2e}, canonical check failures {failed_check}, {elapsed:.2}s",
        p.trials, layouts
    );
    Ok(outcome("canonical", passed, worst, TOL, detail, start))
}

/// One- and two-qudit marginals of random canonical states against dense
/// partial traces, over every qudit and every ordered pair.
pub fn rdm_suite(p: &SuiteParams) -> TtnResult<CheckOutcome> {
    const TOL: f64 = 1e-10;
    let start = Instant::now();
    let mut r = rng(p.seed);
    let mut worst: f64 = 0.0;
    let mut lengths = std::collections::BTreeSet::new();
    for k in 0..p.trials {
        let n = p.ns[k % p.ns.len()];
        let topo = rotating_topology(n, k, &mut r)?;
        let s = random_canonical(topo.clone(), 4, &mut r)?;
        let v = s.to_statevector()?;
        for q in 0..n {
            worst = worst.max(rdm1(&s, q)?.max_abs_diff(&oracle::sv_partial_trace(&v, &[q])?));
        }
        for q1 in 0..n {
            for q2 in 0..n {
                if q1 != q2 {
                    lengths.insert(topo.path_between(q1, q2)?.len());
                    worst = worst.max(rdm2(&s, q1, q2)?.max_abs_diff(&oracle::sv_partial_trace(&v, &[q1, q2])?));
                }
            }
        }
    }
    let covered = (1..=4).all(|m| lengths.contains(&m));
    let detail = format!("{} states, path lengths covered {:?}, max entry error {worst:.2e}", p.trials, lengths);
    Ok(outcome("rdm", worst < TOL && covered, worst, TOL, detail, start))
}

/// Random two-qubit unitaries on random pairs (every distance), untruncated,
/// against dense evolution; then a swap followed by its reverse.
pub fn gates_suite(p: &SuiteParams) -> TtnResult<CheckOutcome> {
    const GATE_TOL: f64 = 1e-9;
    const SWAP_TOL: f64 = 1e-10;
    const CANON_TOL: f64 = 1e-10;
    let start = Instant::now();
    let mut r = rng(p.seed);
    let mut worst_gate: f64 = 0.0;
    let mut worst_swap: f64 = 0.0;
    let mut canon_failures = 0;
    let (mut adjacent, mut distant) = (0, 0);
    for k in 0..p.trials {
        let n = p.ns[k % p.ns.len()];
        let topo = rotating_topology(n, k, &mut r)?;
        let mut s = random_canonical(topo.clone(), 3, &mut r)?;
        let mut v = s.to_statevector()?;
        for _ in 0..4 {
            let q1 = r.random_range(0..n);
            let q2 = (q1 + r.random_range(1..n)) % n;
            if topo.path_between(q1, q2)?.len() <= 2 {
                adjacent += 1;
            } else {
                distant += 1;
            }
            let g = GateOp::two(random_unitary(4, &mut r), q1, q2, 2)?;
            apply_gate_routed(&mut s, &g, Truncation::NONE)?;
            v = oracle::sv_apply_gate(&v, &g)?;
            worst_gate = worst_gate.max(1.0 - fidelity(&s, &v)?);
            if !check_canonical(&s, CANON_TOL)?.passes() {
                canon_failures += 1;
            }
        }
        // Swap a leaf across an internal edge and back.
        let e = topo.internal_edges()[r.random_range(0..topo.internal_edges().len())];
        let edge = topo.edge(e);
        let (u, w) = (edge.a.vertex().expect("internal"), edge.b.vertex().expect("internal"));
        let Some(q) = (0..n).find(|&q| topo.leaf_vertex(q) == u) else { continue };
        let moved = topo.incidence(w).into_iter().find(|&x| x != e).expect("degree 3");
        let before = s.clone();
        swap_step(&mut s, u, w, q, moved, Truncation::NONE)?;
        swap_step(&mut s, w, u, q, moved, Truncation::NONE)?;
        if s.topology() != before.topology() {
            return Err(TtnError::Numerical("swap pair did not restore the layout".into()));
        }
        worst_swap = worst_swap.max(1.0 - fidelity(&s, &before.to_statevector()?)?);
    }
    let passed = worst_gate <= GATE_TOL && worst_swap <= SWAP_TOL && canon_failures == 0 && adjacent > 0 && distant > 0;
    let detail = format!(
        "{adjacent} adjacent + {distant} routed gates, max infidelity {worst_gate:.2e}; swap pair max infidelity {worst_swap:.2e}; canonical check failures {canon_failures}"
    );
    Ok(outcome("gates", passed, worst_gate, GATE_TOL, detail, start))
}

/// Single-edge truncations at every rank against `√K` and the dense best
/// rank-χ̃ approximation.
pub fn truncation_suite(p: &SuiteParams) -> TtnResult<CheckOutcome> {
    const KEPT_TOL: f64 = 1e-10;
    const BEST_TOL: f64 = 1e-9;
    let start = Instant::now();
    let mut r = rng(p.seed);
    let (mut worst_kept, mut worst_best): (f64, f64) = (0.0, 0.0);
    let mut cases = 0;
    for k in 0..p.trials {
        let n = p.ns[k % p.ns.len()];
        let topo = rotating_topology(n, k, &mut r)?;
        let v = Statevector::random(n, 2, &mut r)?;
        let s = TtnState::from_statevector(&v, topo.clone())?;
        for e in topo.internal_edges() {
            let side = topo.bipartition_of(e)?.side_a;
            for chi in 1..s.weights(e).len() {
                let mut t = s.clone();
                let kept = truncate_edge(&mut t, e, chi)?;
                let f = fidelity(&t, &v)?;
                worst_kept = worst_kept.max((f - kept.sqrt()).abs());
                worst_best = worst_best.max((f - oracle::sv_best_rank_fidelity(&v, &side, chi)?).abs());
                cases += 1;
            }
        }
    }
    let passed = worst_kept < KEPT_TOL && worst_best < BEST_TOL && cases > 0;
    let detail = format!("{cases} truncations, |F − √K| ≤ {worst_kept:.2e}, |F − F_best| ≤ {worst_best:.2e}");
    Ok(outcome("truncation", passed, worst_kept.max(worst_best), KEPT_TOL, detail, start))
}

/// Random complete two-outcome operator set `E_0 = U diag(cos a, cos b) V`,
/// `E_1 = W diag(sin a, sin b) V`.
pub fn random_povm(rng: &mut impl Rng) -> Vec<DMatrix<C64>> {
    let (u, w, v) = (random_unitary(2, rng), random_unitary(2, rng), random_unitary(2, rng));
    let (a, b) = (rng.random_range(0.0..std::f64::consts::FRAC_PI_2), rng.random_range(0.0..std::f64::consts::FRAC_PI_2));
    let diag = |x: f64, y: f64| DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![C64::new(x, 0.0), C64::new(y, 0.0)]));
    vec![&u * diag(a.cos(), b.cos()) * &v, &w * diag(a.sin(), b.sin()) * &v]
}

/// Seeded measurement sequences: each sampled outcome's probability is
/// compared with the dense Born rule, and ranks must never grow.
pub fn measurement_suite(p: &SuiteParams) -> TtnResult<CheckOutcome> {
    const TOL: f64 = 1e-10;
    let start = Instant::now();
    let mut r = rng(p.seed);
    let mut worst: f64 = 0.0;
    let mut worst_post: f64 = 0.0;
    let mut rank_violations = 0;
    let mut measurements = 0;
    for k in 0..p.trials {
        let n = p.ns[k % p.ns.len()];
        let topo = rotating_topology(n, k, &mut r)?;
        let mut s = random_canonical(topo, 3, &mut r)?;
        let mut v = s.to_statevector()?;
        let mut source = RandomSource::new(p.seed.wrapping_add(k as u64));
        let mut order: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            order.swap(i, r.random_range(0..=i));
        }
        for &q in order.iter().take(r.random_range(1..=n)) {
            let ops = if r.random_bool(0.5) {
                let u = random_unitary(2, &mut r);
                (0..2).map(|c| u.column(c) * u.column(c).adjoint()).collect()
            } else {
                random_povm(&mut r)
            };
            let m = MeasurementOp::new(q, ops.clone())?;
            let before = s.chi_max_observed();
            let out = measure(&mut s, &m, &mut source)?;
            let dense = oracle::sv_measure(&v, q, &ops)?;
            for (pr, (pd, _)) in out.probabilities.iter().zip(&dense) {
                worst = worst.max((pr - pd).abs());
            }
            v = dense[out.outcome].1.clone().ok_or(TtnError::InconsistentMeasurement)?;
            worst_post = worst_post.max(1.0 - fidelity(&s, &v)?);
            if s.chi_max_observed() > before {
                rank_violations += 1;
            }
            measurements += 1;
        }
    }
    let passed = worst < TOL && worst_post < TOL && rank_violations == 0;
    let detail = format!(
        "{} trials, {measurements} measurements, max probability error {worst:.2e}, max post-state infidelity {worst_post:.2e}, rank increases {rank_violations}",
        p.trials
    );
    Ok(outcome("measurement", passed, worst, TOL, detail, start))
}

/// Dense cluster state of a tree graph by the CZ circuit on `|+⟩^⊗n`.
pub fn oracle_cluster_state(g: &TreeGraph) -> TtnResult<Statevector> {
    let n = g.num_vertices();
    let mut v = Statevector::product(&vec![vec![C64::new(FRAC_1_SQRT_2, 0.0); 2]; n])?;
    let cz = named_matrix("CZ")?;
    for &(a, b) in g.edges() {
        v = oracle::sv_apply_matrix(&v, &cz, &[a, b])?;
    }
    Ok(v)
}

/// Cluster states of path, star and random tree graphs: exact rank 2 on
/// the graph-adapted layout, dense ranks on fixed layouts, and a 4-qubit
/// wire pattern over all outcome branches.
pub fn cluster_suite(p: &SuiteParams) -> TtnResult<CheckOutcome> {
    const TOL: f64 = 1e-10;
    let start = Instant::now();
    let mut r = rng(p.seed);
    let mut worst: f64 = 0.0;
    let mut bad_adapted = 0;
    let mut bad_fixed = 0;
    let mut graphs = 0;
    for &n in &p.ns {
        let mut family = vec![TreeGraph::path(n)?, TreeGraph::star(n)?];
        for _ in 0..p.trials {
            family.push(TreeGraph::random(n, &mut r)?);
        }
        for g in family {
            let v = oracle_cluster_state(&g)?;
            let s = tree_cluster_state(&g, cluster_topology(&g)?)?;
            worst = worst.max(1.0 - fidelity(&s, &v)?);
            if s.edge_ranks().iter().any(|&x| x != 2) {
                bad_adapted += 1;
            }
            for kind in [LayoutKind::Caterpillar, LayoutKind::BalancedBinary] {
                let topo = TreeTopology::layout(kind, n)?;
                let s = tree_cluster_state(&g, topo.clone())?;
                worst = worst.max(1.0 - fidelity(&s, &v)?);
                for e in topo.internal_edges() {
                    if s.weights(e).len() != oracle::sv_schmidt_rank(&v, &topo.bipartition_of(e)?.side_a)? {
                        bad_fixed += 1;
                    }
                }
            }
            graphs += 1;
        }
    }
    let (wire_err, branches) = wire_check(&[0.3, -0.7, 1.1])?;
    worst = worst.max(wire_err);
    let passed = worst < TOL && bad_adapted == 0 && bad_fixed == 0 && branches == 8;
    let detail = format!(
        "{graphs} graphs, adapted-layout edges with rank ≠ 2: {bad_adapted}, fixed-layout rank mismatches: {bad_fixed}, wire branches {branches}, max error {worst:.2e}"
    );
    Ok(outcome("cluster", passed, worst, TOL, detail, start))
}

/// Runs the 4-qubit wire pattern on every branch and returns the worst
/// output-qubit density matrix or branch-probability error.
pub fn wire_check(angles: &[f64; 3]) -> TtnResult<(f64, usize)> {
    let g = TreeGraph::path(4)?;
    let pattern = wire_pattern(angles);
    let base = oracle_cluster_state(&g)?;
    let mut worst: f64 = 0.0;
    let mut branches = 0;
    for b in 0..8usize {
        let outcomes = [b & 1, (b >> 1) & 1, (b >> 2) & 1];
        let mut s = tree_cluster_state(&g, TreeTopology::caterpillar(4)?)?;
        let Some(t) = run_locc_branch(&mut s, &pattern, &outcomes)? else { continue };
        let mut v = base.clone();
        let mut prob = 1.0;
        for (k, step) in pattern.steps.iter().enumerate() {
            let ops = step.bases[step.basis_index(&outcomes[..k])?].operators(2)?;
            let res = oracle::sv_measure(&v, step.target, &ops)?;
            prob *= res[outcomes[k]].0;
            v = res[outcomes[k]].1.clone().ok_or(TtnError::InconsistentMeasurement)?;
        }
        worst = worst.max((t.probability() - prob).abs());
        worst = worst.max(rdm1(&s, 3)?.max_abs_diff(&oracle::sv_partial_trace(&v, &[3])?));
        branches += 1;
    }
    Ok((worst, branches))
}

/// Phase-insensitive distance `min_φ ‖a − e^{iφ} b‖`.
pub fn state_distance(a: &Statevector, b: &Statevector) -> f64 {
    (2.0 - 2.0 * a.fidelity(b)).max(0.0).sqrt()
}

/// TFIM real-time evolution of `|0…0⟩` on a caterpillar to `t = 1` at
/// order 2: local magnetizations at `dt = 0.01` and the error ratio
/// between `dt = 0.01` and `dt = 0.005`.
pub fn tebd_real_suite(p: &SuiteParams) -> TtnResult<CheckOutcome> {
    const TOL: f64 = 1e-4;
    let start = Instant::now();
    let n = p.ns[0];
    let h = hamiltonian_library("tfim-chain", n, ModelParams::default())?;
    let topo = TreeTopology::caterpillar(n)?;
    let initial = TtnState::zero_state(topo, 2)?;
    let exact = oracle::sv_evolve_exact(&initial.to_statevector()?, &h, 1.0, false)?;
    let z = named_matrix("Z")?;
    let mut errors = vec![];
    let mut worst_z: f64 = 0.0;
    for dt in [0.01, 0.005] {
        let mut s = initial.clone();
        evolve_real(&mut s, &h, 1.0, TebdConfig::new(dt, 2, Truncation::NONE))?;
        if dt == 0.01 {
            for (q, zq) in local_profile(&s, &z)?.into_iter().enumerate() {
                worst_z = worst_z.max((zq - oracle::sv_expectation(&exact, &z, &[q])?.re).abs());
            }
        }
        errors.push(state_distance(&s.to_statevector()?, &exact));
    }
    let ratio = errors[0] / errors[1];
    let passed = worst_z < TOL && (3.0..=5.0).contains(&ratio);
    let detail = format!(
        "n={n}, max |Δ⟨Z⟩| {worst_z:.2e} at dt=0.01; state error {:.3e} → {:.3e}, ratio {ratio:.3}",
        errors[0], errors[1]
    );
    Ok(outcome("tebd-real", passed, worst_z, TOL, detail, start))
}

/// Settings used for the TFIM ground-state check.
pub fn ground_state_config() -> ImagConfig {
    ImagConfig {
        dt_start: 0.1,
        dt_end: 0.001,
        dt_factor: 0.1,
        tol: 1e-7,
        max_steps_per_dt: 20_000,
        order: 2,
        max_rank: Some(16),
        cutoff: 0.0,
        defer_sweeps: true,
    }
}

/// Random product state on `topo`.
pub fn random_product_state(topo: TreeTopology, d: usize, rng: &mut impl Rng) -> TtnResult<TtnState> {
    let n = topo.num_qudits();
    let locals: Vec<Vec<C64>> = (0..n)
        .map(|_| {
            let v: Vec<C64> = (0..d).map(|_| crate::state::gaussian_c64(rng)).collect();
            let norm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            v.into_iter().map(|z| z / norm).collect()
        })
        .collect();
    TtnState::product_state(topo, d, &locals)
}

/// TFIM (J = g = 1) ground energy on a caterpillar by imaginary time
/// against exact diagonalization.
pub fn ground_state_suite(p: &SuiteParams) -> TtnResult<CheckOutcome> {
    const TOL: f64 = 1e-6;
    let start = Instant::now();
    let n = p.ns[0];
    let h = hamiltonian_library("tfim-chain", n, ModelParams::default())?;
    let (exact, _) = oracle::sv_ground_state(&h)?;
    let mut s = random_product_state(TreeTopology::caterpillar(n)?, 2, &mut rng(p.seed))?;
    let res = evolve_imag(&mut s, &h, &ground_state_config())?;
    let err = (res.energy - exact).abs();
    let elapsed = start.elapsed().as_secs_f64();
    let passed = err < TOL && s.chi_max_observed() <= 16 && elapsed < 300.0;
    let detail = format!(
        "n={n}, E={:.10}, exact {exact:.10}, error {err:.2e}, {} steps, converged {}, max rank {}, {elapsed:.1}s",
        res.energy,
        res.report.records.len() - 1,
        res.converged,
        s.chi_max_observed()
    );
    Ok(outcome("ground-state", passed, err, TOL, detail, start))
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let cov: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let var: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    cov / var
}

/// Canonicalization time against bond dimension on a fixed 8-leaf
/// balanced layout. Leaves carry dimension `χ` so every edge has full
/// rank `χ`; the best of `repeats` runs is kept.
pub fn canonical_scaling(chis: &[usize], repeats: usize, seed: u64) -> TtnResult<CheckOutcome> {
    let start = Instant::now();
    let topo = TreeTopology::balanced_binary(8)?;
    let mut r = rng(seed);
    let mut times = vec![];
    for &chi in chis {
        let base = TtnState::random(topo.clone(), chi, chi, &mut r)?;
        let mut best = f64::INFINITY;
        for _ in 0..repeats.max(1) {
            let mut s = base.clone();
            let t0 = Instant::now();
            canonicalize(&mut s, 0.0)?;
            best = best.min(t0.elapsed().as_secs_f64());
        }
        times.push(best);
    }
    let xs: Vec<f64> = chis.iter().map(|&c| c as f64).collect();
    let slope = loglog_slope(&xs, &times);
    let passed = (slope - 4.0).abs() <= 0.7;
    let detail = format!(
        "canonicalize times {}; log-log slope {slope:.2}",
        chis.iter().zip(&times).map(|(c, t)| format!("χ={c}: {:.2e}s", t)).collect::<Vec<_>>().join(", ")
    );
    Ok(outcome("canonical-scaling", passed, slope, 0.7, detail, start))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoutingRow {
    pub layout: String,
    pub n: usize,
    /// Most internal vertices on any leaf-to-leaf path.
    pub max_path: usize,
    /// Mean swaps per gate over random pairs.
    pub mean_swaps: f64,
}

/// Path lengths and measured swap counts of routed gates between random
/// pairs, on a rank-capped state.
pub fn routing_table(ns: &[usize], gates: usize, seed: u64) -> TtnResult<Vec<RoutingRow>> {
    let mut r = rng(seed);
    let mut rows = vec![];
    for kind in [LayoutKind::Caterpillar, LayoutKind::BalancedBinary] {
        for &n in ns {
            let topo = TreeTopology::layout(kind, n)?;
            let mut s = TtnState::zero_state(topo.clone(), 2)?;
            let mut swaps = 0;
            for _ in 0..gates {
                let q1 = r.random_range(0..n);
                let q2 = (q1 + r.random_range(1..n)) % n;
                let g = GateOp::two(random_unitary(4, &mut r), q1, q2, 2)?;
                swaps += apply_gate_routed(&mut s, &g, Truncation::new(Some(4), 0.0))?.swaps;
            }
            let layout = match kind {
                LayoutKind::Caterpillar => "caterpillar",
                LayoutKind::BalancedBinary => "balanced-binary",
            };
            rows.push(RoutingRow {
                layout: layout.into(),
                n,
                max_path: topo.max_path_length(),
                mean_swaps: swaps as f64 / gates as f64,
            });
        }
    }
    Ok(rows)
}

/// The constants bounding path growth: `max_path ≤ 2 log₂ n` on
/// balanced layouts and `max_path ≥ n / 2` on caterpillars.
pub const BALANCED_LOG_FACTOR: f64 = 2.0;
pub const CATERPILLAR_LINEAR_FACTOR: f64 = 0.5;

/// Whether a row meets the bound for its layout.
pub fn routing_bound_holds(row: &RoutingRow) -> bool {
    let n = row.n as f64;
    match row.layout.as_str() {
        "balanced-binary" => row.max_path as f64 <= BALANCED_LOG_FACTOR * n.log2(),
        _ => row.max_path as f64 >= CATERPILLAR_LINEAR_FACTOR * n,
    }
}

pub fn routing_suite(ns: &[usize], seed: u64) -> TtnResult<CheckOutcome> {
    let start = Instant::now();
    let rows = routing_table(ns, 20, seed)?;
    let ok = rows.iter().all(routing_bound_holds);
    let detail = rows
        .iter()
        .filter(|row| row.n.is_power_of_two() || Some(&row.n) == ns.last())
        .map(|row| format!("{} n={}: path {} swaps {:.1}", row.layout, row.n, row.max_path, row.mean_swaps))
        .collect::<Vec<_>>()
        .join(", ");
    let worst = rows.iter().filter(|r| r.layout == "balanced-binary").map(|r| r.max_path as f64 / (r.n as f64).log2()).fold(0.0, f64::max);
    Ok(outcome("routing", ok, worst, BALANCED_LOG_FACTOR, detail, start))
}
