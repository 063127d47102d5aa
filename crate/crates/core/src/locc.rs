//! Local measurements, adaptive measurement sequences, tree cluster states
//! and one-way computation patterns.

use std::f64::consts::FRAC_1_SQRT_2;

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use num_traits::{One, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::canonical::canonicalize;
use crate::error::{TtnError, TtnResult};
use crate::gates::{apply_gate_routed, named_matrix, GateOp, MatrixSpec};
use crate::observables::rdm1;
use crate::state::TtnState;
use crate::tensor::Truncation;
use crate::topology::{Endpoint, TopologySpec, TreeTopology};

const COMPLETENESS_TOL: f64 = 1e-10;
/// Outcomes below this probability are never selected.
pub const MIN_PROBABILITY: f64 = 1e-14;

/// Generalized measurement `{E_r}` on one qudit.
#[derive(Clone, Debug, PartialEq)]
pub struct MeasurementOp {
    target: usize,
    operators: Vec<DMatrix<C64>>,
}

impl MeasurementOp {
    pub fn new(target: usize, operators: Vec<DMatrix<C64>>) -> TtnResult<Self> {
        let d = operators.first().map(|m| m.nrows()).ok_or_else(|| {
            TtnError::InvalidArgument("a measurement needs at least one operator".into())
        })?;
        let mut sum = DMatrix::<C64>::zeros(d, d);
        for e in &operators {
            if e.nrows() != d || e.ncols() != d {
                return Err(TtnError::ShapeMismatch("measurement operators differ in size".into()));
            }
            sum += e.adjoint() * e;
        }
        let deviation = (sum - DMatrix::<C64>::identity(d, d)).norm();
        if deviation > COMPLETENESS_TOL {
            return Err(TtnError::InvalidArgument(format!("operators are not complete (deviation {deviation:.3e})")));
        }
        Ok(Self { target, operators })
    }

    pub fn target(&self) -> usize {
        self.target
    }

    pub fn operators(&self) -> &[DMatrix<C64>] {
        &self.operators
    }
}

/// Measurement bases accepted in patterns; outcome 0 is the `+` state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BasisSpec {
    Z,
    X,
    Y,
    /// `(|0⟩ ± e^{iθ}|1⟩)/√2`.
    Equatorial(f64),
    /// Arbitrary complete operator set.
    Kraus(Vec<MatrixSpec>),
}

fn projector(v: [C64; 2]) -> DMatrix<C64> {
    DMatrix::from_fn(2, 2, |a, b| v[a] * v[b].conj())
}

impl BasisSpec {
    pub fn operators(&self, d: usize) -> TtnResult<Vec<DMatrix<C64>>> {
        let qubit = |ops: Vec<DMatrix<C64>>| {
            if d == 2 {
                Ok(ops)
            } else {
                Err(TtnError::InvalidPattern(format!("basis {self:?} is defined for qubits only")))
            }
        };
        let h = C64::new(FRAC_1_SQRT_2, 0.0);
        match self {
            BasisSpec::Z => qubit(vec![
                projector([C64::one(), C64::zero()]),
                projector([C64::zero(), C64::one()]),
            ]),
            BasisSpec::X => BasisSpec::Equatorial(0.0).operators(d),
            BasisSpec::Y => BasisSpec::Equatorial(std::f64::consts::FRAC_PI_2).operators(d),
            BasisSpec::Equatorial(theta) => {
                let ph = C64::from_polar(FRAC_1_SQRT_2, *theta);
                qubit(vec![projector([h, ph]), projector([h, -ph])])
            }
            BasisSpec::Kraus(specs) => specs.iter().map(|m| m.resolve(d, 1)).collect(),
        }
    }
}

/// One bit `constant ⊕ (⊕_{k ∈ steps} r_k mod 2)` of an adaptive selector.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AffineBit {
    #[serde(default)]
    pub constant: bool,
    #[serde(default)]
    pub steps: Vec<usize>,
}

impl AffineBit {
    fn eval(&self, outcomes: &[usize]) -> TtnResult<bool> {
        let mut bit = self.constant;
        for &k in &self.steps {
            let r = outcomes.get(k).ok_or_else(|| TtnError::InvalidPattern(format!("outcome {k} is not yet known")))?;
            bit ^= r % 2 == 1;
        }
        Ok(bit)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatternStep {
    pub target: usize,
    /// Candidate bases; the selector's bits form the index (bit 0 least
    /// significant).
    pub bases: Vec<BasisSpec>,
    #[serde(default)]
    pub selector: Vec<AffineBit>,
}

impl PatternStep {
    pub fn fixed(target: usize, basis: BasisSpec) -> Self {
        Self { target, bases: vec![basis], selector: vec![] }
    }

    pub fn basis_index(&self, outcomes: &[usize]) -> TtnResult<usize> {
        let mut idx = 0;
        for (k, bit) in self.selector.iter().enumerate() {
            if bit.eval(outcomes)? {
                idx |= 1 << k;
            }
        }
        Ok(idx)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MeasurementPattern {
    pub steps: Vec<PatternStep>,
}

impl MeasurementPattern {
    pub fn new(steps: Vec<PatternStep>) -> Self {
        Self { steps }
    }

    pub fn from_json(text: &str) -> TtnResult<Self> {
        serde_json::from_str(text).map_err(|e| TtnError::Parse(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("serializable")
    }

    /// Structural checks against a system of `n` qudits.
    pub fn validate(&self, n: usize) -> TtnResult<()> {
        let mut seen = vec![false; n];
        for (k, step) in self.steps.iter().enumerate() {
            if step.target >= n {
                return Err(TtnError::InvalidPattern(format!("step {k} targets unknown qudit {}", step.target)));
            }
            if std::mem::replace(&mut seen[step.target], true) {
                return Err(TtnError::InvalidPattern(format!("qudit {} is measured twice", step.target)));
            }
            if step.bases.len() != 1 << step.selector.len() {
                return Err(TtnError::InvalidPattern(format!(
                    "step {k} has {} selector bits but {} bases",
                    step.selector.len(),
                    step.bases.len()
                )));
            }
            if let Some(bad) = step.selector.iter().flat_map(|b| &b.steps).find(|&&j| j >= k) {
                return Err(TtnError::InvalidPattern(format!("step {k} depends on later step {bad}")));
            }
        }
        Ok(())
    }
}

/// Deterministic outcome sampler: ChaCha8 seeded from a 64-bit integer,
/// inverse-CDF selection on one uniform draw per measurement.
#[derive(Clone, Debug)]
pub struct RandomSource {
    seed: u64,
    rng: ChaCha8Rng,
}

impl RandomSource {
    pub const ALGORITHM: &'static str = "chacha8-inverse-cdf";

    pub fn new(seed: u64) -> Self {
        Self { seed, rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Index drawn with probability proportional to `probs`, skipping
    /// entries below [`MIN_PROBABILITY`].
    pub fn sample(&mut self, probs: &[f64]) -> usize {
        let total: f64 = probs.iter().filter(|&&p| p >= MIN_PROBABILITY).sum();
        let u = self.rng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut last = 0;
        for (r, &p) in probs.iter().enumerate() {
            if p < MIN_PROBABILITY {
                continue;
            }
            acc += p;
            last = r;
            if u < acc {
                return r;
            }
        }
        last
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MeasureOutcome {
    pub outcome: usize,
    pub probability: f64,
    /// Born probabilities of every outcome.
    pub probabilities: Vec<f64>,
}

/// Born probabilities `p_r = tr(E_r ρ E_r†)`.
pub fn outcome_probabilities(s: &TtnState, m: &MeasurementOp) -> TtnResult<Vec<f64>> {
    if m.operators[0].nrows() != s.local_dim() {
        return Err(TtnError::ShapeMismatch("measurement and state local dimensions differ".into()));
    }
    let rho = rdm1(s, m.target)?;
    Ok(m.operators.iter().map(|e| (e * &rho.matrix * e.adjoint()).trace().re.max(0.0)).collect())
}

/// Apply outcome `r` of `m`, renormalize and restore canonical form.
/// Returns the outcome's probability.
pub fn project(s: &mut TtnState, m: &MeasurementOp, r: usize) -> TtnResult<f64> {
    let probs = outcome_probabilities(s, m)?;
    let p = *probs.get(r).ok_or_else(|| TtnError::InvalidArgument(format!("no outcome {r}")))?;
    if p < MIN_PROBABILITY {
        return Err(TtnError::InconsistentMeasurement);
    }
    absorb(s, m, r, p)?;
    Ok(p)
}

fn absorb(s: &mut TtnState, m: &MeasurementOp, r: usize, p: f64) -> TtnResult<()> {
    let q = m.target;
    let v = s.topology().leaf_vertex(q);
    let slot = s.topology().slot_of(v, s.topology().leaf_edge(q)).expect("leaf slot");
    let op = m.operators[r].transpose() * C64::new(1.0 / p.sqrt(), 0.0);
    let t = s.tensor(v).apply_axis_matrix(slot, &op)?;
    s.set_tensor(v, t)?;
    canonicalize(s, 0.0)?;
    Ok(())
}

/// Draw an outcome from the Born distribution and collapse the state.
pub fn measure(s: &mut TtnState, m: &MeasurementOp, rng: &mut RandomSource) -> TtnResult<MeasureOutcome> {
    let probabilities = outcome_probabilities(s, m)?;
    if probabilities.iter().all(|&p| p < MIN_PROBABILITY) {
        return Err(TtnError::InconsistentMeasurement);
    }
    let outcome = rng.sample(&probabilities);
    let probability = probabilities[outcome];
    absorb(s, m, outcome, probability)?;
    Ok(MeasureOutcome { outcome, probability, probabilities })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TranscriptRecord {
    pub step: usize,
    pub target: usize,
    pub basis: usize,
    pub outcome: usize,
    pub probability: f64,
    /// Largest edge rank before and after the step.
    pub rank_before: usize,
    pub rank_after: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Transcript {
    pub records: Vec<TranscriptRecord>,
}

impl Transcript {
    pub fn outcomes(&self) -> Vec<usize> {
        self.records.iter().map(|r| r.outcome).collect()
    }

    /// Product of the per-step probabilities.
    pub fn probability(&self) -> f64 {
        self.records.iter().map(|r| r.probability).product()
    }

    /// One JSON object per line.
    pub fn to_json_lines(&self) -> String {
        self.records.iter().map(|r| serde_json::to_string(r).expect("serializable") + "\n").collect()
    }
}

fn step_op(s: &TtnState, step: &PatternStep, outcomes: &[usize]) -> TtnResult<(usize, MeasurementOp)> {
    let idx = step.basis_index(outcomes)?;
    let basis = step.bases.get(idx).ok_or_else(|| TtnError::InvalidPattern(format!("no basis {idx}")))?;
    Ok((idx, MeasurementOp::new(step.target, basis.operators(s.local_dim())?)?))
}

/// Run an adaptive pattern, sampling each outcome.
pub fn run_locc(s: &mut TtnState, pattern: &MeasurementPattern, rng: &mut RandomSource) -> TtnResult<Transcript> {
    pattern.validate(s.num_qudits())?;
    let mut transcript = Transcript::default();
    for (k, step) in pattern.steps.iter().enumerate() {
        let outcomes = transcript.outcomes();
        let (basis, op) = step_op(s, step, &outcomes)?;
        let rank_before = s.chi_max_observed();
        let out = measure(s, &op, rng)?;
        transcript.records.push(TranscriptRecord {
            step: k,
            target: step.target,
            basis,
            outcome: out.outcome,
            probability: out.probability,
            rank_before,
            rank_after: s.chi_max_observed(),
        });
    }
    Ok(transcript)
}

/// Run a pattern with prescribed outcomes. Returns `None` when the branch
/// has vanishing probability.
pub fn run_locc_branch(
    s: &mut TtnState,
    pattern: &MeasurementPattern,
    outcomes: &[usize],
) -> TtnResult<Option<Transcript>> {
    pattern.validate(s.num_qudits())?;
    if outcomes.len() != pattern.steps.len() {
        return Err(TtnError::InvalidArgument("one outcome per step required".into()));
    }
    let mut transcript = Transcript::default();
    for (k, step) in pattern.steps.iter().enumerate() {
        let (basis, op) = step_op(s, step, &outcomes[..k])?;
        let rank_before = s.chi_max_observed();
        let probs = outcome_probabilities(s, &op)?;
        let r = outcomes[k];
        let p = *probs.get(r).ok_or_else(|| TtnError::InvalidArgument(format!("no outcome {r}")))?;
        if p < MIN_PROBABILITY {
            return Ok(None);
        }
        absorb(s, &op, r, p)?;
        transcript.records.push(TranscriptRecord {
            step: k,
            target: step.target,
            basis,
            outcome: r,
            probability: p,
            rank_before,
            rank_after: s.chi_max_observed(),
        });
    }
    Ok(Some(transcript))
}

/// Undirected tree on `n` vertices (qubits).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeGraph {
    n: usize,
    edges: Vec<(usize, usize)>,
}

impl TreeGraph {
    pub fn new(n: usize, edges: Vec<(usize, usize)>) -> TtnResult<Self> {
        if n == 0 || edges.len() != n - 1 {
            return Err(TtnError::InvalidArgument(format!("a tree on {n} vertices has {} edges", n.saturating_sub(1))));
        }
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(p: &mut [usize], x: usize) -> usize {
            let mut r = x;
            while p[r] != r {
                p[r] = p[p[r]];
                r = p[r];
            }
            r
        }
        for &(a, b) in &edges {
            if a >= n || b >= n || a == b {
                return Err(TtnError::InvalidArgument(format!("bad graph edge ({a}, {b})")));
            }
            let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
            if ra == rb {
                return Err(TtnError::InvalidArgument(format!("graph edge ({a}, {b}) closes a cycle")));
            }
            parent[ra] = rb;
        }
        Ok(Self { n, edges })
    }

    pub fn path(n: usize) -> TtnResult<Self> {
        Self::new(n, (1..n).map(|i| (i - 1, i)).collect())
    }

    pub fn star(n: usize) -> TtnResult<Self> {
        Self::new(n, (1..n).map(|i| (0, i)).collect())
    }

    /// Random recursive tree: vertex `k` attaches to a uniform earlier vertex.
    pub fn random(n: usize, rng: &mut impl Rng) -> TtnResult<Self> {
        Self::new(n, (1..n).map(|k| (rng.random_range(0..k), k)).collect())
    }

    pub fn num_vertices(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    fn neighbors(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![vec![]; self.n];
        for &(a, b) in &self.edges {
            adj[a].push(b);
            adj[b].push(a);
        }
        adj
    }
}

enum Node {
    Leaf(usize),
    Join(Box<Node>, Box<Node>),
}

/// Topology adapted to a tree graph: every tree edge cut separates the
/// graph along edges that share one vertex, so its Schmidt rank is 2.
///
/// Each graph vertex's subtree is built by joining the vertex leaf with
/// its children's subtrees one at a time.
pub fn cluster_topology(g: &TreeGraph) -> TtnResult<TreeTopology> {
    if g.n < 3 {
        return Err(TtnError::InvalidTopology(format!("at least 3 qudits required, got {}", g.n)));
    }
    let adj = g.neighbors();
    // Iterative DFS order from vertex 0.
    let mut order = Vec::with_capacity(g.n);
    let mut parent = vec![usize::MAX; g.n];
    let mut stack = vec![0];
    let mut seen = vec![false; g.n];
    seen[0] = true;
    while let Some(v) = stack.pop() {
        order.push(v);
        for &w in adj[v].iter().rev() {
            if !seen[w] {
                seen[w] = true;
                parent[w] = v;
                stack.push(w);
            }
        }
    }
    let mut built: Vec<Option<Node>> = (0..g.n).map(|_| None).collect();
    for &v in order.iter().rev() {
        let mut acc = Node::Leaf(v);
        for &c in &adj[v] {
            if parent[c] == v {
                let sub = built[c].take().expect("child built first");
                acc = Node::Join(Box::new(acc), Box::new(sub));
            }
        }
        built[v] = Some(acc);
    }
    let root = built[0].take().expect("root built");
    let (left, right) = match root {
        Node::Join(a, b) => (*a, *b),
        Node::Leaf(_) => unreachable!("n ≥ 3"),
    };
    // Drop the degree-2 root by joining its children directly.
    let mut edges = Vec::new();
    let mut next = 0;
    let a = emit(&left, &mut edges, &mut next);
    let b = emit(&right, &mut edges, &mut next);
    match (a, b) {
        (Endpoint::Leaf(_), Endpoint::Leaf(_)) => unreachable!("n ≥ 3"),
        (Endpoint::Leaf(q), v) | (v, Endpoint::Leaf(q)) => edges.push((v, Endpoint::Leaf(q))),
        (a, b) => edges.push((a, b)),
    }
    TreeTopology::from_spec(&TopologySpec { edges, vertex_labels: vec![] })
}

fn emit(node: &Node, edges: &mut Vec<(Endpoint, Endpoint)>, next: &mut usize) -> Endpoint {
    match node {
        Node::Leaf(q) => Endpoint::Leaf(*q),
        Node::Join(a, b) => {
            let v = Endpoint::Vertex(*next);
            *next += 1;
            for child in [a, b] {
                let c = emit(child, edges, next);
                edges.push((v, c));
            }
            v
        }
    }
}

/// `|+⟩^⊗n` followed by CZ on every graph edge, routed without truncation.
pub fn tree_cluster_state(g: &TreeGraph, topology: TreeTopology) -> TtnResult<TtnState> {
    if topology.num_qudits() != g.n {
        return Err(TtnError::ShapeMismatch(format!(
            "graph has {} vertices, topology {} qudits",
            g.n,
            topology.num_qudits()
        )));
    }
    let plus = vec![C64::new(FRAC_1_SQRT_2, 0.0); 2];
    let mut s = TtnState::product_state(topology, 2, &vec![plus; g.n])?;
    let cz = named_matrix("CZ")?;
    for &(a, b) in &g.edges {
        apply_gate_routed(&mut s, &GateOp::two(cz.clone(), a, b, 2)?, Truncation::NONE)?;
    }
    Ok(s)
}

#[derive(Clone, Debug)]
pub struct MbqcRun {
    pub transcript: Transcript,
    pub state: TtnState,
    /// Largest edge rank of the prepared cluster state.
    pub cluster_rank: usize,
}

/// Prepare the cluster state of `g` (on `topology`, or the graph-adapted
/// layout when `None`) and run `pattern` on it.
pub fn run_mbqc(
    g: &TreeGraph,
    topology: Option<TreeTopology>,
    pattern: &MeasurementPattern,
    rng: &mut RandomSource,
) -> TtnResult<MbqcRun> {
    let topology = match topology {
        Some(t) => t,
        None => cluster_topology(g)?,
    };
    let mut state = tree_cluster_state(g, topology)?;
    let cluster_rank = state.chi_max_observed();
    let transcript = run_locc(&mut state, pattern, rng)?;
    Ok(MbqcRun { transcript, state, cluster_rank })
}

/// Equatorial-basis wire pattern on a path graph: measure qubits `0..n−1`
/// at angles `θ_k`, flipping the sign of `θ_k` when the X byproduct
/// accumulated on qubit `k` is set. The byproduct on qubit `k` is the
/// parity of outcomes `k−1, k−3, …`.
pub fn wire_pattern(angles: &[f64]) -> MeasurementPattern {
    let steps = angles
        .iter()
        .enumerate()
        .map(|(k, &theta)| {
            let deps: Vec<usize> = (0..k).rev().step_by(2).collect();
            if deps.is_empty() {
                PatternStep::fixed(k, BasisSpec::Equatorial(theta))
            } else {
                PatternStep {
                    target: k,
                    bases: vec![BasisSpec::Equatorial(theta), BasisSpec::Equatorial(-theta)],
                    selector: vec![AffineBit { constant: false, steps: deps }],
                }
            }
        })
        .collect();
    MeasurementPattern::new(steps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::canonical::check_canonical;
    use crate::oracle;
    use crate::state::Statevector;

    fn plus_state(n: usize, topo: TreeTopology) -> TtnState {
        let plus = vec![C64::new(FRAC_1_SQRT_2, 0.0); 2];
        TtnState::product_state(topo, 2, &vec![plus; n]).unwrap()
    }

    fn ghz(n: usize) -> Statevector {
        let mut amps = vec![C64::zero(); 1 << n];
        amps[0] = C64::new(FRAC_1_SQRT_2, 0.0);
        amps[(1 << n) - 1] = amps[0];
        Statevector::new(n, 2, amps).unwrap()
    }

    fn z_measure(q: usize) -> MeasurementOp {
        MeasurementOp::new(q, BasisSpec::Z.operators(2).unwrap()).unwrap()
    }

    #[test]
    fn z_on_plus_is_fair() {
        let s = plus_state(3, TreeTopology::caterpillar(3).unwrap());
        let p = outcome_probabilities(&s, &z_measure(1)).unwrap();
        assert!((p[0] - 0.5).abs() < 1e-14 && (p[1] - 0.5).abs() < 1e-14);
    }

    #[test]
    fn ghz_collapses() {
        let mut s = TtnState::from_statevector(&ghz(4), TreeTopology::caterpillar(4).unwrap()).unwrap();
        let p = project(&mut s, &z_measure(0), 0).unwrap();
        assert!((p - 0.5).abs() < 1e-12);
        let zero = Statevector::basis(4, 2, &[0, 0, 0, 0]).unwrap();
        assert!((s.to_statevector().unwrap().fidelity(&zero) - 1.0).abs() < 1e-10);
        assert!(s.edge_ranks().iter().all(|&r| r == 1));
    }

    #[test]
    fn incomplete_operators_rejected() {
        let ops = vec![BasisSpec::Z.operators(2).unwrap().remove(0)];
        assert!(MeasurementOp::new(0, ops).is_err());
    }

    #[test]
    fn random_projective_measurement_matches_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let v = Statevector::random(6, 2, &mut rng).unwrap();
        let u = crate::gates::random_unitary(2, &mut rng);
        let ops: Vec<DMatrix<C64>> = (0..2).map(|k| u.column(k) * u.column(k).adjoint()).collect();
        let m = MeasurementOp::new(3, ops.clone()).unwrap();
        let want = oracle::sv_measure(&v, 3, &ops).unwrap();
        for r in 0..2 {
            let mut s = TtnState::from_statevector(&v, TreeTopology::balanced_binary(6).unwrap()).unwrap();
            let p = project(&mut s, &m, r).unwrap();
            assert!((p - want[r].0).abs() < 1e-10);
            let post = want[r].1.as_ref().unwrap();
            assert!((s.to_statevector().unwrap().fidelity(post) - 1.0).abs() < 1e-10);
            assert!(check_canonical(&s, 1e-10).unwrap().passes());
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let mut a = RandomSource::new(7);
        let mut b = RandomSource::new(7);
        let probs = [0.2, 0.0, 0.5, 0.3];
        let xs: Vec<usize> = (0..50).map(|_| a.sample(&probs)).collect();
        let ys: Vec<usize> = (0..50).map(|_| b.sample(&probs)).collect();
        assert_eq!(xs, ys);
        assert!(!xs.contains(&1));
    }

    #[test]
    fn empty_pattern_leaves_state() {
        let mut s = plus_state(4, TreeTopology::caterpillar(4).unwrap());
        let before = s.clone();
        let t = run_locc(&mut s, &MeasurementPattern::default(), &mut RandomSource::new(0)).unwrap();
        assert!(t.records.is_empty());
        assert_eq!(s, before);
    }

    #[test]
    fn product_state_transcript_probabilities() {
        let mut s = plus_state(4, TreeTopology::caterpillar(4).unwrap());
        let pattern = MeasurementPattern::new((0..4).map(|q| PatternStep::fixed(q, BasisSpec::Z)).collect());
        let t = run_locc(&mut s, &pattern, &mut RandomSource::new(3)).unwrap();
        for r in &t.records {
            assert!((r.probability - 0.5).abs() < 1e-12);
        }
        assert_eq!(t.to_json_lines().lines().count(), 4);
    }

    #[test]
    fn pattern_validation() {
        let twice = MeasurementPattern::new(vec![PatternStep::fixed(0, BasisSpec::X), PatternStep::fixed(0, BasisSpec::Z)]);
        assert!(twice.validate(3).is_err());
        let forward = MeasurementPattern::new(vec![PatternStep {
            target: 0,
            bases: vec![BasisSpec::X, BasisSpec::Y],
            selector: vec![AffineBit { constant: false, steps: vec![0] }],
        }]);
        assert!(forward.validate(3).is_err());
        let short = MeasurementPattern::new(vec![PatternStep {
            target: 0,
            bases: vec![BasisSpec::X],
            selector: vec![AffineBit::default()],
        }]);
        assert!(short.validate(3).is_err());
        let json = wire_pattern(&[0.1, 0.2, 0.3]).to_json();
        assert_eq!(MeasurementPattern::from_json(&json).unwrap(), wire_pattern(&[0.1, 0.2, 0.3]));
    }

    #[test]
    fn adaptive_branches_match_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let v = Statevector::random(6, 2, &mut rng).unwrap();
        let topo = TreeTopology::caterpillar(6).unwrap();
        let pattern = MeasurementPattern::new(vec![
            PatternStep::fixed(2, BasisSpec::X),
            PatternStep {
                target: 4,
                bases: vec![BasisSpec::Z, BasisSpec::Equatorial(0.7)],
                selector: vec![AffineBit { constant: true, steps: vec![0] }],
            },
        ]);
        let mut seen = std::collections::HashMap::new();
        let mut source = RandomSource::new(11);
        for _ in 0..100 {
            let mut s = TtnState::from_statevector(&v, topo.clone()).unwrap();
            let t = run_locc(&mut s, &pattern, &mut source).unwrap();
            seen.insert(t.outcomes(), t.probability());
        }
        for (outcomes, p) in seen {
            // Oracle branch probability.
            let mut w = v.clone();
            let mut prob = 1.0;
            for (k, step) in pattern.steps.iter().enumerate() {
                let idx = step.basis_index(&outcomes[..k]).unwrap();
                let ops = step.bases[idx].operators(2).unwrap();
                let res = oracle::sv_measure(&w, step.target, &ops).unwrap();
                prob *= res[outcomes[k]].0;
                w = res[outcomes[k]].1.clone().unwrap();
            }
            assert!((p - prob).abs() < 1e-9);
        }
    }

    #[test]
    fn cluster_topology_ranks_are_two() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for n in 3..=12 {
            let g = TreeGraph::random(n, &mut rng).unwrap();
            let topo = cluster_topology(&g).unwrap();
            let s = tree_cluster_state(&g, topo).unwrap();
            assert!(s.edge_ranks().iter().all(|&r| r == 2), "n={n} ranks {:?}", s.edge_ranks());
        }
    }

    #[test]
    fn path_graph_on_three_qubits() {
        let g = TreeGraph::path(3).unwrap();
        let s = tree_cluster_state(&g, TreeTopology::caterpillar(3).unwrap()).unwrap();
        assert!(s.edge_ranks().iter().all(|&r| r == 2));
        let g = TreeGraph::path(4).unwrap();
        let s = tree_cluster_state(&g, TreeTopology::caterpillar(4).unwrap()).unwrap();
        assert_eq!(s.edge_ranks(), vec![2]);
    }

    fn oracle_cluster(g: &TreeGraph) -> Statevector {
        let n = g.num_vertices();
        let mut v = Statevector::product(&vec![vec![C64::new(FRAC_1_SQRT_2, 0.0); 2]; n]).unwrap();
        let cz = named_matrix("CZ").unwrap();
        for &(a, b) in g.edges() {
            v = oracle::sv_apply_matrix(&v, &cz, &[a, b]).unwrap();
        }
        v
    }

    #[test]
    fn star_cluster_matches_oracle() {
        let g = TreeGraph::star(4).unwrap();
        let s = tree_cluster_state(&g, TreeTopology::caterpillar(4).unwrap()).unwrap();
        assert!((s.to_statevector().unwrap().fidelity(&oracle_cluster(&g)) - 1.0).abs() < 1e-10);
    }

    #[test]
    fn general_topology_ranks_follow_cut_structure() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let g = TreeGraph::random(10, &mut rng).unwrap();
        let topo = TreeTopology::balanced_binary(10).unwrap();
        let s = tree_cluster_state(&g, topo.clone()).unwrap();
        let v = oracle_cluster(&g);
        for e in topo.internal_edges() {
            let side = topo.bipartition_of(e).unwrap().side_a;
            assert_eq!(s.weights(e).len(), oracle::sv_schmidt_rank(&v, &side).unwrap());
        }
    }

    #[test]
    fn rejects_non_trees() {
        assert!(TreeGraph::new(3, vec![(0, 1), (1, 0)]).is_err());
        assert!(TreeGraph::new(3, vec![(0, 1)]).is_err());
    }

    #[test]
    fn z_measurements_on_cluster_are_fair() {
        let g = TreeGraph::path(5).unwrap();
        let pattern = MeasurementPattern::new((0..5).map(|q| PatternStep::fixed(q, BasisSpec::Z)).collect());
        let run = run_mbqc(&g, None, &pattern, &mut RandomSource::new(2)).unwrap();
        assert_eq!(run.cluster_rank, 2);
        for r in &run.transcript.records {
            assert!((r.probability - 0.5).abs() < 1e-10);
            assert!(r.rank_after <= r.rank_before);
        }
    }

    #[test]
    fn three_qubit_wire_teleports() {
        let g = TreeGraph::path(3).unwrap();
        let pattern = wire_pattern(&[0.0, 0.0]);
        for branch in 0..4 {
            let outcomes = [branch & 1, branch >> 1];
            let mut s = tree_cluster_state(&g, TreeTopology::caterpillar(3).unwrap()).unwrap();
            run_locc_branch(&mut s, &pattern, &outcomes).unwrap().unwrap();
            let mut w = oracle_cluster(&g);
            for (k, step) in pattern.steps.iter().enumerate() {
                let idx = step.basis_index(&outcomes[..k]).unwrap();
                let ops = step.bases[idx].operators(2).unwrap();
                w = oracle::sv_measure(&w, step.target, &ops).unwrap()[outcomes[k]].1.clone().unwrap();
            }
            let got = rdm1(&s, 2).unwrap();
            let want = oracle::sv_partial_trace(&w, &[2]).unwrap();
            assert!(got.max_abs_diff(&want) < 1e-10);
        }
    }
}
