//! One- and two-qudit operators acting on tree tensor network states.
//!
//! Two-qudit matrices use the row index `i1 · d + i2`, where `i1` is the
//! level of the first target.

use std::f64::consts::FRAC_1_SQRT_2;

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use num_traits::{One, Zero};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::canonical;
use crate::error::{TtnError, TtnResult};
use crate::state::{gaussian_c64, TtnState, RANK_FLOOR};
use crate::tensor::{inverse_permutation, permute, svd_split, DenseTensor, Truncation};

/// Tolerance on `‖U†U − I‖` for treating a matrix as unitary.
pub const UNITARY_TOL: f64 = 1e-10;
/// Smallest lateral weight that may be divided back out of a tensor.
pub const DETACH_EPS: f64 = 1e-15;

#[derive(Clone, Debug, PartialEq)]
pub struct GateOp {
    matrix: DMatrix<C64>,
    targets: Vec<usize>,
    d: usize,
    unitary: bool,
}

impl GateOp {
    pub fn new(matrix: DMatrix<C64>, targets: Vec<usize>, d: usize) -> TtnResult<Self> {
        if targets.is_empty() || targets.len() > 2 {
            return Err(TtnError::InvalidArgument(format!("gates act on 1 or 2 qudits, got {}", targets.len())));
        }
        if targets.len() == 2 && targets[0] == targets[1] {
            return Err(TtnError::InvalidArgument(format!("repeated target {}", targets[0])));
        }
        let dim = d.pow(targets.len() as u32);
        if matrix.nrows() != dim || matrix.ncols() != dim {
            return Err(TtnError::ShapeMismatch(format!(
                "{}-qudit gate needs a {dim}×{dim} matrix, got {}×{}",
                targets.len(),
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        if matrix.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(TtnError::NonFinite("gate matrix".into()));
        }
        let unitary = is_unitary(&matrix);
        Ok(Self { matrix, targets, d, unitary })
    }

    pub fn one(matrix: DMatrix<C64>, q: usize, d: usize) -> TtnResult<Self> {
        Self::new(matrix, vec![q], d)
    }

    pub fn two(matrix: DMatrix<C64>, q1: usize, q2: usize, d: usize) -> TtnResult<Self> {
        Self::new(matrix, vec![q1, q2], d)
    }

    /// Qubit gate from a name or raw matrix.
    pub fn from_spec(spec: &MatrixSpec, targets: Vec<usize>, d: usize) -> TtnResult<Self> {
        let m = spec.resolve(d, targets.len())?;
        Self::new(m, targets, d)
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.matrix
    }

    pub fn targets(&self) -> &[usize] {
        &self.targets
    }

    pub fn arity(&self) -> usize {
        self.targets.len()
    }

    pub fn local_dim(&self) -> usize {
        self.d
    }

    pub fn is_unitary(&self) -> bool {
        self.unitary
    }

    /// The same operator with its two targets exchanged.
    pub fn reversed(&self) -> Self {
        if self.arity() == 1 {
            return self.clone();
        }
        let d = self.d;
        let sw = |k: usize| (k % d) * d + k / d;
        let matrix = DMatrix::from_fn(d * d, d * d, |r, c| self.matrix[(sw(r), sw(c))]);
        Self { matrix, targets: vec![self.targets[1], self.targets[0]], d, unitary: self.unitary }
    }
}

pub fn is_unitary(m: &DMatrix<C64>) -> bool {
    m.is_square() && (m.adjoint() * m - DMatrix::<C64>::identity(m.nrows(), m.ncols())).norm() <= UNITARY_TOL
}

/// A matrix given by name or as interleaved real/imaginary entries in
/// row-major order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixSpec {
    Named(String),
    Raw(Vec<f64>),
}

impl MatrixSpec {
    pub fn resolve(&self, d: usize, arity: usize) -> TtnResult<DMatrix<C64>> {
        let dim = d.pow(arity as u32);
        let m = match self {
            MatrixSpec::Named(name) => named_matrix(name)?,
            MatrixSpec::Raw(values) => {
                if values.len() != 2 * dim * dim {
                    return Err(TtnError::Parse(format!(
                        "raw matrix needs {} numbers, got {}",
                        2 * dim * dim,
                        values.len()
                    )));
                }
                DMatrix::from_fn(dim, dim, |r, c| {
                    let k = 2 * (r * dim + c);
                    C64::new(values[k], values[k + 1])
                })
            }
        };
        if m.nrows() != dim {
            return Err(TtnError::ShapeMismatch(format!(
                "matrix {self:?} is {}×{}, expected {dim}×{dim}",
                m.nrows(),
                m.ncols()
            )));
        }
        Ok(m)
    }
}

fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

fn pauli(ch: char) -> Option<DMatrix<C64>> {
    let (o, z) = (C64::one(), C64::zero());
    let i = C64::i();
    let entries = match ch {
        'I' => [o, z, z, o],
        'X' => [z, o, o, z],
        'Y' => [z, -i, i, z],
        'Z' => [o, z, z, -o],
        _ => return None,
    };
    Some(DMatrix::from_row_slice(2, 2, &entries))
}

pub fn kron(a: &DMatrix<C64>, b: &DMatrix<C64>) -> DMatrix<C64> {
    a.kronecker(b)
}

fn parse_args(name: &str, head: &str) -> Option<Vec<String>> {
    let rest = name.strip_prefix(head)?.trim();
    let inner = rest.strip_prefix('(')?.strip_suffix(')')?;
    Some(inner.split(',').map(|s| s.trim().to_string()).collect())
}

fn parse_angle(text: &str) -> TtnResult<f64> {
    let t = text.replace(' ', "");
    let value = |s: &str| -> Option<f64> {
        match s {
            "pi" | "π" => Some(std::f64::consts::PI),
            "-pi" | "-π" => Some(-std::f64::consts::PI),
            _ => s.parse().ok(),
        }
    };
    if let Some((num, den)) = t.split_once('/') {
        if let (Some(a), Some(b)) = (value(num), value(den)) {
            return Ok(a / b);
        }
    }
    if let Some(num) = t.strip_suffix("*pi").or_else(|| t.strip_suffix("pi")) {
        if let Some(a) = value(num) {
            return Ok(a * std::f64::consts::PI);
        }
    }
    value(&t).ok_or_else(|| TtnError::Parse(format!("bad angle {text:?}")))
}

/// Named qubit matrices: `X Y Z H S T CZ CNOT SWAP`, `phase(θ)`,
/// `rot(axis, θ) = exp(−iθσ/2)`, and Pauli strings such as `ZZ` or `XI`.
pub fn named_matrix(name: &str) -> TtnResult<DMatrix<C64>> {
    let upper = name.trim().to_ascii_uppercase();
    let (o, z) = (C64::one(), C64::zero());
    let h = FRAC_1_SQRT_2;
    let m = match upper.as_str() {
        "H" => DMatrix::from_row_slice(2, 2, &[c(h, 0.), c(h, 0.), c(h, 0.), c(-h, 0.)]),
        "S" => DMatrix::from_row_slice(2, 2, &[o, z, z, C64::i()]),
        "T" => DMatrix::from_row_slice(2, 2, &[o, z, z, C64::from_polar(1.0, std::f64::consts::FRAC_PI_4)]),
        "CZ" => DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![o, o, o, -o])),
        "CNOT" | "CX" => {
            let mut m = DMatrix::zeros(4, 4);
            for (r, col) in [(0, 0), (1, 1), (2, 3), (3, 2)] {
                m[(r, col)] = o;
            }
            m
        }
        "SWAP" => {
            let mut m = DMatrix::zeros(4, 4);
            for (r, col) in [(0, 0), (1, 2), (2, 1), (3, 3)] {
                m[(r, col)] = o;
            }
            m
        }
        _ => {
            let lower = name.trim().to_ascii_lowercase();
            if let Some(args) = parse_args(&lower, "phase") {
                if args.len() != 1 {
                    return Err(TtnError::Parse(format!("phase takes one angle: {name}")));
                }
                let theta = parse_angle(&args[0])?;
                return Ok(DMatrix::from_row_slice(2, 2, &[o, z, z, C64::from_polar(1.0, theta)]));
            }
            if let Some(args) = parse_args(&lower, "rot") {
                if args.len() != 2 {
                    return Err(TtnError::Parse(format!("rot takes an axis and an angle: {name}")));
                }
                let axis = args[0].to_ascii_uppercase();
                let sigma = match axis.as_str() {
                    "X" | "Y" | "Z" => pauli(axis.chars().next().unwrap()).unwrap(),
                    _ => return Err(TtnError::Parse(format!("unknown rotation axis {axis}"))),
                };
                let theta = parse_angle(&args[1])?;
                let id = DMatrix::<C64>::identity(2, 2);
                return Ok(id * c((theta / 2.0).cos(), 0.0) - sigma * c(0.0, (theta / 2.0).sin()));
            }
            if !upper.is_empty() && upper.len() <= 2 && upper.chars().all(|ch| "IXYZ".contains(ch)) {
                return Ok(upper
                    .chars()
                    .map(|ch| pauli(ch).unwrap())
                    .reduce(|a, b| kron(&a, &b))
                    .expect("nonempty"));
            }
            return Err(TtnError::Parse(format!("unknown gate {name:?}")));
        }
    };
    Ok(m)
}

/// Haar-random unitary via QR of a complex Gaussian matrix.
pub fn random_unitary(dim: usize, rng: &mut impl Rng) -> DMatrix<C64> {
    let g = DMatrix::from_fn(dim, dim, |_, _| gaussian_c64(rng));
    let qr = g.qr();
    let (q, r) = (qr.q(), qr.r());
    let mut q = q;
    for k in 0..dim {
        let d = r[(k, k)];
        let phase = if d.norm() > 0.0 { d / d.norm() } else { C64::one() };
        let mut col = q.column_mut(k);
        col *= phase;
    }
    q
}

/// How a two-qudit gate treats non-unitary matrices.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum NonUnitaryPolicy {
    /// Restore canonical form with a full sweep after the gate.
    #[default]
    Resweep,
    /// Leave the state non-canonical; the caller sweeps later.
    Defer,
}

#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct GateOptions {
    pub trunc: Truncation,
    pub non_unitary: NonUnitaryPolicy,
}

impl GateOptions {
    pub fn new(trunc: Truncation) -> Self {
        Self { trunc, non_unitary: NonUnitaryPolicy::Resweep }
    }

    pub fn deferred(trunc: Truncation) -> Self {
        Self { trunc, non_unitary: NonUnitaryPolicy::Defer }
    }
}

fn check_gate(s: &TtnState, g: &GateOp, arity: usize) -> TtnResult<()> {
    if g.arity() != arity {
        return Err(TtnError::InvalidArgument(format!("expected a {arity}-qudit gate, got {}", g.arity())));
    }
    if g.local_dim() != s.local_dim() {
        return Err(TtnError::ShapeMismatch(format!(
            "gate local dimension {} differs from state {}",
            g.local_dim(),
            s.local_dim()
        )));
    }
    for &q in g.targets() {
        s.topology().check_qudit(q)?;
    }
    Ok(())
}

/// Matrix of the operator `out[b] = Σ_a g[b, a] t[a]` for `apply_axis_matrix`.
fn axis_form(g: &DMatrix<C64>) -> DMatrix<C64> {
    g.transpose()
}

/// Contract a one-qudit gate into the leaf index of its vertex.
pub fn apply_local(s: &mut TtnState, g: &GateOp) -> TtnResult<()> {
    check_gate(s, g, 1)?;
    let q = g.targets()[0];
    let v = s.topology.leaf_vertex(q);
    let slot = s.topology.slot_of(v, s.topology.leaf_edge(q)).expect("leaf slot");
    s.tensors[v] = s.tensors[v].apply_axis_matrix(slot, &axis_form(g.matrix()))?;
    if !g.is_unitary() {
        s.invalidate();
    }
    Ok(())
}

/// Contract a two-qudit gate into the vertex holding both leaves.
pub fn apply_same_tensor(s: &mut TtnState, g: &GateOp) -> TtnResult<()> {
    check_gate(s, g, 2)?;
    let (q1, q2) = (g.targets()[0], g.targets()[1]);
    let v = s.topology.leaf_vertex(q1);
    if s.topology.leaf_vertex(q2) != v {
        return Err(TtnError::NotAdjacent(q1, q2, "the same vertex"));
    }
    let s1 = s.topology.slot_of(v, s.topology.leaf_edge(q1)).expect("leaf slot");
    let s2 = s.topology.slot_of(v, s.topology.leaf_edge(q2)).expect("leaf slot");
    let rest = 3 - s1 - s2;
    let order = [s1, s2, rest];
    let p = permute(&s.tensors[v], &order)?;
    let shape = p.shape().to_vec();
    let m = g.matrix() * p.to_matrix(2);
    let out = DenseTensor::from_matrix(&m, shape)?;
    s.tensors[v] = permute(&out, &inverse_permutation(&order))?;
    if !g.is_unitary() {
        s.invalidate();
    }
    Ok(())
}

/// Weights carried by edge `e` (all ones for leaf edges).
fn edge_weights(s: &TtnState, e: usize) -> Vec<f64> {
    if s.topology.is_internal(e) {
        s.weights[e].clone()
    } else {
        vec![1.0; s.d]
    }
}

fn check_detachable(w: &[f64]) -> TtnResult<()> {
    match w.iter().copied().find(|&x| !(x >= DETACH_EPS)) {
        Some(bad) => Err(TtnError::CorruptWeights(bad)),
        None => Ok(()),
    }
}

fn inverse(w: &[f64]) -> Vec<f64> {
    w.iter().map(|x| 1.0 / x).collect()
}

/// Outcome of a tensor-merging two-vertex update.
struct Split {
    /// Discarded weight relative to the full spectrum.
    discarded: f64,
}

/// Merge vertices `u` and `v` across their shared edge `c` into
/// `Θ[x1, x2, y1, y2]`, where `x` are two of `u`'s slots other than `c`
/// and `y` two of `v`'s; all weights except inner ones pre-absorbed.
/// Returns Θ in order `[u_other..., v_other...]` with the given slot lists.
fn merged(s: &TtnState, u: usize, v: usize, c: usize) -> TtnResult<(DenseTensor, [usize; 2], [usize; 2])> {
    let su = s.topology.slot_of(u, c).expect("shared edge");
    let sv = s.topology.slot_of(v, c).expect("shared edge");
    let uo = others(su);
    let vo = others(sv);
    let mut tu = s.tensors[u].clone();
    for &k in &uo {
        tu.scale_axis(k, &edge_weights(s, s.topology.incidence(u)[k]));
    }
    tu.scale_axis(su, &s.weights[c]);
    let mut tv = s.tensors[v].clone();
    for &k in &vo {
        tv.scale_axis(k, &edge_weights(s, s.topology.incidence(v)[k]));
    }
    let theta = crate::tensor::contract(&tu, &tv, &[(su, sv)])?;
    Ok((theta, uo, vo))
}

fn others(slot: usize) -> [usize; 2] {
    match slot {
        0 => [1, 2],
        1 => [0, 2],
        _ => [0, 1],
    }
}

/// Split `theta` (four indices) into two new vertex tensors.
///
/// `left` lists the two Θ indices going to `u`; their edges get the
/// lateral weights divided back out. The new bond is placed in each
/// tensor's slot for `c`.
#[allow(clippy::too_many_arguments)]
fn split_back(
    s: &mut TtnState,
    theta: &DenseTensor,
    left: [usize; 2],
    u: usize,
    v: usize,
    c: usize,
    trunc: Truncation,
) -> TtnResult<Split> {
    let res = svd_split(theta, &left, trunc.with_floor(RANK_FLOOR))?;
    let total: f64 = res.singular_values.iter().map(|x| x * x).sum::<f64>() + res.discarded_weight;
    // Place indices into slot order of each vertex, dividing lateral weights.
    for (vertex, mut t, bond_axis) in [(u, res.left, 2usize), (v, permute(&res.right, &[1, 2, 0])?, 2usize)] {
        let slots = s.topology.incidence(vertex);
        let sc = s.topology.slot_of(vertex, c).expect("shared edge");
        let lateral = others(sc);
        // t indices: [lateral0 edge, lateral1 edge, bond] in the order given
        // by the caller, who guarantees they match `lateral` slot order.
        for (k, &slot) in lateral.iter().enumerate() {
            let w = edge_weights(s, slots[slot]);
            check_detachable(&w)?;
            t.scale_axis(k, &inverse(&w));
        }
        let mut order = [0usize; 3];
        order[lateral[0]] = 0;
        order[lateral[1]] = 1;
        order[sc] = bond_axis;
        s.tensors[vertex] = permute(&t, &order)?;
    }
    s.weights[c] = res.singular_values;
    Ok(Split { discarded: if total > 0.0 { res.discarded_weight / total } else { 0.0 } })
}

fn normalize_edge(s: &mut TtnState, c: usize) -> TtnResult<()> {
    let norm = s.weights[c].iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return Err(TtnError::ZeroNorm);
    }
    s.weights[c].iter_mut().for_each(|x| *x /= norm);
    Ok(())
}

/// Two-qudit gate on leaves hanging on adjacent vertices; returns the
/// discarded weight. Non-unitary gates trigger a full canonical sweep.
pub fn apply_neighbor_gate(s: &mut TtnState, g: &GateOp, trunc: Truncation) -> TtnResult<f64> {
    apply_neighbor_gate_with(s, g, GateOptions::new(trunc))
}

pub fn apply_neighbor_gate_with(s: &mut TtnState, g: &GateOp, opts: GateOptions) -> TtnResult<f64> {
    check_gate(s, g, 2)?;
    let (q1, q2) = (g.targets()[0], g.targets()[1]);
    let u = s.topology.leaf_vertex(q1);
    let v = s.topology.leaf_vertex(q2);
    let c = match s.topology.edge_between(u, v) {
        Some(c) if u != v => c,
        _ => return Err(TtnError::NotAdjacent(q1, q2, "adjacent vertices")),
    };
    let was_canonical = s.canonical;
    let was_normalized = s.normalized;
    let (theta, uo, vo) = merged(s, u, v, c)?;
    // Θ order: [u lateral slots..., v lateral slots...]; locate the leaves.
    let leaf1 = s.topology.leaf_edge(q1);
    let leaf2 = s.topology.leaf_edge(q2);
    let p1 = uo.iter().position(|&k| s.topology.incidence(u)[k] == leaf1).expect("leaf at u");
    let p2 = 2 + vo.iter().position(|&k| s.topology.incidence(v)[k] == leaf2).expect("leaf at v");
    let a = 1 - p1;
    let b = 2 + (1 - (p2 - 2));
    // Apply g on (q1, q2): move them to the front.
    let order = [p1, p2, a, b];
    let pt = permute(&theta, &order)?;
    let shape = pt.shape().to_vec();
    let gm = g.matrix() * pt.to_matrix(2);
    let applied = permute(&DenseTensor::from_matrix(&gm, shape)?, &inverse_permutation(&order))?;
    let split = split_back(s, &applied, [0, 1], u, v, c, opts.trunc)?;
    if was_canonical {
        normalize_edge(s, c)?;
    }
    let unitary = g.is_unitary();
    s.canonical = was_canonical && unitary;
    s.normalized = was_canonical || (was_normalized && unitary && split.discarded == 0.0);
    if !unitary && opts.non_unitary == NonUnitaryPolicy::Resweep {
        let d = canonical::canonicalize_with(s, opts.trunc)?;
        return Ok(split.discarded.max(d));
    }
    Ok(split.discarded)
}

/// Move qudit `q` from vertex `u` onto its neighbor `v`, sending `v`'s
/// edge `moved` back to `u`. Returns the discarded weight.
///
/// The merged tensor is split as (edge `moved`, `u`'s other lateral edge)
/// against (`q`, `v`'s remaining edge).
pub fn swap_step(s: &mut TtnState, u: usize, v: usize, q: usize, moved: usize, trunc: Truncation) -> TtnResult<f64> {
    s.topology.check_qudit(q)?;
    let c = s
        .topology
        .edge_between(u, v)
        .filter(|_| u != v)
        .ok_or_else(|| TtnError::InvalidArgument(format!("vertices {u} and {v} are not adjacent")))?;
    let leaf = s.topology.leaf_edge(q);
    if s.topology.leaf_vertex(q) != u {
        return Err(TtnError::InvalidArgument(format!("qudit {q} does not hang on vertex {u}")));
    }
    let slot_moved = match s.topology.slot_of(v, moved) {
        Some(k) if moved != c => k,
        _ => return Err(TtnError::InvalidArgument(format!("edge {moved} is not a movable index of vertex {v}"))),
    };
    let slot_q = s.topology.slot_of(u, leaf).expect("leaf slot");
    let was_canonical = s.canonical;
    let (theta, uo, vo) = merged(s, u, v, c)?;
    let pq = uo.iter().position(|&k| k == slot_q).expect("leaf lateral");
    let pa = 1 - pq;
    let pm = 2 + vo.iter().position(|&k| k == slot_moved).expect("moved lateral");
    let pb = 2 + (1 - (pm - 2));
    s.topology.exchange_slots(u, slot_q, v, slot_moved);
    // After the exchange `u` holds {moved, a, c} and `v` holds {q, b, c};
    // arrange Θ so each side's indices follow its lateral slot order.
    let su = s.topology.slot_of(u, c).expect("shared");
    let sv = s.topology.slot_of(v, c).expect("shared");
    let lat_u = others(su);
    let lat_v = others(sv);
    let pick_u = |slot: usize| if slot == slot_q { pm } else { pa };
    let pick_v = |slot: usize| if slot == slot_moved { pq } else { pb };
    let order = [pick_u(lat_u[0]), pick_u(lat_u[1]), pick_v(lat_v[0]), pick_v(lat_v[1])];
    let arranged = permute(&theta, &order)?;
    let split = split_back(s, &arranged, [0, 1], u, v, c, trunc)?;
    if was_canonical {
        normalize_edge(s, c)?;
    }
    s.canonical = was_canonical;
    s.normalized = was_canonical || (s.normalized && split.discarded == 0.0);
    Ok(split.discarded)
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RoutedOutcome {
    /// Sum of discarded weights over every SVD.
    pub discarded: f64,
    pub swaps: usize,
    /// Internal vertices on the path between the targets.
    pub path_len: usize,
}

/// Two-qudit gate between arbitrary qudits: swap the first target along
/// the path until it neighbors the second, apply the gate, then undo the
/// swaps so the topology returns to its starting layout.
pub fn apply_gate_routed(s: &mut TtnState, g: &GateOp, trunc: Truncation) -> TtnResult<RoutedOutcome> {
    apply_gate_routed_with(s, g, GateOptions::new(trunc))
}

pub fn apply_gate_routed_with(s: &mut TtnState, g: &GateOp, opts: GateOptions) -> TtnResult<RoutedOutcome> {
    check_gate(s, g, 2)?;
    let (q1, q2) = (g.targets()[0], g.targets()[1]);
    let path = s.topology.path_between(q1, q2)?;
    let m = path.len();
    let mut out = RoutedOutcome { path_len: m, ..Default::default() };
    if m == 1 {
        apply_same_tensor(s, g)?;
        if !g.is_unitary() && opts.non_unitary == NonUnitaryPolicy::Resweep {
            out.discarded += canonical::canonicalize_with(s, opts.trunc)?;
        }
        return Ok(out);
    }
    let mut record = Vec::with_capacity(m.saturating_sub(2));
    for k in 1..m - 1 {
        let (u, v) = (path[k - 1], path[k]);
        let back = s.topology.edge_between(v, u).expect("path is connected");
        let ahead = s.topology.edge_between(v, path[k + 1]).expect("path is connected");
        let side = s.topology.incidence(v).into_iter().find(|&e| e != back && e != ahead).expect("degree 3");
        out.discarded += swap_step(s, u, v, q1, side, opts.trunc)?;
        record.push((u, v, side));
        out.swaps += 1;
    }
    out.discarded += apply_neighbor_gate_with(s, g, opts)?;
    for &(u, v, side) in record.iter().rev() {
        out.discarded += swap_step(s, v, u, q1, side, opts.trunc)?;
        out.swaps += 1;
    }
    Ok(out)
}

/// Apply a one- or two-qudit gate wherever its targets sit.
pub fn apply_gate(s: &mut TtnState, g: &GateOp, opts: GateOptions) -> TtnResult<RoutedOutcome> {
    match g.arity() {
        1 => {
            apply_local(s, g)?;
            Ok(RoutedOutcome::default())
        }
        _ => apply_gate_routed_with(s, g, opts),
    }
}

impl TtnState {
    /// Vertex currently holding qudit `q`'s leaf.
    pub fn host_vertex(&self, q: usize) -> usize {
        self.topology.leaf_vertex(q)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use crate::canonical::{canonicalize, check_canonical};
    use crate::oracle;
    use crate::state::Statevector;
    use crate::topology::{Endpoint, TreeTopology};

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn plus() -> Vec<C64> {
        vec![c(FRAC_1_SQRT_2, 0.), c(FRAC_1_SQRT_2, 0.)]
    }

    fn random_canonical(topo: TreeTopology, chi: usize, seed: u64) -> TtnState {
        let mut s = TtnState::random(topo, 2, chi, &mut rng(seed)).unwrap();
        canonicalize(&mut s, 0.0).unwrap();
        s
    }

    fn named(name: &str, targets: Vec<usize>) -> GateOp {
        GateOp::from_spec(&MatrixSpec::Named(name.into()), targets, 2).unwrap()
    }

    #[test]
    fn named_gates_are_unitary() {
        for name in ["X", "Y", "Z", "H", "S", "T", "phase(0.3)", "rot(y, pi/3)", "rot(x,1.2)"] {
            assert!(is_unitary(&named_matrix(name).unwrap()), "{name}");
        }
        for name in ["CZ", "CNOT", "SWAP", "ZZ"] {
            let m = named_matrix(name).unwrap();
            assert_eq!(m.nrows(), 4);
            assert!(is_unitary(&m));
        }
        assert!(named_matrix("foo").is_err());
        assert!(named_matrix("rot(w, 1)").is_err());
        let r = named_matrix("rot(z, pi)").unwrap();
        assert!((r[(0, 0)] - c(0., -1.)).norm() < 1e-15);
    }

    #[test]
    fn raw_matrix_spec() {
        let spec = MatrixSpec::Raw(vec![0., 0., 1., 0., 1., 0., 0., 0.]);
        let m = spec.resolve(2, 1).unwrap();
        assert_eq!(m, named_matrix("X").unwrap());
        assert!(spec.resolve(2, 2).is_err());
        let g = GateOp::one(DMatrix::from_element(2, 2, c(1., 0.)), 0, 2).unwrap();
        assert!(!g.is_unitary());
    }

    #[test]
    fn identity_local_gate_is_noop() {
        let mut s = random_canonical(TreeTopology::caterpillar(5).unwrap(), 2, 1);
        let before = s.clone();
        apply_local(&mut s, &named("I", vec![3])).unwrap();
        for v in 0..s.topology().num_vertices() {
            assert!(s.tensor(v).max_abs_diff(before.tensor(v)).unwrap() <= 1e-14);
        }
    }

    #[test]
    fn pauli_x_flips_product_state() {
        let mut s = TtnState::zero_state(TreeTopology::caterpillar(4).unwrap(), 2).unwrap();
        apply_local(&mut s, &named("X", vec![2])).unwrap();
        let v = s.to_statevector().unwrap();
        assert!((v.amplitudes[0b0010] - C64::one()).norm() < 1e-15);
    }

    #[test]
    fn local_unitary_keeps_canonical() {
        let mut s = random_canonical(TreeTopology::balanced_binary(7).unwrap(), 3, 2);
        let u = random_unitary(2, &mut rng(3));
        apply_local(&mut s, &GateOp::one(u, 4, 2).unwrap()).unwrap();
        assert!(s.is_canonical());
        assert!(check_canonical(&s, 1e-10).unwrap().passes());
    }

    #[test]
    fn cz_same_tensor_matches_oracle() {
        let topo = TreeTopology::caterpillar(3).unwrap();
        let mut s = TtnState::product_state(topo, 2, &vec![plus(); 3]).unwrap();
        let g = named("CZ", vec![0, 1]);
        let want = oracle::sv_apply_gate(&s.to_statevector().unwrap(), &g).unwrap();
        apply_same_tensor(&mut s, &g).unwrap();
        let got = s.to_statevector().unwrap();
        assert!(got.amplitudes.iter().zip(&want.amplitudes).all(|(a, b)| (a - b).norm() < 1e-12));
    }

    #[test]
    fn swap_gate_on_shared_vertex_permutes() {
        let topo = TreeTopology::caterpillar(4).unwrap();
        let v = Statevector::random(4, 2, &mut rng(4)).unwrap();
        let mut s = TtnState::from_statevector(&v, topo).unwrap();
        apply_same_tensor(&mut s, &named("SWAP", vec![0, 1])).unwrap();
        let got = s.to_statevector().unwrap();
        let want = oracle::sv_permute(&v, &[1, 0, 2, 3]).unwrap();
        assert!((got.fidelity(&want) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn same_tensor_requires_shared_vertex() {
        let mut s = TtnState::zero_state(TreeTopology::caterpillar(5).unwrap(), 2).unwrap();
        assert!(matches!(apply_same_tensor(&mut s, &named("CZ", vec![0, 2])), Err(TtnError::NotAdjacent(..))));
    }

    #[test]
    fn identity_neighbor_gate_keeps_weights() {
        let mut s = random_canonical(TreeTopology::caterpillar(6).unwrap(), 3, 5);
        let (q1, q2) = (1, 2);
        let c = s.topology().edge_between(s.host_vertex(q1), s.host_vertex(q2)).unwrap();
        let before = s.weights(c).to_vec();
        apply_neighbor_gate(&mut s, &named("II", vec![q1, q2]), Truncation::NONE).unwrap();
        let after = s.weights(c);
        for (a, b) in before.iter().zip(after) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn cz_neighbors_creates_rank_two() {
        let topo = TreeTopology::caterpillar(4).unwrap();
        let mut s = TtnState::product_state(topo, 2, &vec![plus(); 4]).unwrap();
        let want = oracle::sv_apply_gate(&s.to_statevector().unwrap(), &named("CZ", vec![1, 2])).unwrap();
        apply_neighbor_gate(&mut s, &named("CZ", vec![1, 2]), Truncation::NONE).unwrap();
        let c = s.topology().internal_edges()[0];
        assert_eq!(s.weights(c).len(), 2);
        let got = s.to_statevector().unwrap();
        assert!(got.amplitudes.iter().zip(&want.amplitudes).all(|(a, b)| (a - b).norm() < 1e-12));
    }

    #[test]
    fn random_neighbor_unitary_matches_oracle() {
        let topo = TreeTopology::caterpillar(8).unwrap();
        let mut s = random_canonical(topo.clone(), 3, 6);
        // Pick two qudits on adjacent vertices.
        let (q1, q2) = (0..8)
            .flat_map(|a| (0..8).map(move |b| (a, b)))
            .find(|&(a, b)| a != b && topo.path_between(a, b).unwrap().len() == 2)
            .unwrap();
        let g = GateOp::two(random_unitary(4, &mut rng(7)), q1, q2, 2).unwrap();
        let want = oracle::sv_apply_gate(&s.to_statevector().unwrap(), &g).unwrap();
        apply_neighbor_gate(&mut s, &g, Truncation::NONE).unwrap();
        assert!((s.to_statevector().unwrap().fidelity(&want) - 1.0).abs() < 1e-10);
        assert!(check_canonical(&s, 1e-10).unwrap().passes());
    }

    #[test]
    fn reversed_targets_give_same_state() {
        let topo = TreeTopology::caterpillar(5).unwrap();
        let base = random_canonical(topo, 2, 8);
        let g = GateOp::two(random_unitary(4, &mut rng(9)), 1, 2, 2).unwrap();
        let mut a = base.clone();
        let mut b = base.clone();
        apply_neighbor_gate(&mut a, &g, Truncation::NONE).unwrap();
        apply_neighbor_gate(&mut b, &g.reversed(), Truncation::NONE).unwrap();
        let (va, vb) = (a.to_statevector().unwrap(), b.to_statevector().unwrap());
        assert!((va.fidelity(&vb) - 1.0).abs() < 1e-10);
    }

    #[test]
    fn non_unitary_gate_resweeps() {
        let topo = TreeTopology::caterpillar(6).unwrap();
        let mut s = random_canonical(topo, 2, 10);
        let m = DMatrix::from_fn(4, 4, |r, col| c(((r + 2 * col) % 3) as f64 * 0.3 + 0.1, 0.0));
        let g = GateOp::two(m, 2, 3, 2).unwrap();
        let mut want = oracle::sv_apply_gate(&s.to_statevector().unwrap(), &g).unwrap();
        want.normalize().unwrap();
        apply_neighbor_gate(&mut s, &g, Truncation::NONE).unwrap();
        assert!(s.is_canonical());
        assert!(check_canonical(&s, 1e-10).unwrap().passes());
        assert!((s.to_statevector().unwrap().fidelity(&want) - 1.0).abs() < 1e-10);
    }

    #[test]
    fn neighbor_gate_rejects_distant_qudits() {
        let mut s = TtnState::zero_state(TreeTopology::caterpillar(6).unwrap(), 2).unwrap();
        let r = apply_neighbor_gate(&mut s, &named("CZ", vec![0, 5]), Truncation::NONE);
        assert!(matches!(r, Err(TtnError::NotAdjacent(..))));
    }

    #[test]
    fn tiny_lateral_weight_is_reported() {
        let mut s = random_canonical(TreeTopology::caterpillar(6).unwrap(), 2, 11);
        let u = s.host_vertex(2);
        let lateral = s
            .topology()
            .incidence(u)
            .into_iter()
            .find(|&e| s.topology().is_internal(e) && s.topology().across(e, u) != Endpoint::Vertex(s.host_vertex(3)))
            .unwrap();
        let last = s.weights[lateral].len() - 1;
        s.weights[lateral][last] = 0.0;
        let r = apply_neighbor_gate(&mut s, &named("CZ", vec![2, 3]), Truncation::NONE);
        assert!(matches!(r, Err(TtnError::CorruptWeights(_))));
    }

    #[test]
    fn swap_step_moves_leaf_without_changing_state() {
        let v = Statevector::random(6, 2, &mut rng(12)).unwrap();
        let topo = TreeTopology::caterpillar(6).unwrap();
        let mut s = TtnState::from_statevector(&v, topo).unwrap();
        let q = 1;
        let u = s.host_vertex(q);
        let w = s.topology().across(s.topology().internal_edges()[0], u).vertex().unwrap();
        let c = s.topology().edge_between(u, w).unwrap();
        let moved = s.topology().incidence(w).into_iter().find(|&e| e != c).unwrap();
        swap_step(&mut s, u, w, q, moved, Truncation::NONE).unwrap();
        assert_eq!(s.host_vertex(q), w);
        assert!((s.to_statevector().unwrap().fidelity(&v) - 1.0).abs() < 1e-10);
        assert!(check_canonical(&s, 1e-10).unwrap().passes());
        swap_step(&mut s, w, u, q, moved, Truncation::NONE).unwrap();
        assert_eq!(s.topology(), &TreeTopology::caterpillar(6).unwrap());
        assert!((s.to_statevector().unwrap().fidelity(&v) - 1.0).abs() < 1e-10);
    }

    #[test]
    fn product_swap_keeps_rank_one() {
        let mut s = TtnState::product_state(TreeTopology::caterpillar(5).unwrap(), 2, &vec![plus(); 5]).unwrap();
        let u = s.host_vertex(0);
        let w = 1;
        let c = s.topology().edge_between(u, w).unwrap();
        let moved = s.topology().incidence(w).into_iter().find(|&e| e != c).unwrap();
        swap_step(&mut s, u, w, 0, moved, Truncation::NONE).unwrap();
        assert!(s.edge_ranks().iter().all(|&r| r == 1));
    }

    #[test]
    fn swap_rejects_bad_arguments() {
        let mut s = TtnState::zero_state(TreeTopology::caterpillar(6).unwrap(), 2).unwrap();
        assert!(swap_step(&mut s, 0, 2, 0, 0, Truncation::NONE).is_err());
        let c = s.topology().edge_between(0, 1).unwrap();
        assert!(swap_step(&mut s, 0, 1, 0, c, Truncation::NONE).is_err());
        assert!(swap_step(&mut s, 1, 0, 0, 0, Truncation::NONE).is_err());
    }

    #[test]
    fn routed_cz_between_extremes() {
        let topo = TreeTopology::caterpillar(6).unwrap();
        let mut s = random_canonical(topo.clone(), 2, 13);
        let g = named("CZ", vec![0, 5]);
        let want = oracle::sv_apply_gate(&s.to_statevector().unwrap(), &g).unwrap();
        let out = apply_gate_routed(&mut s, &g, Truncation::NONE).unwrap();
        assert_eq!(s.topology(), &topo);
        assert_eq!(out.swaps, 2 * (out.path_len - 2));
        assert!((s.to_statevector().unwrap().fidelity(&want) - 1.0).abs() < 1e-9);
        assert!(check_canonical(&s, 1e-9).unwrap().passes());
    }

    #[test]
    fn routed_identity_is_noop() {
        let topo = TreeTopology::balanced_binary(9).unwrap();
        let mut s = random_canonical(topo, 2, 14);
        let v = s.to_statevector().unwrap();
        apply_gate_routed(&mut s, &named("II", vec![0, 8]), Truncation::NONE).unwrap();
        assert!((s.to_statevector().unwrap().fidelity(&v) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn balanced_swap_counts_are_logarithmic() {
        let topo = TreeTopology::balanced_binary(16).unwrap();
        let mut s = TtnState::zero_state(topo.clone(), 2).unwrap();
        let mut r = rng(15);
        for _ in 0..10 {
            let q1 = r.random_range(0..16);
            let q2 = (q1 + r.random_range(1..16)) % 16;
            let out = apply_gate_routed(&mut s, &named("CZ", vec![q1, q2]), Truncation::NONE).unwrap();
            assert!(out.swaps <= 2 * out.path_len);
            assert!(out.path_len as f64 <= 2.0 * 16f64.log2());
        }
    }

    #[test]
    fn truncation_bounds_rank() {
        let topo = TreeTopology::caterpillar(8).unwrap();
        let mut s = random_canonical(topo, 4, 16);
        let g = GateOp::two(random_unitary(4, &mut rng(17)), 0, 7, 2).unwrap();
        let out = apply_gate_routed(&mut s, &g, Truncation::new(Some(2), 0.0)).unwrap();
        assert!(s.edge_ranks().iter().all(|&r| r <= 4));
        assert!(out.discarded >= 0.0);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(16))]

            #[test]
            fn unitary_gates_preserve_norm_and_form(seed in any::<u64>(), q1 in 0usize..7, shift in 1usize..7) {
                let q2 = (q1 + shift) % 7;
                let topo = TreeTopology::balanced_binary(7).unwrap();
                let mut s = random_canonical(topo, 2, seed);
                let before = s.edge_ranks();
                let g = GateOp::two(random_unitary(4, &mut rng(seed ^ 1)), q1, q2, 2).unwrap();
                apply_gate_routed(&mut s, &g, Truncation::NONE).unwrap();
                prop_assert!((s.to_statevector().unwrap().norm() - 1.0).abs() < 1e-10);
                prop_assert!(check_canonical(&s, 1e-9).unwrap().passes());
                let path = s.topology().path_between(q1, q2).unwrap();
                if path.len() == 2 {
                    for (a, b) in s.edge_ranks().iter().zip(&before) {
                        prop_assert!(*a <= 2 * b);
                    }
                }
            }

            #[test]
            fn disjoint_gates_commute(seed in any::<u64>()) {
                let topo = TreeTopology::caterpillar(7).unwrap();
                let base = random_canonical(topo, 2, seed);
                let g1 = GateOp::two(random_unitary(4, &mut rng(seed ^ 2)), 0, 4, 2).unwrap();
                let g2 = GateOp::two(random_unitary(4, &mut rng(seed ^ 3)), 2, 6, 2).unwrap();
                let mut a = base.clone();
                apply_gate_routed(&mut a, &g1, Truncation::NONE).unwrap();
                apply_gate_routed(&mut a, &g2, Truncation::NONE).unwrap();
                let mut b = base;
                apply_gate_routed(&mut b, &g2, Truncation::NONE).unwrap();
                apply_gate_routed(&mut b, &g1, Truncation::NONE).unwrap();
                let f = a.to_statevector().unwrap().fidelity(&b.to_statevector().unwrap());
                prop_assert!((f - 1.0).abs() < 1e-9);
            }
        }
    }
}
