//! Tree tensor network states and their dense statevector counterpart.
//!
//! A [`TtnState`] stores one three-index tensor per internal vertex, with
//! index order equal to the vertex's slot order in the topology, and a weight
//! sequence on every internal edge. Weights are never folded into the
//! tensors: the amplitude of a configuration is the full contraction of all
//! tensors with each internal edge's weights multiplied in once.
//!
//! Statevectors are big-endian: qudit 0 is the most significant digit of the
//! amplitude index.

use std::env;

use num_complex::Complex64 as C64;
use num_traits::{One, Zero};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::canonical;
use crate::error::{TtnError, TtnResult};
use crate::tensor::{permute, svd_matrix, DenseTensor, Truncation};
use crate::topology::{Edge, Endpoint, TreeTopology};

/// Default cap on dense amplitude counts.
pub const DEFAULT_DENSE_BUDGET: usize = 1 << 14;
/// Environment variable overriding [`DEFAULT_DENSE_BUDGET`].
pub const DENSE_BUDGET_ENV: &str = "TTN_DENSE_BUDGET";

const UNIT_TOL: f64 = 1e-10;
/// Relative squared weight below which a Schmidt value counts as zero.
pub(crate) const RANK_FLOOR: f64 = 1e-28;

pub fn dense_budget() -> usize {
    env::var(DENSE_BUDGET_ENV).ok().and_then(|v| v.trim().parse().ok()).unwrap_or(DEFAULT_DENSE_BUDGET)
}

pub(crate) fn check_budget(d: usize, n: usize) -> TtnResult<usize> {
    let budget = dense_budget();
    let mut size: usize = 1;
    for _ in 0..n {
        size = size.checked_mul(d).filter(|&s| s <= budget).ok_or(TtnError::BudgetExceeded {
            required: d.checked_pow(n as u32).unwrap_or(usize::MAX),
            budget,
        })?;
    }
    Ok(size)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Statevector {
    pub n: usize,
    pub d: usize,
    pub amplitudes: Vec<C64>,
}

impl Statevector {
    pub fn new(n: usize, d: usize, amplitudes: Vec<C64>) -> TtnResult<Self> {
        let len = check_budget(d, n)?;
        if amplitudes.len() != len {
            return Err(TtnError::ShapeMismatch(format!("{n} qudits of dimension {d} need {len} amplitudes")));
        }
        Ok(Self { n, d, amplitudes })
    }

    pub fn basis(n: usize, d: usize, digits: &[usize]) -> TtnResult<Self> {
        let len = check_budget(d, n)?;
        if digits.len() != n || digits.iter().any(|&x| x >= d) {
            return Err(TtnError::InvalidArgument(format!("bad basis label {digits:?}")));
        }
        let mut amplitudes = vec![C64::zero(); len];
        amplitudes[digits.iter().fold(0, |acc, &x| acc * d + x)] = C64::one();
        Ok(Self { n, d, amplitudes })
    }

    pub fn product(locals: &[Vec<C64>]) -> TtnResult<Self> {
        let d = locals.first().map(|v| v.len()).unwrap_or(1);
        let len = check_budget(d, locals.len())?;
        let mut amplitudes = vec![C64::one()];
        for local in locals {
            if local.len() != d {
                return Err(TtnError::ShapeMismatch("local vectors differ in dimension".into()));
            }
            amplitudes = amplitudes.iter().flat_map(|a| local.iter().map(move |b| a * b)).collect();
        }
        debug_assert_eq!(amplitudes.len(), len);
        Ok(Self { n: locals.len(), d, amplitudes })
    }

    pub fn random(n: usize, d: usize, rng: &mut impl Rng) -> TtnResult<Self> {
        let len = check_budget(d, n)?;
        let mut v = Self { n, d, amplitudes: (0..len).map(|_| gaussian_c64(rng)).collect() };
        v.normalize()?;
        Ok(v)
    }

    pub fn norm(&self) -> f64 {
        self.amplitudes.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn normalize(&mut self) -> TtnResult<()> {
        let norm = self.norm();
        if norm == 0.0 || !norm.is_finite() {
            return Err(TtnError::ZeroNorm);
        }
        self.amplitudes.iter_mut().for_each(|z| *z /= norm);
        Ok(())
    }

    /// `⟨self|other⟩`.
    pub fn inner(&self, other: &Statevector) -> C64 {
        self.amplitudes.iter().zip(&other.amplitudes).map(|(a, b)| a.conj() * b).sum()
    }

    /// `|⟨self|other⟩|` for normalized vectors.
    pub fn fidelity(&self, other: &Statevector) -> f64 {
        self.inner(other).norm()
    }

    pub fn as_tensor(&self) -> DenseTensor {
        DenseTensor::new(vec![self.d; self.n], self.amplitudes.clone()).expect("statevector length matches d^n")
    }
}

/// Standard complex Gaussian sample (unit variance per component).
pub fn gaussian_c64(rng: &mut impl Rng) -> C64 {
    let u1: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
    let u2: f64 = rng.random();
    let r = (-2.0 * u1.ln()).sqrt();
    let theta = std::f64::consts::TAU * u2;
    C64::new(r * theta.cos(), r * theta.sin())
}

#[derive(Clone, Debug, PartialEq)]
pub struct TtnState {
    pub(crate) topology: TreeTopology,
    pub(crate) d: usize,
    pub(crate) tensors: Vec<DenseTensor>,
    /// Indexed by edge id; empty for leaf edges.
    pub(crate) weights: Vec<Vec<f64>>,
    pub(crate) canonical: bool,
    pub(crate) normalized: bool,
}

impl TtnState {
    /// Assemble a state from raw parts, checking every index range.
    pub fn from_parts(
        topology: TreeTopology,
        d: usize,
        tensors: Vec<DenseTensor>,
        weights: Vec<Vec<f64>>,
    ) -> TtnResult<Self> {
        if d == 0 {
            return Err(TtnError::InvalidArgument("local dimension must be positive".into()));
        }
        if tensors.len() != topology.num_vertices() || weights.len() != topology.num_edges() {
            return Err(TtnError::ShapeMismatch("tensor or weight count does not match topology".into()));
        }
        for e in 0..topology.num_edges() {
            let internal = topology.is_internal(e);
            if internal && weights[e].is_empty() {
                return Err(TtnError::ShapeMismatch(format!("internal edge {e} has no weights")));
            }
            if !internal && !weights[e].is_empty() {
                return Err(TtnError::ShapeMismatch(format!("leaf edge {e} carries weights")));
            }
            if weights[e].iter().any(|w| !w.is_finite() || *w < 0.0) {
                return Err(TtnError::InvalidArgument(format!("edge {e} has a negative or non-finite weight")));
            }
        }
        let state = Self { topology, d, tensors, weights, canonical: false, normalized: false };
        for v in 0..state.topology.num_vertices() {
            let expected: Vec<usize> = state.topology.incidence(v).iter().map(|&e| state.bond_dim(e)).collect();
            if state.tensors[v].shape() != expected.as_slice() {
                return Err(TtnError::ShapeMismatch(format!(
                    "vertex {v} tensor has shape {:?}, expected {expected:?}",
                    state.tensors[v].shape()
                )));
            }
        }
        Ok(state)
    }

    /// Product state from one unit vector per qudit.
    pub fn product_state(topology: TreeTopology, d: usize, locals: &[Vec<C64>]) -> TtnResult<Self> {
        if locals.len() != topology.num_qudits() {
            return Err(TtnError::ShapeMismatch(format!(
                "{} local vectors for {} qudits",
                locals.len(),
                topology.num_qudits()
            )));
        }
        for (q, local) in locals.iter().enumerate() {
            if local.len() != d {
                return Err(TtnError::ShapeMismatch(format!("qudit {q} vector has length {}", local.len())));
            }
            let norm: f64 = local.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > UNIT_TOL {
                return Err(TtnError::InvalidArgument(format!("qudit {q} vector has norm {norm}")));
            }
        }
        let mut tensors = Vec::with_capacity(topology.num_vertices());
        for v in 0..topology.num_vertices() {
            let slots = topology.incidence(v);
            let leaf_of: Vec<Option<usize>> = slots
                .iter()
                .map(|&e| match topology.edge(e).b {
                    Endpoint::Leaf(q) => Some(q),
                    Endpoint::Vertex(_) => None,
                })
                .collect();
            let shape: Vec<usize> = leaf_of.iter().map(|l| if l.is_some() { d } else { 1 }).collect();
            tensors.push(DenseTensor::from_fn(shape, |idx| {
                idx.iter().zip(&leaf_of).fold(C64::one(), |acc, (&i, l)| match l {
                    Some(q) => acc * locals[*q][i],
                    None => acc,
                })
            }));
        }
        let weights =
            (0..topology.num_edges()).map(|e| if topology.is_internal(e) { vec![1.0] } else { vec![] }).collect();
        let mut state = Self::from_parts(topology, d, tensors, weights)?;
        state.canonical = true;
        state.normalized = true;
        Ok(state)
    }

    /// All qudits in basis state `|0⟩`.
    pub fn zero_state(topology: TreeTopology, d: usize) -> TtnResult<Self> {
        let mut zero = vec![C64::zero(); d];
        zero[0] = C64::one();
        let n = topology.num_qudits();
        Self::product_state(topology, d, &vec![zero; n])
    }

    /// Random (non-canonical) network with every internal edge of rank
    /// `bond_dim` and unit weights.
    pub fn random(topology: TreeTopology, d: usize, bond_dim: usize, rng: &mut impl Rng) -> TtnResult<Self> {
        if bond_dim == 0 {
            return Err(TtnError::InvalidArgument("bond dimension must be positive".into()));
        }
        let weights: Vec<Vec<f64>> = (0..topology.num_edges())
            .map(|e| if topology.is_internal(e) { vec![1.0; bond_dim] } else { vec![] })
            .collect();
        let tensors = (0..topology.num_vertices())
            .map(|v| {
                let shape = topology
                    .incidence(v)
                    .iter()
                    .map(|&e| if topology.is_internal(e) { bond_dim } else { d })
                    .collect();
                DenseTensor::from_fn(shape, |_| gaussian_c64(rng))
            })
            .collect();
        Self::from_parts(topology, d, tensors, weights)
    }

    pub fn topology(&self) -> &TreeTopology {
        &self.topology
    }

    pub fn local_dim(&self) -> usize {
        self.d
    }

    pub fn num_qudits(&self) -> usize {
        self.topology.num_qudits()
    }

    pub fn tensor(&self, v: usize) -> &DenseTensor {
        &self.tensors[v]
    }

    /// Replace a vertex tensor; clears the canonical and normalized flags.
    pub fn set_tensor(&mut self, v: usize, t: DenseTensor) -> TtnResult<()> {
        let expected: Vec<usize> = self.topology.incidence(v).iter().map(|&e| self.bond_dim(e)).collect();
        if t.shape() != expected.as_slice() {
            return Err(TtnError::ShapeMismatch(format!("expected shape {expected:?}, got {:?}", t.shape())));
        }
        self.tensors[v] = t;
        self.invalidate();
        Ok(())
    }

    pub fn weights(&self, e: usize) -> &[f64] {
        &self.weights[e]
    }

    pub fn is_canonical(&self) -> bool {
        self.canonical
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub(crate) fn invalidate(&mut self) {
        self.canonical = false;
        self.normalized = false;
    }

    /// Range of the index carried by edge `e`.
    pub fn bond_dim(&self, e: usize) -> usize {
        if self.topology.is_internal(e) {
            self.weights[e].len()
        } else {
            self.d
        }
    }

    /// Largest internal-edge rank χ (1 when there are no internal edges).
    pub fn chi_max_observed(&self) -> usize {
        self.topology.internal_edges().iter().map(|&e| self.weights[e].len()).max().unwrap_or(1)
    }

    pub fn edge_ranks(&self) -> Vec<usize> {
        self.topology.internal_edges().iter().map(|&e| self.weights[e].len()).collect()
    }

    /// Stored weights of an internal edge; these are its Schmidt
    /// coefficients when the state is canonical.
    pub fn schmidt_spectrum(&self, e: usize) -> TtnResult<&[f64]> {
        if e >= self.topology.num_edges() {
            return Err(TtnError::InvalidArgument(format!("no edge {e}")));
        }
        if !self.topology.is_internal(e) {
            return Err(TtnError::LeafEdge(e));
        }
        if !self.canonical {
            return Err(TtnError::NotCanonical);
        }
        Ok(&self.weights[e])
    }

    /// Contract the whole network into a dense statevector.
    pub fn to_statevector(&self) -> TtnResult<Statevector> {
        let n = self.num_qudits();
        check_budget(self.d, n)?;
        let root = 0;
        let slots = self.topology.incidence(root);
        let mut acc = self.tensors[root].clone();
        let mut labels: Vec<Label> = slots.iter().map(|&e| Label::Edge(e)).collect();
        for &e in &slots {
            self.expand(&mut acc, &mut labels, e, root)?;
        }
        let order = qudit_order(&labels);
        let full = permute(&acc, &order)?;
        Statevector::new(n, self.d, full.into_data())
    }

    /// Replace the index labelled `Edge(e)` in `acc` by the subtree beyond
    /// `e` as seen from vertex `from`.
    fn expand(&self, acc: &mut DenseTensor, labels: &mut Vec<Label>, e: usize, from: usize) -> TtnResult<()> {
        let pos = labels.iter().position(|l| *l == Label::Edge(e)).expect("edge label present");
        match self.topology.across(e, from) {
            Endpoint::Leaf(q) => {
                labels[pos] = Label::Qudit(q);
                Ok(())
            }
            Endpoint::Vertex(w) => {
                let mut child = self.tensors[w].clone();
                let slot = self.topology.slot_of(w, e).expect("edge incident to vertex");
                child.scale_axis(slot, &self.weights[e]);
                let child_labels: Vec<Label> =
                    self.topology.incidence(w).iter().map(|&f| Label::Edge(f)).collect();
                let merged = crate::tensor::contract(acc, &child, &[(pos, slot)])?;
                let mut new_labels: Vec<Label> =
                    labels.iter().enumerate().filter(|&(i, _)| i != pos).map(|(_, l)| *l).collect();
                new_labels.extend(child_labels.iter().enumerate().filter(|&(i, _)| i != slot).map(|(_, l)| *l));
                *acc = merged;
                *labels = new_labels;
                for (i, &f) in self.topology.incidence(w).iter().enumerate() {
                    if i != slot {
                        self.expand(acc, labels, f, w)?;
                    }
                }
                Ok(())
            }
        }
    }

    /// Canonical network reproducing `v` exactly on the given topology.
    ///
    /// Each child-side subtree receives the leading left singular vectors of
    /// its bipartition; the remaining gauge is fixed by a canonical sweep.
    pub fn from_statevector(v: &Statevector, topology: TreeTopology) -> TtnResult<Self> {
        let n = topology.num_qudits();
        if v.n != n {
            return Err(TtnError::ShapeMismatch(format!("statevector has {} qudits, topology {n}", v.n)));
        }
        check_budget(v.d, n)?;
        let d = v.d;
        let psi = v.as_tensor();
        let bfs = topology.bfs_from(0);
        // Isometry per edge: (subtree qudits in sorted order) × rank, stored as
        // a tensor with one index per qudit followed by the bond.
        let mut basis: Vec<Option<(Vec<usize>, DenseTensor)>> = vec![None; topology.num_edges()];
        for q in 0..n {
            let e = topology.leaf_edge(q);
            let id = DenseTensor::from_fn(vec![d, d], |i| if i[0] == i[1] { C64::one() } else { C64::zero() });
            basis[e] = Some((vec![q], id));
        }
        for &(v_id, up) in bfs.iter().skip(1) {
            let e = up.expect("non-root vertex has a parent edge");
            let side = topology.side_of_vertex(e, v_id);
            let sub = topology.qudits_on_side(e, side);
            let rest: Vec<usize> = (0..n).filter(|q| !sub.contains(q)).collect();
            let order: Vec<usize> = sub.iter().chain(&rest).copied().collect();
            let m = permute(&psi, &order)?.to_matrix(sub.len());
            let (u, s, _) = svd_matrix(m)?;
            let keep = Truncation::new(None, RANK_FLOOR).kept(&s);
            let mut shape = vec![d; sub.len()];
            shape.push(keep);
            basis[e] = Some((sub, DenseTensor::from_matrix(&u.columns(0, keep).into_owned(), shape)?));
        }
        let mut weights: Vec<Vec<f64>> = vec![vec![]; topology.num_edges()];
        for e in topology.internal_edges() {
            let rank = basis[e].as_ref().map(|b| b.1.shape().last().copied().unwrap_or(1)).unwrap_or(1);
            weights[e] = vec![1.0; rank];
        }
        let mut tensors = Vec::with_capacity(topology.num_vertices());
        for v_id in 0..topology.num_vertices() {
            let up = bfs.iter().find(|(w, _)| *w == v_id).and_then(|(_, up)| *up);
            let slots = topology.incidence(v_id);
            // Target: the parent isometry (or psi at the root), projected onto
            // the children's isometries.
            let (target_qudits, mut target): (Vec<usize>, DenseTensor) = match up {
                Some(e) => basis[e].clone().expect("basis computed"),
                None => ((0..n).collect(), psi.clone()),
            };
            let mut labels: Vec<Label> = target_qudits.iter().map(|&q| Label::Qudit(q)).collect();
            if let Some(e) = up {
                labels.push(Label::Edge(e));
            }
            for &f in slots.iter().filter(|&&f| Some(f) != up) {
                let (sub, iso) = basis[f].as_ref().expect("basis computed");
                let positions: Vec<usize> =
                    sub.iter().map(|q| labels.iter().position(|l| *l == Label::Qudit(*q)).unwrap()).collect();
                let pairs: Vec<(usize, usize)> = positions.iter().enumerate().map(|(k, &p)| (p, k)).collect();
                target = crate::tensor::contract(&target, &iso.conj(), &pairs)?;
                labels = labels.iter().enumerate().filter(|(i, _)| !positions.contains(i)).map(|(_, l)| *l).collect();
                labels.push(Label::Edge(f));
            }
            let order: Vec<usize> =
                slots.iter().map(|&f| labels.iter().position(|l| *l == Label::Edge(f)).unwrap()).collect();
            tensors.push(permute(&target, &order)?);
        }
        let mut state = Self::from_parts(topology, d, tensors, weights)?;
        canonical::canonicalize(&mut state, 0.0)?;
        Ok(state)
    }

    pub fn to_json(&self) -> TtnResult<String> {
        serde_json::to_string(&StateDocument::from_state(self)).map_err(|e| TtnError::Parse(e.to_string()))
    }

    pub fn from_json(text: &str) -> TtnResult<Self> {
        let doc: StateDocument = serde_json::from_str(text).map_err(|e| TtnError::Parse(e.to_string()))?;
        doc.into_state()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Label {
    Qudit(usize),
    Edge(usize),
}

fn qudit_order(labels: &[Label]) -> Vec<usize> {
    let mut pos: Vec<(usize, usize)> = labels
        .iter()
        .enumerate()
        .map(|(i, l)| match l {
            Label::Qudit(q) => (*q, i),
            Label::Edge(_) => unreachable!("all edges expanded"),
        })
        .collect();
    pos.sort_unstable();
    pos.into_iter().map(|(_, i)| i).collect()
}

#[derive(Serialize, Deserialize)]
struct TensorDocument {
    shape: Vec<usize>,
    /// Interleaved real and imaginary parts.
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct StateDocument {
    format: String,
    version: u32,
    n: usize,
    d: usize,
    edges: Vec<Edge>,
    incidence: Vec<[usize; 3]>,
    tensors: Vec<TensorDocument>,
    weights: Vec<Vec<f64>>,
    canonical: bool,
    normalized: bool,
}

const FORMAT_NAME: &str = "ttn-state";

impl StateDocument {
    fn from_state(s: &TtnState) -> Self {
        let topo = &s.topology;
        Self {
            format: FORMAT_NAME.into(),
            version: 1,
            n: topo.num_qudits(),
            d: s.d,
            edges: topo.edges().to_vec(),
            incidence: (0..topo.num_vertices()).map(|v| topo.incidence(v)).collect(),
            tensors: s
                .tensors
                .iter()
                .map(|t| TensorDocument {
                    shape: t.shape().to_vec(),
                    data: t.data().iter().flat_map(|z| [z.re, z.im]).collect(),
                })
                .collect(),
            weights: s.weights.clone(),
            canonical: s.canonical,
            normalized: s.normalized,
        }
    }

    fn into_state(self) -> TtnResult<TtnState> {
        if self.format != FORMAT_NAME || self.version != 1 {
            return Err(TtnError::Parse(format!("unsupported document {} v{}", self.format, self.version)));
        }
        let topology = TreeTopology::from_parts(self.edges, self.incidence)?;
        if topology.num_qudits() != self.n {
            return Err(TtnError::Parse("topology does not match document header".into()));
        }
        let tensors = self
            .tensors
            .into_iter()
            .map(|t| {
                if t.data.len() % 2 != 0 {
                    return Err(TtnError::Parse("odd interleaved data length".into()));
                }
                let data = t.data.chunks(2).map(|c| C64::new(c[0], c[1])).collect();
                DenseTensor::new(t.shape, data)
            })
            .collect::<TtnResult<Vec<_>>>()?;
        let mut state = TtnState::from_parts(topology, self.d, tensors, self.weights)?;
        state.canonical = self.canonical;
        state.normalized = self.normalized;
        Ok(state)
    }
}
