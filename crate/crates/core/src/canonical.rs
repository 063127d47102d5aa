//! Canonical form: every internal edge carries the Schmidt coefficients of
//! its bipartition and both subtrees hold orthonormal Schmidt vectors.
//!
//! The sweep roots the tree at vertex 0. An inward pass accumulates, for
//! each edge, the Gram matrix of the subtree hanging below it. The outward
//! pass then visits edges top-down; the Gram matrix above an edge is built
//! from the current parent tensor, whose other edges are either already
//! canonical (diagonal environment) or still carry their inward Gram.

use std::collections::HashMap;

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use num_traits::Zero;

use crate::error::{TtnError, TtnResult};
use crate::state::{TtnState, RANK_FLOOR};
use crate::tensor::{eigh, permute, svd_matrix, DenseTensor, Truncation};
use crate::topology::{Endpoint, Side};

/// Relative eigenvalue threshold below which a Gram direction is treated
/// as null.
pub const GRAM_EPS: f64 = 1e-12;

/// What one tensor slot sees beyond its edge.
#[derive(Clone, Debug)]
pub(crate) enum Env {
    /// Orthonormal single-qudit basis (leaf edges).
    Identity,
    /// Orthonormal subtree weighted by the edge weights: `diag(λ²)`.
    Diagonal(Vec<f64>),
    /// General weighted Gram matrix `λ G λ`.
    Full(DMatrix<C64>),
}

impl Env {
    pub(crate) fn weighted(weights: &[f64], gram: &DMatrix<C64>) -> Env {
        Env::Full(DMatrix::from_fn(gram.nrows(), gram.ncols(), |i, j| gram[(i, j)] * weights[i] * weights[j]))
    }
}

/// Gram matrix of the subtree states in `side`'s direction of an edge.
#[derive(Clone, Debug, PartialEq)]
pub struct GramMatrix {
    pub edge: usize,
    pub side: Side,
    /// `m[(α, β)] = ⟨φ_α|φ_β⟩`.
    pub matrix: DMatrix<C64>,
}

/// Apply an environment to `t`'s index `axis`: `out[.., i, ..] = Σ_j E[i, j] t[.., j, ..]`.
pub(crate) fn apply_env(t: &DenseTensor, axis: usize, env: &Env) -> TtnResult<DenseTensor> {
    match env {
        Env::Identity => Ok(t.clone()),
        Env::Diagonal(w2) => {
            let mut out = t.clone();
            out.scale_axis(axis, w2);
            Ok(out)
        }
        Env::Full(m) => t.apply_axis_matrix(axis, &m.transpose()),
    }
}

/// `G[α, β] = Σ conj(T[α, i, k]) E1[i, j] E2[k, l] T[β, j, l]` with `α` on
/// slot `open`; `envs` lists the environments of the other two slots in
/// slot order.
pub(crate) fn local_gram(t: &DenseTensor, open: usize, envs: [&Env; 2]) -> TtnResult<DMatrix<C64>> {
    let others: Vec<usize> = (0..3).filter(|&k| k != open).collect();
    let p = permute(t, &[open, others[0], others[1]])?;
    let mut s = apply_env(&p, 1, envs[0])?;
    s = apply_env(&s, 2, envs[1])?;
    let tm = p.to_matrix(1);
    let sm = s.to_matrix(1);
    Ok(tm.conjugate() * sm.transpose())
}

fn slot_env(state: &TtnState, v: usize, slot: usize, grams: &HashMap<(usize, usize), DMatrix<C64>>) -> Env {
    let e = state.topology.incidence(v)[slot];
    match state.topology.across(e, v) {
        Endpoint::Leaf(_) => Env::Identity,
        Endpoint::Vertex(w) => Env::weighted(&state.weights[e], &grams[&(e, w)]),
    }
}

/// Memoize the Gram matrix of the subtree containing vertex `v` when edge
/// `e` is cut, keyed by `(e, v)`.
fn directed_gram(
    state: &TtnState,
    e: usize,
    v: usize,
    memo: &mut HashMap<(usize, usize), DMatrix<C64>>,
) -> TtnResult<()> {
    if memo.contains_key(&(e, v)) {
        return Ok(());
    }
    let slots = state.topology.incidence(v);
    let open = state.topology.slot_of(v, e).expect("edge incident to vertex");
    for (k, &f) in slots.iter().enumerate() {
        if k != open {
            if let Endpoint::Vertex(w) = state.topology.across(f, v) {
                directed_gram(state, f, w, memo)?;
            }
        }
    }
    let envs: Vec<Env> = (0..3).filter(|&k| k != open).map(|k| slot_env(state, v, k, memo)).collect();
    let g = local_gram(&state.tensors[v], open, [&envs[0], &envs[1]])?;
    memo.insert((e, v), g);
    Ok(())
}

/// Gram matrix of the subtree states on `side` of internal edge `e`.
pub fn gram_matrix(state: &TtnState, e: usize, side: Side) -> TtnResult<GramMatrix> {
    if e >= state.topology.num_edges() {
        return Err(TtnError::InvalidArgument(format!("no edge {e}")));
    }
    if !state.topology.is_internal(e) {
        return Err(TtnError::LeafEdge(e));
    }
    let v = state.topology.endpoint(e, side).vertex().expect("internal edge");
    let mut memo = HashMap::new();
    directed_gram(state, e, v, &mut memo)?;
    Ok(GramMatrix { edge: e, side, matrix: memo.remove(&(e, v)).expect("computed") })
}

/// Gauge-fix one edge given both side Grams; returns the discarded weight.
///
/// With `G = W D W†` on each side, the state across the edge is
/// `Q_a K Q_bᵀ` with `K = √D_a W_a† Λ conj(W_b) √D_b`; the SVD of `K` gives
/// the Schmidt weights and the rotations absorbed into the two tensors.
fn canonicalize_edge_with(
    state: &mut TtnState,
    e: usize,
    gram_a: &DMatrix<C64>,
    gram_b: &DMatrix<C64>,
    trunc: Truncation,
) -> TtnResult<f64> {
    let edge = state.topology.edge(e);
    let (u, v) = match (edge.a, edge.b) {
        (Endpoint::Vertex(u), Endpoint::Vertex(v)) => (u, v),
        _ => return Err(TtnError::LeafEdge(e)),
    };
    let (wa, da) = retained_basis(gram_a)?;
    let (wb, db) = retained_basis(gram_b)?;
    let lambda = &state.weights[e];
    let k = DMatrix::from_fn(da.len(), db.len(), |i, j| {
        let mut acc = C64::zero();
        for (alpha, &l) in lambda.iter().enumerate() {
            acc += wa[(alpha, i)].conj() * l * wb[(alpha, j)].conj();
        }
        acc * (da[i] * db[j]).sqrt()
    });
    let (uk, s, vt) = svd_matrix(k)?;
    let keep = trunc.with_floor(RANK_FLOOR).kept(&s);
    let discarded: f64 = s[keep..].iter().map(|x| x * x).sum();
    let xa = DMatrix::from_fn(wa.nrows(), keep, |r, c| {
        (0..da.len()).map(|i| wa[(r, i)] * (uk[(i, c)] / da[i].sqrt())).sum::<C64>()
    });
    let xb = DMatrix::from_fn(wb.nrows(), keep, |r, c| {
        (0..db.len()).map(|j| wb[(r, j)] * (vt[(c, j)] / db[j].sqrt())).sum::<C64>()
    });
    let su = state.topology.slot_of(u, e).expect("incident");
    let sv = state.topology.slot_of(v, e).expect("incident");
    state.tensors[u] = state.tensors[u].apply_axis_matrix(su, &xa)?;
    state.tensors[v] = state.tensors[v].apply_axis_matrix(sv, &xb)?;
    let mut w: Vec<f64> = s[..keep].to_vec();
    let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return Err(TtnError::ZeroNorm);
    }
    w.iter_mut().for_each(|x| *x /= norm);
    state.weights[e] = w;
    Ok(discarded / (norm * norm + discarded))
}

/// Eigenvectors of a Gram matrix with eigenvalue above `GRAM_EPS · max`.
fn retained_basis(g: &DMatrix<C64>) -> TtnResult<(DMatrix<C64>, Vec<f64>)> {
    let (vals, vecs) = eigh(g)?;
    let max = vals.first().copied().unwrap_or(0.0);
    if !(max > 0.0) {
        return Err(TtnError::ZeroNorm);
    }
    let keep = vals.iter().take_while(|&&x| x > GRAM_EPS * max).count();
    Ok((vecs.columns(0, keep).into_owned(), vals[..keep].to_vec()))
}

/// Bring a single edge into Schmidt form; returns the discarded weight.
///
/// The rest of the network is left in its current gauge, so the canonical
/// flag is kept only when nothing was truncated. The state is rescaled to
/// unit norm.
pub fn canonicalize_edge(state: &mut TtnState, e: usize, cutoff: f64) -> TtnResult<f64> {
    let ga = gram_matrix(state, e, Side::A)?;
    let gb = gram_matrix(state, e, Side::B)?;
    let was_canonical = state.canonical;
    let discarded = canonicalize_edge_with(state, e, &ga.matrix, &gb.matrix, Truncation::new(None, cutoff))?;
    state.canonical = was_canonical && discarded == 0.0;
    state.normalized = true;
    Ok(discarded)
}

/// Full canonical sweep with a relative cutoff; returns the largest
/// discarded weight over all edges.
pub fn canonicalize(state: &mut TtnState, cutoff: f64) -> TtnResult<f64> {
    canonicalize_with(state, Truncation::new(None, cutoff))
}

/// Discarded weight above which a truncating sweep is followed by an exact
/// one; below it the basis perturbation is under 1e-12.
const RESWEEP_THRESHOLD: f64 = 1e-24;

/// Full canonical sweep with a general truncation policy.
pub fn canonicalize_with(state: &mut TtnState, trunc: Truncation) -> TtnResult<f64> {
    let topo = state.topology.clone();
    if topo.num_vertices() == 1 {
        let norm = state.tensors[0].norm();
        if norm == 0.0 || !norm.is_finite() {
            return Err(TtnError::ZeroNorm);
        }
        state.tensors[0].scale(C64::new(1.0 / norm, 0.0));
        state.canonical = true;
        state.normalized = true;
        return Ok(0.0);
    }
    let bfs = topo.bfs_from(0);
    let mut below: HashMap<(usize, usize), DMatrix<C64>> = HashMap::new();
    for &(v, up) in bfs.iter().rev() {
        if let Some(e) = up {
            directed_gram(state, e, v, &mut below)?;
        }
    }
    let mut processed = vec![false; topo.num_edges()];
    let mut max_discarded: f64 = 0.0;
    for &(v, up) in &bfs {
        let slots = topo.incidence(v);
        for (k, &e) in slots.iter().enumerate() {
            if Some(e) == up || !topo.is_internal(e) {
                continue;
            }
            let envs: Vec<Env> = (0..3)
                .filter(|&j| j != k)
                .map(|j| {
                    let f = slots[j];
                    if !topo.is_internal(f) {
                        Env::Identity
                    } else if Some(f) == up || processed[f] {
                        Env::Diagonal(state.weights[f].iter().map(|x| x * x).collect())
                    } else {
                        let w = match topo.across(f, v) {
                            Endpoint::Vertex(w) => w,
                            Endpoint::Leaf(_) => unreachable!("internal edge"),
                        };
                        Env::weighted(&state.weights[f], &below[&(f, w)])
                    }
                })
                .collect();
            let g_here = local_gram(&state.tensors[v], k, [&envs[0], &envs[1]])?;
            let child = match topo.across(e, v) {
                Endpoint::Vertex(w) => w,
                Endpoint::Leaf(_) => unreachable!("internal edge"),
            };
            let g_child = below.remove(&(e, child)).expect("inward gram");
            let (ga, gb) = if topo.side_of_vertex(e, v) == Side::A { (g_here, g_child) } else { (g_child, g_here) };
            let d = canonicalize_edge_with(state, e, &ga, &gb, trunc)?;
            max_discarded = max_discarded.max(d);
            processed[e] = true;
        }
    }
    // Truncating an edge perturbs the Schmidt bases of edges already swept;
    // one exact pass restores them without raising any rank.
    if max_discarded > RESWEEP_THRESHOLD {
        canonicalize_with(state, Truncation::NONE)?;
    }
    state.canonical = true;
    state.normalized = true;
    Ok(max_discarded)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EdgeDeviation {
    pub edge: usize,
    /// `‖G_A − I‖` (Frobenius).
    pub gram_a: f64,
    pub gram_b: f64,
    /// `|Σλ² − 1|`.
    pub weight_norm: f64,
    /// Weights positive and non-increasing.
    pub ordered: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CanonicalReport {
    pub edges: Vec<EdgeDeviation>,
    /// `|⟨Ψ|Ψ⟩ − 1|`; the only check when there are no internal edges.
    pub norm_deviation: f64,
    pub tol: f64,
}

impl CanonicalReport {
    pub fn max_deviation(&self) -> f64 {
        self.edges
            .iter()
            .map(|d| d.gram_a.max(d.gram_b).max(d.weight_norm))
            .fold(self.norm_deviation, f64::max)
    }

    pub fn passes(&self) -> bool {
        self.max_deviation() < self.tol && self.edges.iter().all(|d| d.ordered)
    }
}

fn identity_deviation(m: &DMatrix<C64>) -> f64 {
    let n = m.nrows();
    (m - DMatrix::<C64>::identity(n, n)).norm()
}

/// Measure the deviation of every edge from canonical form.
pub fn check_canonical(state: &TtnState, tol: f64) -> TtnResult<CanonicalReport> {
    let topo = &state.topology;
    let mut memo = HashMap::new();
    let mut edges = Vec::new();
    for e in topo.internal_edges() {
        let edge = topo.edge(e);
        let (u, v) = (edge.a.vertex().expect("internal"), edge.b.vertex().expect("internal"));
        directed_gram(state, e, u, &mut memo)?;
        directed_gram(state, e, v, &mut memo)?;
        let w = &state.weights[e];
        edges.push(EdgeDeviation {
            edge: e,
            gram_a: identity_deviation(&memo[&(e, u)]),
            gram_b: identity_deviation(&memo[&(e, v)]),
            weight_norm: (w.iter().map(|x| x * x).sum::<f64>() - 1.0).abs(),
            ordered: w.iter().all(|&x| x > 0.0) && w.windows(2).all(|p| p[0] >= p[1]),
        });
    }
    let norm_sqr = if let Some(e) = topo.internal_edges().first().copied() {
        let u = topo.edge(e).a.vertex().expect("internal");
        let g = &memo[&(e, u)];
        let w = &state.weights[e];
        let other = &memo[&(e, topo.edge(e).b.vertex().expect("internal"))];
        // ⟨Ψ|Ψ⟩ = Σ λ_α λ_β G_A[α,β] G_B[α,β].
        let mut acc = C64::zero();
        for a in 0..w.len() {
            for b in 0..w.len() {
                acc += g[(a, b)] * w[a] * w[b] * other[(a, b)];
            }
        }
        acc.re
    } else {
        state.tensors[0].norm().powi(2)
    };
    Ok(CanonicalReport { edges, norm_deviation: (norm_sqr - 1.0).abs(), tol })
}

/// Run [`check_canonical`] and set the state's canonical flag from it.
pub fn certify(state: &mut TtnState, tol: f64) -> TtnResult<CanonicalReport> {
    let report = check_canonical(state, tol)?;
    state.canonical = report.passes();
    Ok(report)
}

/// Keep the `chi_tilde` largest weights of edge `e`; returns the kept
/// weight `K = Σ_{α ≤ χ̃} λ_α²`, whose square root is the fidelity between
/// the truncated and the original state.
pub fn truncate_edge(state: &mut TtnState, e: usize, chi_tilde: usize) -> TtnResult<f64> {
    if chi_tilde < 1 {
        return Err(TtnError::InvalidArgument("chi_tilde must be at least 1".into()));
    }
    if !state.topology.is_internal(e) {
        return Err(TtnError::LeafEdge(e));
    }
    if !state.canonical {
        return Err(TtnError::NotCanonical);
    }
    let w = &state.weights[e];
    let total: f64 = w.iter().map(|x| x * x).sum();
    if chi_tilde >= w.len() {
        return Ok(1.0);
    }
    let kept: f64 = w[..chi_tilde].iter().map(|x| x * x).sum::<f64>() / total;
    let edge = state.topology.edge(e);
    for end in [edge.a, edge.b] {
        let v = end.vertex().expect("internal");
        let slot = state.topology.slot_of(v, e).expect("incident");
        state.tensors[v] = state.tensors[v].truncate_axis(slot, chi_tilde);
    }
    let scale = (kept * total).sqrt();
    state.weights[e] = state.weights[e][..chi_tilde].iter().map(|x| x / scale).collect();
    // Other edges lose their Schmidt property; restore it exactly.
    state.canonical = false;
    canonicalize(state, 0.0)?;
    Ok(kept)
}
