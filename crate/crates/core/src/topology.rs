//! Unrooted tree topologies with degree-3 internal vertices and one leaf per
//! qudit.
//!
//! Edges are numbered in input order. An internal edge joins two vertices; a
//! leaf edge joins a vertex (stored as endpoint `a`) to a qudit leaf (endpoint
//! `b`). Each vertex keeps its three incident edges in a fixed slot order, and
//! the vertex tensor of a state uses the same order for its indices.
//!
//! Text format: one edge per line, endpoints `q<k>` (leaf, `k` in `1..=n`,
//! qudit index `k - 1`) or `v<k>` (internal vertex, any label), separated by
//! whitespace or `-`. Blank lines and `#` comments are ignored.

use std::collections::{BTreeSet, HashMap, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{TtnError, TtnResult};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Endpoint {
    Leaf(usize),
    Vertex(usize),
}

impl Endpoint {
    pub fn vertex(self) -> Option<usize> {
        match self {
            Endpoint::Vertex(v) => Some(v),
            Endpoint::Leaf(_) => None,
        }
    }
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Endpoint::Leaf(q) => write!(f, "q{}", q + 1),
            Endpoint::Vertex(v) => write!(f, "v{}", v + 1),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edge {
    pub a: Endpoint,
    pub b: Endpoint,
}

/// Which component of a cut edge: the one holding endpoint `a` or `b`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Side {
    A,
    B,
}

impl Side {
    pub fn flip(self) -> Side {
        match self {
            Side::A => Side::B,
            Side::B => Side::A,
        }
    }
}

/// An unvalidated edge list, as read from a file.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopologySpec {
    pub edges: Vec<(Endpoint, Endpoint)>,
    pub vertex_labels: Vec<String>,
}

impl TopologySpec {
    pub fn parse(text: &str) -> TtnResult<Self> {
        let mut spec = TopologySpec::default();
        let mut vertex_ids: HashMap<String, usize> = HashMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let tokens: Vec<&str> =
                line.split(|c: char| c.is_whitespace() || c == '-').filter(|t| !t.is_empty()).collect();
            if tokens.len() != 2 {
                return Err(TtnError::Parse(format!("line {}: expected two endpoints, got `{raw}`", lineno + 1)));
            }
            let mut ends = [Endpoint::Leaf(0); 2];
            for (slot, tok) in tokens.iter().enumerate() {
                ends[slot] = if let Some(k) = tok.strip_prefix('q') {
                    let k: usize = k
                        .parse()
                        .map_err(|_| TtnError::Parse(format!("line {}: bad leaf label `{tok}`", lineno + 1)))?;
                    if k == 0 {
                        return Err(TtnError::Parse(format!("line {}: leaf labels start at q1", lineno + 1)));
                    }
                    Endpoint::Leaf(k - 1)
                } else if tok.starts_with('v') && tok.len() > 1 {
                    let next = vertex_ids.len();
                    let id = *vertex_ids.entry(tok.to_string()).or_insert_with(|| {
                        spec.vertex_labels.push(tok.to_string());
                        next
                    });
                    Endpoint::Vertex(id)
                } else {
                    return Err(TtnError::Parse(format!("line {}: bad endpoint `{tok}`", lineno + 1)));
                };
            }
            spec.edges.push((ends[0], ends[1]));
        }
        Ok(spec)
    }

    pub fn num_leaves(&self) -> usize {
        self.edges
            .iter()
            .flat_map(|(a, b)| [*a, *b])
            .filter_map(|e| match e {
                Endpoint::Leaf(q) => Some(q),
                _ => None,
            })
            .collect::<BTreeSet<_>>()
            .len()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (a, b) in &self.edges {
            out.push_str(&format!("{a} {b}\n"));
        }
        out
    }
}

/// Result of checking every topology invariant.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub n: usize,
    pub vertices: usize,
    pub internal_edges: usize,
    pub violations: Vec<String>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

pub fn validate(spec: &TopologySpec) -> ValidationReport {
    let mut violations = Vec::new();
    let leaves: BTreeSet<usize> = spec
        .edges
        .iter()
        .flat_map(|(a, b)| [*a, *b])
        .filter_map(|e| match e {
            Endpoint::Leaf(q) => Some(q),
            _ => None,
        })
        .collect();
    let vertices: BTreeSet<usize> =
        spec.edges.iter().flat_map(|(a, b)| [*a, *b]).filter_map(Endpoint::vertex).collect();
    let n = leaves.len();
    if n < 3 {
        violations.push(format!("at least 3 qudits required, found {n}"));
    }
    if leaves.iter().copied().ne(0..n) {
        violations.push(format!("leaf labels must be exactly q1..q{n}"));
    }
    if vertices.iter().copied().ne(0..vertices.len()) {
        violations.push("vertex identifiers are not contiguous".into());
    }
    let mut degree: HashMap<Endpoint, usize> = HashMap::new();
    let mut internal_edges = 0;
    for &(a, b) in &spec.edges {
        if a == b {
            violations.push(format!("self-loop at {a}"));
        }
        if matches!((a, b), (Endpoint::Leaf(_), Endpoint::Leaf(_))) {
            violations.push(format!("edge {a}-{b} joins two leaves"));
        }
        if matches!((a, b), (Endpoint::Vertex(_), Endpoint::Vertex(_))) {
            internal_edges += 1;
        }
        *degree.entry(a).or_default() += 1;
        *degree.entry(b).or_default() += 1;
    }
    let mut ends: Vec<_> = degree.iter().collect();
    ends.sort_by_key(|(e, _)| match e {
        Endpoint::Leaf(q) => (0, *q),
        Endpoint::Vertex(v) => (1, *v),
    });
    for (end, &deg) in ends {
        match end {
            Endpoint::Leaf(_) if deg != 1 => violations.push(format!("leaf {end} has degree {deg}, expected 1")),
            Endpoint::Vertex(_) if deg != 3 => {
                violations.push(format!("vertex {end} has degree {deg}, expected 3"))
            }
            _ => {}
        }
    }
    if n >= 3 {
        if vertices.len() != n - 2 {
            violations.push(format!("{} internal vertices, expected n - 2 = {}", vertices.len(), n - 2));
        }
        if internal_edges != n - 3 {
            violations.push(format!("{internal_edges} internal edges, expected n - 3 = {}", n - 3));
        }
    }

    // Union-find over all endpoints for cycle and connectivity checks.
    let mut ids: HashMap<Endpoint, usize> = HashMap::new();
    for &(a, b) in &spec.edges {
        for e in [a, b] {
            let next = ids.len();
            ids.entry(e).or_insert(next);
        }
    }
    let mut parent: Vec<usize> = (0..ids.len()).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    let mut cyclic = false;
    for &(a, b) in &spec.edges {
        let (ra, rb) = (find(&mut parent, ids[&a]), find(&mut parent, ids[&b]));
        if ra == rb {
            cyclic = true;
        } else {
            parent[ra] = rb;
        }
    }
    if cyclic {
        violations.push("acyclicity violated".into());
    }
    let roots: BTreeSet<usize> = (0..ids.len()).map(|x| find(&mut parent, x)).collect();
    if roots.len() > 1 {
        violations.push(format!("connectivity violated: {} components", roots.len()));
    }
    ValidationReport { n, vertices: vertices.len(), internal_edges, violations }
}

/// A cut of the qudits induced by an internal edge.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bipartition {
    pub edge: usize,
    pub side_a: Vec<usize>,
    pub side_b: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayoutKind {
    Caterpillar,
    BalancedBinary,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeTopology {
    n: usize,
    edges: Vec<Edge>,
    incidence: Vec<[usize; 3]>,
    leaf_edge: Vec<usize>,
}

impl TreeTopology {
    pub fn from_spec(spec: &TopologySpec) -> TtnResult<Self> {
        let report = validate(spec);
        if !report.is_valid() {
            return Err(TtnError::InvalidTopology(report.violations.join("; ")));
        }
        let n = report.n;
        // Vertices are renumbered by first appearance in the edge list.
        let mut renumber: HashMap<usize, usize> = HashMap::new();
        let relabel = |end: Endpoint, renumber: &mut HashMap<usize, usize>| match end {
            Endpoint::Vertex(v) => {
                let next = renumber.len();
                Endpoint::Vertex(*renumber.entry(v).or_insert(next))
            }
            leaf => leaf,
        };
        let mut edges = Vec::with_capacity(spec.edges.len());
        let mut slots: Vec<Vec<usize>> = vec![Vec::with_capacity(3); report.vertices];
        let mut leaf_edge = vec![usize::MAX; n];
        for (id, &(a, b)) in spec.edges.iter().enumerate() {
            let a = relabel(a, &mut renumber);
            let b = relabel(b, &mut renumber);
            let edge = match (a, b) {
                (Endpoint::Leaf(_), Endpoint::Vertex(_)) => Edge { a: b, b: a },
                _ => Edge { a, b },
            };
            for end in [edge.a, edge.b] {
                match end {
                    Endpoint::Vertex(v) => slots[v].push(id),
                    Endpoint::Leaf(q) => leaf_edge[q] = id,
                }
            }
            edges.push(edge);
        }
        let incidence = slots.into_iter().map(|s| [s[0], s[1], s[2]]).collect();
        Ok(Self { n, edges, incidence, leaf_edge })
    }

    /// Rebuild a topology from explicit edges and slot orders, keeping all
    /// vertex and edge ids.
    pub fn from_parts(edges: Vec<Edge>, incidence: Vec<[usize; 3]>) -> TtnResult<Self> {
        let spec = TopologySpec { edges: edges.iter().map(|e| (e.a, e.b)).collect(), vertex_labels: vec![] };
        let report = validate(&spec);
        if !report.is_valid() {
            return Err(TtnError::InvalidTopology(report.violations.join("; ")));
        }
        if incidence.len() != report.vertices {
            return Err(TtnError::InvalidTopology("slot table does not match vertex count".into()));
        }
        let mut leaf_edge = vec![usize::MAX; report.n];
        for (id, e) in edges.iter().enumerate() {
            if matches!(e.a, Endpoint::Leaf(_)) {
                return Err(TtnError::InvalidTopology(format!("edge {id} stores its leaf first")));
            }
            if let Endpoint::Leaf(q) = e.b {
                leaf_edge[q] = id;
            }
        }
        for (v, slots) in incidence.iter().enumerate() {
            let mut have: Vec<usize> = slots.to_vec();
            let mut want: Vec<usize> = (0..edges.len())
                .filter(|&id| edges[id].a == Endpoint::Vertex(v) || edges[id].b == Endpoint::Vertex(v))
                .collect();
            have.sort_unstable();
            want.sort_unstable();
            if have != want {
                return Err(TtnError::InvalidTopology(format!("slots of v{} do not match its edges", v + 1)));
            }
        }
        Ok(Self { n: report.n, edges, incidence, leaf_edge })
    }

    pub fn parse(text: &str) -> TtnResult<Self> {
        Self::from_spec(&TopologySpec::parse(text)?)
    }

    pub fn to_spec(&self) -> TopologySpec {
        TopologySpec {
            edges: self.edges.iter().map(|e| (e.a, e.b)).collect(),
            vertex_labels: (0..self.num_vertices()).map(|v| format!("v{}", v + 1)).collect(),
        }
    }

    pub fn to_text(&self) -> String {
        self.to_spec().to_text()
    }

    /// Deterministic standard layouts on `n ≥ 3` qudits.
    pub fn layout(kind: LayoutKind, n: usize) -> TtnResult<Self> {
        if n < 3 {
            return Err(TtnError::InvalidTopology(format!("at least 3 qudits required, got {n}")));
        }
        let edges = match kind {
            LayoutKind::Caterpillar => caterpillar_edges(n),
            LayoutKind::BalancedBinary => balanced_edges(n),
        };
        Self::from_spec(&TopologySpec { edges, vertex_labels: vec![] })
    }

    pub fn caterpillar(n: usize) -> TtnResult<Self> {
        Self::layout(LayoutKind::Caterpillar, n)
    }

    pub fn balanced_binary(n: usize) -> TtnResult<Self> {
        Self::layout(LayoutKind::BalancedBinary, n)
    }

    /// Random topology grown by subdividing a uniformly chosen edge and
    /// hanging the next leaf from the new vertex.
    pub fn random(n: usize, rng: &mut impl rand::Rng) -> TtnResult<Self> {
        if n < 3 {
            return Err(TtnError::InvalidTopology(format!("at least 3 qudits required, got {n}")));
        }
        let mut edges: Vec<(Endpoint, Endpoint)> = (0..3).map(|q| (Endpoint::Vertex(0), Endpoint::Leaf(q))).collect();
        for q in 3..n {
            let k = rng.random_range(0..edges.len());
            let (a, b) = edges[k];
            let v = Endpoint::Vertex(q - 2);
            edges[k] = (a, v);
            edges.push((v, b));
            edges.push((v, Endpoint::Leaf(q)));
        }
        Self::from_spec(&TopologySpec { edges, vertex_labels: vec![] })
    }

    pub fn num_qudits(&self) -> usize {
        self.n
    }

    pub fn num_vertices(&self) -> usize {
        self.incidence.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edge(&self, e: usize) -> Edge {
        self.edges[e]
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn incidence(&self, v: usize) -> [usize; 3] {
        self.incidence[v]
    }

    pub fn is_internal(&self, e: usize) -> bool {
        matches!(self.edges[e].b, Endpoint::Vertex(_))
    }

    pub fn internal_edges(&self) -> Vec<usize> {
        (0..self.edges.len()).filter(|&e| self.is_internal(e)).collect()
    }

    pub fn leaf_edge(&self, q: usize) -> usize {
        self.leaf_edge[q]
    }

    /// The vertex carrying qudit `q`'s leaf.
    pub fn leaf_vertex(&self, q: usize) -> usize {
        self.edges[self.leaf_edge[q]].a.vertex().expect("leaf edges start at a vertex")
    }

    /// Position of edge `e` among the slots of vertex `v`.
    pub fn slot_of(&self, v: usize, e: usize) -> Option<usize> {
        self.incidence[v].iter().position(|&x| x == e)
    }

    /// Endpoint of `e` opposite to vertex `v`.
    pub fn across(&self, e: usize, v: usize) -> Endpoint {
        let edge = self.edges[e];
        if edge.a == Endpoint::Vertex(v) {
            edge.b
        } else {
            edge.a
        }
    }

    pub fn side_of_vertex(&self, e: usize, v: usize) -> Side {
        if self.edges[e].a == Endpoint::Vertex(v) {
            Side::A
        } else {
            Side::B
        }
    }

    pub fn endpoint(&self, e: usize, side: Side) -> Endpoint {
        match side {
            Side::A => self.edges[e].a,
            Side::B => self.edges[e].b,
        }
    }

    /// Edge joining vertices `u` and `v`, if adjacent.
    pub fn edge_between(&self, u: usize, v: usize) -> Option<usize> {
        self.incidence[u].iter().copied().find(|&e| self.across(e, u) == Endpoint::Vertex(v))
    }

    pub fn check_qudit(&self, q: usize) -> TtnResult<()> {
        if q < self.n {
            Ok(())
        } else {
            Err(TtnError::UnknownQudit(q))
        }
    }

    /// Qudits in the component of `e`'s cut that holds the endpoint on `side`.
    pub fn qudits_on_side(&self, e: usize, side: Side) -> Vec<usize> {
        let mut out = Vec::new();
        let start = self.endpoint(e, side);
        let mut stack = vec![(start, e)];
        while let Some((end, from)) = stack.pop() {
            match end {
                Endpoint::Leaf(q) => out.push(q),
                Endpoint::Vertex(v) => {
                    for &f in &self.incidence[v] {
                        if f != from {
                            stack.push((self.across(f, v), f));
                        }
                    }
                }
            }
        }
        out.sort_unstable();
        out
    }

    pub fn bipartition_of(&self, e: usize) -> TtnResult<Bipartition> {
        if e >= self.edges.len() {
            return Err(TtnError::InvalidArgument(format!("no edge {e}")));
        }
        if !self.is_internal(e) {
            return Err(TtnError::LeafEdge(e));
        }
        Ok(Bipartition { edge: e, side_a: self.qudits_on_side(e, Side::A), side_b: self.qudits_on_side(e, Side::B) })
    }

    /// Internal vertices on the path from `q1`'s leaf to `q2`'s leaf.
    pub fn path_between(&self, q1: usize, q2: usize) -> TtnResult<Vec<usize>> {
        self.check_qudit(q1)?;
        self.check_qudit(q2)?;
        if q1 == q2 {
            return Err(TtnError::InvalidArgument(format!("path from qudit {q1} to itself")));
        }
        let start = self.leaf_vertex(q1);
        let goal = self.leaf_vertex(q2);
        let mut prev = vec![usize::MAX; self.num_vertices()];
        prev[start] = start;
        let mut queue = VecDeque::from([start]);
        while let Some(v) = queue.pop_front() {
            if v == goal {
                break;
            }
            for &e in &self.incidence[v] {
                if let Endpoint::Vertex(w) = self.across(e, v) {
                    if prev[w] == usize::MAX {
                        prev[w] = v;
                        queue.push_back(w);
                    }
                }
            }
        }
        let mut path = vec![goal];
        let mut cur = goal;
        while cur != start {
            cur = prev[cur];
            path.push(cur);
        }
        path.reverse();
        Ok(path)
    }

    /// Longest leaf-to-leaf path, counted in internal vertices.
    pub fn max_path_length(&self) -> usize {
        // Vertex eccentricities through BFS from every leaf vertex.
        let mut best = 0;
        let leaf_vertices: BTreeSet<usize> = (0..self.n).map(|q| self.leaf_vertex(q)).collect();
        for &s in &leaf_vertices {
            let dist = self.vertex_distances(s);
            for &t in &leaf_vertices {
                best = best.max(dist[t] + 1);
            }
        }
        best
    }

    fn vertex_distances(&self, s: usize) -> Vec<usize> {
        let mut dist = vec![usize::MAX; self.num_vertices()];
        dist[s] = 0;
        let mut queue = VecDeque::from([s]);
        while let Some(v) = queue.pop_front() {
            for &e in &self.incidence[v] {
                if let Endpoint::Vertex(w) = self.across(e, v) {
                    if dist[w] == usize::MAX {
                        dist[w] = dist[v] + 1;
                        queue.push_back(w);
                    }
                }
            }
        }
        dist
    }

    /// Vertices in breadth-first order from `root`, with the edge leading
    /// to each vertex's parent (`None` for the root).
    pub fn bfs_from(&self, root: usize) -> Vec<(usize, Option<usize>)> {
        let mut seen = vec![false; self.num_vertices()];
        seen[root] = true;
        let mut out = Vec::with_capacity(self.num_vertices());
        let mut queue = VecDeque::from([(root, None)]);
        while let Some((v, up)) = queue.pop_front() {
            out.push((v, up));
            for &e in &self.incidence[v] {
                if let Endpoint::Vertex(w) = self.across(e, v) {
                    if !seen[w] {
                        seen[w] = true;
                        queue.push_back((w, Some(e)));
                    }
                }
            }
        }
        out
    }

    /// Exchange the edge in slot `su` of `u` with the edge in slot `sv` of
    /// `v`, where `u` and `v` are adjacent and neither slot is their shared
    /// edge.
    pub(crate) fn exchange_slots(&mut self, u: usize, su: usize, v: usize, sv: usize) {
        let eu = self.incidence[u][su];
        let ev = self.incidence[v][sv];
        self.incidence[u][su] = ev;
        self.incidence[v][sv] = eu;
        for (e, from, to) in [(eu, u, v), (ev, v, u)] {
            let edge = &mut self.edges[e];
            if edge.a == Endpoint::Vertex(from) {
                edge.a = Endpoint::Vertex(to);
            } else {
                edge.b = Endpoint::Vertex(to);
            }
        }
    }
}

fn caterpillar_edges(n: usize) -> Vec<(Endpoint, Endpoint)> {
    use Endpoint::{Leaf, Vertex};
    let m = n - 2;
    let mut edges = Vec::with_capacity(2 * n - 3);
    edges.push((Vertex(0), Leaf(0)));
    for k in 0..m {
        edges.push((Vertex(k), Leaf(k + 1)));
        if k + 1 < m {
            edges.push((Vertex(k), Vertex(k + 1)));
        }
    }
    edges.push((Vertex(m - 1), Leaf(n - 1)));
    edges
}

fn balanced_edges(n: usize) -> Vec<(Endpoint, Endpoint)> {
    use Endpoint::{Leaf, Vertex};
    // Rooted binary tree over contiguous qudit ranges; the root is then
    // dropped and its two children joined directly.
    fn build(lo: usize, hi: usize, next: &mut usize, edges: &mut Vec<(Endpoint, Endpoint)>) -> Endpoint {
        if hi - lo == 1 {
            return Leaf(lo);
        }
        let v = *next;
        *next += 1;
        let mid = lo + (hi - lo).div_ceil(2);
        let left = build(lo, mid, next, edges);
        let right = build(mid, hi, next, edges);
        edges.push((Vertex(v), left));
        edges.push((Vertex(v), right));
        Vertex(v)
    }
    let mut edges = Vec::new();
    let mut next = 0;
    let mid = n.div_ceil(2);
    let left = build(0, mid, &mut next, &mut edges);
    let right = build(mid, n, &mut next, &mut edges);
    edges.push(match (left, right) {
        (Leaf(_), v @ Vertex(_)) => (v, left),
        (v @ Vertex(_), other) => (v, other),
        _ => unreachable!("n >= 3 leaves at least one vertex under the root"),
    });
    edges
}
