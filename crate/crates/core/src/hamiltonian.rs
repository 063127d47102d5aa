//! Few-body Hamiltonians `H = Σ h_ij` as explicit term lists.

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{TtnError, TtnResult};
use crate::gates::{named_matrix, MatrixSpec};

const HERMITIAN_TOL: f64 = 1e-10;

/// One term acting on one or two qudits; `matrix` includes its coefficient.
#[derive(Clone, Debug, PartialEq)]
pub struct Term {
    pub sites: Vec<usize>,
    pub matrix: DMatrix<C64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HamiltonianSpec {
    pub name: String,
    pub n: usize,
    pub d: usize,
    pub terms: Vec<Term>,
}

impl HamiltonianSpec {
    pub fn new(name: impl Into<String>, n: usize, d: usize, terms: Vec<Term>) -> TtnResult<Self> {
        for (k, t) in terms.iter().enumerate() {
            if t.sites.is_empty() || t.sites.len() > 2 {
                return Err(TtnError::InvalidArgument(format!("term {k} acts on {} sites", t.sites.len())));
            }
            if t.sites.len() == 2 && t.sites[0] == t.sites[1] {
                return Err(TtnError::InvalidArgument(format!("term {k} repeats site {}", t.sites[0])));
            }
            if let Some(&q) = t.sites.iter().find(|&&q| q >= n) {
                return Err(TtnError::UnknownQudit(q));
            }
            let dim = d.pow(t.sites.len() as u32);
            if t.matrix.nrows() != dim || t.matrix.ncols() != dim {
                return Err(TtnError::ShapeMismatch(format!("term {k} matrix is not {dim}×{dim}")));
            }
            let deviation = (&t.matrix - t.matrix.adjoint()).norm();
            if deviation > HERMITIAN_TOL * t.matrix.norm().max(1.0) {
                return Err(TtnError::NotHermitian { deviation });
            }
        }
        Ok(Self { name: name.into(), n, d, terms })
    }

    /// Hamiltonian with no terms.
    pub fn zero(n: usize, d: usize) -> Self {
        Self { name: "zero".into(), n, d, terms: vec![] }
    }

    /// Terms sorted by `(min site, max site)`, ties kept in input order.
    pub fn ordered_terms(&self) -> Vec<&Term> {
        let mut terms: Vec<&Term> = self.terms.iter().collect();
        terms.sort_by_key(|t| {
            let lo = *t.sites.iter().min().expect("nonempty");
            let hi = *t.sites.iter().max().expect("nonempty");
            (lo, hi)
        });
        terms
    }

    /// Parse a JSON term list, or an object `{name, n, d, terms}`.
    pub fn from_json(text: &str, n: Option<usize>) -> TtnResult<Self> {
        let doc: HamiltonianDocument = serde_json::from_str(text).map_err(|e| TtnError::Parse(e.to_string()))?;
        let (name, n_doc, d, terms) = match doc {
            HamiltonianDocument::List(terms) => ("custom".to_string(), None, 2, terms),
            HamiltonianDocument::Full { name, n, d, terms } => (name.unwrap_or_else(|| "custom".into()), n, d.unwrap_or(2), terms),
        };
        let max_site = terms.iter().flat_map(|t| t.sites.iter().copied()).max().map(|m| m + 1).unwrap_or(0);
        let n = n.or(n_doc).unwrap_or(max_site);
        let terms = terms
            .into_iter()
            .map(|t| {
                let m = t.matrix.resolve(d, t.sites.len())?;
                Ok(Term { sites: t.sites, matrix: m * C64::new(t.coeff, 0.0) })
            })
            .collect::<TtnResult<Vec<_>>>()?;
        Self::new(name, n, d, terms)
    }

    /// Serialize as `{name, n, d, terms}` with raw matrices.
    pub fn to_json(&self) -> String {
        let terms = self
            .terms
            .iter()
            .map(|t| TermDocument {
                sites: t.sites.clone(),
                matrix: MatrixSpec::Raw(
                    (0..t.matrix.nrows())
                        .flat_map(|r| (0..t.matrix.ncols()).flat_map(move |c| [r, c]))
                        .collect::<Vec<_>>()
                        .chunks(2)
                        .flat_map(|rc| {
                            let z = t.matrix[(rc[0], rc[1])];
                            [z.re, z.im]
                        })
                        .collect(),
                ),
                coeff: 1.0,
            })
            .collect();
        let doc = HamiltonianDocument::Full { name: Some(self.name.clone()), n: Some(self.n), d: Some(self.d), terms };
        serde_json::to_string_pretty(&doc).expect("serializable")
    }
}

#[derive(Serialize, Deserialize)]
struct TermDocument {
    sites: Vec<usize>,
    matrix: MatrixSpec,
    #[serde(default = "unit")]
    coeff: f64,
}

fn unit() -> f64 {
    1.0
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum HamiltonianDocument {
    List(Vec<TermDocument>),
    Full {
        name: Option<String>,
        n: Option<usize>,
        d: Option<usize>,
        terms: Vec<TermDocument>,
    },
}

/// Parameters for [`hamiltonian_library`]; unused fields are ignored.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelParams {
    /// Coupling strength.
    pub j: f64,
    /// Transverse field.
    pub g: f64,
    /// Power-law exponent of long-range couplings.
    pub alpha: f64,
}

impl Default for ModelParams {
    fn default() -> Self {
        Self { j: 1.0, g: 1.0, alpha: 2.0 }
    }
}

fn pauli(name: &str, coeff: f64) -> DMatrix<C64> {
    named_matrix(name).expect("Pauli string") * C64::new(coeff, 0.0)
}

fn field_terms(n: usize, g: f64) -> Vec<Term> {
    if g == 0.0 {
        return vec![];
    }
    (0..n).map(|i| Term { sites: vec![i], matrix: pauli("X", -g) }).collect()
}

fn zz_terms(bonds: impl IntoIterator<Item = (usize, usize, f64)>) -> Vec<Term> {
    bonds.into_iter().map(|(i, j, w)| Term { sites: vec![i, j], matrix: pauli("ZZ", w) }).collect()
}

/// Standard qubit models.
///
/// - `tfim-chain`: `−J Σ Z_i Z_{i+1} − g Σ X_i` on an open chain.
/// - `tfim-tree`: the same on a binary-heap tree graph (`i` joined to `(i − 1) / 2`).
/// - `heisenberg-chain`: `J Σ (X X + Y Y + Z Z)` on an open chain.
/// - `long-range-ising`: `Σ_{i<j} J |i − j|^(−α) Z_i Z_j − g Σ X_i` (fields only when `g ≠ 0`).
/// - `periodic-chain`: `tfim-chain` plus the closing bond `(n − 1, 0)`.
pub fn hamiltonian_library(name: &str, n: usize, p: ModelParams) -> TtnResult<HamiltonianSpec> {
    if n < 2 {
        return Err(TtnError::InvalidArgument(format!("models need at least 2 sites, got {n}")));
    }
    if !(p.j.is_finite() && p.g.is_finite() && p.alpha.is_finite()) {
        return Err(TtnError::InvalidArgument("model parameters must be finite".into()));
    }
    let terms = match name {
        "tfim-chain" => {
            let mut t = zz_terms((0..n - 1).map(|i| (i, i + 1, -p.j)));
            t.extend(field_terms(n, p.g));
            t
        }
        "tfim-tree" => {
            let mut t = zz_terms((1..n).map(|i| ((i - 1) / 2, i, -p.j)));
            t.extend(field_terms(n, p.g));
            t
        }
        "heisenberg-chain" => (0..n - 1)
            .map(|i| Term {
                sites: vec![i, i + 1],
                matrix: (pauli("XX", 1.0) + pauli("YY", 1.0) + pauli("ZZ", 1.0)) * C64::new(p.j, 0.0),
            })
            .collect(),
        "long-range-ising" => {
            if p.alpha < 0.0 {
                return Err(TtnError::InvalidArgument(format!("alpha must be nonnegative, got {}", p.alpha)));
            }
            let mut t = zz_terms(
                (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).map(|(i, j)| {
                    (i, j, p.j * ((j - i) as f64).powf(-p.alpha))
                }),
            );
            t.extend(field_terms(n, p.g));
            t
        }
        "periodic-chain" => {
            if n < 3 {
                return Err(TtnError::InvalidArgument("periodic chain needs n ≥ 3".into()));
            }
            let mut t = zz_terms((0..n).map(|i| (i, (i + 1) % n, -p.j)));
            t.extend(field_terms(n, p.g));
            t
        }
        _ => return Err(TtnError::InvalidArgument(format!("unknown model {name:?}"))),
    };
    HamiltonianSpec::new(name, n, 2, terms)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn count(h: &HamiltonianSpec, arity: usize) -> usize {
        h.terms.iter().filter(|t| t.sites.len() == arity).count()
    }

    #[test]
    fn tfim_chain_structure() {
        let h = hamiltonian_library("tfim-chain", 3, ModelParams::default()).unwrap();
        assert_eq!(count(&h, 2), 2);
        assert_eq!(count(&h, 1), 3);
    }

    #[test]
    fn periodic_chain_closes() {
        let h = hamiltonian_library("periodic-chain", 4, ModelParams::default()).unwrap();
        assert_eq!(count(&h, 2), 4);
        assert!(h.terms.iter().any(|t| t.sites == vec![3, 0]));
    }

    #[test]
    fn long_range_weights() {
        let p = ModelParams { j: 1.0, g: 0.0, alpha: 2.0 };
        let h = hamiltonian_library("long-range-ising", 5, p).unwrap();
        assert_eq!(h.terms.len(), 10);
        for t in &h.terms {
            let dist = t.sites[1] - t.sites[0];
            assert!((t.matrix[(0, 0)].re - 1.0 / (dist * dist) as f64).abs() < 1e-15);
        }
    }

    #[test]
    fn tree_model_has_n_minus_one_bonds() {
        let h = hamiltonian_library("tfim-tree", 7, ModelParams::default()).unwrap();
        assert_eq!(count(&h, 2), 6);
        assert!(h.terms.iter().any(|t| t.sites == vec![2, 6]));
    }

    #[test]
    fn unknown_model_and_bad_params() {
        assert!(hamiltonian_library("potts", 4, ModelParams::default()).is_err());
        let p = ModelParams { alpha: -1.0, ..Default::default() };
        assert!(hamiltonian_library("long-range-ising", 4, p).is_err());
    }

    #[test]
    fn json_terms() {
        let text = r#"[{"sites":[0,1],"matrix":"ZZ","coeff":-1.0},{"sites":[2],"matrix":"X","coeff":0.5}]"#;
        let h = HamiltonianSpec::from_json(text, None).unwrap();
        assert_eq!(h.n, 3);
        assert_eq!(h.terms.len(), 2);
        assert_eq!(h.terms[1].matrix[(0, 1)], C64::new(0.5, 0.0));
        let back = HamiltonianSpec::from_json(&h.to_json(), None).unwrap();
        assert_eq!(back, h);
    }

    #[test]
    fn non_hermitian_term_rejected() {
        let text = r#"[{"sites":[0],"matrix":[0,0,1,0,0,0,0,0],"coeff":1.0}]"#;
        assert!(matches!(HamiltonianSpec::from_json(text, Some(3)), Err(TtnError::NotHermitian { .. })));
    }

    #[test]
    fn ordering_is_lexicographic() {
        let h = hamiltonian_library("periodic-chain", 4, ModelParams { g: 0.0, ..Default::default() }).unwrap();
        let order: Vec<Vec<usize>> = h.ordered_terms().iter().map(|t| t.sites.clone()).collect();
        assert_eq!(order, vec![vec![0, 1], vec![3, 0], vec![1, 2], vec![2, 3]]);
    }
}
