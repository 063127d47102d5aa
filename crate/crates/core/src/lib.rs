//! Tree tensor network simulation of pure multi-qudit states.
//!
//! States live on unrooted trees whose internal vertices carry three-index
//! tensors and whose internal edges carry Schmidt weights. The crate keeps
//! states in canonical form, applies one- and two-qudit gates (routing
//! distant pairs by index swaps), evaluates reduced density matrices,
//! simulates local measurements and measurement-based computation on tree
//! cluster states, and runs real and imaginary time evolution. A dense
//! statevector oracle backs every numerical claim in the test suite.

pub mod canonical;
pub mod crosscheck;
pub mod error;
pub mod gates;
pub mod hamiltonian;
pub mod locc;
pub mod observables;
pub mod oracle;
pub mod state;
pub mod tebd;
pub mod tensor;
pub mod topology;

pub use canonical::{canonicalize, check_canonical, gram_matrix, truncate_edge, CanonicalReport};
pub use error::{TtnError, TtnResult};
pub use gates::{apply_gate_routed, apply_local, apply_neighbor_gate, GateOp, MatrixSpec};
pub use hamiltonian::{hamiltonian_library, HamiltonianSpec, ModelParams, Term};
pub use observables::{energy, expectation, fidelity, rdm1, rdm2, DensityMatrix};
pub use state::{Statevector, TtnState};
pub use tensor::{DenseTensor, Truncation};
pub use topology::{LayoutKind, TopologySpec, TreeTopology};

/// Complex scalar used throughout.
pub use num_complex::Complex64 as C64;
