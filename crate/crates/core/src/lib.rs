//! Learning time-dependent local Hamiltonians and single-site Pauli
//! Lindbladians from process-shadow data.
//!
//! The stack is layered bottom-up: Pauli algebra ([`pauli`]), interaction
//! graphs ([`lattice`]), polynomial schedules ([`schedule`]), the generator
//! ansatz ([`model`]), an exact small-system simulator ([`sim`]), shadow
//! acquisition and estimation ([`shadows`]), probe construction ([`probes`]),
//! localized inversion ([`rev`]), linear-system assembly ([`solver`]),
//! derivative estimation ([`derivative`]) and orchestration ([`pipeline`]).

pub mod dense;
pub mod derivative;
pub mod error;
pub mod lattice;
pub mod model;
pub mod pauli;
pub mod pipeline;
pub mod probes;
pub mod rev;
pub mod schedule;
pub mod shadows;
pub mod sim;
pub mod solver;

pub use dense::DenseOperator;
pub use error::{Error, Result};
pub use model::{CoeffIndex, LindbladAnsatz};
pub use lattice::{DimParams, GraphSpec, InteractionGraph};
pub use pauli::{Axis, Phase, PauliString, PhasedPauli};
pub use schedule::{FitMode, NodePlan, PolySchedule};
