//! Probabilistic circuits trained by latent variable distillation.
//!
//! The crate covers exact inference on multi-headed circuits, hidden
//! Chow-Liu tree structures, flow-based EM and pruning, the progressive
//! growing loop that jointly learns cluster assignments and a
//! cluster-conditioned circuit, and the patch-based image pipeline that
//! assembles a prior over latent codes with a tied conditional circuit.

pub mod circuit;
pub mod em;
pub mod error;
pub mod growing;
pub mod logspace;
pub mod lvd;
pub mod structure;
pub mod synthetic;

#[cfg(test)]
pub(crate) mod testutil;

pub use circuit::{Circuit, CircuitBuilder, Evidence, Unit, UnitId, UnitKind, ValidationReport};
pub use error::{PcError, Result};
