//! Modeling and analysis toolkit for a heralded single-photon source whose
//! idler arm is read out by a photon-number-resolving (PNR) detector.
//!
//! The PNR detector is modeled as a balanced binary tree of 50:50 splitters of
//! depth `k` feeding `N = 2^k` threshold detectors. A threshold detector is the
//! `k = 0` special case.
//!
//! Modules:
//! - [`jsi`]: joint spectral intensity synthesis and Schmidt decomposition.
//! - [`model`]: closed-form click and coincidence probabilities, g²(0), inverse queries.
//! - [`povm`]: single-photon POVM element of the tree detector and its discrimination efficiency.
//! - [`oracle`]: exact truncated Fock-space enumeration and Monte-Carlo sampling of the experiment.
//! - [`tagstream`]: time-tag simulation, coincidence counting and g²(0) from counts.
//! - [`estimation`]: recovery of efficiencies, mean pair number and tree depth from counts.

pub mod error;
pub mod estimation;
pub mod jsi;
pub mod model;
pub mod numeric;
pub mod oracle;
pub mod povm;
pub mod tagstream;

pub use error::{Error, Result};
pub use jsi::{JsiGrid, JsiParams, SchmidtSpectrum};
pub use model::{Detection, ModelParams, ProbabilitySet};
pub use povm::{PovmElement, TreeDetector};
pub use tagstream::{Channel, CountSummary, G2Result, RunConfig, TagRecord};
