//! meshfix: programming simulated MZI-mesh photonic processors with
//! fabrication errors.
//!
//! The crate covers the full pipeline for feedforward unitary circuits and
//! recirculating ring filters:
//!
//! - [`mesh`]: ideal/imperfect MZI transfer matrices, mesh evaluation,
//!   Haar sampling and the per-entry matrix-error metric.
//! - [`decompose`]: rectangular (Clements) and triangular (Reck)
//!   decompositions of an arbitrary unitary into mesh settings.
//! - [`correct`]: local hardware-error correction per device
//!   (theta', phi', psi1, psi2), mesh-wide forward phase propagation, and
//!   redundant-MZI perfect-gate settings.
//! - [`calibrate`]: a simulated chip with hidden ground truth plus the
//!   output-detector-only protocols that recover every splitter error and
//!   phase-shifter response.
//! - [`stats`]: closed-form error laws, the Haar distribution of internal
//!   phases, dynamic error budgets, and the Monte-Carlo sweep engine.
//! - [`ring`]: serial tunable-coupling ring arrays (tunable dispersion
//!   compensator), group-delay analysis, derivative-free training and
//!   per-ring correction.

pub mod calibrate;
pub mod correct;
pub mod decompose;
pub mod error;
pub mod io;
pub mod mesh;
pub mod optim;
pub mod ring;
pub mod stats;

pub use error::{CalibrationError, MeshError};
pub use mesh::{
    equal_up_to_global_phase, haar_random_unitary, ideal_mzi_unitary, imperfect_mzi_unitary,
    is_unitary, matrix_error, mesh_unitary, CMatrix, ErrorMap, MeshLayout, MeshProgram,
    MeshTopology, MziPlacement, MziSettings, SplitterErrors,
};
