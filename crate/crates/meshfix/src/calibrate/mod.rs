//! On-chip calibration: a simulated chip with hidden ground truth plus
//! the protocols that recover every splitter error and phase-shifter map
//! using only detectors at the circuit outputs.
//!
//! [`calibrate_mesh`] drives the rectangular protocol (coherent output
//! detection, column by column from the output side, with iterative
//! refinement closing the phase-offset bookkeeping). [`calibrate_reck`]
//! drives the simplified triangular protocol, which needs intensity
//! detectors only: extinction ratios on the clean first diagonal, then
//! the first diagonal programmed as a local-oscillator distributor to
//! homodyne out the fields deeper in.

pub mod chip;
pub mod estimators;
mod reck;
mod rect;

use num_complex::Complex64;
use serde::Serialize;

pub use chip::{
    ChipModel, ChipTruth, DetectorKind, MeasurableChip, NoiseModel, ShifterId, ShifterKind,
    ShifterMap,
};
pub use estimators::{
    calibrate_phi_map, calibrate_splitter_errors, calibrate_theta_map, calibrate_theta_map_naive,
    measure_branch_discriminator, BranchDiscriminator, DutIo, PhiCalibration, ProbeSide,
    SplitterEstimate, ThetaCalibration,
};
pub use reck::calibrate_reck;
pub use rect::{calibrate_mesh, calibrate_mesh_rounds};

use crate::error::CalibrationError;
use crate::mesh::{ErrorMap, SplitterErrors};

/// Recovered parameters of one MZI.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct DeviceCalibration {
    pub alpha: f64,
    pub beta: f64,
    pub theta_map: ShifterMap,
    pub phi_map: ShifterMap,
    /// Auxiliary-beam amplitude ratio seen while measuring this device.
    pub zeta: f64,
    /// Set when interference was too weak to resolve a sign, leaving the
    /// corresponding magnitude at zero.
    pub sign_note: Option<&'static str>,
}

/// Complete calibration of a mesh: one record per MZI, in topology order.
#[derive(Clone, Debug, Serialize)]
pub struct CalibrationRecord {
    pub devices: Vec<DeviceCalibration>,
}

impl CalibrationRecord {
    /// Export the recovered splitter errors as the error map consumed by
    /// the correction machinery.
    pub fn error_map(&self) -> Result<ErrorMap, CalibrationError> {
        let errors = self
            .devices
            .iter()
            .map(|d| SplitterErrors::new(d.alpha, d.beta).map_err(CalibrationError::from))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(ErrorMap::new(errors))
    }
}

/// Imperfect-MZI elements from calibration estimates at given voltages.
pub(crate) fn modeled_elements(
    alpha: f64,
    beta: f64,
    theta_map: &ShifterMap,
    phi_map: &ShifterMap,
    v_theta: f64,
    v_phi: f64,
) -> [Complex64; 4] {
    let s = crate::mesh::MziSettings::new(theta_map.phase(v_theta), phi_map.phase(v_phi));
    let e = SplitterErrors::new(
        alpha.clamp(-0.78, 0.78),
        beta.clamp(-0.78, 0.78),
    )
    .expect("estimates stay inside the splitter range");
    crate::mesh::imperfect_mzi_elements(s, e)
}

/// Apply the inverse (dagger) of a 2x2 gate to a field pair in place.
#[inline]
pub(crate) fn apply_inverse(fields: &mut [Complex64], m: usize, t: &[Complex64; 4]) {
    let a = fields[m];
    let b = fields[m + 1];
    fields[m] = t[0].conj() * a + t[2].conj() * b;
    fields[m + 1] = t[1].conj() * a + t[3].conj() * b;
}

/// Direct-detector view of a device whose outputs land on chip detectors,
/// used by the single-device calibration entry points below (N = 2 chips,
/// last-column devices).
pub struct DirectDut<'a> {
    pub chip: &'a mut dyn MeasurableChip,
    pub device: usize,
    pub input: Vec<Complex64>,
}

impl DirectDut<'_> {
    fn top_mode(&self) -> usize {
        self.chip.topology().placements()[self.device].top_mode
    }
}

impl DutIo for DirectDut<'_> {
    fn set_theta_volts(&mut self, volts: f64) {
        self.chip.set_voltage(
            ShifterId {
                mzi: self.device,
                kind: ShifterKind::Theta,
            },
            volts,
        );
    }

    fn set_phi_volts(&mut self, volts: f64) {
        self.chip.set_voltage(
            ShifterId {
                mzi: self.device,
                kind: ShifterKind::Phi,
            },
            volts,
        );
    }

    fn out_fields(&mut self) -> Result<(Complex64, Complex64), CalibrationError> {
        let m = self.top_mode();
        let input = self.input.clone();
        let top = self.chip.measure_field(&input, m)?;
        let bottom = self.chip.measure_field(&input, m + 1)?;
        Ok((top, bottom))
    }

    fn out_intensities(&mut self) -> Result<(f64, f64), CalibrationError> {
        let m = self.top_mode();
        let input = self.input.clone();
        let top = self.chip.measure_intensity(&input, m);
        let bottom = self.chip.measure_intensity(&input, m + 1);
        Ok((top, bottom))
    }
}

/// Calibrate the internal shifter of a detector-adjacent device: probe one
/// input, sweep both shifters, average the transmission over the external
/// phase and fit the cosine model. See [`estimators::calibrate_theta_map`].
pub fn calibrate_theta(
    chip: &mut dyn MeasurableChip,
    device: usize,
    input: Vec<Complex64>,
    side: ProbeSide,
) -> Result<ThetaCalibration, CalibrationError> {
    let mut io = DirectDut {
        chip,
        device,
        input,
    };
    calibrate_theta_map(&mut io, side, true)
}

/// Calibrate the splitter errors of a detector-adjacent device: the
/// branch discriminator is measured with the single-sided probe, then the
/// visibility systems run on the balanced injection. See
/// [`estimators::calibrate_splitter_errors`].
pub fn calibrate_splitters(
    chip: &mut dyn MeasurableChip,
    device: usize,
    probe_input: Vec<Complex64>,
    balanced_input: Vec<Complex64>,
    side: ProbeSide,
    theta: &ThetaCalibration,
    phi_kappa: f64,
) -> Result<SplitterEstimate, CalibrationError> {
    let discriminator = {
        let mut io = DirectDut {
            chip,
            device,
            input: probe_input,
        };
        measure_branch_discriminator(&mut io, &theta.theta_map, phi_kappa)?
    };
    let mut io = DirectDut {
        chip,
        device,
        input: balanced_input,
    };
    calibrate_splitter_errors(&mut io, side, theta, phi_kappa, &discriminator)
}

/// Calibrate the external shifter of a detector-adjacent device from
/// coherent output-phase measurements in the cross and bar states. See
/// [`estimators::calibrate_phi_map`].
#[allow(clippy::too_many_arguments)]
pub fn calibrate_phi(
    chip: &mut dyn MeasurableChip,
    device: usize,
    input: Vec<Complex64>,
    side: ProbeSide,
    theta_map: &ShifterMap,
    phi_kappa: f64,
    splitters: &SplitterEstimate,
    input_phase_top: f64,
    input_phase_bottom: f64,
) -> Result<PhiCalibration, CalibrationError> {
    let mut io = DirectDut {
        chip,
        device,
        input,
    };
    calibrate_phi_map(
        &mut io,
        side,
        theta_map,
        phi_kappa,
        splitters.alpha,
        splitters.beta,
        splitters.zeta,
        input_phase_top,
        input_phase_bottom,
    )
}
