//! Simulated chip with hidden ground truth.
//!
//! The chip holds splitter errors, thermo-optic voltage maps and detector
//! responsivities that calibration code must never read directly: all
//! protocol drivers work through [`MeasurableChip`], which only exposes
//! voltage writes and detector reads. Ground truth is reachable solely on
//! the concrete [`ChipModel`] for truth-comparison reports.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;
use std::f64::consts::TAU;

use crate::error::CalibrationError;
use crate::mesh::{
    imperfect_mzi_elements, ErrorMap, MeshTopology, MziSettings,
};

/// Which shifter of an MZI a voltage write addresses.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ShifterKind {
    Theta,
    Phi,
}

/// Address of one phase shifter.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ShifterId {
    pub mzi: usize,
    pub kind: ShifterKind,
}

/// Square-law voltage response of a thermo-optic shifter:
/// `phase(V) = kappa V^2 + delta`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ShifterMap {
    pub kappa: f64,
    pub delta: f64,
}

impl ShifterMap {
    pub fn phase(&self, volts: f64) -> f64 {
        self.kappa * volts * volts + self.delta
    }

    /// Smallest non-negative voltage realizing `phase` (mod 2 pi).
    pub fn voltage_for(&self, phase: f64) -> f64 {
        ((phase - self.delta).rem_euclid(TAU) / self.kappa).sqrt()
    }
}

/// Detector capability at one output port.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DetectorKind {
    /// Photocurrent proportional to |y|^2, with an unknown responsivity.
    Intensity,
    /// Ideal coherent receiver: complex field, absolute phase reference
    /// shared with the input rig (also provides intensity).
    Coherent,
}

/// Measurement noise, both defaulting to zero (noiseless simulation).
#[derive(Clone, Copy, Debug, Default)]
pub struct NoiseModel {
    /// Relative Gaussian noise on intensity reads.
    pub sigma_intensity: f64,
    /// Gaussian phase noise (radians) on coherent field reads.
    pub sigma_phase: f64,
}

/// Nominal square-law coefficient the rig designs sweeps around; hidden
/// per-shifter values are drawn within +-20 % of it.
pub const NOMINAL_KAPPA: f64 = TAU / 100.0;

/// Voltage that covers at least two full phase periods for any in-spec
/// shifter.
pub fn sweep_voltage_limit() -> f64 {
    (2.0 * TAU / (0.8 * NOMINAL_KAPPA)).sqrt()
}

/// The measurement-only surface calibration code compiles against.
///
/// Nothing here exposes splitter errors, shifter maps or responsivities;
/// a driver holding `&mut dyn MeasurableChip` can only program voltages,
/// inject fields and read detectors.
pub trait MeasurableChip {
    fn topology(&self) -> &MeshTopology;
    fn detector(&self, port: usize) -> DetectorKind;
    fn set_voltage(&mut self, id: ShifterId, volts: f64);
    fn voltage(&self, id: ShifterId) -> f64;
    /// Photocurrent at `port` for the given input field vector.
    fn measure_intensity(&mut self, input: &[Complex64], port: usize) -> f64;
    /// Complex output field at `port`; requires a coherent detector.
    fn measure_field(
        &mut self,
        input: &[Complex64],
        port: usize,
    ) -> Result<Complex64, CalibrationError>;
    /// All output fields in one shot (coherent receivers run in parallel).
    fn measure_all_fields(
        &mut self,
        input: &[Complex64],
    ) -> Result<Vec<Complex64>, CalibrationError> {
        (0..self.topology().n_modes())
            .map(|p| self.measure_field(input, p))
            .collect()
    }
    /// All photocurrents in one shot.
    fn measure_all_intensities(&mut self, input: &[Complex64]) -> Vec<f64> {
        (0..self.topology().n_modes())
            .map(|p| self.measure_intensity(input, p))
            .collect()
    }
}

/// Simulated hardware with hidden ground truth.
pub struct ChipModel {
    topology: MeshTopology,
    hidden_errors: ErrorMap,
    theta_maps: Vec<ShifterMap>,
    phi_maps: Vec<ShifterMap>,
    responsivities: Vec<f64>,
    detectors: Vec<DetectorKind>,
    theta_volts: Vec<f64>,
    phi_volts: Vec<f64>,
    noise: NoiseModel,
    rng: ChaCha8Rng,
}

/// Snapshot of the hidden parameters, for truth-comparison reports only.
#[derive(Clone, Debug, Serialize)]
pub struct ChipTruth {
    pub alphas: Vec<f64>,
    pub betas: Vec<f64>,
    pub theta_maps: Vec<ShifterMap>,
    pub phi_maps: Vec<ShifterMap>,
}

impl ChipModel {
    /// Draw a chip with Gaussian splitter errors (sigma_bs radians),
    /// square-law maps within 20 % of nominal, random static offsets and
    /// responsivities in [0.5, 1.5].
    pub fn new_random(
        topology: MeshTopology,
        sigma_bs: f64,
        detectors: DetectorKind,
        noise: NoiseModel,
        seed: u64,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n_mzis = topology.mzi_count();
        let n = topology.n_modes();
        let hidden_errors = ErrorMap::sample_gaussian(n_mzis, sigma_bs, &mut rng);
        let map = |rng: &mut ChaCha8Rng| ShifterMap {
            kappa: NOMINAL_KAPPA * rng.random_range(0.8..1.2),
            delta: rng.random_range(0.0..TAU),
        };
        let theta_maps = (0..n_mzis).map(|_| map(&mut rng)).collect();
        let phi_maps = (0..n_mzis).map(|_| map(&mut rng)).collect();
        let responsivities = (0..n).map(|_| rng.random_range(0.5..1.5)).collect();
        Self {
            topology,
            hidden_errors,
            theta_maps,
            phi_maps,
            responsivities,
            detectors: vec![detectors; n],
            theta_volts: vec![0.0; n_mzis],
            phi_volts: vec![0.0; n_mzis],
            noise,
            rng,
        }
    }

    /// Build a chip with explicit hidden parameters (tests and showcase
    /// scenarios).
    #[allow(clippy::too_many_arguments)]
    pub fn with_truth(
        topology: MeshTopology,
        errors: ErrorMap,
        theta_maps: Vec<ShifterMap>,
        phi_maps: Vec<ShifterMap>,
        responsivities: Vec<f64>,
        detectors: Vec<DetectorKind>,
        noise: NoiseModel,
        seed: u64,
    ) -> Self {
        assert_eq!(errors.len(), topology.mzi_count());
        assert_eq!(theta_maps.len(), topology.mzi_count());
        assert_eq!(phi_maps.len(), topology.mzi_count());
        assert_eq!(responsivities.len(), topology.n_modes());
        assert_eq!(detectors.len(), topology.n_modes());
        let n_mzis = topology.mzi_count();
        Self {
            topology,
            hidden_errors: errors,
            theta_maps,
            phi_maps,
            responsivities,
            detectors,
            theta_volts: vec![0.0; n_mzis],
            phi_volts: vec![0.0; n_mzis],
            noise,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Hidden ground truth, for reports that compare calibration output
    /// against the simulated hardware. Only reachable on the concrete
    /// type: protocol code holds `dyn MeasurableChip` and cannot call it.
    pub fn truth(&self) -> ChipTruth {
        ChipTruth {
            alphas: self.hidden_errors.errors().iter().map(|e| e.alpha()).collect(),
            betas: self.hidden_errors.errors().iter().map(|e| e.beta()).collect(),
            theta_maps: self.theta_maps.clone(),
            phi_maps: self.phi_maps.clone(),
        }
    }

    pub fn hidden_error_map(&self) -> &ErrorMap {
        &self.hidden_errors
    }

    /// Output fields for a given input, from the hidden model.
    fn propagate(&self, input: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(input.len(), self.topology.n_modes());
        let mut fields = input.to_vec();
        for (idx, placement) in self.topology.placements().iter().enumerate() {
            let s = MziSettings::new(
                self.theta_maps[idx].phase(self.theta_volts[idx]),
                self.phi_maps[idx].phase(self.phi_volts[idx]),
            );
            let t = imperfect_mzi_elements(s, self.hidden_errors.errors()[idx]);
            let m = placement.top_mode;
            let a = fields[m];
            let b = fields[m + 1];
            fields[m] = t[0] * a + t[1] * b;
            fields[m + 1] = t[2] * a + t[3] * b;
        }
        fields
    }
}

impl MeasurableChip for ChipModel {
    fn topology(&self) -> &MeshTopology {
        &self.topology
    }

    fn detector(&self, port: usize) -> DetectorKind {
        self.detectors[port]
    }

    fn set_voltage(&mut self, id: ShifterId, volts: f64) {
        match id.kind {
            ShifterKind::Theta => self.theta_volts[id.mzi] = volts,
            ShifterKind::Phi => self.phi_volts[id.mzi] = volts,
        }
    }

    fn voltage(&self, id: ShifterId) -> f64 {
        match id.kind {
            ShifterKind::Theta => self.theta_volts[id.mzi],
            ShifterKind::Phi => self.phi_volts[id.mzi],
        }
    }

    fn measure_intensity(&mut self, input: &[Complex64], port: usize) -> f64 {
        let y = self.propagate(input);
        let mut value = self.responsivities[port] * y[port].norm_sqr();
        if self.noise.sigma_intensity > 0.0 {
            let g: f64 = StandardNormal.sample(&mut self.rng);
            value *= 1.0 + self.noise.sigma_intensity * g;
        }
        value
    }

    fn measure_field(
        &mut self,
        input: &[Complex64],
        port: usize,
    ) -> Result<Complex64, CalibrationError> {
        if self.detectors[port] != DetectorKind::Coherent {
            return Err(CalibrationError::CapabilityMismatch {
                port,
                needed: "coherent",
            });
        }
        let y = self.propagate(input);
        let mut value = y[port];
        if self.noise.sigma_phase > 0.0 {
            let g: f64 = StandardNormal.sample(&mut self.rng);
            value *= Complex64::from_polar(1.0, self.noise.sigma_phase * g);
        }
        Ok(value)
    }

    fn measure_all_fields(
        &mut self,
        input: &[Complex64],
    ) -> Result<Vec<Complex64>, CalibrationError> {
        for port in 0..self.topology.n_modes() {
            if self.detectors[port] != DetectorKind::Coherent {
                return Err(CalibrationError::CapabilityMismatch {
                    port,
                    needed: "coherent",
                });
            }
        }
        let mut y = self.propagate(input);
        if self.noise.sigma_phase > 0.0 {
            for value in &mut y {
                let g: f64 = StandardNormal.sample(&mut self.rng);
                *value *= Complex64::from_polar(1.0, self.noise.sigma_phase * g);
            }
        }
        Ok(y)
    }

    fn measure_all_intensities(&mut self, input: &[Complex64]) -> Vec<f64> {
        let y = self.propagate(input);
        let mut out = Vec::with_capacity(y.len());
        for (port, value) in y.iter().enumerate() {
            let mut v = self.responsivities[port] * value.norm_sqr();
            if self.noise.sigma_intensity > 0.0 {
                let g: f64 = StandardNormal.sample(&mut self.rng);
                v *= 1.0 + self.noise.sigma_intensity * g;
            }
            out.push(v);
        }
        out
    }
}
