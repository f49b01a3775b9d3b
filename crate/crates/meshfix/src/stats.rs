//! Closed-form error laws, Haar statistics of mesh settings, dynamic
//! error budgets, and the Monte-Carlo sweep engine behind the scaling
//! figures.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::{PI, TAU};

use crate::correct::correct_mesh;
use crate::decompose::decompose;
use crate::error::MeshError;
use crate::mesh::{haar_random_unitary, matrix_error, mesh_unitary, ErrorMap, MeshLayout};

/// Largest mesh size the sweep engine accepts.
pub const MAX_SWEEP_MODES: usize = 1024;

/// Thermo-optic coefficient of silicon, 1/K.
pub const SILICON_DN_DT: f64 = 1.8e-4;

/// Expected uncorrected matrix error of an N-mode mesh with splitter
/// deviation sigma_bs (radians): `sigma * sqrt(2(N-1))`.
pub fn expected_error(n: usize, sigma_bs: f64) -> f64 {
    sigma_bs * (2.0 * (n as f64 - 1.0)).sqrt()
}

/// Expected corrected matrix error: `sigma^2 * sqrt(2(N^2-1)/3)`, the
/// residual from devices whose required splitting cannot be realized.
pub fn expected_corrected_error(n: usize, sigma_bs: f64) -> f64 {
    let nf = n as f64;
    sigma_bs * sigma_bs * (2.0 * (nf * nf - 1.0) / 3.0).sqrt()
}

/// Haar probability density of the internal phase theta pooled over a full
/// N-mode mesh:
/// `p(theta) = sum_k [2(N-k)/(N(N-1))] k sin(theta/2) cos^{2k-1}(theta/2)`.
pub fn theta_density(n: usize, theta: f64) -> f64 {
    assert!(n >= 2);
    let nf = n as f64;
    let half = 0.5 * theta;
    let (s, c) = half.sin_cos();
    let mut acc = 0.0;
    let mut c_pow = c; // cos^{2k-1} for k = 1
    let c2 = c * c;
    for k in 1..n {
        let kf = k as f64;
        acc += 2.0 * (nf - kf) / (nf * (nf - 1.0)) * kf * s * c_pow;
        c_pow *= c2;
    }
    acc
}

/// Haar cumulative distribution `P(theta < xi)` over a full N-mode mesh:
/// `sum_k [2(N-k)/(N(N-1))] (1 - cos^{2k}(xi/2))`.
pub fn theta_cdf(n: usize, xi: f64) -> f64 {
    assert!(n >= 2);
    let nf = n as f64;
    let c2 = (0.5 * xi).cos().powi(2);
    let mut acc = 0.0;
    let mut c_pow = c2; // cos^{2k} for k = 1
    for k in 1..n {
        let kf = k as f64;
        acc += 2.0 * (nf - kf) / (nf * (nf - 1.0)) * (1.0 - c_pow);
        c_pow *= c2;
    }
    acc.clamp(0.0, 1.0)
}

/// Small-angle approximation of [`theta_cdf`]: `(N+1) xi^2 / 12`.
pub fn theta_cdf_small_angle(n: usize, xi: f64) -> f64 {
    (n as f64 + 1.0) / 12.0 * xi * xi
}

/// Probability that a device requires theta above the bar-side limit,
/// `P(theta > pi - 2|a-b|) ~= 4 sigma^2 / N`; orders of magnitude below
/// the cross-side tail and only reported, never corrected for.
pub fn tail_probability_bar(n: usize, sigma: f64) -> f64 {
    4.0 * sigma * sigma / n as f64
}

/// Component whose matrix-error contribution is requested.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ComponentKind {
    /// One splitter deviated by alpha.
    Splitter,
    /// One phase shifter offset by delta.
    Phase,
    /// One clipped device with theta shortfall delta, phases corrected.
    ClippedTheta,
}

/// Exact closed-form matrix-error contribution of a single component
/// error of the given magnitude embedded in an N-mode mesh.
pub fn component_error_contribution(kind: ComponentKind, magnitude: f64, n: usize) -> f64 {
    let nf = n as f64;
    match kind {
        ComponentKind::Splitter => (4.0 / nf * (1.0 - magnitude.cos())).sqrt(),
        ComponentKind::Phase => (2.0 / nf * (1.0 - magnitude.cos())).sqrt(),
        ComponentKind::ClippedTheta => (8.0 / nf).sqrt() * (0.25 * magnitude).sin().abs(),
    }
}

/// Dynamic (non-static) phase-error budget.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DynamicBudget {
    /// RMS phase error of an N-bit DAC driving a square-law shifter:
    /// uniform over +-2pi/2^bits, i.e. (2pi/2^bits)/sqrt(3).
    pub quantization_phase_rms: f64,
    /// Thermal drift phase, 2pi (dn/dT) dT L / lambda.
    pub thermal_phase: f64,
}

/// Quantization and thermal-drift phase errors for a DAC resolution,
/// shifter length (um), temperature stability (K) and wavelength (nm).
pub fn dynamic_error_budget(
    bits: u32,
    shifter_length_um: f64,
    delta_t_k: f64,
    wavelength_nm: f64,
) -> DynamicBudget {
    let worst = TAU / (1u64 << bits) as f64;
    let length_m = shifter_length_um * 1e-6;
    let lambda_m = wavelength_nm * 1e-9;
    DynamicBudget {
        quantization_phase_rms: worst / 3.0_f64.sqrt(),
        thermal_phase: TAU * SILICON_DN_DT * delta_t_k * length_m / lambda_m,
    }
}

/// Which arms of the experiment a sweep evaluates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepArms {
    Uncorrected,
    Corrected,
    Both,
}

/// Configuration of a Monte-Carlo matrix-error sweep: the cross product
/// of mesh sizes and splitter spreads, with `n_unitaries` Haar targets
/// each implemented on `n_error_maps` random circuits.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepConfig {
    pub n_modes: Vec<usize>,
    /// Standard deviation of alpha and beta in radians; the percent
    /// figures quoted for beamsplitters map 1:1 onto centiradians
    /// (a 52-48 splitter is alpha = 0.02 rad).
    pub sigma_bs: Vec<f64>,
    pub n_unitaries: usize,
    pub n_error_maps: usize,
    pub seed: u64,
    pub arms: SweepArms,
    /// Correlation between alpha and beta of one device (0 = independent).
    #[serde(default)]
    pub correlation: f64,
    #[serde(default = "default_layout")]
    pub layout: String,
}

fn default_layout() -> String {
    "rectangular".into()
}

impl SweepConfig {
    pub fn layout(&self) -> Result<MeshLayout, MeshError> {
        match self.layout.as_str() {
            "rectangular" => Ok(MeshLayout::Rectangular),
            "triangular" => Ok(MeshLayout::Triangular),
            other => Err(MeshError::InvalidParameter(format!(
                "unknown layout '{other}'"
            ))),
        }
    }

    pub fn validate(&self) -> Result<(), MeshError> {
        if self.n_unitaries == 0 || self.n_error_maps == 0 {
            return Err(MeshError::InvalidParameter(
                "sample counts must be at least 1".into(),
            ));
        }
        if self.n_modes.is_empty() || self.sigma_bs.is_empty() {
            return Err(MeshError::InvalidParameter(
                "need at least one mesh size and one sigma".into(),
            ));
        }
        for &n in &self.n_modes {
            if n < 2 || n > MAX_SWEEP_MODES {
                return Err(MeshError::InvalidParameter(format!(
                    "mesh size {n} outside [2, {MAX_SWEEP_MODES}]"
                )));
            }
        }
        self.layout()?;
        Ok(())
    }
}

/// One evaluated sample.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct SweepSample {
    pub n: usize,
    pub sigma: f64,
    pub trial: usize,
    pub corrected: bool,
    pub epsilon: f64,
    pub n_clipped: usize,
}

/// Summary statistics of one (N, sigma, arm) cell.
#[derive(Clone, Debug, Serialize)]
pub struct CellSummary {
    pub n: usize,
    pub sigma: f64,
    pub corrected: bool,
    pub samples: usize,
    pub mean: f64,
    pub median: f64,
    pub q25: f64,
    pub q75: f64,
    pub clip_fraction: f64,
}

/// All samples of a sweep plus per-cell summaries.
#[derive(Clone, Debug)]
pub struct SweepResult {
    pub samples: Vec<SweepSample>,
    pub cells: Vec<CellSummary>,
}

/// Stable seed derivation so parallel and serial runs agree exactly.
pub fn derive_seed(master: u64, tags: &[u64]) -> u64 {
    let mut x = master ^ 0x9e37_79b9_7f4a_7c15;
    for &t in tags {
        x ^= t.wrapping_mul(0xbf58_476d_1ce4_e5b9);
        // splitmix64 round
        x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = x;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        x = z ^ (z >> 31);
    }
    x
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

/// Run the sweep. Deterministic in `cfg.seed`: each (cell, unitary,
/// error-map) triple derives its own RNG stream, so thread count never
/// changes the results.
pub fn run_sweep(cfg: &SweepConfig) -> Result<SweepResult, MeshError> {
    cfg.validate()?;
    let layout = cfg.layout()?;

    let mut cell_list = Vec::new();
    for (ni, &n) in cfg.n_modes.iter().enumerate() {
        for (si, &sigma) in cfg.sigma_bs.iter().enumerate() {
            cell_list.push((ni, si, n, sigma));
        }
    }

    let mut samples: Vec<SweepSample> = Vec::new();
    for &(ni, si, n, sigma) in &cell_list {
        // Decompose each Haar target once per cell; unitaries are shared
        // across all error maps of the cell.
        let programs: Vec<_> = (0..cfg.n_unitaries)
            .into_par_iter()
            .map(|ui| {
                let useed = derive_seed(cfg.seed, &[1, ni as u64, ui as u64]);
                let u = haar_random_unitary(n, useed);
                let program = decompose(&u, layout)?.program;
                Ok::<_, MeshError>((u, program))
            })
            .collect::<Result<_, _>>()?;

        let mut cell_samples: Vec<SweepSample> = (0..cfg.n_unitaries * cfg.n_error_maps)
            .into_par_iter()
            .map(|trial| {
                let ui = trial / cfg.n_error_maps;
                let ei = trial % cfg.n_error_maps;
                let (u, program) = &programs[ui];
                let eseed = derive_seed(cfg.seed, &[2, ni as u64, si as u64, ei as u64]);
                let mut rng = ChaCha8Rng::seed_from_u64(eseed);
                let errors = ErrorMap::sample_gaussian_correlated(
                    program.topology().mzi_count(),
                    sigma,
                    cfg.correlation,
                    &mut rng,
                );
                let mut out = Vec::with_capacity(2);
                if matches!(cfg.arms, SweepArms::Uncorrected | SweepArms::Both) {
                    let hw = mesh_unitary(program, Some(&errors))?;
                    out.push(SweepSample {
                        n,
                        sigma,
                        trial,
                        corrected: false,
                        epsilon: matrix_error(&hw, u)?,
                        n_clipped: 0,
                    });
                }
                if matches!(cfg.arms, SweepArms::Corrected | SweepArms::Both) {
                    let report = correct_mesh(program, &errors)?;
                    let hw = mesh_unitary(&report.corrected_program, Some(&errors))?;
                    out.push(SweepSample {
                        n,
                        sigma,
                        trial,
                        corrected: true,
                        epsilon: matrix_error(&hw, u)?,
                        n_clipped: report.n_clipped,
                    });
                }
                Ok::<_, MeshError>(out)
            })
            .collect::<Result<Vec<_>, _>>()?
            .into_iter()
            .flatten()
            .collect();
        samples.append(&mut cell_samples);
    }

    let mut cells = Vec::new();
    for &(_, _, n, sigma) in &cell_list {
        for corrected in [false, true] {
            let mut eps: Vec<f64> = samples
                .iter()
                .filter(|s| s.n == n && s.sigma == sigma && s.corrected == corrected)
                .map(|s| s.epsilon)
                .collect();
            if eps.is_empty() {
                continue;
            }
            eps.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let mean = eps.iter().sum::<f64>() / eps.len() as f64;
            let clipped = samples
                .iter()
                .filter(|s| s.n == n && s.sigma == sigma && s.corrected == corrected)
                .filter(|s| s.n_clipped > 0)
                .count();
            cells.push(CellSummary {
                n,
                sigma,
                corrected,
                samples: eps.len(),
                mean,
                median: quantile(&eps, 0.5),
                q25: quantile(&eps, 0.25),
                q75: quantile(&eps, 0.75),
                clip_fraction: clipped as f64 / eps.len() as f64,
            });
        }
    }

    Ok(SweepResult { samples, cells })
}

/// Sampled effective-index difference of a directional coupler vs
/// wavelength, used to derive wavelength-dependent splitter errors.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DnTable {
    /// Wavelengths in nm, strictly increasing.
    pub lambda_nm: Vec<f64>,
    /// Delta n at each wavelength.
    pub dn: Vec<f64>,
}

impl DnTable {
    pub fn interpolate(&self, lambda_nm: f64) -> Result<f64, MeshError> {
        if self.lambda_nm.len() != self.dn.len() || self.lambda_nm.len() < 2 {
            return Err(MeshError::InvalidParameter(
                "dn table needs matching lambda/dn arrays of length >= 2".into(),
            ));
        }
        let first = self.lambda_nm[0];
        let last = *self.lambda_nm.last().unwrap();
        if lambda_nm < first || lambda_nm > last {
            return Err(MeshError::InvalidParameter(format!(
                "lambda {lambda_nm} nm outside table range [{first}, {last}]"
            )));
        }
        let idx = self
            .lambda_nm
            .windows(2)
            .position(|w| lambda_nm <= w[1])
            .unwrap();
        let (x0, x1) = (self.lambda_nm[idx], self.lambda_nm[idx + 1]);
        let (y0, y1) = (self.dn[idx], self.dn[idx + 1]);
        let t = if x1 > x0 { (lambda_nm - x0) / (x1 - x0) } else { 0.0 };
        Ok(y0 + t * (y1 - y0))
    }
}

/// Cross-coupling power fraction of a coupler designed for 50-50 at
/// lambda0: `T = sin^2[ (pi/4) (dn(l)/dn(l0)) (l0/l) ]`.
pub fn wavelength_coupling(
    table: &DnTable,
    lambda0_nm: f64,
    lambda_nm: f64,
) -> Result<f64, MeshError> {
    let dn = table.interpolate(lambda_nm)?;
    let dn0 = table.interpolate(lambda0_nm)?;
    if dn0 == 0.0 {
        return Err(MeshError::InvalidParameter(
            "dn(lambda0) must be nonzero".into(),
        ));
    }
    let arg = PI / 4.0 * (dn / dn0) * (lambda0_nm / lambda_nm);
    Ok(arg.sin().powi(2))
}

/// Splitting-angle deviation corresponding to the cross coupling at
/// `lambda`: `alpha = arcsin(sqrt T) - pi/4`, ready for an [`ErrorMap`].
pub fn wavelength_alpha(
    table: &DnTable,
    lambda0_nm: f64,
    lambda_nm: f64,
) -> Result<f64, MeshError> {
    let t = wavelength_coupling(table, lambda0_nm, lambda_nm)?;
    Ok(t.sqrt().asin() - PI / 4.0)
}
