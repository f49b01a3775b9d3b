//! Local hardware-error correction for MZI gates.
//!
//! Given the calibrated splitter errors (alpha, beta) of a device, the
//! target settings (theta, phi) are mapped to corrected settings
//! (theta', phi') plus two auxiliary output phases (psi1, psi2) such that
//! the imperfect device implements the target gate exactly whenever theta
//! lies in the realizable range
//!
//! ```text
//! 2|alpha + beta| < theta < pi - 2|alpha - beta|
//! ```
//!
//! Outside that range theta' is clipped to the nearest extreme (0 or pi)
//! and only the phases are corrected, which minimizes the gate error. The
//! auxiliary phases cannot be applied locally; [`correct_mesh`] propagates
//! them forward through the mesh into a modified output screen D'.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

use num_complex::Complex64;
use serde::Serialize;

use crate::error::MeshError;
use crate::mesh::{
    wrap_pi, wrap_two_pi, CMatrix, ErrorMap, MeshProgram, MziSettings, SplitterErrors,
};

/// How a device's theta' was restricted by the realizable range.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum ClipState {
    /// theta was realizable; theta' is exact.
    None,
    /// theta below 2|alpha+beta|; theta' = 0.
    ClippedToCross,
    /// theta above pi - 2|alpha-beta|; theta' = pi.
    ClippedToBar,
}

impl ClipState {
    pub fn is_clipped(&self) -> bool {
        !matches!(self, ClipState::None)
    }
}

/// Corrected internal phase for one device.
///
/// Returns the exact theta' solving
/// `sin^2(theta'/2) = (sin^2(theta/2) - sin^2(a+b)) / (cos^2(a-b) - sin^2(a+b))`
/// when theta is realizable, else the clipped extreme.
pub fn correct_theta(theta: f64, e: SplitterErrors) -> Result<(f64, ClipState), MeshError> {
    if !(0.0..=PI + 1e-12).contains(&theta) {
        return Err(MeshError::ThetaOutOfRange(theta));
    }
    let theta = theta.min(PI);
    let sum = e.alpha() + e.beta();
    let diff = e.alpha() - e.beta();
    let lo = 2.0 * sum.abs();
    let hi = PI - 2.0 * diff.abs();
    if theta <= lo {
        return Ok((0.0, ClipState::ClippedToCross));
    }
    if theta >= hi {
        return Ok((PI, ClipState::ClippedToBar));
    }
    let sin_half = (0.5 * theta).sin();
    let num = sin_half * sin_half - sum.sin().powi(2);
    let den = diff.cos().powi(2) - sum.sin().powi(2);
    let ratio = (num / den).clamp(0.0, 1.0);
    Ok((2.0 * ratio.sqrt().asin(), ClipState::None))
}

/// The three phase corrections of one device.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhaseCorrection {
    /// phi' - phi.
    pub phi_offset: f64,
    /// Auxiliary phase on the top output mode.
    pub psi1: f64,
    /// Auxiliary phase on the bottom output mode.
    pub psi2: f64,
}

/// Phase corrections (phi' - phi, psi1, psi2) for a device programmed to
/// theta' (possibly clipped).
///
/// The arctangent terms are evaluated with the two-argument arctangent of
/// (numerator factor, denominator factor x tan-or-cot cofactor), which
/// resolves the theta' = 0 and theta' = pi singularities to +-pi/2 with
/// the sign of the numerator.
pub fn correct_phases(theta: f64, theta_prime: f64, e: SplitterErrors) -> PhaseCorrection {
    let (s_half, c_half) = (0.5 * theta_prime).sin_cos();
    let (sp, cp) = (e.alpha() + e.beta()).sin_cos();
    let (sm, cm) = (e.alpha() - e.beta()).sin_cos();
    // arctan[ sin(a-b)/cos(a+b) tan(theta'/2) ]
    let tan_term = f64::atan2(sm * s_half, cp * c_half);
    // arctan[ sin(a+b)/cos(a-b) cot(theta'/2) ]
    let cot_term = f64::atan2(sp * c_half, cm * s_half);
    let shift = 0.5 * (theta - theta_prime);
    PhaseCorrection {
        phi_offset: wrap_pi(tan_term - cot_term),
        psi1: wrap_pi(-tan_term + shift),
        psi2: wrap_pi(cot_term + shift),
    }
}

/// Complete corrected setting of one device.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct DeviceCorrection {
    pub theta_prime: f64,
    pub phi_prime: f64,
    pub psi1: f64,
    pub psi2: f64,
    pub clipped: ClipState,
}

/// Result of correcting a whole mesh program.
#[derive(Clone, Debug)]
pub struct CorrectionReport {
    pub devices: Vec<DeviceCorrection>,
    pub corrected_program: MeshProgram,
    pub n_clipped: usize,
    /// Estimated matrix error from clipped devices alone,
    /// sqrt(sum_clipped delta^2 / (2N)) with delta the theta shortfall.
    pub predicted_residual: f64,
}

/// Correct every device of `target_program` for the splitter errors in
/// `errors`, propagating the auxiliary phases forward into a modified
/// output screen D'.
///
/// Walks the devices in propagation order with one accumulated phase per
/// mode. At each device the incoming top/bottom phases (pt, pb) are
/// absorbed by the identity
/// `T(theta, phi) . diag(e^{i pt}, e^{i pb}) = diag(e^{i pb}, e^{i pb}) . T(theta, phi + pt - pb)`,
/// the common phase pb is carried forward on both outputs, and the
/// device's own psi1/psi2 are added to its output modes. Phases left on
/// the modes at the end merge into D'.
pub fn correct_mesh(
    target_program: &MeshProgram,
    errors: &ErrorMap,
) -> Result<CorrectionReport, MeshError> {
    let topo = target_program.topology();
    if errors.len() != topo.mzi_count() {
        return Err(MeshError::DimensionMismatch(format!(
            "error map has {} entries for {} MZIs",
            errors.len(),
            topo.mzi_count()
        )));
    }
    let n = topo.n_modes();
    let mut carried = vec![0.0_f64; n];
    let mut devices = Vec::with_capacity(topo.mzi_count());
    let mut corrected_settings = Vec::with_capacity(topo.mzi_count());
    let mut n_clipped = 0;
    let mut clip_sq_sum = 0.0;

    for (idx, placement) in topo.placements().iter().enumerate() {
        let m = placement.top_mode;
        let s = target_program.settings()[idx];
        let e = errors.errors()[idx];

        // Absorb the phases accumulated on the input modes.
        let phi_in = s.phi() + carried[m] - carried[m + 1];
        let common = carried[m + 1];

        let theta = fold_theta(s.theta());
        let (theta_prime, clipped) = correct_theta(theta, e)?;
        let pc = correct_phases(theta, theta_prime, e);
        if clipped.is_clipped() {
            n_clipped += 1;
            // A device clipped to an extreme still realizes the boundary
            // splitting (|T'_00(0)| = |sin(a+b)|, |T'_00(pi)| = cos(a-b)),
            // so the shortfall is measured against the range boundary.
            let shortfall = match clipped {
                ClipState::ClippedToCross => 2.0 * (e.alpha() + e.beta()).abs() - theta,
                ClipState::ClippedToBar => theta - (PI - 2.0 * (e.alpha() - e.beta()).abs()),
                ClipState::None => unreachable!(),
            };
            clip_sq_sum += shortfall * shortfall;
        }

        let phi_prime = phi_in + pc.phi_offset;
        carried[m] = common + pc.psi1;
        carried[m + 1] = common + pc.psi2;

        let setting = MziSettings::new(theta_prime, phi_prime);
        devices.push(DeviceCorrection {
            theta_prime,
            phi_prime: setting.phi(),
            psi1: pc.psi1,
            psi2: pc.psi2,
            clipped,
        });
        corrected_settings.push(setting);
    }

    let output_phases: Vec<f64> = target_program
        .output_phases()
        .iter()
        .zip(carried.iter())
        .map(|(d, c)| wrap_two_pi(d + c))
        .collect();

    let corrected_program = MeshProgram::new(topo.clone(), corrected_settings, output_phases)?;
    Ok(CorrectionReport {
        devices,
        corrected_program,
        n_clipped,
        predicted_residual: (clip_sq_sum / (2.0 * n as f64)).sqrt(),
    })
}

/// Map a stored theta in [0, 2pi) onto the decomposition branch [0, pi].
///
/// Decompositions emit theta in [0, pi] already; values just above pi or
/// just below 2pi only arise from wrapping noise on exact extremes.
fn fold_theta(theta: f64) -> f64 {
    if theta <= PI {
        theta
    } else {
        (2.0 * PI - theta).clamp(0.0, PI)
    }
}

/// Settings for the redundant "perfect gate" MZI of the scalability
/// analysis: a passive output splitter with error `beta` and a tunable
/// input splitter built from an MZI whose own couplers carry errors
/// (a1, a2). Tuning the inner MZI to implement an effective deviation
/// alpha(theta_alpha) = -+beta makes any splitting in [0, pi] reachable.
#[derive(Clone, Copy, Debug)]
pub struct RedundantGateSettings {
    /// Internal phase of the tunable-splitter MZI.
    pub theta_alpha: f64,
    /// Internal phase between the tunable splitter and the passive one.
    pub theta_prime: f64,
    /// External phase on the top input.
    pub phi_prime: f64,
    /// Auxiliary phase on the top output mode.
    pub psi1: f64,
    /// Auxiliary phase on the bottom output mode.
    pub psi2: f64,
}

/// Compute redundant-gate settings realizing `T(theta, phi)` exactly (up
/// to a global phase) despite errors `beta` on the passive splitter and
/// (a1, a2) inside the tunable one.
pub fn redundant_gate_settings(
    theta: f64,
    phi: f64,
    passive_beta: f64,
    a1: f64,
    a2: f64,
) -> Result<RedundantGateSettings, MeshError> {
    if !(0.0..=PI + 1e-12).contains(&theta) {
        return Err(MeshError::ThetaOutOfRange(theta));
    }
    let theta = theta.min(PI);
    let margin = FRAC_PI_4 - (a1 + a2).abs().max((a1 - a2).abs());
    if passive_beta.abs() >= margin {
        return Err(MeshError::InvalidParameter(format!(
            "passive splitter error {passive_beta} outside the correctable range (< {margin})"
        )));
    }

    let sum_a = a1 + a2;
    let diff_a = a1 - a2;
    let lower_branch = theta <= FRAC_PI_2;

    // Tunable splitter target: alpha_eff = -beta on the lower branch,
    // +beta on the upper one, i.e. an effective splitting angle of
    // pi/4 +- beta programmed through the inner MZI's own correction.
    let eff = if lower_branch {
        FRAC_PI_4 + passive_beta
    } else {
        FRAC_PI_4 - passive_beta
    };
    let num = eff.sin().powi(2) - sum_a.sin().powi(2);
    let den = diff_a.cos().powi(2) - sum_a.sin().powi(2);
    let theta_alpha = 2.0 * ((num / den).clamp(0.0, 1.0)).sqrt().asin();

    let (s_ha, c_ha) = (0.5 * theta_alpha).sin_cos();
    let xi1 = f64::atan2(sum_a.sin() * c_ha, diff_a.cos() * s_ha);
    let xi2 = f64::atan2(diff_a.sin() * s_ha, sum_a.cos() * c_ha);
    let xi3 = -xi1;

    let sec2b = 1.0 / (2.0 * passive_beta).cos();
    let sin2b = (2.0 * passive_beta).sin();

    let (theta_prime, phi_prime, psi1, psi2);
    if lower_branch {
        theta_prime = 2.0 * (sec2b * (0.5 * theta).sin()).clamp(-1.0, 1.0).acos()
            + FRAC_PI_2
            + xi3
            - xi2;
        let t_tilde = theta_prime + xi2 - xi3 - FRAC_PI_2;
        let (s_ht, c_ht) = (0.5 * t_tilde).sin_cos();
        let shift = 0.5 * (theta - theta_alpha - theta_prime - xi2 - xi3);
        phi_prime = phi - xi1 + xi2 + Complex64::new(-sin2b * c_ht, s_ht).arg();
        psi1 = Complex64::new(sin2b * c_ht, s_ht).arg() + shift - 5.0 * FRAC_PI_4;
        psi2 = FRAC_PI_4 + shift;
    } else {
        theta_prime = 2.0 * (sec2b * (0.5 * theta).cos()).clamp(-1.0, 1.0).asin()
            + FRAC_PI_2
            + xi3
            - xi2;
        let t_tilde = theta_prime + xi2 - xi3 - FRAC_PI_2;
        let (s_ht, c_ht) = (0.5 * t_tilde).sin_cos();
        let shift = 0.5 * (theta - theta_alpha - theta_prime - xi2 - xi3);
        phi_prime = phi - xi1 + xi2 + FRAC_PI_2 + ((0.5 * t_tilde).tan() * sin2b).atan();
        psi1 = shift - 3.0 * FRAC_PI_4;
        psi2 = -Complex64::new(-sin2b * s_ht, c_ht).arg() + shift + 3.0 * FRAC_PI_4;
    }

    Ok(RedundantGateSettings {
        theta_alpha: wrap_two_pi(theta_alpha),
        theta_prime: wrap_two_pi(theta_prime),
        phi_prime: wrap_two_pi(phi_prime),
        psi1: wrap_pi(psi1),
        psi2: wrap_pi(psi2),
    })
}

/// Transfer matrix of the assembled redundant gate at the given settings:
/// output phases, passive splitter `beta`, internal shifter theta', inner
/// MZI (a2 | theta_alpha | a1) as the tunable splitter, and the external
/// shifter phi' on the top input.
pub fn redundant_gate_matrix(
    settings: &RedundantGateSettings,
    passive_beta: f64,
    a1: f64,
    a2: f64,
) -> CMatrix {
    let splitter = |x: f64| {
        let (s, c) = (FRAC_PI_4 + x).sin_cos();
        ndarray::arr2(&[
            [Complex64::new(c, 0.0), Complex64::new(0.0, s)],
            [Complex64::new(0.0, s), Complex64::new(c, 0.0)],
        ])
    };
    let shifter = |p: f64| {
        ndarray::arr2(&[
            [Complex64::from_polar(1.0, p), Complex64::ZERO],
            [Complex64::ZERO, Complex64::new(1.0, 0.0)],
        ])
    };
    let psi = ndarray::arr2(&[
        [Complex64::from_polar(1.0, settings.psi1), Complex64::ZERO],
        [Complex64::ZERO, Complex64::from_polar(1.0, settings.psi2)],
    ]);
    psi.dot(&splitter(passive_beta))
        .dot(&shifter(settings.theta_prime))
        .dot(&splitter(a2))
        .dot(&shifter(settings.theta_alpha))
        .dot(&splitter(a1))
        .dot(&shifter(settings.phi_prime))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decompose::clements_decompose;
    use crate::mesh::{
        equal_up_to_global_phase, haar_random_unitary, ideal_mzi_unitary, imperfect_mzi_unitary,
        matrix_error, mesh_unitary,
    };
    use approx::assert_abs_diff_eq;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn corrected_device(theta: f64, phi: f64, e: SplitterErrors) -> (CMatrix, ClipState) {
        let (tp, clip) = correct_theta(theta, e).unwrap();
        let pc = correct_phases(theta, tp, e);
        let t = imperfect_mzi_unitary(MziSettings::new(tp, phi + pc.phi_offset), e);
        let psi = ndarray::arr2(&[
            [Complex64::from_polar(1.0, pc.psi1), Complex64::ZERO],
            [Complex64::ZERO, Complex64::from_polar(1.0, pc.psi2)],
        ]);
        (psi.dot(&t), clip)
    }

    #[test]
    fn error_free_theta_passthrough() {
        let (tp, clip) = correct_theta(FRAC_PI_2, SplitterErrors::zero()).unwrap();
        assert_abs_diff_eq!(tp, FRAC_PI_2, epsilon = 1e-15);
        assert_eq!(clip, ClipState::None);
    }

    #[test]
    fn clips_below_range() {
        let e = SplitterErrors::new(0.02, 0.02).unwrap();
        let (tp, clip) = correct_theta(0.05, e).unwrap();
        assert_eq!(tp, 0.0);
        assert_eq!(clip, ClipState::ClippedToCross);

        let (tp, clip) = correct_theta(PI - 1e-3, SplitterErrors::new(0.02, -0.02).unwrap()).unwrap();
        assert_eq!(tp, PI);
        assert_eq!(clip, ClipState::ClippedToBar);
    }

    #[test]
    fn theta_prime_example_value() {
        let e = SplitterErrors::new(0.02, 0.02).unwrap();
        let (tp, clip) = correct_theta(FRAC_PI_2, e).unwrap();
        assert_eq!(clip, ClipState::None);
        assert_abs_diff_eq!(tp, 1.569194617894705, epsilon = 1e-12);
        // |upper-left of T'(theta')| must equal sin(pi/4).
        let t = imperfect_mzi_unitary(MziSettings::new(tp, 0.0), e);
        assert_abs_diff_eq!(t[[0, 0]].norm(), (FRAC_PI_4).sin(), epsilon = 1e-12);
    }

    #[test]
    fn phases_vanish_without_errors() {
        let pc = correct_phases(1.0, 1.0, SplitterErrors::zero());
        assert_eq!(pc.phi_offset, 0.0);
        assert_eq!(pc.psi1, 0.0);
        assert_eq!(pc.psi2, 0.0);
    }

    #[test]
    fn phi_offset_with_equal_errors() {
        // alpha = beta makes the tan-term vanish: phi' - phi =
        // -arctan(sin(2a) cot(theta'/2)).
        let e = SplitterErrors::new(0.02, 0.02).unwrap();
        let (tp, _) = correct_theta(FRAC_PI_2, e).unwrap();
        let pc = correct_phases(FRAC_PI_2, tp, e);
        let expect = -((0.04_f64).sin() / (0.5 * tp).tan()).atan();
        assert_abs_diff_eq!(pc.phi_offset, expect, epsilon = 1e-12);
    }

    #[test]
    fn corrected_device_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..100_000 {
            let e = SplitterErrors::new(rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1))
                .unwrap();
            let lo = 2.0 * (e.alpha() + e.beta()).abs();
            let hi = PI - 2.0 * (e.alpha() - e.beta()).abs();
            let theta = rng.random_range(lo + 1e-9..hi - 1e-9);
            let phi = rng.random_range(0.0..2.0 * PI);
            let (got, clip) = corrected_device(theta, phi, e);
            assert_eq!(clip, ClipState::None);
            let want = ideal_mzi_unitary(MziSettings::new(theta, phi));
            let diff = crate::decompose::max_entry_diff(&got, &want);
            assert!(diff < 1e-10, "correction off by {diff} at theta={theta}");
        }
    }

    #[test]
    fn matrix_level_oracle_nontrivial_point() {
        let e = SplitterErrors::new(0.02, -0.01).unwrap();
        let (got, _) = corrected_device(0.3, 0.0, e);
        let want = ideal_mzi_unitary(MziSettings::new(0.3, 0.0));
        assert!(crate::decompose::max_entry_diff(&got, &want) < 1e-10);
    }

    #[test]
    fn clip_at_zero_is_optimal() {
        // For theta below range, theta' = 0 with corrected phases beats any
        // realizable theta' > 0.
        let e = SplitterErrors::new(0.02, 0.02).unwrap();
        let theta = 0.05;
        let phi = 0.7;
        let target = ideal_mzi_unitary(MziSettings::new(theta, phi));
        let err_at = |tp: f64| {
            let pc = correct_phases(theta, tp, e);
            let t = imperfect_mzi_unitary(MziSettings::new(tp, phi + pc.phi_offset), e);
            let psi = ndarray::arr2(&[
                [Complex64::from_polar(1.0, pc.psi1), Complex64::ZERO],
                [Complex64::ZERO, Complex64::from_polar(1.0, pc.psi2)],
            ]);
            matrix_error(&psi.dot(&t), &target).unwrap()
        };
        let clipped = err_at(0.0);
        for k in 1..=1000 {
            let tp = 1.5 * k as f64 / 1000.0;
            assert!(
                clipped <= err_at(tp) + 1e-12,
                "theta'={tp} beat the clip ({} vs {})",
                err_at(tp),
                clipped
            );
        }
    }

    #[test]
    fn forward_propagation_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..1000 {
            let theta = rng.random_range(0.0..PI);
            let phi = rng.random_range(0.0..2.0 * PI);
            let p1 = rng.random_range(-PI..PI);
            let p2 = rng.random_range(-PI..PI);
            let t = |ph: f64| ideal_mzi_unitary(MziSettings::new(theta, ph));
            let diag = |a: f64, b: f64| {
                ndarray::arr2(&[
                    [Complex64::from_polar(1.0, a), Complex64::ZERO],
                    [Complex64::ZERO, Complex64::from_polar(1.0, b)],
                ])
            };
            let lhs = t(phi).dot(&diag(p1, p2));
            let rhs = diag(p2, p2).dot(&t(phi + p1 - p2));
            assert!(crate::decompose::max_entry_diff(&lhs, &rhs) < 1e-12);
        }
    }

    #[test]
    fn zero_errors_identity_correction() {
        let u = haar_random_unitary(6, 77);
        let program = clements_decompose(&u).unwrap().program;
        let zeros = ErrorMap::zeros(program.topology().mzi_count());
        let report = correct_mesh(&program, &zeros).unwrap();
        assert_eq!(report.n_clipped, 0);
        for (a, b) in report
            .corrected_program
            .settings()
            .iter()
            .zip(program.settings())
        {
            assert_abs_diff_eq!(a.theta(), b.theta(), epsilon = 1e-12);
            assert_abs_diff_eq!(a.phi(), b.phi(), epsilon = 1e-12);
        }
        for (a, b) in report
            .corrected_program
            .output_phases()
            .iter()
            .zip(program.output_phases())
        {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-12);
        }
    }

    #[test]
    fn clip_free_mesh_correction_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let u = haar_random_unitary(8, 4);
        let program = clements_decompose(&u).unwrap().program;
        let target = mesh_unitary(&program, None).unwrap();
        // Redraw small error maps until none of the devices clips.
        let report = loop {
            let errors =
                ErrorMap::sample_gaussian(program.topology().mzi_count(), 0.005, &mut rng);
            let report = correct_mesh(&program, &errors).unwrap();
            if report.n_clipped == 0 {
                let hw = mesh_unitary(&report.corrected_program, Some(&errors)).unwrap();
                let eps = matrix_error(&hw, &target).unwrap();
                assert!(eps < 1e-9, "eps = {eps}");
                break report;
            }
        };
        assert_eq!(report.predicted_residual, 0.0);
    }

    #[test]
    fn correction_never_hurts() {
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        for trial in 0..20 {
            let u = haar_random_unitary(8, 100 + trial);
            let program = clements_decompose(&u).unwrap().program;
            let errors = ErrorMap::sample_gaussian(program.topology().mzi_count(), 0.02, &mut rng);
            let raw = mesh_unitary(&program, Some(&errors)).unwrap();
            let eps_raw = matrix_error(&raw, &u).unwrap();
            let report = correct_mesh(&program, &errors).unwrap();
            let fixed = mesh_unitary(&report.corrected_program, Some(&errors)).unwrap();
            let eps_fixed = matrix_error(&fixed, &u).unwrap();
            assert!(
                eps_fixed <= eps_raw,
                "corrected {eps_fixed} worse than raw {eps_raw}"
            );
        }
    }

    #[test]
    fn redundant_gate_exact_at_sample_points() {
        // Includes theta = 0.01, below the plain-MZI floor for beta = 0.03.
        for (theta, phi, beta, a1, a2) in [
            (FRAC_PI_2 - 0.1, 0.3, 0.03, 0.0, 0.0),
            (0.01, 1.2, 0.03, 0.01, -0.02),
            (PI - 0.02, 4.0, -0.04, 0.02, 0.015),
            (FRAC_PI_2, 0.0, 0.05, -0.03, 0.01),
            (0.0, 0.0, 0.0, 0.0, 0.0),
        ] {
            let settings = redundant_gate_settings(theta, phi, beta, a1, a2).unwrap();
            let gate = redundant_gate_matrix(&settings, beta, a1, a2);
            let target = ideal_mzi_unitary(MziSettings::new(theta, phi));
            assert!(
                equal_up_to_global_phase(&gate, &target, 1e-9),
                "redundant gate missed target at theta={theta}, beta={beta}"
            );
        }
    }

    #[test]
    fn redundant_gate_error_free_limit() {
        let settings = redundant_gate_settings(1.0, 2.0, 0.0, 0.0, 0.0).unwrap();
        assert_abs_diff_eq!(settings.theta_alpha, FRAC_PI_2, epsilon = 1e-12);
        let gate = redundant_gate_matrix(&settings, 0.0, 0.0, 0.0);
        let target = ideal_mzi_unitary(MziSettings::new(1.0, 2.0));
        assert!(equal_up_to_global_phase(&gate, &target, 1e-10));
    }

    #[test]
    fn redundant_gate_constraint() {
        assert!(redundant_gate_settings(1.0, 0.0, 0.7, 0.1, 0.1).is_err());
    }

    #[test]
    fn predicted_residual_tracks_clips() {
        // A target with one tiny theta and large errors must clip and
        // predict a nonzero residual.
        let topo = crate::mesh::MeshTopology::rectangular(2);
        let program =
            MeshProgram::new(topo, vec![MziSettings::new(0.02, 0.0)], vec![0.0, 0.0]).unwrap();
        let errors = ErrorMap::new(vec![SplitterErrors::new(0.03, 0.03).unwrap()]);
        let report = correct_mesh(&program, &errors).unwrap();
        assert_eq!(report.n_clipped, 1);
        // Shortfall = boundary - target = 2|a+b| - theta = 0.12 - 0.02.
        assert_abs_diff_eq!(
            report.predicted_residual,
            (0.10_f64.powi(2) / 4.0).sqrt(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn identity_stays_identity_under_correction_shape() {
        // Identity program on 4 modes, zero errors: corrected program must
        // reconstruct the identity.
        let eye: CMatrix = Array2::eye(4);
        let program = clements_decompose(&eye).unwrap().program;
        let zeros = ErrorMap::zeros(program.topology().mzi_count());
        let report = correct_mesh(&program, &zeros).unwrap();
        let rebuilt = mesh_unitary(&report.corrected_program, Some(&zeros)).unwrap();
        assert!(crate::decompose::max_entry_diff(&rebuilt, &eye) < 1e-12);
    }
}
