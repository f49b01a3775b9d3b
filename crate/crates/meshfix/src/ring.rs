//! Tunable dispersion compensator built from serially coupled
//! tunable-coupling ring resonators.
//!
//! Each ring is closed by an MZI coupler (internal phase `theta`, splitter
//! errors alpha/beta) plus a feedback path of length `z2` holding the ring
//! phase `phi`, a round-trip amplitude `a`, and a handful of routing
//! devices pinned to the bar state. The bus-to-bus transfer of one ring
//! follows from Mason's gain formula applied to the coupler two-port with
//! feedback; the whole array is the product of the per-ring responses.

use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_PI_4, PI, TAU};

use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;

use crate::correct::{correct_phases, correct_theta};
use crate::error::MeshError;
use crate::mesh::{wrap_two_pi, SplitterErrors};
use crate::optim::{nelder_mead, NelderMeadOptions};

/// Speed of light, m/s.
pub const C_LIGHT: f64 = 2.997_924_58e8;

/// First-order dispersive effective index:
/// `n(w) = n0 + (ng - n0)(w - w0)/w0`.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct IndexModel {
    pub n_eff: f64,
    pub n_group: f64,
    /// Reference angular frequency, rad/s.
    pub omega0: f64,
}

impl IndexModel {
    pub fn n(&self, omega: f64) -> f64 {
        self.n_eff + (self.n_group - self.n_eff) * (omega - self.omega0) / self.omega0
    }

    /// Propagation constant k = n(w) w / c.
    pub fn k(&self, omega: f64) -> f64 {
        self.n(omega) * omega / C_LIGHT
    }
}

/// Frequency channel the filter is trained over.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct Channel {
    /// Center frequency, Hz.
    pub center_hz: f64,
    /// Bandwidth, Hz.
    pub width_hz: f64,
}

impl Channel {
    pub fn center_omega(&self) -> f64 {
        TAU * self.center_hz
    }

    pub fn omega_grid(&self, points: usize) -> Vec<f64> {
        let lo = self.center_hz - 0.5 * self.width_hz;
        let hi = self.center_hz + 0.5 * self.width_hz;
        (0..points)
            .map(|i| TAU * (lo + (hi - lo) * i as f64 / (points - 1) as f64))
            .collect()
    }
}

/// One tunable-coupling ring.
#[derive(Clone, Debug)]
pub struct RingSpec {
    /// Coupler MZI internal phase.
    pub theta: f64,
    /// Ring (loop) phase.
    pub phi: f64,
    /// Coupler splitter errors.
    pub errors: SplitterErrors,
    /// Interferometer arm length, m.
    pub z1: f64,
    /// Feedback-loop length, m.
    pub z2: f64,
    /// Round-trip amplitude transmission of the loop, in (0, 1].
    pub a: f64,
    /// Routing devices in the loop held at the bar state; each multiplies
    /// the loop amplitude by cos(alpha - beta).
    pub bar_tbus: Vec<SplitterErrors>,
}

impl RingSpec {
    pub fn validate(&self) -> Result<(), MeshError> {
        if !(0.0 < self.a && self.a <= 1.0) {
            return Err(MeshError::InvalidParameter(format!(
                "loop amplitude {} outside (0, 1]",
                self.a
            )));
        }
        if self.z1 <= 0.0 || self.z2 <= 0.0 {
            return Err(MeshError::InvalidParameter("lengths must be positive".into()));
        }
        Ok(())
    }

    /// Loop amplitude including the bar-state routing losses.
    pub fn effective_loop_amplitude(&self) -> f64 {
        self.a
            * self
                .bar_tbus
                .iter()
                .map(|e| (e.alpha() - e.beta()).cos())
                .product::<f64>()
    }
}

/// A serial chain of rings with a shared index model and channel.
#[derive(Clone, Debug)]
pub struct RingArraySpec {
    pub rings: Vec<RingSpec>,
    pub index: IndexModel,
    pub channel: Channel,
}

impl RingArraySpec {
    pub fn validate(&self) -> Result<(), MeshError> {
        if self.rings.is_empty() {
            return Err(MeshError::InvalidParameter("need at least one ring".into()));
        }
        for r in &self.rings {
            r.validate()?;
        }
        Ok(())
    }
}

/// Bus-to-bus transfer of one ring at angular frequency `omega`, in the
/// convention where a plain delay line reads e^{-i omega t0} (so the group
/// delay -d arg T / d omega comes out positive).
///
/// With the coupler two-port C = S(beta) diag(e^{i(k z1 + theta)}, e^{i k z1})
/// S(alpha) (ring arm on top) and loop factor L = a_eff e^{i(k z2 + phi)},
/// Mason's rule gives `T = (C22 - det C . L) / (1 - C11 L)`; the returned
/// value is its conjugate. For a lossless coupler |det C| = 1, which keeps
/// |T| = 1 whenever the loop is lossless.
pub fn ring_response(r: &RingSpec, index: &IndexModel, omega: f64) -> Complex64 {
    let k = index.k(omega);
    let tau1 = (FRAC_PI_4 + r.errors.alpha()).cos();
    let kap1 = (FRAC_PI_4 + r.errors.alpha()).sin();
    let tau2 = (FRAC_PI_4 + r.errors.beta()).cos();
    let kap2 = (FRAC_PI_4 + r.errors.beta()).sin();

    let e_z1 = Complex64::from_polar(1.0, k * r.z1);
    let e_th = Complex64::from_polar(1.0, r.theta);
    let c11 = e_z1 * (tau1 * tau2 * e_th - kap1 * kap2);
    let c22 = e_z1 * (tau1 * tau2 - kap1 * kap2 * e_th);
    let det = Complex64::from_polar(1.0, 2.0 * k * r.z1 + r.theta);
    let loop_amp = r.effective_loop_amplitude();
    let l = Complex64::from_polar(loop_amp, k * r.z2 + r.phi);

    ((c22 - det * l) / (Complex64::new(1.0, 0.0) - c11 * l)).conj()
}

/// Pointwise product of all ring responses over a frequency grid.
pub fn array_response(spec: &RingArraySpec, omega_grid: &[f64]) -> Vec<Complex64> {
    omega_grid
        .iter()
        .map(|&w| {
            spec.rings
                .iter()
                .map(|r| ring_response(r, &spec.index, w))
                .product()
        })
        .collect()
}

/// Group delay tau(w) = -d/dw arg T(w) by phase-unwrapped central
/// differences (one-sided at the ends), in seconds.
///
/// Fails if any inter-sample phase step reaches pi, where unwrapping
/// becomes ambiguous (grid too coarse for the response).
pub fn group_delay(response: &[Complex64], omega_grid: &[f64]) -> Result<Vec<f64>, MeshError> {
    if response.len() != omega_grid.len() || response.len() < 3 {
        return Err(MeshError::DimensionMismatch(
            "need matching response/grid arrays of length >= 3".into(),
        ));
    }
    let mut phase = Vec::with_capacity(response.len());
    let mut prev = response[0].arg();
    let mut offset = 0.0;
    phase.push(prev);
    for (i, r) in response.iter().enumerate().skip(1) {
        let raw = r.arg();
        let mut step = raw - prev;
        while step > PI {
            step -= TAU;
        }
        while step < -PI {
            step += TAU;
        }
        // Wrapped steps approaching pi mean the grid no longer resolves
        // the phase evolution; beyond pi the unwrap would alias silently.
        if step.abs() >= PI * 0.9 {
            return Err(MeshError::GridTooCoarse {
                index: i,
                step: step.abs(),
            });
        }
        offset += step;
        phase.push(phase[0] + offset);
        prev = raw;
    }
    let n = phase.len();
    let mut tau = vec![0.0; n];
    for i in 0..n {
        let (dp, dw) = if i == 0 {
            (phase[1] - phase[0], omega_grid[1] - omega_grid[0])
        } else if i == n - 1 {
            (phase[n - 1] - phase[n - 2], omega_grid[n - 1] - omega_grid[n - 2])
        } else {
            (phase[i + 1] - phase[i - 1], omega_grid[i + 1] - omega_grid[i - 1])
        };
        tau[i] = -dp / dw;
    }
    Ok(tau)
}

/// Ordinary-least-squares slope of tau vs wavelength over the grid, in
/// ps/nm, plus the RMS residual of the fit (ps).
pub fn fit_gdd(tau_s: &[f64], lambda_nm: &[f64]) -> Result<(f64, f64), MeshError> {
    if tau_s.len() != lambda_nm.len() || tau_s.len() < 2 {
        return Err(MeshError::DimensionMismatch(
            "need matching tau/lambda arrays of length >= 2".into(),
        ));
    }
    let n = tau_s.len() as f64;
    let tau_ps: Vec<f64> = tau_s.iter().map(|t| t * 1e12).collect();
    let mx = lambda_nm.iter().sum::<f64>() / n;
    let my = tau_ps.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (x, y) in lambda_nm.iter().zip(&tau_ps) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
    }
    if sxx == 0.0 {
        return Err(MeshError::InvalidParameter("degenerate lambda grid".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = lambda_nm
        .iter()
        .zip(&tau_ps)
        .map(|(x, y)| {
            let r = y - (slope * x + intercept);
            r * r
        })
        .sum();
    Ok((slope, (rss / n).sqrt()))
}

/// Wavelengths (nm) of an angular-frequency grid.
pub fn lambda_grid_nm(omega_grid: &[f64]) -> Vec<f64> {
    omega_grid.iter().map(|&w| TAU * C_LIGHT / w * 1e9).collect()
}

/// Group-delay profile of a spec over `points` samples across its channel.
pub fn delay_profile(spec: &RingArraySpec, points: usize) -> Result<(Vec<f64>, Vec<f64>), MeshError> {
    let grid = spec.channel.omega_grid(points);
    let resp = array_response(spec, &grid);
    let tau = group_delay(&resp, &grid)?;
    Ok((grid, tau))
}

/// GDD (ps/nm) of a spec over its channel.
pub fn gdd_of(spec: &RingArraySpec, points: usize) -> Result<f64, MeshError> {
    let (grid, tau) = delay_profile(spec, points)?;
    let lambdas = lambda_grid_nm(&grid);
    Ok(fit_gdd(&tau, &lambdas)?.0)
}

/// Result of training the ideal model.
#[derive(Clone, Debug)]
pub struct TrainResult {
    pub spec: RingArraySpec,
    pub achieved_gdd_ps_nm: f64,
    /// RMS deviation of the delay profile from the target-slope line, ps.
    pub profile_rms_ps: f64,
    pub converged: bool,
    pub evals: usize,
}

impl TrainResult {
    pub fn require_converged(self) -> Result<Self, MeshError> {
        if self.converged {
            Ok(self)
        } else {
            Err(MeshError::NonConvergence {
                best: self.profile_rms_ps,
                evals: self.evals,
            })
        }
    }
}

/// Default ring geometry: channel on the 50 GHz ITU grid near 1550 nm,
/// silicon-like indices, and a loop length giving a free spectral range of
/// about 100 GHz.
pub fn default_array(n_rings: usize) -> RingArraySpec {
    let center_hz = 193.40e12;
    let index_n0 = 2.35;
    let index_ng = 4.2;
    let fsr_hz = 100.0e9;
    let z1 = 150e-6;
    let round_trip = C_LIGHT / (index_ng * fsr_hz);
    let z2 = round_trip - z1;
    let rings = (0..n_rings)
        .map(|_| RingSpec {
            theta: 2.0,
            phi: 0.0,
            errors: SplitterErrors::zero(),
            z1,
            z2,
            a: 1.0,
            bar_tbus: Vec::new(),
        })
        .collect();
    RingArraySpec {
        rings,
        index: IndexModel {
            n_eff: index_n0,
            n_group: index_ng,
            omega0: TAU * center_hz,
        },
        channel: Channel {
            center_hz,
            width_hz: 50.0e9,
        },
    }
}

/// Train {theta_i, phi_i} on the zero-error model so the group delay over
/// the channel follows a line of slope `target_gdd_ps_nm` (offset free),
/// using the simplex optimizer with random restarts.
///
/// A result whose achieved dispersion misses the target by more than
/// 2 ps/nm is flagged unconverged; the best-so-far spec is still returned.
pub fn train_ideal(
    target_gdd_ps_nm: f64,
    channel: Channel,
    n_rings: usize,
    budget: usize,
    seed: u64,
) -> Result<TrainResult, MeshError> {
    if budget < 1000 {
        return Err(MeshError::InvalidParameter(
            "training budget must be at least 1000 evaluations".into(),
        ));
    }
    if n_rings == 0 {
        return Err(MeshError::InvalidParameter("need at least one ring".into()));
    }
    let mut base = default_array(n_rings);
    base.channel = channel;

    let grid_points = 96;
    let grid = channel.omega_grid(grid_points);
    let lambdas = lambda_grid_nm(&grid);
    let mean_lambda = lambdas.iter().sum::<f64>() / lambdas.len() as f64;

    // Objective: RMS (ps) of the delay profile around the best line of the
    // target slope; a blown-up grid (unwrap failure) scores poorly.
    let objective = |params: &[f64], spec: &mut RingArraySpec| -> f64 {
        for (i, r) in spec.rings.iter_mut().enumerate() {
            r.theta = params[2 * i];
            r.phi = params[2 * i + 1];
        }
        let resp = array_response(spec, &grid);
        let tau = match group_delay(&resp, &grid) {
            Ok(t) => t,
            Err(_) => return 1e6,
        };
        let detrended: Vec<f64> = tau
            .iter()
            .zip(&lambdas)
            .map(|(t, l)| t * 1e12 - target_gdd_ps_nm * (l - mean_lambda))
            .collect();
        let mean = detrended.iter().sum::<f64>() / detrended.len() as f64;
        (detrended.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / detrended.len() as f64)
            .sqrt()
    };

    let restarts = 5;
    let per_restart = budget / restarts;
    let fsr_hz = C_LIGHT / (base.index.n_group * (base.rings[0].z1 + base.rings[0].z2));

    let mut best: Option<(f64, Vec<f64>, usize)> = None;
    let mut total_evals = 0;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    use rand::SeedableRng;

    for restart in 0..restarts {
        // Stagger ring resonances across the channel; alternate the ramp
        // direction between restarts and jitter the couplings.
        let mut x0 = Vec::with_capacity(2 * n_rings);
        let dir = if restart % 2 == 0 { 1.0 } else { -1.0 };
        for i in 0..n_rings {
            let frac = if n_rings > 1 {
                i as f64 / (n_rings - 1) as f64 - 0.5
            } else {
                0.0
            };
            let detune_hz = dir * frac * channel.width_hz * 1.2;
            let theta0 = 2.0 + rng.random_range(-0.4..0.4);
            let phi0 = -TAU * detune_hz / fsr_hz + rng.random_range(-0.3..0.3);
            x0.push(theta0);
            x0.push(phi0);
        }
        let mut work = base.clone();
        let mut f = |x: &[f64]| objective(x, &mut work);
        let opts = NelderMeadOptions {
            step: 0.25,
            ftol: 1e-10,
            xtol: 1e-8,
            max_evals: per_restart,
        };
        let res = nelder_mead(&mut f, &x0, &opts);
        total_evals += res.evals;
        if best.as_ref().map_or(true, |(b, _, _)| res.fx < *b) {
            best = Some((res.fx, res.x, res.evals));
        }
    }

    let (fx, x, _) = best.expect("at least one restart ran");
    for (i, r) in base.rings.iter_mut().enumerate() {
        r.theta = wrap_two_pi(x[2 * i]);
        r.phi = wrap_two_pi(x[2 * i + 1]);
    }
    let achieved = gdd_of(&base, grid_points)?;
    let converged = (achieved - target_gdd_ps_nm).abs() <= 2.0;
    Ok(TrainResult {
        spec: base,
        achieved_gdd_ps_nm: achieved,
        profile_rms_ps: fx,
        converged,
        evals: total_evals,
    })
}

/// Fabrication errors of one ring: its coupler MZI plus every bar-state
/// routing device in the loop.
#[derive(Clone, Debug)]
pub struct RingErrors {
    pub coupler: SplitterErrors,
    pub bar_tbus: Vec<SplitterErrors>,
}

impl RingErrors {
    /// Draw coupler and bar-TBU errors i.i.d. N(0, sigma^2).
    pub fn sample(sigma: f64, n_bar_tbus: usize, rng: &mut impl Rng) -> Self {
        let draw = |rng: &mut dyn rand::RngCore| {
            let lim = FRAC_PI_4 * 0.999;
            let a: f64 = rand_distr::Distribution::sample(&rand_distr::StandardNormal, rng);
            let b: f64 = rand_distr::Distribution::sample(&rand_distr::StandardNormal, rng);
            SplitterErrors::new((sigma * a).clamp(-lim, lim), (sigma * b).clamp(-lim, lim))
                .expect("clamped")
        };
        RingErrors {
            coupler: draw(rng),
            bar_tbus: (0..n_bar_tbus).map(|_| draw(rng)).collect(),
        }
    }
}

/// Substitute imperfect devices into a trained spec, optionally applying
/// the local corrections.
///
/// Uncorrected: the trained (theta, phi) are programmed blindly onto the
/// imperfect couplers, and the bar TBUs keep their cos(alpha - beta)
/// amplitude loss. Corrected: each coupler gets theta' from the realizable
/// range and the phase corrections folded into its loop phase
/// (phi' = phi + psi1 + dphi; psi2 leaves the bus as a constant global
/// phase, irrelevant to group delay); bar TBUs are re-pinned to the exact
/// bar state and only their loss remains, which is not correctable.
pub fn apply_errors_and_correct(
    spec: &RingArraySpec,
    errors: &[RingErrors],
    correct: bool,
) -> Result<RingArraySpec, MeshError> {
    if errors.len() != spec.rings.len() {
        return Err(MeshError::DimensionMismatch(format!(
            "{} error records for {} rings",
            errors.len(),
            spec.rings.len()
        )));
    }
    let mut out = spec.clone();
    for (ring, err) in out.rings.iter_mut().zip(errors) {
        ring.errors = err.coupler;
        ring.bar_tbus = err.bar_tbus.clone();
        if correct {
            let theta_target = ring.theta.min(PI);
            let (theta_prime, _clip) = correct_theta(theta_target, err.coupler)?;
            let pc = correct_phases(theta_target, theta_prime, err.coupler);
            ring.theta = theta_prime;
            ring.phi = wrap_two_pi(ring.phi + pc.psi1 + pc.phi_offset);
        }
    }
    Ok(out)
}

/// Monte-Carlo GDD distribution of a trained spec under random errors.
///
/// Returns (seed, corrected, gdd) tuples; deterministic in `master_seed`
/// and independent of thread count.
pub fn gdd_monte_carlo(
    spec: &RingArraySpec,
    sigma: f64,
    n_bar_tbus: usize,
    seeds: usize,
    master_seed: u64,
    points: usize,
) -> Result<Vec<(u64, bool, f64)>, MeshError> {
    let runs: Vec<(u64, bool, f64)> = (0..seeds)
        .into_par_iter()
        .map(|i| {
            use rand::SeedableRng;
            let seed = crate::stats::derive_seed(master_seed, &[31, i as u64]);
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let errs: Vec<RingErrors> = (0..spec.rings.len())
                .map(|_| RingErrors::sample(sigma, n_bar_tbus, &mut rng))
                .collect();
            let mut out = Vec::with_capacity(2);
            for corrected in [false, true] {
                let perturbed = apply_errors_and_correct(spec, &errs, corrected)?;
                out.push((i as u64, corrected, gdd_of(&perturbed, points)?));
            }
            Ok::<_, MeshError>(out)
        })
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .flatten()
        .collect();
    Ok(runs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn one_ring(theta: f64, phi: f64, a: f64) -> (RingSpec, IndexModel) {
        let arr = default_array(1);
        let mut r = arr.rings[0].clone();
        r.theta = theta;
        r.phi = phi;
        r.a = a;
        (r, arr.index)
    }

    #[test]
    fn lossless_ring_is_all_pass() {
        let (r, index) = one_ring(2.1, 0.7, 1.0);
        for i in 0..200 {
            let w = TAU * (193.4e12 + (i as f64 - 100.0) * 1e9);
            let t = ring_response(&r, &index, w);
            assert_abs_diff_eq!(t.norm(), 1.0, epsilon = 1e-11);
        }
    }

    #[test]
    fn lossy_ring_dips_at_resonance_and_stays_passive() {
        let (r, index) = one_ring(2.1, 0.7, 0.9);
        let mut min = f64::INFINITY;
        for i in 0..2000 {
            let w = TAU * (193.35e12 + i as f64 * 50e6);
            let t = ring_response(&r, &index, w).norm();
            assert!(t <= 1.0 + 1e-9);
            min = min.min(t);
        }
        assert!(min < 0.9, "no resonance dip found (min |T| = {min})");
    }

    #[test]
    fn bar_coupler_decouples_ring() {
        // theta = pi with ideal splitters: the ring is bypassed and the
        // response is the pure arm propagation phase.
        let (r, index) = one_ring(PI, 1.3, 1.0);
        for i in 0..50 {
            let w = TAU * (193.39e12 + i as f64 * 1e9);
            let t = ring_response(&r, &index, w);
            let expect = Complex64::from_polar(1.0, -index.k(w) * r.z1);
            assert!((t - expect).norm() < 1e-10);
        }
    }

    #[test]
    fn imperfect_lossless_ring_is_still_all_pass() {
        // A unitary coupler with splitter errors plus a lossless loop must
        // conserve power; this pins the loop amplitude appearing in the
        // numerator to the denominator's.
        let arr = default_array(1);
        let mut r = arr.rings[0].clone();
        r.theta = 1.9;
        r.phi = 0.4;
        r.errors = SplitterErrors::new(0.05, -0.08).unwrap();
        for i in 0..500 {
            let w = TAU * (193.35e12 + i as f64 * 200e6);
            assert_abs_diff_eq!(ring_response(&r, &arr.index, w).norm(), 1.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn array_response_reduces_to_single_ring() {
        let arr = default_array(1);
        let grid = arr.channel.omega_grid(16);
        let resp = array_response(&arr, &grid);
        for (w, got) in grid.iter().zip(&resp) {
            let single = ring_response(&arr.rings[0], &arr.index, *w);
            assert!((got - single).norm() < 1e-12);
        }
    }

    #[test]
    fn group_delay_of_pure_delay_line() {
        // Phases referenced to the band edge keep the synthesized args
        // well-conditioned; the constant offset does not affect the delay.
        let t0 = 37e-12;
        let w0 = TAU * 193.0e12;
        let grid: Vec<f64> = (0..100).map(|i| w0 + TAU * i as f64 * 1e9).collect();
        let resp: Vec<Complex64> = grid
            .iter()
            .map(|w| Complex64::from_polar(1.0, -(w - w0) * t0))
            .collect();
        let tau = group_delay(&resp, &grid).unwrap();
        for t in tau {
            assert!((t - t0).abs() / t0 < 1e-12);
        }
    }

    #[test]
    fn ring_delay_integrates_to_round_trip_phase() {
        // For a lossless all-pass ring the loop phase winds by 2 pi per
        // free spectral range; the MZI arm adds its linear background
        // t_arm * delta_omega on top.
        let (r, index) = one_ring(2.0, 0.0, 1.0);
        let fsr_hz = C_LIGHT / (index.n_group * (r.z1 + r.z2));
        let start = 193.37e12;
        let pts = 20_001;
        let grid: Vec<f64> = (0..pts)
            .map(|i| TAU * (start + fsr_hz * i as f64 / (pts - 1) as f64))
            .collect();
        let resp: Vec<Complex64> = grid.iter().map(|&w| ring_response(&r, &index, w)).collect();
        let tau = group_delay(&resp, &grid).unwrap();
        let mut integral = 0.0;
        for i in 0..pts - 1 {
            integral += 0.5 * (tau[i] + tau[i + 1]) * (grid[i + 1] - grid[i]);
        }
        let arm_budget = index.n_group * r.z1 / C_LIGHT * TAU * fsr_hz;
        assert_abs_diff_eq!(integral, TAU + arm_budget, epsilon = 0.02);
    }

    #[test]
    fn coarse_grid_is_rejected() {
        // Inter-sample phase steps near pi are flagged instead of being
        // unwrapped into a silently aliased delay.
        let grid: Vec<f64> = (0..8).map(|i| TAU * (193.0e12 + i as f64 * 1e9)).collect();
        let resp: Vec<Complex64> = (0..8)
            .map(|i| Complex64::from_polar(1.0, -0.95 * PI * i as f64))
            .collect();
        match group_delay(&resp, &grid) {
            Err(MeshError::GridTooCoarse { .. }) => {}
            other => panic!("expected GridTooCoarse, got {other:?}"),
        }
    }

    #[test]
    fn gdd_fit_exact_lines() {
        let lambdas: Vec<f64> = (0..50).map(|i| 1550.0 + i as f64 * 0.01).collect();
        let flat = vec![5e-12; 50];
        let (slope, _) = fit_gdd(&flat, &lambdas).unwrap();
        assert_abs_diff_eq!(slope, 0.0, epsilon = 1e-12);
        let line: Vec<f64> = lambdas.iter().map(|l| (-85.0 * (l - 1550.0)) * 1e-12).collect();
        let (slope, res) = fit_gdd(&line, &lambdas).unwrap();
        assert_abs_diff_eq!(slope, -85.0, epsilon = 1e-9);
        assert!(res < 1e-9);
    }

    #[test]
    fn zero_errors_leave_spec_unchanged() {
        let arr = default_array(3);
        let errs: Vec<RingErrors> = (0..3)
            .map(|_| RingErrors {
                coupler: SplitterErrors::zero(),
                bar_tbus: vec![SplitterErrors::zero(); 5],
            })
            .collect();
        let out = apply_errors_and_correct(&arr, &errs, true).unwrap();
        for (a, b) in out.rings.iter().zip(&arr.rings) {
            assert_abs_diff_eq!(a.theta, b.theta, epsilon = 1e-12);
            assert_abs_diff_eq!(a.phi, b.phi, epsilon = 1e-12);
            assert_abs_diff_eq!(a.effective_loop_amplitude(), b.a, epsilon = 1e-15);
        }
    }

    #[test]
    fn corrected_ring_matches_ideal_response_when_loss_free() {
        // With no bar-TBU loss the corrected imperfect ring reproduces the
        // ideal response up to a constant phase, hence the same delay.
        let arr = default_array(1);
        let mut ideal = arr.rings[0].clone();
        ideal.theta = 2.2;
        ideal.phi = 0.9;
        let errs = vec![RingErrors {
            coupler: SplitterErrors::new(0.03, -0.02).unwrap(),
            bar_tbus: Vec::new(),
        }];
        let spec = RingArraySpec {
            rings: vec![ideal.clone()],
            ..arr.clone()
        };
        let corrected = apply_errors_and_correct(&spec, &errs, true).unwrap();
        let grid = arr.channel.omega_grid(64);
        let ri = array_response(&spec, &grid);
        let rc = array_response(&corrected, &grid);
        let ratio0 = rc[0] / ri[0];
        for (a, b) in ri.iter().zip(&rc) {
            assert_abs_diff_eq!(b.norm(), 1.0, epsilon = 1e-9);
            let ratio = b / a;
            assert!((ratio - ratio0).norm() < 1e-9, "response differs beyond a constant phase");
        }
    }

    #[test]
    fn training_reaches_easy_flat_target() {
        let channel = default_array(1).channel;
        let res = train_ideal(0.0, channel, 2, 4000, 7).unwrap();
        assert!(res.converged, "achieved {}", res.achieved_gdd_ps_nm);
        assert!(res.achieved_gdd_ps_nm.abs() <= 2.0);
    }

    #[test]
    fn single_ring_cannot_hit_aggressive_target() {
        let channel = default_array(1).channel;
        let res = train_ideal(-300.0, channel, 1, 2000, 1).unwrap();
        assert!(!res.converged);
        assert!(res.require_converged().is_err());
    }
}
