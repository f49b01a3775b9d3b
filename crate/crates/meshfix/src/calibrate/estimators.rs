//! Per-device estimators of the calibration protocol.
//!
//! Each estimator drives one MZI's two shifters over voltage sweeps and
//! reads the device's two outputs through a [`DutIo`] view supplied by the
//! mesh driver (real detectors for output-adjacent devices, synthesized
//! virtual detectors elsewhere). Estimators only consume ratios, fringe
//! positions and arg differences, so unknown detector responsivities and
//! constant per-port phase offsets drop out wherever the protocol needs
//! them to.

use num_complex::Complex64;
use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI, TAU};

use crate::calibrate::chip::{sweep_voltage_limit, ShifterMap};
use crate::error::CalibrationError;

/// Driver-provided view of one device under test.
///
/// `out_fields` returns the fields at the device's two outputs; drivers
/// may deliver them with a constant unknown scale and per-port phase
/// offset (they must stay constant within one estimator call).
pub trait DutIo {
    fn set_theta_volts(&mut self, volts: f64);
    fn set_phi_volts(&mut self, volts: f64);
    fn out_fields(&mut self) -> Result<(Complex64, Complex64), CalibrationError>;

    fn out_intensities(&mut self) -> Result<(f64, f64), CalibrationError> {
        let (t, b) = self.out_fields()?;
        Ok((t.norm_sqr(), b.norm_sqr()))
    }
}

/// Which of the device's ports carries the strong probe beam.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProbeSide {
    Top,
    Bottom,
}

impl ProbeSide {
    fn pick(&self, pair: (f64, f64)) -> f64 {
        match self {
            ProbeSide::Top => pair.0,
            ProbeSide::Bottom => pair.1,
        }
    }
}

/// Golden-section refinement of an extremum of `f` on [a, b].
fn golden_refine(f: &mut dyn FnMut(f64) -> f64, mut a: f64, mut b: f64, maximize: bool) -> f64 {
    const INV_PHI: f64 = 0.618_033_988_749_894_8;
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    for _ in 0..90 {
        let take_left = if maximize { fc > fd } else { fc < fd };
        if take_left {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
        if (b - a).abs() < 1e-13 * (1.0 + b.abs()) {
            break;
        }
    }
    0.5 * (a + b)
}

/// Locate all interior extrema of a sampled scan, refined by golden
/// section, returning (position, value, is_max).
fn scan_extrema(
    f: &mut dyn FnMut(f64) -> f64,
    lo: f64,
    hi: f64,
    samples: usize,
) -> Vec<(f64, f64, bool)> {
    let xs: Vec<f64> = (0..samples)
        .map(|i| lo + (hi - lo) * i as f64 / (samples - 1) as f64)
        .collect();
    let ys: Vec<f64> = xs.iter().map(|&x| f(x)).collect();
    let mut out = Vec::new();
    for i in 1..samples - 1 {
        let is_max = ys[i] > ys[i - 1] && ys[i] >= ys[i + 1];
        let is_min = ys[i] < ys[i - 1] && ys[i] <= ys[i + 1];
        if is_max || is_min {
            let x = golden_refine(f, xs[i - 1], xs[i + 1], is_max);
            out.push((x, f(x), is_max));
        }
    }
    out
}

/// Fit of one square-law shifter plus the fringe amplitude seen while
/// fitting it.
#[derive(Clone, Copy, Debug)]
pub struct ShifterFit {
    pub map: ShifterMap,
    /// Scan value at the phase = 0 extremum.
    pub at_zero: f64,
    /// Scan value at the phase = pi extremum.
    pub at_pi: f64,
}

/// Separable harmonic least squares: fit `y = a0 + c cos(k u) + s sin(k u)`
/// to samples, refining k by Gauss-Newton from `kappa0`. Returns
/// (kappa, a0, c, s).
fn harmonic_refine(us: &[f64], ys: &[f64], kappa0: f64) -> Option<(f64, f64, f64, f64)> {
    let mut k = kappa0;
    let mut coeffs = (0.0, 0.0, 0.0);
    for _ in 0..60 {
        // Linear solve for (a0, c, s) at the current k via normal equations.
        let mut m = [[0.0f64; 3]; 3];
        let mut rhs = [0.0f64; 3];
        for (&u, &y) in us.iter().zip(ys) {
            let (sin, cos) = (k * u).sin_cos();
            let row = [1.0, cos, sin];
            for i in 0..3 {
                for j in 0..3 {
                    m[i][j] += row[i] * row[j];
                }
                rhs[i] += row[i] * y;
            }
        }
        let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
        if det.abs() < 1e-12 {
            return None;
        }
        let inv = |r: usize, c: usize| -> f64 {
            let sub = |i: usize, j: usize| m[(c + i + 1) % 3][(r + j + 1) % 3];
            (sub(0, 0) * sub(1, 1) - sub(0, 1) * sub(1, 0)) / det
        };
        let a0 = inv(0, 0) * rhs[0] + inv(0, 1) * rhs[1] + inv(0, 2) * rhs[2];
        let c = inv(1, 0) * rhs[0] + inv(1, 1) * rhs[1] + inv(1, 2) * rhs[2];
        let s = inv(2, 0) * rhs[0] + inv(2, 1) * rhs[1] + inv(2, 2) * rhs[2];
        coeffs = (a0, c, s);
        // Gauss-Newton step on k.
        let mut jr = 0.0;
        let mut jj = 0.0;
        for (&u, &y) in us.iter().zip(ys) {
            let (sin, cos) = (k * u).sin_cos();
            let r = y - (a0 + c * cos + s * sin);
            let jac = (c * sin - s * cos) * u;
            jr += r * jac;
            jj += jac * jac;
        }
        if jj < 1e-300 {
            break;
        }
        // Clamp the step inside the local basin (adjacent aliases sit
        // about pi/u_span apart).
        let u_span = us.last().copied().unwrap_or(1.0).max(1e-12);
        let dk = (-jr / jj).clamp(-0.5 * PI / u_span, 0.5 * PI / u_span);
        k += dk;
        if dk.abs() < 1e-15 * k.abs() {
            break;
        }
    }
    let (a0, c, s) = coeffs;
    Some((k, a0, c, s))
}

/// Residual RMS of the harmonic model on the samples.
fn harmonic_residual(us: &[f64], ys: &[f64], fit: (f64, f64, f64, f64)) -> f64 {
    let (k, a0, c, s) = fit;
    let n = us.len() as f64;
    (us.iter()
        .zip(ys)
        .map(|(&u, &y)| {
            let (sin, cos) = (k * u).sin_cos();
            let r = y - (a0 + c * cos + s * sin);
            r * r
        })
        .sum::<f64>()
        / n)
        .sqrt()
}

/// Recover (kappa, delta) of a shifter from a scan `g(u)` known to follow
/// `A + B cos(kappa u + delta)` in u = V^2, where the physical phase zero
/// sits at a scan minimum if `zero_at_min`, else at a maximum.
pub fn fit_square_law(
    g: &mut dyn FnMut(f64) -> f64,
    zero_at_min: bool,
) -> Result<ShifterFit, CalibrationError> {
    let u_max = sweep_voltage_limit().powi(2);
    let samples = 96;
    let us: Vec<f64> = (0..samples)
        .map(|i| u_max * i as f64 / (samples - 1) as f64)
        .collect();
    let ys: Vec<f64> = us.iter().map(|&u| g(u)).collect();

    // Period seed from zero crossings of the centered scan.
    let mean = ys.iter().sum::<f64>() / ys.len() as f64;
    let spread = ys.iter().fold(0.0f64, |m, &y| m.max((y - mean).abs()));
    if spread < 1e-300 {
        return Err(CalibrationError::DegenerateVisibility(0.0));
    }
    let mut crossings = Vec::new();
    for i in 1..samples {
        let (a, b) = (ys[i - 1] - mean, ys[i] - mean);
        if (a <= 0.0) != (b <= 0.0) {
            crossings.push(us[i - 1] + (us[i] - us[i - 1]) * a.abs() / (a.abs() + b.abs()));
        }
    }
    if crossings.len() < 2 {
        return Err(CalibrationError::DegenerateVisibility(spread));
    }
    let mut spacings: Vec<f64> = crossings.windows(2).map(|w| w[1] - w[0]).collect();
    spacings.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let kappa0 = PI / spacings[spacings.len() / 2];

    // Try a few seeds around the crossing estimate and keep the basin
    // with the smallest residual.
    let mut best: Option<((f64, f64, f64, f64), f64)> = None;
    for scale in [1.0, 0.92, 1.08, 0.85, 1.15] {
        if let Some(fit) = harmonic_refine(&us, &ys, kappa0 * scale) {
            let r = harmonic_residual(&us, &ys, fit);
            if best.as_ref().map_or(true, |(_, br)| r < *br) {
                best = Some((fit, r));
            }
        }
    }
    let ((kappa, a0, c, s), _) =
        best.ok_or(CalibrationError::DegenerateVisibility(spread))?;
    let amp = c.hypot(s);
    if amp < 1e-300 {
        return Err(CalibrationError::DegenerateVisibility(amp));
    }
    // y = a0 + amp cos(kappa u + d_fit); the shifter phase is kappa u +
    // delta with the phase-zero extremum as dictated by the caller.
    let d_fit = f64::atan2(-s, c);
    let delta = if zero_at_min {
        (d_fit - PI).rem_euclid(TAU)
    } else {
        d_fit.rem_euclid(TAU)
    };
    let (at_zero, at_pi) = if zero_at_min {
        (a0 - amp, a0 + amp)
    } else {
        (a0 + amp, a0 - amp)
    };
    Ok(ShifterFit {
        map: ShifterMap { kappa, delta },
        at_zero,
        at_pi,
    })
}

/// Result of the internal-shifter calibration.
#[derive(Clone, Copy, Debug)]
pub struct ThetaCalibration {
    pub theta_map: ShifterMap,
    /// External-shifter square-law coefficient, fitted from the phi fringe
    /// observed during the sweep (delta_phi stays unresolved here).
    pub phi_kappa: Option<f64>,
    /// Same-side output power at theta = 0 and theta = pi.
    pub power_floor: f64,
    pub power_ceiling: f64,
}

/// Calibrate the internal phase shifter of the device under test.
///
/// Sweeps the theta voltage and reads the probe-side output power,
/// averaged over a full period of the external phase when spurious light
/// makes the raw scan phi-dependent. The average follows
/// `C1 + C2 cos(theta)` and is minimized at theta = 0, so locating its
/// extrema pins the square-law map.
pub fn calibrate_theta_map(
    io: &mut dyn DutIo,
    side: ProbeSide,
    average_phi: bool,
) -> Result<ThetaCalibration, CalibrationError> {
    io.set_phi_volts(0.0);
    io.set_theta_volts(0.0);

    // Probe the phi fringe at a handful of theta settings to recover the
    // external shifter's period; skip averaging if no fringe shows.
    let mut phi_kappa = None;
    if average_phi {
        let u_max = sweep_voltage_limit().powi(2);
        'outer: for frac in [0.13, 0.29, 0.41] {
            io.set_theta_volts((frac * u_max).sqrt());
            let mut fringe = |u: f64| -> f64 {
                io.set_phi_volts(u.sqrt());
                side.pick(io.out_intensities().expect("intensity read"))
            };
            let ext = scan_extrema(&mut fringe, 0.0, u_max, 96);
            let (mut hi, mut lo) = (f64::MIN, f64::MAX);
            for e in &ext {
                hi = hi.max(e.1);
                lo = lo.min(e.1);
            }
            if ext.len() >= 2 && hi - lo > 1e-9 * hi.max(1e-300) {
                let mut spac = Vec::new();
                for w in ext.windows(2) {
                    if w[0].2 != w[1].2 {
                        spac.push(w[1].0 - w[0].0);
                    }
                }
                if !spac.is_empty() {
                    let span: f64 = spac.iter().sum();
                    phi_kappa = Some(PI * spac.len() as f64 / span);
                    break 'outer;
                }
            }
        }
        io.set_phi_volts(0.0);
    }

    // Phi grid uniform over one full external-phase period (exact
    // cancellation of the spurious-light cross terms), or a single point
    // when no fringe was detected.
    let phi_volts: Vec<f64> = match phi_kappa {
        Some(kappa) => {
            let m = 16;
            (0..m).map(|j| (TAU * j as f64 / m as f64 / kappa).sqrt()).collect()
        }
        None => vec![0.0],
    };

    let mut averaged = |u: f64| -> f64 {
        io.set_theta_volts(u.sqrt());
        let mut acc = 0.0;
        for &v in &phi_volts {
            io.set_phi_volts(v);
            acc += side.pick(io.out_intensities().expect("intensity read"));
        }
        acc / phi_volts.len() as f64
    };

    let fit = fit_square_law(&mut averaged, true)?;
    io.set_phi_volts(0.0);
    Ok(ThetaCalibration {
        theta_map: fit.map,
        phi_kappa,
        power_floor: fit.at_zero,
        power_ceiling: fit.at_pi,
    })
}

/// Naive internal-shifter calibration that minimizes the raw (single-phi)
/// transmission. Biased by spurious input light; provided to quantify the
/// bias the phi-averaged estimator removes.
pub fn calibrate_theta_map_naive(
    io: &mut dyn DutIo,
    side: ProbeSide,
) -> Result<ThetaCalibration, CalibrationError> {
    io.set_phi_volts(0.0);
    let mut raw = |u: f64| -> f64 {
        io.set_theta_volts(u.sqrt());
        side.pick(io.out_intensities().expect("intensity read"))
    };
    let fit = fit_square_law(&mut raw, true)?;
    Ok(ThetaCalibration {
        theta_map: fit.map,
        phi_kappa: None,
        power_floor: fit.at_zero,
        power_ceiling: fit.at_pi,
    })
}

/// Interference fringe summary at one theta setting.
#[derive(Clone, Copy, Debug)]
pub struct Fringe {
    pub i_max: f64,
    pub i_min: f64,
    /// Voltage-squared at the fringe maximum.
    pub u_max_at: f64,
}

impl Fringe {
    pub fn visibility(&self) -> f64 {
        (self.i_max - self.i_min) / (self.i_max + self.i_min)
    }
}

/// Sweep the external phase over at least one period and summarize the
/// fringe on the requested output.
pub fn phi_fringe(io: &mut dyn DutIo, side: ProbeSide) -> Result<Fringe, CalibrationError> {
    // The rig's full sweep range holds at least two periods for any
    // in-spec shifter, so extrema are always present.
    let span = sweep_voltage_limit().powi(2);
    let mut f = |u: f64| -> f64 {
        io.set_phi_volts(u.sqrt());
        side.pick(io.out_intensities().expect("intensity read"))
    };
    let ext = scan_extrema(&mut f, 0.0, span, 160);
    let mut best_max: Option<(f64, f64)> = None;
    let mut best_min: Option<(f64, f64)> = None;
    for (u, v, is_max) in ext {
        if is_max && best_max.map_or(true, |(_, bv)| v > bv) {
            best_max = Some((u, v));
        }
        if !is_max && best_min.map_or(true, |(_, bv)| v < bv) {
            best_min = Some((u, v));
        }
    }
    if let (Some((umax, imax)), Some((_, imin))) = (best_max, best_min) {
        return Ok(Fringe {
            i_max: imax,
            i_min: imin,
            u_max_at: umax,
        });
    }
    // No interference structure: a physically flat fringe (degenerate
    // |a +- b|). Summarize the raw scan so callers see zero visibility.
    let samples = 32;
    let mut i_max = f64::MIN;
    let mut i_min = f64::MAX;
    let mut u_at = 0.0;
    for i in 0..samples {
        let u = span * i as f64 / (samples - 1) as f64;
        let v = f(u);
        if v > i_max {
            i_max = v;
            u_at = u;
        }
        i_min = i_min.min(v);
    }
    Ok(Fringe {
        i_max,
        i_min,
        u_max_at: u_at,
    })
}

/// Signed splitter errors recovered from visibilities plus slope tests.
#[derive(Clone, Copy, Debug)]
pub struct SplitterEstimate {
    pub alpha: f64,
    pub beta: f64,
    /// Relative amplitude of the auxiliary input beam during the
    /// measurement.
    pub zeta: f64,
    /// True when the interference was too weak to determine a sign,
    /// leaving the corresponding magnitude pinned at zero.
    pub sum_sign_undetermined: bool,
    pub diff_sign_undetermined: bool,
}

/// Visibility floor below which |alpha +- beta| is reported as zero with
/// its sign undetermined.
const VISIBILITY_FLOOR: f64 = 1e-9;

/// Solve the two-output visibility system at one theta extreme for
/// (zeta, |a|), where the fringe contrast obeys
/// `D_side = zeta sin(2a) / (1 + (zeta^2 - 1) w_side)` with weights
/// w in {cos^2 a, sin^2 a} for the two outputs.
///
/// The system is exactly invariant under (zeta, a) -> (1/zeta, pi/2 - a),
/// so the small-angle branch solution is returned; callers disambiguate
/// against an independent extinction-ratio measurement.
fn solve_visibility_pair(d_top: f64, d_bot: f64, w_top_cos: bool) -> Option<(f64, f64)> {
    if d_top < VISIBILITY_FLOOR || d_bot < VISIBILITY_FLOOR {
        return None;
    }
    let model = |zeta: f64, a: f64| -> (f64, f64) {
        let s = (2.0 * a).sin().abs();
        let (c2, s2) = ((a).cos().powi(2), (a).sin().powi(2));
        let (wt, wb) = if w_top_cos { (c2, s2) } else { (s2, c2) };
        (
            zeta * s / (1.0 + (zeta * zeta - 1.0) * wt),
            zeta * s / (1.0 + (zeta * zeta - 1.0) * wb),
        )
    };
    // Grid seed restricted to the small-angle branch, then Newton polish.
    let mut best = (1.0, 0.02, f64::INFINITY);
    for zi in 1..=80 {
        let zeta = 0.05 + 2.5 * zi as f64 / 80.0;
        for ai in 1..=60 {
            let a = FRAC_PI_4 * ai as f64 / 60.0;
            let (mt, mb) = model(zeta, a);
            let r = (mt - d_top).powi(2) + (mb - d_bot).powi(2);
            if r < best.2 {
                best = (zeta, a, r);
            }
        }
    }
    let (mut zeta, mut a, _) = best;
    for _ in 0..80 {
        let (mt, mb) = model(zeta, a);
        let (rt, rb) = (mt - d_top, mb - d_bot);
        let h = 1e-8;
        let (mtz, mbz) = model(zeta + h, a);
        let (mta, mba) = model(zeta, a + h);
        let j = [
            (mtz - mt) / h,
            (mta - mt) / h,
            (mbz - mb) / h,
            (mba - mb) / h,
        ];
        let det = j[0] * j[3] - j[1] * j[2];
        if det.abs() < 1e-18 {
            break;
        }
        let dz = (rt * j[3] - rb * j[1]) / det;
        let da = (rb * j[0] - rt * j[2]) / det;
        zeta -= dz;
        a -= da;
        zeta = zeta.clamp(1e-6, 50.0);
        a = a.clamp(0.0, 0.785);
        if dz.abs() < 1e-14 && da.abs() < 1e-14 {
            break;
        }
    }
    // Snap to the canonical small-angle branch.
    if a > FRAC_PI_4 {
        a = FRAC_PI_2 - a;
        zeta = 1.0 / zeta;
    }
    Some((zeta, a))
}

/// Phi-averaged cross/bar power ratios of the two output ports, measured
/// at an imbalanced injection. The visibility system's exact
/// (zeta, a) -> (1/zeta, pi/2 - a) degeneracy swaps this pair, so it
/// selects the physical branch whenever the injection is not balanced.
#[derive(Clone, Copy, Debug)]
pub struct BranchDiscriminator {
    pub rho_top: f64,
    pub rho_bottom: f64,
}

/// Measure the branch discriminator: per-port mean power in the cross
/// state over the bar state, each averaged over one external-phase
/// period. Run this with the routed (single-sided) probe.
pub fn measure_branch_discriminator(
    io: &mut dyn DutIo,
    theta_map: &ShifterMap,
    phi_kappa: f64,
) -> Result<BranchDiscriminator, CalibrationError> {
    let grid = 16;
    let mut mean_at = |theta: f64| -> Result<(f64, f64), CalibrationError> {
        io.set_theta_volts(theta_map.voltage_for(theta));
        let mut acc = (0.0, 0.0);
        for j in 0..grid {
            io.set_phi_volts((TAU * j as f64 / grid as f64 / phi_kappa).sqrt());
            let (t, b) = io.out_intensities()?;
            acc.0 += t;
            acc.1 += b;
        }
        Ok((acc.0 / grid as f64, acc.1 / grid as f64))
    };
    let cross = mean_at(0.0)?;
    let bar = mean_at(PI)?;
    io.set_phi_volts(0.0);
    Ok(BranchDiscriminator {
        rho_top: cross.0 / bar.0.max(1e-300),
        rho_bottom: cross.1 / bar.1.max(1e-300),
    })
}

/// Consistency score of one (x, y) = (|a+b|, |a-b|) branch against the
/// discriminator: the top-port ratio fixes the injection imbalance, the
/// bottom-port ratio must then agree.
fn branch_score(x: f64, y: f64, side: ProbeSide, d: &BranchDiscriminator) -> f64 {
    let (s2x, c2x) = (x.sin().powi(2), x.cos().powi(2));
    let (s2y, c2y) = (y.sin().powi(2), y.cos().powi(2));
    // With the strong beam in the top input and q = |x_b/x_t|^2:
    //   rho_top = (s2x + c2x q)/(c2y + s2y q)
    //   rho_bot = (c2x + s2x q)/(s2y + c2y q)
    // A bottom-side probe swaps the roles of the two ports.
    let (r1, r2) = match side {
        ProbeSide::Top => (d.rho_top, d.rho_bottom),
        ProbeSide::Bottom => (d.rho_bottom, d.rho_top),
    };
    let q = (r1 * c2y - s2x) / (c2x - r1 * s2y);
    if !(q.is_finite() && q >= 0.0) {
        return f64::INFINITY;
    }
    let model_r2 = (c2x + s2x * q) / (s2y + c2y * q).max(1e-300);
    (model_r2.ln() - r2.max(1e-300).ln()).powi(2)
}

/// Calibrate the splitter errors of the device under test.
///
/// Requires the internal-shifter calibration (cross/bar programmable),
/// the branch discriminator measured with the single-sided probe, and
/// roughly equal light in both inputs. Interference visibilities at
/// theta = 0 give (zeta, |a+b|); at theta = pi they give |a-b|; the signs
/// follow from intensity slopes against the phi voltage at a fringe
/// reference located with theta = pi/2.
pub fn calibrate_splitter_errors(
    io: &mut dyn DutIo,
    side: ProbeSide,
    theta: &ThetaCalibration,
    phi_kappa: f64,
    discriminator: &BranchDiscriminator,
) -> Result<SplitterEstimate, CalibrationError> {
    let theta_map = &theta.theta_map;
    // Cross state: visibilities constrain (zeta, |a+b|).
    io.set_theta_volts(theta_map.voltage_for(0.0));
    let cross_top = phi_fringe(io, ProbeSide::Top)?;
    let cross_bot = phi_fringe(io, ProbeSide::Bottom)?;
    // At theta = 0 the strong-beam-side output keeps weight cos^2(a+b).
    let w_top_cos = side == ProbeSide::Top;
    let sum_solution = solve_visibility_pair(
        cross_top.visibility(),
        cross_bot.visibility(),
        w_top_cos,
    );

    // Bar state: |a-b| (the output weights swap sides).
    io.set_theta_volts(theta_map.voltage_for(PI));
    let bar_top = phi_fringe(io, ProbeSide::Top)?;
    let bar_bot = phi_fringe(io, ProbeSide::Bottom)?;
    let diff_solution = solve_visibility_pair(
        bar_top.visibility(),
        bar_bot.visibility(),
        !w_top_cos,
    );

    let (zeta_sum, sum_small) = sum_solution.unwrap_or((1.0, 0.0));
    let (_zeta_diff, diff_small) = diff_solution.unwrap_or((1.0, 0.0));

    // Select among the four alias combinations with the discriminator.
    let mut best = (sum_small, diff_small, zeta_sum, f64::INFINITY);
    for (x, zx) in [(sum_small, zeta_sum), (FRAC_PI_2 - sum_small, 1.0 / zeta_sum)] {
        for y in [diff_small, FRAC_PI_2 - diff_small] {
            let score = branch_score(x, y, side, discriminator);
            if score < best.3 {
                best = (x, y, zx, score);
            }
        }
    }
    let (sum_mag, diff_mag, zeta, _) = best;

    // Fringe reference: theta = pi/2, maximize the probe-side output.
    io.set_theta_volts(theta_map.voltage_for(FRAC_PI_2));
    let reference = phi_fringe(io, side)?;
    let u_ref = reference.u_max_at;

    // Slope test: small voltage increase from the reference.
    let mut slope_at = |theta: f64| -> f64 {
        io.set_theta_volts(theta_map.voltage_for(theta));
        let du = 0.02 * (PI / phi_kappa); // ~1 % of the pi voltage, squared scale
        io.set_phi_volts((u_ref).max(0.0).sqrt());
        let i0 = side.pick(io.out_intensities().expect("intensity read"));
        io.set_phi_volts((u_ref + du).sqrt());
        let i1 = side.pick(io.out_intensities().expect("intensity read"));
        i1 - i0
    };

    // Increasing probe-side power at the cross state means a+b < 0; at the
    // bar state it means a-b > 0 (slope rules derived from the cross/bar
    // photocurrent formulas, identical for either probe side).
    let sum_sign_undetermined = sum_solution.is_none() || sum_mag < 1e-12;
    let diff_sign_undetermined = diff_solution.is_none() || diff_mag < 1e-12;
    let sum = if sum_sign_undetermined {
        0.0
    } else if slope_at(0.0) > 0.0 {
        -sum_mag
    } else {
        sum_mag
    };
    let diff = if diff_sign_undetermined {
        0.0
    } else if slope_at(PI) > 0.0 {
        diff_mag
    } else {
        -diff_mag
    };

    io.set_phi_volts(0.0);
    Ok(SplitterEstimate {
        alpha: 0.5 * (sum + diff),
        beta: 0.5 * (sum - diff),
        zeta,
        sum_sign_undetermined,
        diff_sign_undetermined,
    })
}

/// Result of the external-shifter calibration.
#[derive(Clone, Copy, Debug)]
pub struct PhiCalibration {
    pub phi_map: ShifterMap,
    /// Input relative phase (bottom minus top) during the measurement.
    pub psi: f64,
}

/// Calibrate the external phase shifter, given the device's splitter
/// errors, theta map and the absolute phases of its two input beams.
///
/// Locates the cross-state fringe, measures the output-field argument in
/// the cross and bar states at that reference voltage, and solves the two
/// arg equations for the input relative phase psi; the shifter offset
/// follows from the fringe model at the reference voltage. Only the arg
/// difference between the two states enters, so constant readout phase
/// offsets cancel.
pub fn calibrate_phi_map(
    io: &mut dyn DutIo,
    side: ProbeSide,
    theta_map: &ShifterMap,
    phi_kappa: f64,
    alpha: f64,
    beta: f64,
    zeta: f64,
    input_phase_top: f64,
    input_phase_bottom: f64,
) -> Result<PhiCalibration, CalibrationError> {
    let (sp, cp) = (alpha + beta).sin_cos();
    let (sm, cm) = (alpha - beta).sin_cos();

    // Reference voltage: cross-state fringe maximum on the probe side.
    io.set_theta_volts(theta_map.voltage_for(0.0));
    let fringe = phi_fringe(io, side)?;
    let u_ref = fringe.u_max_at;
    io.set_phi_volts(u_ref.sqrt());

    // Arg of the top output in the cross and bar states at the same
    // external-shifter voltage.
    let m_cross = io.out_fields()?.0.arg();
    io.set_theta_volts(theta_map.voltage_for(PI));
    let m_bar = io.out_fields()?.0.arg();
    io.set_phi_volts(0.0);

    // Model of the measured arg difference as a function of
    // chi = phi(u_ref) - psi. With inputs (x_t, x_b) = (1, zeta e^{i psi})
    // up to a common factor:
    //   cross: E_top = -s+ e^{i chi} + i c+ zeta
    //   bar:   E_top = -c- e^{i chi} - i s- zeta
    // (probe side only flips which input carries zeta; the difference
    // model below covers both through the zeta weighting.)
    let model = |chi: f64| -> f64 {
        let e = Complex64::from_polar(1.0, chi);
        let (top_cross, top_bar) = match side {
            ProbeSide::Top => (
                -sp * e + Complex64::i() * cp * zeta,
                -cm * e - Complex64::i() * sm * zeta,
            ),
            ProbeSide::Bottom => (
                -sp * e * zeta + Complex64::i() * cp,
                -cm * e * zeta - Complex64::i() * sm,
            ),
        };
        (top_cross / top_bar).arg()
    };
    let target = crate::mesh::wrap_pi(m_cross - m_bar);

    // Solve model(chi) = target by dense scan plus bisection refinement.
    let mut best = (0.0, f64::INFINITY);
    let steps = 4096;
    for i in 0..steps {
        let chi = -PI + TAU * i as f64 / steps as f64;
        let r = crate::mesh::wrap_pi(model(chi) - target).abs();
        if r < best.1 {
            best = (chi, r);
        }
    }
    let mut lo = best.0 - TAU / steps as f64;
    let mut hi = best.0 + TAU / steps as f64;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let at_lo = crate::mesh::wrap_pi(model(lo) - target);
        let at_mid = crate::mesh::wrap_pi(model(mid) - target);
        if (at_lo <= 0.0) == (at_mid <= 0.0) {
            lo = mid;
        } else {
            hi = mid;
        }
        if (hi - lo).abs() < 1e-13 {
            break;
        }
    }
    let chi = 0.5 * (lo + hi);

    // phi(u_ref) = chi + psi, with psi the input relative phase.
    let psi = crate::mesh::wrap_pi(input_phase_bottom - input_phase_top);
    let delta = (chi + psi - phi_kappa * u_ref).rem_euclid(TAU);
    Ok(PhiCalibration {
        phi_map: ShifterMap {
            kappa: phi_kappa,
            delta,
        },
        psi,
    })
}

/// Extinction-ratio based splitter magnitudes for devices probed with a
/// clean single input (zeta = 0), as the triangular geometry guarantees.
///
/// With the probe in the bottom port, the top output sweeps between
/// cos^2(a+b) and sin^2(a-b) while the bottom output sweeps between
/// cos^2(a-b) and sin^2(a+b); solving the coupled extinction ratios gives
/// both magnitudes.
pub fn splitter_magnitudes_from_extinction(
    er_top: f64,
    er_bottom: f64,
) -> (f64, f64) {
    // er_top = cos^2(a-b)/sin^2(a+b) evaluated on the port opposite the
    // probe; er_bottom = cos^2(a+b)/sin^2(a-b). Infinite ratios pin the
    // corresponding magnitude to zero.
    let mut sum = if er_top.is_finite() && er_top > 0.0 {
        (1.0 / er_top).sqrt().asin()
    } else {
        0.0
    };
    let mut diff = if er_bottom.is_finite() && er_bottom > 0.0 {
        (1.0 / er_bottom).sqrt().asin()
    } else {
        0.0
    };
    for _ in 0..50 {
        let new_sum = if er_top.is_finite() {
            (diff.cos() / er_top.sqrt()).min(1.0).asin()
        } else {
            0.0
        };
        let new_diff = if er_bottom.is_finite() {
            (sum.cos() / er_bottom.sqrt()).min(1.0).asin()
        } else {
            0.0
        };
        if (new_sum - sum).abs() < 1e-15 && (new_diff - diff).abs() < 1e-15 {
            sum = new_sum;
            diff = new_diff;
            break;
        }
        sum = new_sum;
        diff = new_diff;
    }
    (sum, diff)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn square_law_fit_recovers_map() {
        let kappa = 0.059;
        let delta = 2.7;
        // 3 - 1.3 cos(phase): minimized at phase = 0.
        let mut g = |u: f64| 3.0 - 1.3 * (kappa * u + delta).cos();
        let fit = fit_square_law(&mut g, true).unwrap();
        assert_abs_diff_eq!(fit.map.kappa, kappa, epsilon = 1e-9);
        assert_abs_diff_eq!(fit.map.delta, delta, epsilon = 1e-7);

        // 3 + 1.3 cos(phase): maximized at phase = 0.
        let mut g2 = |u: f64| 3.0 + 1.3 * (kappa * u + delta).cos();
        let fit2 = fit_square_law(&mut g2, false).unwrap();
        assert_abs_diff_eq!(fit2.map.kappa, kappa, epsilon = 1e-9);
        assert_abs_diff_eq!(fit2.map.delta, delta, epsilon = 1e-7);
    }

    #[test]
    fn extinction_ratio_inversion() {
        let (a, b) = (0.02, 0.01);
        let er_top = (a - b as f64).cos().powi(2) / (a + b as f64).sin().powi(2);
        let er_bottom = (a + b as f64).cos().powi(2) / (a - b as f64).sin().powi(2);
        assert_abs_diff_eq!(er_top, 1111.3, epsilon = 0.5);
        let (sum, diff) = splitter_magnitudes_from_extinction(er_top, er_bottom);
        assert_abs_diff_eq!(sum, 0.03, epsilon = 1e-12);
        assert_abs_diff_eq!(diff, 0.01, epsilon = 1e-12);
        // alpha = beta: infinite bottom ER pins |a-b| to zero; the top
        // ratio becomes cos^2(0)/sin^2(2 alpha).
        let (sum, diff) =
            splitter_magnitudes_from_extinction(1.0 / (0.04_f64).sin().powi(2), f64::INFINITY);
        assert_abs_diff_eq!(diff, 0.0, epsilon = 0.0);
        assert_abs_diff_eq!(sum, 0.04, epsilon = 1e-12);
    }

    #[test]
    fn visibility_solver_round_trips() {
        for (zeta, a) in [(1.0, 0.02), (0.7, 0.05), (1.3, 0.008), (1.0, 0.3)] {
            let s = (2.0 * a as f64).sin();
            let dt = zeta * s / (1.0 + (zeta * zeta - 1.0) * (a as f64).cos().powi(2));
            let db = zeta * s / (1.0 + (zeta * zeta - 1.0) * (a as f64).sin().powi(2));
            let (ze, ae) = solve_visibility_pair(dt, db, true).unwrap();
            assert_abs_diff_eq!(ze, zeta, epsilon = 1e-6);
            assert_abs_diff_eq!(ae, a, epsilon = 1e-8);
        }
    }

    #[test]
    fn zeta_one_limit_visibility() {
        // In the balanced limit the cross-state visibility reduces to
        // sin(2(a+b)).
        let a = 0.04;
        let s = (2.0 * a as f64).sin();
        assert_abs_diff_eq!(s, 0.0799, epsilon = 5e-5);
        let (ze, ae) = solve_visibility_pair(s, s, true).unwrap();
        assert_abs_diff_eq!(ze, 1.0, epsilon = 1e-6);
        assert_abs_diff_eq!(ae, a, epsilon = 1e-8);
    }
}
