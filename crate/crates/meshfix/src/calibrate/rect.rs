//! Rectangular-mesh calibration driver.
//!
//! Works column by column from the output side. Devices are probed
//! through empirically routed wire paths; their outputs are read through
//! virtual detectors obtained by back-propagating the measured output
//! fields through the already-calibrated later columns. The static
//! offsets of the external shifters couple front-to-back (each device's
//! offset is only observable once the phase of the light reaching it is
//! known), so the driver alternates a backward amplitude pass with a
//! forward offset-anchoring pass until the recovered model stops moving;
//! the readout corruption from not-yet-anchored offsets shrinks with each
//! round.

use num_complex::Complex64;
use std::f64::consts::PI;

use super::chip::{
    sweep_voltage_limit, DetectorKind, MeasurableChip, ShifterId, ShifterKind, ShifterMap,
    NOMINAL_KAPPA,
};
use super::estimators::{
    calibrate_splitter_errors, calibrate_theta_map, fit_square_law, measure_branch_discriminator,
    DutIo, ProbeSide,
};
use super::{apply_inverse, modeled_elements, CalibrationRecord, DeviceCalibration};
use crate::error::CalibrationError;
use crate::mesh::MeshLayout;

const POWER_FLOOR: f64 = 1e-6;
const MAX_ROUNDS: usize = 8;

#[derive(Clone, Copy, Debug)]
struct DeviceState {
    alpha: f64,
    beta: f64,
    zeta: f64,
    theta_map: ShifterMap,
    phi_map: ShifterMap,
    sign_note: Option<&'static str>,
}

impl Default for DeviceState {
    fn default() -> Self {
        Self {
            alpha: 0.0,
            beta: 0.0,
            zeta: 0.0,
            theta_map: ShifterMap {
                kappa: NOMINAL_KAPPA,
                delta: 0.0,
            },
            phi_map: ShifterMap {
                kappa: NOMINAL_KAPPA,
                delta: 0.0,
            },
            sign_note: None,
        }
    }
}

struct Driver<'c> {
    chip: &'c mut dyn MeasurableChip,
    n: usize,
    columns: Vec<Vec<usize>>,
    top_mode: Vec<usize>,
    column_of: Vec<usize>,
    state: Vec<DeviceState>,
}

/// Virtual-detector view of one device: measures all output fields and
/// undoes the later columns with the driver's current model.
struct RectDut<'a> {
    chip: &'a mut dyn MeasurableChip,
    device: usize,
    top_mode: usize,
    input: Vec<Complex64>,
    /// (top_mode, gate elements) of every later-column device at its
    /// parked voltages, in propagation order.
    suffix: Vec<(usize, [Complex64; 4])>,
}

impl RectDut<'_> {
    fn virtual_fields(&mut self) -> Result<Vec<Complex64>, CalibrationError> {
        let input = self.input.clone();
        let mut fields = self.chip.measure_all_fields(&input)?;
        for (m, t) in self.suffix.iter().rev() {
            apply_inverse(&mut fields, *m, t);
        }
        Ok(fields)
    }
}

impl DutIo for RectDut<'_> {
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
        let f = self.virtual_fields()?;
        Ok((f[self.top_mode], f[self.top_mode + 1]))
    }
}

impl<'c> Driver<'c> {
    fn new(chip: &'c mut dyn MeasurableChip) -> Result<Self, CalibrationError> {
        let topo = chip.topology().clone();
        if topo.layout() != MeshLayout::Rectangular {
            return Err(CalibrationError::Mesh(crate::MeshError::InvalidParameter(
                "rectangular protocol needs a rectangular chip".into(),
            )));
        }
        let n = topo.n_modes();
        for port in 0..n {
            if chip.detector(port) != DetectorKind::Coherent {
                return Err(CalibrationError::CapabilityMismatch {
                    port,
                    needed: "coherent",
                });
            }
        }
        let n_cols = topo.column_count();
        let mut columns = vec![Vec::new(); n_cols];
        let mut top_mode = Vec::with_capacity(topo.mzi_count());
        let mut column_of = Vec::with_capacity(topo.mzi_count());
        for (i, p) in topo.placements().iter().enumerate() {
            columns[p.column].push(i);
            top_mode.push(p.top_mode);
            column_of.push(p.column);
        }
        let state = vec![DeviceState::default(); topo.mzi_count()];
        Ok(Self {
            chip,
            n,
            columns,
            top_mode,
            column_of,
            state,
        })
    }

    fn set_device(&mut self, dev: usize, v_theta: f64, v_phi: f64) {
        self.chip.set_voltage(
            ShifterId {
                mzi: dev,
                kind: ShifterKind::Theta,
            },
            v_theta,
        );
        self.chip.set_voltage(
            ShifterId {
                mzi: dev,
                kind: ShifterKind::Phi,
            },
            v_phi,
        );
    }

    /// Park every device except `dut` at the cross state of its current
    /// model (light keeps moving, external-shifter paths stay dark).
    fn park_all_cross(&mut self, dut: usize) {
        for dev in 0..self.state.len() {
            if dev == dut {
                continue;
            }
            let v = self.state[dev].theta_map.voltage_for(0.0);
            self.set_device(dev, v, 0.0);
        }
    }

    /// Gate elements of all devices in columns after `col` at their
    /// currently applied voltages, per the current model.
    fn suffix_elements(&self, col: usize) -> Vec<(usize, [Complex64; 4])> {
        let mut out = Vec::new();
        for c in col + 1..self.columns.len() {
            for &dev in &self.columns[c] {
                let st = &self.state[dev];
                let vt = self.chip.voltage(ShifterId {
                    mzi: dev,
                    kind: ShifterKind::Theta,
                });
                let vp = self.chip.voltage(ShifterId {
                    mzi: dev,
                    kind: ShifterKind::Phi,
                });
                out.push((
                    self.top_mode[dev],
                    modeled_elements(st.alpha, st.beta, &st.theta_map, &st.phi_map, vt, vp),
                ));
            }
        }
        out
    }

    fn dut<'a>(&'a mut self, dev: usize, input: Vec<Complex64>) -> RectDut<'a> {
        let suffix = self.suffix_elements(self.column_of[dev]);
        RectDut {
            chip: &mut *self.chip,
            device: dev,
            top_mode: self.top_mode[dev],
            input,
            suffix,
        }
    }

    /// Total power reaching the device for a given rig injection.
    fn dut_power(&mut self, dev: usize, input: &[Complex64]) -> Result<f64, CalibrationError> {
        let mut io = self.dut(dev, input.to_vec());
        let (t, b) = io.out_fields()?;
        Ok(t.norm_sqr() + b.norm_sqr())
    }

    /// Input port whose beam, walking through the cross-parked earlier
    /// columns (cross swaps the pair), arrives at the device's top input.
    /// Purely structural: no device parameters enter.
    fn structural_port(&self, dev: usize) -> usize {
        let col = self.column_of[dev];
        let mut mode = self.top_mode[dev];
        for c in (0..col).rev() {
            if let Some(&d) = self
                .columns[c]
                .iter()
                .find(|&&d| self.top_mode[d] == mode || self.top_mode[d] + 1 == mode)
            {
                let t = self.top_mode[d];
                mode = if t == mode { t + 1 } else { t };
            }
        }
        mode
    }

    /// Deliver a single-sided probe to the device: inject the port whose
    /// cross-routed wire path ends on the device's top input. While the
    /// parked cross states are still approximate (early refinement
    /// rounds), fall back to tuning upstream internal shifters for raw
    /// power so the estimators at least see light.
    fn route_probe(&mut self, dev: usize) -> Result<Vec<Complex64>, CalibrationError> {
        let n = self.n;
        let input = basis(n, self.structural_port(dev));
        let power = self.dut_power(dev, &input)?;
        if power > 0.2 {
            return Ok(input);
        }

        // Rescue pass: the parked crosses are too far off to route
        // structurally; funnel power empirically instead.
        let col = self.column_of[dev];
        let upstream: Vec<usize> = (0..col).flat_map(|c| self.columns[c].iter().copied()).collect();
        let u_max = sweep_voltage_limit().powi(2);
        let mut best_port = (0usize, f64::MIN);
        for port in 0..n {
            let p = self.dut_power(dev, &basis(n, port))?;
            if p > best_port.1 {
                best_port = (port, p);
            }
        }
        let input = basis(n, best_port.0);
        for _round in 0..2 {
            for &up in &upstream {
                let mut eval = |u: f64| -> f64 {
                    self.chip.set_voltage(
                        ShifterId {
                            mzi: up,
                            kind: ShifterKind::Theta,
                        },
                        u.sqrt(),
                    );
                    self.dut_power(dev, &input).unwrap_or(0.0)
                };
                let mut best_u = (0.0, f64::MIN);
                for i in 0..24 {
                    let u = u_max * i as f64 / 23.0;
                    let p = eval(u);
                    if p > best_u.1 {
                        best_u = (u, p);
                    }
                }
                eval(best_u.0);
            }
        }
        let power = self.dut_power(dev, &input)?;
        if power < POWER_FLOOR {
            return Err(CalibrationError::InsufficientPower {
                device: dev,
                power,
                floor: POWER_FLOOR,
            });
        }
        Ok(input)
    }

    /// How single-sided the light entering the device is.
    ///
    /// Averaging each output over a full external-phase period cancels the
    /// interference of the two input beams; the swing of the averaged
    /// output-power difference across theta settings is then proportional
    /// to | |x_t|^2 - |x_b|^2 |, the quantity the theta estimator needs.
    fn probe_dominance(&mut self, dev: usize, input: &[Complex64]) -> Result<f64, CalibrationError> {
        let u_max = sweep_voltage_limit().powi(2);
        let phi_grid = 8;
        let mut io = self.dut(dev, input.to_vec());
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        let mut total = 0.0_f64;
        for i in 0..8 {
            io.set_theta_volts((u_max * i as f64 / 7.0).sqrt());
            let mut diff = 0.0;
            let mut sum = 0.0;
            for j in 0..phi_grid {
                io.set_phi_volts((u_max * j as f64 / phi_grid as f64).sqrt());
                let (t, b) = io.out_fields()?;
                diff += t.norm_sqr() - b.norm_sqr();
                sum += t.norm_sqr() + b.norm_sqr();
            }
            lo = lo.min(diff / phi_grid as f64);
            hi = hi.max(diff / phi_grid as f64);
            total = total.max(sum / phi_grid as f64);
        }
        io.set_theta_volts(0.0);
        io.set_phi_volts(0.0);
        Ok(if total > 0.0 { (hi - lo) / total } else { 0.0 })
    }

    /// Which input port the routed beam dominantly enters: sweeping the
    /// external shifter rotates the output-field arguments only when the
    /// top input is lit (the shifter sits on that arm).
    fn probe_side(&mut self, dev: usize, input: &[Complex64]) -> Result<ProbeSide, CalibrationError> {
        let u_max = sweep_voltage_limit().powi(2);
        let mut io = self.dut(dev, input.to_vec());
        io.set_theta_volts((0.37 * u_max).sqrt());
        let mut reference: Option<Complex64> = None;
        let mut swing: f64 = 0.0;
        for i in 0..7 {
            io.set_phi_volts((u_max * i as f64 / 6.0).sqrt());
            let (t, b) = io.out_fields()?;
            let probe = if t.norm() > b.norm() { t } else { b };
            match reference {
                None => reference = Some(probe / probe.norm().max(1e-300)),
                Some(r) => {
                    let rot = (probe / probe.norm().max(1e-300) / r).arg().abs();
                    swing = swing.max(rot);
                }
            }
        }
        io.set_phi_volts(0.0);
        io.set_theta_volts(0.0);
        Ok(if swing > 0.7 {
            ProbeSide::Top
        } else {
            ProbeSide::Bottom
        })
    }

    /// Injection delivering roughly equal power to both device inputs.
    ///
    /// First tries to synthesize two-port weights through the prefix
    /// model (exact once the model has converged), verifying the achieved
    /// balance with a bar-state readout; falls back to scanning secondary
    /// ports against the routed primary.
    fn balanced_input(
        &mut self,
        dev: usize,
        primary: &[Complex64],
    ) -> Result<Vec<Complex64>, CalibrationError> {
        if let Some(input) = self.synthesized_balance(dev) {
            return Ok(input);
        }
        self.balanced_by_port_scan(dev, primary)
    }

    /// Measured input balance of the device (bar state maps inputs onto
    /// outputs up to O(error) leakage).
    fn measured_balance(&mut self, dev: usize, input: &[Complex64]) -> Result<(f64, f64), CalibrationError> {
        let vt_bar = self.state[dev].theta_map.voltage_for(PI);
        let mut io = self.dut(dev, input.to_vec());
        io.set_theta_volts(vt_bar);
        io.set_phi_volts(0.0);
        let (t, b) = io.out_fields()?;
        Ok((t.norm_sqr(), b.norm_sqr()))
    }

    fn synthesized_balance(&mut self, dev: usize) -> Option<Vec<Complex64>> {
        let n = self.n;
        let col = self.column_of[dev];
        let m = self.top_mode[dev];
        let mut best: Option<(Vec<Complex64>, f64)> = None;
        for a in 0..n {
            for b in a + 1..n {
                let ia = self.prefix_fields(col, &basis(n, a));
                let ib = self.prefix_fields(col, &basis(n, b));
                let (ta, ba) = (ia[m], ia[m + 1]);
                let (tb, bb) = (ib[m], ib[m + 1]);
                let det = ta * bb - tb * ba;
                if det.norm() < 1e-4 {
                    continue;
                }
                let target = Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
                let wa = (bb - tb) * target / det;
                let wb = (ta - ba) * target / det;
                let norm = (wa.norm_sqr() + wb.norm_sqr()).sqrt();
                if norm < 1e-12 || norm > 100.0 {
                    continue;
                }
                let mut input = vec![Complex64::ZERO; n];
                input[a] = wa / norm;
                input[b] = wb / norm;
                let (pt, pb) = self.measured_balance(dev, &input).ok()?;
                let balance = pt.min(pb) / pt.max(pb).max(1e-300);
                let power = pt + pb;
                if power > POWER_FLOOR
                    && balance > 0.3
                    && best.as_ref().map_or(true, |(_, s)| balance > *s)
                {
                    best = Some((input, balance));
                }
                if let Some((_, s)) = &best {
                    if *s > 0.9 {
                        return best.map(|(i, _)| i);
                    }
                }
            }
        }
        best.map(|(i, _)| i)
    }

    fn balanced_by_port_scan(
        &mut self,
        dev: usize,
        primary: &[Complex64],
    ) -> Result<Vec<Complex64>, CalibrationError> {
        let n = self.n;
        let vt_bar = self.state[dev].theta_map.voltage_for(PI);
        let primary_port = primary
            .iter()
            .position(|x| x.norm() > 0.5)
            .unwrap_or(0);
        let mut best: Option<(Vec<Complex64>, f64)> = None;
        for q in 0..n {
            if q == primary_port {
                continue;
            }
            let mut g = 1.0;
            for _ in 0..4 {
                let mut input = primary.to_vec();
                input[q] += Complex64::new(g, 0.0);
                let norm = input.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
                for x in &mut input {
                    *x /= norm;
                }
                let mut io = self.dut(dev, input.clone());
                io.set_theta_volts(vt_bar);
                io.set_phi_volts(0.0);
                let (t, b) = io.out_fields()?;
                let (pt, pb) = (t.norm_sqr().max(1e-30), b.norm_sqr().max(1e-30));
                g *= (pt / pb).powf(0.35).clamp(0.25, 4.0).sqrt();
                let balance = pt.min(pb) / pt.max(pb);
                if pt + pb > POWER_FLOOR {
                    if best.as_ref().map_or(true, |(_, s)| balance > *s) {
                        best = Some((input.clone(), balance));
                    }
                    if balance > 0.5 {
                        return Ok(input);
                    }
                }
            }
        }
        best.map(|(i, _)| i).ok_or(CalibrationError::InsufficientPower {
            device: dev,
            power: 0.0,
            floor: POWER_FLOOR,
        })
    }

    /// Backward amplitude pass over one device: theta map, splitter
    /// errors and the external-shifter period.
    fn amplitude_step(&mut self, dev: usize) -> Result<(), CalibrationError> {
        let debug = std::env::var("MESHFIX_CAL_DEBUG").is_ok();
        let stage = |name: &str, dev: usize, debug: bool| {
            if debug {
                eprintln!("dev {dev}: stage {name}");
            }
        };
        self.park_all_cross(dev);
        stage("route", dev, debug);
        let input = self.route_probe(dev)?;
        if debug {
            let p = self.dut_power(dev, &input).unwrap_or(-1.0);
            let dom = self.probe_dominance(dev, &input).unwrap_or(-1.0);
            let bal = self.measured_balance(dev, &input).unwrap_or((-1.0, -1.0));
            eprintln!("dev {dev}: routed power {p:.3e} dominance {dom:.3} bar-in ({:.3e}, {:.3e})", bal.0, bal.1);
        }
        stage("side", dev, debug);
        let side = self.probe_side(dev, &input)?;

        stage("theta", dev, debug);
        let theta = {
            let mut io = self.dut(dev, input.clone());
            calibrate_theta_map(&mut io, side, true)?
        };
        self.state[dev].theta_map = theta.theta_map;

        stage("balance", dev, debug);
        let balanced = self.balanced_input(dev, &input)?;
        // The external-shifter period from the strong two-beam fringe at
        // the cross state; the harmonic fit pins it to a precision the
        // offset anchor can lean on (kappa errors scale with u).
        stage("kappa_phi", dev, debug);
        let phi_kappa = {
            // Fit the period at theta = pi/2, where the two-beam fringe
            // stays strong no matter how the splitter errors conspire.
            let v_half = self.state[dev].theta_map.voltage_for(PI / 2.0);
            let top_mode_is_probe = side == ProbeSide::Top;
            let mut io = self.dut(dev, balanced.clone());
            io.set_theta_volts(v_half);
            let mut scan = |u: f64| -> f64 {
                io.set_phi_volts(u.sqrt());
                let (t, b) = io.out_fields().expect("virtual read");
                if top_mode_is_probe {
                    t.norm_sqr()
                } else {
                    b.norm_sqr()
                }
            };
            // Orientation is irrelevant here; only the period is kept.
            fit_square_law(&mut scan, true)?.map.kappa
        };

        // Branch discriminator from the single-sided probe: the alias of
        // the visibility solution swaps the two ports' cross/bar mean
        // ratios, which only an imbalanced injection can tell apart.
        stage("discriminator", dev, debug);
        let discriminator = {
            let theta_map = self.state[dev].theta_map;
            let mut io = self.dut(dev, input.clone());
            measure_branch_discriminator(&mut io, &theta_map, phi_kappa)?
        };

        stage("splitters", dev, debug);
        let est = {
            let mut io = self.dut(dev, balanced);
            calibrate_splitter_errors(&mut io, side, &theta, phi_kappa, &discriminator)?
        };
        let st = &mut self.state[dev];
        st.alpha = est.alpha;
        st.beta = est.beta;
        st.zeta = est.zeta;
        st.phi_map.kappa = phi_kappa;
        st.sign_note = if est.sum_sign_undetermined || est.diff_sign_undetermined {
            Some("interference below floor; magnitude pinned at zero")
        } else {
            None
        };
        Ok(())
    }

    /// Forward pass over one device: anchor the external-shifter offset
    /// against the known phase of the light delivered through the (fully
    /// modeled) earlier columns.
    fn anchor_step(&mut self, dev: usize) -> Result<(), CalibrationError> {
        self.park_all_cross(dev);
        let n = self.n;
        let col = self.column_of[dev];
        let m = self.top_mode[dev];

        // Synthesize a two-port injection whose prefix image lands with
        // equal, strong amplitude on both device inputs: solve the 2x2
        // port-to-input transfer for suitable weights. Balance keeps the
        // cross-state output well above any residual readout leakage.
        let mut chosen: Option<(Vec<Complex64>, Complex64, Complex64)> = None;
        let mut best_score = f64::MIN;
        for a in 0..n {
            for b in a + 1..n {
                let image = |port: usize, driver: &Self| -> (Complex64, Complex64) {
                    let arriving = driver.prefix_fields(col, &basis(n, port));
                    (arriving[m], arriving[m + 1])
                };
                let (ta, ba) = image(a, self);
                let (tb, bb) = image(b, self);
                let det = ta * bb - tb * ba;
                if det.norm() < 1e-4 {
                    continue;
                }
                // Weights delivering (1, 1)/sqrt(2) at the device input.
                let target = Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
                let wa = (bb - tb) * target / det;
                let wb = (ta - ba) * target / det;
                let norm = (wa.norm_sqr() + wb.norm_sqr()).sqrt();
                if norm < 1e-12 || norm > 100.0 {
                    continue;
                }
                let mut input = vec![Complex64::ZERO; n];
                input[a] = wa / norm;
                input[b] = wb / norm;
                let arriving = self.prefix_fields(col, &input);
                let (ft, fb) = (arriving[m], arriving[m + 1]);
                let power = ft.norm_sqr() + fb.norm_sqr();
                let balance = ft.norm_sqr().min(fb.norm_sqr()) / ft.norm_sqr().max(fb.norm_sqr()).max(1e-300);
                let score = power * (0.25 + balance);
                if power > POWER_FLOOR && balance > 1e-3 && score > best_score {
                    best_score = score;
                    chosen = Some((input, ft, fb));
                }
            }
        }
        let (input, ft, fb) = chosen.ok_or(CalibrationError::InsufficientPower {
            device: dev,
            power: 0.0,
            floor: POWER_FLOOR,
        })?;

        let side = if ft.norm() >= fb.norm() {
            ProbeSide::Top
        } else {
            ProbeSide::Bottom
        };
        let zeta = match side {
            ProbeSide::Top => fb.norm() / ft.norm(),
            ProbeSide::Bottom => ft.norm() / fb.norm(),
        };
        let st = self.state[dev];
        let cal = {
            let mut io = self.dut(dev, input);
            super::estimators::calibrate_phi_map(
                &mut io,
                side,
                &st.theta_map,
                st.phi_map.kappa,
                st.alpha,
                st.beta,
                zeta,
                ft.arg(),
                fb.arg(),
            )?
        };
        self.state[dev].phi_map = cal.phi_map;
        Ok(())
    }

    /// Fields arriving at the input of `col` for a rig injection, per the
    /// current model of the earlier columns at their applied voltages.
    fn prefix_fields(&self, col: usize, input: &[Complex64]) -> Vec<Complex64> {
        let mut fields = input.to_vec();
        for c in 0..col {
            for &dev in &self.columns[c] {
                let st = &self.state[dev];
                let vt = self.chip.voltage(ShifterId {
                    mzi: dev,
                    kind: ShifterKind::Theta,
                });
                let vp = self.chip.voltage(ShifterId {
                    mzi: dev,
                    kind: ShifterKind::Phi,
                });
                let t = modeled_elements(st.alpha, st.beta, &st.theta_map, &st.phi_map, vt, vp);
                let m = self.top_mode[dev];
                let a = fields[m];
                let b = fields[m + 1];
                fields[m] = t[0] * a + t[1] * b;
                fields[m + 1] = t[2] * a + t[3] * b;
            }
        }
        fields
    }

    fn run(&mut self, max_rounds: usize) -> Result<(), CalibrationError> {
        let n_cols = self.columns.len();
        let mut previous: Option<Vec<DeviceState>> = None;
        for round in 0..max_rounds {
            // Early rounds read through a suffix whose shifter offsets are
            // still provisional; a device step that fails there keeps its
            // previous estimate and is retried once the model improves.
            let tolerate = round + 1 < max_rounds;
            for col in (0..n_cols).rev() {
                for i in 0..self.columns[col].len() {
                    let dev = self.columns[col][i];
                    let saved = self.state[dev];
                    match self.amplitude_step(dev) {
                        Ok(()) => {}
                        Err(_) if tolerate => self.state[dev] = saved,
                        Err(e) => {
                            return Err(CalibrationError::PropagatedFailure {
                                device: dev,
                                source: Box::new(e),
                            })
                        }
                    }
                }
            }
            for col in 0..n_cols {
                for i in 0..self.columns[col].len() {
                    let dev = self.columns[col][i];
                    let saved = self.state[dev];
                    match self.anchor_step(dev) {
                        Ok(()) => {}
                        Err(_) if tolerate => self.state[dev] = saved,
                        Err(e) => {
                            return Err(CalibrationError::PropagatedFailure {
                                device: dev,
                                source: Box::new(e),
                            })
                        }
                    }
                }
            }
            if let Some(prev) = &previous {
                let drift = prev
                    .iter()
                    .zip(&self.state)
                    .map(|(a, b)| {
                        (a.alpha - b.alpha)
                            .abs()
                            .max((a.beta - b.beta).abs())
                            .max(crate::mesh::wrap_pi(a.phi_map.delta - b.phi_map.delta).abs())
                            .max(crate::mesh::wrap_pi(a.theta_map.delta - b.theta_map.delta).abs())
                    })
                    .fold(0.0, f64::max);
                if drift < 1e-9 {
                    break;
                }
            }
            previous = Some(self.state.clone());
        }
        Ok(())
    }
}

fn basis(n: usize, port: usize) -> Vec<Complex64> {
    let mut v = vec![Complex64::ZERO; n];
    v[port] = Complex64::new(1.0, 0.0);
    v
}

/// Calibrate a rectangular chip with coherent output detection: every
/// splitter error and both shifter maps of every MZI, from output-side
/// measurements only.
pub fn calibrate_mesh(chip: &mut dyn MeasurableChip) -> Result<CalibrationRecord, CalibrationError> {
    calibrate_mesh_rounds(chip, MAX_ROUNDS)
}

/// As [`calibrate_mesh`] with an explicit cap on refinement rounds.
pub fn calibrate_mesh_rounds(
    chip: &mut dyn MeasurableChip,
    max_rounds: usize,
) -> Result<CalibrationRecord, CalibrationError> {
    let mut driver = Driver::new(chip)?;
    driver.run(max_rounds)?;
    let devices = driver
        .state
        .iter()
        .map(|st| DeviceCalibration {
            alpha: st.alpha,
            beta: st.beta,
            theta_map: st.theta_map,
            phi_map: st.phi_map,
            zeta: st.zeta,
            sign_note: st.sign_note,
        })
        .collect();
    Ok(CalibrationRecord { devices })
}
