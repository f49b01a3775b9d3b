//! Transfer-matrix machinery for programmable MZI meshes.
//!
//! A Mach-Zehnder interferometer with internal phase `theta` and external
//! phase `phi` (both on the top arm) implements the 2x2 unitary
//!
//! ```text
//! T(theta, phi) = i e^{i theta/2} [ e^{i phi} sin(theta/2)   cos(theta/2) ]
//!                                 [ e^{i phi} cos(theta/2)  -sin(theta/2) ]
//! ```
//!
//! Directional-coupler fabrication errors `alpha` (input side) and `beta`
//! (output side) replace each ideal 50-50 splitter by one with splitting
//! angle pi/4 + alpha (resp. beta), turning T into the four-parameter
//! T'(theta, phi, alpha, beta). An N-mode mesh is the product of N(N-1)/2
//! such gates on nearest-neighbour modes followed by a diagonal phase
//! screen D.

use ndarray::Array2;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use std::f64::consts::{FRAC_PI_4, PI, TAU};

use crate::error::MeshError;

/// Dense complex matrix used for all transfer matrices.
pub type CMatrix = Array2<Complex64>;

/// Wrap an angle to the canonical range `[0, 2*pi)`.
pub fn wrap_two_pi(x: f64) -> f64 {
    let y = x.rem_euclid(TAU);
    if y == TAU {
        0.0
    } else {
        y
    }
}

/// Wrap an angle to `(-pi, pi]`, the convention for correction offsets.
pub fn wrap_pi(x: f64) -> f64 {
    let y = x.rem_euclid(TAU);
    if y > PI {
        y - TAU
    } else {
        y
    }
}

/// Phase settings of a single MZI, stored wrapped to `[0, 2*pi)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MziSettings {
    theta: f64,
    phi: f64,
}

impl MziSettings {
    pub fn new(theta: f64, phi: f64) -> Self {
        Self {
            theta: wrap_two_pi(theta),
            phi: wrap_two_pi(phi),
        }
    }

    /// Internal phase (controls the splitting ratio).
    pub fn theta(&self) -> f64 {
        self.theta
    }

    /// External phase on the top input arm.
    pub fn phi(&self) -> f64 {
        self.phi
    }
}

/// Splitting-angle deviations of the two directional couplers of one MZI.
///
/// `alpha` belongs to the input-side coupler, `beta` to the output-side
/// one. Both must stay within (-pi/4, pi/4): beyond that the coupler has
/// passed 0-100 or 100-0 splitting.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SplitterErrors {
    alpha: f64,
    beta: f64,
}

impl SplitterErrors {
    pub fn new(alpha: f64, beta: f64) -> Result<Self, MeshError> {
        if alpha.abs() >= FRAC_PI_4 || !alpha.is_finite() {
            return Err(MeshError::SplitterOutOfRange(alpha));
        }
        if beta.abs() >= FRAC_PI_4 || !beta.is_finite() {
            return Err(MeshError::SplitterOutOfRange(beta));
        }
        Ok(Self { alpha, beta })
    }

    pub fn zero() -> Self {
        Self::default()
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }
}

/// Mesh layout family.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MeshLayout {
    Rectangular,
    Triangular,
}

/// Physical position of one MZI: column index and upper of the two
/// nearest-neighbour modes it couples.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MziPlacement {
    pub column: usize,
    pub top_mode: usize,
}

/// Placement of all N(N-1)/2 MZIs of a full mesh, listed in physical
/// light-propagation order (columns left to right, top to bottom within a
/// column).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MeshTopology {
    n_modes: usize,
    layout: MeshLayout,
    placements: Vec<MziPlacement>,
}

impl MeshTopology {
    /// Rectangular (Clements) arrangement: N columns alternating between
    /// MZIs starting on mode 0 and mode 1.
    pub fn rectangular(n_modes: usize) -> Self {
        assert!(n_modes >= 1, "mesh needs at least one mode");
        let mut placements = Vec::with_capacity(n_modes * (n_modes - 1) / 2);
        for column in 0..n_modes {
            let start = column % 2;
            let mut top = start;
            while top + 1 < n_modes {
                placements.push(MziPlacement { column, top_mode: top });
                top += 2;
            }
        }
        // Trailing all-empty columns never occur for n >= 2; for n = 1 the
        // mesh is empty.
        Self {
            n_modes,
            layout: MeshLayout::Rectangular,
            placements,
        }
    }

    /// Triangular (Reck) arrangement. Diagonal g (1-based, counted from the
    /// input side) consists of g devices on mode pairs (g-1, g), (g-2, g-1),
    /// ..., (0, 1) placed in columns g-1, g, ..., 2g-2. Placements are
    /// listed column by column (physical propagation order).
    pub fn triangular(n_modes: usize) -> Self {
        assert!(n_modes >= 1, "mesh needs at least one mode");
        let mut placements = Vec::with_capacity(n_modes * (n_modes - 1) / 2);
        for g in 1..n_modes {
            for j in 0..g {
                placements.push(MziPlacement {
                    column: g - 1 + j,
                    top_mode: g - 1 - j,
                });
            }
        }
        placements.sort_by_key(|p| (p.column, p.top_mode));
        Self {
            n_modes,
            layout: MeshLayout::Triangular,
            placements,
        }
    }

    pub fn from_placements(
        n_modes: usize,
        layout: MeshLayout,
        placements: Vec<MziPlacement>,
    ) -> Result<Self, MeshError> {
        for p in &placements {
            if p.top_mode + 1 >= n_modes {
                return Err(MeshError::InvalidParameter(format!(
                    "placement touches mode {} in a {}-mode mesh",
                    p.top_mode + 1,
                    n_modes
                )));
            }
        }
        Ok(Self {
            n_modes,
            layout,
            placements,
        })
    }

    pub fn n_modes(&self) -> usize {
        self.n_modes
    }

    pub fn layout(&self) -> MeshLayout {
        self.layout
    }

    pub fn placements(&self) -> &[MziPlacement] {
        &self.placements
    }

    pub fn mzi_count(&self) -> usize {
        self.placements.len()
    }

    pub fn column_count(&self) -> usize {
        self.placements
            .iter()
            .map(|p| p.column + 1)
            .max()
            .unwrap_or(0)
    }
}

/// A fully programmed mesh: topology, per-MZI settings and the output
/// phase screen D (one phase per mode, applied after the MZI product).
#[derive(Clone, Debug, PartialEq)]
pub struct MeshProgram {
    topology: MeshTopology,
    settings: Vec<MziSettings>,
    output_phases: Vec<f64>,
}

impl MeshProgram {
    pub fn new(
        topology: MeshTopology,
        settings: Vec<MziSettings>,
        output_phases: Vec<f64>,
    ) -> Result<Self, MeshError> {
        if settings.len() != topology.mzi_count() {
            return Err(MeshError::DimensionMismatch(format!(
                "{} settings for {} MZIs",
                settings.len(),
                topology.mzi_count()
            )));
        }
        if output_phases.len() != topology.n_modes() {
            return Err(MeshError::DimensionMismatch(format!(
                "{} output phases for {} modes",
                output_phases.len(),
                topology.n_modes()
            )));
        }
        let output_phases = output_phases.into_iter().map(wrap_two_pi).collect();
        Ok(Self {
            topology,
            settings,
            output_phases,
        })
    }

    pub fn topology(&self) -> &MeshTopology {
        &self.topology
    }

    pub fn settings(&self) -> &[MziSettings] {
        &self.settings
    }

    pub fn output_phases(&self) -> &[f64] {
        &self.output_phases
    }

    pub fn n_modes(&self) -> usize {
        self.topology.n_modes()
    }
}

/// Per-MZI splitter errors, aligned with the propagation order of a
/// `MeshTopology`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ErrorMap {
    errors: Vec<SplitterErrors>,
}

impl ErrorMap {
    pub fn new(errors: Vec<SplitterErrors>) -> Self {
        Self { errors }
    }

    pub fn zeros(count: usize) -> Self {
        Self {
            errors: vec![SplitterErrors::zero(); count],
        }
    }

    /// Draw alpha, beta i.i.d. from N(0, sigma^2), clamped inside the
    /// physical splitter range.
    pub fn sample_gaussian(count: usize, sigma: f64, rng: &mut impl rand::Rng) -> Self {
        Self::sample_gaussian_correlated(count, sigma, 0.0, rng)
    }

    /// Draw alpha, beta jointly Gaussian with correlation `rho`; on real
    /// devices the two coupler deviations track each other strongly.
    pub fn sample_gaussian_correlated(
        count: usize,
        sigma: f64,
        rho: f64,
        rng: &mut impl rand::Rng,
    ) -> Self {
        let lim = FRAC_PI_4 * 0.999;
        let tail = (1.0 - rho * rho).max(0.0).sqrt();
        let errors = (0..count)
            .map(|_| {
                let ga: f64 = StandardNormal.sample(rng);
                let gb: f64 = StandardNormal.sample(rng);
                let alpha = (sigma * ga).clamp(-lim, lim);
                let beta = (sigma * (rho * ga + tail * gb)).clamp(-lim, lim);
                SplitterErrors::new(alpha, beta).expect("clamped inside range")
            })
            .collect();
        Self { errors }
    }

    pub fn errors(&self) -> &[SplitterErrors] {
        &self.errors
    }

    pub fn len(&self) -> usize {
        self.errors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.errors.is_empty()
    }
}

/// 2x2 entries (row-major) of the ideal MZI unitary, Eq.-(3) convention.
#[inline]
pub fn ideal_mzi_elements(s: MziSettings) -> [Complex64; 4] {
    imperfect_mzi_elements(s, SplitterErrors::zero())
}

/// 2x2 entries (row-major) of the imperfect MZI unitary
/// T'(theta, phi, alpha, beta).
#[inline]
pub fn imperfect_mzi_elements(s: MziSettings, e: SplitterErrors) -> [Complex64; 4] {
    let half = 0.5 * s.theta();
    let (sin_h, cos_h) = half.sin_cos();
    let (sp, cp) = (e.alpha() + e.beta()).sin_cos();
    let (sm, cm) = (e.alpha() - e.beta()).sin_cos();
    let pre = Complex64::i() * Complex64::from_polar(1.0, half);
    let eph = Complex64::from_polar(1.0, s.phi());
    let t00 = pre * eph * Complex64::new(cm * sin_h, sp * cos_h);
    let t01 = pre * Complex64::new(cp * cos_h, sm * sin_h);
    let t10 = pre * eph * Complex64::new(cp * cos_h, -sm * sin_h);
    let t11 = pre * Complex64::new(-cm * sin_h, sp * cos_h);
    [t00, t01, t10, t11]
}

fn matrix_from_elements(e: [Complex64; 4]) -> CMatrix {
    Array2::from_shape_vec((2, 2), e.to_vec()).expect("2x2 shape")
}

/// Ideal 2x2 MZI unitary of Eq. (3).
pub fn ideal_mzi_unitary(s: MziSettings) -> CMatrix {
    matrix_from_elements(ideal_mzi_elements(s))
}

/// Imperfect 2x2 MZI unitary T'(theta, phi, alpha, beta) of Eq. (5).
pub fn imperfect_mzi_unitary(s: MziSettings, e: SplitterErrors) -> CMatrix {
    matrix_from_elements(imperfect_mzi_elements(s, e))
}

/// Apply a 2x2 block to rows (m, m+1) of `mat` (left-multiplication by the
/// embedded gate).
#[inline]
pub(crate) fn apply_two_mode(mat: &mut CMatrix, m: usize, t: [Complex64; 4]) {
    let n = mat.ncols();
    for col in 0..n {
        let a = mat[[m, col]];
        let b = mat[[m + 1, col]];
        mat[[m, col]] = t[0] * a + t[1] * b;
        mat[[m + 1, col]] = t[2] * a + t[3] * b;
    }
}

/// Full N x N transfer matrix of a programmed mesh,
/// `U = D . prod T_ij`, with optional splitter errors per device.
///
/// Devices are applied in propagation order, so the first listed MZI is
/// the first one light traverses (the rightmost factor of the product).
pub fn mesh_unitary(program: &MeshProgram, errors: Option<&ErrorMap>) -> Result<CMatrix, MeshError> {
    let n = program.n_modes();
    if let Some(map) = errors {
        if map.len() != program.topology().mzi_count() {
            return Err(MeshError::DimensionMismatch(format!(
                "error map has {} entries for {} MZIs",
                map.len(),
                program.topology().mzi_count()
            )));
        }
    }
    let mut u = Array2::eye(n);
    for (idx, placement) in program.topology().placements().iter().enumerate() {
        let s = program.settings()[idx];
        let t = match errors {
            Some(map) => imperfect_mzi_elements(s, map.errors()[idx]),
            None => ideal_mzi_elements(s),
        };
        apply_two_mode(&mut u, placement.top_mode, t);
    }
    for (mode, &phase) in program.output_phases().iter().enumerate() {
        let d = Complex64::from_polar(1.0, phase);
        for col in 0..n {
            u[[mode, col]] *= d;
        }
    }
    Ok(u)
}

/// Max-norm deviation of `u` from unitarity, `max |U U^dag - I|`.
pub fn unitarity_deviation(u: &CMatrix) -> f64 {
    let n = u.nrows();
    let mut worst = 0.0_f64;
    for i in 0..n {
        for j in 0..n {
            let mut acc = Complex64::ZERO;
            for k in 0..n {
                acc += u[[i, k]] * u[[j, k]].conj();
            }
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((acc - target).norm());
        }
    }
    worst
}

/// Whether `u` is unitary to within `tol` in the max norm.
pub fn is_unitary(u: &CMatrix, tol: f64) -> bool {
    u.nrows() == u.ncols() && unitarity_deviation(u) < tol
}

/// Normalized Frobenius distance between an implemented and a target
/// matrix: `eps = sqrt( sum_ij |A_ij - B_ij|^2 / N )`, the "relative error
/// per entry". For unitary inputs it lies in [0, 2].
pub fn matrix_error(hardware: &CMatrix, target: &CMatrix) -> Result<f64, MeshError> {
    if hardware.dim() != target.dim() || hardware.nrows() != hardware.ncols() {
        return Err(MeshError::DimensionMismatch(format!(
            "{:?} vs {:?}",
            hardware.dim(),
            target.dim()
        )));
    }
    let n = hardware.nrows() as f64;
    let sum: f64 = hardware
        .iter()
        .zip(target.iter())
        .map(|(a, b)| (a - b).norm_sqr())
        .sum();
    Ok((sum / n).sqrt())
}

/// Entry-wise comparison after removing one global phase, for expressions
/// that are only defined up to a common factor e^{i gamma}.
pub fn equal_up_to_global_phase(a: &CMatrix, b: &CMatrix, tol: f64) -> bool {
    if a.dim() != b.dim() {
        return false;
    }
    // Reference the phase on the largest entry of b.
    let mut best = 0.0;
    let mut phase = Complex64::new(1.0, 0.0);
    for (x, y) in a.iter().zip(b.iter()) {
        if y.norm() > best && x.norm() > 0.0 {
            best = y.norm();
            phase = x / y;
        }
    }
    if best == 0.0 {
        return a.iter().all(|x| x.norm() < tol);
    }
    let phase = phase / phase.norm();
    a.iter()
        .zip(b.iter())
        .all(|(x, y)| (x - phase * y).norm() < tol)
}

/// Distance to the target after removing the optimal global phase.
pub fn global_phase_distance(a: &CMatrix, b: &CMatrix) -> f64 {
    // The optimal phase maximises Re[e^{-i g} <b, a>].
    let inner: Complex64 = a.iter().zip(b.iter()).map(|(x, y)| y.conj() * x).sum();
    let phase = if inner.norm() > 0.0 {
        inner / inner.norm()
    } else {
        Complex64::new(1.0, 0.0)
    };
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - phase * y).norm())
        .fold(0.0, f64::max)
}

/// Haar-random N x N unitary, deterministic in `seed`.
///
/// Orthonormalizes a complex Gaussian matrix by modified Gram-Schmidt with
/// real-positive column norms, which fixes the triangular factor's
/// diagonal phases and makes the result Haar-distributed. Alternate QR
/// implementations reproduce the distribution, not these exact values.
pub fn haar_random_unitary(n: usize, seed: u64) -> CMatrix {
    assert!(n >= 1, "dimension must be positive");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut g = Array2::from_shape_fn((n, n), |_| {
        let re: f64 = StandardNormal.sample(&mut rng);
        let im: f64 = StandardNormal.sample(&mut rng);
        Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
    });
    // Modified Gram-Schmidt, one re-orthogonalization pass for stability.
    for j in 0..n {
        for _pass in 0..2 {
            for k in 0..j {
                let mut proj = Complex64::ZERO;
                for i in 0..n {
                    proj += g[[i, k]].conj() * g[[i, j]];
                }
                for i in 0..n {
                    let qk = g[[i, k]];
                    g[[i, j]] -= proj * qk;
                }
            }
        }
        let norm = g.column(j).iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
        assert!(norm > 1e-100, "degenerate Gaussian draw");
        for i in 0..n {
            g[[i, j]] /= norm;
        }
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn max_entry_diff(a: &CMatrix, b: &CMatrix) -> f64 {
        a.iter()
            .zip(b.iter())
            .map(|(x, y)| (x - y).norm())
            .fold(0.0, f64::max)
    }

    #[test]
    fn cross_state_at_theta_zero() {
        let t = ideal_mzi_unitary(MziSettings::new(0.0, 0.0));
        let i = Complex64::i();
        assert!((t[[0, 0]]).norm() < 1e-15);
        assert!((t[[0, 1]] - i).norm() < 1e-15);
        assert!((t[[1, 0]] - i).norm() < 1e-15);
        assert!((t[[1, 1]]).norm() < 1e-15);
    }

    #[test]
    fn bar_state_at_theta_pi() {
        let t = ideal_mzi_unitary(MziSettings::new(PI, 0.0));
        assert!((t[[0, 0]] - Complex64::new(-1.0, 0.0)).norm() < 1e-12);
        assert!((t[[1, 1]] - Complex64::new(1.0, 0.0)).norm() < 1e-12);
        assert!(t[[0, 1]].norm() < 1e-12);
        assert!(t[[1, 0]].norm() < 1e-12);
    }

    #[test]
    fn balanced_point_matches_factor_product() {
        // Direct evaluation of the four constituent factors of the ideal
        // MZI at theta = phi = pi/2.
        let s = MziSettings::new(PI / 2.0, PI / 2.0);
        let half = Complex64::new(0.5, 0.0);
        let splitter = ndarray::arr2(&[
            [Complex64::new(1.0, 0.0), Complex64::i()],
            [Complex64::i(), Complex64::new(1.0, 0.0)],
        ]);
        let phase = |p: f64| {
            ndarray::arr2(&[
                [Complex64::from_polar(1.0, p), Complex64::ZERO],
                [Complex64::ZERO, Complex64::new(1.0, 0.0)],
            ])
        };
        let expected = splitter
            .dot(&phase(PI / 2.0))
            .dot(&splitter)
            .dot(&phase(PI / 2.0))
            .mapv(|x| x * half);
        let got = ideal_mzi_unitary(s);
        assert!(max_entry_diff(&got, &expected) < 1e-14);
        for entry in got.iter() {
            assert_abs_diff_eq!(entry.norm(), std::f64::consts::FRAC_1_SQRT_2, epsilon = 1e-12);
        }
    }

    #[test]
    fn imperfect_reduces_to_ideal() {
        let s = MziSettings::new(1.234, 2.345);
        let t_ideal = ideal_mzi_unitary(s);
        let t_err = imperfect_mzi_unitary(s, SplitterErrors::zero());
        assert!(max_entry_diff(&t_ideal, &t_err) < 1e-14);
    }

    #[test]
    fn imperfect_cross_leakage() {
        // theta = 0 with alpha = beta = 0.02: diagonal magnitude sin(0.04),
        // off-diagonal magnitude cos(0.04).
        let e = SplitterErrors::new(0.02, 0.02).unwrap();
        let t = imperfect_mzi_unitary(MziSettings::new(0.0, 0.0), e);
        assert_abs_diff_eq!(t[[0, 0]].norm(), 0.04_f64.sin(), epsilon = 1e-14);
        assert_abs_diff_eq!(t[[1, 1]].norm(), 0.04_f64.sin(), epsilon = 1e-14);
        assert_abs_diff_eq!(t[[0, 1]].norm(), 0.04_f64.cos(), epsilon = 1e-14);
        assert_abs_diff_eq!(t[[1, 0]].norm(), 0.04_f64.cos(), epsilon = 1e-14);
    }

    /// Eq. (6) product form: T' = B(beta) . T(theta, phi) . A(alpha, phi).
    fn factor_form(s: MziSettings, e: SplitterErrors) -> CMatrix {
        let (sa, ca) = e.alpha().sin_cos();
        let (sb, cb) = e.beta().sin_cos();
        let b = ndarray::arr2(&[
            [Complex64::new(cb, 0.0), Complex64::new(0.0, sb)],
            [Complex64::new(0.0, sb), Complex64::new(cb, 0.0)],
        ]);
        let a = ndarray::arr2(&[
            [
                Complex64::new(ca, 0.0),
                Complex64::i() * Complex64::from_polar(sa, -s.phi()),
            ],
            [
                Complex64::i() * Complex64::from_polar(sa, s.phi()),
                Complex64::new(ca, 0.0),
            ],
        ]);
        b.dot(&ideal_mzi_unitary(s)).dot(&a)
    }

    #[test]
    fn expanded_form_equals_factor_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10_000 {
            let s = MziSettings::new(
                rand::Rng::random_range(&mut rng, 0.0..TAU),
                rand::Rng::random_range(&mut rng, 0.0..TAU),
            );
            let e = SplitterErrors::new(
                rand::Rng::random_range(&mut rng, -0.2..0.2),
                rand::Rng::random_range(&mut rng, -0.2..0.2),
            )
            .unwrap();
            let lhs = imperfect_mzi_unitary(s, e);
            let rhs = factor_form(s, e);
            assert!(
                max_entry_diff(&lhs, &rhs) < 1e-12,
                "factorization identity failed at {s:?} {e:?}"
            );
        }
    }

    #[test]
    fn device_unitarity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let s = MziSettings::new(
                rand::Rng::random_range(&mut rng, 0.0..TAU),
                rand::Rng::random_range(&mut rng, 0.0..TAU),
            );
            let e = SplitterErrors::new(
                rand::Rng::random_range(&mut rng, -0.7..0.7),
                rand::Rng::random_range(&mut rng, -0.7..0.7),
            )
            .unwrap();
            let t = imperfect_mzi_unitary(s, e);
            assert!(unitarity_deviation(&t) < 1e-12);
        }
    }

    #[test]
    fn topology_counts() {
        for n in 2..=9 {
            let rect = MeshTopology::rectangular(n);
            let tri = MeshTopology::triangular(n);
            assert_eq!(rect.mzi_count(), n * (n - 1) / 2);
            assert_eq!(tri.mzi_count(), n * (n - 1) / 2);
            // For n = 2 the last rectangular column is empty.
            assert_eq!(rect.column_count(), if n == 2 { 1 } else { n });
            assert_eq!(tri.column_count(), 2 * n - 3);
        }
    }

    #[test]
    fn single_device_mesh_matches_gate() {
        let topo = MeshTopology::rectangular(2);
        let s = MziSettings::new(0.7, 1.9);
        let program = MeshProgram::new(topo, vec![s], vec![0.0, 0.0]).unwrap();
        let u = mesh_unitary(&program, None).unwrap();
        assert!(max_entry_diff(&u, &ideal_mzi_unitary(s)) < 1e-14);
    }

    #[test]
    fn mesh_is_unitary_and_error_free_limit_holds() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let topo = MeshTopology::rectangular(6);
        let settings: Vec<MziSettings> = (0..topo.mzi_count())
            .map(|_| {
                MziSettings::new(
                    rand::Rng::random_range(&mut rng, 0.0..TAU),
                    rand::Rng::random_range(&mut rng, 0.0..TAU),
                )
            })
            .collect();
        let phases: Vec<f64> = (0..6)
            .map(|_| rand::Rng::random_range(&mut rng, 0.0..TAU))
            .collect();
        let program = MeshProgram::new(topo, settings, phases).unwrap();
        let u = mesh_unitary(&program, None).unwrap();
        assert!(is_unitary(&u, 1e-10));
        let zeros = ErrorMap::zeros(program.topology().mzi_count());
        let u2 = mesh_unitary(&program, Some(&zeros)).unwrap();
        assert!(max_entry_diff(&u, &u2) < 1e-12);
    }

    #[test]
    fn matrix_error_examples() {
        let u = haar_random_unitary(5, 99);
        assert_eq!(matrix_error(&u, &u).unwrap(), 0.0);
        let neg = u.mapv(|x| -x);
        assert_abs_diff_eq!(matrix_error(&neg, &u).unwrap(), 2.0, epsilon = 1e-12);

        // Single-MZI mesh with alpha = 0.02: closed form
        // eps^2 = (4/N)(1 - cos alpha) at N = 2.
        let s = MziSettings::new(1.1, 0.4);
        let e = SplitterErrors::new(0.02, 0.0).unwrap();
        let eps = matrix_error(&imperfect_mzi_unitary(s, e), &ideal_mzi_unitary(s)).unwrap();
        let expect = (2.0 * (1.0 - 0.02_f64.cos())).sqrt();
        assert_abs_diff_eq!(eps, expect, epsilon = 1e-12);
        assert_abs_diff_eq!(eps, 0.0200, epsilon = 2e-4);
    }

    #[test]
    fn matrix_error_is_metric_like() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..50 {
            let seeds: Vec<u64> = (0..3).map(|_| rand::Rng::random(&mut rng)).collect();
            let a = haar_random_unitary(4, seeds[0]);
            let b = haar_random_unitary(4, seeds[1]);
            let c = haar_random_unitary(4, seeds[2]);
            let ab = matrix_error(&a, &b).unwrap();
            let ba = matrix_error(&b, &a).unwrap();
            assert_abs_diff_eq!(ab, ba, epsilon = 1e-13);
            let ac = matrix_error(&a, &c).unwrap();
            let cb = matrix_error(&c, &b).unwrap();
            assert!(ab <= ac + cb + 1e-12);
        }
    }

    #[test]
    fn haar_is_deterministic_and_unitary() {
        let a = haar_random_unitary(8, 1234);
        let b = haar_random_unitary(8, 1234);
        assert_eq!(max_entry_diff(&a, &b), 0.0);
        assert!(is_unitary(&a, 1e-10));
        let scalar = haar_random_unitary(1, 5);
        assert_abs_diff_eq!(scalar[[0, 0]].norm(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn haar_left_invariance_statistic() {
        // |u_00|^2 averages to 1/N, and stays 1/N under a fixed left
        // rotation of every sample.
        let n = 4;
        let fixed = haar_random_unitary(n, 777);
        let trials = 4000;
        let mut plain = 0.0;
        let mut rotated = 0.0;
        for seed in 0..trials {
            let u = haar_random_unitary(n, seed as u64);
            plain += u[[0, 0]].norm_sqr();
            rotated += fixed.dot(&u)[[0, 0]].norm_sqr();
        }
        plain /= trials as f64;
        rotated /= trials as f64;
        assert_abs_diff_eq!(plain, 1.0 / n as f64, epsilon = 0.02);
        assert_abs_diff_eq!(rotated, 1.0 / n as f64, epsilon = 0.02);
    }

    #[test]
    fn wrapping_conventions() {
        assert_abs_diff_eq!(wrap_two_pi(-0.1), TAU - 0.1, epsilon = 1e-15);
        assert_eq!(wrap_two_pi(TAU), 0.0);
        assert_abs_diff_eq!(wrap_pi(PI), PI, epsilon = 0.0);
        assert!(wrap_pi(PI + 0.1) < 0.0);
        assert_abs_diff_eq!(wrap_pi(-PI), PI, epsilon = 1e-15);
    }

    #[test]
    fn splitter_range_enforced() {
        assert!(SplitterErrors::new(FRAC_PI_4, 0.0).is_err());
        assert!(SplitterErrors::new(0.0, -FRAC_PI_4).is_err());
        assert!(SplitterErrors::new(0.2, -0.2).is_ok());
    }
}
