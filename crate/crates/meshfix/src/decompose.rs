//! Exact decomposition of an N x N unitary into mesh settings.
//!
//! Both procedures null matrix entries with Givens-style MZI rotations and
//! then push every left-over factor through the diagonal, so the result is
//! always in the canonical form `U = D . prod T_ij(theta, phi)` with
//! `theta` in [0, pi]. Matrices, never angles, are the source of truth:
//! each result carries its reconstruction residual.

use num_complex::Complex64;
use std::f64::consts::PI;

use crate::error::MeshError;
use crate::mesh::{
    ideal_mzi_elements, mesh_unitary, wrap_two_pi, CMatrix, MeshProgram, MeshTopology, MziSettings,
};

/// Entries with magnitude below this are treated as already nulled and get
/// a deterministic extreme setting instead of an arctangent of noise.
const DEGENERATE: f64 = 1e-14;

/// A mesh program together with the max entry-wise error of rebuilding the
/// input from it.
#[derive(Clone, Debug)]
pub struct DecompositionResult {
    pub program: MeshProgram,
    pub residual: f64,
}

/// One nulling operation: the 2x2 gate acted on modes (m, m+1).
#[derive(Clone, Copy, Debug)]
struct NullOp {
    top_mode: usize,
    theta: f64,
    phi: f64,
}

/// Angles (theta, phi) such that right-multiplying by T^dag(theta, phi) on
/// columns (m, m+1) nulls entry (row, m).
fn right_null_angles(w: &CMatrix, row: usize, m: usize) -> (f64, f64) {
    let a = w[[row, m]];
    let b = w[[row, m + 1]];
    if a.norm() < DEGENERATE && b.norm() < DEGENERATE {
        return (0.0, 0.0);
    }
    if b.norm() < DEGENERATE {
        return (0.0, 0.0);
    }
    if a.norm() < DEGENERATE {
        return (PI, 0.0);
    }
    let theta = 2.0 * b.norm().atan2(a.norm());
    let phi = a.arg() - b.arg() - PI;
    (theta, phi)
}

/// Angles (theta, phi) such that left-multiplying by T(theta, phi) on rows
/// (m, m+1) nulls entry (m+1, col).
fn left_null_angles(w: &CMatrix, m: usize, col: usize) -> (f64, f64) {
    let a = w[[m, col]];
    let b = w[[m + 1, col]];
    if a.norm() < DEGENERATE && b.norm() < DEGENERATE {
        return (0.0, 0.0);
    }
    if b.norm() < DEGENERATE {
        return (PI, 0.0);
    }
    if a.norm() < DEGENERATE {
        return (0.0, 0.0);
    }
    let theta = 2.0 * a.norm().atan2(b.norm());
    let phi = b.arg() - a.arg();
    (theta, phi)
}

/// W <- W . T^dag(theta, phi) on columns (m, m+1).
fn apply_right_dagger(w: &mut CMatrix, m: usize, theta: f64, phi: f64) {
    let half = 0.5 * theta;
    let (s, c) = half.sin_cos();
    let pre = -Complex64::i() * Complex64::from_polar(1.0, -half);
    let emph = Complex64::from_polar(1.0, -phi);
    let n = w.nrows();
    for row in 0..n {
        let x = w[[row, m]];
        let y = w[[row, m + 1]];
        w[[row, m]] = pre * (emph * s * x + c * y);
        w[[row, m + 1]] = pre * (emph * c * x - s * y);
    }
}

/// W <- T(theta, phi) . W on rows (m, m+1).
fn apply_left(w: &mut CMatrix, m: usize, theta: f64, phi: f64) {
    let t = ideal_mzi_elements(MziSettings::new(theta, phi));
    crate::mesh::apply_two_mode(w, m, t);
}

/// Rewrite T^dag(theta, phi) . diag(e^{i l}) as diag(e^{i l'}) . T(theta, phi~)
/// on modes (m, m+1), updating the phase vector in place and returning the
/// new external phase. Derived for the Eq.-(3) gate convention:
/// phi~ = l_m - l_{m+1}, l'_m = l_{m+1} - theta - phi + pi,
/// l'_{m+1} = l_{m+1} - theta + pi.
fn commute_dagger_through_diagonal(phases: &mut [f64], m: usize, theta: f64, phi: f64) -> f64 {
    let l_top = phases[m];
    let l_bot = phases[m + 1];
    let phi_new = l_top - l_bot;
    phases[m] = l_bot - theta - phi + PI;
    phases[m + 1] = l_bot - theta + PI;
    phi_new
}

/// Assign physical columns greedily in propagation order: each device
/// lands in the earliest column after every earlier device it shares a
/// mode with.
fn assign_columns(n: usize, ops: &[NullOp]) -> Vec<usize> {
    let mut next = vec![0usize; n];
    ops.iter()
        .map(|op| {
            let col = next[op.top_mode].max(next[op.top_mode + 1]);
            next[op.top_mode] = col + 1;
            next[op.top_mode + 1] = col + 1;
            col
        })
        .collect()
}

/// Sort propagation-ordered ops into canonical (column, top_mode) order and
/// check the result matches the expected full-mesh topology.
fn ops_to_program(
    topology: MeshTopology,
    ops: Vec<NullOp>,
    output_phases: Vec<f64>,
) -> Result<MeshProgram, MeshError> {
    let n = topology.n_modes();
    let columns = assign_columns(n, &ops);
    let mut order: Vec<usize> = (0..ops.len()).collect();
    order.sort_by_key(|&i| (columns[i], ops[i].top_mode));
    for (slot, &i) in order.iter().enumerate() {
        let expect = topology.placements()[slot];
        if expect.column != columns[i] || expect.top_mode != ops[i].top_mode {
            return Err(MeshError::InvalidParameter(format!(
                "nulling sequence does not tile the {:?} mesh at device {}",
                topology.layout(),
                slot
            )));
        }
    }
    let settings = order
        .iter()
        .map(|&i| MziSettings::new(ops[i].theta, ops[i].phi))
        .collect();
    MeshProgram::new(topology, settings, output_phases)
}

fn check_unitary_input(u: &CMatrix) -> Result<usize, MeshError> {
    if u.nrows() != u.ncols() {
        return Err(MeshError::DimensionMismatch(format!("{:?}", u.dim())));
    }
    let dev = crate::mesh::unitarity_deviation(u);
    if dev >= 1e-8 {
        return Err(MeshError::NotUnitary {
            deviation: dev,
            tol: 1e-8,
        });
    }
    Ok(u.nrows())
}

/// Rectangular (Clements) decomposition.
///
/// Nulls anti-diagonals alternately with column operations (applied as
/// T^dag from the right) and row operations (T from the left), then
/// commutes the accumulated left factors through the diagonal.
pub fn clements_decompose(u: &CMatrix) -> Result<DecompositionResult, MeshError> {
    let n = check_unitary_input(u)?;
    let mut w = u.clone();
    let mut right_ops: Vec<NullOp> = Vec::new();
    let mut left_ops: Vec<NullOp> = Vec::new();

    for diag in 1..n {
        if diag % 2 == 1 {
            for j in 0..diag {
                let row = n - 1 - j;
                let m = diag - 1 - j;
                let (theta, phi) = right_null_angles(&w, row, m);
                apply_right_dagger(&mut w, m, theta, phi);
                right_ops.push(NullOp {
                    top_mode: m,
                    theta,
                    phi,
                });
            }
        } else {
            for j in 1..=diag {
                let row = n - diag + j - 1;
                let col = j - 1;
                let m = row - 1;
                let (theta, phi) = left_null_angles(&w, m, col);
                apply_left(&mut w, m, theta, phi);
                left_ops.push(NullOp {
                    top_mode: m,
                    theta,
                    phi,
                });
            }
        }
    }

    // W is now diagonal: U = T_l1^dag ... T_lp^dag . W . T_rq ... T_r1.
    let mut phases: Vec<f64> = (0..n).map(|i| w[[i, i]].arg()).collect();
    let mut ops = right_ops;
    for op in left_ops.into_iter().rev() {
        let phi_new = commute_dagger_through_diagonal(&mut phases, op.top_mode, op.theta, op.phi);
        ops.push(NullOp {
            top_mode: op.top_mode,
            theta: op.theta,
            phi: phi_new,
        });
    }

    let phases = phases.into_iter().map(wrap_two_pi).collect();
    let program = ops_to_program(MeshTopology::rectangular(n), ops, phases)?;
    let rebuilt = mesh_unitary(&program, None)?;
    let residual = max_entry_diff(&rebuilt, u);
    Ok(DecompositionResult { program, residual })
}

/// Triangular (Reck) decomposition.
///
/// Nulls the rows of U^dag from the bottom up with column operations; all
/// factors then sit left of the diagonal and are commuted through it.
pub fn reck_decompose(u: &CMatrix) -> Result<DecompositionResult, MeshError> {
    let n = check_unitary_input(u)?;
    let mut v = u.t().mapv(|x| x.conj());
    let mut gen_ops: Vec<NullOp> = Vec::new();

    for row in (1..n).rev() {
        for col in 0..row {
            let (theta, phi) = right_null_angles(&v, row, col);
            apply_right_dagger(&mut v, col, theta, phi);
            gen_ops.push(NullOp {
                top_mode: col,
                theta,
                phi,
            });
        }
    }

    // V = U^dag reduced to diag(e^{i l}); hence
    // U = T_g1^dag ... T_gk^dag . diag(e^{-i l}).
    let mut phases: Vec<f64> = (0..n).map(|i| -v[[i, i]].arg()).collect();
    let mut ops: Vec<NullOp> = Vec::with_capacity(gen_ops.len());
    for op in gen_ops.into_iter().rev() {
        let phi_new = commute_dagger_through_diagonal(&mut phases, op.top_mode, op.theta, op.phi);
        ops.push(NullOp {
            top_mode: op.top_mode,
            theta: op.theta,
            phi: phi_new,
        });
    }

    let phases = phases.into_iter().map(wrap_two_pi).collect();
    let program = ops_to_program(MeshTopology::triangular(n), ops, phases)?;
    let rebuilt = mesh_unitary(&program, None)?;
    let residual = max_entry_diff(&rebuilt, u);
    Ok(DecompositionResult { program, residual })
}

/// Decompose onto the requested layout.
pub fn decompose(u: &CMatrix, layout: crate::mesh::MeshLayout) -> Result<DecompositionResult, MeshError> {
    match layout {
        crate::mesh::MeshLayout::Rectangular => clements_decompose(u),
        crate::mesh::MeshLayout::Triangular => reck_decompose(u),
    }
}

/// Rebuild the unitary implemented by an error-free program. Alias of
/// [`mesh_unitary`] without an error map, provided for symmetry with the
/// decompositions.
pub fn reconstruct(program: &MeshProgram) -> Result<CMatrix, MeshError> {
    mesh_unitary(program, None)
}

pub(crate) fn max_entry_diff(a: &CMatrix, b: &CMatrix) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).norm())
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{haar_random_unitary, ideal_mzi_unitary, MeshLayout};
    use ndarray::Array2;
    use num_complex::Complex64;

    #[test]
    fn identity_decomposes_cleanly() {
        for layout in [MeshLayout::Rectangular, MeshLayout::Triangular] {
            let eye: CMatrix = Array2::eye(4);
            let res = decompose(&eye, layout).unwrap();
            assert!(res.residual < 1e-12, "residual {}", res.residual);
            let rebuilt = reconstruct(&res.program).unwrap();
            assert!(max_entry_diff(&rebuilt, &eye) < 1e-12);
        }
    }

    #[test]
    fn haar_round_trip_n8() {
        let u = haar_random_unitary(8, 42);
        for layout in [MeshLayout::Rectangular, MeshLayout::Triangular] {
            let res = decompose(&u, layout).unwrap();
            assert!(res.residual < 1e-10, "{layout:?}: {}", res.residual);
            assert_eq!(res.program.topology().mzi_count(), 28);
        }
    }

    #[test]
    fn round_trip_sizes_2_to_16() {
        for n in 2..=16 {
            let u = haar_random_unitary(n, 1000 + n as u64);
            for layout in [MeshLayout::Rectangular, MeshLayout::Triangular] {
                let res = decompose(&u, layout).unwrap();
                assert!(
                    res.residual < 1e-10,
                    "n={n} {layout:?} residual {}",
                    res.residual
                );
                assert_eq!(res.program.topology().mzi_count(), n * (n - 1) / 2);
            }
        }
    }

    #[test]
    fn theta_stays_in_branch() {
        let u = haar_random_unitary(10, 9);
        for layout in [MeshLayout::Rectangular, MeshLayout::Triangular] {
            let res = decompose(&u, layout).unwrap();
            for s in res.program.settings() {
                assert!(
                    s.theta() <= PI + 1e-12,
                    "{layout:?} theta {} outside [0, pi]",
                    s.theta()
                );
            }
        }
    }

    #[test]
    fn two_mode_gate_recovered_as_matrix() {
        let t = ideal_mzi_unitary(MziSettings::new(0.9, 2.2));
        let res = clements_decompose(&t).unwrap();
        let rebuilt = reconstruct(&res.program).unwrap();
        assert!(max_entry_diff(&rebuilt, &t) < 1e-12);
    }

    #[test]
    fn cyclic_permutation_lands_on_extremes() {
        // 3-mode cyclic shift: entries are 0 or 1, so every theta must land
        // on a cross/bar extreme.
        let mut p: CMatrix = Array2::zeros((3, 3));
        p[[1, 0]] = Complex64::new(1.0, 0.0);
        p[[2, 1]] = Complex64::new(1.0, 0.0);
        p[[0, 2]] = Complex64::new(1.0, 0.0);
        let res = reck_decompose(&p).unwrap();
        assert!(res.residual < 1e-10);
        for s in res.program.settings() {
            let d0 = s.theta().min((s.theta() - PI).abs());
            assert!(d0 < 1e-7, "theta {} not at an extreme", s.theta());
        }
    }

    #[test]
    fn rejects_non_unitary() {
        let mut m: CMatrix = Array2::eye(3);
        m[[0, 0]] = Complex64::new(1.5, 0.0);
        assert!(matches!(
            clements_decompose(&m),
            Err(MeshError::NotUnitary { .. })
        ));
    }
}
