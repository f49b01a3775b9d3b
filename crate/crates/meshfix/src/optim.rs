//! Derivative-free simplex minimizer (Nelder-Mead with adaptive
//! parameters) used to train ring-array settings on the ideal model.

/// Outcome of one minimization.
#[derive(Clone, Debug)]
pub struct MinimizeResult {
    pub x: Vec<f64>,
    pub fx: f64,
    pub evals: usize,
    pub converged: bool,
}

/// Options controlling the simplex search.
#[derive(Clone, Copy, Debug)]
pub struct NelderMeadOptions {
    /// Initial simplex edge length.
    pub step: f64,
    /// Stop when the simplex function spread falls below this.
    pub ftol: f64,
    /// Stop when the simplex diameter falls below this.
    pub xtol: f64,
    pub max_evals: usize,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        Self {
            step: 0.3,
            ftol: 1e-12,
            xtol: 1e-10,
            max_evals: 20_000,
        }
    }
}

/// Minimize `f` starting from `x0` with the adaptive Nelder-Mead scheme
/// (reflection/expansion/contraction coefficients scaled with dimension,
/// which keeps the simplex usable in the 30-parameter ring problems).
pub fn nelder_mead(
    f: &mut dyn FnMut(&[f64]) -> f64,
    x0: &[f64],
    opts: &NelderMeadOptions,
) -> MinimizeResult {
    let n = x0.len();
    assert!(n >= 1);
    let nf = n as f64;
    // Gao-Han adaptive coefficients.
    let alpha = 1.0;
    let beta = 1.0 + 2.0 / nf;
    let gamma = 0.75 - 1.0 / (2.0 * nf);
    let delta = 1.0 - 1.0 / nf;

    let mut evals = 0usize;
    let mut eval = |x: &[f64], evals: &mut usize| -> f64 {
        *evals += 1;
        f(x)
    };

    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    simplex.push(x0.to_vec());
    for i in 0..n {
        let mut v = x0.to_vec();
        v[i] += opts.step;
        simplex.push(v);
    }
    let mut fx: Vec<f64> = simplex.iter().map(|v| eval(v, &mut evals)).collect();

    loop {
        // Order best to worst.
        let mut idx: Vec<usize> = (0..=n).collect();
        idx.sort_by(|&a, &b| fx[a].partial_cmp(&fx[b]).unwrap());
        let reorder: Vec<Vec<f64>> = idx.iter().map(|&i| simplex[i].clone()).collect();
        let refx: Vec<f64> = idx.iter().map(|&i| fx[i]).collect();
        simplex = reorder;
        fx = refx;

        let spread = fx[n] - fx[0];
        let diam = simplex[1..]
            .iter()
            .map(|v| {
                v.iter()
                    .zip(&simplex[0])
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max);
        if spread < opts.ftol && diam < opts.xtol {
            return MinimizeResult {
                x: simplex[0].clone(),
                fx: fx[0],
                evals,
                converged: true,
            };
        }
        if evals >= opts.max_evals {
            return MinimizeResult {
                x: simplex[0].clone(),
                fx: fx[0],
                evals,
                converged: false,
            };
        }

        // Centroid of all but the worst.
        let mut centroid = vec![0.0; n];
        for v in &simplex[..n] {
            for (c, x) in centroid.iter_mut().zip(v) {
                *c += x / nf;
            }
        }
        let lerp = |from: &[f64], towards: &[f64], t: f64| -> Vec<f64> {
            from.iter()
                .zip(towards)
                .map(|(a, b)| a + t * (b - a))
                .collect()
        };

        let reflected = lerp(&centroid, &simplex[n], -alpha);
        let fr = eval(&reflected, &mut evals);
        if fr < fx[0] {
            let expanded = lerp(&centroid, &simplex[n], -alpha * beta);
            let fe = eval(&expanded, &mut evals);
            if fe < fr {
                simplex[n] = expanded;
                fx[n] = fe;
            } else {
                simplex[n] = reflected;
                fx[n] = fr;
            }
        } else if fr < fx[n - 1] {
            simplex[n] = reflected;
            fx[n] = fr;
        } else {
            let contracted = if fr < fx[n] {
                lerp(&centroid, &simplex[n], -alpha * gamma)
            } else {
                lerp(&centroid, &simplex[n], gamma)
            };
            let fc = eval(&contracted, &mut evals);
            if fc < fx[n].min(fr) {
                simplex[n] = contracted;
                fx[n] = fc;
            } else {
                // Shrink towards the best vertex.
                for i in 1..=n {
                    simplex[i] = lerp(&simplex[0], &simplex[i], delta);
                    fx[i] = eval(&simplex[i], &mut evals);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimizes_quadratic_bowl() {
        let mut f = |x: &[f64]| x.iter().map(|v| (v - 1.5) * (v - 1.5)).sum::<f64>();
        let res = nelder_mead(&mut f, &[0.0; 4], &NelderMeadOptions::default());
        assert!(res.converged);
        for v in res.x {
            assert!((v - 1.5).abs() < 1e-5);
        }
    }

    #[test]
    fn minimizes_rosenbrock_2d() {
        let mut f = |x: &[f64]| {
            let a = 1.0 - x[0];
            let b = x[1] - x[0] * x[0];
            a * a + 100.0 * b * b
        };
        let opts = NelderMeadOptions {
            max_evals: 50_000,
            ..Default::default()
        };
        let res = nelder_mead(&mut f, &[-1.2, 1.0], &opts);
        assert!(res.fx < 1e-8, "fx = {}", res.fx);
    }

    #[test]
    fn reports_nonconvergence_on_budget() {
        let mut f = |x: &[f64]| x.iter().map(|v| v.abs()).sum::<f64>();
        let opts = NelderMeadOptions {
            max_evals: 10,
            ..Default::default()
        };
        let res = nelder_mead(&mut f, &[5.0; 8], &opts);
        assert!(!res.converged);
    }
}
