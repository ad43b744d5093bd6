//! Numerical nondegeneracy check of the HMM parametrization at a parameter
//! point.
//!
//! The squared Frobenius distance between candidate tensors, viewed as a
//! function of free coordinates `(p, q, A)` around the point — probability
//! mass shifted within `pi`, within each row of `Q`, and emission densities
//! perturbed inside their own span with preserved integrals — has no linear
//! term at zero. The Hessian of that map (by central finite differences)
//! is reported with its determinant and smallest eigenvalue: a determinant
//! at numerical zero flags a degenerate direction, e.g. two identical
//! emission densities.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::leastsq::candidate_tensor;
use crate::linalg;
use crate::spectral::HmmParams;

/// Hessian report of the local quadratic form.
#[derive(Debug, Clone)]
pub struct HdetReport {
    /// `(K - 1) (2K + 1)` free coordinates.
    pub dim: usize,
    pub hessian: Array2<f64>,
    pub determinant: f64,
    pub min_eigenvalue: f64,
}

/// Free coordinates: `p` in `R^{K-1}`, `q` and `A` in `R^{K x (K-1)}`; the
/// omitted last column of each block is minus the row sum, so perturbed
/// distributions keep unit mass and perturbed densities keep unit integral.
fn coordinate_count(k: usize) -> usize {
    (k - 1) * (2 * k + 1)
}

fn perturbed(params: &HmmParams, z: &Array1<f64>) -> (Array1<f64>, Array2<f64>, Array2<f64>) {
    let k = params.k();
    let mut idx = 0;

    let mut pi = params.pi.clone();
    let mut last = 0.0;
    for i in 0..k - 1 {
        pi[i] += z[idx];
        last -= z[idx];
        idx += 1;
    }
    pi[k - 1] += last;

    let mut q = params.q.clone();
    for i in 0..k {
        let mut row_last = 0.0;
        for j in 0..k - 1 {
            q[(i, j)] += z[idx];
            row_last -= z[idx];
            idx += 1;
        }
        q[(i, k - 1)] += row_last;
    }

    // emission mixing matrix A extended with zero row sums; new emissions
    // are O (I + A)^T in coefficient space
    let mut mix = Array2::eye(k);
    for i in 0..k {
        let mut row_last = 0.0;
        for j in 0..k - 1 {
            mix[(i, j)] += z[idx];
            row_last -= z[idx];
            idx += 1;
        }
        mix[(i, k - 1)] += row_last;
    }
    let o = params.o.dot(&mix.t());
    (pi, q, o)
}

/// Central finite-difference Hessian at zero of the squared tensor distance
/// under the free-coordinate perturbation; `step` must lie in
/// `[1e-6, 1e-2]`.
pub fn hdet_diagnostic(params: &HmmParams, step: f64) -> Result<HdetReport> {
    params.validate()?;
    if !(1e-6..=1e-2).contains(&step) {
        return Err(Error::invalid(format!(
            "step {step} outside [1e-6, 1e-2]"
        )));
    }
    let k = params.k();
    if k < 2 {
        return Err(Error::invalid(
            "nondegeneracy diagnostic needs at least 2 states",
        ));
    }
    let dim = coordinate_count(k);
    let base = candidate_tensor(&params.pi, &params.q, &params.o);
    let h = |z: &Array1<f64>| -> f64 {
        let (pi, q, o) = perturbed(params, z);
        let cand = candidate_tensor(&pi, &q, &o);
        cand.iter()
            .zip(base.iter())
            .map(|(c, b)| (c - b) * (c - b))
            .sum()
    };

    let mut hessian = Array2::zeros((dim, dim));
    for i in 0..dim {
        let mut e = Array1::zeros(dim);
        e[i] = step;
        let plus = h(&e);
        e[i] = -step;
        let minus = h(&e);
        // h(0) = 0 by construction
        hessian[(i, i)] = (plus + minus) / (step * step);
        for j in i + 1..dim {
            let mut z = Array1::zeros(dim);
            z[i] = step;
            z[j] = step;
            let pp = h(&z);
            z[j] = -step;
            let pm = h(&z);
            z[i] = -step;
            z[j] = step;
            let mp = h(&z);
            z[j] = -step;
            let mm = h(&z);
            let val = (pp - pm - mp + mm) / (4.0 * step * step);
            hessian[(i, j)] = val;
            hessian[(j, i)] = val;
        }
    }

    let determinant = linalg::determinant(&hessian);
    let (eigvals, _) = linalg::sym_eigen(&hessian);
    let min_eigenvalue = eigvals.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(HdetReport {
        dim,
        hessian,
        determinant,
        min_eigenvalue,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn generic_params() -> HmmParams {
        let q = array![
            [0.70, 0.10, 0.20],
            [0.08, 0.80, 0.12],
            [0.15, 0.15, 0.70]
        ];
        let pi = crate::simulation::stationary_distribution(&q).unwrap();
        let o = array![
            [1.0, 1.0, 1.0],
            [0.4, -0.2, 0.0],
            [0.0, 0.3, -0.1],
            [0.2, 0.0, 0.3]
        ];
        HmmParams { pi, q, o }
    }

    #[test]
    fn dimension_count() {
        assert_eq!(coordinate_count(2), 5);
        assert_eq!(coordinate_count(3), 14);
    }

    #[test]
    fn zero_perturbation_is_identity() {
        let params = generic_params();
        let z = Array1::zeros(coordinate_count(3));
        let (pi, q, o) = perturbed(&params, &z);
        assert_eq!(pi, params.pi);
        assert_eq!(q, params.q);
        for (a, b) in o.iter().zip(params.o.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-15);
        }
    }

    #[test]
    fn perturbation_preserves_mass() {
        let params = generic_params();
        let dim = coordinate_count(3);
        let z = Array1::from_shape_fn(dim, |i| 0.01 * ((i as f64 * 0.7).sin()));
        let (pi, q, _) = perturbed(&params, &z);
        assert_abs_diff_eq!(pi.sum(), 1.0, epsilon = 1e-12);
        for row in q.rows() {
            assert_abs_diff_eq!(row.sum(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn generic_parameters_are_nondegenerate() {
        let params = generic_params();
        let report = hdet_diagnostic(&params, 1e-4).unwrap();
        assert_eq!(report.dim, 14);
        assert!(
            report.min_eigenvalue > 0.0,
            "min eigenvalue {:.3e}",
            report.min_eigenvalue
        );
        assert!(report.determinant > 0.0);
    }

    #[test]
    fn identical_emission_columns_are_degenerate() {
        let mut params = generic_params();
        // states 0 and 1 share an emission density: mixing them is a null
        // direction of the quadratic form
        let col0 = params.o.column(0).to_owned();
        params.o.column_mut(1).assign(&col0);
        let report = hdet_diagnostic(&params, 1e-4).unwrap();
        let (eigvals, _) = crate::linalg::sym_eigen(&report.hessian);
        let max_abs = eigvals.iter().fold(0.0_f64, |a, &b| a.max(b.abs()));
        let scale = max_abs.powi(report.dim as i32);
        assert!(
            report.determinant.abs() <= 1e-8 * scale.max(1e-300),
            "determinant {:.3e} vs scale {:.3e}",
            report.determinant,
            scale
        );
    }

    #[test]
    fn gradient_vanishes_at_zero() {
        let params = generic_params();
        let dim = coordinate_count(3);
        let base = candidate_tensor(&params.pi, &params.q, &params.o);
        let step = 1e-4;
        for i in 0..dim {
            let mut z = Array1::zeros(dim);
            z[i] = step;
            let (pi, q, o) = perturbed(&params, &z);
            let plus: f64 = candidate_tensor(&pi, &q, &o)
                .iter()
                .zip(base.iter())
                .map(|(c, b)| (c - b) * (c - b))
                .sum();
            z[i] = -step;
            let (pi, q, o) = perturbed(&params, &z);
            let minus: f64 = candidate_tensor(&pi, &q, &o)
                .iter()
                .zip(base.iter())
                .map(|(c, b)| (c - b) * (c - b))
                .sum();
            let grad = (plus - minus) / (2.0 * step);
            assert!(
                grad.abs() < 10.0 * step * step,
                "coordinate {i}: gradient {grad:.3e}"
            );
        }
    }

    #[test]
    fn determinant_stable_under_step_halving() {
        let params = generic_params();
        let a = hdet_diagnostic(&params, 2e-4).unwrap();
        let b = hdet_diagnostic(&params, 1e-4).unwrap();
        let rel = (a.determinant - b.determinant).abs() / b.determinant.abs();
        assert!(rel < 0.01, "relative change {rel:.3e}");
    }

    #[test]
    fn hessian_matches_gradient_of_gradient_probe() {
        // K = 2 toy case: compare against first differences of the
        // finite-difference gradient
        let q = array![[0.8, 0.2], [0.3, 0.7]];
        let pi = crate::simulation::stationary_distribution(&q).unwrap();
        let o = array![[1.0, 1.0], [0.5, -0.4], [0.1, 0.3]];
        let params = HmmParams { pi, q, o };
        let report = hdet_diagnostic(&params, 1e-4).unwrap();
        let dim = report.dim;
        let base = candidate_tensor(&params.pi, &params.q, &params.o);
        let h = |z: &Array1<f64>| -> f64 {
            let (pi, q, o) = perturbed(&params, z);
            candidate_tensor(&pi, &q, &o)
                .iter()
                .zip(base.iter())
                .map(|(c, b)| (c - b) * (c - b))
                .sum()
        };
        let step = 1e-4;
        let grad_at = |at: &Array1<f64>| -> Array1<f64> {
            let mut g = Array1::zeros(dim);
            for i in 0..dim {
                let mut z = at.clone();
                z[i] += step;
                let plus = h(&z);
                z[i] -= 2.0 * step;
                let minus = h(&z);
                g[i] = (plus - minus) / (2.0 * step);
            }
            g
        };
        for j in 0..dim {
            let mut at = Array1::zeros(dim);
            at[j] = step;
            let gp = grad_at(&at);
            at[j] = -step;
            let gm = grad_at(&at);
            for i in 0..dim {
                let alt = (gp[i] - gm[i]) / (2.0 * step);
                let reference = report.hessian[(i, j)];
                let tol = 1e-4 * reference.abs().max(1.0);
                assert!(
                    (alt - reference).abs() <= tol,
                    "entry ({i}, {j}): {alt} vs {reference}"
                );
            }
        }
    }
}
