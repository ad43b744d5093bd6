//! Nested orthonormal bases on `[0, 1]`, coefficient-space geometry and
//! ground-truth projections.
//!
//! Two families are supported:
//!
//! * [`BasisKind::Trig`] — the trigonometric basis under the Lebesgue
//!   measure: `phi_1 = 1`, `phi_{2m}(x) = sqrt(2) cos(2 pi m x)`,
//!   `phi_{2m+1}(x) = sqrt(2) sin(2 pi m x)`;
//! * [`BasisKind::DiracTrig`] — the same family preceded by the indicator
//!   of `{0}`, orthonormal under the dominating measure `delta_0 + Leb`.
//!   Coordinate 0 is the atom; every non-atom function evaluates to 0 at
//!   `x = 0`.
//!
//! Truncating a coefficient vector is exactly the orthogonal projection
//! onto the smaller model, so all L2 geometry is Euclidean geometry on
//! coefficients.

use std::f64::consts::{PI, SQRT_2};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quad;

/// Default node count for ground-truth projection quadrature.
pub const DEFAULT_QUADRATURE_POINTS: usize = 4096;

const MIN_QUADRATURE_POINTS: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum BasisKind {
    Trig,
    #[clap(name = "dirac_trig")]
    DiracTrig,
}

/// Descriptor of a nested orthonormal function family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Basis {
    pub kind: BasisKind,
    pub max_dim: usize,
}

impl Basis {
    pub fn new(kind: BasisKind, max_dim: usize) -> Result<Self> {
        if max_dim == 0 {
            return Err(Error::invalid("basis max_dim must be at least 1"));
        }
        Ok(Basis { kind, max_dim })
    }

    /// Index of the function that is constant on the continuous part of the
    /// observation space (used to reduce triple tensors to lower moments).
    pub fn constant_index(&self) -> usize {
        match self.kind {
            BasisKind::Trig => 0,
            BasisKind::DiracTrig => 1,
        }
    }

    /// Evaluates the first `dim` basis functions at `y`.
    pub fn evaluate(&self, dim: usize, y: f64) -> Result<Vec<f64>> {
        if dim == 0 || dim > self.max_dim {
            return Err(Error::invalid(format!(
                "dimension {dim} outside 1..={}",
                self.max_dim
            )));
        }
        check_domain(y)?;
        let mut out = vec![0.0; dim];
        self.evaluate_into(y, &mut out);
        Ok(out)
    }

    /// Evaluation hot path; `y` must already lie in `[0, 1]`.
    pub(crate) fn evaluate_into(&self, y: f64, out: &mut [f64]) {
        debug_assert!((0.0..=1.0).contains(&y));
        match self.kind {
            BasisKind::Trig => trig_into(y, out),
            BasisKind::DiracTrig => {
                if out.is_empty() {
                    return;
                }
                if y == 0.0 {
                    out.fill(0.0);
                    out[0] = 1.0;
                } else {
                    out[0] = 0.0;
                    trig_into(y, &mut out[1..]);
                }
            }
        }
    }
}

fn check_domain(y: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&y) {
        return Err(Error::Domain(format!("observation {y} outside [0, 1]")));
    }
    Ok(())
}

fn trig_into(y: f64, out: &mut [f64]) {
    if out.is_empty() {
        return;
    }
    out[0] = 1.0;
    let mut idx = 1;
    let mut harmonic = 1.0;
    while idx < out.len() {
        let (sin, cos) = (2.0 * PI * harmonic * y).sin_cos();
        out[idx] = SQRT_2 * cos;
        if idx + 1 < out.len() {
            out[idx + 1] = SQRT_2 * sin;
        }
        idx += 2;
        harmonic += 1.0;
    }
}

/// Builds a basis descriptor.
pub fn make_basis(kind: BasisKind, max_dim: usize) -> Result<Basis> {
    Basis::new(kind, max_dim)
}

/// Evaluates the first `dim` functions of `basis` at `y`.
pub fn evaluate_basis(basis: &Basis, dim: usize, y: f64) -> Result<Vec<f64>> {
    basis.evaluate(dim, y)
}

/// A density (or signed L2 function) represented by its coefficient vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientDensity {
    pub kind: BasisKind,
    pub coeffs: Vec<f64>,
}

impl CoefficientDensity {
    pub fn new(kind: BasisKind, coeffs: Vec<f64>) -> Self {
        CoefficientDensity { kind, coeffs }
    }

    pub fn dim(&self) -> usize {
        self.coeffs.len()
    }

    /// L2 norm; by orthonormality this is the Euclidean norm of the
    /// coefficients.
    pub fn norm(&self) -> f64 {
        self.coeffs.iter().map(|c| c * c).sum::<f64>().sqrt()
    }

    /// Projection onto the nested model of dimension `dim` (truncation).
    pub fn truncated(&self, dim: usize) -> CoefficientDensity {
        let dim = dim.min(self.coeffs.len());
        CoefficientDensity {
            kind: self.kind,
            coeffs: self.coeffs[..dim].to_vec(),
        }
    }

    /// Pointwise value of the expanded function at `y`.
    pub fn value_at(&self, y: f64) -> Result<f64> {
        check_domain(y)?;
        let basis = Basis::new(self.kind, self.coeffs.len().max(1))?;
        let mut phi = vec![0.0; self.coeffs.len()];
        basis.evaluate_into(y, &mut phi);
        Ok(self
            .coeffs
            .iter()
            .zip(&phi)
            .map(|(c, p)| c * p)
            .sum::<f64>())
    }
}

/// L2 distance between two coefficient densities over the same basis kind;
/// the shorter vector is zero-padded (nested models).
pub fn l2_distance(a: &CoefficientDensity, b: &CoefficientDensity) -> Result<f64> {
    if a.kind != b.kind {
        return Err(Error::invalid("mismatched basis kinds"));
    }
    Ok(coeff_distance(&a.coeffs, &b.coeffs))
}

/// Euclidean distance between coefficient slices after zero-padding.
pub(crate) fn coeff_distance(a: &[f64], b: &[f64]) -> f64 {
    let common = a.len().min(b.len());
    let mut sum = 0.0;
    for i in 0..common {
        let d = a[i] - b[i];
        sum += d * d;
    }
    for &x in &a[common..] {
        sum += x * x;
    }
    for &x in &b[common..] {
        sum += x * x;
    }
    sum.sqrt()
}

/// Projects a density given as a callable onto the first `dim` basis
/// functions using composite Gauss–Legendre quadrature with at least
/// `quadrature_points` nodes (deterministic for a fixed node count).
///
/// For [`BasisKind::DiracTrig`] the coefficient of the atom is the density
/// value at 0, i.e. the mass placed on the atom of `delta_0 + Leb`; the
/// remaining coefficients integrate against the Lebesgue part.
pub fn project_true_density(
    basis: &Basis,
    dim: usize,
    density: impl Fn(f64) -> f64,
    quadrature_points: usize,
) -> Result<CoefficientDensity> {
    if dim == 0 || dim > basis.max_dim {
        return Err(Error::invalid(format!(
            "dimension {dim} outside 1..={}",
            basis.max_dim
        )));
    }
    if quadrature_points < MIN_QUADRATURE_POINTS {
        return Err(Error::invalid(format!(
            "quadrature_points {quadrature_points} below minimum {MIN_QUADRATURE_POINTS}"
        )));
    }
    let rule = quad::composite_gauss_legendre(quadrature_points);
    let mut coeffs = vec![0.0; dim];
    let (atom_offset, trig_dim) = match basis.kind {
        BasisKind::Trig => (0, dim),
        BasisKind::DiracTrig => {
            let v = density(0.0);
            if !v.is_finite() {
                return Err(Error::Numerical("density value at the atom is not finite".into()));
            }
            coeffs[0] = v;
            (1, dim - 1)
        }
    };
    if trig_dim > 0 {
        let mut phi = vec![0.0; trig_dim];
        for (&x, &w) in rule.nodes.iter().zip(&rule.weights) {
            let v = density(x);
            if !v.is_finite() {
                return Err(Error::Numerical(format!(
                    "density value at quadrature node {x} is not finite"
                )));
            }
            trig_into(x, &mut phi);
            for (c, p) in coeffs[atom_offset..].iter_mut().zip(&phi) {
                *c += w * v * p;
            }
        }
    }
    Ok(CoefficientDensity::new(basis.kind, coeffs))
}

/// Closed-form upper bound `32 m^2 M` on the squared oscillation of rank-one
/// triple products of trigonometric basis functions: each function is
/// bounded by `sqrt(2)`, a triple product by `2 sqrt(2)`, and a squared
/// difference of two triple products by 32.
pub fn eta3_bound(edge_dim: usize, center_dim: usize) -> Result<f64> {
    if edge_dim == 0 || edge_dim > center_dim {
        return Err(Error::invalid(format!(
            "eta3 bound requires 1 <= m <= M, got m={edge_dim}, M={center_dim}"
        )));
    }
    Ok(32.0 * (edge_dim * edge_dim * center_dim) as f64)
}
