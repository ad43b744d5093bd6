//! Cross-model alignment of hidden-state labels and the state-by-state
//! model selection rule.
//!
//! Estimator columns produced independently for each model dimension carry
//! an arbitrary hidden-state labelling. [`align_family`] permutes every
//! model's columns to match a reference model, after which column `k` means
//! the same hidden state everywhere. Selection then minimizes, separately
//! for each state, a bias proxy plus twice a penalty: the bias proxy
//! compares the state's estimators across pairs of nested models and
//! discounts each comparison by the penalty of the larger model.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::bases::{coeff_distance, Basis, CoefficientDensity};
use crate::error::{Error, Result};

const MAX_BRUTE_FORCE_STATES: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Spectral,
    Ls,
}

/// Per-model estimator diagnostics carried through file formats.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelDiagnostics {
    pub separation_score: Option<f64>,
    pub attempt_index: Option<usize>,
    pub singular_values: Option<Vec<f64>>,
}

/// Estimated HMM parameters for one model dimension.
#[derive(Debug, Clone)]
pub struct ModelEstimate {
    pub dim: usize,
    pub pi: Array1<f64>,
    pub q: Array2<f64>,
    /// `dim x K` emission coefficients.
    pub o: Array2<f64>,
    pub diagnostics: ModelDiagnostics,
}

impl ModelEstimate {
    pub fn emission_coeffs(&self, state: usize) -> Vec<f64> {
        self.o.column(state).to_vec()
    }
}

/// A family of per-model estimates over a common basis.
#[derive(Debug, Clone)]
pub struct EstimatorFamily {
    pub basis: Basis,
    /// Observation-triple count behind the estimates.
    pub n: usize,
    pub k: usize,
    pub method: Method,
    /// Sorted by strictly increasing model dimension.
    pub models: Vec<ModelEstimate>,
    pub aligned: bool,
    pub reference_model: Option<usize>,
}

impl EstimatorFamily {
    pub fn model_grid(&self) -> Vec<usize> {
        self.models.iter().map(|m| m.dim).collect()
    }

    pub fn model(&self, dim: usize) -> Option<&ModelEstimate> {
        self.models.iter().find(|m| m.dim == dim)
    }

    pub fn validate(&self) -> Result<()> {
        if self.models.is_empty() {
            return Err(Error::invalid("family contains no models"));
        }
        if !self.models.windows(2).all(|w| w[0].dim < w[1].dim) {
            return Err(Error::invalid("model grid must be strictly increasing"));
        }
        for m in &self.models {
            if m.o.ncols() != self.k || m.o.nrows() != m.dim {
                return Err(Error::invalid(format!(
                    "model {} has coefficient shape {:?}, expected ({}, {})",
                    m.dim,
                    m.o.dim(),
                    m.dim,
                    self.k
                )));
            }
            if m.pi.len() != self.k || m.q.nrows() != self.k || m.q.ncols() != self.k {
                return Err(Error::invalid(format!(
                    "model {} has pi/Q shapes inconsistent with K = {}",
                    m.dim, self.k
                )));
            }
        }
        Ok(())
    }

    pub fn emission(&self, dim: usize, state: usize) -> Option<CoefficientDensity> {
        self.model(dim)
            .map(|m| CoefficientDensity::new(self.basis.kind, m.emission_coeffs(state)))
    }
}

/// Default alignment reference: the smallest grid model with `M >= 4K`,
/// falling back to the largest model.
pub fn default_reference_model(grid: &[usize], k: usize) -> usize {
    grid.iter()
        .copied()
        .find(|&m| m >= 4 * k)
        .unwrap_or_else(|| *grid.last().expect("non-empty grid"))
}

/// Visits every permutation of `0..k` (Heap's algorithm); the brute-force
/// backbone of label alignment and permutation-invariant metrics.
pub fn for_each_permutation(k: usize, mut visit: impl FnMut(&[usize])) {
    let mut perm: Vec<usize> = (0..k).collect();
    // Heap's algorithm, iterative
    let mut c = vec![0usize; k];
    visit(&perm);
    let mut i = 0;
    while i < k {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            visit(&perm);
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
}

/// Aligns hidden-state labels of every model to the reference model by the
/// permutation minimizing the worst per-state coefficient distance.
/// Idempotent; the reference model itself is unchanged. `pi` and `Q` are
/// relabelled consistently with the emission columns.
pub fn align_family(mut family: EstimatorFamily, reference: usize) -> Result<EstimatorFamily> {
    family.validate()?;
    if family.k > MAX_BRUTE_FORCE_STATES {
        return Err(Error::invalid(format!(
            "alignment enumerates K! permutations; K = {} exceeds {MAX_BRUTE_FORCE_STATES}",
            family.k
        )));
    }
    let Some(ref_model) = family.model(reference) else {
        return Err(Error::invalid(format!(
            "reference model {reference} not in the grid"
        )));
    };
    let k = family.k;
    let ref_cols: Vec<Vec<f64>> = (0..k).map(|s| ref_model.emission_coeffs(s)).collect();

    for model in &mut family.models {
        let cols: Vec<Vec<f64>> = (0..k).map(|s| model.o.column(s).to_vec()).collect();
        let mut best: Option<(f64, Vec<usize>)> = None;
        for_each_permutation(k, |tau| {
            let mut worst = 0.0_f64;
            for state in 0..k {
                worst = worst.max(coeff_distance(&cols[tau[state]], &ref_cols[state]));
            }
            let better = match &best {
                None => true,
                Some((score, best_tau)) => {
                    worst < *score - 1e-15 || ((worst - score).abs() <= 1e-15 && tau < best_tau.as_slice())
                }
            };
            if better {
                best = Some((worst, tau.to_vec()));
            }
        });
        let (_, tau) = best.expect("at least one permutation");
        apply_permutation(model, &tau);
    }
    family.aligned = true;
    family.reference_model = Some(reference);
    Ok(family)
}

fn apply_permutation(model: &mut ModelEstimate, tau: &[usize]) {
    let k = tau.len();
    if tau.iter().enumerate().all(|(i, &t)| i == t) {
        return;
    }
    let mut o = Array2::zeros(model.o.dim());
    let mut pi = Array1::zeros(k);
    let mut q = Array2::zeros((k, k));
    for i in 0..k {
        o.column_mut(i).assign(&model.o.column(tau[i]));
        pi[i] = model.pi[tau[i]];
        for j in 0..k {
            q[(i, j)] = model.q[(tau[i], tau[j])];
        }
    }
    model.o = o;
    model.pi = pi;
    model.q = q;
}

/// Penalty shape families: `sqrt(M ln(n)^4 / n)` for spectral estimators and
/// `sqrt(M ln(n) / n)` for least squares, both with unit constant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyShape {
    Spectral,
    Ls,
}

/// Evaluates the penalty shape; strictly increasing in `m`.
pub fn penalty_shape(kind: PenaltyShape, m: usize, n: usize) -> f64 {
    assert!(m >= 1, "model dimension must be at least 1");
    assert!(n >= 3, "sample size must be at least 3");
    let log_n = (n as f64).ln();
    let m = m as f64;
    let n = n as f64;
    match kind {
        PenaltyShape::Spectral => (m * log_n.powi(4) / n).sqrt(),
        PenaltyShape::Ls => (m * log_n / n).sqrt(),
    }
}

/// A penalty `sigma(M) = rho_k * shape(M, n)` with a possibly per-state
/// constant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Penalty {
    pub shape: PenaltyShape,
    /// One constant shared by all states, or one per state.
    pub rho: Vec<f64>,
    pub n: usize,
}

impl Penalty {
    pub fn common(shape: PenaltyShape, rho: f64, n: usize) -> Self {
        Penalty {
            shape,
            rho: vec![rho],
            n,
        }
    }

    pub fn per_state(shape: PenaltyShape, rho: Vec<f64>, n: usize) -> Self {
        Penalty { shape, rho, n }
    }

    pub fn rho_for(&self, state: usize) -> f64 {
        if self.rho.len() == 1 {
            self.rho[0]
        } else {
            self.rho[state]
        }
    }

    pub fn sigma(&self, state: usize, m: usize) -> f64 {
        self.rho_for(state) * penalty_shape(self.shape, m, self.n)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Standard,
    Pos,
    Max,
}

/// Selection outcome for a single hidden state.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StateSelection {
    pub m_hat: usize,
    pub a_curve: BTreeMap<usize, f64>,
    pub criterion_curve: BTreeMap<usize, f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SelectionResult {
    pub variant: Variant,
    pub per_state: Vec<StateSelection>,
    pub penalty: Penalty,
}

/// Pairwise coefficient distances between a state's estimators across all
/// model pairs, built once and shared by selection variants and penalty
/// calibration.
#[derive(Debug, Clone)]
pub struct DistanceCache {
    grid: Vec<usize>,
    k: usize,
    /// `per_state[k][(i, j)]` = distance between the state-k estimators of
    /// grid models i and j.
    per_state: Vec<Array2<f64>>,
}

impl DistanceCache {
    pub fn new(family: &EstimatorFamily) -> Result<Self> {
        if !family.aligned {
            return Err(Error::UnalignedFamily);
        }
        family.validate()?;
        let grid = family.model_grid();
        let g = grid.len();
        let mut per_state = vec![Array2::zeros((g, g)); family.k];
        for state in 0..family.k {
            let cols: Vec<Vec<f64>> = family
                .models
                .iter()
                .map(|m| m.emission_coeffs(state))
                .collect();
            for i in 0..g {
                for j in i + 1..g {
                    let d = coeff_distance(&cols[i], &cols[j]);
                    per_state[state][(i, j)] = d;
                    per_state[state][(j, i)] = d;
                }
            }
        }
        Ok(DistanceCache {
            grid,
            k: family.k,
            per_state,
        })
    }

    pub fn grid(&self) -> &[usize] {
        &self.grid
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn distance(&self, state: usize, i: usize, j: usize) -> f64 {
        self.per_state[state][(i, j)]
    }

    /// Largest pairwise distance across all states and model pairs.
    pub fn max_distance(&self) -> f64 {
        self.per_state
            .iter()
            .flat_map(|m| m.iter())
            .fold(0.0_f64, |acc, &d| acc.max(d))
    }

    /// Median of the strictly-upper-triangle distances pooled over states.
    pub fn median_distance(&self) -> f64 {
        let g = self.grid.len();
        let mut all: Vec<f64> = Vec::with_capacity(self.k * g * (g - 1) / 2);
        for m in &self.per_state {
            for i in 0..g {
                for j in i + 1..g {
                    all.push(m[(i, j)]);
                }
            }
        }
        if all.is_empty() {
            return 0.0;
        }
        all.sort_by(|a, b| a.partial_cmp(b).unwrap());
        all[all.len() / 2]
    }

    /// Bias-proxy curve for one state: each model is compared against every
    /// larger model, discounting the larger model's penalty. The comparison
    /// against models at most as large contributes `-sigma(M_min)` in the
    /// standard variant and 0 in the positive-part variant.
    pub fn compute_a(
        &self,
        state: usize,
        sigma: &dyn Fn(usize) -> f64,
        variant: Variant,
    ) -> BTreeMap<usize, f64> {
        let g = self.grid.len();
        let mut out = BTreeMap::new();
        for i in 0..g {
            let a = match variant {
                Variant::Standard => {
                    let mut sup = -sigma(self.grid[0]);
                    for j in i + 1..g {
                        sup = sup.max(self.distance(state, i, j) - sigma(self.grid[j]));
                    }
                    sup
                }
                Variant::Pos => {
                    let mut sup = 0.0_f64;
                    for j in i..g {
                        sup = sup.max(self.distance(state, i, j) - sigma(self.grid[j]));
                    }
                    sup.max(0.0)
                }
                Variant::Max => {
                    // MAX variant has no bias proxy of its own; report the
                    // distance to the largest model.
                    self.distance(state, i, g - 1)
                }
            };
            out.insert(self.grid[i], a);
        }
        out
    }

    /// Runs the selection rule for every state; ties in the argmin break
    /// toward the smallest model.
    pub fn select(&self, penalty: &Penalty, variant: Variant) -> SelectionResult {
        let per_state = (0..self.k)
            .map(|state| {
                let sigma = |m: usize| penalty.sigma(state, m);
                let a_curve = self.compute_a(state, &sigma, variant);
                let mut criterion_curve = BTreeMap::new();
                for (&m, &a) in &a_curve {
                    let crit = match variant {
                        Variant::Standard | Variant::Pos => a + 2.0 * sigma(m),
                        Variant::Max => a + sigma(m),
                    };
                    criterion_curve.insert(m, crit);
                }
                let mut m_hat = self.grid[0];
                let mut best = f64::INFINITY;
                for (&m, &c) in &criterion_curve {
                    if c < best {
                        best = c;
                        m_hat = m;
                    }
                }
                StateSelection {
                    m_hat,
                    a_curve,
                    criterion_curve,
                }
            })
            .collect();
        SelectionResult {
            variant,
            per_state,
            penalty: penalty.clone(),
        }
    }
}

/// Bias-proxy curve for state `k` (builds a fresh distance cache; use
/// [`DistanceCache`] directly to share it across calls).
pub fn compute_a(
    family: &EstimatorFamily,
    state: usize,
    sigma: &dyn Fn(usize) -> f64,
    variant: Variant,
) -> Result<BTreeMap<usize, f64>> {
    if state >= family.k {
        return Err(Error::invalid(format!(
            "state {state} out of range for K = {}",
            family.k
        )));
    }
    Ok(DistanceCache::new(family)?.compute_a(state, sigma, variant))
}

/// Per-state selection rule over an aligned family.
pub fn select_models(
    family: &EstimatorFamily,
    penalty: &Penalty,
    variant: Variant,
) -> Result<SelectionResult> {
    Ok(DistanceCache::new(family)?.select(penalty, variant))
}

/// Extracts the selected estimator of every state.
pub fn selected_estimates(
    family: &EstimatorFamily,
    result: &SelectionResult,
) -> Result<Vec<CoefficientDensity>> {
    if result.per_state.len() != family.k {
        return Err(Error::invalid(
            "selection result does not match the family's state count",
        ));
    }
    result
        .per_state
        .iter()
        .enumerate()
        .map(|(state, sel)| {
            family.emission(sel.m_hat, state).ok_or_else(|| {
                Error::invalid(format!("selected model {} not in family", sel.m_hat))
            })
        })
        .collect()
}
