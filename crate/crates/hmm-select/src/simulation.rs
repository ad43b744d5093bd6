//! Ground-truth HMM sampling, benchmark emission densities, error metrics
//! and convergence-rate regression.
//!
//! The benchmark chain has three states with transition matrix rows
//! `(0.7, 0.1, 0.2)`, `(0.08, 0.8, 0.12)`, `(0.15, 0.15, 0.7)` and
//! emissions Uniform, symmetrized Beta(3, 1.6) (a half/half mixture of
//! `(2/3) X` and `1 - (1/3) X'`), and Beta(3, 7).

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::function::beta::{beta_reg, ln_beta};

use crate::bases::{project_true_density, Basis};
use crate::error::{Error, Result};
use crate::linalg;
use crate::quad;
use crate::selection::{for_each_permutation, EstimatorFamily, SelectionResult};
use crate::spectral::HmmParams;

/// Quadrature node count for ground-truth integrals; a multiple of 3 keeps
/// the benchmark mixture's kink at 2/3 on a panel boundary.
pub const TRUTH_QUADRATURE_POINTS: usize = 12288;

const INVERSE_CDF_CELLS: usize = 1 << 16;
const NULL_SPACE_TOL: f64 = 1e-10;

/// Named analytic emission densities on `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case", tag = "name")]
pub enum EmissionKind {
    Uniform,
    /// `Beta(alpha, beta)` density.
    Beta { alpha: f64, beta: f64 },
    /// Equal-weight mixture of `(2/3) X` and `1 - (1/3) X'` with `X, X'`
    /// i.i.d. `Beta(alpha, beta)`; supported on `[0, 1]` with a kink at 2/3.
    SymBeta { alpha: f64, beta: f64 },
}

impl EmissionKind {
    pub fn density(&self, y: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&y) {
            return Err(Error::Domain(format!("point {y} outside [0, 1]")));
        }
        Ok(match *self {
            EmissionKind::Uniform => 1.0,
            EmissionKind::Beta { alpha, beta } => beta_pdf(alpha, beta, y),
            EmissionKind::SymBeta { alpha, beta } => {
                let mut v = 0.0;
                if y <= 2.0 / 3.0 {
                    v += 0.5 * 1.5 * beta_pdf(alpha, beta, 1.5 * y);
                }
                if y >= 2.0 / 3.0 {
                    v += 0.5 * 3.0 * beta_pdf(alpha, beta, 3.0 * (1.0 - y));
                }
                v
            }
        })
    }

    pub fn cdf(&self, y: f64) -> f64 {
        let y = y.clamp(0.0, 1.0);
        match *self {
            EmissionKind::Uniform => y,
            EmissionKind::Beta { alpha, beta } => beta_reg(alpha, beta, y),
            EmissionKind::SymBeta { alpha, beta } => {
                if y <= 2.0 / 3.0 {
                    0.5 * beta_reg(alpha, beta, (1.5 * y).min(1.0))
                } else {
                    1.0 - 0.5 * beta_reg(alpha, beta, 3.0 * (1.0 - y))
                }
            }
        }
    }
}

fn beta_pdf(alpha: f64, beta: f64, x: f64) -> f64 {
    if !(0.0..=1.0).contains(&x) {
        return 0.0;
    }
    if x == 0.0 {
        return if alpha < 1.0 {
            f64::INFINITY
        } else if alpha == 1.0 {
            (-ln_beta(alpha, beta)).exp()
        } else {
            0.0
        };
    }
    if x == 1.0 {
        return if beta < 1.0 {
            f64::INFINITY
        } else if beta == 1.0 {
            (-ln_beta(alpha, beta)).exp()
        } else {
            0.0
        };
    }
    ((alpha - 1.0) * x.ln() + (beta - 1.0) * (1.0 - x).ln() - ln_beta(alpha, beta)).exp()
}

/// The shorthand by which benchmark states are identified in reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BenchmarkState {
    Uniform,
    SymBeta,
    Beta,
}

/// Evaluates a named density at a point.
pub fn true_density(kind: EmissionKind, y: f64) -> Result<f64> {
    kind.density(y)
}

/// Monotone cubic Hermite interpolant of a CDF on a uniform grid, with the
/// exact density as node slopes; inverted by bisection-safeguarded Newton.
#[derive(Debug, Clone)]
struct InverseCdfTable {
    values: Vec<f64>,
    slopes: Vec<f64>,
    cell: f64,
}

impl InverseCdfTable {
    fn build(kind: EmissionKind) -> Self {
        let n = INVERSE_CDF_CELLS;
        let cell = 1.0 / n as f64;
        let mut values = Vec::with_capacity(n + 1);
        let mut slopes = Vec::with_capacity(n + 1);
        for i in 0..=n {
            let x = i as f64 * cell;
            values.push(kind.cdf(x));
            let pdf = kind.density(x).unwrap_or(0.0);
            slopes.push(if pdf.is_finite() { pdf } else { 0.0 });
        }
        values[0] = 0.0;
        values[n] = 1.0;
        InverseCdfTable {
            values,
            slopes,
            cell,
        }
    }

    fn spline(&self, cell_idx: usize, t: f64) -> f64 {
        let h = self.cell;
        let (c0, c1) = (self.values[cell_idx], self.values[cell_idx + 1]);
        let (m0, m1) = (self.slopes[cell_idx] * h, self.slopes[cell_idx + 1] * h);
        let t2 = t * t;
        let t3 = t2 * t;
        (2.0 * t3 - 3.0 * t2 + 1.0) * c0
            + (t3 - 2.0 * t2 + t) * m0
            + (-2.0 * t3 + 3.0 * t2) * c1
            + (t3 - t2) * m1
    }

    fn invert(&self, u: f64) -> f64 {
        let n = self.values.len() - 1;
        // largest cell start with value <= u
        let idx = match self
            .values
            .binary_search_by(|v| v.partial_cmp(&u).unwrap())
        {
            Ok(i) => i.min(n - 1),
            Err(i) => i.saturating_sub(1).min(n - 1),
        };
        let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
        let mut t = 0.5;
        for _ in 0..40 {
            let f = self.spline(idx, t) - u;
            if f > 0.0 {
                hi = t;
            } else {
                lo = t;
            }
            // Newton step when it stays inside the bracket
            let h = self.cell;
            let d = {
                let t2 = t * t;
                let (c0, c1) = (self.values[idx], self.values[idx + 1]);
                let (m0, m1) = (self.slopes[idx] * h, self.slopes[idx + 1] * h);
                (6.0 * t2 - 6.0 * t) * c0
                    + (3.0 * t2 - 4.0 * t + 1.0) * m0
                    + (-6.0 * t2 + 6.0 * t) * c1
                    + (3.0 * t2 - 2.0 * t) * m1
            };
            let newton = if d > 0.0 { t - f / d } else { f64::NAN };
            t = if newton.is_finite() && newton > lo && newton < hi {
                newton
            } else {
                0.5 * (lo + hi)
            };
            if hi - lo < 1e-14 {
                break;
            }
        }
        ((idx as f64) + t) * self.cell
    }
}

#[derive(Debug, Clone)]
enum Sampler {
    Uniform,
    Beta(InverseCdfTable),
    SymBeta(InverseCdfTable),
}

impl Sampler {
    fn build(kind: EmissionKind) -> Self {
        match kind {
            EmissionKind::Uniform => Sampler::Uniform,
            EmissionKind::Beta { alpha, beta } => {
                Sampler::Beta(InverseCdfTable::build(EmissionKind::Beta { alpha, beta }))
            }
            EmissionKind::SymBeta { alpha, beta } => {
                // table for the underlying Beta(alpha, beta) draw
                Sampler::SymBeta(InverseCdfTable::build(EmissionKind::Beta { alpha, beta }))
            }
        }
    }

    fn draw(&self, rng: &mut impl Rng) -> f64 {
        match self {
            Sampler::Uniform => rng.gen::<f64>(),
            Sampler::Beta(table) => table.invert(rng.gen::<f64>()),
            Sampler::SymBeta(table) => {
                let left = rng.gen::<f64>() < 0.5;
                let x = table.invert(rng.gen::<f64>());
                if left {
                    x * 2.0 / 3.0
                } else {
                    1.0 - x / 3.0
                }
            }
        }
    }
}

/// Ground-truth HMM with analytic emission densities.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub q: Array2<f64>,
    pub pi: Array1<f64>,
    pub emissions: Vec<EmissionKind>,
    samplers: Vec<Sampler>,
}

impl GroundTruth {
    pub fn new(q: Array2<f64>, emissions: Vec<EmissionKind>) -> Result<Self> {
        let pi = stationary_distribution(&q)?;
        if emissions.len() != pi.len() {
            return Err(Error::invalid(format!(
                "{} emissions for {} states",
                emissions.len(),
                pi.len()
            )));
        }
        let samplers = emissions.iter().map(|&e| Sampler::build(e)).collect();
        Ok(GroundTruth {
            q,
            pi,
            emissions,
            samplers,
        })
    }

    /// The three-state benchmark chain used throughout the test campaigns.
    pub fn benchmark() -> Self {
        let q = ndarray::array![
            [0.70, 0.10, 0.20],
            [0.08, 0.80, 0.12],
            [0.15, 0.15, 0.70]
        ];
        GroundTruth::new(
            q,
            vec![
                EmissionKind::Uniform,
                EmissionKind::SymBeta {
                    alpha: 3.0,
                    beta: 1.6,
                },
                EmissionKind::Beta {
                    alpha: 3.0,
                    beta: 7.0,
                },
            ],
        )
        .expect("benchmark parameters are valid")
    }

    pub fn k(&self) -> usize {
        self.pi.len()
    }

    /// Index of a named benchmark state.
    pub fn state_of(&self, which: BenchmarkState) -> Option<usize> {
        self.emissions.iter().position(|e| match (which, e) {
            (BenchmarkState::Uniform, EmissionKind::Uniform) => true,
            (BenchmarkState::Beta, EmissionKind::Beta { .. }) => true,
            (BenchmarkState::SymBeta, EmissionKind::SymBeta { .. }) => true,
            _ => false,
        })
    }

    pub fn density(&self, state: usize, y: f64) -> Result<f64> {
        self.emissions[state].density(y)
    }

    /// Samples `n + 2` observations (enough for `n` triples): the hidden
    /// chain starts from the stationary distribution and each observation is
    /// drawn from its state's emission by inverse CDF. Reproducible per
    /// seed.
    pub fn sample(&self, n: usize, seed: u64) -> Result<Vec<f64>> {
        Ok(self.sample_with_states(n, seed)?.0)
    }

    /// As [`GroundTruth::sample`], also returning the hidden path.
    pub fn sample_with_states(&self, n: usize, seed: u64) -> Result<(Vec<f64>, Vec<usize>)> {
        if n == 0 {
            return Err(Error::invalid("sample length must be positive"));
        }
        let len = n + 2;
        let k = self.k();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut states = Vec::with_capacity(len);
        let mut obs = Vec::with_capacity(len);

        let draw_state = |cumulative: &[f64], u: f64| -> usize {
            cumulative
                .iter()
                .position(|&c| u < c)
                .unwrap_or(cumulative.len() - 1)
        };
        let cum_pi: Vec<f64> = self
            .pi
            .iter()
            .scan(0.0, |acc, &p| {
                *acc += p;
                Some(*acc)
            })
            .collect();
        let cum_q: Vec<Vec<f64>> = (0..k)
            .map(|i| {
                self.q
                    .row(i)
                    .iter()
                    .scan(0.0, |acc, &p| {
                        *acc += p;
                        Some(*acc)
                    })
                    .collect()
            })
            .collect();

        let mut state = draw_state(&cum_pi, rng.gen::<f64>());
        for _ in 0..len {
            obs.push(self.samplers[state].draw(&mut rng));
            states.push(state);
            state = draw_state(&cum_q[state], rng.gen::<f64>());
        }
        Ok((obs, states))
    }

    /// Projection coefficients of every emission density: a `dim x K`
    /// matrix over the first `dim` basis functions.
    pub fn projection_matrix(
        &self,
        basis: &Basis,
        dim: usize,
        quadrature_points: usize,
    ) -> Result<Array2<f64>> {
        let k = self.k();
        let mut o = Array2::zeros((dim, k));
        for state in 0..k {
            let kind = self.emissions[state];
            let proj = project_true_density(
                basis,
                dim,
                |y| kind.density(y).unwrap_or(f64::NAN),
                quadrature_points,
            )?;
            for (r, &c) in proj.coeffs.iter().enumerate() {
                o[(r, state)] = c;
            }
        }
        Ok(o)
    }

    /// Ground-truth parameters projected on the first `dim` basis functions.
    pub fn params(&self, basis: &Basis, dim: usize, quadrature_points: usize) -> Result<HmmParams> {
        Ok(HmmParams {
            pi: self.pi.clone(),
            q: self.q.clone(),
            o: self.projection_matrix(basis, dim, quadrature_points)?,
        })
    }
}

/// Unique stationary distribution of a transition matrix, found as the
/// one-dimensional null space of `Q^T - I`; errors when the null space is
/// not one-dimensional or touches the boundary of the simplex.
pub fn stationary_distribution(q: &Array2<f64>) -> Result<Array1<f64>> {
    let k = q.nrows();
    if k == 0 || q.ncols() != k {
        return Err(Error::invalid("transition matrix must be square"));
    }
    for (i, row) in q.rows().into_iter().enumerate() {
        if row.iter().any(|&x| x < -1e-12 || !x.is_finite()) {
            return Err(Error::invalid(format!("row {i} has negative entries")));
        }
        if (row.sum() - 1.0).abs() > 1e-8 {
            return Err(Error::invalid(format!("row {i} does not sum to 1")));
        }
    }
    let mut a = q.t().to_owned();
    for i in 0..k {
        a[(i, i)] -= 1.0;
    }
    let (_, s, v) = linalg::svd(a.view());
    let null_count = s.iter().filter(|&&x| x < NULL_SPACE_TOL).count();
    if null_count != 1 {
        return Err(Error::NoUniqueStationary(format!(
            "null space of Q^T - I has dimension {null_count}"
        )));
    }
    let mut pi = v.column(k - 1).to_owned();
    let total = pi.sum();
    if total.abs() < 1e-12 {
        return Err(Error::NoUniqueStationary(
            "null vector has zero mass".into(),
        ));
    }
    pi.mapv_inplace(|x| x / total);
    if pi.iter().any(|&x| x <= 1e-12) {
        return Err(Error::NoUniqueStationary(
            "stationary distribution is not strictly positive".into(),
        ));
    }
    Ok(pi)
}

/// Permutation-minimized distance between two HMM parameter triples:
/// the square root of the summed squared gaps in `pi`, `Q` (Frobenius) and
/// per-state emission coefficients, minimized over relabelings.
pub fn d_perm(a: &HmmParams, b: &HmmParams) -> Result<f64> {
    let k = a.k();
    if b.k() != k {
        return Err(Error::invalid(format!(
            "state count mismatch: {k} vs {}",
            b.k()
        )));
    }
    if k > 8 {
        return Err(Error::invalid("d_perm enumerates K! permutations; K > 8"));
    }
    let mut best = f64::INFINITY;
    for_each_permutation(k, |tau| {
        // tau maps positions of `a` to states of `b`
        let mut total = 0.0;
        for i in 0..k {
            let dp = a.pi[i] - b.pi[tau[i]];
            total += dp * dp;
            for j in 0..k {
                let dq = a.q[(i, j)] - b.q[(tau[i], tau[j])];
                total += dq * dq;
            }
            let ca = a.o.column(i);
            let cb = b.o.column(tau[i]);
            total += crate::bases::coeff_distance(
                ca.as_slice().unwrap_or(&ca.to_vec()),
                cb.as_slice().unwrap_or(&cb.to_vec()),
            )
            .powi(2);
        }
        best = best.min(total);
    });
    Ok(best.sqrt())
}

/// Quadrature ground truth for error computations: projection coefficients
/// at the largest model plus the exact density norms, from which biases and
/// estimator errors at any smaller dimension follow.
#[derive(Debug, Clone)]
pub struct TruthProjections {
    pub basis: Basis,
    pub max_dim: usize,
    /// `max_dim x K` projection coefficients.
    pub coeffs: Array2<f64>,
    /// Squared L2 norms of the true densities.
    pub norms_sq: Vec<f64>,
}

impl TruthProjections {
    pub fn new(truth: &GroundTruth, basis: &Basis, max_dim: usize) -> Result<Self> {
        let coeffs = truth.projection_matrix(basis, max_dim, TRUTH_QUADRATURE_POINTS)?;
        let rule = quad::composite_gauss_legendre(TRUTH_QUADRATURE_POINTS);
        let norms_sq = (0..truth.k())
            .map(|state| {
                rule.integrate(|y| {
                    let v = truth.density(state, y).unwrap_or(f64::NAN);
                    v * v
                })
            })
            .collect();
        Ok(TruthProjections {
            basis: *basis,
            max_dim,
            coeffs,
            norms_sq,
        })
    }

    /// Approximation error `|| f*_k - f*^(m)_k ||` of the model of
    /// dimension `m`.
    pub fn bias(&self, state: usize, dim: usize) -> f64 {
        let dim = dim.min(self.max_dim);
        let head: f64 = (0..dim).map(|r| self.coeffs[(r, state)].powi(2)).sum();
        (self.norms_sq[state] - head).max(0.0).sqrt()
    }

    /// Full error `|| fhat - f*_k ||` of a coefficient estimate.
    pub fn estimate_error(&self, state: usize, coeffs: &[f64]) -> f64 {
        assert!(
            coeffs.len() <= self.max_dim,
            "estimate dimension {} exceeds cached projections {}",
            coeffs.len(),
            self.max_dim
        );
        let mut in_model = 0.0;
        for (r, &c) in coeffs.iter().enumerate() {
            let d = c - self.coeffs[(r, state)];
            in_model += d * d;
        }
        let tail = self.bias(state, coeffs.len()).powi(2);
        (in_model + tail).sqrt()
    }

    /// Variance part `|| fhat - f*^(m)_k ||` within the model.
    pub fn variance_error(&self, state: usize, coeffs: &[f64]) -> f64 {
        let mut in_model = 0.0;
        for (r, &c) in coeffs.iter().enumerate() {
            let d = c - self.coeffs[(r, state)];
            in_model += d * d;
        }
        in_model.sqrt()
    }
}

/// Per-state error summary of a family (and optionally of selected models).
#[derive(Debug, Clone, PartialEq)]
pub struct StateErrorReport {
    /// Column index within the (internally aligned) family.
    pub state: usize,
    /// Ground-truth state this column estimates, found by the best label
    /// matching at the family's reference model.
    pub truth_state: usize,
    /// Error of the selected estimator, when a selection is supplied.
    pub l2_error: Option<f64>,
    /// Smallest error over the family's grid.
    pub oracle_error: f64,
    pub oracle_m: usize,
}

/// Matches the family's column labels to ground-truth states: the
/// permutation minimizing the worst per-state error at the reference model
/// (hidden states are only identified up to relabelling).
pub fn match_labels(family: &EstimatorFamily, truth: &TruthProjections) -> Result<Vec<usize>> {
    if !family.aligned {
        return Err(Error::UnalignedFamily);
    }
    let anchor_dim = family
        .reference_model
        .unwrap_or_else(|| *family.model_grid().last().unwrap());
    let anchor = family
        .model(anchor_dim)
        .ok_or_else(|| Error::invalid(format!("reference model {anchor_dim} missing")))?;
    let k = family.k;
    let mut best = f64::INFINITY;
    let mut label: Vec<usize> = (0..k).collect();
    for_each_permutation(k, |tau| {
        let worst = (0..k)
            .map(|s| truth.estimate_error(tau[s], &anchor.emission_coeffs(s)))
            .fold(0.0_f64, f64::max);
        if worst < best {
            best = worst;
            label = tau.to_vec();
        }
    });
    Ok(label)
}

/// Errors of the selected estimators against quadrature ground truth plus
/// the per-state oracle over the family grid.
pub fn error_report(
    family: &EstimatorFamily,
    selection: Option<&SelectionResult>,
    truth: &TruthProjections,
) -> Result<Vec<StateErrorReport>> {
    family.validate()?;
    let label = match_labels(family, truth)?;
    let mut out = Vec::with_capacity(family.k);
    for state in 0..family.k {
        let truth_state = label[state];
        let mut oracle_error = f64::INFINITY;
        let mut oracle_m = family.models[0].dim;
        for model in &family.models {
            let err = truth.estimate_error(truth_state, &model.emission_coeffs(state));
            if err < oracle_error {
                oracle_error = err;
                oracle_m = model.dim;
            }
        }
        let l2_error = match selection {
            Some(sel) => {
                let m_hat = sel.per_state[state].m_hat;
                let model = family
                    .model(m_hat)
                    .ok_or_else(|| Error::invalid(format!("selected model {m_hat} missing")))?;
                Some(truth.estimate_error(truth_state, &model.emission_coeffs(state)))
            }
            None => None,
        };
        out.push(StateErrorReport {
            state,
            truth_state,
            l2_error,
            oracle_error,
            oracle_m,
        });
    }
    Ok(out)
}

/// Ordinary least-squares fit of `log error` against `log n`.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RateFit {
    pub slope: f64,
    pub stderr: f64,
    /// The `(log n, log error)` points entering the regression.
    pub points: Vec<(f64, f64)>,
}

/// Convergence-rate regression over `(n, error)` points with `n >= n_min`;
/// needs at least three admissible points.
pub fn rate_regression(points: &[(f64, f64)], n_min: f64) -> Result<RateFit> {
    let admissible: Vec<(f64, f64)> = points
        .iter()
        .filter(|(n, _)| *n >= n_min)
        .map(|&(n, e)| (n, e))
        .collect();
    if admissible.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "{} points with n >= {n_min}, need 3",
            admissible.len()
        )));
    }
    if admissible.iter().any(|&(n, e)| n <= 0.0 || e <= 0.0) {
        return Err(Error::Numerical(
            "rate regression requires positive sample sizes and errors".into(),
        ));
    }
    let logs: Vec<(f64, f64)> = admissible.iter().map(|&(n, e)| (n.ln(), e.ln())).collect();
    let n = logs.len() as f64;
    let mean_x = logs.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_y = logs.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = logs.iter().map(|p| (p.0 - mean_x).powi(2)).sum();
    if sxx <= 0.0 {
        return Err(Error::InsufficientData(
            "all points share the same sample size".into(),
        ));
    }
    let sxy: f64 = logs
        .iter()
        .map(|p| (p.0 - mean_x) * (p.1 - mean_y))
        .sum();
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;
    let ssr: f64 = logs
        .iter()
        .map(|p| (p.1 - intercept - slope * p.0).powi(2))
        .sum();
    let stderr = if logs.len() > 2 {
        (ssr / (n - 2.0) / sxx).sqrt()
    } else {
        0.0
    };
    Ok(RateFit {
        slope,
        stderr,
        points: logs,
    })
}

/// Configuration of a benchmark campaign: the full estimation/selection
/// pipeline per `(n, replication)` cell. Defaults mirror the reference
/// configuration (edge dimension 20, models 3..=300, log-scaled retries).
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct CampaignConfig {
    pub n_grid: Vec<usize>,
    pub reps: usize,
    #[serde(default = "default_edge_dim")]
    pub edge_dim: usize,
    #[serde(default = "default_m_min")]
    pub m_min: usize,
    #[serde(default = "default_m_max")]
    pub m_max: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_variant")]
    pub variant: crate::selection::Variant,
    #[serde(default = "default_calibration")]
    pub calibration: crate::calibration::CalibrationMode,
}

fn default_edge_dim() -> usize {
    20
}
fn default_m_min() -> usize {
    3
}
fn default_m_max() -> usize {
    300
}
fn default_variant() -> crate::selection::Variant {
    crate::selection::Variant::Standard
}
fn default_calibration() -> crate::calibration::CalibrationMode {
    crate::calibration::CalibrationMode::EachJump
}

/// Runs the spectral pipeline for every `(n, rep)` cell of the campaign:
/// simulate, estimate the family, align, calibrate, select, and score
/// against quadrature ground truth. Returns one record per (cell, state),
/// with states indexed by ground truth. Replications run in parallel with
/// per-cell derived seeds.
pub fn run_campaign(
    truth: &GroundTruth,
    basis: &Basis,
    cfg: &CampaignConfig,
) -> Result<Vec<crate::schema::ResultRecord>> {
    use rayon::prelude::*;
    if cfg.n_grid.is_empty() || cfg.reps == 0 {
        return Err(Error::invalid("campaign needs sample sizes and replications"));
    }
    let projections = TruthProjections::new(truth, basis, cfg.m_max)?;
    let variant_name = serde_json::to_value(cfg.variant)
        .ok()
        .and_then(|v| v.as_str().map(str::to_owned))
        .unwrap_or_default();
    let calibration_name = serde_json::to_value(cfg.calibration)
        .ok()
        .and_then(|v| v.as_str().map(str::to_owned))
        .unwrap_or_default();

    let cells: Vec<(usize, usize)> = cfg
        .n_grid
        .iter()
        .flat_map(|&n| (0..cfg.reps).map(move |rep| (n, rep)))
        .collect();
    let records: Vec<Vec<crate::schema::ResultRecord>> = cells
        .par_iter()
        .map(|&(n, rep)| -> Result<Vec<crate::schema::ResultRecord>> {
            let seed = cfg
                .seed
                .wrapping_add((n as u64).wrapping_mul(1_000_003))
                .wrapping_add(rep as u64 * 97);
            let obs = truth.sample(n, seed)?;
            let sweep = crate::spectral::SweepConfig {
                k: truth.k(),
                edge_dim: cfg.edge_dim,
                model_grid: (cfg.m_min..=cfg.m_max).collect(),
                retries: crate::spectral::RetryRule::LogScaled,
                seed,
            };
            let family = crate::spectral::spectral_family(&obs, basis, &sweep)?;
            let reference =
                crate::selection::default_reference_model(&family.model_grid(), truth.k());
            let family = crate::selection::align_family(family, reference)?;
            let cache = crate::selection::DistanceCache::new(&family)?;
            let shape = crate::selection::PenaltyShape::Spectral;
            let rho_grid = crate::calibration::default_rho_grid(&cache, shape, family.n);
            let cal = crate::calibration::calibrate_cached(
                &cache,
                family.n,
                shape,
                cfg.calibration,
                &rho_grid,
            )?;
            let selection = cache.select(&cal.penalty(family.n), cfg.variant);
            let report = error_report(&family, Some(&selection), &projections)?;
            Ok(report
                .iter()
                .map(|r| crate::schema::ResultRecord {
                    method: "spectral".into(),
                    variant: variant_name.clone(),
                    calibration: calibration_name.clone(),
                    n,
                    rep,
                    state: r.truth_state,
                    m_selected: selection.per_state[r.state].m_hat,
                    l2_error: r.l2_error.unwrap_or(f64::NAN),
                    oracle_error: r.oracle_error,
                    oracle_m: r.oracle_m,
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    Ok(records.into_iter().flatten().collect())
}

/// 60th percentile of the available sample sizes, the default regression
/// threshold.
pub fn default_n_min(ns: &[f64]) -> f64 {
    if ns.is_empty() {
        return 0.0;
    }
    let mut sorted = ns.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let idx = ((0.6 * (sorted.len() - 1) as f64).round() as usize).min(sorted.len() - 1);
    sorted[idx]
}
