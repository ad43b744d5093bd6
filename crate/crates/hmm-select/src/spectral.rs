//! Spectral estimation of HMM parameters from moment tensors.
//!
//! From the empirical tensors of observation triples the estimator proceeds
//! through: truncated SVD of the pair matrix, projection of the triple
//! tensor into the resulting K-dimensional coordinates, simultaneous
//! diagonalization of the projected observable matrices via randomized
//! rotations (keeping the attempt whose eigenvalue rows are best separated),
//! and recovery of the emission coefficient matrix, the stationary
//! distribution and the transition matrix, the last two through Euclidean
//! projections onto the probability simplex.

use ndarray::{s, Array1, Array2, ArrayView1};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::bases::{Basis, BasisKind, CoefficientDensity};
use crate::error::{Error, Result};
use crate::linalg;
use crate::moments::{accumulate_moments_chunked, MomentTensors};
use crate::selection::{EstimatorFamily, Method, ModelDiagnostics, ModelEstimate};

/// Relative eigenvalue imaginary-part tolerance above which a
/// diagonalization attempt is discarded.
const COMPLEX_TOL: f64 = 1e-8;
/// Relative singular-value floor for the projected lag-two matrix.
const CONDITION_RCOND: f64 = 1e-12;
/// Condition-number cap on eigenvector matrices of an attempt.
const EIGENVECTOR_COND_CAP: f64 = 1e12;
const CHUNK_LEN: usize = 1 << 16;

/// HMM parameters: initial/stationary distribution, transition matrix and
/// emission coefficient matrix (one column per hidden state).
#[derive(Debug, Clone, PartialEq)]
pub struct HmmParams {
    pub pi: Array1<f64>,
    pub q: Array2<f64>,
    /// `dim x K` emission coefficients over a basis.
    pub o: Array2<f64>,
}

impl HmmParams {
    pub fn k(&self) -> usize {
        self.pi.len()
    }

    /// Number of coefficient rows (the basis dimension of the emissions).
    pub fn dim(&self) -> usize {
        self.o.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.k();
        if self.q.nrows() != k || self.q.ncols() != k {
            return Err(Error::invalid(format!(
                "transition matrix shape {:?} does not match {k} states",
                self.q.dim()
            )));
        }
        if self.o.ncols() != k {
            return Err(Error::invalid(format!(
                "emission matrix has {} columns for {k} states",
                self.o.ncols()
            )));
        }
        if self.pi.iter().any(|x| !x.is_finite())
            || self.q.iter().any(|x| !x.is_finite())
            || self.o.iter().any(|x| !x.is_finite())
        {
            return Err(Error::Numerical("non-finite HMM parameter".into()));
        }
        Ok(())
    }

    /// Emission density of state `k` as a coefficient vector.
    pub fn emission(&self, k: usize, kind: BasisKind) -> CoefficientDensity {
        CoefficientDensity::new(kind, self.o.column(k).to_vec())
    }

    /// Relabels hidden states: state `k` of the result is state `tau[k]` of
    /// `self`.
    pub fn permuted(&self, tau: &[usize]) -> HmmParams {
        let k = self.k();
        assert_eq!(tau.len(), k);
        let mut pi = Array1::zeros(k);
        let mut q = Array2::zeros((k, k));
        let mut o = Array2::zeros((self.dim(), k));
        for i in 0..k {
            pi[i] = self.pi[tau[i]];
            for j in 0..k {
                q[(i, j)] = self.q[(tau[i], tau[j])];
            }
            o.column_mut(i).assign(&self.o.column(tau[i]));
        }
        HmmParams { pi, q, o }
    }
}

/// Output of [`spectral_estimate`].
#[derive(Debug, Clone)]
pub struct SpectralEstimate {
    pub params: HmmParams,
    /// Smallest eigenvalue-row gap of the winning attempt (`inf` when a
    /// single state makes the gap vacuous).
    pub separation_score: f64,
    /// Index of the winning randomized rotation.
    pub attempt_index: usize,
    /// Descending singular values of the pair matrix.
    pub singular_values: Vec<f64>,
}

struct AttemptOutcome {
    score: f64,
    /// `K x K` matrix of conjugated diagonals, row `k` holding the
    /// eigenvalues of the k-th observable matrix in a consistent order.
    lambda: Option<Array2<f64>>,
}

/// Euclidean projection of `v` onto the probability simplex
/// `{x >= 0, sum x = 1}`; idempotent and total on finite vectors.
pub fn simplex_project(v: &[f64]) -> Vec<f64> {
    project_weighted_simplex(v, None, 1.0)
}

/// Euclidean projection in the `w`-weighted norm onto
/// `{x >= 0, sum_i w_i x_i = total}`. `None` weights mean all ones.
/// Solves `x_i = max(v_i - lambda, 0)` with the threshold determined by the
/// active set, found by a sort over the entries.
fn project_weighted_simplex(v: &[f64], w: Option<&[f64]>, total: f64) -> Vec<f64> {
    let n = v.len();
    debug_assert!(v.iter().all(|x| x.is_finite()));
    let weight = |i: usize| w.map_or(1.0, |w| w[i]);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| v[j].partial_cmp(&v[i]).unwrap());

    let mut cum_wv = 0.0;
    let mut cum_w = 0.0;
    let mut lambda = f64::NEG_INFINITY;
    for (rank, &i) in order.iter().enumerate() {
        cum_wv += weight(i) * v[i];
        cum_w += weight(i);
        let candidate = (cum_wv - total) / cum_w;
        if v[i] - candidate > 0.0 {
            lambda = candidate;
        } else if rank > 0 {
            break;
        }
    }
    if !lambda.is_finite() {
        // all-equal or degenerate input: spread the mass uniformly
        lambda = (v.iter().zip(0..n).map(|(x, i)| weight(i) * x).sum::<f64>() - total)
            / (0..n).map(weight).sum::<f64>();
    }
    (0..n).map(|i| (v[i] - lambda).max(0.0)).collect()
}

/// Row-wise simplex projection onto the set of transition matrices.
pub fn transition_project(a: &Array2<f64>) -> Array2<f64> {
    let mut out = a.clone();
    for mut row in out.rows_mut() {
        let projected = simplex_project(&row.to_vec());
        row.assign(&ArrayView1::from(&projected));
    }
    out
}

/// Descending singular values of the pair matrix, used for hidden-state
/// order selection by elbow inspection.
pub fn singular_spectrum(tensors: &MomentTensors) -> Vec<f64> {
    if tensors.n.iter().all(|&x| x == 0.0) {
        return vec![0.0; tensors.edge_dim.min(tensors.center_dim)];
    }
    linalg::singular_values(tensors.n.view())
}

/// Haar-distributed random orthogonal matrix: modified Gram-Schmidt QR of a
/// standard Gaussian matrix (the positive-diagonal R makes Q uniform).
pub(crate) fn haar_orthogonal(k: usize, rng: &mut impl Rng) -> Array2<f64> {
    loop {
        let mut q = Array2::zeros((k, k));
        for x in q.iter_mut() {
            // Box-Muller from two uniforms
            let u1: f64 = rng.gen::<f64>().max(1e-300);
            let u2: f64 = rng.gen();
            *x = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
        }
        let mut ok = true;
        for j in 0..k {
            for i in 0..j {
                let proj = q.column(i).dot(&q.column(j));
                let qi = q.column(i).to_owned();
                q.column_mut(j).zip_mut_with(&qi, |x, &y| *x -= proj * y);
            }
            let norm = q.column(j).dot(&q.column(j)).sqrt();
            if norm < 1e-12 {
                ok = false;
                break;
            }
            q.column_mut(j).mapv_inplace(|x| x / norm);
        }
        if ok {
            return q;
        }
    }
}

/// Spectral estimator for `k` hidden states with `retries` randomized
/// diagonalization attempts. Deterministic given `(tensors, k, retries,
/// seed)`; attempt RNG substreams are derived from the seed and the attempt
/// index so scheduling cannot change the result.
pub fn spectral_estimate(
    tensors: &MomentTensors,
    k: usize,
    retries: usize,
    seed: u64,
) -> Result<SpectralEstimate> {
    spectral_estimate_stream(tensors, k, retries, seed, 0)
}

/// As [`spectral_estimate`] with an extra stream tag separating RNG streams
/// across models of a sweep.
pub(crate) fn spectral_estimate_stream(
    tensors: &MomentTensors,
    k: usize,
    retries: usize,
    seed: u64,
    stream_tag: u64,
) -> Result<SpectralEstimate> {
    let edge = tensors.edge_dim;
    let center = tensors.center_dim;
    if k == 0 || k > edge.min(center) {
        return Err(Error::invalid(format!(
            "state count {k} outside 1..=min({edge}, {center})"
        )));
    }
    if retries == 0 {
        return Err(Error::invalid("retry count must be at least 1"));
    }
    let finite = tensors.l.iter().all(|x| x.is_finite())
        && tensors.n.iter().all(|x| x.is_finite())
        && tensors.p.iter().all(|x| x.is_finite())
        && tensors.t.iter().all(|x| x.is_finite());
    if !finite {
        return Err(Error::Numerical("moment tensors contain non-finite entries".into()));
    }

    // top-K left/right singular spaces of the pair matrix
    let (u_full, sing, v_full) = linalg::svd(tensors.n.view());
    let u = u_full.slice(s![.., ..k]).to_owned(); // edge x K
    let v = v_full.slice(s![.., ..k]).to_owned(); // center x K

    // projected lag-two matrix and observable matrices
    let g = u.t().dot(&tensors.p).dot(&u); // K x K
    let g_svals = linalg::singular_values(g.view());
    let (g_max, g_min) = (g_svals[0], *g_svals.last().unwrap());
    if g_min <= CONDITION_RCOND * g_max {
        return Err(Error::IllConditionedMoments(format!(
            "projected lag-two matrix has singular values in [{g_min:.3e}, {g_max:.3e}]"
        )));
    }
    // b_flat row b = vec(B(b)) with B(b) = G^{-1} U^T T(.,b,.) U
    let mut b_flat = Array2::zeros((center, k * k));
    for b in 0..center {
        let projected = u.t().dot(&tensors.t_slice(b)).dot(&u);
        let solved = linalg::lu_solve(&g, projected.view());
        for i in 0..k {
            for j in 0..k {
                b_flat[(b, i * k + j)] = solved[(i, j)];
            }
        }
    }

    let attempts: Vec<AttemptOutcome> = (0..retries)
        .map(|attempt| {
            let theta = attempt_rotation(k, seed, stream_tag, attempt as u64);
            evaluate_attempt(&v, &theta, &b_flat, k)
        })
        .collect();

    let mut best: Option<(usize, f64)> = None;
    for (i, outcome) in attempts.iter().enumerate() {
        if outcome.lambda.is_some() {
            let better = match best {
                None => true,
                Some((_, score)) => outcome.score > score,
            };
            if better {
                best = Some((i, outcome.score));
            }
        }
    }
    let (attempt_index, separation_score) = match best {
        Some(pair) if pair.1 > 0.0 => pair,
        _ => return Err(Error::DiagonalizationFailure { attempts: retries }),
    };
    let lambda = attempts[attempt_index].lambda.clone().unwrap();
    let theta = attempt_rotation(k, seed, stream_tag, attempt_index as u64);

    // emission coefficients
    let o_hat = v.dot(&theta).dot(&lambda); // center x K

    // stationary distribution via the first-moment vector
    let r = edge.min(center);
    let u_r = u.slice(s![..r, ..]);
    let o_r = o_hat.slice(s![..r, ..]);
    let lead = u_r.t().dot(&o_r); // K x K
    let rhs = u
        .t()
        .dot(&tensors.l)
        .insert_axis(ndarray::Axis(1));
    let pi_raw = linalg::pinv_solve(&lead, rhs.view(), CONDITION_RCOND);
    let pi = Array1::from(simplex_project(pi_raw.column(0).as_slice().unwrap()));

    // transition matrix
    let left = {
        let mut m = lead.clone();
        for j in 0..k {
            let w = pi[j];
            m.column_mut(j).mapv_inplace(|x| x * w);
        }
        m
    };
    let mid = u.t().dot(&tensors.n).dot(&v); // K x K
    let right = o_hat.t().dot(&v); // K x K
    let step1 = linalg::pinv_solve(&left, mid.view(), CONDITION_RCOND);
    // X right^{-1} computed as right^T \ X^T transposed back
    let q_raw = linalg::pinv_solve(&right.t().to_owned(), step1.t(), CONDITION_RCOND)
        .t()
        .to_owned();
    let q = transition_project(&q_raw);

    Ok(SpectralEstimate {
        params: HmmParams { pi, q, o: o_hat },
        separation_score,
        attempt_index,
        singular_values: sing.to_vec(),
    })
}

fn attempt_rotation(k: usize, seed: u64, stream_tag: u64, attempt: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((stream_tag << 32) | (attempt + 1));
    haar_orthogonal(k, &mut rng)
}

fn evaluate_attempt(
    v: &Array2<f64>,
    theta: &Array2<f64>,
    b_flat: &Array2<f64>,
    k: usize,
) -> AttemptOutcome {
    let failed = AttemptOutcome {
        score: f64::NEG_INFINITY,
        lambda: None,
    };
    let w = v.dot(theta); // center x K
    let c_flat = w.t().dot(b_flat); // K x K^2, row k1 = vec(C(k1))
    let c_mat = |k1: usize| -> Array2<f64> {
        Array2::from_shape_fn((k, k), |(i, j)| c_flat[(k1, i * k + j)])
    };

    let c0 = c_mat(0);
    let Some((_, r_mat)) = linalg::eig_real(&c0, COMPLEX_TOL) else {
        return failed;
    };
    if linalg::condition_number(&r_mat) > EIGENVECTOR_COND_CAP {
        return failed;
    }

    let mut lambda = Array2::zeros((k, k));
    for k1 in 0..k {
        let conj = linalg::lu_solve(&r_mat, c_mat(k1).dot(&r_mat).view());
        for j in 0..k {
            lambda[(k1, j)] = conj[(j, j)];
        }
    }
    if lambda.iter().any(|x| !x.is_finite()) {
        return failed;
    }

    let mut score = f64::INFINITY;
    for k1 in 0..k {
        for a in 0..k {
            for b in a + 1..k {
                score = score.min((lambda[(k1, a)] - lambda[(k1, b)]).abs());
            }
        }
    }
    AttemptOutcome {
        score,
        lambda: Some(lambda),
    }
}

/// Per-attempt separation scores, exposed for invariant tests.
#[cfg(test)]
pub(crate) fn attempt_scores(
    tensors: &MomentTensors,
    k: usize,
    retries: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let (u_full, _, v_full) = linalg::svd(tensors.n.view());
    let u = u_full.slice(s![.., ..k]).to_owned();
    let v = v_full.slice(s![.., ..k]).to_owned();
    let g = u.t().dot(&tensors.p).dot(&u);
    let mut b_flat = Array2::zeros((tensors.center_dim, k * k));
    for b in 0..tensors.center_dim {
        let projected = u.t().dot(&tensors.t_slice(b)).dot(&u);
        let solved = linalg::lu_solve(&g, projected.view());
        for i in 0..k {
            for j in 0..k {
                b_flat[(b, i * k + j)] = solved[(i, j)];
            }
        }
    }
    Ok((0..retries)
        .map(|attempt| {
            let theta = attempt_rotation(k, seed, 0, attempt as u64);
            evaluate_attempt(&v, &theta, &b_flat, k).score
        })
        .collect())
}

/// Rule for the number of randomized diagonalization attempts per model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RetryRule {
    Fixed(usize),
    /// `ceil(2 ln n + 2 ln M)` attempts for model dimension `M` on `n`
    /// triples.
    LogScaled,
}

impl RetryRule {
    pub fn retries(&self, n_triples: usize, model_dim: usize) -> usize {
        match self {
            RetryRule::Fixed(r) => (*r).max(1),
            RetryRule::LogScaled => {
                let n = (n_triples.max(2)) as f64;
                let m = (model_dim.max(2)) as f64;
                (2.0 * n.ln() + 2.0 * m.ln()).ceil() as usize
            }
        }
    }
}

/// Configuration of a per-model spectral sweep.
#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub k: usize,
    /// Dimension of the first/third tensor slots (fixed across models).
    pub edge_dim: usize,
    /// Strictly increasing model dimensions for the middle slot.
    pub model_grid: Vec<usize>,
    pub retries: RetryRule,
    pub seed: u64,
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::invalid("state count must be positive"));
        }
        if self.model_grid.is_empty() {
            return Err(Error::invalid("model grid is empty"));
        }
        if !self.model_grid.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::invalid("model grid must be strictly increasing"));
        }
        if self.model_grid[0] < self.k || self.edge_dim < self.k {
            return Err(Error::invalid(format!(
                "every model dimension and the edge dimension must be at least K = {}",
                self.k
            )));
        }
        Ok(())
    }
}

/// Runs the spectral estimator for every model of the grid over one shared
/// moment accumulation pass. Models whose projected moments are numerically
/// singular are skipped; the returned family is unaligned.
pub fn spectral_family(
    observations: &[f64],
    basis: &Basis,
    cfg: &SweepConfig,
) -> Result<EstimatorFamily> {
    cfg.validate()?;
    let max_model = *cfg.model_grid.last().unwrap();
    let tensors = accumulate_moments_chunked(observations, basis, cfg.edge_dim, max_model, CHUNK_LEN)?;
    spectral_family_from_tensors(&tensors, basis, cfg)
}

/// Sweep over pre-accumulated tensors whose center dimension covers the
/// whole grid.
pub fn spectral_family_from_tensors(
    tensors: &MomentTensors,
    basis: &Basis,
    cfg: &SweepConfig,
) -> Result<EstimatorFamily> {
    cfg.validate()?;
    let max_model = *cfg.model_grid.last().unwrap();
    if tensors.center_dim < max_model {
        return Err(Error::invalid(format!(
            "tensors cover center dimension {} < largest model {max_model}",
            tensors.center_dim
        )));
    }
    let models: Vec<Option<ModelEstimate>> = cfg
        .model_grid
        .par_iter()
        .map(|&dim| {
            let restricted = tensors.restrict_center(dim).ok()?;
            let retries = cfg.retries.retries(tensors.n_triples, dim);
            let est =
                spectral_estimate_stream(&restricted, cfg.k, retries, cfg.seed, dim as u64).ok()?;
            Some(ModelEstimate {
                dim,
                pi: est.params.pi,
                q: est.params.q,
                o: est.params.o,
                diagnostics: ModelDiagnostics {
                    separation_score: Some(est.separation_score),
                    attempt_index: Some(est.attempt_index),
                    singular_values: Some(est.singular_values),
                },
            })
        })
        .collect();
    let models: Vec<ModelEstimate> = models.into_iter().flatten().collect();
    if models.is_empty() {
        return Err(Error::IllConditionedMoments(
            "no model in the grid produced a usable spectral estimate".into(),
        ));
    }
    Ok(EstimatorFamily {
        basis: *basis,
        n: tensors.n_triples,
        k: cfg.k,
        method: Method::Spectral,
        models,
        aligned: false,
        reference_model: None,
    })
}

/// Projects an expanded coefficient density onto the set of probability
/// densities: the function is evaluated on a uniform grid, the value vector
/// is projected onto `{values >= 0, mean = 1}` (for the atom-plus-trig
/// basis the atom participates with weight one and the continuous part with
/// cell weight), and the result is re-expanded over the original basis.
/// Re-expansion can leak a little negativity back in, so the
/// project/re-expand cycle repeats (alternating projections between the
/// discrete simplex and the coefficient span) until the value adjustment is
/// negligible.
pub fn project_density_to_simplex(
    f: &CoefficientDensity,
    grid_size: usize,
) -> Result<CoefficientDensity> {
    if grid_size < 128 {
        return Err(Error::invalid(format!(
            "grid_size {grid_size} below minimum 128"
        )));
    }
    let dim = f.dim();
    if dim == 0 {
        return Err(Error::invalid("empty coefficient vector"));
    }
    let basis = Basis::new(f.kind, dim)?;
    let cell = 1.0 / grid_size as f64;
    let midpoints: Vec<f64> = (0..grid_size).map(|i| (i as f64 + 0.5) * cell).collect();
    let atom_offset = match f.kind {
        BasisKind::Trig => 0,
        BasisKind::DiracTrig => 1,
    };
    let weights = {
        let mut w = Vec::with_capacity(atom_offset + grid_size);
        if atom_offset == 1 {
            w.push(1.0);
        }
        w.extend(std::iter::repeat(cell).take(grid_size));
        w
    };
    // basis rows over the continuous grid, shared across rounds
    let mut phi_rows = vec![vec![0.0; dim]; grid_size];
    for (row, &x) in phi_rows.iter_mut().zip(&midpoints) {
        basis.evaluate_into(x, row);
    }

    let mut current = f.clone();
    for _ in 0..4096 {
        let mut values = Vec::with_capacity(atom_offset + grid_size);
        if atom_offset == 1 {
            values.push(current.coeffs[0]);
        }
        for row in &phi_rows {
            values.push(
                current
                    .coeffs
                    .iter()
                    .zip(row)
                    .map(|(c, p)| c * p)
                    .sum::<f64>(),
            );
        }
        let projected = project_weighted_simplex(&values, Some(&weights), 1.0);
        let adjustment: f64 = projected
            .iter()
            .zip(&values)
            .zip(&weights)
            .map(|((p, v), w)| w * (p - v) * (p - v))
            .sum::<f64>()
            .sqrt();

        let mut coeffs = vec![0.0; dim];
        if atom_offset == 1 {
            coeffs[0] = projected[0];
        }
        for (row, &v) in phi_rows.iter().zip(&projected[atom_offset..]) {
            for (c, p) in coeffs[atom_offset..].iter_mut().zip(&row[atom_offset..]) {
                *c += cell * v * p;
            }
        }
        current = CoefficientDensity::new(f.kind, coeffs);
        if adjustment < 1e-10 {
            break;
        }
    }
    Ok(current)
}
