//! Penalized least-squares estimation of HMM parameters by minimizing the
//! empirical contrast over one model.
//!
//! The contrast compares the candidate coordinate tensor of the
//! three-observation distribution against the empirical tensor in Frobenius
//! norm, dropping the candidate-independent constant. Minimization runs as
//! projected block-coordinate gradient descent with backtracking line
//! search, alternating the initial distribution, the transition matrix and
//! the emission coefficient blocks; the feasible set keeps distributions in
//! the simplex and emission columns normalized (unit integral) with a
//! bounded coefficient norm.

use ndarray::{Array1, Array2, Array3, ArrayView3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::bases::{Basis, BasisKind};
use crate::error::{Error, Result};
use crate::moments::{accumulate_moments_chunked, MomentTensors};
use crate::selection::{EstimatorFamily, Method, ModelDiagnostics, ModelEstimate};
use crate::spectral::{simplex_project, spectral_estimate, transition_project, HmmParams};

const CHUNK_LEN: usize = 1 << 16;
const MAX_BACKTRACKS: usize = 30;
const WARM_START_RETRIES: usize = 20;

/// One least-squares fitting problem: the empirical triple tensor of a
/// model together with the constraint description.
#[derive(Debug, Clone)]
pub struct LsProblem {
    /// `M x M x M` empirical tensor.
    pub t_full: Array3<f64>,
    pub k: usize,
    /// Euclidean bound on each emission coefficient column.
    pub coeff_norm_bound: f64,
    pub basis: Basis,
    pub n_triples: usize,
}

impl LsProblem {
    pub fn from_observations(
        observations: &[f64],
        basis: &Basis,
        dim: usize,
        k: usize,
        coeff_norm_bound: f64,
    ) -> Result<Self> {
        if coeff_norm_bound < 1.0 {
            return Err(Error::invalid("coefficient norm bound must be at least 1"));
        }
        if k == 0 || k > dim {
            return Err(Error::invalid(format!("state count {k} outside 1..={dim}")));
        }
        let tensors = accumulate_moments_chunked(observations, basis, dim, dim, CHUNK_LEN)?;
        Ok(LsProblem {
            t_full: tensors.t,
            k,
            coeff_norm_bound,
            basis: *basis,
            n_triples: tensors.n_triples,
        })
    }

    pub fn dim(&self) -> usize {
        self.t_full.shape()[0]
    }
}

/// Empirical `M x M x M` tensor of basis products over observation triples.
pub fn build_ls_tensor(observations: &[f64], basis: &Basis, dim: usize) -> Result<Array3<f64>> {
    Ok(accumulate_moments_chunked(observations, basis, dim, dim, CHUNK_LEN)?.t)
}

/// Coordinate tensor of the candidate parameters:
/// `C(., b, .) = O Diag[pi] Q Diag[O(b, .)] Q O^T` for every `b`.
pub fn candidate_tensor(pi: &Array1<f64>, q: &Array2<f64>, o: &Array2<f64>) -> Array3<f64> {
    let m = o.nrows();
    let k = o.ncols();
    let mut front = o.clone(); // O Diag[pi] Q, shape M x K
    for j in 0..k {
        let w = pi[j];
        front.column_mut(j).mapv_inplace(|x| x * w);
    }
    let front = front.dot(q);
    let back = q.dot(&o.t()); // K x M

    // Khatri-Rao product over the first two axes, then one GEMM
    let mut kr = Array2::zeros((m * m, k));
    for a in 0..m {
        for b in 0..m {
            for j in 0..k {
                kr[(a * m + b, j)] = front[(a, j)] * o[(b, j)];
            }
        }
    }
    let flat = kr.dot(&back); // (M*M) x M, entry ((a, b), c)
    Array3::from_shape_fn((m, m, m), |(a, b, c)| flat[(a * m + b, c)])
}

/// Empirical contrast `||C - T||_F^2 - ||T||_F^2`, a biased estimate of the
/// candidate's squared L2 loss whose bias does not depend on the candidate.
pub fn ls_criterion(
    pi: &Array1<f64>,
    q: &Array2<f64>,
    o: &Array2<f64>,
    t_emp: &Array3<f64>,
) -> f64 {
    let cand = candidate_tensor(pi, q, o);
    criterion_of_candidate(&cand, t_emp)
}

fn criterion_of_candidate(cand: &Array3<f64>, t_emp: &Array3<f64>) -> f64 {
    let mut residual = 0.0;
    let mut t_norm = 0.0;
    for (c, t) in cand.iter().zip(t_emp.iter()) {
        residual += (c - t) * (c - t);
        t_norm += t * t;
    }
    residual - t_norm
}

/// Options of the block-coordinate descent.
#[derive(Debug, Clone)]
pub struct LsOptions {
    pub max_iters: usize,
    /// Relative criterion-decrease tolerance per sweep.
    pub tol: f64,
    /// Random restarts around the warm start when the search stalls.
    pub restarts: usize,
    pub seed: u64,
}

impl Default for LsOptions {
    fn default() -> Self {
        LsOptions {
            max_iters: 5000,
            tol: 1e-9,
            restarts: 3,
            seed: 0,
        }
    }
}

/// Contract one axis of a rank-3 tensor with the columns of `o`.
fn contract_axis(t: ArrayView3<'_, f64>, o: &Array2<f64>, axis: usize) -> Array3<f64> {
    let k = o.ncols();
    let perm = match axis {
        0 => [1, 2, 0],
        1 => [0, 2, 1],
        _ => [0, 1, 2],
    };
    let moved = t.permuted_axes(perm);
    let std = moved.as_standard_layout();
    let (d0, d1, d2) = std.dim();
    let flat = std
        .to_shape((d0 * d1, d2))
        .expect("standard layout reshapes");
    let prod = flat.dot(o); // (d0*d1) x K
    let cube = prod
        .to_shape((d0, d1, k))
        .expect("shape preserved")
        .to_owned();
    match axis {
        0 => cube.permuted_axes([2, 0, 1]).as_standard_layout().to_owned(),
        1 => cube.permuted_axes([0, 2, 1]).as_standard_layout().to_owned(),
        _ => cube,
    }
}

struct Gradients {
    pi: Array1<f64>,
    q: Array2<f64>,
    o: Array2<f64>,
}

fn gradients(
    pi: &Array1<f64>,
    q: &Array2<f64>,
    o: &Array2<f64>,
    t_emp: &Array3<f64>,
) -> (f64, Gradients) {
    let k = pi.len();
    let cand = candidate_tensor(pi, q, o);
    let crit = criterion_of_candidate(&cand, t_emp);
    let residual = &cand - t_emp;

    let r0 = contract_axis(residual.view(), o, 0); // (K, M, M)
    let r01 = contract_axis(r0.view(), o, 1); // (K, K, M)
    let s = contract_axis(r01.view(), o, 2); // (K, K, K)
    let r1 = contract_axis(contract_axis(residual.view(), o, 1).view(), o, 2); // (M, K, K)
    let r2 = contract_axis(r0.view(), o, 2); // (K, M, K)
    let r3 = r01; // (K, K, M) indexed (k1, k2, c)

    // pi gradient
    let mut g_pi = Array1::zeros(k);
    for h in 0..k {
        let mut acc = 0.0;
        for k2 in 0..k {
            for k3 in 0..k {
                acc += q[(h, k2)] * q[(k2, k3)] * s[(h, k2, k3)];
            }
        }
        g_pi[h] = 2.0 * acc;
    }

    // Q gradient: the matrix enters both transition slots
    let mut g_q = Array2::zeros((k, k));
    for i in 0..k {
        for j in 0..k {
            let mut first = 0.0;
            for k3 in 0..k {
                first += q[(j, k3)] * s[(i, j, k3)];
            }
            let mut second = 0.0;
            for k1 in 0..k {
                second += pi[k1] * q[(k1, i)] * s[(k1, i, j)];
            }
            g_q[(i, j)] = 2.0 * (pi[i] * first + second);
        }
    }

    // O gradient: one term per tensor slot the emissions occupy
    let m = o.nrows();
    let mut g_o = Array2::zeros((m, k));
    for h in 0..k {
        for x in 0..m {
            let mut slot1 = 0.0;
            for k2 in 0..k {
                for k3 in 0..k {
                    slot1 += q[(h, k2)] * q[(k2, k3)] * r1[(x, k2, k3)];
                }
            }
            let mut slot2 = 0.0;
            for k1 in 0..k {
                for k3 in 0..k {
                    slot2 += pi[k1] * q[(k1, h)] * q[(h, k3)] * r2[(k1, x, k3)];
                }
            }
            let mut slot3 = 0.0;
            for k1 in 0..k {
                for k2 in 0..k {
                    slot3 += pi[k1] * q[(k1, k2)] * q[(k2, h)] * r3[(k1, k2, x)];
                }
            }
            g_o[(x, h)] = 2.0 * (pi[h] * slot1 + slot2 + slot3);
        }
    }

    (
        crit,
        Gradients {
            pi: g_pi,
            q: g_q,
            o: g_o,
        },
    )
}

/// Projects an emission coefficient column onto the feasible set: unit
/// integral against the dominating measure and Euclidean norm at most
/// `bound`. For the trig basis the integral is the first coefficient; for
/// the atom-plus-trig basis it is the sum of the atom and the constant
/// coefficients, and the norm projection shrinks toward the minimum-norm
/// feasible point so the affine constraint is preserved.
fn project_column(kind: BasisKind, col: &mut Array1<f64>, bound: f64) {
    match kind {
        BasisKind::Trig => {
            col[0] = 1.0;
            let rest_sq: f64 = col.iter().skip(1).map(|x| x * x).sum();
            let allowed = (bound * bound - 1.0).max(0.0);
            if rest_sq > allowed {
                let scale = (allowed / rest_sq).sqrt();
                for x in col.iter_mut().skip(1) {
                    *x *= scale;
                }
            }
        }
        BasisKind::DiracTrig => {
            if col.len() == 1 {
                col[0] = 1.0;
                return;
            }
            let shift = (1.0 - col[0] - col[1]) / 2.0;
            col[0] += shift;
            col[1] += shift;
            let norm_sq: f64 = col.iter().map(|x| x * x).sum();
            if norm_sq > bound * bound {
                // minimum-norm feasible point: mass split over the two
                // integral-carrying coordinates
                let base_sq = 0.5;
                let mut center = Array1::zeros(col.len());
                center[0] = 0.5;
                center[1] = 0.5;
                let diff = &*col - &center;
                let diff_sq: f64 = diff.iter().map(|x| x * x).sum();
                let scale = ((bound * bound - base_sq).max(0.0) / diff_sq).sqrt();
                *col = &center + &(diff * scale);
            }
        }
    }
}

fn project_params(params: &mut HmmParams, kind: BasisKind, bound: f64) {
    let projected = simplex_project(params.pi.as_slice().expect("contiguous"));
    params.pi = Array1::from(projected);
    params.q = transition_project(&params.q);
    for mut col in params.o.columns_mut() {
        let mut v = col.to_owned();
        project_column(kind, &mut v, bound);
        col.assign(&v);
    }
}

/// Derives lower moments from the triple tensor via the basis function(s)
/// carrying the constant, then runs the spectral estimator as a warm start.
fn spectral_warm_start(problem: &LsProblem, seed: u64) -> Result<HmmParams> {
    let dim = problem.dim();
    let mut unit = Array1::zeros(dim);
    match problem.basis.kind {
        BasisKind::Trig => unit[0] = 1.0,
        BasisKind::DiracTrig => {
            unit[0] = 1.0;
            if dim > 1 {
                unit[1] = 1.0;
            }
        }
    }
    let t = &problem.t_full;
    let n_mat = {
        // contract the third slot with the constant
        let mut out = Array2::zeros((dim, dim));
        for a in 0..dim {
            for b in 0..dim {
                let mut acc = 0.0;
                for c in 0..dim {
                    acc += t[(a, b, c)] * unit[c];
                }
                out[(a, b)] = acc;
            }
        }
        out
    };
    let p_mat = {
        let mut out = Array2::zeros((dim, dim));
        for a in 0..dim {
            for c in 0..dim {
                let mut acc = 0.0;
                for b in 0..dim {
                    acc += t[(a, b, c)] * unit[b];
                }
                out[(a, c)] = acc;
            }
        }
        out
    };
    let l = n_mat.dot(&unit);
    let tensors = MomentTensors {
        edge_dim: dim,
        center_dim: dim,
        n_triples: problem.n_triples.max(1),
        l,
        n: n_mat,
        p: p_mat,
        t: t.clone(),
    };
    Ok(spectral_estimate(&tensors, problem.k, WARM_START_RETRIES, seed)?.params)
}

enum Block {
    Pi,
    Q,
    O,
}

/// Minimizes the contrast from `init` (or a spectral warm start) by
/// projected block-coordinate descent. The criterion never increases; the
/// search stops when the per-sweep relative decrease drops below `tol` or
/// after `max_iters` sweeps. A sweep that cannot decrease the criterion at
/// a non-stationary point triggers seeded random restarts around the best
/// iterate; if every restart stalls too, the error carries the best iterate.
pub fn ls_estimate(
    problem: &LsProblem,
    init: Option<HmmParams>,
    opts: &LsOptions,
) -> Result<HmmParams> {
    let dim = problem.dim();
    let k = problem.k;
    if k > dim {
        return Err(Error::invalid(format!("K = {k} exceeds model dimension {dim}")));
    }
    let mut params = match init {
        Some(p) => {
            p.validate()?;
            if p.k() != k || p.dim() != dim {
                return Err(Error::invalid(
                    "initial parameters do not match the problem shape",
                ));
            }
            p
        }
        None => spectral_warm_start(problem, opts.seed)?,
    };
    project_params(&mut params, problem.basis.kind, problem.coeff_norm_bound);

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    rng.set_stream(u64::MAX); // restarts draw from their own stream

    let mut best = params.clone();
    let mut best_crit = ls_criterion(&best.pi, &best.q, &best.o, &problem.t_full);
    let mut restarts_left = opts.restarts;

    let mut steps = [1.0_f64; 3];
    let mut crit = best_crit;
    let mut iter = 0;
    loop {
        if iter >= opts.max_iters {
            return Ok(best);
        }
        iter += 1;
        let prev = crit;
        let mut any_progress = false;
        for (bi, block) in [Block::Pi, Block::Q, Block::O].into_iter().enumerate() {
            let (current, grads) = gradients(&params.pi, &params.q, &params.o, &problem.t_full);
            crit = current;
            let mut step = steps[bi];
            let mut accepted = false;
            for _ in 0..MAX_BACKTRACKS {
                let mut trial = params.clone();
                match block {
                    Block::Pi => {
                        trial.pi = &trial.pi - &(step * &grads.pi);
                    }
                    Block::Q => {
                        trial.q = &trial.q - &(step * &grads.q);
                    }
                    Block::O => {
                        trial.o = &trial.o - &(step * &grads.o);
                    }
                }
                project_params(&mut trial, problem.basis.kind, problem.coeff_norm_bound);
                let trial_crit = ls_criterion(&trial.pi, &trial.q, &trial.o, &problem.t_full);
                if trial_crit < crit {
                    params = trial;
                    crit = trial_crit;
                    steps[bi] = step * 1.5;
                    accepted = true;
                    break;
                }
                step *= 0.5;
            }
            if !accepted {
                steps[bi] = 1.0;
            } else {
                any_progress = true;
            }
        }
        if crit < best_crit {
            best = params.clone();
            best_crit = crit;
        }

        let rel_decrease = (prev - crit) / prev.abs().max(1.0);
        if any_progress && rel_decrease < opts.tol {
            return Ok(best);
        }
        if !any_progress {
            // distinguish a stationary point from a genuine stall via the
            // projected-gradient displacement
            let (_, grads) = gradients(&params.pi, &params.q, &params.o, &problem.t_full);
            let eps = 1e-8;
            let mut probe = params.clone();
            probe.pi = &probe.pi - &(eps * &grads.pi);
            probe.q = &probe.q - &(eps * &grads.q);
            probe.o = &probe.o - &(eps * &grads.o);
            project_params(&mut probe, problem.basis.kind, problem.coeff_norm_bound);
            let displacement = {
                let mut d = 0.0;
                for (a, b) in probe.pi.iter().zip(params.pi.iter()) {
                    d += (a - b) * (a - b);
                }
                for (a, b) in probe.q.iter().zip(params.q.iter()) {
                    d += (a - b) * (a - b);
                }
                for (a, b) in probe.o.iter().zip(params.o.iter()) {
                    d += (a - b) * (a - b);
                }
                d.sqrt() / eps
            };
            if displacement < 1e-6 {
                return Ok(best);
            }
            if restarts_left == 0 {
                return Err(Error::OptimizationStalled {
                    message: format!(
                        "no descent direction after {} restarts (criterion {best_crit:.6e})",
                        opts.restarts
                    ),
                    best: Box::new(best),
                });
            }
            restarts_left -= 1;
            let scale = 1e-2;
            params = best.clone();
            for x in params.pi.iter_mut() {
                *x += scale * (rng.gen::<f64>() - 0.5);
            }
            for x in params.q.iter_mut() {
                *x += scale * (rng.gen::<f64>() - 0.5);
            }
            for x in params.o.iter_mut() {
                *x += scale * (rng.gen::<f64>() - 0.5);
            }
            project_params(&mut params, problem.basis.kind, problem.coeff_norm_bound);
            crit = ls_criterion(&params.pi, &params.q, &params.o, &problem.t_full);
        }
    }
}

/// Configuration of a per-model least-squares sweep.
#[derive(Debug, Clone)]
pub struct LsSweepConfig {
    pub k: usize,
    pub model_grid: Vec<usize>,
    pub coeff_norm_bound: f64,
    pub options: LsOptions,
}

/// Fits every model of the grid independently (spectral warm starts) and
/// assembles the unaligned estimator family.
pub fn ls_family(
    observations: &[f64],
    basis: &Basis,
    cfg: &LsSweepConfig,
) -> Result<EstimatorFamily> {
    if cfg.model_grid.is_empty() || !cfg.model_grid.windows(2).all(|w| w[0] < w[1]) {
        return Err(Error::invalid("model grid must be non-empty and increasing"));
    }
    let max_model = *cfg.model_grid.last().unwrap();
    let tensors = accumulate_moments_chunked(observations, basis, max_model, max_model, CHUNK_LEN)?;
    let models: Vec<Option<ModelEstimate>> = cfg
        .model_grid
        .par_iter()
        .map(|&dim| {
            let t = tensors
                .t
                .slice(ndarray::s![..dim, ..dim, ..dim])
                .to_owned();
            let problem = LsProblem {
                t_full: t,
                k: cfg.k,
                coeff_norm_bound: cfg.coeff_norm_bound,
                basis: *basis,
                n_triples: tensors.n_triples,
            };
            let mut opts = cfg.options.clone();
            opts.seed = cfg.options.seed.wrapping_add(dim as u64);
            let fit = match ls_estimate(&problem, None, &opts) {
                Ok(p) => p,
                Err(Error::OptimizationStalled { best, .. }) => *best,
                Err(_) => return None,
            };
            Some(ModelEstimate {
                dim,
                pi: fit.pi,
                q: fit.q,
                o: fit.o,
                diagnostics: ModelDiagnostics::default(),
            })
        })
        .collect();
    let models: Vec<ModelEstimate> = models.into_iter().flatten().collect();
    if models.is_empty() {
        return Err(Error::Numerical(
            "no model produced a least-squares fit".into(),
        ));
    }
    Ok(EstimatorFamily {
        basis: *basis,
        n: tensors.n_triples,
        k: cfg.k,
        method: Method::Ls,
        models,
        aligned: false,
        reference_model: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bases::{make_basis, BasisKind};
    use crate::moments::{accumulate_moments, population_moments};
    use crate::simulation::d_perm;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn frob(t: &Array3<f64>) -> f64 {
        t.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    fn toy_params() -> HmmParams {
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
            [0.2, 0.0, 0.3],
            [0.0, 0.1, 0.0],
            [-0.1, 0.0, 0.2]
        ];
        HmmParams { pi, q, o }
    }

    #[test]
    fn single_triple_tensor_is_one() {
        let basis = make_basis(BasisKind::Trig, 1).unwrap();
        let t = build_ls_tensor(&[0.2, 0.9, 0.5], &basis, 1).unwrap();
        assert_abs_diff_eq!(t[(0, 0, 0)], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn ls_tensor_agrees_with_moment_accumulation() {
        let basis = make_basis(BasisKind::Trig, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let obs: Vec<f64> = (0..300).map(|_| rng.gen::<f64>()).collect();
        let t = build_ls_tensor(&obs, &basis, 5).unwrap();
        let moments = accumulate_moments(&obs, &basis, 5, 5).unwrap();
        for (a, b) in t.iter().zip(moments.t.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn candidate_tensor_single_state() {
        let pi = array![1.0];
        let q = array![[1.0]];
        let o = {
            let mut o = Array2::zeros((4, 1));
            o[(0, 0)] = 1.0;
            o
        };
        let t = candidate_tensor(&pi, &q, &o);
        for ((a, b, c), &v) in t.indexed_iter() {
            let expected = if a == 0 && b == 0 && c == 0 { 1.0 } else { 0.0 };
            assert_abs_diff_eq!(v, expected, epsilon = 1e-15);
        }
    }

    #[test]
    fn candidate_tensor_matches_population_moments() {
        let params = toy_params();
        let cand = candidate_tensor(&params.pi, &params.q, &params.o);
        let pop = population_moments(&params, 6, 6).unwrap();
        for (a, b) in cand.iter().zip(pop.t.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn candidate_tensor_is_relabeling_invariant() {
        let params = toy_params();
        let permuted = params.permuted(&[2, 0, 1]);
        let a = candidate_tensor(&params.pi, &params.q, &params.o);
        let b = candidate_tensor(&permuted.pi, &permuted.q, &permuted.o);
        for (x, y) in a.iter().zip(b.iter()) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-12);
        }
    }

    #[test]
    fn candidate_norm_respects_coarse_bound() {
        let params = toy_params();
        let cand = candidate_tensor(&params.pi, &params.q, &params.o);
        let k = params.k() as f64;
        let max_col = (0..params.k())
            .map(|j| params.o.column(j).dot(&params.o.column(j)).sqrt())
            .fold(0.0_f64, f64::max);
        let bound = (3.0 * k).sqrt() * max_col.powi(3) * k;
        assert!(frob(&cand) <= bound);
    }

    #[test]
    fn criterion_examples() {
        let params = toy_params();
        let t = candidate_tensor(&params.pi, &params.q, &params.o);
        // candidate equal to the tensor: criterion = -||T||^2
        let c = ls_criterion(&params.pi, &params.q, &params.o, &t);
        assert_abs_diff_eq!(c, -frob(&t).powi(2), epsilon = 1e-12);
        // zero candidate: criterion = 0
        let zero_o = Array2::zeros((6, 3));
        let c0 = ls_criterion(&params.pi, &params.q, &zero_o, &t);
        assert_abs_diff_eq!(c0, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn criterion_matches_direct_expansion() {
        let params = toy_params();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t_emp = Array3::from_shape_fn((6, 6, 6), |_| rng.gen_range(-0.5..0.5));
        let cand = candidate_tensor(&params.pi, &params.q, &params.o);
        let direct: f64 = cand
            .iter()
            .zip(t_emp.iter())
            .map(|(c, t)| (c - t) * (c - t) - t * t)
            .sum();
        assert_abs_diff_eq!(
            ls_criterion(&params.pi, &params.q, &params.o, &t_emp),
            direct,
            epsilon = 1e-12
        );
    }

    #[test]
    fn gradients_match_finite_differences() {
        let params = toy_params();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let t_emp = Array3::from_shape_fn((6, 6, 6), |_| rng.gen_range(-0.2..0.2));
        let (_, grads) = gradients(&params.pi, &params.q, &params.o, &t_emp);
        let h = 1e-6;
        let base = ls_criterion(&params.pi, &params.q, &params.o, &t_emp);

        for i in 0..3 {
            let mut p = params.pi.clone();
            p[i] += h;
            let fd = (ls_criterion(&p, &params.q, &params.o, &t_emp) - base) / h;
            assert_abs_diff_eq!(fd, grads.pi[i], epsilon = 1e-4);
        }
        for i in 0..3 {
            for j in 0..3 {
                let mut q = params.q.clone();
                q[(i, j)] += h;
                let fd = (ls_criterion(&params.pi, &q, &params.o, &t_emp) - base) / h;
                assert_abs_diff_eq!(fd, grads.q[(i, j)], epsilon = 1e-4);
            }
        }
        for x in 0..6 {
            for j in 0..3 {
                let mut o = params.o.clone();
                o[(x, j)] += h;
                let fd = (ls_criterion(&params.pi, &params.q, &o, &t_emp) - base) / h;
                assert_abs_diff_eq!(fd, grads.o[(x, j)], epsilon = 1e-4);
            }
        }
    }

    #[test]
    fn fixed_point_is_returned_unchanged() {
        let params = toy_params();
        let t = candidate_tensor(&params.pi, &params.q, &params.o);
        let problem = LsProblem {
            t_full: t,
            k: 3,
            coeff_norm_bound: 10.0,
            basis: make_basis(BasisKind::Trig, 6).unwrap(),
            n_triples: 1000,
        };
        let fit = ls_estimate(&problem, Some(params.clone()), &LsOptions::default()).unwrap();
        assert!(d_perm(&fit, &params).unwrap() <= 1e-10);
        let c_init = ls_criterion(&params.pi, &params.q, &params.o, &problem.t_full);
        let c_fit = ls_criterion(&fit.pi, &fit.q, &fit.o, &problem.t_full);
        assert!(c_fit <= c_init + 1e-12);
    }

    #[test]
    fn population_tensor_recovery_with_spectral_start() {
        let params = toy_params();
        let t = candidate_tensor(&params.pi, &params.q, &params.o);
        let problem = LsProblem {
            t_full: t,
            k: 3,
            coeff_norm_bound: 10.0,
            basis: make_basis(BasisKind::Trig, 6).unwrap(),
            n_triples: 100_000,
        };
        let fit = ls_estimate(&problem, None, &LsOptions::default()).unwrap();
        let d = d_perm(&fit, &params).unwrap();
        assert!(d <= 1e-4, "d_perm = {d:.3e}");
        // on an exact tensor nothing beats the truth (within tolerance)
        let c_fit = ls_criterion(&fit.pi, &fit.q, &fit.o, &problem.t_full);
        let c_truth = -frob(&problem.t_full).powi(2);
        assert!(c_fit >= c_truth - 1e-10);
    }

    #[test]
    fn descent_and_feasibility_on_noisy_tensors() {
        let params = toy_params();
        let mut t = candidate_tensor(&params.pi, &params.q, &params.o);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        t.mapv_inplace(|x| x + 0.01 * (rng.gen::<f64>() - 0.5));
        let problem = LsProblem {
            t_full: t,
            k: 3,
            coeff_norm_bound: 10.0,
            basis: make_basis(BasisKind::Trig, 6).unwrap(),
            n_triples: 1000,
        };
        let mut init = params.clone();
        init.o[(1, 0)] += 0.2;
        let c_init = {
            let mut p = init.clone();
            project_params(&mut p, BasisKind::Trig, 10.0);
            ls_criterion(&p.pi, &p.q, &p.o, &problem.t_full)
        };
        let fit = ls_estimate(&problem, Some(init), &LsOptions::default()).unwrap();
        let c_fit = ls_criterion(&fit.pi, &fit.q, &fit.o, &problem.t_full);
        assert!(c_fit <= c_init + 1e-12, "criterion increased");

        // feasibility is exact
        assert_abs_diff_eq!(fit.pi.sum(), 1.0, epsilon = 1e-9);
        assert!(fit.pi.iter().all(|&x| x >= 0.0));
        for row in fit.q.rows() {
            assert_abs_diff_eq!(row.sum(), 1.0, epsilon = 1e-9);
            assert!(row.iter().all(|&x| x >= 0.0));
        }
        for j in 0..3 {
            assert_abs_diff_eq!(fit.o[(0, j)], 1.0, epsilon = 1e-12);
            let norm = fit.o.column(j).dot(&fit.o.column(j)).sqrt();
            assert!(norm <= 10.0 + 1e-9);
        }
    }

    #[test]
    fn column_projection_dirac_basis_preserves_integral() {
        let mut col = Array1::from(vec![0.7, 0.9, 4.0, -3.0]);
        project_column(BasisKind::DiracTrig, &mut col, 2.0);
        assert_abs_diff_eq!(col[0] + col[1], 1.0, epsilon = 1e-12);
        let norm = col.dot(&col).sqrt();
        assert!(norm <= 2.0 + 1e-9);
    }
}
