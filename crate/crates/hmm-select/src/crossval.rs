//! Blocked K-fold cross-validation baseline: selects a single common model
//! dimension by the least-squares risk of spectral fits on held-out blocks.
//!
//! The sequence is split into contiguous segments of near-equal size; each
//! fold trains on all other segments after pruning a gap of observations at
//! every train/validation boundary (dependent data needs breathing room),
//! fits the spectral estimator for every model, and scores the candidate
//! tensor against the held-out block's empirical tensor in squared
//! Frobenius distance. The per-model mean over folds is minimized.

use std::ops::Range;

use ndarray::s;
use rayon::prelude::*;

use crate::bases::Basis;
use crate::error::{Error, Result};
use crate::leastsq::candidate_tensor;
use crate::moments::{
    accumulate_moments, merge_moments, prefix_moments, subtract_moments, MomentTensors,
};
use crate::spectral::{spectral_estimate_stream, RetryRule};

/// Fold layout: segments partition the index range and each training set
/// excludes its fold plus `gap` observations on each side of every boundary.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CvPlan {
    pub n: usize,
    pub folds: usize,
    pub gap: usize,
    pub segments: Vec<Range<usize>>,
    pub training_sets: Vec<Vec<Range<usize>>>,
}

/// Builds the blocked fold layout. Requires `n >= folds * (2 gap + 3)` so
/// that every fold keeps usable training data on both sides.
pub fn cv_split(n: usize, folds: usize, gap: usize) -> Result<CvPlan> {
    if folds < 2 {
        return Err(Error::invalid("need at least 2 folds"));
    }
    if n < folds * (2 * gap + 3) {
        return Err(Error::InsufficientData(format!(
            "{n} observations cannot support {folds} folds with gap {gap}"
        )));
    }
    let base = n / folds;
    let remainder = n % folds;
    let mut segments = Vec::with_capacity(folds);
    let mut start = 0;
    for i in 0..folds {
        let len = base + usize::from(i < remainder);
        segments.push(start..start + len);
        start += len;
    }
    let training_sets = segments
        .iter()
        .map(|seg| {
            let mut runs = Vec::new();
            let left_end = seg.start.saturating_sub(gap);
            if left_end >= 3 {
                runs.push(0..left_end);
            }
            let right_start = (seg.end + gap).min(n);
            if n - right_start >= 3 {
                runs.push(right_start..n);
            }
            runs
        })
        .collect();
    Ok(CvPlan {
        n,
        folds,
        gap,
        segments,
        training_sets,
    })
}

/// Spectral-estimator settings for the cross-validation fits.
#[derive(Debug, Clone)]
pub struct CvConfig {
    /// Dimension of the first/third tensor slots.
    pub edge_dim: usize,
    pub retries: RetryRule,
    pub seed: u64,
}

impl Default for CvConfig {
    fn default() -> Self {
        CvConfig {
            edge_dim: 20,
            retries: RetryRule::LogScaled,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CvResult {
    /// Risk-minimizing model dimension (smallest on ties), common to all
    /// states.
    pub m_hat: usize,
    /// `(M, mean held-out risk)` sorted by dimension.
    pub risk_curve: Vec<(usize, f64)>,
    /// Per-fold risks, `fold_risks[fold][grid index]`.
    pub fold_risks: Vec<Vec<f64>>,
}

/// Runs blocked cross-validation over the model grid and selects the common
/// dimension minimizing the mean held-out least-squares risk. Spectral
/// failures score as infinite risk for that cell; a model whose every fold
/// fails is an error.
pub fn cv_select(
    observations: &[f64],
    basis: &Basis,
    model_grid: &[usize],
    k: usize,
    folds: usize,
    gap: usize,
    cfg: &CvConfig,
) -> Result<CvResult> {
    if model_grid.is_empty() || !model_grid.windows(2).all(|w| w[0] < w[1]) {
        return Err(Error::invalid("model grid must be non-empty and increasing"));
    }
    let max_model = *model_grid.last().unwrap();
    if k == 0 || k > cfg.edge_dim.min(model_grid[0]) {
        return Err(Error::invalid(format!(
            "state count {k} incompatible with edge dimension {} and smallest model {}",
            cfg.edge_dim, model_grid[0]
        )));
    }
    let plan = cv_split(observations.len(), folds, gap)?;

    // One pass yields tensors over every prefix cut; training tensors are
    // prefix + (whole - prefix - straddling triples) merges.
    let mut cuts: Vec<usize> = Vec::with_capacity(2 * folds + 1);
    for (seg, runs) in plan.segments.iter().zip(&plan.training_sets) {
        let _ = seg;
        for run in runs {
            if run.start == 0 {
                cuts.push(run.end);
            } else {
                cuts.push(run.start);
            }
        }
    }
    cuts.push(observations.len());
    cuts.sort_unstable();
    cuts.dedup();
    let edge = cfg.edge_dim;
    let prefixes = prefix_moments(observations, basis, edge, max_model, &cuts)?;
    let prefix_at = |cut: usize| -> &MomentTensors {
        let idx = cuts.binary_search(&cut).expect("cut was requested");
        &prefixes[idx]
    };
    let whole = prefix_at(observations.len());

    let training_tensors: Vec<MomentTensors> = plan
        .training_sets
        .iter()
        .map(|runs| {
            let mut acc = MomentTensors::empty(edge, max_model);
            for run in runs {
                let part = if run.start == 0 {
                    prefix_at(run.end).clone()
                } else {
                    // suffix = whole - prefix - the two straddling triples
                    let before = prefix_at(run.start);
                    let straddle = accumulate_moments(
                        &observations[run.start - 2..run.start + 2],
                        basis,
                        edge,
                        max_model,
                    )?;
                    subtract_moments(whole, &[before, &straddle])?
                };
                acc = merge_moments(&acc, &part)?;
            }
            if acc.n_triples == 0 {
                return Err(Error::InsufficientData(
                    "a fold has no usable training triples".into(),
                ));
            }
            Ok(acc)
        })
        .collect::<Result<_>>()?;

    // held-out empirical tensors at the largest model; smaller models slice
    let holdout_tensors: Vec<MomentTensors> = plan
        .segments
        .par_iter()
        .map(|seg| accumulate_moments(&observations[seg.clone()], basis, max_model, max_model))
        .collect::<Result<_>>()?;

    // Risk of a candidate against the fold's full tensor (the candidate's
    // coordinates beyond its model are zero), so the subtracted reference
    // norm is the same for every model and risks are comparable across the
    // grid: ||C_M - T_full||^2 = ||T_full||^2 + sum_slice((c - t)^2 - t^2).
    let fold_risks: Vec<Vec<f64>> = (0..plan.folds)
        .into_par_iter()
        .map(|fold| {
            let train = &training_tensors[fold];
            let held = &holdout_tensors[fold];
            let held_norm_sq: f64 = held.t.iter().map(|t| t * t).sum();
            model_grid
                .iter()
                .map(|&dim| {
                    let Ok(restricted) = train.restrict_center(dim) else {
                        return f64::INFINITY;
                    };
                    let retries = cfg.retries.retries(train.n_triples, dim);
                    let stream = (fold as u64) << 20 | dim as u64;
                    match spectral_estimate_stream(&restricted, k, retries, cfg.seed, stream) {
                        Ok(est) => {
                            let cand =
                                candidate_tensor(&est.params.pi, &est.params.q, &est.params.o);
                            let held_slice = held.t.slice(s![..dim, ..dim, ..dim]);
                            held_norm_sq
                                + cand
                                    .iter()
                                    .zip(held_slice.iter())
                                    .map(|(c, t)| (c - t) * (c - t) - t * t)
                                    .sum::<f64>()
                        }
                        Err(_) => f64::INFINITY,
                    }
                })
                .collect()
        })
        .collect();

    let mut risk_curve = Vec::with_capacity(model_grid.len());
    for (gi, &dim) in model_grid.iter().enumerate() {
        let mean = fold_risks.iter().map(|r| r[gi]).sum::<f64>() / plan.folds as f64;
        risk_curve.push((dim, mean));
    }
    if risk_curve.iter().all(|&(_, r)| !r.is_finite()) {
        return Err(Error::Numerical(
            "every model failed on every fold".into(),
        ));
    }
    let mut m_hat = 0;
    let mut best = f64::INFINITY;
    for &(dim, risk) in &risk_curve {
        if risk.is_finite() && risk < best {
            best = risk;
            m_hat = dim;
        }
    }
    if m_hat == 0 {
        return Err(Error::Numerical("no model achieved a finite risk".into()));
    }
    Ok(CvResult {
        m_hat,
        risk_curve,
        fold_risks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bases::{make_basis, BasisKind};
    use crate::simulation::{EmissionKind, GroundTruth};
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn split_partitions_with_near_equal_blocks() {
        let plan = cv_split(1000, 10, 30).unwrap();
        assert_eq!(plan.segments.len(), 10);
        for seg in &plan.segments {
            assert_eq!(seg.len(), 100);
        }
        // blocks are disjoint and cover 0..n
        let mut covered = 0;
        let mut prev_end = 0;
        for seg in &plan.segments {
            assert_eq!(seg.start, prev_end);
            covered += seg.len();
            prev_end = seg.end;
        }
        assert_eq!(covered, 1000);
        // middle folds lose the gap on both sides
        let runs = &plan.training_sets[5];
        assert_eq!(runs.len(), 2);
        assert_eq!(runs[0], 0..500 - 30);
        assert_eq!(runs[1], 600 + 30..1000);
    }

    #[test]
    fn split_without_gap_keeps_everything() {
        let plan = cv_split(100, 10, 0).unwrap();
        for (fold, seg) in plan.segments.iter().enumerate() {
            assert_eq!(seg.len(), 10);
            let total: usize = plan.training_sets[fold].iter().map(|r| r.len()).sum();
            assert_eq!(total, 90);
        }
    }

    #[test]
    fn split_spreads_remainder_over_first_blocks() {
        let plan = cv_split(103, 10, 0).unwrap();
        assert_eq!(plan.segments[0].len(), 11);
        assert_eq!(plan.segments[2].len(), 11);
        assert_eq!(plan.segments[3].len(), 10);
    }

    #[test]
    fn split_rejects_too_small_samples() {
        assert!(matches!(
            cv_split(100, 10, 30),
            Err(Error::InsufficientData(_))
        ));
        // degenerate full-length gap cannot train on anything
        assert!(cv_split(500, 10, 500).is_err());
    }

    fn low_dim_truth() -> (GroundTruth, Vec<f64>) {
        // emissions spanned by the first trig functions: uniform and a
        // two-coefficient density
        let q = array![[0.75, 0.25], [0.3, 0.7]];
        let truth = GroundTruth::new(
            q,
            vec![
                EmissionKind::Uniform,
                EmissionKind::Beta {
                    alpha: 2.0,
                    beta: 2.0,
                },
            ],
        )
        .unwrap();
        let obs = truth.sample(50_000, 31).unwrap();
        (truth, obs)
    }

    #[test]
    fn singleton_grid_is_selected() {
        let (_, obs) = low_dim_truth();
        let basis = make_basis(BasisKind::Trig, 8).unwrap();
        let cfg = CvConfig {
            edge_dim: 6,
            retries: RetryRule::Fixed(8),
            seed: 5,
        };
        let result = cv_select(&obs, &basis, &[5], 2, 5, 10, &cfg).unwrap();
        assert_eq!(result.m_hat, 5);
        assert_eq!(result.risk_curve.len(), 1);
    }

    #[test]
    fn fold_risks_average_exactly_to_the_curve() {
        let (_, obs) = low_dim_truth();
        let basis = make_basis(BasisKind::Trig, 12).unwrap();
        let cfg = CvConfig {
            edge_dim: 6,
            retries: RetryRule::Fixed(8),
            seed: 5,
        };
        let result = cv_select(&obs, &basis, &[4, 6, 9], 2, 5, 10, &cfg).unwrap();
        for (gi, &(_, mean)) in result.risk_curve.iter().enumerate() {
            let direct =
                result.fold_risks.iter().map(|r| r[gi]).sum::<f64>() / result.fold_risks.len() as f64;
            assert_abs_diff_eq!(mean, direct, epsilon = 1e-15);
        }
        // determinism
        let again = cv_select(&obs, &basis, &[4, 6, 9], 2, 5, 10, &cfg).unwrap();
        assert_eq!(result.m_hat, again.m_hat);
        for (a, b) in result.risk_curve.iter().zip(&again.risk_curve) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn exact_subspace_risk_is_minimized_at_the_true_dimension() {
        // emissions exactly inside the span of the first 3 trig functions;
        // rejection sampling from the pointwise-positive trig polynomials
        use rand::{Rng, SeedableRng};
        let basis = make_basis(BasisKind::Trig, 16).unwrap();
        let coeffs: [Vec<f64>; 2] = [vec![1.0, 0.35, 0.0], vec![1.0, -0.25, 0.3]];
        let density = |state: usize, y: f64| -> f64 {
            let phi = basis.evaluate(3, y).unwrap();
            coeffs[state].iter().zip(&phi).map(|(c, p)| c * p).sum()
        };
        let q = [[0.75, 0.25], [0.3, 0.7]];
        let pi0 = 0.3 / (0.25 + 0.3); // stationary weight of state 0
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(123);
        let mut state = usize::from(rng.gen::<f64>() >= pi0);
        let n = 60_000;
        let mut obs = Vec::with_capacity(n);
        while obs.len() < n {
            loop {
                let x = rng.gen::<f64>();
                if rng.gen::<f64>() * 2.0 <= density(state, x) {
                    obs.push(x);
                    break;
                }
            }
            state = if rng.gen::<f64>() < q[state][0] { 0 } else { 1 };
        }
        let cfg = CvConfig {
            edge_dim: 8,
            retries: RetryRule::Fixed(10),
            seed: 9,
        };
        let grid = [3usize, 6, 10, 14];
        let result = cv_select(&obs, &basis, &grid, 2, 5, 10, &cfg).unwrap();
        let best = result
            .risk_curve
            .iter()
            .map(|&(_, r)| r)
            .fold(f64::INFINITY, f64::min);
        let at_true = result.risk_curve[0].1;
        assert!(result.m_hat >= 3);
        assert!(
            at_true - best <= 1e-6,
            "risk at the spanning dimension should be minimal: {at_true} vs {best}"
        );
    }
}
