//! Dimension-jump calibration of the penalty constant.
//!
//! For a growing penalty multiplier `rho`, the per-state selected dimension
//! `M_k(rho)` drops sharply once `rho` crosses the minimal-penalty constant;
//! the calibrated constant is twice the abscissa of the largest drop. Three
//! policies turn per-state jump positions into penalty constants: each state
//! keeps its own jump, all states share the latest jump, or all states share
//! the mean jump position.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::selection::{DistanceCache, EstimatorFamily, Penalty, PenaltyShape, Variant};

/// Selected dimension as a function of the penalty multiplier, with the
/// largest-drop abscissa.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JumpCurve {
    pub state: usize,
    pub rho_grid: Vec<f64>,
    pub m_hat: Vec<usize>,
    /// Right endpoint of the grid interval with the largest drop (the first
    /// grid point for flat curves).
    pub rho_jump: f64,
    /// Height of the largest drop, counted in model-grid indices.
    pub jump_height: usize,
    /// False when the curve never decreases.
    pub has_jump: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum CalibrationMode {
    /// One constant per state, from that state's own jump.
    #[clap(name = "eachjump")]
    EachJump,
    /// A common constant from the largest jump position.
    #[clap(name = "jumpmax")]
    JumpMax,
    /// A common constant from the mean jump position.
    #[clap(name = "jumpmean")]
    JumpMean,
}

/// Calibration output: per-state penalty constants plus the jump curves
/// they came from.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Calibration {
    pub mode: CalibrationMode,
    pub shape: PenaltyShape,
    /// One constant per state (identical entries for the common modes).
    pub rho: Vec<f64>,
    pub curves: Vec<JumpCurve>,
}

impl Calibration {
    pub fn penalty(&self, n: usize) -> Penalty {
        Penalty::per_state(self.shape, self.rho.clone(), n)
    }
}

/// Geometric default multiplier grid: 64 points spanning `[1e-3, 1e2]`
/// times the data scale `median pairwise distance / shape(M_max)`.
pub fn default_rho_grid(cache: &DistanceCache, shape: PenaltyShape, n: usize) -> Vec<f64> {
    let m_max = *cache.grid().last().expect("non-empty grid");
    let scale = {
        let med = cache.median_distance();
        let denom = crate::selection::penalty_shape(shape, m_max, n);
        if med > 0.0 && denom > 0.0 {
            med / denom
        } else {
            1.0
        }
    };
    geometric_grid(1e-3 * scale, 1e2 * scale, 64)
}

fn geometric_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    let ratio = (hi / lo).powf(1.0 / (count as f64 - 1.0));
    (0..count).map(|i| lo * ratio.powi(i as i32)).collect()
}

/// Traces the selected dimension of state `k` across the multiplier grid
/// (standard selection variant at penalty `rho * shape`) and locates the
/// largest drop; the earliest interval wins ties.
pub fn jump_curve(
    family: &EstimatorFamily,
    shape: PenaltyShape,
    state: usize,
    rho_grid: &[f64],
) -> Result<JumpCurve> {
    let cache = DistanceCache::new(family)?;
    jump_curve_cached(&cache, family.n, shape, state, rho_grid)
}

pub fn jump_curve_cached(
    cache: &DistanceCache,
    n: usize,
    shape: PenaltyShape,
    state: usize,
    rho_grid: &[f64],
) -> Result<JumpCurve> {
    if rho_grid.is_empty() {
        return Err(Error::invalid("empty multiplier grid"));
    }
    if !rho_grid.iter().all(|&r| r > 0.0 && r.is_finite()) {
        return Err(Error::invalid("multiplier grid must be positive"));
    }
    if !rho_grid.windows(2).all(|w| w[0] < w[1]) {
        return Err(Error::invalid("multiplier grid must be increasing"));
    }
    if state >= cache.k() {
        return Err(Error::invalid(format!(
            "state {state} out of range for K = {}",
            cache.k()
        )));
    }
    let grid = cache.grid().to_vec();
    let index_of = |m: usize| grid.iter().position(|&g| g == m).unwrap();

    let m_hat: Vec<usize> = rho_grid
        .iter()
        .map(|&rho| {
            let penalty = Penalty::common(shape, rho, n);
            let result = cache.select(&penalty, Variant::Standard);
            result.per_state[state].m_hat
        })
        .collect();

    let mut best_drop = 0usize;
    let mut rho_jump = rho_grid[0];
    for i in 0..m_hat.len().saturating_sub(1) {
        let here = index_of(m_hat[i]);
        let next = index_of(m_hat[i + 1]);
        let drop = here.saturating_sub(next);
        if drop > best_drop {
            best_drop = drop;
            rho_jump = rho_grid[i + 1];
        }
    }
    Ok(JumpCurve {
        state,
        rho_grid: rho_grid.to_vec(),
        m_hat,
        rho_jump,
        jump_height: best_drop,
        has_jump: best_drop > 0,
    })
}

/// Calibrates per-state penalty constants as twice the jump positions,
/// combined according to `mode`. Flat curves fall back to a unit constant;
/// the returned curves carry the flag.
pub fn calibrate(
    family: &EstimatorFamily,
    shape: PenaltyShape,
    mode: CalibrationMode,
    rho_grid: &[f64],
) -> Result<Calibration> {
    let cache = DistanceCache::new(family)?;
    calibrate_cached(&cache, family.n, shape, mode, rho_grid)
}

pub fn calibrate_cached(
    cache: &DistanceCache,
    n: usize,
    shape: PenaltyShape,
    mode: CalibrationMode,
    rho_grid: &[f64],
) -> Result<Calibration> {
    let k = cache.k();
    let curves: Vec<JumpCurve> = (0..k)
        .map(|state| jump_curve_cached(cache, n, shape, state, rho_grid))
        .collect::<Result<_>>()?;
    let jump_of = |c: &JumpCurve| -> f64 {
        if c.has_jump {
            2.0 * c.rho_jump
        } else {
            1.0
        }
    };
    let rho = match mode {
        CalibrationMode::EachJump => curves.iter().map(jump_of).collect(),
        CalibrationMode::JumpMax => {
            let v = curves.iter().map(jump_of).fold(f64::MIN, f64::max);
            vec![v; k]
        }
        CalibrationMode::JumpMean => {
            let v = curves.iter().map(jump_of).sum::<f64>() / k as f64;
            vec![v; k]
        }
    };
    Ok(Calibration {
        mode,
        shape,
        rho,
        curves,
    })
}
