use std::time::Instant;

use hmm_select::bases::{Basis, BasisKind};
use hmm_select::calibration::{calibrate_cached, default_rho_grid, CalibrationMode};
use hmm_select::selection::{
    align_family, default_reference_model, DistanceCache, PenaltyShape, Variant,
};
use hmm_select::simulation::{BenchmarkState, GroundTruth, TruthProjections};
use hmm_select::spectral::{spectral_family, RetryRule, SweepConfig};

fn main() {
    let n: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(200_000);
    let seed: u64 = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(1);
    let truth = GroundTruth::benchmark();
    let basis = Basis::new(BasisKind::Trig, 128).unwrap();
    let t0 = Instant::now();
    let obs = truth.sample(n, seed).unwrap();
    println!("sample: {:?}", t0.elapsed());

    let grid: Vec<usize> = (3..=100).collect();
    let cfg = SweepConfig {
        k: 3,
        edge_dim: 20,
        model_grid: grid,
        retries: RetryRule::LogScaled,
        seed,
    };
    let t1 = Instant::now();
    let family = spectral_family(&obs, &basis, &cfg).unwrap();
    println!("family: {:?} ({} models)", t1.elapsed(), family.models.len());

    let t2 = Instant::now();
    let reference = default_reference_model(&family.model_grid(), 3);
    let family = align_family(family, reference).unwrap();
    println!("align (ref {reference}): {:?}", t2.elapsed());

    let t3 = Instant::now();
    let cache = DistanceCache::new(&family).unwrap();
    let rho_grid = default_rho_grid(&cache, PenaltyShape::Spectral, family.n);
    let cal = calibrate_cached(&cache, family.n, PenaltyShape::Spectral, CalibrationMode::EachJump, &rho_grid).unwrap();
    println!("calibrate: {:?}", t3.elapsed());
    for c in &cal.curves {
        println!(
            "  state {}: rho_jump={:.4} height={} has_jump={} rho={:.4}",
            c.state, c.rho_jump, c.jump_height, c.has_jump, cal.rho[c.state]
        );
    }

    let penalty = cal.penalty(family.n);
    let result = cache.select(&penalty, Variant::Standard);
    let proj = TruthProjections::new(&truth, &basis, 100).unwrap();
    let report = hmm_select::simulation::error_report(&family, Some(&result), &proj).unwrap();
    for (state, r) in report.iter().enumerate() {
        let name = if Some(state) == truth.state_of(BenchmarkState::Uniform) {
            "uniform"
        } else if Some(state) == truth.state_of(BenchmarkState::SymBeta) {
            "symbeta"
        } else {
            "beta"
        };
        println!(
            "  state {state} ({name}): M_hat={} err={:.4} | oracle M={} err={:.4}",
            result.per_state[state].m_hat,
            r.l2_error.unwrap(),
            r.oracle_m,
            r.oracle_error
        );
    }
    println!("total: {:?}", t0.elapsed());
}
