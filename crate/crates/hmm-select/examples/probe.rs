use hmm_select::bases::{Basis, BasisKind};
use hmm_select::calibration::CalibrationMode;
use hmm_select::schema;
use hmm_select::selection::Variant;
use hmm_select::simulation::{run_campaign, CampaignConfig, GroundTruth};

fn main() {
    let truth = GroundTruth::benchmark();
    let basis = Basis::new(BasisKind::Trig, 128).unwrap();
    let cfg = CampaignConfig {
        n_grid: vec![50_000, 100_000, 200_000, 400_000, 800_000],
        reps: 10,
        edge_dim: 20,
        m_min: 3,
        m_max: 100,
        seed: 5,
        variant: Variant::Standard,
        calibration: CalibrationMode::EachJump,
    };
    let records = run_campaign(&truth, &basis, &cfg).unwrap();
    schema::write_results_csv(std::path::Path::new("/tmp/campaign.csv"), &records).unwrap();
    println!("wrote {} records", records.len());
}
