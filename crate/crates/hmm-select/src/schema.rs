//! Versioned JSON and CSV file formats used by the command-line interface.
//!
//! Every JSON document carries a `schema_version` of the form
//! `major.minor`; readers reject unknown major versions.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::bases::Basis;
use crate::calibration::JumpCurve;
use crate::crossval::CvResult;
use crate::diagnostics::HdetReport;
use crate::error::{Error, Result};
use crate::selection::{
    EstimatorFamily, Method, ModelDiagnostics, ModelEstimate, Penalty, SelectionResult, Variant,
};
use crate::simulation::EmissionKind;

pub const SCHEMA_VERSION: &str = "1.0";
const SUPPORTED_MAJOR: u32 = 1;

fn default_schema_version() -> String {
    SCHEMA_VERSION.to_string()
}

fn check_version(found: &str) -> Result<()> {
    let major = found
        .split('.')
        .next()
        .and_then(|m| m.parse::<u32>().ok())
        .ok_or_else(|| Error::SchemaVersion {
            found: found.to_string(),
            supported: SUPPORTED_MAJOR,
        })?;
    if major != SUPPORTED_MAJOR {
        return Err(Error::SchemaVersion {
            found: found.to_string(),
            supported: SUPPORTED_MAJOR,
        });
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// observations
// ---------------------------------------------------------------------------

/// Plain-text observation formats: one value per line, or one column of a
/// CSV file (a non-numeric first row is treated as a header).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObservationFormat {
    Lines,
    CsvColumn(usize),
}

pub fn read_observations(path: &Path, format: ObservationFormat) -> Result<Vec<f64>> {
    let file = File::open(path)?;
    let reader = BufReader::new(file);
    let mut out = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let field = match format {
            ObservationFormat::Lines => trimmed,
            ObservationFormat::CsvColumn(col) => {
                match trimmed.split(',').nth(col) {
                    Some(f) => f.trim(),
                    None => {
                        return Err(Error::invalid(format!(
                            "line {}: no column {col}",
                            lineno + 1
                        )))
                    }
                }
            }
        };
        let value: f64 = match field.parse() {
            Ok(v) => v,
            Err(_) if lineno == 0 && matches!(format, ObservationFormat::CsvColumn(_)) => {
                continue; // header row
            }
            Err(_) => {
                return Err(Error::invalid(format!(
                    "line {}: cannot parse {field:?} as a number",
                    lineno + 1
                )))
            }
        };
        if !(0.0..=1.0).contains(&value) {
            return Err(Error::Domain(format!(
                "line {}: observation {value} outside [0, 1]",
                lineno + 1
            )));
        }
        out.push(value);
    }
    Ok(out)
}

pub fn write_observations(path: &Path, observations: &[f64]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for y in observations {
        // shortest representation that round-trips the exact f64
        writeln!(w, "{y}")?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// estimator families
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct FamilyFile {
    #[serde(default = "default_schema_version")]
    schema_version: String,
    basis: Basis,
    n: usize,
    #[serde(rename = "K")]
    k: usize,
    method: Method,
    aligned: bool,
    reference_model: Option<usize>,
    models: Vec<ModelFile>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelFile {
    #[serde(rename = "M")]
    m: usize,
    pi: Vec<f64>,
    #[serde(rename = "Q")]
    q: Vec<Vec<f64>>,
    #[serde(rename = "O_rowmajor")]
    o_rowmajor: Vec<f64>,
    #[serde(default)]
    diagnostics: DiagnosticsFile,
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct DiagnosticsFile {
    #[serde(skip_serializing_if = "Option::is_none")]
    separation_score: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    attempt_index: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    singular_values: Option<Vec<f64>>,
}

pub fn write_family(path: &Path, family: &EstimatorFamily) -> Result<()> {
    family.validate()?;
    let models = family
        .models
        .iter()
        .map(|m| ModelFile {
            m: m.dim,
            pi: m.pi.to_vec(),
            q: m.q.rows().into_iter().map(|r| r.to_vec()).collect(),
            o_rowmajor: m.o.iter().copied().collect(),
            diagnostics: DiagnosticsFile {
                // JSON numbers cannot hold infinities (vacuous separation
                // of a one-state model); drop them
                separation_score: m.diagnostics.separation_score.filter(|s| s.is_finite()),
                attempt_index: m.diagnostics.attempt_index,
                singular_values: m.diagnostics.singular_values.clone(),
            },
        })
        .collect();
    let file = FamilyFile {
        schema_version: SCHEMA_VERSION.to_string(),
        basis: family.basis,
        n: family.n,
        k: family.k,
        method: family.method,
        aligned: family.aligned,
        reference_model: family.reference_model,
        models,
    };
    let w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(w, &file)?;
    Ok(())
}

pub fn read_family(path: &Path) -> Result<EstimatorFamily> {
    let file: FamilyFile = serde_json::from_reader(BufReader::new(File::open(path)?))?;
    check_version(&file.schema_version)?;
    let models = file
        .models
        .into_iter()
        .map(|m| {
            if m.o_rowmajor.len() != m.m * file.k {
                return Err(Error::invalid(format!(
                    "model {}: coefficient payload has {} entries, expected {}",
                    m.m,
                    m.o_rowmajor.len(),
                    m.m * file.k
                )));
            }
            let o = Array2::from_shape_vec((m.m, file.k), m.o_rowmajor)
                .map_err(|e| Error::invalid(e.to_string()))?;
            let qv: Vec<f64> = m.q.iter().flatten().copied().collect();
            let q = Array2::from_shape_vec((file.k, file.k), qv)
                .map_err(|e| Error::invalid(e.to_string()))?;
            Ok(ModelEstimate {
                dim: m.m,
                pi: Array1::from(m.pi),
                q,
                o,
                diagnostics: ModelDiagnostics {
                    separation_score: m.diagnostics.separation_score,
                    attempt_index: m.diagnostics.attempt_index,
                    singular_values: m.diagnostics.singular_values,
                },
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let family = EstimatorFamily {
        basis: file.basis,
        n: file.n,
        k: file.k,
        method: file.method,
        models,
        aligned: file.aligned,
        reference_model: file.reference_model,
    };
    family.validate()?;
    Ok(family)
}

// ---------------------------------------------------------------------------
// selection results
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct SelectionFile {
    #[serde(default = "default_schema_version")]
    schema_version: String,
    variant: Variant,
    penalty: Penalty,
    per_state: Vec<StateSelectionFile>,
}

#[derive(Debug, Serialize, Deserialize)]
struct StateSelectionFile {
    state: usize,
    #[serde(rename = "M_hat")]
    m_hat: usize,
    #[serde(rename = "A_curve")]
    a_curve: Vec<(usize, f64)>,
    criterion_curve: Vec<(usize, f64)>,
}

pub fn write_selection(path: &Path, result: &SelectionResult) -> Result<()> {
    let per_state = result
        .per_state
        .iter()
        .enumerate()
        .map(|(state, s)| StateSelectionFile {
            state,
            m_hat: s.m_hat,
            a_curve: s.a_curve.iter().map(|(&m, &a)| (m, a)).collect(),
            criterion_curve: s.criterion_curve.iter().map(|(&m, &c)| (m, c)).collect(),
        })
        .collect();
    let file = SelectionFile {
        schema_version: SCHEMA_VERSION.to_string(),
        variant: result.variant,
        penalty: result.penalty.clone(),
        per_state,
    };
    serde_json::to_writer_pretty(BufWriter::new(File::create(path)?), &file)?;
    Ok(())
}

pub fn read_selection(path: &Path) -> Result<SelectionResult> {
    let file: SelectionFile = serde_json::from_reader(BufReader::new(File::open(path)?))?;
    check_version(&file.schema_version)?;
    let per_state = file
        .per_state
        .into_iter()
        .map(|s| crate::selection::StateSelection {
            m_hat: s.m_hat,
            a_curve: s.a_curve.into_iter().collect(),
            criterion_curve: s.criterion_curve.into_iter().collect(),
        })
        .collect();
    Ok(SelectionResult {
        variant: file.variant,
        per_state,
        penalty: file.penalty,
    })
}

/// One row per `(state, model)` pair for plotting the selection curves.
pub fn write_selection_csv(path: &Path, result: &SelectionResult) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["state", "M", "A", "criterion"])?;
    for (state, s) in result.per_state.iter().enumerate() {
        for (&m, &a) in &s.a_curve {
            let crit = s.criterion_curve[&m];
            w.write_record([
                state.to_string(),
                m.to_string(),
                format!("{a:.17e}"),
                format!("{crit:.17e}"),
            ])?;
        }
    }
    w.flush().map_err(std::io::Error::from)?;
    Ok(())
}

/// One row per `(state, rho)` grid point of the calibration curves.
pub fn write_jump_curves_csv(path: &Path, curves: &[JumpCurve]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["state", "rho", "M_hat"])?;
    for curve in curves {
        for (&rho, &m) in curve.rho_grid.iter().zip(&curve.m_hat) {
            w.write_record([
                curve.state.to_string(),
                format!("{rho:.17e}"),
                m.to_string(),
            ])?;
        }
    }
    w.flush().map_err(std::io::Error::from)?;
    Ok(())
}

/// `(M, E_VC)` rows of a cross-validation risk curve.
pub fn write_cv_csv(path: &Path, result: &CvResult) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["M", "E_VC"])?;
    for &(m, risk) in &result.risk_curve {
        w.write_record([m.to_string(), format!("{risk:.17e}")])?;
    }
    w.flush().map_err(std::io::Error::from)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// campaign results
// ---------------------------------------------------------------------------

/// One selected-estimator outcome of a simulation campaign.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub method: String,
    pub variant: String,
    pub calibration: String,
    pub n: usize,
    pub rep: usize,
    pub state: usize,
    #[serde(rename = "M_selected")]
    pub m_selected: usize,
    pub l2_error: f64,
    pub oracle_error: f64,
    #[serde(rename = "oracle_M")]
    pub oracle_m: usize,
}

pub fn write_results_csv(path: &Path, records: &[ResultRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush().map_err(std::io::Error::from)?;
    Ok(())
}

pub fn read_results_csv(path: &Path) -> Result<Vec<ResultRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for rec in r.deserialize() {
        out.push(rec?);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// diagnostics report
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
pub struct HdetFile {
    #[serde(default = "default_schema_version")]
    pub schema_version: String,
    pub dim: usize,
    pub det: f64,
    pub min_eig: f64,
}

pub fn write_hdet(path: &Path, report: &HdetReport) -> Result<()> {
    let file = HdetFile {
        schema_version: SCHEMA_VERSION.to_string(),
        dim: report.dim,
        det: report.determinant,
        min_eig: report.min_eigenvalue,
    };
    serde_json::to_writer_pretty(BufWriter::new(File::create(path)?), &file)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// simulation configuration
// ---------------------------------------------------------------------------

/// Ground-truth description for the `simulate` command; omitted fields fall
/// back to the three-state benchmark.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TruthSpec {
    pub q: Vec<Vec<f64>>,
    pub emissions: Vec<EmissionKind>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimConfig {
    #[serde(default = "default_schema_version")]
    pub schema_version: String,
    /// Number of observation triples; the sample has `n + 2` points.
    pub n: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub truth: Option<TruthSpec>,
}

pub fn read_sim_config(path: &Path) -> Result<SimConfig> {
    let cfg: SimConfig = serde_json::from_reader(BufReader::new(File::open(path)?))?;
    check_version(&cfg.schema_version)?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bases::BasisKind;
    use crate::selection::ModelDiagnostics;
    use tempfile::tempdir;

    fn small_family() -> EstimatorFamily {
        let models = [3usize, 5]
            .iter()
            .map(|&dim| ModelEstimate {
                dim,
                pi: Array1::from(vec![0.5, 0.5]),
                q: Array2::from_elem((2, 2), 0.5),
                o: Array2::from_shape_fn((dim, 2), |(r, c)| (r * 2 + c) as f64 / 10.0),
                diagnostics: ModelDiagnostics {
                    separation_score: Some(0.4),
                    attempt_index: Some(2),
                    singular_values: Some(vec![1.0, 0.5]),
                },
            })
            .collect();
        EstimatorFamily {
            basis: Basis::new(BasisKind::Trig, 64).unwrap(),
            n: 1234,
            k: 2,
            method: Method::Spectral,
            models,
            aligned: true,
            reference_model: Some(5),
        }
    }

    #[test]
    fn family_roundtrip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("family.json");
        let fam = small_family();
        write_family(&path, &fam).unwrap();
        let back = read_family(&path).unwrap();
        assert_eq!(back.n, fam.n);
        assert_eq!(back.k, fam.k);
        assert_eq!(back.model_grid(), fam.model_grid());
        assert_eq!(back.models[1].o, fam.models[1].o);
        assert_eq!(back.models[0].diagnostics.separation_score, Some(0.4));
        assert_eq!(back.reference_model, Some(5));
    }

    #[test]
    fn family_json_carries_spec_field_names() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("family.json");
        write_family(&path, &small_family()).unwrap();
        let raw: serde_json::Value =
            serde_json::from_reader(File::open(&path).unwrap()).unwrap();
        assert_eq!(raw["schema_version"], "1.0");
        assert!(raw["K"].is_number());
        assert_eq!(raw["basis"]["kind"], "trig");
        assert!(raw["models"][0]["M"].is_number());
        assert!(raw["models"][0]["O_rowmajor"].is_array());
        assert!(raw["models"][0]["Q"].is_array());
    }

    #[test]
    fn unknown_major_version_is_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("family.json");
        write_family(&path, &small_family()).unwrap();
        let mut raw: serde_json::Value =
            serde_json::from_reader(File::open(&path).unwrap()).unwrap();
        raw["schema_version"] = serde_json::json!("2.0");
        std::fs::write(&path, serde_json::to_string(&raw).unwrap()).unwrap();
        assert!(matches!(
            read_family(&path),
            Err(Error::SchemaVersion { .. })
        ));
    }

    #[test]
    fn observations_roundtrip_and_validation() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("obs.txt");
        let obs = vec![0.25, 0.5, 1.0, 0.0];
        write_observations(&path, &obs).unwrap();
        let back = read_observations(&path, ObservationFormat::Lines).unwrap();
        assert_eq!(back, obs);

        std::fs::write(&path, "0.5\n1.5\n").unwrap();
        assert!(matches!(
            read_observations(&path, ObservationFormat::Lines),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn csv_column_selection_skips_header() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("obs.csv");
        std::fs::write(&path, "time,velocity\n0,0.5\n1,0.25\n").unwrap();
        let obs = read_observations(&path, ObservationFormat::CsvColumn(1)).unwrap();
        assert_eq!(obs, vec![0.5, 0.25]);
    }

    #[test]
    fn results_csv_roundtrip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("results.csv");
        let records = vec![ResultRecord {
            method: "spectral".into(),
            variant: "standard".into(),
            calibration: "eachjump".into(),
            n: 50_000,
            rep: 1,
            state: 0,
            m_selected: 3,
            l2_error: 0.05,
            oracle_error: 0.04,
            oracle_m: 4,
        }];
        write_results_csv(&path, &records).unwrap();
        let back = read_results_csv(&path).unwrap();
        assert_eq!(back, records);
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with(
            "method,variant,calibration,n,rep,state,M_selected,l2_error,oracle_error,oracle_M"
        ));
    }

    #[test]
    fn sim_config_defaults_to_benchmark() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("sim.json");
        std::fs::write(&path, r#"{"n": 1000, "seed": 7}"#).unwrap();
        let cfg = read_sim_config(&path).unwrap();
        assert_eq!(cfg.n, 1000);
        assert_eq!(cfg.seed, 7);
        assert!(cfg.truth.is_none());
    }
}
