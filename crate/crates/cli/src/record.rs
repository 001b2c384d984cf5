//! Config-driven runs and their reports.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use gradfield_core::Model;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::samples::SampleSet;
use crate::stages::{self, StageOutput};
use crate::{to_json, write_file, CliError, Result};

pub const VERSION: &str = concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Verdict {
    Pass,
    Fail,
    /// Nothing was tested.
    None,
}

impl Verdict {
    fn combine(verdicts: impl IntoIterator<Item = bool>) -> Self {
        let mut out = Verdict::None;
        for v in verdicts {
            out = match (out, v) {
                (Verdict::Fail, _) | (_, false) => Verdict::Fail,
                _ => Verdict::Pass,
            };
        }
        out
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Timing {
    pub wall_seconds: f64,
    /// Recorded samples times thinning, per second of sampling.
    pub sweeps_per_second: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageSummary {
    pub verdict: Verdict,
    pub summary: Value,
}

/// Everything needed to reproduce and audit a run. `timing` and
/// `version` are the only fields that may differ on replay.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub experiment_id: String,
    pub config: ExperimentConfig,
    pub seed: u64,
    pub version: String,
    pub run_dir: PathBuf,
    /// Relative output path to its SHA-256.
    pub outputs: BTreeMap<String, String>,
    pub stages: BTreeMap<String, StageSummary>,
    pub verdict: Verdict,
    pub timing: Timing,
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Parses and validates a config file.
pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    ExperimentConfig::parse(&text)
}

/// Runs the pipeline of `config` under `out_dir/<id>/`. `seed` overrides
/// the config's seed.
pub fn run_config(config: &ExperimentConfig, out_dir: &Path, seed: Option<u64>) -> Result<RunRecord> {
    let started = Instant::now();
    let mut config = config.clone();
    if let Some(s) = seed {
        config.experiment.seed = s;
    }
    config.validate()?;
    let seed = config.experiment.seed;
    let run_dir = out_dir.join(&config.experiment.id);
    let dsc = config.domain.descriptor();
    let beta = config.beta.beta_at(dsc.eps, dsc.d)?.beta;
    let blocks = config.sampling.blocks;

    let t_sample = Instant::now();
    let set =
        SampleSet::generate(&dsc, &config.model, beta, &config.sampling, seed, 0).map_err(|e| e.context("sampling"))?;
    let sample_secs = t_sample.elapsed().as_secs_f64();
    let sweeps = (set.len() * config.sampling.thin) as f64;

    let mut outputs: Vec<StageOutput> = Vec::new();
    outputs.push(StageOutput {
        name: "sample".into(),
        verdict: None,
        summary: json!({ "samples": set.len(), "beta": beta, "diagnostics": set.sidecar.diagnostics }),
        files: vec![("samples.csv".into(), set.to_csv()), ("samples.json".into(), to_json(&set.sidecar))],
    });
    if let Some(c) = &config.oracle {
        outputs.push(stages::oracle_stage(&set, c, blocks).map_err(|e| e.context("oracle"))?);
    }
    if config.vortices.is_some() {
        outputs.push(stages::vortices_stage(&set).map_err(|e| e.context("vortices"))?);
    }
    if let Some(c) = &config.fluct {
        outputs.push(stages::fluct_stage(&set, c, blocks).map_err(|e| e.context("fluct"))?);
    }
    if let Some(c) = &config.brascamp_lieb {
        outputs.push(stages::brascamp_lieb_stage(&set, c, blocks).map_err(|e| e.context("brascamp_lieb"))?);
    }
    if let Some(c) = &config.contour {
        let sets = c
            .betas
            .iter()
            .enumerate()
            .map(|(k, &b)| {
                let offset = 1000 * (k as u64 + 1);
                SampleSet::generate(&dsc, &config.model, b, &config.sampling, seed, offset)
            })
            .collect::<Result<Vec<_>>>()
            .map_err(|e| e.context("contour sampling"))?;
        outputs.push(stages::contour_stage(&sets, c).map_err(|e| e.context("contour"))?);
    }
    if let Some(c) = &config.couple {
        outputs.push(stages::couple_stage(&set.domain, beta, c, seed).map_err(|e| e.context("couple"))?);
    }
    if let Some(c) = &config.walk {
        let Model::Gradient(p) = set.model else { unreachable!("validated") };
        outputs.push(stages::walk_stage(&p, beta, dsc.d, c, seed).map_err(|e| e.context("walk"))?);
    }

    let mut hashes = BTreeMap::new();
    let mut stage_map = BTreeMap::new();
    for out in &outputs {
        for (name, bytes) in &out.files {
            write_file(&run_dir.join(name), bytes)?;
            hashes.insert(name.clone(), sha256_hex(bytes));
        }
        let verdict = Verdict::combine(out.verdict);
        stage_map.insert(out.name.clone(), StageSummary { verdict, summary: out.summary.clone() });
    }
    let verdict = Verdict::combine(outputs.iter().filter_map(|o| o.verdict));
    let config_text = config.to_toml();
    write_file(&run_dir.join("config.toml"), config_text.as_bytes())?;
    hashes.insert("config.toml".into(), sha256_hex(config_text.as_bytes()));
    let record = RunRecord {
        experiment_id: config.experiment.id.clone(),
        seed,
        config,
        version: VERSION.into(),
        run_dir: run_dir.clone(),
        outputs: hashes,
        stages: stage_map,
        verdict,
        timing: Timing {
            wall_seconds: started.elapsed().as_secs_f64(),
            sweeps_per_second: if sample_secs > 0.0 { sweeps / sample_secs } else { 0.0 },
        },
    };
    let report = emit_report(&record);
    write_file(&run_dir.join("report.json"), &to_json(&report))?;
    write_file(&run_dir.join("run.json"), &to_json(&record))?;
    Ok(record)
}

/// Loads `config_path` and runs it.
pub fn run_experiment(config_path: &Path, out_dir: &Path, seed: Option<u64>) -> Result<RunRecord> {
    run_config(&load_config(config_path)?, out_dir, seed)
}

/// Single summary document: every stage's estimates, errors and
/// verdicts, and the plain tables written alongside. Contains no timing,
/// so it is reproducible under seed replay.
pub fn emit_report(run: &RunRecord) -> Value {
    let tables: Vec<&String> = run.outputs.keys().filter(|k| k.ends_with(".csv")).collect();
    let stages: serde_json::Map<String, Value> =
        run.stages.iter().map(|(k, s)| (k.clone(), json!({ "verdict": s.verdict, "summary": s.summary }))).collect();
    json!({
        "experiment_id": run.experiment_id,
        "seed": run.seed,
        "verdict": run.verdict,
        "stages": stages,
        "tables": tables,
    })
}

/// Reads `run.json` from a run directory.
pub fn load_record(run_dir: &Path) -> Result<RunRecord> {
    let path = run_dir.join("run.json");
    let text = std::fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Input { path, msg: e.to_string() })
}

/// Hashes of every file in a run directory except the run record.
pub fn output_hashes(run_dir: &Path) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    let entries = std::fs::read_dir(run_dir).map_err(|e| CliError::io(run_dir, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| CliError::io(run_dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if name == "run.json" {
            continue;
        }
        let bytes = std::fs::read(entry.path()).map_err(|e| CliError::io(entry.path(), e))?;
        out.insert(name, sha256_hex(&bytes));
    }
    Ok(out)
}
