//! Recorded configurations, in memory and as CSV plus a JSON sidecar.
//!
//! The CSV has one row per vertex per recorded sample, columns
//! `chain,sweep,vertex_index,theta`. The sidecar (same stem, `.json`)
//! carries what is needed to read the CSV back.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use gradfield_core::gradient::{eta_from_theta, GradientConfig};
use gradfield_core::sampler::sample_ensemble;
use gradfield_core::{ChainSpec, DomainDescriptor, LatticeDomain, Model, SpinConfig};
use serde::{Deserialize, Serialize};

use crate::config::{ModelSection, SamplingSection};
use crate::{to_json, write_file, CliError, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Sidecar {
    pub domain: DomainDescriptor,
    pub model: ModelSection,
    pub beta: f64,
    pub seed: u64,
    pub chains: usize,
    pub samples_per_chain: usize,
    pub thin: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostics: Option<serde_json::Value>,
}

/// Configurations grouped by chain.
#[derive(Debug, Clone)]
pub struct SampleSet {
    pub domain: Arc<LatticeDomain>,
    pub sidecar: Sidecar,
    pub model: Model,
    /// `chains[c][i] = (sweep, θ)`.
    pub chains: Vec<Vec<(u64, Vec<f64>)>>,
}

impl SampleSet {
    /// Runs the sampler.
    pub fn generate(
        descriptor: &DomainDescriptor,
        model_section: &ModelSection,
        beta: f64,
        sampling: &SamplingSection,
        seed: u64,
        stream_offset: u64,
    ) -> Result<Self> {
        let domain = Arc::new(descriptor.build()?);
        let model = model_section.to_model()?;
        let spec = ChainSpec {
            n_chains: sampling.chains,
            burnin: sampling.burnin,
            n_samples: sampling.samples,
            thin: sampling.thin,
            stream_offset,
            ..ChainSpec::new(model, beta, seed)
        };
        let ens = sample_ensemble(&domain, &spec)?;
        let mut chains = vec![Vec::with_capacity(sampling.samples); sampling.chains];
        for s in ens.samples {
            chains[s.chain].push((s.sweep, s.theta));
        }
        let sidecar = Sidecar {
            domain: descriptor.clone(),
            model: model_section.clone(),
            beta,
            seed,
            chains: sampling.chains,
            samples_per_chain: sampling.samples,
            thin: sampling.thin,
            diagnostics: Some(serde_json::to_value(&ens.diagnostics).expect("serializable")),
        };
        Ok(Self { domain, sidecar, model, chains })
    }

    pub fn beta(&self) -> f64 {
        self.sidecar.beta
    }

    pub fn len(&self) -> usize {
        self.chains.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn config(&self, theta: &[f64]) -> SpinConfig {
        SpinConfig { domain: Arc::clone(&self.domain), theta: theta.to_vec(), model: self.model }
    }

    pub fn eta(&self, theta: &[f64]) -> GradientConfig {
        eta_from_theta(&self.config(theta))
    }

    /// Applies `f` to every sample; the result is split into jackknife
    /// groups of `blocks` contiguous blocks per chain.
    pub fn grouped<T, F: Fn(&[f64]) -> T>(&self, blocks: usize, f: F) -> Vec<Vec<T>> {
        let mut out = Vec::new();
        for chain in &self.chains {
            let b = blocks.clamp(1, chain.len().max(1));
            let len = chain.len() / b;
            let mut it = chain.iter();
            for _ in 0..b {
                out.push(it.by_ref().take(len).map(|(_, th)| f(th)).collect());
            }
        }
        out.retain(|g: &Vec<T>| !g.is_empty());
        out
    }

    pub fn to_csv(&self) -> Vec<u8> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["chain", "sweep", "vertex_index", "theta"]).expect("in-memory write");
        for (c, chain) in self.chains.iter().enumerate() {
            for (sweep, theta) in chain {
                for (v, t) in theta.iter().enumerate() {
                    w.write_record([c.to_string(), sweep.to_string(), v.to_string(), t.to_string()])
                        .expect("in-memory write");
                }
            }
        }
        w.into_inner().expect("in-memory flush")
    }

    /// Writes `path` (CSV) and its sidecar; returns the sidecar path.
    pub fn write(&self, path: &Path) -> Result<PathBuf> {
        write_file(path, &self.to_csv())?;
        let side = sidecar_path(path);
        write_file(&side, &to_json(&self.sidecar))?;
        Ok(side)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let side = sidecar_path(path);
        let text = std::fs::read_to_string(&side).map_err(|e| CliError::io(&side, e))?;
        let sidecar: Sidecar =
            serde_json::from_str(&text).map_err(|e| CliError::Input { path: side.clone(), msg: e.to_string() })?;
        let domain = Arc::new(sidecar.domain.build()?);
        let model = sidecar.model.to_model()?;
        let bad = |msg: String| CliError::Input { path: path.to_path_buf(), msg };
        let mut rdr = csv::Reader::from_path(path).map_err(|e| bad(e.to_string()))?;
        let nv = domain.num_vertices();
        let mut chains: Vec<Vec<(u64, Vec<f64>)>> = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| bad(e.to_string()))?;
            if rec.len() != 4 {
                return Err(bad(format!("row {}: expected 4 columns", line + 2)));
            }
            let field = |i: usize| rec[i].trim().to_string();
            let num_err = |i: usize| bad(format!("row {}: cannot parse {:?}", line + 2, &rec[i]));
            let c: usize = field(0).parse().map_err(|_| num_err(0))?;
            let sweep: u64 = field(1).parse().map_err(|_| num_err(1))?;
            let v: usize = field(2).parse().map_err(|_| num_err(2))?;
            let t: f64 = field(3).parse().map_err(|_| num_err(3))?;
            if c >= chains.len() {
                chains.resize_with(c + 1, Vec::new);
            }
            let chain = &mut chains[c];
            if v == 0 {
                chain.push((sweep, Vec::with_capacity(nv)));
            }
            match chain.last_mut() {
                Some((s, th)) if *s == sweep && th.len() == v && v < nv => th.push(t),
                _ => return Err(bad(format!("row {}: vertices must appear in order 0..{nv} per sample", line + 2))),
            }
        }
        if chains.iter().flatten().any(|(_, th)| th.len() != nv) {
            return Err(bad("incomplete sample".into()));
        }
        Ok(Self { domain, sidecar, model, chains })
    }
}

pub fn sidecar_path(csv: &Path) -> PathBuf {
    csv.with_extension("json")
}
