use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use gradfield_cli::config::{
    ContourSection, CoupleSection, FluctSection, ModelKind, ModelSection, PhiKind, SamplingSection, WalkSection,
};
use gradfield_cli::record::{emit_report, load_record, run_experiment};
use gradfield_cli::stages::{self, StageOutput};
use gradfield_cli::{exit, to_json, write_file, CliError, Result, SampleSet, Verdict};
use gradfield_core::{BetaSchedule, DomainDescriptor};

#[derive(Parser)]
#[command(name = "gradfield", version, about = "Monte Carlo experiments for XY and gradient fields")]
struct Cli {
    /// Master seed.
    #[arg(long, global = true, default_value_t = 1)]
    seed: u64,
    /// Worker threads (defaults to the number of cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Directory for outputs given by relative paths.
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ModelArgs {
    #[arg(long, value_enum)]
    model: ModelKind,
    /// Lattice spacing.
    #[arg(long)]
    eps: f64,
    /// Inverse temperature; overrides --schedule.
    #[arg(long)]
    beta: Option<f64>,
    /// `A,C` for beta = A + C |log eps|; defaults to 10,(9d+1).
    #[arg(long, value_delimiter = ',', num_args = 2)]
    schedule: Option<Vec<f64>>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    h: Option<f64>,
    /// Box corners `lo1,..,lod,hi1,..,hid`; defaults to the unit square.
    #[arg(long = "box", value_delimiter = ',')]
    bbox: Option<Vec<f64>>,
}

impl ModelArgs {
    fn section(&self) -> ModelSection {
        ModelSection { kind: self.model, lambda: self.lambda, delta: self.delta, h: self.h }
    }

    fn descriptor(&self) -> Result<DomainDescriptor> {
        let (lo, hi) = match &self.bbox {
            None => (vec![0.0; 2], vec![1.0; 2]),
            Some(b) if b.len() % 2 == 0 && !b.is_empty() => (b[..b.len() / 2].to_vec(), b[b.len() / 2..].to_vec()),
            Some(_) => return Err(CliError::Usage("--box needs 2d comma-separated numbers".into())),
        };
        Ok(DomainDescriptor { d: lo.len(), eps: self.eps, box_lo: lo, box_hi: hi })
    }

    fn beta(&self, d: usize) -> Result<f64> {
        let schedule = match (self.beta, &self.schedule) {
            (Some(b), _) => BetaSchedule::Constant { beta0: b },
            (None, Some(ac)) => BetaSchedule::Log { offset: ac[0], slope: ac[1] },
            (None, None) => BetaSchedule::default_for(d),
        };
        Ok(schedule.beta_at(self.eps, d)?.beta)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Sample configurations and write them as CSV with a JSON sidecar.
    Sample {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, default_value_t = 4)]
        chains: usize,
        /// Post-pilot burn-in; defaults to 20 autocorrelation times.
        #[arg(long)]
        burnin: Option<usize>,
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        #[arg(long, default_value_t = 1)]
        thin: usize,
        #[arg(long, default_value = "samples.csv")]
        out: PathBuf,
    },
    /// Vortex census of every sample in a sample CSV.
    Vortices {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value = "vortices.json")]
        out: PathBuf,
    },
    /// Draws from the XY / truncated-convex coupling.
    Couple {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, default_value_t = 200)]
        draws: usize,
        #[arg(long, default_value_t = 5)]
        thin: usize,
        #[arg(long, default_value = "couple.csv")]
        out: PathBuf,
    },
    /// Characteristic-function test of the fluctuation functional.
    Fluct {
        #[arg(long, value_enum, value_delimiter = ',', default_value = "bump")]
        phi: Vec<PhiKind>,
        #[arg(long, value_delimiter = ',')]
        tgrid: Option<Vec<f64>>,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value_t = 4)]
        blocks: usize,
        #[arg(long, default_value = "fluct.csv")]
        out: PathBuf,
    },
    /// Contour probabilities and their exponential rate.
    Contour {
        #[arg(long = "in", value_delimiter = ',', required = true)]
        input: Vec<PathBuf>,
        /// Canonical edge indices; defaults to a central edge.
        #[arg(long, value_delimiter = ',')]
        edges: Option<Vec<usize>>,
        #[arg(long, value_delimiter = ',', required = true)]
        a: Vec<f64>,
        #[arg(long, default_value = "contour.csv")]
        out: PathBuf,
    },
    /// Random walk in the dynamic environment and its diffusive scaling.
    Walk {
        /// Diffusive scale.
        #[arg(long)]
        eps: f64,
        #[arg(long, default_value_t = 1.0)]
        beta: f64,
        /// quadratic | truncated:<delta> | anharmonic:<lambda>
        #[arg(long, default_value = "quadratic")]
        potential: String,
        /// Macroscopic time horizon.
        #[arg(long, default_value_t = 1.0)]
        horizon: f64,
        #[arg(long, default_value_t = 500)]
        pairs: usize,
        #[arg(long, default_value_t = 1)]
        walkers: usize,
        #[arg(long, default_value_t = 0.01)]
        dt: f64,
        #[arg(long, default_value_t = 2)]
        dim: usize,
        #[arg(long, default_value = "walk.csv")]
        out: PathBuf,
    },
    /// Summary document of a finished run directory.
    Report {
        run_dir: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Execute a config file.
    Run { config: PathBuf },
}

fn resolve(out_dir: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        out_dir.join(p)
    }
}

/// Writes a stage's files next to `out`: the first file takes `out`'s
/// name when the extension matches, the rest keep theirs.
fn write_stage(out: &Path, stage: &StageOutput) -> Result<()> {
    let dir = out.parent().unwrap_or(Path::new("."));
    let ext = out.extension().and_then(|e| e.to_str()).unwrap_or("");
    let mut renamed = false;
    for (name, bytes) in &stage.files {
        let target = if !renamed && name.ends_with(&format!(".{ext}")) {
            renamed = true;
            out.to_path_buf()
        } else {
            dir.join(name)
        };
        write_file(&target, bytes)?;
    }
    Ok(())
}

fn verdict_code(v: Option<bool>) -> i32 {
    match v {
        Some(false) => exit::FAIL,
        _ => exit::PASS,
    }
}

fn parse_potential(s: &str) -> Result<gradfield_core::Potential> {
    use gradfield_core::Potential;
    let bad = || CliError::Usage(format!("unknown potential {s:?}"));
    let (name, arg) = s.split_once(':').unwrap_or((s, ""));
    let num = || arg.parse::<f64>().map_err(|_| bad());
    Ok(match name {
        "quadratic" => Potential::quadratic(),
        "truncated" => {
            let d = num()?;
            if !(d > 0.0 && d < std::f64::consts::FRAC_PI_2) {
                return Err(CliError::Usage(format!("delta must lie in (0, pi/2), got {d}")));
            }
            Potential::truncated_convex(d)?
        }
        "anharmonic" => Potential::anharmonic(num()?)?,
        _ => return Err(bad()),
    })
}

fn run(cli: Cli) -> Result<i32> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| CliError::Usage(e.to_string()))?;
    }
    let od = &cli.out_dir;
    match cli.command {
        Command::Sample { model, chains, burnin, samples, thin, out } => {
            let dsc = model.descriptor()?;
            let section = model.section();
            section.validate()?;
            let sampling = SamplingSection { chains, samples, thin, burnin, blocks: 1 };
            let set = SampleSet::generate(&dsc, &section, model.beta(dsc.d)?, &sampling, cli.seed, 0)?;
            set.write(&resolve(od, &out))?;
            Ok(exit::PASS)
        }
        Command::Vortices { input, out } => {
            let set = SampleSet::read(&resolve(od, &input))?;
            let stage = stages::vortices_stage(&set)?;
            write_stage(&resolve(od, &out), &stage)?;
            Ok(exit::PASS)
        }
        Command::Couple { model, draws, thin, out } => {
            if model.model != ModelKind::Xy {
                return Err(CliError::Usage("couple samples the plain XY model (--model xy)".into()));
            }
            let delta = model.delta.unwrap_or(gradfield_core::DEFAULT_DELTA);
            let dsc = model.descriptor()?;
            let dom = Arc::new(dsc.build()?);
            let cfg = CoupleSection { delta, draws, thin, pilot: 500 };
            if !(delta > 0.0 && delta < std::f64::consts::FRAC_PI_2) {
                return Err(CliError::Usage(format!("delta must lie in (0, pi/2), got {delta}")));
            }
            let stage = stages::couple_stage(&dom, model.beta(dsc.d)?, &cfg, cli.seed)?;
            write_stage(&resolve(od, &out), &stage)?;
            Ok(verdict_code(stage.verdict))
        }
        Command::Fluct { phi, tgrid, input, blocks, out } => {
            let set = SampleSet::read(&resolve(od, &input))?;
            let stage = stages::fluct_stage(&set, &FluctSection { phi, tgrid }, blocks)?;
            write_stage(&resolve(od, &out), &stage)?;
            Ok(verdict_code(stage.verdict))
        }
        Command::Contour { input, edges, a, out } => {
            let sets = input.iter().map(|p| SampleSet::read(&resolve(od, p))).collect::<Result<Vec<_>>>()?;
            let betas = sets.iter().map(SampleSet::beta).collect();
            let stage = stages::contour_stage(&sets, &ContourSection { betas, a, edges })?;
            write_stage(&resolve(od, &out), &stage)?;
            Ok(verdict_code(stage.verdict))
        }
        Command::Walk { eps, beta, potential, horizon, pairs, walkers, dt, dim, out } => {
            let p = parse_potential(&potential)?;
            let cfg = WalkSection { eps, t: horizon, pairs, walkers, dt, burn: 5.0 };
            let stage = stages::walk_stage(&p, beta, dim, &cfg, cli.seed)?;
            write_stage(&resolve(od, &out), &stage)?;
            Ok(verdict_code(stage.verdict))
        }
        Command::Report { run_dir, out } => {
            let rec = load_record(&resolve(od, &run_dir))?;
            let report = to_json(&emit_report(&rec));
            match out {
                Some(p) => write_file(&resolve(od, &p), &report)?,
                None => print!("{}", String::from_utf8_lossy(&report)),
            }
            Ok(match rec.verdict {
                Verdict::Fail => exit::FAIL,
                _ => exit::PASS,
            })
        }
        Command::Run { config } => {
            let rec = run_experiment(&config, od, Some(cli.seed).filter(|_| seed_given()))?;
            println!("{} {:?} -> {}", rec.experiment_id, rec.verdict, rec.run_dir.display());
            Ok(match rec.verdict {
                Verdict::Fail => exit::FAIL,
                _ => exit::PASS,
            })
        }
    }
}

/// `run` keeps the config's seed unless `--seed` is passed explicitly.
fn seed_given() -> bool {
    std::env::args().any(|a| a == "--seed" || a.starts_with("--seed="))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { exit::USAGE } else { exit::PASS };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
