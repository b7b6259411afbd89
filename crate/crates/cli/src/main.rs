mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use gpmorse::dynamics::oracle::serve;
use gpmorse::dynamics::{BuiltinFlow, Dynamics, System, TrajectoryDataset};
use gpmorse::gp::GpSurrogate;
use gpmorse::morse::morse_graph;
use gpmorse::mvmap::MultivaluedMap;
use gpmorse::pipeline::{self, files, EvaluationReport, GroundTruth, Pipeline, PipelineConfig};
use gpmorse::{Error, Result};

/// Regions of attraction from Gaussian-process surrogates and Morse graphs.
#[derive(Parser)]
#[command(name = "gpmorse", version)]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "GPMORSE_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Run configuration file (TOML, `schema_version = 1`).
    #[arg(long, conflicts_with = "system")]
    config: Option<PathBuf>,
    /// Start from a built-in system's defaults instead of a file.
    #[arg(long)]
    system: Option<String>,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Shell command of an external dynamics oracle; replaces the
    /// built-in flow.
    #[arg(long)]
    oracle: Option<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<PipelineConfig> {
        let mut c = match (&self.config, &self.system) {
            (Some(path), _) => config::read(path)?,
            (None, Some(name)) => {
                System::from_name(name, None)?;
                PipelineConfig::for_system(name)
            }
            (None, None) => return Err(Error::Config("pass --config <file> or --system <name>".into())),
        };
        if let Some(seed) = self.seed {
            c.seed = seed;
        }
        if let Some(cmd) = &self.oracle {
            c.system.oracle = Some(cmd.clone());
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    /// Confidence map of the GP surrogate.
    Gp,
    /// Corner propagation through the true dynamics.
    True,
}

#[derive(Subcommand)]
enum Command {
    /// Print a system's default configuration.
    Init {
        /// Built-in system name.
        system: String,
    },
    /// Step 1: collect the initial dataset.
    Sample {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Step 2: fit the surrogate to a dataset.
    Fit {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Step 3: multivalued map, Morse graph and regions of attraction.
    Analyze {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, value_enum, default_value = "gp")]
        mode: Mode,
        /// Fitted model; without one, gp mode samples and fits first.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Confidence parameter in (0, 1); defaults to the config's
        /// initial value.
        #[arg(long)]
        delta: Option<f64>,
        /// Ground-truth raster to score against.
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Step 4: more refinement rounds on a saved run.
    Refine {
        /// Run directory written by `run` or a previous `refine`.
        #[arg(long)]
        run: PathBuf,
        /// Refinement plan; defaults to the run's stored config.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the number of rounds.
        #[arg(long)]
        rounds: Option<usize>,
    },
    /// Steps 1 to 4, written to `<out>/<config hash>/`.
    Run {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Ground-truth raster to score against.
        #[arg(long, conflicts_with = "score")]
        truth: Option<PathBuf>,
        /// Compute the ground truth first and score every round.
        #[arg(long)]
        score: bool,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Reference region of attraction by dense forward simulation.
    GroundTruth {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a saved map against a ground-truth raster.
    Score {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        map: PathBuf,
        #[arg(long)]
        truth: PathBuf,
    },
    /// Serve a built-in system over the oracle line protocol on stdio.
    Oracle {
        #[arg(long)]
        system: String,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_)
        | Error::InvalidArgument(_)
        | Error::InvalidGrid(_)
        | Error::InvalidBox(_)
        | Error::DimensionMismatch { .. } => 3,
        Error::Io { .. } => 4,
        Error::Parse { .. } => 5,
        Error::Cholesky { .. } | Error::NonFinite { .. } | Error::DegenerateData(_) => 6,
        Error::Oracle(_) => 7,
        Error::Refinement(_) | Error::Goal(_) => 8,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: --threads: {e}");
            return ExitCode::from(2);
        }
    }
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.to_path_buf(),
            source: e,
        })?;
    }
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn mkdir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn print_report(report: &EvaluationReport) {
    let text = report.to_text();
    for line in text.lines().skip(1).take_while(|l| !l.starts_with('#')) {
        println!("{line}");
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Init { system } => {
            System::from_name(&system, None)?;
            print!("{}", config::render(&PipelineConfig::for_system(&system)));
        }
        Command::Sample { cfg, out } => {
            let c = cfg.load()?;
            let data = pipeline::initial_dataset(&c)?;
            data.write(&out)?;
            println!("pairs = {}", data.len());
            println!("propagation_count = {}", data.propagation_count);
        }
        Command::Fit { cfg, data, out } => {
            let c = cfg.load()?;
            let data = TrajectoryDataset::read(&data)?;
            let model = pipeline::fit_model(&c, &data)?;
            model.write(&out)?;
            for (l, o) in model.outputs().iter().enumerate() {
                println!(
                    "output {l}: lengthscales = {:?} signal_variance = {} noise_ratio = {} log_likelihood = {}",
                    o.lengthscales(),
                    o.signal_variance(),
                    o.noise_ratio(),
                    o.log_likelihood()
                );
            }
        }
        Command::Analyze {
            cfg,
            mode,
            model,
            delta,
            truth,
            out,
        } => {
            let c = cfg.load()?;
            let truth = truth.map(|p| GroundTruth::read(&p)).transpose()?;
            mkdir(&out)?;
            let report = match (mode, model) {
                (Mode::True, Some(_)) => {
                    return Err(Error::Config("--model applies to gp mode only".into()));
                }
                (Mode::True, None) => {
                    let a = pipeline::analyze_true(&c, truth.as_ref())?;
                    a.map.write(&out.join(files::MAP))?;
                    a.result.write_dot(&out.join(files::MORSE))?;
                    a.result.write_raster(&out.join(files::RASTER))?;
                    a.report
                }
                (Mode::Gp, Some(path)) => {
                    let model = GpSurrogate::read(&path)?;
                    let a = pipeline::analyze_gp(&c, &model, delta.unwrap_or(c.delta.initial), truth.as_ref())?;
                    a.map.write(&out.join(files::MAP))?;
                    a.result.write_dot(&out.join(files::MORSE))?;
                    a.result.write_raster(&out.join(files::RASTER))?;
                    a.report
                }
                (Mode::Gp, None) => {
                    let mut c = c;
                    if let Some(d) = delta {
                        c.delta.initial = d;
                        c.validate()?;
                    }
                    let p = Pipeline::start(c, truth)?;
                    p.save(&out)?;
                    p.report()
                }
            };
            report.write(&out.join(files::REPORT))?;
            print_report(&report);
        }
        Command::Refine { run, config: cfg, rounds } => {
            let mut c = cfg.map(|p| config::read(&p)).transpose()?;
            if let Some(n) = rounds {
                let base = match c.take() {
                    Some(c) => c,
                    None => stored_config(&run)?,
                };
                c = Some(PipelineConfig {
                    refine: gpmorse::pipeline::RefineSection { rounds: n, ..base.refine.clone() },
                    ..base
                });
            }
            let mut p = Pipeline::load(&run, c)?;
            let before = p.rounds_done();
            p.refine_all()?;
            // zero rounds leaves the run directory untouched
            if p.rounds_done() > before {
                p.save(&run)?;
            }
            print_report(&p.report());
        }
        Command::Run { cfg, truth, score, out } => {
            let c = cfg.load()?;
            let truth = match (truth, score) {
                (Some(path), _) => Some(GroundTruth::read(&path)?),
                (None, true) => Some(pipeline::ground_truth(&c)?),
                (None, false) => None,
            };
            let dir = out.join(c.hash());
            let p = pipeline::run(&c, truth)?;
            p.save(&dir)?;
            println!("run_dir = {}", dir.display());
            print_report(&p.report());
        }
        Command::GroundTruth { cfg, out } => {
            let c = cfg.load()?;
            let t = pipeline::ground_truth(&c)?;
            write(&out, &t.to_text())?;
            println!("inside_fraction = {}", t.inside_fraction());
            println!("non_finite_cells = {}", t.flagged());
        }
        Command::Score { cfg, map, truth } => {
            let c = cfg.load()?;
            let goal = c
                .goal()?
                .ok_or_else(|| Error::Config("scoring needs a goal region".into()))?;
            let map = MultivaluedMap::read(&map)?;
            let truth = GroundTruth::read(&truth)?;
            let s = pipeline::score(&morse_graph(&map), &truth, &goal)?;
            println!("roa_ratio = {}", s.roa_ratio);
            println!("fp_fraction = {}", s.fp_fraction);
        }
        Command::Oracle { system } => {
            let system = System::from_name(&system, None)?;
            let dim = system.dim();
            let stdin = std::io::stdin();
            serve(stdin.lock(), std::io::stdout().lock(), dim, |tau, x| {
                BuiltinFlow::with_default_step(system.clone(), tau)?.flow(x)
            })?;
        }
    }
    Ok(())
}

fn stored_config(run: &Path) -> Result<PipelineConfig> {
    let path = run.join(files::CONFIG);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::Io { path: path.clone(), source: e })?;
    PipelineConfig::from_toml(&text)
}
