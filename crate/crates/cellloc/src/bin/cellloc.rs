use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use cellloc::baseline::HistogramModel;
use cellloc::eval::{compare, comparison_csv, evaluate, BaselineLocalizer, ErrorReport, Localizer};
use cellloc::ingest::{join_truth, parse_trace, write_trace, write_truth_sidecar, ParseOptions, RawScan, TraceFormat};
use cellloc::model::FingerprintModel;
use cellloc::pipeline::{
    prepare, run_sweep, sweep_csv, train_baseline, train_deeploc, truth_for, Corpus, ExperimentConfig, SweepParameter,
    SweepSpec, TruthSource,
};
use cellloc::synth::{generate_environment, generate_traces, EnvironmentSpec};

#[derive(Parser)]
#[command(name = "cellloc", version, about = "Cellular RSS fingerprint localization")]
struct Cli {
    /// Seed for every random choice; overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Experiment settings (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic environment and trace corpus.
    Synth {
        /// Built-in environment: urban or rural.
        #[arg(long, conflicts_with = "env")]
        preset: Option<String>,
        /// Environment spec file (TOML).
        #[arg(long)]
        env: Option<PathBuf>,
        /// Override the number of samples.
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Split a trace and train the fingerprint network.
    Train(CorpusArgs),
    /// Split a trace and train the histogram baseline.
    BaselineTrain(CorpusArgs),
    /// Estimate locations for scans with a trained model.
    Locate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        scans: PathBuf,
    },
    /// Score a model on a test trace.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        test: PathBuf,
        /// Ground-truth sidecar for the test trace.
        #[arg(long)]
        truth_file: Option<PathBuf>,
        /// Ground-truth protocol: oracle positions or the GPS fixes.
        #[arg(long, default_value = "oracle")]
        truth: TruthSource,
    },
    /// Retrain over a list of values of one parameter.
    Sweep {
        #[command(flatten)]
        corpus: CorpusArgs,
        /// Parameter to vary; falls back to the config's [sweep] table.
        #[arg(long)]
        param: Option<SweepParameter>,
        /// Comma-separated values; defaults to the parameter's usual range.
        #[arg(long, value_delimiter = ',')]
        values: Vec<String>,
    },
    /// Quantile comparison of two summary reports.
    Compare {
        #[arg(long)]
        deeploc: PathBuf,
        #[arg(long)]
        baseline: PathBuf,
    },
}

#[derive(Args)]
struct CorpusArgs {
    /// Trace file (JSON lines, or CSV with a .csv extension).
    #[arg(long)]
    trace: PathBuf,
    /// Ground-truth sidecar; without it the GPS fixes serve as truth.
    #[arg(long)]
    truth_file: Option<PathBuf>,
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let (mut cfg, sweep) = load_config(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    fs::create_dir_all(&cli.out).with_context(|| format!("creating {}", cli.out.display()))?;
    let out = cli.out.as_path();

    match cli.command {
        Command::Synth { preset, env, samples } => {
            let mut spec = match (preset, env) {
                (Some(name), None) => EnvironmentSpec::preset(&name)?,
                (None, Some(path)) => EnvironmentSpec::from_toml(&read(&path)?)?,
                _ => bail!("give exactly one of --preset or --env"),
            };
            if let Some(n) = samples {
                spec.n_samples = n;
            }
            let environment = generate_environment(&spec, cfg.seed)?;
            let speeds = (spec.speed_min_mps, spec.speed_max_mps);
            let traces =
                generate_traces(&environment, spec.n_samples, &spec.gps, speeds, spec.trajectory_len, cfg.seed + 1)?;
            let scans: Vec<RawScan> = traces.iter().map(|t| t.scan.clone()).collect();
            let truth: Vec<_> = traces.iter().map(|t| t.truth).collect();
            write_trace(create(&out.join("trace.jsonl"))?, &scans)?;
            write_truth_sidecar(create(&out.join("truth.jsonl"))?, &scans, &truth)?;
            let mut w = create(&out.join("towers.csv"))?;
            writeln!(w, "id,lat,lon,tx_power_dbm")?;
            for t in &environment.towers {
                let p = environment.to_geo(t.position);
                writeln!(w, "{},{:.7},{:.7},{:.2}", t.id, p.lat_deg, p.lon_deg, t.tx_power_dbm)?;
            }
            log::info!("wrote {} scans from {} towers to {}", scans.len(), environment.towers.len(), out.display());
        }
        Command::Train(args) => {
            let corpus = load_corpus(&args)?;
            let (train, test) = prepare(&corpus, &cfg)?;
            write_split(out, &test)?;
            let trained = train_deeploc(&train.scans, &cfg)?;
            trained.model.save(create(&out.join("model.json"))?)?;
            let mut w = create(&out.join("train_loss.csv"))?;
            writeln!(w, "epoch,mean_loss")?;
            for (i, l) in trained.report.loss_history.iter().enumerate() {
                writeln!(w, "{},{l:.6}", i + 1)?;
            }
            log::info!(
                "trained on {} samples ({} scans, {} cells); model in {}",
                trained.n_samples,
                train.len(),
                trained.model.grid.len(),
                out.display()
            );
        }
        Command::BaselineTrain(args) => {
            let corpus = load_corpus(&args)?;
            let (train, test) = prepare(&corpus, &cfg)?;
            write_split(out, &test)?;
            let trained = train_baseline(&train.scans, &cfg)?;
            trained.model.save_with_grid(Some(&trained.grid), create(&out.join("baseline.json"))?)?;
            log::info!("baseline trained on {} scans; model in {}", train.len(), out.display());
        }
        Command::Locate { model, scans } => {
            let loaded = load_localizer(&model)?;
            let scans = read_trace(&scans)?;
            let mut w = create(&out.join("estimates.csv"))?;
            writeln!(w, "timestamp_s,lat,lon,cell,max_posterior,entropy")?;
            for s in &scans {
                match loaded.as_localizer().locate(s) {
                    Ok(e) => writeln!(
                        w,
                        "{},{:.7},{:.7},{},{:.6},{:.6}",
                        s.timestamp_s,
                        e.point.lat_deg,
                        e.point.lon_deg,
                        e.cell,
                        e.posterior.max(),
                        e.posterior.entropy()
                    )?,
                    Err(err) => {
                        log::warn!("scan at {}: {err}", s.timestamp_s);
                        writeln!(w, "{},,,,,", s.timestamp_s)?
                    }
                }
            }
        }
        Command::Eval { model, test, truth_file, truth } => {
            let loaded = load_localizer(&model)?;
            let scans = read_trace(&test)?;
            let reference = match truth {
                TruthSource::Gps => scans.iter().map(|s| s.location).collect(),
                TruthSource::Oracle => {
                    let path = truth_file.context("--truth oracle needs --truth-file")?;
                    join_truth(&scans, &read_sidecar(&path)?)?
                }
            };
            let report = evaluate(loaded.system(), loaded.as_localizer(), &scans, &reference)?;
            let system = loaded.system();
            fs::write(out.join(format!("{system}_summary.csv")), report.summary_csv())?;
            fs::write(out.join(format!("{system}_cdf.csv")), report.cdf_csv())?;
            print!("{}", report.summary_csv());
        }
        Command::Sweep { corpus, param, values } => {
            let spec = match (param, sweep) {
                (Some(parameter), _) => SweepSpec { parameter, values },
                (None, Some(spec)) => spec,
                (None, None) => bail!("no sweep parameter given (--param or [sweep] in the config)"),
            };
            let corpus = load_corpus(&corpus)?;
            let rows = run_sweep(&spec, &corpus, &cfg);
            let csv = sweep_csv(spec.parameter, &rows);
            fs::write(out.join(format!("sweep_{}.csv", spec.parameter.name())), &csv)?;
            print!("{csv}");
        }
        Command::Compare { deeploc, baseline } => {
            let d = ErrorReport::parse_summary_csv(&read(&deeploc)?).map_err(anyhow::Error::msg)?;
            let b = ErrorReport::parse_summary_csv(&read(&baseline)?).map_err(anyhow::Error::msg)?;
            let csv = comparison_csv(&compare(&d, &b)?);
            fs::write(out.join("comparison.csv"), &csv)?;
            print!("{csv}");
        }
    }
    Ok(())
}

/// Splits the config file into experiment settings and an optional sweep.
fn load_config(path: Option<&Path>) -> Result<(ExperimentConfig, Option<SweepSpec>)> {
    let Some(path) = path else {
        return Ok((ExperimentConfig::default(), None));
    };
    let mut table: toml::Table = toml::from_str(&read(path)?).with_context(|| format!("parsing {}", path.display()))?;
    let sweep = match table.remove("sweep") {
        Some(v) => Some(v.try_into::<SweepSpec>().context("parsing [sweep]")?),
        None => None,
    };
    let cfg = ExperimentConfig::from_toml(&toml::to_string(&table)?)?;
    Ok((cfg, sweep))
}

enum LoadedModel {
    DeepLoc(FingerprintModel),
    Baseline(HistogramModel, cellloc::geo::VirtualGrid),
}

impl LoadedModel {
    fn system(&self) -> &'static str {
        match self {
            LoadedModel::DeepLoc(_) => "deeploc",
            LoadedModel::Baseline(..) => "baseline",
        }
    }

    fn as_localizer(&self) -> &dyn Localizer {
        match self {
            LoadedModel::DeepLoc(m) => m,
            LoadedModel::Baseline(..) => self,
        }
    }
}

impl Localizer for LoadedModel {
    fn grid(&self) -> &cellloc::geo::VirtualGrid {
        match self {
            LoadedModel::DeepLoc(m) => &m.grid,
            LoadedModel::Baseline(_, g) => g,
        }
    }

    fn locate(&self, scan: &RawScan) -> Result<cellloc::infer::LocationEstimate, cellloc::infer::InferError> {
        match self {
            LoadedModel::DeepLoc(m) => m.locate(scan),
            LoadedModel::Baseline(m, g) => BaselineLocalizer { model: m, grid: g }.locate(scan),
        }
    }
}

/// Either model kind, told apart by the format tag.
fn load_localizer(path: &Path) -> Result<LoadedModel> {
    let text = read(path)?;
    let tag: serde_json::Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    match tag.get("format").and_then(|f| f.as_str()) {
        Some(cellloc::model::MODEL_FORMAT) => Ok(LoadedModel::DeepLoc(FingerprintModel::load(text.as_bytes())?)),
        Some(cellloc::baseline::HISTOGRAM_FORMAT) => {
            let (m, grid) = HistogramModel::load_with_grid(text.as_bytes())?;
            let grid = grid.context("baseline file carries no grid")?;
            Ok(LoadedModel::Baseline(m, grid))
        }
        other => bail!("{}: unknown model format {other:?}", path.display()),
    }
}

fn load_corpus(args: &CorpusArgs) -> Result<Corpus> {
    let scans = read_trace(&args.trace)?;
    let truth = match &args.truth_file {
        Some(p) => join_truth(&scans, &read_sidecar(p)?)?,
        None => scans.iter().map(|s| s.location).collect(),
    };
    Ok(Corpus::new(scans, truth)?)
}

fn write_split(out: &Path, test: &Corpus) -> Result<()> {
    write_trace(create(&out.join("test.jsonl"))?, &test.scans)?;
    write_truth_sidecar(create(&out.join("test_truth.jsonl"))?, &test.scans, &truth_for(test, TruthSource::Oracle))?;
    Ok(())
}

fn read_trace(path: &Path) -> Result<Vec<RawScan>> {
    let format = if path.extension().is_some_and(|e| e == "csv") { TraceFormat::Csv } else { TraceFormat::JsonLines };
    let parsed = parse_trace(open(path)?, ParseOptions { format, strict: false })?;
    if parsed.malformed > 0 {
        log::warn!("{}: skipped {} malformed records", path.display(), parsed.malformed);
    }
    Ok(parsed.scans)
}

fn read_sidecar(path: &Path) -> Result<cellloc::ingest::ParsedTrace> {
    Ok(parse_trace(open(path)?, ParseOptions { format: TraceFormat::JsonLines, strict: true })?)
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path).with_context(|| format!("opening {}", path.display()))?))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}
