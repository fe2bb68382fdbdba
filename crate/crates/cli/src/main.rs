use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use serde_json::json;

use phmc_lar::decode::viterbi;
use phmc_lar::em::{train, EmConfig};
use phmc_lar::experiments::{
    mask_labels, mpe, run_forecast_experiment, run_inference_experiment, write_csv, ForecastConfig, InferenceConfig,
    SweepKind,
};
use phmc_lar::forecast::forecast;
use phmc_lar::io::{model_to_json, read_model, read_sequence, report_to_json, sequence_to_json};
use phmc_lar::model::{reference_model, simulate_with_rng, Hyper, LabelSet, LabeledSequence};
use phmc_lar::smoothing::smooth;
use phmc_lar::{Error, Result};

/// Partially hidden Markov chain linear autoregressive models.
#[derive(Parser)]
#[command(name = "phmc", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate fully labelled sequences from a model.
    Simulate {
        /// Model JSON; the built-in reference model if omitted.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Observations per sequence, excluding the initial values.
        #[arg(long)]
        length: usize,
        #[arg(long, default_value_t = 1)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory; files are named seq0.json, seq1.json, ...
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit a model with multi-restart EM.
    Train {
        /// Sequence files: paths or glob patterns.
        #[arg(long, required = true, num_args = 1..)]
        data: Vec<String>,
        /// Number of states.
        #[arg(long = "K")]
        k: usize,
        /// Autoregressive order.
        #[arg(long)]
        p: usize,
        /// Convergence threshold on the largest parameter change.
        #[arg(long, default_value_t = 1e-6)]
        kappa: f64,
        #[arg(long, default_value_t = 500)]
        max_iter: usize,
        #[arg(long, default_value_t = 5)]
        restarts: usize,
        /// EM iterations per restart.
        #[arg(long, default_value_t = 10)]
        restart_iters: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory for model.json and report.json.
        #[arg(long)]
        out: PathBuf,
    },
    /// Most probable state path of one sequence.
    Infer {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Write the result here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Point forecasts past the end of one sequence.
    Forecast {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        horizon: usize,
        /// Comma-separated future states (1-based), `_` for hidden; all hidden if omitted.
        #[arg(long)]
        future_states: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Decoding error and log-likelihood on fully labelled sequences.
    Eval {
        #[arg(long)]
        model: PathBuf,
        /// Sequence files: paths or glob patterns. Their labels are the ground truth.
        #[arg(long, required = true, num_args = 1..)]
        data: Vec<String>,
        /// Percentage of labels revealed to the decoder.
        #[arg(long, default_value_t = 0.0)]
        percent: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a seeded experiment described by a JSON config and write a CSV table.
    Experiment {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; overrides `out_dir` in the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
enum ExperimentKind {
    Inference,
    Forecast,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExperimentFile {
    kind: ExperimentKind,
    /// Generator model path, relative to the config file.
    model: Option<PathBuf>,
    sweep: SweepKind,
    values: Vec<f64>,
    out_dir: Option<PathBuf>,
    seed: Option<u64>,
    replicates: Option<usize>,
    train_sequences: Option<usize>,
    train_length: Option<usize>,
    test_sequences: Option<usize>,
    test_length: Option<usize>,
    train_percent: Option<f64>,
    test_percent: Option<f64>,
    noise_sd: Option<f64>,
    horizon: Option<usize>,
    kappa: Option<f64>,
    max_iter: Option<usize>,
    restarts: Option<usize>,
    restart_iters: Option<usize>,
}

fn resolve_paths(patterns: &[String]) -> Result<Vec<PathBuf>> {
    let mut paths = Vec::new();
    for pat in patterns {
        let matches = glob::glob(pat).map_err(|e| Error::InvalidConfig(format!("bad pattern {pat}: {e}")))?;
        let mut found: Vec<PathBuf> = matches.filter_map(|p| p.ok()).collect();
        if found.is_empty() && Path::new(pat).exists() {
            found.push(PathBuf::from(pat));
        }
        found.sort();
        paths.extend(found);
    }
    if paths.is_empty() {
        return Err(Error::EmptyInput("no sequence files matched"));
    }
    Ok(paths)
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            fs::write(p, format!("{text}\n"))?;
        }
        None => {
            let mut stdout = std::io::stdout().lock();
            match writeln!(stdout, "{text}") {
                Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => return Err(e.into()),
                _ => {}
            }
        }
    }
    Ok(())
}

fn parse_future(spec: Option<&str>, horizon: usize, k: usize) -> Result<Vec<LabelSet>> {
    let Some(spec) = spec else {
        return Ok(vec![LabelSet::full(k); horizon]);
    };
    let labels = spec
        .split(',')
        .map(|tok| match tok.trim() {
            "_" | "null" => Ok(LabelSet::full(k)),
            s => match s.parse::<usize>() {
                Ok(v) if (1..=k).contains(&v) => Ok(LabelSet::singleton(v - 1)),
                _ => Err(Error::InvalidConfig(format!("future state {s:?} is not in 1..={k} or _"))),
            },
        })
        .collect::<Result<Vec<_>>>()?;
    if labels.len() != horizon {
        return Err(Error::ShapeMismatch(format!("{} future states for horizon {horizon}", labels.len())));
    }
    Ok(labels)
}

fn one_based(states: &[usize]) -> Vec<usize> {
    states.iter().map(|s| s + 1).collect()
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { model, length, count, seed, out } => {
            let m = match model {
                Some(p) => read_model(&p)?,
                None => reference_model(),
            };
            if length == 0 || count == 0 {
                return Err(Error::InvalidConfig("length and count must be >= 1".into()));
            }
            fs::create_dir_all(&out)?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for i in 0..count {
                let (_, seq) = simulate_with_rng(&m, length, &mut rng)?;
                fs::write(out.join(format!("seq{i}.json")), sequence_to_json(&seq, m.k())? + "\n")?;
            }
        }
        Command::Train { data, k, p, kappa, max_iter, restarts, restart_iters, seed, out } => {
            let hyper = Hyper::new(k, p)?;
            let seqs = resolve_paths(&data)?
                .iter()
                .map(|path| read_sequence(path, k))
                .collect::<Result<Vec<LabeledSequence>>>()?;
            let cfg = EmConfig { kappa, max_iter, restarts, restart_iters, seed };
            let rep = train(&seqs, hyper, &cfg)?;
            fs::create_dir_all(&out)?;
            fs::write(out.join("model.json"), model_to_json(&rep.model)? + "\n")?;
            fs::write(out.join("report.json"), report_to_json(&rep)? + "\n")?;
        }
        Command::Infer { model, data, out } => {
            let m = read_model(&model)?;
            let seq = read_sequence(&data, m.k())?;
            let d = viterbi(&m, &seq)?;
            let text = json!({"states": one_based(&d.states), "log_joint": d.log_joint});
            emit(out.as_deref(), &serde_json::to_string_pretty(&text)?)?;
        }
        Command::Forecast { model, data, horizon, future_states, out } => {
            let m = read_model(&model)?;
            let seq = read_sequence(&data, m.k())?;
            let future = parse_future(future_states.as_deref(), horizon, m.k())?;
            let f = forecast(&m, &seq, horizon, &future)?;
            let text = json!({"predictions": f.predictions, "weights": f.state_weights});
            emit(out.as_deref(), &serde_json::to_string_pretty(&text)?)?;
        }
        Command::Eval { model, data, percent, seed, out } => {
            let m = read_model(&model)?;
            let mut truth = Vec::new();
            let mut pred = Vec::new();
            let mut loglik = 0.0;
            for (i, path) in resolve_paths(&data)?.iter().enumerate() {
                let seq = read_sequence(path, m.k())?;
                let states = seq.observed_path().ok_or_else(|| Error::InvalidSequence {
                    reason: format!("{} is not fully labelled", path.display()),
                })?;
                let shown = mask_labels(&seq, percent, m.k(), seed.wrapping_add(i as u64))?;
                loglik += smooth(&m, &shown)?.loglik;
                pred.push(viterbi(&m, &shown)?.states);
                truth.push(states);
            }
            let text = json!({"sequences": truth.len(), "mpe": mpe(&truth, &pred)?, "loglik": loglik});
            emit(out.as_deref(), &serde_json::to_string_pretty(&text)?)?;
        }
        Command::Experiment { config, out } => run_experiment(&config, out)?,
    }
    Ok(())
}

fn run_experiment(config: &Path, out: Option<PathBuf>) -> Result<()> {
    let file: ExperimentFile = serde_json::from_str(&fs::read_to_string(config)?)?;
    let base = config.parent().unwrap_or(Path::new("."));
    let generator = match &file.model {
        Some(p) => read_model(&base.join(p))?,
        None => reference_model(),
    };
    let out_dir = out
        .or_else(|| file.out_dir.as_ref().map(|d| base.join(d)))
        .ok_or_else(|| Error::InvalidConfig("no output directory: pass --out or set out_dir".into()))?;
    let defaults = EmConfig::default();
    let em = EmConfig {
        kappa: file.kappa.unwrap_or(defaults.kappa),
        max_iter: file.max_iter.unwrap_or(defaults.max_iter),
        restarts: file.restarts.unwrap_or(defaults.restarts),
        restart_iters: file.restart_iters.unwrap_or(defaults.restart_iters),
        seed: 0,
    };
    fs::create_dir_all(&out_dir)?;
    match file.kind {
        ExperimentKind::Inference => {
            let mut cfg = InferenceConfig::new(file.sweep, file.values);
            cfg.generator = generator;
            cfg.em = em;
            cfg.seed = file.seed.unwrap_or(cfg.seed);
            cfg.replicates = file.replicates.unwrap_or(cfg.replicates);
            cfg.train_sequences = file.train_sequences.unwrap_or(cfg.train_sequences);
            cfg.train_length = file.train_length.unwrap_or(cfg.train_length);
            cfg.test_sequences = file.test_sequences.unwrap_or(cfg.test_sequences);
            cfg.test_length = file.test_length.unwrap_or(cfg.test_length);
            cfg.train_percent = file.train_percent.unwrap_or(cfg.train_percent);
            cfg.test_percent = file.test_percent.unwrap_or(cfg.test_percent);
            cfg.noise_sd = file.noise_sd.unwrap_or(cfg.noise_sd);
            let rows = run_inference_experiment(&cfg)?;
            write_csv(fs::File::create(out_dir.join("inference.csv"))?, &rows)?;
        }
        ExperimentKind::Forecast => {
            let mut cfg = ForecastConfig::new(file.sweep, file.values);
            cfg.generator = generator;
            cfg.em = em;
            cfg.seed = file.seed.unwrap_or(cfg.seed);
            cfg.replicates = file.replicates.unwrap_or(cfg.replicates);
            cfg.train_length = file.train_length.unwrap_or(cfg.train_length);
            cfg.horizon = file.horizon.unwrap_or(cfg.horizon);
            cfg.noise_sd = file.noise_sd.unwrap_or(cfg.noise_sd);
            let rows = run_forecast_experiment(&cfg)?;
            write_csv(fs::File::create(out_dir.join("forecast.csv"))?, &rows)?;
        }
    }
    Ok(())
}

fn fail(code: u8, kind: &str, message: &str) -> ExitCode {
    eprintln!("{}", json!({"error": kind, "message": message}));
    ExitCode::from(code)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => return fail(1, "Usage", e.to_string().trim()),
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(if e.is_numeric() { 2 } else { 1 }, e.kind(), &e.to_string()),
    }
}
