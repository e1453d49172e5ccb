//! `gem`: command-line front end for datasets, training, evaluation, sweeps
//! and candidate scoring.
//!
//! Exit codes: 0 on success, 2 on usage or configuration errors, 1 on
//! runtime failures.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};

use gem_core::harness::{write_metrics_csv, write_metrics_jsonl, write_sweep_csv};
use gem_core::policy::{read_params, write_params};
use gem_core::scoring::{generate_group, rank_and_filter, ScoringConfig};
use gem_core::tasks::{make_dataset, read_dataset, write_dataset, TaskDataset, TokenMap};
use gem_core::{preference_accuracy, run_sweep, run_training, ExperimentConfig, GemError, Method, TokenSequence};

/// Environment variable naming the default output directory.
const OUT_DIR_ENV: &str = "GEM_OUT_DIR";

#[derive(Parser)]
#[command(name = "gem", version, about = "Entropy-guided group-advantage preference optimisation on a toy policy")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic preference dataset (JSON Lines).
    GenData {
        #[arg(long)]
        config: PathBuf,
        /// Output file; defaults to dataset.jsonl in the output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run SFT warm-up and the configured method; writes metrics and parameters.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Dataset produced by gen-data; generated from [task] when omitted.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Report preference accuracy of saved parameters on a dataset split.
    Eval {
        #[arg(long)]
        params: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value_t = Split::Eval)]
        split: Split,
        #[arg(long, default_value_t = 1.0)]
        beta: f64,
    },
    /// Final accuracy per (budget, method) on truncated training sets.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Comma-separated, ascending; defaults to run.sweep_budgets.
        #[arg(long, value_delimiter = ',')]
        budgets: Option<Vec<usize>>,
        /// Comma-separated subset of sft,dpo,sega; defaults to run.sweep_methods.
        #[arg(long, value_delimiter = ',')]
        methods: Option<Vec<String>>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Sample, score and rank a candidate group for one prompt.
    Score {
        #[arg(long)]
        params: PathBuf,
        /// Comma-separated prompt token ids, e.g. 16,3,4.
        #[arg(long, value_delimiter = ',', required = true)]
        prompt: Vec<u32>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Group size; defaults to sampling.group_size.
        #[arg(long)]
        k: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Split {
    Train,
    Eval,
}

enum Failure {
    Config(anyhow::Error),
    Runtime(anyhow::Error),
}

impl From<GemError> for Failure {
    fn from(e: GemError) -> Self {
        if e.is_config_error() {
            Failure::Config(e.into())
        } else {
            Failure::Runtime(e.into())
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

type CmdResult = Result<(), Failure>;

fn out_dir(explicit: Option<PathBuf>) -> PathBuf {
    explicit
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."))
}

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)
            .with_context(|| format!("creating {}", parent.display()))?;
    }
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn load_config(path: &Path) -> Result<ExperimentConfig, Failure> {
    ExperimentConfig::from_file(path).map_err(Failure::from)
}

fn load_dataset(path: &Path) -> anyhow::Result<TaskDataset> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_dataset(BufReader::new(file)).with_context(|| format!("reading {}", path.display()))
}

fn dataset_for(cfg: &ExperimentConfig, data: Option<&Path>) -> Result<TaskDataset, Failure> {
    match data {
        Some(p) => Ok(load_dataset(p)?),
        None => Ok(make_dataset(&cfg.task)?),
    }
}

fn gen_data(config: &Path, out: Option<PathBuf>) -> CmdResult {
    let cfg = load_config(config)?;
    let data = make_dataset(&cfg.task)?;
    let path = out.unwrap_or_else(|| out_dir(None).join("dataset.jsonl"));
    write_dataset(&data, create(&path)?)?;
    println!("wrote {} train + {} eval records to {}", data.train.len(), data.eval.len(), path.display());
    Ok(())
}

fn train(config: &Path, data: Option<PathBuf>, dir: Option<PathBuf>) -> CmdResult {
    let cfg = load_config(config)?;
    let data = dataset_for(&cfg, data.as_deref())?;
    let run = run_training(&cfg, &data)?;
    let dir = out_dir(dir);
    write_metrics_csv(&run.rows, create(&dir.join("metrics.csv"))?)?;
    write_metrics_jsonl(&run.rows, create(&dir.join("metrics.jsonl"))?)?;
    write_params(&run.params, create(&dir.join("params.bin"))?)?;
    let summary = serde_json::to_string_pretty(&run.summary()).context("encoding summary")?;
    let mut f = create(&dir.join("summary.json"))?;
    writeln!(f, "{summary}").context("writing summary")?;
    println!("{summary}");
    Ok(())
}

fn eval(params: &Path, data: &Path, split: Split, beta: f64) -> CmdResult {
    if !(beta > 0.0) {
        return Err(Failure::Config(anyhow::anyhow!("beta must be positive")));
    }
    let file = File::open(params).with_context(|| format!("opening {}", params.display()))?;
    let params = read_params(BufReader::new(file))?;
    let data = load_dataset(data)?;
    if params.vocab() != &data.vocab() {
        return Err(Failure::Config(anyhow::anyhow!("parameter vocabulary does not match the dataset")));
    }
    let (name, records) = match split {
        Split::Train => ("train", &data.train),
        Split::Eval => ("eval", &data.eval),
    };
    let acc = preference_accuracy(&params, beta, records)?;
    println!(
        "{}",
        serde_json::json!({ "split": name, "records": records.len(), "preference_accuracy": acc })
    );
    Ok(())
}

fn sweep(
    config: &Path,
    data: Option<PathBuf>,
    budgets: Option<Vec<usize>>,
    methods: Option<Vec<String>>,
    dir: Option<PathBuf>,
) -> CmdResult {
    let cfg = load_config(config)?;
    let methods: Vec<Method> = match methods {
        Some(names) => names.iter().map(|m| m.parse()).collect::<Result<_, GemError>>()?,
        None => cfg.run.sweep_methods.clone(),
    };
    let budgets = budgets.unwrap_or_else(|| cfg.run.sweep_budgets.clone());
    let data = dataset_for(&cfg, data.as_deref())?;
    let rows = run_sweep(&cfg, &data, &budgets, &methods)?;
    let path = out_dir(dir).join("sweep.csv");
    write_sweep_csv(&rows, create(&path)?)?;
    write_sweep_csv(&rows, std::io::stdout().lock())?;
    Ok(())
}

fn score(
    params: &Path,
    prompt: Vec<u32>,
    config: Option<PathBuf>,
    k: Option<usize>,
    seed: u64,
) -> CmdResult {
    let cfg = match config {
        Some(p) => load_config(&p)?,
        None => ExperimentConfig::default(),
    };
    let file = File::open(params).with_context(|| format!("opening {}", params.display()))?;
    let params = read_params(BufReader::new(file))?;
    let map = TokenMap::new(cfg.task.vocab_size, cfg.task.fork_width)?;
    if params.vocab() != &map.vocab() {
        return Err(Failure::Config(anyhow::anyhow!(
            "parameter vocabulary does not match the task in the config"
        )));
    }
    let query = TokenSequence::prompt(prompt, params.vocab()).map_err(|e| Failure::Config(e.into()))?;
    let scoring = ScoringConfig { answer_marker: Some(map.marker), ..cfg.scoring };
    let k = k.unwrap_or(cfg.sampling.group_size);
    let group = generate_group(&params, &query, k, &cfg.sampling.sampler(), &scoring, seed)?;
    let group = rank_and_filter(group, &scoring);
    let mut out = std::io::stdout().lock();
    for c in &group.candidates {
        writeln!(out, "{}", serde_json::to_string(c).context("encoding candidate")?)
            .context("writing output")?;
    }
    Ok(())
}

fn run(cli: Cli) -> CmdResult {
    match cli.command {
        Command::GenData { config, out } => gen_data(&config, out),
        Command::Train { config, data, out_dir } => train(&config, data, out_dir),
        Command::Eval { params, data, split, beta } => eval(&params, &data, split, beta),
        Command::Sweep { config, data, budgets, methods, out_dir } => {
            sweep(&config, data, budgets, methods, out_dir)
        }
        Command::Score { params, prompt, config, k, seed } => score(&params, prompt, config, k, seed),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("error: {e:#}");
            eprintln!("run `gem --help` for usage");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
