use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use rtfn::eval::{reproduce_tables, BundledTables};
use rtfn::gradcheck::suite::run_suite;
use rtfn::io::report::write_text;
use rtfn::io::ucr::load_split;
use rtfn::io::{apply_config_file, config_hash, load_ucr_dataset, RunMetrics, SeriesDataset};
use rtfn::model::{load_checkpoint, save_checkpoint, DEFAULT_SEED};
use rtfn::train::{evaluate_accuracy, history_csv, run_clustering, train_supervised, EpochRecord};
use rtfn::{ModelConfig, Result, RtfnError, Task, TrainConfig};

const SEED_ENV: &str = "RTFN_SEED";

#[derive(Parser)]
#[command(name = "rtfn", version, about = "Time-series classification and clustering with RTFN")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the supervised classifier and report test accuracy.
    Train(RunArgs),
    /// Train the autoencoder, cluster test-split features with K-means and report the Rand Index.
    Cluster(RunArgs),
    /// Score a saved classifier on a test file.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        test_file: PathBuf,
    },
    /// Recompute the published table aggregates and compare them with the printed values.
    ReproduceTables {
        /// Directory holding the table CSVs; defaults to the copies built into the binary.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Run the finite-difference gradient suite.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args)]
struct RunArgs {
    train_file: PathBuf,
    test_file: PathBuf,
    /// Flat `key = value` file overriding model and training settings.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Drop the attentional LSTM branch.
    #[arg(long)]
    no_alstm: bool,
    /// Output directory for checkpoint, history and metrics.
    #[arg(long, default_value = "rtfn-out")]
    out: PathBuf,
    /// Suppress per-epoch progress on stderr.
    #[arg(long, short)]
    quiet: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error kind={} {msg}", e.kind());
            ExitCode::from(2)
        }
    }
}

fn run(cmd: Command) -> Result<ExitCode> {
    match cmd {
        Command::Train(args) => train(args).map(|_| ExitCode::SUCCESS),
        Command::Cluster(args) => cluster(args).map(|_| ExitCode::SUCCESS),
        Command::Evaluate {
            checkpoint,
            test_file,
        } => evaluate(&checkpoint, &test_file).map(|_| ExitCode::SUCCESS),
        Command::ReproduceTables { data } => {
            let tables = match data {
                Some(dir) => BundledTables::from_dir(&dir)?,
                None => BundledTables::embedded()?,
            };
            let checks = reproduce_tables(&tables)?;
            for c in &checks {
                println!("{}", c.line);
            }
            Ok(exit_flag(checks.iter().all(|c| c.ok)))
        }
        Command::Gradcheck { seed } => {
            let results = run_suite(seed, |r| {
                let status = if r.passed() { "PASS" } else { "FAIL" };
                match &r.error {
                    Some(e) => println!("{status} {} error={e}", r.name),
                    None => println!(
                        "{status} {} instances={} worst_rel_err={:.3e} tol={:.0e}",
                        r.name, r.instances, r.worst, r.tolerance
                    ),
                }
            });
            let ok = results.iter().all(|r| r.passed());
            println!("gradcheck {}", if ok { "OK" } else { "FAILED" });
            Ok(exit_flag(ok))
        }
    }
}

fn exit_flag(ok: bool) -> ExitCode {
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

/// `--seed`, then a seed in the config file, then `RTFN_SEED`, then the default.
fn base_seed() -> Result<u64> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| RtfnError::Config(format!("{SEED_ENV} must be an unsigned integer, got {v:?}"))),
        Err(_) => Ok(DEFAULT_SEED),
    }
}

fn prepare(args: &RunArgs, task: Task) -> Result<(SeriesDataset, ModelConfig, TrainConfig)> {
    let data = load_ucr_dataset(&args.train_file, &args.test_file)?;
    let mut mcfg = ModelConfig::new(task, data.input_length, data.num_classes());
    mcfg.class_labels = data.class_labels.clone();
    let mut tcfg = match task {
        Task::Classify => TrainConfig::supervised(),
        Task::Reconstruct => TrainConfig::unsupervised(),
    };
    let seed = base_seed()?;
    mcfg.seed = seed;
    tcfg.seed = seed;
    if let Some(path) = &args.config {
        apply_config_file(path, &mut mcfg, &mut tcfg)?;
    }
    if let Some(seed) = args.seed {
        mcfg.seed = seed;
        tcfg.seed = seed;
    }
    if args.no_alstm {
        mcfg.use_attentional_lstm = false;
    }
    mcfg.validate()?;
    tcfg.validate()?;
    std::fs::create_dir_all(&args.out).map_err(|e| RtfnError::io(&args.out, e))?;
    Ok((data, mcfg, tcfg))
}

fn progress(quiet: bool) -> impl FnMut(&EpochRecord) {
    move |r: &EpochRecord| {
        if quiet {
            return;
        }
        match r.accuracy {
            Some(a) => eprintln!("epoch {:>4} loss {:.6} acc {:.4} lr {:.2e}", r.epoch, r.loss, a, r.learning_rate),
            None => eprintln!("epoch {:>4} loss {:.6} lr {:.2e}", r.epoch, r.loss, r.learning_rate),
        }
    }
}

fn train(args: RunArgs) -> Result<()> {
    let start = Instant::now();
    let (data, mcfg, tcfg) = prepare(&args, Task::Classify)?;
    let mut obs = progress(args.quiet);
    let run = train_supervised(&data, &mcfg, &tcfg, Some(&mut obs))?;
    let metrics = RunMetrics {
        dataset: data.name.clone(),
        seed: tcfg.seed,
        config_hash: config_hash(&mcfg, &tcfg),
        test_accuracy: Some(run.test_accuracy),
        rand_index: None,
        wall_time_s: start.elapsed().as_secs_f64(),
    };
    emit(&args.out, &run.model, &run.history, &metrics)?;
    println!("dataset={} seed={} test_accuracy={:.6}", data.name, tcfg.seed, run.test_accuracy);
    Ok(())
}

fn cluster(args: RunArgs) -> Result<()> {
    let start = Instant::now();
    let (data, mcfg, tcfg) = prepare(&args, Task::Reconstruct)?;
    let mut obs = progress(args.quiet);
    let run = run_clustering(&data, &mcfg, &tcfg, Some(&mut obs))?;
    let metrics = RunMetrics {
        dataset: data.name.clone(),
        seed: tcfg.seed,
        config_hash: config_hash(&mcfg, &tcfg),
        test_accuracy: None,
        rand_index: Some(run.rand_index),
        wall_time_s: start.elapsed().as_secs_f64(),
    };
    emit(&args.out, &run.model, &run.history, &metrics)?;
    println!(
        "dataset={} seed={} rand_index={:.6} raw_kmeans_rand_index={:.6}",
        data.name, tcfg.seed, run.rand_index, run.baseline_rand_index
    );
    Ok(())
}

fn emit(out: &Path, model: &rtfn::RtfnModel, history: &[EpochRecord], metrics: &RunMetrics) -> Result<()> {
    save_checkpoint(model, &out.join("model.ckpt"))?;
    write_text(&out.join("history.csv"), &history_csv(history))?;
    write_text(&out.join("metrics.json"), &(metrics.to_json() + "\n"))
}

fn evaluate(checkpoint: &Path, test_file: &Path) -> Result<()> {
    let model = load_checkpoint(checkpoint)?;
    if model.config.task != Task::Classify {
        return Err(RtfnError::Checkpoint("checkpoint holds an autoencoder, not a classifier".into()));
    }
    if model.config.class_labels.is_empty() {
        return Err(RtfnError::Checkpoint("checkpoint stores no class labels".into()));
    }
    let split = load_split(test_file, &model.config.class_labels, model.config.input_length)?;
    let acc = evaluate_accuracy(&model, &split)?;
    println!("test_accuracy={acc:.6}");
    Ok(())
}
