mod config;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

use dgode::dataio::{gen_synthetic, load_dataset, save_dataset, split_dataset, Dataset};
use dgode::model::{
    depth_sweep, evaluate, forward_trace, format_metrics_table, params_from_text, params_to_text, predict_label, prepare_dataset, train, Mode,
    ModelParams, PreparedConversation,
};
use dgode::verify::{run_suite, VerifyOptions};

use config::RunConfig;

#[derive(Parser, Debug)]
#[command(name = "dgode", version, about = "Graph neural ODE emotion classifier")]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides every seed in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the numerical verification suite.
    Verify {
        /// Perturb the ODE right-hand side; the solver oracles must then fail.
        #[arg(long)]
        fault_inject: bool,
    },
    /// Write a synthetic dataset.
    Gen,
    /// Train a model and write its parameters and logs.
    Train,
    /// Score parameters on the test split.
    Eval,
    /// Train DGODE and the plain GCN baseline over a list of depths.
    Sweep,
}

/// Failure of a command; usage problems are reported by clap itself.
struct Failure(String);

impl<E: std::fmt::Display> From<E> for Failure {
    fn from(err: E) -> Self {
        Failure(err.to_string())
    }
}

type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut cfg = match &cli.config {
        Some(path) => match RunConfig::load(path) {
            Ok(cfg) => cfg,
            Err(msg) => {
                eprintln!("error: {msg}");
                return ExitCode::from(1);
            }
        },
        None => RunConfig::default(),
    };
    cfg.resolve_seed(cli.seed);
    if let Some(out) = cli.out {
        cfg.out = out;
    }
    let result = match cli.command {
        Command::Verify { fault_inject } => cmd_verify(&cfg, fault_inject),
        Command::Gen => cmd_gen(&cfg),
        Command::Train => cmd_train(&cfg),
        Command::Eval => cmd_eval(&cfg),
        Command::Sweep => cmd_sweep(&cfg),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

fn out_file(cfg: &RunConfig, name: &str) -> Result<PathBuf, Failure> {
    fs::create_dir_all(&cfg.out).map_err(|e| Failure(format!("cannot create {}: {e}", cfg.out.display())))?;
    Ok(cfg.out.join(name))
}

fn write(path: &Path, contents: &str) -> CmdResult {
    fs::write(path, contents).map_err(|e| Failure(format!("cannot write {}: {e}", path.display())))
}

fn jsonl<T: Serialize>(records: &[T]) -> String {
    records.iter().map(|r| serde_json::to_string(r).expect("record serializes") + "\n").collect()
}

fn dataset(cfg: &RunConfig) -> Result<Dataset, Failure> {
    match &cfg.dataset {
        Some(path) => load_dataset(path).map_err(|e| Failure(format!("{}: {e}", path.display()))),
        None => Ok(gen_synthetic(&cfg.data)?),
    }
}

struct Splits {
    data: Dataset,
    speakers: Vec<String>,
    train: Dataset,
    val: Dataset,
    test: Dataset,
}

fn splits(cfg: &RunConfig) -> Result<Splits, Failure> {
    let data = dataset(cfg)?;
    let (train, val, test) = split_dataset(&data, cfg.split.fractions, cfg.run_seed())?;
    Ok(Splits { speakers: train.speakers(), data, train, val, test })
}

fn prepare(ds: &Dataset, params: &ModelParams) -> Result<Vec<PreparedConversation>, Failure> {
    Ok(prepare_dataset(ds, &params.config)?)
}

fn cmd_verify(cfg: &RunConfig, fault_inject: bool) -> CmdResult {
    let opts = VerifyOptions { seed: cfg.run_seed(), instances: cfg.verify.instances, fault_inject };
    let report = run_suite(&opts)?;
    println!("{report}");
    write(&out_file(cfg, "verify.json")?, &(serde_json::to_string_pretty(&report)? + "\n"))?;
    if report.passed() {
        Ok(())
    } else {
        let names: Vec<&str> = report.failures().map(|c| c.name.as_str()).collect();
        Err(Failure(format!("verification failed: {}", names.join(", "))))
    }
}

fn cmd_gen(cfg: &RunConfig) -> CmdResult {
    let data = gen_synthetic(&cfg.data)?;
    let path = out_file(cfg, "dataset.jsonl")?;
    save_dataset(&data, &path)?;
    println!("wrote {} conversations, {} utterances to {}", data.conversations.len(), data.utterance_count(), path.display());
    Ok(())
}

fn cmd_train(cfg: &RunConfig) -> CmdResult {
    let s = splits(cfg)?;
    let model = cfg.model_config(s.data.class_count(), s.data.dims, s.speakers.clone());
    let params = ModelParams::init(model, cfg.run_seed())?;
    let (train_set, val_set, test_set) = (prepare(&s.train, &params)?, prepare(&s.val, &params)?, prepare(&s.test, &params)?);
    let outcome = train(&train_set, &val_set, &s.data.classes, params, &cfg.train)?;

    write(&out_file(cfg, "params.txt")?, &params_to_text(&outcome.best))?;
    write(&out_file(cfg, "train_log.jsonl")?, &jsonl(&outcome.log))?;
    #[derive(Serialize)]
    struct Timing {
        epoch: usize,
        seconds: f64,
    }
    let timing: Vec<Timing> = outcome.epoch_seconds.iter().enumerate().map(|(i, &seconds)| Timing { epoch: i + 1, seconds }).collect();
    write(&out_file(cfg, "timing.jsonl")?, &jsonl(&timing))?;

    print!("trained {} epochs, best epoch {}", cfg.train.epochs, outcome.best_epoch);
    if !test_set.is_empty() {
        let report = evaluate(&test_set, &outcome.best, &s.data.classes)?;
        print!(", test W-F1 {:.4}, accuracy {:.4}", report.weighted_f1, report.accuracy);
    }
    println!();
    Ok(())
}

fn load_params(cfg: &RunConfig, s: &Splits) -> Result<ModelParams, Failure> {
    let stored = cfg.params.clone().or_else(|| Some(cfg.out.join("params.txt")).filter(|p| p.is_file()));
    match stored {
        Some(path) => {
            let text = fs::read_to_string(&path).map_err(|e| Failure(format!("cannot read {}: {e}", path.display())))?;
            eprintln!("using parameters from {}", path.display());
            params_from_text(&text).map_err(|e| Failure(format!("{}: {e}", path.display())))
        }
        None => {
            eprintln!("no parameter file; using seed-initialized parameters");
            let model = cfg.model_config(s.data.class_count(), s.data.dims, s.speakers.clone());
            Ok(ModelParams::init(model, cfg.run_seed())?)
        }
    }
}

fn cmd_eval(cfg: &RunConfig) -> CmdResult {
    let s = splits(cfg)?;
    let params = load_params(cfg, &s)?;
    let test_set = prepare(&s.test, &params)?;
    let report = evaluate(&test_set, &params, &s.data.classes)?;
    let table = format_metrics_table("DGODE", &report);
    print!("{table}");
    write(&out_file(cfg, "metrics.txt")?, &table)?;
    write(&out_file(cfg, "metrics.json")?, &(serde_json::to_string_pretty(&report)? + "\n"))?;

    let mut tsv = String::from("conversation\tutterance\tlabel\tpredicted");
    for k in 0..params.config.node_dim {
        let _ = write!(tsv, "\tx{k}");
    }
    tsv.push('\n');
    for (conv, prepared) in s.test.conversations.iter().zip(&test_set) {
        let trace = forward_trace(prepared, &params, Mode::Eval)?;
        for (i, utt) in conv.utterances.iter().enumerate() {
            let predicted = predict_label(trace.probs.row(i))?;
            let _ = write!(tsv, "{}\t{}\t{}\t{}", conv.id, utt.index, s.data.classes[utt.label], s.data.classes[predicted]);
            for v in trace.readout.row(i) {
                let _ = write!(tsv, "\t{v}");
            }
            tsv.push('\n');
        }
    }
    write(&out_file(cfg, "embeddings.tsv")?, &tsv)
}

fn cmd_sweep(cfg: &RunConfig) -> CmdResult {
    let s = splits(cfg)?;
    let template = cfg.model_config(s.data.class_count(), s.data.dims, s.speakers.clone());
    let probe = ModelParams::init(template.clone(), cfg.run_seed())?;
    let (train_set, val_set, test_set) = (prepare(&s.train, &probe)?, prepare(&s.val, &probe)?, prepare(&s.test, &probe)?);
    let records = depth_sweep([&train_set, &val_set, &test_set], &s.data.classes, &template, &cfg.train, &cfg.sweep.depths, cfg.run_seed())?;
    for r in &records {
        println!("{:<12} depth {:>3}  W-F1 {:.4}  accuracy {:.4}", r.method, r.depth, r.weighted_f1, r.accuracy);
    }
    write(&out_file(cfg, "sweep.jsonl")?, &jsonl(&records))
}
