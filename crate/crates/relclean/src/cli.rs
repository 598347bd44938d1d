//! Command-line front end. Exit codes: 0 success, 1 usage or validation
//! error, 2 runtime failure.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::dataset::{self, Dataset, LabelState, TripletRecord};
use crate::error::{Error, Result};
use crate::neg_nsd::{self, ConfidenceModel};
use crate::nsc;
use crate::pipeline::{self, CleaningReport, MinedEntry, PipelineConfig};
use crate::pos_nsd;
use crate::synth::{self, GroundTruth, SynthConfig};

#[derive(Debug, Parser)]
#[command(name = "relclean", version, about = "Clean noisy predicate labels in relation-triplet datasets")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the full pipeline and write cleaned data plus reports.
    Run(Common),
    /// Train the negative-detection model on the annotated positives.
    #[command(name = "train-negnsd")]
    TrainNegNsd(Common),
    /// Score negatives with a trained model and mark recovered ones as pseudo positives.
    #[command(name = "detect-neg")]
    DetectNeg {
        #[command(flatten)]
        common: Common,
        /// Model file written by train-negnsd.
        #[arg(long)]
        model: PathBuf,
    },
    /// Flag low-density positives (annotated and pseudo) per predicate.
    #[command(name = "detect-pos")]
    DetectPos(Common),
    /// Relabel flagged positives by a weighted nearest-neighbour vote.
    Correct {
        #[command(flatten)]
        common: Common,
        /// flags.json written by detect-pos.
        #[arg(long)]
        flags: PathBuf,
    },
    /// Generate a synthetic dataset with planted noise.
    Synth {
        /// TOML file with generator settings.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a run against the truth file of a synthetic dataset.
    Eval {
        /// Dataset the run started from.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        vocab: Option<PathBuf>,
        #[arg(long)]
        truth: PathBuf,
        /// Output directory of the run (cleaned.jsonl and report.json).
        #[arg(long)]
        run: PathBuf,
        /// Where to write metrics.json and metrics.txt.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write features and labels as TSV for external projection plots.
    #[command(name = "export-embed")]
    ExportEmbed {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        vocab: Option<PathBuf>,
        /// Output file; standard output when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
struct Common {
    /// Pipeline configuration (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Input dataset (line-delimited JSON).
    #[arg(long)]
    input: Option<PathBuf>,
    /// Predicate vocabulary sidecar, one name per line.
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Stage override such as `nsc=off`; repeatable.
    #[arg(long = "stage-toggle", value_name = "STAGE=on|off")]
    stage_toggle: Vec<String>,
}

impl Common {
    fn config(&self) -> Result<PipelineConfig> {
        let mut config = match &self.config {
            Some(path) => PipelineConfig::load(path)?,
            None => PipelineConfig::default(),
        };
        if self.input.is_some() {
            config.io.input = self.input.clone();
        }
        if self.vocab.is_some() {
            config.io.vocab = self.vocab.clone();
        }
        if self.out.is_some() {
            config.io.out_dir = self.out.clone();
        }
        if self.seed.is_some() {
            config.seed = self.seed;
        }
        for spec in &self.stage_toggle {
            config.stages.apply_override(spec)?;
        }
        config.validate()?;
        Ok(config)
    }
}

fn required<'a>(value: &'a Option<PathBuf>, what: &str) -> Result<&'a Path> {
    value
        .as_deref()
        .ok_or_else(|| Error::InvalidConfig(format!("no {what} given (use --{what} or the config file)")))
}

fn load_input(config: &PipelineConfig) -> Result<Dataset> {
    let input = required(&config.io.input, "input")?;
    dataset::load_dataset(input, &pipeline::load_options(config)?)
}

fn json_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    let mut v = serde_json::to_vec_pretty(value).expect("serializable");
    v.push(b'\n');
    v
}

fn jsonl_bytes<T: Serialize>(items: &[T]) -> Vec<u8> {
    let mut v = Vec::new();
    for item in items {
        serde_json::to_writer(&mut v, item).expect("serializable");
        v.push(b'\n');
    }
    v
}

/// `flags.json`: ids split by positive detection.
#[derive(Debug, Serialize, Deserialize)]
struct Flags {
    noisy: Vec<String>,
    clean: Vec<String>,
}

fn cmd_run(common: &Common) -> Result<()> {
    let config = common.config()?;
    required(&config.io.out_dir, "out")?;
    let output = pipeline::run(&config)?;
    print!("{}", output.report);
    Ok(())
}

fn cmd_train(common: &Common) -> Result<()> {
    let config = common.config()?;
    let out = required(&config.io.out_dir, "out")?;
    let data = load_input(&config)?;
    let (model, training) = neg_nsd::train(&data.positives(), data.vocab.len(), &config.effective_neg_nsd())?;
    pipeline::write_atomically(
        out,
        &[
            (pipeline::MODEL_FILE, model.to_text().into_bytes()),
            ("training.json", json_bytes(&training)),
        ],
    )?;
    println!(
        "trained on {} positives: loss {:.6} -> {:.6}",
        data.positives().len(),
        training.initial_loss,
        training.final_loss()
    );
    Ok(())
}

fn cmd_detect_neg(common: &Common, model_path: &Path) -> Result<()> {
    let config = common.config()?;
    let out = required(&config.io.out_dir, "out")?;
    let data = load_input(&config)?;
    let text = std::fs::read_to_string(model_path).map_err(|e| Error::io(model_path, e))?;
    let model = ConfidenceModel::from_text(&text)?;
    let det = neg_nsd::detect_negatives(&model, &data.negatives(), &config.effective_neg_nsd(), &data.partition)?;

    let mut scored = data.records.clone();
    let index = data.id_index();
    for r in det.noisy.iter().chain(&det.clean) {
        scored[index[r.id.as_str()]] = r.clone();
    }
    let mined: Vec<MinedEntry> = det
        .noisy
        .iter()
        .map(|r| MinedEntry {
            id: r.id.clone(),
            label: r.label.expect("mined records carry a pseudo label"),
            confidence: r.confidence.unwrap_or(0.0),
        })
        .collect();
    pipeline::write_atomically(
        out,
        &[
            ("scored.jsonl", data.with_records(scored).to_jsonl().into_bytes()),
            ("mined.jsonl", jsonl_bytes(&mined)),
        ],
    )?;
    println!("{} of {} negatives recovered", det.noisy.len(), det.noisy.len() + det.clean.len());
    Ok(())
}

fn composed(data: &Dataset) -> Vec<TripletRecord> {
    data.records
        .iter()
        .filter(|r| matches!(r.state, LabelState::Annotated | LabelState::Pseudo))
        .cloned()
        .collect()
}

fn cmd_detect_pos(common: &Common) -> Result<()> {
    let config = common.config()?;
    let out = required(&config.io.out_dir, "out")?;
    let data = load_input(&config)?;
    let det = pos_nsd::detect_positives(&composed(&data), &config.pos_nsd, &data.partition)?;
    let mut density = Vec::new();
    det.report
        .write_jsonl(&mut density)
        .expect("writing to a Vec cannot fail");
    let flags = Flags {
        noisy: det.noisy,
        clean: det.clean,
    };
    pipeline::write_atomically(
        out,
        &[(pipeline::DENSITY_FILE, density), ("flags.json", json_bytes(&flags))],
    )?;
    println!("{} of {} positives flagged", flags.noisy.len(), flags.noisy.len() + flags.clean.len());
    Ok(())
}

fn cmd_correct(common: &Common, flags_path: &Path) -> Result<()> {
    let config = common.config()?;
    let out = required(&config.io.out_dir, "out")?;
    let data = load_input(&config)?;
    let text = std::fs::read_to_string(flags_path).map_err(|e| Error::io(flags_path, e))?;
    let flags: Flags = serde_json::from_str(&text)
        .map_err(|e| Error::InvalidConfig(format!("{}: {e}", flags_path.display())))?;
    let (cleaned, ledger) = nsc::correct(&flags.noisy, &data, &flags.clean, &config.nsc)?;
    let mut corrections = Vec::new();
    nsc::write_ledger(&ledger, &mut corrections).expect("writing to a Vec cannot fail");
    pipeline::write_atomically(
        out,
        &[
            (pipeline::CLEANED_FILE, cleaned.to_jsonl().into_bytes()),
            (pipeline::CORRECTIONS_FILE, corrections),
        ],
    )?;
    println!(
        "{} of {} flagged records relabelled",
        ledger.iter().filter(|c| c.changed).count(),
        ledger.len()
    );
    Ok(())
}

fn cmd_synth(config_path: Option<&Path>, seed: Option<u64>, out: &Path) -> Result<()> {
    let mut config = match config_path {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            toml::from_str::<SynthConfig>(&text).map_err(|e| Error::InvalidConfig(e.to_string()))?
        }
        None => SynthConfig::default(),
    };
    if let Some(seed) = seed {
        config.seed = seed;
    }
    let (data, truth) = synth::generate(&config)?;
    let mut truth_bytes = Vec::new();
    truth
        .write_jsonl(&data.vocab, &mut truth_bytes)
        .expect("writing to a Vec cannot fail");
    pipeline::write_atomically(
        out,
        &[
            ("dataset.jsonl", data.to_jsonl().into_bytes()),
            ("truth.jsonl", truth_bytes),
            ("vocab.txt", data.vocab.to_sidecar().into_bytes()),
        ],
    )?;
    println!("{} records, {} predicates", data.len(), data.vocab.len());
    Ok(())
}

fn cmd_eval(input: &Path, vocab: Option<&Path>, truth: &Path, run: &Path, out: Option<&Path>) -> Result<()> {
    let vocab = vocab.map(dataset::load_vocab).transpose()?;
    let original = dataset::load_dataset(
        input,
        &dataset::LoadOptions {
            vocab,
            ..Default::default()
        },
    )?;
    // Read the run output against the input's vocabulary so indices agree.
    let fixed = dataset::LoadOptions {
        vocab: Some(original.vocab.clone()),
        ..Default::default()
    };
    let cleaned = dataset::load_dataset(&run.join(pipeline::CLEANED_FILE), &fixed)?;
    let report_path = run.join(pipeline::REPORT_JSON);
    let report_text = std::fs::read_to_string(&report_path).map_err(|e| Error::io(&report_path, e))?;
    let report: CleaningReport = serde_json::from_str(&report_text)
        .map_err(|e| Error::InvalidConfig(format!("{}: {e}", report_path.display())))?;
    let truth_text = std::fs::read_to_string(truth).map_err(|e| Error::io(truth, e))?;
    let truth = GroundTruth::parse_jsonl(&truth_text, &original.vocab)?;

    let metrics = synth::score(&original, &cleaned, &report, &truth)?;
    print!("{metrics}");
    if let Some(out) = out {
        pipeline::write_atomically(
            out,
            &[
                ("metrics.json", json_bytes(&metrics)),
                ("metrics.txt", metrics.to_string().into_bytes()),
            ],
        )?;
    }
    Ok(())
}

fn cmd_export(input: &Path, vocab: Option<&Path>, out: Option<&Path>) -> Result<()> {
    let vocab = vocab.map(dataset::load_vocab).transpose()?;
    let data = dataset::load_dataset(
        input,
        &dataset::LoadOptions {
            vocab,
            ..Default::default()
        },
    )?;
    let mut text = String::from("id\tpredicate\tstate");
    for i in 0..data.feature_dim {
        text.push_str(&format!("\tf{i}"));
    }
    text.push('\n');
    for r in &data.records {
        text.push_str(&r.id);
        text.push('\t');
        text.push_str(data.label_name(r.label).unwrap_or(""));
        text.push('\t');
        text.push_str(&r.state.to_string());
        for v in &r.feature {
            text.push_str(&format!("\t{v}"));
        }
        text.push('\n');
    }
    match out {
        Some(path) => {
            let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
            let name = path
                .file_name()
                .and_then(|n| n.to_str())
                .ok_or_else(|| Error::InvalidConfig(format!("bad output path {}", path.display())))?;
            pipeline::write_atomically(dir, &[(name, text.into_bytes())])
        }
        None => match std::io::stdout().write_all(text.as_bytes()) {
            Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(Error::io("<stdout>", e)),
            _ => Ok(()),
        },
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Run(c) => cmd_run(&c),
        Command::TrainNegNsd(c) => cmd_train(&c),
        Command::DetectNeg { common, model } => cmd_detect_neg(&common, &model),
        Command::DetectPos(c) => cmd_detect_pos(&c),
        Command::Correct { common, flags } => cmd_correct(&common, &flags),
        Command::Synth { config, seed, out } => cmd_synth(config.as_deref(), seed, &out),
        Command::Eval {
            input,
            vocab,
            truth,
            run,
            out,
        } => cmd_eval(&input, vocab.as_deref(), &truth, &run, out.as_deref()),
        Command::ExportEmbed { input, vocab, out } => cmd_export(&input, vocab.as_deref(), out.as_deref()),
    }
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                1
            } else {
                2
            }
        }
    }
}
