//! `aben`: data preparation, training, evaluation and attention inspection.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use aben_core::checkpoint::load_manifest;
use aben_core::config::{InferenceConfig, RunConfig};
use aben_core::dataset::{SceneRecord, SceneSample, SplitRatios};
use aben_core::inference::{export_attention, generate_sentence, Pipeline, Upsample, RESULT_FILE};
use aben_core::run::{checkpoint_config, evaluate_checkpoints, load_synonyms, prepare_data, run_training, SplitName, RUN_MANIFEST};
use aben_core::synthetic::{generate_synthetic, SyntheticConfig};
use aben_core::training::SamplingMode;
use aben_core::AbenError;
use clap::{Parser, Subcommand};

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_IO: u8 = 3;
const EXIT_NONFINITE: u8 = 4;

#[derive(Parser)]
#[command(name = "aben", version, about = "Fetching-instruction generation with attention branches")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a scene record file and split it into train/validation/test.
    PrepareData {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Train, validation and test fractions.
        #[arg(long, default_value = "0.8,0.1,0.1")]
        ratios: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train from a JSON run config; flags override the file.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        mode: Option<SamplingMode>,
        /// One run per seed; several seeds go to `seed_<s>` subdirectories.
        #[arg(long, value_delimiter = ',', num_args = 1..)]
        seed: Vec<u64>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Run directory (overrides `output_dir`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Disable gradient clipping.
        #[arg(long)]
        no_clip: bool,
    },
    /// Score generated sentences on a split; several checkpoints or `--runs`
    /// give mean and standard deviation.
    Evaluate {
        #[arg(long, required = true, num_args = 1..)]
        checkpoint: Vec<PathBuf>,
        #[arg(long, default_value = "test")]
        split: SplitName,
        #[arg(long, default_value_t = 1)]
        runs: usize,
        /// Use this config instead of the one stored in the checkpoint.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        synonyms: Option<PathBuf>,
        #[arg(long, default_value = "ABEN")]
        label: String,
        #[arg(long, default_value = "runs/evaluation")]
        out: PathBuf,
    },
    /// Generate an instruction for one scene, optionally exporting attention.
    #[command(visible_alias = "inspect-attention")]
    Generate {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Scene record file (JSONL); relative image paths resolve against it.
        #[arg(long)]
        scene: PathBuf,
        /// Zero-based record index within the file.
        #[arg(long, default_value_t = 0)]
        index: usize,
        /// Write step overlays, the linguistic weight CSV and result JSON here.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value = "nearest")]
        upsample: Upsample,
        #[arg(long)]
        max_len: Option<usize>,
    },
    /// Write procedural toy scenes for smoke tests.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 20)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn exit_code(e: &AbenError) -> u8 {
    match e {
        AbenError::Config(_) => EXIT_USAGE,
        AbenError::Io { .. } | AbenError::Image(_) | AbenError::Checkpoint(_) => EXIT_IO,
        AbenError::NonFiniteLoss { .. } => EXIT_NONFINITE,
        _ => EXIT_DATA,
    }
}

fn write_json(path: &Path, value: &serde_json::Value) -> aben_core::Result<()> {
    let text = serde_json::to_string_pretty(value).expect("JSON value serializes");
    fs::write(path, text).map_err(|e| AbenError::io(path, e))
}

fn parse_ratios(text: &str) -> aben_core::Result<SplitRatios> {
    let parts: Vec<f64> = text
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|_| AbenError::Config(format!("bad ratio `{p}`"))))
        .collect::<aben_core::Result<_>>()?;
    let [train, validation, test] = parts[..] else {
        return Err(AbenError::Config(format!("expected three ratios, got `{text}`")));
    };
    let ratios = SplitRatios { train, validation, test };
    ratios.validate()?;
    Ok(ratios)
}

fn prepare(input: &Path, out: &Path, ratios: &str, seed: u64) -> aben_core::Result<u8> {
    let ratios = parse_ratios(ratios)?;
    let report = prepare_data(input, out, ratios, seed)?;
    if !report.validation.is_clean() {
        for r in &report.validation.rejected {
            eprintln!("line {}: {}", r.line, r.reason);
        }
        eprintln!(
            "{} of {} records rejected; see {}",
            report.validation.rejected.len(),
            report.validation.total_records,
            out.join("validation_report.json").display()
        );
        return Ok(EXIT_DATA);
    }
    println!(
        "scenes train/validation/test: {}/{}/{}  pairs: {}/{}/{}",
        report.scenes[0], report.scenes[1], report.scenes[2], report.pairs[0], report.pairs[1], report.pairs[2]
    );
    Ok(0)
}

struct TrainOverrides {
    mode: Option<SamplingMode>,
    seeds: Vec<u64>,
    epochs: Option<usize>,
    out: Option<PathBuf>,
    no_clip: bool,
}

fn train(config: &Path, o: TrainOverrides) -> aben_core::Result<u8> {
    let mut cfg = RunConfig::load(config)?;
    if let Some(m) = o.mode {
        cfg.training.mode = m;
    }
    if let Some(e) = o.epochs {
        cfg.training.epochs = e;
    }
    if let Some(out) = o.out {
        cfg.output_dir = out;
    }
    if o.no_clip {
        cfg.training.clip_norm = None;
    }
    cfg.validate()?;
    let seeds = if o.seeds.is_empty() { vec![cfg.training.seed] } else { o.seeds };
    let base = cfg.output_dir.clone();
    for &seed in &seeds {
        let mut run = cfg.clone();
        run.training.seed = seed;
        if seeds.len() > 1 {
            run.output_dir = base.join(format!("seed_{seed}"));
        }
        let result = run_training(&run)?;
        let last = result.outcome.records.last();
        println!(
            "seed {seed}: {} epochs, final loss {}, best epoch {}, run dir {}",
            result.outcome.records.len(),
            last.map_or("n/a".into(), |r| format!("{:.4}", r.loss.total)),
            result.outcome.best_epoch.map_or("n/a".into(), |e| e.to_string()),
            result.run_dir.display()
        );
    }
    Ok(0)
}

struct EvaluateArgs {
    checkpoints: Vec<PathBuf>,
    split: SplitName,
    runs: usize,
    config: Option<PathBuf>,
    synonyms: Option<PathBuf>,
    label: String,
    out: PathBuf,
}

fn evaluate(a: EvaluateArgs) -> aben_core::Result<u8> {
    let override_cfg = a.config.as_deref().map(RunConfig::load).transpose()?;
    let synonym_path = match (&a.synonyms, &override_cfg) {
        (Some(p), _) => Some(p.clone()),
        (None, Some(c)) => c.data.synonyms.clone(),
        (None, None) => checkpoint_config(&load_manifest(&a.checkpoints[0])?)?.data.synonyms,
    };
    let synonyms = load_synonyms(synonym_path.as_deref())?;
    let eval = evaluate_checkpoints(&a.checkpoints, a.split, a.runs, override_cfg.as_ref(), &synonyms)?;
    fs::create_dir_all(&a.out).map_err(|e| AbenError::io(&a.out, e))?;
    let table = eval.report.to_table(&a.label);
    write_json(&a.out.join("metrics.json"), &eval.report.to_json())?;
    let table_path = a.out.join("metrics.txt");
    fs::write(&table_path, &table).map_err(|e| AbenError::io(&table_path, e))?;
    let sentences_path = a.out.join("sentences.txt");
    fs::write(&sentences_path, eval.sentences.join("\n") + "\n").map_err(|e| AbenError::io(&sentences_path, e))?;
    write_json(
        &a.out.join(RUN_MANIFEST),
        &serde_json::json!({
            "command": "evaluate",
            "checkpoints": a.checkpoints.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
            "split": a.split,
            "runs": a.runs,
            "config": a.config.as_ref().map(|p| p.display().to_string()),
            "synonyms": synonym_path.as_ref().map(|p| p.display().to_string()),
            "truncated": eval.truncated,
            "raw_scores": eval.report.runs,
            "files": ["metrics.json", "metrics.txt", "sentences.txt"],
        }),
    )?;
    print!("{table}");
    if eval.truncated > 0 {
        eprintln!("warning: {} sentences hit the length limit", eval.truncated);
    }
    Ok(0)
}

fn generate(checkpoint: &Path, scene: &Path, index: usize, out: Option<&Path>, upsample: Upsample, max_len: Option<usize>) -> aben_core::Result<u8> {
    let pipeline = Pipeline::load(checkpoint)?;
    let sample = &scene_record(scene, index)?;
    let max_len = match max_len {
        Some(m) => m,
        None => checkpoint_config(&load_manifest(checkpoint)?).map_or(InferenceConfig::default().max_len, |c| c.inference.max_len),
    };
    let result = generate_sentence(&pipeline, sample, max_len)?;
    println!("{}", result.sentence);
    if result.truncated {
        eprintln!("warning: generation stopped at {max_len} subwords without EOS");
    }
    if let Some(dir) = out {
        export_attention(&result, &pipeline.vocab, sample, dir, upsample)?;
        write_json(
            &dir.join(RUN_MANIFEST),
            &serde_json::json!({
                "command": "generate",
                "checkpoint": checkpoint.display().to_string(),
                "scene": scene.display().to_string(),
                "index": index,
                "upsample": upsample,
                "max_len": max_len,
                "steps": result.steps(),
                "files": [RESULT_FILE, aben_core::inference::LINGUISTIC_CSV, "step_<k>.png"],
            }),
        )?;
    }
    Ok(0)
}

/// Parses and validates the `index`-th non-blank line of a record file.
fn scene_record(path: &Path, index: usize) -> aben_core::Result<SceneSample> {
    let text = fs::read_to_string(path).map_err(|e| AbenError::io(path, e))?;
    let (line_no, line) = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .nth(index)
        .ok_or_else(|| AbenError::Contract(format!("{} has no record {index}", path.display())))?;
    let record: SceneRecord =
        serde_json::from_str(line).map_err(|e| AbenError::Parse { line: line_no + 1, message: e.to_string() })?;
    record.validate(path.parent().unwrap_or(Path::new(".")))
}

fn synth(out: &Path, count: usize, seed: u64) -> aben_core::Result<u8> {
    let path = generate_synthetic(out, SyntheticConfig { count, seed, ..SyntheticConfig::default() })?;
    println!("{}", path.display());
    Ok(0)
}

fn run(cli: Cli) -> aben_core::Result<u8> {
    match cli.command {
        Command::PrepareData { input, out, ratios, seed } => prepare(&input, &out, &ratios, seed),
        Command::Train { config, mode, seed, epochs, out, no_clip } => {
            train(&config, TrainOverrides { mode, seeds: seed, epochs, out, no_clip })
        }
        Command::Evaluate { checkpoint, split, runs, config, synonyms, label, out } => {
            evaluate(EvaluateArgs { checkpoints: checkpoint, split, runs, config, synonyms, label, out })
        }
        Command::Generate { checkpoint, scene, index, out, upsample, max_len } => {
            generate(&checkpoint, &scene, index, out.as_deref(), upsample, max_len)
        }
        Command::Synth { out, count, seed } => synth(&out, count, seed),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
