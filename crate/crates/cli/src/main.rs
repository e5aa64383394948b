//! `eru` — operator surface for the resume-understanding pipeline:
//! corpus generation, pre-training, fine-tuning, evaluation, parsing,
//! gradient verification, and complexity benchmarking.

mod commands;
mod manifest;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "eru",
    version,
    about = "Segment-level multimodal resume understanding pipeline",
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a deterministic synthetic resume corpus.
    GenCorpus(commands::GenCorpusArgs),
    /// Pre-train with the three self-supervised objectives.
    Pretrain(commands::PretrainArgs),
    /// Fine-tune the sequence-labeling heads, tracking validation F1.
    Finetune(commands::FinetuneArgs),
    /// Evaluate a checkpoint on a labeled corpus.
    Eval(commands::EvalArgs),
    /// Parse one document into per-segment field/block predictions.
    Parse(commands::ParseArgs),
    /// Verify analytic gradients against finite differences.
    GradCheck(commands::GradCheckArgs),
    /// Time segment-level vs token-level forward passes.
    Bench(commands::BenchArgs),
    /// Nearest-neighbor label heatmap over a labeled corpus.
    Heatmap(commands::HeatmapArgs),
}

fn main() {
    eru_core::init_threads();
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::GenCorpus(a) => commands::gen_corpus(a),
        Cmd::Pretrain(a) => commands::pretrain(a),
        Cmd::Finetune(a) => commands::finetune(a),
        Cmd::Eval(a) => commands::eval(a),
        Cmd::Parse(a) => commands::parse(a),
        Cmd::GradCheck(a) => commands::grad_check(a),
        Cmd::Bench(a) => commands::bench(a),
        Cmd::Heatmap(a) => commands::heatmap(a),
    };
    if let Err(err) = result {
        let (class, code) = classify(&err);
        // One machine-parsable line on stderr.
        eprintln!("error class={class} msg={:?}", err.to_string());
        std::process::exit(code);
    }
}

/// Maps failures onto stable classes and exit codes: config 2, io 3,
/// data/schema 4, numeric 5, checkpoint 6, anything else 1.
fn classify(err: &anyhow::Error) -> (&'static str, i32) {
    if let Some(core) = err.downcast_ref::<eru_core::Error>() {
        let class = core.class();
        let code = match class {
            "config" => 2,
            "io" => 3,
            "json" | "doc" | "corpus" => 4,
            "numeric" => 5,
            "checkpoint" => 6,
            _ => 1,
        };
        (class, code)
    } else if err.downcast_ref::<std::io::Error>().is_some() {
        ("io", 3)
    } else {
        ("other", 1)
    }
}
