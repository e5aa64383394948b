use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::Args;

use eru_core::complexity::{analytic_costs, bench_rows_to_csv, BenchConfig, ComplexityParams};
use eru_core::corpus::{generate_corpus, neighbor_heatmap, write_corpus, CorpusDir};
use eru_core::doc::{assign_reading_order, default_schema, normalize_boxes, LabelSchema};
use eru_core::finetune::{
    evaluate, finetune_history_to_csv, predict, prediction_to_json, train_finetune, LabeledSet,
    PredictionSet,
};
use eru_core::model::{init_model, load_model_from_checkpoint, PreparedDoc};
use eru_core::numerics::{load_checkpoint, save_checkpoint};
use eru_core::pretrain::{corpus_texts, history_to_csv, train_pretrain};
use eru_core::vocab::Vocab;
use eru_core::RunConfig;

use crate::manifest::ManifestBuilder;

/// `--config` accepts a JSON path or a builtin preset name
/// (`desk`, `tiny`, `paper-stats`).
fn load_config(spec: &str, seed: Option<u64>) -> anyhow::Result<RunConfig> {
    let path = Path::new(spec);
    let mut cfg = if path.exists() {
        let bytes = std::fs::read(path)
            .map_err(|e| eru_core::Error::io(path.display().to_string(), e))?;
        RunConfig::from_json(&bytes)?
    } else {
        match spec {
            "desk" => RunConfig::desk(0),
            "tiny" => RunConfig::tiny(0),
            "paper-stats" => {
                let mut c = RunConfig::desk(0);
                c.profile = eru_core::corpus::CorpusProfile::paper_stats(0);
                c.model.crop_h = c.profile.crop_h;
                c.model.crop_w = c.profile.crop_w;
                c
            }
            other => bail!(eru_core::Error::Config(format!(
                "config `{other}` is neither a file nor a builtin preset (desk, tiny, paper-stats)"
            ))),
        }
    };
    if let Some(seed) = seed {
        cfg.seed = seed;
        cfg.profile.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_schema(path: Option<&PathBuf>) -> anyhow::Result<LabelSchema> {
    match path {
        None => Ok(default_schema()),
        Some(p) => {
            let bytes =
                std::fs::read(p).map_err(|e| eru_core::Error::io(p.display().to_string(), e))?;
            Ok(LabelSchema::from_json(&bytes)?)
        }
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)
                .map_err(|e| eru_core::Error::io(dir.display().to_string(), e))?;
        }
    }
    std::fs::write(path, bytes).map_err(|e| eru_core::Error::io(path.display().to_string(), e))?;
    Ok(())
}

// ---- gen-corpus ------------------------------------------------------------

#[derive(Args)]
pub struct GenCorpusArgs {
    /// Run config (JSON path or builtin preset).
    #[arg(long, default_value = "desk")]
    config: String,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Number of documents.
    #[arg(long, default_value_t = 100)]
    n_docs: usize,
    /// Attach gold labels.
    #[arg(long, default_value_t = false)]
    labeled: bool,
    /// Output corpus directory.
    #[arg(long)]
    out: PathBuf,
}

pub fn gen_corpus(args: GenCorpusArgs) -> anyhow::Result<()> {
    let cfg = load_config(&args.config, args.seed)?;
    let mb = ManifestBuilder::new("gen-corpus").config(&cfg);
    let docs = generate_corpus(&cfg.profile, args.n_docs, args.labeled)?;
    let manifest = write_corpus(&args.out, &docs, &cfg.profile, args.labeled)?;
    println!(
        "wrote {} documents to {} (avg segments {:.2}, avg tokens {:.2}, avg pages {:.2})",
        manifest.n_docs,
        args.out.display(),
        manifest.stats.avg_segments,
        manifest.stats.avg_seg_tokens,
        manifest.stats.avg_pages,
    );
    mb.output(&args.out).write(&args.out.join("run_manifest.json"))?;
    Ok(())
}

// ---- pretrain ---------------------------------------------------------------

#[derive(Args)]
pub struct PretrainArgs {
    #[arg(long, default_value = "desk")]
    config: String,
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the configured step count.
    #[arg(long)]
    steps: Option<usize>,
    /// Unlabeled corpus directory.
    #[arg(long)]
    corpus: PathBuf,
    /// Optional label taxonomy JSON (defaults to the builtin schema).
    #[arg(long)]
    schema: Option<PathBuf>,
    /// Output directory for checkpoint, vocabulary, and loss log.
    #[arg(long)]
    out: PathBuf,
}

pub fn pretrain(args: PretrainArgs) -> anyhow::Result<()> {
    let mut cfg = load_config(&args.config, args.seed)?;
    if let Some(steps) = args.steps {
        cfg.pretrain.steps = steps;
    }
    let schema = load_schema(args.schema.as_ref())?;
    let mb = ManifestBuilder::new("pretrain").config(&cfg).input(&args.corpus);

    let corpus = CorpusDir::open(&args.corpus)?;
    let out = train_pretrain(&corpus, &cfg, &schema)?;

    std::fs::create_dir_all(&args.out)
        .map_err(|e| eru_core::Error::io(args.out.display().to_string(), e))?;
    let vocab_path = args.out.join("vocab.json");
    write_file(&vocab_path, &out.vocab.to_json())?;
    let ckpt_path = args.out.join("pretrain.ckpt");
    save_checkpoint(
        &ckpt_path,
        &out.store,
        cfg.to_json_value(),
        Some(out.vocab.sha256_hex()),
        Some(schema.to_json_value()),
    )?;
    let csv_path = args.out.join("pretrain_loss.csv");
    write_file(&csv_path, history_to_csv(&out.history).as_bytes())?;

    let first = out.history.first().expect("at least one step");
    let last = out.history.last().expect("at least one step");
    println!(
        "pre-trained {} steps: L_pre {:.4} -> {:.4} ({} parameters, vocab {})",
        out.history.len(),
        first.l_pre,
        last.l_pre,
        out.store.scalar_count(),
        out.vocab.len(),
    );
    mb.output(&ckpt_path)
        .output(&vocab_path)
        .output(&csv_path)
        .write(&args.out.join("run_manifest.json"))?;
    Ok(())
}

// ---- finetune ---------------------------------------------------------------

#[derive(Args)]
pub struct FinetuneArgs {
    #[arg(long, default_value = "desk")]
    config: String,
    #[arg(long)]
    seed: Option<u64>,
    /// Pre-trained checkpoint; omit to fine-tune from random init.
    #[arg(long)]
    ckpt: Option<PathBuf>,
    /// Vocabulary JSON (default: next to the checkpoint, or built from
    /// the training corpus when starting from random init).
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long)]
    schema: Option<PathBuf>,
    /// Labeled training corpus directory.
    #[arg(long)]
    train: PathBuf,
    /// Labeled validation corpus directory.
    #[arg(long)]
    val: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn load_vocab_file(path: &Path) -> anyhow::Result<Vocab> {
    let bytes =
        std::fs::read(path).map_err(|e| eru_core::Error::io(path.display().to_string(), e))?;
    Ok(Vocab::from_json(&bytes)?)
}

pub fn finetune(args: FinetuneArgs) -> anyhow::Result<()> {
    let flag_cfg = load_config(&args.config, args.seed)?;
    let schema = load_schema(args.schema.as_ref())?;
    let mb = ManifestBuilder::new("finetune").input(&args.train).input(&args.val);

    let train_dir = CorpusDir::open(&args.train)?;
    let val_dir = CorpusDir::open(&args.val)?;

    // Initialization: checkpoint (its own config and vocab) or random.
    let (cfg, vocab, store, params) = match &args.ckpt {
        Some(ckpt_path) => {
            let ckpt = load_checkpoint(ckpt_path)?;
            let vocab_path = args
                .vocab
                .clone()
                .unwrap_or_else(|| ckpt_path.with_file_name("vocab.json"));
            let vocab = load_vocab_file(&vocab_path)?;
            let (mut cfg, _, store, params) = load_model_from_checkpoint(&ckpt, &vocab)?;
            // Training-loop settings come from the flag config; model
            // dimensions stay pinned to the checkpoint.
            cfg.finetune = flag_cfg.finetune.clone();
            cfg.optim = flag_cfg.optim.clone();
            cfg.seed = flag_cfg.seed;
            (cfg, vocab, store, params)
        }
        None => {
            let cfg = flag_cfg.clone();
            let vocab = match &args.vocab {
                Some(p) => load_vocab_file(p)?,
                None => {
                    let texts = corpus_texts(&train_dir)?;
                    Vocab::build(texts.iter().map(|s| s.as_str()), cfg.model.vocab_max)
                }
            };
            let (store, params) = init_model::<f32>(&cfg, &vocab, &schema);
            (cfg, vocab, store, params)
        }
    };

    let train_set = LabeledSet::new(train_dir.load_all(Some(&schema))?, &vocab, &cfg, &schema)?;
    let val_set = LabeledSet::new(val_dir.load_all(Some(&schema))?, &vocab, &cfg, &schema)?;
    let out = train_finetune(store, &params, &cfg, &schema, &train_set, &val_set, cfg.seed)?;

    std::fs::create_dir_all(&args.out)
        .map_err(|e| eru_core::Error::io(args.out.display().to_string(), e))?;
    let vocab_path = args.out.join("vocab.json");
    write_file(&vocab_path, &vocab.to_json())?;
    let ckpt_path = args.out.join("finetune.ckpt");
    save_checkpoint(
        &ckpt_path,
        &out.store,
        cfg.to_json_value(),
        Some(vocab.sha256_hex()),
        Some(schema.to_json_value()),
    )?;
    let csv_path = args.out.join("finetune_log.csv");
    write_file(&csv_path, finetune_history_to_csv(&out.history).as_bytes())?;
    println!(
        "fine-tuned {} epochs: best validation F1 {:.4} at epoch {}",
        out.history.len(),
        out.best_f1,
        out.best_epoch
    );
    mb.config(&cfg)
        .output(&ckpt_path)
        .output(&vocab_path)
        .output(&csv_path)
        .write(&args.out.join("run_manifest.json"))?;
    Ok(())
}

// ---- eval ---------------------------------------------------------------------

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// Labeled test corpus directory.
    #[arg(long)]
    test: PathBuf,
    /// Report JSON output path.
    #[arg(long)]
    report: PathBuf,
}

fn load_model_files(
    ckpt_path: &Path,
    vocab_flag: Option<&PathBuf>,
) -> anyhow::Result<(RunConfig, LabelSchema, Vocab, eru_core::ParamStore<f32>, eru_core::model::EruParams)>
{
    let ckpt = load_checkpoint(ckpt_path)?;
    let vocab_path = vocab_flag
        .cloned()
        .unwrap_or_else(|| ckpt_path.with_file_name("vocab.json"));
    let vocab = load_vocab_file(&vocab_path)?;
    let (cfg, schema, store, params) = load_model_from_checkpoint(&ckpt, &vocab)?;
    Ok((cfg, schema, vocab, store, params))
}

pub fn eval(args: EvalArgs) -> anyhow::Result<()> {
    let mb = ManifestBuilder::new("eval").input(&args.ckpt).input(&args.test);
    let (cfg, schema, vocab, store, params) = load_model_files(&args.ckpt, args.vocab.as_ref())?;
    let test_dir = CorpusDir::open(&args.test)?;
    let set = LabeledSet::new(test_dir.load_all(Some(&schema))?, &vocab, &cfg, &schema)?;

    let preds: Vec<PredictionSet> = set
        .prepared
        .iter()
        .map(|doc| predict(&store, &params, &cfg, &schema, doc))
        .collect::<eru_core::Result<_>>()?;
    let items: Vec<_> = set.docs.iter().zip(preds.iter()).collect();
    let report = evaluate(&items, &schema)?;

    write_file(&args.report, &serde_json::to_vec_pretty(&report)?)?;
    print!("{report}");
    mb.seed(cfg.seed)
        .output(&args.report)
        .write(&manifest_sibling(&args.report))?;
    Ok(())
}

fn manifest_sibling(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    path.with_file_name(name)
}

// ---- parse --------------------------------------------------------------------

#[derive(Args)]
pub struct ParseArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// Segment-JSON document to parse.
    #[arg(long)]
    input: PathBuf,
    /// Prediction JSON output (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn parse(args: ParseArgs) -> anyhow::Result<()> {
    let mb = ManifestBuilder::new("parse").input(&args.ckpt).input(&args.input);
    let (cfg, schema, vocab, store, params) = load_model_files(&args.ckpt, args.vocab.as_ref())?;
    let doc = eru_core::doc::load_document_from_path(&args.input, Some(&schema))?;
    let doc = assign_reading_order(normalize_boxes(doc)?);
    let prepared = PreparedDoc::prepare(&doc, &vocab, &cfg.model, Some(&schema))?;
    let pred = predict(&store, &params, &cfg, &schema, &prepared)?;
    let json = serde_json::to_vec_pretty(&prediction_to_json(&pred, &schema))?;
    match &args.out {
        Some(path) => {
            write_file(path, &json)?;
            mb.seed(cfg.seed).output(path).write(&manifest_sibling(path))?;
        }
        None => {
            println!("{}", String::from_utf8_lossy(&json));
        }
    }
    Ok(())
}

// ---- grad-check -----------------------------------------------------------------

#[derive(Args)]
pub struct GradCheckArgs {
    #[arg(long, default_value = "tiny")]
    config: String,
    #[arg(long)]
    seed: Option<u64>,
    /// Central-difference step.
    #[arg(long, default_value_t = 1e-4)]
    eps: f64,
    /// Maximum allowed relative error.
    #[arg(long, default_value_t = 1e-3)]
    tolerance: f64,
}

pub fn grad_check(args: GradCheckArgs) -> anyhow::Result<()> {
    let cfg = load_config(&args.config, args.seed)?;
    let checks = eru_core::verify::grad_check_suite(&cfg, args.eps)?;
    let mut worst: f64 = 0.0;
    for check in &checks {
        let ok = check.report.max_rel_err <= args.tolerance;
        println!(
            "{:6} {} ({})",
            check.name,
            if ok { "PASS" } else { "FAIL" },
            check.report
        );
        worst = worst.max(check.report.max_rel_err);
    }
    println!("max rel err {worst:.3e} (tolerance {:.1e})", args.tolerance);
    if worst > args.tolerance {
        bail!(eru_core::Error::Numeric(format!(
            "gradient check failed: {worst:.3e} exceeds {:.1e}",
            args.tolerance
        )));
    }
    Ok(())
}

// ---- bench ------------------------------------------------------------------------

#[derive(Args)]
pub struct BenchArgs {
    /// Document sizes in tokens.
    #[arg(long, value_delimiter = ',', default_value = "500,1000,2000")]
    sizes: Vec<usize>,
    #[arg(long, default_value_t = 5)]
    runs: usize,
    #[arg(long, default_value_t = 48)]
    d_f: usize,
    #[arg(long, default_value_t = 4)]
    heads: usize,
    /// Text-encoder layers.
    #[arg(long, default_value_t = 6)]
    l1: usize,
    /// Fusion layers.
    #[arg(long, default_value_t = 4)]
    l3: usize,
    /// Token-model layers.
    #[arg(long, default_value_t = 12)]
    l_prime: usize,
    /// Tokens per segment.
    #[arg(long, default_value_t = 32)]
    q: usize,
    /// Token-model window.
    #[arg(long, default_value_t = 512)]
    z: usize,
    #[arg(long, default_value_t = 17)]
    seed: u64,
    /// Timing CSV output.
    #[arg(long)]
    out: PathBuf,
}

pub fn bench(args: BenchArgs) -> anyhow::Result<()> {
    let mb = ManifestBuilder::new("bench").seed(args.seed);
    let cfg = BenchConfig {
        d_f: args.d_f,
        heads: args.heads,
        ff_mult: 4,
        l1: args.l1,
        l3: args.l3,
        l_prime: args.l_prime,
        q: args.q,
        z: args.z,
        runs: args.runs,
        seed: args.seed,
        ..BenchConfig::default()
    };
    for &n in &args.sizes {
        let analytic = analytic_costs(&ComplexityParams {
            l1: args.l1,
            l2_conv: 2,
            l3: args.l3,
            l_prime: args.l_prime,
            q: args.q,
            z: args.z,
            n_tokens: n,
            conv_e: 8,
            conv_k: 3,
            conv_c_in: 8,
            conv_c_out: 16,
        })?;
        println!(
            "N={n}: analytic T_eru {} vs T_token {} (ratio {:.4})",
            analytic.t_eru, analytic.t_token, analytic.ratio
        );
    }
    let out = eru_core::complexity::empirical_bench(&args.sizes, &cfg)?;
    for s in &out.skipped {
        println!("N={}: skipped ({})", s.n_tokens, s.reason);
    }
    let rows = out.rows;
    for r in &rows {
        println!(
            "N={}: segment {:.1} ms vs token {:.1} ms (ratio {:.3})",
            r.n_tokens, r.t_segment_ms, r.t_token_ms, r.ratio
        );
    }
    write_file(&args.out, bench_rows_to_csv(&rows).as_bytes())?;
    println!("timings written to {} (single-threaded harness)", args.out.display());
    mb.output(&args.out).write(&manifest_sibling(&args.out))?;
    Ok(())
}

// ---- heatmap ------------------------------------------------------------------------

#[derive(Args)]
pub struct HeatmapArgs {
    /// Labeled corpus directory.
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    schema: Option<PathBuf>,
    /// Heatmap CSV output.
    #[arg(long)]
    out: PathBuf,
}

pub fn heatmap(args: HeatmapArgs) -> anyhow::Result<()> {
    let mb = ManifestBuilder::new("heatmap").input(&args.corpus);
    let schema = load_schema(args.schema.as_ref())?;
    let dir = CorpusDir::open(&args.corpus)?;
    let docs: Vec<_> = dir
        .load_all(Some(&schema))?
        .into_iter()
        .map(|d| Ok(assign_reading_order(normalize_boxes(d)?)))
        .collect::<eru_core::Result<_>>()?;
    let hm = neighbor_heatmap(&docs, &schema)?;
    write_file(&args.out, hm.to_csv().as_bytes())?;
    println!(
        "heatmap over {} documents written to {} (same-block fraction {:.3}, {} skipped)",
        docs.len(),
        args.out.display(),
        hm.same_block_fraction(&schema),
        hm.skipped
    );
    mb.output(&args.out).write(&manifest_sibling(&args.out))?;
    Ok(())
}

/// Context helper kept for error chains that need paths attached.
#[allow(dead_code)]
fn with_path<T>(r: std::io::Result<T>, path: &Path) -> anyhow::Result<T> {
    r.with_context(|| format!("at {}", path.display()))
}
