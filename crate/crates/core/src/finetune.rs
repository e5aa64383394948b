//! Multi-granularity sequence labeling: per-segment field and block heads
//! over the textual fusion outputs, a same-block pair head over
//! concatenated pairs, inference with field/block consistency repair, and
//! precision/recall/F1 evaluation.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::doc::{LabelSchema, ResumeDoc};
use crate::embed::{build_nodes, NodeSequence};
use crate::error::{Error, Result};
use crate::fusion::encode;
use crate::model::{apply_linear, apply_mlp, EruParams, PreparedDoc};
use crate::numerics::{
    clip_grad_norm, AdamW, LrMap, ParamStore, Real, Reduction, Tape, Tensor, Var,
};
use crate::seed::{child_seed, tagged_seed};

/// One sampled segment pair with its same-block gold label.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairSample {
    pub a: usize,
    pub b: usize,
    pub same_block: bool,
}

/// Samples `count` pairs, balanced between same-block and cross-block
/// whenever the document contains both kinds.
pub fn sample_pairs(doc: &PreparedDoc, count: usize, seed: u64) -> Result<Vec<PairSample>> {
    let labels = doc
        .labels
        .as_ref()
        .ok_or_else(|| Error::Doc(format!("document `{}` is unlabeled", doc.id)))?;
    let n = doc.n;
    if n < 2 || count == 0 {
        return Ok(Vec::new());
    }
    let mut same = Vec::new();
    let mut diff = Vec::new();
    for a in 0..n {
        for b in (a + 1)..n {
            if labels[a].1 == labels[b].1 {
                same.push((a, b));
            } else {
                diff.push((a, b));
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    for k in 0..count {
        let want_same = if same.is_empty() {
            false
        } else if diff.is_empty() {
            true
        } else {
            k % 2 == 0
        };
        let pool = if want_same { &same } else { &diff };
        let (a, b) = pool[rng.random_range(0..pool.len())];
        out.push(PairSample {
            a,
            b,
            same_block: want_same,
        });
    }
    Ok(out)
}

/// Textual fusion outputs `t'_i` for every segment: rows `2i` of the
/// encoded node states.
fn textual_outputs<F: Real>(
    tape: &mut Tape<F>,
    vars: &[Var],
    params: &EruParams,
    cfg: &RunConfig,
    doc: &PreparedDoc,
) -> Result<Var> {
    let nodes = build_nodes(tape, vars, params, &cfg.model, doc, None)?;
    let fused = encode(tape, vars, params, &cfg.model, nodes.inputs, &nodes.boxes);
    let text_rows: Vec<usize> = (0..doc.n).map(NodeSequence::text_row).collect();
    Ok(tape.select_rows(fused, &text_rows))
}

pub struct FinetuneLoss {
    pub total: Var,
    pub seg: Var,
    pub block: Var,
    pub pair: Var,
}

/// The fine-tuning objective: summed cross-entropy of the field head and
/// the block head over every segment, plus the same-block head over the
/// sampled pairs (all three as negative log-likelihood).
pub fn finetune_loss<F: Real>(
    tape: &mut Tape<F>,
    vars: &[Var],
    params: &EruParams,
    cfg: &RunConfig,
    doc: &PreparedDoc,
    pairs: &[PairSample],
) -> Result<FinetuneLoss> {
    let labels = doc
        .labels
        .as_ref()
        .ok_or_else(|| Error::Doc(format!("document `{}` is unlabeled", doc.id)))?;
    let t = textual_outputs(tape, vars, params, cfg, doc)?;

    let seg_logits = apply_linear(tape, vars, params.heads.c1, t);
    let seg_targets: Vec<usize> = labels.iter().map(|&(f, _)| f).collect();
    let seg = tape.cross_entropy(seg_logits, &seg_targets, Reduction::Sum);

    let block_logits = apply_linear(tape, vars, params.heads.c2, t);
    let block_targets: Vec<usize> = labels.iter().map(|&(_, b)| b).collect();
    let block = tape.cross_entropy(block_logits, &block_targets, Reduction::Sum);

    let pair = if pairs.is_empty() {
        tape.constant(Tensor::scalar(F::ZERO))
    } else {
        let a_rows: Vec<usize> = pairs.iter().map(|p| p.a).collect();
        let b_rows: Vec<usize> = pairs.iter().map(|p| p.b).collect();
        let a = tape.select_rows(t, &a_rows);
        let b = tape.select_rows(t, &b_rows);
        let features = tape.concat_cols(a, b);
        let logits = apply_mlp(tape, vars, params.heads.c3, features);
        let targets: Vec<usize> = pairs.iter().map(|p| usize::from(p.same_block)).collect();
        tape.cross_entropy(logits, &targets, Reduction::Sum)
    };

    let s = tape.add(seg, block);
    let total = tape.add(s, pair);
    Ok(FinetuneLoss {
        total,
        seg,
        block,
        pair,
    })
}

// ---- inference -----------------------------------------------------------------

/// Per-segment class distributions and repaired argmax labels, plus
/// same-block probabilities for diagnostic pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionSet {
    pub doc_id: String,
    pub seg_ids: Vec<u32>,
    /// Field distribution per segment (schema field order).
    pub field_probs: Vec<Vec<f32>>,
    /// Block distribution per segment (schema block order).
    pub block_probs: Vec<Vec<f32>>,
    pub fields: Vec<String>,
    pub blocks: Vec<String>,
    /// `(seg_a, seg_b, same-block probability)` for sampled pairs.
    pub pair_probs: Vec<(u32, u32, f32)>,
}

/// Argmax labeling with consistency repair: when the predicted field's
/// owning block disagrees with the block head, the field wins and the
/// block is overwritten with the owner.
pub fn predict<F: Real>(
    store: &ParamStore<F>,
    params: &EruParams,
    cfg: &RunConfig,
    schema: &LabelSchema,
    doc: &PreparedDoc,
) -> Result<PredictionSet> {
    let mut tape = Tape::<F>::new();
    let vars = store.bind(&mut tape);
    let t = textual_outputs(&mut tape, &vars, params, cfg, doc)?;
    let seg_logits = apply_linear(&mut tape, &vars, params.heads.c1, t);
    let block_logits = apply_linear(&mut tape, &vars, params.heads.c2, t);
    let field_probs_v = tape.row_softmax(seg_logits);
    let block_probs_v = tape.row_softmax(block_logits);

    let field_names = schema.field_names();
    let block_names = schema.block_names();
    let mut fields = Vec::with_capacity(doc.n);
    let mut blocks = Vec::with_capacity(doc.n);
    let mut field_probs = Vec::with_capacity(doc.n);
    let mut block_probs = Vec::with_capacity(doc.n);
    for i in 0..doc.n {
        let fp: Vec<f32> = row(&tape, field_probs_v, i);
        let bp: Vec<f32> = row(&tape, block_probs_v, i);
        let field_idx = argmax(&fp);
        let mut block_idx = argmax(&bp);
        let owner = schema.owner_block_index(field_idx);
        if owner != block_idx {
            block_idx = owner;
        }
        fields.push(field_names[field_idx].to_string());
        blocks.push(block_names[block_idx].to_string());
        field_probs.push(fp);
        block_probs.push(bp);
    }

    // Diagnostic pair probabilities over seeded random pairs.
    let mut pair_probs = Vec::new();
    if doc.n >= 2 {
        let mut rng = ChaCha8Rng::seed_from_u64(doc_seed(&doc.id));
        let count = 2 * doc.n;
        let mut a_rows = Vec::with_capacity(count);
        let mut b_rows = Vec::with_capacity(count);
        for _ in 0..count {
            let a = rng.random_range(0..doc.n);
            let mut b = rng.random_range(0..doc.n - 1);
            if b >= a {
                b += 1;
            }
            a_rows.push(a);
            b_rows.push(b);
        }
        let a = tape.select_rows(t, &a_rows);
        let b = tape.select_rows(t, &b_rows);
        let features = tape.concat_cols(a, b);
        let logits = apply_mlp(&mut tape, &vars, params.heads.c3, features);
        let probs = tape.row_softmax(logits);
        for (k, (&ra, &rb)) in a_rows.iter().zip(&b_rows).enumerate() {
            let p: Vec<f32> = row(&tape, probs, k);
            pair_probs.push((doc.seg_ids[ra], doc.seg_ids[rb], p[1]));
        }
    }

    Ok(PredictionSet {
        doc_id: doc.id.clone(),
        seg_ids: doc.seg_ids.clone(),
        field_probs,
        block_probs,
        fields,
        blocks,
        pair_probs,
    })
}

fn row<F: Real>(tape: &Tape<F>, v: Var, r: usize) -> Vec<f32> {
    let t = tape.value(v);
    let d = t.cols();
    t.data()[r * d..(r + 1) * d]
        .iter()
        .map(|x| x.to_f64() as f32)
        .collect()
}

fn argmax(xs: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in xs.iter().enumerate() {
        if v > xs[best] {
            best = i;
        }
    }
    best
}

fn doc_seed(id: &str) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for b in id.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x1000_0000_01b3);
    }
    h
}

/// Prediction output JSON: one record per segment.
pub fn prediction_to_json(pred: &PredictionSet, schema: &LabelSchema) -> serde_json::Value {
    let field_names = schema.field_names();
    let block_names = schema.block_names();
    let segments: Vec<serde_json::Value> = (0..pred.seg_ids.len())
        .map(|i| {
            let fi = field_names.iter().position(|f| *f == pred.fields[i]).unwrap();
            let bi = block_names.iter().position(|b| *b == pred.blocks[i]).unwrap();
            serde_json::json!({
                "id": pred.seg_ids[i],
                "field": pred.fields[i],
                "block": pred.blocks[i],
                "field_conf": pred.field_probs[i][fi],
                "block_conf": pred.block_probs[i][bi],
            })
        })
        .collect();
    serde_json::json!({ "doc_id": pred.doc_id, "segments": segments })
}

// ---- evaluation ----------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    fn from_counts(tp: u64, fp: u64, fn_: u64) -> Prf {
        let precision = if tp + fp == 0 {
            0.0
        } else {
            tp as f64 / (tp + fp) as f64
        };
        let recall = if tp + fn_ == 0 {
            0.0
        } else {
            tp as f64 / (tp + fn_) as f64
        };
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Prf {
            precision,
            recall,
            f1,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: String,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub gold: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Precision/recall/F1 over segment fields. Micro metrics exclude the
/// `other` class; macro is the unweighted mean over non-`other` classes
/// present in the gold labels. The confusion matrix covers every class.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub micro: Prf,
    pub macro_: Prf,
    pub per_class: Vec<ClassMetrics>,
    pub classes: Vec<String>,
    /// `confusion[gold][pred]` counts.
    pub confusion: Vec<Vec<u64>>,
    pub n_segments: usize,
    pub n_docs: usize,
}

impl std::fmt::Display for EvalReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(
            f,
            "micro (non-other): P {:.4}  R {:.4}  F1 {:.4}",
            self.micro.precision, self.micro.recall, self.micro.f1
        )?;
        writeln!(
            f,
            "macro (non-other): P {:.4}  R {:.4}  F1 {:.4}",
            self.macro_.precision, self.macro_.recall, self.macro_.f1
        )?;
        writeln!(
            f,
            "{:<22} {:>6} {:>6} {:>6} {:>8} {:>8} {:>8}",
            "class", "tp", "fp", "fn", "P", "R", "F1"
        )?;
        for c in &self.per_class {
            writeln!(
                f,
                "{:<22} {:>6} {:>6} {:>6} {:>8.4} {:>8.4} {:>8.4}",
                c.class, c.tp, c.fp, c.fn_, c.precision, c.recall, c.f1
            )?;
        }
        Ok(())
    }
}

/// Scores predictions against gold labels; segments are matched by id and
/// order, and any misalignment is an error.
pub fn evaluate(items: &[(&ResumeDoc, &PredictionSet)], schema: &LabelSchema) -> Result<EvalReport> {
    let classes: Vec<String> = schema.field_names().iter().map(|s| s.to_string()).collect();
    let idx = |name: &str| -> Result<usize> {
        classes
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::Doc(format!("label `{name}` not in schema")))
    };
    let other = idx("other")?;
    let k = classes.len();
    let mut confusion = vec![vec![0u64; k]; k];
    let mut n_segments = 0usize;
    for (doc, pred) in items {
        if doc.n_segments() != pred.seg_ids.len() {
            return Err(Error::Doc(format!(
                "document `{}`: {} gold segments vs {} predictions",
                doc.id,
                doc.n_segments(),
                pred.seg_ids.len()
            )));
        }
        for (i, seg) in doc.segments.iter().enumerate() {
            if seg.id != pred.seg_ids[i] {
                return Err(Error::Doc(format!(
                    "document `{}`: segment id mismatch at {i} ({} vs {})",
                    doc.id, seg.id, pred.seg_ids[i]
                )));
            }
            let gold = seg.label_seg.as_deref().ok_or_else(|| {
                Error::Doc(format!("document `{}`: segment {} unlabeled", doc.id, seg.id))
            })?;
            confusion[idx(gold)?][idx(&pred.fields[i])?] += 1;
            n_segments += 1;
        }
    }

    let mut per_class = Vec::with_capacity(k);
    let mut micro_tp = 0u64;
    let mut micro_fp = 0u64;
    let mut micro_fn = 0u64;
    for c in 0..k {
        let tp = confusion[c][c];
        let fp: u64 = (0..k).filter(|&g| g != c).map(|g| confusion[g][c]).sum();
        let fn_: u64 = (0..k).filter(|&p| p != c).map(|p| confusion[c][p]).sum();
        let gold = tp + fn_;
        let prf = Prf::from_counts(tp, fp, fn_);
        per_class.push(ClassMetrics {
            class: classes[c].clone(),
            tp,
            fp,
            fn_,
            gold,
            precision: prf.precision,
            recall: prf.recall,
            f1: prf.f1,
        });
        if c != other {
            micro_tp += tp;
            micro_fp += fp;
            micro_fn += fn_;
        }
    }
    let micro = Prf::from_counts(micro_tp, micro_fp, micro_fn);

    let in_macro: Vec<&ClassMetrics> = per_class
        .iter()
        .filter(|c| c.class != "other" && c.gold > 0)
        .collect();
    let macro_ = if in_macro.is_empty() {
        Prf {
            precision: 0.0,
            recall: 0.0,
            f1: 0.0,
        }
    } else {
        let m = in_macro.len() as f64;
        Prf {
            precision: in_macro.iter().map(|c| c.precision).sum::<f64>() / m,
            recall: in_macro.iter().map(|c| c.recall).sum::<f64>() / m,
            f1: in_macro.iter().map(|c| c.f1).sum::<f64>() / m,
        }
    };

    Ok(EvalReport {
        micro,
        macro_,
        per_class,
        classes,
        confusion,
        n_segments,
        n_docs: items.len(),
    })
}

// ---- training loop --------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub seg_loss: f64,
    pub block_loss: f64,
    pub pair_loss: f64,
    pub val_precision: f64,
    pub val_recall: f64,
    pub val_f1: f64,
}

pub fn finetune_history_to_csv(history: &[EpochRecord]) -> String {
    let mut out = String::from(
        "epoch,train_loss,seg_loss,block_loss,pair_loss,val_precision,val_recall,val_f1\n",
    );
    for r in history {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.epoch,
            r.train_loss,
            r.seg_loss,
            r.block_loss,
            r.pair_loss,
            r.val_precision,
            r.val_recall,
            r.val_f1
        ));
    }
    out
}

pub struct FinetuneOutput {
    /// Parameters of the best validation epoch.
    pub store: ParamStore<f32>,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_f1: f64,
}

/// Gold documents paired with their prepared forms, for evaluation.
pub struct LabeledSet {
    pub docs: Vec<ResumeDoc>,
    pub prepared: Vec<PreparedDoc>,
}

impl LabeledSet {
    /// Normalizes, orders, and prepares labeled documents.
    pub fn new(
        docs: Vec<ResumeDoc>,
        vocab: &crate::vocab::Vocab,
        cfg: &RunConfig,
        schema: &LabelSchema,
    ) -> Result<Self> {
        let docs: Vec<ResumeDoc> = docs
            .into_iter()
            .map(|d| Ok(crate::doc::assign_reading_order(crate::doc::normalize_boxes(d)?)))
            .collect::<Result<_>>()?;
        let prepared = docs
            .iter()
            .map(|d| PreparedDoc::prepare(d, vocab, &cfg.model, Some(schema)))
            .collect::<Result<_>>()?;
        Ok(LabeledSet { docs, prepared })
    }
}

/// Evaluates current parameters over a labeled set.
pub fn evaluate_set<F: Real>(
    store: &ParamStore<F>,
    params: &EruParams,
    cfg: &RunConfig,
    schema: &LabelSchema,
    set: &LabeledSet,
) -> Result<EvalReport> {
    let preds: Vec<PredictionSet> = set
        .prepared
        .par_iter()
        .map(|doc| predict(store, params, cfg, schema, doc))
        .collect::<Result<_>>()?;
    let items: Vec<(&ResumeDoc, &PredictionSet)> =
        set.docs.iter().zip(preds.iter()).collect();
    evaluate(&items, schema)
}

/// Fine-tunes from the given initialization, tracking the best validation
/// micro-F1 and stopping after `patience` epochs without improvement.
pub fn train_finetune(
    mut store: ParamStore<f32>,
    params: &EruParams,
    cfg: &RunConfig,
    schema: &LabelSchema,
    train: &LabeledSet,
    val: &LabeledSet,
    seed: u64,
) -> Result<FinetuneOutput> {
    if train.prepared.is_empty() || val.prepared.is_empty() {
        return Err(Error::Corpus("fine-tuning needs train and val documents".into()));
    }
    let lr_map = LrMap::standard(cfg.optim.lr_encoder, cfg.optim.lr_heads);
    let optimizer = AdamW {
        weight_decay: cfg.optim.weight_decay,
        ..AdamW::default()
    };

    let mut best: Option<(ParamStore<f32>, usize, f64)> = None;
    let mut stale = 0usize;
    let mut history = Vec::new();
    for epoch in 0..cfg.finetune.max_epochs {
        let mut order: Vec<usize> = (0..train.prepared.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(tagged_seed(seed, "ft-epoch", epoch as u64));
        for i in (1..order.len()).rev() {
            let j = rng.random_range(0..=i);
            order.swap(i, j);
        }

        let mut epoch_losses = (0.0, 0.0, 0.0, 0.0);
        for (batch_no, chunk) in order.chunks(cfg.finetune.batch_size).enumerate() {
            let batch_seed = tagged_seed(seed, "ft-batch", (epoch * 100_000 + batch_no) as u64);
            struct Out {
                grads: Vec<Option<Tensor<f32>>>,
                total: f64,
                seg: f64,
                block: f64,
                pair: f64,
            }
            let results: Vec<Result<Out>> = chunk
                .par_iter()
                .enumerate()
                .map(|(k, &doc_idx)| {
                    let doc = &train.prepared[doc_idx];
                    let pairs = sample_pairs(doc, 2 * doc.n, child_seed(batch_seed, k as u64))?;
                    let mut tape = Tape::new();
                    let vars = store.bind(&mut tape);
                    let loss = finetune_loss(&mut tape, &vars, params, cfg, doc, &pairs)?;
                    tape.backward(loss.total);
                    Ok(Out {
                        grads: vars.iter().map(|&v| tape.grad(v).cloned()).collect(),
                        total: f64::from(tape.value(loss.total).item()),
                        seg: f64::from(tape.value(loss.seg).item()),
                        block: f64::from(tape.value(loss.block).item()),
                        pair: f64::from(tape.value(loss.pair).item()),
                    })
                })
                .collect();
            store.zero_grads();
            for r in results {
                let out = r?;
                if !out.total.is_finite() {
                    return Err(Error::Numeric(format!(
                        "fine-tune loss is not finite at epoch {epoch}"
                    )));
                }
                store.accumulate_grads(&out.grads);
                epoch_losses.0 += out.total;
                epoch_losses.1 += out.seg;
                epoch_losses.2 += out.block;
                epoch_losses.3 += out.pair;
            }
            store.scale_grads(1.0 / chunk.len() as f64);
            clip_grad_norm(&mut store, cfg.optim.clip_norm);
            optimizer.step(&mut store, &lr_map)?;
        }

        let report = evaluate_set(&store, params, cfg, schema, val)?;
        let n_train = train.prepared.len() as f64;
        history.push(EpochRecord {
            epoch,
            train_loss: epoch_losses.0 / n_train,
            seg_loss: epoch_losses.1 / n_train,
            block_loss: epoch_losses.2 / n_train,
            pair_loss: epoch_losses.3 / n_train,
            val_precision: report.micro.precision,
            val_recall: report.micro.recall,
            val_f1: report.micro.f1,
        });

        let improved = best.as_ref().is_none_or(|(_, _, f1)| report.micro.f1 > *f1);
        if improved {
            best = Some((store.cast::<f32>(), epoch, report.micro.f1));
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.finetune.patience {
                break;
            }
        }
    }
    let (best_store, best_epoch, best_f1) = best.expect("at least one epoch ran");
    Ok(FinetuneOutput {
        store: best_store,
        history,
        best_epoch,
        best_f1,
    })
}


// ---- pre-training weight sweep -----------------------------------------------

/// One point of a loss-weight sweep.
#[derive(Debug, Clone, Copy)]
pub struct SweepPoint {
    pub lambda_msp: f64,
    pub test_f1: f64,
}

/// Sweeps the contrastive-loss weight: for each value, pre-trains on
/// `corpus`, fine-tunes on `train`/`val`, and scores `test`. Mirrors the
/// coefficient-analysis experiment shape at desk scale.
pub fn lambda_msp_sweep(
    corpus: &crate::corpus::CorpusDir,
    base_cfg: &RunConfig,
    schema: &LabelSchema,
    values: &[f64],
    train_docs: Vec<ResumeDoc>,
    val_docs: Vec<ResumeDoc>,
    test_docs: Vec<ResumeDoc>,
) -> Result<Vec<SweepPoint>> {
    let mut out = Vec::with_capacity(values.len());
    for &lambda in values {
        let mut cfg = base_cfg.clone();
        cfg.pretrain.lambda_msp = lambda;
        let pre = crate::pretrain::train_pretrain(corpus, &cfg, schema)?;
        let train = LabeledSet::new(train_docs.clone(), &pre.vocab, &cfg, schema)?;
        let val = LabeledSet::new(val_docs.clone(), &pre.vocab, &cfg, schema)?;
        let test = LabeledSet::new(test_docs.clone(), &pre.vocab, &cfg, schema)?;
        let ft = train_finetune(pre.store, &pre.params, &cfg, schema, &train, &val, cfg.seed)?;
        let report = evaluate_set(&ft.store, &pre.params, &cfg, schema, &test)?;
        out.push(SweepPoint {
            lambda_msp: lambda,
            test_f1: report.micro.f1,
        });
    }
    Ok(out)
}
