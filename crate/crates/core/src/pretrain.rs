//! Self-supervised pre-training: masked language modeling over segment
//! tokens, visual-position alignment between neighboring crops, and
//! contrastive masked segment prediction between a clean and a
//! segment-masked fusion pass. The three losses combine as
//! `L = w_mlm * L_mlm + w_vpa * L_vpa + w_msp * L_msp`.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::RunConfig;
use crate::corpus::CorpusDir;
use crate::doc::{assign_reading_order, normalize_boxes, BBox, LabelSchema};
use crate::embed::build_nodes;
use crate::error::{Error, Result};
use crate::fusion::encode;
use crate::model::{apply_linear, apply_mlp, init_model, EruParams, PreparedDoc};
use crate::numerics::{
    clip_grad_norm, AdamW, LrMap, ParamStore, Real, Reduction, Tape, Tensor, Var,
};
use crate::seed::{child_seed, tagged_seed};
use crate::vocab::{Vocab, CLS, SEP, SPECIALS};

/// What happens to one selected MLM token.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MlmAction {
    /// Replace with `[MASK]`.
    Mask,
    /// Replace with the given vocabulary id.
    Random(usize),
    /// Keep the original id (still predicted).
    Keep,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Up,
    Down,
    Left,
    Right,
}

impl Direction {
    pub fn index(self) -> usize {
        match self {
            Direction::Up => 0,
            Direction::Down => 1,
            Direction::Left => 2,
            Direction::Right => 3,
        }
    }
}

/// Neighbor direction from box centers, y-down convention. Vertical wins
/// ties. Coincident centers are an error; sampling excludes them.
pub fn direction_label(anchor: BBox, neighbor: BBox) -> Result<Direction> {
    let (ax, ay) = anchor.center();
    let (nx, ny) = neighbor.center();
    let (dx, dy) = (nx - ax, ny - ay);
    if dx == 0.0 && dy == 0.0 {
        return Err(Error::Doc("direction undefined for coincident centers".into()));
    }
    Ok(if dy.abs() >= dx.abs() {
        if dy < 0.0 {
            Direction::Up
        } else {
            Direction::Down
        }
    } else if dx < 0.0 {
        Direction::Left
    } else {
        Direction::Right
    })
}

/// Per-document masking and sampling decisions for one pre-training step.
#[derive(Debug, Clone)]
pub struct MaskPlan {
    /// Per segment: `(token position, action)` for each selected token.
    pub mlm: Vec<Vec<(usize, MlmAction)>>,
    /// Segments whose textual node is replaced by the text mask vector.
    pub m_t: Vec<usize>,
    /// Segments whose visual node is replaced (disjoint from `m_t`).
    pub m_v: Vec<usize>,
    /// `(anchor segment, neighbor segment, label)` per alignment sample.
    pub vpa_pairs: Vec<(usize, usize, Direction)>,
    /// Negative node indices per masked node, aligned with
    /// [`MaskPlan::masked_nodes`].
    pub msp_negatives: Vec<Vec<usize>>,
}

/// Neighbor pool size for visual-position alignment.
const VPA_POOL: usize = 4;

impl MaskPlan {
    pub fn build(doc: &PreparedDoc, cfg: &RunConfig, vocab_len: usize, seed: u64) -> Self {
        let n = doc.n;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = &cfg.pretrain;

        // MLM: select non-special positions at `mlm_rate`, 80/10/10.
        let mut mlm = Vec::with_capacity(n);
        for ids in &doc.token_ids {
            let mut picks = Vec::new();
            for (pos, &id) in ids.iter().enumerate() {
                if id == CLS || id == SEP {
                    continue;
                }
                if rng.random_range(0.0..1.0) < p.mlm_rate {
                    let roll: f64 = rng.random_range(0.0..1.0);
                    let action = if roll < 0.8 {
                        MlmAction::Mask
                    } else if roll < 0.9 {
                        MlmAction::Random(rng.random_range(SPECIALS.len()..vocab_len))
                    } else {
                        MlmAction::Keep
                    };
                    picks.push((pos, action));
                }
            }
            mlm.push(picks);
        }

        // MSP: q masked terms over disjoint segments, split across the
        // modalities; q < |S|.
        let (m_t, m_v) = if n < 2 {
            (Vec::new(), Vec::new())
        } else {
            let q = ((p.msp_rate * 2.0 * n as f64).ceil() as usize)
                .max(1)
                .min(n - 1);
            let mut segs: Vec<usize> = (0..n).collect();
            shuffle(&mut segs, &mut rng);
            segs.truncate(q);
            let cut = q.div_ceil(2);
            (segs[..cut].to_vec(), segs[cut..].to_vec())
        };

        // VPA: one neighbor per segment from its nearest same-page pool.
        let mut vpa_pairs = Vec::new();
        for i in 0..n {
            let (cx, cy) = doc.boxes[i].center();
            let mut pool: Vec<(f64, usize)> = (0..n)
                .filter(|&j| j != i && doc.pages[j] == doc.pages[i])
                .filter_map(|j| {
                    let (ox, oy) = doc.boxes[j].center();
                    let d2 = (cx - ox).powi(2) + (cy - oy).powi(2);
                    (d2 > 0.0).then_some((d2, j))
                })
                .collect();
            pool.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            pool.truncate(VPA_POOL);
            if pool.is_empty() {
                continue;
            }
            let (_, j) = pool[rng.random_range(0..pool.len())];
            let label = direction_label(doc.boxes[i], doc.boxes[j])
                .expect("coincident centers filtered from pool");
            vpa_pairs.push((i, j, label));
        }

        // MSP negatives: uniform without replacement from other positions.
        let n_nodes = 2 * n;
        let n_neg = p.n_neg.min(n / 2).max(1).min(n_nodes.saturating_sub(1));
        let masked = Self::masked_node_list(&m_t, &m_v);
        let msp_negatives = masked
            .iter()
            .map(|&m| {
                let mut candidates: Vec<usize> = (0..n_nodes).filter(|&k| k != m).collect();
                shuffle(&mut candidates, &mut rng);
                candidates.truncate(n_neg);
                candidates
            })
            .collect();

        MaskPlan {
            mlm,
            m_t,
            m_v,
            vpa_pairs,
            msp_negatives,
        }
    }

    fn masked_node_list(m_t: &[usize], m_v: &[usize]) -> Vec<usize> {
        m_t.iter()
            .map(|&i| 2 * i)
            .chain(m_v.iter().map(|&i| 2 * i + 1))
            .collect()
    }

    /// Masked node indices, text nodes first, aligned with `msp_negatives`.
    pub fn masked_nodes(&self) -> Vec<usize> {
        Self::masked_node_list(&self.m_t, &self.m_v)
    }

    /// Token ids with MLM actions applied, plus `(segment, position)` of
    /// every predicted token.
    pub fn masked_token_ids(&self, doc: &PreparedDoc) -> (Vec<Vec<usize>>, Vec<(usize, usize)>) {
        let mut ids = doc.token_ids.clone();
        let mut targets = Vec::new();
        for (seg, picks) in self.mlm.iter().enumerate() {
            for &(pos, action) in picks {
                match action {
                    MlmAction::Mask => ids[seg][pos] = crate::vocab::MASK,
                    MlmAction::Random(r) => ids[seg][pos] = r,
                    MlmAction::Keep => {}
                }
                targets.push((seg, pos));
            }
        }
        (ids, targets)
    }
}

fn shuffle(items: &mut [usize], rng: &mut ChaCha8Rng) {
    for i in (1..items.len()).rev() {
        let j = rng.random_range(0..=i);
        items.swap(i, j);
    }
}

// ---- losses -------------------------------------------------------------------

/// Masked-token reconstruction: mean cross-entropy over masked positions,
/// predicted from the text encoder's per-token states through the vocab
/// projection. Layout inputs are untouched by the masking. Also returns
/// the masked-position count (zero positions contribute a zero loss).
pub fn mlm_loss<F: Real>(
    tape: &mut Tape<F>,
    vars: &[Var],
    params: &EruParams,
    cfg: &RunConfig,
    doc: &PreparedDoc,
    plan: &MaskPlan,
) -> Result<(Var, usize)> {
    let (masked_ids, targets) = plan.masked_token_ids(doc);
    if targets.is_empty() {
        return Ok((tape.constant(Tensor::scalar(F::ZERO)), 0));
    }
    let mut encoded: Vec<Option<Var>> = vec![None; doc.n];
    let mut state_rows = Vec::with_capacity(targets.len());
    let mut target_ids = Vec::with_capacity(targets.len());
    for &(seg, pos) in &targets {
        if encoded[seg].is_none() {
            let enc =
                crate::embed::encode_text(tape, vars, &params.text, &cfg.model, &masked_ids[seg])?;
            encoded[seg] = Some(enc.tokens);
        }
        let states = encoded[seg].unwrap();
        state_rows.push(tape.select_rows(states, &[pos]));
        target_ids.push(doc.token_ids[seg][pos]);
    }
    let stacked = tape.concat_rows(&state_rows);
    let logits = apply_linear(tape, vars, params.heads.mlm, stacked);
    let loss = tape.cross_entropy(logits, &target_ids, Reduction::Mean);
    Ok((loss, targets.len()))
}

/// Direction classification over concatenated raw visual embeddings.
pub fn vpa_loss<F: Real>(
    tape: &mut Tape<F>,
    vars: &[Var],
    params: &EruParams,
    cfg: &RunConfig,
    doc: &PreparedDoc,
    plan: &MaskPlan,
) -> Result<Var> {
    if plan.vpa_pairs.is_empty() {
        return Ok(tape.constant(Tensor::scalar(F::ZERO)));
    }
    let mut vis: Vec<Option<Var>> = vec![None; doc.n];
    let mut anchor_rows = Vec::with_capacity(plan.vpa_pairs.len());
    let mut neighbor_rows = Vec::with_capacity(plan.vpa_pairs.len());
    let mut labels = Vec::with_capacity(plan.vpa_pairs.len());
    for &(a, b, dir) in &plan.vpa_pairs {
        for idx in [a, b] {
            if vis[idx].is_none() {
                vis[idx] = Some(crate::embed::encode_visual(
                    tape,
                    vars,
                    &params.vis,
                    &cfg.model,
                    &doc.crops[idx],
                )?);
            }
        }
        anchor_rows.push(vis[a].unwrap());
        neighbor_rows.push(vis[b].unwrap());
        labels.push(dir.index());
    }
    let anchors = tape.concat_rows(&anchor_rows);
    let neighbors = tape.concat_rows(&neighbor_rows);
    let features = tape.concat_cols(anchors, neighbors);
    let logits = apply_mlp(tape, vars, params.heads.vpa, features);
    Ok(tape.cross_entropy(logits, &labels, Reduction::Mean))
}

/// One InfoNCE term: cross-entropy of the positive (candidate row 0)
/// against all candidates under temperature-scaled cosine similarity.
pub fn contrastive_term<F: Real>(tape: &mut Tape<F>, anchor: Var, candidates: Var, tau: f64) -> Var {
    let a = tape.l2_normalize_rows(anchor);
    let c = tape.l2_normalize_rows(candidates);
    let ct = tape.transpose(c);
    let sims = tape.matmul(a, ct);
    let scaled = tape.scale(sims, 1.0 / tau);
    tape.cross_entropy(scaled, &[0], Reduction::Sum)
}

/// Contrastive masked segment prediction: clean and segment-masked fusion
/// passes, mean InfoNCE over the masked nodes. The clean states serve as
/// detached targets, so gradients flow through the masked pass only:
/// improving the loss means reconstructing content from context, never
/// simplifying the clean representation itself.
pub fn msp_loss<F: Real>(
    tape: &mut Tape<F>,
    vars: &[Var],
    params: &EruParams,
    cfg: &RunConfig,
    doc: &PreparedDoc,
    plan: &MaskPlan,
) -> Result<Var> {
    let masked = plan.masked_nodes();
    if doc.n < 2 || masked.is_empty() {
        return Ok(tape.constant(Tensor::scalar(F::ZERO)));
    }
    let nodes = build_nodes(tape, vars, params, &cfg.model, doc, None)?;
    let clean_out = encode(tape, vars, params, &cfg.model, nodes.inputs, &nodes.boxes);
    let anchors: Vec<Var> = masked
        .iter()
        .map(|&m| {
            let rows = tape.select_rows(clean_out, &[m]);
            tape.detach(rows)
        })
        .collect();
    msp_against_anchors(tape, vars, params, cfg, doc, plan, &anchors)
}

/// The masked-pass side of the contrastive loss, scored against fixed
/// anchor rows (one `[1, d_f]` target per masked node).
fn msp_against_anchors<F: Real>(
    tape: &mut Tape<F>,
    vars: &[Var],
    params: &EruParams,
    cfg: &RunConfig,
    doc: &PreparedDoc,
    plan: &MaskPlan,
    anchors: &[Var],
) -> Result<Var> {
    let masked = plan.masked_nodes();
    let nodes = build_nodes(tape, vars, params, &cfg.model, doc, None)?;

    // Masked input: selected modality embeddings are replaced by the
    // learned mask vectors; the position bias still applies.
    let mut rows = nodes.rows.clone();
    for &i in &plan.m_t {
        let m = params.masks.text.v(vars);
        rows[2 * i] = tape.add(m, nodes.pos_bias[i]);
    }
    for &i in &plan.m_v {
        let m = params.masks.vis.v(vars);
        rows[2 * i + 1] = tape.add(m, nodes.pos_bias[i]);
    }
    let masked_inputs = tape.concat_rows(&rows);
    let masked_out = encode(tape, vars, params, &cfg.model, masked_inputs, &nodes.boxes);

    let mut acc: Option<Var> = None;
    for (slot, &m) in masked.iter().enumerate() {
        let mut cand_idx = vec![m];
        cand_idx.extend_from_slice(&plan.msp_negatives[slot]);
        let candidates = tape.select_rows(masked_out, &cand_idx);
        let term = contrastive_term(tape, anchors[slot], candidates, cfg.pretrain.tau);
        acc = Some(match acc {
            None => term,
            Some(a) => tape.add(a, term),
        });
    }
    Ok(tape.scale(acc.expect("masked set non-empty"), 1.0 / masked.len() as f64))
}

/// Clean-pass anchor rows for every masked node, as plain tensors. The
/// finite-difference oracle pins these at the current parameters so the
/// checked function matches what a training step descends.
pub fn msp_clean_targets<F: Real>(
    store: &crate::numerics::ParamStore<F>,
    params: &EruParams,
    cfg: &RunConfig,
    doc: &PreparedDoc,
    plan: &MaskPlan,
) -> Result<Vec<Tensor<F>>> {
    let mut tape = Tape::new();
    let vars = store.bind(&mut tape);
    let nodes = build_nodes(&mut tape, &vars, params, &cfg.model, doc, None)?;
    let clean_out = encode(&mut tape, &vars, params, &cfg.model, nodes.inputs, &nodes.boxes);
    Ok(plan
        .masked_nodes()
        .iter()
        .map(|&m| {
            let row = tape.select_rows(clean_out, &[m]);
            tape.value(row).clone()
        })
        .collect())
}

/// The contrastive loss with the anchor targets supplied as constants.
pub fn msp_loss_fixed_targets<F: Real>(
    tape: &mut Tape<F>,
    vars: &[Var],
    params: &EruParams,
    cfg: &RunConfig,
    doc: &PreparedDoc,
    plan: &MaskPlan,
    targets: &[Tensor<F>],
) -> Result<Var> {
    let masked = plan.masked_nodes();
    if doc.n < 2 || masked.is_empty() {
        return Ok(tape.constant(Tensor::scalar(F::ZERO)));
    }
    assert_eq!(targets.len(), masked.len(), "one target per masked node");
    let anchors: Vec<Var> = targets.iter().map(|t| tape.constant(t.clone())).collect();
    msp_against_anchors(tape, vars, params, cfg, doc, plan, &anchors)
}

pub struct DocLoss {
    pub total: Var,
    pub mlm: Var,
    pub vpa: Var,
    pub msp: Var,
    pub masked_tokens: usize,
}

/// The weighted objective for one document. Zero-weight components are
/// skipped entirely, so the total is invariant to their internals.
pub fn pretrain_doc_loss<F: Real>(
    tape: &mut Tape<F>,
    vars: &[Var],
    params: &EruParams,
    cfg: &RunConfig,
    doc: &PreparedDoc,
    plan: &MaskPlan,
) -> Result<DocLoss> {
    pretrain_doc_loss_inner(tape, vars, params, cfg, doc, plan, None)
}

/// Same objective with the contrastive targets pinned (see
/// [`msp_loss_fixed_targets`]); the finite-difference oracle uses this.
pub fn pretrain_doc_loss_fixed_msp<F: Real>(
    tape: &mut Tape<F>,
    vars: &[Var],
    params: &EruParams,
    cfg: &RunConfig,
    doc: &PreparedDoc,
    plan: &MaskPlan,
    msp_targets: &[Tensor<F>],
) -> Result<DocLoss> {
    pretrain_doc_loss_inner(tape, vars, params, cfg, doc, plan, Some(msp_targets))
}

fn pretrain_doc_loss_inner<F: Real>(
    tape: &mut Tape<F>,
    vars: &[Var],
    params: &EruParams,
    cfg: &RunConfig,
    doc: &PreparedDoc,
    plan: &MaskPlan,
    msp_targets: Option<&[Tensor<F>]>,
) -> Result<DocLoss> {
    let p = &cfg.pretrain;
    let zero = tape.constant(Tensor::scalar(F::ZERO));
    let (mlm, masked_tokens) = if p.lambda_mlm > 0.0 {
        mlm_loss(tape, vars, params, cfg, doc, plan)?
    } else {
        (zero, 0)
    };
    let vpa = if p.lambda_vpa > 0.0 {
        vpa_loss(tape, vars, params, cfg, doc, plan)?
    } else {
        zero
    };
    let msp = if p.lambda_msp > 0.0 {
        match msp_targets {
            None => msp_loss(tape, vars, params, cfg, doc, plan)?,
            Some(t) => msp_loss_fixed_targets(tape, vars, params, cfg, doc, plan, t)?,
        }
    } else {
        zero
    };
    let wm = tape.scale(mlm, p.lambda_mlm);
    let wv = tape.scale(vpa, p.lambda_vpa);
    let wp = tape.scale(msp, p.lambda_msp);
    let s = tape.add(wm, wv);
    let total = tape.add(s, wp);
    Ok(DocLoss {
        total,
        mlm,
        vpa,
        msp,
        masked_tokens,
    })
}

// ---- batch step and training loop ----------------------------------------------

/// Loss components of one optimizer step, averaged over the batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLosses {
    pub l_pre: f64,
    pub mlm: f64,
    pub vpa: f64,
    pub msp: f64,
    /// Documents whose plan selected zero MLM tokens.
    pub zero_mask_docs: usize,
}

fn check_finite(name: &str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Numeric(format!("{name} loss is not finite ({v})")))
    }
}

/// One pre-training step over a batch: per-document tapes evaluated in
/// parallel, gradients reduced in document order, clipped, and applied.
pub fn pretrain_step<F: Real>(
    docs: &[&PreparedDoc],
    store: &mut ParamStore<F>,
    params: &EruParams,
    cfg: &RunConfig,
    lr_map: &LrMap,
    step_seed: u64,
) -> Result<StepLosses> {
    assert!(!docs.is_empty(), "empty batch");
    struct DocOut<F: Real> {
        grads: Vec<Option<Tensor<F>>>,
        l_pre: f64,
        mlm: f64,
        vpa: f64,
        msp: f64,
        masked_tokens: usize,
    }
    let vocab_len = store.value(params.text.tok_emb).shape()[0];
    let results: Vec<Result<DocOut<F>>> = docs
        .par_iter()
        .enumerate()
        .map(|(i, doc)| {
            let mut tape = Tape::new();
            let vars = store.bind(&mut tape);
            let plan = MaskPlan::build(doc, cfg, vocab_len, child_seed(step_seed, i as u64));
            let loss = pretrain_doc_loss(&mut tape, &vars, params, cfg, doc, &plan)?;
            tape.backward(loss.total);
            let grads = vars.iter().map(|&v| tape.grad(v).cloned()).collect();
            Ok(DocOut {
                grads,
                l_pre: tape.value(loss.total).item().to_f64(),
                mlm: tape.value(loss.mlm).item().to_f64(),
                vpa: tape.value(loss.vpa).item().to_f64(),
                msp: tape.value(loss.msp).item().to_f64(),
                masked_tokens: loss.masked_tokens,
            })
        })
        .collect();

    store.zero_grads();
    let mut sums = StepLosses {
        l_pre: 0.0,
        mlm: 0.0,
        vpa: 0.0,
        msp: 0.0,
        zero_mask_docs: 0,
    };
    for r in results {
        let out = r?;
        store.accumulate_grads(&out.grads);
        sums.l_pre += check_finite("L_pre", out.l_pre)?;
        sums.mlm += check_finite("MLM", out.mlm)?;
        sums.vpa += check_finite("VPA", out.vpa)?;
        sums.msp += check_finite("MSP", out.msp)?;
        if out.masked_tokens == 0 {
            sums.zero_mask_docs += 1;
        }
    }
    let b = docs.len() as f64;
    sums.l_pre /= b;
    sums.mlm /= b;
    sums.vpa /= b;
    sums.msp /= b;
    store.scale_grads(1.0 / b);
    clip_grad_norm(store, cfg.optim.clip_norm);
    AdamW {
        weight_decay: cfg.optim.weight_decay,
        ..AdamW::default()
    }
    .step(store, lr_map)?;
    Ok(sums)
}

#[derive(Debug, Clone, Copy)]
pub struct StepRecord {
    pub step: usize,
    pub l_pre: f64,
    pub mlm: f64,
    pub vpa: f64,
    pub msp: f64,
}

pub fn history_to_csv(history: &[StepRecord]) -> String {
    let mut out = String::from("step,l_pre,l_mlm,l_vpa,l_msp\n");
    for r in history {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.step, r.l_pre, r.mlm, r.vpa, r.msp
        ));
    }
    out
}

pub struct PretrainOutput {
    pub store: ParamStore<f32>,
    pub params: EruParams,
    pub vocab: Vocab,
    pub history: Vec<StepRecord>,
}

/// Loads, normalizes, orders, and tokenizes every corpus document.
pub fn load_prepared_corpus(
    corpus: &CorpusDir,
    vocab: &Vocab,
    cfg: &RunConfig,
    schema: Option<&LabelSchema>,
) -> Result<Vec<PreparedDoc>> {
    crate::init_threads();
    (0..corpus.len())
        .into_par_iter()
        .map(|i| {
            let doc = corpus.load_doc(i, schema)?;
            let doc = assign_reading_order(normalize_boxes(doc)?);
            PreparedDoc::prepare(&doc, vocab, &cfg.model, schema)
        })
        .collect()
}

/// Builds the vocabulary from corpus text, initializes parameters, and
/// runs `cfg.pretrain.steps` optimizer steps. Deterministic in `cfg.seed`
/// on one platform.
pub fn train_pretrain(
    corpus: &CorpusDir,
    cfg: &RunConfig,
    schema: &LabelSchema,
) -> Result<PretrainOutput> {
    if corpus.is_empty() {
        return Err(Error::Corpus("pre-training corpus is empty".into()));
    }
    let texts = corpus_texts(corpus)?;
    let vocab = Vocab::build(texts.iter().map(|s| s.as_str()), cfg.model.vocab_max);
    let (mut store, params) = init_model::<f32>(cfg, &vocab, schema);
    let prepared = load_prepared_corpus(corpus, &vocab, cfg, None)?;
    let lr_map = LrMap::standard(cfg.optim.lr_encoder, cfg.optim.lr_heads);

    let mut history = Vec::with_capacity(cfg.pretrain.steps);
    for step in 0..cfg.pretrain.steps {
        let step_seed = tagged_seed(cfg.seed, "pretrain-step", step as u64);
        let batch = sample_batch(prepared.len(), cfg.pretrain.batch_size, step_seed);
        let docs: Vec<&PreparedDoc> = batch.iter().map(|&i| &prepared[i]).collect();
        let losses = pretrain_step(&docs, &mut store, &params, cfg, &lr_map, step_seed)
            .map_err(|e| Error::Numeric(format!("step {step}: {e}")))?;
        history.push(StepRecord {
            step,
            l_pre: losses.l_pre,
            mlm: losses.mlm,
            vpa: losses.vpa,
            msp: losses.msp,
        });
    }
    Ok(PretrainOutput {
        store,
        params,
        vocab,
        history,
    })
}

/// Reads only segment texts (no crop decoding), for vocabulary building.
pub fn corpus_texts(corpus: &CorpusDir) -> Result<Vec<String>> {
    #[derive(serde::Deserialize)]
    struct TextSeg {
        text: String,
    }
    #[derive(serde::Deserialize)]
    struct TextDoc {
        segments: Vec<TextSeg>,
    }
    let mut texts = Vec::new();
    for file in &corpus.manifest.files {
        let path = corpus.dir.join(file);
        let bytes = std::fs::read(&path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let doc: TextDoc = serde_json::from_slice(&bytes)?;
        texts.extend(doc.segments.into_iter().map(|s| s.text));
    }
    Ok(texts)
}

fn sample_batch(n_docs: usize, batch_size: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(tagged_seed(seed, "batch", 0));
    let take = batch_size.min(n_docs);
    let mut all: Vec<usize> = (0..n_docs).collect();
    for i in 0..take {
        let j = rng.random_range(i..n_docs);
        all.swap(i, j);
    }
    all.truncate(take);
    all
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_corpus, CorpusProfile};
    use crate::doc::default_schema;
    use crate::model::init_params;

    fn tiny_doc(seed: u64) -> (RunConfig, PreparedDoc, Vocab) {
        let cfg = RunConfig::tiny(seed);
        let doc = generate_corpus(&cfg.profile, 1, true).unwrap().pop().unwrap();
        let doc = assign_reading_order(normalize_boxes(doc).unwrap());
        let vocab = Vocab::build(
            doc.segments.iter().map(|s| s.text.as_str()),
            cfg.model.vocab_max,
        );
        let prep = PreparedDoc::prepare(&doc, &vocab, &cfg.model, Some(&default_schema())).unwrap();
        (cfg, prep, vocab)
    }

    #[test]
    fn direction_labels_follow_the_stated_rule() {
        let at = |x: f64, y: f64| BBox { x0: x - 10.0, y0: y - 5.0, x1: x + 10.0, y1: y + 5.0 };
        let anchor = at(500.0, 500.0);
        assert_eq!(direction_label(anchor, at(500.0, 300.0)).unwrap(), Direction::Up);
        assert_eq!(direction_label(anchor, at(700.0, 500.0)).unwrap(), Direction::Right);
        // |dx| == |dy| resolves vertically.
        assert_eq!(direction_label(anchor, at(600.0, 600.0)).unwrap(), Direction::Down);
        assert!(direction_label(anchor, at(500.0, 500.0)).is_err());
    }

    #[test]
    fn mirror_swaps_left_right_and_keeps_vertical() {
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        for _ in 0..200 {
            let mk = |rng: &mut ChaCha8Rng| {
                let x0: f64 = rng.random_range(0.0..900.0);
                let y0: f64 = rng.random_range(0.0..900.0);
                BBox {
                    x0,
                    y0,
                    x1: x0 + rng.random_range(1.0..99.0),
                    y1: y0 + rng.random_range(1.0..99.0),
                }
            };
            let a = mk(&mut rng);
            let b = mk(&mut rng);
            let mirror = |bx: BBox| BBox {
                x0: 1000.0 - bx.x1,
                y0: bx.y0,
                x1: 1000.0 - bx.x0,
                y1: bx.y1,
            };
            let (Ok(orig), Ok(mirrored)) =
                (direction_label(a, b), direction_label(mirror(a), mirror(b)))
            else {
                continue;
            };
            let expect = match orig {
                Direction::Left => Direction::Right,
                Direction::Right => Direction::Left,
                other => other,
            };
            assert_eq!(mirrored, expect);
        }
    }

    #[test]
    fn mask_plan_protects_specials_and_separates_modalities() {
        let (cfg, doc, vocab) = tiny_doc(3);
        for trial in 0..50 {
            let plan = MaskPlan::build(&doc, &cfg, vocab.len(), trial);
            for (seg, picks) in plan.mlm.iter().enumerate() {
                for &(pos, _) in picks {
                    let id = doc.token_ids[seg][pos];
                    assert_ne!(id, CLS);
                    assert_ne!(id, SEP);
                }
            }
            let overlap = plan.m_t.iter().any(|i| plan.m_v.contains(i));
            assert!(!overlap, "text/visual masked segments must be disjoint");
            let q = plan.m_t.len() + plan.m_v.len();
            assert!(q >= 1 && q < doc.n);
            for negs in &plan.msp_negatives {
                let mut sorted = negs.clone();
                sorted.sort_unstable();
                sorted.dedup();
                assert_eq!(sorted.len(), negs.len(), "negatives must be distinct");
            }
        }
    }

    #[test]
    fn uniform_logits_hit_closed_form_losses() {
        let (cfg, doc, vocab) = tiny_doc(5);
        let schema = default_schema();
        let (mut store, params) = init_params::<f64>(&cfg.model, vocab.len(), &schema, 5);
        // Zero the heads so every class is equally likely.
        for name in ["head.mlm.w", "head.mlm.b", "head.vpa.l2.w", "head.vpa.l2.b"] {
            let id = store.id_of(name).unwrap();
            let shape = store.value(id).shape().to_vec();
            *store.value_mut(id) = Tensor::zeros(shape);
        }
        let plan = MaskPlan::build(&doc, &cfg, vocab.len(), 7);
        let mut tape = Tape::<f64>::new();
        let vars = store.bind(&mut tape);
        let (mlm, count) = mlm_loss(&mut tape, &vars, &params, &cfg, &doc, &plan).unwrap();
        assert!(count > 0);
        let want = (vocab.len() as f64).ln();
        assert!(
            (tape.value(mlm).item() - want).abs() < 1e-6,
            "uniform MLM loss should be ln |V|"
        );
        let vpa = vpa_loss(&mut tape, &vars, &params, &cfg, &doc, &plan).unwrap();
        assert!((tape.value(vpa).item() - 4f64.ln()).abs() < 1e-6);
    }

    #[test]
    fn contrastive_term_matches_hand_computation() {
        // tau = 2, positive similarity 1, two orthogonal negatives.
        let mut tape = Tape::<f64>::new();
        let anchor = tape.leaf(Tensor::from_f64_slice(vec![1, 3], &[1.0, 0.0, 0.0]), false);
        let candidates = tape.leaf(
            Tensor::from_f64_slice(vec![3, 3], &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]),
            false,
        );
        let loss = contrastive_term(&mut tape, anchor, candidates, 2.0);
        let want = -((0.5f64).exp() / ((0.5f64).exp() + 2.0)).ln();
        assert!((tape.value(loss).item() - want).abs() < 1e-9);
        assert!((want - 0.7944).abs() < 1e-3);
    }

    #[test]
    fn contrastive_loss_is_strictly_positive_with_negatives() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let mut tape = Tape::<f64>::new();
            let a: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut cands = a.clone();
            for _ in 0..2 {
                cands.extend((0..4).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>());
            }
            let anchor = tape.leaf(Tensor::from_f64_slice(vec![1, 4], &a), false);
            let c = tape.leaf(Tensor::from_f64_slice(vec![3, 4], &cands), false);
            let loss = contrastive_term(&mut tape, anchor, c, 2.0);
            assert!(tape.value(loss).item() > 0.0);
        }
    }

    #[test]
    fn msp_skips_single_segment_documents() {
        let (cfg, doc, vocab) = tiny_doc(11);
        let doc = PreparedDoc {
            n: 1,
            token_ids: doc.token_ids[..1].to_vec(),
            crops: doc.crops[..1].to_vec(),
            boxes: doc.boxes[..1].to_vec(),
            pages: doc.pages[..1].to_vec(),
            ranks: vec![0],
            labels: None,
            seg_ids: doc.seg_ids[..1].to_vec(),
            ..doc
        };
        let schema = default_schema();
        let (store, params) = init_params::<f64>(&cfg.model, vocab.len(), &schema, 5);
        let plan = MaskPlan::build(&doc, &cfg, vocab.len(), 7);
        assert!(plan.masked_nodes().is_empty());
        let mut tape = Tape::<f64>::new();
        let vars = store.bind(&mut tape);
        let msp = msp_loss(&mut tape, &vars, &params, &cfg, &doc, &plan).unwrap();
        assert_eq!(tape.value(msp).item(), 0.0);
    }

    #[test]
    fn weighted_sum_accounting_is_exact() {
        let (cfg, doc, vocab) = tiny_doc(13);
        let schema = default_schema();
        let (store, params) = init_params::<f64>(&cfg.model, vocab.len(), &schema, 5);
        let plan = MaskPlan::build(&doc, &cfg, vocab.len(), 7);
        let mut tape = Tape::<f64>::new();
        let vars = store.bind(&mut tape);
        let loss = pretrain_doc_loss(&mut tape, &vars, &params, &cfg, &doc, &plan).unwrap();
        let total = tape.value(loss.total).item();
        let sum = cfg.pretrain.lambda_mlm * tape.value(loss.mlm).item()
            + cfg.pretrain.lambda_vpa * tape.value(loss.vpa).item()
            + cfg.pretrain.lambda_msp * tape.value(loss.msp).item();
        assert!((total - sum).abs() < 1e-6, "{total} vs {sum}");
    }

    #[test]
    fn zero_msp_weight_ignores_msp_internals() {
        let (mut cfg, doc, vocab) = tiny_doc(17);
        let schema = default_schema();
        cfg.pretrain.lambda_msp = 0.0;
        let (store, params) = init_params::<f64>(&cfg.model, vocab.len(), &schema, 5);
        let plan = MaskPlan::build(&doc, &cfg, vocab.len(), 7);

        let run = |tau: f64| {
            let mut local = cfg.clone();
            local.pretrain.tau = tau;
            let mut tape = Tape::<f64>::new();
            let vars = store.bind(&mut tape);
            let loss = pretrain_doc_loss(&mut tape, &vars, &params, &local, &doc, &plan).unwrap();
            tape.value(loss.total).item()
        };
        assert_eq!(run(2.0), run(0.5));
    }

    #[test]
    fn pretrain_loss_passes_gradient_check_on_two_segments() {
        let cfg = RunConfig::tiny(19);
        let profile = CorpusProfile {
            target_avg_segments: 12.0,
            ..cfg.profile.clone()
        };
        let doc = generate_corpus(&profile, 1, false).unwrap().pop().unwrap();
        let mut doc = assign_reading_order(normalize_boxes(doc).unwrap());
        doc.segments.truncate(2);
        doc.segments[0].rank = Some(0);
        doc.segments[1].rank = Some(1);
        let vocab = Vocab::build(doc.segments.iter().map(|s| s.text.as_str()), 50);
        let prep = PreparedDoc::prepare(&doc, &vocab, &cfg.model, None).unwrap();
        let schema = default_schema();
        let (store, params) = init_params::<f64>(&cfg.model, vocab.len(), &schema, 23);
        let plan = MaskPlan::build(&prep, &cfg, vocab.len(), 7);

        let targets = msp_clean_targets(&store, &params, &cfg, &prep, &plan).unwrap();
        let report = crate::numerics::grad_check(&store, 1e-4, |tape, vars| {
            let loss =
                pretrain_doc_loss_fixed_msp(tape, vars, &params, &cfg, &prep, &plan, &targets)?;
            Ok(loss.total)
        })
        .unwrap();
        assert!(report.max_rel_err <= 1e-3, "L_pre: {report}");
    }

    #[test]
    fn training_is_bit_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = RunConfig::tiny(29);
        cfg.pretrain.steps = 6;
        cfg.pretrain.batch_size = 2;
        let docs = generate_corpus(&cfg.profile, 6, false).unwrap();
        crate::corpus::write_corpus(dir.path(), &docs, &cfg.profile, false).unwrap();
        let corpus = CorpusDir::open(dir.path()).unwrap();
        let schema = default_schema();

        let a = train_pretrain(&corpus, &cfg, &schema).unwrap();
        let b = train_pretrain(&corpus, &cfg, &schema).unwrap();
        assert_eq!(a.history.len(), 6);
        for (ra, rb) in a.history.iter().zip(&b.history) {
            assert_eq!(ra.l_pre.to_bits(), rb.l_pre.to_bits(), "step {}", ra.step);
        }
    }
}
