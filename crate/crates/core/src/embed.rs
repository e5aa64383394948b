//! Per-segment encoders and absolute position biasing.
//!
//! Each segment yields a textual node (the `[CLS]` state of a small
//! transformer over its tokens) and a visual node (stride-2 convolutions
//! over its crop, pooled and projected). Both nodes of segment `i` receive
//! the same additive position bias built from its box geometry, page, and
//! reading-order rank. Nodes interleave as `[t_0, v_0, t_1, v_1, ...]`,
//! so segment `i` owns rows `2i` and `2i + 1`.

use crate::config::ModelConfig;
use crate::doc::{BBox, NORM_RANGE};
use crate::error::{Error, Result};
use crate::fusion::attention_layer;
use crate::model::{apply_linear, apply_mlp, EruParams, PreparedDoc, TextEncP, VisEncP};
use crate::numerics::{Real, Tape, Tensor, Var};

/// Text-encoder outputs for one segment.
pub struct TextEncoding {
    /// `[CLS]` pooled representation, `[1, d_f]`.
    pub cls: Var,
    /// Final per-token states, `[len, d_f]` (used by the MLM head).
    pub tokens: Var,
}

/// Runs the segment text encoder over `[CLS] ... [SEP]` token ids.
pub fn encode_text<F: Real>(
    tape: &mut Tape<F>,
    vars: &[Var],
    text: &TextEncP,
    cfg: &ModelConfig,
    ids: &[usize],
) -> Result<TextEncoding> {
    if ids.len() > cfg.max_seg_tokens {
        return Err(Error::Doc(format!(
            "segment has {} token ids, cap is {}",
            ids.len(),
            cfg.max_seg_tokens
        )));
    }
    let emb = tape.embedding_lookup(text.tok_emb.v(vars), ids);
    let positions: Vec<usize> = (0..ids.len()).collect();
    let pos = tape.select_rows(text.pos_emb.v(vars), &positions);
    let mut x = tape.add(emb, pos);
    for layer in &text.layers {
        x = attention_layer(tape, vars, layer, cfg.heads, x, None);
    }
    let cls = tape.select_rows(x, &[0]);
    Ok(TextEncoding { cls, tokens: x })
}

/// Runs the convolutional visual encoder over one crop (`[1, d_f]`).
pub fn encode_visual<F: Real>(
    tape: &mut Tape<F>,
    vars: &[Var],
    vis: &VisEncP,
    cfg: &ModelConfig,
    crop: &[u8],
) -> Result<Var> {
    if crop.len() != cfg.crop_h * cfg.crop_w {
        return Err(Error::Doc(format!(
            "crop has {} pixels, model expects {}x{}",
            crop.len(),
            cfg.crop_h,
            cfg.crop_w
        )));
    }
    let data: Vec<f64> = crop.iter().map(|&v| f64::from(v) / 255.0).collect();
    let mut x = tape.constant(Tensor::from_f64_slice(vec![1, cfg.crop_h, cfg.crop_w], &data));
    for conv in &vis.convs {
        x = tape.conv2d(x, conv.w.v(vars), conv.b.v(vars), 2, 1);
        x = tape.gelu(x);
    }
    let pooled = tape.global_avg_pool(x);
    Ok(apply_linear(tape, vars, vis.proj, pooled))
}

/// Extends each side of a normalized box by `proportion` of its own
/// width/height, clipped to the normalized range.
pub fn enlarge_box(b: BBox, proportion: f64) -> BBox {
    let dx = b.width() * proportion;
    let dy = b.height() * proportion;
    BBox {
        x0: (b.x0 - dx).max(0.0),
        y0: (b.y0 - dy).max(0.0),
        x1: (b.x1 + dx).min(NORM_RANGE),
        y1: (b.y1 + dy).min(NORM_RANGE),
    }
}

/// Absolute position bias `p_k` for one segment: a perceptron over the
/// scaled box geometry and page plus a perceptron over the scaled rank.
#[allow(clippy::too_many_arguments)]
pub fn absolute_bias<F: Real>(
    tape: &mut Tape<F>,
    vars: &[Var],
    params: &EruParams,
    cfg: &ModelConfig,
    bbox: BBox,
    page: u32,
    rank: u32,
    n_segments: usize,
) -> Result<Var> {
    if rank as usize >= n_segments {
        return Err(Error::Doc(format!(
            "rank {rank} out of range for {n_segments} segments"
        )));
    }
    let feats = [
        bbox.x0 / NORM_RANGE,
        bbox.y0 / NORM_RANGE,
        bbox.x1 / NORM_RANGE,
        bbox.y1 / NORM_RANGE,
        bbox.width() / NORM_RANGE,
        bbox.height() / NORM_RANGE,
        f64::from(page) / cfg.max_pages as f64,
    ];
    let f2d = tape.constant(Tensor::from_f64_slice(vec![1, 7], &feats));
    let p2d = apply_mlp(tape, vars, params.pos.p2d, f2d);
    let r = tape.constant(Tensor::from_f64_slice(
        vec![1, 1],
        &[f64::from(rank) / n_segments as f64],
    ));
    let p1d = apply_mlp(tape, vars, params.pos.p1d, r);
    Ok(tape.add(p2d, p1d))
}

/// The fusion transformer's input: interleaved biased nodes plus the raw
/// per-segment pieces needed to rebuild masked variants.
pub struct NodeSequence {
    pub n_segments: usize,
    /// `x_k^0 = x_k + p_k`, `[2|S|, d_f]`, interleaved `[t_0, v_0, ...]`.
    pub inputs: Var,
    /// The individual biased node rows, `[1, d_f]` each, in node order.
    pub rows: Vec<Var>,
    /// Raw textual embeddings `t_i`, one `[1, d_f]` row per segment.
    pub text_nodes: Vec<Var>,
    /// Raw visual embeddings `v_i`.
    pub vis_nodes: Vec<Var>,
    /// Shared position bias `p_k` per segment.
    pub pos_bias: Vec<Var>,
    /// Per-token text-encoder states per segment (MLM input when the
    /// tokens were masked).
    pub token_states: Vec<Var>,
    pub boxes: Vec<BBox>,
}

impl NodeSequence {
    /// Tape row of segment `i`'s textual node.
    pub fn text_row(i: usize) -> usize {
        2 * i
    }

    /// Tape row of segment `i`'s visual node.
    pub fn vis_row(i: usize) -> usize {
        2 * i + 1
    }
}

/// Encodes every segment and assembles the biased node matrix.
///
/// `token_override` substitutes masked token ids for selected segments
/// (MLM); geometry and crops are never touched by masking.
pub fn build_nodes<F: Real>(
    tape: &mut Tape<F>,
    vars: &[Var],
    params: &EruParams,
    cfg: &ModelConfig,
    doc: &PreparedDoc,
    token_override: Option<&[Vec<usize>]>,
) -> Result<NodeSequence> {
    let n = doc.n;
    let mut text_nodes = Vec::with_capacity(n);
    let mut vis_nodes = Vec::with_capacity(n);
    let mut pos_bias = Vec::with_capacity(n);
    let mut token_states = Vec::with_capacity(n);
    let mut rows = Vec::with_capacity(2 * n);
    for i in 0..n {
        let ids = match token_override {
            Some(over) => &over[i],
            None => &doc.token_ids[i],
        };
        let enc = encode_text(tape, vars, &params.text, cfg, ids)?;
        let v = encode_visual(tape, vars, &params.vis, cfg, &doc.crops[i])?;
        let p = absolute_bias(
            tape,
            vars,
            params,
            cfg,
            doc.boxes[i],
            doc.pages[i],
            doc.ranks[i],
            n,
        )?;
        let xt = tape.add(enc.cls, p);
        let xv = tape.add(v, p);
        rows.push(xt);
        rows.push(xv);
        text_nodes.push(enc.cls);
        vis_nodes.push(v);
        pos_bias.push(p);
        token_states.push(enc.tokens);
    }
    Ok(NodeSequence {
        n_segments: n,
        inputs: tape.concat_rows(&rows),
        rows,
        text_nodes,
        vis_nodes,
        pos_bias,
        token_states,
        boxes: doc.boxes.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::RunConfig;
    use crate::corpus::{generate_corpus, CorpusProfile};
    use crate::doc::{assign_reading_order, default_schema, normalize_boxes};
    use crate::model::init_params;
    use crate::numerics::ParamStore;
    use crate::vocab::Vocab;

    fn tiny() -> (RunConfig, ParamStore<f64>, EruParams, Vocab) {
        let cfg = RunConfig::tiny(17);
        let schema = default_schema();
        let vocab = Vocab::build(
            ["java develop engineer", "alice chen", "2015 2019 phone"].into_iter(),
            cfg.model.vocab_max,
        );
        let (store, params) = init_params::<f64>(&cfg.model, vocab.len(), &schema, 17);
        (cfg, store, params, vocab)
    }

    fn prepared_doc(cfg: &RunConfig, vocab: &Vocab) -> PreparedDoc {
        let profile = CorpusProfile {
            target_avg_segments: 14.0,
            crop_h: cfg.model.crop_h,
            crop_w: cfg.model.crop_w,
            ..CorpusProfile::desk(3)
        };
        let doc = generate_corpus(&profile, 1, true).unwrap().pop().unwrap();
        let doc = assign_reading_order(normalize_boxes(doc).unwrap());
        PreparedDoc::prepare(&doc, vocab, &cfg.model, Some(&default_schema())).unwrap()
    }

    #[test]
    fn identical_texts_encode_identically() {
        let (cfg, store, params, vocab) = tiny();
        let ids = vocab.tokenize("java develop engineer", cfg.model.max_seg_tokens);
        let mut tape = Tape::<f64>::new();
        let vars = store.bind(&mut tape);
        let a = encode_text(&mut tape, &vars, &params.text, &cfg.model, &ids).unwrap();
        let b = encode_text(&mut tape, &vars, &params.text, &cfg.model, &ids).unwrap();
        assert_eq!(tape.value(a.cls).data(), tape.value(b.cls).data());
        assert_eq!(tape.value(a.cls).shape(), &[1, cfg.model.d_f]);
    }

    #[test]
    fn token_order_changes_the_encoding() {
        let (cfg, store, params, vocab) = tiny();
        let a_ids = vocab.tokenize("java develop engineer", cfg.model.max_seg_tokens);
        let b_ids = vocab.tokenize("develop java engineer", cfg.model.max_seg_tokens);
        let mut tape = Tape::<f64>::new();
        let vars = store.bind(&mut tape);
        let a = encode_text(&mut tape, &vars, &params.text, &cfg.model, &a_ids).unwrap();
        let b = encode_text(&mut tape, &vars, &params.text, &cfg.model, &b_ids).unwrap();
        assert_ne!(tape.value(a.cls).data(), tape.value(b.cls).data());
    }

    #[test]
    fn over_length_sequences_are_rejected() {
        let (cfg, store, params, _) = tiny();
        let ids = vec![5usize; cfg.model.max_seg_tokens + 1];
        let mut tape = Tape::<f64>::new();
        let vars = store.bind(&mut tape);
        assert!(encode_text(&mut tape, &vars, &params.text, &cfg.model, &ids).is_err());
    }

    #[test]
    fn zero_crop_encodes_finite() {
        let (cfg, store, params, _) = tiny();
        let crop = vec![0u8; cfg.model.crop_h * cfg.model.crop_w];
        let mut tape = Tape::<f64>::new();
        let vars = store.bind(&mut tape);
        let v = encode_visual(&mut tape, &vars, &params.vis, &cfg.model, &crop).unwrap();
        assert!(tape.value(v).all_finite());
        assert_eq!(tape.value(v).shape(), &[1, cfg.model.d_f]);
    }

    #[test]
    fn distinct_styles_give_distinct_visual_embeddings() {
        let (cfg, store, params, _) = tiny();
        let heading = crate::corpus::render_crop(
            "Education",
            crate::corpus::StyleSpec { font_size: 3, weight: 3, indent: 0 },
            1,
            cfg.model.crop_h,
            cfg.model.crop_w,
        );
        let body = crate::corpus::render_crop(
            "Education",
            crate::corpus::StyleSpec { font_size: 1, weight: 1, indent: 1 },
            1,
            cfg.model.crop_h,
            cfg.model.crop_w,
        );
        let mut tape = Tape::<f64>::new();
        let vars = store.bind(&mut tape);
        let a = encode_visual(&mut tape, &vars, &params.vis, &cfg.model, &heading.pixels_u8()).unwrap();
        let b = encode_visual(&mut tape, &vars, &params.vis, &cfg.model, &body.pixels_u8()).unwrap();
        assert_ne!(tape.value(a).data(), tape.value(b).data());
    }

    #[test]
    fn wrong_crop_size_is_rejected() {
        let (cfg, store, params, _) = tiny();
        let mut tape = Tape::<f64>::new();
        let vars = store.bind(&mut tape);
        assert!(encode_visual(&mut tape, &vars, &params.vis, &cfg.model, &[0u8; 10]).is_err());
    }

    #[test]
    fn enlarge_box_follows_stated_rule() {
        let b = BBox { x0: 100.0, y0: 100.0, x1: 200.0, y1: 200.0 };
        let e = enlarge_box(b, 0.10);
        assert_eq!((e.x0, e.y0, e.x1, e.y1), (90.0, 90.0, 210.0, 210.0));

        let id = enlarge_box(b, 0.0);
        assert_eq!(id, b);

        let full = BBox { x0: 0.0, y0: 0.0, x1: 1000.0, y1: 1000.0 };
        assert_eq!(enlarge_box(full, 0.10), full);
    }

    #[test]
    fn identical_geometry_gives_identical_bias() {
        let (cfg, store, params, _) = tiny();
        let mut tape = Tape::<f64>::new();
        let vars = store.bind(&mut tape);
        let b = BBox { x0: 10.0, y0: 20.0, x1: 200.0, y1: 40.0 };
        let p1 = absolute_bias(&mut tape, &vars, &params, &cfg.model, b, 0, 3, 10).unwrap();
        let p2 = absolute_bias(&mut tape, &vars, &params, &cfg.model, b, 0, 3, 10).unwrap();
        assert_eq!(tape.value(p1).data(), tape.value(p2).data());
        assert_eq!(tape.value(p1).shape(), &[1, cfg.model.d_f]);
    }

    #[test]
    fn page_change_moves_the_bias() {
        let (cfg, store, params, _) = tiny();
        let mut tape = Tape::<f64>::new();
        let vars = store.bind(&mut tape);
        let b = BBox { x0: 10.0, y0: 20.0, x1: 200.0, y1: 40.0 };
        let p0 = absolute_bias(&mut tape, &vars, &params, &cfg.model, b, 0, 3, 10).unwrap();
        let p1 = absolute_bias(&mut tape, &vars, &params, &cfg.model, b, 1, 3, 10).unwrap();
        assert_ne!(tape.value(p0).data(), tape.value(p1).data());
    }

    #[test]
    fn rank_out_of_range_is_rejected() {
        let (cfg, store, params, _) = tiny();
        let mut tape = Tape::<f64>::new();
        let vars = store.bind(&mut tape);
        let b = BBox { x0: 10.0, y0: 20.0, x1: 200.0, y1: 40.0 };
        assert!(absolute_bias(&mut tape, &vars, &params, &cfg.model, b, 0, 10, 10).is_err());
    }

    #[test]
    fn node_sequence_interleaves_two_nodes_per_segment() {
        let (cfg, store, params, vocab) = tiny();
        let doc = prepared_doc(&cfg, &vocab);
        let mut tape = Tape::<f64>::new();
        let vars = store.bind(&mut tape);
        let nodes = build_nodes(&mut tape, &vars, &params, &cfg.model, &doc, None).unwrap();
        assert_eq!(tape.value(nodes.inputs).shape(), &[2 * doc.n, cfg.model.d_f]);

        // Row 2i equals t_i + p_i and row 2i+1 equals v_i + p_i.
        let d = cfg.model.d_f;
        let all = tape.value(nodes.inputs).clone();
        for i in 0..doc.n {
            let t = tape.value(nodes.text_nodes[i]).clone();
            let v = tape.value(nodes.vis_nodes[i]).clone();
            let p = tape.value(nodes.pos_bias[i]).clone();
            for c in 0..d {
                let want_t = t.data()[c] + p.data()[c];
                let want_v = v.data()[c] + p.data()[c];
                assert!((all.data()[NodeSequence::text_row(i) * d + c] - want_t).abs() < 1e-12);
                assert!((all.data()[NodeSequence::vis_row(i) * d + c] - want_v).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zeroed_position_params_make_inputs_equal_raw_nodes() {
        let (cfg, mut store, params, vocab) = tiny();
        for name in ["enc.pos.p2d.l1", "enc.pos.p2d.l2", "enc.pos.p1d.l1", "enc.pos.p1d.l2"] {
            for part in ["w", "b"] {
                let id = store.id_of(&format!("{name}.{part}")).unwrap();
                let shape = store.value(id).shape().to_vec();
                *store.value_mut(id) = Tensor::zeros(shape);
            }
        }
        let doc = prepared_doc(&cfg, &vocab);
        let mut tape = Tape::<f64>::new();
        let vars = store.bind(&mut tape);
        let nodes = build_nodes(&mut tape, &vars, &params, &cfg.model, &doc, None).unwrap();
        let d = cfg.model.d_f;
        let all = tape.value(nodes.inputs).clone();
        for i in 0..doc.n {
            let t = tape.value(nodes.text_nodes[i]).clone();
            for c in 0..d {
                assert!((all.data()[2 * i * d + c] - t.data()[c]).abs() < 1e-12);
            }
        }
    }
}
