//! Parameter registry and document preparation.
//!
//! All learnable tensors are registered here under stable dotted names:
//! `enc.*` and `fusion.*` form the trunk (encoder learning rate), `head.*`
//! the task heads. Registration order is the checkpoint order.

use crate::config::{ModelConfig, RunConfig};
use crate::doc::{BBox, LabelSchema, ResumeDoc};
use crate::error::{Error, Result};
use crate::numerics::{Init, ParamId, ParamStore, Real, Tape, Var};
use crate::vocab::Vocab;

#[derive(Debug, Clone, Copy)]
pub struct LinearP {
    pub w: ParamId,
    pub b: ParamId,
}

#[derive(Debug, Clone, Copy)]
pub struct LayerNormP {
    pub gamma: ParamId,
    pub beta: ParamId,
}

#[derive(Debug, Clone, Copy)]
pub struct MlpP {
    pub l1: LinearP,
    pub l2: LinearP,
}

#[derive(Debug, Clone, Copy)]
pub struct ConvP {
    pub w: ParamId,
    pub b: ParamId,
}

/// One post-norm transformer block (attention + feed-forward).
/// Query/key/value projections carry no bias.
#[derive(Debug, Clone, Copy)]
pub struct AttnLayerP {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wo: LinearP,
    pub ln1: LayerNormP,
    pub ff1: LinearP,
    pub ff2: LinearP,
    pub ln2: LayerNormP,
}

#[derive(Debug, Clone)]
pub struct TextEncP {
    pub tok_emb: ParamId,
    pub pos_emb: ParamId,
    pub layers: Vec<AttnLayerP>,
}

#[derive(Debug, Clone)]
pub struct VisEncP {
    pub convs: Vec<ConvP>,
    pub proj: LinearP,
}

#[derive(Debug, Clone, Copy)]
pub struct PosBiasP {
    pub p2d: MlpP,
    pub p1d: MlpP,
}

#[derive(Debug, Clone)]
pub struct FusionP {
    pub layers: Vec<AttnLayerP>,
    /// Per-head bucketed lookup tables `[heads, buckets]`, shared by all
    /// fusion layers.
    pub rel_x: ParamId,
    pub rel_y: ParamId,
}

/// Learned replacement vectors for masked segment nodes.
#[derive(Debug, Clone, Copy)]
pub struct MaskVecP {
    pub text: ParamId,
    pub vis: ParamId,
}

#[derive(Debug, Clone)]
pub struct HeadsP {
    /// Vocab projection over per-token text-encoder states.
    pub mlm: LinearP,
    /// Direction classifier over concatenated visual embeddings.
    pub vpa: MlpP,
    /// Segment-field classifier.
    pub c1: LinearP,
    /// Block classifier.
    pub c2: LinearP,
    /// Same-block pair classifier.
    pub c3: MlpP,
}

#[derive(Debug, Clone)]
pub struct EruParams {
    pub text: TextEncP,
    pub vis: VisEncP,
    pub pos: PosBiasP,
    pub fusion: FusionP,
    pub masks: MaskVecP,
    pub heads: HeadsP,
}

fn linear<F: Real>(
    store: &mut ParamStore<F>,
    name: &str,
    fan_in: usize,
    fan_out: usize,
) -> LinearP {
    LinearP {
        w: store.register(&format!("{name}.w"), vec![fan_in, fan_out], Init::XavierIn(fan_in)),
        b: store.register(&format!("{name}.b"), vec![fan_out], Init::Zeros),
    }
}

fn layer_norm<F: Real>(store: &mut ParamStore<F>, name: &str, d: usize) -> LayerNormP {
    LayerNormP {
        gamma: store.register(&format!("{name}.gamma"), vec![d], Init::Ones),
        beta: store.register(&format!("{name}.beta"), vec![d], Init::Zeros),
    }
}

fn attn_layer<F: Real>(store: &mut ParamStore<F>, name: &str, d: usize, ff: usize) -> AttnLayerP {
    AttnLayerP {
        wq: store.register(&format!("{name}.wq"), vec![d, d], Init::XavierIn(d)),
        wk: store.register(&format!("{name}.wk"), vec![d, d], Init::XavierIn(d)),
        wv: store.register(&format!("{name}.wv"), vec![d, d], Init::XavierIn(d)),
        wo: linear(store, &format!("{name}.wo"), d, d),
        ln1: layer_norm(store, &format!("{name}.ln1"), d),
        ff1: linear(store, &format!("{name}.ff1"), d, ff),
        ff2: linear(store, &format!("{name}.ff2"), ff, d),
        ln2: layer_norm(store, &format!("{name}.ln2"), d),
    }
}

/// Registers one transformer block outside the full model; the timing
/// harness builds stripped-down stacks with it.
pub fn attn_layer_for_bench<F: Real>(
    store: &mut ParamStore<F>,
    name: &str,
    d: usize,
    ff: usize,
) -> AttnLayerP {
    attn_layer(store, name, d, ff)
}

/// Registers the full parameter set for a given vocabulary and taxonomy.
pub fn init_params<F: Real>(
    cfg: &ModelConfig,
    vocab_len: usize,
    schema: &LabelSchema,
    seed: u64,
) -> (ParamStore<F>, EruParams) {
    let mut store = ParamStore::new(seed);
    let d = cfg.d_f;
    let ff = cfg.ff_width();

    let text = TextEncP {
        tok_emb: store.register("enc.text.tok_emb", vec![vocab_len, d], Init::Normal(0.1)),
        pos_emb: store.register(
            "enc.text.pos_emb",
            vec![cfg.max_seg_tokens, d],
            Init::Normal(0.1),
        ),
        layers: (0..cfg.text_layers)
            .map(|i| attn_layer(&mut store, &format!("enc.text.layer{i}"), d, ff))
            .collect(),
    };

    let mut convs = Vec::new();
    let mut c_in = 1;
    for (i, &c_out) in cfg.conv_channels.iter().enumerate() {
        convs.push(ConvP {
            w: store.register(
                &format!("enc.vis.conv{i}.w"),
                vec![c_out, c_in, 3, 3],
                Init::XavierIn(c_in * 9),
            ),
            b: store.register(&format!("enc.vis.conv{i}.b"), vec![c_out], Init::Zeros),
        });
        c_in = c_out;
    }
    let vis = VisEncP {
        convs,
        proj: linear(&mut store, "enc.vis.proj", c_in, d),
    };

    let pos = PosBiasP {
        p2d: MlpP {
            l1: linear(&mut store, "enc.pos.p2d.l1", 7, d),
            l2: linear(&mut store, "enc.pos.p2d.l2", d, d),
        },
        p1d: MlpP {
            l1: linear(&mut store, "enc.pos.p1d.l1", 1, d),
            l2: linear(&mut store, "enc.pos.p1d.l2", d, d),
        },
    };

    let masks = MaskVecP {
        text: store.register("enc.mask.text", vec![1, d], Init::Normal(0.1)),
        vis: store.register("enc.mask.vis", vec![1, d], Init::Normal(0.1)),
    };

    let fusion = FusionP {
        layers: (0..cfg.fusion_layers)
            .map(|i| attn_layer(&mut store, &format!("fusion.layer{i}"), d, ff))
            .collect(),
        rel_x: store.register("fusion.rel_x", vec![cfg.heads, cfg.bias_buckets], Init::Zeros),
        rel_y: store.register("fusion.rel_y", vec![cfg.heads, cfg.bias_buckets], Init::Zeros),
    };

    let heads = HeadsP {
        mlm: linear(&mut store, "head.mlm", d, vocab_len),
        vpa: MlpP {
            l1: linear(&mut store, "head.vpa.l1", 2 * d, d),
            l2: linear(&mut store, "head.vpa.l2", d, 4),
        },
        c1: linear(&mut store, "head.c1", d, schema.n_fields()),
        c2: linear(&mut store, "head.c2", d, schema.n_blocks()),
        c3: MlpP {
            l1: linear(&mut store, "head.c3.l1", 2 * d, d),
            l2: linear(&mut store, "head.c3.l2", d, 2),
        },
    };

    (
        store,
        EruParams {
            text,
            vis,
            pos,
            fusion,
            masks,
            heads,
        },
    )
}

impl ParamId {
    /// The tape leaf bound for this parameter (see [`ParamStore::bind`]).
    pub fn v(self, vars: &[Var]) -> Var {
        vars[self.0]
    }
}

/// `x W + b` on the tape.
pub fn apply_linear<F: Real>(tape: &mut Tape<F>, vars: &[Var], p: LinearP, x: Var) -> Var {
    let y = tape.matmul(x, p.w.v(vars));
    tape.add_bias(y, p.b.v(vars))
}

/// Two-layer perceptron with a GELU between.
pub fn apply_mlp<F: Real>(tape: &mut Tape<F>, vars: &[Var], p: MlpP, x: Var) -> Var {
    let h = apply_linear(tape, vars, p.l1, x);
    let h = tape.gelu(h);
    apply_linear(tape, vars, p.l2, h)
}

// ---- document preparation ----------------------------------------------------

/// A document tokenized and checked against the model configuration:
/// everything a forward pass needs, independent of numeric precision.
#[derive(Debug, Clone)]
pub struct PreparedDoc {
    pub id: String,
    pub n: usize,
    /// `[CLS] ... [SEP]` ids per segment, in segment order.
    pub token_ids: Vec<Vec<usize>>,
    /// Flattened crop pixels on the u8 grid (`crop_h * crop_w`),
    /// zeros when absent.
    pub crops: Vec<Vec<u8>>,
    pub boxes: Vec<BBox>,
    pub pages: Vec<u32>,
    pub n_pages: usize,
    pub ranks: Vec<u32>,
    /// `(field_idx, block_idx)` per segment when the document is labeled.
    pub labels: Option<Vec<(usize, usize)>>,
    pub seg_ids: Vec<u32>,
}

impl PreparedDoc {
    /// Tokenizes and validates a normalized, reading-ordered document.
    pub fn prepare(
        doc: &ResumeDoc,
        vocab: &Vocab,
        cfg: &ModelConfig,
        schema: Option<&LabelSchema>,
    ) -> Result<Self> {
        if !doc.is_normalized() {
            return Err(Error::Doc(format!("document `{}` is not normalized", doc.id)));
        }
        if !doc.has_reading_order() {
            return Err(Error::Doc(format!(
                "document `{}` has no reading order",
                doc.id
            )));
        }
        if doc.n_segments() > cfg.max_segments {
            return Err(Error::Doc(format!(
                "document `{}` has {} segments, cap is {}",
                doc.id,
                doc.n_segments(),
                cfg.max_segments
            )));
        }
        if doc.pages.len() > cfg.max_pages {
            return Err(Error::Doc(format!(
                "document `{}` has {} pages, cap is {}",
                doc.id,
                doc.pages.len(),
                cfg.max_pages
            )));
        }
        let n = doc.n_segments();
        let mut token_ids = Vec::with_capacity(n);
        let mut crops = Vec::with_capacity(n);
        let mut labels = doc.is_labeled().then(|| Vec::with_capacity(n));
        for seg in &doc.segments {
            token_ids.push(vocab.tokenize(&seg.text, cfg.max_seg_tokens));
            let crop = match &seg.crop {
                None => vec![0u8; cfg.crop_h * cfg.crop_w],
                Some(r) => {
                    if r.height() != cfg.crop_h || r.width() != cfg.crop_w {
                        return Err(Error::Doc(format!(
                            "segment {}: crop is {}x{}, model expects {}x{}",
                            seg.id,
                            r.height(),
                            r.width(),
                            cfg.crop_h,
                            cfg.crop_w
                        )));
                    }
                    r.pixels_u8()
                }
            };
            crops.push(crop);
            if let Some(labels) = labels.as_mut() {
                let schema = schema.ok_or_else(|| {
                    Error::Doc("labeled document prepared without a schema".into())
                })?;
                let field = seg.label_seg.as_deref().unwrap();
                let block = seg.label_block.as_deref().unwrap();
                let fi = schema
                    .field_index(field)
                    .ok_or_else(|| Error::Doc(format!("unknown label `{field}`")))?;
                let bi = schema
                    .block_index(block)
                    .ok_or_else(|| Error::Doc(format!("unknown block `{block}`")))?;
                labels.push((fi, bi));
            }
        }
        Ok(PreparedDoc {
            id: doc.id.clone(),
            n,
            token_ids,
            crops,
            boxes: doc.segments.iter().map(|s| s.bbox).collect(),
            pages: doc.segments.iter().map(|s| s.page).collect(),
            n_pages: doc.pages.len(),
            ranks: doc.segments.iter().map(|s| s.rank.unwrap()).collect(),
            labels,
            seg_ids: doc.segments.iter().map(|s| s.id).collect(),
        })
    }
}

/// Builds the parameter store and registry for a run.
pub fn init_model<F: Real>(
    cfg: &RunConfig,
    vocab: &Vocab,
    schema: &LabelSchema,
) -> (ParamStore<F>, EruParams) {
    init_params(&cfg.model, vocab.len(), schema, cfg.seed)
}

/// Rebuilds a model (config, schema, parameters) from a checkpoint and
/// its vocabulary, verifying the recorded vocabulary hash.
pub fn load_model_from_checkpoint(
    ckpt: &crate::numerics::Checkpoint,
    vocab: &Vocab,
) -> Result<(RunConfig, LabelSchema, ParamStore<f32>, EruParams)> {
    let cfg = RunConfig::from_json(&serde_json::to_vec(&ckpt.manifest.config)?)
        .map_err(|e| Error::Checkpoint(format!("bad config snapshot: {e}")))?;
    let schema = match &ckpt.manifest.label_schema {
        Some(v) => LabelSchema::from_json_value(v)?,
        None => crate::doc::default_schema(),
    };
    if let Some(expected) = &ckpt.manifest.vocab_sha256 {
        let got = vocab.sha256_hex();
        if &got != expected {
            return Err(Error::Checkpoint(format!(
                "vocabulary hash mismatch: checkpoint {expected}, file {got}"
            )));
        }
    }
    let (mut store, params) = init_params::<f32>(&cfg.model, vocab.len(), &schema, 0);
    ckpt.restore_into(&mut store)?;
    Ok((cfg, schema, store, params))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::doc::default_schema;

    #[test]
    fn every_parameter_matches_a_rate_pattern() {
        let schema = default_schema();
        let cfg = RunConfig::tiny(3);
        let (store, _) = init_params::<f32>(&cfg.model, 50, &schema, 3);
        let lr = crate::numerics::LrMap::standard(5e-5, 1e-3);
        for name in store.names() {
            lr.rate_for(name).unwrap();
        }
    }

    #[test]
    fn init_is_seed_deterministic() {
        let schema = default_schema();
        let cfg = RunConfig::tiny(3);
        let (a, _) = init_params::<f32>(&cfg.model, 50, &schema, 11);
        let (b, _) = init_params::<f32>(&cfg.model, 50, &schema, 11);
        for name in a.names() {
            let ia = a.id_of(name).unwrap();
            let ib = b.id_of(name).unwrap();
            assert_eq!(a.value(ia).data(), b.value(ib).data(), "{name}");
        }
    }

    #[test]
    fn head_shapes_follow_schema() {
        let schema = default_schema();
        let cfg = RunConfig::tiny(3);
        let (store, params) = init_params::<f32>(&cfg.model, 50, &schema, 0);
        assert_eq!(
            store.value(params.heads.c1.w).shape(),
            &[cfg.model.d_f, schema.n_fields()]
        );
        assert_eq!(
            store.value(params.heads.c2.w).shape(),
            &[cfg.model.d_f, schema.n_blocks()]
        );
    }
}
