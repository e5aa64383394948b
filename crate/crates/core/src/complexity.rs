//! Segment-level vs token-level cost model and timing harness.
//!
//! The analytic model counts text-only work: a segment pipeline pays
//! `L1 * N * Q` for per-segment token encoding plus `L3 * (N/Q)^2` for
//! fusion over the segment graph, while a token-level model that windows
//! the document pays `L' * Z * N`. The empirical harness times forward
//! passes of both at matched hidden width, single-threaded.

use std::time::Instant;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::config::ModelConfig;
use crate::doc::BBox;
use crate::error::{Error, Result};
use crate::fusion::{attention_layer, relative_bias_indices};
use crate::model::attn_layer_for_bench;
use crate::numerics::{Init, ParamStore, Tape, Var};

/// Cost-model inputs. `l2_conv` and the conv geometry feed only the
/// visual-channel estimate, which is excluded from the text-only ratio.
#[derive(Debug, Clone, Copy)]
pub struct ComplexityParams {
    /// Text-encoder layers.
    pub l1: usize,
    /// Conv layers in the visual encoder.
    pub l2_conv: usize,
    /// Fusion layers.
    pub l3: usize,
    /// Token-level model layers.
    pub l_prime: usize,
    /// Max tokens per segment.
    pub q: usize,
    /// Token-level window length.
    pub z: usize,
    /// Document tokens.
    pub n_tokens: usize,
    /// Conv output feature-map side length.
    pub conv_e: usize,
    /// Conv kernel side length.
    pub conv_k: usize,
    pub conv_c_in: usize,
    pub conv_c_out: usize,
}

impl ComplexityParams {
    pub fn validate(&self) -> Result<()> {
        if self.l1 == 0 || self.l3 == 0 || self.l_prime == 0 || self.q == 0 || self.z == 0 {
            return Err(Error::Config("complexity parameters must be positive".into()));
        }
        if self.q > self.z {
            return Err(Error::Config(format!(
                "segment cap Q={} must not exceed window Z={}",
                self.q, self.z
            )));
        }
        Ok(())
    }
}

/// Exact arithmetic evaluation of the two text-only cost formulas.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalyticCosts {
    /// `L1 * N * Q` — per-segment token encoding.
    pub t_text: f64,
    /// `L3 * (N/Q)^2` — fusion over the segment graph.
    pub t_fusion: f64,
    /// Text-only segment pipeline: `t_text + t_fusion`.
    pub t_eru: f64,
    /// Token-level windowed model: `L' * Z * N`.
    pub t_token: f64,
    pub ratio: f64,
    /// Visual channel `L2 * |S| * E^2 * K^2 * C_in * C_out`, reported
    /// separately and excluded from the ratio.
    pub t_visual: f64,
}

pub fn analytic_costs(p: &ComplexityParams) -> Result<AnalyticCosts> {
    p.validate()?;
    let n = p.n_tokens as f64;
    let q = p.q as f64;
    let segments = n / q;
    let t_text = p.l1 as f64 * n * q;
    let t_fusion = p.l3 as f64 * segments * segments;
    let t_eru = t_text + t_fusion;
    let t_token = p.l_prime as f64 * p.z as f64 * n;
    let t_visual = p.l2_conv as f64
        * segments
        * (p.conv_e * p.conv_e * p.conv_k * p.conv_k * p.conv_c_in * p.conv_c_out) as f64;
    Ok(AnalyticCosts {
        t_text,
        t_fusion,
        t_eru,
        t_token,
        ratio: t_eru / t_token,
        t_visual,
    })
}

/// One measured size point.
#[derive(Debug, Clone, Copy)]
pub struct BenchRow {
    pub n_tokens: usize,
    pub t_segment_ms: f64,
    pub t_token_ms: f64,
    pub ratio: f64,
}

/// Sizes the harness refused to run, with the reason.
#[derive(Debug, Clone)]
pub struct SkippedSize {
    pub n_tokens: usize,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct BenchOutput {
    pub rows: Vec<BenchRow>,
    pub skipped: Vec<SkippedSize>,
}

pub fn bench_rows_to_csv(rows: &[BenchRow]) -> String {
    let mut out = String::from("N,t_segment_ms,t_token_ms,ratio\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{}\n",
            r.n_tokens, r.t_segment_ms, r.t_token_ms, r.ratio
        ));
    }
    out
}

/// Harness settings: layer counts mirror the analytic comparison, widths
/// are shared by both models so the measurement isolates sequence-length
/// structure. Runs single-threaded.
#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub d_f: usize,
    pub heads: usize,
    pub ff_mult: usize,
    pub l1: usize,
    pub l3: usize,
    pub l_prime: usize,
    pub q: usize,
    pub z: usize,
    /// Timed repetitions per size; the median is reported.
    pub runs: usize,
    pub seed: u64,
    /// Sizes whose working set would exceed this are reported and
    /// skipped instead of driving the host out of memory.
    pub mem_budget_bytes: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            d_f: 48,
            heads: 4,
            ff_mult: 4,
            l1: 6,
            l3: 4,
            l_prime: 12,
            q: 32,
            z: 512,
            runs: 5,
            seed: 17,
            mem_budget_bytes: 2 << 30,
        }
    }
}

const BENCH_VOCAB: usize = 1000;

/// Coarse upper bound on the larger of the two models' tape working
/// sets at size `n`, in bytes.
fn estimated_bytes(cfg: &BenchConfig, n: usize) -> usize {
    let s = n.div_ceil(cfg.q);
    // Each attention layer materializes scores, softmax, and context per
    // head; biases add one more matrix per head.
    let seg_side = 4 * cfg.heads * (cfg.l3 + 1) * s * s
        + 4 * cfg.l1 * s * cfg.heads * cfg.q * cfg.q;
    let token_side = 4 * cfg.heads * cfg.l_prime * cfg.z * cfg.z * 3;
    seg_side.max(token_side)
}

/// Times segment-level vs token-level forward passes at each size.
/// Sizes whose estimated working set exceeds the budget are reported in
/// `skipped` rather than run.
pub fn empirical_bench(sizes: &[usize], cfg: &BenchConfig) -> Result<BenchOutput> {
    if cfg.runs == 0 || sizes.is_empty() {
        return Err(Error::Config("need sizes and at least one run".into()));
    }
    if cfg.q > cfg.z {
        return Err(Error::Config("Q must not exceed Z".into()));
    }
    let mut rows = Vec::with_capacity(sizes.len());
    let mut skipped = Vec::new();
    for &n in sizes {
        let estimate = estimated_bytes(cfg, n);
        if estimate > cfg.mem_budget_bytes {
            skipped.push(SkippedSize {
                n_tokens: n,
                reason: format!(
                    "estimated working set {} MiB exceeds budget {} MiB",
                    estimate >> 20,
                    cfg.mem_budget_bytes >> 20
                ),
            });
            continue;
        }
        let seg = median_ms(cfg.runs, || {
            std::hint::black_box(segment_forward(cfg, n));
        });
        let tok = median_ms(cfg.runs, || {
            std::hint::black_box(token_forward(cfg, n));
        });
        rows.push(BenchRow {
            n_tokens: n,
            t_segment_ms: seg,
            t_token_ms: tok,
            ratio: seg / tok,
        });
    }
    Ok(BenchOutput { rows, skipped })
}

fn median_ms(runs: usize, mut f: impl FnMut()) -> f64 {
    let mut times: Vec<f64> = (0..runs)
        .map(|_| {
            let start = Instant::now();
            f();
            start.elapsed().as_secs_f64() * 1e3
        })
        .collect();
    times.sort_by(f64::total_cmp);
    times[times.len() / 2]
}

/// Text-only segment pipeline: N/Q segments through the text encoder,
/// then fusion (with relative bias) over the segment graph.
fn segment_forward(cfg: &BenchConfig, n_tokens: usize) -> f64 {
    let model_cfg = ModelConfig {
        d_f: cfg.d_f,
        heads: cfg.heads,
        ff_mult: cfg.ff_mult,
        text_layers: cfg.l1,
        fusion_layers: cfg.l3,
        max_seg_tokens: cfg.q,
        ..ModelConfig::default()
    };
    let n_segments = n_tokens.div_ceil(cfg.q);
    let (store, text_layers, fusion_layers, rel) = bench_segment_params(&model_cfg, cfg.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut tape = Tape::<f32>::new();
    let vars = store.bind(&mut tape);
    let tok_emb = vars[0];
    let pos_emb = vars[1];

    // Per-segment text encoding, keeping the [CLS] state.
    let mut cls_rows = Vec::with_capacity(n_segments);
    for _ in 0..n_segments {
        let ids: Vec<usize> = (0..cfg.q).map(|_| rng.random_range(0..BENCH_VOCAB)).collect();
        let emb = tape.embedding_lookup(tok_emb, &ids);
        let positions: Vec<usize> = (0..cfg.q).collect();
        let pos = tape.select_rows(pos_emb, &positions);
        let mut x = tape.add(emb, pos);
        for layer in &text_layers {
            x = attention_layer(&mut tape, &vars, layer, cfg.heads, x, None);
        }
        cls_rows.push(tape.select_rows(x, &[0]));
    }
    let mut x = tape.concat_rows(&cls_rows);

    // Fusion over one node per segment (text-only), biased by synthetic
    // row-layout boxes.
    let boxes: Vec<BBox> = (0..n_segments)
        .map(|i| {
            let y = (i as f64 * 13.0) % 990.0;
            BBox { x0: 40.0, y0: y, x1: 500.0, y1: y + 9.0 }
        })
        .collect();
    let bias = single_node_bias(&mut tape, &vars, rel, &model_cfg, &boxes);
    for layer in &fusion_layers {
        x = attention_layer(&mut tape, &vars, layer, cfg.heads, x, Some(&bias));
    }
    let out = tape.sum_all(x);
    f64::from(tape.value(out).item())
}

/// Relative bias over a one-node-per-segment graph (text-only harness).
fn single_node_bias(
    tape: &mut Tape<f32>,
    vars: &[Var],
    rel: (crate::numerics::ParamId, crate::numerics::ParamId),
    cfg: &ModelConfig,
    boxes: &[BBox],
) -> Vec<Var> {
    let s = boxes.len();
    let b = cfg.bias_buckets;
    let (x_idx, y_idx) = relative_bias_indices(boxes, b);
    // Down-sample the two-nodes-per-segment index table to one node.
    let n2 = 2 * s;
    (0..cfg.heads)
        .map(|h| {
            let off = h * b;
            let mut xi = Vec::with_capacity(s * s);
            let mut yi = Vec::with_capacity(s * s);
            for i in 0..s {
                for j in 0..s {
                    xi.push(off + x_idx[(2 * i) * n2 + 2 * j]);
                    yi.push(off + y_idx[(2 * i) * n2 + 2 * j]);
                }
            }
            let bx = tape.gather_elems(rel.0.v(vars), &xi, vec![s, s]);
            let by = tape.gather_elems(rel.1.v(vars), &yi, vec![s, s]);
            tape.add(bx, by)
        })
        .collect()
}

/// Token-level baseline: ceil(N/Z) windows of Z tokens through an
/// L'-layer transformer at the same width.
fn token_forward(cfg: &BenchConfig, n_tokens: usize) -> f64 {
    let (store, layers) = bench_token_params(cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 1);
    let windows = n_tokens.div_ceil(cfg.z);
    let mut acc = 0.0f64;
    for _ in 0..windows {
        let mut tape = Tape::<f32>::new();
        let vars = store.bind(&mut tape);
        let ids: Vec<usize> = (0..cfg.z).map(|_| rng.random_range(0..BENCH_VOCAB)).collect();
        let emb = tape.embedding_lookup(vars[0], &ids);
        let positions: Vec<usize> = (0..cfg.z).collect();
        let pos = tape.select_rows(vars[1], &positions);
        let mut x = tape.add(emb, pos);
        for layer in &layers {
            x = attention_layer(&mut tape, &vars, layer, cfg.heads, x, None);
        }
        let out = tape.sum_all(x);
        acc += f64::from(tape.value(out).item());
    }
    acc
}

type SegmentParams = (
    ParamStore<f32>,
    Vec<crate::model::AttnLayerP>,
    Vec<crate::model::AttnLayerP>,
    (crate::numerics::ParamId, crate::numerics::ParamId),
);

fn bench_segment_params(cfg: &ModelConfig, seed: u64) -> SegmentParams {
    let mut store = ParamStore::new(seed);
    let d = cfg.d_f;
    store.register("enc.text.tok_emb", vec![BENCH_VOCAB, d], Init::Normal(0.1));
    store.register("enc.text.pos_emb", vec![cfg.max_seg_tokens, d], Init::Normal(0.1));
    let text_layers: Vec<_> = (0..cfg.text_layers)
        .map(|i| attn_layer_for_bench(&mut store, &format!("enc.text.layer{i}"), d, cfg.ff_width()))
        .collect();
    let fusion_layers: Vec<_> = (0..cfg.fusion_layers)
        .map(|i| attn_layer_for_bench(&mut store, &format!("fusion.layer{i}"), d, cfg.ff_width()))
        .collect();
    let rel_x = store.register("fusion.rel_x", vec![cfg.heads, cfg.bias_buckets], Init::Normal(0.1));
    let rel_y = store.register("fusion.rel_y", vec![cfg.heads, cfg.bias_buckets], Init::Normal(0.1));
    (store, text_layers, fusion_layers, (rel_x, rel_y))
}

fn bench_token_params(cfg: &BenchConfig) -> (ParamStore<f32>, Vec<crate::model::AttnLayerP>) {
    let mut store = ParamStore::new(cfg.seed ^ 2);
    let d = cfg.d_f;
    store.register("enc.text.tok_emb", vec![BENCH_VOCAB, d], Init::Normal(0.1));
    store.register("enc.text.pos_emb", vec![cfg.z, d], Init::Normal(0.1));
    let layers: Vec<_> = (0..cfg.l_prime)
        .map(|i| {
            attn_layer_for_bench(&mut store, &format!("enc.text.layer{i}"), d, cfg.ff_mult * d)
        })
        .collect();
    (store, layers)
}
