//! Layout-aware multi-modal fusion transformer.
//!
//! The document is a complete graph over `2|S|` nodes (one textual and one
//! visual node per segment). Attention logits carry a relative position
//! bias looked up from per-head bucket tables over the per-axis distances
//! between the owning segments' upper-left corners: all four node pairs of
//! a segment pair share one bias value, and the bias is symmetric and
//! translation invariant by construction.

use crate::config::ModelConfig;
use crate::doc::BBox;
use crate::model::{apply_linear, AttnLayerP, EruParams, FusionP};
use crate::numerics::{Real, Tape, Var};

/// Log-spaced bucket thresholds over `[0, 1000]`: `1000^(i/(B-1))` for
/// `i = 0..B-1`. Bucket 0 holds distances below 1.
pub fn bucket_edges(buckets: usize) -> Vec<f64> {
    assert!(buckets >= 2, "need at least two buckets");
    (0..buckets - 1)
        .map(|i| 1000f64.powf(i as f64 / (buckets - 1) as f64))
        .collect()
}

/// Index of the bucket holding distance `d`.
pub fn bucketize(d: f64, buckets: usize) -> usize {
    let edges = bucket_edges(buckets);
    edges.iter().take_while(|&&e| e <= d).count()
}

/// Per-axis bucket indices for every node pair of a `2|S|`-node graph,
/// flattened row-major `[2S * 2S]`. Node `k` belongs to segment `k / 2`.
pub fn relative_bias_indices(boxes: &[BBox], buckets: usize) -> (Vec<usize>, Vec<usize>) {
    let s = boxes.len();
    let n = 2 * s;
    let edges = bucket_edges(buckets);
    let bucket = |d: f64| edges.iter().take_while(|&&e| e <= d).count();
    // Segment-level table first, then expanded to node pairs.
    let mut seg_x = vec![0usize; s * s];
    let mut seg_y = vec![0usize; s * s];
    for i in 0..s {
        for j in 0..s {
            seg_x[i * s + j] = bucket((boxes[i].x0 - boxes[j].x0).abs());
            seg_y[i * s + j] = bucket((boxes[i].y0 - boxes[j].y0).abs());
        }
    }
    let mut x_idx = vec![0usize; n * n];
    let mut y_idx = vec![0usize; n * n];
    for m in 0..n {
        for k in 0..n {
            let (i, j) = (m / 2, k / 2);
            x_idx[m * n + k] = seg_x[i * s + j];
            y_idx[m * n + k] = seg_y[i * s + j];
        }
    }
    (x_idx, y_idx)
}

/// Builds the per-head bias matrices `[2S, 2S]` from the learned bucket
/// tables, so gradients flow back into them.
pub fn relative_bias<F: Real>(
    tape: &mut Tape<F>,
    vars: &[Var],
    fusion: &FusionP,
    cfg: &ModelConfig,
    boxes: &[BBox],
) -> Vec<Var> {
    let n = 2 * boxes.len();
    let b = cfg.bias_buckets;
    let (x_idx, y_idx) = relative_bias_indices(boxes, b);
    (0..cfg.heads)
        .map(|h| {
            let off = h * b;
            let xi: Vec<usize> = x_idx.iter().map(|&i| off + i).collect();
            let yi: Vec<usize> = y_idx.iter().map(|&i| off + i).collect();
            let bx = tape.gather_elems(fusion.rel_x.v(vars), &xi, vec![n, n]);
            let by = tape.gather_elems(fusion.rel_y.v(vars), &yi, vec![n, n]);
            tape.add(bx, by)
        })
        .collect()
}

/// One attention head: biased scaled dot-product. Returns the attention
/// probabilities and the context rows.
pub fn head_attention<F: Real>(
    tape: &mut Tape<F>,
    q: Var,
    k: Var,
    v: Var,
    bias: Option<Var>,
    scale: f64,
) -> (Var, Var) {
    let kt = tape.transpose(k);
    let scores = tape.matmul(q, kt);
    let mut scores = tape.scale(scores, scale);
    if let Some(b) = bias {
        scores = tape.add(scores, b);
    }
    let attn = tape.row_softmax(scores);
    let ctx = tape.matmul(attn, v);
    (attn, ctx)
}

/// Post-norm transformer block with optional per-head attention bias.
pub fn attention_layer<F: Real>(
    tape: &mut Tape<F>,
    vars: &[Var],
    layer: &AttnLayerP,
    heads: usize,
    x: Var,
    bias: Option<&[Var]>,
) -> Var {
    let d = tape.value(x).cols();
    assert_eq!(d % heads, 0, "width {d} not divisible by {heads} heads");
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();

    let q = tape.matmul(x, layer.wq.v(vars));
    let k = tape.matmul(x, layer.wk.v(vars));
    let v = tape.matmul(x, layer.wv.v(vars));

    let mut ctx: Option<Var> = None;
    for h in 0..heads {
        let qh = tape.slice_cols(q, h * dh, dh);
        let kh = tape.slice_cols(k, h * dh, dh);
        let vh = tape.slice_cols(v, h * dh, dh);
        let (_, ctx_h) = head_attention(tape, qh, kh, vh, bias.map(|b| b[h]), scale);
        ctx = Some(match ctx {
            None => ctx_h,
            Some(acc) => tape.concat_cols(acc, ctx_h),
        });
    }
    let attn_out = apply_linear(tape, vars, layer.wo, ctx.expect("at least one head"));

    let res1 = tape.add(x, attn_out);
    let x1 = tape.layer_norm(res1, layer.ln1.gamma.v(vars), layer.ln1.beta.v(vars), 1e-5);

    let h = apply_linear(tape, vars, layer.ff1, x1);
    let h = tape.gelu(h);
    let ff = apply_linear(tape, vars, layer.ff2, h);
    let res2 = tape.add(x1, ff);
    tape.layer_norm(res2, layer.ln2.gamma.v(vars), layer.ln2.beta.v(vars), 1e-5)
}

/// Runs the stacked fusion layers over the node inputs. Output row `k`
/// is the contextual state of input node `k`.
pub fn encode<F: Real>(
    tape: &mut Tape<F>,
    vars: &[Var],
    params: &EruParams,
    cfg: &ModelConfig,
    node_inputs: Var,
    boxes: &[BBox],
) -> Var {
    let bias = relative_bias(tape, vars, &params.fusion, cfg, boxes);
    let mut x = node_inputs;
    for layer in &params.fusion.layers {
        x = attention_layer(tape, vars, layer, cfg.heads, x, Some(&bias));
    }
    x
}
