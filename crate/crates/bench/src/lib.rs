//! Shared fixtures for the criterion benchmarks: a small initialized
//! model plus synthetic documents at controllable sizes.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use eru_core::config::RunConfig;
use eru_core::corpus::{generate_corpus, CorpusProfile};
use eru_core::doc::{assign_reading_order, default_schema, normalize_boxes, BBox};
use eru_core::model::{init_params, EruParams, PreparedDoc};
use eru_core::numerics::{ParamStore, Tensor};
use eru_core::vocab::Vocab;

pub struct BenchModel {
    pub cfg: RunConfig,
    pub store: ParamStore<f32>,
    pub params: EruParams,
    pub vocab: Vocab,
}

pub fn bench_model(seed: u64) -> BenchModel {
    let cfg = RunConfig::desk(seed);
    let schema = default_schema();
    let doc = generate_corpus(&cfg.profile, 1, false).expect("corpus").pop().unwrap();
    let vocab = Vocab::build(doc.segments.iter().map(|s| s.text.as_str()), cfg.model.vocab_max);
    let (store, params) = init_params::<f32>(&cfg.model, vocab.len(), &schema, seed);
    BenchModel {
        cfg,
        store,
        params,
        vocab,
    }
}

/// A prepared document with roughly `n_segments` segments.
pub fn bench_doc(model: &BenchModel, n_segments: usize, seed: u64) -> PreparedDoc {
    let profile = CorpusProfile {
        target_avg_segments: n_segments as f64,
        ..model.cfg.profile.clone()
    };
    let doc = generate_corpus(&profile, 1, false).expect("corpus").pop().unwrap();
    let doc = assign_reading_order(normalize_boxes(doc).expect("normalize"));
    let _ = seed;
    PreparedDoc::prepare(&doc, &model.vocab, &model.cfg.model, None).expect("prepare")
}

/// Random node-state matrix and matching boxes for raw attention timing.
pub fn random_nodes(n_segments: usize, d: usize, seed: u64) -> (Tensor<f32>, Vec<BBox>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = 2 * n_segments;
    let data: Vec<f32> = (0..rows * d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let boxes: Vec<BBox> = (0..n_segments)
        .map(|i| {
            let y = (i as f64 * 17.0) % 950.0;
            BBox {
                x0: 40.0 + f64::from(i as u32 % 3) * 20.0,
                y0: y,
                x1: 440.0,
                y1: y + 10.0,
            }
        })
        .collect();
    (Tensor::new(vec![rows, d], data), boxes)
}
