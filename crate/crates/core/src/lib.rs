//! Segment-level multimodal resume understanding.
//!
//! A resume is modeled as an ordered sequence of OCR-style segments, each
//! carrying text, a bounding box, a page index, and an optional rendered
//! crop. Every segment becomes two nodes (textual and visual) of a
//! layout-aware fusion transformer whose attention logits carry learned
//! relative-position biases. The model is pre-trained with three
//! self-supervised objectives (masked language modeling, visual-position
//! alignment, masked segment prediction) and fine-tuned with a
//! multi-granularity sequence-labeling loss.
//!
//! The crate is organized around that pipeline:
//!
//! * [`doc`] — document/segment data model and the segment-JSON format
//! * [`corpus`] — deterministic synthetic resume generator and analytics
//! * [`numerics`] — dense tensors, reverse-mode autodiff, AdamW, checkpoints
//! * [`vocab`] — word-level tokenizer and vocabulary
//! * [`embed`] — per-segment textual/visual encoders and position biases
//! * [`fusion`] — the biased-attention fusion transformer
//! * [`model`] — parameter registry tying the encoders and heads together
//! * [`pretrain`] — the three self-supervised losses and the training loop
//! * [`finetune`] — labeling heads, fine-tuning, inference, evaluation
//! * [`complexity`] — analytic cost model and the timing harness

pub mod complexity;
pub mod config;
pub mod corpus;
pub mod doc;
pub mod embed;
mod error;
pub mod finetune;
pub mod fusion;
pub mod model;
pub mod numerics;
pub mod pretrain;
pub mod seed;
pub mod verify;
pub mod vocab;

pub use config::RunConfig;
pub use doc::{BBox, LabelSchema, ResumeDoc, Segment};
pub use error::{Error, Result};
pub use numerics::{ParamStore, Tape, Tensor, Var};

/// Initializes the global thread pool, honoring the `ERU_THREADS` env var.
///
/// Safe to call more than once; later calls are no-ops. Training batch
/// assembly and corpus generation parallelize through this pool.
pub fn init_threads() {
    if let Ok(v) = std::env::var("ERU_THREADS") {
        if let Ok(n) = v.trim().parse::<usize>() {
            if n >= 1 {
                // Ignore the error if a pool was already installed.
                let _ = rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build_global();
            }
        }
    }
}
