//! Finite-difference verification of every trained loss.
//!
//! Builds a deterministic two-segment document at the configured (tiny)
//! dimensions, then sweeps each loss with [`grad_check`] at double
//! precision. This is the oracle the `grad-check` command and the
//! acceptance suite run.

use crate::config::RunConfig;
use crate::corpus::{generate_corpus, CorpusProfile};
use crate::doc::{assign_reading_order, default_schema, normalize_boxes};
use crate::error::Result;
use crate::finetune::{finetune_loss, sample_pairs};
use crate::model::{init_params, EruParams, PreparedDoc};
use crate::numerics::{grad_check, GradCheckReport, ParamStore};
use crate::pretrain::{
    mlm_loss, msp_clean_targets, msp_loss_fixed_targets, pretrain_doc_loss_fixed_msp, vpa_loss,
    MaskPlan,
};
use crate::vocab::Vocab;

pub struct LossCheck {
    pub name: &'static str,
    pub report: GradCheckReport,
}

/// Deterministic two-segment fixture at the config's dimensions.
pub fn two_segment_fixture(cfg: &RunConfig) -> Result<(PreparedDoc, Vocab)> {
    let profile = CorpusProfile {
        target_avg_segments: 12.0,
        crop_h: cfg.model.crop_h,
        crop_w: cfg.model.crop_w,
        seed: cfg.seed,
        ..cfg.profile.clone()
    };
    let doc = generate_corpus(&profile, 1, true)?.pop().expect("one document");
    let mut doc = assign_reading_order(normalize_boxes(doc)?);
    doc.segments.truncate(2);
    doc.segments[0].rank = Some(0);
    doc.segments[1].rank = Some(1);
    let vocab = Vocab::build(
        doc.segments.iter().map(|s| s.text.as_str()),
        cfg.model.vocab_max,
    );
    let schema = default_schema();
    let prep = PreparedDoc::prepare(&doc, &vocab, &cfg.model, Some(&schema))?;
    Ok((prep, vocab))
}

/// Runs the five loss checks (MLM, VPA, MSP, the weighted combination,
/// and the fine-tuning loss) and returns their reports in that order.
pub fn grad_check_suite(cfg: &RunConfig, eps: f64) -> Result<Vec<LossCheck>> {
    let (doc, vocab) = two_segment_fixture(cfg)?;
    let schema = default_schema();
    let (store, params): (ParamStore<f64>, EruParams) =
        init_params(&cfg.model, vocab.len(), &schema, cfg.seed);
    let plan = MaskPlan::build(&doc, cfg, vocab.len(), crate::seed::child_seed(cfg.seed, 1));
    let pairs = sample_pairs(&doc, 2 * doc.n, crate::seed::child_seed(cfg.seed, 2))?;

    let mut out = Vec::with_capacity(5);
    out.push(LossCheck {
        name: "L_mlm",
        report: grad_check(&store, eps, |tape, vars| {
            Ok(mlm_loss(tape, vars, &params, cfg, &doc, &plan)?.0)
        })?,
    });
    out.push(LossCheck {
        name: "L_vpa",
        report: grad_check(&store, eps, |tape, vars| {
            vpa_loss(tape, vars, &params, cfg, &doc, &plan)
        })?,
    });
    // The contrastive loss trains against detached clean-pass targets, so
    // the checked function pins those targets at the current parameters --
    // exactly the function one optimizer step descends.
    let targets = msp_clean_targets(&store, &params, cfg, &doc, &plan)?;
    out.push(LossCheck {
        name: "L_msp",
        report: grad_check(&store, eps, |tape, vars| {
            msp_loss_fixed_targets(tape, vars, &params, cfg, &doc, &plan, &targets)
        })?,
    });
    out.push(LossCheck {
        name: "L_pre",
        report: grad_check(&store, eps, |tape, vars| {
            Ok(
                pretrain_doc_loss_fixed_msp(tape, vars, &params, cfg, &doc, &plan, &targets)?
                    .total,
            )
        })?,
    });
    out.push(LossCheck {
        name: "L_f",
        report: grad_check(&store, eps, |tape, vars| {
            Ok(finetune_loss(tape, vars, &params, cfg, &doc, &pairs)?.total)
        })?,
    });
    Ok(out)
}
