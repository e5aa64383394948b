//! Loss-weight sweep, run explicitly with `-- --ignored` (it pre-trains
//! one model per weight value).

use eru_core::config::RunConfig;
use eru_core::corpus::{generate_corpus, write_corpus, CorpusDir, CorpusProfile};
use eru_core::doc::default_schema;
use eru_core::finetune::lambda_msp_sweep;

#[test]
#[ignore = "trains one model per sweep value; run explicitly"]
fn msp_weight_sweep_peaks_in_the_interior() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig::desk(97);
    cfg.pretrain.steps = 600;
    cfg.finetune.max_epochs = 6;
    cfg.finetune.patience = 2;
    let schema = default_schema();

    let gen = |seed: u64, n: usize, labeled: bool| {
        let profile = CorpusProfile { seed, ..cfg.profile.clone() };
        generate_corpus(&profile, n, labeled).unwrap()
    };
    let pre_dir = tmp.path().join("pre");
    write_corpus(&pre_dir, &gen(97, 400, false), &cfg.profile, false).unwrap();
    let corpus = CorpusDir::open(&pre_dir).unwrap();

    let values = [0.2, 0.6, 1.2];
    let points = lambda_msp_sweep(
        &corpus,
        &cfg,
        &schema,
        &values,
        gen(98, 60, true),
        gen(99, 20, true),
        gen(100, 40, true),
    )
    .unwrap();
    for p in &points {
        println!("lambda_msp {:.1}: test F1 {:.4}", p.lambda_msp, p.test_f1);
    }
    // Directional shape only: the interior weight should not lose to
    // both boundary settings.
    let interior = points[1].test_f1;
    assert!(
        interior >= points[0].test_f1.min(points[2].test_f1),
        "interior weight underperforms both boundaries: {points:?}"
    );
}
