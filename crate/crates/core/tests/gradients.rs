use cellprep_core::gradcheck::{op_suite, pipeline_check, pipeline_check_config};

#[test]
fn every_op_passes_across_seeds() {
    for seed in 0..10 {
        for r in op_suite(seed).unwrap() {
            assert!(
                r.passed(),
                "seed {seed} {}: rel err {:.3e} at {:?} (analytic {}, numeric {})",
                r.name,
                r.report.max_rel_err,
                r.report.worst,
                r.report.analytic,
                r.report.numeric
            );
        }
    }
}

#[test]
fn suite_covers_each_op() {
    let names: Vec<_> = op_suite(0).unwrap().into_iter().map(|r| r.name).collect();
    for op in [
        "conv2d_3x3",
        "conv2d_1x1",
        "maxpool2",
        "upsample2",
        "relu",
        "sigmoid",
        "add",
        "concat_channels",
        "cat_batch",
        "slice_batch",
        "softmax_ce",
        "make_translated",
        "ensemble_mix",
    ] {
        assert!(names.contains(&op), "{op} missing");
    }
}

#[test]
fn full_pipeline_gradient() {
    for seed in 0..3 {
        let r = pipeline_check(seed, pipeline_check_config()).unwrap();
        eprintln!("seed {seed}: {:?}", r.report);
        assert!(r.passed(), "seed {seed}: {:?}", r.report);
        assert!(r.report.checked > 500);
    }
}
