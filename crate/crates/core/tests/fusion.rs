//! The fusion model against an independent loop-only evaluation.

mod common;

use bkws::fusion::{
    fuse_forward, golden_inputs, golden_params, grad_check, AttendedFusionProbe, AttentionProbe, FeatureMatrix,
    FuseForwardProbe, FusionBranch, FusionConfig, FusionParams, FusionTrace, Modality, RelevanceProbe,
};
use bkws::TensorFile;

fn inputs(cfg: FusionConfig, seed: u64) -> (FeatureMatrix, FeatureMatrix) {
    let mut rng = common::rng(seed);
    let a = common::uniform_matrix(cfg.tokens, cfg.dim, &mut rng);
    let v = common::uniform_matrix(cfg.tokens, cfg.dim, &mut rng);
    (
        FeatureMatrix::new(a, Modality::Audio).unwrap(),
        FeatureMatrix::new(v, Modality::Visual).unwrap(),
    )
}

#[test]
fn forward_matches_loop_oracle_across_shapes() {
    for (i, (d, h, t, heads, layers)) in [(4, 3, 1, 1, 0), (8, 8, 4, 1, 1), (6, 10, 5, 3, 2), (12, 4, 7, 4, 3)]
        .into_iter()
        .enumerate()
    {
        let mut cfg = FusionConfig::new(d, h, t);
        cfg.heads = heads;
        cfg.layers = layers;
        let p = FusionParams::random(cfg, 100 + i as u64).unwrap();
        let (a, v) = inputs(cfg, 200 + i as u64);
        let tr = fuse_forward(&a, &v, &p).unwrap();
        let o = common::fuse(a.values(), v.values(), &p);
        let diff = common::max_diff(&tr.relevance_audio, &o.audio.relevance)
            .max(common::max_diff(&tr.relevance_visual, &o.visual.relevance))
            .max(common::max_diff(&tr.pre_activation_audio, &o.audio.pre))
            .max(common::max_diff(&tr.pre_activation_visual, &o.visual.pre))
            .max(common::max_diff(&tr.fused_audio, &o.audio.fused))
            .max(common::max_diff(&tr.fused_visual, &o.visual.fused))
            .max((tr.logit - o.logit).abs());
        assert!(diff < 1e-12, "config {cfg:?}: max diff {diff:e}");
        assert!((tr.probability - 1.0 / (1.0 + (-tr.logit).exp())).abs() < 1e-15);
    }
}

#[test]
fn modalities_must_be_in_order() {
    let cfg = FusionConfig::new(4, 4, 2);
    let p = FusionParams::random(cfg, 1).unwrap();
    let (a, v) = inputs(cfg, 2);
    assert!(fuse_forward(&v, &a, &p).is_err());
    let short = FeatureMatrix::new(common::uniform_matrix(3, 4, &mut common::rng(3)), Modality::Visual).unwrap();
    assert!(fuse_forward(&a, &short, &p).is_err());
}

#[test]
fn gradients_match_finite_differences() {
    let mut rng = common::rng(9);
    let mut cfg = FusionConfig::new(6, 5, 3);
    cfg.heads = 2;
    cfg.layers = 2;
    let (a, v) = inputs(cfg, 10);
    let model = FuseForwardProbe {
        audio: a.values().clone(),
        visual: v.values().clone(),
        params: FusionParams::random(cfg, 11).unwrap(),
    };
    let attention = AttentionProbe {
        query: common::uniform_matrix(3, 6, &mut rng),
        key: common::uniform_matrix(4, 6, &mut rng),
        value: common::uniform_matrix(4, 6, &mut rng),
        params: bkws::fusion::AttentionParams::random(6, 3, &mut rng),
    };
    let relevance = RelevanceProbe {
        x: common::uniform_matrix(3, 4, &mut rng),
        joint: common::uniform_matrix(3, 8, &mut rng),
        w_joint: common::uniform_matrix(4, 8, &mut rng),
    };
    let branch = AttendedFusionProbe {
        x: common::uniform_matrix(3, 4, &mut rng),
        relevance: common::uniform_matrix(3, 3, &mut rng),
        branch: FusionBranch::random(4, 6, 3, &mut rng),
    };
    for report in [
        grad_check(&model, 60, 1).unwrap(),
        grad_check(&attention, 40, 2).unwrap(),
        grad_check(&relevance, 40, 3).unwrap(),
        grad_check(&branch, 40, 4).unwrap(),
    ] {
        assert!(
            report.checked.len() >= 20,
            "{}: only {} checked",
            report.probe,
            report.checked.len()
        );
        assert!(report.passes(1e-4), "{}: worst {:?}", report.probe, report.worst());
    }
}

#[test]
fn frozen_trace_and_params_roundtrip() {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/data/golden_fusion_trace.bkt");
    let frozen = FusionTrace::from_tensor(&TensorFile::read(path).unwrap()).unwrap();
    let (a, v) = golden_inputs();
    let now = fuse_forward(&a, &v, &golden_params()).unwrap();
    assert!(now.max_abs_diff(&frozen).unwrap() <= 1e-10);

    let p = golden_params();
    let back = FusionParams::from_tensor(&TensorFile::from_bytes(&p.to_tensor().to_bytes()).unwrap()).unwrap();
    assert_eq!(back, p);
    assert_eq!(back.num_values(), p.num_values());
}
