use std::sync::OnceLock;

use fable_core::dataset::{generate_synthetic_corpus, EditSample, SyntheticWorld};
use fable_core::edit::*;
use fable_core::lm::{
    train_toy_lm, LMConfig, LayerPartition, PromptBottleneck, PromptSubstitution, TrainConfig,
    TransformerLM,
};

fn world() -> &'static SyntheticWorld {
    static W: OnceLock<SyntheticWorld> = OnceLock::new();
    W.get_or_init(|| generate_synthetic_corpus(2, 5).unwrap())
}

/// Four-layer model briefly trained on a two-person world.
fn model() -> &'static TransformerLM {
    static M: OnceLock<TransformerLM> = OnceLock::new();
    M.get_or_init(|| {
        let config = LMConfig {
            n_layers: 4,
            d_model: 16,
            n_heads: 2,
            d_ff: 32,
            max_seq_len: 192,
            prompt_bottleneck: Some(PromptBottleneck {
                seal: 2,
                release: 3,
            }),
            ..Default::default()
        };
        let train = TrainConfig {
            steps: 60,
            lr: 5e-3,
            batch_size: 4,
            warmup_steps: 5,
            ..Default::default()
        };
        train_toy_lm(&world().corpus, config, &train).unwrap().0
    })
}

fn small_config() -> EditConfig {
    EditConfig {
        partition: LayerPartition::new(2, 3),
        edit_layers: vec![1, 2],
        fine_residual: ResidualBudget::new(4, 0.2),
        holistic_residual: ResidualBudget::new(4, 0.2),
        layer_steps: 4,
        expansion_multiplier: 2,
        n_irrelevant: 4,
        irrelevant_continuation: 8,
        ..Default::default()
    }
}

fn sample() -> &'static EditSample {
    &world().samples[0]
}

#[test]
fn zero_budgets_leave_the_model_unchanged() {
    let mut cfg = small_config();
    cfg.fine_residual.steps = 0;
    cfg.holistic_residual.steps = 0;
    let out = run_fable(model(), sample(), &cfg, EditMode::Full).unwrap();
    assert!(changed_parameters(&model().params, &out.model.params).is_empty());
    let s1 = out.report.stage_one.unwrap();
    assert!(s1
        .residuals
        .iter()
        .all(|r| r.steps_used == 0 && r.trajectory.len() == 1 && r.delta_norm() == 0.0));
    assert!(s1
        .layers
        .iter()
        .all(|l| l.best_step == 0 && l.initial.total == 0.0));
    assert_eq!(s1.anchored_fraction(), 1.0);
    let s2 = out.report.stage_two.unwrap();
    assert_eq!(s2.layer.best_step, 0);
}

#[test]
fn residual_probability_is_reproduced_by_substitution() {
    let m = model();
    let prompt = m.tokenizer.encode_prompt(&sample().question).unwrap();
    let target = m.tokenizer.encode_answer(&sample().target_output).unwrap();
    let budget = ResidualBudget::new(8, 0.3);
    let r = optimize_residual(m, &prompt, &target, 3, &budget, 0.9).unwrap();
    assert_eq!(r.trajectory.len(), r.steps_used + 1);
    assert!(r.final_probability() > r.initial_probability());
    for (k, (b, d)) in r.target_key.iter().zip(r.base_key.iter().zip(&r.delta)) {
        assert_eq!(*k, b + d);
    }
    let subst = PromptSubstitution {
        layer: 3,
        vector: r.target_key.clone(),
    };
    let nll = m.sequence_nll(&prompt, &target, Some(&subst)).unwrap();
    let p = (-nll / target.len() as f64).exp();
    assert!((p - r.final_probability()).abs() < 1e-9);
    let base = m.sequence_nll(&prompt, &target, None).unwrap();
    assert!(((-base / target.len() as f64).exp() - r.initial_probability()).abs() < 1e-9);
}

#[test]
fn residual_search_stops_at_threshold() {
    let m = model();
    let prompt = m.tokenizer.encode_prompt("what is 2 plus 4?").unwrap();
    let target = m.tokenizer.encode_answer("x").unwrap();
    let budget = ResidualBudget::new(12, 0.5);
    let free = optimize_residual(m, &prompt, &target, 2, &budget, 1.0).unwrap();
    assert_eq!(free.steps_to_threshold, None);
    assert_eq!(free.steps_used, 12);
    let thr = free.trajectory[6];
    let first = free.trajectory.iter().position(|&p| p >= thr).unwrap();
    let r = optimize_residual(m, &prompt, &target, 2, &budget, thr).unwrap();
    assert_eq!(r.steps_to_threshold, Some(first));
    assert_eq!(r.steps_used, first);
    assert_eq!(r.trajectory[..], free.trajectory[..=first]);
    let longer = ResidualBudget {
        stop_probability: Some(1.0),
        ..budget
    };
    let r = optimize_residual(m, &prompt, &target, 2, &longer, thr).unwrap();
    assert_eq!(r.steps_to_threshold, Some(first));
    assert_eq!(r.trajectory, free.trajectory);
    let lower = ResidualBudget {
        stop_probability: Some(0.0),
        ..budget
    };
    assert_eq!(
        optimize_residual(m, &prompt, &target, 2, &lower, thr)
            .unwrap()
            .steps_used,
        first
    );
    assert!(optimize_residual(m, &prompt, &[], 2, &ResidualBudget::new(1, 0.1), 0.5).is_err());
    assert!(optimize_residual(m, &prompt, &target, 9, &ResidualBudget::new(1, 0.1), 0.5).is_err());
}

#[test]
fn mutation_scope_follows_the_stages() {
    let mut cfg = small_config();
    cfg.holistic_residual.steps = 40;
    cfg.layer_steps = 10;
    let out = run_fable(model(), sample(), &cfg, EditMode::Full).unwrap();
    let mid = out.after_stage_one.as_ref().unwrap();
    let s1 = changed_layers(&model().params, &mid.params);
    assert!(!s1.is_empty());
    assert!(s1.iter().all(|l| cfg.edit_layers.contains(l)), "{s1:?}");
    let s2 = changed_layers(&mid.params, &out.model.params);
    assert_eq!(s2, vec![cfg.partition.holistic]);

    let ablated = run_fable(model(), sample(), &cfg, EditMode::NoStage1).unwrap();
    assert!(ablated.after_stage_one.is_none() && ablated.report.stage_one.is_none());
    let s2_only = changed_layers(&model().params, &ablated.model.params);
    assert!(
        s2_only.iter().all(|&l| l == cfg.partition.holistic),
        "{s2_only:?}"
    );
    let no2 = run_fable(model(), sample(), &cfg, EditMode::NoStage2).unwrap();
    assert!(no2.report.stage_two.is_none());
    assert!(changed_parameters(&mid.params, &no2.model.params).is_empty());
}

#[test]
fn layer_updates_never_increase_the_objective() {
    let out = run_fable(model(), sample(), &small_config(), EditMode::Full).unwrap();
    let s1 = out.report.stage_one.unwrap();
    for l in &s1.layers {
        assert!(l.final_terms.total <= l.initial.total);
        assert!(l.final_terms.fine_preservation.is_none());
    }
    let s2 = out.report.stage_two.unwrap();
    assert!(s2.layer.final_terms.total <= s2.layer.initial.total);
    assert_eq!(s2.layer.initial.fine_preservation, Some(0.0));
    assert_eq!(s2.layer.initial.prefix, 0.0);
    assert_eq!(s2.layer.initial.locality, 0.0);
}

#[test]
fn reports_round_trip_through_json() {
    let cfg = small_config();
    let out = run_fable(model(), sample(), &cfg, EditMode::Full).unwrap();
    let n_seeds = sample().seed_qas().len();
    assert_eq!(out.report.n_fine_qas, 2 * n_seeds);
    assert_eq!(
        out.report.stage_one.as_ref().unwrap().residuals.len(),
        2 * n_seeds
    );
    assert_eq!(out.report.n_irrelevant, 4);
    let json = serde_json::to_string(&out.report).unwrap();
    assert!(json.contains("\"mode\":\"full\""));
    let back: EditReport = serde_json::from_str(&json).unwrap();
    assert_eq!(back, out.report);
}

#[test]
fn frozen_trace_spreading_and_offset_target_run() {
    let mut cfg = small_config();
    cfg.spreading = ResidualSpreading::FrozenTrace;
    cfg.holistic_target = HolisticTarget::OffsetByKey;
    let out = run_fable(model(), sample(), &cfg, EditMode::Full).unwrap();
    assert!(changed_layers(&model().params, &out.model.params)
        .iter()
        .all(|l| [1, 2, 3].contains(l)));
}

#[test]
fn runs_are_deterministic() {
    let cfg = small_config();
    let a = run_fable(model(), sample(), &cfg, EditMode::Full).unwrap();
    let b = run_fable(model(), sample(), &cfg, EditMode::Full).unwrap();
    assert!(changed_parameters(&a.model.params, &b.model.params).is_empty());
    assert_eq!(
        a.report.stage_two.unwrap().residual,
        b.report.stage_two.unwrap().residual
    );
}

#[test]
fn trajectory_comparison_rules() {
    let cfg = small_config();
    let c = trajectory_compare(model(), sample(), &cfg).unwrap();
    assert_eq!(c.sample_id, sample().id);
    assert_eq!(c.initial_delta(), c.full[0] - c.no_stage1[0]);
    let full = run_fable(model(), sample(), &cfg, EditMode::Full)
        .unwrap()
        .report;
    assert!(compare_trajectories(&full, &full).is_err());
    let mk = |a, b| TrajectoryComparison {
        sample_id: "s".into(),
        full: vec![0.5],
        no_stage1: vec![0.5],
        full_steps_to_threshold: a,
        no_stage1_steps_to_threshold: b,
    };
    assert!(mk(Some(3), Some(3)).converges_no_slower());
    assert!(!mk(Some(4), Some(3)).converges_no_slower());
    assert!(mk(Some(9), None).converges_no_slower());
    assert!(!mk(None, Some(9)).converges_no_slower());
    assert!(mk(None, None).converges_no_slower());
    assert!(mk(None, None).starts_higher());
}

#[test]
fn invalid_configs_are_rejected_before_editing() {
    let mut cfg = small_config();
    cfg.edit_layers = vec![3];
    assert!(matches!(
        run_fable(model(), sample(), &cfg, EditMode::Full),
        Err(EditError::Config(_))
    ));
    let mut cfg = small_config();
    cfg.partition = LayerPartition::new(3, 3);
    assert!(run_fable(model(), sample(), &cfg, EditMode::Full).is_err());
    let mut m = model().clone();
    assert!(stage_one_edit(&mut m, &[], &[], &small_config()).is_err());
}
