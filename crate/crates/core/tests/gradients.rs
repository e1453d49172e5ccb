mod common;

use common::*;
use gem_core::sega::advantage_weighted_loss;
use gem_core::{
    dpo_gradient, dpo_loss, group_advantages, sega_gradient, sega_loss, sft_gradient, sft_loss,
    BaselineMode, DpoConfig, PolicyParams, PreferenceRecord, SegaConfig, Source, WeightMode,
};
use rand::Rng;

const H: f64 = 1e-5;
const TOL: f64 = 1e-5;

#[test]
fn logprob_gradient_matches_finite_differences() {
    let mut rng = rng(100);
    for _ in 0..100 {
        let inst = instance(&mut rng);
        let resp = random_response(&mut rng, inst.params.vocab());
        let exact = inst.params.logprob_gradient(&inst.prompt, &resp).unwrap();
        let numeric =
            numeric_gradient(&inst.params, H, |p| p.sequence_logprob(&inst.prompt, &resp).unwrap());
        let err = relative_error(&exact, &numeric);
        assert!(err <= TOL, "relative error {err:e}");
    }
}

#[test]
fn sega_gradient_matches_finite_differences_across_configs() {
    let mut rng = rng(200);
    let baselines = [BaselineMode::Mean, BaselineMode::Median, BaselineMode::Min];
    for i in 0..50 {
        let inst = instance(&mut rng);
        let k = rng.gen_range(2..=6);
        let responses = (0..k).map(|_| random_response(&mut rng, inst.params.vocab())).collect();
        let g = group(&inst.params, &inst.prompt, responses);
        let cfg = SegaConfig {
            baseline_mode: baselines[i % 3],
            sigma_sq: rng.gen_range(0.25..4.0),
            ..SegaConfig::default()
        };
        let rewards: Vec<f64> = (0..k).map(|_| rng.gen_range(-3.0..1.0)).collect();
        let adv = group_advantages(&rewards, &cfg).unwrap();
        let exact = sega_gradient(&inst.params, &g, &adv).unwrap();
        // With advantages frozen, the scaled weights make the loss A/σ².
        let numeric = numeric_gradient(&inst.params, H, |p| {
            sega_loss(p, &g, &adv).unwrap() / cfg.sigma_sq
        });
        let err = relative_error(&exact, &numeric);
        assert!(err <= TOL, "config {i}: relative error {err:e}");
    }
}

#[test]
fn sign_and_variance_weights_match_weighted_loss() {
    let mut rng = rng(300);
    for i in 0..20 {
        let inst = instance(&mut rng);
        let k = rng.gen_range(2..=5);
        let responses: Vec<_> = (0..k).map(|_| random_response(&mut rng, inst.params.vocab())).collect();
        let g = group(&inst.params, &inst.prompt, responses.clone());
        let mode = if i % 2 == 0 { WeightMode::Sign } else { WeightMode::Variance };
        let cfg = SegaConfig { weight_mode: mode, ..SegaConfig::default() };
        let rewards: Vec<f64> = (0..k).map(|_| rng.gen_range(-3.0..1.0)).collect();
        let adv = group_advantages(&rewards, &cfg).unwrap();
        let exact = sega_gradient(&inst.params, &g, &adv).unwrap();
        let numeric = numeric_gradient(&inst.params, H, |p| {
            let lps: Vec<f64> =
                responses.iter().map(|r| p.sequence_logprob(&inst.prompt, r).unwrap()).collect();
            advantage_weighted_loss(&adv.weights, &lps)
        });
        let err = relative_error(&exact, &numeric);
        assert!(err <= TOL, "{mode:?}: relative error {err:e}");
    }
}

fn record(params: &PolicyParams, rng: &mut rand_chacha::ChaCha8Rng) -> PreferenceRecord {
    let vocab = params.vocab();
    let query = random_prompt(rng, vocab);
    PreferenceRecord {
        query,
        winner: random_response(rng, vocab),
        loser: random_response(rng, vocab),
        margin: 0.0,
        source: Source::Human,
    }
}

#[test]
fn dpo_gradient_matches_finite_differences() {
    let mut rng = rng(400);
    for _ in 0..100 {
        let inst = instance(&mut rng);
        let reference = PolicyParams::init(
            *inst.params.vocab(),
            inst.params.context_length(),
            0.5,
            rng.gen(),
        )
        .unwrap();
        let cfg = DpoConfig::new(rng.gen_range(0.1..3.0), reference).unwrap();
        let r = record(&inst.params, &mut rng);
        let exact = dpo_gradient(&inst.params, &cfg, &r).unwrap();
        let numeric = numeric_gradient(&inst.params, H, |p| dpo_loss(p, &cfg, &r).unwrap());
        let err = relative_error(&exact, &numeric);
        assert!(err <= TOL, "relative error {err:e}");
    }
}

#[test]
fn sft_gradient_matches_finite_differences() {
    let mut rng = rng(500);
    for _ in 0..30 {
        let inst = instance(&mut rng);
        let r = record(&inst.params, &mut rng);
        let exact = sft_gradient(&inst.params, &r).unwrap();
        let numeric = numeric_gradient(&inst.params, H, |p| sft_loss(p, &r).unwrap());
        assert!(relative_error(&exact, &numeric) <= TOL);
    }
}
