use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use xlsm_core::eval::{run_benchmark, score_item, BenchOptions, EvalItem, EvalKind, Verdict};
use xlsm_core::model::{forward, init_params, ModelConfig, ModelParams, ScoreOptions};
use xlsm_core::synthlang::{generate_cloze, generate_minimal_pairs, ClozeKind, PairKind, SynthConfig};

fn synth() -> SynthConfig {
    SynthConfig {
        story_count: 200,
        ..SynthConfig::default()
    }
}

fn model(ctx: usize) -> ModelParams<f64> {
    init_params(&ModelConfig {
        vocab_size: 128,
        d_model: 16,
        n_layers: 2,
        n_heads: 2,
        context_len: ctx,
        init_seed: 4,
        ..ModelConfig::default()
    })
    .unwrap()
}

/// Log-probability of `ending` after `prompt`, straight from the logits.
fn reference_logprob(p: &ModelParams<f64>, prompt: &[u32], ending: &[u32]) -> f64 {
    let full: Vec<u32> = prompt.iter().chain(ending).copied().collect();
    let trace = forward(p, &full).unwrap();
    let mut lp = 0.0;
    for pos in prompt.len().max(1)..full.len() {
        let row = trace.logits_at(pos - 1);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = row.iter().map(|x| (x - max).exp()).sum();
        lp += row[full[pos] as usize] - max - z.ln();
    }
    lp
}

#[test]
fn scores_match_a_direct_computation() {
    let p = model(64);
    let items = generate_cloze(&synth(), ClozeKind::Topic, 10).unwrap();
    for it in &items {
        let s = score_item(&p, it, &ScoreOptions::default()).unwrap();
        let prompt = it.prompt_units();
        let t = reference_logprob(&p, &prompt, &it.true_ending.units);
        let f = reference_logprob(&p, &prompt, &it.distractor.units);
        assert!((s.lp_true - t).abs() < 1e-9, "{} vs {t}", s.lp_true);
        assert!((s.lp_false - f).abs() < 1e-9, "{} vs {f}", s.lp_false);
        let want = if t > f { Verdict::Correct } else { Verdict::Incorrect };
        assert_eq!(s.verdict, want);
    }
}

#[test]
fn minimal_pairs_score_without_a_prompt() {
    let p = model(64);
    let pairs = generate_minimal_pairs(&synth(), PairKind::Syntax, 5).unwrap();
    for (i, pair) in pairs.into_iter().enumerate() {
        let item: EvalItem = pair.into_eval_item(format!("syn-{i}"));
        assert!(item.prompt.is_empty());
        let s = score_item(&p, &item, &ScoreOptions::default()).unwrap();
        assert!((s.lp_true - reference_logprob(&p, &[], &item.true_ending.units)).abs() < 1e-9);
        assert!((s.lp_false - reference_logprob(&p, &[], &item.distractor.units)).abs() < 1e-9);
    }
}

#[test]
fn results_do_not_depend_on_item_order() {
    let p = model(64);
    let mut items = generate_cloze(&synth(), ClozeKind::Story, 50).unwrap();
    let a = run_benchmark(&p, &items, &BenchOptions::default()).unwrap();
    items.shuffle(&mut ChaCha8Rng::seed_from_u64(1));
    let b = run_benchmark(&p, &items, &BenchOptions::default()).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.len(), 4);
    assert!(a.iter().all(|r| r.kind == EvalKind::Story && r.count == 50));
}

#[test]
fn overlong_items_are_excluded_and_counted() {
    // Four 6-token prompt sentences plus a 6-token ending: 30 tokens.
    let p = model(29);
    let items = generate_cloze(&synth(), ClozeKind::Topic, 8).unwrap();
    let r = run_benchmark(&p, &items, &BenchOptions::default());
    assert!(r.unwrap().is_empty());
    let p = model(30);
    let r = run_benchmark(&p, &items, &BenchOptions::default()).unwrap();
    assert!(r.iter().all(|r| r.excluded == 0 && r.count == 8));
}
