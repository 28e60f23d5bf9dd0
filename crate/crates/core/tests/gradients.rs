use comac_core::corpus::DialogueRound;
use comac_core::embedding::HashEmbedder;
use comac_core::model::{GradientSet, Mode, ModelState, RoundPass, Sampler, Strategy};
use comac_core::objective::{
    batch_loss, drop_persona_term, gradients, total_loss, train, Example, LossParts, NoLmLoss, TrainConfig,
};
use comac_core::saliency::{build_idf, IdfTable};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const D: usize = 16;
const D0: usize = 4;
const H: f64 = 1e-5;

fn sentence(rng: &mut ChaCha8Rng, vocab: &[String], lo: usize, hi: usize) -> String {
    let n = rng.random_range(lo..=hi);
    let words: Vec<&str> = vocab.choose_multiple(rng, n).map(String::as_str).collect();
    words.join(" ")
}

fn random_round(rng: &mut ChaCha8Rng, tag: usize) -> DialogueRound {
    let vocab: Vec<String> = (0..24)
        .map(|i| format!("w{tag}x{i}y{}", rng.random_range(0..1000)))
        .collect();
    let n_p = rng.random_range(2..=4);
    let n_k = rng.random_range(2..=4);
    let personas: Vec<String> = (0..n_p).map(|_| sentence(rng, &vocab, 2, 6)).collect();
    let knowledges: Vec<String> = (0..n_k).map(|_| sentence(rng, &vocab, 3, 8)).collect();
    let history = vec![sentence(rng, &vocab, 3, 9)];
    let labels = (0..n_p).map(|_| rng.random_bool(0.4)).collect();
    DialogueRound::from_texts(
        format!("g{tag}"),
        0,
        history,
        &personas,
        &knowledges,
        labels,
        rng.random_range(0..n_k),
    )
    .unwrap()
}

fn random_state(rng: &mut ChaCha8Rng, strategy: Strategy) -> ModelState {
    let mut state = ModelState::init(D, D0, strategy, true, rng.random()).unwrap();
    let mut flat = state.flatten();
    let n = flat.len();
    for v in &mut flat[n - 6..] {
        *v = rng.random_range(-2.0..2.0);
    }
    if strategy == Strategy::FeedForward {
        let c = n - 7;
        flat[c] = rng.random_range(-1.0..1.0);
    }
    state.set_flat(&flat).unwrap();
    state
}

fn random_cfg(rng: &mut ChaCha8Rng, strategy: Strategy) -> TrainConfig {
    TrainConfig {
        alpha: rng.random_range(0.1..2.0),
        beta: rng.random_range(0.1..2.0),
        gamma: rng.random_range(0.0..10.0),
        w_star: rng.random_range(0.5..0.95),
        p_sr: rng.random_range(0.3..=1.0),
        strategy,
        ..TrainConfig::default()
    }
}

/// Runs the analytic-vs-central-difference check on `configs` usable configurations.
fn check(strategy: Strategy, seed: u64, configs: usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let emb = HashEmbedder::new(D).unwrap();
    let mut done = 0;
    let mut attempts = 0;
    while done < configs {
        attempts += 1;
        assert!(attempts < configs * 20, "too many near-tie configurations");
        let rounds: Vec<DialogueRound> = (0..2).map(|i| random_round(&mut rng, attempts * 2 + i)).collect();
        let idf = build_idf(&rounds).unwrap();
        let state = random_state(&mut rng, strategy);
        let cfg = random_cfg(&mut rng, strategy);
        let sampler = Sampler::new(strategy, Some(&idf), cfg.p_sr).unwrap();
        let batch: Vec<Example> = rounds
            .iter()
            .map(|r| Example::new(r, &emb, rng.random_bool(0.2)).unwrap())
            .collect();
        let margin = batch
            .iter()
            .map(|ex| {
                RoundPass::forward(&state, sampler, &ex.inputs, Mode::Train)
                    .unwrap()
                    .min_margin()
            })
            .fold(f64::INFINITY, f64::min);
        if margin < 1e-4 {
            continue;
        }
        let (_, grads) = gradients(&state, sampler, &batch, &cfg, &NoLmLoss).unwrap();
        let analytic = grads.flatten(strategy == Strategy::FeedForward);
        let base = state.flatten();
        assert_eq!(analytic.len(), base.len());
        let mut probe = state.clone();
        let mut checked = 0;
        for i in 0..base.len() {
            let mut at = |delta: f64| {
                let mut flat = base.clone();
                flat[i] += delta;
                probe.set_flat(&flat).unwrap();
                batch_loss(&probe, sampler, &batch, &cfg, &NoLmLoss).unwrap()
            };
            let numeric = (at(H) - at(-H)) / (2.0 * H);
            let a = analytic[i];
            let scale = a.abs().max(numeric.abs());
            if scale < 1e-8 {
                continue;
            }
            let rel = (a - numeric).abs() / scale;
            assert!(
                rel <= 1e-4,
                "{strategy:?} config {done} param {i}: analytic {a} numeric {numeric} rel {rel}"
            );
            checked += 1;
        }
        assert!(
            checked * 2 > base.len(),
            "only {checked} of {} coordinates non-zero",
            base.len()
        );
        done += 1;
    }
}

#[test]
fn tfidf_gradients_match_finite_differences() {
    check(Strategy::TfIdf, 101, 50);
}

#[test]
fn ff_gradients_match_finite_differences() {
    check(Strategy::FeedForward, 202, 50);
}

fn fixture() -> (Vec<DialogueRound>, HashEmbedder, IdfTable) {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let rounds: Vec<DialogueRound> = (0..6).map(|i| random_round(&mut rng, i)).collect();
    let idf = build_idf(&rounds).unwrap();
    (rounds, HashEmbedder::new(D).unwrap(), idf)
}

#[test]
fn dead_persona_branch() {
    let (rounds, emb, idf) = fixture();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let state = random_state(&mut rng, Strategy::TfIdf);
    let sampler = Sampler::new(Strategy::TfIdf, Some(&idf), 0.5).unwrap();
    let batch: Vec<Example> = rounds.iter().map(|r| Example::new(r, &emb, true).unwrap()).collect();
    let unit = TrainConfig {
        alpha: 1.0,
        beta: 1.0,
        gamma: 0.0,
        d0: Some(D0),
        ..TrainConfig::default()
    };
    let (_, g1) = gradients(&state, sampler, &batch, &unit, &NoLmLoss).unwrap();
    assert_eq!(g1.pg, [0.0; 3]);
    for alpha in [0.0, 0.5, 3.0] {
        let cfg = TrainConfig { alpha, ..unit.clone() };
        let (_, g) = gradients(&state, sampler, &batch, &cfg, &NoLmLoss).unwrap();
        assert_eq!(g.pg, [0.0; 3]);
        for (a, b) in g.flatten(false).iter().zip(g1.flatten(false)) {
            assert!((a - alpha * b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
    }
}

#[test]
fn lm_hook_is_gradient_free() {
    struct Constant;
    impl comac_core::objective::LmLoss for Constant {
        fn loss(&self, _: &str, _: Option<&str>) -> f64 {
            2.5
        }
    }
    let (rounds, emb, idf) = fixture();
    let state = ModelState::init(D, D0, Strategy::TfIdf, true, 3).unwrap();
    let sampler = Sampler::new(Strategy::TfIdf, Some(&idf), 0.5).unwrap();
    let batch: Vec<Example> = rounds.iter().map(|r| Example::new(r, &emb, false).unwrap()).collect();
    let cfg = TrainConfig {
        gamma: 4.0,
        ..TrainConfig::default()
    };
    let (l0, g0) = gradients(&state, sampler, &batch, &cfg, &NoLmLoss).unwrap();
    let (l1, g1) = gradients(&state, sampler, &batch, &cfg, &Constant).unwrap();
    assert!((l1 - l0 - 10.0).abs() <= 1e-9);
    assert_eq!(g0, g1);
}

#[test]
fn zero_step_keeps_parameters() {
    let (rounds, emb, idf) = fixture();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut state = random_state(&mut rng, Strategy::FeedForward);
    let before = state.clone();
    let sampler = Sampler::new(Strategy::FeedForward, Some(&idf), 0.35).unwrap();
    let batch: Vec<Example> = rounds.iter().map(|r| Example::new(r, &emb, false).unwrap()).collect();
    let cfg = TrainConfig {
        strategy: Strategy::FeedForward,
        ..TrainConfig::default()
    };
    let (_, g) = gradients(&state, sampler, &batch, &cfg, &NoLmLoss).unwrap();
    assert!(g.flatten(true).iter().any(|&v| v != 0.0));
    state.apply(&g, 0.0);
    assert_eq!(state, before);
    state.apply(&GradientSet::zeros_like(&before), 1.0);
    assert_eq!(state, before);
}

#[test]
fn zero_epochs_returns_init() {
    let (rounds, emb, idf) = fixture();
    let cfg = TrainConfig {
        epochs: 0,
        d0: Some(D0),
        seed: 77,
        ..TrainConfig::default()
    };
    let state = train(&rounds, &emb, Some(&idf), &cfg).unwrap();
    assert_eq!(state, ModelState::init(D, D0, Strategy::TfIdf, true, 77).unwrap());
}

#[test]
fn training_is_deterministic() {
    let (rounds, emb, idf) = fixture();
    for strategy in [Strategy::TfIdf, Strategy::FeedForward] {
        let cfg = TrainConfig {
            epochs: 3,
            strategy,
            ..TrainConfig::default()
        };
        let a = train(&rounds, &emb, Some(&idf), &cfg).unwrap();
        let b = train(&rounds, &emb, Some(&idf), &cfg).unwrap();
        assert_eq!(a.flatten(), b.flatten());
        let c = train(
            &rounds,
            &emb,
            Some(&idf),
            &TrainConfig {
                seed: cfg.seed + 1,
                ..cfg
            },
        )
        .unwrap();
        assert_ne!(a.flatten(), c.flatten());
    }
}

#[test]
fn drop_fraction_matches_p_star() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let negative = [false; 5];
    let dropped = (0..10_000)
        .filter(|_| drop_persona_term(&negative, 0.1, &mut rng))
        .count();
    assert!((dropped as f64 / 1e4 - 0.1).abs() <= 0.01, "{dropped}");
    let positive = [false, true, false];
    assert!((0..1000).all(|_| !drop_persona_term(&positive, 1.0, &mut rng)));
}

#[test]
fn total_loss_is_linear_in_weights() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..200 {
        let parts = LossParts {
            kg: rng.random_range(0.0..5.0),
            pg: rng.random_bool(0.7).then(|| rng.random_range(0.0..5.0)),
            lm: rng.random_range(0.0..5.0),
        };
        let w: [f64; 3] = [
            rng.random_range(0.0..10.0),
            rng.random_range(0.0..10.0),
            rng.random_range(0.0..10.0),
        ];
        let cfg = TrainConfig {
            alpha: w[0],
            beta: w[1],
            gamma: w[2],
            ..TrainConfig::default()
        };
        let unit = |a, b, g| {
            total_loss(
                &parts,
                &TrainConfig {
                    alpha: a,
                    beta: b,
                    gamma: g,
                    ..TrainConfig::default()
                },
            )
        };
        let combined = w[0] * unit(1.0, 0.0, 0.0) + w[1] * unit(0.0, 1.0, 0.0) + w[2] * unit(0.0, 0.0, 1.0);
        assert!((total_loss(&parts, &cfg) - combined).abs() <= 1e-9);
    }
}
