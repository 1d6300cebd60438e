use std::path::PathBuf;

use mxdog::losses::{precompute_targets, total_loss_and_grad};
use mxdog::optim::{stylize_with, LOG_HEADER};
use mxdog::{
    load_image, make_test_net, stylize, ImageTensor, Init, LossWeights, MxdogParams, StylizeConfig,
};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn fixture(name: &str) -> ImageTensor<f32> {
    let path: PathBuf = [env!("CARGO_MANIFEST_DIR"), "tests", "fixtures", name]
        .iter()
        .collect();
    load_image(path).unwrap()
}

fn random_image(seed: u64, size: usize) -> ImageTensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ImageTensor::from_fn(size, size, 3, |_, _, _| rng.random_range(0.0..1.0)).unwrap()
}

#[test]
fn fixtures_decode_as_rgb() {
    for name in [
        "landscape.png",
        "flower.png",
        "skyline.png",
        "portrait.png",
        "water.png",
    ] {
        let img = fixture(name);
        assert_eq!(img.shape(), (64, 64, 3), "{name}");
        assert!(img.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}

#[test]
fn targets_on_fixtures_are_binary_and_repeatable() {
    let net = make_test_net::<f32>(0, 8).unwrap();
    let params = MxdogParams::default();
    let w = LossWeights::default();
    let style = fixture("ink_style.png");
    for name in ["landscape.png", "portrait.png"] {
        let content = fixture(name);
        let a = precompute_targets(&content, &style, &net, &params, &w).unwrap();
        assert!(a.content_mxdog.data().iter().all(|&v| v == 0.0 || v == 1.0));
        assert!(a.style_mxdog.data().iter().all(|&v| v == 0.0 || v == 1.0));
        let b = precompute_targets(&content, &style, &net, &params, &w).unwrap();
        assert_eq!(a.content_mxdog, b.content_mxdog);
        assert_eq!(a.style_grams, b.style_grams);
        assert_eq!(a.mxdog_style_grams, b.mxdog_style_grams);
    }
}

#[test]
fn same_image_with_image_terms_only_is_stationary() {
    let net = make_test_net::<f64>(1, 8).unwrap();
    let img = fixture("flower.png").cast::<f64>();
    let params = MxdogParams::default();
    let w = LossWeights {
        lambda2: 0.0,
        lambda4: 0.0,
        lambda5: 0.0,
        ..LossWeights::default()
    };
    let targets = precompute_targets(&img, &img, &net, &params, &w).unwrap();
    let (loss, grad) = total_loss_and_grad(&img, &targets, &net, &params, &w, 50.0).unwrap();
    assert!(loss.total <= 1e-10);
    assert!(grad.data().iter().all(|&g| g == 0.0));
}

#[test]
fn zero_weights_give_zero_loss_and_gradient() {
    let net = make_test_net::<f32>(0, 8).unwrap();
    let w = LossWeights::only([false; 5]);
    let params = MxdogParams::default();
    let (c, s) = (random_image(1, 16), random_image(2, 16));
    let targets = precompute_targets(&c, &s, &net, &params, &w).unwrap();
    let (loss, grad) =
        total_loss_and_grad(&random_image(3, 16), &targets, &net, &params, &w, 50.0).unwrap();
    assert_eq!(loss.total, 0.0);
    assert!(grad.data().iter().all(|&g| g == 0.0));
}

#[test]
fn doubling_a_weight_scales_only_its_contribution() {
    let net = make_test_net::<f64>(0, 8).unwrap();
    let params = MxdogParams::default();
    let (c, s, x) = (
        random_image(4, 16).cast(),
        random_image(5, 16).cast(),
        random_image(6, 16).cast::<f64>(),
    );
    let w = LossWeights::default();
    let targets = precompute_targets(&c, &s, &net, &params, &w).unwrap();
    let (a, ga) = total_loss_and_grad(&x, &targets, &net, &params, &w, 50.0).unwrap();
    let w2 = LossWeights {
        lambda4: 2.0 * w.lambda4,
        ..w.clone()
    };
    let (b, gb) = total_loss_and_grad(&x, &targets, &net, &params, &w2, 50.0).unwrap();
    assert_eq!(a.terms(), b.terms());
    assert_eq!(b.weighted(&w2)[3], 2.0 * a.weighted(&w)[3]);
    // Total gradient is linear in the weights.
    let w0 = LossWeights {
        lambda4: 0.0,
        ..w.clone()
    };
    let (_, g0) = total_loss_and_grad(&x, &targets, &net, &params, &w0, 50.0).unwrap();
    for ((a, b), z) in ga.data().iter().zip(gb.data()).zip(g0.data()) {
        assert!(((b - z) - 2.0 * (a - z)).abs() <= 1e-9 * (1.0 + b.abs()));
    }
}

#[test]
fn one_iteration_without_weights_returns_the_initialization() {
    let net = make_test_net::<f32>(0, 8).unwrap();
    let content = fixture("skyline.png");
    let cfg = StylizeConfig {
        iterations: 1,
        weights: LossWeights::only([false; 5]),
        ..StylizeConfig::default()
    };
    let out = stylize(&content, &fixture("ink_style.png"), &net, &cfg).unwrap();
    assert_eq!(out.image, content);
}

#[test]
fn identity_run_leaves_image_unchanged() {
    let net = make_test_net::<f32>(0, 8).unwrap();
    let img = fixture("water.png");
    let cfg = StylizeConfig {
        iterations: 10,
        weights: LossWeights {
            lambda2: 0.0,
            lambda4: 0.0,
            lambda5: 0.0,
            ..LossWeights::default()
        },
        init: Init::Content,
        ..StylizeConfig::default()
    };
    let out = stylize(&img, &img, &net, &cfg).unwrap();
    assert!(out.history[0].loss.total <= 1e-10);
    assert!(out.image.max_abs_diff(&img) <= 1e-6);
}

#[test]
fn history_is_finite_over_seeds() {
    let net = make_test_net::<f32>(0, 8).unwrap();
    for seed in 0..100 {
        let cfg = StylizeConfig {
            iterations: 3,
            log_interval: 1,
            seed,
            init: if seed % 2 == 0 {
                Init::Content
            } else {
                Init::Noise
            },
            ..StylizeConfig::default()
        };
        let out = stylize(
            &random_image(2 * seed, 16),
            &random_image(2 * seed + 1, 16),
            &net,
            &cfg,
        )
        .unwrap();
        assert_eq!(out.history.len(), 4);
        for r in &out.history {
            assert!(r.loss.total.is_finite() && r.loss.terms().iter().all(|v| v.is_finite()));
        }
    }
}

#[test]
fn records_follow_the_log_interval() {
    let net = make_test_net::<f32>(0, 8).unwrap();
    let cfg = StylizeConfig {
        iterations: 7,
        log_interval: 3,
        ..StylizeConfig::default()
    };
    let mut seen = Vec::new();
    let out = stylize_with(
        &random_image(0, 16),
        &random_image(1, 16),
        &net,
        &cfg,
        |r, img| {
            assert_eq!(img.shape(), (16, 16, 3));
            seen.push(r.iteration);
        },
    )
    .unwrap();
    assert_eq!(seen, [0, 3, 6, 7]);
    let iters: Vec<usize> = out.history.iter().map(|r| r.iteration).collect();
    assert_eq!(iters, seen);
    assert_eq!(LOG_HEADER.split_whitespace().count(), 8);
    assert_eq!(out.history[0].to_line().split_whitespace().count(), 7);
}

#[test]
fn stylize_resizes_to_max_edge() {
    let net = make_test_net::<f32>(0, 8).unwrap();
    let cfg = StylizeConfig {
        iterations: 1,
        max_edge: 32,
        ..StylizeConfig::default()
    };
    let out = stylize(&fixture("portrait.png"), &random_image(0, 20), &net, &cfg).unwrap();
    assert_eq!(out.image.shape(), (32, 32, 3));
    assert_eq!(out.targets.content_shape(), (32, 32, 3));
}

#[test]
fn stylize_is_reproducible() {
    let net = make_test_net::<f32>(3, 8).unwrap();
    let cfg = StylizeConfig {
        iterations: 5,
        init: Init::Noise,
        seed: 42,
        ..StylizeConfig::default()
    };
    let (c, s) = (fixture("landscape.png"), fixture("ink_style.png"));
    let a = stylize(&c, &s, &net, &cfg).unwrap();
    let b = stylize(&c, &s, &net, &cfg).unwrap();
    assert_eq!(a.image, b.image);
    assert_eq!(a.history, b.history);
}

#[test]
fn default_run_descends_on_fixture_pair() {
    let net = make_test_net::<f32>(0, 8).unwrap();
    let cfg = StylizeConfig {
        iterations: 200,
        learning_rate: 1e-2,
        log_interval: 50,
        ..StylizeConfig::default()
    };
    let out = stylize(
        &fixture("landscape.png"),
        &fixture("ink_style.png"),
        &net,
        &cfg,
    )
    .unwrap();
    let first = out.history.first().unwrap().loss.total;
    let last = out.history.last().unwrap().loss.total;
    eprintln!(
        "initial total {first:e}, final total {last:e}, ratio {}",
        last / first
    );
    assert!(last <= 0.5 * first);
}
