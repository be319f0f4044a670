use kanok::engine::{
    accumulate_gradients, composite_generator_objective, kink_pattern, cycle_loss, discriminator_loss, evaluate,
    generator_adv_loss, identity_loss, init_models, load_checkpoint, save_checkpoint, to_tensor, from_tensor,
    AdamConfig, LossReport, LossWeights, ModelBundle, ModelConfig, NetId, Objective, Tensor, TrainState,
};
use kanok::RasterImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rel_err(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

fn random_tensor(rng: &mut ChaCha8Rng, h: usize, w: usize, range: f64) -> Tensor<f64> {
    Tensor::from_vec(1, h, w, (0..h * w).map(|_| rng.random_range(-range..=range)).collect()).unwrap()
}

// Brute-force references, written from the definitions.
fn ref_mean_abs(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += (a.data()[i] - b.data()[i]).abs();
    }
    s / a.len() as f64
}

fn ref_bce(z: f64, target: f64) -> f64 {
    let p = 1.0 / (1.0 + (-z).exp());
    -(target * p.ln() + (1.0 - target) * (1.0 - p).ln())
}

fn ref_grid_bce(z: &Tensor<f64>, target: f64) -> f64 {
    z.data().iter().map(|&v| ref_bce(v, target)).sum::<f64>() / z.len() as f64
}

#[test]
fn pixel_losses_match_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..100 {
        let n = rng.random_range(1..24);
        let a = random_tensor(&mut rng, n, n + 1, 1.0);
        let b = random_tensor(&mut rng, n, n + 1, 1.0);
        assert!(rel_err(cycle_loss(&a, &b).unwrap(), ref_mean_abs(&a, &b)) < 1e-6);
        assert!(rel_err(identity_loss(&a, &b).unwrap(), ref_mean_abs(&a, &b)) < 1e-6);
    }
}

#[test]
fn logit_losses_match_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..100 {
        let n = rng.random_range(1..12);
        let real = random_tensor(&mut rng, n, n, 8.0);
        let fake = random_tensor(&mut rng, n, n, 8.0);
        assert!(rel_err(generator_adv_loss(&fake).unwrap(), ref_grid_bce(&fake, 1.0)) < 1e-6);
        let want = 0.5 * (ref_grid_bce(&real, 1.0) + ref_grid_bce(&fake, 0.0));
        assert!(rel_err(discriminator_loss(&real, &fake).unwrap(), want) < 1e-6);
    }
}

#[test]
fn loss_anchors() {
    let ones = Tensor::<f64>::filled(1, 4, 4, 1.0);
    let neg = Tensor::<f64>::filled(1, 4, 4, -1.0);
    assert_eq!(cycle_loss(&ones, &ones).unwrap(), 0.0);
    assert_eq!(cycle_loss(&neg, &ones).unwrap(), 2.0);
    let zero = Tensor::<f64>::zeros(1, 4, 4);
    let half = Tensor::<f64>::filled(1, 4, 4, 0.5);
    assert_eq!(identity_loss(&zero, &half).unwrap(), 0.5);
    assert!((generator_adv_loss(&zero).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
    let p20 = Tensor::<f64>::filled(1, 3, 3, 20.0);
    let m20 = Tensor::<f64>::filled(1, 3, 3, -20.0);
    assert!((generator_adv_loss(&p20).unwrap() - 2.061153622438558e-9).abs() < 1e-15);
    assert!((generator_adv_loss(&m20).unwrap() - 20.000000002061153).abs() < 1e-9);
    assert!(discriminator_loss(&p20, &m20).unwrap() < 1e-8);
    assert!((discriminator_loss(&zero, &zero).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
    assert!((discriminator_loss(&m20, &p20).unwrap() - 20.0).abs() < 1e-6);
}

#[test]
fn loss_errors() {
    let a = Tensor::<f64>::zeros(1, 2, 2);
    let b = Tensor::<f64>::zeros(1, 2, 3);
    assert!(cycle_loss(&a, &b).is_err());
    assert!(discriminator_loss(&a, &b).is_err());
    let nan = Tensor::<f64>::filled(1, 2, 2, f64::NAN);
    assert!(generator_adv_loss(&nan).is_err());
}

fn random_report(rng: &mut ChaCha8Rng) -> LossReport {
    LossReport::from_values(std::array::from_fn(|_| rng.random_range(0.0..3.0)))
}

#[test]
fn composite_objective_is_affine_in_each_weight() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..100 {
        let r = random_report(&mut rng);
        let base = composite_generator_objective(&r, &LossWeights::BASELINE).unwrap();
        let want = (r.adv_g_a + r.adv_g_b) + 10.0 * (r.cycle_a + r.cycle_b) + 5.0 * (r.identity_a + r.identity_b);
        assert!(rel_err(base, want) < 1e-12);
        type Set = fn(&mut LossWeights, f64);
        let setters: [Set; 3] = [|w, v| w.cycle = v, |w, v| w.identity = v, |w, v| w.adv = v];
        for set in setters {
            let at = |m: f64| {
                let mut w = LossWeights::BASELINE;
                set(&mut w, m);
                composite_generator_objective(&r, &w).unwrap()
            };
            let (t0, t1, t2) = (at(0.0), at(1.0), at(2.0));
            assert!(rel_err(t2 - t1, t1 - t0) < 1e-6);
        }
        let twice = LossWeights { cycle: 2.0, ..LossWeights::BASELINE };
        let delta = composite_generator_objective(&r, &twice).unwrap() - base;
        assert!(rel_err(delta, 10.0 * (r.cycle_a + r.cycle_b)) < 1e-12);
    }
    assert_eq!(composite_generator_objective(&LossReport::default(), &LossWeights::BASELINE).unwrap(), 0.0);
}

/// Convolution arithmetic: `floor((n + 2p - k) / s) + 1`.
fn conv_side(n: usize, k: usize, s: usize, p: usize) -> usize {
    (n + 2 * p - k) / s + 1
}

fn logit_side_oracle(n: usize) -> usize {
    let strided = (0..3).fold(n, |n, _| conv_side(n, 4, 2, 1));
    conv_side(conv_side(strided, 4, 1, 1), 4, 1, 1)
}

#[test]
fn discriminator_logit_grids() {
    assert_eq!(logit_side_oracle(256), 30);
    assert_eq!(logit_side_oracle(64), 6);
    assert_eq!(logit_side_oracle(512), 62);
    let b = init_models::<f32>(64, 4, 0).unwrap();
    for n in [64, 256, 512] {
        let (z, _) = b.d_a.forward(&Tensor::zeros(1, n, n)).unwrap();
        let s = logit_side_oracle(n);
        assert_eq!(z.shape(), (1, s, s), "{n}px");
        assert_eq!(b.d_a.output_shape(n), Some((1, s, s)));
    }
    assert!(b.d_a.forward(&Tensor::zeros(1, 8, 8)).is_err());
}

#[test]
fn generator_shapes_and_range() {
    assert_eq!(ModelConfig::new(256, 64).unwrap().depth, 8);
    assert_eq!(ModelConfig::new(64, 16).unwrap().depth, 6);
    assert!(ModelConfig::new(48, 8).is_err());
    assert!(ModelConfig::new(16, 8).is_err());
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for n in [32, 64, 256] {
        let b = init_models::<f32>(n, 4, 7).unwrap();
        assert_eq!(b.g_a.depth(), n.trailing_zeros() as usize);
        assert_eq!(b.g_a.encoder_shapes().last().map(|s| (s.1, s.2)), Some((1, 1)));
        let x: Tensor<f32> = random_tensor(&mut rng, n, n, 1.0).cast();
        let y = b.g_a.apply(&x).unwrap();
        assert_eq!(y.shape(), x.shape());
        assert!(y.max_abs() <= 1.0);
        let (yt, _) = b.g_b.forward(&x, Some(&mut rng)).unwrap();
        assert_eq!(yt.shape(), x.shape());
        assert!(yt.max_abs() <= 1.0);
    }
    let b = init_models::<f32>(32, 4, 7).unwrap();
    assert!(b.g_a.apply(&Tensor::zeros(1, 64, 64)).is_err());
}

#[test]
fn saturated_inputs_stay_in_range() {
    let mut b = init_models::<f32>(32, 4, 1).unwrap();
    for v in b.g_a.params.values.iter_mut().flatten() {
        *v *= 500.0;
    }
    let y = b.g_a.apply(&Tensor::filled(1, 32, 32, 1.0)).unwrap();
    assert!(y.max_abs() <= 1.0);
}

#[test]
fn init_is_deterministic() {
    let a = init_models::<f32>(32, 4, 11).unwrap();
    let b = init_models::<f32>(32, 4, 11).unwrap();
    let c = init_models::<f32>(32, 4, 12).unwrap();
    assert_eq!(a.param_bytes(), b.param_bytes());
    assert_ne!(a.param_bytes(), c.param_bytes());
    let x = Tensor::filled(1, 32, 32, 0.25f32);
    assert_eq!(a.g_b.apply(&x).unwrap(), b.g_b.apply(&x).unwrap());
}

#[test]
fn init_scheme() {
    let b = init_models::<f64>(64, 8, 3).unwrap();
    let p = &b.g_a.params;
    let w = &p.values[p.index_of("down1.conv.weight").unwrap()];
    let mean = w.iter().sum::<f64>() / w.len() as f64;
    let std = (w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / w.len() as f64).sqrt();
    assert!(mean.abs() < 0.002 && (std - 0.02).abs() < 0.002, "mean {mean} std {std}");
    assert!(p.values[p.index_of("out.convT.bias").unwrap()].iter().all(|&v| v == 0.0));
    assert!(p.values[p.index_of("down1.norm.beta").unwrap()].iter().all(|&v| v == 0.0));
    // The first stage and the 1×1 bottleneck carry no normalization.
    assert!(p.index_of("down0.norm.gamma").is_none());
    assert!(p.index_of("down5.norm.gamma").is_none());
    assert!(b.d_a.params.index_of("stage0.norm.gamma").is_none());
    assert!(b.d_a.params.index_of("stage1.norm.gamma").is_some());
}

#[test]
fn tensor_round_trip_is_within_one_level() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let px: Vec<u8> = (0..64 * 64).map(|_| rng.random()).collect();
    let img = RasterImage::from_pixels(64, 64, px).unwrap();
    assert!(from_tensor(&to_tensor::<f32>(&img)).max_abs_diff(&img).unwrap() <= 1);
    assert_eq!(from_tensor(&to_tensor::<f64>(&img)), img);
}

fn toy_bundle(seed: u64) -> ModelBundle<f64> {
    ModelBundle::from_config(ModelConfig::custom(16, 4, 4, 2).unwrap(), seed)
}

fn toy_pair(seed: u64) -> (Tensor<f64>, Tensor<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (random_tensor(&mut rng, 16, 16, 1.0), random_tensor(&mut rng, 16, 16, 1.0))
}

/// Central differences (step 1e-3) around 20 random parameters per network.
///
/// A probe whose ±h evaluations land on a different linear piece of some
/// rectifier or absolute value than the base point is not differentiable
/// there; it is replaced by a fresh draw.
fn check_gradients(objective: Objective, nets: &[NetId], seed: u64) -> Vec<(NetId, f64, f64)> {
    const H: f64 = 1e-3;
    const PROBES: usize = 20;
    let weights = LossWeights { cycle: 1.3, identity: 0.7, adv: 1.1, disc: 0.9 };
    let mut bundle = toy_bundle(seed);
    let (x_a, x_b) = toy_pair(seed + 100);
    let dropout = ChaCha8Rng::seed_from_u64(seed + 200);
    let eval = |b: &ModelBundle<f64>| {
        let r = evaluate(b, &x_a, &x_b, &weights, Some(&mut dropout.clone())).unwrap();
        let kinks = kink_pattern(b, &x_a, &x_b, Some(&mut dropout.clone())).unwrap();
        (if objective == Objective::Generator { r.total_g } else { r.total_d }, kinks)
    };
    bundle.zero_grads();
    accumulate_gradients(&mut bundle, &x_a, &x_b, &weights, Some(&mut dropout.clone()), objective).unwrap();
    let (_, base_kinks) = eval(&bundle);
    let mut probe_rng = ChaCha8Rng::seed_from_u64(seed + 300);
    let mut out = Vec::new();
    for &id in nets {
        let count = bundle.params(id).count();
        let (mut kept, mut draws) = (0, 0);
        while kept < PROBES {
            draws += 1;
            assert!(draws <= 20 * PROBES, "{id:?}: too few differentiable probes");
            let (buf, off) = bundle.params(id).locate(probe_rng.random_range(0..count)).unwrap();
            let analytic = bundle.params(id).grads[buf][off];
            let orig = bundle.params(id).values[buf][off];
            bundle.params_mut(id).values[buf][off] = orig + H;
            let (up, up_kinks) = eval(&bundle);
            bundle.params_mut(id).values[buf][off] = orig - H;
            let (down, down_kinks) = eval(&bundle);
            bundle.params_mut(id).values[buf][off] = orig;
            if up_kinks != base_kinks || down_kinks != base_kinks {
                continue;
            }
            kept += 1;
            out.push((id, analytic, (up - down) / (2.0 * H)));
        }
    }
    out
}

#[test]
fn generator_objective_gradients_match_finite_differences() {
    let results = check_gradients(Objective::Generator, &NetId::ALL, 21);
    for (id, a, n) in &results {
        assert!(rel_err(*a, *n) < 1e-3, "{id:?}: analytic {a} vs numeric {n}");
    }
}

#[test]
fn discriminator_objective_gradients_match_finite_differences() {
    let results = check_gradients(Objective::Discriminator, &[NetId::DA, NetId::DB], 22);
    for (id, a, n) in &results {
        assert!(rel_err(*a, *n) < 1e-3, "{id:?}: analytic {a} vs numeric {n}");
    }
}

fn desk_pairs(n: usize, size: usize) -> Vec<(Tensor<f32>, Tensor<f32>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    (0..n)
        .map(|_| {
            let a: Tensor<f32> = random_tensor(&mut rng, size, size, 1.0).cast();
            let b: Tensor<f32> = random_tensor(&mut rng, size, size, 1.0).cast();
            (a, b)
        })
        .collect()
}

#[test]
fn zero_generator_weights_freeze_generators() {
    let bundle = init_models::<f32>(32, 4, 8).unwrap();
    let mut st = TrainState::new(bundle.clone(), AdamConfig::default(), 1);
    for (a, b) in desk_pairs(3, 32) {
        let r = st.train_step(&a, &b, &LossWeights::ZERO_GENERATOR).unwrap();
        assert_eq!(r.total_g, 0.0);
    }
    assert_eq!(st.bundle.g_a.params.values, bundle.g_a.params.values);
    assert_eq!(st.bundle.g_b.params.values, bundle.g_b.params.values);
    assert_ne!(st.bundle.d_a.params.values, bundle.d_a.params.values);
}

#[test]
fn reports_satisfy_total_invariant() {
    let mut st = TrainState::new(init_models::<f32>(32, 4, 8).unwrap(), AdamConfig::default(), 1);
    let w = LossWeights { cycle: 2.0, identity: 0.5, adv: 1.5, disc: 1.0 };
    for (a, b) in desk_pairs(3, 32) {
        let r = st.train_step(&a, &b, &w).unwrap();
        assert!(rel_err(r.total_g, composite_generator_objective(&r, &w).unwrap()) < 1e-6);
        assert!(r.values().iter().all(|v| v.is_finite() && *v >= 0.0));
    }
}

#[test]
fn training_is_deterministic_and_resumable() {
    let pairs = desk_pairs(6, 32);
    let w = LossWeights::BASELINE;
    let run = |st: &mut TrainState<f32>, range: std::ops::Range<usize>| -> Vec<LossReport> {
        range.map(|i| st.train_step(&pairs[i].0, &pairs[i].1, &w).unwrap()).collect()
    };
    let fresh = || TrainState::new(init_models::<f32>(32, 4, 3).unwrap(), AdamConfig::default(), 4);
    let mut full = fresh();
    let full_log = run(&mut full, 0..6);
    let mut again = fresh();
    assert_eq!(run(&mut again, 0..6), full_log);
    assert_eq!(again.bundle.param_bytes(), full.bundle.param_bytes());

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("mid.ckpt");
    let mut first = fresh();
    let mut log = run(&mut first, 0..3);
    save_checkpoint(&path, &first, &serde_json::json!({"note": "mid"})).unwrap();
    drop(first);
    let mut resumed = load_checkpoint::<f32>(&path).unwrap().state;
    log.extend(run(&mut resumed, 3..6));
    assert_eq!(log, full_log);
    assert_eq!(resumed.bundle.param_bytes(), full.bundle.param_bytes());
}

#[test]
fn non_finite_step_is_divergence_and_leaves_params() {
    let mut st = TrainState::new(init_models::<f32>(32, 4, 8).unwrap(), AdamConfig::default(), 1);
    let before = st.bundle.clone();
    let (a, _) = &desk_pairs(1, 32)[0];
    let bad = Tensor::filled(1, 32, 32, f32::NAN);
    let err = st.train_step(a, &bad, &LossWeights::BASELINE).unwrap_err();
    assert!(err.is_divergence(), "{err}");
    assert_eq!(st.bundle.param_bytes(), before.param_bytes());
}
