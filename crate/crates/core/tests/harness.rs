use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use kanok::corpus::{build_corpus, synthetic_seeds, CorpusConfig, CorpusInput};
use kanok::engine::{init_models, load_checkpoint, save_checkpoint, AdamConfig, LossWeights, TrainState};
use kanok::harness::{
    compose_grid, epoch_pairs, read_loss_log, render_grid, resume_training, run_sweep, run_training, stylize,
    Direction, GridLayout, RunArtifacts, RunConfig, RunStatus, SweepSpec, Variant, LOSS_LOG_FILE, SWEEP_SUMMARY_FILE,
};
use kanok::manifest::{DatasetManifest, Split};
use kanok::synth::{generate_dataset, SynthConfig};
use kanok::{Error, RasterImage};
use tempfile::TempDir;

struct Data {
    _dir: TempDir,
    a: PathBuf,
    b: PathBuf,
}

/// 6 + 4 silhouettes and 8 + 2 style images at 64 px, built once.
fn data() -> &'static Data {
    static DATA: OnceLock<Data> = OnceLock::new();
    DATA.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a");
        let b = dir.path().join("b");
        let cc = CorpusConfig { canvas_px: 64, n_train: 6, n_test: 4, ..Default::default() };
        build_corpus(CorpusInput::Seeds(&synthetic_seeds(3, 10)), &cc, &a).unwrap();
        generate_dataset(5, 8, 2, &SynthConfig::with_canvas(64), &b).unwrap();
        Data { _dir: dir, a, b }
    })
}

fn small(out: &Path) -> RunConfig {
    RunConfig { base_filters: 4, epochs: 2, samples: 3, ..RunConfig::desk(&data().a, &data().b, out) }
}

fn generator_bytes(ck: &Path) -> Vec<f32> {
    let state = load_checkpoint::<f32>(ck).unwrap().state;
    let b = state.bundle;
    b.g_a.params.values.iter().chain(&b.g_b.params.values).flatten().copied().collect()
}

#[test]
fn run_layout_and_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(&dir.path().join("run"));
    let art = run_training(&cfg).unwrap();
    assert_eq!(art.rows.len(), 2 * 6);
    assert_eq!(art.summary.status, RunStatus::Complete);
    assert_eq!(art.summary.steps_per_epoch, 6);
    assert_eq!(art.summary.epoch_means.len(), 2);
    assert_eq!(art.checkpoints.len(), 2);
    for ck in &art.checkpoints {
        load_checkpoint::<f32>(ck).unwrap();
    }
    assert_eq!(art.samples.len(), 3);
    let header = std::fs::read_to_string(art.loss_log()).unwrap();
    assert!(header.starts_with("epoch,step,cycle_A,cycle_B,identity_A,identity_B,adv_G_A,adv_G_B,disc_A,disc_B,total_G,total_D\n"));
    assert_eq!(RunArtifacts::load(&cfg.output_dir).unwrap(), art);
    let steps: Vec<u64> = art.rows.iter().map(|r| r.step).collect();
    assert_eq!(steps, (0..12).collect::<Vec<_>>());
}

#[test]
fn checkpoint_cadence_keeps_the_last_epoch() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig { epochs: 3, checkpoint_every: 2, ..small(&dir.path().join("run")) };
    let art = run_training(&cfg).unwrap();
    let names: Vec<String> =
        art.checkpoints.iter().map(|p| p.file_name().unwrap().to_string_lossy().into_owned()).collect();
    assert_eq!(names, ["epoch_0002.ckpt", "epoch_0003.ckpt"]);
}

#[test]
fn pairing_never_repeats_within_an_epoch() {
    for epoch in 0..5 {
        let pairs = epoch_pairs(9, epoch, 30, 50);
        assert_eq!(pairs.len(), 30);
        let mut b: Vec<usize> = pairs.iter().map(|p| p.1).collect();
        b.sort_unstable();
        b.dedup();
        assert_eq!(b.len(), 30);
    }
}

#[test]
fn identical_configs_give_identical_logs() {
    let dir = tempfile::tempdir().unwrap();
    let one = run_training(&small(&dir.path().join("one"))).unwrap();
    let two = run_training(&small(&dir.path().join("two"))).unwrap();
    assert_eq!(std::fs::read(one.loss_log()).unwrap(), std::fs::read(two.loss_log()).unwrap());
    let other = run_training(&RunConfig { data_seed: 1, ..small(&dir.path().join("three")) }).unwrap();
    assert_ne!(one.rows, other.rows);
}

#[test]
fn resume_matches_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let full = run_training(&RunConfig { epochs: 3, ..small(&dir.path().join("full")) }).unwrap();
    // Interrupt a second run after one epoch, then resume it.
    let cut = RunConfig { epochs: 1, ..small(&dir.path().join("cut")) };
    let first = run_training(&cut).unwrap();
    let resumed = resume_training(first.final_checkpoint().unwrap(), Some(3)).unwrap();
    assert_eq!(resumed.rows.len(), full.rows.len());
    let values = |a: &RunArtifacts| a.rows.iter().map(|r| (r.epoch, r.step, r.report)).collect::<Vec<_>>();
    assert_eq!(values(&resumed), values(&full));
    assert_eq!(
        generator_bytes(resumed.final_checkpoint().unwrap()),
        generator_bytes(full.final_checkpoint().unwrap())
    );
}

#[test]
fn divergence_halts_and_flags() {
    let dir = tempfile::tempdir().unwrap();
    let adam = AdamConfig { learning_rate: 1e30, ..AdamConfig::default() };
    let cfg = RunConfig { adam, ..small(&dir.path().join("run")) };
    let art = run_training(&cfg).unwrap();
    assert_eq!(art.summary.status, RunStatus::Diverged);
    assert!(art.diverged());
    assert!(art.summary.divergence.as_deref().unwrap().contains("diverged"));
    assert!(art.rows.len() < 12);
    assert!(art.samples.is_empty());
    assert_eq!(read_loss_log(&cfg.output_dir.join(LOSS_LOG_FILE)).unwrap(), art.rows);
    assert!(art.rows.iter().all(|r| r.report.first_non_finite().is_none()));
}

#[test]
fn invalid_configs_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    assert!(matches!(run_training(&RunConfig { epochs: 0, ..small(&out) }), Err(Error::Invalid(_))));
    assert!(run_training(&RunConfig { image_size: 48, ..small(&out) }).is_err());
    assert!(run_training(&RunConfig { data_a: dir.path().join("missing"), ..small(&out) }).is_err());
    // 32-px model against 64-px data.
    assert!(run_training(&RunConfig { image_size: 32, ..small(&out) }).is_err());
}

#[test]
fn default_run_is_two_hundred_epochs() {
    let cfg = RunConfig::default();
    assert_eq!((cfg.epochs, cfg.image_size, cfg.base_filters), (200, 256, 64));
    assert_eq!(cfg.weights, LossWeights::BASELINE);
}

#[test]
fn sweep_first_step_delta_is_ten_cycle() {
    let dir = tempfile::tempdir().unwrap();
    let base = RunConfig { epochs: 1, samples: 0, ..small(&dir.path().join("sweep")) };
    let variants = vec![
        Variant { name: "baseline".into(), weights: LossWeights::BASELINE },
        Variant { name: "2xCycleLoss".into(), weights: LossWeights { cycle: 2.0, ..LossWeights::BASELINE } },
    ];
    let out = run_sweep(&SweepSpec { base, variants }, 2).unwrap();
    assert_eq!(out.len(), 2);
    let base_rows = &out[0].result.as_ref().unwrap().rows;
    let double_rows = &out[1].result.as_ref().unwrap().rows;
    let (b, d) = (base_rows[0].report, double_rows[0].report);
    let expect = 10.0 * (b.cycle_a + b.cycle_b);
    let delta = d.total_g - b.total_g;
    assert!(((delta - expect) / expect).abs() < 1e-5, "{delta} vs {expect}");
    // Same components at step 0: only the weights differ.
    assert_eq!((b.cycle_a, b.disc_b), (d.cycle_a, d.disc_b));
    let table = std::fs::read_to_string(dir.path().join("sweep").join(SWEEP_SUMMARY_FILE)).unwrap();
    assert_eq!(table.lines().count(), 3);
    assert!(table.lines().nth(2).unwrap().starts_with("2xCycleLoss,complete,2,"));
}

#[test]
fn zero_weight_variant_freezes_generators() {
    let dir = tempfile::tempdir().unwrap();
    let base = RunConfig { samples: 0, ..small(&dir.path().join("sweep")) };
    let zero = LossWeights { cycle: 0.0, identity: 0.0, adv: 0.0, disc: 0.0 };
    let out = run_sweep(&SweepSpec { base: base.clone(), variants: vec![Variant { name: "zero".into(), weights: zero }] }, 1)
        .unwrap();
    let art = out[0].result.as_ref().unwrap();
    let fresh = init_models::<f32>(64, 4, base.init_seed).unwrap();
    let init: Vec<f32> = fresh.g_a.params.values.iter().chain(&fresh.g_b.params.values).flatten().copied().collect();
    assert_eq!(generator_bytes(art.final_checkpoint().unwrap()), init);
}

#[test]
fn failing_variant_is_isolated() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("sweep");
    std::fs::create_dir_all(&root).unwrap();
    // A plain file where the variant's run directory should go.
    std::fs::write(root.join("blocked"), b"").unwrap();
    let base = RunConfig { epochs: 1, samples: 0, ..small(&root) };
    let variants = vec![
        Variant { name: "blocked".into(), weights: LossWeights::BASELINE },
        Variant { name: "ok".into(), weights: LossWeights::BASELINE },
    ];
    let out = run_sweep(&SweepSpec { base, variants }, 1).unwrap();
    assert!(out[0].result.is_err());
    assert!(out[1].result.is_ok());
    let table = std::fs::read_to_string(root.join(SWEEP_SUMMARY_FILE)).unwrap();
    assert!(table.contains("blocked,failed"));
    assert!(table.contains("ok,complete"));
}

#[test]
fn duplicate_variant_names_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let v = Variant { name: "x".into(), weights: LossWeights::BASELINE };
    let spec = SweepSpec { base: small(dir.path()), variants: vec![v.clone(), v] };
    assert!(run_sweep(&spec, 1).is_err());
}

fn untrained_checkpoint(dir: &Path) -> PathBuf {
    let path = dir.join("untrained.ckpt");
    let state = TrainState::new(init_models::<f32>(64, 4, 11).unwrap(), AdamConfig::default(), 0);
    save_checkpoint(&path, &state, &serde_json::Value::Null).unwrap();
    path
}

fn test_images(n: usize) -> Vec<RasterImage> {
    let d = &data().a;
    let m = DatasetManifest::load(d).unwrap();
    m.files(d, Split::Test).iter().take(n).map(|p| RasterImage::load_png(p).unwrap()).collect()
}

#[test]
fn stylize_is_deterministic_and_keeps_size() {
    let dir = tempfile::tempdir().unwrap();
    let ck = untrained_checkpoint(dir.path());
    let img = &test_images(1)[0];
    let one = stylize(&ck, img, Direction::AToB).unwrap();
    let two = stylize(&ck, img, Direction::AToB).unwrap();
    assert_eq!(one.encode_png().unwrap(), two.encode_png().unwrap());
    assert_eq!((one.width(), one.height()), (img.width(), img.height()));
    let back = stylize(&ck, img, Direction::BToA).unwrap();
    assert_ne!(back, one);
}

#[test]
fn stylize_rejects_a_corrupt_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let ck = untrained_checkpoint(dir.path());
    let mut bytes = std::fs::read(&ck).unwrap();
    let n = bytes.len();
    bytes[n / 2] ^= 0xFF;
    std::fs::write(&ck, bytes).unwrap();
    assert!(stylize(&ck, &test_images(1)[0], Direction::AToB).is_err());
}

#[test]
fn grid_shapes_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let ck = untrained_checkpoint(dir.path());
    let one = render_grid(&[("baseline".into(), ck.clone())], &test_images(1)).unwrap();
    let layout = GridLayout::new(&["source".into(), "baseline".into()], 1, 64).unwrap();
    assert_eq!((one.width(), one.height()), (layout.width(), layout.height()));
    let again = render_grid(&[("baseline".into(), ck.clone())], &test_images(1)).unwrap();
    assert_eq!(one.encode_png().unwrap(), again.encode_png().unwrap());

    let columns: Vec<(String, PathBuf)> =
        ["baseline", "2xCycleLoss", "2xIdentityLoss", "2xGenLoss"].iter().map(|l| (l.to_string(), ck.clone())).collect();
    let mut sources = test_images(4);
    sources.extend(test_images(4));
    sources.extend(test_images(2));
    let grid = render_grid(&columns, &sources).unwrap();
    let labels: Vec<String> = std::iter::once("source".to_string()).chain(columns.iter().map(|c| c.0.clone())).collect();
    let layout = GridLayout::new(&labels, 10, 64).unwrap();
    assert_eq!((layout.rows, layout.cols), (10, 5));
    assert_eq!((grid.width(), grid.height()), (layout.width(), layout.height()));
    // The source column holds the unmodified test image.
    let (x, y) = layout.cell_origin(3, 0);
    for j in 0..64 {
        for i in 0..64 {
            assert_eq!(grid.get(x + i, y + j), sources[3].get(i, j));
        }
    }
}

#[test]
fn grid_needs_runs_and_images() {
    let dir = tempfile::tempdir().unwrap();
    let ck = untrained_checkpoint(dir.path());
    assert!(render_grid(&[], &test_images(1)).is_err());
    assert!(render_grid(&[("x".into(), ck)], &[]).is_err());
    assert!(compose_grid(&[], &[]).is_err());
}
