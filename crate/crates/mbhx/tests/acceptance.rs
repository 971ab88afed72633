//! Acceptance suite: one test per criterion, each printing a PASS line.
//!
//! Runtime-bounded criteria assert their wall-clock budget too. Absolute
//! full-scale accuracy targets are documentation, not assertions here;
//! desk-scale runs cannot reach them (see README).

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use mbhx::compositing::{composite, extract_hand, extract_naive, extraction_residual, ImageBuffer};
use mbhx::gradcheck::{run_full_suite, END_TO_END_TOLERANCE, OP_TOLERANCE};
use mbhx::losses::{LossTerms, LossWeights};
use mbhx::network::{init_weights, parameter_count, ModelConfig, NetworkWeights};
use mbhx::Graph;
use mbhx::synth::{generate_dataset, make_sample, BackgroundSource, Pose, Split};
use mbhx::tensor::Tensor;
use mbhx::train::{train, MetricsReport, TrainConfig};

fn rand_buffer(rng: &mut ChaCha8Rng, h: usize, w: usize, c: usize) -> ImageBuffer {
    let data: Vec<f64> = (0..h * w * c).map(|_| rng.random_range(0.0..=1.0)).collect();
    ImageBuffer::new(h, w, c, data).unwrap()
}

/// Criterion 1: compositing identities at 1e-12 on 1000 randomized
/// buffers, under 5 seconds.
#[test]
fn criterion_1_compositing_identities() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xC0DE01);
    let (h, w) = (8, 8);
    for round in 0..1000 {
        let fg = rand_buffer(&mut rng, h, w, 3);
        let bg = rand_buffer(&mut rng, h, w, 3);
        let alpha = if round % 3 == 0 {
            // Mix in exactly-0/1 alphas so the residual's zero case is hit.
            let data: Vec<f64> = (0..h * w)
                .map(|_| match rng.random_range(0..4u32) {
                    0 => 0.0,
                    1 => 1.0,
                    _ => rng.random_range(0.0..=1.0),
                })
                .collect();
            ImageBuffer::new(h, w, 1, data).unwrap()
        } else {
            rand_buffer(&mut rng, h, w, 1)
        };

        // Endpoint identities.
        let zeros = ImageBuffer::filled(h, w, 1, 0.0).unwrap();
        let ones = ImageBuffer::filled(h, w, 1, 1.0).unwrap();
        assert_eq!(composite(&fg, &bg, &zeros).unwrap(), bg);
        assert_eq!(composite(&fg, &bg, &ones).unwrap(), fg);

        // Affinity in alpha.
        let alpha2 = rand_buffer(&mut rng, h, w, 1);
        let mid = ImageBuffer::new(
            h,
            w,
            1,
            alpha
                .data()
                .iter()
                .zip(alpha2.data())
                .map(|(a, b)| (a + b) / 2.0)
                .collect(),
        )
        .unwrap();
        let lhs = composite(&fg, &bg, &mid).unwrap();
        let i1 = composite(&fg, &bg, &alpha).unwrap();
        let i2 = composite(&fg, &bg, &alpha2).unwrap();
        for ((l, a), b) in lhs.data().iter().zip(i1.data()).zip(i2.data()) {
            assert!((l - (a + b) / 2.0).abs() <= 1e-12);
        }

        // Range closure without clamping.
        assert!(i1.data().iter().all(|v| (0.0..=1.0).contains(v)));

        // Naive-vs-true extraction residual identity.
        let image = composite(&fg, &bg, &alpha).unwrap();
        let naive = extract_naive(&alpha, &image).unwrap();
        let truth = extract_hand(&alpha, &fg).unwrap();
        let residual = extraction_residual(&alpha, &fg, &bg).unwrap();
        let plane = h * w;
        for c in 0..3 {
            for i in 0..plane {
                let diff = naive.data()[c * plane + i] - truth.data()[c * plane + i];
                assert!((diff - residual[c * plane + i]).abs() <= 1e-12);
                let a = alpha.data()[i];
                if a == 0.0 || a == 1.0 {
                    assert_eq!(residual[c * plane + i], 0.0);
                }
            }
        }
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 5.0, "took {elapsed:?}");
    println!("criterion 1 (compositing identities, 1000 buffers, 1e-12): PASS in {elapsed:?}");
}

/// Criterion 2: every op passes central finite differences at 1e-6 and
/// the end-to-end overall-loss gradient at 1e-4 on a 16x16 input, under
/// 2 minutes.
#[test]
fn criterion_2_gradient_correctness() {
    let start = Instant::now();
    assert_eq!(OP_TOLERANCE, 1e-6);
    assert_eq!(END_TO_END_TOLERANCE, 1e-4);
    let report = run_full_suite(42, None).unwrap();
    assert!(report.all_passed(), "\n{}", report.render());
    // The suite covers each op plus the composed network loss.
    assert!(report.checks.len() >= 18);
    assert!(report.checks.iter().any(|c| c.name.starts_with("end-to-end")));
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 120.0, "took {elapsed:?}");
    println!("criterion 2 (gradient checks, per-op 1e-6, end-to-end 1e-4): PASS in {elapsed:?}");
}

/// Criterion 3: 64x64 input yields encoder features at 32/16/8/4 px and
/// decoder restoration via x4, x2, x2.
#[test]
fn criterion_3_shape_schedule() {
    let weights = init_weights(&ModelConfig::default(), 1).unwrap();
    let graph = Graph::new();
    let bound = weights.bind(&graph, false);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let data: Vec<f64> = (0..3 * 64 * 64).map(|_| rng.random_range(0.0..1.0)).collect();
    let input = graph.constant(Tensor::new(&[1, 3, 64, 64], data).unwrap());
    let (alpha, fg, trace) = bound.forward_traced(&input).unwrap();
    assert_eq!(trace.encoder_features, vec![(32, 32), (16, 16), (8, 8), (4, 4)]);
    assert_eq!(trace.decoder_stages, vec![(16, 16), (32, 32), (64, 64)]);
    assert_eq!(alpha.shape(), vec![1, 1, 64, 64]);
    assert_eq!(fg.shape(), vec![1, 3, 64, 64]);
    println!("criterion 3 (shape schedule 32/16/8/4 and x4,x2,x2): PASS");
}

/// Criterion 4: unit component losses assemble to exactly 2.002 under
/// the published weights, and the perceptual terms vanish when PL is
/// off; regression at 1e-12.
#[test]
fn criterion_4_loss_assembly() {
    let weights = LossWeights::default();
    assert_eq!(weights.lambda_ab_alpha, 0.5);
    assert_eq!(weights.lambda_c_alpha, 0.5);
    assert_eq!(weights.lambda_p_alpha, 0.001);
    assert_eq!(weights.lambda_ab_fg, 1.0);
    assert_eq!(weights.lambda_p_fg, 0.001);

    let unit = LossTerms {
        l_ab_alpha: 1.0,
        l_c_alpha: 1.0,
        l_p_alpha: 1.0,
        l_ab_fg: 1.0,
        l_p_fg: 1.0,
    };
    let (overall, alpha, fg) = weights.combine(true, &unit);
    assert!((overall - 2.002).abs() <= 1e-12, "overall {overall}");
    assert!((alpha - 1.001).abs() <= 1e-12);
    assert!((fg - 1.001).abs() <= 1e-12);

    // PL off: the perceptual inputs can take any value without effect.
    let (base, _, _) = weights.combine(false, &unit);
    for p in [0.0, 0.5, 123.0] {
        let varied = LossTerms {
            l_p_alpha: p,
            l_p_fg: 2.0 * p,
            ..unit
        };
        let (v, _, _) = weights.combine(false, &varied);
        assert_eq!(v, base);
        assert!((v - 2.0).abs() <= 1e-12);
    }
    println!("criterion 4 (loss assembly 2.002, PL-off invariance, 1e-12): PASS");
}

/// Criterion 5: synthesized alpha matches a 16x supersampled brute-force
/// rasterization within 2e-2 per pixel, and the observed image
/// reconstructs from (F, B, alpha) to 1e-6 on 100 seeded samples, under
/// a minute.
#[test]
fn criterion_5_synthesis_fidelity() {
    let start = Instant::now();

    // Recomposition on 100 seeded samples.
    let mut samples = Vec::new();
    for seed in 500..600u64 {
        let s = make_sample(seed, (64, 64), &BackgroundSource::Procedural).unwrap();
        let rebuilt = composite(&s.foreground, &s.background, &s.alpha).unwrap();
        let max_err = s
            .image
            .data()
            .iter()
            .zip(rebuilt.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(max_err < 1e-6, "seed {seed}: recomposition error {max_err}");
        samples.push(s);
    }

    // Supersampling oracle on probe pixels of 6 of those samples:
    // regular 16x16 subpixel grid per subframe, averaged over subframes.
    let mut worst = 0.0f64;
    for s in samples.iter().take(6) {
        let sprite = &s.meta.sprite;
        let traj = &s.meta.trajectory;
        let poses: Vec<Pose> = (0..traj.subframes).map(|i| traj.pose(i)).collect();
        for y in (0..64usize).step_by(2) {
            for x in (0..64usize).step_by(2) {
                let mut sum = 0.0;
                for pose in &poses {
                    let mut hits = 0usize;
                    for sy in 0..16 {
                        for sx in 0..16 {
                            let p = (
                                x as f64 + (sx as f64 + 0.5) / 16.0,
                                y as f64 + (sy as f64 + 0.5) / 16.0,
                            );
                            if sprite.contains_image_point(pose, p) {
                                hits += 1;
                            }
                        }
                    }
                    sum += hits as f64 / 256.0;
                }
                let oracle = sum / poses.len() as f64;
                let diff = (s.alpha.get(y, x, 0) - oracle).abs();
                worst = worst.max(diff);
                assert!(diff < 2e-2, "seed {}: pixel ({y},{x}) off by {diff}", s.seed);
            }
        }
    }

    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 60.0, "took {elapsed:?}");
    println!(
        "criterion 5 (synthesis fidelity, oracle diff {worst:.4} < 2e-2, recomposition < 1e-6): PASS in {elapsed:?}"
    );
}

/// Criterion 6: the desk model overfits 4 samples in 200 epochs with the
/// published hyperparameters — final loss under 25% of epoch 1, training
/// loss non-increasing across >=90% of consecutive epochs, and
/// validation-on-train alpha SAD decreasing across epoch deciles — in
/// under 15 minutes.
#[test]
fn criterion_6_overfit_sanity() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    generate_dataset(
        60,
        4,
        Split::Train,
        dir.path(),
        (64, 64),
        true,
        &BackgroundSource::Procedural,
    )
    .unwrap();

    let model = ModelConfig {
        share_encoder: true,
        use_perceptual: true,
        base_channels: 16,
        input_extent: (64, 64),
    };
    let config = TrainConfig {
        learning_rate: 3.5e-3,
        momentum: 0.9,
        weight_decay: 4e-5,
        epochs: 200,
        batch_size: 4,
        seed: 6,
        checkpoint_every: 200,
    };
    let outcome = train(&model, &config, dir.path(), None).unwrap();

    let first = outcome.log.first().unwrap().overall;
    let last = outcome.log.last().unwrap().overall;
    assert!(
        last < 0.25 * first,
        "final L_o {last} not under 25% of epoch-1 {first}"
    );

    let non_increasing = outcome
        .log
        .windows(2)
        .filter(|p| p[1].overall <= p[0].overall)
        .count();
    let frac = non_increasing as f64 / (outcome.log.len() - 1) as f64;
    assert!(frac >= 0.9, "loss non-increasing in only {:.1}% of steps", frac * 100.0);

    let decile_means: Vec<f64> = outcome
        .log
        .chunks(20)
        .map(|c| c.iter().map(|r| r.val_alpha_sad).sum::<f64>() / c.len() as f64)
        .collect();
    assert_eq!(decile_means.len(), 10);
    for pair in decile_means.windows(2) {
        assert!(
            pair[1] < pair[0],
            "validation alpha SAD deciles not decreasing: {decile_means:?}"
        );
    }

    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 900.0, "took {elapsed:?}");
    println!(
        "criterion 6 (overfit: L_o {first:.4} -> {last:.4}, {:.0}% non-increasing, deciles decreasing): PASS in {elapsed:?}",
        frac * 100.0
    );
}

fn mbhx_bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mbhx"))
}

/// Criterion 7: `ablate` on the 256/64/64 desk dataset emits the 4-row
/// SE x PL report with finite non-negative metrics, and encoder sharing
/// is structurally real (no second encoder exists in shared models). No
/// metric ordering is asserted; full-scale reference numbers live in the
/// README only.
#[test]
fn criterion_7_ablation_harness() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    // Desk-scale default counts: 256 train, 64 val, 64 test.
    for split in ["train", "val", "test"] {
        let status = mbhx_bin()
            .args(["synth", "--seed", "70", "--split", split, "--extent", "64x64"])
            .arg("--out")
            .arg(&data)
            .status()
            .unwrap();
        assert!(status.success());
    }
    let manifest = mbhx::io::Manifest::load(&data.join("manifest.json")).unwrap();
    assert_eq!(manifest.split("train").unwrap().count, 256);
    assert_eq!(manifest.split("val").unwrap().count, 64);
    assert_eq!(manifest.split("test").unwrap().count, 64);

    let report_path = dir.path().join("report.json");
    let artifacts = dir.path().join("runs");
    let status = mbhx_bin()
        .args(["ablate", "--epochs", "1", "--seed", "7", "--base-channels", "16"])
        .arg("--data")
        .arg(&data)
        .arg("--out")
        .arg(&report_path)
        .arg("--artifacts")
        .arg(&artifacts)
        .status()
        .unwrap();
    assert!(status.success());

    let report = MetricsReport::from_json(&std::fs::read_to_string(&report_path).unwrap()).unwrap();
    assert_eq!(report.rows.len(), 4);
    let grid: Vec<(u8, bool, bool)> = report
        .rows
        .iter()
        .map(|r| (r.model_id, r.share_encoder, r.use_perceptual))
        .collect();
    assert_eq!(
        grid,
        vec![
            (1, false, false),
            (2, true, false),
            (3, false, true),
            (4, true, true)
        ]
    );
    for row in &report.rows {
        for v in [
            row.metrics.alpha_sad,
            row.metrics.alpha_mse,
            row.metrics.fg_sad,
            row.metrics.fg_mse,
        ] {
            assert!(v.is_finite() && v >= 0.0, "model {}: bad metric {v}", row.model_id);
        }
    }

    // Structural sharing: shared models have no second encoder; unshared
    // ones carry exactly one extra encoder's worth of parameters.
    let load = |id: u8| -> NetworkWeights {
        NetworkWeights::load(&artifacts.join(format!("model_{id}/final.ckpt")))
            .unwrap()
            .0
    };
    let (m1, m2, m3, m4) = (load(1), load(2), load(3), load(4));
    assert!(!m1.encoders_shared() && m2.encoders_shared());
    assert!(!m3.encoders_shared() && m4.encoders_shared());
    assert_eq!(parameter_count(&m1), parameter_count(&m3));
    assert_eq!(parameter_count(&m2), parameter_count(&m4));
    let encoder_params = parameter_count(&m1) - parameter_count(&m2);
    assert!(encoder_params > 0);
    assert!(m2.params().iter().all(|(n, _)| !n.starts_with("encoder_fg.")));
    assert!(m1.params().iter().any(|(n, _)| n.starts_with("encoder_fg.")));

    println!("criterion 7 (ablation harness, 4-row SE x PL grid, structural sharing): PASS");
}

fn snapshot(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut files = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                files.push((
                    path.strip_prefix(root).unwrap().to_path_buf(),
                    std::fs::read(&path).unwrap(),
                ));
            }
        }
    }
    files.sort();
    files
}

/// Criterion 8: repeated seeded runs produce byte-identical datasets,
/// checkpoints, and reports; checkpoints round-trip bit-exactly and CRC
/// verification catches corruption.
#[test]
fn criterion_8_determinism_and_persistence() {
    let root = tempfile::tempdir().unwrap();

    // Byte-identical datasets.
    let (d1, d2) = (root.path().join("d1"), root.path().join("d2"));
    for d in [&d1, &d2] {
        for (split, count) in [(Split::Train, 6), (Split::Val, 2), (Split::Test, 2)] {
            generate_dataset(80, count, split, d, (32, 32), true, &BackgroundSource::Procedural)
                .unwrap();
        }
    }
    let (s1, s2) = (snapshot(&d1), snapshot(&d2));
    assert_eq!(s1.len(), s2.len());
    for ((p1, b1), (p2, b2)) in s1.iter().zip(&s2) {
        assert_eq!(p1, p2);
        assert_eq!(b1, b2, "dataset file {} differs", p1.display());
    }

    // Byte-identical checkpoints, logs, and reports from repeated runs.
    let template = ModelConfig {
        base_channels: 4,
        input_extent: (32, 32),
        ..ModelConfig::default()
    };
    let config = TrainConfig {
        epochs: 2,
        batch_size: 4,
        seed: 81,
        checkpoint_every: 2,
        ..TrainConfig::default()
    };
    let (r1, r2) = (root.path().join("r1"), root.path().join("r2"));
    let mut reports = Vec::new();
    for r in [&r1, &r2] {
        let report = mbhx::train::run_ablation(&template, &config, &d1, Some(r)).unwrap();
        reports.push(report.to_json().unwrap());
    }
    assert_eq!(reports[0], reports[1], "ablation reports differ between runs");
    let (a1, a2) = (snapshot(&r1), snapshot(&r2));
    assert_eq!(a1.len(), a2.len());
    for ((p1, b1), (p2, b2)) in a1.iter().zip(&a2) {
        assert_eq!(p1, p2);
        assert_eq!(b1, b2, "artifact {} differs between runs", p1.display());
    }

    // Checkpoint round trip is bit-exact and CRC-guarded.
    let ckpt = root.path().join("w.ckpt");
    let weights = init_weights(&template, 5).unwrap();
    weights.save(&ckpt, &serde_json::Value::Null, 3).unwrap();
    let (loaded, _, _) = NetworkWeights::load(&ckpt).unwrap();
    for ((na, ta), (nb, tb)) in weights.params().iter().zip(loaded.params()) {
        assert_eq!(na, nb);
        assert!(ta
            .data()
            .iter()
            .zip(tb.data())
            .all(|(x, y)| x.to_bits() == y.to_bits()));
    }
    let resaved = root.path().join("w2.ckpt");
    loaded.save(&resaved, &serde_json::Value::Null, 3).unwrap();
    assert_eq!(std::fs::read(&ckpt).unwrap(), std::fs::read(&resaved).unwrap());

    let mut bytes = std::fs::read(&ckpt).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x01;
    std::fs::write(&ckpt, &bytes).unwrap();
    assert!(matches!(
        NetworkWeights::load(&ckpt),
        Err(mbhx::Error::Corrupted(_))
    ));

    println!("criterion 8 (determinism and persistence, CRC verification): PASS");
}
