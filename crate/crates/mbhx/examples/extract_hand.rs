//! The full extraction pipeline on one image: predict the alpha matte
//! and foreground, multiply them into the extracted hand, and recompose
//! onto a new background.
//!
//! Trains briefly on a tiny dataset first so the predictions are
//! meaningful, then writes PNGs next to the temp dataset.
//!
//! Run with: cargo run --release --example extract_hand

use mbhx::compositing::{extract_hand, recompose_onto, ImageBuffer};
use mbhx::io::write_image;
use mbhx::network::{forward, ModelConfig};
use mbhx::synth::{generate_dataset, load_dataset_split, BackgroundSource, Split};
use mbhx::train::{train, TrainConfig};

fn main() -> mbhx::Result<()> {
    let dir = std::env::temp_dir().join("mbhx_example_extract");
    let _ = std::fs::remove_dir_all(&dir);
    generate_dataset(5, 8, Split::Train, &dir, (64, 64), true, &BackgroundSource::Procedural)?;
    generate_dataset(5, 2, Split::Test, &dir, (64, 64), true, &BackgroundSource::Procedural)?;

    let model = ModelConfig {
        base_channels: 8,
        input_extent: (64, 64),
        ..ModelConfig::default()
    };
    let config = TrainConfig {
        epochs: 15,
        seed: 2,
        checkpoint_every: 15,
        ..TrainConfig::default()
    };
    println!("training a small model for {} epochs...", config.epochs);
    let outcome = train(&model, &config, &dir, None)?;

    // Predict on an unseen test image.
    let test = load_dataset_split(&dir, Split::Test)?;
    let (alpha_t, fg_t) = forward(&outcome.best_weights, &test[0].image)?;
    let alpha = ImageBuffer::from_tensor(&alpha_t)?;
    let foreground = ImageBuffer::from_tensor(&fg_t)?;
    let hand = extract_hand(&alpha, &foreground)?;

    // New background: a flat green screen.
    let (h, w) = alpha.extent();
    let mut green = vec![0.1; h * w * 3];
    green[h * w..2 * h * w].iter_mut().for_each(|v| *v = 0.8);
    let green = ImageBuffer::new(h, w, 3, green)?;
    let swapped = recompose_onto(&alpha, &foreground, &green)?;

    let out = dir.join("extracted");
    std::fs::create_dir_all(&out).map_err(|e| mbhx::Error::io(&out, e))?;
    write_image(&out.join("alpha.png"), &alpha)?;
    write_image(&out.join("foreground.png"), &foreground)?;
    write_image(&out.join("extracted.png"), &hand)?;
    write_image(&out.join("recomposed.png"), &swapped)?;
    println!("wrote alpha/foreground/extracted/recomposed PNGs under {}", out.display());

    let gt_alpha = ImageBuffer::from_tensor(&test[0].alpha)?;
    let sad: f64 = alpha
        .data()
        .iter()
        .zip(gt_alpha.data())
        .map(|(a, b)| (a - b).abs())
        .sum();
    println!("test-image alpha SAD after brief training: {sad:.1}");
    Ok(())
}
