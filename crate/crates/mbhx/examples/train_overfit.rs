//! Overfit a small model on four samples and watch the loss fall.
//!
//! Uses the full training recipe (momentum SGD, lr 3.5e-3, momentum 0.9,
//! weight decay 4e-5) at desk scale: base_channels 8, 64x64 inputs,
//! 30 epochs. Prints the per-epoch overall loss and validation alpha SAD.
//!
//! Run with: cargo run --release --example train_overfit

use mbhx::network::ModelConfig;
use mbhx::synth::{generate_dataset, BackgroundSource, Split};
use mbhx::train::{train, TrainConfig};

fn main() -> mbhx::Result<()> {
    let dir = std::env::temp_dir().join("mbhx_example_overfit");
    let _ = std::fs::remove_dir_all(&dir);
    generate_dataset(11, 4, Split::Train, &dir, (64, 64), true, &BackgroundSource::Procedural)?;

    let model = ModelConfig {
        share_encoder: true,
        use_perceptual: true,
        base_channels: 8,
        input_extent: (64, 64),
    };
    let config = TrainConfig {
        epochs: 30,
        batch_size: 4,
        seed: 1,
        checkpoint_every: 30,
        ..TrainConfig::default()
    };

    let outcome = train(&model, &config, &dir, None)?;
    println!("epoch  L_o        val alpha SAD");
    for record in &outcome.log {
        if record.epoch == 1 || record.epoch % 5 == 0 {
            println!(
                "{:>5}  {:<9.5}  {:.1}",
                record.epoch, record.overall, record.val_alpha_sad
            );
        }
    }
    let first = outcome.log.first().unwrap().overall;
    let last = outcome.log.last().unwrap().overall;
    println!("loss ratio after {} epochs: {:.3}", config.epochs, last / first);
    Ok(())
}
