//! The four-model ablation: encoder sharing (SE) x perceptual loss (PL).
//!
//! Model 1 = no/no, Model 2 = yes/no, Model 3 = no/yes, Model 4 =
//! yes/yes. All four train from identical seeds on the same data, then
//! evaluate SAD and MSE on the test split. Shrunk to a toy size here so
//! it finishes in about a minute; the `mbhx ablate` command runs the
//! full desk-scale version.
//!
//! Run with: cargo run --release --example ablation_grid

use mbhx::network::ModelConfig;
use mbhx::synth::{generate_dataset, BackgroundSource, Split};
use mbhx::train::{run_ablation, TrainConfig};

fn main() -> mbhx::Result<()> {
    let dir = std::env::temp_dir().join("mbhx_example_ablation");
    let _ = std::fs::remove_dir_all(&dir);
    for (split, count) in [(Split::Train, 8), (Split::Val, 2), (Split::Test, 4)] {
        generate_dataset(31, count, split, &dir, (32, 32), true, &BackgroundSource::Procedural)?;
    }

    let template = ModelConfig {
        base_channels: 4,
        input_extent: (32, 32),
        ..ModelConfig::default()
    };
    let config = TrainConfig {
        epochs: 4,
        batch_size: 4,
        seed: 9,
        checkpoint_every: 4,
        ..TrainConfig::default()
    };
    let report = run_ablation(&template, &config, &dir, None)?;
    print!("{}", report.render_text());
    println!("{}", report.to_json()?);
    Ok(())
}
