//! The compositing model and why extraction uses alpha times foreground.
//!
//! Builds a synthetic motion-blurred hand sample, re-derives the observed
//! image from its layers, and compares true extraction (alpha * F)
//! against the naive alpha * I, whose difference is alpha(1-alpha)(B-F).
//!
//! Run with: cargo run --example compositing_basics

use mbhx::compositing::{composite, extract_hand, extract_naive, extraction_residual, recompose_onto, ImageBuffer};
use mbhx::synth::{make_sample, BackgroundSource};

fn main() -> mbhx::Result<()> {
    let sample = make_sample(2024, (64, 64), &BackgroundSource::Procedural)?;

    // I = alpha*F + (1-alpha)*B reproduces the observed image exactly.
    let rebuilt = composite(&sample.foreground, &sample.background, &sample.alpha)?;
    let max_err = sample
        .image
        .data()
        .iter()
        .zip(rebuilt.data())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)        ;
    println!("recomposition max error: {max_err:.2e}");

    // True extraction vs the naive product with the observed image.
    let hand = extract_hand(&sample.alpha, &sample.foreground)?;
    let naive = extract_naive(&sample.alpha, &sample.image)?;
    let residual = extraction_residual(&sample.alpha, &sample.foreground, &sample.background)?;
    let max_leak = residual.iter().fold(0.0f64, |m, r| m.max(r.abs()));
    let max_formula_err = naive
        .data()
        .iter()
        .zip(hand.data())
        .zip(&residual)
        .map(|((n, h), r)| ((n - h) - r).abs())
        .fold(0.0, f64::max);
    println!("worst background leak in naive extraction: {max_leak:.4}");
    println!("naive - true vs alpha(1-alpha)(B-F): max deviation {max_formula_err:.2e}");

    // Swap in a new background.
    let checker = {
        let (h, w) = sample.image.extent();
        let mut data = vec![0.0; h * w * 3];
        for c in 0..3 {
            for y in 0..h {
                for x in 0..w {
                    let v = if (x / 8 + y / 8) % 2 == 0 { 0.85 } else { 0.15 };
                    data[(c * h + y) * w + x] = v;
                }
            }
        }
        ImageBuffer::new(h, w, 3, data)?
    };
    let swapped = recompose_onto(&sample.alpha, &sample.foreground, &checker)?;
    println!(
        "recomposed onto checkerboard: {}x{} image, mean value {:.3}",
        swapped.height(),
        swapped.width(),
        swapped.data().iter().sum::<f64>() / swapped.data().len() as f64
    );
    Ok(())
}
