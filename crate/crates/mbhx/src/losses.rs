//! The training objective.
//!
//! Overall loss = alpha loss + foreground loss, with
//!
//! - alpha loss = 0.5 * absolute + 0.5 * compositional + 0.001 * perceptual,
//! - foreground loss = 1.0 * absolute + 0.001 * perceptual.
//!
//! Absolute terms are mean-L1 distances, the compositional term is the
//! mean-L1 distance between images composited with the predicted vs.
//! ground-truth matte (over the ground-truth foreground/background pair),
//! and the perceptual terms compare multi-level features from a frozen
//! 5-block convolutional extractor with mean-squared distance per level,
//! summed over levels. Image-domain reductions are means over every
//! element, so the weights are extent-independent.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, GradNode, Padding};
use crate::error::{Error, Result};
use crate::network::ModelConfig;
use crate::tensor::Tensor;

/// The five loss weights; defaults are the training recipe's values.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_ab_alpha: f64,
    pub lambda_c_alpha: f64,
    pub lambda_p_alpha: f64,
    pub lambda_ab_fg: f64,
    pub lambda_p_fg: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_ab_alpha: 0.5,
            lambda_c_alpha: 0.5,
            lambda_p_alpha: 0.001,
            lambda_ab_fg: 1.0,
            lambda_p_fg: 0.001,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.lambda_ab_alpha,
            self.lambda_c_alpha,
            self.lambda_p_alpha,
            self.lambda_ab_fg,
            self.lambda_p_fg,
        ];
        if all.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(Error::Config(format!("loss weights must be non-negative, got {self:?}")));
        }
        Ok(())
    }

    /// Weighted assembly of raw term values:
    /// `(overall, alpha total, foreground total)`. With `use_perceptual`
    /// off the perceptual terms are omitted entirely.
    pub fn combine(&self, use_perceptual: bool, terms: &LossTerms) -> (f64, f64, f64) {
        let mut alpha = self.lambda_ab_alpha * terms.l_ab_alpha + self.lambda_c_alpha * terms.l_c_alpha;
        let mut fg = self.lambda_ab_fg * terms.l_ab_fg;
        if use_perceptual {
            alpha += self.lambda_p_alpha * terms.l_p_alpha;
            fg += self.lambda_p_fg * terms.l_p_fg;
        }
        (alpha + fg, alpha, fg)
    }
}

/// Raw (unweighted) values of the five terms. Perceptual entries are 0
/// when the configuration omits them.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub l_ab_alpha: f64,
    pub l_c_alpha: f64,
    pub l_p_alpha: f64,
    pub l_ab_fg: f64,
    pub l_p_fg: f64,
}

/// One training step's differentiable losses plus logged values.
pub struct LossBreakdown {
    /// The backward root: overall loss.
    pub overall: GradNode,
    pub overall_value: f64,
    pub alpha_value: f64,
    pub fg_value: f64,
    pub terms: LossTerms,
}

const EXTRACTOR_CHANNELS: [usize; 5] = [8, 16, 32, 32, 32];
const EXTRACTOR_KIND: &str = "feature_extractor";

/// Frozen 5-block convolutional feature extractor.
///
/// Each block is [3x3 conv, relu, 3x3 conv, relu, 2x max-pool] with
/// widths (8, 16, 32, 32, 32), producing feature maps at 1/2 .. 1/32
/// resolution. Weights are deterministic from a seed or loadable from a
/// checkpoint file; they never train, but gradients flow through to the
/// extractor's input.
#[derive(Clone, Debug)]
pub struct FeatureExtractor {
    params: Vec<(String, Tensor)>,
}

impl FeatureExtractor {
    fn layer_shapes() -> Vec<(String, Vec<usize>, usize)> {
        let mut shapes = Vec::new();
        let mut in_ch = 3;
        for (b, &width) in EXTRACTOR_CHANNELS.iter().enumerate() {
            for conv in 1..=2 {
                let ci = if conv == 1 { in_ch } else { width };
                let prefix = format!("fx.block{}.conv{}", b + 1, conv);
                shapes.push((format!("{prefix}.kernel"), vec![width, ci, 3, 3], ci * 9));
                shapes.push((format!("{prefix}.bias"), vec![width], 0));
            }
            in_ch = width;
        }
        shapes
    }

    pub fn from_seed(seed: u64) -> FeatureExtractor {
        let params = Self::layer_shapes()
            .into_iter()
            .map(|(name, shape, fan_in)| {
                let tensor = if fan_in == 0 {
                    Tensor::zeros(&shape)
                } else {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ fnv1a(name.as_bytes()));
                    let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("valid std");
                    let data = (0..shape.iter().product())
                        .map(|_| normal.sample(&mut rng))
                        .collect();
                    Tensor::from_op(shape, data)
                };
                (name, tensor)
            })
            .collect();
        FeatureExtractor { params }
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        crate::io::save_checkpoint(
            path,
            &self.params,
            &serde_json::json!({ "kind": EXTRACTOR_KIND, "channels": EXTRACTOR_CHANNELS }),
            &serde_json::Value::Null,
            0,
        )
    }

    pub fn load(path: &std::path::Path) -> Result<FeatureExtractor> {
        let loaded = crate::io::load_checkpoint(path)?;
        if loaded.model_config.get("kind").and_then(|k| k.as_str()) != Some(EXTRACTOR_KIND) {
            return Err(Error::Format(format!(
                "{} is not a feature extractor checkpoint",
                path.display()
            )));
        }
        let expected = Self::layer_shapes();
        if loaded.params.len() != expected.len() {
            return Err(Error::Format(format!(
                "feature extractor expects {} tensors, file has {}",
                expected.len(),
                loaded.params.len()
            )));
        }
        for ((name, tensor), (expected_name, shape, _)) in loaded.params.iter().zip(&expected) {
            if name != expected_name || tensor.shape() != shape.as_slice() {
                return Err(Error::Format(format!(
                    "feature extractor tensor {name} {:?} does not match expected {expected_name} {shape:?}",
                    tensor.shape()
                )));
            }
        }
        Ok(FeatureExtractor {
            params: loaded.params,
        })
    }

    pub fn params(&self) -> &[(String, Tensor)] {
        &self.params
    }

    /// The 5 feature maps of a `[b, 3, h, w]` input, coarsest last.
    /// Weights enter the graph as constants: frozen, but transparent to
    /// gradients heading for `input`.
    pub fn features(&self, graph: &Graph, input: &GradNode) -> Result<Vec<GradNode>> {
        let shape = input.shape();
        if shape.len() != 4 || shape[1] != 3 {
            return Err(Error::Contract(format!(
                "feature extractor expects [b, 3, h, w], got {shape:?}"
            )));
        }
        let node = |name: &str| -> GradNode {
            let tensor = self
                .params
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, t)| t.clone())
                .expect("extractor layer names are fixed");
            graph.constant(tensor)
        };
        let mut levels = Vec::with_capacity(5);
        let mut x = input.clone();
        for b in 1..=5 {
            for conv in 1..=2 {
                let prefix = format!("fx.block{b}.conv{conv}");
                x = x
                    .conv2d(
                        &node(&format!("{prefix}.kernel")),
                        &node(&format!("{prefix}.bias")),
                        1,
                        Padding::Same,
                    )?
                    .relu();
            }
            x = x.max_pool2()?;
            levels.push(x.clone());
        }
        Ok(levels)
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Replicate a 1-channel node to 3 channels; pass 3-channel nodes through.
fn to_three_channels(node: &GradNode) -> Result<GradNode> {
    match node.shape()[1] {
        3 => Ok(node.clone()),
        1 => node.concat_channels(node)?.concat_channels(node),
        c => Err(Error::Contract(format!(
            "expected 1 or 3 channels, got {c}"
        ))),
    }
}

/// In-graph compositing: `alpha * fg + (1 - alpha) * bg` with a 1-channel
/// alpha broadcast over 3-channel layers.
pub fn composite_node(graph: &Graph, alpha: &GradNode, fg: &GradNode, bg: &GradNode) -> Result<GradNode> {
    let alpha3 = to_three_channels(alpha)?;
    let ones = graph.constant(Tensor::full(&alpha3.shape(), 1.0));
    let fg_part = alpha3.mul(fg)?;
    let bg_part = ones.sub(&alpha3)?.mul(bg)?;
    fg_part.add(&bg_part)
}

/// Mean-L1 distance between predicted and ground-truth alpha mattes.
pub fn alpha_absolute_loss(pred_alpha: &GradNode, gt_alpha: &GradNode) -> Result<GradNode> {
    pred_alpha.mean_abs(gt_alpha)
}

/// Mean-L1 distance between images composited with the predicted vs.
/// ground-truth matte over the same ground-truth foreground/background.
pub fn alpha_compositional_loss(
    graph: &Graph,
    pred_alpha: &GradNode,
    gt_alpha: &GradNode,
    gt_fg: &GradNode,
    gt_bg: &GradNode,
) -> Result<GradNode> {
    let pred_image = composite_node(graph, pred_alpha, gt_fg, gt_bg)?;
    let gt_image = composite_node(graph, gt_alpha, gt_fg, gt_bg)?;
    pred_image.mean_abs(&gt_image)
}

/// Mean-L1 distance between predicted and ground-truth foregrounds.
pub fn foreground_absolute_loss(pred_fg: &GradNode, gt_fg: &GradNode) -> Result<GradNode> {
    pred_fg.mean_abs(gt_fg)
}

/// Sum over the extractor's 5 levels of the mean squared feature
/// difference. Single-channel inputs are replicated to 3 channels first.
/// `gt` is expected to be a constant; gradients then reach `pred` only.
pub fn perceptual_loss(
    graph: &Graph,
    extractor: &FeatureExtractor,
    pred: &GradNode,
    gt: &GradNode,
) -> Result<GradNode> {
    if pred.shape() != gt.shape() {
        return Err(Error::Contract(format!(
            "perceptual loss shape mismatch: {:?} vs {:?}",
            pred.shape(),
            gt.shape()
        )));
    }
    let pred_feats = extractor.features(graph, &to_three_channels(pred)?)?;
    let gt_feats = extractor.features(graph, &to_three_channels(gt)?)?;
    let mut total: Option<GradNode> = None;
    for (p, t) in pred_feats.iter().zip(&gt_feats) {
        let level = p.mean_sq(t)?;
        total = Some(match total {
            Some(acc) => acc.add(&level)?,
            None => level,
        });
    }
    Ok(total.expect("extractor always yields 5 levels"))
}

/// Assemble the full overall loss for one batch. Ground-truth nodes must
/// be constants. With `config.use_perceptual` off, the perceptual terms
/// are never evaluated.
#[allow(clippy::too_many_arguments)]
pub fn total_loss(
    graph: &Graph,
    weights: &LossWeights,
    config: &ModelConfig,
    extractor: &FeatureExtractor,
    pred_alpha: &GradNode,
    pred_fg: &GradNode,
    gt_alpha: &GradNode,
    gt_fg: &GradNode,
    gt_bg: &GradNode,
) -> Result<LossBreakdown> {
    weights.validate()?;
    let l_ab_alpha = alpha_absolute_loss(pred_alpha, gt_alpha)?;
    let l_c_alpha = alpha_compositional_loss(graph, pred_alpha, gt_alpha, gt_fg, gt_bg)?;
    let l_ab_fg = foreground_absolute_loss(pred_fg, gt_fg)?;

    let mut alpha_total = l_ab_alpha
        .scalar_mul(weights.lambda_ab_alpha)
        .add(&l_c_alpha.scalar_mul(weights.lambda_c_alpha))?;
    let mut fg_total = l_ab_fg.scalar_mul(weights.lambda_ab_fg);

    let mut terms = LossTerms {
        l_ab_alpha: l_ab_alpha.value().scalar()?,
        l_c_alpha: l_c_alpha.value().scalar()?,
        l_ab_fg: l_ab_fg.value().scalar()?,
        ..LossTerms::default()
    };

    if config.use_perceptual {
        let l_p_alpha = perceptual_loss(graph, extractor, pred_alpha, gt_alpha)?;
        let l_p_fg = perceptual_loss(graph, extractor, pred_fg, gt_fg)?;
        terms.l_p_alpha = l_p_alpha.value().scalar()?;
        terms.l_p_fg = l_p_fg.value().scalar()?;
        alpha_total = alpha_total.add(&l_p_alpha.scalar_mul(weights.lambda_p_alpha))?;
        fg_total = fg_total.add(&l_p_fg.scalar_mul(weights.lambda_p_fg))?;
    }

    let overall = alpha_total.add(&fg_total)?;
    Ok(LossBreakdown {
        overall_value: overall.value().scalar()?,
        alpha_value: alpha_total.value().scalar()?,
        fg_value: fg_total.value().scalar()?,
        overall,
        terms,
    })
}
