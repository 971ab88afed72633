//! The dual-prediction network: one separable-convolution encoder
//! (optionally shared), an alpha decoder with a 1-channel head, and a
//! foreground decoder with a 3-channel head.
//!
//! Resolution schedule for an `H x W` input (H, W divisible by 16):
//!
//! - a full-resolution entry convolution produces the first skip source;
//! - four 0.5x downsampling steps yield features at 1/2, 1/4, 1/8, 1/16;
//! - each decoder upsamples 4x, 2x, 2x (1/16 → 1/4 → 1/2 → 1/1),
//!   concatenating the encoder activation at the matching resolution
//!   before each pair of separable convolutions;
//! - a final same-resolution head convolution plus sigmoid keeps both
//!   outputs strictly inside (0, 1).
//!
//! With `share_encoder = false` the foreground branch owns an independent
//! encoder copy; it is initialized from the same seed stream as the main
//! encoder, so the two configurations start from identical functions and
//! diverge only through training.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, GradNode, Padding};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// The SE x PL ablation switchboard plus sizing.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// SE axis: both branches read one encoder.
    pub share_encoder: bool,
    /// PL axis: include the perceptual loss terms during training.
    pub use_perceptual: bool,
    pub base_channels: usize,
    /// (height, width); both divisible by 16 so the four 0.5x steps are
    /// exact.
    pub input_extent: (usize, usize),
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            share_encoder: true,
            use_perceptual: true,
            base_channels: 16,
            input_extent: (64, 64),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.input_extent;
        if h % 16 != 0 || w % 16 != 0 || h == 0 || w == 0 {
            return Err(Error::Config(format!(
                "input extent {h}x{w} must be divisible by 16"
            )));
        }
        if self.base_channels == 0 {
            return Err(Error::Config("base_channels must be positive".into()));
        }
        Ok(())
    }

    /// The four ablation models: 1 = no sharing, no perceptual loss;
    /// 2 = shared encoder only; 3 = perceptual loss only; 4 = both.
    pub fn for_model(model_id: u8) -> Result<ModelConfig> {
        let (share_encoder, use_perceptual) = match model_id {
            1 => (false, false),
            2 => (true, false),
            3 => (false, true),
            4 => (true, true),
            other => {
                return Err(Error::Config(format!(
                    "model id must be 1..=4, got {other}"
                )))
            }
        };
        Ok(ModelConfig {
            share_encoder,
            use_perceptual,
            ..ModelConfig::default()
        })
    }

    pub fn model_id(&self) -> u8 {
        match (self.share_encoder, self.use_perceptual) {
            (false, false) => 1,
            (true, false) => 2,
            (false, true) => 3,
            (true, true) => 4,
        }
    }
}

/// All learnable parameters, as an ordered name → tensor store. Ordering
/// is the construction order and fixes the checkpoint layout.
#[derive(Clone, Debug)]
pub struct NetworkWeights {
    config: ModelConfig,
    params: Vec<(String, Tensor)>,
}

/// Resolutions observed during one forward pass, for shape-schedule
/// assertions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ForwardTrace {
    /// Extents of the four downsampled encoder features (1/2 .. 1/16).
    pub encoder_features: Vec<(usize, usize)>,
    /// Extents after each decoder upsampling stage (1/4, 1/2, 1/1).
    pub decoder_stages: Vec<(usize, usize)>,
}

struct LayerSpec {
    name: String,
    /// (shape, fan_in) per tensor of this layer.
    tensors: Vec<(String, Vec<usize>, usize)>,
}

fn conv_spec(name: &str, in_ch: usize, out_ch: usize, k: usize) -> LayerSpec {
    LayerSpec {
        name: name.to_string(),
        tensors: vec![
            ("kernel".into(), vec![out_ch, in_ch, k, k], in_ch * k * k),
            ("bias".into(), vec![out_ch], 0),
        ],
    }
}

fn sep_spec(name: &str, in_ch: usize, out_ch: usize) -> LayerSpec {
    LayerSpec {
        name: name.to_string(),
        tensors: vec![
            ("dw".into(), vec![in_ch, 3, 3], 9),
            ("pw".into(), vec![out_ch, in_ch, 1, 1], in_ch),
            ("bias".into(), vec![out_ch], 0),
        ],
    }
}

fn encoder_specs(prefix: &str, c: usize) -> Vec<LayerSpec> {
    let mut specs = vec![
        conv_spec(&format!("{prefix}.entry"), 3, c, 3),
        conv_spec(&format!("{prefix}.down1"), c, c, 3),
    ];
    let widths = [(c, 2 * c), (2 * c, 4 * c), (4 * c, 8 * c)];
    for (i, (cin, cout)) in widths.iter().enumerate() {
        let block = format!("{prefix}.block{}", i + 1);
        specs.push(sep_spec(&format!("{block}.sep1"), *cin, *cout));
        specs.push(sep_spec(&format!("{block}.sep2"), *cout, *cout));
        specs.push(sep_spec(&format!("{block}.down"), *cout, *cout));
    }
    specs
}

fn decoder_specs(prefix: &str, c: usize, out_ch: usize) -> Vec<LayerSpec> {
    // Stage inputs are upsampled features concatenated with the skip at
    // the target resolution.
    let stages = [(8 * c + 4 * c, 4 * c), (4 * c + 2 * c, 2 * c), (2 * c + c, c)];
    let mut specs = Vec::new();
    for (i, (cin, cout)) in stages.iter().enumerate() {
        let stage = format!("{prefix}.stage{}", i + 1);
        specs.push(sep_spec(&format!("{stage}.sep1"), *cin, *cout));
        specs.push(sep_spec(&format!("{stage}.sep2"), *cout, *cout));
    }
    specs.push(conv_spec(&format!("{prefix}.head"), c, out_ch, 3));
    specs
}

fn all_specs(config: &ModelConfig) -> Vec<LayerSpec> {
    let c = config.base_channels;
    let mut specs = encoder_specs("encoder", c);
    if !config.share_encoder {
        specs.extend(encoder_specs("encoder_fg", c));
    }
    specs.extend(decoder_specs("decoder_alpha", c, 1));
    specs.extend(decoder_specs("decoder_fg", c, 3));
    specs
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Deterministic He-style initialization: kernels draw from
/// `Normal(0, sqrt(2 / fan_in))`, biases start at zero. Each tensor gets
/// its own stream keyed by `(seed, init label)`; the label strips the
/// `encoder_fg` storage prefix back to `encoder`, so an unshared encoder
/// copy starts bit-identical to the shared one.
pub fn init_weights(config: &ModelConfig, seed: u64) -> Result<NetworkWeights> {
    config.validate()?;
    let mut params = Vec::new();
    for spec in all_specs(config) {
        for (suffix, shape, fan_in) in &spec.tensors {
            let name = format!("{}.{}", spec.name, suffix);
            let tensor = if *fan_in == 0 {
                Tensor::zeros(shape)
            } else {
                let label = name.replacen("encoder_fg.", "encoder.", 1);
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ fnv1a(label.as_bytes()));
                let std = (2.0 / *fan_in as f64).sqrt();
                let normal = Normal::new(0.0, std).expect("std is positive and finite");
                let data: Vec<f64> = (0..shape.iter().product())
                    .map(|_| normal.sample(&mut rng))
                    .collect();
                Tensor::from_op(shape.clone(), data)
            };
            params.push((name, tensor));
        }
    }
    Ok(NetworkWeights {
        config: *config,
        params,
    })
}

/// Total learnable scalar count.
pub fn parameter_count(weights: &NetworkWeights) -> usize {
    weights.params.iter().map(|(_, t)| t.numel()).sum()
}

impl NetworkWeights {
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &[(String, Tensor)] {
        &self.params
    }

    pub fn param_names(&self) -> Vec<String> {
        self.params.iter().map(|(n, _)| n.clone()).collect()
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.params.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn set_param(&mut self, name: &str, tensor: Tensor) -> Result<()> {
        let slot = self
            .params
            .iter_mut()
            .find(|(n, _)| n == name)
            .ok_or_else(|| Error::Contract(format!("unknown parameter {name}")))?;
        if slot.1.shape() != tensor.shape() {
            return Err(Error::Contract(format!(
                "parameter {name} shape {:?} cannot take tensor of shape {:?}",
                slot.1.shape(),
                tensor.shape()
            )));
        }
        slot.1 = tensor;
        Ok(())
    }

    /// Replace every parameter in order (names must match).
    pub fn set_all(&mut self, params: Vec<(String, Tensor)>) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::Contract(format!(
                "expected {} parameters, got {}",
                self.params.len(),
                params.len()
            )));
        }
        for ((name, slot), (new_name, tensor)) in self.params.iter_mut().zip(params) {
            if *name != new_name {
                return Err(Error::Contract(format!(
                    "parameter order mismatch: expected {name}, got {new_name}"
                )));
            }
            if slot.shape() != tensor.shape() {
                return Err(Error::Contract(format!(
                    "parameter {name} shape {:?} cannot take tensor of shape {:?}",
                    slot.shape(),
                    tensor.shape()
                )));
            }
            *slot = tensor;
        }
        Ok(())
    }

    /// Whether the foreground branch reads the same encoder tensors as the
    /// alpha branch (no `encoder_fg` storage exists at all).
    pub fn encoders_shared(&self) -> bool {
        !self.params.iter().any(|(n, _)| n.starts_with("encoder_fg."))
    }

    /// Build one checkpoint from these weights.
    pub fn save(&self, path: &std::path::Path, train_config: &serde_json::Value, epoch: u32) -> Result<()> {
        crate::io::save_checkpoint(
            path,
            &self.params,
            &serde_json::to_value(self.config)?,
            train_config,
            epoch,
        )
    }

    /// Restore weights (and their config) from a checkpoint.
    pub fn load(path: &std::path::Path) -> Result<(NetworkWeights, serde_json::Value, u32)> {
        let loaded = crate::io::load_checkpoint(path)?;
        let config: ModelConfig = serde_json::from_value(loaded.model_config)?;
        let mut weights = init_weights(&config, 0)?;
        weights.set_all(loaded.params)?;
        Ok((weights, loaded.train_config, loaded.epoch))
    }

    /// Insert every parameter into `graph` and return a runnable view.
    pub fn bind(&self, graph: &Graph, trainable: bool) -> BoundNetwork {
        let nodes = self
            .params
            .iter()
            .map(|(name, tensor)| {
                let node = if trainable {
                    graph.parameter(tensor.clone())
                } else {
                    graph.constant(tensor.clone())
                };
                (name.clone(), node)
            })
            .collect();
        BoundNetwork {
            config: self.config,
            nodes,
        }
    }
}

/// Weights bound into a graph for one forward/backward pass.
pub struct BoundNetwork {
    config: ModelConfig,
    nodes: Vec<(String, GradNode)>,
}

impl BoundNetwork {
    fn node(&self, name: &str) -> Result<&GradNode> {
        self.nodes
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| Error::Contract(format!("unknown parameter {name}")))
    }

    pub fn param_grad(&self, name: &str) -> Option<Tensor> {
        self.nodes
            .iter()
            .find(|(n, _)| n == name)
            .and_then(|(_, node)| node.grad())
    }

    /// Gradients in parameter order; zeros for parameters backward never
    /// reached.
    pub fn grads(&self) -> Vec<Tensor> {
        self.nodes
            .iter()
            .map(|(_, node)| {
                node.grad()
                    .unwrap_or_else(|| Tensor::zeros(&node.shape()))
            })
            .collect()
    }

    fn conv(&self, input: &GradNode, layer: &str, stride: usize) -> Result<GradNode> {
        let out = input.conv2d(
            self.node(&format!("{layer}.kernel"))?,
            self.node(&format!("{layer}.bias"))?,
            stride,
            Padding::Same,
        )?;
        Ok(out.relu())
    }

    fn sep(&self, input: &GradNode, layer: &str, stride: usize) -> Result<GradNode> {
        let out = input.separable_conv2d(
            self.node(&format!("{layer}.dw"))?,
            self.node(&format!("{layer}.pw"))?,
            self.node(&format!("{layer}.bias"))?,
            stride,
        )?;
        Ok(out.relu())
    }

    /// Run one encoder; returns `[skip_1x, skip_2x, skip_4x, bottleneck]`
    /// (full, 1/2, 1/4, 1/16 resolutions) plus the downsampled feature
    /// extents for tracing.
    fn encode(&self, prefix: &str, image: &GradNode) -> Result<([GradNode; 4], Vec<(usize, usize)>)> {
        let entry = self.conv(image, &format!("{prefix}.entry"), 1)?;
        let d1 = self.conv(&entry, &format!("{prefix}.down1"), 2)?;
        let mut trace = vec![spatial(&d1)];

        let b1a = self.sep(&d1, &format!("{prefix}.block1.sep1"), 1)?;
        let skip_2x = self.sep(&b1a, &format!("{prefix}.block1.sep2"), 1)?;
        let d2 = self.sep(&skip_2x, &format!("{prefix}.block1.down"), 2)?;
        trace.push(spatial(&d2));

        let b2a = self.sep(&d2, &format!("{prefix}.block2.sep1"), 1)?;
        let skip_4x = self.sep(&b2a, &format!("{prefix}.block2.sep2"), 1)?;
        let d3 = self.sep(&skip_4x, &format!("{prefix}.block2.down"), 2)?;
        trace.push(spatial(&d3));

        let b3a = self.sep(&d3, &format!("{prefix}.block3.sep1"), 1)?;
        let b3b = self.sep(&b3a, &format!("{prefix}.block3.sep2"), 1)?;
        let bottleneck = self.sep(&b3b, &format!("{prefix}.block3.down"), 2)?;
        trace.push(spatial(&bottleneck));

        Ok(([entry, skip_2x, skip_4x, bottleneck], trace))
    }

    /// Run one decoder over `[skip_1x, skip_2x, skip_4x, bottleneck]`.
    fn decode(
        &self,
        prefix: &str,
        features: &[GradNode; 4],
        trace: &mut Vec<(usize, usize)>,
    ) -> Result<GradNode> {
        let [skip_1x, skip_2x, skip_4x, bottleneck] = features;

        let up1 = bottleneck.upsample_bilinear(4)?;
        trace.push(spatial(&up1));
        let s1 = up1.concat_channels(skip_4x)?;
        let s1 = self.sep(&s1, &format!("{prefix}.stage1.sep1"), 1)?;
        let s1 = self.sep(&s1, &format!("{prefix}.stage1.sep2"), 1)?;

        let up2 = s1.upsample_bilinear(2)?;
        trace.push(spatial(&up2));
        let s2 = up2.concat_channels(skip_2x)?;
        let s2 = self.sep(&s2, &format!("{prefix}.stage2.sep1"), 1)?;
        let s2 = self.sep(&s2, &format!("{prefix}.stage2.sep2"), 1)?;

        let up3 = s2.upsample_bilinear(2)?;
        trace.push(spatial(&up3));
        let s3 = up3.concat_channels(skip_1x)?;
        let s3 = self.sep(&s3, &format!("{prefix}.stage3.sep1"), 1)?;
        let s3 = self.sep(&s3, &format!("{prefix}.stage3.sep2"), 1)?;

        let head = s3.conv2d(
            self.node(&format!("{prefix}.head.kernel"))?,
            self.node(&format!("{prefix}.head.bias"))?,
            1,
            Padding::Same,
        )?;
        Ok(head.sigmoid())
    }

    pub fn forward(&self, image: &GradNode) -> Result<(GradNode, GradNode)> {
        let (alpha, fg, _) = self.forward_traced(image)?;
        Ok((alpha, fg))
    }

    /// Forward pass that also reports the resolution schedule it realized.
    pub fn forward_traced(&self, image: &GradNode) -> Result<(GradNode, GradNode, ForwardTrace)> {
        let shape = image.shape();
        if shape.len() != 4 || shape[1] != 3 {
            return Err(Error::Contract(format!(
                "expected [b, 3, h, w] input, got {shape:?}"
            )));
        }
        if shape[2] % 16 != 0 || shape[3] % 16 != 0 {
            return Err(Error::Config(format!(
                "input extent {}x{} must be divisible by 16",
                shape[2], shape[3]
            )));
        }

        let (features, encoder_trace) = self.encode("encoder", image)?;
        let mut alpha_trace = Vec::new();
        let alpha = self.decode("decoder_alpha", &features, &mut alpha_trace)?;

        let fg_features = if self.config.share_encoder {
            features
        } else {
            self.encode("encoder_fg", image)?.0
        };
        let mut fg_trace = Vec::new();
        let fg = self.decode("decoder_fg", &fg_features, &mut fg_trace)?;
        debug_assert_eq!(alpha_trace, fg_trace);

        Ok((
            alpha,
            fg,
            ForwardTrace {
                encoder_features: encoder_trace,
                decoder_stages: alpha_trace,
            },
        ))
    }
}

fn spatial(node: &GradNode) -> (usize, usize) {
    let s = node.shape();
    (s[2], s[3])
}

/// Inference entry point: predicted (alpha, foreground) for a
/// `[b, 3, h, w]` image tensor, no gradients retained.
pub fn forward(weights: &NetworkWeights, image: &Tensor) -> Result<(Tensor, Tensor)> {
    let graph = Graph::new();
    let bound = weights.bind(&graph, false);
    let input = graph.constant(image.clone());
    let (alpha, fg) = bound.forward(&input)?;
    Ok((alpha.value(), fg.value()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> ModelConfig {
        ModelConfig {
            share_encoder: true,
            use_perceptual: true,
            base_channels: 4,
            input_extent: (32, 32),
        }
    }

    fn rand_image(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f64> = (0..shape.iter().product())
            .map(|_| rng.random_range(0.0..1.0))
            .collect();
        Tensor::from_op(shape.to_vec(), data)
    }

    #[test]
    fn output_shapes_match_input_extent() {
        let config = ModelConfig {
            base_channels: 8,
            ..ModelConfig::default()
        };
        let weights = init_weights(&config, 3).unwrap();
        let image = rand_image(&[1, 3, 64, 64], 5);
        let (alpha, fg) = forward(&weights, &image).unwrap();
        assert_eq!(alpha.shape(), &[1, 1, 64, 64]);
        assert_eq!(fg.shape(), &[1, 3, 64, 64]);
    }

    #[test]
    fn outputs_strictly_inside_unit_interval() {
        let weights = init_weights(&small_config(), 9).unwrap();
        let image = rand_image(&[2, 3, 32, 32], 10);
        let (alpha, fg) = forward(&weights, &image).unwrap();
        for &v in alpha.data().iter().chain(fg.data()) {
            assert!(v > 0.0 && v < 1.0);
        }
    }

    #[test]
    fn resolution_schedule_is_exact() {
        let weights = init_weights(&ModelConfig::default(), 1).unwrap();
        let g = Graph::new();
        let bound = weights.bind(&g, false);
        let input = g.constant(rand_image(&[1, 3, 64, 64], 2));
        let (_, _, trace) = bound.forward_traced(&input).unwrap();
        assert_eq!(
            trace.encoder_features,
            vec![(32, 32), (16, 16), (8, 8), (4, 4)]
        );
        assert_eq!(trace.decoder_stages, vec![(16, 16), (32, 32), (64, 64)]);
    }

    #[test]
    fn indivisible_extent_is_config_error() {
        let weights = init_weights(&small_config(), 1).unwrap();
        let image = rand_image(&[1, 3, 40, 40], 3);
        assert!(matches!(forward(&weights, &image), Err(Error::Config(_))));
        // 48 = 3 * 16 is fine.
        let image = rand_image(&[1, 3, 48, 48], 3);
        assert!(forward(&weights, &image).is_ok());
    }

    #[test]
    fn same_seed_gives_bit_identical_weights() {
        let a = init_weights(&small_config(), 42).unwrap();
        let b = init_weights(&small_config(), 42).unwrap();
        for ((na, ta), (nb, tb)) in a.params().iter().zip(b.params()) {
            assert_eq!(na, nb);
            assert!(ta
                .data()
                .iter()
                .zip(tb.data())
                .all(|(x, y)| x.to_bits() == y.to_bits()));
        }
        let c = init_weights(&small_config(), 43).unwrap();
        assert_ne!(
            a.param("encoder.entry.kernel").unwrap().data(),
            c.param("encoder.entry.kernel").unwrap().data()
        );
    }

    #[test]
    fn biases_are_exactly_zero() {
        let weights = init_weights(&ModelConfig::default(), 11).unwrap();
        for (name, tensor) in weights.params() {
            if name.ends_with(".bias") {
                assert!(tensor.data().iter().all(|&v| v == 0.0), "{name} not zero");
            }
        }
    }

    /// Statistical check of He scaling: normalizing every kernel element
    /// by sqrt(fan_in / 2) should leave unit variance.
    #[test]
    fn kernel_variance_matches_fan_in_scaling() {
        let weights = init_weights(&ModelConfig::default(), 17).unwrap();
        let mut normalized = Vec::new();
        for spec in all_specs(weights.config()) {
            for (suffix, _, fan_in) in &spec.tensors {
                if *fan_in == 0 {
                    continue;
                }
                let tensor = weights.param(&format!("{}.{}", spec.name, suffix)).unwrap();
                let scale = (*fan_in as f64 / 2.0).sqrt();
                normalized.extend(tensor.data().iter().map(|&v| v * scale));
            }
        }
        assert!(normalized.len() >= 10_000, "only {} elements", normalized.len());
        let mean: f64 = normalized.iter().sum::<f64>() / normalized.len() as f64;
        let var: f64 =
            normalized.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / normalized.len() as f64;
        assert!((var - 1.0).abs() < 0.2, "normalized variance {var}");
    }

    /// Closed-form layer-size arithmetic for base channel widths 8 and 16.
    #[test]
    fn parameter_count_matches_hand_formula() {
        // conv(ci→co, 3x3): 9·co·ci + co; sep(ci→co): 9·ci + co·ci + co.
        let conv = |ci: usize, co: usize| 9 * co * ci + co;
        let sep = |ci: usize, co: usize| 9 * ci + co * ci + co;
        let encoder = |c: usize| {
            let block = |ci: usize, co: usize| sep(ci, co) + 2 * sep(co, co);
            conv(3, c) + conv(c, c) + block(c, 2 * c) + block(2 * c, 4 * c) + block(4 * c, 8 * c)
        };
        let decoder = |c: usize, out: usize| {
            let stage = |ci: usize, co: usize| sep(ci, co) + sep(co, co);
            stage(12 * c, 4 * c) + stage(6 * c, 2 * c) + stage(3 * c, c) + conv(c, out)
        };

        for c in [8usize, 16] {
            for share in [true, false] {
                let config = ModelConfig {
                    share_encoder: share,
                    use_perceptual: false,
                    base_channels: c,
                    input_extent: (64, 64),
                };
                let weights = init_weights(&config, 0).unwrap();
                let expected = encoder(c) * if share { 1 } else { 2 } + decoder(c, 1) + decoder(c, 3);
                assert_eq!(parameter_count(&weights), expected, "c={c} share={share}");
            }
        }

        // Doubling base channels roughly quadruples the count.
        let count8 = parameter_count(&init_weights(&ModelConfig {
            base_channels: 8,
            ..ModelConfig::default()
        }, 0).unwrap());
        let count16 = parameter_count(&init_weights(&ModelConfig {
            base_channels: 16,
            ..ModelConfig::default()
        }, 0).unwrap());
        let ratio = count16 as f64 / count8 as f64;
        assert!((3.0..4.5).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn unshared_encoder_has_strictly_more_parameters() {
        let shared = init_weights(&ModelConfig::for_model(2).unwrap(), 0).unwrap();
        let separate = init_weights(&ModelConfig::for_model(1).unwrap(), 0).unwrap();
        assert!(parameter_count(&separate) > parameter_count(&shared));
        assert!(shared.encoders_shared());
        assert!(!separate.encoders_shared());
    }

    /// Toggling encoder sharing with the same seed must not change either
    /// output at initialization: the second encoder starts as an exact
    /// copy of the first.
    #[test]
    fn sharing_toggle_is_invisible_at_initialization() {
        let mut shared_cfg = small_config();
        shared_cfg.share_encoder = true;
        let mut split_cfg = small_config();
        split_cfg.share_encoder = false;
        let shared = init_weights(&shared_cfg, 21).unwrap();
        let split = init_weights(&split_cfg, 21).unwrap();
        let image = rand_image(&[1, 3, 32, 32], 22);
        let (a1, f1) = forward(&shared, &image).unwrap();
        let (a2, f2) = forward(&split, &image).unwrap();
        assert!(a1.data().iter().zip(a2.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
        assert!(f1.data().iter().zip(f2.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn checkpoint_round_trip_preserves_weights_and_count() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.ckpt");
        let weights = init_weights(&small_config(), 31).unwrap();
        weights.save(&path, &serde_json::Value::Null, 12).unwrap();
        let (loaded, _, epoch) = NetworkWeights::load(&path).unwrap();
        assert_eq!(epoch, 12);
        assert_eq!(parameter_count(&loaded), parameter_count(&weights));
        assert_eq!(loaded.config(), weights.config());
        for ((na, ta), (nb, tb)) in weights.params().iter().zip(loaded.params()) {
            assert_eq!(na, nb);
            assert!(ta.data().iter().zip(tb.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let weights = init_weights(&small_config(), 5).unwrap();
        let image = rand_image(&[1, 3, 32, 32], 6);
        let (a1, f1) = forward(&weights, &image).unwrap();
        let (a2, f2) = forward(&weights, &image).unwrap();
        assert!(a1.data().iter().zip(a2.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
        assert!(f1.data().iter().zip(f2.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}
