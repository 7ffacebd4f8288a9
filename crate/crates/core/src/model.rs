//! Depth network: feature extractor, depth regressor and domain discriminator.
//!
//! The extractor is a 7×7 stem, `n_downsample` stride-2 stages and a stack of
//! residual blocks. The regressor mirrors the downsampling with nearest
//! upsampling + 3×3 convs and ends in a 7×7 conv with a sigmoid. The
//! discriminator is a three-layer MLP over average-pooled bottleneck features.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::layers::{global_avg_pool, global_avg_pool_backward};
use crate::nn::param::join;
use crate::nn::{
    Conv2d, InstanceNorm, LeakyRelu, Linear, Padding, Param, Parameters, Relu, Sigmoid, Tensor, Upsample2x,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub in_channels: usize,
    pub base_width: usize,
    pub n_downsample: usize,
    pub n_res_blocks: usize,
    pub disc_hidden: usize,
    pub image_size: usize,
    pub max_depth_mm: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            in_channels: 3,
            base_width: 64,
            n_downsample: 2,
            n_res_blocks: 9,
            disc_hidden: 1024,
            image_size: 256,
            max_depth_mm: 100.0,
        }
    }
}

impl ModelConfig {
    /// Reduced model for commodity CPUs.
    pub fn desk() -> Self {
        ModelConfig { base_width: 16, n_res_blocks: 4, disc_hidden: 128, image_size: 64, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let widths = [self.in_channels, self.base_width, self.disc_hidden, self.image_size];
        if widths.contains(&0) {
            return Err(Error::ConfigInvalid("model widths and image size must be >= 1".into()));
        }
        let factor = 1usize << self.n_downsample;
        if !self.image_size.is_multiple_of(factor) {
            return Err(Error::ConfigInvalid(format!(
                "image_size {} is not divisible by 2^{}",
                self.image_size, self.n_downsample
            )));
        }
        // Reflection padding of the 7×7 stem needs at least 4 pixels.
        if self.image_size / factor < 2 || self.image_size < 4 {
            return Err(Error::ConfigInvalid(format!("image_size {} too small", self.image_size)));
        }
        if !(self.max_depth_mm > 0.0 && self.max_depth_mm.is_finite()) {
            return Err(Error::ConfigInvalid("max_depth_mm must be positive".into()));
        }
        Ok(())
    }

    pub fn bottleneck_channels(&self) -> usize {
        self.base_width << self.n_downsample
    }

    pub fn bottleneck_size(&self) -> usize {
        self.image_size >> self.n_downsample
    }
}

/// Conv → instance norm → ReLU.
#[derive(Debug, Clone)]
struct ConvBlock {
    conv: Conv2d,
    norm: InstanceNorm,
    act: Relu,
}

impl ConvBlock {
    fn new(conv: Conv2d) -> Self {
        ConvBlock { conv, norm: InstanceNorm::default(), act: Relu::default() }
    }

    fn forward(&mut self, x: &Tensor) -> Tensor {
        let y = self.conv.forward(x);
        let y = self.norm.forward(&y);
        self.act.forward(&y)
    }

    fn backward(&mut self, dy: &Tensor) -> Tensor {
        let d = self.act.backward(dy);
        let d = self.norm.backward(&d);
        self.conv.backward(&d)
    }
}

impl Parameters for ConvBlock {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.conv.visit(&join(prefix, "conv"), f);
    }
}

/// Two 3×3 conv + instance norm layers with an additive skip.
#[derive(Debug, Clone)]
struct ResBlock {
    first: ConvBlock,
    conv: Conv2d,
    norm: InstanceNorm,
}

impl ResBlock {
    fn new(width: usize, rng: &mut ChaCha8Rng) -> Self {
        ResBlock {
            first: ConvBlock::new(Conv2d::new(width, width, 3, 1, 1, Padding::Reflect, rng)),
            conv: Conv2d::new(width, width, 3, 1, 1, Padding::Reflect, rng),
            norm: InstanceNorm::default(),
        }
    }

    fn forward(&mut self, x: &Tensor) -> Tensor {
        let y = self.first.forward(x);
        let y = self.conv.forward(&y);
        let mut y = self.norm.forward(&y);
        y.add_assign(x);
        y
    }

    fn backward(&mut self, dy: &Tensor) -> Tensor {
        let d = self.norm.backward(dy);
        let d = self.conv.backward(&d);
        let mut d = self.first.backward(&d);
        d.add_assign(dy);
        d
    }
}

impl Parameters for ResBlock {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.first.visit(&join(prefix, "conv1"), f);
        self.conv.visit(&join(prefix, "conv2"), f);
    }
}

#[derive(Debug, Clone)]
pub struct FeatureExtractor {
    stem: ConvBlock,
    down: Vec<ConvBlock>,
    res: Vec<ResBlock>,
}

impl FeatureExtractor {
    fn new(cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Self {
        let stem = ConvBlock::new(Conv2d::new(cfg.in_channels, cfg.base_width, 7, 1, 3, Padding::Reflect, rng));
        let down = (0..cfg.n_downsample)
            .map(|i| {
                let c = cfg.base_width << i;
                ConvBlock::new(Conv2d::new(c, 2 * c, 3, 2, 1, Padding::Zero, rng))
            })
            .collect();
        let width = cfg.bottleneck_channels();
        let res = (0..cfg.n_res_blocks).map(|_| ResBlock::new(width, rng)).collect();
        FeatureExtractor { stem, down, res }
    }

    fn forward(&mut self, x: &Tensor) -> Tensor {
        let mut y = self.stem.forward(x);
        for block in &mut self.down {
            y = block.forward(&y);
        }
        for block in &mut self.res {
            y = block.forward(&y);
        }
        y
    }

    fn backward(&mut self, dy: &Tensor) -> Tensor {
        let mut d = dy.clone();
        for block in self.res.iter_mut().rev() {
            d = block.backward(&d);
        }
        for block in self.down.iter_mut().rev() {
            d = block.backward(&d);
        }
        self.stem.backward(&d)
    }
}

impl Parameters for FeatureExtractor {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.stem.visit(&join(prefix, "stem"), f);
        for (i, b) in self.down.iter_mut().enumerate() {
            b.visit(&join(prefix, &format!("down{i}")), f);
        }
        for (i, b) in self.res.iter_mut().enumerate() {
            b.visit(&join(prefix, &format!("res{i}")), f);
        }
    }
}

#[derive(Debug, Clone)]
pub struct DepthRegressor {
    up: Vec<(Upsample2x, ConvBlock)>,
    head: Conv2d,
    out: Sigmoid,
}

impl DepthRegressor {
    fn new(cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Self {
        let up = (0..cfg.n_downsample)
            .map(|i| {
                let c = cfg.bottleneck_channels() >> i;
                (Upsample2x::default(), ConvBlock::new(Conv2d::new(c, c / 2, 3, 1, 1, Padding::Reflect, rng)))
            })
            .collect();
        DepthRegressor {
            up,
            head: Conv2d::new(cfg.base_width, 1, 7, 1, 3, Padding::Reflect, rng),
            out: Sigmoid::default(),
        }
    }

    fn forward(&mut self, x: &Tensor) -> Tensor {
        let mut y = x.clone();
        for (up, block) in &mut self.up {
            y = up.forward(&y);
            y = block.forward(&y);
        }
        let y = self.head.forward(&y);
        self.out.forward(&y)
    }

    fn backward(&mut self, dy: &Tensor) -> Tensor {
        let d = self.out.backward(dy);
        let mut d = self.head.backward(&d);
        for (up, block) in self.up.iter_mut().rev() {
            d = block.backward(&d);
            d = up.backward(&d);
        }
        d
    }
}

impl Parameters for DepthRegressor {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        for (i, (_, b)) in self.up.iter_mut().enumerate() {
            b.visit(&join(prefix, &format!("up{i}")), f);
        }
        self.head.visit(&join(prefix, "head"), f);
    }
}

#[derive(Debug, Clone)]
pub struct Discriminator {
    fc1: Linear,
    act1: LeakyRelu,
    fc2: Linear,
    act2: LeakyRelu,
    fc3: Linear,
    out: Sigmoid,
}

impl Discriminator {
    pub const LEAK: f32 = 0.2;

    fn new(cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Self {
        let mut fc3 = Linear::new(cfg.disc_hidden, 1, rng);
        fc3.bias.value.iter_mut().for_each(|b| *b = 0.0);
        Discriminator {
            fc1: Linear::new(cfg.bottleneck_channels(), cfg.disc_hidden, rng),
            act1: LeakyRelu::new(Self::LEAK),
            fc2: Linear::new(cfg.disc_hidden, cfg.disc_hidden, rng),
            act2: LeakyRelu::new(Self::LEAK),
            fc3,
            out: Sigmoid::default(),
        }
    }

    /// Zeroes the final affine layer, making every output exactly 0.5.
    pub fn zero_final_layer(&mut self) {
        self.fc3.weight.value.iter_mut().for_each(|w| *w = 0.0);
        self.fc3.bias.value.iter_mut().for_each(|w| *w = 0.0);
    }

    fn forward(&mut self, x: &Tensor) -> Tensor {
        let y = self.fc1.forward(x);
        let y = self.act1.forward(&y);
        let y = self.fc2.forward(&y);
        let y = self.act2.forward(&y);
        let y = self.fc3.forward(&y);
        self.out.forward(&y)
    }

    fn backward(&mut self, dy: &Tensor) -> Tensor {
        let d = self.out.backward(dy);
        let d = self.fc3.backward(&d);
        let d = self.act2.backward(&d);
        let d = self.fc2.backward(&d);
        let d = self.act1.backward(&d);
        self.fc1.backward(&d)
    }
}

impl Parameters for Discriminator {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.fc1.visit(&join(prefix, "fc1"), f);
        self.fc2.visit(&join(prefix, "fc2"), f);
        self.fc3.visit(&join(prefix, "fc3"), f);
    }
}

/// The full three-component network.
#[derive(Debug, Clone)]
pub struct DepthNet {
    config: ModelConfig,
    pub features: FeatureExtractor,
    pub regressor: DepthRegressor,
    pub discriminator: Discriminator,
    bottleneck_shape: [usize; 4],
}

impl DepthNet {
    /// Builds a network with weights drawn from `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let features = FeatureExtractor::new(&config, &mut rng);
        let regressor = DepthRegressor::new(&config, &mut rng);
        let discriminator = Discriminator::new(&config, &mut rng);
        Ok(DepthNet { config, features, regressor, discriminator, bottleneck_shape: [0; 4] })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Bottleneck features for a batch of images normalized to [−1, 1].
    pub fn forward_features(&mut self, images: &Tensor) -> Result<Tensor> {
        let s = self.config.image_size;
        let [_, c, h, w] = images.shape();
        if c != self.config.in_channels || h != s || w != s || images.batch() == 0 {
            return Err(Error::ShapeMismatch(format!(
                "expected (n>0, {}, {s}, {s}) images, got {:?}",
                self.config.in_channels,
                images.shape()
            )));
        }
        let f = self.features.forward(images);
        self.bottleneck_shape = f.shape();
        Ok(f)
    }

    /// Normalized depth in [0, 1] at the input resolution.
    pub fn forward_depth(&mut self, features: &Tensor) -> Tensor {
        self.regressor.forward(features)
    }

    /// Domain probabilities (`(n, 1, 1, 1)`, source = 1) for pooled features.
    pub fn discriminate(&mut self, pooled: &Tensor) -> Result<Tensor> {
        if pooled.item_len() != self.config.bottleneck_channels() {
            return Err(Error::ShapeMismatch(format!(
                "discriminator expects {} features, got {}",
                self.config.bottleneck_channels(),
                pooled.item_len()
            )));
        }
        Ok(self.discriminator.forward(pooled))
    }

    /// Images to normalized depth.
    pub fn predict(&mut self, images: &Tensor) -> Result<Tensor> {
        let f = self.forward_features(images)?;
        Ok(self.forward_depth(&f))
    }

    /// Gradient of the depth output back to the bottleneck.
    pub fn backward_depth(&mut self, d_depth: &Tensor) -> Tensor {
        self.regressor.backward(d_depth)
    }

    /// Gradient of the discriminator output back to its pooled input.
    pub fn backward_discriminator(&mut self, d_prob: &Tensor) -> Tensor {
        self.discriminator.backward(d_prob)
    }

    /// Gradient of pooled features back to the bottleneck map.
    pub fn backward_pool(&self, d_pooled: &Tensor) -> Tensor {
        global_avg_pool_backward(d_pooled, self.bottleneck_shape)
    }

    /// Backpropagates a bottleneck gradient through the extractor.
    pub fn backward_features(&mut self, d_features: &Tensor) {
        self.features.backward(d_features);
    }
}

/// Spatial average per channel: `(n, c, h, w) -> (n, c, 1, 1)`.
pub fn pool_bottleneck(features: &Tensor) -> Tensor {
    global_avg_pool(features)
}

impl Parameters for DepthNet {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.features.visit(&join(prefix, "features"), f);
        self.regressor.visit(&join(prefix, "regressor"), f);
        self.discriminator.visit(&join(prefix, "discriminator"), f);
    }
}

/// Maps RGB values in [0,1] to the network's [−1,1] input range.
pub fn normalize_rgb(v: f32) -> f32 {
    v * 2.0 - 1.0
}
