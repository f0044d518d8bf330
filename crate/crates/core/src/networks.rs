//! The four trainable networks: encoder, decoder, discriminator and
//! relational learner.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{ConvGeometry, Layer, Matrix, Network, Real};

pub const LEAKY_SLOPE: f64 = 0.2;

/// Architecture of all four networks.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchConfig {
    pub latent_dim: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    /// Output channels of each encoder convolution; the decoder mirrors them.
    pub conv_channels: Vec<usize>,
    pub kernel: usize,
    pub stride: usize,
    pub mlp_width: usize,
    /// Number of linear layers in the discriminator and relational MLPs.
    pub mlp_depth: usize,
    /// Number of input codes the relational learner consumes.
    pub relation_arity: usize,
    pub relation_code_dim: usize,
}

impl ArchConfig {
    /// Defaults for a given image shape and latent size: four stride-2
    /// convolutions with 32/64/128/256 channels, and 3-layer, 1024-wide MLPs.
    pub fn new(latent_dim: usize, height: usize, width: usize, channels: usize) -> Self {
        ArchConfig {
            latent_dim,
            height,
            width,
            channels,
            conv_channels: vec![32, 64, 128, 256],
            kernel: 4,
            stride: 2,
            mlp_width: 1024,
            mlp_depth: 3,
            relation_arity: 1,
            relation_code_dim: latent_dim,
        }
    }

    /// Sets the relational input layout for `relation_count` relations of
    /// at most `arity` arguments. The relation code is zero-padded to
    /// `max(relation_count, latent_dim)`.
    pub fn with_relations(mut self, arity: usize, relation_count: usize) -> Self {
        self.relation_arity = arity;
        self.relation_code_dim = relation_count.max(self.latent_dim);
        self
    }

    pub fn image_len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn padding(&self) -> usize {
        self.kernel.saturating_sub(self.stride) / 2
    }

    pub fn relational_input_dim(&self) -> usize {
        self.relation_arity * self.latent_dim + self.relation_code_dim
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.latent_dim == 0 {
            return bad("latent_dim must be at least 1");
        }
        if self.height == 0 || self.width == 0 || self.channels == 0 {
            return bad("image dimensions must be positive");
        }
        if self.mlp_width == 0 || self.mlp_depth < 2 {
            return bad("MLPs need width ≥ 1 and at least 2 linear layers");
        }
        if self.relation_arity == 0 || self.relation_code_dim == 0 {
            return bad("relation arity and code size must be positive");
        }
        if !self.conv_channels.is_empty() {
            if self.kernel == 0 || self.stride == 0 || self.kernel < self.stride {
                return bad("convolution kernel must be at least the stride");
            }
            if !(self.kernel - self.stride).is_multiple_of(2) {
                return bad("kernel − stride must be even for symmetric padding");
            }
            let div = self.stride.pow(self.conv_channels.len() as u32);
            if !self.height.is_multiple_of(div) || !self.width.is_multiple_of(div) {
                return bad("image size must be divisible by stride^layers");
            }
            if self.conv_channels.contains(&0) {
                return bad("conv channels must be positive");
            }
        }
        Ok(())
    }

    fn conv_geometries(&self) -> Vec<ConvGeometry> {
        let mut out = Vec::new();
        let (mut h, mut w, mut c) = (self.height, self.width, self.channels);
        for &oc in &self.conv_channels {
            let g = ConvGeometry {
                image_channels: c,
                grid_channels: oc,
                kernel: self.kernel,
                stride: self.stride,
                padding: self.padding(),
                image_h: h,
                image_w: w,
            };
            h = g.grid_h();
            w = g.grid_w();
            c = oc;
            out.push(g);
        }
        out
    }

    fn bottleneck_len(&self) -> usize {
        match self.conv_geometries().last() {
            Some(g) => g.grid_channels * g.grid_h() * g.grid_w(),
            None => self.image_len(),
        }
    }

    fn encoder_layers(&self) -> Vec<Layer> {
        let mut layers = Vec::new();
        for g in self.conv_geometries() {
            layers.push(Layer::Conv2d(g));
            layers.push(Layer::LeakyRelu { slope: LEAKY_SLOPE });
        }
        layers.push(Layer::Linear {
            inputs: self.bottleneck_len(),
            outputs: self.latent_dim,
        });
        layers
    }

    fn decoder_layers(&self) -> Vec<Layer> {
        let geoms = self.conv_geometries();
        let mut layers = vec![Layer::Linear {
            inputs: self.latent_dim,
            outputs: self.bottleneck_len(),
        }];
        if !geoms.is_empty() {
            layers.push(Layer::LeakyRelu { slope: LEAKY_SLOPE });
        }
        for (i, g) in geoms.iter().enumerate().rev() {
            layers.push(Layer::ConvTranspose2d(*g));
            if i > 0 {
                layers.push(Layer::LeakyRelu { slope: LEAKY_SLOPE });
            }
        }
        layers.push(Layer::Sigmoid);
        layers
    }

    fn mlp_layers(&self, inputs: usize, outputs: usize) -> Vec<Layer> {
        let mut layers = Vec::new();
        let mut width = inputs;
        for _ in 0..self.mlp_depth - 1 {
            layers.push(Layer::Linear {
                inputs: width,
                outputs: self.mlp_width,
            });
            layers.push(Layer::Tanh);
            width = self.mlp_width;
        }
        layers.push(Layer::Linear { inputs: width, outputs });
        layers
    }

    fn discriminator_layers(&self) -> Vec<Layer> {
        let mut layers = self.mlp_layers(self.latent_dim, 1);
        layers.push(Layer::Sigmoid);
        layers
    }

    fn relational_layers(&self) -> Vec<Layer> {
        self.mlp_layers(self.relational_input_dim(), self.latent_dim)
    }
}

/// Parameters of all four networks.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkParams<T> {
    pub arch: ArchConfig,
    pub encoder: Network<T>,
    pub decoder: Network<T>,
    pub discriminator: Network<T>,
    pub relational: Network<T>,
}

impl<T: Real> NetworkParams<T> {
    /// Deterministic fan-in scaled initialization.
    pub fn init(arch: &ArchConfig, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(NetworkParams {
            arch: arch.clone(),
            encoder: Network::new("encoder", arch.encoder_layers(), &mut rng),
            decoder: Network::new("decoder", arch.decoder_layers(), &mut rng),
            discriminator: Network::new("discriminator", arch.discriminator_layers(), &mut rng),
            relational: Network::new("relational", arch.relational_layers(), &mut rng),
        })
    }

    /// All-zero parameters with the architecture's shapes.
    pub fn zeroed(arch: &ArchConfig) -> Result<Self> {
        arch.validate()?;
        Ok(NetworkParams {
            arch: arch.clone(),
            encoder: Network::zeroed("encoder", arch.encoder_layers()),
            decoder: Network::zeroed("decoder", arch.decoder_layers()),
            discriminator: Network::zeroed("discriminator", arch.discriminator_layers()),
            relational: Network::zeroed("relational", arch.relational_layers()),
        })
    }

    pub fn networks(&self) -> [&Network<T>; 4] {
        [&self.encoder, &self.decoder, &self.discriminator, &self.relational]
    }

    pub fn networks_mut(&mut self) -> [&mut Network<T>; 4] {
        [
            &mut self.encoder,
            &mut self.decoder,
            &mut self.discriminator,
            &mut self.relational,
        ]
    }

    pub fn all_finite(&self) -> bool {
        self.networks()
            .iter()
            .all(|n| n.params.iter().all(|p| p.data.iter().all(|v| v.is_finite())))
    }

    /// Images are rows in channel-major `C×H×W` order.
    pub fn encode(&self, images: &Matrix<T>) -> Result<Matrix<T>> {
        check_width("image", images, self.arch.image_len())?;
        Ok(self.encoder.forward(images))
    }

    /// Returns images in `(0, 1)`, channel-major.
    pub fn decode(&self, codes: &Matrix<T>) -> Result<Matrix<T>> {
        check_width("code", codes, self.arch.latent_dim)?;
        Ok(self.decoder.forward(codes))
    }

    /// Probability that each code came from the encoder rather than the prior.
    pub fn discriminate(&self, codes: &Matrix<T>) -> Result<Vec<T>> {
        check_width("code", codes, self.arch.latent_dim)?;
        Ok(self.discriminator.forward(codes).into_data())
    }

    /// Applies the relational learner to one tuple of input codes.
    pub fn relate(&self, inputs: &[&[T]], relation_code: &[T]) -> Result<Vec<T>> {
        let row = relational_input(&self.arch, inputs, relation_code)?;
        let x = Matrix::from_vec(1, row.len(), row);
        Ok(self.relational.forward(&x).into_data())
    }

    /// Batched form of [`relate`](Self::relate); each row is the
    /// concatenation of the input codes and the relation code.
    pub fn relate_batch(&self, rows: &Matrix<T>) -> Result<Matrix<T>> {
        check_width("relational input", rows, self.arch.relational_input_dim())?;
        Ok(self.relational.forward(rows))
    }

    pub fn cast<U: Real>(&self) -> NetworkParams<U> {
        NetworkParams {
            arch: self.arch.clone(),
            encoder: self.encoder.cast(),
            decoder: self.decoder.cast(),
            discriminator: self.discriminator.cast(),
            relational: self.relational.cast(),
        }
    }
}

/// Concatenates input codes and the zero-padded relation code. Unused
/// argument slots (relations of lower arity than the network) are zero.
pub fn relational_input<T: Real>(arch: &ArchConfig, inputs: &[&[T]], relation_code: &[T]) -> Result<Vec<T>> {
    if inputs.is_empty() || inputs.len() > arch.relation_arity {
        return Err(Error::Shape(format!(
            "relational learner takes 1..={} input codes, got {}",
            arch.relation_arity,
            inputs.len()
        )));
    }
    if relation_code.len() > arch.relation_code_dim {
        return Err(Error::Shape(format!(
            "relation code has {} entries, network expects at most {}",
            relation_code.len(),
            arch.relation_code_dim
        )));
    }
    let mut row = vec![T::zero(); arch.relational_input_dim()];
    for (slot, code) in inputs.iter().enumerate() {
        if code.len() != arch.latent_dim {
            return Err(Error::Shape(format!(
                "input code has {} entries, expected {}",
                code.len(),
                arch.latent_dim
            )));
        }
        row[slot * arch.latent_dim..(slot + 1) * arch.latent_dim].copy_from_slice(code);
    }
    let offset = arch.relation_arity * arch.latent_dim;
    row[offset..offset + relation_code.len()].copy_from_slice(relation_code);
    Ok(row)
}

fn check_width<T: Real>(what: &str, m: &Matrix<T>, expected: usize) -> Result<()> {
    if m.cols() != expected {
        return Err(Error::Shape(format!(
            "{what} width {} != expected {expected}",
            m.cols()
        )));
    }
    Ok(())
}

/// Converts channel-last `H×W×C` pixels to channel-major `C×H×W`.
pub fn hwc_to_chw(pixels: &[f32], height: usize, width: usize, channels: usize) -> Vec<f32> {
    if channels == 1 {
        return pixels.to_vec();
    }
    let mut out = vec![0.0; pixels.len()];
    for y in 0..height {
        for x in 0..width {
            for c in 0..channels {
                out[(c * height + y) * width + x] = pixels[(y * width + x) * channels + c];
            }
        }
    }
    out
}

/// Inverse of [`hwc_to_chw`].
pub fn chw_to_hwc(pixels: &[f32], height: usize, width: usize, channels: usize) -> Vec<f32> {
    if channels == 1 {
        return pixels.to_vec();
    }
    let mut out = vec![0.0; pixels.len()];
    for y in 0..height {
        for x in 0..width {
            for c in 0..channels {
                out[(y * width + x) * channels + c] = pixels[(c * height + y) * width + x];
            }
        }
    }
    out
}
