//! Image datasets with known factor labels: procedural generation, noise
//! augmentation, stratified splits, labeled subsets and archive I/O.

mod archive;
pub mod npy;
mod render;

pub use archive::{load_archive, save_native, ArchiveFormat, LoadOptions};
pub use render::{
    render_glyph, render_object, render_sprite, GlyphNuisance, ObjectNuisance, SpriteNuisance, GLYPH_THICKNESS,
};

use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factors::{FactorSpace, Preset};

/// One image, channel-last, every value in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageSample {
    pub pixels: Vec<f32>,
    pub combination: Option<usize>,
    /// Value indices of the nuisance factors used at render time.
    pub nuisance: Vec<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Splits {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "validation" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(Error::Malformed(format!("unknown split `{other}`"))),
        }
    }
}

impl Splits {
    pub fn get(&self, split: Split) -> &[usize] {
        match split {
            Split::Train => &self.train,
            Split::Validation => &self.validation,
            Split::Test => &self.test,
        }
    }

    /// Split membership of each of `count` samples.
    pub fn assignment(&self, count: usize) -> Result<Vec<Split>> {
        let mut out: Vec<Option<Split>> = vec![None; count];
        for split in [Split::Train, Split::Validation, Split::Test] {
            for &i in self.get(split) {
                match out.get_mut(i) {
                    Some(slot @ None) => *slot = Some(split),
                    _ => return Err(Error::Malformed(format!("sample {i} is out of range or in two splits"))),
                }
            }
        }
        out.into_iter()
            .enumerate()
            .map(|(i, s)| s.ok_or_else(|| Error::Malformed(format!("sample {i} is in no split"))))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub space: FactorSpace,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub samples: Vec<ImageSample>,
    pub splits: Splits,
}

impl Dataset {
    pub fn image_len(&self) -> usize {
        self.height * self.width * self.channels
    }

    /// Checks pixel ranges, image sizes, labels, and that the splits
    /// partition the samples.
    pub fn validate(&self) -> Result<()> {
        let n = self.space.n();
        let nuisance: Vec<usize> = self.space.nuisance_factors().map(|f| f.cardinality()).collect();
        for (i, s) in self.samples.iter().enumerate() {
            if s.pixels.len() != self.image_len() {
                return Err(Error::Shape(format!("sample {i} has {} pixels", s.pixels.len())));
            }
            if s.pixels.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(Error::Numeric(format!("sample {i} has pixels outside [0, 1]")));
            }
            if s.combination.is_some_and(|c| c >= n) {
                return Err(Error::IndexOutOfRange {
                    index: s.combination.unwrap(),
                    n,
                });
            }
            if s.nuisance.len() != nuisance.len() || s.nuisance.iter().zip(&nuisance).any(|(v, c)| v >= c) {
                return Err(Error::Malformed(format!("sample {i} has invalid nuisance values")));
            }
        }
        self.splits.assignment(self.samples.len())?;
        Ok(())
    }

    /// Indices of `split` grouped by combination (unlabeled samples skipped).
    pub fn by_combination(&self, split: Split) -> Vec<Vec<usize>> {
        let mut groups = vec![Vec::new(); self.space.n()];
        for &i in self.splits.get(split) {
            if let Some(c) = self.samples[i].combination {
                groups[c].push(i);
            }
        }
        groups
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKind {
    None,
    Bernoulli,
    Gaussian,
}

impl FromStr for NoiseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(NoiseKind::None),
            "bernoulli" => Ok(NoiseKind::Bernoulli),
            "gaussian" => Ok(NoiseKind::Gaussian),
            other => Err(Error::Config(format!("unknown noise kind `{other}`"))),
        }
    }
}

impl NoiseKind {
    /// Mild default corruption level for each kind.
    pub fn default_level(self) -> f64 {
        match self {
            NoiseKind::None => 0.0,
            NoiseKind::Bernoulli | NoiseKind::Gaussian => 0.05,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Noise {
    pub kind: NoiseKind,
    pub level: f64,
}

impl Noise {
    pub const NONE: Noise = Noise {
        kind: NoiseKind::None,
        level: 0.0,
    };
}

/// Corrupts an image: `Bernoulli` replaces each value with a uniform draw
/// with probability `level`; `Gaussian` adds `N(0, level²)` noise. Output is
/// clipped to `[0, 1]`.
pub fn augment(image: &ImageSample, noise: Noise, seed: u64) -> Result<ImageSample> {
    if !(noise.level >= 0.0 && noise.level.is_finite()) {
        return Err(Error::Config(format!(
            "noise level {} must be finite and ≥ 0",
            noise.level
        )));
    }
    if noise.kind == NoiseKind::Bernoulli && noise.level > 1.0 {
        return Err(Error::Config("bernoulli noise level is a probability".into()));
    }
    let mut out = image.clone();
    if noise.kind == NoiseKind::None || noise.level == 0.0 {
        return Ok(out);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for p in &mut out.pixels {
        match noise.kind {
            NoiseKind::Bernoulli => {
                if rng.gen_bool(noise.level) {
                    *p = rng.gen::<f32>();
                }
            }
            NoiseKind::Gaussian => {
                let e: f64 = rng.sample(StandardNormal);
                *p = (*p as f64 + noise.level * e).clamp(0.0, 1.0) as f32;
            }
            NoiseKind::None => unreachable!(),
        }
    }
    Ok(out)
}

/// Rounds to the 8-bit grid used by the native archive.
pub(crate) fn quantize(v: f32) -> f32 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8 as f32 / 255.0
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetConfig {
    pub preset: Preset,
    pub samples_per_combination: usize,
    pub size: usize,
    pub noise: Noise,
    pub seed: u64,
}

impl DatasetConfig {
    pub fn new(preset: Preset, samples_per_combination: usize, size: usize, seed: u64) -> Self {
        DatasetConfig {
            preset,
            samples_per_combination,
            size,
            noise: Noise::NONE,
            seed,
        }
    }
}

/// Renders a labeled dataset, applies augmentation and builds stratified
/// splits: 20% of each combination goes to test, then 10% of the remainder
/// to validation. Fully determined by the config.
pub fn make_dataset(space: &FactorSpace, config: &DatasetConfig) -> Result<Dataset> {
    if config.samples_per_combination == 0 {
        return Err(Error::Config("samples_per_combination must be ≥ 1".into()));
    }
    if config.size < 8 {
        return Err(Error::Config("image size must be at least 8".into()));
    }
    if space.factors() != FactorSpace::from_preset(config.preset).factors() {
        return Err(Error::Config(format!(
            "factor space does not match preset {}",
            config.preset
        )));
    }
    let nuisance_cards: Vec<usize> = space.nuisance_factors().map(|f| f.cardinality()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut samples = Vec::with_capacity(space.n() * config.samples_per_combination);
    for combination in 0..space.n() {
        for _ in 0..config.samples_per_combination {
            let nuisance: Vec<usize> = nuisance_cards.iter().map(|&c| rng.gen_range(0..c)).collect();
            let noise_seed: u64 = rng.gen();
            let clean = render::render_preset(space, config.preset, combination, &nuisance, config.size)?;
            let mut sample = augment(&clean, config.noise, noise_seed)?;
            sample.pixels.iter_mut().for_each(|p| *p = quantize(*p));
            samples.push(sample);
        }
    }
    let labels: Vec<Option<usize>> = samples.iter().map(|s| s.combination).collect();
    let splits = stratified_splits(&labels, space.n(), &mut rng);
    Ok(Dataset {
        space: space.clone(),
        height: config.size,
        width: config.size,
        channels: config.preset.channels(),
        samples,
        splits,
    })
}

/// Per-combination shuffle; `round(0.2·count)` to test and
/// `round(0.1·rest)` to validation, each at least one when the group has
/// three or more samples. Unlabeled samples form their own group.
pub(crate) fn stratified_splits<R: Rng>(labels: &[Option<usize>], n: usize, rng: &mut R) -> Splits {
    let mut groups = vec![Vec::new(); n + 1];
    for (i, l) in labels.iter().enumerate() {
        groups[l.unwrap_or(n)].push(i);
    }
    let mut splits = Splits::default();
    for mut g in groups {
        g.shuffle(rng);
        let count = g.len();
        let at_least = |v: usize| if count >= 3 { v.max(1) } else { v };
        let test = at_least((0.2 * count as f64).round() as usize);
        let validation = at_least((0.1 * (count - test) as f64).round() as usize);
        splits.test.extend_from_slice(&g[..test]);
        splits.validation.extend_from_slice(&g[test..test + validation]);
        splits.train.extend_from_slice(&g[test + validation..]);
    }
    for s in [&mut splits.train, &mut splits.validation, &mut splits.test] {
        s.sort_unstable();
    }
    splits
}

/// Training indices chosen for supervision, `tau` per combination.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabeledSubset {
    pub tau: usize,
    pub by_combination: Vec<Vec<usize>>,
}

impl LabeledSubset {
    pub fn len(&self) -> usize {
        self.by_combination.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.by_combination.iter().flatten().copied()
    }
}

/// Uniformly samples `tau` training indices from every combination.
pub fn label_subset(dataset: &Dataset, tau: usize, seed: u64) -> Result<LabeledSubset> {
    if tau == 0 {
        return Err(Error::Config("tau must be ≥ 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let groups = dataset.by_combination(Split::Train);
    let mut by_combination = Vec::with_capacity(groups.len());
    for (c, g) in groups.iter().enumerate() {
        if g.len() < tau {
            return Err(Error::InsufficientSamples(format!(
                "combination {c} has {} training samples, tau = {tau}",
                g.len()
            )));
        }
        let mut chosen: Vec<usize> = g.choose_multiple(&mut rng, tau).copied().collect();
        chosen.sort_unstable();
        by_combination.push(chosen);
    }
    Ok(LabeledSubset { tau, by_combination })
}
