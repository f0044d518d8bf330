//! Native dataset files and loaders for the official archives.
//!
//! Native layout (directory):
//!
//! ```text
//! images.bin   "WDIS" version count height width channels (u32 LE)
//!              then count·H·W·C bytes, channel-last, pixel = byte/255
//! labels.csv   sample_index,<generative names>,<nuisance names>,split
//! factors.txt  factor grammar (optional; header names select a preset otherwise)
//! ```

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use image::imageops::FilterType;
use image::{GrayImage, RgbImage};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use super::npy::{read_npz, NpyArray, NpyData};
use super::{quantize, stratified_splits, Dataset, ImageSample, Split, Splits};
use crate::error::{Error, Result};
use crate::factors::{parse_spec_text, to_spec_text, FactorSpace, Preset};

pub const MAGIC: &[u8; 4] = b"WDIS";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 24;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ArchiveFormat {
    Native,
    DspritesOfficial,
    Shapes3dOfficial,
    HwfOfficial,
}

impl FromStr for ArchiveFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "native" => Ok(ArchiveFormat::Native),
            "dsprites-official" => Ok(ArchiveFormat::DspritesOfficial),
            "shapes3d-official" => Ok(ArchiveFormat::Shapes3dOfficial),
            "hwf-official" => Ok(ArchiveFormat::HwfOfficial),
            other => Err(Error::Config(format!("unknown archive format `{other}`"))),
        }
    }
}

/// Controls for the official loaders: output size (square), keep every
/// `stride`-th sample, and the seed for the split shuffle.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LoadOptions {
    pub size: Option<usize>,
    pub stride: usize,
    pub seed: u64,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions {
            size: None,
            stride: 1,
            seed: 0,
        }
    }
}

/// Writes `images.bin`, `labels.csv` and `factors.txt` into `dir`.
pub fn save_native(dataset: &Dataset, dir: &Path) -> Result<()> {
    dataset.validate()?;
    fs::create_dir_all(dir)?;
    let mut bytes = Vec::with_capacity(HEADER_LEN + dataset.samples.len() * dataset.image_len());
    bytes.extend_from_slice(MAGIC);
    for v in [
        VERSION,
        dataset.samples.len() as u32,
        dataset.height as u32,
        dataset.width as u32,
        dataset.channels as u32,
    ] {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    for s in &dataset.samples {
        bytes.extend(s.pixels.iter().map(|&p| (p.clamp(0.0, 1.0) * 255.0).round() as u8));
    }
    fs::write(dir.join("images.bin"), bytes)?;

    let space = &dataset.space;
    let assignment = dataset.splits.assignment(dataset.samples.len())?;
    let mut w = csv::Writer::from_path(dir.join("labels.csv"))?;
    let mut header = vec!["sample_index".to_string()];
    header.extend(space.generative_factors().map(|f| f.name.clone()));
    header.extend(space.nuisance_factors().map(|f| f.name.clone()));
    header.push("split".into());
    w.write_record(&header)?;
    for (i, (s, split)) in dataset.samples.iter().zip(&assignment).enumerate() {
        let mut row = vec![i.to_string()];
        match s.combination {
            Some(c) => row.extend(space.index_to_combination(c)?.values),
            None => row.extend(space.generative_factors().map(|_| String::new())),
        }
        row.extend(
            space
                .nuisance_factors()
                .zip(&s.nuisance)
                .map(|(f, &v)| f.values[v].clone()),
        );
        row.push(split.name().into());
        w.write_record(&row)?;
    }
    w.flush()?;
    fs::write(dir.join("factors.txt"), to_spec_text(space, &[]))?;
    Ok(())
}

/// Loads a dataset. For `Native`, `path` is the directory (or its
/// `images.bin`); the official formats are described on their loaders.
pub fn load_archive(path: &Path, format: ArchiveFormat, options: LoadOptions) -> Result<Dataset> {
    if options.stride == 0 {
        return Err(Error::Config("stride must be ≥ 1".into()));
    }
    match format {
        ArchiveFormat::Native => load_native(path),
        ArchiveFormat::DspritesOfficial => load_dsprites(path, options),
        ArchiveFormat::Shapes3dOfficial => load_shapes3d(path, options),
        ArchiveFormat::HwfOfficial => load_hwf(path, options),
    }
}

fn load_native(path: &Path) -> Result<Dataset> {
    let dir = if path.is_dir() {
        path.to_path_buf()
    } else {
        path.parent().map(Path::to_path_buf).unwrap_or_default()
    };
    let bytes = fs::read(dir.join("images.bin"))?;
    if bytes.len() < HEADER_LEN {
        return Err(Error::Malformed("images.bin: truncated header".into()));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::Malformed("images.bin: bad magic in header".into()));
    }
    let field = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
    if field(0) != VERSION as usize {
        return Err(Error::Malformed(format!(
            "images.bin: unsupported version {} in header",
            field(0)
        )));
    }
    let (count, height, width, channels) = (field(1), field(2), field(3), field(4));
    let image_len = height * width * channels;
    if image_len == 0 || bytes.len() != HEADER_LEN + count * image_len {
        return Err(Error::Malformed(format!(
            "images.bin: header promises {count} images of {height}×{width}×{channels}, file has {} bytes",
            bytes.len()
        )));
    }

    let mut reader = csv::Reader::from_path(dir.join("labels.csv"))?;
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let space = match fs::read_to_string(dir.join("factors.txt")) {
        Ok(text) => parse_spec_text(&text)?.0,
        Err(_) => space_from_header(&header)?,
    };
    let k = space.k();
    let nuisance: Vec<_> = space.nuisance_factors().collect();
    if header.len() != 2 + k + nuisance.len() || header[0] != "sample_index" || header[header.len() - 1] != "split" {
        return Err(Error::Malformed(
            "labels.csv: header does not match the factor space".into(),
        ));
    }

    let mut samples = Vec::with_capacity(count);
    let mut splits = Splits::default();
    for (row_no, record) in reader.records().enumerate() {
        let record = record?;
        if record.len() != header.len() {
            return Err(Error::Malformed(format!(
                "labels.csv: row {row_no} has {} fields",
                record.len()
            )));
        }
        let index: usize = record[0]
            .parse()
            .map_err(|_| Error::Malformed(format!("labels.csv: bad sample index `{}`", &record[0])))?;
        if index != row_no || index >= count {
            return Err(Error::Malformed(format!("labels.csv: unexpected sample index {index}")));
        }
        let labels: Vec<&str> = (1..=k).map(|i| &record[i]).collect();
        let combination = if labels.iter().all(|l| l.is_empty()) {
            None
        } else {
            Some(space.combination(&labels)?.index)
        };
        let nuisance_values = nuisance
            .iter()
            .enumerate()
            .map(|(j, f)| {
                let label = &record[1 + k + j];
                f.value_index(label).ok_or_else(|| Error::UnknownValue {
                    factor: f.name.clone(),
                    value: label.to_string(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        match record[header.len() - 1].parse::<Split>()? {
            Split::Train => splits.train.push(index),
            Split::Validation => splits.validation.push(index),
            Split::Test => splits.test.push(index),
        }
        let raw = &bytes[HEADER_LEN + index * image_len..HEADER_LEN + (index + 1) * image_len];
        samples.push(ImageSample {
            pixels: raw.iter().map(|&b| b as f32 / 255.0).collect(),
            combination,
            nuisance: nuisance_values,
        });
    }
    if samples.len() != count {
        return Err(Error::Malformed(format!(
            "labels.csv has {} rows, images.bin has {count} images",
            samples.len()
        )));
    }
    let dataset = Dataset {
        space,
        height,
        width,
        channels,
        samples,
        splits,
    };
    dataset.validate()?;
    Ok(dataset)
}

/// Picks the preset whose factor names match a labels header.
fn space_from_header(header: &[String]) -> Result<FactorSpace> {
    let names = &header[1..header.len().saturating_sub(1).max(1)];
    Preset::ALL
        .iter()
        .map(|&p| FactorSpace::from_preset(p))
        .find(|s| {
            let expected: Vec<&str> = s
                .generative_factors()
                .chain(s.nuisance_factors())
                .map(|f| f.name.as_str())
                .collect();
            expected == names.iter().map(String::as_str).collect::<Vec<_>>()
        })
        .ok_or_else(|| Error::Malformed("no factors.txt and labels.csv header matches no preset".into()))
}

fn require_shape(array: &NpyArray, name: &str, rank: usize) -> Result<()> {
    if array.shape.len() != rank {
        return Err(Error::Malformed(format!(
            "`{name}` has shape {:?}, expected rank {rank}",
            array.shape
        )));
    }
    Ok(())
}

fn label_index(value: f64, factor: &str, count: usize) -> Result<usize> {
    let rounded = value.round();
    if (value - rounded).abs() > 1e-6 || rounded < 0.0 || rounded >= count as f64 {
        return Err(Error::UnknownValue {
            factor: factor.to_string(),
            value: value.to_string(),
        });
    }
    Ok(rounded as usize)
}

/// Resizes one channel-last image (values in `[0,1]`) to `size × size`.
fn resize(pixels: &[f32], height: usize, width: usize, channels: usize, size: usize) -> Vec<f32> {
    if height == size && width == size {
        return pixels.iter().map(|&p| quantize(p)).collect();
    }
    let bytes: Vec<u8> = pixels
        .iter()
        .map(|&p| (p.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let (w, h, s) = (width as u32, height as u32, size as u32);
    let out: Vec<u8> = if channels == 1 {
        let img = GrayImage::from_raw(w, h, bytes).expect("image buffer size");
        image::imageops::resize(&img, s, s, FilterType::Triangle).into_raw()
    } else {
        let img = RgbImage::from_raw(w, h, bytes).expect("image buffer size");
        image::imageops::resize(&img, s, s, FilterType::Triangle).into_raw()
    };
    out.into_iter().map(|b| b as f32 / 255.0).collect()
}

fn finish(space: FactorSpace, size: usize, channels: usize, samples: Vec<ImageSample>, seed: u64) -> Result<Dataset> {
    let labels: Vec<Option<usize>> = samples.iter().map(|s| s.combination).collect();
    let splits = stratified_splits(&labels, space.n(), &mut ChaCha8Rng::seed_from_u64(seed));
    let dataset = Dataset {
        space,
        height: size,
        width: size,
        channels,
        samples,
        splits,
    };
    dataset.validate()?;
    Ok(dataset)
}

/// Position class (0..32) to one of three equal-range bins.
pub fn dsprites_position_bin(class: usize) -> usize {
    class * 3 / 32
}

/// `.npz` with `imgs` (count×64×64, 0/1 bytes) and `latents_classes`
/// (count×6: color, shape, scale, orientation, x, y). Official shape classes
/// are square, ellipse, heart. Positions are binned into thirds; scale and
/// orientation become nuisance values.
fn load_dsprites(path: &Path, options: LoadOptions) -> Result<Dataset> {
    let arrays = read_npz(path, &["imgs", "latents_classes"])?;
    let (imgs, latents) = (&arrays["imgs"], &arrays["latents_classes"]);
    require_shape(imgs, "imgs", 3)?;
    require_shape(latents, "latents_classes", 2)?;
    let NpyData::U8(pixels) = &imgs.data else {
        return Err(Error::Malformed("`imgs` must be uint8".into()));
    };
    let (count, height, width) = (imgs.shape[0], imgs.shape[1], imgs.shape[2]);
    if latents.shape != [count, 6] {
        return Err(Error::Malformed(format!(
            "`latents_classes` has shape {:?}",
            latents.shape
        )));
    }
    let space = FactorSpace::from_preset(Preset::Dsprites);
    let size = options.size.unwrap_or(height);
    let scale_count = space.nuisance_factors().next().map_or(0, |f| f.cardinality());
    let orientation_count = space.nuisance_factors().nth(1).map_or(0, |f| f.cardinality());
    let shape_map = [1usize, 0, 2];
    let mut samples = Vec::new();
    for i in (0..count).step_by(options.stride) {
        let l = |j: usize| latents.get_f64(i * 6 + j);
        let shape = shape_map[label_index(l(1), "shape", 3)?];
        let x = dsprites_position_bin(label_index(l(4), "x_position", 32)?);
        let y = dsprites_position_bin(label_index(l(5), "y_position", 32)?);
        let combination = space.index_of_values(&[x, y, shape])?;
        let nuisance = vec![
            label_index(l(2), "scale", scale_count)?,
            label_index(l(3), "orientation", orientation_count)?,
        ];
        let raw: Vec<f32> = pixels[i * height * width..(i + 1) * height * width]
            .iter()
            .map(|&b| if b > 1 { b as f32 / 255.0 } else { b as f32 })
            .collect();
        samples.push(ImageSample {
            pixels: resize(&raw, height, width, 1, size),
            combination: Some(combination),
            nuisance,
        });
    }
    finish(space, size, 1, samples, options.seed)
}

/// `.npz` export of the official HDF5 file with `images` (count×H×W×3
/// bytes) and `labels` (count×6 floats: floor hue, wall hue, object hue,
/// scale, shape, orientation). The eight scales are grouped into
/// small/medium/big thirds.
fn load_shapes3d(path: &Path, options: LoadOptions) -> Result<Dataset> {
    let arrays = read_npz(path, &["images", "labels"])?;
    let (images, labels) = (&arrays["images"], &arrays["labels"]);
    require_shape(images, "images", 4)?;
    require_shape(labels, "labels", 2)?;
    let NpyData::U8(pixels) = &images.data else {
        return Err(Error::Malformed("`images` must be uint8".into()));
    };
    let (count, height, width) = (images.shape[0], images.shape[1], images.shape[2]);
    if images.shape[3] != 3 || labels.shape != [count, 6] {
        return Err(Error::Malformed("shapes3d arrays have inconsistent shapes".into()));
    }
    let space = FactorSpace::from_preset(Preset::Shapes3d);
    let size = options.size.unwrap_or(height);
    let image_len = height * width * 3;
    let mut samples = Vec::new();
    for i in (0..count).step_by(options.stride) {
        let l = |j: usize| labels.get_f64(i * 6 + j);
        let hue = |v: f64, name: &str| label_index(v * 10.0, name, 10);
        let scale = label_index((l(3) - 0.75) * 14.0, "scale", 8)?;
        let combination =
            space.index_of_values(&[hue(l(2), "object_hue")?, label_index(l(4), "shape", 4)?, scale * 3 / 8])?;
        let nuisance = vec![
            hue(l(0), "floor_hue")?,
            hue(l(1), "wall_hue")?,
            label_index((l(5) + 30.0) * 14.0 / 60.0, "orientation", 15)?,
        ];
        let raw: Vec<f32> = pixels[i * image_len..(i + 1) * image_len]
            .iter()
            .map(|&b| b as f32 / 255.0)
            .collect();
        samples.push(ImageSample {
            pixels: resize(&raw, height, width, 3, size),
            combination: Some(combination),
            nuisance,
        });
    }
    finish(space, size, 3, samples, options.seed)
}

#[derive(Deserialize)]
struct HwfEntry {
    img_paths: Vec<String>,
    expr: String,
}

/// Symbol label of one HWF character; `None` for division, which has no
/// component in the factor space.
fn hwf_symbol(c: char) -> Result<Option<&'static str>> {
    const DIGITS: [&str; 10] = ["0", "1", "2", "3", "4", "5", "6", "7", "8", "9"];
    Ok(match c {
        '0'..='9' => Some(DIGITS[c as usize - '0' as usize]),
        '+' => Some("+"),
        '-' => Some("-"),
        '*' | '×' => Some("*"),
        '/' | '÷' => None,
        other => {
            return Err(Error::UnknownValue {
                factor: "symbol".into(),
                value: other.to_string(),
            })
        }
    })
}

/// Expression JSON files (`expr_*.json`: list of `{img_paths, expr}`) with
/// symbol images on disk, resolved relative to the JSON file. `path` is
/// one JSON file or a directory of them. Images are dark-on-light and get
/// inverted; each distinct image becomes one sample. Nuisance values are
/// unknown and recorded as the first value of each nuisance factor.
fn load_hwf(path: &Path, options: LoadOptions) -> Result<Dataset> {
    let files: Vec<PathBuf> = if path.is_dir() {
        let mut v: Vec<PathBuf> = fs::read_dir(path)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "json"))
            .collect();
        v.sort();
        v
    } else {
        vec![path.to_path_buf()]
    };
    if files.is_empty() {
        return Err(Error::Malformed(format!(
            "no expression files under {}",
            path.display()
        )));
    }
    let space = FactorSpace::from_preset(Preset::HwfLike);
    let size = options.size.unwrap_or(32);
    let nuisance = vec![0; space.nuisance_factors().count()];
    let mut seen = BTreeSet::new();
    let mut items = Vec::new();
    for file in &files {
        let base = file.parent().unwrap_or(Path::new("."));
        let entries: Vec<HwfEntry> = serde_json::from_str(&fs::read_to_string(file)?)?;
        for e in entries {
            let symbols: Vec<char> = e.expr.chars().filter(|c| !c.is_whitespace()).collect();
            if symbols.len() != e.img_paths.len() {
                return Err(Error::Malformed(format!(
                    "expression `{}` has {} symbols and {} images",
                    e.expr,
                    symbols.len(),
                    e.img_paths.len()
                )));
            }
            for (c, p) in symbols.into_iter().zip(e.img_paths) {
                if let Some(symbol) = hwf_symbol(c)? {
                    let full = base.join(&p);
                    if seen.insert(full.clone()) {
                        items.push((full, symbol));
                    }
                }
            }
        }
    }
    let mut samples = Vec::new();
    for (full, symbol) in items.into_iter().step_by(options.stride) {
        let img = image::open(&full)
            .map_err(|e| Error::Malformed(format!("{}: {e}", full.display())))?
            .to_luma8();
        let (w, h) = (img.width() as usize, img.height() as usize);
        let inverted: Vec<f32> = img.into_raw().into_iter().map(|b| 1.0 - b as f32 / 255.0).collect();
        samples.push(ImageSample {
            pixels: resize(&inverted, h, w, 1, size),
            combination: Some(space.combination(&[symbol])?.index),
            nuisance: nuisance.clone(),
        });
    }
    finish(space, size, 1, samples, options.seed)
}
