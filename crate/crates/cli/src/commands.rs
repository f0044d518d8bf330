//! The four subcommands.

use std::fs;
use std::path::{Path, PathBuf};

use image::{ImageBuffer, Luma, Rgb};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use sha2::{Digest, Sha256};
use weak_disentangle::checkpoint::Checkpoint;
use weak_disentangle::datasets::{
    label_subset, load_archive, make_dataset, save_native, Dataset, DatasetConfig, LoadOptions, Noise, Split,
};
use weak_disentangle::evaluation::{
    cluster_eval, metric_report, reconstruction_error, relational_eval, write_cluster_csv, write_relational_csv,
    ClusterEvalRow, MetricReport, RelEvalRow,
};
use weak_disentangle::factors::{builtin_relations, max_arity, FactorSpace, RelationDef};
use weak_disentangle::networks::{chw_to_hwc, NetworkParams};
use weak_disentangle::nn::Matrix;
use weak_disentangle::prior::GmPrior;
use weak_disentangle::training::{
    encode_all, estimate_prior_from_labeled, image_matrix, read_history, relation_code, write_history, EpochRecord,
    TrainState, Trainer,
};
use weak_disentangle::Error as CoreError;

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Which {
    Cluster,
    Relations,
    Disentangle,
    Recon,
    All,
}

impl Which {
    fn includes(self, other: Which) -> bool {
        self == Which::All || self == other
    }
}

fn relations_for(cfg: &RunConfig, space: &FactorSpace) -> CliResult<Vec<RelationDef>> {
    Ok(builtin_relations(space, cfg.preset)?)
}

/// Loads the dataset named by the config and checks it matches the preset.
fn load_dataset(cfg: &RunConfig) -> CliResult<Dataset> {
    if !cfg.paths.data.exists() {
        return Err(CliError::Data(format!(
            "dataset not found at {} (run `wdis generate` first)",
            cfg.paths.data.display()
        )));
    }
    let options = LoadOptions {
        size: Some(cfg.data.size),
        stride: cfg.data.stride,
        seed: cfg.seed,
    };
    let ds = load_archive(&cfg.paths.data, cfg.archive_format(), options)?;
    match ds.space.preset() {
        Some(p) if p == cfg.preset => Ok(ds),
        other => Err(CliError::Config(format!(
            "dataset at {} is {}, config asks for {}",
            cfg.paths.data.display(),
            other.map_or("a custom space", |p| p.name()),
            cfg.preset
        ))),
    }
}

fn load_checkpoint(path: &Path) -> CliResult<(Checkpoint, Vec<u8>)> {
    let bytes =
        fs::read(path).map_err(|e| CliError::Data(format!("cannot read checkpoint {}: {e}", path.display())))?;
    let ck =
        Checkpoint::from_bytes(&bytes).map_err(|e| CliError::Data(format!("checkpoint {}: {e}", path.display())))?;
    Ok((ck, bytes))
}

fn check_arch(params: &NetworkParams<f32>, ds: &Dataset) -> CliResult<()> {
    let a = &params.arch;
    if (a.height, a.width, a.channels) != (ds.height, ds.width, ds.channels) {
        return Err(CliError::Config(format!(
            "checkpoint expects {}×{}×{} images, dataset has {}×{}×{}",
            a.height, a.width, a.channels, ds.height, ds.width, ds.channels
        )));
    }
    Ok(())
}

pub fn generate(cfg: &RunConfig) -> CliResult<()> {
    let space = FactorSpace::from_preset(cfg.preset);
    let config = DatasetConfig {
        noise: Noise {
            kind: cfg.data.noise,
            level: cfg.data.noise_level,
        },
        ..DatasetConfig::new(cfg.preset, cfg.data.samples_per_combination, cfg.data.size, cfg.seed)
    };
    let ds = make_dataset(&space, &config)?;
    save_native(&ds, &cfg.paths.data)?;
    println!(
        "wrote {} images ({}×{}×{}, {} combinations) to {}",
        ds.samples.len(),
        ds.height,
        ds.width,
        ds.channels,
        space.n(),
        cfg.paths.data.display()
    );
    Ok(())
}

fn history_path(cfg: &RunConfig) -> PathBuf {
    cfg.paths.checkpoint.with_file_name("history.csv")
}

/// Trains up to `until` epochs (default: the full schedule). With `resume`
/// the run continues from the stored checkpoint and its history.
pub fn train(cfg: &RunConfig, resume: bool, until: Option<usize>) -> CliResult<()> {
    let ds = load_dataset(cfg)?;
    let rels = relations_for(cfg, &ds.space)?;
    let labeled = label_subset(&ds, cfg.data.tau, cfg.seed)?;
    let trainer = Trainer::new(cfg.train.clone(), &ds, &labeled, &rels)?;
    let hist_path = history_path(cfg);
    let (mut state, mut history) = if resume {
        let (ck, _) = load_checkpoint(&cfg.paths.checkpoint)?;
        let state = TrainState::from_checkpoint(&ck, cfg.train.learning_rate)?;
        check_arch(&state.params, &ds)?;
        let mut history = if hist_path.exists() {
            read_history(&hist_path)?
        } else {
            Vec::new()
        };
        history.retain(|r| r.epoch < state.epoch);
        println!("resuming from epoch {}", state.epoch);
        (state, history)
    } else {
        let arch = cfg.arch_config(ds.height, ds.width, ds.channels, max_arity(&rels), rels.len());
        (trainer.init_state(&arch)?, Vec::new())
    };
    if let Some(dir) = cfg.paths.checkpoint.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let stop = until.unwrap_or(usize::MAX);
    let every = cfg.checkpoint_every;
    let mut pending: Vec<EpochRecord> = Vec::new();
    let records = trainer.run(&mut state, stop, |s, r| {
        println!(
            "epoch {:>5} {:<6} ae {:.5} disc {:.5} rel {:.5} total {:.5}",
            r.epoch,
            r.phase.name(),
            r.loss_ae,
            r.loss_disc,
            r.loss_rel,
            r.loss_total
        );
        pending.push(r.clone());
        if every > 0 && s.epoch % every == 0 {
            s.save(&cfg.paths.checkpoint)?;
            let mut all = history.clone();
            all.extend(pending.iter().cloned());
            write_history(&hist_path, &all)?;
        }
        Ok(true)
    })?;
    history.extend(records);
    state.save(&cfg.paths.checkpoint)?;
    write_history(&hist_path, &history)?;
    println!(
        "saved checkpoint at epoch {} to {}",
        state.epoch,
        cfg.paths.checkpoint.display()
    );
    Ok(())
}

/// Everything `eval` computed, tied to the checkpoint and config it came from.
#[derive(Debug, Serialize)]
struct EvalReport {
    dataset: String,
    checkpoint_sha256: String,
    config_digest: String,
    seed: u64,
    epoch: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    cluster: Option<Vec<ClusterEvalRow>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    relational: Option<Vec<RelEvalRow>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    metrics: Option<MetricReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    reconstruction_error: Option<f64>,
}

fn stored_prior(state: &TrainState) -> CliResult<&GmPrior> {
    state
        .prior
        .as_ref()
        .ok_or_else(|| CliError::Config("checkpoint has no prior (training stopped during warmup)".into()))
}

pub fn eval(cfg: &RunConfig, checkpoint: Option<&Path>, which: Which) -> CliResult<()> {
    let ck_path = checkpoint.unwrap_or(&cfg.paths.checkpoint);
    let (ck, bytes) = load_checkpoint(ck_path)?;
    let state = TrainState::from_checkpoint(&ck, cfg.train.learning_rate)?;
    let ds = load_dataset(cfg)?;
    check_arch(&state.params, &ds)?;
    let name = cfg.preset.name();
    let test = ds.splits.get(Split::Test);
    fs::create_dir_all(&cfg.paths.reports)?;
    let mut report = EvalReport {
        dataset: name.to_string(),
        checkpoint_sha256: hex::encode(Sha256::digest(&bytes)),
        config_digest: cfg.digest(),
        seed: cfg.seed,
        epoch: state.epoch,
        cluster: None,
        relational: None,
        metrics: None,
        reconstruction_error: None,
    };

    if which.includes(Which::Cluster) {
        let mut rows = Vec::new();
        for &tau in &cfg.eval.taus {
            let labeled = label_subset(&ds, tau, cfg.seed)?;
            let prior = estimate_prior_from_labeled(&state.params, &ds, &labeled, cfg.train.variance_floor)?;
            rows.extend(cluster_eval(&state.params, &prior, &ds, test, &cfg.eval.alphas, tau)?);
        }
        write_cluster_csv(&cfg.paths.reports.join("cluster_eval.csv"), name, &rows)?;
        println!("latent classification ({name}, test split)");
        println!("{:>6} {:>5} {:>8} {:>8}", "alpha", "tau", "acc", "ar");
        for r in &rows {
            println!(
                "{:>6.2} {:>5} {:>8.4} {:>8.4}",
                r.alpha, r.tau, r.accuracy, r.acceptance_ratio
            );
        }
        report.cluster = Some(rows);
    }

    if which.includes(Which::Relations) {
        let prior = stored_prior(&state)?;
        let rels = relations_for(cfg, &ds.space)?;
        let rows = relational_eval(
            prior,
            &state.params,
            &ds.space,
            &rels,
            &cfg.eval.depths,
            &cfg.eval.alphas,
            cfg.eval.trials,
            cfg.seed,
        )?;
        write_relational_csv(&cfg.paths.reports.join("relational_eval.csv"), name, &rows)?;
        println!("relational accuracy ({name}, {} trials)", cfg.eval.trials);
        println!("{:>6} {:>5} {:>8} {:>8}", "alpha", "depth", "acc", "ar");
        for r in &rows {
            println!(
                "{:>6.2} {:>5} {:>8.4} {:>8.4}",
                r.alpha, r.depth, r.accuracy, r.acceptance_ratio
            );
        }
        report.relational = Some(rows);
    }

    if which.includes(Which::Disentangle) {
        if ds.space.k() < 2 {
            if which == Which::Disentangle {
                return Err(CliError::Config(format!(
                    "{name} has a single generative factor; disentanglement metrics need two or more"
                )));
            }
            println!("skipping disentanglement metrics: {name} has a single generative factor");
        } else {
            let m = metric_report(&state.params, stored_prior(&state)?, &ds, test)?;
            println!("disentanglement ({name}, test split)");
            println!(
                "  mig {:.4}  sap {:.4}  dci {:.4} (d {:.4} c {:.4} i {:.4})  recon {:.5}",
                m.mig,
                m.sap,
                m.dci,
                m.dci_disentanglement,
                m.dci_completeness,
                m.dci_informativeness,
                m.reconstruction_error
            );
            report.reconstruction_error = Some(m.reconstruction_error);
            report.metrics = Some(m);
        }
    }

    if which.includes(Which::Recon) && report.reconstruction_error.is_none() {
        let e = reconstruction_error(&state.params, &ds, test)?;
        println!("reconstruction error ({name}, test split): {e:.5}");
        report.reconstruction_error = Some(e);
    }

    let json = serde_json::to_string_pretty(&report)?;
    fs::write(cfg.paths.reports.join("metrics.json"), json + "\n")?;
    println!("reports written to {}", cfg.paths.reports.display());
    Ok(())
}

/// One symbolic step of a sample chain.
#[derive(Debug)]
struct Step {
    relation: usize,
    inputs: Vec<usize>,
}

fn parse_combination(space: &FactorSpace, text: &str) -> CliResult<usize> {
    let labels: Vec<&str> = text.split(',').map(str::trim).collect();
    Ok(space.combination(&labels)?.index)
}

/// Resolves `name` or `name:arg` steps from `start`, failing on the first
/// step that is unknown or undefined for the current state.
fn plan_chain(space: &FactorSpace, relations: &[RelationDef], start: usize, chain: &[String]) -> CliResult<Vec<Step>> {
    let mut state = start;
    let mut steps = Vec::with_capacity(chain.len());
    for (i, text) in chain.iter().enumerate() {
        let fail = |msg: String| CliError::Config(format!("step {} (`{text}`) of the chain is invalid: {msg}", i + 1));
        let mut parts = text.split(':');
        let name = parts.next().unwrap_or_default().trim();
        let relation = relations
            .iter()
            .position(|r| r.name == name)
            .ok_or_else(|| fail(CoreError::UnknownRelation(name.to_string()).to_string()))?;
        let mut inputs = vec![state];
        for arg in parts {
            inputs.push(parse_combination(space, arg).map_err(|e| fail(e.to_string()))?);
        }
        let arity = relations[relation].arity;
        if inputs.len() != arity {
            return Err(fail(format!("`{name}` takes {arity} input(s), got {}", inputs.len())));
        }
        state = relations[relation].apply(&inputs).map_err(|_| {
            let described: Vec<String> = inputs
                .iter()
                .map(|&c| {
                    space
                        .index_to_combination(c)
                        .map(|c| format!("({})", c.values.join(",")))
                })
                .collect::<Result<_, _>>()
                .unwrap_or_default();
            fail(format!("`{name}` is not defined from {}", described.join(" and ")))
        })?;
        steps.push(Step { relation, inputs });
    }
    Ok(steps)
}

/// Code of the first stored image of `combination`, or the component mean
/// when no dataset is available.
fn start_code(
    cfg: &RunConfig,
    params: &NetworkParams<f32>,
    prior: &GmPrior,
    combination: usize,
) -> CliResult<Vec<f64>> {
    if !cfg.paths.data.exists() {
        return Ok(prior.mean(combination).to_vec());
    }
    let ds = load_dataset(cfg)?;
    check_arch(params, &ds)?;
    let index = [Split::Test, Split::Validation, Split::Train]
        .iter()
        .flat_map(|&s| ds.splits.get(s).iter().copied())
        .find(|&i| ds.samples[i].combination == Some(combination))
        .ok_or_else(|| CliError::Data(format!("dataset has no image of combination {combination}")))?;
    Ok(encode_all(params, &image_matrix(&ds, &[index]))?.remove(0))
}

fn write_strip(path: &Path, params: &NetworkParams<f32>, codes: &[Vec<f64>]) -> CliResult<()> {
    let a = &params.arch;
    let rows: Vec<Vec<f32>> = codes.iter().map(|z| z.iter().map(|&v| v as f32).collect()).collect();
    let decoded = params.decode(&Matrix::from_rows(&rows))?;
    let (h, w, c) = (a.height, a.width, a.channels);
    let frames: Vec<Vec<f32>> = decoded.iter_rows().map(|r| chw_to_hwc(r, h, w, c)).collect();
    let byte = |v: f32| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    let strip_w = (w * frames.len()) as u32;
    let pixel = |x: u32, y: u32, ch: usize| {
        let (frame, x) = (x as usize / w, x as usize % w);
        byte(frames[frame][(y as usize * w + x) * c + ch])
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    match c {
        1 => ImageBuffer::from_fn(strip_w, h as u32, |x, y| Luma([pixel(x, y, 0)])).save(path)?,
        3 => ImageBuffer::from_fn(strip_w, h as u32, |x, y| {
            Rgb([pixel(x, y, 0), pixel(x, y, 1), pixel(x, y, 2)])
        })
        .save(path)?,
        other => return Err(CliError::Config(format!("cannot render {other}-channel images"))),
    }
    Ok(())
}

/// Decodes the start code and the code after each chained relation into
/// a horizontal strip.
pub fn sample(
    cfg: &RunConfig,
    checkpoint: Option<&Path>,
    start: &str,
    chain: &[String],
    output: &Path,
) -> CliResult<()> {
    let space = FactorSpace::from_preset(cfg.preset);
    let relations = relations_for(cfg, &space)?;
    let start_index = parse_combination(&space, start)?;
    let steps = plan_chain(&space, &relations, start_index, chain)?;
    let (ck, _) = load_checkpoint(checkpoint.unwrap_or(&cfg.paths.checkpoint))?;
    let params = ck.params()?;
    let prior = ck
        .prior()?
        .ok_or_else(|| CliError::Config("checkpoint has no prior (training stopped during warmup)".into()))?;
    if prior.n() != space.n() {
        return Err(CliError::Config(format!(
            "checkpoint prior has {} components, {} expects {}",
            prior.n(),
            cfg.preset,
            space.n()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut codes = vec![start_code(cfg, &params, &prior, start_index)?];
    for step in &steps {
        let current: Vec<f32> = codes.last().unwrap().iter().map(|&v| v as f32).collect();
        let others: Vec<Vec<f32>> = step.inputs[1..]
            .iter()
            .map(|&c| prior.mean(c).iter().map(|&v| v as f32).collect())
            .collect();
        let mut inputs: Vec<&[f32]> = vec![&current];
        inputs.extend(others.iter().map(Vec::as_slice));
        let rel_code: Vec<f32> = relation_code(
            &prior,
            &relations,
            step.relation,
            params.arch.relation_code_dim,
            &mut rng,
        )?
        .into_iter()
        .map(|v| v as f32)
        .collect();
        let out = params.relate(&inputs, &rel_code)?;
        codes.push(out.into_iter().map(|v| v as f64).collect());
    }
    write_strip(output, &params, &codes)?;
    println!("wrote {}-image strip to {}", codes.len(), output.display());
    Ok(())
}
