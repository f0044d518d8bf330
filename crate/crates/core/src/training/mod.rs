//! Loss terms, relation tuples and the alternating AbsAE/ReL training loop.
//!
//! Training starts with a warmup phase (autoencoder only, uniform prior).
//! The full phase estimates the mixture prior from the encoded labeled
//! subset and alternates one autoencoder step with one relational step.

mod losses;
mod tuples;

pub use losses::{
    discriminator_loss, discriminator_objective, encoder_adversarial_loss, reconstruction_loss, relational_loss,
    ReconKind, PROB_CLAMP,
};
pub use tuples::{make_relation_tuple, relation_code, sample_relation_tuple, RelationTuple};

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::datasets::{Dataset, LabeledSubset, Split};
use crate::error::{Error, Result};
use crate::factors::RelationDef;
use crate::networks::{hwc_to_chw, ArchConfig, NetworkParams};
use crate::nn::{Adam, Matrix, Network};
use crate::prior::{estimate_prior, warmup_sample_with, GmPrior, DEFAULT_VARIANCE_FLOOR};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub beta: f64,
    pub gamma: f64,
    pub warmup_epochs: usize,
    pub full_epochs: usize,
    pub batch_absae: usize,
    pub batch_rel: usize,
    pub learning_rate: f64,
    /// Re-estimate the prior every this many full-phase epochs; 0 never.
    pub refresh_every: usize,
    pub variance_floor: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            beta: 1.0,
            gamma: 1.0,
            warmup_epochs: 1000,
            full_epochs: 5000,
            batch_absae: 1024,
            batch_rel: 128,
            learning_rate: 1e-4,
            refresh_every: 50,
            variance_floor: DEFAULT_VARIANCE_FLOOR,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn total_epochs(&self) -> usize {
        self.warmup_epochs + self.full_epochs
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.beta >= 0.0 && self.gamma >= 0.0) {
            return bad("beta and gamma must be ≥ 0");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.batch_absae == 0 || self.batch_rel == 0 {
            return bad("batch sizes must be positive");
        }
        if self.variance_floor.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
            return bad("variance_floor must be positive");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Warmup,
    Full,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Warmup => "warmup",
            Phase::Full => "full",
        }
    }
}

/// Adam state for each of the four networks.
#[derive(Clone, Debug, PartialEq)]
pub struct Optimizers {
    pub encoder: Adam<f32>,
    pub decoder: Adam<f32>,
    pub discriminator: Adam<f32>,
    pub relational: Adam<f32>,
}

impl Optimizers {
    pub fn new(params: &NetworkParams<f32>, learning_rate: f64) -> Self {
        Optimizers {
            encoder: Adam::new(learning_rate, &params.encoder.params),
            decoder: Adam::new(learning_rate, &params.decoder.params),
            discriminator: Adam::new(learning_rate, &params.discriminator.params),
            relational: Adam::new(learning_rate, &params.relational.params),
        }
    }

    fn all(&self) -> [&Adam<f32>; 4] {
        [&self.encoder, &self.decoder, &self.discriminator, &self.relational]
    }

    fn all_mut(&mut self) -> [&mut Adam<f32>; 4] {
        [
            &mut self.encoder,
            &mut self.decoder,
            &mut self.discriminator,
            &mut self.relational,
        ]
    }
}

/// Everything needed to continue training: parameters, optimizer moments,
/// the prior (`None` during warmup) and the number of completed epochs.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub params: NetworkParams<f32>,
    pub optimizers: Optimizers,
    pub prior: Option<GmPrior>,
    pub epoch: usize,
}

const EPOCH_BLOCK: &str = "train.epoch";

/// Splits a counter into two 24-bit halves so f32 blocks hold it exactly.
fn counter_to_f32(v: u64) -> Vec<f32> {
    vec![(v >> 24) as f32, (v & 0xFF_FFFF) as f32]
}

fn counter_from_f32(data: &[f32]) -> Result<u64> {
    match data {
        [hi, lo] if hi.fract() == 0.0 && lo.fract() == 0.0 && *hi >= 0.0 && *lo >= 0.0 => {
            Ok(((*hi as u64) << 24) | *lo as u64)
        }
        _ => Err(Error::Malformed("bad counter block".into())),
    }
}

impl TrainState {
    pub fn new(params: NetworkParams<f32>, learning_rate: f64) -> Self {
        let optimizers = Optimizers::new(&params, learning_rate);
        TrainState {
            params,
            optimizers,
            prior: None,
            epoch: 0,
        }
    }

    pub fn init(arch: &ArchConfig, config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self::new(NetworkParams::init(arch, config.seed)?, config.learning_rate))
    }

    pub fn phase(&self, config: &TrainConfig) -> Phase {
        if self.epoch < config.warmup_epochs {
            Phase::Warmup
        } else {
            Phase::Full
        }
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::from_params(&self.params);
        for (net, adam) in self.params.networks().iter().zip(self.optimizers.all()) {
            for ((p, m), v) in net.params.iter().zip(&adam.first_moment).zip(&adam.second_moment) {
                ck.push(&format!("adam.m.{}", p.name), p.dims.clone(), m.clone());
                ck.push(&format!("adam.v.{}", p.name), p.dims.clone(), v.clone());
            }
            ck.push(
                &format!("adam.step.{}", network_name(net)),
                vec![2],
                counter_to_f32(adam.step),
            );
        }
        ck.push(EPOCH_BLOCK, vec![2], counter_to_f32(self.epoch as u64));
        if let Some(prior) = &self.prior {
            ck.set_prior(prior);
        }
        ck
    }

    /// Restores a state; optimizer moments default to zero when absent.
    pub fn from_checkpoint(ck: &Checkpoint, learning_rate: f64) -> Result<Self> {
        let params = ck.params()?;
        let mut optimizers = Optimizers::new(&params, learning_rate);
        for (net, adam) in params.networks().iter().zip(optimizers.all_mut()) {
            if let Some(step) = ck.block(&format!("adam.step.{}", network_name(net))) {
                adam.step = counter_from_f32(&step.data)?;
                for (i, p) in net.params.iter().enumerate() {
                    adam.first_moment[i] = ck.require(&format!("adam.m.{}", p.name))?.data.clone();
                    adam.second_moment[i] = ck.require(&format!("adam.v.{}", p.name))?.data.clone();
                    if adam.first_moment[i].len() != p.data.len() || adam.second_moment[i].len() != p.data.len() {
                        return Err(Error::Malformed(format!(
                            "optimizer state for `{}` has wrong size",
                            p.name
                        )));
                    }
                }
            }
        }
        let epoch = match ck.block(EPOCH_BLOCK) {
            Some(b) => counter_from_f32(&b.data)? as usize,
            None => 0,
        };
        Ok(TrainState {
            params,
            optimizers,
            prior: ck.prior()?,
            epoch,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().write(path)
    }
}

fn network_name(net: &Network<f32>) -> &str {
    net.params
        .first()
        .and_then(|p| p.name.split('.').next())
        .unwrap_or("network")
}

/// Losses from one autoencoder step.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct AbsAeLosses {
    pub reconstruction: f64,
    /// Encoder's adversarial term.
    pub adversarial: f64,
    /// Discriminator's own loss.
    pub critic: f64,
}

fn finite_or(what: &str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Numeric(format!("{what} loss is not finite ({v})")))
    }
}

fn to_matrix(rows: &[Vec<f64>]) -> Matrix<f32> {
    let cols = rows.first().map_or(0, Vec::len);
    Matrix::from_vec(rows.len(), cols, rows.iter().flatten().map(|&v| v as f32).collect())
}

/// One discriminator step and one encoder/decoder step on
/// reconstruction + β·adversarial. `images` rows are channel-major. Prior
/// samples come from the uniform warmup prior when `state.prior` is `None`.
pub fn train_step_absae(
    state: &mut TrainState,
    images: &Matrix<f32>,
    beta: f64,
    rng: &mut ChaCha8Rng,
) -> Result<AbsAeLosses> {
    let arch = state.params.arch.clone();
    if images.cols() != arch.image_len() || images.rows() == 0 {
        return Err(Error::Shape(format!(
            "image batch is {}×{}",
            images.rows(),
            images.cols()
        )));
    }
    let b = images.rows();
    let kind = ReconKind::for_channels(arch.channels);

    let enc_trace = state.params.encoder.forward_trace(images);
    let z = enc_trace.output().clone();
    let dec_trace = state.params.decoder.forward_trace(&z);
    let (recon, recon_grad) = reconstruction_loss(images, dec_trace.output(), kind)?;

    let prior_rows = match &state.prior {
        Some(p) => p.sample(b, rng),
        None => warmup_sample_with(b, arch.latent_dim, rng),
    };
    let mut stacked = Matrix::zeros(2 * b, arch.latent_dim);
    stacked.data_mut()[..b * arch.latent_dim].copy_from_slice(z.data());
    stacked.data_mut()[b * arch.latent_dim..].copy_from_slice(to_matrix(&prior_rows).data());
    let disc_trace = state.params.discriminator.forward_trace(&stacked);
    let d = disc_trace.output().data();
    let (d_enc, d_prior) = d.split_at(b);

    let (critic, g_enc, g_prior) = discriminator_loss(d_enc, d_prior);
    let mut critic_grad = Matrix::zeros(2 * b, 1);
    critic_grad.data_mut()[..b].copy_from_slice(&g_enc);
    critic_grad.data_mut()[b..].copy_from_slice(&g_prior);
    let (disc_grads, _) = state.params.discriminator.backward(&disc_trace, critic_grad, false);

    let (adversarial, g_adv) = encoder_adversarial_loss(d_enc);
    let mut dz = {
        let (dec_grads, dz) = state.params.decoder.backward(&dec_trace, recon_grad, true);
        state
            .optimizers
            .decoder
            .update(&mut state.params.decoder.params, &dec_grads);
        dz.expect("input gradient requested")
    };
    if beta != 0.0 {
        let mut adv_grad = Matrix::zeros(2 * b, 1);
        adv_grad.data_mut()[..b].copy_from_slice(&g_adv);
        let (_, dz_adv) = state.params.discriminator.backward(&disc_trace, adv_grad, true);
        let dz_adv = dz_adv.expect("input gradient requested");
        let beta = beta as f32;
        for (g, a) in dz.data_mut().iter_mut().zip(&dz_adv.data()[..b * arch.latent_dim]) {
            *g += beta * a;
        }
    }
    let (enc_grads, _) = state.params.encoder.backward(&enc_trace, dz, false);
    state
        .optimizers
        .encoder
        .update(&mut state.params.encoder.params, &enc_grads);
    state
        .optimizers
        .discriminator
        .update(&mut state.params.discriminator.params, &disc_grads);

    Ok(AbsAeLosses {
        reconstruction: finite_or("reconstruction", recon as f64)?,
        adversarial: finite_or("adversarial", adversarial as f64)?,
        critic: finite_or("discriminator", critic as f64)?,
    })
}

/// Stacks tuples into relational-learner input rows.
pub fn tuple_rows(arch: &ArchConfig, tuples: &[RelationTuple]) -> Result<(Matrix<f32>, Vec<usize>)> {
    let mut data = Vec::with_capacity(tuples.len() * arch.relational_input_dim());
    for t in tuples {
        let inputs: Vec<Vec<f32>> = t
            .input_codes
            .iter()
            .map(|c| c.iter().map(|&v| v as f32).collect())
            .collect();
        let refs: Vec<&[f32]> = inputs.iter().map(Vec::as_slice).collect();
        let code: Vec<f32> = t.relation_code.iter().map(|&v| v as f32).collect();
        data.extend(crate::networks::relational_input(arch, &refs, &code)?);
    }
    let targets = tuples.iter().map(|t| t.target).collect();
    Ok((
        Matrix::from_vec(tuples.len(), arch.relational_input_dim(), data),
        targets,
    ))
}

/// One descent step of γ·relational loss; only relational parameters move.
pub fn train_step_rel(state: &mut TrainState, tuples: &[RelationTuple], gamma: f64) -> Result<f64> {
    let prior = state
        .prior
        .as_ref()
        .ok_or_else(|| Error::Config("relational training needs an estimated prior (full phase)".into()))?;
    if tuples.is_empty() {
        return Err(Error::Config("empty tuple batch".into()));
    }
    let (rows, targets) = tuple_rows(&state.params.arch, tuples)?;
    let trace = state.params.relational.forward_trace(&rows);
    let (loss, mut grad) = relational_loss(prior, trace.output(), &targets)?;
    let loss = finite_or("relational", loss as f64)?;
    let gamma = gamma as f32;
    grad.data_mut().iter_mut().for_each(|g| *g *= gamma);
    let (grads, _) = state.params.relational.backward(&trace, grad, false);
    state
        .optimizers
        .relational
        .update(&mut state.params.relational.params, &grads);
    Ok(loss)
}

/// Per-epoch loss averages; `loss_total = ae + β·disc + γ·rel`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub phase: Phase,
    pub loss_ae: f64,
    pub loss_disc: f64,
    pub loss_rel: f64,
    pub loss_total: f64,
}

pub fn write_history(path: &Path, records: &[EpochRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["epoch", "phase", "loss_ae", "loss_disc", "loss_rel", "loss_total"])?;
    for r in records {
        w.write_record([
            r.epoch.to_string(),
            r.phase.name().to_string(),
            r.loss_ae.to_string(),
            r.loss_disc.to_string(),
            r.loss_rel.to_string(),
            r.loss_total.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_history(path: &Path) -> Result<Vec<EpochRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for row in r.records() {
        let row = row?;
        let num = |i: usize| -> Result<f64> {
            row.get(i)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::Malformed(format!("history row has bad field {i}")))
        };
        let phase = match row.get(1) {
            Some("warmup") => Phase::Warmup,
            Some("full") => Phase::Full,
            _ => return Err(Error::Malformed("history row has bad phase".into())),
        };
        out.push(EpochRecord {
            epoch: num(0)? as usize,
            phase,
            loss_ae: num(2)?,
            loss_disc: num(3)?,
            loss_rel: num(4)?,
            loss_total: num(5)?,
        });
    }
    Ok(out)
}

/// Channel-major image rows for the given sample indices.
pub fn image_matrix(dataset: &Dataset, indices: &[usize]) -> Matrix<f32> {
    let len = dataset.image_len();
    let mut data = Vec::with_capacity(indices.len() * len);
    for &i in indices {
        data.extend(hwc_to_chw(
            &dataset.samples[i].pixels,
            dataset.height,
            dataset.width,
            dataset.channels,
        ));
    }
    Matrix::from_vec(indices.len(), len, data)
}

/// Encodes rows in chunks to bound memory.
pub fn encode_all(params: &NetworkParams<f32>, images: &Matrix<f32>) -> Result<Vec<Vec<f64>>> {
    const CHUNK: usize = 256;
    let mut out = Vec::with_capacity(images.rows());
    for start in (0..images.rows()).step_by(CHUNK) {
        let end = (start + CHUNK).min(images.rows());
        let chunk = Matrix::from_vec(
            end - start,
            images.cols(),
            images.data()[start * images.cols()..end * images.cols()].to_vec(),
        );
        let z = params.encode(&chunk)?;
        out.extend(z.iter_rows().map(|r| r.iter().map(|&v| v as f64).collect::<Vec<_>>()));
    }
    Ok(out)
}

/// Encodes the labeled subset and fits one component per combination.
/// The result is rounded to f32 so checkpointing it is lossless.
pub fn estimate_prior_from_labeled(
    params: &NetworkParams<f32>,
    dataset: &Dataset,
    labeled: &LabeledSubset,
    variance_floor: f64,
) -> Result<GmPrior> {
    let mut codes = Vec::with_capacity(labeled.by_combination.len());
    for group in &labeled.by_combination {
        codes.push(encode_all(params, &image_matrix(dataset, group))?);
    }
    Ok(estimate_prior(&codes, variance_floor)?.to_f32_precision())
}

/// Drives training epoch by epoch over a dataset's training split.
pub struct Trainer<'a> {
    pub config: TrainConfig,
    dataset: &'a Dataset,
    labeled: &'a LabeledSubset,
    relations: &'a [RelationDef],
    train_images: Matrix<f32>,
}

impl<'a> Trainer<'a> {
    pub fn new(
        config: TrainConfig,
        dataset: &'a Dataset,
        labeled: &'a LabeledSubset,
        relations: &'a [RelationDef],
    ) -> Result<Self> {
        config.validate()?;
        if labeled.by_combination.len() != dataset.space.n() {
            return Err(Error::Config("labeled subset does not match the factor space".into()));
        }
        if relations.is_empty() && config.full_epochs > 0 {
            return Err(Error::Config("the full phase needs at least one relation".into()));
        }
        let train = dataset.splits.get(Split::Train);
        if train.is_empty() {
            return Err(Error::InsufficientSamples("empty training split".into()));
        }
        Ok(Trainer {
            config,
            dataset,
            labeled,
            relations,
            train_images: image_matrix(dataset, train),
        })
    }

    /// Fresh parameters for `arch` seeded by the config.
    pub fn init_state(&self, arch: &ArchConfig) -> Result<TrainState> {
        if arch.image_len() != self.dataset.image_len() || arch.channels != self.dataset.channels {
            return Err(Error::Config(
                "architecture does not match the dataset image shape".into(),
            ));
        }
        TrainState::init(arch, &self.config)
    }

    /// Generator for epoch `epoch`; depends only on the seed and the epoch
    /// so a resumed run replays the same stream.
    fn epoch_rng(&self, epoch: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(epoch as u64 + 1);
        rng
    }

    fn needs_prior(&self, state: &TrainState) -> bool {
        let c = &self.config;
        if state.epoch < c.warmup_epochs {
            return false;
        }
        let since = state.epoch - c.warmup_epochs;
        state.prior.is_none() || (c.refresh_every > 0 && since > 0 && since.is_multiple_of(c.refresh_every))
    }

    /// Runs one epoch and advances `state.epoch`.
    pub fn run_epoch(&self, state: &mut TrainState) -> Result<EpochRecord> {
        let c = &self.config;
        if state.epoch < c.warmup_epochs {
            state.prior = None;
        } else if self.needs_prior(state) {
            state.prior = Some(estimate_prior_from_labeled(
                &state.params,
                self.dataset,
                self.labeled,
                c.variance_floor,
            )?);
        }
        let phase = state.phase(c);
        let mut rng = self.epoch_rng(state.epoch);
        let mut order: Vec<usize> = (0..self.train_images.rows()).collect();
        order.shuffle(&mut rng);
        let cols = self.train_images.cols();
        let code_dim = state.params.arch.relation_code_dim;
        let (mut ae, mut adv, mut rel, mut steps) = (0.0, 0.0, 0.0, 0usize);
        for batch in order.chunks(c.batch_absae) {
            let mut data = Vec::with_capacity(batch.len() * cols);
            for &i in batch {
                data.extend_from_slice(self.train_images.row(i));
            }
            let images = Matrix::from_vec(batch.len(), cols, data);
            let losses = train_step_absae(state, &images, c.beta, &mut rng)?;
            ae += losses.reconstruction;
            adv += losses.adversarial;
            if phase == Phase::Full {
                let prior = state.prior.as_ref().expect("full phase has a prior");
                let tuples = (0..c.batch_rel)
                    .map(|_| sample_relation_tuple(prior, self.relations, code_dim, &mut rng))
                    .collect::<Result<Vec<_>>>()?;
                rel += train_step_rel(state, &tuples, c.gamma)?;
            }
            steps += 1;
        }
        let n = steps as f64;
        let (loss_ae, loss_disc, loss_rel) = (ae / n, adv / n, rel / n);
        let record = EpochRecord {
            epoch: state.epoch,
            phase,
            loss_ae,
            loss_disc,
            loss_rel,
            loss_total: loss_ae + c.beta * loss_disc + c.gamma * loss_rel,
        };
        state.epoch += 1;
        Ok(record)
    }

    /// Runs until `until_epoch` (capped at the configured total), calling
    /// `on_epoch` after each epoch; returning `false` stops early.
    pub fn run<F>(&self, state: &mut TrainState, until_epoch: usize, mut on_epoch: F) -> Result<Vec<EpochRecord>>
    where
        F: FnMut(&TrainState, &EpochRecord) -> Result<bool>,
    {
        let stop = until_epoch.min(self.config.total_epochs());
        let mut history = Vec::new();
        while state.epoch < stop {
            let record = self.run_epoch(state)?;
            let go_on = on_epoch(state, &record)?;
            history.push(record);
            if !go_on {
                break;
            }
        }
        if state.epoch >= self.config.warmup_epochs && state.prior.is_none() {
            state.prior = Some(estimate_prior_from_labeled(
                &state.params,
                self.dataset,
                self.labeled,
                self.config.variance_floor,
            )?);
        }
        Ok(history)
    }
}

/// Trains from scratch for the full schedule.
pub fn run_training(
    config: &TrainConfig,
    arch: &ArchConfig,
    dataset: &Dataset,
    labeled: &LabeledSubset,
    relations: &[RelationDef],
) -> Result<(TrainState, Vec<EpochRecord>)> {
    let trainer = Trainer::new(config.clone(), dataset, labeled, relations)?;
    let mut state = trainer.init_state(arch)?;
    let history = trainer.run(&mut state, usize::MAX, |_, _| Ok(true))?;
    Ok((state, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{label_subset, make_dataset, DatasetConfig};
    use crate::factors::{builtin_relations, FactorSpace, Preset};

    fn tiny_arch(channels: usize) -> ArchConfig {
        ArchConfig {
            conv_channels: vec![4, 8],
            mlp_width: 16,
            ..ArchConfig::new(4, 8, 8, channels)
        }
        .with_relations(1, 5)
    }

    fn tiny_config() -> TrainConfig {
        TrainConfig {
            warmup_epochs: 2,
            full_epochs: 2,
            batch_absae: 16,
            batch_rel: 8,
            learning_rate: 1e-3,
            refresh_every: 1,
            seed: 11,
            ..TrainConfig::default()
        }
    }

    fn tiny_data() -> (Dataset, LabeledSubset, Vec<RelationDef>) {
        let space = FactorSpace::from_preset(Preset::Dsprites);
        let ds = make_dataset(&space, &DatasetConfig::new(Preset::Dsprites, 4, 8, 3)).unwrap();
        let labeled = label_subset(&ds, 1, 0).unwrap();
        let rels = builtin_relations(&space, Preset::Dsprites).unwrap();
        (ds, labeled, rels)
    }

    #[test]
    fn default_schedule() {
        let c = TrainConfig::default();
        assert_eq!((c.warmup_epochs, c.full_epochs, c.total_epochs()), (1000, 5000, 6000));
        assert_eq!((c.batch_absae, c.batch_rel, c.learning_rate), (1024, 128, 1e-4));
        assert!(TrainConfig {
            beta: -1.0,
            ..c.clone()
        }
        .validate()
        .is_err());
        assert!(TrainConfig {
            learning_rate: 0.0,
            ..c
        }
        .validate()
        .is_err());
    }

    #[test]
    fn rel_step_touches_only_relational_params() {
        let mut state = TrainState::init(&tiny_arch(1), &tiny_config()).unwrap();
        let (_, _, rels) = tiny_data();
        let tuple =
            || make_relation_tuple(&GmPrior::isotropic(vec![vec![0.0; 4]; 27], 1.0).unwrap(), &rels, 5, 1).unwrap();
        assert!(train_step_rel(&mut state, &[tuple()], 1.0).is_err());
        state.prior = Some(GmPrior::isotropic((0..27).map(|i| vec![i as f64; 4]).collect(), 1.0).unwrap());
        let before = state.params.clone();
        train_step_rel(&mut state, &[tuple(), tuple()], 1.0).unwrap();
        assert_eq!(before.encoder, state.params.encoder);
        assert_eq!(before.decoder, state.params.decoder);
        assert_eq!(before.discriminator, state.params.discriminator);
        assert_ne!(before.relational, state.params.relational);

        let mut fresh = TrainState::init(&tiny_arch(1), &tiny_config()).unwrap();
        fresh.prior = state.prior.clone();
        let frozen = fresh.params.relational.clone();
        train_step_rel(&mut fresh, &[tuple()], 0.0).unwrap();
        assert_eq!(frozen, fresh.params.relational);
        assert_eq!(fresh.optimizers.relational.step, 1);
    }

    #[test]
    fn beta_zero_encoder_ignores_discriminator() {
        let (ds, _, _) = tiny_data();
        let images = image_matrix(&ds, &[0, 1, 2, 3]);
        let mut a = TrainState::init(&tiny_arch(1), &tiny_config()).unwrap();
        let mut b = a.clone();
        for p in &mut b.params.discriminator.params {
            p.data.iter_mut().for_each(|v| *v = -*v * 3.0);
        }
        train_step_absae(&mut a, &images, 0.0, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        train_step_absae(&mut b, &images, 0.0, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(a.params.encoder, b.params.encoder);
        assert_eq!(a.params.decoder, b.params.decoder);
    }

    #[test]
    fn training_is_deterministic_and_records_history() {
        let (ds, labeled, rels) = tiny_data();
        let arch = tiny_arch(1);
        let (s1, h1) = run_training(&tiny_config(), &arch, &ds, &labeled, &rels).unwrap();
        let (s2, h2) = run_training(&tiny_config(), &arch, &ds, &labeled, &rels).unwrap();
        assert_eq!(s1, s2);
        assert_eq!(h1, h2);
        assert_eq!(h1.len(), 4);
        assert_eq!(h1[0].phase, Phase::Warmup);
        assert_eq!(h1[3].phase, Phase::Full);
        assert_eq!(h1[1].loss_rel, 0.0);
        assert!(h1[3].loss_rel > 0.0);
        for r in &h1 {
            assert!((r.loss_total - (r.loss_ae + r.loss_disc + r.loss_rel)).abs() < 1e-12);
        }
        assert!(s1.prior.is_some());
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let (ds, labeled, rels) = tiny_data();
        let arch = tiny_arch(1);
        let config = tiny_config();
        let (full, _) = run_training(&config, &arch, &ds, &labeled, &rels).unwrap();
        for stop in [1, 3] {
            let trainer = Trainer::new(config.clone(), &ds, &labeled, &rels).unwrap();
            let mut state = trainer.init_state(&arch).unwrap();
            trainer.run(&mut state, stop, |_, _| Ok(true)).unwrap();
            let bytes = state.to_checkpoint().to_bytes();
            let mut resumed =
                TrainState::from_checkpoint(&Checkpoint::from_bytes(&bytes).unwrap(), config.learning_rate).unwrap();
            assert_eq!(resumed.epoch, stop);
            trainer.run(&mut resumed, usize::MAX, |_, _| Ok(true)).unwrap();
            assert_eq!(resumed, full);
        }
    }

    #[test]
    fn history_csv_round_trip() {
        let records = vec![EpochRecord {
            epoch: 3,
            phase: Phase::Full,
            loss_ae: 0.25,
            loss_disc: 0.7,
            loss_rel: 3.5,
            loss_total: 4.45,
        }];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("history.csv");
        write_history(&path, &records).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("epoch,phase,loss_ae,loss_disc,loss_rel,loss_total\n"));
        assert_eq!(read_history(&path).unwrap(), records);
    }

    #[test]
    fn counters_survive_f32() {
        for v in [0u64, 1, 16_777_217, 123_456_789_012] {
            assert_eq!(counter_from_f32(&counter_to_f32(v)).unwrap(), v);
        }
    }
}
