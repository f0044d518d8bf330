//! Latent classification with rejection, relational accuracy at depth,
//! disentanglement metrics on factor-decoded codes, and reconstruction error.

mod metrics;

pub use metrics::{dci, mig, sap, DciScores, DCI_L1_PENALTY, MI_BINS};

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datasets::Dataset;
use crate::error::{Error, Result};
use crate::factors::{FactorSpace, RelationDef};
use crate::networks::{relational_input, NetworkParams};
use crate::nn::Matrix;
use crate::prior::GmPrior;
use crate::training::{encode_all, image_matrix, reconstruction_loss, relation_code, ReconKind};

/// Default α thresholds for the classification and relational sweeps.
pub const DEFAULT_ALPHAS: [f64; 6] = [0.0, 0.1, 0.3, 0.5, 0.7, 0.9];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterEvalRow {
    pub alpha: f64,
    pub tau: usize,
    /// Over accepted samples; 0 when none are accepted.
    pub accuracy: f64,
    pub acceptance_ratio: f64,
    pub n_evaluated: usize,
    pub n_accepted: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelEvalRow {
    pub alpha: f64,
    pub depth: usize,
    pub accuracy: f64,
    pub acceptance_ratio: f64,
    pub trials: usize,
}

fn check_alphas(alphas: &[f64]) -> Result<()> {
    match alphas.iter().find(|a| !(0.0..=1.0).contains(*a)) {
        Some(a) => Err(Error::Config(format!("alpha {a} is outside [0, 1]"))),
        None => Ok(()),
    }
}

/// Accuracy/acceptance of a set of (responsibility, argmax, truth) triples.
fn score(outcomes: &[(f64, usize, usize)], alpha: f64) -> (f64, f64, usize) {
    let accepted: Vec<_> = outcomes.iter().filter(|o| o.0 >= alpha).collect();
    let correct = accepted.iter().filter(|o| o.1 == o.2).count();
    let accuracy = if accepted.is_empty() {
        0.0
    } else {
        correct as f64 / accepted.len() as f64
    };
    (accuracy, accepted.len() as f64 / outcomes.len() as f64, accepted.len())
}

/// Classifies codes with rejection at each α against their true
/// combination indices.
pub fn cluster_eval_codes(
    prior: &GmPrior,
    codes: &[Vec<f64>],
    labels: &[usize],
    alphas: &[f64],
    tau: usize,
) -> Result<Vec<ClusterEvalRow>> {
    check_alphas(alphas)?;
    if codes.is_empty() {
        return Err(Error::InsufficientSamples("empty evaluation set".into()));
    }
    if codes.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} codes for {} labels",
            codes.len(),
            labels.len()
        )));
    }
    let outcomes: Vec<(f64, usize, usize)> = codes
        .iter()
        .zip(labels)
        .map(|(z, &y)| {
            let c = prior.classify(z, 0.0);
            (c.responsibility, c.argmax, y)
        })
        .collect();
    Ok(alphas
        .iter()
        .map(|&alpha| {
            let (accuracy, acceptance_ratio, n_accepted) = score(&outcomes, alpha);
            ClusterEvalRow {
                alpha,
                tau,
                accuracy,
                acceptance_ratio,
                n_evaluated: outcomes.len(),
                n_accepted,
            }
        })
        .collect())
}

/// Encodes the labeled samples among `indices` and runs
/// [`cluster_eval_codes`].
pub fn cluster_eval(
    params: &NetworkParams<f32>,
    prior: &GmPrior,
    dataset: &Dataset,
    indices: &[usize],
    alphas: &[f64],
    tau: usize,
) -> Result<Vec<ClusterEvalRow>> {
    let labeled: Vec<usize> = indices
        .iter()
        .copied()
        .filter(|&i| dataset.samples[i].combination.is_some())
        .collect();
    let labels: Vec<usize> = labeled
        .iter()
        .map(|&i| dataset.samples[i].combination.unwrap())
        .collect();
    let codes = encode_all(params, &image_matrix(dataset, &labeled))?;
    cluster_eval_codes(prior, &codes, &labels, alphas, tau)
}

/// One application of a relation to concrete codes.
#[derive(Clone, Debug, PartialEq)]
pub struct RelationQuery {
    pub relation: usize,
    pub input_codes: Vec<Vec<f64>>,
    pub relation_code: Vec<f64>,
}

/// Anything that maps input codes plus a relation code to an output code.
pub trait RelationalMap {
    fn apply(&self, queries: &[RelationQuery]) -> Result<Vec<Vec<f64>>>;

    /// Width of the relation code this map expects.
    fn relation_code_dim(&self) -> usize;
}

impl RelationalMap for NetworkParams<f32> {
    fn apply(&self, queries: &[RelationQuery]) -> Result<Vec<Vec<f64>>> {
        let width = self.arch.relational_input_dim();
        let mut data = Vec::with_capacity(queries.len() * width);
        for q in queries {
            let inputs: Vec<Vec<f32>> = q
                .input_codes
                .iter()
                .map(|c| c.iter().map(|&v| v as f32).collect())
                .collect();
            let refs: Vec<&[f32]> = inputs.iter().map(Vec::as_slice).collect();
            let code: Vec<f32> = q.relation_code.iter().map(|&v| v as f32).collect();
            data.extend(relational_input(&self.arch, &refs, &code)?);
        }
        let out = self.relate_batch(&Matrix::from_vec(queries.len(), width, data))?;
        Ok(out.iter_rows().map(|r| r.iter().map(|&v| v as f64).collect()).collect())
    }

    fn relation_code_dim(&self) -> usize {
        self.arch.relation_code_dim
    }
}

struct Rollout {
    state: usize,
    code: Vec<f64>,
}

/// Picks a relation valid from `state` and a matching pre-state, both
/// uniformly. `None` when no relation applies.
fn choose_step<R: Rng>(relations: &[RelationDef], state: usize, rng: &mut R) -> Option<(usize, Vec<usize>)> {
    let usable: Vec<usize> = (0..relations.len())
        .filter(|&r| relations[r].valid_inputs_from(state).next().is_some())
        .collect();
    if usable.is_empty() {
        return None;
    }
    let r = usable[rng.gen_range(0..usable.len())];
    let options: Vec<&[usize]> = relations[r].valid_inputs_from(state).collect();
    Some((r, options[rng.gen_range(0..options.len())].to_vec()))
}

/// Chains `depth` randomly chosen relations through `map`, starting from
/// a code drawn from a uniformly chosen component, and classifies the final
/// code with rejection. Rollouts that reach a state with no applicable
/// relation are restarted. The same rollouts are scored at every α.
#[allow(clippy::too_many_arguments)]
pub fn relational_eval<M: RelationalMap + ?Sized>(
    prior: &GmPrior,
    map: &M,
    space: &FactorSpace,
    relations: &[RelationDef],
    depths: &[usize],
    alphas: &[f64],
    trials: usize,
    seed: u64,
) -> Result<Vec<RelEvalRow>> {
    check_alphas(alphas)?;
    if trials == 0 || relations.is_empty() {
        return Err(Error::Config("relational evaluation needs trials and relations".into()));
    }
    if prior.n() != space.n() {
        return Err(Error::Config("prior and factor space disagree on N".into()));
    }
    if (0..prior.n()).all(|s| relations.iter().all(|r| r.valid_inputs_from(s).next().is_none())) {
        return Err(Error::Config("no relation has a valid input from any state".into()));
    }
    let code_dim = map.relation_code_dim();
    let mut rows = Vec::new();
    for &depth in depths {
        if depth == 0 {
            return Err(Error::Config("depth must be ≥ 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(depth as u64);
        let mut outcomes = Vec::with_capacity(trials);
        let mut barren = 0;
        while outcomes.len() < trials {
            let batch = (trials - outcomes.len()).max(64);
            let mut rollouts: Vec<Rollout> = (0..batch)
                .map(|_| {
                    let state = rng.gen_range(0..prior.n());
                    Rollout {
                        code: prior.draw(state, &mut rng),
                        state,
                    }
                })
                .collect();
            let mut alive = vec![true; batch];
            for _ in 0..depth {
                let mut queries = Vec::new();
                let mut owners = Vec::new();
                for (i, ro) in rollouts.iter_mut().enumerate() {
                    if !alive[i] {
                        continue;
                    }
                    let Some((r, inputs)) = choose_step(relations, ro.state, &mut rng) else {
                        alive[i] = false;
                        continue;
                    };
                    let mut input_codes = vec![ro.code.clone()];
                    input_codes.extend(inputs[1..].iter().map(|&c| prior.draw(c, &mut rng)));
                    let rel_code = relation_code(prior, relations, r, code_dim, &mut rng)?;
                    ro.state = relations[r].apply(&inputs)?;
                    queries.push(RelationQuery {
                        relation: r,
                        input_codes,
                        relation_code: rel_code,
                    });
                    owners.push(i);
                }
                if queries.is_empty() {
                    break;
                }
                for (i, out) in owners.into_iter().zip(map.apply(&queries)?) {
                    rollouts[i].code = out;
                }
            }
            let before = outcomes.len();
            for (ro, ok) in rollouts.iter().zip(&alive) {
                if *ok && outcomes.len() < trials {
                    let c = prior.classify(&ro.code, 0.0);
                    outcomes.push((c.responsibility, c.argmax, ro.state));
                }
            }
            barren = if outcomes.len() == before { barren + 1 } else { 0 };
            if barren >= 100 {
                return Err(Error::Config(format!(
                    "no relation chain of depth {depth} could be sampled"
                )));
            }
        }
        for &alpha in alphas {
            let (accuracy, acceptance_ratio, _) = score(&outcomes, alpha);
            rows.push(RelEvalRow {
                alpha,
                depth,
                accuracy,
                acceptance_ratio,
                trials,
            });
        }
    }
    Ok(rows)
}

/// Factor value indices of each code's most likely component.
pub fn factor_decode(prior: &GmPrior, space: &FactorSpace, codes: &[Vec<f64>]) -> Result<Vec<Vec<usize>>> {
    if prior.n() != space.n() {
        return Err(Error::Config("prior and factor space disagree on N".into()));
    }
    codes
        .iter()
        .map(|z| space.value_indices(prior.classify(z, 0.0).argmax))
        .collect()
}

/// Mean reconstruction loss (training definition) over `indices`.
pub fn reconstruction_error(params: &NetworkParams<f32>, dataset: &Dataset, indices: &[usize]) -> Result<f64> {
    if indices.is_empty() {
        return Err(Error::InsufficientSamples("no samples to reconstruct".into()));
    }
    let kind = ReconKind::for_channels(dataset.channels);
    let mut total = 0.0;
    for chunk in indices.chunks(256) {
        let x = image_matrix(dataset, chunk);
        let x_hat = params.decode(&params.encode(&x)?)?;
        let (loss, _) = reconstruction_loss(&x, &x_hat, kind)?;
        total += loss as f64 * chunk.len() as f64;
    }
    Ok(total / indices.len() as f64)
}

/// Scores reported for a trained model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub dci: f64,
    pub dci_disentanglement: f64,
    pub dci_completeness: f64,
    pub dci_informativeness: f64,
    pub mig: f64,
    pub sap: f64,
    pub reconstruction_error: f64,
}

/// Encodes `indices`, decodes codes into factor values and scores them
/// against the true factors. Metrics need at least two generative factors.
pub fn metric_report(
    params: &NetworkParams<f32>,
    prior: &GmPrior,
    dataset: &Dataset,
    indices: &[usize],
) -> Result<MetricReport> {
    let labeled: Vec<usize> = indices
        .iter()
        .copied()
        .filter(|&i| dataset.samples[i].combination.is_some())
        .collect();
    let codes = encode_all(params, &image_matrix(dataset, &labeled))?;
    let decoded = factor_decode(prior, &dataset.space, &codes)?;
    let representation: Vec<Vec<f64>> = decoded.iter().map(|r| r.iter().map(|&v| v as f64).collect()).collect();
    let truth = labeled
        .iter()
        .map(|&i| dataset.space.value_indices(dataset.samples[i].combination.unwrap()))
        .collect::<Result<Vec<_>>>()?;
    let d = dci(&representation, &truth)?;
    Ok(MetricReport {
        dci: d.average,
        dci_disentanglement: d.disentanglement,
        dci_completeness: d.completeness,
        dci_informativeness: d.informativeness,
        mig: mig(&representation, &truth)?,
        sap: sap(&representation, &truth)?,
        reconstruction_error: reconstruction_error(params, dataset, indices)?,
    })
}

pub fn write_cluster_csv(path: &Path, dataset: &str, rows: &[ClusterEvalRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["dataset", "alpha", "tau", "acc", "ar"])?;
    for r in rows {
        w.write_record([
            dataset.to_string(),
            r.alpha.to_string(),
            r.tau.to_string(),
            format!("{:.4}", r.accuracy),
            format!("{:.4}", r.acceptance_ratio),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_relational_csv(path: &Path, dataset: &str, rows: &[RelEvalRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["dataset", "alpha", "depth", "acc", "ar"])?;
    for r in rows {
        w.write_record([
            dataset.to_string(),
            r.alpha.to_string(),
            r.depth.to_string(),
            format!("{:.4}", r.accuracy),
            format!("{:.4}", r.acceptance_ratio),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::factors::{builtin_relations, Preset};

    fn grid_prior(n: usize, dim: usize, spacing: f64, var: f64) -> GmPrior {
        let means = (0..n)
            .map(|i| {
                (0..dim)
                    .map(|d| {
                        if d == i % dim {
                            spacing * (1 + i / dim) as f64
                        } else {
                            0.0
                        }
                    })
                    .collect()
            })
            .collect();
        GmPrior::isotropic(means, var).unwrap()
    }

    #[test]
    fn means_classify_perfectly_and_alpha_zero_accepts_all() {
        let prior = grid_prior(27, 8, 10.0, 1.0);
        let codes: Vec<Vec<f64>> = prior.means().to_vec();
        let labels: Vec<usize> = (0..27).collect();
        let rows = cluster_eval_codes(&prior, &codes, &labels, &DEFAULT_ALPHAS, 10).unwrap();
        for r in &rows {
            assert_eq!(r.accuracy, 1.0);
        }
        assert_eq!(rows[0].acceptance_ratio, 1.0);
        assert_eq!(rows[0].n_accepted, rows[0].n_evaluated);
        assert!(cluster_eval_codes(&prior, &[], &[], &[0.0], 1).is_err());
        assert!(cluster_eval_codes(&prior, &codes, &labels, &[1.5], 1).is_err());
    }

    #[test]
    fn acceptance_is_monotone() {
        let prior = grid_prior(9, 4, 1.0, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let labels: Vec<usize> = (0..500).map(|i| i % 9).collect();
        let codes: Vec<Vec<f64>> = labels.iter().map(|&l| prior.draw(l, &mut rng)).collect();
        let alphas: Vec<f64> = (0..=20).map(|i| i as f64 / 20.0).collect();
        let rows = cluster_eval_codes(&prior, &codes, &labels, &alphas, 1).unwrap();
        for w in rows.windows(2) {
            assert!(w[1].acceptance_ratio <= w[0].acceptance_ratio);
        }
    }

    #[test]
    fn factor_decode_inverts_combinations() {
        let space = FactorSpace::from_preset(Preset::Dsprites);
        let prior = grid_prior(27, 8, 10.0, 0.5);
        let decoded = factor_decode(&prior, &space, prior.means()).unwrap();
        assert_eq!(decoded.len(), 27);
        for (i, row) in decoded.iter().enumerate() {
            assert_eq!(row.len(), 3);
            assert_eq!(*row, space.value_indices(i).unwrap());
        }
    }

    struct Symbolic<'a> {
        prior: &'a GmPrior,
        relations: &'a [RelationDef],
    }

    impl RelationalMap for Symbolic<'_> {
        fn apply(&self, queries: &[RelationQuery]) -> Result<Vec<Vec<f64>>> {
            queries
                .iter()
                .map(|q| {
                    let states: Vec<usize> = q
                        .input_codes
                        .iter()
                        .map(|z| self.prior.classify(z, 0.0).argmax)
                        .collect();
                    Ok(self.prior.mean(self.relations[q.relation].apply(&states)?).to_vec())
                })
                .collect()
        }

        fn relation_code_dim(&self) -> usize {
            8
        }
    }

    #[test]
    fn symbolic_map_is_exact_at_every_depth() {
        for preset in [Preset::Dsprites, Preset::HwfLike] {
            let space = FactorSpace::from_preset(preset);
            let rels = builtin_relations(&space, preset).unwrap();
            let prior = grid_prior(space.n(), 8, 12.0, 0.5);
            let map = Symbolic {
                prior: &prior,
                relations: &rels,
            };
            let rows = relational_eval(&prior, &map, &space, &rels, &[1, 3, 6], &[0.0, 0.9], 300, 2).unwrap();
            assert_eq!(rows.len(), 6);
            for r in rows {
                assert_eq!(r.accuracy, 1.0, "{preset} depth {}", r.depth);
            }
        }
    }

    #[test]
    fn random_network_is_near_chance() {
        let space = FactorSpace::from_preset(Preset::Dsprites);
        let rels = builtin_relations(&space, Preset::Dsprites).unwrap();
        let prior = grid_prior(27, 8, 10.0, 1.0);
        let arch = crate::networks::ArchConfig {
            conv_channels: vec![],
            mlp_width: 16,
            ..crate::networks::ArchConfig::new(8, 4, 4, 1)
        }
        .with_relations(1, 5);
        let net = NetworkParams::<f32>::init(&arch, 3).unwrap();
        let rows = relational_eval(&prior, &net, &space, &rels, &[1], &[0.0], 2000, 1).unwrap();
        assert!(rows[0].accuracy < 0.25, "{}", rows[0].accuracy);
    }
}
