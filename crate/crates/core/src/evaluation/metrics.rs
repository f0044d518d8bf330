//! MIG, SAP and DCI on a samples × dimensions representation against
//! samples × factors integer labels.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Equal-width bins per representation dimension.
pub const MI_BINS: usize = 20;

/// L1 weight of the DCI logistic predictors.
pub const DCI_L1_PENALTY: f64 = 1e-3;

const DCI_ITERATIONS: usize = 500;

/// Seed of the fixed half/half split used by the supervised scores.
const SPLIT_SEED: u64 = 0x5eed;

struct Columns {
    rep: Vec<Vec<f64>>,
    factors: Vec<Vec<usize>>,
    cardinalities: Vec<usize>,
}

/// Transposes to column-major and checks shapes and factor variation.
fn columns(representation: &[Vec<f64>], factors: &[Vec<usize>]) -> Result<Columns> {
    if representation.len() != factors.len() || representation.len() < 2 {
        return Err(Error::Shape(format!(
            "{} representation rows for {} factor rows",
            representation.len(),
            factors.len()
        )));
    }
    let d = representation[0].len();
    let k = factors[0].len();
    if d == 0 || k == 0 {
        return Err(Error::Shape(
            "representation and factors need at least one column".into(),
        ));
    }
    if representation.iter().any(|r| r.len() != d) || factors.iter().any(|f| f.len() != k) {
        return Err(Error::Shape("ragged rows".into()));
    }
    if representation.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("representation has non-finite values".into()));
    }
    let rep: Vec<Vec<f64>> = (0..d).map(|j| representation.iter().map(|r| r[j]).collect()).collect();
    let factor_cols: Vec<Vec<usize>> = (0..k).map(|j| factors.iter().map(|f| f[j]).collect()).collect();
    let mut cardinalities = Vec::with_capacity(k);
    for (j, col) in factor_cols.iter().enumerate() {
        let max = *col.iter().max().unwrap();
        if col.iter().all(|&v| v == col[0]) {
            return Err(Error::InsufficientSamples(format!("factor {j} is constant")));
        }
        cardinalities.push(max + 1);
    }
    Ok(Columns {
        rep,
        factors: factor_cols,
        cardinalities,
    })
}

/// Bin edges `[min, max]` split into `MI_BINS` equal cells.
fn bin_range(values: &[f64]) -> (f64, f64) {
    values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
        (lo.min(v), hi.max(v))
    })
}

fn bin_of(v: f64, (lo, hi): (f64, f64)) -> usize {
    if hi <= lo {
        return 0;
    }
    (((v - lo) / (hi - lo) * MI_BINS as f64).floor().max(0.0) as usize).min(MI_BINS - 1)
}

fn entropy(counts: &[usize], total: usize) -> f64 {
    let n = total as f64;
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

fn mutual_information(bins: &[usize], labels: &[usize], cardinality: usize) -> f64 {
    let n = bins.len();
    let mut joint = vec![0usize; MI_BINS * cardinality];
    let mut pb = vec![0usize; MI_BINS];
    let mut pv = vec![0usize; cardinality];
    for (&b, &v) in bins.iter().zip(labels) {
        joint[b * cardinality + v] += 1;
        pb[b] += 1;
        pv[v] += 1;
    }
    (entropy(&pb, n) + entropy(&pv, n) - entropy(&joint, n)).max(0.0)
}

/// Mutual information gap: per factor, the difference between the two
/// largest dimension/factor mutual informations over the factor entropy,
/// averaged over factors.
pub fn mig(representation: &[Vec<f64>], factors: &[Vec<usize>]) -> Result<f64> {
    let cols = columns(representation, factors)?;
    let binned: Vec<Vec<usize>> = cols
        .rep
        .iter()
        .map(|c| {
            let range = bin_range(c);
            c.iter().map(|&v| bin_of(v, range)).collect()
        })
        .collect();
    let mut total = 0.0;
    for (f, &card) in cols.factors.iter().zip(&cols.cardinalities) {
        let mut counts = vec![0usize; card];
        f.iter().for_each(|&v| counts[v] += 1);
        let h = entropy(&counts, f.len());
        let mut mi: Vec<f64> = binned.iter().map(|b| mutual_information(b, f, card)).collect();
        mi.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let gap = mi[0] - mi.get(1).copied().unwrap_or(0.0);
        total += gap / h;
    }
    Ok((total / cols.factors.len() as f64).clamp(0.0, 1.0))
}

fn holdout_split(n: usize) -> (Vec<usize>, Vec<usize>) {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(SPLIT_SEED));
    let test = order.split_off(n / 2);
    (order, test)
}

fn majority(labels: impl Iterator<Item = usize>, cardinality: usize) -> usize {
    let mut counts = vec![0usize; cardinality];
    labels.for_each(|v| counts[v] += 1);
    // First index wins ties.
    counts
        .iter()
        .enumerate()
        .fold((0, 0), |best, (i, &c)| if c > best.1 { (i, c) } else { best })
        .0
}

/// Attribute predictability gap. Each dimension predicts each factor with a
/// binned majority-vote classifier fit on one half of the samples; held-out
/// accuracy is rescaled so the majority-class baseline scores 0. The score
/// is the mean over factors of best minus second-best dimension.
pub fn sap(representation: &[Vec<f64>], factors: &[Vec<usize>]) -> Result<f64> {
    let cols = columns(representation, factors)?;
    let (train, test) = holdout_split(representation.len());
    let mut total = 0.0;
    for (f, &card) in cols.factors.iter().zip(&cols.cardinalities) {
        let global = majority(train.iter().map(|&i| f[i]), card);
        let chance = test.iter().filter(|&&i| f[i] == global).count() as f64 / test.len() as f64;
        let mut scores: Vec<f64> = cols
            .rep
            .iter()
            .map(|dim| {
                let range = bin_range(&train.iter().map(|&i| dim[i]).collect::<Vec<_>>());
                let mut counts = vec![vec![0usize; card]; MI_BINS];
                for &i in &train {
                    counts[bin_of(dim[i], range)][f[i]] += 1;
                }
                let predict: Vec<usize> = counts
                    .iter()
                    .map(|c| {
                        if c.iter().all(|&x| x == 0) {
                            global
                        } else {
                            majority(c.iter().enumerate().flat_map(|(v, &n)| std::iter::repeat_n(v, n)), card)
                        }
                    })
                    .collect();
                let acc =
                    test.iter().filter(|&&i| predict[bin_of(dim[i], range)] == f[i]).count() as f64 / test.len() as f64;
                if chance >= 1.0 {
                    0.0
                } else {
                    (acc - chance) / (1.0 - chance)
                }
            })
            .collect();
        scores.sort_by(|a, b| b.partial_cmp(a).unwrap());
        total += scores[0] - scores.get(1).copied().unwrap_or(0.0);
    }
    Ok((total / cols.factors.len() as f64).clamp(0.0, 1.0))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DciScores {
    pub disentanglement: f64,
    pub completeness: f64,
    pub informativeness: f64,
    pub average: f64,
}

/// Multinomial logistic regression with an L1 penalty on the weights,
/// fit by accelerated proximal gradient. Inputs are one-hot bin indices,
/// one per representation dimension, so a row is `dims` active features.
struct Logistic {
    /// `classes × dims × MI_BINS`.
    weights: Vec<f64>,
    bias: Vec<f64>,
    classes: usize,
    dims: usize,
}

impl Logistic {
    fn weight_index(&self, class: usize, dim: usize, bin: usize) -> usize {
        (class * self.dims + dim) * MI_BINS + bin
    }

    fn logits(&self, row: &[usize], out: &mut [f64]) {
        for (c, o) in out.iter_mut().enumerate() {
            *o = self.bias[c]
                + row
                    .iter()
                    .enumerate()
                    .map(|(j, &b)| self.weights[self.weight_index(c, j, b)])
                    .sum::<f64>();
        }
    }

    fn predict(&self, row: &[usize]) -> usize {
        let mut z = vec![0.0; self.classes];
        self.logits(row, &mut z);
        z.iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |b, (i, &v)| if v > b.1 { (i, v) } else { b })
            .0
    }

    fn fit(x: &[Vec<usize>], y: &[usize], classes: usize, penalty: f64) -> Self {
        let (n, dims) = (x.len(), x[0].len());
        // Softmax curvature is at most 1/2 per unit squared feature norm.
        let step = 1.0 / (0.5 * (dims as f64 + 1.0));
        let mut model = Logistic {
            weights: vec![0.0; classes * dims * MI_BINS],
            bias: vec![0.0; classes],
            classes,
            dims,
        };
        let (mut prev_w, mut prev_b) = (model.weights.clone(), model.bias.clone());
        let mut t = 1.0f64;
        let mut probs = vec![0.0; classes];
        for _ in 0..DCI_ITERATIONS {
            let mut gw = vec![0.0; model.weights.len()];
            let mut gb = vec![0.0; classes];
            for (row, &label) in x.iter().zip(y) {
                model.logits(row, &mut probs);
                let max = probs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for p in probs.iter_mut() {
                    *p = (*p - max).exp();
                    total += *p;
                }
                for (c, p) in probs.iter().enumerate() {
                    let r = p / total - if c == label { 1.0 } else { 0.0 };
                    gb[c] += r;
                    for (j, &b) in row.iter().enumerate() {
                        gw[model.weight_index(c, j, b)] += r;
                    }
                }
            }
            let inv = 1.0 / n as f64;
            let shrink = step * penalty;
            let next_w: Vec<f64> = model
                .weights
                .iter()
                .zip(&gw)
                .map(|(w, g)| {
                    let v = w - step * g * inv;
                    v.signum() * (v.abs() - shrink).max(0.0)
                })
                .collect();
            let next_b: Vec<f64> = model.bias.iter().zip(&gb).map(|(b, g)| b - step * g * inv).collect();
            let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
            let momentum = (t - 1.0) / t_next;
            model.weights = next_w
                .iter()
                .zip(&prev_w)
                .map(|(w, p)| w + momentum * (w - p))
                .collect();
            model.bias = next_b
                .iter()
                .zip(&prev_b)
                .map(|(b, p)| b + momentum * (b - p))
                .collect();
            prev_w = next_w;
            prev_b = next_b;
            t = t_next;
        }
        model.weights = prev_w;
        model.bias = prev_b;
        model
    }

    /// Mean absolute weight of a dimension over its bins and all classes.
    fn importance(&self, dim: usize) -> f64 {
        let mut total = 0.0;
        for c in 0..self.classes {
            for b in 0..MI_BINS {
                total += self.weights[self.weight_index(c, dim, b)].abs();
            }
        }
        total / (self.classes * MI_BINS) as f64
    }
}

/// 1 − normalized entropy of a nonnegative vector; 1 for a single entry.
fn concentration(weights: &[f64]) -> f64 {
    let total: f64 = weights.iter().sum();
    if weights.len() < 2 || total <= 0.0 {
        return if total > 0.0 { 1.0 } else { 0.0 };
    }
    let h: f64 = weights
        .iter()
        .filter(|&&w| w > 0.0)
        .map(|&w| {
            let p = w / total;
            -p * p.ln()
        })
        .sum();
    1.0 - h / (weights.len() as f64).ln()
}

/// Disentanglement, completeness and informativeness from per-factor L1
/// logistic predictors. Each dimension enters the predictor as a one-hot
/// over `MI_BINS` equal-width bins (range taken from the fitting half), and
/// its importance for a factor is its mean absolute weight.
pub fn dci(representation: &[Vec<f64>], factors: &[Vec<usize>]) -> Result<DciScores> {
    let cols = columns(representation, factors)?;
    let (train, test) = holdout_split(representation.len());
    let d = cols.rep.len();
    let binned: Vec<Vec<usize>> = cols
        .rep
        .iter()
        .map(|c| {
            let range = bin_range(&train.iter().map(|&i| c[i]).collect::<Vec<_>>());
            c.iter().map(|&v| bin_of(v, range)).collect()
        })
        .collect();
    let rows =
        |idx: &[usize]| -> Vec<Vec<usize>> { idx.iter().map(|&i| binned.iter().map(|c| c[i]).collect()).collect() };
    let (x_train, x_test) = (rows(&train), rows(&test));

    let k = cols.factors.len();
    let mut importance = vec![vec![0.0; k]; d];
    let mut informativeness = 0.0;
    for (f_idx, (f, &card)) in cols.factors.iter().zip(&cols.cardinalities).enumerate() {
        let y_train: Vec<usize> = train.iter().map(|&i| f[i]).collect();
        let model = Logistic::fit(&x_train, &y_train, card, DCI_L1_PENALTY);
        for (j, imp) in importance.iter_mut().enumerate() {
            imp[f_idx] = model.importance(j);
        }
        let global = majority(y_train.iter().copied(), card);
        let chance = test.iter().filter(|&&i| f[i] == global).count() as f64 / test.len() as f64;
        let acc = x_test
            .iter()
            .zip(&test)
            .filter(|(row, &i)| model.predict(row) == f[i])
            .count() as f64
            / test.len() as f64;
        if chance < 1.0 {
            informativeness += ((acc - chance) / (1.0 - chance)).clamp(0.0, 1.0);
        }
    }
    informativeness /= k as f64;

    let total: f64 = importance.iter().flatten().sum();
    if total <= 0.0 {
        return Err(Error::Numeric("degenerate importance matrix (all zeros)".into()));
    }
    let disentanglement: f64 = importance
        .iter()
        .map(|row| row.iter().sum::<f64>() / total * concentration(row))
        .sum();
    let completeness = (0..k)
        .map(|f| concentration(&importance.iter().map(|row| row[f]).collect::<Vec<_>>()))
        .sum::<f64>()
        / k as f64;
    let clamp = |v: f64| v.clamp(0.0, 1.0);
    let (disentanglement, completeness) = (clamp(disentanglement), clamp(completeness));
    Ok(DciScores {
        disentanglement,
        completeness,
        informativeness,
        average: (disentanglement + completeness + informativeness) / 3.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    /// Every combination of factors with the given cardinalities, `reps` times.
    fn grid(cards: &[usize], reps: usize) -> Vec<Vec<usize>> {
        let n: usize = cards.iter().product();
        let mut out = Vec::new();
        for _ in 0..reps {
            for mut i in 0..n {
                let mut row = vec![0; cards.len()];
                for (j, &c) in cards.iter().enumerate().rev() {
                    row[j] = i % c;
                    i /= c;
                }
                out.push(row);
            }
        }
        out
    }

    fn as_rep(f: &[Vec<usize>]) -> Vec<Vec<f64>> {
        f.iter().map(|r| r.iter().map(|&v| v as f64).collect()).collect()
    }

    #[test]
    fn perfect_representation_scores_high() {
        let f = grid(&[3, 3, 3], 20);
        let rep = as_rep(&f);
        assert!((mig(&rep, &f).unwrap() - 1.0).abs() < 0.02);
        assert!((sap(&rep, &f).unwrap() - 1.0).abs() < 0.02);
        let d = dci(&rep, &f).unwrap();
        assert!(d.average >= 0.98, "{d:?}");
    }

    #[test]
    fn random_representation_scores_low() {
        let f = grid(&[3, 3, 3], 200);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let rep: Vec<Vec<f64>> = f.iter().map(|_| (0..3).map(|_| rng.gen::<f64>()).collect()).collect();
        assert!(mig(&rep, &f).unwrap() <= 0.05);
        assert!(sap(&rep, &f).unwrap() <= 0.05);
        let d = dci(&rep, &f).unwrap();
        assert!(d.average <= 0.05, "{d:?}");
    }

    #[test]
    fn duplicated_best_dimension_closes_the_gap() {
        let f = grid(&[3, 4], 10);
        let rep: Vec<Vec<f64>> = f.iter().map(|r| vec![r[0] as f64, r[0] as f64, r[1] as f64]).collect();
        let single: Vec<Vec<usize>> = f.iter().map(|r| vec![r[0]]).collect();
        assert!(mig(&rep, &single).unwrap().abs() < 1e-12);
        let d = dci(&rep, &f).unwrap();
        assert!(d.completeness < 0.9, "{d:?}");
    }

    #[test]
    fn scores_ignore_column_order() {
        let f = grid(&[3, 2, 4], 15);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let rep: Vec<Vec<f64>> = f
            .iter()
            .map(|r| {
                vec![
                    r[0] as f64 + 0.3 * rng.gen::<f64>(),
                    rng.gen(),
                    r[2] as f64 * 0.5 + rng.gen::<f64>(),
                ]
            })
            .collect();
        let perm: Vec<Vec<f64>> = rep.iter().map(|r| vec![r[2], r[0], r[1]]).collect();
        assert!((mig(&rep, &f).unwrap() - mig(&perm, &f).unwrap()).abs() < 1e-12);
        assert!((sap(&rep, &f).unwrap() - sap(&perm, &f).unwrap()).abs() < 1e-12);
        let (a, b) = (dci(&rep, &f).unwrap(), dci(&perm, &f).unwrap());
        assert!((a.average - b.average).abs() < 1e-9);
    }

    #[test]
    fn constant_factor_is_rejected() {
        let f = vec![vec![0, 1], vec![0, 0], vec![0, 1]];
        let rep = vec![vec![0.0], vec![1.0], vec![2.0]];
        assert!(mig(&rep, &f).is_err());
        assert!(sap(&rep, &f).is_err());
        assert!(dci(&rep, &f).is_err());
    }
}
