//! Relation tuples sampled directly from the prior.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::factors::RelationDef;
use crate::prior::GmPrior;

/// Input codes, relation code and target component of one ReL example.
#[derive(Clone, Debug, PartialEq)]
pub struct RelationTuple {
    pub relation: usize,
    pub input_components: Vec<usize>,
    pub input_codes: Vec<Vec<f64>>,
    pub relation_code: Vec<f64>,
    pub target: usize,
}

/// Code identifying relation `index`: a draw from its operator component
/// when it has one, otherwise a one-hot vector of length `code_dim`.
pub fn relation_code<R: Rng>(
    prior: &GmPrior,
    relations: &[RelationDef],
    index: usize,
    code_dim: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let rel = relations.get(index).ok_or(Error::IndexOutOfRange {
        index,
        n: relations.len(),
    })?;
    let mut code = vec![0.0; code_dim];
    match rel.operator_component {
        Some(c) => {
            if c >= prior.n() || prior.latent_dim() > code_dim {
                return Err(Error::Shape(format!(
                    "operator component {c} does not fit the relation code"
                )));
            }
            code[..prior.latent_dim()].copy_from_slice(&prior.draw(c, rng));
        }
        None => {
            if index >= code_dim {
                return Err(Error::Shape(format!(
                    "relation {index} does not fit a {code_dim}-wide code"
                )));
            }
            code[index] = 1.0;
        }
    }
    Ok(code)
}

/// Samples a relation uniformly, one of its valid pre-states uniformly, and
/// a code from each input component.
pub fn sample_relation_tuple<R: Rng>(
    prior: &GmPrior,
    relations: &[RelationDef],
    code_dim: usize,
    rng: &mut R,
) -> Result<RelationTuple> {
    if relations.is_empty() {
        return Err(Error::Config("no relations to sample".into()));
    }
    let relation = rng.gen_range(0..relations.len());
    let rel = &relations[relation];
    let count = rel.valid_input_count();
    if count == 0 {
        return Err(Error::Config(format!("relation `{}` has no valid inputs", rel.name)));
    }
    let inputs = rel.valid_inputs().nth(rng.gen_range(0..count)).unwrap().to_vec();
    if let Some(&bad) = inputs.iter().find(|&&i| i >= prior.n()) {
        return Err(Error::IndexOutOfRange {
            index: bad,
            n: prior.n(),
        });
    }
    let input_codes = inputs.iter().map(|&i| prior.draw(i, rng)).collect();
    let relation_code = relation_code(prior, relations, relation, code_dim, rng)?;
    let target = rel.apply(&inputs)?;
    Ok(RelationTuple {
        relation,
        input_components: inputs,
        input_codes,
        relation_code,
        target,
    })
}

/// Seeded form of [`sample_relation_tuple`].
pub fn make_relation_tuple(
    prior: &GmPrior,
    relations: &[RelationDef],
    code_dim: usize,
    seed: u64,
) -> Result<RelationTuple> {
    sample_relation_tuple(prior, relations, code_dim, &mut ChaCha8Rng::seed_from_u64(seed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::factors::{builtin_relations, FactorSpace, Preset};

    fn prior_for(n: usize, dim: usize) -> GmPrior {
        let means = (0..n)
            .map(|i| (0..dim).map(|d| ((i * 7 + d * 3) % 11) as f64).collect())
            .collect();
        GmPrior::isotropic(means, 0.01).unwrap()
    }

    #[test]
    fn tuples_respect_valid_inputs() {
        for preset in Preset::ALL {
            let space = FactorSpace::from_preset(preset);
            let rels = builtin_relations(&space, preset).unwrap();
            let prior = prior_for(space.n(), 8);
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            for _ in 0..2000 {
                let t = sample_relation_tuple(&prior, &rels, 8, &mut rng).unwrap();
                let rel = &rels[t.relation];
                assert!(rel.is_valid(&t.input_components));
                assert_eq!(t.target, rel.apply(&t.input_components).unwrap());
                assert_eq!(t.input_codes.len(), rel.arity);
            }
        }
    }

    #[test]
    fn hwf_relation_code_comes_from_operator_component() {
        let space = FactorSpace::from_preset(Preset::HwfLike);
        let rels = builtin_relations(&space, Preset::HwfLike).unwrap();
        let prior = prior_for(13, 8);
        let code = relation_code(&prior, &rels, 0, 8, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let plus = space.combination(&["+"]).unwrap().index;
        assert_eq!(prior.classify(&code, 0.0).argmax, plus);
    }

    #[test]
    fn one_hot_codes_and_empty_relations() {
        let space = FactorSpace::from_preset(Preset::Dsprites);
        let rels = builtin_relations(&space, Preset::Dsprites).unwrap();
        let prior = prior_for(27, 8);
        let code = relation_code(&prior, &rels, 2, 8, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(code, vec![0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert!(make_relation_tuple(&prior, &[], 8, 0).is_err());
        assert_eq!(
            make_relation_tuple(&prior, &rels, 8, 5).unwrap(),
            make_relation_tuple(&prior, &rels, 8, 5).unwrap()
        );
    }
}
