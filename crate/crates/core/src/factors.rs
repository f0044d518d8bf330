//! Factor grammars, mixed-radix enumeration of factor combinations, and
//! relations expressed as transitions between combination indices.
//!
//! Each dataset is described by an ordered list of factors. Non-nuisance
//! (generative) factors define the combinations that become prior
//! components; nuisance factors are carried along for rendering and labels
//! but never appear in a combination. Combinations are ranked
//! lexicographically in mixed radix over the declared factor order, so the
//! first generative factor is the most significant digit.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Built-in dataset layouts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Preset {
    #[serde(rename = "hwf-like")]
    HwfLike,
    #[serde(rename = "dsprites")]
    Dsprites,
    #[serde(rename = "shapes3d")]
    Shapes3d,
}

impl Preset {
    pub const ALL: [Preset; 3] = [Preset::HwfLike, Preset::Dsprites, Preset::Shapes3d];

    pub fn name(self) -> &'static str {
        match self {
            Preset::HwfLike => "hwf-like",
            Preset::Dsprites => "dsprites",
            Preset::Shapes3d => "shapes3d",
        }
    }

    /// Image channels used by the preset's renderer.
    pub fn channels(self) -> usize {
        match self {
            Preset::Shapes3d => 3,
            _ => 1,
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hwf-like" | "hwf" => Ok(Preset::HwfLike),
            "dsprites" => Ok(Preset::Dsprites),
            "shapes3d" => Ok(Preset::Shapes3d),
            other => Err(Error::UnknownPreset(other.to_string())),
        }
    }
}

/// One labeled attribute of the data and its ordered value alphabet.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FactorSpec {
    pub name: String,
    pub values: Vec<String>,
    pub is_nuisance: bool,
}

impl FactorSpec {
    pub fn new<S: Into<String>>(name: S, values: Vec<String>, is_nuisance: bool) -> Result<Self> {
        let spec = FactorSpec {
            name: name.into(),
            values,
            is_nuisance,
        };
        spec.validate()?;
        Ok(spec)
    }

    fn generative(name: &str, values: &[&str]) -> Self {
        FactorSpec {
            name: name.to_string(),
            values: values.iter().map(|v| v.to_string()).collect(),
            is_nuisance: false,
        }
    }

    fn nuisance(name: &str, values: Vec<String>) -> Self {
        FactorSpec {
            name: name.to_string(),
            values,
            is_nuisance: true,
        }
    }

    fn validate(&self) -> Result<()> {
        if !is_token(&self.name) {
            return Err(Error::InvalidSpace(format!("bad factor name `{}`", self.name)));
        }
        if self.values.is_empty() {
            return Err(Error::InvalidSpace(format!("factor `{}` has no values", self.name)));
        }
        let mut seen = HashSet::new();
        for v in &self.values {
            if !is_token(v) {
                return Err(Error::InvalidSpace(format!(
                    "bad value label `{v}` in factor `{}`",
                    self.name
                )));
            }
            if !seen.insert(v.as_str()) {
                return Err(Error::InvalidSpace(format!(
                    "duplicate value `{v}` in factor `{}`",
                    self.name
                )));
            }
        }
        Ok(())
    }

    pub fn cardinality(&self) -> usize {
        self.values.len()
    }

    pub fn value_index(&self, label: &str) -> Option<usize> {
        self.values.iter().position(|v| v == label)
    }
}

/// Labels and identifiers must survive the line-oriented factor file and CSV.
fn is_token(s: &str) -> bool {
    !s.is_empty() && !s.chars().any(|c| c.is_whitespace() || c == ',' || c == '"' || c == '>')
}

/// A joint assignment of every generative factor.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FactorCombination {
    pub values: Vec<String>,
    pub index: usize,
}

/// Ordered factor grammar of a dataset.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FactorSpace {
    factors: Vec<FactorSpec>,
    generative: Vec<usize>,
    nuisance: Vec<usize>,
    preset: Option<Preset>,
}

impl FactorSpace {
    /// Builds a custom space. At least one factor must be generative and
    /// factor names must be unique.
    pub fn custom(factors: Vec<FactorSpec>) -> Result<Self> {
        Self::assemble(factors, None)
    }

    pub fn from_preset(preset: Preset) -> Self {
        let factors = match preset {
            Preset::HwfLike => vec![
                FactorSpec::generative("symbol", &HWF_SYMBOLS),
                FactorSpec::nuisance("thickness", labels(&["thin", "regular", "bold"])),
                FactorSpec::nuisance("style", numbered(16)),
            ],
            Preset::Dsprites => vec![
                FactorSpec::generative("x_position", &["left", "center", "right"]),
                FactorSpec::generative("y_position", &["up", "center", "down"]),
                FactorSpec::generative("shape", &["ellipse", "square", "heart"]),
                FactorSpec::nuisance("scale", labels(&["0.5", "0.6", "0.7", "0.8", "0.9", "1.0"])),
                FactorSpec::nuisance("orientation", (0..40).map(|i| (i * 9).to_string()).collect()),
            ],
            Preset::Shapes3d => vec![
                FactorSpec::generative(
                    "object_hue",
                    &["0.0", "0.1", "0.2", "0.3", "0.4", "0.5", "0.6", "0.7", "0.8", "0.9"],
                ),
                FactorSpec::generative("shape", &["cube", "sphere", "cylinder", "ellipsoid"]),
                FactorSpec::generative("scale", &["small", "medium", "big"]),
                FactorSpec::nuisance("floor_hue", numbered(10)),
                FactorSpec::nuisance("wall_hue", numbered(10)),
                FactorSpec::nuisance("orientation", numbered(15)),
            ],
        };
        Self::assemble(factors, Some(preset)).expect("preset layouts are valid")
    }

    fn assemble(factors: Vec<FactorSpec>, preset: Option<Preset>) -> Result<Self> {
        let mut names = HashSet::new();
        for f in &factors {
            f.validate()?;
            if !names.insert(f.name.as_str()) {
                return Err(Error::InvalidSpace(format!("duplicate factor name `{}`", f.name)));
            }
        }
        let generative: Vec<usize> = (0..factors.len()).filter(|&i| !factors[i].is_nuisance).collect();
        let nuisance: Vec<usize> = (0..factors.len()).filter(|&i| factors[i].is_nuisance).collect();
        if generative.is_empty() {
            return Err(Error::InvalidSpace("no generative factors".into()));
        }
        Ok(FactorSpace {
            factors,
            generative,
            nuisance,
            preset,
        })
    }

    pub fn preset(&self) -> Option<Preset> {
        self.preset
    }

    pub fn factors(&self) -> &[FactorSpec] {
        &self.factors
    }

    pub fn generative_factors(&self) -> impl Iterator<Item = &FactorSpec> + '_ {
        self.generative.iter().map(move |&i| &self.factors[i])
    }

    pub fn nuisance_factors(&self) -> impl Iterator<Item = &FactorSpec> + '_ {
        self.nuisance.iter().map(move |&i| &self.factors[i])
    }

    /// Number of generative factors (K).
    pub fn k(&self) -> usize {
        self.generative.len()
    }

    /// Number of factor combinations (N).
    pub fn n(&self) -> usize {
        self.generative_factors().map(FactorSpec::cardinality).product()
    }

    /// Position of a generative factor by name, in generative order.
    pub fn generative_position(&self, name: &str) -> Option<usize> {
        self.generative_factors().position(|f| f.name == name)
    }

    pub fn nuisance_position(&self, name: &str) -> Option<usize> {
        self.nuisance_factors().position(|f| f.name == name)
    }

    /// Generative value indices of combination `index` (most significant first).
    pub fn value_indices(&self, index: usize) -> Result<Vec<usize>> {
        let n = self.n();
        if index >= n {
            return Err(Error::IndexOutOfRange { index, n });
        }
        let mut rest = index;
        let mut out = vec![0; self.k()];
        let radices: Vec<usize> = self.generative_factors().map(FactorSpec::cardinality).collect();
        for (slot, radix) in out.iter_mut().zip(radices).rev() {
            *slot = rest % radix;
            rest /= radix;
        }
        Ok(out)
    }

    /// Mixed-radix rank of generative value indices.
    pub fn index_of_values(&self, values: &[usize]) -> Result<usize> {
        if values.len() != self.k() {
            return Err(Error::Shape(format!(
                "expected {} factor values, got {}",
                self.k(),
                values.len()
            )));
        }
        let mut index = 0;
        for (&v, f) in values.iter().zip(self.generative_factors()) {
            if v >= f.cardinality() {
                return Err(Error::UnknownValue {
                    factor: f.name.clone(),
                    value: v.to_string(),
                });
            }
            index = index * f.cardinality() + v;
        }
        Ok(index)
    }

    /// Builds a combination from generative value labels.
    pub fn combination(&self, labels: &[&str]) -> Result<FactorCombination> {
        if labels.len() != self.k() {
            return Err(Error::Shape(format!(
                "expected {} factor values, got {}",
                self.k(),
                labels.len()
            )));
        }
        let idx = labels
            .iter()
            .zip(self.generative_factors())
            .map(|(l, f)| {
                f.value_index(l).ok_or_else(|| Error::UnknownValue {
                    factor: f.name.clone(),
                    value: l.to_string(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let index = self.index_of_values(&idx)?;
        Ok(FactorCombination {
            values: labels.iter().map(|s| s.to_string()).collect(),
            index,
        })
    }

    pub fn combination_to_index(&self, combo: &FactorCombination) -> Result<usize> {
        let labels: Vec<&str> = combo.values.iter().map(String::as_str).collect();
        Ok(self.combination(&labels)?.index)
    }

    pub fn index_to_combination(&self, index: usize) -> Result<FactorCombination> {
        let idx = self.value_indices(index)?;
        let values = idx
            .iter()
            .zip(self.generative_factors())
            .map(|(&v, f)| f.values[v].clone())
            .collect();
        Ok(FactorCombination { values, index })
    }
}

const HWF_SYMBOLS: [&str; 13] = ["0", "1", "2", "3", "4", "5", "6", "7", "8", "9", "+", "-", "*"];

/// Index of the first operator symbol in the hwf-like alphabet.
pub const HWF_DIGITS: usize = 10;

fn labels(values: &[&str]) -> Vec<String> {
    values.iter().map(|v| v.to_string()).collect()
}

fn numbered(n: usize) -> Vec<String> {
    (0..n).map(|i| i.to_string()).collect()
}

/// Parses a preset name or falls back to an error naming it.
pub fn build_factor_space(preset: &str) -> Result<FactorSpace> {
    Ok(FactorSpace::from_preset(preset.parse()?))
}

/// How a relation computes its output.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RelationRule {
    /// Move one generative factor by `delta`; pre-states that would leave
    /// the value range are excluded.
    Step { factor: String, delta: i64 },
    /// Advance one generative factor by one, wrapping around.
    Cycle { factor: String },
    /// Integer arithmetic over digit components. The operator is identified
    /// by the combination holding `operator` in the symbol factor.
    Arithmetic { op: ArithOp, operator: String },
    /// Explicit transition table.
    Table,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ArithOp {
    Sum,
    Subtraction,
    Multiplication,
}

impl ArithOp {
    fn name(self) -> &'static str {
        match self {
            ArithOp::Sum => "sum",
            ArithOp::Subtraction => "subtraction",
            ArithOp::Multiplication => "multiplication",
        }
    }

    fn eval(self, a: i64, b: i64) -> i64 {
        match self {
            ArithOp::Sum => a + b,
            ArithOp::Subtraction => a - b,
            ArithOp::Multiplication => a * b,
        }
    }
}

impl FromStr for ArithOp {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sum" => Ok(ArithOp::Sum),
            "subtraction" => Ok(ArithOp::Subtraction),
            "multiplication" => Ok(ArithOp::Multiplication),
            other => Err(Error::UnknownRelation(other.to_string())),
        }
    }
}

/// A named relation of fixed arity, tabulated over its valid pre-states.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationDef {
    pub name: String,
    pub arity: usize,
    pub rule: RelationRule,
    /// Combination index whose code identifies this relation, when the
    /// relation is carried by a data symbol (hwf-like operators).
    pub operator_component: Option<usize>,
    transitions: BTreeMap<Vec<usize>, usize>,
}

impl RelationDef {
    /// Builds a relation from an explicit transition table.
    pub fn from_table(
        space: &FactorSpace,
        name: &str,
        arity: usize,
        transitions: BTreeMap<Vec<usize>, usize>,
    ) -> Result<Self> {
        if arity == 0 {
            return Err(Error::InvalidSpace(format!("relation `{name}` has arity 0")));
        }
        if !is_token(name) {
            return Err(Error::InvalidSpace(format!("bad relation name `{name}`")));
        }
        let n = space.n();
        for (inputs, &out) in &transitions {
            if inputs.len() != arity || inputs.iter().any(|&i| i >= n) || out >= n {
                return Err(Error::InvalidSpace(format!(
                    "relation `{name}` has out-of-range entry {inputs:?} -> {out}"
                )));
            }
        }
        Ok(RelationDef {
            name: name.to_string(),
            arity,
            rule: RelationRule::Table,
            operator_component: None,
            transitions,
        })
    }

    /// Builds a relation from a rule, tabulating it over the space.
    pub fn from_rule(space: &FactorSpace, name: &str, rule: RelationRule) -> Result<Self> {
        let n = space.n();
        let mut transitions = BTreeMap::new();
        let (arity, operator_component) = match &rule {
            RelationRule::Step { factor, delta } => {
                let pos = space
                    .generative_position(factor)
                    .ok_or_else(|| Error::InvalidSpace(format!("no generative factor `{factor}`")))?;
                let card = space.generative_factors().nth(pos).unwrap().cardinality() as i64;
                for i in 0..n {
                    let mut v = space.value_indices(i)?;
                    let moved = v[pos] as i64 + delta;
                    if (0..card).contains(&moved) {
                        v[pos] = moved as usize;
                        transitions.insert(vec![i], space.index_of_values(&v)?);
                    }
                }
                (1, None)
            }
            RelationRule::Cycle { factor } => {
                let pos = space
                    .generative_position(factor)
                    .ok_or_else(|| Error::InvalidSpace(format!("no generative factor `{factor}`")))?;
                let card = space.generative_factors().nth(pos).unwrap().cardinality();
                for i in 0..n {
                    let mut v = space.value_indices(i)?;
                    v[pos] = (v[pos] + 1) % card;
                    transitions.insert(vec![i], space.index_of_values(&v)?);
                }
                (1, None)
            }
            RelationRule::Arithmetic { op, operator } => {
                if space.k() != 1 {
                    return Err(Error::InvalidSpace(
                        "arithmetic relations need a single symbol factor".into(),
                    ));
                }
                let symbols = &space.generative_factors().next().unwrap().values;
                let digit = |label: &str| label.parse::<i64>().ok().filter(|d| (0..=9).contains(d));
                let op_index = symbols
                    .iter()
                    .position(|s| s == operator)
                    .ok_or_else(|| Error::UnknownValue {
                        factor: "symbol".into(),
                        value: operator.clone(),
                    })?;
                let digits: Vec<(usize, i64)> = symbols
                    .iter()
                    .enumerate()
                    .filter_map(|(i, s)| digit(s).map(|d| (i, d)))
                    .collect();
                for &(i, a) in &digits {
                    for &(j, b) in &digits {
                        let r = op.eval(a, b);
                        if let Some(&(k, _)) = digits.iter().find(|&&(_, d)| d == r) {
                            transitions.insert(vec![i, j], k);
                        }
                    }
                }
                (2, Some(op_index))
            }
            RelationRule::Table => {
                return Err(Error::InvalidSpace(
                    "table relations are built with RelationDef::from_table".into(),
                ))
            }
        };
        let mut rel = RelationDef::from_table(space, name, arity, transitions)?;
        rel.rule = rule;
        rel.operator_component = operator_component;
        Ok(rel)
    }

    pub fn valid_inputs(&self) -> impl Iterator<Item = &[usize]> + '_ {
        self.transitions.keys().map(Vec::as_slice)
    }

    pub fn transitions(&self) -> impl Iterator<Item = (&[usize], usize)> + '_ {
        self.transitions.iter().map(|(k, &v)| (k.as_slice(), v))
    }

    pub fn valid_input_count(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_valid(&self, inputs: &[usize]) -> bool {
        self.transitions.contains_key(inputs)
    }

    /// Valid pre-states whose first argument is `first`.
    pub fn valid_inputs_from(&self, first: usize) -> impl Iterator<Item = &[usize]> + '_ {
        self.transitions
            .range(vec![first]..)
            .take_while(move |(k, _)| k[0] == first)
            .map(|(k, _)| k.as_slice())
    }

    pub fn apply(&self, inputs: &[usize]) -> Result<usize> {
        self.transitions
            .get(inputs)
            .copied()
            .ok_or_else(|| Error::InvalidPreState {
                relation: self.name.clone(),
                inputs: inputs.to_vec(),
            })
    }
}

pub fn apply_relation(rel: &RelationDef, inputs: &[usize]) -> Result<usize> {
    rel.apply(inputs)
}

/// The relation set each preset is trained on.
pub fn builtin_relations(space: &FactorSpace, preset: Preset) -> Result<Vec<RelationDef>> {
    let step = |factor: &str, delta| RelationRule::Step {
        factor: factor.to_string(),
        delta,
    };
    let cycle = |factor: &str| RelationRule::Cycle {
        factor: factor.to_string(),
    };
    let rules: Vec<(&str, RelationRule)> = match preset {
        Preset::HwfLike => [
            (ArithOp::Sum, "+"),
            (ArithOp::Subtraction, "-"),
            (ArithOp::Multiplication, "*"),
        ]
        .into_iter()
        .map(|(op, sym)| {
            (
                op.name(),
                RelationRule::Arithmetic {
                    op,
                    operator: sym.to_string(),
                },
            )
        })
        .collect(),
        Preset::Dsprites => vec![
            ("move_left", step("x_position", -1)),
            ("move_right", step("x_position", 1)),
            ("move_up", step("y_position", -1)),
            ("move_down", step("y_position", 1)),
            ("change_shape", cycle("shape")),
        ],
        Preset::Shapes3d => vec![
            ("+_hue", step("object_hue", 1)),
            ("-_hue", step("object_hue", -1)),
            ("change_shape", cycle("shape")),
            ("+_scale", step("scale", 1)),
            ("-_scale", step("scale", -1)),
        ],
    };
    rules
        .into_iter()
        .map(|(name, rule)| RelationDef::from_rule(space, name, rule))
        .collect()
}

/// Largest arity in a relation set.
pub fn max_arity(relations: &[RelationDef]) -> usize {
    relations.iter().map(|r| r.arity).max().unwrap_or(1)
}

/// Serializes a factor space and relation set to the line-oriented text form:
///
/// ```text
/// preset dsprites
/// factor x_position generative left,center,right
/// factor scale nuisance 0.5,0.6
/// relation move_left 1 step x_position -1
/// relation change_shape 1 cycle shape
/// relation sum 2 arithmetic sum +
/// relation swap 1 table 0>1 1>0
/// ```
pub fn to_spec_text(space: &FactorSpace, relations: &[RelationDef]) -> String {
    let mut out = String::new();
    if let Some(p) = space.preset() {
        out.push_str(&format!("preset {p}\n"));
    }
    for f in space.factors() {
        let kind = if f.is_nuisance { "nuisance" } else { "generative" };
        out.push_str(&format!("factor {} {} {}\n", f.name, kind, f.values.join(",")));
    }
    for r in relations {
        let body = match &r.rule {
            RelationRule::Step { factor, delta } => format!("step {factor} {delta}"),
            RelationRule::Cycle { factor } => format!("cycle {factor}"),
            RelationRule::Arithmetic { op, operator } => format!("arithmetic {} {operator}", op.name()),
            RelationRule::Table => {
                let entries: Vec<String> = r
                    .transitions()
                    .map(|(inp, o)| {
                        let inp: Vec<String> = inp.iter().map(|i| i.to_string()).collect();
                        format!("{}>{o}", inp.join(","))
                    })
                    .collect();
                format!("table {}", entries.join(" "))
            }
        };
        out.push_str(&format!("relation {} {} {body}\n", r.name, r.arity));
    }
    out
}

/// Parses the text form written by [`to_spec_text`].
pub fn parse_spec_text(text: &str) -> Result<(FactorSpace, Vec<RelationDef>)> {
    let bad = |line: &str| Error::InvalidSpace(format!("cannot parse line `{line}`"));
    let mut preset = None;
    let mut factors = Vec::new();
    let mut relation_lines = Vec::new();
    for raw in text.lines() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        match parts[0] {
            "preset" if parts.len() == 2 => preset = Some(parts[1].parse::<Preset>()?),
            "factor" if parts.len() == 4 => {
                let is_nuisance = match parts[2] {
                    "nuisance" => true,
                    "generative" => false,
                    _ => return Err(bad(line)),
                };
                let values = parts[3].split(',').map(str::to_string).collect();
                factors.push(FactorSpec::new(parts[1], values, is_nuisance)?);
            }
            "relation" if parts.len() >= 4 => relation_lines.push(parts),
            _ => return Err(bad(line)),
        }
    }
    let mut space = FactorSpace::custom(factors)?;
    if let Some(p) = preset {
        if FactorSpace::from_preset(p).factors() == space.factors() {
            space.preset = Some(p);
        }
    }
    let mut relations = Vec::new();
    for parts in relation_lines {
        let line = parts.join(" ");
        let name = parts[1];
        let arity: usize = parts[2].parse().map_err(|_| bad(&line))?;
        let rel = match (parts[3], &parts[4..]) {
            ("step", [factor, delta]) => RelationDef::from_rule(
                &space,
                name,
                RelationRule::Step {
                    factor: factor.to_string(),
                    delta: delta.parse().map_err(|_| bad(&line))?,
                },
            )?,
            ("cycle", [factor]) => RelationDef::from_rule(
                &space,
                name,
                RelationRule::Cycle {
                    factor: factor.to_string(),
                },
            )?,
            ("arithmetic", [op, operator]) => RelationDef::from_rule(
                &space,
                name,
                RelationRule::Arithmetic {
                    op: op.parse()?,
                    operator: operator.to_string(),
                },
            )?,
            ("table", entries) => {
                let mut table = BTreeMap::new();
                for e in entries {
                    let (lhs, rhs) = e.split_once('>').ok_or_else(|| bad(&line))?;
                    let inputs = lhs
                        .split(',')
                        .map(|s| s.parse::<usize>().map_err(|_| bad(&line)))
                        .collect::<Result<Vec<_>>>()?;
                    table.insert(inputs, rhs.parse().map_err(|_| bad(&line))?);
                }
                RelationDef::from_table(&space, name, arity, table)?
            }
            _ => return Err(bad(&line)),
        };
        if rel.arity != arity {
            return Err(Error::InvalidSpace(format!(
                "relation `{name}` declares arity {arity} but its rule has arity {}",
                rel.arity
            )));
        }
        relations.push(rel);
    }
    Ok((space, relations))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dsprites() -> FactorSpace {
        FactorSpace::from_preset(Preset::Dsprites)
    }

    fn rel<'a>(rels: &'a [RelationDef], name: &str) -> &'a RelationDef {
        rels.iter().find(|r| r.name == name).unwrap()
    }

    #[test]
    fn preset_sizes() {
        let d = dsprites();
        assert_eq!((d.n(), d.k()), (27, 3));
        assert_eq!(FactorSpace::from_preset(Preset::Shapes3d).n(), 120);
        let h = FactorSpace::from_preset(Preset::HwfLike);
        assert_eq!((h.n(), h.k()), (13, 1));
    }

    #[test]
    fn unknown_preset_is_rejected() {
        assert!(matches!(build_factor_space("mnist"), Err(Error::UnknownPreset(p)) if p == "mnist"));
    }

    #[test]
    fn duplicate_factor_names_are_rejected() {
        let f = FactorSpec::new("a", vec!["x".into()], false).unwrap();
        assert!(FactorSpace::custom(vec![f.clone(), f]).is_err());
        assert!(FactorSpec::new("a", vec!["x".into(), "x".into()], false).is_err());
        assert!(FactorSpec::new("a", vec![], false).is_err());
    }

    #[test]
    fn single_value_space_has_one_combination() {
        let s = FactorSpace::custom(vec![FactorSpec::new("only", vec!["v".into()], false).unwrap()]).unwrap();
        assert_eq!(s.n(), 1);
        assert_eq!(s.combination(&["v"]).unwrap().index, 0);
        assert_eq!(s.index_to_combination(0).unwrap().values, vec!["v"]);
    }

    #[test]
    fn dsprites_corners() {
        let d = dsprites();
        assert_eq!(d.combination(&["left", "up", "ellipse"]).unwrap().index, 0);
        assert_eq!(d.combination(&["right", "down", "heart"]).unwrap().index, 26);
        assert_eq!(d.index_to_combination(0).unwrap().values, vec!["left", "up", "ellipse"]);
        assert_eq!(
            d.index_to_combination(26).unwrap().values,
            vec!["right", "down", "heart"]
        );
        assert!(matches!(d.index_to_combination(27), Err(Error::IndexOutOfRange { .. })));
        assert!(matches!(
            d.combination(&["left", "up", "star"]),
            Err(Error::UnknownValue { .. })
        ));
    }

    #[test]
    fn ranking_is_a_bijection_for_every_preset() {
        for p in Preset::ALL {
            let s = FactorSpace::from_preset(p);
            let mut seen = HashSet::new();
            for i in 0..s.n() {
                let c = s.index_to_combination(i).unwrap();
                assert_eq!(s.combination_to_index(&c).unwrap(), i);
                assert!(seen.insert(c.values));
            }
            assert_eq!(seen.len(), s.n());
        }
    }

    #[test]
    fn hwf_arithmetic() {
        let s = FactorSpace::from_preset(Preset::HwfLike);
        let rels = builtin_relations(&s, Preset::HwfLike).unwrap();
        assert_eq!(rels.len(), 3);
        assert_eq!(rel(&rels, "sum").apply(&[2, 3]).unwrap(), 5);
        assert_eq!(rel(&rels, "multiplication").apply(&[3, 3]).unwrap(), 9);
        assert!(matches!(
            rel(&rels, "sum").apply(&[7, 8]),
            Err(Error::InvalidPreState { .. })
        ));
        assert_eq!(rel(&rels, "sum").operator_component, Some(10));
        assert_eq!(rel(&rels, "subtraction").operator_component, Some(11));
        assert_eq!(rel(&rels, "multiplication").operator_component, Some(12));
    }

    #[test]
    fn hwf_arithmetic_matches_integers() {
        let s = FactorSpace::from_preset(Preset::HwfLike);
        let rels = builtin_relations(&s, Preset::HwfLike).unwrap();
        let ops: [(&str, fn(i64, i64) -> i64); 3] = [
            ("sum", |a, b| a + b),
            ("subtraction", |a, b| a - b),
            ("multiplication", |a, b| a * b),
        ];
        for (name, f) in ops {
            let r = rel(&rels, name);
            for i in 0..10 {
                for j in 0..10 {
                    let expected = f(i as i64, j as i64);
                    match r.apply(&[i, j]) {
                        Ok(k) => assert_eq!(k as i64, expected),
                        Err(_) => assert!(!(0..=9).contains(&expected)),
                    }
                }
            }
            for op in 10..13 {
                assert!(!r.is_valid(&[op, 0]) && !r.is_valid(&[0, op]));
            }
        }
        let sum = rel(&rels, "sum");
        for inp in sum.valid_inputs() {
            assert_eq!(sum.apply(inp).unwrap(), sum.apply(&[inp[1], inp[0]]).unwrap());
        }
        let sub = rel(&rels, "subtraction");
        assert!(sub.valid_inputs().all(|inp| inp[0] >= inp[1]));
    }

    #[test]
    fn dsprites_moves() {
        let d = dsprites();
        let rels = builtin_relations(&d, Preset::Dsprites).unwrap();
        let from = d.combination(&["center", "center", "square"]).unwrap().index;
        let to = rel(&rels, "move_up").apply(&[from]).unwrap();
        assert_eq!(
            d.index_to_combination(to).unwrap().values,
            vec!["center", "up", "square"]
        );
        let left_edge = d.combination(&["left", "center", "heart"]).unwrap().index;
        assert!(!rel(&rels, "move_left").is_valid(&[left_edge]));
    }

    #[test]
    fn inverse_pairs_compose_to_identity() {
        let pairs = [
            (Preset::Dsprites, "move_left", "move_right"),
            (Preset::Dsprites, "move_up", "move_down"),
            (Preset::Shapes3d, "+_hue", "-_hue"),
            (Preset::Shapes3d, "+_scale", "-_scale"),
        ];
        for (p, a, b) in pairs {
            let s = FactorSpace::from_preset(p);
            let rels = builtin_relations(&s, p).unwrap();
            let (ra, rb) = (rel(&rels, a), rel(&rels, b));
            let mut checked = 0;
            for i in 0..s.n() {
                if let Ok(mid) = ra.apply(&[i]) {
                    assert_eq!(rb.apply(&[mid]).unwrap(), i);
                    checked += 1;
                }
                if let Ok(mid) = rb.apply(&[i]) {
                    assert_eq!(ra.apply(&[mid]).unwrap(), i);
                }
            }
            assert!(checked > 0);
        }
    }

    #[test]
    fn shape_cycles_have_factor_length() {
        for (p, len) in [(Preset::Dsprites, 3), (Preset::Shapes3d, 4)] {
            let s = FactorSpace::from_preset(p);
            let rels = builtin_relations(&s, p).unwrap();
            let r = rel(&rels, "change_shape");
            assert_eq!(r.valid_input_count(), s.n());
            for i in 0..s.n() {
                let mut c = i;
                for step in 1..=len {
                    c = r.apply(&[c]).unwrap();
                    assert_eq!(c == i, step == len);
                }
            }
        }
    }

    #[test]
    fn unary_relations_change_exactly_one_factor() {
        for p in [Preset::Dsprites, Preset::Shapes3d] {
            let s = FactorSpace::from_preset(p);
            for r in builtin_relations(&s, p).unwrap() {
                for (inp, out) in r.transitions() {
                    assert!(out < s.n());
                    let a = s.value_indices(inp[0]).unwrap();
                    let b = s.value_indices(out).unwrap();
                    assert_eq!(a.iter().zip(&b).filter(|(x, y)| x != y).count(), 1, "{}", r.name);
                }
            }
        }
    }

    #[test]
    fn valid_inputs_from_filters_by_first_argument() {
        let s = FactorSpace::from_preset(Preset::HwfLike);
        let rels = builtin_relations(&s, Preset::HwfLike).unwrap();
        let from9: Vec<_> = rel(&rels, "sum").valid_inputs_from(9).map(|v| v.to_vec()).collect();
        assert_eq!(from9, vec![vec![9, 0]]);
        assert_eq!(rel(&rels, "multiplication").valid_inputs_from(0).count(), 10);
    }

    #[test]
    fn spec_text_round_trips() {
        for p in Preset::ALL {
            let s = FactorSpace::from_preset(p);
            let rels = builtin_relations(&s, p).unwrap();
            let text = to_spec_text(&s, &rels);
            let (s2, rels2) = parse_spec_text(&text).unwrap();
            assert_eq!(s2, s);
            assert_eq!(rels2, rels);
        }
        let s = FactorSpace::custom(vec![
            FactorSpec::new("bit", vec!["off".into(), "on".into()], false).unwrap()
        ])
        .unwrap();
        let table = BTreeMap::from([(vec![0], 1), (vec![1], 0)]);
        let flip = RelationDef::from_table(&s, "flip", 1, table).unwrap();
        let (_, back) = parse_spec_text(&to_spec_text(&s, &[flip.clone()])).unwrap();
        assert_eq!(back, vec![flip]);
    }
}
