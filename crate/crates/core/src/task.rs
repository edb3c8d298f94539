//! Synthetic templated modular-arithmetic problems.
//!
//! Each [`ProblemInstance`] is `(left op right) mod m` with a hidden answer. The
//! same instance can be rendered under several paraphrase templates; every
//! template spells the operands and the modulus with the same digit tokens, so
//! what a policy learns about the digits transfers between phrasings while the
//! template-specific words do not.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config, domain, Result};
use crate::rng::{rng_for, Purpose};

/// Fixed seed of the feature hash. Changing it changes every feature vector.
pub const FEATURE_HASH_SEED: u64 = 0x5EED_F00D_CAFE_0001;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Operator {
    Add,
    Mul,
    Sub,
}

impl Operator {
    pub fn apply(self, left: u32, right: u32, modulus: u32) -> u32 {
        let (l, r, m) = (left as i64, right as i64, modulus as i64);
        let v = match self {
            Operator::Add => l + r,
            Operator::Mul => l * r,
            Operator::Sub => l - r,
        };
        v.rem_euclid(m) as u32
    }

    fn symbol(self) -> &'static str {
        match self {
            Operator::Add => "+",
            Operator::Mul => "*",
            Operator::Sub => "-",
        }
    }

    fn word(self) -> &'static str {
        match self {
            Operator::Add => "plus",
            Operator::Mul => "times",
            Operator::Sub => "minus",
        }
    }

    fn verb(self) -> &'static str {
        match self {
            Operator::Add => "add",
            Operator::Mul => "multiply by",
            Operator::Sub => "subtract",
        }
    }
}

/// One test query with its latent answer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProblemInstance {
    pub id: u64,
    pub left_operand: u32,
    pub right_operand: u32,
    pub operator: Operator,
    pub modulus: u32,
    /// Evaluation only. The training loop never reads this field for rewards.
    pub ground_truth: u32,
    /// Template the query arrives in.
    pub origin_template: usize,
}

/// A query rendered as text, with its hashed bag-of-tokens features.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedQuery {
    pub instance_id: u64,
    /// `None` for free-form text that did not come from the template table.
    pub template_id: Option<usize>,
    pub text: String,
    pub features: Vec<f64>,
    pub token_length: usize,
}

impl RenderedQuery {
    /// Builds a query from arbitrary text. Tokens are whitespace-separated.
    pub fn from_text(
        instance_id: u64,
        template_id: Option<usize>,
        text: &str,
        feature_dim: usize,
    ) -> Self {
        let tokens: Vec<&str> = text.split_whitespace().collect();
        let features = hash_features(&tokens, feature_dim);
        Self {
            instance_id,
            template_id,
            text: tokens.join(" "),
            features,
            token_length: tokens.len(),
        }
    }

    pub fn tokens(&self) -> impl Iterator<Item = &str> {
        self.text.split_whitespace()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FamilyConfig {
    pub modulus: u32,
    pub operators: Vec<Operator>,
    pub template_count: usize,
    pub instance_count: usize,
    pub feature_dim: usize,
    pub rng_seed: u64,
    /// Templates an instance may arrive in; one is drawn per instance.
    pub origin_templates: Vec<usize>,
}

impl Default for FamilyConfig {
    fn default() -> Self {
        Self {
            modulus: 10,
            operators: vec![Operator::Add],
            template_count: 6,
            instance_count: 200,
            feature_dim: 256,
            rng_seed: 1,
            origin_templates: vec![0],
        }
    }
}

impl FamilyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.modulus < 2 {
            return Err(config("family.modulus must be >= 2"));
        }
        if self.operators.is_empty() {
            return Err(config("family.operators must not be empty"));
        }
        if self.template_count < 2 {
            return Err(config("family.template_count must be >= 2"));
        }
        if self.template_count > TEMPLATES.len() {
            return Err(config(format!(
                "family.template_count must be <= {} (size of the template table)",
                TEMPLATES.len()
            )));
        }
        if self.feature_dim < self.modulus as usize {
            return Err(config("family.feature_dim must be >= family.modulus"));
        }
        if self.origin_templates.is_empty() {
            return Err(config("family.origin_templates must not be empty"));
        }
        if let Some(t) = self
            .origin_templates
            .iter()
            .find(|&&t| t >= self.template_count)
        {
            return Err(config(format!(
                "family.origin_templates contains {t}, outside [0, template_count)"
            )));
        }
        Ok(())
    }

    /// Size of the answer vocabulary.
    pub fn num_classes(&self) -> usize {
        self.modulus as usize
    }
}

/// Draws `instance_count` problems. Operators and operands are uniform.
pub fn generate_problem_set(config: &FamilyConfig) -> Result<Vec<ProblemInstance>> {
    config.validate()?;
    let mut rng = rng_for(config.rng_seed, &[Purpose::Init as u64, 0xDA7A]);
    let m = config.modulus;
    let problems = (0..config.instance_count as u64)
        .map(|id| {
            let operator = config.operators[rng.random_range(0..config.operators.len())];
            let left = rng.random_range(0..m);
            let right = rng.random_range(0..m);
            let origin =
                config.origin_templates[rng.random_range(0..config.origin_templates.len())];
            ProblemInstance {
                id,
                left_operand: left,
                right_operand: right,
                operator,
                modulus: m,
                ground_truth: operator.apply(left, right, m),
                origin_template: origin,
            }
        })
        .collect();
    Ok(problems)
}

pub fn oracle_answer(instance: &ProblemInstance) -> u32 {
    instance
        .operator
        .apply(instance.left_operand, instance.right_operand, instance.modulus)
}

#[derive(Clone, Copy)]
enum Slot {
    Word(&'static str),
    Left,
    Right,
    Modulus,
    Symbol,
    OpWord,
    OpVerb,
}

use Slot::*;

/// The built-in paraphrase table.
static TEMPLATES: &[&[Slot]] = &[
    &[Word("What"), Word("is"), Word("("), Left, Symbol, Right, Word(")"), Word("mod"), Modulus, Word("?")],
    &[
        Word("Compute"), Word("the"), Word("remainder"), Word("when"), Left, OpWord, Right,
        Word("is"), Word("divided"), Word("by"), Modulus, Word("."),
    ],
    &[Word("Find"), Word("the"), Word("value"), Word("of"), Left, Symbol, Right, Word("modulo"), Modulus, Word(".")],
    &[
        Word("Let"), Word("x"), Word("equal"), Left, OpWord, Right, Word("."), Word("Reduce"),
        Word("x"), Word("modulo"), Modulus, Word("and"), Word("report"), Word("it"), Word("."),
    ],
    &[
        Word("Take"), Left, Word(","), OpVerb, Right, Word(","), Word("and"), Word("give"),
        Word("the"), Word("result"), Word("mod"), Modulus, Word("."),
    ],
    &[
        Word("Working"), Word("in"), Word("arithmetic"), Word("modulo"), Modulus, Word(","),
        Word("what"), Word("does"), Left, OpWord, Right, Word("equal"), Word("?"),
    ],
];

/// Number of templates in the built-in table.
pub fn builtin_template_count() -> usize {
    TEMPLATES.len()
}

/// Renders `instance` under `template_id` using the first `template_count` entries of the table.
pub fn render(
    instance: &ProblemInstance,
    template_id: usize,
    family: &FamilyConfig,
) -> Result<RenderedQuery> {
    if template_id >= family.template_count {
        return Err(domain(format!(
            "template_id {template_id} out of range [0, {})",
            family.template_count
        )));
    }
    let text = render_text(instance, template_id);
    Ok(RenderedQuery::from_text(
        instance.id,
        Some(template_id),
        &text,
        family.feature_dim,
    ))
}

fn render_text(instance: &ProblemInstance, template_id: usize) -> String {
    let left = instance.left_operand.to_string();
    let right = instance.right_operand.to_string();
    let modulus = instance.modulus.to_string();
    let parts: Vec<&str> = TEMPLATES[template_id]
        .iter()
        .map(|slot| match *slot {
            Word(w) => w,
            Left => left.as_str(),
            Right => right.as_str(),
            Modulus => modulus.as_str(),
            Symbol => instance.operator.symbol(),
            OpWord => instance.operator.word(),
            OpVerb => instance.operator.verb(),
        })
        .collect();
    parts.join(" ")
}

fn fnv1a64(bytes: &[u8], seed: u64) -> u64 {
    const PRIME: u64 = 0x0000_0100_0000_01B3;
    let mut h = 0xCBF2_9CE4_8422_2325 ^ seed;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(PRIME);
    }
    h
}

/// Buckets each numeric-token pair is hashed into.
pub const PAIR_PROBES: usize = 16;

/// Raw token counts hashed into `dim` buckets, plus [`PAIR_PROBES`] counts for
/// every unordered pair of numeric tokens, each probe under its own key. The
/// pairs are what let a linear policy tell `3 + 4` from `2 + 5`; the probes give
/// that signal enough weight next to the template words. Everything is a
/// function of the token multiset alone.
pub fn hash_features(tokens: &[&str], dim: usize) -> Vec<f64> {
    let mut features = vec![0.0; dim];
    if dim == 0 {
        return features;
    }
    let mut bump = |key: &[u8]| {
        let bucket = (fnv1a64(key, FEATURE_HASH_SEED) % dim as u64) as usize;
        features[bucket] += 1.0;
    };
    for tok in tokens {
        bump(tok.as_bytes());
    }
    let mut numbers: Vec<&str> = tokens
        .iter()
        .copied()
        .filter(|t| !t.is_empty() && t.bytes().all(|b| b.is_ascii_digit()))
        .collect();
    numbers.sort_unstable();
    for i in 0..numbers.len() {
        for j in i + 1..numbers.len() {
            for probe in 0..PAIR_PROBES {
                // The separator cannot occur inside a whitespace-free digit token.
                bump(format!("{}\u{1f}{}\u{1f}{probe}", numbers[i], numbers[j]).as_bytes());
            }
        }
    }
    features
}
