#![allow(dead_code)]

use fairtest::schema::enumerate_subsets;
use fairtest::{CharSubset, Characteristic, Evaluator, Fixture, FixtureSpec, Input, Schema};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Characteristics `c0, c1, ...` with labels `l0, l1, ...`.
pub fn schema_with(label_counts: &[usize]) -> Schema {
    Schema::new(
        label_counts
            .iter()
            .enumerate()
            .map(|(i, &m)| Characteristic::new(format!("c{i}"), (0..m).map(|l| format!("l{l}"))))
            .collect(),
    )
    .unwrap()
}

pub fn binary(n: usize) -> Schema {
    schema_with(&vec![2; n])
}

pub fn subset(indices: &[usize], n: usize) -> CharSubset {
    CharSubset::new(indices.iter().copied(), n).unwrap()
}

pub fn fixture(spec: &str, schema: &Schema) -> Fixture {
    Fixture::new(FixtureSpec::parse(spec, schema).unwrap(), schema).unwrap()
}

pub fn table(seed: u64, schema: &Schema) -> Fixture {
    Fixture::new(FixtureSpec::Table { seed }, schema).unwrap()
}

pub struct Subject {
    pub schema: Schema,
    pub fixture: Fixture,
    pub seed: u64,
}

/// The seeded corpus of random truth-table subjects: `count` schemas with
/// 2 to 5 characteristics of 1 to 3 labels each.
pub fn corpus(count: usize) -> Vec<Subject> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    (0..count)
        .map(|_| {
            let n = rng.random_range(2..=5);
            let labels: Vec<usize> = (0..n).map(|_| rng.random_range(1..=3)).collect();
            let schema = schema_with(&labels);
            let seed = rng.random();
            Subject {
                fixture: table(seed, &schema),
                schema,
                seed,
            }
        })
        .collect()
}

pub fn all_subsets(schema: &Schema) -> Vec<CharSubset> {
    enumerate_subsets(schema, schema.len()).unwrap().collect()
}

pub fn all_inputs(schema: &Schema) -> Vec<Input> {
    schema.inputs().map(Input::new).collect()
}

/// Group score by filtering the whole domain once per assignment.
pub fn naive_group(subject: &dyn Evaluator, schema: &Schema, s: &CharSubset) -> f64 {
    let domain = all_inputs(schema);
    let mut fractions = Vec::new();
    for assignment in schema.assignments(s) {
        let members: Vec<&Input> = domain
            .iter()
            .filter(|k| s.indices().iter().zip(&assignment).all(|(&p, &v)| k.value(p) == v))
            .collect();
        let positives = members.iter().filter(|k| subject.evaluate(k).unwrap()).count();
        fractions.push(positives as f64 / members.len() as f64);
    }
    let max = fractions.iter().cloned().fold(f64::MIN, f64::max);
    let min = fractions.iter().cloned().fold(f64::MAX, f64::min);
    max - min
}

/// Causal score by comparing every pair of inputs.
pub fn naive_causal(subject: &dyn Evaluator, schema: &Schema, s: &CharSubset) -> f64 {
    let domain = all_inputs(schema);
    let decisions: Vec<bool> = domain.iter().map(|k| subject.evaluate(k).unwrap()).collect();
    let outside: Vec<usize> = (0..schema.len()).filter(|p| !s.contains(*p)).collect();
    let mut flipping = 0;
    for (i, k) in domain.iter().enumerate() {
        let flips = domain
            .iter()
            .enumerate()
            .any(|(j, other)| decisions[i] != decisions[j] && outside.iter().all(|&p| k.value(p) == other.value(p)));
        flipping += flips as usize;
    }
    flipping as f64 / domain.len() as f64
}

/// Brute-force minimal antichain of the subsets whose score reaches `theta`.
pub fn minimal_qualifying(scores: &[(CharSubset, f64)], theta: f64) -> Vec<CharSubset> {
    let q: Vec<&CharSubset> = scores.iter().filter(|(_, d)| *d >= theta).map(|(s, _)| s).collect();
    let mut minimal: Vec<CharSubset> = q
        .iter()
        .filter(|s| !q.iter().any(|t| t != *s && t.is_subset_of(s)))
        .map(|s| (*s).clone())
        .collect();
    minimal.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.indices().cmp(b.indices())));
    minimal
}
