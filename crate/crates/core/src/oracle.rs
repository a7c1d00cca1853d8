//! Exact scores by evaluating the subject on its whole input domain.
//!
//! Intended for small schemas; building an oracle fails when the domain is
//! larger than the configured bound.

use std::collections::HashMap;

use itertools::Itertools;

use crate::cache::EvalCache;
use crate::engine::{exact_spread, ScoreKind, ScoreResult};
use crate::error::{Error, PartialStats, Result};
use crate::schema::{CharSubset, Input, Schema};
use crate::search::{SearchConfig, SearchKind, SearchResult};
use crate::subject::Evaluator;

pub const DEFAULT_ORACLE_BOUND: u128 = 65_536;

/// Every decision of a subject, in odometer order over the schema.
#[derive(Debug, Clone)]
pub struct Oracle {
    schema: Schema,
    inputs: Vec<Input>,
    decisions: Vec<bool>,
    cache_hits: u64,
}

impl Oracle {
    pub fn build(subject: &dyn Evaluator, schema: &Schema, cache: &EvalCache, bound: u128) -> Result<Oracle> {
        let size = schema.domain_size().unwrap_or(u128::MAX);
        if size > bound {
            return Err(Error::BoundExceeded {
                what: "input domain",
                size,
                bound,
            });
        }
        let mut inputs = Vec::with_capacity(size as usize);
        let mut decisions = Vec::with_capacity(size as usize);
        let mut cache_hits = 0;
        for values in schema.inputs() {
            let input = Input::new(values);
            let e = cache.lookup(subject, &input).map_err(|e| {
                e.interrupted(PartialStats {
                    tests_generated: inputs.len() as u64,
                    cache_hits,
                })
            })?;
            cache_hits += e.cached as u64;
            decisions.push(e.decision);
            inputs.push(input);
        }
        Ok(Oracle {
            schema: schema.clone(),
            inputs,
            decisions,
            cache_hits,
        })
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn domain_size(&self) -> usize {
        self.inputs.len()
    }

    pub fn decisions(&self) -> impl Iterator<Item = (&Input, bool)> {
        self.inputs.iter().zip(self.decisions.iter().copied())
    }

    fn exact(&self, kind: ScoreKind, subset: &CharSubset, score: f64) -> ScoreResult {
        ScoreResult {
            kind,
            subset: subset.clone(),
            score,
            confidence: None,
            epsilon: None,
            margin: Some(0.0),
            groups: Vec::new(),
            base_inputs: None,
            tests_generated: self.inputs.len() as u64,
            cache_hits: 0,
            exact: true,
            lower_bound: false,
            saturated: false,
        }
    }

    /// Spread of exact per-group true fractions.
    pub fn group(&self, subset: &CharSubset) -> ScoreResult {
        let mut counts: HashMap<Vec<u32>, (u64, u64)> = HashMap::new();
        for (k, d) in self.decisions() {
            let e = counts.entry(k.project(subset)).or_default();
            e.0 += d as u64;
            e.1 += 1;
        }
        self.exact(ScoreKind::Group, subset, exact_spread(counts.into_values()))
    }

    /// Fraction of inputs sharing their assignment outside `subset` with an
    /// input of the opposite decision.
    pub fn causal(&self, subset: &CharSubset) -> ScoreResult {
        let mut seen: HashMap<Vec<u32>, [bool; 2]> = HashMap::new();
        for (k, d) in self.decisions() {
            seen.entry(k.project_complement(subset)).or_default()[d as usize] = true;
        }
        let flipping = self
            .inputs
            .iter()
            .filter(|k| seen[&k.project_complement(subset)] == [true, true])
            .count() as u64;
        let mut r = self.exact(ScoreKind::Causal, subset, flipping as f64 / self.inputs.len() as f64);
        r.base_inputs = Some((flipping, self.inputs.len() as u64));
        r
    }

    pub fn score(&self, kind: SearchKind, subset: &CharSubset) -> ScoreResult {
        match kind {
            SearchKind::Group => self.group(subset),
            SearchKind::Causal => self.causal(subset),
        }
    }

    /// Scores every subset up to the size limit and keeps the qualifying
    /// ones with no qualifying strict subset.
    pub fn search(&self, cfg: &SearchConfig) -> Result<SearchResult> {
        cfg.validate(&self.schema)?;
        let n = self.schema.len();
        let max_size = cfg.max_subset_size.unwrap_or(n);
        let mut result = SearchResult {
            cache_hits: self.cache_hits,
            ..SearchResult::default()
        };
        let mut qualifying = Vec::new();
        for size in 1..=max_size {
            for indices in (0..n).combinations(size) {
                let subset = CharSubset::new(indices, n)?;
                let score = self.score(cfg.kind, &subset);
                result.subsets_evaluated += 1;
                result.scores.push((subset.clone(), score.score));
                if score.score >= cfg.theta {
                    qualifying.push((subset, score));
                }
            }
        }
        result.tests_total = self.inputs.len() as u64;
        result.minimal_sets = qualifying
            .iter()
            .filter(|(s, _)| !qualifying.iter().any(|(t, _)| t != s && t.is_subset_of(s)))
            .cloned()
            .collect();
        Ok(result)
    }
}

pub fn exhaustive_group(
    subject: &dyn Evaluator,
    schema: &Schema,
    subset: &CharSubset,
    cache: &EvalCache,
    bound: u128,
) -> Result<ScoreResult> {
    Ok(Oracle::build(subject, schema, cache, bound)?.group(subset))
}

pub fn exhaustive_causal(
    subject: &dyn Evaluator,
    schema: &Schema,
    subset: &CharSubset,
    cache: &EvalCache,
    bound: u128,
) -> Result<ScoreResult> {
    Ok(Oracle::build(subject, schema, cache, bound)?.causal(subset))
}

pub fn exhaustive_search(
    subject: &dyn Evaluator,
    schema: &Schema,
    cfg: &SearchConfig,
    cache: &EvalCache,
    bound: u128,
) -> Result<SearchResult> {
    Oracle::build(subject, schema, cache, bound)?.search(cfg)
}
