//! Minimal discriminating subset search.
//!
//! Subsets are visited in order of increasing size. A subset whose score
//! reaches the threshold is recorded, and every strict superset of a
//! recorded subset is skipped.

use itertools::Itertools;

use crate::engine::{parallel_map, Engine, ScoreResult};
use crate::error::{Error, PartialStats, Result};
use crate::sampler::SamplingConfig;
use crate::schema::{CharSubset, Schema};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SearchKind {
    Group,
    Causal,
}

impl SearchKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SearchKind::Group => "group",
            SearchKind::Causal => "causal",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchConfig {
    pub theta: f64,
    pub kind: SearchKind,
    /// Largest subset size visited; `None` means the whole schema.
    pub max_subset_size: Option<usize>,
    pub sampling: SamplingConfig,
    /// For causal searches, accept a subset whose group score already
    /// reaches the threshold without computing its causal score.
    pub group_shortcut: bool,
    /// Skip supersets of recorded subsets. When off every subset is scored,
    /// but the reported minimal sets are the same.
    pub prune: bool,
}

impl SearchConfig {
    pub fn new(theta: f64, kind: SearchKind) -> Self {
        SearchConfig {
            theta,
            kind,
            max_subset_size: None,
            sampling: SamplingConfig::default(),
            group_shortcut: false,
            prune: true,
        }
    }

    pub fn validate(&self, schema: &Schema) -> Result<()> {
        if !(0.0..=1.0).contains(&self.theta) {
            return Err(Error::Config(format!("threshold {} not in [0, 1]", self.theta)));
        }
        if let Some(m) = self.max_subset_size {
            if m == 0 || m > schema.len() {
                return Err(Error::Config(format!(
                    "max subset size {m} not in 1..={}",
                    schema.len()
                )));
            }
        }
        self.sampling.validate()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SearchResult {
    /// Recorded subsets with the score that qualified them, in visit order.
    pub minimal_sets: Vec<(CharSubset, ScoreResult)>,
    /// Every scored subset with its score, in visit order.
    pub scores: Vec<(CharSubset, f64)>,
    pub subsets_evaluated: u64,
    pub subsets_pruned: u64,
    /// Sum of the per-subset test counts.
    pub tests_total: u64,
    pub cache_hits: u64,
}

impl SearchResult {
    pub fn minimal_subsets(&self) -> Vec<CharSubset> {
        self.minimal_sets.iter().map(|(s, _)| s.clone()).collect()
    }
}

/// Whether `candidate` is a strict superset of a recorded subset.
pub fn would_prune(recorded: &[CharSubset], candidate: &CharSubset) -> bool {
    recorded
        .iter()
        .any(|r| r.len() < candidate.len() && r.is_subset_of(candidate))
}

/// Runs the search with an arbitrary per-subset scorer, scoring each size
/// tier on up to `workers` threads.
pub fn search_with<F>(schema: &Schema, cfg: &SearchConfig, workers: usize, scorer: F) -> Result<SearchResult>
where
    F: Fn(&CharSubset) -> Result<ScoreResult> + Sync,
{
    cfg.validate(schema)?;
    let max_size = cfg.max_subset_size.unwrap_or(schema.len());
    let mut result = SearchResult::default();
    let mut recorded: Vec<CharSubset> = Vec::new();

    for size in 1..=max_size {
        // same-size subsets never prune each other, so a tier can be scored
        // in parallel without changing what is visited
        let mut tier = Vec::new();
        for indices in (0..schema.len()).combinations(size) {
            let candidate = CharSubset::new(indices, schema.len())?;
            if cfg.prune && would_prune(&recorded, &candidate) {
                result.subsets_pruned += 1;
                continue;
            }
            tier.push(candidate);
        }

        let scored = parallel_map(&tier, workers, |s| scorer(s));
        for (candidate, outcome) in tier.iter().zip(scored) {
            let score = match outcome {
                Ok(score) => score,
                Err(e) => {
                    if let Error::Interrupted { partial, .. } = &e {
                        result.tests_total += partial.tests_generated;
                        result.cache_hits += partial.cache_hits;
                    }
                    return Err(Error::SearchInterrupted {
                        source: Box::new(e),
                        partial: Box::new(result),
                    });
                }
            };
            result.subsets_evaluated += 1;
            result.tests_total += score.tests_generated;
            result.cache_hits += score.cache_hits;
            result.scores.push((candidate.clone(), score.score));
            if score.score >= cfg.theta && !would_prune(&recorded, candidate) {
                recorded.push(candidate.clone());
                result.minimal_sets.push((candidate.clone(), score));
            }
        }
    }
    Ok(result)
}

/// Searches with the engine's own group or causal scores.
pub fn discrimination_search(engine: &Engine<'_>, cfg: &SearchConfig) -> Result<SearchResult> {
    let single = Engine::new(engine.schema(), engine.subject(), engine.cache());
    let scorer = |subset: &CharSubset| -> Result<ScoreResult> {
        match cfg.kind {
            SearchKind::Group => Ok(single.group_score(subset, &cfg.sampling)?.0),
            SearchKind::Causal => {
                if cfg.group_shortcut {
                    let (group, _) = single.group_score(subset, &cfg.sampling)?;
                    if group.score >= cfg.theta {
                        return Ok(group);
                    }
                    let (mut causal, _) = single.causal_score(subset, &cfg.sampling)?;
                    causal.tests_generated += group.tests_generated;
                    causal.cache_hits += group.cache_hits;
                    return Ok(causal);
                }
                Ok(single.causal_score(subset, &cfg.sampling)?.0)
            }
        }
    };
    search_with(engine.schema(), cfg, engine.workers(), scorer)
}

/// Statistics of a search interrupted before it finished.
pub fn partial_stats(result: &SearchResult) -> PartialStats {
    PartialStats {
        tests_generated: result.tests_total,
        cache_hits: result.cache_hits,
    }
}
