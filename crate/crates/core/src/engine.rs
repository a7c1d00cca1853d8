//! Group, causal and apparent discrimination scores.
//!
//! Group scores estimate, for every label assignment of a characteristic
//! subset, the fraction of inputs with that assignment the subject decides
//! true, and report the spread between the largest and smallest fraction.
//! Causal scores estimate the fraction of inputs whose decision flips under
//! some change confined to the subset. Apparent scores compute either
//! measure over a test suite or an operational profile instead of the full
//! input domain.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;

use indexmap::IndexSet;
use rand::Rng;

use crate::cache::EvalCache;
use crate::error::{Error, PartialStats, Result};
use crate::sampler::{
    perturbation_count, perturbations, random_input_unchecked, stream_rng, AdaptiveEstimator, PartialAssignment,
    SamplingConfig, StreamKey, StreamRng,
};
use crate::schema::{CharSubset, Input, Schema};
use crate::subject::Evaluator;

pub const DEFAULT_INNER_CAP: u64 = 256;
/// Group counts above this produce a warning.
pub const GROUP_WARNING_LIMIT: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ScoreKind {
    Group,
    Causal,
    ApparentGroup,
    ApparentCausal,
}

impl ScoreKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ScoreKind::Group => "group",
            ScoreKind::Causal => "causal",
            ScoreKind::ApparentGroup => "apparent-group",
            ScoreKind::ApparentCausal => "apparent-causal",
        }
    }

    pub fn is_apparent(self) -> bool {
        matches!(self, ScoreKind::ApparentGroup | ScoreKind::ApparentCausal)
    }
}

/// The true-output frequency of one group.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupFrequency {
    /// Label indices over the subset, in subset order.
    pub assignment: Vec<u32>,
    pub positives: u64,
    pub samples: u64,
    /// Achieved half-width; `None` for apparent scores.
    pub margin: Option<f64>,
    pub exact: bool,
    /// Sampling stopped at `max_samples` before reaching the margin.
    pub saturated: bool,
}

impl GroupFrequency {
    pub fn proportion(&self) -> f64 {
        AdaptiveEstimator::from_counts(self.positives, self.samples).proportion()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreResult {
    pub kind: ScoreKind,
    pub subset: CharSubset,
    pub score: f64,
    pub confidence: Option<f64>,
    pub epsilon: Option<f64>,
    /// Half-width of the score itself. For group scores this is the sum of
    /// the margins of the two extreme groups, so at most `2 * epsilon`
    /// unless a group saturated.
    pub margin: Option<f64>,
    /// Per-group frequencies (group kinds only), in assignment order.
    pub groups: Vec<GroupFrequency>,
    /// `(discriminating, examined)` base inputs (causal kinds only).
    pub base_inputs: Option<(u64, u64)>,
    pub tests_generated: u64,
    pub cache_hits: u64,
    pub exact: bool,
    /// Some base input had more perturbations than the inner cap, so the
    /// causal score can only undercount.
    pub lower_bound: bool,
    pub saturated: bool,
}

impl ScoreResult {
    /// Spread of the reported group frequencies.
    pub fn group_spread(groups: &[GroupFrequency]) -> f64 {
        exact_spread(groups.iter().map(|g| (g.positives, g.samples)))
    }
}

fn cmp_fraction((t1, n1): (u64, u64), (t2, n2): (u64, u64)) -> std::cmp::Ordering {
    (t1 as u128 * n2 as u128).cmp(&(t2 as u128 * n1 as u128))
}

/// `max - min` of the fractions `positives / samples`, rounded once, so
/// that spreads and plain fractions compare as their exact values do.
/// Pairs with zero samples are ignored.
pub fn exact_spread(counts: impl IntoIterator<Item = (u64, u64)>) -> f64 {
    let mut extremes: Option<((u64, u64), (u64, u64))> = None;
    for c in counts.into_iter().filter(|c| c.1 > 0) {
        extremes = Some(match extremes {
            None => (c, c),
            Some((lo, hi)) => (
                if cmp_fraction(c, lo).is_lt() { c } else { lo },
                if cmp_fraction(c, hi).is_gt() { c } else { hi },
            ),
        });
    }
    match extremes {
        None => 0.0,
        Some(((t1, n1), (t2, n2))) => {
            let num = t2 as u128 * n1 as u128 - t1 as u128 * n2 as u128;
            let den = n1 as u128 * n2 as u128;
            if den < 1 << 53 {
                num as f64 / den as f64
            } else {
                t2 as f64 / n2 as f64 - t1 as f64 / n1 as f64
            }
        }
    }
}

/// An ordered set of inputs.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TestSuite {
    inputs: IndexSet<Input>,
}

impl TestSuite {
    pub fn new() -> Self {
        Self::default()
    }

    /// Collects inputs, keeping the first occurrence of duplicates.
    pub fn from_inputs(inputs: impl IntoIterator<Item = Input>) -> Self {
        TestSuite {
            inputs: inputs.into_iter().collect(),
        }
    }

    pub fn insert(&mut self, input: Input) -> bool {
        self.inputs.insert(input)
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Input> {
        self.inputs.iter()
    }

    pub fn contains(&self, input: &Input) -> bool {
        self.inputs.contains(input)
    }

    fn extend(&mut self, other: TestSuite) {
        self.inputs.extend(other.inputs);
    }

    /// Reads a CSV suite: a header naming every characteristic in schema
    /// order, then one row of label texts per input.
    pub fn read_csv<R: Read>(reader: R, schema: &Schema) -> Result<TestSuite> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let header = rdr.headers().map_err(|e| Error::Suite(e.to_string()))?;
        let names: Vec<&str> = schema.characteristics().iter().map(|c| c.name()).collect();
        if header.iter().collect::<Vec<_>>() != names {
            return Err(Error::Suite(format!(
                "header must list the characteristics in schema order: {}",
                names.join(",")
            )));
        }
        let mut suite = TestSuite::new();
        for (row, record) in rdr.records().enumerate() {
            let record = record.map_err(|e| Error::Suite(e.to_string()))?;
            let labels: Vec<&str> = record.iter().collect();
            let input = schema
                .input_from_labels(&labels)
                .map_err(|e| Error::Suite(format!("row {}: {e}", row + 1)))?;
            suite.insert(input);
        }
        Ok(suite)
    }

    pub fn write_csv<W: Write>(&self, writer: W, schema: &Schema) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        let io = |e: csv::Error| Error::Suite(e.to_string());
        wtr.write_record(schema.characteristics().iter().map(|c| c.name()))
            .map_err(io)?;
        for input in &self.inputs {
            wtr.write_record(schema.labels_of(input)).map_err(io)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

impl<'a> IntoIterator for &'a TestSuite {
    type Item = &'a Input;
    type IntoIter = indexmap::set::Iter<'a, Input>;

    fn into_iter(self) -> Self::IntoIter {
        self.inputs.iter()
    }
}

/// Independent per-characteristic label distributions.
#[derive(Debug, Clone, PartialEq)]
pub struct OperationalProfile {
    weights: Vec<Vec<f64>>,
}

impl OperationalProfile {
    pub fn uniform(schema: &Schema) -> Self {
        OperationalProfile {
            weights: schema
                .label_counts()
                .into_iter()
                .map(|m| vec![1.0 / m as f64; m])
                .collect(),
        }
    }

    /// Normalizes non-negative weights per characteristic.
    pub fn new(schema: &Schema, weights: Vec<Vec<f64>>) -> Result<Self> {
        if weights.len() != schema.len() {
            return Err(Error::Profile(format!(
                "{} weight lists for {} characteristics",
                weights.len(),
                schema.len()
            )));
        }
        let mut normalized = Vec::with_capacity(weights.len());
        for (c, w) in schema.characteristics().iter().zip(weights) {
            if w.len() != c.label_count() {
                return Err(Error::Profile(format!(
                    "characteristic `{}` has {} labels but {} weights",
                    c.name(),
                    c.label_count(),
                    w.len()
                )));
            }
            if w.iter().any(|x| !x.is_finite() || *x < 0.0) {
                return Err(Error::Profile(format!(
                    "negative or non-finite weight for `{}`",
                    c.name()
                )));
            }
            let total: f64 = w.iter().sum();
            if total <= 0.0 {
                return Err(Error::Profile(format!("weights for `{}` sum to zero", c.name())));
            }
            normalized.push(w.iter().map(|x| x / total).collect());
        }
        Ok(OperationalProfile { weights: normalized })
    }

    /// Parses `{"<characteristic>": {"<label>": weight, ...}, ...}`.
    /// Characteristics left out are uniform; labels left out of a listed
    /// characteristic get weight 0.
    pub fn parse(text: &str, schema: &Schema) -> Result<Self> {
        let doc: BTreeMap<String, BTreeMap<String, f64>> =
            serde_json::from_str(text).map_err(|e| Error::Profile(e.to_string()))?;
        let mut weights: Vec<Vec<f64>> = schema.label_counts().into_iter().map(|m| vec![1.0; m]).collect();
        for (name, labels) in doc {
            let p = schema
                .position(&name)
                .ok_or_else(|| Error::Profile(format!("unknown characteristic `{name}`")))?;
            let c = schema.characteristic(p);
            let mut w = vec![0.0; c.label_count()];
            for (label, weight) in labels {
                let i = c
                    .label_index(&label)
                    .ok_or_else(|| Error::Profile(format!("characteristic `{name}` has no label `{label}`")))?;
                w[i as usize] = weight;
            }
            weights[p] = w;
        }
        OperationalProfile::new(schema, weights)
    }

    pub fn weights(&self) -> &[Vec<f64>] {
        &self.weights
    }

    pub fn sample(&self, rng: &mut StreamRng) -> Input {
        let values = self
            .weights
            .iter()
            .map(|w| {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for (i, x) in w.iter().enumerate() {
                    acc += x;
                    if u < acc {
                        return i as u32;
                    }
                }
                // rounding left u past the last cumulative weight
                w.iter().rposition(|x| *x > 0.0).unwrap_or(0) as u32
            })
            .collect();
        Input::new(values)
    }
}

/// Where an apparent causal score draws its base inputs from.
#[derive(Debug, Clone, Copy)]
pub enum ApparentSource<'a> {
    Suite(&'a TestSuite),
    Profile(&'a OperationalProfile),
}

/// Runs `f` over `items` on up to `workers` threads; results keep item
/// order. Stops handing out work after the first error.
pub(crate) fn parallel_map<T: Sync, R: Send, E: Send>(
    items: &[T],
    workers: usize,
    f: impl Fn(&T) -> std::result::Result<R, E> + Sync,
) -> Vec<std::result::Result<R, E>> {
    if workers <= 1 || items.len() <= 1 {
        let mut out = Vec::with_capacity(items.len());
        for item in items {
            let r = f(item);
            let failed = r.is_err();
            out.push(r);
            if failed {
                break;
            }
        }
        return out;
    }
    let next = AtomicUsize::new(0);
    let failed = AtomicBool::new(false);
    let slots: Mutex<Vec<Option<std::result::Result<R, E>>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..workers.min(items.len()) {
            s.spawn(|| loop {
                if failed.load(Ordering::Relaxed) {
                    break;
                }
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                if r.is_err() {
                    failed.store(true, Ordering::Relaxed);
                }
                slots.lock().unwrap_or_else(|e| e.into_inner())[i] = Some(r);
            });
        }
    });
    slots
        .into_inner()
        .unwrap_or_else(|e| e.into_inner())
        .into_iter()
        .flatten()
        .collect()
}

struct Tally<'a> {
    subject: &'a dyn Evaluator,
    cache: &'a EvalCache,
    suite: TestSuite,
    hits: u64,
}

impl<'a> Tally<'a> {
    fn new(subject: &'a dyn Evaluator, cache: &'a EvalCache) -> Self {
        Tally {
            subject,
            cache,
            suite: TestSuite::new(),
            hits: 0,
        }
    }

    fn run(&mut self, input: Input) -> Result<bool> {
        let e = self
            .cache
            .lookup(self.subject, &input)
            .map_err(|e| e.interrupted(self.partial()))?;
        self.hits += e.cached as u64;
        self.suite.insert(input);
        Ok(e.decision)
    }

    fn partial(&self) -> PartialStats {
        PartialStats {
            tests_generated: self.suite.len() as u64,
            cache_hits: self.hits,
        }
    }
}

struct GroupOutcome {
    frequency: GroupFrequency,
    suite: TestSuite,
    hits: u64,
}

/// Scores a subject over one schema, sharing one evaluation cache.
pub struct Engine<'a> {
    schema: &'a Schema,
    subject: &'a dyn Evaluator,
    cache: &'a EvalCache,
    workers: usize,
    inner_cap: u64,
}

impl<'a> Engine<'a> {
    pub fn new(schema: &'a Schema, subject: &'a dyn Evaluator, cache: &'a EvalCache) -> Self {
        Engine {
            schema,
            subject,
            cache,
            workers: 1,
            inner_cap: DEFAULT_INNER_CAP,
        }
    }

    pub fn with_workers(mut self, workers: usize) -> Self {
        self.workers = workers.max(1);
        self
    }

    /// Maximum perturbations examined per base input in causal scores.
    pub fn with_inner_cap(mut self, cap: u64) -> Self {
        self.inner_cap = cap.max(1);
        self
    }

    pub fn schema(&self) -> &Schema {
        self.schema
    }

    pub fn subject(&self) -> &dyn Evaluator {
        self.subject
    }

    pub fn cache(&self) -> &EvalCache {
        self.cache
    }

    pub fn workers(&self) -> usize {
        self.workers
    }

    fn check_subset(&self, subset: &CharSubset) -> Result<()> {
        match subset.indices().last() {
            Some(&i) if i < self.schema.len() => Ok(()),
            Some(&i) => Err(Error::Config(format!(
                "subset position {i} outside schema of {}",
                self.schema.len()
            ))),
            None => Err(Error::Config("empty subset".into())),
        }
    }

    fn estimate_group(
        &self,
        subset: &CharSubset,
        assignment: &[u32],
        cfg: &SamplingConfig,
        z: f64,
    ) -> std::result::Result<GroupOutcome, Error> {
        let fixed = PartialAssignment::new(subset, assignment.to_vec());
        let mut tally = Tally::new(self.subject, self.cache);
        let mut est = AdaptiveEstimator::new();
        let size = fixed.constrained_size(self.schema).unwrap_or(u128::MAX);
        let exact = size <= cfg.exhaustive_limit as u128;
        if exact {
            for k in fixed.enumerate(self.schema) {
                est.record(tally.run(k)?);
            }
        } else {
            let key = StreamKey::new("group")
                .with(subset.indices().iter().map(|&i| i as u64))
                .with(assignment.iter().map(|&v| v as u64));
            let mut rng = stream_rng(cfg.seed, &key);
            loop {
                let k = random_input_unchecked(self.schema, &fixed, &mut rng);
                est.record(tally.run(k)?);
                if est.should_stop_z(cfg, z) {
                    break;
                }
            }
        }
        let margin = if exact {
            0.0
        } else {
            est.margin_of_error(cfg.confidence)?
        };
        Ok(GroupOutcome {
            frequency: GroupFrequency {
                assignment: assignment.to_vec(),
                positives: est.positives(),
                samples: est.samples(),
                margin: Some(margin),
                exact,
                saturated: !exact && margin >= cfg.epsilon,
            },
            hits: tally.hits,
            suite: tally.suite,
        })
    }

    /// Group discrimination score: the spread of true-output frequencies over
    /// every label assignment of `subset`.
    pub fn group_score(&self, subset: &CharSubset, cfg: &SamplingConfig) -> Result<(ScoreResult, TestSuite)> {
        cfg.validate()?;
        self.check_subset(subset)?;
        let z = cfg.z();
        let assignments: Vec<Vec<u32>> = self.schema.assignments(subset).collect();
        if assignments.len() > GROUP_WARNING_LIMIT {
            log::warn!(
                "subset {} has {} groups; group scoring enumerates all of them",
                subset,
                assignments.len()
            );
        }
        let outcomes = parallel_map(&assignments, self.workers, |a| self.estimate_group(subset, a, cfg, z));

        let mut groups = Vec::with_capacity(assignments.len());
        let mut suite = TestSuite::new();
        let mut hits = 0;
        for outcome in outcomes {
            match outcome {
                Ok(o) => {
                    groups.push(o.frequency);
                    suite.extend(o.suite);
                    hits += o.hits;
                }
                Err(e) => {
                    let inner = match &e {
                        Error::Interrupted { partial, .. } => *partial,
                        _ => PartialStats::default(),
                    };
                    let partial = PartialStats {
                        tests_generated: suite.len() as u64 + inner.tests_generated,
                        cache_hits: hits + inner.cache_hits,
                    };
                    return Err(match e {
                        Error::Interrupted { source, .. } => Error::Interrupted { source, partial },
                        other => other.interrupted(partial),
                    });
                }
            }
        }

        let counts = |g: &GroupFrequency| (g.positives, g.samples);
        let max = groups
            .iter()
            .reduce(|a, b| {
                if cmp_fraction(counts(b), counts(a)).is_gt() {
                    b
                } else {
                    a
                }
            })
            .expect("at least one group");
        let min = groups
            .iter()
            .reduce(|a, b| {
                if cmp_fraction(counts(b), counts(a)).is_lt() {
                    b
                } else {
                    a
                }
            })
            .expect("at least one group");
        let score = ScoreResult::group_spread(&groups);
        let margin = max.margin.unwrap_or(0.0) + min.margin.unwrap_or(0.0);
        let exact = groups.iter().all(|g| g.exact);
        let saturated = groups.iter().any(|g| g.saturated);
        let result = ScoreResult {
            kind: ScoreKind::Group,
            subset: subset.clone(),
            score,
            confidence: Some(cfg.confidence),
            epsilon: Some(cfg.epsilon),
            margin: Some(margin),
            groups,
            base_inputs: None,
            tests_generated: suite.len() as u64,
            cache_hits: hits,
            exact,
            lower_bound: false,
            saturated,
        };
        Ok((result, suite))
    }

    /// Whether some perturbation of `base` over `subset` changes the decision.
    fn flips(&self, tally: &mut Tally<'_>, base: Input, subset: &CharSubset, rng: &mut StreamRng) -> Result<bool> {
        let decision = tally.run(base.clone())?;
        for k in perturbations(&base, subset, self.schema, rng).take(self.inner_cap as usize) {
            if tally.run(k)? != decision {
                return Ok(true);
            }
        }
        Ok(false)
    }

    /// Causal discrimination score: the fraction of inputs for which
    /// changing only characteristics in `subset` changes the decision.
    pub fn causal_score(&self, subset: &CharSubset, cfg: &SamplingConfig) -> Result<(ScoreResult, TestSuite)> {
        cfg.validate()?;
        self.check_subset(subset)?;
        let z = cfg.z();
        let capped = perturbation_count(self.schema, subset) > self.inner_cap as u128;
        let domain = self.schema.domain_size().unwrap_or(u128::MAX);
        let enumerate = domain <= cfg.exhaustive_limit as u128;
        let subset_key = subset.indices().iter().map(|&i| i as u64);
        let mut tally = Tally::new(self.subject, self.cache);
        let mut est = AdaptiveEstimator::new();
        if enumerate {
            let mut rng = stream_rng(cfg.seed, &StreamKey::new("causal-exhaustive").with(subset_key));
            for k0 in self.schema.inputs() {
                est.record(self.flips(&mut tally, Input::new(k0), subset, &mut rng)?);
            }
        } else {
            let mut rng = stream_rng(cfg.seed, &StreamKey::new("causal").with(subset_key));
            let free = PartialAssignment::none();
            loop {
                let k0 = random_input_unchecked(self.schema, &free, &mut rng);
                est.record(self.flips(&mut tally, k0, subset, &mut rng)?);
                if est.should_stop_z(cfg, z) {
                    break;
                }
            }
        }
        let margin = if enumerate {
            0.0
        } else {
            est.margin_of_error(cfg.confidence)?
        };
        let result = ScoreResult {
            kind: ScoreKind::Causal,
            subset: subset.clone(),
            score: est.proportion(),
            confidence: Some(cfg.confidence),
            epsilon: Some(cfg.epsilon),
            margin: Some(margin),
            groups: Vec::new(),
            base_inputs: Some((est.positives(), est.samples())),
            tests_generated: tally.suite.len() as u64,
            cache_hits: tally.hits,
            exact: enumerate && !capped,
            lower_bound: capped,
            saturated: !enumerate && margin >= cfg.epsilon,
        };
        Ok((result, tally.suite))
    }

    /// Group score restricted to the members of `suite`. Groups with no
    /// members are skipped.
    pub fn apparent_group_score(&self, subset: &CharSubset, suite: &TestSuite) -> Result<ScoreResult> {
        self.check_subset(subset)?;
        if suite.is_empty() {
            return Err(Error::Suite("test suite is empty".into()));
        }
        let mut tally = Tally::new(self.subject, self.cache);
        let mut counts: BTreeMap<Vec<u32>, (u64, u64)> = BTreeMap::new();
        for k in suite {
            self.schema.validate_input(k)?;
            let decision = tally.run(k.clone())?;
            let entry = counts.entry(k.project(subset)).or_default();
            entry.0 += decision as u64;
            entry.1 += 1;
        }
        let groups: Vec<GroupFrequency> = counts
            .into_iter()
            .map(|(assignment, (positives, samples))| GroupFrequency {
                assignment,
                positives,
                samples,
                margin: None,
                exact: true,
                saturated: false,
            })
            .collect();
        Ok(ScoreResult {
            kind: ScoreKind::ApparentGroup,
            subset: subset.clone(),
            score: ScoreResult::group_spread(&groups),
            confidence: None,
            epsilon: None,
            margin: None,
            groups,
            base_inputs: None,
            tests_generated: tally.suite.len() as u64,
            cache_hits: tally.hits,
            exact: true,
            lower_bound: false,
            saturated: false,
        })
    }

    /// Causal score over a partial domain.
    ///
    /// With a suite, an input counts when another suite member differing
    /// only within `subset` gets a different decision. With a profile, base
    /// inputs are drawn from it and perturbed over the full label sets.
    pub fn apparent_causal_score(
        &self,
        subset: &CharSubset,
        source: ApparentSource<'_>,
        cfg: &SamplingConfig,
    ) -> Result<ScoreResult> {
        self.check_subset(subset)?;
        let mut result = ScoreResult {
            kind: ScoreKind::ApparentCausal,
            subset: subset.clone(),
            score: 0.0,
            confidence: None,
            epsilon: None,
            margin: None,
            groups: Vec::new(),
            base_inputs: None,
            tests_generated: 0,
            cache_hits: 0,
            exact: false,
            lower_bound: false,
            saturated: false,
        };
        let mut tally = Tally::new(self.subject, self.cache);
        match source {
            ApparentSource::Suite(suite) => {
                if suite.is_empty() {
                    return Err(Error::Suite("test suite is empty".into()));
                }
                // (seen true, seen false) per assignment outside the subset
                let mut buckets: HashMap<Vec<u32>, (bool, bool)> = HashMap::new();
                let mut decided = Vec::with_capacity(suite.len());
                for k in suite {
                    self.schema.validate_input(k)?;
                    let decision = tally.run(k.clone())?;
                    let rest = k.project_complement(subset);
                    let seen = buckets.entry(rest.clone()).or_default();
                    if decision {
                        seen.0 = true;
                    } else {
                        seen.1 = true;
                    }
                    decided.push(rest);
                }
                let discriminating = decided
                    .iter()
                    .filter(|rest| {
                        let (t, f) = buckets[*rest];
                        t && f
                    })
                    .count() as u64;
                let total = suite.len() as u64;
                result.score = AdaptiveEstimator::from_counts(discriminating, total).proportion();
                result.base_inputs = Some((discriminating, total));
                result.exact = true;
            }
            ApparentSource::Profile(profile) => {
                cfg.validate()?;
                if profile.weights().len() != self.schema.len() {
                    return Err(Error::Profile("profile does not match the schema".into()));
                }
                let z = cfg.z();
                let key = StreamKey::new("apparent-causal").with(subset.indices().iter().map(|&i| i as u64));
                let mut rng = stream_rng(cfg.seed, &key);
                let mut est = AdaptiveEstimator::new();
                loop {
                    let k0 = profile.sample(&mut rng);
                    est.record(self.flips(&mut tally, k0, subset, &mut rng)?);
                    if est.should_stop_z(cfg, z) {
                        break;
                    }
                }
                result.score = est.proportion();
                result.base_inputs = Some((est.positives(), est.samples()));
                result.lower_bound = perturbation_count(self.schema, subset) > self.inner_cap as u128;
                result.saturated = est.margin_of_error(cfg.confidence)? >= cfg.epsilon;
            }
        }
        result.tests_generated = tally.suite.len() as u64;
        result.cache_hits = tally.hits;
        Ok(result)
    }
}

pub fn group_score(
    subject: &dyn Evaluator,
    schema: &Schema,
    subset: &CharSubset,
    cfg: &SamplingConfig,
    cache: &EvalCache,
) -> Result<(ScoreResult, TestSuite)> {
    Engine::new(schema, subject, cache).group_score(subset, cfg)
}

pub fn causal_score(
    subject: &dyn Evaluator,
    schema: &Schema,
    subset: &CharSubset,
    cfg: &SamplingConfig,
    cache: &EvalCache,
) -> Result<(ScoreResult, TestSuite)> {
    Engine::new(schema, subject, cache).causal_score(subset, cfg)
}

pub fn apparent_group_score(
    subject: &dyn Evaluator,
    schema: &Schema,
    subset: &CharSubset,
    suite: &TestSuite,
    cache: &EvalCache,
) -> Result<ScoreResult> {
    Engine::new(schema, subject, cache).apparent_group_score(subset, suite)
}

pub fn apparent_causal_score(
    subject: &dyn Evaluator,
    schema: &Schema,
    subset: &CharSubset,
    source: ApparentSource<'_>,
    cfg: &SamplingConfig,
    cache: &EvalCache,
) -> Result<ScoreResult> {
    Engine::new(schema, subject, cache).apparent_causal_score(subset, source, cfg)
}
