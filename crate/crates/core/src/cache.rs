//! Memoized subject evaluations.
//!
//! One cache lives for one run and is shared by every score computed in it.
//! Concurrent requests for the same input are single-flighted: one caller
//! evaluates, the rest wait for its result.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Condvar, Mutex};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::schema::{Input, Schema};
use crate::subject::Evaluator;

pub const DEFAULT_VERIFY_FRACTION: f64 = 0.01;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CacheStats {
    pub hits: u64,
    pub misses: u64,
    pub entries: u64,
}

#[derive(Default)]
struct State {
    entries: HashMap<Vec<u32>, bool>,
    in_flight: HashSet<Vec<u32>>,
}

struct Verifier {
    fraction: f64,
    rng: Mutex<ChaCha8Rng>,
}

/// Outcome of a cached lookup.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Evaluation {
    pub decision: bool,
    pub cached: bool,
}

pub struct EvalCache {
    enabled: bool,
    state: Mutex<State>,
    ready: Condvar,
    hits: AtomicU64,
    misses: AtomicU64,
    verifier: Option<Verifier>,
}

impl Default for EvalCache {
    fn default() -> Self {
        Self::new()
    }
}

impl EvalCache {
    pub fn new() -> Self {
        EvalCache {
            enabled: true,
            state: Mutex::new(State::default()),
            ready: Condvar::new(),
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
            verifier: None,
        }
    }

    /// A pass-through cache: every request reaches the subject.
    pub fn disabled() -> Self {
        EvalCache {
            enabled: false,
            ..Self::new()
        }
    }

    /// Re-evaluates a seeded random `fraction` of cache hits and fails the
    /// lookup if the subject changed its answer.
    pub fn with_verification(mut self, fraction: f64, seed: u64) -> Self {
        self.verifier = Some(Verifier {
            fraction: fraction.clamp(0.0, 1.0),
            rng: Mutex::new(ChaCha8Rng::seed_from_u64(seed)),
        });
        self
    }

    pub fn is_enabled(&self) -> bool {
        self.enabled
    }

    pub fn stats(&self) -> CacheStats {
        CacheStats {
            hits: self.hits.load(Ordering::Relaxed),
            misses: self.misses.load(Ordering::Relaxed),
            entries: self.lock().entries.len() as u64,
        }
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, State> {
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn evaluate(&self, subject: &dyn Evaluator, input: &Input) -> Result<bool> {
        self.lookup(subject, input).map(|e| e.decision)
    }

    /// Returns the decision for `input`, calling `subject` only on a miss.
    /// Failed evaluations are not stored.
    pub fn lookup(&self, subject: &dyn Evaluator, input: &Input) -> Result<Evaluation> {
        if !self.enabled {
            self.misses.fetch_add(1, Ordering::Relaxed);
            return Ok(Evaluation {
                decision: subject.evaluate(input)?,
                cached: false,
            });
        }
        let key = input.values();
        let mut state = self.lock();
        loop {
            if let Some(&decision) = state.entries.get(key) {
                drop(state);
                self.hits.fetch_add(1, Ordering::Relaxed);
                self.verify(subject, input, decision)?;
                return Ok(Evaluation { decision, cached: true });
            }
            if !state.in_flight.contains(key) {
                break;
            }
            state = self.ready.wait(state).unwrap_or_else(|e| e.into_inner());
        }
        state.in_flight.insert(key.to_vec());
        drop(state);

        self.misses.fetch_add(1, Ordering::Relaxed);
        let result = subject.evaluate(input);

        let mut state = self.lock();
        state.in_flight.remove(key);
        if let Ok(decision) = result {
            state.entries.insert(key.to_vec(), decision);
        }
        drop(state);
        self.ready.notify_all();
        Ok(Evaluation {
            decision: result?,
            cached: false,
        })
    }

    fn verify(&self, subject: &dyn Evaluator, input: &Input, cached: bool) -> Result<()> {
        let Some(v) = &self.verifier else {
            return Ok(());
        };
        let selected = v.rng.lock().unwrap_or_else(|e| e.into_inner()).random::<f64>() < v.fraction;
        if !selected {
            return Ok(());
        }
        let again = subject.evaluate(input)?;
        if again != cached {
            return Err(Error::Nondeterministic {
                input: format!("{:?}", input.values()),
                first: cached,
                second: again,
            });
        }
        Ok(())
    }

    /// Writes every entry as `<comma-joined indices>\t<0|1>`, sorted by key.
    pub fn save(&self, path: &Path) -> Result<()> {
        let state = self.lock();
        let mut entries: Vec<_> = state.entries.iter().collect();
        entries.sort();
        let mut out = std::io::BufWriter::new(fs::File::create(path)?);
        for (key, &decision) in entries {
            let joined = key.iter().map(u32::to_string).collect::<Vec<_>>().join(",");
            writeln!(out, "{joined}\t{}", decision as u8)?;
        }
        out.flush()?;
        Ok(())
    }

    /// Loads records written by [`EvalCache::save`]. Records must be valid
    /// for `schema`; loaded entries do not count as misses.
    pub fn load(&self, path: &Path, schema: &Schema) -> Result<usize> {
        let reader = BufReader::new(fs::File::open(path)?);
        let mut state = self.lock();
        let mut loaded = 0;
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let bad = || Error::Config(format!("{}:{}: malformed cache record", path.display(), lineno + 1));
            let (key, decision) = line.split_once('\t').ok_or_else(bad)?;
            let decision = match decision {
                "1" => true,
                "0" => false,
                _ => return Err(bad()),
            };
            let values = key
                .split(',')
                .map(|v| v.parse::<u32>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| bad())?;
            let input = Input::new(values);
            schema.validate_input(&input).map_err(|_| bad())?;
            if let Some(&existing) = state.entries.get(input.values()) {
                if existing != decision {
                    return Err(bad());
                }
                continue;
            }
            state.entries.insert(input.into_values(), decision);
            loaded += 1;
        }
        Ok(loaded)
    }
}

/// Cached evaluation of `input`.
pub fn evaluate_cached(cache: &EvalCache, subject: &dyn Evaluator, input: &Input) -> Result<bool> {
    cache.evaluate(subject, input)
}

pub fn cache_stats(cache: &EvalCache) -> CacheStats {
    cache.stats()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::subject::{SubjectError, SubjectErrorKind};
    use std::sync::atomic::AtomicUsize;

    struct Counting {
        calls: AtomicUsize,
    }

    impl Counting {
        fn new() -> Self {
            Counting {
                calls: AtomicUsize::new(0),
            }
        }
        fn calls(&self) -> usize {
            self.calls.load(Ordering::SeqCst)
        }
    }

    impl Evaluator for Counting {
        fn evaluate(&self, input: &Input) -> std::result::Result<bool, SubjectError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            Ok(input.values().iter().sum::<u32>() % 2 == 1)
        }
    }

    struct Failing;

    impl Evaluator for Failing {
        fn evaluate(&self, input: &Input) -> std::result::Result<bool, SubjectError> {
            Err(SubjectError {
                kind: SubjectErrorKind::Malformed("nope".into()),
                input: format!("{:?}", input.values()),
            })
        }
    }

    struct Flaky {
        calls: AtomicUsize,
    }

    impl Evaluator for Flaky {
        fn evaluate(&self, _: &Input) -> std::result::Result<bool, SubjectError> {
            Ok(self.calls.fetch_add(1, Ordering::SeqCst).is_multiple_of(2))
        }
    }

    #[test]
    fn fresh_cache_is_empty() {
        assert_eq!(EvalCache::new().stats(), CacheStats::default());
    }

    #[test]
    fn repeated_input_evaluates_once() {
        let cache = EvalCache::new();
        let subject = Counting::new();
        let k = Input::new(vec![1, 0]);
        let a = cache.lookup(&subject, &k).unwrap();
        let b = cache.lookup(&subject, &k).unwrap();
        assert_eq!(a.decision, b.decision);
        assert!(!a.cached && b.cached);
        assert_eq!(subject.calls(), 1);
        assert_eq!(
            cache.stats(),
            CacheStats {
                hits: 1,
                misses: 1,
                entries: 1
            }
        );
        cache.evaluate(&subject, &Input::new(vec![0, 1])).unwrap();
        assert_eq!(subject.calls(), 2);
    }

    #[test]
    fn pigeonhole_over_four_inputs() {
        let cache = EvalCache::new();
        let subject = Counting::new();
        for i in 0..10_000u32 {
            let k = Input::new(vec![i % 2, (i / 2) % 2]);
            evaluate_cached(&cache, &subject, &k).unwrap();
        }
        assert_eq!(subject.calls(), 4);
        assert_eq!(
            cache_stats(&cache),
            CacheStats {
                hits: 9_996,
                misses: 4,
                entries: 4
            }
        );
    }

    #[test]
    fn errors_are_not_cached() {
        let cache = EvalCache::new();
        let k = Input::new(vec![0]);
        assert!(cache.evaluate(&Failing, &k).is_err());
        assert!(cache.evaluate(&Failing, &k).is_err());
        let stats = cache.stats();
        assert_eq!((stats.misses, stats.entries, stats.hits), (2, 0, 0));
    }

    #[test]
    fn disabled_cache_always_calls() {
        let cache = EvalCache::disabled();
        let subject = Counting::new();
        for _ in 0..5 {
            cache.evaluate(&subject, &Input::new(vec![1])).unwrap();
        }
        assert_eq!(subject.calls(), 5);
        assert_eq!(cache.stats().entries, 0);
    }

    #[test]
    fn concurrent_misses_are_single_flighted() {
        let cache = EvalCache::new();
        let subject = Counting::new();
        std::thread::scope(|s| {
            for _ in 0..8 {
                s.spawn(|| {
                    for i in 0..200u32 {
                        cache.evaluate(&subject, &Input::new(vec![i % 16])).unwrap();
                    }
                });
            }
        });
        assert_eq!(subject.calls(), 16);
        assert_eq!(cache.stats().misses, 16);
        assert_eq!(cache.stats().hits, 8 * 200 - 16);
    }

    #[test]
    fn verification_catches_nondeterminism() {
        let cache = EvalCache::new().with_verification(1.0, 0);
        let subject = Flaky {
            calls: AtomicUsize::new(0),
        };
        let k = Input::new(vec![0]);
        cache.evaluate(&subject, &k).unwrap();
        let err = cache.evaluate(&subject, &k).unwrap_err();
        assert!(matches!(err, Error::Nondeterministic { .. }));

        let cache = EvalCache::new().with_verification(1.0, 0);
        let stable = Counting::new();
        for _ in 0..3 {
            cache.evaluate(&stable, &k).unwrap();
        }
        // one miss plus one re-evaluation per hit
        assert_eq!(stable.calls(), 3);
    }

    #[test]
    fn persistence_round_trip() {
        use crate::schema::Characteristic;
        let schema = Schema::new(vec![
            Characteristic::new("a", ["x", "y"]),
            Characteristic::new("b", ["p", "q", "r"]),
        ])
        .unwrap();
        let cache = EvalCache::new();
        let subject = Counting::new();
        for k in schema.inputs() {
            cache.evaluate(&subject, &Input::new(k)).unwrap();
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.tsv");
        cache.save(&path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().next(), Some("0,0\t0"));
        assert_eq!(text.lines().count(), 6);

        let restored = EvalCache::new();
        assert_eq!(restored.load(&path, &schema).unwrap(), 6);
        let fresh = Counting::new();
        for k in schema.inputs() {
            restored.evaluate(&fresh, &Input::new(k)).unwrap();
        }
        assert_eq!(fresh.calls(), 0);

        fs::write(&path, "0,5\t1\n").unwrap();
        assert!(EvalCache::new().load(&path, &schema).is_err());
    }
}
