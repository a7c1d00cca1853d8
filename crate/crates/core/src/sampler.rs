//! Seeded input generation and the adaptive, confidence-driven stopping rule.
//!
//! Every random decision is drawn from a ChaCha8 stream (`rand_chacha`)
//! seeded with the run seed and selected by a [`StreamKey`]. A stream key
//! names one logical task (score kind, subset, group), so the values a task
//! draws never depend on what ran before it or on which worker runs it.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::schema::{CharSubset, Input, Odometer, Schema, SchemaError};

pub type StreamRng = ChaCha8Rng;

pub const DEFAULT_CONFIDENCE: f64 = 0.99;
pub const DEFAULT_EPSILON: f64 = 0.05;
pub const DEFAULT_MAX_SAMPLES: u64 = 100_000;
pub const DEFAULT_SAMPLING_THRESHOLD: u64 = 30;
/// Constrained domains at most this large are enumerated instead of sampled.
pub const DEFAULT_EXHAUSTIVE_LIMIT: u64 = 1024;
/// Above this many perturbations the order comes from an affine index
/// permutation rather than a materialized shuffle.
pub const SHUFFLE_LIMIT: u128 = 65_536;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplingConfig {
    pub confidence: f64,
    pub epsilon: f64,
    pub max_samples: u64,
    pub sampling_threshold: u64,
    pub seed: u64,
    /// Enumerate a group's constrained domain when it has at most this many
    /// inputs. Zero disables enumeration.
    pub exhaustive_limit: u64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig {
            confidence: DEFAULT_CONFIDENCE,
            epsilon: DEFAULT_EPSILON,
            max_samples: DEFAULT_MAX_SAMPLES,
            sampling_threshold: DEFAULT_SAMPLING_THRESHOLD,
            seed: 0,
            exhaustive_limit: DEFAULT_EXHAUSTIVE_LIMIT,
        }
    }
}

impl SamplingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(Error::Config(format!("confidence {} not in (0, 1)", self.confidence)));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::Config(format!("epsilon {} not in (0, 1)", self.epsilon)));
        }
        if self.max_samples == 0 {
            return Err(Error::Config("max_samples must be positive".into()));
        }
        if self.sampling_threshold > self.max_samples {
            return Err(Error::Config(format!(
                "sampling threshold {} exceeds max samples {}",
                self.sampling_threshold, self.max_samples
            )));
        }
        Ok(())
    }

    pub fn z(&self) -> f64 {
        z_value(self.confidence).expect("validated confidence")
    }
}

/// Standard normal quantile, Wichura's algorithm AS 241 (PPND16).
///
/// Relative accuracy is about 1e-16 over `(0, 1)`.
#[allow(clippy::excessive_precision)]
pub fn normal_quantile(p: f64) -> f64 {
    const A: [f64; 8] = [
        3.387_132_872_796_366_608,
        1.331_416_678_917_843_774_5e2,
        1.971_590_950_306_551_442_7e3,
        1.373_169_376_550_946_112_5e4,
        4.592_195_393_154_987_145_7e4,
        6.726_577_092_700_870_085_3e4,
        3.343_057_558_358_812_810_5e4,
        2.509_080_928_730_122_672_7e3,
    ];
    const B: [f64; 8] = [
        1.0,
        4.231_333_070_160_091_125_2e1,
        6.871_870_074_920_579_083e2,
        5.394_196_021_424_751_107_7e3,
        2.121_379_430_158_659_586_7e4,
        3.930_789_580_009_271_061e4,
        2.872_908_573_572_194_267_4e4,
        5.226_495_278_852_854_561e3,
    ];
    const C: [f64; 8] = [
        1.423_437_110_749_683_577_34,
        4.630_337_846_156_545_295_9,
        5.769_497_221_460_691_405_5,
        3.647_848_324_763_204_605_04,
        1.270_458_252_452_368_382_58,
        2.417_807_251_774_506_117_7e-1,
        2.272_384_498_926_918_458_33e-2,
        7.745_450_142_783_414_076_4e-4,
    ];
    const D: [f64; 8] = [
        1.0,
        2.053_191_626_637_758_821_87,
        1.676_384_830_183_803_849_4,
        6.897_673_349_851_000_045_5e-1,
        1.481_039_764_274_800_745_9e-1,
        1.519_866_656_361_645_719_66e-2,
        5.475_938_084_995_344_946e-4,
        1.050_750_071_644_416_843_24e-9,
    ];
    const E: [f64; 8] = [
        6.657_904_643_501_103_777_2,
        5.463_784_911_164_114_369_9,
        1.784_826_539_917_291_335_8,
        2.965_605_718_285_048_912_3e-1,
        2.653_218_952_657_612_309_3e-2,
        1.242_660_947_388_078_438_6e-3,
        2.711_555_568_743_487_578_15e-5,
        2.010_334_399_292_288_132_65e-7,
    ];
    const F: [f64; 8] = [
        1.0,
        5.998_322_065_558_879_376_9e-1,
        1.369_298_809_227_358_053_1e-1,
        1.487_536_129_085_061_485_25e-2,
        7.868_691_311_456_132_591e-4,
        1.846_318_317_510_054_681_8e-5,
        1.421_511_758_316_445_888_7e-7,
        2.044_263_103_389_939_785_64e-15,
    ];
    fn poly(c: &[f64; 8], x: f64) -> f64 {
        c.iter().rev().fold(0.0, |acc, &k| acc * x + k)
    }

    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180_625 - q * q;
        return q * poly(&A, r) / poly(&B, r);
    }
    let r = if q < 0.0 { p } else { 1.0 - p };
    let r = (-r.ln()).sqrt();
    let v = if r <= 5.0 {
        let r = r - 1.6;
        poly(&C, r) / poly(&D, r)
    } else {
        let r = r - 5.0;
        poly(&E, r) / poly(&F, r)
    };
    if q < 0.0 {
        -v
    } else {
        v
    }
}

/// Two-sided critical value `z*` for a confidence level.
pub fn z_value(confidence: f64) -> Result<f64> {
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(Error::Config(format!("confidence {confidence} not in (0, 1)")));
    }
    Ok(normal_quantile(0.5 + confidence / 2.0))
}

/// Running proportion of positive observations.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AdaptiveEstimator {
    samples: u64,
    positives: u64,
}

impl AdaptiveEstimator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_counts(positives: u64, samples: u64) -> Self {
        assert!(positives <= samples, "more positives than samples");
        AdaptiveEstimator { samples, positives }
    }

    pub fn record(&mut self, positive: bool) {
        self.samples += 1;
        self.positives += positive as u64;
    }

    pub fn samples(&self) -> u64 {
        self.samples
    }

    pub fn positives(&self) -> u64 {
        self.positives
    }

    /// Current proportion; 0 before any sample.
    pub fn proportion(&self) -> f64 {
        if self.samples == 0 {
            0.0
        } else {
            self.positives as f64 / self.samples as f64
        }
    }

    fn margin_with_z(&self, z: f64) -> f64 {
        let p = self.proportion();
        z * (p * (1.0 - p) / self.samples as f64).sqrt()
    }

    /// Wald half-width `z* sqrt(p(1-p)/r)`.
    pub fn margin_of_error(&self, confidence: f64) -> Result<f64> {
        if self.samples == 0 {
            return Err(Error::Config("margin of error needs at least one sample".into()));
        }
        Ok(self.margin_with_z(z_value(confidence)?))
    }

    pub fn should_stop(&self, cfg: &SamplingConfig) -> bool {
        self.should_stop_z(cfg, cfg.z())
    }

    pub(crate) fn should_stop_z(&self, cfg: &SamplingConfig, z: f64) -> bool {
        if self.samples >= cfg.max_samples {
            return true;
        }
        self.samples >= cfg.sampling_threshold && self.samples > 0 && self.margin_with_z(z) < cfg.epsilon
    }
}

/// Free-function form of [`AdaptiveEstimator::margin_of_error`].
pub fn margin_of_error(est: &AdaptiveEstimator, confidence: f64) -> Result<f64> {
    est.margin_of_error(confidence)
}

/// Free-function form of [`AdaptiveEstimator::should_stop`].
pub fn should_stop(est: &AdaptiveEstimator, cfg: &SamplingConfig) -> bool {
    est.should_stop(cfg)
}

/// Identifies one independent random stream within a run.
#[derive(Debug, Clone)]
pub struct StreamKey {
    hash: u64,
}

impl StreamKey {
    const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

    pub fn new(tag: &str) -> Self {
        let mut key = StreamKey { hash: Self::FNV_OFFSET };
        key.absorb(tag.as_bytes());
        key
    }

    fn absorb(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.hash ^= b as u64;
            self.hash = self.hash.wrapping_mul(Self::FNV_PRIME);
        }
    }

    /// Appends a length-prefixed list of integers.
    pub fn with<I: IntoIterator<Item = u64>>(mut self, values: I) -> Self {
        let values: Vec<u64> = values.into_iter().collect();
        self.absorb(&(values.len() as u64).to_le_bytes());
        for v in values {
            self.absorb(&v.to_le_bytes());
        }
        self
    }

    pub fn id(&self) -> u64 {
        self.hash
    }
}

/// ChaCha8 seeded from `seed`, positioned on the stream selected by `key`.
pub fn stream_rng(seed: u64, key: &StreamKey) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(key.id());
    rng
}

/// Label indices pinned at some positions.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PartialAssignment {
    positions: Vec<usize>,
    values: Vec<u32>,
}

impl PartialAssignment {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn new(subset: &CharSubset, values: Vec<u32>) -> Self {
        assert_eq!(subset.len(), values.len(), "one value per subset position");
        PartialAssignment {
            positions: subset.indices().to_vec(),
            values,
        }
    }

    pub fn positions(&self) -> &[usize] {
        &self.positions
    }

    pub fn values(&self) -> &[u32] {
        &self.values
    }

    fn value_at(&self, position: usize) -> Option<u32> {
        self.positions.binary_search(&position).ok().map(|i| self.values[i])
    }

    pub fn validate(&self, schema: &Schema) -> Result<(), SchemaError> {
        for (&p, &v) in self.positions.iter().zip(&self.values) {
            if p >= schema.len() {
                return Err(SchemaError::PositionOutOfRange {
                    index: p,
                    n: schema.len(),
                });
            }
            let c = schema.characteristic(p);
            if v as usize >= c.label_count() {
                return Err(SchemaError::IndexOutOfRange {
                    characteristic: c.name().to_owned(),
                    index: v,
                    count: c.label_count(),
                });
            }
        }
        Ok(())
    }

    /// Number of inputs agreeing with this assignment.
    pub fn constrained_size(&self, schema: &Schema) -> Option<u128> {
        let free: Vec<usize> = (0..schema.len()).filter(|p| self.value_at(*p).is_none()).collect();
        schema.product_over(&free)
    }

    /// Every input agreeing with this assignment, free positions in
    /// odometer order.
    pub fn enumerate(&self, schema: &Schema) -> impl Iterator<Item = Input> + '_ {
        let free: Vec<usize> = (0..schema.len()).filter(|p| self.value_at(*p).is_none()).collect();
        let radices = free.iter().map(|&p| schema.characteristic(p).label_count()).collect();
        let template = (0..schema.len())
            .map(|p| self.value_at(p).unwrap_or(0))
            .collect::<Vec<_>>();
        Odometer::new(radices).map(move |digits| {
            let mut values = template.clone();
            for (&p, d) in free.iter().zip(digits) {
                values[p] = d;
            }
            Input::new(values)
        })
    }
}

/// Draws an input agreeing with `fixed`; every other characteristic is
/// uniform over its labels, drawn in schema order.
pub fn random_input(schema: &Schema, fixed: &PartialAssignment, rng: &mut StreamRng) -> Result<Input, SchemaError> {
    fixed.validate(schema)?;
    Ok(random_input_unchecked(schema, fixed, rng))
}

pub(crate) fn random_input_unchecked(schema: &Schema, fixed: &PartialAssignment, rng: &mut StreamRng) -> Input {
    let values = schema
        .characteristics()
        .iter()
        .enumerate()
        .map(|(p, c)| match fixed.value_at(p) {
            Some(v) => v,
            None => rng.random_range(0..c.label_count() as u32),
        })
        .collect();
    Input::new(values)
}

/// Number of inputs differing from a base input only within `subset`.
pub fn perturbation_count(schema: &Schema, subset: &CharSubset) -> u128 {
    schema.product_over(subset.indices()).unwrap_or(u128::MAX) - 1
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

fn mul_mod(a: u128, b: u128, m: u128) -> u128 {
    if a <= u64::MAX as u128 && b <= u64::MAX as u128 {
        return (a * b) % m;
    }
    let (mut a, mut b, mut acc) = (a % m, b, 0u128);
    while b > 0 {
        if b & 1 == 1 {
            acc = if acc >= m - a { acc - (m - a) } else { acc + a };
        }
        a = if a >= m - a { a - (m - a) } else { a + a };
        b >>= 1;
    }
    acc
}

enum Order {
    Shuffled(std::vec::IntoIter<u128>),
    Affine {
        mult: u128,
        offset: u128,
        n: u128,
        next: u128,
    },
}

/// Inputs that agree with a base input outside a subset, in seeded random
/// order, excluding the base input itself.
pub struct Perturbations {
    base: Input,
    positions: Vec<usize>,
    radices: Vec<u128>,
    base_index: u128,
    order: Order,
}

impl Perturbations {
    fn decode(&self, mut index: u128) -> Input {
        let mut k = self.base.clone();
        for (&p, &radix) in self.positions.iter().zip(&self.radices).rev() {
            k.set(p, (index % radix) as u32);
            index /= radix;
        }
        k
    }
}

impl Iterator for Perturbations {
    type Item = Input;

    fn next(&mut self) -> Option<Input> {
        let index = match &mut self.order {
            Order::Shuffled(it) => it.next()?,
            Order::Affine { mult, offset, n, next } => loop {
                if *next >= *n {
                    return None;
                }
                let i = *next;
                *next += 1;
                let mapped = (mul_mod(*mult, i, *n) + *offset) % *n;
                if mapped != self.base_index {
                    break mapped;
                }
            },
        };
        Some(self.decode(index))
    }
}

/// Every perturbation of `input` over `subset`.
///
/// Up to [`SHUFFLE_LIMIT`] combinations the indices are Fisher–Yates shuffled.
/// Beyond that the order is the affine permutation `i -> (a*i + b) mod N`
/// with `a` coprime to `N`, both drawn from `rng`.
pub fn perturbations(input: &Input, subset: &CharSubset, schema: &Schema, rng: &mut StreamRng) -> Perturbations {
    let positions = subset.indices().to_vec();
    let radices: Vec<u128> = positions
        .iter()
        .map(|&p| schema.characteristic(p).label_count() as u128)
        .collect();
    let n = schema.product_over(&positions).unwrap_or(u128::MAX);
    let base_index = positions
        .iter()
        .zip(&radices)
        .fold(0u128, |acc, (&p, &r)| acc * r + input.value(p) as u128);
    let order = if n <= SHUFFLE_LIMIT {
        let mut indices: Vec<u128> = (0..n).filter(|&i| i != base_index).collect();
        indices.shuffle(rng);
        Order::Shuffled(indices.into_iter())
    } else {
        let mult = loop {
            let a = rng.random_range(1..n);
            if gcd(a, n) == 1 {
                break a;
            }
        };
        Order::Affine {
            mult,
            offset: rng.random_range(0..n),
            n,
            next: 0,
        }
    };
    Perturbations {
        base: input.clone(),
        positions,
        radices,
        base_index,
        order,
    }
}
