//! Input schemas over categorical characteristics.
//!
//! A [`Schema`] is an ordered list of named characteristics, each with an
//! ordered list of distinct labels. An [`Input`] assigns one label *index* to
//! every characteristic; label text only appears when an input crosses the
//! wire to an external subject.
//!
//! The on-disk format is a JSON document:
//!
//! ```json
//! {"characteristics":[{"name":"race","values":["green","purple"]}]}
//! ```

use std::collections::HashSet;
use std::fmt;

use itertools::Itertools;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SchemaError {
    #[error("malformed schema document: {0}")]
    Malformed(String),
    #[error("schema has no characteristics")]
    NoCharacteristics,
    #[error("duplicate characteristic name `{name}` at position {position}")]
    DuplicateName { name: String, position: usize },
    #[error("characteristic `{characteristic}` has duplicate label `{label}` at position {position}")]
    DuplicateLabel {
        characteristic: String,
        label: String,
        position: usize,
    },
    #[error("characteristic `{name}` at position {position} has an empty label set")]
    EmptyLabels { name: String, position: usize },
    #[error("invalid characteristic name {name:?} at position {position}: {reason}")]
    InvalidName {
        name: String,
        position: usize,
        reason: &'static str,
    },
    #[error("characteristic `{characteristic}` has invalid label {label:?}: {reason}")]
    InvalidLabel {
        characteristic: String,
        label: String,
        reason: &'static str,
    },
    #[error("unknown characteristic `{0}`")]
    UnknownCharacteristic(String),
    #[error("characteristic `{characteristic}` has no label `{label}`")]
    UnknownLabel { characteristic: String, label: String },
    #[error("input has {got} values, schema has {expected} characteristics")]
    InputLength { expected: usize, got: usize },
    #[error("label index {index} out of range for characteristic `{characteristic}` ({count} labels)")]
    IndexOutOfRange {
        characteristic: String,
        index: u32,
        count: usize,
    },
    #[error("characteristic index {index} out of range for a schema of {n}")]
    PositionOutOfRange { index: usize, n: usize },
    #[error("subset size {max_size} out of range 1..={n}")]
    SubsetSizeOutOfRange { max_size: usize, n: usize },
    #[error("characteristic subset is empty")]
    EmptySubset,
}

fn check_token(text: &str) -> Option<&'static str> {
    if text.is_empty() {
        Some("empty")
    } else if text.contains(',') {
        Some("contains a comma")
    } else if text.contains('\n') || text.contains('\r') {
        Some("contains a line break")
    } else if text.trim() != text {
        Some("has leading or trailing whitespace")
    } else {
        None
    }
}

/// A categorical variable with an ordered set of value labels.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Characteristic {
    name: String,
    #[serde(rename = "values")]
    labels: Vec<String>,
}

impl Characteristic {
    pub fn new<S: Into<String>>(name: impl Into<String>, labels: impl IntoIterator<Item = S>) -> Self {
        Characteristic {
            name: name.into(),
            labels: labels.into_iter().map(Into::into).collect(),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn label_count(&self) -> usize {
        self.labels.len()
    }

    pub fn label_index(&self, label: &str) -> Option<u32> {
        self.labels.iter().position(|l| l == label).map(|i| i as u32)
    }

    fn validate(&self, position: usize) -> Result<(), SchemaError> {
        if let Some(reason) = check_token(&self.name) {
            return Err(SchemaError::InvalidName {
                name: self.name.clone(),
                position,
                reason,
            });
        }
        if self.labels.is_empty() {
            return Err(SchemaError::EmptyLabels {
                name: self.name.clone(),
                position,
            });
        }
        let mut seen = HashSet::new();
        for (i, label) in self.labels.iter().enumerate() {
            if let Some(reason) = check_token(label) {
                return Err(SchemaError::InvalidLabel {
                    characteristic: self.name.clone(),
                    label: label.clone(),
                    reason,
                });
            }
            if !seen.insert(label.as_str()) {
                return Err(SchemaError::DuplicateLabel {
                    characteristic: self.name.clone(),
                    label: label.clone(),
                    position: i,
                });
            }
        }
        Ok(())
    }
}

#[derive(Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct SchemaDocument {
    characteristics: Vec<Characteristic>,
}

/// An ordered, validated sequence of characteristics.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Schema {
    characteristics: Vec<Characteristic>,
}

impl Schema {
    pub fn new(characteristics: Vec<Characteristic>) -> Result<Self, SchemaError> {
        if characteristics.is_empty() {
            return Err(SchemaError::NoCharacteristics);
        }
        let mut names = HashSet::new();
        for (position, c) in characteristics.iter().enumerate() {
            c.validate(position)?;
            if !names.insert(c.name.as_str()) {
                return Err(SchemaError::DuplicateName {
                    name: c.name.clone(),
                    position,
                });
            }
        }
        Ok(Schema { characteristics })
    }

    /// Parses and validates a schema document.
    pub fn parse(text: &str) -> Result<Self, SchemaError> {
        let doc: SchemaDocument = serde_json::from_str(text).map_err(|e| SchemaError::Malformed(e.to_string()))?;
        Schema::new(doc.characteristics)
    }

    /// Canonical document: compact JSON, characteristics in schema order,
    /// terminated by a newline.
    pub fn serialize(&self) -> String {
        let doc = SchemaDocument {
            characteristics: self.characteristics.clone(),
        };
        let mut text = serde_json::to_string(&doc).expect("schema serializes");
        text.push('\n');
        text
    }

    pub fn len(&self) -> usize {
        self.characteristics.len()
    }

    pub fn is_empty(&self) -> bool {
        self.characteristics.is_empty()
    }

    pub fn characteristics(&self) -> &[Characteristic] {
        &self.characteristics
    }

    pub fn characteristic(&self, index: usize) -> &Characteristic {
        &self.characteristics[index]
    }

    pub fn label_counts(&self) -> Vec<usize> {
        self.characteristics.iter().map(|c| c.labels.len()).collect()
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.characteristics.iter().position(|c| c.name == name)
    }

    /// Number of distinct inputs, or `None` if it does not fit in 128 bits.
    pub fn domain_size(&self) -> Option<u128> {
        self.characteristics
            .iter()
            .try_fold(1u128, |acc, c| acc.checked_mul(c.labels.len() as u128))
    }

    /// Number of distinct label combinations over the given positions.
    pub fn product_over(&self, positions: &[usize]) -> Option<u128> {
        positions.iter().try_fold(1u128, |acc, &i| {
            acc.checked_mul(self.characteristics[i].labels.len() as u128)
        })
    }

    pub fn validate_input(&self, input: &Input) -> Result<(), SchemaError> {
        if input.0.len() != self.len() {
            return Err(SchemaError::InputLength {
                expected: self.len(),
                got: input.0.len(),
            });
        }
        for (c, &v) in self.characteristics.iter().zip(&input.0) {
            if v as usize >= c.labels.len() {
                return Err(SchemaError::IndexOutOfRange {
                    characteristic: c.name.clone(),
                    index: v,
                    count: c.labels.len(),
                });
            }
        }
        Ok(())
    }

    /// Builds an input from label texts given in schema order.
    pub fn input_from_labels<S: AsRef<str>>(&self, labels: &[S]) -> Result<Input, SchemaError> {
        if labels.len() != self.len() {
            return Err(SchemaError::InputLength {
                expected: self.len(),
                got: labels.len(),
            });
        }
        let values = self
            .characteristics
            .iter()
            .zip(labels)
            .map(|(c, l)| {
                c.label_index(l.as_ref()).ok_or_else(|| SchemaError::UnknownLabel {
                    characteristic: c.name.clone(),
                    label: l.as_ref().to_owned(),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Input(values))
    }

    pub fn labels_of<'s>(&'s self, input: &Input) -> Vec<&'s str> {
        self.characteristics
            .iter()
            .zip(&input.0)
            .map(|(c, &v)| c.labels[v as usize].as_str())
            .collect()
    }

    /// Wire encoding of an input: label texts joined by commas, no newline.
    pub fn encode_line(&self, input: &Input) -> String {
        self.labels_of(input).join(",")
    }

    /// Parses one wire-format request line (without its terminator).
    pub fn decode_line(&self, line: &str) -> Result<Input, SchemaError> {
        let parts: Vec<&str> = line.split(',').collect();
        self.input_from_labels(&parts)
    }

    /// Resolves characteristic names into a subset.
    pub fn subset_by_names<S: AsRef<str>>(&self, names: &[S]) -> Result<CharSubset, SchemaError> {
        let indices = names
            .iter()
            .map(|n| {
                self.position(n.as_ref())
                    .ok_or_else(|| SchemaError::UnknownCharacteristic(n.as_ref().to_owned()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        CharSubset::new(indices, self.len())
    }

    pub fn subset_names(&self, subset: &CharSubset) -> Vec<&str> {
        subset
            .indices()
            .iter()
            .map(|&i| self.characteristics[i].name.as_str())
            .collect()
    }

    /// Every input of the schema, in mixed-radix order with the last
    /// characteristic varying fastest.
    pub fn inputs(&self) -> Odometer {
        Odometer::new(self.label_counts())
    }

    /// Every label assignment over `subset`, in the same order as
    /// [`Schema::inputs`] restricted to those positions.
    pub fn assignments(&self, subset: &CharSubset) -> Odometer {
        Odometer::new(
            subset
                .indices()
                .iter()
                .map(|&i| self.characteristics[i].labels.len())
                .collect(),
        )
    }
}

impl fmt::Display for Schema {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.serialize().trim_end())
    }
}

/// A full valuation: one label index per characteristic.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Input(Vec<u32>);

impl Input {
    /// Wraps raw indices without validation; see [`Schema::validate_input`].
    pub fn new(values: Vec<u32>) -> Self {
        Input(values)
    }

    pub fn values(&self) -> &[u32] {
        &self.0
    }

    pub fn value(&self, position: usize) -> u32 {
        self.0[position]
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_values(self) -> Vec<u32> {
        self.0
    }

    /// The values at the given positions.
    pub fn project(&self, subset: &CharSubset) -> Vec<u32> {
        subset.indices().iter().map(|&i| self.0[i]).collect()
    }

    /// The values at every position *not* in `subset`.
    pub fn project_complement(&self, subset: &CharSubset) -> Vec<u32> {
        self.0
            .iter()
            .enumerate()
            .filter(|(i, _)| !subset.contains(*i))
            .map(|(_, &v)| v)
            .collect()
    }

    pub(crate) fn set(&mut self, position: usize, value: u32) {
        self.0[position] = value;
    }
}

impl From<Vec<u32>> for Input {
    fn from(values: Vec<u32>) -> Self {
        Input(values)
    }
}

/// A sorted, deduplicated set of characteristic positions.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CharSubset(Vec<usize>);

impl CharSubset {
    /// Sorts and deduplicates `indices`; rejects empty sets and positions
    /// `>= n`.
    pub fn new(indices: impl IntoIterator<Item = usize>, n: usize) -> Result<Self, SchemaError> {
        let mut indices: Vec<usize> = indices.into_iter().collect();
        indices.sort_unstable();
        indices.dedup();
        if indices.is_empty() {
            return Err(SchemaError::EmptySubset);
        }
        if let Some(&index) = indices.iter().find(|&&i| i >= n) {
            return Err(SchemaError::PositionOutOfRange { index, n });
        }
        Ok(CharSubset(indices))
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, position: usize) -> bool {
        self.0.binary_search(&position).is_ok()
    }

    pub fn is_subset_of(&self, other: &CharSubset) -> bool {
        self.0.iter().all(|&i| other.contains(i))
    }
}

impl fmt::Display for CharSubset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{{}}}", self.0.iter().join(","))
    }
}

/// Mixed-radix counter over a list of radices, last digit fastest.
#[derive(Debug, Clone)]
pub struct Odometer {
    radices: Vec<usize>,
    next: Option<Vec<u32>>,
}

impl Odometer {
    pub fn new(radices: Vec<usize>) -> Self {
        let next = if radices.contains(&0) {
            None
        } else {
            Some(vec![0; radices.len()])
        };
        Odometer { radices, next }
    }
}

impl Iterator for Odometer {
    type Item = Vec<u32>;

    fn next(&mut self) -> Option<Vec<u32>> {
        let current = self.next.take()?;
        let mut succ = current.clone();
        let mut carried = true;
        for (digit, &radix) in succ.iter_mut().zip(&self.radices).rev() {
            *digit += 1;
            if (*digit as usize) < radix {
                carried = false;
                break;
            }
            *digit = 0;
        }
        if !carried {
            self.next = Some(succ);
        }
        Some(current)
    }
}

/// All characteristic subsets of size `1..=max_size`, size-ascending and
/// lexicographic within a size.
pub fn enumerate_subsets(schema: &Schema, max_size: usize) -> Result<impl Iterator<Item = CharSubset>, SchemaError> {
    let n = schema.len();
    if max_size == 0 || max_size > n {
        return Err(SchemaError::SubsetSizeOutOfRange { max_size, n });
    }
    Ok((1..=max_size).flat_map(move |size| (0..n).combinations(size).map(CharSubset)))
}
