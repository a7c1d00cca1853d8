//! Built-in deterministic subjects with known discrimination.
//!
//! Fixtures are written as `name:arg:arg...`, where characteristic arguments
//! are either a position or a characteristic name:
//!
//! | spec                              | decision                                              |
//! |-----------------------------------|-------------------------------------------------------|
//! | `const:true` / `const:false`      | constant                                              |
//! | `echo-char:<c>`                   | label index of `c` is not 0                           |
//! | `threshold:<c>:<cutoff>`          | label index of `c` is at least `cutoff`               |
//! | `xor:<c>:<d>`                     | `echo-char:c` xor `echo-char:d`                       |
//! | `table:<seed>`                    | seeded random truth table (see [`table_bit`])         |
//! | `fraction:<c>:<aux>:<f0>,<f1>,..` | label index of `aux` < `f_l * |aux|`, `l` = label of `c` |
//!
//! A `fraction` fixture makes exactly `f_l` of the inputs with `c = l` decide
//! true, so its group scores are known in closed form.

use std::fmt;
use std::io::{BufRead, Write};

use itertools::Itertools;

use crate::error::{Error, Result};
use crate::schema::{Input, Schema};
use crate::subject::{Evaluator, SubjectError};

#[derive(Debug, Clone, PartialEq)]
pub enum FixtureSpec {
    Const(bool),
    EchoChar(usize),
    Threshold {
        position: usize,
        cutoff: u32,
    },
    Xor(usize, usize),
    Table {
        seed: u64,
    },
    Fraction {
        position: usize,
        aux: usize,
        fractions: Vec<f64>,
    },
}

fn resolve_char(arg: &str, schema: &Schema) -> Result<usize> {
    let position = match arg.parse::<usize>() {
        Ok(i) => i,
        Err(_) => schema
            .position(arg)
            .ok_or_else(|| Error::Config(format!("fixture references unknown characteristic `{arg}`")))?,
    };
    if position >= schema.len() {
        return Err(Error::Config(format!(
            "fixture references characteristic {position}, schema has {}",
            schema.len()
        )));
    }
    Ok(position)
}

fn parse_num<T: std::str::FromStr>(arg: &str, what: &str) -> Result<T> {
    arg.parse()
        .map_err(|_| Error::Config(format!("fixture {what} `{arg}` is not a number")))
}

impl FixtureSpec {
    /// Parses and validates a fixture spec against `schema`.
    pub fn parse(text: &str, schema: &Schema) -> Result<FixtureSpec> {
        let parts: Vec<&str> = text.split(':').collect();
        let arity = |n: usize| -> Result<()> {
            if parts.len() == n + 1 {
                Ok(())
            } else {
                Err(Error::Config(format!(
                    "fixture `{}` takes {n} argument(s): `{text}`",
                    parts[0]
                )))
            }
        };
        let spec = match parts[0] {
            "const" => {
                arity(1)?;
                match parts[1] {
                    "true" => FixtureSpec::Const(true),
                    "false" => FixtureSpec::Const(false),
                    other => return Err(Error::Config(format!("const fixture needs true/false, got `{other}`"))),
                }
            }
            "echo-char" => {
                arity(1)?;
                FixtureSpec::EchoChar(resolve_char(parts[1], schema)?)
            }
            "threshold" => {
                arity(2)?;
                FixtureSpec::Threshold {
                    position: resolve_char(parts[1], schema)?,
                    cutoff: parse_num(parts[2], "cutoff")?,
                }
            }
            "xor" => {
                arity(2)?;
                FixtureSpec::Xor(resolve_char(parts[1], schema)?, resolve_char(parts[2], schema)?)
            }
            "table" => {
                arity(1)?;
                FixtureSpec::Table {
                    seed: parse_num(parts[1], "seed")?,
                }
            }
            "fraction" => {
                arity(3)?;
                FixtureSpec::Fraction {
                    position: resolve_char(parts[1], schema)?,
                    aux: resolve_char(parts[2], schema)?,
                    fractions: parts[3]
                        .split(',')
                        .map(|f| parse_num(f, "fraction"))
                        .collect::<Result<_>>()?,
                }
            }
            other => return Err(Error::Config(format!("unknown fixture `{other}`"))),
        };
        spec.validate(schema)?;
        Ok(spec)
    }

    pub fn validate(&self, schema: &Schema) -> Result<()> {
        let n = schema.len();
        let in_range = |i: usize| -> Result<()> {
            if i < n {
                Ok(())
            } else {
                Err(Error::Config(format!(
                    "fixture references characteristic {i}, schema has {n}"
                )))
            }
        };
        match self {
            FixtureSpec::Const(_) | FixtureSpec::Table { .. } => Ok(()),
            FixtureSpec::EchoChar(i) | FixtureSpec::Threshold { position: i, .. } => in_range(*i),
            FixtureSpec::Xor(i, j) => {
                in_range(*i)?;
                in_range(*j)
            }
            FixtureSpec::Fraction {
                position,
                aux,
                fractions,
            } => {
                in_range(*position)?;
                in_range(*aux)?;
                if position == aux {
                    return Err(Error::Config(
                        "fraction fixture needs a separate auxiliary characteristic".into(),
                    ));
                }
                let labels = schema.characteristic(*position).label_count();
                if fractions.len() != labels {
                    return Err(Error::Config(format!(
                        "fraction fixture lists {} fractions for {labels} labels",
                        fractions.len()
                    )));
                }
                let m = schema.characteristic(*aux).label_count() as f64;
                for &f in fractions {
                    let scaled = f * m;
                    if !(0.0..=1.0).contains(&f) || (scaled - scaled.round()).abs() > 1e-9 {
                        return Err(Error::Config(format!(
                            "fraction {f} is not realizable with {m} auxiliary labels"
                        )));
                    }
                }
                Ok(())
            }
        }
    }

    /// Binds a validated spec to its schema.
    pub fn into_fixture_for(self, schema: &Schema) -> Fixture {
        let cutoffs = match &self {
            FixtureSpec::Fraction { aux, fractions, .. } => {
                let m = schema.characteristic(*aux).label_count() as f64;
                fractions.iter().map(|f| (f * m).round() as u32).collect()
            }
            _ => Vec::new(),
        };
        Fixture {
            spec: self,
            label_counts: schema.label_counts(),
            cutoffs,
        }
    }
}

impl fmt::Display for FixtureSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FixtureSpec::Const(b) => write!(f, "const:{b}"),
            FixtureSpec::EchoChar(i) => write!(f, "echo-char:{i}"),
            FixtureSpec::Threshold { position, cutoff } => write!(f, "threshold:{position}:{cutoff}"),
            FixtureSpec::Xor(i, j) => write!(f, "xor:{i}:{j}"),
            FixtureSpec::Table { seed } => write!(f, "table:{seed}"),
            FixtureSpec::Fraction {
                position,
                aux,
                fractions,
            } => write!(f, "fraction:{position}:{aux}:{}", fractions.iter().join(",")),
        }
    }
}

/// SplitMix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Truth-table entry of `table:<seed>` for the input at `linear_index`.
///
/// The linear index is the mixed-radix value of the input with
/// characteristic 0 most significant. The decision is the top bit of
/// `splitmix64(seed ^ splitmix64(linear_index))`.
pub fn table_bit(seed: u64, linear_index: u64) -> bool {
    splitmix64(seed ^ splitmix64(linear_index)) >> 63 == 1
}

/// A fixture bound to a schema, ready to decide inputs.
#[derive(Debug, Clone)]
pub struct Fixture {
    spec: FixtureSpec,
    label_counts: Vec<usize>,
    cutoffs: Vec<u32>,
}

impl Fixture {
    pub fn new(spec: FixtureSpec, schema: &Schema) -> Result<Fixture> {
        spec.validate(schema)?;
        Ok(spec.into_fixture_for(schema))
    }

    pub fn spec(&self) -> &FixtureSpec {
        &self.spec
    }

    fn linear_index(&self, input: &Input) -> u64 {
        input
            .values()
            .iter()
            .zip(&self.label_counts)
            .fold(0u64, |acc, (&v, &m)| acc.wrapping_mul(m as u64).wrapping_add(v as u64))
    }

    /// The fixture's decision; `input` must be valid for the bound schema.
    pub fn decide(&self, input: &Input) -> bool {
        match &self.spec {
            FixtureSpec::Const(b) => *b,
            FixtureSpec::EchoChar(i) => input.value(*i) != 0,
            FixtureSpec::Threshold { position, cutoff } => input.value(*position) >= *cutoff,
            FixtureSpec::Xor(i, j) => (input.value(*i) != 0) ^ (input.value(*j) != 0),
            FixtureSpec::Table { seed } => table_bit(*seed, self.linear_index(input)),
            FixtureSpec::Fraction { position, aux, .. } => {
                input.value(*aux) < self.cutoffs[input.value(*position) as usize]
            }
        }
    }

    fn check(&self, input: &Input) -> std::result::Result<(), String> {
        if input.len() != self.label_counts.len() {
            return Err(format!(
                "input has {} values, fixture schema has {}",
                input.len(),
                self.label_counts.len()
            ));
        }
        match input
            .values()
            .iter()
            .zip(&self.label_counts)
            .position(|(&v, &m)| v as usize >= m)
        {
            Some(i) => Err(format!("label index out of range at position {i}")),
            None => Ok(()),
        }
    }
}

impl Evaluator for Fixture {
    fn evaluate(&self, input: &Input) -> std::result::Result<bool, SubjectError> {
        self.check(input).map_err(|msg| SubjectError {
            kind: crate::subject::SubjectErrorKind::InvalidInput(msg),
            input: format!("{:?}", input.values()),
        })?;
        Ok(self.decide(input))
    }
}

/// Decides `input` under `spec` on `schema`.
pub fn fixture_decide(spec: &FixtureSpec, input: &Input, schema: &Schema) -> Result<bool> {
    spec.validate(schema)?;
    schema.validate_input(input)?;
    Ok(spec.clone().into_fixture_for(schema).decide(input))
}

/// Serves the wire protocol for `fixture` until `reader` reaches end of
/// input. A request that does not decode against the schema is an error.
pub fn serve<R: BufRead, W: Write>(fixture: &Fixture, schema: &Schema, reader: R, mut writer: W) -> Result<()> {
    for line in reader.lines() {
        let line = line?;
        let line = line.strip_suffix('\r').unwrap_or(&line);
        let input = schema.decode_line(line)?;
        let answer = if fixture.decide(&input) { "true\n" } else { "false\n" };
        writer.write_all(answer.as_bytes())?;
        writer.flush()?;
    }
    Ok(())
}
