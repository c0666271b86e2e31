// SPDX-License-Identifier: MIT OR Apache-2.0

use std::fmt;

use crate::error::{Result, SaeError};

/// One metric line: `name<TAB>value<TAB>n_tokens<TAB>source`.
///
/// Values are printed with Rust's shortest round-trip float formatting, so
/// parsing a line gives back the exact value.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRecord {
    pub name: String,
    pub value: f64,
    pub n_tokens: u64,
    pub source: String,
}

impl MetricRecord {
    pub fn new(
        name: impl Into<String>,
        value: f64,
        n_tokens: u64,
        source: impl Into<String>,
    ) -> Self {
        Self {
            name: name.into(),
            value,
            n_tokens,
            source: source.into(),
        }
    }

    pub fn parse(line: &str) -> Result<Self> {
        let bad = || SaeError::Contract(format!("malformed metric record: {line:?}"));
        let mut it = line.split('\t');
        let (Some(name), Some(value), Some(n), Some(source), None) =
            (it.next(), it.next(), it.next(), it.next(), it.next())
        else {
            return Err(bad());
        };
        Ok(Self {
            name: name.to_owned(),
            value: value.parse().map_err(|_| bad())?,
            n_tokens: n.parse().map_err(|_| bad())?,
            source: source.to_owned(),
        })
    }
}

impl fmt::Display for MetricRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}\t{}\t{}\t{}",
            self.name, self.value, self.n_tokens, self.source
        )
    }
}

pub fn parse_records(text: &str) -> Result<Vec<MetricRecord>> {
    text.lines()
        .filter(|l| !l.is_empty())
        .map(MetricRecord::parse)
        .collect()
}
