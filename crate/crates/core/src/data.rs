//! Matched-pair differences and their routing into interaction groups.
//!
//! With `L` binary covariates the pairs fall into `G = 2^L` groups. Groups are
//! ordered by reading the covariate pattern as a binary number (covariate 1 is
//! the most significant bit) in descending order, so group 0 is the all-ones
//! pattern and group `G - 1` the all-zeros pattern.

use serde::{Deserialize, Serialize};

use crate::error::{Error, RecordProblem, Result};

/// One matched pair: the treated-minus-control difference and its covariates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairDifference {
    pub pair_id: String,
    pub covariates: Vec<u8>,
    pub d: f64,
}

/// A row as it arrives from a file, before validation.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRecord {
    pub pair_id: String,
    pub covariates: Vec<String>,
    pub d: String,
}

impl RawRecord {
    pub fn new<S: Into<String>>(pair_id: S, covariates: &[&str], d: &str) -> Self {
        RawRecord {
            pair_id: pair_id.into(),
            covariates: covariates.iter().map(|c| c.to_string()).collect(),
            d: d.to_string(),
        }
    }
}

/// Which tail counts as evidence of a treatment effect.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// Larger differences are evidence for the alternative.
    #[default]
    Greater,
    /// Smaller differences are evidence; differences are negated on ingestion.
    Less,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupedStudy {
    covariate_names: Vec<String>,
    pairs: Vec<PairDifference>,
    group_of: Vec<usize>,
    members: Vec<Vec<usize>>,
}

/// Group index of a covariate pattern under the canonical ordering.
pub fn group_index(pattern: &[u8]) -> usize {
    let n_groups = 1usize << pattern.len();
    let value = pattern.iter().fold(0usize, |acc, &bit| (acc << 1) | usize::from(bit));
    n_groups - 1 - value
}

/// Covariate pattern of group `g` in a design with `n_covariates` covariates.
pub fn group_pattern(g: usize, n_covariates: usize) -> Vec<u8> {
    let value = (1usize << n_covariates) - 1 - g;
    (0..n_covariates)
        .map(|l| ((value >> (n_covariates - 1 - l)) & 1) as u8)
        .collect()
}

pub fn default_covariate_names(n_covariates: usize) -> Vec<String> {
    (1..=n_covariates).map(|l| format!("cov_{l}")).collect()
}

fn parse_covariate(raw: &str) -> Option<u8> {
    match raw.trim() {
        "0" => Some(0),
        "1" => Some(1),
        other => match other.parse::<f64>() {
            Ok(0.0) => Some(0),
            Ok(1.0) => Some(1),
            _ => None,
        },
    }
}

impl GroupedStudy {
    /// Validates raw rows and routes them to groups. All rows must carry the
    /// same number of covariates as the first row.
    pub fn ingest(records: &[RawRecord]) -> Result<Self> {
        let first = records.first().ok_or(Error::EmptyStudy)?;
        let n_covariates = first.covariates.len();
        let mut pairs = Vec::with_capacity(records.len());
        for (i, rec) in records.iter().enumerate() {
            let fail = |problem| Error::InvalidRecord {
                row: i + 1,
                pair_id: rec.pair_id.clone(),
                problem,
            };
            if rec.covariates.len() != n_covariates {
                return Err(fail(RecordProblem::ColumnCount {
                    expected: n_covariates,
                    found: rec.covariates.len(),
                }));
            }
            let mut covariates = Vec::with_capacity(n_covariates);
            for (l, raw) in rec.covariates.iter().enumerate() {
                match parse_covariate(raw) {
                    Some(bit) => covariates.push(bit),
                    None => {
                        return Err(fail(RecordProblem::NonBinaryCovariate {
                            column: l + 1,
                            value: raw.clone(),
                        }))
                    }
                }
            }
            let d = match rec.d.trim().parse::<f64>() {
                Ok(v) if v.is_finite() => v,
                _ => return Err(fail(RecordProblem::NonFiniteDifference { value: rec.d.clone() })),
            };
            pairs.push(PairDifference {
                pair_id: rec.pair_id.clone(),
                covariates,
                d,
            });
        }
        Self::from_pairs(default_covariate_names(n_covariates), pairs)
    }

    /// Builds a study from already-typed pairs, checking the same invariants
    /// as [`GroupedStudy::ingest`].
    pub fn from_pairs(covariate_names: Vec<String>, pairs: Vec<PairDifference>) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::EmptyStudy);
        }
        let n_covariates = covariate_names.len();
        let n_groups = 1usize << n_covariates;
        let mut group_of = Vec::with_capacity(pairs.len());
        let mut members = vec![Vec::new(); n_groups];
        for (i, pair) in pairs.iter().enumerate() {
            let fail = |problem| Error::InvalidRecord {
                row: i + 1,
                pair_id: pair.pair_id.clone(),
                problem,
            };
            if pair.covariates.len() != n_covariates {
                return Err(fail(RecordProblem::ColumnCount {
                    expected: n_covariates,
                    found: pair.covariates.len(),
                }));
            }
            if let Some((l, &v)) = pair.covariates.iter().enumerate().find(|(_, &v)| v > 1) {
                return Err(fail(RecordProblem::NonBinaryCovariate {
                    column: l + 1,
                    value: v.to_string(),
                }));
            }
            if !pair.d.is_finite() {
                return Err(fail(RecordProblem::NonFiniteDifference {
                    value: pair.d.to_string(),
                }));
            }
            let g = group_index(&pair.covariates);
            group_of.push(g);
            members[g].push(i);
        }
        Ok(GroupedStudy {
            covariate_names,
            pairs,
            group_of,
            members,
        })
    }

    pub fn with_covariate_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.n_covariates() {
            return Err(Error::Schema(format!(
                "{} covariate names given for {} covariates",
                names.len(),
                self.n_covariates()
            )));
        }
        self.covariate_names = names;
        Ok(self)
    }

    /// Orients the study so that larger differences always favour the
    /// alternative.
    pub fn oriented(&self, direction: Direction) -> Self {
        match direction {
            Direction::Greater => self.clone(),
            Direction::Less => self.map_differences(|d| -d),
        }
    }

    /// Applies `f` to every difference, keeping group membership.
    pub fn map_differences(&self, f: impl Fn(f64) -> f64) -> Self {
        let mut out = self.clone();
        for p in &mut out.pairs {
            p.d = f(p.d);
        }
        out
    }

    pub fn n_covariates(&self) -> usize {
        self.covariate_names.len()
    }

    pub fn n_groups(&self) -> usize {
        self.members.len()
    }

    pub fn n_pairs(&self) -> usize {
        self.pairs.len()
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn pairs(&self) -> &[PairDifference] {
        &self.pairs
    }

    pub fn differences(&self) -> impl Iterator<Item = f64> + '_ {
        self.pairs.iter().map(|p| p.d)
    }

    /// Group of the `i`-th pair in input order.
    pub fn group_of(&self, i: usize) -> usize {
        self.group_of[i]
    }

    /// Indices (input order) of the pairs in group `g`.
    pub fn members(&self, g: usize) -> &[usize] {
        &self.members[g]
    }

    pub fn group_sizes(&self) -> Vec<usize> {
        self.members.iter().map(Vec::len).collect()
    }

    pub fn group_differences(&self, g: usize) -> Vec<f64> {
        self.members[g].iter().map(|&i| self.pairs[i].d).collect()
    }
}
