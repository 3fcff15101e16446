//! Per-pair scores for the three test statistics.
//!
//! Every statistic has the form `T = sum_i s_i * q_i` where `s_i` is the sign
//! of the pair difference and `q_i >= 0` its score magnitude:
//!
//! * mean difference: `q = |d|`;
//! * M-statistic: `q = psi(|d| / h0)` with `h0` the median of all `|d|`;
//! * group M-statistic: `q = psi(|d| / h_g) * h_g` with `h_g` the median of
//!   `|d|` within the pair's own group.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::GroupedStudy;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreMethod {
    MeanDifference,
    MStatistic,
    GroupMStatistic,
}

impl ScoreMethod {
    pub const ALL: [ScoreMethod; 3] = [
        ScoreMethod::MeanDifference,
        ScoreMethod::MStatistic,
        ScoreMethod::GroupMStatistic,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ScoreMethod::MeanDifference => "mean_difference",
            ScoreMethod::MStatistic => "m_statistic",
            ScoreMethod::GroupMStatistic => "group_m_statistic",
        }
    }
}

impl fmt::Display for ScoreMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScoreMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean_difference" | "mean-difference" | "mean-diff" | "mean" => Ok(ScoreMethod::MeanDifference),
            "m_statistic" | "m-statistic" | "m" => Ok(ScoreMethod::MStatistic),
            "group_m_statistic" | "group-m-statistic" | "group-m" => Ok(ScoreMethod::GroupMStatistic),
            other => Err(Error::InvalidArgument(format!("unknown score method {other:?}"))),
        }
    }
}

/// Parameters of the trimming function: `inner` (a) and `trim` (t).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PsiParams {
    pub inner: f64,
    pub trim: f64,
}

impl Default for PsiParams {
    fn default() -> Self {
        PsiParams { inner: 0.0, trim: 3.0 }
    }
}

impl PsiParams {
    pub fn new(inner: f64, trim: f64) -> Result<Self> {
        let p = PsiParams { inner, trim };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.inner >= 0.0 && self.inner < self.trim && self.trim.is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidPsi {
                inner: self.inner,
                trim: self.trim,
            })
        }
    }
}

/// Trimming function on a nonnegative argument: 0 below `inner`, identity on
/// `[inner, trim]`, `trim` above.
pub fn psi(d: f64, params: PsiParams) -> f64 {
    debug_assert!(d >= 0.0);
    if d < params.inner {
        0.0
    } else if d <= params.trim {
        d
    } else {
        params.trim
    }
}

/// Median of absolute values; the midpoint of the two central order
/// statistics for even counts.
pub fn abs_median(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::InvalidArgument("median of an empty list".into()));
    }
    let mut abs: Vec<f64> = values.iter().map(|v| v.abs()).collect();
    let n = abs.len();
    let mid = n / 2;
    let (_, upper, _) = abs.select_nth_unstable_by(mid, f64::total_cmp);
    let upper = *upper;
    if n % 2 == 1 {
        Ok(upper)
    } else {
        let lower = abs[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Ok(0.5 * (lower + upper))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredPair {
    pub group: usize,
    pub q: f64,
    pub s: i8,
}

impl ScoredPair {
    fn new(group: usize, d: f64, q: f64) -> Self {
        let s = if q > 0.0 { sign(d) } else { 0 };
        ScoredPair { group, q, s }
    }

    /// Contribution `s * q` to the statistic.
    pub fn signed(&self) -> f64 {
        f64::from(self.s) * self.q
    }
}

fn sign(d: f64) -> i8 {
    if d > 0.0 {
        1
    } else if d < 0.0 {
        -1
    } else {
        0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSet {
    pub method: ScoreMethod,
    /// One entry per pair, in input order.
    pub scores: Vec<ScoredPair>,
    /// Per-group scale: 1 for the mean difference, the pooled median for the
    /// M-statistic (replicated), the within-group median for group M.
    pub scale_factors: Vec<f64>,
}

impl ScoreSet {
    pub fn q(&self) -> Vec<f64> {
        self.scores.iter().map(|s| s.q).collect()
    }

    /// Signed scores on the response scale of the raw differences. Only the
    /// M-statistic needs rescaling, by the pooled median.
    pub fn raw_scale(&self) -> Vec<f64> {
        self.scores
            .iter()
            .map(|sp| match self.method {
                ScoreMethod::MStatistic => sp.signed() * self.scale_factors[sp.group],
                _ => sp.signed(),
            })
            .collect()
    }
}

pub fn score(study: &GroupedStudy, method: ScoreMethod, params: PsiParams) -> Result<ScoreSet> {
    match method {
        ScoreMethod::MeanDifference => Ok(score_mean_difference(study)),
        ScoreMethod::MStatistic => score_m_statistic(study, params),
        ScoreMethod::GroupMStatistic => score_group_m_statistic(study, params),
    }
}

pub fn score_mean_difference(study: &GroupedStudy) -> ScoreSet {
    let scores = study
        .pairs()
        .iter()
        .enumerate()
        .map(|(i, p)| ScoredPair::new(study.group_of(i), p.d, p.d.abs()))
        .collect();
    ScoreSet {
        method: ScoreMethod::MeanDifference,
        scores,
        scale_factors: vec![1.0; study.n_groups()],
    }
}

pub fn score_m_statistic(study: &GroupedStudy, params: PsiParams) -> Result<ScoreSet> {
    params.validate()?;
    let d: Vec<f64> = study.differences().collect();
    let h0 = abs_median(&d)?;
    if h0 <= 0.0 {
        return Err(Error::DegenerateScale);
    }
    let scores = d
        .iter()
        .enumerate()
        .map(|(i, &di)| ScoredPair::new(study.group_of(i), di, psi(di.abs() / h0, params)))
        .collect();
    Ok(ScoreSet {
        method: ScoreMethod::MStatistic,
        scores,
        scale_factors: vec![h0; study.n_groups()],
    })
}

pub fn score_group_m_statistic(study: &GroupedStudy, params: PsiParams) -> Result<ScoreSet> {
    params.validate()?;
    let mut scale_factors = Vec::with_capacity(study.n_groups());
    for g in 0..study.n_groups() {
        let d = study.group_differences(g);
        if d.is_empty() {
            return Err(Error::EmptyGroup { group: g + 1 });
        }
        let h = abs_median(&d)?;
        if h <= 0.0 {
            return Err(Error::DegenerateGroupScale { group: g + 1 });
        }
        scale_factors.push(h);
    }
    let scores = study
        .pairs()
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let g = study.group_of(i);
            let h = scale_factors[g];
            ScoredPair::new(g, p.d, psi(p.d.abs() / h, params) * h)
        })
        .collect();
    Ok(ScoreSet {
        method: ScoreMethod::GroupMStatistic,
        scores,
        scale_factors,
    })
}
