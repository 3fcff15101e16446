//! Worst-case null moments of the group statistics under the sensitivity
//! model with parameter `gamma >= 1`.
//!
//! In a matched pair the treated unit is the one with the larger response
//! with probability at most `gamma / (1 + gamma)`. A pair with score `q`
//! therefore contributes `+q` or `-q`, and the largest expectation is reached
//! when every pair puts the maximal probability on `+q`.

use serde::{Deserialize, Serialize};

use crate::data::GroupedStudy;
use crate::error::{Error, Result};
use crate::scoring::ScoreSet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaBounds {
    pub gamma: f64,
    /// Maximal expectation of each group statistic.
    pub mu: Vec<f64>,
    /// Variance of each group statistic at the maximising assignment.
    pub nu: Vec<f64>,
    /// Observed group statistics.
    pub t_obs: Vec<f64>,
}

pub fn check_gamma(gamma: f64) -> Result<()> {
    if gamma >= 1.0 && gamma.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidGamma(gamma))
    }
}

/// Worst-case mean and variance contributed by one pair with score `q`.
pub fn pair_bounds(q: f64, gamma: f64) -> Result<(f64, f64)> {
    check_gamma(gamma)?;
    let (mean_factor, var_factor) = pair_factors(gamma);
    Ok((q * mean_factor, q * q * var_factor))
}

/// `((gamma - 1) / (gamma + 1), 4 gamma / (1 + gamma)^2)`.
fn pair_factors(gamma: f64) -> (f64, f64) {
    let denom = 1.0 + gamma;
    ((gamma - 1.0) / denom, 4.0 * gamma / (denom * denom))
}

pub fn group_bounds(scores: &ScoreSet, study: &GroupedStudy, gamma: f64) -> Result<GammaBounds> {
    check_gamma(gamma)?;
    if scores.scores.len() != study.n_pairs() {
        return Err(Error::InvalidArgument(format!(
            "{} scores for {} pairs",
            scores.scores.len(),
            study.n_pairs()
        )));
    }
    if scores.scale_factors.len() != study.n_groups() {
        return Err(Error::InvalidArgument(format!(
            "scores cover {} groups, study has {}",
            scores.scale_factors.len(),
            study.n_groups()
        )));
    }
    score_bounds(scores, gamma)
}

/// Group bounds computed from the scores alone; the number of groups is
/// taken from the score set's scale factors.
pub fn score_bounds(scores: &ScoreSet, gamma: f64) -> Result<GammaBounds> {
    check_gamma(gamma)?;
    let n_groups = scores.scale_factors.len();
    let (mean_factor, var_factor) = pair_factors(gamma);
    let mut sum_q = vec![0.0; n_groups];
    let mut sum_q2 = vec![0.0; n_groups];
    let mut t_obs = vec![0.0; n_groups];
    for sp in &scores.scores {
        sum_q[sp.group] += sp.q;
        sum_q2[sp.group] += sp.q * sp.q;
        t_obs[sp.group] += sp.signed();
    }
    Ok(GammaBounds {
        gamma,
        mu: sum_q.iter().map(|s| s * mean_factor).collect(),
        nu: sum_q2.iter().map(|s| s * var_factor).collect(),
        t_obs,
    })
}

/// Standardised deviate `(t - mu) / sqrt(nu)`.
pub fn deviate(t_obs: f64, mu: f64, nu: f64) -> Result<f64> {
    if nu > 0.0 {
        Ok((t_obs - mu) / nu.sqrt())
    } else {
        Err(Error::DegenerateVariance {
            label: "statistic".into(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::PairDifference;
    use crate::scoring::{ScoreMethod, ScoredPair};

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() <= 1e-12 * b.abs().max(1.0)
    }

    #[test]
    fn pair_bounds_examples() {
        assert_eq!(pair_bounds(2.0, 1.0).unwrap(), (0.0, 4.0));
        let (mu, nu) = pair_bounds(2.0, 3.0).unwrap();
        assert!(close(mu, 1.0) && close(nu, 3.0));
        assert_eq!(pair_bounds(0.0, 7.0).unwrap(), (0.0, 0.0));
        assert_eq!(pair_bounds(1.0, 0.5), Err(Error::InvalidGamma(0.5)));
    }

    fn study_with_groups(groups: &[usize]) -> GroupedStudy {
        let l = if groups.iter().any(|&g| g > 0) { 1 } else { 0 };
        let pairs = groups
            .iter()
            .enumerate()
            .map(|(i, &g)| PairDifference {
                pair_id: i.to_string(),
                covariates: if l == 1 { vec![1 - g as u8] } else { vec![] },
                d: 1.0,
            })
            .collect();
        GroupedStudy::from_pairs(crate::data::default_covariate_names(l), pairs).unwrap()
    }

    fn set(pairs: &[(usize, f64, i8)], n_groups: usize) -> ScoreSet {
        ScoreSet {
            method: ScoreMethod::MeanDifference,
            scores: pairs.iter().map(|&(group, q, s)| ScoredPair { group, q, s }).collect(),
            scale_factors: vec![1.0; n_groups],
        }
    }

    #[test]
    fn group_bounds_examples() {
        let study = study_with_groups(&[0, 0]);
        let b = group_bounds(&set(&[(0, 1.0, 1), (0, 1.0, -1)], 1), &study, 1.0).unwrap();
        assert_eq!((b.t_obs[0], b.mu[0], b.nu[0]), (0.0, 0.0, 2.0));

        let study = study_with_groups(&[0]);
        let b = group_bounds(&set(&[(0, 2.0, 1)], 1), &study, 3.0).unwrap();
        assert!(close(b.t_obs[0], 2.0) && close(b.mu[0], 1.0) && close(b.nu[0], 3.0));

        let study = study_with_groups(&[0, 1]);
        let b = group_bounds(&set(&[(0, 2.0, 1), (1, 2.0, 1)], 2), &study, 3.0).unwrap();
        for g in 0..2 {
            assert!(close(b.t_obs[g], 2.0) && close(b.mu[g], 1.0) && close(b.nu[g], 3.0));
        }
    }

    #[test]
    fn deviate_examples() {
        assert!((deviate(2.0, 1.0, 3.0).unwrap() - 0.577_350_269_189_625_8).abs() < 1e-12);
        assert_eq!(deviate(0.0, 0.0, 4.0).unwrap(), 0.0);
        assert_eq!(deviate(5.0, 5.0, 1.0).unwrap(), 0.0);
        assert!(deviate(1.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn expectation_increases_with_gamma() {
        let study = study_with_groups(&[0, 0, 0]);
        let s = set(&[(0, 0.5, 1), (0, 0.0, 0), (0, 2.0, -1)], 1);
        let mut prev = f64::NEG_INFINITY;
        for k in 0..50 {
            let gamma = 1.0 + 0.2 * f64::from(k);
            let b = group_bounds(&s, &study, gamma).unwrap();
            assert!(b.mu[0] > prev);
            prev = b.mu[0];
        }
    }

    /// Brute force over the vertices of the admissible probability box; the
    /// expectation is linear in each probability so its maximum sits on a
    /// vertex.
    #[test]
    fn matches_vertex_enumeration() {
        let q = [0.3, 1.7, 0.0, 2.2, 0.9, 1.1];
        let gamma = 2.5;
        let lo = 1.0 / (1.0 + gamma);
        let hi = gamma / (1.0 + gamma);
        let mut best = (f64::NEG_INFINITY, 0.0);
        for mask in 0u32..(1 << q.len()) {
            let (mut e, mut v) = (0.0, 0.0);
            for (i, &qi) in q.iter().enumerate() {
                let p = if mask & (1 << i) != 0 { hi } else { lo };
                e += qi * (2.0 * p - 1.0);
                v += qi * qi * 4.0 * p * (1.0 - p);
            }
            if e > best.0 + 1e-15 {
                best = (e, v);
            }
        }
        let study = study_with_groups(&[0; 6]);
        let s = set(&q.iter().map(|&qi| (0, qi, 1)).collect::<Vec<_>>(), 1);
        let b = group_bounds(&s, &study, gamma).unwrap();
        assert!(close(b.mu[0], best.0));
        assert!(close(b.nu[0], best.1));
    }
}
