//! The submax joint test over `K = 2L + 1` overlapping comparisons: the
//! overall comparison plus, for each covariate, the subgroups where it is 1
//! and where it is 0.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{default_covariate_names, group_pattern, GroupedStudy};
use crate::error::{Error, Result};
use crate::mvnorm::{self, MvnSettings};
use crate::scoring::{self, PsiParams, ScoreMethod, ScoreSet};
use crate::sensitivity::{check_gamma, group_bounds, score_bounds, GammaBounds};

/// Groups smaller than this trigger a warning about the normal approximation.
pub const SMALL_GROUP_WARNING: usize = 30;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonMatrix {
    /// `K x G` inclusion indicators.
    pub rows: Vec<Vec<u8>>,
    pub labels: Vec<String>,
}

impl ComparisonMatrix {
    pub fn n_comparisons(&self) -> usize {
        self.rows.len()
    }

    pub fn n_groups(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }

    fn select(&self, keep: &[usize]) -> ComparisonMatrix {
        ComparisonMatrix {
            rows: keep.iter().map(|&k| self.rows[k].clone()).collect(),
            labels: keep.iter().map(|&k| self.labels[k].clone()).collect(),
        }
    }
}

pub fn build_comparisons(n_covariates: usize) -> ComparisonMatrix {
    build_named_comparisons(&default_covariate_names(n_covariates))
}

/// Comparison matrix labelled with the given covariate names.
pub fn build_named_comparisons(names: &[String]) -> ComparisonMatrix {
    let n_cov = names.len();
    let n_groups = 1usize << n_cov;
    let patterns: Vec<Vec<u8>> = (0..n_groups).map(|g| group_pattern(g, n_cov)).collect();
    let mut rows = vec![vec![1u8; n_groups]];
    let mut labels = vec!["All".to_string()];
    for (l, name) in names.iter().enumerate() {
        for value in [1u8, 0] {
            rows.push(patterns.iter().map(|p| u8::from(p[l] == value)).collect());
            labels.push(format!("{name}={value}"));
        }
    }
    ComparisonMatrix { rows, labels }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointMoments {
    /// Comparison statistics `S = C T`.
    pub s: Vec<f64>,
    /// Worst-case expectations `C mu`.
    pub theta: Vec<f64>,
    /// Covariance `C diag(nu) C^T`.
    pub sigma: Vec<Vec<f64>>,
}

pub fn joint_moments(c: &ComparisonMatrix, bounds: &GammaBounds) -> Result<JointMoments> {
    if c.n_groups() != bounds.mu.len() {
        return Err(Error::InvalidArgument(format!(
            "comparison matrix has {} columns for {} groups",
            c.n_groups(),
            bounds.mu.len()
        )));
    }
    let weighted = |row: &[u8], v: &[f64]| -> f64 { row.iter().zip(v).filter(|(&c, _)| c == 1).map(|(_, x)| x).sum() };
    let s = c.rows.iter().map(|r| weighted(r, &bounds.t_obs)).collect();
    let theta = c.rows.iter().map(|r| weighted(r, &bounds.mu)).collect();
    let sigma: Vec<Vec<f64>> = c
        .rows
        .iter()
        .map(|ri| {
            c.rows
                .iter()
                .map(|rj| {
                    ri.iter()
                        .zip(rj)
                        .zip(&bounds.nu)
                        .filter(|((&a, &b), _)| a == 1 && b == 1)
                        .map(|(_, nu)| nu)
                        .sum()
                })
                .collect()
        })
        .collect();
    for (k, row) in sigma.iter().enumerate() {
        if row[k].is_nan() || row[k] <= 0.0 {
            return Err(Error::DegenerateVariance {
                label: c.labels[k].clone(),
            });
        }
    }
    Ok(JointMoments { s, theta, sigma })
}

pub fn correlation(sigma: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let sd: Vec<f64> = sigma
        .iter()
        .enumerate()
        .map(|(i, row)| {
            if row[i] > 0.0 {
                Ok(row[i].sqrt())
            } else {
                Err(Error::InvalidArgument(format!("covariance diagonal {i} is {}", row[i])))
            }
        })
        .collect::<Result<_>>()?;
    Ok(sigma
        .iter()
        .enumerate()
        .map(|(i, row)| {
            row.iter()
                .enumerate()
                .map(|(j, &v)| if i == j { 1.0 } else { v / (sd[i] * sd[j]) })
                .collect()
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmaxResult {
    pub gamma: f64,
    pub alpha: f64,
    pub method: ScoreMethod,
    pub labels: Vec<String>,
    pub deviates: Vec<f64>,
    pub rho: Vec<Vec<f64>>,
    pub kappa: f64,
    pub d_max: f64,
    pub argmax: String,
    pub reject: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

/// Scores, comparisons and critical value for one study and score method.
/// For matched pairs the correlation of the deviates does not depend on
/// `gamma`, so the critical value is solved once here and reused.
#[derive(Debug, Clone)]
pub struct SubmaxAnalysis {
    scores: ScoreSet,
    comparisons: ComparisonMatrix,
    alpha: f64,
    kappa: f64,
    warnings: Vec<String>,
}

impl SubmaxAnalysis {
    pub fn new(
        study: &GroupedStudy,
        method: ScoreMethod,
        psi: PsiParams,
        alpha: f64,
        settings: &MvnSettings,
    ) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::InvalidAlpha(alpha));
        }
        let scores = scoring::score(study, method, psi)?;
        let full = build_named_comparisons(study.covariate_names());
        let sizes = study.group_sizes();
        let mut warnings = Vec::new();

        let keep: Vec<usize> = (0..full.n_comparisons())
            .filter(|&k| {
                let any = full.rows[k].iter().zip(&sizes).any(|(&c, &n)| c == 1 && n > 0);
                if !any {
                    warnings.push(format!(
                        "comparison {} selects only empty groups and was dropped",
                        full.labels[k]
                    ));
                }
                any
            })
            .collect();
        let comparisons = full.select(&keep);
        for (g, &n) in sizes.iter().enumerate() {
            if n > 0 && n < SMALL_GROUP_WARNING {
                warnings.push(format!(
                    "group {} has only {n} pairs; the normal approximation may be poor",
                    g + 1
                ));
            }
        }
        for w in &warnings {
            log::warn!("{w}");
        }

        let moments = joint_moments(&comparisons, &group_bounds(&scores, study, 1.0)?)?;
        let rho = correlation(&moments.sigma)?;
        let kappa = mvnorm::critical_value(&rho, alpha, settings)?.kappa;
        Ok(SubmaxAnalysis {
            scores,
            comparisons,
            alpha,
            kappa,
            warnings,
        })
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn scores(&self) -> &ScoreSet {
        &self.scores
    }

    pub fn comparisons(&self) -> &ComparisonMatrix {
        &self.comparisons
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn at_gamma(&self, gamma: f64) -> Result<SubmaxResult> {
        check_gamma(gamma)?;
        let bounds = score_bounds(&self.scores, gamma)?;
        let moments = joint_moments(&self.comparisons, &bounds)?;
        let rho = correlation(&moments.sigma)?;
        let deviates: Vec<f64> = (0..self.comparisons.n_comparisons())
            .map(|k| (moments.s[k] - moments.theta[k]) / moments.sigma[k][k].sqrt())
            .collect();
        // First maximum wins ties.
        let (argmax, d_max) =
            deviates.iter().copied().enumerate().fold(
                (0, f64::NEG_INFINITY),
                |best, (k, d)| if d > best.1 { (k, d) } else { best },
            );
        Ok(SubmaxResult {
            gamma,
            alpha: self.alpha,
            method: self.scores.method,
            labels: self.comparisons.labels.clone(),
            deviates,
            rho,
            kappa: self.kappa,
            d_max,
            argmax: self.comparisons.labels[argmax].clone(),
            reject: d_max > self.kappa,
            warnings: self.warnings.clone(),
        })
    }

    /// Whether the test rejects at `gamma`, skipping the correlation matrix.
    pub fn rejects_at(&self, gamma: f64) -> Result<bool> {
        check_gamma(gamma)?;
        let bounds = score_bounds(&self.scores, gamma)?;
        for row in &self.comparisons.rows {
            let (mut s, mut theta, mut var) = (0.0, 0.0, 0.0);
            for (g, _) in row.iter().enumerate().filter(|(_, &c)| c == 1) {
                s += bounds.t_obs[g];
                theta += bounds.mu[g];
                var += bounds.nu[g];
            }
            if (s - theta) / var.sqrt() > self.kappa {
                return Ok(true);
            }
        }
        Ok(false)
    }
}

pub fn submax_test(
    study: &GroupedStudy,
    method: ScoreMethod,
    psi: PsiParams,
    gamma: f64,
    alpha: f64,
    settings: &MvnSettings,
) -> Result<SubmaxResult> {
    check_gamma(gamma)?;
    SubmaxAnalysis::new(study, method, psi, alpha, settings)?.at_gamma(gamma)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub gamma: f64,
    pub d_max: f64,
    pub kappa: f64,
    pub reject: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityValue {
    /// Largest grid value of gamma at which the test rejects; `None` if it
    /// never does.
    pub gamma_star: Option<f64>,
    pub curve: Vec<CurvePoint>,
}

/// The grid `1, 1 + step, ...` up to `gamma_max` (inclusive, up to rounding).
pub fn gamma_grid(gamma_max: f64, step: f64) -> Result<Vec<f64>> {
    check_gamma(gamma_max)?;
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "grid step must be positive, got {step}"
        )));
    }
    let n = ((gamma_max - 1.0) / step + 1e-9).floor() as usize;
    Ok((0..=n).map(|i| 1.0 + i as f64 * step).collect())
}

impl SubmaxAnalysis {
    /// Scans the grid; no monotonicity in gamma is assumed.
    pub fn sensitivity_value(&self, gamma_max: f64, step: f64) -> Result<SensitivityValue> {
        let curve = gamma_grid(gamma_max, step)?
            .into_par_iter()
            .map(|gamma| {
                self.at_gamma(gamma).map(|r| CurvePoint {
                    gamma,
                    d_max: r.d_max,
                    kappa: r.kappa,
                    reject: r.reject,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let gamma_star = curve.iter().rev().find(|p| p.reject).map(|p| p.gamma);
        Ok(SensitivityValue { gamma_star, curve })
    }
}

pub fn sensitivity_value(
    study: &GroupedStudy,
    method: ScoreMethod,
    psi: PsiParams,
    alpha: f64,
    gamma_max: f64,
    step: f64,
    settings: &MvnSettings,
) -> Result<SensitivityValue> {
    gamma_grid(gamma_max, step)?;
    SubmaxAnalysis::new(study, method, psi, alpha, settings)?.sensitivity_value(gamma_max, step)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::RawRecord;

    #[test]
    fn comparisons_one_covariate() {
        let c = build_comparisons(1);
        assert_eq!(c.rows, vec![vec![1, 1], vec![1, 0], vec![0, 1]]);
        assert_eq!(c.labels, vec!["All", "cov_1=1", "cov_1=0"]);
    }

    #[test]
    fn comparisons_two_covariates() {
        let c = build_comparisons(2);
        assert_eq!(c.n_comparisons(), 5);
        assert_eq!(c.n_groups(), 4);
        // groups: (1,1), (1,0), (0,1), (0,0)
        assert_eq!(c.rows[1], vec![1, 1, 0, 0]);
        assert_eq!(c.rows[2], vec![0, 0, 1, 1]);
        assert_eq!(c.rows[3], vec![1, 0, 1, 0]);
        assert_eq!(c.rows[4], vec![0, 1, 0, 1]);
        for g in 0..4 {
            assert_eq!(c.rows.iter().map(|r| r[g] as usize).sum::<usize>(), 3);
        }
    }

    #[test]
    fn comparisons_no_covariates() {
        let c = build_comparisons(0);
        assert_eq!(c.rows, vec![vec![1]]);
        assert_eq!(c.labels, vec!["All"]);
    }

    #[test]
    fn moments_one_covariate() {
        let bounds = GammaBounds {
            gamma: 1.0,
            mu: vec![0.0, 0.0],
            nu: vec![1.0, 1.0],
            t_obs: vec![1.0, 1.0],
        };
        let m = joint_moments(&build_comparisons(1), &bounds).unwrap();
        assert_eq!(m.s, vec![2.0, 1.0, 1.0]);
        assert_eq!(m.theta, vec![0.0, 0.0, 0.0]);
        assert_eq!(
            m.sigma,
            vec![vec![2.0, 1.0, 1.0], vec![1.0, 1.0, 0.0], vec![1.0, 0.0, 1.0]]
        );
        let rho = correlation(&m.sigma).unwrap();
        let r = std::f64::consts::FRAC_1_SQRT_2;
        assert!((rho[0][1] - r).abs() < 1e-15 && (rho[0][2] - r).abs() < 1e-15);
        assert_eq!(rho[1][2], 0.0);
    }

    #[test]
    fn zero_variance_comparison_is_reported() {
        let bounds = GammaBounds {
            gamma: 1.0,
            mu: vec![0.0, 0.0],
            nu: vec![1.0, 0.0],
            t_obs: vec![1.0, 0.0],
        };
        let err = joint_moments(&build_comparisons(1), &bounds).unwrap_err();
        assert_eq!(
            err,
            Error::DegenerateVariance {
                label: "cov_1=0".into()
            }
        );
    }

    #[test]
    fn correlation_special_cases() {
        let diag = vec![vec![4.0, 0.0], vec![0.0, 9.0]];
        assert_eq!(correlation(&diag).unwrap(), vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        let v = [1.0, 2.0, 3.0];
        let outer: Vec<Vec<f64>> = v.iter().map(|a| v.iter().map(|b| a * b).collect()).collect();
        for row in correlation(&outer).unwrap() {
            for x in row {
                assert!((x - 1.0).abs() < 1e-15);
            }
        }
        assert!(correlation(&[vec![0.0]]).is_err());
    }

    fn study(rows: &[(&str, &str, f64)]) -> GroupedStudy {
        let recs: Vec<RawRecord> = rows
            .iter()
            .enumerate()
            .map(|(i, (a, b, d))| RawRecord::new(format!("p{i}"), &[a, b], &d.to_string()))
            .collect();
        GroupedStudy::ingest(&recs).unwrap()
    }

    #[test]
    fn single_comparison_uses_normal_quantile() {
        let recs: Vec<RawRecord> = (0..40)
            .map(|i| RawRecord::new(format!("p{i}"), &[], &format!("{}", (i as f64) * 0.1 - 1.0)))
            .collect();
        let s = GroupedStudy::ingest(&recs).unwrap();
        let r = submax_test(
            &s,
            ScoreMethod::MeanDifference,
            PsiParams::default(),
            1.0,
            0.05,
            &MvnSettings::default(),
        )
        .unwrap();
        assert!((r.kappa - 1.644_853_626_951_472).abs() < 1e-12);
        assert_eq!(r.labels, vec!["All"]);
    }

    #[test]
    fn strong_group_drives_the_maximum() {
        let mut rows = Vec::new();
        for i in 0..200 {
            let noise = ((i * 37 % 101) as f64 / 101.0) - 0.5;
            let (a, b) = [("1", "1"), ("1", "0"), ("0", "1"), ("0", "0")][i % 4];
            let effect = if a == "1" && b == "1" { 3.0 } else { 0.0 };
            rows.push((a, b, effect + noise));
        }
        let s = study(&rows);
        let r = submax_test(
            &s,
            ScoreMethod::MeanDifference,
            PsiParams::default(),
            1.0,
            0.05,
            &MvnSettings::default(),
        )
        .unwrap();
        assert!(r.reject);
        let k = r.labels.iter().position(|l| *l == r.argmax).unwrap();
        assert!(build_comparisons(2).rows[k][0] == 1);
    }

    #[test]
    fn empty_only_comparisons_are_dropped() {
        let rows: Vec<(&str, &str, f64)> = (0..40)
            .map(|i| {
                if i % 2 == 0 {
                    ("1", "1", 1.0 + i as f64)
                } else {
                    ("1", "0", 0.5 - i as f64)
                }
            })
            .collect();
        let s = study(&rows);
        let a = SubmaxAnalysis::new(
            &s,
            ScoreMethod::MStatistic,
            PsiParams::default(),
            0.05,
            &MvnSettings::default(),
        )
        .unwrap();
        assert_eq!(a.comparisons().labels, vec!["All", "cov_1=1", "cov_2=1", "cov_2=0"]);
        assert!(a.warnings().iter().any(|w| w.contains("cov_1=0")));
    }

    #[test]
    fn grid_edges() {
        assert_eq!(gamma_grid(1.0, 0.1).unwrap(), vec![1.0]);
        let g = gamma_grid(2.0, 0.25).unwrap();
        assert_eq!(g.len(), 5);
        assert_eq!(*g.last().unwrap(), 2.0);
        assert!(gamma_grid(2.0, 0.0).is_err());
        assert!(gamma_grid(0.5, 0.1).is_err());
    }

    #[test]
    fn never_rejecting_study() {
        let rows: Vec<(&str, &str, f64)> = (0..80)
            .map(|i| {
                let (a, b) = [("1", "1"), ("1", "0"), ("0", "1"), ("0", "0")][i % 4];
                (
                    a,
                    b,
                    if (i / 4) % 2 == 0 { 1.0 } else { -1.0 } * (1.0 + ((i / 8) % 7) as f64),
                )
            })
            .collect();
        let sv = sensitivity_value(
            &study(&rows),
            ScoreMethod::MeanDifference,
            PsiParams::default(),
            0.05,
            3.0,
            0.5,
            &MvnSettings::default(),
        )
        .unwrap();
        assert_eq!(sv.gamma_star, None);
        assert_eq!(sv.curve.len(), 5);
        assert!(sv.curve.iter().all(|p| !p.reject));
    }
}
