//! Report assembly and TSV/JSON rendering shared by the CLI and library users.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::{Direction, GroupedStudy};
use crate::error::Result;
use crate::mvnorm::MvnSettings;
use crate::scoring::{self, PsiParams, ScoreMethod};
use crate::sim::PowerResult;
use crate::submax::{CurvePoint, SubmaxAnalysis, SubmaxResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyzeOptions {
    pub method: ScoreMethod,
    pub psi: PsiParams,
    pub alpha: f64,
    pub direction: Direction,
    pub mvn: MvnSettings,
}

impl Default for AnalyzeOptions {
    fn default() -> Self {
        AnalyzeOptions {
            method: ScoreMethod::GroupMStatistic,
            psi: PsiParams::default(),
            alpha: 0.05,
            direction: Direction::Greater,
            mvn: MvnSettings::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub settings: AnalyzeOptions,
    pub n_pairs: usize,
    pub group_sizes: Vec<usize>,
    pub labels: Vec<String>,
    /// Number of pairs entering each comparison.
    pub comparison_sizes: Vec<usize>,
    pub kappa: f64,
    pub results: Vec<SubmaxResult>,
}

fn prepare(study: &GroupedStudy, opts: &AnalyzeOptions) -> Result<(GroupedStudy, SubmaxAnalysis)> {
    let oriented = study.oriented(opts.direction);
    let analysis = SubmaxAnalysis::new(&oriented, opts.method, opts.psi, opts.alpha, &opts.mvn)?;
    Ok((oriented, analysis))
}

fn comparison_sizes(study: &GroupedStudy, analysis: &SubmaxAnalysis) -> Vec<usize> {
    let sizes = study.group_sizes();
    analysis
        .comparisons()
        .rows
        .iter()
        .map(|r| r.iter().zip(&sizes).filter(|(&c, _)| c == 1).map(|(_, n)| n).sum())
        .collect()
}

/// Submax test of `study` at each of `gammas`.
pub fn analyze(study: &GroupedStudy, gammas: &[f64], opts: &AnalyzeOptions) -> Result<AnalysisReport> {
    let (oriented, analysis) = prepare(study, opts)?;
    let results = gammas
        .iter()
        .map(|&g| analysis.at_gamma(g))
        .collect::<Result<Vec<_>>>()?;
    Ok(AnalysisReport {
        settings: opts.clone(),
        n_pairs: oriented.n_pairs(),
        group_sizes: oriented.group_sizes(),
        labels: analysis.comparisons().labels.clone(),
        comparison_sizes: comparison_sizes(&oriented, &analysis),
        kappa: analysis.kappa(),
        results,
    })
}

fn settings_line(opts: &AnalyzeOptions) -> String {
    format!(
        "# method={} alpha={} direction={} psi.inner={} psi.trim={} mvn.seed={} mvn.target_se={:e} mvn.max_samples={}",
        opts.method,
        opts.alpha,
        match opts.direction {
            Direction::Greater => "greater",
            Direction::Less => "less",
        },
        opts.psi.inner,
        opts.psi.trim,
        opts.mvn.seed,
        opts.mvn.target_se,
        opts.mvn.max_samples
    )
}

/// One row per gamma, one column per comparison, maximum last. Deviates above
/// the critical value carry a `*`.
pub fn analysis_tsv(report: &AnalysisReport) -> String {
    let mut out = String::new();
    writeln!(out, "{}", settings_line(&report.settings)).unwrap();
    writeln!(out, "# kappa={:.4}", report.kappa).unwrap();
    let sizes: Vec<String> = report.comparison_sizes.iter().map(usize::to_string).collect();
    writeln!(out, "# sample_size\t{}", sizes.join("\t")).unwrap();
    writeln!(out, "gamma\t{}\tmax\targmax\tkappa\treject", report.labels.join("\t")).unwrap();
    let mark = |v: f64, kappa: f64| {
        if v > kappa {
            format!("{v:.2}*")
        } else {
            format!("{v:.2}")
        }
    };
    for r in &report.results {
        let cols: Vec<String> = r.deviates.iter().map(|&d| mark(d, r.kappa)).collect();
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{:.4}\t{}",
            r.gamma,
            cols.join("\t"),
            mark(r.d_max, r.kappa),
            r.argmax,
            r.kappa,
            r.reject
        )
        .unwrap();
    }
    for w in report.results.first().map(|r| r.warnings.as_slice()).unwrap_or(&[]) {
        writeln!(out, "# warning: {w}").unwrap();
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityReport {
    pub settings: AnalyzeOptions,
    pub gamma_max: f64,
    pub step: f64,
    pub kappa: f64,
    pub gamma_star: Option<f64>,
    pub curve: Vec<CurvePoint>,
}

pub fn sensitivity(
    study: &GroupedStudy,
    gamma_max: f64,
    step: f64,
    opts: &AnalyzeOptions,
) -> Result<SensitivityReport> {
    let (_, analysis) = prepare(study, opts)?;
    let sv = analysis.sensitivity_value(gamma_max, step)?;
    Ok(SensitivityReport {
        settings: opts.clone(),
        gamma_max,
        step,
        kappa: analysis.kappa(),
        gamma_star: sv.gamma_star,
        curve: sv.curve,
    })
}

pub fn sensitivity_tsv(report: &SensitivityReport) -> String {
    let mut out = String::new();
    writeln!(out, "{}", settings_line(&report.settings)).unwrap();
    match report.gamma_star {
        Some(g) => writeln!(out, "# gamma_star={g}").unwrap(),
        None => writeln!(out, "# gamma_star=none (no rejection on the grid)").unwrap(),
    }
    writeln!(out, "gamma\td_max\tkappa\treject").unwrap();
    for p in &report.curve {
        writeln!(out, "{}\t{:.4}\t{:.4}\t{}", p.gamma, p.d_max, p.kappa, p.reject).unwrap();
    }
    out
}

/// Per-pair signed scores of each method on the scale of the raw differences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub pair_id: String,
    pub group: usize,
    pub d: f64,
    pub mean_difference: f64,
    pub m_statistic: f64,
    pub group_m_statistic: f64,
}

pub fn export_scores(study: &GroupedStudy, psi: PsiParams, direction: Direction) -> Result<Vec<ScoreRow>> {
    let study = study.oriented(direction);
    let md = scoring::score_mean_difference(&study).raw_scale();
    let m = scoring::score_m_statistic(&study, psi)?.raw_scale();
    let gm = scoring::score_group_m_statistic(&study, psi)?.raw_scale();
    Ok(study
        .pairs()
        .iter()
        .enumerate()
        .map(|(i, p)| ScoreRow {
            pair_id: p.pair_id.clone(),
            group: study.group_of(i) + 1,
            d: p.d,
            mean_difference: md[i],
            m_statistic: m[i],
            group_m_statistic: gm[i],
        })
        .collect())
}

pub fn scores_tsv(rows: &[ScoreRow]) -> String {
    let mut out = String::from("pair_id\tgroup\td\tmean_difference\tm_statistic\tgroup_m_statistic\n");
    for r in rows {
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}",
            r.pair_id, r.group, r.d, r.mean_difference, r.m_statistic, r.group_m_statistic
        )
        .unwrap();
    }
    out
}

pub fn power_tsv(results: &[PowerResult], alpha: f64, null: bool) -> String {
    let mut out = String::new();
    writeln!(out, "# alpha={alpha} null={null}").unwrap();
    writeln!(out, "situation\tgamma\tmethod\tpower\tmc_se\treps\tseed").unwrap();
    for r in results {
        writeln!(
            out,
            "{}\t{}\t{}\t{:.4}\t{:.4}\t{}\t{}",
            r.situation, r.gamma, r.method, r.power, r.mc_se, r.reps, r.seed
        )
        .unwrap();
    }
    out
}
