use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use groupsens::data::Direction;
use groupsens::error::Error;
use groupsens::mvnorm::{self, MvnSettings};
use groupsens::report::{self, AnalyzeOptions};
use groupsens::scoring::{PsiParams, ScoreMethod};
use groupsens::sim::{self, PowerConfig, SamplingSituation};
use groupsens::submax::{correlation, joint_moments, SubmaxAnalysis};
use groupsens::GroupedStudy;

const LONG_VERSION: &str = concat!(
    env!("CARGO_PKG_VERSION"),
    "\npsi defaults: inner=0 trim=3",
    "\nmvn defaults: target_se=5e-4 max_samples=1048576"
);

#[derive(Parser)]
#[command(name = "groupsens", version, long_version = LONG_VERSION)]
#[command(about = "Submax sensitivity analysis for matched pairs with effect modification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Deviates, critical value and decision at one or more values of gamma.
    Analyze {
        #[command(flatten)]
        input: Input,
        #[command(flatten)]
        stat: StatArgs,
        /// Comma-separated sensitivity parameters.
        #[arg(long, value_delimiter = ',', default_value = "1")]
        gamma: Vec<f64>,
        #[arg(long, value_enum, default_value_t = Format::Tsv)]
        format: Format,
    },
    /// Largest gamma on a grid at which the test still rejects.
    SensitivityValue {
        #[command(flatten)]
        input: Input,
        #[command(flatten)]
        stat: StatArgs,
        #[arg(long, default_value_t = 10.0)]
        gamma_max: f64,
        #[arg(long, default_value_t = 0.05)]
        step: f64,
        #[arg(long, value_enum, default_value_t = Format::Tsv)]
        format: Format,
    },
    /// Equicoordinate critical value for a correlation matrix.
    Critval {
        /// JSON file holding the correlation matrix as an array of rows.
        #[arg(long, conflicts_with_all = ["data", "simulate"])]
        rho: Option<PathBuf>,
        #[command(flatten)]
        input: OptionalInput,
        #[command(flatten)]
        stat: StatArgs,
        #[arg(long, value_enum, default_value_t = Format::Tsv)]
        format: Format,
    },
    /// Simulated power of the sensitivity analysis.
    Power {
        /// Comma-separated sampling situations (1-5).
        #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5")]
        situations: Vec<u8>,
        /// Comma-separated gammas; defaults to 1..4 for situation 1 and 1..5 otherwise.
        #[arg(long, value_delimiter = ',')]
        gammas: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',', value_enum, default_values_t = [MethodArg::MeanDiff, MethodArg::M, MethodArg::GroupM])]
        methods: Vec<MethodArg>,
        #[arg(long, default_value_t = 10_000)]
        reps: usize,
        /// Set both block effects to zero.
        #[arg(long)]
        null: bool,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        #[arg(long, env = "GROUPSENS_SEED", default_value_t = 1)]
        seed: u64,
        #[command(flatten)]
        psi: PsiArgs,
        #[command(flatten)]
        mvn: MvnArgs,
        #[arg(long, value_enum, default_value_t = Format::Tsv)]
        format: Format,
    },
    /// Per-pair scores of all three methods on the raw-difference scale.
    ExportScores {
        #[command(flatten)]
        input: Input,
        #[arg(long, value_enum, default_value_t = DirectionArg::Greater)]
        direction: DirectionArg,
        #[command(flatten)]
        psi: PsiArgs,
        /// Output file; standard output if omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct Input {
    /// CSV file with header `pair_id,<covariates...>,d`.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Simulated study `SITUATION:SEED` (replication 0).
    #[arg(long)]
    simulate: Option<String>,
}

#[derive(Args)]
#[group(required = false, multiple = false)]
struct OptionalInput {
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    simulate: Option<String>,
}

#[derive(Args)]
struct StatArgs {
    #[arg(long, value_enum, default_value_t = MethodArg::GroupM)]
    method: MethodArg,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, value_enum, default_value_t = DirectionArg::Greater)]
    direction: DirectionArg,
    #[command(flatten)]
    psi: PsiArgs,
    #[command(flatten)]
    mvn: MvnArgs,
}

#[derive(Args)]
struct PsiArgs {
    /// Inner parameter of the trimming function.
    #[arg(long, default_value_t = 0.0)]
    inner: f64,
    /// Trimming point of the trimming function.
    #[arg(long, default_value_t = 3.0)]
    trim: f64,
}

#[derive(Args)]
struct MvnArgs {
    /// Seed for the multivariate normal integration.
    #[arg(long = "mvn-seed", env = "GROUPSENS_SEED", default_value_t = MvnSettings::default().seed)]
    mvn_seed: u64,
    #[arg(long = "mvn-se", default_value_t = 5e-4)]
    target_se: f64,
    #[arg(long = "mvn-max-samples", default_value_t = 1 << 20)]
    max_samples: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    #[value(name = "mean-diff")]
    MeanDiff,
    M,
    #[value(name = "group-m")]
    GroupM,
}

impl From<MethodArg> for ScoreMethod {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::MeanDiff => ScoreMethod::MeanDifference,
            MethodArg::M => ScoreMethod::MStatistic,
            MethodArg::GroupM => ScoreMethod::GroupMStatistic,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum DirectionArg {
    Greater,
    Less,
}

impl From<DirectionArg> for Direction {
    fn from(d: DirectionArg) -> Self {
        match d {
            DirectionArg::Greater => Direction::Greater,
            DirectionArg::Less => Direction::Less,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Tsv,
    Json,
}

impl PsiArgs {
    fn params(&self) -> Result<PsiParams, Error> {
        PsiParams::new(self.inner, self.trim)
    }
}

impl MvnArgs {
    fn settings(&self) -> Result<MvnSettings, Error> {
        let s = MvnSettings {
            target_se: self.target_se,
            max_samples: self.max_samples,
            seed: self.mvn_seed,
        };
        s.validate()?;
        Ok(s)
    }
}

impl StatArgs {
    fn options(&self) -> Result<AnalyzeOptions, Error> {
        Ok(AnalyzeOptions {
            method: self.method.into(),
            psi: self.psi.params()?,
            alpha: self.alpha,
            direction: self.direction.into(),
            mvn: self.mvn.settings()?,
        })
    }
}

fn load(data: Option<&PathBuf>, simulate: Option<&str>) -> Result<GroupedStudy, Error> {
    match (data, simulate) {
        (Some(path), _) => groupsens::io::read_study_file(path),
        (None, Some(arg)) => {
            let (situation, seed) = arg
                .split_once(':')
                .and_then(|(a, b)| Some((a.trim().parse::<u8>().ok()?, b.trim().parse::<u64>().ok()?)))
                .ok_or_else(|| Error::InvalidArgument(format!("--simulate expects SITUATION:SEED, got {arg:?}")))?;
            Ok(sim::generate_study(&SamplingSituation::get(situation)?, seed, 0))
        }
        (None, None) => Err(Error::InvalidArgument("one of --data or --simulate is required".into())),
    }
}

fn to_json<T: serde::Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report types serialise");
    s.push('\n');
    s
}

fn run(cli: Cli) -> Result<String, Error> {
    match cli.command {
        Command::Analyze {
            input,
            stat,
            gamma,
            format,
        } => {
            let study = load(input.data.as_ref(), input.simulate.as_deref())?;
            let report = report::analyze(&study, &gamma, &stat.options()?)?;
            Ok(match format {
                Format::Tsv => report::analysis_tsv(&report),
                Format::Json => to_json(&report),
            })
        }
        Command::SensitivityValue {
            input,
            stat,
            gamma_max,
            step,
            format,
        } => {
            let study = load(input.data.as_ref(), input.simulate.as_deref())?;
            let report = report::sensitivity(&study, gamma_max, step, &stat.options()?)?;
            Ok(match format {
                Format::Tsv => report::sensitivity_tsv(&report),
                Format::Json => to_json(&report),
            })
        }
        Command::Critval {
            rho,
            input,
            stat,
            format,
        } => {
            let opts = stat.options()?;
            let (rho, labels) = match rho {
                Some(path) => {
                    let text = std::fs::read_to_string(&path)
                        .map_err(|e| Error::Schema(format!("cannot read {}: {e}", path.display())))?;
                    let rho: Vec<Vec<f64>> =
                        serde_json::from_str(&text).map_err(|e| Error::Schema(format!("{}: {e}", path.display())))?;
                    let labels = (1..=rho.len()).map(|k| format!("k{k}")).collect();
                    (rho, labels)
                }
                None => {
                    let study = load(input.data.as_ref(), input.simulate.as_deref())?.oriented(opts.direction);
                    let analysis = SubmaxAnalysis::new(&study, opts.method, opts.psi, opts.alpha, &opts.mvn)?;
                    let bounds = groupsens::sensitivity::group_bounds(analysis.scores(), &study, 1.0)?;
                    let moments = joint_moments(analysis.comparisons(), &bounds)?;
                    (correlation(&moments.sigma)?, analysis.comparisons().labels.clone())
                }
            };
            let cv = mvnorm::critical_value(&rho, opts.alpha, &opts.mvn)?;
            Ok(match format {
                Format::Json => to_json(&serde_json::json!({
                    "alpha": opts.alpha,
                    "labels": labels,
                    "rho": rho,
                    "kappa": cv.kappa,
                    "p": cv.p,
                    "se": cv.se,
                    "mvn": opts.mvn,
                })),
                Format::Tsv => format!(
                    "# alpha={} mvn.seed={} mvn.target_se={:e} mvn.max_samples={}\nkappa\tp\tse\n{:.4}\t{:.5}\t{:.2e}\n",
                    opts.alpha, opts.mvn.seed, opts.mvn.target_se, opts.mvn.max_samples, cv.kappa, cv.p, cv.se
                ),
            })
        }
        Command::Power {
            situations,
            gammas,
            methods,
            reps,
            null,
            alpha,
            seed,
            psi,
            mvn,
            format,
        } => {
            let methods: Vec<ScoreMethod> = methods.into_iter().map(Into::into).collect();
            let config = PowerConfig {
                alpha,
                reps,
                seed,
                psi: psi.params()?,
                mvn: mvn.settings()?,
            };
            let mut results = Vec::new();
            for id in situations {
                let mut situation = SamplingSituation::get(id)?;
                if null {
                    situation = situation.null();
                }
                let grid = gammas.clone().unwrap_or_else(|| sim::table_gammas(id));
                results.extend(sim::power_grid(&situation, &methods, &grid, &config)?);
            }
            Ok(match format {
                Format::Tsv => report::power_tsv(&results, alpha, null),
                Format::Json => to_json(&serde_json::json!({
                    "alpha": alpha,
                    "null": null,
                    "seed": seed,
                    "reps": reps,
                    "psi": config.psi,
                    "mvn": config.mvn,
                    "results": results,
                })),
            })
        }
        Command::ExportScores {
            input,
            direction,
            psi,
            out,
        } => {
            let study = load(input.data.as_ref(), input.simulate.as_deref())?;
            let rows = report::export_scores(&study, psi.params()?, direction.into())?;
            let tsv = report::scores_tsv(&rows);
            match out {
                Some(path) => {
                    std::fs::write(&path, tsv)
                        .map_err(|e| Error::Schema(format!("cannot write {}: {e}", path.display())))?;
                    Ok(String::new())
                }
                None => Ok(tsv),
            }
        }
    }
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::InvalidRecord { .. } | Error::EmptyStudy | Error::Schema(_) => 2,
        e if e.is_degenerate() => 3,
        e if e.is_numeric() => 4,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(out) => {
            let _ = std::io::stdout().write_all(out.as_bytes());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
