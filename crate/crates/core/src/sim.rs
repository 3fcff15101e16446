//! Power of the sensitivity analysis for five simulated designs.
//!
//! Each design has 1000 pairs in two blocks of 500. The first covariate is 1
//! in the first block and 0 in the second, and only it modifies the effect.
//! The second covariate alternates within blocks, giving four interaction
//! groups of 250 pairs. A block's differences are `effect + scale * eps`
//! with i.i.d. errors from a normal or Student-t law.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{default_covariate_names, GroupedStudy, PairDifference};
use crate::error::{Error, Result};
use crate::mvnorm::MvnSettings;
use crate::scoring::{PsiParams, ScoreMethod};
use crate::submax::SubmaxAnalysis;

pub const PAIRS_PER_BLOCK: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ErrorFamily {
    Normal,
    StudentT { df: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlockSpec {
    pub effect: f64,
    pub scale: f64,
    pub family: ErrorFamily,
}

impl BlockSpec {
    const fn new(effect: f64, scale: f64, family: ErrorFamily) -> Self {
        BlockSpec { effect, scale, family }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingSituation {
    pub id: u8,
    /// Pairs 1-500, then pairs 501-1000.
    pub blocks: [BlockSpec; 2],
}

const T2: ErrorFamily = ErrorFamily::StudentT { df: 2.0 };
const T3: ErrorFamily = ErrorFamily::StudentT { df: 3.0 };
const N: ErrorFamily = ErrorFamily::Normal;

impl SamplingSituation {
    pub const ALL: [SamplingSituation; 5] = [
        SamplingSituation {
            id: 1,
            blocks: [BlockSpec::new(5.0, 10.0, N), BlockSpec::new(0.5, 1.0, T2)],
        },
        SamplingSituation {
            id: 2,
            blocks: [BlockSpec::new(5.0, 5.0, T3), BlockSpec::new(0.5, 0.5, T3)],
        },
        SamplingSituation {
            id: 3,
            blocks: [BlockSpec::new(4.0, 5.0, N), BlockSpec::new(0.2, 1.0, N)],
        },
        SamplingSituation {
            id: 4,
            blocks: [BlockSpec::new(5.0, 5.0, T3), BlockSpec::new(0.2, 0.5, N)],
        },
        SamplingSituation {
            id: 5,
            blocks: [BlockSpec::new(1.0, 1.0, T2), BlockSpec::new(0.5, 1.0, T2)],
        },
    ];

    pub fn get(id: u8) -> Result<Self> {
        Self::ALL
            .iter()
            .find(|s| s.id == id)
            .copied()
            .ok_or_else(|| Error::InvalidArgument(format!("no sampling situation {id}; expected 1-5")))
    }

    /// The same error laws with both effects set to zero.
    pub fn null(mut self) -> Self {
        for b in &mut self.blocks {
            b.effect = 0.0;
        }
        self
    }
}

fn draw_error(family: ErrorFamily, rng: &mut ChaCha20Rng) -> f64 {
    match family {
        ErrorFamily::Normal => StandardNormal.sample(rng),
        ErrorFamily::StudentT { df } => StudentT::new(df).expect("positive degrees of freedom").sample(rng),
    }
}

/// Random stream for one replication; independent of any other replication
/// and of the order replications are run in.
fn replication_rng(seed: u64, replication: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(replication);
    rng
}

/// Seed for the integration lattice of one replication.
pub fn replication_mvn_seed(seed: u64, replication: u64) -> u64 {
    splitmix64(seed ^ splitmix64(replication.wrapping_add(0x5851_f42d_4c95_7f2d)))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn generate_study(situation: &SamplingSituation, seed: u64, replication: u64) -> GroupedStudy {
    let mut rng = replication_rng(seed, replication);
    let mut pairs = Vec::with_capacity(2 * PAIRS_PER_BLOCK);
    for (b, block) in situation.blocks.iter().enumerate() {
        for j in 0..PAIRS_PER_BLOCK {
            let i = b * PAIRS_PER_BLOCK + j;
            let eps = draw_error(block.family, &mut rng);
            pairs.push(PairDifference {
                pair_id: format!("p{}", i + 1),
                covariates: vec![u8::from(b == 0), u8::from(j % 2 == 0)],
                d: block.effect + block.scale * eps,
            });
        }
    }
    GroupedStudy::from_pairs(default_covariate_names(2), pairs).expect("simulated pairs are valid")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerResult {
    pub situation: u8,
    pub gamma: f64,
    pub method: ScoreMethod,
    pub power: f64,
    pub reps: usize,
    pub mc_se: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerConfig {
    pub alpha: f64,
    pub reps: usize,
    pub seed: u64,
    pub psi: PsiParams,
    pub mvn: MvnSettings,
}

impl PowerConfig {
    pub fn new(reps: usize, seed: u64) -> Self {
        PowerConfig {
            alpha: 0.05,
            reps,
            seed,
            psi: PsiParams::default(),
            mvn: MvnSettings::default(),
        }
    }
}

/// Rejection indicators of one replication, indexed `[method][gamma]`.
fn replicate(
    situation: &SamplingSituation,
    methods: &[ScoreMethod],
    gammas: &[f64],
    config: &PowerConfig,
    replication: u64,
) -> Vec<Vec<bool>> {
    let study = generate_study(situation, config.seed, replication);
    let mvn = config.mvn.with_seed(replication_mvn_seed(config.seed, replication));
    methods
        .iter()
        .map(|&method| {
            let analysis = SubmaxAnalysis::new(&study, method, config.psi, config.alpha, &mvn);
            gammas
                .iter()
                .map(|&gamma| {
                    match analysis
                        .as_ref()
                        .map_err(Clone::clone)
                        .and_then(|a| a.rejects_at(gamma))
                    {
                        Ok(r) => r,
                        Err(e) => {
                            log::warn!(
                                "situation {} replication {replication} {method}: {e}; counted as non-rejection",
                                situation.id
                            );
                            false
                        }
                    }
                })
                .collect()
        })
        .collect()
}

/// Power for every (method, gamma) cell. Replications share the simulated
/// data across cells, and each is keyed by its index so results do not
/// depend on the thread count.
pub fn power_grid(
    situation: &SamplingSituation,
    methods: &[ScoreMethod],
    gammas: &[f64],
    config: &PowerConfig,
) -> Result<Vec<PowerResult>> {
    if config.reps == 0 {
        return Err(Error::InvalidArgument("reps must be at least 1".into()));
    }
    if !(config.alpha > 0.0 && config.alpha < 1.0) {
        return Err(Error::InvalidAlpha(config.alpha));
    }
    for &g in gammas {
        crate::sensitivity::check_gamma(g)?;
    }
    config.psi.validate()?;
    config.mvn.validate()?;

    let counts = (0..config.reps as u64)
        .into_par_iter()
        .map(|r| {
            replicate(situation, methods, gammas, config, r)
                .into_iter()
                .map(|row| row.into_iter().map(usize::from).collect::<Vec<_>>())
                .collect::<Vec<_>>()
        })
        .reduce(
            || vec![vec![0usize; gammas.len()]; methods.len()],
            |mut acc, x| {
                for (a, b) in acc.iter_mut().zip(x) {
                    for (c, d) in a.iter_mut().zip(b) {
                        *c += d;
                    }
                }
                acc
            },
        );

    let reps = config.reps as f64;
    let mut out = Vec::with_capacity(methods.len() * gammas.len());
    for (gamma_idx, &gamma) in gammas.iter().enumerate() {
        for (m, &method) in methods.iter().enumerate() {
            let power = counts[m][gamma_idx] as f64 / reps;
            out.push(PowerResult {
                situation: situation.id,
                gamma,
                method,
                power,
                reps: config.reps,
                mc_se: (power * (1.0 - power) / reps).sqrt(),
                seed: config.seed,
            });
        }
    }
    Ok(out)
}

pub fn estimate_power(
    situation: &SamplingSituation,
    method: ScoreMethod,
    gamma: f64,
    config: &PowerConfig,
) -> Result<PowerResult> {
    Ok(power_grid(situation, &[method], &[gamma], config)?.remove(0))
}

/// Gamma values reported for each situation in the power table.
pub fn table_gammas(situation_id: u8) -> Vec<f64> {
    if situation_id == 1 {
        vec![1.0, 2.0, 3.0, 4.0]
    } else {
        vec![1.0, 2.0, 3.0, 4.0, 5.0]
    }
}
