//! Equicoordinate probabilities `Pr(max_k X_k < kappa)` for `X ~ N(0, rho)`
//! and the critical value solving `Pr(max_k X_k < kappa) = 1 - alpha`.
//!
//! The probability is integrated with the separation-of-variables transform
//! over a pivoted Cholesky factor of `rho`, using randomly shifted rank-1
//! lattice rules with the tent transform and antithetic pairs. Rows of a
//! rank-deficient `rho` become extra interval bounds on the last variable
//! they depend on, so the integrand stays continuous; comparison matrices
//! built from subgroups are always rank-deficient (the overall comparison is
//! a combination of the others).

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc_inv;

use crate::error::{Error, Result};

pub const MAX_DIM: usize = 25;

const SYMMETRY_TOL: f64 = 1e-10;
const NEGATIVE_EIGEN_TOL: f64 = -1e-8;
const EIGEN_FLOOR: f64 = 1e-10;
/// Residual variance below which a pivoted Cholesky row is treated as
/// linearly dependent on the earlier ones.
const RANK_TOL: f64 = 1e-8;
/// Factor entries of a dependent row below this size are clipping noise;
/// the row is attached to the last variable with a larger entry.
const DEPENDENT_TOL: f64 = 1e-6;
const PIVOT_TIE_TOL: f64 = 1e-9;
const N_SHIFTS: usize = 12;
const INITIAL_POINTS: usize = 64;
const ROOT_TOL: f64 = 2.5e-5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MvnSettings {
    /// Target standard error of a probability estimate.
    pub target_se: f64,
    /// Cap on integrand evaluations per probability estimate.
    pub max_samples: usize,
    pub seed: u64,
}

impl Default for MvnSettings {
    fn default() -> Self {
        MvnSettings {
            target_se: 5e-4,
            max_samples: 1 << 20,
            seed: 20_240_917,
        }
    }
}

impl MvnSettings {
    pub fn with_seed(self, seed: u64) -> Self {
        MvnSettings { seed, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if self.target_se.is_nan() || self.target_se <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "target_se must be positive, got {}",
                self.target_se
            )));
        }
        if self.max_samples < 1024 {
            return Err(Error::InvalidArgument(format!(
                "max_samples must be at least 1024, got {}",
                self.max_samples
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbEstimate {
    pub p: f64,
    pub se: f64,
    /// Integrand evaluations used.
    pub samples: usize,
    /// False when `max_samples` was reached before `target_se`.
    pub converged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriticalValue {
    pub kappa: f64,
    /// Probability estimate at `kappa`.
    pub p: f64,
    pub se: f64,
}

/// Standard normal distribution function.
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * std::f64::consts::FRAC_1_SQRT_2)
}

/// Standard normal quantile function.
pub fn norm_quantile(p: f64) -> f64 {
    -std::f64::consts::SQRT_2 * erfc_inv(2.0 * p)
}

/// A single constraint `coef * y_j < kappa - sum_{m<j} prefix[m] * y_m`.
#[derive(Debug, Clone)]
struct Constraint {
    coef: f64,
    prefix: Vec<f64>,
}

/// Separation-of-variables form of `rho`, reusable across `kappa` values.
#[derive(Debug, Clone)]
pub struct EquicoordinateIntegrand {
    dim: usize,
    /// Constraints grouped by the variable they bound.
    by_variable: Vec<Vec<Constraint>>,
}

fn to_matrix(rho: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let k = rho.len();
    if k == 0 {
        return Err(Error::InvalidCorrelation("empty matrix".into()));
    }
    if k > MAX_DIM {
        return Err(Error::InvalidCorrelation(format!(
            "dimension {k} exceeds the supported maximum {MAX_DIM}"
        )));
    }
    if let Some(row) = rho.iter().find(|r| r.len() != k) {
        return Err(Error::InvalidCorrelation(format!(
            "row of length {} in a {k}x{k} matrix",
            row.len()
        )));
    }
    let m = DMatrix::from_fn(k, k, |i, j| rho[i][j]);
    for i in 0..k {
        if (m[(i, i)] - 1.0).abs() > SYMMETRY_TOL {
            return Err(Error::InvalidCorrelation(format!(
                "diagonal entry {i} is {} instead of 1",
                m[(i, i)]
            )));
        }
        for j in 0..k {
            let v = m[(i, j)];
            if !v.is_finite() || v.abs() > 1.0 + SYMMETRY_TOL {
                return Err(Error::InvalidCorrelation(format!("entry ({i},{j}) = {v}")));
            }
            if (v - m[(j, i)]).abs() > SYMMETRY_TOL {
                return Err(Error::InvalidCorrelation(format!(
                    "asymmetric at ({i},{j}): {v} vs {}",
                    m[(j, i)]
                )));
            }
        }
    }
    Ok(m)
}

/// Checks positive semidefiniteness and lifts eigenvalues below `1e-10` to
/// that floor, renormalising to a unit diagonal.
fn clip_eigenvalues(m: DMatrix<f64>) -> Result<DMatrix<f64>> {
    let k = m.nrows();
    let sym = (&m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym.clone());
    let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    if min < NEGATIVE_EIGEN_TOL {
        return Err(Error::InvalidCorrelation(format!(
            "not positive semidefinite (smallest eigenvalue {min:.3e})"
        )));
    }
    if min >= EIGEN_FLOOR {
        return Ok(sym);
    }
    let clipped = eig.eigenvalues.map(|l| l.max(EIGEN_FLOOR));
    let v = &eig.eigenvectors;
    let rebuilt = v * DMatrix::from_diagonal(&clipped) * v.transpose();
    let scale: Vec<f64> = (0..k).map(|i| rebuilt[(i, i)].sqrt()).collect();
    Ok(DMatrix::from_fn(k, k, |i, j| {
        if i == j {
            1.0
        } else {
            rebuilt[(i, j)] / (scale[i] * scale[j])
        }
    }))
}

impl EquicoordinateIntegrand {
    pub fn new(rho: &[Vec<f64>]) -> Result<Self> {
        let a = clip_eigenvalues(to_matrix(rho)?)?;
        let k = a.nrows();

        // Outer-product Cholesky in a greedy order: each step takes the row
        // least correlated, conditionally on the rows already taken, with the
        // rows still left. Rows whose residual variance vanishes are linearly
        // dependent and stay out of the order.
        let mut resid = a;
        let mut l = DMatrix::<f64>::zeros(k, k);
        let mut remaining: Vec<usize> = (0..k).collect();
        let mut order = Vec::with_capacity(k);
        for step in 0..k {
            let live: Vec<usize> = remaining
                .iter()
                .copied()
                .filter(|&i| resid[(i, i)] > RANK_TOL)
                .collect();
            let score = |i: usize| -> f64 {
                live.iter()
                    .filter(|&&m| m != i)
                    .map(|&m| resid[(i, m)].powi(2) / (resid[(i, i)] * resid[(m, m)]))
                    .sum()
            };
            // Near-ties go to the lowest index so that rounding noise in rho
            // cannot change the order.
            let Some((pivot, _)) =
                live.iter().map(|&i| (i, score(i))).reduce(
                    |best, cand| {
                        if cand.1 < best.1 - PIVOT_TIE_TOL {
                            cand
                        } else {
                            best
                        }
                    },
                )
            else {
                break;
            };
            let diag = resid[(pivot, pivot)].sqrt();
            remaining.retain(|&i| i != pivot);
            l[(pivot, step)] = diag;
            for &i in &remaining {
                l[(i, step)] = resid[(i, pivot)] / diag;
            }
            for &i in &remaining {
                for &m in &remaining {
                    resid[(i, m)] -= l[(i, step)] * l[(m, step)];
                }
            }
            order.push(pivot);
        }
        let rank = order.len();

        let mut by_variable = vec![Vec::new(); rank];
        let rows = order.iter().enumerate().map(|(step, &i)| (i, Some(step)));
        let dependent = remaining
            .iter()
            .map(|&i| (i, (0..rank).rev().find(|&m| l[(i, m)].abs() > DEPENDENT_TOL)));
        for (i, last) in rows.chain(dependent) {
            match last {
                Some(j) => by_variable[j].push(Constraint {
                    coef: l[(i, j)],
                    prefix: (0..j).map(|m| l[(i, m)]).collect(),
                }),
                // A unit-variance row cannot have an all-zero factor.
                None => {
                    return Err(Error::InvalidCorrelation(format!(
                        "row {i} has no variance after factorisation"
                    )))
                }
            }
        }
        Ok(EquicoordinateIntegrand { dim: k, by_variable })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rank(&self) -> usize {
        self.by_variable.len()
    }

    /// Number of uniform coordinates the integrand consumes.
    fn qmc_dim(&self) -> usize {
        self.rank().saturating_sub(1)
    }

    fn eval(&self, kappa: f64, w: &[f64], y: &mut [f64]) -> f64 {
        let mut f = 1.0;
        let last = self.by_variable.len() - 1;
        for (j, constraints) in self.by_variable.iter().enumerate() {
            let mut lo = f64::NEG_INFINITY;
            let mut hi = f64::INFINITY;
            for c in constraints {
                let shift: f64 = c.prefix.iter().zip(y.iter()).map(|(a, b)| a * b).sum();
                let bound = (kappa - shift) / c.coef;
                if c.coef > 0.0 {
                    hi = hi.min(bound);
                } else {
                    lo = lo.max(bound);
                }
            }
            if lo >= hi {
                return 0.0;
            }
            let a = norm_cdf(lo);
            let e = norm_cdf(hi) - a;
            if e <= 0.0 {
                return 0.0;
            }
            f *= e;
            if j < last {
                let u = (a + w[j] * e).clamp(1e-300, 1.0 - 1e-16);
                y[j] = norm_quantile(u);
            }
        }
        f
    }

    /// Mean of the integrand over one shifted lattice of `n` antithetic pairs.
    fn shift_mean(&self, kappa: f64, generator: &[f64], shift: &[f64], n: usize) -> f64 {
        let d = generator.len();
        let mut x = vec![0.0; d];
        let mut xa = vec![0.0; d];
        let mut y = vec![0.0; self.rank()];
        let mut sum = 0.0;
        for point in 1..=n {
            for j in 0..d {
                let frac = (point as f64 * generator[j] + shift[j]).fract();
                let tent = (2.0 * frac - 1.0).abs();
                x[j] = tent;
                xa[j] = 1.0 - tent;
            }
            sum += 0.5 * (self.eval(kappa, &x, &mut y) + self.eval(kappa, &xa, &mut y));
        }
        sum / n as f64
    }

    /// Estimate with a fixed lattice size and fixed shifts, so repeated calls
    /// at different `kappa` share random numbers.
    fn estimate_fixed(&self, kappa: f64, lattice: &Lattice, n: usize) -> ProbEstimate {
        if self.qmc_dim() == 0 {
            let mut y = vec![0.0; self.rank()];
            return ProbEstimate {
                p: self.eval(kappa, &[], &mut y),
                se: 0.0,
                samples: 1,
                converged: true,
            };
        }
        let means: Vec<f64> = lattice
            .shifts
            .iter()
            .map(|s| self.shift_mean(kappa, &lattice.generator, s, n))
            .collect();
        let m = means.len() as f64;
        let mean = means.iter().sum::<f64>() / m;
        let var = means.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0);
        ProbEstimate {
            p: mean.clamp(0.0, 1.0),
            se: (var / m).sqrt(),
            samples: 2 * n * means.len(),
            converged: true,
        }
    }

    /// Doubles the lattice size until the standard error reaches the target
    /// or the sample budget runs out. Returns the estimate and lattice size.
    fn estimate_adaptive(&self, kappa: f64, lattice: &Lattice, settings: &MvnSettings) -> (ProbEstimate, usize) {
        let mut n = INITIAL_POINTS;
        loop {
            let mut est = self.estimate_fixed(kappa, lattice, n);
            if est.se <= settings.target_se {
                return (est, n);
            }
            if 2 * est.samples > settings.max_samples {
                est.converged = false;
                log::warn!(
                    "equicoordinate probability: se {:.2e} above target {:.2e} at sample cap",
                    est.se,
                    settings.target_se
                );
                return (est, n);
            }
            n *= 2;
        }
    }
}

#[derive(Debug, Clone)]
struct Lattice {
    generator: Vec<f64>,
    shifts: Vec<Vec<f64>>,
}

const PRIMES: [u32; MAX_DIM] = [
    2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89, 97,
];

impl Lattice {
    fn new(dim: usize, seed: u64) -> Self {
        let generator = PRIMES[..dim].iter().map(|&p| f64::from(p).sqrt().fract()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shifts = (0..N_SHIFTS)
            .map(|_| (0..dim).map(|_| rng.random::<f64>()).collect())
            .collect();
        Lattice { generator, shifts }
    }
}

/// `Pr(X_k < kappa for all k)` for `X ~ N(0, rho)`.
pub fn equicoordinate_prob(kappa: f64, rho: &[Vec<f64>], settings: &MvnSettings) -> Result<ProbEstimate> {
    settings.validate()?;
    let integrand = EquicoordinateIntegrand::new(rho)?;
    let lattice = Lattice::new(integrand.qmc_dim(), settings.seed);
    Ok(integrand.estimate_adaptive(kappa, &lattice, settings).0)
}

/// Equicoordinate one-sided critical value at level `alpha`.
pub fn critical_value(rho: &[Vec<f64>], alpha: f64, settings: &MvnSettings) -> Result<CriticalValue> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidAlpha(alpha));
    }
    settings.validate()?;
    let integrand = EquicoordinateIntegrand::new(rho)?;
    solve_critical_value(&integrand, alpha, settings)
}

pub fn solve_critical_value(
    integrand: &EquicoordinateIntegrand,
    alpha: f64,
    settings: &MvnSettings,
) -> Result<CriticalValue> {
    let k = integrand.dim();
    let target = 1.0 - alpha;
    let mut lo = norm_quantile(1.0 - alpha);
    let mut hi = norm_quantile(1.0 - alpha / k as f64);
    if k == 1 {
        return Ok(CriticalValue {
            kappa: lo,
            p: target,
            se: 0.0,
        });
    }
    let lattice = Lattice::new(integrand.qmc_dim(), settings.seed);
    // Fix the lattice size at the bracket midpoint; every later evaluation
    // reuses the same points so the estimated probability is smooth in kappa.
    let (_, n) = integrand.estimate_adaptive(0.5 * (lo + hi), &lattice, settings);
    let eval = |kappa: f64| integrand.estimate_fixed(kappa, &lattice, n);

    let mut est_lo = eval(lo);
    let mut f_lo = est_lo.p - target;
    if f_lo.abs() <= ROOT_TOL {
        return Ok(CriticalValue {
            kappa: lo,
            p: est_lo.p,
            se: est_lo.se,
        });
    }
    let mut est_hi = eval(hi);
    let mut f_hi = est_hi.p - target;
    if f_hi.abs() <= ROOT_TOL {
        return Ok(CriticalValue {
            kappa: hi,
            p: est_hi.p,
            se: est_hi.se,
        });
    }
    // Estimation error can push either end across the target; widen a little
    // before giving up.
    let mut widen = 0;
    while f_lo > 0.0 || f_hi < 0.0 {
        if widen == 10 {
            return Err(Error::BracketFailure(format!(
                "f({lo:.4}) = {f_lo:.2e}, f({hi:.4}) = {f_hi:.2e}"
            )));
        }
        widen += 1;
        if f_lo > 0.0 {
            lo -= 0.05;
            est_lo = eval(lo);
            f_lo = est_lo.p - target;
        }
        if f_hi < 0.0 {
            hi += 0.05;
            est_hi = eval(hi);
            f_hi = est_hi.p - target;
        }
    }

    // Illinois variant of regula falsi.
    let mut side = 0i8;
    for _ in 0..100 {
        let mut x = (lo * f_hi - hi * f_lo) / (f_hi - f_lo);
        if !(x > lo && x < hi) {
            x = 0.5 * (lo + hi);
        }
        let est = eval(x);
        let f = est.p - target;
        if f.abs() <= ROOT_TOL || hi - lo < 1e-9 {
            return Ok(CriticalValue {
                kappa: x,
                p: est.p,
                se: est.se,
            });
        }
        if f < 0.0 {
            lo = x;
            f_lo = f;
            if side == -1 {
                f_hi *= 0.5;
            }
            side = -1;
        } else {
            hi = x;
            f_hi = f;
            if side == 1 {
                f_lo *= 0.5;
            }
            side = 1;
        }
    }
    Err(Error::BracketFailure("root search did not converge".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity(k: usize) -> Vec<Vec<f64>> {
        (0..k)
            .map(|i| (0..k).map(|j| f64::from(u8::from(i == j))).collect())
            .collect()
    }

    #[test]
    fn normal_functions() {
        let err = norm_cdf(1.959_963_984_540_054) - 0.975;
        assert!(err.abs() < 1e-14, "{err:e}");
        assert!((norm_quantile(0.95) - 1.644_853_626_951_472_2).abs() < 1e-12);
        assert_eq!(norm_cdf(f64::INFINITY), 1.0);
        assert_eq!(norm_cdf(f64::NEG_INFINITY), 0.0);
    }

    #[test]
    fn single_dimension_is_exact() {
        let est = equicoordinate_prob(1.6449, &identity(1), &MvnSettings::default()).unwrap();
        assert!((est.p - norm_cdf(1.6449)).abs() < 1e-15);
        assert_eq!(est.se, 0.0);
    }

    #[test]
    fn independent_pair() {
        let est = equicoordinate_prob(1.96, &identity(2), &MvnSettings::default()).unwrap();
        assert!((est.p - 0.950_625).abs() < 1e-3, "{est:?}");
    }

    #[test]
    fn comonotone_collapses_to_one_dimension() {
        let ones = vec![vec![1.0; 3]; 3];
        let integrand = EquicoordinateIntegrand::new(&ones).unwrap();
        assert_eq!(integrand.rank(), 1);
        let est = equicoordinate_prob(1.6449, &ones, &MvnSettings::default()).unwrap();
        assert!((est.p - norm_cdf(1.6449)).abs() < 1e-9);
    }

    #[test]
    fn rejects_invalid_matrices() {
        let s = MvnSettings::default();
        let asym = vec![vec![1.0, 0.5], vec![0.4, 1.0]];
        assert!(matches!(
            equicoordinate_prob(1.0, &asym, &s),
            Err(Error::InvalidCorrelation(_))
        ));
        let diag = vec![vec![2.0, 0.0], vec![0.0, 1.0]];
        assert!(matches!(
            equicoordinate_prob(1.0, &diag, &s),
            Err(Error::InvalidCorrelation(_))
        ));
        let indefinite = vec![vec![1.0, 0.9, -0.9], vec![0.9, 1.0, 0.9], vec![-0.9, 0.9, 1.0]];
        assert!(matches!(
            equicoordinate_prob(1.0, &indefinite, &s),
            Err(Error::InvalidCorrelation(_))
        ));
    }

    #[test]
    fn critical_value_closed_forms() {
        let s = MvnSettings::default();
        let cv = critical_value(&identity(1), 0.05, &s).unwrap();
        assert!((cv.kappa - 1.6449).abs() < 2e-3);
        let cv = critical_value(&identity(2), 0.05, &s).unwrap();
        let exact = norm_quantile(0.95f64.sqrt());
        assert!((cv.kappa - exact).abs() < 3e-3, "{cv:?} vs {exact}");
        assert!(critical_value(&identity(2), 1.0, &s).is_err());
    }

    #[test]
    fn deterministic_for_a_seed() {
        let rho = vec![vec![1.0, 0.3, 0.2], vec![0.3, 1.0, 0.6], vec![0.2, 0.6, 1.0]];
        let s = MvnSettings::default();
        let a = equicoordinate_prob(1.8, &rho, &s).unwrap();
        let b = equicoordinate_prob(1.8, &rho, &s).unwrap();
        assert_eq!(a.p.to_bits(), b.p.to_bits());
    }
}
