//! Global solution of the reduced weighted-throughput problem.

mod dinkelbach;
mod mapel;
mod oracle;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::reduction::MeanFieldWtm;

pub use dinkelbach::{dinkelbach_projection, Projection};
pub use mapel::{mapel_run, mapel_solve, MapelOptions, MapelState, MapelStep};
pub use oracle::{oracle_feasible, oracle_grid_search};

/// How the SINR floor is derived from the minimum rate.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum RateFloor {
    /// `2^R - 1`, the SINR that yields exactly `R` bits/s/Hz.
    #[default]
    Shannon,
    /// `2^(R-1)`.
    Shifted,
}

impl RateFloor {
    pub fn gamma(self, r_min: f64) -> f64 {
        match self {
            RateFloor::Shannon => 2f64.powf(r_min) - 1.0,
            RateFloor::Shifted => 2f64.powf(r_min - 1.0),
        }
    }
}

/// SINR floor for a minimum rate.
pub fn gamma_min(r_min: f64) -> f64 {
    RateFloor::Shannon.gamma(r_min)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityResult {
    pub feasible: bool,
    pub p_check: Option<Vec<f64>>,
    pub spectral_radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerSolution {
    pub p: Vec<f64>,
    /// Weighted average rate in bits/s/Hz.
    pub rate: f64,
    /// `1 + SINR` at `p`.
    pub z: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Largest remaining vertex objective, `Σ ω log2 v`.
    pub upper_bound: f64,
}

/// Largest eigenvalue modulus of a nonnegative square matrix.
pub fn spectral_radius(f: &DMatrix<f64>) -> f64 {
    let n = f.nrows();
    if n == 0 {
        return 0.0;
    }
    if n <= 64 {
        return f.clone().complex_eigenvalues().iter().map(|c| c.norm()).fold(0.0, f64::max);
    }
    // Power iteration on F + I, which is primitive whenever F is irreducible.
    let shifted = f + DMatrix::identity(n, n);
    let mut x = DVector::from_element(n, 1.0 / (n as f64).sqrt());
    let mut est = 0.0;
    for _ in 0..10_000 {
        let y = &shifted * &x;
        let norm = y.norm();
        if norm == 0.0 {
            return 0.0;
        }
        let next = y / norm;
        let rq = next.dot(&(&shifted * &next));
        x = next;
        if (rq - est).abs() <= 1e-10 * rq.abs().max(1.0) {
            est = rq;
            break;
        }
        est = rq;
    }
    (est - 1.0).max(0.0)
}

/// Spectral test and minimal power vector for per-class SINR targets.
pub fn feasibility_for_targets(problem: &MeanFieldWtm, gammas: &[f64]) -> Result<FeasibilityResult> {
    let n = problem.n_t();
    if gammas.len() != n {
        return Err(Error::Numerical("target length mismatch".into()));
    }
    let f = DMatrix::from_fn(n, n, |i, j| gammas[i] * problem.gtilde[j][i] / problem.g[i]);
    let b = DVector::from_fn(n, |i, _| gammas[i] * problem.noise / problem.g[i]);
    let radius = spectral_radius(&f);
    if (radius - 1.0).abs() <= 1e-12 {
        return Err(Error::Numerical(format!("I - F is singular (spectral radius {radius})")));
    }
    if radius > 1.0 {
        return Ok(FeasibilityResult { feasible: false, p_check: None, spectral_radius: radius });
    }
    let m = DMatrix::identity(n, n) - f;
    let p = m
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::Numerical(format!("I - F is singular (spectral radius {radius})")))?;
    let p: Vec<f64> = p.iter().map(|v| v.max(0.0)).collect();
    let in_box = p.iter().all(|v| *v <= problem.p_max * (1.0 + 1e-12));
    let avg_ok = match problem.p_ave {
        Some(cap) => p.iter().zip(&problem.omega).map(|(a, b)| a * b).sum::<f64>() <= cap * (1.0 + 1e-12),
        None => true,
    };
    Ok(FeasibilityResult { feasible: in_box && avg_ok, p_check: Some(p), spectral_radius: radius })
}

/// Spectral feasibility test at the problem's own rate floor.
pub fn feasibility_check(problem: &MeanFieldWtm) -> Result<FeasibilityResult> {
    feasibility_check_with(problem, RateFloor::Shannon)
}

pub fn feasibility_check_with(problem: &MeanFieldWtm, floor: RateFloor) -> Result<FeasibilityResult> {
    problem.validate()?;
    let g = floor.gamma(problem.r_min);
    feasibility_for_targets(problem, &vec![g; problem.n_t()])
}

/// Whether `1 + SINR >= z` componentwise is attainable together with the rate floor.
pub fn achievable(problem: &MeanFieldWtm, z: &[f64]) -> Result<bool> {
    let g0 = gamma_min(problem.r_min);
    let gammas: Vec<f64> = z.iter().map(|zi| (zi - 1.0).max(g0).max(0.0)).collect();
    match feasibility_for_targets(problem, &gammas) {
        Ok(r) => Ok(r.feasible),
        Err(Error::Numerical(_)) => Ok(false),
        Err(e) => Err(e),
    }
}

/// Random dense instance with `n` classes: gains in [0.5, 2], cross gains in
/// [0, 0.6], unit noise, `p_max` in [1, 10] and, for odd seeds, a small rate
/// floor. Used by benchmarks and verification runs.
pub fn random_instance(n: usize, seed: u64) -> MeanFieldWtm {
    use rand::Rng;
    let mut rng = crate::rng::stream_rng(seed, 7);
    let mut omega: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..1.0)).collect();
    let s: f64 = omega.iter().sum();
    omega.iter_mut().for_each(|w| *w /= s);
    let g = (0..n).map(|_| rng.random_range(0.5..2.0)).collect();
    let gtilde = (0..n)
        .map(|_| (0..n).map(|_| rng.random_range(0.0..0.6)).collect())
        .collect();
    let p_max = rng.random_range(1.0..10.0);
    let r_min = if seed % 2 == 1 { rng.random_range(0.0..0.4) } else { 0.0 };
    MeanFieldWtm { omega, g, gtilde, noise: 1.0, p_max, r_min, p_ave: None }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn single(g: f64, p_max: f64) -> MeanFieldWtm {
        MeanFieldWtm {
            omega: vec![1.0],
            g: vec![g],
            gtilde: vec![vec![0.0]],
            noise: 10.0,
            p_max,
            r_min: 1.0,
            p_ave: None,
        }
    }

    #[test]
    fn single_link_closed_form() {
        let r = feasibility_check(&single(0.125, 100.0)).unwrap();
        assert!(r.feasible);
        assert!((r.p_check.unwrap()[0] - 80.0).abs() < 1e-9);
        assert!(!feasibility_check(&single(0.125, 79.0)).unwrap().feasible);
    }

    #[test]
    fn symmetric_pair_radius() {
        let w = MeanFieldWtm {
            omega: vec![0.5, 0.5],
            g: vec![1.0, 1.0],
            gtilde: vec![vec![0.0, 1.2], vec![1.2, 0.0]],
            noise: 1.0,
            p_max: 1e6,
            r_min: 1.0,
            p_ave: None,
        };
        let r = feasibility_check(&w).unwrap();
        assert!((r.spectral_radius - 1.2).abs() < 1e-12);
        assert!(!r.feasible);
    }

    #[test]
    fn power_iteration_matches_dense() {
        let n = 70;
        let f = DMatrix::from_fn(n, n, |i, j| ((i * 7 + j * 3) % 11) as f64 / 200.0);
        let small = f.view((0, 0), (64, 64)).into_owned();
        let dense = spectral_radius(&small);
        let big = spectral_radius(&f);
        let dense_big = f.complex_eigenvalues().iter().map(|c| c.norm()).fold(0.0, f64::max);
        assert!((big - dense_big).abs() < 1e-8, "{big} vs {dense_big}");
        assert!(dense > 0.0);
    }
}
