use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::reduction::MeanFieldWtm;

use super::{gamma_min, PowerSolution};

fn check_size(problem: &MeanFieldWtm, grid_points: usize) -> Result<()> {
    if problem.n_t() > 4 {
        return Err(Error::Size(format!("grid oracle limited to 4 classes, got {}", problem.n_t())));
    }
    if grid_points < 2 {
        return Err(Error::Size("grid needs at least 2 points per axis".into()));
    }
    Ok(())
}

fn admissible(problem: &MeanFieldWtm, p: &[f64], gamma: f64) -> Option<f64> {
    if let Some(cap) = problem.p_ave {
        let avg: f64 = p.iter().zip(&problem.omega).map(|(a, b)| a * b).sum();
        if avg > cap * (1.0 + 1e-12) {
            return None;
        }
    }
    let sinr = problem.sinr(p);
    if sinr.iter().any(|s| *s < gamma * (1.0 - 1e-12)) {
        return None;
    }
    Some(sinr.iter().zip(&problem.omega).map(|(s, w)| w * s.ln_1p()).sum::<f64>() / std::f64::consts::LN_2)
}

fn point(problem: &MeanFieldWtm, grid_points: usize, mut idx: usize) -> Vec<f64> {
    let step = problem.p_max / (grid_points - 1) as f64;
    (0..problem.n_t())
        .map(|_| {
            let k = idx % grid_points;
            idx /= grid_points;
            k as f64 * step
        })
        .collect()
}

/// Exhaustive search over a uniform power grid (verification only).
pub fn oracle_grid_search(problem: &MeanFieldWtm, grid_points: usize) -> Result<PowerSolution> {
    check_size(problem, grid_points)?;
    let gamma = gamma_min(problem.r_min);
    let total = grid_points.pow(problem.n_t() as u32);
    let best = (0..total)
        .into_par_iter()
        .filter_map(|i| admissible(problem, &point(problem, grid_points, i), gamma).map(|r| (r, i)))
        .reduce_with(|a, b| if b.0 > a.0 || (b.0 == a.0 && b.1 < a.1) { b } else { a });
    match best {
        None => Err(Error::Infeasible("no grid point meets the constraints".into())),
        Some((rate, i)) => {
            let p = point(problem, grid_points, i);
            let z = problem.sinr(&p).iter().map(|s| 1.0 + s).collect();
            Ok(PowerSolution { p, rate, z, iterations: total, converged: true, upper_bound: rate })
        }
    }
}

/// Whether any grid point meets every constraint.
pub fn oracle_feasible(problem: &MeanFieldWtm, grid_points: usize) -> Result<bool> {
    check_size(problem, grid_points)?;
    let gamma = gamma_min(problem.r_min);
    let total = grid_points.pow(problem.n_t() as u32);
    Ok((0..total).into_par_iter().any(|i| admissible(problem, &point(problem, grid_points, i), gamma).is_some()))
}
