use crate::error::{Error, Result};
use crate::lp::{maximize, LpOutcome};
use crate::reduction::MeanFieldWtm;

use super::{feasibility_check, gamma_min};

/// Radial projection of a vertex onto the attainable `1 + SINR` region.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub mu: f64,
    pub pi: Vec<f64>,
    pub p: Vec<f64>,
    pub iterations: usize,
}

fn ratios(problem: &MeanFieldWtm, z: &[f64], p: &[f64]) -> f64 {
    problem
        .sinr(p)
        .iter()
        .zip(z)
        .map(|(s, zi)| (1.0 + s) / zi)
        .fold(f64::INFINITY, f64::min)
}

/// `max_p min_i (f~_i - mu z_i f^_i)` over the feasible powers, with powers
/// scaled by `p_max` and everything divided by the noise.
fn inner_lp(problem: &MeanFieldWtm, z: &[f64], mu: f64, gamma: f64) -> Result<(f64, Vec<f64>)> {
    let n = problem.n_t();
    let s = problem.p_max / problem.noise;
    let nv = n + 2;
    let mut c = vec![0.0; nv];
    c[n] = 1.0;
    c[n + 1] = -1.0;
    let mut a = Vec::with_capacity(3 * n + 1);
    let mut b = Vec::with_capacity(3 * n + 1);
    for i in 0..n {
        let k = 1.0 - mu * z[i];
        let mut row = vec![0.0; nv];
        for j in 0..n {
            row[j] = -k * problem.gtilde[j][i] * s;
        }
        row[i] -= problem.g[i] * s;
        row[n] = 1.0;
        row[n + 1] = -1.0;
        a.push(row);
        b.push(k);
    }
    if gamma > 0.0 {
        for i in 0..n {
            let mut row = vec![0.0; nv];
            for j in 0..n {
                row[j] = gamma * problem.gtilde[j][i] * s;
            }
            row[i] -= problem.g[i] * s;
            a.push(row);
            b.push(-gamma);
        }
    }
    for i in 0..n {
        let mut row = vec![0.0; nv];
        row[i] = 1.0;
        a.push(row);
        b.push(1.0);
    }
    if let Some(cap) = problem.p_ave {
        let mut row = vec![0.0; nv];
        for i in 0..n {
            row[i] = problem.omega[i] * problem.p_max;
        }
        a.push(row);
        b.push(cap);
    }
    match maximize(&c, &a, &b)? {
        Ok(sol) => Ok((sol.objective, sol.x[..n].iter().map(|x| x * problem.p_max).collect())),
        Err(LpOutcome::Infeasible) => Err(Error::Infeasible("power constraints admit no point".into())),
        Err(LpOutcome::Unbounded) => Err(Error::Numerical("projection LP unbounded".into())),
    }
}

/// Largest `mu` with `mu * z` attainable, by Dinkelbach iterations on the
/// max-min fractional program. Each inner max-min is an exact LP.
pub fn dinkelbach_projection(z: &[f64], problem: &MeanFieldWtm) -> Result<Projection> {
    let start = feasibility_check(problem)?;
    let p0 = match (start.feasible, start.p_check) {
        (true, Some(p)) => p,
        _ => return Err(Error::Infeasible("rate floor cannot be met".into())),
    };
    project_from(z, problem, p0)
}

pub(crate) fn project_from(z: &[f64], problem: &MeanFieldWtm, p0: Vec<f64>) -> Result<Projection> {
    if z.len() != problem.n_t() || z.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::Domain("projection needs a positive vector of matching length".into()));
    }
    let gamma = gamma_min(problem.r_min);
    let tol = 1e-10 * z.iter().fold(1.0f64, |m, v| m.max(*v));
    let mut p = p0;
    let mut mu = ratios(problem, z, &p);
    for it in 1..=200 {
        let (value, next) = inner_lp(problem, z, mu, gamma)?;
        if value <= tol {
            return Ok(Projection { mu, pi: z.iter().map(|v| v * mu).collect(), p, iterations: it });
        }
        let next_mu = ratios(problem, z, &next);
        if next_mu <= mu {
            if next_mu < mu * (1.0 - 1e-9) {
                return Err(Error::Numerical(format!(
                    "Dinkelbach stalled at iteration {it}: mu {mu} -> {next_mu}, surrogate {value}, p = {next:?}"
                )));
            }
            return Ok(Projection { mu, pi: z.iter().map(|v| v * mu).collect(), p, iterations: it });
        }
        mu = next_mu;
        p = next;
    }
    Err(Error::Numerical(format!("Dinkelbach did not converge, mu = {mu}")))
}
