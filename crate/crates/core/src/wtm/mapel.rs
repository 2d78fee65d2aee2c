use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};
use crate::reduction::MeanFieldWtm;

use super::dinkelbach::project_from;
use super::{feasibility_check, PowerSolution};

#[derive(Debug, Clone, PartialEq)]
pub struct MapelOptions {
    pub delta0: f64,
    pub max_iterations: usize,
    pub max_vertices: usize,
}

impl Default for MapelOptions {
    fn default() -> Self {
        MapelOptions { delta0: 0.01, max_iterations: 10_000, max_vertices: 100_000 }
    }
}

/// One outer iteration: the selected vertex bound, the best attained value
/// (both as `Σ ω ln z`) and the relative gap `1 - mu`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MapelStep {
    pub upper: f64,
    pub lower: f64,
    pub gap: f64,
}

/// Polyblock state after a run.
#[derive(Debug, Clone)]
pub struct MapelState {
    pub vertices: Vec<Vec<f64>>,
    pub best_z: Vec<f64>,
    pub best_projection: Vec<f64>,
    pub delta0: f64,
    pub theta_set_floor: f64,
    pub history: Vec<MapelStep>,
}

struct Key(f64, usize);

impl PartialEq for Key {
    fn eq(&self, o: &Self) -> bool {
        self.cmp(o) == Ordering::Equal
    }
}
impl Eq for Key {}
impl PartialOrd for Key {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Key {
    fn cmp(&self, o: &Self) -> Ordering {
        // earliest vertex wins ties so runs are reproducible
        self.0.total_cmp(&o.0).then(o.1.cmp(&self.1))
    }
}

fn log_objective(omega: &[f64], z: &[f64]) -> f64 {
    omega.iter().zip(z).map(|(w, v)| w * v.ln()).sum()
}

pub fn mapel_solve(problem: &MeanFieldWtm, delta0: f64) -> Result<PowerSolution> {
    mapel_run(problem, &MapelOptions { delta0, ..Default::default() }).map(|r| r.0)
}

/// Polyblock outer approximation with radial projections.
pub fn mapel_run(problem: &MeanFieldWtm, opts: &MapelOptions) -> Result<(PowerSolution, MapelState)> {
    let start = feasibility_check(problem)?;
    let p_check = match (start.feasible, start.p_check) {
        (true, Some(p)) => p,
        _ => {
            return Err(Error::Infeasible(format!(
                "rate floor unattainable (spectral radius {:.6})",
                start.spectral_radius
            )))
        }
    };
    let n = problem.n_t();
    let floor = 2f64.powf(problem.r_min);
    let v1: Vec<f64> = problem.g.iter().map(|g| 1.0 + g * problem.p_max / problem.noise).collect();

    let mut best_p = p_check.clone();
    let mut best_val = log_objective(&problem.omega, &problem.sinr(&best_p).iter().map(|s| 1.0 + s).collect::<Vec<_>>());
    let mut best_pi = Vec::new();
    let mut best_vertex = v1.clone();

    let mut store: Vec<Option<Vec<f64>>> = vec![Some(v1.clone())];
    let mut alive = 1usize;
    let mut heap = BinaryHeap::new();
    heap.push(Key(log_objective(&problem.omega, &v1), 0));
    let mut history = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let mut upper = f64::INFINITY;
    let mut warm = p_check;

    while iterations < opts.max_iterations {
        let Some(Key(bound, id)) = heap.pop() else {
            converged = true;
            break;
        };
        let Some(z) = store[id].take() else { continue };
        alive -= 1;
        upper = bound;
        iterations += 1;
        if bound <= best_val + 1e-12 {
            history.push(MapelStep { upper: bound, lower: best_val, gap: 0.0 });
            best_vertex = z;
            converged = true;
            break;
        }
        let proj = project_from(&z, problem, warm.clone())?;
        let zp: Vec<f64> = problem.sinr(&proj.p).iter().map(|s| 1.0 + s).collect();
        let val = log_objective(&problem.omega, &zp);
        if val > best_val {
            best_val = val;
            best_p = proj.p.clone();
        }
        warm = best_p.clone();
        let gap = 1.0 - proj.mu;
        history.push(MapelStep { upper: bound, lower: best_val, gap });
        best_pi = proj.pi.clone();
        best_vertex = z.clone();
        if gap <= opts.delta0 {
            converged = true;
            break;
        }
        for m in 0..n {
            let mut v = z.clone();
            v[m] = proj.pi[m];
            if v[m] < floor * (1.0 - 1e-12) {
                continue;
            }
            let dominated = store.iter().flatten().any(|w| v.iter().zip(w).all(|(a, b)| a <= b));
            if dominated {
                continue;
            }
            heap.push(Key(log_objective(&problem.omega, &v), store.len()));
            store.push(Some(v));
            alive += 1;
        }
        if alive > opts.max_vertices {
            break;
        }
    }

    let z: Vec<f64> = problem.sinr(&best_p).iter().map(|s| 1.0 + s).collect();
    let rate = problem.weighted_rate(&best_p);
    let state = MapelState {
        vertices: store.into_iter().flatten().collect(),
        best_z: best_vertex,
        best_projection: best_pi,
        delta0: opts.delta0,
        theta_set_floor: floor,
        history,
    };
    let solution = PowerSolution {
        p: best_p,
        rate,
        z,
        iterations,
        converged,
        upper_bound: upper / std::f64::consts::LN_2,
    };
    Ok((solution, state))
}
