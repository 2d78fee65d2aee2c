//! Equidistant-path relay selection and the single-hop statistics it induces.

use std::io::Write;

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::channel::{torus_distance, wrap, BucketIndex, NodeSet};
use crate::error::{Error, Result};

/// Relays chosen for one source-destination pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutePlan {
    /// Source, relays, destination.
    pub waypoints: Vec<[f64; 2]>,
    /// Node index of each relay, in order.
    pub relays: Vec<usize>,
    pub hop_distances: Vec<f64>,
    /// Distance from each relay to its ideal point.
    pub deviations: Vec<f64>,
}

impl RoutePlan {
    pub fn hop_count(&self) -> usize {
        self.hop_distances.len()
    }
}

/// Number of relays placed on a link of length `dist`.
pub fn relay_count(dist: f64, r0: f64) -> usize {
    let hops = (dist / r0 - 1e-9).ceil();
    if hops <= 1.0 {
        0
    } else {
        hops as usize - 1
    }
}

/// Relay planner over a fixed node set.
#[derive(Debug, Clone)]
pub struct Router {
    index: BucketIndex,
    side: f64,
}

impl Router {
    pub fn new(nodes: &NodeSet) -> Self {
        Router { index: BucketIndex::new(&nodes.positions, nodes.side, 2.0), side: nodes.side }
    }

    pub fn from_points(points: &[[f64; 2]], side: f64) -> Self {
        Router { index: BucketIndex::new(points, side, 2.0), side }
    }

    pub fn index(&self) -> &BucketIndex {
        &self.index
    }

    /// Relays are the nodes nearest to the points `T + j r0 (R - T)/|R - T|`.
    /// A relay that repeats the previous waypoint is dropped.
    pub fn plan(&self, source: [f64; 2], destination: [f64; 2], r0: f64) -> Result<RoutePlan> {
        if !(r0 > 0.0) {
            return Err(Error::Domain(format!("hop length must be positive, got {r0}")));
        }
        let side = self.side;
        let delta = |a: f64, b: f64| {
            let d = b - a;
            d - side * (d / side).round()
        };
        let (dx, dy) = (delta(source[0], destination[0]), delta(source[1], destination[1]));
        let dist = (dx * dx + dy * dy).sqrt();
        let relays_needed = relay_count(dist, r0);
        if relays_needed > 0 && self.index.points().is_empty() {
            return Err(Error::Routing("no nodes available for relaying".into()));
        }
        let mut waypoints = vec![source];
        let mut relays = Vec::with_capacity(relays_needed);
        let mut deviations = Vec::with_capacity(relays_needed);
        for j in 1..=relays_needed {
            let t = j as f64 * r0 / dist;
            let ideal = [wrap(source[0] + t * dx, side), wrap(source[1] + t * dy, side)];
            let (node, dev) = self.index.nearest(ideal).expect("non-empty index");
            let pos = self.index.points()[node];
            let last = *waypoints.last().unwrap();
            if torus_distance(pos, last, side) < 1e-12 || torus_distance(pos, destination, side) < 1e-12 {
                continue;
            }
            waypoints.push(pos);
            relays.push(node);
            deviations.push(dev);
        }
        waypoints.push(destination);
        let hop_distances = waypoints.windows(2).map(|w| torus_distance(w[0], w[1], side)).collect();
        Ok(RoutePlan { waypoints, relays, hop_distances, deviations })
    }
}

/// Route over `nodes` (builds a fresh index).
pub fn plan_route(source: [f64; 2], destination: [f64; 2], r0: f64, nodes: &NodeSet) -> Result<RoutePlan> {
    Router::new(nodes).plan(source, destination, r0)
}

/// Write routes as CSV rows `link_id,hop_index,x,y,hop_distance`.
pub fn write_routes_csv<W: Write>(w: W, plans: &[RoutePlan]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["link_id", "hop_index", "x", "y", "hop_distance"])?;
    for (id, plan) in plans.iter().enumerate() {
        for (h, p) in plan.waypoints.iter().enumerate() {
            let d = if h == 0 { 0.0 } else { plan.hop_distances[h - 1] };
            wr.write_record([id.to_string(), h.to_string(), p[0].to_string(), p[1].to_string(), d.to_string()])?;
        }
    }
    wr.flush()?;
    Ok(())
}

/// Hop-count law for destinations uniform on the disk of radius `Nm d0`.
/// The last atom takes whatever mass the interior atoms leave.
pub fn hop_count_pmf(r0: f64, d0: f64, nm: usize) -> Result<Vec<f64>> {
    if !(r0 > 0.0) || !(d0 > 0.0) || nm == 0 {
        return Err(Error::Domain("hop length, d0 and Nm must be positive".into()));
    }
    let radius = nm as f64 * d0;
    let max_hops = ((radius / r0 - 1e-9).ceil() as usize).max(1);
    let unit = r0 * r0 / (radius * radius);
    let mut pmf: Vec<f64> = (1..max_hops).map(|a| (2 * a - 1) as f64 * unit).collect();
    let used: f64 = pmf.iter().sum();
    pmf.push((1.0 - used).max(0.0));
    Ok(pmf)
}

/// Variance parameter of the relay deviation: `1 / (2 pi lambda)`.
pub fn deviation_sigma(lambda: f64) -> Result<f64> {
    if !(lambda > 0.0) {
        return Err(Error::Domain(format!("intensity must be positive, got {lambda}")));
    }
    Ok(1.0 / (2.0 * std::f64::consts::PI * lambda))
}

/// Share of hops touching a source or destination (`eta_n`) and between relays (`eta_r`).
pub fn hop_portions(r0: f64, d0: f64, nm: usize) -> Result<(f64, f64)> {
    let pmf = hop_count_pmf(r0, d0, nm)?;
    let eta_n: f64 = pmf
        .iter()
        .enumerate()
        .map(|(i, p)| if i == 0 { *p } else { 2.0 / (i + 1) as f64 * p })
        .sum();
    let eta_n = eta_n.min(1.0);
    Ok((eta_n, 1.0 - eta_n))
}

/// Quantized single-hop distance law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IeshDistribution {
    pub ds_values: Vec<f64>,
    pub eps: Vec<f64>,
    pub eta_n: f64,
    pub eta_r: f64,
    pub r0: f64,
}

impl IeshDistribution {
    pub fn mean(&self) -> f64 {
        self.ds_values.iter().zip(&self.eps).map(|(d, e)| d * e).sum()
    }
}

fn normal_cdf(x: f64, mean: f64, var: f64) -> f64 {
    if x == f64::INFINITY {
        return 1.0;
    }
    if x == f64::NEG_INFINITY {
        return 0.0;
    }
    0.5 * erfc(-(x - mean) / (2.0 * var).sqrt())
}

/// `bins` uniform points over `r0 ± 4 sigma_rr`, clipped at zero.
pub fn default_ds_grid(r0: f64, lambda: f64, bins: usize) -> Result<Vec<f64>> {
    let s = (2.0 * deviation_sigma(lambda)?).sqrt();
    if bins == 1 {
        return Ok(vec![r0]);
    }
    let lo = (r0 - 4.0 * s).max(0.0);
    let hi = r0 + 4.0 * s;
    Ok((0..bins).map(|i| lo + (hi - lo) * i as f64 / (bins - 1) as f64).collect())
}

/// Mixture of the two Gaussian hop-length laws, integrated over midpoint bins
/// whose outer edges extend to infinity.
pub fn single_hop_pmf(r0: f64, lambda: f64, ds_grid: &[f64], eta_n: f64) -> Result<IeshDistribution> {
    if ds_grid.is_empty() || ds_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Domain("distance grid must be non-empty and strictly increasing".into()));
    }
    if !(0.0..=1.0).contains(&eta_n) {
        return Err(Error::Domain(format!("eta_n must lie in [0, 1], got {eta_n}")));
    }
    let var_nr = deviation_sigma(lambda)?;
    let var_rr = 2.0 * var_nr;
    let n = ds_grid.len();
    let edge = |i: usize| -> f64 {
        if i == 0 {
            f64::NEG_INFINITY
        } else if i == n {
            f64::INFINITY
        } else {
            0.5 * (ds_grid[i - 1] + ds_grid[i])
        }
    };
    let mass = |var: f64, i: usize| normal_cdf(edge(i + 1), r0, var) - normal_cdf(edge(i), r0, var);
    let eta_r = 1.0 - eta_n;
    let eps: Vec<f64> = (0..n).map(|i| eta_n * mass(var_nr, i) + eta_r * mass(var_rr, i)).collect();
    Ok(IeshDistribution { ds_values: ds_grid.to_vec(), eps, eta_n, eta_r, r0 })
}

/// IESH law on the default grid with portions from the hop-count law.
pub fn iesh_distribution(r0: f64, lambda: f64, d0: f64, nm: usize, bins: usize) -> Result<IeshDistribution> {
    let (eta_n, _) = hop_portions(r0, d0, nm)?;
    let grid = default_ds_grid(r0, lambda, bins)?;
    single_hop_pmf(r0, lambda, &grid, eta_n)
}
