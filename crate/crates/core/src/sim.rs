//! Per-node Monte Carlo simulation used to check the analytical predictions.
//!
//! Distances between interferers and receivers are rounded up to rings of
//! width `d0`, as in the analytical model. Each trial draws its own node set
//! from an independent RNG stream; trial results are combined in trial order
//! so reports are bit-reproducible.

use std::io::Write;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{bpm, ring_index, sample_ppp_in, torus_distance, uniform_in_disk, BucketIndex};
use crate::config::NetworkConfig;
use crate::error::{Error, Result};
use crate::reduction::Reduction;
use crate::rng::stream_rng;
use crate::routing::Router;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

impl Histogram {
    fn build(values: &[f64], bins: usize) -> Self {
        let hi = values.iter().cloned().fold(0.0f64, f64::max);
        let hi = if hi > 0.0 { hi } else { 1.0 };
        let edges: Vec<f64> = (0..=bins).map(|i| hi * i as f64 / bins as f64).collect();
        let mut counts = vec![0u64; bins];
        for v in values {
            let b = ((v / hi) * bins as f64).floor() as usize;
            counts[b.min(bins - 1)] += 1;
        }
        Histogram { edges, counts }
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["lower", "upper", "count"])?;
        for (i, c) in self.counts.iter().enumerate() {
            wr.write_record([self.edges[i].to_string(), self.edges[i + 1].to_string(), c.to_string()])?;
        }
        wr.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub trials: usize,
    pub mean_rate: f64,
    pub mean_rate_se: f64,
    pub mean_interference: f64,
    pub mean_interference_se: f64,
    pub rate_histogram: Histogram,
    pub seed: u64,
}

fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    if v.is_empty() {
        return (0.0, 0.0);
    }
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn report(rates: &[f64], interference: &[f64], seed: u64) -> SimReport {
    let (mean_rate, mean_rate_se) = mean_se(rates);
    let (mean_interference, mean_interference_se) = mean_se(interference);
    SimReport {
        trials: rates.len(),
        mean_rate,
        mean_rate_se,
        mean_interference,
        mean_interference_se,
        rate_histogram: Histogram::build(rates, 20),
        seed,
    }
}

fn cumulative(levels: &[(f64, f64)]) -> Vec<f64> {
    let mut acc = 0.0;
    levels
        .iter()
        .map(|l| {
            acc += l.1;
            acc
        })
        .collect()
}

#[inline]
fn draw(cum: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.random::<f64>() * cum[cum.len() - 1];
    cum.iter().position(|c| u < *c).unwrap_or(cum.len() - 1)
}

/// Shared per-configuration lookup data.
struct Tables<'a> {
    cfg: &'a NetworkConfig,
    red: &'a Reduction,
    fade_cum: Vec<f64>,
    ring_cum: Vec<f64>,
    direct_idx: Vec<Vec<usize>>,
    interf_idx: Vec<Vec<usize>>,
    track_radius: f64,
}

impl<'a> Tables<'a> {
    fn new(cfg: &'a NetworkConfig, red: &'a Reduction) -> Self {
        let nf = cfg.fading_levels.len();
        let max_ring = (0..red.table.na).map(|k| red.interference.ring[k]).max().unwrap_or(0);
        Tables {
            cfg,
            red,
            fade_cum: cumulative(&cfg.fading_levels),
            ring_cum: crate::channel::ring_pmf(cfg.nm)
                .iter()
                .scan(0.0, |a, v| {
                    *a += v;
                    Some(*a)
                })
                .collect(),
            direct_idx: red.direct.index_table(nf, cfg.nm),
            interf_idx: red.interference.index_table(nf, cfg.nm_i),
            track_radius: max_ring as f64 * cfg.d0,
        }
    }

    /// Group of a receiver at `at`, counting tracked interference indices over
    /// the nodes around it (excluding `skip`).
    fn group_at(&self, index: &BucketIndex, at: [f64; 2], skip: usize, rng: &mut ChaCha8Rng) -> usize {
        let na = self.red.table.na;
        if na == 0 {
            return 0;
        }
        let mut counts = vec![0usize; na];
        index.for_each_within(at, self.track_radius, |i, d| {
            if i == skip {
                return;
            }
            let ring = ring_index(d, self.cfg.d0);
            let f = draw(&self.fade_cum, rng);
            let idx = self.interf_idx[f][ring - 1];
            if idx < na {
                counts[idx] += 1;
            }
        });
        self.red.table.group_of_counts(&counts)
    }
}

/// Side of the simulated square: large enough that the interference disks
/// around every receiver that matters do not wrap onto themselves.
fn window(cfg: &NetworkConfig, extra: f64) -> f64 {
    let need = 2.0 * ((cfg.nm + cfg.nm_i) as f64 * cfg.d0 + extra) + 2.0 * cfg.d0;
    cfg.area_side.min(need)
}

/// Simulate a typical link at the window centre under a class-indexed power
/// policy, where class `j + g * N_g` is (interference group `g`, direct gain `j`).
pub fn simulate_massive(
    cfg: &NetworkConfig,
    red: &Reduction,
    policy: &[f64],
    trials: usize,
    seed: u64,
) -> Result<SimReport> {
    cfg.validate()?;
    let nt = red.wtm.n_t();
    if policy.len() != nt {
        return Err(Error::Policy(format!("policy has {} entries, expected {nt}", policy.len())));
    }
    if policy.iter().any(|p| !(*p >= 0.0)) {
        return Err(Error::Policy("powers must be >= 0".into()));
    }
    let tables = Tables::new(cfg, red);
    let side = window(cfg, tables.track_radius);
    let centre = [side / 2.0, side / 2.0];
    let ng = red.direct.len();
    let out: Vec<(f64, f64)> = (0..trials)
        .into_par_iter()
        .map(|t| -> Result<(f64, f64)> {
            let mut rng = stream_rng(seed, t as u64 + 1);
            let nodes = sample_ppp_in(cfg.lambda, side, &mut rng)?;
            let index = BucketIndex::new(&nodes, side, 4.0);
            let radius = cfg.nm_i as f64 * cfg.d0;
            let mut near = Vec::new();
            index.for_each_within(centre, radius, |i, d| near.push((i, d)));
            near.sort_by_key(|x| x.0);
            let mut interference = 0.0;
            let mut counts = vec![0usize; red.table.na];
            for &(i, d) in &near {
                let ring = ring_index(d, cfg.d0);
                if ring > cfg.nm_i {
                    continue;
                }
                let dest = uniform_in_disk(&mut rng, nodes[i], cfg.nm as f64 * cfg.d0, side);
                let own_ring = ring_index(torus_distance(nodes[i], dest, side), cfg.d0).min(cfg.nm);
                let own_fade = draw(&tables.fade_cum, &mut rng);
                let m = tables.direct_idx[own_fade][own_ring - 1];
                let group = tables.group_at(&index, dest, i, &mut rng);
                let p = policy[m + group * ng];
                let f = draw(&tables.fade_cum, &mut rng);
                interference += p * cfg.fading_levels[f].0 * bpm(ring as f64 * cfg.d0, cfg.alpha);
                let idx = tables.interf_idx[f][ring - 1];
                if idx < red.table.na {
                    counts[idx] += 1;
                }
            }
            let ring = draw(&tables.ring_cum, &mut rng) + 1;
            let fade = draw(&tables.fade_cum, &mut rng);
            let m = tables.direct_idx[fade][ring - 1];
            let group = if red.table.na == 0 { 0 } else { red.table.group_of_counts(&counts) };
            let p = policy[m + group * ng];
            let sinr = p * red.direct.gains[m] / (interference + cfg.noise);
            Ok((sinr.log2_1p(), interference))
        })
        .collect::<Result<Vec<_>>>()?;
    let rates: Vec<f64> = out.iter().map(|x| x.0).collect();
    let interf: Vec<f64> = out.iter().map(|x| x.1).collect();
    Ok(report(&rates, &interf, seed))
}

trait Log2OnePlus {
    fn log2_1p(self) -> f64;
}

impl Log2OnePlus for f64 {
    fn log2_1p(self) -> f64 {
        self.ln_1p() / std::f64::consts::LN_2
    }
}

/// Empirical mean interference next to the analytic bound
/// `(lambda pi + 1/r_o^2) p h / ((alpha - 2)(alpha - 1))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InterferenceCheck {
    pub mean: f64,
    pub se: f64,
    pub bound: f64,
}

/// The analytic bound on mean interference from nodes within `r_o`.
pub fn interference_bound(lambda: f64, p_bar: f64, h_bar: f64, alpha: f64, r_o: f64) -> Result<f64> {
    if !(alpha > 2.0) {
        return Err(Error::Domain(format!("alpha must exceed 2, got {alpha}")));
    }
    Ok((lambda * std::f64::consts::PI + 1.0 / (r_o * r_o)) * p_bar * h_bar / ((alpha - 2.0) * (alpha - 1.0)))
}

/// Interference at a fixed receiver from every node within `r_o`, each
/// transmitting `p_bar` with independent fading.
pub fn empirical_interference(
    cfg: &NetworkConfig,
    p_bar: f64,
    r_o: f64,
    trials: usize,
    seed: u64,
) -> Result<InterferenceCheck> {
    let bound = interference_bound(cfg.lambda, p_bar, cfg.mean_fading(), cfg.alpha, r_o)?;
    let side = cfg.area_side.min(2.0 * r_o + 2.0 * cfg.d0);
    let centre = [side / 2.0, side / 2.0];
    let cum = cumulative(&cfg.fading_levels);
    let vals: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|t| -> Result<f64> {
            let mut rng = stream_rng(seed, t as u64 + 1);
            let nodes = sample_ppp_in(cfg.lambda, side, &mut rng)?;
            let mut total = 0.0;
            for p in &nodes {
                let d = torus_distance(*p, centre, side);
                if d > r_o {
                    continue;
                }
                let f = draw(&cum, &mut rng);
                total += p_bar * cfg.fading_levels[f].0 * bpm(ring_index(d, cfg.d0) as f64 * cfg.d0, cfg.alpha);
            }
            Ok(total)
        })
        .collect::<Result<Vec<_>>>()?;
    let (mean, se) = mean_se(&vals);
    Ok(InterferenceCheck { mean, se, bound })
}

/// Per-hop power rule for multi-hop links.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum HopPolicy {
    /// Every hop carries exactly this rate.
    EqualRate(f64),
    /// Every node transmits this power; hop rates follow from the realized SINR.
    UniformPower(f64),
}

/// Store-and-forward rate of a route: `1 / Σ (1 / r_hop)`.
pub fn compose_rates(hop_rates: &[f64]) -> f64 {
    if hop_rates.is_empty() || hop_rates.iter().any(|r| *r <= 0.0) {
        return 0.0;
    }
    1.0 / hop_rates.iter().map(|r| 1.0 / r).sum::<f64>()
}

/// Multi-hop links routed by equidistant relays. Each trial draws a node set,
/// `links` random sources among the nodes and destinations uniform on the
/// disk of radius `Nm d0` around each source.
pub fn simulate_multihop(
    cfg: &NetworkConfig,
    r0: f64,
    policy: HopPolicy,
    links: usize,
    trials: usize,
    seed: u64,
) -> Result<SimReport> {
    cfg.validate()?;
    if !(r0 > 0.0) {
        return Err(Error::Domain(format!("hop length must be positive, got {r0}")));
    }
    let side = window(cfg, 0.0);
    let cum = cumulative(&cfg.fading_levels);
    let out: Vec<(f64, f64)> = (0..trials)
        .into_par_iter()
        .map(|t| -> Result<(f64, f64)> {
            let mut rng = stream_rng(seed, t as u64 + 1);
            let nodes = sample_ppp_in(cfg.lambda, side, &mut rng)?;
            if nodes.is_empty() {
                return Err(Error::Routing("empty node set".into()));
            }
            let router = Router::from_points(&nodes, side);
            let mut rate_sum = 0.0;
            let mut interf_sum = 0.0;
            let mut hops_seen = 0usize;
            for _ in 0..links {
                let s = rng.random_range(0..nodes.len());
                let dest = uniform_in_disk(&mut rng, nodes[s], cfg.nm as f64 * cfg.d0, side);
                let plan = router.plan(nodes[s], dest, r0)?;
                let rates: Vec<f64> = match policy {
                    HopPolicy::EqualRate(r) => vec![r; plan.hop_count()],
                    HopPolicy::UniformPower(p) => {
                        let mut senders = vec![s];
                        senders.extend(&plan.relays);
                        let mut rs = Vec::with_capacity(plan.hop_count());
                        for h in 0..plan.hop_count() {
                            let rx = plan.waypoints[h + 1];
                            let rx_node = plan.relays.get(h).copied();
                            let mut interference = 0.0;
                            router.index().for_each_within(rx, cfg.nm_i as f64 * cfg.d0, |i, d| {
                                if i == senders[h] || Some(i) == rx_node {
                                    return;
                                }
                                let f = draw(&cum, &mut rng);
                                interference +=
                                    p * cfg.fading_levels[f].0 * bpm(ring_index(d, cfg.d0) as f64 * cfg.d0, cfg.alpha);
                            });
                            let f = draw(&cum, &mut rng);
                            let signal = p * cfg.fading_levels[f].0 * bpm(plan.hop_distances[h], cfg.alpha);
                            interf_sum += interference;
                            hops_seen += 1;
                            rs.push((signal / (interference + cfg.noise)).log2_1p());
                        }
                        rs
                    }
                };
                rate_sum += compose_rates(&rates);
            }
            let mean_i = if hops_seen > 0 { interf_sum / hops_seen as f64 } else { 0.0 };
            Ok((rate_sum / links.max(1) as f64, mean_i))
        })
        .collect::<Result<Vec<_>>>()?;
    let rates: Vec<f64> = out.iter().map(|x| x.0).collect();
    let interf: Vec<f64> = out.iter().map(|x| x.1).collect();
    Ok(report(&rates, &interf, seed))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn harmonic_composition() {
        assert!((compose_rates(&[2.0, 2.0]) - 1.0).abs() < 1e-15);
        assert_eq!(compose_rates(&[3.0]), 3.0);
        assert_eq!(compose_rates(&[1.0, 0.0]), 0.0);
    }

    #[test]
    fn bound_example() {
        let b = interference_bound(1.0, 1.0, 1.0, 3.0, 10.0).unwrap();
        assert!((b - (std::f64::consts::PI + 0.01) / 2.0).abs() < 1e-12);
        assert!((b - 1.5758).abs() < 1e-4);
        assert!(interference_bound(1.0, 1.0, 1.0, 2.0, 10.0).is_err());
    }

    #[test]
    fn se_of_constant_is_zero() {
        assert_eq!(mean_se(&[2.0, 2.0, 2.0]), (2.0, 0.0));
    }
}
