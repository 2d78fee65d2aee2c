//! Mean-field reduction of a random network to a finite weighted-throughput problem.
//!
//! Destinations are grouped by how many interferers they see at each of the
//! `Na` strongest interference gains. Each count law is quantized into `Nc`
//! intervals; a group is one combination of intervals.

use serde::{Deserialize, Serialize};
use statrs::function::factorial::ln_binomial;

use crate::channel::{direct_gain_distribution, interference_gain_distribution, GainDistribution};
use crate::config::NetworkConfig;
use crate::error::{Error, Result};

/// Default bound on the number of interference groups `Nc^Na`.
pub const DEFAULT_GROUP_CAP: usize = 4096;

/// Binomial(ni, theta) pmf over `0..=ni`, evaluated in log space.
pub fn interference_count_pmf(theta: f64, ni: usize) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&theta) {
        return Err(Error::Domain(format!("probability out of range: {theta}")));
    }
    let mut pmf = vec![0.0; ni + 1];
    if theta == 0.0 {
        pmf[0] = 1.0;
        return Ok(pmf);
    }
    if theta == 1.0 {
        pmf[ni] = 1.0;
        return Ok(pmf);
    }
    let (lp, lq) = (theta.ln(), (1.0 - theta).ln());
    for (k, v) in pmf.iter_mut().enumerate() {
        *v = (ln_binomial(ni as u64, k as u64) + k as f64 * lp + (ni - k) as f64 * lq).exp();
    }
    Ok(pmf)
}

/// Partition of a count pmf into contiguous intervals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountQuantization {
    /// Inclusive count ranges.
    pub intervals: Vec<(usize, usize)>,
    pub centroids: Vec<f64>,
    pub masses: Vec<f64>,
}

impl CountQuantization {
    /// Interval (0-based) holding `count`; counts past the last interval clamp to it.
    pub fn interval_of(&self, count: usize) -> usize {
        self.intervals
            .iter()
            .position(|&(a, b)| count >= a && count <= b)
            .unwrap_or(self.intervals.len() - 1)
    }
}

/// Greedy equal-mass partition: interval `l` closes as soon as the cumulative
/// mass reaches `l / nc`, or when the atoms left are just enough to give each
/// remaining interval one atom. Centroids are conditional means.
pub fn quantize_counts(pmf: &[f64], nc: usize) -> Result<CountQuantization> {
    let n = pmf.len();
    if nc == 0 {
        return Err(Error::Config("Nc must be at least 1".into()));
    }
    if nc > n {
        return Err(Error::Config(format!("Nc = {nc} exceeds the count support size {n}")));
    }
    let mut intervals = Vec::with_capacity(nc);
    let mut start = 0;
    let mut cum = 0.0;
    for (i, p) in pmf.iter().enumerate() {
        cum += p;
        let l = intervals.len() + 1;
        if l == nc {
            break;
        }
        let atoms_left = n - i - 1;
        if cum >= l as f64 / nc as f64 - 1e-12 || atoms_left == nc - l {
            intervals.push((start, i));
            start = i + 1;
        }
    }
    intervals.push((start, n - 1));
    let mut centroids = Vec::with_capacity(nc);
    let mut masses = Vec::with_capacity(nc);
    for &(a, b) in &intervals {
        let mass: f64 = pmf[a..=b].iter().sum();
        let first: f64 = (a..=b).map(|i| i as f64 * pmf[i]).sum();
        centroids.push(if mass > 0.0 { first / mass } else { 0.5 * (a + b) as f64 });
        masses.push(mass);
    }
    Ok(CountQuantization { intervals, centroids, masses })
}

/// Interference groups over the tracked gain indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterferenceGroupTable {
    /// Interferers inside the interference disk.
    pub ni: usize,
    pub na: usize,
    pub nc: usize,
    /// `abar[k][l]`: centroid count of interval `l` for tracked index `k`.
    pub abar: Vec<Vec<f64>>,
    pub quantizations: Vec<CountQuantization>,
    /// `u[g][k]`: interval (1-based) of tracked index `k` in group `g`.
    pub u: Vec<Vec<usize>>,
    /// Residual interferer count per group, clamped at zero.
    pub nr: Vec<f64>,
    pub xi: f64,
    pub n_groups: usize,
}

impl InterferenceGroupTable {
    /// Group (0-based) of an interval vector with 1-based entries.
    pub fn group_index(&self, u: &[usize]) -> usize {
        u.iter().rev().fold(0, |acc, &ui| acc * self.nc + (ui - 1))
    }

    /// Group of a destination that sees `counts[k]` interferers at tracked index `k`.
    pub fn group_of_counts(&self, counts: &[usize]) -> usize {
        let u: Vec<usize> =
            counts.iter().zip(&self.quantizations).map(|(&c, q)| q.interval_of(c) + 1).collect();
        self.group_index(&u)
    }
}

/// Number of interferers inside the disk of radius `NmI * d0`.
pub fn interferer_count(cfg: &NetworkConfig) -> usize {
    let r = cfg.nm_i as f64 * cfg.d0;
    (cfg.lambda * std::f64::consts::PI * r * r).ceil() as usize
}

/// Enumerate all `Nc^Na` interval combinations.
pub fn build_group_table(
    cfg: &NetworkConfig,
    idist: &GainDistribution,
    cap: usize,
) -> Result<InterferenceGroupTable> {
    let (na, nc) = (cfg.na, cfg.nc);
    if na > idist.len() {
        return Err(Error::Config(format!("Na = {na} exceeds interference support {}", idist.len())));
    }
    let n_groups = (nc as u64)
        .checked_pow(na as u32)
        .filter(|&g| g <= cap as u64)
        .ok_or_else(|| Error::Size(format!("Nc^Na = {nc}^{na} exceeds the group cap {cap}")))?
        as usize;
    let ni = interferer_count(cfg);
    let mut quantizations = Vec::with_capacity(na);
    for k in 0..na {
        let pmf = interference_count_pmf(idist.probs[k].min(1.0), ni)?;
        quantizations.push(quantize_counts(&pmf, nc)?);
    }
    let abar: Vec<Vec<f64>> = quantizations.iter().map(|q| q.centroids.clone()).collect();
    let mut u = Vec::with_capacity(n_groups);
    let mut nr = Vec::with_capacity(n_groups);
    for g in 0..n_groups {
        let mut rest = g;
        let digits: Vec<usize> = (0..na)
            .map(|_| {
                let d = rest % nc + 1;
                rest /= nc;
                d
            })
            .collect();
        let tracked: f64 = digits.iter().enumerate().map(|(k, &l)| abar[k][l - 1]).sum();
        nr.push((ni as f64 - tracked).max(0.0));
        u.push(digits);
    }
    Ok(InterferenceGroupTable {
        ni,
        na,
        nc,
        abar,
        quantizations,
        u,
        nr,
        xi: 1.0 / n_groups as f64,
        n_groups,
    })
}

/// Posterior tables linking gain indices and groups.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorTables {
    /// `q1[k][g]`: P(group g | interferer at tracked index k).
    pub q1: Vec<Vec<f64>>,
    /// `q2[g][k]`: P(tracked index k | interferer in group g).
    pub q2: Vec<Vec<f64>>,
    /// `q[g]`: P(group g | interferer at an untracked index).
    pub q: Vec<f64>,
}

pub fn posterior_tables(table: &InterferenceGroupTable) -> Result<PosteriorTables> {
    let ng = table.n_groups;
    let na = table.na;
    let count = |g: usize, k: usize| table.abar[k][table.u[g][k] - 1];
    let mut q2 = vec![vec![0.0; na]; ng];
    for (g, row) in q2.iter_mut().enumerate() {
        let total: f64 = (0..na).map(|k| count(g, k)).sum();
        for (k, v) in row.iter_mut().enumerate() {
            // A group with no tracked interferers carries no information.
            *v = if total > 0.0 { count(g, k) / total } else { 1.0 / na as f64 };
        }
    }
    let mut q1 = vec![vec![0.0; ng]; na];
    for (k, row) in q1.iter_mut().enumerate() {
        let total: f64 = (0..ng).map(|g| table.xi * count(g, k)).sum();
        if !(total > 0.0) {
            return Err(Error::Numerical(format!(
                "tracked index {k} has zero expected count in every group"
            )));
        }
        for (g, v) in row.iter_mut().enumerate() {
            *v = table.xi * count(g, k) / total;
        }
    }
    let total_nr: f64 = table.nr.iter().sum();
    let q = if total_nr > 0.0 {
        table.nr.iter().map(|r| r / total_nr).collect()
    } else {
        vec![table.xi; ng]
    };
    Ok(PosteriorTables { q1, q2, q })
}

/// Reduced weighted-throughput problem over `N_t` consolidated link classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanFieldWtm {
    pub omega: Vec<f64>,
    pub g: Vec<f64>,
    /// `gtilde[b][a]`: equivalent gain from class `b` into class `a`.
    #[serde(rename = "Gtilde")]
    pub gtilde: Vec<Vec<f64>>,
    pub noise: f64,
    pub p_max: f64,
    pub r_min: f64,
    #[serde(default)]
    pub p_ave: Option<f64>,
}

impl MeanFieldWtm {
    pub fn n_t(&self) -> usize {
        self.omega.len()
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let w: MeanFieldWtm = serde_json::from_str(s)?;
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_t();
        if n == 0 {
            return Err(Error::Config("empty problem".into()));
        }
        if self.g.len() != n || self.gtilde.len() != n || self.gtilde.iter().any(|r| r.len() != n) {
            return Err(Error::Config(format!("dimension mismatch for N_t = {n}")));
        }
        let s: f64 = self.omega.iter().sum();
        if (s - 1.0).abs() > 1e-10 || self.omega.iter().any(|w| *w < 0.0) {
            return Err(Error::Config(format!("weights must be >= 0 and sum to 1, sum = {s}")));
        }
        if self.g.iter().any(|g| !(*g > 0.0)) {
            return Err(Error::Config("direct gains must be positive".into()));
        }
        if self.gtilde.iter().flatten().any(|v| !(*v >= 0.0)) {
            return Err(Error::Config("interference gains must be >= 0".into()));
        }
        if !(self.noise > 0.0) || !(self.p_max > 0.0) || !(self.r_min >= 0.0) {
            return Err(Error::Config("noise and p_max must be positive, r_min >= 0".into()));
        }
        Ok(())
    }

    /// Interference `I_a = sum_b p_b G[b][a]`.
    pub fn interference(&self, p: &[f64]) -> Vec<f64> {
        let n = self.n_t();
        let mut out = vec![0.0; n];
        for (b, row) in self.gtilde.iter().enumerate() {
            if p[b] == 0.0 {
                continue;
            }
            for (o, gba) in out.iter_mut().zip(row) {
                *o += p[b] * gba;
            }
        }
        out
    }

    pub fn sinr(&self, p: &[f64]) -> Vec<f64> {
        let i = self.interference(p);
        (0..self.n_t()).map(|a| p[a] * self.g[a] / (i[a] + self.noise)).collect()
    }

    /// `Σ ω log2(1 + SINR)`.
    pub fn weighted_rate(&self, p: &[f64]) -> f64 {
        self.sinr(p).iter().zip(&self.omega).map(|(s, w)| w * s.ln_1p()).sum::<f64>()
            / std::f64::consts::LN_2
    }

    /// Multiply every gain and the noise by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        let mut out = self.clone();
        out.g.iter_mut().for_each(|v| *v *= c);
        out.gtilde.iter_mut().flatten().for_each(|v| *v *= c);
        out.noise *= c;
        out
    }
}

/// Assemble the consolidated problem. Class `a = j + i * N_g` holds links whose
/// destination is in group `i` and whose direct gain is `g_j`.
pub fn build_wtm(
    cfg: &NetworkConfig,
    direct: &GainDistribution,
    interference: &GainDistribution,
    table: &InterferenceGroupTable,
    post: &PosteriorTables,
) -> Result<MeanFieldWtm> {
    let ng = direct.len();
    let ngroups = table.n_groups;
    if post.q.len() != ngroups || post.q1.len() != table.na || table.na > interference.len() {
        return Err(Error::Numerical("inconsistent reduction inputs".into()));
    }
    let nt = ngroups * ng;
    // coupling[i][l]: interference seen by group i per unit of group-l power
    let residual: f64 = (table.na..interference.len())
        .map(|k| interference.probs[k] * interference.gains[k])
        .sum();
    let mut coupling = vec![vec![0.0; ngroups]; ngroups];
    for (i, row) in coupling.iter_mut().enumerate() {
        for (l, c) in row.iter_mut().enumerate() {
            let tracked: f64 = (0..table.na)
                .map(|k| table.abar[k][table.u[i][k] - 1] * post.q1[k][l] * interference.gains[k])
                .sum();
            *c = tracked + table.nr[i] * residual * post.q[l];
        }
    }
    let mut gtilde = vec![vec![0.0; nt]; nt];
    for l in 0..ngroups {
        for m in 0..ng {
            let b = m + l * ng;
            for i in 0..ngroups {
                let v = coupling[i][l] * direct.probs[m];
                for j in 0..ng {
                    gtilde[b][j + i * ng] = v;
                }
            }
        }
    }
    let mut omega = Vec::with_capacity(nt);
    let mut g = Vec::with_capacity(nt);
    for _ in 0..ngroups {
        for j in 0..ng {
            omega.push(table.xi * direct.probs[j]);
            g.push(direct.gains[j]);
        }
    }
    Ok(MeanFieldWtm {
        omega,
        g,
        gtilde,
        noise: cfg.noise,
        p_max: cfg.p_max,
        r_min: cfg.r_min,
        p_ave: cfg.p_ave,
    })
}

/// Every intermediate of the reduction for one configuration.
#[derive(Debug, Clone)]
pub struct Reduction {
    pub direct: GainDistribution,
    pub interference: GainDistribution,
    pub table: InterferenceGroupTable,
    pub posteriors: PosteriorTables,
    pub wtm: MeanFieldWtm,
}

impl Reduction {
    /// Class index of a link whose destination is in `group` with direct gain index `j`.
    pub fn class(&self, group: usize, j: usize) -> usize {
        j + group * self.direct.len()
    }
}

pub fn reduce(cfg: &NetworkConfig) -> Result<Reduction> {
    reduce_with_cap(cfg, DEFAULT_GROUP_CAP)
}

pub fn reduce_with_cap(cfg: &NetworkConfig, cap: usize) -> Result<Reduction> {
    let direct = direct_gain_distribution(cfg)?;
    let interference = interference_gain_distribution(cfg)?;
    let table = build_group_table(cfg, &interference, cap)?;
    let posteriors = posterior_tables(&table)?;
    let wtm = build_wtm(cfg, &direct, &interference, &table, &posteriors)?;
    Ok(Reduction { direct, interference, table, posteriors, wtm })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binomial_examples() {
        assert_eq!(interference_count_pmf(0.0, 5).unwrap(), vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let p = interference_count_pmf(0.5, 2).unwrap();
        for (a, b) in p.iter().zip([0.25, 0.5, 0.25]) {
            assert!((a - b).abs() < 1e-14);
        }
        let p = interference_count_pmf(0.19, 4).unwrap();
        assert!((p[0] - 0.81f64.powi(4)).abs() < 1e-12);
    }

    #[test]
    fn binomial_four_half_split() {
        let p = interference_count_pmf(0.5, 4).unwrap();
        let q = quantize_counts(&p, 2).unwrap();
        assert_eq!(q.intervals, vec![(0, 2), (3, 4)]);
        // conditional means: (0*1 + 1*4 + 2*6)/11 and (3*4 + 4*1)/5
        assert!((q.centroids[0] - 16.0 / 11.0).abs() < 1e-12);
        assert!((q.centroids[1] - 16.0 / 5.0).abs() < 1e-12);
    }

    #[test]
    fn quantize_edge_cases() {
        let q = quantize_counts(&[0.5, 0.5], 2).unwrap();
        assert_eq!(q.intervals, vec![(0, 0), (1, 1)]);
        assert_eq!(q.centroids, vec![0.0, 1.0]);
        let q = quantize_counts(&[0.2, 0.3, 0.5], 1).unwrap();
        assert!((q.centroids[0] - 1.3).abs() < 1e-12);
        assert!(quantize_counts(&[1.0], 2).is_err());
        // heavy first atom: every interval still gets one atom
        let q = quantize_counts(&[0.97, 0.01, 0.01, 0.01], 3).unwrap();
        assert_eq!(q.intervals, vec![(0, 0), (1, 1), (2, 3)]);
    }

    #[test]
    fn group_encoding_is_mixed_radix() {
        let mut cfg = NetworkConfig::reference();
        cfg.na = 2;
        cfg.nc = 2;
        let idist = interference_gain_distribution(&cfg).unwrap();
        let t = build_group_table(&cfg, &idist, DEFAULT_GROUP_CAP).unwrap();
        assert_eq!(t.u, vec![vec![1, 1], vec![2, 1], vec![1, 2], vec![2, 2]]);
        for (g, u) in t.u.iter().enumerate() {
            assert_eq!(t.group_index(u), g);
            assert_eq!(g + 1, u[0] + 2 * (u[1] - 1));
        }
    }

    #[test]
    fn group_cap_enforced() {
        let mut cfg = NetworkConfig::reference();
        cfg.na = 3;
        cfg.nc = 4;
        let idist = interference_gain_distribution(&cfg).unwrap();
        assert!(matches!(build_group_table(&cfg, &idist, 63), Err(Error::Size(_))));
        assert!(build_group_table(&cfg, &idist, 64).is_ok());
    }

    #[test]
    fn two_groups_bayes_posterior() {
        let table = InterferenceGroupTable {
            ni: 4,
            na: 1,
            nc: 2,
            abar: vec![vec![1.0, 3.0]],
            quantizations: vec![],
            u: vec![vec![1], vec![2]],
            nr: vec![3.0, 1.0],
            xi: 0.5,
            n_groups: 2,
        };
        let post = posterior_tables(&table).unwrap();
        assert!((post.q1[0][0] - 0.25).abs() < 1e-15);
        assert!((post.q1[0][1] - 0.75).abs() < 1e-15);
        assert_eq!(post.q, vec![0.75, 0.25]);
    }
}
