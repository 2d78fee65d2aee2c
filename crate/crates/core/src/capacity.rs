//! Transport capacity of the ideal equivalent single-hop (IESH) network:
//! the best hop length `r0` and the rate it supports.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::channel::{bpm, interference_gain_distribution, GainDistribution, GainKind};
use crate::config::NetworkConfig;
use crate::error::{Error, Result};
use crate::reduction::{build_group_table, build_wtm, posterior_tables, MeanFieldWtm, DEFAULT_GROUP_CAP};
use crate::routing::{iesh_distribution, IeshDistribution};
use crate::wtm::{feasibility_for_targets, mapel_solve};

/// Golden-section ratio as printed in the search procedure.
pub const GOLDEN_TAU: f64 = 0.618;

/// Bisection tolerance of the common-rate search, bits/s/Hz.
pub const RATE_TOL: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CommonRate {
    pub rate: f64,
    /// False when not even a vanishing rate is attainable.
    pub feasible: bool,
}

fn common_rate_feasible(problem: &MeanFieldWtm, rate: f64) -> Result<bool> {
    let gamma = 2f64.powf(rate) - 1.0;
    match feasibility_for_targets(problem, &vec![gamma; problem.n_t()]) {
        Ok(r) => Ok(r.feasible),
        Err(Error::Numerical(_)) => Ok(false),
        Err(e) => Err(e),
    }
}

/// Largest rate that every class reaches at once within the power limits.
/// Doubles from 1 until infeasible (at most `2^16`), then bisects.
pub fn max_common_rate(problem: &MeanFieldWtm) -> Result<CommonRate> {
    problem.validate()?;
    if !common_rate_feasible(problem, RATE_TOL)? {
        return Ok(CommonRate { rate: 0.0, feasible: false });
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    while common_rate_feasible(problem, hi)? {
        lo = hi;
        if hi >= 65536.0 {
            return Ok(CommonRate { rate: hi, feasible: true });
        }
        hi *= 2.0;
    }
    lo = lo.max(RATE_TOL);
    while hi - lo > RATE_TOL {
        let mid = 0.5 * (lo + hi);
        if common_rate_feasible(problem, mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(CommonRate { rate: lo, feasible: true })
}

/// One evaluated hop length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Probe {
    pub r0: f64,
    pub rate: f64,
    pub capacity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldenResult {
    pub best: Probe,
    pub trace: Vec<Probe>,
    /// `(lo, hi)` after every iteration.
    pub brackets: Vec<(f64, f64)>,
    /// Iterations where neither interior probe beat both bracket ends.
    pub non_unimodal: usize,
}

/// Maximize `r0 * rate(r0)` over `[lo, hi]` until the bracket is at most
/// `delta` wide. Both bracket ends are probed as well and the best probe
/// overall is returned.
pub fn golden_section<F>(mut rate: F, lo: f64, hi: f64, delta: f64) -> Result<GoldenResult>
where
    F: FnMut(f64) -> Result<f64>,
{
    if !(lo >= 0.0 && hi > lo && delta > 0.0) {
        return Err(Error::Domain(format!("bad bracket [{lo}, {hi}] with tolerance {delta}")));
    }
    let mut trace: Vec<Probe> = Vec::new();
    let mut eval = |r0: f64, trace: &mut Vec<Probe>| -> Result<Probe> {
        if let Some(p) = trace.iter().find(|p| p.r0 == r0) {
            return Ok(*p);
        }
        let rate = rate(r0)?;
        let p = Probe { r0, rate, capacity: r0 * rate };
        trace.push(p);
        Ok(p)
    };
    let end_lo = eval(lo, &mut trace)?;
    let end_hi = eval(hi, &mut trace)?;
    let (mut a, mut b) = (lo, hi);
    let mut brackets = Vec::new();
    let mut non_unimodal = 0;
    let (mut fa, mut fb) = (end_lo.capacity, end_hi.capacity);
    while b - a > delta {
        let rl = a + (1.0 - GOLDEN_TAU) * (b - a);
        let ru = a + GOLDEN_TAU * (b - a);
        let pl = eval(rl, &mut trace)?;
        let pu = eval(ru, &mut trace)?;
        if pl.capacity.max(pu.capacity) < fa.max(fb) {
            non_unimodal += 1;
        }
        if pl.capacity > pu.capacity {
            b = ru;
            fb = pu.capacity;
        } else {
            a = rl;
            fa = pl.capacity;
        }
        brackets.push((a, b));
    }
    let best = *trace
        .iter()
        .fold(None::<&Probe>, |acc, p| match acc {
            Some(q) if q.capacity >= p.capacity => Some(q),
            _ => Some(p),
        })
        .expect("at least two probes");
    Ok(GoldenResult { best, trace, brackets, non_unimodal })
}

/// Search settings for the capacity optimizers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapacityOptions {
    pub r_lo: f64,
    pub r_hi: f64,
    /// Bracket width at which the search stops; `0.01 d0` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_r: Option<f64>,
    /// Number of quantized hop distances.
    pub ds_bins: usize,
    #[serde(default = "default_cap")]
    pub group_cap: usize,
}

fn default_cap() -> usize {
    DEFAULT_GROUP_CAP
}

impl CapacityOptions {
    pub fn new(r_lo: f64, r_hi: f64, ds_bins: usize) -> Self {
        CapacityOptions { r_lo, r_hi, delta_r: None, ds_bins, group_cap: DEFAULT_GROUP_CAP }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapacityResult {
    pub r0_star: f64,
    pub rate_star: f64,
    pub transport_capacity: f64,
    pub multihop_rate: f64,
    /// False when no probed hop length supports a positive rate.
    pub feasible: bool,
    pub non_unimodal: usize,
    pub trace: Vec<Probe>,
}

impl CapacityResult {
    fn from_search(cfg: &NetworkConfig, g: GoldenResult) -> Self {
        let feasible = g.best.rate > 0.0;
        CapacityResult {
            r0_star: g.best.r0,
            rate_star: g.best.rate,
            transport_capacity: g.best.r0 * g.best.rate,
            multihop_rate: multihop_rate_from_transport(g.best.rate, g.best.r0, cfg.d0, cfg.nm),
            feasible,
            non_unimodal: g.non_unimodal,
            trace: g.trace,
        }
    }

    /// Rows `r0,rate,capacity` in evaluation order.
    pub fn write_trace_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["r0", "rate", "capacity"])?;
        for p in &self.trace {
            wr.write_record([p.r0.to_string(), p.rate.to_string(), p.capacity.to_string()])?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Direct gains of the IESH network, optionally spread over fading levels.
pub fn iesh_direct_gains(cfg: &NetworkConfig, iesh: &IeshDistribution, fading: bool) -> GainDistribution {
    let levels: Vec<(f64, f64)> = if fading { cfg.fading_levels.clone() } else { vec![(1.0, 1.0)] };
    let mut entries = Vec::new();
    for (k, &(h, beta)) in levels.iter().enumerate() {
        for (i, (&d, &e)) in iesh.ds_values.iter().zip(&iesh.eps).enumerate() {
            if e > 0.0 {
                entries.push((h * bpm(d, cfg.alpha), beta * e, k, i + 1));
            }
        }
    }
    entries.sort_by(|a, b| b.0.total_cmp(&a.0).then(b.1.total_cmp(&a.1)));
    GainDistribution {
        gains: entries.iter().map(|e| e.0).collect(),
        probs: entries.iter().map(|e| e.1).collect(),
        kind: GainKind::Direct,
        fading: entries.iter().map(|e| e.2).collect(),
        ring: entries.iter().map(|e| e.3).collect(),
    }
}

fn iesh_problem(cfg: &NetworkConfig, r0: f64, opts: &CapacityOptions, fading: bool) -> Result<MeanFieldWtm> {
    let iesh = iesh_distribution(r0, cfg.lambda, cfg.d0, cfg.nm, opts.ds_bins)?;
    let mut local = cfg.clone();
    if !fading {
        local.fading_levels = vec![(1.0, 1.0)];
    }
    let direct = iesh_direct_gains(&local, &iesh, fading);
    let interference = interference_gain_distribution(&local)?;
    let table = build_group_table(&local, &interference, opts.group_cap)?;
    let post = posterior_tables(&table)?;
    build_wtm(&local, &direct, &interference, &table, &post)
}

/// Reduced IESH-s problem at hop length `r0`: no fading, average power cap
/// only.
pub fn iesh_s_problem(cfg: &NetworkConfig, r0: f64, opts: &CapacityOptions) -> Result<MeanFieldWtm> {
    let p_ave = cfg
        .p_ave
        .ok_or_else(|| Error::Config("IESH-s needs an average power cap p_ave".into()))?;
    let mut w = iesh_problem(cfg, r0, opts, false)?;
    w.p_ave = Some(p_ave);
    w.p_max = f64::MAX;
    w.r_min = 0.0;
    Ok(w)
}

/// Reduced IESH-g problem at hop length `r0`: fading, per-link cap, rate floor.
pub fn iesh_g_problem(cfg: &NetworkConfig, r0: f64, opts: &CapacityOptions) -> Result<MeanFieldWtm> {
    let mut w = iesh_problem(cfg, r0, opts, true)?;
    w.p_ave = None;
    Ok(w)
}

fn check_opts(cfg: &NetworkConfig, opts: &CapacityOptions) -> Result<f64> {
    cfg.validate()?;
    if !(opts.r_lo > 0.0 && opts.r_hi > opts.r_lo) {
        return Err(Error::Config(format!("hop-length bracket [{}, {}] is invalid", opts.r_lo, opts.r_hi)));
    }
    if opts.ds_bins == 0 {
        return Err(Error::Config("ds_bins must be positive".into()));
    }
    let delta = opts.delta_r.unwrap_or(0.01 * cfg.d0);
    if !(delta > 0.0) {
        return Err(Error::Config(format!("delta_r must be positive, got {delta}")));
    }
    Ok(delta)
}

/// Golden-section search of `r0 * max_common_rate` for the IESH-s network.
pub fn iesh_s_capacity(cfg: &NetworkConfig, opts: &CapacityOptions) -> Result<CapacityResult> {
    let delta = check_opts(cfg, opts)?;
    let g = golden_section(
        |r0| Ok(max_common_rate(&iesh_s_problem(cfg, r0, opts)?)?.rate),
        opts.r_lo,
        opts.r_hi,
        delta,
    )?;
    Ok(CapacityResult::from_search(cfg, g))
}

/// Golden-section search of `r0 * (MAPEL weighted rate)` for the IESH-g network.
/// Hop lengths whose rate floor cannot be met score zero.
pub fn iesh_g_capacity(cfg: &NetworkConfig, opts: &CapacityOptions) -> Result<CapacityResult> {
    let delta = check_opts(cfg, opts)?;
    let g = golden_section(
        |r0| match mapel_solve(&iesh_g_problem(cfg, r0, opts)?, 0.01) {
            Ok(s) => Ok(s.rate),
            Err(Error::Infeasible(_)) => Ok(0.0),
            Err(e) => Err(e),
        },
        opts.r_lo,
        opts.r_hi,
        delta,
    )?;
    Ok(CapacityResult::from_search(cfg, g))
}

/// Multi-hop average rate `2 r0 rI / (d0^2 Nm)`.
pub fn multihop_rate_from_transport(r_i: f64, r0: f64, d0: f64, nm: usize) -> f64 {
    2.0 * r0 * r_i / (d0 * d0 * nm as f64)
}

/// Lower and upper multi-hop rate bounds built from `(2i - 1)` and `(2i + 1)`
/// hop-count weights.
pub fn multihop_bounds(r_i: f64, r0: f64, d0: f64, nm: usize) -> (f64, f64) {
    let span = nm as f64 * d0 / r0;
    let n_lo = (span - 1e-9).ceil().max(1.0) as usize;
    let n_hi = (span + 1e-9).floor().max(1.0) as usize;
    let scale = r0 * r0 / (d0 * d0 * (nm * nm) as f64);
    let lower = (1..=n_lo).map(|i| r_i / i as f64 * (2 * i - 1) as f64 * scale).sum();
    let upper = (1..=n_hi).map(|i| r_i / i as f64 * (2 * i + 1) as f64 * scale).sum();
    (lower, upper)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn multihop_examples() {
        assert_eq!(multihop_rate_from_transport(0.0, 1.0, 1.0, 10), 0.0);
        assert!((multihop_rate_from_transport(1.0, 1.0, 1.0, 10) - 0.2).abs() < 1e-15);
        let (lo, hi) = multihop_bounds(1.0, 1.0, 1.0, 10);
        assert!(lo < 0.2 && 0.2 < hi);
    }

    #[test]
    fn golden_finds_parabola_peak() {
        let g = golden_section(|r| Ok(3.0 - r), 0.0, 3.0, 1e-4).unwrap();
        assert!((g.best.r0 - 1.5).abs() < 1e-3);
        for w in g.brackets.windows(2) {
            let (a, b) = (w[0].1 - w[0].0, w[1].1 - w[1].0);
            assert!((b / a - GOLDEN_TAU).abs() < 1e-9);
        }
    }
}
