//! The nine figure presets.
//!
//! Each preset fixes a base scenario, a sweep axis and a few series. Points
//! run in parallel; rows come out in sweep order.

use mfnet_core::capacity::{iesh_g_capacity, iesh_s_capacity, CapacityOptions, CapacityResult};
use mfnet_core::channel::rayleigh_levels;
use mfnet_core::mfg::{pdhg_solve, MfgConfig};
use mfnet_core::reduction::{reduce, Reduction};
use mfnet_core::sim::simulate_massive;
use mfnet_core::wtm::mapel_solve;
use mfnet_core::{Error, NetworkConfig, Result};
use rayon::prelude::*;

use crate::tdm::{standard_schemes, tdm_compare, LinkSet, TDM_GAINS};
use crate::{with_number, Base, ExperimentSpec, Sweep, Table};

pub const PRESETS: [&str; 9] = [
    "fig1_rate_vs_lambda",
    "fig2_rate_vs_pmax",
    "fig8_nc_sensitivity",
    "fig3_csi_resolution",
    "fig6_tdm",
    "fig9_mfg_power",
    "fig4_iesh_s_lambda",
    "fig5_iesh_s_rmin",
    "fig7_iesh_g_lambda",
];

fn num(x: f64) -> String {
    format!("{x}")
}

fn sweep(param: &str, values: &[f64]) -> Sweep {
    Sweep { param: param.to_string(), values: values.to_vec() }
}

/// Scenario used by the IESH-s presets: one fading level, average-power budget.
pub fn iesh_s_base(lambda: f64) -> NetworkConfig {
    let mut cfg = NetworkConfig::reference();
    cfg.lambda = lambda;
    cfg.nm = 20;
    cfg.nm_i = 20;
    cfg.p_ave = Some(10.0);
    cfg.fading_levels = vec![(1.0, 1.0)];
    cfg.area_side = 80.0;
    cfg
}

pub fn iesh_g_base(lambda: f64) -> NetworkConfig {
    let mut cfg = NetworkConfig::reference();
    cfg.lambda = lambda;
    cfg.nm = 10;
    cfg.nm_i = 10;
    cfg.area_side = 40.0;
    cfg
}

/// Fixed-channel MFG scenario with `T = 3` and `n = 0.1`.
pub fn mfg_base(full: bool) -> MfgConfig {
    let (ns, nt) = if full { (61, 90) } else { (21, 30) };
    MfgConfig::fixed_channel(1.0, 3.0, 1.0, 0.1, ns, nt)
}

/// Default spec for a preset. `trials` of zero keeps the preset's own count.
pub fn preset(name: &str, seed: u64, trials: usize, full: bool) -> Result<ExperimentSpec> {
    // `fig2` is short for `fig2_rate_vs_pmax`
    let name = PRESETS.iter().find(|p| p.split('_').next() == Some(name)).copied().unwrap_or(name);
    let sim_trials = if full { 10_000 } else { 2_000 };
    let net = |cfg: NetworkConfig, sw: Sweep, t: usize| ExperimentSpec {
        name: name.to_string(),
        base: Base::Network(cfg),
        sweep: sw,
        trials: if trials > 0 { trials } else { t },
        seed,
        full,
    };
    let reference = NetworkConfig::reference();
    let spec = match name {
        "fig1_rate_vs_lambda" => {
            let l: &[f64] = if full { &[0.5, 1.0, 2.0, 5.0, 10.0] } else { &[0.5, 1.0, 2.0] };
            net(reference, sweep("lambda", l), sim_trials)
        }
        "fig2_rate_vs_pmax" => net(reference, sweep("p_max", &[0.01, 0.02, 0.05, 0.1, 0.2]), 0),
        "fig8_nc_sensitivity" => {
            let mut c = reference;
            c.na = 1;
            net(c, sweep("lambda", &[5.0, 10.0, 20.0]), 0)
        }
        "fig3_csi_resolution" => net(reference, sweep("p_max", &[0.01, 0.02, 0.05]), sim_trials),
        "fig6_tdm" => net(reference, sweep("p_max", &[0.02, 0.05, 0.1, 0.2]), 0),
        "fig9_mfg_power" => ExperimentSpec {
            name: name.to_string(),
            base: Base::Mfg(mfg_base(full)),
            sweep: sweep("a", &[1.0, 2.0, 3.0, 4.0]),
            trials: 0,
            seed,
            full,
        },
        "fig4_iesh_s_lambda" => net(iesh_s_base(1.0), sweep("lambda", &[0.01, 0.03, 0.1, 0.3, 1.0, 3.0, 10.0]), 0),
        "fig5_iesh_s_rmin" => net(iesh_s_base(0.3), sweep("r_lo", &[0.1, 1.5, 2.0, 3.0, 4.0, 6.0, 8.0]), 0),
        "fig7_iesh_g_lambda" => net(iesh_g_base(5.0), sweep("lambda", &[5.0, 10.0, 20.0]), 0),
        _ => return Err(Error::Config(format!("unknown preset `{name}`; known: {}", PRESETS.join(", ")))),
    };
    Ok(spec)
}

/// Base network config with the sweep value applied to a config field.
fn network_at(spec: &ExperimentSpec, v: Option<f64>) -> Result<NetworkConfig> {
    let base = spec.network()?;
    match v {
        Some(x) => with_number(base, &spec.sweep.param, x),
        None => Ok(base.clone()),
    }
}

/// MAPEL policy on the reduced problem, `None` when no policy meets the rate floor.
fn mean_field(cfg: &NetworkConfig) -> Result<(Reduction, Option<Vec<f64>>)> {
    let red = reduce(cfg)?;
    match mapel_solve(&red.wtm, 0.01) {
        Ok(sol) => Ok((red, Some(sol.p))),
        Err(e) if e.is_infeasible() => Ok((red, None)),
        Err(e) => Err(e),
    }
}

fn mean_interference(red: &Reduction, p: &[f64]) -> f64 {
    red.wtm.omega.iter().zip(red.wtm.interference(p)).map(|(w, i)| w * i).sum()
}

pub fn run_preset(spec: &ExperimentSpec) -> Result<Table> {
    match spec.name.as_str() {
        "fig1_rate_vs_lambda" => rate_with_simulation(spec, "p_max", &[0.01, 0.02, 0.1]),
        "fig2_rate_vs_pmax" => fig2(spec),
        "fig8_nc_sensitivity" => fig8(spec),
        "fig3_csi_resolution" => rate_with_simulation(spec, "levels", &[2.0, 4.0, 6.0]),
        "fig6_tdm" => fig6(spec),
        "fig9_mfg_power" => fig9(spec),
        "fig4_iesh_s_lambda" | "fig5_iesh_s_rmin" | "fig7_iesh_g_lambda" => iesh(spec),
        other => Err(Error::Config(format!("unknown preset `{other}`"))),
    }
}

type Row = Vec<String>;

/// Mean-field and Monte Carlo rate under the MAPEL policy, sweep x series.
fn rate_with_simulation(spec: &ExperimentSpec, series: &str, values: &[f64]) -> Result<Table> {
    let mut jobs = Vec::new();
    for v in spec.points() {
        for s in values {
            jobs.push((v, *s));
        }
    }
    let rows: Vec<(Row, Row, bool)> = jobs
        .par_iter()
        .map(|&(v, s)| -> Result<(Row, Row, bool)> {
            let mut cfg = network_at(spec, v)?;
            if series == "levels" {
                cfg.fading_levels = rayleigh_levels(s as usize)?;
            } else {
                cfg = with_number(&cfg, series, s)?;
            }
            let (red, policy) = mean_field(&cfg)?;
            let head = vec![num(cfg.lambda), num(cfg.p_max), num(cfg.fading_levels.len() as f64)];
            let Some(p) = policy else {
                let nan = |m: &str| [vec![m.to_string()], head.clone(), vec!["NaN".into(); 3]].concat();
                return Ok((nan("mean_field"), nan("simulation"), true));
            };
            let mf = [
                vec!["mean_field".to_string()],
                head.clone(),
                vec![num(red.wtm.weighted_rate(&p)), "0".into(), num(mean_interference(&red, &p))],
            ]
            .concat();
            let rep = simulate_massive(&cfg, &red, &p, spec.trials, spec.seed)?;
            let sim = [
                vec!["simulation".to_string()],
                head,
                vec![num(rep.mean_rate), num(rep.mean_rate_se), num(rep.mean_interference)],
            ]
            .concat();
            Ok((mf, sim, false))
        })
        .collect::<Result<_>>()?;
    let mut t = Table::new(&["method", "lambda", "p_max", "fading_levels", "rate", "rate_se", "interference"]);
    t.comment(format!("preset {}; sweep {} x {series}; seed {}; trials {}", spec.name, spec.sweep.param, spec.seed, spec.trials));
    t.comment("method: mean_field prediction or simulation mean over trials");
    t.comment("lambda: nodes per m^2; p_max: mW; fading_levels: number of quantized CSI levels");
    t.comment("rate: average rate per link in bit/s/Hz; rate_se: standard error; interference: mean in mW");
    t.flagged = rows.iter().any(|r| r.2);
    let (mf, sim): (Vec<Row>, Vec<Row>) = rows.into_iter().map(|r| (r.0, r.1)).unzip();
    mf.into_iter().chain(sim).for_each(|r| t.push(r));
    Ok(t)
}

fn fig2(spec: &ExperimentSpec) -> Result<Table> {
    let lambdas = if spec.full { vec![1.0, 20.0, 1e3, 1e4, 1e5] } else { vec![1.0, 20.0, 1e5] };
    let mut jobs = Vec::new();
    for l in &lambdas {
        for v in spec.points() {
            jobs.push((*l, v));
        }
    }
    let rows: Vec<(Row, bool)> = jobs
        .par_iter()
        .map(|&(l, v)| -> Result<(Row, bool)> {
            let mut cfg = network_at(spec, v)?;
            cfg.lambda = l;
            let (red, p) = mean_field(&cfg)?;
            let rate = p.as_ref().map_or(f64::NAN, |p| red.wtm.weighted_rate(p));
            Ok((vec![num(l), num(cfg.p_max), num(rate)], p.is_none()))
        })
        .collect::<Result<_>>()?;
    let mut t = Table::new(&["lambda", "p_max", "rate"]);
    t.comment(format!("preset {}; sweep p_max per lambda", spec.name));
    t.comment("lambda: nodes per m^2; p_max: mW; rate: mean-field average rate in bit/s/Hz");
    t.flagged = rows.iter().any(|r| r.1);
    rows.into_iter().for_each(|r| t.push(r.0));
    Ok(t)
}

fn fig8(spec: &ExperimentSpec) -> Result<Table> {
    let mut jobs = Vec::new();
    for v in spec.points() {
        for pm in [0.02, 0.05, 0.2] {
            jobs.push((v, pm));
        }
    }
    let rows: Vec<(Vec<Row>, bool)> = jobs
        .par_iter()
        .map(|&(v, pm)| -> Result<(Vec<Row>, bool)> {
            let mut cfg = network_at(spec, v)?;
            cfg.p_max = pm;
            let mut rates = Vec::new();
            let mut flagged = false;
            for nc in [1, 2] {
                cfg.nc = nc;
                let (red, p) = mean_field(&cfg)?;
                flagged |= p.is_none();
                rates.push(p.as_ref().map_or(f64::NAN, |p| red.wtm.weighted_rate(p)));
            }
            let rows = [1usize, 2]
                .iter()
                .zip(&rates)
                .map(|(nc, r)| vec![num(cfg.lambda), num(pm), nc.to_string(), num(*r), num(r / rates[0] - 1.0)])
                .collect();
            Ok((rows, flagged))
        })
        .collect::<Result<_>>()?;
    let mut t = Table::new(&["lambda", "p_max", "Nc", "rate", "rel_to_nc1"]);
    t.comment(format!("preset {}; Na = {}; sweep lambda x p_max x Nc", spec.name, spec.network()?.na));
    t.comment("Nc: partition intervals per tracked interference index; rate: mean-field average rate in bit/s/Hz");
    t.comment("rel_to_nc1: relative change against the Nc = 1 row of the same point");
    t.flagged = rows.iter().any(|r| r.1);
    rows.into_iter().flat_map(|r| r.0).for_each(|r| t.push(r));
    Ok(t)
}

fn fig6(spec: &ExperimentSpec) -> Result<Table> {
    let schemes = standard_schemes(spec.seed);
    let rows: Vec<(Vec<Row>, bool)> = spec
        .points()
        .par_iter()
        .map(|&v| -> Result<(Vec<Row>, bool)> {
            let cfg = network_at(spec, v)?;
            let links = LinkSet::from_fading(&TDM_GAINS, cfg.d0, cfg.alpha, cfg.noise, cfg.p_max)?;
            let out = tdm_compare(&links, &schemes)?;
            let flagged = out.iter().any(|o| o.flagged);
            let rows = out
                .iter()
                .zip(&schemes)
                .map(|(o, s)| {
                    let groups: Vec<String> = s
                        .partition
                        .iter()
                        .map(|g| g.iter().map(|i| (i + 1).to_string()).collect::<Vec<_>>().join(" "))
                        .collect();
                    vec![num(cfg.p_max), o.scheme.clone(), groups.join(" | "), num(o.rate), o.flagged.to_string()]
                })
                .collect();
            Ok((rows, flagged))
        })
        .collect::<Result<_>>()?;
    let mut t = Table::new(&["p_max", "scheme", "groups", "rate", "flagged"]);
    t.comment(format!("preset {}; four links with fading {TDM_GAINS:?} at distance d0; seed {}", spec.name, spec.seed));
    t.comment("cross gains: unit distance, unit mean fading; slots share time equally");
    t.comment("groups: links (1-based) sharing a slot; rate: time-averaged mean rate per link in bit/s/Hz");
    t.flagged = rows.iter().any(|r| r.1);
    rows.into_iter().flat_map(|r| r.0).for_each(|r| t.push(r));
    Ok(t)
}

fn fig9(spec: &ExperimentSpec) -> Result<Table> {
    let base = spec.mfg()?;
    let mut jobs = Vec::new();
    for gbar in [0.0, 0.05] {
        for v in spec.points() {
            jobs.push((gbar, v));
        }
    }
    let rows: Vec<(Row, bool)> = jobs
        .par_iter()
        .map(|&(gbar, v)| -> Result<(Row, bool)> {
            let mut cfg = base.clone();
            cfg.gbar = gbar;
            if let Some(a) = v {
                if spec.sweep.param != "a" {
                    cfg = with_number(&cfg, &spec.sweep.param, a)?;
                } else {
                    cfg.arrival_pmf = vec![(a, 1.0)];
                }
            }
            let a: f64 = cfg.arrival_pmf.iter().map(|(b, q)| b * q).sum();
            let sol = pdhg_solve(&cfg)?;
            let h = cfg.h_range.0;
            let closed = cfg.t * ((a / cfg.t).exp2() - 1.0) * cfg.noise / h;
            Ok((
                vec![
                    num(gbar),
                    num(a),
                    num(sol.total_power),
                    num(closed),
                    num(sol.cleared_mass),
                    sol.iterations.to_string(),
                    sol.converged.to_string(),
                ],
                !sol.converged,
            ))
        })
        .collect::<Result<_>>()?;
    let mut t = Table::new(&["gbar", "arrival_bits", "total_power", "interference_free_power", "cleared_mass", "iterations", "converged"]);
    t.comment(format!(
        "preset {}; T = {}; noise = {}; grid {}x{}x{}",
        spec.name, base.t, base.noise, base.grid.ns, base.grid.nh, base.grid.nt
    ));
    t.comment("gbar: mean interference gain; arrival_bits: mean arrival per user");
    t.comment("total_power: solver objective; interference_free_power: T (2^(a/T) - 1) n / h for a single user");
    t.flagged = rows.iter().any(|r| r.1);
    rows.into_iter().for_each(|r| t.push(r.0));
    Ok(t)
}

fn iesh(spec: &ExperimentSpec) -> Result<Table> {
    let general = spec.name == "fig7_iesh_g_lambda";
    let rows: Vec<(Row, bool)> = spec
        .points()
        .par_iter()
        .map(|&v| -> Result<(Row, bool)> {
            let (cfg, opts) = if general {
                let bins = if spec.full { 5 } else { 3 };
                (network_at(spec, v)?, CapacityOptions::new(0.1, 5.0, bins))
            } else if spec.sweep.param == "r_lo" {
                let lo = v.unwrap_or(0.1);
                (spec.network()?.clone(), CapacityOptions::new(lo, 10.0, 20))
            } else {
                (network_at(spec, v)?, CapacityOptions::new(0.1, 10.0, 20))
            };
            let res: CapacityResult =
                if general { iesh_g_capacity(&cfg, &opts)? } else { iesh_s_capacity(&cfg, &opts)? };
            Ok((
                vec![
                    num(cfg.lambda),
                    num(opts.r_lo),
                    num(res.r0_star),
                    num(res.rate_star),
                    num(res.transport_capacity),
                    num(res.multihop_rate),
                    res.non_unimodal.to_string(),
                ],
                !res.feasible,
            ))
        })
        .collect::<Result<_>>()?;
    let mut t = Table::new(&["lambda", "r_lo", "r0_star", "rate", "transport_capacity", "multihop_rate", "non_unimodal"]);
    let cfg = spec.network()?;
    t.comment(format!(
        "preset {}; {}; Nm = {}; d0 = {}; sweep {}",
        spec.name,
        if general { "peak power, MAPEL per probe" } else { "average power, common rate per probe" },
        cfg.nm,
        cfg.d0,
        spec.sweep.param
    ));
    t.comment("r_lo: smallest single-hop distance searched; r0_star: best hop distance in m");
    t.comment("rate: single-hop rate at r0_star; transport_capacity: r0_star * rate; multihop_rate: end-to-end rate");
    t.comment("non_unimodal: golden-section steps where neither probe beat the bracket ends");
    t.flagged = rows.iter().any(|r| r.1);
    rows.into_iter().for_each(|r| t.push(r.0));
    Ok(t)
}
