//! Delay-constrained power control as a mean-field game on a
//! (buffer, channel, time) grid.
//!
//! The density is stored as cell probabilities `m[k][j][i]` (time step `k`,
//! channel level `j`, buffer cell `i`), and the control as the flux
//! `w = r m` leaving each buffer cell towards `s = 0`. Buffer cell 0 holds
//! users that have finished. With the flux as unknown the dynamics are
//! linear and the power cost `m (2^{w/m} - 1) / h` is jointly convex, so the
//! problem is solved by a preconditioned primal-dual hybrid gradient method.

use std::io::Write;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const LN2: f64 = std::f64::consts::LN_2;

/// Largest admissible CFL ratio for both the advection and diffusion parts.
pub const CFL_LIMIT: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridSize {
    pub ns: usize,
    pub nh: usize,
    pub nt: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PdhgOptions {
    /// Iteration cap for each penalty stage.
    pub max_iterations: usize,
    /// Relative change of the iterate over `check_every` iterations below
    /// which a stage stops.
    pub tol: f64,
    pub check_every: usize,
    /// Largest dynamics residual accepted as converged.
    pub residual_tol: f64,
    /// Step sizes are `step_scale / L`, `L` the preconditioned operator norm.
    pub step_scale: f64,
    /// Primal step is `theta` times, and dual step `1/theta` times, the base step.
    pub primal_weight: f64,
    /// Cleared mass required before the penalty continuation stops.
    pub clear_target: f64,
    pub max_stages: usize,
    pub penalty_growth: f64,
}

impl Default for PdhgOptions {
    fn default() -> Self {
        PdhgOptions {
            max_iterations: 10_000,
            tol: 1e-4,
            check_every: 100,
            residual_tol: 1e-3,
            step_scale: 0.9,
            primal_weight: 0.1,
            clear_target: 0.999,
            max_stages: 8,
            penalty_growth: 10.0,
        }
    }
}

/// Input of the delay-constrained problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MfgConfig {
    #[serde(rename = "T")]
    pub t: f64,
    pub eta: f64,
    pub gbar: f64,
    pub noise: f64,
    /// `(bits, probability)` pairs.
    pub arrival_pmf: Vec<(f64, f64)>,
    pub h_range: (f64, f64),
    pub grid: GridSize,
    /// Upper end of the buffer axis; defaults to the largest arrival.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s_max: Option<f64>,
    /// Initial channel marginal over the `nh` levels; uniform if absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h_weights: Option<Vec<f64>>,
    /// Explicit initial density `[j][i]`, overriding the arrival law.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho0: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub solver: PdhgOptions,
}

impl MfgConfig {
    /// Single fixed channel `h`, no interference, point arrival of `a` bits.
    pub fn fixed_channel(a: f64, t: f64, h: f64, noise: f64, ns: usize, nt: usize) -> Self {
        MfgConfig {
            t,
            eta: 0.0,
            gbar: 0.0,
            noise,
            arrival_pmf: vec![(a, 1.0)],
            h_range: (h, h),
            grid: GridSize { ns, nh: 1, nt },
            s_max: None,
            h_weights: None,
            rho0: None,
            solver: PdhgOptions::default(),
        }
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let c: MfgConfig = serde_json::from_str(s)?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.t > 0.0 && self.t.is_finite()) {
            return bad(format!("T must be positive, got {}", self.t));
        }
        if !(self.eta >= 0.0) {
            return bad(format!("eta must be >= 0, got {}", self.eta));
        }
        if !(self.gbar >= 0.0) {
            return bad(format!("gbar must be >= 0, got {}", self.gbar));
        }
        if !(self.noise > 0.0) {
            return bad(format!("noise must be positive, got {}", self.noise));
        }
        let g = self.grid;
        if g.ns < 2 || g.nt < 2 || g.nh < 1 {
            return bad(format!("grid too small: {:?}", g));
        }
        if self.eta > 0.0 && g.nh < 2 {
            return bad("channel diffusion needs nh >= 2".into());
        }
        let (lo, hi) = self.h_range;
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return bad(format!("h_range must satisfy 0 < h_min <= h_max, got {:?}", self.h_range));
        }
        if g.nh > 1 && hi == lo {
            return bad("nh > 1 needs h_min < h_max".into());
        }
        if let Some(rho0) = &self.rho0 {
            if rho0.len() != g.nh || rho0.iter().any(|r| r.len() != g.ns) {
                return bad("rho0 must be nh rows of ns cells".into());
            }
            if rho0.iter().flatten().any(|v| !(*v >= 0.0)) {
                return bad("rho0 must be nonnegative".into());
            }
            let total: f64 = rho0.iter().flatten().sum();
            if (total - 1.0).abs() > 1e-8 {
                return bad(format!("rho0 sums to {total}, expected 1"));
            }
        } else {
            if self.arrival_pmf.is_empty() {
                return bad("arrival_pmf is empty".into());
            }
            if self.arrival_pmf.iter().any(|(a, p)| !(*a >= 0.0) || !(*p >= 0.0)) {
                return bad("arrival_pmf needs nonnegative sizes and probabilities".into());
            }
            let total: f64 = self.arrival_pmf.iter().map(|x| x.1).sum();
            if (total - 1.0).abs() > 1e-8 {
                return bad(format!("arrival_pmf sums to {total}, expected 1"));
            }
        }
        if let Some(w) = &self.h_weights {
            if w.len() != g.nh || w.iter().any(|v| !(*v >= 0.0)) {
                return bad("h_weights must hold nh nonnegative entries".into());
            }
            let total: f64 = w.iter().sum();
            if (total - 1.0).abs() > 1e-8 {
                return bad(format!("h_weights sums to {total}, expected 1"));
            }
        }
        if let Some(s) = self.s_max {
            if !(s > 0.0) {
                return bad(format!("s_max must be positive, got {s}"));
            }
        }
        let o = &self.solver;
        if !(o.step_scale > 0.0 && o.step_scale < 1.0) {
            return bad(format!("step_scale must lie in (0,1), got {}", o.step_scale));
        }
        if o.check_every == 0 || o.max_iterations == 0 {
            return bad("max_iterations and check_every must be positive".into());
        }
        if !(o.primal_weight > 0.0 && o.primal_weight.is_finite()) {
            return bad(format!("primal_weight must be positive, got {}", o.primal_weight));
        }
        if !(o.penalty_growth > 1.0) || o.max_stages == 0 {
            return bad("penalty continuation needs growth > 1 and at least one stage".into());
        }
        Ok(())
    }
}

/// Discretized problem: grid geometry, initial density and CFL numbers.
#[derive(Debug, Clone)]
pub struct MfgProblem {
    pub ns: usize,
    pub nh: usize,
    pub nt: usize,
    pub ds: f64,
    pub dh: f64,
    pub dtau: f64,
    pub s: Vec<f64>,
    pub h: Vec<f64>,
    pub rho0: Vec<f64>,
    pub gbar: f64,
    pub noise: f64,
    /// `dtau / ds`.
    pub c: f64,
    /// `eta dtau / dh^2`.
    pub kappa: f64,
    /// Largest rate allowed by the advection CFL limit.
    pub rate_cap: f64,
}

impl MfgProblem {
    pub fn new(cfg: &MfgConfig) -> Result<Self> {
        cfg.validate()?;
        let GridSize { ns, nh, nt } = cfg.grid;
        let s_max = cfg
            .s_max
            .unwrap_or_else(|| cfg.arrival_pmf.iter().map(|x| x.0).fold(0.0, f64::max));
        let s_max = if s_max > 0.0 { s_max } else { 1.0 };
        let ds = s_max / (ns - 1) as f64;
        let (hl, hh) = cfg.h_range;
        let dh = if nh > 1 { (hh - hl) / (nh - 1) as f64 } else { 1.0 };
        let dtau = cfg.t / nt as f64;
        let kappa = if nh > 1 { cfg.eta * dtau / (dh * dh) } else { 0.0 };
        if 2.0 * kappa > CFL_LIMIT + 1e-12 {
            return Err(Error::Config(format!(
                "diffusion CFL ratio 2 eta dtau / dh^2 = {:.4} exceeds {CFL_LIMIT}; increase nt",
                2.0 * kappa
            )));
        }
        let s: Vec<f64> = (0..ns).map(|i| i as f64 * ds).collect();
        let h: Vec<f64> = (0..nh).map(|j| if nh > 1 { hl + j as f64 * dh } else { hl }).collect();
        let mut rho0 = vec![0.0; nh * ns];
        if let Some(r) = &cfg.rho0 {
            for j in 0..nh {
                rho0[j * ns..(j + 1) * ns].copy_from_slice(&r[j]);
            }
        } else {
            let hw = cfg.h_weights.clone().unwrap_or_else(|| vec![1.0 / nh as f64; nh]);
            for &(a, p) in &cfg.arrival_pmf {
                if a > s_max + 1e-12 {
                    return Err(Error::Config(format!("arrival {a} exceeds s_max {s_max}")));
                }
                let x = a / ds;
                let lo = (x.floor() as usize).min(ns - 1);
                let frac = (x - lo as f64).clamp(0.0, 1.0);
                for j in 0..nh {
                    rho0[j * ns + lo] += p * hw[j] * (1.0 - frac);
                    if frac > 0.0 {
                        rho0[j * ns + (lo + 1).min(ns - 1)] += p * hw[j] * frac;
                    }
                }
            }
        }
        let c = dtau / ds;
        Ok(MfgProblem {
            ns,
            nh,
            nt,
            ds,
            dh,
            dtau,
            s,
            h,
            rho0,
            gbar: cfg.gbar,
            noise: cfg.noise,
            c,
            kappa,
            rate_cap: CFL_LIMIT / c,
        })
    }

    pub fn slice_len(&self) -> usize {
        self.nh * self.ns
    }

    /// Reflecting explicit diffusion along `h`, in place.
    fn diffuse(&self, x: &mut [f64]) {
        if self.kappa == 0.0 || self.nh < 2 {
            return;
        }
        let (ns, nh, k) = (self.ns, self.nh, self.kappa);
        let old = x.to_vec();
        for j in 0..nh {
            for i in 0..ns {
                let here = old[j * ns + i];
                let mut lap = 0.0;
                if j > 0 {
                    lap += old[(j - 1) * ns + i] - here;
                }
                if j + 1 < nh {
                    lap += old[(j + 1) * ns + i] - here;
                }
                x[j * ns + i] = here + k * lap;
            }
        }
    }

    /// `(S w)_i = w_{i+1} - w_i` with no flux out of cell 0 or into the top cell.
    fn shift(&self, w: &[f64], out: &mut [f64]) {
        let ns = self.ns;
        for j in 0..self.nh {
            let row = &w[j * ns..(j + 1) * ns];
            let o = &mut out[j * ns..(j + 1) * ns];
            o[0] = row.get(1).copied().unwrap_or(0.0);
            for i in 1..ns {
                let up = if i + 1 < ns { row[i + 1] } else { 0.0 };
                o[i] = up - row[i];
            }
        }
    }

    fn shift_t(&self, y: &[f64], out: &mut [f64]) {
        let ns = self.ns;
        for j in 0..self.nh {
            let row = &y[j * ns..(j + 1) * ns];
            let o = &mut out[j * ns..(j + 1) * ns];
            o[0] = 0.0;
            for i in 1..ns {
                o[i] = row[i - 1] - row[i];
            }
        }
    }

    fn check_cfl(&self, r: &[f64]) -> Result<()> {
        let worst = r.iter().cloned().fold(0.0f64, f64::max) * self.c;
        if worst > CFL_LIMIT + 1e-12 {
            return Err(Error::Numerical(format!(
                "advection CFL ratio max(r) dtau / ds = {worst:.4} exceeds {CFL_LIMIT}"
            )));
        }
        if r.iter().any(|v| *v < 0.0) {
            return Err(Error::Domain("rates must be nonnegative".into()));
        }
        Ok(())
    }

    /// One upwind advection step towards `s = 0` followed by diffusion in `h`.
    pub fn transport_step(&self, rho: &[f64], r: &[f64]) -> Result<Vec<f64>> {
        self.check_len(rho)?;
        self.check_len(r)?;
        self.check_cfl(r)?;
        let w: Vec<f64> = rho.iter().zip(r).map(|(m, v)| m * v).collect();
        let mut sw = vec![0.0; rho.len()];
        self.shift(&self.zero_cleared(w), &mut sw);
        let mut next: Vec<f64> = rho.iter().zip(&sw).map(|(m, f)| m + self.c * f).collect();
        self.diffuse(&mut next);
        Ok(next)
    }

    /// Transpose of `rho -> transport_step(rho, r)` for fixed `r`.
    pub fn transport_adjoint(&self, phi: &[f64], r: &[f64]) -> Result<Vec<f64>> {
        self.check_len(phi)?;
        self.check_len(r)?;
        self.check_cfl(r)?;
        let mut dphi = phi.to_vec();
        self.diffuse(&mut dphi);
        let mut st = vec![0.0; phi.len()];
        self.shift_t(&dphi, &mut st);
        Ok((0..phi.len()).map(|q| dphi[q] + self.c * r[q] * st[q]).collect())
    }

    fn zero_cleared(&self, mut w: Vec<f64>) -> Vec<f64> {
        for j in 0..self.nh {
            w[j * self.ns] = 0.0;
        }
        w
    }

    fn check_len(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.slice_len() {
            return Err(Error::Size(format!("field slice has {} cells, expected {}", x.len(), self.slice_len())));
        }
        Ok(())
    }

    /// `sum m (2^r - 1) / h` over one slice.
    fn snr_load(&self, m: &[f64], w: &[f64]) -> f64 {
        let ns = self.ns;
        let mut total = 0.0;
        for j in 0..self.nh {
            for i in 1..ns {
                let q = j * ns + i;
                if m[q] > 0.0 && w[q] > 0.0 {
                    total += m[q] * ((w[q] / m[q]).exp2() - 1.0) / self.h[j];
                }
            }
        }
        total
    }
}

/// Rates `log2(1 + p h / (gbar <p, rho> + n))` for one time slice.
pub fn rate_field(prob: &MfgProblem, p: &[f64], rho: &[f64]) -> Result<Vec<f64>> {
    prob.check_len(p)?;
    prob.check_len(rho)?;
    let agg: f64 = p.iter().zip(rho).map(|(a, b)| a * b).sum();
    let denom = prob.gbar * agg + prob.noise;
    Ok((0..p.len())
        .map(|q| (p[q] * prob.h[q / prob.ns] / denom).ln_1p() / LN2)
        .collect())
}

/// Trapezoidal rule in time of `sum p rho` over fields with `K + 1` slices.
pub fn total_power(prob: &MfgProblem, p: &[f64], rho: &[f64]) -> Result<f64> {
    let n = prob.slice_len();
    if p.len() != rho.len() || !p.len().is_multiple_of(n) || p.len() < 2 * n {
        return Err(Error::Size("p and rho need the same number (>= 2) of full slices".into()));
    }
    let slices = p.len() / n;
    let mut total = 0.0;
    for k in 0..slices {
        let wt = if k == 0 || k + 1 == slices { 0.5 } else { 1.0 };
        let a = &p[k * n..(k + 1) * n];
        let b = &rho[k * n..(k + 1) * n];
        total += wt * a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    }
    Ok(total * prob.dtau)
}

/// Fields of a solved instance. `rho` has `nt + 1` slices, `p` and `rate`
/// have `nt + 1` slices with the last one zero, `phi` has `nt` slices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MfgGrid {
    pub ns: usize,
    pub nh: usize,
    pub nt: usize,
    pub ds: f64,
    pub dh: f64,
    pub dtau: f64,
    pub s: Vec<f64>,
    pub h: Vec<f64>,
    pub rho: Vec<f64>,
    pub p: Vec<f64>,
    pub rate: Vec<f64>,
    pub phi: Vec<f64>,
}

impl MfgGrid {
    pub fn at(&self, field: &[f64], k: usize, j: usize, i: usize) -> f64 {
        field[(k * self.nh + j) * self.ns + i]
    }

    /// Probability mass of each time slice.
    pub fn slice_masses(&self) -> Vec<f64> {
        self.rho.chunks(self.nh * self.ns).map(|c| c.iter().sum()).collect()
    }

    /// Expected backlog `sum s rho` of each time slice.
    pub fn backlog(&self) -> Vec<f64> {
        self.rho
            .chunks(self.nh * self.ns)
            .map(|c| c.iter().enumerate().map(|(q, v)| v * self.s[q % self.ns]).sum())
            .collect()
    }

    /// Write one field as rows `s,h,tau,value`.
    pub fn write_field_csv<W: Write>(&self, w: W, field: &[f64]) -> Result<()> {
        let n = self.nh * self.ns;
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["s", "h", "tau", "value"])?;
        for (k, chunk) in field.chunks(n).enumerate() {
            for (q, v) in chunk.iter().enumerate() {
                wr.write_record([
                    self.s[q % self.ns].to_string(),
                    self.h[q / self.ns].to_string(),
                    (k as f64 * self.dtau).to_string(),
                    v.to_string(),
                ])?;
            }
        }
        wr.flush()?;
        Ok(())
    }
}

/// Relative change of the iterate over the last `check_every` iterations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub iteration: usize,
    pub penalty: f64,
    pub change: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MfgSolution {
    /// Energy `dtau sum_k P_k` of the piecewise-constant policy.
    pub total_power: f64,
    pub cleared_mass: f64,
    /// Max-norm residual of the discrete dynamics at the final iterate.
    pub pde_residual: f64,
    pub iterations: usize,
    pub converged: bool,
    pub stages: usize,
    pub penalty: f64,
    /// Aggregate power `P_k` of each step.
    pub power_profile: Vec<f64>,
    pub trace: Vec<TracePoint>,
    pub grid: MfgGrid,
}

/// Spectral preconditioner `eps + L_tau + c^2 L_s` on the dual, applied per
/// channel row in the cosine basis.
struct Precond {
    vt: DMatrix<f64>,
    vs: DMatrix<f64>,
    den: DMatrix<f64>,
}

fn cosine_basis(n: usize) -> (DMatrix<f64>, Vec<f64>) {
    let mut v = DMatrix::from_fn(n, n, |i, a| (std::f64::consts::PI * a as f64 * (i as f64 + 0.5) / n as f64).cos());
    for a in 0..n {
        let norm = v.column(a).norm();
        v.column_mut(a).scale_mut(1.0 / norm);
    }
    let lam = (0..n).map(|a| 2.0 - 2.0 * (std::f64::consts::PI * a as f64 / n as f64).cos()).collect();
    (v, lam)
}

impl Precond {
    fn new(nt: usize, ns: usize, c: f64) -> Self {
        let (vt, lt) = cosine_basis(nt);
        let (vs, ls) = cosine_basis(ns);
        let den = DMatrix::from_fn(nt, ns, |a, b| 0.05 + lt[a] + c * c * ls[b]);
        Precond { vt, vs, den }
    }

    /// Solve in place; `y` is laid out `[k][j][i]`.
    fn apply(&self, y: &mut [f64], nt: usize, nh: usize, ns: usize) {
        for j in 0..nh {
            let mat = DMatrix::from_fn(nt, ns, |k, i| y[(k * nh + j) * ns + i]);
            let mut z = self.vt.transpose() * mat * &self.vs;
            z.component_div_assign(&self.den);
            let back = &self.vt * z * self.vs.transpose();
            for k in 0..nt {
                for i in 0..ns {
                    y[(k * nh + j) * ns + i] = back[(k, i)];
                }
            }
        }
    }
}

/// Unknowns: `m` holds `M_1..M_nt`, `w` holds `W_0..W_{nt-1}`.
struct Primal {
    m: Vec<f64>,
    w: Vec<f64>,
}

impl MfgProblem {
    /// `K(m, w)[k] = M_{k+1} - D M_k - c D S W_k`.
    fn apply_k(&self, x: &Primal, out: &mut [f64]) {
        let n = self.slice_len();
        let mut buf = vec![0.0; n];
        for k in 0..self.nt {
            self.shift(&x.w[k * n..(k + 1) * n], &mut buf);
            for q in 0..n {
                buf[q] *= self.c;
                if k >= 1 {
                    buf[q] += x.m[(k - 1) * n + q];
                }
            }
            self.diffuse(&mut buf);
            let o = &mut out[k * n..(k + 1) * n];
            for q in 0..n {
                o[q] = x.m[k * n + q] - buf[q];
            }
        }
    }

    fn apply_kt(&self, y: &[f64], gm: &mut [f64], gw: &mut [f64]) {
        let n = self.slice_len();
        let mut dy = vec![0.0; n];
        let mut st = vec![0.0; n];
        gm[..n * self.nt].copy_from_slice(&y[..n * self.nt]);
        for k in 0..self.nt {
            dy.copy_from_slice(&y[k * n..(k + 1) * n]);
            self.diffuse(&mut dy);
            if k >= 1 {
                for q in 0..n {
                    gm[(k - 1) * n + q] -= dy[q];
                }
            }
            self.shift_t(&dy, &mut st);
            for q in 0..n {
                gw[k * n + q] = -self.c * st[q];
            }
        }
    }

    fn rhs(&self) -> Vec<f64> {
        let n = self.slice_len();
        let mut b = vec![0.0; n * self.nt];
        let mut d = self.rho0.clone();
        self.diffuse(&mut d);
        b[..n].copy_from_slice(&d);
        b
    }

    /// Roll the density forward under the rates implied by `w / m`.
    fn forward(&self, x: &Primal) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>)> {
        let n = self.slice_len();
        let mut rho = self.rho0.clone();
        let mut rho_all = Vec::with_capacity(n * (self.nt + 1));
        let mut p_all = vec![0.0; n * (self.nt + 1)];
        let mut r_all = vec![0.0; n * (self.nt + 1)];
        let mut profile = Vec::with_capacity(self.nt);
        rho_all.extend_from_slice(&rho);
        for k in 0..self.nt {
            let mk: &[f64] = if k == 0 { &self.rho0 } else { &x.m[(k - 1) * n..k * n] };
            let wk = &x.w[k * n..(k + 1) * n];
            let mut r = vec![0.0; n];
            for q in 0..n {
                if q % self.ns != 0 && mk[q] > 1e-14 && wk[q] > 0.0 {
                    r[q] = (wk[q] / mk[q]).min(self.rate_cap);
                }
            }
            let flux: Vec<f64> = rho.iter().zip(&r).map(|(a, b)| a * b).collect();
            let load = self.snr_load(&rho, &flux);
            let frac = self.gbar * load;
            if frac >= 1.0 {
                return Err(Error::Infeasible(format!(
                    "aggregate interference unbounded at step {k} (gbar * load = {frac:.4})"
                )));
            }
            let agg = self.noise * load / (1.0 - frac);
            profile.push(agg);
            let level = self.gbar * agg + self.noise;
            for q in 0..n {
                if r[q] > 0.0 {
                    p_all[k * n + q] = (r[q].exp2() - 1.0) * level / self.h[q / self.ns];
                }
            }
            r_all[k * n..(k + 1) * n].copy_from_slice(&r);
            rho = self.transport_step(&rho, &r)?;
            rho_all.extend_from_slice(&rho);
        }
        Ok((rho_all, p_all, r_all, profile))
    }
}

/// Safeguarded Newton on an increasing function with `f(lo) < 0 < f(hi)`.
fn increasing_root<F: Fn(f64) -> (f64, f64)>(f: F, mut lo: f64, mut hi: f64) -> f64 {
    let mut x = 0.5 * (lo + hi);
    for _ in 0..100 {
        let (v, d) = f(x);
        if v == 0.0 {
            return x;
        }
        if v < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        if hi - lo <= 1e-15 * hi.abs().max(1.0) {
            break;
        }
        let nx = x - v / d;
        x = if d > 0.0 && nx > lo && nx < hi { nx } else { 0.5 * (lo + hi) };
    }
    x
}

#[inline]
fn phi(r: f64) -> f64 {
    r.exp2() - 1.0
}

#[inline]
fn dphi(r: f64) -> f64 {
    LN2 * r.exp2()
}

/// `r phi'(r) - phi(r)`, increasing from 0.
#[inline]
fn psi(r: f64) -> f64 {
    r * dphi(r) - phi(r)
}

/// Prox of `beta m (2^{w/m} - 1)` over `0 <= w <= cap m`.
pub(crate) fn prox_pair(mh: f64, wh: f64, beta: f64, cap: f64) -> (f64, f64) {
    if wh <= beta * LN2 {
        return (mh.max(0.0), 0.0);
    }
    let ray = || {
        let m = ((mh + cap * wh - beta * phi(cap)) / (1.0 + cap * cap)).max(0.0);
        (m, cap * m)
    };
    let r0 = if mh >= 0.0 {
        0.0
    } else {
        let target = -mh / beta;
        if psi(cap) <= target {
            return ray();
        }
        increasing_root(
            |r| {
                let e = r.exp2();
                (r * LN2 * e - e + 1.0 - target, r * LN2 * LN2 * e)
            },
            0.0,
            cap,
        )
    };
    let g = |r: f64| r * mh + beta * r * psi(r) + beta * dphi(r) - wh;
    if g(r0) >= 0.0 {
        return (0.0, 0.0);
    }
    if g(cap) < 0.0 {
        return ray();
    }
    let r = increasing_root(
        |r| {
            let e = r.exp2();
            let d1 = LN2 * e;
            let ps = r * d1 - e + 1.0;
            let d2 = LN2 * d1;
            (r * mh + beta * r * ps + beta * d1 - wh, mh + beta * ps + beta * r * r * d2 + beta * d2)
        },
        r0,
        cap,
    );
    let m = (mh + beta * psi(r)).max(0.0);
    (m, r * m)
}

/// Prox of `beta m0 (2^{w/m0} - 1)` in `w` alone, `0 <= w <= cap m0`.
pub(crate) fn prox_flux(m0: f64, wh: f64, beta: f64, cap: f64) -> f64 {
    if m0 <= 0.0 || wh <= beta * LN2 {
        return 0.0;
    }
    let f = |r: f64| r * m0 + beta * dphi(r) - wh;
    if f(cap) <= 0.0 {
        return cap * m0;
    }
    let r = increasing_root(
        |r| {
            let d1 = dphi(r);
            (r * m0 + beta * d1 - wh, m0 + beta * LN2 * d1)
        },
        0.0,
        cap,
    );
    r * m0
}

/// Prox of `tau mu / 2 (sum x)^2` over `x >= 0`.
fn prox_penalty(xh: &mut [f64], tm: f64) {
    let upper: f64 = xh.iter().map(|v| v.max(0.0)).sum();
    if upper == 0.0 || tm == 0.0 {
        xh.iter_mut().for_each(|v| *v = v.max(0.0));
        return;
    }
    let excess = |u: f64| xh.iter().map(|v| (v - tm * u).max(0.0)).sum::<f64>() - u;
    let (mut lo, mut hi) = (0.0, upper);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if excess(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-16 * upper {
            break;
        }
    }
    let u = 0.5 * (lo + hi);
    xh.iter_mut().for_each(|v| *v = (*v - tm * u).max(0.0));
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn sq_norm(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum()
}

/// Solve the delay-constrained problem. The terminal condition is imposed by
/// a quadratic penalty on uncleared mass, raised until the cleared mass
/// reaches `solver.clear_target`.
pub fn pdhg_solve(cfg: &MfgConfig) -> Result<MfgSolution> {
    let prob = MfgProblem::new(cfg)?;
    let opts = &cfg.solver;
    let (nt, ns, nh) = (prob.nt, prob.ns, prob.nh);
    let n = prob.slice_len();
    let len = n * nt;
    let b = prob.rhs();
    let pre = Precond::new(nt, ns, prob.c);

    // Preconditioned operator norm by power iteration from a fixed start.
    let mut x = Primal {
        m: (0..len).map(|q| 1.0 + 0.5 * ((q as f64) * 0.37).sin()).collect(),
        w: (0..len).map(|q| 1.0 + 0.5 * ((q as f64) * 0.71).cos()).collect(),
    };
    let mut ky = vec![0.0; len];
    let mut gm = vec![0.0; len];
    let mut gw = vec![0.0; len];
    let mut lsq = 0.0;
    for _ in 0..100 {
        prob.apply_k(&x, &mut ky);
        pre.apply(&mut ky, nt, nh, ns);
        prob.apply_kt(&ky, &mut gm, &mut gw);
        lsq = (sq_norm(&gm) + sq_norm(&gw)).sqrt();
        if lsq == 0.0 {
            break;
        }
        x.m.iter_mut().zip(&gm).for_each(|(a, b)| *a = b / lsq);
        x.w.iter_mut().zip(&gw).for_each(|(a, b)| *a = b / lsq);
    }
    let base_step = opts.step_scale / lsq.sqrt().max(1e-12);
    let theta = opts.primal_weight;
    let step = base_step * theta;
    let dstep = base_step / theta;

    let h_min = prob.h.iter().cloned().fold(f64::INFINITY, f64::min);
    let s_top = prob.s[ns - 1];
    let energy_scale = cfg.t * prob.noise * phi(s_top / cfg.t) / h_min;
    let mut mu = 1e3 * energy_scale.max(prob.noise * cfg.t);

    let mut cur = Primal { m: vec![0.0; len], w: vec![0.0; len] };
    let mut bar = Primal { m: vec![0.0; len], w: vec![0.0; len] };
    let mut y = vec![0.0; len];
    let mut snap = (cur.m.clone(), cur.w.clone(), y.clone());
    let mut total_iters = 0usize;
    let mut stages = 0usize;
    let mut weights = vec![prob.noise; nt];
    let mut trace = Vec::new();
    let mut forward;
    loop {
        stages += 1;
        for it in 1..=opts.max_iterations {
            total_iters += 1;
            // dual ascent
            prob.apply_k(&bar, &mut ky);
            for q in 0..len {
                ky[q] -= b[q];
            }
            pre.apply(&mut ky, nt, nh, ns);
            for q in 0..len {
                y[q] += dstep * ky[q];
            }
            // interference weights from the current iterate
            if prob.gbar > 0.0 {
                for k in 0..nt {
                    let mk: &[f64] = if k == 0 { &prob.rho0 } else { &cur.m[(k - 1) * n..k * n] };
                    let load = prob.snr_load(mk, &cur.w[k * n..(k + 1) * n]);
                    let room = (1.0 - prob.gbar * load).max(0.05);
                    weights[k] = prob.noise / (room * room);
                }
            }
            // primal descent
            prob.apply_kt(&y, &mut gm, &mut gw);
            let slices: Vec<(Vec<f64>, Vec<f64>)> = (0..nt)
                .into_par_iter()
                .map(|k| {
                    let mut ms = vec![0.0; n];
                    let mut ws = vec![0.0; n];
                    for j in 0..nh {
                        let beta = step * prob.dtau * weights[k] / prob.h[j];
                        for i in 1..ns {
                            let q = j * ns + i;
                            let wh = cur.w[k * n + q] - step * gw[k * n + q];
                            if k == 0 {
                                ws[q] = prox_flux(prob.rho0[q], wh, beta, prob.rate_cap);
                            } else {
                                let qm = (k - 1) * n + q;
                                let (m, w) = prox_pair(cur.m[qm] - step * gm[qm], wh, beta, prob.rate_cap);
                                ms[q] = m;
                                ws[q] = w;
                            }
                        }
                        if k >= 1 {
                            let qm = (k - 1) * n + j * ns;
                            ms[j * ns] = (cur.m[qm] - step * gm[qm]).max(0.0);
                        }
                    }
                    (ms, ws)
                })
                .collect();
            let mut next = Primal { m: vec![0.0; len], w: vec![0.0; len] };
            for (k, (ms, ws)) in slices.into_iter().enumerate() {
                next.w[k * n..(k + 1) * n].copy_from_slice(&ws);
                if k >= 1 {
                    next.m[(k - 1) * n..k * n].copy_from_slice(&ms);
                }
            }
            // terminal slice: cleared cells free, the rest penalized jointly
            let base = (nt - 1) * n;
            let mut open = Vec::with_capacity(nh * (ns - 1));
            for j in 0..nh {
                let q0 = base + j * ns;
                next.m[q0] = (cur.m[q0] - step * gm[q0]).max(0.0);
                for i in 1..ns {
                    open.push(cur.m[q0 + i] - step * gm[q0 + i]);
                }
            }
            prox_penalty(&mut open, step * mu);
            for j in 0..nh {
                for i in 1..ns {
                    next.m[base + j * ns + i] = open[j * (ns - 1) + i - 1];
                }
            }
            for q in 0..len {
                bar.m[q] = 2.0 * next.m[q] - cur.m[q];
                bar.w[q] = 2.0 * next.w[q] - cur.w[q];
            }
            cur = next;
            if it % opts.check_every == 0 {
                let scale = sq_norm(&cur.m) + sq_norm(&cur.w);
                if !(scale + sq_norm(&y)).is_finite() {
                    return Err(Error::Numerical("primal-dual iterate diverged; reduce step_scale".into()));
                }
                let moved = sq_dist(&cur.m, &snap.0) + sq_dist(&cur.w, &snap.1);
                let change = (moved / scale.max(1e-300)).sqrt();
                snap = (cur.m.clone(), cur.w.clone(), y.clone());
                trace.push(TracePoint { iteration: total_iters, penalty: mu, change });
                if change < opts.tol {
                    break;
                }
            }
        }
        forward = prob.forward(&cur)?;
        let cleared: f64 = (0..nh).map(|j| forward.0[nt * n + j * ns]).sum();
        if cleared >= opts.clear_target || stages >= opts.max_stages {
            break;
        }
        mu *= opts.penalty_growth;
    }

    let (rho, p, rate, profile) = forward;
    prob.apply_k(&cur, &mut ky);
    let pde_residual = ky.iter().zip(&b).map(|(a, c)| (a - c).abs()).fold(0.0, f64::max);
    let cleared_mass: f64 = (0..nh).map(|j| rho[nt * n + j * ns]).sum();
    let total = prob.dtau * profile.iter().sum::<f64>();
    if !total.is_finite() {
        return Err(Error::Numerical("objective is not finite; reduce step_scale".into()));
    }
    Ok(MfgSolution {
        total_power: total,
        cleared_mass: cleared_mass.clamp(0.0, 1.0),
        pde_residual,
        iterations: total_iters,
        converged: cleared_mass >= opts.clear_target && pde_residual <= opts.residual_tol,
        stages,
        penalty: mu,
        power_profile: profile,
        trace,
        grid: MfgGrid {
            ns,
            nh,
            nt,
            ds: prob.ds,
            dh: prob.dh,
            dtau: prob.dtau,
            s: prob.s.clone(),
            h: prob.h.clone(),
            rho,
            p,
            rate,
            phi: y,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_pair(mh: f64, wh: f64, beta: f64, cap: f64) -> f64 {
        let obj = |m: f64, w: f64| {
            let c = if m > 0.0 { beta * m * phi(w / m) } else { 0.0 };
            c + 0.5 * (m - mh).powi(2) + 0.5 * (w - wh).powi(2)
        };
        let mut best = obj(0.0, 0.0);
        let top = mh.abs() + wh.abs() + 1.0;
        for a in 0..=400 {
            let m = top * a as f64 / 400.0;
            for b in 0..=200 {
                let w = cap * m * b as f64 / 200.0;
                best = best.min(obj(m, w));
            }
        }
        best
    }

    #[test]
    fn prox_pair_beats_grid() {
        let cases = [(0.5, 2.0, 0.3, 2.0), (-0.2, 1.5, 0.1, 3.0), (0.1, 5.0, 0.05, 1.0), (1.0, 0.1, 0.5, 2.0), (-1.0, 0.4, 0.2, 2.0)];
        for &(mh, wh, beta, cap) in &cases {
            let (m, w) = prox_pair(mh, wh, beta, cap);
            assert!(m >= 0.0 && w >= 0.0 && w <= cap * m + 1e-12);
            let c = if m > 0.0 { beta * m * phi(w / m) } else { 0.0 };
            let val = c + 0.5 * (m - mh).powi(2) + 0.5 * (w - wh).powi(2);
            assert!(val <= brute_pair(mh, wh, beta, cap) + 1e-9, "{mh} {wh}");
        }
    }

    #[test]
    fn penalty_prox_fixed_point() {
        let mut x = vec![0.5, -0.1, 0.3];
        prox_penalty(&mut x, 1.0);
        let u: f64 = x.iter().sum();
        assert!((x[0] - (0.5 - u)).abs() < 1e-12);
        assert_eq!(x[1], 0.0);
    }

    #[test]
    fn cosine_basis_is_orthonormal() {
        let (v, _) = cosine_basis(7);
        let id = v.transpose() * &v;
        assert!((id - DMatrix::identity(7, 7)).abs().max() < 1e-12);
    }
}
