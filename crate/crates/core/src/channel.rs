//! Node placement, distance rings and discrete channel-gain laws.

use std::io::Write;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::config::NetworkConfig;
use crate::error::{Error, Result};
use crate::rng::stream_rng;

/// Ring probabilities `(k^2 - (k-1)^2) / n^2` for `k = 1..=n`.
pub fn ring_pmf(n: usize) -> Vec<f64> {
    let n2 = (n * n) as f64;
    (1..=n).map(|k| (2 * k - 1) as f64 / n2).collect()
}

/// Distance law of a destination drawn uniformly on the disk of radius `Nm * d0`,
/// with distances rounded up to the ring index.
pub fn distance_pmf(nm: usize) -> Result<Vec<f64>> {
    if nm < 1 {
        return Err(Error::Config("Nm must be at least 1".into()));
    }
    Ok(ring_pmf(nm))
}

/// Bounded path loss `(1 + d)^-alpha`.
pub fn path_loss(d: f64, alpha: f64) -> Result<f64> {
    if !(d >= 0.0) {
        return Err(Error::Domain(format!("distance must be >= 0, got {d}")));
    }
    Ok(bpm(d, alpha))
}

#[inline]
pub(crate) fn bpm(d: f64, alpha: f64) -> f64 {
    (1.0 + d).powf(-alpha)
}

/// Ring index of a distance: `ceil(d / d0)`, at least 1.
#[inline]
pub fn ring_index(d: f64, d0: f64) -> usize {
    let k = (d / d0 - 1e-9).ceil();
    if k < 1.0 {
        1
    } else {
        k as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GainKind {
    Direct,
    Interference,
}

/// Discrete gain law sorted by descending gain.
///
/// `fading[m]` and `ring[m]` record which fading level (0-based) and distance
/// ring (1-based) produced entry `m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainDistribution {
    pub gains: Vec<f64>,
    pub probs: Vec<f64>,
    pub kind: GainKind,
    pub fading: Vec<usize>,
    pub ring: Vec<usize>,
}

impl GainDistribution {
    pub fn len(&self) -> usize {
        self.gains.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gains.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.gains.iter().zip(&self.probs).map(|(g, p)| g * p).sum()
    }

    /// Sorted position of the entry built from `fading` level and `ring`.
    pub fn index_of(&self, fading: usize, ring: usize) -> Option<usize> {
        (0..self.len()).find(|&m| self.fading[m] == fading && self.ring[m] == ring)
    }

    /// Lookup table `[fading][ring - 1] -> sorted index`.
    pub fn index_table(&self, n_fading: usize, n_rings: usize) -> Vec<Vec<usize>> {
        let mut t = vec![vec![usize::MAX; n_rings]; n_fading];
        for m in 0..self.len() {
            t[self.fading[m]][self.ring[m] - 1] = m;
        }
        t
    }
}

fn build_distribution(cfg: &NetworkConfig, rings: usize, kind: GainKind) -> GainDistribution {
    let gamma = ring_pmf(rings);
    let mut entries = Vec::with_capacity(cfg.fading_levels.len() * rings);
    for (k, &(h, beta)) in cfg.fading_levels.iter().enumerate() {
        for (l, g) in gamma.iter().enumerate() {
            let gain = h * bpm((l + 1) as f64 * cfg.d0, cfg.alpha);
            entries.push((gain, beta * g, k, l + 1));
        }
    }
    // Stable: equal gains keep construction order after the probability key.
    entries.sort_by(|a, b| b.0.total_cmp(&a.0).then(b.1.total_cmp(&a.1)));
    GainDistribution {
        gains: entries.iter().map(|e| e.0).collect(),
        probs: entries.iter().map(|e| e.1).collect(),
        kind,
        fading: entries.iter().map(|e| e.2).collect(),
        ring: entries.iter().map(|e| e.3).collect(),
    }
}

/// Direct-link gain law over fading levels and rings `1..=Nm`.
pub fn direct_gain_distribution(cfg: &NetworkConfig) -> Result<GainDistribution> {
    cfg.validate()?;
    Ok(build_distribution(cfg, cfg.nm, GainKind::Direct))
}

/// Interference gain law over fading levels and rings `1..=NmI`.
pub fn interference_gain_distribution(cfg: &NetworkConfig) -> Result<GainDistribution> {
    cfg.validate()?;
    Ok(build_distribution(cfg, cfg.nm_i, GainKind::Interference))
}

/// Equal-probability quantization of Rayleigh fading (unit scale) into `n`
/// levels. Each level is the squared conditional mean amplitude of its
/// quantile interval, sorted descending.
pub fn rayleigh_levels(n: usize) -> Result<Vec<(f64, f64)>> {
    if n == 0 {
        return Err(Error::Config("need at least one fading level".into()));
    }
    use statrs::function::erf::erf;
    let edge = |q: f64| -> f64 {
        if q >= 1.0 {
            f64::INFINITY
        } else {
            (-2.0 * (1.0 - q).ln()).sqrt()
        }
    };
    // integral of x * (x e^{-x^2/2}) from 0 to x
    let partial = |x: f64| -> f64 {
        if x.is_infinite() {
            (std::f64::consts::PI / 2.0).sqrt()
        } else {
            -x * (-x * x / 2.0).exp() + (std::f64::consts::PI / 2.0).sqrt() * erf(x / 2f64.sqrt())
        }
    };
    let mut levels: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let a = edge(i as f64 / n as f64);
            let b = edge((i + 1) as f64 / n as f64);
            let mean = (partial(b) - partial(a)) * n as f64;
            (mean * mean, 1.0 / n as f64)
        })
        .collect();
    levels.reverse();
    Ok(levels)
}

/// Node positions on the square `[0, side)^2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSet {
    pub positions: Vec<[f64; 2]>,
    pub side: f64,
    pub seed: u64,
}

impl NodeSet {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["x", "y"])?;
        for p in &self.positions {
            wr.write_record([p[0].to_string(), p[1].to_string()])?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Poisson point process of intensity `lambda` on a square of side `side`.
pub fn sample_ppp_in<R: Rng>(lambda: f64, side: f64, rng: &mut R) -> Result<Vec<[f64; 2]>> {
    if !(side > 0.0) || !(lambda >= 0.0) {
        return Err(Error::Config(format!(
            "PPP needs side > 0 and lambda >= 0 (side={side}, lambda={lambda})"
        )));
    }
    let mean = lambda * side * side;
    if mean == 0.0 {
        return Ok(Vec::new());
    }
    let count = Poisson::new(mean)
        .map_err(|e| Error::Config(format!("bad Poisson mean {mean}: {e}")))?
        .sample(rng) as usize;
    Ok((0..count)
        .map(|_| [rng.random::<f64>() * side, rng.random::<f64>() * side])
        .collect())
}

/// Sample the node set for `cfg` deterministically from `seed`.
pub fn sample_ppp(cfg: &NetworkConfig, seed: u64) -> Result<NodeSet> {
    if !(cfg.area_side > 0.0) || !(cfg.lambda >= 0.0) {
        return Err(Error::Config("area and lambda must be positive".into()));
    }
    let mut rng = stream_rng(seed, 0);
    Ok(NodeSet {
        positions: sample_ppp_in(cfg.lambda, cfg.area_side, &mut rng)?,
        side: cfg.area_side,
        seed,
    })
}

/// Uniform point on the disk of `radius` around `center`, wrapped on the torus.
pub fn uniform_in_disk(rng: &mut ChaCha8Rng, center: [f64; 2], radius: f64, side: f64) -> [f64; 2] {
    let r = radius * rng.random::<f64>().sqrt();
    let t = 2.0 * std::f64::consts::PI * rng.random::<f64>();
    [wrap(center[0] + r * t.cos(), side), wrap(center[1] + r * t.sin(), side)]
}

#[inline]
pub fn wrap(x: f64, side: f64) -> f64 {
    let y = x.rem_euclid(side);
    if y >= side {
        0.0
    } else {
        y
    }
}

/// Shortest displacement component on a circle of circumference `side`.
#[inline]
fn torus_delta(a: f64, b: f64, side: f64) -> f64 {
    let d = (a - b).abs() % side;
    d.min(side - d)
}

/// Euclidean distance with toroidal wrap.
#[inline]
pub fn torus_distance(a: [f64; 2], b: [f64; 2], side: f64) -> f64 {
    let dx = torus_delta(a[0], b[0], side);
    let dy = torus_delta(a[1], b[1], side);
    (dx * dx + dy * dy).sqrt()
}

/// Uniform bucket grid for neighbour queries on the torus.
#[derive(Debug, Clone)]
pub struct BucketIndex {
    side: f64,
    cells: usize,
    cell: f64,
    buckets: Vec<Vec<u32>>,
    points: Vec<[f64; 2]>,
}

impl BucketIndex {
    /// Index `points`, aiming at roughly `per_cell` points per bucket.
    pub fn new(points: &[[f64; 2]], side: f64, per_cell: f64) -> Self {
        let target = (points.len() as f64 / per_cell.max(1.0)).sqrt().floor() as usize;
        let cells = target.clamp(1, 1024);
        let cell = side / cells as f64;
        let mut buckets = vec![Vec::new(); cells * cells];
        for (i, p) in points.iter().enumerate() {
            let (cx, cy) = Self::cell_of(p, cell, cells);
            buckets[cy * cells + cx].push(i as u32);
        }
        BucketIndex { side, cells, cell, buckets, points: points.to_vec() }
    }

    fn cell_of(p: &[f64; 2], cell: f64, cells: usize) -> (usize, usize) {
        let cx = ((p[0] / cell) as usize).min(cells - 1);
        let cy = ((p[1] / cell) as usize).min(cells - 1);
        (cx, cy)
    }

    pub fn points(&self) -> &[[f64; 2]] {
        &self.points
    }

    /// Nearest indexed point to `q` on the torus; ties go to the lowest index.
    pub fn nearest(&self, q: [f64; 2]) -> Option<(usize, f64)> {
        if self.points.is_empty() {
            return None;
        }
        let (cx, cy) = Self::cell_of(&[wrap(q[0], self.side), wrap(q[1], self.side)], self.cell, self.cells);
        let mut best: Option<(usize, f64)> = None;
        let max_ring = self.cells / 2 + 1;
        for ring in 0..=max_ring {
            // Any point outside the searched square is at least this far.
            if let Some((_, d)) = best {
                if d < (ring as f64 - 1.0) * self.cell {
                    break;
                }
            }
            self.for_ring(cx, cy, ring, |i| {
                let d = torus_distance(q, self.points[i], self.side);
                let better = match best {
                    None => true,
                    Some((bi, bd)) => d < bd || (d == bd && i < bi),
                };
                if better {
                    best = Some((i, d));
                }
            });
        }
        best
    }

    /// Visit every indexed point within `radius` of `q` (torus metric).
    pub fn for_each_within<F: FnMut(usize, f64)>(&self, q: [f64; 2], radius: f64, mut f: F) {
        if self.points.is_empty() {
            return;
        }
        let reach = ((radius / self.cell).ceil() as usize + 1).min(self.cells / 2 + 1);
        let (cx, cy) = Self::cell_of(&[wrap(q[0], self.side), wrap(q[1], self.side)], self.cell, self.cells);
        let span = (2 * reach + 1).min(self.cells);
        let start = |c: usize| (c + self.cells * 4 - reach) % self.cells;
        let (sx, sy) = (start(cx), start(cy));
        for dy in 0..span {
            let y = (sy + dy) % self.cells;
            for dx in 0..span {
                let x = (sx + dx) % self.cells;
                for &i in &self.buckets[y * self.cells + x] {
                    let d = torus_distance(q, self.points[i as usize], self.side);
                    if d <= radius {
                        f(i as usize, d);
                    }
                }
            }
        }
    }

    fn for_ring<F: FnMut(usize)>(&self, cx: usize, cy: usize, ring: usize, mut f: F) {
        let n = self.cells as isize;
        let r = ring as isize;
        if 2 * r + 1 > n {
            // The ring wraps onto already visited cells; finish with a full scan.
            if 2 * (r - 1) < n {
                let mut seen = vec![false; self.cells * self.cells];
                let rr = r - 1;
                for dy in -rr..=rr {
                    for dx in -rr..=rr {
                        let x = (cx as isize + dx).rem_euclid(n) as usize;
                        let y = (cy as isize + dy).rem_euclid(n) as usize;
                        seen[y * self.cells + x] = true;
                    }
                }
                for (c, b) in self.buckets.iter().enumerate() {
                    if !seen[c] {
                        for &i in b {
                            f(i as usize);
                        }
                    }
                }
            }
            return;
        }
        let mut visit = |dx: isize, dy: isize| {
            let x = (cx as isize + dx).rem_euclid(n) as usize;
            let y = (cy as isize + dy).rem_euclid(n) as usize;
            for &i in &self.buckets[y * self.cells + x] {
                f(i as usize);
            }
        };
        if r == 0 {
            visit(0, 0);
            return;
        }
        for dx in -r..=r {
            visit(dx, -r);
            visit(dx, r);
        }
        for dy in (-r + 1)..r {
            visit(-r, dy);
            visit(r, dy);
        }
    }
}
