//! Time-division comparison on a handful of explicit links.

use mfnet_core::wtm::mapel_solve;
use mfnet_core::{Error, MeanFieldWtm, Result};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use mfnet_core::rng::stream_rng;

/// Channel gains of the four links in the TDM comparison.
pub const TDM_GAINS: [f64; 4] = [2.1458, 1.4073, 0.9691, 0.4911];

/// Explicit link set. `cross[b][a]` is the gain from transmitter `b` into receiver `a`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkSet {
    pub gains: Vec<f64>,
    pub cross: Vec<Vec<f64>>,
    pub noise: f64,
    pub p_max: f64,
}

impl LinkSet {
    /// Links at distance `d0` with fading `h_i`, cross gains at unit distance
    /// with unit mean fading.
    pub fn from_fading(h: &[f64], d0: f64, alpha: f64, noise: f64, p_max: f64) -> Result<Self> {
        let f = mfnet_core::channel::path_loss(d0, alpha)?;
        let cross_gain = mfnet_core::channel::path_loss(1.0, alpha)?;
        let n = h.len();
        let cross = (0..n).map(|b| (0..n).map(|a| if a == b { 0.0 } else { cross_gain }).collect()).collect();
        Ok(LinkSet { gains: h.iter().map(|v| v * f).collect(), cross, noise, p_max })
    }

    pub fn len(&self) -> usize {
        self.gains.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gains.is_empty()
    }

    /// Problem restricted to `active` with equal weights.
    fn restricted(&self, active: &[usize]) -> MeanFieldWtm {
        let w = 1.0 / active.len() as f64;
        MeanFieldWtm {
            omega: vec![w; active.len()],
            g: active.iter().map(|&i| self.gains[i]).collect(),
            gtilde: active.iter().map(|&b| active.iter().map(|&a| self.cross[b][a]).collect()).collect(),
            noise: self.noise,
            p_max: self.p_max,
            r_min: 0.0,
            p_ave: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TdmScheme {
    pub name: String,
    pub partition: Vec<Vec<usize>>,
    pub slot_fractions: Vec<f64>,
}

impl TdmScheme {
    pub fn equal(name: &str, partition: Vec<Vec<usize>>) -> Self {
        let k = partition.len();
        TdmScheme { name: name.to_string(), partition, slot_fractions: vec![1.0 / k as f64; k] }
    }

    /// Each link dropped into one of `slots` slots at random, no slot left empty.
    pub fn random(n: usize, slots: usize, seed: u64) -> Self {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut stream_rng(seed, 0x7d3));
        let mut partition = vec![Vec::new(); slots];
        for (k, i) in idx.into_iter().enumerate() {
            partition[k % slots].push(i);
        }
        for g in &mut partition {
            g.sort_unstable();
        }
        Self::equal("random", partition)
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if self.partition.len() != self.slot_fractions.len() {
            return Err(Error::Config(format!("{}: one slot fraction per group required", self.name)));
        }
        let mut seen = vec![false; n];
        for g in &self.partition {
            if g.is_empty() {
                return Err(Error::Config(format!("{}: empty group", self.name)));
            }
            for &i in g {
                if i >= n || seen[i] {
                    return Err(Error::Config(format!("{}: groups must be disjoint links below {n}", self.name)));
                }
                seen[i] = true;
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::Config(format!("{}: groups must cover every link", self.name)));
        }
        let total: f64 = self.slot_fractions.iter().sum();
        if (total - 1.0).abs() > 1e-12 || self.slot_fractions.iter().any(|f| *f < 0.0) {
            return Err(Error::Config(format!("{}: slot fractions must sum to 1", self.name)));
        }
        Ok(())
    }
}

/// The four schemes of the comparison, links numbered from zero.
pub fn standard_schemes(seed: u64) -> Vec<TdmScheme> {
    vec![
        TdmScheme::equal("none", vec![vec![0, 1, 2, 3]]),
        TdmScheme::random(4, 2, seed),
        TdmScheme::equal("pair_14_23", vec![vec![0, 3], vec![1, 2]]),
        TdmScheme::equal("pair_12_34", vec![vec![0, 1], vec![2, 3]]),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TdmOutcome {
    pub scheme: String,
    pub rate: f64,
    /// Some slot had no feasible power allocation.
    pub flagged: bool,
}

/// Average rate per scheme: each slot solved on its own, then time-averaged.
pub fn tdm_compare(links: &LinkSet, schemes: &[TdmScheme]) -> Result<Vec<TdmOutcome>> {
    let mut out = Vec::with_capacity(schemes.len());
    for s in schemes {
        s.validate(links.len())?;
        let mut rate = 0.0;
        let mut flagged = false;
        for (group, frac) in s.partition.iter().zip(&s.slot_fractions) {
            match mapel_solve(&links.restricted(group), 0.01) {
                // per-link mean over all links, not just the active ones
                Ok(sol) => rate += frac * sol.rate * group.len() as f64 / links.len() as f64,
                Err(e) if e.is_infeasible() => flagged = true,
                Err(e) => return Err(e),
            }
        }
        out.push(TdmOutcome { scheme: s.name.clone(), rate, flagged });
    }
    Ok(out)
}
