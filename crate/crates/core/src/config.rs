//! Scenario parameters shared by every solver.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fading level: linear gain `h` with probability `beta`.
pub type FadingLevel = (f64, f64);

/// All parameters of a network scenario. Powers in milliwatts, distances in
/// meters, rates in bits/s/Hz.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub lambda: f64,
    pub area_side: f64,
    pub d0: f64,
    #[serde(rename = "Nm")]
    pub nm: usize,
    #[serde(rename = "NmI")]
    pub nm_i: usize,
    pub alpha: f64,
    pub noise: f64,
    pub fading_levels: Vec<FadingLevel>,
    pub p_max: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_ave: Option<f64>,
    pub r_min: f64,
    #[serde(rename = "Na")]
    pub na: usize,
    #[serde(rename = "Nc")]
    pub nc: usize,
}

/// One failed invariant, tagged with the offending field.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub field: String,
    pub message: String,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

/// Four-level quantized Rayleigh fading used in the reference scenario.
pub const REFERENCE_FADING: [FadingLevel; 4] =
    [(4.6045, 0.25), (1.9805, 0.25), (0.9392, 0.25), (0.2412, 0.25)];

impl NetworkConfig {
    /// Reference scenario: n = 10 mW, alpha = 3, four fading levels, Nm = 2, NmI = 10.
    pub fn reference() -> Self {
        NetworkConfig {
            lambda: 1.0,
            area_side: 50.0,
            d0: 1.0,
            nm: 2,
            nm_i: 10,
            alpha: 3.0,
            noise: 10.0,
            fading_levels: REFERENCE_FADING.to_vec(),
            p_max: 0.1,
            p_ave: None,
            r_min: 0.0,
            na: 0,
            nc: 1,
        }
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json_str(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Every invariant violation, in field order.
    pub fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let mut bad = |field: &str, message: String| {
            out.push(Violation { field: field.to_string(), message })
        };
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            bad("lambda", format!("intensity must be finite and >= 0, got {}", self.lambda));
        }
        if !(self.area_side > 0.0 && self.area_side.is_finite()) {
            bad("area_side", format!("must be positive, got {}", self.area_side));
        }
        if !(self.d0 > 0.0 && self.d0.is_finite()) {
            bad("d0", format!("must be positive, got {}", self.d0));
        }
        if self.nm < 1 {
            bad("Nm", "must be at least 1".into());
        }
        if self.nm_i < self.nm {
            bad("NmI", format!("must be >= Nm ({}), got {}", self.nm, self.nm_i));
        }
        if !(self.alpha > 2.0) {
            bad(
                "alpha",
                format!("path-loss exponent must exceed 2 so that mean interference is finite, got {}", self.alpha),
            );
        }
        if !(self.noise > 0.0 && self.noise.is_finite()) {
            bad("noise", format!("must be positive, got {}", self.noise));
        }
        if self.fading_levels.is_empty() {
            bad("fading_levels", "at least one level required".into());
        } else {
            let total: f64 = self.fading_levels.iter().map(|l| l.1).sum();
            if (total - 1.0).abs() > 1e-12 {
                bad("fading_levels", format!("probabilities sum to {total}, expected 1"));
            }
            if self.fading_levels.iter().any(|l| !(l.0 > 0.0) || !(l.1 >= 0.0)) {
                bad("fading_levels", "gains must be > 0 and probabilities >= 0".into());
            }
            if self.fading_levels.windows(2).any(|w| w[0].0 < w[1].0) {
                bad("fading_levels", "gains must be sorted in descending order".into());
            }
        }
        if !(self.p_max > 0.0) {
            bad("p_max", format!("must be positive, got {}", self.p_max));
        }
        if let Some(pa) = self.p_ave {
            if !(pa > 0.0) {
                bad("p_ave", format!("must be positive when set, got {pa}"));
            }
        }
        if !(self.r_min >= 0.0 && self.r_min.is_finite()) {
            bad("r_min", format!("must be finite and >= 0, got {}", self.r_min));
        }
        if self.nc < 1 {
            bad("Nc", "must be at least 1".into());
        }
        if self.na > self.fading_levels.len() * self.nm_i {
            bad("Na", "cannot exceed the interference-gain support size".into());
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            let msg: Vec<String> = v.iter().map(|x| x.to_string()).collect();
            Err(Error::Config(msg.join("; ")))
        }
    }

    /// Mean fading gain.
    pub fn mean_fading(&self) -> f64 {
        self.fading_levels.iter().map(|(h, b)| h * b).sum()
    }

    /// Area of the simulation square.
    pub fn area(&self) -> f64 {
        self.area_side * self.area_side
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_is_valid() {
        assert!(NetworkConfig::reference().violations().is_empty());
    }

    #[test]
    fn json_roundtrip_keeps_field_names() {
        let cfg = NetworkConfig::reference();
        let s = cfg.to_json().unwrap();
        for key in ["\"Nm\"", "\"NmI\"", "\"Na\"", "\"Nc\"", "\"fading_levels\"", "\"p_max\""] {
            assert!(s.contains(key), "missing {key}");
        }
        assert_eq!(NetworkConfig::from_json_str(&s).unwrap(), cfg);
    }

    #[test]
    fn alpha_two_is_flagged() {
        let mut cfg = NetworkConfig::reference();
        cfg.alpha = 2.0;
        let v = cfg.violations();
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].field, "alpha");
    }

    #[test]
    fn beta_sum_flagged() {
        let mut cfg = NetworkConfig::reference();
        cfg.fading_levels[3].1 = 0.15;
        assert!(cfg.violations().iter().any(|v| v.field == "fading_levels"));
    }
}
