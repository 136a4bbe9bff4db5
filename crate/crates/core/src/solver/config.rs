use std::fmt;
use std::str::FromStr;

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

/// Which increments trigger a global (all-variable) pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gating {
    /// Every increment is global.
    None,
    /// Loop-closure gating: relative edges between non-consecutive poses.
    Lcg,
    /// Information-guided gating on the detrended log-determinant gain.
    Igg,
}

/// How the previous log-determinant is rescaled before differencing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Detrend {
    /// `Δη = η_t − (N_t / N_{t−1}) η_{t−1}`: the gain over what the previous
    /// per-variable information would give the grown state.
    PerVariable,
    /// `Δη = η_t − (N_{t−1} / N_t) η_{t−1}`.
    Shrink,
}

/// Initial value of a pose first reached by an increment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PoseInit {
    /// Composed from the known endpoint and the measurement.
    Compose,
    /// The identity pose.
    Origin,
}

/// What a non-selective variant does on an increment that fails its gate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GateFallback {
    /// Gauss-Newton restricted to the variables of the new edges.
    Local,
    /// No Gauss-Newton iteration.
    Skip,
}

/// When to recompute the fill-reducing ordering from scratch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReorderPolicy {
    /// Reorder when `nnz(R)` exceeds this multiple of the value right after
    /// the last full factorization...
    pub growth: f64,
    /// ...and `nnz(R)` exceeds this multiple of `nnz(triu H)`.
    pub min_fill_ratio: f64,
}

impl Default for ReorderPolicy {
    fn default() -> Self {
        Self {
            growth: 4.0,
            min_fill_ratio: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub tau_d: f64,
    pub tau_eta: f64,
    pub tau_gn: usize,
    pub gating: Gating,
    pub selective: bool,
    /// Use the static/dynamic block solve; otherwise solve the full system
    /// and keep only the active entries.
    pub partial_solve: bool,
    pub anchor_info: Matrix3<f64>,
    pub detrend: Detrend,
    pub reorder: ReorderPolicy,
    pub init: PoseInit,
    /// Ignored by selective variants, which always run the local pass.
    pub fallback: GateFallback,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tau_d: 1e-3,
            tau_eta: 1.0,
            tau_gn: 10,
            gating: Gating::Igg,
            selective: true,
            partial_solve: true,
            anchor_info: Matrix3::from_diagonal_element(1e6),
            detrend: Detrend::PerVariable,
            reorder: ReorderPolicy::default(),
            init: PoseInit::Origin,
            fallback: GateFallback::Skip,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.tau_d > 0.0) {
            return Err(format!("tau_d must be positive, got {}", self.tau_d));
        }
        if !(self.tau_eta >= 0.0) {
            return Err(format!("tau_eta must be non-negative, got {}", self.tau_eta));
        }
        if self.tau_gn < 1 {
            return Err("tau_gn must be at least 1".into());
        }
        Ok(())
    }
}

/// `(τ_d, τ_η)` tuned for the standard benchmark datasets, looked up by a
/// name such as `mit`, `MIT-P`, `FR079`, `csail`, `intel` or `FRH`.
pub fn dataset_thresholds(name: &str) -> Option<(f64, f64)> {
    let key: String = name.chars().filter(char::is_ascii_alphanumeric).collect::<String>().to_ascii_lowercase();
    match key.as_str() {
        "mit" | "mitp" => Some((1e-3, 1.0)),
        "fr079" => Some((1e-4, 0.6)),
        "csail" => Some((1e-5, 0.95)),
        "intel" => Some((1e-6, 0.72)),
        "frh" => Some((1e-7, 0.45)),
        _ => None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "GN1")]
    Gn1,
    #[serde(rename = "GNi")]
    Gni,
    #[serde(rename = "GNi-LCG")]
    GniLcg,
    #[serde(rename = "GNi-IGG")]
    GniIgg,
    #[serde(rename = "GNi-SPO")]
    GniSpo,
    #[serde(rename = "GNi-SPO-LCG")]
    GniSpoLcg,
    #[serde(rename = "GNi-SPO-IGG")]
    GniSpoIgg,
}

impl Variant {
    pub const ALL: [Variant; 7] = [
        Variant::Gn1,
        Variant::Gni,
        Variant::GniLcg,
        Variant::GniIgg,
        Variant::GniSpo,
        Variant::GniSpoLcg,
        Variant::GniSpoIgg,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Gn1 => "GN1",
            Variant::Gni => "GNi",
            Variant::GniLcg => "GNi-LCG",
            Variant::GniIgg => "GNi-IGG",
            Variant::GniSpo => "GNi-SPO",
            Variant::GniSpoLcg => "GNi-SPO-LCG",
            Variant::GniSpoIgg => "GNi-SPO-IGG",
        }
    }

    /// Applies the variant's gating/selectivity/iteration settings to `base`.
    pub fn configure(self, base: &SolverConfig) -> SolverConfig {
        let (gating, selective, tau_gn) = match self {
            Variant::Gn1 => (Gating::None, false, 1),
            Variant::Gni => (Gating::None, false, base.tau_gn),
            Variant::GniLcg => (Gating::Lcg, false, base.tau_gn),
            Variant::GniIgg => (Gating::Igg, false, base.tau_gn),
            Variant::GniSpo => (Gating::None, true, base.tau_gn),
            Variant::GniSpoLcg => (Gating::Lcg, true, base.tau_gn),
            Variant::GniSpoIgg => (Gating::Igg, true, base.tau_gn),
        };
        SolverConfig {
            gating,
            selective,
            tau_gn,
            ..base.clone()
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                let names: Vec<&str> = Variant::ALL.iter().map(|v| v.name()).collect();
                format!("unknown variant '{s}', expected one of {}", names.join(", "))
            })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn threshold_presets() {
        assert_eq!(dataset_thresholds("MIT-P"), Some((1e-3, 1.0)));
        assert_eq!(dataset_thresholds("intel"), Some((1e-6, 0.72)));
        assert_eq!(dataset_thresholds("FRH"), Some((1e-7, 0.45)));
        assert_eq!(dataset_thresholds("manhattan"), None);
    }

    #[test]
    fn variant_names_roundtrip() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
        }
        assert!("GNi-XYZ".parse::<Variant>().is_err());
    }

    #[test]
    fn variant_matrix() {
        let base = SolverConfig::default();
        let c = Variant::Gn1.configure(&base);
        assert_eq!((c.gating, c.selective, c.tau_gn), (Gating::None, false, 1));
        let c = Variant::GniIgg.configure(&base);
        assert_eq!((c.gating, c.selective, c.tau_gn), (Gating::Igg, false, 10));
        let c = Variant::GniSpoLcg.configure(&base);
        assert_eq!((c.gating, c.selective, c.tau_gn), (Gating::Lcg, true, 10));
        let c = Variant::GniSpo.configure(&base);
        assert_eq!((c.gating, c.selective), (Gating::None, true));
    }

    #[test]
    fn config_validation() {
        assert!(SolverConfig::default().validate().is_ok());
        let bad = SolverConfig {
            tau_d: 0.0,
            ..SolverConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = SolverConfig {
            tau_gn: 0,
            ..SolverConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
