//! JSON experiment configuration. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interpolant::{default_reference_size, Density, TargetFunction, MAX_REFERENCE_SIZE};
use crate::kernels::{Kernel, TaylorKernelSpec};
use crate::orthopoly::CoordinateDistribution;

use super::seed::{cell_seed, stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Descent,
    Spectral,
    Smallball,
    NtkCheck,
    RateCurve,
}

impl ExperimentKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ExperimentKind::Descent => "descent",
            ExperimentKind::Spectral => "spectral",
            ExperimentKind::Smallball => "smallball",
            ExperimentKind::NtkCheck => "ntk_check",
            ExperimentKind::RateCurve => "rate_curve",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SampleSizes {
    One(usize),
    Many(Vec<usize>),
}

impl SampleSizes {
    pub fn values(&self) -> Vec<usize> {
        match self {
            SampleSizes::One(n) => vec![*n],
            SampleSizes::Many(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DimGrid {
    List(Vec<usize>),
    LogSpaced(LogSpaced),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogSpaced {
    pub min: usize,
    pub max: usize,
    pub points: usize,
}

impl DimGrid {
    /// Log-spaced grids are rounded to integers; duplicates after rounding are dropped.
    pub fn values(&self) -> Vec<usize> {
        match self {
            DimGrid::List(v) => v.clone(),
            DimGrid::LogSpaced(LogSpaced { min, max, points }) => log_spaced(*min, *max, *points),
        }
    }
}

pub const MAX_GRID_POINTS: usize = 100_000;

pub fn log_spaced(min: usize, max: usize, points: usize) -> Vec<usize> {
    if points == 0 || min == 0 || max < min {
        return Vec::new();
    }
    if points == 1 {
        return vec![min];
    }
    let (lo, hi) = ((min as f64).ln(), (max as f64).ln());
    let mut out: Vec<usize> = (0..points)
        .map(|k| (lo + (hi - lo) * k as f64 / (points - 1) as f64).exp().round() as usize)
        .collect();
    out.dedup();
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", try_from = "KernelRepr")]
pub enum KernelConfig {
    Exp,
    /// Finite Taylor series `sum_i c_i t^i`.
    Polynomial { coefficients: Vec<f64> },
    Ntk,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct KernelRepr {
    kind: String,
    #[serde(default)]
    coefficients: Option<Vec<f64>>,
}

impl TryFrom<KernelRepr> for KernelConfig {
    type Error = String;

    fn try_from(r: KernelRepr) -> std::result::Result<Self, String> {
        match (r.kind.as_str(), r.coefficients) {
            ("exp", None) => Ok(KernelConfig::Exp),
            ("ntk", None) => Ok(KernelConfig::Ntk),
            ("polynomial", Some(coefficients)) => Ok(KernelConfig::Polynomial { coefficients }),
            ("polynomial", None) => Err("polynomial kernel needs 'coefficients'".into()),
            ("exp" | "ntk", Some(_)) => Err(format!("'coefficients' is not a parameter of {}", r.kind)),
            (other, _) => Err(format!("unknown kernel '{other}', expected exp, polynomial or ntk")),
        }
    }
}

impl KernelConfig {
    pub fn build(&self, dim: usize) -> Result<Kernel> {
        Ok(match self {
            KernelConfig::Exp => Kernel::exp(),
            KernelConfig::Polynomial { coefficients } => Kernel::Taylor(
                TaylorKernelSpec::polynomial(coefficients.clone(), "polynomial")
                    .map_err(|e| Error::Config(e.to_string()))?,
            ),
            KernelConfig::Ntk => Kernel::Ntk { input_dim: dim },
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DensityConfig {
    /// `rho(z) = z[index]`, 0-based.
    Coordinate { index: usize },
    Constant { value: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", try_from = "TargetRepr")]
pub enum TargetConfig {
    None,
    Representable {
        density: DensityConfig,
        /// Defaults to `10 n`, capped at 100000.
        #[serde(default)]
        reference_size: Option<usize>,
    },
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TargetRepr {
    kind: String,
    #[serde(default)]
    density: Option<DensityConfig>,
    #[serde(default)]
    reference_size: Option<usize>,
}

impl TryFrom<TargetRepr> for TargetConfig {
    type Error = String;

    fn try_from(r: TargetRepr) -> std::result::Result<Self, String> {
        match (r.kind.as_str(), r.density) {
            ("none", None) if r.reference_size.is_none() => Ok(TargetConfig::None),
            ("none", _) => Err("target 'none' takes no parameters".into()),
            ("representable", Some(density)) => Ok(TargetConfig::Representable {
                density,
                reference_size: r.reference_size,
            }),
            ("representable", None) => Err("representable target needs 'density'".into()),
            (other, _) => Err(format!("unknown target '{other}', expected none or representable")),
        }
    }
}

impl TargetConfig {
    pub fn is_none(&self) -> bool {
        matches!(self, TargetConfig::None)
    }

    /// The frozen reference sample depends on `(master_seed, d)` only, so
    /// every trial at a given dimension sees the same `f_*`.
    pub fn build(
        &self,
        kernel: &Kernel,
        dist: CoordinateDistribution,
        n: usize,
        dim: usize,
        master_seed: u64,
    ) -> Result<TargetFunction> {
        match self {
            TargetConfig::None => Ok(TargetFunction::Zero),
            TargetConfig::Representable { density, reference_size } => {
                let density = match *density {
                    DensityConfig::Coordinate { index } => Density::Coordinate(index),
                    DensityConfig::Constant { value } => Density::Constant(value),
                };
                let m = reference_size.unwrap_or_else(|| default_reference_size(n));
                let seed = cell_seed(master_seed, &[stream::TARGET, dim as u64]);
                TargetFunction::representable(kernel.clone(), density, dist, dim, m, seed)
            }
        }
    }
}

fn default_trials() -> usize {
    1
}
fn default_m_test() -> usize {
    2000
}
fn default_distribution() -> CoordinateDistribution {
    CoordinateDistribution::StandardNormal
}
fn default_kernel() -> KernelConfig {
    KernelConfig::Exp
}
fn default_target() -> TargetConfig {
    TargetConfig::None
}
fn default_widths() -> Vec<usize> {
    vec![1_000, 10_000, 100_000]
}
fn default_pairs() -> usize {
    100
}
fn default_weight_seeds() -> usize {
    20
}
fn default_u_count() -> usize {
    100
}
fn default_epsilon() -> f64 {
    0.01
}
fn default_mc_samples() -> usize {
    10_000
}
fn default_l4_samples() -> usize {
    100_000
}
fn default_alpha_points() -> usize {
    999
}
fn default_iota_max() -> u32 {
    3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    #[serde(default)]
    pub n: Option<SampleSizes>,
    /// `n = n_per_feature * C(d + iota, iota)` per cell; spectral only.
    #[serde(default)]
    pub n_per_feature: Option<usize>,
    #[serde(default)]
    pub d_grid: Option<DimGrid>,
    #[serde(default = "default_kernel")]
    pub kernel: KernelConfig,
    #[serde(default = "default_distribution")]
    pub distribution: CoordinateDistribution,
    #[serde(default)]
    pub iota: Option<u32>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default = "default_m_test")]
    pub m_test: usize,
    #[serde(default = "default_target")]
    pub target: TargetConfig,
    #[serde(default)]
    pub noise_sd: f64,
    #[serde(default)]
    pub out_csv: Option<PathBuf>,
    #[serde(default)]
    pub out_svg: Option<PathBuf>,
    #[serde(default)]
    pub master_seed: u64,
    /// Peak/valley overlay depth for the plot.
    #[serde(default = "default_iota_max")]
    pub iota_max: u32,
    /// Fill the `wall_ms` column. Off by default so output stays byte-stable.
    #[serde(default)]
    pub record_timing: bool,
    #[serde(default = "default_widths")]
    pub widths: Vec<usize>,
    #[serde(default = "default_pairs")]
    pub pairs: usize,
    #[serde(default = "default_weight_seeds")]
    pub weight_seeds: usize,
    #[serde(default = "default_u_count")]
    pub u_count: usize,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_mc_samples")]
    pub mc_samples: usize,
    #[serde(default = "default_l4_samples")]
    pub l4_samples: usize,
    #[serde(default = "default_alpha_points")]
    pub alpha_points: usize,
}

impl ExperimentConfig {
    pub fn from_json_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text)
    }

    pub fn sample_sizes(&self) -> Vec<usize> {
        self.n.as_ref().map(SampleSizes::values).unwrap_or_default()
    }

    pub fn dims(&self) -> Vec<usize> {
        self.d_grid.as_ref().map(DimGrid::values).unwrap_or_default()
    }

    fn require<T>(&self, v: Option<T>, field: &str) -> Result<T> {
        v.ok_or_else(|| Error::Config(format!("{} needs '{field}'", self.experiment.as_str())))
    }

    pub fn iota_or_err(&self) -> Result<u32> {
        self.require(self.iota, "iota")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.trials == 0 {
            return bad("trials must be >= 1".into());
        }
        if let Some(n) = &self.n {
            if n.values().is_empty() || n.values().contains(&0) {
                return bad("n must be a positive integer or a non-empty list of them".into());
            }
        }
        if let Some(DimGrid::LogSpaced(LogSpaced { min, max, points })) = &self.d_grid {
            if *min == 0 || max < min || *points == 0 || *points > MAX_GRID_POINTS {
                return bad(format!(
                    "log-spaced d_grid needs 1 <= min <= max and 1 <= points <= {MAX_GRID_POINTS}, got {min}..{max} x {points}"
                ));
            }
        }
        if self.dims().contains(&0) {
            return bad("d_grid values must be positive".into());
        }
        if self.m_test == 0 {
            return bad("m_test must be >= 1".into());
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return bad(format!("noise_sd must be finite and >= 0, got {}", self.noise_sd));
        }
        self.distribution.validate().map_err(|e| Error::Config(e.to_string()))?;
        if let KernelConfig::Polynomial { .. } = self.kernel {
            self.kernel.build(1)?;
        }
        if let TargetConfig::Representable { reference_size: Some(m), .. } = self.target {
            if m == 0 || m > MAX_REFERENCE_SIZE {
                return bad(format!("reference_size must be in 1..={MAX_REFERENCE_SIZE}"));
            }
        }
        if let TargetConfig::Representable {
            density: DensityConfig::Coordinate { index },
            ..
        } = self.target
        {
            if let Some(d) = self.dims().iter().find(|&&d| index >= d) {
                return bad(format!("density coordinate {index} out of range for d = {d}"));
            }
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return bad(format!("epsilon must lie in (0, 1), got {}", self.epsilon));
        }
        if self.iota_max == 0 {
            return bad("iota_max must be >= 1".into());
        }
        match self.experiment {
            ExperimentKind::Descent => {
                self.require(self.n.as_ref(), "n")?;
                self.require(self.d_grid.as_ref(), "d_grid")?;
            }
            ExperimentKind::Spectral => {
                self.require(self.d_grid.as_ref(), "d_grid")?;
                self.iota_or_err()?;
                if self.n.is_none() == self.n_per_feature.is_none() {
                    return bad("spectral needs exactly one of 'n' and 'n_per_feature'".into());
                }
            }
            ExperimentKind::Smallball => {
                self.require(self.d_grid.as_ref(), "d_grid")?;
                self.iota_or_err()?;
                if matches!(self.kernel, KernelConfig::Ntk) {
                    return bad("smallball needs a Taylor kernel".into());
                }
                if self.mc_samples == 0 || self.l4_samples == 0 {
                    return bad("mc_samples and l4_samples must be >= 1".into());
                }
            }
            ExperimentKind::NtkCheck => {
                self.require(self.d_grid.as_ref(), "d_grid")?;
                if self.widths.is_empty() || self.widths.contains(&0) {
                    return bad("widths must be a non-empty list of positive integers".into());
                }
                if self.weight_seeds == 0 {
                    return bad("weight_seeds must be >= 1".into());
                }
            }
            ExperimentKind::RateCurve => {
                if self.alpha_points == 0 || self.alpha_points > MAX_GRID_POINTS {
                    return bad(format!("alpha_points must be in 1..={MAX_GRID_POINTS}"));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_descent_config() {
        let cfg = ExperimentConfig::from_json_str(
            r#"{"experiment":"descent","n":2000,"d_grid":{"min":8,"max":256,"points":25}}"#,
        )
        .unwrap();
        assert_eq!(cfg.sample_sizes(), vec![2000]);
        let d = cfg.dims();
        assert_eq!(d.len(), 25);
        assert_eq!((d[0], d[24]), (8, 256));
        assert_eq!(cfg.m_test, 2000);
        assert_eq!(cfg.kernel, KernelConfig::Exp);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ExperimentConfig::from_json_str(
            r#"{"experiment":"descent","n":10,"d_grid":{"min":1,"max":9,"points":100000000000}}"#
        )
        .is_err());
        let err = ExperimentConfig::from_json_str(r#"{"experiment":"rate_curve","alpah_points":5}"#).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        assert_eq!(err.exit_code(), 2);
        for nested in [
            r#""kernel":{"kind":"exp","x":1}"#,
            r#""kernel":{"kind":"exp","coefficients":[1]}"#,
            r#""kernel":{"kind":"gauss"}"#,
            r#""distribution":{"kind":"standard_normal","dof":3}"#,
            r#""distribution":{"kind":"student_t"}"#,
            r#""target":{"kind":"none","density":{"kind":"constant","value":1}}"#,
            r#""target":{"kind":"representable","density":{"kind":"constant","value":1,"index":0}}"#,
            r#""d_grid":{"min":3,"max":9,"points":3,"base":2}"#,
        ] {
            let text = format!(r#"{{"experiment":"descent","n":10,"d_grid":[3],{nested}}}"#);
            assert!(ExperimentConfig::from_json_str(&text).is_err(), "{nested}");
        }
    }

    #[test]
    fn nested_types_parse() {
        let cfg = ExperimentConfig::from_json_str(
            r#"{"experiment":"descent","n":[100,200],"d_grid":[5,10],
                "kernel":{"kind":"polynomial","coefficients":[1,0.5]},
                "distribution":{"kind":"student_t","dof":10},
                "target":{"kind":"representable","density":{"kind":"coordinate","index":0}},
                "noise_sd":0.5,"master_seed":9}"#,
        )
        .unwrap();
        assert_eq!(cfg.distribution, CoordinateDistribution::StudentT { dof: 10.0 });
        assert!(!cfg.target.is_none());
    }

    #[test]
    fn validation_errors() {
        for bad in [
            r#"{"experiment":"descent","d_grid":[5]}"#,
            r#"{"experiment":"descent","n":10,"d_grid":[0]}"#,
            r#"{"experiment":"descent","n":10,"d_grid":[5],"trials":0}"#,
            r#"{"experiment":"spectral","d_grid":[5],"n":10}"#,
            r#"{"experiment":"spectral","d_grid":[5],"iota":1,"n":10,"n_per_feature":4}"#,
            r#"{"experiment":"smallball","d_grid":[5],"iota":1,"kernel":{"kind":"ntk"}}"#,
            r#"{"experiment":"descent","n":10,"d_grid":[5],"distribution":{"kind":"student_t","dof":2}}"#,
            r#"{"experiment":"descent","n":10,"d_grid":[5],"kernel":{"kind":"polynomial","coefficients":[-1]}}"#,
            r#"{"experiment":"descent","n":10,"d_grid":[2],"target":{"kind":"representable","density":{"kind":"coordinate","index":3}}}"#,
            r#"{"experiment":"ntk_check","d_grid":[5],"widths":[]}"#,
            r#"[1,2]"#,
            "",
        ] {
            assert!(ExperimentConfig::from_json_str(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn log_spacing() {
        assert_eq!(log_spaced(10, 1000, 3), vec![10, 100, 1000]);
        assert_eq!(log_spaced(1, 2, 10), vec![1, 2]);
        assert!(log_spaced(0, 2, 3).is_empty());
    }
}
