//! Run configuration read from TOML. Every setting except the input paths
//! and the master seed has a default.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forest::{ForestSetting, MIN_NODE_GRID, MTRY_GRID, SAMPLE_FRAC_GRID};
use crate::kernel::{KernelId, SmootherConfig};
use crate::spread::{SpreadFamily, DEFAULT_CUTOFF};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed; every stage derives its own stream from it.
    pub seed: u64,
    pub input: InputConfig,
    #[serde(default)]
    pub stages: StageToggles,
    #[serde(default)]
    pub smoother: SmootherSection,
    #[serde(default)]
    pub decompose: DecomposeSection,
    #[serde(default)]
    pub forest: ForestSection,
    #[serde(default)]
    pub report: ReportSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputConfig {
    pub visits: PathBuf,
    pub ads: PathBuf,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
}

fn default_output() -> PathBuf {
    PathBuf::from("adlift-out")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StageToggles {
    /// Cross-validated bandwidth selection; when off, the fixed
    /// `smoother.kernel` and `smoother.bandwidth` are used.
    pub smoother: bool,
    pub decompose: bool,
    pub forest: bool,
    pub reports: bool,
}

impl Default for StageToggles {
    fn default() -> Self {
        Self {
            smoother: true,
            decompose: true,
            forest: true,
            reports: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SmootherSection {
    pub kernels: Vec<KernelId>,
    pub bandwidths: Vec<usize>,
    pub repeats: usize,
    /// Minutes after each ad left out of cross-validation.
    pub exclusion: f64,
    pub kernel: KernelId,
    pub bandwidth: usize,
}

impl Default for SmootherSection {
    fn default() -> Self {
        let fixed = SmootherConfig::default();
        Self {
            kernels: KernelId::ALL.to_vec(),
            bandwidths: (1..=60).collect(),
            repeats: 1000,
            exclusion: 30.0,
            kernel: fixed.kernel,
            bandwidth: fixed.bandwidth,
        }
    }
}

/// Which fitted family supplies the lifts used downstream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ThetaFamily {
    /// Lowest AIC among the fitted families.
    Auto,
    Exponential,
    Weibull,
    Gamma,
    Gengamma,
}

impl ThetaFamily {
    pub fn family(self) -> Option<SpreadFamily> {
        match self {
            ThetaFamily::Auto => None,
            ThetaFamily::Exponential => Some(SpreadFamily::Exponential),
            ThetaFamily::Weibull => Some(SpreadFamily::Weibull),
            ThetaFamily::Gamma => Some(SpreadFamily::Gamma),
            ThetaFamily::Gengamma => Some(SpreadFamily::GenGamma),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecomposeSection {
    pub families: Vec<SpreadFamily>,
    pub cutoff: u32,
    pub max_outer: usize,
    pub theta_family: ThetaFamily,
}

impl Default for DecomposeSection {
    fn default() -> Self {
        Self {
            families: vec![SpreadFamily::Exponential, SpreadFamily::Weibull, SpreadFamily::Gamma, SpreadFamily::GenGamma],
            cutoff: DEFAULT_CUTOFF,
            max_outer: 50,
            theta_family: ThetaFamily::Auto,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestSection {
    pub mtry: Vec<usize>,
    pub min_node: Vec<usize>,
    pub sample_frac: Vec<f64>,
    pub n_trees: usize,
    pub tuning_repeats: usize,
    pub final_repeats: usize,
    /// Keep ads with a fitted lift of exactly zero.
    pub include_zero: bool,
    pub pdp_points: usize,
}

impl Default for ForestSection {
    fn default() -> Self {
        Self {
            mtry: MTRY_GRID.to_vec(),
            min_node: MIN_NODE_GRID.to_vec(),
            sample_frac: SAMPLE_FRAC_GRID.to_vec(),
            n_trees: 500,
            tuning_repeats: 25,
            final_repeats: 20,
            include_zero: true,
            pdp_points: 50,
        }
    }
}

impl ForestSection {
    pub fn grid(&self) -> Vec<ForestSetting> {
        let mut grid = Vec::new();
        for &mtry in &self.mtry {
            for &min_node in &self.min_node {
                for &sample_frac in &self.sample_frac {
                    grid.push(ForestSetting {
                        mtry,
                        min_node,
                        sample_frac,
                        n_trees: self.n_trees,
                    });
                }
            }
        }
        grid
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportSection {
    pub before: u32,
    pub after: u32,
    pub quantiles: Vec<f64>,
    pub density_bandwidth: f64,
    pub bin_width: f64,
}

impl Default for ReportSection {
    fn default() -> Self {
        Self {
            before: 15,
            after: 45,
            quantiles: vec![5.0, 25.0, 50.0, 75.0, 95.0],
            density_bandwidth: 20.0,
            bin_width: 10.0,
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Reads a config file; relative paths inside it are resolved against
    /// the file's directory.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut config = Self::from_toml_str(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut config.input.visits, &mut config.input.ads, &mut config.input.output_dir] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        let s = &self.smoother;
        if self.stages.smoother && (s.kernels.is_empty() || s.bandwidths.is_empty() || s.repeats == 0) {
            return bad("smoother grid needs kernels, bandwidths and at least one repeat");
        }
        if s.bandwidth == 0 || s.bandwidths.contains(&0) {
            return bad("bandwidths must be positive");
        }
        if !(s.exclusion >= 0.0) {
            return bad("exclusion window must be non-negative");
        }
        let d = &self.decompose;
        if self.stages.decompose && d.families.is_empty() {
            return bad("at least one spread family is required");
        }
        if d.cutoff == 0 {
            return bad("cutoff must be at least one minute");
        }
        if let Some(family) = d.theta_family.family() {
            if self.stages.decompose && !d.families.contains(&family) {
                return bad("theta_family must be one of the fitted families");
            }
        }
        if self.stages.forest {
            if !self.stages.decompose {
                return bad("the forest stage needs the decompose stage");
            }
            let f = &self.forest;
            if f.mtry.is_empty() || f.min_node.is_empty() || f.sample_frac.is_empty() {
                return bad("forest grid has an empty dimension");
            }
            if f.tuning_repeats == 0 || f.final_repeats == 0 || f.n_trees == 0 {
                return bad("forest repeats and tree count must be positive");
            }
            for setting in f.grid() {
                setting.validate(6).map_err(|e| Error::Config(e.to_string()))?;
            }
        }
        let r = &self.report;
        if r.quantiles.iter().any(|q| !(0.0..=100.0).contains(q)) {
            return bad("quantiles are percentages in [0, 100]");
        }
        if !(r.density_bandwidth > 0.0 && r.bin_width > 0.0) {
            return bad("density bandwidth and bin width must be positive");
        }
        Ok(())
    }
}
