//! Scenario files: one TOML table per scenario, unknown keys rejected.

use std::path::{Path, PathBuf};

use degenctrl_core::{CoefficientProfile, ControlRegion, Form};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Solve,
    Observe,
    Control,
    Carleman,
    Hardy,
    Caccioppoli,
    Regional,
    Semilinear,
    Suite,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Solve => "solve",
            Task::Observe => "observe",
            Task::Control => "control",
            Task::Carleman => "carleman",
            Task::Hardy => "hardy",
            Task::Caccioppoli => "caccioppoli",
            Task::Regional => "regional",
            Task::Semilinear => "semilinear",
            Task::Suite => "suite",
        }
    }

    /// Tasks that draw random data and therefore need a seed.
    pub fn samples_randomly(self) -> bool {
        matches!(self, Task::Carleman | Task::Caccioppoli)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub task: Task,
    pub seed: Option<u64>,
    /// Output directory; relative paths resolve against the config file.
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub form: FormSpec,
    /// Control region as one or two `[lo, hi]` intervals.
    pub omega: Option<Vec<[f64; 2]>>,
    pub profile: Option<ProfileSpec>,
    #[serde(default)]
    pub grid: GridSpec,
    #[serde(default)]
    pub data: DataSpec,
    #[serde(default)]
    pub control: ControlSpec,
    #[serde(default)]
    pub observe: ObserveSpec,
    #[serde(default)]
    pub weights: WeightSpec,
    pub hardy: Option<HardySpec>,
    pub regional: Option<RegionalSpec>,
    pub semilinear: Option<SemilinearSpec>,
    pub suite: Option<SuiteSpec>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FormSpec {
    #[default]
    Divergence,
    NonDivergence,
}

impl From<FormSpec> for Form {
    fn from(f: FormSpec) -> Self {
        match f {
            FormSpec::Divergence => Form::Divergence,
            FormSpec::NonDivergence => Form::NonDivergence,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProfileSpec {
    /// `a(x) = |x - x0|^alpha`.
    Prototype {
        #[serde(alias = "k")]
        alpha: f64,
        #[serde(default = "half")]
        x0: f64,
        /// Accept `alpha >= 2` for the failure studies.
        #[serde(default)]
        beyond_range: bool,
    },
    Constant {
        value: f64,
    },
    /// Two-column CSV `x,a`; relative paths resolve against the config file.
    Samples {
        file: PathBuf,
        x0: Option<f64>,
        k: f64,
    },
}

fn half() -> f64 {
    0.5
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub cells: usize,
    pub steps: usize,
    pub horizon: f64,
    pub grading: f64,
    pub theta: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self { cells: 100, steps: 100, horizon: 0.3, grading: 1.0, theta: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialData {
    #[default]
    Sine,
    Zero,
    /// Random smooth data from the scenario seed.
    Random,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSpec {
    pub u0: InitialData,
    pub v_t: InitialData,
    pub modes: usize,
    /// Constant reaction coefficient `c`.
    pub reaction: Option<f64>,
    /// Number of random final data for the inequality tasks.
    pub samples: usize,
}

impl Default for DataSpec {
    fn default() -> Self {
        Self { u0: InitialData::Sine, v_t: InitialData::Random, modes: 6, reaction: None, samples: 1 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControlSpec {
    pub epsilon: Option<f64>,
    pub cg_tol: f64,
    pub max_iters: usize,
    /// Pass threshold on `||u(T)|| / ||u0||`.
    pub target: f64,
}

impl Default for ControlSpec {
    fn default() -> Self {
        Self { epsilon: None, cg_tol: 1e-10, max_iters: 5000, target: 1e-2 }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodSpec {
    #[default]
    Auto,
    Dense,
    Power,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObserveSpec {
    pub method: MethodSpec,
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for ObserveSpec {
    fn default() -> Self {
        Self { method: MethodSpec::Auto, tol: 1e-9, max_iters: 500 }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariantSpec {
    /// Degenerate weight for degenerate profiles, `a1` otherwise.
    #[default]
    Auto,
    A1,
    A2,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WeightSpec {
    pub c1: f64,
    pub margin: f64,
    /// `R` of the degenerate weight (non-divergence) or `r` of the
    /// non-degenerate weights.
    pub r: f64,
    pub variant: VariantSpec,
    /// Inner interval for the Caccioppoli check.
    pub omega_inner: Option<[f64; 2]>,
    pub s_min: Option<f64>,
    pub s_max: Option<f64>,
}

impl Default for WeightSpec {
    fn default() -> Self {
        Self { c1: 1.0, margin: 0.1, r: 1.0, variant: VariantSpec::Auto, omega_inner: None, s_min: None, s_max: None }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HardySpec {
    /// `p(x) = |x - x0|^exponent`.
    pub exponent: f64,
    #[serde(default = "half")]
    pub x0: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionalSpec {
    pub r_outer: f64,
    pub r_inner: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SemilinearSpec {
    /// `f(u) = amplitude * sin(u)`.
    pub amplitude: f64,
    #[serde(default = "picard_tol")]
    pub tol: f64,
    #[serde(default = "picard_iters")]
    pub max_iters: usize,
}

fn picard_tol() -> f64 {
    1e-8
}

fn picard_iters() -> usize {
    20
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteSpec {
    /// Directory of scenario files, relative to this file.
    pub dir: PathBuf,
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(path.to_path_buf(), e))?;
        Self::parse(&text)
    }

    /// Checks every field that can be checked without running the task.
    pub fn validate(&self, base: &Path) -> Result<(), CliError> {
        let cfg = |m: String| Err(CliError::Config(m));
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return cfg(format!("invalid scenario name {:?}", self.name));
        }
        if (self.task.samples_randomly() || self.data.u0 == InitialData::Random) && self.seed.is_none() {
            return cfg(format!("task {} samples random data and needs a seed", self.task.name()));
        }
        let g = &self.grid;
        if g.cells < degenctrl_core::mesh::MIN_CELLS || g.steps < 2 || !(g.horizon > 0.0) {
            return cfg("grid needs cells >= 8, steps >= 2 and a positive horizon".into());
        }
        if !(0.5..=1.0).contains(&g.theta) {
            return cfg(format!("theta = {} outside [0.5, 1]", g.theta));
        }
        if self.data.samples == 0 || self.data.modes == 0 {
            return cfg("data.samples and data.modes must be positive".into());
        }
        self.region()?;
        match self.task {
            Task::Hardy => {
                let h = self.hardy.as_ref().ok_or_else(|| CliError::Config("task hardy needs [hardy]".into()))?;
                if !(h.exponent > 0.0) || !(0.0 < h.x0 && h.x0 < 1.0) {
                    return cfg("hardy needs exponent > 0 and x0 in (0, 1)".into());
                }
            }
            Task::Suite => {
                if self.suite.is_none() {
                    return cfg("task suite needs [suite]".into());
                }
            }
            _ => {
                self.build_profile(base)?;
            }
        }
        match self.task {
            Task::Regional if self.regional.is_none() => cfg("task regional needs [regional]".into()),
            Task::Semilinear if self.semilinear.is_none() => cfg("task semilinear needs [semilinear]".into()),
            Task::Caccioppoli if self.weights.omega_inner.is_none() => {
                cfg("task caccioppoli needs weights.omega_inner".into())
            }
            Task::Observe | Task::Control | Task::Regional | Task::Semilinear | Task::Caccioppoli
                if self.omega.is_none() =>
            {
                cfg(format!("task {} needs omega", self.task.name()))
            }
            _ => Ok(()),
        }
    }

    pub fn region(&self) -> Result<ControlRegion, CliError> {
        match &self.omega {
            None => Ok(ControlRegion::full()),
            Some(v) => Ok(ControlRegion::new(v.iter().map(|i| (i[0], i[1])).collect())?),
        }
    }

    pub fn build_profile(&self, base: &Path) -> Result<CoefficientProfile, CliError> {
        let spec = self.profile.as_ref().ok_or_else(|| CliError::Config("missing [profile]".into()))?;
        let n = (self.grid.cells / 4).max(11);
        Ok(match spec {
            ProfileSpec::Prototype { alpha, x0, beyond_range: false } => CoefficientProfile::prototype(*alpha, *x0, n)?,
            ProfileSpec::Prototype { alpha, x0, beyond_range: true } => {
                CoefficientProfile::prototype_beyond_range(*alpha, *x0, n)?
            }
            ProfileSpec::Constant { value } => CoefficientProfile::constant(*value, n)?,
            ProfileSpec::Samples { file, x0, k } => {
                let path = base.join(file);
                let text = std::fs::read_to_string(&path).map_err(|e| CliError::Io(path.clone(), e))?;
                CoefficientProfile::from_csv(&text, *x0, *k)?
            }
        })
    }

    pub fn output_dir(&self, base: &Path) -> PathBuf {
        match &self.output {
            Some(p) => base.join(p),
            None => base.join("out").join(&self.name),
        }
    }
}
