//! Experiment configuration.
//!
//! Sectioned `key = value` text:
//!
//! ```toml
//! [run]
//! family = "ergodic"        # ergodic | mbl | sdki | lbit_z | lbit_x
//! seed = 7
//! realizations = 20
//! out_dir = "out"           # optional
//! threads = 1               # optional
//!
//! [geometry]
//! l_r = 1
//! l_e = [2, 4, 6]
//! l_s = [8]
//!
//! [time]
//! kind = "linear"           # linear: start, stop, step
//! start = 0                 # log: start, stop, per_decade
//! stop = 10                 # list: times
//! step = 1
//! id = 0                    # optional; enters the child seeds
//!
//! [state]                   # optional
//! policy = "haar"           # plus | haar | explicit (+ amplitudes)
//!
//! [measurement]             # optional
//! basis = "z"               # z | x | tilted (+ theta, phi)
//!
//! [model]                   # optional
//! gamma = 0.15              # MBL kicked Ising
//! xi = 0.5                  # l-bit
//! max_order = 4             # l-bit
//!
//! [output]                  # optional
//! delta_ghs = true
//!
//! [pop]                     # optional
//! bins = 64
//! z_r = [0, 1]              # default: every R bit-string
//! max_value = 4.0           # default: 5
//!
//! [fit]                     # optional
//! threshold = 1e-9          # absolute; default depends on the family
//! relative_threshold = 0.1
//! ```
//!
//! Unknown keys are rejected.

use std::path::{Path, PathBuf};

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::circuits::{RegimePreset, MBL_DEFAULT_GAMMA};
use crate::error::{Error, Result};
use crate::lbit::DEFAULT_XI;
use crate::state::{MeasurementBasis, ProductStateSpec, SiteBasis, MAX_SITES};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Ergodic,
    Mbl,
    Sdki,
    LbitZ,
    LbitX,
}

impl Family {
    pub fn name(&self) -> &'static str {
        match self {
            Family::Ergodic => "ergodic",
            Family::Mbl => "mbl",
            Family::Sdki => "sdki",
            Family::LbitZ => "lbit_z",
            Family::LbitX => "lbit_x",
        }
    }

    pub fn is_floquet(&self) -> bool {
        matches!(self, Family::Ergodic | Family::Mbl | Family::Sdki)
    }

    /// Families whose onset threshold is relative to the plateau.
    pub fn is_localized(&self) -> bool {
        matches!(self, Family::Mbl | Family::LbitZ | Family::LbitX)
    }
}

impl std::str::FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ergodic" => Ok(Family::Ergodic),
            "mbl" => Ok(Family::Mbl),
            "sdki" => Ok(Family::Sdki),
            "lbit_z" | "lbit-z" => Ok(Family::LbitZ),
            "lbit_x" | "lbit-x" => Ok(Family::LbitX),
            other => Err(Error::Config(format!("unknown family {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub family: Family,
    #[serde(default)]
    pub seed: u64,
    pub realizations: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Geometry {
    pub l_r: usize,
    pub l_e: Vec<usize>,
    pub l_s: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeKind {
    Linear,
    Log,
    List,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeSection {
    pub kind: TimeKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_decade: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub times: Option<Vec<f64>>,
    #[serde(default)]
    pub id: u64,
}

impl TimeSection {
    pub fn linear(start: f64, stop: f64, step: f64) -> Self {
        Self {
            kind: TimeKind::Linear,
            start: Some(start),
            stop: Some(stop),
            step: Some(step),
            per_decade: None,
            times: None,
            id: 0,
        }
    }

    pub fn log(start: f64, stop: f64, per_decade: usize) -> Self {
        Self {
            kind: TimeKind::Log,
            start: Some(start),
            stop: Some(stop),
            step: None,
            per_decade: Some(per_decade),
            times: None,
            id: 0,
        }
    }

    pub fn list(times: Vec<f64>) -> Self {
        Self {
            kind: TimeKind::List,
            start: None,
            stop: None,
            step: None,
            per_decade: None,
            times: Some(times),
            id: 0,
        }
    }

    /// Sorted, de-duplicated grid points.
    pub fn points(&self) -> Result<Vec<f64>> {
        let need = |v: Option<f64>, name: &str| {
            v.ok_or_else(|| Error::Config(format!("[time] {name} is required for this kind")))
        };
        let mut pts = match self.kind {
            TimeKind::Linear => {
                let (a, b, h) = (need(self.start, "start")?, need(self.stop, "stop")?, need(self.step, "step")?);
                if !(h > 0.0) || b < a {
                    return Err(Error::Config(format!("linear grid {a}..{b} step {h}")));
                }
                let n = ((b - a) / h + 1e-9).floor() as usize;
                (0..=n).map(|k| a + h * k as f64).collect::<Vec<_>>()
            }
            TimeKind::Log => {
                let (a, b) = (need(self.start, "start")?, need(self.stop, "stop")?);
                let per = self
                    .per_decade
                    .ok_or_else(|| Error::Config("[time] per_decade is required for log grids".into()))?;
                if !(a > 0.0) || b < a || per == 0 {
                    return Err(Error::Config(format!("log grid {a}..{b} with {per} per decade")));
                }
                let n = ((b / a).log10() * per as f64 + 1e-9).floor() as usize;
                (0..=n).map(|k| a * 10f64.powf(k as f64 / per as f64)).collect()
            }
            TimeKind::List => self
                .times
                .clone()
                .ok_or_else(|| Error::Config("[time] times is required for list grids".into()))?,
        };
        if pts.iter().any(|t| !t.is_finite() || *t < 0.0) {
            return Err(Error::Config("times must be finite and non-negative".into()));
        }
        pts.sort_by(f64::total_cmp);
        pts.dedup();
        if pts.is_empty() {
            return Err(Error::Config("empty time grid".into()));
        }
        Ok(pts)
    }

    /// Grid points as whole Floquet periods (rounded, de-duplicated).
    pub fn periods(&self) -> Result<Vec<usize>> {
        let mut p: Vec<usize> = self.points()?.iter().map(|t| t.round() as usize).collect();
        p.dedup();
        Ok(p)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatePolicy {
    Plus,
    #[default]
    Haar,
    Explicit,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateSection {
    #[serde(default)]
    pub policy: StatePolicy,
    /// Per site `[re_up, im_up, re_down, im_down]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub amplitudes: Option<Vec<[f64; 4]>>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisKind {
    #[default]
    Z,
    X,
    Tilted,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasurementSection {
    #[serde(default)]
    pub basis: BasisKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phi: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub xi: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_order: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default)]
    pub delta_ghs: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PopSection {
    #[serde(default = "default_bins")]
    pub bins: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z_r: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_value: Option<f64>,
}

fn default_bins() -> usize {
    64
}

impl Default for PopSection {
    fn default() -> Self {
        Self { bins: default_bins(), z_r: None, max_value: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    #[serde(default = "default_relative_threshold")]
    pub relative_threshold: f64,
}

fn default_relative_threshold() -> f64 {
    0.1
}

impl Default for FitSection {
    fn default() -> Self {
        Self { threshold: None, relative_threshold: default_relative_threshold() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub run: RunSection,
    pub geometry: Geometry,
    pub time: TimeSection,
    #[serde(default)]
    pub state: StateSection,
    #[serde(default)]
    pub measurement: MeasurementSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default)]
    pub pop: PopSection,
    #[serde(default)]
    pub fit: FitSection,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Small default sweep for each family.
    pub fn preset(family: Family) -> Self {
        let (geometry, time, state) = match family {
            Family::Ergodic | Family::Mbl => (
                Geometry { l_r: 1, l_e: vec![2, 4, 6], l_s: vec![8] },
                TimeSection::linear(0.0, 20.0, 1.0),
                StatePolicy::Haar,
            ),
            Family::Sdki => (
                Geometry { l_r: 1, l_e: vec![1, 3], l_s: vec![10] },
                TimeSection::linear(0.0, 8.0, 1.0),
                StatePolicy::Plus,
            ),
            Family::LbitZ | Family::LbitX => (
                Geometry { l_r: 1, l_e: vec![2, 3, 4], l_s: vec![6] },
                TimeSection::log(0.1, 1e8, 16),
                StatePolicy::Haar,
            ),
        };
        let basis = if family == Family::LbitX { BasisKind::X } else { BasisKind::Z };
        Self {
            run: RunSection { family, seed: 0, realizations: 20, out_dir: None, threads: None },
            geometry,
            time,
            state: StateSection { policy: state, amplitudes: None },
            measurement: MeasurementSection { basis, theta: None, phi: None },
            model: ModelSection::default(),
            output: OutputSection::default(),
            pop: PopSection::default(),
            fit: FitSection::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let g = &self.geometry;
        if self.run.realizations == 0 {
            return Err(Error::Config("realizations must be at least 1".into()));
        }
        if g.l_r == 0 || g.l_e.is_empty() || g.l_s.is_empty() || g.l_s.contains(&0) {
            return Err(Error::Config("geometry needs l_r >= 1, a non-empty l_e list and l_s >= 1".into()));
        }
        for &l_e in &g.l_e {
            for &l_s in &g.l_s {
                let n = g.l_r + l_e + l_s;
                if n > MAX_SITES {
                    return Err(Error::Config(format!("L = {n} exceeds the cap of {MAX_SITES}")));
                }
                if let (StatePolicy::Explicit, Some(a)) = (self.state.policy, &self.state.amplitudes) {
                    if a.len() != n {
                        return Err(Error::Config(format!("explicit state has {} sites, chain has {n}", a.len())));
                    }
                }
            }
        }
        if self.state.policy == StatePolicy::Explicit {
            let a = self
                .state
                .amplitudes
                .as_ref()
                .ok_or_else(|| Error::Config("explicit state needs amplitudes".into()))?;
            spec_from_rows(a).map_err(|e| Error::Config(e.to_string()))?;
        }
        let pts = self.time.points()?;
        if self.run.family.is_floquet() && pts.iter().any(|t| t.fract() != 0.0) && self.time.kind != TimeKind::Log {
            return Err(Error::Config("Floquet families need whole periods".into()));
        }
        if self.measurement.basis == BasisKind::Tilted
            && (self.measurement.theta.is_none() || self.measurement.phi.is_none())
        {
            return Err(Error::Config("tilted basis needs theta and phi".into()));
        }
        if let Some(xi) = self.model.xi {
            if !(xi > 0.0) {
                return Err(Error::Config(format!("xi = {xi}")));
            }
        }
        if let Some(gamma) = self.model.gamma {
            if !(0.0..=1.0).contains(&gamma) {
                return Err(Error::Config(format!("gamma = {gamma} outside [0, 1]")));
            }
        }
        if self.pop.bins == 0 {
            return Err(Error::Config("pop.bins must be positive".into()));
        }
        if self.run.threads == Some(0) {
            return Err(Error::Config("threads must be positive".into()));
        }
        Ok(())
    }

    pub fn preset_params(&self) -> Option<RegimePreset> {
        match self.run.family {
            Family::Ergodic => Some(RegimePreset::Ergodic),
            Family::Mbl => Some(RegimePreset::Mbl { gamma: self.model.gamma.unwrap_or(MBL_DEFAULT_GAMMA) }),
            Family::Sdki => Some(RegimePreset::self_dual()),
            _ => None,
        }
    }

    pub fn xi(&self) -> f64 {
        self.model.xi.unwrap_or(DEFAULT_XI)
    }

    pub fn measurement_basis(&self, l_s: usize) -> MeasurementBasis {
        let site = match (self.run.family, self.measurement.basis) {
            (Family::LbitZ, _) => SiteBasis::Z,
            (Family::LbitX, _) => SiteBasis::X,
            (_, BasisKind::Z) => SiteBasis::Z,
            (_, BasisKind::X) => SiteBasis::X,
            (_, BasisKind::Tilted) => SiteBasis::Tilted {
                theta: self.measurement.theta.unwrap_or(0.0),
                phi: self.measurement.phi.unwrap_or(0.0),
            },
        };
        MeasurementBasis::uniform(site, l_s)
    }

    /// Onset threshold for the family when none is configured.
    pub fn absolute_threshold(&self) -> Option<f64> {
        match self.fit.threshold {
            Some(t) => Some(t),
            None if self.run.family.is_localized() => None,
            None => Some(ERGODIC_THRESHOLD),
        }
    }
}

/// Default onset threshold for ergodic runs: ten times the numerical zero.
pub const ERGODIC_THRESHOLD: f64 = 1e-9;

pub fn spec_from_rows(rows: &[[f64; 4]]) -> Result<ProductStateSpec> {
    ProductStateSpec::new(
        rows.iter().map(|r| [C64::new(r[0], r[1]), C64::new(r[2], r[3])]).collect(),
    )
}
