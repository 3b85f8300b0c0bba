//! Run configuration: a single JSON document with a strict schema.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{BoundaryMode, InitStyle};
use crate::model::ModelDescriptor;
use crate::verify::{SuiteConfig, VelocitySettings};
use crate::wave::{LatticeRun, MethodChoice, WaveOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    ClassicalFk,
    CubicBistable,
    CustomTabulated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelBlock {
    pub kind: ModelKind,
    #[serde(rename = "L", default, skip_serializing_if = "Option::is_none")]
    pub l: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b_param: Option<f64>,
    pub m0: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shifts: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LatticeBlock {
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(rename = "T")]
    pub t: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    pub boundary: BoundaryMode,
    pub init_style: InitStyle,
}

impl Default for LatticeBlock {
    fn default() -> Self {
        Self {
            m: 400,
            t: 200.0,
            dt: None,
            boundary: BoundaryMode::FixedFront,
            init_style: InitStyle::Step,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WaveBlock {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub z_min: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub z_max: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub h: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub phase_level: Option<f64>,
    pub tol: f64,
    pub max_iter: usize,
    pub tau_max: f64,
    pub method: MethodChoice,
}

impl Default for WaveBlock {
    fn default() -> Self {
        let w = WaveOptions::default();
        Self {
            z_min: None,
            z_max: None,
            h: None,
            phase_level: None,
            tol: w.tol,
            max_iter: w.max_iter,
            tau_max: w.tau_max,
            method: w.method,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepBlock {
    pub param: String,
    pub start: f64,
    pub stop: f64,
    pub step: f64,
    #[serde(default = "one")]
    pub workers: usize,
    #[serde(default)]
    pub reverse: bool,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifyBlock {
    pub comparison_trials: usize,
    pub comparison_t: f64,
    pub velocity_tol: f64,
    pub profile_tol: f64,
    pub reflection_tol: f64,
    pub first_equation_tol: f64,
    pub hull_m: Vec<usize>,
    pub hull_t: f64,
}

impl Default for VerifyBlock {
    fn default() -> Self {
        let s = SuiteConfig::default();
        Self {
            comparison_trials: s.comparison_trials,
            comparison_t: s.comparison_t,
            velocity_tol: s.velocity_tol,
            profile_tol: s.profile_tol,
            reflection_tol: s.reflection_tol,
            first_equation_tol: s.first_equation_tol,
            hull_m: s.velocity.hull_m,
            hull_t: s.velocity.hull_t,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelBlock,
    #[serde(default)]
    pub lattice: LatticeBlock,
    #[serde(default)]
    pub wave: WaveBlock,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepBlock>,
    #[serde(default)]
    pub verify: VerifyBlock,
    #[serde(default)]
    pub seed: u64,
}

fn finite(path: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::config(path, format!("must be finite, got {v}")))
    }
}

fn positive(path: &str, v: f64) -> Result<()> {
    finite(path, v)?;
    if v > 0.0 {
        Ok(())
    } else {
        Err(Error::config(path, format!("must be > 0, got {v}")))
    }
}

fn opt_finite(path: &str, v: Option<f64>) -> Result<()> {
    v.map_or(Ok(()), |x| finite(path, x))
}

impl RunConfig {
    pub fn from_json_str(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::config(path, e.into_inner().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json_str(&text)
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        let m = &self.model;
        positive("model.m0", m.m0)?;
        opt_finite("model.L", m.l)?;
        opt_finite("model.d", m.d)?;
        opt_finite("model.kappa", m.kappa)?;
        opt_finite("model.b_param", m.b_param)?;
        if let Some(s) = &m.shifts {
            for (i, r) in s.iter().enumerate() {
                finite(&format!("model.shifts[{i}]"), *r)?;
            }
        }
        let l = &self.lattice;
        if l.m < 8 {
            return Err(Error::config(
                "lattice.M",
                format!("needs at least 8 sites, got {}", l.m),
            ));
        }
        positive("lattice.T", l.t)?;
        if let Some(dt) = l.dt {
            positive("lattice.dt", dt)?;
        }
        let w = &self.wave;
        opt_finite("wave.z_min", w.z_min)?;
        opt_finite("wave.z_max", w.z_max)?;
        opt_finite("wave.phase_level", w.phase_level)?;
        if let Some(h) = w.h {
            positive("wave.h", h)?;
        }
        if let (Some(a), Some(b)) = (w.z_min, w.z_max) {
            if a >= 0.0 || b <= 0.0 {
                return Err(Error::config("wave.z_min", "need z_min < 0 < z_max"));
            }
        }
        positive("wave.tol", w.tol)?;
        positive("wave.tau_max", w.tau_max)?;
        if w.max_iter == 0 {
            return Err(Error::config("wave.max_iter", "must be ≥ 1"));
        }
        if let Some(s) = &self.sweep {
            finite("sweep.start", s.start)?;
            finite("sweep.stop", s.stop)?;
            positive("sweep.step", s.step)?;
            if s.stop < s.start {
                return Err(Error::config("sweep.stop", "must be ≥ sweep.start"));
            }
            if s.workers == 0 {
                return Err(Error::config("sweep.workers", "must be ≥ 1"));
            }
        }
        let v = &self.verify;
        positive("verify.comparison_t", v.comparison_t)?;
        positive("verify.hull_t", v.hull_t)?;
        for (p, x) in [
            ("verify.velocity_tol", v.velocity_tol),
            ("verify.profile_tol", v.profile_tol),
            ("verify.reflection_tol", v.reflection_tol),
            ("verify.first_equation_tol", v.first_equation_tol),
        ] {
            finite(p, x)?;
            if x < 0.0 {
                return Err(Error::config(p, "must be ≥ 0"));
            }
        }
        if v.hull_m.len() < 2 {
            return Err(Error::config(
                "verify.hull_m",
                "needs at least two chain lengths",
            ));
        }
        Ok(())
    }

    /// Builds the model; keys that do not apply to the chosen kind are
    /// rejected rather than ignored.
    pub fn model(&self) -> Result<ModelDescriptor> {
        let m = &self.model;
        let reject = |key: &str, present: bool| -> Result<()> {
            if present {
                Err(Error::config(
                    format!("model.{key}"),
                    format!("not a parameter of {:?}", m.kind),
                ))
            } else {
                Ok(())
            }
        };
        if let Some(s) = &m.shifts {
            if m.kind != ModelKind::CustomTabulated && s.as_slice() != [0.0, 1.0, -1.0] {
                return Err(Error::config(
                    "model.shifts",
                    "built-in kinds use the fixed stencil [0, 1, -1]",
                ));
            }
        }
        match m.kind {
            ModelKind::ClassicalFk => {
                reject("d", m.d.is_some())?;
                reject("kappa", m.kappa.is_some())?;
                reject("b_param", m.b_param.is_some())?;
                let l =
                    m.l.ok_or_else(|| Error::config("model.L", "required for classical_fk"))?;
                Ok(ModelDescriptor::classical_fk(l, m.m0)?)
            }
            ModelKind::CubicBistable => {
                reject("L", m.l.is_some())?;
                let b = m
                    .b_param
                    .ok_or_else(|| Error::config("model.b_param", "required for cubic_bistable"))?;
                Ok(ModelDescriptor::cubic_bistable(
                    m.d.unwrap_or(1.0),
                    b,
                    m.kappa.unwrap_or(1.0),
                    m.m0,
                )?)
            }
            ModelKind::CustomTabulated => Err(Error::config(
                "model.kind",
                "custom_tabulated rules are built through the library API (CustomRule)",
            )),
        }
    }

    pub fn lattice_run(&self) -> LatticeRun {
        LatticeRun {
            m: self.lattice.m,
            t_end: self.lattice.t,
            dt: self.lattice.dt,
            init: self.lattice.init_style,
        }
    }

    pub fn wave_options(&self) -> WaveOptions {
        let w = &self.wave;
        WaveOptions {
            h: w.h,
            z_min: w.z_min,
            z_max: w.z_max,
            phase_level: w.phase_level,
            tol: w.tol,
            max_iter: w.max_iter,
            tau_max: w.tau_max,
            method: w.method,
            lattice: self.lattice_run(),
        }
    }

    pub fn suite_config(&self, timings: bool) -> SuiteConfig {
        let v = &self.verify;
        SuiteConfig {
            seed: self.seed,
            comparison_trials: v.comparison_trials,
            comparison_t: v.comparison_t,
            velocity_tol: v.velocity_tol,
            profile_tol: v.profile_tol,
            reflection_tol: v.reflection_tol,
            first_equation_tol: v.first_equation_tol,
            velocity: VelocitySettings {
                wave: self.wave_options(),
                hull_m: v.hull_m.clone(),
                hull_t: v.hull_t,
            },
            timings,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const FULL: &str = r#"{
        "model": {"kind": "classical_fk", "L": 0.2, "m0": 0.005},
        "lattice": {"M": 300, "T": 100.0, "dt": 0.004, "boundary": "helical", "init_style": "tanh"},
        "wave": {"h": 0.05, "tol": 1e-9, "max_iter": 30, "tau_max": 100.0, "method": "newton"},
        "sweep": {"param": "L", "start": 0.0, "stop": 0.3, "step": 0.01, "workers": 4},
        "seed": 42
    }"#;

    #[test]
    fn parses_and_round_trips() {
        let cfg = RunConfig::from_json_str(FULL).unwrap();
        assert_eq!(cfg.lattice.m, 300);
        assert_eq!(cfg.lattice.boundary, BoundaryMode::Helical);
        assert_eq!(cfg.sweep.as_ref().unwrap().workers, 4);
        let again = RunConfig::from_json_str(&cfg.to_json_string().unwrap()).unwrap();
        assert_eq!(cfg, again);
    }

    #[test]
    fn defaults_fill_missing_blocks() {
        let cfg = RunConfig::from_json_str(
            r#"{"model": {"kind": "cubic_bistable", "b_param": 0.25, "m0": 0.05}}"#,
        )
        .unwrap();
        assert_eq!(cfg.lattice, LatticeBlock::default());
        assert_eq!(cfg.seed, 0);
        let m = cfg.model().unwrap();
        assert_eq!(m.alpha0(), 10.0);
    }

    #[test]
    fn unknown_keys_report_their_path() {
        let err = RunConfig::from_json_str(
            r#"{"model": {"kind": "classical_fk", "L": 0.1, "m0": 0.005, "mass": 1}}"#,
        )
        .unwrap_err();
        match err {
            Error::Config { path, message } => {
                assert_eq!(path, "model.mass");
                assert!(message.contains("mass"), "{message}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn invalid_values_rejected() {
        let base = r#"{"model": {"kind": "classical_fk", "L": 0.1, "m0": 0.005}, "sweep": {"param": "L", "start": 0, "stop": 1, "step": STEP, "workers": W}}"#;
        for (step, w, key) in [("0", "1", "sweep.step"), ("0.1", "0", "sweep.workers")] {
            let text = base.replace("STEP", step).replace("W", w);
            match RunConfig::from_json_str(&text).unwrap_err() {
                Error::Config { path, .. } => assert_eq!(path, key),
                other => panic!("{other:?}"),
            }
        }
    }

    #[test]
    fn mismatched_model_keys_rejected() {
        let cfg = RunConfig::from_json_str(
            r#"{"model": {"kind": "classical_fk", "L": 0.1, "b_param": 0.3, "m0": 0.005}}"#,
        )
        .unwrap();
        assert!(matches!(cfg.model(), Err(Error::Config { path, .. }) if path == "model.b_param"));
    }
}
