//! JSON assembly configuration and the named presets.
//!
//! A config either spells out every metronome or names a preset; explicit
//! fields override whatever the preset provides. Unknown keys are rejected.

use crate::calibrate::{calibrate_frequency_with_dt, calibrate_in_situ};
use crate::error::{Error, Result};
use crate::model::{
    Assembly, MetronomeParams, Mobility, PlatformParams, Vec2, DEFAULT_BOB_MASS, DEFAULT_DAMPING, DEFAULT_ESCAPEMENT,
    DEFAULT_GRAVITY, DEFAULT_PLATFORM_DAMPING, DEFAULT_PLATFORM_MASS, DEFAULT_REF_ANGLE,
};
use crate::sim::DEFAULT_DT;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::path::Path;

/// Relative tolerance used when a config asks for a target frequency.
pub const CALIBRATION_TOL: f64 = 1e-5;

/// Total frequency split between the two nominal 1 Hz metronomes.
pub const DEFAULT_DETUNING_SPLIT: f64 = 0.01;

// Operating point of the three-metronome latch. The escapement model couples
// the pair to the injector only at fourth order, so the latch needs a light
// platform and a heavier, wider-swinging injector bob than the single-pair
// demos.
pub const LATCH_PLATFORM_MASS: f64 = 0.1;
pub const LATCH_ESCAPEMENT: f64 = 0.3;
pub const LATCH_INJECTOR_BOB_MASS: f64 = 0.1;
pub const LATCH_INJECTOR_REF_ANGLE_DEG: f64 = 45.0;

// The 2:1 pair. The fast metronome runs just under twice the slow rate so
// that on an anchored platform the offset visibly drifts. The lock region
// reaches further on the slow side, so this offset stays well inside it.
pub const SHIL_PLATFORM_MASS: f64 = 0.2;
pub const SHIL_FAST_DETUNING: f64 = -0.03;

pub const PRESETS: &[&str] = &["paper_latch", "classic_sync", "shil_pair"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Calibration {
    /// Each metronome tuned alone on a fixed platform.
    #[default]
    Isolated,
    /// Isolated tuning, then re-tuned alone on the assembly's own platform.
    InSitu,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EscapementConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta_ref_deg: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlatformConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mass: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub damping: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mobility: Option<Mobility>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetronomeConfig {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_frequency_hz: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub length_m: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mass: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub damping: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub escapement: Option<EscapementConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub orientation_deg: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mount_xy: Option<Vec2>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub running: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssemblyConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gravity: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub platform: Option<PlatformConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metronomes: Option<Vec<MetronomeConfig>>,
    /// Only read by the `paper_latch` preset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detuning_split_hz: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calibration: Option<Calibration>,
}

fn metronome(id: &str, target: f64, orientation_deg: f64, mount: Vec2) -> MetronomeConfig {
    MetronomeConfig {
        id: id.into(),
        target_frequency_hz: Some(target),
        orientation_deg: Some(orientation_deg),
        mount_xy: Some(mount),
        ..Default::default()
    }
}

/// Red and green at right angles, blue bisecting them at twice the rate,
/// on a light platform free to roll in the plane. Blue starts stopped.
pub fn paper_latch(split: f64) -> AssemblyConfig {
    let esc = Some(EscapementConfig {
        eps: Some(LATCH_ESCAPEMENT),
        theta_ref_deg: None,
    });
    let mut red = metronome("red", 1.0 - split / 2.0, 0.0, [-0.08, 0.0]);
    let mut green = metronome("green", 1.0 + split / 2.0, 90.0, [0.0, -0.08]);
    let mut blue = metronome("blue", 2.0, 45.0, [0.06, 0.06]);
    red.escapement = esc.clone();
    green.escapement = esc;
    blue.mass = Some(LATCH_INJECTOR_BOB_MASS);
    blue.escapement = Some(EscapementConfig {
        eps: Some(LATCH_ESCAPEMENT),
        theta_ref_deg: Some(LATCH_INJECTOR_REF_ANGLE_DEG),
    });
    blue.running = Some(false);
    AssemblyConfig {
        preset: Some("paper_latch".into()),
        platform: Some(PlatformConfig {
            mass: Some(LATCH_PLATFORM_MASS),
            damping: Some(DEFAULT_PLATFORM_DAMPING),
            mobility: Some(Mobility::Free2d),
        }),
        metronomes: Some(vec![red, green, blue]),
        detuning_split_hz: Some(split),
        calibration: Some(Calibration::InSitu),
        ..Default::default()
    }
}

/// Two parallel metronomes near 1 Hz on a platform rolling along x.
pub fn classic_sync(split: f64) -> AssemblyConfig {
    AssemblyConfig {
        preset: Some("classic_sync".into()),
        platform: Some(PlatformConfig {
            mass: Some(DEFAULT_PLATFORM_MASS),
            damping: Some(DEFAULT_PLATFORM_DAMPING),
            mobility: Some(Mobility::Free1d { axis: 0.0 }),
        }),
        metronomes: Some(vec![
            metronome("a", 1.0 - split / 2.0, 0.0, [-0.06, 0.0]),
            metronome("b", 1.0 + split / 2.0, 0.0, [0.06, 0.0]),
        ]),
        ..Default::default()
    }
}

/// A 1 Hz and a 2 Hz metronome swinging along the platform's rolling axis.
pub fn shil_pair(fast_detuning: f64) -> AssemblyConfig {
    AssemblyConfig {
        preset: Some("shil_pair".into()),
        platform: Some(PlatformConfig {
            mass: Some(SHIL_PLATFORM_MASS),
            damping: Some(DEFAULT_PLATFORM_DAMPING),
            mobility: Some(Mobility::Free1d { axis: 0.0 }),
        }),
        metronomes: Some(vec![
            metronome("slow", 1.0, 0.0, [-0.06, 0.0]),
            metronome("fast", 2.0 + fast_detuning, 0.0, [0.06, 0.0]),
        ]),
        calibration: Some(Calibration::InSitu),
        ..Default::default()
    }
}

fn preset_config(name: &str, split: Option<f64>) -> Result<AssemblyConfig> {
    match name {
        "paper_latch" => Ok(paper_latch(split.unwrap_or(DEFAULT_DETUNING_SPLIT))),
        "classic_sync" => Ok(classic_sync(split.unwrap_or(DEFAULT_DETUNING_SPLIT))),
        "shil_pair" => Ok(shil_pair(SHIL_FAST_DETUNING)),
        other => Err(Error::Config {
            path: "preset".into(),
            reason: format!("unknown preset `{other}`; known: {}", PRESETS.join(", ")),
        }),
    }
}

fn config_err(path: impl Into<String>, reason: impl Into<String>) -> Error {
    Error::Config {
        path: path.into(),
        reason: reason.into(),
    }
}

fn check(path: String, v: f64, strictly: bool) -> Result<()> {
    let ok = v.is_finite() && if strictly { v > 0.0 } else { v >= 0.0 };
    if ok {
        Ok(())
    } else {
        let op = if strictly { ">" } else { ">=" };
        Err(config_err(path, format!("must be {op} 0, got {v}")))
    }
}

impl AssemblyConfig {
    /// Expands the preset (if any), overlays explicit fields, fills defaults
    /// and validates. The result no longer depends on the preset name.
    pub fn resolve(&self) -> Result<AssemblyConfig> {
        let mut out = match &self.preset {
            Some(name) => preset_config(name, self.detuning_split_hz)?,
            None => AssemblyConfig::default(),
        };
        out.seed = self.seed.or(out.seed);
        out.gravity = self.gravity.or(out.gravity);
        if let Some(p) = &self.platform {
            let base = out.platform.take().unwrap_or_default();
            out.platform = Some(PlatformConfig {
                mass: p.mass.or(base.mass),
                damping: p.damping.or(base.damping),
                mobility: p.mobility.or(base.mobility),
            });
        }
        if self.metronomes.is_some() {
            out.metronomes = self.metronomes.clone();
        }
        out.calibration = self.calibration.or(out.calibration);
        out.detuning_split_hz = self.detuning_split_hz.or(out.detuning_split_hz);

        let g = out.gravity.unwrap_or(DEFAULT_GRAVITY);
        check("gravity".into(), g, true)?;
        out.gravity = Some(g);

        let p = out.platform.take().unwrap_or_default();
        let p = PlatformConfig {
            mass: Some(p.mass.unwrap_or(DEFAULT_PLATFORM_MASS)),
            damping: Some(p.damping.unwrap_or(DEFAULT_PLATFORM_DAMPING)),
            mobility: Some(p.mobility.unwrap_or(Mobility::Free2d)),
        };
        check("platform.mass".into(), p.mass.unwrap(), true)?;
        check("platform.damping".into(), p.damping.unwrap(), false)?;
        if let Some(Mobility::Free1d { axis }) = p.mobility {
            if !axis.is_finite() {
                return Err(config_err("platform.mobility.axis", "must be finite"));
            }
        }
        out.platform = Some(p);

        let ms = out.metronomes.take().unwrap_or_default();
        if ms.is_empty() {
            return Err(config_err("metronomes", "at least one metronome is required"));
        }
        let mut seen = HashSet::new();
        let mut filled = Vec::with_capacity(ms.len());
        for (i, m) in ms.into_iter().enumerate() {
            let at = |f: &str| format!("metronomes[{i}].{f}");
            if m.id.is_empty() {
                return Err(config_err(at("id"), "must not be empty"));
            }
            if !seen.insert(m.id.clone()) {
                return Err(config_err(at("id"), format!("duplicate id `{}`", m.id)));
            }
            match (m.target_frequency_hz, m.length_m) {
                (Some(_), Some(_)) => {
                    return Err(config_err(
                        format!("metronomes[{i}]"),
                        "set either target_frequency_hz or length_m, not both",
                    ))
                }
                (None, None) => {
                    return Err(config_err(
                        format!("metronomes[{i}]"),
                        "one of target_frequency_hz or length_m is required",
                    ))
                }
                (Some(f), None) => check(at("target_frequency_hz"), f, true)?,
                (None, Some(l)) => check(at("length_m"), l, true)?,
            }
            let esc = m.escapement.clone().unwrap_or_default();
            let esc = EscapementConfig {
                eps: Some(esc.eps.unwrap_or(DEFAULT_ESCAPEMENT)),
                theta_ref_deg: Some(esc.theta_ref_deg.unwrap_or(DEFAULT_REF_ANGLE.to_degrees())),
            };
            let m = MetronomeConfig {
                mass: Some(m.mass.unwrap_or(DEFAULT_BOB_MASS)),
                damping: Some(m.damping.unwrap_or(DEFAULT_DAMPING)),
                escapement: Some(esc),
                orientation_deg: Some(m.orientation_deg.unwrap_or(0.0)),
                mount_xy: Some(m.mount_xy.unwrap_or([0.0, 0.0])),
                running: Some(m.running.unwrap_or(true)),
                ..m
            };
            check(at("mass"), m.mass.unwrap(), true)?;
            check(at("damping"), m.damping.unwrap(), false)?;
            let esc = m.escapement.as_ref().unwrap();
            check(at("escapement.eps"), esc.eps.unwrap(), false)?;
            check(at("escapement.theta_ref_deg"), esc.theta_ref_deg.unwrap(), true)?;
            if !m.orientation_deg.unwrap().is_finite() {
                return Err(config_err(at("orientation_deg"), "must be finite"));
            }
            if !m.mount_xy.unwrap().iter().all(|v| v.is_finite()) {
                return Err(config_err(at("mount_xy"), "must be finite"));
            }
            filled.push(m);
        }
        out.metronomes = Some(filled);
        out.calibration = Some(out.calibration.unwrap_or_default());
        Ok(out)
    }
}

/// Parses and resolves a JSON config. Errors carry the JSON path of the
/// offending value.
pub fn parse_config(text: &str) -> Result<AssemblyConfig> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let raw: AssemblyConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        Error::Config {
            path: if path == "." { String::new() } else { path },
            reason: e.into_inner().to_string(),
        }
    })?;
    raw.resolve()
}

pub fn load_config(path: &Path) -> Result<AssemblyConfig> {
    let text = std::fs::read_to_string(path)?;
    parse_config(&text)
}

fn params_of(m: &MetronomeConfig, gravity: f64) -> MetronomeParams {
    let esc = m.escapement.as_ref().unwrap();
    let length = m
        .length_m
        .unwrap_or_else(|| gravity / (2.0 * std::f64::consts::PI * m.target_frequency_hz.unwrap()).powi(2));
    MetronomeParams {
        id: m.id.clone(),
        length,
        bob_mass: m.mass.unwrap(),
        damping: m.damping.unwrap(),
        escapement: esc.eps.unwrap(),
        ref_angle: esc.theta_ref_deg.unwrap().to_radians(),
        orientation: m.orientation_deg.unwrap().to_radians(),
        mount_position: m.mount_xy.unwrap(),
        running: m.running.unwrap(),
        calibrated_frequency: None,
    }
}

/// Builds the assembly, calibrating every metronome that asks for a target
/// frequency.
pub fn build_assembly(config: &AssemblyConfig) -> Result<Assembly> {
    build_assembly_with_dt(config, DEFAULT_DT)
}

pub fn build_assembly_with_dt(config: &AssemblyConfig, dt: f64) -> Result<Assembly> {
    let cfg = config.resolve()?;
    let gravity = cfg.gravity.unwrap();
    let p = cfg.platform.as_ref().unwrap();
    let platform = PlatformParams {
        mass: p.mass.unwrap(),
        damping: p.damping.unwrap(),
        mobility: p.mobility.unwrap(),
    };
    let mut params = Vec::new();
    let mut targets = Vec::new();
    for (i, m) in cfg.metronomes.as_ref().unwrap().iter().enumerate() {
        let base = params_of(m, gravity);
        match m.target_frequency_hz {
            Some(f) => {
                params.push(calibrate_frequency_with_dt(&base, gravity, f, CALIBRATION_TOL, dt)?);
                targets.push((i, f));
            }
            None => params.push(base),
        }
    }
    let asm = Assembly::new(params, platform, gravity)?;
    match cfg.calibration.unwrap() {
        Calibration::InSitu if !targets.is_empty() && platform.mobility != Mobility::Fixed => {
            calibrate_in_situ(&asm, &targets, CALIBRATION_TOL, dt)
        }
        _ => Ok(asm),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preset_expands_to_three_metronomes() {
        let cfg = parse_config(r#"{"preset":"paper_latch","seed":1}"#).unwrap();
        let ms = cfg.metronomes.as_ref().unwrap();
        assert_eq!(ms.len(), 3);
        let orient: Vec<f64> = ms.iter().map(|m| m.orientation_deg.unwrap()).collect();
        assert_eq!(orient, vec![0.0, 90.0, 45.0]);
        let f: Vec<f64> = ms.iter().map(|m| m.target_frequency_hz.unwrap()).collect();
        assert_eq!(f, vec![0.995, 1.005, 2.0]);
        assert_eq!(cfg.seed, Some(1));
    }

    #[test]
    fn rejects_both_target_and_length() {
        let err = parse_config(r#"{"metronomes":[{"id":"a","target_frequency_hz":1.0,"length_m":0.25}]}"#).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("metronomes[0]") && msg.contains("not both"), "{msg}");
    }

    #[test]
    fn rejects_empty_list() {
        let err = parse_config(r#"{"metronomes":[]}"#).unwrap_err();
        assert!(matches!(err, Error::Config { ref path, .. } if path == "metronomes"));
    }

    #[test]
    fn unknown_keys_name_their_path() {
        let err = parse_config(r#"{"platform":{"mass":0.4,"dampnig":0.1}}"#).unwrap_err();
        match err {
            Error::Config { path, reason } => {
                assert!(path.starts_with("platform"), "{path}");
                assert!(reason.contains("dampnig"), "{reason}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn duplicate_ids_rejected() {
        let err = parse_config(r#"{"metronomes":[{"id":"a","length_m":0.2},{"id":"a","length_m":0.3}]}"#).unwrap_err();
        assert!(err.to_string().contains("duplicate"));
    }

    #[test]
    fn explicit_fields_override_preset() {
        let cfg = parse_config(r#"{"preset":"classic_sync","platform":{"mass":1.5}}"#).unwrap();
        let p = cfg.platform.unwrap();
        assert_eq!(p.mass, Some(1.5));
        assert_eq!(p.mobility, Some(Mobility::Free1d { axis: 0.0 }));
    }

    #[test]
    fn resolve_is_idempotent() {
        let once = parse_config(r#"{"preset":"paper_latch"}"#).unwrap();
        assert_eq!(once.resolve().unwrap(), once);
    }

    #[test]
    fn length_only_config_builds_without_calibration() {
        let cfg = parse_config(r#"{"metronomes":[{"id":"a","length_m":0.25}]}"#).unwrap();
        let asm = build_assembly(&cfg).unwrap();
        assert_eq!(asm.metronomes()[0].length, 0.25);
        assert!(asm.metronomes()[0].calibrated_frequency.is_none());
    }
}
