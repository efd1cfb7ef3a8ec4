//! Plain-text `key=value` configuration blocks.
//!
//! Lines are `key = value`; `#` starts a comment; `[name]` opens a section.
//! Keys outside any section land in the unnamed section `""`.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::str::FromStr;

use num_complex::Complex64;

use crate::seqsim::{CoilModel, Ellipse, Motion, PhantomSpec, TrajectorySpec};
use crate::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Section {
    entries: BTreeMap<String, String>,
}

impl Section {
    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn insert(&mut self, key: impl Into<String>, value: impl Display) {
        self.entries.insert(key.into(), value.to_string());
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn parse_or<T>(&self, key: &str, default: T) -> Result<T>
    where
        T: FromStr,
        T::Err: Display,
    {
        match self.get(key) {
            None => Ok(default),
            Some(raw) => raw
                .parse()
                .map_err(|e| Error::config(format!("bad value for `{key}`: {raw:?} ({e})"))),
        }
    }

    pub fn require<T>(&self, key: &str) -> Result<T>
    where
        T: FromStr,
        T::Err: Display,
    {
        let raw = self
            .get(key)
            .ok_or_else(|| Error::config(format!("missing key `{key}`")))?;
        raw.parse()
            .map_err(|e| Error::config(format!("bad value for `{key}`: {raw:?} ({e})")))
    }

    fn floats(&self, key: &str) -> Result<Option<Vec<f64>>> {
        match self.get(key) {
            None => Ok(None),
            Some(raw) => raw
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse::<f64>()
                        .map_err(|e| Error::config(format!("bad number in `{key}`: {e}")))
                })
                .collect::<Result<Vec<_>>>()
                .map(Some),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Config {
    sections: BTreeMap<String, Section>,
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Config::default();
        let mut current = String::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                current = name.trim().to_string();
                cfg.sections.entry(current.clone()).or_default();
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::config(format!("line {}: expected key=value", lineno + 1))
            })?;
            cfg.sections
                .entry(current.clone())
                .or_default()
                .insert(key.trim(), value.trim());
        }
        Ok(cfg)
    }

    pub fn section(&self, name: &str) -> Option<&Section> {
        self.sections.get(name)
    }

    pub fn section_or_empty(&self, name: &str) -> Section {
        self.sections.get(name).cloned().unwrap_or_default()
    }
}

/// Reads `spokes`, `turns`, `samples_per_spoke`, `base_angle`.
pub fn trajectory_from(section: &Section, default: &TrajectorySpec) -> Result<TrajectorySpec> {
    let spec = TrajectorySpec {
        spokes: section.parse_or("spokes", default.spokes)?,
        turns: section.parse_or("turns", default.turns)?,
        samples_per_spoke: section.parse_or("samples_per_spoke", default.samples_per_spoke)?,
        base_angle: section.parse_or("base_angle", default.base_angle)?,
    };
    spec.validate()?;
    Ok(spec)
}

/// Reads a phantom description.
///
/// `shape = shepp_logan | disk | dynamic_head` picks the base object;
/// `ellipse.<i> = amp, a, b, x0, y0, angle_deg` replaces the ellipse list
/// (coordinates in pixels); `motion = sinusoid` with `motion_ellipse`,
/// `motion_dx`, `motion_dy`, `motion_period` adds movement.
pub fn phantom_from(section: &Section, fov: f64) -> Result<PhantomSpec> {
    let shape = section.get("shape").unwrap_or("dynamic_head");
    let coils: usize = section.parse_or("coils", 4)?;
    let mut p = match shape {
        "shepp_logan" => PhantomSpec::shepp_logan(fov),
        "dynamic_head" => PhantomSpec::dynamic_head(fov, coils),
        "disk" => PhantomSpec::disk(fov, section.parse_or("radius", fov / 4.0)?),
        other => return Err(Error::config(format!("unknown phantom shape `{other}`"))),
    };
    p.coils = coils;
    let mut custom: Vec<(usize, Ellipse)> = Vec::new();
    for key in section.keys() {
        if let Some(idx) = key.strip_prefix("ellipse.") {
            let i: usize = idx
                .parse()
                .map_err(|_| Error::config(format!("bad ellipse key `{key}`")))?;
            let v = section.floats(key)?.unwrap_or_default();
            if v.len() != 6 {
                return Err(Error::config(format!("`{key}` needs 6 numbers")));
            }
            custom.push((
                i,
                Ellipse {
                    amplitude: Complex64::new(v[0], 0.0),
                    axes: [v[1], v[2]],
                    center: [v[3], v[4]],
                    angle: v[5].to_radians(),
                },
            ));
        }
    }
    if !custom.is_empty() {
        custom.sort_by_key(|(i, _)| *i);
        p.ellipses = custom.into_iter().map(|(_, e)| e).collect();
    }
    match section.get("coil_model") {
        None => {}
        Some("uniform") => p.coil_model = CoilModel::Uniform,
        Some("ring") => {
            let CoilModel::Ring {
                radius,
                width,
                harmonics,
            } = CoilModel::default()
            else {
                unreachable!()
            };
            p.coil_model = CoilModel::Ring {
                radius: section.parse_or("coil_radius", radius)?,
                width: section.parse_or("coil_width", width)?,
                harmonics: section.parse_or("coil_harmonics", harmonics)?,
            };
        }
        Some(other) => return Err(Error::config(format!("unknown coil model `{other}`"))),
    }
    match section.get("motion") {
        None => {}
        Some("static") => p.motion = Motion::Static,
        Some("sinusoid") => {
            p.motion = Motion::Sinusoid {
                ellipse: section.parse_or("motion_ellipse", 0)?,
                amplitude: [
                    section.parse_or("motion_dx", 0.0)?,
                    section.parse_or("motion_dy", 0.05 * fov)?,
                ],
                period: section.parse_or("motion_period", 20.0)?,
            }
        }
        Some(other) => return Err(Error::config(format!("unknown motion `{other}`"))),
    }
    p.edge_blur = section.parse_or("edge_blur", p.edge_blur)?;
    p.noise_std = section.parse_or("noise_std", p.noise_std)?;
    p.seed = section.parse_or("seed", p.seed)?;
    p.validate()?;
    Ok(p)
}
