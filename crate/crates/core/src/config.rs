//! Plain-text `key = value` configuration.
//!
//! One assignment per line, `#` starts a comment, blank lines are ignored.
//! Keys are dotted `section.name`; every key is optional and falls back to
//! the [`Scenario`] default, except that a non-identity `deformation.kind`
//! makes its parameters mandatory. Unknown or repeated keys are errors.
//!
//! | key | type | default |
//! |-----|------|---------|
//! | `name` | string | `default` |
//! | `scene.seed` | u64 | 1 |
//! | `scene.width`, `scene.height` | pixels | 256 |
//! | `scene.speckle_count` | count | `width * height / 60` |
//! | `scene.speckle_radius` | pixels | 2 |
//! | `scene.base`, `scene.peak` | radiance | 15, 100 |
//! | `scene.glare` | `none`, `local`, `global-low`, `global-high` | `none` |
//! | `scene.spot_amplitude` | radiance | 1e4 |
//! | `scene.spot_sigma_frac` | fraction of short edge | 0.18 |
//! | `scene.global_low_gain`, `scene.global_high_gain` | gain | 12, 40 |
//! | `deformation.kind` | `identity`, `translation`, `affine` | `identity` |
//! | `deformation.u`, `deformation.v` | pixels | mandatory for translation |
//! | `deformation.matrix` | six numbers, row-major 2x3 | mandatory for affine |
//! | `sensor.bit_depth` | 8 or 16 | 8 |
//! | `sensor.gain`, `sensor.exposure_time` | | 1, 1 |
//! | `sensor.read_noise_sigma` | counts | 1 |
//! | `sensor.shot_noise` | bool | false |
//! | `sensor.intrinsic_dr_db` | dB | `20 lg(s_max)` |
//! | `dmd.max_exponent` | | 11 |
//! | `dmd.t_ratio` | | 100 |
//! | `dmd.off_leakage` | | 0 |
//! | `dmd.psf_sigma` | pixels | 0 |
//! | `controller.threshold_factor` | (0, 1) | 0.95 |
//! | `controller.max_iterations` | captures | `max_exponent + 2` |
//! | `controller.record_trace` | bool | false |
//! | `controller.literal_break` | bool | false |
//! | `controller.suppression` | `x0 y0 x1 y1 k` entries separated by `;` | none |
//! | `dic.subset_size` | odd pixels | 21 |
//! | `dic.grid_step` | pixels | 8 |
//! | `dic.max_iterations` | | 50 |
//! | `dic.convergence_tol` | | 1e-4 |
//! | `dic.zncc_accept` | | 0.8 |
//! | `dic.strain_window` | odd grid points | 5 |
//! | `dic.search_radius` | pixels | 4 |
//! | `dic.border` | pixels | `subset_size / 2 + search_radius` |
//! | `experiment.repetitions` | | 8 |
//! | `experiment.noise_seed` | u64 | 7 |
//! | `experiment.gamma` | | 2.2 |
//! | `experiment.level_gains` | comma list | 0.25, 1, 2.5 |
//! | `experiment.hotspot_sigma_frac` | | 0.12 |
//! | `experiment.hotspot_peak_gain` | | 10 |
//! | `experiment.glares` | comma list of presets | local, global-low, global-high |
//! | `clahe.clip_limit` | fraction of tile pixels | 0.02 |
//! | `clahe.tiles_x`, `clahe.tiles_y` | | 8 |
//! | `sve.scales` | four numbers, row-major 2x2 | 1, 0.25, 0.0625, 0.015625 |

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::controller::Suppression;
use crate::harness::{Scenario, SPECKLE_AREA_PER_BLOB};
use crate::optics::SensorModel;
use crate::scene::DeformationSpec;
use crate::{Error, Result};

/// Parsed assignments, consumed key by key.
#[derive(Debug, Clone, Default)]
pub struct KeyValues {
    entries: BTreeMap<String, String>,
}

impl KeyValues {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::ConfigSyntax {
                line: i + 1,
                reason: format!("expected `key = value`, got `{line}`"),
            })?;
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() || k.contains(char::is_whitespace) {
                return Err(Error::ConfigSyntax {
                    line: i + 1,
                    reason: format!("bad key `{k}`"),
                });
            }
            if entries.insert(k.to_string(), v.to_string()).is_some() {
                return Err(Error::ConfigSyntax {
                    line: i + 1,
                    reason: format!("key `{k}` assigned twice"),
                });
            }
        }
        Ok(Self { entries })
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn take<T: FromStr>(&mut self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.entries.remove(key) {
            None => Ok(None),
            Some(v) => v.parse().map(Some).map_err(|e| Error::ConfigValue {
                key: key.to_string(),
                reason: format!("cannot parse `{v}`: {e}"),
            }),
        }
    }

    pub fn take_or<T: FromStr>(&mut self, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        Ok(self.take(key)?.unwrap_or(default))
    }

    pub fn require<T: FromStr>(&mut self, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        self.take(key)?
            .ok_or_else(|| Error::MissingKey(key.to_string()))
    }

    /// Comma- or whitespace-separated list.
    pub fn take_list<T: FromStr>(&mut self, key: &str) -> Result<Option<Vec<T>>>
    where
        T::Err: std::fmt::Display,
    {
        let Some(v) = self.entries.remove(key) else {
            return Ok(None);
        };
        v.split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse().map_err(|e| Error::ConfigValue {
                    key: key.to_string(),
                    reason: format!("cannot parse `{s}`: {e}"),
                })
            })
            .collect::<Result<Vec<T>>>()
            .map(Some)
    }

    /// Errors on the first key nobody consumed.
    pub fn finish(self) -> Result<()> {
        match self.entries.into_keys().next() {
            Some(k) => Err(Error::UnknownKey(k)),
            None => Ok(()),
        }
    }
}

fn fixed<const N: usize>(key: &str, v: Vec<f64>) -> Result<[f64; N]> {
    v.try_into().map_err(|v: Vec<f64>| Error::ConfigValue {
        key: key.to_string(),
        reason: format!("expected {N} numbers, got {}", v.len()),
    })
}

/// Re-labels a component validation error with the config section.
fn relabel(section: &str, e: Error) -> Error {
    match e {
        Error::InvalidParameter { name, reason } => Error::ConfigValue {
            key: format!("{section}.{name}"),
            reason,
        },
        other => other,
    }
}

fn in_section(section: &str, r: Result<()>) -> Result<()> {
    r.map_err(|e| relabel(section, e))
}

fn parse_suppression(v: &str) -> Result<Vec<Suppression>> {
    let bad = |reason: String| Error::ConfigValue {
        key: "controller.suppression".into(),
        reason,
    };
    v.split(';')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|entry| {
            let n: Vec<usize> = entry
                .split_whitespace()
                .map(|t| t.parse().map_err(|e| bad(format!("`{t}`: {e}"))))
                .collect::<Result<_>>()?;
            match n[..] {
                [x0, y0, x1, y1, k] if x0 < x1 && y0 < y1 && k <= u8::MAX as usize => {
                    Ok(Suppression {
                        x0,
                        y0,
                        x1,
                        y1,
                        exponent: k as u8,
                    })
                }
                _ => Err(bad(format!(
                    "expected `x0 y0 x1 y1 k` with x0<x1, y0<y1, got `{entry}`"
                ))),
            }
        })
        .collect()
}

pub fn parse_scenario(text: &str) -> Result<Scenario> {
    let mut kv = KeyValues::parse(text)?;
    let mut s = Scenario::default();
    s.name = kv.take_or("name", s.name)?;

    let sp = &mut s.scene.speckle;
    sp.seed = kv.take_or("scene.seed", sp.seed)?;
    sp.width = kv.take_or("scene.width", sp.width)?;
    sp.height = kv.take_or("scene.height", sp.height)?;
    sp.count = kv.take_or(
        "scene.speckle_count",
        sp.width * sp.height / SPECKLE_AREA_PER_BLOB,
    )?;
    sp.radius = kv.take_or("scene.speckle_radius", sp.radius)?;
    sp.base = kv.take_or("scene.base", sp.base)?;
    sp.peak = kv.take_or("scene.peak", sp.peak)?;
    s.scene.glare = kv.take_or("scene.glare", s.scene.glare)?;
    let gp = &mut s.scene.presets;
    gp.spot_amplitude = kv.take_or("scene.spot_amplitude", gp.spot_amplitude)?;
    gp.spot_sigma_frac = kv.take_or("scene.spot_sigma_frac", gp.spot_sigma_frac)?;
    gp.global_low_gain = kv.take_or("scene.global_low_gain", gp.global_low_gain)?;
    gp.global_high_gain = kv.take_or("scene.global_high_gain", gp.global_high_gain)?;
    if !(sp.width > 0 && sp.height > 0) {
        return Err(Error::ConfigValue {
            key: "scene.width".into(),
            reason: "width and height must be >= 1".into(),
        });
    }
    if !(sp.peak > sp.base && sp.base >= 0.0 && sp.radius >= 1.0) {
        return Err(Error::ConfigValue {
            key: "scene.peak".into(),
            reason: "need peak > base >= 0 and speckle_radius >= 1".into(),
        });
    }
    if !(gp.spot_amplitude >= 0.0
        && gp.spot_sigma_frac > 0.0
        && gp.global_low_gain >= 1.0
        && gp.global_high_gain >= 1.0)
    {
        return Err(Error::ConfigValue {
            key: "scene.glare".into(),
            reason: "need spot_amplitude >= 0, spot_sigma_frac > 0, global gains >= 1".into(),
        });
    }

    let kind: String = kv.take_or("deformation.kind", "identity".to_string())?;
    s.deformation = match kind.as_str() {
        "identity" => DeformationSpec::Identity,
        "translation" => DeformationSpec::Translation {
            u: kv.require("deformation.u")?,
            v: kv.require("deformation.v")?,
        },
        "affine" => {
            let m = kv
                .take_list("deformation.matrix")?
                .ok_or_else(|| Error::MissingKey("deformation.matrix".into()))?;
            let m = fixed::<6>("deformation.matrix", m)?;
            DeformationSpec::Affine {
                matrix: [[m[0], m[1], m[2]], [m[3], m[4], m[5]]],
            }
        }
        other => {
            return Err(Error::ConfigValue {
                key: "deformation.kind".into(),
                reason: format!("unknown kind `{other}` (expected identity|translation|affine)"),
            })
        }
    };
    in_section("deformation", s.deformation.validate())?;

    let bit_depth: u8 = kv.take_or("sensor.bit_depth", s.sensor.bit_depth())?;
    let gain = kv.take_or("sensor.gain", s.sensor.gain)?;
    let exposure_time = kv.take_or("sensor.exposure_time", s.sensor.exposure_time)?;
    let mut sensor =
        SensorModel::new(bit_depth, gain, exposure_time).map_err(|e| relabel("sensor", e))?;
    sensor.read_noise_sigma = kv.take_or("sensor.read_noise_sigma", s.sensor.read_noise_sigma)?;
    sensor.shot_noise = kv.take_or("sensor.shot_noise", s.sensor.shot_noise)?;
    sensor.intrinsic_dr_db = kv
        .take("sensor.intrinsic_dr_db")?
        .or(s.sensor.intrinsic_dr_db);
    in_section("sensor", sensor.validate())?;
    s.sensor = sensor;

    let d = &mut s.dmd;
    d.max_exponent = kv.take_or("dmd.max_exponent", d.max_exponent)?;
    d.t_ratio = kv.take_or("dmd.t_ratio", d.t_ratio)?;
    d.off_leakage = kv.take_or("dmd.off_leakage", d.off_leakage)?;
    d.psf_sigma = kv.take_or("dmd.psf_sigma", d.psf_sigma)?;
    in_section("dmd", s.dmd.validate())?;

    let c = &mut s.controller;
    c.threshold_factor = kv.take_or("controller.threshold_factor", c.threshold_factor)?;
    c.max_iterations = kv.take("controller.max_iterations")?.or(c.max_iterations);
    c.record_trace = kv.take_or("controller.record_trace", c.record_trace)?;
    c.literal_break = kv.take_or("controller.literal_break", c.literal_break)?;
    if let Some(v) = kv.take::<String>("controller.suppression")? {
        c.suppression = parse_suppression(&v)?;
    }
    in_section("controller", s.controller.validate())?;

    let g = &mut s.dic;
    g.subset_size = kv.take_or("dic.subset_size", g.subset_size)?;
    g.grid_step = kv.take_or("dic.grid_step", g.grid_step)?;
    g.max_iterations = kv.take_or("dic.max_iterations", g.max_iterations)?;
    g.convergence_tol = kv.take_or("dic.convergence_tol", g.convergence_tol)?;
    g.zncc_accept = kv.take_or("dic.zncc_accept", g.zncc_accept)?;
    g.strain_window = kv.take_or("dic.strain_window", g.strain_window)?;
    g.search_radius = kv.take_or("dic.search_radius", g.search_radius)?;
    g.border = kv.take("dic.border")?.or(g.border);
    in_section("dic", s.dic.validate())?;

    s.repetitions = kv.take_or("experiment.repetitions", s.repetitions)?;
    s.noise_seed = kv.take_or("experiment.noise_seed", s.noise_seed)?;
    s.gamma = kv.take_or("experiment.gamma", s.gamma)?;
    let st = &mut s.strain;
    if let Some(v) = kv.take_list("experiment.level_gains")? {
        st.level_gains = v;
    }
    st.hotspot_sigma_frac = kv.take_or("experiment.hotspot_sigma_frac", st.hotspot_sigma_frac)?;
    st.hotspot_peak_gain = kv.take_or("experiment.hotspot_peak_gain", st.hotspot_peak_gain)?;
    if st.level_gains.is_empty() || st.level_gains.iter().any(|&g| !(g > 0.0 && g.is_finite())) {
        return Err(Error::ConfigValue {
            key: "experiment.level_gains".into(),
            reason: "need at least one finite gain > 0".into(),
        });
    }
    if !(st.hotspot_sigma_frac > 0.0 && st.hotspot_peak_gain >= 1.0) {
        return Err(Error::ConfigValue {
            key: "experiment.hotspot_peak_gain".into(),
            reason: "need hotspot_sigma_frac > 0 and hotspot_peak_gain >= 1".into(),
        });
    }
    let q = &mut s.quality;
    if let Some(v) = kv.take_list("experiment.glares")? {
        q.glares = v;
    }
    q.clahe.clip_limit = kv.take_or("clahe.clip_limit", q.clahe.clip_limit)?;
    q.clahe.tiles.0 = kv.take_or("clahe.tiles_x", q.clahe.tiles.0)?;
    q.clahe.tiles.1 = kv.take_or("clahe.tiles_y", q.clahe.tiles.1)?;
    if !(q.clahe.clip_limit > 0.0 && q.clahe.tiles.0 > 0 && q.clahe.tiles.1 > 0) {
        return Err(Error::ConfigValue {
            key: "clahe.clip_limit".into(),
            reason: "need clip_limit > 0 and at least one tile per axis".into(),
        });
    }
    if let Some(v) = kv.take_list("sve.scales")? {
        let m = fixed::<4>("sve.scales", v)?;
        q.sve.scales = [[m[0], m[1]], [m[2], m[3]]];
    }
    in_section("sve", q.sve.validate())?;

    kv.finish()?;
    if s.repetitions == 0 || !(s.gamma > 0.0 && s.gamma.is_finite()) {
        return Err(Error::ConfigValue {
            key: "experiment.repetitions".into(),
            reason: "need repetitions >= 1 and gamma > 0".into(),
        });
    }
    Ok(s)
}

pub fn read_scenario(path: impl AsRef<Path>) -> Result<Scenario> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_scenario(&text)
}

fn join<T: std::fmt::Display>(items: impl IntoIterator<Item = T>) -> String {
    items
        .into_iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(", ")
}

/// Config text that parses back to `s`. Floats use the shortest exact
/// representation.
pub fn render(s: &Scenario) -> String {
    let mut o = String::new();
    let mut put = |k: &str, v: String| {
        let _ = writeln!(o, "{k} = {v}");
    };
    let sp = &s.scene.speckle;
    let gp = &s.scene.presets;
    put("name", s.name.clone());
    put("scene.seed", sp.seed.to_string());
    put("scene.width", sp.width.to_string());
    put("scene.height", sp.height.to_string());
    put("scene.speckle_count", sp.count.to_string());
    put("scene.speckle_radius", sp.radius.to_string());
    put("scene.base", sp.base.to_string());
    put("scene.peak", sp.peak.to_string());
    put("scene.glare", s.scene.glare.to_string());
    put("scene.spot_amplitude", gp.spot_amplitude.to_string());
    put("scene.spot_sigma_frac", gp.spot_sigma_frac.to_string());
    put("scene.global_low_gain", gp.global_low_gain.to_string());
    put("scene.global_high_gain", gp.global_high_gain.to_string());
    match s.deformation {
        DeformationSpec::Identity => put("deformation.kind", "identity".into()),
        DeformationSpec::Translation { u, v } => {
            put("deformation.kind", "translation".into());
            put("deformation.u", u.to_string());
            put("deformation.v", v.to_string());
        }
        DeformationSpec::Affine { matrix } => {
            put("deformation.kind", "affine".into());
            put("deformation.matrix", join(matrix.iter().flatten()));
        }
    }
    put("sensor.bit_depth", s.sensor.bit_depth().to_string());
    put("sensor.gain", s.sensor.gain.to_string());
    put("sensor.exposure_time", s.sensor.exposure_time.to_string());
    put(
        "sensor.read_noise_sigma",
        s.sensor.read_noise_sigma.to_string(),
    );
    put("sensor.shot_noise", s.sensor.shot_noise.to_string());
    if let Some(db) = s.sensor.intrinsic_dr_db {
        put("sensor.intrinsic_dr_db", db.to_string());
    }
    put("dmd.max_exponent", s.dmd.max_exponent.to_string());
    put("dmd.t_ratio", s.dmd.t_ratio.to_string());
    put("dmd.off_leakage", s.dmd.off_leakage.to_string());
    put("dmd.psf_sigma", s.dmd.psf_sigma.to_string());
    let c = &s.controller;
    put(
        "controller.threshold_factor",
        c.threshold_factor.to_string(),
    );
    if let Some(n) = c.max_iterations {
        put("controller.max_iterations", n.to_string());
    }
    put("controller.record_trace", c.record_trace.to_string());
    put("controller.literal_break", c.literal_break.to_string());
    if !c.suppression.is_empty() {
        let entries: Vec<String> = c
            .suppression
            .iter()
            .map(|r| format!("{} {} {} {} {}", r.x0, r.y0, r.x1, r.y1, r.exponent))
            .collect();
        put("controller.suppression", entries.join("; "));
    }
    let g = &s.dic;
    put("dic.subset_size", g.subset_size.to_string());
    put("dic.grid_step", g.grid_step.to_string());
    put("dic.max_iterations", g.max_iterations.to_string());
    put("dic.convergence_tol", g.convergence_tol.to_string());
    put("dic.zncc_accept", g.zncc_accept.to_string());
    put("dic.strain_window", g.strain_window.to_string());
    put("dic.search_radius", g.search_radius.to_string());
    if let Some(b) = g.border {
        put("dic.border", b.to_string());
    }
    put("experiment.repetitions", s.repetitions.to_string());
    put("experiment.noise_seed", s.noise_seed.to_string());
    put("experiment.gamma", s.gamma.to_string());
    put("experiment.level_gains", join(&s.strain.level_gains));
    put(
        "experiment.hotspot_sigma_frac",
        s.strain.hotspot_sigma_frac.to_string(),
    );
    put(
        "experiment.hotspot_peak_gain",
        s.strain.hotspot_peak_gain.to_string(),
    );
    put("experiment.glares", join(&s.quality.glares));
    put("clahe.clip_limit", s.quality.clahe.clip_limit.to_string());
    put("clahe.tiles_x", s.quality.clahe.tiles.0.to_string());
    put("clahe.tiles_y", s.quality.clahe.tiles.1.to_string());
    put("sve.scales", join(s.quality.sve.scales.iter().flatten()));
    o
}
