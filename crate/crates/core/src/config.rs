//! TOML run configuration with strict keys and `section.key=value` overrides.
//!
//! ```toml
//! [mesh]
//! n_base = 10
//! refine_levels = 1
//! corner_grading = 0.25
//!
//! [params]
//! alpha = 1.0
//! beta = 2.0
//! gamma = 2.0
//! lambda = 4.0
//! sigma = 3.0
//! xi = 1.0
//! d_L = 0.01
//! d_P = 0.02
//! d_l = 0.0
//! d_p = 0.0
//!
//! [time]
//! dt = 1e-3
//! t_end = 1.0
//! record_every = 100
//!
//! [initial]
//! L0 = 0.8
//! P0 = 0.6
//! l0 = 0.3
//! p0 = 0.4
//!
//! [solver]
//! tolerance = 1e-10
//! method = "sparse-lu"
//! mass = "consistent"
//!
//! [model]
//! name = "full"
//! ```
//!
//! `[params]` and `[time]` are required; the other sections fall back to the
//! values above.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::{model_by_name, MassKind};
use crate::mesh::MeshSpec;
use crate::params::ModelParams;
use crate::solver::{solver_by_name, DEFAULT_METHOD};
use crate::transient::{FieldInit, InitialData, SimConfig};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    #[serde(default)]
    mesh: MeshSpec,
    params: ModelParams,
    time: TimeSection,
    #[serde(default)]
    initial: InitialData,
    #[serde(default)]
    solver: SolverSection,
    #[serde(default)]
    model: ModelSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TimeSection {
    dt: f64,
    t_end: f64,
    #[serde(default = "default_record_every")]
    record_every: usize,
}

fn default_record_every() -> usize {
    100
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct SolverSection {
    tolerance: f64,
    method: String,
    mass: MassKind,
}

impl Default for SolverSection {
    fn default() -> Self {
        Self {
            tolerance: 1e-10,
            method: DEFAULT_METHOD.into(),
            mass: MassKind::Consistent,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct ModelSection {
    name: String,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            name: "full".into(),
        }
    }
}

impl From<&SimConfig> for ConfigFile {
    fn from(c: &SimConfig) -> Self {
        Self {
            mesh: c.mesh,
            params: c.params,
            time: TimeSection {
                dt: c.dt,
                t_end: c.t_end,
                record_every: c.record_every,
            },
            initial: c.initial.clone(),
            solver: SolverSection {
                tolerance: c.tolerance,
                method: c.solver.clone(),
                mass: c.mass_kind,
            },
            model: ModelSection {
                name: c.model.clone(),
            },
        }
    }
}

impl From<ConfigFile> for SimConfig {
    fn from(f: ConfigFile) -> Self {
        Self {
            params: f.params,
            dt: f.time.dt,
            t_end: f.time.t_end,
            initial: f.initial,
            record_every: f.time.record_every,
            mesh: f.mesh,
            tolerance: f.solver.tolerance,
            solver: f.solver.method,
            mass_kind: f.solver.mass,
            model: f.model.name,
        }
    }
}

/// Renders a configuration in the file format accepted by [`parse_config_str`].
pub fn to_toml(config: &SimConfig) -> String {
    toml::to_string(&ConfigFile::from(config))
        .expect("configuration is always representable as TOML")
}

/// 1-based line of `key = …` inside `[section]` (any section if `None`); 0 if absent.
fn locate_key(src: &str, section: Option<&str>, key: &str) -> usize {
    let mut current = String::new();
    for (k, line) in src.lines().enumerate() {
        let t = line.trim();
        if let Some(name) = t.strip_prefix('[').and_then(|r| r.strip_suffix(']')) {
            current = name.trim().to_string();
            continue;
        }
        let Some((lhs, _)) = t.split_once('=') else {
            continue;
        };
        let lhs = lhs.trim().trim_matches('"');
        let in_section = section.is_none_or(|s| s == current);
        if in_section && lhs == key {
            return k + 1;
        }
    }
    0
}

fn line_at(src: &str, offset: usize) -> usize {
    src[..offset.min(src.len())]
        .bytes()
        .filter(|&b| b == b'\n')
        .count()
        + 1
}

fn backticked(msg: &str) -> Option<&str> {
    let start = msg.find('`')? + 1;
    let len = msg[start..].find('`')?;
    Some(&msg[start..start + len])
}

fn syntax_error(
    effective: &str,
    original: &str,
    has_overrides: bool,
    e: &toml::de::Error,
) -> Error {
    let message = e.message().trim().to_string();
    let span_line = e.span().map(|s| line_at(effective, s.start));
    let line_text = span_line
        .and_then(|l| effective.lines().nth(l - 1))
        .unwrap_or("")
        .trim();
    let key = if message.starts_with("unknown field") || message.starts_with("missing field") {
        backticked(&message).map(str::to_string)
    } else {
        line_text
            .split_once('=')
            .map(|(k, _)| k.trim().trim_matches('"').to_string())
    }
    .unwrap_or_else(|| line_text.to_string());
    let line = match (has_overrides, span_line) {
        (false, Some(l)) => l,
        _ => locate_key(original, None, &key),
    };
    Error::Config { key, line, message }
}

/// Applies `section.key=value` overrides to the parsed document.
fn apply_overrides(table: &mut toml::Table, overrides: &[String]) -> Result<()> {
    for o in overrides {
        let usage = || {
            Error::Usage(format!(
                "override `{o}` is not of the form section.key=value"
            ))
        };
        let (path, raw) = o.split_once('=').ok_or_else(usage)?;
        let (section, key) = path.trim().split_once('.').ok_or_else(usage)?;
        let (section, key, raw) = (section.trim(), key.trim(), raw.trim());
        if section.is_empty() || key.is_empty() {
            return Err(usage());
        }
        let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(raw.to_string()));
        let entry = table
            .entry(section.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        match entry {
            toml::Value::Table(t) => {
                t.insert(key.to_string(), value);
            }
            _ => {
                return Err(Error::Config {
                    key: section.to_string(),
                    line: 0,
                    message: "not a section".into(),
                })
            }
        }
    }
    Ok(())
}

fn semantic_checks(c: &SimConfig, src: &str) -> Result<()> {
    let err = |section: &str, key: &str, message: String| Error::Config {
        key: key.to_string(),
        line: locate_key(src, Some(section), key),
        message,
    };
    if let Err((key, msg)) = c.params.check() {
        return Err(err("params", key, msg));
    }
    if !(c.dt > 0.0 && c.dt.is_finite()) {
        return Err(err("time", "dt", format!("must be > 0, got {}", c.dt)));
    }
    if !(c.t_end >= c.dt && c.t_end.is_finite()) {
        return Err(err(
            "time",
            "t_end",
            format!("must be >= dt, got {}", c.t_end),
        ));
    }
    if c.record_every == 0 {
        return Err(err("time", "record_every", "must be >= 1".into()));
    }
    if !(c.tolerance > 0.0 && c.tolerance <= 1e-6) {
        return Err(err(
            "solver",
            "tolerance",
            format!("must lie in (0, 1e-6], got {}", c.tolerance),
        ));
    }
    if let Err(e) = solver_by_name(&c.solver) {
        return Err(err("solver", "method", e.to_string()));
    }
    if let Err(e) = model_by_name(&c.model) {
        return Err(err("model", "name", e.to_string()));
    }
    let m = &c.mesh;
    if m.n_base < 8 || !(m.corner_grading > 0.0 && m.corner_grading <= 1.0) || m.refine_levels > 8 {
        return Err(err(
            "mesh",
            "n_base",
            format!(
                "need n_base >= 8, 0 < corner_grading <= 1, refine_levels <= 8; got {}, {}, {}",
                m.n_base, m.corner_grading, m.refine_levels
            ),
        ));
    }
    Ok(())
}

/// Parses a configuration document, applying `overrides` first.
pub fn parse_config_str(src: &str, overrides: &[String]) -> Result<SimConfig> {
    let mut table: toml::Table = src
        .parse()
        .map_err(|e: toml::de::Error| syntax_error(src, src, false, &e))?;
    let effective = if overrides.is_empty() {
        src.to_string()
    } else {
        apply_overrides(&mut table, overrides)?;
        toml::to_string(&table).map_err(|e| Error::Usage(format!("cannot apply overrides: {e}")))?
    };
    let file: ConfigFile = toml::from_str(&effective)
        .map_err(|e| syntax_error(&effective, src, !overrides.is_empty(), &e))?;
    let config = SimConfig::from(file);
    semantic_checks(&config, src)?;
    Ok(config)
}

/// Reads a configuration file; relative initial-data paths resolve against its directory.
pub fn parse_config(path: &Path, overrides: &[String]) -> Result<SimConfig> {
    let src = std::fs::read_to_string(path)
        .map_err(|e| Error::from(e).context(format!("cannot read {}", path.display())))?;
    let mut config = parse_config_str(&src, overrides)?;
    let base = path.parent().unwrap_or(Path::new("."));
    for init in [
        &mut config.initial.volume_l,
        &mut config.initial.volume_p,
        &mut config.initial.cortex_l,
        &mut config.initial.cortex_p,
    ] {
        if let FieldInit::File(p) = init {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }
    Ok(config)
}

/// Applies overrides to an in-memory configuration (used for presets).
pub fn with_overrides(config: &SimConfig, overrides: &[String]) -> Result<SimConfig> {
    if overrides.is_empty() {
        return Ok(config.clone());
    }
    parse_config_str(&to_toml(config), overrides)
}

#[cfg(test)]
mod tests {
    use super::*;

    const REFERENCE: &str = r#"
[params]
alpha = 1
beta = 2
gamma = 2
lambda = 4
sigma = 3
xi = 1
d_L = 0.01
d_P = 0.02

[time]
dt = 1e-3
t_end = 0.3

[initial]
L0 = 0.8
P0 = 0.6
l0 = 0.3
p0 = 0.4
"#;

    #[test]
    fn reference_configuration() {
        let c = parse_config_str(REFERENCE, &[]).unwrap();
        assert_eq!(c.params, ModelParams::default());
        assert_eq!(c.initial, InitialData::constant(0.8, 0.6, 0.3, 0.4));
        assert_eq!(c.mesh, MeshSpec::default());
        assert_eq!(c.record_every, 100);
    }

    #[test]
    fn negative_surface_diffusion_names_key_and_line() {
        let src = REFERENCE.replace("d_P = 0.02", "d_P = 0.02\nd_l = -0.1");
        match parse_config_str(&src, &[]) {
            Err(Error::Config { key, line, .. }) => {
                assert_eq!(key, "d_l");
                assert_eq!(src.lines().nth(line - 1).unwrap().trim(), "d_l = -0.1");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_key_is_rejected() {
        let src = REFERENCE.replace("xi = 1", "xi = 1\nxi_rate = 5");
        match parse_config_str(&src, &[]) {
            Err(Error::Config { key, line, .. }) => {
                assert_eq!(key, "xi_rate");
                assert_eq!(src.lines().nth(line - 1).unwrap().trim(), "xi_rate = 5");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn malformed_and_missing_values() {
        let src = REFERENCE.replace("beta = 2", "beta = \"two\"");
        assert!(
            matches!(parse_config_str(&src, &[]), Err(Error::Config { key, .. }) if key == "beta")
        );
        let src = REFERENCE.replace("lambda = 4\n", "");
        assert!(
            matches!(parse_config_str(&src, &[]), Err(Error::Config { key, .. }) if key == "lambda")
        );
        let src = REFERENCE.replace("dt = 1e-3", "dt = 1e-3.5");
        assert!(matches!(
            parse_config_str(&src, &[]),
            Err(Error::Config { .. })
        ));
    }

    #[test]
    fn overrides_apply_and_validate() {
        let c = parse_config_str(
            REFERENCE,
            &["params.xi=1000".into(), "mesh.refine_levels=0".into()],
        )
        .unwrap();
        assert_eq!(c.params.xi, 1000.0);
        assert_eq!(c.mesh.refine_levels, 0);
        let e = parse_config_str(REFERENCE, &["params.beta=-1".into()]).unwrap_err();
        assert!(matches!(e, Error::Config { key, .. } if key == "beta"));
        assert!(matches!(
            parse_config_str(REFERENCE, &["nonsense".into()]),
            Err(Error::Usage(_))
        ));
        assert!(matches!(
            parse_config_str(REFERENCE, &["params.xi_rate=2".into()]),
            Err(Error::Config { key, .. }) if key == "xi_rate"
        ));
    }

    #[test]
    fn toml_round_trip() {
        let mut c = SimConfig::default();
        c.params = c.params.with_surface_diffusion(0.02, 0.04);
        c.initial.cortex_p = FieldInit::Values(vec![0.1, 0.2]);
        let back = parse_config_str(&to_toml(&c), &[]).unwrap();
        assert_eq!(back, c);
    }
}
