//! Flat `key = value` configuration files mirroring `FitConfig`.

use std::path::Path;

use dimclust::em::Init;
use dimclust::FitConfig;

use crate::failure::Failure;

/// Applies every `key = value` line of `text` to `config`. Blank lines and
/// lines starting with `#` are ignored.
pub fn apply(config: &mut FitConfig, text: &str, origin: &str) -> Result<(), Failure> {
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Failure::usage(format!("{origin}:{}: expected key=value, got {line:?}", idx + 1)))?;
        set(config, key.trim(), value.trim()).map_err(|m| Failure::usage(format!("{origin}:{}: {m}", idx + 1)))?;
    }
    Ok(())
}

pub fn load(config: &mut FitConfig, path: &Path) -> Result<(), Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::data(format!("cannot read config {}: {e}", path.display())))?;
    apply(config, &text, &path.display().to_string())
}

fn set(config: &mut FitConfig, key: &str, value: &str) -> Result<(), String> {
    fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, String> {
        value.parse().map_err(|_| format!("bad value {value:?} for {key}"))
    }
    match key {
        "tol" => config.tol = parse(key, value)?,
        "max_iter" => config.max_iter = parse(key, value)?,
        "restarts" => config.restarts = parse(key, value)?,
        "seed" => config.seed = parse(key, value)?,
        "d_min" => config.d_min = parse(key, value)?,
        "d_max" => config.d_max = parse(key, value)?,
        "newton_max_inner" => config.newton_max_inner = parse(key, value)?,
        "max_components" => config.max_components = parse(key, value)?,
        "init" => config.init = value.parse::<Init>().map_err(|e| e.to_string())?,
        _ => return Err(format!("unknown config key {key:?}")),
    }
    Ok(())
}
