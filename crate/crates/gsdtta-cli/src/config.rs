//! Run-config parsing: JSON mirroring [`AdaptConfig`] or flat
//! `key=value` lines. Unknown keys are hard errors in both forms.

use std::fs;
use std::path::Path;

use gsdtta::adapt::{AdaptConfig, LabelRefresh};
use gsdtta::nn::AdaptScope;
use gsdtta::selftrain::LabelRule;
use gsdtta::{Error, Result};

/// Loads a run config. A leading `{` selects JSON; anything else is
/// parsed as flat `key=value` lines (`#` comments allowed). Both start
/// from the default configuration, so a config file only needs the keys
/// it overrides.
pub fn load_run_config(path: &Path) -> Result<AdaptConfig> {
    let body = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let trimmed = body.trim_start();
    let cfg = if trimmed.starts_with('{') {
        serde_json::from_str(&body).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            msg: e.to_string(),
        })?
    } else {
        parse_flat(path, &body)?
    };
    cfg.validate()?;
    Ok(cfg)
}

fn parse_flat(path: &Path, body: &str) -> Result<AdaptConfig> {
    let mut cfg = AdaptConfig::default();
    for (idx, raw) in body.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            line: idx + 1,
            msg: format!("expected key=value, got `{line}`"),
        })?;
        let key = key.trim();
        let value = value.trim();
        apply_key(&mut cfg, key, value).map_err(|msg| Error::Parse {
            path: path.to_path_buf(),
            line: idx + 1,
            msg,
        })?;
    }
    Ok(cfg)
}

fn apply_key(cfg: &mut AdaptConfig, key: &str, value: &str) -> std::result::Result<(), String> {
    fn real(v: &str) -> std::result::Result<f64, String> {
        v.parse().map_err(|_| format!("invalid real `{v}`"))
    }
    fn integer(v: &str) -> std::result::Result<usize, String> {
        v.parse().map_err(|_| format!("invalid integer `{v}`"))
    }
    fn boolean(v: &str) -> std::result::Result<bool, String> {
        match v {
            "true" | "1" => Ok(true),
            "false" | "0" => Ok(false),
            _ => Err(format!("invalid boolean `{v}`")),
        }
    }
    match key {
        "alpha" => cfg.alpha = real(value)?,
        "beta1" => cfg.beta1 = real(value)?,
        "beta2" => cfg.beta2 = real(value)?,
        "beta3" => cfg.beta3 = real(value)?,
        "m_band" => cfg.m_band = integer(value)?,
        "lr" => cfg.lr = real(value)?,
        "batch_size" => cfg.batch_size = integer(value)?,
        "input_steps_per_cycle" => cfg.input_steps_per_cycle = integer(value)?,
        "model_steps_per_cycle" => cfg.model_steps_per_cycle = integer(value)?,
        "total_steps" => cfg.total_steps = integer(value)?,
        "seed" => {
            cfg.seed = value
                .parse()
                .map_err(|_| format!("invalid seed `{value}`"))?
        }
        "enable_gsdps" => cfg.toggles.enable_gsdps = boolean(value)?,
        "enable_gsgma" => cfg.toggles.enable_gsgma = boolean(value)?,
        "eigenmap_guided" => cfg.toggles.eigenmap_guided = boolean(value)?,
        "k" => cfg.graph.k = integer(value)?,
        "delta" => cfg.graph.delta = real(value)?,
        "gamma" => cfg.graph.gamma = real(value)?,
        "quartic_rbf" => cfg.graph.quartic_rbf = boolean(value)?,
        "band_excludes_zero_modes" => cfg.band_excludes_zero_modes = boolean(value)?,
        "descriptor_dim" => cfg.descriptor_dim = integer(value)?,
        "adapt_scope" => {
            cfg.adapt_scope = match value {
                "all" => AdaptScope::All,
                "head_only" => AdaptScope::HeadOnly,
                _ => return Err(format!("invalid adapt_scope `{value}`")),
            }
        }
        "label_rule" => {
            cfg.label_rule = match value {
                "argmax_sim" => LabelRule::ArgmaxSim,
                "literal_argmin" => LabelRule::LiteralArgmin,
                _ => return Err(format!("invalid label_rule `{value}`")),
            }
        }
        "label_refresh" => {
            cfg.label_refresh = match value {
                "every_step" => LabelRefresh::EveryStep,
                "per_cycle" => LabelRefresh::PerCycle,
                _ => return Err(format!("invalid label_refresh `{value}`")),
            }
        }
        _ => return Err(format!("unknown config key `{key}`")),
    }
    Ok(())
}
