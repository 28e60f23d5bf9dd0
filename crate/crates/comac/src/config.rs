//! Flat `key = value` config files keyed by [`TrainConfig`] field names.
//!
//! Blank lines and lines starting with `#` are ignored. `d0 = auto` selects
//! the default reduced width.

use std::fs;
use std::path::Path;
use std::str::FromStr;

use comac_core::model::Strategy;
use comac_core::objective::TrainConfig;

use crate::error::{Error, Result};

pub const KEYS: [&str; 12] = [
    "alpha",
    "beta",
    "gamma",
    "w_star",
    "p_star",
    "p_sr",
    "d0",
    "strategy",
    "learning_rate",
    "epochs",
    "seed",
    "normalize_tokens",
];

pub fn parse_strategy(s: &str) -> Result<Strategy> {
    match s.to_ascii_lowercase().as_str() {
        "tfidf" | "tf-idf" => Ok(Strategy::TfIdf),
        "ff" | "feedforward" | "feed-forward" => Ok(Strategy::FeedForward),
        other => Err(Error::Config(format!("unknown strategy {other:?}"))),
    }
}

pub fn strategy_name(s: Strategy) -> &'static str {
    match s {
        Strategy::TfIdf => "tfidf",
        Strategy::FeedForward => "ff",
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

/// Sets one field by name.
pub fn set_field(cfg: &mut TrainConfig, key: &str, value: &str) -> Result<()> {
    let value = value.trim();
    match key {
        "alpha" => cfg.alpha = parse(key, value)?,
        "beta" => cfg.beta = parse(key, value)?,
        "gamma" => cfg.gamma = parse(key, value)?,
        "w_star" => cfg.w_star = parse(key, value)?,
        "p_star" => cfg.p_star = parse(key, value)?,
        "p_sr" => cfg.p_sr = parse(key, value)?,
        "d0" => {
            cfg.d0 = match value {
                "auto" | "" => None,
                v => Some(parse(key, v)?),
            }
        }
        "strategy" => cfg.strategy = parse_strategy(value)?,
        "learning_rate" => cfg.learning_rate = parse(key, value)?,
        "epochs" => cfg.epochs = parse(key, value)?,
        "seed" => cfg.seed = parse(key, value)?,
        "normalize_tokens" => cfg.normalize_tokens = parse(key, value)?,
        other => return Err(Error::Config(format!("unknown key {other:?}"))),
    }
    Ok(())
}

/// Applies every assignment in `text` on top of `base` and validates the result.
pub fn parse_config(text: &str, base: TrainConfig) -> Result<TrainConfig> {
    let mut cfg = base;
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
            line: i + 1,
            message: format!("expected key = value, got {line:?}"),
        })?;
        set_field(&mut cfg, key.trim(), value).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn config_to_text(cfg: &TrainConfig) -> String {
    let d0 = cfg.d0.map_or_else(|| "auto".to_string(), |d| d.to_string());
    format!(
        "alpha = {}\nbeta = {}\ngamma = {}\nw_star = {}\np_star = {}\np_sr = {}\nd0 = {d0}\nstrategy = {}\nlearning_rate = {}\nepochs = {}\nseed = {}\nnormalize_tokens = {}\n",
        cfg.alpha,
        cfg.beta,
        cfg.gamma,
        cfg.w_star,
        cfg.p_star,
        cfg.p_sr,
        strategy_name(cfg.strategy),
        cfg.learning_rate,
        cfg.epochs,
        cfg.seed,
        cfg.normalize_tokens,
    )
}

pub fn load_config(path: &Path) -> Result<TrainConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text, TrainConfig::default())
}
