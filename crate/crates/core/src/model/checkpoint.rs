//! Versioned text checkpoint: the model configuration as `key = value`
//! lines followed by every parameter as `name rows cols trainable` and one
//! line of comma-separated values.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use super::network::{ModelConfig, ModelParams};
use crate::attention::{CabConfig, CabScalars, MixtureConfig};
use crate::error::{CabError, Result};
use crate::numerics::{Matrix, ParamSet};

const MAGIC: &str = "cab-checkpoint v1";

impl ModelConfig {
    /// Key/value form used by checkpoints; the thread count is a runtime
    /// setting and is not stored.
    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        let mx = &self.mixture;
        vec![
            ("task", self.task.to_string()),
            ("seq_len", self.seq_len.to_string()),
            ("d_in", self.d_in.to_string()),
            ("classes", self.classes.to_string()),
            ("blocks", self.blocks.to_string()),
            ("d_ff", self.d_ff.to_string()),
            ("positional", self.positional.to_string()),
            ("h", mx.h.to_string()),
            ("m", mx.m.to_string()),
            ("d_model", mx.d_model.to_string()),
            ("d_k", mx.d_k.to_string()),
            ("temporal", mx.temporal.to_string()),
            ("c", mx.cab.c.to_string()),
            ("lag_path", mx.cab.lag_path.to_string()),
            ("lambda_mode", mx.cab.lambda_mode.to_string()),
            ("filtering", mx.cab.filtering.to_string()),
            ("aggregation", mx.cab.aggregation.to_string()),
            ("lambda_init", self.cab_init.lambda.to_string()),
            ("beta_init", self.cab_init.beta.to_string()),
            ("tau_init", self.cab_init.tau.to_string()),
            ("learn_beta", self.learn_beta.to_string()),
        ]
    }

    pub fn from_pairs(pairs: &BTreeMap<String, String>) -> Result<Self> {
        fn get<T: FromStr>(pairs: &BTreeMap<String, String>, key: &str) -> Result<T> {
            let raw = pairs
                .get(key)
                .ok_or_else(|| CabError::Config(format!("missing config key '{key}'")))?;
            raw.parse()
                .map_err(|_| CabError::Config(format!("config key '{key}' has invalid value '{raw}'")))
        }
        let cfg = Self {
            task: get(pairs, "task")?,
            seq_len: get(pairs, "seq_len")?,
            d_in: get(pairs, "d_in")?,
            classes: get(pairs, "classes")?,
            blocks: get(pairs, "blocks")?,
            d_ff: get(pairs, "d_ff")?,
            positional: get(pairs, "positional")?,
            mixture: MixtureConfig {
                h: get(pairs, "h")?,
                m: get(pairs, "m")?,
                d_model: get(pairs, "d_model")?,
                d_k: get(pairs, "d_k")?,
                temporal: get(pairs, "temporal")?,
                cab: CabConfig {
                    c: get(pairs, "c")?,
                    lag_path: get(pairs, "lag_path")?,
                    lambda_mode: get(pairs, "lambda_mode")?,
                    filtering: get(pairs, "filtering")?,
                    aggregation: get(pairs, "aggregation")?,
                    ..CabConfig::default()
                },
            },
            cab_init: CabScalars {
                lambda: get(pairs, "lambda_init")?,
                beta: get(pairs, "beta_init")?,
                tau: get(pairs, "tau_init")?,
            },
            learn_beta: get(pairs, "learn_beta")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

pub fn checkpoint_to_string(cfg: &ModelConfig, params: &ModelParams) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{MAGIC}");
    let pairs = cfg.to_pairs();
    let _ = writeln!(out, "config {}", pairs.len());
    for (k, v) in pairs {
        let _ = writeln!(out, "{k} = {v}");
    }
    let list = params.params();
    let _ = writeln!(out, "params {}", list.len());
    for p in list {
        let (r, c) = p.value.shape();
        let _ = writeln!(out, "{} {r} {c} {}", p.name, u8::from(p.trainable));
        let values: Vec<String> = p.value.as_slice().iter().map(f64::to_string).collect();
        let _ = writeln!(out, "{}", values.join(","));
    }
    out
}

fn perr(line: usize, msg: impl Into<String>) -> CabError {
    CabError::Parse {
        line,
        msg: msg.into(),
    }
}

fn count_line(lines: &[&str], idx: usize, key: &str) -> Result<usize> {
    let line = lines.get(idx).ok_or_else(|| perr(idx + 1, format!("missing '{key}' line")))?;
    line.strip_prefix(key)
        .and_then(|r| r.trim().parse().ok())
        .ok_or_else(|| perr(idx + 1, format!("expected '{key} <count>', found '{line}'")))
}

pub fn checkpoint_from_str(text: &str) -> Result<(ModelConfig, ModelParams)> {
    let lines: Vec<&str> = text.lines().collect();
    if lines.first().map(|l| l.trim_end()) != Some(MAGIC) {
        return Err(perr(1, format!("missing '{MAGIC}' header")));
    }
    let n_config = count_line(&lines, 1, "config")?;
    let mut pairs = BTreeMap::new();
    for idx in 2..2 + n_config {
        let line = lines.get(idx).ok_or_else(|| perr(idx + 1, "truncated config section"))?;
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| perr(idx + 1, format!("expected 'key = value', found '{line}'")))?;
        pairs.insert(k.trim().to_string(), v.trim().to_string());
    }
    let cfg = ModelConfig::from_pairs(&pairs)?;
    let mut params = ModelParams::init(&cfg, 0)?;

    let mut idx = 2 + n_config;
    let n_params = count_line(&lines, idx, "params")?;
    idx += 1;
    let mut slots = params.params_mut();
    if slots.len() != n_params {
        return Err(perr(
            idx,
            format!("checkpoint has {n_params} parameters, configuration implies {}", slots.len()),
        ));
    }
    for slot in slots.iter_mut() {
        let head = lines.get(idx).ok_or_else(|| perr(idx + 1, "truncated parameter section"))?;
        let fields: Vec<&str> = head.split_whitespace().collect();
        let [name, rows, cols, trainable] = fields[..] else {
            return Err(perr(idx + 1, format!("expected 'name rows cols trainable', found '{head}'")));
        };
        let shape = (
            rows.parse::<usize>().map_err(|_| perr(idx + 1, "invalid row count"))?,
            cols.parse::<usize>().map_err(|_| perr(idx + 1, "invalid column count"))?,
        );
        if name != slot.name || shape != slot.value.shape() {
            return Err(perr(
                idx + 1,
                format!(
                    "parameter '{name}' {shape:?} does not match expected '{}' {:?}",
                    slot.name,
                    slot.value.shape()
                ),
            ));
        }
        let body = lines.get(idx + 1).ok_or_else(|| perr(idx + 2, "missing parameter values"))?;
        let values: Vec<f64> = body
            .split(',')
            .map(|v| v.trim().parse::<f64>().map_err(|_| perr(idx + 2, format!("invalid number '{v}'"))))
            .collect::<Result<_>>()?;
        slot.value = Matrix::new(shape.0, shape.1, values).map_err(|e| perr(idx + 2, e.to_string()))?;
        slot.trainable = trainable == "1";
        idx += 2;
    }
    Ok((cfg, params))
}

pub fn save_checkpoint(path: impl AsRef<Path>, cfg: &ModelConfig, params: &ModelParams) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, checkpoint_to_string(cfg, params)).map_err(|e| CabError::Io(format!("{}: {e}", path.display())))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(ModelConfig, ModelParams)> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| CabError::Io(format!("{}: {e}", path.display())))?;
    checkpoint_from_str(&text)
}
