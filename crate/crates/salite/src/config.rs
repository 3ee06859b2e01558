//! Flat `key = value` run configuration: defaults, then a file, then flags.

use std::fs;
use std::path::Path;

use salite_core::model::ModelSpec;
use salite_core::optim::TrainConfig;

use crate::error::{AppError, Result};

/// Keys under `model.` after `model.preset`.
pub const MODEL_KEYS: [&str; 8] = [
    "backbone",
    "input_size",
    "decoder_channels",
    "scales",
    "renet_hidden",
    "scale_merge",
    "local_kernel",
    "local_dilation",
];

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: ModelSpec,
    pub train: TrainConfig,
    /// Worker threads for `eval`.
    pub eval_threads: usize,
}

impl Default for RunConfig {
    /// The CPU-sized preset: `desk` model, 2000 steps.
    fn default() -> Self {
        RunConfig {
            model: ModelSpec::desk(),
            train: TrainConfig::desk(),
            eval_threads: 1,
        }
    }
}

struct Entry {
    origin: String,
    key: String,
    value: String,
}

fn split(line: &str, origin: String) -> Result<Entry> {
    let (k, v) = line.split_once('=').ok_or_else(|| AppError::Config {
        origin: origin.clone(),
        reason: "expected `key = value`".into(),
    })?;
    Ok(Entry {
        origin,
        key: k.trim().to_string(),
        value: v.trim().to_string(),
    })
}

impl RunConfig {
    /// Every key with its default, one `key = value` line each.
    pub fn describe() -> String {
        RunConfig::default().to_text()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("model.preset = desk\n");
        for line in self.model.to_text().lines() {
            s.push_str("model.");
            s.push_str(line);
            s.push('\n');
        }
        s.push_str(&self.train.to_text());
        s.push_str(&format!("eval.threads = {}\n", self.eval_threads));
        s
    }

    /// Apply `text` (a config file body) and then `overrides` (`key=value`).
    /// `model.preset` entries are applied before any other key so the preset
    /// never clobbers an explicit setting.
    pub fn parse(text: &str, file: &str, overrides: &[String]) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            entries.push(split(line, format!("{file}:{}", i + 1))?);
        }
        for o in overrides {
            entries.push(split(o, format!("--set {o}"))?);
        }
        let mut cfg = RunConfig::default();
        let (presets, rest): (Vec<&Entry>, Vec<&Entry>) = entries.iter().partition(|e| e.key == "model.preset");
        for e in presets.into_iter().chain(rest) {
            cfg.set(&e.key, &e.value).map_err(|reason| AppError::Config {
                origin: e.origin.clone(),
                reason,
            })?;
        }
        cfg.model.validate().map_err(|e| AppError::Config {
            origin: "model".into(),
            reason: e.to_string(),
        })?;
        cfg.train.validate().map_err(|e| AppError::Config {
            origin: "trainer".into(),
            reason: e.to_string(),
        })?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        match path {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| AppError::io(p, e))?;
                Self::parse(&text, &p.display().to_string(), overrides)
            }
            None => Self::parse("", "", overrides),
        }
    }

    fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        if key == "model.preset" {
            self.model = ModelSpec::preset(value).map_err(|e| e.to_string())?;
            return Ok(());
        }
        if let Some(k) = key.strip_prefix("model.") {
            if !MODEL_KEYS.contains(&k) {
                return Err(format!("unknown key `{key}`"));
            }
            return self.model.set(k, value).map_err(|e| e.to_string());
        }
        if TrainConfig::knows(key) {
            return self.train.set(key, value).map_err(|e| e.to_string());
        }
        match key {
            "eval.threads" => match value.parse::<usize>() {
                Ok(n) if n >= 1 => self.eval_threads = n,
                _ => return Err(format!("bad value `{value}` for `{key}`")),
            },
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str, flags: &[&str]) -> Result<RunConfig> {
        let flags: Vec<String> = flags.iter().map(|s| s.to_string()).collect();
        RunConfig::parse(text, "run.cfg", &flags)
    }

    #[test]
    fn empty_file_gives_defaults() {
        let c = parse("", &[]).unwrap();
        assert_eq!(c, RunConfig::default());
        let l = c.train.loss;
        assert_eq!((l.lambda1, l.lambda2, l.w0, l.delta), (0.6, 0.4, 0.6, 1.0));
        assert_eq!(salite_core::metrics::BETA_SQ, 0.3);
    }

    #[test]
    fn flags_override_the_file() {
        let c = parse("trainer.batch = 5\n", &["trainer.batch=2"]).unwrap();
        assert_eq!(c.train.batch, 2);
    }

    #[test]
    fn preset_applies_before_explicit_model_keys() {
        let c = parse("model.input_size = 112\nmodel.preset = full\n", &[]).unwrap();
        assert_eq!(c.model.backbone, ModelSpec::full().backbone);
        assert_eq!(c.model.input_size, 112);
    }

    #[test]
    fn errors_name_their_origin() {
        match parse("# c\nloss.lambda1 = maybe\n", &[]).unwrap_err() {
            AppError::Config { origin, .. } => assert_eq!(origin, "run.cfg:2"),
            e => panic!("{e}"),
        }
        match parse("", &["nope.key=1"]).unwrap_err() {
            AppError::Config { origin, reason } => {
                assert_eq!(origin, "--set nope.key=1");
                assert!(reason.contains("unknown key"));
            }
            e => panic!("{e}"),
        }
        assert!(parse("model.bogus = 1\n", &[]).is_err());
        assert!(parse("eval.threads = 0\n", &[]).is_err());
        assert!(parse("trainer.batch 5\n", &[]).is_err());
        assert!(parse("loss.lambda1 = 0.7\n", &[]).is_err());
    }

    #[test]
    fn described_defaults_parse_to_defaults() {
        assert_eq!(parse(&RunConfig::describe(), &[]).unwrap(), RunConfig::default());
    }
}
