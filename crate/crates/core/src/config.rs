//! Line-oriented `key = value` run configuration.
//!
//! Blank lines and `#` comments are ignored. Every key is optional and falls
//! back to the default listed in [`KEYS`]; an unrecognised key is an error.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::events::{Motion, SynthConfig};
use crate::numerics::Rng;
use crate::ssm::Discretization;
use crate::tracker::{Modality, ModelConfig, TrackOptions, TrainConfig};

/// Every accepted key with its default value and a one-line description.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("channels", "32", "token width C"),
    ("depth", "2", "blocks per modality backbone"),
    ("state", "8", "SSM state size N"),
    ("conv_width", "4", "depthwise causal conv kernel"),
    ("patch", "8", "patch side in pixels"),
    ("template_size", "24", "template crop side in pixels"),
    ("search_size", "48", "search crop side in pixels"),
    ("ssm_mode", "exact", "ZOH input factor: exact | simplified"),
    ("modality", "fused", "rgb | event | fused"),
    ("steps", "2000", "optimizer steps"),
    ("batch", "8", "template/search pairs per step"),
    ("lr", "0.0004", "AdamW learning rate"),
    ("weight_decay", "0.0001", "AdamW decoupled weight decay"),
    ("seed", "0", "seed for initialization, sampling and synthesis"),
    ("sequences", "4", "sequences written by synth"),
    ("width", "64", "synthetic frame width"),
    ("height", "64", "synthetic frame height"),
    ("frames", "50", "frames per synthetic sequence"),
    ("object_size", "12", "side of the synthetic target"),
    ("motion", "linear", "linear | sinusoidal | piecewise"),
    ("speed", "2", "target speed in pixels per frame"),
    ("theta", "0.15", "event contrast threshold"),
    ("hdr_every", "2", "every k-th frame over-exposed; 0 disables"),
    ("window", "false", "Hann window on the score map while tracking"),
];

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub synth: SynthConfig,
    pub sequences: usize,
    pub track: TrackOptions,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::parse("").expect("defaults parse")
    }
}

fn value<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::config(format!("`{key}`: cannot parse {v:?}")))
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries: Vec<(&str, String)> =
            KEYS.iter().map(|&(k, d, _)| (k, d.to_string())).collect();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("line {}: expected `key = value`", n + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            let slot = entries
                .iter_mut()
                .find(|(name, _)| *name == k)
                .ok_or_else(|| Error::config(format!("line {}: unknown key `{k}`", n + 1)))?;
            slot.1 = v.to_string();
        }
        let get = |k: &str| -> &str { &entries.iter().find(|(n, _)| *n == k).unwrap().1 };
        macro_rules! num {
            ($k:literal) => {
                value($k, get($k))?
            };
        }
        let model = ModelConfig {
            channels: num!("channels"),
            depth: num!("depth"),
            state: num!("state"),
            conv_width: num!("conv_width"),
            patch: num!("patch"),
            template_size: num!("template_size"),
            search_size: num!("search_size"),
            mode: get("ssm_mode").parse::<Discretization>()?,
            modality: get("modality").parse::<Modality>()?,
        };
        model.validate()?;
        let mut train = TrainConfig {
            steps: num!("steps"),
            batch: num!("batch"),
            seed: num!("seed"),
            ..TrainConfig::default()
        };
        train.optim.lr = num!("lr");
        train.optim.weight_decay = num!("weight_decay");
        if train.batch == 0 || !(train.optim.lr > 0.0) || !(train.optim.weight_decay >= 0.0) {
            return Err(Error::config("batch and lr must be positive, weight_decay non-negative"));
        }
        let side: f64 = num!("object_size");
        let synth = SynthConfig {
            width: num!("width"),
            height: num!("height"),
            frames: num!("frames"),
            object_w: side,
            object_h: side,
            motion: get("motion").parse::<Motion>()?,
            speed: num!("speed"),
            theta: num!("theta"),
            hdr_every: num!("hdr_every"),
            ..SynthConfig::default()
        };
        synth.validate()?;
        let sequences: usize = num!("sequences");
        if sequences == 0 {
            return Err(Error::config("sequences must be at least 1"));
        }
        let track = TrackOptions {
            window: num!("window"),
            keep_maps: false,
        };
        Ok(Self {
            model,
            train,
            synth,
            sequences,
            track,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Seed of synthetic sequence `index`.
    pub fn sequence_seed(&self, index: usize) -> u64 {
        Rng::new(self.train.seed).fork(1000 + index as u64).next_u64()
    }

    /// The default file with every key and its description.
    pub fn documented_defaults() -> String {
        let mut s = String::new();
        for (k, d, help) in KEYS {
            let _ = writeln!(s, "# {help}\n{k} = {d}");
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_the_toy_model() {
        let c = RunConfig::default();
        assert_eq!(c.model, ModelConfig::toy());
        assert_eq!(c.train.steps, 2000);
        assert_eq!(c.train.optim.lr, 4e-4);
        assert!(!c.track.window);
        assert_eq!(RunConfig::parse(&RunConfig::documented_defaults()).unwrap(), c);
    }

    #[test]
    fn overrides_and_comments() {
        let c = RunConfig::parse("# toy\nchannels = 16 # narrower\nssm_mode=simplified\nwindow = true\n").unwrap();
        assert_eq!(c.model.channels, 16);
        assert_eq!(c.model.mode, Discretization::Simplified);
        assert!(c.track.window);
    }

    #[test]
    fn unknown_keys_and_bad_values_rejected() {
        for bad in ["chanels = 3", "depth = two", "modality = thermal", "no equals sign", "batch = 0"] {
            assert!(matches!(RunConfig::parse(bad), Err(Error::Config(_))), "{bad}");
        }
    }

    #[test]
    fn sequence_seeds_differ() {
        let c = RunConfig::default();
        assert_ne!(c.sequence_seed(0), c.sequence_seed(1));
    }
}
