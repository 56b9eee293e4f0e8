//! Training configuration and its canonical `key = value` text form.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use crate::encoder::Readout;
use crate::error::{PgibError, Result};
use crate::model::{MiMode, ModelConfig};
use crate::optim::DEFAULT_LR;
use crate::prototypes::MctsConfig;

#[derive(Clone, Debug, PartialEq)]
pub struct PgibConfig {
    pub model: ModelConfig,
    /// Percentage of active prototypes removed per merge event.
    pub xi: f64,
    pub epochs: usize,
    pub merge_start: usize,
    pub merge_period: usize,
    pub merge_enabled: bool,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub mcts: MctsConfig,
}

impl Default for PgibConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            xi: 30.0,
            epochs: 300,
            merge_start: 100,
            merge_period: 50,
            merge_enabled: true,
            lr: DEFAULT_LR,
            batch_size: 32,
            seed: 0,
            mcts: MctsConfig::default(),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| PgibError::Config(format!("cannot parse {key} = {value:?}")))
}

impl PgibConfig {
    pub fn validate(&self) -> Result<()> {
        let l = &self.model.loss;
        if [l.alpha1, l.alpha2, l.alpha3].iter().any(|a| !(a.is_finite() && *a >= 0.0)) {
            return Err(PgibError::Config("loss weights must be finite and >= 0".into()));
        }
        if !(l.tau > 0.0) {
            return Err(PgibError::Config("tau must be positive".into()));
        }
        if self.epochs == 0 || self.merge_period == 0 || self.batch_size == 0 || self.model.per_class == 0 {
            return Err(PgibError::Config(
                "epochs, merge_period, batch_size and per_class must be >= 1".into(),
            ));
        }
        if !(0.0..100.0).contains(&self.xi) {
            return Err(PgibError::Config(format!("xi must lie in [0, 100), got {}", self.xi)));
        }
        if !(self.lr > 0.0) {
            return Err(PgibError::Config("lr must be positive".into()));
        }
        self.model.gin.validate()?;
        self.mcts.validate()
    }

    /// Whether a projection/merge event runs at the end of `epoch`. Never
    /// true with merging disabled.
    pub fn is_event_epoch(&self, epoch: usize) -> bool {
        self.merge_enabled && epoch >= self.merge_start && epoch % self.merge_period == 0
    }

    pub fn event_epochs(&self) -> Vec<usize> {
        (1..=self.epochs).filter(|&e| self.is_event_epoch(e)).collect()
    }

    pub fn to_map(&self) -> BTreeMap<&'static str, String> {
        let m = &self.model;
        BTreeMap::from([
            ("alpha1", m.loss.alpha1.to_string()),
            ("alpha2", m.loss.alpha2.to_string()),
            ("alpha3", m.loss.alpha3.to_string()),
            ("mi_mode", m.loss.mi_mode.to_string()),
            ("tau", m.loss.tau.to_string()),
            ("per_class", m.per_class.to_string()),
            ("gin_layers", m.gin.layers.to_string()),
            ("hidden_dim", m.gin.hidden_dim.to_string()),
            ("epsilon_gin", m.gin.epsilon_gin.to_string()),
            ("readout", m.gin.readout.to_string()),
            ("row_norm", m.gin.row_norm.to_string()),
            ("xi", self.xi.to_string()),
            ("epochs", self.epochs.to_string()),
            ("merge_start", self.merge_start.to_string()),
            ("merge_period", self.merge_period.to_string()),
            ("merge_enabled", self.merge_enabled.to_string()),
            ("lr", self.lr.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("seed", self.seed.to_string()),
            ("mcts_iterations", self.mcts.iterations.to_string()),
            ("mcts_min_nodes", self.mcts.min_nodes.to_string()),
            ("mcts_expansion_width", self.mcts.expansion_width.to_string()),
            ("mcts_exploration", self.mcts.exploration.to_string()),
            ("mcts_rollout_limit", self.mcts.rollout_limit.to_string()),
        ])
    }

    /// Sorted `key = value` lines.
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.to_map() {
            writeln!(s, "{k} = {v}").expect("string write");
        }
        s
    }

    /// Sets one key. Unknown keys are errors.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let m = &mut self.model;
        match key {
            "alpha1" => m.loss.alpha1 = parse(key, value)?,
            "alpha2" => m.loss.alpha2 = parse(key, value)?,
            "alpha3" => m.loss.alpha3 = parse(key, value)?,
            "mi_mode" => m.loss.mi_mode = MiMode::from_str(value)?,
            "tau" => m.loss.tau = parse(key, value)?,
            "per_class" | "J" => m.per_class = parse(key, value)?,
            "gin_layers" => m.gin.layers = parse(key, value)?,
            "hidden_dim" => m.gin.hidden_dim = parse(key, value)?,
            "epsilon_gin" => m.gin.epsilon_gin = parse(key, value)?,
            "readout" => m.gin.readout = Readout::from_str(value).map_err(|e| PgibError::Config(e.to_string()))?,
            "row_norm" => m.gin.row_norm = parse(key, value)?,
            "xi" => self.xi = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "merge_start" => self.merge_start = parse(key, value)?,
            "merge_period" => self.merge_period = parse(key, value)?,
            "merge_enabled" => self.merge_enabled = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "mcts_iterations" => self.mcts.iterations = parse(key, value)?,
            "mcts_min_nodes" => self.mcts.min_nodes = parse(key, value)?,
            "mcts_expansion_width" => self.mcts.expansion_width = parse(key, value)?,
            "mcts_exploration" => self.mcts.exploration = parse(key, value)?,
            "mcts_rollout_limit" => self.mcts.rollout_limit = parse(key, value)?,
            other => return Err(PgibError::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Parses `key = value` lines over the defaults. Blank lines and lines
    /// starting with `#` are ignored. Returns the config and any keys it
    /// did not recognize as config keys but were listed in `extra`.
    pub fn from_kv_with(text: &str, extra: &[&str]) -> Result<(Self, BTreeMap<String, String>)> {
        let mut cfg = Self::default();
        let mut rest = BTreeMap::new();
        for (no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| PgibError::Config(format!("line {}: expected key = value", no + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            if extra.contains(&k) {
                rest.insert(k.to_string(), v.to_string());
            } else {
                cfg.set(k, v).map_err(|e| PgibError::Config(format!("line {}: {e}", no + 1)))?;
            }
        }
        cfg.validate()?;
        Ok((cfg, rest))
    }

    pub fn from_kv(text: &str) -> Result<Self> {
        Ok(Self::from_kv_with(text, &[])?.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_schedule() {
        let c = PgibConfig::default();
        c.validate().unwrap();
        assert_eq!(c.event_epochs(), vec![100, 150, 200, 250, 300]);
        assert_eq!(c.model.loss.alpha2, 0.1);
        assert_eq!(c.model.per_class, 7);
        let off = PgibConfig {
            merge_enabled: false,
            ..c
        };
        assert!(off.event_epochs().is_empty());
    }

    #[test]
    fn kv_round_trip() {
        let mut c = PgibConfig::default();
        c.set("alpha1", "0.25").unwrap();
        c.set("mi_mode", "contrastive").unwrap();
        c.set("readout", "mean").unwrap();
        let text = c.to_kv();
        let keys: Vec<&str> = text.lines().map(|l| l.split(" = ").next().unwrap()).collect();
        let mut sorted = keys.clone();
        sorted.sort_unstable();
        assert_eq!(keys, sorted);
        assert_eq!(PgibConfig::from_kv(&text).unwrap(), c);
    }

    #[test]
    fn kv_errors() {
        assert!(PgibConfig::from_kv("bogus = 1").is_err());
        assert!(PgibConfig::from_kv("alpha1 = x").is_err());
        assert!(PgibConfig::from_kv("alpha1 = -1").is_err());
        assert!(PgibConfig::from_kv("epochs").is_err());
        let (c, rest) = PgibConfig::from_kv_with("# note\n\ndataset = mutag\nepochs = 3\n", &["dataset"]).unwrap();
        assert_eq!(c.epochs, 3);
        assert_eq!(rest["dataset"], "mutag");
    }
}
