//! Flat `key = value` configuration files.
//!
//! One setting per line, `#` starts a comment, lists are comma separated.
//! Unknown and repeated keys are rejected; every error names its line.

use std::collections::BTreeMap;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::infogeo::DEFAULT_REL_CUTOFF;
use crate::klr::TrainConfig;

use super::{GridConfig, Metric, RecallSettings};

#[derive(Debug, Clone, Default)]
pub struct KeyValues {
    entries: BTreeMap<String, (usize, String)>,
}

impl KeyValues {
    pub fn parse(text: &str, allowed: &[&str]) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Config {
                line: line_no,
                message: format!("expected `key = value`, got `{line}`"),
            })?;
            let key = key.trim();
            if !allowed.contains(&key) {
                return Err(Error::Config {
                    line: line_no,
                    message: format!("unknown key `{key}`"),
                });
            }
            if let Some((first, _)) = entries.get(key) {
                return Err(Error::Config {
                    line: line_no,
                    message: format!("`{key}` already set on line {first}"),
                });
            }
            entries.insert(key.to_string(), (line_no, value.trim().to_string()));
        }
        Ok(Self { entries })
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    /// Line of `key`, or 0 when it was not given.
    pub fn line(&self, key: &str) -> usize {
        self.entries.get(key).map_or(0, |(l, _)| *l)
    }

    pub fn error(&self, key: &str, message: impl std::fmt::Display) -> Error {
        Error::Config {
            line: self.line(key),
            message: format!("`{key}`: {message}"),
        }
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.entries.get(key) {
            None => Ok(None),
            Some((_, v)) => v
                .parse::<T>()
                .map(Some)
                .map_err(|_| self.error(key, format!("cannot parse `{v}`"))),
        }
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        Ok(self.get(key)?.unwrap_or(default))
    }

    pub fn require<T: FromStr>(&self, key: &str) -> Result<T> {
        self.get(key)?.ok_or_else(|| Error::Config {
            line: 0,
            message: format!("missing required key `{key}`"),
        })
    }

    pub fn get_list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>> {
        match self.entries.get(key) {
            None => Ok(None),
            Some((_, v)) => v
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|s| {
                    s.parse::<T>()
                        .map_err(|_| self.error(key, format!("cannot parse list item `{s}`")))
                })
                .collect::<Result<Vec<T>>>()
                .map(Some),
        }
    }

    /// Resolved settings, in key order, for manifests.
    pub fn resolved(&self) -> BTreeMap<String, String> {
        self.entries
            .iter()
            .map(|(k, (_, v))| (k.clone(), v.clone()))
            .collect()
    }
}

fn positive(kv: &KeyValues, key: &str, value: f64) -> Result<f64> {
    if value.is_finite() && value > 0.0 {
        Ok(value)
    } else {
        Err(kv.error(key, format!("must be positive and finite, got {value}")))
    }
}

fn train_settings(kv: &KeyValues) -> Result<TrainConfig> {
    let defaults = TrainConfig::default();
    let lambda: f64 = kv.get_or("lambda", defaults.lambda)?;
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(kv.error("lambda", format!("must be nonnegative, got {lambda}")));
    }
    let learning_rate = positive(
        kv,
        "learning_rate",
        kv.get_or("learning_rate", defaults.learning_rate)?,
    )?;
    let max_epochs: usize = kv.get_or("max_epochs", defaults.max_epochs)?;
    if max_epochs == 0 {
        return Err(kv.error("max_epochs", "must be at least 1"));
    }
    let grad_tol = positive(kv, "grad_tol", kv.get_or("grad_tol", defaults.grad_tol)?)?;
    Ok(TrainConfig {
        lambda,
        learning_rate,
        max_epochs,
        grad_tol,
    })
}

const TRAIN_KEYS: [&str; 4] = ["lambda", "learning_rate", "max_epochs", "grad_tol"];

/// Settings of a single training run (`kfim train`).
#[derive(Debug, Clone, PartialEq)]
pub struct TrainRunConfig {
    pub num_patterns: usize,
    pub num_neurons: usize,
    pub seed: u64,
    pub gamma: f64,
    pub train: TrainConfig,
}

impl TrainRunConfig {
    pub const KEYS: [&'static str; 8] = [
        "num_patterns",
        "num_neurons",
        "seed",
        "gamma",
        TRAIN_KEYS[0],
        TRAIN_KEYS[1],
        TRAIN_KEYS[2],
        TRAIN_KEYS[3],
    ];

    pub fn parse(text: &str) -> Result<(Self, KeyValues)> {
        let kv = KeyValues::parse(text, &Self::KEYS)?;
        let num_patterns: usize = kv.require("num_patterns")?;
        if num_patterns == 0 {
            return Err(kv.error("num_patterns", "must be at least 1"));
        }
        let num_neurons: usize = kv.require("num_neurons")?;
        if num_neurons == 0 {
            return Err(kv.error("num_neurons", "must be at least 1"));
        }
        let gamma = positive(&kv, "gamma", kv.require("gamma")?)?;
        let cfg = Self {
            num_patterns,
            num_neurons,
            seed: kv.get_or("seed", 0)?,
            gamma,
            train: train_settings(&kv)?,
        };
        Ok((cfg, kv))
    }
}

impl GridConfig {
    pub const KEYS: [&'static str; 16] = [
        "num_neurons",
        "gamma_values",
        "gamma_log_range",
        "load_values",
        "trials_per_cell",
        "base_seed",
        TRAIN_KEYS[0],
        TRAIN_KEYS[1],
        TRAIN_KEYS[2],
        TRAIN_KEYS[3],
        "rel_cutoff",
        "metrics",
        "recall_flip_fraction",
        "recall_max_steps",
        "success_threshold",
        "recall_cues_per_pattern",
    ];

    pub fn parse(text: &str) -> Result<(Self, KeyValues)> {
        let kv = KeyValues::parse(text, &Self::KEYS)?;

        let num_neurons: usize = kv.require("num_neurons")?;
        if num_neurons == 0 {
            return Err(kv.error("num_neurons", "must be at least 1"));
        }

        let gamma_values = match (kv.contains("gamma_values"), kv.contains("gamma_log_range")) {
            (true, true) => {
                return Err(kv.error(
                    "gamma_log_range",
                    "give either gamma_values or gamma_log_range",
                ))
            }
            (true, false) => kv.get_list::<f64>("gamma_values")?.unwrap_or_default(),
            (false, true) => {
                let spec: Vec<f64> = kv.get_list("gamma_log_range")?.unwrap_or_default();
                if spec.len() != 3 || spec[2].fract() != 0.0 || spec[2] < 1.0 {
                    return Err(kv.error("gamma_log_range", "expected `low, high, count`"));
                }
                log_spaced(
                    positive(&kv, "gamma_log_range", spec[0])?,
                    positive(&kv, "gamma_log_range", spec[1])?,
                    spec[2] as usize,
                )
            }
            (false, false) => {
                return Err(Error::Config {
                    line: 0,
                    message: "missing required key `gamma_values` (or `gamma_log_range`)".into(),
                })
            }
        };
        let gamma_key = if kv.contains("gamma_values") {
            "gamma_values"
        } else {
            "gamma_log_range"
        };
        if gamma_values.is_empty() {
            return Err(kv.error(gamma_key, "needs at least one value"));
        }
        for &g in &gamma_values {
            positive(&kv, gamma_key, g)?;
        }
        if gamma_values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(kv.error(gamma_key, "values must be strictly ascending"));
        }

        let load_values: Vec<f64> = kv.get_list("load_values")?.ok_or_else(|| Error::Config {
            line: 0,
            message: "missing required key `load_values`".into(),
        })?;
        if load_values.is_empty() {
            return Err(kv.error("load_values", "needs at least one value"));
        }
        if load_values.iter().any(|&l| !(l > 0.0 && l <= 1.0)) {
            return Err(kv.error("load_values", "loads must lie in (0, 1]"));
        }
        if load_values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(kv.error("load_values", "values must be strictly ascending"));
        }
        if (load_values[0] * num_neurons as f64).round() < 1.0 {
            return Err(kv.error(
                "load_values",
                format!("smallest load stores no pattern with {num_neurons} neurons"),
            ));
        }

        let trials_per_cell: usize = kv.get_or("trials_per_cell", 1)?;
        if trials_per_cell == 0 {
            return Err(kv.error("trials_per_cell", "must be at least 1"));
        }

        let rel_cutoff: f64 = kv.get_or("rel_cutoff", DEFAULT_REL_CUTOFF)?;
        if !(rel_cutoff > 0.0 && rel_cutoff < 1.0) {
            return Err(kv.error(
                "rel_cutoff",
                format!("must lie in (0, 1), got {rel_cutoff}"),
            ));
        }

        let metrics = match kv.get_list::<String>("metrics")? {
            None => Metric::ALL.to_vec(),
            Some(names) => names
                .iter()
                .map(|n| {
                    Metric::from_name(n)
                        .ok_or_else(|| kv.error("metrics", format!("unknown metric `{n}`")))
                })
                .collect::<Result<Vec<_>>>()?,
        };

        let defaults = RecallSettings::default();
        let flip_fraction: f64 = kv.get_or("recall_flip_fraction", defaults.flip_fraction)?;
        if !(0.0..=1.0).contains(&flip_fraction) {
            return Err(kv.error("recall_flip_fraction", "must lie in [0, 1]"));
        }
        let max_steps: usize = kv.get_or("recall_max_steps", defaults.max_steps)?;
        if max_steps == 0 {
            return Err(kv.error("recall_max_steps", "must be at least 1"));
        }
        let success_threshold: f64 = kv.get_or("success_threshold", defaults.success_threshold)?;
        if !(success_threshold > 0.0 && success_threshold <= 1.0) {
            return Err(kv.error("success_threshold", "must lie in (0, 1]"));
        }
        let cues_per_pattern: usize =
            kv.get_or("recall_cues_per_pattern", defaults.cues_per_pattern)?;
        if cues_per_pattern == 0 {
            return Err(kv.error("recall_cues_per_pattern", "must be at least 1"));
        }

        let cfg = GridConfig {
            gamma_values,
            load_values,
            num_neurons,
            trials_per_cell,
            base_seed: kv.get_or("base_seed", 0)?,
            train: train_settings(&kv)?,
            rel_cutoff,
            metrics,
            recall: RecallSettings {
                flip_fraction,
                max_steps,
                success_threshold,
                cues_per_pattern,
            },
        };
        Ok((cfg, kv))
    }

    /// Renders the config back into the file format; parsing the result
    /// yields an identical config.
    pub fn to_text(&self) -> String {
        let list = |v: &[f64]| v.iter().map(f64::to_string).collect::<Vec<_>>().join(", ");
        let metrics: Vec<&str> = self.metrics.iter().map(|m| m.name()).collect();
        format!(
            "num_neurons = {}\ngamma_values = {}\nload_values = {}\ntrials_per_cell = {}\nbase_seed = {}\n\
             lambda = {}\nlearning_rate = {}\nmax_epochs = {}\ngrad_tol = {}\nrel_cutoff = {}\nmetrics = {}\n\
             recall_flip_fraction = {}\nrecall_max_steps = {}\nsuccess_threshold = {}\nrecall_cues_per_pattern = {}\n",
            self.num_neurons,
            list(&self.gamma_values),
            list(&self.load_values),
            self.trials_per_cell,
            self.base_seed,
            self.train.lambda,
            self.train.learning_rate,
            self.train.max_epochs,
            self.train.grad_tol,
            self.rel_cutoff,
            metrics.join(", "),
            self.recall.flip_fraction,
            self.recall.max_steps,
            self.recall.success_threshold,
            self.recall.cues_per_pattern,
        )
    }
}

/// `count` points from `low` to `high` evenly spaced in log10.
pub fn log_spaced(low: f64, high: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![low];
    }
    let (a, b) = (low.log10(), high.log10());
    (0..count)
        .map(|i| 10f64.powf(a + (b - a) * i as f64 / (count - 1) as f64))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const GRID: &str = "\
# small grid
num_neurons = 16
gamma_values = 0.01, 0.1
load_values = 0.125, 0.25
trials_per_cell = 2
base_seed = 7
learning_rate = 0.05   # stable step
max_epochs = 200
metrics = lambda_max, d_eff
";

    #[test]
    fn parses_grid_config() {
        let (cfg, kv) = GridConfig::parse(GRID).unwrap();
        assert_eq!(cfg.gamma_values, vec![0.01, 0.1]);
        assert_eq!(cfg.load_values, vec![0.125, 0.25]);
        assert_eq!(cfg.train.learning_rate, 0.05);
        assert_eq!(cfg.train.lambda, TrainConfig::default().lambda);
        assert_eq!(cfg.metrics, vec![Metric::LambdaMax, Metric::DEff]);
        assert_eq!(kv.line("base_seed"), 6);
        let (again, _) = GridConfig::parse(&cfg.to_text()).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn errors_name_line_and_field() {
        let text = GRID.replace("gamma_values = 0.01, 0.1", "gamma_values = 0.01, -1");
        match GridConfig::parse(&text) {
            Err(Error::Config { line, message }) => {
                assert_eq!(line, 3);
                assert!(message.contains("gamma_values"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
        let text = format!("{GRID}colour = red\n");
        assert!(matches!(
            GridConfig::parse(&text),
            Err(Error::Config { line: 10, .. })
        ));
        let text = format!("{GRID}base_seed = 8\n");
        assert!(matches!(
            GridConfig::parse(&text),
            Err(Error::Config { line: 10, .. })
        ));
        let text = GRID.replace("load_values = 0.125, 0.25", "load_values = 0.25, 0.125");
        assert!(GridConfig::parse(&text).is_err());
        let text = GRID.replace("load_values = 0.125, 0.25", "load_values = 0.01");
        assert!(GridConfig::parse(&text).is_err());
    }

    #[test]
    fn log_range_expands() {
        let text = GRID.replace("gamma_values = 0.01, 0.1", "gamma_log_range = 0.001, 10, 5");
        let (cfg, _) = GridConfig::parse(&text).unwrap();
        let expected = [1e-3, 1e-2, 1e-1, 1.0, 10.0];
        for (g, e) in cfg.gamma_values.iter().zip(expected) {
            assert!((g / e - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn train_run_config_validation() {
        let (cfg, _) =
            TrainRunConfig::parse("num_patterns = 2\nnum_neurons = 16\ngamma = 0.1\n").unwrap();
        assert_eq!(cfg.num_patterns, 2);
        assert_eq!(cfg.train, TrainConfig::default());
        match TrainRunConfig::parse("num_patterns = 2\nnum_neurons = 16\ngamma = -1\n") {
            Err(Error::Config { line: 3, message }) => assert!(message.contains("gamma")),
            other => panic!("unexpected {other:?}"),
        }
        assert!(TrainRunConfig::parse("num_neurons = 16\ngamma = 1\n").is_err());
        assert!(TrainRunConfig::parse("num_patterns = 2\nnum_neurons = 16\ngamma\n").is_err());
    }
}
