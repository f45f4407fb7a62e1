//! Phase diagrams over the (gamma, P/N) plane.
//!
//! Every cell trains `trials_per_cell` independent networks and averages the
//! per-neuron Fisher diagnostics, first over neurons and then over trials.
//!
//! Seeds: `cell_seed = derive_seed(base_seed, [gamma.to_bits(), load.to_bits()])`
//! and `trial_seed = derive_seed(cell_seed, [trial])` (see [`crate::rng`]).
//! Keying on the axis values rather than their positions keeps a cell's
//! numbers fixed when other rows or columns are added or removed.

pub mod config;
pub mod svg;

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use crate::dynamics::{recall, DEFAULT_SUCCESS_THRESHOLD};
use crate::error::{Error, Result};
use crate::infogeo::{analyze_network_with_gram, DEFAULT_REL_CUTOFF};
use crate::kernel::{corrupt, generate_patterns, gram, KernelConfig};
use crate::klr::{train_with_gram, TrainConfig};
use crate::rng::derive_seed;

pub use config::{log_spaced, KeyValues, TrainRunConfig};
pub use svg::{heatmap_svg, render_heatmap, spectrum_plot_svg};

/// Domain tag mixed into recall-cue seeds.
const RECALL_TAG: u64 = 0x7265_6361_6c6c; // "recall"

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Metric {
    LambdaMax,
    DEff,
    EuclidNormSq,
    RiemannNormSq,
    Rank1Residual,
    RecallRate,
}

impl Metric {
    pub const ALL: [Metric; 6] = [
        Metric::LambdaMax,
        Metric::DEff,
        Metric::EuclidNormSq,
        Metric::RiemannNormSq,
        Metric::Rank1Residual,
        Metric::RecallRate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::LambdaMax => "lambda_max",
            Metric::DEff => "d_eff",
            Metric::EuclidNormSq => "euclid_norm_sq",
            Metric::RiemannNormSq => "riemann_norm_sq",
            Metric::Rank1Residual => "rank1_residual",
            Metric::RecallRate => "recall_rate",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.name() == name)
    }

    /// Whether heatmaps of this metric default to a log10 color scale.
    pub fn default_log10(self) -> bool {
        matches!(
            self,
            Metric::LambdaMax | Metric::EuclidNormSq | Metric::RiemannNormSq
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecallSettings {
    pub flip_fraction: f64,
    pub max_steps: usize,
    pub success_threshold: f64,
    /// Corrupted cues drawn per stored pattern and trial.
    pub cues_per_pattern: usize,
}

impl Default for RecallSettings {
    fn default() -> Self {
        Self {
            flip_fraction: 0.1,
            max_steps: 50,
            success_threshold: DEFAULT_SUCCESS_THRESHOLD,
            cues_per_pattern: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridConfig {
    pub gamma_values: Vec<f64>,
    pub load_values: Vec<f64>,
    pub num_neurons: usize,
    pub trials_per_cell: usize,
    pub base_seed: u64,
    pub train: TrainConfig,
    pub rel_cutoff: f64,
    pub metrics: Vec<Metric>,
    pub recall: RecallSettings,
}

impl GridConfig {
    pub fn new(gamma_values: Vec<f64>, load_values: Vec<f64>, num_neurons: usize) -> Self {
        Self {
            gamma_values,
            load_values,
            num_neurons,
            trials_per_cell: 1,
            base_seed: 0,
            train: TrainConfig::default(),
            rel_cutoff: DEFAULT_REL_CUTOFF,
            metrics: Metric::ALL.to_vec(),
            recall: RecallSettings::default(),
        }
    }

    pub fn num_patterns(&self, load: f64) -> usize {
        (load * self.num_neurons as f64).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.gamma_values.is_empty() || self.load_values.is_empty() {
            return Err(Error::Argument("grid axes must be nonempty".into()));
        }
        if self
            .gamma_values
            .iter()
            .any(|g| !(g.is_finite() && *g > 0.0))
        {
            return Err(Error::Argument("gamma values must be positive".into()));
        }
        if self.load_values.iter().any(|l| !(*l > 0.0 && *l <= 1.0)) {
            return Err(Error::Argument("loads must lie in (0, 1]".into()));
        }
        if self.num_neurons == 0 {
            return Err(Error::Argument("num_neurons must be positive".into()));
        }
        if self.load_values.iter().any(|&l| self.num_patterns(l) == 0) {
            return Err(Error::Argument(
                "every load must store at least one pattern".into(),
            ));
        }
        if self.trials_per_cell == 0 {
            return Err(Error::Argument("trials_per_cell must be positive".into()));
        }
        if !(self.rel_cutoff > 0.0 && self.rel_cutoff < 1.0) {
            return Err(Error::Argument("rel_cutoff must lie in (0, 1)".into()));
        }
        self.train.validate()
    }

    pub fn cell_seed(&self, gamma: f64, load: f64) -> u64 {
        derive_seed(self.base_seed, &[gamma.to_bits(), load.to_bits()])
    }

    fn wants(&self, m: Metric) -> bool {
        self.metrics.contains(&m)
    }
}

/// One grid point. Means are over neurons, then over non-diverged trials;
/// standard deviations are sample deviations of the per-trial means (0 for a
/// single trial). Metrics without any successful trial are NaN and the cell
/// carries a nonzero `divergence_count`.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepCell {
    pub gamma: f64,
    pub load: f64,
    pub num_patterns: usize,
    pub num_neurons: usize,
    pub seed: u64,
    pub trials: usize,
    pub lambda_max_mean: f64,
    pub lambda_max_sd: f64,
    pub d_eff_mean: f64,
    pub d_eff_sd: f64,
    pub euclid_norm_sq_mean: f64,
    pub riemann_norm_sq_mean: f64,
    pub rank1_residual_mean: f64,
    /// NaN unless `recall_rate` is among the configured metrics.
    pub recall_rate: f64,
    /// Not part of the grid CSV; NaN for cells read back from CSV.
    pub ratio_2_1_mean: f64,
    pub ratio_tail_mean: f64,
    pub retained_modes_mean: f64,
    /// Neuron spectra (over all trials) with an all-zero Fisher matrix.
    pub degenerate_count: usize,
    /// Trials whose training diverged.
    pub divergence_count: usize,
}

impl SweepCell {
    pub fn metric(&self, m: Metric) -> f64 {
        match m {
            Metric::LambdaMax => self.lambda_max_mean,
            Metric::DEff => self.d_eff_mean,
            Metric::EuclidNormSq => self.euclid_norm_sq_mean,
            Metric::RiemannNormSq => self.riemann_norm_sq_mean,
            Metric::Rank1Residual => self.rank1_residual_mean,
            Metric::RecallRate => self.recall_rate,
        }
    }

    pub fn is_flagged(&self) -> bool {
        self.degenerate_count > 0 || self.divergence_count > 0
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct TrialMeans {
    lambda_max: f64,
    d_eff: f64,
    euclid: f64,
    riemann: f64,
    rank1: f64,
    ratio_2_1: f64,
    ratio_tail: f64,
    retained: f64,
    recall: f64,
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

fn sample_sd(xs: &[f64]) -> f64 {
    match xs.len() {
        0 => f64::NAN,
        1 => 0.0,
        n => {
            let m = mean(xs.iter().copied());
            (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        }
    }
}

enum TrialOutcome {
    Done {
        means: TrialMeans,
        degenerate: usize,
    },
    Diverged,
}

fn run_trial(
    gamma: f64,
    num_patterns: usize,
    cfg: &GridConfig,
    trial_seed: u64,
) -> Result<TrialOutcome> {
    let kcfg = KernelConfig::rbf(gamma)?;
    let patterns = generate_patterns(num_patterns, cfg.num_neurons, trial_seed)?;
    let k = gram(&patterns, &kcfg)?;
    let weights = match train_with_gram(&patterns, &k, &cfg.train) {
        Ok(w) => w,
        Err(Error::Divergence { .. }) => return Ok(TrialOutcome::Diverged),
        Err(e) => return Err(e),
    };
    let analyses = analyze_network_with_gram(&patterns, &weights, &k, cfg.rel_cutoff)?;
    let degenerate = analyses.iter().filter(|a| a.spectrum.degenerate).count();
    let over = |f: &dyn Fn(&crate::infogeo::NeuronAnalysis) -> f64| mean(analyses.iter().map(f));

    let recall_rate = if cfg.wants(Metric::RecallRate) {
        let s = &cfg.recall;
        let mut wins = 0usize;
        let mut total = 0usize;
        for mu in 0..num_patterns {
            for c in 0..s.cues_per_pattern {
                let seed = derive_seed(trial_seed, &[RECALL_TAG, mu as u64, c as u64]);
                let cue = corrupt(patterns.pattern(mu), s.flip_fraction, seed)?;
                let r = recall(
                    &cue,
                    mu,
                    &patterns,
                    &weights,
                    &kcfg,
                    s.max_steps,
                    s.success_threshold,
                )?;
                wins += usize::from(r.success);
                total += 1;
            }
        }
        wins as f64 / total as f64
    } else {
        f64::NAN
    };

    Ok(TrialOutcome::Done {
        means: TrialMeans {
            lambda_max: over(&|a| a.spectrum.lambda_max),
            d_eff: over(&|a| a.spectrum.d_eff),
            euclid: over(&|a| a.report.euclid_norm_sq),
            riemann: over(&|a| a.report.riemann_norm_sq),
            rank1: over(&|a| a.report.rank1_residual),
            ratio_2_1: over(&|a| a.spectrum.ratio_2_1),
            ratio_tail: over(&|a| a.spectrum.ratio_tail),
            retained: over(&|a| a.report.retained_modes as f64),
            recall: recall_rate,
        },
        degenerate,
    })
}

/// Trains and analyzes every trial of one cell.
pub fn run_cell(gamma: f64, load: f64, cfg: &GridConfig, cell_seed: u64) -> Result<SweepCell> {
    cfg.validate()?;
    let num_patterns = cfg.num_patterns(load);
    if num_patterns == 0 {
        return Err(Error::Argument(format!("load {load} stores no pattern")));
    }
    let outcomes = (0..cfg.trials_per_cell)
        .into_par_iter()
        .map(|t| {
            run_trial(
                gamma,
                num_patterns,
                cfg,
                derive_seed(cell_seed, &[t as u64]),
            )
        })
        .collect::<Result<Vec<_>>>()?;

    let mut done = Vec::new();
    let mut degenerate_count = 0;
    let mut divergence_count = 0;
    for o in outcomes {
        match o {
            TrialOutcome::Done { means, degenerate } => {
                degenerate_count += degenerate;
                done.push(means);
            }
            TrialOutcome::Diverged => divergence_count += 1,
        }
    }
    let col = |f: fn(&TrialMeans) -> f64| done.iter().map(f).collect::<Vec<f64>>();
    let lambda_max = col(|m| m.lambda_max);
    let d_eff = col(|m| m.d_eff);

    Ok(SweepCell {
        gamma,
        load,
        num_patterns,
        num_neurons: cfg.num_neurons,
        seed: cell_seed,
        trials: cfg.trials_per_cell,
        lambda_max_mean: mean(lambda_max.iter().copied()),
        lambda_max_sd: sample_sd(&lambda_max),
        d_eff_mean: mean(d_eff.iter().copied()),
        d_eff_sd: sample_sd(&d_eff),
        euclid_norm_sq_mean: mean(done.iter().map(|m| m.euclid)),
        riemann_norm_sq_mean: mean(done.iter().map(|m| m.riemann)),
        rank1_residual_mean: mean(done.iter().map(|m| m.rank1)),
        recall_rate: mean(done.iter().map(|m| m.recall)),
        ratio_2_1_mean: mean(done.iter().map(|m| m.ratio_2_1)),
        ratio_tail_mean: mean(done.iter().map(|m| m.ratio_tail)),
        retained_modes_mean: mean(done.iter().map(|m| m.retained)),
        degenerate_count,
        divergence_count,
    })
}

/// Runs every (gamma, load) cell on the current rayon pool. Output is sorted
/// by load, then gamma, whatever the scheduling.
pub fn run_grid(cfg: &GridConfig) -> Result<Vec<SweepCell>> {
    cfg.validate()?;
    let coords: Vec<(f64, f64)> = cfg
        .load_values
        .iter()
        .flat_map(|&l| cfg.gamma_values.iter().map(move |&g| (g, l)))
        .collect();
    coords
        .par_iter()
        .map(|&(g, l)| run_cell(g, l, cfg, cfg.cell_seed(g, l)))
        .collect()
}

pub const GRID_CSV_HEADER: &str = "gamma,load,P,N,seed,trials,lambda_max_mean,lambda_max_sd,d_eff_mean,d_eff_sd,euclid_norm_sq_mean,riemann_norm_sq_mean,rank1_residual_mean,recall_rate,degenerate_count,divergence_count";

pub fn grid_csv(cells: &[SweepCell]) -> String {
    let mut out = String::from(GRID_CSV_HEADER);
    out.push('\n');
    for c in cells {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            c.gamma,
            c.load,
            c.num_patterns,
            c.num_neurons,
            c.seed,
            c.trials,
            c.lambda_max_mean,
            c.lambda_max_sd,
            c.d_eff_mean,
            c.d_eff_sd,
            c.euclid_norm_sq_mean,
            c.riemann_norm_sq_mean,
            c.rank1_residual_mean,
            c.recall_rate,
            c.degenerate_count,
            c.divergence_count
        );
    }
    out
}

/// Reads a grid CSV written by [`grid_csv`]. Columns are located by header
/// name.
pub fn parse_grid_csv(text: &str, origin: &Path) -> Result<Vec<SweepCell>> {
    let mut lines = text
        .lines()
        .filter(|l| !l.trim().is_empty() && !l.starts_with('#'));
    let header: Vec<&str> = lines
        .next()
        .ok_or_else(|| Error::parse(origin, "empty grid CSV"))?
        .split(',')
        .map(str::trim)
        .collect();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| *h == name)
            .ok_or_else(|| Error::parse(origin, format!("missing column `{name}`")))
    };
    let expected: Vec<&str> = GRID_CSV_HEADER.split(',').collect();
    let idx = expected
        .iter()
        .map(|n| col(n))
        .collect::<Result<Vec<usize>>>()?;

    let mut cells = Vec::new();
    for (row_no, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != header.len() {
            return Err(Error::parse(
                origin,
                format!("row {} has {} fields", row_no + 1, fields.len()),
            ));
        }
        let f = |i: usize| -> Result<f64> {
            fields[idx[i]].parse::<f64>().map_err(|_| {
                Error::parse(origin, format!("row {}: bad `{}`", row_no + 1, expected[i]))
            })
        };
        let u = |i: usize| -> Result<u64> {
            fields[idx[i]].parse::<u64>().map_err(|_| {
                Error::parse(origin, format!("row {}: bad `{}`", row_no + 1, expected[i]))
            })
        };
        cells.push(SweepCell {
            gamma: f(0)?,
            load: f(1)?,
            num_patterns: u(2)? as usize,
            num_neurons: u(3)? as usize,
            seed: u(4)?,
            trials: u(5)? as usize,
            lambda_max_mean: f(6)?,
            lambda_max_sd: f(7)?,
            d_eff_mean: f(8)?,
            d_eff_sd: f(9)?,
            euclid_norm_sq_mean: f(10)?,
            riemann_norm_sq_mean: f(11)?,
            rank1_residual_mean: f(12)?,
            recall_rate: f(13)?,
            ratio_2_1_mean: f64::NAN,
            ratio_tail_mean: f64::NAN,
            retained_modes_mean: f64::NAN,
            degenerate_count: u(14)? as usize,
            divergence_count: u(15)? as usize,
        });
    }
    Ok(cells)
}
