//! The `kfim` command line.
//!
//! Exit codes: 0 success, 2 usage/config/input errors, 3 numeric failures
//! (divergence, degenerate spectra).

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::dynamics::{recall, recall_csv, RecallTrial, DEFAULT_SUCCESS_THRESHOLD};
use crate::error::{Error, Result};
use crate::infogeo::{analyze_network, report_csv, spectrum_csv, DEFAULT_REL_CUTOFF};
use crate::kernel::{corrupt, generate_patterns, read_patterns, KernelConfig, PatternSet};
use crate::klr::{read_weights, train, DualWeights};
use crate::rng::derive_seed;
use crate::sweep::{
    grid_csv, heatmap_svg, parse_grid_csv, run_grid, spectrum_plot_svg, GridConfig, Metric,
    TrainRunConfig,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

pub const MANIFEST: &str = "manifest.json";
pub const PATTERNS_FILE: &str = "patterns.txt";
pub const WEIGHTS_FILE: &str = "weights.txt";

#[derive(Debug, Parser)]
#[command(
    name = "kfim",
    version,
    about = "Fisher geometry of kernel Hopfield networks"
)]
pub struct Cli {
    /// Override the seed from the config (or the stored pattern seed).
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Worker threads; defaults to the available parallelism.
    #[arg(long, global = true)]
    pub workers: Option<usize>,

    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate patterns and train a network.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Fisher spectra and gradient reports of a trained network.
    Spectrum {
        /// Directory holding patterns.txt and weights.txt.
        #[arg(long)]
        weights: PathBuf,
        /// Also write spectrum.svg.
        #[arg(long)]
        svg: bool,
        #[arg(long, default_value_t = DEFAULT_REL_CUTOFF)]
        cutoff: f64,
    },
    /// Sweep a (gamma, load) grid.
    Phase {
        #[arg(long)]
        config: PathBuf,
    },
    /// Recall batches from corrupted cues.
    Recall(RecallArgs),
    /// Redraw a heatmap from an existing grid CSV.
    Render {
        #[arg(long)]
        csv: PathBuf,
        #[arg(long)]
        metric: String,
        /// Color scale; defaults to log10 for lambda_max and the gradient norms.
        #[arg(long)]
        log10: Option<bool>,
    },
}

#[derive(Debug, Args)]
pub struct RecallArgs {
    #[arg(long)]
    pub weights: PathBuf,
    /// Comma-separated flip fractions in [0, 1].
    #[arg(long, value_delimiter = ',', num_args = 0..)]
    pub fractions: Vec<f64>,
    #[arg(long, default_value_t = 10)]
    pub trials: usize,
    #[arg(long, default_value_t = 50)]
    pub max_steps: usize,
    #[arg(long, default_value_t = DEFAULT_SUCCESS_THRESHOLD)]
    pub threshold: f64,
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Divergence { .. } | Error::Numeric(_) | Error::DegenerateSpectrum(_) => EXIT_NUMERIC,
        _ => EXIT_USAGE,
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code. Errors go to standard error.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(&cli, &args) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("kfim: {e}");
            exit_code(&e)
        }
    }
}

fn execute(cli: &Cli, args: &[OsString]) -> Result<()> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(w) = cli.workers {
        if w == 0 {
            return Err(Error::Argument("--workers must be at least 1".into()));
        }
        builder = builder.num_threads(w);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::Argument(format!("cannot start worker pool: {e}")))?;
    let command_line: Vec<String> = args
        .iter()
        .map(|a| a.to_string_lossy().into_owned())
        .collect();
    let mut manifest = Manifest::start(command_line);
    pool.install(|| -> Result<()> {
        match &cli.command {
            Command::Train { config } => cmd_train(cli, config, &mut manifest),
            Command::Spectrum {
                weights,
                svg,
                cutoff,
            } => cmd_spectrum(weights, *svg, *cutoff, &mut manifest),
            Command::Phase { config } => cmd_phase(cli, config, &mut manifest),
            Command::Recall(r) => cmd_recall(cli, r, &mut manifest),
            Command::Render { csv, metric, log10 } => {
                cmd_render(csv, metric, *log10, &mut manifest)
            }
        }
    })?;
    manifest.commit(&cli.out)
}

/// Run record written next to the outputs.
struct Manifest {
    command_line: Vec<String>,
    config: BTreeMap<String, String>,
    seeds: BTreeMap<String, u64>,
    started_ms: u128,
    outputs: Vec<(String, Vec<u8>)>,
}

fn unix_ms() -> u128 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_millis())
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

impl Manifest {
    fn start(command_line: Vec<String>) -> Self {
        Self {
            command_line,
            config: BTreeMap::new(),
            seeds: BTreeMap::new(),
            started_ms: unix_ms(),
            outputs: Vec::new(),
        }
    }

    fn add(&mut self, name: &str, bytes: impl Into<Vec<u8>>) {
        self.outputs.push((name.to_string(), bytes.into()));
    }

    /// Writes every collected output, then the manifest. On failure the
    /// files written so far are removed.
    fn commit(self, out: &Path) -> Result<()> {
        fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        let mut written: Vec<PathBuf> = Vec::new();
        let result = (|| {
            let mut digests = serde_json::Map::new();
            for (name, bytes) in &self.outputs {
                let path = out.join(name);
                fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
                written.push(path);
                digests.insert(name.clone(), Value::String(sha256_hex(bytes)));
            }
            let doc = json!({
                "tool": env!("CARGO_PKG_NAME"),
                "version": env!("CARGO_PKG_VERSION"),
                "command_line": self.command_line,
                "config": self.config,
                "seeds": self.seeds,
                "started_unix_ms": self.started_ms as u64,
                "finished_unix_ms": unix_ms() as u64,
                "outputs": digests,
            });
            let path = out.join(MANIFEST);
            let text = serde_json::to_string_pretty(&doc).expect("manifest is plain JSON") + "\n";
            fs::write(&path, text).map_err(|e| Error::io(&path, e))
        })();
        if result.is_err() {
            for p in written {
                let _ = fs::remove_file(p);
            }
        }
        result
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn cmd_train(cli: &Cli, config: &Path, manifest: &mut Manifest) -> Result<()> {
    let (mut cfg, _) = TrainRunConfig::parse(&read_text(config)?)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let kcfg = KernelConfig::rbf(cfg.gamma)?;
    let patterns = generate_patterns(cfg.num_patterns, cfg.num_neurons, cfg.seed)?;
    // Artifacts are only written once training succeeded, so a divergence
    // leaves nothing of this run behind.
    let weights = train(&patterns, &kcfg, &cfg.train)?;

    manifest.config = BTreeMap::from([
        ("num_patterns".into(), cfg.num_patterns.to_string()),
        ("num_neurons".into(), cfg.num_neurons.to_string()),
        ("seed".into(), cfg.seed.to_string()),
        ("gamma".into(), cfg.gamma.to_string()),
        ("lambda".into(), cfg.train.lambda.to_string()),
        ("learning_rate".into(), cfg.train.learning_rate.to_string()),
        ("max_epochs".into(), cfg.train.max_epochs.to_string()),
        ("grad_tol".into(), cfg.train.grad_tol.to_string()),
    ]);
    manifest.seeds.insert("patterns".into(), cfg.seed);
    manifest.add(PATTERNS_FILE, patterns.to_text());
    manifest.add(WEIGHTS_FILE, weights.to_text());
    eprintln!(
        "trained P={} N={} gamma={} in {} epochs",
        cfg.num_patterns, cfg.num_neurons, cfg.gamma, weights.trained_epochs
    );
    Ok(())
}

fn load_network(dir: &Path) -> Result<(PatternSet, DualWeights)> {
    let patterns = read_patterns(&dir.join(PATTERNS_FILE))?;
    let weights = read_weights(&dir.join(WEIGHTS_FILE))?;
    if weights.num_patterns() != patterns.num_patterns()
        || weights.num_neurons() != patterns.num_neurons()
    {
        return Err(Error::Dimension(format!(
            "{} holds {}x{} weights for {}x{} patterns",
            dir.display(),
            weights.num_patterns(),
            weights.num_neurons(),
            patterns.num_patterns(),
            patterns.num_neurons()
        )));
    }
    Ok((patterns, weights))
}

fn network_config(manifest: &mut Manifest, dir: &Path, weights: &DualWeights) {
    manifest
        .config
        .insert("weights".into(), dir.display().to_string());
    manifest
        .config
        .insert("gamma".into(), weights.gamma.to_string());
    manifest
        .config
        .insert("lambda".into(), weights.lambda.to_string());
}

fn cmd_spectrum(dir: &Path, svg: bool, cutoff: f64, manifest: &mut Manifest) -> Result<()> {
    if !(cutoff > 0.0 && cutoff < 1.0) {
        return Err(Error::Argument(format!(
            "--cutoff must lie in (0, 1), got {cutoff}"
        )));
    }
    let (patterns, weights) = load_network(dir)?;
    let analyses = analyze_network(&patterns, &weights, cutoff)?;
    network_config(manifest, dir, &weights);
    manifest.config.insert("cutoff".into(), cutoff.to_string());
    manifest.add("spectrum.csv", spectrum_csv(&analyses));
    manifest.add("report.csv", report_csv(&analyses));
    if svg {
        manifest.add("spectrum.svg", spectrum_plot_svg(&analyses));
    }
    let degenerate = analyses.iter().filter(|a| a.spectrum.degenerate).count();
    if degenerate > 0 {
        eprintln!("warning: {degenerate} neuron(s) with an all-zero Fisher spectrum");
    }
    Ok(())
}

fn heatmap_name(metric: Metric) -> String {
    format!("heatmap_{}.svg", metric.name())
}

fn cmd_phase(cli: &Cli, config: &Path, manifest: &mut Manifest) -> Result<()> {
    let (mut cfg, _) = GridConfig::parse(&read_text(config)?)?;
    if let Some(seed) = cli.seed {
        cfg.base_seed = seed;
    }
    let cells = run_grid(&cfg)?;
    manifest.config = cfg
        .to_text()
        .lines()
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .collect();
    manifest.seeds.insert("base_seed".into(), cfg.base_seed);
    manifest.add("grid.csv", grid_csv(&cells));
    for &m in &cfg.metrics {
        manifest.add(&heatmap_name(m), heatmap_svg(&cells, m, m.default_log10())?);
    }
    let flagged: Vec<_> = cells.iter().filter(|c| c.is_flagged()).collect();
    if !flagged.is_empty() {
        eprintln!("{} of {} cells flagged:", flagged.len(), cells.len());
        for c in flagged {
            eprintln!(
                "  gamma={} load={}: degenerate={} diverged={}",
                c.gamma, c.load, c.degenerate_count, c.divergence_count
            );
        }
    }
    Ok(())
}

/// Domain tag for recall cue seeds.
const CUE_TAG: u64 = 0x6375_65; // "cue"

fn cmd_recall(cli: &Cli, args: &RecallArgs, manifest: &mut Manifest) -> Result<()> {
    if args.fractions.is_empty() {
        return Err(Error::Argument(
            "--fractions needs at least one value".into(),
        ));
    }
    if let Some(f) = args.fractions.iter().find(|f| !(0.0..=1.0).contains(*f)) {
        return Err(Error::Argument(format!("flip fraction {f} outside [0, 1]")));
    }
    if args.trials == 0 || args.max_steps == 0 {
        return Err(Error::Argument(
            "--trials and --max-steps must be at least 1".into(),
        ));
    }
    let (patterns, weights) = load_network(&args.weights)?;
    let kcfg = KernelConfig::rbf(weights.gamma)?;
    let base = cli.seed.unwrap_or(patterns.seed());
    let num_patterns = patterns.num_patterns();

    let jobs: Vec<(f64, usize, usize)> = args
        .fractions
        .iter()
        .flat_map(|&f| {
            (0..args.trials).flat_map(move |t| (0..num_patterns).map(move |mu| (f, t, mu)))
        })
        .collect();
    let rows = jobs
        .par_iter()
        .map(|&(f, t, mu)| {
            let seed = derive_seed(base, &[CUE_TAG, f.to_bits(), t as u64, mu as u64]);
            let cue = corrupt(patterns.pattern(mu), f, seed)?;
            let result = recall(
                &cue,
                mu,
                &patterns,
                &weights,
                &kcfg,
                args.max_steps,
                args.threshold,
            )?;
            Ok(RecallTrial {
                trial: t,
                target: mu,
                flip_fraction: f,
                result,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    network_config(manifest, &args.weights, &weights);
    let list: Vec<String> = args.fractions.iter().map(f64::to_string).collect();
    manifest.config.insert("fractions".into(), list.join(","));
    manifest
        .config
        .insert("trials".into(), args.trials.to_string());
    manifest
        .config
        .insert("max_steps".into(), args.max_steps.to_string());
    manifest
        .config
        .insert("threshold".into(), args.threshold.to_string());
    manifest.seeds.insert("cues".into(), base);
    manifest.add("recall.csv", recall_csv(&rows));
    Ok(())
}

fn cmd_render(
    csv: &Path,
    metric: &str,
    log10: Option<bool>,
    manifest: &mut Manifest,
) -> Result<()> {
    let m = Metric::from_name(metric).ok_or_else(|| {
        let names: Vec<&str> = Metric::ALL.iter().map(|m| m.name()).collect();
        Error::Argument(format!(
            "unknown metric `{metric}`; expected one of {}",
            names.join(", ")
        ))
    })?;
    let cells = parse_grid_csv(&read_text(csv)?, csv)?;
    let log10 = log10.unwrap_or(m.default_log10());
    manifest
        .config
        .insert("csv".into(), csv.display().to_string());
    manifest.config.insert("metric".into(), m.name().into());
    manifest.config.insert("log10".into(), log10.to_string());
    manifest.add(&heatmap_name(m), heatmap_svg(&cells, m, log10)?);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(
            exit_code(&Error::Config {
                line: 1,
                message: String::new()
            }),
            EXIT_USAGE
        );
        assert_eq!(exit_code(&Error::Numeric(String::new())), EXIT_NUMERIC);
        assert_eq!(
            exit_code(&Error::Divergence {
                neuron: 0,
                epoch: 1,
                reason: String::new()
            }),
            EXIT_NUMERIC
        );
    }

    #[test]
    fn digest_of_empty_input() {
        assert_eq!(
            sha256_hex(b""),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }
}
