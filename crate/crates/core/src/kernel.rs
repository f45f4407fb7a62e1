//! Stored patterns, the RBF kernel and Gram matrices.
//!
//! Patterns are raw bipolar vectors; no `1/sqrt(N)` normalization is applied,
//! so for two patterns at Hamming distance `d` the squared Euclidean distance
//! is `4 d` and `K = exp(-4 gamma d)`.

use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::rng::SplitMix64;

/// `P` bipolar patterns of length `N`, stored row-major (one pattern per row).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatternSet {
    data: Vec<i8>,
    num_patterns: usize,
    num_neurons: usize,
    seed: u64,
}

impl PatternSet {
    pub fn from_rows(rows: Vec<Vec<i8>>, seed: u64) -> Result<Self> {
        let num_patterns = rows.len();
        if num_patterns == 0 {
            return Err(Error::Argument(
                "pattern set needs at least one pattern".into(),
            ));
        }
        let num_neurons = rows[0].len();
        if num_neurons == 0 {
            return Err(Error::Argument("patterns need at least one neuron".into()));
        }
        let mut data = Vec::with_capacity(num_patterns * num_neurons);
        for (mu, row) in rows.iter().enumerate() {
            if row.len() != num_neurons {
                return Err(Error::Dimension(format!(
                    "pattern {mu} has length {}, expected {num_neurons}",
                    row.len()
                )));
            }
            if let Some(v) = row.iter().find(|&&v| v != 1 && v != -1) {
                return Err(Error::Argument(format!(
                    "pattern {mu} contains {v}; entries must be -1 or +1"
                )));
            }
            data.extend_from_slice(row);
        }
        Ok(Self {
            data,
            num_patterns,
            num_neurons,
            seed,
        })
    }

    pub fn num_patterns(&self) -> usize {
        self.num_patterns
    }

    pub fn num_neurons(&self) -> usize {
        self.num_neurons
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn pattern(&self, mu: usize) -> &[i8] {
        let n = self.num_neurons;
        &self.data[mu * n..(mu + 1) * n]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[i8]> {
        self.data.chunks_exact(self.num_neurons)
    }

    /// Text form: header `P N seed`, then one line of space-separated ±1 per pattern.
    pub fn to_text(&self) -> String {
        let mut out = format!("{} {} {}\n", self.num_patterns, self.num_neurons, self.seed);
        for row in self.iter() {
            let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str, origin: &Path) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| Error::parse(origin, "empty pattern file"))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(Error::parse(origin, "header must be `P N seed`"));
        }
        let p: usize = fields[0]
            .parse()
            .map_err(|_| Error::parse(origin, "bad P in header"))?;
        let n: usize = fields[1]
            .parse()
            .map_err(|_| Error::parse(origin, "bad N in header"))?;
        let seed: u64 = fields[2]
            .parse()
            .map_err(|_| Error::parse(origin, "bad seed in header"))?;
        let mut rows = Vec::with_capacity(p);
        for (i, line) in lines.enumerate() {
            let row = line
                .split_whitespace()
                .map(|tok| tok.parse::<i8>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| Error::parse(origin, format!("bad entry in pattern {i}")))?;
            rows.push(row);
        }
        if rows.len() != p {
            return Err(Error::parse(
                origin,
                format!("header says {p} patterns, found {}", rows.len()),
            ));
        }
        let set = Self::from_rows(rows, seed).map_err(|e| Error::parse(origin, e.to_string()))?;
        if set.num_neurons != n {
            return Err(Error::parse(origin, format!("header says N = {n}")));
        }
        Ok(set)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelKind {
    Rbf,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelConfig {
    pub kind: KernelKind,
    gamma: f64,
}

impl KernelConfig {
    pub fn rbf(gamma: f64) -> Result<Self> {
        if !(gamma.is_finite() && gamma > 0.0) {
            return Err(Error::Argument(format!(
                "gamma must be positive and finite, got {gamma}"
            )));
        }
        Ok(Self {
            kind: KernelKind::Rbf,
            gamma,
        })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }
}

/// Symmetric `P x P` kernel matrix over a pattern set.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    values: DMatrix<f64>,
    gamma: f64,
}

impl GramMatrix {
    /// Wraps an arbitrary symmetric matrix; used by tests and analysis of
    /// synthetic metrics. Symmetry is checked exactly.
    pub fn from_matrix(values: DMatrix<f64>, gamma: f64) -> Result<Self> {
        if !values.is_square() {
            return Err(Error::Dimension("Gram matrix must be square".into()));
        }
        let p = values.nrows();
        for i in 0..p {
            for j in 0..i {
                if values[(i, j)] != values[(j, i)] {
                    return Err(Error::Argument(format!(
                        "Gram matrix not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        Ok(Self { values, gamma })
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn size(&self) -> usize {
        self.values.nrows()
    }
}

fn squared_distance(x: &[i8], y: &[i8]) -> f64 {
    // (x - y)^2 is 0 or 4 for bipolar entries.
    let flips = x.iter().zip(y).filter(|(a, b)| a != b).count();
    4.0 * flips as f64
}

/// `exp(-gamma * ||x - y||^2)`.
pub fn kernel_eval(x: &[i8], y: &[i8], config: &KernelConfig) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Dimension(format!(
            "kernel arguments have lengths {} and {}",
            x.len(),
            y.len()
        )));
    }
    match config.kind {
        KernelKind::Rbf => Ok((-config.gamma * squared_distance(x, y)).exp()),
    }
}

pub fn gram(patterns: &PatternSet, config: &KernelConfig) -> Result<GramMatrix> {
    let p = patterns.num_patterns();
    let mut values = DMatrix::zeros(p, p);
    for mu in 0..p {
        values[(mu, mu)] = kernel_eval(patterns.pattern(mu), patterns.pattern(mu), config)?;
        for nu in 0..mu {
            let k = kernel_eval(patterns.pattern(mu), patterns.pattern(nu), config)?;
            values[(mu, nu)] = k;
            values[(nu, mu)] = k;
        }
    }
    Ok(GramMatrix {
        values,
        gamma: config.gamma,
    })
}

/// Draws `P x N` independent fair signs from SplitMix64 seeded with `seed`.
///
/// Bits are consumed least-significant first, 64 entries per generator word,
/// row-major; bit 1 maps to `+1`.
pub fn generate_patterns(num_patterns: usize, num_neurons: usize, seed: u64) -> Result<PatternSet> {
    if num_patterns == 0 || num_neurons == 0 {
        return Err(Error::Argument(format!(
            "need P >= 1 and N >= 1, got P = {num_patterns}, N = {num_neurons}"
        )));
    }
    let total = num_patterns * num_neurons;
    let mut rng = SplitMix64::new(seed);
    let mut data = Vec::with_capacity(total);
    let mut word = 0u64;
    for idx in 0..total {
        if idx % 64 == 0 {
            word = rng.next_u64();
        }
        data.push(if (word >> (idx % 64)) & 1 == 1 { 1 } else { -1 });
    }
    Ok(PatternSet {
        data,
        num_patterns,
        num_neurons,
        seed,
    })
}

/// Flips exactly `round(flip_fraction * N)` distinct positions chosen by a
/// partial Fisher-Yates shuffle of `0..N` driven by SplitMix64(`seed`).
///
/// The chosen positions depend only on `(N, flip_fraction, seed)`, so applying
/// the same corruption twice restores the input.
pub fn corrupt(pattern: &[i8], flip_fraction: f64, seed: u64) -> Result<Vec<i8>> {
    if !(0.0..=1.0).contains(&flip_fraction) {
        return Err(Error::Argument(format!(
            "flip fraction must lie in [0, 1], got {flip_fraction}"
        )));
    }
    let n = pattern.len();
    let flips = ((flip_fraction * n as f64).round() as usize).min(n);
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = SplitMix64::new(seed);
    for i in 0..flips {
        let j = i + rng.below((n - i) as u64) as usize;
        order.swap(i, j);
    }
    let mut out = pattern.to_vec();
    for &pos in &order[..flips] {
        out[pos] = -out[pos];
    }
    Ok(out)
}

pub fn write_patterns(patterns: &PatternSet, path: &Path) -> Result<()> {
    std::fs::write(path, patterns.to_text()).map_err(|e| Error::io(path, e))
}

pub fn read_patterns(path: &Path) -> Result<PatternSet> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    PatternSet::from_text(&text, path)
}
