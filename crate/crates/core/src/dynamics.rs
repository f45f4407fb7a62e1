//! Recall dynamics of the trained kernel Hopfield network.
//!
//! A probe state enters only through kernel evaluations against the stored
//! patterns: `h_i = sum_nu alpha_{nu i} K(state, xi^nu)`. Updates are
//! synchronous sign updates that keep the current value on a zero field.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::kernel::{kernel_eval, KernelConfig, PatternSet};
use crate::klr::DualWeights;

pub const DEFAULT_SUCCESS_THRESHOLD: f64 = 0.95;

#[derive(Debug, Clone, PartialEq)]
pub struct RecallResult {
    pub final_state: Vec<i8>,
    pub overlap: f64,
    pub converged: bool,
    pub steps: usize,
    pub success: bool,
}

fn check_shapes(state: &[i8], patterns: &PatternSet, weights: &DualWeights) -> Result<()> {
    if state.len() != patterns.num_neurons() {
        return Err(Error::Dimension(format!(
            "state has length {}, network has {} neurons",
            state.len(),
            patterns.num_neurons()
        )));
    }
    if weights.num_patterns() != patterns.num_patterns()
        || weights.num_neurons() != patterns.num_neurons()
    {
        return Err(Error::Dimension(format!(
            "weights are {}x{}, patterns are {}x{}",
            weights.num_patterns(),
            weights.num_neurons(),
            patterns.num_patterns(),
            patterns.num_neurons()
        )));
    }
    Ok(())
}

pub fn local_field(
    state: &[i8],
    patterns: &PatternSet,
    weights: &DualWeights,
    kcfg: &KernelConfig,
) -> Result<Vec<f64>> {
    check_shapes(state, patterns, weights)?;
    let similarities = patterns
        .iter()
        .map(|xi| kernel_eval(state, xi, kcfg))
        .collect::<Result<Vec<f64>>>()?;
    let fields = (0..weights.num_neurons())
        .map(|i| {
            weights
                .alpha
                .column(i)
                .iter()
                .zip(&similarities)
                .map(|(a, k)| a * k)
                .sum()
        })
        .collect();
    Ok(fields)
}

/// One synchronous update. Returns the new state and the number of flips.
pub fn step(
    state: &[i8],
    patterns: &PatternSet,
    weights: &DualWeights,
    kcfg: &KernelConfig,
) -> Result<(Vec<i8>, usize)> {
    let h = local_field(state, patterns, weights, kcfg)?;
    let mut changed = 0;
    let next = state
        .iter()
        .zip(&h)
        .map(|(&s, &hi)| {
            let v = if hi > 0.0 {
                1
            } else if hi < 0.0 {
                -1
            } else {
                s
            };
            if v != s {
                changed += 1;
            }
            v
        })
        .collect();
    Ok((next, changed))
}

pub fn overlap(state: &[i8], pattern: &[i8]) -> Result<f64> {
    if state.len() != pattern.len() {
        return Err(Error::Dimension(format!(
            "overlap of vectors with lengths {} and {}",
            state.len(),
            pattern.len()
        )));
    }
    if state.is_empty() {
        return Err(Error::Dimension("overlap of empty vectors".into()));
    }
    let dot: i64 = state
        .iter()
        .zip(pattern)
        .map(|(&a, &b)| i64::from(a) * i64::from(b))
        .sum();
    Ok(dot as f64 / state.len() as f64)
}

/// Iterates [`step`] from `cue` until a fixed point, a 2-cycle or `max_steps`.
///
/// On a 2-cycle the state of the cycle with the higher overlap is reported
/// and `converged` is false.
pub fn recall(
    cue: &[i8],
    target_index: usize,
    patterns: &PatternSet,
    weights: &DualWeights,
    kcfg: &KernelConfig,
    max_steps: usize,
    success_threshold: f64,
) -> Result<RecallResult> {
    if max_steps == 0 {
        return Err(Error::Argument("max_steps must be at least 1".into()));
    }
    if !(success_threshold > 0.0 && success_threshold <= 1.0) {
        return Err(Error::Argument(format!(
            "success threshold must lie in (0, 1], got {success_threshold}"
        )));
    }
    if target_index >= patterns.num_patterns() {
        return Err(Error::Argument(format!(
            "target {target_index} out of range for {} patterns",
            patterns.num_patterns()
        )));
    }
    let target = patterns.pattern(target_index);
    let mut previous: Option<Vec<i8>> = None;
    let mut state = cue.to_vec();
    let mut converged = false;
    let mut steps = 0;

    while steps < max_steps {
        let (next, changed) = step(&state, patterns, weights, kcfg)?;
        steps += 1;
        if changed == 0 {
            converged = true;
            break;
        }
        if previous.as_deref() == Some(next.as_slice()) {
            // state_{k+2} == state_k != state_{k+1}
            if overlap(&next, target)? > overlap(&state, target)? {
                state = next;
            }
            break;
        }
        previous = Some(std::mem::replace(&mut state, next));
    }

    let m = overlap(&state, target)?;
    Ok(RecallResult {
        final_state: state,
        overlap: m,
        converged,
        steps,
        success: m >= success_threshold,
    })
}

/// One row of a recall batch.
#[derive(Debug, Clone, PartialEq)]
pub struct RecallTrial {
    pub trial: usize,
    pub target: usize,
    pub flip_fraction: f64,
    pub result: RecallResult,
}

/// `trial,target,flip_fraction,steps,converged,overlap,success` followed by
/// one `# flip_fraction=..,success_rate=..` comment line per fraction, in
/// order of first appearance.
pub fn recall_csv(trials: &[RecallTrial]) -> String {
    let mut out = String::from("trial,target,flip_fraction,steps,converged,overlap,success\n");
    for t in trials {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            t.trial,
            t.target,
            t.flip_fraction,
            t.result.steps,
            t.result.converged,
            t.result.overlap,
            t.result.success
        );
    }
    let mut fractions: Vec<f64> = Vec::new();
    for t in trials {
        if !fractions.contains(&t.flip_fraction) {
            fractions.push(t.flip_fraction);
        }
    }
    for f in fractions {
        let rows: Vec<&RecallTrial> = trials.iter().filter(|t| t.flip_fraction == f).collect();
        let wins = rows.iter().filter(|t| t.result.success).count();
        let _ = writeln!(
            out,
            "# flip_fraction={},success_rate={},trials={}",
            f,
            wins as f64 / rows.len() as f64,
            rows.len()
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{corrupt, generate_patterns};
    use crate::klr::{train, TrainConfig};

    fn trained(
        p: usize,
        n: usize,
        gamma: f64,
        seed: u64,
    ) -> (PatternSet, DualWeights, KernelConfig) {
        let pats = generate_patterns(p, n, seed).unwrap();
        let kcfg = KernelConfig::rbf(gamma).unwrap();
        let tcfg = TrainConfig {
            learning_rate: 0.05,
            max_epochs: 3000,
            ..TrainConfig::default()
        };
        let w = train(&pats, &kcfg, &tcfg).unwrap();
        (pats, w, kcfg)
    }

    #[test]
    fn overlap_examples() {
        let x = [1, -1, 1, 1, -1, -1, 1, 1, -1, 1];
        assert_eq!(overlap(&x, &x).unwrap(), 1.0);
        let neg: Vec<i8> = x.iter().map(|v| -v).collect();
        assert_eq!(overlap(&x, &neg).unwrap(), -1.0);
        let mut y = x;
        y[0] = -y[0];
        y[5] = -y[5];
        assert!((overlap(&x, &y).unwrap() - 0.6).abs() < 1e-15);
        assert!(overlap(&x, &x[..3]).is_err());
    }

    #[test]
    fn zero_weights_freeze_dynamics() {
        let pats = generate_patterns(3, 8, 1).unwrap();
        let w = DualWeights::zeros(3, 8, 0.1, 0.0);
        let kcfg = KernelConfig::rbf(0.1).unwrap();
        let cue = corrupt(pats.pattern(1), 0.25, 3).unwrap();
        let h = local_field(&cue, &pats, &w, &kcfg).unwrap();
        assert!(h.iter().all(|&v| v == 0.0));
        let (next, changed) = step(&cue, &pats, &w, &kcfg).unwrap();
        assert_eq!(changed, 0);
        assert_eq!(next, cue);
        let r = recall(&cue, 1, &pats, &w, &kcfg, 10, 0.95).unwrap();
        assert!(r.converged);
        assert_eq!(r.steps, 1);
        assert_eq!(r.overlap, overlap(&cue, pats.pattern(1)).unwrap());
    }

    #[test]
    fn field_at_stored_pattern_matches_training_field() {
        let (pats, w, kcfg) = trained(4, 12, 0.05, 2);
        let k = crate::kernel::gram(&pats, &kcfg).unwrap();
        let h_train = k.values() * &w.alpha;
        for mu in 0..4 {
            let h = local_field(pats.pattern(mu), &pats, &w, &kcfg).unwrap();
            for i in 0..12 {
                assert!((h[i] - h_train[(mu, i)]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn field_matches_double_loop() {
        let pats = generate_patterns(3, 8, 4).unwrap();
        let mut w = DualWeights::zeros(3, 8, 0.07, 0.0);
        for r in 0..3 {
            for c in 0..8 {
                w.alpha[(r, c)] = ((r * 8 + c) as f64 * 0.37).sin();
            }
        }
        let kcfg = KernelConfig::rbf(0.07).unwrap();
        let probe = generate_patterns(1, 8, 99).unwrap().pattern(0).to_vec();
        let h = local_field(&probe, &pats, &w, &kcfg).unwrap();
        for i in 0..8 {
            let mut acc = 0.0;
            for nu in 0..3 {
                let mut d2 = 0.0;
                for j in 0..8 {
                    d2 += (f64::from(probe[j]) - f64::from(pats.pattern(nu)[j])).powi(2);
                }
                acc += w.alpha[(nu, i)] * (-0.07 * d2).exp();
            }
            assert!((h[i] - acc).abs() < 1e-14);
        }
    }

    #[test]
    fn stored_patterns_are_fixed_points() {
        let (pats, w, kcfg) = trained(2, 32, 0.02, 6);
        for mu in 0..2 {
            let (_, changed) = step(pats.pattern(mu), &pats, &w, &kcfg).unwrap();
            assert_eq!(changed, 0);
            let r = recall(pats.pattern(mu), mu, &pats, &w, &kcfg, 20, 0.95).unwrap();
            assert_eq!(r.overlap, 1.0);
            assert!(r.steps <= 1 && r.success && r.converged);
        }
    }

    #[test]
    fn corrupted_cue_returns_to_memory() {
        let (pats, w, kcfg) = trained(4, 64, 0.01, 7);
        let cue = corrupt(pats.pattern(2), 0.1, 5).unwrap();
        let r = recall(&cue, 2, &pats, &w, &kcfg, 20, 0.95).unwrap();
        assert_eq!(r.overlap, 1.0);
    }

    #[test]
    fn two_cycle_is_detected() {
        // Two patterns with anti-Hebbian weights: each neuron copies the
        // negation of the nearer memory, so a probe alternates forever.
        let a: Vec<i8> = vec![1, 1, 1, 1];
        let b: Vec<i8> = vec![-1, -1, -1, -1];
        let pats = PatternSet::from_rows(vec![a.clone(), b.clone()], 0).unwrap();
        let mut w = DualWeights::zeros(2, 4, 1.0, 0.0);
        for i in 0..4 {
            w.alpha[(0, i)] = -1.0;
            w.alpha[(1, i)] = 1.0;
        }
        let kcfg = KernelConfig::rbf(1.0).unwrap();
        let r = recall(&a, 0, &pats, &w, &kcfg, 100, 0.95).unwrap();
        assert!(!r.converged);
        assert_eq!(r.steps, 2);
        assert_eq!(r.final_state, a);
        assert_eq!(r.overlap, 1.0);
    }

    #[test]
    fn recall_validates_arguments() {
        let pats = generate_patterns(2, 4, 1).unwrap();
        let w = DualWeights::zeros(2, 4, 0.1, 0.0);
        let kcfg = KernelConfig::rbf(0.1).unwrap();
        let cue = pats.pattern(0).to_vec();
        assert!(recall(&cue, 0, &pats, &w, &kcfg, 0, 0.9).is_err());
        assert!(recall(&cue, 0, &pats, &w, &kcfg, 5, 0.0).is_err());
        assert!(recall(&cue, 2, &pats, &w, &kcfg, 5, 0.9).is_err());
        assert!(recall(&cue[..3], 0, &pats, &w, &kcfg, 5, 0.9).is_err());
    }

    #[test]
    fn csv_summary_lines() {
        let res = |success| RecallResult {
            final_state: vec![1],
            overlap: if success { 1.0 } else { 0.0 },
            converged: true,
            steps: 1,
            success,
        };
        let trials = vec![
            RecallTrial {
                trial: 0,
                target: 0,
                flip_fraction: 0.0,
                result: res(true),
            },
            RecallTrial {
                trial: 0,
                target: 0,
                flip_fraction: 0.5,
                result: res(false),
            },
            RecallTrial {
                trial: 1,
                target: 0,
                flip_fraction: 0.5,
                result: res(true),
            },
        ];
        let csv = recall_csv(&trials);
        assert!(csv.contains("# flip_fraction=0,success_rate=1,trials=1\n"));
        assert!(csv.contains("# flip_fraction=0.5,success_rate=0.5,trials=2\n"));
    }
}
