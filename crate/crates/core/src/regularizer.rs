//! Entropy-drop variance penalty.
//!
//! For block `b` with layer entropies `H_{b,0..N}` the drops are
//! `dH_n = H_{n+1} - H_n`, the penalty `L_b` is their population variance,
//! the block divergence is `D_b = lambda * L_b`, and `E_loss` sums `D_b` over
//! the enabled blocks.

use serde::{Deserialize, Serialize};

use crate::entropy::{features_to_samples, EntropyConfig, SampleMatrix};
use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

/// Per-layer entropies of one block and their consecutive drops.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropyTrajectory {
    pub block: usize,
    pub entropies: Vec<f64>,
    pub drops: Vec<f64>,
}

impl EntropyTrajectory {
    pub fn new(block: usize, entropies: Vec<f64>) -> Result<Self> {
        let drops = entropy_drops(&entropies)?;
        Ok(Self {
            block,
            entropies,
            drops,
        })
    }

    /// Stored drops equal the drops recomputed from the entropies.
    pub fn is_consistent(&self) -> bool {
        entropy_drops(&self.entropies).is_ok_and(|d| d == self.drops)
    }
}

/// `H[n+1] - H[n]` for consecutive entries.
pub fn entropy_drops(entropies: &[f64]) -> Result<Vec<f64>> {
    if entropies.len() < 2 {
        return Err(Error::Domain(format!(
            "entropy drops need at least 2 entropies, got {}",
            entropies.len()
        )));
    }
    Ok(entropies.windows(2).map(|w| w[1] - w[0]).collect())
}

/// Population variance (divisor N) of the drops.
///
/// Values are shifted by the first drop before averaging, so equal drops
/// give exactly zero.
pub fn variance_penalty(drops: &[f64]) -> Result<f64> {
    let Some(&first) = drops.first() else {
        return Err(Error::Domain("variance penalty of zero drops".into()));
    };
    let n = drops.len() as f64;
    let mean = drops.iter().map(|d| d - first).sum::<f64>() / n;
    Ok(drops
        .iter()
        .map(|d| {
            let t = d - first - mean;
            t * t
        })
        .sum::<f64>()
        / n)
}

/// `D_b = lambda * L_b`.
pub fn block_divergence(penalty: f64, lambda: f64) -> Result<f64> {
    check_lambda(lambda)?;
    if !(penalty >= 0.0) {
        return Err(Error::Domain(format!("penalty must be >= 0, got {penalty}")));
    }
    Ok(lambda * penalty)
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::Config(format!("lambda must be finite and >= 0, got {lambda}")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockTerm {
    pub block: usize,
    /// `L_b`
    pub penalty: f64,
    /// `D_b = lambda * L_b`, reported even when the block is disabled.
    pub divergence: f64,
    /// Whether `D_b` contributes to the total.
    pub enabled: bool,
    /// Only one drop was available, so `L_b = 0` structurally.
    pub underdetermined: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElossBreakdown {
    pub blocks: Vec<BlockTerm>,
    pub lambda: f64,
    /// Sum of `D_b` over enabled blocks.
    pub total: f64,
}

impl ElossBreakdown {
    pub fn penalties(&self) -> Vec<f64> {
        self.blocks.iter().map(|b| b.penalty).collect()
    }

    /// `sum_b L_b` over all blocks regardless of the mask.
    pub fn metric_total(&self) -> f64 {
        self.blocks.iter().map(|b| b.penalty).sum()
    }

    pub fn mean_penalty(&self) -> f64 {
        if self.blocks.is_empty() {
            0.0
        } else {
            self.metric_total() / self.blocks.len() as f64
        }
    }
}

fn check_mask(blocks: usize, mask: &[bool]) -> Result<()> {
    if mask.len() != blocks {
        return Err(Error::Config(format!(
            "mask has {} entries for {blocks} blocks",
            mask.len()
        )));
    }
    Ok(())
}

/// Assemble the breakdown from per-block penalties. Disabled blocks keep
/// their `L_b` but add nothing to the total.
pub fn eloss_total(penalties: &[f64], lambda: f64, mask: &[bool]) -> Result<ElossBreakdown> {
    check_lambda(lambda)?;
    check_mask(penalties.len(), mask)?;
    let mut blocks = Vec::with_capacity(penalties.len());
    let mut total = 0.0;
    for (b, (&penalty, &enabled)) in penalties.iter().zip(mask).enumerate() {
        let divergence = block_divergence(penalty, lambda)?;
        if enabled {
            total += divergence;
        }
        blocks.push(BlockTerm {
            block: b,
            penalty,
            divergence,
            enabled,
            underdetermined: false,
        });
    }
    Ok(ElossBreakdown {
        blocks,
        lambda,
        total,
    })
}

/// Breakdown plus the trajectories it was computed from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElossReport {
    pub breakdown: ElossBreakdown,
    pub trajectories: Vec<EntropyTrajectory>,
}

fn assemble(
    trajectories: Vec<EntropyTrajectory>,
    lambda: f64,
    mask: &[bool],
) -> Result<ElossReport> {
    let penalties = trajectories
        .iter()
        .map(|t| variance_penalty(&t.drops))
        .collect::<Result<Vec<_>>>()?;
    let mut breakdown = eloss_total(&penalties, lambda, mask)?;
    for (term, t) in breakdown.blocks.iter_mut().zip(&trajectories) {
        term.underdetermined = t.drops.len() < 2;
    }
    Ok(ElossReport {
        breakdown,
        trajectories,
    })
}

fn check_captures<T>(captures: &[Vec<T>]) -> Result<()> {
    if let Some((b, c)) = captures.iter().enumerate().find(|(_, c)| c.len() < 2) {
        return Err(Error::Config(format!(
            "block {b} has {} captured layers; at least 2 are needed",
            c.len()
        )));
    }
    Ok(())
}

/// Detached ("metric only") breakdown from per-block sample matrices.
pub fn eloss_metric(
    captures: &[Vec<SampleMatrix>],
    cfg: &EntropyConfig,
    lambda: f64,
    mask: &[bool],
) -> Result<ElossReport> {
    check_mask(captures.len(), mask)?;
    check_captures(captures)?;
    let mut trajectories = Vec::with_capacity(captures.len());
    for (b, layers) in captures.iter().enumerate() {
        let entropies = layers
            .iter()
            .enumerate()
            .map(|(l, s)| {
                cfg.estimate_samples(s)
                    .map(|e| e.value)
                    .map_err(|e| e.at_layer(b, l))
            })
            .collect::<Result<Vec<_>>>()?;
        trajectories.push(EntropyTrajectory::new(b, entropies)?);
    }
    assemble(trajectories, lambda, mask)
}

/// Detached breakdown from per-block feature tensors.
pub fn eloss_metric_from_features(
    captures: &[Vec<Tensor>],
    cfg: &EntropyConfig,
    lambda: f64,
    mask: &[bool],
) -> Result<ElossReport> {
    let samples = captures
        .iter()
        .map(|layers| {
            layers
                .iter()
                .map(|t| features_to_samples(t, cfg.axis))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    eloss_metric(&samples, cfg, lambda, mask)
}

/// Differentiable E_loss recorded on a tape.
#[derive(Debug, Clone)]
pub struct TapeEloss {
    /// Scalar node holding the total over enabled blocks.
    pub total: Var,
    pub report: ElossReport,
}

/// Record features -> entropies -> drops -> `L_b` -> `D_b` -> `E_loss` on
/// `tape`. Gradient reaches only captures of enabled blocks; disabled blocks
/// are estimated detached and reported with their `L_b`.
pub fn eloss_from_captures(
    tape: &mut Tape,
    captures: &[Vec<Var>],
    cfg: &EntropyConfig,
    lambda: f64,
    mask: &[bool],
) -> Result<TapeEloss> {
    check_lambda(lambda)?;
    check_mask(captures.len(), mask)?;
    check_captures(captures)?;

    let mut trajectories = Vec::with_capacity(captures.len());
    let mut divergences = Vec::new();
    for (b, layers) in captures.iter().enumerate() {
        if !mask[b] {
            let entropies = layers
                .iter()
                .enumerate()
                .map(|(l, &v)| {
                    cfg.estimate(tape.value(v))
                        .map(|e| e.value)
                        .map_err(|e| e.at_layer(b, l))
                })
                .collect::<Result<Vec<_>>>()?;
            trajectories.push(EntropyTrajectory::new(b, entropies)?);
            continue;
        }
        let h = layers
            .iter()
            .enumerate()
            .map(|(l, &v)| cfg.estimate_on_tape(tape, v).map_err(|e| e.at_layer(b, l)))
            .collect::<Result<Vec<_>>>()?;
        let drops = h
            .windows(2)
            .map(|w| tape.sub(w[1], w[0]))
            .collect::<Result<Vec<_>>>()?;
        let drops = tape.stack(&drops)?;
        let penalty = tape.var_population(drops)?;
        divergences.push(tape.scale(penalty, lambda)?);
        let entropies = h.iter().map(|&v| tape.value(v).data()[0]).collect();
        trajectories.push(EntropyTrajectory::new(b, entropies)?);
    }

    let total = match divergences.as_slice() {
        [] => tape.constant(Tensor::scalar(0.0)),
        [only] => *only,
        many => {
            let stacked = tape.stack(many)?;
            tape.sum(stacked)?
        }
    };
    let report = assemble(trajectories, lambda, mask)?;
    Ok(TapeEloss { total, report })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::entropy::SampleAxis;
    use crate::rng::SplitMix64;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn drops_examples() {
        assert_eq!(entropy_drops(&[3.0, 2.0, 1.0]).unwrap(), vec![-1.0, -1.0]);
        let d = entropy_drops(&[1.0, 0.4, 0.1]).unwrap();
        assert_abs_diff_eq!(d[0], -0.6, epsilon = 1e-15);
        assert_abs_diff_eq!(d[1], -0.3, epsilon = 1e-15);
        assert!(matches!(entropy_drops(&[5.0]), Err(Error::Domain(_))));
    }

    #[test]
    fn penalty_examples() {
        assert_eq!(variance_penalty(&[-1.0, -1.0, -1.0]).unwrap(), 0.0);
        assert_eq!(variance_penalty(&[1.0, 2.0, 3.0]).unwrap(), 2.0 / 3.0);
        assert_eq!(variance_penalty(&[-0.5]).unwrap(), 0.0);
        assert!(variance_penalty(&[]).is_err());
        // equal drops whose naive mean would round
        assert_eq!(variance_penalty(&[-0.1, -0.1, -0.1]).unwrap(), 0.0);
    }

    #[test]
    fn divergence_examples() {
        assert_eq!(block_divergence(0.5, 1.0).unwrap(), 0.5);
        assert_eq!(block_divergence(7.0, 0.0).unwrap(), 0.0);
        assert_abs_diff_eq!(block_divergence(0.3, 2.0).unwrap(), 0.6, epsilon = 1e-15);
        assert!(matches!(block_divergence(0.3, -1.0), Err(Error::Config(_))));
    }

    #[test]
    fn total_examples() {
        let b = eloss_total(&[0.2, 0.3], 1.0, &[true, true]).unwrap();
        assert_abs_diff_eq!(b.total, 0.5, epsilon = 1e-15);
        let b = eloss_total(&[0.2, 0.3], 1.0, &[false, false]).unwrap();
        assert_eq!(b.total, 0.0);
        assert_eq!(b.penalties(), vec![0.2, 0.3]);
        let b = eloss_total(&[], 1.0, &[]).unwrap();
        assert_eq!(b.total, 0.0);
        assert!(matches!(
            eloss_total(&[0.2], 1.0, &[true, false]),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn two_layer_block_is_underdetermined() {
        let t = EntropyTrajectory::new(0, vec![1.0, 0.5]).unwrap();
        let r = assemble(vec![t], 1.0, &[true]).unwrap();
        assert_eq!(r.breakdown.blocks[0].penalty, 0.0);
        assert!(r.breakdown.blocks[0].underdetermined);
    }

    #[test]
    fn identical_layers_give_zero_penalty() {
        let mut g = SplitMix64::stream(2, "same");
        let t = Tensor::new(&[32, 3], (0..96).map(|_| g.normal()).collect()).unwrap();
        let mut tape = Tape::new();
        let layers: Vec<Var> = (0..4).map(|_| tape.param(t.clone())).collect();
        let cfg = EntropyConfig::knn(1, SampleAxis::PositionsAsSamples);
        let out = eloss_from_captures(&mut tape, &[layers], &cfg, 1.0, &[true]).unwrap();
        assert_eq!(out.report.breakdown.blocks[0].penalty, 0.0);
        assert_eq!(tape.value(out.total).item(), Some(0.0));
    }

    #[test]
    fn degenerate_capture_reports_coordinates() {
        let mut tape = Tape::new();
        let ok = tape.param(Tensor::new(&[3, 1], vec![0.0, 1.0, 3.0]).unwrap());
        let bad = tape.param(Tensor::new(&[3, 1], vec![0.0, 0.0, 3.0]).unwrap());
        let cfg = EntropyConfig::knn(1, SampleAxis::PositionsAsSamples);
        let err = eloss_from_captures(&mut tape, &[vec![ok, ok, ok], vec![ok, ok, bad]], &cfg, 1.0, &[true, true])
            .unwrap_err();
        match err {
            Error::DegenerateSamples { rows, at: Some(c) } => {
                assert_eq!(rows, vec![0, 1]);
                assert_eq!((c.block, c.layer), (1, 2));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn tape_and_metric_paths_agree() {
        let mut g = SplitMix64::stream(8, "agree");
        let caps: Vec<Vec<Tensor>> = (0..2)
            .map(|_| {
                (0..4)
                    .map(|l| {
                        let s = 1.0 / (l as f64 + 1.0);
                        Tensor::new(&[40, 2], (0..80).map(|_| s * g.normal()).collect()).unwrap()
                    })
                    .collect()
            })
            .collect();
        let cfg = EntropyConfig::knn(1, SampleAxis::PositionsAsSamples);
        let metric = eloss_metric_from_features(&caps, &cfg, 1.0, &[true, false]).unwrap();
        let mut tape = Tape::new();
        let vars: Vec<Vec<Var>> = caps
            .iter()
            .map(|b| b.iter().map(|t| tape.param(t.clone())).collect())
            .collect();
        let taped = eloss_from_captures(&mut tape, &vars, &cfg, 1.0, &[true, false]).unwrap();
        assert_eq!(metric, taped.report);
        assert_abs_diff_eq!(
            tape.value(taped.total).item().unwrap(),
            metric.breakdown.total,
            epsilon = 1e-12
        );
        // gradient only reaches the enabled block
        tape.backward(taped.total).unwrap();
        assert!(tape.grad(vars[0][0]).is_some());
        assert!(tape.grad(vars[1][0]).is_none());
    }

    proptest! {
        #[test]
        fn penalty_is_nonnegative_and_shift_invariant(
            drops in proptest::collection::vec(-5.0f64..5.0, 1..12),
            shift in -3.0f64..3.0,
        ) {
            let l = variance_penalty(&drops).unwrap();
            prop_assert!(l >= 0.0);
            let shifted: Vec<f64> = drops.iter().map(|d| d + shift).collect();
            let ls = variance_penalty(&shifted).unwrap();
            prop_assert!((l - ls).abs() <= 1e-9 * (1.0 + l));
        }

        #[test]
        fn entropy_shift_leaves_drops_unchanged(
            h in proptest::collection::vec(-5.0f64..5.0, 2..10),
            c in -2.0f64..2.0,
        ) {
            let a = entropy_drops(&h).unwrap();
            let hs: Vec<f64> = h.iter().map(|v| v + c).collect();
            let b = entropy_drops(&hs).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() <= 1e-12);
            }
            let la = variance_penalty(&a).unwrap();
            let lb = variance_penalty(&b).unwrap();
            prop_assert!((la - lb).abs() <= 1e-10);
        }

        #[test]
        fn zero_set_is_equal_drops(v in -5.0f64..5.0, n in 1usize..10) {
            prop_assert_eq!(variance_penalty(&vec![v; n]).unwrap(), 0.0);
        }

        #[test]
        fn block_additivity(
            pens in proptest::collection::vec(0.0f64..4.0, 1..8),
            bits in any::<u16>(),
            lambda in 0.0f64..3.0,
        ) {
            let m = pens.len();
            let mask_a: Vec<bool> = (0..m).map(|i| bits >> i & 1 == 1).collect();
            let mask_b: Vec<bool> = mask_a.iter().map(|x| !x).collect();
            let all = eloss_total(&pens, lambda, &vec![true; m]).unwrap().total;
            let a = eloss_total(&pens, lambda, &mask_a).unwrap().total;
            let b = eloss_total(&pens, lambda, &mask_b).unwrap().total;
            prop_assert!((all - (a + b)).abs() <= 1e-12 * (1.0 + all));
            let bd = eloss_total(&pens, lambda, &mask_a).unwrap();
            for t in &bd.blocks {
                prop_assert_eq!(t.divergence, lambda * t.penalty);
            }
        }
    }
}
