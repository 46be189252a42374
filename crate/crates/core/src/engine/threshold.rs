//! Per-gene compression limits, searched one gene at a time with every other
//! gene left at its uncompressed value.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::THRESHOLD_GRID;
use crate::error::Result;
use crate::genome::{Genome, GenomeSchema};

/// Per gene: the largest pruning ratio (continuous genes) or the smallest
/// rank code (discrete genes) that keeps accuracy above the floor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ThresholdVector(pub Vec<f64>);

struct Probe<'a, F> {
    base: Genome,
    gene: usize,
    eval: &'a mut F,
    tested: Vec<(u32, f64)>,
}

impl<F: FnMut(&Genome) -> Result<f64>> Probe<'_, F> {
    fn at(&mut self, step: u32, value: f64) -> Result<f64> {
        if let Some(&(_, acc)) = self.tested.iter().find(|(s, _)| *s == step) {
            return Ok(acc);
        }
        let mut g = self.base.clone();
        g.0[self.gene] = value;
        let acc = (self.eval)(&g)?;
        self.tested.push((step, acc));
        Ok(acc)
    }

    /// Whether the accuracies seen so far are monotone in the step, in the
    /// direction given by `increasing`.
    fn monotone(&self, increasing: bool) -> bool {
        let mut seen = self.tested.clone();
        seen.sort_by_key(|(s, _)| *s);
        seen.windows(2).all(|w| if increasing { w[1].1 >= w[0].1 } else { w[1].1 <= w[0].1 })
    }
}

/// Largest pruning ratio on the 1/64 grid with accuracy above `acc_thr`,
/// found by bisection; 0 when even 1/64 violates the floor. Falls back to a
/// full scan of the grid when the probed accuracies are not monotone.
pub fn find_threshold_continuous<F>(schema: &GenomeSchema, gene: usize, eval: &mut F, acc_thr: f64) -> Result<f64>
where
    F: FnMut(&Genome) -> Result<f64>,
{
    let grid = THRESHOLD_GRID;
    let value = |step: u32| f64::from(step) / f64::from(grid);
    let mut probe = Probe {
        base: schema.identity(),
        gene,
        eval,
        tested: Vec::new(),
    };
    if probe.at(grid, 1.0)? > acc_thr {
        return Ok(1.0);
    }
    let (mut ok, mut bad) = (0, grid);
    while bad - ok > 1 {
        let mid = (ok + bad) / 2;
        if probe.at(mid, value(mid))? > acc_thr {
            ok = mid;
        } else {
            bad = mid;
        }
    }
    if !probe.monotone(false) {
        log::debug!("gene {gene}: accuracy not monotone in pruning ratio, scanning the grid");
        let mut best = 0;
        for step in 1..=grid {
            if probe.at(step, value(step))? > acc_thr {
                best = step;
            }
        }
        return Ok(value(best));
    }
    Ok(value(ok))
}

/// Smallest rank code with accuracy above `acc_thr`, by binary search over
/// the codes; the code ceiling when none qualifies.
pub fn find_threshold_discrete<F>(schema: &GenomeSchema, gene: usize, eval: &mut F, acc_thr: f64) -> Result<f64>
where
    F: FnMut(&Genome) -> Result<f64>,
{
    let top = schema.descriptors[gene].code_max().unwrap_or(1);
    let mut probe = Probe {
        base: schema.identity(),
        gene,
        eval,
        tested: Vec::new(),
    };
    if probe.at(top, f64::from(top))? <= acc_thr {
        log::warn!("gene {gene}: no rank code satisfies the accuracy floor, using the full rank");
        return Ok(f64::from(top));
    }
    if probe.at(1, 1.0)? > acc_thr {
        return Ok(1.0);
    }
    let (mut bad, mut ok) = (1, top);
    while ok - bad > 1 {
        let mid = (ok + bad) / 2;
        if probe.at(mid, f64::from(mid))? > acc_thr {
            ok = mid;
        } else {
            bad = mid;
        }
    }
    if !probe.monotone(true) {
        log::debug!("gene {gene}: accuracy not monotone in rank code, scanning all codes");
        for code in 1..=top {
            if probe.at(code, f64::from(code))? > acc_thr {
                return Ok(f64::from(code));
            }
        }
        return Ok(f64::from(top));
    }
    Ok(f64::from(ok))
}

pub fn find_thresholds<F>(schema: &GenomeSchema, eval: &mut F, acc_thr: f64) -> Result<ThresholdVector>
where
    F: FnMut(&Genome) -> Result<f64>,
{
    let values = schema
        .descriptors
        .iter()
        .enumerate()
        .map(|(gene, d)| {
            if d.is_continuous() {
                find_threshold_continuous(schema, gene, eval, acc_thr)
            } else {
                find_threshold_discrete(schema, gene, eval, acc_thr)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ThresholdVector(values))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::genome::{GeneDescriptor, GeneKind, Task};

    fn schema(kind: GeneKind) -> GenomeSchema {
        GenomeSchema {
            task: if kind == GeneKind::PruneRatio { Task::Pn } else { Task::D },
            descriptors: alloc::vec![GeneDescriptor {
                layer: 0,
                kind,
                max_rank: 64,
            }],
        }
    }

    #[test]
    fn continuous_examples() {
        let s = schema(GeneKind::PruneRatio);
        let mut linear = |g: &Genome| Ok(0.9 - 0.5 * g.0[0]);
        let theta = find_threshold_continuous(&s, 0, &mut linear, 0.8).unwrap();
        assert!((theta - 0.2).abs() <= 1.0 / 64.0, "{theta}");
        assert_eq!(theta, 12.0 / 64.0);

        let mut flat = |_: &Genome| Ok(0.9);
        assert_eq!(find_threshold_continuous(&s, 0, &mut flat, 0.8).unwrap(), 1.0);
        let mut low = |_: &Genome| Ok(0.5);
        assert_eq!(find_threshold_continuous(&s, 0, &mut low, 0.8).unwrap(), 0.0);
    }

    #[test]
    fn discrete_examples() {
        let s = schema(GeneKind::SvdRankCode);
        let mut linear = |g: &Genome| Ok(0.5 + 0.4 * g.0[0] / 64.0);
        assert_eq!(find_threshold_discrete(&s, 0, &mut linear, 0.8).unwrap(), 49.0);
        let mut flat = |_: &Genome| Ok(0.9);
        assert_eq!(find_threshold_discrete(&s, 0, &mut flat, 0.8).unwrap(), 1.0);
        let mut low = |_: &Genome| Ok(0.5);
        assert_eq!(find_threshold_discrete(&s, 0, &mut low, 0.8).unwrap(), 64.0);
    }

    #[test]
    fn non_monotone_accuracy_falls_back_to_a_scan() {
        let s = schema(GeneKind::PruneRatio);
        // A dip around p = 0.5 fools bisection; the scan finds the plateau
        // that extends to 60/64.
        let mut bumpy = |g: &Genome| {
            let p = g.0[0];
            Ok(if (0.45..0.55).contains(&p) { 0.5 } else if p > 60.5 / 64.0 { 0.7 } else { 0.9 - 0.01 * p })
        };
        let theta = find_threshold_continuous(&s, 0, &mut bumpy, 0.8).unwrap();
        assert_eq!(theta, 60.0 / 64.0);
    }

    #[test]
    fn evaluator_errors_propagate() {
        let s = schema(GeneKind::PruneRatio);
        let mut failing = |_: &Genome| Err(crate::Error::Evaluation("boom".into()));
        assert!(find_threshold_continuous(&s, 0, &mut failing, 0.8).is_err());
    }
}
