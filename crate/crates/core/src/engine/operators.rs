use alloc::vec::Vec;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_distr::Normal;

use super::EngineConfig;
use crate::error::{Error, Result};
use crate::genome::{Genome, GenomeSchema};

/// Selection law: probability proportional to `s − min(s)`, uniform when
/// every score is equal.
pub fn selection_probabilities(scores: &[f64]) -> Vec<f64> {
    let min = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let weights: Vec<f64> = scores.iter().map(|s| s - min).collect();
    let total: f64 = weights.iter().sum();
    if !(total > 0.0 && total.is_finite()) {
        let n = scores.len() as f64;
        return scores.iter().map(|_| 1.0 / n).collect();
    }
    weights.iter().map(|w| w / total).collect()
}

/// Draws `count` parent indices with replacement under the selection law.
pub fn select<R: Rng + ?Sized>(scores: &[f64], count: usize, rng: &mut R) -> Result<Vec<usize>> {
    if scores.is_empty() {
        return Err(Error::InvalidConfig {
            field: "population_size",
            reason: "cannot select from an empty population".into(),
        });
    }
    let probs = selection_probabilities(scores);
    let dist = WeightedIndex::new(&probs).map_err(|e| Error::Evaluation(alloc::format!("selection weights: {e}")))?;
    Ok((0..count).map(|_| dist.sample(rng)).collect())
}

/// Uniform crossover on adjacent pairs `(0,1), (2,3), …`: each pair crosses
/// with probability `p_cross`, then each gene position swaps with
/// probability `p_swap`.
pub fn crossover<R: Rng + ?Sized>(population: &mut [Genome], p_cross: f64, p_swap: f64, rng: &mut R) {
    for pair in population.chunks_exact_mut(2) {
        if !rng.random_bool(p_cross) {
            continue;
        }
        let (a, b) = pair.split_at_mut(1);
        for (x, y) in a[0].0.iter_mut().zip(b[0].0.iter_mut()) {
            if rng.random_bool(p_swap) {
                core::mem::swap(x, y);
            }
        }
    }
}

/// Each individual mutates with probability `p_mutate`; within it each gene
/// is tweaked with probability `p_tweak`. Continuous genes get Gaussian
/// noise, rank codes step by ±1; both are clamped to the gene domain.
pub fn mutate<R: Rng + ?Sized>(
    population: &mut [Genome],
    schema: &GenomeSchema,
    config: &EngineConfig,
    rng: &mut R,
) -> Result<()> {
    let noise = Normal::new(0.0, config.mutation_sigma).map_err(|e| Error::InvalidConfig {
        field: "mutation_sigma",
        reason: alloc::format!("{e}"),
    })?;
    for genome in population.iter_mut() {
        if !rng.random_bool(config.p_mutate) {
            continue;
        }
        for (value, desc) in genome.0.iter_mut().zip(&schema.descriptors) {
            if !rng.random_bool(config.p_tweak) {
                continue;
            }
            let tweaked = if desc.is_continuous() {
                *value + noise.sample(rng)
            } else if rng.random_bool(0.5) {
                *value + 1.0
            } else {
                *value - 1.0
            };
            *value = desc.clamp(tweaked);
        }
    }
    Ok(())
}
