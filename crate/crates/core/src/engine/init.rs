use alloc::vec::Vec;

use rand::distr::Distribution;
use rand::Rng;
use rand_distr::Normal;

use super::{EngineConfig, ThresholdVector};
use crate::error::{Error, Result};
use crate::genome::{Genome, GenomeSchema};

/// Every gene drawn uniformly over its full domain.
pub fn uniform_init<R: Rng + ?Sized>(schema: &GenomeSchema, count: usize, rng: &mut R) -> Vec<Genome> {
    (0..count)
        .map(|_| {
            Genome(
                schema
                    .descriptors
                    .iter()
                    .map(|d| match d.code_max() {
                        None => rng.random_range(0.0..=1.0),
                        Some(max) => f64::from(rng.random_range(1..=max)),
                    })
                    .collect(),
            )
        })
        .collect()
}

fn warm_draw<R: Rng + ?Sized>(
    schema: &GenomeSchema,
    thresholds: &ThresholdVector,
    sigma_fraction: f64,
    rng: &mut R,
) -> Result<Genome> {
    let mut values = Vec::with_capacity(schema.len());
    for (desc, &theta) in schema.descriptors.iter().zip(&thresholds.0) {
        let v = match desc.code_max() {
            None => {
                let normal = Normal::new(theta / 2.0, sigma_fraction * theta).map_err(|e| Error::InvalidConfig {
                    field: "init_sigma_fraction",
                    reason: alloc::format!("{e}"),
                })?;
                normal.sample(rng).clamp(0.0, theta)
            }
            Some(max) => {
                let lo = (theta as u32).clamp(1, max);
                f64::from(rng.random_range(lo..=max))
            }
        };
        values.push(v);
    }
    Ok(Genome(values))
}

/// Samples individuals inside the per-gene thresholds and keeps those whose
/// accuracy clears `acc_thr`. Candidates are drawn and evaluated in batches
/// of `count`; `eval` returns one accuracy per genome in order.
pub fn warm_init<R, F>(
    schema: &GenomeSchema,
    thresholds: &ThresholdVector,
    config: &EngineConfig,
    count: usize,
    rng: &mut R,
    mut eval: F,
) -> Result<Vec<Genome>>
where
    R: Rng + ?Sized,
    F: FnMut(&[Genome]) -> Result<Vec<f64>>,
{
    if thresholds.0.len() != schema.len() {
        return Err(Error::GenomeLength {
            expected: schema.len(),
            found: thresholds.0.len(),
        });
    }
    let budget = config.init_max_attempts.saturating_mul(count);
    let mut accepted = Vec::with_capacity(count);
    let mut attempts = 0;
    while accepted.len() < count {
        if attempts >= budget {
            return Err(Error::InitExhausted {
                accepted: accepted.len(),
                wanted: count,
                attempts,
            });
        }
        let batch = count.min(budget - attempts);
        let drawn = (0..batch)
            .map(|_| warm_draw(schema, thresholds, config.init_sigma_fraction, rng))
            .collect::<Result<Vec<_>>>()?;
        attempts += batch;
        let accuracies = eval(&drawn)?;
        for (genome, acc) in drawn.into_iter().zip(accuracies) {
            if acc > config.acc_thr && accepted.len() < count {
                accepted.push(genome);
            }
        }
    }
    log::debug!("warm init accepted {count} individuals after {attempts} draws");
    Ok(accepted)
}
