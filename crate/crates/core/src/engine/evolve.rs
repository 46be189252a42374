use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    crossover, find_thresholds, mutate, score, select, uniform_init, warm_init, EngineConfig, InitPolicy, ScoreReport,
    ThresholdVector,
};
use crate::compress::compressed_flops;
use crate::error::{Error, Result};
use crate::evaluator::{Candidate, Evaluator};
use crate::genome::{CompressionPlan, Genome, GenomeSchema, Task};
use crate::model::ModelSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndividualRecord {
    pub iteration: usize,
    pub index: usize,
    pub genome: Genome,
    pub accuracy: f64,
    pub delta_flops: u64,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestSoFar {
    pub genome: Genome,
    pub report: ScoreReport,
}

/// One evaluated population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generation {
    pub iteration: usize,
    pub individuals: Vec<IndividualRecord>,
    pub best: BestSoFar,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchOutcome {
    pub best: BestSoFar,
    pub plan: CompressionPlan,
    pub base_accuracy: f64,
    pub original_flops: u64,
    pub thresholds: Option<ThresholdVector>,
    pub history: Vec<Generation>,
}

impl SearchOutcome {
    /// Compressed over original MACs of the best individual.
    pub fn flops_ratio(&self) -> f64 {
        flops_ratio(self.original_flops, self.best.report.delta_flops)
    }
}

fn flops_ratio(original: u64, delta: u64) -> f64 {
    if original == 0 {
        return 1.0;
    }
    (original - delta) as f64 / original as f64
}

/// A search over one model and task. Accuracies are memoized by genome bits,
/// so re-evaluating an elite or a duplicate costs nothing.
pub struct Session<'m, E> {
    model: &'m ModelSpec,
    schema: GenomeSchema,
    evaluator: E,
    config: EngineConfig,
    base_accuracy: f64,
    original_flops: u64,
    cache: BTreeMap<Vec<u64>, f64>,
    evaluations: usize,
}

impl<'m, E: Evaluator> Session<'m, E> {
    /// Builds the genome schema and measures the uncompressed accuracy.
    pub fn new(model: &'m ModelSpec, task: Task, evaluator: E, config: EngineConfig) -> Result<Self> {
        config.validate()?;
        let schema = GenomeSchema::build(model, task)?;
        let original_flops = compressed_flops(model, &CompressionPlan::uncompressed(model))?;
        let mut session = Session {
            model,
            schema,
            evaluator,
            config,
            base_accuracy: 0.0,
            original_flops,
            cache: BTreeMap::new(),
            evaluations: 0,
        };
        let identity = session.schema.identity();
        session.base_accuracy = session.evaluate(core::slice::from_ref(&identity))?[0];
        Ok(session)
    }

    pub fn schema(&self) -> &GenomeSchema {
        &self.schema
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn model(&self) -> &ModelSpec {
        self.model
    }

    /// Accuracy of the uncompressed model, `acc_o`.
    pub fn base_accuracy(&self) -> f64 {
        self.base_accuracy
    }

    pub fn original_flops(&self) -> u64 {
        self.original_flops
    }

    /// Number of distinct genomes sent to the evaluator so far.
    pub fn evaluations(&self) -> usize {
        self.evaluations
    }

    /// Accuracies of `genomes` in order. Cache misses are deduplicated and
    /// handed to the evaluator as one batch.
    pub fn evaluate(&mut self, genomes: &[Genome]) -> Result<Vec<f64>> {
        let mut pending: Vec<(Vec<u64>, &Genome)> = Vec::new();
        for g in genomes {
            let key = g.key();
            if !self.cache.contains_key(&key) && !pending.iter().any(|(k, _)| *k == key) {
                pending.push((key, g));
            }
        }
        if !pending.is_empty() {
            let plans = pending
                .iter()
                .map(|(_, g)| self.schema.decode(g, self.model))
                .collect::<Result<Vec<_>>>()?;
            let candidates: Vec<Candidate<'_>> = pending
                .iter()
                .zip(&plans)
                .map(|((_, genome), plan)| Candidate { genome, plan })
                .collect();
            let results = self.evaluator.accuracy_batch(&candidates);
            if results.len() != candidates.len() {
                return Err(Error::Evaluation(alloc::format!(
                    "evaluator returned {} results for {} candidates",
                    results.len(),
                    candidates.len()
                )));
            }
            for ((key, _), acc) in pending.into_iter().zip(results) {
                let acc = acc?;
                if !(0.0..=1.0).contains(&acc) {
                    return Err(Error::Evaluation(alloc::format!("accuracy {acc} outside [0, 1]")));
                }
                self.evaluations += 1;
                self.cache.insert(key, acc);
            }
        }
        Ok(genomes.iter().map(|g| self.cache[&g.key()]).collect())
    }

    /// Score of a genome whose accuracy is already known.
    pub fn report(&self, genome: &Genome, accuracy: f64) -> Result<ScoreReport> {
        let plan = self.schema.decode(genome, self.model)?;
        let compressed = compressed_flops(self.model, &plan)?;
        let delta = self.original_flops.saturating_sub(compressed);
        let c = &self.config;
        Ok(score(delta, accuracy, self.base_accuracy, c.acc_thr, c.epsilon_pen))
    }

    /// Warm initialization needs the uncompressed model itself to clear the
    /// accuracy floor.
    pub fn check_feasible(&self) -> Result<()> {
        if self.base_accuracy > self.config.acc_thr {
            Ok(())
        } else {
            Err(Error::Infeasible {
                base_accuracy: self.base_accuracy,
                acc_thr: self.config.acc_thr,
            })
        }
    }

    /// Per-gene thresholds at the configured accuracy floor.
    pub fn thresholds(&mut self) -> Result<ThresholdVector> {
        self.check_feasible()?;
        let schema = self.schema.clone();
        let acc_thr = self.config.acc_thr;
        find_thresholds(
            &schema,
            &mut |g: &Genome| Ok(self.evaluate(core::slice::from_ref(g))?[0]),
            acc_thr,
        )
    }

    /// Runs the generation loop. With warm init, `thresholds` are searched
    /// when not supplied. `observer` sees every evaluated generation.
    pub fn run(
        &mut self,
        thresholds: Option<ThresholdVector>,
        observer: &mut dyn FnMut(&Generation) -> Result<()>,
    ) -> Result<SearchOutcome> {
        let n = self.config.population_size;
        let thresholds = match (self.config.init, thresholds) {
            (InitPolicy::Warm, None) => Some(self.thresholds()?),
            (_, given) => given,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        let mut population = match (self.config.init, &thresholds) {
            (InitPolicy::Warm, Some(theta)) => {
                self.check_feasible()?;
                let schema = self.schema.clone();
                let config = self.config.clone();
                warm_init(&schema, theta, &config, n, &mut rng, |batch| self.evaluate(batch))?
            }
            _ => uniform_init(&self.schema, n, &mut rng),
        };

        let mut best: Option<BestSoFar> = None;
        let mut history = Vec::with_capacity(self.config.iterations + 1);
        for iteration in 0..=self.config.iterations {
            let accuracies = self.evaluate(&population)?;
            let mut individuals = Vec::with_capacity(n);
            for (index, (genome, accuracy)) in population.iter().zip(accuracies).enumerate() {
                let report = self.report(genome, accuracy)?;
                if best.as_ref().is_none_or(|b| report.score > b.report.score) {
                    best = Some(BestSoFar {
                        genome: genome.clone(),
                        report,
                    });
                }
                individuals.push(IndividualRecord {
                    iteration,
                    index,
                    genome: genome.clone(),
                    accuracy,
                    delta_flops: report.delta_flops,
                    score: report.score,
                });
            }
            let scores: Vec<f64> = individuals.iter().map(|r| r.score).collect();
            let generation = Generation {
                iteration,
                individuals,
                best: best.clone().expect("population is non-empty"),
            };
            observer(&generation)?;
            log::info!(
                "iteration {iteration}: best score {:.6e}, flops ratio {:.4}",
                generation.best.report.score,
                flops_ratio(self.original_flops, generation.best.report.delta_flops)
            );
            history.push(generation);
            if iteration == self.config.iterations {
                break;
            }

            let parents = select(&scores, n, &mut rng)?;
            let mut offspring: Vec<Genome> = parents.iter().map(|&i| population[i].clone()).collect();
            crossover(&mut offspring, self.config.p_cross, self.config.p_swap, &mut rng);
            mutate(&mut offspring, &self.schema, &self.config, &mut rng)?;
            if self.config.elitism {
                let slot = rng.random_range(0..n);
                offspring[slot] = best.as_ref().expect("population is non-empty").genome.clone();
            }
            population = offspring;
        }

        let best = best.expect("population is non-empty");
        let plan = self.schema.decode(&best.genome, self.model)?;
        Ok(SearchOutcome {
            best,
            plan,
            base_accuracy: self.base_accuracy,
            original_flops: self.original_flops,
            thresholds,
            history,
        })
    }
}
