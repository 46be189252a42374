//! The four CLI commands, usable as library calls.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use evocompress_core::compress::{apply_plan, compressed_flops};
use evocompress_core::engine::{Session, ThresholdVector};
use evocompress_core::genome::{CompressionPlan, Genome, GeneKind};
use evocompress_core::model::{LayerKind, ModelSpec};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{build_evaluator, Assets, RunConfig};
use crate::container::load_model;
use crate::error::{AppError, Result};

/// Overrides shared by the run commands.
#[derive(Debug, Clone)]
pub struct RunOptions {
    pub workers: usize,
    pub seed: Option<u64>,
    pub out: PathBuf,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            workers: 1,
            seed: None,
            out: PathBuf::from("out"),
        }
    }
}

fn apply_overrides(mut config: RunConfig, opts: &RunOptions) -> RunConfig {
    if let Some(seed) = opts.seed {
        config.engine.seed = seed;
    }
    config
}

fn create_out(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| AppError::io(dir, e))
}

/// Writes through a temporary sibling and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| AppError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| AppError::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| AppError::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn ratio(original: u64, compressed: u64) -> f64 {
    if original == 0 {
        1.0
    } else {
        compressed as f64 / original as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerFlops {
    pub layer: usize,
    pub kind: LayerKind,
    pub shape: String,
    pub macs: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub compressed_macs: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlopsReport {
    pub model: String,
    pub layers: Vec<LayerFlops>,
    pub total: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub compressed_total: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ratio: Option<f64>,
}

impl std::fmt::Display for FlopsReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "model {}: {} layers, FLOPs counted as multiply-accumulates", self.model, self.layers.len())?;
        writeln!(f, "{:<6} {:<16} {:<14} {:>12} {:>12}", "layer", "kind", "shape", "MACs", "compressed")?;
        for l in &self.layers {
            let kind = serde_json::to_value(l.kind).expect("serializable");
            let compressed = l.compressed_macs.map_or(String::from("-"), |c| c.to_string());
            writeln!(
                f,
                "{:<6} {:<16} {:<14} {:>12} {:>12}",
                l.layer,
                kind.as_str().unwrap_or("?"),
                l.shape,
                l.macs,
                compressed
            )?;
        }
        writeln!(f, "total {}", self.total)?;
        if let (Some(c), Some(r)) = (self.compressed_total, self.ratio) {
            writeln!(f, "compressed total {c}, ratio {r:.6}")?;
        }
        Ok(())
    }
}

pub fn read_plan(path: &Path) -> Result<CompressionPlan> {
    let text = fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| AppError::parse(path, e))
}

pub fn cmd_flops(model_path: &Path, plan_path: Option<&Path>) -> Result<FlopsReport> {
    let (model, tensors) = load_model(model_path)?;
    let compressed = match plan_path {
        Some(p) => {
            let plan = read_plan(p)?;
            plan.validate(&model).map_err(|e| AppError::parse(p, e))?;
            let total = compressed_flops(&model, &plan)?;
            let per_layer = apply_plan(&model, &tensors, &plan)?
                .layers
                .iter()
                .map(|l| l.macs())
                .collect::<evocompress_core::Result<Vec<_>>>()?;
            Some((total, per_layer))
        }
        None => None,
    };
    Ok(flops_report(&model, compressed))
}

fn flops_report(model: &ModelSpec, compressed: Option<(u64, Vec<u64>)>) -> FlopsReport {
    let total: u64 = model.layer_flops().iter().sum();
    let layers = model
        .layers()
        .iter()
        .zip(model.layer_flops())
        .map(|(l, &macs)| LayerFlops {
            layer: l.id,
            kind: l.kind,
            shape: if l.kind.is_conv() {
                format!("{}x{}x{}x{}", l.m, l.n, l.k, l.k)
            } else {
                format!("{}x{}", l.m, l.n)
            },
            macs,
            compressed_macs: compressed.as_ref().map(|(_, per)| per[l.id]),
        })
        .collect();
    FlopsReport {
        model: model.name().to_string(),
        layers,
        total,
        compressed_total: compressed.as_ref().map(|(c, _)| *c),
        ratio: compressed.as_ref().map(|(c, _)| ratio(total, *c)),
    }
}

/// Threshold search at the configured floor; writes `thresholds.json`.
pub fn cmd_thresholds(config: &RunConfig, opts: &RunOptions) -> Result<ThresholdVector> {
    let config = apply_overrides(config.clone(), opts);
    let assets = Assets::load(&config)?;
    let evaluator = build_evaluator(&config, &assets, opts.workers)?;
    let mut session = Session::new(&assets.model, config.task, evaluator, config.engine.clone())?;
    let theta = session.thresholds()?;
    create_out(&opts.out)?;
    write_json(&opts.out.join("thresholds.json"), &theta)?;
    Ok(theta)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub best_genome: Genome,
    pub score: f64,
    pub accuracy: f64,
    pub base_accuracy: f64,
    pub delta_flops: u64,
    pub original_flops: u64,
    pub flops_ratio: f64,
    pub evaluations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: RunConfig,
    pub seed: u64,
    pub started_unix: u64,
    pub finished_unix: u64,
    /// SHA-256 of each input file, keyed by path.
    pub assets: BTreeMap<String, String>,
    pub summary: RunSummary,
}

/// Full search; writes `history.jsonl` while running, then
/// `best_plan.json`, `thresholds.json` (warm init only) and
/// `run_manifest.json`.
pub fn cmd_search(config: &RunConfig, opts: &RunOptions) -> Result<RunManifest> {
    let started_unix = unix_now();
    let config = apply_overrides(config.clone(), opts);
    let mut hashes = BTreeMap::new();
    for path in Assets::paths(&config) {
        hashes.insert(path.display().to_string(), sha256_file(path)?);
    }
    let assets = Assets::load(&config)?;
    let evaluator = build_evaluator(&config, &assets, opts.workers)?;
    let mut session = Session::new(&assets.model, config.task, evaluator, config.engine.clone())?;
    create_out(&opts.out)?;

    let history_path = opts.out.join("history.jsonl");
    let file = File::create(&history_path).map_err(|e| AppError::io(&history_path, e))?;
    let mut history = BufWriter::new(file);
    let mut observer = |generation: &evocompress_core::engine::Generation| {
        let mut write = || -> std::io::Result<()> {
            for record in &generation.individuals {
                serde_json::to_writer(&mut history, record)?;
                history.write_all(b"\n")?;
            }
            history.flush()
        };
        write().map_err(|e| evocompress_core::Error::Evaluation(format!("writing history: {e}")))
    };
    let outcome = session.run(None, &mut observer)?;

    write_json(&opts.out.join("best_plan.json"), &outcome.plan)?;
    if let Some(theta) = &outcome.thresholds {
        write_json(&opts.out.join("thresholds.json"), theta)?;
    }
    let report = &outcome.best.report;
    let manifest = RunManifest {
        seed: config.engine.seed,
        config,
        started_unix,
        finished_unix: unix_now(),
        assets: hashes,
        summary: RunSummary {
            best_genome: outcome.best.genome.clone(),
            score: report.score,
            accuracy: report.accuracy,
            base_accuracy: outcome.base_accuracy,
            delta_flops: report.delta_flops,
            original_flops: outcome.original_flops,
            flops_ratio: outcome.flops_ratio(),
            evaluations: session.evaluations(),
        },
    };
    write_json(&opts.out.join("run_manifest.json"), &manifest)?;
    Ok(manifest)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowSource {
    Evolved,
    Uniform,
}

/// One point of the accuracy/FLOPs frontier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoRow {
    pub source: RowSource,
    pub acc_thr: Option<f64>,
    pub prune_ratio: Option<f64>,
    pub accuracy: f64,
    pub flops_ratio: f64,
}

/// Sorted, deduplicated thresholds; at least two are required.
pub fn normalize_thresholds(raw: &[f64]) -> Result<Vec<f64>> {
    let mut list = raw.to_vec();
    if let Some(bad) = list.iter().find(|t| !(0.0..=1.0).contains(*t)) {
        return Err(AppError::Usage(format!("threshold {bad} outside [0, 1]")));
    }
    list.sort_by(f64::total_cmp);
    let before = list.len();
    list.dedup();
    if list.len() < before {
        log::warn!("dropped {} duplicate accuracy thresholds", before - list.len());
    }
    if list.len() < 2 {
        return Err(AppError::Usage("pareto needs at least two distinct accuracy thresholds".into()));
    }
    Ok(list)
}

/// The uniform-pruning baseline: every pruning gene set to `j/64`.
pub fn uniform_baseline(config: &RunConfig, assets: &Assets, workers: usize) -> Result<Vec<ParetoRow>> {
    let evaluator = build_evaluator(config, assets, workers)?;
    let mut session = Session::new(&assets.model, config.task, evaluator, config.engine.clone())?;
    let schema = session.schema().clone();
    if !schema.descriptors.iter().any(|d| d.kind == GeneKind::PruneRatio) {
        return Err(AppError::Usage(format!("task {:?} has no pruning genes to sweep", config.task)));
    }
    let grid = evocompress_core::engine::THRESHOLD_GRID;
    let genomes: Vec<Genome> = (0..=grid)
        .map(|j| {
            let p = f64::from(j) / f64::from(grid);
            let mut g = schema.identity();
            for (v, d) in g.0.iter_mut().zip(&schema.descriptors) {
                if d.kind == GeneKind::PruneRatio {
                    *v = p;
                }
            }
            g
        })
        .collect();
    let accuracies = session.evaluate(&genomes)?;
    let original = session.original_flops();
    genomes
        .iter()
        .zip(accuracies)
        .enumerate()
        .map(|(j, (g, accuracy))| {
            let report = session.report(g, accuracy)?;
            Ok(ParetoRow {
                source: RowSource::Uniform,
                acc_thr: None,
                prune_ratio: Some(j as f64 / f64::from(grid)),
                accuracy,
                flops_ratio: ratio(original, original - report.delta_flops),
            })
        })
        .collect()
}

/// One evolved point per accuracy threshold.
pub fn evolved_point(config: &RunConfig, assets: &Assets, workers: usize, acc_thr: f64) -> Result<ParetoRow> {
    let mut engine = config.engine.clone();
    engine.acc_thr = acc_thr;
    let evaluator = build_evaluator(config, assets, workers)?;
    let mut session = Session::new(&assets.model, config.task, evaluator, engine)?;
    let outcome = session.run(None, &mut |_| Ok(()))?;
    Ok(ParetoRow {
        source: RowSource::Evolved,
        acc_thr: Some(acc_thr),
        prune_ratio: None,
        accuracy: outcome.best.report.accuracy,
        flops_ratio: outcome.flops_ratio(),
    })
}

/// One search per threshold plus the uniform baseline, appended to
/// `pareto.csv` as each row is produced.
pub fn cmd_pareto(config: &RunConfig, thresholds: Option<&[f64]>, opts: &RunOptions) -> Result<Vec<ParetoRow>> {
    let config = apply_overrides(config.clone(), opts);
    let list = normalize_thresholds(thresholds.unwrap_or(&config.pareto_thresholds))?;
    let assets = Assets::load(&config)?;
    create_out(&opts.out)?;
    let path = opts.out.join("pareto.csv");
    let file = File::create(&path).map_err(|e| AppError::io(&path, e))?;
    let mut csv = csv::Writer::from_writer(file);
    let io_err = |e: csv::Error| AppError::io(&path, std::io::Error::other(e));
    csv.write_record(["source", "acc_thr", "prune_ratio", "accuracy", "flops_ratio"])
        .map_err(io_err)?;
    let mut rows = Vec::new();
    let mut emit = |row: ParetoRow, csv: &mut csv::Writer<File>| -> Result<()> {
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
        let source = match row.source {
            RowSource::Evolved => "evolved",
            RowSource::Uniform => "uniform",
        };
        csv.write_record([
            source.to_string(),
            opt(row.acc_thr),
            opt(row.prune_ratio),
            row.accuracy.to_string(),
            row.flops_ratio.to_string(),
        ])
        .map_err(io_err)?;
        csv.flush().map_err(|e| AppError::io(&path, e))?;
        rows.push(row);
        Ok(())
    };
    for &t in &list {
        let row = evolved_point(&config, &assets, opts.workers, t)?;
        log::info!("acc_thr {t}: accuracy {}, flops ratio {:.4}", row.accuracy, row.flops_ratio);
        emit(row, &mut csv)?;
    }
    for row in uniform_baseline(&config, &assets, opts.workers)? {
        emit(row, &mut csv)?;
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn thresholds_are_deduplicated_and_checked() {
        assert_eq!(normalize_thresholds(&[0.9, 0.8, 0.9]).unwrap(), vec![0.8, 0.9]);
        assert!(normalize_thresholds(&[0.9, 0.9]).is_err());
        assert!(normalize_thresholds(&[0.9, 1.2]).is_err());
    }
}
