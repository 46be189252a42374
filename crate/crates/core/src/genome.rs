//! Translation between compression plans and fixed-length gene vectors.
//!
//! Pruning genes carry the pruned fraction directly. Rank genes carry a code:
//! SVD ranks are quantized to 64 levels of `R = min(m, n)`, Tucker-2 ranks to
//! 8 levels of `m` (output mode) and `n` (input mode). Code `c` of `C` levels
//! over a maximum rank `R` decodes to `max(1, round(c·R / C))`.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelSpec;

pub const SVD_CODES: u32 = 64;
pub const TUCKER_CODES: u32 = 8;

/// The four compression tasks: unstructured pruning, structured pruning,
/// low-rank decomposition, and structured pruning combined with
/// decomposition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Task {
    Pn,
    Ps,
    D,
    #[serde(rename = "D_Ps")]
    DPs,
}

impl Task {
    pub fn prunes(self) -> bool {
        !matches!(self, Task::D)
    }

    pub fn decomposes(self) -> bool {
        matches!(self, Task::D | Task::DPs)
    }

    pub fn prune_style(self) -> PruneStyle {
        match self {
            Task::Pn => PruneStyle::Unstructured,
            _ => PruneStyle::Structured,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneKind {
    PruneRatio,
    SvdRankCode,
    TuckerRankMCode,
    TuckerRankNCode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneDescriptor {
    pub layer: usize,
    pub kind: GeneKind,
    /// Rank reached by the highest code; 1 for pruning genes.
    pub max_rank: usize,
}

impl GeneDescriptor {
    pub fn is_continuous(&self) -> bool {
        self.kind == GeneKind::PruneRatio
    }

    /// Code ceiling of a discrete gene.
    pub fn code_max(&self) -> Option<u32> {
        match self.kind {
            GeneKind::PruneRatio => None,
            GeneKind::SvdRankCode => Some(SVD_CODES),
            GeneKind::TuckerRankMCode | GeneKind::TuckerRankNCode => Some(TUCKER_CODES),
        }
    }

    /// Lower and upper bound of the gene domain.
    pub fn bounds(&self) -> (f64, f64) {
        match self.code_max() {
            None => (0.0, 1.0),
            Some(max) => (1.0, f64::from(max)),
        }
    }

    /// Gene value that leaves the layer uncompressed.
    pub fn identity(&self) -> f64 {
        match self.code_max() {
            None => 0.0,
            Some(max) => f64::from(max),
        }
    }

    pub fn contains(&self, value: f64) -> bool {
        let (lo, hi) = self.bounds();
        value.is_finite() && value >= lo && value <= hi && (self.is_continuous() || libm::trunc(value) == value)
    }

    pub fn clamp(&self, value: f64) -> f64 {
        let (lo, hi) = self.bounds();
        value.clamp(lo, hi)
    }

    /// Rank selected by `code`.
    pub fn rank(&self, code: u32) -> usize {
        let levels = self.code_max().unwrap_or(1) as usize;
        let scaled = (2 * code as usize * self.max_rank + levels) / (2 * levels);
        scaled.max(1)
    }

    /// Smallest code decoding to `rank`, or the nearest code as an error.
    pub fn code_for_rank(&self, rank: usize) -> Result<u32> {
        if rank == 0 || rank > self.max_rank {
            return Err(Error::RankOutOfRange {
                rank,
                max: self.max_rank,
            });
        }
        let levels = self.code_max().unwrap_or(1);
        let mut nearest = (usize::MAX, 1);
        for code in 1..=levels {
            let decoded = self.rank(code);
            if decoded == rank {
                return Ok(code);
            }
            let dist = decoded.abs_diff(rank);
            if dist < nearest.0 {
                nearest = (dist, code);
            }
        }
        Err(Error::UnrepresentableRank {
            layer: self.layer,
            rank,
            nearest_code: nearest.1,
        })
    }
}

/// A concrete individual: continuous ratios and integer codes in one
/// positional vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Genome(pub Vec<f64>);

impl Genome {
    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Bit-exact key, used to cache evaluations.
    pub fn key(&self) -> Vec<u64> {
        self.0.iter().map(|v| v.to_bits()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenomeSchema {
    pub task: Task,
    pub descriptors: Vec<GeneDescriptor>,
}

impl GenomeSchema {
    /// Lays out genes in layer order. For `D_Ps` the pruning block (one gene
    /// per layer) precedes the decomposition block; within a Tucker layer the
    /// output-mode code precedes the input-mode code.
    pub fn build(model: &ModelSpec, task: Task) -> Result<Self> {
        let mut descriptors = Vec::new();
        if task.prunes() {
            descriptors.extend(model.layers().iter().map(|l| GeneDescriptor {
                layer: l.id,
                kind: GeneKind::PruneRatio,
                max_rank: 1,
            }));
        }
        if task.decomposes() {
            let start = descriptors.len();
            for l in model.layers() {
                if l.is_svd_target() {
                    descriptors.push(GeneDescriptor {
                        layer: l.id,
                        kind: GeneKind::SvdRankCode,
                        max_rank: l.m.min(l.n),
                    });
                } else if l.is_tucker_target() {
                    descriptors.push(GeneDescriptor {
                        layer: l.id,
                        kind: GeneKind::TuckerRankMCode,
                        max_rank: l.m,
                    });
                    descriptors.push(GeneDescriptor {
                        layer: l.id,
                        kind: GeneKind::TuckerRankNCode,
                        max_rank: l.n,
                    });
                }
            }
            if descriptors.len() == start {
                return Err(Error::NoDecomposableLayer);
            }
        }
        Ok(GenomeSchema { task, descriptors })
    }

    pub fn len(&self) -> usize {
        self.descriptors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.descriptors.is_empty()
    }

    /// The genome that leaves every layer uncompressed.
    pub fn identity(&self) -> Genome {
        Genome(self.descriptors.iter().map(GeneDescriptor::identity).collect())
    }

    pub fn validate(&self, genome: &Genome) -> Result<()> {
        if genome.len() != self.len() {
            return Err(Error::GenomeLength {
                expected: self.len(),
                found: genome.len(),
            });
        }
        for (index, (d, &value)) in self.descriptors.iter().zip(genome.values()).enumerate() {
            if !d.contains(value) {
                return Err(Error::GeneDomain { index, value });
            }
        }
        Ok(())
    }

    pub fn decode(&self, genome: &Genome, model: &ModelSpec) -> Result<CompressionPlan> {
        self.validate(genome)?;
        let layer_count = model.len();
        let mut prune = alloc::vec![None; layer_count];
        let mut svd = alloc::vec![None; layer_count];
        let mut tucker_m = alloc::vec![None; layer_count];
        let mut tucker_n = alloc::vec![None; layer_count];
        for (d, &value) in self.descriptors.iter().zip(genome.values()) {
            if d.layer >= layer_count {
                return Err(Error::PlanMismatch(format!("gene refers to missing layer {}", d.layer)));
            }
            match d.kind {
                GeneKind::PruneRatio => prune[d.layer] = Some(value),
                GeneKind::SvdRankCode => svd[d.layer] = Some(d.rank(value as u32)),
                GeneKind::TuckerRankMCode => tucker_m[d.layer] = Some(d.rank(value as u32)),
                GeneKind::TuckerRankNCode => tucker_n[d.layer] = Some(d.rank(value as u32)),
            }
        }

        let style = self.task.prune_style();
        let actions = (0..layer_count)
            .map(|i| {
                let ratio = match (style, prune[i]) {
                    (PruneStyle::Structured, Some(_)) if !model.is_maskable(i) => None,
                    (_, ratio) => ratio,
                };
                let decomposition = match (svd[i], tucker_m[i], tucker_n[i]) {
                    (Some(rank), _, _) => Some(Decomposition::Svd { rank }),
                    (None, Some(rank_m), Some(rank_n)) => Some(Decomposition::Tucker { rank_m, rank_n }),
                    _ => None,
                };
                match (ratio, decomposition) {
                    (None, None) => LayerAction::None,
                    (Some(ratio), None) => LayerAction::Prune { style, ratio },
                    (None, Some(decomposition)) => LayerAction::Decompose { decomposition },
                    (Some(ratio), Some(decomposition)) => LayerAction::PruneAndDecompose { ratio, decomposition },
                }
            })
            .collect();
        Ok(CompressionPlan { actions })
    }

    /// Inverse of [`decode`](Self::decode) for plans whose ranks fall on the
    /// code grid.
    pub fn encode(&self, plan: &CompressionPlan, model: &ModelSpec) -> Result<Genome> {
        plan.validate(model)?;
        let style = self.task.prune_style();
        let mut values = Vec::with_capacity(self.len());
        for d in &self.descriptors {
            let action = &plan.actions[d.layer];
            let value = match d.kind {
                GeneKind::PruneRatio => match *action {
                    LayerAction::Prune { style: s, ratio } if s == style => ratio,
                    LayerAction::PruneAndDecompose { ratio, .. } if style == PruneStyle::Structured => ratio,
                    LayerAction::None | LayerAction::Decompose { .. } => 0.0,
                    _ => {
                        return Err(Error::PlanMismatch(format!(
                            "layer {} action does not fit task {:?}",
                            d.layer, self.task
                        )))
                    }
                },
                kind => {
                    let rank = match (kind, action.decomposition()) {
                        (_, None) => None,
                        (GeneKind::SvdRankCode, Some(Decomposition::Svd { rank })) => Some(rank),
                        (GeneKind::TuckerRankMCode, Some(Decomposition::Tucker { rank_m, .. })) => Some(rank_m),
                        (GeneKind::TuckerRankNCode, Some(Decomposition::Tucker { rank_n, .. })) => Some(rank_n),
                        _ => {
                            return Err(Error::PlanMismatch(format!(
                                "layer {} decomposition does not match its gene",
                                d.layer
                            )))
                        }
                    };
                    match rank {
                        Some(rank) => f64::from(d.code_for_rank(rank)?),
                        None => d.identity(),
                    }
                }
            };
            values.push(value);
        }
        if self.task.prune_style() == PruneStyle::Structured {
            for (i, action) in plan.actions.iter().enumerate() {
                if action.prune_ratio().is_some_and(|r| r > 0.0) && !model.is_maskable(i) {
                    return Err(Error::NotMaskable { layer: i });
                }
            }
        }
        Ok(Genome(values))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PruneStyle {
    /// Zero the smallest-magnitude weights.
    Unstructured,
    /// Mask whole output channels after the activation.
    Structured,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum Decomposition {
    Svd { rank: usize },
    Tucker { rank_m: usize, rank_n: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerAction {
    #[default]
    None,
    Prune {
        style: PruneStyle,
        ratio: f64,
    },
    Decompose {
        decomposition: Decomposition,
    },
    /// Structured channel mask, then decomposition of the masked weight.
    PruneAndDecompose {
        ratio: f64,
        decomposition: Decomposition,
    },
}

impl LayerAction {
    pub fn prune_ratio(&self) -> Option<f64> {
        match *self {
            LayerAction::Prune { ratio, .. } | LayerAction::PruneAndDecompose { ratio, .. } => Some(ratio),
            _ => None,
        }
    }

    /// Channel-mask ratio, if the action masks whole channels.
    pub fn structured_ratio(&self) -> Option<f64> {
        match *self {
            LayerAction::Prune {
                style: PruneStyle::Structured,
                ratio,
            }
            | LayerAction::PruneAndDecompose { ratio, .. } => Some(ratio),
            _ => None,
        }
    }

    pub fn decomposition(&self) -> Option<Decomposition> {
        match *self {
            LayerAction::Decompose { decomposition } | LayerAction::PruneAndDecompose { decomposition, .. } => {
                Some(decomposition)
            }
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanEntry {
    pub layer: usize,
    pub action: LayerAction,
}

/// One action per layer, in layer order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<PlanEntry>", into = "Vec<PlanEntry>")]
pub struct CompressionPlan {
    pub actions: Vec<LayerAction>,
}

impl From<Vec<PlanEntry>> for CompressionPlan {
    fn from(mut entries: Vec<PlanEntry>) -> Self {
        entries.sort_by_key(|e| e.layer);
        let len = entries.last().map_or(0, |e| e.layer + 1);
        let mut actions = alloc::vec![LayerAction::None; len];
        for e in entries {
            actions[e.layer] = e.action;
        }
        CompressionPlan { actions }
    }
}

impl From<CompressionPlan> for Vec<PlanEntry> {
    fn from(plan: CompressionPlan) -> Self {
        plan.actions
            .into_iter()
            .enumerate()
            .map(|(layer, action)| PlanEntry { layer, action })
            .collect()
    }
}

impl CompressionPlan {
    pub fn uncompressed(model: &ModelSpec) -> Self {
        CompressionPlan {
            actions: alloc::vec![LayerAction::None; model.len()],
        }
    }

    /// Checks the ratio and rank bounds of every action against the model.
    /// A plan shorter than the model leaves the remaining layers untouched.
    pub fn validate(&self, model: &ModelSpec) -> Result<()> {
        if self.actions.len() > model.len() {
            return Err(Error::PlanMismatch(format!(
                "plan has {} layers, model has {}",
                self.actions.len(),
                model.len()
            )));
        }
        for (layer, action) in model.layers().iter().zip(&self.actions) {
            if let Some(ratio) = action.prune_ratio() {
                if !(0.0..=1.0).contains(&ratio) {
                    return Err(Error::PlanMismatch(format!("layer {}: prune ratio {ratio} outside [0, 1]", layer.id)));
                }
            }
            match action.decomposition() {
                Some(Decomposition::Svd { rank }) => {
                    if !layer.is_svd_target() {
                        return Err(Error::PlanMismatch(format!("layer {} cannot take an SVD", layer.id)));
                    }
                    check_rank(rank, layer.m.min(layer.n))?;
                }
                Some(Decomposition::Tucker { rank_m, rank_n }) => {
                    if !layer.is_tucker_target() {
                        return Err(Error::PlanMismatch(format!("layer {} cannot take a Tucker-2", layer.id)));
                    }
                    check_rank(rank_m, layer.m)?;
                    check_rank(rank_n, layer.n)?;
                }
                None => {}
            }
        }
        Ok(())
    }

    pub fn action(&self, layer: usize) -> LayerAction {
        self.actions.get(layer).copied().unwrap_or_default()
    }
}

fn check_rank(rank: usize, max: usize) -> Result<()> {
    if rank == 0 || rank > max {
        Err(Error::RankOutOfRange { rank, max })
    } else {
        Ok(())
    }
}
