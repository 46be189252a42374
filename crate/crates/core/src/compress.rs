//! Applying a [`CompressionPlan`] to weights, and counting the MACs of the
//! result.
//!
//! Structured masks chain through the sequence: the channels a layer keeps
//! become the input channels of the next layer, and masked layers are stored
//! compacted to their kept rows and columns. When a plan both masks and
//! decomposes a layer, the compacted weight is decomposed, with ranks clamped
//! to its dimensions. A decomposition that would not execute fewer MACs than
//! the dense (masked) layer is not applied and the layer stays dense.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::genome::{CompressionPlan, Decomposition, LayerAction, PruneStyle};
use crate::linalg::{svd, Matrix};
use crate::model::{LayerSpec, ModelSpec, TensorStore};

/// `⌊ratio·count⌋`, tolerant of the rounding error in `ratio·count`.
pub fn pruned_count(ratio: f64, count: usize) -> usize {
    let exact = ratio * count as f64;
    (libm::floor(exact + 1e-9) as usize).min(count)
}

/// `⌈(1−ratio)·count⌉`.
pub fn kept_count(ratio: f64, count: usize) -> usize {
    count - pruned_count(ratio, count)
}

/// Zeroes the `⌊p·len⌋` entries of smallest magnitude; ties go to the lower
/// flat index. Every other entry is returned bit-identical.
pub fn prune_unstructured(weights: &[f32], ratio: f64) -> Vec<f32> {
    let count = pruned_count(ratio, weights.len());
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| weights[a].abs().total_cmp(&weights[b].abs()).then(a.cmp(&b)));
    let mut out = weights.to_vec();
    for &i in &order[..count] {
        out[i] = 0.0;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChannelMask {
    pub layer: usize,
    pub keep: Vec<bool>,
}

impl ChannelMask {
    pub fn kept(&self) -> Vec<usize> {
        self.keep.iter().enumerate().filter(|(_, k)| **k).map(|(i, _)| i).collect()
    }

    pub fn kept_len(&self) -> usize {
        self.keep.iter().filter(|k| **k).count()
    }
}

/// L1 norm of every output filter.
pub fn filter_saliency(layer: &LayerSpec, weights: &[f32]) -> Vec<f64> {
    let per_filter = layer.n * layer.k * layer.k;
    weights
        .chunks(per_filter)
        .map(|f| f.iter().map(|w| f64::from(w.abs())).sum())
        .collect()
}

/// Keeps the `⌈(1−p)·m⌉` output channels of largest filter L1 norm (ties to
/// the lower channel index).
pub fn prune_structured(model: &ModelSpec, tensors: &TensorStore, layer_id: usize, ratio: f64) -> Result<ChannelMask> {
    if layer_id >= model.len() || !model.is_maskable(layer_id) {
        return Err(Error::NotMaskable { layer: layer_id });
    }
    let layer = model.layer(layer_id);
    Ok(mask_from_saliency(layer_id, &filter_saliency(layer, tensors.weight(layer_id)), ratio))
}

pub fn mask_from_saliency(layer: usize, saliency: &[f64], ratio: f64) -> ChannelMask {
    let kept = kept_count(ratio, saliency.len());
    let mut order: Vec<usize> = (0..saliency.len()).collect();
    order.sort_by(|&a, &b| saliency[b].total_cmp(&saliency[a]).then(a.cmp(&b)));
    let mut keep = vec![false; saliency.len()];
    for &c in &order[..kept] {
        keep[c] = true;
    }
    ChannelMask { layer, keep }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Factorization {
    /// `W ≈ left·right`, `left` is `m×r` (singular values folded in), `right`
    /// is `r×n`.
    Svd { left: Matrix, right: Matrix },
    /// `W[c,i,y,x] ≈ Σ_ab factor_m[c,a]·factor_n[i,b]·core[a,b,y,x]`.
    Tucker2 {
        core: Vec<f64>,
        factor_m: Matrix,
        factor_n: Matrix,
        kernel: usize,
    },
}

impl Factorization {
    /// Dense weight in the original `m×n(×k×k)` layout.
    pub fn reconstruct(&self) -> Vec<f64> {
        match self {
            Factorization::Svd { left, right } => left.matmul(right).into_vec(),
            Factorization::Tucker2 {
                core,
                factor_m,
                factor_n,
                kernel,
            } => {
                let (m, rm) = (factor_m.rows(), factor_m.cols());
                let (n, rn) = (factor_n.rows(), factor_n.cols());
                let kk = kernel * kernel;
                // Contract the input mode first: t[a, i, tap].
                let mut t = vec![0.0; rm * n * kk];
                for a in 0..rm {
                    for i in 0..n {
                        for b in 0..rn {
                            let f = factor_n[(i, b)];
                            let src = &core[(a * rn + b) * kk..(a * rn + b + 1) * kk];
                            let dst = &mut t[(a * n + i) * kk..(a * n + i + 1) * kk];
                            dst.iter_mut().zip(src).for_each(|(d, s)| *d += f * s);
                        }
                    }
                }
                let mut out = vec![0.0; m * n * kk];
                for c in 0..m {
                    for a in 0..rm {
                        let f = factor_m[(c, a)];
                        let src = &t[a * n * kk..(a + 1) * n * kk];
                        let dst = &mut out[c * n * kk..(c + 1) * n * kk];
                        dst.iter_mut().zip(src).for_each(|(d, s)| *d += f * s);
                    }
                }
                out
            }
        }
    }
}

/// Best rank-`r` approximation of `w` in the Frobenius norm.
pub fn svd_truncate(w: &Matrix, rank: usize) -> Result<Factorization> {
    let max = w.rows().min(w.cols());
    if rank == 0 || rank > max {
        return Err(Error::RankOutOfRange { rank, max });
    }
    let d = svd(w)?;
    let mut left = d.u.leading_columns(rank);
    for r in 0..left.rows() {
        for c in 0..rank {
            left[(r, c)] *= d.s[c];
        }
    }
    let right = d.v.leading_columns(rank).transpose();
    Ok(Factorization::Svd { left, right })
}

/// Tucker-2 by truncated HOSVD of a `m×n×k×k` kernel along its output and
/// input channel modes.
pub fn tucker2(w: &[f64], m: usize, n: usize, kernel: usize, rank_m: usize, rank_n: usize) -> Result<Factorization> {
    let kk = kernel * kernel;
    if w.len() != m * n * kk {
        return Err(Error::Shape(format!("tucker2: {} values for {m}×{n}×{kernel}×{kernel}", w.len())));
    }
    if rank_m == 0 || rank_m > m {
        return Err(Error::RankOutOfRange { rank: rank_m, max: m });
    }
    if rank_n == 0 || rank_n > n {
        return Err(Error::RankOutOfRange { rank: rank_n, max: n });
    }
    let mode_m = Matrix::from_vec(m, n * kk, w.to_vec());
    let mode_n = Matrix::from_fn(n, m * kk, |i, col| {
        let (c, tap) = (col / kk, col % kk);
        w[(c * n + i) * kk + tap]
    });
    let factor_m = svd(&mode_m)?.u.leading_columns(rank_m);
    let factor_n = svd(&mode_n)?.u.leading_columns(rank_n);

    // core[a,b,tap] = Σ_c Σ_i factor_m[c,a]·factor_n[i,b]·w[c,i,tap]
    let mut t = vec![0.0; rank_m * n * kk];
    for c in 0..m {
        for a in 0..rank_m {
            let f = factor_m[(c, a)];
            let src = &w[c * n * kk..(c + 1) * n * kk];
            let dst = &mut t[a * n * kk..(a + 1) * n * kk];
            dst.iter_mut().zip(src).for_each(|(d, s)| *d += f * s);
        }
    }
    let mut core = vec![0.0; rank_m * rank_n * kk];
    for a in 0..rank_m {
        for i in 0..n {
            let src = &t[(a * n + i) * kk..(a * n + i + 1) * kk];
            for b in 0..rank_n {
                let f = factor_n[(i, b)];
                let dst = &mut core[(a * rank_n + b) * kk..(a * rank_n + b + 1) * kk];
                dst.iter_mut().zip(src).for_each(|(d, s)| *d += f * s);
            }
        }
    }
    Ok(Factorization::Tucker2 {
        core,
        factor_m,
        factor_n,
        kernel,
    })
}

/// Effective shape of one layer after masking, used for MAC accounting.
#[derive(Debug, Clone, Copy)]
struct Geometry {
    kept_out: usize,
    kept_in: usize,
    kernel: usize,
    positions_in: usize,
    positions_out: usize,
}

impl Geometry {
    fn dense_macs(&self) -> u64 {
        (self.kept_out * self.kept_in * self.kernel * self.kernel * self.positions_out) as u64
    }

    /// Ranks actually used for `d` on this geometry, or `None` when the
    /// factored layer would not be cheaper than the dense one.
    fn effective(&self, d: Decomposition) -> Option<(Decomposition, u64)> {
        if self.kept_out == 0 || self.kept_in == 0 {
            return None;
        }
        let (eff, macs) = match d {
            Decomposition::Svd { rank } => {
                let rank = rank.min(self.kept_out).min(self.kept_in);
                (
                    Decomposition::Svd { rank },
                    rank * (self.kept_in + self.kept_out) * self.positions_out,
                )
            }
            Decomposition::Tucker { rank_m, rank_n } => {
                let rank_m = rank_m.min(self.kept_out);
                let rank_n = rank_n.min(self.kept_in);
                let kk = self.kernel * self.kernel;
                (
                    Decomposition::Tucker { rank_m, rank_n },
                    self.kept_in * rank_n * self.positions_in
                        + rank_n * rank_m * kk * self.positions_out
                        + rank_m * self.kept_out * self.positions_out,
                )
            }
        };
        let macs = macs as u64;
        (macs < self.dense_macs()).then_some((eff, macs))
    }
}

/// Walks the chain, yielding per layer its geometry and the output-channel
/// ratio that structured pruning applies.
fn walk_geometry(model: &ModelSpec, plan: &CompressionPlan) -> Result<Vec<(Geometry, Option<f64>)>> {
    plan.validate(model)?;
    let mut out = Vec::with_capacity(model.len());
    let mut kept_in = model.layers().first().map_or(0, |l| l.n);
    for layer in model.layers() {
        let action = plan.action(layer.id);
        let ratio = action.structured_ratio();
        if ratio.is_some() && !model.is_maskable(layer.id) {
            return Err(Error::NotMaskable { layer: layer.id });
        }
        let kept_out = ratio.map_or(layer.m, |p| kept_count(p, layer.m));
        out.push((
            Geometry {
                kept_out,
                kept_in,
                kernel: layer.k,
                positions_in: layer.input_positions(),
                positions_out: layer.output_positions()?,
            },
            ratio,
        ));
        kept_in = kept_out;
    }
    Ok(out)
}

/// MACs of the model after applying `plan`. Unstructured pruning removes
/// `⌊p·numel⌋` weights, each saving one MAC per output position.
pub fn compressed_flops(model: &ModelSpec, plan: &CompressionPlan) -> Result<u64> {
    let geometry = walk_geometry(model, plan)?;
    let mut total = 0;
    for (layer, (g, _)) in model.layers().iter().zip(&geometry) {
        let action = plan.action(layer.id);
        let macs = match action {
            LayerAction::Prune {
                style: PruneStyle::Unstructured,
                ratio,
            } => g.dense_macs() - (pruned_count(ratio, layer.weight_len()) * g.positions_out) as u64,
            _ => match action.decomposition().and_then(|d| g.effective(d)) {
                Some((_, macs)) => macs,
                None => g.dense_macs(),
            },
        };
        total += macs;
    }
    Ok(total)
}

/// Linear operator of one compressed layer, over its kept channels.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerOp {
    /// `kept_out × kept_in (× k × k)` weight. `pruned` counts the weights
    /// zeroed by unstructured pruning.
    Dense { weight: Vec<f64>, pruned: usize },
    Factored(Factorization),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompressedLayer {
    pub spec: LayerSpec,
    /// Original indices of the input channels this layer reads.
    pub in_channels: Vec<usize>,
    /// Original indices of the output channels this layer produces.
    pub out_channels: Vec<usize>,
    pub op: LayerOp,
    pub bias: Vec<f64>,
}

impl CompressedLayer {
    /// MACs executed by one forward pass of this layer.
    pub fn macs(&self) -> Result<u64> {
        let s = self.spec.output_positions()? as u64;
        let (out, inp) = (self.out_channels.len() as u64, self.in_channels.len() as u64);
        let kk = (self.spec.k * self.spec.k) as u64;
        Ok(match &self.op {
            LayerOp::Dense { weight, pruned } => {
                debug_assert_eq!(weight.len() as u64, out * inp * kk);
                (out * inp * kk - *pruned as u64) * s
            }
            LayerOp::Factored(Factorization::Svd { left, .. }) => left.cols() as u64 * (out + inp) * s,
            LayerOp::Factored(Factorization::Tucker2 { factor_m, factor_n, .. }) => {
                let (rm, rn) = (factor_m.cols() as u64, factor_n.cols() as u64);
                inp * rn * self.spec.input_positions() as u64 + rn * rm * kk * s + rm * out * s
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompressedModel {
    pub layers: Vec<CompressedLayer>,
    pub masks: Vec<ChannelMask>,
}

impl CompressedModel {
    pub fn macs(&self) -> Result<u64> {
        self.layers.iter().map(CompressedLayer::macs).sum()
    }
}

/// Applies `plan` layer by layer. Within a layer the structured mask comes
/// first, then the decomposition of the masked weight.
pub fn apply_plan(model: &ModelSpec, tensors: &TensorStore, plan: &CompressionPlan) -> Result<CompressedModel> {
    if tensors.len() != model.len() {
        return Err(Error::Shape(format!(
            "{} tensors for {} layers",
            tensors.len(),
            model.len()
        )));
    }
    let geometry = walk_geometry(model, plan)?;
    let mut layers = Vec::with_capacity(model.len());
    let mut masks = Vec::new();
    let mut in_channels: Vec<usize> = (0..model.layers().first().map_or(0, |l| l.n)).collect();

    for (layer, (g, ratio)) in model.layers().iter().zip(&geometry) {
        let action = plan.action(layer.id);
        let raw = tensors.weight(layer.id);
        let out_channels = match ratio {
            Some(p) => {
                let mask = mask_from_saliency(layer.id, &filter_saliency(layer, raw), *p);
                let kept = mask.kept();
                masks.push(mask);
                kept
            }
            None => (0..layer.m).collect(),
        };
        debug_assert_eq!(out_channels.len(), g.kept_out);

        let (source, pruned) = match action {
            LayerAction::Prune {
                style: PruneStyle::Unstructured,
                ratio,
            } => (prune_unstructured(raw, ratio), pruned_count(ratio, raw.len())),
            _ => (raw.to_vec(), 0),
        };
        let kk = layer.k * layer.k;
        let compact = compact_weight(&source, layer, &out_channels, &in_channels);
        let op = match action.decomposition().and_then(|d| g.effective(d)) {
            Some((Decomposition::Svd { rank }, _)) => {
                let w = Matrix::from_vec(out_channels.len(), in_channels.len() * kk, compact);
                LayerOp::Factored(svd_truncate(&w, rank)?)
            }
            Some((Decomposition::Tucker { rank_m, rank_n }, _)) => LayerOp::Factored(tucker2(
                &compact,
                out_channels.len(),
                in_channels.len(),
                layer.k,
                rank_m,
                rank_n,
            )?),
            None => LayerOp::Dense { weight: compact, pruned },
        };
        let bias = out_channels.iter().map(|&c| f64::from(tensors.bias(layer.id)[c])).collect();
        layers.push(CompressedLayer {
            spec: layer.clone(),
            in_channels: in_channels.clone(),
            out_channels: out_channels.clone(),
            op,
            bias,
        });
        in_channels = out_channels;
    }
    Ok(CompressedModel { layers, masks })
}

fn compact_weight(w: &[f32], layer: &LayerSpec, outs: &[usize], ins: &[usize]) -> Vec<f64> {
    let kk = layer.k * layer.k;
    let mut out = Vec::with_capacity(outs.len() * ins.len() * kk);
    for &c in outs {
        for &i in ins {
            let base = (c * layer.n + i) * kk;
            out.extend(w[base..base + kk].iter().map(|&v| f64::from(v)));
        }
    }
    out
}
