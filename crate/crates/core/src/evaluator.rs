//! Turning a genome into an accuracy: the built-in forward pass over the
//! compressed weights, a synthetic analytic landscape, and a constant
//! evaluator. Subprocess evaluators implement [`Evaluator`] elsewhere.

use alloc::format;
use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::compress::{apply_plan, CompressedLayer, CompressedModel, Factorization, LayerOp};
use crate::error::{Error, Result};
use crate::genome::{CompressionPlan, Genome, GenomeSchema};
use crate::linalg::Matrix;
use crate::model::{output_spatial, LayerKind, ModelSpec, TensorStore};

/// One candidate handed to an evaluator.
#[derive(Debug, Clone, Copy)]
pub struct Candidate<'a> {
    pub genome: &'a Genome,
    pub plan: &'a CompressionPlan,
}

pub trait Evaluator {
    /// Validation accuracy in `[0, 1]` of the model compressed by `plan`.
    fn accuracy(&self, candidate: Candidate<'_>) -> Result<f64>;

    /// Evaluates a batch; results are returned in input order. Implementations
    /// may evaluate concurrently.
    fn accuracy_batch(&self, candidates: &[Candidate<'_>]) -> Vec<Result<f64>> {
        candidates.iter().map(|c| self.accuracy(*c)).collect()
    }
}

impl<E: Evaluator + ?Sized> Evaluator for &E {
    fn accuracy(&self, candidate: Candidate<'_>) -> Result<f64> {
        (**self).accuracy(candidate)
    }

    fn accuracy_batch(&self, candidates: &[Candidate<'_>]) -> Vec<Result<f64>> {
        (**self).accuracy_batch(candidates)
    }
}

impl<E: Evaluator + ?Sized> Evaluator for alloc::boxed::Box<E> {
    fn accuracy(&self, candidate: Candidate<'_>) -> Result<f64> {
        (**self).accuracy(candidate)
    }

    fn accuracy_batch(&self, candidates: &[Candidate<'_>]) -> Vec<Result<f64>> {
        (**self).accuracy_batch(candidates)
    }
}

/// Labelled validation samples. Each row holds `d` features; for a model
/// whose first layer is a convolution the row is a `c×h×w` image.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f32>,
    dim: usize,
    labels: Vec<usize>,
    num_classes: usize,
}

impl Dataset {
    pub fn new(features: Vec<f32>, dim: usize, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::Shape("dataset has no samples".into()));
        }
        if dim == 0 || features.len() != labels.len() * dim {
            return Err(Error::Shape(format!(
                "{} feature values for {} samples of dimension {dim}",
                features.len(),
                labels.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::Shape(format!("label {bad} not below num_classes {num_classes}")));
        }
        if !features.iter().all(|f| f.is_finite()) {
            return Err(Error::Shape("dataset holds non-finite features".into()));
        }
        Ok(Dataset {
            features,
            dim,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn sample(&self, i: usize) -> (&[f32], usize) {
        (&self.features[i * self.dim..(i + 1) * self.dim], self.labels[i])
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Deterministic, evenly spaced subset of `⌈fraction·M⌉` samples (at
    /// least one): rows `⌊j·M/count⌋` for `j < count`.
    pub fn validation_subset(&self, fraction: f64) -> Result<Dataset> {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(Error::InvalidConfig {
                field: "validation_fraction",
                reason: format!("{fraction} not in (0, 1]"),
            });
        }
        let total = self.len();
        let count = (libm::ceil(fraction * total as f64 - 1e-9) as usize).clamp(1, total);
        let mut features = Vec::with_capacity(count * self.dim);
        let mut labels = Vec::with_capacity(count);
        for j in 0..count {
            let (x, y) = self.sample(j * total / count);
            features.extend_from_slice(x);
            labels.push(y);
        }
        Dataset::new(features, self.dim, labels, self.num_classes)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalOutcome {
    pub accuracy: f64,
    pub correct: usize,
    pub evaluated: usize,
}

/// Checks that the forward pass below can run `model` on `dataset`: a
/// sequential chain whose convolutions see exactly the previous layer's
/// output size. A fully connected layer after a convolution reads its
/// globally average-pooled channels.
pub fn check_builtin_support(model: &ModelSpec, dataset: &Dataset) -> Result<()> {
    let Some(first) = model.layers().first() else {
        return Err(Error::InvalidModel("empty model".into()));
    };
    let want = first.n * first.input_positions();
    if dataset.dim() != want {
        return Err(Error::Shape(format!(
            "dataset rows have {} features, first layer expects {want}",
            dataset.dim()
        )));
    }
    let last = model.layers().last().map_or(0, |l| l.m);
    if dataset.num_classes() > last {
        return Err(Error::Shape(format!(
            "{} classes but the model emits {last} logits",
            dataset.num_classes()
        )));
    }
    for pair in model.layers().windows(2) {
        let (prev, next) = (&pair[0], &pair[1]);
        match (prev.kind.is_conv(), next.kind.is_conv()) {
            (true, true) => {
                if output_spatial(prev)? != (next.h_in, next.w_in) {
                    return Err(Error::InvalidModel(format!(
                        "layer {}: input size differs from layer {} output; the built-in evaluator has no pooling layers",
                        next.id, prev.id
                    )));
                }
            }
            (false, true) => {
                return Err(Error::InvalidModel(format!(
                    "layer {}: convolution after a fully connected layer is not supported by the built-in evaluator",
                    next.id
                )))
            }
            _ => {}
        }
    }
    Ok(())
}

/// Channel-major activations `c×h×w`.
#[derive(Debug, Clone)]
struct Activations {
    data: Vec<f64>,
    channels: usize,
    h: usize,
    w: usize,
}

impl Activations {
    fn plane(&self) -> usize {
        self.h * self.w
    }

    fn global_average(self) -> Activations {
        let plane = self.plane();
        if plane == 1 {
            return self;
        }
        let data = self
            .data
            .chunks(plane)
            .map(|c| c.iter().sum::<f64>() / plane as f64)
            .collect();
        Activations {
            data,
            channels: self.channels,
            h: 1,
            w: 1,
        }
    }
}

/// Direct convolution of `input` with a `out×in×k×k` weight.
fn conv(input: &Activations, weight: &[f64], out: usize, k: usize, stride: usize, pad: usize) -> Activations {
    let (h_out, w_out) = (
        (input.h + 2 * pad - k) / stride + 1,
        (input.w + 2 * pad - k) / stride + 1,
    );
    let cin = input.channels;
    let mut data = vec![0.0; out * h_out * w_out];
    for o in 0..out {
        for y in 0..h_out {
            for x in 0..w_out {
                let mut acc = 0.0;
                for i in 0..cin {
                    for ky in 0..k {
                        let iy = (y * stride + ky) as isize - pad as isize;
                        if iy < 0 || iy >= input.h as isize {
                            continue;
                        }
                        for kx in 0..k {
                            let ix = (x * stride + kx) as isize - pad as isize;
                            if ix < 0 || ix >= input.w as isize {
                                continue;
                            }
                            let wv = weight[((o * cin + i) * k + ky) * k + kx];
                            acc += wv * input.data[(i * input.h + iy as usize) * input.w + ix as usize];
                        }
                    }
                }
                data[(o * h_out + y) * w_out + x] = acc;
            }
        }
    }
    Activations {
        data,
        channels: out,
        h: h_out,
        w: w_out,
    }
}

/// Channel mixing `out[r, pos] = Σ_c mat[r, c]·input[c, pos]`.
fn mix(input: &Activations, mat: &Matrix) -> Activations {
    let plane = input.plane();
    let mut data = vec![0.0; mat.rows() * plane];
    for r in 0..mat.rows() {
        for c in 0..mat.cols() {
            let a = mat[(r, c)];
            let src = &input.data[c * plane..(c + 1) * plane];
            for (d, s) in data[r * plane..(r + 1) * plane].iter_mut().zip(src) {
                *d += a * s;
            }
        }
    }
    Activations {
        data,
        channels: mat.rows(),
        h: input.h,
        w: input.w,
    }
}

fn layer_forward(layer: &CompressedLayer, input: Activations) -> Activations {
    let spec = &layer.spec;
    let input = if spec.kind == LayerKind::FullyConnected {
        input.global_average()
    } else {
        input
    };
    let (k, stride, pad) = (spec.k, spec.stride, spec.padding);
    let out_c = layer.out_channels.len();
    let mut out = match &layer.op {
        LayerOp::Dense { weight, .. } => conv(&input, weight, out_c, k, stride, pad),
        LayerOp::Factored(Factorization::Svd { left, right }) => {
            // k = 1 here: the spatial gather of a 1×1 kernel with no weights.
            let gathered = conv_gather(&input, stride, pad);
            mix(&mix(&gathered, right), left)
        }
        LayerOp::Factored(Factorization::Tucker2 {
            core,
            factor_m,
            factor_n,
            kernel,
        }) => {
            let projected = mix(&input, &factor_n.transpose());
            let core_out = conv(&projected, core, factor_m.cols(), *kernel, stride, pad);
            mix(&core_out, factor_m)
        }
    };
    let plane = out.plane();
    for (c, b) in layer.bias.iter().enumerate() {
        for v in &mut out.data[c * plane..(c + 1) * plane] {
            *v += b;
            if spec.has_relu && *v < 0.0 {
                *v = 0.0;
            }
        }
    }
    out
}

/// Strided, zero-padded sampling of a 1×1 convolution's input positions.
fn conv_gather(input: &Activations, stride: usize, pad: usize) -> Activations {
    if stride == 1 && pad == 0 {
        return input.clone();
    }
    let (h_out, w_out) = ((input.h + 2 * pad - 1) / stride + 1, (input.w + 2 * pad - 1) / stride + 1);
    let mut data = vec![0.0; input.channels * h_out * w_out];
    for c in 0..input.channels {
        for y in 0..h_out {
            for x in 0..w_out {
                let (iy, ix) = ((y * stride) as isize - pad as isize, (x * stride) as isize - pad as isize);
                if iy >= 0 && ix >= 0 && (iy as usize) < input.h && (ix as usize) < input.w {
                    data[(c * h_out + y) * w_out + x] = input.data[(c * input.h + iy as usize) * input.w + ix as usize];
                }
            }
        }
    }
    Activations {
        data,
        channels: input.channels,
        h: h_out,
        w: w_out,
    }
}

/// Logits of one sample.
pub fn forward(model: &CompressedModel, sample: &[f32]) -> Result<Vec<f64>> {
    let first = model
        .layers
        .first()
        .ok_or_else(|| Error::InvalidModel("empty model".into()))?;
    let (h, w) = if first.spec.kind.is_conv() {
        (first.spec.h_in, first.spec.w_in)
    } else {
        (1, 1)
    };
    let mut act = Activations {
        data: sample.iter().map(|&v| f64::from(v)).collect(),
        channels: first.spec.n,
        h,
        w,
    };
    for layer in &model.layers {
        act = layer_forward(layer, act);
    }
    if !act.data.iter().all(|v| v.is_finite()) {
        return Err(Error::Evaluation("non-finite activations in forward pass".to_string()));
    }
    Ok(act.data)
}

/// Index of the largest logit; ties go to the lowest class index.
pub fn argmax(logits: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in logits.iter().enumerate() {
        if v > logits[best] {
            best = i;
        }
    }
    best
}

/// Top-1 accuracy of an already compressed model.
pub fn compressed_accuracy(model: &CompressedModel, dataset: &Dataset) -> Result<EvalOutcome> {
    let mut correct = 0;
    for i in 0..dataset.len() {
        let (x, y) = dataset.sample(i);
        if argmax(&forward(model, x)?) == y {
            correct += 1;
        }
    }
    Ok(EvalOutcome {
        accuracy: correct as f64 / dataset.len() as f64,
        correct,
        evaluated: dataset.len(),
    })
}

pub fn builtin_accuracy(
    model: &ModelSpec,
    tensors: &TensorStore,
    plan: &CompressionPlan,
    dataset: &Dataset,
) -> Result<EvalOutcome> {
    check_builtin_support(model, dataset)?;
    compressed_accuracy(&apply_plan(model, tensors, plan)?, dataset)
}

/// Forward-pass evaluator over shared, immutable model state.
#[derive(Debug, Clone, Copy)]
pub struct BuiltinEvaluator<'a> {
    model: &'a ModelSpec,
    tensors: &'a TensorStore,
    dataset: &'a Dataset,
}

impl<'a> BuiltinEvaluator<'a> {
    pub fn new(model: &'a ModelSpec, tensors: &'a TensorStore, dataset: &'a Dataset) -> Result<Self> {
        check_builtin_support(model, dataset)?;
        Ok(BuiltinEvaluator {
            model,
            tensors,
            dataset,
        })
    }
}

impl Evaluator for BuiltinEvaluator<'_> {
    fn accuracy(&self, candidate: Candidate<'_>) -> Result<f64> {
        let compressed = apply_plan(self.model, self.tensors, candidate.plan)?;
        Ok(compressed_accuracy(&compressed, self.dataset)?.accuracy)
    }
}

/// Analytic accuracy surface
/// `acc(v) = clamp(acc_o − Σ c_i·g_i², 0, 1)`, where `g_i` is the gene for
/// continuous genes and `1 − code/code_max` for rank codes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticLandscape {
    pub base_accuracy: f64,
    pub coefficients: Vec<f64>,
    /// Code ceiling per gene, `None` for continuous genes.
    pub code_max: Vec<Option<u32>>,
}

impl SyntheticLandscape {
    pub fn new(base_accuracy: f64, coefficients: Vec<f64>, schema: &GenomeSchema) -> Result<Self> {
        if coefficients.len() != schema.len() {
            return Err(Error::InvalidConfig {
                field: "coefficients",
                reason: format!("{} coefficients for {} genes", coefficients.len(), schema.len()),
            });
        }
        if coefficients.iter().any(|c| !(*c >= 0.0 && c.is_finite())) {
            return Err(Error::InvalidConfig {
                field: "coefficients",
                reason: "coefficients must be finite and non-negative".into(),
            });
        }
        if !(0.0..=1.0).contains(&base_accuracy) {
            return Err(Error::InvalidConfig {
                field: "base_accuracy",
                reason: format!("{base_accuracy} outside [0, 1]"),
            });
        }
        Ok(SyntheticLandscape {
            base_accuracy,
            coefficients,
            code_max: schema.descriptors.iter().map(|d| d.code_max()).collect(),
        })
    }
}

pub fn synthetic_accuracy(genome: &Genome, landscape: &SyntheticLandscape) -> Result<f64> {
    if genome.len() != landscape.coefficients.len() {
        return Err(Error::GenomeLength {
            expected: landscape.coefficients.len(),
            found: genome.len(),
        });
    }
    let loss: f64 = genome
        .values()
        .iter()
        .zip(&landscape.coefficients)
        .zip(&landscape.code_max)
        .map(|((&v, &c), max)| {
            let g = match max {
                Some(max) => 1.0 - v / f64::from(*max),
                None => v,
            };
            c * g * g
        })
        .sum();
    Ok((landscape.base_accuracy - loss).clamp(0.0, 1.0))
}

impl Evaluator for SyntheticLandscape {
    fn accuracy(&self, candidate: Candidate<'_>) -> Result<f64> {
        synthetic_accuracy(candidate.genome, self)
    }
}

/// Reports the same accuracy for every candidate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantEvaluator(pub f64);

impl Evaluator for ConstantEvaluator {
    fn accuracy(&self, _candidate: Candidate<'_>) -> Result<f64> {
        Ok(self.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::genome::Task;
    use crate::model::LayerSpec;

    fn two_gene_schema() -> GenomeSchema {
        let model = ModelSpec::new(
            "m",
            vec![LayerSpec::fully_connected(4, 2, true), LayerSpec::fully_connected(2, 4, false)],
        )
        .unwrap();
        GenomeSchema::build(&model, Task::Pn).unwrap()
    }

    #[test]
    fn synthetic_examples() {
        let schema = two_gene_schema();
        let land = SyntheticLandscape::new(0.9, vec![0.4, 0.4], &schema).unwrap();
        assert_eq!(synthetic_accuracy(&Genome(vec![0.0, 0.0]), &land).unwrap(), 0.9);
        let acc = synthetic_accuracy(&Genome(vec![0.5, 0.5]), &land).unwrap();
        assert!(libm::fabs(acc - 0.7) < 1e-15);
        let steep = SyntheticLandscape::new(0.9, vec![10.0, 10.0], &schema).unwrap();
        assert_eq!(synthetic_accuracy(&Genome(vec![1.0, 1.0]), &steep).unwrap(), 0.0);
        assert!(matches!(
            synthetic_accuracy(&Genome(vec![0.0]), &land),
            Err(Error::GenomeLength { .. })
        ));
        assert!(SyntheticLandscape::new(0.9, vec![0.4], &schema).is_err());
    }

    #[test]
    fn synthetic_decreases_in_continuous_genes() {
        let schema = two_gene_schema();
        let land = SyntheticLandscape::new(0.9, vec![0.3, 0.1], &schema).unwrap();
        let h = 1e-6;
        for i in 1..100 {
            let p = i as f64 / 100.0;
            for gene in 0..2 {
                let mut a = vec![0.2, 0.2];
                let mut b = a.clone();
                a[gene] = p;
                b[gene] = p + h;
                let fa = synthetic_accuracy(&Genome(a), &land).unwrap();
                let fb = synthetic_accuracy(&Genome(b), &land).unwrap();
                assert!(fb < fa);
            }
        }
    }

    #[test]
    fn validation_subset_is_evenly_spaced() {
        let ds = Dataset::new((0..10).map(|v| v as f32).collect(), 1, (0..10).map(|v| v % 2).collect(), 2).unwrap();
        let sub = ds.validation_subset(0.2).unwrap();
        assert_eq!(sub.len(), 2);
        assert_eq!(sub.sample(0).0, &[0.0]);
        assert_eq!(sub.sample(1).0, &[5.0]);
        assert_eq!(ds.validation_subset(1.0).unwrap(), ds);
        assert!(ds.validation_subset(0.0).is_err());
    }

    #[test]
    fn dataset_validation() {
        assert!(Dataset::new(vec![], 1, vec![], 2).is_err());
        assert!(Dataset::new(vec![0.0, 1.0], 1, vec![0, 2], 2).is_err());
        assert!(Dataset::new(vec![0.0], 2, vec![0], 2).is_err());
    }

    #[test]
    fn argmax_prefers_lowest_index_on_ties() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax(&[0.0, 0.0]), 0);
    }

    #[test]
    fn single_sample_accuracy_is_zero_or_one() {
        let model = ModelSpec::new("m", vec![LayerSpec::fully_connected(2, 2, false)]).unwrap();
        let tensors = TensorStore::new(&model, vec![vec![1.0, 0.0, 0.0, 1.0]], vec![vec![0.0, 0.0]]).unwrap();
        for label in 0..2 {
            let ds = Dataset::new(vec![0.2, 0.7], 2, vec![label], 2).unwrap();
            let out = builtin_accuracy(&model, &tensors, &CompressionPlan::uncompressed(&model), &ds).unwrap();
            assert_eq!(out.accuracy, if label == 1 { 1.0 } else { 0.0 });
            assert_eq!(out.evaluated, 1);
        }
    }
}
