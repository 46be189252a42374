//! Model container files.
//!
//! Layout: a little-endian `u32` header length `H`, then `H` bytes of UTF-8
//! JSON manifest, then per layer the weight tensor followed by the bias, as
//! little-endian `f32`, row-major with the output channel outermost.

use std::fs;
use std::path::Path;

use evocompress_core::model::{ModelSpec, TensorStore};
use evocompress_core::Error;

use crate::error::{AppError, Result};

/// Parses a manifest and its tensor blob.
pub fn parse_model(manifest: &[u8], blob: &[u8]) -> Result<(ModelSpec, TensorStore), Error> {
    let model: ModelSpec = serde_json::from_slice(manifest).map_err(|e| Error::InvalidModel(e.to_string()))?;
    let expected: usize = model.layers().iter().map(|l| (l.weight_len() + l.m) * 4).sum();
    if blob.len() != expected {
        return Err(Error::InvalidModel(format!(
            "blob length mismatch: manifest declares {expected} bytes, blob holds {}",
            blob.len()
        )));
    }
    let mut floats = blob
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]));
    let mut weights = Vec::with_capacity(model.len());
    let mut biases = Vec::with_capacity(model.len());
    for layer in model.layers() {
        weights.push(floats.by_ref().take(layer.weight_len()).collect());
        biases.push(floats.by_ref().take(layer.m).collect());
    }
    let tensors = TensorStore::new(&model, weights, biases)?;
    Ok((model, tensors))
}

/// Splits a container into manifest and blob, then parses both.
pub fn read_container(bytes: &[u8]) -> Result<(ModelSpec, TensorStore), Error> {
    if bytes.len() < 4 {
        return Err(Error::InvalidModel("container shorter than its header length field".into()));
    }
    let header = u32::from_le_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]) as usize;
    let rest = &bytes[4..];
    if rest.len() < header {
        return Err(Error::InvalidModel(format!(
            "header length {header} exceeds the {} bytes that follow",
            rest.len()
        )));
    }
    parse_model(&rest[..header], &rest[header..])
}

pub fn serialize(model: &ModelSpec, tensors: &TensorStore) -> Vec<u8> {
    let manifest = serde_json::to_vec(model).expect("model manifests always serialize");
    let mut out = Vec::with_capacity(4 + manifest.len());
    out.extend_from_slice(&(manifest.len() as u32).to_le_bytes());
    out.extend_from_slice(&manifest);
    for i in 0..tensors.len() {
        for v in tensors.weight(i).iter().chain(tensors.bias(i)) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn load_model(path: &Path) -> Result<(ModelSpec, TensorStore)> {
    let bytes = fs::read(path).map_err(|e| AppError::io(path, e))?;
    read_container(&bytes).map_err(|e| AppError::parse(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use evocompress_core::model::LayerSpec;
    use proptest::prelude::*;

    fn mlp() -> (ModelSpec, TensorStore) {
        let model = ModelSpec::new(
            "mlp",
            vec![
                LayerSpec::fully_connected(4, 2, true),
                LayerSpec::fully_connected(4, 4, true),
                LayerSpec::fully_connected(2, 4, false),
            ],
        )
        .unwrap();
        let weights = model.layers().iter().map(|l| vec![0.5; l.weight_len()]).collect();
        let biases = model.layers().iter().map(|l| vec![-0.25; l.m]).collect();
        let tensors = TensorStore::new(&model, weights, biases).unwrap();
        (model, tensors)
    }

    #[test]
    fn three_layer_mlp_counts() {
        let (model, tensors) = mlp();
        let (parsed, _) = read_container(&serialize(&model, &tensors)).unwrap();
        assert_eq!(
            (parsed.len(), parsed.svd_layer_count(), parsed.tucker_layer_count()),
            (3, 3, 0)
        );
    }

    #[test]
    fn short_blob_is_rejected() {
        let (model, tensors) = mlp();
        let bytes = serialize(&model, &tensors);
        let err = read_container(&bytes[..bytes.len() - 4]).unwrap_err();
        assert!(err.to_string().contains("blob length mismatch"), "{err}");
    }

    #[test]
    fn broken_chain_is_rejected() {
        let manifest = br#"{"name":"x","layers":[
            {"kind":"fully_connected","m":16,"n":4},
            {"kind":"fully_connected","m":2,"n":8}]}"#;
        let blob = vec![0u8; (16 * 4 + 16 + 2 * 8 + 2) * 4];
        let err = parse_model(manifest, &blob).unwrap_err();
        assert!(err.to_string().contains("channel chain mismatch"), "{err}");
    }

    #[test]
    fn non_finite_weights_are_rejected() {
        let (model, tensors) = mlp();
        let mut bytes = serialize(&model, &tensors);
        let n = bytes.len();
        bytes[n - 4..].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(read_container(&bytes), Err(Error::NonFinite { .. })));
    }

    proptest! {
        #[test]
        fn serialize_then_parse_is_identity(
            dims in proptest::collection::vec(1usize..6, 2..5),
            seed in any::<u32>(),
        ) {
            let layers: Vec<_> = dims
                .windows(2)
                .enumerate()
                .map(|(i, w)| LayerSpec::fully_connected(w[1], w[0], i + 2 < dims.len()))
                .collect();
            let model = ModelSpec::new("p", layers).unwrap().with_reference_accuracy(Some(0.5));
            let mut state = seed;
            let mut next = || {
                state = state.wrapping_mul(1_664_525).wrapping_add(1_013_904_223);
                f32::from_bits((state >> 9) | 0x3f80_0000) - 1.5
            };
            let weights = model.layers().iter().map(|l| (0..l.weight_len()).map(|_| next()).collect()).collect();
            let biases = model.layers().iter().map(|l| (0..l.m).map(|_| next()).collect()).collect();
            let tensors = TensorStore::new(&model, weights, biases).unwrap();
            let (m2, t2) = read_container(&serialize(&model, &tensors)).unwrap();
            prop_assert_eq!(&m2, &model);
            for i in 0..model.len() {
                let a: Vec<u32> = tensors.weight(i).iter().chain(tensors.bias(i)).map(|v| v.to_bits()).collect();
                let b: Vec<u32> = t2.weight(i).iter().chain(t2.bias(i)).map(|v| v.to_bits()).collect();
                prop_assert_eq!(a, b);
            }
        }
    }
}
