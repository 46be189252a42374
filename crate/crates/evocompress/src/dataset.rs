//! CSV datasets: a header row, then one sample per row with the features
//! followed by an integer class label in the last column.

use std::path::Path;

use evocompress_core::evaluator::Dataset;

use crate::error::{AppError, Result};

pub fn read_dataset<R: std::io::Read>(reader: R, num_classes: usize, origin: &Path) -> Result<Dataset> {
    let mut csv = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let columns = csv.headers().map_err(|e| AppError::parse(origin, e))?.len();
    if columns < 2 {
        return Err(AppError::parse(origin, "need at least one feature column and a label column"));
    }
    let dim = columns - 1;
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for (row, record) in csv.records().enumerate() {
        let record = record.map_err(|e| AppError::parse(origin, e))?;
        let line = row + 2;
        for field in record.iter().take(dim) {
            let v: f32 = field
                .trim()
                .parse()
                .map_err(|e| AppError::parse(origin, format!("line {line}: feature {field:?}: {e}")))?;
            features.push(v);
        }
        let label = &record[dim];
        labels.push(
            label
                .trim()
                .parse::<usize>()
                .map_err(|e| AppError::parse(origin, format!("line {line}: label {label:?}: {e}")))?,
        );
    }
    Dataset::new(features, dim, labels, num_classes).map_err(|e| AppError::parse(origin, e))
}

pub fn load_dataset(path: &Path, num_classes: usize) -> Result<Dataset> {
    let file = std::fs::File::open(path).map_err(|e| AppError::io(path, e))?;
    read_dataset(std::io::BufReader::new(file), num_classes, path)
}
