//! The forward-pass evaluator against the bundled assets and an independent
//! dense oracle.

use std::path::PathBuf;

use evocompress::container::load_model;
use evocompress::dataset::load_dataset;
use evocompress_core::evaluator::{builtin_accuracy, Dataset};
use evocompress_core::genome::{CompressionPlan, Decomposition, Genome, GenomeSchema, LayerAction, PruneStyle, Task};
use evocompress_core::model::{ModelSpec, TensorStore};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn asset(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("assets").join(name)
}

fn bundled(model: &str, data: &str) -> (ModelSpec, TensorStore, Dataset) {
    let (m, t) = load_model(&asset(model)).unwrap();
    let classes = m.layers().last().unwrap().m;
    let d = load_dataset(&asset(data), classes).unwrap().validation_subset(0.2).unwrap();
    (m, t, d)
}

#[test]
fn uncompressed_accuracy_matches_the_stored_reference() {
    for (model, data) in [("mlp.evc", "spirals.csv"), ("cnn.evc", "bars.csv")] {
        let (m, t, d) = bundled(model, data);
        let outcome = builtin_accuracy(&m, &t, &CompressionPlan::uncompressed(&m), &d).unwrap();
        assert_eq!(Some(outcome.accuracy), m.reference_accuracy(), "{model}");
        assert_eq!(outcome.evaluated, d.len());
    }
}

#[test]
fn pruning_everything_predicts_from_the_last_bias() {
    let (m, t, d) = bundled("mlp.evc", "spirals.csv");
    let schema = GenomeSchema::build(&m, Task::Pn).unwrap();
    let plan = schema.decode(&Genome(vec![1.0; schema.len()]), &m).unwrap();
    let bias = t.bias(m.len() - 1);
    let mut winner = 0;
    for (c, b) in bias.iter().enumerate() {
        if *b > bias[winner] {
            winner = c;
        }
    }
    let expected = d.labels().iter().filter(|&&y| y == winner).count() as f64 / d.len() as f64;
    assert_eq!(builtin_accuracy(&m, &t, &plan, &d).unwrap().accuracy, expected);
}

/// Straight-line forward pass of a fully connected chain, with pruning
/// applied by zeroing weights or activations and decompositions applied as
/// dense rank-r reconstructions.
fn oracle_accuracy(m: &ModelSpec, t: &TensorStore, plan: &CompressionPlan, d: &Dataset) -> f64 {
    let layers = m.layers();
    let mut weights: Vec<DMatrix<f64>> = layers
        .iter()
        .map(|l| DMatrix::from_row_slice(l.m, l.n, &t.weight(l.id).iter().map(|&w| f64::from(w)).collect::<Vec<_>>()))
        .collect();
    let mut masks: Vec<Vec<bool>> = layers.iter().map(|l| vec![true; l.m]).collect();

    for l in layers {
        let w = &mut weights[l.id];
        match plan.action(l.id) {
            LayerAction::Prune {
                style: PruneStyle::Unstructured,
                ratio,
            } => {
                let count = (ratio * w.len() as f64 + 1e-9).floor() as usize;
                let flat: Vec<f64> = w.transpose().iter().copied().collect();
                let mut order: Vec<usize> = (0..flat.len()).collect();
                order.sort_by(|&a, &b| flat[a].abs().partial_cmp(&flat[b].abs()).unwrap().then(a.cmp(&b)));
                for &i in &order[..count] {
                    w[(i / l.n, i % l.n)] = 0.0;
                }
            }
            action => {
                if let Some(ratio) = action.structured_ratio() {
                    let norms: Vec<f64> = (0..l.m).map(|r| w.row(r).iter().map(|v| v.abs()).sum()).collect();
                    let drop = (ratio * l.m as f64 + 1e-9).floor() as usize;
                    let mut order: Vec<usize> = (0..l.m).collect();
                    order.sort_by(|&a, &b| norms[a].partial_cmp(&norms[b]).unwrap().then(b.cmp(&a)));
                    for &c in &order[..drop] {
                        masks[l.id][c] = false;
                    }
                }
            }
        }
    }
    for l in layers {
        let Some(Decomposition::Svd { rank }) = plan.action(l.id).decomposition() else {
            continue;
        };
        let rows: Vec<usize> = (0..l.m).filter(|&r| masks[l.id][r]).collect();
        let cols: Vec<usize> = match l.id {
            0 => (0..l.n).collect(),
            i => (0..l.n).filter(|&c| masks[i - 1][c]).collect(),
        };
        let (kout, kin) = (rows.len(), cols.len());
        let rank = rank.min(kout).min(kin);
        if rank * (kin + kout) >= kin * kout {
            continue;
        }
        let compact = DMatrix::from_fn(kout, kin, |r, c| weights[l.id][(rows[r], cols[c])]);
        let svd = compact.svd(true, true);
        let mut idx: Vec<usize> = (0..svd.singular_values.len()).collect();
        idx.sort_by(|&a, &b| svd.singular_values[b].partial_cmp(&svd.singular_values[a]).unwrap());
        let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
        let mut approx = DMatrix::zeros(kout, kin);
        for &j in &idx[..rank] {
            approx += svd.singular_values[j] * u.column(j) * v_t.row(j);
        }
        let mut full = DMatrix::zeros(l.m, l.n);
        for (r, &rr) in rows.iter().enumerate() {
            for (c, &cc) in cols.iter().enumerate() {
                full[(rr, cc)] = approx[(r, c)];
            }
        }
        weights[l.id] = full;
    }

    let mut correct = 0;
    for i in 0..d.len() {
        let (x, y) = d.sample(i);
        let mut act = nalgebra::DVector::from_iterator(x.len(), x.iter().map(|&v| f64::from(v)));
        for l in layers {
            let bias = nalgebra::DVector::from_iterator(l.m, t.bias(l.id).iter().map(|&b| f64::from(b)));
            act = &weights[l.id] * act + bias;
            if l.has_relu {
                act.apply(|v| *v = v.max(0.0));
            }
            for (c, keep) in masks[l.id].iter().enumerate() {
                if !keep {
                    act[c] = 0.0;
                }
            }
        }
        let mut best = 0;
        for c in 1..act.len() {
            if act[c] > act[best] {
                best = c;
            }
        }
        correct += usize::from(best == y);
    }
    correct as f64 / d.len() as f64
}

fn random_genome(schema: &GenomeSchema, rng: &mut ChaCha8Rng) -> Genome {
    Genome(
        schema
            .descriptors
            .iter()
            .map(|desc| match desc.code_max() {
                None => rng.random_range(0.0..=1.0),
                Some(max) => f64::from(rng.random_range(1..=max)),
            })
            .collect(),
    )
}

#[test]
fn random_plans_match_the_dense_oracle() {
    let (m, t, d) = bundled("mlp.evc", "spirals.csv");
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut differing = 0;
    for task in [Task::Pn, Task::Ps, Task::D, Task::DPs] {
        let schema = GenomeSchema::build(&m, task).unwrap();
        for _ in 0..25 {
            let plan = schema.decode(&random_genome(&schema, &mut rng), &m).unwrap();
            let got = builtin_accuracy(&m, &t, &plan, &d).unwrap().accuracy;
            let want = oracle_accuracy(&m, &t, &plan, &d);
            if got != want {
                differing += 1;
                eprintln!("{task:?}: builtin {got}, oracle {want}, plan {plan:?}");
            }
        }
    }
    assert_eq!(differing, 0);
}

#[test]
fn repeated_evaluation_is_bitwise_stable() {
    let (m, t, d) = bundled("cnn.evc", "bars.csv");
    let schema = GenomeSchema::build(&m, Task::DPs).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..5 {
        let plan = schema.decode(&random_genome(&schema, &mut rng), &m).unwrap();
        let a = builtin_accuracy(&m, &t, &plan, &d).unwrap();
        let b = builtin_accuracy(&m, &t, &plan, &d).unwrap();
        assert_eq!(a, b);
    }
}
