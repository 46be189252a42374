use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    /// MACs saved relative to the uncompressed model.
    pub delta_flops: u64,
    pub accuracy: f64,
    pub penalty: f64,
    pub score: f64,
    pub below_threshold: bool,
}

/// Fitness of one individual: MACs saved divided by the accuracy penalty
/// `(acc_o − acc_v) + [acc_v < acc_thr]·e^(acc_thr − acc_v)`, floored at
/// `epsilon_pen`.
pub fn score(delta_flops: u64, accuracy: f64, base_accuracy: f64, acc_thr: f64, epsilon_pen: f64) -> ScoreReport {
    let below_threshold = accuracy < acc_thr;
    let mut raw = base_accuracy - accuracy;
    if below_threshold {
        raw += libm::exp(acc_thr - accuracy);
    }
    let penalty = raw.max(epsilon_pen);
    ScoreReport {
        delta_flops,
        accuracy,
        penalty,
        score: delta_flops as f64 / penalty,
        below_threshold,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        let r = score(1000, 0.9, 0.9, 0.8, 1e-3);
        assert_eq!(r.penalty, 1e-3);
        assert!((r.score - 1e6).abs() <= 1e-12 * 1e6);

        let r = score(1_000_000, 0.85, 0.90, 0.80, 1e-3);
        assert!((r.penalty - 0.05).abs() < 1e-15);
        assert!((r.score - 2e7).abs() <= 1e-12 * 2e7 * 10.0);

        let r = score(0, 0.75, 0.90, 0.80, 1e-3);
        assert!(r.below_threshold);
        assert!((r.penalty - 1.201_271_096_376_024).abs() < 1e-12);
    }

    #[test]
    fn accuracy_gain_hits_the_floor() {
        let r = score(10, 0.95, 0.9, 0.5, 1e-3);
        assert_eq!(r.penalty, 1e-3);
    }

    #[test]
    fn crossing_the_threshold_lowers_the_score() {
        let above = score(1000, 0.8, 0.9, 0.8, 1e-3);
        let below = score(1000, 0.8 - 1e-9, 0.9, 0.8, 1e-3);
        assert!(below.score < above.score);
        assert!(below.penalty - above.penalty >= 1.0);
    }
}
