use alloc::format;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitPolicy {
    /// Threshold search followed by rejection sampling above `acc_thr`.
    #[default]
    Warm,
    /// Every gene uniform over its whole domain, no acceptance test.
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    pub population_size: usize,
    pub iterations: usize,
    pub acc_thr: f64,
    pub p_cross: f64,
    pub p_swap: f64,
    pub p_mutate: f64,
    pub p_tweak: f64,
    /// Standard deviation of the additive mutation noise on continuous genes.
    pub mutation_sigma: f64,
    /// Standard deviation of the warm-init normal, as a fraction of θ.
    pub init_sigma_fraction: f64,
    pub epsilon_pen: f64,
    pub elitism: bool,
    pub seed: u64,
    pub init_max_attempts: usize,
    pub init: InitPolicy,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            population_size: 100,
            iterations: 50,
            acc_thr: 0.0,
            p_cross: 0.7,
            p_swap: 0.5,
            p_mutate: 0.3,
            p_tweak: 0.1,
            mutation_sigma: 0.2,
            init_sigma_fraction: 0.5,
            epsilon_pen: 1e-3,
            elitism: true,
            seed: 0,
            init_max_attempts: 1000,
            init: InitPolicy::Warm,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &'static str, reason: alloc::string::String| Err(Error::InvalidConfig { field, reason });
        if self.population_size < 2 || !self.population_size.is_multiple_of(2) {
            return bad("population_size", format!("{} must be even and at least 2", self.population_size));
        }
        for (field, p) in [
            ("acc_thr", self.acc_thr),
            ("p_cross", self.p_cross),
            ("p_swap", self.p_swap),
            ("p_mutate", self.p_mutate),
            ("p_tweak", self.p_tweak),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(field, format!("{p} outside [0, 1]"));
            }
        }
        if !(self.mutation_sigma >= 0.0 && self.mutation_sigma.is_finite()) {
            return bad("mutation_sigma", format!("{} must be finite and non-negative", self.mutation_sigma));
        }
        if !(self.init_sigma_fraction >= 0.0 && self.init_sigma_fraction.is_finite()) {
            return bad(
                "init_sigma_fraction",
                format!("{} must be finite and non-negative", self.init_sigma_fraction),
            );
        }
        if !(self.epsilon_pen > 0.0 && self.epsilon_pen.is_finite()) {
            return bad("epsilon_pen", format!("{} must be positive", self.epsilon_pen));
        }
        if self.init_max_attempts == 0 {
            return bad("init_max_attempts", "must be positive".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn odd_population_names_the_field() {
        let cfg = EngineConfig {
            population_size: 7,
            ..EngineConfig::default()
        };
        match cfg.validate() {
            Err(Error::InvalidConfig { field, .. }) => assert_eq!(field, "population_size"),
            other => panic!("unexpected {other:?}"),
        }
        assert!(EngineConfig::default().validate().is_ok());
        let cfg = EngineConfig {
            p_swap: 1.5,
            ..EngineConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
