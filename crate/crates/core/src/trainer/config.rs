use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Branch, ContractiveMode, IndicatorEncoding, LossWeights, DEFAULT_HIDDEN};

/// Ablation variants of the objective.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    Full,
    A,
    B,
    C,
    Dagger,
    DoubleDagger,
    SupervisedBaseline,
}

impl Variant {
    pub const ALL: [Variant; 7] = [
        Variant::Full,
        Variant::A,
        Variant::B,
        Variant::C,
        Variant::Dagger,
        Variant::DoubleDagger,
        Variant::SupervisedBaseline,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::A => "a",
            Variant::B => "b",
            Variant::C => "c",
            Variant::Dagger => "dagger",
            Variant::DoubleDagger => "double-dagger",
            Variant::SupervisedBaseline => "supervised-baseline",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str().eq_ignore_ascii_case(s))
    }

    pub fn describe(self) -> &'static str {
        match self {
            Variant::Full => "all terms",
            Variant::A => "supervised only (alpha=0)",
            Variant::B => "unsupervised terms on labeled data, lambda=0",
            Variant::C => "unlabeled data in reconstruction/MMD, lambda=0",
            Variant::Dagger => "no MMD (beta=0)",
            Variant::DoubleDagger => "no MMD, no contraction (beta=gamma=0)",
            Variant::SupervisedBaseline => "single-branch regression onto attributes",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Which parts of the objective a variant keeps.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ActiveTerms {
    /// Unlabeled images enter the reconstruction and MMD terms.
    pub unlabeled_data: bool,
    /// The pseudo-label term is built.
    pub pseudo_labels: bool,
    pub branch: Branch,
}

pub fn variant_weights(variant: Variant, base: LossWeights) -> (LossWeights, ActiveTerms) {
    let full = ActiveTerms {
        unlabeled_data: true,
        pseudo_labels: true,
        branch: Branch::Dual,
    };
    let off = ActiveTerms {
        unlabeled_data: false,
        pseudo_labels: false,
        ..full
    };
    match variant {
        Variant::Full => (base, full),
        Variant::A => (LossWeights { alpha: 0.0, ..base }, off),
        Variant::B => (
            LossWeights {
                lambda: 0.0,
                ..base
            },
            off,
        ),
        Variant::C => (
            LossWeights {
                lambda: 0.0,
                ..base
            },
            ActiveTerms {
                pseudo_labels: false,
                ..full
            },
        ),
        Variant::Dagger => (LossWeights { beta: 0.0, ..base }, full),
        Variant::DoubleDagger => (
            LossWeights {
                beta: 0.0,
                gamma: 0.0,
                ..base
            },
            full,
        ),
        Variant::SupervisedBaseline => (
            LossWeights { alpha: 0.0, ..base },
            ActiveTerms {
                branch: Branch::VisualOnly,
                ..off
            },
        ),
    }
}

/// Everything a training run depends on besides the data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub weights: LossWeights,
    pub beta_grid: Vec<f64>,
    pub lambda_grid: Vec<f64>,
    pub batch_size: usize,
    pub warmup_iters: usize,
    pub max_iters: usize,
    pub convergence_tol: f64,
    pub convergence_window: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub dropout_keep: f64,
    pub d_hidden: usize,
    pub contractive: ContractiveMode,
    pub indicator: IndicatorEncoding,
    pub variant: Variant,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            weights: LossWeights::default(),
            beta_grid: vec![0.1, 1.0],
            lambda_grid: vec![0.1, 1.0],
            batch_size: 1024,
            warmup_iters: 100,
            max_iters: 5000,
            convergence_tol: 1e-5,
            convergence_window: 100,
            learning_rate: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            dropout_keep: 0.7,
            d_hidden: DEFAULT_HIDDEN,
            contractive: ContractiveMode::Full,
            indicator: IndicatorEncoding::ZeroOne,
            variant: Variant::Full,
            seed: 0,
        }
    }
}

fn parse_grid(v: &str) -> Option<Vec<f64>> {
    let g: Option<Vec<f64>> = v.split(',').map(|s| s.trim().parse().ok()).collect();
    g.filter(|g| !g.is_empty())
}

fn format_grid(g: &[f64]) -> String {
    g.iter().map(f64::to_string).collect::<Vec<_>>().join(",")
}

impl TrainConfig {
    pub const KEYS: [&'static str; 22] = [
        "alpha",
        "beta",
        "gamma",
        "lambda",
        "kappa",
        "beta_grid",
        "lambda_grid",
        "batch_size",
        "warmup_iters",
        "max_iters",
        "convergence_tol",
        "convergence_window",
        "learning_rate",
        "adam_beta1",
        "adam_beta2",
        "adam_eps",
        "dropout_keep",
        "d_hidden",
        "contractive",
        "indicator",
        "variant",
        "seed",
    ];

    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.warmup_iters > self.max_iters {
            return Err(Error::Config(format!(
                "warmup_iters ({}) exceeds max_iters ({})",
                self.warmup_iters, self.max_iters
            )));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        if !(self.dropout_keep > 0.0 && self.dropout_keep <= 1.0) {
            return Err(Error::Config(format!(
                "dropout_keep must lie in (0, 1], got {}",
                self.dropout_keep
            )));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(Error::Config("Adam decay rates must lie in [0, 1)".into()));
        }
        if self.d_hidden == 0 || self.convergence_window == 0 {
            return Err(Error::Config(
                "d_hidden and convergence_window must be >= 1".into(),
            ));
        }
        if self.beta_grid.is_empty() || self.lambda_grid.is_empty() {
            return Err(Error::Config(
                "beta_grid and lambda_grid must be non-empty".into(),
            ));
        }
        Ok(())
    }

    /// Sets one field from its config-file spelling.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = || Error::Config(format!("invalid value {value:?} for `{key}`"));
        let f = || value.parse::<f64>().map_err(|_| bad());
        let u = || value.parse::<usize>().map_err(|_| bad());
        let w = &mut self.weights;
        match key {
            "alpha" => w.alpha = f()?,
            "beta" => w.beta = f()?,
            "gamma" => w.gamma = f()?,
            "lambda" => w.lambda = f()?,
            "kappa" => w.kappa = f()?,
            "beta_grid" => self.beta_grid = parse_grid(value).ok_or_else(bad)?,
            "lambda_grid" => self.lambda_grid = parse_grid(value).ok_or_else(bad)?,
            "batch_size" => self.batch_size = u()?,
            "warmup_iters" => self.warmup_iters = u()?,
            "max_iters" => self.max_iters = u()?,
            "convergence_tol" => self.convergence_tol = f()?,
            "convergence_window" => self.convergence_window = u()?,
            "learning_rate" => self.learning_rate = f()?,
            "adam_beta1" => self.adam_beta1 = f()?,
            "adam_beta2" => self.adam_beta2 = f()?,
            "adam_eps" => self.adam_eps = f()?,
            "dropout_keep" => self.dropout_keep = f()?,
            "d_hidden" => self.d_hidden = u()?,
            "contractive" => self.contractive = ContractiveMode::parse(value).ok_or_else(bad)?,
            "indicator" => self.indicator = IndicatorEncoding::parse(value).ok_or_else(bad)?,
            "variant" => self.variant = Variant::parse(value).ok_or_else(bad)?,
            "seed" => self.seed = value.parse().map_err(|_| bad())?,
            _ => return Err(Error::Config(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    /// Every field as `(key, value)` in [`Self::KEYS`] order; feeding the
    /// pairs back through [`Self::set`] reproduces the config.
    pub fn echo(&self) -> Vec<(&'static str, String)> {
        let w = &self.weights;
        let vals = [
            w.alpha.to_string(),
            w.beta.to_string(),
            w.gamma.to_string(),
            w.lambda.to_string(),
            w.kappa.to_string(),
            format_grid(&self.beta_grid),
            format_grid(&self.lambda_grid),
            self.batch_size.to_string(),
            self.warmup_iters.to_string(),
            self.max_iters.to_string(),
            self.convergence_tol.to_string(),
            self.convergence_window.to_string(),
            self.learning_rate.to_string(),
            self.adam_beta1.to_string(),
            self.adam_beta2.to_string(),
            self.adam_eps.to_string(),
            self.dropout_keep.to_string(),
            self.d_hidden.to_string(),
            self.contractive.as_str().to_string(),
            self.indicator.as_str().to_string(),
            self.variant.as_str().to_string(),
            self.seed.to_string(),
        ];
        Self::KEYS.into_iter().zip(vals).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn echo_round_trips_through_set() {
        let mut cfg = TrainConfig {
            seed: 17,
            variant: Variant::DoubleDagger,
            beta_grid: vec![0.5],
            ..Default::default()
        };
        cfg.weights.kappa = 0.125;
        let mut back = TrainConfig::default();
        for (k, v) in cfg.echo() {
            back.set(k, &v).unwrap();
        }
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_key_and_bad_value() {
        let mut cfg = TrainConfig::default();
        assert!(cfg.set("learning_rat", "1").is_err());
        assert!(cfg.set("batch_size", "-3").is_err());
        assert!(cfg.set("variant", "e").is_err());
    }

    #[test]
    fn warmup_beyond_budget_is_rejected() {
        let cfg = TrainConfig {
            max_iters: 50,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn variant_registry() {
        let base = LossWeights::default();
        assert_eq!(variant_weights(Variant::Full, base).0, base);
        assert_eq!(variant_weights(Variant::A, base).0.alpha, 0.0);
        let dd = variant_weights(Variant::DoubleDagger, base).0;
        assert_eq!((dd.beta, dd.gamma), (0.0, 0.0));
        assert_eq!(variant_weights(Variant::C, base).0.lambda, 0.0);
        assert!(variant_weights(Variant::C, base).1.unlabeled_data);
        assert!(!variant_weights(Variant::B, base).1.unlabeled_data);
        assert_eq!(
            variant_weights(Variant::SupervisedBaseline, base).1.branch,
            Branch::VisualOnly
        );
        assert_eq!(Variant::parse("Double-Dagger"), Some(Variant::DoubleDagger));
    }
}
