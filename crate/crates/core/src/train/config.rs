use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

macro_rules! named_enum {
    ($(#[$meta:meta])* $name:ident { $($variant:ident => $label:literal),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
        pub enum $name {
            $($variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn label(self) -> &'static str {
                match self {
                    $($name::$variant => $label),+
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.label())
            }
        }

        impl FromStr for $name {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                let lower = s.to_ascii_lowercase();
                $name::ALL
                    .iter()
                    .copied()
                    .find(|v| v.label() == lower)
                    .ok_or_else(|| Error::InvalidArgument(format!(
                        concat!("unknown ", stringify!($name), " {:?}"), s
                    )))
            }
        }
    };
}

named_enum!(
    /// What a training example is and which candidates it is scored against.
    Strategy {
        NegSampling => "negsampling",
        KvsAll => "kvsall",
        OneVsAll => "1vsall",
        RecPairwise => "pairwise",
        RecPointwise => "pointwise",
        RecSoftmax => "softmax",
        RecContrastive => "contrastive",
    }
);

named_enum!(
    LossKind {
        MarginHinge => "margin",
        Bce => "bce",
        Kl => "kl",
        Bpr => "bpr",
        Ph => "ph",
        Mse => "mse",
        Sce => "sce",
        Cc => "cc",
    }
);

named_enum!(
    OptimizerKind {
        Sgd => "sgd",
        Adagrad => "adagrad",
        Adam => "adam",
    }
);

named_enum!(
    RegularizerKind {
        None => "none",
        L2 => "l2",
        Lp => "lp",
        N3 => "n3",
    }
);

/// Whether `loss` can drive `strategy`.
pub fn compatible(strategy: Strategy, loss: LossKind) -> bool {
    use LossKind::*;
    use Strategy::*;
    matches!(
        (strategy, loss),
        (NegSampling, MarginHinge)
            | (NegSampling, Bce)
            | (KvsAll, Bce)
            | (OneVsAll, Kl)
            | (RecPairwise, Bpr)
            | (RecPairwise, Ph)
            | (RecPointwise, Bce)
            | (RecPointwise, Mse)
            | (RecSoftmax, Sce)
            | (RecContrastive, Cc)
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub strategy: Strategy,
    pub loss: LossKind,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub regularizer: RegularizerKind,
    pub reg_weight: f64,
    /// Exponent of the Lp penalty.
    pub lp_p: f64,
    /// Hinge margin for negative sampling; also the pairwise-hinge margin.
    pub margin: f64,
    /// Sampled negatives per positive (per user for the contrastive loss).
    pub negatives: usize,
    pub cc_weight: f64,
    pub cc_margin: f64,
    pub ph_weight: f64,
    pub epochs: usize,
    /// Evaluations without improvement before stopping; `None` disables early stopping.
    pub patience: Option<usize>,
    pub eval_every: usize,
    pub seed: u64,
    /// Corrupt / rank over all entities instead of the user or item side only.
    #[serde(default)]
    pub untyped: bool,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            strategy: Strategy::OneVsAll,
            loss: LossKind::Kl,
            batch_size: 1024,
            optimizer: OptimizerKind::Adagrad,
            learning_rate: 0.1,
            regularizer: RegularizerKind::None,
            reg_weight: 0.0,
            lp_p: 2.0,
            margin: 1.0,
            negatives: 1,
            cc_weight: 1.0,
            cc_margin: 0.5,
            ph_weight: 1.0,
            epochs: 200,
            patience: Some(5),
            eval_every: 5,
            seed: 0,
            untyped: false,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if !compatible(self.strategy, self.loss) {
            return Err(Error::IncompatibleConfig(format!(
                "loss {} cannot be used with strategy {}",
                self.loss, self.strategy
            )));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!(
                "learning_rate must be finite and >= 0, got {}",
                self.learning_rate
            ));
        }
        if !(self.reg_weight >= 0.0 && self.reg_weight.is_finite()) {
            return bad(format!("reg_weight must be >= 0, got {}", self.reg_weight));
        }
        if !(self.lp_p >= 1.0 && self.lp_p.is_finite()) {
            return bad(format!("lp_p must be >= 1, got {}", self.lp_p));
        }
        if !(self.margin >= 0.0 && self.margin.is_finite()) {
            return bad(format!("margin must be >= 0, got {}", self.margin));
        }
        if self.loss == LossKind::Ph && self.margin <= 0.0 {
            return bad("pairwise hinge needs margin > 0".into());
        }
        if self.negatives == 0 {
            return bad("negatives must be at least 1".into());
        }
        if !(self.cc_weight >= 0.0 && self.ph_weight >= 0.0) {
            return bad("loss weights must be >= 0".into());
        }
        if !self.cc_margin.is_finite() {
            return bad("cc_margin must be finite".into());
        }
        if self.eval_every == 0 {
            return bad("eval_every must be at least 1".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn incompatible_pairs_rejected() {
        let cfg = TrainingConfig {
            strategy: Strategy::OneVsAll,
            loss: LossKind::Bce,
            ..TrainingConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::IncompatibleConfig(_))));
        assert!(TrainingConfig::default().validate().is_ok());
    }

    #[test]
    fn names_round_trip() {
        for s in Strategy::ALL {
            assert_eq!(s.label().parse::<Strategy>().unwrap(), *s);
        }
        assert_eq!("KL".parse::<LossKind>().unwrap(), LossKind::Kl);
        assert!("rmsprop".parse::<OptimizerKind>().is_err());
    }

    #[test]
    fn every_loss_has_a_strategy() {
        for &l in LossKind::ALL {
            assert!(Strategy::ALL.iter().any(|&s| compatible(s, l)), "{l}");
        }
    }
}
