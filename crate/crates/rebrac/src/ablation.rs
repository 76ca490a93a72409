//! Single-change ablations of the base configuration and the signed
//! percentage deltas used to report them.

use rebrac_core::AgentConfig;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Toggle {
    /// Critic LayerNorm off.
    NoLayerNorm,
    /// One hidden layer fewer in both networks.
    Shallow,
    /// `β₁ = 0`.
    NoActorPenalty,
    /// `β₂ = 0`.
    NoCriticPenalty,
    /// Batch size divided by four.
    SmallBatch,
    /// Batch size multiplied by four.
    LargeBatch,
    /// `γ = 0.99`.
    DefaultGamma,
}

impl Toggle {
    pub const ALL: [Toggle; 7] = [
        Toggle::NoLayerNorm,
        Toggle::Shallow,
        Toggle::NoActorPenalty,
        Toggle::NoCriticPenalty,
        Toggle::SmallBatch,
        Toggle::LargeBatch,
        Toggle::DefaultGamma,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Toggle::NoLayerNorm => "no_layer_norm",
            Toggle::Shallow => "shallow",
            Toggle::NoActorPenalty => "no_actor_penalty",
            Toggle::NoCriticPenalty => "no_critic_penalty",
            Toggle::SmallBatch => "small_batch",
            Toggle::LargeBatch => "large_batch",
            Toggle::DefaultGamma => "default_gamma",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Toggle::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown ablation {s:?}")))
    }

    /// The base configuration with this one change applied.
    pub fn apply(self, base: &AgentConfig) -> Result<AgentConfig> {
        let mut cfg = base.clone();
        match self {
            Toggle::NoLayerNorm => cfg.critic.layer_norm = false,
            Toggle::Shallow => {
                if cfg.actor.depth() < 2 || cfg.critic.depth() < 2 {
                    return Err(Error::Config("shallow needs at least two hidden layers".into()));
                }
                cfg.actor = cfg.actor.clone().with_depth(cfg.actor.depth() - 1);
                cfg.critic = cfg.critic.clone().with_depth(cfg.critic.depth() - 1);
            }
            Toggle::NoActorPenalty => cfg.beta1_actor = 0.0,
            Toggle::NoCriticPenalty => cfg.beta2_critic = 0.0,
            Toggle::SmallBatch => cfg.batch_size = (cfg.batch_size / 4).max(1),
            Toggle::LargeBatch => cfg.batch_size *= 4,
            Toggle::DefaultGamma => cfg.gamma = 0.99,
        }
        Ok(cfg)
    }
}

/// `(toggle - base) / base · 100`.
pub fn percent_delta(base: f64, toggle: f64) -> Result<f64> {
    if base == 0.0 || !base.is_finite() || !toggle.is_finite() {
        return Err(Error::Config(format!("percentage change undefined for base {base}")));
    }
    Ok((toggle - base) / base * 100.0)
}

/// Sign-prefixed, one decimal, in parentheses: `(-26.6%)`, `(+0.6%)`.
pub fn format_delta(pct: f64) -> String {
    let rounded = (pct * 10.0).round() / 10.0;
    if rounded < 0.0 {
        format!("({rounded:.1}%)")
    } else {
        format!("(+{:.1}%)", rounded.abs())
    }
}

/// A report cell such as `59.2 (-26.6%)`.
pub fn format_row(base: f64, toggle: f64) -> String {
    match percent_delta(base, toggle) {
        Ok(p) => format!("{toggle:.1} {}", format_delta(p)),
        Err(_) => format!("{toggle:.1}"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rebrac_core::envs::EnvKind;

    use crate::config::{desk_agent, Algorithm};

    #[test]
    fn names_round_trip() {
        for t in Toggle::ALL {
            assert_eq!(Toggle::parse(t.name()).unwrap(), t);
        }
        assert!(Toggle::parse("no_everything").is_err());
    }

    #[test]
    fn each_toggle_changes_one_thing() {
        let base = desk_agent(EnvKind::Maze, Algorithm::ReBrac);
        for t in Toggle::ALL {
            let c = t.apply(&base).unwrap();
            assert_ne!(c, base, "{}", t.name());
            c.validate().unwrap();
        }
        assert_eq!(Toggle::DefaultGamma.apply(&base).unwrap().gamma, 0.99);
        assert_eq!(Toggle::Shallow.apply(&base).unwrap().actor.depth(), 2);
        assert!(!Toggle::NoLayerNorm.apply(&base).unwrap().critic.layer_norm);
    }

    #[test]
    fn delta_formatting() {
        assert_eq!(format_delta(percent_delta(80.6, 59.2).unwrap()), "(-26.6%)");
        assert_eq!(format_delta(percent_delta(80.6, 80.6).unwrap()), "(+0.0%)");
        assert_eq!(format_delta(-0.04), "(+0.0%)");
        assert_eq!(format_delta(0.6), "(+0.6%)");
        assert_eq!(format_row(80.6, 59.2), "59.2 (-26.6%)");
        assert!(percent_delta(0.0, 1.0).is_err());
    }
}
