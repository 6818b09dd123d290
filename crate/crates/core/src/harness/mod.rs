//! Orchestration: offline artifact preparation, closed-loop episodes,
//! experiment grids and trace audits.

pub mod config;
pub mod episode;
pub mod grid;
pub mod offline;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::controller::InputMask;
use crate::error::TwistError;
use crate::types::SyncMode;

pub use config::ExperimentConfig;
pub use episode::{replay_trace, run_episode, run_episode_with, EpisodeTrace, FrameRecord, ReplayReport};
pub use grid::{run_grid, GridOutput};
pub use offline::{run_offline, Bundle};

/// Compared methods: TWIST, the fixed and channel-only baselines, and the
/// controller and transceiver ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Twist,
    StaticLow,
    StaticMed,
    StaticHigh,
    ChannelAdaptive,
    NoGamma,
    NoRho,
    NoDrift,
    NoQ,
    Uniform,
    NoGating,
    NoCompletion,
    HardOnly,
}

/// How a method picks the next mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ControlKind {
    Risk(InputMask),
    Static(SyncMode),
    ChannelOnly,
}

impl Method {
    pub const ALL: [Method; 13] = [
        Method::Twist,
        Method::StaticLow,
        Method::StaticMed,
        Method::StaticHigh,
        Method::ChannelAdaptive,
        Method::NoGamma,
        Method::NoRho,
        Method::NoDrift,
        Method::NoQ,
        Method::Uniform,
        Method::NoGating,
        Method::NoCompletion,
        Method::HardOnly,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Twist => "twist",
            Method::StaticLow => "static-low",
            Method::StaticMed => "static-med",
            Method::StaticHigh => "static-high",
            Method::ChannelAdaptive => "channel-adaptive",
            Method::NoGamma => "no-gamma",
            Method::NoRho => "no-rho",
            Method::NoDrift => "no-drift",
            Method::NoQ => "no-q",
            Method::Uniform => "uniform",
            Method::NoGating => "no-gating",
            Method::NoCompletion => "no-completion",
            Method::HardOnly => "hard-only",
        }
    }

    pub fn control(self) -> ControlKind {
        let without = |f: fn(&mut InputMask)| {
            let mut m = InputMask::ALL;
            f(&mut m);
            ControlKind::Risk(m)
        };
        match self {
            Method::StaticLow => ControlKind::Static(SyncMode::Low),
            Method::StaticMed => ControlKind::Static(SyncMode::Med),
            Method::StaticHigh => ControlKind::Static(SyncMode::High),
            Method::ChannelAdaptive => ControlKind::ChannelOnly,
            Method::NoGamma => without(|m| m.gamma = false),
            Method::NoRho => without(|m| m.rho = false),
            Method::NoDrift => without(|m| m.drift = false),
            Method::NoQ => without(|m| m.priority = false),
            _ => ControlKind::Risk(InputMask::ALL),
        }
    }

    pub fn uniform_protection(self) -> bool {
        self == Method::Uniform
    }

    pub fn gating(self) -> bool {
        !matches!(self, Method::NoGating | Method::HardOnly)
    }

    pub fn completion(self) -> bool {
        !matches!(self, Method::NoCompletion | Method::HardOnly)
    }

    /// Method selected by the command-line `--controller` flag.
    pub fn from_controller_flag(flag: &str) -> Result<Method, TwistError> {
        Ok(match flag {
            "full" => Method::Twist,
            "no-gamma" => Method::NoGamma,
            "no-rho" => Method::NoRho,
            "no-drift" => Method::NoDrift,
            "no-q" => Method::NoQ,
            "channel-only" => Method::ChannelAdaptive,
            "static-low" => Method::StaticLow,
            "static-med" => Method::StaticMed,
            "static-high" => Method::StaticHigh,
            other => {
                return Err(TwistError::Config(format!("unknown controller `{other}`")));
            }
        })
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = TwistError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .iter()
            .copied()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| TwistError::Config(format!("unknown method `{s}`")))
    }
}
