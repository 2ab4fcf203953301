//! MiniProc: a seeded, procedurally generated gridworld suite.
//!
//! Three families share a 9×9 grid, a 405-float observation (five one-hot
//! channels: agent, goal, hazard, wall, cue) and eight actions, so a single
//! policy network can act in any of them.
//!
//! - `runner` and `climber` are platformers with gravity and identical
//!   movement rules; runner progresses rightward over pits and pillars,
//!   climber progresses upward over staggered platforms.
//! - `dodger` is top-down with no gravity and horizontally bouncing hazards.
//!
//! Reaching the goal pays +10 and ends the episode; each of up to two cue
//! cells pays +1 the first time it is entered; touching a hazard ends the
//! episode with no further reward.

mod dynamics;
mod env;
mod level;
mod vec_env;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

pub use dynamics::{shortest_solution, Outcome};
pub use env::{make_env, EnvInstance, StepResult};
pub use level::Level;
pub use vec_env::VecEnv;

pub const GRID: usize = 9;
pub const CHANNELS: usize = 5;
pub const OBS_DIM: usize = GRID * GRID * CHANNELS;
pub const NUM_ACTIONS: usize = 8;

pub const GOAL_REWARD: f64 = 10.0;
pub const CUE_REWARD: f64 = 1.0;
pub const MAX_CUES: usize = 2;

/// Channel offsets inside an observation.
pub mod channel {
    pub const AGENT: usize = 0;
    pub const GOAL: usize = 1;
    pub const HAZARD: usize = 2;
    pub const WALL: usize = 3;
    pub const CUE: usize = 4;
}

/// Index of `(channel, x, y)` in the flat observation.
pub fn obs_index(channel: usize, x: usize, y: usize) -> usize {
    channel * GRID * GRID + y * GRID + x
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Runner,
    Climber,
    Dodger,
}

impl Family {
    pub const ALL: [Family; 3] = [Family::Runner, Family::Climber, Family::Dodger];

    pub fn name(self) -> &'static str {
        match self {
            Family::Runner => "runner",
            Family::Climber => "climber",
            Family::Dodger => "dodger",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "runner" => Ok(Family::Runner),
            "climber" => Ok(Family::Climber),
            "dodger" => Ok(Family::Dodger),
            other => Err(Error::Config(format!("unknown environment family `{other}`"))),
        }
    }
}

/// One task: a family plus the seed its layout is generated from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LevelSpec {
    pub family: Family,
    pub level_seed: u64,
}

impl LevelSpec {
    pub fn new(family: Family, level_seed: u64) -> Self {
        Self { family, level_seed }
    }

    pub fn parse(family: &str, level_seed: u64) -> crate::Result<Self> {
        Ok(Self::new(family.parse()?, level_seed))
    }

    /// Levels `start..start + count` of one family.
    pub fn range(family: Family, start: u64, count: usize) -> Vec<LevelSpec> {
        (0..count as u64).map(|i| LevelSpec::new(family, start + i)).collect()
    }
}

/// Flat one-hot grid observation of length [`OBS_DIM`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation(pub Vec<f64>);

impl Observation {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn agent_cells(&self) -> usize {
        self.0[..GRID * GRID].iter().filter(|&&v| v != 0.0).count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_family_is_config_error() {
        assert!(matches!(LevelSpec::parse("starpilot", 1), Err(Error::Config(_))));
        assert_eq!(LevelSpec::parse("climber", 3).unwrap().family, Family::Climber);
    }

    #[test]
    fn observation_width() {
        assert_eq!(OBS_DIM, 405);
        assert_eq!(obs_index(channel::CUE, 8, 8), OBS_DIM - 1);
    }
}
