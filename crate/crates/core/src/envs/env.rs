use serde::{Deserialize, Serialize};

use super::dynamics::{transition, Outcome};
use super::level::{Level, Pos};
use super::{channel, obs_index, LevelSpec, Observation, CUE_REWARD, GOAL_REWARD, NUM_ACTIONS, OBS_DIM};
use crate::error::{contract, Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepResult {
    pub observation: Observation,
    pub reward: f64,
    pub done: bool,
    pub episode_steps: usize,
    pub outcome: Outcome,
}

/// A single running level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvInstance {
    level: Level,
    max_ep_length: usize,
    pos: Pos,
    tick: u64,
    steps: usize,
    cues_left: Vec<bool>,
    done: bool,
}

/// Generates the level for `spec` and places the agent at its start.
pub fn make_env(spec: LevelSpec, max_ep_length: usize) -> Result<EnvInstance> {
    if max_ep_length == 0 {
        return Err(Error::Config("max_ep_length must be positive".into()));
    }
    Ok(EnvInstance::from_level(Level::generate(spec)?, max_ep_length))
}

impl EnvInstance {
    pub fn from_level(level: Level, max_ep_length: usize) -> Self {
        let mut env = Self {
            pos: level.start,
            cues_left: vec![true; level.cues.len()],
            level,
            max_ep_length,
            tick: 0,
            steps: 0,
            done: false,
        };
        env.reset();
        env
    }

    pub fn spec(&self) -> LevelSpec {
        self.level.spec
    }

    pub fn level(&self) -> &Level {
        &self.level
    }

    pub fn episode_steps(&self) -> usize {
        self.steps
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn reset(&mut self) -> Observation {
        self.pos = self.level.start;
        self.tick = 0;
        self.steps = 0;
        self.done = false;
        self.cues_left.iter_mut().for_each(|c| *c = true);
        self.observation()
    }

    /// Replaces the level and resets onto it.
    pub fn load_level(&mut self, level: Level) -> Observation {
        self.cues_left = vec![true; level.cues.len()];
        self.level = level;
        self.reset()
    }

    pub fn observation(&self) -> Observation {
        let mut obs = vec![0.0; OBS_DIM];
        let l = &self.level;
        for y in 0..super::GRID {
            for x in 0..super::GRID {
                if l.is_wall(x, y) {
                    obs[obs_index(channel::WALL, x, y)] = 1.0;
                }
                if l.hazard_at(x, y, self.tick) {
                    obs[obs_index(channel::HAZARD, x, y)] = 1.0;
                }
            }
        }
        obs[obs_index(channel::GOAL, l.goal.0, l.goal.1)] = 1.0;
        for (&(x, y), &left) in l.cues.iter().zip(&self.cues_left) {
            if left {
                obs[obs_index(channel::CUE, x, y)] = 1.0;
            }
        }
        obs[obs_index(channel::AGENT, self.pos.0, self.pos.1)] = 1.0;
        Observation(obs)
    }

    pub fn step(&mut self, action: usize) -> Result<StepResult> {
        contract!(!self.done, "step called on a finished episode without reset");
        contract!(action < NUM_ACTIONS, "action {action} outside 0..{NUM_ACTIONS}");
        let t = transition(&self.level, self.pos, self.tick, action);
        self.pos = t.pos;
        self.tick += 1;
        self.steps += 1;

        let mut reward = 0.0;
        for p in &t.path {
            if let Some(i) = self.level.cues.iter().position(|c| c == p) {
                if self.cues_left[i] {
                    self.cues_left[i] = false;
                    reward += CUE_REWARD;
                }
            }
        }
        match t.outcome {
            Outcome::Goal => {
                reward += GOAL_REWARD;
                self.done = true;
            }
            Outcome::Hazard => self.done = true,
            Outcome::Alive => {}
        }
        if self.steps >= self.max_ep_length {
            self.done = true;
        }
        Ok(StepResult {
            observation: self.observation(),
            reward,
            done: self.done,
            episode_steps: self.steps,
            outcome: t.outcome,
        })
    }

    /// Textual dump of the current state, one character per cell.
    pub fn render(&self) -> String {
        self.level.render(self.pos, self.tick, &self.cues_left)
    }
}
