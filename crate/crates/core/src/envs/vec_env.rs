use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::env::{EnvInstance, StepResult};
use super::level::Level;
use super::{LevelSpec, Observation};
use crate::error::{contract, Result};

/// A batch of environments cycling through a fixed level set.
///
/// Environment `i` starts on level `i mod T` and moves to the next level of
/// the set each time an episode ends.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VecEnv {
    levels: Vec<Level>,
    envs: Vec<EnvInstance>,
    cursor: Vec<usize>,
}

impl VecEnv {
    pub fn new(level_set: &[LevelSpec], num_envs: usize, max_ep_length: usize) -> Result<Self> {
        contract!(!level_set.is_empty(), "empty level set");
        contract!(num_envs > 0, "need at least one environment");
        let first = super::make_env(level_set[0], max_ep_length)?;
        let mut levels = vec![first.level().clone()];
        for &spec in &level_set[1..] {
            levels.push(Level::generate(spec)?);
        }
        let cursor: Vec<usize> = (0..num_envs).map(|i| i % levels.len()).collect();
        let envs = cursor
            .iter()
            .map(|&c| EnvInstance::from_level(levels[c].clone(), max_ep_length))
            .collect();
        Ok(Self {
            levels,
            envs,
            cursor,
        })
    }

    pub fn len(&self) -> usize {
        self.envs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.envs.is_empty()
    }

    pub fn envs(&self) -> &[EnvInstance] {
        &self.envs
    }

    pub fn level_specs(&self) -> Vec<LevelSpec> {
        self.levels.iter().map(|l| l.spec).collect()
    }

    /// Observations the next actions should be chosen from.
    pub fn observations(&self) -> Vec<Observation> {
        self.envs.iter().map(EnvInstance::observation).collect()
    }

    /// Steps every environment once, in parallel.
    ///
    /// Results are exactly what [`EnvInstance::step`] returns (terminal
    /// observation included); finished environments are then moved to their
    /// next level so the following call starts a fresh episode.
    pub fn vec_step(&mut self, actions: &[usize]) -> Result<Vec<StepResult>> {
        contract!(
            actions.len() == self.envs.len(),
            "{} actions for {} environments",
            actions.len(),
            self.envs.len()
        );
        let levels = &self.levels;
        self.envs
            .par_iter_mut()
            .zip(self.cursor.par_iter_mut())
            .zip(actions.par_iter())
            .map(|((env, cursor), &a)| {
                let r = env.step(a)?;
                if r.done {
                    *cursor = (*cursor + 1) % levels.len();
                    env.load_level(levels[*cursor].clone());
                }
                Ok(r)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::super::Family;
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_env_matches_plain_step() {
        let specs = LevelSpec::range(Family::Dodger, 1, 1);
        let mut v = VecEnv::new(&specs, 1, 50).unwrap();
        let mut e = super::super::make_env(specs[0], 50).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..40 {
            let a = rng.gen_range(0..8);
            let got = v.vec_step(&[a]).unwrap().remove(0);
            let want = e.step(a).unwrap();
            assert_eq!(got, want);
            if want.done {
                e.reset();
            }
        }
    }

    #[test]
    fn parallel_matches_sequential_oracle() {
        let specs = LevelSpec::range(Family::Runner, 1, 3);
        let mut v = VecEnv::new(&specs, 6, 30).unwrap();
        // Oracle: independent instances stepped one after another, with the
        // same per-episode level rotation.
        let mut oracle: Vec<(usize, EnvInstance)> = (0..6)
            .map(|i| (i % 3, super::super::make_env(specs[i % 3], 30).unwrap()))
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..200 {
            let actions: Vec<usize> = (0..6).map(|_| rng.gen_range(0..8)).collect();
            let got = v.vec_step(&actions).unwrap();
            for (i, (cursor, env)) in oracle.iter_mut().enumerate() {
                let want = env.step(actions[i]).unwrap();
                assert_eq!(got[i], want);
                if want.done {
                    *cursor = (*cursor + 1) % 3;
                    *env = super::super::make_env(specs[*cursor], 30).unwrap();
                }
            }
        }
    }

    #[test]
    fn finished_env_restarts_next_call() {
        let specs = LevelSpec::range(Family::Runner, 1, 2);
        let mut v = VecEnv::new(&specs, 1, 2).unwrap();
        v.vec_step(&[7]).unwrap();
        let r = v.vec_step(&[7]).unwrap();
        assert!(r[0].done);
        assert_eq!(v.envs()[0].spec(), specs[1]);
        assert_eq!(v.envs()[0].episode_steps(), 0);
        let r = v.vec_step(&[7]).unwrap();
        assert!(!r[0].done);
    }

    #[test]
    fn action_count_mismatch() {
        let specs = LevelSpec::range(Family::Runner, 1, 1);
        let mut v = VecEnv::new(&specs, 2, 10).unwrap();
        assert!(v.vec_step(&[0]).is_err());
    }
}
