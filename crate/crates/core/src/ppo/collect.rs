use super::{ActorCritic, RolloutBuffer};
use crate::envs::{Observation, VecEnv};
use crate::error::Result;
use crate::tensor::Tensor;
use crate::RunRng;

pub(crate) fn stack(obs: &[Observation]) -> Tensor {
    let width = obs.first().map_or(0, |o| o.0.len());
    let mut data = Vec::with_capacity(obs.len() * width);
    for o in obs {
        data.extend_from_slice(&o.0);
    }
    Tensor::matrix(obs.len(), width, data).expect("uniform observation width")
}

/// Steps `envs` for `num_steps` rounds under `agent`, then computes the
/// bootstrap values for the states that follow.
pub fn collect_rollout(
    agent: &mut dyn ActorCritic,
    envs: &mut VecEnv,
    num_steps: usize,
    rng: &mut RunRng,
) -> Result<RolloutBuffer> {
    let obs_dim = crate::envs::OBS_DIM;
    let mut buffer = RolloutBuffer::new(num_steps, envs.len(), obs_dim);
    let mut current = envs.observations();
    for _ in 0..num_steps {
        let x = stack(&current);
        let choices = agent.act(&x, rng)?;
        let values = agent.values(&x)?;
        let actions: Vec<usize> = choices.iter().map(|c| c.action).collect();
        let results = envs.vec_step(&actions)?;
        for ((obs, choice), (value, result)) in current.iter().zip(choices).zip(values.into_iter().zip(&results)) {
            buffer.push(obs, choice.action, result.reward, result.done, choice.log_prob, value, choice.activation)?;
        }
        current = envs.observations();
    }
    buffer.bootstrap_values = agent.values(&stack(&current))?;
    Ok(buffer)
}

#[cfg(test)]
mod tests {
    use super::super::PpoAgent;
    use super::*;
    use crate::envs::{make_env, Family, LevelSpec};
    use rand::SeedableRng;

    fn run(seed: u64) -> RolloutBuffer {
        let mut rng = RunRng::seed_from_u64(seed);
        let mut agent = PpoAgent::new(16, &mut rng);
        let specs = LevelSpec::range(Family::Runner, 1, 3);
        let mut envs = VecEnv::new(&specs, 4, 20).unwrap();
        collect_rollout(&mut agent, &mut envs, 32, &mut rng).unwrap()
    }

    #[test]
    fn deterministic_and_full() {
        let a = run(3);
        assert_eq!(a, run(3));
        assert_eq!(a.len(), 32 * 4);
        assert!(a.is_full());
    }

    #[test]
    fn rewards_match_replay() {
        let b = run(5);
        let specs = LevelSpec::range(Family::Runner, 1, 3);
        for e in 0..4 {
            let mut cursor = e % 3;
            let mut env = make_env(specs[cursor], 20).unwrap();
            for t in 0..32 {
                let i = t * 4 + e;
                assert_eq!(env.observation().0.as_slice(), b.obs_row(i));
                let r = env.step(b.actions[i]).unwrap();
                assert_eq!(r.reward, b.rewards[i]);
                assert_eq!(r.done, b.dones[i]);
                if r.done {
                    cursor = (cursor + 1) % 3;
                    env = make_env(specs[cursor], 20).unwrap();
                }
            }
        }
    }
}
