use serde::{Deserialize, Serialize};

use super::collect::stack;
use super::ActorCritic;
use crate::envs::{EnvInstance, Level, LevelSpec, Observation};
use crate::error::{contract, Result};
use crate::RunRng;

/// Per-step penalty subtracted from the environment return at evaluation.
pub const EVAL_STEP_PENALTY: f64 = 0.01;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTrace {
    pub level: LevelSpec,
    /// Sum of environment rewards.
    pub raw_return: f64,
    pub steps: usize,
    /// Observations actions were chosen from (the terminal one excluded);
    /// empty unless recording was requested.
    pub observations: Vec<Observation>,
}

impl EpisodeTrace {
    pub fn eval_return(&self) -> f64 {
        self.raw_return - EVAL_STEP_PENALTY * self.steps as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub mean: f64,
    /// Standard error of the mean over episodes.
    pub stderr: f64,
    pub returns: Vec<f64>,
}

impl EvalResult {
    pub fn from_returns(returns: Vec<f64>) -> Self {
        let n = returns.len();
        if n == 0 {
            return Self {
                mean: 0.0,
                stderr: 0.0,
                returns,
            };
        }
        let mean = returns.iter().sum::<f64>() / n as f64;
        let stderr = if n > 1 {
            let var = returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        } else {
            0.0
        };
        Self { mean, stderr, returns }
    }
}

/// Plays `episodes` sampled episodes, episode `i` on level `i mod T`.
/// Episodes advance in lockstep so the policy sees one batch per step.
pub fn run_episodes(
    agent: &mut dyn ActorCritic,
    levels: &[LevelSpec],
    episodes: usize,
    max_ep_length: usize,
    record: bool,
    rng: &mut RunRng,
) -> Result<Vec<EpisodeTrace>> {
    contract!(!levels.is_empty(), "evaluation needs at least one level");
    let generated: Vec<Level> = levels
        .iter()
        .take(episodes)
        .map(|&s| Level::generate(s))
        .collect::<Result<_>>()?;
    let mut envs: Vec<EnvInstance> = (0..episodes)
        .map(|i| EnvInstance::from_level(generated[i % generated.len()].clone(), max_ep_length))
        .collect();
    let mut traces: Vec<EpisodeTrace> = (0..episodes)
        .map(|i| EpisodeTrace {
            level: levels[i % levels.len()],
            raw_return: 0.0,
            steps: 0,
            observations: Vec::new(),
        })
        .collect();
    let mut alive: Vec<usize> = (0..episodes).collect();
    while !alive.is_empty() {
        let obs: Vec<Observation> = alive.iter().map(|&i| envs[i].observation()).collect();
        let choices = agent.act(&stack(&obs), rng)?;
        for ((&i, o), c) in alive.iter().zip(obs).zip(&choices) {
            let r = envs[i].step(c.action)?;
            let t = &mut traces[i];
            t.raw_return += r.reward;
            t.steps = r.episode_steps;
            if record {
                t.observations.push(o);
            }
        }
        alive.retain(|&i| !envs[i].is_done());
    }
    Ok(traces)
}

/// Mean evaluation return (environment return minus the step penalty).
pub fn evaluate_policy(
    agent: &mut dyn ActorCritic,
    levels: &[LevelSpec],
    episodes: usize,
    max_eval_ep_len: usize,
    rng: &mut RunRng,
) -> Result<EvalResult> {
    let traces = run_episodes(agent, levels, episodes, max_eval_ep_len, false, rng)?;
    Ok(EvalResult::from_returns(traces.iter().map(EpisodeTrace::eval_return).collect()))
}

#[cfg(test)]
mod tests {
    use super::super::{ActionChoice, ActivationRecord, PpoAgent};
    use super::*;
    use crate::envs::Family;
    use crate::tensor::Tensor;
    use rand::{Rng, SeedableRng};

    /// Replays a fixed script, one episode at a time.
    struct Scripted(Vec<usize>, usize);

    impl ActorCritic for Scripted {
        fn act(&mut self, obs: &Tensor, _: &mut RunRng) -> Result<Vec<ActionChoice>> {
            let a = self.0[self.1 % self.0.len()];
            self.1 += 1;
            Ok(vec![ActionChoice { action: a, log_prob: 0.0, logits: vec![0.0; 8], activation: ActivationRecord::default() }; obs.rows()])
        }
        fn values(&self, obs: &Tensor) -> Result<Vec<f64>> {
            Ok(vec![0.0; obs.rows()])
        }
    }

    struct Uniform;

    impl ActorCritic for Uniform {
        fn act(&mut self, obs: &Tensor, rng: &mut RunRng) -> Result<Vec<ActionChoice>> {
            Ok((0..obs.rows())
                .map(|_| ActionChoice {
                    action: rng.gen_range(0..8),
                    log_prob: -(8f64).ln(),
                    logits: vec![0.0; 8],
                    activation: ActivationRecord::default(),
                })
                .collect())
        }
        fn values(&self, obs: &Tensor) -> Result<Vec<f64>> {
            Ok(vec![0.0; obs.rows()])
        }
    }

    // Hand-checked shortest route on runner level 7; it collects no cue.
    const RUNNER7_SCRIPT: [usize; 8] = [3, 3, 3, 3, 5, 3, 3, 3];

    #[test]
    fn scripted_completion_scores_ten_minus_penalty() {
        let mut rng = RunRng::seed_from_u64(0);
        let levels = [LevelSpec::new(Family::Runner, 7)];
        let traces = run_episodes(&mut Scripted(RUNNER7_SCRIPT.to_vec(), 0), &levels, 1, 200, false, &mut rng).unwrap();
        assert_eq!(traces[0].raw_return, 10.0);
        assert_eq!(traces[0].steps, 8);
        assert_eq!(traces[0].eval_return(), 10.0 - 0.01 * 8.0);
    }

    #[test]
    fn requested_episode_count_is_honoured() {
        let mut rng = RunRng::seed_from_u64(1);
        let levels = LevelSpec::range(Family::Dodger, 1, 5);
        let r = evaluate_policy(&mut Uniform, &levels, 30, 50, &mut rng).unwrap();
        assert_eq!(r.returns.len(), 30);
    }

    #[test]
    fn random_dodger_band() {
        // Measured once over 200 episodes: uniform play scores about 0.2-0.5.
        let mut rng = RunRng::seed_from_u64(0);
        let levels = LevelSpec::range(Family::Dodger, 1, 5);
        let r = evaluate_policy(&mut Uniform, &levels, 200, 200, &mut rng).unwrap();
        assert!((-0.5..=1.0).contains(&r.mean), "{}", r.mean);
    }

    #[test]
    fn evaluation_is_pure_in_parameters_and_seed() {
        let mut rng = RunRng::seed_from_u64(2);
        let agent = PpoAgent::new(16, &mut rng);
        let levels = LevelSpec::range(Family::Runner, 1, 3);
        let run = || evaluate_policy(&mut agent.clone(), &levels, 6, 40, &mut RunRng::seed_from_u64(9)).unwrap();
        assert_eq!(run(), run());
    }

    #[test]
    fn recorded_observations_exclude_terminal() {
        let mut rng = RunRng::seed_from_u64(0);
        let levels = [LevelSpec::new(Family::Runner, 7)];
        let traces = run_episodes(&mut Scripted(RUNNER7_SCRIPT.to_vec(), 0), &levels, 1, 200, true, &mut rng).unwrap();
        assert_eq!(traces[0].observations.len(), 8);
        assert_eq!(traces[0].observations[0].agent_cells(), 1);
    }
}
