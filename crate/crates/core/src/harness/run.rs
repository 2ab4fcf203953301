use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use super::metrics::{export_metrics, EvalPoint, ExportFormat, MetricsReport};
use super::{Algorithm, PhasePlan, RunConfig};
use crate::envs::VecEnv;
use crate::error::{contract, Error, Result};
use crate::hop::{checkpoint_now, checkpoint_rng, load_bundle, save_bundle, CheckpointReport, HopAgent};
use crate::pnn::PnnStack;
use crate::ppo::{collect_rollout, compute_gae, evaluate_policy, ppo_update, ActorCritic, EvalResult, PpoAgent, PpoModel};
use crate::tensor::{AdamState, Parameterized, TensorStore};
use crate::RunRng;

/// The trained model of one run.
#[derive(Clone, Debug, PartialEq)]
pub enum Learner {
    Ppo(PpoAgent),
    Hop(HopAgent),
    Pnn(PnnStack),
}

impl Learner {
    fn new(config: &RunConfig, first_task: &str, rng: &mut RunRng) -> Result<Self> {
        Ok(match config.algorithm {
            Algorithm::Ppo => Learner::Ppo(PpoAgent::new(config.hidden_dim, rng)),
            Algorithm::Hop => Learner::Hop(HopAgent::new(config.hidden_dim, config.hop(), rng)),
            Algorithm::Pnn => {
                let mut stack = PnnStack::new(config.hidden_dim);
                stack.activate(first_task, rng)?;
                Learner::Pnn(stack)
            }
        })
    }

    pub fn model(&mut self) -> &mut dyn PpoModel {
        match self {
            Learner::Ppo(a) => a,
            Learner::Hop(a) => a,
            Learner::Pnn(s) => s,
        }
    }

    pub fn num_checkpoints(&self) -> usize {
        match self {
            Learner::Hop(a) => a.num_checkpoints(),
            _ => 0,
        }
    }

    /// Actor-critic weights (and current checkpoint actors) by parameter name.
    fn weights(&self) -> TensorStore {
        let mut store = TensorStore::default();
        let mut push = |n: String, t: &crate::tensor::Tensor| store.push(n, t.clone());
        match self {
            Learner::Ppo(a) => {
                a.actor.visit("actor", &mut push);
                a.critic.visit("critic", &mut push);
            }
            Learner::Hop(a) => {
                a.orchestra.learner.visit("actor", &mut push);
                a.critic.visit("critic", &mut push);
                for (k, c) in a.orchestra.checkpoints.iter().enumerate() {
                    c.actor.visit(&format!("ckpt{k}"), &mut push);
                }
            }
            Learner::Pnn(s) => s.visit("", &mut push),
        }
        store
    }
}

/// One line of `rollouts.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RolloutLog {
    pub step: u64,
    pub phase: usize,
    pub num_checkpoints: usize,
    pub mean_active_checkpoints: f64,
    pub episodes_finished: usize,
    /// Mean environment return of the episodes that finished in this rollout.
    pub mean_episode_return: Option<f64>,
}

/// One line of `checkpoints.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointLog {
    pub phase: usize,
    #[serde(flatten)]
    pub report: CheckpointReport,
}

#[derive(Serialize, Deserialize)]
struct State {
    step: u64,
    rng: RunRng,
    envs: VecEnv,
    episode_returns: Vec<f64>,
    metrics: MetricsReport,
    active_sum: f64,
    active_rollouts: usize,
    num_checkpoints: usize,
    adam_steps: BTreeMap<String, u64>,
}

const STATE: &str = "state";
const LOGS: [&str; 3] = ["updates.jsonl", "rollouts.jsonl", "checkpoints.jsonl"];

/// Generator for the evaluation at `step`, independent of training.
fn eval_rng(seed: u64, step: u64, stream: u64) -> RunRng {
    let mut r = RunRng::seed_from_u64(seed ^ 0x0E7A_1000_0000_0000);
    r.set_stream(step.wrapping_mul(2).wrapping_add(stream));
    r
}

/// A three-phase training run, advanced one rollout at a time.
pub struct Run {
    pub config: RunConfig,
    pub plan: PhasePlan,
    pub learner: Learner,
    pub adam: AdamState,
    pub envs: VecEnv,
    pub step: u64,
    pub metrics: MetricsReport,
    rng: RunRng,
    episode_returns: Vec<f64>,
    active_sum: f64,
    active_rollouts: usize,
    out: Option<PathBuf>,
}

impl Run {
    /// Fresh run; with `out`, logs, checkpoints and snapshots go there.
    pub fn new(config: RunConfig, out: Option<PathBuf>) -> Result<Self> {
        let plan = config.validate()?;
        contract!(!plan.phases.is_empty(), "experiment has no phases");
        let mut rng = RunRng::seed_from_u64(config.seed);
        let learner = Learner::new(&config, &plan.phases[0].task, &mut rng)?;
        let envs = VecEnv::new(&plan.phases[0].levels, config.num_envs, config.max_ep_length)?;
        if let Some(dir) = &out {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let path = dir.join("config.json");
            fs::write(&path, serde_json::to_vec_pretty(&config)?).map_err(|e| Error::io(&path, e))?;
            for log in LOGS {
                let p = dir.join(log);
                fs::write(&p, b"").map_err(|e| Error::io(&p, e))?;
            }
        }
        Ok(Self {
            adam: AdamState::new(config.adam()),
            episode_returns: vec![0.0; config.num_envs],
            plan,
            learner,
            envs,
            step: 0,
            metrics: MetricsReport::default(),
            rng,
            active_sum: 0.0,
            active_rollouts: 0,
            out,
            config,
        })
    }

    pub fn finished(&self) -> bool {
        self.step >= self.plan.total()
    }

    pub fn batch_size(&self) -> u64 {
        (self.config.num_steps * self.config.num_envs) as u64
    }

    /// 0-based phase that the most recent rollout trained in.
    fn completed_phase(&self) -> usize {
        self.plan.phase_at(self.step.saturating_sub(1))
    }

    fn append_log<T: Serialize>(&self, name: &str, record: &T) -> Result<()> {
        let Some(dir) = &self.out else { return Ok(()) };
        let path = dir.join(name);
        let mut f = OpenOptions::new().append(true).create(true).open(&path).map_err(|e| Error::io(&path, e))?;
        let mut line = serde_json::to_vec(record)?;
        line.push(b'\n');
        f.write_all(&line).map_err(|e| Error::io(&path, e))
    }

    /// Collects one rollout, updates, and then checkpoints, evaluates,
    /// switches phase and persists as the new step count requires.
    pub fn step_rollout(&mut self) -> Result<()> {
        contract!(!self.finished(), "run already finished at step {}", self.step);
        let ppo = self.config.ppo();
        let buffer = collect_rollout(self.learner.model(), &mut self.envs, ppo.num_steps, &mut self.rng)?;
        let gae = compute_gae(&buffer, ppo.gamma, ppo.gae_lambda)?;
        let mut stats = ppo_update(&buffer, &gae, self.learner.model(), &mut self.adam, &ppo, &mut self.rng)?;
        self.step += self.batch_size();
        stats.step = self.step;
        self.append_log("updates.jsonl", &stats)?;

        let mut finished = Vec::new();
        for (i, (&r, &d)) in buffer.rewards.iter().zip(&buffer.dones).enumerate() {
            let e = i % buffer.num_envs;
            self.episode_returns[e] += r;
            if d {
                finished.push(self.episode_returns[e]);
                self.episode_returns[e] = 0.0;
            }
        }
        let mean_active = buffer.mean_active_checkpoints();
        self.active_sum += mean_active;
        self.active_rollouts += 1;
        let phase = self.completed_phase();
        self.append_log(
            "rollouts.jsonl",
            &RolloutLog {
                step: self.step,
                phase: phase + 1,
                num_checkpoints: self.learner.num_checkpoints(),
                mean_active_checkpoints: mean_active,
                episodes_finished: finished.len(),
                mean_episode_return: (!finished.is_empty()).then(|| finished.iter().sum::<f64>() / finished.len() as f64),
            },
        )?;
        log::debug!("step {} phase {} update {:?}", self.step, phase + 1, stats);

        if let Learner::Hop(agent) = &mut self.learner {
            if self.step.is_multiple_of(agent.config.checkpoint_interval) {
                let levels = &self.plan.phases[phase].levels;
                let mut rng = checkpoint_rng(self.config.seed, self.step);
                let report = checkpoint_now(agent, levels, self.config.max_eval_ep_len, self.step, &mut rng)?;
                if let (Some(k), Some(dir)) = (report.index, &self.out) {
                    save_bundle(&dir.join("checkpoints"), &agent.orchestra.checkpoints[k])?;
                }
                log::info!(
                    "step {}: checkpoint {:?}, {} successful episodes, {} trusted states",
                    self.step,
                    report.index,
                    report.successes,
                    report.stored
                );
                self.append_log("checkpoints.jsonl", &CheckpointLog { phase: phase + 1, report })?;
            }
        }

        if self.step.is_multiple_of(self.config.report_epoch) {
            self.evaluate(phase)?;
        }

        let next = self.plan.phase_at(self.step);
        if !self.finished() && next != phase {
            let p = &self.plan.phases[next];
            log::info!("step {}: entering phase {} ({})", self.step, next + 1, p.task);
            self.envs = VecEnv::new(&p.levels, self.config.num_envs, self.config.max_ep_length)?;
            self.episode_returns.iter_mut().for_each(|r| *r = 0.0);
            if let Learner::Pnn(stack) = &mut self.learner {
                stack.activate(&p.task, &mut self.rng)?;
            }
        }

        if self.step.is_multiple_of(self.config.persist_every()) || self.finished() {
            self.persist()?;
        }
        if self.finished() {
            self.export()?;
        }
        Ok(())
    }

    /// Evaluates `learner` on phase `index`'s levels; a PNN uses that
    /// phase's column.
    fn eval_on(&self, index: usize, stream: u64) -> Result<EvalResult> {
        let p = &self.plan.phases[index];
        let mut rng = eval_rng(self.config.seed, self.step, stream);
        let (episodes, len) = (self.config.eval_batch_size, self.config.max_eval_ep_len);
        match &self.learner {
            Learner::Pnn(stack) => {
                let mut s = stack.clone();
                s.active = s.column_index(&p.task)?;
                evaluate_policy(&mut s, &p.levels, episodes, len, &mut rng)
            }
            other => {
                let mut l = other.clone();
                evaluate_policy(l.model() as &mut dyn ActorCritic, &p.levels, episodes, len, &mut rng)
            }
        }
    }

    fn evaluate(&mut self, phase: usize) -> Result<()> {
        let r = self.eval_on(phase, 0)?;
        let phase1 = if self.config.also_eval_phase1 && phase > 0 {
            Some(self.eval_on(0, 1)?.mean)
        } else {
            None
        };
        let active = match self.learner {
            Learner::Hop(_) if self.active_rollouts > 0 => Some(self.active_sum / self.active_rollouts as f64),
            _ => None,
        };
        self.active_sum = 0.0;
        self.active_rollouts = 0;
        log::info!("step {} phase {}: eval {:.3} ± {:.3}", self.step, phase + 1, r.mean, r.stderr);
        self.metrics.points.push(EvalPoint {
            step: self.step,
            phase: phase + 1,
            phase_step: self.step - self.plan.start(phase),
            mean_return: r.mean,
            stderr: r.stderr,
            active_checkpoint_count_mean: active,
            num_checkpoints: self.learner.num_checkpoints(),
            phase1_mean_return: phase1,
        });
        Ok(())
    }

    fn export(&self) -> Result<()> {
        if let Some(dir) = &self.out {
            export_metrics(&self.metrics, &self.config, dir, ExportFormat::Csv)?;
            export_metrics(&self.metrics, &self.config, dir, ExportFormat::Json)?;
        }
        Ok(())
    }

    /// Atomically replaces `out/state` with a snapshot that [`Run::resume`]
    /// continues from bit-identically. A no-op without an output directory.
    pub fn persist(&self) -> Result<()> {
        let Some(dir) = &self.out else { return Ok(()) };
        let tmp = dir.join("state.tmp");
        if tmp.exists() {
            fs::remove_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;
        }
        fs::create_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;
        let (adam_store, adam_steps) = self.adam.to_store();
        adam_store.save(&tmp, "adam")?;
        match &self.learner {
            Learner::Pnn(stack) => stack.save(&tmp.join("pnn"))?,
            other => other.weights().save(&tmp, "weights")?,
        }
        let state = State {
            step: self.step,
            rng: self.rng.clone(),
            envs: self.envs.clone(),
            episode_returns: self.episode_returns.clone(),
            metrics: self.metrics.clone(),
            active_sum: self.active_sum,
            active_rollouts: self.active_rollouts,
            num_checkpoints: self.learner.num_checkpoints(),
            adam_steps,
        };
        let path = tmp.join("state.json");
        fs::write(&path, serde_json::to_vec(&state)?).map_err(|e| Error::io(&path, e))?;

        let live = dir.join(STATE);
        let old = dir.join("state.old");
        if live.exists() {
            if old.exists() {
                fs::remove_dir_all(&old).map_err(|e| Error::io(&old, e))?;
            }
            fs::rename(&live, &old).map_err(|e| Error::io(&live, e))?;
        }
        fs::rename(&tmp, &live).map_err(|e| Error::io(&tmp, e))?;
        if old.exists() {
            fs::remove_dir_all(&old).map_err(|e| Error::io(&old, e))?;
        }
        Ok(())
    }

    /// Continues the run persisted in `out`, discarding log lines written
    /// after the snapshot.
    pub fn resume(out: &Path) -> Result<Self> {
        let config = RunConfig::load(&out.join("config.json"))?;
        let mut state_dir = out.join(STATE);
        if !state_dir.exists() {
            // A crash between the two renames leaves only the previous snapshot.
            state_dir = out.join("state.old");
        }
        let path = state_dir.join("state.json");
        let state: State = serde_json::from_slice(&fs::read(&path).map_err(|e| Error::io(&path, e))?)?;

        let mut run = Run::new_unlogged(config)?;
        match &mut run.learner {
            Learner::Pnn(stack) => *stack = PnnStack::load(&state_dir.join("pnn"))?,
            Learner::Ppo(a) => {
                let w = TensorStore::load(&state_dir, "weights")?;
                a.actor.load_from("actor", &w)?;
                a.critic.load_from("critic", &w)?;
            }
            Learner::Hop(a) => {
                let w = TensorStore::load(&state_dir, "weights")?;
                a.orchestra.learner.load_from("actor", &w)?;
                a.critic.load_from("critic", &w)?;
                let template = a.orchestra.learner.clone();
                for k in 0..state.num_checkpoints {
                    let mut c = load_bundle(&out.join("checkpoints"), k, &template)?;
                    c.actor.load_from(&format!("ckpt{k}"), &w)?;
                    a.orchestra.checkpoints.push(c);
                }
            }
        }
        let adam_store = TensorStore::load(&state_dir, "adam")?;
        run.adam = AdamState::from_store(run.config.adam(), &adam_store, &state.adam_steps)?;
        run.step = state.step;
        run.rng = state.rng;
        run.envs = state.envs;
        run.episode_returns = state.episode_returns;
        run.metrics = state.metrics;
        run.active_sum = state.active_sum;
        run.active_rollouts = state.active_rollouts;
        for log in LOGS {
            truncate_log(&out.join(log), run.step)?;
        }
        run.out = Some(out.to_path_buf());
        log::info!("resumed {} at step {}", out.display(), run.step);
        Ok(run)
    }

    fn new_unlogged(config: RunConfig) -> Result<Self> {
        Run::new(config, None)
    }

    /// Runs every remaining rollout; `limit` stops early after that many.
    pub fn run(&mut self, limit: Option<usize>) -> Result<()> {
        let mut done = 0;
        while !self.finished() && limit.is_none_or(|l| done < l) {
            self.step_rollout()?;
            done += 1;
        }
        Ok(())
    }
}

/// Keeps only the lines whose `step` does not exceed `step`.
fn truncate_log(path: &Path, step: u64) -> Result<()> {
    #[derive(Deserialize)]
    struct Step {
        step: u64,
    }
    if !path.exists() {
        return Ok(());
    }
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut kept = String::new();
    for line in BufReader::new(f).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        match serde_json::from_str::<Step>(&line) {
            Ok(s) if s.step <= step => {
                kept.push_str(&line);
                kept.push('\n');
            }
            _ => {}
        }
    }
    fs::write(path, kept).map_err(|e| Error::io(path, e))
}

/// Trains `config` from scratch to completion and returns its metrics.
pub fn run_three_phase(config: RunConfig, out: Option<PathBuf>) -> Result<MetricsReport> {
    let mut run = Run::new(config, out)?;
    run.run(None)?;
    Ok(run.metrics)
}
