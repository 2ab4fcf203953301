use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use super::{CheckpointPolicy, HopAgent, TrustedStateSet};
use crate::envs::{LevelSpec, OBS_DIM};
use crate::error::{contract, Error, Result};
use crate::ppo::{act_with_logits, run_episodes, ActionChoice, ActivationRecord, ActorCritic, EpisodeTrace};
use crate::tensor::{Mlp, Parameterized, Tensor};
use crate::RunRng;

/// What one checkpoint attempt did.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointReport {
    pub step: u64,
    /// Orchestra position of the new checkpoint, if one was kept.
    pub index: Option<usize>,
    pub episode_returns: Vec<f64>,
    pub successes: usize,
    pub harvested: u64,
    pub stored: usize,
}

/// Generator for the checkpoint taken at `step`, independent of training.
pub fn checkpoint_rng(seed: u64, step: u64) -> RunRng {
    let mut r = RunRng::seed_from_u64(seed ^ 0xC4EC_7017_0000_0000);
    r.set_stream(step);
    r
}

/// The frozen learner acting alone.
struct Snapshot<'a>(&'a Mlp);

impl ActorCritic for Snapshot<'_> {
    fn act(&mut self, obs: &Tensor, rng: &mut RunRng) -> Result<Vec<ActionChoice>> {
        act_with_logits(&self.0.forward(obs)?, vec![ActivationRecord::default(); obs.rows()], rng)
    }

    fn values(&self, obs: &Tensor) -> Result<Vec<f64>> {
        Ok(vec![0.0; obs.rows()])
    }
}

/// Trusted set built from every acted-on state of episodes returning more
/// than `reward_limit`.
pub fn harvest(traces: &[EpisodeTrace], reward_limit: f64, cap: usize, rng: &mut RunRng) -> Result<TrustedStateSet> {
    let mut trusted = TrustedStateSet::new(OBS_DIM, cap);
    for t in traces.iter().filter(|t| t.raw_return > reward_limit) {
        for o in &t.observations {
            trusted.offer(&o.0, t.raw_return, rng)?;
        }
    }
    Ok(trusted)
}

/// Freezes the learner's actor, evaluates it afresh on `levels`, and keeps it
/// as a checkpoint if any episode returned more than the reward limit. The
/// states those episodes acted from become its trusted set.
pub fn checkpoint_now(
    agent: &mut HopAgent,
    levels: &[LevelSpec],
    max_ep_length: usize,
    step: u64,
    rng: &mut RunRng,
) -> Result<CheckpointReport> {
    let cfg = agent.config.clone();
    let snapshot = agent.orchestra.learner.clone();
    let traces = run_episodes(&mut Snapshot(&snapshot), levels, cfg.checkpoint_eval_episodes, max_ep_length, true, rng)?;
    let trusted = harvest(&traces, cfg.reward_limit, cfg.trusted_cap, rng)?;
    let successes = traces.iter().filter(|t| t.raw_return > cfg.reward_limit).count();
    let mut report = CheckpointReport {
        step,
        index: None,
        episode_returns: traces.iter().map(|t| t.raw_return).collect(),
        successes,
        harvested: trusted.offered(),
        stored: trusted.len(),
    };
    if trusted.is_empty() {
        log::info!("step {step}: no evaluation episode exceeded {}, checkpoint discarded", cfg.reward_limit);
        return Ok(report);
    }
    let index = agent.orchestra.checkpoints.len();
    agent.orchestra.checkpoints.push(CheckpointPolicy {
        index,
        created_step: step,
        actor: snapshot,
        trusted,
        omega: cfg.min_similarity_score,
        reward_limit: cfg.reward_limit,
    });
    report.index = Some(index);
    Ok(report)
}

#[derive(Debug, Serialize, Deserialize)]
struct BundleManifest {
    index: usize,
    created_step: u64,
    size: usize,
    dim: usize,
    cap: usize,
    offered: u64,
    omega: f64,
    reward_limit: f64,
    layer_sizes: Vec<usize>,
    norms: Vec<f64>,
    source_returns: Vec<f64>,
}

fn bundle_dir(root: &Path, index: usize) -> PathBuf {
    root.join(format!("ckpt_{index:04}"))
}

/// Writes `root/ckpt_NNNN/{manifest.json, actor.bin, actor.json, trusted.bin}`.
pub fn save_bundle(root: &Path, c: &CheckpointPolicy) -> Result<()> {
    let dir = bundle_dir(root, c.index);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    c.actor.to_store("").save(&dir, "actor")?;
    let rows: Vec<u8> = c.trusted.to_row_major().iter().flat_map(|v| v.to_le_bytes()).collect();
    let bin = dir.join("trusted.bin");
    fs::write(&bin, rows).map_err(|e| Error::io(&bin, e))?;
    let mut layer_sizes = vec![c.actor.input_dim()];
    layer_sizes.extend(c.actor.layers.iter().map(|l| l.output_dim()));
    let manifest = BundleManifest {
        index: c.index,
        created_step: c.created_step,
        size: c.trusted.len(),
        dim: c.trusted.dim(),
        cap: c.trusted.cap(),
        offered: c.trusted.offered(),
        omega: c.omega,
        reward_limit: c.reward_limit,
        layer_sizes,
        norms: c.trusted.norms().to_vec(),
        source_returns: c.trusted.sources().to_vec(),
    };
    let path = dir.join("manifest.json");
    fs::write(&path, serde_json::to_vec_pretty(&manifest)?).map_err(|e| Error::io(&path, e))
}

/// Reads a bundle written by [`save_bundle`]; `template` supplies the actor's
/// activation and layer shapes.
pub fn load_bundle(root: &Path, index: usize, template: &Mlp) -> Result<CheckpointPolicy> {
    let dir = bundle_dir(root, index);
    let path = dir.join("manifest.json");
    let m: BundleManifest = serde_json::from_slice(&fs::read(&path).map_err(|e| Error::io(&path, e))?)?;
    contract!(m.index == index, "bundle {} holds checkpoint {}", dir.display(), m.index);
    let mut actor = template.clone();
    actor.load_from("", &crate::tensor::TensorStore::load(&dir, "actor")?)?;
    let bin = dir.join("trusted.bin");
    let bytes = fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
    contract!(bytes.len() == m.size * m.dim * 8, "trusted.bin has {} bytes", bytes.len());
    let rows: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let trusted = TrustedStateSet::from_row_major(m.dim, m.cap, &rows, m.norms, m.source_returns, m.offered)?;
    Ok(CheckpointPolicy {
        index,
        created_step: m.created_step,
        actor,
        trusted,
        omega: m.omega,
        reward_limit: m.reward_limit,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{Family, Observation};
    use crate::hop::HopConfig;

    fn trace(ret: f64, n: usize) -> EpisodeTrace {
        EpisodeTrace {
            level: LevelSpec::new(Family::Runner, 1),
            raw_return: ret,
            steps: n,
            observations: (0..n)
                .map(|i| {
                    let mut v = vec![0.0; OBS_DIM];
                    v[i] = 1.0;
                    v[OBS_DIM - 1] = 1.0;
                    Observation(v)
                })
                .collect(),
        }
    }

    #[test]
    fn harvest_applies_threshold() {
        let mut rng = RunRng::seed_from_u64(0);
        let set = harvest(&[trace(7.5, 5), trace(3.0, 4)], 7.5, 4096, &mut rng).unwrap();
        assert!(set.is_empty());
        let set = harvest(&[trace(10.0, 20), trace(7.5, 6)], 7.5, 4096, &mut rng).unwrap();
        assert_eq!(set.len(), 20);
        for i in 0..20 {
            let n: f64 = set.unit_row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-12);
        }
        assert!(set.sources().iter().all(|&r| r > 7.5));
    }

    #[test]
    fn failed_evaluation_adds_no_checkpoint() {
        let mut rng = RunRng::seed_from_u64(1);
        let mut agent = HopAgent::new(16, HopConfig::default(), &mut rng);
        let before = agent.clone();
        // One-step episodes can never reach a goal.
        let levels = LevelSpec::range(Family::Runner, 1, 2);
        let r = checkpoint_now(&mut agent, &levels, 1, 100, &mut checkpoint_rng(0, 100)).unwrap();
        assert_eq!(r.index, None);
        assert_eq!(r.successes, 0);
        assert_eq!(agent, before);
    }

    #[test]
    fn checkpoint_leaves_learner_untouched() {
        let mut rng = RunRng::seed_from_u64(2);
        let mut agent = HopAgent::new(16, HopConfig { reward_limit: -1.0, ..HopConfig::default() }, &mut rng);
        let (learner, critic) = (agent.orchestra.learner.clone(), agent.critic.clone());
        let levels = LevelSpec::range(Family::Runner, 1, 2);
        let r = checkpoint_now(&mut agent, &levels, 10, 100, &mut checkpoint_rng(0, 100)).unwrap();
        assert_eq!(r.index, Some(0));
        assert_eq!(agent.orchestra.learner, learner);
        assert_eq!(agent.critic, critic);
        assert_eq!(agent.orchestra.checkpoints[0].actor, learner);
        assert_eq!(r.stored, 10 * 10);
    }

    #[test]
    fn bundle_round_trip() {
        let mut rng = RunRng::seed_from_u64(3);
        let mut agent = HopAgent::new(8, HopConfig { reward_limit: -1.0, trusted_cap: 7, ..HopConfig::default() }, &mut rng);
        let levels = LevelSpec::range(Family::Dodger, 1, 2);
        checkpoint_now(&mut agent, &levels, 5, 4096, &mut checkpoint_rng(1, 4096)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let c = &agent.orchestra.checkpoints[0];
        save_bundle(dir.path(), c).unwrap();
        assert!(dir.path().join("ckpt_0000/trusted.bin").exists());
        let back = load_bundle(dir.path(), 0, &agent.orchestra.learner).unwrap();
        assert_eq!(&back, c);
    }

    #[test]
    fn checkpoint_streams_differ_by_step() {
        use rand::RngCore;
        assert_ne!(checkpoint_rng(1, 10).next_u64(), checkpoint_rng(1, 20).next_u64());
        assert_eq!(checkpoint_rng(1, 10).next_u64(), checkpoint_rng(1, 10).next_u64());
    }
}
