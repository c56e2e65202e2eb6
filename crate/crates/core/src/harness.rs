//! Experiment protocol: the agent roster, validation runs, sequence
//! evaluation from random starts, confusion at best poses and feature export.

use std::io::Write;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::classify::{argmax, Classifier, ConfidenceModel, Evaluation};
use crate::env::{NbvEnv, Observation};
use crate::error::{Error, Result};
use crate::nn::Scalar;
use crate::render::{ImageSet, Split};
use crate::sac::{SacAgent, TrainLogRow};
use crate::scene::{sample_random_pose, Mode, Pose, WorkspaceBox};

/// Which classifier an agent is rewarded by.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ClassifierKind {
    /// Trained on object-only images.
    ObjectOnly,
    /// Robot-mode classifier fine-tuned from the object-only weights.
    FineTunedRobot,
}

impl std::fmt::Display for ClassifierKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ClassifierKind::ObjectOnly => "object-only",
            ClassifierKind::FineTunedRobot => "fine-tuned-robot",
        })
    }
}

impl FromStr for ClassifierKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "object-only" | "objects" => Ok(ClassifierKind::ObjectOnly),
            "fine-tuned-robot" | "pretrained-robot" => Ok(ClassifierKind::FineTunedRobot),
            other => Err(Error::domain(format!("unknown classifier kind `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AgentSpec {
    pub id: u32,
    pub classifier: ClassifierKind,
    pub mode: Mode,
    /// Agent whose weights initialize this one.
    pub pretrained: Option<u32>,
    pub steps_per_episode: usize,
}

/// Agents 1 to 5.
pub fn agent_roster() -> [AgentSpec; 5] {
    use ClassifierKind::*;
    let spec = |id, classifier, mode, pretrained, steps_per_episode| AgentSpec {
        id,
        classifier,
        mode,
        pretrained,
        steps_per_episode,
    };
    [
        spec(1, ObjectOnly, Mode::Robot, None, 100),
        spec(2, FineTunedRobot, Mode::Robot, None, 100),
        spec(3, ObjectOnly, Mode::Objects, None, 100),
        spec(4, ObjectOnly, Mode::Objects, None, 10),
        spec(5, FineTunedRobot, Mode::Robot, Some(4), 10),
    ]
}

pub fn agent_spec(id: u32) -> Result<AgentSpec> {
    agent_roster()
        .into_iter()
        .find(|a| a.id == id)
        .ok_or_else(|| Error::domain(format!("no agent {id} in the roster (1-5)")))
}

/// Maps the current observation to an action in the environment's box.
pub trait Policy: Sync {
    fn act(&self, obs: &Observation, bx: &WorkspaceBox) -> Result<Vec<f64>>;
}

/// Deterministic SAC policy (mean action).
impl<T: Scalar> Policy for SacAgent<T> {
    fn act(&self, obs: &Observation, bx: &WorkspaceBox) -> Result<Vec<f64>> {
        let enc = obs.encode(bx);
        if enc.len() != self.obs_dim() {
            return Err(Error::domain("agent observation size does not match the environment"));
        }
        Ok(self.to_box(&self.mean_actions(&enc)))
    }
}

/// Requests the current pose again.
#[derive(Clone, Copy, Debug, Default)]
pub struct HoldPolicy;

impl Policy for HoldPolicy {
    fn act(&self, obs: &Observation, _bx: &WorkspaceBox) -> Result<Vec<f64>> {
        Ok(obs.pose.to_array().to_vec())
    }
}

/// Per-object validation means and the number of environment steps taken.
#[derive(Clone, Debug, PartialEq)]
pub struct Validation {
    pub per_object: Vec<f64>,
    pub steps: usize,
}

impl Validation {
    pub fn mean(&self) -> f64 {
        self.per_object.iter().sum::<f64>() / self.per_object.len() as f64
    }
}

/// Deterministic-policy validation, seeded like the training loop's so that
/// an agent validated here reproduces its logged values.
pub fn run_validation<P: Policy + ?Sized, M: ConfidenceModel + Send>(
    policy: &P,
    env: &NbvEnv<M>,
    episodes_per_object: usize,
    seq_len: usize,
    seed: u64,
) -> Result<Validation> {
    let bx = env.config().workspace;
    let per: Vec<(f64, usize)> = (0..env.object_ids().len())
        .into_par_iter()
        .map(|task| {
            let mut env = env.clone();
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (task as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
            let (mut sum, mut count) = (0.0, 0usize);
            for _ in 0..episodes_per_object {
                let start = sample_random_pose(&mut rng, &bx);
                let mut obs = env.reset_at(task, &start)?;
                for _ in 0..seq_len {
                    let t = env.step(&policy.act(&obs, &bx)?)?;
                    sum += t.reward;
                    count += 1;
                    obs = t.next_observation;
                    if t.done {
                        break;
                    }
                }
            }
            Ok((if count == 0 { 0.0 } else { sum / count as f64 }, count))
        })
        .collect::<Result<_>>()?;
    Ok(Validation {
        per_object: per.iter().map(|p| p.0).collect(),
        steps: per.iter().map(|p| p.1).sum(),
    })
}

/// One evaluated start.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceRow {
    pub object_id: u32,
    pub task: usize,
    pub start_index: usize,
    pub start_pose: Pose,
    pub start: f64,
    /// Confidence difference after each action.
    pub values: Vec<f64>,
    pub best_pose: Pose,
    /// 1-based step of the first maximum.
    pub steps_to_best: usize,
}

impl SequenceRow {
    pub fn first(&self) -> f64 {
        self.values[0]
    }

    pub fn best(&self) -> f64 {
        self.values[self.steps_to_best - 1]
    }
}

/// Per-object means, in the column order of the exported table.
#[derive(Clone, Debug, PartialEq)]
pub struct ObjectSummary {
    pub object_id: u32,
    pub starts: usize,
    pub start: f64,
    pub first_abs: f64,
    pub first_change: f64,
    pub best_abs: f64,
    pub best_change: f64,
    pub steps: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SequenceResult {
    pub rows: Vec<SequenceRow>,
    pub per_object: Vec<ObjectSummary>,
    /// Unweighted mean over objects (`object_id` is 0).
    pub average: ObjectSummary,
}

fn summarize(object_id: u32, rows: &[&SequenceRow]) -> ObjectSummary {
    let n = rows.len().max(1) as f64;
    let mean = |f: &dyn Fn(&SequenceRow) -> f64| rows.iter().map(|r| f(r)).sum::<f64>() / n;
    let start = mean(&|r| r.start);
    let first_abs = mean(&|r| r.first());
    let best_abs = mean(&|r| r.best());
    ObjectSummary {
        object_id,
        starts: rows.len(),
        start,
        first_abs,
        first_change: first_abs - start,
        best_abs,
        best_change: best_abs - start,
        steps: mean(&|r| r.steps_to_best as f64),
    }
}

/// Runs `seq_len` deterministic-policy actions from `starts_per_object`
/// random starts per object. Start poses depend only on `seed`, the object's
/// roster index and the start index.
pub fn evaluate_sequences<P: Policy + ?Sized, M: ConfidenceModel + Send>(
    policy: &P,
    env: &NbvEnv<M>,
    starts_per_object: usize,
    seq_len: usize,
    seed: u64,
) -> Result<SequenceResult> {
    if seq_len == 0 || starts_per_object == 0 {
        return Err(Error::domain("sequence length and start count must be positive"));
    }
    if seq_len > env.config().steps_per_episode {
        return Err(Error::domain("sequence is longer than an episode"));
    }
    let bx = env.config().workspace;
    let ids = env.object_ids().to_vec();
    let pairs: Vec<(usize, usize)> = (0..ids.len())
        .flat_map(|t| (0..starts_per_object).map(move |s| (t, s)))
        .collect();
    let rows: Vec<SequenceRow> = pairs
        .par_iter()
        .map(|&(task, start_index)| {
            let mut env = env.clone();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(((task as u64) << 32) | start_index as u64);
            let start_pose = sample_random_pose(&mut rng, &bx);
            let mut obs = env.reset_at(task, &start_pose)?;
            let start = obs.confidence_difference;
            let start_pose = obs.pose;
            let mut values = Vec::with_capacity(seq_len);
            let mut best: Option<(f64, usize, Pose)> = None;
            for k in 1..=seq_len {
                let t = env.step(&policy.act(&obs, &bx)?)?;
                values.push(t.reward);
                if best.is_none_or(|(b, _, _)| t.reward > b) {
                    best = Some((t.reward, k, t.next_observation.pose));
                }
                obs = t.next_observation;
            }
            let (_, steps_to_best, best_pose) = best.expect("seq_len >= 1");
            Ok(SequenceRow {
                object_id: ids[task],
                task,
                start_index,
                start_pose,
                start,
                values,
                best_pose,
                steps_to_best,
            })
        })
        .collect::<Result<_>>()?;
    let per_object: Vec<ObjectSummary> = ids
        .iter()
        .enumerate()
        .map(|(task, &id)| summarize(id, &rows.iter().filter(|r| r.task == task).collect::<Vec<_>>()))
        .collect();
    let n = per_object.len() as f64;
    let avg = |f: fn(&ObjectSummary) -> f64| per_object.iter().map(f).sum::<f64>() / n;
    let average = ObjectSummary {
        object_id: 0,
        starts: rows.len(),
        start: avg(|s| s.start),
        first_abs: avg(|s| s.first_abs),
        first_change: avg(|s| s.first_change),
        best_abs: avg(|s| s.best_abs),
        best_change: avg(|s| s.best_change),
        steps: avg(|s| s.steps),
    };
    Ok(SequenceResult { rows, per_object, average })
}

/// Per-object table plus a final `mean` row.
pub fn write_sequence_csv<W: Write>(w: &mut W, result: &SequenceResult) -> std::io::Result<()> {
    writeln!(w, "object,start,first_abs,first_change,best_abs,best_change,steps")?;
    let line = |w: &mut W, name: String, s: &ObjectSummary| {
        writeln!(
            w,
            "{name},{},{},{},{},{},{}",
            s.start, s.first_abs, s.first_change, s.best_abs, s.best_change, s.steps
        )
    };
    for s in &result.per_object {
        line(w, s.object_id.to_string(), s)?;
    }
    line(w, "mean".into(), &result.average)
}

/// Every evaluated start with its full value sequence.
pub fn write_sequence_rows_csv<W: Write>(w: &mut W, result: &SequenceResult) -> std::io::Result<()> {
    let len = result.rows.first().map_or(0, |r| r.values.len());
    let cols: Vec<String> = (1..=len).map(|k| format!("v{k}")).collect();
    writeln!(w, "object,start_index,start,{},steps_to_best", cols.join(","))?;
    for r in &result.rows {
        let vals: Vec<String> = r.values.iter().map(|v| v.to_string()).collect();
        writeln!(w, "{},{},{},{},{}", r.object_id, r.start_index, r.start, vals.join(","), r.steps_to_best)?;
    }
    Ok(())
}

fn confusion_at<M: ConfidenceModel + Send>(
    result: &SequenceResult,
    env: &NbvEnv<M>,
    pose: fn(&SequenceRow) -> &Pose,
) -> Result<Evaluation> {
    let pairs: Vec<(usize, usize)> = result
        .rows
        .par_iter()
        .map(|r| {
            let conf = env.model().confidences(&env.render(r.task, pose(r)))?;
            Ok((r.task, argmax(&conf)))
        })
        .collect::<Result<_>>()?;
    Ok(Evaluation::from_pairs(env.object_ids().len(), &pairs))
}

/// Classification of every row's best pose.
pub fn confusion_at_best<M: ConfidenceModel + Send>(result: &SequenceResult, env: &NbvEnv<M>) -> Result<Evaluation> {
    confusion_at(result, env, |r| &r.best_pose)
}

/// Classification of every row's start pose.
pub fn confusion_at_start<M: ConfidenceModel + Send>(result: &SequenceResult, env: &NbvEnv<M>) -> Result<Evaluation> {
    confusion_at(result, env, |r| &r.start_pose)
}

/// Penultimate features of every image in `split`, one CSV row each:
/// object id, pose index, pose, then the feature values.
pub fn export_features<T: Scalar, W: Write>(
    model: &Classifier<T>,
    set: &ImageSet,
    split: Split,
    w: &mut W,
) -> Result<usize> {
    let idx = set.manifest.indices(split);
    let feats: Vec<Vec<f64>> = idx
        .par_iter()
        .map(|&i| model.extract_features(&set.images[i]))
        .collect::<Result<_>>()?;
    let dim = model.config().feature_dim();
    let io = |e| Error::io("feature export", e);
    let cols: Vec<String> = (0..dim).map(|k| format!("f{k}")).collect();
    writeln!(w, "object_id,pose_index,x,y,z,qw,qx,qy,qz,{}", cols.join(",")).map_err(io)?;
    for (&i, f) in idx.iter().zip(&feats) {
        let rec = &set.manifest.records[i];
        let pose: Vec<String> = rec.pose.to_array().iter().map(|v| v.to_string()).collect();
        let vals: Vec<String> = f.iter().map(|v| v.to_string()).collect();
        writeln!(w, "{},{},{},{}", rec.object_id, rec.pose_index, pose.join(","), vals.join(",")).map_err(io)?;
    }
    Ok(idx.len())
}

/// Validation curve: step, mean, then one column per object.
pub fn write_validation_curve<W: Write>(w: &mut W, object_ids: &[u32], rows: &[TrainLogRow]) -> std::io::Result<()> {
    let cols: Vec<String> = object_ids.iter().map(|id| format!("object_{id}")).collect();
    writeln!(w, "step,mean,{}", cols.join(","))?;
    for r in rows {
        let vals: Vec<String> = r.per_task.iter().map(|v| v.to_string()).collect();
        writeln!(w, "{},{},{}", r.step, r.validation_mean, vals.join(","))?;
    }
    Ok(())
}
