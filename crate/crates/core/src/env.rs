//! The next-best-view environment: the agent requests an object pose, the
//! scene is rendered at the reached pose and classified, and the reward is the
//! target's confidence difference.

use std::io::Write;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::classify::{confidence_difference, ConfidenceModel};
use crate::error::{Error, Result};
use crate::render::{rasterize, Camera, Image};
use crate::sac::{Environment, StepOutcome};
use crate::scene::{
    clamp_to_box, clamp_to_reachable, sample_random_pose, scene_for_mode, GripperSpec, Mode, ObjectMesh, Pose,
    SceneModel, Vec3, WorkspaceBox,
};

pub const OBS_DIM: usize = 8;
pub const ACTION_DIM: usize = 7;

#[derive(Clone, Debug, PartialEq)]
pub struct EnvConfig {
    pub mode: Mode,
    pub workspace: WorkspaceBox,
    pub steps_per_episode: usize,
    pub camera: Camera,
    pub gripper: GripperSpec,
    pub seed: u64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            mode: Mode::Objects,
            workspace: WorkspaceBox::default(),
            steps_per_episode: 10,
            camera: Camera::default(),
            gripper: GripperSpec::default(),
            seed: 1,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps_per_episode == 0 {
            return Err(Error::domain("steps per episode must be at least 1"));
        }
        self.workspace.validate()?;
        self.camera.validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Observation {
    /// The reached pose.
    pub pose: Pose,
    pub confidence_difference: f64,
}

impl Observation {
    pub fn encode(&self, bx: &WorkspaceBox) -> [f64; OBS_DIM] {
        encode_observation(&self.pose, self.confidence_difference, bx)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub observation: Observation,
    pub action: [f64; ACTION_DIM],
    pub reward: f64,
    pub next_observation: Observation,
    pub done: bool,
}

/// `[x, y, z, qw, qx, qy, qz, c_diff]` with the position mapped from the box
/// onto `[-1, 1]` per axis (zero-extent axes map to 0).
pub fn encode_observation(pose: &Pose, c_diff: f64, bx: &WorkspaceBox) -> [f64; OBS_DIM] {
    let q = pose.wxyz();
    let mut v = [0.0; OBS_DIM];
    for i in 0..3 {
        let (lo, hi) = (bx.min_corner[i], bx.max_corner[i]);
        v[i] = if hi > lo { 2.0 * (pose.position[i] - lo) / (hi - lo) - 1.0 } else { 0.0 };
    }
    v[3..7].copy_from_slice(&q);
    v[7] = c_diff;
    v
}

pub fn decode_observation(v: &[f64; OBS_DIM], bx: &WorkspaceBox) -> (Pose, f64) {
    let position = Vec3::from_fn(|i, _| {
        let (lo, hi) = (bx.min_corner[i], bx.max_corner[i]);
        lo + (v[i] + 1.0) / 2.0 * (hi - lo)
    });
    (Pose::raw(position, [v[3], v[4], v[5], v[6]]), v[7])
}

/// One exported trace row.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow {
    pub step: usize,
    pub requested: [f64; ACTION_DIM],
    pub reached: Pose,
    pub reward: f64,
}

pub fn write_trace_csv<W: Write>(w: &mut W, rows: &[TraceRow]) -> std::io::Result<()> {
    writeln!(
        w,
        "step,req_x,req_y,req_z,req_qw,req_qx,req_qy,req_qz,x,y,z,qw,qx,qy,qz,reward"
    )?;
    for r in rows {
        let req: Vec<String> = r.requested.iter().map(|v| v.to_string()).collect();
        let reached: Vec<String> = r.reached.to_array().iter().map(|v| v.to_string()).collect();
        writeln!(w, "{},{},{},{}", r.step, req.join(","), reached.join(","), r.reward)?;
    }
    Ok(())
}

#[derive(Clone, Debug)]
struct Episode {
    task: usize,
    current: Observation,
    step: usize,
    trace: Vec<TraceRow>,
}

/// A single-threaded environment over a roster of objects sharing one frozen
/// classifier. Clones share the classifier and scenes.
pub struct NbvEnv<M> {
    config: EnvConfig,
    model: Arc<M>,
    ids: Vec<u32>,
    scenes: Arc<Vec<SceneModel>>,
    episode: Option<Episode>,
}

impl<M> Clone for NbvEnv<M> {
    fn clone(&self) -> Self {
        NbvEnv {
            config: self.config.clone(),
            model: Arc::clone(&self.model),
            ids: self.ids.clone(),
            scenes: Arc::clone(&self.scenes),
            episode: self.episode.clone(),
        }
    }
}

impl<M: ConfidenceModel> NbvEnv<M> {
    /// `objects[i]` is class `i` of the classifier.
    pub fn new(config: EnvConfig, model: Arc<M>, objects: &[(u32, ObjectMesh)]) -> Result<Self> {
        config.validate()?;
        if objects.len() != model.n_classes() {
            return Err(Error::domain(format!(
                "roster has {} objects, classifier {} classes",
                objects.len(),
                model.n_classes()
            )));
        }
        let scenes = objects
            .iter()
            .map(|(_, m)| scene_for_mode(m, config.mode, &config.gripper))
            .collect();
        Ok(NbvEnv {
            ids: objects.iter().map(|(id, _)| *id).collect(),
            scenes: Arc::new(scenes),
            config,
            model,
            episode: None,
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn model(&self) -> &Arc<M> {
        &self.model
    }

    pub fn object_ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn class_of(&self, object_id: u32) -> Result<usize> {
        self.ids
            .iter()
            .position(|&i| i == object_id)
            .ok_or_else(|| Error::domain(format!("object {object_id} is not in the roster")))
    }

    /// Current observation, if an episode has started.
    pub fn current(&self) -> Option<Observation> {
        self.episode.as_ref().map(|e| e.current)
    }

    pub fn step_index(&self) -> usize {
        self.episode.as_ref().map_or(0, |e| e.step)
    }

    pub fn is_done(&self) -> bool {
        self.episode.as_ref().is_some_and(|e| e.step >= self.config.steps_per_episode)
    }

    /// Rows of the current (or last) episode.
    pub fn trace(&self) -> &[TraceRow] {
        self.episode.as_ref().map_or(&[], |e| &e.trace)
    }

    /// The pose the mode's constraints allow for a request.
    pub fn reach(&self, requested: &Pose) -> Result<Pose> {
        match self.config.mode {
            Mode::Robot => clamp_to_reachable(requested, &self.config.workspace),
            Mode::Objects => clamp_to_box(requested, &self.config.workspace),
        }
    }

    pub fn render(&self, task: usize, pose: &Pose) -> Image {
        rasterize(&self.scenes[task], pose, &self.config.camera)
    }

    /// Confidence difference of `task` seen at an already reached pose.
    pub fn score(&self, task: usize, pose: &Pose) -> Result<f64> {
        let conf = self.model.confidences(&self.render(task, pose))?;
        confidence_difference(&conf, task)
    }

    /// Starts an episode for `object_id` at a random clamped pose.
    pub fn reset<R: Rng + ?Sized>(&mut self, object_id: u32, rng: &mut R) -> Result<Observation> {
        let task = self.class_of(object_id)?;
        let start = sample_random_pose(rng, &self.config.workspace);
        self.reset_at(task, &start)
    }

    /// Starts an episode for class `task` at the clamped `start` pose.
    pub fn reset_at(&mut self, task: usize, start: &Pose) -> Result<Observation> {
        if task >= self.ids.len() {
            return Err(Error::domain(format!("task {task} out of range")));
        }
        let pose = self.reach(start)?;
        let current = Observation {
            pose,
            confidence_difference: self.score(task, &pose)?,
        };
        self.episode = Some(Episode {
            task,
            current,
            step: 0,
            trace: Vec::with_capacity(self.config.steps_per_episode),
        });
        Ok(current)
    }

    pub fn step(&mut self, action: &[f64]) -> Result<Transition> {
        if action.len() != ACTION_DIM {
            return Err(Error::domain(format!("action must have {ACTION_DIM} numbers, got {}", action.len())));
        }
        let limit = self.config.steps_per_episode;
        let Some(ep) = self.episode.as_ref() else {
            return Err(Error::protocol("step before reset"));
        };
        if ep.step >= limit {
            return Err(Error::protocol("step after the episode is done"));
        }
        let task = ep.task;
        let requested: [f64; ACTION_DIM] = action.try_into().expect("length checked");
        let reached = self.reach(&Pose::raw(
            Vec3::new(requested[0], requested[1], requested[2]),
            [requested[3], requested[4], requested[5], requested[6]],
        ))?;
        let reward = self.score(task, &reached)?;
        let next = Observation {
            pose: reached,
            confidence_difference: reward,
        };
        let ep = self.episode.as_mut().expect("episode checked");
        let prev = ep.current;
        ep.step += 1;
        ep.current = next;
        ep.trace.push(TraceRow {
            step: ep.step,
            requested,
            reached,
            reward,
        });
        Ok(Transition {
            observation: prev,
            action: requested,
            reward,
            next_observation: next,
            done: ep.step == limit,
        })
    }
}

impl<M: ConfidenceModel + Send> Environment for NbvEnv<M> {
    fn obs_dim(&self) -> usize {
        OBS_DIM
    }

    fn action_low(&self) -> Vec<f64> {
        let m = self.config.workspace.min_corner;
        vec![m.x, m.y, m.z, -1.0, -1.0, -1.0, -1.0]
    }

    fn action_high(&self) -> Vec<f64> {
        let m = self.config.workspace.max_corner;
        vec![m.x, m.y, m.z, 1.0, 1.0, 1.0, 1.0]
    }

    fn n_tasks(&self) -> usize {
        self.ids.len()
    }

    fn reset_task(&mut self, task: usize, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
        let start = sample_random_pose(rng, &self.config.workspace);
        let obs = self.reset_at(task, &start)?;
        Ok(obs.encode(&self.config.workspace).to_vec())
    }

    /// Every episode ends on the step budget, which is a time limit, so
    /// `terminal` is always false.
    fn step_action(&mut self, action: &[f64]) -> Result<StepOutcome> {
        let t = self.step(action)?;
        Ok(StepOutcome {
            obs: t.next_observation.encode(&self.config.workspace).to_vec(),
            reward: t.reward,
            done: t.done,
            terminal: false,
        })
    }

    fn random_action(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        sample_random_pose(rng, &self.config.workspace).to_array().to_vec()
    }
}
