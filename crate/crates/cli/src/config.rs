//! `section.key = value` run configuration with declared defaults.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use nbvlab_core::classify::ClassifierConfig;
use nbvlab_core::env::EnvConfig;
use nbvlab_core::render::Camera;
use nbvlab_core::sac::{SacConfig, Schedule};
use nbvlab_core::scene::{GripperSpec, Mode, Vec3, WorkspaceBox};

/// Every accepted key and its default. An empty default means "unset".
const KEYS: &[(&str, &str)] = &[
    ("scene.objects", "1,2,3,4,5,6"),
    ("camera.position", "0.003,0.23,0.53"),
    ("camera.forward", "0,-1,0"),
    ("camera.up", "0,0,1"),
    ("camera.vfov_deg", "60"),
    ("camera.width", "64"),
    ("camera.height", "64"),
    ("workspace.min", "-0.2,-0.35,0.33"),
    ("workspace.max", "0.2,-0.05,0.73"),
    ("workspace.max_reach", "0.9"),
    ("dataset.mode", "objects"),
    ("dataset.n_poses", "2000"),
    ("dataset.seed", "1"),
    ("dataset.dir", ""),
    ("classifier.groups", "3,3,4,4"),
    ("classifier.widths", "16,32,64,128"),
    ("classifier.lr", "0.001"),
    ("classifier.batch_size", "32"),
    ("classifier.epochs", "10"),
    ("classifier.seed", "1"),
    ("classifier.init", ""),
    ("classifier.checkpoint", ""),
    ("agent.id", ""),
    ("env.mode", "objects"),
    ("env.steps_per_episode", "10"),
    ("env.seed", "1"),
    ("sac.batch_size", "256"),
    ("sac.tau", "0.005"),
    ("sac.gamma", "0.99"),
    ("sac.actor_lr", "0.0003"),
    ("sac.critic_lr", "0.0003"),
    ("sac.alpha_lr", "0.0003"),
    ("sac.buffer_capacity", "100000"),
    ("sac.learning_starts_per_object", "1000"),
    ("sac.hidden", "256,256"),
    ("sac.seed", "1"),
    ("sac.init", ""),
    ("schedule.total_steps", "90000"),
    ("schedule.validation_interval", "1800"),
    ("schedule.episodes_per_object", "5"),
    ("schedule.seq_len", "10"),
    ("schedule.validation_seed", "2047990398"),
    ("evaluate.agent", ""),
    ("evaluate.starts_per_object", "200"),
    ("evaluate.seq_len", "10"),
    ("evaluate.seed", "1"),
    ("evaluate.features_dataset", ""),
    ("occlusion.objects", "1,2,3,4,5,6,7,8,9,10,11,12"),
    ("occlusion.views", "768"),
    ("occlusion.samples", "20000"),
    ("occlusion.seed", "1"),
];

/// Sections a run summary adds; accepted and ignored on input so that a
/// summary can be fed back as a config.
const INFO_SECTIONS: &[&str] = &["run.", "result."];

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

type Res<T> = Result<T, ConfigError>;

fn err<T>(msg: impl Into<String>) -> Res<T> {
    Err(ConfigError(msg.into()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            values: KEYS.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Res<Self> {
        let mut cfg = RunConfig::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return err(format!("line {}: expected `section.key = value`", n + 1));
            };
            let (k, v) = (k.trim(), v.trim());
            if INFO_SECTIONS.iter().any(|s| k.starts_with(s)) {
                continue;
            }
            cfg.set(k, v).map_err(|e| ConfigError(format!("line {}: {e}", n + 1)))?;
        }
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Res<()> {
        match self.values.get_mut(key) {
            Some(slot) => {
                *slot = value.to_string();
                Ok(())
            }
            None => err(format!("unknown key `{key}`")),
        }
    }

    /// Applies `key=value` where the key names a seed.
    pub fn override_seed(&mut self, spec: &str) -> Res<()> {
        let Some((k, v)) = spec.split_once('=') else {
            return err(format!("seed override `{spec}` is not `key=value`"));
        };
        let k = k.trim();
        let k = if k.contains('.') { k.to_string() } else { format!("{k}.seed") };
        if !k.ends_with("seed") {
            return err(format!("`{k}` is not a seed key"));
        }
        v.trim().parse::<u64>().map_err(|_| ConfigError(format!("seed `{v}` is not an unsigned integer")))?;
        self.set(&k, v.trim())
    }

    /// The resolved configuration, one `key = value` per line.
    pub fn to_text(&self) -> String {
        self.values.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn raw(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or("")
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Res<T> {
        self.raw(key)
            .parse()
            .map_err(|_| ConfigError(format!("`{key}`: cannot parse `{}`", self.raw(key))))
    }

    pub fn list<T: FromStr>(&self, key: &str) -> Res<Vec<T>> {
        self.raw(key)
            .split(',')
            .map(|s| s.trim().parse().map_err(|_| ConfigError(format!("`{key}`: bad entry `{s}`"))))
            .collect()
    }

    pub fn path(&self, key: &str) -> Option<PathBuf> {
        let v = self.raw(key);
        (!v.is_empty()).then(|| PathBuf::from(v))
    }

    fn vec3(&self, key: &str) -> Res<Vec3> {
        let v: Vec<f64> = self.list(key)?;
        if v.len() != 3 {
            return err(format!("`{key}` needs three numbers"));
        }
        Ok(Vec3::new(v[0], v[1], v[2]))
    }

    fn mode(&self, key: &str) -> Res<Mode> {
        self.raw(key).parse().map_err(|e: nbvlab_core::Error| ConfigError(format!("`{key}`: {e}")))
    }

    pub fn objects(&self) -> Res<Vec<u32>> {
        self.list("scene.objects")
    }

    pub fn camera(&self) -> Res<Camera> {
        Camera::new(
            self.vec3("camera.position")?,
            self.vec3("camera.forward")?,
            self.vec3("camera.up")?,
            self.get::<f64>("camera.vfov_deg")?.to_radians(),
            self.get("camera.width")?,
            self.get("camera.height")?,
        )
        .map_err(|e| ConfigError(format!("camera: {e}")))
    }

    pub fn workspace(&self) -> Res<WorkspaceBox> {
        let bx = WorkspaceBox {
            min_corner: self.vec3("workspace.min")?,
            max_corner: self.vec3("workspace.max")?,
            max_reach: self.get("workspace.max_reach")?,
        };
        bx.validate().map_err(|e| ConfigError(format!("workspace: {e}")))?;
        Ok(bx)
    }

    pub fn dataset_mode(&self) -> Res<Mode> {
        self.mode("dataset.mode")
    }

    pub fn classifier(&self) -> Res<ClassifierConfig> {
        let cam = self.camera()?;
        if cam.width != cam.height {
            return err("the classifier needs square images");
        }
        let cfg = ClassifierConfig {
            groups: self.list("classifier.groups")?,
            widths: self.list("classifier.widths")?,
            n_classes: self.objects()?.len(),
            input: cam.width,
            lr: self.get("classifier.lr")?,
            batch_size: self.get("classifier.batch_size")?,
            epochs: self.get("classifier.epochs")?,
            seed: self.get("classifier.seed")?,
            ..ClassifierConfig::default()
        };
        cfg.validate().map_err(|e| ConfigError(format!("classifier: {e}")))?;
        Ok(cfg)
    }

    /// Agent row from the roster, if `agent.id` is set.
    pub fn agent(&self) -> Res<Option<nbvlab_core::harness::AgentSpec>> {
        if self.raw("agent.id").is_empty() {
            return Ok(None);
        }
        let id: u32 = self.get("agent.id")?;
        nbvlab_core::harness::agent_spec(id)
            .map(Some)
            .map_err(|e| ConfigError(e.to_string()))
    }

    /// Environment settings; an `agent.id` overrides mode and episode length.
    pub fn env(&self) -> Res<EnvConfig> {
        let (mode, steps) = match self.agent()? {
            Some(a) => (a.mode, a.steps_per_episode),
            None => (self.mode("env.mode")?, self.get("env.steps_per_episode")?),
        };
        let cfg = EnvConfig {
            mode,
            workspace: self.workspace()?,
            steps_per_episode: steps,
            camera: self.camera()?,
            gripper: GripperSpec::default(),
            seed: self.get("env.seed")?,
        };
        cfg.validate().map_err(|e| ConfigError(format!("env: {e}")))?;
        Ok(cfg)
    }

    pub fn sac(&self) -> Res<SacConfig> {
        let cfg = SacConfig {
            batch_size: self.get("sac.batch_size")?,
            tau: self.get("sac.tau")?,
            gamma: self.get("sac.gamma")?,
            actor_lr: self.get("sac.actor_lr")?,
            critic_lr: self.get("sac.critic_lr")?,
            alpha_lr: self.get("sac.alpha_lr")?,
            buffer_capacity: self.get("sac.buffer_capacity")?,
            learning_starts_per_task: self.get("sac.learning_starts_per_object")?,
            hidden: self.list("sac.hidden")?,
            seed: self.get("sac.seed")?,
            ..SacConfig::default()
        };
        cfg.validate().map_err(|e| ConfigError(format!("sac: {e}")))?;
        Ok(cfg)
    }

    pub fn schedule(&self) -> Res<Schedule> {
        let s = Schedule {
            total_steps: self.get("schedule.total_steps")?,
            validation_interval: self.get("schedule.validation_interval")?,
            episodes_per_task: self.get("schedule.episodes_per_object")?,
            seq_len: self.get("schedule.seq_len")?,
            validation_seed: self.get("schedule.validation_seed")?,
        };
        if s.validation_interval == 0 || s.seq_len == 0 {
            return err("schedule: validation interval and sequence length must be positive");
        }
        Ok(s)
    }

    /// Parses every section; used by `validate-config`.
    pub fn check_all(&self) -> Res<()> {
        let ids = self.objects()?;
        if ids.is_empty() {
            return err("scene.objects is empty");
        }
        self.dataset_mode()?;
        self.get::<usize>("dataset.n_poses")?;
        self.get::<u64>("dataset.seed")?;
        self.classifier()?;
        self.env()?;
        self.sac()?;
        self.schedule()?;
        self.get::<usize>("evaluate.starts_per_object")?;
        self.get::<usize>("evaluate.seq_len")?;
        self.get::<u64>("evaluate.seed")?;
        self.list::<u32>("occlusion.objects")?;
        self.get::<usize>("occlusion.views")?;
        self.get::<usize>("occlusion.samples")?;
        self.get::<u64>("occlusion.seed")?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        RunConfig::default().check_all().unwrap();
    }

    #[test]
    fn parse_overrides_and_rejects_unknown_keys() {
        let c = RunConfig::parse("# comment\n\ndataset.n_poses = 30\nrun.subcommand = x\n").unwrap();
        assert_eq!(c.get::<usize>("dataset.n_poses").unwrap(), 30);
        assert!(RunConfig::parse("dataset.nposes = 3").is_err());
        assert!(RunConfig::parse("just text").is_err());
    }

    #[test]
    fn text_roundtrip() {
        let mut c = RunConfig::default();
        c.set("sac.hidden", "64,64").unwrap();
        assert_eq!(RunConfig::parse(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn seed_overrides() {
        let mut c = RunConfig::default();
        c.override_seed("dataset=7").unwrap();
        c.override_seed("sac.seed=9").unwrap();
        assert_eq!(c.raw("dataset.seed"), "7");
        assert_eq!(c.raw("sac.seed"), "9");
        assert!(c.override_seed("sac.tau=1").is_err());
        assert!(c.override_seed("dataset=x").is_err());
    }

    #[test]
    fn agent_row_sets_env() {
        let c = RunConfig::parse("agent.id = 3").unwrap();
        let e = c.env().unwrap();
        assert_eq!(e.steps_per_episode, 100);
        assert_eq!(e.mode, Mode::Objects);
    }
}
