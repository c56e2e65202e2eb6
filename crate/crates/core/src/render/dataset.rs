use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{rasterize, Camera, Image};
use crate::error::{Error, Result};
use crate::scene::{
    clamp_to_box, clamp_to_reachable, sample_random_pose, scene_for_mode, GripperSpec, Mode, ObjectMesh, Pose,
    WorkspaceBox,
};

pub const MANIFEST_FILE: &str = "manifest.txt";
const MANIFEST_MAGIC: &str = "# nbvlab image-set manifest v1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::domain(format!("unknown split `{other}`"))),
        }
    }
}

/// `(train, val, test)` pose counts for an 80/10/10 split.
pub fn split_counts(n_poses: usize) -> (usize, usize, usize) {
    let val = (n_poses as f64 * 0.1).round() as usize;
    (n_poses - 2 * val, val, val)
}

fn split_of(pose_index: usize, n_poses: usize) -> Split {
    let (train, val, _) = split_counts(n_poses);
    if pose_index < train {
        Split::Train
    } else if pose_index < train + val {
        Split::Val
    } else {
        Split::Test
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestRecord {
    pub object_id: u32,
    pub pose_index: usize,
    pub pose: Pose,
    pub split: Split,
    pub path: String,
}

/// Index of an image set. Class labels are positions in `objects`.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub mode: Mode,
    pub seed: u64,
    pub n_poses: usize,
    pub objects: Vec<u32>,
    pub records: Vec<ManifestRecord>,
}

impl DatasetManifest {
    pub fn class_of(&self, object_id: u32) -> Option<usize> {
        self.objects.iter().position(|&o| o == object_id)
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.records.len())
            .filter(|&i| self.records[i].split == split)
            .collect()
    }

    pub fn count(&self, split: Split) -> usize {
        self.records.iter().filter(|r| r.split == split).count()
    }

    /// The distinct poses in pose-index order.
    pub fn poses(&self) -> Vec<Pose> {
        let mut out = vec![Pose::identity(); self.n_poses];
        for r in &self.records {
            out[r.pose_index] = r.pose;
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        s.push_str(MANIFEST_MAGIC);
        s.push('\n');
        s.push_str(&format!("mode = {}\n", self.mode));
        s.push_str(&format!("seed = {}\n", self.seed));
        s.push_str(&format!("n_poses = {}\n", self.n_poses));
        let ids: Vec<String> = self.objects.iter().map(|o| o.to_string()).collect();
        s.push_str(&format!("objects = {}\n", ids.join(",")));
        let (tr, va, te) = (self.count(Split::Train), self.count(Split::Val), self.count(Split::Test));
        s.push_str(&format!("# splits train={tr} val={va} test={te}\n"));
        s.push_str("# object_id pose_index x y z qw qx qy qz split path\n");
        for r in &self.records {
            s.push_str(&format!("{} {} {} {} {}\n", r.object_id, r.pose_index, r.pose, r.split, r.path));
        }
        s
    }

    pub fn parse(text: &str) -> std::result::Result<Self, String> {
        let mut lines = text.lines();
        if lines.next() != Some(MANIFEST_MAGIC) {
            return Err("missing manifest header".into());
        }
        let mut header = |key: &str| -> std::result::Result<String, String> {
            let line = lines.next().ok_or_else(|| format!("missing `{key}`"))?;
            let (k, v) = line.split_once('=').ok_or_else(|| format!("malformed line `{line}`"))?;
            if k.trim() != key {
                return Err(format!("expected `{key}`, found `{}`", k.trim()));
            }
            Ok(v.trim().to_string())
        };
        let mode: Mode = header("mode")?.parse().map_err(|e: Error| e.to_string())?;
        let seed = header("seed")?.parse().map_err(|e| format!("seed: {e}"))?;
        let n_poses = header("n_poses")?.parse().map_err(|e| format!("n_poses: {e}"))?;
        let objects = header("objects")?
            .split(',')
            .map(|s| s.trim().parse::<u32>().map_err(|e| format!("objects: {e}")))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let mut records = Vec::new();
        for line in lines {
            if line.starts_with('#') || line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 11 {
                return Err(format!("record has {} fields, expected 11: `{line}`", f.len()));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|e| format!("`{s}`: {e}"));
            let mut a = [0.0; 7];
            for (k, v) in a.iter_mut().enumerate() {
                *v = num(f[2 + k])?;
            }
            records.push(ManifestRecord {
                object_id: f[0].parse().map_err(|e| format!("object id: {e}"))?,
                pose_index: f[1].parse().map_err(|e| format!("pose index: {e}"))?,
                pose: Pose::from_array(&a),
                split: f[9].parse().map_err(|e: Error| e.to_string())?,
                path: f[10].to_string(),
            });
        }
        Ok(DatasetManifest {
            mode,
            seed,
            n_poses,
            objects,
            records,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|r| Error::format(path, r))
    }
}

/// A manifest plus its images held in memory, `images[i]` for `records[i]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageSet {
    pub manifest: DatasetManifest,
    pub images: Vec<Image>,
}

impl ImageSet {
    pub fn label(&self, i: usize) -> usize {
        self.manifest
            .class_of(self.manifest.records[i].object_id)
            .expect("record object is in the roster")
    }

    /// Writes the PGM files and `manifest.txt` under `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir.join("images")).map_err(|e| Error::io(dir, e))?;
        for (r, img) in self.manifest.records.iter().zip(&self.images) {
            img.save_pgm(&dir.join(&r.path))?;
        }
        self.manifest.save(&dir.join(MANIFEST_FILE))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest = DatasetManifest::load(&dir.join(MANIFEST_FILE))?;
        let images = manifest
            .records
            .iter()
            .map(|r| Image::load_pgm(&dir.join(&r.path)))
            .collect::<Result<Vec<_>>>()?;
        Ok(ImageSet { manifest, images })
    }
}

/// Samples `n_poses` poses once and renders every object at every pose.
///
/// The pose list depends only on `seed` and the workspace, so robot and
/// object-only sets generated with the same seed share poses.
#[allow(clippy::too_many_arguments)]
pub fn generate_image_set(
    objects: &[(u32, ObjectMesh)],
    mode: Mode,
    n_poses: usize,
    cam: &Camera,
    gripper: &GripperSpec,
    workspace: &WorkspaceBox,
    seed: u64,
) -> Result<ImageSet> {
    if n_poses < 10 {
        return Err(Error::domain("an image set needs at least 10 poses"));
    }
    if objects.is_empty() {
        return Err(Error::domain("an image set needs at least one object"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let poses: Vec<Pose> = (0..n_poses)
        .map(|_| {
            let p = sample_random_pose(&mut rng, workspace);
            match mode {
                Mode::Robot => clamp_to_reachable(&p, workspace),
                Mode::Objects => clamp_to_box(&p, workspace),
            }
        })
        .collect::<Result<_>>()?;
    let scenes: Vec<_> = objects.iter().map(|(_, m)| scene_for_mode(m, mode, gripper)).collect();
    let mut records = Vec::with_capacity(objects.len() * n_poses);
    for (id, _) in objects {
        for (pi, pose) in poses.iter().enumerate() {
            records.push(ManifestRecord {
                object_id: *id,
                pose_index: pi,
                pose: *pose,
                split: split_of(pi, n_poses),
                path: format!("images/{mode}_o{id:02}_p{pi:05}.pgm"),
            });
        }
    }
    let images: Vec<Image> = (0..records.len())
        .into_par_iter()
        .map(|i| rasterize(&scenes[i / n_poses], &poses[i % n_poses], cam))
        .collect();
    Ok(ImageSet {
        manifest: DatasetManifest {
            mode,
            seed,
            n_poses,
            objects: objects.iter().map(|(id, _)| *id).collect(),
            records,
        },
        images,
    })
}
