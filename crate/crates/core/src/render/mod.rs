//! Software z-buffer rasterizer, image set generation and self-occlusion.

mod dataset;
mod occlusion;

use std::io::Write;
use std::path::Path;

pub use dataset::{generate_image_set, split_counts, DatasetManifest, ImageSet, ManifestRecord, Split};
pub use occlusion::{
    fibonacci_sphere, occlusion_sweep, occlusion_sweep_with, octant_of, self_occlusion, spearman, OcclusionReport,
    OcclusionSampler, OctantStats, DEFAULT_RADIUS_FACTOR, DEFAULT_SAMPLES,
};

use crate::error::{Error, Result};
use crate::scene::{Part, Pose, SceneModel, Triangle, Vec3};

/// Gray level of the background.
pub const BACKGROUND: u8 = 255;
/// Gray level of gripper triangles.
pub const GRIPPER_GRAY: u8 = 38;
const NEAR: f64 = 1e-3;

/// Pinhole camera with square pixels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Camera {
    pub position: Vec3,
    pub forward: Vec3,
    pub up: Vec3,
    /// Vertical field of view (rad).
    pub vfov: f64,
    pub width: usize,
    pub height: usize,
}

impl Default for Camera {
    /// The lab camera: horizontal view along -y from just above the table.
    fn default() -> Self {
        Camera {
            position: Vec3::new(0.003, 0.23, 0.53),
            forward: Vec3::new(0.0, -1.0, 0.0),
            up: Vec3::new(0.0, 0.0, 1.0),
            vfov: 60f64.to_radians(),
            width: 64,
            height: 64,
        }
    }
}

impl Camera {
    pub fn new(position: Vec3, forward: Vec3, up: Vec3, vfov: f64, width: usize, height: usize) -> Result<Self> {
        let cam = Camera {
            position,
            forward,
            up,
            vfov,
            width,
            height,
        };
        cam.validate()?;
        Ok(cam)
    }

    /// Camera at `eye` looking at `target`; `up_hint` need not be orthogonal.
    pub fn look_at(eye: Vec3, target: Vec3, up_hint: Vec3, vfov: f64, width: usize, height: usize) -> Result<Self> {
        let forward = (target - eye).normalize();
        let mut up = up_hint - forward * forward.dot(&up_hint);
        if up.norm() < 1e-9 {
            // Looking along the hint; pick any perpendicular.
            let alt = if forward.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
            up = alt - forward * forward.dot(&alt);
        }
        Camera::new(eye, forward, up.normalize(), vfov, width, height)
    }

    pub fn validate(&self) -> Result<()> {
        let ortho = (self.forward.norm() - 1.0).abs() < 1e-9
            && (self.up.norm() - 1.0).abs() < 1e-9
            && self.forward.dot(&self.up).abs() < 1e-9;
        if !ortho {
            return Err(Error::domain("camera axes must be orthonormal"));
        }
        if !(self.vfov > 0.0 && self.vfov < std::f64::consts::PI) {
            return Err(Error::domain("camera field of view must lie in (0, pi)"));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::domain("camera resolution must be positive"));
        }
        if !self.position.iter().all(|v| v.is_finite()) {
            return Err(Error::domain("camera position must be finite"));
        }
        Ok(())
    }

    pub fn right(&self) -> Vec3 {
        self.forward.cross(&self.up)
    }

    /// Camera-frame coordinates `(right, up, depth)` of a world point.
    pub fn to_view(&self, p: &Vec3) -> Vec3 {
        let d = p - self.position;
        Vec3::new(d.dot(&self.right()), d.dot(&self.up), d.dot(&self.forward))
    }

    /// Focal length in pixels.
    pub fn focal(&self) -> f64 {
        self.height as f64 / 2.0 / (self.vfov / 2.0).tan()
    }

    /// Continuous pixel coordinates of a view-frame point with positive depth.
    pub fn project_view(&self, v: &Vec3) -> (f64, f64) {
        let f = self.focal();
        (
            self.width as f64 / 2.0 + f * v.x / v.z,
            self.height as f64 / 2.0 - f * v.y / v.z,
        )
    }
}

/// 8-bit grayscale raster, row-major. Intensity of a pixel is `level / 255`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl Image {
    pub fn filled(width: usize, height: usize, level: u8) -> Self {
        Image {
            width,
            height,
            pixels: vec![level; width * height],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.pixels[y * self.width + x] as f64 / 255.0
    }

    /// Intensities in `[0, 1]`.
    pub fn intensities(&self) -> impl Iterator<Item = f64> + '_ {
        self.pixels.iter().map(|&p| p as f64 / 255.0)
    }

    pub fn write_pgm<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        write!(w, "P5\n{} {}\n255\n", self.width, self.height)?;
        w.write_all(&self.pixels)
    }

    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.pixels.len() + 16);
        self.write_pgm(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn parse_pgm(bytes: &[u8]) -> std::result::Result<Image, String> {
        // Header: magic, width, height, maxval separated by whitespace, then
        // exactly one whitespace byte before the raster.
        let mut fields = Vec::with_capacity(4);
        let mut pos = 0;
        while fields.len() < 4 {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err("truncated PGM header".into());
            }
            fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|e| e.to_string())?);
        }
        if fields[0] != "P5" {
            return Err(format!("unsupported magic {}", fields[0]));
        }
        let parse = |s: &str| s.parse::<usize>().map_err(|e| format!("bad header field `{s}`: {e}"));
        let (width, height, maxval) = (parse(fields[1])?, parse(fields[2])?, parse(fields[3])?);
        if maxval != 255 {
            return Err(format!("unsupported maxval {maxval}"));
        }
        let raster = bytes.get(pos + 1..).ok_or("missing raster")?;
        if raster.len() != width * height {
            return Err(format!("raster has {} bytes, expected {}", raster.len(), width * height));
        }
        Ok(Image {
            width,
            height,
            pixels: raster.to_vec(),
        })
    }

    pub fn save_pgm(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_pgm()).map_err(|e| Error::io(path, e))
    }

    pub fn load_pgm(path: &Path) -> Result<Image> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Image::parse_pgm(&bytes).map_err(|r| Error::format(path, r))
    }
}

/// A rendered image plus the id of the visible triangle per pixel.
#[derive(Clone, Debug)]
pub struct Frame {
    pub image: Image,
    /// Index into the scene's triangles, `u32::MAX` where nothing is visible.
    pub ids: Vec<u32>,
    /// Inverse view depth of the visible surface, 0 for background.
    pub inv_depth: Vec<f64>,
}

impl Frame {
    /// Pixels showing a triangle of the given part.
    pub fn count_part(&self, scene: &SceneModel, part: Part) -> usize {
        self.ids
            .iter()
            .filter(|&&id| id != u32::MAX && scene.parts[id as usize] == part)
            .count()
    }
}

/// Object shade from the angle between the face normal and the line of sight.
fn shade(normal: &Vec3, to_camera: &Vec3) -> u8 {
    let c = normal.dot(to_camera).abs() / (normal.norm() * to_camera.norm());
    let v = 0.2 + 0.6 * c;
    (v * 255.0).round() as u8
}

/// Clips a view-space polygon to `z >= NEAR`.
fn clip_near(poly: &[Vec3]) -> Vec<Vec3> {
    let mut out = Vec::with_capacity(poly.len() + 1);
    for i in 0..poly.len() {
        let a = poly[i];
        let b = poly[(i + 1) % poly.len()];
        let (ia, ib) = (a.z >= NEAR, b.z >= NEAR);
        if ia {
            out.push(a);
        }
        if ia != ib {
            let t = (NEAR - a.z) / (b.z - a.z);
            out.push(a + (b - a) * t);
        }
    }
    out
}

/// Renders `triangles` placed by `pose` with flat shading. `levels[i]`
/// overrides the shade of triangle `i` when `Some`.
fn raster_triangles(triangles: &[Triangle], levels: &dyn Fn(usize) -> Option<u8>, pose: &Pose, cam: &Camera) -> Frame {
    let (w, h) = (cam.width, cam.height);
    let mut image = Image::filled(w, h, BACKGROUND);
    let mut ids = vec![u32::MAX; w * h];
    let mut inv_depth = vec![0.0f64; w * h];
    let rot = pose.rotation();
    for (ti, tri) in triangles.iter().enumerate() {
        let world: [Vec3; 3] = std::array::from_fn(|k| rot * tri[k] + pose.position);
        if !world.iter().all(|p| p.iter().all(|c| c.is_finite())) {
            continue;
        }
        let normal = (world[1] - world[0]).cross(&(world[2] - world[0]));
        if normal.norm() < 1e-18 {
            continue;
        }
        let centroid = (world[0] + world[1] + world[2]) / 3.0;
        let level = levels(ti).unwrap_or_else(|| shade(&normal, &(cam.position - centroid)));
        let view: Vec<Vec3> = world.iter().map(|p| cam.to_view(p)).collect();
        let poly = clip_near(&view);
        if poly.len() < 3 {
            continue;
        }
        let screen: Vec<(f64, f64, f64)> = poly
            .iter()
            .map(|v| {
                let (x, y) = cam.project_view(v);
                (x, y, 1.0 / v.z)
            })
            .collect();
        for k in 1..screen.len() - 1 {
            fill(&[screen[0], screen[k], screen[k + 1]], ti as u32, level, &mut image, &mut ids, &mut inv_depth);
        }
    }
    Frame { image, ids, inv_depth }
}

/// Fills one screen triangle `(x, y, 1/z)` with a strict depth test.
fn fill(s: &[(f64, f64, f64); 3], id: u32, level: u8, image: &mut Image, ids: &mut [u32], inv_depth: &mut [f64]) {
    let (w, h) = (image.width, image.height);
    let edge = |a: (f64, f64, f64), b: (f64, f64, f64), px: f64, py: f64| (b.0 - a.0) * (py - a.1) - (b.1 - a.1) * (px - a.0);
    let area = edge(s[0], s[1], s[2].0, s[2].1);
    if !area.is_finite() || area.abs() < 1e-12 {
        return;
    }
    let min_x = s.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let max_x = s.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    let min_y = s.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let max_y = s.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    if max_x < 0.0 || max_y < 0.0 || min_x > w as f64 || min_y > h as f64 {
        return;
    }
    let x0 = (min_x - 0.5).ceil().max(0.0) as usize;
    let x1 = ((max_x - 0.5).floor().min(w as f64 - 1.0)).max(-1.0);
    let y0 = (min_y - 0.5).ceil().max(0.0) as usize;
    let y1 = ((max_y - 0.5).floor().min(h as f64 - 1.0)).max(-1.0);
    if x1 < 0.0 || y1 < 0.0 {
        return;
    }
    let (x1, y1) = (x1 as usize, y1 as usize);
    let inv_area = 1.0 / area;
    for py in y0..=y1 {
        let cy = py as f64 + 0.5;
        for px in x0..=x1 {
            let cx = px as f64 + 0.5;
            let b0 = edge(s[1], s[2], cx, cy) * inv_area;
            let b1 = edge(s[2], s[0], cx, cy) * inv_area;
            let b2 = edge(s[0], s[1], cx, cy) * inv_area;
            if b0 < 0.0 || b1 < 0.0 || b2 < 0.0 {
                continue;
            }
            let iz = b0 * s[0].2 + b1 * s[1].2 + b2 * s[2].2;
            let idx = py * w + px;
            if iz > inv_depth[idx] {
                inv_depth[idx] = iz;
                ids[idx] = id;
                image.pixels[idx] = level;
            }
        }
    }
}

/// Renders the scene with the end-effector at `pose`, keeping the id buffer.
pub fn render_frame(scene: &SceneModel, pose: &Pose, cam: &Camera) -> Frame {
    let levels = |i: usize| (scene.parts[i] == Part::Gripper).then_some(GRIPPER_GRAY);
    raster_triangles(&scene.triangles, &levels, pose, cam)
}

/// Perspective z-buffer rendering: white background, flat-shaded object,
/// gripper in a fixed dark gray, no shadows.
pub fn rasterize(scene: &SceneModel, object_pose: &Pose, cam: &Camera) -> Image {
    render_frame(scene, object_pose, cam).image
}
