//! Block objects, poses, the reachable workspace and the gripper occluder.
//!
//! Objects are built on a 2 cm lattice: a flat 3x3x1-cell base centred on the
//! object frame origin plus `k - 1` arm cuboids of 1x1x3 cells, chained
//! face-to-face with right-angle turns. The turn pattern is a pure function
//! of the object id.

use std::collections::HashSet;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Largest supported complexity level.
pub const K_MAX: u32 = 18;
/// Lattice cell edge length (m).
pub const CELL: f64 = 0.02;
/// Base footprint in cells (x, y) and height in cells.
const BASE_CELLS: i32 = 3;
const ARM_CELLS: i32 = 3;
/// Arms stay within this many cells of the origin horizontally / vertically.
const MAX_SPAN_XY: i32 = 8;
const MAX_SPAN_Z: i32 = 14;

pub type Vec3 = Vector3<f64>;
pub type Triangle = [Vec3; 3];

/// Axis-aligned unit directions, indexed `+x, -x, +y, -y, +z, -z`.
const DIRS: [[i32; 3]; 6] = [
    [1, 0, 0],
    [-1, 0, 0],
    [0, 1, 0],
    [0, -1, 0],
    [0, 0, 1],
    [0, 0, -1],
];

fn axis_of(dir: u8) -> u8 {
    dir / 2
}

/// Where and how one arm cuboid is glued to the structure.
///
/// When `parent` is the base (index 0), `face` selects one of the nine top
/// cells of the base (row-major, `x` fastest) and the arm starts on top of
/// it. Otherwise `face` is the direction (see [`DIRS`] ordering) from the
/// parent arm's end cell to the new arm's first cell. `orientation` is the
/// direction in which the arm extends from its first cell.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Attachment {
    pub parent: usize,
    pub face: u8,
    pub orientation: u8,
}

/// Identity of a block object: complexity level `k` and its attachment plan.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ObjectSpec {
    pub id: u32,
    pub plan: Vec<Attachment>,
}

impl ObjectSpec {
    /// Derives the deterministic plan for object `id` (= complexity `k`).
    pub fn new(id: u32) -> Result<Self> {
        if !(1..=K_MAX).contains(&id) {
            return Err(Error::domain(format!("object id {id} outside 1..={K_MAX}")));
        }
        let plan = plan_arms(id)?;
        Ok(ObjectSpec { id, plan })
    }

    pub fn complexity(&self) -> u32 {
        self.id
    }

    /// Number of arm cuboids `j = k - 1`.
    pub fn cuboid_count(&self) -> usize {
        self.plan.len()
    }
}

#[derive(Clone, Copy, Debug)]
struct Arm {
    start: [i32; 3],
    dir: u8,
}

impl Arm {
    fn cells(&self) -> impl Iterator<Item = [i32; 3]> + '_ {
        let d = DIRS[self.dir as usize];
        (0..ARM_CELLS).map(move |t| [self.start[0] + t * d[0], self.start[1] + t * d[1], self.start[2] + t * d[2]])
    }

    fn end(&self) -> [i32; 3] {
        let d = DIRS[self.dir as usize];
        let t = ARM_CELLS - 1;
        [self.start[0] + t * d[0], self.start[1] + t * d[1], self.start[2] + t * d[2]]
    }
}

fn add(a: [i32; 3], d: [i32; 3]) -> [i32; 3] {
    [a[0] + d[0], a[1] + d[1], a[2] + d[2]]
}

fn base_cells() -> impl Iterator<Item = [i32; 3]> {
    let r = BASE_CELLS / 2;
    (-r..=r).flat_map(move |j| (-r..=r).map(move |i| [i, j, 0]))
}

fn arm_fits(arm: &Arm, occupied: &HashSet<[i32; 3]>) -> bool {
    arm.cells().all(|c| {
        c[2] >= 1 && c[2] <= MAX_SPAN_Z && c[0].abs() <= MAX_SPAN_XY && c[1].abs() <= MAX_SPAN_XY && !occupied.contains(&c)
    })
}

/// Candidate arms glued to `parent` (0 = base, i >= 1 = arm i - 1).
fn candidates(parent: usize, arms: &[Arm]) -> Vec<(Attachment, Arm)> {
    let mut out = Vec::new();
    if parent == 0 {
        for (face, top) in base_cells().enumerate() {
            for orientation in 0..5u8 {
                let arm = Arm {
                    start: add(top, DIRS[4]),
                    dir: orientation,
                };
                out.push((
                    Attachment {
                        parent,
                        face: face as u8,
                        orientation,
                    },
                    arm,
                ));
            }
        }
    } else {
        let p = arms[parent - 1];
        for face in 0..6u8 {
            for orientation in 0..6u8 {
                // Shepard-Metzler style: every arm turns relative to its parent.
                if axis_of(orientation) == axis_of(p.dir) {
                    continue;
                }
                let arm = Arm {
                    start: add(p.end(), DIRS[face as usize]),
                    dir: orientation,
                };
                out.push((
                    Attachment {
                        parent,
                        face,
                        orientation,
                    },
                    arm,
                ));
            }
        }
    }
    out
}

fn plan_arms(id: u32) -> Result<Vec<Attachment>> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x7e05_b10c_0000 + id as u64);
    let mut occupied: HashSet<[i32; 3]> = base_cells().collect();
    let mut arms: Vec<Arm> = Vec::new();
    let mut plan = Vec::new();
    for _ in 1..id {
        // Prefer extending the chain; fall back to earlier parts if boxed in.
        let mut placed = false;
        for parent in (0..=arms.len()).rev() {
            let mut cands = candidates(parent, &arms);
            cands.shuffle(&mut rng);
            if let Some((att, arm)) = cands.into_iter().find(|(_, a)| arm_fits(a, &occupied)) {
                occupied.extend(arm.cells());
                arms.push(arm);
                plan.push(att);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::domain(format!("no free attachment for object {id}")));
        }
    }
    Ok(plan)
}

fn arms_from_plan(plan: &[Attachment]) -> Vec<Arm> {
    let mut arms: Vec<Arm> = Vec::with_capacity(plan.len());
    for att in plan {
        let start = if att.parent == 0 {
            let top = base_cells().nth(att.face as usize).expect("base face index");
            add(top, DIRS[4])
        } else {
            add(arms[att.parent - 1].end(), DIRS[att.face as usize])
        };
        arms.push(Arm {
            start,
            dir: att.orientation,
        });
    }
    arms
}

/// Closed axis-aligned box in the object frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Cuboid {
    pub min: Vec3,
    pub max: Vec3,
}

impl Cuboid {
    pub fn new(min: Vec3, max: Vec3) -> Self {
        Cuboid { min, max }
    }

    pub fn centered(center: Vec3, size: Vec3) -> Self {
        Cuboid {
            min: center - size / 2.0,
            max: center + size / 2.0,
        }
    }

    pub fn contains(&self, p: &Vec3, tol: f64) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] - tol && p[i] <= self.max[i] + tol)
    }

    /// The 12 outward-wound triangles of the box surface.
    pub fn triangles(&self) -> [Triangle; 12] {
        let c = |x: usize, y: usize, z: usize| {
            Vec3::new(
                if x == 0 { self.min.x } else { self.max.x },
                if y == 0 { self.min.y } else { self.max.y },
                if z == 0 { self.min.z } else { self.max.z },
            )
        };
        // Quads listed counter-clockwise as seen from outside.
        let quads = [
            [c(0, 0, 0), c(0, 0, 1), c(0, 1, 1), c(0, 1, 0)], // -x
            [c(1, 0, 0), c(1, 1, 0), c(1, 1, 1), c(1, 0, 1)], // +x
            [c(0, 0, 0), c(1, 0, 0), c(1, 0, 1), c(0, 0, 1)], // -y
            [c(0, 1, 0), c(0, 1, 1), c(1, 1, 1), c(1, 1, 0)], // +y
            [c(0, 0, 0), c(0, 1, 0), c(1, 1, 0), c(1, 0, 0)], // -z
            [c(0, 0, 1), c(1, 0, 1), c(1, 1, 1), c(0, 1, 1)], // +z
        ];
        let mut out = [[Vec3::zeros(); 3]; 12];
        for (f, q) in quads.iter().enumerate() {
            out[2 * f] = [q[0], q[1], q[2]];
            out[2 * f + 1] = [q[0], q[2], q[3]];
        }
        out
    }
}

pub fn triangle_area(t: &Triangle) -> f64 {
    0.5 * (t[1] - t[0]).cross(&(t[2] - t[0])).norm()
}

/// Triangle soup of a block object; triangles `12 i .. 12 i + 12` belong to
/// `cuboids[i]`, the base first.
#[derive(Clone, Debug, PartialEq)]
pub struct ObjectMesh {
    pub triangles: Vec<Triangle>,
    pub cuboids: Vec<Cuboid>,
    pub complexity: u32,
    /// Total area of all triangles (m^2).
    pub surface_area: f64,
}

impl ObjectMesh {
    pub fn from_cuboids(cuboids: Vec<Cuboid>, complexity: u32) -> Self {
        let triangles: Vec<Triangle> = cuboids.iter().flat_map(|c| c.triangles()).collect();
        let surface_area = triangles.iter().map(triangle_area).sum();
        ObjectMesh {
            triangles,
            cuboids,
            complexity,
            surface_area,
        }
    }

    /// Index of the cuboid owning triangle `tri`.
    pub fn cuboid_of(&self, tri: usize) -> usize {
        tri / 12
    }

    /// Center and radius of a sphere enclosing every vertex.
    pub fn bounding_sphere(&self) -> (Vec3, f64) {
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        for v in self.triangles.iter().flatten() {
            lo = lo.inf(v);
            hi = hi.sup(v);
        }
        let center = (lo + hi) / 2.0;
        let radius = self
            .triangles
            .iter()
            .flatten()
            .map(|v| (v - center).norm())
            .fold(0.0, f64::max);
        (center, radius)
    }

    /// Rotates every vertex about the object origin.
    pub fn rotated(&self, q: &UnitQuaternion<f64>) -> ObjectMesh {
        ObjectMesh {
            triangles: self
                .triangles
                .iter()
                .map(|t| [q * t[0], q * t[1], q * t[2]])
                .collect(),
            ..self.clone()
        }
    }

    /// ASCII triangle list: one triangle per line, nine floats.
    pub fn write_ascii<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        for t in &self.triangles {
            writeln!(
                w,
                "{:e} {:e} {:e} {:e} {:e} {:e} {:e} {:e} {:e}",
                t[0].x, t[0].y, t[0].z, t[1].x, t[1].y, t[1].z, t[2].x, t[2].y, t[2].z
            )?;
        }
        Ok(())
    }

    pub fn read_ascii(text: &str) -> std::result::Result<Vec<Triangle>, String> {
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .enumerate()
            .map(|(n, line)| {
                let v: Vec<f64> = line
                    .split_whitespace()
                    .map(f64::from_str)
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| format!("line {}: {e}", n + 1))?;
                if v.len() != 9 {
                    return Err(format!("line {}: expected 9 floats, got {}", n + 1, v.len()));
                }
                Ok([
                    Vec3::new(v[0], v[1], v[2]),
                    Vec3::new(v[3], v[4], v[5]),
                    Vec3::new(v[6], v[7], v[8]),
                ])
            })
            .collect()
    }
}

/// Builds the mesh for an object: the base plus one cuboid per attachment.
pub fn build_object(spec: &ObjectSpec) -> Result<ObjectMesh> {
    if !(1..=K_MAX).contains(&spec.id) {
        return Err(Error::domain(format!("object id {} outside 1..={K_MAX}", spec.id)));
    }
    if spec.plan.len() + 1 != spec.id as usize {
        return Err(Error::domain("attachment plan length must be k - 1"));
    }
    let half = CELL / 2.0;
    let base_half = CELL * BASE_CELLS as f64 / 2.0;
    let mut cuboids = vec![Cuboid::new(
        Vec3::new(-base_half, -base_half, -half),
        Vec3::new(base_half, base_half, half),
    )];
    for arm in arms_from_plan(&spec.plan) {
        let a = arm.start;
        let e = arm.end();
        let lo = Vec3::new(a[0].min(e[0]) as f64, a[1].min(e[1]) as f64, a[2].min(e[2]) as f64) * CELL;
        let hi = Vec3::new(a[0].max(e[0]) as f64, a[1].max(e[1]) as f64, a[2].max(e[2]) as f64) * CELL;
        cuboids.push(Cuboid::new(lo - Vec3::repeat(half), hi + Vec3::repeat(half)));
    }
    Ok(ObjectMesh::from_cuboids(cuboids, spec.id))
}

/// Convenience: `build_object(&ObjectSpec::new(id)?)`.
pub fn object(id: u32) -> Result<ObjectMesh> {
    build_object(&ObjectSpec::new(id)?)
}

/// 6-DOF pose: position (m) and orientation quaternion `(w, x, y, z)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    pub position: Vec3,
    pub orientation: Quaternion<f64>,
}

impl Pose {
    pub fn identity() -> Self {
        Pose {
            position: Vec3::zeros(),
            orientation: Quaternion::identity(),
        }
    }

    /// A pose with the orientation normalized (zero falls back to identity).
    pub fn new(position: Vec3, wxyz: [f64; 4]) -> Self {
        Pose {
            position,
            orientation: normalize_quaternion(Quaternion::new(wxyz[0], wxyz[1], wxyz[2], wxyz[3])),
        }
    }

    /// A possibly unnormalized request, as produced by a policy action.
    pub fn raw(position: Vec3, wxyz: [f64; 4]) -> Self {
        Pose {
            position,
            orientation: Quaternion::new(wxyz[0], wxyz[1], wxyz[2], wxyz[3]),
        }
    }

    /// Reads `[x, y, z, qw, qx, qy, qz]` without normalizing.
    pub fn from_array(a: &[f64; 7]) -> Self {
        Pose::raw(Vec3::new(a[0], a[1], a[2]), [a[3], a[4], a[5], a[6]])
    }

    pub fn to_array(&self) -> [f64; 7] {
        let q = &self.orientation;
        [self.position.x, self.position.y, self.position.z, q.w, q.i, q.j, q.k]
    }

    pub fn wxyz(&self) -> [f64; 4] {
        let q = &self.orientation;
        [q.w, q.i, q.j, q.k]
    }

    pub fn rotation(&self) -> UnitQuaternion<f64> {
        UnitQuaternion::new_normalize(self.orientation)
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }

    pub fn is_normalized(&self, tol: f64) -> bool {
        (self.orientation.norm() - 1.0).abs() <= tol
    }

    /// Maps a point from this pose's local frame to the parent frame.
    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.rotation() * p + self.position
    }

    /// `self * other`: `other` expressed in this pose's frame.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            position: self.transform_point(&other.position),
            orientation: normalize_quaternion(self.orientation * other.orientation),
        }
    }
}

impl fmt::Display for Pose {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let a = self.to_array();
        write!(f, "{} {} {} {} {} {} {}", a[0], a[1], a[2], a[3], a[4], a[5], a[6])
    }
}

/// Normalizes `q`; zero (or non-finite norm) maps to identity. Already-unit
/// quaternions are returned bit-identical so normalization is idempotent.
pub fn normalize_quaternion(q: Quaternion<f64>) -> Quaternion<f64> {
    let n = q.norm();
    if !(n.is_finite() && n > 1e-12) {
        return Quaternion::identity();
    }
    if (n - 1.0).abs() <= 4.0 * f64::EPSILON {
        return q;
    }
    q / n
}

/// The box of requested positions plus the arm's reach sphere at the origin.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WorkspaceBox {
    pub min_corner: Vec3,
    pub max_corner: Vec3,
    pub max_reach: f64,
}

impl Default for WorkspaceBox {
    fn default() -> Self {
        WorkspaceBox {
            min_corner: Vec3::new(-0.20, -0.35, 0.33),
            max_corner: Vec3::new(0.20, -0.05, 0.73),
            max_reach: 0.9,
        }
    }
}

impl WorkspaceBox {
    /// Checks `min <= max` componentwise and that the box lies in reach.
    ///
    /// Degenerate (zero-extent) axes are accepted.
    pub fn validate(&self) -> Result<()> {
        let finite = (0..3).all(|i| self.min_corner[i].is_finite() && self.max_corner[i].is_finite());
        if !finite || !(0..3).all(|i| self.min_corner[i] <= self.max_corner[i]) {
            return Err(Error::domain("workspace box corners out of order"));
        }
        let far = Vec3::from_fn(|i, _| self.min_corner[i].abs().max(self.max_corner[i].abs()));
        if !(self.max_reach > 0.0) || far.norm() > self.max_reach {
            return Err(Error::domain("workspace box exceeds the reach sphere"));
        }
        Ok(())
    }

    pub fn center(&self) -> Vec3 {
        (self.min_corner + self.max_corner) / 2.0
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        (0..3).all(|i| p[i] >= self.min_corner[i] && p[i] <= self.max_corner[i])
    }

    pub fn clamp(&self, p: &Vec3) -> Vec3 {
        Vec3::from_fn(|i, _| p[i].clamp(self.min_corner[i], self.max_corner[i]))
    }
}

/// Uniform position in the box and uniformly distributed rotation.
pub fn sample_random_pose<R: Rng + ?Sized>(rng: &mut R, bx: &WorkspaceBox) -> Pose {
    let position = Vec3::from_fn(|i, _| {
        let (lo, hi) = (bx.min_corner[i], bx.max_corner[i]);
        if lo == hi {
            lo
        } else {
            lo + (hi - lo) * rng.random::<f64>()
        }
    });
    Pose {
        position,
        orientation: uniform_rotation(rng),
    }
}

/// Uniform random unit quaternion: normalize four standard normals.
pub fn uniform_rotation<R: Rng + ?Sized>(rng: &mut R) -> Quaternion<f64> {
    loop {
        let v: [f64; 4] = std::array::from_fn(|_| rng.sample(StandardNormal));
        let q = Quaternion::new(v[0], v[1], v[2], v[3]);
        let n = q.norm();
        if n > 1e-9 {
            return q / n;
        }
    }
}

/// Position clamped into the box (and reach sphere), orientation normalized.
pub fn clamp_to_reachable(requested: &Pose, bx: &WorkspaceBox) -> Result<Pose> {
    if !requested.is_finite() {
        return Err(Error::domain("non-finite pose"));
    }
    let mut p = bx.clamp(&requested.position);
    let r = p.norm();
    if r > bx.max_reach {
        p *= bx.max_reach / r;
        p = bx.clamp(&p);
    }
    Ok(Pose {
        position: p,
        orientation: normalize_quaternion(requested.orientation),
    })
}

/// Box clamp only, used when no arm constrains the pose.
pub fn clamp_to_box(requested: &Pose, bx: &WorkspaceBox) -> Result<Pose> {
    if !requested.is_finite() {
        return Err(Error::domain("non-finite pose"));
    }
    Ok(Pose {
        position: bx.clamp(&requested.position),
        orientation: normalize_quaternion(requested.orientation),
    })
}

/// Rendering mode: with the gripper occluder and reachability, or object only.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Mode {
    Robot,
    Objects,
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "robot" | "m_robot" => Ok(Mode::Robot),
            "objects" | "object-only" | "m_objects" => Ok(Mode::Objects),
            other => Err(Error::domain(format!("unknown mode `{other}`"))),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Robot => "robot",
            Mode::Objects => "objects",
        })
    }
}

/// Parallel-jaw gripper: a palm below the object base and two fingers
/// pinching the base from the sides. Dimensions are full edge lengths.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GripperSpec {
    pub palm: Vec3,
    pub finger: Vec3,
    /// Pose of the object frame in the gripper frame.
    pub grasp_offset: Pose,
}

impl Default for GripperSpec {
    fn default() -> Self {
        GripperSpec {
            palm: Vec3::new(0.10, 0.04, 0.02),
            finger: Vec3::new(0.015, 0.025, 0.05),
            grasp_offset: Pose::identity(),
        }
    }
}

impl GripperSpec {
    /// Palm then the two fingers, in the gripper frame. The fingers sit
    /// symmetrically about the palm's z axis, touching the base's x faces.
    pub fn cuboids(&self) -> [Cuboid; 3] {
        let base_half = CELL * BASE_CELLS as f64 / 2.0;
        let finger_top = CELL / 2.0 - 0.002;
        let finger_z = finger_top - self.finger.z / 2.0;
        let palm_z = finger_top - self.finger.z - self.palm.z / 2.0;
        let fx = base_half + self.finger.x / 2.0;
        [
            Cuboid::centered(Vec3::new(0.0, 0.0, palm_z), self.palm),
            Cuboid::centered(Vec3::new(fx, 0.0, finger_z), self.finger),
            Cuboid::centered(Vec3::new(-fx, 0.0, finger_z), self.finger),
        ]
    }

    pub fn triangle_count(&self) -> usize {
        36
    }
}

/// Which body a scene triangle belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Part {
    Object,
    Gripper,
}

/// Triangles expressed in the end-effector frame, tagged by part.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct SceneModel {
    pub triangles: Vec<Triangle>,
    pub parts: Vec<Part>,
}

impl SceneModel {
    pub fn empty() -> Self {
        SceneModel::default()
    }

    pub fn object_only(mesh: &ObjectMesh) -> Self {
        SceneModel {
            triangles: mesh.triangles.clone(),
            parts: vec![Part::Object; mesh.triangles.len()],
        }
    }

    pub fn push(&mut self, tri: Triangle, part: Part) {
        self.triangles.push(tri);
        self.parts.push(part);
    }

    pub fn len(&self) -> usize {
        self.triangles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn count(&self, part: Part) -> usize {
        self.parts.iter().filter(|&&p| p == part).count()
    }
}

/// Places the object in the gripper at the grasp offset and adds the
/// gripper geometry, flagged [`Part::Gripper`].
pub fn attach_gripper(mesh: &ObjectMesh, g: &GripperSpec) -> SceneModel {
    let mut scene = SceneModel::empty();
    for t in &mesh.triangles {
        scene.push(
            [
                g.grasp_offset.transform_point(&t[0]),
                g.grasp_offset.transform_point(&t[1]),
                g.grasp_offset.transform_point(&t[2]),
            ],
            Part::Object,
        );
    }
    for c in g.cuboids() {
        for t in c.triangles() {
            scene.push(t, Part::Gripper);
        }
    }
    scene
}

/// Scene for a rendering mode: gripper attached in robot mode only.
pub fn scene_for_mode(mesh: &ObjectMesh, mode: Mode, g: &GripperSpec) -> SceneModel {
    match mode {
        Mode::Robot => attach_gripper(mesh, g),
        Mode::Objects => SceneModel::object_only(mesh),
    }
}
