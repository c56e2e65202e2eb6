use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::scene::{triangle_area, ObjectMesh, Triangle, Vec3};

/// Surface samples drawn per object.
pub const DEFAULT_SAMPLES: usize = 20_000;
const SAMPLE_SEED: u64 = 0x5e1f_0cc1;
/// Screen-space bin grid used to shortlist occluder triangles.
const BINS: usize = 32;
/// Default viewpoint distance as a multiple of the bounding radius.
pub const DEFAULT_RADIUS_FACTOR: f64 = 10.0;

#[derive(Clone, Copy, Debug)]
struct Sample {
    point: Vec3,
    normal: Vec3,
}

/// Area-weighted samples of an object's exterior surface.
///
/// Points on faces that lie on or inside another cuboid (contact faces
/// between blocks) are rejected, so only the visible hull is sampled.
#[derive(Clone, Debug)]
pub struct OcclusionSampler {
    triangles: Vec<Triangle>,
    samples: Vec<Sample>,
    bound_radius: f64,
}

impl OcclusionSampler {
    pub fn new(mesh: &ObjectMesh, n_samples: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let areas: Vec<f64> = mesh.triangles.iter().map(triangle_area).collect();
        let mut cdf = Vec::with_capacity(areas.len());
        let mut acc = 0.0;
        for a in &areas {
            acc += a;
            cdf.push(acc);
        }
        let mut samples = Vec::with_capacity(n_samples);
        let max_attempts = n_samples.saturating_mul(50).max(1000);
        let mut attempts = 0;
        while samples.len() < n_samples && attempts < max_attempts && acc > 0.0 {
            attempts += 1;
            let u = rng.random::<f64>() * acc;
            let ti = cdf.partition_point(|&c| c < u).min(cdf.len() - 1);
            let t = &mesh.triangles[ti];
            let (mut r1, mut r2) = (rng.random::<f64>(), rng.random::<f64>());
            if r1 + r2 > 1.0 {
                r1 = 1.0 - r1;
                r2 = 1.0 - r2;
            }
            let p = t[0] + (t[1] - t[0]) * r1 + (t[2] - t[0]) * r2;
            let own = mesh.cuboid_of(ti);
            let buried = mesh
                .cuboids
                .iter()
                .enumerate()
                .any(|(ci, c)| ci != own && c.contains(&p, 1e-9));
            if buried {
                continue;
            }
            let normal = (t[1] - t[0]).cross(&(t[2] - t[0])).normalize();
            samples.push(Sample { point: p, normal });
        }
        let bound_radius = mesh
            .triangles
            .iter()
            .flatten()
            .map(|v| v.norm())
            .fold(0.0, f64::max);
        OcclusionSampler {
            triangles: mesh.triangles.clone(),
            samples,
            bound_radius,
        }
    }

    pub fn sample_count(&self) -> usize {
        self.samples.len()
    }

    /// Radius of the origin-centred sphere enclosing the mesh.
    pub fn bound_radius(&self) -> f64 {
        self.bound_radius
    }

    /// Fraction of camera-facing samples whose line of sight to `viewpoint`
    /// crosses another part of the mesh.
    pub fn ratio(&self, viewpoint: &Vec3) -> Result<f64> {
        if !viewpoint.iter().all(|v| v.is_finite()) || viewpoint.norm() <= self.bound_radius {
            return Err(Error::domain("viewpoint must lie outside the bounding sphere"));
        }
        let bins = Bins::new(&self.triangles, viewpoint, self.bound_radius);
        let (mut facing, mut hidden) = (0usize, 0usize);
        for s in &self.samples {
            let to_eye = viewpoint - s.point;
            if s.normal.dot(&to_eye) <= 0.0 {
                continue;
            }
            facing += 1;
            let blocked = bins
                .candidates(&s.point)
                .iter()
                .any(|&ti| segment_hits(&s.point, &to_eye, &self.triangles[ti as usize]));
            if blocked {
                hidden += 1;
            }
        }
        if facing == 0 {
            return Err(Error::domain("no camera-facing surface samples"));
        }
        Ok(hidden as f64 / facing as f64)
    }

    /// Same as [`ratio`](Self::ratio) but testing every triangle; the
    /// reference the binned query is checked against.
    pub fn ratio_brute_force(&self, viewpoint: &Vec3) -> Result<f64> {
        let (mut facing, mut hidden) = (0usize, 0usize);
        for s in &self.samples {
            let to_eye = viewpoint - s.point;
            if s.normal.dot(&to_eye) <= 0.0 {
                continue;
            }
            facing += 1;
            if self.triangles.iter().any(|t| segment_hits(&s.point, &to_eye, t)) {
                hidden += 1;
            }
        }
        if facing == 0 {
            return Err(Error::domain("no camera-facing surface samples"));
        }
        Ok(hidden as f64 / facing as f64)
    }
}

/// Möller-Trumbore test for the open segment `origin + t * dir`, `t` in
/// `(eps, 1)`; the lower bound skips the sample's own face and coplanar
/// neighbours.
fn segment_hits(origin: &Vec3, dir: &Vec3, tri: &Triangle) -> bool {
    let e1 = tri[1] - tri[0];
    let e2 = tri[2] - tri[0];
    let p = dir.cross(&e2);
    let det = e1.dot(&p);
    if det.abs() < 1e-18 {
        return false;
    }
    let inv = 1.0 / det;
    let s = origin - tri[0];
    let u = s.dot(&p) * inv;
    if !(0.0..=1.0).contains(&u) {
        return false;
    }
    let q = s.cross(&e1);
    let v = dir.dot(&q) * inv;
    if v < 0.0 || u + v > 1.0 {
        return false;
    }
    let t = e2.dot(&q) * inv;
    let eps = 1e-9 / dir.norm();
    t > eps && t < 1.0
}

/// Triangles binned by their projected bounding boxes as seen from the eye.
/// A segment from a surface point to the eye projects to one point, so every
/// triangle it can cross is in that point's bin.
struct Bins {
    eye: Vec3,
    right: Vec3,
    up: Vec3,
    forward: Vec3,
    half_extent: f64,
    cells: Vec<Vec<u32>>,
}

impl Bins {
    fn new(triangles: &[Triangle], eye: &Vec3, radius: f64) -> Self {
        let forward = (-eye).normalize();
        let hint = if forward.z.abs() < 0.9 { Vec3::z() } else { Vec3::x() };
        let right = forward.cross(&hint).normalize();
        let up = right.cross(&forward);
        let d = eye.norm();
        // tan of the half-angle subtended by the bounding sphere, padded.
        let half_extent = radius / (d * d - radius * radius).sqrt() * 1.01;
        let mut bins = Bins {
            eye: *eye,
            right,
            up,
            forward,
            half_extent,
            cells: vec![Vec::new(); BINS * BINS],
        };
        for (ti, t) in triangles.iter().enumerate() {
            let mut lo = (f64::INFINITY, f64::INFINITY);
            let mut hi = (f64::NEG_INFINITY, f64::NEG_INFINITY);
            for v in t {
                let (x, y) = bins.project(v);
                lo = (lo.0.min(x), lo.1.min(y));
                hi = (hi.0.max(x), hi.1.max(y));
            }
            let pad = 1e-6;
            let (x0, y0) = (bins.cell(lo.0 - pad), bins.cell(lo.1 - pad));
            let (x1, y1) = (bins.cell(hi.0 + pad), bins.cell(hi.1 + pad));
            for by in y0..=y1 {
                for bx in x0..=x1 {
                    bins.cells[by * BINS + bx].push(ti as u32);
                }
            }
        }
        bins
    }

    fn project(&self, p: &Vec3) -> (f64, f64) {
        let d = p - self.eye;
        let z = d.dot(&self.forward);
        (d.dot(&self.right) / z, d.dot(&self.up) / z)
    }

    fn cell(&self, v: f64) -> usize {
        let f = (v + self.half_extent) / (2.0 * self.half_extent) * BINS as f64;
        (f.floor().max(0.0) as usize).min(BINS - 1)
    }

    fn candidates(&self, p: &Vec3) -> &[u32] {
        let (x, y) = self.project(p);
        &self.cells[self.cell(y) * BINS + self.cell(x)]
    }
}

/// Self-occlusion ratio of `mesh` seen from `viewpoint` (object frame).
pub fn self_occlusion(mesh: &ObjectMesh, viewpoint: &Vec3) -> Result<f64> {
    OcclusionSampler::new(mesh, DEFAULT_SAMPLES, SAMPLE_SEED).ratio(viewpoint)
}

/// `n` nearly uniform unit vectors on a golden-angle spiral.
pub fn fibonacci_sphere(n: usize) -> Vec<Vec3> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let z = 1.0 - (2 * i + 1) as f64 / n as f64;
            let r = (1.0 - z * z).max(0.0).sqrt();
            let phi = golden * i as f64;
            Vec3::new(r * phi.cos(), r * phi.sin(), z)
        })
        .collect()
}

/// Octant index 0..8 from coordinate signs: bit 0 for `x < 0`, bit 1 for
/// `y < 0`, bit 2 for `z < 0`. Octant `i` is reported as `oh_{i+1}`.
pub fn octant_of(v: &Vec3) -> usize {
    (v.x < 0.0) as usize | ((v.y < 0.0) as usize) << 1 | ((v.z < 0.0) as usize) << 2
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OctantStats {
    pub count: usize,
    pub mean: f64,
    /// Half-width of the normal-approximation 95% interval.
    pub ci95: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OcclusionReport {
    pub complexity: u32,
    pub viewpoints: Vec<Vec3>,
    pub octants: Vec<usize>,
    pub ratios: Vec<f64>,
    pub per_octant: [OctantStats; 8],
}

impl OcclusionReport {
    pub fn mean(&self) -> f64 {
        self.ratios.iter().sum::<f64>() / self.ratios.len() as f64
    }

    pub fn write_csv<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "view_index,x,y,z,octant,ratio")?;
        for (i, ((v, o), r)) in self.viewpoints.iter().zip(&self.octants).zip(&self.ratios).enumerate() {
            writeln!(w, "{i},{},{},{},oh_{},{r}", v.x, v.y, v.z, o + 1)?;
        }
        Ok(())
    }

    pub fn write_octant_csv<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "octant,count,mean,ci95")?;
        for (i, s) in self.per_octant.iter().enumerate() {
            writeln!(w, "oh_{},{},{},{}", i + 1, s.count, s.mean, s.ci95)?;
        }
        Ok(())
    }
}

fn octant_stats(octants: &[usize], ratios: &[f64]) -> [OctantStats; 8] {
    std::array::from_fn(|o| {
        let vals: Vec<f64> = octants
            .iter()
            .zip(ratios)
            .filter(|(&oc, _)| oc == o)
            .map(|(_, &r)| r)
            .collect();
        let n = vals.len();
        if n == 0 {
            return OctantStats {
                count: 0,
                mean: f64::NAN,
                ci95: f64::NAN,
            };
        }
        let mean = vals.iter().sum::<f64>() / n as f64;
        let ci95 = if n > 1 {
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            1.96 * (var / n as f64).sqrt()
        } else {
            f64::NAN
        };
        OctantStats { count: n, mean, ci95 }
    })
}

/// Sweeps `n_views` viewpoints at `radius` (object frame) with a prepared
/// sampler.
pub fn occlusion_sweep_with(sampler: &OcclusionSampler, complexity: u32, n_views: usize, radius: f64) -> Result<OcclusionReport> {
    if n_views < 8 {
        return Err(Error::domain("an occlusion sweep needs at least 8 views"));
    }
    let viewpoints: Vec<Vec3> = fibonacci_sphere(n_views).into_iter().map(|d| d * radius).collect();
    let ratios = viewpoints
        .par_iter()
        .map(|v| sampler.ratio(v))
        .collect::<Result<Vec<_>>>()?;
    let octants: Vec<usize> = viewpoints.iter().map(octant_of).collect();
    let per_octant = octant_stats(&octants, &ratios);
    Ok(OcclusionReport {
        complexity,
        viewpoints,
        octants,
        ratios,
        per_octant,
    })
}

/// Self-occlusion over `n_views` Fibonacci viewpoints at ten bounding radii.
pub fn occlusion_sweep(mesh: &ObjectMesh, n_views: usize) -> Result<OcclusionReport> {
    let sampler = OcclusionSampler::new(mesh, DEFAULT_SAMPLES, SAMPLE_SEED);
    let radius = DEFAULT_RADIUS_FACTOR * sampler.bound_radius();
    occlusion_sweep_with(&sampler, mesh.complexity, n_views, radius)
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{object, Cuboid};

    #[test]
    fn convex_cuboid_has_no_self_occlusion() {
        let m = object(1).unwrap();
        for v in fibonacci_sphere(16) {
            assert!(self_occlusion(&m, &(v * 1.0)).unwrap() <= 0.01);
        }
    }

    #[test]
    fn binned_query_matches_brute_force() {
        let m = object(7).unwrap();
        let s = OcclusionSampler::new(&m, 3000, 1);
        for v in fibonacci_sphere(12) {
            let eye = v * 5.0 * s.bound_radius();
            assert_eq!(s.ratio(&eye).unwrap(), s.ratio_brute_force(&eye).unwrap());
        }
    }

    #[test]
    fn contact_faces_are_not_sampled() {
        let m = object(2).unwrap();
        let s = OcclusionSampler::new(&m, 5000, 2);
        assert_eq!(s.sample_count(), 5000);
        for p in &s.samples {
            let inside = m.cuboids.iter().filter(|c| c.contains(&p.point, 1e-9)).count();
            assert_eq!(inside, 1);
        }
    }

    #[test]
    fn viewpoint_inside_bounds_is_rejected() {
        let m = object(3).unwrap();
        assert!(matches!(self_occlusion(&m, &Vec3::zeros()), Err(Error::Domain(_))));
    }

    #[test]
    fn occluding_slab_hides_the_base_top() {
        // A wide plate hovering over the base hides its top face from above.
        let base = Cuboid::new(Vec3::new(-0.03, -0.03, -0.01), Vec3::new(0.03, 0.03, 0.01));
        let roof = Cuboid::new(Vec3::new(-0.1, -0.1, 0.05), Vec3::new(0.1, 0.1, 0.06));
        let m = ObjectMesh::from_cuboids(vec![base, roof], 2);
        let s = OcclusionSampler::new(&m, 4000, 3);
        let r = s.ratio(&Vec3::new(0.0, 0.0, 5.0)).unwrap();
        // Facing samples: roof top (0.04) and base top (0.0036) by area.
        let expect = 0.0036 / (0.0036 + 0.04);
        assert!((r - expect).abs() < 0.02, "ratio {r}, expected {expect}");
    }

    #[test]
    fn fibonacci_points_are_unit_and_balanced() {
        let pts = fibonacci_sphere(768);
        assert!(pts.iter().all(|p| (p.norm() - 1.0).abs() < 1e-12));
        let mut counts = [0usize; 8];
        for p in &pts {
            counts[octant_of(p)] += 1;
        }
        assert_eq!(counts.iter().sum::<usize>(), 768);
        assert!(counts.iter().all(|&c| (86..=106).contains(&c)), "{counts:?}");
    }

    #[test]
    fn spearman_basics() {
        assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]) - 1.0).abs() < 1e-12);
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]) + 1.0).abs() < 1e-12);
        assert_eq!(ranks(&[5.0, 1.0, 5.0]), vec![2.5, 1.0, 2.5]);
    }
}
