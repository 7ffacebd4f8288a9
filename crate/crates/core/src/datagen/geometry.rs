//! Procedural airway-like lumen geometry and its signed-distance evaluation.

use nalgebra::{Unit, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub type Vec3 = Vector3<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Complexity {
    Straight,
    Curved,
    Branching,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadiusKnot {
    pub arclength_mm: f64,
    pub radius_mm: f64,
}

/// A straight child tube leaving the parent centerline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BranchSpec {
    pub arclength_mm: f64,
    /// Angle between the child axis and the parent tangent.
    pub angle_deg: f64,
    /// Direction of the child around the parent tangent.
    pub azimuth_deg: f64,
    pub radius_scale: f64,
    pub length_mm: f64,
}

/// Centerline control points (Catmull-Rom, C1), a smooth radius profile over
/// parent arclength, and optional child tubes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LumenGeometry {
    pub complexity: Complexity,
    pub centerline: Vec<[f64; 3]>,
    pub radius_profile: Vec<RadiusKnot>,
    pub branches: Vec<BranchSpec>,
}

const CONTROL_SPACING_MM: f64 = 20.0;
const START_Z_MM: f64 = -30.0;
const N_CONTROL: usize = 15;

/// Deterministic geometry for `(seed, complexity)`.
pub fn generate_geometry(seed: u64, complexity: Complexity) -> LumenGeometry {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z = |i: usize| START_Z_MM + CONTROL_SPACING_MM * i as f64;
    match complexity {
        Complexity::Straight => {
            let r = rng.gen_range(4.0..7.0);
            LumenGeometry {
                complexity,
                centerline: (0..N_CONTROL).map(|i| [0.0, 0.0, z(i)]).collect(),
                radius_profile: vec![RadiusKnot { arclength_mm: 0.0, radius_mm: r }],
                branches: Vec::new(),
            }
        }
        Complexity::Curved | Complexity::Branching => {
            // Lateral offsets follow a damped random walk so bends stay gentle
            // relative to the radius.
            let mut offset = [0.0f64; 2];
            let mut vel = [0.0f64; 2];
            let mut centerline = Vec::with_capacity(N_CONTROL);
            for i in 0..N_CONTROL {
                centerline.push([offset[0], offset[1], z(i)]);
                for k in 0..2 {
                    vel[k] = 0.6 * vel[k] + rng.gen_range(-3.0..3.0);
                    offset[k] += vel[k];
                }
            }
            let radius_profile = (0..8)
                .map(|i| RadiusKnot { arclength_mm: 40.0 * i as f64, radius_mm: rng.gen_range(3.5..7.5) })
                .collect();
            let mut branches = Vec::new();
            if complexity == Complexity::Branching {
                let count = rng.gen_range(1..=2);
                let mut s = rng.gen_range(60.0..90.0);
                let mut azimuth = rng.gen_range(0.0..360.0);
                for _ in 0..count {
                    branches.push(BranchSpec {
                        arclength_mm: s,
                        angle_deg: rng.gen_range(25.0..65.0),
                        azimuth_deg: azimuth,
                        radius_scale: rng.gen_range(0.55..0.8),
                        length_mm: 60.0,
                    });
                    s += rng.gen_range(40.0..60.0);
                    azimuth = (azimuth + rng.gen_range(150.0..210.0)) % 360.0;
                }
            }
            LumenGeometry { complexity, centerline, radius_profile, branches }
        }
    }
}

fn catmull_rom(p0: Vec3, p1: Vec3, p2: Vec3, p3: Vec3, t: f64) -> Vec3 {
    let t2 = t * t;
    let t3 = t2 * t;
    0.5 * ((2.0 * p1)
        + (p2 - p0) * t
        + (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3) * t2
        + (3.0 * p1 - p0 - 3.0 * p2 + p3) * t3)
}

fn smoothstep(t: f64) -> f64 {
    let t = t.clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

impl LumenGeometry {
    /// Radius at parent arclength `s`; C1 between knots, constant beyond them.
    pub fn radius_at(&self, s: f64) -> f64 {
        let k = &self.radius_profile;
        if s <= k[0].arclength_mm {
            return k[0].radius_mm;
        }
        for w in k.windows(2) {
            if s <= w[1].arclength_mm {
                let t = (s - w[0].arclength_mm) / (w[1].arclength_mm - w[0].arclength_mm);
                return w[0].radius_mm + (w[1].radius_mm - w[0].radius_mm) * smoothstep(t);
            }
        }
        k[k.len() - 1].radius_mm
    }

    /// Dense centerline samples (position, cumulative arclength).
    fn sample_centerline(&self, per_segment: usize) -> Vec<(Vec3, f64)> {
        let pts: Vec<Vec3> = self.centerline.iter().map(|p| Vec3::new(p[0], p[1], p[2])).collect();
        let n = pts.len();
        let get = |i: isize| pts[i.clamp(0, n as isize - 1) as usize];
        let mut out = Vec::with_capacity((n - 1) * per_segment + 1);
        let mut s = 0.0;
        let mut prev = pts[0];
        for seg in 0..n - 1 {
            let i = seg as isize;
            for j in 0..per_segment {
                let t = j as f64 / per_segment as f64;
                let p = catmull_rom(get(i - 1), get(i), get(i + 1), get(i + 2), t);
                s += (p - prev).norm();
                out.push((p, s));
                prev = p;
            }
        }
        let last = pts[n - 1];
        s += (last - prev).norm();
        out.push((last, s));
        out
    }
}

/// Samples of one tube: centerline points, arclength, radius.
#[derive(Debug, Clone)]
struct TubeSamples {
    points: Vec<Vec3>,
    arclength: Vec<f64>,
    radius: Vec<f64>,
    chunks: Vec<Chunk>,
}

/// Bounding sphere over a run of consecutive segments.
#[derive(Debug, Clone)]
struct Chunk {
    first: usize,
    last: usize,
    center: Vec3,
    bound: f64,
}

const CHUNK: usize = 16;

impl TubeSamples {
    fn new(points: Vec<Vec3>, arclength: Vec<f64>, radius: Vec<f64>) -> Self {
        let segs = points.len() - 1;
        let chunks = (0..segs)
            .step_by(CHUNK)
            .map(|first| {
                let last = (first + CHUNK).min(segs);
                let center = points[first..=last].iter().sum::<Vec3>() / (last - first + 1) as f64;
                let bound = points[first..=last].iter().map(|p| (p - center).norm()).fold(0.0, f64::max);
                Chunk { first, last, center, bound }
            })
            .collect();
        TubeSamples { points, arclength, radius, chunks }
    }

    /// Nearest centerline point: (distance, arclength, radius, point).
    fn nearest(&self, p: &Vec3) -> (f64, f64, f64, Vec3) {
        let mut order: Vec<(f64, usize)> =
            self.chunks.iter().enumerate().map(|(i, c)| (((p - c.center).norm() - c.bound).max(0.0), i)).collect();
        order.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut best = (f64::INFINITY, 0.0, 0.0, Vec3::zeros());
        for (lower, ci) in order {
            if lower >= best.0 {
                break;
            }
            let c = &self.chunks[ci];
            for i in c.first..c.last {
                let a = self.points[i];
                let ab = self.points[i + 1] - a;
                let len2 = ab.norm_squared();
                let t = if len2 > 0.0 { ((p - a).dot(&ab) / len2).clamp(0.0, 1.0) } else { 0.0 };
                let q = a + ab * t;
                let d = (p - q).norm();
                if d < best.0 {
                    let s = self.arclength[i] + t * (self.arclength[i + 1] - self.arclength[i]);
                    let r = self.radius[i] + t * (self.radius[i + 1] - self.radius[i]);
                    best = (d, s, r, q);
                }
            }
        }
        best
    }
}

/// Result of an interior distance query.
#[derive(Debug, Clone, Copy)]
pub struct WallQuery {
    /// `radius − distance to centerline`; positive inside the lumen.
    pub value: f64,
    pub tube: usize,
    /// Closest centerline point of the winning tube.
    pub axis_point: Vec3,
}

/// Evaluable union of the parent tube and its children.
#[derive(Debug, Clone)]
pub struct LumenSdf {
    tubes: Vec<TubeSamples>,
    parent_tangents: Vec<Vec3>,
}

const SAMPLES_PER_CONTROL_SEGMENT: usize = 20;
const CHILD_STEP_MM: f64 = 1.0;

impl LumenSdf {
    pub fn new(geom: &LumenGeometry) -> Self {
        let samples = geom.sample_centerline(SAMPLES_PER_CONTROL_SEGMENT);
        let points: Vec<Vec3> = samples.iter().map(|(p, _)| *p).collect();
        let arclength: Vec<f64> = samples.iter().map(|(_, s)| *s).collect();
        let radius = arclength.iter().map(|&s| geom.radius_at(s)).collect();
        let parent_tangents = (0..points.len())
            .map(|i| {
                let a = points[i.saturating_sub(1)];
                let b = points[(i + 1).min(points.len() - 1)];
                (b - a).normalize()
            })
            .collect();
        let mut sdf = LumenSdf { tubes: vec![TubeSamples::new(points, arclength, radius)], parent_tangents };
        for b in &geom.branches {
            let (origin, tangent) = sdf.parent_frame(b.arclength_mm);
            let dir = branch_direction(&tangent, b.angle_deg, b.azimuth_deg);
            let r = b.radius_scale * geom.radius_at(b.arclength_mm);
            let n = (b.length_mm / CHILD_STEP_MM).ceil() as usize;
            let pts: Vec<Vec3> = (0..=n).map(|i| origin + dir * (i as f64 * b.length_mm / n as f64)).collect();
            let arc: Vec<f64> = (0..=n).map(|i| i as f64 * b.length_mm / n as f64).collect();
            sdf.tubes.push(TubeSamples::new(pts, arc, vec![r; n + 1]));
        }
        sdf
    }

    pub fn tube_count(&self) -> usize {
        self.tubes.len()
    }

    pub fn parent_length(&self) -> f64 {
        *self.tubes[0].arclength.last().expect("non-empty centerline")
    }

    /// Position and unit tangent of the parent centerline at arclength `s`.
    pub fn parent_frame(&self, s: f64) -> (Vec3, Vec3) {
        let t = &self.tubes[0];
        let i = t.arclength.partition_point(|&a| a < s).clamp(1, t.points.len() - 1);
        let (s0, s1) = (t.arclength[i - 1], t.arclength[i]);
        let f = if s1 > s0 { ((s - s0) / (s1 - s0)).clamp(0.0, 1.0) } else { 0.0 };
        let p = t.points[i - 1] + (t.points[i] - t.points[i - 1]) * f;
        let tan = (self.parent_tangents[i - 1] * (1.0 - f) + self.parent_tangents[i] * f).normalize();
        (p, tan)
    }

    /// Interior distance of `p` to the wall of tube `tube`.
    pub fn tube_value(&self, tube: usize, p: &Vec3) -> f64 {
        let (d, _, r, _) = self.tubes[tube].nearest(p);
        r - d
    }

    pub fn query(&self, p: &Vec3) -> WallQuery {
        let mut best = WallQuery { value: f64::NEG_INFINITY, tube: 0, axis_point: Vec3::zeros() };
        for (i, t) in self.tubes.iter().enumerate() {
            let (d, _, r, q) = t.nearest(p);
            if r - d > best.value {
                best = WallQuery { value: r - d, tube: i, axis_point: q };
            }
        }
        best
    }

    pub fn value(&self, p: &Vec3) -> f64 {
        self.query(p).value
    }

    pub fn inside(&self, p: &Vec3) -> bool {
        self.value(p) > 0.0
    }

    /// Axis-aligned box enclosing every tube.
    pub fn bounds(&self) -> (Vec3, Vec3) {
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        for t in &self.tubes {
            for (p, r) in t.points.iter().zip(&t.radius) {
                lo = lo.inf(&(p - Vec3::repeat(*r)));
                hi = hi.sup(&(p + Vec3::repeat(*r)));
            }
        }
        (lo, hi)
    }
}

/// Rotates `tangent` by `angle` towards a perpendicular chosen by `azimuth`.
fn branch_direction(tangent: &Vec3, angle_deg: f64, azimuth_deg: f64) -> Vec3 {
    let helper = if tangent.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    let n = tangent.cross(&helper).normalize();
    let axis_perp = UnitQuaternion::from_axis_angle(&Unit::new_normalize(*tangent), azimuth_deg.to_radians()) * n;
    let rot_axis = Unit::new_normalize(tangent.cross(&axis_perp));
    UnitQuaternion::from_axis_angle(&rot_axis, angle_deg.to_radians()) * tangent
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn straight_seed_zero_is_constant_cylinder_along_z() {
        let g = generate_geometry(0, Complexity::Straight);
        assert!(g.centerline.iter().all(|p| p[0] == 0.0 && p[1] == 0.0));
        assert!(g.centerline.windows(2).all(|w| w[1][2] > w[0][2]));
        let r0 = g.radius_at(0.0);
        assert!((0..250).all(|s| g.radius_at(s as f64) == r0));
        assert!(g.branches.is_empty());
    }

    #[test]
    fn generation_is_deterministic() {
        for c in [Complexity::Straight, Complexity::Curved, Complexity::Branching] {
            let a = serde_json::to_string(&generate_geometry(7, c)).unwrap();
            let b = serde_json::to_string(&generate_geometry(7, c)).unwrap();
            assert_eq!(a, b);
        }
        assert_ne!(generate_geometry(7, Complexity::Curved), generate_geometry(8, Complexity::Curved));
    }

    #[test]
    fn invariants_hold_over_many_seeds() {
        for seed in 0..200 {
            for c in [Complexity::Curved, Complexity::Branching] {
                let g = generate_geometry(seed, c);
                for s in 0..300 {
                    assert!(g.radius_at(s as f64) > 0.0);
                }
                for b in &g.branches {
                    assert!(b.angle_deg > 10.0 && b.angle_deg < 80.0);
                }
                if c == Complexity::Branching {
                    assert!(!g.branches.is_empty());
                }
            }
        }
    }

    #[test]
    fn centerline_tangent_is_continuous() {
        let g = generate_geometry(3, Complexity::Curved);
        let samples = g.sample_centerline(40);
        let dirs: Vec<Vec3> = samples.windows(2).map(|w| (w[1].0 - w[0].0).normalize()).collect();
        for w in dirs.windows(2) {
            assert!(w[0].dot(&w[1]) > 0.99, "tangent jump {}", w[0].dot(&w[1]));
        }
    }

    #[test]
    fn straight_sdf_is_exact() {
        let g = generate_geometry(0, Complexity::Straight);
        let r = g.radius_at(0.0);
        let sdf = LumenSdf::new(&g);
        let p = Vec3::new(1.0, -0.5, 50.0);
        assert!((sdf.value(&p) - (r - p.xy().norm())).abs() < 1e-9);
        assert!(sdf.inside(&Vec3::new(0.0, 0.0, 10.0)));
        assert!(!sdf.inside(&Vec3::new(r + 0.1, 0.0, 10.0)));
    }

    #[test]
    fn branch_direction_has_requested_angle() {
        let t = Vec3::new(0.2, 0.1, 1.0).normalize();
        for az in [0.0, 90.0, 200.0] {
            let d = branch_direction(&t, 40.0, az);
            assert!((d.dot(&t).acos().to_degrees() - 40.0).abs() < 1e-9);
        }
    }
}
