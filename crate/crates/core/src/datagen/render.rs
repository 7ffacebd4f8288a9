//! CPU sphere tracing of the lumen interior from a pinhole camera with a
//! co-located point light.

use nalgebra::{Rotation3, Unit};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::geometry::{LumenGeometry, LumenSdf, Vec3};
use super::noise;
use crate::error::{Error, Result};
use crate::frame::{DepthMap, RgbFrame};

/// Rigid camera pose: position in mm and a world-from-camera rotation
/// (row-major). The camera looks along its +z axis, +x right, +y down.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub position: [f64; 3],
    pub rotation: [[f64; 3]; 3],
}

impl Pose {
    /// Camera at `position` looking along `forward`, rolled by `roll_rad`.
    pub fn looking_along(position: Vec3, forward: Vec3, roll_rad: f64) -> Self {
        let f = forward.normalize();
        let helper = if f.y.abs() < 0.9 { Vec3::y() } else { Vec3::x() };
        let right = helper.cross(&f).normalize();
        let down = f.cross(&right);
        let roll = Rotation3::from_axis_angle(&Unit::new_normalize(f), roll_rad);
        let (right, down) = (roll * right, roll * down);
        let m = [[right.x, down.x, f.x], [right.y, down.y, f.y], [right.z, down.z, f.z]];
        Pose { position: [position.x, position.y, position.z], rotation: m }
    }

    pub fn origin(&self) -> Vec3 {
        Vec3::from(self.position)
    }

    pub fn to_world(&self, d: &Vec3) -> Vec3 {
        let m = &self.rotation;
        Vec3::new(
            m[0][0] * d.x + m[0][1] * d.y + m[0][2] * d.z,
            m[1][0] * d.x + m[1][1] * d.y + m[1][2] * d.z,
            m[2][0] * d.x + m[2][1] * d.y + m[2][2] * d.z,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    /// Horizontal field of view.
    pub fov_deg: f64,
    pub width: usize,
    pub height: usize,
    pub near_mm: f64,
    pub far_mm: f64,
    pub pose: Pose,
}

impl CameraModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.near_mm > 0.0 && self.near_mm < self.far_mm) {
            return Err(Error::ConfigInvalid(format!(
                "camera clip planes must satisfy 0 < near ({}) < far ({})",
                self.near_mm, self.far_mm
            )));
        }
        if !(self.fov_deg > 30.0 && self.fov_deg < 170.0) {
            return Err(Error::ConfigInvalid(format!("fov_deg {} outside (30, 170)", self.fov_deg)));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::ConfigInvalid("camera resolution must be non-zero".into()));
        }
        Ok(())
    }

    /// Unit ray direction through the centre of pixel `(x, y)`, world frame.
    pub fn ray(&self, x: usize, y: usize) -> Vec3 {
        let tan = (self.fov_deg.to_radians() / 2.0).tan();
        let aspect = self.height as f64 / self.width as f64;
        let u = ((x as f64 + 0.5) / self.width as f64 * 2.0 - 1.0) * tan;
        let v = ((y as f64 + 0.5) / self.height as f64 * 2.0 - 1.0) * tan * aspect;
        self.pose.to_world(&Vec3::new(u, v, 1.0).normalize())
    }
}

/// Photometric parameters. For rendering they describe the tissue and light;
/// for [`super::shift::apply_domain_shift`] the same fields describe the
/// appearance change, with [`AppearanceParams::neutral`] as the identity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AppearanceParams {
    pub base_albedo: [f64; 3],
    pub texture_seed: u64,
    pub texture_strength: f64,
    pub specular_strength: f64,
    pub vignette_strength: f64,
    pub light_falloff_exp: f64,
    pub noise_sigma: f64,
}

impl AppearanceParams {
    /// No-op shift.
    pub fn neutral() -> Self {
        AppearanceParams {
            base_albedo: [1.0; 3],
            texture_seed: 0,
            texture_strength: 0.0,
            specular_strength: 0.0,
            vignette_strength: 0.0,
            light_falloff_exp: 1.0,
            noise_sigma: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let unit = [self.texture_strength, self.specular_strength, self.vignette_strength];
        if unit.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::ConfigInvalid("texture/specular/vignette strengths must lie in [0, 1]".into()));
        }
        if self.base_albedo.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::ConfigInvalid("albedo must be finite and non-negative".into()));
        }
        if !(self.light_falloff_exp >= 0.0 && self.noise_sigma >= 0.0) {
            return Err(Error::ConfigInvalid("light_falloff_exp and noise_sigma must be >= 0".into()));
        }
        Ok(())
    }
}

/// Reference distance at which the co-located light saturates.
pub const LIGHT_REF_MM: f64 = 6.0;
const SHININESS: i32 = 40;
const HIT_EPS_MM: f64 = 1e-4;
const MIN_STEP_MM: f64 = 0.02;
const STEP_SCALE: f64 = 0.9;
const MAX_STEPS: usize = 4000;

/// Distance along a unit ray from `origin` to the first wall crossing,
/// or `None` if nothing is hit before `far`.
pub fn trace(sdf: &LumenSdf, origin: &Vec3, dir: &Vec3, far: f64) -> Option<f64> {
    let mut t = 0.0;
    let mut f = sdf.value(origin);
    for _ in 0..MAX_STEPS {
        if f < HIT_EPS_MM {
            return Some(t);
        }
        let step = (STEP_SCALE * f).max(MIN_STEP_MM);
        let t_next = t + step;
        let f_next = sdf.value(&(origin + dir * t_next));
        if f_next < 0.0 {
            // Crossed the wall inside this step; bisect the sign change.
            let (mut lo, mut hi) = (t, t_next);
            for _ in 0..40 {
                let mid = 0.5 * (lo + hi);
                if sdf.value(&(origin + dir * mid)) > 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            let hit = 0.5 * (lo + hi);
            return (hit <= far).then_some(hit);
        }
        if t_next > far {
            return None;
        }
        t = t_next;
        f = f_next;
    }
    None
}

/// Renders RGB and ground-truth depth. Depth is the Euclidean distance from
/// the camera centre to the first wall intersection; pixels without a hit
/// inside the far clip are set to `far_mm` and marked invalid.
pub fn render_frame(geom: &LumenGeometry, cam: &CameraModel, app: &AppearanceParams) -> Result<(RgbFrame, DepthMap)> {
    render_with_sdf(&LumenSdf::new(geom), cam, app)
}

pub fn render_with_sdf(sdf: &LumenSdf, cam: &CameraModel, app: &AppearanceParams) -> Result<(RgbFrame, DepthMap)> {
    cam.validate()?;
    app.validate()?;
    let origin = cam.pose.origin();
    if !sdf.inside(&origin) {
        return Err(Error::CameraOutsideLumen);
    }
    let (w, h) = (cam.width, cam.height);
    let mut rgb = RgbFrame::new(w, h);
    let mut depth = DepthMap::new(w, h);
    let mut rng = ChaCha8Rng::seed_from_u64(app.texture_seed ^ 0x5E_ED0F_D00D);
    let noise = (app.noise_sigma > 0.0).then(|| Normal::new(0.0, app.noise_sigma).expect("sigma >= 0"));
    for y in 0..h {
        for x in 0..w {
            let dir = cam.ray(x, y);
            let idx = y * w + x;
            let mut color = [0.0f64; 3];
            match trace(sdf, &origin, &dir, cam.far_mm) {
                Some(t) => {
                    depth.depth_mm[idx] = t.clamp(cam.near_mm, cam.far_mm) as f32;
                    depth.valid[idx] = true;
                    color = shade(sdf, &(origin + dir * t), &dir, t, app);
                }
                None => {
                    depth.depth_mm[idx] = cam.far_mm as f32;
                }
            }
            let vig = vignette(x, y, w, h, app.vignette_strength);
            for c in &mut color {
                *c *= vig;
                if let Some(n) = &noise {
                    *c += n.sample(&mut rng);
                }
            }
            rgb.set_pixel(x, y, color.map(|c| c.clamp(0.0, 1.0) as f32));
        }
    }
    Ok((rgb, depth))
}

fn shade(sdf: &LumenSdf, p: &Vec3, dir: &Vec3, t: f64, app: &AppearanceParams) -> [f64; 3] {
    let q = sdf.query(p);
    // Wall normal facing into the lumen.
    let outward = p - q.axis_point;
    let normal = if outward.norm() > 0.0 { -outward.normalize() } else { -dir };
    let lambert = normal.dot(&-dir).max(0.0);
    let falloff = (LIGHT_REF_MM / t.max(1e-6)).powf(app.light_falloff_exp).min(1.0);
    let tex = 1.0 - app.texture_strength * noise::fractal3(app.texture_seed, p.x * 0.35, p.y * 0.35, p.z * 0.35);
    let diffuse = (0.15 + 0.85 * lambert) * falloff * tex;
    let spec = app.specular_strength * lambert.powi(SHININESS) * falloff;
    app.base_albedo.map(|a| a * diffuse + spec)
}

pub(crate) fn vignette(x: usize, y: usize, w: usize, h: usize, strength: f64) -> f64 {
    if strength == 0.0 {
        return 1.0;
    }
    let u = (x as f64 + 0.5) / w as f64 * 2.0 - 1.0;
    let v = (y as f64 + 0.5) / h as f64 * 2.0 - 1.0;
    (1.0 - strength * 0.5 * (u * u + v * v)).max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::geometry::{generate_geometry, Complexity};

    fn cylinder() -> (LumenGeometry, LumenSdf, f64) {
        let g = generate_geometry(0, Complexity::Straight);
        let r = g.radius_at(0.0);
        let sdf = LumenSdf::new(&g);
        (g, sdf, r)
    }

    /// Fixed-step march on the analytic inside test of a z-aligned cylinder.
    fn brute_force_depth(r: f64, origin: &Vec3, dir: &Vec3, far: f64) -> Option<f64> {
        let step = 0.01;
        let mut t = 0.0;
        while t <= far {
            let p = origin + dir * t;
            if p.x * p.x + p.y * p.y >= r * r {
                return Some(t);
            }
            t += step;
        }
        None
    }

    #[test]
    fn perpendicular_ray_hits_at_radius() {
        let (_, sdf, r) = cylinder();
        let o = Vec3::new(0.0, 0.0, 40.0);
        for dir in [Vec3::x(), -Vec3::y(), Vec3::new(1.0, 1.0, 0.0).normalize()] {
            let t = trace(&sdf, &o, &dir, 100.0).unwrap();
            assert!((t - r).abs() < 0.05, "{t} vs {r}");
            assert!((t - r).abs() < 2e-4);
        }
    }

    #[test]
    fn axial_ray_is_clamped() {
        let (_, sdf, _) = cylinder();
        let o = Vec3::new(0.0, 0.0, 10.0);
        assert!(trace(&sdf, &o, &Vec3::z(), 100.0).is_none());
    }

    #[test]
    fn oblique_rays_match_brute_force_and_analytic() {
        let (_, sdf, r) = cylinder();
        let o = Vec3::new(0.0, 0.0, 20.0);
        for deg in [5.0f64, 10.0, 20.0, 35.0, 60.0, 85.0] {
            let th = deg.to_radians();
            let dir = Vec3::new(th.sin(), 0.0, th.cos());
            let oracle = brute_force_depth(r, &o, &dir, 100.0);
            let traced = trace(&sdf, &o, &dir, 100.0);
            let analytic = r / th.sin();
            if analytic > 100.0 {
                assert!(oracle.is_none() && traced.is_none());
                continue;
            }
            let (oracle, traced) = (oracle.unwrap(), traced.unwrap());
            assert!((traced - oracle).abs() <= 0.05, "{deg}°: {traced} vs oracle {oracle}");
            assert!((traced - analytic).abs() <= 0.05, "{deg}°: {traced} vs {analytic}");
        }
    }

    fn forward_camera(z: f64, size: usize) -> CameraModel {
        CameraModel {
            fov_deg: 90.0,
            width: size,
            height: size,
            near_mm: 0.1,
            far_mm: 100.0,
            pose: Pose::looking_along(Vec3::new(0.0, 0.0, z), Vec3::z(), 0.0),
        }
    }

    #[test]
    fn rendered_depth_respects_range_and_mask() {
        let (g, _, r) = cylinder();
        let cam = forward_camera(10.0, 32);
        let app =
            AppearanceParams { light_falloff_exp: 2.0, base_albedo: [0.9, 0.5, 0.4], ..AppearanceParams::neutral() };
        let (rgb, depth) = render_frame(&g, &cam, &app).unwrap();
        assert_eq!((rgb.width, depth.height), (32, 32));
        for (d, v) in depth.depth_mm.iter().zip(&depth.valid) {
            if *v {
                assert!(*d as f64 >= cam.near_mm && *d as f64 <= cam.far_mm);
            } else {
                assert_eq!(*d as f64, cam.far_mm);
            }
        }
        // Centre pixels look down the axis: invalid. Corners see the wall.
        assert!(!depth.valid[16 * 32 + 16]);
        assert!(depth.valid[0]);
        assert!(depth.depth_mm[0] as f64 >= r);
        assert!(rgb.data.iter().all(|v| (0.0..=1.0).contains(v)));
        // Nearer walls are brighter.
        let lum = |i: usize| rgb.data[3 * i..3 * i + 3].iter().sum::<f32>();
        let (near, far) = depth
            .depth_mm
            .iter()
            .enumerate()
            .filter(|(i, _)| depth.valid[*i])
            .fold(((0, f32::MAX), (0, 0.0f32)), |(n, f), (i, &d)| {
                (if d < n.1 { (i, d) } else { n }, if d > f.1 { (i, d) } else { f })
            });
        assert!(lum(near.0) > lum(far.0));
    }

    #[test]
    fn camera_outside_is_rejected() {
        let (g, _, r) = cylinder();
        let mut cam = forward_camera(10.0, 8);
        cam.pose.position = [r + 1.0, 0.0, 10.0];
        let err = render_frame(&g, &cam, &AppearanceParams::neutral()).unwrap_err();
        assert!(matches!(err, Error::CameraOutsideLumen));
    }

    #[test]
    fn pose_is_orthonormal() {
        let p = Pose::looking_along(Vec3::zeros(), Vec3::new(0.3, -0.2, 1.0), 0.7);
        let m = nalgebra::Matrix3::from_row_slice(&p.rotation.concat());
        assert!((m.transpose() * m - nalgebra::Matrix3::identity()).norm() < 1e-12);
        assert!((p.to_world(&Vec3::z()) - Vec3::new(0.3, -0.2, 1.0).normalize()).norm() < 1e-12);
    }
}
