//! Dataset generation and the on-disk manifest.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Unit, UnitQuaternion};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::geometry::{generate_geometry, Complexity, LumenSdf, Vec3};
use super::render::{render_with_sdf, AppearanceParams, CameraModel, Pose};
use super::shift::apply_domain_shift;
use crate::error::{Error, Result};
use crate::frame::{DepthMap, RgbFrame};

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Source,
    Target,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Domain {
    pub fn as_str(&self) -> &'static str {
        match self {
            Domain::Source => "source",
            Domain::Target => "target",
        }
    }
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::ConfigInvalid(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl SplitCounts {
    fn get(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train,
            Split::Val => self.val,
            Split::Test => self.test,
        }
    }

    pub fn total(&self) -> usize {
        self.train + self.val + self.test
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainCounts {
    pub source: SplitCounts,
    pub target: SplitCounts,
}

impl Default for DomainCounts {
    fn default() -> Self {
        DomainCounts {
            source: SplitCounts { train: 416, val: 48, test: 48 },
            target: SplitCounts { train: 384, val: 0, test: 128 },
        }
    }
}

/// Appearance of a domain: a centre value plus relative per-frame jitter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DomainStyle {
    pub appearance: AppearanceParams,
    pub jitter: f64,
}

impl DomainStyle {
    /// Tissue rendering for the labeled domain.
    pub fn source_render() -> Self {
        DomainStyle {
            appearance: AppearanceParams {
                base_albedo: [0.85, 0.45, 0.38],
                texture_seed: 0,
                texture_strength: 0.3,
                specular_strength: 0.15,
                vignette_strength: 0.0,
                light_falloff_exp: 1.3,
                noise_sigma: 0.005,
            },
            jitter: 0.1,
        }
    }

    /// Photometric change that turns a rendered frame into a target frame.
    pub fn target_shift() -> Self {
        DomainStyle {
            appearance: AppearanceParams {
                base_albedo: [1.05, 0.85, 0.65],
                texture_seed: 0,
                texture_strength: 0.35,
                specular_strength: 0.35,
                vignette_strength: 0.5,
                light_falloff_exp: 0.6,
                noise_sigma: 0.03,
            },
            jitter: 0.15,
        }
    }

    fn sample(&self, rng: &mut impl Rng) -> AppearanceParams {
        let mut j = |v: f64| v * (1.0 + self.jitter * rng.gen_range(-1.0..=1.0));
        let a = &self.appearance;
        AppearanceParams {
            base_albedo: [j(a.base_albedo[0]), j(a.base_albedo[1]), j(a.base_albedo[2])],
            texture_seed: 0,
            texture_strength: j(a.texture_strength).clamp(0.0, 1.0),
            specular_strength: j(a.specular_strength).clamp(0.0, 1.0),
            vignette_strength: j(a.vignette_strength).clamp(0.0, 1.0),
            light_falloff_exp: j(a.light_falloff_exp).max(0.0),
            noise_sigma: j(a.noise_sigma).max(0.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub seed: u64,
    pub image_size: usize,
    pub fov_deg: f64,
    pub near_mm: f64,
    pub far_mm: f64,
    pub depth_scale_mm_per_unit: f64,
    pub counts: DomainCounts,
    /// Relative frequency of straight, curved and branching scenes.
    pub complexity_weights: [f64; 3],
    /// Frames with fewer valid depth pixels than this fraction are re-drawn.
    pub min_valid_fraction: f64,
    pub source_style: DomainStyle,
    pub target_shift: DomainStyle,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            seed: 0,
            image_size: 256,
            fov_deg: 90.0,
            near_mm: 0.5,
            far_mm: 100.0,
            depth_scale_mm_per_unit: 100.0 / 65535.0,
            counts: DomainCounts::default(),
            complexity_weights: [0.2, 0.4, 0.4],
            min_valid_fraction: 0.3,
            source_style: DomainStyle::source_render(),
            target_shift: DomainStyle::target_shift(),
        }
    }
}

impl GeneratorConfig {
    pub fn desk() -> Self {
        GeneratorConfig { image_size: 64, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        self.camera(Pose::looking_along(Vec3::zeros(), Vec3::z(), 0.0)).validate()?;
        if self.image_size == 0 {
            return Err(Error::ConfigInvalid("image_size must be positive".into()));
        }
        if !(self.depth_scale_mm_per_unit > 0.0) {
            return Err(Error::ConfigInvalid("depth_scale_mm_per_unit must be positive".into()));
        }
        if self.far_mm / self.depth_scale_mm_per_unit > 65535.5 {
            return Err(Error::ConfigInvalid("far_mm does not fit the 16-bit depth encoding".into()));
        }
        if self.complexity_weights.iter().any(|w| !(*w >= 0.0)) || self.complexity_weights.iter().sum::<f64>() <= 0.0 {
            return Err(Error::ConfigInvalid("complexity_weights must be non-negative, not all zero".into()));
        }
        if !(0.0..=1.0).contains(&self.min_valid_fraction) {
            return Err(Error::ConfigInvalid("min_valid_fraction must lie in [0, 1]".into()));
        }
        let mut probe = ChaCha8Rng::seed_from_u64(0);
        self.source_style.sample(&mut probe).validate()?;
        self.target_shift.sample(&mut probe).validate()?;
        Ok(())
    }

    pub fn camera(&self, pose: Pose) -> CameraModel {
        CameraModel {
            fov_deg: self.fov_deg,
            width: self.image_size,
            height: self.image_size,
            near_mm: self.near_mm,
            far_mm: self.far_mm,
            pose,
        }
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(serde_json::to_vec(self).expect("config serializes")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub complexity: Complexity,
    pub geometry_seed: u64,
    pub frame_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: String,
    pub rgb_path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth_path: Option<String>,
    pub domain: Domain,
    pub split: Split,
    pub depth_scale_mm_per_unit: f64,
    pub rgb_sha256: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth_sha256: Option<String>,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub schema_version: u32,
    pub generator_config_hash: String,
    pub seed: u64,
    pub samples: Vec<SampleRecord>,
    /// Directory the relative paths resolve against.
    #[serde(skip)]
    pub root: PathBuf,
}

impl DatasetManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let mut m: DatasetManifest =
            serde_json::from_slice(&bytes).map_err(|source| Error::Json { path: path.to_path_buf(), source })?;
        if m.schema_version != MANIFEST_SCHEMA_VERSION {
            return Err(Error::ConfigInvalid(format!(
                "manifest schema version {} is not supported (expected {MANIFEST_SCHEMA_VERSION})",
                m.schema_version
            )));
        }
        m.root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn to_json(&self) -> Vec<u8> {
        let mut v = serde_json::to_vec_pretty(self).expect("manifest serializes");
        v.push(b'\n');
        v
    }

    /// SHA-256 of the serialized manifest.
    pub fn content_hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_json()))
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for s in &self.samples {
            if !seen.insert(&s.id) {
                return Err(Error::ConfigInvalid(format!("duplicate sample id {}", s.id)));
            }
            let needs_depth = (s.domain == Domain::Source && s.split == Split::Train) || s.split == Split::Test;
            if needs_depth && s.depth_path.is_none() {
                return Err(Error::MissingLabels(format!("sample {} must carry depth", s.id)));
            }
        }
        Ok(())
    }

    pub fn resolve(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn select(&self, domain: Domain, split: Split) -> Vec<&SampleRecord> {
        self.samples.iter().filter(|s| s.domain == domain && s.split == split).collect()
    }

    pub fn load_rgb(&self, rec: &SampleRecord) -> Result<RgbFrame> {
        RgbFrame::load_png(&self.resolve(&rec.rgb_path))
    }

    /// Ground truth of a labeled sample.
    pub fn load_depth(&self, rec: &SampleRecord) -> Result<DepthMap> {
        let rel =
            rec.depth_path.as_ref().ok_or_else(|| Error::MissingLabels(format!("sample {} has no depth", rec.id)))?;
        DepthMap::load_png(&self.resolve(rel), rec.depth_scale_mm_per_unit)
    }
}

/// Seed for a named sub-stream of a global seed.
pub fn derive_seed(global: u64, label: &str) -> u64 {
    let digest = Sha256::digest(format!("{global}:{label}").as_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

/// One rendered, labeled scene.
#[derive(Debug, Clone)]
pub struct Scene {
    pub rgb: RgbFrame,
    pub depth: DepthMap,
    pub provenance: Provenance,
}

/// Renders the source-style view for a frame seed: geometry, camera pose
/// and appearance are all drawn from it.
pub fn render_scene(cfg: &GeneratorConfig, frame_seed: u64) -> Result<Scene> {
    let mut rng = ChaCha8Rng::seed_from_u64(frame_seed);
    let w = cfg.complexity_weights;
    let pick = rng.gen_range(0.0..w.iter().sum::<f64>());
    let complexity = if pick < w[0] {
        Complexity::Straight
    } else if pick < w[0] + w[1] {
        Complexity::Curved
    } else {
        Complexity::Branching
    };
    let geometry_seed = rng.next_u64();
    let geom = generate_geometry(geometry_seed, complexity);
    let sdf = LumenSdf::new(&geom);
    let mut app = cfg.source_style.sample(&mut rng);
    app.texture_seed = rng.next_u64();
    let min_valid = (cfg.min_valid_fraction * (cfg.image_size * cfg.image_size) as f64).ceil() as usize;
    let mut last = None;
    for _ in 0..64 {
        let s = match geom.branches.first() {
            Some(b) => rng.gen_range((b.arclength_mm - 50.0).max(15.0)..(b.arclength_mm - 15.0)),
            None => rng.gen_range(20.0..70.0),
        };
        let pose = sample_pose(&sdf, &geom, s, &mut rng);
        if sdf.value(&pose.origin()) <= cfg.near_mm + 0.5 {
            continue;
        }
        let (rgb, depth) = render_with_sdf(&sdf, &cfg.camera(pose), &app)?;
        let ok = depth.valid_count() >= min_valid;
        last = Some((rgb, depth));
        if ok {
            break;
        }
    }
    let (rgb, depth) = last.ok_or(Error::CameraOutsideLumen)?;
    Ok(Scene { rgb, depth, provenance: Provenance { complexity, geometry_seed, frame_seed } })
}

fn sample_pose(sdf: &LumenSdf, geom: &super::geometry::LumenGeometry, s: f64, rng: &mut impl Rng) -> Pose {
    let (center, tangent) = sdf.parent_frame(s);
    let helper = if tangent.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    let perp = tangent.cross(&helper).normalize();
    let spin =
        UnitQuaternion::from_axis_angle(&Unit::new_normalize(tangent), rng.gen_range(0.0..std::f64::consts::TAU));
    let lateral = spin * perp;
    let offset = lateral * rng.gen_range(0.0..0.45) * geom.radius_at(s);
    let tilt_axis =
        UnitQuaternion::from_axis_angle(&Unit::new_normalize(tangent), rng.gen_range(0.0..std::f64::consts::TAU))
            * perp;
    let tilt =
        UnitQuaternion::from_axis_angle(&Unit::new_normalize(tilt_axis), rng.gen_range(0.0f64..15.0).to_radians());
    let forward = tilt * tangent;
    Pose::looking_along(center + offset, forward, rng.gen_range(0.0..std::f64::consts::TAU))
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(bytes)))
}

/// Loads an existing dataset generated from the same config, if complete.
pub fn existing_dataset(cfg: &GeneratorConfig, out: &Path) -> Option<DatasetManifest> {
    let m = DatasetManifest::load(&out.join(MANIFEST_FILE)).ok()?;
    if m.generator_config_hash != cfg.hash() || m.seed != cfg.seed {
        return None;
    }
    let complete = m
        .samples
        .iter()
        .all(|s| m.resolve(&s.rgb_path).is_file() && s.depth_path.as_ref().is_none_or(|d| m.resolve(d).is_file()));
    complete.then_some(m)
}

/// Renders every sample and writes images, depth maps and the manifest under
/// `out`. Target-train samples are written without depth. If `out` already
/// holds a complete dataset for the same config, nothing is rewritten.
pub fn build_dataset(cfg: &GeneratorConfig, out: &Path) -> Result<DatasetManifest> {
    cfg.validate()?;
    if let Some(m) = existing_dataset(cfg, out) {
        return Ok(m);
    }
    let images = out.join("images");
    let depths = out.join("depth");
    for d in [&images, &depths] {
        fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    let mut samples = Vec::new();
    for domain in [Domain::Source, Domain::Target] {
        let counts = match domain {
            Domain::Source => cfg.counts.source,
            Domain::Target => cfg.counts.target,
        };
        for split in [Split::Train, Split::Val, Split::Test] {
            for i in 0..counts.get(split) {
                let id = format!("{}-{}-{i:04}", domain.as_str(), split.as_str());
                let frame_seed = derive_seed(cfg.seed, &id);
                let scene = render_scene(cfg, frame_seed)?;
                let rgb = match domain {
                    Domain::Source => scene.rgb,
                    Domain::Target => {
                        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(frame_seed, "shift"));
                        let mut app = cfg.target_shift.sample(&mut rng);
                        app.texture_seed = rng.next_u64();
                        apply_domain_shift(&scene.rgb, &app, rng.next_u64())
                    }
                };
                let rgb_rel = format!("images/{id}.png");
                rgb.save_png(&out.join(&rgb_rel))?;
                let with_depth = !(domain == Domain::Target && split == Split::Train);
                let (depth_path, depth_sha256) = if with_depth {
                    let rel = format!("depth/{id}.png");
                    let path = out.join(&rel);
                    scene.depth.save_png(&path, cfg.depth_scale_mm_per_unit)?;
                    (Some(rel), Some(sha256_file(&path)?))
                } else {
                    (None, None)
                };
                samples.push(SampleRecord {
                    rgb_sha256: sha256_file(&out.join(&rgb_rel))?,
                    id,
                    rgb_path: rgb_rel,
                    depth_path,
                    domain,
                    split,
                    depth_scale_mm_per_unit: cfg.depth_scale_mm_per_unit,
                    depth_sha256,
                    provenance: scene.provenance,
                });
            }
        }
    }
    let manifest = DatasetManifest {
        schema_version: MANIFEST_SCHEMA_VERSION,
        generator_config_hash: cfg.hash(),
        seed: cfg.seed,
        samples,
        root: out.to_path_buf(),
    };
    manifest.validate()?;
    manifest.save(&out.join(MANIFEST_FILE))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(counts: DomainCounts) -> GeneratorConfig {
        GeneratorConfig { image_size: 16, counts, ..GeneratorConfig::default() }
    }

    #[test]
    fn source_only_config() {
        let dir = tempfile::tempdir().unwrap();
        let counts =
            DomainCounts { source: SplitCounts { train: 10, val: 0, test: 0 }, target: SplitCounts::default() };
        let m = build_dataset(&tiny(counts), dir.path()).unwrap();
        assert_eq!(m.samples.len(), 10);
        assert!(m.samples.iter().all(|s| s.depth_path.is_some()));
        assert!(dir.path().join("manifest.json").is_file());
        let loaded = DatasetManifest::load(&dir.path().join("manifest.json")).unwrap();
        assert_eq!(loaded.samples, m.samples);
        let d = loaded.load_depth(&loaded.samples[0]).unwrap();
        assert_eq!((d.width, d.height), (16, 16));
    }

    #[test]
    fn target_train_labels_are_withheld() {
        let dir = tempfile::tempdir().unwrap();
        let counts = DomainCounts {
            source: SplitCounts { train: 2, val: 1, test: 1 },
            target: SplitCounts { train: 3, val: 0, test: 2 },
        };
        let m = build_dataset(&tiny(counts), dir.path()).unwrap();
        for s in &m.samples {
            let withheld = s.domain == Domain::Target && s.split == Split::Train;
            assert_eq!(s.depth_path.is_none(), withheld, "{}", s.id);
            if withheld {
                assert!(!dir.path().join(format!("depth/{}.png", s.id)).exists());
            }
        }
        assert_eq!(m.select(Domain::Target, Split::Test).len(), 2);
    }

    #[test]
    fn same_seed_gives_same_manifest_hash() {
        let counts = DomainCounts {
            source: SplitCounts { train: 2, val: 0, test: 1 },
            target: SplitCounts { train: 1, val: 0, test: 1 },
        };
        let cfg = tiny(counts);
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let ha = build_dataset(&cfg, a.path()).unwrap().content_hash();
        let hb = build_dataset(&cfg, b.path()).unwrap().content_hash();
        assert_eq!(ha, hb);
        let other = GeneratorConfig { seed: 1, ..cfg };
        let c = tempfile::tempdir().unwrap();
        assert_ne!(build_dataset(&other, c.path()).unwrap().content_hash(), ha);
    }

    #[test]
    fn target_depth_equals_paired_source_depth() {
        let cfg = GeneratorConfig { image_size: 16, ..GeneratorConfig::default() };
        let scene = render_scene(&cfg, 42).unwrap();
        let again = render_scene(&cfg, 42).unwrap();
        assert_eq!(scene.depth, again.depth);
        assert_eq!(scene.rgb, again.rgb);
    }

    #[test]
    fn manifest_validation_catches_problems() {
        let rec = SampleRecord {
            id: "a".into(),
            rgb_path: "images/a.png".into(),
            depth_path: None,
            domain: Domain::Source,
            split: Split::Train,
            depth_scale_mm_per_unit: 1.0,
            rgb_sha256: String::new(),
            depth_sha256: None,
            provenance: Provenance { complexity: Complexity::Straight, geometry_seed: 0, frame_seed: 0 },
        };
        let m = DatasetManifest {
            schema_version: 1,
            generator_config_hash: String::new(),
            seed: 0,
            samples: vec![rec.clone()],
            root: PathBuf::new(),
        };
        assert!(matches!(m.validate(), Err(Error::MissingLabels(_))));
        let ok = SampleRecord { depth_path: Some("d".into()), ..rec };
        let dup = DatasetManifest { samples: vec![ok.clone(), ok], ..m };
        assert!(matches!(dup.validate(), Err(Error::ConfigInvalid(_))));
    }

    #[test]
    fn unwritable_destination_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("occupied");
        fs::write(&file, b"x").unwrap();
        let err = build_dataset(&tiny(DomainCounts::default()), &file.join("sub")).unwrap_err();
        assert_eq!(err.category(), "IoError");
    }
}
