//! Procedural lumen renderer producing a labeled source domain and an
//! appearance-shifted target domain with the same geometric ground truth.

pub mod dataset;
pub mod geometry;
pub mod noise;
pub mod render;
pub mod shift;

pub use dataset::{
    build_dataset, derive_seed, existing_dataset, render_scene, DatasetManifest, Domain, DomainCounts, DomainStyle,
    GeneratorConfig, SampleRecord, Split, SplitCounts, MANIFEST_FILE,
};
pub use geometry::{generate_geometry, BranchSpec, Complexity, LumenGeometry, LumenSdf};
pub use render::{render_frame, AppearanceParams, CameraModel, Pose};
pub use shift::apply_domain_shift;
