use std::path::Path;
use std::sync::Arc;

use super::{Capability, GuidanceError, GuidanceProvider, GuidanceRequest, GuidanceResponse, Image, VIEW_COUNT};
use crate::dataset::{DatasetError, DatasetManifest};

/// Returns zero residuals for every view.
#[derive(Debug, Clone)]
pub struct NullProvider {
    pub capability: Capability,
}

impl NullProvider {
    pub fn new(capability: Capability) -> Self {
        NullProvider { capability }
    }
}

impl GuidanceProvider for NullProvider {
    fn name(&self) -> &str {
        "null"
    }

    fn capability(&self) -> Capability {
        self.capability
    }

    fn guide(&self, request: &GuidanceRequest) -> Result<GuidanceResponse, GuidanceError> {
        request.validate()?;
        Ok(GuidanceResponse { residuals: request.rendered_views.iter().map(|v| Image::zeros(v.height, v.width)).collect() })
    }
}

type TargetFn = dyn Fn(usize, &Image) -> Image + Send + Sync;

/// Where a photometric provider gets its target images.
#[derive(Clone)]
pub enum TargetSource {
    /// The conditioning (pre-edit) views; a fixed point for unedited scenes.
    Original,
    /// `(1 − strength) · original + strength · rgb`.
    Tint { rgb: [f32; 3], strength: f32 },
    /// Arbitrary function of `(view index, original view)`.
    Transform(Arc<TargetFn>),
}

impl std::fmt::Debug for TargetSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TargetSource::Original => write!(f, "Original"),
            TargetSource::Tint { rgb, strength } => write!(f, "Tint({rgb:?}, {strength})"),
            TargetSource::Transform(_) => write!(f, "Transform"),
        }
    }
}

/// Residual `x − target`, the gradient of `½‖x − target‖²` w.r.t. the render.
pub fn photometric_residual(rendered: &Image, target: &Image) -> Image {
    Image { height: rendered.height, width: rendered.width, data: rendered.data.iter().zip(&target.data).map(|(x, t)| x - t).collect() }
}

/// Stand-in for a diffusion model that pulls renders toward known targets.
#[derive(Debug, Clone)]
pub struct PhotometricProvider {
    pub source: TargetSource,
    pub capability: Capability,
}

impl PhotometricProvider {
    pub fn new(source: TargetSource, capability: Capability) -> Self {
        PhotometricProvider { source, capability }
    }

    pub fn target(&self, view: usize, original: &Image) -> Image {
        match &self.source {
            TargetSource::Original => original.clone(),
            TargetSource::Tint { rgb, strength } => {
                let n = original.pixel_count();
                let mut out = original.clone();
                for (c, &col) in rgb.iter().enumerate() {
                    for v in &mut out.data[c * n..(c + 1) * n] {
                        *v = (1.0 - strength) * *v + strength * col;
                    }
                }
                out
            }
            TargetSource::Transform(f) => f(view, original),
        }
    }
}

impl GuidanceProvider for PhotometricProvider {
    fn name(&self) -> &str {
        "photometric"
    }

    fn capability(&self) -> Capability {
        self.capability
    }

    fn guide(&self, request: &GuidanceRequest) -> Result<GuidanceResponse, GuidanceError> {
        request.validate()?;
        let residuals = (0..VIEW_COUNT)
            .map(|v| {
                let target = self.target(v, &request.original_views[v]);
                photometric_residual(&request.rendered_views[v], &target)
            })
            .collect();
        Ok(GuidanceResponse { residuals })
    }
}

/// Precomputed target images keyed by camera pose. The directory holds a
/// dataset manifest whose image entries point at 3-channel TGRF targets.
#[derive(Debug, Clone)]
pub struct FileTargetProvider {
    targets: Vec<([f32; 12], Image)>,
    capability: Capability,
}

/// Largest per-entry pose difference accepted as the same camera.
const POSE_TOLERANCE: f32 = 1e-5;

impl FileTargetProvider {
    pub fn load(dir: impl AsRef<Path>, capability: Capability) -> Result<Self, DatasetError> {
        let dir = dir.as_ref();
        let manifest = DatasetManifest::load(dir)?;
        let views = manifest.load_views(dir)?;
        let mut targets = Vec::with_capacity(views.len());
        for ((cam, map), rec) in views.iter().zip(&manifest.images) {
            let img = Image::from_feature_map(map).ok_or_else(|| DatasetError::Container {
                name: rec.name.clone(),
                source: crate::container::ContainerError::Feature(crate::features::FeatureError::DimMismatch { expected: 3, got: map.dim }),
            })?;
            targets.push((cam.pose_f32(), img));
        }
        Ok(FileTargetProvider { targets, capability })
    }

    pub fn from_targets(targets: Vec<([f32; 12], Image)>, capability: Capability) -> Self {
        FileTargetProvider { targets, capability }
    }

    fn find(&self, pose: &[f32; 12]) -> Option<&Image> {
        self.targets.iter().find(|(p, _)| p.iter().zip(pose).all(|(a, b)| (a - b).abs() <= POSE_TOLERANCE)).map(|(_, img)| img)
    }
}

impl GuidanceProvider for FileTargetProvider {
    fn name(&self) -> &str {
        "files"
    }

    fn capability(&self) -> Capability {
        self.capability
    }

    fn guide(&self, request: &GuidanceRequest) -> Result<GuidanceResponse, GuidanceError> {
        request.validate()?;
        let mut residuals = Vec::with_capacity(VIEW_COUNT);
        for (v, (pose, x)) in request.poses.iter().zip(&request.rendered_views).enumerate() {
            let target = self.find(pose).ok_or(GuidanceError::MissingTarget(v))?;
            if (target.height, target.width) != (x.height, x.width) {
                return Err(GuidanceError::InvalidRequest(format!("view {v}: target size differs from render")));
            }
            residuals.push(photometric_residual(x, target));
        }
        Ok(GuidanceResponse { residuals })
    }
}
