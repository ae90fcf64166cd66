use super::rng::{stream, StreamKind};
use super::NoiseSpec;
use crate::geom::{project, CameraIntrinsics, Pose, Rotation};
use nalgebra::{Matrix3, Vector2, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Layout {
    Orbit,
    Forward,
    Random,
}

impl std::str::FromStr for Layout {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "orbit" => Ok(Layout::Orbit),
            "forward" => Ok(Layout::Forward),
            "random" => Ok(Layout::Random),
            other => Err(format!("unknown layout {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SceneCamera {
    pub intrinsics: CameraIntrinsics,
    pub pose: Pose,
}

#[derive(Debug, Clone, Copy)]
pub struct ScenePoint {
    pub position: Vector3<f64>,
    pub color: [f64; 3],
}

/// A ground-truth 2D observation of a track.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GtObservation {
    pub camera: usize,
    pub keypoint: usize,
    pub pixel: Vector2<f64>,
}

/// Ground-truth track: one scene point and all cameras observing it.
#[derive(Debug, Clone)]
pub struct GtTrack {
    pub point: usize,
    pub observations: Vec<GtObservation>,
}

#[derive(Debug, Clone)]
pub struct Scene {
    pub cameras: Vec<SceneCamera>,
    pub points: Vec<ScenePoint>,
    pub tracks: Vec<GtTrack>,
    pub seed: u64,
}

impl Scene {
    /// Bounding-sphere radius of the point cloud around its centroid.
    /// Generation normalizes this to 1, so tolerances are scale-free.
    pub fn extent(&self) -> f64 {
        if self.points.is_empty() {
            return 1.0;
        }
        let centroid = self.points.iter().map(|p| p.position).sum::<Vector3<f64>>()
            / self.points.len() as f64;
        self.points
            .iter()
            .map(|p| (p.position - centroid).norm())
            .fold(0.0, f64::max)
    }

    pub fn poses(&self) -> Vec<Pose> {
        self.cameras.iter().map(|c| c.pose).collect()
    }

    pub fn intrinsics(&self) -> Vec<CameraIntrinsics> {
        self.cameras.iter().map(|c| c.intrinsics).collect()
    }
}

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("could not place point {point} visibly in >= 2 cameras after {retries} retries")]
    InfeasibleLayout { point: usize, retries: usize },
    #[error("need at least 2 cameras and 8 points (got {cameras}, {points})")]
    TooSmall { cameras: usize, points: usize },
}

#[derive(Debug, Clone, Copy)]
pub struct SceneConfig {
    pub n_cameras: usize,
    pub n_points: usize,
    pub layout: Layout,
    pub seed: u64,
    pub image_width: usize,
    pub image_height: usize,
    /// Focal length in pixels; by default equal to the image width, which
    /// comfortably frames the unit point cloud from the orbit distance.
    pub focal: f64,
}

impl SceneConfig {
    pub fn new(n_cameras: usize, n_points: usize, layout: Layout, seed: u64) -> Self {
        SceneConfig {
            n_cameras,
            n_points,
            layout,
            seed,
            image_width: 64,
            image_height: 64,
            focal: 64.0,
        }
    }

    pub fn with_image_size(mut self, width: usize, height: usize) -> Self {
        self.image_width = width;
        self.image_height = height;
        self.focal = width as f64;
        self
    }
}

/// Generates a scene with default desk-scale imaging parameters.
pub fn generate_scene(
    n_cameras: usize,
    n_points: usize,
    layout: Layout,
    seed: u64,
) -> Result<Scene, SynthError> {
    generate_scene_with(&SceneConfig::new(n_cameras, n_points, layout, seed))
}

pub fn generate_scene_with(cfg: &SceneConfig) -> Result<Scene, SynthError> {
    if cfg.n_cameras < 2 || cfg.n_points < 8 {
        return Err(SynthError::TooSmall { cameras: cfg.n_cameras, points: cfg.n_points });
    }
    let cameras = place_cameras(cfg);
    let points = place_points(cfg, &cameras)?;
    let tracks = build_tracks(&cameras, &points);
    Ok(Scene { cameras, points, tracks, seed: cfg.seed })
}

fn unit_vector(rng: &mut impl Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::new(
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
        );
        let n = v.norm();
        if n > 1e-6 {
            return v / n;
        }
    }
}

fn ball_point(rng: &mut impl Rng) -> Vector3<f64> {
    let dir = unit_vector(rng);
    let r: f64 = rng.random_range(0.0f64..1.0).cbrt();
    dir * r
}

/// World-to-camera rotation looking from `center` toward `target`, with
/// image y pointing along world -y (world y is "up").
fn look_at(center: &Vector3<f64>, target: &Vector3<f64>) -> Rotation {
    let z = (target - center).normalize();
    let mut up = Vector3::new(0.0, 1.0, 0.0);
    if z.dot(&up).abs() > 0.99 {
        up = Vector3::new(1.0, 0.0, 0.0);
    }
    let y = -up + z * z.dot(&up); // project -up orthogonal to z
    let y = y.normalize();
    let x = y.cross(&z);
    Rotation::from_matrix_unchecked(Matrix3::from_rows(&[
        x.transpose(),
        y.transpose(),
        z.transpose(),
    ]))
}

fn place_cameras(cfg: &SceneConfig) -> Vec<SceneCamera> {
    let k = CameraIntrinsics::centered(cfg.focal, cfg.image_width, cfg.image_height);
    let n = cfg.n_cameras;
    (0..n)
        .map(|i| {
            let mut rng = stream(cfg.seed, StreamKind::Cameras, i as u64);
            let center = match cfg.layout {
                Layout::Orbit => {
                    let az = 2.0 * std::f64::consts::PI * i as f64 / n as f64
                        + rng.random_range(-0.05..0.05);
                    let elev: f64 = rng.random_range(-0.25..0.25);
                    let radius = 3.0 + rng.random_range(-0.2..0.2);
                    Vector3::new(
                        radius * elev.cos() * az.cos(),
                        radius * elev.sin(),
                        radius * elev.cos() * az.sin(),
                    )
                }
                Layout::Forward => {
                    let t = i as f64 / n.max(2) as f64;
                    Vector3::new(
                        rng.random_range(-0.3..0.3),
                        rng.random_range(-0.3..0.3),
                        -3.5 + 1.5 * t,
                    )
                }
                Layout::Random => unit_vector(&mut rng) * rng.random_range(2.5..3.5),
            };
            let target = Vector3::new(
                rng.random_range(-0.05..0.05),
                rng.random_range(-0.05..0.05),
                rng.random_range(-0.05..0.05),
            );
            let pose = Pose::from_rotation_center(look_at(&center, &target), &center);
            SceneCamera { intrinsics: k, pose }
        })
        .collect()
}

fn visible_in(k: &CameraIntrinsics, pose: &Pose, x: &Vector3<f64>) -> Option<Vector2<f64>> {
    // Keep a margin so pixel noise cannot push observations out of frame.
    let margin = 2.0;
    match project(k, pose, x) {
        Ok(px)
            if px.x >= margin
                && px.y >= margin
                && px.x < k.width as f64 - margin
                && px.y < k.height as f64 - margin =>
        {
            Some(px)
        }
        _ => None,
    }
}

fn place_points(cfg: &SceneConfig, cameras: &[SceneCamera]) -> Result<Vec<ScenePoint>, SynthError> {
    const RETRIES: usize = 200;
    let mut points = Vec::with_capacity(cfg.n_points);
    for i in 0..cfg.n_points {
        let mut rng = stream(cfg.seed, StreamKind::Points, i as u64);
        let mut placed = None;
        for _ in 0..RETRIES {
            let candidate = ball_point(&mut rng);
            let visible = cameras
                .iter()
                .filter(|c| visible_in(&c.intrinsics, &c.pose, &candidate).is_some())
                .count();
            if visible >= 2 {
                placed = Some(candidate);
                break;
            }
        }
        let position =
            placed.ok_or(SynthError::InfeasibleLayout { point: i, retries: RETRIES })?;
        let color = [
            rng.random_range(0.1..1.0),
            rng.random_range(0.1..1.0),
            rng.random_range(0.1..1.0),
        ];
        points.push(ScenePoint { position, color });
    }

    // Normalize to a unit bounding sphere around the centroid so tolerances
    // and perturbation fractions are scale-free.
    let centroid =
        points.iter().map(|p| p.position).sum::<Vector3<f64>>() / points.len() as f64;
    let radius = points
        .iter()
        .map(|p| (p.position - centroid).norm())
        .fold(0.0, f64::max)
        .max(1e-12);
    for p in &mut points {
        p.position = (p.position - centroid) / radius;
    }
    // Re-check visibility after normalization; the transform is mild but the
    // margins are tight.
    for (i, p) in points.iter().enumerate() {
        let visible = cameras
            .iter()
            .filter(|c| visible_in(&c.intrinsics, &c.pose, &p.position).is_some())
            .count();
        if visible < 2 {
            return Err(SynthError::InfeasibleLayout { point: i, retries: RETRIES });
        }
    }
    Ok(points)
}

fn build_tracks(cameras: &[SceneCamera], points: &[ScenePoint]) -> Vec<GtTrack> {
    let mut next_keypoint = vec![0usize; cameras.len()];
    points
        .iter()
        .enumerate()
        .map(|(pi, p)| {
            let observations = cameras
                .iter()
                .enumerate()
                .filter_map(|(ci, cam)| {
                    visible_in(&cam.intrinsics, &cam.pose, &p.position).map(|pixel| {
                        let keypoint = next_keypoint[ci];
                        next_keypoint[ci] += 1;
                        GtObservation { camera: ci, keypoint, pixel }
                    })
                })
                .collect();
            GtTrack { point: pi, observations }
        })
        .collect()
}

/// Perturbs every pose except camera 0 (the gauge anchor): the rotation is
/// left-multiplied by a random-axis rotation of exactly the configured
/// magnitude and the camera center is shifted by exactly
/// `pose_translation_perturb * extent` in a random direction.
pub fn perturb_poses(scene: &Scene, spec: &NoiseSpec) -> Vec<Pose> {
    spec.validate();
    let angle = spec.pose_rotation_perturb_deg.to_radians();
    let shift = spec.pose_translation_perturb * scene.extent();
    scene
        .cameras
        .iter()
        .enumerate()
        .map(|(i, cam)| {
            if i == 0 || (angle == 0.0 && shift == 0.0) {
                return cam.pose;
            }
            let mut rng = stream(spec.seed, StreamKind::PosePerturb, i as u64);
            let rotation = Rotation::from_axis_angle(&unit_vector(&mut rng), angle) * cam.pose.rotation;
            let center = cam.pose.center() + unit_vector(&mut rng) * shift;
            Pose::from_rotation_center(rotation, &center)
        })
        .collect()
}

/// Renders one reference image per camera using the ground-truth poses.
pub fn render_reference_images(
    scene: &Scene,
    gaussians: &crate::splat::GaussianSet,
    size: (usize, usize),
) -> Vec<crate::img::ImageBuffer> {
    scene
        .cameras
        .iter()
        .map(|cam| {
            let mut k = cam.intrinsics;
            // Allow rendering at a resolution other than the observation
            // resolution; intrinsics scale accordingly.
            let (sx, sy) = (size.0 as f64 / k.width as f64, size.1 as f64 / k.height as f64);
            k = CameraIntrinsics::new(
                k.fx * sx,
                k.fy * sy,
                k.cx * sx,
                k.cy * sy,
                size.0,
                size.1,
            );
            crate::splat::render(gaussians, &k, &cam.pose, &crate::splat::RenderOptions::default())
                .image
        })
        .collect()
}
