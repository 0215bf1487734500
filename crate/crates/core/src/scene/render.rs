//! CPU raycaster producing Z-depth, segmentation and per-pixel hit records.

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::layout::{EnvironmentSpec, SemanticClass, Shape};
use super::world::WorldState;
use crate::geometry::{backproject, DepthField, Intrinsics, PixelCoord, RigidTransform};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraConfig {
    pub width: usize,
    pub height: usize,
    pub hfov_deg: f64,
    pub mount_height: f64,
}

impl Default for CameraConfig {
    fn default() -> Self {
        Self {
            width: 64,
            height: 64,
            hfov_deg: 90.0,
            mount_height: 1.2,
        }
    }
}

impl CameraConfig {
    pub fn intrinsics(&self) -> Intrinsics {
        Intrinsics::from_hfov(self.width, self.height, self.hfov_deg.to_radians())
            .expect("camera config yields valid intrinsics")
    }
}

/// Per-pixel segmentation ids (0 = background).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegField {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl SegField {
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }
}

/// Surface hit: which object, and where on it in the object's local frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HitRecord {
    pub object: usize,
    pub local: Vector3<f64>,
}

/// Output of one render pass plus the poses needed to relate it to other
/// frames.
#[derive(Debug, Clone)]
pub struct RenderedFrame {
    pub depth: DepthField,
    pub seg: SegField,
    pub hits: Vec<Option<HitRecord>>,
    pub object_poses: Vec<RigidTransform>,
    pub world_to_camera: RigidTransform,
    pub intrinsics: Intrinsics,
}

impl RenderedFrame {
    /// Transform mapping this frame's camera coordinates into `prior`'s.
    pub fn relative_to(&self, prior: &RenderedFrame) -> RigidTransform {
        prior.world_to_camera.compose(&self.world_to_camera.inverse())
    }
}

const EPS: f64 = 1e-9;

fn intersect_ground(o: &Vector3<f64>, d: &Vector3<f64>) -> Option<f64> {
    if d.z < -EPS {
        let t = -o.z / d.z;
        (t > EPS).then_some(t)
    } else {
        None
    }
}

fn intersect_box(o: &Vector3<f64>, d: &Vector3<f64>, hx: f64, hy: f64, h: f64) -> Option<f64> {
    let lo = [-hx, -hy, 0.0];
    let hi = [hx, hy, h];
    let mut t0 = f64::NEG_INFINITY;
    let mut t1 = f64::INFINITY;
    for i in 0..3 {
        if d[i].abs() < 1e-15 {
            if o[i] < lo[i] || o[i] > hi[i] {
                return None;
            }
        } else {
            let a = (lo[i] - o[i]) / d[i];
            let b = (hi[i] - o[i]) / d[i];
            t0 = t0.max(a.min(b));
            t1 = t1.min(a.max(b));
        }
    }
    (t1 >= t0 && t0 > EPS).then_some(t0)
}

fn intersect_cylinder(o: &Vector3<f64>, d: &Vector3<f64>, r: f64, h: f64) -> Option<f64> {
    let mut best: Option<f64> = None;
    let a = d.x * d.x + d.y * d.y;
    if a > 1e-15 {
        let b = 2.0 * (o.x * d.x + o.y * d.y);
        let c = o.x * o.x + o.y * o.y - r * r;
        let disc = b * b - 4.0 * a * c;
        if disc >= 0.0 {
            let t = (-b - disc.sqrt()) / (2.0 * a);
            let z = o.z + t * d.z;
            if t > EPS && (0.0..=h).contains(&z) {
                best = Some(t);
            }
        }
    }
    if d.z.abs() > 1e-15 {
        let t = (h - o.z) / d.z;
        let x = o.x + t * d.x;
        let y = o.y + t * d.y;
        if t > EPS && x * x + y * y <= r * r && best.is_none_or(|b| t < b) {
            best = Some(t);
        }
    }
    best
}

/// Render the scene from the agent's camera.
pub fn raycast_render(state: &WorldState, camera: &CameraConfig) -> RenderedFrame {
    let w2c = state.world_to_camera(camera.mount_height);
    render_scene(state.spec(), state.object_poses(), &w2c, camera)
}

/// Render arbitrary object poses from an arbitrary camera.
pub fn render_scene(
    spec: &EnvironmentSpec,
    poses: &[RigidTransform],
    world_to_camera: &RigidTransform,
    camera: &CameraConfig,
) -> RenderedFrame {
    let k = camera.intrinsics();
    let c2w = world_to_camera.inverse();
    let origin = *c2w.translation();
    let inv_poses: Vec<RigidTransform> = poses.iter().map(|p| p.inverse()).collect();
    let w = k.width;

    let rows: Vec<Vec<(f32, u8, Option<HitRecord>)>> = (0..k.height)
        .into_par_iter()
        .map(|y| {
            (0..w)
                .map(|x| {
                    let d_cam = Vector3::new(
                        (x as f64 - k.principal_x) / k.focal,
                        (y as f64 - k.principal_y) / k.focal,
                        1.0,
                    );
                    let d_world = c2w.rotation() * d_cam;
                    let mut nearest: Option<(f64, usize)> = None;
                    for (i, obj) in spec.objects.iter().enumerate() {
                        let inv = &inv_poses[i];
                        let o = inv.rotation() * origin + inv.translation();
                        let d = inv.rotation() * d_world;
                        let t = match obj.shape {
                            Shape::GroundPlane => intersect_ground(&o, &d),
                            Shape::Box {
                                half_x,
                                half_y,
                                height,
                            } => intersect_box(&o, &d, half_x, half_y, height),
                            Shape::Cylinder { radius, height } => {
                                intersect_cylinder(&o, &d, radius, height)
                            }
                        };
                        if let Some(t) = t {
                            if nearest.is_none_or(|(best, _)| t < best) {
                                nearest = Some((t, i));
                            }
                        }
                    }
                    match nearest {
                        None => (f32::INFINITY, 0u8, None),
                        Some((t, i)) => {
                            // The ray has unit Z in camera space, so t is Z-depth.
                            let z = (t as f32).max(f32::MIN_POSITIVE);
                            let p_cam = backproject(PixelCoord::new(x as f64, y as f64), f64::from(z), &k)
                                .expect("positive depth");
                            let world = c2w.rotation() * p_cam + c2w.translation();
                            let local = inv_poses[i].rotation() * world + inv_poses[i].translation();
                            let obj = &spec.objects[i];
                            let class = match obj.shape {
                                Shape::GroundPlane => spec.ground_class([world.x, world.y]),
                                _ => obj.class,
                            };
                            (z, spec.class_id(class), Some(HitRecord { object: i, local }))
                        }
                    }
                })
                .collect()
        })
        .collect();

    let n = k.pixel_count();
    let mut depth = Vec::with_capacity(n);
    let mut seg = Vec::with_capacity(n);
    let mut hits = Vec::with_capacity(n);
    for (z, s, h) in rows.into_iter().flatten() {
        depth.push(z);
        seg.push(s);
        hits.push(h);
    }
    RenderedFrame {
        depth: DepthField::new(k.width, k.height, depth).expect("raycast depths are positive"),
        seg: SegField {
            width: k.width,
            height: k.height,
            data: seg,
        },
        hits,
        object_poses: poses.to_vec(),
        world_to_camera: *world_to_camera,
        intrinsics: k,
    }
}

/// Mask of pixels showing a given semantic class.
pub fn class_mask(frame: &RenderedFrame, spec: &EnvironmentSpec, class: SemanticClass) -> Vec<bool> {
    let id = spec.class_id(class);
    frame.seg.data.iter().map(|&s| s == id && id != 0).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::layout::{
        build_environment, ground_pose, EnvironmentName, SceneConfig, SceneObject, SpeedMode,
    };
    use crate::scene::world::world_to_camera;
    use std::sync::Arc;

    fn empty_spec() -> EnvironmentSpec {
        let mut spec = build_environment(
            EnvironmentName::StraightRoad,
            SpeedMode::NORMAL,
            12.0,
            0,
            &SceneConfig::default(),
        )
        .unwrap();
        spec.objects.clear();
        spec.pedestrian_routes.clear();
        spec
    }

    fn cam(w: usize) -> CameraConfig {
        CameraConfig {
            width: w,
            height: w,
            hfov_deg: 90.0,
            mount_height: 1.2,
        }
    }

    #[test]
    fn empty_scene_is_all_background() {
        let spec = empty_spec();
        let f = render_scene(&spec, &[], &world_to_camera([0.0, 0.0], 0.0, 1.2), &cam(16));
        assert!(f.depth.data().iter().all(|z| z.is_infinite()));
        assert!(f.seg.data.iter().all(|&s| s == 0));
        assert!(f.hits.iter().all(|h| h.is_none()));
    }

    #[test]
    fn frontal_wall_has_constant_depth() {
        let mut spec = empty_spec();
        spec.objects.push(SceneObject {
            id: 0,
            class: SemanticClass::Building,
            shape: Shape::Box {
                half_x: 0.5,
                half_y: 500.0,
                height: 500.0,
            },
            pose: ground_pose(10.5, 0.0, 0.0),
            velocity: Vector3::zeros(),
            is_dynamic: false,
        });
        let poses: Vec<_> = spec.objects.iter().map(|o| o.pose).collect();
        // Camera at mid-height of a tall wall so every ray hits the face x=10.
        let w2c = world_to_camera([0.0, 0.0], 0.0, 250.0);
        let f = render_scene(&spec, &poses, &w2c, &cam(32));
        for z in f.depth.data() {
            assert!((z - 10.0).abs() < 1e-5, "{z}");
        }
    }

    #[test]
    fn centered_pedestrian_is_symmetric() {
        let mut spec = empty_spec();
        spec.objects.push(SceneObject {
            id: 0,
            class: SemanticClass::Pedestrian,
            shape: Shape::Cylinder {
                radius: 0.3,
                height: 1.75,
            },
            pose: ground_pose(6.0, 0.0, 0.0),
            velocity: Vector3::zeros(),
            is_dynamic: true,
        });
        let poses: Vec<_> = spec.objects.iter().map(|o| o.pose).collect();
        let f = render_scene(&spec, &poses, &world_to_camera([0.0, 0.0], 0.0, 1.2), &cam(64));
        let mask = class_mask(&f, &spec, SemanticClass::Pedestrian);
        let count = mask.iter().filter(|m| **m).count();
        assert!(count > 10);
        // Mirror around the central column (principal point at 31.5).
        for y in 0..64 {
            for x in 0..64 {
                assert_eq!(mask[y * 64 + x], mask[y * 64 + (63 - x)]);
            }
        }
        // Contiguous per row.
        for y in 0..64 {
            let xs: Vec<usize> = (0..64).filter(|x| mask[y * 64 + x]).collect();
            if let (Some(a), Some(b)) = (xs.first(), xs.last()) {
                assert_eq!(b - a + 1, xs.len());
            }
        }
    }

    #[test]
    fn ground_classes_visible() {
        let spec = build_environment(
            EnvironmentName::StraightRoad,
            SpeedMode::NORMAL,
            12.0,
            0,
            &SceneConfig::default(),
        )
        .unwrap();
        let state = WorldState::new(Arc::new(spec));
        let f = raycast_render(&state, &CameraConfig::default());
        let road = state.spec().class_id(SemanticClass::Road);
        let building = state.spec().class_id(SemanticClass::Building);
        assert!(f.seg.data.contains(&road));
        assert!(f.seg.data.contains(&building));
        // Bottom center pixel sees the road just in front of the agent.
        assert_eq!(f.seg.get(32, 63), road);
    }

    #[test]
    fn hit_records_reconstruct_depth() {
        let spec = build_environment(
            EnvironmentName::STurn,
            SpeedMode::NORMAL,
            12.0,
            4,
            &SceneConfig::default(),
        )
        .unwrap();
        let state = WorldState::new(Arc::new(spec));
        let f = raycast_render(&state, &cam(24));
        for (i, h) in f.hits.iter().enumerate() {
            if let Some(h) = h {
                let world = f.object_poses[h.object].rotation() * h.local + f.object_poses[h.object].translation();
                let cam_p = f.world_to_camera.rotation() * world + f.world_to_camera.translation();
                let z = f.depth.data()[i] as f64;
                assert!((cam_p.z - z).abs() < 1e-9 * z.max(1.0));
            }
        }
    }
}
