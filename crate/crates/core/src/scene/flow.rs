//! Ground-truth raw optical flow from hit records, like a motion-vector pass.

use rayon::prelude::*;

use super::render::RenderedFrame;
use crate::geometry::{
    backproject, project, quantize_flow, FlowField, PixelCoord, MAX_VALID_FLOW,
};

/// Raw flow `p_t - p_t'` for every pixel of `curr`.
///
/// Each hit point is carried with its object from the current pose to the
/// object's pose in `prev`, then projected into the previous camera.
/// Visibility in `prev` is ignored. Pixels with no hit are treated as a
/// static point at `far_plane` depth and flagged invalid.
pub fn ground_truth_raw_flow(
    prev: &RenderedFrame,
    curr: &RenderedFrame,
    dt: f64,
    far_plane: f64,
) -> FlowField {
    let k = curr.intrinsics;
    let c2w = curr.world_to_camera.inverse();
    let w = k.width;
    let rows: Vec<Vec<([f64; 2], bool)>> = (0..k.height)
        .into_par_iter()
        .map(|y| {
            (0..w)
                .map(|x| {
                    let p = PixelCoord::new(x as f64, y as f64);
                    let (world_prev, hit) = match &curr.hits[y * w + x] {
                        Some(h) => {
                            let pose = &prev.object_poses[h.object];
                            (pose.rotation() * h.local + pose.translation(), true)
                        }
                        None => {
                            let p_cam = backproject(p, far_plane, &k).expect("far plane is positive");
                            (c2w.rotation() * p_cam + c2w.translation(), false)
                        }
                    };
                    let cam_prev =
                        prev.world_to_camera.rotation() * world_prev + prev.world_to_camera.translation();
                    match project(&cam_prev, &k) {
                        Ok(q) => {
                            let (u, v) = (p.x - q.x, p.y - q.y);
                            if u.abs() < MAX_VALID_FLOW && v.abs() < MAX_VALID_FLOW {
                                ([quantize_flow(u), quantize_flow(v)], hit)
                            } else {
                                ([0.0, 0.0], false)
                            }
                        }
                        Err(_) => ([0.0, 0.0], false),
                    }
                })
                .collect()
        })
        .collect();
    let (data, valid) = rows.into_iter().flatten().unzip();
    FlowField::new(w, k.height, dt, data, valid).expect("dimensions are consistent")
}
