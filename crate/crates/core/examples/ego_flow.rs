//! Ego flow of a forward-moving camera over a flat wall.

use flowfact::geometry::{ego_flow_field, DepthField, Intrinsics, RigidTransform};
use nalgebra::Vector3;

fn main() {
    let k = Intrinsics::from_hfov(9, 7, 90f64.to_radians()).unwrap();
    let depth = DepthField::filled(9, 7, 5.0).unwrap();
    // The camera moved 0.5 m forward, so current points sit 0.5 m deeper in
    // the prior camera frame.
    let current_to_prior = RigidTransform::from_translation(Vector3::new(0.0, 0.0, 0.5));
    let flow = ego_flow_field(&depth, &current_to_prior, &k, 1.0 / 12.0, 100.0).unwrap();
    for y in 0..flow.height() {
        let row: Vec<String> = (0..flow.width())
            .map(|x| {
                let [u, v] = flow.get(x, y);
                format!("{u:+.2},{v:+.2}")
            })
            .collect();
        println!("{}", row.join("  "));
    }
    println!("expansion away from the center; max |flow| {:.3} px/frame", flow.max_abs());
}
