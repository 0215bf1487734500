//! Write and read flow, depth, pose and intrinsics files.

use flowfact::geometry::{DepthField, FlowField, Intrinsics, RigidTransform};
use flowfact::harness::formats::{read_depth, read_flo, read_intrinsics, read_pose, write_depth, write_flo, write_intrinsics, write_pose, PoseFile};
use nalgebra::Vector3;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join("flowfact_formats");
    std::fs::create_dir_all(&dir)?;
    let flow = FlowField::new(2, 1, 0.1, vec![[1.5, -0.25], [0.0, 3.0]], vec![true, false])?;
    write_flo(&dir.join("f.flo"), &flow)?;
    let back = read_flo(&dir.join("f.flo"), 0.1)?;
    println!("flow {:?} valid {:?}", back.data(), back.valid());

    let depth = DepthField::new(3, 1, vec![2.0, f32::INFINITY, 40.5])?;
    write_depth(&dir.join("d.dpf"), &depth)?;
    println!("depth {:?}", read_depth(&dir.join("d.dpf"))?.data());

    let m = RigidTransform::from_axis_angle(Vector3::z(), 0.05, Vector3::new(0.0, 0.0, 0.8));
    write_pose(&dir.join("pose.toml"), &PoseFile::from_transform(&m, 1.0 / 12.0))?;
    print!("{}", std::fs::read_to_string(dir.join("pose.toml"))?);
    assert_eq!(read_pose(&dir.join("pose.toml"))?.transform()?, m);

    write_intrinsics(&dir.join("k.toml"), &Intrinsics::from_hfov(64, 48, 1.2)?)?;
    println!("{:?}", read_intrinsics(&dir.join("k.toml"))?);
    Ok(())
}
