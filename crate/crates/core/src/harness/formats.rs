//! File formats: Middlebury `.flo` flow, `DPF1` depth, TOML pose and
//! intrinsics, 8-bit PNG segmentation, and color-coded flow images.

use std::path::Path;

use image::{GrayImage, Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::geometry::{quantize_to, DepthField, FlowField, Intrinsics, RigidTransform, FILE_FLOW_QUANTUM};
use crate::scene::SegField;

pub const FLO_TAG: f32 = 202021.25;
pub const DEPTH_MAGIC: &[u8; 4] = b"DPF1";
/// Middlebury convention: components above this magnitude mean "unknown".
pub const FLO_UNKNOWN: f32 = 1e10;
const FLO_UNKNOWN_THRESHOLD: f32 = 1e9;

fn format_err(path: &Path, offset: usize, message: impl Into<String>) -> HarnessError {
    HarnessError::Format {
        file: path.display().to_string(),
        offset,
        message: message.into(),
    }
}

fn io_err(path: &Path, e: std::io::Error) -> HarnessError {
    HarnessError::Io(format!("{}: {e}", path.display()))
}

fn read_header_dims(bytes: &[u8], path: &Path, what: &str) -> Result<(usize, usize), HarnessError> {
    if bytes.len() < 12 {
        return Err(format_err(path, bytes.len(), format!("truncated {what} header ({} bytes)", bytes.len())));
    }
    let w = i32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    let h = i32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if w <= 0 {
        return Err(format_err(path, 4, format!("width {w} is not positive")));
    }
    if h <= 0 {
        return Err(format_err(path, 8, format!("height {h} is not positive")));
    }
    Ok((w as usize, h as usize))
}

/// Encode flow as Middlebury bytes. Values are snapped to the file grid so
/// that written fields add and subtract exactly; invalid pixels are written
/// as "unknown".
pub fn encode_flo(flow: &FlowField) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + flow.data().len() * 8);
    out.extend_from_slice(&FLO_TAG.to_le_bytes());
    out.extend_from_slice(&(flow.width() as i32).to_le_bytes());
    out.extend_from_slice(&(flow.height() as i32).to_le_bytes());
    for (v, ok) in flow.data().iter().zip(flow.valid()) {
        for c in v {
            let x = if *ok {
                quantize_to(*c, FILE_FLOW_QUANTUM) as f32
            } else {
                FLO_UNKNOWN
            };
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

pub fn decode_flo(bytes: &[u8], dt: f64, path: &Path) -> Result<FlowField, HarnessError> {
    if bytes.len() >= 4 {
        let tag = f32::from_le_bytes(bytes[0..4].try_into().expect("4 bytes"));
        if tag != FLO_TAG {
            return Err(format_err(path, 0, format!("bad flow tag {tag} (bytes {:02x?}), expected 202021.25", &bytes[0..4])));
        }
    }
    let (w, h) = read_header_dims(bytes, path, "flow")?;
    let expected = 12 + w * h * 8;
    if bytes.len() != expected {
        return Err(format_err(
            path,
            bytes.len().min(expected),
            format!("payload size mismatch: file has {} bytes, {w}x{h} flow needs {expected}", bytes.len()),
        ));
    }
    let mut data = Vec::with_capacity(w * h);
    let mut valid = Vec::with_capacity(w * h);
    for (i, px) in bytes[12..].chunks_exact(8).enumerate() {
        let u = f32::from_le_bytes(px[0..4].try_into().expect("4 bytes"));
        let v = f32::from_le_bytes(px[4..8].try_into().expect("4 bytes"));
        if u.is_nan() || v.is_nan() {
            return Err(format_err(path, 12 + i * 8, "NaN flow component"));
        }
        if u.abs() > FLO_UNKNOWN_THRESHOLD || v.abs() > FLO_UNKNOWN_THRESHOLD {
            data.push([0.0, 0.0]);
            valid.push(false);
        } else {
            data.push([f64::from(u), f64::from(v)]);
            valid.push(true);
        }
    }
    FlowField::new(w, h, dt, data, valid).map_err(|e| format_err(path, 0, e.to_string()))
}

pub fn write_flo(path: &Path, flow: &FlowField) -> Result<(), HarnessError> {
    std::fs::write(path, encode_flo(flow)).map_err(|e| io_err(path, e))
}

/// Read a `.flo` file; `dt` is the frame interval the flow spans.
pub fn read_flo(path: &Path, dt: f64) -> Result<FlowField, HarnessError> {
    let bytes = std::fs::read(path).map_err(|e| io_err(path, e))?;
    decode_flo(&bytes, dt, path)
}

pub fn encode_depth(depth: &DepthField) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + depth.data().len() * 4);
    out.extend_from_slice(DEPTH_MAGIC);
    out.extend_from_slice(&(depth.width() as i32).to_le_bytes());
    out.extend_from_slice(&(depth.height() as i32).to_le_bytes());
    for z in depth.data() {
        out.extend_from_slice(&z.to_le_bytes());
    }
    out
}

pub fn decode_depth(bytes: &[u8], path: &Path) -> Result<DepthField, HarnessError> {
    if bytes.len() >= 4 && &bytes[0..4] != DEPTH_MAGIC {
        return Err(format_err(path, 0, format!("bad depth magic {:02x?}, expected \"DPF1\"", &bytes[0..4])));
    }
    let (w, h) = read_header_dims(bytes, path, "depth")?;
    let expected = 12 + w * h * 4;
    if bytes.len() != expected {
        return Err(format_err(
            path,
            bytes.len().min(expected),
            format!("payload size mismatch: file has {} bytes, {w}x{h} depth needs {expected}", bytes.len()),
        ));
    }
    let data: Vec<f32> = bytes[12..]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
        .collect();
    DepthField::new(w, h, data).map_err(|e| match e {
        crate::geometry::GeometryError::InvalidDepth { index, .. } => format_err(path, 12 + index * 4, e.to_string()),
        other => format_err(path, 0, other.to_string()),
    })
}

pub fn write_depth(path: &Path, depth: &DepthField) -> Result<(), HarnessError> {
    std::fs::write(path, encode_depth(depth)).map_err(|e| io_err(path, e))
}

pub fn read_depth(path: &Path) -> Result<DepthField, HarnessError> {
    let bytes = std::fs::read(path).map_err(|e| io_err(path, e))?;
    decode_depth(&bytes, path)
}

/// Transform from the current camera frame into the prior camera frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseFile {
    /// Row-major 3×3 rotation.
    pub rotation: [f64; 9],
    pub translation: [f64; 3],
    /// Seconds between the two frames.
    pub dt: f64,
}

impl PoseFile {
    pub fn from_transform(m: &RigidTransform, dt: f64) -> Self {
        let r = m.rotation();
        let t = m.translation();
        let mut rotation = [0.0; 9];
        for i in 0..3 {
            for j in 0..3 {
                rotation[i * 3 + j] = r[(i, j)];
            }
        }
        Self {
            rotation,
            translation: [t.x, t.y, t.z],
            dt,
        }
    }

    pub fn transform(&self) -> Result<RigidTransform, crate::geometry::GeometryError> {
        let r = nalgebra::Matrix3::from_row_slice(&self.rotation);
        RigidTransform::new(r, nalgebra::Vector3::from_row_slice(&self.translation))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntrinsicsFile {
    pub focal: f64,
    pub principal_x: f64,
    pub principal_y: f64,
    pub width: usize,
    pub height: usize,
}

impl From<&Intrinsics> for IntrinsicsFile {
    fn from(k: &Intrinsics) -> Self {
        Self {
            focal: k.focal,
            principal_x: k.principal_x,
            principal_y: k.principal_y,
            width: k.width,
            height: k.height,
        }
    }
}

impl IntrinsicsFile {
    pub fn intrinsics(&self) -> Result<Intrinsics, crate::geometry::GeometryError> {
        Intrinsics::new(self.focal, self.principal_x, self.principal_y, self.width, self.height)
    }
}

fn write_toml<T: Serialize>(path: &Path, value: &T) -> Result<(), HarnessError> {
    let text = toml::to_string(value).map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?;
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

fn read_toml<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    toml::from_str(&text).map_err(|e| {
        let offset = e.span().map(|s| s.start).unwrap_or(0);
        format_err(path, offset, e.message().to_string())
    })
}

pub fn write_pose(path: &Path, pose: &PoseFile) -> Result<(), HarnessError> {
    write_toml(path, pose)
}

pub fn read_pose(path: &Path) -> Result<PoseFile, HarnessError> {
    read_toml(path)
}

pub fn write_intrinsics(path: &Path, k: &Intrinsics) -> Result<(), HarnessError> {
    write_toml(path, &IntrinsicsFile::from(k))
}

pub fn read_intrinsics(path: &Path) -> Result<Intrinsics, HarnessError> {
    let f: IntrinsicsFile = read_toml(path)?;
    f.intrinsics().map_err(|e| format_err(path, 0, e.to_string()))
}

pub fn write_segmentation(path: &Path, seg: &SegField) -> Result<(), HarnessError> {
    let img = GrayImage::from_raw(seg.width as u32, seg.height as u32, seg.data.clone())
        .expect("buffer matches dimensions");
    img.save(path).map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))
}

pub fn read_segmentation(path: &Path) -> Result<SegField, HarnessError> {
    let img = image::open(path)
        .map_err(|e| format_err(path, 0, e.to_string()))?
        .into_luma8();
    Ok(SegField {
        width: img.width() as usize,
        height: img.height() as usize,
        data: img.into_raw(),
    })
}

fn hsv_to_rgb(h_deg: f64, s: f64, v: f64) -> [u8; 3] {
    let c = v * s;
    let hp = (h_deg.rem_euclid(360.0)) / 60.0;
    let x = c * (1.0 - (hp % 2.0 - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r, g, b].map(|ch| ((ch + m) * 255.0).round().clamp(0.0, 255.0) as u8)
}

/// Hue and saturation of one flow vector on the direction color wheel.
pub fn flow_hue_saturation(u: f64, v: f64, scale: f64) -> (f64, f64) {
    let mag = (u * u + v * v).sqrt();
    let hue = v.atan2(u).to_degrees().rem_euclid(360.0);
    (hue, (mag / scale).min(1.0))
}

/// Direction color wheel: hue from the flow angle, saturation from the
/// magnitude over `scale` (clipped at 1), full value. Zero flow is white.
pub fn render_flow_image(flow: &FlowField, scale: f64) -> RgbImage {
    let mut img = RgbImage::new(flow.width() as u32, flow.height() as u32);
    for (i, v) in flow.data().iter().enumerate() {
        let (h, s) = flow_hue_saturation(v[0], v[1], scale);
        let x = (i % flow.width()) as u32;
        let y = (i / flow.width()) as u32;
        img.put_pixel(x, y, Rgb(hsv_to_rgb(h, s, 1.0)));
    }
    img
}

pub fn write_flow_image(path: &Path, flow: &FlowField, scale: f64) -> Result<(), HarnessError> {
    render_flow_image(flow, scale)
        .save(path)
        .map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flow(vals: Vec<[f64; 2]>, w: usize, h: usize) -> FlowField {
        let n = vals.len();
        FlowField::new(w, h, 0.1, vals, vec![true; n]).unwrap()
    }

    #[test]
    fn flo_round_trip_is_bitwise() {
        let mut f = flow((0..12).map(|i| [i as f64 * 0.37 - 2.0, -(i as f64) * 1.5]).collect(), 4, 3);
        f = FlowField::new(4, 3, 0.1, f.data().to_vec(), (0..12).map(|i| i != 5).collect()).unwrap();
        let bytes = encode_flo(&f);
        let back = decode_flo(&bytes, 0.1, Path::new("mem.flo")).unwrap();
        assert_eq!(encode_flo(&back), bytes);
        assert!(!back.is_valid(1, 1));
        for i in 0..12 {
            if i != 5 {
                assert!((back.data()[i][0] - f.data()[i][0]).abs() <= FILE_FLOW_QUANTUM);
            }
        }
    }

    #[test]
    fn flo_rejects_bad_tag_and_size() {
        let f = flow(vec![[1.0, 2.0]; 4], 2, 2);
        let mut bytes = encode_flo(&f);
        let short = decode_flo(&bytes[..bytes.len() - 1], 0.1, Path::new("a.flo")).unwrap_err();
        assert!(short.to_string().contains("a.flo"), "{short}");
        bytes[0] ^= 0xff;
        let err = decode_flo(&bytes, 0.1, Path::new("a.flo")).unwrap_err();
        assert!(matches!(err, HarnessError::Format { offset: 0, .. }));
        assert!(err.to_string().contains("tag"));
    }

    #[test]
    fn depth_round_trip_keeps_infinity() {
        let d = DepthField::new(3, 2, vec![1.0, 2.5, f32::INFINITY, 100.0, 0.25, 7.0]).unwrap();
        let bytes = encode_depth(&d);
        let back = decode_depth(&bytes, Path::new("d.dpf")).unwrap();
        assert_eq!(back, d);
        assert_eq!(encode_depth(&back), bytes);
        let mut bad = bytes.clone();
        bad[3] = b'0';
        assert!(decode_depth(&bad, Path::new("d.dpf")).unwrap_err().to_string().contains("magic"));
        let mut neg = bytes;
        neg[12..16].copy_from_slice(&(-1.0f32).to_le_bytes());
        match decode_depth(&neg, Path::new("d.dpf")).unwrap_err() {
            HarnessError::Format { offset, .. } => assert_eq!(offset, 12),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn pose_and_intrinsics_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = RigidTransform::from_axis_angle(
            nalgebra::Vector3::new(0.2, 1.0, -0.3),
            0.1234567891234,
            nalgebra::Vector3::new(0.1, -0.2, 0.83333333333),
        );
        let p = PoseFile::from_transform(&m, 1.0 / 12.0);
        let path = dir.path().join("pose.toml");
        write_pose(&path, &p).unwrap();
        let back = read_pose(&path).unwrap();
        assert_eq!(back, p);
        assert_eq!(back.transform().unwrap(), m);

        let k = Intrinsics::from_hfov(64, 48, 1.2).unwrap();
        let kp = dir.path().join("k.toml");
        write_intrinsics(&kp, &k).unwrap();
        assert_eq!(read_intrinsics(&kp).unwrap(), k);

        std::fs::write(&kp, "focal = 1.0\nprincipal_x = 0.0\nprincipal_y = 0.0\nwidth = 2\nheight = 2\nskew = 0.0\n").unwrap();
        let err = read_intrinsics(&kp).unwrap_err().to_string();
        assert!(err.contains("skew") && err.contains("k.toml"), "{err}");
    }

    #[test]
    fn segmentation_png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let s = SegField {
            width: 3,
            height: 2,
            data: vec![0, 1, 2, 3, 4, 11],
        };
        let p = dir.path().join("s.png");
        write_segmentation(&p, &s).unwrap();
        assert_eq!(read_segmentation(&p).unwrap(), s);
    }

    #[test]
    fn color_wheel_examples() {
        let z = FlowField::zeros(3, 3, 0.1).unwrap();
        assert!(render_flow_image(&z, 20.0).pixels().all(|p| p.0 == [255, 255, 255]));
        let right = flow(vec![[5.0, 0.0]; 4], 2, 2);
        let img = render_flow_image(&right, 20.0);
        let first = *img.get_pixel(0, 0);
        assert!(img.pixels().all(|p| *p == first));
        assert_ne!(first.0, [255, 255, 255]);
        for (u, v) in [(1.0, 2.0), (-3.0, 0.5), (0.0, -1.0), (4.0, 4.0)] {
            let (h1, s1) = flow_hue_saturation(u, v, 20.0);
            let (h2, s2) = flow_hue_saturation(-u, -v, 20.0);
            assert!(((h2 - h1).rem_euclid(360.0) - 180.0).abs() < 1e-9);
            assert_eq!(s1, s2);
        }
    }
}
