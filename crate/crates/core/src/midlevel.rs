//! Observation stacks built from mid-level representations: segmentation,
//! depth, raw/ego/object flow and two-frame segmentation/depth stacks.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{ego_flow_field, factorize, FlowField, GeometryError, DEFAULT_FAR_PLANE};
use crate::scene::{ground_truth_raw_flow, RenderedFrame};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MidlevelError {
    #[error("unknown representation token `{0}` (expected one of seg, depth, raw, ego, obj, seg2, depth2)")]
    UnknownToken(String),
    #[error("representation `{0}` listed twice")]
    Duplicate(String),
    #[error("empty representation spec")]
    Empty,
    #[error("frame size mismatch: previous {0}x{1}, current {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RepresentationId {
    Seg,
    Depth,
    FlowRaw,
    FlowEgo,
    FlowObj,
    Seg2,
    Depth2,
}

impl RepresentationId {
    pub const ALL: [RepresentationId; 7] = [
        Self::Seg,
        Self::Depth,
        Self::FlowRaw,
        Self::FlowEgo,
        Self::FlowObj,
        Self::Seg2,
        Self::Depth2,
    ];
    /// Single-frame ids.
    pub const BASE: [RepresentationId; 5] =
        [Self::Seg, Self::Depth, Self::FlowRaw, Self::FlowEgo, Self::FlowObj];

    pub fn token(self) -> &'static str {
        match self {
            Self::Seg => "seg",
            Self::Depth => "depth",
            Self::FlowRaw => "raw",
            Self::FlowEgo => "ego",
            Self::FlowObj => "obj",
            Self::Seg2 => "seg2",
            Self::Depth2 => "depth2",
        }
    }

    pub fn is_flow(self) -> bool {
        matches!(self, Self::FlowRaw | Self::FlowEgo | Self::FlowObj)
    }

    /// Channel count with the scalar segmentation encoding.
    pub fn channels(self) -> usize {
        match self {
            Self::Seg | Self::Depth => 1,
            _ => 2,
        }
    }
}

impl fmt::Display for RepresentationId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for RepresentationId {
    type Err = MidlevelError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim().to_ascii_lowercase();
        Self::ALL
            .into_iter()
            .find(|id| id.token() == t)
            .ok_or_else(|| MidlevelError::UnknownToken(s.trim().to_string()))
    }
}

/// Ordered, duplicate-free list of representations, written `ego+obj+seg2`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RepresentationSpec(Vec<RepresentationId>);

impl RepresentationSpec {
    pub fn new(ids: Vec<RepresentationId>) -> Result<Self, MidlevelError> {
        if ids.is_empty() {
            return Err(MidlevelError::Empty);
        }
        for (i, id) in ids.iter().enumerate() {
            if ids[..i].contains(id) {
                return Err(MidlevelError::Duplicate(id.token().into()));
            }
        }
        Ok(Self(ids))
    }

    pub fn ids(&self) -> &[RepresentationId] {
        &self.0
    }

    pub fn contains(&self, id: RepresentationId) -> bool {
        self.0.contains(&id)
    }

    pub fn total_channels(&self, cfg: &MidlevelConfig, num_classes: usize) -> usize {
        self.0.iter().map(|id| cfg.channels(*id, num_classes)).sum()
    }
}

impl FromStr for RepresentationSpec {
    type Err = MidlevelError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let ids = s
            .split('+')
            .map(str::parse)
            .collect::<Result<Vec<RepresentationId>, _>>()?;
        Self::new(ids)
    }
}

impl fmt::Display for RepresentationSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tokens: Vec<_> = self.0.iter().map(|id| id.token()).collect();
        f.write_str(&tokens.join("+"))
    }
}

impl Serialize for RepresentationSpec {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for RepresentationSpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowUnits {
    PerFrame,
    PerSecond,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegEncoding {
    /// One channel holding `class_id / num_classes`.
    Scalar,
    /// One channel per class id including background.
    OneHot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MidlevelConfig {
    /// Flow normalization scale, in `flow_units`.
    pub flow_scale: f64,
    pub far_plane: f64,
    pub flow_units: FlowUnits,
    pub seg_encoding: SegEncoding,
}

impl Default for MidlevelConfig {
    fn default() -> Self {
        Self {
            flow_scale: 20.0,
            far_plane: DEFAULT_FAR_PLANE,
            flow_units: FlowUnits::PerFrame,
            seg_encoding: SegEncoding::Scalar,
        }
    }
}

impl MidlevelConfig {
    pub fn channels(&self, id: RepresentationId, num_classes: usize) -> usize {
        let seg = match self.seg_encoding {
            SegEncoding::Scalar => 1,
            SegEncoding::OneHot => num_classes + 1,
        };
        match id {
            RepresentationId::Seg => seg,
            RepresentationId::Seg2 => 2 * seg,
            other => other.channels(),
        }
    }
}

/// One H×W×C plane, channel-last.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    pub id: RepresentationId,
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl Plane {
    pub fn at(&self, x: usize, y: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub planes: Vec<Plane>,
    pub step_index: usize,
}

impl Observation {
    pub fn total_channels(&self) -> usize {
        self.planes.iter().map(|p| p.channels).sum()
    }

    pub fn plane(&self, id: RepresentationId) -> Option<&Plane> {
        self.planes.iter().find(|p| p.id == id)
    }
}

/// The last two rendered frames. At step 0 `prev` is `None`.
#[derive(Debug, Clone, Copy)]
pub struct FrameWindow<'a> {
    pub prev: Option<&'a RenderedFrame>,
    pub curr: &'a RenderedFrame,
    pub dt: f64,
    pub num_classes: usize,
    pub step_index: usize,
}

/// Raw, ego and object flow for one frame pair.
#[derive(Debug, Clone)]
pub struct FlowTriple {
    pub raw: FlowField,
    pub ego: FlowField,
    pub obj: FlowField,
}

/// Factorized flows between two rendered frames.
pub fn frame_flows(
    prev: &RenderedFrame,
    curr: &RenderedFrame,
    dt: f64,
    far_plane: f64,
) -> Result<FlowTriple, MidlevelError> {
    let raw = ground_truth_raw_flow(prev, curr, dt, far_plane);
    let ego = ego_flow_field(&curr.depth, &curr.relative_to(prev), &curr.intrinsics, dt, far_plane)?;
    let obj = factorize(&raw, &ego)?;
    Ok(FlowTriple { raw, ego, obj })
}

fn seg_channels(frame: &RenderedFrame, cfg: &MidlevelConfig, num_classes: usize) -> Vec<Vec<f32>> {
    let ids = &frame.seg.data;
    match cfg.seg_encoding {
        SegEncoding::Scalar => vec![ids
            .iter()
            .map(|&id| normalize_seg(id, num_classes))
            .collect()],
        SegEncoding::OneHot => (0..=num_classes)
            .map(|c| ids.iter().map(|&id| f32::from(usize::from(id) == c)).collect())
            .collect(),
    }
}

fn depth_channel(frame: &RenderedFrame, cfg: &MidlevelConfig) -> Vec<f32> {
    frame
        .depth
        .data()
        .iter()
        .map(|&z| normalize_depth(f64::from(z), cfg.far_plane))
        .collect()
}

fn flow_channels(flow: Option<&FlowField>, n: usize, cfg: &MidlevelConfig) -> Vec<Vec<f32>> {
    match flow {
        None => vec![vec![0.0; n]; 2],
        Some(f) => {
            let div = match cfg.flow_units {
                FlowUnits::PerFrame => 1.0,
                FlowUnits::PerSecond => f.dt(),
            };
            (0..2)
                .map(|c| {
                    f.data()
                        .iter()
                        .map(|v| normalize_flow(v[c] / div, cfg.flow_scale))
                        .collect()
                })
                .collect()
        }
    }
}

fn interleave(id: RepresentationId, w: usize, h: usize, channels: Vec<Vec<f32>>) -> Plane {
    let c = channels.len();
    let mut data = vec![0.0f32; w * h * c];
    for (ci, ch) in channels.iter().enumerate() {
        for (i, v) in ch.iter().enumerate() {
            data[i * c + ci] = *v;
        }
    }
    Plane {
        id,
        width: w,
        height: h,
        channels: c,
        data,
    }
}

/// Build the observation for `spec` from the current frame window.
///
/// Without a previous frame, flows are zero and two-frame stacks repeat the
/// current frame.
pub fn compose(
    spec: &RepresentationSpec,
    frames: &FrameWindow<'_>,
    cfg: &MidlevelConfig,
) -> Result<Observation, MidlevelError> {
    let curr = frames.curr;
    let (w, h) = (curr.intrinsics.width, curr.intrinsics.height);
    if let Some(prev) = frames.prev {
        let (pw, ph) = (prev.intrinsics.width, prev.intrinsics.height);
        if (pw, ph) != (w, h) {
            return Err(MidlevelError::DimensionMismatch(pw, ph, w, h));
        }
    }
    let needs_flow = spec.ids().iter().any(|id| id.is_flow());
    let flows = match (frames.prev, needs_flow) {
        (Some(prev), true) => Some(frame_flows(prev, curr, frames.dt, cfg.far_plane)?),
        _ => None,
    };
    let prev = frames.prev.unwrap_or(curr);
    let n = w * h;
    let planes = spec
        .ids()
        .iter()
        .map(|&id| {
            let channels = match id {
                RepresentationId::Seg => seg_channels(curr, cfg, frames.num_classes),
                RepresentationId::Depth => vec![depth_channel(curr, cfg)],
                RepresentationId::FlowRaw => flow_channels(flows.as_ref().map(|f| &f.raw), n, cfg),
                RepresentationId::FlowEgo => flow_channels(flows.as_ref().map(|f| &f.ego), n, cfg),
                RepresentationId::FlowObj => flow_channels(flows.as_ref().map(|f| &f.obj), n, cfg),
                RepresentationId::Seg2 => {
                    let mut c = seg_channels(prev, cfg, frames.num_classes);
                    c.extend(seg_channels(curr, cfg, frames.num_classes));
                    c
                }
                RepresentationId::Depth2 => vec![depth_channel(prev, cfg), depth_channel(curr, cfg)],
            };
            interleave(id, w, h, channels)
        })
        .collect();
    Ok(Observation {
        planes,
        step_index: frames.step_index,
    })
}

pub fn normalize_depth(z: f64, far: f64) -> f32 {
    (z.clamp(0.0, far) / far) as f32
}

pub fn normalize_flow(v: f64, scale: f64) -> f32 {
    (v / scale).clamp(-1.0, 1.0) as f32
}

pub fn normalize_seg(id: u8, num_classes: usize) -> f32 {
    if num_classes == 0 {
        0.0
    } else {
        f32::from(id) / num_classes as f32
    }
}

/// Normalize a raw plane in place: depth in meters, flow in the configured
/// units, segmentation as class ids.
pub fn normalize(plane: &mut Plane, cfg: &MidlevelConfig, num_classes: usize) {
    for v in plane.data.iter_mut() {
        *v = match plane.id {
            RepresentationId::Depth | RepresentationId::Depth2 => {
                normalize_depth(f64::from(*v), cfg.far_plane)
            }
            RepresentationId::Seg | RepresentationId::Seg2 => normalize_seg(*v as u8, num_classes),
            _ => normalize_flow(f64::from(*v), cfg.flow_scale),
        };
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{
        build_environment, raycast_render, Action, CameraConfig, EnvironmentName, SceneConfig,
        SpeedMode, WorldState,
    };
    use proptest::prelude::*;
    use std::sync::Arc;

    fn cam() -> CameraConfig {
        CameraConfig {
            width: 24,
            height: 24,
            ..CameraConfig::default()
        }
    }

    fn two_frames(static_scene: bool) -> (RenderedFrame, RenderedFrame, usize, f64) {
        let mut spec = build_environment(
            EnvironmentName::StraightRoad,
            SpeedMode::NORMAL,
            12.0,
            3,
            &SceneConfig::default(),
        )
        .unwrap();
        if static_scene {
            spec.pedestrian_routes.clear();
        }
        let nc = spec.num_classes();
        let dt = spec.dt();
        let mut st = WorldState::new(Arc::new(spec));
        for _ in 0..5 {
            st.step(Action::NoOp).unwrap();
        }
        let a = raycast_render(&st, &cam());
        st.step(Action::TurnLeft).unwrap();
        let b = raycast_render(&st, &cam());
        (a, b, nc, dt)
    }

    #[test]
    fn parse_and_display() {
        let s: RepresentationSpec = "ego+obj+seg2".parse().unwrap();
        assert_eq!(
            s.ids(),
            &[RepresentationId::FlowEgo, RepresentationId::FlowObj, RepresentationId::Seg2]
        );
        assert_eq!(s.to_string(), "ego+obj+seg2");
        match "ego+flwo".parse::<RepresentationSpec>() {
            Err(MidlevelError::UnknownToken(t)) => assert_eq!(t, "flwo"),
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            "ego+ego".parse::<RepresentationSpec>(),
            Err(MidlevelError::Duplicate(_))
        ));
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize_depth(100.0, 100.0), 1.0);
        assert_eq!(normalize_depth(f64::INFINITY, 100.0), 1.0);
        assert_eq!(normalize_flow(-10.0, 20.0), -0.5);
        assert_eq!(normalize_flow(0.0, 20.0), 0.0);
        assert_eq!(normalize_seg(0, 5), 0.0);
        let mut p = Plane {
            id: RepresentationId::FlowEgo,
            width: 1,
            height: 1,
            channels: 2,
            data: vec![-10.0, 0.0],
        };
        normalize(&mut p, &MidlevelConfig::default(), 5);
        assert_eq!(p.data, vec![-0.5, 0.0]);
    }

    #[test]
    fn static_scene_object_plane_is_zero() {
        let (a, b, nc, dt) = two_frames(true);
        let spec: RepresentationSpec = "ego+obj".parse().unwrap();
        let w = FrameWindow {
            prev: Some(&a),
            curr: &b,
            dt,
            num_classes: nc,
            step_index: 6,
        };
        let obs = compose(&spec, &w, &MidlevelConfig::default()).unwrap();
        assert!(obs.planes[1].data.iter().all(|v| v.abs() < 1e-7));
        assert!(obs.planes[0].data.iter().any(|v| v.abs() > 1e-3));
    }

    #[test]
    fn identical_frames_stack_identical_channels() {
        let (a, _, nc, dt) = two_frames(true);
        let spec: RepresentationSpec = "seg2+depth2".parse().unwrap();
        let w = FrameWindow {
            prev: None,
            curr: &a,
            dt,
            num_classes: nc,
            step_index: 0,
        };
        let obs = compose(&spec, &w, &MidlevelConfig::default()).unwrap();
        for p in &obs.planes {
            for px in p.data.chunks(2) {
                assert_eq!(px[0], px[1]);
            }
        }
    }

    #[test]
    fn first_step_flows_are_zero() {
        let (a, _, nc, dt) = two_frames(false);
        let spec: RepresentationSpec = "raw+ego+obj".parse().unwrap();
        let w = FrameWindow {
            prev: None,
            curr: &a,
            dt,
            num_classes: nc,
            step_index: 0,
        };
        let obs = compose(&spec, &w, &MidlevelConfig::default()).unwrap();
        assert!(obs.planes.iter().all(|p| p.data.iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn raw_plane_equals_sum_of_factors() {
        let (a, b, nc, dt) = two_frames(false);
        let spec: RepresentationSpec = "raw+ego+obj".parse().unwrap();
        let w = FrameWindow {
            prev: Some(&a),
            curr: &b,
            dt,
            num_classes: nc,
            step_index: 6,
        };
        let cfg = MidlevelConfig {
            flow_scale: 1e4,
            ..MidlevelConfig::default()
        };
        let obs = compose(&spec, &w, &cfg).unwrap();
        let t = frame_flows(&a, &b, dt, cfg.far_plane).unwrap();
        for i in 0..t.raw.data().len() {
            for c in 0..2 {
                assert_eq!(t.ego.data()[i][c] + t.obj.data()[i][c], t.raw.data()[i][c]);
                let sum = obs.planes[1].data[i * 2 + c] + obs.planes[2].data[i * 2 + c];
                assert!((sum - obs.planes[0].data[i * 2 + c]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn one_hot_segmentation() {
        let (a, _, nc, dt) = two_frames(true);
        let cfg = MidlevelConfig {
            seg_encoding: SegEncoding::OneHot,
            ..MidlevelConfig::default()
        };
        let spec: RepresentationSpec = "seg".parse().unwrap();
        let w = FrameWindow {
            prev: None,
            curr: &a,
            dt,
            num_classes: nc,
            step_index: 0,
        };
        let obs = compose(&spec, &w, &cfg).unwrap();
        assert_eq!(obs.planes[0].channels, nc + 1);
        for px in obs.planes[0].data.chunks(nc + 1) {
            assert_eq!(px.iter().sum::<f32>(), 1.0);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn channel_count_matches_spec(mask in 1u32..32) {
            let (a, b, nc, dt) = two_frames(false);
            let ids: Vec<_> = RepresentationId::BASE
                .iter()
                .enumerate()
                .filter(|(i, _)| mask & (1 << i) != 0)
                .map(|(_, id)| *id)
                .collect();
            let spec = RepresentationSpec::new(ids.clone()).unwrap();
            let cfg = MidlevelConfig::default();
            let w = FrameWindow { prev: Some(&a), curr: &b, dt, num_classes: nc, step_index: 1 };
            let obs = compose(&spec, &w, &cfg).unwrap();
            let expected: usize = ids.iter().map(|id| id.channels()).sum();
            prop_assert_eq!(obs.total_channels(), expected);
            prop_assert_eq!(spec.total_channels(&cfg, nc), expected);
            for p in &obs.planes {
                prop_assert_eq!(p.data.len(), 24 * 24 * p.channels);
                prop_assert!(p.data.iter().all(|v| v.is_finite() && (-1.0..=1.0).contains(v)));
            }
            // Deterministic.
            prop_assert_eq!(&obs, &compose(&spec, &w, &cfg).unwrap());
        }
    }
}
