//! Environment layouts: road paths, zones, static dressing and pedestrian routes.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::SceneError;
use crate::geometry::RigidTransform;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EnvironmentName {
    StraightRoad,
    STurn,
    HShapedPathways,
    ThreeWayJunction,
}

impl EnvironmentName {
    pub const ALL: [EnvironmentName; 4] = [
        EnvironmentName::StraightRoad,
        EnvironmentName::STurn,
        EnvironmentName::HShapedPathways,
        EnvironmentName::ThreeWayJunction,
    ];

    pub fn default_time_limit(self) -> usize {
        match self {
            EnvironmentName::StraightRoad => 200,
            EnvironmentName::STurn => 250,
            EnvironmentName::HShapedPathways => 300,
            EnvironmentName::ThreeWayJunction => 250,
        }
    }

    pub fn path_count(self) -> usize {
        match self {
            EnvironmentName::StraightRoad => 1,
            EnvironmentName::STurn => 2,
            EnvironmentName::HShapedPathways => 4,
            EnvironmentName::ThreeWayJunction => 2,
        }
    }

    pub fn lane_width(self) -> f64 {
        match self {
            EnvironmentName::StraightRoad => 2.0,
            EnvironmentName::STurn => 1.5,
            EnvironmentName::HShapedPathways => 2.0,
            EnvironmentName::ThreeWayJunction => 1.0,
        }
    }

    /// Angular acceleration applied by a turn action (rad/s²).
    pub fn angular_acceleration(self) -> f64 {
        match self {
            EnvironmentName::StraightRoad => 35f64.to_radians(),
            _ => 70f64.to_radians(),
        }
    }

    /// Semantic categories present in the environment. Ids are `1 + index`;
    /// id 0 is reserved for background (no hit).
    pub fn categories(self) -> &'static [SemanticClass] {
        use SemanticClass::*;
        match self {
            EnvironmentName::StraightRoad => &[Road, Sidewalk, Building, Pedestrian, EndingZone],
            EnvironmentName::STurn => &[Road, Sidewalk, Building, Pedestrian, EndingZone, Terrain],
            EnvironmentName::HShapedPathways => {
                &[Road, Sidewalk, Building, Pedestrian, EndingZone, Terrain, Tree]
            }
            EnvironmentName::ThreeWayJunction => &[
                Road,
                Sidewalk,
                Building,
                Pedestrian,
                EndingZone,
                Terrain,
                Tree,
                Fence,
                Car,
                TrafficLight,
                Pole,
            ],
        }
    }

    fn has_perpendicular(self) -> bool {
        !matches!(self, EnvironmentName::ThreeWayJunction)
    }

    fn has_parallel(self) -> bool {
        matches!(
            self,
            EnvironmentName::HShapedPathways | EnvironmentName::ThreeWayJunction
        )
    }

    fn has_static_pedestrians(self) -> bool {
        matches!(self, EnvironmentName::HShapedPathways)
    }

    fn has_static_obstacles(self) -> bool {
        matches!(self, EnvironmentName::ThreeWayJunction)
    }
}

impl fmt::Display for EnvironmentName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            EnvironmentName::StraightRoad => "StraightRoad",
            EnvironmentName::STurn => "STurn",
            EnvironmentName::HShapedPathways => "HShapedPathways",
            EnvironmentName::ThreeWayJunction => "ThreeWayJunction",
        };
        f.write_str(s)
    }
}

impl FromStr for EnvironmentName {
    type Err = SceneError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        match norm.as_str() {
            "straightroad" | "straight" => Ok(EnvironmentName::StraightRoad),
            "sturn" => Ok(EnvironmentName::STurn),
            "hshapedpathways" | "hshaped" | "hshape" => Ok(EnvironmentName::HShapedPathways),
            "threewayjunction" | "threeway" | "tjunction" => Ok(EnvironmentName::ThreeWayJunction),
            _ => Err(SceneError::UnknownEnvironment(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SemanticClass {
    Background,
    Road,
    Sidewalk,
    Building,
    Pedestrian,
    EndingZone,
    Terrain,
    Tree,
    Fence,
    Car,
    TrafficLight,
    Pole,
}

/// Uniform range of pedestrian walking speeds (m/s).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeedMode {
    pub lo: f64,
    pub hi: f64,
}

impl SpeedMode {
    pub const LOW: SpeedMode = SpeedMode { lo: 0.6, hi: 1.0 };
    pub const NORMAL: SpeedMode = SpeedMode { lo: 1.2, hi: 1.8 };
    pub const HIGH: SpeedMode = SpeedMode { lo: 2.0, hi: 2.4 };

    pub fn new(lo: f64, hi: f64) -> Result<Self, SceneError> {
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(SceneError::InvalidSpeedMode(lo, hi));
        }
        Ok(Self { lo, hi })
    }

    pub fn preset(name: &str) -> Result<Self, SceneError> {
        match name.to_ascii_lowercase().as_str() {
            "low" => Ok(Self::LOW),
            "normal" => Ok(Self::NORMAL),
            "high" => Ok(Self::HIGH),
            other => Err(SceneError::UnknownSpeedMode(other.to_string())),
        }
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        if self.lo == self.hi {
            self.lo
        } else {
            rng.gen_range(self.lo..=self.hi)
        }
    }
}

/// Declared defaults for quantities the layouts need but that are not fixed
/// by the environment table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub segment_length: f64,
    pub sidewalk_width: f64,
    pub agent_radius: f64,
    pub pedestrian_radius: f64,
    pub pedestrian_height: f64,
    pub forward_speed: f64,
    pub max_angular_velocity_deg: f64,
    pub angular_decay: f64,
    pub ending_zone_length: f64,
    pub time_limit: Option<usize>,
    pub lane_width: Option<f64>,
    /// Number of perpendicular crossing stations on the straight road.
    pub crossing_stations: usize,
    /// Pedestrians per crossing group, sampled uniformly in this range.
    pub group_size: (usize, usize),
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            segment_length: 40.0,
            sidewalk_width: 2.0,
            agent_radius: 0.4,
            pedestrian_radius: 0.3,
            pedestrian_height: 1.75,
            forward_speed: 10.0,
            max_angular_velocity_deg: 90.0,
            angular_decay: 0.95,
            ending_zone_length: 3.0,
            time_limit: None,
            lane_width: None,
            crossing_stations: 3,
            group_size: (1, 3),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Shape {
    /// Box with its base on the local z=0 plane.
    Box { half_x: f64, half_y: f64, height: f64 },
    /// Vertical cylinder standing on the local z=0 plane.
    Cylinder { radius: f64, height: f64 },
    GroundPlane,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneObject {
    pub id: usize,
    pub class: SemanticClass,
    pub shape: Shape,
    /// Local-to-world pose (world frame: x east, y north, z up).
    pub pose: RigidTransform,
    pub velocity: Vector3<f64>,
    pub is_dynamic: bool,
}

impl SceneObject {
    pub fn position_2d(&self) -> [f64; 2] {
        let t = self.pose.translation();
        [t.x, t.y]
    }
}

/// Pose on the ground plane from a 2D position and a yaw about world z.
pub fn ground_pose(x: f64, y: f64, yaw: f64) -> RigidTransform {
    RigidTransform::from_axis_angle(Vector3::z(), yaw, Vector3::new(x, y, 0.0))
}

/// Oriented rectangle on the ground plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Zone {
    pub center: [f64; 2],
    pub heading: f64,
    pub half_length: f64,
    pub half_width: f64,
}

impl Zone {
    fn to_local(&self, p: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.heading.sin_cos();
        let dx = p[0] - self.center[0];
        let dy = p[1] - self.center[1];
        [c * dx + s * dy, -s * dx + c * dy]
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        let [u, v] = self.to_local(p);
        u.abs() <= self.half_length && v.abs() <= self.half_width
    }

    /// True when a disc of radius `r` centered at `p` touches the rectangle.
    pub fn overlaps_disc(&self, p: [f64; 2], r: f64) -> bool {
        let [u, v] = self.to_local(p);
        let du = (u.abs() - self.half_length).max(0.0);
        let dv = (v.abs() - self.half_width).max(0.0);
        du * du + dv * dv <= r * r
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Path {
    pub waypoints: Vec<[f64; 2]>,
    pub start_heading: f64,
    pub start_zone: Zone,
    pub end_zone: Zone,
}

impl Path {
    pub fn start(&self) -> [f64; 2] {
        self.waypoints[0]
    }

    pub fn length(&self) -> f64 {
        self.waypoints
            .windows(2)
            .map(|w| dist(w[0], w[1]))
            .sum()
    }

    /// Position and tangent heading at arc length `s`.
    pub fn point_at(&self, s: f64) -> ([f64; 2], f64) {
        let mut left = s.max(0.0);
        for w in self.waypoints.windows(2) {
            let len = dist(w[0], w[1]);
            let heading = (w[1][1] - w[0][1]).atan2(w[1][0] - w[0][0]);
            if left <= len || len == 0.0 {
                let t = if len > 0.0 { left / len } else { 0.0 };
                return (
                    [w[0][0] + t * (w[1][0] - w[0][0]), w[0][1] + t * (w[1][1] - w[0][1])],
                    heading,
                );
            }
            left -= len;
        }
        let n = self.waypoints.len();
        let a = self.waypoints[n - 2];
        let b = self.waypoints[n - 1];
        (b, (b[1] - a[1]).atan2(b[0] - a[0]))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RouteDirection {
    Perpendicular,
    Parallel,
    Static,
}

/// A pedestrian walking back and forth between `a` and `b`.
#[derive(Debug, Clone, PartialEq)]
pub struct PedestrianRoute {
    pub object: usize,
    pub a: [f64; 2],
    pub b: [f64; 2],
    pub direction: RouteDirection,
    pub speed: f64,
    /// Initial arc position along the back-and-forth cycle (m).
    pub phase: f64,
}

impl PedestrianRoute {
    /// Position and velocity at time `t` (s).
    pub fn state_at(&self, t: f64) -> ([f64; 2], [f64; 2]) {
        let len = dist(self.a, self.b);
        if self.direction == RouteDirection::Static || len == 0.0 || self.speed == 0.0 {
            return (self.a, [0.0, 0.0]);
        }
        let dir = [(self.b[0] - self.a[0]) / len, (self.b[1] - self.a[1]) / len];
        let s = (self.phase + self.speed * t).rem_euclid(2.0 * len);
        let (along, sign) = if s <= len { (s, 1.0) } else { (2.0 * len - s, -1.0) };
        (
            [self.a[0] + dir[0] * along, self.a[1] + dir[1] * along],
            [sign * self.speed * dir[0], sign * self.speed * dir[1]],
        )
    }
}

/// Everything needed to run episodes in one environment instance.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvironmentSpec {
    pub name: EnvironmentName,
    pub time_limit: usize,
    pub paths: Vec<Path>,
    /// Path driven in this episode.
    pub active_path: usize,
    /// Half of the road width equals one lane width (two-lane roads).
    pub lane_width: f64,
    pub sidewalk_width: f64,
    /// Centerlines whose `lane_width` neighbourhood is drivable.
    pub road_centerlines: Vec<Vec<[f64; 2]>>,
    pub objects: Vec<SceneObject>,
    pub pedestrian_routes: Vec<PedestrianRoute>,
    pub fps: f64,
    pub speed_mode: SpeedMode,
    pub angular_acceleration: f64,
    pub config: SceneConfig,
}

impl EnvironmentSpec {
    pub fn dt(&self) -> f64 {
        1.0 / self.fps
    }

    pub fn active(&self) -> &Path {
        &self.paths[self.active_path]
    }

    pub fn categories(&self) -> &'static [SemanticClass] {
        self.name.categories()
    }

    pub fn num_classes(&self) -> usize {
        self.categories().len()
    }

    /// Segmentation id of a class (0 for background or absent classes).
    pub fn class_id(&self, class: SemanticClass) -> u8 {
        self.categories()
            .iter()
            .position(|c| *c == class)
            .map(|i| (i + 1) as u8)
            .unwrap_or(0)
    }

    /// Distance from `p` to the nearest road centerline.
    pub fn road_distance(&self, p: [f64; 2]) -> f64 {
        self.road_centerlines
            .iter()
            .map(|line| polyline_distance(line, p))
            .fold(f64::INFINITY, f64::min)
    }

    /// Semantic class of the ground at `p`.
    pub fn ground_class(&self, p: [f64; 2]) -> SemanticClass {
        let d = self.road_distance(p);
        if d <= self.lane_width {
            if self.active().end_zone.contains(p) {
                SemanticClass::EndingZone
            } else {
                SemanticClass::Road
            }
        } else if d <= self.lane_width + self.sidewalk_width
            || !self.categories().contains(&SemanticClass::Terrain)
        {
            SemanticClass::Sidewalk
        } else {
            SemanticClass::Terrain
        }
    }
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

fn segment_distance(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> f64 {
    let ab = [b[0] - a[0], b[1] - a[1]];
    let ap = [p[0] - a[0], p[1] - a[1]];
    let len2 = ab[0] * ab[0] + ab[1] * ab[1];
    let t = if len2 > 0.0 {
        ((ap[0] * ab[0] + ap[1] * ab[1]) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    dist([a[0] + t * ab[0], a[1] + t * ab[1]], p)
}

pub(crate) fn polyline_distance(line: &[[f64; 2]], p: [f64; 2]) -> f64 {
    if line.len() == 1 {
        return dist(line[0], p);
    }
    line.windows(2)
        .map(|w| segment_distance(w[0], w[1], p))
        .fold(f64::INFINITY, f64::min)
}

/// Turtle-style polyline builder.
struct Turtle {
    pos: [f64; 2],
    heading: f64,
    points: Vec<[f64; 2]>,
}

impl Turtle {
    fn new(pos: [f64; 2], heading: f64) -> Self {
        Self {
            pos,
            heading,
            points: vec![pos],
        }
    }

    fn forward(mut self, len: f64) -> Self {
        let n = (len / 1.0).ceil().max(1.0) as usize;
        let step = len / n as f64;
        for _ in 0..n {
            self.pos = [
                self.pos[0] + step * self.heading.cos(),
                self.pos[1] + step * self.heading.sin(),
            ];
            self.points.push(self.pos);
        }
        self
    }

    /// Circular arc; positive angle turns left.
    fn arc(mut self, radius: f64, angle: f64) -> Self {
        let n = ((radius * angle.abs()) / 1.0).ceil().max(2.0) as usize;
        let side = angle.signum();
        let center = [
            self.pos[0] - side * radius * self.heading.sin(),
            self.pos[1] + side * radius * self.heading.cos(),
        ];
        let start_angle = (self.pos[1] - center[1]).atan2(self.pos[0] - center[0]);
        for i in 1..=n {
            let a = start_angle + angle * i as f64 / n as f64;
            self.points
                .push([center[0] + radius * a.cos(), center[1] + radius * a.sin()]);
        }
        self.pos = *self.points.last().expect("arc has points");
        self.heading += angle;
        self
    }

    fn finish(self) -> Vec<[f64; 2]> {
        self.points
    }
}

fn make_path(waypoints: Vec<[f64; 2]>, lane_width: f64, zone_length: f64) -> Path {
    let tmp = Path {
        start_heading: 0.0,
        start_zone: dummy_zone(),
        end_zone: dummy_zone(),
        waypoints,
    };
    let total = tmp.length();
    let (_, h0) = tmp.point_at(0.0);
    let (s_c, _) = tmp.point_at(zone_length / 2.0);
    let (e_c, h1) = tmp.point_at(total - zone_length / 2.0);
    Path {
        start_heading: h0,
        start_zone: Zone {
            center: s_c,
            heading: h0,
            half_length: zone_length / 2.0,
            half_width: lane_width,
        },
        end_zone: Zone {
            center: e_c,
            heading: h1,
            half_length: zone_length / 2.0,
            half_width: lane_width,
        },
        waypoints: tmp.waypoints,
    }
}

fn dummy_zone() -> Zone {
    Zone {
        center: [0.0, 0.0],
        heading: 0.0,
        half_length: 0.0,
        half_width: 0.0,
    }
}

fn reversed(line: &[[f64; 2]]) -> Vec<[f64; 2]> {
    line.iter().rev().copied().collect()
}

/// Centerlines of every path plus any connecting roads that are not part of
/// a path.
fn road_network(name: EnvironmentName, len: f64) -> (Vec<Vec<[f64; 2]>>, Vec<Vec<[f64; 2]>>) {
    let half_pi = PI / 2.0;
    match name {
        EnvironmentName::StraightRoad => {
            let p = Turtle::new([0.0, 0.0], 0.0).forward(len).finish();
            (vec![p], vec![])
        }
        EnvironmentName::STurn => {
            let straight = 0.15 * len;
            let bend = 50f64.to_radians();
            let p = Turtle::new([0.0, 0.0], 0.0)
                .forward(straight)
                .arc(12.0, bend)
                .arc(12.0, -bend)
                .forward(straight)
                .arc(12.0, -bend)
                .arc(12.0, bend)
                .forward(straight)
                .finish();
            let back = reversed(&p);
            (vec![p, back], vec![])
        }
        EnvironmentName::HShapedPathways => {
            let height = 1.5 * len;
            let gap = 0.75 * len;
            let r = 8.0;
            let run = height / 2.0 - r;
            let mid = gap - 2.0 * r;
            let bl_tr = Turtle::new([0.0, 0.0], half_pi)
                .forward(run)
                .arc(r, -half_pi)
                .forward(mid)
                .arc(r, half_pi)
                .forward(run)
                .finish();
            let br_tl = Turtle::new([gap, 0.0], half_pi)
                .forward(run)
                .arc(r, half_pi)
                .forward(mid)
                .arc(r, -half_pi)
                .forward(run)
                .finish();
            let paths = vec![bl_tr.clone(), reversed(&bl_tr), br_tl.clone(), reversed(&br_tl)];
            let extra = vec![
                Turtle::new([0.0, 0.0], half_pi).forward(height).finish(),
                Turtle::new([gap, 0.0], half_pi).forward(height).finish(),
                Turtle::new([0.0, height / 2.0], 0.0).forward(gap).finish(),
            ];
            (paths, extra)
        }
        EnvironmentName::ThreeWayJunction => {
            let arm = 0.75 * len;
            let stem = 0.5 * len;
            let r = 10.0;
            let from_left = Turtle::new([-arm, stem], 0.0)
                .forward(arm - r)
                .arc(r, -half_pi)
                .forward(stem - r)
                .finish();
            let from_right = Turtle::new([arm, stem], PI)
                .forward(arm - r)
                .arc(r, half_pi)
                .forward(stem - r)
                .finish();
            let extra = vec![
                Turtle::new([-arm, stem], 0.0).forward(2.0 * arm).finish(),
                Turtle::new([0.0, 0.0], half_pi).forward(stem).finish(),
            ];
            (vec![from_left, from_right], extra)
        }
    }
}

struct Builder<'a> {
    objects: Vec<SceneObject>,
    rng: &'a mut ChaCha8Rng,
}

impl Builder<'_> {
    fn push(&mut self, class: SemanticClass, shape: Shape, pose: RigidTransform, dynamic: bool) -> usize {
        let id = self.objects.len();
        self.objects.push(SceneObject {
            id,
            class,
            shape,
            pose,
            velocity: Vector3::zeros(),
            is_dynamic: dynamic,
        });
        id
    }
}

/// Lateral offset helper: point at distance `offset` left of the tangent.
fn offset_point(p: [f64; 2], heading: f64, along: f64, offset: f64) -> [f64; 2] {
    let (s, c) = heading.sin_cos();
    [p[0] + along * c - offset * s, p[1] + along * s + offset * c]
}

fn clear_of_roads(lines: &[Vec<[f64; 2]>], pts: &[[f64; 2]], min_dist: f64) -> bool {
    pts.iter().all(|p| {
        lines
            .iter()
            .all(|line| polyline_distance(line, *p) > min_dist)
    })
}

/// Build a deterministic environment instance for `seed`.
pub fn build_environment(
    name: EnvironmentName,
    speed_mode: SpeedMode,
    fps: f64,
    seed: u64,
    config: &SceneConfig,
) -> Result<EnvironmentSpec, SceneError> {
    if !(1.0..=60.0).contains(&fps) {
        return Err(SceneError::InvalidFps(fps));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lane_width = config.lane_width.unwrap_or_else(|| name.lane_width());
    let (path_lines, extra) = road_network(name, config.segment_length);
    let paths: Vec<Path> = path_lines
        .iter()
        .map(|l| make_path(l.clone(), lane_width, config.ending_zone_length))
        .collect();
    let active_path = rng.gen_range(0..paths.len());
    let mut centerlines = path_lines.clone();
    centerlines.extend(extra);

    let mut b = Builder {
        objects: Vec::new(),
        rng: &mut rng,
    };
    b.push(
        SemanticClass::Background,
        Shape::GroundPlane,
        RigidTransform::identity(),
        false,
    );

    // Buildings lining every road beyond the sidewalk.
    let curb = lane_width + config.sidewalk_width;
    let mut spots: Vec<([f64; 2], f64)> = Vec::new();
    for line in &centerlines {
        let path = make_path(line.clone(), lane_width, 0.0);
        let total = path.length();
        let mut s = 3.0;
        while s < total - 3.0 {
            let (p, h) = path.point_at(s);
            spots.push((p, h));
            s += 8.0;
        }
    }
    let placed_building = name != EnvironmentName::STurn;
    for (p, h) in &spots {
        for side in [-1.0, 1.0] {
            let depth = 4.0;
            let c = offset_point(*p, *h, 0.0, side * (curb + 0.5 + depth / 2.0));
            let corners: Vec<[f64; 2]> = [(-3.0, -2.0), (-3.0, 2.0), (3.0, -2.0), (3.0, 2.0), (0.0, 0.0)]
                .iter()
                .map(|(a, o)| offset_point(c, *h, *a, *o))
                .collect();
            if !clear_of_roads(&centerlines, &corners, curb + 0.25) {
                continue;
            }
            if b.objects.iter().any(|o| {
                o.class == SemanticClass::Building && dist(o.position_2d(), c) < 5.5
            }) {
                continue;
            }
            let use_building = placed_building || b.rng.gen_bool(0.4);
            if use_building {
                let height = b.rng.gen_range(5.0..10.0);
                b.push(
                    SemanticClass::Building,
                    Shape::Box {
                        half_x: 3.0,
                        half_y: depth / 2.0,
                        height,
                    },
                    ground_pose(c[0], c[1], *h),
                    false,
                );
            } else if name.categories().contains(&SemanticClass::Tree) {
                b.push(
                    SemanticClass::Tree,
                    Shape::Cylinder {
                        radius: 0.5,
                        height: 4.0,
                    },
                    ground_pose(c[0], c[1], 0.0),
                    false,
                );
            }
        }
    }

    // Roadside dressing for environments with trees / static obstacles.
    if name.categories().contains(&SemanticClass::Tree) {
        for (i, (p, h)) in spots.iter().enumerate().filter(|(i, _)| i % 2 == 1) {
            let side = if i % 4 == 1 { 1.0 } else { -1.0 };
            let c = offset_point(*p, *h, 0.0, side * (lane_width + config.sidewalk_width * 0.6));
            if clear_of_roads(&centerlines, &[c], lane_width + 0.6) {
                b.push(
                    SemanticClass::Tree,
                    Shape::Cylinder {
                        radius: 0.35,
                        height: 3.5,
                    },
                    ground_pose(c[0], c[1], 0.0),
                    false,
                );
            }
        }
    }
    if name.has_static_obstacles() {
        for (i, (p, h)) in spots.iter().enumerate() {
            let side = if i % 2 == 0 { 1.0 } else { -1.0 };
            match i % 4 {
                0 => {
                    let c = offset_point(*p, *h, 0.0, side * (lane_width + 1.0));
                    if clear_of_roads(&centerlines, &[c], lane_width + 0.9) {
                        b.push(
                            SemanticClass::Car,
                            Shape::Box {
                                half_x: 2.0,
                                half_y: 0.9,
                                height: 1.5,
                            },
                            ground_pose(c[0], c[1], *h),
                            false,
                        );
                    }
                }
                1 => {
                    let c = offset_point(*p, *h, 0.0, side * (curb - 0.1));
                    if clear_of_roads(&centerlines, &[c], lane_width + 0.5) {
                        b.push(
                            SemanticClass::Fence,
                            Shape::Box {
                                half_x: 3.0,
                                half_y: 0.05,
                                height: 1.0,
                            },
                            ground_pose(c[0], c[1], *h),
                            false,
                        );
                    }
                }
                2 => {
                    let c = offset_point(*p, *h, 0.0, side * (lane_width + 0.5));
                    if clear_of_roads(&centerlines, &[c], lane_width + 0.3) {
                        b.push(
                            SemanticClass::TrafficLight,
                            Shape::Cylinder {
                                radius: 0.12,
                                height: 3.2,
                            },
                            ground_pose(c[0], c[1], 0.0),
                            false,
                        );
                    }
                }
                _ => {
                    let c = offset_point(*p, *h, 0.0, side * (lane_width + 1.4));
                    if clear_of_roads(&centerlines, &[c], lane_width + 0.3) {
                        b.push(
                            SemanticClass::Pole,
                            Shape::Cylinder {
                                radius: 0.08,
                                height: 4.0,
                            },
                            ground_pose(c[0], c[1], 0.0),
                            false,
                        );
                    }
                }
            }
        }
    }

    // Pedestrians.
    let ped_shape = Shape::Cylinder {
        radius: config.pedestrian_radius,
        height: config.pedestrian_height,
    };
    let mut routes = Vec::new();
    let active = paths[active_path].clone();
    let total = active.length();
    let cross_half = lane_width + 1.2;
    if name.has_perpendicular() {
        let n = config.crossing_stations.max(1);
        for i in 0..n {
            let frac = 0.3 + 0.5 * i as f64 / (n.max(2) - 1) as f64;
            let s = if n == 1 { 0.5 * total } else { frac * total };
            let (p, h) = active.point_at(s);
            let (lo, hi) = config.group_size;
            let group = b.rng.gen_range(lo.min(hi)..=hi.max(lo)).max(1);
            let base_phase = b.rng.gen_range(0.0..4.0 * cross_half);
            for g in 0..group {
                let along = (g as f64 - (group as f64 - 1.0) / 2.0) * 0.8;
                let a = offset_point(p, h, along, -cross_half);
                let bb = offset_point(p, h, along, cross_half);
                let speed = speed_mode.sample(b.rng);
                let phase = base_phase + b.rng.gen_range(-0.4..0.4);
                let obj = b.push(SemanticClass::Pedestrian, ped_shape, ground_pose(a[0], a[1], 0.0), true);
                routes.push(PedestrianRoute {
                    object: obj,
                    a,
                    b: bb,
                    direction: RouteDirection::Perpendicular,
                    speed,
                    phase,
                });
            }
        }
    }
    if name.has_parallel() {
        let n = 3;
        for i in 0..n {
            let s = total * (0.25 + 0.25 * i as f64);
            let (p, h) = active.point_at(s);
            let side = if i % 2 == 0 { 1.0 } else { -1.0 };
            let off = side * (lane_width - 0.5).max(0.3);
            let a = offset_point(p, h, -5.0, off);
            let bb = offset_point(p, h, 5.0, off);
            let speed = speed_mode.sample(b.rng);
            let phase = b.rng.gen_range(0.0..20.0);
            let obj = b.push(SemanticClass::Pedestrian, ped_shape, ground_pose(a[0], a[1], 0.0), true);
            routes.push(PedestrianRoute {
                object: obj,
                a,
                b: bb,
                direction: RouteDirection::Parallel,
                speed,
                phase,
            });
        }
    }
    if name.has_static_pedestrians() {
        for i in 0..2 {
            let s = total * (0.35 + 0.3 * i as f64);
            let (p, h) = active.point_at(s);
            let side = if i % 2 == 0 { -1.0 } else { 1.0 };
            let a = offset_point(p, h, 0.0, side * (lane_width - 0.4));
            let obj = b.push(SemanticClass::Pedestrian, ped_shape, ground_pose(a[0], a[1], 0.0), false);
            routes.push(PedestrianRoute {
                object: obj,
                a,
                b: a,
                direction: RouteDirection::Static,
                speed: 0.0,
                phase: 0.0,
            });
        }
    }

    let objects = b.objects;
    Ok(EnvironmentSpec {
        name,
        time_limit: config.time_limit.unwrap_or_else(|| name.default_time_limit()),
        paths,
        active_path,
        lane_width,
        sidewalk_width: config.sidewalk_width,
        road_centerlines: centerlines,
        objects,
        pedestrian_routes: routes,
        fps,
        speed_mode,
        angular_acceleration: name.angular_acceleration(),
        config: config.clone(),
    })
}
