//! Scene domain types, polyline segmentation, and target-centric
//! normalization.
//!
//! A scene is a set of polylines: agent trajectories (the prediction target
//! plus context agents) and map elements. Segmentation turns each polyline
//! into a chain of vector nodes whose flat feature rows feed the predictor;
//! [`FeatureSchema`] records how those rows decompose into feature groups.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::ops::{Add, Mul, Range, Sub};
use thiserror::Error;

use crate::grad::Tensor;

/// Number of polyline kinds; width of the type one-hot block.
pub const POLYLINE_KIND_COUNT: usize = 7;

/// Flat feature-row width: origin(2) + destination(2) + one-hot(K) +
/// state(4) + polyline id(1).
pub const NODE_WIDTH: usize = 2 + 2 + POLYLINE_KIND_COUNT + 4 + 1;

/// Default chord cap for map polyline resampling, meters.
pub const DEFAULT_MAX_SEG_LEN: f64 = 2.0;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("polyline id must be >= 1, got {0}")]
    BadPolylineId(u64),
    #[error("polyline {id} needs at least 2 points, got {count}")]
    TooFewPoints { id: u64, count: usize },
    #[error("polyline {id} repeats point {index} exactly")]
    RepeatedPoint { id: u64, index: usize },
    #[error("polyline {id} is degenerate (zero-length chord)")]
    DegeneratePolyline { id: u64 },
    #[error("unknown polyline kind '{0}'")]
    UnknownPolylineKind(String),
    #[error("unknown agent type '{0}'")]
    UnknownAgentType(String),
    #[error("case {case_id} target {target_id}: {reason}")]
    InvalidCase {
        case_id: u64,
        target_id: u64,
        reason: String,
    },
}

/// Planar point or displacement, meters.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn dot(self, other: Vec2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    pub fn rotated(self, theta: f64) -> Vec2 {
        let (s, c) = theta.sin_cos();
        Vec2::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, rhs: f64) -> Vec2 {
        Vec2::new(self.x * rhs, self.y * rhs)
    }
}

/// Wraps an angle into (−π, π].
pub fn wrap_angle(h: f64) -> f64 {
    let r = (h + std::f64::consts::PI).rem_euclid(2.0 * std::f64::consts::PI);
    if r == 0.0 {
        std::f64::consts::PI
    } else {
        r - std::f64::consts::PI
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AgentKind {
    Car,
    Truck,
    Pedestrian,
    Bicycle,
}

impl AgentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AgentKind::Car => "car",
            AgentKind::Truck => "truck",
            AgentKind::Pedestrian => "pedestrian",
            AgentKind::Bicycle => "bicycle",
        }
    }
}

impl std::str::FromStr for AgentKind {
    type Err = SceneError;
    fn from_str(s: &str) -> Result<Self, SceneError> {
        match s {
            "car" => Ok(AgentKind::Car),
            "truck" => Ok(AgentKind::Truck),
            "pedestrian" => Ok(AgentKind::Pedestrian),
            "bicycle" => Ok(AgentKind::Bicycle),
            other => Err(SceneError::UnknownAgentType(other.to_string())),
        }
    }
}

impl fmt::Display for AgentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// The closed set of polyline kinds; unknown kinds in input files are a
/// hard error, never a silent extra class.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolylineKind {
    TargetTrajectory,
    AgentTrajectory,
    LaneMarking,
    Border,
    VirtualLine,
    StopLine,
    Crosswalk,
}

impl PolylineKind {
    pub const ALL: [PolylineKind; POLYLINE_KIND_COUNT] = [
        PolylineKind::TargetTrajectory,
        PolylineKind::AgentTrajectory,
        PolylineKind::LaneMarking,
        PolylineKind::Border,
        PolylineKind::VirtualLine,
        PolylineKind::StopLine,
        PolylineKind::Crosswalk,
    ];

    /// Position of this kind in the one-hot block.
    pub fn index(self) -> usize {
        Self::ALL
            .iter()
            .position(|k| *k == self)
            .expect("kind listed")
    }

    /// Trajectory kinds are encoded by the trajectory subgraph stack and
    /// carry motion state; map kinds go through the context stack with
    /// zero-padded state.
    pub fn is_trajectory(self) -> bool {
        matches!(
            self,
            PolylineKind::TargetTrajectory | PolylineKind::AgentTrajectory
        )
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PolylineKind::TargetTrajectory => "target-trajectory",
            PolylineKind::AgentTrajectory => "agent-trajectory",
            PolylineKind::LaneMarking => "lane-marking",
            PolylineKind::Border => "border",
            PolylineKind::VirtualLine => "virtual-line",
            PolylineKind::StopLine => "stop-line",
            PolylineKind::Crosswalk => "crosswalk",
        }
    }
}

impl std::str::FromStr for PolylineKind {
    type Err = SceneError;
    fn from_str(s: &str) -> Result<Self, SceneError> {
        PolylineKind::ALL
            .iter()
            .copied()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| SceneError::UnknownPolylineKind(s.to_string()))
    }
}

impl fmt::Display for PolylineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One observed agent state at a frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackPoint {
    pub frame: u64,
    pub timestamp_ms: i64,
    pub position: Vec2,
    pub velocity: Vec2,
    /// Radians in (−π, π].
    pub heading: f64,
    pub agent_kind: AgentKind,
    /// Meters; zero when absent (pedestrians, bicycles).
    pub length: f64,
    pub width: f64,
}

impl TrackPoint {
    pub fn speed(&self) -> f64 {
        self.velocity.norm()
    }
}

/// An ordered chain of map points.
///
/// Ids start at 1; id 0 is reserved to mean "no polyline" in attribution
/// baselines.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Polyline {
    pub id: u64,
    pub kind: PolylineKind,
    pub points: Vec<Vec2>,
}

impl Polyline {
    pub fn new(id: u64, kind: PolylineKind, points: Vec<Vec2>) -> Result<Self, SceneError> {
        if id == 0 {
            return Err(SceneError::BadPolylineId(id));
        }
        if points.len() < 2 {
            return Err(SceneError::TooFewPoints {
                id,
                count: points.len(),
            });
        }
        for (i, pair) in points.windows(2).enumerate() {
            if pair[0] == pair[1] {
                return Err(SceneError::RepeatedPoint { id, index: i + 1 });
            }
        }
        Ok(Self { id, kind, points })
    }
}

/// One polyline segment's flat features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VectorNode {
    pub origin: Vec2,
    pub destination: Vec2,
    pub type_onehot: [f64; POLYLINE_KIND_COUNT],
    /// (speed, heading, length, width); all-zero for map context nodes.
    pub state: [f64; 4],
    pub polyline_id: u64,
}

impl VectorNode {
    pub fn feature_row(&self) -> [f64; NODE_WIDTH] {
        let mut row = [0.0; NODE_WIDTH];
        row[0] = self.origin.x;
        row[1] = self.origin.y;
        row[2] = self.destination.x;
        row[3] = self.destination.y;
        row[4..4 + POLYLINE_KIND_COUNT].copy_from_slice(&self.type_onehot);
        row[4 + POLYLINE_KIND_COUNT..4 + POLYLINE_KIND_COUNT + 4].copy_from_slice(&self.state);
        row[NODE_WIDTH - 1] = self.polyline_id as f64;
        row
    }
}

/// One named block of columns within a node feature row.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureGroup {
    pub name: &'static str,
    pub range: Range<usize>,
    /// Discrete groups are zeroed in attribution baselines instead of
    /// receiving Gaussian noise.
    pub discrete: bool,
}

/// How a flat node row decomposes into feature groups.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSchema {
    groups: Vec<FeatureGroup>,
}

impl FeatureSchema {
    /// The fixed layout used throughout: origin, destination, type one-hot,
    /// state, polyline id.
    pub fn standard() -> Self {
        let k = POLYLINE_KIND_COUNT;
        let schema = Self {
            groups: vec![
                FeatureGroup {
                    name: "origin",
                    range: 0..2,
                    discrete: false,
                },
                FeatureGroup {
                    name: "destination",
                    range: 2..4,
                    discrete: false,
                },
                FeatureGroup {
                    name: "type_onehot",
                    range: 4..4 + k,
                    discrete: true,
                },
                FeatureGroup {
                    name: "state",
                    range: 4 + k..4 + k + 4,
                    discrete: false,
                },
                FeatureGroup {
                    name: "polyline_id",
                    range: 4 + k + 4..4 + k + 5,
                    discrete: true,
                },
            ],
        };
        debug_assert!(schema.covers_row());
        schema
    }

    fn covers_row(&self) -> bool {
        let mut next = 0;
        for g in &self.groups {
            if g.range.start != next || g.range.is_empty() {
                return false;
            }
            next = g.range.end;
        }
        next == self.width()
    }

    pub fn width(&self) -> usize {
        self.groups.last().map(|g| g.range.end).unwrap_or(0)
    }

    pub fn groups(&self) -> &[FeatureGroup] {
        &self.groups
    }

    pub fn group(&self, name: &str) -> Option<&FeatureGroup> {
        self.groups.iter().find(|g| g.name == name)
    }

    pub fn is_discrete_column(&self, col: usize) -> bool {
        self.groups
            .iter()
            .any(|g| g.discrete && g.range.contains(&col))
    }
}

/// Proper rigid motion `p ↦ R(rotation)(p + translation)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform {
    pub rotation: f64,
    pub translation: Vec2,
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: 0.0,
            translation: Vec2::ZERO,
        }
    }

    pub fn apply(&self, p: Vec2) -> Vec2 {
        (p + self.translation).rotated(self.rotation)
    }

    /// Displacements (velocities) see only the rotation.
    pub fn apply_displacement(&self, v: Vec2) -> Vec2 {
        v.rotated(self.rotation)
    }

    pub fn apply_heading(&self, h: f64) -> f64 {
        wrap_angle(h + self.rotation)
    }

    /// The transform equal to applying `self`, then `next`.
    pub fn then(&self, next: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: wrap_angle(self.rotation + next.rotation),
            translation: self.translation + next.translation.rotated(-self.rotation),
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        RigidTransform {
            rotation: -self.rotation,
            translation: (self.translation.rotated(self.rotation)) * -1.0,
        }
    }
}

/// One agent's observed track over the observation window.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentHistory {
    pub agent_id: u64,
    pub kind: AgentKind,
    pub points: Vec<TrackPoint>,
}

/// One supervised sample: a windowed scene with the target's future.
///
/// `future_truth` is padded to `t_f` entries; `future_mask` marks the valid
/// prefix. `normalization` maps raw input coordinates to the stored
/// (target-centric) frame; its inverse maps predictions back to the world.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionCase {
    pub case_id: u64,
    pub target_id: u64,
    /// First frame of the observation window.
    pub window_start: u64,
    pub t_h: usize,
    pub t_f: usize,
    pub map_polylines: Vec<Polyline>,
    /// Includes the target, identified by `target_id`.
    pub agent_histories: Vec<AgentHistory>,
    pub future_truth: Vec<Vec2>,
    pub future_mask: Vec<bool>,
    /// Ground-truth speed at the last valid future frame, m/s.
    pub final_speed: f64,
    /// Ground-truth heading at the last valid future frame, radians.
    pub final_heading: f64,
    pub normalization: RigidTransform,
}

impl PredictionCase {
    /// Stable identifier for artifacts: recording, target, window.
    pub fn key(&self) -> String {
        format!("{}:{}:{}", self.case_id, self.target_id, self.window_start)
    }

    pub fn target_history(&self) -> &AgentHistory {
        self.agent_histories
            .iter()
            .find(|h| h.agent_id == self.target_id)
            .expect("validated case contains its target")
    }

    pub fn valid_future_len(&self) -> usize {
        self.future_mask.iter().filter(|m| **m).count()
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        let fail = |reason: String| SceneError::InvalidCase {
            case_id: self.case_id,
            target_id: self.target_id,
            reason,
        };
        let target = self
            .agent_histories
            .iter()
            .find(|h| h.agent_id == self.target_id)
            .ok_or_else(|| fail("target has no history".into()))?;
        if target.points.len() != self.t_h {
            return Err(fail(format!(
                "target history has {} frames, expected {}",
                target.points.len(),
                self.t_h
            )));
        }
        for h in &self.agent_histories {
            if h.points.len() < 2 {
                return Err(fail(format!(
                    "agent {} history shorter than 2 frames",
                    h.agent_id
                )));
            }
            if h.points
                .windows(2)
                .any(|p| p[1].timestamp_ms <= p[0].timestamp_ms)
            {
                return Err(fail(format!(
                    "agent {} timestamps not increasing",
                    h.agent_id
                )));
            }
        }
        if self.future_truth.len() != self.t_f || self.future_mask.len() != self.t_f {
            return Err(fail(format!(
                "future length {} / mask {} does not match t_f {}",
                self.future_truth.len(),
                self.future_mask.len(),
                self.t_f
            )));
        }
        let valid = self.valid_future_len();
        if valid == 0 {
            return Err(fail("no valid future frames".into()));
        }
        if self.future_mask[..valid].iter().any(|m| !m) {
            return Err(fail("future mask has gaps (must be a prefix)".into()));
        }
        Ok(())
    }
}

/// Splits every edge of a map polyline into equal chords no longer than
/// `max_seg_len` and emits one context node per chord.
///
/// Chords chain exactly: each node's destination is the next node's origin,
/// and concatenating chords reproduces the resampled polyline.
pub fn segment_polyline(
    polyline: &Polyline,
    max_seg_len: f64,
    assigned_id: u64,
) -> Result<Vec<VectorNode>, SceneError> {
    assert!(max_seg_len > 0.0, "max_seg_len must be positive");
    let mut onehot = [0.0; POLYLINE_KIND_COUNT];
    onehot[polyline.kind.index()] = 1.0;
    let mut nodes = Vec::new();
    for pair in polyline.points.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        let len = (b - a).norm();
        if len == 0.0 {
            return Err(SceneError::DegeneratePolyline { id: polyline.id });
        }
        let pieces = (len / max_seg_len).ceil() as usize;
        let mut prev = a;
        for p in 1..=pieces {
            // Interpolate from the endpoints so the final chord lands on b
            // exactly regardless of rounding.
            let next = if p == pieces {
                b
            } else {
                a + (b - a) * (p as f64 / pieces as f64)
            };
            nodes.push(VectorNode {
                origin: prev,
                destination: next,
                type_onehot: onehot,
                state: [0.0; 4],
                polyline_id: assigned_id,
            });
            prev = next;
        }
    }
    Ok(nodes)
}

/// One node per consecutive frame pair; motion state taken from the
/// destination frame. Fewer than 2 points yields no nodes.
pub fn trajectory_nodes(
    points: &[TrackPoint],
    kind: PolylineKind,
    assigned_id: u64,
) -> Vec<VectorNode> {
    let mut onehot = [0.0; POLYLINE_KIND_COUNT];
    onehot[kind.index()] = 1.0;
    points
        .windows(2)
        .map(|pair| {
            let to = &pair[1];
            VectorNode {
                origin: pair[0].position,
                destination: to.position,
                type_onehot: onehot,
                state: [to.speed(), to.heading, to.length, to.width],
                polyline_id: assigned_id,
            }
        })
        .collect()
}

/// Re-expresses a case in the target-centric frame: the target's last
/// observed position becomes (0, 0) and its last observed heading 0 rad.
///
/// The applied motion is composed into `normalization`, so predictions can
/// be mapped back to the original coordinates. Idempotent: normalizing a
/// normalized case changes nothing.
pub fn normalize_case(mut case: PredictionCase) -> PredictionCase {
    let last = *case
        .agent_histories
        .iter()
        .find(|h| h.agent_id == case.target_id)
        .expect("case contains its target")
        .points
        .last()
        .expect("target history non-empty");
    let step = RigidTransform {
        rotation: -last.heading,
        translation: Vec2::ZERO - last.position,
    };
    for polyline in &mut case.map_polylines {
        for p in &mut polyline.points {
            *p = step.apply(*p);
        }
    }
    for history in &mut case.agent_histories {
        for tp in &mut history.points {
            tp.position = step.apply(tp.position);
            tp.velocity = step.apply_displacement(tp.velocity);
            tp.heading = step.apply_heading(tp.heading);
        }
    }
    for (p, valid) in case.future_truth.iter_mut().zip(&case.future_mask) {
        if *valid {
            *p = step.apply(*p);
        }
    }
    case.final_heading = step.apply_heading(case.final_heading);
    case.normalization = case.normalization.then(&step);
    case
}

/// One polyline's slice of the node matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolylineGroup {
    /// First row of this group in the node matrix.
    pub start: usize,
    pub len: usize,
    pub kind: PolylineKind,
    /// In-case id written into the feature rows; sequential from 1 in
    /// group order (0 is the baseline's "non-existence").
    pub polyline_id: u64,
    /// Originating agent id or map polyline id, for reports.
    pub source_id: u64,
}

impl PolylineGroup {
    pub fn rows(&self) -> Range<usize> {
        self.start..self.start + self.len
    }
}

/// The model-facing view of a case: a flat node matrix plus its grouping.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphInput {
    /// `[total nodes, NODE_WIDTH]`, rows grouped by polyline.
    pub nodes: Tensor,
    pub groups: Vec<PolylineGroup>,
    /// Index into `groups` of the target trajectory.
    pub target_group: usize,
}

/// Assembles the node matrix for a normalized case.
///
/// Group order is fixed: target trajectory first, then context agents by
/// ascending agent id, then map polylines in input order. In-case polyline
/// ids are assigned sequentially from 1 in that order.
pub fn build_graph_input(
    case: &PredictionCase,
    schema: &FeatureSchema,
    max_seg_len: f64,
) -> Result<GraphInput, SceneError> {
    assert_eq!(schema.width(), NODE_WIDTH, "schema must cover the node row");
    let mut rows: Vec<[f64; NODE_WIDTH]> = Vec::new();
    let mut groups: Vec<PolylineGroup> = Vec::new();
    let mut next_id = 1u64;
    let push_group = |rows: &mut Vec<[f64; NODE_WIDTH]>,
                      groups: &mut Vec<PolylineGroup>,
                      nodes: Vec<VectorNode>,
                      kind: PolylineKind,
                      source_id: u64,
                      id: u64| {
        let start = rows.len();
        for n in &nodes {
            rows.push(n.feature_row());
        }
        groups.push(PolylineGroup {
            start,
            len: nodes.len(),
            kind,
            polyline_id: id,
            source_id,
        });
    };

    let target = case
        .agent_histories
        .iter()
        .find(|h| h.agent_id == case.target_id)
        .ok_or_else(|| SceneError::InvalidCase {
            case_id: case.case_id,
            target_id: case.target_id,
            reason: "target has no history".into(),
        })?;
    let nodes = trajectory_nodes(&target.points, PolylineKind::TargetTrajectory, next_id);
    push_group(
        &mut rows,
        &mut groups,
        nodes,
        PolylineKind::TargetTrajectory,
        target.agent_id,
        next_id,
    );
    next_id += 1;

    let mut context: Vec<&AgentHistory> = case
        .agent_histories
        .iter()
        .filter(|h| h.agent_id != case.target_id)
        .collect();
    context.sort_by_key(|h| h.agent_id);
    for history in context {
        let nodes = trajectory_nodes(&history.points, PolylineKind::AgentTrajectory, next_id);
        if nodes.is_empty() {
            continue;
        }
        push_group(
            &mut rows,
            &mut groups,
            nodes,
            PolylineKind::AgentTrajectory,
            history.agent_id,
            next_id,
        );
        next_id += 1;
    }

    for polyline in &case.map_polylines {
        let nodes = segment_polyline(polyline, max_seg_len, next_id)?;
        push_group(
            &mut rows,
            &mut groups,
            nodes,
            polyline.kind,
            polyline.id,
            next_id,
        );
        next_id += 1;
    }

    let data: Vec<f64> = rows.iter().flatten().copied().collect();
    let nodes =
        Tensor::new(vec![rows.len(), NODE_WIDTH], data).map_err(|_| SceneError::InvalidCase {
            case_id: case.case_id,
            target_id: case.target_id,
            reason: "empty node matrix".into(),
        })?;
    Ok(GraphInput {
        nodes,
        groups,
        target_group: 0,
    })
}
