//! Track CSV / map JSON parsing, windowing into prediction cases, and
//! train/test splitting.
//!
//! The track schema is one row per (recording case, agent, frame):
//! `case_id,track_id,frame_id,timestamp_ms,agent_type,x,y,vx,vy,psi_rad,length,width`.
//! Maps are JSON objects `{"polylines":[{"id":..,"kind":..,"points":[[x,y],..]},..]}`.
//! Parsing is strict: unknown agent types and polyline kinds, duplicate
//! keys, non-finite numbers, and out-of-order timestamps are hard errors.

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashSet};
use std::path::Path;
use thiserror::Error;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::scene::{
    normalize_case, wrap_angle, AgentHistory, AgentKind, Polyline, PolylineKind, PredictionCase,
    RigidTransform, SceneError, TrackPoint, Vec2,
};

pub const TRACK_HEADER: &str =
    "case_id,track_id,frame_id,timestamp_ms,agent_type,x,y,vx,vy,psi_rad,length,width";

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("track file header mismatch: expected '{expected}', got '{got}'")]
    Header { expected: String, got: String },
    #[error("track file line {line}: {message}")]
    Row { line: u64, message: String },
    #[error("duplicate row for case {case_id}, track {track_id}, frame {frame_id}")]
    DuplicateRow {
        case_id: u64,
        track_id: u64,
        frame_id: u64,
    },
    #[error("case {case_id} track {track_id}: timestamps not strictly increasing")]
    NonMonotoneTimestamps { case_id: u64, track_id: u64 },
    #[error("csv: {0}")]
    Csv(String),
    #[error("map file: {0}")]
    MapJson(#[from] serde_json::Error),
    #[error("map file: duplicate polyline id {0}")]
    DuplicatePolylineId(u64),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error("test fraction must be in (0, 1), got {0}")]
    BadTestFraction(f64),
    #[error("need at least 2 distinct case ids to split, got {0}")]
    TooFewCaseIds(usize),
}

/// One parsed track row, kept exactly as read so write/parse round-trips.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackRow {
    pub case_id: u64,
    pub track_id: u64,
    pub frame_id: u64,
    pub timestamp_ms: i64,
    pub agent_type: AgentKind,
    pub x: f64,
    pub y: f64,
    pub vx: f64,
    pub vy: f64,
    pub psi_rad: f64,
    pub length: f64,
    pub width: f64,
}

impl TrackRow {
    fn to_track_point(&self) -> TrackPoint {
        TrackPoint {
            frame: self.frame_id,
            timestamp_ms: self.timestamp_ms,
            position: Vec2::new(self.x, self.y),
            velocity: Vec2::new(self.vx, self.vy),
            heading: wrap_angle(self.psi_rad),
            agent_kind: self.agent_type,
            length: self.length,
            width: self.width,
        }
    }
}

/// A validated track file: keys unique, numbers finite, timestamps
/// strictly increasing along every track.
#[derive(Clone, Debug, PartialEq)]
pub struct TrackFile {
    pub rows: Vec<TrackRow>,
}

/// Everything needed to train and evaluate on one scenario.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub scenario_name: String,
    pub seed: u64,
    pub train: Vec<PredictionCase>,
    pub test: Vec<PredictionCase>,
}

pub fn parse_tracks(path: &Path) -> Result<TrackFile, IngestError> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| IngestError::Csv(e.to_string()))?;
    let headers = reader
        .headers()
        .map_err(|e| IngestError::Csv(e.to_string()))?
        .clone();
    let got = headers.iter().collect::<Vec<_>>().join(",");
    if got != TRACK_HEADER {
        return Err(IngestError::Header {
            expected: TRACK_HEADER.to_string(),
            got,
        });
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| IngestError::Csv(e.to_string()))?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let row: TrackRow = record
            .deserialize(Some(&headers))
            .map_err(|e| IngestError::Row {
                line,
                message: e.to_string(),
            })?;
        let fields = [
            ("x", row.x),
            ("y", row.y),
            ("vx", row.vx),
            ("vy", row.vy),
            ("psi_rad", row.psi_rad),
            ("length", row.length),
            ("width", row.width),
        ];
        for (name, value) in fields {
            if !value.is_finite() {
                return Err(IngestError::Row {
                    line,
                    message: format!("field {name} is not finite ({value})"),
                });
            }
        }
        if row.length < 0.0 || row.width < 0.0 {
            return Err(IngestError::Row {
                line,
                message: format!("negative extent ({}, {})", row.length, row.width),
            });
        }
        rows.push(row);
    }
    validate_rows(&rows)?;
    Ok(TrackFile { rows })
}

fn validate_rows(rows: &[TrackRow]) -> Result<(), IngestError> {
    let mut seen = HashSet::new();
    for row in rows {
        if !seen.insert((row.case_id, row.track_id, row.frame_id)) {
            return Err(IngestError::DuplicateRow {
                case_id: row.case_id,
                track_id: row.track_id,
                frame_id: row.frame_id,
            });
        }
    }
    let mut tracks: BTreeMap<(u64, u64), Vec<(u64, i64)>> = BTreeMap::new();
    for row in rows {
        tracks
            .entry((row.case_id, row.track_id))
            .or_default()
            .push((row.frame_id, row.timestamp_ms));
    }
    for ((case_id, track_id), mut frames) in tracks {
        frames.sort_unstable_by_key(|(frame, _)| *frame);
        if frames.windows(2).any(|w| w[1].1 <= w[0].1) {
            return Err(IngestError::NonMonotoneTimestamps { case_id, track_id });
        }
    }
    Ok(())
}

pub fn write_tracks(path: &Path, tracks: &TrackFile) -> Result<(), IngestError> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| IngestError::Csv(e.to_string()))?;
    for row in &tracks.rows {
        writer
            .serialize(row)
            .map_err(|e| IngestError::Csv(e.to_string()))?;
    }
    writer.flush()?;
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct MapFile {
    polylines: Vec<MapPolyline>,
}

#[derive(Serialize, Deserialize)]
struct MapPolyline {
    id: u64,
    kind: PolylineKind,
    points: Vec<[f64; 2]>,
}

pub fn parse_map(path: &Path) -> Result<Vec<Polyline>, IngestError> {
    let file = std::fs::File::open(path)?;
    let map: MapFile = serde_json::from_reader(std::io::BufReader::new(file))?;
    let mut seen = HashSet::new();
    let mut polylines = Vec::with_capacity(map.polylines.len());
    for entry in map.polylines {
        if !seen.insert(entry.id) {
            return Err(IngestError::DuplicatePolylineId(entry.id));
        }
        let points = entry.points.iter().map(|p| Vec2::new(p[0], p[1])).collect();
        polylines.push(Polyline::new(entry.id, entry.kind, points)?);
    }
    Ok(polylines)
}

pub fn write_map(path: &Path, polylines: &[Polyline]) -> Result<(), IngestError> {
    let map = MapFile {
        polylines: polylines
            .iter()
            .map(|p| MapPolyline {
                id: p.id,
                kind: p.kind,
                points: p.points.iter().map(|v| [v.x, v.y]).collect(),
            })
            .collect(),
    };
    let file = std::fs::File::create(path)?;
    serde_json::to_writer_pretty(std::io::BufWriter::new(file), &map)?;
    Ok(())
}

/// Windows tracks into normalized prediction cases.
///
/// A window starts every `stride` frames from each recording's first frame.
/// An agent becomes a target when it covers all `t_h` observation frames
/// and at least one future frame; the future mask is the contiguous prefix
/// of frames present after the window. Other agents with at least two rows
/// inside the window are kept as context.
pub fn build_cases(
    tracks: &TrackFile,
    map: &[Polyline],
    t_h: usize,
    t_f: usize,
    stride: usize,
) -> Result<Vec<PredictionCase>, IngestError> {
    assert!(
        t_h >= 1 && t_f >= 1 && stride >= 1,
        "horizons and stride must be positive"
    );
    // case_id → track_id → frame-sorted rows
    let mut recordings: BTreeMap<u64, BTreeMap<u64, Vec<&TrackRow>>> = BTreeMap::new();
    for row in &tracks.rows {
        recordings
            .entry(row.case_id)
            .or_default()
            .entry(row.track_id)
            .or_default()
            .push(row);
    }
    for tracks in recordings.values_mut() {
        for rows in tracks.values_mut() {
            rows.sort_unstable_by_key(|r| r.frame_id);
        }
    }

    let mut cases = Vec::new();
    for (&case_id, agents) in &recordings {
        let min_frame = agents
            .values()
            .flat_map(|rows| rows.first().map(|r| r.frame_id))
            .min()
            .unwrap_or(0);
        let max_frame = agents
            .values()
            .flat_map(|rows| rows.last().map(|r| r.frame_id))
            .max()
            .unwrap_or(0);
        let mut window = min_frame;
        while window + t_h as u64 <= max_frame + 1 {
            for (&target_id, rows) in agents {
                let Some(case) =
                    window_case(case_id, target_id, rows, agents, map, window, t_h, t_f)
                else {
                    continue;
                };
                case.validate()?;
                cases.push(normalize_case(case));
            }
            window += stride as u64;
        }
    }
    Ok(cases)
}

/// Builds the case for one (target, window) pair, or `None` if the target
/// lacks full observation coverage or any future frame.
#[allow(clippy::too_many_arguments)]
fn window_case(
    case_id: u64,
    target_id: u64,
    target_rows: &[&TrackRow],
    agents: &BTreeMap<u64, Vec<&TrackRow>>,
    map: &[Polyline],
    window: u64,
    t_h: usize,
    t_f: usize,
) -> Option<PredictionCase> {
    let frame_of = |rows: &[&TrackRow], frame: u64| -> Option<TrackRow> {
        rows.iter()
            .find(|r| r.frame_id == frame)
            .map(|r| (*r).clone())
    };
    // Target needs every observation frame.
    let mut history = Vec::with_capacity(t_h);
    for k in 0..t_h {
        history.push(frame_of(target_rows, window + k as u64)?);
    }
    // Future: contiguous prefix of present frames.
    let future_start = window + t_h as u64;
    let mut future_truth = vec![Vec2::ZERO; t_f];
    let mut future_mask = vec![false; t_f];
    let mut last_future: Option<TrackRow> = None;
    for k in 0..t_f {
        match frame_of(target_rows, future_start + k as u64) {
            Some(row) => {
                future_truth[k] = Vec2::new(row.x, row.y);
                future_mask[k] = true;
                last_future = Some(row);
            }
            None => break,
        }
    }
    let last_future = last_future?;

    let mut agent_histories = Vec::new();
    for (&agent_id, rows) in agents {
        if agent_id == target_id {
            continue;
        }
        let in_window: Vec<TrackRow> = rows
            .iter()
            .filter(|r| r.frame_id >= window && r.frame_id < future_start)
            .map(|r| (*r).clone())
            .collect();
        if in_window.len() < 2 {
            continue;
        }
        agent_histories.push(AgentHistory {
            agent_id,
            kind: in_window[0].agent_type,
            points: in_window.iter().map(TrackRow::to_track_point).collect(),
        });
    }
    agent_histories.push(AgentHistory {
        agent_id: target_id,
        kind: history[0].agent_type,
        points: history.iter().map(TrackRow::to_track_point).collect(),
    });

    Some(PredictionCase {
        case_id,
        target_id,
        window_start: window,
        t_h,
        t_f,
        map_polylines: map.to_vec(),
        agent_histories,
        future_truth,
        future_mask,
        final_speed: Vec2::new(last_future.vx, last_future.vy).norm(),
        final_heading: wrap_angle(last_future.psi_rad),
        normalization: RigidTransform::identity(),
    })
}

/// Splits cases by recording (`case_id`), never by window, so overlapping
/// windows of one recording cannot leak across the split.
pub fn split_dataset(
    cases: Vec<PredictionCase>,
    test_fraction: f64,
    seed: u64,
    scenario_name: &str,
) -> Result<DatasetSplit, IngestError> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(IngestError::BadTestFraction(test_fraction));
    }
    let mut ids: Vec<u64> = cases.iter().map(|c| c.case_id).collect();
    ids.sort_unstable();
    ids.dedup();
    if ids.len() < 2 {
        return Err(IngestError::TooFewCaseIds(ids.len()));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    let n_test = ((ids.len() as f64 * test_fraction).round() as usize).clamp(1, ids.len() - 1);
    let test_ids: HashSet<u64> = ids[..n_test].iter().copied().collect();
    let (test, train): (Vec<_>, Vec<_>) = cases
        .into_iter()
        .partition(|c| test_ids.contains(&c.case_id));
    Ok(DatasetSplit {
        scenario_name: scenario_name.to_string(),
        seed,
        train,
        test,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::io::Write;

    fn write_file(dir: &tempfile::TempDir, name: &str, contents: &str) -> std::path::PathBuf {
        let path = dir.path().join(name);
        let mut f = std::fs::File::create(&path).unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        path
    }

    fn straight_rows(
        case_id: u64,
        track_id: u64,
        frames: u64,
        speed: f64,
        y: f64,
    ) -> Vec<TrackRow> {
        (0..frames)
            .map(|f| TrackRow {
                case_id,
                track_id,
                frame_id: f,
                timestamp_ms: f as i64 * 100,
                agent_type: AgentKind::Car,
                x: speed * 0.1 * f as f64,
                y,
                vx: speed,
                vy: 0.0,
                psi_rad: 0.0,
                length: 4.0,
                width: 2.0,
            })
            .collect()
    }

    #[test]
    fn parse_two_valid_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_file(
            &dir,
            "tracks.csv",
            "case_id,track_id,frame_id,timestamp_ms,agent_type,x,y,vx,vy,psi_rad,length,width\n\
             1,1,0,0,car,0.0,0.0,5.0,0.0,0.0,4.0,2.0\n\
             1,1,1,100,car,0.5,0.0,5.0,0.0,0.0,4.0,2.0\n",
        );
        let tracks = parse_tracks(&path).unwrap();
        assert_eq!(tracks.rows.len(), 2);
        assert_eq!(tracks.rows[1].x, 0.5);
    }

    #[test]
    fn unknown_agent_type_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_file(
            &dir,
            "tracks.csv",
            "case_id,track_id,frame_id,timestamp_ms,agent_type,x,y,vx,vy,psi_rad,length,width\n\
             1,1,0,0,tram,0.0,0.0,5.0,0.0,0.0,4.0,2.0\n",
        );
        let err = parse_tracks(&path).unwrap_err();
        match err {
            IngestError::Row { line, message } => {
                assert_eq!(line, 2);
                assert!(
                    message.contains("tram"),
                    "message should name the value: {message}"
                );
            }
            other => panic!("expected row error, got {other}"),
        }
    }

    #[test]
    fn header_mismatch_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_file(&dir, "tracks.csv", "a,b,c\n1,2,3\n");
        assert!(matches!(
            parse_tracks(&path),
            Err(IngestError::Header { .. })
        ));
    }

    #[test]
    fn duplicate_row_rejected() {
        let mut rows = straight_rows(1, 1, 3, 5.0, 0.0);
        rows.push(rows[0].clone());
        assert!(matches!(
            validate_rows(&rows),
            Err(IngestError::DuplicateRow { frame_id: 0, .. })
        ));
    }

    #[test]
    fn non_monotone_timestamps_rejected() {
        let mut rows = straight_rows(1, 1, 3, 5.0, 0.0);
        rows[2].timestamp_ms = rows[1].timestamp_ms;
        assert!(matches!(
            validate_rows(&rows),
            Err(IngestError::NonMonotoneTimestamps {
                case_id: 1,
                track_id: 1
            })
        ));
    }

    #[test]
    fn non_finite_field_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_file(
            &dir,
            "tracks.csv",
            "case_id,track_id,frame_id,timestamp_ms,agent_type,x,y,vx,vy,psi_rad,length,width\n\
             1,1,0,0,car,NaN,0.0,5.0,0.0,0.0,4.0,2.0\n",
        );
        let err = parse_tracks(&path).unwrap_err();
        assert!(matches!(err, IngestError::Row { line: 2, .. }));
    }

    #[test]
    fn map_parses_single_border() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_file(
            &dir,
            "map.json",
            r#"{"polylines":[{"id":1,"kind":"border","points":[[0,0],[1,0],[2,0],[3,0]]}]}"#,
        );
        let map = parse_map(&path).unwrap();
        assert_eq!(map.len(), 1);
        assert_eq!(map[0].kind, PolylineKind::Border);
        assert_eq!(map[0].points.len(), 4);
    }

    #[test]
    fn map_duplicate_id_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_file(
            &dir,
            "map.json",
            r#"{"polylines":[
                {"id":3,"kind":"border","points":[[0,0],[1,0]]},
                {"id":3,"kind":"lane-marking","points":[[0,1],[1,1]]}]}"#,
        );
        assert!(matches!(
            parse_map(&path),
            Err(IngestError::DuplicatePolylineId(3))
        ));
    }

    #[test]
    fn map_short_polyline_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_file(
            &dir,
            "map.json",
            r#"{"polylines":[{"id":1,"kind":"border","points":[[0,0]]}]}"#,
        );
        assert!(matches!(
            parse_map(&path),
            Err(IngestError::Scene(SceneError::TooFewPoints {
                id: 1,
                count: 1
            }))
        ));
    }

    #[test]
    fn map_unknown_kind_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_file(
            &dir,
            "map.json",
            r#"{"polylines":[{"id":1,"kind":"median","points":[[0,0],[1,0]]}]}"#,
        );
        let err = parse_map(&path).unwrap_err();
        assert!(err.to_string().contains("median"), "got: {err}");
    }

    #[test]
    fn single_agent_forty_frames_one_full_case() {
        let tracks = TrackFile {
            rows: straight_rows(1, 1, 40, 5.0, 0.0),
        };
        let cases = build_cases(&tracks, &[], 10, 30, 40).unwrap();
        assert_eq!(cases.len(), 1);
        assert_eq!(cases[0].valid_future_len(), 30);
        assert_eq!(cases[0].window_start, 0);
        // Normalized: target's last observed position is the origin.
        let last = cases[0].target_history().points.last().unwrap().position;
        assert_eq!(last, Vec2::ZERO);
    }

    #[test]
    fn short_future_yields_prefix_mask() {
        let tracks = TrackFile {
            rows: straight_rows(1, 1, 25, 5.0, 0.0),
        };
        let cases = build_cases(&tracks, &[], 10, 30, 25).unwrap();
        assert_eq!(cases.len(), 1);
        assert_eq!(cases[0].valid_future_len(), 15);
        assert!(cases[0].future_mask[14] && !cases[0].future_mask[15]);
    }

    #[test]
    fn co_present_agents_give_two_cases_with_context() {
        let mut rows = straight_rows(1, 1, 40, 5.0, 0.0);
        rows.extend(straight_rows(1, 2, 40, 4.0, 3.5));
        let tracks = TrackFile { rows };
        let cases = build_cases(&tracks, &[], 10, 30, 40).unwrap();
        assert_eq!(cases.len(), 2);
        for case in &cases {
            assert_eq!(case.agent_histories.len(), 2);
            let context = case
                .agent_histories
                .iter()
                .find(|h| h.agent_id != case.target_id)
                .unwrap();
            assert_eq!(context.points.len(), 10);
        }
        assert_ne!(cases[0].target_id, cases[1].target_id);
    }

    #[test]
    fn agent_without_full_history_skipped_as_target_kept_as_context() {
        let mut rows = straight_rows(1, 1, 40, 5.0, 0.0);
        // Second agent appears only for frames 3..8: never a target, but
        // still context in the first window.
        rows.extend(
            straight_rows(1, 2, 40, 4.0, 3.5)
                .into_iter()
                .filter(|r| (3..8).contains(&r.frame_id)),
        );
        let tracks = TrackFile { rows };
        let cases = build_cases(&tracks, &[], 10, 30, 40).unwrap();
        assert_eq!(cases.len(), 1);
        assert_eq!(cases[0].target_id, 1);
        assert_eq!(cases[0].agent_histories.len(), 2);
    }

    #[test]
    fn build_cases_is_deterministic() {
        let mut rows = straight_rows(1, 1, 40, 5.0, 0.0);
        rows.extend(straight_rows(2, 7, 31, 6.0, -2.0));
        let tracks = TrackFile { rows };
        let a = build_cases(&tracks, &[], 10, 30, 10).unwrap();
        let b = build_cases(&tracks, &[], 10, 30, 10).unwrap();
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x, y);
        }
    }

    fn dummy_case(case_id: u64) -> PredictionCase {
        let points: Vec<TrackPoint> = straight_rows(case_id, 1, 10, 5.0, 0.0)
            .iter()
            .map(TrackRow::to_track_point)
            .collect();
        PredictionCase {
            case_id,
            target_id: 1,
            window_start: 0,
            t_h: 10,
            t_f: 30,
            map_polylines: vec![],
            agent_histories: vec![AgentHistory {
                agent_id: 1,
                kind: AgentKind::Car,
                points,
            }],
            future_truth: vec![Vec2::new(1.0, 0.0); 30],
            future_mask: vec![true; 30],
            final_speed: 5.0,
            final_heading: 0.0,
            normalization: RigidTransform::identity(),
        }
    }

    #[test]
    fn split_is_deterministic_and_leak_free() {
        let cases: Vec<PredictionCase> = (1..=10).map(dummy_case).collect();
        let a = split_dataset(cases.clone(), 0.2, 7, "s").unwrap();
        let b = split_dataset(cases, 0.2, 7, "s").unwrap();
        assert_eq!(a.test.len(), 2);
        let ids = |cs: &[PredictionCase]| cs.iter().map(|c| c.case_id).collect::<HashSet<_>>();
        assert_eq!(ids(&a.test), ids(&b.test));
        assert!(ids(&a.test).is_disjoint(&ids(&a.train)));
    }

    #[test]
    fn split_matches_published_proportions() {
        // 20402 test of 96841 total ≈ 21.07%; on 100 recordings that
        // fraction selects 21.
        let cases: Vec<PredictionCase> = (1..=100).map(dummy_case).collect();
        let split = split_dataset(cases, 20402.0 / 96841.0, 3, "merging").unwrap();
        assert_eq!(split.test.len(), 21);
        assert_eq!(split.train.len(), 79);
    }

    #[test]
    fn split_single_case_id_rejected() {
        let cases = vec![dummy_case(1), dummy_case(1)];
        assert!(matches!(
            split_dataset(cases, 0.2, 7, "s"),
            Err(IngestError::TooFewCaseIds(1))
        ));
    }

    #[test]
    fn split_bad_fraction_rejected() {
        let cases: Vec<PredictionCase> = (1..=4).map(dummy_case).collect();
        assert!(matches!(
            split_dataset(cases, 1.0, 7, "s"),
            Err(IngestError::BadTestFraction(_))
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn tracks_round_trip(
            keys in prop::collection::btree_set((1u64..4, 1u64..4, 0u64..40), 1..50),
            values in prop::collection::vec((-1e3..1e3f64, -1e3..1e3f64, -30.0..30.0f64,
                                             -30.0..30.0f64, -3.1..3.1f64, 0.0..6.0f64,
                                             0.0..3.0f64), 50),
        ) {
            let kinds = [AgentKind::Car, AgentKind::Truck, AgentKind::Pedestrian, AgentKind::Bicycle];
            let rows: Vec<TrackRow> = keys
                .iter()
                .zip(&values)
                .map(|(&(case_id, track_id, frame_id), &(x, y, vx, vy, psi, length, width))| TrackRow {
                    case_id,
                    track_id,
                    frame_id,
                    timestamp_ms: frame_id as i64 * 100,
                    agent_type: kinds[(case_id + track_id + frame_id) as usize % 4],
                    x, y, vx, vy,
                    psi_rad: psi,
                    length, width,
                })
                .collect();
            let tracks = TrackFile { rows };
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("tracks.csv");
            write_tracks(&path, &tracks).unwrap();
            let parsed = parse_tracks(&path).unwrap();
            prop_assert_eq!(parsed, tracks);
        }

        #[test]
        fn map_round_trip(
            steps in prop::collection::vec(prop::collection::vec(0.1..5.0f64, 1..6), 1..8),
            ys in prop::collection::vec(-50.0..50.0f64, 8),
        ) {
            let kinds = [
                PolylineKind::LaneMarking,
                PolylineKind::Border,
                PolylineKind::VirtualLine,
                PolylineKind::StopLine,
                PolylineKind::Crosswalk,
            ];
            let polylines: Vec<Polyline> = steps
                .iter()
                .enumerate()
                .map(|(i, deltas)| {
                    let mut x = 0.0;
                    let mut points = vec![Vec2::new(x, ys[i])];
                    for d in deltas {
                        x += d;
                        points.push(Vec2::new(x, ys[i]));
                    }
                    Polyline::new(i as u64 + 1, kinds[i % kinds.len()], points).unwrap()
                })
                .collect();
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("map.json");
            write_map(&path, &polylines).unwrap();
            let parsed = parse_map(&path).unwrap();
            prop_assert_eq!(parsed, polylines);
        }
    }
}
