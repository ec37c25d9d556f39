//! Deterministic SVG rendering of a scene with attribution shading.
//!
//! Every vector node is drawn as one stroked segment, shaded by its
//! relevance clamped at the 99th-percentile normalizer. Map polylines are
//! dashed, trajectory polylines solid, with ground truth and prediction
//! overlaid on top. The output contains no timestamps or other run
//! metadata, so identical inputs produce byte-identical files.

use crate::attribution::VectorRelevance;
use crate::grad::Tensor;
use crate::scene::{GraphInput, PredictionCase};
use std::fmt::Write as _;

#[derive(Clone, Copy, Debug)]
pub struct RenderOptions {
    /// Canvas width in pixels; height follows the scene aspect ratio.
    pub width: f64,
    pub margin: f64,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self {
            width: 800.0,
            margin: 40.0,
        }
    }
}

/// Shade for a clamped intensity in [0, 1]: light gray up to saturated
/// red.
fn shade(intensity: f64) -> String {
    let t = intensity.clamp(0.0, 1.0);
    let gb = (204.0 * (1.0 - t)).round() as u8;
    format!("#cc{gb:02x}{gb:02x}")
}

/// Uniform fallback shade used when all relevance vanishes.
const FALLBACK_INTENSITY: f64 = 0.35;

struct Frame {
    scale: f64,
    min_x: f64,
    max_y: f64,
    margin: f64,
    width: f64,
    height: f64,
}

impl Frame {
    fn fit(points: &[(f64, f64)], options: &RenderOptions) -> Frame {
        let mut min_x = f64::INFINITY;
        let mut max_x = f64::NEG_INFINITY;
        let mut min_y = f64::INFINITY;
        let mut max_y = f64::NEG_INFINITY;
        for &(x, y) in points {
            min_x = min_x.min(x);
            max_x = max_x.max(x);
            min_y = min_y.min(y);
            max_y = max_y.max(y);
        }
        let span_x = (max_x - min_x).max(1e-6);
        let span_y = (max_y - min_y).max(1e-6);
        let inner = options.width - 2.0 * options.margin;
        let scale = inner / span_x.max(span_y);
        Frame {
            scale,
            min_x,
            max_y,
            margin: options.margin,
            width: options.width,
            height: span_y * scale + 2.0 * options.margin,
        }
    }

    /// World to canvas; the y axis flips because SVG grows downward.
    fn map(&self, x: f64, y: f64) -> (f64, f64) {
        (
            self.margin + (x - self.min_x) * self.scale,
            self.margin + (self.max_y - y) * self.scale,
        )
    }
}

fn push_line(
    svg: &mut String,
    frame: &Frame,
    from: (f64, f64),
    to: (f64, f64),
    stroke: &str,
    width: f64,
    dash: Option<&str>,
) {
    let (x1, y1) = frame.map(from.0, from.1);
    let (x2, y2) = frame.map(to.0, to.1);
    let dash_attr = match dash {
        Some(d) => format!(" stroke-dasharray=\"{d}\""),
        None => String::new(),
    };
    writeln!(
        svg,
        "  <line x1=\"{x1:.2}\" y1=\"{y1:.2}\" x2=\"{x2:.2}\" y2=\"{y2:.2}\" \
         stroke=\"{stroke}\" stroke-width=\"{width:.2}\" stroke-linecap=\"round\"{dash_attr}/>"
    )
    .expect("string write");
}

fn push_polyline(
    svg: &mut String,
    frame: &Frame,
    points: &[(f64, f64)],
    stroke: &str,
    width: f64,
    dash: Option<&str>,
) {
    if points.len() < 2 {
        return;
    }
    let mapped: Vec<String> = points
        .iter()
        .map(|&(x, y)| {
            let (cx, cy) = frame.map(x, y);
            format!("{cx:.2},{cy:.2}")
        })
        .collect();
    let dash_attr = match dash {
        Some(d) => format!(" stroke-dasharray=\"{d}\""),
        None => String::new(),
    };
    writeln!(
        svg,
        "  <polyline points=\"{}\" fill=\"none\" stroke=\"{stroke}\" \
         stroke-width=\"{width:.2}\" stroke-linejoin=\"round\"{dash_attr}/>",
        mapped.join(" ")
    )
    .expect("string write");
}

/// Renders the scene to an SVG string.
///
/// `relevance` must align with the graph's node rows; a zero normalizer
/// falls back to a uniform shade. Ground truth covers the mask-valid
/// future frames; `prediction`, when given, is drawn on top.
pub fn render_scene_svg(
    case: &PredictionCase,
    graph: &GraphInput,
    relevance: &VectorRelevance,
    prediction: Option<&Tensor>,
    options: &RenderOptions,
) -> String {
    assert_eq!(
        relevance.relevance.len(),
        graph.nodes.rows(),
        "relevance must align with graph nodes"
    );

    let node_seg = |r: usize| -> ((f64, f64), (f64, f64)) {
        (
            (graph.nodes.at2(r, 0), graph.nodes.at2(r, 1)),
            (graph.nodes.at2(r, 2), graph.nodes.at2(r, 3)),
        )
    };
    let truth_points: Vec<(f64, f64)> = case
        .future_truth
        .iter()
        .zip(&case.future_mask)
        .filter(|(_, m)| **m)
        .map(|(p, _)| (p.x, p.y))
        .collect();
    let pred_points: Vec<(f64, f64)> = match prediction {
        Some(p) => (0..p.rows()).map(|r| (p.at2(r, 0), p.at2(r, 1))).collect(),
        None => Vec::new(),
    };

    let mut extent: Vec<(f64, f64)> = Vec::new();
    for r in 0..graph.nodes.rows() {
        let (a, b) = node_seg(r);
        extent.push(a);
        extent.push(b);
    }
    extent.extend(&truth_points);
    extent.extend(&pred_points);
    let frame = Frame::fit(&extent, options);

    let mut svg = String::new();
    writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {:.2} {:.2}\">",
        frame.width, frame.height
    )
    .expect("string write");
    writeln!(
        svg,
        "  <rect x=\"0\" y=\"0\" width=\"{:.2}\" height=\"{:.2}\" fill=\"white\"/>",
        frame.width, frame.height
    )
    .expect("string write");

    let intensity = |r: usize| -> f64 {
        if relevance.normalizer == 0.0 {
            FALLBACK_INTENSITY
        } else {
            (relevance.relevance[r] / relevance.normalizer).min(1.0)
        }
    };

    // Map under trajectories, target on top of other trajectories.
    let mut order: Vec<usize> = (0..graph.groups.len()).collect();
    order.sort_by_key(|&g| {
        if !graph.groups[g].kind.is_trajectory() {
            0
        } else if g == graph.target_group {
            2
        } else {
            1
        }
    });
    for g in order {
        let group = &graph.groups[g];
        let is_map = !group.kind.is_trajectory();
        for r in group.start..group.start + group.len {
            let (a, b) = node_seg(r);
            let color = shade(intensity(r));
            if is_map {
                push_line(&mut svg, &frame, a, b, &color, 1.5, Some("4 3"));
            } else {
                let width = if g == graph.target_group { 3.0 } else { 2.2 };
                push_line(&mut svg, &frame, a, b, &color, width, None);
            }
        }
    }

    push_polyline(&mut svg, &frame, &truth_points, "#1a9850", 2.0, Some("6 3"));
    if !pred_points.is_empty() {
        push_polyline(&mut svg, &frame, &pred_points, "#2166ac", 2.0, None);
    }
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{PolylineGroup, PolylineKind, Vec2, NODE_WIDTH};

    fn graph_with(rows: Vec<[f64; 4]>, groups: Vec<PolylineGroup>, target: usize) -> GraphInput {
        let full: Vec<Vec<f64>> = rows
            .iter()
            .map(|r| {
                let mut row = vec![0.0; NODE_WIDTH];
                row[..4].copy_from_slice(r);
                row
            })
            .collect();
        GraphInput {
            nodes: Tensor::from_rows(&full).unwrap(),
            groups,
            target_group: target,
        }
    }

    fn case_with_future(points: &[(f64, f64)], mask: &[bool]) -> PredictionCase {
        PredictionCase {
            case_id: 1,
            target_id: 1,
            window_start: 0,
            t_h: 2,
            t_f: points.len(),
            map_polylines: vec![],
            agent_histories: vec![],
            future_truth: points.iter().map(|&(x, y)| Vec2::new(x, y)).collect(),
            future_mask: mask.to_vec(),
            final_speed: 1.0,
            final_heading: 0.0,
            normalization: crate::scene::RigidTransform::identity(),
        }
    }

    fn demo() -> (PredictionCase, GraphInput) {
        let graph = graph_with(
            vec![
                [0.0, 0.0, 1.0, 0.0],
                [1.0, 0.0, 2.0, 0.0],
                [0.0, 2.0, 4.0, 2.0],
            ],
            vec![
                PolylineGroup {
                    start: 0,
                    len: 2,
                    kind: PolylineKind::TargetTrajectory,
                    polyline_id: 1,
                    source_id: 1,
                },
                PolylineGroup {
                    start: 2,
                    len: 1,
                    kind: PolylineKind::Border,
                    polyline_id: 2,
                    source_id: 7,
                },
            ],
            0,
        );
        let case = case_with_future(&[(2.5, 0.0), (3.0, 0.1), (3.5, 0.2)], &[true, true, false]);
        (case, graph)
    }

    #[test]
    fn renders_one_segment_per_node_with_styles() {
        let (case, graph) = demo();
        let rel = VectorRelevance {
            relevance: vec![1.0, 0.5, 0.2],
            normalizer: 1.0,
        };
        let pred = Tensor::new(vec![2, 2], vec![2.4, 0.0, 2.9, 0.0]).unwrap();
        let svg = render_scene_svg(&case, &graph, &rel, Some(&pred), &RenderOptions::default());

        assert!(svg.starts_with("<svg "));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<line ").count(), 3);
        // Map segment dashed, trajectory segments not.
        assert_eq!(svg.matches("stroke-dasharray=\"4 3\"").count(), 1);
        // Ground truth (dashed) and prediction overlays.
        assert_eq!(svg.matches("<polyline ").count(), 2);
        assert_eq!(svg.matches("stroke-dasharray=\"6 3\"").count(), 1);
        assert!(svg.contains("#1a9850") && svg.contains("#2166ac"));
    }

    #[test]
    fn truth_overlay_covers_only_valid_frames() {
        let (case, graph) = demo();
        let rel = VectorRelevance {
            relevance: vec![0.0; 3],
            normalizer: 1.0,
        };
        let svg = render_scene_svg(&case, &graph, &rel, None, &RenderOptions::default());
        let truth_line = svg
            .lines()
            .find(|l| l.contains("#1a9850"))
            .expect("truth polyline present");
        // Two valid frames, so two coordinate pairs.
        let pairs = truth_line
            .split("points=\"")
            .nth(1)
            .unwrap()
            .split('"')
            .next()
            .unwrap();
        assert_eq!(pairs.split(' ').count(), 2);
        assert!(!svg.contains("#2166ac"));
    }

    #[test]
    fn relevance_shading_clamps_at_normalizer() {
        let (case, graph) = demo();
        let rel = VectorRelevance {
            relevance: vec![100.0, 1.0, 0.0],
            normalizer: 1.0,
        };
        let svg = render_scene_svg(&case, &graph, &rel, None, &RenderOptions::default());
        // Clamped max and exact max share the saturated shade.
        assert_eq!(svg.matches("stroke=\"#cc0000\"").count(), 2);
    }

    #[test]
    fn zero_relevance_falls_back_to_uniform_shade() {
        let (case, graph) = demo();
        let rel = VectorRelevance {
            relevance: vec![0.0; 3],
            normalizer: 0.0,
        };
        let svg = render_scene_svg(&case, &graph, &rel, None, &RenderOptions::default());
        let uniform = shade(FALLBACK_INTENSITY);
        assert_eq!(svg.matches(&format!("stroke=\"{uniform}\"")).count(), 3);
        assert!(!svg.contains("NaN") && !svg.contains("inf"));
    }

    #[test]
    fn output_is_deterministic() {
        let (case, graph) = demo();
        let rel = VectorRelevance {
            relevance: vec![0.3, 0.9, 0.1],
            normalizer: 0.9,
        };
        let pred = Tensor::new(vec![1, 2], vec![2.0, 1.0]).unwrap();
        let a = render_scene_svg(&case, &graph, &rel, Some(&pred), &RenderOptions::default());
        let b = render_scene_svg(&case, &graph, &rel, Some(&pred), &RenderOptions::default());
        assert_eq!(a, b);
    }

    #[test]
    fn map_drawn_under_trajectories() {
        let (case, graph) = demo();
        let rel = VectorRelevance {
            relevance: vec![0.5; 3],
            normalizer: 1.0,
        };
        let svg = render_scene_svg(&case, &graph, &rel, None, &RenderOptions::default());
        let dashed_pos = svg.find("stroke-dasharray=\"4 3\"").unwrap();
        let solid_pos = svg.find("stroke-width=\"3.00\"").unwrap();
        assert!(
            dashed_pos < solid_pos,
            "map segments must precede the target"
        );
    }
}
