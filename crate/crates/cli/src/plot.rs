//! SVG rendering of one scenario with its joint predictions.
//!
//! Ground truth is dashed, predictions are solid with opacity following
//! their score, every predicted endpoint gets a dot and the best-scored
//! pair's endpoints get an oriented vehicle box.

use prospect_core::metrics::iou::OrientedBox;
use prospect_core::scene::{AgentId, Point, PolylineKind, PredictionRecord, Scenario};
use svg::node::element::path::Data;
use svg::node::element::{Circle, Group, Path, Polygon, Rectangle, Text};
use svg::Document;

const COLOR_A: &str = "#1f77b4";
const COLOR_B: &str = "#d62728";
const MARGIN: f64 = 5.0;

fn polyline(points: &[Point], color: &str, width: f64) -> Option<Path> {
    let (first, rest) = points.split_first()?;
    let mut data = Data::new().move_to((first[0], -first[1]));
    for p in rest {
        data = data.line_to((p[0], -p[1]));
    }
    Some(
        Path::new()
            .set("d", data)
            .set("fill", "none")
            .set("stroke", color)
            .set("stroke-width", width)
            .set("stroke-linecap", "round"),
    )
}

fn map_color(kind: PolylineKind) -> &'static str {
    match kind {
        PolylineKind::LaneCenterline => "#c8c8c8",
        PolylineKind::Boundary => "#555555",
        PolylineKind::Crosswalk => "#e0c080",
    }
}

fn box_polygon(b: &OrientedBox, color: &str) -> Polygon {
    let pts: Vec<String> = b.corners().iter().map(|c| format!("{},{}", c[0], -c[1])).collect();
    Polygon::new()
        .set("points", pts.join(" "))
        .set("fill", "none")
        .set("stroke", color)
        .set("stroke-width", 0.3)
}

fn heading_of(traj: &[Point]) -> f64 {
    match traj {
        [.., p, q] if (q[0] - p[0]).hypot(q[1] - p[1]) > 1e-3 => (q[1] - p[1]).atan2(q[0] - p[0]),
        _ => 0.0,
    }
}

/// Renders a scenario; `pair` restricts the ground-truth emphasis to the
/// predicted agents when no record is given.
pub fn render(scenario: &Scenario, record: Option<&PredictionRecord>, pair: Option<(AgentId, AgentId)>) -> String {
    let pair = record.map(|r| (r.agent_a, r.agent_b)).or(pair);
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut extend = |p: &Point| {
        xs.push(p[0]);
        ys.push(-p[1]);
    };
    for t in &scenario.tracks {
        t.positions.iter().zip(&t.valid).filter(|(_, v)| **v).for_each(|(p, _)| extend(p));
    }
    if let Some(r) = record {
        for pp in &r.pairs {
            pp.traj_a.iter().chain(&pp.traj_b).for_each(&mut extend);
        }
    }
    let fold = |v: &[f64], init: f64, f: fn(f64, f64) -> f64| v.iter().copied().fold(init, f);
    let (x0, x1) = (fold(&xs, f64::INFINITY, f64::min) - MARGIN, fold(&xs, f64::NEG_INFINITY, f64::max) + MARGIN);
    let (y0, y1) = (fold(&ys, f64::INFINITY, f64::min) - MARGIN, fold(&ys, f64::NEG_INFINITY, f64::max) + MARGIN);
    let (w, h) = if xs.is_empty() { (100.0, 100.0) } else { (x1 - x0, y1 - y0) };
    let (x0, y0) = if xs.is_empty() { (-50.0, -50.0) } else { (x0, y0) };

    let mut doc = Document::new()
        .set("viewBox", (x0, y0, w, h))
        .set("width", 800)
        .set("height", (800.0 * h / w).round())
        .add(Rectangle::new().set("x", x0).set("y", y0).set("width", w).set("height", h).set("fill", "white"));

    let mut map = Group::new().set("id", "map");
    for pl in &scenario.map {
        if let Some(p) = polyline(&pl.points, map_color(pl.kind), 0.4) {
            map = map.add(p);
        }
    }
    doc = doc.add(map);

    let mut gt = Group::new().set("id", "ground-truth").set("stroke-dasharray", "1,1");
    for t in &scenario.tracks {
        let color = match pair {
            Some((a, _)) if t.agent_id == a => COLOR_A,
            Some((_, b)) if t.agent_id == b => COLOR_B,
            _ => "#888888",
        };
        let pts: Vec<Point> = t.positions.iter().zip(&t.valid).filter(|(_, v)| **v).map(|(p, _)| *p).collect();
        if let Some(p) = polyline(&pts, color, 0.4) {
            gt = gt.add(p);
        }
        if let (Some(p), Some(hd)) = (t.positions.get(scenario.history_len - 1), t.headings.get(scenario.history_len - 1)) {
            if t.valid.get(scenario.history_len - 1) == Some(&true) {
                let b = OrientedBox::new(*p, *hd, t.length, t.width);
                gt = gt.add(box_polygon(&b, color).set("stroke-dasharray", "none"));
            }
        }
    }
    doc = doc.add(gt);

    if let Some(r) = record {
        let mut preds = Group::new().set("id", "predictions");
        let top = r.pairs.iter().map(|p| p.score).fold(0.0_f64, f64::max).max(1e-12);
        for pp in &r.pairs {
            let opacity = (0.25 + 0.75 * pp.score / top).min(1.0);
            for (traj, color) in [(&pp.traj_a, COLOR_A), (&pp.traj_b, COLOR_B)] {
                if let Some(p) = polyline(traj, color, 0.3) {
                    preds = preds.add(p.set("stroke-opacity", opacity));
                }
                if let Some(e) = traj.last() {
                    preds = preds.add(Circle::new().set("cx", e[0]).set("cy", -e[1]).set("r", 0.5).set("fill", color));
                }
            }
        }
        if let Some(best) = r.pairs.iter().max_by(|a, b| a.score.total_cmp(&b.score)) {
            for (agent, traj, color) in [(r.agent_a, &best.traj_a, COLOR_A), (r.agent_b, &best.traj_b, COLOR_B)] {
                let (len, wid) = scenario.track(agent).map(|t| (t.length, t.width)).unwrap_or((4.5, 2.0));
                if let Some(e) = traj.last() {
                    preds = preds.add(box_polygon(&OrientedBox::new(*e, heading_of(traj), len, wid), color));
                }
            }
        }
        doc = doc.add(preds);
    }

    let title = Text::new(scenario.id.clone())
        .set("x", x0 + 1.0)
        .set("y", y0 + 3.0)
        .set("font-size", 3)
        .set("font-family", "sans-serif");
    doc.add(title).to_string()
}
