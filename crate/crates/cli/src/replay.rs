//! Trajectory log exports: per-episode polylines for external plotting.

use std::fmt::Write;

use serde::Serialize;

use pcnav::task::StepRecord;
use pcnav::Result;

type Episodes<'a> = [(u64, Vec<&'a StepRecord>)];

#[derive(Serialize)]
struct EpisodeLine<'a> {
    episode: u64,
    world: &'a str,
    goal: [f64; 2],
    success: bool,
    collided: bool,
    /// Agent position after each step.
    polyline: Vec<[f64; 2]>,
    steps: &'a [&'a StepRecord],
}

/// One JSON object per episode.
pub fn jsonl(episodes: &Episodes<'_>) -> Result<String> {
    let mut out = String::new();
    for (id, recs) in episodes {
        let last = recs.last().expect("episodes are non-empty");
        let line = EpisodeLine {
            episode: *id,
            world: &last.world,
            goal: last.goal,
            success: recs.iter().any(|r| r.success),
            collided: recs.iter().any(|r| r.collided),
            polyline: recs.iter().map(|r| [r.x, r.y]).collect(),
            steps: recs,
        };
        out.push_str(&serde_json::to_string(&line)?);
        out.push('\n');
    }
    Ok(out)
}

/// One row per step with the camera mount flattened.
pub fn csv(records: &[StepRecord]) -> Result<String> {
    if records.is_empty() {
        return Ok(String::new());
    }
    let mut w = ::csv::Writer::from_writer(Vec::new());
    w.write_record([
        "episode", "step", "x", "y", "heading", "action", "reward", "collided", "geodesic", "success", "done",
        "goal_x", "goal_y", "world", "cam_height", "cam_pitch", "cam_yaw", "cam_hfov",
    ])?;
    for r in records {
        w.write_record([
            r.episode.to_string(),
            r.step.to_string(),
            r.x.to_string(),
            r.y.to_string(),
            r.heading.to_string(),
            serde_json::to_value(r.action)?.as_str().unwrap_or_default().to_string(),
            r.reward.to_string(),
            r.collided.to_string(),
            r.geodesic.to_string(),
            r.success.to_string(),
            r.done.to_string(),
            r.goal[0].to_string(),
            r.goal[1].to_string(),
            r.world.clone(),
            r.camera.height.to_string(),
            r.camera.pitch.to_string(),
            r.camera.yaw.to_string(),
            r.camera.hfov.to_string(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| pcnav::Error::Io {
        path: "<csv>".into(),
        source: e.into_error(),
    })?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

const PX_PER_M: f64 = 50.0;
const MARGIN: f64 = 0.5;

/// An SVG document with one `<path>` per episode and a circle at each goal.
/// World `y` points up in the image.
pub fn svg(episodes: &Episodes<'_>) -> String {
    if episodes.is_empty() {
        return String::new();
    }
    let (mut x0, mut y0, mut x1, mut y1) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
    for (_, recs) in episodes {
        for (x, y) in recs.iter().flat_map(|r| [(r.x, r.y), (r.goal[0], r.goal[1])]) {
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x);
            y1 = y1.max(y);
        }
    }
    let (x0, y0, x1, y1) = (x0 - MARGIN, y0 - MARGIN, x1 + MARGIN, y1 + MARGIN);
    let px = |x: f64| (x - x0) * PX_PER_M;
    let py = |y: f64| (y1 - y) * PX_PER_M;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{:.0}" height="{:.0}">"#,
        (x1 - x0) * PX_PER_M,
        (y1 - y0) * PX_PER_M
    );
    for (id, recs) in episodes {
        let success = recs.iter().any(|r| r.success);
        let color = if success { "#1b7837" } else { "#b2182b" };
        let mut d = String::new();
        for (i, r) in recs.iter().enumerate() {
            let _ = write!(d, "{}{:.2} {:.2}", if i == 0 { "M" } else { " L" }, px(r.x), py(r.y));
        }
        let last = recs.last().expect("episodes are non-empty");
        let _ = writeln!(
            s,
            r#"  <path id="episode-{id}" data-world="{}" d="{d}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            last.world
        );
        let _ = writeln!(
            s,
            r#"  <circle class="goal" data-episode="{id}" cx="{:.2}" cy="{:.2}" r="6" fill="none" stroke="{color}"/>"#,
            px(last.goal[0]),
            py(last.goal[1])
        );
    }
    s.push_str("</svg>\n");
    s
}
