//! SVG rendering of trajectories and near-accident regions.

use std::fmt::Write as _;
use std::path::Path;

use crate::nearmiss::NearAccidentEvent;
use crate::tracker::TrackArchive;
use crate::Result;

const PALETTE: [&str; 8] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#17becf"];

/// Renders every track as a polyline of its centers and every event as the
/// union box over its span, on a `width` x `height` canvas.
pub fn render_svg(archive: &TrackArchive, events: &[NearAccidentEvent], width: f64, height: f64) -> String {
    let mut out = String::new();
    // writes into a String cannot fail
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">"#
    );
    let _ = writeln!(out, r##"<rect width="100%" height="100%" fill="#ffffff"/>"##);
    for t in &archive.tracks {
        if t.points.is_empty() {
            continue;
        }
        let color = PALETTE[(t.id as usize) % PALETTE.len()];
        let pts: Vec<String> = t
            .points
            .iter()
            .map(|p| format!("{:.1},{:.1}", p.center.x, p.center.y))
            .collect();
        let _ = writeln!(
            out,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"><title>track {} ({})</title></polyline>"#,
            pts.join(" "),
            t.id,
            t.class.as_str()
        );
        let last = t.points.last().unwrap().center;
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" font-size="10" fill="{color}">{}</text>"#,
            last.x + 3.0,
            last.y - 3.0,
            t.id
        );
    }
    for e in events {
        let r = e.region;
        let ids: Vec<String> = e.track_ids.iter().map(u64::to_string).collect();
        let _ = writeln!(
            out,
            r##"<rect x="{:.1}" y="{:.1}" width="{:.1}" height="{:.1}" fill="#d62728" fill-opacity="{:.2}" stroke="#d62728"><title>frames {}-{} p={:.2} tracks [{}]</title></rect>"##,
            r.x,
            r.y,
            r.w,
            r.h,
            0.15 + 0.35 * e.probability.clamp(0.0, 1.0),
            e.frame_start,
            e.frame_end,
            e.probability,
            ids.join(",")
        );
    }
    out.push_str("</svg>\n");
    out
}

pub fn write_svg(archive: &TrackArchive, events: &[NearAccidentEvent], width: f64, height: f64, path: &Path) -> Result<()> {
    std::fs::write(path, render_svg(archive, events, width, height)).map_err(|e| crate::Error::io(path, e))?;
    Ok(())
}
