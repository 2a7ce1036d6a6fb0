//! Trajectory-based conflict detection.
//!
//! Track centers are stacked into consecutive `L`-frame windows. Inside a
//! window every pair of trajectories is tested: the pair is in conflict when
//! their center polylines cross, or when the two polylines come closer than
//! a threshold `tau`. The last point each track had in the previous window
//! is carried into the next one so a crossing that straddles a window
//! boundary is still seen.
//!
//! A conflict becomes an event localised to the frames where the two
//! tracked centers are simultaneously within `tau` of each other; its
//! region is the box covering both objects.

use std::collections::BTreeMap;

use log::{debug, warn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{closest_points, iou, segment_intersection, union_box, BBox, Point2};
use crate::tracker::{TrackArchive, TrackId, TrackPoint};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum FusionMode {
    /// Events seen by only one stream keep their own probability.
    #[default]
    Passthrough,
    /// Events seen by only one stream are averaged against an implicit zero.
    StrictAverage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NearMissConfig {
    /// Window length `L` in frames.
    pub window: u64,
    /// `tau` as a fraction of the mean box diagonal of the two tracks.
    pub tau_relative: f64,
    /// Absolute `tau` in pixels; replaces the relative rule when set.
    pub tau_pixels_override: Option<f64>,
    pub fusion_mode: FusionMode,
    /// Minimum IoU for a spatial and a temporal region to be fused.
    pub fusion_match_iou: f64,
    /// Analyse only tracks that completed probation.
    pub confirmed_only: bool,
}

impl Default for NearMissConfig {
    fn default() -> Self {
        NearMissConfig {
            window: 10,
            tau_relative: 0.5,
            tau_pixels_override: None,
            fusion_mode: FusionMode::Passthrough,
            fusion_match_iou: 0.5,
            confirmed_only: true,
        }
    }
}

impl NearMissConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window < 2 {
            return Err(Error::InvalidWindow(self.window));
        }
        if !(self.tau_relative.is_finite() && self.tau_relative > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "nearmiss.tau_relative must be positive, got {}",
                self.tau_relative
            )));
        }
        if let Some(t) = self.tau_pixels_override {
            if !(t.is_finite() && t > 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "nearmiss.tau_pixels_override must be positive, got {t}"
                )));
            }
        }
        if !(0.0..=1.0).contains(&self.fusion_match_iou) {
            return Err(Error::InvalidConfig(format!(
                "nearmiss.fusion_match_iou must lie in [0, 1], got {}",
                self.fusion_match_iou
            )));
        }
        Ok(())
    }

    /// Conflict threshold for two objects with the given mean box diagonals.
    pub fn tau(&self, diag_a: f64, diag_b: f64) -> f64 {
        self.tau_pixels_override
            .unwrap_or(self.tau_relative * 0.5 * (diag_a + diag_b))
    }
}

/// Window index of a frame. Window `k` covers frames `kL+1 ..= (k+1)L`;
/// frame 0 is folded into window 0.
pub fn window_of(frame: u64, window: u64) -> u64 {
    frame.saturating_sub(1) / window
}

/// Track centers restricted to one window of `L` frames.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryWindow {
    pub index: u64,
    pub first_frame: u64,
    pub last_frame: u64,
    pub tracks: BTreeMap<TrackId, Vec<TrackPoint>>,
    /// Last point of each track from the previous window, for tracks that
    /// continue into this one.
    pub lead_in: BTreeMap<TrackId, TrackPoint>,
}

impl TrajectoryWindow {
    fn polyline(&self, id: TrackId) -> Vec<TrackPoint> {
        let mut out: Vec<TrackPoint> = self.lead_in.get(&id).into_iter().copied().collect();
        if let Some(points) = self.tracks.get(&id) {
            out.extend_from_slice(points);
        }
        out
    }

    pub fn frames(&self) -> std::ops::RangeInclusive<u64> {
        self.first_frame..=self.last_frame
    }
}

/// Splits every trajectory of the archive into consecutive `L`-frame windows.
///
/// Windows run from the one holding the earliest point to the one holding
/// the latest, including empty windows in between and a trailing partial one.
pub fn stack_windows(archive: &TrackArchive, window: u64) -> Result<Vec<TrajectoryWindow>> {
    if window < 2 {
        return Err(Error::InvalidWindow(window));
    }
    let Some((first, last)) = archive.frame_range() else {
        return Ok(Vec::new());
    };
    let k0 = window_of(first, window);
    let k1 = window_of(last, window);
    let mut windows: Vec<TrajectoryWindow> = (k0..=k1)
        .map(|k| TrajectoryWindow {
            index: k,
            first_frame: if k == 0 { 0 } else { k * window + 1 },
            last_frame: (k + 1) * window,
            tracks: BTreeMap::new(),
            lead_in: BTreeMap::new(),
        })
        .collect();

    for track in &archive.tracks {
        for p in &track.points {
            let k = window_of(p.frame, window);
            windows[(k - k0) as usize]
                .tracks
                .entry(track.id)
                .or_default()
                .push(*p);
        }
    }
    for i in 1..windows.len() {
        let (before, after) = windows.split_at_mut(i);
        let prev = &before[i - 1];
        let cur = &mut after[0];
        for id in cur.tracks.keys() {
            if let Some(last) = prev.tracks.get(id).and_then(|ps| ps.last()) {
                cur.lead_in.insert(*id, *last);
            }
        }
    }
    Ok(windows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ContactKind {
    Crossing,
    Proximity,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Collision {
    /// Smaller id of the pair.
    pub track_a: TrackId,
    pub track_b: TrackId,
    pub frame_detected: u64,
    pub contact_point: Point2,
    pub kind: ContactKind,
    /// Threshold the pair was tested against.
    pub tau: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CollisionState {
    pub entries: Vec<Collision>,
}

impl CollisionState {
    pub fn pairs(&self) -> Vec<(TrackId, TrackId)> {
        self.entries.iter().map(|c| (c.track_a, c.track_b)).collect()
    }
}

fn mean_diagonal(points: &[TrackPoint]) -> f64 {
    points.iter().map(|p| p.bbox.diagonal()).sum::<f64>() / points.len() as f64
}

fn extent(points: &[TrackPoint]) -> (Point2, Point2) {
    let mut lo = Point2::new(f64::INFINITY, f64::INFINITY);
    let mut hi = Point2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
    for p in points {
        lo = Point2::new(lo.x.min(p.center.x), lo.y.min(p.center.y));
        hi = Point2::new(hi.x.max(p.center.x), hi.y.max(p.center.y));
    }
    (lo, hi)
}

/// Tests one pair of polylines. Returns `(frame, contact, kind)` when they
/// cross or pass within `tau`.
pub fn polyline_contact(a: &[TrackPoint], b: &[TrackPoint], tau: f64) -> Option<(u64, Point2, ContactKind)> {
    if a.len() < 2 || b.len() < 2 {
        return None;
    }
    let (alo, ahi) = extent(a);
    let (blo, bhi) = extent(b);
    if alo.x - bhi.x >= tau || blo.x - ahi.x >= tau || alo.y - bhi.y >= tau || blo.y - ahi.y >= tau {
        return None;
    }

    let mut best: Option<(f64, u64, Point2)> = None;
    for sa in a.windows(2) {
        for sb in b.windows(2) {
            if let Some(x) = segment_intersection(sa[0].center, sa[1].center, sb[0].center, sb[1].center) {
                return Some((sa[1].frame.max(sb[1].frame), x, ContactKind::Crossing));
            }
            let (pa, pb, d) = closest_points(sa[0].center, sa[1].center, sb[0].center, sb[1].center);
            if best.is_none_or(|(bd, _, _)| d < bd) {
                best = Some((d, sa[1].frame.max(sb[1].frame), pa.midpoint(pb)));
            }
        }
    }
    match best {
        Some((d, frame, mid)) if d < tau => Some((frame, mid, ContactKind::Proximity)),
        _ => None,
    }
}

/// Collision test over every unordered pair of trajectories in the window.
pub fn detect_collisions(window: &TrajectoryWindow, cfg: &NearMissConfig) -> CollisionState {
    let lines: Vec<(TrackId, Vec<TrackPoint>)> = window
        .tracks
        .keys()
        .map(|&id| (id, window.polyline(id)))
        .filter(|(_, pts)| pts.len() >= 2)
        .collect();
    let mut entries = Vec::new();
    for (i, (ida, pa)) in lines.iter().enumerate() {
        for (idb, pb) in &lines[i + 1..] {
            let tau = cfg.tau(mean_diagonal(pa), mean_diagonal(pb));
            if let Some((frame, contact, kind)) = polyline_contact(pa, pb, tau) {
                entries.push(Collision {
                    track_a: *ida,
                    track_b: *idb,
                    frame_detected: frame,
                    contact_point: contact,
                    kind,
                    tau,
                });
            }
        }
    }
    CollisionState { entries }
}

/// Region and probability of an event on one frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameRegion {
    pub frame: u64,
    pub region: BBox,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NearAccidentEvent {
    pub frame_start: u64,
    pub frame_end: u64,
    pub region: BBox,
    pub probability: f64,
    /// Involved pair for trajectory events; empty for spatial-only ones.
    pub track_ids: Vec<TrackId>,
    /// Per-frame regions inside the span.
    #[serde(default)]
    pub trace: Vec<FrameRegion>,
}

impl NearAccidentEvent {
    /// Per-frame regions; falls back to the event region over its span when
    /// no trace is recorded.
    pub fn frame_regions(&self) -> Vec<FrameRegion> {
        if !self.trace.is_empty() {
            return self.trace.clone();
        }
        (self.frame_start..=self.frame_end)
            .map(|frame| FrameRegion {
                frame,
                region: self.region,
                probability: self.probability,
            })
            .collect()
    }

    fn sort_key(&self) -> (u64, Vec<TrackId>, u64) {
        (self.frame_start, self.track_ids.clone(), self.frame_end)
    }
}

/// Deterministic event order: by start frame, then track ids.
pub fn sort_events(events: &mut [NearAccidentEvent]) {
    events.sort_by(|a, b| {
        a.sort_key()
            .cmp(&b.sort_key())
            .then(a.region.x.total_cmp(&b.region.x))
            .then(a.region.y.total_cmp(&b.region.y))
    });
}

/// Turns the window's collisions into events.
pub fn temporal_events(
    collisions: &CollisionState,
    archive: &TrackArchive,
    window: &TrajectoryWindow,
) -> Vec<NearAccidentEvent> {
    let mut out = Vec::new();
    for c in &collisions.entries {
        let (Some(a), Some(b)) = (archive.get(c.track_a), archive.get(c.track_b)) else {
            warn!("collision references unknown tracks {} / {}", c.track_a, c.track_b);
            continue;
        };
        let box_at = |t: &crate::tracker::TrackRecord, f: u64| -> Option<TrackPoint> {
            if t.last_frame().is_some_and(|last| f > last) {
                return None;
            }
            t.point_at_or_before(f).copied()
        };

        let mut trace = Vec::new();
        for f in window.frames() {
            if let (Some(pa), Some(pb)) = (box_at(a, f), box_at(b, f)) {
                let close = pa.center.distance(pb.center) < c.tau;
                trace.push((f, close, union_box(&pa.bbox, &pb.bbox)));
            }
        }
        let first = trace.iter().position(|(_, close, _)| *close);
        let last = trace.iter().rposition(|(_, close, _)| *close);
        let (Some(first), Some(last)) = (first, last) else {
            debug!(
                "pair {}/{} conflicts in window {} without a simultaneous approach",
                c.track_a, c.track_b, window.index
            );
            continue;
        };
        let trace: Vec<FrameRegion> = trace[first..=last]
            .iter()
            .map(|&(frame, _, region)| FrameRegion {
                frame,
                region,
                probability: 1.0,
            })
            .collect();

        let region = match (box_at(a, c.frame_detected), box_at(b, c.frame_detected)) {
            (Some(pa), Some(pb)) => union_box(&pa.bbox, &pb.bbox),
            _ => {
                warn!(
                    "no boxes for pair {}/{} at frame {}; event dropped",
                    c.track_a, c.track_b, c.frame_detected
                );
                continue;
            }
        };
        out.push(NearAccidentEvent {
            frame_start: trace[0].frame,
            frame_end: trace[trace.len() - 1].frame,
            region,
            probability: 1.0,
            track_ids: vec![c.track_a, c.track_b],
            trace,
        });
    }
    sort_events(&mut out);
    out
}

/// Merges events of the same pair found in consecutive windows.
///
/// `per_window` must be ordered by window index.
pub fn merge_consecutive(per_window: Vec<(u64, Vec<NearAccidentEvent>)>) -> Vec<NearAccidentEvent> {
    // pair -> (last window index, position in `merged`)
    let mut open: BTreeMap<Vec<TrackId>, (u64, usize)> = BTreeMap::new();
    let mut merged: Vec<NearAccidentEvent> = Vec::new();
    for (k, events) in per_window {
        for e in events {
            match open.get_mut(&e.track_ids) {
                Some((last_k, idx)) if *last_k + 1 == k || *last_k == k => {
                    let m = &mut merged[*idx];
                    m.frame_start = m.frame_start.min(e.frame_start);
                    m.frame_end = m.frame_end.max(e.frame_end);
                    m.probability = m.probability.max(e.probability);
                    m.trace.extend(e.trace);
                    m.trace.sort_by_key(|r| r.frame);
                    m.trace.dedup_by_key(|r| r.frame);
                    *last_k = k;
                }
                _ => {
                    open.insert(e.track_ids.clone(), (k, merged.len()));
                    merged.push(e);
                }
            }
        }
    }
    sort_events(&mut merged);
    merged
}

/// A single-frame region proposed by the appearance (spatial) stream.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpatialRegion {
    pub frame: u64,
    pub region: BBox,
    pub probability: f64,
}

/// Incremental fusion of trajectory events with appearance-stream regions.
///
/// Each spatial region is paired with at most one event frame: the first
/// event, in submission order, whose region on that frame overlaps it best
/// with IoU at least `fusion_match_iou`. Paired probabilities are averaged.
#[derive(Debug, Clone)]
pub struct Fuser {
    spatial: Vec<SpatialRegion>,
    by_frame: BTreeMap<u64, Vec<usize>>,
    used: Vec<bool>,
    mode: FusionMode,
    match_iou: f64,
}

impl Fuser {
    pub fn new(cfg: &NearMissConfig) -> Self {
        Fuser {
            spatial: Vec::new(),
            by_frame: BTreeMap::new(),
            used: Vec::new(),
            mode: cfg.fusion_mode,
            match_iou: cfg.fusion_match_iou,
        }
    }

    pub fn add_spatial(&mut self, s: SpatialRegion) {
        self.by_frame.entry(s.frame).or_default().push(self.spatial.len());
        self.spatial.push(s);
        self.used.push(false);
    }

    fn lone(&self, p: f64) -> f64 {
        match self.mode {
            FusionMode::Passthrough => p,
            FusionMode::StrictAverage => p / 2.0,
        }
    }

    pub fn fuse_event(&mut self, mut ev: NearAccidentEvent) -> NearAccidentEvent {
        let mut regions = ev.frame_regions();
        for r in &mut regions {
            let best = self
                .by_frame
                .get(&r.frame)
                .into_iter()
                .flatten()
                .filter(|&&i| !self.used[i])
                .map(|&i| (i, iou(&self.spatial[i].region, &r.region)))
                .filter(|(_, v)| *v >= self.match_iou)
                .fold(None::<(usize, f64)>, |acc, cur| match acc {
                    Some(a) if a.1 >= cur.1 => Some(a),
                    _ => Some(cur),
                });
            match best {
                Some((i, _)) => {
                    self.used[i] = true;
                    r.probability = ((self.spatial[i].probability + r.probability) / 2.0).clamp(0.0, 1.0);
                    r.region = union_box(&self.spatial[i].region, &r.region);
                }
                None => r.probability = self.lone(r.probability).clamp(0.0, 1.0),
            }
        }
        ev.probability = regions.iter().map(|r| r.probability).fold(0.0, f64::max);
        ev.trace = regions;
        ev
    }

    /// Spatial regions that no event claimed, as single-frame events.
    pub fn leftovers(&self) -> Vec<NearAccidentEvent> {
        self.spatial
            .iter()
            .zip(&self.used)
            .filter(|(_, used)| !**used)
            .map(|(s, _)| {
                let p = self.lone(s.probability).clamp(0.0, 1.0);
                NearAccidentEvent {
                    frame_start: s.frame,
                    frame_end: s.frame,
                    region: s.region,
                    probability: p,
                    track_ids: Vec::new(),
                    trace: vec![FrameRegion {
                        frame: s.frame,
                        region: s.region,
                        probability: p,
                    }],
                }
            })
            .collect()
    }
}

/// Fuses appearance-stream regions into trajectory events.
pub fn fuse(spatial: &[SpatialRegion], temporal: Vec<NearAccidentEvent>, cfg: &NearMissConfig) -> Vec<NearAccidentEvent> {
    let mut fuser = Fuser::new(cfg);
    for s in spatial {
        fuser.add_spatial(*s);
    }
    let mut out: Vec<NearAccidentEvent> = temporal.into_iter().map(|e| fuser.fuse_event(e)).collect();
    out.extend(fuser.leftovers());
    sort_events(&mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::ObjectClass;
    use crate::tracker::{TrackRecord, TrackStatus};

    fn record(id: TrackId, pts: &[(u64, f64, f64)]) -> TrackRecord {
        TrackRecord {
            id,
            class: ObjectClass::Car,
            status: TrackStatus::Confirmed,
            confirmed: true,
            hits: pts.len() as u32,
            points: pts
                .iter()
                .map(|&(frame, x, y)| {
                    let c = Point2::new(x, y);
                    TrackPoint {
                        frame,
                        center: c,
                        bbox: BBox::from_center(c, 2.0, 2.0),
                    }
                })
                .collect(),
        }
    }

    fn archive(tracks: Vec<TrackRecord>) -> TrackArchive {
        TrackArchive { tracks }
    }

    #[test]
    fn windows_partition_frames() {
        let a = archive(vec![record(1, &[(1, 0.0, 0.0), (2, 1.0, 0.0), (3, 2.0, 0.0), (4, 3.0, 0.0), (5, 4.0, 0.0), (6, 5.0, 0.0)])]);
        let w = stack_windows(&a, 3).unwrap();
        assert_eq!(w.len(), 2);
        assert_eq!((w[0].first_frame, w[0].last_frame), (0, 3));
        assert_eq!((w[1].first_frame, w[1].last_frame), (4, 6));
        assert_eq!(w[1].tracks[&1].len(), 3);
        assert_eq!(w[1].lead_in[&1].frame, 3);
    }

    #[test]
    fn single_point_lands_in_its_window() {
        let a = archive(vec![record(1, &[(5, 0.0, 0.0)])]);
        let w = stack_windows(&a, 3).unwrap();
        assert_eq!(w.len(), 1);
        assert_eq!((w[0].first_frame, w[0].last_frame), (4, 6));
    }

    #[test]
    fn empty_archive_and_bad_window() {
        assert!(stack_windows(&TrackArchive::default(), 3).unwrap().is_empty());
        assert!(matches!(stack_windows(&TrackArchive::default(), 1), Err(Error::InvalidWindow(1))));
    }

    fn fixed_tau(t: f64) -> NearMissConfig {
        NearMissConfig {
            tau_pixels_override: Some(t),
            ..NearMissConfig::default()
        }
    }

    #[test]
    fn crossing_tracks_collide_at_intersection() {
        let a = archive(vec![
            record(1, &[(1, 0.0, 0.0), (2, 10.0, 10.0)]),
            record(2, &[(1, 0.0, 10.0), (2, 10.0, 0.0)]),
        ]);
        let w = stack_windows(&a, 10).unwrap();
        let c = detect_collisions(&w[0], &fixed_tau(1.0));
        assert_eq!(c.entries.len(), 1);
        assert_eq!(c.entries[0].contact_point, Point2::new(5.0, 5.0));
        assert_eq!(c.entries[0].kind, ContactKind::Crossing);
    }

    #[test]
    fn distant_parallel_tracks_do_not_collide() {
        let a = archive(vec![
            record(1, &[(1, 0.0, 0.0), (2, 10.0, 0.0), (3, 20.0, 0.0)]),
            record(2, &[(1, 0.0, 50.0), (2, 10.0, 50.0), (3, 20.0, 50.0)]),
        ]);
        let w = stack_windows(&a, 10).unwrap();
        assert!(detect_collisions(&w[0], &fixed_tau(10.0)).entries.is_empty());
    }

    #[test]
    fn approaching_tracks_collide_by_proximity() {
        let a = archive(vec![
            record(1, &[(1, 0.0, 0.0), (2, 10.0, 0.0), (3, 20.0, 0.0)]),
            record(2, &[(1, 10.0, 30.0), (2, 10.0, 15.0), (3, 10.0, 5.0)]),
        ]);
        let w = stack_windows(&a, 10).unwrap();
        let c = detect_collisions(&w[0], &fixed_tau(10.0));
        assert_eq!(c.entries.len(), 1);
        assert_eq!(c.entries[0].kind, ContactKind::Proximity);
        assert_eq!(c.entries[0].contact_point, Point2::new(10.0, 2.5));
    }

    #[test]
    fn lead_in_catches_boundary_crossing() {
        // The crossing happens between frames 3 and 4, across the window boundary.
        let a = archive(vec![
            record(1, &[(2, 0.0, 5.0), (3, 4.0, 5.0), (4, 6.0, 5.0), (5, 10.0, 5.0)]),
            record(2, &[(2, 5.0, 0.0), (3, 5.0, 4.0), (4, 5.0, 6.0), (5, 5.0, 10.0)]),
        ]);
        let w = stack_windows(&a, 3).unwrap();
        let cfg = fixed_tau(0.5);
        assert!(detect_collisions(&w[0], &cfg).entries.is_empty());
        assert_eq!(detect_collisions(&w[1], &cfg).entries.len(), 1);
    }

    #[test]
    fn collision_becomes_covering_event() {
        let pts_a = [(1, 1.0, 1.0), (2, 2.0, 2.0)];
        let pts_b = [(1, 6.0, 6.0), (2, 4.0, 4.0)];
        let mut a = record(1, &pts_a);
        let mut b = record(2, &pts_b);
        a.points[1].bbox = BBox::new(0.0, 0.0, 2.0, 2.0);
        b.points[1].bbox = BBox::new(4.0, 4.0, 2.0, 2.0);
        let arch = archive(vec![a, b]);
        let w = stack_windows(&arch, 10).unwrap();
        let c = detect_collisions(&w[0], &fixed_tau(3.0));
        assert_eq!(c.entries[0].frame_detected, 2);
        let ev = temporal_events(&c, &arch, &w[0]);
        assert_eq!(ev.len(), 1);
        assert_eq!(ev[0].region, BBox::new(0.0, 0.0, 6.0, 6.0));
        assert_eq!(ev[0].probability, 1.0);
        assert_eq!((ev[0].frame_start, ev[0].frame_end), (2, 2));
        assert!(temporal_events(&CollisionState::default(), &arch, &w[0]).is_empty());
    }

    #[test]
    fn consecutive_windows_merge() {
        let e = |s: u64, t: u64| NearAccidentEvent {
            frame_start: s,
            frame_end: t,
            region: BBox::new(0.0, 0.0, 1.0, 1.0),
            probability: 1.0,
            track_ids: vec![1, 2],
            trace: (s..=t)
                .map(|frame| FrameRegion { frame, region: BBox::new(0.0, 0.0, 1.0, 1.0), probability: 1.0 })
                .collect(),
        };
        let merged = merge_consecutive(vec![(0, vec![e(8, 10)]), (1, vec![e(11, 12)]), (3, vec![e(31, 32)])]);
        assert_eq!(merged.len(), 2);
        assert_eq!((merged[0].frame_start, merged[0].frame_end), (8, 12));
        assert_eq!(merged[0].trace.len(), 5);
    }

    fn temporal_event(frame: u64, region: BBox) -> NearAccidentEvent {
        NearAccidentEvent {
            frame_start: frame,
            frame_end: frame,
            region,
            probability: 1.0,
            track_ids: vec![1, 2],
            trace: vec![FrameRegion { frame, region, probability: 1.0 }],
        }
    }

    #[test]
    fn fusion_averages_matching_regions() {
        let r = BBox::new(0.0, 0.0, 10.0, 10.0);
        let s = [SpatialRegion { frame: 5, region: r, probability: 0.6 }];
        let out = fuse(&s, vec![temporal_event(5, r)], &NearMissConfig::default());
        assert_eq!(out.len(), 1);
        assert!((out[0].probability - 0.8).abs() < 1e-12);
    }

    #[test]
    fn fusion_passthrough_and_strict() {
        let r = BBox::new(0.0, 0.0, 10.0, 10.0);
        let out = fuse(&[], vec![temporal_event(5, r)], &NearMissConfig::default());
        assert_eq!(out[0].probability, 1.0);

        let strict = NearMissConfig {
            fusion_mode: FusionMode::StrictAverage,
            ..NearMissConfig::default()
        };
        let s = [SpatialRegion { frame: 9, region: r, probability: 0.8 }];
        let out = fuse(&s, vec![temporal_event(5, r)], &strict);
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].probability, 0.5);
        assert!((out[1].probability - 0.4).abs() < 1e-12);
        assert!(out[1].track_ids.is_empty());

        assert!(fuse(&[], vec![], &NearMissConfig::default()).is_empty());
    }
}
