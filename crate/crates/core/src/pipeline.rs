//! End-to-end near-accident pipeline: tracking, trajectory windows,
//! collision tests, event localisation, merging and fusion.
//!
//! [`run`] processes a whole sequence; window analyses then run through
//! [`par::map`]. [`StreamingPipeline`] consumes one frame at a time and
//! emits events as soon as they can no longer grow.

use std::collections::BTreeMap;
use std::time::Instant;

use serde::Serialize;

use crate::error::Result;
use crate::io::{FrameDetections, ObjectClass};
use crate::nearmiss::{
    detect_collisions, merge_consecutive, sort_events, stack_windows, temporal_events, window_of, Fuser,
    NearAccidentEvent, NearMissConfig, SpatialRegion,
};
use crate::par::{self, Execution};
use crate::tracker::{TrackArchive, TrackId, Tracker, TrackerConfig};

/// Appearance-stream regions carried as `near_accident` detections.
pub fn spatial_regions(frames: &[FrameDetections]) -> Vec<SpatialRegion> {
    frames
        .iter()
        .flat_map(|f| f.detections.iter())
        .filter(|d| d.class == ObjectClass::NearAccident)
        .map(|d| SpatialRegion {
            frame: d.frame,
            region: d.bbox,
            probability: d.confidence,
        })
        .collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct TrackSummary {
    pub frames: u64,
    pub tracks_created: u64,
    pub tracks_deleted: u64,
    pub tracks_confirmed: u64,
    pub seconds: f64,
}

impl TrackSummary {
    pub fn fps(&self) -> f64 {
        if self.seconds > 0.0 {
            self.frames as f64 / self.seconds
        } else {
            f64::INFINITY
        }
    }
}

/// Feeds frames into `tracker`, stepping through frames without detections
/// so coasting and deletion follow the frame clock.
fn feed(tracker: &mut Tracker, previous: &mut Option<u64>, frame: &FrameDetections, summary: &mut TrackSummary) -> Result<()> {
    if let Some(p) = *previous {
        for gap in p + 1..frame.frame {
            let r = tracker.step(gap, &[])?;
            summary.frames += 1;
            summary.tracks_deleted += r.deleted_ids.len() as u64;
        }
    }
    let r = tracker.step(frame.frame, &frame.detections)?;
    summary.frames += 1;
    summary.tracks_created += r.new_ids.len() as u64;
    summary.tracks_deleted += r.deleted_ids.len() as u64;
    *previous = Some(frame.frame);
    Ok(())
}

/// Runs the tracker over a whole sequence.
pub fn run_tracker(cfg: &TrackerConfig, frames: &[FrameDetections]) -> Result<(TrackArchive, TrackSummary)> {
    let start = Instant::now();
    let mut tracker = Tracker::new(cfg.clone())?;
    let mut summary = TrackSummary::default();
    let mut previous = None;
    for f in frames {
        feed(&mut tracker, &mut previous, f, &mut summary)?;
    }
    let archive = tracker.finalize();
    summary.tracks_confirmed = archive.tracks.iter().filter(|t| t.confirmed).count() as u64;
    summary.seconds = start.elapsed().as_secs_f64();
    Ok((archive, summary))
}

fn analysed_tracks(archive: &TrackArchive, cfg: &NearMissConfig) -> TrackArchive {
    if !cfg.confirmed_only {
        return archive.clone();
    }
    TrackArchive {
        tracks: archive.tracks.iter().filter(|t| t.confirmed).cloned().collect(),
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct AnalysisSummary {
    pub windows: u64,
    pub collisions: u64,
    pub trajectory_events: u64,
    pub spatial_regions: u64,
    pub events: u64,
}

/// Trajectory analysis of a finished archive.
pub fn analyse(
    archive: &TrackArchive,
    spatial: &[SpatialRegion],
    cfg: &NearMissConfig,
    exec: Execution,
) -> Result<(Vec<NearAccidentEvent>, AnalysisSummary)> {
    cfg.validate()?;
    let tracks = analysed_tracks(archive, cfg);
    let windows = stack_windows(&tracks, cfg.window)?;
    let per_window = par::map(exec, &windows, |w| {
        let collisions = detect_collisions(w, cfg);
        let events = temporal_events(&collisions, &tracks, w);
        (w.index, collisions.entries.len(), events)
    });
    let mut summary = AnalysisSummary {
        windows: windows.len() as u64,
        spatial_regions: spatial.len() as u64,
        ..Default::default()
    };
    let mut merged_input = Vec::with_capacity(per_window.len());
    for (k, n, events) in per_window {
        summary.collisions += n as u64;
        merged_input.push((k, events));
    }
    let merged = merge_consecutive(merged_input);
    summary.trajectory_events = merged.len() as u64;

    let mut fuser = Fuser::new(cfg);
    for s in spatial {
        fuser.add_spatial(*s);
    }
    let mut events: Vec<NearAccidentEvent> = merged.into_iter().map(|e| fuser.fuse_event(e)).collect();
    events.extend(fuser.leftovers());
    sort_events(&mut events);
    summary.events = events.len() as u64;
    Ok((events, summary))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutput {
    pub archive: TrackArchive,
    pub events: Vec<NearAccidentEvent>,
    pub tracking: TrackSummary,
    pub analysis: AnalysisSummary,
}

/// Batch pipeline over a whole sequence.
pub fn run(
    tracker_cfg: &TrackerConfig,
    nearmiss_cfg: &NearMissConfig,
    frames: &[FrameDetections],
    exec: Execution,
) -> Result<PipelineOutput> {
    let (archive, tracking) = run_tracker(tracker_cfg, frames)?;
    let spatial = spatial_regions(frames);
    let (events, analysis) = analyse(&archive, &spatial, nearmiss_cfg, exec)?;
    Ok(PipelineOutput {
        archive,
        events,
        tracking,
        analysis,
    })
}

/// Frame-by-frame pipeline.
///
/// Window `k` is analysed once the tracker has moved `n_init` frames past
/// its end, so that every track in it has settled its probation. An event is
/// emitted when the next window has been analysed without extending it.
/// Spatial regions no event claims are emitted by [`finish`](Self::finish).
#[derive(Debug)]
pub struct StreamingPipeline {
    tracker: Tracker,
    cfg: NearMissConfig,
    fuser: Fuser,
    previous: Option<u64>,
    next_window: Option<u64>,
    open: BTreeMap<Vec<TrackId>, (u64, NearAccidentEvent)>,
    summary: TrackSummary,
}

impl StreamingPipeline {
    pub fn new(tracker_cfg: &TrackerConfig, cfg: &NearMissConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(StreamingPipeline {
            tracker: Tracker::new(tracker_cfg.clone())?,
            cfg: cfg.clone(),
            fuser: Fuser::new(cfg),
            previous: None,
            next_window: None,
            open: BTreeMap::new(),
            summary: TrackSummary::default(),
        })
    }

    fn settle_lag(&self) -> u64 {
        u64::from(self.tracker.config().n_init)
    }

    fn window_end(&self, k: u64) -> u64 {
        (k + 1) * self.cfg.window
    }

    /// Consumes one frame and returns the events completed by it.
    pub fn push(&mut self, frame: &FrameDetections) -> Result<Vec<NearAccidentEvent>> {
        feed(&mut self.tracker, &mut self.previous, frame, &mut self.summary)?;
        for d in frame.detections.iter().filter(|d| d.class == ObjectClass::NearAccident) {
            self.fuser.add_spatial(SpatialRegion {
                frame: d.frame,
                region: d.bbox,
                probability: d.confidence,
            });
        }
        if self.next_window.is_none() {
            self.next_window = Some(window_of(frame.frame, self.cfg.window));
        }
        let mut out = Vec::new();
        while let Some(k) = self.next_window {
            if frame.frame < self.window_end(k) + self.settle_lag() {
                break;
            }
            out.extend(self.analyse_window(k)?);
            self.next_window = Some(k + 1);
        }
        sort_events(&mut out);
        Ok(out)
    }

    fn analyse_window(&mut self, k: u64) -> Result<Vec<NearAccidentEvent>> {
        let first = if k == 0 { 0 } else { k * self.cfg.window + 1 };
        let snapshot = analysed_tracks(&self.tracker.snapshot_since(first), &self.cfg);
        let windows = stack_windows(&snapshot, self.cfg.window)?;
        let mut events = Vec::new();
        if let Some(w) = windows.iter().find(|w| w.index == k) {
            let collisions = detect_collisions(w, &self.cfg);
            events = temporal_events(&collisions, &snapshot, w);
        }
        let mut closed = Vec::new();
        for e in events {
            match self.open.get_mut(&e.track_ids) {
                Some((last_k, m)) if *last_k + 1 == k || *last_k == k => {
                    m.frame_start = m.frame_start.min(e.frame_start);
                    m.frame_end = m.frame_end.max(e.frame_end);
                    m.probability = m.probability.max(e.probability);
                    m.trace.extend(e.trace);
                    m.trace.sort_by_key(|r| r.frame);
                    m.trace.dedup_by_key(|r| r.frame);
                    *last_k = k;
                }
                _ => {
                    if let Some((_, done)) = self.open.insert(e.track_ids.clone(), (k, e)) {
                        closed.push(done);
                    }
                }
            }
        }
        Ok(self.close_before(k, closed))
    }

    /// Emits `closed` plus the open events whose last window is before `k`.
    fn close_before(&mut self, k: u64, mut closed: Vec<NearAccidentEvent>) -> Vec<NearAccidentEvent> {
        let done: Vec<Vec<TrackId>> = self
            .open
            .iter()
            .filter(|(_, (last, _))| *last < k)
            .map(|(ids, _)| ids.clone())
            .collect();
        closed.extend(done.into_iter().filter_map(|ids| self.open.remove(&ids)).map(|(_, e)| e));
        sort_events(&mut closed);
        closed.into_iter().map(|e| self.fuser.fuse_event(e)).collect()
    }

    /// Analyses the remaining windows and flushes every open event.
    pub fn finish(mut self) -> Result<(Vec<NearAccidentEvent>, TrackArchive, TrackSummary)> {
        let mut out = Vec::new();
        if let (Some(mut k), Some(last)) = (self.next_window, self.previous) {
            while k <= window_of(last, self.cfg.window) {
                out.extend(self.analyse_window(k)?);
                k += 1;
            }
            out.extend(self.close_before(u64::MAX, Vec::new()));
        }
        out.extend(self.fuser.leftovers());
        sort_events(&mut out);
        let archive = self.tracker.finalize();
        self.summary.tracks_confirmed = archive.tracks.iter().filter(|t| t.confirmed).count() as u64;
        Ok((out, archive, self.summary))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::score_frames;
    use crate::geometry::BBox;
    use crate::io::Detection;
    use crate::kalman::MotionMode;
    use crate::simulator::{generate, standard_suite, NoiseModel};

    fn tracker_cfg() -> TrackerConfig {
        TrackerConfig::new(MotionMode::DeepSort)
    }

    #[test]
    fn crossing_scenario_yields_overlapping_event() {
        let spec = &standard_suite()[0];
        let g = generate(spec, &NoiseModel::none()).unwrap();
        let out = run(&tracker_cfg(), &NearMissConfig::default(), &g.frames, Execution::Sequential).unwrap();
        assert!(!out.events.is_empty());
        let gt = &g.events[0];
        assert!(out
            .events
            .iter()
            .any(|e| e.frame_start <= gt.frame_end && gt.frame_start <= e.frame_end));
        let c = score_frames(&out.events, &g.events, g.frame_range(), 0.6).unwrap();
        assert!(c.tp > 0, "{c:?}");
    }

    #[test]
    fn free_flow_scenario_yields_no_event() {
        let spec = &standard_suite()[1];
        let g = generate(spec, &NoiseModel::none()).unwrap();
        let out = run(&tracker_cfg(), &NearMissConfig::default(), &g.frames, Execution::Sequential).unwrap();
        assert!(out.events.is_empty(), "{:?}", out.events);
    }

    #[test]
    fn sequential_and_parallel_agree() {
        let spec = &standard_suite()[8];
        let g = generate(spec, &NoiseModel::moderate()).unwrap();
        let a = run(&tracker_cfg(), &NearMissConfig::default(), &g.frames, Execution::Sequential).unwrap();
        let b = run(&tracker_cfg(), &NearMissConfig::default(), &g.frames, Execution::Parallel).unwrap();
        assert_eq!(a.events, b.events);
        assert_eq!(a.archive, b.archive);
    }

    #[test]
    fn streaming_matches_batch() {
        let cfg = NearMissConfig::default();
        for i in [0, 3, 4, 5, 22] {
            let spec = &standard_suite()[i];
            let g = generate(spec, &NoiseModel::moderate()).unwrap();
            let batch = run(&tracker_cfg(), &cfg, &g.frames, Execution::Sequential).unwrap();
            let mut s = StreamingPipeline::new(&tracker_cfg(), &cfg).unwrap();
            let mut streamed = Vec::new();
            for f in &g.frames {
                streamed.extend(s.push(f).unwrap());
            }
            let (rest, archive, _) = s.finish().unwrap();
            streamed.extend(rest);
            sort_events(&mut streamed);
            assert_eq!(streamed, batch.events, "scenario {}", spec.name);
            assert_eq!(archive, batch.archive);
        }
    }

    #[test]
    fn spatial_regions_fuse_with_trajectory_events() {
        let spec = &standard_suite()[0];
        let mut g = generate(spec, &NoiseModel::none()).unwrap();
        let gt = g.events[0].clone();
        let mid = gt.trace[gt.trace.len() / 2];
        let f = &mut g.frames[(mid.frame - 1) as usize];
        f.detections.push(Detection {
            frame: mid.frame,
            class: ObjectClass::NearAccident,
            bbox: mid.region,
            confidence: 0.5,
            embedding: None,
        });
        f.detections.push(Detection {
            frame: mid.frame,
            class: ObjectClass::NearAccident,
            bbox: BBox::new(800.0, 400.0, 30.0, 30.0),
            confidence: 0.4,
            embedding: None,
        });
        let out = run(&tracker_cfg(), &NearMissConfig::default(), &g.frames, Execution::Sequential).unwrap();
        let fused = out.events.iter().find(|e| !e.track_ids.is_empty()).unwrap();
        let r = fused.trace.iter().find(|r| r.frame == mid.frame).unwrap();
        assert!((r.probability - 0.75).abs() < 1e-12);
        let lone: Vec<_> = out.events.iter().filter(|e| e.track_ids.is_empty()).collect();
        assert_eq!(lone.len(), 1);
        assert_eq!(lone[0].probability, 0.4);
        assert!(out.events.iter().all(|e| (0.0..=1.0).contains(&e.probability)));
    }

    #[test]
    fn empty_stream() {
        let out = run(&tracker_cfg(), &NearMissConfig::default(), &[], Execution::Parallel).unwrap();
        assert!(out.events.is_empty() && out.archive.tracks.is_empty());
        let s = StreamingPipeline::new(&tracker_cfg(), &NearMissConfig::default()).unwrap();
        let (events, archive, _) = s.finish().unwrap();
        assert!(events.is_empty() && archive.tracks.is_empty());
    }
}
