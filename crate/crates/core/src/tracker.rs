//! Online multi-object tracker.
//!
//! `Sort` mode associates predicted boxes to detections with a single IoU
//! assignment. `DeepSort` mode runs the matching cascade: confirmed tracks
//! are matched level by level in order of increasing frames-since-update on
//! the combined appearance/motion cost, and the leftovers go through an IoU
//! pass together with the tentative tracks.

use serde::{Deserialize, Serialize};

use crate::assoc::{
    combined_cost, cosine_cost, hungarian, iou_cost, mahalanobis_cost, AssocConfig, Embedding,
};
use crate::error::{Error, Result};
use crate::geometry::{iou, BBox, Point2};
use crate::io::{Detection, ObjectClass};
use crate::kalman::{BoxFilter, MotionMode, NoiseConfig};

pub type TrackId = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrackStatus {
    Tentative,
    Confirmed,
    Deleted,
}

/// One observed position of a track.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackPoint {
    pub frame: u64,
    pub center: Point2,
    pub bbox: BBox,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackerConfig {
    pub mode: MotionMode,
    /// Frames a track may go unassociated before deletion. `None` picks the
    /// mode default (1 for `Sort`, 30 for `DeepSort`).
    pub t_lost: Option<u32>,
    pub n_init: u32,
    pub n_budget: usize,
    pub min_confidence: f64,
    pub assoc: AssocConfig,
    pub noise: NoiseConfig,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        TrackerConfig::new(MotionMode::DeepSort)
    }
}

impl TrackerConfig {
    pub fn new(mode: MotionMode) -> Self {
        TrackerConfig {
            mode,
            t_lost: None,
            n_init: 3,
            n_budget: 100,
            min_confidence: 0.3,
            assoc: AssocConfig::default(),
            noise: NoiseConfig::default(),
        }
    }

    pub fn t_lost(&self) -> u32 {
        self.t_lost.unwrap_or(match self.mode {
            MotionMode::Sort => 1,
            MotionMode::DeepSort => 30,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.t_lost == Some(0) {
            return Err(Error::InvalidConfig("tracker.t_lost must be positive".into()));
        }
        if self.n_init == 0 {
            return Err(Error::InvalidConfig("tracker.n_init must be at least 1".into()));
        }
        if self.n_budget == 0 {
            return Err(Error::InvalidConfig("tracker.n_budget must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.min_confidence) {
            return Err(Error::InvalidConfig(format!(
                "tracker.min_confidence must lie in [0, 1], got {}",
                self.min_confidence
            )));
        }
        self.assoc.validate()?;
        self.noise.validate()
    }
}

#[derive(Debug, Clone)]
pub struct Track {
    pub id: TrackId,
    pub filter: BoxFilter,
    pub status: TrackStatus,
    pub hits: u32,
    pub age: u32,
    pub time_since_update: u32,
    pub gallery: Vec<Embedding>,
    pub points: Vec<TrackPoint>,
    ever_confirmed: bool,
    class_votes: [u32; 4],
}

impl Track {
    fn new(id: TrackId, frame: u64, det: &Detection, cfg: &TrackerConfig) -> Self {
        let filter = BoxFilter::initiate(cfg.mode, &det.bbox, &cfg.noise);
        let confirmed = cfg.n_init <= 1;
        let mut t = Track {
            id,
            filter,
            status: if confirmed {
                TrackStatus::Confirmed
            } else {
                TrackStatus::Tentative
            },
            hits: 1,
            age: 1,
            time_since_update: 0,
            gallery: det.embedding.iter().cloned().collect(),
            points: Vec::new(),
            ever_confirmed: confirmed,
            class_votes: [0; 4],
        };
        t.record(frame, det);
        t
    }

    pub fn bbox(&self) -> BBox {
        self.filter.bbox()
    }

    /// Majority vehicle class over the associated detections.
    pub fn class(&self) -> ObjectClass {
        let mut best = 0;
        for (i, &n) in self.class_votes.iter().enumerate() {
            if n > self.class_votes[best] {
                best = i;
            }
        }
        ObjectClass::VEHICLES[best]
    }

    fn record(&mut self, frame: u64, det: &Detection) {
        let bbox = self.filter.bbox();
        self.points.push(TrackPoint {
            frame,
            center: bbox.center(),
            bbox,
        });
        if let Some(i) = det.class.vehicle_index() {
            self.class_votes[i] += 1;
        }
    }

    fn associate(&mut self, frame: u64, det: &Detection, cfg: &TrackerConfig) -> Result<()> {
        self.filter.update(&det.bbox, &cfg.noise)?;
        self.hits += 1;
        self.time_since_update = 0;
        if let Some(e) = &det.embedding {
            if self.gallery.len() >= cfg.n_budget {
                let excess = self.gallery.len() + 1 - cfg.n_budget;
                self.gallery.drain(..excess);
            }
            self.gallery.push(e.clone());
        }
        if self.status == TrackStatus::Tentative && self.hits >= cfg.n_init {
            self.status = TrackStatus::Confirmed;
            self.ever_confirmed = true;
        }
        self.record(frame, det);
        Ok(())
    }

    fn to_record(&self) -> TrackRecord {
        TrackRecord {
            id: self.id,
            class: self.class(),
            status: self.status,
            confirmed: self.ever_confirmed,
            hits: self.hits,
            points: self.points.clone(),
        }
    }
}

/// Immutable snapshot of a track for offline analysis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackRecord {
    pub id: TrackId,
    pub class: ObjectClass,
    pub status: TrackStatus,
    /// Whether the track ever left probation.
    pub confirmed: bool,
    pub hits: u32,
    pub points: Vec<TrackPoint>,
}

impl TrackRecord {
    /// Last observed point at or before `frame`.
    pub fn point_at_or_before(&self, frame: u64) -> Option<&TrackPoint> {
        let idx = self.points.partition_point(|p| p.frame <= frame);
        idx.checked_sub(1).map(|i| &self.points[i])
    }

    pub fn point_at(&self, frame: u64) -> Option<&TrackPoint> {
        self.points
            .binary_search_by_key(&frame, |p| p.frame)
            .ok()
            .map(|i| &self.points[i])
    }

    pub fn first_frame(&self) -> Option<u64> {
        self.points.first().map(|p| p.frame)
    }

    pub fn last_frame(&self) -> Option<u64> {
        self.points.last().map(|p| p.frame)
    }
}

/// All tracks of a sequence, ordered by id.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrackArchive {
    pub tracks: Vec<TrackRecord>,
}

impl TrackArchive {
    pub fn get(&self, id: TrackId) -> Option<&TrackRecord> {
        self.tracks
            .binary_search_by_key(&id, |t| t.id)
            .ok()
            .map(|i| &self.tracks[i])
    }

    pub fn frame_range(&self) -> Option<(u64, u64)> {
        let first = self.tracks.iter().filter_map(TrackRecord::first_frame).min()?;
        let last = self.tracks.iter().filter_map(TrackRecord::last_frame).max()?;
        Some((first, last))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ActiveTrack {
    pub id: TrackId,
    pub bbox: BBox,
    pub status: TrackStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrameResult {
    pub frame: u64,
    pub active_tracks: Vec<ActiveTrack>,
    pub new_ids: Vec<TrackId>,
    pub deleted_ids: Vec<TrackId>,
}

/// Association outcome; indices refer to the track and detection slices passed in.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Matches {
    pub pairs: Vec<(usize, usize)>,
    pub unmatched_tracks: Vec<usize>,
    pub unmatched_dets: Vec<usize>,
}

fn iou_round(
    tracks: &[Track],
    track_idx: &[usize],
    dets: &[Detection],
    det_idx: &[usize],
    iou_min: f64,
) -> (Vec<(usize, usize)>, Vec<usize>, Vec<usize>) {
    let boxes: Vec<BBox> = track_idx.iter().map(|&i| tracks[i].bbox()).collect();
    let det_boxes: Vec<BBox> = det_idx.iter().map(|&j| dets[j].bbox).collect();
    let a = hungarian(&iou_cost(&boxes, &det_boxes, iou_min));
    (
        a.pairs.iter().map(|&(r, c)| (track_idx[r], det_idx[c])).collect(),
        a.unmatched_rows.iter().map(|&r| track_idx[r]).collect(),
        a.unmatched_cols.iter().map(|&c| det_idx[c]).collect(),
    )
}

/// IoU-only association of every track against every detection.
pub fn iou_association(tracks: &[Track], dets: &[Detection], cfg: &TrackerConfig) -> Matches {
    let all_tracks: Vec<usize> = (0..tracks.len()).collect();
    let all_dets: Vec<usize> = (0..dets.len()).collect();
    let (mut pairs, unmatched_tracks, unmatched_dets) =
        iou_round(tracks, &all_tracks, dets, &all_dets, cfg.assoc.iou_min);
    pairs.sort_unstable();
    Matches {
        pairs,
        unmatched_tracks,
        unmatched_dets,
    }
}

/// Appearance-and-motion cascade followed by an IoU pass.
///
/// Confirmed tracks are grouped by `time_since_update` (1 through `t_lost`)
/// and matched group by group, so recently seen tracks claim detections
/// first. Tentative tracks and confirmed tracks missed for exactly one frame
/// then compete for the remaining detections on IoU alone.
pub fn matching_cascade(tracks: &[Track], dets: &[Detection], cfg: &TrackerConfig) -> Result<Matches> {
    let embeddings: Vec<&Embedding> = dets
        .iter()
        .enumerate()
        .map(|(j, d)| d.embedding.as_ref().ok_or(Error::MissingEmbedding(j)))
        .collect::<Result<_>>()?;
    let projected: Vec<_> = tracks.iter().map(|t| t.filter.project(&cfg.noise)).collect();

    let mut pairs = Vec::new();
    let mut unmatched_dets: Vec<usize> = (0..dets.len()).collect();
    let confirmed: Vec<usize> = (0..tracks.len())
        .filter(|&i| tracks[i].status == TrackStatus::Confirmed)
        .collect();

    for level in 1..=cfg.t_lost() {
        if unmatched_dets.is_empty() {
            break;
        }
        let level_tracks: Vec<usize> = confirmed
            .iter()
            .copied()
            .filter(|&i| tracks[i].time_since_update == level)
            .collect();
        if level_tracks.is_empty() {
            continue;
        }
        let proj: Vec<_> = level_tracks.iter().map(|&i| projected[i]).collect();
        let measurements: Vec<_> = unmatched_dets
            .iter()
            .map(|&j| tracks[level_tracks[0]].filter.measure(&dets[j].bbox))
            .collect();
        let motion = mahalanobis_cost(&proj, &measurements, cfg.assoc.mahalanobis_gate)?;
        let galleries: Vec<&[Embedding]> = level_tracks.iter().map(|&i| tracks[i].gallery.as_slice()).collect();
        let queries: Vec<Embedding> = unmatched_dets.iter().map(|&j| embeddings[j].clone()).collect();
        let appearance = cosine_cost(&galleries, &queries, cfg.assoc.cosine_gate)?;
        let cost = combined_cost(&motion, &appearance, cfg.assoc.lambda)?;
        let a = hungarian(&cost);
        let mut taken = vec![false; unmatched_dets.len()];
        for &(r, c) in &a.pairs {
            pairs.push((level_tracks[r], unmatched_dets[c]));
            taken[c] = true;
        }
        unmatched_dets = unmatched_dets
            .iter()
            .zip(&taken)
            .filter(|(_, t)| !**t)
            .map(|(j, _)| *j)
            .collect();
    }

    let mut matched = vec![false; tracks.len()];
    for &(i, _) in &pairs {
        matched[i] = true;
    }
    let mut iou_candidates = Vec::new();
    let mut unmatched_tracks = Vec::new();
    for (i, t) in tracks.iter().enumerate() {
        if matched[i] || t.status == TrackStatus::Deleted {
            continue;
        }
        if t.status == TrackStatus::Tentative || t.time_since_update == 1 {
            iou_candidates.push(i);
        } else {
            unmatched_tracks.push(i);
        }
    }
    let (iou_pairs, iou_left, dets_left) =
        iou_round(tracks, &iou_candidates, dets, &unmatched_dets, cfg.assoc.iou_min);
    pairs.extend(iou_pairs);
    unmatched_tracks.extend(iou_left);
    pairs.sort_unstable();
    unmatched_tracks.sort_unstable();
    Ok(Matches {
        pairs,
        unmatched_tracks,
        unmatched_dets: dets_left,
    })
}

/// Stateful tracker for one detection sequence.
#[derive(Debug, Clone)]
pub struct Tracker {
    cfg: TrackerConfig,
    live: Vec<Track>,
    finished: Vec<TrackRecord>,
    next_id: TrackId,
    last_frame: Option<u64>,
    embedding_dim: Option<usize>,
}

impl Tracker {
    pub fn new(cfg: TrackerConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Tracker {
            cfg,
            live: Vec::new(),
            finished: Vec::new(),
            next_id: 1,
            last_frame: None,
            embedding_dim: None,
        })
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.cfg
    }

    pub fn tracks(&self) -> &[Track] {
        &self.live
    }

    fn admit(&mut self, dets: &[Detection]) -> Result<Vec<Detection>> {
        let mut kept = Vec::with_capacity(dets.len());
        for (j, d) in dets.iter().enumerate() {
            d.validate().map_err(|e| Error::InvalidDetection(format!("detection {j}: {e}")))?;
            if let Some(e) = &d.embedding {
                match self.embedding_dim {
                    None => self.embedding_dim = Some(e.dim()),
                    Some(dim) if dim != e.dim() => {
                        return Err(Error::InvalidDetection(format!(
                            "detection {j}: embedding dimension {} differs from {dim}",
                            e.dim()
                        )))
                    }
                    Some(_) => {}
                }
            }
            if d.class == ObjectClass::NearAccident || d.confidence < self.cfg.min_confidence {
                continue;
            }
            if self.cfg.mode == MotionMode::DeepSort && d.embedding.is_none() {
                return Err(Error::MissingEmbedding(j));
            }
            kept.push(d.clone());
        }
        Ok(kept)
    }

    /// Processes one frame of detections.
    pub fn step(&mut self, frame: u64, dets: &[Detection]) -> Result<FrameResult> {
        if let Some(previous) = self.last_frame {
            if frame <= previous {
                return Err(Error::OutOfOrderFrame { frame, previous });
            }
        }
        let dets = self.admit(dets)?;
        self.last_frame = Some(frame);

        for t in &mut self.live {
            t.filter.predict(&self.cfg.noise)?;
            t.age += 1;
            t.time_since_update += 1;
        }

        let matches = match self.cfg.mode {
            MotionMode::Sort => iou_association(&self.live, &dets, &self.cfg),
            MotionMode::DeepSort => matching_cascade(&self.live, &dets, &self.cfg)?,
        };

        for &(i, j) in &matches.pairs {
            self.live[i].associate(frame, &dets[j], &self.cfg)?;
        }
        let t_lost = self.cfg.t_lost();
        for &i in &matches.unmatched_tracks {
            let t = &mut self.live[i];
            if t.status == TrackStatus::Tentative || t.time_since_update > t_lost {
                t.status = TrackStatus::Deleted;
            }
        }

        // Only detections that overlap no surviving track start a new one.
        let mut new_ids = Vec::new();
        let existing: Vec<BBox> = self
            .live
            .iter()
            .filter(|t| t.status != TrackStatus::Deleted)
            .map(Track::bbox)
            .collect();
        for &j in &matches.unmatched_dets {
            let d = &dets[j];
            let overlap = existing.iter().map(|b| iou(b, &d.bbox)).fold(0.0, f64::max);
            if overlap > 0.0 && overlap >= self.cfg.assoc.iou_min {
                continue;
            }
            let id = self.next_id;
            self.next_id += 1;
            self.live.push(Track::new(id, frame, d, &self.cfg));
            new_ids.push(id);
        }

        let mut deleted_ids = Vec::new();
        let mut i = 0;
        while i < self.live.len() {
            if self.live[i].status == TrackStatus::Deleted {
                let t = self.live.remove(i);
                deleted_ids.push(t.id);
                self.finished.push(t.to_record());
            } else {
                i += 1;
            }
        }
        deleted_ids.sort_unstable();

        Ok(FrameResult {
            frame,
            active_tracks: self
                .live
                .iter()
                .map(|t| ActiveTrack {
                    id: t.id,
                    bbox: t.bbox(),
                    status: t.status,
                })
                .collect(),
            new_ids,
            deleted_ids,
        })
    }

    /// Snapshot of the tracks with a point at or after `frame`, ordered by id.
    pub fn snapshot_since(&self, frame: u64) -> TrackArchive {
        let recent = |points: &[TrackPoint]| points.last().is_some_and(|p| p.frame >= frame);
        let mut tracks: Vec<TrackRecord> = self
            .finished
            .iter()
            .filter(|t| recent(&t.points))
            .cloned()
            .chain(self.live.iter().filter(|t| recent(&t.points)).map(Track::to_record))
            .collect();
        tracks.sort_by_key(|t| t.id);
        TrackArchive { tracks }
    }

    /// Snapshot of every track seen so far, deleted or live, ordered by id.
    pub fn finalize(&self) -> TrackArchive {
        let mut tracks: Vec<TrackRecord> = self
            .finished
            .iter()
            .cloned()
            .chain(self.live.iter().map(Track::to_record))
            .collect();
        tracks.sort_by_key(|t| t.id);
        TrackArchive { tracks }
    }
}
