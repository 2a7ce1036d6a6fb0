//! Frame-level near-accident scoring and identity checks.
//!
//! A frame is positive when ground truth marks a near-accident region on it.
//! A positive frame is a true positive when every ground-truth region on it
//! is matched by some predicted region with IoU at least the threshold.
//! Otherwise it is a false negative. A negative frame with any prediction is
//! a false positive.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Add, AddAssign, Range};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{iou, BBox};
use crate::nearmiss::NearAccidentEvent;
use crate::tracker::{TrackArchive, TrackId};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

impl Add for ConfusionCounts {
    type Output = ConfusionCounts;

    fn add(self, o: ConfusionCounts) -> ConfusionCounts {
        ConfusionCounts {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
            tn: self.tn + o.tn,
        }
    }
}

impl AddAssign for ConfusionCounts {
    fn add_assign(&mut self, o: ConfusionCounts) {
        *self = *self + o;
    }
}

impl std::iter::Sum for ConfusionCounts {
    fn sum<I: Iterator<Item = ConfusionCounts>>(iter: I) -> Self {
        iter.fold(ConfusionCounts::default(), Add::add)
    }
}

/// Precision, recall and F-measure; `None` where the denominator is zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f_measure: Option<f64>,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn prf(c: &ConfusionCounts) -> Prf {
    Prf {
        precision: ratio(c.tp, c.tp + c.fp),
        recall: ratio(c.tp, c.tp + c.fn_),
        f_measure: ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_),
    }
}

/// Renders a metric with four decimals, or `n/a`.
pub fn fmt_metric(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.4}"))
}

impl fmt::Display for Prf {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "precision {} recall {} F {}",
            fmt_metric(self.precision),
            fmt_metric(self.recall),
            fmt_metric(self.f_measure)
        )
    }
}

fn regions_by_frame(
    events: &[NearAccidentEvent],
    frames: &Range<u64>,
    what: &str,
) -> Result<BTreeMap<u64, Vec<BBox>>> {
    let mut out: BTreeMap<u64, Vec<BBox>> = BTreeMap::new();
    for e in events {
        for r in e.frame_regions() {
            if !frames.contains(&r.frame) {
                return Err(Error::InvalidConfig(format!(
                    "{what} region on frame {} outside evaluated frames {}..{}",
                    r.frame, frames.start, frames.end
                )));
            }
            out.entry(r.frame).or_default().push(r.region);
        }
    }
    Ok(out)
}

/// Per-frame outcome details for one sequence.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameScore {
    pub counts: ConfusionCounts,
    /// Ground-truth positive frames.
    pub gt_positive: u64,
    /// Positive frames localised at the threshold.
    pub correct: u64,
    /// Frames with a prediction that is not a correct localisation.
    pub incorrect: u64,
}

/// Scores every frame in `frames`.
pub fn score_detail(
    predicted: &[NearAccidentEvent],
    ground_truth: &[NearAccidentEvent],
    frames: Range<u64>,
    iou_threshold: f64,
) -> Result<FrameScore> {
    let gt = regions_by_frame(ground_truth, &frames, "ground-truth")?;
    let pred = regions_by_frame(predicted, &frames, "predicted")?;
    for (f, regions) in &gt {
        for (i, a) in regions.iter().enumerate() {
            if regions[i + 1..].iter().any(|b| iou(a, b) >= iou_threshold) {
                return Err(Error::AmbiguousGroundTruth(format!(
                    "overlapping ground-truth regions on frame {f}"
                )));
            }
        }
    }

    let mut s = FrameScore::default();
    let none: Vec<BBox> = Vec::new();
    for f in frames {
        let p = pred.get(&f).unwrap_or(&none);
        match gt.get(&f) {
            Some(g) => {
                s.gt_positive += 1;
                let localised = g
                    .iter()
                    .all(|g| p.iter().any(|p| iou(p, g) >= iou_threshold));
                if localised {
                    s.counts.tp += 1;
                    s.correct += 1;
                } else {
                    s.counts.fn_ += 1;
                    if !p.is_empty() {
                        s.incorrect += 1;
                    }
                }
            }
            None if p.is_empty() => s.counts.tn += 1,
            None => {
                s.counts.fp += 1;
                s.incorrect += 1;
            }
        }
    }
    Ok(s)
}

pub fn score_frames(
    predicted: &[NearAccidentEvent],
    ground_truth: &[NearAccidentEvent],
    frames: Range<u64>,
    iou_threshold: f64,
) -> Result<ConfusionCounts> {
    score_detail(predicted, ground_truth, frames, iou_threshold).map(|s| s.counts)
}

/// One line of the per-video report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoRow {
    pub name: String,
    pub positive: bool,
    pub frames: u64,
    pub gt_positive: u64,
    pub correct: u64,
    pub incorrect: u64,
    pub counts: ConfusionCounts,
}

impl VideoRow {
    pub fn new(name: impl Into<String>, ground_truth: &[NearAccidentEvent], frames: u64, score: FrameScore) -> Self {
        VideoRow {
            name: name.into(),
            positive: !ground_truth.is_empty(),
            frames,
            gt_positive: score.gt_positive,
            correct: score.correct,
            incorrect: score.incorrect,
            counts: score.counts,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub rows: Vec<VideoRow>,
    pub total: ConfusionCounts,
    pub metrics: Prf,
}

impl Report {
    pub fn new(rows: Vec<VideoRow>) -> Self {
        let total = rows.iter().map(|r| r.counts).sum();
        Report {
            metrics: prf(&total),
            rows,
            total,
        }
    }

    /// Human-readable table, one row per video plus the aggregate.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:<20} {:>7} {:>14} {:>9} {:>10}\n",
            "video", "pos/neg", "gt_pos/frames", "correct", "incorrect"
        ));
        for r in &self.rows {
            out.push_str(&format!(
                "{:<20} {:>7} {:>14} {:>9} {:>10}\n",
                r.name,
                if r.positive { "pos" } else { "neg" },
                format!("{}/{}", r.gt_positive, r.frames),
                r.correct,
                r.incorrect
            ));
        }
        let t = &self.total;
        out.push_str(&format!("tp {} fp {} fn {} tn {}\n", t.tp, t.fp, t.fn_, t.tn));
        out.push_str(&format!("{}\n", self.metrics));
        out
    }
}

fn boxes_by_frame(archive: &TrackArchive) -> BTreeMap<u64, Vec<(TrackId, BBox)>> {
    let mut out: BTreeMap<u64, Vec<(TrackId, BBox)>> = BTreeMap::new();
    for t in &archive.tracks {
        for p in &t.points {
            out.entry(p.frame).or_default().push((t.id, p.bbox));
        }
    }
    out
}

fn best_match(candidates: Option<&Vec<(TrackId, BBox)>>, target: &BBox) -> Option<(TrackId, f64)> {
    candidates?
        .iter()
        .map(|(id, b)| (*id, iou(b, target)))
        .fold(None, |acc: Option<(TrackId, f64)>, cur| match acc {
            Some(a) if a.1 >= cur.1 => Some(a),
            _ => Some(cur),
        })
}

/// Frames where a ground-truth object's best-IoU track differs from the one
/// it was matched to before.
pub fn id_switches(tracks: &TrackArchive, ground_truth: &TrackArchive, iou_match: f64) -> u64 {
    let index = boxes_by_frame(tracks);
    let mut switches = 0;
    for gt in &ground_truth.tracks {
        let mut previous: Option<TrackId> = None;
        for p in &gt.points {
            let Some((id, v)) = best_match(index.get(&p.frame), &p.bbox) else {
                continue;
            };
            if v < iou_match {
                continue;
            }
            if previous.is_some_and(|prev| prev != id) {
                switches += 1;
            }
            previous = Some(id);
        }
    }
    switches
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoxAccuracy {
    pub checked: u64,
    pub below: u64,
    pub min_iou: f64,
    pub mean_iou: f64,
}

/// Best track-box IoU for every ground-truth box after the first `burn_in`
/// frames of each object. Frames with no track box count as IoU 0.
pub fn box_accuracy(tracks: &TrackArchive, ground_truth: &TrackArchive, burn_in: u64, threshold: f64) -> BoxAccuracy {
    let index = boxes_by_frame(tracks);
    let mut acc = BoxAccuracy {
        checked: 0,
        below: 0,
        min_iou: 1.0,
        mean_iou: 0.0,
    };
    let mut sum = 0.0;
    for gt in &ground_truth.tracks {
        let Some(first) = gt.first_frame() else { continue };
        for p in gt.points.iter().filter(|p| p.frame >= first + burn_in) {
            let v = best_match(index.get(&p.frame), &p.bbox).map_or(0.0, |m| m.1);
            acc.checked += 1;
            sum += v;
            acc.min_iou = acc.min_iou.min(v);
            if v < threshold {
                acc.below += 1;
            }
        }
    }
    if acc.checked > 0 {
        acc.mean_iou = sum / acc.checked as f64;
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Point2;
    use crate::io::ObjectClass;
    use crate::nearmiss::FrameRegion;
    use crate::tracker::{TrackPoint, TrackRecord, TrackStatus};

    fn event(start: u64, end: u64, region: BBox) -> NearAccidentEvent {
        NearAccidentEvent {
            frame_start: start,
            frame_end: end,
            region,
            probability: 1.0,
            track_ids: vec![1, 2],
            trace: Vec::new(),
        }
    }

    #[test]
    fn table_three_metrics() {
        let c = ConfusionCounts {
            tp: 160,
            fp: 19,
            fn_: 32,
            tn: 11081,
        };
        let m = prf(&c);
        assert!((m.precision.unwrap() - 0.8939).abs() < 1e-4);
        assert!((m.recall.unwrap() - 0.8333).abs() < 1e-4);
        assert!((m.f_measure.unwrap() - 0.8625).abs() < 1e-4);
    }

    #[test]
    fn undefined_and_perfect_metrics() {
        let m = prf(&ConfusionCounts::default());
        assert_eq!(m.precision, None);
        assert_eq!(m.f_measure, None);
        assert_eq!(m.to_string(), "precision n/a recall n/a F n/a");
        let p = prf(&ConfusionCounts {
            tp: 10,
            ..Default::default()
        });
        assert_eq!((p.precision, p.recall, p.f_measure), (Some(1.0), Some(1.0), Some(1.0)));
    }

    #[test]
    fn iou_exactly_at_threshold_is_true_positive() {
        // [0,10]x[0,10] vs [0,10]x[0,6]: IoU 60/100
        let gt = event(5, 5, BBox::new(0.0, 0.0, 10.0, 10.0));
        let pred = event(5, 5, BBox::new(0.0, 0.0, 10.0, 6.0));
        let c = score_frames(&[pred], &[gt], 0..10, 0.6).unwrap();
        assert_eq!(c, ConfusionCounts { tp: 1, fp: 0, fn_: 0, tn: 9 });
    }

    #[test]
    fn prediction_on_negative_frame_is_false_positive() {
        let gt = event(2, 3, BBox::new(0.0, 0.0, 10.0, 10.0));
        let pred = event(3, 4, BBox::new(0.0, 0.0, 10.0, 10.0));
        let s = score_detail(&[pred], &[gt], 0..10, 0.6).unwrap();
        assert_eq!(s.counts, ConfusionCounts { tp: 1, fp: 1, fn_: 1, tn: 7 });
        assert_eq!((s.gt_positive, s.correct, s.incorrect), (2, 1, 1));
    }

    #[test]
    fn empty_inputs_are_all_negative() {
        let c = score_frames(&[], &[], 0..100, 0.6).unwrap();
        assert_eq!(c.tn, 100);
        assert_eq!(c.total(), 100);
    }

    #[test]
    fn duplicate_ground_truth_is_ambiguous() {
        let a = event(1, 2, BBox::new(0.0, 0.0, 10.0, 10.0));
        let b = event(2, 3, BBox::new(1.0, 0.0, 10.0, 10.0));
        assert!(matches!(score_frames(&[], &[a.clone(), b], 0..10, 0.6), Err(Error::AmbiguousGroundTruth(_))));
        let far = event(2, 3, BBox::new(100.0, 0.0, 10.0, 10.0));
        assert!(score_frames(&[], &[a, far], 0..10, 0.6).is_ok());
    }

    #[test]
    fn best_prediction_is_scored() {
        let gt = event(1, 1, BBox::new(0.0, 0.0, 10.0, 10.0));
        let bad = event(1, 1, BBox::new(50.0, 0.0, 10.0, 10.0));
        let good = event(1, 1, BBox::new(0.5, 0.0, 10.0, 10.0));
        let c = score_frames(&[bad, good], &[gt], 1..2, 0.6).unwrap();
        assert_eq!(c.tp, 1);
    }

    #[test]
    fn trace_regions_are_scored_per_frame() {
        let mut gt = event(1, 2, BBox::new(0.0, 0.0, 10.0, 10.0));
        gt.trace = vec![
            FrameRegion { frame: 1, region: BBox::new(0.0, 0.0, 10.0, 10.0), probability: 1.0 },
            FrameRegion { frame: 2, region: BBox::new(20.0, 0.0, 10.0, 10.0), probability: 1.0 },
        ];
        let pred = event(1, 2, BBox::new(0.0, 0.0, 10.0, 10.0));
        let c = score_frames(&[pred], &[gt], 1..3, 0.6).unwrap();
        assert_eq!((c.tp, c.fn_), (1, 1));
    }

    #[test]
    fn out_of_range_regions_are_rejected() {
        let gt = event(8, 12, BBox::new(0.0, 0.0, 10.0, 10.0));
        assert!(score_frames(&[], &[gt], 0..10, 0.6).is_err());
    }

    fn archive(tracks: Vec<(TrackId, Vec<(u64, f64)>)>) -> TrackArchive {
        TrackArchive {
            tracks: tracks
                .into_iter()
                .map(|(id, pts)| TrackRecord {
                    id,
                    class: ObjectClass::Car,
                    status: TrackStatus::Confirmed,
                    confirmed: true,
                    hits: pts.len() as u32,
                    points: pts
                        .into_iter()
                        .map(|(frame, x)| {
                            let center = Point2::new(x, 0.0);
                            TrackPoint {
                                frame,
                                center,
                                bbox: BBox::from_center(center, 10.0, 10.0),
                            }
                        })
                        .collect(),
                })
                .collect(),
        }
    }

    #[test]
    fn id_switch_counts() {
        let gt = archive(vec![
            (1, (0..10).map(|f| (f, 0.0)).collect()),
            (2, (0..10).map(|f| (f, 100.0)).collect()),
        ]);
        assert_eq!(id_switches(&gt, &gt, 0.5), 0);
        // ids 7 and 8 trade places at frame 5
        let swapped = archive(vec![
            (7, (0..10).map(|f| (f, if f < 5 { 0.0 } else { 100.0 })).collect()),
            (8, (0..10).map(|f| (f, if f < 5 { 100.0 } else { 0.0 })).collect()),
        ]);
        assert_eq!(id_switches(&swapped, &gt, 0.5), 2);
        assert_eq!(id_switches(&TrackArchive::default(), &TrackArchive::default(), 0.5), 0);
    }

    #[test]
    fn box_accuracy_skips_burn_in() {
        let gt = archive(vec![(1, (0..10).map(|f| (f, f as f64)).collect())]);
        let tracks = archive(vec![(3, (0..10).map(|f| (f, if f < 3 { f as f64 + 5.0 } else { f as f64 })).collect())]);
        let a = box_accuracy(&tracks, &gt, 3, 0.9);
        assert_eq!((a.checked, a.below), (7, 0));
        let b = box_accuracy(&tracks, &gt, 0, 0.9);
        assert_eq!(b.below, 3);
    }
}
