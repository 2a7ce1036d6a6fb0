//! Deterministic intersection scenarios with ground truth.
//!
//! Vehicles follow piecewise-linear paths at constant per-segment speed and
//! may dwell at waypoints. Time is continuous; frame `f` samples the scene at
//! time `f`. All randomness comes from `ChaCha8Rng` seeded with the scenario
//! seed, using separate streams for appearance and detection noise, so output
//! is identical on every platform.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::assoc::Embedding;
use crate::error::{Error, Result};
use crate::geometry::{segment_intersection, union_box, BBox, Point2};
use crate::io::{Detection, FrameDetections, ObjectClass};
use crate::nearmiss::{FrameRegion, NearAccidentEvent};
use crate::tracker::{TrackArchive, TrackId, TrackPoint, TrackRecord, TrackStatus};

const STREAM_APPEARANCE: u64 = 1;
const STREAM_DETECTIONS: u64 = 2;
const VEHICLE_CONFIDENCE: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Arena {
    pub width: f64,
    pub height: f64,
}

impl Default for Arena {
    fn default() -> Self {
        Arena {
            width: 960.0,
            height: 480.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VehicleSpec {
    pub class: ObjectClass,
    /// Box width and height in pixels.
    pub size: [f64; 2],
    pub waypoints: Vec<Point2>,
    /// Speed in px/frame on each segment.
    pub speeds: Vec<f64>,
    /// Frames spent stopped at each waypoint; empty means no stops.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub dwell: Vec<f64>,
    /// Time at which the vehicle is at its first waypoint. May be fractional.
    #[serde(default)]
    pub spawn: f64,
}

/// Re-times two vehicles so their closest approach near the first crossing
/// of their paths has the given distance at the given frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptedConflict {
    pub a: usize,
    pub b: usize,
    pub frame: f64,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GroundTruthConfig {
    pub tau_relative: f64,
    pub tau_pixels_override: Option<f64>,
}

impl Default for GroundTruthConfig {
    fn default() -> Self {
        GroundTruthConfig {
            tau_relative: 0.5,
            tau_pixels_override: None,
        }
    }
}

impl GroundTruthConfig {
    pub fn tau(&self, a: &VehicleSpec, b: &VehicleSpec) -> f64 {
        let diag = |v: &VehicleSpec| v.size[0].hypot(v.size[1]);
        self.tau_pixels_override
            .unwrap_or(self.tau_relative * 0.5 * (diag(a) + diag(b)))
    }
}

fn default_embedding_dim() -> usize {
    32
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub name: String,
    /// Number of frames; frames are numbered `1..=duration`.
    pub duration: u64,
    pub seed: u64,
    #[serde(default)]
    pub arena: Arena,
    #[serde(default = "default_embedding_dim")]
    pub embedding_dim: usize,
    #[serde(default)]
    pub ground_truth: GroundTruthConfig,
    #[serde(default)]
    pub vehicles: Vec<VehicleSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub conflicts: Vec<ScriptedConflict>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseModel {
    /// Std of the box position jitter, px.
    pub position_std: f64,
    /// Std of the box width/height jitter, px.
    pub size_std: f64,
    /// Probability that a true box is not detected.
    pub miss_rate: f64,
    /// Mean number of spurious boxes per frame.
    pub fp_rate: f64,
    /// Per-component std of the appearance noise before renormalisation.
    pub embedding_std: f64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        NoiseModel::none()
    }
}

impl NoiseModel {
    pub fn none() -> Self {
        NoiseModel {
            position_std: 0.0,
            size_std: 0.0,
            miss_rate: 0.0,
            fp_rate: 0.0,
            embedding_std: 0.0,
        }
    }

    /// 1 px jitter and 5% misses.
    pub fn moderate() -> Self {
        NoiseModel {
            position_std: 1.0,
            size_std: 1.0,
            miss_rate: 0.05,
            fp_rate: 0.0,
            embedding_std: 0.05,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let nonneg = |name: &str, v: f64| {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(Error::InvalidConfig(format!("noise.{name} must be a non-negative number, got {v}")))
            }
        };
        nonneg("position_std", self.position_std)?;
        nonneg("size_std", self.size_std)?;
        nonneg("fp_rate", self.fp_rate)?;
        nonneg("embedding_std", self.embedding_std)?;
        if !(0.0..1.0).contains(&self.miss_rate) {
            return Err(Error::InvalidConfig(format!(
                "noise.miss_rate must lie in [0, 1), got {}",
                self.miss_rate
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Leg {
    t0: f64,
    t1: f64,
    p0: Point2,
    p1: Point2,
}

impl Leg {
    fn velocity(&self) -> Point2 {
        if self.t1 > self.t0 {
            (self.p1 - self.p0) * (1.0 / (self.t1 - self.t0))
        } else {
            Point2::new(0.0, 0.0)
        }
    }

    fn moving(&self) -> bool {
        self.p0 != self.p1
    }
}

/// Timeline of one vehicle in its own clock (0 at the first waypoint).
#[derive(Debug, Clone, PartialEq)]
pub struct Motion {
    legs: Vec<Leg>,
}

impl Motion {
    pub fn new(v: &VehicleSpec) -> Self {
        let mut legs = Vec::new();
        let mut t = 0.0;
        let dwell = |i: usize| v.dwell.get(i).copied().unwrap_or(0.0);
        for (i, w) in v.waypoints.windows(2).enumerate() {
            if dwell(i) > 0.0 {
                legs.push(Leg {
                    t0: t,
                    t1: t + dwell(i),
                    p0: w[0],
                    p1: w[0],
                });
                t += dwell(i);
            }
            let dt = w[0].distance(w[1]) / v.speeds[i];
            legs.push(Leg {
                t0: t,
                t1: t + dt,
                p0: w[0],
                p1: w[1],
            });
            t += dt;
        }
        let last = v.waypoints.len() - 1;
        if dwell(last) > 0.0 {
            legs.push(Leg {
                t0: t,
                t1: t + dwell(last),
                p0: v.waypoints[last],
                p1: v.waypoints[last],
            });
        }
        Motion { legs }
    }

    pub fn duration(&self) -> f64 {
        self.legs.last().map_or(0.0, |l| l.t1)
    }

    /// Position at local time `t`, `None` outside the timeline.
    pub fn position(&self, t: f64) -> Option<Point2> {
        if !(0.0..=self.duration()).contains(&t) {
            return None;
        }
        let i = self.legs.partition_point(|l| l.t1 < t).min(self.legs.len() - 1);
        let l = &self.legs[i];
        if l.t1 <= l.t0 {
            return Some(l.p0);
        }
        let a = ((t - l.t0) / (l.t1 - l.t0)).clamp(0.0, 1.0);
        Some(l.p0 + (l.p1 - l.p0) * a)
    }

    /// Local time at which the vehicle reaches the end of the moving segment
    /// ending at waypoint `i`.
    pub fn arrival(&self, i: usize) -> f64 {
        if i == 0 {
            return 0.0;
        }
        self.legs.iter().filter(|l| l.moving()).nth(i - 1).map_or(0.0, |l| l.t1)
    }
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(format!("scenario {}: {m}", self.name)));
        if self.duration == 0 {
            return bad("duration must be positive".into());
        }
        if !(self.arena.width > 0.0 && self.arena.height > 0.0) {
            return bad("arena must have positive size".into());
        }
        if self.embedding_dim == 0 {
            return bad("embedding_dim must be positive".into());
        }
        let gt = &self.ground_truth;
        if !(gt.tau_relative.is_finite() && gt.tau_relative > 0.0) || gt.tau_pixels_override.is_some_and(|t| t.is_nan() || t <= 0.0) {
            return bad("ground-truth threshold must be positive".into());
        }
        for (i, v) in self.vehicles.iter().enumerate() {
            if v.class == ObjectClass::NearAccident {
                return bad(format!("vehicle {i} cannot have class near_accident"));
            }
            let [w, h] = v.size;
            if !(w > 0.0 && h > 0.0 && w.is_finite() && h.is_finite()) {
                return bad(format!("vehicle {i} has invalid size {:?}", v.size));
            }
            if v.waypoints.len() < 2 {
                return bad(format!("vehicle {i} needs at least two waypoints"));
            }
            if v.speeds.len() != v.waypoints.len() - 1 {
                return bad(format!(
                    "vehicle {i} has {} waypoints but {} speeds",
                    v.waypoints.len(),
                    v.speeds.len()
                ));
            }
            if v.speeds.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
                return bad(format!("vehicle {i} speeds must be positive"));
            }
            if !(v.dwell.is_empty() || v.dwell.len() == v.waypoints.len()) {
                return bad(format!("vehicle {i} dwell must be empty or one per waypoint"));
            }
            if v.dwell.iter().any(|d| !(d.is_finite() && *d >= 0.0)) {
                return bad(format!("vehicle {i} dwell must be non-negative"));
            }
            if !(v.spawn.is_finite() && v.spawn >= 0.0) {
                return bad(format!("vehicle {i} spawn must be non-negative"));
            }
            for p in &v.waypoints {
                let inside = p.x - w / 2.0 >= 0.0
                    && p.y - h / 2.0 >= 0.0
                    && p.x + w / 2.0 <= self.arena.width
                    && p.y + h / 2.0 <= self.arena.height;
                if !inside {
                    return bad(format!("vehicle {i} waypoint {p:?} puts its box outside the arena"));
                }
            }
            if v.waypoints.windows(2).any(|w| w[0] == w[1]) {
                return bad(format!("vehicle {i} has repeated consecutive waypoints"));
            }
        }
        let mut seen = std::collections::BTreeSet::new();
        for c in &self.conflicts {
            if c.a >= self.vehicles.len() || c.b >= self.vehicles.len() || c.a == c.b {
                return bad(format!("conflict references invalid vehicles {} / {}", c.a, c.b));
            }
            if !seen.insert(c.a) || !seen.insert(c.b) {
                return bad("a vehicle may take part in at most one scripted conflict".into());
            }
            if !(c.distance.is_finite() && c.distance >= 0.0 && c.frame.is_finite()) {
                return bad("conflict distance must be non-negative".into());
            }
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let spec: ScenarioSpec = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        ScenarioSpec::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    /// Scenario with every scripted conflict applied to the vehicle spawn times.
    pub fn resolved(&self) -> Result<ScenarioSpec> {
        self.validate()?;
        let mut out = self.clone();
        for c in &self.conflicts {
            let (sa, sb) = retime(&out.vehicles[c.a], &out.vehicles[c.b], c)?;
            out.vehicles[c.a].spawn = sa;
            out.vehicles[c.b].spawn = sb;
        }
        out.conflicts.clear();
        Ok(out)
    }
}

/// Closed-form spawn times for a scripted conflict.
///
/// With `a` reaching the crossing point at `ta` and `b` at `ta + d`,
/// the relative position is `(va - vb) s + vb d` for `s = t - ta`, whose
/// minimum norm is `|d| |va x vb| / |va - vb|`.
fn retime(a: &VehicleSpec, b: &VehicleSpec, c: &ScriptedConflict) -> Result<(f64, f64)> {
    let infeasible = |m: String| Err(Error::InfeasibleScenario(format!("conflict {}/{}: {m}", c.a, c.b)));
    let (ma, mb) = (Motion::new(a), Motion::new(b));
    let la: Vec<&Leg> = ma.legs.iter().filter(|l| l.moving()).collect();
    let lb: Vec<&Leg> = mb.legs.iter().filter(|l| l.moving()).collect();
    let crossing = la.iter().find_map(|pa| {
        lb.iter()
            .find_map(|pb| segment_intersection(pa.p0, pa.p1, pb.p0, pb.p1).map(|x| (**pa, **pb, x)))
    });
    let Some((leg_a, leg_b, x)) = crossing else {
        return infeasible("paths never cross".into());
    };
    let (va, vb) = (leg_a.velocity(), leg_b.velocity());
    let cross = va.cross(vb).abs();
    let w = va - vb;
    if cross < 1e-12 {
        return infeasible("paths are parallel at the crossing".into());
    }
    let at = |leg: &Leg, v: Point2| leg.t0 + (x - leg.p0).norm() / v.norm();
    let (ta_local, tb_local) = (at(&leg_a, va), at(&leg_b, vb));
    let delay = c.distance * w.norm() / cross;
    let s_star = -(vb * delay).dot(w) / w.dot(w);

    let ta = c.frame - s_star;
    let spawn_a = ta - ta_local;
    let spawn_b = ta + delay - tb_local;
    let local_a = ta_local + s_star;
    let local_b = tb_local + s_star - delay;
    let eps = 1e-9;
    if local_a < leg_a.t0 - eps || local_a > leg_a.t1 + eps || local_b < leg_b.t0 - eps || local_b > leg_b.t1 + eps {
        return infeasible(format!(
            "closest approach for distance {} falls outside the crossing segments",
            c.distance
        ));
    }
    if spawn_a < 0.0 || spawn_b < 0.0 {
        return infeasible(format!("target frame {} is too early for the paths", c.frame));
    }
    Ok((spawn_a, spawn_b))
}

/// Output of [`generate`].
#[derive(Debug, Clone, PartialEq)]
pub struct Generated {
    /// One entry per frame `1..=duration`, possibly empty.
    pub frames: Vec<FrameDetections>,
    /// Ground-truth trajectories; vehicle `i` has track id `i + 1`.
    pub ground_truth: TrackArchive,
    pub events: Vec<NearAccidentEvent>,
}

impl Generated {
    pub fn frame_range(&self) -> std::ops::Range<u64> {
        let n = self.frames.len() as u64;
        1..n + 1
    }
}

fn true_boxes(spec: &ScenarioSpec) -> Vec<BTreeMap<u64, BBox>> {
    spec.vehicles
        .iter()
        .map(|v| {
            let m = Motion::new(v);
            let first = (v.spawn.ceil() as u64).max(1);
            let last = ((v.spawn + m.duration()).floor() as u64).min(spec.duration);
            (first..=last)
                .filter_map(|f| m.position(f as f64 - v.spawn).map(|p| (f, BBox::from_center(p, v.size[0], v.size[1]))))
                .collect()
        })
        .collect()
}

fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        if v.iter().map(|x| x * x).sum::<f64>() > 1e-6 {
            return v;
        }
    }
}

/// Generates detections and ground truth for a scenario.
pub fn generate(spec: &ScenarioSpec, noise: &NoiseModel) -> Result<Generated> {
    noise.validate()?;
    let spec = spec.resolved()?;
    let boxes = true_boxes(&spec);

    let mut appearance = ChaCha8Rng::seed_from_u64(spec.seed);
    appearance.set_stream(STREAM_APPEARANCE);
    let bases: Vec<Vec<f64>> = spec
        .vehicles
        .iter()
        .map(|_| random_unit(&mut appearance, spec.embedding_dim))
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(STREAM_DETECTIONS);
    let fp = if noise.fp_rate > 0.0 {
        Some(Poisson::new(noise.fp_rate).map_err(|e| Error::InvalidConfig(e.to_string()))?)
    } else {
        None
    };
    let normal = |rng: &mut ChaCha8Rng, std: f64| std * rng.sample::<f64, _>(StandardNormal);

    let mut frames = Vec::with_capacity(spec.duration as usize);
    for f in 1..=spec.duration {
        let mut dets = Vec::new();
        for (i, v) in spec.vehicles.iter().enumerate() {
            let Some(b) = boxes[i].get(&f) else { continue };
            let missed = rng.random::<f64>() < noise.miss_rate;
            let c = b.center();
            let cx = c.x + normal(&mut rng, noise.position_std);
            let cy = c.y + normal(&mut rng, noise.position_std);
            let w = (b.w + normal(&mut rng, noise.size_std)).max(1.0);
            let h = (b.h + normal(&mut rng, noise.size_std)).max(1.0);
            let emb: Vec<f64> = bases[i]
                .iter()
                .map(|x| x + normal(&mut rng, noise.embedding_std))
                .collect();
            if missed {
                continue;
            }
            let mut bbox = BBox::from_center(Point2::new(cx, cy), w, h);
            if noise.position_std > 0.0 || noise.size_std > 0.0 {
                bbox.x = bbox.x.max(0.0);
                bbox.y = bbox.y.max(0.0);
            } else {
                bbox = *b;
            }
            dets.push(Detection {
                frame: f,
                class: v.class,
                bbox,
                confidence: VEHICLE_CONFIDENCE,
                embedding: Some(Embedding::new(emb)?),
            });
        }
        if let Some(fp) = &fp {
            let n = fp.sample(&mut rng) as usize;
            for _ in 0..n {
                let (w, h) = (40.0, 20.0);
                let x = rng.random_range(0.0..(spec.arena.width - w).max(1.0));
                let y = rng.random_range(0.0..(spec.arena.height - h).max(1.0));
                let class = ObjectClass::VEHICLES[rng.random_range(0..4)];
                dets.push(Detection {
                    frame: f,
                    class,
                    bbox: BBox::new(x, y, w, h),
                    confidence: rng.random_range(0.3..0.7),
                    embedding: Some(Embedding::new(random_unit(&mut rng, spec.embedding_dim))?),
                });
            }
        }
        frames.push(FrameDetections { frame: f, detections: dets });
    }

    let ground_truth = TrackArchive {
        tracks: spec
            .vehicles
            .iter()
            .enumerate()
            .map(|(i, v)| TrackRecord {
                id: i as TrackId + 1,
                class: v.class,
                status: TrackStatus::Confirmed,
                confirmed: true,
                hits: boxes[i].len() as u32,
                points: boxes[i]
                    .iter()
                    .map(|(&frame, &bbox)| TrackPoint {
                        frame,
                        center: bbox.center(),
                        bbox,
                    })
                    .collect(),
            })
            .collect(),
    };
    let events = ground_truth_events(&spec, &boxes);
    Ok(Generated {
        frames,
        ground_truth,
        events,
    })
}

fn ground_truth_events(spec: &ScenarioSpec, boxes: &[BTreeMap<u64, BBox>]) -> Vec<NearAccidentEvent> {
    let mut events = Vec::new();
    for i in 0..boxes.len() {
        for j in i + 1..boxes.len() {
            let tau = spec.ground_truth.tau(&spec.vehicles[i], &spec.vehicles[j]);
            // (frame, distance, union)
            let mut run: Vec<(u64, f64, BBox)> = Vec::new();
            let mut flush = |run: &mut Vec<(u64, f64, BBox)>| {
                if run.is_empty() {
                    return;
                }
                let closest = run
                    .iter()
                    .min_by(|a, b| a.1.total_cmp(&b.1))
                    .map(|r| r.2)
                    .expect("non-empty run");
                events.push(NearAccidentEvent {
                    frame_start: run[0].0,
                    frame_end: run[run.len() - 1].0,
                    region: closest,
                    probability: 1.0,
                    track_ids: vec![i as TrackId + 1, j as TrackId + 1],
                    trace: run
                        .drain(..)
                        .map(|(frame, _, region)| FrameRegion {
                            frame,
                            region,
                            probability: 1.0,
                        })
                        .collect(),
                });
            };
            for (&f, a) in &boxes[i] {
                let close = boxes[j].get(&f).and_then(|b| {
                    let d = a.center().distance(b.center());
                    (d < tau).then(|| (f, d, union_box(a, b)))
                });
                match close {
                    Some(entry) if run.last().is_none_or(|r| r.0 + 1 == f) => run.push(entry),
                    Some(entry) => {
                        flush(&mut run);
                        run.push(entry);
                    }
                    None => flush(&mut run),
                }
            }
            flush(&mut run);
        }
    }
    crate::nearmiss::sort_events(&mut events);
    events
}

/// Minimum time-aligned center distance between every pair of vehicles,
/// relative to the pair's ground-truth threshold.
fn min_relative_gap(spec: &ScenarioSpec, boxes: &[BTreeMap<u64, BBox>], candidate: usize) -> f64 {
    let mut best = f64::INFINITY;
    for (j, other) in boxes.iter().enumerate() {
        if j == candidate {
            continue;
        }
        let tau = spec.ground_truth.tau(&spec.vehicles[candidate], &spec.vehicles[j]);
        for (f, a) in &boxes[candidate] {
            if let Some(b) = other.get(f) {
                best = best.min(a.center().distance(b.center()) / tau);
            }
        }
    }
    best
}

// Road layout of the standard suite (960 x 480 arena).
const WB: f64 = 200.0;
const EB1: f64 = 245.0;
const EB2: f64 = 285.0;
const SB: f64 = 450.0;
const NB: f64 = 510.0;

/// Positive / negative flags and durations of the suite, in video order.
const SUITE: [(bool, u64); 30] = [
    (true, 245),
    (false, 259),
    (false, 266),
    (true, 267),
    (true, 246),
    (true, 243),
    (false, 286),
    (true, 298),
    (true, 351),
    (false, 301),
    (false, 294),
    (true, 350),
    (false, 263),
    (true, 260),
    (true, 326),
    (false, 350),
    (false, 318),
    (true, 340),
    (true, 276),
    (true, 428),
    (false, 259),
    (true, 631),
    (true, 587),
    (false, 780),
    (false, 813),
    (false, 765),
    (true, 616),
    (true, 243),
    (true, 259),
    (true, 272),
];

fn size_of(class: ObjectClass, horizontal: bool) -> [f64; 2] {
    let [l, w] = match class {
        ObjectClass::Motorcycle => [24.0, 12.0],
        ObjectClass::Bus => [64.0, 24.0],
        ObjectClass::Truck => [56.0, 24.0],
        _ => [40.0, 20.0],
    };
    if horizontal {
        [l, w]
    } else {
        [w, l]
    }
}

fn straight(class: ObjectClass, from: [f64; 2], to: [f64; 2], speed: f64, spawn: f64) -> VehicleSpec {
    VehicleSpec {
        class,
        size: size_of(class, from[1] == to[1]),
        waypoints: vec![from.into(), to.into()],
        speeds: vec![speed],
        dwell: Vec::new(),
        spawn,
    }
}

/// Lane routes used for background traffic.
fn lane_route(lane: usize, class: ObjectClass, speed: f64, spawn: f64) -> VehicleSpec {
    match lane {
        0 => straight(class, [920.0, WB], [40.0, WB], speed, spawn),
        1 => straight(class, [40.0, EB1], [920.0, EB1], speed, spawn),
        2 => straight(class, [40.0, EB2], [920.0, EB2], speed, spawn),
        3 => straight(class, [SB, 35.0], [SB, 445.0], speed, spawn),
        _ => straight(class, [NB, 445.0], [NB, 35.0], speed, spawn),
    }
}

/// Adds background vehicles that never come within `margin` thresholds of
/// any other vehicle.
fn add_background(spec: &mut ScenarioSpec, rng: &mut ChaCha8Rng, lanes: &[usize], count: usize, margin: f64) {
    let classes = [
        ObjectClass::Car,
        ObjectClass::Car,
        ObjectClass::Truck,
        ObjectClass::Bus,
        ObjectClass::Motorcycle,
    ];
    let mut attempts = 0;
    let mut added = 0;
    while added < count && attempts < count * 20 {
        attempts += 1;
        let lane = lanes[rng.random_range(0..lanes.len())];
        let class = classes[rng.random_range(0..classes.len())];
        let speed = (rng.random_range(2.5..5.0_f64) * 4.0).round() / 4.0;
        let spawn = rng.random_range(0..spec.duration.saturating_sub(60).max(1)) as f64;
        spec.vehicles.push(lane_route(lane, class, speed, spawn));
        let resolved = spec.resolved().expect("suite scenario resolves");
        let boxes = true_boxes(&resolved);
        let last = spec.vehicles.len() - 1;
        if boxes[last].len() >= 20 && min_relative_gap(&resolved, &boxes, last) > margin {
            added += 1;
        } else {
            spec.vehicles.pop();
        }
    }
}

fn base_spec(name: String, duration: u64, seed: u64) -> ScenarioSpec {
    ScenarioSpec {
        name,
        duration,
        seed,
        arena: Arena::default(),
        embedding_dim: default_embedding_dim(),
        ground_truth: GroundTruthConfig::default(),
        vehicles: Vec::new(),
        conflicts: Vec::new(),
    }
}

fn crossing(spec: &mut ScenarioSpec, k: usize) {
    let classes = [ObjectClass::Car, ObjectClass::Truck, ObjectClass::Car, ObjectClass::Bus, ObjectClass::Car];
    let va = 3.0 + (k % 3) as f64 * 0.5;
    let vb = 3.5 + (k % 2) as f64 * 0.5;
    spec.vehicles.push(straight(ObjectClass::Car, [40.0, EB1], [920.0, EB1], va, 0.0));
    spec.vehicles.push(straight(classes[k % classes.len()], [SB, 35.0], [SB, 445.0], vb, 0.0));
    spec.conflicts.push(ScriptedConflict {
        a: 0,
        b: 1,
        frame: 150.0 + (k * 7 % 40) as f64,
        distance: 4.0 + (k % 4) as f64 * 2.0,
    });
}

fn left_turn(spec: &mut ScenarioSpec, k: usize) {
    let turning = VehicleSpec {
        class: ObjectClass::Car,
        size: size_of(ObjectClass::Car, true),
        waypoints: vec![[930.0, WB].into(), [SB, WB].into(), [SB, 445.0].into()],
        speeds: vec![4.0, 3.0],
        dwell: Vec::new(),
        spawn: 0.0,
    };
    let oncoming = [ObjectClass::Car, ObjectClass::Truck, ObjectClass::Car];
    spec.vehicles.push(turning);
    spec.vehicles.push(straight(oncoming[k % 3], [40.0, EB1], [920.0, EB1], 3.5 + (k % 2) as f64 * 0.5, 0.0));
    spec.conflicts.push(ScriptedConflict {
        a: 0,
        b: 1,
        frame: 160.0 + (k * 11 % 30) as f64,
        distance: 5.0 + (k % 3) as f64 * 2.0,
    });
}

fn rear_approach(spec: &mut ScenarioSpec, k: usize) {
    let lead_class = [ObjectClass::Car, ObjectClass::Truck][k % 2];
    let lead_speed = 2.0;
    let lead = straight(lead_class, [160.0, EB2], [920.0, EB2], lead_speed, 10.0);
    let x_change = 300.0 + (k % 3) as f64 * 40.0;
    let follower = VehicleSpec {
        class: ObjectClass::Car,
        size: size_of(ObjectClass::Car, true),
        waypoints: vec![
            [40.0, EB2].into(),
            [x_change, EB2].into(),
            [x_change + 60.0, EB1].into(),
            [920.0, EB1].into(),
        ],
        speeds: vec![5.0, 5.0, 5.0],
        dwell: Vec::new(),
        spawn: 0.0,
    };
    // lead is `gap` px ahead when the follower starts to pull out
    let diag = |c: ObjectClass| {
        let [w, h] = size_of(c, true);
        w.hypot(h)
    };
    let tau = 0.25 * (diag(lead_class) + diag(ObjectClass::Car));
    let gap = tau * (0.8 + 0.05 * (k % 3) as f64);
    let t_follower = Motion::new(&follower).arrival(1);
    let t_lead = (x_change + gap - 160.0) / lead_speed;
    let mut follower = follower;
    follower.spawn = lead.spawn + t_lead - t_follower;
    spec.vehicles.push(lead);
    spec.vehicles.push(follower);
}

fn weave(spec: &mut ScenarioSpec, k: usize) {
    let car_speed = 2.5;
    let car = straight(ObjectClass::Car, [40.0, EB1], [920.0, EB1], car_speed, 20.0);
    let xs = 260.0 + (k % 3) as f64 * 50.0;
    let lateral = 12.0 + (k % 2) as f64 * 2.0;
    let moto = VehicleSpec {
        class: ObjectClass::Motorcycle,
        size: size_of(ObjectClass::Motorcycle, true),
        waypoints: vec![
            [40.0, EB2].into(),
            [xs, EB2].into(),
            [xs + 50.0, EB1 + lateral].into(),
            [xs + 150.0, EB1 + lateral].into(),
            [xs + 200.0, EB2].into(),
            [920.0, EB2].into(),
        ],
        speeds: vec![5.0, 5.0, 4.5, 5.0, 5.0],
        dwell: Vec::new(),
        spawn: 0.0,
    };
    let m = Motion::new(&moto);
    // halfway along the close pass
    let x_mid = xs + 100.0;
    let t_moto = m.arrival(2) + 50.0 / 4.5;
    let t_car = (x_mid - 40.0) / car_speed;
    let mut moto = moto;
    moto.spawn = car.spawn + t_car - t_moto;
    spec.vehicles.push(car);
    spec.vehicles.push(moto);
}

fn free_flow(spec: &mut ScenarioSpec, rng: &mut ChaCha8Rng) {
    let n = 4 + (spec.duration / 120) as usize;
    add_background(spec, rng, &[0, 1, 2, 3, 4], n, 2.0);
}

fn compliant_yield(spec: &mut ScenarioSpec, k: usize, rng: &mut ChaCha8Rng) {
    let major_speed = 4.0;
    spec.vehicles.push(straight(ObjectClass::Car, [40.0, EB1], [920.0, EB1], major_speed, 5.0));
    spec.vehicles.push(straight([ObjectClass::Bus, ObjectClass::Truck][k % 2], [920.0, WB], [40.0, WB], major_speed, 30.0));
    // waits at the stop line until both major vehicles are far past
    let minor = VehicleSpec {
        class: ObjectClass::Car,
        size: size_of(ObjectClass::Car, false),
        waypoints: vec![[SB, 35.0].into(), [SB, 140.0].into(), [SB, 445.0].into()],
        speeds: vec![3.0, 3.0],
        dwell: vec![0.0, 160.0 + (k % 3) as f64 * 20.0, 0.0],
        spawn: 0.0,
    };
    spec.vehicles.push(minor);
    add_background(spec, rng, &[1, 2, 4], 2 + (spec.duration / 200) as usize, 2.0);
}

/// The fixed 30-scenario suite: 18 positives (crossing, left turn across
/// path, rear approach, motorcycle weave) and 12 negatives (free flow and
/// compliant yield), with the frame counts of the reference videos.
pub fn standard_suite() -> Vec<ScenarioSpec> {
    let (mut pos, mut neg) = (0usize, 0usize);
    SUITE
        .iter()
        .enumerate()
        .map(|(i, &(positive, duration))| {
            let seed = 1000 + i as u64;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let kind;
            let mut spec = base_spec(String::new(), duration, seed);
            if positive {
                let k = pos / 4;
                kind = match pos % 4 {
                    0 => {
                        crossing(&mut spec, k);
                        "crossing"
                    }
                    1 => {
                        left_turn(&mut spec, k);
                        "left-turn"
                    }
                    2 => {
                        rear_approach(&mut spec, k);
                        "rear-approach"
                    }
                    _ => {
                        weave(&mut spec, k);
                        "weave"
                    }
                };
                pos += 1;
                add_background(&mut spec, &mut rng, &[0, 2, 4], 1 + (duration / 200) as usize, 2.0);
            } else {
                if neg % 2 == 0 {
                    free_flow(&mut spec, &mut rng);
                    kind = "free-flow";
                } else {
                    compliant_yield(&mut spec, neg / 2, &mut rng);
                    kind = "yield";
                }
                neg += 1;
            }
            spec.name = format!("{:02}-{kind}", i + 1);
            spec
        })
        .collect()
}

/// Throughput scene: `n` vehicles visible on every frame, each shuttling back
/// and forth inside its own slot of a lane grid.
pub fn dense_traffic(n: usize, duration: u64, seed: u64) -> ScenarioSpec {
    let mut spec = base_spec(format!("dense-{n}"), duration.max(1), seed);
    let lanes = n.clamp(1, 10);
    let per_lane = n.div_ceil(lanes);
    let slot = 860.0 / per_lane as f64;
    let stroke = (slot - 50.0).clamp(10.0, 100.0);
    for i in 0..n {
        let (lane, k) = (i % lanes, i / lanes);
        let y = 30.0 + 44.0 * lane as f64;
        let x0 = 40.0 + slot * k as f64;
        let speed = 1.0 + 0.25 * (i % 4) as f64;
        let strokes = (duration as f64 * speed / stroke).ceil() as usize + 1;
        let waypoints: Vec<Point2> = (0..=strokes)
            .map(|s| Point2::new(if s % 2 == 0 { x0 } else { x0 + stroke }, y))
            .collect();
        spec.vehicles.push(VehicleSpec {
            class: ObjectClass::Car,
            size: size_of(ObjectClass::Car, true),
            speeds: vec![speed; waypoints.len() - 1],
            waypoints,
            dwell: Vec::new(),
            spawn: 0.0,
        });
    }
    spec
}
