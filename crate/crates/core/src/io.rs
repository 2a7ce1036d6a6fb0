//! Detection ingestion, record serialization and run configuration.
//!
//! Detections are JSON Lines with one object per line:
//!
//! ```text
//! {"frame":12,"class":"car","bbox":[x,y,w,h],"conf":0.93,"emb":[...]}
//! ```
//!
//! A CSV variant with header `frame,class,x,y,w,h,conf` (no embeddings) is
//! accepted for files ending in `.csv`. Track and event files are JSON Lines
//! carrying a `schema` field.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::assoc::{AssocConfig, Embedding};
use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::kalman::{MotionMode, NoiseConfig};
use crate::nearmiss::{NearAccidentEvent, NearMissConfig};
use crate::tracker::{TrackArchive, TrackRecord, TrackerConfig};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectClass {
    Motorcycle,
    Car,
    Bus,
    Truck,
    /// Region proposed by a single-frame near-accident detector.
    NearAccident,
}

impl ObjectClass {
    pub const VEHICLES: [ObjectClass; 4] = [
        ObjectClass::Motorcycle,
        ObjectClass::Car,
        ObjectClass::Bus,
        ObjectClass::Truck,
    ];

    pub fn vehicle_index(self) -> Option<usize> {
        ObjectClass::VEHICLES.iter().position(|c| *c == self)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ObjectClass::Motorcycle => "motorcycle",
            ObjectClass::Car => "car",
            ObjectClass::Bus => "bus",
            ObjectClass::Truck => "truck",
            ObjectClass::NearAccident => "near_accident",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub frame: u64,
    pub class: ObjectClass,
    pub bbox: BBox,
    #[serde(rename = "conf")]
    pub confidence: f64,
    #[serde(rename = "emb", default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<Embedding>,
}

impl Detection {
    pub fn validate(&self) -> std::result::Result<(), String> {
        self.bbox.validate()?;
        if self.bbox.x < 0.0 || self.bbox.y < 0.0 {
            return Err(format!("negative box origin in {:?}", self.bbox));
        }
        if !(0.0..=1.0).contains(&self.confidence) {
            return Err(format!("confidence {} outside [0, 1]", self.confidence));
        }
        Ok(())
    }
}

/// Detections of one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameDetections {
    pub frame: u64,
    pub detections: Vec<Detection>,
}

fn group_by_frame(dets: Vec<Detection>) -> Vec<FrameDetections> {
    let mut frames: BTreeMap<u64, Vec<Detection>> = BTreeMap::new();
    for d in dets {
        frames.entry(d.frame).or_default().push(d);
    }
    frames
        .into_iter()
        .map(|(frame, detections)| FrameDetections { frame, detections })
        .collect()
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::io(path, e))
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Loads a detection file, grouping detections by frame in ascending order.
pub fn load_detections(path: impl AsRef<Path>) -> Result<Vec<FrameDetections>> {
    let path = path.as_ref();
    let is_csv = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    let dets = if is_csv {
        load_csv(path)?
    } else {
        load_jsonl(path)?
    };
    Ok(group_by_frame(dets))
}

fn check(path: &Path, line: usize, d: &Detection, dim: &mut Option<usize>) -> Result<()> {
    d.validate().map_err(|m| parse_err(path, line, m))?;
    if let Some(e) = &d.embedding {
        match *dim {
            None => *dim = Some(e.dim()),
            Some(k) if k != e.dim() => {
                return Err(parse_err(
                    path,
                    line,
                    format!("embedding dimension {} differs from earlier {k}", e.dim()),
                ))
            }
            Some(_) => {}
        }
    }
    Ok(())
}

fn load_jsonl(path: &Path) -> Result<Vec<Detection>> {
    let reader = BufReader::new(open(path)?);
    let mut out = Vec::new();
    let mut dim = None;
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let d: Detection = serde_json::from_str(&line).map_err(|e| parse_err(path, i + 1, e.to_string()))?;
        check(path, i + 1, &d, &mut dim)?;
        out.push(d);
    }
    Ok(out)
}

#[derive(Debug, Deserialize)]
struct CsvRow {
    frame: u64,
    class: ObjectClass,
    x: f64,
    y: f64,
    w: f64,
    h: f64,
    conf: f64,
}

fn load_csv(path: &Path) -> Result<Vec<Detection>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(open(path)?);
    let mut out = Vec::new();
    let mut dim = None;
    for (i, row) in reader.deserialize::<CsvRow>().enumerate() {
        // header occupies line 1
        let line = i + 2;
        let row = row.map_err(|e| parse_err(path, line, e.to_string()))?;
        let d = Detection {
            frame: row.frame,
            class: row.class,
            bbox: BBox::new(row.x, row.y, row.w, row.h),
            confidence: row.conf,
            embedding: None,
        };
        check(path, line, &d, &mut dim)?;
        out.push(d);
    }
    Ok(out)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn write_lines<T: Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = create(path)?;
    for item in items {
        let line = serde_json::to_string(&item).expect("records serialize");
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_lines<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let reader = BufReader::new(open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| parse_err(path, i + 1, e.to_string()))?);
    }
    Ok(out)
}

pub fn write_detections(frames: &[FrameDetections], path: impl AsRef<Path>) -> Result<()> {
    write_lines(path.as_ref(), frames.iter().flat_map(|f| f.detections.iter()))
}

#[derive(Serialize, Deserialize)]
struct Versioned<T> {
    schema: u32,
    #[serde(flatten)]
    record: T,
}

fn unversion<T>(path: &Path, items: Vec<Versioned<T>>) -> Result<Vec<T>> {
    items
        .into_iter()
        .enumerate()
        .map(|(i, v)| {
            if v.schema == SCHEMA_VERSION {
                Ok(v.record)
            } else {
                Err(parse_err(path, i + 1, format!("unsupported schema version {}", v.schema)))
            }
        })
        .collect()
}

/// Writes events sorted by start frame, then track ids.
pub fn write_events(events: &[NearAccidentEvent], path: impl AsRef<Path>) -> Result<()> {
    let mut sorted = events.to_vec();
    crate::nearmiss::sort_events(&mut sorted);
    write_lines(
        path.as_ref(),
        sorted.into_iter().map(|record| Versioned {
            schema: SCHEMA_VERSION,
            record,
        }),
    )
}

pub fn read_events(path: impl AsRef<Path>) -> Result<Vec<NearAccidentEvent>> {
    let path = path.as_ref();
    unversion(path, read_lines(path)?)
}

pub fn write_tracks(archive: &TrackArchive, path: impl AsRef<Path>) -> Result<()> {
    let mut tracks = archive.tracks.clone();
    tracks.sort_by_key(|t| t.id);
    write_lines(
        path.as_ref(),
        tracks.into_iter().map(|record| Versioned {
            schema: SCHEMA_VERSION,
            record,
        }),
    )
}

pub fn read_tracks(path: impl AsRef<Path>) -> Result<TrackArchive> {
    let path = path.as_ref();
    let mut tracks: Vec<TrackRecord> = unversion(path, read_lines(path)?)?;
    tracks.sort_by_key(|t| t.id);
    Ok(TrackArchive { tracks })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackerSection {
    pub mode: MotionMode,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_lost: Option<u32>,
    pub n_init: u32,
    pub n_budget: usize,
    pub min_confidence: f64,
}

impl Default for TrackerSection {
    fn default() -> Self {
        let t = TrackerConfig::default();
        TrackerSection {
            mode: t.mode,
            t_lost: t.t_lost,
            n_init: t.n_init,
            n_budget: t.n_budget,
            min_confidence: t.min_confidence,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    /// Localisation IoU for a true positive frame.
    pub iou_threshold: f64,
    /// IoU for matching tracks to ground-truth objects when counting switches.
    pub id_match_iou: f64,
    /// Events below this probability are not counted as predictions.
    pub min_probability: f64,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        EvaluationConfig {
            iou_threshold: 0.6,
            id_match_iou: 0.5,
            min_probability: 0.5,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IoPaths {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detections: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

/// Whole-run configuration, one section per subsystem.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub tracker: TrackerSection,
    pub assoc: AssocConfig,
    pub noise: NoiseConfig,
    pub nearmiss: NearMissConfig,
    pub evaluation: EvaluationConfig,
    pub io: IoPaths,
}

impl RunConfig {
    pub fn tracker_config(&self) -> TrackerConfig {
        TrackerConfig {
            mode: self.tracker.mode,
            t_lost: self.tracker.t_lost,
            n_init: self.tracker.n_init,
            n_budget: self.tracker.n_budget,
            min_confidence: self.tracker.min_confidence,
            assoc: self.assoc,
            noise: self.noise.clone(),
        }
    }

    pub fn with_mode(mut self, mode: MotionMode) -> Self {
        self.tracker.mode = mode;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.tracker_config().validate()?;
        self.nearmiss.validate()?;
        let e = &self.evaluation;
        for (name, v) in [
            ("evaluation.iou_threshold", e.iou_threshold),
            ("evaluation.id_match_iou", e.id_match_iou),
            ("evaluation.min_probability", e.min_probability),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidConfig(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    /// Reads and validates a configuration file; referenced input files must exist.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg = RunConfig::from_toml_str(&text).map_err(|e| match e {
            Error::InvalidConfig(m) => Error::InvalidConfig(format!("{}: {m}", path.display())),
            other => other,
        })?;
        if let Some(d) = &cfg.io.detections {
            if !d.exists() {
                return Err(Error::io(
                    d,
                    std::io::Error::new(std::io::ErrorKind::NotFound, "referenced detections file not found"),
                ));
            }
        }
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nearmiss::FrameRegion;

    fn write(dir: &tempfile::TempDir, name: &str, body: &str) -> PathBuf {
        let p = dir.path().join(name);
        let mut f = File::create(&p).unwrap();
        f.write_all(body.as_bytes()).unwrap();
        p
    }

    #[test]
    fn empty_file_has_no_frames() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "d.jsonl", "");
        assert!(load_detections(&p).unwrap().is_empty());
    }

    #[test]
    fn detections_group_by_frame() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            &dir,
            "d.jsonl",
            "{\"frame\":3,\"class\":\"car\",\"bbox\":[0,0,4,2],\"conf\":0.9}\n\
             {\"frame\":1,\"class\":\"bus\",\"bbox\":[1,1,4,2],\"conf\":0.5,\"emb\":[3,4]}\n\
             {\"frame\":3,\"class\":\"truck\",\"bbox\":[9,9,4,2],\"conf\":0.7}\n",
        );
        let frames = load_detections(&p).unwrap();
        assert_eq!(frames.len(), 2);
        assert_eq!(frames[0].frame, 1);
        assert_eq!(frames[1].detections.len(), 2);
        let e = frames[0].detections[0].embedding.as_ref().unwrap();
        assert_eq!(e.as_slice(), &[0.6, 0.8]);
    }

    #[test]
    fn out_of_range_confidence_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            &dir,
            "d.jsonl",
            "{\"frame\":1,\"class\":\"car\",\"bbox\":[0,0,4,2],\"conf\":0.9}\n\
             {\"frame\":1,\"class\":\"car\",\"bbox\":[0,0,4,2],\"conf\":1.5}\n",
        );
        match load_detections(&p) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn rejects_unknown_class_negative_fields_and_mixed_dims() {
        let dir = tempfile::tempdir().unwrap();
        let cases = [
            "{\"frame\":1,\"class\":\"tram\",\"bbox\":[0,0,4,2],\"conf\":0.9}\n",
            "{\"frame\":1,\"class\":\"car\",\"bbox\":[-1,0,4,2],\"conf\":0.9}\n",
            "{\"frame\":-1,\"class\":\"car\",\"bbox\":[0,0,4,2],\"conf\":0.9}\n",
            "{\"frame\":1,\"class\":\"car\",\"bbox\":[0,0,4,2],\"conf\":0.9,\"emb\":[1,0]}\n\
             {\"frame\":2,\"class\":\"car\",\"bbox\":[0,0,4,2],\"conf\":0.9,\"emb\":[1,0,0]}\n",
        ];
        for (i, body) in cases.iter().enumerate() {
            let p = write(&dir, &format!("bad{i}.jsonl"), body);
            assert!(matches!(load_detections(&p), Err(Error::Parse { .. })), "case {i}");
        }
    }

    #[test]
    fn csv_reader() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "d.csv", "frame,class,x,y,w,h,conf\n2,car,1,2,3,4,0.8\n2,motorcycle,5,5,2,2,0.4\n");
        let frames = load_detections(&p).unwrap();
        assert_eq!(frames.len(), 1);
        assert_eq!(frames[0].detections[1].class, ObjectClass::Motorcycle);
        let bad = write(&dir, "bad.csv", "frame,class,x,y,w,h,conf\n2,car,1,2,NaN,4,0.8\n");
        assert!(matches!(load_detections(&bad), Err(Error::Parse { line: 2, .. })));
    }

    fn event(s: u64, ids: Vec<u64>) -> NearAccidentEvent {
        let region = BBox::new(1.5, 2.25, 10.1, 3.3);
        NearAccidentEvent {
            frame_start: s,
            frame_end: s + 2,
            region,
            probability: 0.7,
            track_ids: ids,
            trace: vec![FrameRegion { frame: s, region, probability: 0.1 + 0.2 }],
        }
    }

    #[test]
    fn events_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.jsonl");
        let events = vec![event(5, vec![1, 2]), event(2, vec![3, 4]), event(5, vec![]) ];
        write_events(&events, &p).unwrap();
        let back = read_events(&p).unwrap();
        let mut sorted = events.clone();
        crate::nearmiss::sort_events(&mut sorted);
        assert_eq!(back, sorted);
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.lines().all(|l| l.starts_with("{\"schema\":1,")));

        let empty = dir.path().join("empty.jsonl");
        write_events(&[], &empty).unwrap();
        assert!(read_events(&empty).unwrap().is_empty());
    }

    #[test]
    fn write_to_missing_directory_fails_with_path() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("no/such/dir/e.jsonl");
        match write_events(&[], &p) {
            Err(Error::Io { path, .. }) => assert_eq!(path, p),
            other => panic!("expected io error, got {other:?}"),
        }
    }

    #[test]
    fn config_round_trips_through_text() {
        let mut cfg = RunConfig::default();
        cfg.tracker.t_lost = Some(7);
        cfg.nearmiss.tau_pixels_override = Some(12.5);
        let text = cfg.to_toml_string();
        assert!(text.contains("[tracker]"));
        assert_eq!(RunConfig::from_toml_str(&text).unwrap(), cfg);
        let default_text = RunConfig::default().to_toml_string();
        assert_eq!(RunConfig::from_toml_str(&default_text).unwrap(), RunConfig::default());
    }

    #[test]
    fn config_validation_and_partial_files() {
        let cfg = RunConfig::from_toml_str("[tracker]\nmode = \"sort\"\n").unwrap();
        assert_eq!(cfg.tracker_config().t_lost(), 1);
        assert!(RunConfig::from_toml_str("[assoc]\nlambda = 2.0\n").is_err());
        assert!(RunConfig::from_toml_str("[nearmiss]\nwindow = 1\n").is_err());
        assert!(RunConfig::from_toml_str("[bogus]\nx = 1\n").is_err());
    }

    #[test]
    fn config_with_missing_detections_file_fails() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "c.toml", "[io]\ndetections = \"/no/such/file.jsonl\"\n");
        assert!(matches!(RunConfig::load(&p), Err(Error::Io { .. })));
    }
}
