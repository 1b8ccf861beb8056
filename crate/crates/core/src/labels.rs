//! Condition-tagged frames and sequences, weather subsets, and the JSON-lines
//! label format.
//!
//! File layout: one header line `{"format":"autolabel-kit","version":1,...}`
//! followed by one frame per line:
//!
//! ```text
//! {"seq":"seq_0000","idx":0,"weather":"normal","road":"urban",
//!  "objects":[{"cls":"Sedan","conf":0.91,"box":[cx,cy,cz,l,w,h,yaw]}]}
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Box3D, GeometryError};

pub const FORMAT_NAME: &str = "autolabel-kit";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum LabelError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: malformed record: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: invalid field `{field}`: {message}")]
    InvalidField {
        line: usize,
        field: String,
        message: String,
    },
    #[error("invalid object: {0}")]
    InvalidObject(String),
    #[error("sequence `{sequence}` has duplicate frame index {index}")]
    DuplicateFrame { sequence: String, index: u64 },
}

/// Capture-time weather tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeatherCondition {
    Normal,
    Overcast,
    Fog,
    Rain,
    Sleet,
    LightSnow,
    HeavySnow,
}

impl WeatherCondition {
    pub const ALL: [WeatherCondition; 7] = [
        WeatherCondition::Normal,
        WeatherCondition::Overcast,
        WeatherCondition::Fog,
        WeatherCondition::Rain,
        WeatherCondition::Sleet,
        WeatherCondition::LightSnow,
        WeatherCondition::HeavySnow,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            WeatherCondition::Normal => "normal",
            WeatherCondition::Overcast => "overcast",
            WeatherCondition::Fog => "fog",
            WeatherCondition::Rain => "rain",
            WeatherCondition::Sleet => "sleet",
            WeatherCondition::LightSnow => "light_snow",
            WeatherCondition::HeavySnow => "heavy_snow",
        }
    }
}

impl fmt::Display for WeatherCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for WeatherCondition {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|w| w.as_str() == s)
            .ok_or_else(|| format!("unknown weather condition `{s}`"))
    }
}

/// Road environment tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoadType {
    Urban,
    Highway,
    Alleyway,
    University,
    Suburban,
    Mountain,
    ParkingLot,
}

impl RoadType {
    pub const ALL: [RoadType; 7] = [
        RoadType::Urban,
        RoadType::Highway,
        RoadType::Alleyway,
        RoadType::University,
        RoadType::Suburban,
        RoadType::Mountain,
        RoadType::ParkingLot,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            RoadType::Urban => "urban",
            RoadType::Highway => "highway",
            RoadType::Alleyway => "alleyway",
            RoadType::University => "university",
            RoadType::Suburban => "suburban",
            RoadType::Mountain => "mountain",
            RoadType::ParkingLot => "parking_lot",
        }
    }
}

impl fmt::Display for RoadType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RoadType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| format!("unknown road type `{s}`"))
    }
}

/// One labeled object: a handmade label (no confidence) or a detection /
/// auto-label (with confidence).
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectLabel {
    pub class_name: String,
    pub bbox: Box3D,
    pub confidence: Option<f64>,
    pub object_id: Option<String>,
}

impl ObjectLabel {
    pub fn new(class_name: impl Into<String>, bbox: Box3D, confidence: Option<f64>) -> Result<Self, LabelError> {
        let label = Self {
            class_name: class_name.into(),
            bbox,
            confidence,
            object_id: None,
        };
        label.validate()?;
        Ok(label)
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.object_id = Some(id.into());
        self
    }

    pub fn validate(&self) -> Result<(), LabelError> {
        if self.class_name.is_empty() {
            return Err(LabelError::InvalidObject("empty class name".into()));
        }
        if let Some(c) = self.confidence {
            if !(0.0..=1.0).contains(&c) {
                return Err(LabelError::InvalidObject(format!("confidence {c} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub frame_index: u64,
    pub sequence_id: String,
    pub weather: WeatherCondition,
    pub road: RoadType,
    pub objects: Vec<ObjectLabel>,
}

impl Frame {
    pub fn new(sequence_id: impl Into<String>, frame_index: u64, weather: WeatherCondition, road: RoadType) -> Self {
        Self {
            frame_index,
            sequence_id: sequence_id.into(),
            weather,
            road,
            objects: Vec::new(),
        }
    }

    pub fn with_objects(mut self, objects: Vec<ObjectLabel>) -> Self {
        self.objects = objects;
        self
    }

    /// Copy with the same tags and no objects.
    pub fn empty_like(&self) -> Self {
        Self {
            frame_index: self.frame_index,
            sequence_id: self.sequence_id.clone(),
            weather: self.weather,
            road: self.road,
            objects: Vec::new(),
        }
    }

    pub fn key(&self) -> FrameKey {
        FrameKey {
            sequence_id: self.sequence_id.clone(),
            frame_index: self.frame_index,
        }
    }
}

/// `(sequence_id, frame_index)`, ordered the way datasets iterate.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FrameKey {
    pub sequence_id: String,
    pub frame_index: u64,
}

impl fmt::Display for FrameKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}#{}", self.sequence_id, self.frame_index)
    }
}

/// Sequences of frames keyed by sequence id.
///
/// Frames inside a sequence are strictly increasing in `frame_index` and no
/// sequence is empty; operations that drop frames also drop sequences they
/// empty out.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub split_name: String,
    sequences: BTreeMap<String, Vec<Frame>>,
}

impl Dataset {
    pub fn new(split_name: impl Into<String>) -> Self {
        Self {
            split_name: split_name.into(),
            sequences: BTreeMap::new(),
        }
    }

    /// Groups frames by sequence and sorts them by index.
    pub fn from_frames(
        split_name: impl Into<String>,
        frames: impl IntoIterator<Item = Frame>,
    ) -> Result<Self, LabelError> {
        let mut sequences: BTreeMap<String, Vec<Frame>> = BTreeMap::new();
        for frame in frames {
            sequences.entry(frame.sequence_id.clone()).or_default().push(frame);
        }
        for (id, frames) in sequences.iter_mut() {
            frames.sort_by_key(|f| f.frame_index);
            if let Some(w) = frames.windows(2).find(|w| w[0].frame_index == w[1].frame_index) {
                return Err(LabelError::DuplicateFrame {
                    sequence: id.clone(),
                    index: w[0].frame_index,
                });
            }
        }
        Ok(Self {
            split_name: split_name.into(),
            sequences,
        })
    }

    /// Replaces or inserts one sequence. Frames must already share
    /// `sequence_id` and be strictly increasing; an empty list removes it.
    pub fn set_sequence(&mut self, id: impl Into<String>, frames: Vec<Frame>) {
        let id = id.into();
        debug_assert!(frames.windows(2).all(|w| w[0].frame_index < w[1].frame_index));
        if frames.is_empty() {
            self.sequences.remove(&id);
        } else {
            self.sequences.insert(id, frames);
        }
    }

    pub fn sequences(&self) -> &BTreeMap<String, Vec<Frame>> {
        &self.sequences
    }

    pub fn sequence(&self, id: &str) -> Option<&[Frame]> {
        self.sequences.get(id).map(Vec::as_slice)
    }

    pub fn into_frames(self) -> impl Iterator<Item = Frame> {
        self.sequences.into_values().flatten()
    }

    /// All frames ordered by `(sequence_id, frame_index)`.
    pub fn frames(&self) -> impl Iterator<Item = &Frame> {
        self.sequences.values().flatten()
    }

    pub fn frames_mut(&mut self) -> impl Iterator<Item = &mut Frame> {
        self.sequences.values_mut().flatten()
    }

    pub fn frame(&self, key: &FrameKey) -> Option<&Frame> {
        let seq = self.sequences.get(&key.sequence_id)?;
        seq.binary_search_by_key(&key.frame_index, |f| f.frame_index)
            .ok()
            .map(|i| &seq[i])
    }

    pub fn frame_keys(&self) -> BTreeSet<FrameKey> {
        self.frames().map(Frame::key).collect()
    }

    pub fn num_frames(&self) -> usize {
        self.sequences.values().map(Vec::len).sum()
    }

    pub fn num_objects(&self) -> usize {
        self.frames().map(|f| f.objects.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    /// Keeps frames for which `keep` holds, dropping emptied sequences.
    pub fn retain_frames(&self, mut keep: impl FnMut(&Frame) -> bool) -> Dataset {
        let mut out = Dataset::new(self.split_name.clone());
        for (id, frames) in &self.sequences {
            let kept: Vec<Frame> = frames.iter().filter(|f| keep(f)).cloned().collect();
            out.set_sequence(id.clone(), kept);
        }
        out
    }

    /// Applies `f` to every frame, keeping structure.
    pub fn map_frames(&self, mut f: impl FnMut(&Frame) -> Frame) -> Dataset {
        let mut out = Dataset::new(self.split_name.clone());
        for (id, frames) in &self.sequences {
            out.set_sequence(id.clone(), frames.iter().map(&mut f).collect());
        }
        out
    }
}

/// Named weather subset used to train on a restricted slice of the data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SubsetSpec {
    /// Normal and overcast.
    #[serde(rename = "NO")]
    No,
    /// Normal, overcast, fog, rain and light snow.
    #[serde(rename = "NOFRL")]
    Nofrl,
    /// Every condition.
    #[serde(rename = "ALL")]
    All,
}

impl SubsetSpec {
    pub fn name(&self) -> &'static str {
        match self {
            SubsetSpec::No => "NO",
            SubsetSpec::Nofrl => "NOFRL",
            SubsetSpec::All => "ALL",
        }
    }

    pub fn weathers(&self) -> BTreeSet<WeatherCondition> {
        use WeatherCondition::*;
        match self {
            SubsetSpec::No => [Normal, Overcast].into(),
            SubsetSpec::Nofrl => [Normal, Overcast, Fog, Rain, LightSnow].into(),
            SubsetSpec::All => WeatherCondition::ALL.into(),
        }
    }

    pub fn contains(&self, w: WeatherCondition) -> bool {
        self.weathers().contains(&w)
    }
}

impl fmt::Display for SubsetSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SubsetSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "NO" => Ok(SubsetSpec::No),
            "NOFRL" => Ok(SubsetSpec::Nofrl),
            "ALL" => Ok(SubsetSpec::All),
            other => Err(format!("unknown subset `{other}` (expected NO, NOFRL or ALL)")),
        }
    }
}

/// Frames whose weather belongs to the subset.
pub fn filter_by_subset(d: &Dataset, s: SubsetSpec) -> Dataset {
    let weathers = s.weathers();
    d.retain_frames(|f| weathers.contains(&f.weather))
}

/// Partitions the dataset by frame weather. Conditions without frames are
/// absent from the map.
pub fn group_by_weather(d: &Dataset) -> BTreeMap<WeatherCondition, Dataset> {
    let present: BTreeSet<WeatherCondition> = d.frames().map(|f| f.weather).collect();
    present
        .into_iter()
        .map(|w| (w, d.retain_frames(|f| f.weather == w)))
        .collect()
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HeaderRecord {
    format: String,
    version: u32,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    split: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FrameRecord {
    seq: String,
    idx: u64,
    weather: String,
    road: String,
    objects: Vec<ObjectRecord>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ObjectRecord {
    cls: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    conf: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    id: Option<String>,
    #[serde(rename = "box")]
    bbox: [f64; 7],
}

impl FrameRecord {
    fn from_frame(f: &Frame) -> Self {
        Self {
            seq: f.sequence_id.clone(),
            idx: f.frame_index,
            weather: f.weather.as_str().to_owned(),
            road: f.road.as_str().to_owned(),
            objects: f
                .objects
                .iter()
                .map(|o| ObjectRecord {
                    cls: o.class_name.clone(),
                    conf: o.confidence,
                    id: o.object_id.clone(),
                    bbox: o.bbox.to_array(),
                })
                .collect(),
        }
    }

    fn into_frame(self, line: usize) -> Result<Frame, LabelError> {
        let invalid = |field: String, message: String| LabelError::InvalidField { line, field, message };
        let weather = self.weather.parse().map_err(|m| invalid("weather".into(), m))?;
        let road = self.road.parse().map_err(|m| invalid("road".into(), m))?;
        if self.seq.is_empty() {
            return Err(invalid("seq".into(), "empty sequence id".into()));
        }
        let mut objects = Vec::with_capacity(self.objects.len());
        for (i, o) in self.objects.into_iter().enumerate() {
            let bbox = Box3D::from_array(o.bbox)
                .map_err(|e: GeometryError| invalid(format!("objects[{i}].box"), e.to_string()))?;
            if o.cls.is_empty() {
                return Err(invalid(format!("objects[{i}].cls"), "empty class name".into()));
            }
            if let Some(c) = o.conf {
                if !(0.0..=1.0).contains(&c) {
                    return Err(invalid(format!("objects[{i}].conf"), format!("{c} outside [0, 1]")));
                }
            }
            objects.push(ObjectLabel {
                class_name: o.cls,
                bbox,
                confidence: o.conf,
                object_id: o.id,
            });
        }
        Ok(Frame {
            frame_index: self.idx,
            sequence_id: self.seq,
            weather,
            road,
            objects,
        })
    }
}

/// Serializes the dataset in the JSON-lines label format.
///
/// Floats are written in shortest round-trip decimal form, so
/// `read_dataset(write_dataset(d)) == d` bit-for-bit.
pub fn write_dataset<W: Write>(d: &Dataset, mut w: W) -> std::io::Result<()> {
    let header = HeaderRecord {
        format: FORMAT_NAME.into(),
        version: FORMAT_VERSION,
        split: d.split_name.clone(),
    };
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    for frame in d.frames() {
        serde_json::to_writer(&mut w, &FrameRecord::from_frame(frame))?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

pub fn read_dataset<R: BufRead>(r: R) -> Result<Dataset, LabelError> {
    let mut lines = r.lines().enumerate();
    let io_err = |source| LabelError::Io {
        path: "<reader>".into(),
        source,
    };

    let header: HeaderRecord = loop {
        match lines.next() {
            None => {
                return Err(LabelError::Malformed {
                    line: 1,
                    message: "missing header line".into(),
                })
            }
            Some((i, line)) => {
                let line = line.map_err(io_err)?;
                if line.trim().is_empty() {
                    continue;
                }
                break serde_json::from_str(&line).map_err(|e| LabelError::Malformed {
                    line: i + 1,
                    message: format!("bad header: {e}"),
                })?;
            }
        }
    };
    if header.format != FORMAT_NAME || header.version != FORMAT_VERSION {
        return Err(LabelError::Malformed {
            line: 1,
            message: format!(
                "unsupported format {:?} version {} (expected {FORMAT_NAME:?} version {FORMAT_VERSION})",
                header.format, header.version
            ),
        });
    }

    let mut frames = Vec::new();
    for (i, line) in lines {
        let line = line.map_err(io_err)?;
        if line.trim().is_empty() {
            continue;
        }
        let record: FrameRecord = serde_json::from_str(&line).map_err(|e| LabelError::Malformed {
            line: i + 1,
            message: e.to_string(),
        })?;
        frames.push(record.into_frame(i + 1)?);
    }
    Dataset::from_frames(header.split, frames)
}

pub fn save_dataset(d: &Dataset, path: impl AsRef<Path>) -> Result<(), LabelError> {
    let path = path.as_ref();
    let io_err = |source| LabelError::Io {
        path: path.display().to_string(),
        source,
    };
    let file = File::create(path).map_err(io_err)?;
    write_dataset(d, BufWriter::new(file)).map_err(io_err)
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset, LabelError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| LabelError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_dataset(BufReader::new(file)).map_err(|e| match e {
        LabelError::Io { source, .. } => LabelError::Io {
            path: path.display().to_string(),
            source,
        },
        other => other,
    })
}
