//! Trace data model, ingestion, synthetic corpora and split plans.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::de::{self, SeqAccess, Visitor};
use serde::ser::SerializeSeq;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::par::{self, ExecMode};

/// Label reserved for unmonitored traffic.
pub const BACKGROUND: &str = "background";

/// Size assumed for events read from files that carry no size column.
pub const TOR_CELL_SIZE: u32 = 512;

/// Key that marks a JSONL line as a file header rather than a record.
pub const JSONL_HEADER_KEY: &str = "wfkit_header";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Direction {
    Outgoing,
    Incoming,
}

impl Direction {
    pub fn sign(self) -> i8 {
        match self {
            Direction::Outgoing => 1,
            Direction::Incoming => -1,
        }
    }

    pub fn from_sign(sign: i64) -> Option<Self> {
        match sign {
            1 => Some(Direction::Outgoing),
            -1 => Some(Direction::Incoming),
            _ => None,
        }
    }

    pub fn flip(self) -> Self {
        match self {
            Direction::Outgoing => Direction::Incoming,
            Direction::Incoming => Direction::Outgoing,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceEvent {
    pub time: f64,
    pub direction: Direction,
    pub size: u32,
    /// Set on padding introduced by a defense.
    pub dummy: bool,
}

impl TraceEvent {
    pub fn new(time: f64, direction: Direction, size: u32) -> Self {
        TraceEvent {
            time,
            direction,
            size,
            dummy: false,
        }
    }

    pub fn dummy(time: f64, direction: Direction, size: u32) -> Self {
        TraceEvent {
            time,
            direction,
            size,
            dummy: true,
        }
    }
}

// On disk an event is `[time, direction, size]`, with a trailing `1` for dummies.
impl Serialize for TraceEvent {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut seq = s.serialize_seq(Some(if self.dummy { 4 } else { 3 }))?;
        seq.serialize_element(&self.time)?;
        seq.serialize_element(&self.direction.sign())?;
        seq.serialize_element(&self.size)?;
        if self.dummy {
            seq.serialize_element(&1u8)?;
        }
        seq.end()
    }
}

impl<'de> Deserialize<'de> for TraceEvent {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct EventVisitor;

        impl<'de> Visitor<'de> for EventVisitor {
            type Value = TraceEvent;

            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("an array [time, direction, size] or [time, direction, size, dummy]")
            }

            fn visit_seq<A: SeqAccess<'de>>(self, mut seq: A) -> std::result::Result<TraceEvent, A::Error> {
                let time: f64 = seq
                    .next_element()?
                    .ok_or_else(|| de::Error::invalid_length(0, &self))?;
                let dir: f64 = seq
                    .next_element()?
                    .ok_or_else(|| de::Error::invalid_length(1, &self))?;
                let size: u32 = seq
                    .next_element()?
                    .ok_or_else(|| de::Error::invalid_length(2, &self))?;
                let dummy: Option<u8> = seq.next_element()?;
                if !time.is_finite() || time < 0.0 {
                    return Err(de::Error::custom(format!("invalid event time {time}")));
                }
                let direction = if dir == 1.0 {
                    Direction::Outgoing
                } else if dir == -1.0 {
                    Direction::Incoming
                } else {
                    return Err(de::Error::custom(format!("direction must be 1 or -1, got {dir}")));
                };
                Ok(TraceEvent {
                    time,
                    direction,
                    size,
                    dummy: dummy.unwrap_or(0) != 0,
                })
            }
        }

        d.deserialize_seq(EventVisitor)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TraceMeta {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub capture_bytes: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub html_bytes: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration_seconds: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub label: String,
    pub events: Vec<TraceEvent>,
    #[serde(default)]
    pub meta: TraceMeta,
}

impl TraceRecord {
    pub fn new(label: impl Into<String>, events: Vec<TraceEvent>) -> Self {
        TraceRecord {
            label: label.into(),
            events,
            meta: TraceMeta::default(),
        }
    }

    pub fn is_background(&self) -> bool {
        self.label == BACKGROUND
    }

    pub fn total_bytes(&self) -> u64 {
        self.events.iter().map(|e| e.size as u64).sum()
    }

    /// Check the record invariants: non-empty, sorted times, positive sizes,
    /// and a duration that covers the last event.
    pub fn validate(&self) -> Result<()> {
        if self.events.is_empty() {
            return Err(Error::EmptyTrace(self.label.clone()));
        }
        for (i, pair) in self.events.windows(2).enumerate() {
            if pair[1].time < pair[0].time {
                return Err(Error::invalid(format!(
                    "record '{}': event {} time {} precedes previous time {}",
                    self.label,
                    i + 1,
                    pair[1].time,
                    pair[0].time
                )));
            }
        }
        if let Some(e) = self.events.iter().find(|e| e.size == 0) {
            return Err(Error::invalid(format!(
                "record '{}': zero-size event at t={}",
                self.label, e.time
            )));
        }
        if let Some(d) = self.meta.duration_seconds {
            let last = self.events.last().map(|e| e.time).unwrap_or(0.0);
            if d < last {
                return Err(Error::invalid(format!(
                    "record '{}': duration {d} shorter than last event time {last}",
                    self.label
                )));
            }
        }
        Ok(())
    }
}

/// A labelled collection of traces with a dense class numbering.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub records: Vec<TraceRecord>,
    classes: Vec<String>,
    class_index: HashMap<String, usize>,
}

impl Dataset {
    /// Ordinals follow first appearance; `background` is always last.
    pub fn from_records(records: Vec<TraceRecord>) -> Self {
        let mut classes: Vec<String> = Vec::new();
        let mut seen = HashMap::new();
        let mut has_background = false;
        for r in &records {
            if r.is_background() {
                has_background = true;
                continue;
            }
            if !seen.contains_key(&r.label) {
                seen.insert(r.label.clone(), classes.len());
                classes.push(r.label.clone());
            }
        }
        if has_background {
            seen.insert(BACKGROUND.to_string(), classes.len());
            classes.push(BACKGROUND.to_string());
        }
        Dataset {
            records,
            classes,
            class_index: seen,
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    /// Class labels indexed by ordinal.
    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn ordinal(&self, label: &str) -> Option<usize> {
        self.class_index.get(label).copied()
    }

    pub fn background_ordinal(&self) -> Option<usize> {
        self.ordinal(BACKGROUND)
    }

    pub fn has_background(&self) -> bool {
        self.background_ordinal().is_some()
    }

    /// Ordinal of every record, in record order.
    pub fn labels(&self) -> Vec<usize> {
        self.records.iter().map(|r| self.class_index[&r.label]).collect()
    }

    /// Record indices grouped by ordinal.
    pub fn indices_by_class(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.classes.len()];
        for (i, r) in self.records.iter().enumerate() {
            out[self.class_index[&r.label]].push(i);
        }
        out
    }

    pub fn class_index(&self) -> BTreeMap<&str, usize> {
        self.class_index.iter().map(|(k, v)| (k.as_str(), *v)).collect()
    }
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

/// Read a single-instance cell file of `time direction [size]` lines.
pub fn ingest_cell_file(path: impl AsRef<Path>, label: &str) -> Result<TraceRecord> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    parse_cell_text(&text, path, label)
}

pub fn parse_cell_text(text: &str, path: &Path, label: &str) -> Result<TraceRecord> {
    let mut events = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 2 && fields.len() != 3 {
            return Err(parse_err(
                path,
                lineno,
                format!("expected 'time direction [size]', got {} fields", fields.len()),
            ));
        }
        let time: f64 = fields[0]
            .parse()
            .map_err(|_| parse_err(path, lineno, format!("bad time '{}'", fields[0])))?;
        if !time.is_finite() || time < 0.0 {
            return Err(parse_err(path, lineno, format!("time must be non-negative, got {time}")));
        }
        let sign: f64 = fields[1]
            .parse()
            .map_err(|_| parse_err(path, lineno, format!("bad direction '{}'", fields[1])))?;
        let direction = if sign == 1.0 {
            Direction::Outgoing
        } else if sign == -1.0 {
            Direction::Incoming
        } else {
            return Err(parse_err(path, lineno, format!("direction must be +1 or -1, got {}", fields[1])));
        };
        let size = match fields.get(2) {
            Some(s) => {
                let v: u32 = s
                    .parse()
                    .map_err(|_| parse_err(path, lineno, format!("bad size '{s}'")))?;
                if v == 0 {
                    return Err(parse_err(path, lineno, "size must be positive"));
                }
                v
            }
            None => TOR_CELL_SIZE,
        };
        if let Some(prev) = events.last().map(|e: &TraceEvent| e.time) {
            if time < prev {
                return Err(parse_err(path, lineno, format!("time {time} precedes previous {prev}")));
            }
        }
        events.push(TraceEvent::new(time, direction, size));
    }
    if events.is_empty() {
        return Err(Error::EmptyTrace(path.display().to_string()));
    }
    Ok(TraceRecord::new(label, events))
}

/// Ingest many cell files; records come back in the order given.
pub fn ingest_cell_files(files: &[(PathBuf, String)], mode: ExecMode) -> Result<Dataset> {
    let records = par::try_map_indexed(mode, files.len(), |i| ingest_cell_file(&files[i].0, &files[i].1))?;
    Ok(Dataset::from_records(records))
}

pub fn read_jsonl(reader: impl BufRead, path: &Path) -> Result<Dataset> {
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value =
            serde_json::from_str(&line).map_err(|e| parse_err(path, i + 1, e.to_string()))?;
        if value.get(JSONL_HEADER_KEY).is_some() {
            continue;
        }
        let record: TraceRecord =
            serde_json::from_value(value).map_err(|e| parse_err(path, i + 1, e.to_string()))?;
        records.push(record);
    }
    Ok(Dataset::from_records(records))
}

pub fn ingest_jsonl(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = fs::File::open(path)?;
    read_jsonl(BufReader::new(file), path)
}

/// Write one record per line, optionally preceded by a header object.
pub fn write_jsonl(dataset: &Dataset, mut w: impl Write, header: Option<&serde_json::Value>) -> Result<()> {
    if let Some(h) = header {
        let mut obj = serde_json::Map::new();
        obj.insert(JSONL_HEADER_KEY.to_string(), h.clone());
        serde_json::to_writer(&mut w, &obj)?;
        w.write_all(b"\n")?;
    }
    for r in &dataset.records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub n_classes: usize,
    pub n_instances: usize,
    pub n_background: usize,
    pub trace_len_mean: usize,
    pub noise_rate: f64,
    /// Draw per-event sizes instead of fixed Tor cells.
    pub variable_sizes: bool,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            n_classes: 20,
            n_instances: 90,
            n_background: 0,
            trace_len_mean: 300,
            noise_rate: 0.05,
            variable_sizes: false,
        }
    }
}

/// Random burst-structured trace used as a class prototype.
fn prototype(rng: &mut ChaCha8Rng, len_mean: usize, variable_sizes: bool) -> Vec<TraceEvent> {
    let lo = (len_mean as f64 * 0.8).max(1.0) as usize;
    let hi = ((len_mean as f64 * 1.2) as usize).max(lo + 1);
    let len = rng.random_range(lo..hi);
    let mut events = Vec::with_capacity(len);
    let mut dir = Direction::Outgoing;
    let mut t = 0.0f64;
    while events.len() < len {
        let burst = match dir {
            Direction::Outgoing => rng.random_range(1..=6),
            Direction::Incoming => rng.random_range(1..=24),
        };
        for _ in 0..burst {
            if events.len() == len {
                break;
            }
            let size = if variable_sizes {
                rng.random_range(64..=1500)
            } else {
                TOR_CELL_SIZE
            };
            events.push(TraceEvent::new(t, dir, size));
            t += rng.random_range(0.001..0.02);
        }
        dir = dir.flip();
    }
    events
}

/// Apply flip/insert/delete noise at `rate` per event. Returns the perturbed
/// events and how many source events were perturbed.
pub fn perturb_events(source: &[TraceEvent], rate: f64, rng: &mut impl Rng) -> (Vec<TraceEvent>, usize) {
    let mut out = Vec::with_capacity(source.len() + source.len() / 8);
    let mut perturbed = 0;
    for e in source {
        if rate > 0.0 && rng.random::<f64>() < rate {
            perturbed += 1;
            match rng.random_range(0..3u8) {
                0 => out.push(TraceEvent {
                    direction: e.direction.flip(),
                    ..*e
                }),
                1 => {
                    out.push(*e);
                    let dir = if rng.random::<bool>() {
                        Direction::Outgoing
                    } else {
                        Direction::Incoming
                    };
                    out.push(TraceEvent::new(e.time, dir, e.size));
                }
                _ => {}
            }
        } else {
            out.push(*e);
        }
    }
    if out.is_empty() {
        out.push(source[0]);
    }
    (out, perturbed)
}

fn finish_record(label: String, events: Vec<TraceEvent>) -> TraceRecord {
    let mut r = TraceRecord::new(label, events);
    r.meta.duration_seconds = r.events.last().map(|e| e.time);
    r.meta.capture_bytes = Some(r.total_bytes() as f64);
    r
}

/// Class prototypes for a synthetic configuration, in class order.
pub fn synthetic_prototypes(config: &SyntheticConfig, seed: u64) -> Vec<Vec<TraceEvent>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..config.n_classes)
        .map(|_| prototype(&mut rng, config.trace_len_mean, config.variable_sizes))
        .collect()
}

/// Deterministic synthetic corpus: per-class prototypes plus noisy instances.
pub fn generate_synthetic(config: &SyntheticConfig, seed: u64) -> Result<Dataset> {
    if config.n_classes < 2 {
        return Err(Error::invalid("n_classes must be at least 2"));
    }
    if !(0.0..1.0).contains(&config.noise_rate) {
        return Err(Error::invalid("noise_rate must lie in [0, 1)"));
    }
    if config.trace_len_mean == 0 {
        return Err(Error::invalid("trace_len_mean must be positive"));
    }
    let protos = synthetic_prototypes(config, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9E37_79B9_7F4A_7C15);
    let mut records = Vec::with_capacity(config.n_classes * config.n_instances + config.n_background);
    for (c, proto) in protos.iter().enumerate() {
        for _ in 0..config.n_instances {
            let (events, _) = perturb_events(proto, config.noise_rate, &mut rng);
            records.push(finish_record(format!("site{c:03}"), events));
        }
    }
    for _ in 0..config.n_background {
        let proto = prototype(&mut rng, config.trace_len_mean, config.variable_sizes);
        let (events, _) = perturb_events(&proto, config.noise_rate, &mut rng);
        records.push(finish_record(BACKGROUND.to_string(), events));
    }
    Ok(Dataset::from_records(records))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub iterations: Vec<Split>,
    pub ratio: f64,
    pub seed: u64,
}

/// Build `n_iters` random train/test splits with equal per-class counts for
/// monitored classes and the same ratio applied to background instances.
pub fn split_iterations(dataset: &Dataset, ratio: f64, n_iters: usize, seed: u64) -> Result<SplitPlan> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::invalid(format!("split ratio must lie in (0, 1), got {ratio}")));
    }
    if n_iters == 0 {
        return Err(Error::invalid("n_iters must be positive"));
    }
    let by_class = dataset.indices_by_class();
    let bg = dataset.background_ordinal();
    let monitored: Vec<&Vec<usize>> = by_class
        .iter()
        .enumerate()
        .filter(|(c, _)| Some(*c) != bg)
        .map(|(_, v)| v)
        .collect();
    if let Some((c, v)) = by_class
        .iter()
        .enumerate()
        .find(|(c, v)| Some(*c) != bg && v.len() < 2)
    {
        return Err(Error::invalid(format!(
            "class '{}' has {} instance(s); at least 2 are needed to split",
            dataset.classes()[c],
            v.len()
        )));
    }
    let per_class = monitored.iter().map(|v| v.len()).min().unwrap_or(0);
    let n_train = ((ratio * per_class as f64 + 1e-9).floor() as usize).clamp(1, per_class.saturating_sub(1).max(1));
    let n_test = per_class - n_train;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut iterations = Vec::with_capacity(n_iters);
    for _ in 0..n_iters {
        let mut train = Vec::new();
        let mut test = Vec::new();
        for (c, idx) in by_class.iter().enumerate() {
            let mut shuffled = idx.clone();
            shuffled.shuffle(&mut rng);
            if Some(c) == bg {
                let k = (ratio * shuffled.len() as f64 + 1e-9).floor() as usize;
                train.extend_from_slice(&shuffled[..k]);
                test.extend_from_slice(&shuffled[k..]);
            } else {
                train.extend_from_slice(&shuffled[..n_train]);
                test.extend_from_slice(&shuffled[n_train..n_train + n_test]);
            }
        }
        train.sort_unstable();
        test.sort_unstable();
        iterations.push(Split { train, test });
    }
    Ok(SplitPlan {
        iterations,
        ratio,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn p() -> PathBuf {
        PathBuf::from("mem")
    }

    #[test]
    fn cell_lines_map_to_events() {
        let r = parse_cell_text("0.0 1\n0.2 -1", &p(), "a").unwrap();
        assert_eq!(
            r.events,
            vec![
                TraceEvent::new(0.0, Direction::Outgoing, 512),
                TraceEvent::new(0.2, Direction::Incoming, 512)
            ]
        );
    }

    #[test]
    fn cell_direction_out_of_domain() {
        match parse_cell_text("0.0 1\n0.0 2\n", &p(), "a") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn cell_optional_size_and_errors() {
        let r = parse_cell_text("0 1 100\n0.5 -1 1400\n", &p(), "a").unwrap();
        assert_eq!(r.events[1].size, 1400);
        assert!(matches!(parse_cell_text("", &p(), "a"), Err(Error::EmptyTrace(_))));
        assert!(matches!(parse_cell_text("0 1 2 3", &p(), "a"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(parse_cell_text("1 1\n0.5 1", &p(), "a"), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(parse_cell_text("x 1", &p(), "a"), Err(Error::Parse { .. })));
    }

    #[test]
    fn jsonl_ordinals_background_last() {
        let text = r#"{"label":"background","events":[[0,1,512]]}
{"label":"a","events":[[0,1,512],[0.1,-1,512]]}
{"label":"a","events":[[0,-1,512]]}
"#;
        let ds = read_jsonl(text.as_bytes(), &p()).unwrap();
        assert_eq!(ds.ordinal("a"), Some(0));
        assert_eq!(ds.ordinal("background"), Some(1));
        assert_eq!(ds.n_classes(), 2);
        assert_eq!(ds.len(), 3);
    }

    #[test]
    fn jsonl_bad_line_reports_number() {
        let text = "{\"label\":\"a\",\"events\":[[0,1,512]]}\n{oops\n";
        match read_jsonl(text.as_bytes(), &p()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        let text = "{\"label\":\"a\",\"events\":[[0,3,512]]}\n";
        assert!(matches!(read_jsonl(text.as_bytes(), &p()), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn jsonl_header_skipped_and_dummy_flag_kept() {
        let mut ds = generate_synthetic(
            &SyntheticConfig {
                n_classes: 2,
                n_instances: 2,
                trace_len_mean: 10,
                ..Default::default()
            },
            1,
        )
        .unwrap();
        ds.records[0].events[0].dummy = true;
        let mut buf = Vec::new();
        write_jsonl(&ds, &mut buf, Some(&serde_json::json!({"seed": 1}))).unwrap();
        let back = read_jsonl(&buf[..], &p()).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn zero_noise_reproduces_prototype() {
        let cfg = SyntheticConfig {
            n_classes: 3,
            n_instances: 4,
            noise_rate: 0.0,
            trace_len_mean: 50,
            ..Default::default()
        };
        let ds = generate_synthetic(&cfg, 9).unwrap();
        let protos = synthetic_prototypes(&cfg, 9);
        for r in &ds.records {
            let c = ds.ordinal(&r.label).unwrap();
            assert_eq!(r.events, protos[c]);
        }
    }

    #[test]
    fn generator_deterministic_and_validated() {
        let cfg = SyntheticConfig {
            n_classes: 4,
            n_instances: 5,
            n_background: 7,
            ..Default::default()
        };
        let a = generate_synthetic(&cfg, 3).unwrap();
        let b = generate_synthetic(&cfg, 3).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, generate_synthetic(&cfg, 4).unwrap());
        assert!(a.records.iter().all(|r| r.validate().is_ok()));
        assert_eq!(a.background_ordinal(), Some(4));
        let bad = SyntheticConfig {
            n_classes: 1,
            ..Default::default()
        };
        assert!(generate_synthetic(&bad, 0).is_err());
        let bad = SyntheticConfig {
            noise_rate: 1.0,
            ..Default::default()
        };
        assert!(generate_synthetic(&bad, 0).is_err());
    }

    #[test]
    fn split_counts_and_union() {
        let cfg = SyntheticConfig {
            n_classes: 3,
            n_instances: 90,
            n_background: 50,
            trace_len_mean: 5,
            ..Default::default()
        };
        let ds = generate_synthetic(&cfg, 1).unwrap();
        let plan = split_iterations(&ds, 0.6, 20, 11).unwrap();
        assert_eq!(plan.iterations.len(), 20);
        let labels = ds.labels();
        let by_class = ds.indices_by_class();
        for it in &plan.iterations {
            let train: HashSet<_> = it.train.iter().copied().collect();
            let test: HashSet<_> = it.test.iter().copied().collect();
            assert!(train.is_disjoint(&test));
            for c in 0..3 {
                assert_eq!(it.train.iter().filter(|&&i| labels[i] == c).count(), 54);
                assert_eq!(it.test.iter().filter(|&&i| labels[i] == c).count(), 36);
            }
            assert_eq!(it.train.iter().filter(|&&i| labels[i] == 3).count(), 30);
            for class in &by_class {
                let all: HashSet<_> = class.iter().copied().collect();
                let got: HashSet<_> = class.iter().copied().filter(|i| train.contains(i) || test.contains(i)).collect();
                assert_eq!(all, got);
            }
        }
        let distinct: HashSet<_> = plan.iterations.iter().map(|s| s.train.clone()).collect();
        assert_eq!(distinct.len(), 20);
        assert_eq!(plan, split_iterations(&ds, 0.6, 20, 11).unwrap());
    }

    #[test]
    fn split_rejects_singleton_class() {
        let ds = Dataset::from_records(vec![
            TraceRecord::new("a", vec![TraceEvent::new(0.0, Direction::Outgoing, 1)]),
            TraceRecord::new("b", vec![TraceEvent::new(0.0, Direction::Outgoing, 1)]),
            TraceRecord::new("b", vec![TraceEvent::new(0.0, Direction::Outgoing, 1)]),
        ]);
        assert!(split_iterations(&ds, 0.6, 1, 0).is_err());
    }

    #[test]
    fn validate_catches_bad_duration() {
        let mut r = TraceRecord::new("a", vec![TraceEvent::new(1.0, Direction::Outgoing, 1)]);
        r.meta.duration_seconds = Some(0.5);
        assert!(r.validate().is_err());
        assert!(TraceRecord::new("a", vec![]).validate().is_err());
    }
}
