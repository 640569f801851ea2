//! Fixed-dimension numeric representations of traces.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par::{self, ExecMode};
use crate::trace::{Direction, TraceRecord};

/// Which transform produced a feature vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pipeline {
    CellDirection,
    Resp,
    TlsRecordSize,
    TlsDirection,
    PacketTiming,
    AeEncoded,
    HtmlRank,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    values: Vec<f64>,
    pipeline: Pipeline,
}

impl FeatureVector {
    /// Pads with zeros or tail-truncates `values` to exactly `dim` entries.
    pub fn fitted(mut values: Vec<f64>, dim: usize, pipeline: Pipeline) -> Self {
        values.resize(dim, 0.0);
        FeatureVector { values, pipeline }
    }

    pub fn new(values: Vec<f64>, pipeline: Pipeline) -> Self {
        FeatureVector { values, pipeline }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn pipeline(&self) -> Pipeline {
        self.pipeline
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TlsVariant {
    RecordSize,
    Direction,
    InterPacketTime,
}

/// ±1 per event, zero padded.
pub fn cell_direction_features(trace: &TraceRecord, dim: usize) -> FeatureVector {
    let values = trace
        .events
        .iter()
        .take(dim)
        .map(|e| e.direction.sign() as f64)
        .collect();
    FeatureVector::fitted(values, dim, Pipeline::CellDirection)
}

/// Bounds `[start, end)` of the incoming run with the largest byte total.
/// Ties go to the earliest run.
pub fn largest_incoming_burst(trace: &TraceRecord) -> Option<(usize, usize)> {
    let mut best: Option<(usize, usize, u64)> = None;
    let mut i = 0;
    let ev = &trace.events;
    while i < ev.len() {
        if ev[i].direction != Direction::Incoming {
            i += 1;
            continue;
        }
        let start = i;
        let mut total = 0u64;
        while i < ev.len() && ev[i].direction == Direction::Incoming {
            total += ev[i].size as u64;
            i += 1;
        }
        if best.is_none_or(|(_, _, b)| total > b) {
            best = Some((start, i, total));
        }
    }
    best.map(|(s, e, _)| (s, e))
}

/// Per-record sizes of the largest incoming burst (non-cumulative).
pub fn resp_features(trace: &TraceRecord, dim: usize) -> Result<FeatureVector> {
    let (start, end) = largest_incoming_burst(trace)
        .ok_or_else(|| Error::invalid(format!("trace '{}' has no incoming events", trace.label)))?;
    let values = trace.events[start..end]
        .iter()
        .take(dim)
        .map(|e| e.size as f64)
        .collect();
    Ok(FeatureVector::fitted(values, dim, Pipeline::Resp))
}

pub fn tls_features(trace: &TraceRecord, dim: usize, variant: TlsVariant) -> FeatureVector {
    let ev = trace.events.iter().take(dim);
    match variant {
        TlsVariant::RecordSize => FeatureVector::fitted(
            ev.map(|e| e.direction.sign() as f64 * e.size as f64).collect(),
            dim,
            Pipeline::TlsRecordSize,
        ),
        TlsVariant::Direction => FeatureVector::fitted(
            ev.map(|e| e.direction.sign() as f64).collect(),
            dim,
            Pipeline::TlsDirection,
        ),
        TlsVariant::InterPacketTime => {
            let mut prev = trace.events.first().map(|e| e.time).unwrap_or(0.0);
            let values = ev
                .map(|e| {
                    let d = e.time - prev;
                    prev = e.time;
                    d
                })
                .collect();
            FeatureVector::fitted(values, dim, Pipeline::PacketTiming)
        }
    }
}

/// A trace-to-vector transform and its output width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureSpec {
    CellDirection { dim: usize },
    Resp { dim: usize },
    Tls { dim: usize, variant: TlsVariant },
}

impl FeatureSpec {
    pub fn dim(&self) -> usize {
        match *self {
            FeatureSpec::CellDirection { dim } | FeatureSpec::Resp { dim } | FeatureSpec::Tls { dim, .. } => dim,
        }
    }

    pub fn extract(&self, trace: &TraceRecord) -> Result<FeatureVector> {
        if self.dim() == 0 {
            return Err(Error::invalid("feature dimension must be at least 1"));
        }
        Ok(match *self {
            FeatureSpec::CellDirection { dim } => cell_direction_features(trace, dim),
            FeatureSpec::Resp { dim } => resp_features(trace, dim)?,
            FeatureSpec::Tls { dim, variant } => tls_features(trace, dim, variant),
        })
    }

    /// Feature rows for `records`, in order.
    pub fn extract_all(&self, records: &[TraceRecord], mode: ExecMode) -> Result<Vec<Vec<f64>>> {
        par::try_map_indexed(mode, records.len(), |i| self.extract(&records[i]).map(FeatureVector::into_values))
    }
}

/// Feature matrix as CSV: one row per instance, label ordinal in the last
/// column. Lines starting with `#` are comments.
pub fn write_feature_csv(
    w: impl Write,
    rows: &[Vec<f64>],
    labels: &[usize],
    comments: &[String],
) -> Result<()> {
    if rows.len() != labels.len() {
        return Err(Error::shape(format!("{} rows but {} labels", rows.len(), labels.len())));
    }
    let mut w = w;
    for c in comments {
        writeln!(w, "# {c}")?;
    }
    let dim = rows.first().map_or(0, Vec::len);
    let mut out = csv::Writer::from_writer(w);
    let mut header: Vec<String> = (0..dim).map(|i| format!("f{i}")).collect();
    header.push("label".to_string());
    out.write_record(&header)?;
    for (row, label) in rows.iter().zip(labels) {
        if row.len() != dim {
            return Err(Error::shape(format!("ragged feature matrix: {} vs {dim}", row.len())));
        }
        let mut rec: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        rec.push(label.to_string());
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_feature_csv(r: impl Read) -> Result<(Vec<Vec<f64>>, Vec<usize>)> {
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(r);
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let n = rec.len();
        if n < 2 {
            return Err(Error::shape(format!("row {}: need at least one feature and a label", i + 1)));
        }
        let row = rec
            .iter()
            .take(n - 1)
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::invalid(format!("row {}: {e}", i + 1)))?;
        let label = rec[n - 1]
            .trim()
            .parse::<usize>()
            .map_err(|e| Error::invalid(format!("row {}: label: {e}", i + 1)))?;
        rows.push(row);
        labels.push(label);
    }
    Ok((rows, labels))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::TraceEvent;
    use proptest::prelude::*;

    fn rec(events: &[(f64, i64, u32)]) -> TraceRecord {
        TraceRecord::new(
            "t",
            events
                .iter()
                .map(|&(t, d, s)| TraceEvent::new(t, Direction::from_sign(d).unwrap(), s))
                .collect(),
        )
    }

    #[test]
    fn direction_padding() {
        let r = rec(&[(0.0, 1, 512), (0.1, -1, 512), (0.2, -1, 512)]);
        assert_eq!(cell_direction_features(&r, 5).values(), &[1.0, -1.0, -1.0, 0.0, 0.0]);
        assert_eq!(cell_direction_features(&rec(&[]), 4).values(), &[0.0; 4]);
    }

    #[test]
    fn direction_truncates_at_tail() {
        let events: Vec<_> = (0..1000).map(|i| (i as f64, if i % 3 == 0 { 1 } else { -1 }, 512)).collect();
        let r = rec(&events);
        let f = cell_direction_features(&r, 784);
        assert_eq!(f.dim(), 784);
        for (i, v) in f.values().iter().enumerate() {
            assert_eq!(*v, if i % 3 == 0 { 1.0 } else { -1.0 });
        }
    }

    fn brute_resp(sizes: &[(i64, u32)]) -> Option<Vec<f64>> {
        // every contiguous all-incoming window that cannot be extended
        let mut best: Option<(u64, Vec<f64>)> = None;
        for s in 0..sizes.len() {
            for e in s + 1..=sizes.len() {
                let w = &sizes[s..e];
                if w.iter().any(|x| x.0 != -1) {
                    continue;
                }
                let left_open = s == 0 || sizes[s - 1].0 != -1;
                let right_open = e == sizes.len() || sizes[e].0 != -1;
                if !(left_open && right_open) {
                    continue;
                }
                let total: u64 = w.iter().map(|x| x.1 as u64).sum();
                if best.as_ref().is_none_or(|b| total > b.0) {
                    best = Some((total, w.iter().map(|x| x.1 as f64).collect()));
                }
            }
        }
        best.map(|b| b.1)
    }

    #[test]
    fn resp_example() {
        let r = rec(&[(0.0, 1, 100), (0.1, -1, 200), (0.2, -1, 300), (0.3, 1, 50), (0.4, -1, 100)]);
        assert_eq!(resp_features(&r, 4).unwrap().values(), &[200.0, 300.0, 0.0, 0.0]);
        assert_eq!(brute_resp(&[(1, 100), (-1, 200), (-1, 300), (1, 50), (-1, 100)]).unwrap(), vec![200.0, 300.0]);
    }

    #[test]
    fn resp_all_incoming_and_no_incoming() {
        let r = rec(&[(0.0, -1, 5), (0.1, -1, 6)]);
        assert_eq!(resp_features(&r, 2).unwrap().values(), &[5.0, 6.0]);
        assert!(resp_features(&rec(&[(0.0, 1, 5)]), 2).is_err());
    }

    #[test]
    fn resp_tie_goes_to_earliest() {
        let r = rec(&[(0.0, -1, 10), (0.1, 1, 1), (0.2, -1, 7), (0.3, -1, 3)]);
        assert_eq!(largest_incoming_burst(&r), Some((0, 1)));
    }

    #[test]
    fn tls_variants() {
        let r = rec(&[(0.0, 1, 100), (0.5, -1, 1400)]);
        assert_eq!(tls_features(&r, 3, TlsVariant::RecordSize).values(), &[100.0, -1400.0, 0.0]);
        assert_eq!(tls_features(&r, 2, TlsVariant::InterPacketTime).values(), &[0.0, 0.5]);
        assert_eq!(tls_features(&r, 3, TlsVariant::Direction).values(), &[1.0, -1.0, 0.0]);
    }

    #[test]
    fn csv_round_trip() {
        let rows = vec![vec![1.0, -0.5], vec![0.25, 3.0]];
        let labels = vec![0, 4];
        let mut buf = Vec::new();
        write_feature_csv(&mut buf, &rows, &labels, &["config_hash=abc".into()]).unwrap();
        let (r2, l2) = read_feature_csv(&buf[..]).unwrap();
        assert_eq!(r2, rows);
        assert_eq!(l2, labels);
    }

    fn arb_trace() -> impl Strategy<Value = TraceRecord> {
        prop::collection::vec((any::<bool>(), 1u32..2000), 0..120).prop_map(|v| {
            TraceRecord::new(
                "p",
                v.into_iter()
                    .enumerate()
                    .map(|(i, (out, s))| {
                        TraceEvent::new(
                            i as f64 * 0.01,
                            if out { Direction::Outgoing } else { Direction::Incoming },
                            s,
                        )
                    })
                    .collect(),
            )
        })
    }

    proptest! {
        #[test]
        fn output_length_is_dim(t in arb_trace(), dim in 1usize..200) {
            prop_assert_eq!(cell_direction_features(&t, dim).dim(), dim);
            prop_assert_eq!(tls_features(&t, dim, TlsVariant::RecordSize).dim(), dim);
            prop_assert_eq!(tls_features(&t, dim, TlsVariant::InterPacketTime).dim(), dim);
            if let Ok(f) = resp_features(&t, dim) {
                prop_assert_eq!(f.dim(), dim);
            }
        }

        #[test]
        fn direction_prefix_stable(t in arb_trace(), extra in arb_trace(), dim in 1usize..60) {
            prop_assume!(t.events.len() >= dim);
            let mut longer = t.clone();
            longer.events.extend(extra.events.iter().map(|e| TraceEvent { time: e.time + 10.0, ..*e }));
            prop_assert_eq!(cell_direction_features(&t, dim), cell_direction_features(&longer, dim));
        }

        #[test]
        fn resp_matches_brute_force(t in arb_trace()) {
            let sizes: Vec<(i64, u32)> = t.events.iter().map(|e| (e.direction.sign() as i64, e.size)).collect();
            match (resp_features(&t, 200), brute_resp(&sizes)) {
                (Ok(f), Some(b)) => {
                    let total: f64 = f.values().iter().sum();
                    prop_assert_eq!(total, b.iter().sum::<f64>());
                    prop_assert_eq!(&f.values()[..b.len()], &b[..]);
                }
                (Err(_), None) => {}
                (a, b) => prop_assert!(false, "disagree: {:?} vs {:?}", a, b),
            }
        }
    }
}
