//! Constant-rate padding defenses (BuFLO, Tamaraw) simulated on traces.
//!
//! Each direction runs a fixed schedule of slots at `k·ρ`. Real bytes queue
//! up as they arrive and are drained, at most one packet's worth per slot;
//! slots with nothing queued carry a dummy packet. Every emitted packet has
//! the same size.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par::{self, ExecMode};
use crate::trace::{Dataset, Direction, TraceEvent, TraceRecord};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DefenseParams {
    Buflo {
        packet_size: u32,
        interval: f64,
        min_duration: f64,
    },
    Tamaraw {
        packet_size: u32,
        interval_out: f64,
        interval_in: f64,
        pad_multiple: usize,
    },
}

impl DefenseParams {
    pub fn buflo_default() -> Self {
        DefenseParams::Buflo {
            packet_size: 512,
            interval: 0.02,
            min_duration: 10.0,
        }
    }

    pub fn tamaraw_default() -> Self {
        DefenseParams::Tamaraw {
            packet_size: 512,
            interval_out: 0.04,
            interval_in: 0.012,
            pad_multiple: 100,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v > 0.0 && v.is_finite();
        match *self {
            DefenseParams::Buflo {
                packet_size,
                interval,
                min_duration,
            } => {
                if packet_size == 0 || !ok(interval) || !ok(min_duration) {
                    return Err(Error::invalid("BuFLO needs packet_size, interval and min_duration > 0"));
                }
            }
            DefenseParams::Tamaraw {
                packet_size,
                interval_out,
                interval_in,
                pad_multiple,
            } => {
                if packet_size == 0 || !ok(interval_out) || !ok(interval_in) || pad_multiple == 0 {
                    return Err(Error::invalid("Tamaraw needs packet_size, intervals and pad_multiple > 0"));
                }
            }
        }
        Ok(())
    }

    pub fn apply(&self, trace: &TraceRecord) -> Result<DefendedTrace> {
        match *self {
            DefenseParams::Buflo {
                packet_size,
                interval,
                min_duration,
            } => apply_buflo(trace, packet_size, interval, min_duration),
            DefenseParams::Tamaraw {
                packet_size,
                interval_out,
                interval_in,
                pad_multiple,
            } => apply_tamaraw(trace, packet_size, interval_out, interval_in, pad_multiple),
        }
    }
}

/// A defended trace together with the real payload each event carries
/// (0 for dummies).
#[derive(Debug, Clone, PartialEq)]
pub struct DefendedTrace {
    pub trace: TraceRecord,
    pub payload: Vec<u32>,
}

impl DefendedTrace {
    pub fn real_bytes(&self) -> u64 {
        self.payload.iter().map(|&p| p as u64).sum()
    }
}

/// Drain one direction's arrivals through slots `k·ρ`. Returns the payload
/// of each slot up to and including the one that empties the queue.
fn drain(arrivals: &[(f64, u32)], packet_size: u32, interval: f64) -> Vec<u32> {
    let mut slots = Vec::new();
    let mut next = 0;
    let mut queued: u64 = 0;
    let mut k = 0u64;
    while next < arrivals.len() || queued > 0 {
        let t = k as f64 * interval;
        while next < arrivals.len() && arrivals[next].0 <= t {
            queued += arrivals[next].1 as u64;
            next += 1;
        }
        let send = queued.min(packet_size as u64);
        queued -= send;
        slots.push(send as u32);
        k += 1;
    }
    slots
}

fn arrivals(trace: &TraceRecord, dir: Direction) -> Vec<(f64, u32)> {
    let mut a: Vec<(f64, u32)> = trace
        .events
        .iter()
        .filter(|e| e.direction == dir && !e.dummy)
        .map(|e| (e.time.max(0.0), e.size))
        .collect();
    a.sort_by(|x, y| x.0.total_cmp(&y.0));
    a
}

/// Slot count needed so that every slot time `k·ρ` below `t` is covered.
fn slots_before(t: f64, interval: f64) -> usize {
    (t / interval - 1e-9).ceil().max(0.0) as usize
}

fn assemble(trace: &TraceRecord, packet_size: u32, schedules: [(Direction, f64, Vec<u32>); 2]) -> DefendedTrace {
    let mut tagged: Vec<(f64, u8, TraceEvent, u32)> = Vec::new();
    for (dir, interval, slots) in schedules {
        let order = u8::from(dir == Direction::Incoming);
        for (k, p) in slots.into_iter().enumerate() {
            let t = k as f64 * interval;
            let ev = if p > 0 {
                TraceEvent::new(t, dir, packet_size)
            } else {
                TraceEvent::dummy(t, dir, packet_size)
            };
            tagged.push((t, order, ev, p));
        }
    }
    tagged.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut out = TraceRecord::new(trace.label.clone(), Vec::with_capacity(tagged.len()));
    out.meta = trace.meta.clone();
    let mut payload = Vec::with_capacity(tagged.len());
    for (_, _, ev, p) in tagged {
        out.events.push(ev);
        payload.push(p);
    }
    DefendedTrace { trace: out, payload }
}

/// Time of the slot that sends the last real byte, if any.
fn exhaust_time(slots: &[u32], interval: f64) -> Option<f64> {
    (!slots.is_empty()).then(|| (slots.len() - 1) as f64 * interval)
}

/// BuFLO: both directions send one `packet_size` packet every `interval`
/// seconds from time 0 until `max(min_duration, time real data runs out)`.
pub fn apply_buflo(trace: &TraceRecord, packet_size: u32, interval: f64, min_duration: f64) -> Result<DefendedTrace> {
    DefenseParams::Buflo {
        packet_size,
        interval,
        min_duration,
    }
    .validate()?;
    let out = drain(&arrivals(trace, Direction::Outgoing), packet_size, interval);
    let inc = drain(&arrivals(trace, Direction::Incoming), packet_size, interval);
    let n = out.len().max(inc.len()).max(slots_before(min_duration, interval));
    let pad = |mut v: Vec<u32>| {
        v.resize(n, 0);
        v
    };
    Ok(assemble(
        trace,
        packet_size,
        [(Direction::Outgoing, interval, pad(out)), (Direction::Incoming, interval, pad(inc))],
    ))
}

/// Tamaraw: per-direction intervals; both directions keep their schedule
/// until all real data in either direction is sent, then each pads its
/// packet count up to a multiple of `pad_multiple`.
pub fn apply_tamaraw(
    trace: &TraceRecord,
    packet_size: u32,
    interval_out: f64,
    interval_in: f64,
    pad_multiple: usize,
) -> Result<DefendedTrace> {
    DefenseParams::Tamaraw {
        packet_size,
        interval_out,
        interval_in,
        pad_multiple,
    }
    .validate()?;
    if interval_out < interval_in {
        log::warn!("Tamaraw outgoing interval {interval_out} is shorter than incoming {interval_in}");
    }
    let out = drain(&arrivals(trace, Direction::Outgoing), packet_size, interval_out);
    let inc = drain(&arrivals(trace, Direction::Incoming), packet_size, interval_in);
    let end = exhaust_time(&out, interval_out)
        .into_iter()
        .chain(exhaust_time(&inc, interval_in))
        .fold(f64::NEG_INFINITY, f64::max);
    let finish = |mut v: Vec<u32>, interval: f64| {
        if end.is_finite() {
            // every slot at or before the global exhaustion time
            let n = ((end / interval + 1e-9).floor() as usize + 1).max(v.len());
            v.resize(n, 0);
        }
        let n = v.len().div_ceil(pad_multiple) * pad_multiple;
        v.resize(n, 0);
        v
    };
    Ok(assemble(
        trace,
        packet_size,
        [
            (Direction::Outgoing, interval_out, finish(out, interval_out)),
            (Direction::Incoming, interval_in, finish(inc, interval_in)),
        ],
    ))
}

/// `100·(defended − original)/original` in total bytes.
pub fn bandwidth_overhead(original_bytes: u64, defended_bytes: u64) -> Result<f64> {
    if original_bytes == 0 {
        return Err(Error::Undefined("overhead of a zero-byte trace".into()));
    }
    Ok(100.0 * (defended_bytes as f64 - original_bytes as f64) / original_bytes as f64)
}

pub fn trace_overhead(original: &TraceRecord, defended: &TraceRecord) -> Result<f64> {
    bandwidth_overhead(original.total_bytes(), defended.total_bytes())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverheadRow {
    pub index: usize,
    pub label: String,
    pub original_bytes: u64,
    pub defended_bytes: u64,
    pub overhead_percent: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DefendedDataset {
    pub dataset: Dataset,
    pub rows: Vec<OverheadRow>,
    /// Overhead of the corpus totals.
    pub corpus_overhead: f64,
    pub mean_overhead: f64,
}

pub fn defend_dataset(dataset: &Dataset, params: &DefenseParams, mode: ExecMode) -> Result<DefendedDataset> {
    params.validate()?;
    let defended = par::try_map_indexed(mode, dataset.records.len(), |i| params.apply(&dataset.records[i]))?;
    let mut rows = Vec::with_capacity(defended.len());
    for (i, (orig, def)) in dataset.records.iter().zip(&defended).enumerate() {
        rows.push(OverheadRow {
            index: i,
            label: orig.label.clone(),
            original_bytes: orig.total_bytes(),
            defended_bytes: def.trace.total_bytes(),
            overhead_percent: trace_overhead(orig, &def.trace)?,
        });
    }
    let orig: u64 = rows.iter().map(|r| r.original_bytes).sum();
    let def: u64 = rows.iter().map(|r| r.defended_bytes).sum();
    let mean_overhead = rows.iter().map(|r| r.overhead_percent).sum::<f64>() / rows.len().max(1) as f64;
    Ok(DefendedDataset {
        dataset: Dataset::from_records(defended.into_iter().map(|d| d.trace).collect()),
        rows,
        corpus_overhead: bandwidth_overhead(orig, def)?,
        mean_overhead,
    })
}
