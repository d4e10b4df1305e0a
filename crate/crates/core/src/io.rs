//! File formats: trace CSV with a JSON sidecar, histogram CSV, model and
//! config JSON, GA log CSV.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::dwell::{DwellHistogram, State};
use crate::error::{BlinkError, Result};
use crate::ga::LogEntry;
use crate::sim::BlinkTrace;

/// Trace metadata stored next to the CSV as `<basename>.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceMeta {
    pub bin_width_s: f64,
    pub n_bins: usize,
    pub seed: u64,
    pub mean_on_counts: f64,
    pub mean_off_counts: f64,
    pub truth: Option<Truth>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub tau_on_s: f64,
    pub tau_off_s: f64,
}

impl TraceMeta {
    pub fn of(trace: &BlinkTrace) -> Self {
        TraceMeta {
            bin_width_s: trace.bin_width,
            n_bins: trace.len(),
            seed: trace.seed,
            mean_on_counts: trace.mean_on_counts,
            mean_off_counts: trace.mean_off_counts,
            truth: trace.truth.map(|(on, off)| Truth {
                tau_on_s: on,
                tau_off_s: off,
            }),
        }
    }
}

pub fn sidecar_path(csv: &Path) -> PathBuf {
    csv.with_extension("json")
}

fn parse_err(path: &Path, line: u64, msg: impl Into<String>) -> BlinkError {
    BlinkError::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

fn csv_line(path: &Path, e: &csv::Error) -> BlinkError {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    parse_err(path, line, e.to_string())
}

/// Writes `t_s,counts` rows plus the sidecar JSON.
pub fn write_trace(path: &Path, trace: &BlinkTrace) -> Result<()> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    w.write_record(["t_s", "counts"])?;
    for (i, c) in trace.counts.iter().enumerate() {
        w.write_record([format!("{}", i as f64 * trace.bin_width), c.to_string()])?;
    }
    w.flush()?;
    write_json(&sidecar_path(path), &TraceMeta::of(trace))
}

/// Reads a trace CSV. The bin width comes from the sidecar when present,
/// otherwise from the spacing of the first two rows.
pub fn read_trace(path: &Path) -> Result<BlinkTrace> {
    let mut rdr = csv::Reader::from_path(path)?;
    let headers = rdr.headers().map_err(|e| csv_line(path, &e))?.clone();
    if headers.len() != 2 || &headers[0] != "t_s" || &headers[1] != "counts" {
        return Err(parse_err(path, 1, "expected header `t_s,counts`"));
    }
    let mut times = Vec::new();
    let mut counts = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_line(path, &e))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() != 2 {
            return Err(parse_err(path, line, "expected 2 fields"));
        }
        let t: f64 = rec[0]
            .trim()
            .parse()
            .map_err(|_| parse_err(path, line, format!("bad time `{}`", &rec[0])))?;
        let c: u64 = rec[1]
            .trim()
            .parse()
            .map_err(|_| parse_err(path, line, format!("bad count `{}`", &rec[1])))?;
        times.push(t);
        counts.push(c);
    }
    if counts.is_empty() {
        return Err(parse_err(path, 2, "trace has no rows"));
    }

    let side = sidecar_path(path);
    if side.exists() {
        let meta: TraceMeta = read_json(&side)?;
        if meta.n_bins != counts.len() {
            log::warn!("sidecar lists {} bins, CSV holds {}", meta.n_bins, counts.len());
        }
        return Ok(BlinkTrace {
            bin_width: meta.bin_width_s,
            counts,
            mean_on_counts: meta.mean_on_counts,
            mean_off_counts: meta.mean_off_counts,
            truth: meta.truth.map(|t| (t.tau_on_s, t.tau_off_s)),
            seed: meta.seed,
        });
    }
    if times.len() < 2 || !(times[1] > times[0]) {
        return Err(parse_err(
            path,
            2,
            "cannot infer bin width: no sidecar and fewer than two increasing rows",
        ));
    }
    Ok(BlinkTrace {
        bin_width: times[1] - times[0],
        counts,
        mean_on_counts: f64::NAN,
        mean_off_counts: f64::NAN,
        truth: None,
        seed: 0,
    })
}

/// Writes `state,duration_ms,occurrences` rows for each histogram.
pub fn write_histograms(path: &Path, hists: &[&DwellHistogram]) -> Result<()> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    w.write_record(["state", "duration_ms", "occurrences"])?;
    for h in hists {
        for &(d, c) in &h.pairs {
            w.write_record([
                h.state.as_str().to_string(),
                format!("{}", d as f64 * h.bin_width * 1e3),
                c.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a histogram CSV back into one histogram per state.
pub fn read_histograms(path: &Path, bin_width: f64) -> Result<(DwellHistogram, DwellHistogram)> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut on = Vec::new();
    let mut off = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_line(path, &e))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() != 3 {
            return Err(parse_err(path, line, "expected 3 fields"));
        }
        let state: State = rec[0].parse().map_err(|_| parse_err(path, line, "bad state"))?;
        let ms: f64 = rec[1].parse().map_err(|_| parse_err(path, line, "bad duration"))?;
        let n: u64 = rec[2].parse().map_err(|_| parse_err(path, line, "bad occurrences"))?;
        let idx = (ms * 1e-3 / bin_width).round();
        if !(idx >= 1.0) {
            return Err(parse_err(path, line, "duration below one bin"));
        }
        match state {
            State::On => on.push((idx as u32, n)),
            State::Off => off.push((idx as u32, n)),
        }
    }
    Ok((
        DwellHistogram::new(State::On, bin_width, on)?,
        DwellHistogram::new(State::Off, bin_width, off)?,
    ))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let f = File::open(path)?;
    Ok(serde_json::from_reader(std::io::BufReader::new(f))?)
}

/// `iteration,tau_s,silhouette,k`
pub fn write_ga_log(path: &Path, log: &[LogEntry]) -> Result<()> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    for e in log {
        w.serialize(e)?;
    }
    if log.is_empty() {
        w.write_record(["iteration", "tau_s", "silhouette", "k"])?;
    }
    w.flush()?;
    Ok(())
}
