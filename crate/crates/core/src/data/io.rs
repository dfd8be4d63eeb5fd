//! CSV persistence. Floats are written with 17 significant digits so that
//! every f64 survives a round trip bit for bit.
//!
//! * pulses: `id,class,v0..v255`
//! * series: `t,ch0..ch4,gate,ood`
//! * windows: `id,target,gate,ood,x0..x74`, inputs flattened channel-major
//!   (`x0..x14` is channel 0).

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::booster::{BoosterSeries, WindowedSample, CHANNELS, WINDOW};
use super::pulses::{PulseClass, PulseRecord, TRACE_LEN};
use crate::diffcore::Tensor;
use crate::error::{Error, Result};

pub const PULSE_HEADER_PREFIX: &str = "id,class";

fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

fn pulse_header() -> Vec<String> {
    let mut h = vec!["id".to_string(), "class".to_string()];
    h.extend((0..TRACE_LEN).map(|i| format!("v{i}")));
    h
}

fn series_header() -> Vec<String> {
    let mut h = vec!["t".to_string()];
    h.extend((0..CHANNELS).map(|c| format!("ch{c}")));
    h.extend(["gate".to_string(), "ood".to_string()]);
    h
}

fn window_header() -> Vec<String> {
    let mut h: Vec<String> = ["id", "target", "gate", "ood"].iter().map(|s| s.to_string()).collect();
    h.extend((0..CHANNELS * WINDOW).map(|i| format!("x{i}")));
    h
}

fn write_rows(path: &Path, header: &[String], rows: impl Iterator<Item = Vec<String>>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{}", header.join(","))?;
    for row in rows {
        writeln!(w, "{}", row.join(","))?;
    }
    w.flush()?;
    Ok(())
}

struct Rows {
    path: std::path::PathBuf,
    reader: csv::Reader<File>,
}

impl Rows {
    fn open(path: &Path, header: &[String]) -> Result<Self> {
        let file = File::open(path)?;
        let mut reader = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(file);
        let found = reader.headers().map_err(|e| parse_err(path, 1, e.to_string()))?;
        if found.len() != header.len() || found.iter().zip(header).any(|(a, b)| a != b) {
            return Err(parse_err(
                path,
                1,
                format!("expected header with {} columns `{}..`, found {} columns", header.len(), header[..2].join(","), found.len()),
            ));
        }
        Ok(Rows { path: path.to_path_buf(), reader })
    }

    fn for_each(mut self, width: usize, mut f: impl FnMut(&Cells) -> Result<()>) -> Result<()> {
        for rec in self.reader.records() {
            let rec = rec.map_err(|e| {
                let line = e.position().map(|p| p.line()).unwrap_or(0);
                parse_err(&self.path, line, e.to_string())
            })?;
            let line = rec.position().map(|p| p.line()).unwrap_or(0);
            if rec.len() != width {
                return Err(parse_err(&self.path, line, format!("expected {width} fields, found {}", rec.len())));
            }
            f(&Cells { rec: &rec, line, path: &self.path })?;
        }
        Ok(())
    }
}

struct Cells<'a> {
    rec: &'a csv::StringRecord,
    line: u64,
    path: &'a Path,
}

impl Cells<'_> {
    fn err(&self, msg: String) -> Error {
        parse_err(self.path, self.line, msg)
    }

    fn f64(&self, i: usize) -> Result<f64> {
        let s = &self.rec[i];
        s.trim().parse().map_err(|_| self.err(format!("column {}: `{s}` is not a number", i + 1)))
    }

    fn u64(&self, i: usize) -> Result<u64> {
        let s = &self.rec[i];
        s.trim().parse().map_err(|_| self.err(format!("column {}: `{s}` is not an unsigned integer", i + 1)))
    }

    fn flag(&self, i: usize) -> Result<bool> {
        match self.rec[i].trim() {
            "0" => Ok(false),
            "1" => Ok(true),
            s => Err(self.err(format!("column {}: `{s}` is not 0 or 1", i + 1))),
        }
    }

    fn floats(&self, from: usize) -> Result<Vec<f64>> {
        (from..self.rec.len()).map(|i| self.f64(i)).collect()
    }
}

fn parse_err(path: &Path, line: u64, msg: String) -> Error {
    Error::Parse { path: path.to_path_buf(), line, msg }
}

pub fn save_pulses(path: &Path, pulses: &[PulseRecord]) -> Result<()> {
    for p in pulses {
        if p.trace.len() != TRACE_LEN {
            return Err(Error::contract(format!("pulse {} has {} samples, expected {TRACE_LEN}", p.id, p.trace.len())));
        }
    }
    write_rows(
        path,
        &pulse_header(),
        pulses.iter().map(|p| {
            let mut row = vec![p.id.to_string(), p.class.as_str().to_string()];
            row.extend(p.trace.iter().map(|&v| fmt(v)));
            row
        }),
    )
}

pub fn load_pulses(path: &Path) -> Result<Vec<PulseRecord>> {
    let header = pulse_header();
    let mut out = Vec::new();
    Rows::open(path, &header)?.for_each(header.len(), |c| {
        let class = PulseClass::parse(c.rec[1].trim()).ok_or_else(|| c.err(format!("unknown class `{}`", &c.rec[1])))?;
        out.push(PulseRecord { id: c.u64(0)?, class, trace: c.floats(2)? });
        Ok(())
    })?;
    Ok(out)
}

pub fn save_series(path: &Path, series: &BoosterSeries) -> Result<()> {
    if series.channels.dim(0) != CHANNELS {
        return Err(Error::contract(format!("series has {} channels, expected {CHANNELS}", series.channels.dim(0))));
    }
    write_rows(
        path,
        &series_header(),
        (0..series.len()).map(|t| {
            let mut row = vec![t.to_string()];
            row.extend((0..CHANNELS).map(|c| fmt(series.channel(c)[t])));
            row.push(fmt(series.gate[t]));
            row.push(if series.ood_mask[t] { "1" } else { "0" }.to_string());
            row
        }),
    )
}

pub fn load_series(path: &Path) -> Result<BoosterSeries> {
    let header = series_header();
    let mut cols: Vec<Vec<f64>> = vec![Vec::new(); CHANNELS];
    let (mut gate, mut mask) = (Vec::new(), Vec::new());
    Rows::open(path, &header)?.for_each(header.len(), |c| {
        let t = c.u64(0)?;
        if t != gate.len() as u64 {
            return Err(c.err(format!("expected t = {}, found {t}", gate.len())));
        }
        for (ch, col) in cols.iter_mut().enumerate() {
            col.push(c.f64(1 + ch)?);
        }
        gate.push(c.f64(1 + CHANNELS)?);
        mask.push(c.flag(2 + CHANNELS)?);
        Ok(())
    })?;
    let channels = Tensor::new(vec![CHANNELS, gate.len()], cols.concat())?;
    Ok(BoosterSeries { channels, gate, ood_mask: mask })
}

pub fn save_windows(path: &Path, windows: &[WindowedSample]) -> Result<()> {
    for w in windows {
        if w.inputs.shape() != [CHANNELS, WINDOW] {
            return Err(Error::contract(format!("window {} has shape {:?}", w.id, w.inputs.shape())));
        }
    }
    write_rows(
        path,
        &window_header(),
        windows.iter().map(|w| {
            let mut row = vec![w.id.to_string(), fmt(w.target), fmt(w.gate), if w.ood { "1" } else { "0" }.to_string()];
            row.extend(w.inputs.data().iter().map(|&v| fmt(v)));
            row
        }),
    )
}

pub fn load_windows(path: &Path) -> Result<Vec<WindowedSample>> {
    let header = window_header();
    let mut out = Vec::new();
    Rows::open(path, &header)?.for_each(header.len(), |c| {
        out.push(WindowedSample {
            id: c.u64(0)?,
            target: c.f64(1)?,
            gate: c.f64(2)?,
            ood: c.flag(3)?,
            inputs: Tensor::new(vec![CHANNELS, WINDOW], c.floats(4)?)?,
        });
        Ok(())
    })?;
    Ok(out)
}
