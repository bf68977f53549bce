//! CSV, SVG and manifest writers.
//!
//! Every writer renders to memory first and only touches the filesystem once
//! the bytes are complete, so a failed emit never leaves a partial file.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use fairgame_core::{pairs, DeltaStats, RunRecord};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

/// One row of the run-record CSV: a player at an iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordRow {
    pub iteration: usize,
    pub player: usize,
    pub m_cum: usize,
    pub shapley: f64,
    pub logdet_fisher_hat: Option<f64>,
    /// δ for every pair in [`pairs`] order, repeated on each player's row.
    pub deltas: Vec<Option<f64>>,
}

/// One row of the δ summary CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub pair: (usize, usize),
    pub lowest: f64,
    pub average: f64,
    pub stdev: f64,
    pub iter: Option<usize>,
}

/// One row of the synthetic-convergence CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticRow {
    pub m: usize,
    pub trial: usize,
    pub pair: (usize, usize),
    pub shapley_diff: f64,
    /// Shapley difference of the limiting game for the same pair.
    pub limit: f64,
}

pub fn record_rows(records: &[RunRecord]) -> Vec<RecordRow> {
    records
        .iter()
        .flat_map(|r| {
            (0..r.counts.len()).map(move |p| RecordRow {
                iteration: r.iteration,
                player: p,
                m_cum: r.counts[p],
                shapley: r.shapley[p],
                logdet_fisher_hat: r.logdet_fisher[p],
                deltas: r.deltas.clone(),
            })
        })
        .collect()
}

pub fn summary_rows(stats: &[((usize, usize), DeltaStats)]) -> Vec<SummaryRow> {
    stats
        .iter()
        .map(|(pair, s)| SummaryRow { pair: *pair, lowest: s.lowest, average: s.average, stdev: s.stdev, iter: s.iter })
        .collect()
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn pair_label((i, j): (usize, usize)) -> String {
    format!("{i}-{j}")
}

fn delta_headers(n: usize) -> Vec<String> {
    if n == 2 {
        vec!["delta".to_string()]
    } else {
        pairs(n).into_iter().map(|(i, j)| format!("delta_{i}_{j}")).collect()
    }
}

fn finish(w: csv::Writer<Vec<u8>>) -> Vec<u8> {
    w.into_inner().expect("in-memory writer")
}

fn csv_writer() -> csv::Writer<Vec<u8>> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new())
}

pub fn render_records(rows: &[RecordRow]) -> Result<Vec<u8>> {
    if rows.is_empty() {
        return Err(CliError::Empty("run records"));
    }
    let n = rows.iter().map(|r| r.player + 1).max().unwrap_or(0);
    let mut w = csv_writer();
    let mut header: Vec<String> =
        ["iteration", "player", "m_cum", "shapley", "logdet_fisher_hat"].map(String::from).to_vec();
    header.extend(delta_headers(n));
    w.write_record(&header).expect("in-memory write");
    for r in rows {
        let mut rec = vec![
            r.iteration.to_string(),
            r.player.to_string(),
            r.m_cum.to_string(),
            r.shapley.to_string(),
            opt(r.logdet_fisher_hat),
        ];
        rec.extend(r.deltas.iter().map(|d| opt(*d)));
        w.write_record(&rec).expect("in-memory write");
    }
    Ok(finish(w))
}

pub fn render_summary(rows: &[SummaryRow]) -> Result<Vec<u8>> {
    if rows.is_empty() {
        return Err(CliError::Empty("delta summary"));
    }
    let mut w = csv_writer();
    w.write_record(["pair", "lowest", "average", "stdev", "iter"]).expect("in-memory write");
    for r in rows {
        let iter = r.iter.map(|t| t.to_string()).unwrap_or_else(|| "*".to_string());
        w.write_record([pair_label(r.pair), r.lowest.to_string(), r.average.to_string(), r.stdev.to_string(), iter])
            .expect("in-memory write");
    }
    Ok(finish(w))
}

pub fn render_synthetic(rows: &[SyntheticRow]) -> Result<Vec<u8>> {
    if rows.is_empty() {
        return Err(CliError::Empty("synthetic rows"));
    }
    let mut w = csv_writer();
    w.write_record(["m", "trial", "pair", "shapley_diff", "limit"]).expect("in-memory write");
    for r in rows {
        w.write_record([
            r.m.to_string(),
            r.trial.to_string(),
            pair_label(r.pair),
            r.shapley_diff.to_string(),
            r.limit.to_string(),
        ])
        .expect("in-memory write");
    }
    Ok(finish(w))
}

fn bad(what: &str, field: &str) -> CliError {
    CliError::Format { path: PathBuf::from(what), message: format!("cannot parse {field:?}") }
}

fn parse_num<T: std::str::FromStr>(s: &str, what: &str) -> Result<T> {
    s.parse().map_err(|_| bad(what, s))
}

fn parse_opt(s: &str, what: &str) -> Result<Option<f64>> {
    if s.is_empty() {
        Ok(None)
    } else {
        parse_num(s, what).map(Some)
    }
}

fn parse_pair(s: &str, what: &str) -> Result<(usize, usize)> {
    let (a, b) = s.split_once('-').ok_or_else(|| bad(what, s))?;
    Ok((parse_num(a, what)?, parse_num(b, what)?))
}

fn read_rows(bytes: &[u8], what: &str) -> Result<Vec<csv::StringRecord>> {
    csv::Reader::from_reader(bytes)
        .records()
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| CliError::Format { path: PathBuf::from(what), message: e.to_string() })
}

pub fn parse_records(bytes: &[u8]) -> Result<Vec<RecordRow>> {
    read_rows(bytes, "records")?
        .iter()
        .map(|r| {
            let f = |i: usize| r.get(i).unwrap_or("");
            Ok(RecordRow {
                iteration: parse_num(f(0), "records")?,
                player: parse_num(f(1), "records")?,
                m_cum: parse_num(f(2), "records")?,
                shapley: parse_num(f(3), "records")?,
                logdet_fisher_hat: parse_opt(f(4), "records")?,
                deltas: (5..r.len()).map(|i| parse_opt(f(i), "records")).collect::<Result<_>>()?,
            })
        })
        .collect()
}

pub fn parse_summary(bytes: &[u8]) -> Result<Vec<SummaryRow>> {
    read_rows(bytes, "summary")?
        .iter()
        .map(|r| {
            let f = |i: usize| r.get(i).unwrap_or("");
            Ok(SummaryRow {
                pair: parse_pair(f(0), "summary")?,
                lowest: parse_num(f(1), "summary")?,
                average: parse_num(f(2), "summary")?,
                stdev: parse_num(f(3), "summary")?,
                iter: if f(4) == "*" { None } else { Some(parse_num(f(4), "summary")?) },
            })
        })
        .collect()
}

pub fn parse_synthetic(bytes: &[u8]) -> Result<Vec<SyntheticRow>> {
    read_rows(bytes, "synthetic")?
        .iter()
        .map(|r| {
            let f = |i: usize| r.get(i).unwrap_or("");
            Ok(SyntheticRow {
                m: parse_num(f(0), "synthetic")?,
                trial: parse_num(f(1), "synthetic")?,
                pair: parse_pair(f(2), "synthetic")?,
                shapley_diff: parse_num(f(3), "synthetic")?,
                limit: parse_num(f(4), "synthetic")?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Style {
    Line,
    Dashed,
    Points,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
    pub style: Style,
    /// Index into the colour palette.
    pub colour: usize,
}

const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

/// A plain SVG chart: frame, min/max tick labels, one element per series and a legend.
pub fn render_svg(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> Result<Vec<u8>> {
    let all: Vec<(f64, f64)> =
        series.iter().flat_map(|s| s.points.iter().copied()).filter(|(x, y)| x.is_finite() && y.is_finite()).collect();
    if all.is_empty() {
        return Err(CliError::Empty("plot series"));
    }
    let (w, h, left, right, top, bottom) = (640.0, 400.0, 70.0, 150.0, 40.0, 50.0);
    let span = |v: &mut dyn Iterator<Item = f64>| {
        let (lo, hi) = v.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
        if hi > lo {
            (lo, hi)
        } else {
            (lo - 0.5, hi + 0.5)
        }
    };
    let (x0, x1) = span(&mut all.iter().map(|p| p.0));
    let (y0, y1) = span(&mut all.iter().map(|p| p.1));
    let px = |x: f64| left + (x - x0) / (x1 - x0) * (w - left - right);
    let py = |y: f64| h - bottom - (y - y0) / (y1 - y0) * (h - top - bottom);

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
    let _ = writeln!(s, r#"<rect x="0" y="0" width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#, w / 2.0, escape(title));
    let _ = writeln!(
        s,
        r#"<rect x="{left}" y="{top}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        w - left - right,
        h - top - bottom
    );
    let _ = writeln!(s, r#"<text x="{left}" y="{}" font-size="11">{}</text>"#, h - bottom + 15.0, tick(x0));
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" font-size="11" text-anchor="end">{}</text>"#,
        w - right,
        h - bottom + 15.0,
        tick(x1)
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" font-size="11" text-anchor="end">{}</text>"#,
        left - 4.0,
        h - bottom,
        tick(y0)
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" font-size="11" text-anchor="end">{}</text>"#,
        left - 4.0,
        top + 10.0,
        tick(y1)
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle" font-size="12">{}</text>"#,
        left + (w - left - right) / 2.0,
        h - 12.0,
        escape(x_label)
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{}" text-anchor="middle" font-size="12" transform="rotate(-90 16 {})">{}</text>"#,
        top + (h - top - bottom) / 2.0,
        top + (h - top - bottom) / 2.0,
        escape(y_label)
    );
    for (idx, ser) in series.iter().enumerate() {
        let colour = PALETTE[ser.colour % PALETTE.len()];
        let pts: Vec<(f64, f64)> = ser.points.iter().copied().filter(|(x, y)| x.is_finite() && y.is_finite()).collect();
        match ser.style {
            Style::Points => {
                let _ = writeln!(s, r#"<g fill="{colour}" fill-opacity="0.6">"#);
                for (x, y) in &pts {
                    let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="2.5"/>"#, px(*x), py(*y));
                }
                let _ = writeln!(s, "</g>");
            }
            Style::Line | Style::Dashed => {
                let coords: Vec<String> = pts.iter().map(|(x, y)| format!("{:.2},{:.2}", px(*x), py(*y))).collect();
                let dash = if ser.style == Style::Dashed { r#" stroke-dasharray="6 4""# } else { "" };
                let _ = writeln!(
                    s,
                    r#"<polyline fill="none" stroke="{colour}" stroke-width="1.5"{dash} points="{}"/>"#,
                    coords.join(" ")
                );
            }
        }
        let ly = top + 14.0 + 16.0 * idx as f64;
        let _ =
            writeln!(s, r#"<rect x="{}" y="{}" width="12" height="4" fill="{colour}"/>"#, w - right + 10.0, ly - 4.0);
        let _ = writeln!(s, r#"<text x="{}" y="{ly}" font-size="11">{}</text>"#, w - right + 28.0, escape(&ser.name));
    }
    s.push_str("</svg>\n");
    Ok(s.into_bytes())
}

fn tick(v: f64) -> String {
    if v != 0.0 && (v.abs() >= 1e5 || v.abs() < 1e-3) {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Git-style object hash: SHA-256 over `"blob <len>\0"` followed by the content.
pub fn git_blob_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    hex::encode(h.finalize())
}

#[derive(Debug, Clone, Serialize)]
pub struct FileHash {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest<'a, C: Serialize> {
    pub tool: &'static str,
    pub version: &'static str,
    pub experiment: &'static str,
    pub seed: u64,
    pub config_sha256: String,
    pub inputs: Vec<FileHash>,
    pub outputs: Vec<FileHash>,
    pub resolved_config: &'a C,
}

/// Collects rendered files and writes them, manifest last.
#[derive(Debug)]
pub struct OutputSet {
    dir: PathBuf,
    files: Vec<(String, Vec<u8>)>,
}

impl OutputSet {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into(), files: Vec::new() }
    }

    pub fn add(&mut self, name: &str, bytes: Vec<u8>) {
        self.files.push((name.to_string(), bytes));
    }

    /// Writes every file and then `manifest.json`; returns the written paths.
    pub fn write_with_manifest<C: Serialize>(
        self,
        experiment: &'static str,
        seed: u64,
        config: &C,
        inputs: &[(String, Vec<u8>)],
    ) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(&self.dir).map_err(|e| CliError::io(&self.dir, e))?;
        let mut written = Vec::with_capacity(self.files.len() + 1);
        for (name, bytes) in &self.files {
            written.push(write_file(&self.dir.join(name), bytes)?);
        }
        let config_bytes = serde_json::to_vec(config).expect("config serializes");
        let manifest = Manifest {
            tool: "fairgame",
            version: env!("CARGO_PKG_VERSION"),
            experiment,
            seed,
            config_sha256: sha256_hex(&config_bytes),
            inputs: inputs.iter().map(|(p, b)| FileHash { path: p.clone(), sha256: git_blob_hash(b) }).collect(),
            outputs: self.files.iter().map(|(p, b)| FileHash { path: p.clone(), sha256: sha256_hex(b) }).collect(),
            resolved_config: config,
        };
        let mut text = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
        text.push(b'\n');
        written.push(write_file(&self.dir.join("manifest.json"), &text)?);
        Ok(written)
    }
}

/// Renders run records to `path`; nothing is created when there is nothing to write.
pub fn emit_records(path: &Path, rows: &[RecordRow]) -> Result<PathBuf> {
    write_file(path, &render_records(rows)?)
}

pub fn emit_summary(path: &Path, rows: &[SummaryRow]) -> Result<PathBuf> {
    write_file(path, &render_summary(rows)?)
}

pub fn emit_synthetic(path: &Path, rows: &[SyntheticRow]) -> Result<PathBuf> {
    write_file(path, &render_synthetic(rows)?)
}

pub fn emit_svg(path: &Path, title: &str, x_label: &str, y_label: &str, series: &[Series]) -> Result<PathBuf> {
    write_file(path, &render_svg(title, x_label, y_label, series)?)
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<PathBuf> {
    std::fs::write(path, bytes).map_err(|e| CliError::io(path, e))?;
    Ok(path.to_path_buf())
}
