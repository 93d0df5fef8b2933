use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{BenchmarkReport, ReportMetadata, ReportRow};
use crate::error::{Error, Result};

const CSV_HEADER: [&str; 6] = ["method", "level", "psnr", "ssim", "time_s", "n"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Markdown,
}

impl ReportFormat {
    /// `.md` is Markdown, anything else CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("md") => Self::Markdown,
            _ => Self::Csv,
        }
    }
}

fn check_rows(rows: &[ReportRow]) -> Result<()> {
    if rows.is_empty() {
        return Err(Error::InvalidArgument("report has no rows".into()));
    }
    Ok(())
}

pub fn render_csv(rows: &[ReportRow]) -> Result<String> {
    check_rows(rows)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    let enc = |e: csv::Error| Error::InvalidArgument(format!("report encoding: {e}"));
    w.write_record(CSV_HEADER).map_err(enc)?;
    for r in rows {
        w.write_record([
            r.method.clone(),
            r.level.to_string(),
            r.psnr.to_string(),
            r.ssim.to_string(),
            r.time_s.to_string(),
            r.n.to_string(),
        ])
        .map_err(enc)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::InvalidArgument(format!("report encoding: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn cell(r: Option<&ReportRow>) -> String {
    match r {
        Some(r) if r.n > 0 => format!("{:.2} / {:.4}", r.psnr, r.ssim),
        Some(_) => "failed".into(),
        None => "-".into(),
    }
}

/// Methods as rows, levels as columns, `PSNR / SSIM` per cell, plus a time column.
pub fn render_markdown(rows: &[ReportRow], metadata: Option<&ReportMetadata>) -> Result<String> {
    check_rows(rows)?;
    let mut methods: Vec<&str> = Vec::new();
    let mut levels: Vec<usize> = Vec::new();
    for r in rows {
        if !methods.contains(&r.method.as_str()) {
            methods.push(&r.method);
        }
        if !levels.contains(&r.level) {
            levels.push(r.level);
        }
    }
    levels.sort_unstable();

    let mut out = String::new();
    if let Some(m) = metadata {
        writeln!(
            out,
            "Dataset manifest sha256 `{}`, toolkit {}, seed {}, reference {}.\n",
            m.manifest_sha256,
            m.version,
            m.seed,
            m.reference.label()
        )
        .unwrap();
    }
    out.push_str(
        "Cells are mean PSNR (dB) / mean SSIM over the test images. \
         Time is mean wall-clock seconds per image, transform included, file I/O excluded.\n\n",
    );
    out.push_str("| Method |");
    for l in &levels {
        write!(out, " {l} |").unwrap();
    }
    out.push_str(" Time (s) |\n|---|");
    for _ in &levels {
        out.push_str("---|");
    }
    out.push_str("---|\n");
    for m in methods {
        write!(out, "| {m} |").unwrap();
        let (mut t, mut n) = (0.0, 0usize);
        for l in &levels {
            let r = rows.iter().find(|r| r.method == m && r.level == *l);
            if let Some(r) = r.filter(|r| r.n > 0) {
                t += r.time_s * r.n as f64;
                n += r.n;
            }
            write!(out, " {} |", cell(r)).unwrap();
        }
        if n > 0 {
            writeln!(out, " {:.3} |", t / n as f64).unwrap();
        } else {
            out.push_str(" - |\n");
        }
    }
    Ok(out)
}

/// Writes the report; an empty report is rejected before anything is written.
pub fn emit_report(report: &BenchmarkReport, path: &Path, format: ReportFormat) -> Result<()> {
    let text = match format {
        ReportFormat::Csv => render_csv(&report.rows)?,
        ReportFormat::Markdown => render_markdown(&report.rows, Some(&report.metadata))?,
    };
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Parses a CSV report back into rows (failure details are not stored).
pub fn read_report_csv(path: &Path) -> Result<Vec<ReportRow>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::Reader::from_reader(bytes.as_slice());
    let bad = |m: String| Error::InvalidArgument(format!("{}: {m}", path.display()));
    let header = r.headers().map_err(|e| bad(e.to_string()))?;
    if header.iter().ne(CSV_HEADER) {
        return Err(bad(format!("header must be {}", CSV_HEADER.join(","))));
    }
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let f = |k: usize| rec.get(k).unwrap_or("");
        let num = |k: usize| f(k).parse::<f64>().map_err(|_| bad(format!("row {}: bad {}", i + 1, CSV_HEADER[k])));
        let int = |k: usize| f(k).parse::<usize>().map_err(|_| bad(format!("row {}: bad {}", i + 1, CSV_HEADER[k])));
        rows.push(ReportRow {
            method: f(0).to_owned(),
            level: int(1)?,
            psnr: num(2)?,
            ssim: num(3)?,
            time_s: num(4)?,
            n: int(5)?,
            failures: 0,
            error: None,
        });
    }
    check_rows(&rows)?;
    Ok(rows)
}
