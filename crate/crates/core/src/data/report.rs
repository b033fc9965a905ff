//! Output files: fit results as JSON, sweep and LOO tables as CSV.
//!
//! Numbers are written with the shortest decimal that parses back to the
//! same `f64`, so every file round-trips exactly. Non-finite values in the
//! CSV tables are spelled `NaN`, `inf` and `-inf`; missing optional values
//! are empty cells. Table files may begin with `# ` comment lines.

use std::io::{BufRead, BufReader, Read, Write};

use serde::{Deserialize, Serialize};

use crate::ec::{FitResult, FitSettings};
use crate::error::{Error, Result};
use crate::hyper::SweepRecord;
use crate::loocv::LooReport;
use crate::prior::PriorSpec;

/// Serialised form of a fit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitFile {
    pub m: Vec<f64>,
    #[serde(rename = "E")]
    pub e: f64,
    pub h: Vec<f64>,
    #[serde(rename = "Mi")]
    pub mi: Vec<f64>,
    pub inclusion_probs: Vec<f64>,
    pub free_energy: f64,
    pub converged: bool,
    pub iterations: usize,
    pub settings: FitSettings,
    pub beta: f64,
    pub prior: PriorSpec,
}

impl From<&FitResult> for FitFile {
    fn from(fit: &FitResult) -> Self {
        let s = &fit.state;
        Self {
            m: s.m.as_slice().to_vec(),
            e: s.e,
            h: s.h.as_slice().to_vec(),
            mi: s.mi.as_slice().to_vec(),
            inclusion_probs: fit.inclusion_probs.as_slice().to_vec(),
            free_energy: s.free_energy,
            converged: s.converged,
            iterations: s.iterations,
            settings: fit.settings,
            beta: fit.beta,
            prior: fit.prior,
        }
    }
}

pub fn write_fit_json<W: Write>(writer: W, fit: &FitResult) -> Result<()> {
    let mut w = writer;
    serde_json::to_writer_pretty(&mut w, &FitFile::from(fit))?;
    writeln!(w)?;
    Ok(())
}

pub fn read_fit_json<R: Read>(reader: R) -> Result<FitFile> {
    Ok(serde_json::from_reader(reader)?)
}

/// Columns of a sweep table. The first seven are the core schema; the rest
/// carry diagnostics.
pub const SWEEP_HEADER: [&str; 10] = [
    "beta",
    "rho",
    "sigma_w2",
    "eps",
    "eps_loo",
    "free_energy",
    "converged",
    "expected_support",
    "iterations",
    "failure",
];

/// Columns of a LOO table; the last two are only present when refits ran.
pub const LOO_HEADER: [&str; 5] = ["mu", "residual_full", "leverage", "residual_loo", "flagged"];
pub const LOO_REFIT_COLUMNS: [&str; 2] = ["residual_loo_refit", "failure"];

fn num(v: f64) -> String {
    v.to_string()
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

fn comment_lines<W: Write>(w: &mut W, comments: &[String]) -> Result<()> {
    for c in comments {
        for line in c.lines() {
            writeln!(w, "# {line}")?;
        }
    }
    Ok(())
}

pub fn write_sweep_csv<W: Write>(writer: W, records: &[SweepRecord], comments: &[String]) -> Result<()> {
    let mut w = writer;
    comment_lines(&mut w, comments)?;
    let mut out = csv::Writer::from_writer(w);
    out.write_record(SWEEP_HEADER)?;
    for r in records {
        out.write_record([
            num(r.beta),
            num(r.rho),
            opt(r.sigma_w2),
            num(r.eps),
            num(r.eps_loo),
            num(r.free_energy),
            r.converged.to_string(),
            num(r.expected_support),
            r.iterations.to_string(),
            r.failure.clone().unwrap_or_default(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Comment lines (without the `# ` prefix) and the CSV body that follows.
pub fn split_comments<R: Read>(reader: R) -> Result<(Vec<String>, String)> {
    let mut comments = Vec::new();
    let mut body = String::new();
    let mut in_header = true;
    for line in BufReader::new(reader).lines() {
        let line = line?;
        if in_header {
            if let Some(c) = line.strip_prefix('#') {
                comments.push(c.strip_prefix(' ').unwrap_or(c).to_string());
                continue;
            }
            in_header = false;
        }
        body.push_str(&line);
        body.push('\n');
    }
    Ok((comments, body))
}

fn parse_f64(cell: &str, row: usize, column: usize) -> Result<f64> {
    cell.parse().map_err(|_| Error::NonNumericCell {
        row,
        column,
        value: cell.to_string(),
    })
}

fn parse_opt(cell: &str, row: usize, column: usize) -> Result<Option<f64>> {
    if cell.is_empty() {
        Ok(None)
    } else {
        parse_f64(cell, row, column).map(Some)
    }
}

fn parse_bool(cell: &str, row: usize, column: usize) -> Result<bool> {
    cell.parse().map_err(|_| Error::Parse {
        row,
        column,
        message: format!("expected true or false, got {cell:?}"),
    })
}

fn parse_usize(cell: &str, row: usize, column: usize) -> Result<usize> {
    cell.parse().map_err(|_| Error::Parse {
        row,
        column,
        message: format!("expected a count, got {cell:?}"),
    })
}

fn check_header(found: &csv::StringRecord, expected: &[&str]) -> Result<()> {
    if found.iter().ne(expected.iter().copied()) {
        return Err(Error::Parse {
            row: 1,
            column: 0,
            message: format!("expected header {}", expected.join(",")),
        });
    }
    Ok(())
}

/// Reads a table written by [`write_sweep_csv`], returning it with its comments.
pub fn read_sweep_csv<R: Read>(reader: R) -> Result<(Vec<SweepRecord>, Vec<String>)> {
    let (comments, body) = split_comments(reader)?;
    let mut rdr = csv::Reader::from_reader(body.as_bytes());
    check_header(rdr.headers()?, &SWEEP_HEADER)?;
    let mut records = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = i + 2;
        let cell = |j: usize| rec.get(j).unwrap_or("");
        records.push(SweepRecord {
            beta: parse_f64(cell(0), row, 1)?,
            rho: parse_f64(cell(1), row, 2)?,
            sigma_w2: parse_opt(cell(2), row, 3)?,
            eps: parse_f64(cell(3), row, 4)?,
            eps_loo: parse_f64(cell(4), row, 5)?,
            free_energy: parse_f64(cell(5), row, 6)?,
            converged: parse_bool(cell(6), row, 7)?,
            expected_support: parse_f64(cell(7), row, 8)?,
            iterations: parse_usize(cell(8), row, 9)?,
            failure: Some(cell(9)).filter(|s| !s.is_empty()).map(str::to_string),
        });
    }
    Ok((records, comments))
}

/// One row of a LOO table.
#[derive(Clone, Debug, PartialEq)]
pub struct LooRow {
    pub mu: usize,
    pub residual_full: f64,
    pub leverage: f64,
    /// Residual from the approximate formula.
    pub residual_loo: f64,
    pub flagged: bool,
    pub residual_loo_refit: Option<f64>,
    pub failure: Option<String>,
}

/// Writes per-sample LOO residuals. Refit columns are added when `report`
/// came from a refitting harness.
pub fn write_loo_csv<W: Write>(writer: W, report: &LooReport, comments: &[String]) -> Result<()> {
    let refits = report.samples.iter().any(|s| s.residual_loo_literal.is_some() || s.failure.is_some());
    let mut w = writer;
    comment_lines(&mut w, comments)?;
    let mut out = csv::Writer::from_writer(w);
    let mut header: Vec<&str> = LOO_HEADER.to_vec();
    if refits {
        header.extend(LOO_REFIT_COLUMNS);
    }
    out.write_record(&header)?;
    for s in &report.samples {
        let mut rec = vec![
            s.index.to_string(),
            num(s.residual_full),
            num(s.leverage),
            num(s.residual_loo_approx),
            s.flagged.to_string(),
        ];
        if refits {
            rec.push(opt(s.residual_loo_literal));
            rec.push(s.failure.clone().unwrap_or_default());
        }
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_loo_csv<R: Read>(reader: R) -> Result<(Vec<LooRow>, Vec<String>)> {
    let (comments, body) = split_comments(reader)?;
    let mut rdr = csv::Reader::from_reader(body.as_bytes());
    let header = rdr.headers()?.clone();
    let refits = header.len() == LOO_HEADER.len() + LOO_REFIT_COLUMNS.len();
    let expected: Vec<&str> = if refits {
        LOO_HEADER.iter().chain(LOO_REFIT_COLUMNS.iter()).copied().collect()
    } else {
        LOO_HEADER.to_vec()
    };
    check_header(&header, &expected)?;
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = i + 2;
        let cell = |j: usize| rec.get(j).unwrap_or("");
        rows.push(LooRow {
            mu: parse_usize(cell(0), row, 1)?,
            residual_full: parse_f64(cell(1), row, 2)?,
            leverage: parse_f64(cell(2), row, 3)?,
            residual_loo: parse_f64(cell(3), row, 4)?,
            flagged: parse_bool(cell(4), row, 5)?,
            residual_loo_refit: if refits { parse_opt(cell(5), row, 6)? } else { None },
            failure: if refits {
                Some(cell(6)).filter(|s| !s.is_empty()).map(str::to_string)
            } else {
                None
            },
        });
    }
    Ok((rows, comments))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_sweep_table_has_header_only() {
        let mut buf = Vec::new();
        write_sweep_csv(&mut buf, &[], &[]).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap().trim_end(), SWEEP_HEADER.join(","));
        let (rows, comments) = read_sweep_csv(buf.as_slice()).unwrap();
        assert!(rows.is_empty() && comments.is_empty());
    }

    #[test]
    fn sweep_rows_round_trip() {
        let rows = vec![
            SweepRecord {
                beta: 0.1 + 0.2,
                rho: 1.0 / 3.0,
                sigma_w2: None,
                eps: 1e-300,
                eps_loo: f64::NAN,
                free_energy: -12.5,
                converged: false,
                expected_support: 2.0,
                iterations: 7,
                failure: Some("fit did not converge, twice".into()),
            },
            SweepRecord {
                beta: 10.0,
                rho: 0.1,
                sigma_w2: Some(std::f64::consts::PI),
                eps: 0.0123456789012345,
                eps_loo: 0.02,
                free_energy: 3.0,
                converged: true,
                expected_support: 9.75,
                iterations: 30,
                failure: None,
            },
        ];
        let mut buf = Vec::new();
        write_sweep_csv(&mut buf, &rows, &["seed = 3".into()]).unwrap();
        let (back, comments) = read_sweep_csv(buf.as_slice()).unwrap();
        assert_eq!(comments, vec!["seed = 3"]);
        assert!(back[0].eps_loo.is_nan());
        assert_eq!(back[1], rows[1]);
        assert_eq!(back[0].beta.to_bits(), rows[0].beta.to_bits());
        assert_eq!(back[0].failure, rows[0].failure);
    }

    #[test]
    fn wrong_header_is_rejected() {
        assert!(matches!(read_sweep_csv("a,b\n1,2\n".as_bytes()), Err(Error::Parse { .. })));
    }
}
