//! Per-patch recovery tables, illumination sweep tables, and the experiment
//! drivers behind the `hdrcal` subcommands.

pub mod commands;
pub mod config;

use std::fmt::Write as _;

use crate::fusion::PatchDb;
use crate::io::{IoError, KeyValues};

/// Suffix of the derived error columns.
const ERROR_SUFFIX: &str = "_abs_error";
/// Prefix of columns copied from physical-camera measurements.
pub const DISPLAY_PREFIX: &str = "camera_";

/// Measured patch dB per algorithm, side by side.
#[derive(Debug, Clone, PartialEq)]
pub struct RecoveryReport {
    pub design_db: Vec<f64>,
    /// `(algorithm, measured dB per patch)`.
    pub measured: Vec<(String, Vec<f64>)>,
    /// Reference columns shown next to the run, never compared against.
    pub display: Vec<(String, Vec<f64>)>,
    pub metadata: KeyValues,
}

impl RecoveryReport {
    pub fn new(design_db: Vec<f64>) -> Self {
        Self { design_db, measured: Vec::new(), display: Vec::new(), metadata: KeyValues::new() }
    }

    pub fn push_measured(&mut self, name: &str, rows: &[PatchDb]) {
        self.measured.push((name.to_string(), rows.iter().map(|r| r.measured_db).collect()));
    }

    /// Attaches a reference column if it lines up with this report's
    /// design dB values.
    pub fn push_display(&mut self, name: &str, design_db: &[f64], values: &[f64]) -> bool {
        if design_db != self.design_db.as_slice() || values.len() != design_db.len() {
            return false;
        }
        self.display.push((format!("{DISPLAY_PREFIX}{name}"), values.to_vec()));
        true
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.measured.iter().find(|(n, _)| n == name).map(|(_, v)| v.as_slice())
    }

    pub fn abs_errors(&self, name: &str) -> Option<Vec<f64>> {
        self.column(name).map(|m| m.iter().zip(&self.design_db).map(|(m, d)| (m - d).abs()).collect())
    }

    pub fn max_abs_error(&self, name: &str) -> Option<f64> {
        self.abs_errors(name).map(|e| e.into_iter().fold(0.0, f64::max))
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.metadata.iter() {
            let _ = writeln!(out, "# {k}={v}");
        }
        let mut header = vec!["design_db".to_string()];
        header.extend(self.measured.iter().map(|(n, _)| n.clone()));
        header.extend(self.measured.iter().map(|(n, _)| format!("{n}{ERROR_SUFFIX}")));
        header.extend(self.display.iter().map(|(n, _)| n.clone()));
        let errors: Vec<Vec<f64>> = self.measured.iter().map(|(n, _)| self.abs_errors(n).unwrap_or_default()).collect();
        let mut w = csv::Writer::from_writer(Vec::new());
        let _ = w.write_record(&header);
        for (r, d) in self.design_db.iter().enumerate() {
            let mut row = vec![d.to_string()];
            row.extend(self.measured.iter().map(|(_, v)| v[r].to_string()));
            row.extend(errors.iter().map(|e| e[r].to_string()));
            row.extend(self.display.iter().map(|(_, v)| v[r].to_string()));
            let _ = w.write_record(&row);
        }
        out.push_str(&String::from_utf8(w.into_inner().unwrap_or_default()).unwrap_or_default());
        out
    }

    pub fn from_csv(text: &str) -> Result<Self, IoError> {
        let metadata =
            KeyValues::parse(&text.lines().filter_map(|l| l.strip_prefix("# ")).collect::<Vec<_>>().join("\n"))?;
        let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
        let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
        if header.first().map(String::as_str) != Some("design_db") {
            return Err(IoError::Format("report csv: first column must be design_db".into()));
        }
        let mut columns: Vec<Vec<f64>> = vec![Vec::new(); header.len()];
        for rec in reader.records() {
            let rec = rec?;
            for (i, col) in columns.iter_mut().enumerate() {
                let field = rec.get(i).unwrap_or("");
                col.push(field.parse().map_err(|_| {
                    IoError::Format(format!("report csv: bad number {field:?} in column {}", header[i]))
                })?);
            }
        }
        let mut report = Self::new(columns[0].clone());
        report.metadata = metadata;
        for (name, values) in header.iter().zip(columns).skip(1) {
            if name.starts_with(DISPLAY_PREFIX) {
                report.display.push((name.clone(), values));
            } else if !name.ends_with(ERROR_SUFFIX) {
                report.measured.push((name.clone(), values));
            }
        }
        Ok(report)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SweepStatus {
    Ok,
    /// The brightest zone cannot be brought under `v_max`.
    Unreachable,
    /// Some planned exposure falls outside the sensor limits.
    Infeasible,
    Failed,
}

impl SweepStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            SweepStatus::Ok => "ok",
            SweepStatus::Unreachable => "unreachable",
            SweepStatus::Infeasible => "infeasible",
            SweepStatus::Failed => "failed",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        [Self::Ok, Self::Unreachable, Self::Infeasible, Self::Failed].into_iter().find(|v| v.as_str() == s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub factor: f64,
    pub status: SweepStatus,
    pub t1: Option<f64>,
    pub n_images: Option<usize>,
    pub max_abs_error: Option<f64>,
    /// Measured dB per patch when the run succeeded.
    pub measured: Option<Vec<f64>>,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub design_db: Vec<f64>,
    pub rows: Vec<SweepRow>,
}

fn opt<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map(ToString::to_string).unwrap_or_default()
}

fn parse_opt<T: std::str::FromStr>(s: &str) -> Result<Option<T>, IoError> {
    if s.is_empty() {
        return Ok(None);
    }
    s.parse().map(Some).map_err(|_| IoError::Format(format!("sweep csv: bad value {s:?}")))
}

impl SweepReport {
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header: Vec<String> =
            ["factor", "status", "t1", "n_images", "max_abs_error_db"].map(String::from).to_vec();
        header.extend(self.design_db.iter().map(|d| format!("db_{d}")));
        header.push("message".into());
        let _ = w.write_record(&header);
        for r in &self.rows {
            let mut row = vec![
                r.factor.to_string(),
                r.status.as_str().to_string(),
                opt(&r.t1),
                opt(&r.n_images),
                opt(&r.max_abs_error),
            ];
            match &r.measured {
                Some(m) => row.extend(m.iter().map(ToString::to_string)),
                None => row.extend(self.design_db.iter().map(|_| String::new())),
            }
            row.push(r.message.clone());
            let _ = w.write_record(&row);
        }
        String::from_utf8(w.into_inner().unwrap_or_default()).unwrap_or_default()
    }

    pub fn from_csv(text: &str) -> Result<Self, IoError> {
        let mut reader = csv::Reader::from_reader(text.as_bytes());
        let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
        let design_db = header
            .iter()
            .filter_map(|h| h.strip_prefix("db_"))
            .map(|d| d.parse().map_err(|_| IoError::Format(format!("sweep csv: bad column {d:?}"))))
            .collect::<Result<Vec<f64>, _>>()?;
        let n = design_db.len();
        if header.len() != n + 6 {
            return Err(IoError::Format("sweep csv: unexpected header".into()));
        }
        let mut rows = Vec::new();
        for rec in reader.records() {
            let rec = rec?;
            let f = |i: usize| rec.get(i).unwrap_or("");
            let measured: Vec<Option<f64>> = (5..5 + n).map(|i| parse_opt(f(i))).collect::<Result<_, _>>()?;
            rows.push(SweepRow {
                factor: parse_opt(f(0))?.ok_or_else(|| IoError::Format("sweep csv: missing factor".into()))?,
                status: SweepStatus::parse(f(1))
                    .ok_or_else(|| IoError::Format(format!("sweep csv: bad status {:?}", f(1))))?,
                t1: parse_opt(f(2))?,
                n_images: parse_opt(f(3))?,
                max_abs_error: parse_opt(f(4))?,
                measured: measured.into_iter().collect(),
                message: f(5 + n).to_string(),
            });
        }
        Ok(Self { design_db, rows })
    }
}
