//! Trajectory CSV serialisation and the offline summary over such files.

use std::fmt::Write as _;
use std::fs::File;
use std::path::{Path, PathBuf};

use crate::diagnostics::within_bound;

use super::{ExperimentConfig, ExperimentError, MethodOutcome};

pub const COLUMNS: [&str; 15] = [
    "seed",
    "method_id",
    "divergence",
    "schedule",
    "regularized",
    "k",
    "eta_k",
    "value_gap",
    "q_gap_max",
    "policy_distance",
    "support_match",
    "max_kkt_residual",
    "d_star",
    "bound_value",
    "wall_time_ms",
];

/// 17 significant digits, enough to round-trip any `f64`.
fn num(x: f64) -> String {
    format!("{x:.16e}")
}

fn opt_num(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

fn writer(path: &Path) -> Result<csv::Writer<File>, ExperimentError> {
    let file = File::create(path).map_err(|e| ExperimentError::io(path, e))?;
    Ok(csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(file))
}

fn csv_err(path: &Path, e: impl std::fmt::Display) -> ExperimentError {
    ExperimentError::Csv {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

pub(super) fn write_trajectory(
    config: &ExperimentConfig,
    outcome: &MethodOutcome,
    bounds: &[Option<f64>],
) -> Result<(), ExperimentError> {
    let path = &outcome.csv_path;
    let mut w = writer(path)?;
    w.write_record(COLUMNS).map_err(|e| csv_err(path, e))?;
    let seed = config.seed.to_string();
    for (rec, bound) in outcome.records.iter().zip(bounds) {
        let wall = if config.timing {
            num(rec.wall_time.as_secs_f64() * 1e3)
        } else {
            String::new()
        };
        let row = [
            seed.clone(),
            outcome.id.clone(),
            outcome.divergence.clone(),
            outcome.schedule.clone(),
            outcome.regularized.to_string(),
            rec.k.to_string(),
            opt_num(rec.eta_k),
            num(rec.value_gap),
            num(rec.q_gap_max),
            num(rec.policy_distance),
            rec.support_match.to_string(),
            num(rec.max_kkt_residual),
            opt_num(rec.d_star),
            opt_num(*bound),
            wall,
        ];
        w.write_record(&row).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| ExperimentError::io(path, e))
}

/// One parsed trajectory row.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvRow {
    pub seed: u64,
    pub method_id: String,
    pub divergence: String,
    pub schedule: String,
    pub regularized: bool,
    pub k: usize,
    pub eta_k: Option<f64>,
    pub value_gap: f64,
    pub q_gap_max: f64,
    pub policy_distance: f64,
    pub support_match: bool,
    pub max_kkt_residual: f64,
    pub d_star: Option<f64>,
    pub bound_value: Option<f64>,
    pub wall_time_ms: Option<f64>,
}

fn field<T: std::str::FromStr>(path: &Path, line: u64, name: &str, raw: &str) -> Result<T, ExperimentError> {
    raw.parse()
        .map_err(|_| csv_err(path, format!("line {line}: column `{name}`: cannot parse `{raw}`")))
}

fn opt_field(path: &Path, line: u64, name: &str, raw: &str) -> Result<Option<f64>, ExperimentError> {
    if raw.is_empty() {
        Ok(None)
    } else {
        field(path, line, name, raw).map(Some)
    }
}

/// Reads one trajectory file, checking the header against [`COLUMNS`].
pub fn read_trajectories(path: &Path) -> Result<Vec<CsvRow>, ExperimentError> {
    let file = File::open(path).map_err(|e| ExperimentError::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let header = reader.headers().map_err(|e| csv_err(path, e))?;
    if header.iter().ne(COLUMNS) {
        return Err(csv_err(path, "header does not match the trajectory schema"));
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let r = record.map_err(|e| csv_err(path, e))?;
        let line = r.position().map_or(0, |p| p.line());
        let get = |i: usize| r.get(i).unwrap_or("");
        rows.push(CsvRow {
            seed: field(path, line, COLUMNS[0], get(0))?,
            method_id: get(1).to_string(),
            divergence: get(2).to_string(),
            schedule: get(3).to_string(),
            regularized: field(path, line, COLUMNS[4], get(4))?,
            k: field(path, line, COLUMNS[5], get(5))?,
            eta_k: opt_field(path, line, COLUMNS[6], get(6))?,
            value_gap: field(path, line, COLUMNS[7], get(7))?,
            q_gap_max: field(path, line, COLUMNS[8], get(8))?,
            policy_distance: field(path, line, COLUMNS[9], get(9))?,
            support_match: field(path, line, COLUMNS[10], get(10))?,
            max_kkt_residual: field(path, line, COLUMNS[11], get(11))?,
            d_star: opt_field(path, line, COLUMNS[12], get(12))?,
            bound_value: opt_field(path, line, COLUMNS[13], get(13))?,
            wall_time_ms: opt_field(path, line, COLUMNS[14], get(14))?,
        });
    }
    Ok(rows)
}

/// Per-method digest of trajectory files.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodDigest {
    pub method_id: String,
    pub rows: usize,
    pub final_gap: f64,
    pub stop_iteration: Option<usize>,
    /// Largest `value_gap − bound_value`, when any row carries a bound.
    pub max_bound_excess: Option<f64>,
    pub bound_violations: usize,
    pub wall_time_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub methods: Vec<MethodDigest>,
    pub text: String,
}

impl Summary {
    pub fn violations(&self) -> usize {
        self.methods.iter().map(|m| m.bound_violations).sum()
    }
}

/// Summarises trajectory files; methods appear in first-seen order.
pub fn summarize(paths: &[PathBuf]) -> Result<Summary, ExperimentError> {
    if paths.is_empty() {
        return Err(ExperimentError::invalid(
            "summarize",
            "paths",
            "no trajectory files given",
        ));
    }
    let mut methods: Vec<MethodDigest> = Vec::new();
    for path in paths {
        let rows = read_trajectories(path)?;
        if rows.is_empty() {
            return Err(csv_err(path, "no trajectory rows"));
        }
        for row in rows {
            let idx = match methods.iter().position(|m| m.method_id == row.method_id) {
                Some(i) => i,
                None => {
                    methods.push(MethodDigest {
                        method_id: row.method_id.clone(),
                        rows: 0,
                        final_gap: f64::NAN,
                        stop_iteration: None,
                        max_bound_excess: None,
                        bound_violations: 0,
                        wall_time_ms: None,
                    });
                    methods.len() - 1
                }
            };
            let m = &mut methods[idx];
            m.rows += 1;
            m.final_gap = row.value_gap;
            if row.support_match && m.stop_iteration.is_none() {
                m.stop_iteration = Some(row.k);
            }
            if let Some(bound) = row.bound_value {
                let excess = row.value_gap - bound;
                m.max_bound_excess = Some(m.max_bound_excess.map_or(excess, |e: f64| e.max(excess)));
                if !within_bound(row.value_gap, bound) {
                    m.bound_violations += 1;
                }
            }
            if row.wall_time_ms.is_some() {
                m.wall_time_ms = row.wall_time_ms;
            }
        }
    }

    let mut text = String::new();
    for m in &methods {
        let _ = writeln!(text, "[{}]", m.method_id);
        let _ = writeln!(text, "  rows = {}", m.rows);
        let _ = writeln!(text, "  final value gap = {:.6e}", m.final_gap);
        match m.stop_iteration {
            Some(k) => {
                let _ = writeln!(text, "  support match at k = {k}");
            }
            None => {
                let _ = writeln!(text, "  support match: not reached");
            }
        }
        match m.max_bound_excess {
            Some(e) => {
                let _ = writeln!(text, "  max bound excess = {e:.6e} ({} violations)", m.bound_violations);
            }
            None => {
                let _ = writeln!(text, "  max bound excess: no bound recorded");
            }
        }
        match m.wall_time_ms {
            Some(t) => {
                let _ = writeln!(text, "  wall time = {t:.3} ms");
            }
            None => {
                let _ = writeln!(text, "  wall time: not recorded");
            }
        }
    }
    let total: usize = methods.iter().map(|m| m.bound_violations).sum();
    let _ = writeln!(text, "total bound violations = {total}");
    Ok(Summary { methods, text })
}
