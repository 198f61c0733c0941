//! Per-tick trace records and their CSV form.

use std::fmt::Write as _;
use std::io;
use std::path::Path;

use serde::Serialize;

use crate::controller::ConstraintLabel;
use crate::qp::QpStatus;
use crate::se3::{Pose, Twist, Wrench};

use super::{summary::RunSummary, PlantSample};

pub const TRACE_HEADER: &str =
    "t,px,py,pz,qw,qx,qy,qz,vx,vy,vz,wx,wy,wz,fx,fy,fz,tx,ty,tz,h_fx,h_fy,h_fz,h_tx,h_ty,h_tz,gamma,status";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRecord {
    pub t: f64,
    pub pose: Pose,
    /// Twist commanded at this tick and held until the next one.
    pub twist: Twist,
    /// Wrench the controller saw (bias removed, filtered if configured).
    pub wrench: Wrench,
    pub raw_wrench: Wrench,
    pub margins: [f64; 6],
    pub slack: f64,
    pub active: Vec<ConstraintLabel>,
    pub status: Option<QpStatus>,
    pub desired: Pose,
    pub limits: Wrench,
}

fn push_all(line: &mut String, values: &[f64]) {
    for v in values {
        write!(line, ",{v}").unwrap();
    }
}

impl TraceRecord {
    pub fn csv_line(&self) -> String {
        let mut line = format!("{}", self.t);
        let p = self.pose.position;
        push_all(&mut line, &[p.x, p.y, p.z]);
        push_all(&mut line, &self.pose.wxyz());
        push_all(&mut line, self.twist.to_vector().as_slice());
        push_all(&mut line, &self.wrench.to_array());
        push_all(&mut line, &self.margins);
        push_all(&mut line, &[self.slack]);
        line.push(',');
        line.push_str(super::status_str(self.status));
        line
    }
}

pub fn trace_csv(trace: &[TraceRecord]) -> String {
    let mut out = String::with_capacity(64 + trace.len() * 400);
    out.push_str(TRACE_HEADER);
    out.push('\n');
    for r in trace {
        out.push_str(&r.csv_line());
        out.push('\n');
    }
    out
}

/// Sensor readings before bias removal, one row per tick.
pub fn raw_wrench_csv(trace: &[TraceRecord]) -> String {
    let mut out = String::from("t,fx,fy,fz,tx,ty,tz\n");
    for r in trace {
        let mut line = format!("{}", r.t);
        push_all(&mut line, &r.raw_wrench.to_array());
        out.push_str(&line);
        out.push('\n');
    }
    out
}

pub fn plant_csv(samples: &[PlantSample]) -> String {
    let mut out = String::from("t,px,py,pz,qw,qx,qy,qz\n");
    for s in samples {
        let mut line = format!("{}", s.t);
        let p = s.pose.position;
        push_all(&mut line, &[p.x, p.y, p.z]);
        push_all(&mut line, &s.pose.wxyz());
        out.push_str(&line);
        out.push('\n');
    }
    out
}

#[derive(Debug, thiserror::Error)]
pub enum TraceParseError {
    #[error("unexpected header")]
    Header,
    #[error("line {line}: {message}")]
    Row { line: usize, message: String },
}

/// Reads a trace file back. The file holds neither the raw wrench, the
/// active set, the target nor the limits, so those come from the caller
/// (the raw wrench is set to the compensated one).
pub fn parse_trace_csv(
    text: &str,
    desired: &Pose,
    limits: &Wrench,
) -> Result<Vec<TraceRecord>, TraceParseError> {
    let mut lines = text.lines();
    if lines.next() != Some(TRACE_HEADER) {
        return Err(TraceParseError::Header);
    }
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let row_err = |message: String| TraceParseError::Row {
            line: i + 2,
            message,
        };
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 28 {
            return Err(row_err(format!("expected 28 fields, got {}", fields.len())));
        }
        let mut v = [0.0; 27];
        for (k, f) in fields[..27].iter().enumerate() {
            v[k] = f
                .parse()
                .map_err(|_| row_err(format!("bad number {f:?}")))?;
        }
        let status = match fields[27] {
            "na" => None,
            "optimal" => Some(QpStatus::Optimal),
            "infeasible" => Some(QpStatus::Infeasible),
            "uncertified" => Some(QpStatus::Uncertified),
            other => return Err(row_err(format!("unknown status {other:?}"))),
        };
        let wrench = Wrench::from_array([v[14], v[15], v[16], v[17], v[18], v[19]]);
        out.push(TraceRecord {
            t: v[0],
            pose: Pose::from_wxyz([v[1], v[2], v[3]], [v[4], v[5], v[6], v[7]]),
            twist: Twist::from_vector(&nalgebra::Vector6::new(
                v[8], v[9], v[10], v[11], v[12], v[13],
            )),
            wrench,
            raw_wrench: wrench,
            margins: [v[20], v[21], v[22], v[23], v[24], v[25]],
            slack: v[26],
            active: Vec::new(),
            status,
            desired: *desired,
            limits: *limits,
        });
    }
    Ok(out)
}

/// Writes `<name>.trace.csv` and `<name>.summary.json` into `dir`. With
/// `verbose` also `<name>.raw_wrench.csv` and, when samples were logged,
/// `<name>.plant.csv`.
pub fn write_run(
    dir: &Path,
    trace: &[TraceRecord],
    summary: &RunSummary,
    plant: &[PlantSample],
    verbose: bool,
) -> io::Result<()> {
    let name = &summary.name;
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(format!("{name}.trace.csv")), trace_csv(trace))?;
    std::fs::write(
        dir.join(format!("{name}.summary.json")),
        summary.to_json_pretty() + "\n",
    )?;
    if verbose {
        std::fs::write(
            dir.join(format!("{name}.raw_wrench.csv")),
            raw_wrench_csv(trace),
        )?;
        if !plant.is_empty() {
            std::fs::write(dir.join(format!("{name}.plant.csv")), plant_csv(plant))?;
        }
    }
    Ok(())
}
