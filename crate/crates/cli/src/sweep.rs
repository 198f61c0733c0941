//! Parameter grids. Cells run in parallel and share nothing.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use wrench_cbf::sim::trace::write_run;
use wrench_cbf::sim::{run_scenario, RunSummary, ScenarioConfig};

use crate::{check_trace, Failure, EXIT_FAULT};

#[derive(Debug, Clone, PartialEq)]
pub struct Axis {
    pub key: String,
    /// Each value as the text of an override.
    pub values: Vec<String>,
}

/// Reads `key=[1,2]` (a JSON array) or `key=1,2`.
pub fn parse_axis(entry: &str) -> Result<Axis, String> {
    let (key, raw) = entry
        .split_once('=')
        .ok_or_else(|| format!("grid entry {entry:?} must look like key=v1,v2"))?;
    let raw = raw.trim();
    let values: Vec<String> = match serde_json::from_str::<serde_json::Value>(raw) {
        Ok(serde_json::Value::Array(items)) => items.iter().map(|v| v.to_string()).collect(),
        _ => raw.split(',').map(|v| v.trim().to_owned()).collect(),
    };
    if values.is_empty() || values.iter().any(String::is_empty) {
        return Err(format!("grid entry {entry:?} has an empty value"));
    }
    Ok(Axis {
        key: key.trim().to_owned(),
        values,
    })
}

/// Every combination, the last axis varying fastest.
pub fn cells(axes: &[Axis]) -> Vec<Vec<usize>> {
    axes.iter().fold(vec![vec![]], |acc, axis| {
        acc.into_iter()
            .flat_map(|prefix| {
                (0..axis.values.len()).map(move |i| {
                    let mut c = prefix.clone();
                    c.push(i);
                    c
                })
            })
            .collect()
    })
}

enum Outcome {
    Done(RunSummary),
    Failed(String),
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}

fn run_cell(config: Result<ScenarioConfig, String>, output_dir: &Path) -> Outcome {
    let config = match config {
        Ok(c) => c,
        Err(e) => return Outcome::Failed(e),
    };
    let out = match run_scenario(&config) {
        Ok(out) => out,
        Err(e) => return Outcome::Failed(e.to_string()),
    };
    if let Err(f) = check_trace(&config, &out.trace) {
        return Outcome::Failed(f.message);
    }
    match write_run(output_dir, &out.trace, &out.summary, &[], false) {
        Ok(()) => Outcome::Done(out.summary),
        Err(e) => Outcome::Failed(format!("writing {}: {e}", output_dir.display())),
    }
}

pub fn sweep(base: &ScenarioConfig, grid: &[String], output_dir: &Path) -> Result<u8, Failure> {
    let axes = grid
        .iter()
        .map(|g| parse_axis(g))
        .collect::<Result<Vec<_>, _>>()
        .map_err(Failure::config)?;
    // a key that does not exist is an argument error, not a failed cell
    for axis in &axes {
        base.with_overrides(&[format!("{}={}", axis.key, axis.values[0])])
            .map_err(Failure::config)?;
    }
    let cells = cells(&axes);
    let width = cells.len().to_string().len().max(3);
    let outcomes: Vec<Outcome> = cells
        .par_iter()
        .enumerate()
        .map(|(n, cell)| {
            let overrides: Vec<String> = axes
                .iter()
                .zip(cell)
                .map(|(a, &i)| format!("{}={}", a.key, a.values[i]))
                .collect();
            let config = base
                .with_overrides(&overrides)
                .map_err(|e| e.to_string())
                .map(|mut c| {
                    c.name = format!("{}_{n:0width$}", base.name);
                    c
                });
            run_cell(config, output_dir)
        })
        .collect();

    let mut table = String::from("cell");
    for a in &axes {
        write!(table, ",{}", csv_field(&a.key)).unwrap();
    }
    table.push_str(
        ",status,max_limit_violation,final_pose_error_norm,settling_time,droop_max,qp_fallback_ticks,\
         max_fx,max_fy,max_fz,max_tx,max_ty,max_tz,message\n",
    );
    let mut failed = 0;
    for (n, (cell, outcome)) in cells.iter().zip(&outcomes).enumerate() {
        write!(table, "{}_{n:0width$}", base.name).unwrap();
        for (a, &i) in axes.iter().zip(cell) {
            write!(table, ",{}", csv_field(&a.values[i])).unwrap();
        }
        match outcome {
            Outcome::Done(s) => {
                let settling = s.settling_time.map(|t| t.to_string()).unwrap_or_default();
                write!(
                    table,
                    ",ok,{},{},{settling},{},{}",
                    s.max_limit_violation,
                    s.final_pose_error_norm,
                    s.droop_max,
                    s.qp_fallback_ticks
                )
                .unwrap();
                for w in s.max_abs_wrench_per_axis {
                    write!(table, ",{w}").unwrap();
                }
                table.push_str(",\n");
            }
            Outcome::Failed(message) => {
                failed += 1;
                writeln!(table, ",failed,,,,,,,,,,,,{}", csv_field(message)).unwrap();
            }
        }
    }
    let path = output_dir.join(format!("{}.sweep.csv", base.name));
    std::fs::create_dir_all(output_dir)
        .and_then(|()| std::fs::write(&path, &table))
        .map_err(|e| Failure::fault(format!("writing {}: {e}", path.display())))?;
    print!("{table}");
    if failed > 0 {
        eprintln!("wcbf: {failed} of {} cells failed", cells.len());
        return Ok(EXIT_FAULT);
    }
    Ok(0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn axes_accept_json_arrays_and_comma_lists() {
        let a = parse_axis("controller.params.alpha_force=[0.5, 1, 2]").unwrap();
        assert_eq!(a.values, ["0.5", "1", "2"]);
        let a = parse_axis("limits.w_max.force=[[1,2,3],[4,5,6]]").unwrap();
        assert_eq!(a.values, ["[1,2,3]", "[4,5,6]"]);
        assert_eq!(parse_axis("rng_seed=1,2").unwrap().values, ["1", "2"]);
        assert!(parse_axis("rng_seed").is_err());
        assert!(parse_axis("rng_seed=1,,2").is_err());
    }

    #[test]
    fn cells_cover_the_product_in_order() {
        let axes = [
            Axis {
                key: "a".into(),
                values: vec!["1".into(), "2".into()],
            },
            Axis {
                key: "b".into(),
                values: vec!["x".into(), "y".into(), "z".into()],
            },
        ];
        let c = cells(&axes);
        assert_eq!(c.len(), 6);
        assert_eq!(c[0], [0, 0]);
        assert_eq!(c[1], [0, 1]);
        assert_eq!(c[5], [1, 2]);
        assert_eq!(cells(&[]), vec![Vec::<usize>::new()]);
    }

    #[test]
    fn fields_with_commas_are_quoted() {
        assert_eq!(csv_field("[1,2]"), "\"[1,2]\"");
        assert_eq!(csv_field("1"), "1");
    }
}
