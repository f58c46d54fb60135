//! Reading demonstrations and point clouds.
//!
//! CSV: one point per row, one column per coordinate, demonstrations
//! separated by blank lines. Lines starting with `#` are skipped.
//! JSON: `{"demos": [[[x, y], ...], ...]}`.

use std::fmt::Write as _;
use std::path::Path;

use elmap::trajectory::{DemonstrationSet, Trajectory};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use crate::error::{CliError, CliResult};

pub fn load_demonstrations(path: &Path) -> CliResult<DemonstrationSet> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
    let demos = if is_json { parse_demonstrations_json(&text, path)? } else { parse_demonstrations_csv(&text, path)? };
    to_set(demos, path)
}

fn to_set(demos: Vec<Vec<Vec<f64>>>, path: &Path) -> CliResult<DemonstrationSet> {
    let trajs = demos
        .iter()
        .map(|rows| Trajectory::from_rows(rows))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| CliError::Parse { path: path.to_path_buf(), line: 0, message: e.to_string() })?;
    DemonstrationSet::new(trajs).map_err(|e| CliError::Parse { path: path.to_path_buf(), line: 0, message: e.to_string() })
}

/// Blocks of rows; the dimension is fixed by the first row.
pub fn parse_demonstrations_csv(text: &str, path: &Path) -> CliResult<Vec<Vec<Vec<f64>>>> {
    let err = |line: usize, message: String| CliError::Parse { path: path.to_path_buf(), line, message };
    let mut demos: Vec<Vec<Vec<f64>>> = Vec::new();
    let mut current: Vec<Vec<f64>> = Vec::new();
    let mut dim = None;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.starts_with('#') {
            continue;
        }
        if line.is_empty() {
            if !current.is_empty() {
                demos.push(std::mem::take(&mut current));
            }
            continue;
        }
        let row = line
            .split(',')
            .map(|c| c.trim().parse::<f64>().map_err(|_| err(i + 1, format!("not a number: {:?}", c.trim()))))
            .collect::<CliResult<Vec<f64>>>()?;
        if let Some(bad) = row.iter().find(|v| !v.is_finite()) {
            return Err(err(i + 1, format!("non-finite value {bad}")));
        }
        match dim {
            None => dim = Some(row.len()),
            Some(d) if d != row.len() => return Err(err(i + 1, format!("expected {d} columns, found {}", row.len()))),
            _ => {}
        }
        current.push(row);
    }
    if !current.is_empty() {
        demos.push(current);
    }
    if demos.is_empty() {
        return Err(err(1, "no data".into()));
    }
    Ok(demos)
}

#[derive(Deserialize)]
struct DemoFile {
    demos: Vec<Vec<Vec<f64>>>,
}

pub fn parse_demonstrations_json(text: &str, path: &Path) -> CliResult<Vec<Vec<Vec<f64>>>> {
    let file: DemoFile = serde_json::from_str(text)
        .map_err(|e| CliError::Parse { path: path.to_path_buf(), line: e.line(), message: e.to_string() })?;
    let dim = file.demos.first().and_then(|d| d.first()).map(Vec::len);
    match dim {
        None => Err(CliError::Parse { path: path.to_path_buf(), line: 1, message: "no data".into() }),
        Some(d) => {
            if file.demos.iter().flatten().any(|p| p.len() != d) {
                return Err(CliError::Parse { path: path.to_path_buf(), line: 0, message: format!("every point needs {d} coordinates") });
            }
            Ok(file.demos)
        }
    }
}

/// Inverse of [`parse_demonstrations_csv`]; values are written in their
/// shortest exact decimal form.
pub fn demonstrations_to_csv(demos: &DemonstrationSet) -> String {
    let mut out = String::new();
    for (k, t) in demos.demos().iter().enumerate() {
        if k > 0 {
            out.push('\n');
        }
        for row in t.rows() {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
            let _ = writeln!(out, "{}", cells.join(","));
        }
    }
    out
}

/// All rows of a CSV file as one point cloud.
pub fn load_points(path: &Path) -> CliResult<Vec<Vec<f64>>> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    Ok(parse_demonstrations_csv(&text, path)?.into_iter().flatten().collect())
}

/// Adds uniform noise in `[−amplitude, amplitude]` to every coordinate.
pub fn jitter(demos: &DemonstrationSet, amplitude: f64, seed: u64) -> DemonstrationSet {
    if amplitude == 0.0 {
        return demos.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let trajs = demos
        .demos()
        .iter()
        .map(|t| {
            let points = t.points().map(|v| v + rng.gen_range(-amplitude..=amplitude));
            Trajectory::with_weights(points, t.weights().clone()).expect("jitter keeps the shape")
        })
        .collect();
    DemonstrationSet::new(trajs).expect("jitter keeps the dimension")
}
