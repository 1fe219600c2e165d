//! Landscape export: a long-format CSV plus grayscale PGM images for k ≤ 2.

use std::path::{Path, PathBuf};

use polycomp_core::envs::{EnvKind, TaskId};
use polycomp_core::landscape::LandscapeResult;
use polycomp_core::Matrix;

use crate::error::{CliError, Result};
use crate::format::write_atomic;

/// Rows are grid points in enumeration order, tasks within each point.
pub fn write_csv(path: &Path, result: &LandscapeResult) -> Result<()> {
    let k = result.coords.cols();
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = (0..k).map(|d| format!("z_{d}")).collect();
    header.extend(["task", "mean_return", "episodes"].map(String::from));
    let csv_err = |e: csv::Error| CliError::format(path, e.to_string());
    w.write_record(&header).map_err(csv_err)?;
    for (i, coords) in result.coords.iter_rows().enumerate() {
        for (j, task) in result.tasks.iter().enumerate() {
            let mut rec: Vec<String> = coords.iter().map(f64::to_string).collect();
            rec.push(task.name().to_string());
            rec.push(result.returns.get(i, j).to_string());
            rec.push(result.episodes.to_string());
            w.write_record(&rec).map_err(csv_err)?;
        }
    }
    let bytes = w.into_inner().map_err(|e| CliError::format(path, e.to_string()))?;
    write_atomic(path, &bytes)
}

/// Reads a CSV written by [`write_csv`]. The seed is not part of the CSV and
/// is set to 0.
pub fn read_csv(path: &Path, env: EnvKind) -> Result<LandscapeResult> {
    let fail = |m: String| CliError::format(path, m);
    let mut r = csv::Reader::from_path(path).map_err(|e| fail(e.to_string()))?;
    let header = r.headers().map_err(|e| fail(e.to_string()))?.clone();
    let k = header.len().checked_sub(3).filter(|&k| k > 0).ok_or_else(|| fail("too few columns".into()))?;
    let mut coords: Vec<Vec<f64>> = Vec::new();
    let mut returns: Vec<Vec<f64>> = Vec::new();
    let mut tasks: Vec<TaskId> = Vec::new();
    let mut episodes = None;
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| fail(e.to_string()))?;
        let num = |i: usize| -> Result<f64> {
            rec[i].parse().map_err(|_| fail(format!("row {}: bad number `{}`", line + 2, &rec[i])))
        };
        let z = (0..k).map(num).collect::<Result<Vec<f64>>>()?;
        let task = TaskId::parse(env, &rec[k]).map_err(|e| fail(e.to_string()))?;
        let ret = num(k + 1)?;
        let ep: usize = rec[k + 2].parse().map_err(|_| fail(format!("row {}: bad episode count", line + 2)))?;
        if *episodes.get_or_insert(ep) != ep {
            return Err(fail("inconsistent episode counts".into()));
        }
        if coords.last() != Some(&z) {
            coords.push(z);
            returns.push(Vec::new());
        }
        let row = returns.last_mut().expect("pushed above");
        if coords.len() == 1 {
            tasks.push(task);
        } else if tasks.get(row.len()) != Some(&task) {
            return Err(fail(format!("row {}: unexpected task order", line + 2)));
        }
        row.push(ret);
    }
    if coords.is_empty() || returns.iter().any(|r| r.len() != tasks.len()) {
        return Err(fail("incomplete landscape".into()));
    }
    Ok(LandscapeResult {
        coords: Matrix::from_rows(&coords)?,
        returns: Matrix::from_rows(&returns)?,
        tasks,
        episodes: episodes.unwrap_or(0),
        seed: 0,
        env_steps: 0,
    })
}

/// Binary PGM (P5) of one task's returns. Width runs along the last latent
/// dimension; for k = 2 the rows follow `z_0`. Returns are scaled linearly
/// from the minimum (black) to the maximum (white).
pub fn render_pgm(result: &LandscapeResult, task_index: usize, points: usize) -> Option<Vec<u8>> {
    let k = result.coords.cols();
    if !(1..=2).contains(&k) || points == 0 {
        return None;
    }
    let (w, h) = if k == 1 { (points, 1) } else { (points, points) };
    if w * h != result.returns.rows() {
        return None;
    }
    let col: Vec<f64> = result.returns.iter_rows().map(|r| r[task_index]).collect();
    let (lo, hi) = col.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let span = hi - lo;
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(col.iter().map(|&v| {
        if span > 0.0 {
            ((v - lo) / span * 255.0).round() as u8
        } else {
            0
        }
    }));
    Some(out)
}

/// Writes `<stem>_<task>.pgm` for every task; returns the paths written.
pub fn write_pgms(dir: &Path, stem: &str, result: &LandscapeResult, points: usize) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    for (j, task) in result.tasks.iter().enumerate() {
        if let Some(bytes) = render_pgm(result, j, points) {
            let p = dir.join(format!("{stem}_{}.pgm", task.name()));
            write_atomic(&p, &bytes)?;
            written.push(p);
        }
    }
    Ok(written)
}
