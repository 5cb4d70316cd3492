//! File formats and atomic output.

use std::io::Write;
use std::path::{Path, PathBuf};

use sizeshape::mcmc::{AcceptanceStats, PosteriorDraws};
use sizeshape::{FunctionSample, ModelConfig, PhaseFunction, PhasePrior, ProposalConfig, TimeGrid};

use crate::error::{CliError, CliResult};

/// Observations on a shared time column.
#[derive(Debug, Clone)]
pub struct Dataset {
    /// Times as written in the file.
    pub times: Vec<f64>,
    /// The times mapped affinely onto `[0, 1]`.
    pub grid: TimeGrid,
    pub data: Vec<FunctionSample>,
}

/// Shortest representation that parses back to the same `f64`.
pub fn fmt(x: f64) -> String {
    format!("{x}")
}

fn csv_error(path: &Path, e: csv::Error) -> CliError {
    match e.kind() {
        csv::ErrorKind::Io(_) => match e.into_kind() {
            csv::ErrorKind::Io(io) => CliError::io(path, io),
            _ => unreachable!(),
        },
        _ => CliError::validation(format!("{}: {e}", path.display())),
    }
}

/// Header names and `(line number, values)` rows.
type Rows = (Vec<String>, Vec<(u64, Vec<f64>)>);

fn read_rows(path: &Path) -> CliResult<Rows> {
    let file = std::fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let header = reader
        .headers()
        .map_err(|e| csv_error(path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record.position().map_or(0, |p| p.line());
        let values = record
            .iter()
            .map(|s| {
                s.trim().parse::<f64>().map_err(|_| {
                    CliError::validation(format!(
                        "{} line {line}: `{s}` is not a number",
                        path.display()
                    ))
                })
            })
            .collect::<CliResult<Vec<f64>>>()?;
        if let Some(bad) = values.iter().position(|v| !v.is_finite()) {
            return Err(CliError::validation(format!(
                "{} line {line}: non-finite value in column {}",
                path.display(),
                bad + 1
            )));
        }
        rows.push((line, values));
    }
    Ok((header, rows))
}

/// Reads a dataset CSV: header row, then `t, f_1(t), …, f_n(t)` per line.
pub fn read_dataset(path: &Path) -> CliResult<Dataset> {
    let (header, rows) = read_rows(path)?;
    if header.len() < 2 {
        return Err(CliError::validation(format!(
            "{}: need a time column and at least one observation",
            path.display()
        )));
    }
    if rows.len() < 2 {
        return Err(CliError::validation(format!(
            "{}: need at least two time points",
            path.display()
        )));
    }
    let times: Vec<f64> = rows.iter().map(|(_, r)| r[0]).collect();
    for w in rows.windows(2) {
        if w[1].1[0] <= w[0].1[0] {
            return Err(CliError::validation(format!(
                "{} line {}: time column is not strictly increasing",
                path.display(),
                w[1].0
            )));
        }
    }
    let (t0, t1) = (times[0], *times.last().unwrap());
    let mut unit: Vec<f64> = times.iter().map(|t| (t - t0) / (t1 - t0)).collect();
    unit[0] = 0.0;
    *unit.last_mut().unwrap() = 1.0;
    let grid = TimeGrid::new(unit)?;
    let data = (1..header.len())
        .map(|c| FunctionSample::new(rows.iter().map(|(_, r)| r[c]).collect()))
        .collect();
    Ok(Dataset { times, grid, data })
}

/// CSV text with a leading `t` column followed by one column per series.
pub fn columns_csv(times: &[f64], names: &[String], columns: &[&[f64]]) -> String {
    let mut out = String::new();
    out.push('t');
    for n in names {
        out.push(',');
        out.push_str(n);
    }
    out.push('\n');
    for (j, t) in times.iter().enumerate() {
        out.push_str(&fmt(*t));
        for c in columns {
            out.push(',');
            out.push_str(&fmt(c[j]));
        }
        out.push('\n');
    }
    out
}

pub fn dataset_csv(times: &[f64], data: &[FunctionSample]) -> String {
    let names: Vec<String> = (1..=data.len()).map(|i| format!("f_{i}")).collect();
    let cols: Vec<&[f64]> = data.iter().map(FunctionSample::as_slice).collect();
    columns_csv(times, &names, &cols)
}

fn phase_columns(config: &ModelConfig, n: usize) -> Vec<String> {
    match config.phase_prior {
        PhasePrior::Parametric => (1..=n).map(|i| format!("alpha_{i}")).collect(),
        PhasePrior::Dirichlet => (1..=n)
            .flat_map(|i| (1..config.phase_knot_count - 1).map(move |k| format!("gamma_{i}_{k}")))
            .collect(),
    }
}

/// Column names of a draws file.
pub fn draws_header(config: &ModelConfig, n: usize) -> Vec<String> {
    let mut h = vec!["iteration".to_string()];
    h.extend((1..=config.fixed_count).map(|k| format!("a_{k}")));
    h.push("sigma2".into());
    h.push("sigma_c2".into());
    h.extend(phase_columns(config, n));
    h
}

/// One row per kept draw: iteration, `a`, both variances, then the phase
/// parameters (`α_i`, or the interior knot values of each `γ_i`).
pub fn draws_csv(draws: &PosteriorDraws, config: &ModelConfig) -> String {
    let n = draws.observations();
    let mut out = draws_header(config, n).join(",");
    out.push('\n');
    for j in 0..draws.len() {
        let mut row = vec![draws.iterations[j].to_string()];
        row.extend(draws.a[j].iter().map(|v| fmt(*v)));
        row.push(fmt(draws.sigma2[j]));
        row.push(fmt(draws.sigma_c2[j]));
        for g in &draws.phases[j] {
            match (g.alpha(), g.values()) {
                (Some(a), _) => row.push(fmt(a)),
                (None, Some(v)) => row.extend(v[1..v.len() - 1].iter().map(|x| fmt(*x))),
                (None, None) => unreachable!("a phase is either parametric or piecewise linear"),
            }
        }
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

/// Reads a draws file written for `config` with `n` observations.
pub fn read_draws(path: &Path, config: &ModelConfig, n: usize) -> CliResult<PosteriorDraws> {
    let (header, rows) = read_rows(path)?;
    let expected = draws_header(config, n);
    if header != expected {
        return Err(CliError::validation(format!(
            "{}: columns do not match the configured model ({} expected, {} found)",
            path.display(),
            expected.len(),
            header.len()
        )));
    }
    let b = config.fixed_count;
    let knots = config.phase_knots()?;
    let per = config.phase_knot_count - 2;
    let mut draws = PosteriorDraws {
        iterations: Vec::with_capacity(rows.len()),
        a: Vec::with_capacity(rows.len()),
        sigma2: Vec::with_capacity(rows.len()),
        sigma_c2: Vec::with_capacity(rows.len()),
        phases: Vec::with_capacity(rows.len()),
        acceptance: AcceptanceStats::default(),
        acceptance_post_burn: AcceptanceStats::default(),
        proposal: ProposalConfig::new(b),
        seed: 0,
    };
    for (line, r) in rows {
        let bad = |msg: &str| CliError::validation(format!("{} line {line}: {msg}", path.display()));
        if r[0] < 1.0 || r[0].fract() != 0.0 {
            return Err(bad("iteration must be a positive integer"));
        }
        draws.iterations.push(r[0] as usize);
        draws.a.push(r[1..=b].to_vec());
        draws.sigma2.push(r[b + 1]);
        draws.sigma_c2.push(r[b + 2]);
        let rest = &r[b + 3..];
        let phases = match config.phase_prior {
            PhasePrior::Parametric => rest
                .iter()
                .map(|&a| PhaseFunction::parametric(a))
                .collect::<sizeshape::Result<Vec<_>>>(),
            PhasePrior::Dirichlet => rest
                .chunks(per)
                .map(|inner| {
                    let mut v = Vec::with_capacity(per + 2);
                    v.push(0.0);
                    v.extend_from_slice(inner);
                    v.push(1.0);
                    PhaseFunction::piecewise_linear(knots.clone(), v)
                })
                .collect(),
        }
        .map_err(|e| bad(&e.to_string()))?;
        draws.phases.push(phases);
    }
    Ok(draws)
}

/// Output files assembled in memory and committed together.
///
/// Each file is written to a temporary sibling and renamed into place, so a
/// failed command leaves no partial files behind.
#[derive(Debug, Default)]
pub struct Staged {
    files: Vec<(PathBuf, Vec<u8>)>,
}

impl Staged {
    pub fn add(&mut self, path: PathBuf, contents: impl Into<Vec<u8>>) {
        self.files.push((path, contents.into()));
    }

    pub fn paths(&self) -> impl Iterator<Item = &Path> {
        self.files.iter().map(|(p, _)| p.as_path())
    }

    pub fn commit(self) -> CliResult<Vec<PathBuf>> {
        let mut temps = Vec::with_capacity(self.files.len());
        for (path, contents) in &self.files {
            let dir = path
                .parent()
                .filter(|d| !d.as_os_str().is_empty())
                .unwrap_or_else(|| Path::new("."));
            std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
            let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| CliError::io(dir, e))?;
            tmp.write_all(contents)
                .and_then(|_| tmp.as_file().sync_all())
                .map_err(|e| CliError::io(path, e))?;
            temps.push((tmp, path.clone()));
        }
        let mut written = Vec::with_capacity(temps.len());
        for (tmp, path) in temps {
            tmp.persist(&path)
                .map_err(|e| CliError::io(&path, e.error))?;
            log::info!("wrote {}", path.display());
            written.push(path);
        }
        Ok(written)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dataset_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        let times = vec![0.0, 0.1, 0.35, 1.0];
        let data = vec![
            FunctionSample::new(vec![1.0 / 3.0, -2e-17, 5.5, 1e300]),
            FunctionSample::new(vec![0.1, 0.2, 0.30000000000000004, -7.0]),
        ];
        std::fs::write(&path, dataset_csv(&times, &data)).unwrap();
        let back = read_dataset(&path).unwrap();
        assert_eq!(back.times, times);
        assert_eq!(back.data, data);
    }

    #[test]
    fn rescales_time_column() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        std::fs::write(&path, "age,x\n1,0\n2,1\n5,2\n").unwrap();
        let d = read_dataset(&path).unwrap();
        assert_eq!(d.grid.points(), &[0.0, 0.25, 1.0]);
    }

    #[test]
    fn rejects_bad_datasets() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        std::fs::write(&path, "t,x\n0,1\n0.5,2\n0.4,3\n1,4\n").unwrap();
        let e = read_dataset(&path).unwrap_err();
        assert!(e.to_string().contains("line 4"), "{e}");
        assert_eq!(e.exit_code(), 2);
        std::fs::write(&path, "t,x\n0,1\n0.5,NaN\n1,4\n").unwrap();
        assert!(read_dataset(&path).unwrap_err().to_string().contains("line 3"));
        std::fs::write(&path, "t,x\n0,1\n0.5,abc\n1,4\n").unwrap();
        assert_eq!(read_dataset(&path).unwrap_err().exit_code(), 2);
        let e = read_dataset(&dir.path().join("missing.csv")).unwrap_err();
        assert_eq!(e.exit_code(), 4);
    }

    #[test]
    fn staged_commit_writes_all() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = Staged::default();
        s.add(dir.path().join("a.txt"), "x");
        s.add(dir.path().join("sub/b.txt"), "y");
        s.commit().unwrap();
        assert_eq!(std::fs::read_to_string(dir.path().join("sub/b.txt")).unwrap(), "y");
        let names: Vec<_> = std::fs::read_dir(dir.path()).unwrap().collect();
        assert_eq!(names.len(), 2);
    }
}
