//! Columnar text files: one comma-separated header line, one row per record,
//! every real printed with 17 significant digits so values survive a round trip.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::sim::{ModelTag, ParameterVector, TimeSeries};

/// One simulated `(θ, x)` pair with its provenance.
#[derive(Clone, Debug, PartialEq)]
pub struct SimRecord<S> {
    pub theta: ParameterVector<S>,
    pub x: TimeSeries<S>,
    pub seed: u64,
    pub round: usize,
}

pub(crate) fn fmt_real<S: Scalar>(v: S) -> String {
    format!("{:.16e}", v.as_f64())
}

fn parse_real<S: Scalar>(tok: &str, path: &Path, line: usize) -> Result<S> {
    tok.trim()
        .parse::<f64>()
        .map(S::lit)
        .map_err(|e| Error::format(path.display().to_string(), format!("line {line}: {e}")))
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    Ok(BufWriter::new(
        fs::File::create(path).map_err(|e| Error::io(path, e))?,
    ))
}

fn open_lines(path: &Path) -> Result<impl Iterator<Item = Result<String>> + '_> {
    let f = fs::File::open(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::Missing(path.to_path_buf())
        } else {
            Error::io(path, e)
        }
    })?;
    Ok(BufReader::new(f)
        .lines()
        .map(move |l| l.map_err(|e| Error::io(path, e))))
}

pub fn dataset_header(theta_dim: usize, obs_len: usize) -> String {
    let mut cols: Vec<String> = (0..theta_dim).map(|i| format!("theta_{i}")).collect();
    cols.extend((0..obs_len).map(|i| format!("x_{i}")));
    cols.push("seed".into());
    cols.push("round".into());
    cols.join(",")
}

pub fn write_dataset<S: Scalar>(path: &Path, records: &[SimRecord<S>]) -> Result<()> {
    let first = records
        .first()
        .ok_or_else(|| Error::InvalidConfig("cannot write an empty dataset".into()))?;
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    writeln!(w, "{}", dataset_header(first.theta.dim(), first.x.values().len())).map_err(io)?;
    for r in records {
        let mut fields: Vec<String> = r.theta.iter().map(|&v| fmt_real(v)).collect();
        fields.extend(r.x.values().iter().map(|&v| fmt_real(v)));
        fields.push(r.seed.to_string());
        fields.push(r.round.to_string());
        writeln!(w, "{}", fields.join(",")).map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Reads a dataset; the series shape is not stored in the file and must be supplied.
pub fn read_dataset<S: Scalar>(
    path: &Path,
    tag: ModelTag,
    steps: usize,
    dims: usize,
) -> Result<Vec<SimRecord<S>>> {
    let mut lines = open_lines(path)?;
    let header = lines
        .next()
        .ok_or_else(|| Error::format(path.display().to_string(), "empty file"))??;
    let cols: Vec<&str> = header.split(',').collect();
    let obs_len = steps * dims;
    let theta_dim = cols.iter().filter(|c| c.starts_with("theta_")).count();
    if cols.len() != theta_dim + obs_len + 2 || header != dataset_header(theta_dim, obs_len) {
        return Err(Error::format(
            path.display().to_string(),
            format!("header does not describe {theta_dim} parameters and {obs_len} observations"),
        ));
    }
    let mut out = Vec::new();
    for (k, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let lineno = k + 2;
        let toks: Vec<&str> = line.split(',').collect();
        if toks.len() != cols.len() {
            return Err(Error::format(
                path.display().to_string(),
                format!("line {lineno}: {} fields, expected {}", toks.len(), cols.len()),
            ));
        }
        let theta = toks[..theta_dim]
            .iter()
            .map(|t| parse_real(t, path, lineno))
            .collect::<Result<Vec<S>>>()?;
        let x = toks[theta_dim..theta_dim + obs_len]
            .iter()
            .map(|t| parse_real(t, path, lineno))
            .collect::<Result<Vec<S>>>()?;
        let int = |t: &str| {
            t.trim()
                .parse::<u64>()
                .map_err(|e| Error::format(path.display().to_string(), format!("line {lineno}: {e}")))
        };
        out.push(SimRecord {
            theta: theta.into(),
            x: TimeSeries::new(tag, steps, dims, x)?,
            seed: int(toks[theta_dim + obs_len])?,
            round: int(toks[theta_dim + obs_len + 1])? as usize,
        });
    }
    Ok(out)
}

/// Parameter sample dump: header `theta_0,...`, one draw per row.
pub fn write_samples<S: Scalar>(path: &Path, samples: &[ParameterVector<S>]) -> Result<()> {
    let dim = samples
        .first()
        .map(|s| s.dim())
        .ok_or_else(|| Error::InvalidConfig("cannot write an empty sample set".into()))?;
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    let header: Vec<String> = (0..dim).map(|i| format!("theta_{i}")).collect();
    writeln!(w, "{}", header.join(",")).map_err(io)?;
    for s in samples {
        let row: Vec<String> = s.iter().map(|&v| fmt_real(v)).collect();
        writeln!(w, "{}", row.join(",")).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn read_samples<S: Scalar>(path: &Path) -> Result<Vec<ParameterVector<S>>> {
    let mut lines = open_lines(path)?;
    let header = lines
        .next()
        .ok_or_else(|| Error::format(path.display().to_string(), "empty file"))??;
    let dim = header.split(',').count();
    let expected: Vec<String> = (0..dim).map(|i| format!("theta_{i}")).collect();
    if header != expected.join(",") {
        return Err(Error::format(
            path.display().to_string(),
            "sample header must be theta_0,...,theta_{d-1}",
        ));
    }
    let mut out = Vec::new();
    for (k, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|t| parse_real(t, path, k + 2))
            .collect::<Result<Vec<S>>>()?;
        if row.len() != dim {
            return Err(Error::format(
                path.display().to_string(),
                format!("line {}: {} fields, expected {dim}", k + 2, row.len()),
            ));
        }
        out.push(row.into());
    }
    Ok(out)
}

/// A single observation stored as a one-row dataset without parameters.
pub fn write_series<S: Scalar>(path: &Path, series: &TimeSeries<S>) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    let header: Vec<String> = (0..series.values().len()).map(|i| format!("x_{i}")).collect();
    writeln!(w, "{}", header.join(",")).map_err(io)?;
    let row: Vec<String> = series.values().iter().map(|&v| fmt_real(v)).collect();
    writeln!(w, "{}", row.join(",")).map_err(io)?;
    w.flush().map_err(io)
}

pub fn read_series<S: Scalar>(
    path: &Path,
    tag: ModelTag,
    steps: usize,
    dims: usize,
) -> Result<TimeSeries<S>> {
    let mut lines = open_lines(path)?;
    let _header = lines
        .next()
        .ok_or_else(|| Error::format(path.display().to_string(), "empty file"))??;
    let row = lines
        .next()
        .ok_or_else(|| Error::format(path.display().to_string(), "missing observation row"))??;
    let values = row
        .split(',')
        .map(|t| parse_real(t, path, 2))
        .collect::<Result<Vec<S>>>()?;
    TimeSeries::new(tag, steps, dims, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{bh, BhConfig};

    #[test]
    fn dataset_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        let cfg = BhConfig {
            horizon: 6,
            ..Default::default()
        };
        let records: Vec<SimRecord<f64>> = (0..3)
            .map(|k| {
                let theta: ParameterVector<f64> = [0.1 * k as f64, 1.0 / 3.0, 0.7, -0.2].into();
                SimRecord {
                    x: bh::simulate(&cfg, &theta, k).unwrap(),
                    theta,
                    seed: k,
                    round: 0,
                }
            })
            .collect();
        write_dataset(&path, &records).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("theta_0,theta_1,theta_2,theta_3,x_0,"));
        assert!(text.lines().next().unwrap().ends_with("x_5,seed,round"));
        let back: Vec<SimRecord<f64>> = read_dataset(&path, ModelTag::Bh, 6, 1).unwrap();
        assert_eq!(back, records);
    }

    #[test]
    fn sample_round_trip_and_bad_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        let samples: Vec<ParameterVector<f64>> =
            vec![[0.1f64, std::f64::consts::PI].into(), [-1e-300, 2.5e17].into()];
        write_samples(&path, &samples).unwrap();
        assert_eq!(read_samples::<f64>(&path).unwrap(), samples);

        fs::write(&path, "a,b\n1,2\n").unwrap();
        assert!(read_samples::<f64>(&path).is_err());
        assert!(matches!(
            read_samples::<f64>(&dir.path().join("missing.csv")),
            Err(Error::Missing(_))
        ));
    }
}
