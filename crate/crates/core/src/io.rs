//! CSV readers and writers.
//!
//! Schemas (header row required, column names are not checked beyond count):
//! - sampled functions: `t,x1,...,xd`
//! - subspace bases: `i,b1,...,bk`, row `i` of the `d×k` basis
//! - rate densities: `t,mu`
//! - matrix-valued samples (generators, perturbations): `t,a11,a12,...,add`, row-major

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::family::{sampled_generator, Generator};
use crate::funcspaces::{SampledFunction, SubspaceZ};
use crate::linalg::{Matrix, Vector};
use crate::rates::Density;

fn rows_from<R: Read>(reader: R, what: &str) -> Result<Vec<Vec<f64>>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let width = rdr.headers()?.len();
    let mut rows = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != width {
            return Err(Error::Config(format!("{what}: row {} has {} fields, header has {width}", line + 1, rec.len())));
        }
        let row = rec
            .iter()
            .map(|f| f.parse::<f64>().map_err(|_| Error::Config(format!("{what}: row {}: `{f}` is not a number", line + 1))))
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Config(format!("{what}: no data rows")));
    }
    Ok(rows)
}

fn rows_from_path(path: &Path, what: &str) -> Result<Vec<Vec<f64>>> {
    rows_from(std::fs::File::open(path)?, what)
}

pub fn parse_sampled_function<R: Read>(reader: R) -> Result<SampledFunction> {
    let rows = rows_from(reader, "sampled function")?;
    if rows[0].len() < 2 {
        return Err(Error::Config("sampled function needs columns t,x1,...".into()));
    }
    let grid = rows.iter().map(|r| r[0]).collect();
    let values = rows.iter().map(|r| Vector::from_column_slice(&r[1..])).collect();
    SampledFunction::new(grid, values)
}

pub fn read_sampled_function(path: &Path) -> Result<SampledFunction> {
    parse_sampled_function(std::fs::File::open(path)?)
}

pub fn write_sampled_function<W: Write>(writer: W, f: &SampledFunction) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["t".to_string()];
    header.extend((1..=f.dim()).map(|i| format!("x{i}")));
    w.write_record(&header)?;
    for (t, v) in f.grid().iter().zip(f.values()) {
        let mut rec = vec![t.to_string()];
        rec.extend(v.iter().map(|x| x.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn parse_subspace<R: Read>(reader: R) -> Result<SubspaceZ> {
    let rows = rows_from(reader, "subspace")?;
    let d = rows.len();
    let k = rows[0].len() - 1;
    let mut m = Matrix::zeros(d, k);
    for row in &rows {
        let i = row[0];
        if i.fract() != 0.0 || i < 0.0 || i as usize >= d {
            return Err(Error::Config(format!("subspace: row index {i} outside 0..{d}")));
        }
        for j in 0..k {
            m[(i as usize, j)] = row[j + 1];
        }
    }
    Ok(SubspaceZ::span(&m))
}

pub fn read_subspace(path: &Path) -> Result<SubspaceZ> {
    parse_subspace(std::fs::File::open(path)?)
}

pub fn read_density(path: &Path) -> Result<Density> {
    let rows = rows_from_path(path, "density")?;
    if rows[0].len() != 2 {
        return Err(Error::Config("density needs columns t,mu".into()));
    }
    Ok(Density::Sampled { t: rows.iter().map(|r| r[0]).collect(), mu: rows.iter().map(|r| r[1]).collect() })
}

/// Matrix samples `(times, matrices)` from a `t,a11,...` table.
pub fn parse_matrix_samples<R: Read>(reader: R) -> Result<(Vec<f64>, Vec<Matrix>)> {
    let rows = rows_from(reader, "matrix samples")?;
    let entries = rows[0].len() - 1;
    let d = (entries as f64).sqrt().round() as usize;
    if d == 0 || d * d != entries {
        return Err(Error::Config(format!("matrix samples: {entries} entry columns is not a square count")));
    }
    let times = rows.iter().map(|r| r[0]).collect();
    let mats = rows.iter().map(|r| Matrix::from_row_slice(d, d, &r[1..])).collect();
    Ok((times, mats))
}

pub fn read_generator(path: &Path) -> Result<Generator> {
    let (t, m) = parse_matrix_samples(std::fs::File::open(path)?)?;
    sampled_generator(path.display().to_string(), t, m)
}

/// Rows of a CSV table as strings, for report files.
pub fn write_table<W: Write>(writer: W, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sampled_function_round_trip() {
        let f = SampledFunction::from_fn(vec![0.0, 0.5, 1.25], |t| Vector::from_vec(vec![t, -2.0 * t + 0.1])).unwrap();
        let mut buf = Vec::new();
        write_sampled_function(&mut buf, &f).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("t,x1,x2\n0,0,0.1\n"));
        let g = parse_sampled_function(buf.as_slice()).unwrap();
        assert_eq!(g.grid(), f.grid());
        assert_eq!(g.values(), f.values());
    }

    #[test]
    fn subspace_rows() {
        let z = parse_subspace("i,b1\n0,0\n1,2\n".as_bytes()).unwrap();
        assert_eq!(z.dim(), 1);
        assert!((z.basis()[(1, 0)].abs() - 1.0).abs() < 1e-15);
        assert!(parse_subspace("i,b1\n3,1\n".as_bytes()).is_err());
    }

    #[test]
    fn matrix_samples() {
        let (t, m) = parse_matrix_samples("t,a11,a12,a21,a22\n0,1,2,3,4\n1,0,0,0,0\n".as_bytes()).unwrap();
        assert_eq!(t, vec![0.0, 1.0]);
        assert_eq!(m[0][(0, 1)], 2.0);
        assert_eq!(m[0][(1, 0)], 3.0);
        assert!(parse_matrix_samples("t,a,b\n0,1,2\n".as_bytes()).is_err());
        assert!(parse_matrix_samples("t,a\n0,x\n".as_bytes()).is_err());
    }
}
