use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Source records `(x, y, y')`. Covariates are stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceDataset {
    x_dim: usize,
    x: Vec<f64>,
    y: Vec<f64>,
    y_weak: Vec<f64>,
    seed: Option<u64>,
}

/// Target records `(x, y')`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetDataset {
    x_dim: usize,
    x: Vec<f64>,
    y_weak: Vec<f64>,
    seed: Option<u64>,
}

fn check_shape(x_dim: usize, x: &[f64], n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    if x_dim == 0 {
        return Err(Error::invalid("covariate dimension must be positive"));
    }
    if x.len() != n * x_dim {
        return Err(Error::DimensionMismatch { expected: n * x_dim, got: x.len() });
    }
    Ok(())
}

fn header(x_dim: usize, with_y: bool) -> Vec<String> {
    let mut h: Vec<String> = (0..x_dim).map(|i| format!("x_{i}")).collect();
    if with_y {
        h.push("y".into());
    }
    h.push("y_weak".into());
    h
}

fn parse_header(headers: &csv::StringRecord, with_y: bool) -> Result<usize> {
    let names: Vec<&str> = headers.iter().collect();
    let tail = if with_y { 2 } else { 1 };
    if names.len() <= tail {
        return Err(Error::Config("csv header has no covariate columns".into()));
    }
    let x_dim = names.len() - tail;
    let expected = header(x_dim, with_y);
    if names != expected {
        return Err(Error::Config(format!("csv header {names:?}, expected {expected:?}")));
    }
    Ok(x_dim)
}

fn parse_field(s: &str) -> Result<f64> {
    s.trim().parse::<f64>().map_err(|_| Error::Config(format!("not a number: {s:?}")))
}

impl SourceDataset {
    pub fn new(x_dim: usize, x: Vec<f64>, y: Vec<f64>, y_weak: Vec<f64>, seed: Option<u64>) -> Result<Self> {
        check_shape(x_dim, &x, y.len())?;
        if y_weak.len() != y.len() {
            return Err(Error::DimensionMismatch { expected: y.len(), got: y_weak.len() });
        }
        Ok(Self { x_dim, x, y, y_weak, seed })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }
    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
    pub fn x_dim(&self) -> usize {
        self.x_dim
    }
    pub fn x(&self, i: usize) -> &[f64] {
        &self.x[i * self.x_dim..(i + 1) * self.x_dim]
    }
    pub fn xs(&self) -> std::slice::ChunksExact<'_, f64> {
        self.x.chunks_exact(self.x_dim)
    }
    pub fn x_flat(&self) -> &[f64] {
        &self.x
    }
    pub fn y(&self) -> &[f64] {
        &self.y
    }
    pub fn y_weak(&self) -> &[f64] {
        &self.y_weak
    }
    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    /// Drops the strong labels.
    pub fn to_target(&self) -> TargetDataset {
        TargetDataset { x_dim: self.x_dim, x: self.x.clone(), y_weak: self.y_weak.clone(), seed: self.seed }
    }

    /// Writes CSV with header `x_0,...,x_{d-1},y,y_weak`. Floats use the
    /// shortest representation that round-trips exactly.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(header(self.x_dim, true))?;
        let mut row = Vec::with_capacity(self.x_dim + 2);
        for i in 0..self.len() {
            row.clear();
            row.extend(self.x(i).iter().map(|v| v.to_string()));
            row.push(self.y[i].to_string());
            row.push(self.y_weak[i].to_string());
            wr.write_record(&row)?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let x_dim = parse_header(rd.headers()?, true)?;
        let (mut x, mut y, mut y_weak) = (Vec::new(), Vec::new(), Vec::new());
        for rec in rd.records() {
            let rec = rec?;
            for j in 0..x_dim {
                x.push(parse_field(&rec[j])?);
            }
            y.push(parse_field(&rec[x_dim])?);
            y_weak.push(parse_field(&rec[x_dim + 1])?);
        }
        Self::new(x_dim, x, y, y_weak, None)
    }
}

impl TargetDataset {
    pub fn new(x_dim: usize, x: Vec<f64>, y_weak: Vec<f64>, seed: Option<u64>) -> Result<Self> {
        check_shape(x_dim, &x, y_weak.len())?;
        Ok(Self { x_dim, x, y_weak, seed })
    }

    pub fn len(&self) -> usize {
        self.y_weak.len()
    }
    pub fn is_empty(&self) -> bool {
        self.y_weak.is_empty()
    }
    pub fn x_dim(&self) -> usize {
        self.x_dim
    }
    pub fn x(&self, i: usize) -> &[f64] {
        &self.x[i * self.x_dim..(i + 1) * self.x_dim]
    }
    pub fn xs(&self) -> std::slice::ChunksExact<'_, f64> {
        self.x.chunks_exact(self.x_dim)
    }
    pub fn x_flat(&self) -> &[f64] {
        &self.x
    }
    pub fn y_weak(&self) -> &[f64] {
        &self.y_weak
    }
    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    /// Writes CSV with header `x_0,...,x_{d-1},y_weak`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(header(self.x_dim, false))?;
        let mut row = Vec::with_capacity(self.x_dim + 1);
        for i in 0..self.len() {
            row.clear();
            row.extend(self.x(i).iter().map(|v| v.to_string()));
            row.push(self.y_weak[i].to_string());
            wr.write_record(&row)?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let x_dim = parse_header(rd.headers()?, false)?;
        let (mut x, mut y_weak) = (Vec::new(), Vec::new());
        for rec in rd.records() {
            let rec = rec?;
            for j in 0..x_dim {
                x.push(parse_field(&rec[j])?);
            }
            y_weak.push(parse_field(&rec[x_dim])?);
        }
        Self::new(x_dim, x, y_weak, None)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mixture::{canonical_benchmark, sample_source, sample_target};
    use proptest::prelude::*;

    #[test]
    fn csv_headers() {
        let s = canonical_benchmark();
        let mut buf = Vec::new();
        sample_source(&s, 3, 1).unwrap().write_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("x_0,y,y_weak\n"));
        let mut buf = Vec::new();
        sample_target(&s, 3, 1).unwrap().write_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("x_0,y_weak\n"));
    }

    #[test]
    fn rejects_bad_header_and_shapes() {
        assert!(SourceDataset::read_csv("a,y,y_weak\n1,2,3\n".as_bytes()).is_err());
        assert!(TargetDataset::read_csv("x_0,y_weak\n".as_bytes()).is_err());
        assert!(SourceDataset::new(2, vec![1.0; 3], vec![0.0; 2], vec![0.0; 2], None).is_err());
        assert!(matches!(TargetDataset::new(1, vec![], vec![], None), Err(Error::EmptyDataset)));
    }

    proptest! {
        #[test]
        fn csv_round_trip_is_exact(
            rows in prop::collection::vec(
                (prop::collection::vec(-1e6f64..1e6, 2), -1e9f64..1e9, any::<f64>().prop_filter("finite", |v| v.is_finite())),
                1..40)
        ) {
            let x: Vec<f64> = rows.iter().flat_map(|r| r.0.clone()).collect();
            let y: Vec<f64> = rows.iter().map(|r| r.1).collect();
            let w: Vec<f64> = rows.iter().map(|r| r.2).collect();
            let d = SourceDataset::new(2, x, y, w, None).unwrap();
            let mut buf = Vec::new();
            d.write_csv(&mut buf).unwrap();
            prop_assert_eq!(SourceDataset::read_csv(buf.as_slice()).unwrap(), d.clone());
            let t = d.to_target();
            let mut buf = Vec::new();
            t.write_csv(&mut buf).unwrap();
            prop_assert_eq!(TargetDataset::read_csv(buf.as_slice()).unwrap(), t);
        }
    }
}
