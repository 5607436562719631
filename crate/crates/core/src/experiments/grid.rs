use std::io::{Read, Write};

use crate::dynamics::{header, parse_row, DynamicsError};
use crate::field::VectorField;
use crate::semialg::BasicSemialgebraicSet;

use super::ExperimentError;

/// Field values on a grid, one row per point.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldGrid {
    pub points: Vec<Vec<f64>>,
    pub values: Vec<Vec<f64>>,
}

impl FieldGrid {
    pub fn n(&self) -> usize {
        self.points.first().map_or(0, Vec::len)
    }
}

/// Writes `x1,…,xn,f1,…,fn` rows over the grid of `omega`, first coordinate
/// outermost, and returns what was written.
pub fn export_field_grid(
    f: &(impl VectorField + ?Sized),
    omega: &BasicSemialgebraicSet,
    resolution: usize,
    out: impl Write,
) -> Result<FieldGrid, ExperimentError> {
    let grid = omega.grid(resolution)?;
    let n = f.dim();
    let values: Vec<Vec<f64>> = grid.points.iter().map(|x| f.eval(x)).collect();
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| ExperimentError::Dynamics(DynamicsError::Csv(e));
    w.write_record(header("x", n).chain(header("f", n))).map_err(csv_err)?;
    for (x, v) in grid.points.iter().zip(&values) {
        w.write_record(x.iter().chain(v).map(f64::to_string)).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(FieldGrid { points: grid.points, values })
}

pub fn read_field_grid(input: impl Read) -> Result<FieldGrid, ExperimentError> {
    let mut r = csv::Reader::from_reader(input);
    let headers = r.headers().map_err(DynamicsError::from)?.clone();
    let width = headers.len();
    let n = width / 2;
    let expected: Vec<String> = header("x", n).chain(header("f", n)).collect();
    if width % 2 != 0 || n == 0 || headers.iter().ne(expected.iter().map(String::as_str)) {
        return Err(DynamicsError::Format(format!("field grid header must be {}", expected.join(","))).into());
    }
    let mut grid = FieldGrid { points: Vec::new(), values: Vec::new() };
    for rec in r.records() {
        let row = parse_row(&rec.map_err(DynamicsError::from)?, width)?;
        grid.points.push(row[..n].to_vec());
        grid.values.push(row[n..].to_vec());
    }
    Ok(grid)
}
