//! Fluid-scaled occupancy trajectories and their CSV form.
//!
//! Columns are `t,q00,q01,q10,q11,...,q{imax}0,q{imax}1` where `qij` is the
//! cumulative fraction of servers with at least `i` type-I jobs and exactly
//! `j` type-II jobs. Simulated and fluid trajectories share this layout.

use std::io::{Read, Write};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrajectoryError {
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("bad trajectory header: {0}")]
    Header(String),
    #[error("row {row}: {msg}")]
    Row { row: usize, msg: String },
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    i_max: usize,
    times: Vec<f64>,
    samples: Vec<Vec<[f64; 2]>>,
}

impl Trajectory {
    pub fn new(i_max: usize) -> Self {
        Self { i_max, times: Vec::new(), samples: Vec::new() }
    }

    /// Appends a sample; `qbar` is truncated or zero-padded to `i_max + 1`
    /// levels.
    pub fn push(&mut self, t: f64, qbar: &[[f64; 2]]) {
        let mut row = vec![[0.0; 2]; self.i_max + 1];
        for (dst, src) in row.iter_mut().zip(qbar) {
            *dst = *src;
        }
        self.times.push(t);
        self.samples.push(row);
    }

    pub fn i_max(&self) -> usize {
        self.i_max
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn samples(&self) -> &[Vec<[f64; 2]>] {
        &self.samples
    }

    pub fn last(&self) -> Option<(f64, &[[f64; 2]])> {
        Some((*self.times.last()?, self.samples.last()?.as_slice()))
    }

    /// Series of `q̄[i][j]` over all samples.
    pub fn column(&self, i: usize, j: usize) -> Vec<f64> {
        self.samples.iter().map(|s| s[i][j]).collect()
    }

    pub fn header(i_max: usize) -> Vec<String> {
        let mut cols = vec!["t".to_string()];
        for i in 0..=i_max {
            for j in 0..2 {
                cols.push(format!("q{i}{j}"));
            }
        }
        cols
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), TrajectoryError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(Self::header(self.i_max))?;
        for (t, row) in self.times.iter().zip(&self.samples) {
            let mut rec = Vec::with_capacity(1 + 2 * row.len());
            rec.push(t.to_string());
            for cell in row {
                rec.push(cell[0].to_string());
                rec.push(cell[1].to_string());
            }
            w.write_record(&rec)?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self, TrajectoryError> {
        let mut r = csv::Reader::from_reader(input);
        let header = r.headers()?.clone();
        let n = header.len();
        if n < 3 || n % 2 == 0 {
            return Err(TrajectoryError::Header(format!("{n} columns")));
        }
        let i_max = (n - 1) / 2 - 1;
        let expected = Self::header(i_max);
        if header.iter().ne(expected.iter().map(String::as_str)) {
            return Err(TrajectoryError::Header(header.iter().collect::<Vec<_>>().join(",")));
        }
        let mut traj = Self::new(i_max);
        for (row, rec) in r.records().enumerate() {
            let rec = rec?;
            let values = rec
                .iter()
                .map(|s| s.parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| TrajectoryError::Row { row, msg: e.to_string() })?;
            let qbar: Vec<[f64; 2]> = values[1..].chunks(2).map(|c| [c[0], c[1]]).collect();
            traj.push(values[0], &qbar);
        }
        Ok(traj)
    }
}
