//! Dense row-major f32 matrices and their on-disk formats.
//!
//! Binary layout (little-endian): magic `EMB1`, `u32` rows, `u32` cols,
//! `u32` reserved (zero), then `rows * cols` f32 values row by row.

use std::io::Write;
use std::path::Path;

use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"EMB1";

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::shape("ragged rows"));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f32] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks(self.cols.max(1)).take(self.rows)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Copy containing only the given rows, in the given order.
    pub fn select_rows(&self, indices: &[usize]) -> Self {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Self { rows: indices.len(), cols: self.cols, data }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 4 * self.data.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.rows as u32).to_le_bytes());
        out.extend_from_slice(&(self.cols as u32).to_le_bytes());
        out.extend_from_slice(&0u32.to_le_bytes());
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..4] != MAGIC {
            return Err(Error::Format("missing EMB1 header".into()));
        }
        let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as usize;
        let (rows, cols) = (word(4), word(8));
        let body = &bytes[16..];
        if body.len() != rows * cols * 4 {
            return Err(Error::Format(format!(
                "EMB1 body holds {} bytes, header promises {rows}x{cols}",
                body.len()
            )));
        }
        let data = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::new(rows, cols, data)
    }

    /// CSV with a header row; `header` defaults to column indices.
    pub fn to_csv(&self, header: Option<&[String]>) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let names: Vec<String> = match header {
            Some(h) => h.to_vec(),
            None => (0..self.cols).map(|j| j.to_string()).collect(),
        };
        w.write_record(&names).expect("in-memory write");
        for row in self.iter_rows() {
            w.write_record(row.iter().map(|v| v.to_string()))
                .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
    }

    /// Parses [`Matrix::to_csv`] output, returning the header as well.
    pub fn from_csv(text: &str) -> Result<(Self, Vec<String>)> {
        let bad = |e: csv::Error| Error::Format(format!("CSV: {e}"));
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let header: Vec<String> = r.headers().map_err(bad)?.iter().map(str::to_string).collect();
        let mut data = Vec::new();
        let mut rows = 0;
        for record in r.records() {
            for field in record.map_err(bad)?.iter() {
                data.push(
                    field
                        .parse::<f32>()
                        .map_err(|_| Error::Format(format!("bad CSV value {field:?}")))?,
                );
            }
            rows += 1;
        }
        Ok((Self::new(rows, header.len(), data)?, header))
    }

    pub fn save_binary(&self, path: &Path) -> Result<()> {
        std::fs::File::create(path)?.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load_binary(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

/// Squared Euclidean distance accumulated in f64.
pub fn squared_distance(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum()
}

pub fn distance(a: &[f32], b: &[f32]) -> f64 {
    squared_distance(a, b).sqrt()
}
