//! Dense exact rational matrices and distributions, with the JSON/CSV
//! encodings shared by the library and the command-line tool.

use std::fmt;
use std::ops::Deref;

use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MatrixError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("row {row} is not a probability vector (sum {sum})")]
    NotStochastic { row: usize, sum: String },
    #[error("not a probability distribution: {0}")]
    NotDistribution(String),
    #[error("cannot parse {0:?} as a rational")]
    Parse(String),
    #[error("malformed matrix document: {0}")]
    Format(String),
}

/// Always `p/q`, including `0/1` and `1/1`.
pub fn format_rational(q: &BigRational) -> String {
    format!("{}/{}", q.numer(), q.denom())
}

/// Accepts `p/q` or a bare integer `p`.
pub fn parse_rational(s: &str) -> Result<BigRational, MatrixError> {
    let t = s.trim();
    let err = || MatrixError::Parse(s.to_string());
    match t.split_once('/') {
        Some((p, q)) => {
            let p: BigInt = p.trim().parse().map_err(|_| err())?;
            let q: BigInt = q.trim().parse().map_err(|_| err())?;
            if q.is_zero() {
                return Err(err());
            }
            Ok(BigRational::new(p, q))
        }
        None => Ok(BigRational::from_integer(t.parse().map_err(|_| err())?)),
    }
}

pub fn rational_to_f64(q: &BigRational) -> f64 {
    q.to_f64().unwrap_or_else(|| {
        // huge numerator and denominator: scale down before dividing
        let shift = q.numer().bits().max(q.denom().bits()).saturating_sub(1000);
        let n = (q.numer() >> shift).to_f64().unwrap_or(0.0);
        let d = (q.denom() >> shift).to_f64().unwrap_or(f64::INFINITY);
        n / d
    })
}

#[derive(Clone, PartialEq, Eq)]
pub struct RationalMatrix {
    rows: usize,
    cols: usize,
    data: Vec<BigRational>,
}

impl fmt::Debug for RationalMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "RationalMatrix {}x{}", self.rows, self.cols)?;
        for i in 0..self.rows {
            let row: Vec<String> = self.row(i).iter().map(|q| q.to_string()).collect();
            writeln!(f, "  [{}]", row.join(", "))?;
        }
        Ok(())
    }
}

impl RationalMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        RationalMatrix { rows, cols, data: vec![BigRational::zero(); rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = BigRational::one();
        }
        m
    }

    pub fn from_rows(rows: Vec<Vec<BigRational>>) -> Result<Self, MatrixError> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(MatrixError::DimensionMismatch("ragged rows".into()));
        }
        Ok(RationalMatrix { rows: r, cols: c, data: rows.into_iter().flatten().collect() })
    }

    /// `scale * entries`, handy for transcribing displayed matrices.
    pub fn from_integer_rows(scale: BigRational, rows: &[&[i64]]) -> Result<Self, MatrixError> {
        Self::from_rows(
            rows.iter()
                .map(|r| r.iter().map(|&v| &scale * BigRational::from_integer(v.into())).collect())
                .collect(),
        )
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> &BigRational {
        &self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: BigRational) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[BigRational] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub(crate) fn row_mut(&mut self, i: usize) -> &mut [BigRational] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn entries(&self) -> &[BigRational] {
        &self.data
    }

    /// Exact product. Zero entries are skipped, and when both factors scale
    /// to small integers the inner sums run in `i128`.
    pub fn mul(&self, other: &RationalMatrix) -> Result<RationalMatrix, MatrixError> {
        if self.cols != other.rows {
            return Err(MatrixError::DimensionMismatch(format!(
                "{}x{} times {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        if let Some(out) = self.mul_scaled(other) {
            return Ok(out);
        }
        self.mul_rational(other)
    }

    fn small_scaled(&self) -> Option<(i64, Vec<i64>)> {
        let (d, ints) = self.to_scaled_integers();
        let d = d.to_i64()?;
        let ints = ints.iter().map(|v| v.to_i64()).collect::<Option<Vec<i64>>>()?;
        Some((d, ints))
    }

    fn mul_scaled(&self, other: &RationalMatrix) -> Option<RationalMatrix> {
        let (da, a) = self.small_scaled()?;
        let (db, b) = other.small_scaled()?;
        let max_a = a.iter().map(|v| v.unsigned_abs()).max().unwrap_or(0) as u128;
        let max_b = b.iter().map(|v| v.unsigned_abs()).max().unwrap_or(0) as u128;
        let bound = max_a.checked_mul(max_b)?.checked_mul(self.cols.max(1) as u128)?;
        if bound >= 1 << 126 {
            return None;
        }
        let nc = other.cols;
        let nonzero: Vec<Vec<usize>> =
            (0..other.rows).map(|l| (0..nc).filter(|&j| b[l * nc + j] != 0).collect()).collect();
        let den = BigInt::from(da) * BigInt::from(db);
        let mut data = Vec::with_capacity(self.rows * nc);
        let mut acc = vec![0i128; nc];
        for i in 0..self.rows {
            acc.iter_mut().for_each(|v| *v = 0);
            for l in 0..self.cols {
                let x = a[i * self.cols + l] as i128;
                if x == 0 {
                    continue;
                }
                for &j in &nonzero[l] {
                    acc[j] += x * b[l * nc + j] as i128;
                }
            }
            data.extend(acc.iter().map(|&v| {
                if v == 0 {
                    BigRational::zero()
                } else {
                    BigRational::new(BigInt::from(v), den.clone())
                }
            }));
        }
        Some(RationalMatrix { rows: self.rows, cols: nc, data })
    }

    fn mul_rational(&self, other: &RationalMatrix) -> Result<RationalMatrix, MatrixError> {
        let mut out = Self::zeros(self.rows, other.cols);
        let nonzero: Vec<Vec<usize>> =
            (0..other.rows).map(|l| (0..other.cols).filter(|&j| !other.get(l, j).is_zero()).collect()).collect();
        for i in 0..self.rows {
            let row = out.row_mut(i);
            for l in 0..self.cols {
                let a = &self.data[i * self.cols + l];
                if a.is_zero() {
                    continue;
                }
                for &j in &nonzero[l] {
                    row[j] += a * other.get(l, j);
                }
            }
        }
        Ok(out)
    }

    pub fn pow(&self, t: usize) -> Result<RationalMatrix, MatrixError> {
        if !self.is_square() {
            return Err(MatrixError::DimensionMismatch("power of a non-square matrix".into()));
        }
        let mut acc = Self::identity(self.rows);
        for _ in 0..t {
            acc = acc.mul(self)?;
        }
        Ok(acc)
    }

    pub fn transpose(&self) -> RationalMatrix {
        let mut out = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.get(i, j).clone();
            }
        }
        out
    }

    pub fn sub(&self, other: &RationalMatrix) -> Result<RationalMatrix, MatrixError> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(MatrixError::DimensionMismatch("difference of unequal shapes".into()));
        }
        Ok(RationalMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        })
    }

    /// Row vector times matrix.
    pub fn left_mul(&self, v: &[BigRational]) -> Result<Vec<BigRational>, MatrixError> {
        if v.len() != self.rows {
            return Err(MatrixError::DimensionMismatch("vector length".into()));
        }
        let mut out = vec![BigRational::zero(); self.cols];
        for (i, vi) in v.iter().enumerate() {
            if vi.is_zero() {
                continue;
            }
            for (o, p) in out.iter_mut().zip(self.row(i)) {
                if !p.is_zero() {
                    *o += vi * p;
                }
            }
        }
        Ok(out)
    }

    /// Matrix times column vector.
    pub fn right_mul(&self, v: &[BigRational]) -> Result<Vec<BigRational>, MatrixError> {
        if v.len() != self.cols {
            return Err(MatrixError::DimensionMismatch("vector length".into()));
        }
        Ok((0..self.rows)
            .map(|i| self.row(i).iter().zip(v).filter(|(p, _)| !p.is_zero()).map(|(p, x)| p * x).sum())
            .collect())
    }

    pub fn row_sums(&self) -> Vec<BigRational> {
        (0..self.rows).map(|i| self.row(i).iter().sum()).collect()
    }

    /// First row that is not a probability vector, if any.
    pub fn stochastic_violation(&self) -> Option<(usize, BigRational)> {
        (0..self.rows).find_map(|i| {
            let row = self.row(i);
            let sum: BigRational = row.iter().sum();
            (row.iter().any(|q| q.is_negative()) || !sum.is_one()).then_some((i, sum))
        })
    }

    /// 2x2 block matrix [[a, b], [c, d]].
    pub fn block(a: &RationalMatrix, b: &RationalMatrix, c: &RationalMatrix, d: &RationalMatrix) -> Result<Self, MatrixError> {
        if a.rows != b.rows || c.rows != d.rows || a.cols != c.cols || b.cols != d.cols {
            return Err(MatrixError::DimensionMismatch("incompatible blocks".into()));
        }
        let (r, cl) = (a.rows + c.rows, a.cols + b.cols);
        let mut out = Self::zeros(r, cl);
        for i in 0..r {
            for j in 0..cl {
                let v = match (i < a.rows, j < a.cols) {
                    (true, true) => a.get(i, j),
                    (true, false) => b.get(i, j - a.cols),
                    (false, true) => c.get(i - a.rows, j),
                    (false, false) => d.get(i - a.rows, j - a.cols),
                };
                out.set(i, j, v.clone());
            }
        }
        Ok(out)
    }

    /// Submatrix on the given row and column ranges.
    pub fn slice(&self, rows: std::ops::Range<usize>, cols: std::ops::Range<usize>) -> RationalMatrix {
        let mut out = Self::zeros(rows.len(), cols.len());
        for (oi, i) in rows.clone().enumerate() {
            for (oj, j) in cols.clone().enumerate() {
                out.set(oi, oj, self.get(i, j).clone());
            }
        }
        out
    }

    /// Least common multiple of all denominators.
    pub fn common_denominator(&self) -> BigInt {
        self.data.iter().fold(BigInt::one(), |acc, q| acc.lcm(q.denom()))
    }

    /// (D, D·self) with D the common denominator.
    pub fn to_scaled_integers(&self) -> (BigInt, Vec<BigInt>) {
        let d = self.common_denominator();
        let ints = self.data.iter().map(|q| q.numer() * (&d / q.denom())).collect();
        (d, ints)
    }

    pub fn to_f64(&self) -> nalgebra::DMatrix<f64> {
        nalgebra::DMatrix::from_fn(self.rows, self.cols, |i, j| rational_to_f64(self.get(i, j)))
    }
}

/// A row-stochastic rational matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StochasticMatrix(RationalMatrix);

impl StochasticMatrix {
    pub fn new(m: RationalMatrix) -> Result<Self, MatrixError> {
        match m.stochastic_violation() {
            Some((row, sum)) => Err(MatrixError::NotStochastic { row, sum: format_rational(&sum) }),
            None => Ok(StochasticMatrix(m)),
        }
    }

    pub fn matrix(&self) -> &RationalMatrix {
        &self.0
    }

    pub fn into_inner(self) -> RationalMatrix {
        self.0
    }
}

impl Deref for StochasticMatrix {
    type Target = RationalMatrix;
    fn deref(&self) -> &RationalMatrix {
        &self.0
    }
}

impl TryFrom<RationalMatrix> for StochasticMatrix {
    type Error = MatrixError;
    fn try_from(m: RationalMatrix) -> Result<Self, MatrixError> {
        StochasticMatrix::new(m)
    }
}

/// Probability vector over an indexed state set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Distribution {
    masses: Vec<BigRational>,
}

impl Distribution {
    pub fn new(masses: Vec<BigRational>) -> Result<Self, MatrixError> {
        if masses.iter().any(|q| q.is_negative()) {
            return Err(MatrixError::NotDistribution("negative mass".into()));
        }
        let total: BigRational = masses.iter().sum();
        if !total.is_one() {
            return Err(MatrixError::NotDistribution(format!("masses sum to {}", format_rational(&total))));
        }
        Ok(Distribution { masses })
    }

    pub fn point_mass(len: usize, at: usize) -> Self {
        let mut masses = vec![BigRational::zero(); len];
        masses[at] = BigRational::one();
        Distribution { masses }
    }

    pub fn uniform(len: usize) -> Self {
        let m = BigRational::new(BigInt::one(), BigInt::from(len));
        Distribution { masses: vec![m; len] }
    }

    pub fn masses(&self) -> &[BigRational] {
        &self.masses
    }

    pub fn len(&self) -> usize {
        self.masses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masses.is_empty()
    }

    pub fn get(&self, i: usize) -> &BigRational {
        &self.masses[i]
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.masses.iter().map(rational_to_f64).collect()
    }
}

/// JSON/CSV document for a labeled matrix.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledMatrix {
    pub rows: Vec<String>,
    pub cols: Vec<String>,
    pub entries: Vec<Vec<String>>,
}

impl LabeledMatrix {
    pub fn new(m: &RationalMatrix, rows: &[String], cols: &[String]) -> Self {
        LabeledMatrix {
            rows: rows.to_vec(),
            cols: cols.to_vec(),
            entries: (0..m.rows()).map(|i| m.row(i).iter().map(format_rational).collect()).collect(),
        }
    }

    pub fn to_matrix(&self) -> Result<RationalMatrix, MatrixError> {
        if self.entries.len() != self.rows.len() || self.entries.iter().any(|r| r.len() != self.cols.len()) {
            return Err(MatrixError::Format("entry grid does not match the label lists".into()));
        }
        RationalMatrix::from_rows(
            self.entries.iter().map(|r| r.iter().map(|s| parse_rational(s)).collect()).collect::<Result<_, _>>()?,
        )
    }

    pub fn to_csv(&self) -> Result<String, MatrixError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let fail = |e: csv::Error| MatrixError::Format(e.to_string());
        let mut header = vec![String::new()];
        header.extend(self.cols.iter().cloned());
        w.write_record(&header).map_err(fail)?;
        for (label, row) in self.rows.iter().zip(&self.entries) {
            let mut rec = vec![label.clone()];
            rec.extend(row.iter().cloned());
            w.write_record(&rec).map_err(fail)?;
        }
        let bytes = w.into_inner().map_err(|e| MatrixError::Format(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| MatrixError::Format(e.to_string()))
    }

    pub fn from_csv(text: &str) -> Result<Self, MatrixError> {
        let mut r = csv::ReaderBuilder::new().has_headers(false).from_reader(text.as_bytes());
        let mut records = r.records();
        let fail = |e: csv::Error| MatrixError::Format(e.to_string());
        let header = records.next().ok_or_else(|| MatrixError::Format("empty CSV".into()))?.map_err(fail)?;
        let cols: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
        let mut rows = Vec::new();
        let mut entries = Vec::new();
        for rec in records {
            let rec = rec.map_err(fail)?;
            rows.push(rec.get(0).unwrap_or_default().to_string());
            entries.push(rec.iter().skip(1).map(str::to_string).collect());
        }
        Ok(LabeledMatrix { rows, cols, entries })
    }
}

/// JSON/CSV document for a labeled distribution.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledDistribution {
    pub labels: Vec<String>,
    pub masses: Vec<String>,
}

impl LabeledDistribution {
    pub fn new(d: &Distribution, labels: &[String]) -> Self {
        LabeledDistribution { labels: labels.to_vec(), masses: d.masses().iter().map(format_rational).collect() }
    }

    pub fn to_distribution(&self) -> Result<Distribution, MatrixError> {
        if self.labels.len() != self.masses.len() {
            return Err(MatrixError::Format("label and mass counts differ".into()));
        }
        Distribution::new(self.masses.iter().map(|s| parse_rational(s)).collect::<Result<_, _>>()?)
    }

    pub fn to_csv(&self) -> Result<String, MatrixError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let fail = |e: csv::Error| MatrixError::Format(e.to_string());
        w.write_record(["state", "mass"]).map_err(fail)?;
        for (l, m) in self.labels.iter().zip(&self.masses) {
            w.write_record([l, m]).map_err(fail)?;
        }
        let bytes = w.into_inner().map_err(|e| MatrixError::Format(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| MatrixError::Format(e.to_string()))
    }

    pub fn from_csv(text: &str) -> Result<Self, MatrixError> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let mut labels = Vec::new();
        let mut masses = Vec::new();
        for rec in r.records() {
            let rec = rec.map_err(|e| MatrixError::Format(e.to_string()))?;
            if rec.len() != 2 {
                return Err(MatrixError::Format(format!("expected state,mass but found {} fields", rec.len())));
            }
            labels.push(rec[0].to_string());
            masses.push(rec[1].to_string());
        }
        Ok(LabeledDistribution { labels, masses })
    }
}
