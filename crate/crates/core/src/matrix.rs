//! Dense row-major matrices with cyclic (modular) indexing.
//!
//! All indices are 0-based. Any index passed to [`Matrix::at_wrapped`] or
//! [`Matrix::submatrix`] is reduced modulo the corresponding dimension, so
//! row `rows` is row 0 again and row `-1` is the last row.

use std::fmt;
use std::io::{BufRead, Read, Write};
use std::ops::RangeInclusive;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

/// The four shape-preserving cyclic transforms used by the packed matmul kernels.
///
/// With `o` applications (0-based indices, wrapping):
/// - `Sigma`: `out[j][k] = m[j][k + o*j]` (row `j` rotated left by `j`)
/// - `Tau`:   `out[j][k] = m[j + o*k][k]` (column `k` rotated up by `k`)
/// - `Xi`:    `out[j][k] = m[j][k + o]`   (all columns shifted left)
/// - `Psi`:   `out[j][k] = m[j + o][k]`   (all rows shifted up)
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TransformKind {
    Sigma,
    Tau,
    Xi,
    Psi,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    /// `M1 ∥ M2`: side by side, same row count.
    Horizontal,
    /// `M1 ; M2`: stacked, same column count.
    Vertical,
}

fn wrap(i: i64, n: usize) -> usize {
    debug_assert!(n > 0);
    i.rem_euclid(n as i64) as usize
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn empty() -> Self {
        Matrix::zeros(0, 0)
    }

    pub fn identity(n: usize) -> Self {
        Matrix::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 })
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Matrix { rows, cols, data: vec![value; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!("{} values cannot fill a {rows}x{cols} matrix", data.len())));
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Builds a matrix from nested rows; panics on ragged input (test/fixture helper).
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.as_ref().len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.as_ref().len(), c, "ragged rows");
            data.extend_from_slice(row.as_ref());
        }
        Matrix { rows: r, cols: c, data }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Matrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c] = v;
    }

    /// Entry access with both indices reduced modulo the dimensions.
    #[inline]
    pub fn at_wrapped(&self, r: i64, c: i64) -> f64 {
        self.get(wrap(r, self.rows), wrap(c, self.cols))
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    /// Wrapped submatrix over inclusive index ranges.
    ///
    /// `rows = 1..=2` on a 2-row matrix yields rows 1 and 0, in that order.
    pub fn submatrix(&self, rows: RangeInclusive<i64>, cols: RangeInclusive<i64>) -> Matrix {
        let (r0, r1) = (*rows.start(), *rows.end());
        let (c0, c1) = (*cols.start(), *cols.end());
        assert!(r1 >= r0 && c1 >= c0, "submatrix ranges must be non-empty");
        let nr = (r1 - r0 + 1) as usize;
        let nc = (c1 - c0 + 1) as usize;
        Matrix::from_fn(nr, nc, |i, j| self.at_wrapped(r0 + i as i64, c0 + j as i64))
    }

    /// Top-left `rows x cols` block, wrapping when the request exceeds the shape.
    pub fn leading_block(&self, rows: usize, cols: usize) -> Matrix {
        if rows <= self.rows && cols <= self.cols {
            Matrix::from_fn(rows, cols, |i, j| self.get(i, j))
        } else {
            Matrix::from_fn(rows, cols, |i, j| self.at_wrapped(i as i64, j as i64))
        }
    }

    /// Copy of the block starting at `(r0, c0)`; out-of-range entries read as zero.
    pub fn block_zero_padded(&self, r0: usize, c0: usize, rows: usize, cols: usize) -> Matrix {
        Matrix::from_fn(rows, cols, |i, j| {
            let (r, c) = (r0 + i, c0 + j);
            if r < self.rows && c < self.cols {
                self.get(r, c)
            } else {
                0.0
            }
        })
    }

    pub fn zero_padded(&self, rows: usize, cols: usize) -> Matrix {
        self.block_zero_padded(0, 0, rows, cols)
    }

    pub fn transform(&self, kind: TransformKind, times: usize) -> Matrix {
        if self.is_empty() {
            return self.clone();
        }
        let o = times as i64;
        match kind {
            TransformKind::Sigma => {
                Matrix::from_fn(self.rows, self.cols, |j, k| self.at_wrapped(j as i64, k as i64 + o * j as i64))
            }
            TransformKind::Tau => {
                Matrix::from_fn(self.rows, self.cols, |j, k| self.at_wrapped(j as i64 + o * k as i64, k as i64))
            }
            TransformKind::Xi => Matrix::from_fn(self.rows, self.cols, |j, k| self.at_wrapped(j as i64, k as i64 + o)),
            TransformKind::Psi => Matrix::from_fn(self.rows, self.cols, |j, k| self.at_wrapped(j as i64 + o, k as i64)),
        }
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&x| f(x)).collect() }
    }

    pub fn scale(&self, s: f64) -> Matrix {
        self.map(|x| x * s)
    }

    fn check_same_shape(&self, other: &Matrix, what: &str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::Shape(format!("{what}: {}x{} vs {}x{}", self.rows, self.cols, other.rows, other.cols)));
        }
        Ok(())
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.check_same_shape(other, "add")?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        Ok(Matrix { rows: self.rows, cols: self.cols, data })
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.check_same_shape(other, "sub")?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        Ok(Matrix { rows: self.rows, cols: self.cols, data })
    }

    pub fn hadamard(&self, other: &Matrix) -> Result<Matrix> {
        self.check_same_shape(other, "hadamard")?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a * b).collect();
        Ok(Matrix { rows: self.rows, cols: self.cols, data })
    }

    pub fn add_assign_scaled(&mut self, other: &Matrix, s: f64) -> Result<()> {
        self.check_same_shape(other, "axpy")?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
        Ok(())
    }

    /// Cache-friendly product; the independent schoolbook reference is [`matmul_oracle`].
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::Shape(format!(
                "matmul: {}x{} times {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        let n = other.cols;
        for i in 0..self.rows {
            let out_row = &mut out.data[i * n..(i + 1) * n];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let b_row = &other.data[k * n..(k + 1) * n];
                for (o, b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
    }

    /// `‖self − other‖_F / ‖other‖_F` (absolute norm when `other` is zero).
    pub fn relative_frobenius_error(&self, reference: &Matrix) -> Result<f64> {
        let diff = self.sub(reference)?.frobenius_norm();
        let norm = reference.frobenius_norm();
        Ok(if norm == 0.0 { diff } else { diff / norm })
    }

    /// Appends a constant-1 row, the bias input of a folded linear layer.
    pub fn with_ones_row(&self) -> Matrix {
        let mut data = self.data.clone();
        data.extend(std::iter::repeat_n(1.0, self.cols));
        Matrix { rows: self.rows + 1, cols: self.cols, data }
    }

    pub fn select_columns(&self, cols: &[usize]) -> Matrix {
        Matrix::from_fn(self.rows, cols.len(), |i, j| self.get(i, cols[j]))
    }

    pub fn column_range(&self, start: usize, count: usize) -> Matrix {
        Matrix::from_fn(self.rows, count, |i, j| self.get(i, start + j))
    }

    pub fn row_range(&self, start: usize, count: usize) -> Matrix {
        Matrix {
            rows: count,
            cols: self.cols,
            data: self.data[start * self.cols..(start + count) * self.cols].to_vec(),
        }
    }

    /// Text form: a `rows cols` header line, then one whitespace-separated row per line.
    pub fn write_text<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{} {}", self.rows, self.cols)?;
        for r in 0..self.rows {
            let line: Vec<String> = self.row(r).iter().map(|x| format!("{x:?}")).collect();
            writeln!(w, "{}", line.join(" "))?;
        }
        Ok(())
    }

    pub fn read_text<R: BufRead>(r: R) -> Result<Matrix> {
        let mut tokens = Vec::new();
        for line in r.lines() {
            let line = line?;
            tokens.extend(line.split_whitespace().map(str::to_owned));
        }
        let mut it = tokens.into_iter();
        let mut header = |name: &str| -> Result<usize> {
            it.next()
                .ok_or_else(|| Error::Parse(format!("missing {name} in matrix header")))?
                .parse::<usize>()
                .map_err(|e| Error::Parse(format!("bad {name}: {e}")))
        };
        let rows = header("rows")?;
        let cols = header("cols")?;
        let data = it
            .map(|t| t.parse::<f64>().map_err(|e| Error::Parse(format!("bad scalar `{t}`: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        Matrix::from_vec(rows, cols, data)
    }

    const MAGIC: &'static [u8; 4] = b"MTX1";

    /// Binary form: `MTX1`, rows and cols as little-endian u64, then f64 LE scalars.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(Self::MAGIC)?;
        w.write_all(&(self.rows as u64).to_le_bytes())?;
        w.write_all(&(self.cols as u64).to_le_bytes())?;
        for x in &self.data {
            w.write_all(&x.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Matrix> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != Self::MAGIC {
            return Err(Error::Parse("not a binary matrix (bad magic)".into()));
        }
        let mut u = [0u8; 8];
        r.read_exact(&mut u)?;
        let rows = u64::from_le_bytes(u) as usize;
        r.read_exact(&mut u)?;
        let cols = u64::from_le_bytes(u) as usize;
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            r.read_exact(&mut u)?;
            data.push(f64::from_le_bytes(u));
        }
        Matrix::from_vec(rows, cols, data)
    }
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for r in 0..self.rows {
            writeln!(f, "  {:?}", self.row(r))?;
        }
        write!(f, "]")
    }
}

/// Ground-truth triple-loop product, kept deliberately naive.
pub fn matmul_oracle(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols() != b.rows() {
        return Err(Error::Shape(format!("oracle: {}x{} times {}x{}", a.rows(), a.cols(), b.rows(), b.cols())));
    }
    let mut out = Matrix::zeros(a.rows(), b.cols());
    for i in 0..a.rows() {
        for j in 0..b.cols() {
            let mut acc = 0.0;
            for k in 0..a.cols() {
                acc += a.get(i, k) * b.get(k, j);
            }
            out.set(i, j, acc);
        }
    }
    Ok(out)
}

/// Concatenates two matrices; an empty operand leaves the other unchanged.
pub fn concat(m1: &Matrix, m2: &Matrix, axis: Axis) -> Result<Matrix> {
    if m2.is_empty() {
        return Ok(m1.clone());
    }
    if m1.is_empty() {
        return Ok(m2.clone());
    }
    match axis {
        Axis::Vertical => {
            if m1.cols() != m2.cols() {
                return Err(Error::Shape(format!(
                    "vertical concat needs equal columns ({} vs {})",
                    m1.cols(),
                    m2.cols()
                )));
            }
            let mut data = m1.data().to_vec();
            data.extend_from_slice(m2.data());
            Matrix::from_vec(m1.rows() + m2.rows(), m1.cols(), data)
        }
        Axis::Horizontal => {
            if m1.rows() != m2.rows() {
                return Err(Error::Shape(format!(
                    "horizontal concat needs equal rows ({} vs {})",
                    m1.rows(),
                    m2.rows()
                )));
            }
            let cols = m1.cols() + m2.cols();
            Ok(Matrix::from_fn(
                m1.rows(),
                cols,
                |i, j| {
                    if j < m1.cols() {
                        m1.get(i, j)
                    } else {
                        m2.get(i, j - m1.cols())
                    }
                },
            ))
        }
    }
}

/// `copies` copies of `m` concatenated along `axis`.
pub fn tile(m: &Matrix, copies: usize, axis: Axis) -> Result<Matrix> {
    let mut out = Matrix::empty();
    for _ in 0..copies {
        out = concat(&out, m, axis)?;
    }
    Ok(out)
}

pub fn vstack(parts: &[Matrix]) -> Result<Matrix> {
    parts.iter().try_fold(Matrix::empty(), |acc, p| concat(&acc, p, Axis::Vertical))
}

pub fn hstack(parts: &[Matrix]) -> Result<Matrix> {
    parts.iter().try_fold(Matrix::empty(), |acc, p| concat(&acc, p, Axis::Horizontal))
}

/// Class labels, one per sample.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelVector {
    labels: Vec<usize>,
}

impl LabelVector {
    pub fn new(labels: Vec<usize>) -> Self {
        LabelVector { labels }
    }

    /// Fails if any label is outside `0..classes`.
    pub fn with_classes(labels: Vec<usize>, classes: usize) -> Result<Self> {
        if let Some(bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::Dataset(format!("label {bad} out of range for {classes} classes")));
        }
        Ok(LabelVector { labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.labels
    }

    pub fn select(&self, idx: &[usize]) -> LabelVector {
        LabelVector { labels: idx.iter().map(|&i| self.labels[i]).collect() }
    }

    /// Labels as a `1 x m` real row vector.
    pub fn to_row(&self) -> Matrix {
        Matrix::from_fn(1, self.labels.len(), |_, j| self.labels[j] as f64)
    }
}

/// Per-column index of the maximum entry. Ties go to the lowest index.
pub fn argmax_columns(scores: &Matrix) -> LabelVector {
    let labels = (0..scores.cols())
        .map(|c| {
            let mut best = 0;
            for r in 1..scores.rows() {
                if scores.get(r, c) > scores.get(best, c) {
                    best = r;
                }
            }
            best
        })
        .collect();
    LabelVector { labels }
}
