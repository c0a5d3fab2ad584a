//! Exact rational vectors and matrices.
//!
//! Everything downstream (group actions, coinvariants, tensor contraction,
//! Morita checks) reduces to small dense matrices over the rationals, so the
//! operations here are plain Gaussian elimination and friends with
//! [`num::BigRational`] entries. No floating point anywhere.

use std::fmt;
use std::str::FromStr;

use num::{BigRational, One, Signed, Zero};
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Exact rational scalar.
pub type Q = BigRational;

/// Rational from a numerator/denominator pair.
pub fn q(numer: i64, denom: i64) -> Q {
    Q::new(numer.into(), denom.into())
}

/// Rational from an integer.
pub fn qi(n: i64) -> Q {
    Q::from_integer(n.into())
}

/// Parses `"p/q"` or `"p"`.
pub fn parse_q(s: &str) -> Result<Q, LinalgError> {
    Q::from_str(s.trim()).map_err(|_| LinalgError::BadRational(s.to_string()))
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LinalgError {
    #[error("cannot parse rational {0:?}")]
    BadRational(String),
    #[error("ragged matrix rows")]
    RaggedRows,
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("vector does not lie in the column span")]
    NotInSpan,
}

/// Dense row-major matrix with exact rational entries.
#[derive(Clone, PartialEq, Eq)]
pub struct QMatrix {
    rows: usize,
    cols: usize,
    data: Vec<Q>,
}

impl QMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        QMatrix {
            rows,
            cols,
            data: vec![Q::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = QMatrix::zeros(n, n);
        for i in 0..n {
            m.set(i, i, Q::one());
        }
        m
    }

    /// Matrix of the permutation sending basis vector `i` to `perm[i]`.
    pub fn permutation(perm: &[usize]) -> Self {
        let n = perm.len();
        let mut m = QMatrix::zeros(n, n);
        for (i, &j) in perm.iter().enumerate() {
            m.set(j, i, Q::one());
        }
        m
    }

    pub fn from_rows(rows: Vec<Vec<Q>>) -> Result<Self, LinalgError> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(LinalgError::RaggedRows);
        }
        Ok(QMatrix {
            rows: r,
            cols: c,
            data: rows.into_iter().flatten().collect(),
        })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> Q) -> Self {
        let mut m = QMatrix::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m.set(i, j, f(i, j));
            }
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> &Q {
        &self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: Q) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[Q] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(Zero::is_zero)
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn is_symmetric(&self) -> bool {
        self.is_square()
            && (0..self.rows).all(|i| (0..i).all(|j| self.get(i, j) == self.get(j, i)))
    }

    pub fn transpose(&self) -> QMatrix {
        QMatrix::from_fn(self.cols, self.rows, |i, j| self.get(j, i).clone())
    }

    pub fn scale(&self, s: &Q) -> QMatrix {
        QMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|x| x * s).collect(),
        }
    }

    pub fn add(&self, rhs: &QMatrix) -> QMatrix {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        QMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&rhs.data)
                .map(|(a, b)| a + b)
                .collect(),
        }
    }

    pub fn sub(&self, rhs: &QMatrix) -> QMatrix {
        self.add(&rhs.scale(&-Q::one()))
    }

    pub fn mul(&self, rhs: &QMatrix) -> QMatrix {
        assert_eq!(self.cols, rhs.rows, "matrix product shape mismatch");
        let mut out = QMatrix::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a.is_zero() {
                    continue;
                }
                for j in 0..rhs.cols {
                    let v = out.get(i, j) + a * rhs.get(k, j);
                    out.set(i, j, v);
                }
            }
        }
        out
    }

    pub fn matvec(&self, v: &[Q]) -> Vec<Q> {
        assert_eq!(self.cols, v.len(), "matvec shape mismatch");
        (0..self.rows)
            .map(|i| {
                self.row(i)
                    .iter()
                    .zip(v)
                    .fold(Q::zero(), |acc, (a, x)| acc + a * x)
            })
            .collect()
    }

    pub fn kronecker(&self, rhs: &QMatrix) -> QMatrix {
        QMatrix::from_fn(self.rows * rhs.rows, self.cols * rhs.cols, |i, j| {
            self.get(i / rhs.rows, j / rhs.cols) * rhs.get(i % rhs.rows, j % rhs.cols)
        })
    }

    /// Reduced row echelon form together with the pivot columns.
    pub fn rref(&self) -> (QMatrix, Vec<usize>) {
        let mut m = self.clone();
        let mut pivots = Vec::new();
        let mut r = 0;
        for c in 0..m.cols {
            let Some(p) = (r..m.rows).find(|&i| !m.get(i, c).is_zero()) else {
                continue;
            };
            m.swap_rows(r, p);
            let inv = m.get(r, c).clone();
            for j in 0..m.cols {
                let v = m.get(r, j) / &inv;
                m.set(r, j, v);
            }
            for i in 0..m.rows {
                if i != r && !m.get(i, c).is_zero() {
                    let f = m.get(i, c).clone();
                    for j in 0..m.cols {
                        let v = m.get(i, j) - &f * m.get(r, j);
                        m.set(i, j, v);
                    }
                }
            }
            pivots.push(c);
            r += 1;
            if r == m.rows {
                break;
            }
        }
        (m, pivots)
    }

    pub fn rank(&self) -> usize {
        self.rref().1.len()
    }

    pub fn det(&self) -> Q {
        assert!(self.is_square(), "determinant of a non-square matrix");
        let mut m = self.clone();
        let mut det = Q::one();
        for c in 0..m.cols {
            let Some(p) = (c..m.rows).find(|&i| !m.get(i, c).is_zero()) else {
                return Q::zero();
            };
            if p != c {
                m.swap_rows(c, p);
                det = -det;
            }
            let lead = m.get(c, c).clone();
            det *= &lead;
            for i in c + 1..m.rows {
                if !m.get(i, c).is_zero() {
                    let f = m.get(i, c) / &lead;
                    for j in c..m.cols {
                        let v = m.get(i, j) - &f * m.get(c, j);
                        m.set(i, j, v);
                    }
                }
            }
        }
        det
    }

    pub fn inverse(&self) -> Option<QMatrix> {
        if !self.is_square() {
            return None;
        }
        let n = self.rows;
        let mut aug = QMatrix::zeros(n, 2 * n);
        for i in 0..n {
            for j in 0..n {
                aug.set(i, j, self.get(i, j).clone());
            }
            aug.set(i, n + i, Q::one());
        }
        let (red, pivots) = aug.rref();
        if pivots.len() < n || pivots.iter().any(|&p| p >= n) {
            return None;
        }
        Some(QMatrix::from_fn(n, n, |i, j| red.get(i, n + j).clone()))
    }

    fn swap_rows(&mut self, a: usize, b: usize) {
        if a == b {
            return;
        }
        for j in 0..self.cols {
            self.data.swap(a * self.cols + j, b * self.cols + j);
        }
    }

    /// Solves `self * x = v` column-wise, requiring `v` to lie in the column
    /// span.
    pub fn solve_in_span(&self, v: &[Q]) -> Result<Vec<Q>, LinalgError> {
        if v.len() != self.rows {
            return Err(LinalgError::Dimension(format!(
                "expected length {}, got {}",
                self.rows,
                v.len()
            )));
        }
        let mut aug = QMatrix::zeros(self.rows, self.cols + 1);
        for i in 0..self.rows {
            for j in 0..self.cols {
                aug.set(i, j, self.get(i, j).clone());
            }
            aug.set(i, self.cols, v[i].clone());
        }
        let (red, pivots) = aug.rref();
        if pivots.contains(&self.cols) {
            return Err(LinalgError::NotInSpan);
        }
        let mut x = vec![Q::zero(); self.cols];
        for (r, &c) in pivots.iter().enumerate() {
            x[c] = red.get(r, self.cols).clone();
        }
        Ok(x)
    }
}

impl fmt::Debug for QMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "QMatrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            let row: Vec<String> = self.row(i).iter().map(ToString::to_string).collect();
            writeln!(f, "  [{}]", row.join(", "))?;
        }
        write!(f, "]")
    }
}

impl Serialize for QMatrix {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<String>> = (0..self.rows)
            .map(|i| self.row(i).iter().map(ToString::to_string).collect())
            .collect();
        rows.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for QMatrix {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let rows = Vec::<Vec<String>>::deserialize(deserializer)?;
        let parsed: Result<Vec<Vec<Q>>, LinalgError> = rows
            .iter()
            .map(|row| row.iter().map(|s| parse_q(s)).collect())
            .collect();
        QMatrix::from_rows(parsed.map_err(D::Error::custom)?).map_err(D::Error::custom)
    }
}

/// A quotient of an ambient coordinate space by the row space of a relation
/// matrix.
///
/// `projection * section = id` on the quotient, and `x - section(projection
/// x)` always lies in the relation span.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QuotientSpace {
    pub ambient_dim: usize,
    pub dim: usize,
    /// `dim x ambient` matrix projecting onto quotient coordinates.
    pub projection: QMatrix,
    /// `ambient x dim` section picking representatives (the non-pivot
    /// coordinates of the relation span).
    pub section: QMatrix,
}

/// Quotient of the standard space of dimension `ambient_dim` by the span of
/// the rows of `relations`.
pub fn quotient_by_rows(ambient_dim: usize, relations: &QMatrix) -> QuotientSpace {
    assert!(relations.rows() == 0 || relations.cols() == ambient_dim);
    let (red, pivots) = relations.rref();
    let free: Vec<usize> = (0..ambient_dim).filter(|c| !pivots.contains(c)).collect();
    let dim = free.len();
    let mut projection = QMatrix::zeros(dim, ambient_dim);
    for (fi, &c) in free.iter().enumerate() {
        projection.set(fi, c, Q::one());
    }
    // A pivot coordinate is congruent to minus the free tail of its row.
    for (r, &p) in pivots.iter().enumerate() {
        for (fi, &c) in free.iter().enumerate() {
            projection.set(fi, p, -red.get(r, c).clone());
        }
    }
    let mut section = QMatrix::zeros(ambient_dim, dim);
    for (fi, &c) in free.iter().enumerate() {
        section.set(c, fi, Q::one());
    }
    QuotientSpace {
        ambient_dim,
        dim,
        projection,
        section,
    }
}

/// Sum of the absolute values of the entries; handy as a cheap "size" probe
/// in tests.
pub fn entry_norm(m: &QMatrix) -> Q {
    m.data.iter().map(Signed::abs).fold(Q::zero(), |a, b| a + b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rational_parsing_round_trips() {
        assert_eq!(parse_q("3/4").unwrap(), q(3, 4));
        assert_eq!(parse_q("-7").unwrap(), qi(-7));
        assert_eq!(parse_q("6/4").unwrap(), q(3, 2));
        assert!(parse_q("x").is_err());
        assert_eq!(q(3, 4).to_string(), "3/4");
        assert_eq!(qi(5).to_string(), "5");
    }

    #[test]
    fn rref_and_rank() {
        let m = QMatrix::from_rows(vec![
            vec![qi(1), qi(2), qi(3)],
            vec![qi(2), qi(4), qi(6)],
            vec![qi(0), qi(1), qi(1)],
        ])
        .unwrap();
        assert_eq!(m.rank(), 2);
        let (red, pivots) = m.rref();
        assert_eq!(pivots, vec![0, 1]);
        assert_eq!(red.get(0, 0), &qi(1));
        assert_eq!(red.get(0, 1), &qi(0));
    }

    #[test]
    fn inverse_and_det() {
        let m = QMatrix::from_rows(vec![vec![qi(2), qi(1)], vec![qi(1), qi(1)]]).unwrap();
        assert_eq!(m.det(), qi(1));
        let inv = m.inverse().unwrap();
        assert_eq!(m.mul(&inv), QMatrix::identity(2));
        let singular =
            QMatrix::from_rows(vec![vec![qi(1), qi(2)], vec![qi(2), qi(4)]]).unwrap();
        assert_eq!(singular.det(), qi(0));
        assert!(singular.inverse().is_none());
    }

    #[test]
    fn kronecker_shape_and_values() {
        let a = QMatrix::from_rows(vec![vec![qi(1), qi(2)]]).unwrap();
        let b = QMatrix::from_rows(vec![vec![qi(3)], vec![qi(4)]]).unwrap();
        let k = a.kronecker(&b);
        assert_eq!((k.rows(), k.cols()), (2, 2));
        assert_eq!(k.get(0, 1), &qi(6));
        assert_eq!(k.get(1, 0), &qi(4));
    }

    #[test]
    fn quotient_by_relation_rows() {
        // Quotient of Q^3 by span{e0 - e1}: dimension 2.
        let rel = QMatrix::from_rows(vec![vec![qi(1), qi(-1), qi(0)]]).unwrap();
        let quot = quotient_by_rows(3, &rel);
        assert_eq!(quot.dim, 2);
        let p0 = quot.projection.matvec(&[qi(1), qi(0), qi(0)]);
        let p1 = quot.projection.matvec(&[qi(0), qi(1), qi(0)]);
        assert_eq!(p0, p1);
        assert_eq!(
            quot.projection.mul(&quot.section),
            QMatrix::identity(2)
        );
    }

    #[test]
    fn solve_in_span_detects_outsiders() {
        let m = QMatrix::from_rows(vec![vec![qi(1)], vec![qi(2)]]).unwrap();
        assert_eq!(m.solve_in_span(&[qi(2), qi(4)]).unwrap(), vec![qi(2)]);
        assert_eq!(
            m.solve_in_span(&[qi(1), qi(0)]),
            Err(LinalgError::NotInSpan)
        );
    }

    #[test]
    fn serde_matrix_uses_rational_strings() {
        let m = QMatrix::from_rows(vec![vec![q(1, 2), qi(0)], vec![qi(-3), q(7, 5)]]).unwrap();
        let json = serde_json::to_string(&m).unwrap();
        assert_eq!(json, r#"[["1/2","0"],["-3","7/5"]]"#);
        let back: QMatrix = serde_json::from_str(&json).unwrap();
        assert_eq!(back, m);
    }
}
