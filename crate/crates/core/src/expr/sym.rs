//! Symbolic scalar, vector and matrix values with operator overloading.
//!
//! Vectors and matrices are plain collections of scalar nodes; every linear
//! algebra builder expands into scalar operations. Operators panic on a
//! dimension mismatch, the `try_*` methods return an error instead.

use alloc::vec::Vec;
use core::fmt;
use core::ops::{Add, Div, Index, Mul, Neg, Sub};

use super::graph::{ExprGraph, NodeId};
use crate::error::{Error, Result};

/// Default floor used by [`Vector::stable_norm`].
pub const STABLE_NORM_EPS: f64 = 1e-14;

#[derive(Clone, Copy)]
pub struct Scalar<'g> {
    graph: &'g ExprGraph,
    id: NodeId,
}

impl fmt::Debug for Scalar<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Scalar({:?})", self.graph.node(self.id))
    }
}

impl PartialEq for Scalar<'_> {
    fn eq(&self, other: &Self) -> bool {
        core::ptr::eq(self.graph, other.graph) && self.id == other.id
    }
}

impl<'g> Scalar<'g> {
    pub fn from_node(graph: &'g ExprGraph, id: NodeId) -> Self {
        Scalar { graph, id }
    }

    pub fn constant(graph: &'g ExprGraph, v: f64) -> Self {
        Scalar { graph, id: graph.constant_node(v) }
    }

    pub fn id(self) -> NodeId {
        self.id
    }

    pub fn graph(self) -> &'g ExprGraph {
        self.graph
    }

    pub fn as_const(self) -> Option<f64> {
        self.graph.const_value(self.id)
    }

    fn wrap(self, id: NodeId) -> Self {
        Scalar { graph: self.graph, id }
    }

    fn lift(self, v: f64) -> Self {
        Scalar::constant(self.graph, v)
    }

    pub fn powi(self, n: i32) -> Self {
        self.wrap(self.graph.pow_int(self.id, n))
    }

    pub fn sqrt(self) -> Self {
        self.wrap(self.graph.sqrt(self.id))
    }

    pub fn ln(self) -> Self {
        self.wrap(self.graph.log(self.id))
    }

    pub fn sin(self) -> Self {
        self.wrap(self.graph.sin(self.id))
    }

    pub fn cos(self) -> Self {
        self.wrap(self.graph.cos(self.id))
    }

    pub fn abs(self) -> Self {
        branch(self, self, -self)
    }

    /// +1 for `self >= 0`, -1 otherwise.
    pub fn sign(self) -> Self {
        branch(self, self.lift(1.0), self.lift(-1.0))
    }

    pub fn min(self, other: Self) -> Self {
        branch(other - self, self, other)
    }

    pub fn max(self, other: Self) -> Self {
        branch(self - other, self, other)
    }

    /// Condition `self <= rhs`, i.e. `rhs - self >= 0`.
    pub fn le(self, rhs: impl Into<Operand<'g>>) -> Condition<'g> {
        let rhs = rhs.into().resolve(self.graph);
        Condition { value: rhs - self, strict: false }
    }

    /// Condition `self >= rhs`.
    pub fn ge(self, rhs: impl Into<Operand<'g>>) -> Condition<'g> {
        let rhs = rhs.into().resolve(self.graph);
        Condition { value: self - rhs, strict: false }
    }

    /// Condition `self > rhs`.
    pub fn gt(self, rhs: impl Into<Operand<'g>>) -> Condition<'g> {
        let rhs = rhs.into().resolve(self.graph);
        Condition { value: self - rhs, strict: true }
    }

    /// Condition `self < rhs`.
    pub fn lt(self, rhs: impl Into<Operand<'g>>) -> Condition<'g> {
        let rhs = rhs.into().resolve(self.graph);
        Condition { value: rhs - self, strict: true }
    }
}

/// Right-hand side of a comparison: a symbolic scalar or a literal.
pub enum Operand<'g> {
    Sym(Scalar<'g>),
    Lit(f64),
}

impl<'g> Operand<'g> {
    fn resolve(self, g: &'g ExprGraph) -> Scalar<'g> {
        match self {
            Operand::Sym(s) => s,
            Operand::Lit(v) => Scalar::constant(g, v),
        }
    }
}

impl<'g> From<Scalar<'g>> for Operand<'g> {
    fn from(s: Scalar<'g>) -> Self {
        Operand::Sym(s)
    }
}

impl From<f64> for Operand<'_> {
    fn from(v: f64) -> Self {
        Operand::Lit(v)
    }
}

/// Activation predicate: holds when `value >= 0` (or `> 0` when strict).
#[derive(Clone, Copy, Debug)]
pub struct Condition<'g> {
    pub value: Scalar<'g>,
    pub strict: bool,
}

impl Condition<'_> {
    pub fn holds(strict: bool, v: f64) -> bool {
        if strict {
            v > 0.0
        } else {
            v >= 0.0
        }
    }
}

/// `a` where `c >= 0`, `b` where `c < 0`.
pub fn branch<'g>(c: Scalar<'g>, a: Scalar<'g>, b: Scalar<'g>) -> Scalar<'g> {
    c.wrap(c.graph.branch(c.id, a.id, b.id))
}

macro_rules! scalar_binop {
    ($trait:ident, $method:ident, $build:ident) => {
        impl<'g> $trait for Scalar<'g> {
            type Output = Scalar<'g>;
            fn $method(self, rhs: Scalar<'g>) -> Scalar<'g> {
                debug_assert!(core::ptr::eq(self.graph, rhs.graph), "operands from different graphs");
                self.wrap(self.graph.$build(self.id, rhs.id))
            }
        }
        impl<'g> $trait<f64> for Scalar<'g> {
            type Output = Scalar<'g>;
            fn $method(self, rhs: f64) -> Scalar<'g> {
                let rhs = self.lift(rhs);
                self.wrap(self.graph.$build(self.id, rhs.id))
            }
        }
        impl<'g> $trait<Scalar<'g>> for f64 {
            type Output = Scalar<'g>;
            fn $method(self, rhs: Scalar<'g>) -> Scalar<'g> {
                let lhs = rhs.lift(self);
                rhs.wrap(rhs.graph.$build(lhs.id, rhs.id))
            }
        }
    };
}

scalar_binop!(Add, add, add);
scalar_binop!(Sub, sub, sub);
scalar_binop!(Mul, mul, mul);
scalar_binop!(Div, div, div);

impl<'g> Neg for Scalar<'g> {
    type Output = Scalar<'g>;
    fn neg(self) -> Scalar<'g> {
        self.wrap(self.graph.neg(self.id))
    }
}

/// Fixed-length vector of scalar expressions.
#[derive(Clone, Debug, PartialEq)]
pub struct Vector<'g> {
    entries: Vec<Scalar<'g>>,
}

impl<'g> Vector<'g> {
    pub fn new(entries: Vec<Scalar<'g>>) -> Self {
        Vector { entries }
    }

    pub fn from_consts(graph: &'g ExprGraph, values: &[f64]) -> Self {
        Vector { entries: values.iter().map(|&v| Scalar::constant(graph, v)).collect() }
    }

    pub fn zeros(graph: &'g ExprGraph, n: usize) -> Self {
        Vector { entries: (0..n).map(|_| Scalar::constant(graph, 0.0)).collect() }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[Scalar<'g>] {
        &self.entries
    }

    pub fn into_entries(self) -> Vec<Scalar<'g>> {
        self.entries
    }

    pub fn ids(&self) -> Vec<NodeId> {
        self.entries.iter().map(|s| s.id()).collect()
    }

    fn check(&self, other: &Self, op: &'static str) -> Result<()> {
        if self.len() != other.len() {
            return Err(Error::DimensionMismatch { op, lhs: (self.len(), 1), rhs: (other.len(), 1) });
        }
        Ok(())
    }

    pub fn try_add(&self, other: &Self) -> Result<Self> {
        self.check(other, "vector add")?;
        Ok(Vector::new(self.entries.iter().zip(&other.entries).map(|(&a, &b)| a + b).collect()))
    }

    pub fn try_sub(&self, other: &Self) -> Result<Self> {
        self.check(other, "vector sub")?;
        Ok(Vector::new(self.entries.iter().zip(&other.entries).map(|(&a, &b)| a - b).collect()))
    }

    pub fn try_dot(&self, other: &Self) -> Result<Scalar<'g>> {
        self.check(other, "dot")?;
        let mut it = self.entries.iter().zip(&other.entries).map(|(&a, &b)| a * b);
        let first = it.next().ok_or(Error::DimensionMismatch { op: "dot", lhs: (0, 1), rhs: (0, 1) })?;
        Ok(it.fold(first, |acc, t| acc + t))
    }

    pub fn dot(&self, other: &Self) -> Scalar<'g> {
        self.try_dot(other).expect("dot: dimension mismatch")
    }

    pub fn scale(&self, s: Scalar<'g>) -> Self {
        Vector::new(self.entries.iter().map(|&a| a * s).collect())
    }

    pub fn norm_sq(&self) -> Scalar<'g> {
        self.dot(self)
    }

    pub fn norm(&self) -> Scalar<'g> {
        self.norm_sq().sqrt()
    }

    /// Euclidean norm that is exactly zero, with zero derivatives, while
    /// `|v| < eps`: `branch(|v|^2 - eps^2, sqrt(|v|^2), 0)`.
    pub fn stable_norm(&self, eps: f64) -> Scalar<'g> {
        let sq = self.norm_sq();
        let zero = sq.lift(0.0);
        branch(sq - eps * eps, sq.sqrt(), zero)
    }

    pub fn cross(&self, other: &Self) -> Result<Self> {
        if self.len() != 3 || other.len() != 3 {
            return Err(Error::DimensionMismatch { op: "cross", lhs: (self.len(), 1), rhs: (other.len(), 1) });
        }
        let (a, b) = (&self.entries, &other.entries);
        Ok(Vector::new(alloc::vec![
            a[1] * b[2] - a[2] * b[1],
            a[2] * b[0] - a[0] * b[2],
            a[0] * b[1] - a[1] * b[0],
        ]))
    }

    pub fn concat(parts: &[Vector<'g>]) -> Self {
        Vector::new(parts.iter().flat_map(|p| p.entries.iter().copied()).collect())
    }

    /// Reinterprets the entries as a row-major `rows x cols` matrix.
    pub fn reshape(&self, rows: usize, cols: usize) -> Result<Matrix<'g>> {
        Matrix::from_row_major(rows, cols, self.entries.clone())
    }
}

impl<'g> Index<usize> for Vector<'g> {
    type Output = Scalar<'g>;
    fn index(&self, i: usize) -> &Scalar<'g> {
        &self.entries[i]
    }
}

impl<'g> Add for &Vector<'g> {
    type Output = Vector<'g>;
    fn add(self, rhs: &Vector<'g>) -> Vector<'g> {
        self.try_add(rhs).expect("vector add: dimension mismatch")
    }
}

impl<'g> Sub for &Vector<'g> {
    type Output = Vector<'g>;
    fn sub(self, rhs: &Vector<'g>) -> Vector<'g> {
        self.try_sub(rhs).expect("vector sub: dimension mismatch")
    }
}

impl<'g> Mul<Scalar<'g>> for &Vector<'g> {
    type Output = Vector<'g>;
    fn mul(self, rhs: Scalar<'g>) -> Vector<'g> {
        self.scale(rhs)
    }
}

impl<'g> Mul<f64> for &Vector<'g> {
    type Output = Vector<'g>;
    fn mul(self, rhs: f64) -> Vector<'g> {
        Vector::new(self.entries.iter().map(|&a| a * rhs).collect())
    }
}

impl<'g> Neg for &Vector<'g> {
    type Output = Vector<'g>;
    fn neg(self) -> Vector<'g> {
        Vector::new(self.entries.iter().map(|&a| -a).collect())
    }
}

/// Row-major matrix of scalar expressions.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix<'g> {
    rows: usize,
    cols: usize,
    entries: Vec<Scalar<'g>>,
}

impl<'g> Matrix<'g> {
    pub fn from_row_major(rows: usize, cols: usize, entries: Vec<Scalar<'g>>) -> Result<Self> {
        if entries.len() != rows * cols {
            return Err(Error::DimensionMismatch { op: "matrix", lhs: (rows, cols), rhs: (entries.len(), 1) });
        }
        Ok(Matrix { rows, cols, entries })
    }

    pub fn from_consts(graph: &'g ExprGraph, rows: usize, cols: usize, values: &[f64]) -> Result<Self> {
        Self::from_row_major(rows, cols, values.iter().map(|&v| Scalar::constant(graph, v)).collect())
    }

    /// Matrix whose columns are the given vectors.
    pub fn from_columns(cols: &[Vector<'g>]) -> Result<Self> {
        let n = cols.first().map_or(0, |c| c.len());
        if cols.iter().any(|c| c.len() != n) {
            return Err(Error::DimensionMismatch { op: "from_columns", lhs: (n, cols.len()), rhs: (0, 0) });
        }
        let mut entries = Vec::with_capacity(n * cols.len());
        for r in 0..n {
            for c in cols {
                entries.push(c[r]);
            }
        }
        Ok(Matrix { rows: n, cols: cols.len(), entries })
    }

    pub fn from_rows(rows: &[Vector<'g>]) -> Result<Self> {
        Ok(Self::from_columns(rows)?.transpose())
    }

    pub fn identity(graph: &'g ExprGraph, n: usize) -> Self {
        let entries = (0..n * n)
            .map(|k| Scalar::constant(graph, if k / n == k % n { 1.0 } else { 0.0 }))
            .collect();
        Matrix { rows: n, cols: n, entries }
    }

    pub fn diag(values: &[Scalar<'g>]) -> Self {
        let n = values.len();
        let g = values[0].graph();
        let entries = (0..n * n)
            .map(|k| if k / n == k % n { values[k / n] } else { Scalar::constant(g, 0.0) })
            .collect();
        Matrix { rows: n, cols: n, entries }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn get(&self, r: usize, c: usize) -> Scalar<'g> {
        self.entries[r * self.cols + c]
    }

    pub fn entries(&self) -> &[Scalar<'g>] {
        &self.entries
    }

    pub fn column(&self, c: usize) -> Vector<'g> {
        Vector::new((0..self.rows).map(|r| self.get(r, c)).collect())
    }

    pub fn row(&self, r: usize) -> Vector<'g> {
        Vector::new((0..self.cols).map(|c| self.get(r, c)).collect())
    }

    pub fn transpose(&self) -> Self {
        let mut entries = Vec::with_capacity(self.entries.len());
        for c in 0..self.cols {
            for r in 0..self.rows {
                entries.push(self.get(r, c));
            }
        }
        Matrix { rows: self.cols, cols: self.rows, entries }
    }

    fn require_square(&self, op: &'static str) -> Result<()> {
        if self.rows != self.cols {
            return Err(Error::UnsupportedDimension { op, rows: self.rows, cols: self.cols });
        }
        Ok(())
    }

    pub fn trace(&self) -> Result<Scalar<'g>> {
        self.require_square("trace")?;
        let mut acc = self.get(0, 0);
        for i in 1..self.rows {
            acc = acc + self.get(i, i);
        }
        Ok(acc)
    }

    pub fn det(&self) -> Result<Scalar<'g>> {
        self.require_square("det")?;
        let m = |r, c| self.get(r, c);
        match self.rows {
            1 => Ok(m(0, 0)),
            2 => Ok(m(0, 0) * m(1, 1) - m(0, 1) * m(1, 0)),
            3 => Ok(m(0, 0) * (m(1, 1) * m(2, 2) - m(1, 2) * m(2, 1))
                - m(0, 1) * (m(1, 0) * m(2, 2) - m(1, 2) * m(2, 0))
                + m(0, 2) * (m(1, 0) * m(2, 1) - m(1, 1) * m(2, 0))),
            _ => Err(Error::UnsupportedDimension { op: "det", rows: self.rows, cols: self.cols }),
        }
    }

    /// Inverse through the adjugate divided by the determinant.
    pub fn inverse(&self) -> Result<Self> {
        self.require_square("inverse")?;
        let m = |r, c| self.get(r, c);
        let det = self.det()?;
        let adj: Vec<Scalar<'g>> = match self.rows {
            1 => alloc::vec![det.lift(1.0)],
            2 => alloc::vec![m(1, 1), -m(0, 1), -m(1, 0), m(0, 0)],
            3 => alloc::vec![
                m(1, 1) * m(2, 2) - m(1, 2) * m(2, 1),
                m(0, 2) * m(2, 1) - m(0, 1) * m(2, 2),
                m(0, 1) * m(1, 2) - m(0, 2) * m(1, 1),
                m(1, 2) * m(2, 0) - m(1, 0) * m(2, 2),
                m(0, 0) * m(2, 2) - m(0, 2) * m(2, 0),
                m(0, 2) * m(1, 0) - m(0, 0) * m(1, 2),
                m(1, 0) * m(2, 1) - m(1, 1) * m(2, 0),
                m(0, 1) * m(2, 0) - m(0, 0) * m(2, 1),
                m(0, 0) * m(1, 1) - m(0, 1) * m(1, 0),
            ],
            _ => return Err(Error::UnsupportedDimension { op: "inverse", rows: self.rows, cols: self.cols }),
        };
        let entries = adj.into_iter().map(|a| a / det).collect();
        Ok(Matrix { rows: self.rows, cols: self.cols, entries })
    }

    pub fn try_matmul(&self, rhs: &Self) -> Result<Self> {
        if self.cols != rhs.rows {
            return Err(Error::DimensionMismatch { op: "matmul", lhs: self.dims(), rhs: rhs.dims() });
        }
        let mut entries = Vec::with_capacity(self.rows * rhs.cols);
        for r in 0..self.rows {
            for c in 0..rhs.cols {
                let mut acc = self.get(r, 0) * rhs.get(0, c);
                for k in 1..self.cols {
                    acc = acc + self.get(r, k) * rhs.get(k, c);
                }
                entries.push(acc);
            }
        }
        Ok(Matrix { rows: self.rows, cols: rhs.cols, entries })
    }

    pub fn try_mul_vec(&self, v: &Vector<'g>) -> Result<Vector<'g>> {
        if self.cols != v.len() {
            return Err(Error::DimensionMismatch { op: "matvec", lhs: self.dims(), rhs: (v.len(), 1) });
        }
        Ok(Vector::new((0..self.rows).map(|r| self.row(r).dot(v)).collect()))
    }

    fn zip_with(&self, rhs: &Self, op: &'static str, f: impl Fn(Scalar<'g>, Scalar<'g>) -> Scalar<'g>) -> Result<Self> {
        if self.dims() != rhs.dims() {
            return Err(Error::DimensionMismatch { op, lhs: self.dims(), rhs: rhs.dims() });
        }
        let entries = self.entries.iter().zip(&rhs.entries).map(|(&a, &b)| f(a, b)).collect();
        Ok(Matrix { rows: self.rows, cols: self.cols, entries })
    }

    pub fn try_add(&self, rhs: &Self) -> Result<Self> {
        self.zip_with(rhs, "matrix add", |a, b| a + b)
    }

    pub fn try_sub(&self, rhs: &Self) -> Result<Self> {
        self.zip_with(rhs, "matrix sub", |a, b| a - b)
    }

    pub fn scale(&self, s: Scalar<'g>) -> Self {
        Matrix { rows: self.rows, cols: self.cols, entries: self.entries.iter().map(|&a| a * s).collect() }
    }

    pub fn scale_f64(&self, s: f64) -> Self {
        Matrix { rows: self.rows, cols: self.cols, entries: self.entries.iter().map(|&a| a * s).collect() }
    }

    pub fn frobenius_norm_sq(&self) -> Scalar<'g> {
        let mut it = self.entries.iter().map(|&a| a * a);
        let first = it.next().expect("empty matrix");
        it.fold(first, |acc, t| acc + t)
    }

    pub fn to_vector(&self) -> Vector<'g> {
        Vector::new(self.entries.clone())
    }
}

impl<'g> Mul for &Matrix<'g> {
    type Output = Matrix<'g>;
    fn mul(self, rhs: &Matrix<'g>) -> Matrix<'g> {
        self.try_matmul(rhs).expect("matmul: dimension mismatch")
    }
}

impl<'g> Mul<&Vector<'g>> for &Matrix<'g> {
    type Output = Vector<'g>;
    fn mul(self, rhs: &Vector<'g>) -> Vector<'g> {
        self.try_mul_vec(rhs).expect("matvec: dimension mismatch")
    }
}

impl<'g> Add for &Matrix<'g> {
    type Output = Matrix<'g>;
    fn add(self, rhs: &Matrix<'g>) -> Matrix<'g> {
        self.try_add(rhs).expect("matrix add: dimension mismatch")
    }
}

impl<'g> Sub for &Matrix<'g> {
    type Output = Matrix<'g>;
    fn sub(self, rhs: &Matrix<'g>) -> Matrix<'g> {
        self.try_sub(rhs).expect("matrix sub: dimension mismatch")
    }
}

impl<'g> Mul<Scalar<'g>> for &Matrix<'g> {
    type Output = Matrix<'g>;
    fn mul(self, rhs: Scalar<'g>) -> Matrix<'g> {
        self.scale(rhs)
    }
}

impl<'g> Mul<f64> for &Matrix<'g> {
    type Output = Matrix<'g>;
    fn mul(self, rhs: f64) -> Matrix<'g> {
        self.scale_f64(rhs)
    }
}
