//! Piecewise-linear lookup tables with clamped extrapolation.

use serde::{Deserialize, Serialize};

use crate::scalar::{up, Eval, Real};

/// Problems detected while validating a table.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TableError {
    #[error("table has no breakpoints")]
    Empty,
    #[error("breakpoints must be strictly increasing (index {0})")]
    NotIncreasing(usize),
    #[error("non-finite entry at index {0}")]
    NonFinite(usize),
    #[error("grid shape mismatch: expected {expected} values, found {found}")]
    Shape { expected: usize, found: usize },
}

/// One-dimensional map stored as `[breakpoint, value]` pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Table1<T> {
    points: Vec<(T, T)>,
}

impl<T: Real> Table1<T> {
    pub fn new(points: Vec<(T, T)>) -> Result<Self, TableError> {
        let table = Self { points };
        table.validate()?;
        Ok(table)
    }

    /// Builds a table from `f64` pairs; panics on invalid input, meant for
    /// compiled-in defaults.
    pub fn from_f64(points: &[(f64, f64)]) -> Self {
        Self::new(points.iter().map(|&(x, y)| (T::lit(x), T::lit(y))).collect())
            .expect("valid built-in table")
    }

    pub fn constant(value: T) -> Self {
        Self { points: vec![(T::zero(), value)] }
    }

    pub fn points(&self) -> &[(T, T)] {
        &self.points
    }

    pub fn validate(&self) -> Result<(), TableError> {
        if self.points.is_empty() {
            return Err(TableError::Empty);
        }
        for (i, &(x, y)) in self.points.iter().enumerate() {
            if !x.is_finite() || !y.is_finite() {
                return Err(TableError::NonFinite(i));
            }
            if i > 0 && x <= self.points[i - 1].0 {
                return Err(TableError::NotIncreasing(i));
            }
        }
        Ok(())
    }

    /// Evaluates the map; queries outside the breakpoints return the nearest
    /// endpoint value. At interior breakpoints the right segment is used.
    pub fn eval<S: Eval<T>>(&self, x: S) -> S {
        let pts = &self.points;
        let (x0, y0) = pts[0];
        if x < up(x0) {
            return up(y0);
        }
        let (xn, yn) = pts[pts.len() - 1];
        if x >= up(xn) {
            return up(yn);
        }
        // largest i with x_i <= x
        let mut lo = 0;
        let mut hi = pts.len() - 1;
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if x >= up(pts[mid].0) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let (xa, ya) = pts[lo];
        let (xb, yb) = pts[lo + 1];
        let slope = (yb - ya) / (xb - xa);
        up::<T, S>(ya) + (x - up(xa)) * up(slope)
    }

    pub fn max_value(&self) -> T {
        self.points.iter().map(|p| p.1).fold(T::neg_infinity(), T::max)
    }

    pub fn min_value(&self) -> T {
        self.points.iter().map(|p| p.1).fold(T::infinity(), T::min)
    }

    pub fn breakpoints(&self) -> impl Iterator<Item = T> + '_ {
        self.points.iter().map(|p| p.0)
    }

    pub fn cast<U: Real>(&self) -> Table1<U> {
        Table1 {
            points: self
                .points
                .iter()
                .map(|&(x, y)| (U::lit(x.to_f64_lossy()), U::lit(y.to_f64_lossy())))
                .collect(),
        }
    }
}

/// Two-dimensional map on a rectangular grid, bilinear inside and clamped
/// per axis outside. `values[i][j]` is the value at `(x[i], y[j])`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table2<T> {
    pub x: Vec<T>,
    pub y: Vec<T>,
    pub values: Vec<Vec<T>>,
}

fn locate<T: Real, S: Eval<T>>(axis: &[T], q: S) -> (usize, S) {
    // Returns segment index and local coordinate in [0, 1].
    if axis.len() == 1 || q < up(axis[0]) {
        return (0, S::zero());
    }
    let last = axis.len() - 1;
    if q >= up(axis[last]) {
        return (last - 1, S::one());
    }
    let mut lo = 0;
    let mut hi = last;
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if q >= up(axis[mid]) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let w = (q - up(axis[lo])) / up(axis[lo + 1] - axis[lo]);
    (lo, w)
}

impl<T: Real> Table2<T> {
    pub fn new(x: Vec<T>, y: Vec<T>, values: Vec<Vec<T>>) -> Result<Self, TableError> {
        let t = Self { x, y, values };
        t.validate()?;
        Ok(t)
    }

    pub fn from_f64(x: &[f64], y: &[f64], values: &[&[f64]]) -> Self {
        Self::new(
            x.iter().map(|&v| T::lit(v)).collect(),
            y.iter().map(|&v| T::lit(v)).collect(),
            values.iter().map(|row| row.iter().map(|&v| T::lit(v)).collect()).collect(),
        )
        .expect("valid built-in grid")
    }

    pub fn validate(&self) -> Result<(), TableError> {
        for axis in [&self.x, &self.y] {
            if axis.is_empty() {
                return Err(TableError::Empty);
            }
            for (i, v) in axis.iter().enumerate() {
                if !v.is_finite() {
                    return Err(TableError::NonFinite(i));
                }
                if i > 0 && *v <= axis[i - 1] {
                    return Err(TableError::NotIncreasing(i));
                }
            }
        }
        if self.values.len() != self.x.len() {
            return Err(TableError::Shape { expected: self.x.len(), found: self.values.len() });
        }
        for (i, row) in self.values.iter().enumerate() {
            if row.len() != self.y.len() {
                return Err(TableError::Shape { expected: self.y.len(), found: row.len() });
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(TableError::NonFinite(i));
            }
        }
        Ok(())
    }

    pub fn eval<S: Eval<T>>(&self, xq: S, yq: S) -> S {
        let (i, wx) = locate(&self.x, xq);
        let (j, wy) = locate(&self.y, yq);
        let i1 = (i + 1).min(self.x.len() - 1);
        let j1 = (j + 1).min(self.y.len() - 1);
        let v = |a: usize, b: usize| -> S { up(self.values[a][b]) };
        let one = S::one();
        (one - wx) * ((one - wy) * v(i, j) + wy * v(i, j1)) + wx * ((one - wy) * v(i1, j) + wy * v(i1, j1))
    }

    pub fn values_iter(&self) -> impl Iterator<Item = T> + '_ {
        self.values.iter().flat_map(|r| r.iter().copied())
    }

    pub fn cast<U: Real>(&self) -> Table2<U> {
        let c = |v: &T| U::lit(v.to_f64_lossy());
        Table2 {
            x: self.x.iter().map(c).collect(),
            y: self.y.iter().map(c).collect(),
            values: self.values.iter().map(|r| r.iter().map(c).collect()).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::dual_var;
    use proptest::prelude::*;

    fn ramp() -> Table1<f64> {
        Table1::from_f64(&[(0.0, 1.0), (2.0, 5.0), (4.0, 5.0)])
    }

    #[test]
    fn interpolates_and_clamps() {
        let t = ramp();
        assert_eq!(t.eval(1.0), 3.0);
        assert_eq!(t.eval(-3.0), 1.0);
        assert_eq!(t.eval(10.0), 5.0);
        assert_eq!(t.eval(2.0), 5.0);
    }

    #[test]
    fn right_derivative_at_breakpoints() {
        let t = ramp();
        assert_eq!(t.eval(dual_var(0.0)).dx, 2.0);
        assert_eq!(t.eval(dual_var(2.0)).dx, 0.0);
        assert_eq!(t.eval(dual_var(1.9)).dx, 2.0);
    }

    #[test]
    fn rejects_non_increasing_breakpoints() {
        let err = Table1::new(vec![(0.0, 1.0), (0.0, 2.0)]).unwrap_err();
        assert_eq!(err, TableError::NotIncreasing(1));
        assert_eq!(Table1::<f64>::new(vec![]).unwrap_err(), TableError::Empty);
    }

    #[test]
    fn bilinear_grid_corners_and_center() {
        let g = Table2::<f64>::from_f64(&[0.0, 1.0], &[0.0, 2.0], &[&[0.0, 2.0], &[4.0, 6.0]]);
        assert_eq!(g.eval(0.0, 0.0), 0.0);
        assert_eq!(g.eval(1.0, 2.0), 6.0);
        assert_eq!(g.eval(0.5, 1.0), 3.0);
        assert_eq!(g.eval(-1.0, 5.0), 2.0);
    }

    proptest! {
        #[test]
        fn queries_outside_range_return_endpoint(q in 4.0f64..1e6, r in -1e6f64..0.0) {
            let t = ramp();
            prop_assert_eq!(t.eval(q), 5.0);
            prop_assert_eq!(t.eval(r), 1.0);
        }
    }
}
