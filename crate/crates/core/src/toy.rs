//! Scalar bilinear two-mode system with closed-form midpoint steps.
//!
//! Mode 0 relaxes towards one, `ẋ = 1 − x`; mode 1 decays at a controlled
//! rate, `ẋ = −(1 + u) x`. Both modes share the integrand
//! `(x − r)² + ρ u²`. Neither mode alone can hold `x` at an interior target,
//! so the embedded optimum is fractional.

use crate::model::Mode;
use crate::scalar::{up, Eval, Real};
use crate::solver::EvalError;
use crate::transcription::SwitchedSystem;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BilinearToy<T> {
    pub target: T,
    pub rho: T,
    /// Weight on `(x_N − r)²`.
    pub terminal_weight: T,
}

impl<T: Real> Default for BilinearToy<T> {
    fn default() -> Self {
        Self { target: T::lit(0.5), rho: T::lit(0.1), terminal_weight: T::zero() }
    }
}

impl<T: Real> BilinearToy<T> {
    /// Embedded field as `a + b x`.
    fn affine(&self, u1: T, v: T) -> (T, T) {
        let w0 = T::one() - v;
        (w0, -w0 - v * (T::one() + u1))
    }

    /// One implicit-midpoint step of the embedded field.
    pub fn midpoint_step(&self, x: T, u1: T, v: T, h: T) -> T {
        let (a, b) = self.affine(u1, v);
        let half = T::lit(0.5) * h * b;
        (x * (T::one() + half) + h * a) / (T::one() - half)
    }

    /// Discrete embedded objective of a control sequence, matching the
    /// collocation cost with `u0 = 0`.
    pub fn discrete_cost(&self, x0: T, h: T, controls: &[(T, T, T)]) -> T {
        let mut x = x0;
        let mut j = T::zero();
        for &(u0, u1, v) in controls {
            let xn = self.midpoint_step(x, u1, v, h);
            let l = |x: T| {
                let e = x - self.target;
                e * e + (T::one() - v) * self.rho * u0 * u0 + v * self.rho * u1 * u1
            };
            j = j + T::lit(0.5) * h * (l(x) + l(xn));
            x = xn;
        }
        let e = x - self.target;
        j + self.terminal_weight * e * e
    }
}

impl<T: Real> SwitchedSystem<T> for BilinearToy<T> {
    fn nx(&self) -> usize {
        1
    }

    fn nu(&self) -> usize {
        1
    }

    fn dynamics<S: Eval<T>>(&self, mode: Mode, _: usize, x: &[S], u: &[S], out: &mut [S]) -> Result<(), EvalError> {
        out[0] = match mode {
            Mode::Motoring => S::one() - x[0],
            Mode::Generating => -(S::one() + u[0]) * x[0],
        };
        Ok(())
    }

    fn stage_cost<S: Eval<T>>(&self, _: Mode, _: usize, x: &[S], u: &[S]) -> S {
        let e = x[0] - up::<T, S>(self.target);
        e * e + up::<T, S>(self.rho) * u[0] * u[0]
    }

    fn terminal_cost<S: Eval<T>>(&self, x: &[S]) -> S {
        let e = x[0] - up::<T, S>(self.target);
        up::<T, S>(self.terminal_weight) * e * e
    }

    fn state_bounds(&self) -> (Vec<T>, Vec<T>) {
        (vec![T::lit(-10.0)], vec![T::lit(10.0)])
    }

    fn control_bounds(&self) -> (Vec<T>, Vec<T>) {
        (vec![T::zero()], vec![T::one()])
    }
}
