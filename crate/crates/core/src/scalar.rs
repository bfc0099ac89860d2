//! Scalar abstraction shared by every numerical routine in the crate.
//!
//! All model, transcription and solver code is written against [`Real`].
//! Parameters are stored in a scalar `T`, while evaluation may happen in a
//! wider type `S: Eval<T>`; in practice `S` is either `T` itself or the
//! forward-mode dual number [`Dual<T>`] used to differentiate the
//! collocation NLP.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, NumAssign};

/// Floating point scalar usable throughout the crate.
pub trait Real:
    Float + FloatConst + FromPrimitive + NumAssign + Debug + Display + Default + Sum + Send + Sync + 'static
{
    /// Converts an `f64` literal into this scalar.
    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("literal representable in scalar type")
    }

    /// Primal value as `f64` (drops derivative parts of dual numbers).
    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl<T> Real for T where
    T: Float + FloatConst + FromPrimitive + NumAssign + Debug + Display + Default + Sum + Send + Sync + 'static
{
}

/// Evaluation scalar for data stored in `T`.
pub trait Eval<T>: Real + From<T> {}

impl<T, S> Eval<T> for S where S: Real + From<T> {}

/// First-order forward-mode dual number over `T`.
pub type Dual<T> = autodiff::F<T, T>;

/// Seeds a dual variable (derivative one).
#[inline]
pub fn dual_var<T: Real>(x: T) -> Dual<T> {
    autodiff::F::new(x, T::one())
}

/// Lifts a constant into a dual number (derivative zero).
#[inline]
pub fn dual_cst<T: Real>(x: T) -> Dual<T> {
    autodiff::F::new(x, T::zero())
}

/// Lifts a stored value into the evaluation scalar.
#[inline]
pub(crate) fn up<T: Real, S: Eval<T>>(v: T) -> S {
    <S as From<T>>::from(v)
}

/// Clamp whose derivative at the corners is the right derivative: one at
/// `lo`, zero at `hi`.
#[inline]
pub fn clamp<S: Real>(x: S, lo: S, hi: S) -> S {
    if x < lo {
        lo
    } else if x >= hi {
        hi
    } else {
        x
    }
}
