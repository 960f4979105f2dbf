//! Scalar abstraction for the numeric core.
//!
//! All network math is generic over [`Scalar`] so the same layers run in
//! `f32` for training speed and in `f64` for finite-difference gradient
//! checks. Concrete aliases live at the crate root.

use num_traits::{Float, NumAssign};
use std::fmt::{Debug, Display};
use std::iter::Sum;

pub trait Scalar:
    Float + NumAssign + Sum + Copy + Send + Sync + Debug + Display + 'static
{
    fn from_f64(x: f64) -> Self;
    fn as_f64(self) -> f64;
    fn from_usize(x: usize) -> Self {
        Self::from_f64(x as f64)
    }
    fn half() -> Self {
        Self::from_f64(0.5)
    }
    fn two() -> Self {
        Self::from_f64(2.0)
    }
}

impl Scalar for f32 {
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn from_f64(x: f64) -> Self {
        x
    }
    fn as_f64(self) -> f64 {
        self
    }
}
