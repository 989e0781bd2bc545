//! Quadrature, interpolation and ODE building blocks.

pub mod dop853;
pub mod filon;
pub mod quad;
pub mod roots;
pub mod spline;
