//! Grids, spectral and finite-difference operators, linear solvers and the
//! tensor autodiff engine used for training.

pub mod cg;
pub mod fd;
pub mod fft;
pub mod gradcheck;
pub mod graph;
pub mod grid;
pub mod real;
pub mod tensor;

pub use cg::{cg_solve, CgSolution};
pub use fd::{fd_ddy, fd_div_eps_grad, FluxStencil};
pub use fft::{fft2, ifft2, Complex64, SpectralPlan, Spectrum2D};
pub use gradcheck::{grad_check, GradCheckReport};
pub use graph::{Gradients, Graph, Var};
pub use grid::{Field2D, GridSpec, Unit, NM};
pub use real::Real;
pub use tensor::{Param, ParamKind, ParamStore, Tensor};
