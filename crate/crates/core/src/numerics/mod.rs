//! Dense kernels, parameter storage, reverse-mode gradients and their verification.

pub mod adam;
pub mod checkpoint;
pub mod gradcheck;
pub mod init;
pub mod matrix;
pub mod params;
pub mod rng;
pub mod tape;

pub use adam::{Adam, AdamConfig};
pub use gradcheck::{grad_check, GradCheckReport, ParamCheck};
pub use init::{init_params, Init, ParamDecl};
pub use matrix::Matrix;
pub use params::{Param, ParamStore};
pub use rng::{Purpose, RngStream};
pub use tape::{FloatMode, Tape, Var};
