//! Desk-scale vision transformer with a fully manual forward and backward
//! pass, a deterministic synthetic dataset, and the teacher/student training
//! loops that exercise the distillation pipeline end to end.

pub mod data;
pub mod model;
pub mod optim;
pub mod rng;
pub mod train;
