pub mod boson;
pub mod gram;
pub mod linalg;
pub mod models;
pub mod mps;
pub mod pullthrough;
pub mod saddle;

pub use num_complex::Complex64 as C64;
