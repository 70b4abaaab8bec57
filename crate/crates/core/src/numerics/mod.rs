//! Dense f64 arrays, seeded randomness and the small amount of linear algebra
//! the rest of the crate needs.

pub mod gradcheck;
pub mod linalg;
mod rng;
mod tensor;

pub use linalg::{softmax_rows, sym_eigen, sym_sqrtm, SymEigen};
pub use rng::{derive_seed, seeded_gaussian, SeededRng};
pub use tensor::Tensor;
