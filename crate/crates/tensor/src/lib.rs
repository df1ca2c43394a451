//! Minimal dense-tensor numeric core for `ranmt`.
//!
//! Values live in row-major [`Tensor`]s. A [`Tape`] records one forward pass
//! over a [`ParamStore`] and produces [`Gradients`] by reverse-mode
//! differentiation; [`Adam`] consumes the accumulated gradients.
//!
//! Everything is generic over [`Real`] so the same model code runs in `f32`
//! for training and in `f64` for finite-difference checks.

mod error;
pub mod check;
pub mod init;
mod optim;
mod param;
mod real;
mod tape;
mod tensor;

pub use error::TensorError;
pub use optim::Adam;
pub use param::{Gradients, ParamId, ParamStore, Parameter};
pub use real::Real;
pub use tape::{Tape, Var};
pub use tensor::Tensor;

/// Appends `values` as little-endian IEEE-754 single-precision floats.
pub fn write_f32_le(values: &[f32], out: &mut Vec<u8>) {
    out.reserve(values.len() * 4);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// Decodes little-endian single-precision floats; `bytes.len()` must be a
/// multiple of four.
pub fn read_f32_le(bytes: &[u8]) -> Option<Vec<f32>> {
    if bytes.len() % 4 != 0 {
        return None;
    }
    Some(bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
}
