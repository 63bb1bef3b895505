//! Dense matrices, a reverse-mode tape and the AdamW optimizer.

mod adamw;
pub mod gradcheck;
mod params;
mod tape;
mod tensor;

pub use adamw::{AdamState, AdamW};
pub use params::ParamSet;
pub(crate) use tape::silu;
pub use tape::{Tape, Var};
pub use tensor::Tensor2;
