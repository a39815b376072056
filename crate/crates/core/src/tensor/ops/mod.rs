pub(crate) mod conv;
mod elementwise;
pub(crate) mod interp;
mod linalg;
pub(crate) mod norm;
mod reduce;
mod shape;
mod softmax;

pub use shape::concat;
