pub mod conv;
mod dropout;
mod linear;
pub mod norm;
pub mod pointwise;
mod reduce;
mod shape;
mod softmax;
mod upsample;
