pub mod conv;
pub mod elementwise;
pub mod nn;
pub mod reduce;
pub mod shape;
