pub mod conv;
pub mod elementwise;
pub mod linear;
pub mod lstm;
pub mod reduce;
pub mod shrink;
pub mod structure;
