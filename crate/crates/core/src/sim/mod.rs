pub mod eval;
pub mod mock;
pub mod trace;
