pub mod data;
pub mod eval;
pub mod flow;
pub mod predict;
pub mod synth;
pub mod train;
