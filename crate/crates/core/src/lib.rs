pub mod cli;
pub mod corpus;
pub mod diffcore;
pub mod eval;
pub mod geo;
pub mod mixture;
pub mod model;
pub mod text;
pub mod train;
