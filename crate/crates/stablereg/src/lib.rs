pub mod cli;
pub mod expr;
pub mod fit;
pub mod flows;
pub mod grid;
pub mod kernels;
pub mod model;
pub mod montecarlo;
pub mod parametrix;
pub mod quad;
pub mod regression;
pub mod stable;
