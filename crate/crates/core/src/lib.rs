pub mod aht;
pub mod engine;
pub mod error;
pub mod lattice;
pub mod linalg;
pub mod observables;
pub mod quadrature;
pub mod sequence;
pub mod spinops;
