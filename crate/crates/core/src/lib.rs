//! Multi-objective sub-network search over elastic super-network spaces.
//!
//! Genotypes from a [`space::SearchSpace`] are scored by pluggable
//! evaluators ([`evalmgr`]), searched with NSGA-II ([`evolver`]) under the
//! full-search and ConcurrentNAS tactics ([`driver`]), optionally guided by
//! surrogate predictors ([`predict`]) and a reduced space ([`popdb`]).

pub mod evalmgr;
pub mod driver;
pub mod evolver;
pub mod objectives;
pub mod popdb;
pub mod predict;
pub mod seed;
pub mod space;
