//! Policy synthesis for labeled MDPs under LTL tasks with probabilistic
//! safe-return constraints.

pub mod abstraction;
pub mod automata;
pub mod chain;
pub mod error;
pub mod execution;
pub mod lp;
pub mod model;
pub mod oracle;
pub mod planner;
pub mod policy;
pub mod product;
pub mod reach;
pub mod synthesis;
pub mod workspace;

pub use error::{Error, Result};
