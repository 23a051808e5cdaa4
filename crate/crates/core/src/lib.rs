pub mod nn;
pub mod env;
pub mod physics;
pub mod refmotion;
pub mod policy;
pub mod rewards;
pub mod trainer;
pub mod eval;
pub mod nav;
pub mod adapter;
