//! Entity linking with rules compiled into weighted real-valued logic.
//!
//! Rules written in a small language ([`ruledsl`]) compile into scoring
//! graphs ([`logic`]) over string, context, type, prominence and external
//! features ([`simfeatures`]). Graph parameters are fitted with a margin
//! ranking loss ([`training`]) and evaluated with [`eval`].
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases at
//! the crate root fix it to one of them.

pub mod boxgeom;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod logic;
pub mod ruledsl;
pub mod scalar;
pub mod simfeatures;
pub mod synth;
pub mod training;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Graph = logic::ScoringGraph<f64>;
pub type Model = training::Model<f64>;
pub type GateParams = logic::GateParams<f64>;
pub type Hyperbox = boxgeom::Hyperbox<f64>;

pub type Graph32 = logic::ScoringGraph<f32>;
pub type Model32 = training::Model<f32>;
pub type GateParams32 = logic::GateParams<f32>;
pub type Hyperbox32 = boxgeom::Hyperbox<f32>;
