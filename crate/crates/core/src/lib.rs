//! Social optimum, Nash equilibria and participant surpluses for electricity
//! markets with renewable and storage investors.
//!
//! Every model compiles to a convex quadratic program solved by [`qp`].
//! [`social_optimum`] minimizes expected system cost and prices energy at the
//! balance-constraint shadow price. [`equilibrium`] computes investor
//! equilibria under capped pricing with lost-load penalties, supply
//! incentives and price uplifts, and [`verification`] certifies them with an
//! independent best-response search.

pub mod defaults;
pub mod error;
pub mod fixtures;
pub mod model;
pub mod qp;
pub mod supply_curve;

pub use error::{Error, Result};

pub mod social_optimum;
pub mod equilibrium;
pub mod verification;
pub mod surplus;
pub mod network;
pub mod sweep;

mod assembly;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/model.md")]
    mod model {}
    #[doc = include_str!("../../../book/src/social-optimum.md")]
    mod social_optimum {}
    #[doc = include_str!("../../../book/src/mechanisms.md")]
    mod mechanisms {}
    #[doc = include_str!("../../../book/src/verification.md")]
    mod verification {}
    #[doc = include_str!("../../../book/src/surplus.md")]
    mod surplus {}
    #[doc = include_str!("../../../book/src/sweeps.md")]
    mod sweeps {}
    #[doc = include_str!("../../../book/src/network.md")]
    mod network {}
    #[doc = include_str!("../../../book/src/market-data.md")]
    mod market_data {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
