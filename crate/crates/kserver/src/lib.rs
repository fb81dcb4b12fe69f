//! Randomized k-server in polynomial time with few random bits.
//!
//! The pipeline has four layers, each usable on its own:
//!
//! - [`fractional`]: an online fractional algorithm on τ-HSTs. Each request is
//!   served by a Bregman projection onto the anti-server polytope
//!   ([`antiserver`]), computed with the ellipsoid method ([`solver`]).
//! - [`discretize`]: converts any fractional trajectory into an `m`-barely
//!   fractional one (all masses multiples of `1/m`) at a constant-factor
//!   cost, and filters requests that are already served.
//! - [`rounding`]: turns an `m`-barely fractional trajectory into `m`
//!   deterministic configurations that are consistent and balanced; sampling
//!   one of them costs `⌈log₂ m⌉` random bits, once.
//! - [`metric`]: trees, HSTs and the random embedding of a finite metric
//!   into an HST, which lets the tree algorithms run on any metric.
//!
//! [`measure`] holds exact mass vectors and tree optimal transport,
//! [`offline`] the exact offline optimum and brute-force oracles, and
//! [`harness`] the experiment runner behind the `kserver` binary. All costs
//! are exact rationals ([`rat`]); all randomness is drawn from a counted
//! [`bits::BitStream`].

pub mod antiserver;
pub mod bits;
pub mod discretize;
pub mod fractional;
pub mod harness;
pub mod measure;
pub mod metric;
pub mod offline;
pub mod rat;
pub mod rounding;
pub mod solver;
