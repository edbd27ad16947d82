//! Numerical toolkit for periodic orbits of exact magnetic flows on surfaces.
//!
//! A charged particle on a surface `(M, g)` subject to an exact magnetic field
//! `dθ` (and optionally a potential `V`) moves along solutions of
//!
//! ```text
//!     ∇_t γ' = Y(γ') − grad V,        g(Y u, v) = dθ(u, v),
//! ```
//!
//! which are critical points of a free-period action functional on the space
//! of loops with unfixed period. This crate provides the pieces needed to
//! find and classify such orbits numerically:
//!
//! * [`geometry`] — charts, metrics, magnetic 1-forms, Christoffel symbols,
//!   the Lorentz operator;
//! * [`dynamics`] — the first-order phase flow, fixed-step RK4 integration
//!   with variational equations, periodic-orbit refinement, monodromy data;
//! * [`loops`] — discrete free-period loops, the action and its
//!   H¹-preconditioned gradient, iteration and time-translation maps;
//! * [`index`] — Morse indices from discrete Hessians, twisted (Bott)
//!   index functions, mean index, nullity bookkeeping for iterates;
//! * [`symplectic`] — spectral classification of symplectic matrices,
//!   invariant Lagrangian subspaces, hyperbolic perturbations;
//! * [`search`] — local minimizers with negative action, string-method
//!   minimax levels between iterated minimizers and a lower target,
//!   parameter sweeps, and estimation of the critical field strength
//!   below which negative-action loops exist;
//! * [`config`] / [`output`] — TOML run configuration and JSON/CSV/SVG
//!   run artifacts.

pub mod config;
pub mod dynamics;
pub mod geometry;
pub mod index;
pub mod loops;
pub mod output;
pub mod search;
pub mod symplectic;
pub mod testing;

mod error;

pub use error::{Error, Result};
