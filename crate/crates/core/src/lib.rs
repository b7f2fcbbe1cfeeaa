//! Deformed Hamiltonian vector fields on flat Lagrangian fibrations.
//!
//! The crate works in Darboux coordinates `z = (x, y)` on `T*R^n` (or
//! `T*T^n` when the base is wrapped), with base coordinates `x` and fibre
//! coordinates `y`. See `docs/conventions.md` for the sign conventions.

pub mod expr;
pub mod bracket;
pub mod dynamics;
pub mod forms;
pub mod morse;
pub mod ode;
pub mod phase;
pub mod sample;
