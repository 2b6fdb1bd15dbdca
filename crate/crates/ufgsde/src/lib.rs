//! Analysis and simulation of degenerate Stratonovich SDEs
//! `dX = V0(X) dt + sqrt(2) * sum_i Vi(X) o dB^i` whose driving fields satisfy
//! a finite-generation condition on their Lie-bracket hierarchy.

// `!(x <= tol)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod catalog;
pub mod diagnostics;
pub mod dynamics;
pub mod expr;
pub mod fields;
pub mod geometry;
pub mod io;
pub mod linalg;
pub mod malliavin;
