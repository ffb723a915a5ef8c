//! qklab: a numerical laboratory for quantitative K-theory of filtered
//! l^p matrix algebras. Every construction carries an explicit
//! (epsilon, propagation, norm-bound) certificate checked with one-sided
//! norm intervals.

pub mod linalg;
pub mod algebra;
pub mod pnorm;
pub mod quasi;
pub mod kclasses;
pub mod funcalc;
pub mod extensions;
pub mod mayervietoris;
pub mod cstar;
pub mod harness;
