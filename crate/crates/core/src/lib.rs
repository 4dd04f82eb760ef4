#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ident;
pub mod lti;
pub mod nonlin;
pub mod plant;
pub mod control;
pub mod analysis;
pub mod sim;
pub mod cli;
