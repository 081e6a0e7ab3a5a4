//! Closed-loop RTL generation: an LLM writes Verilog, open-source EDA tools
//! check it, and distilled tool feedback drives the next revision.

pub mod autodv;
pub mod autoreview;
pub mod bench;
pub mod distill;
pub mod eda;
pub mod gateway;
pub mod hdl;
pub mod model;
pub mod rules;

pub use model::*;
