//! Process-centric evaluation of next-action prediction for simulated
//! online shoppers.

pub mod agents;
pub mod client;
pub mod eval;
pub mod html;
pub mod jsonl;
pub mod oracle;
pub mod pipeline;
pub mod session;
pub mod shop;
pub mod synth;
