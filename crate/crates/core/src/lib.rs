//! Cross-domain misinformation detection with multi-agent news analysis and
//! automatically optimized decision rules.

pub mod analysis;
pub mod domain;
pub mod eval;
pub mod evidence;
pub mod io;
pub mod judge;
pub mod optimizer;
pub mod pipeline;
pub mod prompts;
pub mod provider;
pub mod seeds;
pub mod tasks;
