//! Offline preference-optimization objectives.
//!
//! * [`batch_math`]: batched scalar arithmetic and reverse-mode gradients.
//! * [`loss_catalog`]: baseline and discovered preference losses plus shape analysis.
//! * [`objective_dsl`]: a small sandboxed language for candidate objectives.
//! * [`preference_sim`]: a tabular preference-alignment environment and trainer.
//! * [`discovery`]: the LLM-driven objective discovery loop.

pub mod batch_math;
pub mod discovery;
pub mod loss_catalog;
pub mod objective_dsl;
pub mod preference_sim;
