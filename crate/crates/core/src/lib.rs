//! Training-free glyph-template injection for a toy diffusion transformer,
//! plus the evaluation toolkit around it.

pub mod bench;
pub mod diffusion;
pub mod inject;
pub mod metrics;
pub mod plan;
pub mod prompt;
pub mod refine;
pub mod render;
pub mod segment;
pub mod vlm;
