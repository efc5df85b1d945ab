//! Data side of the toy pipeline: the glyph-scene generator, the
//! multi-level caption pipeline behind annotator ports, and the multi-task
//! data mixer.

pub mod caption;
pub mod error;
pub mod font;
pub mod glyph;
pub mod mixer;

pub use error::{DataError, Result};
pub use glyph::{generate_scenes, synth_dataset, GlyphSceneSpec, GlyphTaskParams};
pub use mixer::{plan_counts, reference_specs, sample_mixture, MixturePlan, Scale, TaskSpec};
