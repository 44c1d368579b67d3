//! Model documents, bundled fixtures, result rendering and block layouts.

mod document;
pub mod fixtures;
mod layout;
mod render;

pub use document::{parse_model, serialize_model, ParseFailure, ParseFailureKind, ParsedModel, FORMAT_VERSION};
pub use layout::{reorder_blocks, BlockLayout, BlockSpan, LayoutError};
pub use render::{render_matrix, render_result, OutputFormat};
