pub mod analysis;
pub mod corpus;
pub mod elicitation;
pub mod error;
pub mod filtering;
pub mod jsonl;
pub mod language;
pub mod pipeline;
pub mod providers;
pub mod report;
pub mod tagging;
pub mod validation;

pub use error::{Error, Result};
pub use language::Language;
