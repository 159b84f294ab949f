pub mod analysis;
pub mod check;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod model;
pub mod report;
pub mod summarizer;
pub mod train;

pub use error::{Result, UtsError};
pub use summarizer::Summarizer;

pub type Summarizer64 = Summarizer<f64>;
pub type Summarizer32 = Summarizer<f32>;
