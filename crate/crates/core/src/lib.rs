//! Audit masked and causal language models for hurtful sentence completions.
//!
//! The pipeline: expand identity × predicate templates into a manifest, read
//! model completion dumps produced elsewhere, score them against a lexicon of
//! hurtful terms, summarize per model, and compare models through embedding
//! agreement of their top completions.
//!
//! ```
//! use honest_audit::lexicon::{Lexicon, MatchMode};
//!
//! let lex = Lexicon::from_entries([("idiot", "insult")], "v1").unwrap();
//! assert!(lex.is_hurtful("Idiot."));
//! assert!(lex.is_hurtful("an idiot"));
//! assert!(!lex.with_match_mode(MatchMode::Exact).is_hurtful("an idiot"));
//! ```

pub mod dump;
pub mod error;
pub mod lexicon;
pub mod report;
pub mod scoring;
pub mod similarity;
pub mod template;

pub use error::AuditError;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/intro.md")]
    mod intro {}
    #[doc = include_str!("../../../book/src/templates.md")]
    mod templates {}
    #[doc = include_str!("../../../book/src/lexicon.md")]
    mod lexicon {}
    #[doc = include_str!("../../../book/src/dumps.md")]
    mod dumps {}
    #[doc = include_str!("../../../book/src/scoring.md")]
    mod scoring {}
    #[doc = include_str!("../../../book/src/percentiles.md")]
    mod percentiles {}
    #[doc = include_str!("../../../book/src/agreement.md")]
    mod agreement {}
    #[doc = include_str!("../../../book/src/annotation.md")]
    mod annotation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
