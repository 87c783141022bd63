//! Synthetic question-answer generation for domain corpora.
//!
//! The crate covers the whole path from raw documents to a fine-tuned QA
//! model's evaluation: corpus filtering, answer selection and highlight-based
//! question generation through a pluggable model gateway, SQuAD 2.0 dataset
//! handling, round-trip and QA metrics, focal loss and SMOTE for class
//! imbalance, and a small annotation service for human review.

pub mod annotation;
pub mod dataset;
pub mod filter;
pub mod gateway;
pub mod io;
pub mod metrics;
pub mod pipeline;
pub mod service;
pub mod text;
pub mod train;
