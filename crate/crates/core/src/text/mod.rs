//! Transcript processing: tokens, part-of-speech tags and embeddings.

pub mod embedding;
pub mod pos;
pub mod tokenize;

pub use embedding::{embed_and_pad, pos_embedding_table, tag_ids, EmbeddingTable, SentenceMatrix, MAX_LEN};
pub use pos::{parse_tags, NaiveTagger, PosTagger, Tag};
pub use tokenize::tokenize;
