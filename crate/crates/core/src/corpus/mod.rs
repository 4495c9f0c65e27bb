//! Synthetic symbolic-music corpus and the prompt grammar.

pub mod clip;
pub mod file;
pub mod grammar;
pub mod vocab;

pub use clip::{sample_clip, Clip, NoteEvent};
pub use file::{generate_corpus, read_corpus, write_corpus, Corpus, CorpusHeader};
pub use grammar::{
    make_contrastive_sets, make_eval_prompts, make_heldout_prompts, Attribute, AttributeClass, Grammar, PromptSet,
    Tempo, Timbre, PROMPT_LEN, SEP_INDEX,
};
pub use vocab::{build_vocab, TokenKind, TokenVocab};
