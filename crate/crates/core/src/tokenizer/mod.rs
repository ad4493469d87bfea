//! Word-level text tokenization with dialogue tags, and a k-means acoustic
//! quantizer mapping mel frames to semantic token ids.

mod codebook;
mod text;

pub use codebook::{
    fit_codebook, read_tokens, speech_to_semantic, write_tokens, Codebook, CodebookFit,
    KMeansConfig, SemanticTokenStream, TOKEN_MAGIC, TOKEN_VERSION,
};
pub use text::{
    split_words, tokenize_text, TextTokenSeq, Vocab, BOS, EOS, LAUGHTER, PAD, SPKCHANGE, UNK,
};
