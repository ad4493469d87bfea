use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const BOS: usize = 2;
pub const EOS: usize = 3;
pub const SPKCHANGE: usize = 4;
pub const LAUGHTER: usize = 5;

const SPECIALS: [&str; 6] = [
    "[pad]",
    "[unk]",
    "[bos]",
    "[eos]",
    "[spkchange]",
    "[laughter]",
];

/// Splits a transcript into lowercase word, punctuation and tag tokens.
///
/// `|` and `[spkchange]` become the speaker-change tag; `[laughter]`, 😂 and 🤣
/// become the laughter tag. Apostrophes stay inside words.
pub fn split_words(text: &str) -> Vec<String> {
    let lower = text.to_lowercase();
    let chars: Vec<char> = lower.chars().collect();
    let mut out = Vec::new();
    let mut word = String::new();
    let mut i = 0;
    let flush = |word: &mut String, out: &mut Vec<String>| {
        if !word.is_empty() {
            out.push(std::mem::take(word));
        }
    };
    while i < chars.len() {
        let c = chars[i];
        if c == '[' {
            let rest: String = chars[i..].iter().take(16).collect();
            if let Some(tag) = SPECIALS.iter().find(|t| rest.starts_with(*t)) {
                flush(&mut word, &mut out);
                out.push(tag.to_string());
                i += tag.chars().count();
                continue;
            }
        }
        if c.is_alphanumeric() || c == '\'' {
            word.push(c);
        } else {
            flush(&mut word, &mut out);
            match c {
                '|' => out.push(SPECIALS[SPKCHANGE].to_string()),
                '😂' | '🤣' => out.push(SPECIALS[LAUGHTER].to_string()),
                c if c.is_whitespace() => {}
                c => out.push(c.to_string()),
            }
        }
        i += 1;
    }
    flush(&mut word, &mut out);
    out
}

/// Token ↔ id map; the six reserved tags occupy ids 0..6.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Default for Vocab {
    fn default() -> Self {
        Self::from_tokens(Vec::new())
    }
}

impl Vocab {
    /// Reserved tags followed by `words` in order, skipping repeats.
    pub fn from_tokens(words: Vec<String>) -> Self {
        let mut tokens = Vec::new();
        let mut index = HashMap::new();
        for w in SPECIALS.iter().map(|s| s.to_string()).chain(words) {
            if !index.contains_key(&w) {
                index.insert(w.clone(), tokens.len());
                tokens.push(w);
            }
        }
        Self { tokens, index }
    }

    /// Vocabulary over every token in `texts`, most frequent first, ties
    /// alphabetical.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let mut counts: HashMap<String, usize> = HashMap::new();
        for t in texts {
            for w in split_words(t) {
                *counts.entry(w).or_default() += 1;
            }
        }
        let mut words: Vec<(String, usize)> = counts.into_iter().collect();
        words.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        Self::from_tokens(words.into_iter().map(|(w, _)| w).collect())
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut s = self.tokens.join("\n");
        s.push('\n');
        fs::write(path, s)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let tokens: Vec<String> = text.lines().map(str::to_string).collect();
        for (i, want) in SPECIALS.iter().enumerate() {
            if tokens.get(i).map(String::as_str) != Some(want) {
                return Err(Error::Line {
                    path: path.to_path_buf(),
                    line: i + 1,
                    message: format!("expected reserved token {want}"),
                });
            }
        }
        let v = Self::from_tokens(tokens[SPECIALS.len()..].to_vec());
        if v.len() != tokens.len() {
            return Err(Error::Format(format!(
                "{}: duplicate tokens",
                path.display()
            )));
        }
        Ok(v)
    }
}

/// Token ids framed by BOS and EOS.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TextTokenSeq {
    pub ids: Vec<usize>,
}

impl TextTokenSeq {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Space-joined tokens without the BOS/EOS/PAD framing.
    pub fn detokenize(&self, vocab: &Vocab) -> String {
        self.ids
            .iter()
            .filter(|&&id| !matches!(id, PAD | BOS | EOS))
            .map(|&id| vocab.token(id).unwrap_or(SPECIALS[UNK]))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

pub fn tokenize_text(text: &str, vocab: &Vocab) -> TextTokenSeq {
    let mut ids = vec![BOS];
    ids.extend(split_words(text).iter().map(|w| vocab.id(w)));
    ids.push(EOS);
    TextTokenSeq { ids }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dialogue_tags_map_to_reserved_ids() {
        let text = "how are you | i'm good [laughter]";
        let v = Vocab::build([text]);
        let seq = tokenize_text(text, &v);
        assert_eq!(seq.ids.iter().filter(|&&i| i == SPKCHANGE).count(), 1);
        assert_eq!(seq.ids.iter().filter(|&&i| i == LAUGHTER).count(), 1);
        let s = seq.ids.iter().position(|&i| i == SPKCHANGE).unwrap();
        let l = seq.ids.iter().position(|&i| i == LAUGHTER).unwrap();
        assert!(s < l);
        assert!(!seq.ids.contains(&UNK));
        assert_eq!(v.token(seq.ids[5]), Some("i'm"));
        let emoji = tokenize_text("ha 😂 | ok", &v);
        assert_eq!(emoji.ids[2], LAUGHTER);
        assert_eq!(emoji.ids[3], SPKCHANGE);
    }

    #[test]
    fn empty_and_repeated_words() {
        let v = Vocab::build(["hello"]);
        assert_eq!(tokenize_text("", &v).ids, vec![BOS, EOS]);
        let s = tokenize_text("Hello hello", &v);
        assert_eq!(s.ids.len(), 4);
        assert_eq!(s.ids[1], s.ids[2]);
        assert_eq!(tokenize_text("zebra", &v).ids[1], UNK);
    }

    #[test]
    fn punctuation_splits_off() {
        assert_eq!(split_words("Yes, ok."), vec!["yes", ",", "ok", "."]);
    }

    #[test]
    fn vocab_file_round_trip() {
        let dir = std::env::temp_dir().join(format!("vocab-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        let p = dir.join("vocab.txt");
        let v = Vocab::build(["b a a", "c"]);
        v.save(&p).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("[pad]\n[unk]\n[bos]\n[eos]\n[spkchange]\n[laughter]\na\n"));
        assert_eq!(Vocab::load(&p).unwrap(), v);
        fs::write(&p, "a\n").unwrap();
        assert!(Vocab::load(&p).is_err());
        fs::remove_dir_all(&dir).unwrap();
    }
}
