use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

/// Lowercasing, non-alphanumeric splitting tokenizer with an optional
/// stopword list. No stemming.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizerConfig {
    #[serde(default)]
    pub stopwords: BTreeSet<String>,
}

impl TokenizerConfig {
    pub fn with_stopwords<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        Self {
            stopwords: words
                .into_iter()
                .map(|w| w.as_ref().to_lowercase())
                .collect(),
        }
    }

    pub fn build(&self) -> Tokenizer<'_> {
        Tokenizer { config: self }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Tokenizer<'a> {
    config: &'a TokenizerConfig,
}

impl Tokenizer<'_> {
    pub fn tokenize(&self, text: &str) -> Vec<String> {
        text.split(|c: char| !c.is_alphanumeric())
            .filter(|s| !s.is_empty())
            .map(str::to_lowercase)
            .filter(|t| !self.config.stopwords.contains(t))
            .collect()
    }
}
