//! Tokenization, spelling correction and word-vector lookup.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use ndarray::Array1;

use crate::corpus::{AttributeSet, AttributeSlot, EmbeddingTable};
use crate::error::{Error, Result};
use crate::nn::Mat;

/// Lowercase tokens with punctuation removed.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct TokenSequence {
    pub tokens: Vec<String>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

impl From<Vec<&str>> for TokenSequence {
    fn from(v: Vec<&str>) -> Self {
        Self {
            tokens: v.into_iter().map(str::to_string).collect(),
        }
    }
}

pub fn tokenize(text: &str) -> TokenSequence {
    let cleaned: String = text
        .chars()
        .filter(|c| *c != '\'' && *c != '’')
        .map(|c| if c.is_alphanumeric() { c } else { ' ' })
        .collect::<String>()
        .to_lowercase();
    TokenSequence {
        tokens: cleaned.split_whitespace().map(str::to_string).collect(),
    }
}

pub const MAX_EDIT_DISTANCE: usize = 2;

/// Known misspellings plus the reference vocabulary with frequencies.
#[derive(Clone, Debug, Default)]
pub struct SpellLexicon {
    corrections: HashMap<String, String>,
    vocabulary: HashMap<String, u64>,
}

impl SpellLexicon {
    /// Corrections pointing outside the vocabulary are dropped.
    pub fn new(corrections: HashMap<String, String>, vocabulary: HashMap<String, u64>) -> Self {
        let corrections = corrections
            .into_iter()
            .filter(|(wrong, right)| {
                let ok = vocabulary.contains_key(right);
                if !ok {
                    log::warn!("dropping correction {wrong} -> {right}: target not in vocabulary");
                }
                ok
            })
            .collect();
        Self {
            corrections,
            vocabulary,
        }
    }

    /// Vocabulary taken from an embedding table; file order stands in for
    /// frequency (earlier lines rank higher).
    pub fn from_table(table: &EmbeddingTable, corrections: HashMap<String, String>) -> Self {
        let n = table.len() as u64;
        let vocab = table
            .words()
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), n - i as u64))
            .collect();
        Self::new(corrections, vocab)
    }

    pub fn in_vocabulary(&self, token: &str) -> bool {
        self.vocabulary.contains_key(token)
    }

    pub fn corrections(&self) -> usize {
        self.corrections.len()
    }

    fn nearest(&self, token: &str) -> Option<&str> {
        let len = token.chars().count();
        let mut best: Option<(usize, u64, &str)> = None;
        for (word, &freq) in &self.vocabulary {
            if word.chars().count().abs_diff(len) > MAX_EDIT_DISTANCE {
                continue;
            }
            let d = levenshtein(token, word);
            if d > MAX_EDIT_DISTANCE {
                continue;
            }
            let better = match best {
                None => true,
                Some((bd, bf, bw)) => (d, std::cmp::Reverse(freq), word.as_str()) < (bd, std::cmp::Reverse(bf), bw),
            };
            if better {
                best = Some((d, freq, word.as_str()));
            }
        }
        best.map(|(_, _, w)| w)
    }

    pub fn correct_token(&self, token: &str) -> String {
        if self.in_vocabulary(token) {
            return token.to_string();
        }
        if let Some(fix) = self.corrections.get(token) {
            return fix.clone();
        }
        self.nearest(token).unwrap_or(token).to_string()
    }
}

/// Reads `wrong<TAB>right` lines.
pub fn load_misspellings(path: &Path) -> Result<HashMap<String, String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_pairs(&text).map_err(|(line, m)| Error::schema(path, line, m))
}

/// Parses `a<TAB>b` lines; blank lines and `#` comments are skipped.
pub fn parse_pairs(text: &str) -> std::result::Result<HashMap<String, String>, (usize, String)> {
    let mut out = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split('\t');
        let (Some(a), Some(b), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err((i + 1, format!("expected two tab-separated fields, got {line:?}")));
        };
        let (a, b) = (a.trim().to_lowercase(), b.trim().to_lowercase());
        if a.is_empty() || b.is_empty() {
            return Err((i + 1, "empty field".into()));
        }
        out.insert(a, b);
    }
    Ok(out)
}

pub fn correct_spelling(seq: &TokenSequence, lexicon: &SpellLexicon) -> TokenSequence {
    TokenSequence {
        tokens: seq.tokens.iter().map(|t| lexicon.correct_token(t)).collect(),
    }
}

/// Plain Levenshtein distance over chars.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for i in 1..=a.len() {
        cur[0] = i;
        for j in 1..=b.len() {
            let sub = prev[j - 1] + usize::from(a[i - 1] != b[j - 1]);
            cur[j] = sub.min(prev[j] + 1).min(cur[j - 1] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// `l × d_t` matrix of word vectors (unknown tokens map to the zero vector).
pub fn embed_sequence(seq: &TokenSequence, table: &EmbeddingTable) -> Mat {
    let mut m = Mat::zeros((seq.len(), table.dim()));
    for (i, t) in seq.tokens.iter().enumerate() {
        m.row_mut(i).assign(&table.lookup(t));
    }
    m
}

/// One mean word vector per attribute slot, in [`AttributeSlot::ALL`] order.
pub fn embed_attribute_set(attrs: &AttributeSet, table: &EmbeddingTable) -> [Array1<f64>; 5] {
    AttributeSlot::ALL.map(|slot| {
        let mut sum = Array1::zeros(table.dim());
        let mut count = 0usize;
        for word in attrs.slot(slot).iter().flatten() {
            sum += &table.lookup(word);
            count += 1;
        }
        if count > 0 {
            sum /= count as f64;
        }
        sum
    })
}

/// `5 × d_t` matrix form of [`embed_attribute_set`].
pub fn attribute_matrix(attrs: &AttributeSet, table: &EmbeddingTable) -> Mat {
    let vecs = embed_attribute_set(attrs, table);
    let mut m = Mat::zeros((5, table.dim()));
    for (i, v) in vecs.iter().enumerate() {
        m.row_mut(i).assign(v);
    }
    m
}

/// Tokenize → spell-correct → embed, the path every feedback text takes.
#[derive(Clone, Debug)]
pub struct TextPipeline {
    pub table: EmbeddingTable,
    pub spelling: SpellLexicon,
}

impl TextPipeline {
    pub fn new(table: EmbeddingTable, corrections: HashMap<String, String>) -> Self {
        let spelling = SpellLexicon::from_table(&table, corrections);
        Self { table, spelling }
    }

    pub fn prepare(&self, text: &str) -> TokenSequence {
        correct_spelling(&tokenize(text), &self.spelling)
    }

    pub fn embed(&self, text: &str) -> Mat {
        embed_sequence(&self.prepare(text), &self.table)
    }

    pub fn dim(&self) -> usize {
        self.table.dim()
    }
}
