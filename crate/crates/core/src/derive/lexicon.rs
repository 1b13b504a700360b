use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;

use crate::corpus::Phrase;
use crate::error::{Error, Result};
use crate::text::{parse_pairs, tokenize};

const DEFAULT_ANTONYMS: &[(&str, &str)] = &[
    ("long sleeves", "sleeveless"),
    ("long sleeve", "sleeveless"),
    ("short sleeves", "sleeveless"),
    ("short sleeve", "sleeveless"),
    ("has sleeves", "sleeveless"),
    ("long sleeves", "short sleeves"),
    ("long sleeve", "short sleeve"),
    ("longer", "shorter"),
    ("longer sleeves", "shorter sleeves"),
    ("longer hem", "shorter hem"),
    ("mini", "maxi"),
    ("darker", "lighter"),
    ("darker", "brighter"),
    ("dark", "light"),
    ("more colorful", "less colorful"),
    ("more colorful", "monochrome"),
    ("tighter", "looser"),
    ("tight", "loose"),
    ("fitted", "loose"),
    ("slimmer", "wider"),
    ("wider", "narrower"),
    ("higher neckline", "lower neckline"),
    ("high neck", "low neck"),
    ("v neck", "crew neck"),
    ("v neck", "round neck"),
    ("with straps", "strapless"),
    ("more formal", "more casual"),
    ("formal", "casual"),
    ("more revealing", "more conservative"),
    ("more revealing", "less revealing"),
    ("patterned", "solid"),
    ("patterned", "plain"),
    ("printed", "plain"),
    ("striped", "solid"),
    ("with collar", "collarless"),
    ("with hood", "without hood"),
    ("with pockets", "without pockets"),
    ("open back", "closed back"),
    ("backless", "closed back"),
    ("shiny", "matte"),
    ("thicker", "thinner"),
];

/// Pairs of phrases that contradict each other when asserted in one session.
#[derive(Clone, Debug, Default)]
pub struct AntonymLexicon {
    phrases: Vec<Phrase>,
    opposite: HashSet<(usize, usize)>,
}

impl AntonymLexicon {
    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Self {
        let mut lex = Self::default();
        for (a, b) in pairs {
            lex.add_pair(a, b);
        }
        lex
    }

    /// The shipped fashion lexicon.
    pub fn fashion_default() -> Self {
        Self::from_pairs(DEFAULT_ANTONYMS.iter().copied())
    }

    pub fn parse(text: &str) -> std::result::Result<Self, (usize, String)> {
        let mut lex = Self::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let parts: Vec<&str> = line.split('\t').collect();
            if parts.len() != 2 || parts.iter().any(|p| tokenize(p).is_empty()) {
                return Err((i + 1, format!("expected `phraseA<TAB>phraseB`, got {line:?}")));
            }
            lex.add_pair(parts[0], parts[1]);
        }
        Ok(lex)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|(line, m)| Error::schema(path, line, m))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut pairs: Vec<(usize, usize)> = self.opposite.iter().copied().filter(|(a, b)| a < b).collect();
        pairs.sort_unstable();
        let text: String = pairs
            .into_iter()
            .map(|(a, b)| format!("{}\t{}\n", self.phrases[a].join(" "), self.phrases[b].join(" ")))
            .collect();
        crate::corpus::ensure_parent(path)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn add_pair(&mut self, a: &str, b: &str) {
        let ia = self.intern(tokenize(a).tokens);
        let ib = self.intern(tokenize(b).tokens);
        self.opposite.insert((ia, ib));
        self.opposite.insert((ib, ia));
    }

    fn intern(&mut self, phrase: Phrase) -> usize {
        match self.phrases.iter().position(|p| *p == phrase) {
            Some(i) => i,
            None => {
                self.phrases.push(phrase);
                self.phrases.len() - 1
            }
        }
    }

    pub fn pair_count(&self) -> usize {
        self.opposite.len() / 2
    }

    pub fn phrase(&self, i: usize) -> &Phrase {
        &self.phrases[i]
    }

    /// Indices of lexicon phrases occurring as contiguous token runs in `tokens`.
    pub fn phrases_in(&self, tokens: &[String]) -> Vec<usize> {
        (0..self.phrases.len())
            .filter(|&i| contains_run(tokens, &self.phrases[i]))
            .collect()
    }

    pub fn opposed(&self, a: usize, b: usize) -> bool {
        self.opposite.contains(&(a, b))
    }
}

pub(crate) fn contains_run(tokens: &[String], run: &[String]) -> bool {
    !run.is_empty() && tokens.windows(run.len()).any(|w| w == run)
}

const DEFAULT_KEYWORDS: &[(&str, &str)] = &[
    ("red", "red"),
    ("blue", "blue"),
    ("green", "green"),
    ("yellow", "yellow"),
    ("black", "black"),
    ("white", "white"),
    ("pink", "pink"),
    ("purple", "purple"),
    ("orange", "orange"),
    ("gray", "gray"),
    ("grey", "gray"),
    ("brown", "brown"),
    ("navy", "navy"),
    ("darker", "dark"),
    ("lighter", "light"),
    ("striped", "stripes"),
    ("stripes", "stripes"),
    ("dots", "dots"),
    ("dotted", "dots"),
    ("polka", "dots"),
    ("floral", "floral"),
    ("sleeveless", "sleeveless"),
    ("denim", "denim"),
    ("lace", "lace"),
];

/// Feedback keyword → attribute token it implies for later images.
#[derive(Clone, Debug, Default)]
pub struct KeywordMap {
    map: HashMap<String, String>,
}

impl KeywordMap {
    pub fn fashion_default() -> Self {
        Self {
            map: DEFAULT_KEYWORDS
                .iter()
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect(),
        }
    }

    pub fn from_map(map: HashMap<String, String>) -> Self {
        Self { map }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let map = parse_pairs(&text).map_err(|(line, m)| Error::schema(path, line, m))?;
        Ok(Self { map })
    }

    pub fn get(&self, keyword: &str) -> Option<&str> {
        self.map.get(keyword).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_lexicon_size() {
        let lex = AntonymLexicon::fashion_default();
        assert!(lex.pair_count() >= 40, "{}", lex.pair_count());
    }

    #[test]
    fn malformed_line_is_reported() {
        let err = AntonymLexicon::parse("long sleeves\tsleeveless\nbroken line\n").unwrap_err();
        assert_eq!(err.0, 2);
        assert!(AntonymLexicon::parse("a\tb\tc\n").is_err());
    }

    #[test]
    fn phrase_matching_is_token_exact() {
        let lex = AntonymLexicon::from_pairs([("long sleeves", "sleeveless")]);
        let toks = tokenize("has long sleeves").tokens;
        assert_eq!(lex.phrases_in(&toks).len(), 1);
        let toks = tokenize("has longer sleeves").tokens;
        assert!(lex.phrases_in(&toks).is_empty());
    }
}
