use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::lexicon::{AntonymLexicon, KeywordMap};
use crate::corpus::{AttributeCatalog, Session};
use crate::text::tokenize;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Kept,
    Duplicate,
    Circle,
    Conflict,
    InconsistencyFlag,
}

impl Verdict {
    pub const ALL: [Verdict; 5] = [
        Verdict::Kept,
        Verdict::Duplicate,
        Verdict::Circle,
        Verdict::Conflict,
        Verdict::InconsistencyFlag,
    ];

    /// Flagged sessions stay in the output until someone reviews them.
    pub fn retained(self) -> bool {
        matches!(self, Verdict::Kept | Verdict::InconsistencyFlag)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionVerdict {
    pub session_id: String,
    pub verdict: Verdict,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterReport {
    pub sessions: Vec<SessionVerdict>,
}

impl FilterReport {
    pub fn count(&self, verdict: Verdict) -> usize {
        self.sessions.iter().filter(|s| s.verdict == verdict).count()
    }

    pub fn counts(&self) -> BTreeMap<Verdict, usize> {
        Verdict::ALL.iter().map(|&v| (v, self.count(v))).collect()
    }

    pub fn total(&self) -> usize {
        self.sessions.len()
    }
}

/// One line of the review queue.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewItem {
    pub session_id: String,
    pub verdict: Verdict,
    pub evidence: String,
}

#[derive(Clone, Debug, Default)]
pub struct FilterOutcome {
    /// Sessions that survive: kept plus flagged.
    pub kept: Vec<Session>,
    pub report: FilterReport,
    pub review: Vec<ReviewItem>,
}

/// Everything the combined pass may consult. `None` disables that check.
#[derive(Clone, Copy, Debug, Default)]
pub struct FilterInputs<'a> {
    pub lexicon: Option<&'a AntonymLexicon>,
    pub attributes: Option<&'a AttributeCatalog>,
    pub keywords: Option<&'a KeywordMap>,
    /// image id → pixel digest; makes byte-identical images count as repeats.
    pub pixel_hashes: Option<&'a HashMap<String, String>>,
}

fn duplicate_evidence(s: &Session, hashes: Option<&HashMap<String, String>>) -> Option<String> {
    let seq = s.image_sequence();
    for (i, w) in seq.windows(2).enumerate() {
        if w[0] == w[1] {
            return Some(format!("images {i} and {} are both {}", i + 1, w[0]));
        }
        if let Some(h) = hashes {
            if let (Some(a), Some(b)) = (h.get(w[0]), h.get(w[1])) {
                if a == b {
                    return Some(format!("images {} and {} have identical pixels", w[0], w[1]));
                }
            }
        }
    }
    None
}

fn circle_evidence(s: &Session) -> Option<String> {
    let mut seen = HashMap::new();
    for (i, id) in s.image_sequence().into_iter().enumerate() {
        if let Some(first) = seen.insert(id, i) {
            return Some(format!("image {id} appears at positions {first} and {i}"));
        }
    }
    None
}

fn conflict_evidence(s: &Session, lexicon: &AntonymLexicon) -> Option<String> {
    let hits: Vec<Vec<usize>> = s
        .turns
        .iter()
        .map(|t| lexicon.phrases_in(&tokenize(&t.feedback).tokens))
        .collect();
    for j in 1..hits.len() {
        for &q in &hits[j] {
            for (i, earlier) in hits[..j].iter().enumerate() {
                if let Some(&p) = earlier.iter().find(|&&p| lexicon.opposed(p, q)) {
                    return Some(format!(
                        "turn {i} says \"{}\", turn {j} says \"{}\"",
                        lexicon.phrase(p).join(" "),
                        lexicon.phrase(q).join(" ")
                    ));
                }
            }
        }
    }
    None
}

fn inconsistency_evidence(s: &Session, catalog: &AttributeCatalog, keywords: &KeywordMap) -> Option<String> {
    let images = s.image_sequence();
    let later_sets: Vec<HashSet<&str>> = images
        .iter()
        .map(|id| catalog.get(id).map(|a| a.tokens().collect()).unwrap_or_default())
        .collect();
    let known: Vec<bool> = images.iter().map(|id| catalog.contains(id)).collect();
    for (i, turn) in s.turns.iter().enumerate() {
        for word in tokenize(&turn.feedback).tokens {
            let Some(attr) = keywords.get(&word) else { continue };
            let later: Vec<usize> = (i + 1..images.len()).filter(|&k| known[k]).collect();
            if !later.is_empty() && later.iter().all(|&k| !later_sets[k].contains(attr)) {
                return Some(format!(
                    "turn {i} asks for \"{word}\" but no later image has attribute \"{attr}\""
                ));
            }
        }
    }
    None
}

fn partition(sessions: &[Session], check: impl Fn(&Session) -> Option<String>) -> (Vec<Session>, Vec<Session>) {
    sessions.iter().cloned().partition(|s| check(s).is_none())
}

/// Splits off sessions with two identical consecutive images.
pub fn filter_duplicates(
    sessions: &[Session],
    pixel_hashes: Option<&HashMap<String, String>>,
) -> (Vec<Session>, Vec<Session>) {
    partition(sessions, |s| duplicate_evidence(s, pixel_hashes))
}

/// Splits off sessions that revisit any image, target included.
pub fn filter_circles(sessions: &[Session]) -> (Vec<Session>, Vec<Session>) {
    partition(sessions, circle_evidence)
}

/// Splits off sessions whose later feedback contradicts earlier feedback.
pub fn filter_conflicts(sessions: &[Session], lexicon: &AntonymLexicon) -> (Vec<Session>, Vec<Session>) {
    partition(sessions, |s| conflict_evidence(s, lexicon))
}

/// Flags, without removing, sessions whose requested attribute never shows up
/// in a later image. Images missing from the catalog are ignored.
pub fn flag_inconsistency(sessions: &[Session], catalog: &AttributeCatalog, keywords: &KeywordMap) -> FilterOutcome {
    let mut out = FilterOutcome {
        kept: sessions.to_vec(),
        ..Default::default()
    };
    for s in sessions {
        let verdict = match inconsistency_evidence(s, catalog, keywords) {
            Some(evidence) => {
                out.review.push(ReviewItem {
                    session_id: s.session_id.clone(),
                    verdict: Verdict::InconsistencyFlag,
                    evidence,
                });
                Verdict::InconsistencyFlag
            }
            None => Verdict::Kept,
        };
        out.report.sessions.push(SessionVerdict {
            session_id: s.session_id.clone(),
            verdict,
        });
    }
    out
}

/// Applies duplicates, circles, conflicts, then the inconsistency flag. Each
/// session gets the first verdict that applies.
pub fn run_filters(sessions: &[Session], inputs: &FilterInputs) -> FilterOutcome {
    let mut out = FilterOutcome::default();
    for s in sessions {
        let found = duplicate_evidence(s, inputs.pixel_hashes)
            .map(|e| (Verdict::Duplicate, e))
            .or_else(|| circle_evidence(s).map(|e| (Verdict::Circle, e)))
            .or_else(|| {
                inputs
                    .lexicon
                    .and_then(|l| conflict_evidence(s, l))
                    .map(|e| (Verdict::Conflict, e))
            })
            .or_else(|| match (inputs.attributes, inputs.keywords) {
                (Some(a), Some(k)) => inconsistency_evidence(s, a, k).map(|e| (Verdict::InconsistencyFlag, e)),
                _ => None,
            });
        let verdict = match found {
            Some((verdict, evidence)) => {
                out.review.push(ReviewItem {
                    session_id: s.session_id.clone(),
                    verdict,
                    evidence,
                });
                verdict
            }
            None => Verdict::Kept,
        };
        if verdict.retained() {
            out.kept.push(s.clone());
        }
        out.report.sessions.push(SessionVerdict {
            session_id: s.session_id.clone(),
            verdict,
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{AttributeSet, AttributeSlot, Category, Turn};
    use proptest::prelude::*;

    fn sess(id: &str, parts: &[&str]) -> Session {
        let n = parts.len() / 2;
        Session {
            session_id: id.into(),
            category: Category::Dress,
            turns: (0..n)
                .map(|i| Turn {
                    image_id: parts[2 * i].into(),
                    feedback: parts[2 * i + 1].into(),
                })
                .collect(),
            target_image_id: parts[parts.len() - 1].into(),
        }
    }

    #[test]
    fn duplicates() {
        let (k, r) = filter_duplicates(&[sess("a", &["A", "t", "A", "u", "B"]), sess("b", &["A", "t", "B", "u", "C"])], None);
        assert_eq!(r.len(), 1);
        assert_eq!(r[0].session_id, "a");
        assert_eq!(k[0].session_id, "b");
    }

    #[test]
    fn pixel_duplicates() {
        let hashes: HashMap<String, String> = [("A", "h1"), ("B", "h1"), ("C", "h2")]
            .iter()
            .map(|(a, b)| (a.to_string(), b.to_string()))
            .collect();
        let s = sess("a", &["A", "t", "B", "u", "C"]);
        assert_eq!(filter_duplicates(std::slice::from_ref(&s), None).1.len(), 0);
        assert_eq!(filter_duplicates(&[s], Some(&hashes)).1.len(), 1);
    }

    #[test]
    fn circles() {
        let (k, r) = filter_circles(&[
            sess("a", &["A", "t1", "B", "t2", "A"]),
            sess("b", &["A", "t1", "B", "t2", "C"]),
            sess("c", &["A", "t1", "A"]),
        ]);
        assert_eq!(k.len(), 1);
        assert_eq!(r.len(), 2);
        assert!(k.iter().all(|s| !s.has_repeated_image()));
    }

    #[test]
    fn conflicts() {
        let lex = AntonymLexicon::fashion_default();
        let (k, r) = filter_conflicts(
            &[
                sess("a", &["A", "has long sleeves", "B", "is sleeveless", "C"]),
                sess("b", &["A", "is red", "B", "has a bow", "C"]),
                sess("c", &["A", "has longer sleeves", "B", "has shorter sleeves", "C"]),
            ],
            &lex,
        );
        assert_eq!(r.iter().map(|s| s.session_id.as_str()).collect::<Vec<_>>(), ["a", "c"]);
        assert_eq!(k.len(), 1);
    }

    fn catalog() -> AttributeCatalog {
        let mut c = AttributeCatalog::default();
        c.insert("A", AttributeSet::from_phrases(&[(AttributeSlot::Style, &["black"])]));
        c.insert("B", AttributeSet::from_phrases(&[(AttributeSlot::Style, &["blue"])]));
        c.insert("C", AttributeSet::from_phrases(&[(AttributeSlot::Style, &["white"])]));
        c
    }

    #[test]
    fn inconsistency() {
        let kw = KeywordMap::fashion_default();
        let cat = catalog();
        let out = flag_inconsistency(
            &[
                sess("bad", &["A", "white color", "B", "a bow", "B2"]),
                sess("none", &["A", "has a bow", "B", "is longer", "C"]),
                sess("ok", &["A", "white color", "C"]),
            ],
            &cat,
            &kw,
        );
        let verdicts: Vec<Verdict> = out.report.sessions.iter().map(|s| s.verdict).collect();
        assert_eq!(verdicts, [Verdict::InconsistencyFlag, Verdict::Kept, Verdict::Kept]);
        assert_eq!(out.kept.len(), 3);
        assert_eq!(out.review.len(), 1);
        assert!(out.review[0].evidence.contains("white"));
    }

    #[test]
    fn combined_order_and_counts() {
        let lex = AntonymLexicon::fashion_default();
        let kw = KeywordMap::fashion_default();
        let cat = catalog();
        let sessions = vec![
            sess("dup", &["A", "has long sleeves", "A", "is sleeveless", "B"]),
            sess("circ", &["A", "has long sleeves", "B", "is sleeveless", "A"]),
            sess("conf", &["A", "has long sleeves", "B", "is sleeveless", "C"]),
            sess("flag", &["A", "white color", "B"]),
            sess("ok", &["A", "nicer", "B"]),
        ];
        let inputs = FilterInputs {
            lexicon: Some(&lex),
            attributes: Some(&cat),
            keywords: Some(&kw),
            pixel_hashes: None,
        };
        let out = run_filters(&sessions, &inputs);
        let verdicts: Vec<Verdict> = out.report.sessions.iter().map(|s| s.verdict).collect();
        assert_eq!(
            verdicts,
            [
                Verdict::Duplicate,
                Verdict::Circle,
                Verdict::Conflict,
                Verdict::InconsistencyFlag,
                Verdict::Kept
            ]
        );
        assert_eq!(out.report.counts().values().sum::<usize>(), sessions.len());
        assert_eq!(out.kept.len(), 2);
        assert_eq!(out.review.len(), 4);
    }

    fn arb_sessions() -> impl Strategy<Value = Vec<Session>> {
        let img = prop::sample::select(vec!["A", "B", "C", "D"]);
        let fb = prop::sample::select(vec!["has long sleeves", "is sleeveless", "is red", "is longer", "is shorter"]);
        prop::collection::vec((prop::collection::vec((img.clone(), fb), 2..5), img), 0..12).prop_map(|v| {
            v.into_iter()
                .enumerate()
                .map(|(i, (turns, target))| Session {
                    session_id: format!("s{i}"),
                    category: Category::Dress,
                    turns: turns
                        .into_iter()
                        .map(|(im, f)| Turn {
                            image_id: im.into(),
                            feedback: f.into(),
                        })
                        .collect(),
                    target_image_id: target.into(),
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn filters_partition_and_are_idempotent(sessions in arb_sessions()) {
            let lex = AntonymLexicon::fashion_default();
            type F<'a> = Box<dyn Fn(&[Session]) -> (Vec<Session>, Vec<Session>) + 'a>;
            let filters: Vec<F> = vec![
                Box::new(|s| filter_duplicates(s, None)),
                Box::new(filter_circles),
                Box::new(|s| filter_conflicts(s, &lex)),
            ];
            for f in &filters {
                let (kept, removed) = f(&sessions);
                prop_assert_eq!(kept.len() + removed.len(), sessions.len());
                let mut all: Vec<&str> = kept.iter().chain(&removed).map(|s| s.session_id.as_str()).collect();
                all.sort_unstable();
                let mut want: Vec<&str> = sessions.iter().map(|s| s.session_id.as_str()).collect();
                want.sort_unstable();
                prop_assert_eq!(all, want);
                let (again, removed2) = f(&kept);
                prop_assert_eq!(&again, &kept);
                prop_assert!(removed2.is_empty());
            }
            let (kept, _) = filter_circles(&sessions);
            prop_assert!(kept.iter().all(|s| !s.has_repeated_image()));
        }
    }
}
