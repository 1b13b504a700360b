use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::{Category, Session};
use crate::text::tokenize;

/// One row of the dataset table. Turn lengths count images.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CategoryStats {
    pub sessions_3_turns: usize,
    pub sessions_4_turns: usize,
    pub sessions_5_turns: usize,
    pub total_sessions: usize,
    pub total_images: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub per_category: BTreeMap<Category, CategoryStats>,
    pub total: CategoryStats,
    pub mean_feedback_words: f64,
}

fn row<'a>(sessions: impl Iterator<Item = &'a Session>) -> CategoryStats {
    let mut out = CategoryStats::default();
    let mut images = HashSet::new();
    for s in sessions {
        match s.table_turns() {
            3 => out.sessions_3_turns += 1,
            4 => out.sessions_4_turns += 1,
            5 => out.sessions_5_turns += 1,
            _ => {}
        }
        out.total_sessions += 1;
        images.extend(s.image_sequence());
    }
    out.total_images = images.len();
    out
}

pub fn dataset_stats(sessions: &[Session]) -> DatasetStats {
    let per_category = Category::ALL
        .iter()
        .map(|&c| (c, row(sessions.iter().filter(|s| s.category == c))))
        .collect();
    let (words, turns) = sessions
        .iter()
        .flat_map(|s| &s.turns)
        .fold((0usize, 0usize), |(w, n), t| (w + tokenize(&t.feedback).len(), n + 1));
    DatasetStats {
        per_category,
        total: row(sessions.iter()),
        mean_feedback_words: if turns == 0 { 0.0 } else { words as f64 / turns as f64 },
    }
}

impl DatasetStats {
    pub fn to_markdown(&self) -> String {
        let mut out = String::from(
            "| Category | Sessions with 3 turns | Sessions with 4 turns | Sessions with 5 turns | Total Sessions | Total Images |\n\
             |---|---|---|---|---|---|\n",
        );
        let mut line = |name: &str, r: &CategoryStats| {
            let _ = writeln!(
                out,
                "| {name} | {} | {} | {} | {} | {} |",
                r.sessions_3_turns, r.sessions_4_turns, r.sessions_5_turns, r.total_sessions, r.total_images
            );
        };
        for (c, r) in &self.per_category {
            line(c.as_str(), r);
        }
        line("total", &self.total);
        let _ = writeln!(out, "\nMean feedback length: {:.2} words", self.mean_feedback_words);
        out
    }
}
