//! Builds multiturn sessions from single-turn triplets and screens out
//! problematic ones.

mod filters;
mod lexicon;
mod stats;

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{write_jsonl, Category, Session, Turn};
use crate::error::{Error, Result};

pub use filters::{
    filter_circles, filter_conflicts, filter_duplicates, flag_inconsistency, run_filters, FilterInputs,
    FilterOutcome, FilterReport, ReviewItem, Verdict,
};
pub use lexicon::{AntonymLexicon, KeywordMap};
pub use stats::{dataset_stats, CategoryStats, DatasetStats};

/// One single-turn example: reference image, feedback, target image.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Triplet {
    #[serde(rename = "ref")]
    pub reference: String,
    pub feedback: String,
    pub target: String,
    pub category: Category,
}

pub fn load_triplets(path: &Path) -> Result<Vec<Triplet>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let t: Triplet = serde_json::from_str(&line).map_err(|e| Error::schema(path, i + 1, e.to_string()))?;
        if t.reference == t.target {
            return Err(Error::schema(path, i + 1, "ref equals target"));
        }
        out.push(t);
    }
    Ok(out)
}

pub fn save_triplets(path: &Path, triplets: &[Triplet]) -> Result<()> {
    write_jsonl(path, triplets)
}

/// Shortest and longest session lengths in images that chaining accepts.
pub const MIN_CHAIN_IMAGES: usize = 3;
pub const MAX_CHAIN_IMAGES: usize = 5;

/// Every simple path of triplets (target of one = reference of the next,
/// same category, no image visited twice) spanning between `min_imgs` and
/// `max_imgs` images, ordered lexicographically by triplet indices.
pub fn chain_triplets(triplets: &[Triplet], min_imgs: usize, max_imgs: usize) -> Result<Vec<Session>> {
    if min_imgs > max_imgs {
        return Err(Error::Parameter(format!("min_imgs {min_imgs} > max_imgs {max_imgs}")));
    }
    if min_imgs < MIN_CHAIN_IMAGES || max_imgs > MAX_CHAIN_IMAGES {
        return Err(Error::Parameter(format!(
            "image bounds must lie within [{MIN_CHAIN_IMAGES}, {MAX_CHAIN_IMAGES}], got [{min_imgs}, {max_imgs}]"
        )));
    }
    if let Some((i, _)) = triplets.iter().enumerate().find(|(_, t)| t.reference == t.target) {
        return Err(Error::Parameter(format!("triplet {i} has ref == target")));
    }

    let mut successors: HashMap<(Category, &str), Vec<usize>> = HashMap::new();
    for (i, t) in triplets.iter().enumerate() {
        successors.entry((t.category, t.reference.as_str())).or_default().push(i);
    }

    let mut out = Vec::new();
    let mut path = Vec::with_capacity(max_imgs);
    let mut visited: Vec<&str> = Vec::with_capacity(max_imgs);
    for start in 0..triplets.len() {
        path.push(start);
        visited.push(&triplets[start].reference);
        visited.push(&triplets[start].target);
        extend(triplets, &successors, &mut path, &mut visited, min_imgs, max_imgs, &mut out);
        visited.clear();
        path.clear();
    }
    Ok(out)
}

fn extend<'a>(
    triplets: &'a [Triplet],
    successors: &HashMap<(Category, &str), Vec<usize>>,
    path: &mut Vec<usize>,
    visited: &mut Vec<&'a str>,
    min_imgs: usize,
    max_imgs: usize,
    out: &mut Vec<Session>,
) {
    let images = path.len() + 1;
    if images >= min_imgs {
        out.push(session_from_path(triplets, path));
    }
    if images == max_imgs {
        return;
    }
    let last = &triplets[*path.last().unwrap()];
    let Some(next) = successors.get(&(last.category, last.target.as_str())) else {
        return;
    };
    for &n in next {
        let target = triplets[n].target.as_str();
        if visited.contains(&target) {
            continue;
        }
        path.push(n);
        visited.push(target);
        extend(triplets, successors, path, visited, min_imgs, max_imgs, out);
        visited.pop();
        path.pop();
    }
}

fn session_from_path(triplets: &[Triplet], path: &[usize]) -> Session {
    let session_id = path.iter().map(|i| format!("t{i}")).collect::<Vec<_>>().join("-");
    Session {
        session_id,
        category: triplets[path[0]].category,
        turns: path
            .iter()
            .map(|&i| Turn {
                image_id: triplets[i].reference.clone(),
                feedback: triplets[i].feedback.clone(),
            })
            .collect(),
        target_image_id: triplets[*path.last().unwrap()].target.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn trip(r: &str, f: &str, t: &str) -> Triplet {
        Triplet {
            reference: r.into(),
            feedback: f.into(),
            target: t.into(),
            category: Category::Dress,
        }
    }

    fn flat(s: &Session) -> Vec<String> {
        let mut v = Vec::new();
        for t in &s.turns {
            v.push(t.image_id.clone());
            v.push(t.feedback.clone());
        }
        v.push(s.target_image_id.clone());
        v
    }

    #[test]
    fn three_triplet_chain() {
        let ts = vec![
            trip("img1", "txt1", "img2"),
            trip("img2", "txt2", "img3"),
            trip("img3", "txt3", "img4"),
        ];
        let sessions = chain_triplets(&ts, 3, 5).unwrap();
        let flats: Vec<Vec<String>> = sessions.iter().map(flat).collect();
        let want = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        assert!(flats.contains(&want(&["img1", "txt1", "img2", "txt2", "img3"])));
        assert!(flats.contains(&want(&["img2", "txt2", "img3", "txt3", "img4"])));
        assert!(flats.contains(&want(&["img1", "txt1", "img2", "txt2", "img3", "txt3", "img4"])));
        assert_eq!(sessions.len(), 3);
    }

    #[test]
    fn unlinked_triplets_give_nothing() {
        let ts = vec![trip("a", "x", "b"), trip("c", "y", "d")];
        assert!(chain_triplets(&ts, 3, 5).unwrap().is_empty());
        assert!(chain_triplets(&[], 3, 5).unwrap().is_empty());
    }

    #[test]
    fn bad_bounds() {
        assert!(matches!(chain_triplets(&[], 5, 3), Err(Error::Parameter(_))));
        assert!(matches!(chain_triplets(&[], 2, 3), Err(Error::Parameter(_))));
    }

    #[test]
    fn cycles_are_not_followed() {
        let ts = vec![trip("a", "x", "b"), trip("b", "y", "a"), trip("b", "z", "c")];
        let sessions = chain_triplets(&ts, 3, 5).unwrap();
        assert!(sessions.iter().all(|s| !s.has_repeated_image()));
        assert_eq!(sessions.len(), 1);
        assert_eq!(sessions[0].session_id, "t0-t2");
    }

    #[test]
    fn chaining_stays_within_category() {
        let mut t2 = trip("b", "y", "c");
        t2.category = Category::Shirt;
        let ts = vec![trip("a", "x", "b"), t2];
        assert!(chain_triplets(&ts, 3, 5).unwrap().is_empty());
    }
}
