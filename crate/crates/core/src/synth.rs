//! Deterministic synthetic garment corpus: flat raster silhouettes, an
//! attribute catalog read off each spec, templated relative feedback and a
//! toy word-vector table.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::corpus::{
    AttributeCatalog, AttributeSet, AttributeSlot, Category, CorpusPaths, EmbeddingTable, ImageRecord, ImageStore,
    Pixels, Session,
};
use crate::derive::{save_triplets, Triplet};
use crate::error::{Error, Result};

pub const MIN_IMAGES: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Color {
    Red,
    Blue,
    Green,
    Yellow,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sleeve {
    None,
    Short,
    Long,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pattern {
    Plain,
    Stripes,
    Dots,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Brightness {
    Light,
    Dark,
}

impl Color {
    pub const ALL: [Color; 4] = [Color::Red, Color::Blue, Color::Green, Color::Yellow];

    pub fn as_str(self) -> &'static str {
        match self {
            Color::Red => "red",
            Color::Blue => "blue",
            Color::Green => "green",
            Color::Yellow => "yellow",
        }
    }

    fn rgb(self) -> [f64; 3] {
        match self {
            Color::Red => [220.0, 40.0, 40.0],
            Color::Blue => [40.0, 70.0, 220.0],
            Color::Green => [40.0, 170.0, 60.0],
            Color::Yellow => [230.0, 210.0, 40.0],
        }
    }
}

impl Sleeve {
    pub const ALL: [Sleeve; 3] = [Sleeve::None, Sleeve::Short, Sleeve::Long];

    pub fn phrase(self) -> &'static str {
        match self {
            Sleeve::None => "sleeveless",
            Sleeve::Short => "short sleeves",
            Sleeve::Long => "long sleeves",
        }
    }
}

impl Pattern {
    pub const ALL: [Pattern; 3] = [Pattern::Plain, Pattern::Stripes, Pattern::Dots];

    pub fn as_str(self) -> &'static str {
        match self {
            Pattern::Plain => "plain",
            Pattern::Stripes => "stripes",
            Pattern::Dots => "dots",
        }
    }
}

impl Brightness {
    pub const ALL: [Brightness; 2] = [Brightness::Light, Brightness::Dark];

    pub fn as_str(self) -> &'static str {
        match self {
            Brightness::Light => "light",
            Brightness::Dark => "dark",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GarmentSpec {
    pub category: Category,
    pub color: Color,
    pub sleeve: Sleeve,
    pub pattern: Pattern,
    pub brightness: Brightness,
}

impl GarmentSpec {
    /// Every spec of one category, in a fixed order.
    pub fn all(category: Category) -> Vec<GarmentSpec> {
        let mut out = Vec::with_capacity(72);
        for color in Color::ALL {
            for sleeve in Sleeve::ALL {
                for pattern in Pattern::ALL {
                    for brightness in Brightness::ALL {
                        out.push(GarmentSpec {
                            category,
                            color,
                            sleeve,
                            pattern,
                            brightness,
                        });
                    }
                }
            }
        }
        out
    }

    pub fn attributes(&self) -> AttributeSet {
        let (fabric, shape) = match self.category {
            Category::Dress => ("chiffon", "a line"),
            Category::Shirt => ("cotton", "button down"),
            Category::Toptee => ("jersey", "fitted"),
        };
        let style = format!("{} {}", self.brightness.as_str(), self.color.as_str());
        AttributeSet::from_phrases(&[
            (AttributeSlot::Texture, &[self.pattern.as_str()]),
            (AttributeSlot::Fabric, &[fabric]),
            (AttributeSlot::Shape, &[shape]),
            (AttributeSlot::Part, &[self.sleeve.phrase()]),
            (AttributeSlot::Style, &[style.as_str()]),
        ])
    }

    fn differing_fields(&self, other: &GarmentSpec) -> usize {
        usize::from(self.color != other.color)
            + usize::from(self.sleeve != other.sleeve)
            + usize::from(self.pattern != other.pattern)
            + usize::from(self.brightness != other.brightness)
    }

    /// Feedback leading from `self` to `target`, or `None` when the move is
    /// not describable. Only moves that never contradict each other within
    /// a chain are describable: brightness only darkens, sleeves only grow,
    /// and a pattern never returns to plain.
    pub fn feedback_to(&self, target: &GarmentSpec) -> Option<String> {
        if self.category != target.category || !(1..=2).contains(&self.differing_fields(target)) {
            return None;
        }
        let mut parts = Vec::with_capacity(2);
        if self.color != target.color {
            parts.push(format!("is {}", target.color.as_str()));
        }
        if self.brightness != target.brightness {
            if target.brightness != Brightness::Dark {
                return None;
            }
            parts.push("is darker".to_string());
        }
        if self.sleeve != target.sleeve {
            parts.push(
                match (self.sleeve, target.sleeve) {
                    (Sleeve::None, Sleeve::Short) => "has short sleeves",
                    (Sleeve::None, Sleeve::Long) => "has long sleeves",
                    (Sleeve::Short, Sleeve::Long) => "has longer sleeves",
                    _ => return None,
                }
                .to_string(),
            );
        }
        if self.pattern != target.pattern {
            parts.push(
                match target.pattern {
                    Pattern::Stripes => "has stripes",
                    Pattern::Dots => "has dots",
                    Pattern::Plain => return None,
                }
                .to_string(),
            );
        }
        Some(parts.join(" and "))
    }

    /// Renders the garment at `size × size` with a small seeded offset and
    /// pixel noise, so equal specs still give distinct images.
    pub fn render(&self, size: usize, rng: &mut ChaCha8Rng) -> Pixels {
        let s = size as f64 / 64.0;
        let dx = rng.gen_range(-3i32..=3) as f64 * s;
        let dy = rng.gen_range(-3i32..=3) as f64 * s;
        let base = self.color.rgb();
        let fill = match self.brightness {
            Brightness::Light => base.map(|c| c + (255.0 - c) * 0.45),
            Brightness::Dark => base.map(|c| c * 0.45),
        };
        let accent = match self.brightness {
            Brightness::Light => [60.0, 60.0, 60.0],
            Brightness::Dark => [245.0, 245.0, 245.0],
        };
        // torso box and hem in 64-pixel units
        let (top, waist, hem, half_top, half_hem) = match self.category {
            Category::Dress => (12.0, 30.0, 58.0, 9.0, 18.0),
            Category::Shirt => (12.0, 48.0, 50.0, 12.0, 12.0),
            Category::Toptee => (16.0, 40.0, 42.0, 11.0, 11.0),
        };
        let sleeve_len = match self.sleeve {
            Sleeve::None => 0.0,
            Sleeve::Short => 10.0,
            Sleeve::Long => 28.0,
        };
        let mut px = Pixels::filled(size, size, [236, 236, 236]);
        for y in 0..size {
            for x in 0..size {
                let u = (x as f64 - dx) / s;
                let v = (y as f64 - dy) / s;
                let cx = u - 32.0;
                let body = if v >= top && v <= waist {
                    cx.abs() <= half_top
                } else if v > waist && v <= hem {
                    let t = (v - waist) / (hem - waist).max(1.0);
                    cx.abs() <= half_top + t * (half_hem - half_top)
                } else {
                    false
                };
                let arm = sleeve_len > 0.0
                    && v >= top
                    && v <= top + sleeve_len
                    && cx.abs() > half_top
                    && cx.abs() <= half_top + 6.0 + (v - top) * 0.25;
                if !body && !arm {
                    continue;
                }
                let marked = match self.pattern {
                    Pattern::Plain => false,
                    Pattern::Stripes => (v as i64).rem_euclid(8) < 3,
                    Pattern::Dots => {
                        let (gx, gy) = (u.rem_euclid(8.0) - 4.0, v.rem_euclid(8.0) - 4.0);
                        gx * gx + gy * gy <= 4.0
                    }
                };
                let c = if marked { accent } else { fill };
                px.set(y, x, c.map(|c| c.round().clamp(0.0, 255.0) as u8));
            }
        }
        for b in px.data.iter_mut() {
            let n: i32 = rng.gen_range(-4..=4);
            *b = (*b as i32 + n).clamp(0, 255) as u8;
        }
        px
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_images: usize,
    pub seed: u64,
    pub image_size: usize,
    /// Outgoing triplets per image, when that many describable moves exist.
    pub out_degree: usize,
    pub embedding_dim: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_images: 200,
            seed: 7,
            image_size: 64,
            out_degree: 1,
            embedding_dim: 32,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SynthImage {
    pub id: String,
    pub spec: GarmentSpec,
    pub pixels: Pixels,
}

#[derive(Clone, Debug)]
pub struct SynthCorpus {
    pub images: Vec<SynthImage>,
    pub catalog: AttributeCatalog,
    pub triplets: Vec<Triplet>,
    pub embeddings: EmbeddingTable,
}

/// Every word the templates and attribute phrases can produce.
pub fn vocabulary() -> Vec<&'static str> {
    let mut words = vec![
        "is", "has", "and", "darker", "short", "long", "longer", "sleeves", "sleeveless", "stripes", "dots", "plain",
        "dark", "light", "chiffon", "cotton", "jersey", "a", "line", "button", "down", "fitted", "lighter",
    ];
    words.extend(Color::ALL.iter().map(|c| c.as_str()));
    words
}

pub fn generate_corpus(config: &SynthConfig) -> Result<SynthCorpus> {
    if config.n_images < MIN_IMAGES {
        return Err(Error::Parameter(format!(
            "need at least {MIN_IMAGES} images, got {}",
            config.n_images
        )));
    }
    if config.image_size < 16 || config.embedding_dim == 0 {
        return Err(Error::Parameter(format!(
            "image_size {} must be at least 16 and embedding_dim positive",
            config.image_size
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let width = config.n_images.to_string().len().max(4);
    let mut images = Vec::with_capacity(config.n_images);
    let mut catalog = AttributeCatalog::default();
    for k in 0..config.n_images {
        let category = Category::ALL[k % Category::ALL.len()];
        let specs = GarmentSpec::all(category);
        let spec = specs[rng.gen_range(0..specs.len())];
        let id = format!("img{k:0width$}");
        let pixels = spec.render(config.image_size, &mut rng);
        catalog.insert(id.clone(), spec.attributes());
        images.push(SynthImage { id, spec, pixels });
    }

    let mut triplets = Vec::new();
    for a in &images {
        let mut moves: Vec<(&SynthImage, String)> = images
            .iter()
            .filter(|b| b.id != a.id)
            .filter_map(|b| a.spec.feedback_to(&b.spec).map(|f| (b, f)))
            .collect();
        moves.shuffle(&mut rng);
        for (b, feedback) in moves.into_iter().take(config.out_degree) {
            triplets.push(Triplet {
                reference: a.id.clone(),
                feedback,
                target: b.id.clone(),
                category: a.spec.category,
            });
        }
    }

    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let entries = vocabulary()
        .into_iter()
        .map(|w| {
            let v = (0..config.embedding_dim).map(|_| normal.sample(&mut rng)).collect();
            (w.to_string(), v)
        })
        .collect();
    Ok(SynthCorpus {
        images,
        catalog,
        triplets,
        embeddings: EmbeddingTable::new(config.embedding_dim, entries)?,
    })
}

/// Which filter a planted session is meant to trip.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Violation {
    Duplicate,
    Circle,
    Conflict,
}

#[derive(Clone, Debug)]
pub struct Planted {
    pub sessions: Vec<Session>,
    pub kinds: Vec<Violation>,
}

/// Builds `per_kind` sessions of each violation from copies of clean
/// sessions. Duplicates need pixel-identical twins, which are added to the
/// corpus as new images.
pub fn plant_violations(corpus: &mut SynthCorpus, sessions: &[Session], per_kind: usize, seed: u64) -> Result<Planted> {
    let mut order: Vec<usize> = (0..sessions.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    if order.len() < 3 * per_kind {
        return Err(Error::Parameter(format!(
            "{} sessions cannot host {} planted violations",
            sessions.len(),
            3 * per_kind
        )));
    }
    let mut planted = Planted {
        sessions: Vec::with_capacity(3 * per_kind),
        kinds: Vec::with_capacity(3 * per_kind),
    };
    for (n, &i) in order.iter().take(3 * per_kind).enumerate() {
        let kind = [Violation::Duplicate, Violation::Circle, Violation::Conflict][n / per_kind];
        let mut s = sessions[i].clone();
        match kind {
            Violation::Duplicate => {
                let last = &s.turns.last().expect("sessions have turns").image_id;
                let src = corpus
                    .images
                    .iter()
                    .find(|im| im.id == *last)
                    .ok_or_else(|| Error::NotFound(format!("image {last}")))?
                    .clone();
                let twin = format!("{}-twin{n}", src.id);
                corpus.catalog.insert(twin.clone(), src.spec.attributes());
                corpus.images.push(SynthImage {
                    id: twin.clone(),
                    ..src
                });
                s.target_image_id = twin;
            }
            Violation::Circle => {
                s.target_image_id = s.turns[0].image_id.clone();
            }
            Violation::Conflict => {
                let last = s.turns.len() - 1;
                s.turns[0].feedback.push_str(" and is darker");
                s.turns[last].feedback.push_str(" and is lighter");
            }
        }
        s.session_id = format!("planted-{}-{n}", serde_json::to_value(kind)?.as_str().unwrap_or("x"));
        planted.sessions.push(s);
        planted.kinds.push(kind);
    }
    Ok(planted)
}

impl SynthCorpus {
    pub fn store(&self) -> Result<ImageStore> {
        ImageStore::from_records(
            self.images
                .iter()
                .map(|im| {
                    (
                        ImageRecord {
                            image_id: im.id.clone(),
                            category: im.spec.category,
                            pixels: im.pixels.clone(),
                        },
                        format!("images/{}.png", im.id),
                    )
                })
                .collect(),
        )
    }

    /// Writes manifest, PNGs, attributes, triplets and embeddings under `root`.
    pub fn save(&self, root: &Path) -> Result<()> {
        let paths = CorpusPaths::new(root);
        self.store()?.save(&paths.manifest())?;
        self.catalog.save(&paths.attributes())?;
        save_triplets(&paths.triplets(), &self.triplets)?;
        self.embeddings.save(&paths.embeddings())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::derive::{chain_triplets, run_filters, AntonymLexicon, FilterInputs, KeywordMap, Verdict};
    use crate::text::tokenize;
    use std::collections::HashMap;

    fn small() -> SynthConfig {
        SynthConfig {
            n_images: 60,
            seed: 3,
            image_size: 32,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_corpus(&small()).unwrap();
        let b = generate_corpus(&small()).unwrap();
        let da = tempfile::tempdir().unwrap();
        let db = tempfile::tempdir().unwrap();
        a.save(da.path()).unwrap();
        b.save(db.path()).unwrap();
        for name in ["manifest.json", "attributes.json", "triplets.jsonl", "embeddings.txt", "images/img0007.png"] {
            assert_eq!(
                std::fs::read(da.path().join(name)).unwrap(),
                std::fs::read(db.path().join(name)).unwrap(),
                "{name}"
            );
        }
        let c = generate_corpus(&SynthConfig { seed: 4, ..small() }).unwrap();
        assert_ne!(a.triplets, c.triplets);
    }

    #[test]
    fn too_few_images_rejected() {
        assert!(generate_corpus(&SynthConfig { n_images: 19, ..small() }).is_err());
    }

    #[test]
    fn sleeve_only_change_uses_sleeve_template() {
        let base = GarmentSpec::all(Category::Shirt)[0];
        assert_eq!(base.sleeve, Sleeve::None);
        for (to, want) in [(Sleeve::Short, "has short sleeves"), (Sleeve::Long, "has long sleeves")] {
            let t = GarmentSpec { sleeve: to, ..base };
            assert_eq!(base.feedback_to(&t).unwrap(), want);
        }
        let short = GarmentSpec { sleeve: Sleeve::Short, ..base };
        let long = GarmentSpec { sleeve: Sleeve::Long, ..base };
        assert_eq!(short.feedback_to(&long).unwrap(), "has longer sleeves");
        assert!(long.feedback_to(&short).is_none());
    }

    /// Reads a template back into the fields it claims changed.
    fn invert(from: &GarmentSpec, feedback: &str) -> GarmentSpec {
        let mut out = *from;
        for clause in feedback.split(" and ") {
            match clause {
                "is darker" => out.brightness = Brightness::Dark,
                "has short sleeves" => out.sleeve = Sleeve::Short,
                "has long sleeves" | "has longer sleeves" => out.sleeve = Sleeve::Long,
                "has stripes" => out.pattern = Pattern::Stripes,
                "has dots" => out.pattern = Pattern::Dots,
                c => {
                    let name = c.strip_prefix("is ").expect("color clause");
                    out.color = *Color::ALL.iter().find(|k| k.as_str() == name).expect("known color");
                }
            }
        }
        out
    }

    #[test]
    fn templates_invert_to_target_spec() {
        let c = generate_corpus(&small()).unwrap();
        let spec: HashMap<&str, GarmentSpec> = c.images.iter().map(|i| (i.id.as_str(), i.spec)).collect();
        assert!(!c.triplets.is_empty());
        for t in &c.triplets {
            assert_eq!(invert(&spec[t.reference.as_str()], &t.feedback), spec[t.target.as_str()]);
        }
        for im in &c.images {
            assert!(c.catalog.contains(&im.id));
        }
        for t in &c.triplets {
            for w in tokenize(&t.feedback).tokens {
                assert!(c.embeddings.contains(&w), "{w}");
            }
        }
        for (_, set) in c.catalog.iter() {
            for w in set.tokens() {
                assert!(c.embeddings.contains(w), "{w}");
            }
        }
    }

    #[test]
    fn filters_remove_exactly_the_planted_sessions() {
        let mut c = generate_corpus(&small()).unwrap();
        let clean = chain_triplets(&c.triplets, 3, 5).unwrap();
        assert!(clean.len() >= 15);
        let planted = plant_violations(&mut c, &clean, 5, 11).unwrap();
        let mut all = clean.clone();
        all.extend(planted.sessions.iter().cloned());
        let hashes: HashMap<String, String> = c.images.iter().map(|i| (i.id.clone(), i.pixels.digest())).collect();
        let lexicon = AntonymLexicon::fashion_default();
        let keywords = KeywordMap::fashion_default();
        let out = run_filters(
            &all,
            &FilterInputs {
                lexicon: Some(&lexicon),
                attributes: Some(&c.catalog),
                keywords: Some(&keywords),
                pixel_hashes: Some(&hashes),
            },
        );
        assert_eq!(out.kept, clean);
        for (v, s) in out.report.sessions.iter().zip(&all) {
            let want = match s.session_id.split('-').nth(1) {
                Some("duplicate") => Verdict::Duplicate,
                Some("circle") => Verdict::Circle,
                Some("conflict") => Verdict::Conflict,
                _ => Verdict::Kept,
            };
            assert_eq!(v.verdict, want, "{}", s.session_id);
        }
    }
}
