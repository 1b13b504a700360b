//! Images, sessions, attribute catalogs and word-vector tables in their
//! on-disk formats.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ndarray::{Array1, ArrayView1};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::nn::Mat;
use crate::text::tokenize;

pub const MIN_IMAGE_SIDE: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Dress,
    Shirt,
    Toptee,
}

impl Category {
    pub const ALL: [Category; 3] = [Category::Dress, Category::Shirt, Category::Toptee];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Dress => "dress",
            Category::Shirt => "shirt",
            Category::Toptee => "toptee",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Category {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "dress" => Ok(Category::Dress),
            "shirt" => Ok(Category::Shirt),
            "toptee" => Ok(Category::Toptee),
            other => Err(Error::Parameter(format!("unknown category {other:?}"))),
        }
    }
}

/// 8-bit RGB raster, row-major, channels interleaved.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Pixels {
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

impl Pixels {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != height * width * 3 {
            return Err(Error::Dimension(format!(
                "pixel buffer of {} bytes does not match {height}x{width}x3",
                data.len()
            )));
        }
        Ok(Self { height, width, data })
    }

    pub fn filled(height: usize, width: usize, rgb: [u8; 3]) -> Self {
        let data = rgb.iter().copied().cycle().take(height * width * 3).collect();
        Self { height, width, data }
    }

    pub fn get(&self, y: usize, x: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set(&mut self, y: usize, x: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Content hash used by pixel-level duplicate detection.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.height as u64).to_le_bytes());
        h.update((self.width as u64).to_le_bytes());
        h.update(&self.data);
        hex(&h.finalize())
    }

    /// `(H·W) × 3` matrix scaled to `[-0.5, 0.5]`.
    pub fn to_matrix(&self) -> Mat {
        Mat::from_shape_fn((self.height * self.width, 3), |(r, c)| {
            self.data[r * 3 + c] as f64 / 255.0 - 0.5
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|e| Error::Image(format!("{}: {e}", path.display())))?;
        let rgb = img.to_rgb8();
        let (w, h) = rgb.dimensions();
        Self::new(h as usize, w as usize, rgb.into_raw())
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let buf = image::RgbImage::from_raw(self.width as u32, self.height as u32, self.data.clone())
            .ok_or_else(|| Error::Image("pixel buffer size".into()))?;
        buf.save_with_format(path, image::ImageFormat::Png)
            .map_err(|e| Error::Image(format!("{}: {e}", path.display())))
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ImageRecord {
    pub image_id: String,
    pub category: Category,
    pub pixels: Pixels,
}

impl ImageRecord {
    pub fn validate(&self) -> Result<()> {
        if self.pixels.height < MIN_IMAGE_SIDE || self.pixels.width < MIN_IMAGE_SIDE {
            return Err(Error::Dimension(format!(
                "image {} is {}x{}, minimum side is {MIN_IMAGE_SIDE}",
                self.image_id, self.pixels.height, self.pixels.width
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub category: Category,
}

/// Image manifest: `{image_id: {"path": ..., "category": ...}}`, paths relative
/// to the manifest's directory.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageManifest {
    #[serde(flatten)]
    pub entries: BTreeMap<String, ManifestEntry>,
}

impl ImageManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::schema(path, e.line(), e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn contains(&self, image_id: &str) -> bool {
        self.entries.contains_key(image_id)
    }

    pub fn category(&self, image_id: &str) -> Option<Category> {
        self.entries.get(image_id).map(|e| e.category)
    }

    /// Ids of one category, sorted.
    pub fn ids_in(&self, category: Category) -> Vec<String> {
        self.entries
            .iter()
            .filter(|(_, e)| e.category == category)
            .map(|(id, _)| id.clone())
            .collect()
    }
}

/// All images of a corpus, decoded and keyed by id.
#[derive(Clone, Debug, Default)]
pub struct ImageStore {
    pub manifest: ImageManifest,
    images: BTreeMap<String, ImageRecord>,
}

impl ImageStore {
    pub fn load(manifest_path: &Path) -> Result<Self> {
        let manifest = ImageManifest::load(manifest_path)?;
        let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
        let mut images = BTreeMap::new();
        for (id, entry) in &manifest.entries {
            let pixels = Pixels::load(&base.join(&entry.path))?;
            let rec = ImageRecord {
                image_id: id.clone(),
                category: entry.category,
                pixels,
            };
            rec.validate()?;
            images.insert(id.clone(), rec);
        }
        Ok(Self { manifest, images })
    }

    pub fn from_records(records: Vec<(ImageRecord, String)>) -> Result<Self> {
        let mut manifest = ImageManifest::default();
        let mut images = BTreeMap::new();
        for (rec, path) in records {
            rec.validate()?;
            if images.contains_key(&rec.image_id) {
                return Err(Error::Parameter(format!("duplicate image id {}", rec.image_id)));
            }
            manifest.entries.insert(
                rec.image_id.clone(),
                ManifestEntry {
                    path,
                    category: rec.category,
                },
            );
            images.insert(rec.image_id.clone(), rec);
        }
        Ok(Self { manifest, images })
    }

    /// Writes every image as PNG at its manifest path plus the manifest itself.
    pub fn save(&self, manifest_path: &Path) -> Result<()> {
        let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
        for (id, entry) in &self.manifest.entries {
            let target = base.join(&entry.path);
            if let Some(dir) = target.parent() {
                fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            }
            self.images[id].pixels.save_png(&target)?;
        }
        self.manifest.save(manifest_path)
    }

    pub fn get(&self, image_id: &str) -> Result<&ImageRecord> {
        self.images
            .get(image_id)
            .ok_or_else(|| Error::NotFound(format!("image {image_id}")))
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &String> {
        self.images.keys()
    }

    pub fn records(&self) -> impl Iterator<Item = &ImageRecord> {
        self.images.values()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Turn {
    pub image_id: String,
    pub feedback: String,
}

/// Ordered reference/feedback turns followed by one target image.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Session {
    pub session_id: String,
    pub category: Category,
    pub turns: Vec<Turn>,
    pub target_image_id: String,
}

impl Session {
    /// Image ids in order: every reference, then the target.
    pub fn image_sequence(&self) -> Vec<&str> {
        self.turns
            .iter()
            .map(|t| t.image_id.as_str())
            .chain(std::iter::once(self.target_image_id.as_str()))
            .collect()
    }

    /// Length in the dataset-table convention, which counts images.
    pub fn table_turns(&self) -> usize {
        self.turns.len() + 1
    }

    pub fn has_consecutive_repeat(&self) -> bool {
        self.image_sequence().windows(2).any(|w| w[0] == w[1])
    }

    pub fn has_repeated_image(&self) -> bool {
        let seq = self.image_sequence();
        let mut seen = HashSet::with_capacity(seq.len());
        !seq.into_iter().all(|id| seen.insert(id))
    }
}

/// What `load_sessions` enforces beyond the record schema.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SessionRules {
    pub min_turns: usize,
    pub max_turns: usize,
    /// Reject sessions containing any repeated image id (circles and duplicates).
    pub require_distinct_images: bool,
}

impl Default for SessionRules {
    fn default() -> Self {
        Self {
            min_turns: 2,
            max_turns: 4,
            require_distinct_images: true,
        }
    }
}

impl SessionRules {
    /// Structural checks only; used when the input still has to go through the filters.
    pub fn lenient() -> Self {
        Self {
            min_turns: 1,
            max_turns: usize::MAX,
            require_distinct_images: false,
        }
    }

    pub fn check(&self, s: &Session, manifest: Option<&ImageManifest>) -> std::result::Result<(), String> {
        let n = s.turns.len();
        if n < self.min_turns || n > self.max_turns {
            return Err(format!(
                "{n} turns outside [{}, {}]",
                self.min_turns, self.max_turns
            ));
        }
        for (i, t) in s.turns.iter().enumerate() {
            if t.feedback.trim().is_empty() {
                return Err(format!("turns[{i}].feedback is empty"));
            }
            if t.image_id.is_empty() {
                return Err(format!("turns[{i}].image_id is empty"));
            }
        }
        if s.target_image_id.is_empty() {
            return Err("target_image_id is empty".into());
        }
        if self.require_distinct_images {
            if s.has_consecutive_repeat() {
                return Err("consecutive images repeat (duplicate)".into());
            }
            if s.has_repeated_image() {
                return Err("an image id occurs more than once (circle)".into());
            }
        }
        if let Some(m) = manifest {
            for id in s.image_sequence() {
                if !m.contains(id) {
                    return Err(format!("dangling image_id {id}"));
                }
            }
        }
        Ok(())
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SessionRecord {
    session_id: Option<String>,
    category: Option<Category>,
    turns: Option<Vec<TurnRecord>>,
    target_image_id: Option<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TurnRecord {
    image_id: Option<String>,
    feedback: Option<String>,
}

fn parse_session(line: &str) -> std::result::Result<Session, String> {
    let rec: SessionRecord = serde_json::from_str(line).map_err(|e| e.to_string())?;
    let missing = |f: &str| format!("missing field `{f}`");
    let turns = rec
        .turns
        .ok_or_else(|| missing("turns"))?
        .into_iter()
        .enumerate()
        .map(|(i, t)| {
            Ok(Turn {
                image_id: t.image_id.ok_or_else(|| missing(&format!("turns[{i}].image_id")))?,
                feedback: t.feedback.ok_or_else(|| missing(&format!("turns[{i}].feedback")))?,
            })
        })
        .collect::<std::result::Result<Vec<_>, String>>()?;
    Ok(Session {
        session_id: rec.session_id.ok_or_else(|| missing("session_id"))?,
        category: rec.category.ok_or_else(|| missing("category"))?,
        turns,
        target_image_id: rec.target_image_id.ok_or_else(|| missing("target_image_id"))?,
    })
}

/// Reads line-delimited session records, validating each against `rules`.
pub fn load_sessions(path: &Path, rules: &SessionRules, manifest: Option<&ImageManifest>) -> Result<Vec<Session>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    let mut ids = HashSet::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let lineno = i + 1;
        let session = parse_session(&line).map_err(|m| Error::schema(path, lineno, m))?;
        rules
            .check(&session, manifest)
            .map_err(|m| Error::schema(path, lineno, format!("session {}: {m}", session.session_id)))?;
        if !ids.insert(session.session_id.clone()) {
            return Err(Error::schema(
                path,
                lineno,
                format!("duplicate session_id {}", session.session_id),
            ));
        }
        out.push(session);
    }
    Ok(out)
}

pub fn save_sessions(path: &Path, sessions: &[Session]) -> Result<()> {
    write_jsonl(path, sessions)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    ensure_parent(path)?;
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    ensure_parent(path)?;
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::schema(path, e.line(), e.to_string()))
}

pub(crate) fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttributeSlot {
    Texture,
    Fabric,
    Shape,
    Part,
    Style,
}

impl AttributeSlot {
    pub const ALL: [AttributeSlot; 5] = [
        AttributeSlot::Texture,
        AttributeSlot::Fabric,
        AttributeSlot::Shape,
        AttributeSlot::Part,
        AttributeSlot::Style,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AttributeSlot::Texture => "texture",
            AttributeSlot::Fabric => "fabric",
            AttributeSlot::Shape => "shape",
            AttributeSlot::Part => "part",
            AttributeSlot::Style => "style",
        }
    }

    fn parse(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|s| s.as_str() == name)
    }
}

/// A phrase is a non-empty lowercase token sequence.
pub type Phrase = Vec<String>;

/// Five phrase lists, one per attribute slot.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct AttributeSet {
    slots: [Vec<Phrase>; 5],
}

impl AttributeSet {
    pub fn slot(&self, slot: AttributeSlot) -> &[Phrase] {
        &self.slots[slot as usize]
    }

    pub fn set_slot(&mut self, slot: AttributeSlot, phrases: Vec<Phrase>) {
        self.slots[slot as usize] = phrases;
    }

    /// Builds a set from raw phrase strings, tokenizing each.
    pub fn from_phrases(raw: &[(AttributeSlot, &[&str])]) -> Self {
        let mut set = Self::default();
        for (slot, phrases) in raw {
            set.set_slot(*slot, phrases.iter().map(|p| tokenize(p).tokens).collect());
        }
        set
    }

    /// Every token across all slots.
    pub fn tokens(&self) -> impl Iterator<Item = &str> {
        self.slots.iter().flatten().flatten().map(String::as_str)
    }
}

/// Per-image attribute sets.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct AttributeCatalog {
    entries: BTreeMap<String, AttributeSet>,
}

impl AttributeCatalog {
    pub fn insert(&mut self, image_id: impl Into<String>, set: AttributeSet) {
        self.entries.insert(image_id.into(), set);
    }

    pub fn get(&self, image_id: &str) -> Result<&AttributeSet> {
        self.entries
            .get(image_id)
            .ok_or_else(|| Error::NotFound(format!("attributes for image {image_id}")))
    }

    pub fn contains(&self, image_id: &str) -> bool {
        self.entries.contains_key(image_id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &AttributeSet)> {
        self.entries.iter()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = serde_json::Map::new();
        for (id, set) in &self.entries {
            let mut obj = serde_json::Map::new();
            for slot in AttributeSlot::ALL {
                let phrases: Vec<serde_json::Value> = set
                    .slot(slot)
                    .iter()
                    .map(|p| serde_json::Value::String(p.join(" ")))
                    .collect();
                obj.insert(slot.as_str().into(), serde_json::Value::Array(phrases));
            }
            out.insert(id.clone(), serde_json::Value::Object(obj));
        }
        write_json(path, &serde_json::Value::Object(out))
    }
}

/// Reads the attribute JSON object, lowercasing and tokenizing every phrase.
pub fn load_attributes(path: &Path) -> Result<AttributeCatalog> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_attributes(&text).map_err(|m| Error::schema(path, 0, m))
}

pub fn parse_attributes(text: &str) -> std::result::Result<AttributeCatalog, String> {
    let root: serde_json::Value = serde_json::from_str(text).map_err(|e| e.to_string())?;
    let obj = root.as_object().ok_or("attributes file must be a JSON object")?;
    let mut catalog = AttributeCatalog::default();
    for (id, value) in obj {
        let slots = value
            .as_object()
            .ok_or_else(|| format!("{id}: entry must be an object of slot lists"))?;
        let mut set = AttributeSet::default();
        for (name, phrases) in slots {
            let slot = AttributeSlot::parse(name).ok_or_else(|| format!("{id}: unknown slot {name:?}"))?;
            let list = phrases
                .as_array()
                .ok_or_else(|| format!("{id}.{name}: expected a list of phrases"))?;
            let mut parsed = Vec::with_capacity(list.len());
            for p in list {
                let s = p
                    .as_str()
                    .ok_or_else(|| format!("{id}.{name}: non-string phrase {p}"))?;
                let tokens = tokenize(s).tokens;
                if tokens.is_empty() {
                    return Err(format!("{id}.{name}: phrase {s:?} has no tokens"));
                }
                parsed.push(tokens);
            }
            set.set_slot(slot, parsed);
        }
        catalog.insert(id.clone(), set);
    }
    Ok(catalog)
}

/// Word → vector map with an all-zero vector for unknown tokens.
#[derive(Clone, Debug)]
pub struct EmbeddingTable {
    dim: usize,
    index: HashMap<String, usize>,
    words: Vec<String>,
    vectors: Mat,
    unk: Array1<f64>,
}

impl EmbeddingTable {
    pub fn new(dim: usize, entries: Vec<(String, Vec<f64>)>) -> Result<Self> {
        let mut index = HashMap::with_capacity(entries.len());
        let mut words = Vec::with_capacity(entries.len());
        let mut flat = Vec::with_capacity(entries.len() * dim);
        for (word, v) in entries {
            if v.len() != dim {
                return Err(Error::Dimension(format!(
                    "vector for {word:?} has {} values, expected {dim}",
                    v.len()
                )));
            }
            if index.contains_key(&word) {
                continue;
            }
            index.insert(word.clone(), words.len());
            words.push(word);
            flat.extend(v);
        }
        let vectors = Mat::from_shape_vec((words.len(), dim), flat).expect("row-major table");
        Ok(Self {
            dim,
            index,
            words,
            vectors,
            unk: Array1::zeros(dim),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    /// Words in file order (conventionally most frequent first).
    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn unk(&self) -> ArrayView1<'_, f64> {
        self.unk.view()
    }

    pub fn lookup(&self, token: &str) -> ArrayView1<'_, f64> {
        match self.index.get(token) {
            Some(&i) => self.vectors.row(i),
            None => self.unk.view(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        ensure_parent(path)?;
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        for (i, word) in self.words.iter().enumerate() {
            write!(w, "{word}").map_err(|e| Error::io(path, e))?;
            for v in self.vectors.row(i) {
                write!(w, " {v}").map_err(|e| Error::io(path, e))?;
            }
            writeln!(w).map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Parses `token v1 … v_d` lines; any line with the wrong arity is an error.
pub fn load_embedding_table(path: &Path, dim: usize) -> Result<EmbeddingTable> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut entries = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let mut parts = line.split_whitespace();
        let Some(word) = parts.next() else { continue };
        let values = parts
            .map(|p| p.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::schema(path, i + 1, format!("bad number: {e}")))?;
        if values.len() != dim {
            return Err(Error::schema(
                path,
                i + 1,
                format!("expected {dim} values after {word:?}, found {}", values.len()),
            ));
        }
        entries.push((word.to_string(), values));
    }
    EmbeddingTable::new(dim, entries)
}

/// Standard file names inside a corpus directory.
#[derive(Clone, Debug)]
pub struct CorpusPaths {
    pub root: PathBuf,
}

impl CorpusPaths {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn manifest(&self) -> PathBuf {
        self.root.join("manifest.json")
    }

    pub fn attributes(&self) -> PathBuf {
        self.root.join("attributes.json")
    }

    pub fn triplets(&self) -> PathBuf {
        self.root.join("triplets.jsonl")
    }

    pub fn embeddings(&self) -> PathBuf {
        self.root.join("embeddings.txt")
    }

    pub fn sessions(&self) -> PathBuf {
        self.root.join("sessions.jsonl")
    }

    pub fn antonyms(&self) -> PathBuf {
        self.root.join("antonyms.tsv")
    }

    pub fn keywords(&self) -> PathBuf {
        self.root.join("keywords.tsv")
    }

    pub fn misspellings(&self) -> PathBuf {
        self.root.join("misspellings.tsv")
    }
}
