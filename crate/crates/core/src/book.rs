//! Books, the library, photo ingestion through OCR, page edits and the
//! on-disk bundle format.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use parking_lot::RwLock;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::assets::AssetStore;
use crate::dialogue::StorySummary;
use crate::grade::GradeLevel;
use crate::providers::OcrEngine;
use crate::retrieval::{KnowledgeMatch, RetrievalConfig, RetrievalError, Retriever};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BookOrigin {
    Bundled,
    UserUploaded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Page {
    pub index: usize,
    pub text: String,
    #[serde(default)]
    pub image_ref: Option<String>,
    #[serde(default)]
    pub ocr_confidence: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Book {
    pub id: String,
    pub title: String,
    pub pages: Vec<Page>,
    #[serde(default)]
    pub theme_tags: Vec<String>,
    #[serde(default)]
    pub summary: Option<StorySummary>,
    pub origin: BookOrigin,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BookStatus {
    /// Recognized text awaiting review.
    Draft,
    Confirmed,
}

#[derive(Debug, thiserror::Error)]
pub enum BookError {
    #[error("no images to ingest")]
    NoImages,
    #[error("text recognition failed on every page")]
    AllPagesFailed,
    #[error("book `{0}` not found")]
    NotFound(String),
    #[error("book `{0}` already exists")]
    AlreadyExists(String),
    #[error("book `{book}` has no page {index} (page count {count})")]
    PageOutOfRange { book: String, index: usize, count: usize },
    #[error("book `{0}` is still a draft")]
    NotConfirmed(String),
    #[error("invalid {field}: {reason}")]
    Invalid { field: &'static str, reason: String },
    #[error("bundle {path}: {message}")]
    Bundle { path: PathBuf, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
}

impl Book {
    pub fn new(id: impl Into<String>, title: impl Into<String>, pages: Vec<String>, origin: BookOrigin) -> Self {
        Self {
            id: id.into(),
            title: title.into(),
            pages: pages
                .into_iter()
                .enumerate()
                .map(|(index, text)| Page { index, text, image_ref: None, ocr_confidence: None })
                .collect(),
            theme_tags: Vec::new(),
            summary: None,
            origin,
        }
    }

    pub fn page_count(&self) -> usize {
        self.pages.len()
    }

    pub fn validate(&self) -> Result<(), BookError> {
        if self.id.trim().is_empty() || !self.id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
            return Err(BookError::Invalid { field: "id", reason: format!("`{}` must be non-empty [A-Za-z0-9_-]", self.id) });
        }
        if self.pages.is_empty() {
            return Err(BookError::Invalid { field: "pages", reason: "a book needs at least one page".into() });
        }
        for (i, p) in self.pages.iter().enumerate() {
            if p.index != i {
                return Err(BookError::Invalid { field: "pages", reason: format!("page {i} has index {}", p.index) });
            }
            if p.text.trim().is_empty() && p.image_ref.is_none() {
                return Err(BookError::Invalid { field: "pages", reason: format!("page {i} has neither text nor image") });
            }
            if let Some(c) = p.ocr_confidence {
                if !(0.0..=1.0).contains(&c) {
                    return Err(BookError::Invalid { field: "ocr_confidence", reason: format!("{c} on page {i}") });
                }
            }
        }
        Ok(())
    }
}

/// One uploaded photo.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageUpload {
    pub media_type: String,
    pub bytes: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ingestion {
    pub book: Book,
    pub warnings: Vec<String>,
}

/// Recognize one page per photo, in upload order. Pages whose recognition
/// fails keep empty text and zero confidence.
pub fn ingest_photos(
    title: &str,
    images: &[ImageUpload],
    ocr: &dyn OcrEngine,
    assets: &AssetStore,
) -> Result<Ingestion, BookError> {
    if images.is_empty() {
        return Err(BookError::NoImages);
    }
    let mut hasher = Sha256::new();
    let mut pages = Vec::with_capacity(images.len());
    let mut warnings = Vec::new();
    for (index, image) in images.iter().enumerate() {
        let key = assets.put(&image.media_type, &image.bytes)?;
        hasher.update(key.as_bytes());
        let (text, confidence) = match ocr.recognize(&image.bytes) {
            Ok(r) => (r.text.trim().to_string(), r.confidence.clamp(0.0, 1.0)),
            Err(e) => {
                warnings.push(format!("page {index}: text recognition failed: {e}"));
                (String::new(), 0.0)
            }
        };
        pages.push(Page { index, text, image_ref: Some(key), ocr_confidence: Some(confidence) });
    }
    if warnings.len() == images.len() {
        return Err(BookError::AllPagesFailed);
    }
    let digest = hasher.finalize();
    let id = format!("upload-{}", digest.iter().take(6).map(|b| format!("{b:02x}")).collect::<String>());
    let title = if title.trim().is_empty() { "My storybook" } else { title.trim() };
    Ok(Ingestion {
        book: Book {
            id,
            title: title.to_string(),
            pages,
            theme_tags: Vec::new(),
            summary: None,
            origin: BookOrigin::UserUploaded,
        },
        warnings,
    })
}

/// Replace theme tags, trimmed and deduplicated case-insensitively.
pub fn categorize_book(mut book: Book, tags: &[String]) -> Book {
    let mut out: Vec<String> = Vec::new();
    for t in tags {
        let t = t.trim();
        if !t.is_empty() && !out.iter().any(|o| o.eq_ignore_ascii_case(t)) {
            out.push(t.to_string());
        }
    }
    book.theme_tags = out;
    book
}

/// Per-page knowledge matches; a pure preview, nothing is recorded.
pub fn preview_matched_knowledge(
    book: &Book,
    grade_cap: GradeLevel,
    retriever: &Retriever,
    config: &RetrievalConfig,
) -> Result<Vec<Vec<KnowledgeMatch>>, BookError> {
    book.pages
        .iter()
        .map(|p| {
            retriever
                .match_section(&format!("{}#{}", book.id, p.index), &p.text, grade_cap, config)
                .map_err(BookError::from)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LibraryEntry {
    pub book: Book,
    pub status: BookStatus,
}

/// All books known to the service. Optionally mirrored to a directory of
/// bundles, one per book.
#[derive(Debug, Default)]
pub struct Library {
    books: RwLock<BTreeMap<String, LibraryEntry>>,
    dir: Option<PathBuf>,
}

impl Library {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Open a library directory, loading every bundle inside it.
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, BookError> {
        let dir = dir.as_ref().to_path_buf();
        std::fs::create_dir_all(&dir)?;
        let mut books = BTreeMap::new();
        let mut subdirs: Vec<PathBuf> = std::fs::read_dir(&dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.join(MANIFEST).is_file())
            .collect();
        subdirs.sort();
        for sub in subdirs {
            let (book, status) = read_bundle_with_status(&sub)?;
            books.insert(book.id.clone(), LibraryEntry { book, status });
        }
        Ok(Self { books: RwLock::new(books), dir: Some(dir) })
    }

    fn persist(&self, entry: &LibraryEntry) -> Result<(), BookError> {
        if let Some(dir) = &self.dir {
            write_bundle_with_status(&entry.book, entry.status, &dir.join(&entry.book.id))?;
        }
        Ok(())
    }

    /// Add a confirmed book, replacing nothing.
    pub fn add_confirmed(&self, book: Book) -> Result<(), BookError> {
        self.insert(book, BookStatus::Confirmed)
    }

    pub fn add_draft(&self, book: Book) -> Result<(), BookError> {
        self.insert(book, BookStatus::Draft)
    }

    fn insert(&self, book: Book, status: BookStatus) -> Result<(), BookError> {
        book.validate()?;
        let mut books = self.books.write();
        if let Some(existing) = books.get(&book.id) {
            if existing.book == book {
                return Ok(());
            }
            return Err(BookError::AlreadyExists(book.id));
        }
        let entry = LibraryEntry { book, status };
        self.persist(&entry)?;
        books.insert(entry.book.id.clone(), entry);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<LibraryEntry> {
        self.books.read().get(id).cloned()
    }

    /// A book that may be read in a session.
    pub fn confirmed(&self, id: &str) -> Result<Book, BookError> {
        match self.get(id) {
            None => Err(BookError::NotFound(id.to_string())),
            Some(e) if e.status == BookStatus::Draft => Err(BookError::NotConfirmed(id.to_string())),
            Some(e) => Ok(e.book),
        }
    }

    pub fn list(&self) -> Vec<LibraryEntry> {
        self.books.read().values().cloned().collect()
    }

    /// Books carrying `tag`; the pseudo-tag "all" lists everything.
    pub fn by_tag(&self, tag: &str) -> Vec<LibraryEntry> {
        self.books
            .read()
            .values()
            .filter(|e| tag.eq_ignore_ascii_case("all") || e.book.theme_tags.iter().any(|t| t.eq_ignore_ascii_case(tag)))
            .cloned()
            .collect()
    }

    fn update<F>(&self, id: &str, f: F) -> Result<Book, BookError>
    where
        F: FnOnce(&mut LibraryEntry) -> Result<(), BookError>,
    {
        let mut books = self.books.write();
        let entry = books.get_mut(id).ok_or_else(|| BookError::NotFound(id.to_string()))?;
        let mut next = entry.clone();
        f(&mut next)?;
        next.book.validate()?;
        if next != *entry {
            self.persist(&next)?;
            *entry = next;
        }
        Ok(entry.book.clone())
    }

    /// Replace the text of one page. Any stored summary is dropped.
    pub fn edit_page(&self, id: &str, index: usize, text: &str) -> Result<Book, BookError> {
        self.update(id, |e| {
            let count = e.book.pages.len();
            let page = e
                .book
                .pages
                .get_mut(index)
                .ok_or(BookError::PageOutOfRange { book: e.book.id.clone(), index, count })?;
            let text = text.trim();
            if page.text != text {
                page.text = text.to_string();
                e.book.summary = None;
            }
            Ok(())
        })
    }

    /// Idempotent: confirming a confirmed book changes nothing.
    pub fn confirm(&self, id: &str) -> Result<Book, BookError> {
        self.update(id, |e| {
            e.status = BookStatus::Confirmed;
            Ok(())
        })
    }

    pub fn set_tags(&self, id: &str, tags: &[String]) -> Result<Book, BookError> {
        self.update(id, |e| {
            e.book = categorize_book(e.book.clone(), tags);
            Ok(())
        })
    }
}

const MANIFEST: &str = "manifest.json";

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    id: String,
    title: String,
    #[serde(default)]
    tags: Vec<String>,
    #[serde(default = "default_origin")]
    origin: BookOrigin,
    #[serde(default = "default_status")]
    status: BookStatus,
    #[serde(default)]
    summary: Option<String>,
    pages: Vec<ManifestPage>,
}

fn default_origin() -> BookOrigin {
    BookOrigin::Bundled
}

fn default_status() -> BookStatus {
    BookStatus::Confirmed
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestPage {
    text_file: String,
    #[serde(default)]
    image: Option<String>,
    #[serde(default)]
    ocr_confidence: Option<f64>,
}

fn bundle_err(path: &Path, message: impl Into<String>) -> BookError {
    BookError::Bundle { path: path.to_path_buf(), message: message.into() }
}

/// Book and review state from a manifest plus a page-text lookup keyed by
/// the manifest's file names.
pub fn parse_bundle(
    manifest_json: &str,
    mut read_page: impl FnMut(&str) -> Result<String, String>,
) -> Result<(Book, BookStatus), String> {
    let manifest: Manifest = serde_json::from_str(manifest_json).map_err(|e| format!("{MANIFEST}: {e}"))?;
    let mut pages = Vec::with_capacity(manifest.pages.len());
    for (index, p) in manifest.pages.iter().enumerate() {
        if p.text_file.contains('/') || p.text_file.contains('\\') || p.text_file.contains("..") {
            return Err(format!("page {index}: text_file must be a plain file name"));
        }
        let text = read_page(&p.text_file).map_err(|e| format!("{}: {e}", p.text_file))?;
        pages.push(Page {
            index,
            text: text.trim().to_string(),
            image_ref: p.image.clone(),
            ocr_confidence: p.ocr_confidence,
        });
    }
    let book = Book {
        summary: manifest.summary.map(|text| StorySummary {
            text,
            source_book_id: manifest.id.clone(),
            degraded: false,
        }),
        id: manifest.id,
        title: manifest.title,
        pages,
        theme_tags: manifest.tags,
        origin: manifest.origin,
    };
    book.validate().map_err(|e| e.to_string())?;
    Ok((book, manifest.status))
}

/// Book and review state from a bundle directory.
pub fn read_bundle_with_status(dir: &Path) -> Result<(Book, BookStatus), BookError> {
    let manifest_path = dir.join(MANIFEST);
    let raw = std::fs::read_to_string(&manifest_path).map_err(|e| bundle_err(&manifest_path, e.to_string()))?;
    parse_bundle(&raw, |name| std::fs::read_to_string(dir.join(name)).map_err(|e| e.to_string()))
        .map_err(|message| bundle_err(dir, message))
}

pub fn read_bundle(dir: impl AsRef<Path>) -> Result<Book, BookError> {
    read_bundle_with_status(dir.as_ref()).map(|(b, _)| b)
}

fn write_bundle_with_status(book: &Book, status: BookStatus, dir: &Path) -> Result<(), BookError> {
    std::fs::create_dir_all(dir)?;
    let manifest = Manifest {
        id: book.id.clone(),
        title: book.title.clone(),
        tags: book.theme_tags.clone(),
        origin: book.origin,
        status,
        summary: book.summary.as_ref().filter(|s| !s.degraded).map(|s| s.text.clone()),
        pages: book
            .pages
            .iter()
            .map(|p| ManifestPage {
                text_file: format!("page-{:03}.txt", p.index),
                image: p.image_ref.clone(),
                ocr_confidence: p.ocr_confidence,
            })
            .collect(),
    };
    for p in &book.pages {
        std::fs::write(dir.join(format!("page-{:03}.txt", p.index)), format!("{}\n", p.text))?;
    }
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    let tmp = dir.join("manifest.json.tmp");
    std::fs::write(&tmp, json + "\n")?;
    std::fs::rename(tmp, dir.join(MANIFEST))?;
    Ok(())
}

pub fn write_bundle(book: &Book, dir: impl AsRef<Path>) -> Result<(), BookError> {
    write_bundle_with_status(book, BookStatus::Confirmed, dir.as_ref())
}
