//! Corpus loading, unicode cleanup, and paragraph segmentation.
//!
//! News bodies arrive as raw scraped text in line-delimited records. Cleaning
//! is a fixed, total transform (line endings, format-character stripping,
//! canonical normalization, whitespace collapsing) and segmentation relies on
//! the single-sentence-paragraph convention of news prose: a paragraph
//! boundary is simply one or more newlines — no sentence splitter is run.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, Result};
use crate::textproc::tokenize;

/// One article exactly as it appears in the input file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RawArticle {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub title: Option<String>,
    pub body: String,
    #[serde(default)]
    pub source: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub published: Option<String>,
}

/// A cleaned, segmented article. Paragraph order follows the body; an
/// article may legitimately end up with fewer than two paragraphs (it then
/// contributes no entailment pairs downstream).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Article {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub title: Option<String>,
    pub paragraphs: Vec<String>,
    #[serde(default)]
    pub source: String,
}

/// Supported corpus input formats.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CorpusFormat {
    #[default]
    Jsonl,
}

/// Unicode format/zero-width code points stripped by [`clean_text`]: the Cf
/// category's common members plus variation selectors and combining-grapheme
/// joiners, all invisible in running text.
fn is_format_char(c: char) -> bool {
    matches!(
        c,
        '\u{00AD}'
            | '\u{034F}'
            | '\u{0600}'..='\u{0605}'
            | '\u{061C}'
            | '\u{06DD}'
            | '\u{070F}'
            | '\u{08E2}'
            | '\u{180B}'..='\u{180E}'
            | '\u{200B}'..='\u{200F}'
            | '\u{202A}'..='\u{202E}'
            | '\u{2060}'..='\u{2064}'
            | '\u{2066}'..='\u{206F}'
            | '\u{FE00}'..='\u{FE0F}'
            | '\u{FEFF}'
            | '\u{FFF9}'..='\u{FFFB}'
            | '\u{110BD}'
            | '\u{110CD}'
            | '\u{13430}'..='\u{13438}'
            | '\u{1BCA0}'..='\u{1BCA3}'
            | '\u{1D173}'..='\u{1D17A}'
            | '\u{E0001}'
            | '\u{E0020}'..='\u{E007F}'
    )
}

/// Total cleanup applied to every body and title:
///
/// 1. line endings: CRLF, bare CR, U+0085, U+2028, U+2029 all become LF;
/// 2. format and zero-width characters are removed, as are control
///    characters other than LF and TAB;
/// 3. canonical (NFC) normalization;
/// 4. runs of spaces and tabs collapse to a single space.
///
/// The function is idempotent and never fails.
pub fn clean_text(raw: &str) -> String {
    // Passes 1–2 in one scan. TAB survives until the collapse pass so that
    // mixed space/tab runs become exactly one space.
    let mut stripped = String::with_capacity(raw.len());
    let mut chars = raw.chars().peekable();
    while let Some(c) = chars.next() {
        match c {
            '\r' => {
                if chars.peek() == Some(&'\n') {
                    chars.next();
                }
                stripped.push('\n');
            }
            '\u{0085}' | '\u{2028}' | '\u{2029}' => stripped.push('\n'),
            _ if is_format_char(c) => {}
            _ if c.is_control() && c != '\n' && c != '\t' => {}
            _ => stripped.push(c),
        }
    }

    // NFC after stripping: removing a joiner can expose a new composition,
    // so normalizing last keeps the whole transform idempotent.
    let normalized: String = stripped.nfc().collect();

    let mut out = String::with_capacity(normalized.len());
    let mut in_blank_run = false;
    for c in normalized.chars() {
        if c == ' ' || c == '\t' {
            if !in_blank_run {
                out.push(' ');
                in_blank_run = true;
            }
        } else {
            out.push(c);
            in_blank_run = false;
        }
    }
    out
}

/// Splits a cleaned body on runs of newlines, trims each piece, and keeps
/// those with at least `min_tokens` tokens. Order is preserved; a body with
/// no qualifying paragraph yields an empty list.
pub fn segment_paragraphs(cleaned_body: &str, min_tokens: usize) -> Vec<String> {
    cleaned_body
        .split('\n')
        .map(str::trim)
        .filter(|piece| !piece.is_empty() && tokenize(piece, false).len() >= min_tokens)
        .map(str::to_string)
        .collect()
}

/// Reads one raw article per line, preserving file order. A malformed line
/// aborts with its 1-based line number; a repeated id aborts naming the id.
pub fn load_articles(path: &Path, format: CorpusFormat) -> Result<Vec<RawArticle>> {
    let CorpusFormat::Jsonl = format;
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut articles = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawArticle = serde_json::from_str(&line).map_err(|e| Error::MalformedRecord {
            line: line_no,
            message: e.to_string(),
        })?;
        if !seen.insert(raw.id.clone()) {
            return Err(Error::DuplicateId(raw.id));
        }
        articles.push(raw);
    }
    Ok(articles)
}

/// Cleans and segments a single raw article.
pub fn process_article(raw: &RawArticle, min_tokens: usize) -> Article {
    let body = clean_text(&raw.body);
    Article {
        id: raw.id.clone(),
        title: raw.title.as_deref().map(clean_text),
        paragraphs: segment_paragraphs(&body, min_tokens),
        source: raw.source.clone(),
    }
}

/// Cleans and segments a whole corpus. With `drop_empty` (the default in the
/// pipeline), articles left without a single qualifying paragraph are
/// discarded; otherwise they are kept with an empty paragraph list.
pub fn process_corpus(raws: &[RawArticle], min_tokens: usize, drop_empty: bool) -> Vec<Article> {
    raws.iter()
        .map(|raw| process_article(raw, min_tokens))
        .filter(|article| !drop_empty || !article.paragraphs.is_empty())
        .collect()
}

/// Writes processed articles one record per line — the inverse of
/// [`load_processed_articles`].
pub fn write_articles(path: &Path, articles: &[Article]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut writer = BufWriter::new(file);
    for article in articles {
        let line = serde_json::to_string(article)
            .map_err(|e| Error::Data(format!("serializing article {}: {e}", article.id)))?;
        writeln!(writer, "{line}").map_err(|e| Error::io(path, e))?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

/// Reads back articles written by [`write_articles`].
pub fn load_processed_articles(path: &Path) -> Result<Vec<Article>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut articles = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let article: Article = serde_json::from_str(&line).map_err(|e| Error::MalformedRecord {
            line: line_no,
            message: e.to_string(),
        })?;
        if !seen.insert(article.id.clone()) {
            return Err(Error::DuplicateId(article.id));
        }
        articles.push(article);
    }
    Ok(articles)
}
