//! Document ingestion: abstract reconstruction, normalization, sentence
//! splitting, tokenization and seeded sampling.
//!
//! All offsets in this module count Unicode scalar values (`char`s), not
//! bytes, so they line up with Brat standoff offsets.

use std::collections::{BTreeMap, HashMap};
use std::io::BufRead;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("inverted index conflict at position {position}: `{first}` and `{second}`")]
    PositionConflict {
        position: usize,
        first: String,
        second: String,
    },
    #[error("document {doc_id}: {source}")]
    Document {
        doc_id: String,
        #[source]
        source: Box<CorpusError>,
    },
    #[error("line {line}: malformed record: {message}")]
    Record { line: usize, message: String },
    #[error("record on line {line} has an empty doc_id")]
    EmptyDocId { line: usize },
    #[error("cannot sample {requested} sentences from a corpus of {available}")]
    SampleTooLarge { requested: usize, available: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One title/abstract record as read from a line-delimited dump.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocumentRecord {
    #[serde(alias = "id")]
    pub doc_id: String,
    #[serde(default, alias = "display_name")]
    pub title: String,
    #[serde(default, rename = "abstract")]
    pub abstract_text: String,
    #[serde(default, alias = "publication_year", skip_serializing_if = "Option::is_none")]
    pub year: Option<i64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub source_tags: Vec<String>,
}

/// Wire shape of a dump line; the abstract may arrive as plain text or as
/// an OpenAlex-style inverted index.
#[derive(Debug, Deserialize)]
struct RawRecord {
    #[serde(alias = "id")]
    doc_id: String,
    #[serde(default, alias = "display_name")]
    title: Option<String>,
    #[serde(default, rename = "abstract")]
    abstract_text: Option<String>,
    #[serde(default)]
    abstract_inverted_index: Option<HashMap<String, Vec<usize>>>,
    #[serde(default, alias = "publication_year")]
    year: Option<i64>,
    #[serde(default)]
    source_tags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Reconstructed {
    pub text: String,
    /// Positions below the maximum that no word claimed.
    pub missing_positions: usize,
}

/// Rebuilds abstract text from a word → positions index. Words are joined by
/// single spaces in position order; gaps are skipped.
pub fn reconstruct_abstract<S: AsRef<str>>(
    inverted_index: &HashMap<S, Vec<usize>>,
) -> Result<Reconstructed, CorpusError> {
    let mut slots: Vec<(usize, &str)> = inverted_index
        .iter()
        .flat_map(|(word, positions)| positions.iter().map(move |&p| (p, word.as_ref())))
        .collect();
    slots.sort_unstable();
    for pair in slots.windows(2) {
        if pair[0].0 == pair[1].0 {
            return Err(CorpusError::PositionConflict {
                position: pair[0].0,
                first: pair[0].1.to_string(),
                second: pair[1].1.to_string(),
            });
        }
    }
    let missing = match slots.last() {
        Some(&(max, _)) => max + 1 - slots.len(),
        None => 0,
    };
    let text = slots.iter().map(|&(_, w)| w).collect::<Vec<_>>().join(" ");
    Ok(Reconstructed {
        text,
        missing_positions: missing,
    })
}

/// NFC-normalizes text, maps whitespace control characters (tab, newline,
/// carriage return, ...) to a plain space and drops every other control
/// character.
pub fn normalize_text(text: &str) -> String {
    text.nfc()
        .filter_map(|c| {
            if c.is_control() {
                c.is_whitespace().then_some(' ')
            } else {
                Some(c)
            }
        })
        .collect()
}

/// Returns `text[start..end)` in char offsets.
pub fn char_slice(text: &str, start: usize, end: usize) -> &str {
    let mut indices = text.char_indices().map(|(i, _)| i).chain(std::iter::once(text.len()));
    let from = indices.nth(start).unwrap_or(text.len());
    let to = if end > start {
        indices.nth(end - start - 1).unwrap_or(text.len())
    } else {
        from
    };
    &text[from..to]
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Sentence {
    pub doc_id: String,
    pub sent_index: usize,
    pub text: String,
    pub char_start: usize,
    pub char_end: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Token {
    pub text: String,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TokenizedSentence {
    pub sentence: Sentence,
    pub tokens: Vec<Token>,
}

impl TokenizedSentence {
    /// Builds a sentence whose text is `tokens` joined by single spaces, the
    /// representation used whenever only a token list is known.
    pub fn from_tokens<S: AsRef<str>>(doc_id: &str, sent_index: usize, tokens: &[S]) -> Self {
        let mut text = String::new();
        let mut out = Vec::with_capacity(tokens.len());
        let mut pos = 0;
        for (i, tok) in tokens.iter().enumerate() {
            if i > 0 {
                text.push(' ');
                pos += 1;
            }
            let tok = tok.as_ref();
            let len = tok.chars().count();
            text.push_str(tok);
            out.push(Token {
                text: tok.to_string(),
                start: pos,
                end: pos + len,
            });
            pos += len;
        }
        TokenizedSentence {
            sentence: Sentence {
                doc_id: doc_id.to_string(),
                sent_index,
                text,
                char_start: 0,
                char_end: pos,
            },
            tokens: out,
        }
    }

    pub fn text(&self) -> &str {
        &self.sentence.text
    }

    pub fn token_texts(&self) -> Vec<String> {
        self.tokens.iter().map(|t| t.text.clone()).collect()
    }

    /// `doc_id#sent_index`, the provenance id used in datasets.
    pub fn orig_id(&self) -> String {
        format!("{}#{}", self.sentence.doc_id, self.sentence.sent_index)
    }
}

pub const DEFAULT_ABBREVIATIONS: &[&str] = &[
    "e.g", "i.e", "al", "cf", "vs", "fig", "figs", "eq", "eqs", "ref", "refs", "sec", "tab", "approx", "ca", "resp",
    "no", "nos", "vol", "pp", "dr", "mr", "mrs", "ms", "prof", "st", "jr", "inc", "ltd", "co", "corp", "dept", "univ",
];

/// Rule-based splitter: breaks after `.`, `!` or `?` (plus any closing
/// quotes/brackets) when followed by whitespace and an uppercase letter,
/// digit or opening bracket, or by the end of text. Never breaks after a
/// listed abbreviation or a single-letter initial.
#[derive(Debug, Clone)]
pub struct SentenceSplitter {
    abbreviations: Vec<String>,
}

impl Default for SentenceSplitter {
    fn default() -> Self {
        Self::with_abbreviations(DEFAULT_ABBREVIATIONS.iter().copied())
    }
}

impl SentenceSplitter {
    /// Abbreviations are given without their final period, case-insensitive.
    pub fn with_abbreviations<I, S>(abbreviations: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        SentenceSplitter {
            abbreviations: abbreviations
                .into_iter()
                .map(|a| a.as_ref().trim_end_matches('.').to_lowercase())
                .collect(),
        }
    }

    /// Char spans `[start, end)` of the sentences in `text`.
    pub fn spans(&self, text: &str) -> Vec<(usize, usize)> {
        let chars: Vec<char> = text.chars().collect();
        let n = chars.len();
        let mut spans = Vec::new();
        let mut start = match chars.iter().position(|c| !c.is_whitespace()) {
            Some(s) => s,
            None => return spans,
        };
        let mut i = start;
        while i < n {
            if !matches!(chars[i], '.' | '!' | '?') {
                i += 1;
                continue;
            }
            let mut end = i + 1;
            while end < n && (matches!(chars[end], '.' | '!' | '?') || is_closer(chars[end])) {
                end += 1;
            }
            let next = (end..n).find(|&j| !chars[j].is_whitespace());
            let boundary = if end < n && !chars[end].is_whitespace() {
                false
            } else {
                match next {
                    None => true,
                    Some(j) => {
                        let c = chars[j];
                        (c.is_uppercase() || c.is_ascii_digit() || is_opener(c))
                            && !(chars[i] == '.' && self.is_abbreviation(&chars[start..i]))
                    }
                }
            };
            if boundary {
                spans.push((start, end));
                match next {
                    Some(j) => {
                        start = j;
                        i = j;
                    }
                    None => return spans,
                }
            } else {
                i = end;
            }
        }
        let end = (start..n)
            .rev()
            .find(|&j| !chars[j].is_whitespace())
            .map_or(start, |j| j + 1);
        if end > start {
            spans.push((start, end));
        }
        spans
    }

    fn is_abbreviation(&self, before: &[char]) -> bool {
        let word_start = before.iter().rposition(|c| c.is_whitespace()).map_or(0, |p| p + 1);
        let word: String = before[word_start..].iter().skip_while(|c| is_opener(**c)).collect();
        let mut letters = word.chars();
        if let (Some(c), None) = (letters.next(), letters.next()) {
            if c.is_uppercase() {
                return true;
            }
        }
        let word = word.to_lowercase();
        self.abbreviations.contains(&word)
    }

    pub fn split(&self, text: &str) -> Vec<Sentence> {
        self.spans(text)
            .into_iter()
            .enumerate()
            .map(|(i, (s, e))| Sentence {
                doc_id: String::new(),
                sent_index: i,
                text: char_slice(text, s, e).to_string(),
                char_start: s,
                char_end: e,
            })
            .collect()
    }
}

fn is_closer(c: char) -> bool {
    matches!(c, ')' | ']' | '}' | '"' | '\'' | '’' | '”' | '»')
}

fn is_opener(c: char) -> bool {
    matches!(c, '(' | '[' | '{' | '"' | '\'' | '‘' | '“' | '«')
}

/// Splits with the default abbreviation list. `doc_id` is left empty.
pub fn split_sentences(text: &str) -> Vec<Sentence> {
    SentenceSplitter::default().split(text)
}

/// Whitespace tokenization with leading and trailing punctuation peeled off
/// into single-character tokens. Interior punctuation (hyphens, decimal
/// points, apostrophes) stays inside the token.
pub fn tokenize(sentence: &Sentence) -> TokenizedSentence {
    let chars: Vec<char> = sentence.text.chars().collect();
    let mut tokens = Vec::new();
    let mut push = |s: usize, e: usize| {
        tokens.push(Token {
            text: chars[s..e].iter().collect(),
            start: s,
            end: e,
        })
    };
    let mut i = 0;
    while i < chars.len() {
        if chars[i].is_whitespace() {
            i += 1;
            continue;
        }
        let mut j = i;
        while j < chars.len() && !chars[j].is_whitespace() {
            j += 1;
        }
        let (mut s, mut e) = (i, j);
        while s < e && !chars[s].is_alphanumeric() {
            push(s, s + 1);
            s += 1;
        }
        let mut trailing = Vec::new();
        while e > s && !chars[e - 1].is_alphanumeric() {
            e -= 1;
            trailing.push(e);
        }
        if e > s {
            push(s, e);
        }
        for t in trailing.into_iter().rev() {
            push(t, t + 1);
        }
        i = j;
    }
    TokenizedSentence {
        sentence: sentence.clone(),
        tokens,
    }
}

/// Uniform sample of `n` sentences without replacement, returned in corpus
/// order. Deterministic for a fixed corpus order, `n` and `seed`.
pub fn sample_sentences<T: Clone>(corpus: &[T], n: usize, seed: u64) -> Result<Vec<T>, CorpusError> {
    if n > corpus.len() {
        return Err(CorpusError::SampleTooLarge {
            requested: n,
            available: corpus.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = rand::seq::index::sample(&mut rng, corpus.len(), n).into_vec();
    picked.sort_unstable();
    Ok(picked.into_iter().map(|i| corpus[i].clone()).collect())
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestStats {
    pub documents: usize,
    pub documents_filtered: usize,
    pub documents_without_abstract: usize,
    pub sentences: usize,
    pub tokens: usize,
    pub missing_positions: usize,
}

/// Normalized document: `text` is `title + " " + abstract` (or just one of
/// them when the other is empty).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub record: DocumentRecord,
    pub text: String,
    pub missing_positions: usize,
}

/// Parses one dump line into a normalized document.
pub fn parse_record(line: &str, line_no: usize) -> Result<Document, CorpusError> {
    let raw: RawRecord = serde_json::from_str(line).map_err(|e| CorpusError::Record {
        line: line_no,
        message: e.to_string(),
    })?;
    if raw.doc_id.trim().is_empty() {
        return Err(CorpusError::EmptyDocId { line: line_no });
    }
    let (abstract_text, missing) = match (raw.abstract_text, raw.abstract_inverted_index) {
        (Some(text), _) if !text.trim().is_empty() => (text, 0),
        (_, Some(index)) => {
            let rebuilt = reconstruct_abstract(&index).map_err(|e| CorpusError::Document {
                doc_id: raw.doc_id.clone(),
                source: Box::new(e),
            })?;
            (rebuilt.text, rebuilt.missing_positions)
        }
        _ => (String::new(), 0),
    };
    let title = normalize_text(raw.title.as_deref().unwrap_or("")).trim().to_string();
    let abstract_text = normalize_text(&abstract_text).trim().to_string();
    let text = match (title.is_empty(), abstract_text.is_empty()) {
        (false, false) => format!("{title} {abstract_text}"),
        (false, true) => title.clone(),
        _ => abstract_text.clone(),
    };
    Ok(Document {
        record: DocumentRecord {
            doc_id: raw.doc_id,
            title,
            abstract_text,
            year: raw.year,
            source_tags: raw.source_tags,
        },
        text,
        missing_positions: missing,
    })
}

/// Splits a document into tokenized sentences. The title is always split on
/// its own so it never merges with the first abstract sentence.
pub fn document_sentences(doc: &Document, splitter: &SentenceSplitter) -> Vec<TokenizedSentence> {
    let title_len = doc.record.title.chars().count();
    let mut spans: Vec<(usize, usize)> = Vec::new();
    if title_len > 0 {
        spans.extend(splitter.spans(&doc.record.title));
    }
    if !doc.record.abstract_text.is_empty() {
        let offset = if title_len > 0 { title_len + 1 } else { 0 };
        spans.extend(
            splitter
                .spans(&doc.record.abstract_text)
                .into_iter()
                .map(|(s, e)| (s + offset, e + offset)),
        );
    }
    spans
        .into_iter()
        .enumerate()
        .map(|(i, (s, e))| {
            tokenize(&Sentence {
                doc_id: doc.record.doc_id.clone(),
                sent_index: i,
                text: char_slice(&doc.text, s, e).to_string(),
                char_start: s,
                char_end: e,
            })
        })
        .collect()
}

/// Reads a line-delimited dump and returns all sentences in input order.
/// `keep` filters documents (e.g. by topic tag); rejected documents are
/// counted but not split.
pub fn ingest<R: BufRead>(
    reader: R,
    splitter: &SentenceSplitter,
    keep: impl Fn(&DocumentRecord) -> bool,
) -> Result<(Vec<TokenizedSentence>, IngestStats), CorpusError> {
    let mut stats = IngestStats::default();
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let doc = parse_record(&line, idx + 1)?;
        stats.documents += 1;
        if !keep(&doc.record) {
            stats.documents_filtered += 1;
            continue;
        }
        if doc.record.abstract_text.is_empty() {
            stats.documents_without_abstract += 1;
        }
        stats.missing_positions += doc.missing_positions;
        let sentences = document_sentences(&doc, splitter);
        stats.sentences += sentences.len();
        stats.tokens += sentences.iter().map(|s| s.tokens.len()).sum::<usize>();
        out.extend(sentences);
    }
    Ok((out, stats))
}

/// Reads pre-split input: one sentence per line as `doc_id<TAB>text`.
/// Sentence indexes restart at 0 for each new doc id.
pub fn read_presplit<R: BufRead>(reader: R) -> Result<Vec<TokenizedSentence>, CorpusError> {
    let mut out = Vec::new();
    let mut next_index: BTreeMap<String, usize> = BTreeMap::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let (doc_id, text) = line.split_once('\t').ok_or_else(|| CorpusError::Record {
            line: idx + 1,
            message: "expected `doc_id<TAB>sentence`".into(),
        })?;
        if doc_id.trim().is_empty() {
            return Err(CorpusError::EmptyDocId { line: idx + 1 });
        }
        let text = normalize_text(text).trim().to_string();
        let slot = next_index.entry(doc_id.to_string()).or_default();
        let len = text.chars().count();
        out.push(tokenize(&Sentence {
            doc_id: doc_id.to_string(),
            sent_index: *slot,
            text,
            char_start: 0,
            char_end: len,
        }));
        *slot += 1;
    }
    Ok(out)
}
