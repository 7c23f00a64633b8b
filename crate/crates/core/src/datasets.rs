//! Sentence-level annotated datasets and their on-disk formats.
//!
//! Two serializations are supported:
//!
//! * span-model JSON: a JSON array of
//!   `{"tokens": [...], "entities": [{"type", "start", "end"}],
//!   "relations": [{"type", "head", "tail"}], "orig_id": ...}` records with
//!   half-open token spans and relation arguments indexing the entity list;
//! * Brat standoff: one `.txt`/`.ann` pair per document, sentences on their
//!   own lines, plus an `index.tsv` sidecar that restores sentence ids.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{self, Sentence, TokenizedSentence};
use crate::grounding::char_span_to_token_span;
use crate::schema::{LabelKind, Schema};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("malformed dataset JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("record {record}: {message}")]
    Record { record: usize, message: String },
    #[error("record {record}: unknown {kind} label `{label}`")]
    UnknownLabel {
        record: usize,
        kind: LabelKind,
        label: String,
    },
    #[error("{file}:{line}: {message}")]
    Brat { file: String, line: usize, message: String },
    #[error("{file}:{line}: relation references undefined entity `{tag}`")]
    DanglingReference { file: String, line: usize, tag: String },
    #[error("cannot merge datasets built against different schemas ({left} vs {right})")]
    FingerprintMismatch { left: String, right: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    #[default]
    Gold,
    Llm,
    Merged,
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Source::Gold => "gold",
            Source::Llm => "llm",
            Source::Merged => "merged",
        })
    }
}

impl std::str::FromStr for Source {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "gold" => Ok(Source::Gold),
            "llm" => Ok(Source::Llm),
            "merged" => Ok(Source::Merged),
            _ => Err(format!("unknown source `{s}`")),
        }
    }
}

/// Typed half-open token span `[start, end)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EntityMention {
    #[serde(rename = "type")]
    pub entity_type: String,
    pub start: usize,
    pub end: usize,
}

/// Typed relation between two entries of the owning sentence's entity list.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RelationMention {
    #[serde(rename = "type")]
    pub relation_type: String,
    pub head: usize,
    pub tail: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnnotatedSentence {
    pub tokens: Vec<String>,
    pub entities: Vec<EntityMention>,
    pub relations: Vec<RelationMention>,
    pub orig_id: String,
    pub source: Source,
}

impl AnnotatedSentence {
    pub fn text(&self) -> String {
        self.tokens.join(" ")
    }

    pub fn tokenized(&self) -> TokenizedSentence {
        TokenizedSentence::from_tokens(&self.orig_id, 0, &self.tokens)
    }

    /// Surface string of entity `i`: its tokens joined by single spaces.
    pub fn surface(&self, i: usize) -> String {
        let e = &self.entities[i];
        self.tokens[e.start..e.end].join(" ")
    }

    /// Checks every mention invariant against `schema`. Returns a message
    /// describing the first violation.
    pub fn check(&self, schema: &Schema) -> Result<(), (Option<LabelKind>, String)> {
        let n = self.tokens.len();
        let mut seen = HashSet::new();
        for (i, e) in self.entities.iter().enumerate() {
            if !(e.start < e.end && e.end <= n) {
                return Err((
                    None,
                    format!("entity {i} span [{}, {}) out of range for {n} tokens", e.start, e.end),
                ));
            }
            if !schema.validate_label(&e.entity_type, LabelKind::Entity) {
                return Err((Some(LabelKind::Entity), e.entity_type.clone()));
            }
            if !seen.insert(e) {
                return Err((None, format!("entity {i} duplicates an earlier entity")));
            }
        }
        let mut rels = HashSet::new();
        for (j, r) in self.relations.iter().enumerate() {
            if r.head >= self.entities.len() || r.tail >= self.entities.len() {
                return Err((None, format!("relation {j} references a missing entity")));
            }
            if r.head == r.tail {
                return Err((None, format!("relation {j} has identical head and tail")));
            }
            if !schema.validate_label(&r.relation_type, LabelKind::Relation) {
                return Err((Some(LabelKind::Relation), r.relation_type.clone()));
            }
            if !rels.insert(normalized_relation(r, schema)) {
                return Err((None, format!("relation {j} duplicates an earlier relation")));
            }
        }
        Ok(())
    }

    /// Collapses duplicate entities (remapping relation arguments), orders
    /// symmetric relation arguments and drops duplicate or self-referencing
    /// relations. Returns the number of entities and relations removed.
    pub fn canonicalize(&mut self, schema: &Schema) -> (usize, usize) {
        let mut first: HashMap<EntityMention, usize> = HashMap::new();
        let mut remap = Vec::with_capacity(self.entities.len());
        let mut kept = Vec::with_capacity(self.entities.len());
        for e in self.entities.drain(..) {
            match first.get(&e) {
                Some(&idx) => remap.push(idx),
                None => {
                    first.insert(e.clone(), kept.len());
                    remap.push(kept.len());
                    kept.push(e);
                }
            }
        }
        let dropped_entities = remap.len() - kept.len();
        self.entities = kept;

        let before = self.relations.len();
        let mut seen = HashSet::new();
        let relations = std::mem::take(&mut self.relations);
        for r in relations {
            let (Some(&head), Some(&tail)) = (remap.get(r.head), remap.get(r.tail)) else {
                continue;
            };
            if head == tail {
                continue;
            }
            let r = normalized_relation(
                &RelationMention {
                    relation_type: r.relation_type,
                    head,
                    tail,
                },
                schema,
            );
            if seen.insert(r.clone()) {
                self.relations.push(r);
            }
        }
        (dropped_entities, before - self.relations.len())
    }

    /// Order-insensitive identity used for duplicate detection: tokens plus
    /// the sets of entities and of relations expressed over entity spans.
    fn content_key(&self, schema: &Schema) -> (Vec<String>, Vec<EntityMention>, Vec<RelationKey>) {
        let mut entities = self.entities.clone();
        entities.sort();
        entities.dedup();
        let mut relations: Vec<RelationKey> = self
            .relations
            .iter()
            .map(|r| {
                let mut h = self.entities[r.head].clone();
                let mut t = self.entities[r.tail].clone();
                if schema.is_symmetric(&r.relation_type) && t < h {
                    std::mem::swap(&mut h, &mut t);
                }
                (r.relation_type.clone(), h, t)
            })
            .collect();
        relations.sort();
        relations.dedup();
        (self.tokens.clone(), entities, relations)
    }
}

type RelationKey = (String, EntityMention, EntityMention);

/// Symmetric relations get `head <= tail`.
pub fn normalized_relation(r: &RelationMention, schema: &Schema) -> RelationMention {
    if schema.is_symmetric(&r.relation_type) && r.head > r.tail {
        RelationMention {
            relation_type: r.relation_type.clone(),
            head: r.tail,
            tail: r.head,
        }
    } else {
        r.clone()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    pub sentences: Vec<AnnotatedSentence>,
    pub schema_fingerprint: String,
}

impl Dataset {
    pub fn new(schema: &Schema) -> Self {
        Dataset {
            sentences: Vec::new(),
            schema_fingerprint: schema.fingerprint(),
        }
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct JsonRecord {
    tokens: Vec<String>,
    #[serde(default)]
    entities: Vec<EntityMention>,
    #[serde(default)]
    relations: Vec<RelationMention>,
    #[serde(default, deserialize_with = "de_orig_id")]
    orig_id: Option<String>,
}

fn de_orig_id<'de, D: serde::Deserializer<'de>>(d: D) -> Result<Option<String>, D::Error> {
    Ok(match serde_json::Value::deserialize(d)? {
        serde_json::Value::Null => None,
        serde_json::Value::String(s) => Some(s),
        other => Some(other.to_string()),
    })
}

/// Counts of what reading had to normalize.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ReadReport {
    pub duplicate_entities: usize,
    pub duplicate_relations: usize,
}

pub fn write_scierc_json(dataset: &Dataset) -> Vec<u8> {
    #[derive(Serialize)]
    struct Out<'a> {
        tokens: &'a [String],
        entities: &'a [EntityMention],
        relations: &'a [RelationMention],
        orig_id: &'a str,
    }
    let records: Vec<Out<'_>> = dataset
        .sentences
        .iter()
        .map(|s| Out {
            tokens: &s.tokens,
            entities: &s.entities,
            relations: &s.relations,
            orig_id: &s.orig_id,
        })
        .collect();
    let mut bytes = serde_json::to_vec(&records).expect("dataset serializes");
    bytes.push(b'\n');
    bytes
}

/// Reads and validates span-model JSON against `schema`. Duplicates are
/// collapsed and symmetric relations normalized; both are counted in the
/// returned report. Records without an `orig_id` get their record index.
pub fn read_scierc_json(bytes: &[u8], schema: &Schema, source: Source) -> Result<(Dataset, ReadReport), DatasetError> {
    let records: Vec<JsonRecord> = serde_json::from_slice(bytes)?;
    let mut report = ReadReport::default();
    let mut dataset = Dataset::new(schema);
    for (idx, rec) in records.into_iter().enumerate() {
        let mut sentence = AnnotatedSentence {
            tokens: rec.tokens,
            entities: rec.entities,
            relations: rec.relations,
            orig_id: rec.orig_id.unwrap_or_else(|| idx.to_string()),
            source,
        };
        validate_raw(&sentence, schema, idx)?;
        let (de, dr) = sentence.canonicalize(schema);
        report.duplicate_entities += de;
        report.duplicate_relations += dr;
        dataset.sentences.push(sentence);
    }
    Ok((dataset, report))
}

fn validate_raw(s: &AnnotatedSentence, schema: &Schema, record: usize) -> Result<(), DatasetError> {
    let n = s.tokens.len();
    let err = |message: String| DatasetError::Record { record, message };
    for (i, e) in s.entities.iter().enumerate() {
        if !(e.start < e.end && e.end <= n) {
            return Err(err(format!(
                "entity {i} span [{}, {}) out of range for {n} tokens",
                e.start, e.end
            )));
        }
        if !schema.validate_label(&e.entity_type, LabelKind::Entity) {
            return Err(DatasetError::UnknownLabel {
                record,
                kind: LabelKind::Entity,
                label: e.entity_type.clone(),
            });
        }
    }
    for (j, r) in s.relations.iter().enumerate() {
        if r.head >= s.entities.len() || r.tail >= s.entities.len() {
            return Err(err(format!("relation {j} references a missing entity")));
        }
        if r.head == r.tail {
            return Err(err(format!("relation {j} has identical head and tail")));
        }
        if !schema.validate_label(&r.relation_type, LabelKind::Relation) {
            return Err(DatasetError::UnknownLabel {
                record,
                kind: LabelKind::Relation,
                label: r.relation_type.clone(),
            });
        }
    }
    Ok(())
}

/// Writes `bytes` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: impl AsRef<Path>, bytes: &[u8]) -> std::io::Result<()> {
    let path = path.as_ref();
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

pub fn load_scierc_json(
    path: impl AsRef<Path>,
    schema: &Schema,
    source: Source,
) -> Result<(Dataset, ReadReport), DatasetError> {
    read_scierc_json(&std::fs::read(path)?, schema, source)
}

pub fn save_scierc_json(path: impl AsRef<Path>, dataset: &Dataset) -> Result<(), DatasetError> {
    Ok(write_atomic(path, &write_scierc_json(dataset))?)
}

/// How `read_brat` turns `.txt` lines back into tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BratTokenization {
    /// Split on whitespace; exact inverse of `write_brat`.
    #[default]
    Whitespace,
    /// Run the rule-based tokenizer (for hand-written Brat text).
    Rules,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct BratReadReport {
    pub documents: usize,
    /// Entities whose char span did not fall on token boundaries and was
    /// widened to the covering tokens.
    pub expanded_spans: usize,
    pub duplicate_entities: usize,
    pub duplicate_relations: usize,
}

fn doc_key(orig_id: &str) -> &str {
    orig_id.rsplit_once('#').map_or(orig_id, |(d, _)| d)
}

fn file_stem(key: &str) -> String {
    let s: String = key
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') {
                c
            } else {
                '_'
            }
        })
        .collect();
    if s.is_empty() || s.starts_with('.') {
        format!("doc{s}")
    } else {
        s
    }
}

/// Writes one `.txt`/`.ann` pair per run of consecutive sentences sharing a
/// document id (the part of `orig_id` before the last `#`), plus
/// `index.tsv` mapping `stem<TAB>line<TAB>orig_id<TAB>source`.
pub fn write_brat(dataset: &Dataset, dir: impl AsRef<Path>) -> Result<(), DatasetError> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let mut index = String::new();
    let mut used: HashMap<String, usize> = HashMap::new();
    let mut i = 0;
    while i < dataset.sentences.len() {
        let key = doc_key(&dataset.sentences[i].orig_id);
        let mut j = i + 1;
        while j < dataset.sentences.len() && doc_key(&dataset.sentences[j].orig_id) == key {
            j += 1;
        }
        let base = file_stem(key);
        let count = used.entry(base.clone()).or_default();
        *count += 1;
        let stem = if *count == 1 { base } else { format!("{base}_{count}") };

        let mut txt = String::new();
        let mut ann = String::new();
        let mut line_offset = 0;
        let mut t_counter = 0;
        let mut r_counter = 0;
        for (line, s) in dataset.sentences[i..j].iter().enumerate() {
            let tokenized = s.tokenized();
            let mut tags = Vec::with_capacity(s.entities.len());
            for e in &s.entities {
                t_counter += 1;
                let cs = tokenized.tokens[e.start].start + line_offset;
                let ce = tokenized.tokens[e.end - 1].end + line_offset;
                ann.push_str(&format!(
                    "T{t_counter}\t{} {cs} {ce}\t{}\n",
                    e.entity_type,
                    s.tokens[e.start..e.end].join(" ")
                ));
                tags.push(t_counter);
            }
            for r in &s.relations {
                r_counter += 1;
                ann.push_str(&format!(
                    "R{r_counter}\t{} Arg1:T{} Arg2:T{}\n",
                    r.relation_type, tags[r.head], tags[r.tail]
                ));
            }
            let text = tokenized.text();
            txt.push_str(text);
            txt.push('\n');
            line_offset += text.chars().count() + 1;
            index.push_str(&format!("{stem}\t{line}\t{}\t{}\n", s.orig_id, s.source));
        }
        write_atomic(dir.join(format!("{stem}.txt")), txt.as_bytes())?;
        write_atomic(dir.join(format!("{stem}.ann")), ann.as_bytes())?;
        i = j;
    }
    write_atomic(dir.join("index.tsv"), index.as_bytes())?;
    Ok(())
}

fn whitespace_tokens(doc_id: &str, sent_index: usize, line: &str) -> TokenizedSentence {
    let mut tokens = Vec::new();
    let mut current: Option<(usize, String)> = None;
    let mut len = 0;
    for (i, c) in line.chars().enumerate() {
        len = i + 1;
        if c.is_whitespace() {
            if let Some((start, text)) = current.take() {
                tokens.push(corpus::Token { text, start, end: i });
            }
        } else {
            current.get_or_insert_with(|| (i, String::new())).1.push(c);
        }
    }
    if let Some((start, text)) = current {
        tokens.push(corpus::Token { text, start, end: len });
    }
    TokenizedSentence {
        sentence: Sentence {
            doc_id: doc_id.to_string(),
            sent_index,
            text: line.to_string(),
            char_start: 0,
            char_end: len,
        },
        tokens,
    }
}

struct BratEntity {
    label: String,
    start: usize,
    end: usize,
    line: usize,
}

/// Reads a Brat directory. Documents are visited in `index.tsv` order when
/// present, otherwise in file-name order with ids `stem#line`.
pub fn read_brat(
    dir: impl AsRef<Path>,
    schema: &Schema,
    tokenization: BratTokenization,
    default_source: Source,
) -> Result<(Dataset, BratReadReport), DatasetError> {
    let dir = dir.as_ref();
    let mut order: Vec<String> = Vec::new();
    let mut ids: HashMap<(String, usize), (String, Source)> = HashMap::new();
    let index_path = dir.join("index.tsv");
    if index_path.exists() {
        for (n, line) in std::fs::read_to_string(&index_path)?.lines().enumerate() {
            let cols: Vec<&str> = line.split('\t').collect();
            let bad = || DatasetError::Brat {
                file: "index.tsv".into(),
                line: n + 1,
                message: "expected `stem<TAB>line<TAB>orig_id<TAB>source`".into(),
            };
            if cols.len() != 4 {
                return Err(bad());
            }
            let line_no: usize = cols[1].parse().map_err(|_| bad())?;
            let source: Source = cols[3].parse().map_err(|_| bad())?;
            if order.last().map(String::as_str) != Some(cols[0]) {
                order.push(cols[0].to_string());
            }
            ids.insert((cols[0].to_string(), line_no), (cols[2].to_string(), source));
        }
    } else {
        let mut stems: Vec<String> = std::fs::read_dir(dir)?
            .filter_map(|e| e.ok())
            .filter_map(|e| {
                let p = e.path();
                (p.extension().is_some_and(|x| x == "txt"))
                    .then(|| p.file_stem().map(|s| s.to_string_lossy().into_owned()))
                    .flatten()
            })
            .collect();
        stems.sort();
        order = stems;
    }

    let mut report = BratReadReport::default();
    let mut dataset = Dataset::new(schema);
    for stem in order {
        report.documents += 1;
        let txt_name = format!("{stem}.txt");
        let ann_name = format!("{stem}.ann");
        let txt = std::fs::read_to_string(dir.join(&txt_name))?;
        let ann = match std::fs::read_to_string(dir.join(&ann_name)) {
            Ok(a) => a,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => String::new(),
            Err(e) => return Err(e.into()),
        };

        // Sentence lines with their document char ranges.
        let txt_len = txt.chars().count();
        let mut lines: Vec<(usize, usize, TokenizedSentence)> = Vec::new();
        let mut offset = 0;
        for (n, line) in txt.split('\n').enumerate() {
            let len = line.chars().count();
            let has_next = offset + len < txt_len;
            if !(line.is_empty() && !has_next) {
                let tokenized = match tokenization {
                    BratTokenization::Whitespace => whitespace_tokens(&stem, n, line),
                    BratTokenization::Rules => corpus::tokenize(&Sentence {
                        doc_id: stem.clone(),
                        sent_index: n,
                        text: line.to_string(),
                        char_start: 0,
                        char_end: len,
                    }),
                };
                lines.push((offset, offset + len, tokenized));
            }
            offset += len + 1;
        }

        let mut entities: BTreeMap<String, BratEntity> = BTreeMap::new();
        let mut t_order: Vec<String> = Vec::new();
        let mut relations: Vec<(String, String, String, usize)> = Vec::new();
        for (n, line) in ann.lines().enumerate() {
            let line_no = n + 1;
            let brat_err = |message: &str| DatasetError::Brat {
                file: ann_name.clone(),
                line: line_no,
                message: message.to_string(),
            };
            if line.trim().is_empty() {
                continue;
            }
            let mut cols = line.splitn(3, '\t');
            let tag = cols.next().unwrap_or_default();
            let body = cols.next().ok_or_else(|| brat_err("missing annotation body"))?;
            if tag.starts_with('T') {
                let mut parts = body.split_whitespace();
                let label = parts.next().ok_or_else(|| brat_err("missing entity type"))?;
                let offsets: Vec<&str> = parts.collect::<Vec<_>>();
                let joined = offsets.join(" ");
                // Discontinuous spans `a b;c d` collapse to their outer range.
                let nums: Vec<usize> = joined
                    .split([' ', ';'])
                    .filter(|s| !s.is_empty())
                    .map(|s| s.parse::<usize>())
                    .collect::<Result<_, _>>()
                    .map_err(|_| brat_err("malformed offsets"))?;
                let (Some(&start), Some(&end)) = (nums.iter().min(), nums.iter().max()) else {
                    return Err(brat_err("missing offsets"));
                };
                if start >= end || end > txt_len {
                    return Err(brat_err("offset outside document text"));
                }
                t_order.push(tag.to_string());
                entities.insert(
                    tag.to_string(),
                    BratEntity {
                        label: label.to_string(),
                        start,
                        end,
                        line: line_no,
                    },
                );
            } else if tag.starts_with('R') {
                let mut parts = body.split_whitespace();
                let label = parts.next().ok_or_else(|| brat_err("missing relation type"))?;
                let mut arg1 = None;
                let mut arg2 = None;
                for p in parts {
                    if let Some(t) = p.strip_prefix("Arg1:") {
                        arg1 = Some(t.to_string());
                    } else if let Some(t) = p.strip_prefix("Arg2:") {
                        arg2 = Some(t.to_string());
                    }
                }
                let (Some(a), Some(b)) = (arg1, arg2) else {
                    return Err(brat_err("relation needs Arg1 and Arg2"));
                };
                relations.push((label.to_string(), a, b, line_no));
            }
            // Events, attributes, notes and equivalences are ignored.
        }

        let mut sentences: Vec<AnnotatedSentence> = lines
            .iter()
            .map(|(_, _, t)| {
                let (orig_id, source) = ids
                    .get(&(stem.clone(), t.sentence.sent_index))
                    .cloned()
                    .unwrap_or_else(|| (format!("{stem}#{}", t.sentence.sent_index), default_source));
                AnnotatedSentence {
                    tokens: t.token_texts(),
                    entities: Vec::new(),
                    relations: Vec::new(),
                    orig_id,
                    source,
                }
            })
            .collect();
        let mut placed: HashMap<String, (usize, usize)> = HashMap::new();
        for tag in &t_order {
            let e = &entities[tag];
            if !schema.validate_label(&e.label, LabelKind::Entity) {
                return Err(DatasetError::Brat {
                    file: ann_name.clone(),
                    line: e.line,
                    message: format!("unknown entity label `{}`", e.label),
                });
            }
            let Some(si) = lines.iter().position(|(s, end, _)| e.start >= *s && e.end <= *end) else {
                return Err(DatasetError::Brat {
                    file: ann_name.clone(),
                    line: e.line,
                    message: "entity crosses a sentence boundary".into(),
                });
            };
            let (line_start, _, tokenized) = &lines[si];
            let (span, expanded) = char_span_to_token_span(tokenized, (e.start - line_start, e.end - line_start))
                .map_err(|err| DatasetError::Brat {
                    file: ann_name.clone(),
                    line: e.line,
                    message: err.to_string(),
                })?;
            if expanded {
                report.expanded_spans += 1;
            }
            placed.insert(tag.clone(), (si, sentences[si].entities.len()));
            sentences[si].entities.push(EntityMention {
                entity_type: e.label.clone(),
                start: span.0,
                end: span.1,
            });
        }
        for (label, a, b, line) in relations {
            if !schema.validate_label(&label, LabelKind::Relation) {
                return Err(DatasetError::Brat {
                    file: ann_name.clone(),
                    line,
                    message: format!("unknown relation label `{label}`"),
                });
            }
            let lookup = |t: &str| {
                placed.get(t).copied().ok_or_else(|| DatasetError::DanglingReference {
                    file: ann_name.clone(),
                    line,
                    tag: t.to_string(),
                })
            };
            let (hs, hi) = lookup(&a)?;
            let (ts, ti) = lookup(&b)?;
            if hs != ts {
                return Err(DatasetError::Brat {
                    file: ann_name.clone(),
                    line,
                    message: "relation crosses a sentence boundary".into(),
                });
            }
            sentences[hs].relations.push(RelationMention {
                relation_type: label,
                head: hi,
                tail: ti,
            });
        }
        for s in &mut sentences {
            let (de, dr) = s.canonicalize(schema);
            report.duplicate_entities += de;
            report.duplicate_relations += dr;
        }
        dataset.sentences.extend(sentences);
    }
    Ok((dataset, report))
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct MergeReport {
    /// Sentence count of each input, in argument order.
    pub input_sizes: Vec<usize>,
    /// Sentences kept from each input.
    pub kept: Vec<usize>,
    pub duplicates: usize,
    pub output_size: usize,
}

/// Concatenates datasets in argument order, keeping the first occurrence of
/// exact duplicates (same tokens and same annotation sets after symmetry
/// normalization).
pub fn merge(datasets: &[Dataset], schema: &Schema) -> Result<(Dataset, MergeReport), DatasetError> {
    let fingerprint = schema.fingerprint();
    for d in datasets {
        if d.schema_fingerprint != fingerprint {
            return Err(DatasetError::FingerprintMismatch {
                left: fingerprint,
                right: d.schema_fingerprint.clone(),
            });
        }
    }
    let mut out = Dataset::new(schema);
    let mut report = MergeReport::default();
    let mut seen = HashSet::new();
    for d in datasets {
        report.input_sizes.push(d.len());
        let mut kept = 0;
        for s in &d.sentences {
            if seen.insert(s.content_key(schema)) {
                out.sentences.push(s.clone());
                kept += 1;
            } else {
                report.duplicates += 1;
            }
        }
        report.kept.push(kept);
    }
    report.output_size = out.len();
    Ok((out, report))
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct DatasetStats {
    pub sentences: usize,
    pub tokens: usize,
    pub entities: usize,
    pub relations: usize,
    pub entity_types: BTreeMap<String, usize>,
    pub relation_types: BTreeMap<String, usize>,
}

pub fn stats(dataset: &Dataset) -> DatasetStats {
    let mut st = DatasetStats {
        sentences: dataset.len(),
        ..Default::default()
    };
    for s in &dataset.sentences {
        st.tokens += s.tokens.len();
        st.entities += s.entities.len();
        st.relations += s.relations.len();
        for e in &s.entities {
            *st.entity_types.entry(e.entity_type.clone()).or_default() += 1;
        }
        for r in &s.relations {
            *st.relation_types.entry(r.relation_type.clone()).or_default() += 1;
        }
    }
    st
}
