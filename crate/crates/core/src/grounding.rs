//! Parsing LLM responses into raw tuples and anchoring them in the source
//! sentences.
//!
//! Response grammar, one item per line:
//!
//! ```text
//! Sentence <n>: <optional echoed text>
//! (T<i>;<EntityType>;<surface text>)
//! (R<j>;<RelationType>;T<head>;T<tail>)
//! (no annotations)
//! ```
//!
//! A bare `Sentence:` header takes the index following the previous one.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::ops::AddAssign;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::TokenizedSentence;
use crate::datasets::{normalized_relation, AnnotatedSentence, EntityMention, RelationMention, Source};
use crate::schema::{LabelKind, Schema, DELIMITER};

/// Marker line for a sentence without annotations.
pub const NO_ANNOTATIONS: &str = "(no annotations)";
pub const SENTENCE_HEADER: &str = "Sentence";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GroundingError {
    #[error("char span [{0}, {1}) covers no token")]
    NoToken(usize, usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawEntity {
    pub tag: String,
    pub label: String,
    pub surface: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawRelation {
    pub tag: String,
    pub label: String,
    pub head_tag: String,
    pub tail_tag: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MalformedLine {
    pub line: String,
    pub reason: String,
}

/// Tuples for one sentence. `sentence_index` is `None` for lines that came
/// before any `Sentence` header.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawAnnotationSet {
    pub sentence_index: Option<usize>,
    pub entities: Vec<RawEntity>,
    pub relations: Vec<RawRelation>,
    pub malformed_lines: Vec<MalformedLine>,
}

impl RawAnnotationSet {
    fn at(index: Option<usize>) -> Self {
        RawAnnotationSet {
            sentence_index: index,
            ..Default::default()
        }
    }
}

fn numbered_tag(tag: &str, prefix: char) -> bool {
    tag.strip_prefix(prefix)
        .is_some_and(|d| !d.is_empty() && d.bytes().all(|b| b.is_ascii_digit()))
}

/// Recognizes `Sentence <n>:` / `Sentence:` headers. Returns
/// `Some(Some(n))`, `Some(None)` for an unnumbered header, `None` otherwise.
fn parse_header(line: &str) -> Option<Option<usize>> {
    let rest = line.strip_prefix(SENTENCE_HEADER)?;
    let (num, _) = rest.split_once(':')?;
    let num = num.trim();
    if num.is_empty() {
        Some(None)
    } else {
        num.parse().ok().map(Some)
    }
}

/// Parses a response into per-sentence tuple sets. Never fails: every line
/// that does not fit the grammar is kept in `malformed_lines` with a reason.
pub fn parse_response(response_text: &str) -> Vec<RawAnnotationSet> {
    let mut sets: Vec<RawAnnotationSet> = Vec::new();
    let mut current: Option<RawAnnotationSet> = None;
    let mut last_index: Option<usize> = None;
    let mut entity_tags: HashSet<String> = HashSet::new();
    let mut relation_keys: HashSet<(String, String, String)> = HashSet::new();

    for raw_line in response_text.lines() {
        let line = raw_line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(header) = parse_header(line) {
            if let Some(set) = current.take() {
                sets.push(set);
            }
            let index = header.unwrap_or_else(|| last_index.map_or(0, |i| i + 1));
            last_index = Some(index);
            current = Some(RawAnnotationSet::at(Some(index)));
            entity_tags.clear();
            relation_keys.clear();
            continue;
        }
        let set = current.get_or_insert_with(|| RawAnnotationSet::at(None));
        let mut malformed = |reason: &str| {
            set.malformed_lines.push(MalformedLine {
                line: raw_line.to_string(),
                reason: reason.to_string(),
            })
        };
        if line.eq_ignore_ascii_case(NO_ANNOTATIONS) {
            continue;
        }
        let Some(inner) = line.strip_prefix('(').and_then(|l| l.strip_suffix(')')) else {
            malformed("not a tuple");
            continue;
        };
        let fields: Vec<&str> = inner.split(DELIMITER).map(str::trim).collect();
        let tag = fields[0];
        if numbered_tag(tag, 'T') {
            if fields.len() != 3 {
                malformed("arity");
            } else if fields[1].is_empty() {
                malformed("empty label");
            } else if fields[2].is_empty() {
                malformed("empty surface");
            } else if !entity_tags.insert(tag.to_string()) {
                malformed("duplicate tag");
            } else {
                set.entities.push(RawEntity {
                    tag: tag.to_string(),
                    label: fields[1].to_string(),
                    surface: fields[2].to_string(),
                });
            }
        } else if numbered_tag(tag, 'R') {
            if fields.len() != 4 {
                malformed("arity");
            } else if fields[1].is_empty() {
                malformed("empty label");
            } else if !numbered_tag(fields[2], 'T') || !numbered_tag(fields[3], 'T') {
                malformed("argument is not an entity tag");
            } else if fields[2] == fields[3] {
                malformed("head equals tail");
            } else if !relation_keys.insert((fields[1].into(), fields[2].into(), fields[3].into())) {
                malformed("duplicate relation");
            } else {
                set.relations.push(RawRelation {
                    tag: tag.to_string(),
                    label: fields[1].to_string(),
                    head_tag: fields[2].to_string(),
                    tail_tag: fields[3].to_string(),
                });
            }
        } else {
            malformed("tag");
        }
    }
    if let Some(set) = current {
        sets.push(set);
    }
    if sets.is_empty() {
        sets.push(RawAnnotationSet::at(None));
    }
    sets
}

/// Which matching rule anchored a surface string.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchTier {
    Exact,
    CaseInsensitive,
    WhitespaceNormalized,
    Fuzzy,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundingOptions {
    /// Enables the last-resort fuzzy tier: token-aligned windows whose
    /// normalized edit distance to the surface is at most
    /// `fuzzy_threshold`.
    pub fuzzy: bool,
    pub fuzzy_threshold: f64,
}

impl Default for GroundingOptions {
    fn default() -> Self {
        GroundingOptions {
            fuzzy: false,
            fuzzy_threshold: 0.1,
        }
    }
}

pub type CharSpan = (usize, usize);

fn fold(c: char) -> char {
    c.to_lowercase().next().unwrap_or(c)
}

fn overlaps(a: CharSpan, b: CharSpan) -> bool {
    a.0 < b.1 && b.0 < a.1
}

fn free(span: CharSpan, claimed: &[CharSpan]) -> bool {
    !claimed.iter().any(|&c| overlaps(span, c))
}

/// Leftmost unclaimed occurrence of `needle` in `hay` under `eq`.
fn find_unclaimed(
    hay: &[char],
    needle: &[char],
    claimed: &[CharSpan],
    eq: impl Fn(char, char) -> bool,
) -> Option<CharSpan> {
    if needle.is_empty() || needle.len() > hay.len() {
        return None;
    }
    (0..=hay.len() - needle.len())
        .filter(|&s| hay[s..s + needle.len()].iter().zip(needle).all(|(&a, &b)| eq(a, b)))
        .map(|s| (s, s + needle.len()))
        .find(|&span| free(span, claimed))
}

/// Anchors `surface` in the sentence text. Tiers are tried in order (exact,
/// case-insensitive, whitespace-insensitive, optional fuzzy); within a tier
/// the leftmost occurrence not overlapping a `claimed` span wins.
pub fn ground_entity(
    sentence: &TokenizedSentence,
    surface: &str,
    claimed: &[CharSpan],
    options: &GroundingOptions,
) -> Option<(CharSpan, MatchTier)> {
    let hay: Vec<char> = sentence.text().chars().collect();
    let needle: Vec<char> = surface.chars().collect();

    if let Some(span) = find_unclaimed(&hay, &needle, claimed, |a, b| a == b) {
        return Some((span, MatchTier::Exact));
    }
    if let Some(span) = find_unclaimed(&hay, &needle, claimed, |a, b| fold(a) == fold(b)) {
        return Some((span, MatchTier::CaseInsensitive));
    }

    // Compare with all whitespace removed, then map back to the original
    // positions of the first and last matched characters.
    let (dense, positions): (Vec<char>, Vec<usize>) = hay
        .iter()
        .enumerate()
        .filter(|(_, c)| !c.is_whitespace())
        .map(|(i, &c)| (fold(c), i))
        .unzip();
    let dense_needle: Vec<char> = needle.iter().filter(|c| !c.is_whitespace()).map(|&c| fold(c)).collect();
    if !dense_needle.is_empty() && dense_needle.len() <= dense.len() {
        let found = (0..=dense.len() - dense_needle.len())
            .filter(|&s| dense[s..s + dense_needle.len()] == dense_needle[..])
            .map(|s| (positions[s], positions[s + dense_needle.len() - 1] + 1))
            .find(|&span| free(span, claimed));
        if let Some(span) = found {
            return Some((span, MatchTier::WhitespaceNormalized));
        }
    }

    if options.fuzzy {
        let target: String = needle.iter().map(|&c| fold(c)).collect();
        let target_len = target.chars().count().max(1) as f64;
        let mut best: Option<(f64, CharSpan)> = None;
        let toks = &sentence.tokens;
        for i in 0..toks.len() {
            for j in i + 1..=toks.len() {
                let span = (toks[i].start, toks[j - 1].end);
                let len = span.1 - span.0;
                if len as f64 > target_len * (1.0 + options.fuzzy_threshold) + 1.0 {
                    break;
                }
                if !free(span, claimed) {
                    continue;
                }
                let window: String = hay[span.0..span.1].iter().map(|&c| fold(c)).collect();
                let dist = strsim::levenshtein(&window, &target) as f64 / target_len.max(len as f64);
                if dist <= options.fuzzy_threshold && best.is_none_or(|(d, _)| dist < d) {
                    best = Some((dist, span));
                }
            }
        }
        if let Some((_, span)) = best {
            return Some((span, MatchTier::Fuzzy));
        }
    }
    None
}

/// Smallest token range covering the char span. The flag is true when the
/// range reaches beyond the span's own boundaries.
pub fn char_span_to_token_span(
    sentence: &TokenizedSentence,
    span: CharSpan,
) -> Result<((usize, usize), bool), GroundingError> {
    let covering: Vec<usize> = sentence
        .tokens
        .iter()
        .enumerate()
        .filter(|(_, t)| t.start < span.1 && span.0 < t.end)
        .map(|(i, _)| i)
        .collect();
    let (Some(&first), Some(&last)) = (covering.first(), covering.last()) else {
        return Err(GroundingError::NoToken(span.0, span.1));
    };
    let expanded = sentence.tokens[first].start != span.0 || sentence.tokens[last].end != span.1;
    Ok(((first, last + 1), expanded))
}

/// Counts of what grounding kept and dropped. Reports add up across
/// sentences with `+=`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GroundingReport {
    pub sentences: usize,
    pub total_entities: usize,
    pub grounded_entities: usize,
    pub ungrounded_entities: usize,
    pub out_of_schema_entity_labels: usize,
    pub total_relations: usize,
    pub kept_relations: usize,
    pub out_of_schema_relation_labels: usize,
    pub relations_dropped_missing_arg: usize,
    pub duplicate_relations: usize,
    pub malformed_line_count: usize,
    /// Grounded entities whose token span is wider than the matched text.
    pub expanded_spans: usize,
    pub sentences_with_ungrounded: usize,
    pub tiers: BTreeMap<MatchTier, usize>,
    pub ungrounded_rate: f64,
    pub sentence_ungrounded_rate: f64,
}

impl GroundingReport {
    fn refresh_rates(&mut self) {
        self.ungrounded_rate = self.ungrounded_entities as f64 / self.total_entities.max(1) as f64;
        self.sentence_ungrounded_rate = self.sentences_with_ungrounded as f64 / self.sentences.max(1) as f64;
    }

    /// grounded + ungrounded + out-of-schema = total.
    pub fn is_consistent(&self) -> bool {
        self.grounded_entities + self.ungrounded_entities + self.out_of_schema_entity_labels == self.total_entities
    }
}

impl AddAssign<&GroundingReport> for GroundingReport {
    fn add_assign(&mut self, o: &GroundingReport) {
        self.sentences += o.sentences;
        self.total_entities += o.total_entities;
        self.grounded_entities += o.grounded_entities;
        self.ungrounded_entities += o.ungrounded_entities;
        self.out_of_schema_entity_labels += o.out_of_schema_entity_labels;
        self.total_relations += o.total_relations;
        self.kept_relations += o.kept_relations;
        self.out_of_schema_relation_labels += o.out_of_schema_relation_labels;
        self.relations_dropped_missing_arg += o.relations_dropped_missing_arg;
        self.duplicate_relations += o.duplicate_relations;
        self.malformed_line_count += o.malformed_line_count;
        self.expanded_spans += o.expanded_spans;
        self.sentences_with_ungrounded += o.sentences_with_ungrounded;
        for (tier, n) in &o.tiers {
            *self.tiers.entry(*tier).or_default() += n;
        }
        self.refresh_rates();
    }
}

fn tag_number(tag: &str) -> u64 {
    tag[1..].parse().unwrap_or(u64::MAX)
}

/// Grounds one sentence's raw tuples. Entities are processed in ascending
/// tag order; out-of-schema and unanchored entities are dropped, and so is
/// every relation that loses an argument or carries an unknown label.
pub fn ground_annotations(
    sentence: &TokenizedSentence,
    raw: &RawAnnotationSet,
    schema: &Schema,
    options: &GroundingOptions,
) -> (AnnotatedSentence, GroundingReport) {
    let mut report = GroundingReport {
        sentences: 1,
        total_entities: raw.entities.len(),
        total_relations: raw.relations.len(),
        malformed_line_count: raw.malformed_lines.len(),
        ..Default::default()
    };
    let mut out = AnnotatedSentence {
        tokens: sentence.token_texts(),
        entities: Vec::new(),
        relations: Vec::new(),
        orig_id: sentence.orig_id(),
        source: Source::Llm,
    };

    let mut order: Vec<&RawEntity> = raw.entities.iter().collect();
    order.sort_by_key(|e| tag_number(&e.tag));

    let mut claimed: Vec<CharSpan> = Vec::new();
    let mut by_tag: HashMap<&str, usize> = HashMap::new();
    for e in order {
        if !schema.validate_label(&e.label, LabelKind::Entity) {
            report.out_of_schema_entity_labels += 1;
            continue;
        }
        let Some((span, tier)) = ground_entity(sentence, &e.surface, &claimed, options) else {
            report.ungrounded_entities += 1;
            continue;
        };
        let Ok(((start, end), expanded)) = char_span_to_token_span(sentence, span) else {
            report.ungrounded_entities += 1;
            continue;
        };
        let mention = EntityMention {
            entity_type: e.label.clone(),
            start,
            end,
        };
        claimed.push(span);
        report.grounded_entities += 1;
        *report.tiers.entry(tier).or_default() += 1;
        if expanded {
            report.expanded_spans += 1;
        }
        // Two surfaces widened onto the same tokens with the same label
        // collapse into one mention.
        let idx = match out.entities.iter().position(|m| *m == mention) {
            Some(i) => i,
            None => {
                out.entities.push(mention);
                out.entities.len() - 1
            }
        };
        by_tag.insert(e.tag.as_str(), idx);
    }

    let mut seen = HashSet::new();
    for r in &raw.relations {
        if !schema.validate_label(&r.label, LabelKind::Relation) {
            report.out_of_schema_relation_labels += 1;
            continue;
        }
        let (Some(&head), Some(&tail)) = (by_tag.get(r.head_tag.as_str()), by_tag.get(r.tail_tag.as_str())) else {
            report.relations_dropped_missing_arg += 1;
            continue;
        };
        let rel = normalized_relation(
            &RelationMention {
                relation_type: r.label.clone(),
                head,
                tail,
            },
            schema,
        );
        if head == tail || !seen.insert(rel.clone()) {
            report.duplicate_relations += 1;
            continue;
        }
        out.relations.push(rel);
    }
    report.kept_relations = out.relations.len();
    if report.ungrounded_entities > 0 {
        report.sentences_with_ungrounded = 1;
    }
    report.refresh_rates();
    (out, report)
}

/// The raw tuples an annotated sentence serializes to: `T<i+1>` per entity
/// in list order and `R<j+1>` per relation.
pub fn raw_tuples(sentence: &AnnotatedSentence) -> (Vec<RawEntity>, Vec<RawRelation>) {
    let entities = (0..sentence.entities.len())
        .map(|i| RawEntity {
            tag: format!("T{}", i + 1),
            label: sentence.entities[i].entity_type.clone(),
            surface: sentence.surface(i),
        })
        .collect();
    let relations = sentence
        .relations
        .iter()
        .enumerate()
        .map(|(j, r)| RawRelation {
            tag: format!("R{}", j + 1),
            label: r.relation_type.clone(),
            head_tag: format!("T{}", r.head + 1),
            tail_tag: format!("T{}", r.tail + 1),
        })
        .collect();
    (entities, relations)
}
