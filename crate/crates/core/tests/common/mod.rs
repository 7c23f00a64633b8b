#![allow(dead_code)]

use proptest::prelude::*;
use reanno_core::datasets::{AnnotatedSentence, Dataset, EntityMention, RelationMention, Source};
use reanno_core::schema::Schema;

pub const ENTITY_TYPES: &[&str] = &["Task", "Method", "Metric", "Material", "OtherScientificTerm", "Generic"];
pub const RELATION_TYPES: &[&str] = &[
    "Used-for",
    "Feature-of",
    "Hyponym-of",
    "Part-of",
    "Compare",
    "Conjunction",
    "Evaluate-for",
];

pub fn token() -> impl Strategy<Value = String> {
    "[A-Za-z0-9][A-Za-z0-9.,%-]{0,5}"
}

type RawEntity = (usize, usize, usize);
type RawRelation = (usize, usize, usize);

/// Builds a valid sentence from loose parts: spans are clamped into range,
/// relation arguments are taken modulo the entity count and the result is
/// canonicalized.
pub fn assemble(
    tokens: Vec<String>,
    entities: Vec<RawEntity>,
    relations: Vec<RawRelation>,
    orig_id: String,
    schema: &Schema,
) -> AnnotatedSentence {
    let n = tokens.len();
    let entities: Vec<EntityMention> = entities
        .into_iter()
        .map(|(start, len, t)| {
            let start = start % n;
            EntityMention {
                entity_type: ENTITY_TYPES[t % ENTITY_TYPES.len()].to_string(),
                start,
                end: (start + len).min(n),
            }
        })
        .collect();
    let m = entities.len();
    let relations = if m < 2 {
        Vec::new()
    } else {
        relations
            .into_iter()
            .map(|(h, t, r)| RelationMention {
                relation_type: RELATION_TYPES[r % RELATION_TYPES.len()].to_string(),
                head: h % m,
                tail: t % m,
            })
            .collect()
    };
    let mut s = AnnotatedSentence {
        tokens,
        entities,
        relations,
        orig_id,
        source: Source::Gold,
    };
    s.canonicalize(schema);
    s
}

pub fn sentence_with(
    orig_id: String,
    max_entities: usize,
    max_relations: usize,
) -> impl Strategy<Value = AnnotatedSentence> {
    (
        prop::collection::vec(token(), 1..12),
        prop::collection::vec((0usize..12, 1usize..4, 0usize..6), 0..=max_entities),
        prop::collection::vec((0usize..8, 0usize..8, 0usize..7), 0..=max_relations),
    )
        .prop_map(move |(tokens, e, r)| assemble(tokens, e, r, orig_id.clone(), &Schema::scierc()))
}

pub fn sentence() -> impl Strategy<Value = AnnotatedSentence> {
    sentence_with("doc#0".into(), 6, 4)
}

/// Datasets whose orig_ids group consecutive sentences into documents.
pub fn dataset() -> impl Strategy<Value = Dataset> {
    prop::collection::vec((0usize..3, sentence()), 0..8).prop_map(|items| {
        let mut doc = 0;
        let mut line = 0;
        let sentences = items
            .into_iter()
            .enumerate()
            .map(|(i, (advance, mut s))| {
                if i > 0 && advance == 0 {
                    doc += 1;
                    line = 0;
                }
                s.orig_id = format!("W{doc}#{line}");
                s.source = if i % 3 == 0 { Source::Llm } else { Source::Gold };
                line += 1;
                s
            })
            .collect();
        Dataset {
            sentences,
            schema_fingerprint: Schema::scierc().fingerprint(),
        }
    })
}

/// A sentence of distinct fixed-width lowercase words whose entities do not
/// overlap, so every surface occurs exactly once in the text.
pub fn unambiguous_sentence(orig_id: String) -> impl Strategy<Value = AnnotatedSentence> {
    (
        prop::collection::hash_set("[a-z]{5}", 2..14),
        prop::collection::vec((1usize..3, 0usize..6, any::<bool>()), 0..6),
        prop::collection::vec((0usize..8, 0usize..8, 0usize..7), 0..5),
    )
        .prop_map(move |(words, layout, rels)| {
            let tokens: Vec<String> = words.into_iter().collect();
            let mut entities = Vec::new();
            let mut pos = 0;
            for (len, t, skip) in layout {
                if skip {
                    pos += 1;
                }
                if pos + len > tokens.len() {
                    break;
                }
                entities.push((pos, len, t));
                pos += len;
            }
            assemble(tokens, entities, rels, orig_id.clone(), &Schema::scierc())
        })
}
