//! Micro-averaged scoring of predicted datasets against gold.
//!
//! Three metrics, all with exact token-span matching:
//!
//! * **NER**: an entity matches when span and type are equal.
//! * **RE**: a relation matches when its type and both argument spans are
//!   equal; argument entity types are ignored.
//! * **RE_w/NEC**: RE plus equal argument entity types.
//!
//! Symmetric relation types match in either argument order. Predictions are
//! deduplicated before counting, so each gold item is matched at most once.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::hash::Hash;
use std::ops::AddAssign;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datasets::{AnnotatedSentence, Dataset};
use crate::schema::Schema;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EvalError {
    #[error("gold has {gold} sentences but predictions have {pred}")]
    SentenceCount { gold: usize, pred: usize },
    #[error("sentence {index}: gold orig_id `{gold}` does not match predicted `{pred}`")]
    OrigIdMismatch { index: usize, gold: String, pred: String },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchCounts {
    pub tp: usize,
    pub fp: usize,
    pub r#fn: usize,
}

impl AddAssign for MatchCounts {
    fn add_assign(&mut self, o: Self) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.r#fn += o.r#fn;
    }
}

impl MatchCounts {
    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.r#fn)
    }

    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }

    pub fn score(self) -> MetricScore {
        MetricScore {
            counts: self,
            precision: self.precision(),
            recall: self.recall(),
            f1: self.f1(),
        }
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricScore {
    #[serde(flatten)]
    pub counts: MatchCounts,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn check_alignment(gold: &Dataset, pred: &Dataset) -> Result<(), EvalError> {
    if gold.len() != pred.len() {
        return Err(EvalError::SentenceCount {
            gold: gold.len(),
            pred: pred.len(),
        });
    }
    for (i, (g, p)) in gold.sentences.iter().zip(&pred.sentences).enumerate() {
        if g.orig_id != p.orig_id {
            return Err(EvalError::OrigIdMismatch {
                index: i,
                gold: g.orig_id.clone(),
                pred: p.orig_id.clone(),
            });
        }
    }
    Ok(())
}

type Span = (usize, usize);

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
struct EntityKey {
    span: Span,
    label: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct RelationKey {
    label: String,
    head: EntityKey,
    tail: EntityKey,
}

impl EntityKey {
    fn untyped(&self) -> EntityKey {
        EntityKey {
            span: self.span,
            label: None,
        }
    }
}

impl RelationKey {
    fn untyped(&self) -> RelationKey {
        RelationKey {
            label: self.label.clone(),
            head: self.head.untyped(),
            tail: self.tail.untyped(),
        }
    }
}

fn entity_keys(s: &AnnotatedSentence) -> HashSet<EntityKey> {
    s.entities
        .iter()
        .map(|e| EntityKey {
            span: (e.start, e.end),
            label: Some(e.entity_type.clone()),
        })
        .collect()
}

/// Relations with typed arguments; symmetric ones have `head <= tail`.
fn relation_keys(s: &AnnotatedSentence, schema: &Schema) -> HashSet<RelationKey> {
    s.relations
        .iter()
        .map(|r| {
            let arg = |i: usize| EntityKey {
                span: (s.entities[i].start, s.entities[i].end),
                label: Some(s.entities[i].entity_type.clone()),
            };
            let (mut head, mut tail) = (arg(r.head), arg(r.tail));
            if schema.is_symmetric(&r.relation_type) && tail < head {
                std::mem::swap(&mut head, &mut tail);
            }
            RelationKey {
                label: r.relation_type.clone(),
                head,
                tail,
            }
        })
        .collect()
}

/// Items are distinct by full identity; two items match when they fall in
/// the same `class`. Each class contributes `min(gold, pred)` matches.
fn count_by<K, C: Eq + Hash>(gold: &HashSet<K>, pred: &HashSet<K>, class: impl Fn(&K) -> C) -> MatchCounts {
    let mut classes: HashMap<C, (usize, usize)> = HashMap::new();
    for k in gold {
        classes.entry(class(k)).or_default().0 += 1;
    }
    for k in pred {
        classes.entry(class(k)).or_default().1 += 1;
    }
    let tp = classes.values().map(|&(g, p)| g.min(p)).sum();
    MatchCounts {
        tp,
        fp: pred.len() - tp,
        r#fn: gold.len() - tp,
    }
}

fn count_relations(gold: &HashSet<RelationKey>, pred: &HashSet<RelationKey>, with_nec: bool) -> MatchCounts {
    if with_nec {
        count_by(gold, pred, RelationKey::clone)
    } else {
        count_by(gold, pred, RelationKey::untyped)
    }
}

/// Entity extraction: exact span and type.
pub fn score_ner(gold: &Dataset, pred: &Dataset) -> Result<MetricScore, EvalError> {
    check_alignment(gold, pred)?;
    let mut total = MatchCounts::default();
    for (g, p) in gold.sentences.iter().zip(&pred.sentences) {
        total += count_by(&entity_keys(g), &entity_keys(p), EntityKey::clone);
    }
    Ok(total.score())
}

/// Relation extraction; `with_nec` also requires argument entity types to
/// match.
pub fn score_re(gold: &Dataset, pred: &Dataset, schema: &Schema, with_nec: bool) -> Result<MetricScore, EvalError> {
    check_alignment(gold, pred)?;
    let mut total = MatchCounts::default();
    for (g, p) in gold.sentences.iter().zip(&pred.sentences) {
        total += count_relations(&relation_keys(g, schema), &relation_keys(p, schema), with_nec);
    }
    Ok(total.score())
}

pub const REPORT_NOTES: &[&str] = &[
    "exact token-span matching; no partial credit",
    "RE requires relation type and both argument spans; RE_w/NEC also argument entity types",
    "symmetric relation types are matched in either argument order",
    "duplicate predictions are collapsed before counting",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub sentences: usize,
    pub ner: MetricScore,
    pub re: MetricScore,
    pub re_with_nec: MetricScore,
    pub ner_by_type: BTreeMap<String, MetricScore>,
    pub re_by_type: BTreeMap<String, MetricScore>,
    pub re_with_nec_by_type: BTreeMap<String, MetricScore>,
    pub symmetric_relation_types: Vec<String>,
    pub notes: Vec<String>,
}

/// All three metrics plus per-type breakdowns.
pub fn evaluate(gold: &Dataset, pred: &Dataset, schema: &Schema) -> Result<EvalReport, EvalError> {
    check_alignment(gold, pred)?;
    let mut ner_by: BTreeMap<String, MatchCounts> = BTreeMap::new();
    let mut re_by: BTreeMap<String, MatchCounts> = BTreeMap::new();
    let mut nec_by: BTreeMap<String, MatchCounts> = BTreeMap::new();
    for e in schema.entity_types() {
        ner_by.insert(e.name.clone(), MatchCounts::default());
    }
    for r in schema.relation_types() {
        re_by.insert(r.name.clone(), MatchCounts::default());
        nec_by.insert(r.name.clone(), MatchCounts::default());
    }

    for (g, p) in gold.sentences.iter().zip(&pred.sentences) {
        let (ge, pe) = (entity_keys(g), entity_keys(p));
        for (label, counts) in ner_by.iter_mut() {
            let keep = |k: &&EntityKey| k.label.as_deref() == Some(label);
            let gk: HashSet<_> = ge.iter().filter(keep).cloned().collect();
            let pk: HashSet<_> = pe.iter().filter(keep).cloned().collect();
            *counts += count_by(&gk, &pk, EntityKey::clone);
        }
        let (gr, pr) = (relation_keys(g, schema), relation_keys(p, schema));
        for (with_nec, table) in [(false, &mut re_by), (true, &mut nec_by)] {
            for (label, counts) in table.iter_mut() {
                let g_l: HashSet<_> = gr.iter().filter(|k| &k.label == label).cloned().collect();
                let p_l: HashSet<_> = pr.iter().filter(|k| &k.label == label).cloned().collect();
                *counts += count_relations(&g_l, &p_l, with_nec);
            }
        }
    }

    let finish = |m: BTreeMap<String, MatchCounts>| m.into_iter().map(|(k, v)| (k, v.score())).collect();
    Ok(EvalReport {
        sentences: gold.len(),
        ner: score_ner(gold, pred)?,
        re: score_re(gold, pred, schema, false)?,
        re_with_nec: score_re(gold, pred, schema, true)?,
        ner_by_type: finish(ner_by),
        re_by_type: finish(re_by),
        re_with_nec_by_type: finish(nec_by),
        symmetric_relation_types: schema
            .relation_types()
            .iter()
            .filter(|r| r.symmetric)
            .map(|r| r.name.clone())
            .collect(),
        notes: REPORT_NOTES.iter().map(|s| s.to_string()).collect(),
    })
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "# sentences: {}", self.sentences)?;
        for note in &self.notes {
            writeln!(f, "# {note}")?;
        }
        if !self.symmetric_relation_types.is_empty() {
            writeln!(f, "# symmetric: {}", self.symmetric_relation_types.join(", "))?;
        }
        writeln!(
            f,
            "{:<24} {:>6} {:>6} {:>6} {:>8} {:>8} {:>8}",
            "metric", "tp", "fp", "fn", "P", "R", "F1"
        )?;
        let row = |f: &mut fmt::Formatter<'_>, name: &str, m: &MetricScore| {
            writeln!(
                f,
                "{:<24} {:>6} {:>6} {:>6} {:>8.4} {:>8.4} {:>8.4}",
                name, m.counts.tp, m.counts.fp, m.counts.r#fn, m.precision, m.recall, m.f1
            )
        };
        row(f, "NER", &self.ner)?;
        row(f, "RE", &self.re)?;
        row(f, "RE_w/NEC", &self.re_with_nec)?;
        writeln!(f)?;
        for (label, m) in &self.ner_by_type {
            row(f, &format!("NER:{label}"), m)?;
        }
        for (label, m) in &self.re_with_nec_by_type {
            row(f, &format!("RE_w/NEC:{label}"), m)?;
        }
        Ok(())
    }
}

/// What counts as agreement on an entity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgreementCriterion {
    /// Same span and same type.
    #[default]
    SpanAndType,
    /// Same span, type ignored.
    SpanOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Agreement {
    /// Entities both annotators marked.
    pub matched: usize,
    /// Marked only by the first annotator.
    pub only_a: usize,
    /// Marked only by the second annotator.
    pub only_b: usize,
    pub psa: f64,
}

/// `2a / (2a + b + c)`. Two annotators who both marked nothing agree
/// perfectly (1.0).
pub fn psa_from_counts(a: usize, b: usize, c: usize) -> f64 {
    let den = 2 * a + b + c;
    if den == 0 {
        1.0
    } else {
        (2 * a) as f64 / den as f64
    }
}

/// Positive specific agreement between two annotations of the same
/// sentences. Symmetric in its arguments.
pub fn positive_specific_agreement(
    ann_a: &Dataset,
    ann_b: &Dataset,
    criterion: AgreementCriterion,
) -> Result<Agreement, EvalError> {
    check_alignment(ann_a, ann_b)?;
    let (mut a, mut b, mut c) = (0, 0, 0);
    for (x, y) in ann_a.sentences.iter().zip(&ann_b.sentences) {
        let (kx, ky) = (entity_keys(x), entity_keys(y));
        let m = match criterion {
            AgreementCriterion::SpanAndType => count_by(&kx, &ky, EntityKey::clone),
            AgreementCriterion::SpanOnly => count_by(&kx, &ky, EntityKey::untyped),
        };
        a += m.tp;
        b += m.r#fn;
        c += m.fp;
    }
    Ok(Agreement {
        matched: a,
        only_a: b,
        only_b: c,
        psa: psa_from_counts(a, b, c),
    })
}
