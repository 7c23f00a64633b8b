//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit when any
//! criterion fails.

mod support;

use std::collections::HashSet;
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::PathBuf;
use std::time::{Duration, Instant};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use reanno_core::datasets::{
    read_brat, read_scierc_json, write_brat, write_scierc_json, AnnotatedSentence, BratTokenization, Dataset,
    EntityMention, RelationMention, Source,
};
use reanno_core::evaluation::{evaluate, positive_specific_agreement, psa_from_counts, AgreementCriterion};
use reanno_core::grounding::{ground_annotations, parse_response, raw_tuples, GroundingOptions, GroundingReport};
use reanno_core::promptgen::serialize_exemplar;
use reanno_core::schema::Schema;
use serde_json::Value;
use support::*;

type Check = Result<String, String>;
type Criterion = (&'static str, Box<dyn Fn() -> Check>);

const ENTITY_TYPES: &[&str] = &["Task", "Method", "Metric", "Material", "OtherScientificTerm", "Generic"];
const RELATION_TYPES: &[&str] = &[
    "Used-for",
    "Feature-of",
    "Hyponym-of",
    "Part-of",
    "Compare",
    "Conjunction",
    "Evaluate-for",
];
const VOCAB: &[&str] = &[
    "BIM", "model", "the", "energy", "of", "20.5", "%", "(", ")", "-", "sensor", "digital", "twin", ",", "µm",
    "Kalman", "filter", "and", "tunnel", "safety", "U-Net", "LiDAR",
];

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn test_file() -> Result<PathBuf, String> {
    let path = match std::env::var_os("SCIERC_AECO_TEST") {
        Some(p) => PathBuf::from(p),
        None => PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/scierc_aec_test.json"),
    };
    if path.is_file() {
        Ok(path)
    } else {
        Err(format!(
            "annotated test file not found at {}; set SCIERC_AECO_TEST",
            path.display()
        ))
    }
}

fn timed(limit: Duration, f: impl FnOnce() -> Check) -> Check {
    let start = Instant::now();
    let detail = f()?;
    let took = start.elapsed();
    ensure(took < limit, || format!("took {took:.2?}, limit {limit:?}"))?;
    Ok(format!("{detail} ({took:.2?})"))
}

fn random_sentence(rng: &mut ChaCha8Rng, orig_id: String, schema: &Schema) -> AnnotatedSentence {
    let n = rng.random_range(1..14);
    let tokens: Vec<String> = (0..n).map(|_| VOCAB.choose(rng).unwrap().to_string()).collect();
    let entities: Vec<EntityMention> = (0..rng.random_range(0..=6))
        .map(|_| {
            let start = rng.random_range(0..n);
            EntityMention {
                entity_type: ENTITY_TYPES.choose(rng).unwrap().to_string(),
                start,
                end: (start + rng.random_range(1..4)).min(n),
            }
        })
        .collect();
    let m = entities.len();
    let relations = if m < 2 {
        Vec::new()
    } else {
        (0..rng.random_range(0..=4))
            .map(|_| RelationMention {
                relation_type: RELATION_TYPES.choose(rng).unwrap().to_string(),
                head: rng.random_range(0..m),
                tail: rng.random_range(0..m),
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

/// A prediction over the same tokens: an exact copy, a perturbed copy or an
/// unrelated annotation.
fn random_prediction(rng: &mut ChaCha8Rng, gold: &AnnotatedSentence, schema: &Schema) -> AnnotatedSentence {
    let mut p = match rng.random_range(0..3) {
        0 => gold.clone(),
        1 => {
            let mut p = gold.clone();
            let n = p.tokens.len();
            for e in &mut p.entities {
                if rng.random_bool(0.3) {
                    e.entity_type = ENTITY_TYPES.choose(rng).unwrap().to_string();
                }
                if rng.random_bool(0.15) {
                    e.end = (e.end + 1).min(n);
                }
            }
            for r in &mut p.relations {
                if rng.random_bool(0.25) {
                    r.relation_type = RELATION_TYPES.choose(rng).unwrap().to_string();
                }
                if rng.random_bool(0.25) {
                    std::mem::swap(&mut r.head, &mut r.tail);
                }
            }
            if !p.relations.is_empty() && rng.random_bool(0.3) {
                p.relations.remove(0);
            }
            p
        }
        _ => {
            let mut p = random_sentence(rng, gold.orig_id.clone(), schema);
            let n = gold.tokens.len();
            p.tokens = gold.tokens.clone();
            p.entities.retain(|e| e.end <= n);
            let m = p.entities.len();
            p.relations.retain(|r| r.head < m && r.tail < m);
            p
        }
    };
    p.canonicalize(schema);
    p
}

fn dataset_of(sentences: Vec<AnnotatedSentence>, schema: &Schema) -> Dataset {
    let mut d = Dataset::new(schema);
    d.sentences = sentences;
    d
}

fn random_pairs(seed: u64, n: usize, schema: &Schema) -> Vec<(AnnotatedSentence, AnnotatedSentence)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let g = random_sentence(&mut rng, format!("P{i}#0"), schema);
            let p = random_prediction(&mut rng, &g, schema);
            (g, p)
        })
        .collect()
}

// Brute-force oracle: drop items identical to an earlier one, then pair
// each gold item with the first unused prediction the metric accepts.
fn oracle<T>(gold: &[T], pred: &[T], same: impl Fn(&T, &T) -> bool, eq: impl Fn(&T, &T) -> bool) -> [usize; 3] {
    let mut g: Vec<&T> = Vec::new();
    for x in gold {
        if !g.iter().any(|y| same(x, y)) {
            g.push(x);
        }
    }
    let mut p: Vec<&T> = Vec::new();
    for x in pred {
        if !p.iter().any(|y| same(x, y)) {
            p.push(x);
        }
    }
    let mut used = vec![false; p.len()];
    let mut tp = 0;
    for x in &g {
        if let Some(j) = (0..p.len()).find(|&j| !used[j] && eq(x, p[j])) {
            used[j] = true;
            tp += 1;
        }
    }
    [tp, p.len() - tp, g.len() - tp]
}

type Arg = (usize, usize, String);
type Rel = (String, Arg, Arg);

fn ents(s: &AnnotatedSentence) -> Vec<Arg> {
    s.entities
        .iter()
        .map(|e| (e.start, e.end, e.entity_type.clone()))
        .collect()
}

fn rels(s: &AnnotatedSentence) -> Vec<Rel> {
    let ent = ents(s);
    s.relations
        .iter()
        .map(|r| (r.relation_type.clone(), ent[r.head].clone(), ent[r.tail].clone()))
        .collect()
}

fn rel_eq(typed_args: bool) -> impl Fn(&Rel, &Rel) -> bool {
    move |a, b| {
        let arg = |x: &Arg, y: &Arg| x.0 == y.0 && x.1 == y.1 && (!typed_args || x.2 == y.2);
        let symmetric = a.0 == "Compare" || a.0 == "Conjunction";
        a.0 == b.0 && ((arg(&a.1, &b.1) && arg(&a.2, &b.2)) || (symmetric && arg(&a.1, &b.2) && arg(&a.2, &b.1)))
    }
}

fn oracle_f1(pairs: &[(AnnotatedSentence, AnnotatedSentence)]) -> [f64; 3] {
    let mut totals = [[0usize; 3]; 3];
    for (g, p) in pairs {
        let parts = [
            oracle(&ents(g), &ents(p), |a, b| a == b, |a, b| a == b),
            oracle(&rels(g), &rels(p), rel_eq(true), rel_eq(false)),
            oracle(&rels(g), &rels(p), rel_eq(true), rel_eq(true)),
        ];
        for (t, c) in totals.iter_mut().zip(parts) {
            for k in 0..3 {
                t[k] += c[k];
            }
        }
    }
    totals.map(|[tp, fp, fn_]| {
        let p = if tp + fp == 0 {
            0.0
        } else {
            tp as f64 / (tp + fp) as f64
        };
        let r = if tp + fn_ == 0 {
            0.0
        } else {
            tp as f64 / (tp + fn_) as f64
        };
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    })
}

fn scorer_f1(pairs: &[(AnnotatedSentence, AnnotatedSentence)], schema: &Schema) -> Result<[f64; 3], String> {
    let gold = dataset_of(pairs.iter().map(|(g, _)| g.clone()).collect(), schema);
    let pred = dataset_of(pairs.iter().map(|(_, p)| p.clone()).collect(), schema);
    let r = evaluate(&gold, &pred, schema).map_err(|e| e.to_string())?;
    Ok([r.ner.f1, r.re.f1, r.re_with_nec.f1])
}

fn dataset_fidelity() -> Check {
    let path = test_file()?;
    timed(Duration::from_secs(1), || {
        let o = run(&["stats", p(&path), "--json"]);
        ensure(o.status.success(), || stderr(&o))?;
        let st: Value = serde_json::from_str(&stdout(&o)).map_err(|e| e.to_string())?;
        let got = (
            st["sentences"].as_u64(),
            st["entities"].as_u64(),
            st["relations"].as_u64(),
        );
        ensure(got == (Some(314), Some(448), Some(132)), || format!("got {got:?}"))?;
        Ok("314 sentences, 448 entities, 132 relations".into())
    })
}

fn scorer_identity() -> Check {
    let path = test_file()?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let out = dir.path().join("score.json");
    timed(Duration::from_secs(1), || {
        let o = run(&["score", p(&path), p(&path), "--out", p(&out)]);
        ensure(o.status.success(), || stderr(&o))?;
        let r: Value =
            serde_json::from_str(&fs::read_to_string(&out).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
        let f1: Vec<_> = ["ner", "re", "re_with_nec"]
            .iter()
            .map(|m| r[m]["f1"].as_f64())
            .collect();
        ensure(f1.iter().all(|f| *f == Some(1.0)), || format!("F1 {f1:?}"))?;
        Ok("NER, RE and RE_w/NEC F1 = 1.0".into())
    })
}

fn scorer_oracle_equivalence() -> Check {
    let schema = Schema::scierc();
    timed(Duration::from_secs(30), || {
        let pairs = random_pairs(11, 1000, &schema);
        for (i, pair) in pairs.iter().enumerate() {
            let one = std::slice::from_ref(pair);
            let (got, want) = (scorer_f1(one, &schema)?, oracle_f1(one));
            ensure(got == want, || format!("pair {i}: scorer {got:?}, oracle {want:?}"))?;
        }
        let (got, want) = (scorer_f1(&pairs, &schema)?, oracle_f1(&pairs));
        ensure(got == want, || {
            format!("micro over all pairs: scorer {got:?}, oracle {want:?}")
        })?;
        Ok(format!(
            "1000 pairs agree; micro F1 NER {:.4} RE {:.4} RE_w/NEC {:.4}",
            got[0], got[1], got[2]
        ))
    })
}

fn psa_properties() -> Check {
    let schema = Schema::scierc();
    for (i, (a, b)) in random_pairs(23, 500, &schema).into_iter().enumerate() {
        let (a, b) = (dataset_of(vec![a], &schema), dataset_of(vec![b], &schema));
        for c in [AgreementCriterion::SpanAndType, AgreementCriterion::SpanOnly] {
            let ab = positive_specific_agreement(&a, &b, c).map_err(|e| e.to_string())?.psa;
            let ba = positive_specific_agreement(&b, &a, c).map_err(|e| e.to_string())?.psa;
            ensure(ab.to_bits() == ba.to_bits(), || format!("pair {i} {c:?}: {ab} vs {ba}"))?;
            let aa = positive_specific_agreement(&a, &a, c).map_err(|e| e.to_string())?.psa;
            ensure(aa == 1.0, || format!("pair {i} {c:?}: PSA(A,A) = {aa}"))?;
        }
    }
    let v = psa_from_counts(2, 1, 1);
    ensure((v - 2.0 / 3.0).abs() < 1e-12, || format!("a=2,b=1,c=1 gives {v}"))?;
    Ok(format!("symmetric on 500 pairs, PSA(A,A) = 1, a=2,b=1,c=1 -> {v:.12}"))
}

fn round_trips() -> Check {
    let schema = Schema::scierc();
    let mut rng = ChaCha8Rng::seed_from_u64(37);
    for i in 0..200 {
        let sentences = (0..rng.random_range(0..8))
            .map(|j| {
                let mut s = random_sentence(&mut rng, format!("W{i}_{}#{j}", j / 3), &schema);
                s.source = if rng.random_bool(0.5) {
                    Source::Gold
                } else {
                    Source::Llm
                };
                s
            })
            .collect();
        let ds = dataset_of(sentences, &schema);

        let bytes = write_scierc_json(&ds);
        let (back, _) = read_scierc_json(&bytes, &schema, Source::Gold).map_err(|e| e.to_string())?;
        ensure(write_scierc_json(&back) == bytes, || {
            format!("dataset {i}: JSON bytes differ")
        })?;
        let same = back.len() == ds.len()
            && back.sentences.iter().zip(&ds.sentences).all(|(a, b)| {
                a.tokens == b.tokens && a.entities == b.entities && a.relations == b.relations && a.orig_id == b.orig_id
            });
        ensure(same, || format!("dataset {i}: JSON read differs"))?;

        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        write_brat(&ds, dir.path()).map_err(|e| e.to_string())?;
        let (back, _) =
            read_brat(dir.path(), &schema, BratTokenization::Whitespace, Source::Gold).map_err(|e| e.to_string())?;
        ensure(back == ds, || format!("dataset {i}: Brat read differs"))?;
    }
    Ok("200 random datasets".into())
}

fn failures(r: &GroundingReport) -> usize {
    r.ungrounded_entities
        + r.out_of_schema_entity_labels
        + r.out_of_schema_relation_labels
        + r.relations_dropped_missing_arg
        + r.duplicate_relations
        + r.malformed_line_count
        + r.expanded_spans
}

fn exemplar_round_trip() -> Check {
    let path = test_file()?;
    let schema = Schema::scierc();
    let bytes = fs::read(&path).map_err(|e| e.to_string())?;
    let (gold, _) = read_scierc_json(&bytes, &schema, Source::Gold).map_err(|e| e.to_string())?;
    let mut total = GroundingReport::default();
    for s in &gold.sentences {
        let block = serialize_exemplar(s).map_err(|e| format!("{}: {e}", s.orig_id))?;
        let sets = parse_response(&block);
        ensure(sets.len() == 1, || {
            format!("{}: {} blocks parsed", s.orig_id, sets.len())
        })?;
        let (entities, relations) = raw_tuples(s);
        ensure(sets[0].entities == entities && sets[0].relations == relations, || {
            format!("{}: parsed tuples differ", s.orig_id)
        })?;
        let (grounded, report) = ground_annotations(&s.tokenized(), &sets[0], &schema, &GroundingOptions::default());
        ensure(
            grounded.entities == s.entities && grounded.relations == s.relations,
            || format!("{}: grounding differs from gold", s.orig_id),
        )?;
        total += &report;
    }
    ensure(failures(&total) == 0, || format!("failure counts {total:?}"))?;
    Ok(format!(
        "{} sentences, {} entities, {} relations reproduced",
        gold.len(),
        total.grounded_entities,
        total.kept_relations
    ))
}

fn grounding_failure_detection() -> Check {
    let schema = Schema::scierc();
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let mut corpus = Vec::new();
    for i in 0..400 {
        let mut words = HashSet::new();
        let n = rng.random_range(4..16);
        while words.len() < n {
            let w: String = (0..5).map(|_| rng.random_range(b'a'..=b'z') as char).collect();
            words.insert(w);
        }
        let mut tokens: Vec<String> = words.into_iter().collect();
        tokens.sort();
        let mut entities = Vec::new();
        let mut pos = rng.random_range(0..2);
        while pos < n {
            let len = rng.random_range(1..3).min(n - pos);
            entities.push(EntityMention {
                entity_type: ENTITY_TYPES.choose(&mut rng).unwrap().to_string(),
                start: pos,
                end: pos + len,
            });
            pos += len + rng.random_range(0..3);
        }
        let m = entities.len();
        let relations = (0..if m < 2 { 0 } else { rng.random_range(0..4) })
            .map(|_| RelationMention {
                relation_type: RELATION_TYPES.choose(&mut rng).unwrap().to_string(),
                head: rng.random_range(0..m),
                tail: rng.random_range(0..m),
            })
            .collect();
        let mut s = AnnotatedSentence {
            tokens,
            entities,
            relations,
            orig_id: format!("G{i}#0"),
            source: Source::Gold,
        };
        s.canonicalize(&schema);
        corpus.push(s);
    }

    let slots: Vec<(usize, usize)> = corpus
        .iter()
        .enumerate()
        .flat_map(|(i, s)| (0..s.entities.len()).map(move |j| (i, j)))
        .collect();
    let injected_count = (slots.len() as f64 * 0.02).round() as usize;
    let injected: HashSet<(usize, usize)> = slots.choose_multiple(&mut rng, injected_count).copied().collect();

    let mut total = GroundingReport::default();
    let mut lost_relations = 0;
    for (i, s) in corpus.iter().enumerate() {
        let (mut entities, relations) = raw_tuples(s);
        for (j, e) in entities.iter_mut().enumerate() {
            if injected.contains(&(i, j)) {
                // Digits never occur in the lowercase sentence text.
                e.surface = format!("rephrased term {i}.{j}");
            }
        }
        lost_relations += s
            .relations
            .iter()
            .filter(|r| injected.contains(&(i, r.head)) || injected.contains(&(i, r.tail)))
            .count();
        let raw = reanno_core::grounding::RawAnnotationSet {
            sentence_index: Some(0),
            entities: entities.clone(),
            relations,
            malformed_lines: Vec::new(),
        };
        let (grounded, report) = ground_annotations(&s.tokenized(), &raw, &schema, &GroundingOptions::default());
        let survivors: Vec<_> = entities
            .iter()
            .enumerate()
            .filter(|(j, _)| !injected.contains(&(i, *j)))
            .map(|(_, e)| e)
            .collect();
        ensure(grounded.entities.len() == survivors.len(), || {
            format!("{}: survivor count", s.orig_id)
        })?;
        for (g, raw) in grounded.entities.iter().zip(&survivors) {
            let slice = grounded.tokens[g.start..g.end].join(" ");
            ensure(slice == raw.surface && g.entity_type == raw.label, || {
                format!("{}: `{slice}` grounded for `{}`", s.orig_id, raw.surface)
            })?;
        }
        total += &report;
    }
    ensure(total.ungrounded_entities == injected_count, || {
        format!("ungrounded {} vs injected {injected_count}", total.ungrounded_entities)
    })?;
    ensure(total.relations_dropped_missing_arg == lost_relations, || {
        format!(
            "dropped relations {} vs expected {lost_relations}",
            total.relations_dropped_missing_arg
        )
    })?;
    Ok(format!(
        "{injected_count} of {} entities injected, {} ungrounded, all survivors match their slice",
        slots.len(),
        total.ungrounded_entities
    ))
}

fn annotate_args(sentences: &std::path::Path, exemplars: &std::path::Path) -> Vec<String> {
    [
        "annotate",
        p(sentences),
        "--exemplars",
        p(exemplars),
        "--k",
        "3",
        "--seed",
        "5",
    ]
    .map(String::from)
    .to_vec()
}

fn pipeline_determinism(work: &std::path::Path) -> Check {
    let sentences = write(work, "sentences.tsv", &presplit_corpus(50));
    let exemplars = write(work, "exemplars.json", exemplar_json());
    let mock = MockLlm::start();
    let live = work.join("live");
    let o = reanno()
        .args(annotate_args(&sentences, &exemplars))
        .args(["--endpoint", &mock.url(), "--out", p(&live)])
        .env("OPENAI_API_KEY", "test-key")
        .output()
        .map_err(|e| e.to_string())?;
    ensure(o.status.success(), || format!("live run: {}", stderr(&o)))?;
    ensure(mock.hits() == 5, || format!("live run sent {} requests", mock.hits()))?;
    let store = live.join("replay.jsonl");
    let reference = fs::read(live.join("dataset.json")).map_err(|e| e.to_string())?;
    let recorded = fs::read(&store).map_err(|e| e.to_string())?;

    let mut runs = 0;
    for mif in ["1", "8"] {
        for rep in 0..3 {
            let out = work.join(format!("replay-{mif}-{rep}"));
            let o = reanno()
                .args(annotate_args(&sentences, &exemplars))
                .args([
                    "--backend",
                    "replay",
                    "--replay-store",
                    p(&store),
                    "--max-in-flight",
                    mif,
                    "--out",
                    p(&out),
                ])
                .env_remove("OPENAI_API_KEY")
                .output()
                .map_err(|e| e.to_string())?;
            ensure(o.status.success(), || {
                format!("replay max_in_flight={mif}: {}", stderr(&o))
            })?;
            let got = fs::read(out.join("dataset.json")).map_err(|e| e.to_string())?;
            ensure(got == reference, || {
                format!("replay max_in_flight={mif} run {rep} differs")
            })?;
            runs += 1;
        }
    }
    ensure(mock.hits() == 5, || "replay runs reached the endpoint".to_string())?;
    ensure(fs::read(&store).map_err(|e| e.to_string())? == recorded, || {
        "replay runs modified the store".to_string()
    })?;
    let entities = serde_json::from_slice::<Value>(&reference)
        .map_err(|e| e.to_string())?
        .as_array()
        .map_or(0, |a| {
            a.iter()
                .map(|s| s["entities"].as_array().map_or(0, Vec::len))
                .sum::<usize>()
        });
    Ok(format!(
        "{runs} replays byte-identical to the recorded run (50 sentences, {entities} entities)"
    ))
}

fn merge_line(out: &str, key: &str) -> Result<usize, String> {
    field(out, key)
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| format!("no `{key}` in merge output"))
}

fn merge_bookkeeping(work: &std::path::Path) -> Check {
    let generated = work.join("live/dataset.json");
    ensure(generated.is_file(), || {
        "no generated dataset (pipeline run failed)".into()
    })?;
    let a: Vec<Value> =
        serde_json::from_str(&fs::read_to_string(&generated).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let mut b: Vec<Value> = serde_json::from_str(exemplar_json()).map_err(|e| e.to_string())?;
    for (i, s) in a.iter().take(3).enumerate() {
        let mut s = s.clone();
        s["orig_id"] = Value::from(format!("copy#{i}"));
        b.push(s);
    }
    let b_path = write(work, "scierc.json", &Value::from(b.clone()).to_string());

    let merged = work.join("merged.json");
    let o = run(&["merge", p(&generated), p(&b_path), "--out", p(&merged)]);
    ensure(o.status.success(), || stderr(&o))?;
    let out = stdout(&o);
    let (dups, size) = (merge_line(&out, "duplicates")?, merge_line(&out, "output")?);
    ensure(size == a.len() + b.len() - dups, || {
        format!("output {size} vs |A| {} + |B| {} - duplicates {dups}", a.len(), b.len())
    })?;
    ensure(dups == 3, || format!("{dups} duplicates, 3 planted"))?;
    let st = run(&["stats", p(&merged), "--json"]);
    let st: Value = serde_json::from_str(&stdout(&st)).map_err(|e| e.to_string())?;
    ensure(st["sentences"].as_u64() == Some(size as u64), || {
        "merged file size differs".into()
    })?;

    let self_merged = work.join("self.json");
    let o = run(&["merge", p(&generated), p(&generated), "--out", p(&self_merged)]);
    ensure(o.status.success(), || stderr(&o))?;
    ensure(merge_line(&stdout(&o), "duplicates")? == a.len(), || {
        "self-merge duplicates".into()
    })?;
    let before = stdout(&run(&["stats", p(&generated), "--json"]));
    let after = stdout(&run(&["stats", p(&self_merged), "--json"]));
    ensure(!before.is_empty() && before == after, || {
        format!("stats differ:\n{before}\n{after}")
    })?;
    Ok(format!(
        "{} + {} - {dups} = {size}; self-merge keeps the original stats",
        a.len(),
        b.len()
    ))
}

fn main() {
    let work = tempfile::tempdir().expect("temp dir");
    let work_path = work.path().to_path_buf();
    let w2 = work_path.clone();
    let checks: Vec<Criterion> = vec![
        ("dataset fidelity", Box::new(dataset_fidelity)),
        ("scorer identity", Box::new(scorer_identity)),
        ("scorer oracle equivalence", Box::new(scorer_oracle_equivalence)),
        ("PSA properties", Box::new(psa_properties)),
        ("round trips", Box::new(round_trips)),
        ("exemplar/parser round trip", Box::new(exemplar_round_trip)),
        ("grounding failure detection", Box::new(grounding_failure_detection)),
        (
            "pipeline determinism",
            Box::new(move || pipeline_determinism(&work_path)),
        ),
        ("merge bookkeeping", Box::new(move || merge_bookkeeping(&w2))),
    ];
    let mut failed = 0;
    for (name, check) in &checks {
        let outcome = panic::catch_unwind(AssertUnwindSafe(check))
            .unwrap_or_else(|e| Err(format!("panicked: {:?}", e.downcast_ref::<String>())));
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name}: {why}");
            }
        }
    }
    println!("{} passed, {failed} failed", checks.len() - failed);
    drop(work);
    if failed > 0 {
        std::process::exit(1);
    }
}
