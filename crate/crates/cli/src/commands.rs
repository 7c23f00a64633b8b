use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use reanno_core::corpus::{self, SentenceSplitter, TokenizedSentence};
use reanno_core::datasets::{self, AnnotatedSentence, BratTokenization, Dataset, Source};
use reanno_core::evaluation::{self, AgreementCriterion};
use reanno_core::grounding::GroundingOptions;
use reanno_core::llm_gateway::{ChatBackend, DecodingParams, LiveBackend, ReplayBackend, ReplayStore};
use reanno_core::pipeline::{self, AnnotateOptions};
use reanno_core::promptgen::{self, PromptConfig, PromptTemplate};
use reanno_core::schema::{self, Schema};
use serde::Serialize;

use crate::failure::{self, usage};
use crate::manifest::{self, absolute, BackendMode, Outputs, RunManifest};
use crate::{
    AnnotateArgs, Cli, Command, ConvertArgs, Format, IaaArgs, IngestArgs, MergeArgs, PromptArgs, PromptOptions,
    RerunArgs, ScoreArgs, StatsArgs, Tokenization,
};

pub fn run(cli: Cli) -> Result<u8> {
    let schema = match &cli.schema {
        Some(p) => schema::load_schema(p)?,
        None => Schema::scierc(),
    };
    match cli.command {
        Command::Ingest(a) => ingest(a),
        Command::Annotate(a) => annotate(a, cli.schema.as_deref(), &schema),
        Command::Rerun(a) => rerun(a),
        Command::Prompt(a) => prompt(a, &schema),
        Command::Merge(a) => merge(a, &schema),
        Command::Stats(a) => stats(a, &schema),
        Command::Score(a) => score(a, &schema),
        Command::Iaa(a) => iaa(a, &schema),
        Command::Convert(a) => convert(a, &schema),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    datasets::write_atomic(path, &bytes).with_context(|| format!("writing {}", path.display()))
}

/// Absolute form of a path that may not exist yet; its parent is created.
fn absolute_new(path: &Path) -> Result<PathBuf> {
    if path.exists() {
        return absolute(path);
    }
    let Some(name) = path.file_name() else {
        return Err(usage(format!("{} is not a file path", path.display())));
    };
    let parent = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    Ok(absolute(parent)?.join(name))
}

fn load_dataset(path: &Path, schema: &Schema, tokenization: BratTokenization) -> Result<Dataset> {
    if path.is_dir() {
        let (ds, report) = datasets::read_brat(path, schema, tokenization, Source::Gold)
            .with_context(|| format!("reading Brat directory {}", path.display()))?;
        if report.expanded_spans > 0 {
            eprintln!(
                "{}: {} span(s) widened to token boundaries",
                path.display(),
                report.expanded_spans
            );
        }
        Ok(ds)
    } else {
        let (ds, report) = datasets::load_scierc_json(path, schema, Source::Gold)
            .with_context(|| format!("reading {}", path.display()))?;
        if report.duplicate_entities + report.duplicate_relations > 0 {
            eprintln!(
                "{}: collapsed {} duplicate entities and {} duplicate relations",
                path.display(),
                report.duplicate_entities,
                report.duplicate_relations
            );
        }
        Ok(ds)
    }
}

/// Reads a sentence store (JSON lines) or pre-split `doc_id<TAB>text` lines.
fn load_sentences(path: &Path) -> Result<Vec<TokenizedSentence>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    if text.trim_start().starts_with('{') {
        text.lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                serde_json::from_str(l).with_context(|| format!("{}:{}: bad sentence record", path.display(), i + 1))
            })
            .collect()
    } else {
        Ok(corpus::read_presplit(text.as_bytes())?)
    }
}

fn ingest(a: IngestArgs) -> Result<u8> {
    let reader = BufReader::new(File::open(&a.input).with_context(|| format!("opening {}", a.input.display()))?);
    let (sentences, stats) = if a.presplit {
        let sentences = corpus::read_presplit(reader)?;
        let stats = corpus::IngestStats {
            sentences: sentences.len(),
            tokens: sentences.iter().map(|s| s.tokens.len()).sum(),
            ..Default::default()
        };
        (sentences, stats)
    } else {
        let splitter = if a.abbreviations.is_empty() {
            SentenceSplitter::default()
        } else {
            let mut list: Vec<String> = corpus::DEFAULT_ABBREVIATIONS.iter().map(|s| s.to_string()).collect();
            list.extend(a.abbreviations.iter().cloned());
            SentenceSplitter::with_abbreviations(list)
        };
        let tags = a.tags.clone();
        corpus::ingest(reader, &splitter, |r| {
            tags.is_empty() || r.source_tags.iter().any(|t| tags.contains(t))
        })?
    };
    let mut out = Vec::new();
    for s in &sentences {
        serde_json::to_writer(&mut out, s)?;
        out.push(b'\n');
    }
    datasets::write_atomic(&a.out, &out).with_context(|| format!("writing {}", a.out.display()))?;
    println!("documents\t{}", stats.documents);
    println!("documents_filtered\t{}", stats.documents_filtered);
    println!("documents_without_abstract\t{}", stats.documents_without_abstract);
    println!("missing_positions\t{}", stats.missing_positions);
    println!("sentences\t{}", stats.sentences);
    println!("tokens\t{}", stats.tokens);
    Ok(failure::OK)
}

struct PromptInputs {
    template: PromptTemplate,
    config: PromptConfig,
    sentences: Vec<TokenizedSentence>,
    exemplars: Vec<AnnotatedSentence>,
}

fn prompt_inputs(o: &PromptOptions, schema: &Schema) -> Result<PromptInputs> {
    let template = match &o.template {
        Some(p) => PromptTemplate::from_file(p).with_context(|| format!("loading template {}", p.display()))?,
        None => PromptTemplate::default(),
    };
    let config = PromptConfig {
        k_examples: o.k,
        include_descriptions: o.descriptions,
        batch_size: o.batch_size,
        max_context_tokens: o.max_context_tokens,
    };
    config.validate()?;

    let exemplars = match (&o.exemplars, o.k) {
        (_, 0) => Vec::new(),
        (None, k) => return Err(usage(format!("--k {k} needs an --exemplars file"))),
        (Some(p), k) => {
            let pool = load_dataset(p, schema, BratTokenization::Whitespace)?;
            if pool.len() < k {
                return Err(promptgen::PromptError::Arity {
                    expected: k,
                    got: pool.len(),
                })
                .with_context(|| format!("{} has too few annotated sentences", p.display()));
            }
            corpus::sample_sentences(&pool.sentences, k, o.seed)?
        }
    };

    let mut sentences = load_sentences(&o.sentences)?;
    if let Some(n) = o.sample {
        sentences = corpus::sample_sentences(&sentences, n, o.seed)?;
    }
    Ok(PromptInputs {
        template,
        config,
        sentences,
        exemplars,
    })
}

fn prompt(a: PromptArgs, schema: &Schema) -> Result<u8> {
    let inputs = prompt_inputs(&a.prompt, schema)?;
    let plain: Vec<_> = inputs.sentences.iter().map(|s| s.sentence.clone()).collect();
    let bundle = promptgen::build_prompt(schema, &inputs.exemplars, &plain, &inputs.config, &inputs.template)?;
    match &a.out {
        Some(path) => write_json(path, &bundle)?,
        None => {
            let mut out = std::io::stdout().lock();
            writeln!(out, "=== system ===\n{}", bundle.system_message)?;
            writeln!(out, "=== assistant ===\n{}", bundle.assistant_message)?;
            for (i, b) in bundle.user_batches.iter().enumerate() {
                writeln!(out, "=== user batch {i} ===\n{}", b.text)?;
            }
        }
    }
    Ok(failure::OK)
}

fn annotate(a: AnnotateArgs, schema_path: Option<&Path>, schema: &Schema) -> Result<u8> {
    let o = &a.prompt;
    let inputs = prompt_inputs(o, schema)?;
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let replay_store = a
        .replay_store
        .clone()
        .unwrap_or_else(|| a.out.join(manifest::REPLAY_FILE));
    if a.backend == BackendMode::Replay && !replay_store.exists() {
        return Err(usage(format!("replay store {} does not exist", replay_store.display())));
    }
    let manifest = RunManifest {
        toolkit_version: env!("CARGO_PKG_VERSION").to_string(),
        schema: schema_path.map(absolute).transpose()?,
        schema_fingerprint: schema.fingerprint(),
        template: o.template.as_deref().map(absolute).transpose()?,
        prompt: inputs.config,
        decoding: DecodingParams {
            model_name: a.model.clone(),
            ..Default::default()
        },
        backend: a.backend,
        endpoint: a.endpoint.clone(),
        replay_store: absolute_new(&replay_store)?,
        max_in_flight: a.max_in_flight,
        grounding: GroundingOptions {
            fuzzy: a.fuzzy,
            ..Default::default()
        },
        corpus: absolute(&o.sentences)?,
        sample: o.sample,
        seed: o.seed,
        exemplars: o.exemplars.as_deref().filter(|_| o.k > 0).map(absolute).transpose()?,
        exemplar_ids: inputs.exemplars.iter().map(|s| s.orig_id.clone()).collect(),
        input_sentences: inputs.sentences.len(),
        outputs: Outputs::default(),
    };
    execute(&manifest, schema, inputs, &a.out, a.allow_partial)
}

fn rerun(a: RerunArgs) -> Result<u8> {
    let mut m = RunManifest::load(&a.manifest)?;
    let schema = match &m.schema {
        Some(p) => schema::load_schema(p)?,
        None => Schema::scierc(),
    };
    if schema.fingerprint() != m.schema_fingerprint {
        return Err(usage(
            "schema fingerprint differs from the one recorded in the manifest",
        ));
    }
    m.backend = BackendMode::Replay;
    if let Some(n) = a.max_in_flight {
        m.max_in_flight = n;
    }
    let out = match a.out {
        Some(dir) => dir,
        None => a
            .manifest
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from(".")),
    };
    let options = PromptOptions {
        sentences: m.corpus.clone(),
        exemplars: m.exemplars.clone(),
        k: m.prompt.k_examples,
        descriptions: m.prompt.include_descriptions,
        batch_size: m.prompt.batch_size,
        max_context_tokens: m.prompt.max_context_tokens,
        template: m.template.clone(),
        sample: m.sample,
        seed: m.seed,
    };
    let inputs = prompt_inputs(&options, &schema)?;
    let ids: Vec<String> = inputs.exemplars.iter().map(|s| s.orig_id.clone()).collect();
    if ids != m.exemplar_ids {
        bail!(
            "exemplar selection differs from the manifest: {ids:?} vs {:?}",
            m.exemplar_ids
        );
    }
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    execute(&m, &schema, inputs, &out, a.allow_partial)
}

fn execute(m: &RunManifest, schema: &Schema, inputs: PromptInputs, out: &Path, allow_partial: bool) -> Result<u8> {
    let backend: Box<dyn ChatBackend> = match m.backend {
        BackendMode::Live => {
            let live = LiveBackend::from_env(m.endpoint.clone())?;
            let store = Arc::new(ReplayStore::open(&m.replay_store)?);
            Box::new(live.recording_to(store))
        }
        BackendMode::Replay => Box::new(ReplayBackend::new(Arc::new(ReplayStore::open_existing(
            &m.replay_store,
        )?))),
    };
    let opts = AnnotateOptions {
        schema,
        exemplars: &inputs.exemplars,
        config: inputs.config,
        template: &inputs.template,
        params: m.decoding.clone(),
        max_in_flight: m.max_in_flight,
        grounding: m.grounding,
    };
    let (dataset, report) = pipeline::annotate(&inputs.sentences, backend.as_ref(), &opts)?;

    datasets::save_scierc_json(out.join(&m.outputs.dataset), &dataset)?;
    write_json(&out.join(&m.outputs.grounding_report), &report.grounding)?;
    write_json(&out.join(&m.outputs.pipeline_report), &report)?;
    write_json(&out.join(manifest::MANIFEST_FILE), m)?;

    let g = &report.grounding;
    println!("sentences\t{}", dataset.len());
    println!("batches\t{}", report.batches);
    println!("failed_batches\t{}", report.failed_batches.len());
    println!(
        "sentences_missing_from_response\t{}",
        report.sentences_missing_from_response.len()
    );
    println!("misaligned_blocks\t{}", report.misaligned_blocks);
    println!(
        "entities\t{} grounded / {} total",
        g.grounded_entities, g.total_entities
    );
    println!("ungrounded_entities\t{}", g.ungrounded_entities);
    println!("out_of_schema_entity_labels\t{}", g.out_of_schema_entity_labels);
    println!("relations\t{} kept / {} total", g.kept_relations, g.total_relations);
    println!("out_of_schema_relation_labels\t{}", g.out_of_schema_relation_labels);
    println!("relations_dropped_missing_arg\t{}", g.relations_dropped_missing_arg);
    println!("malformed_lines\t{}", g.malformed_line_count);

    if report.failed_batches.is_empty() || allow_partial {
        return Ok(failure::OK);
    }
    for f in &report.failed_batches {
        eprintln!("batch {} (sentences {:?}) failed: {}", f.batch, f.indices, f.error);
    }
    Ok(if report.failed_batches.iter().all(|f| f.transport) {
        failure::TRANSPORT
    } else {
        failure::DATA
    })
}

fn merge(a: MergeArgs, schema: &Schema) -> Result<u8> {
    let inputs = a
        .inputs
        .iter()
        .map(|p| load_dataset(p, schema, BratTokenization::Whitespace))
        .collect::<Result<Vec<_>>>()?;
    let (merged, report) = datasets::merge(&inputs, schema)?;
    datasets::save_scierc_json(&a.out, &merged)?;
    for ((path, size), kept) in a.inputs.iter().zip(&report.input_sizes).zip(&report.kept) {
        println!("{}\t{size} sentences\t{kept} kept", path.display());
    }
    println!("duplicates\t{}", report.duplicates);
    println!("output\t{}", report.output_size);
    Ok(failure::OK)
}

fn print_stats(st: &datasets::DatasetStats) {
    println!("sentences\t{}", st.sentences);
    println!("tokens\t{}", st.tokens);
    println!("entities\t{}", st.entities);
    println!("relations\t{}", st.relations);
    for (label, n) in &st.entity_types {
        println!("entity:{label}\t{n}");
    }
    for (label, n) in &st.relation_types {
        println!("relation:{label}\t{n}");
    }
}

fn stats(a: StatsArgs, schema: &Schema) -> Result<u8> {
    let ds = load_dataset(&a.dataset, schema, BratTokenization::Whitespace)?;
    let st = datasets::stats(&ds);
    if a.json {
        println!("{}", serde_json::to_string_pretty(&st)?);
    } else {
        print_stats(&st);
    }
    if let Some(p) = &a.out {
        write_json(p, &st)?;
    }
    Ok(failure::OK)
}

fn score(a: ScoreArgs, schema: &Schema) -> Result<u8> {
    let gold = load_dataset(&a.gold, schema, BratTokenization::Whitespace)?;
    let pred = load_dataset(&a.pred, schema, BratTokenization::Whitespace)?;
    let report = evaluation::evaluate(&gold, &pred, schema)?;
    print!("{report}");
    if let Some(p) = &a.out {
        write_json(p, &report)?;
    }
    Ok(failure::OK)
}

fn iaa(a: IaaArgs, schema: &Schema) -> Result<u8> {
    let x = load_dataset(&a.a, schema, BratTokenization::Whitespace)?;
    let y = load_dataset(&a.b, schema, BratTokenization::Whitespace)?;
    let criterion = if a.span_only {
        AgreementCriterion::SpanOnly
    } else {
        AgreementCriterion::SpanAndType
    };
    let agreement = evaluation::positive_specific_agreement(&x, &y, criterion)?;
    println!("matched\t{}", agreement.matched);
    println!("only_a\t{}", agreement.only_a);
    println!("only_b\t{}", agreement.only_b);
    println!("psa\t{:.4}", agreement.psa);
    if let Some(p) = &a.out {
        write_json(p, &agreement)?;
    }
    Ok(failure::OK)
}

fn convert(a: ConvertArgs, schema: &Schema) -> Result<u8> {
    let tokenization = match a.tokenization {
        Tokenization::Whitespace => BratTokenization::Whitespace,
        Tokenization::Rules => BratTokenization::Rules,
    };
    let ds = load_dataset(&a.input, schema, tokenization)?;
    match a.to {
        Format::Scierc => datasets::save_scierc_json(&a.out, &ds)?,
        Format::Brat => datasets::write_brat(&ds, &a.out)?,
    }
    println!("sentences\t{}", ds.len());
    Ok(failure::OK)
}
