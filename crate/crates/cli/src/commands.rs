use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context};
use serde::Serialize;

use spanlink_core::dataset::{read_records, validate_records, write_records};
use spanlink_core::engine::{extract_corpus, TypeOrder};
use spanlink_core::query::TokenRole;
use spanlink_core::synthetic::{generate, SyntheticConfig};
use spanlink_core::training::{train_observed, EvalSet};
use spanlink_core::*;

use crate::args::{required, EvalArgs, GenArgs, InspectArgs, PredictArgs, TrainArgs};
use crate::Usage;

fn output(path: Option<&Path>) -> anyhow::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => Box::new(BufWriter::new(std::io::stdout().lock())),
    })
}

fn load_schema(path: &Path) -> anyhow::Result<Schema> {
    Schema::from_path(path).with_context(|| format!("schema {}", path.display()))
}

fn load_records(path: &Path) -> anyhow::Result<Vec<Record>> {
    read_records(path).with_context(|| format!("dataset {}", path.display()))
}

/// Tokenizer whose vocabulary covers the texts, the schema's type names and
/// the prefix punctuation.
fn build_tokenizer<'a>(texts: impl IntoIterator<Item = &'a str>, schema: &Schema) -> Tokenizer {
    let names: Vec<String> = schema.enumerate_paths().into_iter().filter_map(|p| p.0.last().cloned()).collect();
    let mut all: Vec<&str> = texts.into_iter().collect();
    all.extend(names.iter().map(String::as_str));
    all.push(": ,");
    Tokenizer::from_texts(all)
}

pub fn train(args: TrainArgs) -> anyhow::Result<()> {
    let args = args.resolve()?;
    let schema = load_schema(required(&args.schema, "schema")?)?;
    let train_path = required(&args.train, "train")?;
    let checkpoint_path = required(&args.checkpoint, "checkpoint")?;
    let docs = load_records(train_path)?;
    if docs.is_empty() {
        bail!(Error::Data(format!("training set {} has no records", train_path.display())));
    }
    validate_records(&docs, &schema).with_context(|| format!("dataset {}", train_path.display()))?;

    let resumed = args
        .resume
        .as_ref()
        .map(|p| Checkpoint::load(p).with_context(|| format!("checkpoint {}", p.display())))
        .transpose()?;
    if let Some(ck) = &resumed {
        ck.check_schema(&schema)?;
    }
    let (tokenizer, limits, order) = match &resumed {
        Some(ck) => (ck.tokenizer.clone(), args.limits(ck.limits), args.type_order.unwrap_or(ck.type_order)),
        None => (
            build_tokenizer(docs.iter().map(|d| d.text.as_str()), &schema),
            args.limits(Limits::default()),
            args.type_order.unwrap_or_default(),
        ),
    };
    limits.validate().map_err(|e| Usage(e.to_string()))?;
    let extraction = ExtractionConfig { limits, type_order: order, ..Default::default() };
    let cfg = args.optimizer();
    cfg.validate().map_err(|e| Usage(e.to_string()))?;

    let instances = build_training_set(&docs, &schema, &tokenizer, &extraction)
        .with_context(|| format!("dataset {}", train_path.display()))?;
    let (mut model, state) = match resumed {
        Some(ck) => (ck.model, ck.state),
        None => {
            let m = Model::new(
                tokenizer.vocab_size(),
                args.dim.unwrap_or(64),
                args.layers.unwrap_or(2),
                limits.max_total,
                cfg.seed,
            );
            let s = TrainState::fresh(&m);
            (m, s)
        }
    };
    if let Some(d) = args.delta {
        model.delta = d;
    }
    let eval = EvalSet {
        docs: &docs,
        schema: &schema,
        tokenizer: &tokenizer,
        extraction,
        task: args.eval_task.unwrap_or(Task::Tuple),
    };
    let eval = (!args.skip_eval.unwrap_or(false)).then_some(&eval);

    let mut log = match &args.log {
        Some(p) => Some(
            File::options().create(true).append(true).open(p).with_context(|| format!("opening log {}", p.display()))?,
        ),
        None => None,
    };
    let mut log_error = None;
    let stdout = std::io::stdout();
    let outcome = train_observed(model, &instances, eval, &cfg, state, &mut |record| {
        let line = serde_json::to_string(record).expect("log records serialize");
        println!("{line}");
        let _ = stdout.lock().flush();
        if let Some(f) = log.as_mut() {
            if let Err(e) = writeln!(f, "{line}") {
                log_error.get_or_insert(e);
            }
        }
    })?;
    if let Some(e) = log_error {
        return Err(e).context("writing training log");
    }
    Checkpoint::new(&schema, tokenizer, limits, order, outcome.model, outcome.state)
        .save(checkpoint_path)
        .with_context(|| format!("writing checkpoint {}", checkpoint_path.display()))?;
    if let Some(e) = outcome.diverged {
        return Err(anyhow::Error::new(e)
            .context(format!("training diverged; the last finished epoch was saved to {}", checkpoint_path.display())));
    }
    Ok(())
}

pub fn predict(args: PredictArgs) -> anyhow::Result<()> {
    let docs = load_records(&args.input)?;
    let texts: Vec<&str> = docs.iter().map(|d| d.text.as_str()).collect();
    let mut results = Vec::with_capacity(docs.len());
    if args.gold_oracle {
        let schema = load_schema(required(&args.schema, "schema")?)?;
        validate_records(&docs, &schema).with_context(|| format!("dataset {}", args.input.display()))?;
        let tok = build_tokenizer(texts.iter().copied(), &schema);
        let cfg = ExtractionConfig {
            limits: Limits {
                max_total: args.max_total.unwrap_or(Limits::default().max_total),
                max_esi: args.max_esi.unwrap_or(Limits::default().max_esi),
            },
            type_order: args.type_order.unwrap_or_default(),
            packing: args.packing,
        };
        cfg.limits.validate().map_err(|e| Usage(e.to_string()))?;
        for (i, d) in docs.iter().enumerate() {
            let r = extract(&d.text, &schema, &tok, &GoldScorer { tuples: &d.tuples }, &cfg)
                .with_context(|| format!("record {}", i + 1))?;
            results.push(r);
        }
    } else {
        let path = required(&args.checkpoint, "checkpoint")?;
        let ck = Checkpoint::load(path).with_context(|| format!("checkpoint {}", path.display()))?;
        let schema = match &args.schema {
            Some(p) => {
                let s = load_schema(p)?;
                ck.check_schema(&s)?;
                s
            }
            None => ck.schema()?,
        };
        let cfg = ExtractionConfig {
            limits: Limits {
                max_total: args.max_total.unwrap_or(ck.limits.max_total),
                max_esi: args.max_esi.unwrap_or(ck.limits.max_esi),
            },
            type_order: args.type_order.unwrap_or(ck.type_order),
            packing: args.packing,
        };
        cfg.limits.validate().map_err(|e| Usage(e.to_string()))?;
        let mut scorer = ck.model.scorer();
        if let Some(d) = args.delta {
            scorer.delta = d;
        }
        results = extract_corpus(&texts, &schema, &ck.tokenizer, &scorer, &cfg, args.workers)?;
    }
    let records: Vec<Record> = docs
        .iter()
        .zip(results)
        .map(|(d, r)| Record { text: d.text.clone(), tuples: r.tuples.into_iter().collect() })
        .collect();
    let mut out = output(args.output.as_deref())?;
    write_records(&mut out, &records)?;
    out.flush()?;
    Ok(())
}

pub fn eval(args: EvalArgs) -> anyhow::Result<()> {
    let pred = load_records(&args.pred)?;
    let gold = load_records(&args.gold)?;
    let pred: Vec<&[ExtractionTuple]> = pred.iter().map(|r| r.tuples.as_slice()).collect();
    let gold: Vec<&[ExtractionTuple]> = gold.iter().map(|r| r.tuples.as_slice()).collect();
    for task in args.task {
        let report = evaluate(task, &pred, &gold)?;
        println!("{}", serde_json::to_string(&TaskReport::new(task, report))?);
    }
    Ok(())
}

/// Parses `type: span,type: span`. A comma only separates items when the
/// next piece contains `": "`, so spans may contain commas.
fn parse_prefix(s: &str) -> anyhow::Result<Vec<(String, String)>> {
    let mut items: Vec<String> = Vec::new();
    for piece in s.split(',') {
        match items.last_mut() {
            Some(last) if !piece.contains(": ") => {
                last.push(',');
                last.push_str(piece);
            }
            _ => items.push(piece.to_string()),
        }
    }
    items
        .into_iter()
        .map(|item| {
            let (t, span) = item
                .split_once(": ")
                .ok_or_else(|| Usage(format!("prefix item {item:?} is not of the form `type: span`")))?;
            Ok((t.trim().to_string(), span.to_string()))
        })
        .collect()
}

fn role_name(role: TokenRole) -> String {
    match role {
        TokenRole::Start => "start".into(),
        TokenRole::PrefixMarker { group } => format!("prefix-marker/{group}"),
        TokenRole::PrefixToken { group } => format!("prefix/{group}"),
        TokenRole::TypeMarker { group, slot } => format!("type-marker/{group}/{slot}"),
        TokenRole::TypeToken { group, slot } => format!("type/{group}/{slot}"),
        TokenRole::TextMarker => "text-marker".into(),
        TokenRole::TextToken => "text".into(),
        TokenRole::End => "end".into(),
    }
}

#[derive(Serialize)]
struct TypeMarkerReport {
    index: usize,
    group: usize,
    type_name: String,
}

#[derive(Serialize)]
struct QueryReport {
    rendered: String,
    tokens: Vec<String>,
    roles: Vec<String>,
    position_ids: Vec<usize>,
    segment_ids: Vec<u8>,
    /// Row `i` has `1` at column `j` when token `i` attends to token `j`.
    attention_mask: Vec<String>,
    prefix_markers: Vec<usize>,
    type_markers: Vec<TypeMarkerReport>,
    text_range: (usize, usize),
}

pub fn inspect_query(args: InspectArgs) -> anyhow::Result<()> {
    let schema = load_schema(&args.schema)?;
    let max_esi = args.max_esi.unwrap_or(Limits::default().max_esi.min(args.max_total / 2));
    let limits = Limits { max_total: args.max_total, max_esi };
    limits.validate().map_err(|e| Usage(e.to_string()))?;
    let mut groups = Vec::new();
    let prefixes = if args.prefix.is_empty() { vec![String::new()] } else { args.prefix.clone() };
    for p in &prefixes {
        let items = if p.is_empty() { Vec::new() } else { parse_prefix(p)? };
        let path: TypePath = items.iter().map(|(t, _)| t.as_str()).collect();
        let mut candidate_types: Vec<String> = schema.children_of(&path)?.into_iter().map(str::to_string).collect();
        if candidate_types.is_empty() {
            bail!(Error::Data(format!("type path {path} has no child types to query")));
        }
        if args.type_order == TypeOrder::Lexicographic {
            candidate_types.sort();
        }
        let prefix_items = items
            .into_iter()
            .map(|(type_name, span_text)| {
                let byte = args
                    .text
                    .find(&span_text)
                    .ok_or_else(|| Error::Data(format!("prefix span {span_text:?} does not occur in the text")))?;
                let start = args.text[..byte].chars().count();
                let end = start + span_text.chars().count();
                Ok(PrefixItem { type_name, span_text, span_offsets: (start, end) })
            })
            .collect::<anyhow::Result<Vec<_>>>()?;
        groups.push(PrefixGroup { prefix_items, candidate_types });
    }
    let tok = match &args.checkpoint {
        Some(p) => Checkpoint::load(p).with_context(|| format!("checkpoint {}", p.display()))?.tokenizer,
        None => {
            let mut texts = vec![args.text.clone()];
            texts.extend(prefixes.iter().cloned());
            build_tokenizer(texts.iter().map(String::as_str), &schema)
        }
    };
    let queries = build_queries(&groups, &args.text, &tok, limits)?;
    let mut out = std::io::stdout().lock();
    if args.rendered {
        for q in &queries {
            writeln!(out, "{}", q.render(&tok))?;
        }
        return Ok(());
    }
    let reports: Vec<QueryReport> = queries
        .iter()
        .map(|q| QueryReport {
            rendered: q.render(&tok),
            tokens: q.tokens.iter().map(|&id| tok.id_to_string(id)).collect(),
            roles: q.roles.iter().map(|&r| role_name(r)).collect(),
            position_ids: q.position_ids.clone(),
            segment_ids: q.segment_ids.clone(),
            attention_mask: q
                .attention_mask
                .rows()
                .into_iter()
                .map(|row| row.iter().map(|&v| if v { '1' } else { '0' }).collect())
                .collect(),
            prefix_markers: q.p_marker_index.clone(),
            type_markers: q
                .t_marker_map
                .iter()
                .map(|(&index, slot)| TypeMarkerReport { index, group: slot.group_index, type_name: slot.type_name.clone() })
                .collect(),
            text_range: (q.text_range.start, q.text_range.end),
        })
        .collect();
    serde_json::to_writer_pretty(&mut out, &serde_json::json!({ "queries": reports }))?;
    writeln!(out)?;
    Ok(())
}

pub fn gen_synthetic(args: GenArgs) -> anyhow::Result<()> {
    let schema = load_schema(&args.schema)?;
    if !(0.0..=1.0).contains(&args.descend) || args.max_chains == 0 {
        bail!(Usage("--descend must lie in [0, 1] and --max-chains must be positive".into()));
    }
    let cfg = SyntheticConfig {
        count: args.count,
        seed: args.seed,
        max_chains: args.max_chains,
        descend: args.descend,
        ..Default::default()
    };
    let mut out = output(args.output.as_deref())?;
    write_records(&mut out, &generate(&schema, &cfg))?;
    out.flush()?;
    Ok(())
}
