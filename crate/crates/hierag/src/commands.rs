use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use hierag_core::chunk::{chunk_tree, ChunkParams, DEFAULT_CHUNK_OVERLAP, DEFAULT_CHUNK_SIZE};
use hierag_core::distill::{run_fingerprint, DistillError, DistillOptions, TreeDistiller};
use hierag_core::embed::{EmbedBackend, EmbedError, HashEmbedder, DEFAULT_DIM, DEFAULT_SEED};
use hierag_core::index::{build_index, DocInput, IndexError, Method, VectorIndex};
use hierag_core::llm::{GenSettings, LlmBackend, LlmError, Task};
use hierag_core::prompt::{PromptTemplate, TemplateKind, Templates};
use hierag_core::rag::{answer, AnswerOptions, RagAnswer, RagError};
use hierag_core::report::{evaluate, reduction_line, render_report, MetricReport, QAItem};
use hierag_core::scripted::{ScriptTable, ScriptedBackend, DEFAULT_CONTEXT_BUDGET};
use hierag_core::tokenize::WhitespaceTokenizer;
use log::info;

use crate::cli::{
    BackendArgs, Cli, Command, EmbedKind, EvalArgs, IndexArgs, LlmKind, MethodChoice, QueryArgs,
    ReportArgs,
};
use crate::config::{absolute, ConfigFile, Resolver};
use crate::dataset::load_dataset;
use crate::error::{io_err, CliError, CliResult, ErrorCode};
use crate::parallel::ThreadedRunner;
use crate::remote::{
    Credential, HttpSettings, RemoteEmbedder, RemoteLlm, RetryPolicy, API_KEY_ENV,
};
use crate::scan::{scan_repo, ScanError, ScanOptions};
use crate::store::{self, IndexMeta, Journal};

pub const DEFAULT_K: usize = 4;
pub const DEFAULT_WORKERS: usize = 4;
pub const DEFAULT_OUT: &str = "hierag-out";

pub fn run(cli: Cli, stdout: &mut dyn Write) -> CliResult<()> {
    let file = match &cli.config {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    let mut r = Resolver::new(file);
    match cli.command {
        Command::Index(a) => cmd_index(a, &mut r, stdout),
        Command::Query(a) => cmd_query(a, &mut r, stdout),
        Command::Eval(a) => cmd_eval(a, &mut r, stdout),
        Command::Report(a) => cmd_report(a, stdout),
    }
}

fn emit(stdout: &mut dyn Write, text: &str) -> CliResult<()> {
    stdout
        .write_all(text.as_bytes())
        .map_err(|e| io_err("stdout", e))
}

/// Scripted runs are stamped 0 so their outputs are reproducible; otherwise
/// `SOURCE_DATE_EPOCH` if set, else the current time.
fn run_timestamp(scripted: bool) -> u64 {
    if scripted {
        return 0;
    }
    if let Some(t) = std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|v| v.trim().parse().ok())
    {
        return t;
    }
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

struct Llm {
    backend: Box<dyn LlmBackend>,
    scripted: bool,
    settings: GenSettings,
}

fn gen_settings(r: &mut Resolver, b: &BackendArgs) -> CliResult<GenSettings> {
    let d = GenSettings::default();
    let s = GenSettings {
        max_output_tokens: r.value(
            "max_output_tokens",
            b.max_output_tokens,
            d.max_output_tokens,
        )?,
        temperature: r.value("temperature", b.temperature, d.temperature)?,
    };
    if s.max_output_tokens == 0 || !(0.0..=2.0).contains(&s.temperature) {
        return Err(CliError::new(
            ErrorCode::Config,
            "max_output_tokens must be >= 1 and temperature in [0, 2]",
        ));
    }
    Ok(s)
}

fn http_settings(
    r: &mut Resolver,
    b: &BackendArgs,
    url_key: &str,
    url: Option<String>,
    model_key: &str,
    model: Option<String>,
) -> CliResult<HttpSettings> {
    let endpoint = r.optional(url_key, url)?.ok_or_else(|| {
        CliError::new(
            ErrorCode::Config,
            format!("`{url_key}` is required for the openai backend"),
        )
    })?;
    let model = r.optional(model_key, model)?.ok_or_else(|| {
        CliError::new(
            ErrorCode::Config,
            format!("`{model_key}` is required for the openai backend"),
        )
    })?;
    let mut s = HttpSettings::new(endpoint, model);
    s.retry = RetryPolicy {
        max_retries: r.value("max_retries", b.max_retries, s.retry.max_retries)?,
        ..s.retry
    };
    s.max_inflight = r.value("max_inflight", b.max_inflight, s.max_inflight)?;
    s.timeout =
        Duration::from_secs(r.value("timeout_secs", b.timeout_secs, s.timeout.as_secs())?);
    Ok(s)
}

fn credential() -> CliResult<Credential> {
    Credential::from_env().ok_or_else(|| {
        CliError::new(
            ErrorCode::Config,
            format!("the openai backend needs the {API_KEY_ENV} environment variable"),
        )
    })
}

/// `echo` adds one exact answer rule per QA item to the scripted table.
fn build_llm(r: &mut Resolver, b: &BackendArgs, echo: &[QAItem]) -> CliResult<Llm> {
    let kind = r.value("llm_backend", b.llm_backend, LlmKind::Scripted)?;
    let settings = gen_settings(r, b)?;
    let backend: Box<dyn LlmBackend> = match kind {
        LlmKind::Scripted => {
            let mut table = match r.path("script", b.script.clone())? {
                Some(p) => {
                    let text = fs::read_to_string(&p).map_err(|e| {
                        CliError::new(ErrorCode::Config, format!("{}: {e}", p.display()))
                    })?;
                    ScriptTable::parse(&text).map_err(|e| {
                        CliError::new(ErrorCode::Config, format!("{}: {e}", p.display()))
                    })?
                }
                None => ScriptTable::default(),
            };
            if let Some(n) = r.optional("context_budget_tokens", b.context_budget_tokens)? {
                table.context_budget = n;
            }
            for item in echo {
                table.push_rule(Task::Answer, &item.question, &item.ground_truth);
            }
            Box::new(ScriptedBackend::new(table))
        }
        LlmKind::Openai => {
            let s = http_settings(
                r,
                b,
                "endpoint_url",
                b.endpoint_url.clone(),
                "model_name",
                b.model_name.clone(),
            )?;
            let budget = r.value(
                "context_budget_tokens",
                b.context_budget_tokens,
                DEFAULT_CONTEXT_BUDGET,
            )?;
            Box::new(RemoteLlm::new(s, credential()?, budget).map_err(llm_err)?)
        }
    };
    Ok(Llm {
        backend,
        scripted: kind == LlmKind::Scripted,
        settings,
    })
}

/// Parses `hash:dim=D:seed=S`.
fn parse_hash_id(id: &str) -> Option<(usize, u64)> {
    let rest = id.strip_prefix("hash:dim=")?;
    let (dim, seed) = rest.split_once(":seed=")?;
    Some((dim.parse().ok()?, seed.parse().ok()?))
}

/// Builds the embedder. With an existing index, hash settings default to the
/// ones the index was built with.
fn build_embed(
    r: &mut Resolver,
    b: &BackendArgs,
    existing: Option<&str>,
) -> CliResult<Box<dyn EmbedBackend>> {
    let from_index = existing.and_then(parse_hash_id);
    let default_kind = match existing {
        Some(id) if from_index.is_none() && id.starts_with("openai:") => EmbedKind::Openai,
        _ => EmbedKind::Hash,
    };
    let kind = r.value("embed_backend", b.embed_backend, default_kind)?;
    match kind {
        EmbedKind::Hash => {
            let (d, s) = from_index.unwrap_or((DEFAULT_DIM, DEFAULT_SEED));
            let dim = r.value("hash_dim", b.hash_dim, d)?;
            let seed = r.value("hash_seed", b.hash_seed, s)?;
            if dim == 0 {
                return Err(CliError::new(
                    ErrorCode::Config,
                    "hash_dim must be positive",
                ));
            }
            Ok(Box::new(HashEmbedder::new(dim, seed)))
        }
        EmbedKind::Openai => {
            let url = r.optional("embed_endpoint_url", b.embed_endpoint_url.clone())?;
            let url = match url {
                Some(u) => Some(u),
                None => r.optional("endpoint_url", b.endpoint_url.clone())?,
            };
            let s = http_settings(
                r,
                b,
                "embed_endpoint_url",
                url,
                "embed_model_name",
                b.embed_model_name.clone(),
            )?;
            let dim = r.optional("embed_dim", b.embed_dim)?;
            Ok(Box::new(
                RemoteEmbedder::new(s, credential()?, dim).map_err(embed_err)?,
            ))
        }
    }
}

fn llm_err(e: LlmError) -> CliError {
    let code = match e {
        LlmError::InvalidRequest(_) => ErrorCode::Config,
        _ => ErrorCode::Backend,
    };
    CliError::new(code, e.to_string())
}

fn embed_err(e: EmbedError) -> CliError {
    CliError::new(ErrorCode::Backend, format!("embedding failed: {e}"))
}

fn index_err(e: IndexError) -> CliError {
    match e {
        IndexError::Embed(e) => embed_err(e),
        IndexError::ZeroK => CliError::new(ErrorCode::Arg, e.to_string()),
        IndexError::BackendMismatch { .. } => CliError::new(ErrorCode::Config, e.to_string()),
        IndexError::DuplicateDocId(_) | IndexError::DimensionMismatch { .. } => {
            CliError::new(ErrorCode::Io, e.to_string())
        }
    }
}

fn rag_err(e: RagError) -> CliError {
    match e {
        RagError::Index(e) => index_err(e),
        RagError::Llm(e) => llm_err(e),
    }
}

fn scan_err(e: ScanError) -> CliError {
    let code = match e {
        ScanError::PathNotFound(_) | ScanError::NotADirectory(_) => ErrorCode::Path,
        ScanError::BadPattern { .. } => ErrorCode::Config,
        ScanError::Io { .. } | ScanError::Tree(_) => ErrorCode::Io,
    };
    CliError::new(code, e.to_string())
}

fn distill_err(e: DistillError) -> CliError {
    let code = match e {
        DistillError::Backend { .. } => ErrorCode::Backend,
        DistillError::Sink(_) => ErrorCode::Io,
        _ => ErrorCode::Distill,
    };
    CliError::new(code, e.to_string())
}

fn load_template(kind: TemplateKind, path: Option<PathBuf>) -> CliResult<PromptTemplate> {
    match path {
        None => Ok(match kind {
            TemplateKind::LeafTemplate => PromptTemplate::default_leaf(),
            TemplateKind::ParentTemplate => PromptTemplate::default_parent(),
        }),
        Some(p) => {
            let body = fs::read_to_string(&p)
                .map_err(|e| CliError::new(ErrorCode::Template, format!("{}: {e}", p.display())))?;
            PromptTemplate::new(kind, body)
                .map_err(|e| CliError::new(ErrorCode::Template, format!("{}: {e}", p.display())))
        }
    }
}

fn positive_k(k: usize) -> CliResult<usize> {
    if k == 0 {
        return Err(CliError::new(ErrorCode::Arg, "k must be at least 1"));
    }
    Ok(k)
}

fn canonical_or_absolute(p: &Path) -> PathBuf {
    fs::canonicalize(p).unwrap_or_else(|_| p.to_path_buf())
}

/// Resolves `p` through its nearest existing ancestor so that symlinked
/// prefixes compare correctly even when `p` does not exist yet.
fn resolve_prefix(p: &Path) -> PathBuf {
    let mut existing = p.to_path_buf();
    let mut rest = Vec::new();
    while !existing.exists() {
        match (
            existing.file_name().map(|n| n.to_os_string()),
            existing.parent(),
        ) {
            (Some(name), Some(parent)) => {
                rest.push(name);
                existing = parent.to_path_buf();
            }
            _ => break,
        }
    }
    let mut out = canonical_or_absolute(&existing);
    for n in rest.into_iter().rev() {
        out.push(n);
    }
    out
}

fn cmd_index(a: IndexArgs, r: &mut Resolver, stdout: &mut dyn Write) -> CliResult<()> {
    let repo = absolute(&a.repo)?;
    info!("config repo = {} (cli)", repo.display());
    let method = r.value("method", a.method, MethodChoice::Both)?;
    let chunk_size = r.value("chunk_size", a.chunk_size, DEFAULT_CHUNK_SIZE)?;
    let chunk_overlap = r.value("chunk_overlap", a.chunk_overlap, DEFAULT_CHUNK_OVERLAP)?;
    let params = ChunkParams::new(chunk_size, chunk_overlap)
        .map_err(|e| CliError::new(ErrorCode::Config, e.to_string()))?;
    let workers = r.value("workers", a.workers, DEFAULT_WORKERS)?.max(1);
    let out = r
        .path("out", a.out.clone())?
        .map_or_else(|| absolute(Path::new(DEFAULT_OUT)), Ok)?;
    let cli_ignore = (!a.ignore.is_empty()).then(|| a.ignore.join(","));
    let ignore: Vec<String> = r
        .optional::<String>("ignore", cli_ignore)?
        .map(|s| {
            s.split(',')
                .map(str::trim)
                .filter(|g| !g.is_empty())
                .map(String::from)
                .collect()
        })
        .unwrap_or_default();
    let leaf_path = r.path("leaf_template", a.leaf_template.clone())?;
    let parent_path = r.path("parent_template", a.parent_template.clone())?;
    let templates = Templates {
        leaf: load_template(TemplateKind::LeafTemplate, leaf_path)?,
        parent: load_template(TemplateKind::ParentTemplate, parent_path)?,
    };
    let want_baseline = matches!(method, MethodChoice::Baseline | MethodChoice::Both);
    let want_implicit = matches!(method, MethodChoice::Implicit | MethodChoice::Both);
    let embed = build_embed(r, &a.backend, None)?;
    let llm = if want_implicit {
        Some(build_llm(r, &a.backend, &[])?)
    } else {
        None
    };

    let tok = WhitespaceTokenizer;
    let scan = ScanOptions {
        ignore,
        ..ScanOptions::new()
    };
    let tree = scan_repo(&repo, &scan, &tok).map_err(scan_err)?;
    if resolve_prefix(&out).starts_with(canonical_or_absolute(&repo)) {
        return Err(CliError::new(
            ErrorCode::Path,
            format!(
                "output directory {} lies inside the repository",
                out.display()
            ),
        ));
    }
    info!(
        "scanned {}: {} nodes ({} files)",
        repo.display(),
        tree.len(),
        tree.leaf_count()
    );
    let scripted = llm.as_ref().is_none_or(|l| l.scripted);
    let created = run_timestamp(scripted);
    let mut counts = BTreeMap::new();

    if want_baseline {
        let chunks = chunk_tree(&tree, params, &tok);
        let inputs: Vec<DocInput> = chunks.iter().map(DocInput::from_chunk).collect();
        let index = build_index(inputs, embed.as_ref(), Method::Baseline).map_err(index_err)?;
        let dir = out.join("baseline");
        let meta = IndexMeta {
            method: Method::Baseline,
            dim: index.dim(),
            embed_backend_id: index.embed_backend_id().to_string(),
            doc_count: index.len(),
            tree_fingerprint: tree.fingerprint(),
            created,
            chunk_size: Some(chunk_size),
            chunk_overlap: Some(chunk_overlap),
            llm_backend_id: None,
        };
        store::write_index(&dir, &index, &meta)?;
        emit(
            stdout,
            &format!(
                "baseline: {} documents -> baseline/{}\n",
                index.len(),
                store::INDEX_FILE
            ),
        )?;
        counts.insert(Method::Baseline, index.len());
    }

    if let Some(llm) = llm {
        let options = DistillOptions {
            settings: llm.settings,
            timestamp: created,
        };
        let fp = run_fingerprint(&tree, &templates, llm.backend.backend_id(), &llm.settings);
        let kb_dir = out.join("implicit").join("kb");
        let recovered = Journal::recover(&kb_dir, &fp)?;
        let mut distiller = TreeDistiller::new(&tree, &templates, llm.backend.as_ref(), &options);
        let kept = distiller.resume_from(recovered.clone());
        if kept > 0 {
            info!("resuming: {kept} of {} nodes already generated", tree.len());
        }
        let mut journal = Journal::create(&kb_dir, &fp, &recovered)?;
        let runner = ThreadedRunner::new(workers);
        let distilled = distiller
            .run(&runner, &mut |o| journal.append(o).map_err(|e| e.message))
            .map_err(distill_err)?;
        drop(journal);
        store::write_kb(&kb_dir, &distilled.kb, &distilled.log, &fp)?;
        for ev in &distilled.log.truncations {
            info!(
                "truncated {} context for {}: {} -> {} tokens",
                ev.task.as_str(),
                ev.label,
                ev.original_tokens,
                ev.kept_tokens
            );
        }
        let inputs: Vec<DocInput> = distilled
            .kb
            .in_generation_order()
            .into_iter()
            .map(DocInput::from_knowledge)
            .collect();
        let index = build_index(inputs, embed.as_ref(), Method::Implicit).map_err(index_err)?;
        let dir = out.join("implicit");
        let meta = IndexMeta {
            method: Method::Implicit,
            dim: index.dim(),
            embed_backend_id: index.embed_backend_id().to_string(),
            doc_count: index.len(),
            tree_fingerprint: tree.fingerprint(),
            created,
            chunk_size: None,
            chunk_overlap: None,
            llm_backend_id: Some(llm.backend.backend_id().to_string()),
        };
        store::write_index(&dir, &index, &meta)?;
        emit(
            stdout,
            &format!(
                "implicit: {} documents -> implicit/{} (knowledge base: implicit/kb, {} truncations)\n",
                index.len(),
                store::INDEX_FILE,
                distilled.log.truncations.len()
            ),
        )?;
        counts.insert(Method::Implicit, index.len());
    }

    if counts.len() == 2 {
        emit(stdout, &format!("{}\n", reduction_line(&counts)))?;
    }
    Ok(())
}

fn open_index(dir: &Path) -> CliResult<(VectorIndex, IndexMeta)> {
    store::load_index(&absolute(dir)?)
}

fn cmd_query(a: QueryArgs, r: &mut Resolver, stdout: &mut dyn Write) -> CliResult<()> {
    let k = positive_k(r.value("k", a.k, DEFAULT_K)?)?;
    if a.question.trim().is_empty() {
        return Err(CliError::new(ErrorCode::Arg, "question must not be empty"));
    }
    let (index, meta) = open_index(&a.index)?;
    let embed = build_embed(r, &a.backend, Some(&meta.embed_backend_id))?;
    let llm = build_llm(r, &a.backend, &[])?;
    let options = AnswerOptions {
        settings: llm.settings,
        timestamp: run_timestamp(llm.scripted),
    };
    let out = answer(
        &a.question,
        &index,
        k,
        llm.backend.as_ref(),
        embed.as_ref(),
        &options,
    )
    .map_err(rag_err)?;
    let mut text = out.answer.answer_text.clone();
    if !text.ends_with('\n') {
        text.push('\n');
    }
    if a.show_sources {
        text.push_str("\nsources:\n");
        for (i, s) in out.answer.retrieved.iter().enumerate() {
            text.push_str(&format!(
                "  {}. {}  score={:.4}\n",
                i + 1,
                s.doc_id,
                s.score
            ));
        }
        if out.answer.retrieved.is_empty() {
            text.push_str("  (none)\n");
        }
    }
    emit(stdout, &text)
}

fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| io_err(parent.display(), e))?;
    }
    fs::write(path, bytes).map_err(|e| io_err(path.display(), e))
}

fn report_json(report: &MetricReport) -> Vec<u8> {
    let mut v = serde_json::to_vec_pretty(report).expect("serializable");
    v.push(b'\n');
    v
}

fn cmd_eval(a: EvalArgs, r: &mut Resolver, stdout: &mut dyn Write) -> CliResult<()> {
    let k = positive_k(r.value("k", a.k, DEFAULT_K)?)?;
    let out = r.path("out", a.out.clone())?.map_or_else(
        || absolute(Path::new(DEFAULT_OUT).join("report").as_path()),
        Ok,
    )?;
    let dataset = load_dataset(&absolute(&a.dataset)?)?;
    let targets: Vec<(Method, &PathBuf)> = [
        (Method::Baseline, a.index_baseline.as_ref()),
        (Method::Implicit, a.index_implicit.as_ref()),
    ]
    .into_iter()
    .filter_map(|(m, p)| p.map(|p| (m, p)))
    .collect();
    if targets.is_empty() {
        return Err(CliError::new(
            ErrorCode::Arg,
            "give --index-baseline and/or --index-implicit",
        ));
    }
    let echo: &[QAItem] = if a.echo_ground_truth { &dataset } else { &[] };
    let llm = build_llm(r, &a.backend, echo)?;
    if a.echo_ground_truth && !llm.scripted {
        return Err(CliError::new(
            ErrorCode::Arg,
            "--echo-ground-truth needs the scripted backend",
        ));
    }
    let options = AnswerOptions {
        settings: llm.settings,
        timestamp: run_timestamp(llm.scripted),
    };

    let mut answers: Vec<RagAnswer> = Vec::new();
    let mut counts = BTreeMap::new();
    let mut embed_for: Option<(String, Box<dyn EmbedBackend>)> = None;
    for (method, dir) in targets {
        let (index, meta) = open_index(dir)?;
        if index.method() != method {
            return Err(CliError::new(
                ErrorCode::NoIndex,
                format!(
                    "{} holds a {} index, expected {method}",
                    dir.display(),
                    index.method()
                ),
            ));
        }
        let reuse = matches!(&embed_for, Some((id, _)) if *id == meta.embed_backend_id);
        if !reuse {
            let e = build_embed(r, &a.backend, Some(&meta.embed_backend_id))?;
            embed_for = Some((meta.embed_backend_id.clone(), e));
        }
        let embed = &embed_for.as_ref().expect("set above").1;
        counts.insert(method, index.len());
        for item in &dataset {
            let out = answer(
                &item.question,
                &index,
                k,
                llm.backend.as_ref(),
                embed.as_ref(),
                &options,
            )
            .map_err(rag_err)?;
            answers.push(out.answer);
        }
    }
    let report = evaluate(&answers, &dataset, counts)
        .map_err(|e| CliError::new(ErrorCode::Dataset, e.to_string()))?;
    let text = render_report(&report);
    let mut lines = Vec::new();
    for a in &answers {
        serde_json::to_writer(&mut lines, a).expect("serializable");
        lines.push(b'\n');
    }
    write_file(&out.join("answers.jsonl"), &lines)?;
    write_file(&out.join("report.json"), &report_json(&report))?;
    write_file(&out.join("report.txt"), text.as_bytes())?;
    emit(stdout, &text)
}

fn cmd_report(a: ReportArgs, stdout: &mut dyn Write) -> CliResult<()> {
    let path = absolute(&a.from)?;
    let raw = fs::read_to_string(&path)
        .map_err(|e| CliError::new(ErrorCode::Dataset, format!("{}: {e}", path.display())))?;
    let mut report: MetricReport = serde_json::from_str(&raw)
        .map_err(|e| CliError::new(ErrorCode::Dataset, format!("{}: {e}", path.display())))?;
    if report.aggregates.is_empty() && !report.per_question.is_empty() {
        report.recompute_aggregates();
    }
    let text = render_report(&report);
    if let Some(dir) = a.out {
        write_file(&absolute(&dir)?.join("report.txt"), text.as_bytes())?;
    }
    emit(stdout, &text)
}
