use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use replykit_core::corpus::{
    build_dataset, generate_synthetic_corpus, normalize_text, read_dataset, read_transcripts,
    write_dataset, write_transcripts, QaPair, Split, Transcript,
};
use replykit_core::encoder::{
    load_checkpoint, model_digest, save_checkpoint, train_with_progress, Hyperparams, TrainConfig,
};
use replykit_core::eval::{
    build_ranking_task, emit_report, read_annotations, run_ranking_eval, EvalReport,
    BOOTSTRAP_RESAMPLES,
};
use replykit_core::templates::{
    curate, extract_templates, parse_curation, sample_answers, KMeansConfig, TemplatePool,
};
use replykit_core::write_atomic;
use replykit_service::{AppState, Engine, ServiceConfig};
use serde::Serialize;

use crate::{
    Classify, Command, CurateArgs, ExtractArgs, Failure, HumanEvalArgs, IngestArgs, Preset,
    QueryArgs, RankEvalArgs, ServeArgs, SynthArgs, TrainArgs,
};

type Outcome = Result<(), Failure>;

pub fn run(command: Command) -> Outcome {
    match command {
        Command::Synth(a) => synth(a),
        Command::Ingest(a) => ingest(a),
        Command::Train(a) => train(a),
        Command::ExtractTemplates(a) => extract(a),
        Command::Curate(a) => curate_pool(a),
        Command::RankEval(a) => rank_eval(a),
        Command::HumanEvalReport(a) => human_eval(a),
        Command::Serve(a) => serve(a),
        Command::Query(a) => query(a),
    }
}

fn log_config(name: &str, config: &impl Serialize) {
    log::info!(
        "{name} config: {}",
        serde_json::to_string(config).expect("config serializes")
    );
}

fn is_stdio(path: &Option<PathBuf>) -> bool {
    path.as_deref().is_none_or(|p| p == Path::new("-"))
}

fn open_input(path: &Option<PathBuf>) -> Result<Box<dyn BufRead>, Failure> {
    if is_stdio(path) {
        return Ok(Box::new(BufReader::new(io::stdin().lock())));
    }
    let p = path.as_ref().expect("not stdin");
    let f = File::open(p).with_context(|| format!("opening {}", p.display()))?;
    Ok(Box::new(BufReader::new(f)))
}

fn open_file(path: &Path) -> Result<BufReader<File>, Failure> {
    Ok(BufReader::new(
        File::open(path).with_context(|| format!("opening {}", path.display()))?,
    ))
}

/// Atomic replace for files, a plain write for stdout.
fn emit(path: &Option<PathBuf>, bytes: &[u8]) -> Outcome {
    if is_stdio(path) {
        let mut out = io::stdout().lock();
        out.write_all(bytes).and_then(|_| out.flush()).internal()?;
    } else {
        let p = path.as_ref().expect("not stdout");
        write_atomic(p, bytes)
            .with_context(|| format!("writing {}", p.display()))
            .internal()?;
        log::info!("wrote {}", p.display());
    }
    Ok(())
}

fn synth(a: SynthArgs) -> Outcome {
    log_config("synth", &a);
    let corpus = generate_synthetic_corpus(a.intents, a.transcripts, a.seed).usage()?;
    let mut buf = Vec::new();
    write_transcripts(&mut buf, &corpus).internal()?;
    log::info!("{} transcripts from {} intents", corpus.len(), a.intents);
    emit(&a.out, &buf)
}

fn ingest(a: IngestArgs) -> Outcome {
    log_config("ingest", &a);
    if !(a.neg_ratio > 0.0 && a.neg_ratio.is_finite()) {
        return Err(Failure::Usage(anyhow!(
            "--neg-ratio must be positive, got {}",
            a.neg_ratio
        )));
    }
    if !(a.dev > 0.0 && a.dev < 1.0) {
        return Err(Failure::Usage(anyhow!(
            "--dev must lie strictly between 0 and 1, got {}",
            a.dev
        )));
    }
    let corpus = read_transcripts(open_input(&a.input)?)?;
    let data = build_dataset(&corpus, a.neg_ratio, a.dev, a.seed)?;
    let count = |pairs: &[QaPair]| pairs.iter().filter(|p| p.label == 1).count();
    log::info!(
        "train: {} pairs ({} positive), dev: {} pairs ({} positive)",
        data.train.len(),
        count(&data.train),
        data.dev.len(),
        count(&data.dev)
    );
    match (&a.train_out, &a.dev_out) {
        (Some(t), Some(d)) => {
            let mut buf = Vec::new();
            write_dataset(&mut buf, &data.train, None).internal()?;
            emit(&Some(t.clone()), &buf)?;
            buf.clear();
            write_dataset(&mut buf, &data.dev, None).internal()?;
            emit(&Some(d.clone()), &buf)
        }
        _ => {
            let mut buf = Vec::new();
            write_dataset(&mut buf, &data.train, Some(Split::Train)).internal()?;
            write_dataset(&mut buf, &data.dev, Some(Split::Dev)).internal()?;
            emit(&a.out, &buf)
        }
    }
}

/// Splits a tagged dataset stream; untagged lines count as training data.
fn load_dataset(reader: impl BufRead) -> Result<(Vec<QaPair>, Vec<QaPair>), Failure> {
    let mut train = Vec::new();
    let mut dev = Vec::new();
    for r in read_dataset(reader)? {
        if r.label > 1 {
            return Err(Failure::Data(anyhow!(
                "label must be 0 or 1, got {}",
                r.label
            )));
        }
        match r.split {
            Some(Split::Dev) => dev.push(QaPair::from_record(r)),
            _ => train.push(QaPair::from_record(r)),
        }
    }
    Ok((train, dev))
}

#[derive(Serialize)]
struct ResolvedTraining<'a> {
    hyperparams: &'a Hyperparams,
    train: &'a TrainConfig,
    out: &'a Path,
    metrics: &'a Path,
}

fn resolve_training(a: &TrainArgs) -> (Hyperparams, TrainConfig) {
    let (mut h, mut c) = match a.preset {
        Preset::Full => (Hyperparams::default(), TrainConfig::default()),
        Preset::Desk => (Hyperparams::desk(), TrainConfig::desk(a.seed)),
    };
    h.embedding_dim = a.embedding_dim.unwrap_or(h.embedding_dim);
    h.lstm_dim = a.lstm_dim.unwrap_or(h.lstm_dim);
    h.mlp_layers = a.mlp_layers.unwrap_or(h.mlp_layers);
    h.mlp_hidden = a.mlp_hidden.unwrap_or(h.mlp_hidden);
    h.max_len = a.max_len.unwrap_or(h.max_len);
    h.vocab_size = a.vocab_size.unwrap_or(h.vocab_size);
    h.shared_embeddings |= a.shared_embeddings;
    c.learning_rate = a.lr.unwrap_or(c.learning_rate);
    c.epochs = a.epochs.unwrap_or(c.epochs);
    c.batch_size = a.batch_size.unwrap_or(c.batch_size);
    c.clip_norm = a.clip_norm.unwrap_or(c.clip_norm);
    c.dev_eval_every = a.dev_eval_every;
    c.seed = a.seed;
    (h, c)
}

fn train(a: TrainArgs) -> Outcome {
    let (hyper, cfg) = resolve_training(&a);
    let metrics_path = a
        .metrics
        .clone()
        .unwrap_or_else(|| a.out.with_extension("metrics.jsonl"));
    log_config(
        "train",
        &ResolvedTraining {
            hyperparams: &hyper,
            train: &cfg,
            out: &a.out,
            metrics: &metrics_path,
        },
    );
    hyper.validate().usage()?;
    cfg.validate().usage()?;
    let (train, mut dev) = load_dataset(open_input(&a.input)?)?;
    if let Some(path) = &a.dev {
        dev.extend(load_dataset(open_file(path)?)?.0);
    }
    if train.is_empty() {
        return Err(Failure::Data(anyhow!("no training pairs in the input")));
    }
    if dev.is_empty() {
        log::warn!("no dev pairs; dev accuracy will not be reported");
    }
    log::info!("training on {} pairs, {} dev pairs", train.len(), dev.len());
    let (model, metrics) = train_with_progress(&train, &dev, &hyper, &cfg, |m| {
        if let Some(acc) = m.dev_accuracy {
            eprintln!(
                "epoch {}: train loss {:.4}, dev accuracy {:.4}",
                m.epoch, m.train_loss, acc
            );
        } else {
            eprintln!("epoch {}: train loss {:.4}", m.epoch, m.train_loss);
        }
    })?;
    save_checkpoint(&model, &a.out)
        .with_context(|| format!("writing {}", a.out.display()))
        .internal()?;
    let mut log_lines = Vec::new();
    for m in &metrics {
        serde_json::to_writer(&mut log_lines, m).internal()?;
        log_lines.push(b'\n');
    }
    emit(&Some(metrics_path), &log_lines)?;
    log::info!(
        "wrote {} ({} parameters, digest {})",
        a.out.display(),
        model.parameter_count(),
        model_digest(&model)
    );
    Ok(())
}

fn read_lines_normalized(reader: impl BufRead) -> Result<Vec<Vec<String>>, Failure> {
    let mut out = Vec::new();
    for line in reader.lines() {
        let tokens = normalize_text(&line?);
        if !tokens.is_empty() {
            out.push(tokens);
        }
    }
    Ok(out)
}

fn extract(a: ExtractArgs) -> Outcome {
    log_config("extract-templates", &a);
    let cfg = KMeansConfig {
        k: a.k,
        batch_size: a.batch_size,
        max_iters: a.max_iters,
        seed: a.seed,
        tolerance: a.tolerance,
    };
    let model = load_checkpoint(&a.checkpoint)
        .with_context(|| format!("loading {}", a.checkpoint.display()))?;
    let hash = model_digest(&model);
    let answers = match (&a.transcripts, &a.answers) {
        (Some(t), _) => {
            let corpus: Vec<Transcript> = read_transcripts(open_file(t)?)?;
            sample_answers(&corpus, a.sample, a.seed)
        }
        (None, Some(p)) => read_lines_normalized(open_file(p)?)?,
        (None, None) => unreachable!("clap requires one input"),
    };
    log::info!("clustering {} answers into {} clusters", answers.len(), a.k);
    let pool = extract_templates(&answers, &model, &hash, &cfg)?;
    emit(&Some(a.out.clone()), &pool.to_json().internal()?)?;
    log::info!("{} templates", pool.templates.len());
    Ok(())
}

fn curate_pool(a: CurateArgs) -> Outcome {
    log_config("curate", &a);
    let pool =
        TemplatePool::load(&a.pool).with_context(|| format!("loading {}", a.pool.display()))?;
    let text = std::fs::read_to_string(&a.decisions)
        .with_context(|| format!("reading {}", a.decisions.display()))?;
    let decisions = parse_curation(&text)?;
    let model = load_checkpoint(&a.checkpoint)
        .with_context(|| format!("loading {}", a.checkpoint.display()))?;
    let curated = curate(&pool, &decisions, &model, &model_digest(&model))?;
    log::info!(
        "{} of {} templates active",
        curated.active_count(),
        curated.templates.len()
    );
    emit(&Some(a.out.clone()), &curated.to_json().internal()?)
}

fn rank_eval(a: RankEvalArgs) -> Outcome {
    log_config("rank-eval", &a);
    if a.resamples == 0 || a.items == 0 {
        return Err(Failure::Usage(anyhow!(
            "--items and --resamples must be positive"
        )));
    }
    let model = load_checkpoint(&a.checkpoint)
        .with_context(|| format!("loading {}", a.checkpoint.display()))?;
    let (train, dev) = load_dataset(open_file(&a.dataset)?)?;
    let source = if dev.iter().any(|p| p.label == 1) {
        dev
    } else {
        train
    };
    let task = build_ranking_task(&source, a.items, a.seed)?;
    let mut ranking = run_ranking_eval(&task, &model, a.seed)?;
    if a.resamples != BOOTSTRAP_RESAMPLES {
        let dual = &ranking.scorers[&replykit_core::retrieval::Scorer::DualEncoder].ranks;
        let tfidf = &ranking.scorers[&replykit_core::retrieval::Scorer::Tfidf].ranks;
        let (_, p) = replykit_core::eval::paired_bootstrap(dual, tfidf, a.resamples, a.seed)?;
        ranking.bootstrap.resamples = a.resamples;
        ranking.bootstrap.p_value = p;
    }
    let mut report = match &a.annotations {
        Some(path) => EvalReport::from_annotations(&read_annotations(path)?)?,
        None => EvalReport::default(),
    };
    report.ranking = Some(ranking);
    emit_report(&report, &a.out_dir).internal()?;
    print!("{}", report.render_text());
    Ok(())
}

fn human_eval(a: HumanEvalArgs) -> Outcome {
    log_config("human-eval-report", &a);
    if !a.annotations.exists() {
        return Err(Failure::Data(anyhow!(
            "{} does not exist",
            a.annotations.display()
        )));
    }
    let report = EvalReport::from_annotations(&read_annotations(&a.annotations)?)?;
    emit_report(&report, &a.out_dir).internal()?;
    print!("{}", report.render_text());
    Ok(())
}

fn serve(a: ServeArgs) -> Outcome {
    let mut cfg = match &a.config {
        Some(path) => ServiceConfig::load(path)?,
        None => ServiceConfig::default(),
    };
    if let Some(l) = a.listen {
        cfg.listen = l;
    }
    if let Some(p) = a.port {
        cfg.listen.set_port(p);
    }
    if a.checkpoint.is_some() {
        cfg.checkpoint = a.checkpoint.clone();
    }
    if a.pool.is_some() {
        cfg.pool = a.pool.clone();
    }
    if let Some(p) = &a.annotations {
        cfg.annotations = p.clone();
    }
    if let Some(p) = &a.sessions {
        cfg.sessions = p.clone();
    }
    if let Some(k) = a.top_k {
        cfg.top_k = k;
    }
    cfg.eval_mode |= a.eval_mode;
    log_config("serve", &cfg);
    cfg.validate().usage()?;
    let state = AppState::open(cfg)?;
    let runtime = tokio::runtime::Runtime::new().internal()?;
    runtime.block_on(replykit_service::serve(state)).internal()
}

fn query(a: QueryArgs) -> Outcome {
    log_config("query", &a);
    if !(1..=replykit_core::retrieval::MAX_K).contains(&a.k) {
        return Err(Failure::Usage(anyhow!(
            "-k must be in 1..={}",
            replykit_core::retrieval::MAX_K
        )));
    }
    let engine = Engine::load(&a.checkpoint, &a.pool)?;
    let stdin = io::stdin().lock();
    let mut out = BufWriter::new(io::stdout().lock());
    for line in stdin.lines() {
        let line = line?;
        let tokens = normalize_text(&line);
        if tokens.is_empty() {
            continue;
        }
        let result = engine.recommend(&tokens, a.scorer, a.k)?;
        writeln!(out, "> {}", tokens.join(" ")).internal()?;
        for (i, r) in result.ranked.iter().enumerate() {
            writeln!(out, "{}\t{:.4}\t{}\t{}", i + 1, r.score, r.id, r.text).internal()?;
        }
        out.flush().internal()?;
    }
    Ok(())
}
