use std::fs;
use std::path::{Path, PathBuf};

use medseq::checkpoint::{load_checkpoint, save_checkpoint};
use medseq::corpus::{
    generate_synthetic, load_corpus_dir, read_standoff, spans_to_iob, tokenize, write_standoff, Annotation, Document,
    Standoff, SyntheticConfig,
};
use medseq::embeddings::{load_embeddings, save_embeddings, train_skipgram, SkipGramConfig};
use medseq::evaluation::{count_corpus, render_report, score, token_confusion, MatchMode, Pairing, TokenConfusion};
use medseq::features::{read_token_features, FeatureRow};
use medseq::network::{ModelConfig, TagStreams, Tagger};
use medseq::training::{
    check_features, predict_document, random_init_tagger, split_train_val, train as fit, TrainConfig, TrainingDocument,
};

use crate::settings::{CliError, CliResult, Settings};
use crate::{EvaluateArgs, GenArgs, PredictArgs, PretrainArgs, TrainArgs};

fn path_setting(s: &Settings, flag: &Option<PathBuf>, key: &str) -> CliResult<Option<PathBuf>> {
    s.opt(flag.clone(), key)
}

fn required(s: &Settings, flag: &Option<PathBuf>, key: &str) -> CliResult<PathBuf> {
    path_setting(s, flag, key)?.ok_or_else(|| CliError::config(format!("--{} is required", key.replace('_', "-"))))
}

fn must_exist(path: &Path, what: &str) -> CliResult<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::config(format!("{what} {} does not exist", path.display())))
    }
}

fn write_file(path: &Path, content: &[u8]) -> CliResult<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| CliError::data(format!("{}: {e}", parent.display())))?;
    }
    fs::write(path, content).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

/// Sorted stems of the files in `dir` with extension `ext`.
fn stems(dir: &Path, ext: &str) -> CliResult<Vec<String>> {
    let entries = fs::read_dir(dir).map_err(|e| CliError::data(format!("{}: {e}", dir.display())))?;
    let mut out = Vec::new();
    for entry in entries {
        let path = entry
            .map_err(|e| CliError::data(format!("{}: {e}", dir.display())))?
            .path();
        if path.is_file() && path.extension().is_some_and(|e| e == ext) {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                out.push(stem.to_string());
            }
        }
    }
    out.sort();
    Ok(out)
}

fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

fn report_warnings(docs: &[Standoff]) {
    let n: usize = docs.iter().map(|d| d.warnings.len()).sum();
    if n > 0 {
        eprintln!(
            "warning: {n} annotation warnings while reading {} documents",
            docs.len()
        );
    }
}

fn sidecar(dir: Option<&Path>, id: &str) -> CliResult<Option<Vec<FeatureRow>>> {
    let Some(dir) = dir else { return Ok(None) };
    let path = dir.join(format!("{id}.feat"));
    if path.exists() {
        Ok(Some(read_token_features(&path)?))
    } else {
        Ok(None)
    }
}

fn training_documents(dir: &Path, features: Option<&Path>) -> CliResult<Vec<TrainingDocument>> {
    let docs = load_corpus_dir(dir)?;
    report_warnings(&docs);
    docs.into_iter()
        .map(|s| {
            let features = sidecar(features, &s.document.id)?;
            Ok(TrainingDocument {
                document: s.document,
                features,
            })
        })
        .collect()
}

pub fn gen(a: &GenArgs, s: &Settings) -> CliResult<()> {
    let out = required(s, &a.out, "out")?;
    let defaults = SyntheticConfig::default();
    let config = SyntheticConfig {
        seed: s.seed(a.common.seed)?,
        documents: s.get(a.docs, "docs", defaults.documents)?,
        tag_correlation: s.get(a.tag_correlation, "tag_correlation", defaults.tag_correlation)?,
        shared_condition_lexicon: s.switch(
            a.shared_condition_lexicon,
            a.no_shared_condition_lexicon,
            "shared_condition_lexicon",
            defaults.shared_condition_lexicon,
        )?,
        lexicon_expansion: s.get(a.lexicon_expansion, "lexicon_expansion", defaults.lexicon_expansion)?,
        ..defaults
    };
    s.finish()?;
    if config.documents == 0 {
        eprintln!("warning: --docs 0 writes only the manifest");
    }
    let corpus = generate_synthetic(&config)?;
    corpus.write_to_dir(&out)?;
    println!("wrote {} documents to {}", corpus.documents.len(), out.display());
    Ok(())
}

pub fn pretrain(a: &PretrainArgs, s: &Settings) -> CliResult<()> {
    let corpus = required(s, &a.corpus, "corpus")?;
    let out = required(s, &a.out, "out")?;
    let d = SkipGramConfig::default();
    let config = SkipGramConfig {
        dim: s.get(a.dim, "dim", d.dim)?,
        window: s.get(a.window, "window", d.window)?,
        negatives: s.get(a.negatives, "negatives", d.negatives)?,
        epochs: s.get(a.epochs, "epochs", d.epochs)?,
        learning_rate: s.get(a.learning_rate, "learning_rate", d.learning_rate)?,
        min_count: s.get(a.min_count, "min_count", d.min_count)?,
        subsample: s.get(a.subsample, "subsample", d.subsample)?,
        seed: s.seed(a.common.seed)?,
    };
    s.finish()?;
    must_exist(&corpus, "corpus directory")?;

    let mut sentences: Vec<Vec<String>> = Vec::new();
    for id in stems(&corpus, "txt")? {
        let text = read_text(&corpus.join(format!("{id}.txt")))?;
        for line in text.lines() {
            let words: Vec<String> = tokenize(line).into_iter().map(|t| t.surface).collect();
            if !words.is_empty() {
                sentences.push(words);
            }
        }
    }
    if sentences.is_empty() {
        return Err(CliError::data(format!("no text found in {}", corpus.display())));
    }
    let (vocab, emb) = train_skipgram(&sentences, &config)?;
    save_embeddings(&emb, &vocab, &out)?;
    println!(
        "wrote {} vectors of dimension {} to {}",
        vocab.len(),
        emb.dim(),
        out.display()
    );
    Ok(())
}

fn lenient_micro_f1(tagger: &Tagger, docs: &[TrainingDocument]) -> f64 {
    let predicted: Vec<Vec<Annotation>> = docs
        .iter()
        .map(|d| predict_document(tagger, &d.document.text, d.features.as_deref()))
        .collect();
    let counts = count_corpus(
        docs.iter()
            .zip(&predicted)
            .map(|(d, p)| (d.document.annotations.as_slice(), p.as_slice())),
        MatchMode::Lenient,
        Pairing::Greedy,
    );
    score(&counts, MatchMode::Lenient).micro.scores.f1
}

pub fn train(a: &TrainArgs, s: &Settings) -> CliResult<()> {
    let train_dir = required(s, &a.train, "train")?;
    let test_dir = path_setting(s, &a.test, "test")?;
    let features = path_setting(s, &a.features, "features")?;
    let embeddings = path_setting(s, &a.embeddings, "embeddings")?;
    let random_init = s.get(a.random_init.then_some(true), "random_init", false)?;
    let checkpoint = required(s, &a.checkpoint, "checkpoint")?;
    let history = path_setting(s, &a.history, "history")?
        .unwrap_or_else(|| PathBuf::from(format!("{}.history.json", checkpoint.display())));
    let seed = s.seed(a.common.seed)?;

    let md = ModelConfig::default();
    let merged = s.switch(a.merged_tags, a.no_merged_tags, "merged_tags", false)?;
    let mut model = ModelConfig {
        word_dim: md.word_dim,
        clamp_dim: s.get(a.clamp_dim, "clamp_dim", md.clamp_dim)?,
        ctakes_dim: s.get(a.ctakes_dim, "ctakes_dim", md.ctakes_dim)?,
        augment: s.switch(a.augment, a.no_augment, "augment", md.augment)?,
        tag_streams: if merged {
            TagStreams::Merged
        } else {
            TagStreams::Separate
        },
        hidden_override: s.opt(a.hidden, "hidden")?,
        mask_transitions: s.switch(
            a.mask_transitions,
            a.no_mask_transitions,
            "mask_transitions",
            md.mask_transitions,
        )?,
        seed,
        ..md
    };
    let word_dim = s.opt(a.word_dim, "word_dim")?;
    let td = TrainConfig::default();
    let config = TrainConfig {
        learning_rate: s.get(a.learning_rate, "learning_rate", td.learning_rate)?,
        rho: s.get(a.rho, "rho", td.rho)?,
        batch_size: s.get(a.batch_size, "batch_size", td.batch_size)?,
        patience: s.get(a.patience, "patience", td.patience)?,
        validation_fraction: s.get(a.validation_fraction, "validation_fraction", td.validation_fraction)?,
        max_epochs: s.get(a.max_epochs, "max_epochs", td.max_epochs)?,
        clip_norm: s.opt(a.clip_norm, "clip_norm")?,
        threads: s.get(a.threads, "threads", td.threads)?,
        seed,
        ..td
    };
    s.finish()?;

    if embeddings.is_some() && random_init {
        return Err(CliError::config(
            "--embeddings and --random-init are mutually exclusive",
        ));
    }
    if model.augment && features.is_none() {
        return Err(CliError::config("--augment requires --features <dir>"));
    }
    must_exist(&train_dir, "training directory")?;
    for (p, what) in [
        (&test_dir, "test directory"),
        (&features, "feature directory"),
        (&embeddings, "embeddings file"),
    ] {
        if let Some(p) = p {
            must_exist(p, what)?;
        }
    }
    model.validate()?;
    config.validate()?;

    let feature_dir = if model.augment { features.as_deref() } else { None };
    let docs = training_documents(&train_dir, feature_dir)?;
    if docs.is_empty() {
        return Err(CliError::data(format!("no documents in {}", train_dir.display())));
    }
    check_features(&model, &docs)?;
    let (train_docs, val_docs) = split_train_val(&docs, config.validation_fraction, config.seed)?;

    let tagger = match &embeddings {
        Some(path) => {
            let (vocab, emb) = load_embeddings(path)?;
            if word_dim.is_some_and(|d| d != emb.dim()) {
                return Err(CliError::config(format!(
                    "--word-dim {} does not match the {}-dimensional embeddings",
                    word_dim.unwrap_or_default(),
                    emb.dim()
                )));
            }
            model.word_dim = emb.dim();
            Tagger::new(model, vocab, emb.values)?
        }
        None => {
            model.word_dim = word_dim.unwrap_or(md.word_dim);
            random_init_tagger(model, &train_docs)?
        }
    };
    eprintln!(
        "training on {} documents ({} held out for validation), input {} -> hidden {}",
        train_docs.len(),
        val_docs.len(),
        tagger.config.input_dim(),
        tagger.config.hidden()
    );

    let (tagger, hist) = fit(tagger, &train_docs, &val_docs, &config)?;
    save_checkpoint(&tagger, &checkpoint)?;
    write_file(&history, hist.to_json().as_bytes())?;
    for e in &hist.epochs {
        eprintln!(
            "epoch {:>3}  nll {:>10.4}  val lenient F1 {:>6.2}{}",
            e.epoch,
            e.train_nll,
            e.val_f1_lenient_micro,
            if e.is_best { "  *" } else { "" }
        );
    }
    let best = hist.best_epoch().unwrap_or(0);
    println!(
        "best epoch {best} of {}; checkpoint {}; history {}",
        hist.epochs.len(),
        checkpoint.display(),
        history.display()
    );

    if let Some(dir) = test_dir {
        let test_docs = training_documents(&dir, feature_dir)?;
        println!("test lenient micro F1: {:.2}", lenient_micro_f1(&tagger, &test_docs));
    }
    Ok(())
}

pub fn predict(a: &PredictArgs, s: &Settings) -> CliResult<()> {
    let checkpoint = required(s, &a.checkpoint, "checkpoint")?;
    let input = required(s, &a.input, "input")?;
    let out = required(s, &a.out, "out")?;
    let features = path_setting(s, &a.features, "features")?;
    s.finish()?;
    must_exist(&checkpoint, "checkpoint")?;
    must_exist(&input, "input directory")?;
    if let Some(f) = &features {
        must_exist(f, "feature directory")?;
    }

    let tagger = load_checkpoint(&checkpoint)?;
    let ids = stems(&input, "txt")?;
    let mut missing = 0;
    let mut total = 0;
    for id in &ids {
        let text = read_text(&input.join(format!("{id}.txt")))?;
        let rows = if tagger.config.augment {
            sidecar(features.as_deref(), id)?
        } else {
            None
        };
        if tagger.config.augment && rows.is_none() {
            missing += 1;
        }
        let mut doc = Document::new(id.as_str(), text.as_str());
        doc.annotations = predict_document(&tagger, &text, rows.as_deref());
        total += doc.annotations.len();
        write_file(&out.join(format!("{id}.ann")), write_standoff(&doc).as_bytes())?;
    }
    if missing > 0 {
        eprintln!("warning: {missing} documents had no feature sidecar; their tokens use the outside tag");
    }
    println!("wrote {} .ann files ({total} entities) to {}", ids.len(), out.display());
    Ok(())
}

pub fn evaluate(a: &EvaluateArgs, s: &Settings) -> CliResult<()> {
    let gold_dir = required(s, &a.gold, "gold")?;
    let pred_dir = required(s, &a.pred, "pred")?;
    let report = path_setting(s, &a.report, "report")?;
    let pairing = if s.switch(a.bipartite, a.no_bipartite, "bipartite", false)? {
        Pairing::Bipartite
    } else {
        Pairing::Greedy
    };
    s.finish()?;
    must_exist(&gold_dir, "gold directory")?;
    must_exist(&pred_dir, "prediction directory")?;

    let gold_ids = stems(&gold_dir, "ann")?;
    let pred_ids = stems(&pred_dir, "ann")?;
    let only = |a: &[String], b: &[String]| a.iter().filter(|x| !b.contains(x)).cloned().collect::<Vec<_>>();
    let (gold_only, pred_only) = (only(&gold_ids, &pred_ids), only(&pred_ids, &gold_ids));
    if !gold_only.is_empty() || !pred_only.is_empty() {
        let mut parts = Vec::new();
        if !gold_only.is_empty() {
            parts.push(format!("only in gold: {}", gold_only.join(", ")));
        }
        if !pred_only.is_empty() {
            parts.push(format!("only in predictions: {}", pred_only.join(", ")));
        }
        return Err(CliError::data(format!("document sets differ; {}", parts.join("; "))));
    }

    let mut pairs: Vec<(Vec<Annotation>, Vec<Annotation>)> = Vec::new();
    let mut confusion = TokenConfusion::default();
    let mut warnings = 0;
    for id in &gold_ids {
        let text = read_text(&gold_dir.join(format!("{id}.txt")))?;
        let gold = read_standoff(id, &text, &read_text(&gold_dir.join(format!("{id}.ann")))?)?;
        let pred = read_standoff(id, &text, &read_text(&pred_dir.join(format!("{id}.ann")))?)?;
        warnings += gold.warnings.len() + pred.warnings.len();
        let tokens = tokenize(&text);
        let g = spans_to_iob(&tokens, &gold.document.annotations);
        let p = spans_to_iob(&tokens, &pred.document.annotations);
        confusion.add(&token_confusion(&g.labels, &p.labels)?);
        pairs.push((gold.document.annotations, pred.document.annotations));
    }
    if warnings > 0 {
        eprintln!("warning: {warnings} annotation warnings while reading");
    }

    let mut records = serde_json::Map::new();
    let mut lenient_f1 = 0.0;
    for mode in [MatchMode::Strict, MatchMode::Lenient] {
        let counts = count_corpus(pairs.iter().map(|(g, p)| (g.as_slice(), p.as_slice())), mode, pairing);
        let r = score(&counts, mode);
        let (text, record) = render_report(&r, &confusion);
        println!("{text}");
        if mode == MatchMode::Lenient {
            lenient_f1 = record.micro.scores.f1;
        }
        let key = if mode == MatchMode::Strict { "strict" } else { "lenient" };
        records.insert(
            key.into(),
            serde_json::to_value(&record).map_err(|e| CliError::data(e.to_string()))?,
        );
    }
    if let Some(path) = report {
        let json = serde_json::to_string_pretty(&records).map_err(|e| CliError::data(e.to_string()))?;
        write_file(&path, format!("{json}\n").as_bytes())?;
    }
    println!("lenient micro F1: {lenient_f1:.2}");
    Ok(())
}
