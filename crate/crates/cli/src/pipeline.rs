//! Pipeline stages. Each stage reads the files earlier stages wrote into the run directory,
//! plus the configuration, and writes its own files there.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{anyhow, bail, Context, Result};
use ce_core::aggregation::{
    read_references, read_user_responses, select_representatives, write_references, ReferencePair,
    ReferenceTexts,
};
use ce_core::corpus::{
    dedupe, ingest_source, read_include_list, read_questions_csv, sample_subset, sample_with_includes,
    write_questions_csv, FilterConfig, ForumSource, JsonlFixtureSource, RedditSource,
    DEFAULT_SUBREDDITS,
};
use ce_core::finetune::{evaluate_before_after, format_pairs, train_adapter, TinyCausalLm};
use ce_core::harness::{
    collect_responses, load_responses, responses_file_name, save_responses, CollectOptions, LocalModelBackend,
    ProviderConfig,
};
use ce_core::metrics::{
    calibrate_weights, evaluate_model, read_metrics_csv, read_per_question_csv, sensitivity_analysis,
    write_metrics_csv, write_per_question_csv, CeInputs, EvaluationContext, Improvement, KeywordLexicon,
    LexicalProfile, QuestionMetrics, SensitivityReport,
};
use ce_core::providers::{
    embedder_from_selector, sentiment_from_selector, CachedEmbedder, CachedSentiment, Embedder, FeatureCache,
    ProviderOptions, SentimentScorer,
};
use ce_core::report::{build_report, project_embeddings, sha256_file, ModelStats, ReportInputs, RunManifest, StatsDocument};
use ce_core::stats::{bootstrap_ci, wilcoxon_signed_rank, BOOTSTRAP_METHOD};
use ce_core::text::normalize_key;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{adapted_name, RunConfig, SourceKind};

pub const MANIFEST: &str = "manifest.json";
pub const QUESTIONS: &str = "questions.csv";
pub const QUESTIONS_EVAL: &str = "questions_eval.csv";
pub const QUESTIONS_HELDOUT: &str = "questions_heldout.csv";
pub const SCRAPE_REPORT: &str = "scrape_report.json";
pub const REFERENCES: &str = "references.csv";
pub const RESPONSES_DIR: &str = "responses";
pub const METRICS: &str = "metrics.csv";
pub const PER_QUESTION: &str = "per_question.csv";
pub const STATS: &str = "stats.json";
pub const CALIBRATION: &str = "calibration.json";
pub const FINETUNE_DIR: &str = "finetune";
pub const IMPROVEMENT: &str = "improvement.json";
pub const CACHE_FILE: &str = "cache/features.bin";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Scrape,
    Aggregate,
    Collect,
    Evaluate,
    Calibrate,
    Finetune,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::Scrape,
        Stage::Aggregate,
        Stage::Collect,
        Stage::Evaluate,
        Stage::Calibrate,
        Stage::Finetune,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Scrape => "scrape",
            Stage::Aggregate => "aggregate",
            Stage::Collect => "collect",
            Stage::Evaluate => "evaluate",
            Stage::Calibrate => "calibrate",
            Stage::Finetune => "finetune",
            Stage::Report => "report",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

enum Outcome {
    Done(String),
    Skipped(String),
}

/// Command-line overrides shared by every subcommand.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn now_unix() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

fn mkdir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("{}", dir.display()))
}

/// One run directory, `<out>/<run-id>/`, and its manifest.
pub struct Run {
    pub cfg: RunConfig,
    pub seed: u64,
    pub dir: PathBuf,
    manifest: RunManifest,
    cache: Option<Arc<FeatureCache>>,
}

impl Run {
    pub fn open(config_path: &Path, overrides: &Overrides) -> Result<Self> {
        let (cfg, bytes) = RunConfig::load(config_path)?;
        let seed = overrides.seed.unwrap_or(cfg.seed);
        let config_sha256 = hex(&Sha256::digest(&bytes));
        let run_id = RunManifest::run_id(&config_sha256, seed);
        let out = overrides.out.clone().unwrap_or_else(|| cfg.out.clone());
        let dir = out.join(&run_id);
        mkdir(&dir)?;
        let manifest_path = dir.join(MANIFEST);
        let mut manifest = if manifest_path.is_file() {
            RunManifest::read(&manifest_path)?
        } else {
            RunManifest { started_unix: now_unix(), ..RunManifest::default() }
        };
        manifest.run_id = run_id;
        manifest.seed = seed;
        manifest.config_sha256 = config_sha256;
        let cache = cfg.providers.cache.then(|| Arc::new(FeatureCache::open(dir.join(CACHE_FILE))));
        let mut run = Run { cfg, seed, dir, manifest, cache };
        run.describe_inputs()?;
        Ok(run)
    }

    pub fn run_id(&self) -> &str {
        &self.manifest.run_id
    }

    fn describe_inputs(&mut self) -> Result<()> {
        let mut inputs = BTreeMap::new();
        for (key, path) in self.cfg.input_files() {
            if path.is_file() {
                inputs.insert(key, sha256_file(&path)?);
            }
        }
        self.manifest.input_sha256 = inputs;
        self.manifest.lexicon_sha256 = self.lexicon()?.fingerprint();
        let cfg = &self.cfg;
        let mut providers = BTreeMap::new();
        providers.insert("sentiment".to_string(), self.sentiment()?.identity());
        providers.insert("embedding".to_string(), self.embedder()?.identity());
        for m in &cfg.models {
            let key = format!("model.{}", m.name);
            let known = self.manifest.providers.get(&key).cloned();
            providers.insert(key, known.unwrap_or_else(|| format!("{:?}", m.kind).to_lowercase()));
        }
        self.manifest.providers = providers;
        let mut settings = BTreeMap::new();
        settings.insert("generation".into(), json(&cfg.generation));
        settings.insert("weights".into(), json(&cfg.weights.as_array()));
        settings.insert("collect".into(), json(&cfg.collect));
        settings.insert("bootstrap_method".into(), BOOTSTRAP_METHOD.into());
        settings.insert("stats".into(), json(&cfg.stats));
        settings.insert("test".into(), "wilcoxon signed-rank, two-sided".into());
        settings.insert("report".into(), json(&cfg.report));
        if let Some(c) = &cfg.calibration {
            settings.insert("calibration.correlation".into(), json(&c.correlation));
        }
        if let Some(f) = cfg.active_finetune() {
            settings.insert("finetune.lora".into(), json(&f.lora));
            settings.insert("finetune.train".into(), json(&self.train_config(f)));
            settings.insert("finetune.generation".into(), json(&f.generation));
            settings.insert("finetune.test_size".into(), f.test_size.to_string());
        }
        self.manifest.settings = settings;
        Ok(())
    }

    fn train_config(&self, f: &crate::config::FinetuneSection) -> ce_core::finetune::TrainConfig {
        let mut t = f.train.clone();
        t.seed = self.seed;
        t
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn lexicon(&self) -> Result<KeywordLexicon> {
        Ok(match &self.cfg.lexicons {
            Some(l) => KeywordLexicon::from_files(&l.latin_american, &l.western)?,
            None => KeywordLexicon::default(),
        })
    }

    fn provider_options(&self) -> ProviderOptions {
        let p = &self.cfg.providers;
        ProviderOptions {
            sentiment_endpoint: p.sentiment_endpoint.clone(),
            embedding_endpoint: p.embedding_endpoint.clone(),
            auth_env: p.auth_env.clone(),
        }
    }

    fn sentiment(&self) -> Result<Box<dyn SentimentScorer<f64>>> {
        let inner = sentiment_from_selector::<f64>(&self.cfg.providers.sentiment, &self.provider_options())?;
        Ok(match &self.cache {
            Some(c) => Box::new(CachedSentiment::new(inner, c.clone())),
            None => inner,
        })
    }

    fn embedder(&self) -> Result<Box<dyn Embedder<f64>>> {
        let inner = embedder_from_selector::<f64>(&self.cfg.providers.embedding, &self.provider_options())?;
        Ok(match &self.cache {
            Some(c) => Box::new(CachedEmbedder::new(inner, c.clone())),
            None => inner,
        })
    }

    fn references(&self, scorer: &dyn SentimentScorer<f64>) -> Result<Vec<ReferencePair<f64>>> {
        read_references(self.path(REFERENCES))?
            .into_iter()
            .map(|t| ReferencePair::from_texts(t, scorer).map_err(Into::into))
            .collect()
    }

    fn responses_path(&self, model: &str) -> PathBuf {
        self.dir.join(RESPONSES_DIR).join(responses_file_name(model))
    }

    /// Runs one stage and records its status, the artifact hashes and the manifest.
    pub fn run_stage(&mut self, stage: Stage) -> Result<()> {
        let result = match stage {
            Stage::Scrape => self.scrape(),
            Stage::Aggregate => self.aggregate(),
            Stage::Collect => self.collect(),
            Stage::Evaluate => self.evaluate(),
            Stage::Calibrate => self.calibrate(),
            Stage::Finetune => self.finetune(),
            Stage::Report => self.report(),
        };
        let status = match &result {
            Ok(Outcome::Done(summary)) => {
                println!("{stage}: {summary}");
                "ok".to_string()
            }
            Ok(Outcome::Skipped(why)) => {
                println!("{stage}: skipped ({why})");
                format!("skipped: {why}")
            }
            Err(e) => format!("failed: {e:#}"),
        };
        if let Some(c) = &self.cache {
            c.save()?;
        }
        self.manifest.stages.retain(|s| s.stage != stage.name());
        self.manifest.stage(stage.name(), status);
        self.manifest.artifacts.clear();
        self.manifest.record_artifacts(&self.dir)?;
        self.manifest.finished_unix = now_unix();
        self.manifest.write(&self.path(MANIFEST))?;
        result.map(|_| ()).with_context(|| format!("{stage} failed"))
    }

    pub fn run_all(&mut self) -> Result<()> {
        for stage in Stage::ALL {
            self.run_stage(stage)?;
        }
        Ok(())
    }

    fn scrape(&mut self) -> Result<Outcome> {
        let corpus = &self.cfg.corpus;
        let (source, subreddits): (Box<dyn ForumSource>, Vec<String>) = match corpus.source {
            SourceKind::Fixture => {
                let posts = corpus.posts.as_ref().expect("validated");
                let src = JsonlFixtureSource::open(posts)?;
                let subs = corpus.subreddits.clone().unwrap_or_else(|| src.subreddits());
                (Box::new(src), subs)
            }
            SourceKind::Reddit => {
                let subs = corpus
                    .subreddits
                    .clone()
                    .unwrap_or_else(|| DEFAULT_SUBREDDITS.iter().map(|s| s.to_string()).collect());
                (Box::new(RedditSource::from_env()), subs)
            }
        };
        let outcome = ingest_source(source.as_ref(), &subreddits, &FilterConfig::default(), corpus.parallelism)?;
        let records = dedupe(outcome.records);
        write_questions_csv(self.path(QUESTIONS), &records)?;
        let includes = match &corpus.include_list {
            Some(p) => read_include_list(p)?,
            None => Vec::new(),
        };
        let (subset, rest) = match corpus.subset_size {
            Some(n) => sample_with_includes(&records, &includes, n, self.seed)?,
            None => (records.clone(), Vec::new()),
        };
        write_questions_csv(self.path(QUESTIONS_EVAL), &subset)?;
        write_questions_csv(self.path(QUESTIONS_HELDOUT), &rest)?;
        #[derive(Serialize)]
        struct ScrapeReport<'a> {
            subreddits: &'a [String],
            fetched: usize,
            accepted: usize,
            rejected: usize,
            malformed: usize,
            unique_questions: usize,
            evaluated: usize,
            held_out: usize,
        }
        let r = outcome.report;
        let report = ScrapeReport {
            subreddits: &subreddits,
            fetched: r.fetched,
            accepted: r.accepted,
            rejected: r.rejected,
            malformed: r.malformed,
            unique_questions: records.len(),
            evaluated: subset.len(),
            held_out: rest.len(),
        };
        write_json(&self.path(SCRAPE_REPORT), &report)?;
        Ok(Outcome::Done(format!(
            "{} unique questions from {} posts; {} evaluated, {} held out",
            records.len(),
            r.fetched,
            subset.len(),
            rest.len()
        )))
    }

    fn aggregate(&mut self) -> Result<Outcome> {
        let pools = read_user_responses(&self.cfg.references.user_responses)?;
        let embedder = self.embedder()?;
        let scorer = self.sentiment()?;
        let refs = pools
            .iter()
            .map(|p| select_representatives(p, embedder.as_ref(), scorer.as_ref()).map(|r| r.texts()))
            .collect::<ce_core::Result<Vec<ReferenceTexts>>>()?;
        write_references(self.path(REFERENCES), &refs)?;
        Ok(Outcome::Done(format!("{} reference pairs", refs.len())))
    }

    fn collect(&mut self) -> Result<Outcome> {
        let questions = read_questions_csv(self.path(QUESTIONS_EVAL))?;
        mkdir(&self.dir.join(RESPONSES_DIR))?;
        let options = CollectOptions { parallelism: self.cfg.collect.parallelism, retries: self.cfg.collect.retries };
        let mut lines = Vec::new();
        let models: Vec<ProviderConfig> = self.cfg.models.clone();
        for m in &models {
            let backend = m.build(self.seed).with_context(|| format!("model {:?}", m.name))?;
            let params = m.generation_params(self.cfg.generation)?;
            let set = collect_responses(backend.as_ref(), &questions, &params, options)
                .with_context(|| format!("model {:?}", m.name))?;
            save_responses(&set, self.responses_path(&m.name))?;
            self.manifest.providers.insert(format!("model.{}", m.name), backend.describe());
            lines.push(format!("{}: {}", m.name, set.missing_summary()));
        }
        Ok(Outcome::Done(lines.join("; ")))
    }

    fn evaluate(&mut self) -> Result<Outcome> {
        let embedder = self.embedder()?;
        let scorer = self.sentiment()?;
        let lexicon = self.lexicon()?;
        let refs = self.references(scorer.as_ref())?;
        let ctx = EvaluationContext {
            embedder: embedder.as_ref(),
            sentiment: scorer.as_ref(),
            lexicon: &lexicon,
            weights: self.cfg.weights,
        };
        let mut rows = Vec::new();
        let mut per_question = Vec::new();
        for m in &self.cfg.models {
            let set = load_responses(self.responses_path(&m.name))?;
            let ev = evaluate_model(&set, &refs, &ctx).with_context(|| format!("model {:?}", m.name))?;
            rows.push(ev.row);
            per_question.push((m.name.clone(), ev.per_question));
        }
        write_metrics_csv(self.path(METRICS), &rows)?;
        write_per_question_csv(self.path(PER_QUESTION), &per_question)?;
        let stats = self.statistics(&per_question);
        stats.write(&self.path(STATS))?;
        let summary = rows.iter().map(|r| format!("{} CE {:.3}", r.model_name, r.ce)).collect::<Vec<_>>();
        Ok(Outcome::Done(summary.join(", ")))
    }

    fn statistics(&self, per_question: &[(String, Vec<QuestionMetrics<f64>>)]) -> StatsDocument {
        let (level, resamples) = (self.cfg.stats.level, self.cfg.stats.resamples);
        let mut models = BTreeMap::new();
        for (name, qs) in per_question {
            let diffs: Vec<f64> = qs.iter().map(|q| q.user_minus_llm()).collect();
            let v1: Vec<f64> = qs.iter().map(|q| q.sim_v1).collect();
            let v2: Vec<f64> = qs.iter().map(|q| q.sim_v2).collect();
            let note = |what: &str, e: ce_core::Error| log::warn!("{name}: no {what}: {e}");
            let ci = |v: &[f64], what: &str| bootstrap_ci(v, level, resamples, self.seed).map_err(|e| note(what, e)).ok();
            models.insert(
                name.clone(),
                ModelStats {
                    wilcoxon: wilcoxon_signed_rank(&diffs).map_err(|e| note("signed-rank test", e)).ok(),
                    sem_sim_v1: ci(&v1, "V1 interval"),
                    sem_sim_v2: ci(&v2, "V2 interval"),
                },
            );
        }
        StatsDocument {
            test: "wilcoxon_signed_rank_two_sided".into(),
            bootstrap_method: BOOTSTRAP_METHOD.into(),
            models,
        }
    }

    fn calibrate(&mut self) -> Result<Outcome> {
        let Some(cal) = self.cfg.calibration.clone() else {
            return Ok(Outcome::Skipped("no [calibration] section".into()));
        };
        let per_question = read_per_question_csv::<f64>(self.path(PER_QUESTION))?;
        let annotations = read_annotations(&cal.annotations)?;
        let mut lookup: HashMap<(String, String), &QuestionMetrics<f64>> = HashMap::new();
        for (model, qs) in &per_question {
            for q in qs {
                lookup.insert((model.clone(), normalize_key(&q.question)), q);
            }
        }
        let mut items = Vec::new();
        let mut scores = Vec::new();
        let mut unmatched = 0;
        for a in &annotations {
            match lookup.get(&(a.model.clone(), normalize_key(&a.question))) {
                Some(q) => {
                    items.push(CeInputs::new(q.keyword_freq, q.delta_s, (q.sim_v1 + q.sim_v2) / 2.0));
                    scores.push(a.score);
                }
                None => unmatched += 1,
            }
        }
        if unmatched > 0 {
            log::warn!("{unmatched} annotations have no present response and were dropped");
        }
        let calibration = calibrate_weights(&items, &scores, cal.correlation)?;
        let sensitivity = sensitivity_analysis(&items, &self.cfg.weights)
            .map_err(|e| log::warn!("no sensitivity analysis: {e}"))
            .ok();
        let doc = CalibrationDoc {
            correlation_method: cal.correlation,
            n_items: items.len(),
            n_unmatched: unmatched,
            selected: calibration.weights.as_array(),
            correlation: calibration.correlation,
            configured: self.cfg.weights.as_array(),
            grid: calibration
                .table
                .iter()
                .map(|(w, r)| GridPoint { weights: w.as_array(), correlation: *r })
                .collect(),
            sensitivity,
        };
        write_json(&self.path(CALIBRATION), &doc)?;
        let [a1, a2, a3] = doc.selected;
        Ok(Outcome::Done(format!(
            "selected ({a1}, {a2}, {a3}) with r = {:.4} over {} items",
            doc.correlation, doc.n_items
        )))
    }

    fn finetune(&mut self) -> Result<Outcome> {
        let Some(f) = self.cfg.active_finetune().cloned() else {
            return Ok(Outcome::Skipped("fine-tuning not configured".into()));
        };
        let model = match &f.model_path {
            Some(p) => TinyCausalLm::<f64>::load(p)?,
            None => TinyCausalLm::bundled(),
        };
        let eval_questions = read_questions_csv(self.path(QUESTIONS_EVAL))?;
        let trained: std::collections::HashSet<String> =
            eval_questions.iter().map(|q| normalize_key(&q.text)).collect();
        let all_refs = read_references(self.path(REFERENCES))?;
        let train_refs: Vec<ReferenceTexts> =
            all_refs.iter().filter(|r| trained.contains(&normalize_key(&r.question))).cloned().collect();
        let pairs = format_pairs(&train_refs);
        let out = self.dir.join(FINETUNE_DIR);
        mkdir(&out)?;
        let train = self.train_config(&f);
        let outcome = train_adapter(&model, &pairs, &f.lora, &train, Some(&out))?;
        let first = outcome.epochs.first().map_or(f64::NAN, |e| e.train_loss);
        let last = outcome.epochs.last().map_or(f64::NAN, |e| e.train_loss);
        let mut summary = format!(
            "{} training / {} validation pairs, loss {first:.4} -> {last:.4}",
            outcome.train_size, outcome.validation_size
        );
        if f.test_size == 0 {
            return Ok(Outcome::Done(summary));
        }
        let heldout = read_questions_csv(self.path(QUESTIONS_HELDOUT))?;
        let (test, _) = sample_subset(&heldout, f.test_size, self.seed)
            .with_context(|| format!("finetune.test_size = {}", f.test_size))?;
        let embedder = self.embedder()?;
        let scorer = self.sentiment()?;
        let lexicon = self.lexicon()?;
        let refs = self.references(scorer.as_ref())?;
        let ctx = EvaluationContext {
            embedder: embedder.as_ref(),
            sentiment: scorer.as_ref(),
            lexicon: &lexicon,
            weights: self.cfg.weights,
        };
        let params = ProviderConfig {
            name: f.name.clone(),
            kind: ce_core::harness::BackendKind::Local,
            endpoint: None,
            model_path: None,
            adapter_path: None,
            path: None,
            auth_env: None,
            generation: f.generation.clone(),
        }
        .generation_params(self.cfg.generation)?;
        let after_name = adapted_name(&f.name);
        let base = LocalModelBackend::new(&f.name, model.clone(), None, self.seed);
        let adapted = LocalModelBackend::new(&after_name, model, Some(outcome.adapter), self.seed);
        let training_questions: Vec<String> = train_refs.iter().map(|r| r.question.clone()).collect();
        let ba = evaluate_before_after(&base, &adapted, &test, &training_questions, &refs, &ctx, &params)?;
        save_responses(&ba.before_responses, out.join(responses_file_name(&f.name)))?;
        save_responses(&ba.after_responses, out.join(responses_file_name(&after_name)))?;
        write_metrics_csv(out.join(METRICS), &[ba.before.row.clone(), ba.after.row.clone()])?;
        write_per_question_csv(
            out.join(PER_QUESTION),
            &[(f.name.clone(), ba.before.per_question), (after_name, ba.after.per_question)],
        )?;
        write_json(&out.join(IMPROVEMENT), &ba.improvements)?;
        summary.push_str(&format!("; CE {:.3} -> {:.3} on {} held-out questions", ba.before.row.ce, ba.after.row.ce, test.len()));
        Ok(Outcome::Done(summary))
    }

    fn report(&mut self) -> Result<Outcome> {
        let rows = read_metrics_csv::<f64>(self.path(METRICS))?;
        let per_question = read_per_question_csv::<f64>(self.path(PER_QUESTION))?;
        let per_question: Vec<Vec<QuestionMetrics<f64>>> = rows
            .iter()
            .map(|r| {
                per_question.iter().find(|(m, _)| *m == r.model_name).map(|(_, q)| q.clone()).unwrap_or_default()
            })
            .collect();
        let stats = StatsDocument::read(&self.path(STATS))?;
        let lexicon = self.lexicon()?;
        let embedder = self.embedder()?;
        let refs = read_references(self.path(REFERENCES))?;
        let by_question: HashMap<String, &ReferenceTexts> =
            refs.iter().map(|r| (normalize_key(&r.question), r)).collect();
        let eval_questions = read_questions_csv(self.path(QUESTIONS_EVAL))?;
        let eval_refs: Vec<&ReferenceTexts> =
            eval_questions.iter().filter_map(|q| by_question.get(&normalize_key(&q.text)).copied()).collect();
        let v1: Vec<&str> = eval_refs.iter().map(|r| r.v1.as_str()).collect();
        let v2: Vec<&str> = eval_refs.iter().map(|r| r.v2.as_str()).collect();
        let profiles = if eval_refs.is_empty() {
            Vec::new()
        } else {
            vec![LexicalProfile::compute("Resp V1", &v1, &lexicon)?, LexicalProfile::compute("Resp V2", &v2, &lexicon)?]
        };

        let mut sets = Vec::new();
        for r in &rows {
            sets.push((r.model_name.clone(), self.responses_path(&r.model_name)));
        }
        let ft_dir = self.dir.join(FINETUNE_DIR);
        if let Some(f) = self.cfg.active_finetune() {
            for name in [f.name.clone(), adapted_name(&f.name)] {
                let p = ft_dir.join(responses_file_name(&name));
                if p.is_file() {
                    sets.push((name, p));
                }
            }
        }
        let mut projections = Vec::new();
        for (name, path) in &sets {
            let set = load_responses(path)?;
            let mut texts: Vec<String> = Vec::new();
            let mut labels: Vec<String> = Vec::new();
            for rec in &set.records {
                let Some(resp) = rec.response.as_deref() else { continue };
                texts.push(resp.to_string());
                labels.push(name.clone());
                if let Some(r) = by_question.get(&normalize_key(&rec.question)) {
                    texts.extend([r.v1.clone(), r.v2.clone()]);
                    labels.extend(["Resp V1".to_string(), "Resp V2".to_string()]);
                }
            }
            if texts.len() < 3 {
                log::warn!("{name}: too few responses to project");
                continue;
            }
            let embeddings = texts.iter().map(|t| embedder.embed(t)).collect::<ce_core::Result<Vec<_>>>()?;
            for &method in &self.cfg.report.projections {
                let p = project_embeddings(&embeddings, &labels, method, self.seed)?;
                projections.push((name.clone(), p));
            }
        }
        let improvement_path = ft_dir.join(IMPROVEMENT);
        let improvements: Option<Vec<Improvement<f64>>> = if improvement_path.is_file() {
            let text = std::fs::read_to_string(&improvement_path)
                .with_context(|| format!("{}", improvement_path.display()))?;
            Some(serde_json::from_str(&text).with_context(|| format!("{}", improvement_path.display()))?)
        } else {
            None
        };
        let inputs = ReportInputs {
            rows: &rows,
            per_question: &per_question,
            references: &profiles,
            stats: &stats,
            projections: &projections,
            improvements: improvements.as_deref(),
            weights: self.cfg.weights,
        };
        let bundle = build_report(&inputs, &self.dir)?;
        let mut n_files = bundle.files.len();
        let calibration_path = self.path(CALIBRATION);
        if calibration_path.is_file() {
            write_calibration_table(&calibration_path, &self.dir.join("tables/weight_calibration.csv"))?;
            n_files += 1;
        }
        Ok(Outcome::Done(format!("{n_files} tables, figures and projection files")))
    }
}

fn write_json<S: Serialize + ?Sized>(path: &Path, value: &S) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    std::fs::write(path, text).with_context(|| format!("{}", path.display()))
}

#[derive(Debug, Clone, Serialize, serde::Deserialize)]
struct GridPoint {
    weights: [f64; 3],
    correlation: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
struct CalibrationDoc {
    correlation_method: ce_core::metrics::Correlation,
    n_items: usize,
    n_unmatched: usize,
    selected: [f64; 3],
    correlation: f64,
    configured: [f64; 3],
    grid: Vec<GridPoint>,
    sensitivity: Option<SensitivityReport<f64>>,
}

fn write_calibration_table(json_path: &Path, out: &Path) -> Result<()> {
    #[derive(serde::Deserialize)]
    struct Doc {
        selected: [f64; 3],
        grid: Vec<GridPoint>,
    }
    let text = std::fs::read_to_string(json_path).with_context(|| format!("{}", json_path.display()))?;
    let doc: Doc = serde_json::from_str(&text).with_context(|| format!("{}", json_path.display()))?;
    let mut w = csv::Writer::from_path(out).with_context(|| format!("{}", out.display()))?;
    w.write_record(["a1", "a2", "a3", "Correlation", "Selected"])?;
    for g in &doc.grid {
        let [a1, a2, a3] = g.weights;
        let r = g.correlation.map_or_else(|| "n/a".to_string(), |r| format!("{r:.6}"));
        let chosen = if g.weights == doc.selected { "yes" } else { "" };
        w.write_record([format!("{a1:.1}"), format!("{a2:.1}"), format!("{a3:.1}"), r, chosen.to_string()])?;
    }
    w.flush().with_context(|| format!("{}", out.display()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Annotation {
    pub model: String,
    pub question: String,
    pub score: f64,
}

/// Reads `Model,Question,Annotation` rows.
pub fn read_annotations(path: &Path) -> Result<Vec<Annotation>> {
    let mut rdr = csv::Reader::from_path(path).with_context(|| format!("{}", path.display()))?;
    let header = rdr.headers().with_context(|| format!("{}", path.display()))?.clone();
    if header.iter().collect::<Vec<_>>() != ["Model", "Question", "Annotation"] {
        bail!("{}: expected header Model,Question,Annotation", path.display());
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.with_context(|| format!("{}", path.display()))?;
        let line = rec.position().map_or(0, |p| p.line());
        let score: f64 = rec[2]
            .trim()
            .parse()
            .map_err(|_| anyhow!("{}: line {line}: annotation {:?} is not a number", path.display(), &rec[2]))?;
        out.push(Annotation { model: rec[0].to_string(), question: rec[1].to_string(), score });
    }
    Ok(out)
}

fn json<S: Serialize + ?Sized>(value: &S) -> String {
    serde_json::to_string(value).expect("settings serialize")
}
