//! Acceptance suite: one PASS/FAIL/SKIP line per criterion.
//!
//! Runs as a plain binary (`harness = false`) and exits non-zero when any criterion fails.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use ce_core::aggregation::{read_references, ReferencePair};
use ce_core::corpus::{Language, QuestionRecord};
use ce_core::finetune::{train_adapter, LoraAdapter, LoraConfig, PromptPair, TinyCausalLm, TrainConfig};
use ce_core::harness::{
    collect_responses, load_responses, BackendError, CollectOptions, EchoBackend, GenerationParams,
    ModelBackend, ResponseRecord,
};
use ce_core::metrics::{
    avg_length, calibrate_weights, ce_score, cooccurrence_rate, cosine_similarity, evaluate_model,
    keyword_frequency, semantic_similarity, ttr, weight_grid, CeInputs, CeWeights, Correlation,
    EvaluationContext, KeywordLexicon, LexicalProfile, MetricRow,
};
use ce_core::providers::{
    embedder_from_selector, EmbeddingVector, HashedBagOfWords, LexiconSentiment, ProviderOptions,
    SentimentScore,
};
use ce_core::report::{build_report, ReportInputs, StatsDocument, REFERENCE_BEFORE};
use ce_core::stats::{bootstrap_ci, wilcoxon_signed_rank};
use ce_core::text::normalize_key;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

type Check = Result<Outcome, String>;

type Criterion = (&'static str, fn() -> Check, Duration);

fn pass(detail: impl Into<String>) -> Check {
    Ok(Outcome::Pass(detail.into()))
}

fn fail(detail: impl Into<String>) -> Check {
    Ok(Outcome::Fail(detail.into()))
}

fn within_budget(outcome: Outcome, elapsed: Duration, budget: Duration) -> Outcome {
    match outcome {
        Outcome::Pass(d) if elapsed > budget => {
            Outcome::Fail(format!("{d}; took {elapsed:.2?}, budget {budget:?}"))
        }
        o => o,
    }
}

fn w(a1: f64, a2: f64, a3: f64) -> CeWeights<f64> {
    CeWeights::new(a1, a2, a3).expect("weights sum to one")
}

fn row(kf: f64, ds: f64, v1: f64, v2: f64) -> MetricRow<f64> {
    MetricRow {
        model_name: "case".into(),
        keyword_freq: kf,
        delta_s: ds,
        sem_sim_v1: v1,
        sem_sim_v2: v2,
        ttr: 0.5,
        avg_length_words: 10.0,
        cooccurrence_rate: 0.0,
        ce: 0.0,
        n_present: 1,
        n_missing: 0,
    }
}

fn ce_by_hand(a: [f64; 3], kf: f64, ds: f64, v1: f64, v2: f64) -> f64 {
    a[0] * kf + a[1] * (1.0 - ds) + a[2] * ((v1 + v2) / 2.0)
}

fn criterion_ce_arithmetic() -> Check {
    let cases: [([f64; 3], [f64; 4], f64); 20] = [
        ([0.3, 0.3, 0.4], [0.0, 1.0, 0.0, 0.0], 0.0),
        ([0.3, 0.3, 0.4], [1.0, 0.0, 1.0, 1.0], 1.0),
        ([0.1, 0.4, 0.5], [0.0, 1.0, 0.0, 0.0], 0.0),
        ([0.5, 0.1, 0.4], [1.0, 0.0, 1.0, 1.0], 1.0),
        ([0.3, 0.3, 0.4], [0.5, 0.5, 0.5, 0.5], 0.5),
        ([0.3, 0.3, 0.4], [0.2, 0.4, 0.6, 0.2], 0.3 * 0.2 + 0.3 * 0.6 + 0.4 * 0.4),
        ([0.2, 0.3, 0.5], [0.1, 0.2, 0.3, 0.5], 0.02 + 0.24 + 0.2),
        ([0.4, 0.4, 0.2], [0.25, 1.5, 0.0, 0.0], 0.1 - 0.2),
        ([0.1, 0.1, 0.8], [0.0, 2.0, -1.0, -1.0], -0.1 - 0.8),
        ([0.5, 0.4, 0.1], [1.0, 0.0, -1.0, 1.0], 0.9),
        ([0.2, 0.5, 0.3], [0.05, 0.3, 0.9, 0.7], 0.01 + 0.35 + 0.24),
        ([0.3, 0.2, 0.5], [0.6, 0.8, 0.4, 0.2], 0.18 + 0.04 + 0.15),
        ([0.4, 0.1, 0.5], [0.15, 0.05, 0.25, 0.35], 0.06 + 0.095 + 0.15),
        ([0.1, 0.5, 0.4], [0.9, 1.0, 0.1, 0.1], 0.09 + 0.0 + 0.04),
        ([0.3, 0.4, 0.3], [0.3, 0.3, 0.3, 0.3], 0.09 + 0.28 + 0.09),
        ([0.2, 0.2, 0.6], [0.7, 0.6, 0.8, 0.6], 0.14 + 0.08 + 0.42),
        ([0.5, 0.3, 0.2], [0.02, 0.98, 0.45, 0.55], 0.01 + 0.006 + 0.1),
        ([0.4, 0.3, 0.3], [0.125, 0.75, 0.5, 0.25], 0.05 + 0.075 + 0.1125),
        ([0.1, 0.3, 0.6], [0.0, 0.0, 0.0, 0.0], 0.3),
        ([0.3, 0.3, 0.4], [0.111, 0.979, 0.356, 0.356], 0.182),
    ];
    let mut worst = 0.0f64;
    for (a, [kf, ds, v1, v2], hand) in cases {
        let weights = w(a[0], a[1], a[2]);
        let got = ce_score(&row(kf, ds, v1, v2).ce_inputs(), &weights);
        let formula = ce_by_hand(a, kf, ds, v1, v2);
        worst = worst.max((got - hand).abs()).max((got - formula).abs());
    }
    if worst > 1e-12 {
        return fail(format!("20-case battery: worst deviation {worst:e}"));
    }

    let [kf, ds, sim] = REFERENCE_BEFORE.0;
    let reference_ce = ce_score(&CeInputs::new(kf, ds, sim), &w(0.3, 0.3, 0.4));
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let rows = [row(kf, ds, sim, sim)];
    let inputs = ReportInputs {
        rows: &rows,
        per_question: &[Vec::new()],
        references: &[],
        stats: &StatsDocument::default(),
        projections: &[],
        improvements: None,
        weights: w(0.3, 0.3, 0.4),
    };
    build_report(&inputs, dir.path()).map_err(|e| e.to_string())?;
    let check = fs::read_to_string(dir.path().join("tables/ce_reference_check.csv")).map_err(|e| e.to_string())?;
    let surfaced = check
        .lines()
        .any(|l| l.starts_with("reference before fine-tuning") && l.contains(",0.49,"));
    let detail = format!(
        "battery worst {worst:.1e}; components (0.111, 0.979, 0.356) give CE {reference_ce:.6}, expected 0.1818 ± 1e-4; report lists reported 0.49: {surfaced}"
    );
    if (reference_ce - 0.1818).abs() <= 1e-4 && surfaced {
        pass(detail)
    } else {
        fail(detail)
    }
}

fn criterion_calibration() -> Check {
    let grid = weight_grid::<f64>();
    if grid.len() != 18 {
        return fail(format!("grid has {} triples", grid.len()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let items: Vec<CeInputs<f64>> = (0..40)
        .map(|_| CeInputs::new(rng.random_range(0.0..0.3), rng.random_range(0.0..1.5), rng.random_range(0.0..0.8)))
        .collect();
    let planted = [0.3, 0.3, 0.4];
    let annotations: Vec<f64> = items
        .iter()
        .map(|i| planted[0] * i.keyword_freq + planted[1] * (1.0 - i.delta_s) + planted[2] * i.sem_sim)
        .collect();
    let cal = calibrate_weights(&items, &annotations, Correlation::Pearson).map_err(|e| e.to_string())?;
    let got = cal.weights.as_array();
    let detail = format!("18 triples; recovered {got:?} with r = {:.12}", cal.correlation);
    if got.iter().zip(planted).all(|(g, p)| (g - p).abs() < 1e-12) {
        pass(detail)
    } else {
        fail(detail)
    }
}

/// Two-sided p-value by listing every sign assignment; ranks by direct counting.
fn wilcoxon_brute_force(diffs: &[f64]) -> f64 {
    let d: Vec<f64> = diffs.iter().copied().filter(|x| *x != 0.0).collect();
    let n = d.len();
    let ranks: Vec<f64> = d
        .iter()
        .map(|x| {
            let below = d.iter().filter(|y| y.abs() < x.abs()).count() as f64;
            let equal = d.iter().filter(|y| y.abs() == x.abs()).count() as f64;
            below + (equal + 1.0) / 2.0
        })
        .collect();
    let observed: f64 = ranks.iter().zip(&d).filter(|(_, x)| **x > 0.0).map(|(r, _)| r).sum();
    let (mut le, mut ge) = (0u64, 0u64);
    for mask in 0u32..(1 << n) {
        let s: f64 = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| ranks[i]).sum();
        if s <= observed {
            le += 1;
        }
        if s >= observed {
            ge += 1;
        }
    }
    (2.0 * le.min(ge) as f64 / (1u64 << n) as f64).min(1.0)
}

fn criterion_wilcoxon() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    let mut checked = 0;
    while checked < 200 {
        let n = rng.random_range(1..=10);
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(0..6) as f64).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(0..6) as f64).collect();
        let diffs: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a - b).collect();
        if diffs.iter().all(|d| *d == 0.0) {
            continue;
        }
        let got = wilcoxon_signed_rank(&diffs).map_err(|e| e.to_string())?.p_value;
        worst = worst.max((got - wilcoxon_brute_force(&diffs)).abs());
        checked += 1;
    }
    let p123 = wilcoxon_signed_rank(&[1.0, 2.0, 3.0]).map_err(|e| e.to_string())?.p_value;
    let detail = format!("200 samples, worst |p - brute force| = {worst:.1e}; [1,2,3] gives p = {p123}");
    if worst <= 1e-12 && p123 == 0.25 {
        pass(detail)
    } else {
        fail(detail)
    }
}

fn criterion_bootstrap() -> Check {
    let (mu, sigma, n, trials) = (5.0, 2.0, 30, 500);
    let normal = Normal::new(mu, sigma).map_err(|e| e.to_string())?;
    let mut covered = 0;
    for trial in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(10_000 + trial);
        let sample: Vec<f64> = (0..n).map(|_| normal.sample(&mut rng)).collect();
        let ci = bootstrap_ci(&sample, 0.95, 10_000, trial).map_err(|e| e.to_string())?;
        if ci.lower <= mu && mu <= ci.upper {
            covered += 1;
        }
    }
    let rate = covered as f64 / trials as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let sample: Vec<f64> = (0..n).map(|_| normal.sample(&mut rng)).collect();
    let a = bootstrap_ci(&sample, 0.95, 10_000, 7).map_err(|e| e.to_string())?;
    let b = bootstrap_ci(&sample, 0.95, 10_000, 7).map_err(|e| e.to_string())?;
    let same = a.lower.to_bits() == b.lower.to_bits() && a.upper.to_bits() == b.upper.to_bits();
    let detail = format!("coverage {covered}/{trials} = {:.1}%; repeated seed identical: {same}", rate * 100.0);
    if (0.92..=0.98).contains(&rate) && same {
        pass(detail)
    } else {
        fail(detail)
    }
}

#[allow(clippy::approx_constant)]
fn criterion_metric_oracles() -> Check {
    let lexicon = KeywordLexicon::new(
        ["inca", "quechua", "andes"].map(String::from),
        ["spain", "europe"].map(String::from),
    )
    .map_err(|e| e.to_string())?;
    let terms = &lexicon.latin_american_terms;
    let responses = [
        "The Inca met Spain. Quechua survives! Europe and the Andes traded.",
        "No cultural terms here.",
        "Spain only.",
    ];
    let mut checks: Vec<(&str, f64, f64)> = Vec::new();
    let e = |r: ce_core::Result<f64>| r.map_err(|e| e.to_string());
    checks.push(("keyword_frequency(Inca)", e(keyword_frequency(&["The Inca spoke Quechua"], terms))?, 0.5));
    // 3 regional hits in 11 tokens, then two responses without hits.
    checks.push(("keyword_frequency", e(keyword_frequency(&responses, terms))?, 1.0 / 11.0));
    // 11 + 4 + 2 tokens; 10 + 4 + 1 new types.
    checks.push(("ttr", e(ttr(&responses))?, 15.0 / 17.0));
    checks.push(("avg_length", e(avg_length(&responses))?, 17.0 / 3.0));
    checks.push(("ttr(short)", e(ttr(&["The Inca spoke Quechua", "The Andes and the Inca"]))?, 6.0 / 9.0));
    checks.push(("cooccurrence_rate", e(cooccurrence_rate(&responses, &lexicon))?, 2.0 / 3.0));
    let v = |xs: &[f64]| EmbeddingVector::new(xs.to_vec()).map_err(|e| e.to_string());
    checks.push(("cosine((1,0),(1,1))", e(cosine_similarity(&v(&[1.0, 0.0])?, &v(&[1.0, 1.0])?))?, std::f64::consts::FRAC_1_SQRT_2));
    checks.push(("cosine((3,4),(4,3))", e(cosine_similarity(&v(&[3.0, 4.0])?, &v(&[4.0, 3.0])?))?, 0.96));
    let bad: Vec<String> = checks
        .iter()
        .filter(|(_, got, want)| (got - want).abs() > 1e-12)
        .map(|(name, got, want)| format!("{name}: {got} vs {want}"))
        .collect();
    let cos = checks[6].1;
    if bad.is_empty() && (cos - 0.70710678).abs() < 1e-8 {
        pass(format!("{} oracle values match to 1e-12; cosine = {cos:.8}", checks.len()))
    } else {
        fail(bad.join("; "))
    }
}

/// Echoes the prompt, except for every sixth question, which fails permanently.
struct FlakyBackend {
    echo: EchoBackend,
    failing: BTreeSet<String>,
}

impl ModelBackend for FlakyBackend {
    fn name(&self) -> &str {
        "flaky"
    }

    fn generate(&self, prompt: &str, params: &GenerationParams) -> Result<String, BackendError> {
        if self.failing.contains(prompt) {
            return Err(BackendError::permanent("planted failure"));
        }
        self.echo.generate(prompt, params)
    }
}

fn criterion_harness() -> Check {
    let topics = ["Inca roads", "Andes music", "Quechua words", "mate tea", "tango history", "carnival"];
    let questions: Vec<QuestionRecord> = (0..54)
        .map(|i| {
            let text = format!("What do people think about {} number {i}?", topics[i % topics.len()]);
            QuestionRecord::new(text, format!("https://example.org/q/{i}"), "asklatinamerica", Language::En)
        })
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    let failing: BTreeSet<String> = questions.iter().step_by(6).map(|q| q.text.clone()).collect();
    let backend = FlakyBackend {
        echo: EchoBackend::default(),
        failing,
    };
    let set = collect_responses(&backend, &questions, &GenerationParams::default(), CollectOptions { parallelism: 4, retries: 1 })
        .map_err(|e| e.to_string())?;
    let pct = format!("{:.2}", set.missing_percent());

    let neutral = SentimentScore::new(0.1).map_err(|e| e.to_string())?;
    let mut references: Vec<ReferencePair<f64>> = questions
        .iter()
        .enumerate()
        .map(|(i, q)| {
            ReferencePair::new(&q.text, format!("The {} are great", topics[i % 6]), "I love the Andes and tango", neutral)
        })
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    let extra = "Is the extra question ever answered?";
    references.push(ReferencePair::new(extra, "maybe", "perhaps not", neutral).map_err(|e| e.to_string())?);
    let embedder = HashedBagOfWords::default();
    let sentiment = LexiconSentiment::default();
    let lexicon = KeywordLexicon::default();
    let ctx = EvaluationContext {
        embedder: &embedder,
        sentiment: &sentiment,
        lexicon: &lexicon,
        weights: w(0.3, 0.3, 0.4),
    };
    let before = evaluate_model(&set, &references, &ctx).map_err(|e| e.to_string())?;
    let mut padded = set.clone();
    padded.records.push(ResponseRecord::missing(extra, "flaky", "planted"));
    let after = evaluate_model(&padded, &references, &ctx).map_err(|e| e.to_string())?;
    let mut expected = before.row.clone();
    expected.n_missing += 1;
    let invariant = after.row == expected && after.per_question == before.per_question;
    let detail = format!(
        "{} of {} missing = {pct}%; aggregates unchanged by an added missing record: {invariant}",
        set.n_missing(),
        set.records.len()
    );
    if set.n_missing() == 9 && pct == "16.67" && invariant {
        pass(detail)
    } else {
        fail(detail)
    }
}

fn criterion_finetune() -> Check {
    let places = [
        ("Peru", "Machu Picchu and ceviche"),
        ("Mexico", "mole, mariachi and the Day of the Dead"),
        ("Argentina", "asado, mate and tango"),
        ("Brazil", "feijoada, samba and carnival"),
        ("Colombia", "arepas, vallenato and coffee"),
        ("Chile", "empanadas, cueca and the Atacama"),
        ("Bolivia", "salteñas, Aymara culture and the salt flats"),
        ("Cuba", "son cubano and ropa vieja"),
        ("Uruguay", "chivito, candombe and mate"),
        ("Paraguay", "chipa, Guarani and terere"),
    ];
    let pairs: Vec<PromptPair> = places
        .iter()
        .flat_map(|(country, things)| {
            [
                PromptPair::new(&format!("What is typical of {country}?"), &format!("People think of {things}.")),
                PromptPair::new(
                    &format!("How do people in {country} celebrate?"),
                    &format!("With family, music and food like {things}."),
                ),
            ]
        })
        .collect();
    let model = TinyCausalLm::bundled();
    let checksum = model.checksum();
    let cfg = TrainConfig {
        seed: 7,
        ..TrainConfig::default()
    };
    let lora = LoraConfig::default();
    let outcome = train_adapter(&model, &pairs, &lora, &cfg, None).map_err(|e| e.to_string())?;
    let first = outcome.epochs.first().map(|e| e.train_loss).unwrap_or(f64::NAN);
    let last = outcome.epochs.last().map(|e| e.train_loss).unwrap_or(f64::NAN);
    let untouched = outcome.base_checksum_before == outcome.base_checksum_after && model.checksum() == checksum;

    let zero = LoraAdapter::new(model.config(), lora, 3).map_err(|e| e.to_string())?;
    let tokens = ce_core::finetune::encode(&pairs[0].prompt_text, 64);
    let base = model.logits(&tokens, None).map_err(|e| e.to_string())?;
    let adapted = model.logits(&tokens, Some(&zero)).map_err(|e| e.to_string())?;
    let gap = base.iter().zip(&adapted).map(|(a, b): (&f64, &f64)| (a - b).abs()).fold(0.0, f64::max);
    let detail = format!(
        "{} pairs, {} epochs, batch {} x accumulation {}: first-epoch loss {first:.6}, final {last:.6}; base checksum unchanged: {untouched}; zero-adapter logit gap {gap:.1e}",
        pairs.len(),
        outcome.epochs.len(),
        cfg.batch_size,
        cfg.grad_accumulation
    );
    if pairs.len() == 20 && outcome.epochs.len() == 3 && last < first && untouched && gap <= 1e-4 {
        pass(detail)
    } else {
        fail(detail)
    }
}

fn fixture_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/fixture.toml")
}

fn run_all(out: &Path) -> Result<PathBuf, String> {
    let output = Command::new(env!("CARGO_BIN_EXE_ce-eval"))
        .arg("--config")
        .arg(fixture_config())
        .arg("--out")
        .arg(out)
        .arg("run-all")
        .output()
        .map_err(|e| e.to_string())?;
    if !output.status.success() {
        return Err(format!(
            "run-all exited with {}: {}",
            output.status,
            String::from_utf8_lossy(&output.stderr).trim()
        ));
    }
    let mut dirs: Vec<PathBuf> = fs::read_dir(out)
        .map_err(|e| e.to_string())?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    match dirs.len() {
        1 => Ok(dirs.remove(0)),
        n => Err(format!("expected one run directory, found {n}")),
    }
}

fn compared_files(run: &Path) -> Result<BTreeMap<String, Vec<u8>>, String> {
    let mut files = BTreeMap::new();
    for name in ["metrics.csv", "stats.json"] {
        files.insert(name.to_string(), fs::read(run.join(name)).map_err(|e| format!("{name}: {e}"))?);
    }
    for entry in fs::read_dir(run.join("tables")).map_err(|e| e.to_string())? {
        let path = entry.map_err(|e| e.to_string())?.path();
        let name = format!("tables/{}", path.file_name().unwrap_or_default().to_string_lossy());
        files.insert(name, fs::read(&path).map_err(|e| e.to_string())?);
    }
    Ok(files)
}

fn criterion_determinism() -> Check {
    let (a, b) = (tempfile::tempdir().map_err(|e| e.to_string())?, tempfile::tempdir().map_err(|e| e.to_string())?);
    let first = compared_files(&run_all(a.path())?)?;
    let second = compared_files(&run_all(b.path())?)?;
    let tables = first.keys().filter(|k| k.starts_with("tables/")).count();
    if first.keys().ne(second.keys()) {
        return fail("the two runs wrote different file sets");
    }
    let differing: Vec<&String> = first.iter().filter(|(k, v)| second[*k] != **v).map(|(k, _)| k).collect();
    if tables > 0 && differing.is_empty() {
        pass(format!("two runs exit 0; metrics.csv, stats.json and {tables} tables byte-identical"))
    } else if tables == 0 {
        fail("no table CSVs written")
    } else {
        fail(format!("differing files: {differing:?}"))
    }
}

/// Published average lengths and similarity means for the released data.
const PUBLISHED_LENGTHS: [(&str, f64); 8] = [
    ("Resp V1", 26.91),
    ("Resp V2", 45.33),
    ("Mistral-7B", 164.19),
    ("Zephyr-7B", 233.06),
    ("BLOOM-7B", 475.53),
    ("Llama-2-7B", 318.00),
    ("Grok", 21.70),
    ("ChatGPT", 20.08),
];
const PUBLISHED_SIMILARITY: [(&str, f64, f64); 6] = [
    ("Mistral-7B", 0.336, 0.376),
    ("Zephyr-7B", 0.374, 0.413),
    ("BLOOM-7B", 0.221, 0.219),
    ("Llama-2-7B", 0.333, 0.367),
    ("Grok", 0.312, 0.305),
    ("ChatGPT", 0.292, 0.334),
];

/// Needs `CE_REPRO_DIR` (holding `references.csv` and `responses_<model>.csv` for the six
/// models) and `CE_REPRO_EMBEDDING_ENDPOINT` (an embedding service matching the original
/// embedder).
fn criterion_reproduction() -> Check {
    let (Ok(dir), Ok(endpoint)) = (std::env::var("CE_REPRO_DIR"), std::env::var("CE_REPRO_EMBEDDING_ENDPOINT")) else {
        return Ok(Outcome::Skip(
            "set CE_REPRO_DIR and CE_REPRO_EMBEDDING_ENDPOINT to the released data and a matching embedder".into(),
        ));
    };
    let dir = PathBuf::from(dir);
    let texts = read_references(dir.join("references.csv")).map_err(|e| e.to_string())?;
    let neutral = SentimentScore::new(0.0).map_err(|e| e.to_string())?;
    let by_key: HashMap<String, usize> = texts.iter().enumerate().map(|(i, t)| (normalize_key(&t.question), i)).collect();
    let references: Vec<ReferencePair<f64>> = texts
        .iter()
        .map(|t| ReferencePair::new(&t.question, &t.v1, &t.v2, neutral))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    let options = ProviderOptions {
        embedding_endpoint: Some(endpoint),
        ..ProviderOptions::default()
    };
    let embedder = embedder_from_selector::<f64>("builtin:http", &options).map_err(|e| e.to_string())?;
    let lexicon = KeywordLexicon::default();

    let mut lengths: HashMap<String, f64> = HashMap::new();
    let v1: Vec<&str> = texts.iter().map(|t| t.v1.as_str()).collect();
    let v2: Vec<&str> = texts.iter().map(|t| t.v2.as_str()).collect();
    for (name, set) in [("Resp V1", &v1), ("Resp V2", &v2)] {
        let profile = LexicalProfile::<f64>::compute(name, set, &lexicon).map_err(|e| e.to_string())?;
        lengths.insert(name.into(), profile.avg_length_words);
    }
    let mut problems = Vec::new();
    let mut worst_sim = 0.0f64;
    for (model, p1, p2) in PUBLISHED_SIMILARITY {
        let set = load_responses(dir.join(format!("responses_{model}.csv"))).map_err(|e| e.to_string())?;
        let mut aligned: Vec<Option<&str>> = vec![None; references.len()];
        for r in &set.records {
            let Some(&i) = by_key.get(&normalize_key(&r.question)) else {
                return Err(format!("{model}: no reference for {:?}", r.question));
            };
            aligned[i] = r.response.as_deref();
        }
        let (s1, s2) = semantic_similarity(&aligned, &references, &embedder).map_err(|e| e.to_string())?;
        worst_sim = worst_sim.max((s1 - p1).abs()).max((s2 - p2).abs());
        if (s1 - p1).abs() > 0.02 || (s2 - p2).abs() > 0.02 {
            problems.push(format!("{model} similarity {s1:.3}/{s2:.3} vs {p1}/{p2}"));
        }
        lengths.insert(model.into(), avg_length(&set.present_responses()).map_err(|e| e.to_string())?);
    }
    let mut worst_len = 0.0f64;
    for (name, published) in PUBLISHED_LENGTHS {
        let got = lengths[name];
        worst_len = worst_len.max((got - published).abs());
        if (got - published).abs() > 0.5 {
            problems.push(format!("{name} length {got:.2} vs {published}"));
        }
    }
    let detail = format!("worst similarity gap {worst_sim:.3}, worst length gap {worst_len:.2}");
    if problems.is_empty() {
        pass(detail)
    } else {
        fail(format!("{detail}; {}", problems.join("; ")))
    }
}

fn main() -> ExitCode {
    let secs = Duration::from_secs;
    let criteria: [Criterion; 9] = [
        ("CE arithmetic", criterion_ce_arithmetic, secs(1)),
        ("weight calibration", criterion_calibration, secs(1)),
        ("Wilcoxon exact p-values", criterion_wilcoxon, secs(30)),
        ("bootstrap coverage", criterion_bootstrap, secs(60)),
        ("metric oracles", criterion_metric_oracles, secs(1)),
        ("harness missing-data contract", criterion_harness, secs(5)),
        ("fine-tune dynamics", criterion_finetune, secs(600)),
        ("end-to-end determinism", criterion_determinism, secs(120)),
        ("conditional reproduction", criterion_reproduction, Duration::MAX),
    ];
    let mut failed = 0;
    for (i, (name, check, budget)) in criteria.into_iter().enumerate() {
        let start = Instant::now();
        let outcome = check().unwrap_or_else(|e| Outcome::Fail(format!("error: {e}")));
        let elapsed = start.elapsed();
        let (tag, detail) = match within_budget(outcome, elapsed, budget) {
            Outcome::Pass(d) => ("PASS", d),
            Outcome::Fail(d) => {
                failed += 1;
                ("FAIL", d)
            }
            Outcome::Skip(d) => ("SKIP", d),
        };
        println!("criterion {} [{name}]: {tag} ({elapsed:.2?}) {detail}", i + 1);
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criterion(s) failed");
        ExitCode::FAILURE
    }
}
