//! Acceptance gate: one test per release criterion, each printing a
//! `[acceptance]` verdict line and enforcing a wall-clock budget. These run
//! against independent reference implementations in `common`, bundled
//! fixtures under `fixtures/`, and committed reference data under
//! `tests/data/`, so a regression in any module fails loudly here even if
//! its unit suite still passes.

mod common;

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use cod_forge::analytics::{
    correlation_report, pearson, render_tsv, spearman, summarize, GroupBy, ScorePair,
};
use cod_forge::corpus::{ingest_documents, Document, DocumentSet, IngestFormat};
use cod_forge::dataset::{
    export_generator_pairs, export_sft_jsonl, import_generator_pairs, import_sft_jsonl,
    parse_generator_output, read_dialogues_jsonl, split, write_dialogues_jsonl,
};
use cod_forge::engine::{
    filter_dialogue, BuildEvent, Dialogue, DialogueGenerator, FilterThresholds, GenerationConfig,
    LinkOrigin, LogicLink, LogicType, Mode, Turn,
};
use cod_forge::evaluator::{aggregate_avg, compute_cr_deterministic, CrMethod, Evaluator};
use cod_forge::gateway::ScriptedBackend;
use cod_forge::io::{read_jsonl, write_atomic, write_jsonl};
use cod_forge::span::{coverage_fraction, find_spans, KeyPhraseSet};

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

fn fixtures_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn finish(n: usize, name: &str, started: Instant, budget: Duration, detail: &str) {
    let elapsed = started.elapsed();
    assert!(
        elapsed < budget,
        "criterion {n} ({name}) exceeded its {budget:?} budget: took {elapsed:?}"
    );
    println!("[acceptance] criterion {n} ({name}): PASS — {detail} ({elapsed:?})");
}

fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

fn test_link(turn_index: usize) -> LogicLink {
    LogicLink {
        turn_index,
        logic_type: LogicType::QuestionAnswer,
        progress: "dialogue in progress".into(),
        reasoning: "synthetic link for schema tests".into(),
        purpose: "probe the document".into(),
        origin: LinkOrigin::Planned,
    }
}

fn test_turn(turn_index: usize, query: &str, response: &str) -> Turn {
    Turn {
        query: query.to_string(),
        response: response.to_string(),
        logic_link: test_link(turn_index),
        key_phrases: Vec::new(),
        grounding: Vec::new(),
        grounded: false,
    }
}

fn test_dialogue(id: &str, document_id: &str, turns: Vec<Turn>) -> Dialogue {
    Dialogue {
        id: id.to_string(),
        document_id: document_id.to_string(),
        mode: Mode::CoD,
        generator: "scripted".into(),
        turns,
        created_with: GenerationConfig::default(),
    }
}

// --- criterion 1: score aggregation recovers the reference averages -----

#[derive(Deserialize)]
struct ReferenceRow {
    topic: String,
    mode: String,
    generator: String,
    scores: [f64; 8],
    cr: f64,
    reported_avg: f64,
}

#[derive(Deserialize)]
struct ReferenceData {
    grid: Vec<ReferenceRow>,
    extra: Vec<ReferenceRow>,
}

#[derive(Deserialize)]
struct KnownException {
    topic: String,
    mode: String,
    generator: String,
    reported_avg: f64,
    computed_avg: f64,
}

#[test]
fn criterion_1_aggregation_formula_recovery() {
    let started = Instant::now();
    let data: ReferenceData =
        serde_json::from_str(include_str!("data/reference_scores.json")).expect("reference data");
    let exceptions: Vec<KnownException> =
        serde_json::from_str(include_str!("data/aggregate_reference_exceptions.json"))
            .expect("exceptions data");
    assert_eq!(data.grid.len(), 27, "expected the full 3x3x3 grid");

    let tolerance = 0.01 + 1e-9;
    let mut passed = 0usize;
    let mut failures: Vec<(&ReferenceRow, f64)> = Vec::new();
    for row in &data.grid {
        let avg = round2(aggregate_avg(row.scores, row.cr).expect("in-band reference scores"));
        if (avg - row.reported_avg).abs() <= tolerance {
            passed += 1;
        } else {
            failures.push((row, avg));
        }
    }
    assert!(
        passed >= 24,
        "only {passed}/27 grid rows recovered within ±0.01"
    );
    assert_eq!(
        failures.len(),
        exceptions.len(),
        "failing rows {:?} do not line up with the committed exceptions",
        failures
            .iter()
            .map(|(r, a)| format!("{}/{}/{} computed {a}", r.topic, r.mode, r.generator))
            .collect::<Vec<_>>()
    );
    for (row, avg) in &failures {
        let known = exceptions
            .iter()
            .find(|e| e.topic == row.topic && e.mode == row.mode && e.generator == row.generator)
            .unwrap_or_else(|| {
                panic!(
                    "unexpected aggregation failure: {}/{}/{} computed {avg} vs reported {}",
                    row.topic, row.mode, row.generator, row.reported_avg
                )
            });
        assert!(
            (avg - known.computed_avg).abs() < 1e-9,
            "exception {}/{}/{} drifted: computed {avg}, recorded {}",
            row.topic,
            row.mode,
            row.generator,
            known.computed_avg
        );
        assert_eq!(known.reported_avg, row.reported_avg);
    }
    for row in &data.extra {
        let avg = round2(aggregate_avg(row.scores, row.cr).expect("in-band reference scores"));
        assert!(
            (avg - row.reported_avg).abs() <= tolerance,
            "extra row {}/{}/{} computed {avg} vs reported {}",
            row.topic,
            row.mode,
            row.generator,
            row.reported_avg
        );
    }

    finish(
        1,
        "aggregation recovery",
        started,
        Duration::from_secs(1),
        &format!(
            "{passed}/27 grid rows within ±0.01, {} known exceptions, {} extra rows exact",
            exceptions.len(),
            data.extra.len()
        ),
    );
}

// --- criterion 2: scripted end-to-end pipeline, byte-deterministic ------

#[test]
fn criterion_2_scripted_end_to_end() {
    let started = Instant::now();
    let fixtures = fixtures_dir();
    let (docs, report) =
        ingest_documents(&fixtures.join("corpus.jsonl"), IngestFormat::Jsonl).expect("ingest");
    assert!(report.is_clean(), "fixture corpus should ingest cleanly");
    assert_eq!(docs.len(), 10);

    let cfg = || GenerationConfig {
        max_turns: 3,
        min_turns: 3,
        target_coverage: 0.9,
        spans_per_turn: 2,
        span_window: 120,
        temperature: 0.7,
        seed: 7,
    };
    let thresholds = || FilterThresholds {
        min_turns: 3,
        min_grounded: 0.5,
    };
    let expected_avg =
        aggregate_avg([4.0, 4.33, 4.0, 5.0, 4.0, 4.0, 5.0, 4.0], 62.5).expect("fixture scores");

    let artifacts = [
        "dialogues.jsonl",
        "sft.jsonl",
        "pairs.jsonl",
        "evaluations.jsonl",
        "split.json",
        "summary.tsv",
    ];

    let run = |out: &Path| {
        let mut dialogues: Vec<Dialogue> = Vec::new();
        let mut evaluations = Vec::new();
        for doc in docs.iter() {
            for mode in Mode::ALL {
                let script = fixtures
                    .join("scripts")
                    .join(format!("{}.json", mode.slug()));
                let backend = ScriptedBackend::from_path(&script).expect("mode script");
                let generator = DialogueGenerator::new(&backend, cfg()).expect("generator");
                let outcome = generator
                    .generate_dialogue(doc, mode)
                    .unwrap_or_else(|e| panic!("{mode} generation failed for {}: {e}", doc.id));
                assert_eq!(
                    backend.unconsumed(),
                    0,
                    "{mode} script not fully consumed for {}",
                    doc.id
                );
                assert!(outcome.events.is_empty(), "clean script produced events");
                let dlg = outcome.dialogue;
                assert_eq!(dlg.turns.len(), 3);
                for (i, turn) in dlg.turns.iter().enumerate() {
                    assert_eq!(turn.logic_link.turn_index, i + 1);
                }
                match mode {
                    Mode::CoD => {
                        assert!(dlg.turns.iter().all(|t| t.grounded));
                        assert!(LogicType::FIRST_TURN_ALLOWED
                            .contains(&dlg.turns[0].logic_link.logic_type));
                        assert!(dlg
                            .turns
                            .iter()
                            .all(|t| t.logic_link.origin == LinkOrigin::Planned));
                    }
                    Mode::Direct | Mode::CoT => {
                        assert!(dlg
                            .turns
                            .iter()
                            .all(|t| t.logic_link.origin == LinkOrigin::ModeInferred));
                    }
                }
                let verdict = filter_dialogue(&dlg, doc, &thresholds());
                assert!(
                    verdict.is_accept(),
                    "filter rejected {}: {verdict:?}",
                    dlg.id
                );

                let judge = ScriptedBackend::from_path(&fixtures.join("scripts/judge.json"))
                    .expect("judge script")
                    .with_name("scripted-judge");
                let evaluation = Evaluator::new(&judge, CrMethod::Judge)
                    .with_thresholds(thresholds())
                    .evaluate(&dlg, doc)
                    .unwrap_or_else(|e| panic!("evaluation failed for {}: {e}", dlg.id));
                assert_eq!(judge.unconsumed(), 0, "judge script not fully consumed");
                assert!(evaluation.gaps.is_empty());
                assert!(evaluation.is_complete());
                let avg = evaluation.avg.expect("complete evaluation has an average");
                assert!(
                    (avg - expected_avg).abs() < 1e-9,
                    "unexpected average {avg} for {}",
                    dlg.id
                );
                dialogues.push(dlg);
                evaluations.push(evaluation);
            }
        }
        assert_eq!(dialogues.len(), 30);

        write_dialogues_jsonl(&dialogues, &out.join("dialogues.jsonl")).expect("dialogues");
        export_sft_jsonl(&dialogues, &out.join("sft.jsonl")).expect("sft");
        export_generator_pairs(&docs, &dialogues, &out.join("pairs.jsonl")).expect("pairs");
        write_jsonl(&out.join("evaluations.jsonl"), &evaluations).expect("evaluations");

        let ids: Vec<String> = dialogues.iter().map(|d| d.id.clone()).collect();
        let partition = split(&ids, 0.2, 7).expect("split");
        assert_eq!(partition.test.len(), 6);
        assert_eq!(partition.total(), 30);
        write_atomic(
            &out.join("split.json"),
            serde_json::to_string_pretty(&partition)
                .expect("serializable split")
                .as_bytes(),
        )
        .expect("split file");

        let rows = summarize(&evaluations, GroupBy::Mode).expect("summary");
        assert_eq!(rows.len(), 3);
        for row in &rows {
            assert_eq!(row.n, 10);
            assert!((row.avg - expected_avg).abs() < 1e-9);
        }
        write_atomic(&out.join("summary.tsv"), render_tsv(&rows).as_bytes()).expect("summary file");
    };

    let first = tempfile::tempdir().expect("tempdir");
    let second = tempfile::tempdir().expect("tempdir");
    run(first.path());
    run(second.path());
    for name in artifacts {
        let a = fs::read(first.path().join(name)).expect(name);
        let b = fs::read(second.path().join(name)).expect(name);
        assert!(!a.is_empty(), "{name} is empty");
        assert_eq!(a, b, "{name} differs between identical runs");
    }

    finish(
        2,
        "scripted end-to-end",
        started,
        Duration::from_secs(10),
        "10 documents x 3 modes generated, filtered, judged, exported; 6 artifacts byte-identical across runs",
    );
}

// --- criterion 3: deterministic coverage matches the set oracle ---------

#[test]
fn criterion_3_coverage_oracle_equivalence() {
    let started = Instant::now();
    const WORDS: &[&str] = &[
        "sundial",
        "bronze",
        "gnomon",
        "shadow",
        "marks",
        "daylight",
        "hours",
        "the",
        "and",
        "with",
        "garden",
        "observatory",
        "antique",
        "rotates",
        "evenly",
        "polished",
        "meridian",
        "arc",
        "scholars",
        "calibrated",
        "seasonal",
        "drift",
        "夏至",
        "青铜",
        "日晷",
    ];
    const NOISE: &[&str] = &[
        "zephyr", "quartz", "玄武", "oblique", "vortex", "jumble", "knack",
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(0x00C0_FFEE);

    for case in 0..200 {
        let mut text = String::new();
        while text.chars().count() < 120 + (case % 300) {
            text.push_str(WORDS.choose(&mut rng).expect("pool"));
            if rng.random_bool(0.12) {
                text.push('.');
            }
            text.push(' ');
        }
        let doc = Document::new(format!("doc-{case}"), &text, "en", "artifacts", "synthetic")
            .expect("document");
        assert!(doc.char_count() <= 500, "case {case} document too long");

        let chars: Vec<char> = doc.text().chars().collect();
        let n_turns = rng.random_range(1..=4);
        let mut turns = Vec::new();
        for t in 1..=n_turns {
            let pick = |rng: &mut ChaCha8Rng| -> String {
                if rng.random_bool(0.5) && chars.len() >= 10 {
                    let len = rng.random_range(5..=40.min(chars.len()));
                    let start = rng.random_range(0..=chars.len() - len);
                    chars[start..start + len].iter().collect()
                } else {
                    format!(
                        "{} {}",
                        NOISE.choose(rng).expect("pool"),
                        NOISE.choose(rng).expect("pool")
                    )
                }
            };
            let query = pick(&mut rng);
            let response = pick(&mut rng);
            turns.push(test_turn(t, &query, &response));
        }
        let dlg = test_dialogue(&format!("dlg-{case}"), &doc.id, turns);

        let got = compute_cr_deterministic(&dlg, &doc);
        let texts: Vec<String> = dlg
            .turns
            .iter()
            .flat_map(|t| [t.query.clone(), t.response.clone()])
            .collect();
        let want = 100.0 * common::ref_coverage(doc.text(), &texts);
        assert_eq!(got, want, "case {case} coverage mismatch");
    }

    let doc = Document::new(
        "edge",
        "The seismoscope pendulum swings beneath eight bronze toads.",
        "en",
        "artifacts",
        "synthetic",
    )
    .expect("document");
    let empty = test_dialogue("edge-empty", "edge", Vec::new());
    assert_eq!(compute_cr_deterministic(&empty, &doc), 0.0);
    let verbatim = test_dialogue(
        "edge-verbatim",
        "edge",
        vec![test_turn(1, "What does it say?", doc.text())],
    );
    assert_eq!(compute_cr_deterministic(&verbatim, &doc), 100.0);

    finish(
        3,
        "coverage oracle equivalence",
        started,
        Duration::from_secs(5),
        "200 randomized dialogues match the set-based oracle exactly; empty=0 and verbatim=100 hold",
    );
}

// --- criterion 4: span search matches the exhaustive oracle -------------

#[test]
fn criterion_4_span_search_matches_exhaustive_oracle() {
    let started = Instant::now();
    const SENTENCES: &[&str] = &[
        "The seismoscope held eight bronze dragons around a central pendulum.",
        "Each dragon gripped a small ball above a waiting toad!",
        "Does the mechanism reveal the direction of a distant quake?",
        "Court astronomers logged every tremor in meticulous detail.",
        "湖面上的石橋在黎明時分安靜無聲。",
        "A polished mirror focused faint starlight onto the brass scale.",
        "Its inventor demonstrated the device before a skeptical court.",
        "Merchants carried printed charts along the canal towns.",
    ];
    const NOISE: &[&str] = &["zxqvw jklm", "fjord blitz", "pzazz", "vexing wizards quilt"];
    let mut rng = ChaCha8Rng::seed_from_u64(0x0000_5EED);

    let mut skipped = 0usize;
    for case in 0..200 {
        let n_sent = rng.random_range(2..=5);
        let text = (0..n_sent)
            .map(|_| *SENTENCES.choose(&mut rng).expect("pool"))
            .collect::<Vec<_>>()
            .join(" ");
        let doc = Document::new(format!("doc-{case}"), &text, "en", "science", "synthetic")
            .expect("document");
        assert!(doc.char_count() <= 500);
        let chars: Vec<char> = doc.text().chars().collect();

        let n_phrases = rng.random_range(1..=3);
        let mut raw = Vec::new();
        for _ in 0..n_phrases {
            if rng.random_bool(0.6) && chars.len() >= 16 {
                let len = rng.random_range(4..=15);
                let start = rng.random_range(0..=chars.len() - len);
                raw.push(chars[start..start + len].iter().collect::<String>());
            } else {
                raw.push((*NOISE.choose(&mut rng).expect("pool")).to_string());
            }
        }
        let phrases = KeyPhraseSet::new(raw, 1);
        if phrases.is_empty() {
            skipped += 1;
            continue;
        }
        let window = *[20usize, 40, 80, 160].choose(&mut rng).expect("pool");

        let got = find_spans(&doc, &phrases, 3, window);
        let want = common::ref_best_span(doc.text(), &phrases.phrases, window);
        match want {
            None => assert!(
                got.is_empty(),
                "case {case}: oracle found nothing but impl returned {got:?}"
            ),
            Some((s, e, _exact, score)) => {
                let top = got
                    .first()
                    .unwrap_or_else(|| panic!("case {case}: impl empty, oracle found ({s},{e})"));
                assert_eq!(
                    (top.start, top.end),
                    (s, e),
                    "case {case}: top span disagrees (impl score {}, oracle score {score})",
                    top.score
                );
                assert_eq!(top.score, score, "case {case}: score mismatch");
                let reslice: String = chars[top.start..top.end].iter().collect();
                assert_eq!(reslice, top.text, "case {case}: span text not verbatim");
            }
        }
    }
    assert!(skipped < 50, "too many degenerate phrase sets: {skipped}");

    finish(
        4,
        "span search oracle",
        started,
        Duration::from_secs(10),
        &format!(
            "top-1 agreement with the exhaustive oracle on {} randomized documents",
            200 - skipped
        ),
    );
}

// --- criterion 5: correlation matches reference formulas + fixture ------

#[test]
fn criterion_5_correlation_reference_and_fixture() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xABCD);

    let assert_close = |a: Option<f64>, b: Option<f64>, what: &str, case: usize| match (a, b) {
        (None, None) => {}
        (Some(x), Some(y)) => assert!(
            (x - y).abs() < 1e-9,
            "case {case}: {what} {x} vs oracle {y}"
        ),
        (x, y) => panic!("case {case}: {what} definedness disagrees: {x:?} vs {y:?}"),
    };

    for case in 0..100 {
        let n = rng.random_range(2..=50);
        let grid = |rng: &mut ChaCha8Rng| 1.0 + 0.5 * rng.random_range(0..=8) as f64;
        let xs: Vec<f64> = (0..n).map(|_| grid(&mut rng)).collect();
        let ys: Vec<f64> = (0..n).map(|_| grid(&mut rng)).collect();

        let p = pearson(&xs, &ys).expect("paired input");
        assert_close(p, common::ref_pearson(&xs, &ys), "pearson", case);
        let s = spearman(&xs, &ys).expect("paired input");
        assert_close(s, common::ref_spearman(&xs, &ys), "spearman", case);

        // Affine maps leave Pearson alone; strictly monotone maps leave
        // Spearman alone.
        let xs_affine: Vec<f64> = xs.iter().map(|v| 2.0 * v + 3.0).collect();
        assert_close(
            pearson(&xs_affine, &ys).expect("paired input"),
            p,
            "affine pearson",
            case,
        );
        let xs_cubed: Vec<f64> = xs.iter().map(|v| v.powi(3)).collect();
        assert_close(
            spearman(&xs_cubed, &ys).expect("paired input"),
            s,
            "monotone spearman",
            case,
        );

        if let Some(p) = p {
            assert!((-1.0..=1.0).contains(&p));
        }
        if let Some(s) = s {
            assert!((-1.0..=1.0).contains(&s));
        }
    }

    let pairs: Vec<ScorePair> =
        read_jsonl(&fixtures_dir().join("pairs.jsonl")).expect("fixture pairs");
    let report = correlation_report(&pairs).expect("report");
    assert_eq!(report.n, 6);
    let p = report.pearson.expect("defined for varying scores");
    let s = report.spearman.expect("defined for varying scores");
    assert!(
        (p - 1.0).abs() < 1e-12,
        "identical raters should give pearson 1, got {p}"
    );
    assert!(
        (s - 1.0).abs() < 1e-12,
        "identical raters should give spearman 1, got {s}"
    );

    finish(
        5,
        "correlation reference",
        started,
        Duration::from_secs(2),
        "100 random vectors match the oracle within 1e-9 with affine/monotone invariance; agreement fixture gives (1.0, 1.0)",
    );
}

// --- criterion 6: split discipline at corpus scale ----------------------

#[test]
fn criterion_6_split_discipline_at_scale() {
    let started = Instant::now();
    let ids: Vec<String> = (0..10_428).map(|i| format!("doc-{i:05}")).collect();
    let universe: BTreeSet<&String> = ids.iter().collect();

    for seed in [1u64, 2, 3] {
        let a = split(&ids, 0.1, seed).expect("split");
        let b = split(&ids, 0.1, seed).expect("split");
        assert_eq!(a, b, "seed {seed} is not deterministic");

        let fraction = a.test.len() as f64 / ids.len() as f64;
        assert!(
            (0.099..=0.101).contains(&fraction),
            "seed {seed}: test fraction {fraction} out of band"
        );

        let train: BTreeSet<&String> = a.train.iter().collect();
        let test: BTreeSet<&String> = a.test.iter().collect();
        assert_eq!(
            train.len(),
            a.train.len(),
            "seed {seed}: duplicate train ids"
        );
        assert_eq!(test.len(), a.test.len(), "seed {seed}: duplicate test ids");
        assert!(train.is_disjoint(&test), "seed {seed}: overlap");
        let union: BTreeSet<&String> = train.union(&test).copied().collect();
        assert_eq!(union, universe, "seed {seed}: not an exact partition");
    }

    let s1 = split(&ids, 0.1, 1).expect("split");
    let s2 = split(&ids, 0.1, 2).expect("split");
    assert_eq!(s1.test.len(), s2.test.len(), "seed must not change sizes");
    assert_ne!(s1.test, s2.test, "different seeds should move membership");

    finish(
        6,
        "split discipline",
        started,
        Duration::from_secs(1),
        &format!(
            "10428 ids at 0.1 give {} test ids per seed, deterministic exact partitions, membership varies by seed",
            s1.test.len()
        ),
    );
}

// --- criterion 7: every export schema round-trips ------------------------

#[test]
fn criterion_7_schema_round_trips() {
    let started = Instant::now();
    const POOL: &[&str] = &[
        "compass",
        "needle",
        "磁針",
        "café",
        "\"quoted\"",
        "back\\slash",
        "multi word phrase",
        "línea",
        "丝绸之路",
        "obsidian",
        "7.5 degrees",
        "a\tb",
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(0x7007);
    let dir = tempfile::tempdir().expect("tempdir");

    for case in 0..100 {
        let n_dlgs = rng.random_range(1..=3);
        let mut dialogues = Vec::new();
        let mut docs = Vec::new();
        for d in 0..n_dlgs {
            let doc_id = format!("c{case}-doc{d}");
            docs.push(
                Document::new(
                    &doc_id,
                    "A short primary source for pairing.",
                    "en",
                    "t",
                    "s",
                )
                .expect("document"),
            );
            let n_turns = rng.random_range(1..=6);
            let mut turns = Vec::new();
            for t in 1..=n_turns {
                let sample = |rng: &mut ChaCha8Rng| -> String {
                    let k = rng.random_range(1..=3);
                    (0..k)
                        .map(|_| *POOL.choose(rng).expect("pool"))
                        .collect::<Vec<_>>()
                        .join(" ")
                };
                let mut turn = test_turn(t, &sample(&mut rng), &sample(&mut rng));
                turn.logic_link.logic_type = *LogicType::ALL.choose(&mut rng).expect("pool");
                if rng.random_bool(0.5) {
                    turn.key_phrases = vec![sample(&mut rng)];
                }
                if rng.random_bool(0.4) {
                    turn.grounding = vec![cod_forge::span::Span {
                        start: rng.random_range(0..10),
                        end: rng.random_range(10..30),
                        text: sample(&mut rng),
                        score: rng.random_range(0..=100) as f64 / 100.0,
                    }];
                    turn.grounded = true;
                }
                turns.push(turn);
            }
            let mut dlg = test_dialogue(&format!("c{case}-d{d}"), &doc_id, turns);
            dlg.mode = *Mode::ALL.choose(&mut rng).expect("pool");
            dialogues.push(dlg);
        }
        let mut sorted = dialogues.clone();
        sorted.sort_by(|a, b| a.id.cmp(&b.id));

        let dialogues_path = dir.path().join("dialogues.jsonl");
        write_dialogues_jsonl(&dialogues, &dialogues_path).expect("write dialogues");
        let dialogues_back = read_dialogues_jsonl(&dialogues_path).expect("read dialogues");
        assert_eq!(dialogues_back, sorted, "case {case}: dialogue round-trip");

        let sft_path = dir.path().join("sft.jsonl");
        export_sft_jsonl(&dialogues, &sft_path).expect("write sft");
        let records = import_sft_jsonl(&sft_path).expect("read sft");
        assert_eq!(records.len(), sorted.len());
        for (record, dlg) in records.iter().zip(&sorted) {
            assert_eq!(record.messages.len(), dlg.turns.len() * 2, "case {case}");
            for (pair, turn) in record.messages.chunks(2).zip(&dlg.turns) {
                assert_eq!(pair[0].role, "user");
                assert_eq!(pair[0].content, turn.query);
                assert_eq!(pair[1].role, "assistant");
                assert_eq!(pair[1].content, turn.response);
            }
        }

        let doc_set = DocumentSet::new(docs).expect("documents");
        let pairs_path = dir.path().join("pairs.jsonl");
        export_generator_pairs(&doc_set, &dialogues, &pairs_path).expect("write pairs");
        let pairs = import_generator_pairs(&pairs_path).expect("read pairs");
        assert_eq!(pairs.len(), sorted.len());
        for (pair, dlg) in pairs.iter().zip(&sorted) {
            let reparsed = parse_generator_output(pair).expect("output reparses");
            assert_eq!(&reparsed, dlg, "case {case}: generator pair round-trip");
        }
    }

    finish(
        7,
        "schema round-trips",
        started,
        Duration::from_secs(5),
        "100 randomized cases each round-trip dialogue, chat-format, and generator-pair files losslessly",
    );
}

// --- criterion 8: chained generation structural properties ---------------

#[test]
fn criterion_8_chained_generation_structural_properties() {
    let started = Instant::now();
    const SENTENCES: &[&str] = &[
        "The water clock dripped through nine graduated vessels.",
        "Attendants refilled the highest basin at every watch change!",
        "Could the palace rely on it during the long rains?",
        "Engineers etched correction tables into the bronze rim.",
        "A float arm raised a pointer along the hour scale.",
        "Its drip rate shifted with the季节 and water purity.",
        "Provincial towns copied the design in cheaper clay.",
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(0x0D1A);

    let all_labels: BTreeSet<&str> = LogicType::ALL.iter().map(|t| t.label()).collect();
    let mut fallback_cases = 0usize;
    let mut early_stops = 0usize;

    for case in 0..100 {
        let n_sent = rng.random_range(2..=5);
        let text = (0..n_sent)
            .map(|_| *SENTENCES.choose(&mut rng).expect("pool"))
            .collect::<Vec<_>>()
            .join(" ");
        let doc = Document::new(format!("doc-{case}"), &text, "en", "science", "synthetic")
            .expect("document");
        let chars: Vec<char> = doc.text().chars().collect();

        let cfg = GenerationConfig {
            max_turns: rng.random_range(3..=5),
            min_turns: rng.random_range(1..=3),
            target_coverage: if rng.random_bool(0.5) { 0.3 } else { 0.9 },
            spans_per_turn: 2,
            span_window: 80,
            temperature: 0.7,
            seed: case as u64,
        };

        let mut entries: Vec<serde_json::Value> = Vec::new();
        let mut planned_types = Vec::new();
        for t in 1..=cfg.max_turns {
            let logic_type = *LogicType::ALL.choose(&mut rng).expect("pool");
            planned_types.push(logic_type);
            entries.push(serde_json::json!({
                "matcher": format!("Plan turn {t}."),
                "response": {
                    "logic_type": logic_type.label(),
                    "progress": format!("chain state before turn {t}"),
                    "reasoning": format!("link choice for turn {t}"),
                    "purpose": format!("advance the dialogue at turn {t}"),
                },
            }));

            let mut phrases = Vec::new();
            for _ in 0..rng.random_range(1..=2) {
                if rng.random_bool(0.7) && chars.len() >= 12 {
                    let len = rng.random_range(4..=12);
                    let start = rng.random_range(0..=chars.len() - len);
                    let cut: String = chars[start..start + len].iter().collect();
                    let cut = cut.trim().to_string();
                    phrases.push(if cut.is_empty() {
                        "pendulum".into()
                    } else {
                        cut
                    });
                } else {
                    phrases.push("unrelated zxqv noise".to_string());
                }
            }
            entries.push(serde_json::json!({
                "matcher": format!("preparing to write turn {t} of"),
                "response": { "phrases": phrases },
            }));

            let response = if rng.random_bool(0.5) && chars.len() >= 70 {
                let len = rng.random_range(20..=60);
                let start = rng.random_range(0..=chars.len() - len);
                let quote: String = chars[start..start + len].iter().collect();
                format!("The record notes that {quote}.")
            } else {
                format!("A brief remark for turn {t} without quoting the source.")
            };
            entries.push(serde_json::json!({
                "matcher": format!("Write turn {t} now."),
                "response": { "query": format!("What about aspect {t}?"), "response": response },
            }));
        }
        let script = serde_json::to_string(&entries).expect("script JSON");
        let backend = ScriptedBackend::from_json_str(&script).expect("scripted backend");

        let generator = DialogueGenerator::new(&backend, cfg.clone()).expect("generator");
        let outcome = generator
            .generate_dialogue(&doc, Mode::CoD)
            .unwrap_or_else(|e| panic!("case {case}: generation failed: {e}"));
        let dlg = &outcome.dialogue;

        // No turn reply in these scripts is unusable, so nothing gets skipped
        // and the chain indexes run 1..=len.
        assert!(
            !outcome
                .events
                .iter()
                .any(|e| matches!(e, BuildEvent::SkippedTurn { .. })),
            "case {case}: unexpected skip"
        );

        let expect_fallback = !LogicType::FIRST_TURN_ALLOWED.contains(&planned_types[0]);
        let first = &dlg.turns[0].logic_link;
        if expect_fallback {
            fallback_cases += 1;
            assert_eq!(first.logic_type, LogicType::QuestionAnswer, "case {case}");
            assert_eq!(first.origin, LinkOrigin::Fallback, "case {case}");
            assert!(
                outcome
                    .events
                    .iter()
                    .any(|e| matches!(e, BuildEvent::FallbackLink { turn_index: 1, .. })),
                "case {case}: missing fallback event"
            );
        } else {
            assert_eq!(first.logic_type, planned_types[0], "case {case}");
            assert_eq!(first.origin, LinkOrigin::Planned, "case {case}");
        }
        assert!(LogicType::FIRST_TURN_ALLOWED.contains(&first.logic_type));

        let wire = serde_json::to_value(dlg).expect("serializable dialogue");
        for (i, turn) in dlg.turns.iter().enumerate() {
            assert_eq!(turn.logic_link.turn_index, i + 1, "case {case}");
            let label = wire["turns"][i]["logic"]["type"]
                .as_str()
                .expect("serialized logic type");
            assert!(all_labels.contains(label), "case {case}: label {label}");
            assert!(!turn.logic_link.progress.trim().is_empty());
            assert!(!turn.logic_link.reasoning.trim().is_empty());
            assert!(!turn.logic_link.purpose.trim().is_empty());
            assert!(!turn.key_phrases.is_empty(), "case {case}: phrases lost");

            assert_eq!(turn.grounded, !turn.grounding.is_empty(), "case {case}");
            assert!(turn.grounding.len() <= cfg.spans_per_turn);
            for span in &turn.grounding {
                assert!(span.start < span.end && span.end <= chars.len());
                let reslice: String = chars[span.start..span.end].iter().collect();
                assert_eq!(reslice, span.text, "case {case}: span not verbatim");
                assert!(span.score >= 0.0 && span.score <= 1.0 + 1e-12);
                assert!(
                    span.score > 0.0
                        || turn
                            .key_phrases
                            .iter()
                            .any(|p| span.text.contains(p.as_str())),
                    "case {case}: span kept without overlap or exact hit"
                );
            }
        }

        let responses: Vec<&str> = dlg.turns.iter().map(|t| t.response.as_str()).collect();
        let mut previous = 0.0;
        for i in 1..=responses.len() {
            let cov = coverage_fraction(&doc, &responses[..i]);
            assert!(
                cov + 1e-12 >= previous,
                "case {case}: coverage fell from {previous} to {cov} at turn {i}"
            );
            previous = cov;
        }

        assert!(dlg.turns.len() <= cfg.max_turns, "case {case}");
        assert!(dlg.turns.len() >= cfg.min_turns, "case {case}");
        if dlg.turns.len() < cfg.max_turns {
            early_stops += 1;
            assert!(
                previous >= cfg.target_coverage,
                "case {case}: stopped early below target coverage"
            );
        }
        for m in cfg.min_turns..dlg.turns.len() {
            let cov = coverage_fraction(&doc, &responses[..m]);
            assert!(
                cov < cfg.target_coverage,
                "case {case}: should already have stopped after turn {m}"
            );
        }
    }

    assert!(
        fallback_cases > 10,
        "first-turn restriction barely exercised"
    );
    assert!(early_stops > 10, "stop rule barely exercised");

    finish(
        8,
        "chained generation properties",
        started,
        Duration::from_secs(10),
        &format!(
            "100 scripted generations hold all chain invariants ({fallback_cases} opening fallbacks, {early_stops} early stops)"
        ),
    );
}
