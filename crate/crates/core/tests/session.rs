mod common;

use std::collections::HashMap;

use proptest::prelude::*;
use simulmt::backend::{GenerationRequest, GenerationResponse};
use simulmt::metrics::report;
use simulmt::policy::EventKind;
use simulmt::text::load_corpus;
use simulmt::{
    detokenize, run_session, should_attempt_write, Backend, BackendError, BeamCandidate,
    JoiningConvention, PolicyConfig, PromptTemplate, ScriptedBackend, SessionTrace, TargetToken,
};

/// Knows the translation of every revealed word: the target is the source
/// upper-cased, word for word. All `B` candidates agree.
struct Transcriber {
    words: Vec<String>,
    joining: JoiningConvention,
}

impl Transcriber {
    fn new(sentence: &str) -> Self {
        Self {
            words: sentence.split_whitespace().map(str::to_uppercase).collect(),
            joining: JoiningConvention::default(),
        }
    }
}

impl Backend for Transcriber {
    fn generate(&self, req: &GenerationRequest) -> Result<GenerationResponse, BackendError> {
        let cursor = req.tag.cursor;
        let finished = cursor == self.words.len();
        let pieces = &self.words[req.tag.committed.min(cursor)..cursor];
        let cand = BeamCandidate::from_pieces(pieces, -1.0, finished || pieces.is_empty()).unwrap();
        Ok(GenerationResponse {
            candidates: vec![cand; req.num_candidates],
            model_id: "transcriber".into(),
            latency_ms: 0,
        })
    }

    fn joining(&self) -> &JoiningConvention {
        &self.joining
    }
}

fn toy_traces(gamma: f64) -> Vec<SessionTrace> {
    let dir = common::fixtures_dir();
    let corpus = load_corpus(&dir.join("toy.tsv")).unwrap();
    let backend = ScriptedBackend::load(&dir.join("toy_script.jsonl")).unwrap();
    let cfg = PolicyConfig::new(3, 3, 5, gamma).unwrap();
    corpus
        .iter()
        .map(|p| {
            run_session(
                &p.id,
                &p.source,
                Some(&p.target),
                &cfg,
                &backend,
                &PromptTemplate::default(),
            )
            .unwrap()
        })
        .collect()
}

fn toy_references() -> HashMap<String, String> {
    load_corpus(&common::fixtures_dir().join("toy.tsv"))
        .unwrap()
        .into_iter()
        .map(|p| (p.id, p.target))
        .collect()
}

fn check_trace_invariants(trace: &SessionTrace) {
    let src_len = trace.source.split_whitespace().count();
    let pieces: Vec<TargetToken> = trace.written_pieces().map(TargetToken::new).collect();
    assert_eq!(
        detokenize(&pieces, &JoiningConvention::default()),
        trace.hypothesis
    );
    assert_eq!(
        trace.delays.len(),
        trace.hypothesis.split_whitespace().count()
    );
    assert!(trace.delays.windows(2).all(|w| w[0] <= w[1]));
    assert!(trace.delays.iter().all(|&d| (1..=src_len).contains(&d)));
    if let Some(&last) = trace.delays.last() {
        assert_eq!(last, src_len);
    }
    let reads = trace
        .events
        .iter()
        .filter(|e| e.kind == EventKind::Read)
        .count();
    assert_eq!(reads, src_len);
    assert_eq!(trace.events.last().unwrap().kind, EventKind::Finish);
}

// Hand-traced against fixtures/toy_script.jsonl with k=3, n=3, B=5.
#[test]
fn toy_fixture_sheet_gamma_0_6() {
    let traces = toy_traces(0.6);
    let expect: [(&str, &[usize], usize); 3] = [
        (
            "die Katze saß heute auf der Matte",
            &[6, 6, 6, 7, 7, 7, 7],
            2,
        ),
        (
            "wir treffen uns morgen um acht am Bahnhof",
            &[6, 6, 6, 9, 9, 9, 9, 9],
            2,
        ),
        ("guten Morgen zusammen", &[3, 3, 3], 1),
    ];
    for (trace, (hyp, delays, invocations)) in traces.iter().zip(expect) {
        assert_eq!(trace.hypothesis, hyp);
        assert_eq!(trace.delays, delays);
        assert_eq!(trace.invocations, invocations);
        check_trace_invariants(trace);
    }
    let writes: Vec<(usize, Vec<&str>)> = traces[0]
        .events
        .iter()
        .filter(|e| e.kind == EventKind::Write)
        .map(|e| (e.t, e.payload.iter().map(String::as_str).collect()))
        .collect();
    assert_eq!(
        writes,
        [
            (6, vec!["die", "Katze", "saß"]),
            (7, vec!["heute", "auf", "der", "Matte"])
        ]
    );

    let r = report(&traces, &toy_references()).unwrap();
    let laal: Vec<f64> = r.per_sentence.iter().map(|s| s.laal).collect();
    assert_eq!(laal, [4.75, 5.0625, 3.0]);
    assert!((r.mean_laal - 12.8125 / 3.0).abs() < 1e-12);
    assert!((r.mean_invocations - 5.0 / 3.0).abs() < 1e-12);
    assert_eq!(r.corpus_bleu.score, 100.0);
}

#[test]
fn toy_fixture_sheet_gamma_1_0() {
    let traces = toy_traces(1.0);
    assert_eq!(traces[0].delays, [6, 7, 7, 7, 7, 7, 7]);
    assert_eq!(traces[1].delays, [6, 9, 9, 9, 9, 9, 9, 9]);
    let r = report(&traces, &toy_references()).unwrap();
    let laal: Vec<f64> = r.per_sentence.iter().map(|s| s.laal).collect();
    assert_eq!(laal, [6.0, 6.9375, 3.0]);
    assert_eq!(r.mean_laal, 5.3125);
}

#[test]
fn toy_fixture_gamma_0_4_trades_quality_for_latency() {
    let traces = toy_traces(0.4);
    assert_eq!(traces[0].hypothesis, "die Katze saß auf der Matte heute");
    assert_eq!(
        traces[1].hypothesis,
        "wir treffen uns am Bahnhof morgen um acht"
    );
    let r = report(&traces, &toy_references()).unwrap();
    assert!(r.corpus_bleu.score < 100.0);
    assert!(r.mean_laal < 12.8125 / 3.0);
}

#[test]
fn sessions_are_reproducible() {
    let a: Vec<String> = toy_traces(0.6)
        .iter()
        .map(|t| serde_json::to_string(t).unwrap())
        .collect();
    let b: Vec<String> = toy_traces(0.6)
        .iter()
        .map(|t| serde_json::to_string(t).unwrap())
        .collect();
    assert_eq!(a, b);
}

#[test]
fn nine_words_wait3_read3() {
    let src = "a b c d e f g h i";
    let backend = Transcriber::new(src);
    let cfg = PolicyConfig::new(3, 3, 5, 0.6).unwrap();
    let trace = run_session("x", src, None, &cfg, &backend, &PromptTemplate::default()).unwrap();
    let write_cursors: Vec<usize> = trace
        .events
        .iter()
        .filter(|e| e.kind == EventKind::Write)
        .map(|e| e.cursor)
        .collect();
    assert_eq!(write_cursors, [6, 9]);
    assert_eq!(trace.delays, [6, 6, 6, 6, 6, 6, 9, 9, 9]);
    assert_eq!(trace.invocations, 2);
    check_trace_invariants(&trace);
}

#[test]
fn wait0_read1_attempts_every_word() {
    let src = "a b c d e";
    let backend = Transcriber::new(src);
    let cfg = PolicyConfig::new(0, 1, 3, 0.6).unwrap();
    let trace = run_session("x", src, None, &cfg, &backend, &PromptTemplate::default()).unwrap();
    assert_eq!(trace.invocations, 5);
    assert_eq!(trace.delays, [1, 2, 3, 4, 5]);
    assert_eq!(trace.hypothesis, "A B C D E");
}

#[test]
fn short_source_is_offline() {
    let src = "a b";
    let backend = Transcriber::new(src);
    let cfg = PolicyConfig::new(5, 1, 2, 0.6).unwrap();
    let trace = run_session("x", src, None, &cfg, &backend, &PromptTemplate::default()).unwrap();
    assert_eq!(trace.delays, [2, 2]);
    assert_eq!(trace.invocations, 1);
}

fn gated_steps(len: usize, k: usize, n: usize) -> usize {
    (1..len)
        .filter(|&t| should_attempt_write(t, k, n, false))
        .count()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn latency_is_monotone_in_k(len in 1usize..16, k1 in 0usize..8, dk in 0usize..8, n in 1usize..5) {
        let src: Vec<String> = (0..len).map(|i| format!("w{i}")).collect();
        let src = src.join(" ");
        let backend = Transcriber::new(&src);
        let tpl = PromptTemplate::default();
        let run = |k| {
            let cfg = PolicyConfig::new(k, n, 3, 0.6).unwrap();
            run_session("x", &src, None, &cfg, &backend, &tpl).unwrap()
        };
        let early = run(k1);
        let late = run(k1 + dk);
        prop_assert_eq!(early.delays.len(), late.delays.len());
        for (a, b) in early.delays.iter().zip(&late.delays) {
            prop_assert!(a <= b);
        }
        for trace in [&early, &late] {
            check_trace_invariants(trace);
        }
        prop_assert!(late.invocations <= gated_steps(len, k1 + dk, n) + 1);
    }
}
