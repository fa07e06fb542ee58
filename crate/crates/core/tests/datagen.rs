use std::collections::HashSet;

use simulmt::backend::{GenerationRequest, GenerationResponse};
use simulmt::datagen::{
    build_prefix_dataset, full_records, mix_datasets, to_jsonl, Origin, PairCorpus, PrefixSpec,
};
use simulmt::text::SentencePair;
use simulmt::{Backend, BackendError, BeamCandidate, JoiningConvention, PromptTemplate};

/// "Translates" by upper-casing the source words found after the last `": "`
/// of the prompt. Fails on sentences whose id ends in 13.
struct Upper {
    joining: JoiningConvention,
}

impl Backend for Upper {
    fn generate(&self, req: &GenerationRequest) -> Result<GenerationResponse, BackendError> {
        if req.tag.sentence_id.ends_with(":13") {
            return Err(BackendError::Transport {
                request_id: req.tag.request_id(),
                message: "flaky".into(),
            });
        }
        let body = req.prompt.rsplit(": ").next().unwrap();
        let source = body.strip_suffix(" [/INST] ").unwrap();
        let pieces: Vec<String> = source.split(' ').map(str::to_uppercase).collect();
        Ok(GenerationResponse {
            candidates: vec![BeamCandidate::from_pieces(&pieces, -1.0, true).unwrap()],
            model_id: "upper".into(),
            latency_ms: 0,
        })
    }

    fn joining(&self) -> &JoiningConvention {
        &self.joining
    }
}

fn backend() -> Upper {
    Upper {
        joining: JoiningConvention::default(),
    }
}

fn corpus(src: &str, tgt: &str, size: usize) -> PairCorpus {
    PairCorpus {
        src_lang: src.into(),
        tgt_lang: tgt.into(),
        pairs: (1..=size)
            .map(|i| {
                let len = 1 + i % 17;
                let words: Vec<String> = (0..len).map(|w| format!("s{i}w{w}")).collect();
                SentencePair {
                    id: i.to_string(),
                    source: words.join(" "),
                    target: format!("t{i}"),
                }
            })
            .collect(),
    }
}

fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor() as usize
}

#[test]
fn prefixes_respect_bounds_and_sampling() {
    let corpora = vec![
        corpus("English", "German", 60),
        corpus("English", "French", 60),
    ];
    let spec = PrefixSpec {
        samples_per_pair: 40,
        seed: 3,
        ..PrefixSpec::default()
    };
    let data =
        build_prefix_dataset(&corpora, &spec, &backend(), &PromptTemplate::default(), 4).unwrap();
    // the sentence with id 13 fails whenever it is sampled
    let total: usize = data.records.len() + data.skipped.iter().map(|s| s.1).sum::<usize>();
    assert_eq!(total, 80);

    for pair in ["German", "French"] {
        let mut seen = HashSet::new();
        for r in data.records.iter().filter(|r| r.tgt_lang == pair) {
            assert_eq!(r.origin, Origin::Prefix);
            assert!(!r.loss_on_prompt);
            let prefix: Vec<&str> = r.completion.split(' ').collect();
            let id: usize = prefix[0][1..].split('W').next().unwrap().parse().unwrap();
            assert!(seen.insert(id), "sentence {id} sampled twice for {pair}");
            let full_len = 1 + id % 17;
            let lo = round_half_up(0.2 * full_len as f64).max(1);
            let hi = round_half_up(0.8 * full_len as f64).max(1);
            assert!(
                (lo..=hi).contains(&prefix.len()),
                "{} words of {full_len}",
                prefix.len()
            );
        }
    }
}

#[test]
fn output_is_independent_of_parallelism_and_reproducible() {
    let corpora = vec![corpus("English", "German", 50)];
    let spec = PrefixSpec {
        samples_per_pair: 30,
        seed: 9,
        ..PrefixSpec::default()
    };
    let tpl = PromptTemplate::default();
    let a = build_prefix_dataset(&corpora, &spec, &backend(), &tpl, 1).unwrap();
    let b = build_prefix_dataset(&corpora, &spec, &backend(), &tpl, 8).unwrap();
    assert_eq!(a, b);
    let other = PrefixSpec { seed: 10, ..spec };
    let c = build_prefix_dataset(&corpora, &other, &backend(), &tpl, 1).unwrap();
    assert_ne!(a.records, c.records);
}

#[test]
fn small_corpus_is_rejected() {
    let corpora = vec![corpus("English", "German", 5)];
    let spec = PrefixSpec {
        samples_per_pair: 10,
        ..PrefixSpec::default()
    };
    let err = build_prefix_dataset(&corpora, &spec, &backend(), &PromptTemplate::default(), 1)
        .unwrap_err();
    assert!(matches!(
        err,
        simulmt::Error::CorpusTooSmall {
            available: 5,
            required: 10,
            ..
        }
    ));
}

#[test]
fn mixed_jsonl_is_deterministic() {
    let corpora = vec![corpus("English", "German", 20)];
    let tpl = PromptTemplate::default();
    let spec = PrefixSpec {
        samples_per_pair: 10,
        seed: 1,
        ..PrefixSpec::default()
    };
    let make = || {
        let prefix = build_prefix_dataset(&corpora, &spec, &backend(), &tpl, 2).unwrap();
        let skipped: usize = prefix.skipped.iter().map(|s| s.1).sum();
        let jsonl = to_jsonl(&mix_datasets(
            full_records(&corpora, &tpl),
            prefix.records,
            5,
        ))
        .unwrap();
        (jsonl, skipped)
    };
    let (first, skipped) = make();
    assert_eq!(first, make().0);
    assert_eq!(first.lines().count() + skipped, 30);
    assert!(first
        .lines()
        .all(|l| l.contains("\"loss_on_prompt\":false")));
    let full = full_records(&corpora, &tpl);
    assert!(full[0].prompt.ends_with(" [/INST] "));
    assert_eq!(full[0].completion, "t1");
}
