//! Prefix-to-prefix fine-tuning data.
//!
//! For every language pair a seeded sample of source sentences is truncated to
//! a random 20–80% word prefix, the prefix is translated by the configured
//! backend, and the resulting pairs are mixed with the full sentence pairs
//! into one shuffled SFT file.

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backend::{Backend, GenerationRequest, RequestTag};
use crate::error::{Error, Result};
use crate::prompt::PromptTemplate;
use crate::text::{detokenize, join_words, tokenize_source, SentencePair, SourceWord};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrefixSpec {
    pub samples_per_pair: usize,
    pub min_frac: f64,
    pub max_frac: f64,
    pub seed: u64,
}

impl Default for PrefixSpec {
    fn default() -> Self {
        Self {
            samples_per_pair: 1000,
            min_frac: 0.2,
            max_frac: 0.8,
            seed: 0,
        }
    }
}

impl PrefixSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.min_frac > 0.0 && self.min_frac <= self.max_frac && self.max_frac <= 1.0) {
            return Err(Error::Config(format!(
                "need 0 < min_frac <= max_frac <= 1, got {}..{}",
                self.min_frac, self.max_frac
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Full,
    Prefix,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SftRecord {
    pub src_lang: String,
    pub tgt_lang: String,
    pub prompt: String,
    pub completion: String,
    pub origin: Origin,
    /// Loss is only ever computed on the completion.
    pub loss_on_prompt: bool,
}

/// Sentence pairs for one language direction.
#[derive(Debug, Clone)]
pub struct PairCorpus {
    pub src_lang: String,
    pub tgt_lang: String,
    pub pairs: Vec<SentencePair>,
}

impl PairCorpus {
    pub fn name(&self) -> String {
        format!("{}-{}", self.src_lang, self.tgt_lang)
    }
}

fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor() as usize
}

/// First `max(1, round(frac * len))` words.
pub fn truncate_prefix(words: &[SourceWord], frac: f64) -> Result<Vec<SourceWord>> {
    if words.is_empty() {
        return Err(Error::EmptySource);
    }
    let keep = round_half_up(frac * words.len() as f64).clamp(1, words.len());
    Ok(words[..keep].to_vec())
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrefixDataset {
    /// Ordered by (pair, sample index).
    pub records: Vec<SftRecord>,
    /// Per pair name: samples dropped because translation failed or was empty.
    pub skipped: Vec<(String, usize)>,
}

struct Job {
    pair: usize,
    sentence_id: String,
    prefix: Vec<SourceWord>,
}

/// Samples, truncates and translates prefixes for every pair. `parallelism`
/// bounds concurrent backend calls; output order does not depend on it.
pub fn build_prefix_dataset<B: Backend + ?Sized>(
    corpora: &[PairCorpus],
    spec: &PrefixSpec,
    backend: &B,
    template: &PromptTemplate,
    parallelism: usize,
) -> Result<PrefixDataset> {
    spec.validate()?;
    let mut jobs = Vec::new();
    for (p, corpus) in corpora.iter().enumerate() {
        if corpus.pairs.len() < spec.samples_per_pair {
            return Err(Error::CorpusTooSmall {
                pair: corpus.name(),
                available: corpus.pairs.len(),
                required: spec.samples_per_pair,
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(p as u64);
        let picked = sample(&mut rng, corpus.pairs.len(), spec.samples_per_pair);
        for idx in picked.iter() {
            let frac = rng.gen_range(spec.min_frac..=spec.max_frac);
            let pair = &corpus.pairs[idx];
            let words = tokenize_source(&pair.source)?;
            jobs.push(Job {
                pair: p,
                sentence_id: pair.id.clone(),
                prefix: truncate_prefix(&words, frac)?,
            });
        }
    }

    let templates: Vec<PromptTemplate> = corpora
        .iter()
        .map(|c| template.with_languages(&c.src_lang, &c.tgt_lang))
        .collect();
    let translate = |job: &Job| -> Option<SftRecord> {
        let corpus = &corpora[job.pair];
        let tpl = &templates[job.pair];
        let prompt = tpl.render(&join_words(&job.prefix), "");
        let request = GenerationRequest::new(prompt.clone(), 1, 256).with_tag(RequestTag {
            sentence_id: format!("{}:{}", corpus.name(), job.sentence_id),
            cursor: job.prefix.len(),
            committed: 0,
            invocation: 0,
        });
        let response = match backend.generate(&request) {
            Ok(r) => r,
            Err(e) => {
                log::warn!(
                    "skipping prefix of {}:{}: {e}",
                    corpus.name(),
                    job.sentence_id
                );
                return None;
            }
        };
        let best = response
            .candidates
            .iter()
            .reduce(|a, b| if b.score > a.score { b } else { a })?;
        let completion = detokenize(best.visible_tokens(), backend.joining());
        if completion.is_empty() {
            log::warn!(
                "skipping prefix of {}:{}: empty translation",
                corpus.name(),
                job.sentence_id
            );
            return None;
        }
        Some(SftRecord {
            src_lang: corpus.src_lang.clone(),
            tgt_lang: corpus.tgt_lang.clone(),
            prompt,
            completion,
            origin: Origin::Prefix,
            loss_on_prompt: false,
        })
    };

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    let results: Vec<Option<SftRecord>> = pool.install(|| {
        use rayon::prelude::*;
        jobs.par_iter().map(translate).collect()
    });

    let mut skipped: Vec<(String, usize)> = corpora.iter().map(|c| (c.name(), 0)).collect();
    let mut records = Vec::with_capacity(results.len());
    for (job, result) in jobs.iter().zip(results) {
        match result {
            Some(r) => records.push(r),
            None => skipped[job.pair].1 += 1,
        }
    }
    Ok(PrefixDataset { records, skipped })
}

/// Full sentence pairs as SFT records, in corpus order.
pub fn full_records(corpora: &[PairCorpus], template: &PromptTemplate) -> Vec<SftRecord> {
    corpora
        .iter()
        .flat_map(|corpus| {
            let tpl = template.with_languages(&corpus.src_lang, &corpus.tgt_lang);
            corpus.pairs.iter().map(move |pair| SftRecord {
                src_lang: corpus.src_lang.clone(),
                tgt_lang: corpus.tgt_lang.clone(),
                prompt: tpl.render(pair.source.trim(), ""),
                completion: pair.target.trim().to_owned(),
                origin: Origin::Full,
                loss_on_prompt: false,
            })
        })
        .collect()
}

/// Concatenates both sets and shuffles them with a seeded RNG.
pub fn mix_datasets(full: Vec<SftRecord>, prefix: Vec<SftRecord>, seed: u64) -> Vec<SftRecord> {
    let mut all = full;
    all.extend(prefix);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    all.shuffle(&mut rng);
    all
}

pub fn to_jsonl(records: &[SftRecord]) -> Result<String> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}
