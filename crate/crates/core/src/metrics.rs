//! Corpus BLEU and LAAL over session traces.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::{PolicyConfig, SessionTrace};
use crate::text::{compare_ids, word_count};

const MAX_ORDER: usize = 4;

/// Word-level delays of one hypothesis against its source and reference.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayProfile {
    pub delays: Vec<usize>,
    pub src_len: usize,
    pub hyp_len: usize,
    pub ref_len: usize,
}

impl DelayProfile {
    /// Checks length agreement, monotonicity and the `[1, src_len]` range.
    pub fn new(delays: Vec<usize>, src_len: usize, ref_len: usize) -> Result<Self> {
        if let Some(w) = delays.windows(2).find(|w| w[0] > w[1]) {
            return Err(Error::UndefinedMetric(format!(
                "delays decrease ({} then {})",
                w[0], w[1]
            )));
        }
        if let Some(d) = delays.iter().find(|&&d| d == 0 || d > src_len) {
            return Err(Error::UndefinedMetric(format!(
                "delay {d} outside [1, {src_len}]"
            )));
        }
        Ok(Self {
            hyp_len: delays.len(),
            delays,
            src_len,
            ref_len,
        })
    }

    /// 1-based index of the first word emitted with the full source read,
    /// and whether the fallback (no such word) was used.
    pub fn cutoff(&self) -> (usize, bool) {
        match self.delays.iter().position(|&d| d == self.src_len) {
            Some(i) => (i + 1, false),
            None => (self.delays.len(), true),
        }
    }
}

/// Length-adaptive average lagging, in source words.
///
/// Averages `d_i - (i - 1) * |X| / max(|Y|, |Y*|)` over the words up to and
/// including the first one committed after the whole source was read.
pub fn laal(profile: &DelayProfile) -> Result<f64> {
    if profile.delays.is_empty() {
        return Err(Error::UndefinedMetric("LAAL of an empty hypothesis".into()));
    }
    let (tau, fallback) = profile.cutoff();
    if fallback {
        log::warn!("no word was committed with the full source read; averaging over all words");
    }
    let rate = profile.src_len as f64 / profile.hyp_len.max(profile.ref_len) as f64;
    let total: f64 = profile.delays[..tau]
        .iter()
        .enumerate()
        .map(|(i, &d)| d as f64 - i as f64 * rate)
        .sum();
    Ok(total / tau as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BleuScore {
    /// 0..=100.
    pub score: f64,
    pub precisions: [f64; MAX_ORDER],
    /// 0 only when every hypothesis is empty.
    pub brevity_penalty: f64,
    pub hyp_len: usize,
    pub ref_len: usize,
}

/// Cased tokenization for BLEU: every character that is neither alphanumeric
/// nor whitespace becomes its own token.
pub fn bleu_tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut word = String::new();
    for ch in text.chars() {
        if ch.is_whitespace() {
            if !word.is_empty() {
                tokens.push(std::mem::take(&mut word));
            }
        } else if ch.is_alphanumeric() {
            word.push(ch);
        } else {
            if !word.is_empty() {
                tokens.push(std::mem::take(&mut word));
            }
            tokens.push(ch.to_string());
        }
    }
    if !word.is_empty() {
        tokens.push(word);
    }
    tokens
}

fn ngram_counts(tokens: &[String], order: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    for gram in tokens.windows(order) {
        *counts.entry(gram).or_insert(0) += 1;
    }
    counts
}

/// Corpus-level BLEU-4 with brevity penalty and no smoothing.
pub fn corpus_bleu<H: AsRef<str>, R: AsRef<str>>(
    hypotheses: &[H],
    references: &[R],
) -> Result<BleuScore> {
    if hypotheses.len() != references.len() {
        return Err(Error::LengthMismatch {
            hypotheses: hypotheses.len(),
            references: references.len(),
        });
    }
    if hypotheses.is_empty() {
        return Err(Error::UndefinedMetric("BLEU of an empty corpus".into()));
    }
    let mut matches = [0usize; MAX_ORDER];
    let mut totals = [0usize; MAX_ORDER];
    let (mut hyp_len, mut ref_len) = (0, 0);
    for (hyp, reference) in hypotheses.iter().zip(references) {
        let hyp = bleu_tokenize(hyp.as_ref());
        let reference = bleu_tokenize(reference.as_ref());
        hyp_len += hyp.len();
        ref_len += reference.len();
        for order in 1..=MAX_ORDER {
            let ref_counts = ngram_counts(&reference, order);
            for (gram, count) in ngram_counts(&hyp, order) {
                let clip = ref_counts.get(gram).copied().unwrap_or(0);
                matches[order - 1] += count.min(clip);
            }
            totals[order - 1] += hyp.len().saturating_sub(order - 1);
        }
    }

    let mut precisions = [0.0; MAX_ORDER];
    for i in 0..MAX_ORDER {
        if totals[i] > 0 {
            precisions[i] = matches[i] as f64 / totals[i] as f64;
        }
    }
    if hyp_len == 0 {
        log::warn!("all hypotheses are empty; BLEU is 0");
        return Ok(BleuScore {
            score: 0.0,
            precisions,
            brevity_penalty: 0.0,
            hyp_len,
            ref_len,
        });
    }
    let brevity_penalty = if hyp_len < ref_len {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    } else {
        1.0
    };
    let score = if precisions.contains(&0.0) {
        0.0
    } else {
        let log_mean = precisions.iter().map(|p| p.ln()).sum::<f64>() / MAX_ORDER as f64;
        100.0 * brevity_penalty * log_mean.exp()
    };
    Ok(BleuScore {
        score,
        precisions,
        brevity_penalty,
        hyp_len,
        ref_len,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentenceMetrics {
    pub id: String,
    pub laal: f64,
    pub invocations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub corpus_bleu: BleuScore,
    pub mean_laal: f64,
    pub mean_invocations: f64,
    pub per_sentence: Vec<SentenceMetrics>,
    pub config: Option<PolicyConfig>,
}

/// Delay profile of a trace, checked against its hypothesis.
pub fn trace_profile(trace: &SessionTrace, reference: &str) -> Result<DelayProfile> {
    let hyp_len = word_count(&trace.hypothesis);
    if trace.delays.len() != hyp_len {
        return Err(Error::UndefinedMetric(format!(
            "sentence {}: {} delays for {} hypothesis words",
            trace.id,
            trace.delays.len(),
            hyp_len
        )));
    }
    DelayProfile::new(
        trace.delays.clone(),
        word_count(&trace.source),
        word_count(reference),
    )
}

/// LAAL of one trace. An empty hypothesis counts as fully offline.
pub fn trace_laal(trace: &SessionTrace, reference: &str) -> Result<f64> {
    let profile = trace_profile(trace, reference)?;
    if profile.delays.is_empty() {
        log::warn!(
            "sentence {}: empty hypothesis, LAAL set to source length",
            trace.id
        );
        return Ok(profile.src_len as f64);
    }
    laal(&profile)
}

/// Aggregates traces into a report. Sentences are ordered by id, so the
/// result does not depend on the order of `traces`.
pub fn report(
    traces: &[SessionTrace],
    references: &HashMap<String, String>,
) -> Result<MetricsReport> {
    if traces.is_empty() {
        return Err(Error::UndefinedMetric("no traces to score".into()));
    }
    let mut sorted: Vec<&SessionTrace> = traces.iter().collect();
    sorted.sort_by(|a, b| compare_ids(&a.id, &b.id));

    let missing: Vec<String> = sorted
        .iter()
        .filter(|t| !references.contains_key(&t.id))
        .map(|t| t.id.clone())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingReference(missing));
    }

    let mut per_sentence = Vec::with_capacity(sorted.len());
    let mut hyps = Vec::with_capacity(sorted.len());
    let mut refs = Vec::with_capacity(sorted.len());
    for trace in &sorted {
        let reference = &references[&trace.id];
        per_sentence.push(SentenceMetrics {
            id: trace.id.clone(),
            laal: trace_laal(trace, reference)?,
            invocations: trace.invocations,
        });
        hyps.push(trace.hypothesis.as_str());
        refs.push(reference.as_str());
    }
    let count = per_sentence.len() as f64;
    let mean_laal = per_sentence.iter().map(|s| s.laal).sum::<f64>() / count;
    let mean_invocations = per_sentence
        .iter()
        .map(|s| s.invocations as f64)
        .sum::<f64>()
        / count;
    Ok(MetricsReport {
        corpus_bleu: corpus_bleu(&hyps, &refs)?,
        mean_laal,
        mean_invocations,
        per_sentence,
        config: Some(sorted[0].config),
    })
}

impl MetricsReport {
    /// One row per sentence plus a trailing `mean` row.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let csv_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
        w.write_record(["id", "laal", "invocations"])
            .map_err(csv_err)?;
        for s in &self.per_sentence {
            w.write_record([s.id.clone(), s.laal.to_string(), s.invocations.to_string()])
                .map_err(csv_err)?;
        }
        w.write_record([
            "mean".to_string(),
            self.mean_laal.to_string(),
            self.mean_invocations.to_string(),
        ])
        .map_err(csv_err)?;
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}
