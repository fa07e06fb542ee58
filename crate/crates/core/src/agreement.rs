//! Commit-safe prefixes from a set of candidate continuations.
//!
//! [`lcp`] is the classic local-agreement rule: commit what every candidate
//! agrees on. [`ralcp`] relaxes it with position-wise voting: the most common
//! token at a position is committed when its share of the `B` candidates
//! reaches the agreement threshold `gamma`. With `gamma == 1.0` the two agree.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::TargetToken;

/// One scored continuation returned by a backend.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamCandidate {
    pub tokens: Vec<TargetToken>,
    /// Cumulative log-probability.
    pub score: f64,
    pub finished: bool,
}

impl BeamCandidate {
    pub fn new(tokens: Vec<TargetToken>, score: f64, finished: bool) -> Result<Self> {
        if !score.is_finite() {
            return Err(Error::InvalidCandidate(format!(
                "score {score} is not finite"
            )));
        }
        if tokens.is_empty() && !finished {
            return Err(Error::InvalidCandidate(
                "unfinished candidate has no tokens".into(),
            ));
        }
        Ok(Self {
            tokens,
            score,
            finished,
        })
    }

    /// Builds a candidate from surface pieces, appending an EOS token when
    /// `finished` is set.
    pub fn from_pieces<S: AsRef<str>>(pieces: &[S], score: f64, finished: bool) -> Result<Self> {
        let mut tokens: Vec<TargetToken> = pieces
            .iter()
            .map(|p| TargetToken::new(p.as_ref()))
            .collect();
        let cand = Self::new(tokens.clone(), score, finished)?;
        if finished {
            tokens.push(TargetToken::eos());
        }
        Ok(Self { tokens, ..cand })
    }

    /// Tokens up to (not including) the first EOS.
    pub fn visible_tokens(&self) -> &[TargetToken] {
        let end = self
            .tokens
            .iter()
            .position(|t| t.is_eos)
            .unwrap_or(self.tokens.len());
        &self.tokens[..end]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgreementConfig {
    pub gamma: f64,
    pub strip_eos: bool,
    /// Drop candidates that disagree with an accepted token from later votes.
    #[serde(default = "default_true")]
    pub filter_disagreeing: bool,
}

fn default_true() -> bool {
    true
}

impl AgreementConfig {
    pub fn new(gamma: f64) -> Result<Self> {
        validate_gamma(gamma)?;
        Ok(Self {
            gamma,
            strip_eos: false,
            filter_disagreeing: true,
        })
    }

    pub fn strip_eos(mut self, strip: bool) -> Self {
        self.strip_eos = strip;
        self
    }

    pub fn filter_disagreeing(mut self, filter: bool) -> Self {
        self.filter_disagreeing = filter;
        self
    }
}

pub(crate) fn validate_gamma(gamma: f64) -> Result<()> {
    if gamma.is_finite() && gamma > 0.0 && gamma <= 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "gamma must lie in (0, 1], got {gamma}"
        )))
    }
}

/// Longest token sequence that prefixes every candidate.
pub fn lcp(candidates: &[BeamCandidate]) -> Result<Vec<TargetToken>> {
    let (first, rest) = candidates.split_first().ok_or(Error::EmptyCandidates)?;
    let mut len = first.tokens.len();
    for cand in rest {
        len = first.tokens[..len]
            .iter()
            .zip(&cand.tokens)
            .take_while(|(a, b)| a == b)
            .count();
    }
    Ok(first.tokens[..len].to_vec())
}

/// Accepted prefix plus the vote count behind each accepted token.
#[derive(Debug, Clone, PartialEq)]
pub struct Agreement {
    pub prefix: Vec<TargetToken>,
    pub votes: Vec<usize>,
    /// Denominator the votes were normalized by.
    pub beam: usize,
}

/// Relaxed-agreement prefix, normalizing votes by the number of candidates.
pub fn ralcp(candidates: &[BeamCandidate], config: &AgreementConfig) -> Result<Vec<TargetToken>> {
    Ok(ralcp_votes(candidates, config, candidates.len())?.prefix)
}

/// Relaxed-agreement prefix with an explicit vote denominator `beam`, used when
/// a backend returned fewer candidates than requested.
pub fn ralcp_votes(
    candidates: &[BeamCandidate],
    config: &AgreementConfig,
    beam: usize,
) -> Result<Agreement> {
    if candidates.is_empty() {
        return Err(Error::EmptyCandidates);
    }
    validate_gamma(config.gamma)?;
    let beam = beam.max(candidates.len());

    let seqs: Vec<Vec<&TargetToken>> = candidates
        .iter()
        .map(|c| {
            c.tokens
                .iter()
                .filter(|t| !(config.strip_eos && t.is_eos))
                .collect()
        })
        .collect();
    let mut active = vec![true; candidates.len()];
    let mut prefix = Vec::new();
    let mut votes = Vec::new();

    for pos in 0.. {
        // (token, count, best score among its voters)
        let mut tally: Vec<(&TargetToken, usize, f64)> = Vec::new();
        for (j, seq) in seqs.iter().enumerate() {
            if !active[j] {
                continue;
            }
            let Some(&tok) = seq.get(pos) else { continue };
            let score = candidates[j].score;
            match tally.iter_mut().find(|(t, _, _)| *t == tok) {
                Some(entry) => {
                    entry.1 += 1;
                    entry.2 = entry.2.max(score);
                }
                None => tally.push((tok, 1, score)),
            }
        }
        // Ties on count go to the token backed by the best-scoring candidate;
        // remaining ties keep first-seen order.
        let mut winner: Option<(&TargetToken, usize, f64)> = None;
        for entry in tally {
            let better = match winner {
                None => true,
                Some((_, count, score)) => entry.1 > count || (entry.1 == count && entry.2 > score),
            };
            if better {
                winner = Some(entry);
            }
        }
        let Some((token, count, _)) = winner else {
            break;
        };
        if (count as f64) / (beam as f64) < config.gamma {
            break;
        }
        if config.filter_disagreeing {
            for (j, seq) in seqs.iter().enumerate() {
                if active[j] && seq.get(pos) != Some(&token) {
                    active[j] = false;
                }
            }
        }
        prefix.push(token.clone());
        votes.push(count);
    }

    Ok(Agreement {
        prefix,
        votes,
        beam,
    })
}
