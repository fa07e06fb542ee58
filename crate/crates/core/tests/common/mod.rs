//! Oracles and fixtures shared by the integration tests. Nothing here calls
//! into the code paths it is used to check.
#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::thread;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use simulmt::{BeamCandidate, TargetToken};

pub fn fixtures_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

/// Candidate sets as plain symbol sequences plus scores.
#[derive(Debug, Clone)]
pub struct RawSet {
    pub seqs: Vec<Vec<u8>>,
    pub scores: Vec<f64>,
}

impl RawSet {
    pub fn candidates(&self) -> Vec<BeamCandidate> {
        self.seqs
            .iter()
            .zip(&self.scores)
            .map(|(seq, &score)| {
                let pieces: Vec<String> = seq.iter().map(|s| format!("t{s}")).collect();
                // empty sequences are only valid as finished candidates
                BeamCandidate::from_pieces(&pieces, score, seq.is_empty()).unwrap()
            })
            .collect()
    }
}

pub fn symbols(tokens: &[TargetToken]) -> Vec<u8> {
    tokens
        .iter()
        .filter(|t| !t.is_eos)
        .map(|t| t.text[1..].parse().unwrap())
        .collect()
}

/// Random candidate sets: B in 2..=10, alphabet of at most 8 symbols, lengths
/// up to 12. Half of the sets share a mutated common stem so that agreement
/// is frequent.
pub fn random_sets(count: usize, seed: u64) -> Vec<RawSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let b = rng.gen_range(2..=10);
            let alphabet: u8 = rng.gen_range(1..=8);
            let stem: Vec<u8> = (0..rng.gen_range(0..=12))
                .map(|_| rng.gen_range(0..alphabet))
                .collect();
            let shared = rng.gen_bool(0.5);
            let seqs = (0..b)
                .map(|_| {
                    let mut seq: Vec<u8> = if shared {
                        stem[..rng.gen_range(0..=stem.len())].to_vec()
                    } else {
                        Vec::new()
                    };
                    while seq.len() < 12 && rng.gen_bool(0.7) {
                        seq.push(rng.gen_range(0..alphabet));
                    }
                    seq
                })
                .collect();
            let scores = (0..b).map(|_| -rng.gen_range(0.0..10.0)).collect();
            RawSet { seqs, scores }
        })
        .collect()
}

/// Longest common prefix by trying every length from the longest down.
pub fn brute_force_common_prefix(seqs: &[Vec<u8>]) -> Vec<u8> {
    let longest = seqs.iter().map(Vec::len).max().unwrap_or(0);
    for len in (0..=longest).rev() {
        if seqs
            .iter()
            .all(|s| s.len() >= len && s[..len] == seqs[0][..len])
        {
            return seqs[0][..len].to_vec();
        }
    }
    Vec::new()
}

pub fn pairwise_min_prefix_len(seqs: &[Vec<u8>]) -> usize {
    let mut best = seqs[0].len();
    for a in seqs {
        for b in seqs {
            let common = a.iter().zip(b).take_while(|(x, y)| x == y).count();
            best = best.min(common);
        }
    }
    best
}

/// Straightforward corpus BLEU-4 over whitespace tokens, n-grams compared as
/// joined strings.
pub fn naive_bleu(hyps: &[String], refs: &[String]) -> f64 {
    let mut matched = [0f64; 4];
    let mut possible = [0f64; 4];
    let mut c = 0f64;
    let mut r = 0f64;
    for (h, rf) in hyps.iter().zip(refs) {
        let hw: Vec<&str> = h.split(' ').filter(|w| !w.is_empty()).collect();
        let rw: Vec<&str> = rf.split(' ').filter(|w| !w.is_empty()).collect();
        c += hw.len() as f64;
        r += rw.len() as f64;
        for n in 1..=4 {
            if hw.len() < n {
                continue;
            }
            let mut ref_grams: Vec<String> = if rw.len() >= n {
                (0..=rw.len() - n).map(|i| rw[i..i + n].join(" ")).collect()
            } else {
                Vec::new()
            };
            for i in 0..=hw.len() - n {
                let g = hw[i..i + n].join(" ");
                possible[n - 1] += 1.0;
                if let Some(pos) = ref_grams.iter().position(|x| *x == g) {
                    ref_grams.remove(pos);
                    matched[n - 1] += 1.0;
                }
            }
        }
    }
    if c == 0.0 || matched.contains(&0.0) {
        return 0.0;
    }
    let mut product = 1.0;
    for n in 0..4 {
        product *= matched[n] / possible[n];
    }
    let bp = if c < r { (1.0 - r / c).exp() } else { 1.0 };
    100.0 * bp * product.powf(0.25)
}

/// Average lagging with the hypothesis length as rate denominator.
pub fn average_lagging(delays: &[usize], src_len: usize) -> f64 {
    let rate = src_len as f64 / delays.len() as f64;
    let tau = delays
        .iter()
        .position(|&d| d == src_len)
        .map(|i| i + 1)
        .unwrap_or(delays.len());
    (0..tau)
        .map(|i| delays[i] as f64 - i as f64 * rate)
        .sum::<f64>()
        / tau as f64
}

/// Minimal single-purpose HTTP server answering every POST with the body
/// produced by `respond`. Returns the base URL and a log of received bodies.
pub fn stub_server<F>(respond: F) -> (String, Arc<Mutex<Vec<serde_json::Value>>>)
where
    F: Fn(&serde_json::Value) -> (u16, String) + Send + Sync + 'static,
{
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let log = Arc::new(Mutex::new(Vec::new()));
    let seen = Arc::clone(&log);
    let respond = Arc::new(respond);
    thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { continue };
            let seen = Arc::clone(&seen);
            let respond = Arc::clone(&respond);
            thread::spawn(move || {
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut content_length = 0;
                loop {
                    let mut line = String::new();
                    if reader.read_line(&mut line).unwrap_or(0) == 0 {
                        return;
                    }
                    let line = line.trim_end();
                    if line.is_empty() {
                        break;
                    }
                    if let Some((k, v)) = line.split_once(':') {
                        if k.eq_ignore_ascii_case("content-length") {
                            content_length = v.trim().parse().unwrap();
                        }
                    }
                }
                let mut body = vec![0; content_length];
                reader.read_exact(&mut body).unwrap();
                let json: serde_json::Value =
                    serde_json::from_slice(&body).unwrap_or(serde_json::Value::Null);
                let (status, payload) = respond(&json);
                seen.lock().unwrap().push(json);
                let reply = format!(
                    "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{payload}",
                    payload.len()
                );
                let _ = stream.write_all(reply.as_bytes());
            });
        }
    });
    (format!("http://{addr}"), log)
}

fn random_sentence(rng: &mut ChaCha8Rng, vocab: &[&str]) -> String {
    let len = rng.gen_range(0..=12);
    (0..len)
        .map(|_| vocab[rng.gen_range(0..vocab.len())])
        .collect::<Vec<_>>()
        .join(" ")
}

/// Small reference corpus with lightly perturbed hypotheses.
pub fn random_corpus(rng: &mut ChaCha8Rng) -> (Vec<String>, Vec<String>) {
    const VOCAB: &[&str] = &[
        "der", "die", "das", "Haus", "ist", "klein", "groß", "und", "nicht",
    ];
    let vocab = &VOCAB[..rng.gen_range(3..=VOCAB.len())];
    let size = rng.gen_range(1..=6);
    let refs: Vec<String> = (0..size).map(|_| random_sentence(rng, vocab)).collect();
    let hyps = refs
        .iter()
        .map(|r| {
            // perturb the reference so matches are partial but frequent
            let mut words: Vec<&str> = r.split(' ').filter(|w| !w.is_empty()).collect();
            for w in words.iter_mut() {
                if rng.gen_bool(0.2) {
                    *w = vocab[rng.gen_range(0..vocab.len())];
                }
            }
            if rng.gen_bool(0.3) && !words.is_empty() {
                words.pop();
            }
            if rng.gen_bool(0.3) {
                words.push(vocab[0]);
            }
            words.join(" ")
        })
        .collect();
    (hyps, refs)
}
