use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{sort_by_score, Backend, GenerationRequest, GenerationResponse, JoiningConvention};
use crate::agreement::BeamCandidate;
use crate::error::BackendError;

/// One line of a fixture file.
///
/// Entries are keyed by `(id, cursor)`. An entry may additionally pin
/// `committed`, the number of target tokens already committed when the
/// request is made; such entries take precedence over the unpinned one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixtureEntry {
    pub id: String,
    pub cursor: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub committed: Option<usize>,
    pub candidates: Vec<FixtureCandidate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixtureCandidate {
    pub tokens: Vec<String>,
    pub score: f64,
    #[serde(default)]
    pub finished: bool,
}

type Key = (String, usize, Option<usize>);

/// Deterministic backend answering from a pre-recorded table.
#[derive(Debug, Clone)]
pub struct ScriptedBackend {
    table: HashMap<Key, Vec<BeamCandidate>>,
    joining: JoiningConvention,
    model_id: String,
}

impl ScriptedBackend {
    pub fn from_entries(entries: Vec<FixtureEntry>) -> Result<Self, BackendError> {
        let mut table = HashMap::with_capacity(entries.len());
        for (idx, entry) in entries.into_iter().enumerate() {
            let line = idx + 1;
            let key = (entry.id.clone(), entry.cursor, entry.committed);
            if table.contains_key(&key) {
                return Err(BackendError::Fixture {
                    line,
                    message: format!(
                        "duplicate entry for id {:?} cursor {}{}",
                        entry.id,
                        entry.cursor,
                        entry
                            .committed
                            .map(|c| format!(" committed {c}"))
                            .unwrap_or_default()
                    ),
                });
            }
            if entry.candidates.is_empty() {
                return Err(BackendError::Fixture {
                    line,
                    message: "entry has no candidates".into(),
                });
            }
            let mut candidates = entry
                .candidates
                .iter()
                .map(|c| BeamCandidate::from_pieces(&c.tokens, c.score, c.finished))
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| BackendError::Fixture {
                    line,
                    message: e.to_string(),
                })?;
            sort_by_score(&mut candidates);
            table.insert(key, candidates);
        }
        Ok(Self {
            table,
            joining: JoiningConvention::default(),
            model_id: "scripted".into(),
        })
    }

    /// Parses a JSONL fixture. Blank lines are ignored.
    pub fn parse(text: &str) -> Result<Self, BackendError> {
        let mut entries = Vec::new();
        let mut lines = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let entry: FixtureEntry =
                serde_json::from_str(line).map_err(|e| BackendError::Fixture {
                    line: idx + 1,
                    message: e.to_string(),
                })?;
            entries.push(entry);
            lines.push(idx + 1);
        }
        // report errors against file lines, not entry indices
        Self::from_entries(entries).map_err(|e| match e {
            BackendError::Fixture { line, message } => BackendError::Fixture {
                line: lines[line - 1],
                message,
            },
            other => other,
        })
    }

    pub fn load(path: &Path) -> Result<Self, BackendError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            BackendError::Config(format!("cannot read fixture {}: {e}", path.display()))
        })?;
        let mut backend = Self::parse(&text)?;
        backend.model_id = format!("scripted:{}", path.display());
        Ok(backend)
    }

    pub fn with_joining(mut self, joining: JoiningConvention) -> Self {
        self.joining = joining;
        self
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }
}

impl Backend for ScriptedBackend {
    /// Looks up `(id, cursor, committed)`, then `(id, cursor)`, and returns the
    /// top `num_candidates` entries by score.
    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResponse, BackendError> {
        request.validate()?;
        let tag = &request.tag;
        let id = tag.sentence_id.clone();
        let found = self
            .table
            .get(&(id.clone(), tag.cursor, Some(tag.committed)))
            .or_else(|| self.table.get(&(id.clone(), tag.cursor, None)))
            .ok_or(BackendError::FixtureMiss {
                id,
                cursor: tag.cursor,
            })?;
        let candidates = found.iter().take(request.num_candidates).cloned().collect();
        Ok(GenerationResponse {
            candidates,
            model_id: self.model_id.clone(),
            latency_ms: 0,
        })
    }

    fn joining(&self) -> &JoiningConvention {
        &self.joining
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::RequestTag;

    fn request(id: &str, cursor: usize, committed: usize, n: usize) -> GenerationRequest {
        GenerationRequest::new("prompt", n, 8).with_tag(RequestTag {
            sentence_id: id.into(),
            cursor,
            committed,
            invocation: 0,
        })
    }

    const FIXTURE: &str = r#"
{"id":"1","cursor":2,"candidates":[{"tokens":["b"],"score":-2.0},{"tokens":["a"],"score":-1.0}]}
{"id":"1","cursor":2,"committed":1,"candidates":[{"tokens":["c"],"score":-1.0,"finished":true}]}
"#;

    #[test]
    fn lookup_sorts_and_truncates() {
        let backend = ScriptedBackend::parse(FIXTURE).unwrap();
        let resp = backend.generate(&request("1", 2, 0, 5)).unwrap();
        assert_eq!(resp.candidates.len(), 2);
        assert_eq!(resp.candidates[0].tokens[0].text, "a");
        let resp = backend.generate(&request("1", 2, 0, 1)).unwrap();
        assert_eq!(resp.candidates.len(), 1);
        assert_eq!(resp.candidates[0].tokens[0].text, "a");
    }

    #[test]
    fn committed_entries_take_precedence() {
        let backend = ScriptedBackend::parse(FIXTURE).unwrap();
        let resp = backend.generate(&request("1", 2, 1, 5)).unwrap();
        assert_eq!(resp.candidates.len(), 1);
        assert!(resp.candidates[0].finished);
        assert!(resp.candidates[0].tokens.last().unwrap().is_eos);
        // any other committed length falls back to the unpinned entry
        let resp = backend.generate(&request("1", 2, 7, 5)).unwrap();
        assert_eq!(resp.candidates.len(), 2);
    }

    #[test]
    fn miss_names_the_key() {
        let backend = ScriptedBackend::parse(FIXTURE).unwrap();
        let err = backend.generate(&request("2", 2, 0, 5)).unwrap_err();
        assert_eq!(
            err,
            BackendError::FixtureMiss {
                id: "2".into(),
                cursor: 2
            }
        );
    }

    #[test]
    fn same_request_same_response() {
        let backend = ScriptedBackend::parse(FIXTURE).unwrap();
        let a = backend.generate(&request("1", 2, 0, 5)).unwrap();
        let b = ScriptedBackend::parse(FIXTURE)
            .unwrap()
            .generate(&request("1", 2, 0, 5))
            .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_bad_entries() {
        let dup = r#"{"id":"1","cursor":1,"candidates":[{"tokens":["a"],"score":-1.0}]}
{"id":"1","cursor":1,"candidates":[{"tokens":["b"],"score":-1.0}]}"#;
        assert!(matches!(
            ScriptedBackend::parse(dup),
            Err(BackendError::Fixture { line: 2, .. })
        ));

        let nan = r#"{"id":"1","cursor":1,"candidates":[{"tokens":["a"],"score":1e999}]}"#;
        assert!(matches!(
            ScriptedBackend::parse(nan),
            Err(BackendError::Fixture { line: 1, .. })
        ));

        let empty_unfinished = r#"{"id":"1","cursor":1,"candidates":[{"tokens":[],"score":-1.0}]}"#;
        assert!(ScriptedBackend::parse(empty_unfinished).is_err());

        let garbage = "\n\n{not json}";
        assert!(matches!(
            ScriptedBackend::parse(garbage),
            Err(BackendError::Fixture { line: 3, .. })
        ));
    }
}
