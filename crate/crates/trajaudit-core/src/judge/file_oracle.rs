//! Potential judge backed by a precomputed score file.
//!
//! Input is JSON Lines of `{"episode_id": str, "frame_index": int,
//! "potential": float}`; queries are answered by exact
//! (episode, frame) lookup.

use super::{Judge, JudgeError, JudgeMode, JudgeReply, JudgeRequest};
use serde::Deserialize;
use std::collections::BTreeMap;
use std::io::BufRead;

#[derive(Debug, Deserialize)]
struct OracleLine {
    episode_id: String,
    frame_index: u32,
    potential: f64,
}

pub struct FileOracleJudge {
    scores: BTreeMap<(String, u32), f64>,
}

impl FileOracleJudge {
    pub fn from_reader<R: BufRead>(reader: R) -> Result<Self, JudgeError> {
        let mut scores = BTreeMap::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: OracleLine = serde_json::from_str(&line).map_err(|e| {
                JudgeError::Protocol(format!("oracle file line {}: {e}", lineno + 1))
            })?;
            scores.insert((parsed.episode_id, parsed.frame_index), parsed.potential);
        }
        Ok(Self { scores })
    }
}

impl Judge for FileOracleJudge {
    fn mode(&self) -> JudgeMode {
        JudgeMode::Potential
    }

    fn judge_one(&mut self, request: &JudgeRequest) -> Result<JudgeReply, JudgeError> {
        let JudgeRequest::Potential { observation, .. } = request else {
            return Err(JudgeError::Protocol(
                "file oracle only answers potential queries".into(),
            ));
        };
        let key = (observation.episode_id.clone(), observation.frame);
        self.scores
            .get(&key)
            .copied()
            .map(JudgeReply::Potential)
            .ok_or_else(|| {
                JudgeError::Protocol(format!(
                    "no oracle entry for episode {:?} frame {}",
                    key.0, key.1
                ))
            })
    }
}
