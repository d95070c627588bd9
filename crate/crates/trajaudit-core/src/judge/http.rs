//! HTTP judge: POST /judge with the same JSON schema as the subprocess
//! protocol, one request object per call, response body as the response
//! object. Non-2xx statuses map to protocol errors.

use super::{Judge, JudgeError, JudgeMode, JudgeReply, JudgeRequest, WireResponse};
use std::time::Duration;
use ureq::Agent;

pub struct HttpJudge {
    agent: Agent,
    url: String,
    mode: JudgeMode,
}

impl HttpJudge {
    pub fn new(url: String, mode: JudgeMode, timeout: Duration) -> Self {
        let agent: Agent = Agent::config_builder()
            .timeout_global(Some(timeout))
            .build()
            .into();
        Self { agent, url, mode }
    }
}

impl Judge for HttpJudge {
    fn mode(&self) -> JudgeMode {
        self.mode
    }

    fn judge_one(&mut self, request: &JudgeRequest) -> Result<JudgeReply, JudgeError> {
        let mut response = self
            .agent
            .post(&self.url)
            .send_json(request)
            .map_err(|e| match e {
                ureq::Error::StatusCode(code) => {
                    JudgeError::Protocol(format!("judge endpoint returned status {code}"))
                }
                ureq::Error::Timeout(_) => {
                    JudgeError::Protocol("judge endpoint timed out".into())
                }
                other => JudgeError::Protocol(other.to_string()),
            })?;
        let wire: WireResponse = response
            .body_mut()
            .read_json()
            .map_err(|e| JudgeError::Protocol(format!("bad response body: {e}")))?;
        if wire.id != request.id() {
            return Err(JudgeError::Protocol(format!(
                "response id {:?} does not match request id {:?}",
                wire.id,
                request.id()
            )));
        }
        wire.into_reply()
    }
}
