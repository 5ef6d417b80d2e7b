use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gateway::ModelEndpoint;
use crate::protocol::SessionPlan;

pub const MANIFEST_VERSION: u32 = 1;

/// Written before the first round runs. Endpoints carry only the name of
/// the token variable, never its value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub manifest_version: u32,
    pub tool_version: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub created_at: Option<String>,
    pub session_id: String,
    pub master_seed: u64,
    pub timestamps: bool,
    pub log_file: String,
    pub endpoints: Vec<ModelEndpoint>,
    pub plan: SessionPlan,
}

impl RunManifest {
    pub fn new(plan: &SessionPlan, log_file: impl Into<String>, timestamps: bool) -> Self {
        RunManifest {
            manifest_version: MANIFEST_VERSION,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            created_at: timestamps.then(|| chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)),
            session_id: plan.session_id.clone(),
            master_seed: plan.master_seed,
            timestamps,
            log_file: log_file.into(),
            endpoints: plan.endpoints(),
            plan: plan.clone(),
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let m: RunManifest =
            serde_json::from_str(&text).map_err(|e| Error::Schema(format!("{}: {e}", path.display())))?;
        if m.manifest_version != MANIFEST_VERSION {
            return Err(Error::Schema(format!(
                "{}: manifest version {} is not supported (expected {MANIFEST_VERSION})",
                path.display(),
                m.manifest_version
            )));
        }
        Ok(m)
    }
}
