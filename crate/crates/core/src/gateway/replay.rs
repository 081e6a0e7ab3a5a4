use std::fs;
use std::path::Path;
use std::sync::Mutex;

use super::{ChatBackend, ChatRequest, GatewayError};

/// Deterministic stand-in for an LLM: hands out canned responses in order,
/// each exactly once, regardless of what it is asked.
pub struct ReplayBackend {
    source_name: String,
    responses: Vec<String>,
    cursor: Mutex<usize>,
}

impl ReplayBackend {
    /// Loads every regular file in `dir`, ordered by file name.
    pub fn from_dir(dir: &Path) -> Result<Self, GatewayError> {
        let entries = fs::read_dir(dir)
            .map_err(|e| GatewayError::Config(format!("replay directory {}: {e}", dir.display())))?;
        let mut files: Vec<_> = entries
            .filter_map(|e| e.ok())
            .filter(|e| e.file_type().map(|t| t.is_file()).unwrap_or(false))
            .map(|e| e.path())
            .collect();
        files.sort();
        let responses = files
            .iter()
            .map(fs::read_to_string)
            .collect::<Result<Vec<_>, _>>()?;
        Ok(ReplayBackend {
            source_name: dir.display().to_string(),
            responses,
            cursor: Mutex::new(0),
        })
    }

    pub fn from_responses<I, S>(responses: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        ReplayBackend {
            source_name: "<scripted>".to_string(),
            responses: responses.into_iter().map(Into::into).collect(),
            cursor: Mutex::new(0),
        }
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }
}

impl ChatBackend for ReplayBackend {
    fn complete(&self, _request: &ChatRequest<'_>) -> Result<String, GatewayError> {
        let mut cursor = self.cursor.lock().unwrap_or_else(|e| e.into_inner());
        match self.responses.get(*cursor) {
            Some(r) => {
                *cursor += 1;
                Ok(r.clone())
            }
            None => Err(GatewayError::ReplayExhausted {
                source_name: self.source_name.clone(),
                consumed: *cursor,
            }),
        }
    }
}
