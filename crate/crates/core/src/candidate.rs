use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Vector,
    Graph,
    Web,
}

impl Source {
    pub const ALL: [Source; 3] = [Source::Vector, Source::Graph, Source::Web];

    pub fn as_str(self) -> &'static str {
        match self {
            Source::Vector => "vector",
            Source::Graph => "graph",
            Source::Web => "web",
        }
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Source {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "vector" => Ok(Source::Vector),
            "graph" => Ok(Source::Graph),
            "web" => Ok(Source::Web),
            other => Err(format!("unknown agent {other:?}; expected vector, graph or web")),
        }
    }
}

/// One retrieval agent's answer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerCandidate {
    pub text: String,
    pub source: Source,
    pub evidence: Vec<String>,
    pub summary: Option<String>,
    pub available: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl AnswerCandidate {
    pub fn new(source: Source, text: impl Into<String>, evidence: Vec<String>) -> Self {
        Self {
            text: text.into(),
            source,
            evidence,
            summary: None,
            available: true,
            error: None,
        }
    }

    pub fn unavailable(source: Source, reason: impl Into<String>) -> Self {
        Self {
            text: String::new(),
            source,
            evidence: Vec::new(),
            summary: None,
            available: false,
            error: Some(reason.into()),
        }
    }

    pub fn mark_unavailable(&mut self, reason: impl Into<String>) {
        self.available = false;
        self.error = Some(reason.into());
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn source_parses_case_insensitively() {
        assert_eq!("Graph".parse::<Source>().unwrap(), Source::Graph);
        assert!("image".parse::<Source>().is_err());
    }

    #[test]
    fn unavailable_carries_reason() {
        let c = AnswerCandidate::unavailable(Source::Web, "timeout");
        assert!(!c.available);
        assert_eq!(c.error.as_deref(), Some("timeout"));
        let json = serde_json::to_string(&AnswerCandidate::new(Source::Vector, "x", vec![])).unwrap();
        assert!(!json.contains("error"));
        assert!(json.contains("\"source\":\"vector\""));
    }
}
