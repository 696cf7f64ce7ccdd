// SPDX-License-Identifier: MIT OR Apache-2.0

//! Categorical clustering backends.
//!
//! A backend receives a neuron's core-tokens and returns token to group
//! assignments. The remote chat-completion client lives in a separate crate;
//! this module holds the request/response contract, the prompt template, the
//! strict parser for model output, and an offline k-medoids stand-in.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::data::{EmbeddingTable, NeuronRecord, TokenActivation, MAX_CORE_TOKENS};
use crate::error::{Error, Result};
use crate::segment::{categorical_partition, Partition, PartitionKind};

mod stub;

pub use stub::StubBackend;

/// Identifier of the prompt template shipped with this crate. Recorded with
/// every prompt-backed result.
pub const DEFAULT_TEMPLATE_ID: &str = "token-groups-v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterRequest {
    pub tokens: Vec<String>,
    pub k: usize,
    pub template_id: String,
}

impl ClusterRequest {
    pub fn new(tokens: Vec<String>, k: usize, template_id: impl Into<String>) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::InvalidArgument("cluster request with no tokens".into()));
        }
        if tokens.len() > MAX_CORE_TOKENS {
            return Err(Error::InvalidArgument(format!(
                "cluster request with {} tokens (max {MAX_CORE_TOKENS})",
                tokens.len()
            )));
        }
        if k < 2 {
            return Err(Error::InvalidArgument(format!("cluster request with k = {k}")));
        }
        let mut seen = HashSet::new();
        if let Some(dup) = tokens.iter().find(|t| !seen.insert(t.as_str())) {
            return Err(Error::InvalidArgument(format!("duplicate token {dup:?}")));
        }
        Ok(Self {
            tokens,
            k,
            template_id: template_id.into(),
        })
    }

    pub fn for_neuron(neuron: &NeuronRecord, k: usize, template_id: &str) -> Result<Self> {
        Self::new(
            neuron.core_tokens.iter().map(|t| t.token.clone()).collect(),
            k,
            template_id,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterResponse {
    /// (token, group id in 1..=k), in request order.
    pub assignments: Vec<(String, usize)>,
    pub unassigned: Vec<String>,
    /// Free-form description of the backend and what it returned.
    pub backend: String,
}

impl ClusterResponse {
    /// Number of distinct groups actually used; may be below the requested k.
    pub fn n_groups(&self) -> usize {
        self.assignments.iter().map(|(_, g)| *g).collect::<HashSet<_>>().len()
    }

    /// Every request token appears exactly once, either assigned to a group
    /// in 1..=k or listed as unassigned, and nothing else appears.
    pub fn validate(&self, req: &ClusterRequest) -> Result<()> {
        let requested: HashSet<&str> = req.tokens.iter().map(String::as_str).collect();
        let mut seen = HashSet::new();
        for (t, g) in &self.assignments {
            if !requested.contains(t.as_str()) {
                return Err(Error::BackendValidation(format!("unknown token {t:?}")));
            }
            if !(1..=req.k).contains(g) {
                return Err(Error::BackendValidation(format!(
                    "token {t:?} assigned to group {g}, outside 1..={}",
                    req.k
                )));
            }
            if !seen.insert(t.as_str()) {
                return Err(Error::BackendValidation(format!("token {t:?} assigned twice")));
            }
        }
        for t in &self.unassigned {
            if !requested.contains(t.as_str()) || !seen.insert(t.as_str()) {
                return Err(Error::BackendValidation(format!(
                    "unassigned list has unexpected token {t:?}"
                )));
            }
        }
        if seen.len() != requested.len() {
            return Err(Error::BackendValidation("response does not cover the request".into()));
        }
        Ok(())
    }

    /// Builds a categorical partition of `neuron` from the assignments.
    /// Neuron tokens without an assignment end up unassigned.
    pub fn to_partition(&self, neuron: &NeuronRecord) -> Partition {
        let group_of: HashMap<&str, usize> =
            self.assignments.iter().map(|(t, g)| (t.as_str(), *g)).collect();
        let max_group = self.assignments.iter().map(|(_, g)| *g).max().unwrap_or(0);
        let mut groups: Vec<Vec<TokenActivation>> = vec![Vec::new(); max_group];
        let mut unassigned = Vec::new();
        for t in &neuron.core_tokens {
            match group_of.get(t.token.as_str()) {
                Some(&g) => groups[g - 1].push(t.clone()),
                None => unassigned.push(t.token.clone()),
            }
        }
        Partition::new(PartitionKind::Categorical, groups, unassigned)
    }
}

pub trait ClusterBackend: Send + Sync {
    /// Stable identifier recorded in results and manifests.
    fn id(&self) -> String;

    fn cluster(&self, req: &ClusterRequest) -> Result<ClusterResponse>;
}

/// Where categorical clusters come from: Ward clustering of embeddings, or
/// an external backend.
#[derive(Clone, Copy)]
pub enum CategoricalSource<'a> {
    Embedding(&'a EmbeddingTable),
    Backend(&'a dyn ClusterBackend),
}

impl CategoricalSource<'_> {
    pub fn id(&self) -> String {
        match self {
            CategoricalSource::Embedding(_) => "embedding_hclust(ward,standardized)".to_string(),
            CategoricalSource::Backend(b) => b.id(),
        }
    }

    pub fn partition(&self, neuron: &NeuronRecord, k: usize, template_id: &str) -> Result<Partition> {
        match self {
            CategoricalSource::Embedding(emb) => categorical_partition(neuron, emb, k),
            CategoricalSource::Backend(b) => {
                let req = ClusterRequest::for_neuron(neuron, k, template_id)?;
                let resp = b.cluster(&req)?;
                resp.validate(&req)?;
                Ok(resp.to_partition(neuron))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

/// System and user messages for `req` under the default template.
pub fn render_messages(req: &ClusterRequest) -> Result<Vec<ChatMessage>> {
    if req.template_id != DEFAULT_TEMPLATE_ID {
        return Err(Error::InvalidArgument(format!(
            "unknown prompt template {:?}",
            req.template_id
        )));
    }
    let tokens = serde_json::to_string(&req.tokens).expect("strings serialize");
    let system = "You sort vocabulary tokens into groups of related meaning. \
                  You answer with a single JSON object and no other text."
        .to_string();
    let user = format!(
        "Group the following {n} tokens into exactly {k} categories of related meaning.\n\
         Tokens are JSON strings; leading and trailing spaces are part of a token and must be kept.\n\
         Assign every token to exactly one category numbered 1 to {k}.\n\
         Answer with one JSON object of the form {{\"assignments\": {{\"<token>\": <category>, ...}}}}.\n\
         Tokens: {tokens}",
        n = req.tokens.len(),
        k = req.k,
    );
    Ok(vec![
        ChatMessage {
            role: "system".into(),
            content: system,
        },
        ChatMessage {
            role: "user".into(),
            content: user,
        },
    ])
}

fn extract_json_object(text: &str) -> Option<&str> {
    let start = text.find('{')?;
    let end = text.rfind('}')?;
    (end > start).then(|| &text[start..=end])
}

/// Parses a model reply of the form `{"assignments": {"<token>": <group>}}`,
/// tolerating surrounding prose or code fences. Tokens the model omitted are
/// reported as unassigned; tokens it invented fail validation.
pub fn parse_model_output(req: &ClusterRequest, text: &str, backend: &str) -> Result<ClusterResponse> {
    let body = extract_json_object(text)
        .ok_or_else(|| Error::BackendFormat("no JSON object in model output".into()))?;
    let value: serde_json::Value =
        serde_json::from_str(body).map_err(|e| Error::BackendFormat(e.to_string()))?;
    let map = value
        .get("assignments")
        .and_then(|a| a.as_object())
        .ok_or_else(|| Error::BackendFormat("missing \"assignments\" object".into()))?;

    let requested: HashSet<&str> = req.tokens.iter().map(String::as_str).collect();
    let mut groups: HashMap<&str, usize> = HashMap::new();
    for (token, g) in map {
        if !requested.contains(token.as_str()) {
            return Err(Error::BackendValidation(format!(
                "model returned unknown token {token:?}"
            )));
        }
        let g = g
            .as_u64()
            .or_else(|| g.as_str().and_then(|s| s.trim().parse().ok()))
            .ok_or_else(|| Error::BackendFormat(format!("group for {token:?} is not an integer")))?
            as usize;
        if !(1..=req.k).contains(&g) {
            return Err(Error::BackendFormat(format!(
                "group {g} for {token:?} outside 1..={}",
                req.k
            )));
        }
        groups.insert(token.as_str(), g);
    }

    let mut assignments = Vec::with_capacity(groups.len());
    let mut unassigned = Vec::new();
    for t in &req.tokens {
        match groups.get(t.as_str()) {
            Some(&g) => assignments.push((t.clone(), g)),
            None => unassigned.push(t.clone()),
        }
    }
    let resp = ClusterResponse {
        assignments,
        unassigned,
        backend: backend.to_string(),
    };
    resp.validate(req)?;
    Ok(resp)
}
