// SPDX-License-Identifier: MIT OR Apache-2.0

//! Neuron activation records, token embeddings, and their on-disk formats.
//!
//! Neurons are stored as JSONL, one neuron per line:
//!
//! ```text
//! {"layer":0,"neuron":5065,"core_tokens":[{"t":" token","a":3.1415}]}
//! ```
//!
//! Embeddings are JSONL (`{"t":" token","v":[0.1, ...]}`) or TSV (token, then
//! `dim` tab-separated floats). Tokens are opaque byte strings: leading
//! whitespace is significant and comparison is exact.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Upper bound on the number of core-tokens kept per neuron.
pub const MAX_CORE_TOKENS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenActivation {
    #[serde(rename = "t")]
    pub token: String,
    #[serde(rename = "a")]
    pub activation: f64,
}

impl TokenActivation {
    pub fn new(token: impl Into<String>, activation: f64) -> Self {
        Self {
            token: token.into(),
            activation,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NeuronId {
    pub layer: u32,
    #[serde(rename = "neuron")]
    pub index: u32,
}

impl fmt::Display for NeuronId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "L{}N{}", self.layer, self.index)
    }
}

/// One neuron and its core-tokens, sorted by activation, highest first.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NeuronRecord {
    pub layer: u32,
    #[serde(rename = "neuron")]
    pub index: u32,
    pub core_tokens: Vec<TokenActivation>,
}

impl NeuronRecord {
    /// Validates the token list and sorts it non-increasing by activation.
    /// The sort is stable, so tied activations keep their input order.
    pub fn new(layer: u32, index: u32, mut core_tokens: Vec<TokenActivation>) -> Result<Self, String> {
        if core_tokens.len() > MAX_CORE_TOKENS {
            return Err(format!(
                "{} core-tokens exceeds the limit of {MAX_CORE_TOKENS}",
                core_tokens.len()
            ));
        }
        let mut seen = HashSet::with_capacity(core_tokens.len());
        for ta in &core_tokens {
            if ta.token.is_empty() {
                return Err("empty token string".into());
            }
            if !ta.activation.is_finite() {
                return Err(format!(
                    "non-finite activation {} for token {:?}",
                    ta.activation, ta.token
                ));
            }
            if !seen.insert(ta.token.as_str()) {
                return Err(format!("duplicate token {:?}", ta.token));
            }
        }
        core_tokens.sort_by(|a, b| b.activation.total_cmp(&a.activation));
        Ok(Self {
            layer,
            index,
            core_tokens,
        })
    }

    pub fn id(&self) -> NeuronId {
        NeuronId {
            layer: self.layer,
            index: self.index,
        }
    }

    pub fn len(&self) -> usize {
        self.core_tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.core_tokens.is_empty()
    }

    pub fn activations(&self) -> Vec<f64> {
        self.core_tokens.iter().map(|t| t.activation).collect()
    }

    /// Canonical single-line JSON form (no trailing newline).
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("neuron records always serialize")
    }
}

#[derive(Deserialize)]
struct RawNeuron {
    layer: u32,
    neuron: u32,
    core_tokens: Vec<RawToken>,
}

#[derive(Deserialize)]
struct RawToken {
    t: String,
    a: RawNumber,
}

/// Activations may arrive as JSON numbers or as strings such as `"NaN"`;
/// the latter parse so that validation can reject them with a clear message.
#[derive(Deserialize)]
#[serde(untagged)]
enum RawNumber {
    Num(f64),
    Text(String),
}

fn parse_neuron_line(line: &str, line_no: usize) -> Result<NeuronRecord> {
    let raw: RawNeuron = serde_json::from_str(line).map_err(|e| Error::Parse {
        line: line_no,
        message: e.to_string(),
    })?;
    let mut tokens = Vec::with_capacity(raw.core_tokens.len());
    for rt in raw.core_tokens {
        let activation = match rt.a {
            RawNumber::Num(x) => x,
            RawNumber::Text(s) => s.trim().parse::<f64>().map_err(|_| Error::Parse {
                line: line_no,
                message: format!("activation {s:?} for token {:?} is not a number", rt.t),
            })?,
        };
        tokens.push(TokenActivation::new(rt.t, activation));
    }
    NeuronRecord::new(raw.layer, raw.neuron, tokens).map_err(|message| Error::Validation {
        line: line_no,
        message,
    })
}

/// Streams neuron records from JSONL, one per line. Blank lines are skipped.
/// Duplicate detection is left to the caller (see [`load_neurons`]).
pub struct NeuronReader<R> {
    lines: std::io::Lines<R>,
    line_no: usize,
}

impl<R: BufRead> NeuronReader<R> {
    pub fn new(reader: R) -> Self {
        Self {
            lines: reader.lines(),
            line_no: 0,
        }
    }

    /// 1-based number of the line most recently read.
    pub fn line_no(&self) -> usize {
        self.line_no
    }
}

impl<R: BufRead> Iterator for NeuronReader<R> {
    type Item = Result<NeuronRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let line = self.lines.next()?;
            self.line_no += 1;
            let line = match line {
                Ok(l) => l,
                Err(e) => {
                    return Some(Err(Error::Parse {
                        line: self.line_no,
                        message: e.to_string(),
                    }))
                }
            };
            if line.trim().is_empty() {
                continue;
            }
            return Some(parse_neuron_line(&line, self.line_no));
        }
    }
}

pub fn parse_neurons(reader: impl BufRead) -> Result<Vec<NeuronRecord>> {
    let mut reader = NeuronReader::new(reader);
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    while let Some(rec) = reader.next() {
        let rec = rec?;
        if !seen.insert(rec.id()) {
            return Err(Error::DuplicateNeuron {
                line: reader.line_no(),
                layer: rec.layer,
                index: rec.index,
            });
        }
        out.push(rec);
    }
    Ok(out)
}

/// Loads every neuron in `path`, preserving file order.
pub fn load_neurons(path: impl AsRef<Path>) -> Result<Vec<NeuronRecord>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_neurons(BufReader::new(file))
}

pub fn write_neurons(mut w: impl Write, neurons: &[NeuronRecord]) -> std::io::Result<()> {
    for n in neurons {
        writeln!(w, "{}", n.to_json_line())?;
    }
    Ok(())
}

/// Token to vector map with a fixed dimension. Insertion order is kept so
/// serialization is deterministic.
#[derive(Debug, Clone, Default)]
pub struct EmbeddingTable {
    dim: usize,
    index: HashMap<String, usize>,
    tokens: Vec<String>,
    vectors: Vec<Vec<f64>>,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            ..Default::default()
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn insert(&mut self, token: impl Into<String>, vector: Vec<f64>) -> Result<()> {
        let token = token.into();
        if self.dim == 0 {
            if vector.is_empty() {
                return Err(Error::InvalidArgument(format!(
                    "embedding for {token:?} has no components"
                )));
            }
            self.dim = vector.len();
        }
        if vector.len() != self.dim {
            return Err(Error::DimensionMismatch {
                token,
                expected: self.dim,
                found: vector.len(),
            });
        }
        if let Some(bad) = vector.iter().find(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "embedding for {token:?} has non-finite component {bad}"
            )));
        }
        if vector.iter().all(|&x| x == 0.0) {
            return Err(Error::ZeroVector { token });
        }
        if self.index.contains_key(&token) {
            return Err(Error::DuplicateToken { token });
        }
        self.index.insert(token.clone(), self.tokens.len());
        self.tokens.push(token);
        self.vectors.push(vector);
        Ok(())
    }

    pub fn get(&self, token: &str) -> Option<&[f64]> {
        self.index.get(token).map(|&i| self.vectors[i].as_slice())
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.tokens
            .iter()
            .zip(&self.vectors)
            .map(|(t, v)| (t.as_str(), v.as_slice()))
    }

    pub fn write_jsonl(&self, mut w: impl Write) -> std::io::Result<()> {
        #[derive(Serialize)]
        struct Row<'a> {
            t: &'a str,
            v: &'a [f64],
        }
        for (t, v) in self.iter() {
            serde_json::to_writer(&mut w, &Row { t, v })?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

#[derive(Deserialize)]
struct RawEmbedding {
    t: String,
    v: Vec<f64>,
}

/// Parses JSONL or TSV embeddings; the format is picked from the first
/// non-blank line. Errors carry the 1-based line number where relevant.
pub fn parse_embeddings(reader: impl BufRead) -> Result<EmbeddingTable> {
    let mut table = EmbeddingTable::new(0);
    let mut json: Option<bool> = None;
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let line = line.strip_suffix('\r').unwrap_or(&line);
        if line.trim().is_empty() {
            continue;
        }
        let is_json = *json.get_or_insert_with(|| line.trim_start().starts_with('{'));
        let (token, vector) = if is_json {
            let raw: RawEmbedding = serde_json::from_str(line).map_err(|e| Error::Parse {
                line: line_no,
                message: e.to_string(),
            })?;
            (raw.t, raw.v)
        } else {
            let mut fields = line.split('\t');
            let token = fields.next().unwrap_or_default().to_string();
            let vector = fields
                .map(|f| {
                    f.trim().parse::<f64>().map_err(|_| Error::Parse {
                        line: line_no,
                        message: format!("{f:?} is not a number (token {token:?})"),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            (token, vector)
        };
        if token.is_empty() {
            return Err(Error::Validation {
                line: line_no,
                message: "empty token string".into(),
            });
        }
        table.insert(token, vector).map_err(|e| match e {
            Error::InvalidArgument(message) => Error::Validation {
                line: line_no,
                message,
            },
            other => other,
        })?;
    }
    Ok(table)
}

pub fn load_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingTable> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_embeddings(BufReader::new(file))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NeuronCoverage {
    #[serde(flatten)]
    pub neuron: NeuronId,
    pub total: usize,
    pub present: usize,
    pub missing: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct CoverageReport {
    pub neurons: Vec<NeuronCoverage>,
}

impl CoverageReport {
    pub fn total_missing(&self) -> usize {
        self.neurons.iter().map(|n| n.missing.len()).sum()
    }
}

/// Counts, per neuron, how many core-tokens have an embedding.
pub fn join_coverage(neurons: &[NeuronRecord], emb: &EmbeddingTable) -> CoverageReport {
    let neurons = neurons
        .iter()
        .map(|n| {
            let missing: Vec<String> = n
                .core_tokens
                .iter()
                .filter(|t| !emb.contains(&t.token))
                .map(|t| t.token.clone())
                .collect();
            NeuronCoverage {
                neuron: n.id(),
                total: n.len(),
                present: n.len() - missing.len(),
                missing,
            }
        })
        .collect();
    CoverageReport { neurons }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn neurons_from(s: &str) -> Result<Vec<NeuronRecord>> {
        parse_neurons(s.as_bytes())
    }

    #[test]
    fn load_sorts_by_activation() {
        let recs = neurons_from(
            r#"{"layer":0,"neuron":1,"core_tokens":[{"t":"a","a":2.0},{"t":"b","a":5.0},{"t":"c","a":1.0}]}"#,
        )
        .unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].activations(), vec![5.0, 2.0, 1.0]);
    }

    #[test]
    fn empty_file_is_empty_list() {
        assert!(neurons_from("").unwrap().is_empty());
        assert!(neurons_from("\n\n").unwrap().is_empty());
    }

    #[test]
    fn nan_activation_is_validation_error_with_line() {
        let src = concat!(
            r#"{"layer":0,"neuron":1,"core_tokens":[{"t":"a","a":1.0}]}"#,
            "\n",
            r#"{"layer":0,"neuron":2,"core_tokens":[{"t":"a","a":"NaN"}]}"#,
        );
        match neurons_from(src) {
            Err(Error::Validation { line, message }) => {
                assert_eq!(line, 2);
                assert!(message.contains("non-finite"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_line_names_line_number() {
        let src = "{\"layer\":0,\"neuron\":1,\"core_tokens\":[]}\n{not json";
        match neurons_from(src) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_neuron_rejected() {
        let src = "{\"layer\":0,\"neuron\":1,\"core_tokens\":[]}\n{\"layer\":0,\"neuron\":1,\"core_tokens\":[]}";
        assert!(matches!(
            neurons_from(src),
            Err(Error::DuplicateNeuron { line: 2, layer: 0, index: 1 })
        ));
    }

    #[test]
    fn duplicate_token_within_neuron_rejected() {
        let src = r#"{"layer":0,"neuron":1,"core_tokens":[{"t":" x","a":1},{"t":" x","a":2}]}"#;
        assert!(matches!(neurons_from(src), Err(Error::Validation { line: 1, .. })));
    }

    #[test]
    fn leading_space_tokens_are_distinct() {
        let src = r#"{"layer":0,"neuron":1,"core_tokens":[{"t":"x","a":1},{"t":" x","a":2}]}"#;
        let recs = neurons_from(src).unwrap();
        assert_eq!(recs[0].core_tokens[0].token, " x");
    }

    #[test]
    fn record_order_preserved() {
        let src = "{\"layer\":1,\"neuron\":9,\"core_tokens\":[]}\n{\"layer\":0,\"neuron\":3,\"core_tokens\":[]}";
        let ids: Vec<_> = neurons_from(src).unwrap().iter().map(|r| r.id()).collect();
        assert_eq!(
            ids,
            vec![NeuronId { layer: 1, index: 9 }, NeuronId { layer: 0, index: 3 }]
        );
    }

    #[test]
    fn embeddings_jsonl_infers_dim() {
        let t = parse_embeddings(
            "{\"t\":\"a\",\"v\":[1,0,0]}\n{\"t\":\" b\",\"v\":[0,1,0.5]}\n".as_bytes(),
        )
        .unwrap();
        assert_eq!(t.dim(), 3);
        assert_eq!(t.len(), 2);
        assert_eq!(t.get(" b"), Some(&[0.0, 1.0, 0.5][..]));
        assert!(t.get("b").is_none());
    }

    #[test]
    fn embeddings_tsv_keeps_leading_space() {
        let t = parse_embeddings(" cat\t1\t2\nhat\t3\t4\n".as_bytes()).unwrap();
        assert_eq!(t.dim(), 2);
        assert_eq!(t.get(" cat"), Some(&[1.0, 2.0][..]));
    }

    #[test]
    fn embeddings_dimension_mismatch_names_token() {
        let err = parse_embeddings(
            "{\"t\":\"a\",\"v\":[1,2,3]}\n{\"t\":\"bad\",\"v\":[1,2,3,4]}\n".as_bytes(),
        )
        .unwrap_err();
        match err {
            Error::DimensionMismatch {
                token,
                expected,
                found,
            } => {
                assert_eq!(token, "bad");
                assert_eq!((expected, found), (3, 4));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn embeddings_zero_vector_rejected() {
        let err = parse_embeddings("{\"t\":\"z\",\"v\":[0,0,0]}\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::ZeroVector { token } if token == "z"));
    }

    #[test]
    fn coverage_counts_missing() {
        let toks: Vec<_> = (0..100)
            .map(|i| TokenActivation::new(format!("t{i}"), i as f64))
            .collect();
        let n = NeuronRecord::new(0, 0, toks).unwrap();
        let mut emb = EmbeddingTable::new(2);
        for i in 0..100 {
            if ![3, 50, 77].contains(&i) {
                emb.insert(format!("t{i}"), vec![1.0, i as f64]).unwrap();
            }
        }
        let report = join_coverage(std::slice::from_ref(&n), &emb);
        assert_eq!(report.neurons[0].present, 97);
        assert_eq!(report.neurons[0].total, 100);
        let mut missing = report.neurons[0].missing.clone();
        missing.sort();
        assert_eq!(missing, vec!["t3", "t50", "t77"]);

        emb.insert("t3", vec![1.0, 0.0]).unwrap();
        emb.insert("t50", vec![1.0, 0.0]).unwrap();
        emb.insert("t77", vec![1.0, 0.0]).unwrap();
        assert_eq!(join_coverage(&[n], &emb).neurons[0].present, 100);
        assert!(join_coverage(&[], &emb).neurons.is_empty());
    }

    #[test]
    fn too_many_tokens_rejected() {
        let toks: Vec<_> = (0..101)
            .map(|i| TokenActivation::new(format!("t{i}"), 0.0))
            .collect();
        assert!(NeuronRecord::new(0, 0, toks).is_err());
    }
}
