//! Okapi BM25 over the source side of a datastore.
//!
//! ```text
//! score(q, d) = Σ_{t ∈ distinct(q)} idf(t) · tf·(k1+1) / (tf + k1·(1 − b + b·|d|/avgdl))
//! idf(t)      = ln(1 + (N − df + 0.5) / (df + 0.5))
//! ```
//!
//! Index files are two lines of JSON. The first is a header:
//!
//! ```text
//! {"format":"icmt-bm25-index","version":1,"params":{"k1":1.2,"b":0.75},
//!  "fingerprint":"<sha256 hex>","doc_count":N,"body_sha256":"<sha256 hex>"}
//! ```
//!
//! The second is the body, `{"docs":[[id,len],..],"terms":[[term,[[doc,tf],..]],..]}`
//! with terms in byte order and `doc` an index into `docs`. `body_sha256`
//! covers the body line exactly as written.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{Corpus, CorpusRole, ExampleId};
use crate::error::{Error, Result};

pub const INDEX_FORMAT: &str = "icmt-bm25-index";
pub const INDEX_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Bm25Params { k1: 1.2, b: 0.75 }
    }
}

impl Bm25Params {
    pub fn validate(&self) -> Result<()> {
        if !(self.k1 >= 0.0) || !(0.0..=1.0).contains(&self.b) {
            return Err(Error::Config(format!(
                "BM25 parameters need k1 >= 0 and 0 <= b <= 1, got k1={} b={}",
                self.k1, self.b
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
struct Posting {
    doc: u32,
    tf: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
struct DocEntry {
    id: ExampleId,
    len: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetrievalCandidate {
    pub id: ExampleId,
    pub bm25_score: f64,
    /// 1-based position in the result list.
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bm25Index {
    params: Bm25Params,
    fingerprint: String,
    docs: Vec<DocEntry>,
    avg_doc_length: f64,
    postings: HashMap<String, Vec<Posting>>,
}

/// Content hash of a corpus: ids, source tokens and target text, in order.
pub fn corpus_fingerprint(corpus: &Corpus) -> String {
    let mut hasher = Sha256::new();
    hasher.update(b"icmt-corpus-v1");
    for ex in &corpus.examples {
        hasher.update(ex.id.0.to_le_bytes());
        for tok in &ex.source_tokens {
            hasher.update(tok.as_bytes());
            hasher.update([0x1f]);
        }
        hasher.update([0x1e]);
        hasher.update(ex.target.as_bytes());
        hasher.update([0x1d]);
    }
    hex::encode(hasher.finalize())
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    params: Bm25Params,
    fingerprint: String,
    doc_count: usize,
    body_sha256: String,
}

#[derive(Serialize, Deserialize)]
struct Body {
    docs: Vec<(ExampleId, u32)>,
    terms: Vec<(String, Vec<(u32, u32)>)>,
}

impl Bm25Index {
    pub fn build(corpus: &Corpus, params: Bm25Params) -> Result<Self> {
        params.validate()?;
        if corpus.role != CorpusRole::Datastore {
            return Err(Error::Contract(format!(
                "only datastore corpora are indexed, got {:?}",
                corpus.role
            )));
        }
        if corpus.is_empty() {
            return Err(Error::Contract("cannot index an empty corpus".into()));
        }
        if corpus.len() > u32::MAX as usize {
            return Err(Error::Contract("corpus too large for a u32 doc space".into()));
        }

        let mut docs = Vec::with_capacity(corpus.len());
        let mut postings: HashMap<String, Vec<Posting>> = HashMap::new();
        let mut tf: HashMap<&str, u32> = HashMap::new();
        for (doc, ex) in corpus.examples.iter().enumerate() {
            tf.clear();
            for tok in &ex.source_tokens {
                *tf.entry(tok.as_str()).or_insert(0) += 1;
            }
            for (term, &count) in &tf {
                let list = match postings.get_mut(*term) {
                    Some(list) => list,
                    None => postings.entry((*term).to_string()).or_default(),
                };
                list.push(Posting {
                    doc: doc as u32,
                    tf: count,
                });
            }
            docs.push(DocEntry {
                id: ex.id,
                len: ex.source_tokens.len() as u32,
            });
        }

        Ok(Bm25Index {
            params,
            fingerprint: corpus_fingerprint(corpus),
            avg_doc_length: mean_length(&docs),
            docs,
            postings,
        })
    }

    pub fn params(&self) -> Bm25Params {
        self.params
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn doc_count(&self) -> usize {
        self.docs.len()
    }

    pub fn avg_doc_length(&self) -> f64 {
        self.avg_doc_length
    }

    pub fn vocabulary_size(&self) -> usize {
        self.postings.len()
    }

    /// Example ids containing `term`, in corpus order.
    pub fn documents_with(&self, term: &str) -> Vec<ExampleId> {
        self.postings
            .get(term)
            .map(|list| list.iter().map(|p| self.docs[p.doc as usize].id).collect())
            .unwrap_or_default()
    }

    pub fn idf(&self, term: &str) -> f64 {
        let df = self.postings.get(term).map_or(0, Vec::len);
        idf(self.docs.len(), df)
    }

    /// Top `k` documents by BM25, score descending, ties by ascending id.
    /// Documents sharing no term with the query are never returned.
    pub fn retrieve(&self, query_tokens: &[String], k: usize) -> Vec<RetrievalCandidate> {
        if k == 0 {
            return Vec::new();
        }
        let Bm25Params { k1, b } = self.params;
        let n = self.docs.len();
        let terms: BTreeSet<&str> = query_tokens.iter().map(String::as_str).collect();

        let mut acc = vec![0.0f64; n];
        let mut touched = Vec::new();
        for term in terms {
            let Some(list) = self.postings.get(term) else {
                continue;
            };
            let idf = idf(n, list.len());
            for p in list {
                let d = p.doc as usize;
                let tf = p.tf as f64;
                let len = self.docs[d].len as f64;
                if acc[d] == 0.0 {
                    touched.push(p.doc);
                }
                acc[d] += idf * (tf * (k1 + 1.0)) / (tf + k1 * (1.0 - b + b * len / self.avg_doc_length));
            }
        }

        let mut hits: Vec<(f64, ExampleId)> = touched
            .into_iter()
            .map(|d| (acc[d as usize], self.docs[d as usize].id))
            .collect();
        let order = |x: &(f64, ExampleId), y: &(f64, ExampleId)| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1));
        if hits.len() > k {
            hits.select_nth_unstable_by(k - 1, order);
            hits.truncate(k);
        }
        hits.sort_unstable_by(order);
        hits.into_iter()
            .enumerate()
            .map(|(i, (bm25_score, id))| RetrievalCandidate {
                id,
                bm25_score,
                rank: i + 1,
            })
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut terms: Vec<(String, Vec<(u32, u32)>)> = self
            .postings
            .iter()
            .map(|(t, list)| (t.clone(), list.iter().map(|p| (p.doc, p.tf)).collect()))
            .collect();
        terms.sort_unstable_by(|a, b| a.0.cmp(&b.0));
        let body = Body {
            docs: self.docs.iter().map(|d| (d.id, d.len)).collect(),
            terms,
        };
        let body = serde_json::to_string(&body).expect("index body serializes");
        let header = Header {
            format: INDEX_FORMAT.into(),
            version: INDEX_VERSION,
            params: self.params,
            fingerprint: self.fingerprint.clone(),
            doc_count: self.docs.len(),
            body_sha256: sha256_hex(body.as_bytes()),
        };
        let header = serde_json::to_string(&header).expect("index header serializes");
        fs::write(path, format!("{header}\n{body}\n")).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let (header_line, rest) = text
            .split_once('\n')
            .ok_or_else(|| Error::Integrity("missing index body".into()))?;
        let header: Header = serde_json::from_str(header_line)
            .map_err(|e| Error::Integrity(format!("bad header: {e}")))?;
        if header.format != INDEX_FORMAT {
            return Err(Error::Integrity(format!("unknown format {:?}", header.format)));
        }
        if header.version != INDEX_VERSION {
            return Err(Error::Integrity(format!(
                "index version {} is not supported (expected {INDEX_VERSION})",
                header.version
            )));
        }
        header.params.validate()?;
        let body_line = rest.strip_suffix('\n').unwrap_or(rest);
        if sha256_hex(body_line.as_bytes()) != header.body_sha256 {
            return Err(Error::Integrity("body checksum mismatch (truncated or modified file)".into()));
        }
        let body: Body =
            serde_json::from_str(body_line).map_err(|e| Error::Integrity(format!("bad body: {e}")))?;
        if body.docs.len() != header.doc_count || body.docs.is_empty() {
            return Err(Error::Integrity(format!(
                "header says {} documents, body has {}",
                header.doc_count,
                body.docs.len()
            )));
        }

        let docs: Vec<DocEntry> = body.docs.into_iter().map(|(id, len)| DocEntry { id, len }).collect();
        let mut postings = HashMap::with_capacity(body.terms.len());
        for (term, list) in body.terms {
            if list.iter().any(|&(doc, _)| doc as usize >= docs.len()) {
                return Err(Error::Integrity(format!("posting for {term:?} points past the last document")));
            }
            postings.insert(term, list.into_iter().map(|(doc, tf)| Posting { doc, tf }).collect());
        }
        Ok(Bm25Index {
            params: header.params,
            fingerprint: header.fingerprint,
            avg_doc_length: mean_length(&docs),
            docs,
            postings,
        })
    }

    /// Loads an index and checks it was built from `corpus`.
    pub fn load_for(path: &Path, corpus: &Corpus) -> Result<Self> {
        let index = Bm25Index::load(path)?;
        index.verify(corpus)?;
        Ok(index)
    }

    pub fn verify(&self, corpus: &Corpus) -> Result<()> {
        let expected = corpus_fingerprint(corpus);
        if expected != self.fingerprint {
            return Err(Error::Integrity(format!(
                "index fingerprint {} does not match corpus fingerprint {expected}",
                self.fingerprint
            )));
        }
        Ok(())
    }
}

fn idf(doc_count: usize, df: usize) -> f64 {
    let n = doc_count as f64;
    let df = df as f64;
    (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
}

fn mean_length(docs: &[DocEntry]) -> f64 {
    let total: u64 = docs.iter().map(|d| d.len as u64).sum();
    total as f64 / docs.len() as f64
}
