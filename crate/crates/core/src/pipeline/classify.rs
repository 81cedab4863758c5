//! Training sets (per-subject incremental mean feature vectors) and
//! distance-based classification with ranked result sets.

use std::collections::{BTreeMap, BTreeSet};

use super::distance::{distance, Metric};
use super::features::FeatureVector;
use super::PipelineError;
use crate::demand::DemandSignature;
use crate::util::{crc32, sha256, to_hex};

pub const TRAINING_SET_MAGIC: &[u8; 4] = b"DTSF";
pub const TRAINING_SET_VERSION: u8 = 1;

pub const UNSORTED: i32 = -1;
pub const SORTED_ASCENDING: i32 = 0;

#[derive(Debug, Clone, PartialEq)]
pub struct SubjectEntry {
    pub mean: FeatureVector,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainingSet {
    pub entries: BTreeMap<u32, SubjectEntry>,
    pub extractor_tag: String,
    /// Demand signatures already folded into the means. Makes
    /// training idempotent under at-least-once execution; not part of
    /// the serialized form.
    applied: BTreeSet<DemandSignature>,
}

impl TrainingSet {
    pub fn new(extractor_tag: &str) -> Self {
        Self { extractor_tag: extractor_tag.to_string(), ..Default::default() }
    }

    pub fn feature_len(&self) -> Option<usize> {
        self.entries.values().next().map(|e| e.mean.len())
    }

    /// Incremental mean update: mean' = mean + (fv - mean)/(count+1).
    pub fn train(&mut self, subject: u32, fv: &FeatureVector) -> Result<(), PipelineError> {
        if let Some(expect) = self.feature_len() {
            if fv.len() != expect {
                return Err(PipelineError::DimensionMismatch { a: expect, b: fv.len() });
            }
        }
        match self.entries.get_mut(&subject) {
            Some(entry) => {
                let next = entry.count + 1;
                for (m, x) in entry.mean.values.iter_mut().zip(&fv.values) {
                    *m += (x - *m) / next as f64;
                }
                entry.count = next;
            }
            None => {
                self.entries.insert(subject, SubjectEntry { mean: fv.clone(), count: 1 });
            }
        }
        Ok(())
    }

    /// Training keyed by the demand signature that carried the vector:
    /// re-executions of the same demand apply at most once.
    pub fn train_once(
        &mut self,
        sig: DemandSignature,
        subject: u32,
        fv: &FeatureVector,
    ) -> Result<bool, PipelineError> {
        if self.applied.contains(&sig) {
            return Ok(false);
        }
        self.train(subject, fv)?;
        self.applied.insert(sig);
        Ok(true)
    }

    pub fn classify(&self, fv: &FeatureVector, metric: &Metric) -> Result<ResultSet, PipelineError> {
        if self.entries.is_empty() {
            return Err(PipelineError::EmptyTrainingSet);
        }
        let mut rs = ResultSet::default();
        for (&subject, entry) in &self.entries {
            let outcome = distance(metric, fv, &entry.mean)?;
            rs.add_result(subject, outcome, format!("subject {subject}"));
        }
        Ok(rs)
    }

    /// File format: magic "DTSF", version u8, extractor tag (u32 BE
    /// len + bytes), entry count u32 BE, per entry subject u32 BE,
    /// count u64 BE, L u32 BE, L f64 LE values; CRC32 trailer.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(TRAINING_SET_MAGIC);
        out.push(TRAINING_SET_VERSION);
        out.extend_from_slice(&(self.extractor_tag.len() as u32).to_be_bytes());
        out.extend_from_slice(self.extractor_tag.as_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_be_bytes());
        for (&subject, entry) in &self.entries {
            out.extend_from_slice(&subject.to_be_bytes());
            out.extend_from_slice(&entry.count.to_be_bytes());
            out.extend_from_slice(&(entry.mean.len() as u32).to_be_bytes());
            for v in &entry.mean.values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let crc = crc32(&out);
        out.extend_from_slice(&crc.to_be_bytes());
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, PipelineError> {
        let bad = |m: &str| PipelineError::Codec(format!("training set: {m}"));
        if bytes.len() < 13 || &bytes[0..4] != TRAINING_SET_MAGIC {
            return Err(bad("bad magic"));
        }
        if bytes[4] != TRAINING_SET_VERSION {
            return Err(bad("unsupported version"));
        }
        let body = &bytes[..bytes.len() - 4];
        let crc_stored = u32::from_be_bytes(bytes[bytes.len() - 4..].try_into().unwrap());
        if crc32(body) != crc_stored {
            return Err(bad("crc mismatch"));
        }
        let mut pos = 5usize;
        let take = |pos: &mut usize, n: usize| -> Result<&[u8], PipelineError> {
            if *pos + n > body.len() {
                return Err(PipelineError::Codec("training set: truncated".into()));
            }
            let s = &body[*pos..*pos + n];
            *pos += n;
            Ok(s)
        };
        let tag_len = u32::from_be_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
        let extractor_tag = String::from_utf8(take(&mut pos, tag_len)?.to_vec())
            .map_err(|_| bad("tag not utf8"))?;
        let n_entries = u32::from_be_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
        let mut entries = BTreeMap::new();
        for _ in 0..n_entries {
            let subject = u32::from_be_bytes(take(&mut pos, 4)?.try_into().unwrap());
            let count = u64::from_be_bytes(take(&mut pos, 8)?.try_into().unwrap());
            let len = u32::from_be_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
            let values: Vec<f64> = take(&mut pos, len * 8)?
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            entries.insert(subject, SubjectEntry { mean: FeatureVector::new(values), count });
        }
        if pos != body.len() {
            return Err(bad("trailing bytes"));
        }
        Ok(Self { entries, extractor_tag, applied: BTreeSet::new() })
    }

    /// Content hash of the serialized set; folded into classification
    /// demand signatures so results are never reused across
    /// retraining.
    pub fn content_hash(&self) -> String {
        to_hex(&sha256(&self.encode()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubjectResult {
    pub id: u32,
    pub outcome: f64,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ResultSet {
    results: Vec<SubjectResult>,
    sort_mode: i32,
}

impl ResultSet {
    pub fn add_result(&mut self, id: u32, outcome: f64, description: String) {
        debug_assert!(outcome.is_finite());
        self.results.push(SubjectResult { id, outcome, description });
        self.sort_mode = UNSORTED;
    }

    pub fn results(&self) -> &[SubjectResult] {
        &self.results
    }

    pub fn len(&self) -> usize {
        self.results.len()
    }

    pub fn is_empty(&self) -> bool {
        self.results.is_empty()
    }

    pub fn sort_mode(&self) -> i32 {
        self.sort_mode
    }

    /// Stable ascending sort by outcome, ties broken by lower id.
    pub fn sort(&mut self) {
        self.results.sort_by(|a, b| {
            a.outcome
                .partial_cmp(&b.outcome)
                .unwrap()
                .then(a.id.cmp(&b.id))
        });
        self.sort_mode = SORTED_ASCENDING;
    }

    fn ranked(&self) -> Vec<&SubjectResult> {
        let mut refs: Vec<&SubjectResult> = self.results.iter().collect();
        refs.sort_by(|a, b| {
            a.outcome
                .partial_cmp(&b.outcome)
                .unwrap()
                .then(a.id.cmp(&b.id))
        });
        refs
    }

    pub fn minimum_id(&self) -> Result<u32, PipelineError> {
        self.ranked()
            .first()
            .map(|r| r.id)
            .ok_or(PipelineError::TooFewResults { need: 1, have: 0 })
    }

    pub fn second_minimum_id(&self) -> Result<u32, PipelineError> {
        let ranked = self.ranked();
        ranked
            .get(1)
            .map(|r| r.id)
            .ok_or(PipelineError::TooFewResults { need: 2, have: ranked.len() })
    }

    pub fn maximum_id(&self) -> Result<u32, PipelineError> {
        self.ranked()
            .last()
            .map(|r| r.id)
            .ok_or(PipelineError::TooFewResults { need: 1, have: 0 })
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&(self.results.len() as u32).to_be_bytes());
        for r in &self.results {
            out.extend_from_slice(&r.id.to_be_bytes());
            out.extend_from_slice(&r.outcome.to_bits().to_be_bytes());
            out.extend_from_slice(&(r.description.len() as u32).to_be_bytes());
            out.extend_from_slice(r.description.as_bytes());
        }
        out.extend_from_slice(&self.sort_mode.to_be_bytes());
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, PipelineError> {
        let bad = |m: &str| PipelineError::Codec(format!("result set: {m}"));
        let mut pos = 0usize;
        let take = |pos: &mut usize, n: usize| -> Result<&[u8], PipelineError> {
            if *pos + n > bytes.len() {
                return Err(PipelineError::Codec("result set: truncated".into()));
            }
            let s = &bytes[*pos..*pos + n];
            *pos += n;
            Ok(s)
        };
        let n = u32::from_be_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
        let mut results = Vec::with_capacity(n);
        for _ in 0..n {
            let id = u32::from_be_bytes(take(&mut pos, 4)?.try_into().unwrap());
            let outcome = f64::from_bits(u64::from_be_bytes(take(&mut pos, 8)?.try_into().unwrap()));
            let dlen = u32::from_be_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
            let description = String::from_utf8(take(&mut pos, dlen)?.to_vec())
                .map_err(|_| bad("description not utf8"))?;
            results.push(SubjectResult { id, outcome, description });
        }
        let sort_mode = i32::from_be_bytes(take(&mut pos, 4)?.try_into().unwrap());
        if pos != bytes.len() {
            return Err(bad("trailing bytes"));
        }
        Ok(Self { results, sort_mode })
    }
}
