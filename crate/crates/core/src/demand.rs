//! The demand model: the unit of work exchanged by all tiers.
//!
//! A demand is identified two ways: a per-issue UUID and a content
//! signature. The signature is a SHA-256 digest over a canonical
//! encoding of (stage, operation, params, payload), so identical work
//! requested anywhere in the system collapses to one warehouse entry.
//!
//! Canonical encoding, used both for signatures and inside the wire
//! format: every variable-length field is prefixed by its length as a
//! u64 big-endian. Parameter maps encode as the concatenation, in
//! lexicographic key order, of `len64(key) || key || tag || value`,
//! where tag/value is 0x01 + i64 BE, 0x02 + f64-bits BE,
//! 0x03 + len64 + bytes, or 0x04 + bool byte.

use std::collections::BTreeMap;
use std::fmt;

use rand::RngCore;
use thiserror::Error;

use crate::util::{crc32, sha256, to_hex};

pub const DEMAND_MAGIC: &[u8; 4] = b"DMND";
pub const DEMAND_WIRE_VERSION: u8 = 1;

#[derive(Debug, Error)]
pub enum DemandError {
    #[error("illegal demand state transition {from:?} -> {to:?}")]
    IllegalTransition { from: DemandState, to: DemandState },
    #[error("demand codec error: {0}")]
    Codec(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DemandType {
    Intensional,
    Procedural,
    Resource,
    System,
}

impl DemandType {
    pub fn code(self) -> u8 {
        match self {
            DemandType::Intensional => 0,
            DemandType::Procedural => 1,
            DemandType::Resource => 2,
            DemandType::System => 3,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        Some(match c {
            0 => DemandType::Intensional,
            1 => DemandType::Procedural,
            2 => DemandType::Resource,
            3 => DemandType::System,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DemandState {
    Pending,
    InProcess,
    Computed,
}

impl DemandState {
    pub fn code(self) -> u8 {
        match self {
            DemandState::Pending => 0,
            DemandState::InProcess => 1,
            DemandState::Computed => 2,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        Some(match c {
            0 => DemandState::Pending,
            1 => DemandState::InProcess,
            2 => DemandState::Computed,
            _ => return None,
        })
    }

    /// The legal transition edges. Requeue after a worker crash or
    /// lease expiry is InProcess -> Pending.
    pub fn can_transition_to(self, to: DemandState) -> bool {
        matches!(
            (self, to),
            (DemandState::Pending, DemandState::InProcess)
                | (DemandState::InProcess, DemandState::Computed)
                | (DemandState::InProcess, DemandState::Pending)
        )
    }
}

/// 256-bit content signature of a demand.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DemandSignature(pub [u8; 32]);

impl DemandSignature {
    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    /// Lowercase, 64 hex chars.
    pub fn to_hex(&self) -> String {
        to_hex(&self.0)
    }
}

impl fmt::Debug for DemandSignature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "sig:{}", &self.to_hex()[..12])
    }
}

impl fmt::Display for DemandSignature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

/// 128-bit universally unique identifier for one issued demand.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct DemandId(pub [u8; 16]);

impl DemandId {
    pub fn generate(rng: &mut dyn RngCore) -> Self {
        let mut bytes = [0u8; 16];
        rng.fill_bytes(&mut bytes);
        // RFC 4122 version/variant bits, purely cosmetic.
        bytes[6] = (bytes[6] & 0x0f) | 0x40;
        bytes[8] = (bytes[8] & 0x3f) | 0x80;
        Self(bytes)
    }
}

impl fmt::Debug for DemandId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let h = to_hex(&self.0);
        write!(
            f,
            "{}-{}-{}-{}-{}",
            &h[0..8],
            &h[8..12],
            &h[12..16],
            &h[16..20],
            &h[20..32]
        )
    }
}

/// Scalar parameter value with a stable canonical byte encoding.
#[derive(Debug, Clone, PartialEq)]
pub enum ParamValue {
    Int(i64),
    Float(f64),
    Str(String),
    Bool(bool),
}

pub type Params = BTreeMap<String, ParamValue>;

fn put_len64(out: &mut Vec<u8>, len: usize) {
    out.extend_from_slice(&(len as u64).to_be_bytes());
}

fn encode_params(params: &Params) -> Vec<u8> {
    let mut out = Vec::new();
    for (key, value) in params {
        put_len64(&mut out, key.len());
        out.extend_from_slice(key.as_bytes());
        match value {
            ParamValue::Int(v) => {
                out.push(0x01);
                out.extend_from_slice(&v.to_be_bytes());
            }
            ParamValue::Float(v) => {
                out.push(0x02);
                out.extend_from_slice(&v.to_bits().to_be_bytes());
            }
            ParamValue::Str(v) => {
                out.push(0x03);
                put_len64(&mut out, v.len());
                out.extend_from_slice(v.as_bytes());
            }
            ParamValue::Bool(v) => {
                out.push(0x04);
                out.push(*v as u8);
            }
        }
    }
    out
}

/// Deterministic content signature over (stage, operation, params,
/// payload). Independent of parameter map iteration order.
pub fn compute_signature(
    stage: &str,
    operation: &str,
    params: &Params,
    payload: &[u8],
) -> DemandSignature {
    let params_enc = encode_params(params);
    let mut buf = Vec::with_capacity(
        32 + stage.len() + operation.len() + params_enc.len() + payload.len(),
    );
    put_len64(&mut buf, stage.len());
    buf.extend_from_slice(stage.as_bytes());
    put_len64(&mut buf, operation.len());
    buf.extend_from_slice(operation.as_bytes());
    put_len64(&mut buf, params_enc.len());
    buf.extend_from_slice(&params_enc);
    put_len64(&mut buf, payload.len());
    buf.extend_from_slice(payload);
    DemandSignature(sha256(&buf))
}

/// Ordered (tier-id, timestamp) trace of a demand's journey.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Timeline {
    entries: Vec<(String, u64)>,
}

impl Timeline {
    pub fn entries(&self) -> &[(String, u64)] {
        &self.entries
    }

    pub fn append(&mut self, tier_id: &str, now: u64) {
        self.entries.push((tier_id.to_string(), now));
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Demand {
    pub id: DemandId,
    pub signature: DemandSignature,
    pub dtype: DemandType,
    pub state: DemandState,
    pub stage: String,
    pub operation: String,
    pub params: Params,
    pub payload: Vec<u8>,
    pub result: Option<Vec<u8>>,
    pub access_count: u64,
    pub timeline: Timeline,
}

impl Demand {
    pub fn new(
        id: DemandId,
        dtype: DemandType,
        stage: &str,
        operation: &str,
        params: Params,
        payload: Vec<u8>,
    ) -> Self {
        let signature = compute_signature(stage, operation, &params, &payload);
        Self {
            id,
            signature,
            dtype,
            state: DemandState::Pending,
            stage: stage.to_string(),
            operation: operation.to_string(),
            params,
            payload,
            result: None,
            access_count: 0,
            timeline: Timeline::default(),
        }
    }

    pub fn size_bytes(&self) -> u64 {
        (self.payload.len() + self.result.as_ref().map_or(0, Vec::len)) as u64
    }

    /// Moves the demand to a new state, appending a timeline entry.
    /// The only path that mutates state.
    pub fn transition(
        mut self,
        to: DemandState,
        tier_id: &str,
        now: u64,
    ) -> Result<Demand, DemandError> {
        if !self.state.can_transition_to(to) {
            return Err(DemandError::IllegalTransition { from: self.state, to });
        }
        self.state = to;
        self.timeline.append(tier_id, now);
        Ok(self)
    }

    /// InProcess -> Computed with the result attached.
    pub fn complete(
        mut self,
        result: Vec<u8>,
        tier_id: &str,
        now: u64,
    ) -> Result<Demand, DemandError> {
        if self.state != DemandState::InProcess {
            return Err(DemandError::IllegalTransition {
                from: self.state,
                to: DemandState::Computed,
            });
        }
        self.result = Some(result);
        self.transition(DemandState::Computed, tier_id, now)
    }

    pub fn bump_access(&mut self) {
        self.access_count += 1;
    }

    /// Wire format: magic "DMND", version u8, length-prefixed fields,
    /// CRC32 trailer over everything before it.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(DEMAND_MAGIC);
        out.push(DEMAND_WIRE_VERSION);
        out.extend_from_slice(&self.id.0);
        out.extend_from_slice(&self.signature.0);
        out.push(self.dtype.code());
        out.push(self.state.code());
        for field in [self.stage.as_bytes(), self.operation.as_bytes()] {
            put_len64(&mut out, field.len());
            out.extend_from_slice(field);
        }
        let params_enc = encode_params(&self.params);
        put_len64(&mut out, params_enc.len());
        out.extend_from_slice(&params_enc);
        put_len64(&mut out, self.payload.len());
        out.extend_from_slice(&self.payload);
        match &self.result {
            Some(r) => {
                out.push(1);
                put_len64(&mut out, r.len());
                out.extend_from_slice(r);
            }
            None => out.push(0),
        }
        out.extend_from_slice(&self.access_count.to_be_bytes());
        out.extend_from_slice(&(self.timeline.entries.len() as u32).to_be_bytes());
        for (tier, ts) in &self.timeline.entries {
            put_len64(&mut out, tier.len());
            out.extend_from_slice(tier.as_bytes());
            out.extend_from_slice(&ts.to_be_bytes());
        }
        let crc = crc32(&out);
        out.extend_from_slice(&crc.to_be_bytes());
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Demand, DemandError> {
        let mut r = Reader::new(bytes);
        if r.take(4)? != &DEMAND_MAGIC[..] {
            return Err(DemandError::Codec("bad magic".into()));
        }
        if r.u8()? != DEMAND_WIRE_VERSION {
            return Err(DemandError::Codec("unsupported version".into()));
        }
        let mut id = [0u8; 16];
        id.copy_from_slice(r.take(16)?);
        let mut sig = [0u8; 32];
        sig.copy_from_slice(r.take(32)?);
        let dtype = DemandType::from_code(r.u8()?)
            .ok_or_else(|| DemandError::Codec("bad demand type".into()))?;
        let state = DemandState::from_code(r.u8()?)
            .ok_or_else(|| DemandError::Codec("bad demand state".into()))?;
        let stage = r.str_field()?;
        let operation = r.str_field()?;
        let params_enc = r.bytes_field()?;
        let params = decode_params(&params_enc)?;
        let payload = r.bytes_field()?;
        let result = match r.u8()? {
            0 => None,
            1 => Some(r.bytes_field()?),
            _ => return Err(DemandError::Codec("bad result flag".into())),
        };
        let access_count = r.u64()?;
        let n_timeline = r.u32()? as usize;
        let mut timeline = Timeline::default();
        for _ in 0..n_timeline {
            let tier = r.str_field()?;
            let ts = r.u64()?;
            timeline.entries.push((tier, ts));
        }
        let body_len = r.pos;
        let crc_stored = r.u32()?;
        if crc32(&bytes[..body_len]) != crc_stored {
            return Err(DemandError::Codec("crc mismatch".into()));
        }
        if result.is_some() && state != DemandState::Computed {
            return Err(DemandError::Codec(
                "result present on non-computed demand".into(),
            ));
        }
        Ok(Demand {
            id: DemandId(id),
            signature: DemandSignature(sig),
            dtype,
            state,
            stage,
            operation,
            params,
            payload,
            result,
            access_count,
            timeline,
        })
    }
}

fn decode_params(bytes: &[u8]) -> Result<Params, DemandError> {
    let mut r = Reader::new(bytes);
    let mut params = Params::new();
    while r.pos < bytes.len() {
        let key = r.str_field()?;
        let value = match r.u8()? {
            0x01 => ParamValue::Int(i64::from_be_bytes(
                r.take(8)?.try_into().unwrap(),
            )),
            0x02 => ParamValue::Float(f64::from_bits(r.u64()?)),
            0x03 => ParamValue::Str(r.str_field()?),
            0x04 => ParamValue::Bool(r.u8()? != 0),
            _ => return Err(DemandError::Codec("bad param tag".into())),
        };
        params.insert(key, value);
    }
    Ok(params)
}

pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], DemandError> {
        if self.pos + n > self.buf.len() {
            return Err(DemandError::Codec("truncated".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, DemandError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, DemandError> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, DemandError> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn len64(&mut self) -> Result<usize, DemandError> {
        let n = self.u64()?;
        if n > self.buf.len() as u64 {
            return Err(DemandError::Codec("length overruns buffer".into()));
        }
        Ok(n as usize)
    }

    fn bytes_field(&mut self) -> Result<Vec<u8>, DemandError> {
        let n = self.len64()?;
        Ok(self.take(n)?.to_vec())
    }

    fn str_field(&mut self) -> Result<String, DemandError> {
        String::from_utf8(self.bytes_field()?)
            .map_err(|_| DemandError::Codec("invalid utf8".into()))
    }
}
