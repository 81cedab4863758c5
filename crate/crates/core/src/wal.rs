//! Write-ahead log: durable before/after snapshots of committed
//! results, replayable after a crash and shippable to a replica.
//!
//! On-disk record layout: magic "DWAL" + version once at file start,
//! then per record: seq u64 BE, signature 32 bytes, before-flag u8
//! (+ len u32 BE + bytes), after len u32 BE + bytes, crc32 u32 BE over
//! (signature | before | after). A torn tail (truncated final record)
//! is detected and dropped on replay.
//!
//! The log retains at most `capacity` committed records in its ring;
//! older records may only be evicted once a checkpoint (a warehouse
//! snapshot file) covers them.

use std::collections::{BTreeMap, VecDeque};
use std::fs::{File, OpenOptions};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::demand::DemandSignature;
use crate::util::crc32;

pub const WAL_MAGIC: &[u8; 4] = b"DWAL";
pub const WAL_VERSION: u8 = 1;
pub const CHECKPOINT_MAGIC: &[u8; 4] = b"DCKP";

pub const DEFAULT_WAL_CAPACITY: usize = 1024;
pub const DEFAULT_CHECKPOINT_EVERY: u64 = 256;

pub type Warehouse = BTreeMap<DemandSignature, Vec<u8>>;

#[derive(Debug, Error)]
pub enum WalError {
    #[error("wal io failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("wal capacity exhausted: oldest record not yet checkpointed")]
    CapacityExhausted,
    #[error("wal corrupt: {0}")]
    Corrupt(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WalRecord {
    pub seq: u64,
    pub signature: DemandSignature,
    pub before: Option<Vec<u8>>,
    pub after: Vec<u8>,
    pub crc: u32,
}

impl WalRecord {
    pub fn new(
        seq: u64,
        signature: DemandSignature,
        before: Option<Vec<u8>>,
        after: Vec<u8>,
    ) -> Self {
        let crc = Self::compute_crc(&signature, before.as_deref(), &after);
        Self { seq, signature, before, after, crc }
    }

    pub fn compute_crc(sig: &DemandSignature, before: Option<&[u8]>, after: &[u8]) -> u32 {
        let mut buf = Vec::with_capacity(33 + after.len());
        buf.extend_from_slice(sig.as_bytes());
        if let Some(b) = before {
            buf.push(1);
            buf.extend_from_slice(b);
        } else {
            buf.push(0);
        }
        buf.extend_from_slice(after);
        crc32(&buf)
    }

    pub fn crc_valid(&self) -> bool {
        self.crc == Self::compute_crc(&self.signature, self.before.as_deref(), &self.after)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&self.seq.to_be_bytes());
        out.extend_from_slice(self.signature.as_bytes());
        match &self.before {
            Some(b) => {
                out.push(1);
                out.extend_from_slice(&(b.len() as u32).to_be_bytes());
                out.extend_from_slice(b);
            }
            None => out.push(0),
        }
        out.extend_from_slice(&(self.after.len() as u32).to_be_bytes());
        out.extend_from_slice(&self.after);
        out.extend_from_slice(&self.crc.to_be_bytes());
        out
    }

    /// Decodes one record from `buf`, returning it and the bytes
    /// consumed. `None` means a clean or torn end of input.
    pub fn decode(buf: &[u8]) -> Option<(WalRecord, usize)> {
        let mut pos = 0usize;
        let take = |pos: &mut usize, n: usize| -> Option<&[u8]> {
            if *pos + n > buf.len() {
                return None;
            }
            let s = &buf[*pos..*pos + n];
            *pos += n;
            Some(s)
        };
        let seq = u64::from_be_bytes(take(&mut pos, 8)?.try_into().unwrap());
        let mut sig = [0u8; 32];
        sig.copy_from_slice(take(&mut pos, 32)?);
        let before = match take(&mut pos, 1)?[0] {
            0 => None,
            1 => {
                let len = u32::from_be_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
                Some(take(&mut pos, len)?.to_vec())
            }
            _ => return None,
        };
        let after_len = u32::from_be_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
        let after = take(&mut pos, after_len)?.to_vec();
        let crc = u32::from_be_bytes(take(&mut pos, 4)?.try_into().unwrap());
        let rec = WalRecord { seq, signature: DemandSignature(sig), before, after, crc };
        if !rec.crc_valid() {
            return None;
        }
        Some((rec, pos))
    }
}

pub struct Wal {
    path: PathBuf,
    file: File,
    capacity: usize,
    ring: VecDeque<WalRecord>,
    next_seq: u64,
    checkpoint_seq: Option<u64>,
    checkpoint_every: u64,
    appends_since_checkpoint: u64,
    /// File offset after each append, in append order. Used by the
    /// simulator's crash-point sweep.
    append_offsets: Vec<u64>,
}

impl Wal {
    pub fn create(path: impl AsRef<Path>) -> Result<Self, WalError> {
        Self::create_with(path, DEFAULT_WAL_CAPACITY, DEFAULT_CHECKPOINT_EVERY)
    }

    /// `checkpoint_every = 0` disables automatic checkpoint requests.
    pub fn create_with(
        path: impl AsRef<Path>,
        capacity: usize,
        checkpoint_every: u64,
    ) -> Result<Self, WalError> {
        let path = path.as_ref().to_path_buf();
        let mut file = OpenOptions::new()
            .create(true)
            .write(true)
            .truncate(true)
            .open(&path)?;
        file.write_all(WAL_MAGIC)?;
        file.write_all(&[WAL_VERSION])?;
        file.sync_data()?;
        Ok(Self {
            path,
            file,
            capacity,
            ring: VecDeque::new(),
            next_seq: 0,
            checkpoint_seq: None,
            checkpoint_every,
            appends_since_checkpoint: 0,
            append_offsets: Vec::new(),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.path.with_extension("ckp")
    }

    pub fn records(&self) -> impl Iterator<Item = &WalRecord> {
        self.ring.iter()
    }

    pub fn record_count(&self) -> usize {
        self.ring.len()
    }

    pub fn last_seq(&self) -> Option<u64> {
        self.next_seq.checked_sub(1)
    }

    pub fn append_offsets(&self) -> &[u64] {
        &self.append_offsets
    }

    /// Appends a committed result. The record is durable on disk
    /// before this returns; callers acknowledge only afterwards.
    pub fn append(
        &mut self,
        signature: DemandSignature,
        before: Option<Vec<u8>>,
        after: Vec<u8>,
    ) -> Result<u64, WalError> {
        let rec = WalRecord::new(self.next_seq, signature, before, after);
        self.append_record(rec)
    }

    /// Appends a pre-built record (the shipping path). The record's
    /// CRC must validate and its seq must equal the next expected seq.
    pub fn append_record(&mut self, rec: WalRecord) -> Result<u64, WalError> {
        if !rec.crc_valid() {
            return Err(WalError::Corrupt("record crc invalid".into()));
        }
        if rec.seq != self.next_seq {
            return Err(WalError::Corrupt(format!(
                "non-contiguous seq {} (expected {})",
                rec.seq, self.next_seq
            )));
        }
        if self.ring.len() >= self.capacity {
            let evictable = self
                .ring
                .front()
                .map(|r| Some(r.seq) <= self.checkpoint_seq)
                .unwrap_or(false);
            if !evictable {
                return Err(WalError::CapacityExhausted);
            }
            self.ring.pop_front();
        }
        let seq = rec.seq;
        self.file.write_all(&rec.encode())?;
        self.file.sync_data()?;
        let offset = self.file.metadata()?.len();
        self.append_offsets.push(offset);
        self.ring.push_back(rec);
        self.next_seq = seq + 1;
        self.appends_since_checkpoint += 1;
        Ok(seq)
    }

    pub fn wants_checkpoint(&self) -> bool {
        self.checkpoint_every > 0 && self.appends_since_checkpoint >= self.checkpoint_every
    }

    /// Writes a warehouse snapshot covering every record so far, then
    /// restarts the on-disk log. Ring records stay available for
    /// shipping until evicted.
    pub fn checkpoint(&mut self, warehouse: &Warehouse) -> Result<(), WalError> {
        let tmp = self.path.with_extension("ckp.tmp");
        let mut buf = Vec::new();
        buf.extend_from_slice(CHECKPOINT_MAGIC);
        buf.push(WAL_VERSION);
        buf.extend_from_slice(&self.next_seq.to_be_bytes());
        buf.extend_from_slice(&(warehouse.len() as u32).to_be_bytes());
        for (sig, bytes) in warehouse {
            buf.extend_from_slice(sig.as_bytes());
            buf.extend_from_slice(&(bytes.len() as u32).to_be_bytes());
            buf.extend_from_slice(bytes);
        }
        let crc = crc32(&buf);
        buf.extend_from_slice(&crc.to_be_bytes());
        std::fs::write(&tmp, &buf)?;
        std::fs::rename(&tmp, self.checkpoint_path())?;

        self.file = OpenOptions::new()
            .create(true)
            .write(true)
            .truncate(true)
            .open(&self.path)?;
        self.file.write_all(WAL_MAGIC)?;
        self.file.write_all(&[WAL_VERSION])?;
        self.file.sync_data()?;
        self.checkpoint_seq = self.last_seq();
        self.appends_since_checkpoint = 0;
        self.append_offsets.clear();
        Ok(())
    }

    /// Reads back (checkpoint warehouse, surviving log records). The
    /// log's invalid or torn tail is silently truncated; corruption in
    /// the middle truncates from that point on.
    pub fn recover(path: impl AsRef<Path>) -> Result<(Warehouse, Vec<WalRecord>), WalError> {
        let path = path.as_ref();
        let mut warehouse = Warehouse::new();
        let mut base_seq = 0u64;
        let ckp_path = path.with_extension("ckp");
        if ckp_path.exists() {
            let bytes = std::fs::read(&ckp_path)?;
            match parse_checkpoint(&bytes) {
                Some((seq, wh)) => {
                    base_seq = seq;
                    warehouse = wh;
                }
                None => return Err(WalError::Corrupt("checkpoint file invalid".into())),
            }
        }
        let mut records = Vec::new();
        if path.exists() {
            let mut bytes = Vec::new();
            File::open(path)?.read_to_end(&mut bytes)?;
            if bytes.len() >= 5 {
                if &bytes[..4] != WAL_MAGIC || bytes[4] != WAL_VERSION {
                    return Err(WalError::Corrupt("bad wal header".into()));
                }
                let mut pos = 5usize;
                let mut expected = base_seq;
                while pos < bytes.len() {
                    match WalRecord::decode(&bytes[pos..]) {
                        Some((rec, used)) if rec.seq == expected => {
                            pos += used;
                            expected = rec.seq + 1;
                            records.push(rec);
                        }
                        _ => break, // torn or corrupt tail
                    }
                }
            }
        }
        Ok((warehouse, records))
    }

    /// Replays this WAL's checkpoint and records into a warehouse map.
    pub fn replay_into(path: impl AsRef<Path>, warehouse: &mut Warehouse) -> Result<usize, WalError> {
        let (ckp, records) = Self::recover(path)?;
        warehouse.extend(ckp);
        let n = records.len();
        for rec in records {
            warehouse.insert(rec.signature, rec.after);
        }
        Ok(n)
    }
}

fn parse_checkpoint(bytes: &[u8]) -> Option<(u64, Warehouse)> {
    if bytes.len() < 4 + 1 + 8 + 4 + 4 || &bytes[..4] != CHECKPOINT_MAGIC {
        return None;
    }
    let body = &bytes[..bytes.len() - 4];
    let crc_stored = u32::from_be_bytes(bytes[bytes.len() - 4..].try_into().unwrap());
    if crc32(body) != crc_stored {
        return None;
    }
    if body[4] != WAL_VERSION {
        return None;
    }
    let next_seq = u64::from_be_bytes(body[5..13].try_into().unwrap());
    let count = u32::from_be_bytes(body[13..17].try_into().unwrap()) as usize;
    let mut warehouse = Warehouse::new();
    let mut pos = 17usize;
    for _ in 0..count {
        if pos + 36 > body.len() {
            return None;
        }
        let mut sig = [0u8; 32];
        sig.copy_from_slice(&body[pos..pos + 32]);
        pos += 32;
        let len = u32::from_be_bytes(body[pos..pos + 4].try_into().unwrap()) as usize;
        pos += 4;
        if pos + len > body.len() {
            return None;
        }
        warehouse.insert(DemandSignature(sig), body[pos..pos + len].to_vec());
        pos += len;
    }
    Some((next_seq, warehouse))
}

/// Copies every record the destination lacks (by seq) from `src`.
/// Idempotent: a second ship transfers nothing. A destination that is
/// behind the source's ring (records already evicted) must first be
/// re-seeded from the source checkpoint at the store level.
pub fn ship_wal(src: &Wal, dst: &mut Wal) -> Result<usize, WalError> {
    let mut shipped = 0usize;
    for rec in src.records() {
        if rec.seq >= dst.next_seq {
            dst.append_record(rec.clone())?;
            shipped += 1;
        }
    }
    Ok(shipped)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::util::sha256;

    fn sig(n: u8) -> DemandSignature {
        DemandSignature(sha256(&[n]))
    }

    fn tmp_wal(name: &str) -> PathBuf {
        let dir = tempfile::tempdir().unwrap().keep();
        dir.join(name)
    }

    #[test]
    fn append_assigns_seq_zero_first() {
        let mut wal = Wal::create(tmp_wal("a.wal")).unwrap();
        assert_eq!(wal.append(sig(1), None, vec![1]).unwrap(), 0);
        assert_eq!(wal.append(sig(2), None, vec![2]).unwrap(), 1);
    }

    #[test]
    fn ring_eviction_needs_checkpoint() {
        let mut wal = Wal::create_with(tmp_wal("b.wal"), 2, 0).unwrap();
        wal.append(sig(0), None, vec![0]).unwrap();
        wal.append(sig(1), None, vec![1]).unwrap();
        assert!(matches!(
            wal.append(sig(2), None, vec![2]),
            Err(WalError::CapacityExhausted)
        ));
        // Checkpoint covers 0 and 1; record 0 becomes evictable.
        let mut wh = Warehouse::new();
        wh.insert(sig(0), vec![0]);
        wh.insert(sig(1), vec![1]);
        wal.checkpoint(&wh).unwrap();
        wal.append(sig(2), None, vec![2]).unwrap();
        let seqs: Vec<u64> = wal.records().map(|r| r.seq).collect();
        assert_eq!(seqs, vec![1, 2]);
    }

    #[test]
    fn replay_empty_wal() {
        let path = tmp_wal("c.wal");
        Wal::create(&path).unwrap();
        let mut wh = Warehouse::new();
        assert_eq!(Wal::replay_into(&path, &mut wh).unwrap(), 0);
        assert!(wh.is_empty());
    }

    #[test]
    fn replay_restores_appended_results() {
        let path = tmp_wal("d.wal");
        let mut wal = Wal::create(&path).unwrap();
        for i in 0..5u8 {
            wal.append(sig(i), None, vec![i; 3]).unwrap();
        }
        drop(wal);
        let mut wh = Warehouse::new();
        assert_eq!(Wal::replay_into(&path, &mut wh).unwrap(), 5);
        assert_eq!(wh.len(), 5);
        assert_eq!(wh[&sig(3)], vec![3; 3]);
    }

    #[test]
    fn torn_tail_truncated_at_every_offset() {
        let path = tmp_wal("e.wal");
        let mut wal = Wal::create(&path).unwrap();
        for i in 0..3u8 {
            wal.append(sig(i), None, vec![i; 8]).unwrap();
        }
        let offsets = wal.append_offsets().to_vec();
        drop(wal);
        let full = std::fs::read(&path).unwrap();
        let second_end = offsets[1] as usize;
        for cut in second_end..full.len() {
            let torn = tmp_wal("torn.wal");
            std::fs::write(&torn, &full[..cut]).unwrap();
            let mut wh = Warehouse::new();
            let n = Wal::replay_into(&torn, &mut wh).unwrap();
            assert_eq!(n, 2, "cut at {cut}");
            assert!(wh.contains_key(&sig(0)) && wh.contains_key(&sig(1)));
            assert!(!wh.contains_key(&sig(2)));
        }
    }

    #[test]
    fn checkpoint_plus_log_replays_fully() {
        let path = tmp_wal("f.wal");
        let mut wal = Wal::create_with(&path, 1024, 2).unwrap();
        let mut wh = Warehouse::new();
        for i in 0..5u8 {
            wal.append(sig(i), None, vec![i]).unwrap();
            wh.insert(sig(i), vec![i]);
            if wal.wants_checkpoint() {
                wal.checkpoint(&wh).unwrap();
            }
        }
        drop(wal);
        let mut out = Warehouse::new();
        Wal::replay_into(&path, &mut out).unwrap();
        assert_eq!(out, wh);
    }

    #[test]
    fn ship_is_idempotent() {
        let mut src = Wal::create(tmp_wal("src.wal")).unwrap();
        for i in 0..4u8 {
            src.append(sig(i), None, vec![i]).unwrap();
        }
        let mut dst = Wal::create(tmp_wal("dst.wal")).unwrap();
        assert_eq!(ship_wal(&src, &mut dst).unwrap(), 4);
        assert_eq!(ship_wal(&src, &mut dst).unwrap(), 0);
        src.append(sig(9), None, vec![9]).unwrap();
        assert_eq!(ship_wal(&src, &mut dst).unwrap(), 1);
        let a: Vec<_> = src.records().collect();
        let b: Vec<_> = dst.records().collect();
        assert_eq!(a, b);
    }
}
