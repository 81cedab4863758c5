//! Length-prefixed frame codec and the TCP store transport. A frame
//! is a u32 big-endian length followed by a one-byte op-code and the
//! payload; demand-carrying ops reuse the demand wire format.

use std::collections::BTreeSet;
use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use crate::demand::{Demand, DemandSignature};
use crate::store::{
    DemandStore, PutOutcome, SigLocation, StoreApi, StoreError, StoreOutcome, StoreStats,
};

pub const MAX_FRAME_LEN: u32 = 64 * 1024 * 1024;

pub const OP_PUT: u8 = 0x01;
pub const OP_CLAIM: u8 = 0x02;
pub const OP_STORE_RESULT: u8 = 0x03;
pub const OP_LOOKUP: u8 = 0x04;
pub const OP_REQUEUE: u8 = 0x05;
pub const OP_LOCATE: u8 = 0x06;
pub const OP_STATS: u8 = 0x07;
pub const OP_OK: u8 = 0x80;
pub const OP_ERR: u8 = 0xFF;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub op: u8,
    pub payload: Vec<u8>,
}

impl Frame {
    pub fn new(op: u8, payload: Vec<u8>) -> Self {
        Self { op, payload }
    }

    pub fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        let len = 1 + self.payload.len() as u32;
        w.write_all(&len.to_be_bytes())?;
        w.write_all(&[self.op])?;
        w.write_all(&self.payload)?;
        w.flush()
    }

    /// Reads one frame; `Ok(None)` on clean EOF at a frame boundary.
    pub fn read_from(r: &mut impl Read) -> std::io::Result<Option<Self>> {
        let mut len_buf = [0u8; 4];
        match r.read_exact(&mut len_buf) {
            Ok(()) => {}
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => return Ok(None),
            Err(e) => return Err(e),
        }
        let len = u32::from_be_bytes(len_buf);
        if len == 0 || len > MAX_FRAME_LEN {
            return Err(std::io::Error::new(
                std::io::ErrorKind::InvalidData,
                format!("bad frame length {len}"),
            ));
        }
        let mut body = vec![0u8; len as usize];
        r.read_exact(&mut body)?;
        let payload = body.split_off(1);
        Ok(Some(Self { op: body[0], payload }))
    }
}

fn put_bytes(out: &mut Vec<u8>, bytes: &[u8]) {
    out.extend_from_slice(&(bytes.len() as u32).to_be_bytes());
    out.extend_from_slice(bytes);
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], StoreError> {
        if self.pos + n > self.buf.len() {
            return Err(StoreError::Protocol("truncated frame payload".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, StoreError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, StoreError> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, StoreError> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn bytes(&mut self) -> Result<Vec<u8>, StoreError> {
        let n = self.u32()? as usize;
        Ok(self.take(n)?.to_vec())
    }

    fn string(&mut self) -> Result<String, StoreError> {
        String::from_utf8(self.bytes()?)
            .map_err(|_| StoreError::Protocol("non-utf8 string".into()))
    }

    fn sig(&mut self) -> Result<DemandSignature, StoreError> {
        let mut b = [0u8; 32];
        b.copy_from_slice(self.take(32)?);
        Ok(DemandSignature(b))
    }

    fn done(&self) -> Result<(), StoreError> {
        if self.pos == self.buf.len() {
            Ok(())
        } else {
            Err(StoreError::Protocol("trailing bytes in frame".into()))
        }
    }
}

fn handle_request(store: &DemandStore, frame: Frame) -> Result<Frame, StoreError> {
    let mut c = Cursor::new(&frame.payload);
    let payload = match frame.op {
        OP_PUT => {
            let demand = Demand::decode(&frame.payload)
                .map_err(|e| StoreError::Protocol(e.to_string()))?;
            let mut out = Vec::new();
            match store.put_demand(demand)? {
                PutOutcome::Enqueued => out.push(0),
                PutOutcome::AlreadyComputed(bytes) => {
                    out.push(1);
                    put_bytes(&mut out, &bytes);
                }
                PutOutcome::AlreadyInFlight => out.push(2),
            }
            out
        }
        OP_CLAIM => {
            let tier = c.string()?;
            let now = c.u64()?;
            let n = c.u32()?;
            let mut pool = BTreeSet::new();
            for _ in 0..n {
                pool.insert(c.string()?);
            }
            c.done()?;
            let mut out = Vec::new();
            match store.claim_pending(&tier, &pool, now)? {
                None => out.push(0),
                Some(d) => {
                    out.push(1);
                    out.extend_from_slice(&d.encode());
                }
            }
            out
        }
        OP_STORE_RESULT => {
            let sig = c.sig()?;
            let tier = c.string()?;
            let now = c.u64()?;
            let result = c.bytes()?;
            c.done()?;
            let code = match store.store_result(sig, result, &tier, now)? {
                StoreOutcome::Stored => 0,
                StoreOutcome::Duplicate => 1,
            };
            vec![code]
        }
        OP_LOOKUP => {
            let sig = c.sig()?;
            c.done()?;
            let mut out = Vec::new();
            match store.lookup(sig)? {
                None => out.push(0),
                Some(bytes) => {
                    out.push(1);
                    put_bytes(&mut out, &bytes);
                }
            }
            out
        }
        OP_REQUEUE => {
            let now = c.u64()?;
            let lease = c.u64()?;
            c.done()?;
            let sigs = store.requeue_expired(now, lease)?;
            let mut out = Vec::new();
            out.extend_from_slice(&(sigs.len() as u32).to_be_bytes());
            for sig in sigs {
                out.extend_from_slice(&sig.0);
            }
            out
        }
        OP_LOCATE => {
            let sig = c.sig()?;
            c.done()?;
            let code = match store.locate(sig)? {
                SigLocation::Absent => 0,
                SigLocation::Pending => 1,
                SigLocation::InProcess => 2,
                SigLocation::Computed => 3,
            };
            vec![code]
        }
        OP_STATS => {
            c.done()?;
            let s = store.stats()?;
            let mut out = Vec::with_capacity(56);
            for v in [s.puts, s.claims, s.hits, s.misses, s.stores, s.requeues, s.lookups] {
                out.extend_from_slice(&v.to_be_bytes());
            }
            out
        }
        other => return Err(StoreError::Protocol(format!("unknown op-code {other:#04x}"))),
    };
    Ok(Frame::new(OP_OK, payload))
}

fn serve_connection(store: &DemandStore, stream: TcpStream) {
    let mut reader = std::io::BufReader::new(stream.try_clone().expect("clone stream"));
    let mut writer = std::io::BufWriter::new(stream);
    loop {
        let frame = match Frame::read_from(&mut reader) {
            Ok(Some(f)) => f,
            Ok(None) | Err(_) => return,
        };
        let reply = match handle_request(store, frame) {
            Ok(reply) => reply,
            Err(e) => Frame::new(OP_ERR, e.to_string().into_bytes()),
        };
        if reply.write_to(&mut writer).is_err() {
            return;
        }
    }
}

/// TCP front end for a [`DemandStore`]; one thread per connection,
/// loopback only by convention.
pub struct StoreServer {
    addr: std::net::SocketAddr,
    shutdown: Arc<AtomicBool>,
    accept_handle: Option<JoinHandle<()>>,
}

impl StoreServer {
    pub fn bind(addr: impl ToSocketAddrs, store: Arc<DemandStore>) -> std::io::Result<Self> {
        let listener = TcpListener::bind(addr)?;
        let local = listener.local_addr()?;
        let shutdown = Arc::new(AtomicBool::new(false));
        let stop = Arc::clone(&shutdown);
        let accept_handle = std::thread::spawn(move || {
            let mut workers = Vec::new();
            for stream in listener.incoming() {
                if stop.load(Ordering::SeqCst) {
                    break;
                }
                let Ok(stream) = stream else { continue };
                let store = Arc::clone(&store);
                workers.push(std::thread::spawn(move || serve_connection(&store, stream)));
            }
            for w in workers {
                let _ = w.join();
            }
        });
        Ok(Self { addr: local, shutdown, accept_handle: Some(accept_handle) })
    }

    pub fn addr(&self) -> std::net::SocketAddr {
        self.addr
    }

    pub fn shutdown(&mut self) {
        self.shutdown.store(true, Ordering::SeqCst);
        // Nudge the accept loop so it observes the flag.
        let _ = TcpStream::connect(self.addr);
        if let Some(h) = self.accept_handle.take() {
            let _ = h.join();
        }
    }
}

impl Drop for StoreServer {
    fn drop(&mut self) {
        self.shutdown();
    }
}

/// Store client over one persistent TCP connection; implements the
/// same [`StoreApi`] surface as the in-process store.
pub struct RemoteStore {
    stream: Mutex<TcpStream>,
}

impl RemoteStore {
    pub fn connect(addr: impl ToSocketAddrs) -> Result<Self, StoreError> {
        let stream = TcpStream::connect(addr)
            .map_err(|e| StoreError::Transport(e.to_string()))?;
        stream
            .set_nodelay(true)
            .map_err(|e| StoreError::Transport(e.to_string()))?;
        Ok(Self { stream: Mutex::new(stream) })
    }

    fn call(&self, request: Frame) -> Result<Vec<u8>, StoreError> {
        let mut stream = self.stream.lock().unwrap();
        request
            .write_to(&mut *stream)
            .map_err(|e| StoreError::Transport(e.to_string()))?;
        let reply = Frame::read_from(&mut *stream)
            .map_err(|e| StoreError::Transport(e.to_string()))?
            .ok_or_else(|| StoreError::Transport("connection closed".into()))?;
        match reply.op {
            OP_OK => Ok(reply.payload),
            OP_ERR => Err(StoreError::Protocol(
                String::from_utf8_lossy(&reply.payload).into_owned(),
            )),
            other => Err(StoreError::Protocol(format!("unexpected reply op {other:#04x}"))),
        }
    }
}

impl StoreApi for RemoteStore {
    fn put_demand(&self, d: Demand) -> Result<PutOutcome, StoreError> {
        let reply = self.call(Frame::new(OP_PUT, d.encode()))?;
        let mut c = Cursor::new(&reply);
        let out = match c.u8()? {
            0 => PutOutcome::Enqueued,
            1 => PutOutcome::AlreadyComputed(c.bytes()?),
            2 => PutOutcome::AlreadyInFlight,
            other => return Err(StoreError::Protocol(format!("bad put tag {other}"))),
        };
        c.done()?;
        Ok(out)
    }

    fn claim_pending(
        &self,
        tier_id: &str,
        pool: &BTreeSet<String>,
        now: u64,
    ) -> Result<Option<Demand>, StoreError> {
        let mut payload = Vec::new();
        put_bytes(&mut payload, tier_id.as_bytes());
        payload.extend_from_slice(&now.to_be_bytes());
        payload.extend_from_slice(&(pool.len() as u32).to_be_bytes());
        for op in pool {
            put_bytes(&mut payload, op.as_bytes());
        }
        let reply = self.call(Frame::new(OP_CLAIM, payload))?;
        let mut c = Cursor::new(&reply);
        match c.u8()? {
            0 => {
                c.done()?;
                Ok(None)
            }
            1 => {
                let demand = Demand::decode(&reply[1..])
                    .map_err(|e| StoreError::Protocol(e.to_string()))?;
                Ok(Some(demand))
            }
            other => Err(StoreError::Protocol(format!("bad claim tag {other}"))),
        }
    }

    fn store_result(
        &self,
        sig: DemandSignature,
        result: Vec<u8>,
        tier_id: &str,
        now: u64,
    ) -> Result<StoreOutcome, StoreError> {
        let mut payload = Vec::new();
        payload.extend_from_slice(&sig.0);
        put_bytes(&mut payload, tier_id.as_bytes());
        payload.extend_from_slice(&now.to_be_bytes());
        put_bytes(&mut payload, &result);
        let reply = self.call(Frame::new(OP_STORE_RESULT, payload))?;
        let mut c = Cursor::new(&reply);
        let out = match c.u8()? {
            0 => StoreOutcome::Stored,
            1 => StoreOutcome::Duplicate,
            other => return Err(StoreError::Protocol(format!("bad store tag {other}"))),
        };
        c.done()?;
        Ok(out)
    }

    fn lookup(&self, sig: DemandSignature) -> Result<Option<Vec<u8>>, StoreError> {
        let reply = self.call(Frame::new(OP_LOOKUP, sig.0.to_vec()))?;
        let mut c = Cursor::new(&reply);
        let out = match c.u8()? {
            0 => None,
            1 => Some(c.bytes()?),
            other => return Err(StoreError::Protocol(format!("bad lookup tag {other}"))),
        };
        c.done()?;
        Ok(out)
    }

    fn requeue_expired(&self, now: u64, lease: u64) -> Result<Vec<DemandSignature>, StoreError> {
        let mut payload = Vec::with_capacity(16);
        payload.extend_from_slice(&now.to_be_bytes());
        payload.extend_from_slice(&lease.to_be_bytes());
        let reply = self.call(Frame::new(OP_REQUEUE, payload))?;
        let mut c = Cursor::new(&reply);
        let n = c.u32()?;
        let mut sigs = Vec::with_capacity(n as usize);
        for _ in 0..n {
            sigs.push(c.sig()?);
        }
        c.done()?;
        Ok(sigs)
    }

    fn locate(&self, sig: DemandSignature) -> Result<SigLocation, StoreError> {
        let reply = self.call(Frame::new(OP_LOCATE, sig.0.to_vec()))?;
        let mut c = Cursor::new(&reply);
        let out = match c.u8()? {
            0 => SigLocation::Absent,
            1 => SigLocation::Pending,
            2 => SigLocation::InProcess,
            3 => SigLocation::Computed,
            other => return Err(StoreError::Protocol(format!("bad locate tag {other}"))),
        };
        c.done()?;
        Ok(out)
    }

    fn stats(&self) -> Result<StoreStats, StoreError> {
        let reply = self.call(Frame::new(OP_STATS, Vec::new()))?;
        let mut c = Cursor::new(&reply);
        let stats = StoreStats {
            puts: c.u64()?,
            claims: c.u64()?,
            hits: c.u64()?,
            misses: c.u64()?,
            stores: c.u64()?,
            requeues: c.u64()?,
            lookups: c.u64()?,
        };
        c.done()?;
        Ok(stats)
    }
}
