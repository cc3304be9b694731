//! Point-to-point transports between ranks.
//!
//! Sends are buffered and never block. Receives name a source and a tag;
//! messages that arrive out of order wait in a pending table. Both
//! transports carry a virtual send time so the in-process transport can
//! model link latency and bandwidth on machines with fewer cores than ranks.

use std::collections::HashMap;
use std::io::{BufReader, BufWriter, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use crossbeam_channel::{unbounded, Receiver, RecvTimeoutError, Sender};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Latency/bandwidth model of the links between ranks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LinkModel {
    /// Seconds between ranks on one node.
    pub intra_latency: f64,
    /// Bytes per second between ranks on one node.
    pub intra_bandwidth: f64,
    pub inter_latency: f64,
    pub inter_bandwidth: f64,
    /// Sender CPU cost per message, seconds.
    pub overhead: f64,
}

impl Default for LinkModel {
    /// Synthetic values of the order of a modern interconnect.
    fn default() -> Self {
        Self {
            intra_latency: 1.0e-6,
            intra_bandwidth: 10.0e9,
            inter_latency: 5.0e-6,
            inter_bandwidth: 5.0e9,
            overhead: 1.0e-6,
        }
    }
}

impl LinkModel {
    /// A link with no cost at all.
    pub fn ideal() -> Self {
        Self {
            intra_latency: 0.0,
            intra_bandwidth: f64::INFINITY,
            inter_latency: 0.0,
            inter_bandwidth: f64::INFINITY,
            overhead: 0.0,
        }
    }

    /// (latency, seconds on the wire) for a message of `bytes`.
    pub fn cost(&self, bytes: usize, same_node: bool) -> (f64, f64) {
        let (lat, bw) = if same_node {
            (self.intra_latency, self.intra_bandwidth)
        } else {
            (self.inter_latency, self.inter_bandwidth)
        };
        (lat, bytes as f64 / bw)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Envelope {
    pub source: usize,
    pub dest: usize,
    pub tag: u32,
    pub payload: Vec<f64>,
    /// Virtual time at which the payload is available to the receiver.
    pub arrival: f64,
}

pub trait Transport: Send {
    fn rank(&self) -> usize;
    fn size(&self) -> usize;
    /// Post a message at virtual time `now`; returns the sender-side cost.
    fn send(&mut self, dest: usize, tag: u32, payload: Vec<f64>, now: f64) -> Result<f64>;
    fn recv(&mut self, source: usize, tag: u32) -> Result<Envelope>;
}

/// Pending-table receive shared by both transports.
struct Inbox {
    rx: Receiver<Envelope>,
    pending: HashMap<(usize, u32), Vec<Envelope>>,
    timeout: Duration,
}

impl Inbox {
    fn recv(&mut self, source: usize, tag: u32) -> Result<Envelope> {
        if let Some(q) = self.pending.get_mut(&(source, tag)) {
            if !q.is_empty() {
                return Ok(q.remove(0));
            }
        }
        loop {
            let next = match self.rx.try_recv() {
                Ok(env) => Ok(env),
                Err(_) => crate::clock::blocking(|| self.rx.recv_timeout(self.timeout)),
            };
            match next {
                Ok(env) if env.source == source && env.tag == tag => return Ok(env),
                Ok(env) => self.pending.entry((env.source, env.tag)).or_default().push(env),
                Err(RecvTimeoutError::Timeout) => {
                    return Err(Error::Transport {
                        tag,
                        message: format!("no message from rank {source} within {:?}", self.timeout),
                    })
                }
                Err(RecvTimeoutError::Disconnected) => {
                    return Err(Error::Transport {
                        tag,
                        message: format!("rank {source} hung up"),
                    })
                }
            }
        }
    }
}

/// One rank's end of an in-process network.
pub struct InProcEndpoint {
    rank: usize,
    peers: Vec<Sender<Envelope>>,
    inbox: Inbox,
    link: LinkModel,
    node_of_rank: Arc<Vec<usize>>,
    /// Virtual time at which the outgoing link is free again.
    link_free: f64,
}

/// Create endpoints for `ranks` ranks connected by channels.
pub fn in_process_network(
    ranks: usize,
    link: LinkModel,
    node_of_rank: Vec<usize>,
    timeout: Duration,
) -> Vec<InProcEndpoint> {
    let (txs, rxs): (Vec<_>, Vec<_>) = (0..ranks).map(|_| unbounded()).unzip();
    let nodes = Arc::new(node_of_rank);
    rxs.into_iter()
        .enumerate()
        .map(|(rank, rx)| InProcEndpoint {
            rank,
            peers: txs.clone(),
            inbox: Inbox {
                rx,
                pending: HashMap::new(),
                timeout,
            },
            link,
            node_of_rank: Arc::clone(&nodes),
            link_free: 0.0,
        })
        .collect()
}

impl Transport for InProcEndpoint {
    fn rank(&self) -> usize {
        self.rank
    }

    fn size(&self) -> usize {
        self.peers.len()
    }

    fn send(&mut self, dest: usize, tag: u32, payload: Vec<f64>, now: f64) -> Result<f64> {
        let same = self.node_of_rank.get(dest) == self.node_of_rank.get(self.rank);
        let (lat, wire) = self.link.cost(payload.len() * 8, same);
        let depart = (now + self.link.overhead).max(self.link_free);
        self.link_free = depart + wire;
        let env = Envelope {
            source: self.rank,
            dest,
            tag,
            payload,
            arrival: depart + wire + lat,
        };
        self.peers
            .get(dest)
            .ok_or_else(|| Error::Transport {
                tag,
                message: format!("no rank {dest}"),
            })?
            .send(env)
            .map_err(|_| Error::Transport {
                tag,
                message: format!("rank {dest} hung up"),
            })?;
        Ok(self.link.overhead)
    }

    fn recv(&mut self, source: usize, tag: u32) -> Result<Envelope> {
        self.inbox.recv(source, tag)
    }
}

pub const WIRE_MAGIC: [u8; 4] = *b"MBFX";
pub const WIRE_VERSION: u32 = 1;

/// Frame header: tag, source, dest (u32) and payload byte length (u64), LE.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameHeader {
    pub tag: u32,
    pub source: u32,
    pub dest: u32,
    pub byte_len: u64,
}

impl FrameHeader {
    pub const LEN: usize = 20;

    pub fn encode(&self) -> [u8; Self::LEN] {
        let mut b = [0u8; Self::LEN];
        b[0..4].copy_from_slice(&self.tag.to_le_bytes());
        b[4..8].copy_from_slice(&self.source.to_le_bytes());
        b[8..12].copy_from_slice(&self.dest.to_le_bytes());
        b[12..20].copy_from_slice(&self.byte_len.to_le_bytes());
        b
    }

    pub fn decode(b: &[u8; Self::LEN]) -> Self {
        let u32_at = |i: usize| u32::from_le_bytes(b[i..i + 4].try_into().unwrap());
        Self {
            tag: u32_at(0),
            source: u32_at(4),
            dest: u32_at(8),
            byte_len: u64::from_le_bytes(b[12..20].try_into().unwrap()),
        }
    }
}

pub fn write_frame(w: &mut impl Write, header: FrameHeader, payload: &[f64]) -> std::io::Result<()> {
    w.write_all(&header.encode())?;
    for v in payload {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()
}

pub fn read_frame(r: &mut impl Read) -> std::io::Result<(FrameHeader, Vec<f64>)> {
    let mut hb = [0u8; FrameHeader::LEN];
    r.read_exact(&mut hb)?;
    let header = FrameHeader::decode(&hb);
    if !header.byte_len.is_multiple_of(8) {
        return Err(std::io::Error::new(std::io::ErrorKind::InvalidData, "payload is not a whole number of f64"));
    }
    let mut bytes = vec![0u8; header.byte_len as usize];
    r.read_exact(&mut bytes)?;
    let payload = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    Ok((header, payload))
}

fn handshake_out(s: &mut TcpStream, rank: usize) -> std::io::Result<()> {
    s.write_all(&WIRE_MAGIC)?;
    s.write_all(&WIRE_VERSION.to_le_bytes())?;
    s.write_all(&(rank as u32).to_le_bytes())?;
    s.flush()
}

fn handshake_in(s: &mut TcpStream) -> std::io::Result<usize> {
    let mut b = [0u8; 12];
    s.read_exact(&mut b)?;
    if b[0..4] != WIRE_MAGIC {
        return Err(std::io::Error::new(std::io::ErrorKind::InvalidData, "bad magic"));
    }
    let version = u32::from_le_bytes(b[4..8].try_into().unwrap());
    if version != WIRE_VERSION {
        return Err(std::io::Error::new(
            std::io::ErrorKind::InvalidData,
            format!("wire version {version}, expected {WIRE_VERSION}"),
        ));
    }
    Ok(u32::from_le_bytes(b[8..12].try_into().unwrap()) as usize)
}

/// One rank of a fully connected TCP mesh. Virtual arrival times are not
/// modelled: a message is available when it is read.
pub struct TcpEndpoint {
    rank: usize,
    writers: Vec<Option<Arc<Mutex<BufWriter<TcpStream>>>>>,
    inbox: Inbox,
}

impl TcpEndpoint {
    /// Rank `rank` listens on `addrs[rank]`, accepts lower ranks and dials
    /// higher ones.
    pub fn connect(rank: usize, addrs: &[SocketAddr], timeout: Duration) -> Result<Self> {
        let listener = TcpListener::bind(addrs[rank])?;
        Self::connect_with(rank, listener, addrs, timeout)
    }

    pub fn connect_with(rank: usize, listener: TcpListener, addrs: &[SocketAddr], timeout: Duration) -> Result<Self> {
        let n = addrs.len();
        let mut streams: Vec<Option<TcpStream>> = (0..n).map(|_| None).collect();
        for peer in rank + 1..n {
            let deadline = std::time::Instant::now() + timeout;
            let mut s = loop {
                match TcpStream::connect(addrs[peer]) {
                    Ok(s) => break s,
                    Err(e) if std::time::Instant::now() < deadline => {
                        let _ = e;
                        thread::sleep(Duration::from_millis(20));
                    }
                    Err(e) => return Err(e.into()),
                }
            };
            handshake_out(&mut s, rank)?;
            streams[peer] = Some(s);
        }
        for _ in 0..rank {
            let (mut s, _) = listener.accept()?;
            let peer = handshake_in(&mut s)?;
            if peer >= rank {
                return Err(Error::Transport {
                    tag: 0,
                    message: format!("unexpected peer {peer} during handshake"),
                });
            }
            streams[peer] = Some(s);
        }
        let (tx, rx) = unbounded();
        let mut writers = Vec::with_capacity(n);
        for (peer, s) in streams.into_iter().enumerate() {
            match s {
                Some(s) => {
                    s.set_nodelay(true)?;
                    let reader = s.try_clone()?;
                    let tx = tx.clone();
                    thread::spawn(move || {
                        let mut r = BufReader::new(reader);
                        while let Ok((h, payload)) = read_frame(&mut r) {
                            let env = Envelope {
                                source: h.source as usize,
                                dest: h.dest as usize,
                                tag: h.tag,
                                payload,
                                arrival: 0.0,
                            };
                            if tx.send(env).is_err() {
                                break;
                            }
                        }
                        let _ = peer;
                    });
                    writers.push(Some(Arc::new(Mutex::new(BufWriter::new(s)))));
                }
                None => writers.push(None),
            }
        }
        Ok(Self {
            rank,
            writers,
            inbox: Inbox {
                rx,
                pending: HashMap::new(),
                timeout,
            },
        })
    }
}

impl Transport for TcpEndpoint {
    fn rank(&self) -> usize {
        self.rank
    }

    fn size(&self) -> usize {
        self.writers.len()
    }

    fn send(&mut self, dest: usize, tag: u32, payload: Vec<f64>, _now: f64) -> Result<f64> {
        let w = self
            .writers
            .get(dest)
            .and_then(|w| w.as_ref())
            .ok_or_else(|| Error::Transport {
                tag,
                message: format!("no connection to rank {dest}"),
            })?;
        let header = FrameHeader {
            tag,
            source: self.rank as u32,
            dest: dest as u32,
            byte_len: (payload.len() * 8) as u64,
        };
        let mut guard = w.lock().expect("writer lock");
        write_frame(&mut *guard, header, &payload).map_err(|e| Error::Transport {
            tag,
            message: e.to_string(),
        })?;
        Ok(0.0)
    }

    fn recv(&mut self, source: usize, tag: u32) -> Result<Envelope> {
        let mut env = self.inbox.recv(source, tag)?;
        env.arrival = 0.0;
        Ok(env)
    }
}

const COLLECTIVE_ID: u32 = 0xF_FFFF;

/// Rank-ordered collectives built on point-to-point messages. Every rank
/// must call them in the same sequence.
pub struct Collectives {
    seq: u64,
}

impl Default for Collectives {
    fn default() -> Self {
        Self::new()
    }
}

impl Collectives {
    pub fn new() -> Self {
        Self { seq: 0 }
    }

    fn tag(&mut self, k: u32) -> u32 {
        self.seq += 1;
        crate::exchange::plan::message_tag(self.seq, COLLECTIVE_ID - k)
    }

    /// Gather every rank's vector on rank 0 (in rank order), combine there
    /// and broadcast the result. Returns (result, virtual completion time).
    pub fn allreduce(
        &mut self,
        t: &mut dyn Transport,
        local: Vec<f64>,
        now: f64,
        combine: impl Fn(&[Vec<f64>]) -> Vec<f64>,
    ) -> Result<(Vec<f64>, f64)> {
        let up = self.tag(0);
        let down = self.tag(1);
        let n = t.size();
        if n == 1 {
            return Ok((combine(&[local]), now));
        }
        if t.rank() == 0 {
            let mut all = vec![local];
            let mut ready = now;
            for r in 1..n {
                let env = t.recv(r, up)?;
                ready = ready.max(env.arrival);
                all.push(env.payload);
            }
            let result = combine(&all);
            let mut clock = ready;
            for r in 1..n {
                clock += t.send(r, down, result.clone(), clock)?;
            }
            Ok((result, clock))
        } else {
            let cost = t.send(0, up, local, now)?;
            let env = t.recv(0, down)?;
            Ok((env.payload, env.arrival.max(now + cost)))
        }
    }

    pub fn max(&mut self, t: &mut dyn Transport, v: f64, now: f64) -> Result<(f64, f64)> {
        let (r, at) = self.allreduce(t, vec![v], now, |all| {
            vec![all.iter().map(|x| x[0]).fold(f64::NEG_INFINITY, f64::max)]
        })?;
        Ok((r[0], at))
    }

    /// Element-wise sum, accumulated in rank order.
    pub fn sum(&mut self, t: &mut dyn Transport, v: Vec<f64>, now: f64) -> Result<(Vec<f64>, f64)> {
        self.allreduce(t, v, now, |all| {
            let mut acc = vec![0.0; all[0].len()];
            for x in all {
                for (a, b) in acc.iter_mut().zip(x) {
                    *a += b;
                }
            }
            acc
        })
    }

    /// Every rank's vector, in rank order, on every rank.
    pub fn all_gather(&mut self, t: &mut dyn Transport, v: Vec<f64>, now: f64) -> Result<(Vec<Vec<f64>>, f64)> {
        let n = t.size();
        let (flat, at) = self.allreduce(t, v, now, |all| {
            let mut out = Vec::new();
            for x in all {
                out.push(x.len() as f64);
                out.extend_from_slice(x);
            }
            out
        })?;
        let mut parts = Vec::with_capacity(n);
        let mut i = 0;
        while i < flat.len() {
            let len = flat[i] as usize;
            parts.push(flat[i + 1..i + 1 + len].to_vec());
            i += 1 + len;
        }
        Ok((parts, at))
    }
}
