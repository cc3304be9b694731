//! One halo-exchange epoch on one rank.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::clock::measure;
use crate::error::{Error, Result};
use crate::exchange::plan::{message_tag, HaloPlan, PairExchange};
use crate::exchange::singular::SingularValues;
use crate::exchange::transport::Transport;
use crate::gas::NVARS;
use crate::grid::BlockField;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExchangeMode {
    /// Each message is sent and received in a fixed global order, and the
    /// overlap hook runs after the exchange.
    Blocking,
    /// All sends are posted, the overlap hook runs, then receives complete.
    Nonblocking,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Packing {
    /// One message per block pair; singular values ride along.
    Coalesced,
    /// One message per halo region plus one per singular-value set.
    PerRegion,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExchangeOptions {
    pub mode: ExchangeMode,
    pub packing: Packing,
}

impl ExchangeOptions {
    pub fn tuned() -> Self {
        Self {
            mode: ExchangeMode::Nonblocking,
            packing: Packing::Coalesced,
        }
    }

    pub fn naive() -> Self {
        Self {
            mode: ExchangeMode::Blocking,
            packing: Packing::PerRegion,
        }
    }
}

/// Counters and virtual times (seconds) of exchange epochs.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epochs: usize,
    pub messages: usize,
    pub bytes: usize,
    pub local_copies: usize,
    pub pack_time: f64,
    pub wait_time: f64,
    pub unpack_time: f64,
    pub local_time: f64,
    /// Boundary-condition ghosts: self-wraps and fixed inflow states. Not
    /// counted as communication.
    pub boundary_time: f64,
    /// Time spent in the overlap hook.
    pub overlap_time: f64,
}

impl EpochStats {
    /// Time attributed to communication: packing, waiting and unpacking.
    pub fn comm_time(&self) -> f64 {
        self.pack_time + self.wait_time + self.unpack_time + self.local_time
    }

    pub fn add(&mut self, o: &EpochStats) {
        self.epochs += o.epochs;
        self.messages += o.messages;
        self.bytes += o.bytes;
        self.local_copies += o.local_copies;
        self.pack_time += o.pack_time;
        self.wait_time += o.wait_time;
        self.unpack_time += o.unpack_time;
        self.local_time += o.local_time;
        self.boundary_time += o.boundary_time;
        self.overlap_time += o.overlap_time;
    }
}

/// One outgoing or incoming message of an epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Msg {
    Pair(usize),
    Region(usize),
    Singular(usize),
}

fn missing_block(id: u32) -> Error {
    Error::HaloPlan(format!("block {id} is not held by this rank"))
}

/// Drives halo exchanges for the blocks of one rank.
pub struct HaloExchanger<'p> {
    plan: &'p HaloPlan,
    rank: usize,
    epoch: u64,
    /// Singular-point values after the latest epoch, keyed (point, block).
    pub singular: SingularValues,
}

impl<'p> HaloExchanger<'p> {
    pub fn new(plan: &'p HaloPlan, rank: usize) -> Self {
        Self {
            plan,
            rank,
            epoch: 0,
            singular: SingularValues::default(),
        }
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    /// Messages this rank takes part in, in global order.
    fn messages(&self, packing: Packing) -> Vec<Msg> {
        let plan = self.plan;
        let mine = |p: &PairExchange| p.src_rank == self.rank || p.dst_rank == self.rank;
        match packing {
            Packing::Coalesced => plan
                .pairs
                .iter()
                .enumerate()
                .filter(|(_, p)| !p.is_local() && mine(p))
                .map(|(i, _)| Msg::Pair(i))
                .collect(),
            Packing::PerRegion => {
                let mut out = Vec::new();
                for p in plan.pairs.iter().filter(|p| !p.is_local() && mine(p)) {
                    out.extend(p.regions.iter().map(|&r| Msg::Region(r)));
                }
                out.sort_unstable_by_key(|m| match m {
                    Msg::Region(r) => *r,
                    _ => 0,
                });
                out.extend(
                    plan.pairs
                        .iter()
                        .enumerate()
                        .filter(|(_, p)| !p.is_local() && mine(p) && !p.singular.is_empty())
                        .map(|(i, _)| Msg::Singular(i)),
                );
                out
            }
        }
    }

    fn ends(&self, m: Msg) -> (usize, usize, u32) {
        let plan = self.plan;
        match m {
            Msg::Pair(i) => (plan.pairs[i].src_rank, plan.pairs[i].dst_rank, plan.pairs[i].id),
            Msg::Singular(i) => (
                plan.pairs[i].src_rank,
                plan.pairs[i].dst_rank,
                (plan.regions.len() + i) as u32,
            ),
            Msg::Region(r) => {
                let reg = &plan.regions[r];
                let src = reg.source_box().expect("copy region").0;
                (plan.rank_of(src), plan.rank_of(reg.dst_block), r as u32)
            }
        }
    }

    fn pack(&self, m: Msg, fields: &BTreeMap<u32, BlockField>) -> Result<Vec<f64>> {
        let plan = self.plan;
        let mut out = Vec::new();
        match m {
            Msg::Pair(i) => {
                let p = &plan.pairs[i];
                let src = fields.get(&p.src_block).ok_or_else(|| missing_block(p.src_block))?;
                out.reserve(p.payload_len());
                for &r in &p.regions {
                    plan.regions[r].pack(src, &mut out);
                }
                self.pack_singular(p, &mut out)?;
            }
            Msg::Region(r) => {
                let (src_id, _) = plan.regions[r].source_box().expect("copy region");
                let src = fields.get(&src_id).ok_or_else(|| missing_block(src_id))?;
                plan.regions[r].pack(src, &mut out);
            }
            Msg::Singular(i) => self.pack_singular(&plan.pairs[i], &mut out)?,
        }
        Ok(out)
    }

    fn pack_singular(&self, p: &PairExchange, out: &mut Vec<f64>) -> Result<()> {
        for &k in &p.singular {
            let v = self.singular.values.get(&(k, p.src_block)).ok_or_else(|| {
                Error::HaloPlan(format!("singular point {k}: owner block {} has no value", p.src_block))
            })?;
            out.extend_from_slice(v);
        }
        Ok(())
    }

    fn expected_len(&self, m: Msg) -> usize {
        match m {
            Msg::Pair(i) => self.plan.pairs[i].payload_len(),
            Msg::Region(r) => self.plan.regions[r].cells() * NVARS,
            Msg::Singular(i) => self.plan.pairs[i].singular.len() * NVARS,
        }
    }

    fn unpack(
        &self,
        m: Msg,
        payload: &[f64],
        fields: &mut BTreeMap<u32, BlockField>,
        received: &mut BTreeMap<(usize, u32), [f64; NVARS]>,
    ) -> Result<()> {
        let plan = self.plan;
        match m {
            Msg::Pair(i) => {
                let p = &plan.pairs[i];
                let dst = fields.get_mut(&p.dst_block).ok_or_else(|| missing_block(p.dst_block))?;
                let mut at = 0;
                for &r in &p.regions {
                    at += plan.regions[r].unpack(dst, &payload[at..]);
                }
                take_singular(p, &payload[at..], received);
            }
            Msg::Region(r) => {
                let reg = &plan.regions[r];
                let dst = fields.get_mut(&reg.dst_block).ok_or_else(|| missing_block(reg.dst_block))?;
                reg.unpack(dst, payload);
            }
            Msg::Singular(i) => take_singular(&plan.pairs[i], payload, received),
        }
        Ok(())
    }

    /// Fill every halo cell of the rank's blocks. `now` is the rank's
    /// virtual clock; `overlap` runs interior-only work and returns its
    /// virtual duration. In nonblocking mode it runs while messages are in
    /// flight, in blocking mode after the exchange.
    pub fn exchange<F>(
        &mut self,
        fields: &mut BTreeMap<u32, BlockField>,
        transport: &mut dyn Transport,
        opts: ExchangeOptions,
        now: &mut f64,
        overlap: F,
    ) -> Result<EpochStats>
    where
        F: FnOnce(&BTreeMap<u32, BlockField>) -> Result<f64>,
    {
        self.epoch += 1;
        let plan = self.plan;
        let mut st = EpochStats {
            epochs: 1,
            ..EpochStats::default()
        };
        if !plan.singular.is_empty() {
            let (est, t) = measure(|| {
                SingularValues::estimate(&plan.singular, &plan.block_cells, fields.iter().map(|(k, v)| (*k, v)))
            });
            self.singular = est;
            st.pack_time += t;
            *now += t;
        }

        let msgs = self.messages(opts.packing);
        let mut received = BTreeMap::new();
        let send = |this: &Self, m: Msg, fields: &BTreeMap<u32, BlockField>, now: &mut f64, st: &mut EpochStats, transport: &mut dyn Transport| -> Result<()> {
            let (_, dst, id) = this.ends(m);
            let (payload, t) = measure(|| this.pack(m, fields));
            let payload = payload?;
            st.pack_time += t;
            *now += t;
            st.messages += 1;
            st.bytes += payload.len() * 8;
            let o = transport.send(dst, message_tag(this.epoch, id), payload, *now)?;
            st.pack_time += o;
            *now += o;
            Ok(())
        };
        let recv = |this: &Self,
                    m: Msg,
                    fields: &mut BTreeMap<u32, BlockField>,
                    now: &mut f64,
                    st: &mut EpochStats,
                    transport: &mut dyn Transport,
                    received: &mut BTreeMap<(usize, u32), [f64; NVARS]>|
         -> Result<()> {
            let (src, _, id) = this.ends(m);
            let tag = message_tag(this.epoch, id);
            let env = transport.recv(src, tag)?;
            if env.payload.len() != this.expected_len(m) {
                return Err(Error::Transport {
                    tag,
                    message: format!("payload of {} values, expected {}", env.payload.len(), this.expected_len(m)),
                });
            }
            if env.arrival > *now {
                st.wait_time += env.arrival - *now;
                *now = env.arrival;
            }
            let (r, t) = measure(|| this.unpack(m, &env.payload, fields, received));
            r?;
            st.unpack_time += t;
            *now += t;
            Ok(())
        };

        match opts.mode {
            ExchangeMode::Nonblocking => {
                for &m in &msgs {
                    if self.ends(m).0 == self.rank {
                        send(self, m, fields, now, &mut st, transport)?;
                    }
                }
                self.local(fields, &mut received, now, &mut st)?;
                let t = overlap(fields)?;
                st.overlap_time += t;
                *now += t;
                for &m in &msgs {
                    if self.ends(m).1 == self.rank {
                        recv(self, m, fields, now, &mut st, transport, &mut received)?;
                    }
                }
            }
            ExchangeMode::Blocking => {
                for &m in &msgs {
                    let (s, d, _) = self.ends(m);
                    if s == self.rank {
                        send(self, m, fields, now, &mut st, transport)?;
                    }
                    if d == self.rank {
                        recv(self, m, fields, now, &mut st, transport, &mut received)?;
                    }
                }
                self.local(fields, &mut received, now, &mut st)?;
                let t = overlap(fields)?;
                st.overlap_time += t;
                *now += t;
            }
        }
        self.settle_singular(fields, received)?;
        Ok(st)
    }

    /// Same-rank pairs and fixed-state regions.
    fn local(
        &self,
        fields: &mut BTreeMap<u32, BlockField>,
        received: &mut BTreeMap<(usize, u32), [f64; NVARS]>,
        now: &mut f64,
        st: &mut EpochStats,
    ) -> Result<()> {
        let plan = self.plan;
        let (r, t) = measure(|| -> Result<usize> {
            let mut n = 0;
            let mut buf = Vec::new();
            let local = plan
                .pairs
                .iter()
                .filter(|p| p.is_local() && p.dst_rank == self.rank && p.src_block != p.dst_block);
            for p in local {
                buf.clear();
                let src = fields.get(&p.src_block).ok_or_else(|| missing_block(p.src_block))?;
                for &r in &p.regions {
                    plan.regions[r].pack(src, &mut buf);
                }
                self.pack_singular(p, &mut buf)?;
                let dst = fields.get_mut(&p.dst_block).ok_or_else(|| missing_block(p.dst_block))?;
                let mut at = 0;
                for &r in &p.regions {
                    at += plan.regions[r].unpack(dst, &buf[at..]);
                }
                take_singular(p, &buf[at..], received);
                n += 1;
            }
            Ok(n)
        });
        st.local_copies += r?;
        st.local_time += t;
        *now += t;
        let (r, t) = measure(|| -> Result<()> {
            for p in plan.pairs.iter().filter(|p| p.dst_rank == self.rank && p.src_block == p.dst_block) {
                let f = fields.get_mut(&p.dst_block).ok_or_else(|| missing_block(p.dst_block))?;
                for &r in &p.regions {
                    plan.regions[r].apply_within(f);
                }
            }
            for &r in &plan.fixed {
                let reg = &plan.regions[r];
                if plan.rank_of(reg.dst_block) == self.rank {
                    let dst = fields.get_mut(&reg.dst_block).ok_or_else(|| missing_block(reg.dst_block))?;
                    reg.apply_within(dst);
                }
            }
            Ok(())
        });
        r?;
        st.boundary_time += t;
        *now += t;
        Ok(())
    }

    fn settle_singular(
        &mut self,
        fields: &BTreeMap<u32, BlockField>,
        received: BTreeMap<(usize, u32), [f64; NVARS]>,
    ) -> Result<()> {
        let held: BTreeSet<u32> = fields.keys().copied().collect();
        for (k, p) in self.plan.singular.iter().enumerate() {
            for &s in p.sharers.iter().filter(|&&s| s != p.owner && held.contains(&s)) {
                let v = received.get(&(k, s)).ok_or_else(|| {
                    Error::HaloPlan(format!(
                        "singular point {:?}: no value from owner block {} for block {s}",
                        p.vertex, p.owner
                    ))
                })?;
                self.singular.values.insert((k, s), *v);
            }
        }
        Ok(())
    }
}

fn take_singular(p: &PairExchange, values: &[f64], received: &mut BTreeMap<(usize, u32), [f64; NVARS]>) {
    for (j, &k) in p.singular.iter().enumerate() {
        let v: [f64; NVARS] = values[j * NVARS..(j + 1) * NVARS].try_into().expect("singular section");
        received.insert((k, p.dst_block), v);
    }
}

/// Communication metrics over a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CommStats {
    pub epochs: usize,
    pub messages: usize,
    pub bytes: usize,
    pub comm_time: f64,
    pub comp_time: f64,
    /// Computation over communication; `None` when no time went to
    /// communication.
    pub ratio: Option<f64>,
}

impl CommStats {
    pub fn comm_per_epoch(&self) -> f64 {
        if self.epochs == 0 {
            0.0
        } else {
            self.comm_time / self.epochs as f64
        }
    }
}

pub fn comm_stats(exchange: &EpochStats, comp_time: f64) -> CommStats {
    let comm = exchange.comm_time();
    CommStats {
        epochs: exchange.epochs,
        messages: exchange.messages,
        bytes: exchange.bytes,
        comm_time: comm,
        comp_time,
        ratio: (comm > 0.0).then(|| comp_time / comm),
    }
}
