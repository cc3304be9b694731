//! Modelled timelines: operations with durations on serial resources,
//! ordered by dependencies, scheduled as early as possible.
//!
//! Each resource runs its operations in the order they were added. An
//! operation starts once its resource is free and every dependency has
//! finished (plus the edge's lag). Adding dependencies can only delay
//! operations, which is why an overlapped schedule never takes longer than
//! the serialized one built from the same operations.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    Compute,
    Kernel,
    H2d,
    D2h,
    Send,
    Wire,
    Unpack,
    Wait,
    Reconcile,
    Idle,
}

impl Phase {
    pub fn is_comm(self) -> bool {
        matches!(self, Phase::H2d | Phase::D2h | Phase::Send | Phase::Wire | Phase::Unpack | Phase::Wait | Phase::Reconcile)
    }

    pub fn is_compute(self) -> bool {
        matches!(self, Phase::Compute | Phase::Kernel)
    }

    pub fn name(self) -> &'static str {
        match self {
            Phase::Compute => "compute",
            Phase::Kernel => "kernel",
            Phase::H2d => "h2d",
            Phase::D2h => "d2h",
            Phase::Send => "send",
            Phase::Wire => "wire",
            Phase::Unpack => "unpack",
            Phase::Wait => "wait",
            Phase::Reconcile => "reconcile",
            Phase::Idle => "idle",
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Resource {
    pub name: String,
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Op {
    pub resource: usize,
    pub duration: f64,
    pub phase: Phase,
    /// (operation, lag): start no earlier than the operation's end plus lag.
    pub deps: Vec<(usize, f64)>,
    /// Record time spent waiting on dependencies as this phase.
    pub wait_as: Option<Phase>,
}

/// Operations in insertion order; see the module notes.
#[derive(Debug, Clone, Default)]
pub struct OpGraph {
    pub resources: Vec<Resource>,
    pub ops: Vec<Op>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub start: f64,
    pub end: f64,
    pub resource: usize,
    pub phase: Phase,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Timeline {
    pub resources: Vec<Resource>,
    pub intervals: Vec<Interval>,
    /// End time of every operation, by operation index.
    pub op_end: Vec<f64>,
    pub makespan: f64,
}

impl OpGraph {
    pub fn resource(&mut self, name: impl Into<String>, rank: usize) -> usize {
        self.resources.push(Resource { name: name.into(), rank });
        self.resources.len() - 1
    }

    pub fn add(&mut self, resource: usize, phase: Phase, duration: f64, deps: Vec<(usize, f64)>) -> usize {
        self.ops.push(Op {
            resource,
            duration: duration.max(0.0),
            phase,
            deps,
            wait_as: None,
        });
        self.ops.len() - 1
    }

    pub fn add_waiting(&mut self, resource: usize, phase: Phase, duration: f64, deps: Vec<(usize, f64)>) -> usize {
        let id = self.add(resource, phase, duration, deps);
        self.ops[id].wait_as = Some(Phase::Wait);
        id
    }

    /// Earliest-start schedule.
    pub fn schedule(&self) -> Timeline {
        let mut free = vec![0.0f64; self.resources.len()];
        let mut end = vec![0.0f64; self.ops.len()];
        let mut intervals = Vec::with_capacity(self.ops.len());
        for (i, op) in self.ops.iter().enumerate() {
            let ready = op
                .deps
                .iter()
                .map(|&(d, lag)| {
                    assert!(d < i, "dependency on a later operation");
                    end[d] + lag
                })
                .fold(0.0, f64::max);
            let r = op.resource;
            let start = ready.max(free[r]);
            if let Some(w) = op.wait_as {
                if ready > free[r] {
                    intervals.push(Interval { start: free[r], end: ready, resource: r, phase: w });
                }
            }
            end[i] = start + op.duration;
            if op.duration > 0.0 {
                intervals.push(Interval { start, end: end[i], resource: r, phase: op.phase });
            }
            free[r] = end[i];
        }
        let makespan = end.iter().cloned().fold(0.0, f64::max);
        Timeline {
            resources: self.resources.clone(),
            intervals,
            op_end: end,
            makespan,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResourceBreakdown {
    pub name: String,
    pub rank: usize,
    /// Seconds per phase, idle included; sums to the makespan.
    pub phases: Vec<(Phase, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimelineReport {
    pub makespan: f64,
    pub resources: Vec<ResourceBreakdown>,
    pub comm_time: f64,
    /// Communication time during which the same rank was computing.
    pub hidden_comm_time: f64,
    pub hidden_fraction: f64,
}

/// Total length of the union of intervals.
fn union_length(mut v: Vec<(f64, f64)>) -> f64 {
    v.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut total = 0.0;
    let mut cur: Option<(f64, f64)> = None;
    for (s, e) in v {
        match cur {
            Some((cs, ce)) if s <= ce => cur = Some((cs, ce.max(e))),
            Some((cs, ce)) => {
                total += ce - cs;
                cur = Some((s, e));
            }
            None => cur = Some((s, e)),
        }
    }
    if let Some((cs, ce)) = cur {
        total += ce - cs;
    }
    total
}

impl Timeline {
    /// Busy intervals plus idle gaps for every resource, in time order.
    pub fn with_idle(&self) -> Vec<Interval> {
        let mut out = Vec::new();
        for r in 0..self.resources.len() {
            let mut mine: Vec<Interval> = self.intervals.iter().filter(|i| i.resource == r).copied().collect();
            mine.sort_by(|a, b| a.start.total_cmp(&b.start));
            let mut t = 0.0;
            for i in mine {
                if i.start > t {
                    out.push(Interval { start: t, end: i.start, resource: r, phase: Phase::Idle });
                }
                t = t.max(i.end);
                out.push(i);
            }
            if self.makespan > t {
                out.push(Interval { start: t, end: self.makespan, resource: r, phase: Phase::Idle });
            }
        }
        out
    }

    pub fn report(&self) -> TimelineReport {
        let all = self.with_idle();
        let resources = self
            .resources
            .iter()
            .enumerate()
            .map(|(r, res)| {
                let mut phases: Vec<(Phase, f64)> = Vec::new();
                for i in all.iter().filter(|i| i.resource == r) {
                    match phases.iter_mut().find(|(p, _)| *p == i.phase) {
                        Some((_, t)) => *t += i.end - i.start,
                        None => phases.push((i.phase, i.end - i.start)),
                    }
                }
                phases.sort_by_key(|(p, _)| *p);
                ResourceBreakdown {
                    name: res.name.clone(),
                    rank: res.rank,
                    phases,
                }
            })
            .collect();
        let mut comm = 0.0;
        let mut hidden = 0.0;
        let ranks: std::collections::BTreeSet<usize> = self.resources.iter().map(|r| r.rank).collect();
        for rank in ranks {
            let of_rank = |i: &&Interval| self.resources[i.resource].rank == rank;
            let compute: Vec<(f64, f64)> = self
                .intervals
                .iter()
                .filter(of_rank)
                .filter(|i| i.phase.is_compute())
                .map(|i| (i.start, i.end))
                .collect();
            for c in self.intervals.iter().filter(of_rank).filter(|i| i.phase.is_comm()) {
                comm += c.end - c.start;
                let clipped: Vec<(f64, f64)> = compute
                    .iter()
                    .map(|&(s, e)| (s.max(c.start), e.min(c.end)))
                    .filter(|(s, e)| e > s)
                    .collect();
                hidden += union_length(clipped);
            }
        }
        TimelineReport {
            makespan: self.makespan,
            resources,
            comm_time: comm,
            hidden_comm_time: hidden,
            hidden_fraction: if comm > 0.0 { hidden / comm } else { 0.0 },
        }
    }

    /// Columns: start, end, device, phase.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
        w.write_record(["start", "end", "device", "phase"]).map_err(csv_err)?;
        for i in self.with_idle() {
            w.write_record([
                format!("{:.9e}", i.start),
                format!("{:.9e}", i.end),
                self.resources[i.resource].name.clone(),
                i.phase.name().to_string(),
            ])
            .map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Parse(e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn serial_resource_and_dependencies() {
        let mut g = OpGraph::default();
        let a = g.resource("cpu", 0);
        let b = g.resource("link", 0);
        let x = g.add(b, Phase::H2d, 2.0, vec![]);
        let y = g.add(a, Phase::Compute, 1.0, vec![]);
        let z = g.add(a, Phase::Compute, 1.0, vec![(x, 0.5)]);
        let t = g.schedule();
        assert_eq!(t.op_end[y], 1.0);
        assert_eq!(t.op_end[z], 3.5);
        assert_eq!(t.makespan, 3.5);
    }

    #[test]
    fn covered_transfer_is_fully_hidden() {
        let mut g = OpGraph::default();
        let cpu = g.resource("r0.cpu0", 0);
        let link = g.resource("r0.cop0.link", 0);
        g.add(link, Phase::H2d, 1.0, vec![]);
        g.add(cpu, Phase::Compute, 3.0, vec![]);
        let r = g.schedule().report();
        assert_eq!(r.comm_time, 1.0);
        assert_eq!(r.hidden_fraction, 1.0);
    }

    #[test]
    fn serial_chain_hides_nothing() {
        let mut g = OpGraph::default();
        let cpu = g.resource("r0.cpu0", 0);
        let link = g.resource("r0.cop0.link", 0);
        let h = g.add(link, Phase::H2d, 1.0, vec![]);
        let c = g.add(cpu, Phase::Compute, 3.0, vec![(h, 0.0)]);
        g.add(link, Phase::D2h, 1.0, vec![(c, 0.0)]);
        let t = g.schedule();
        let r = t.report();
        assert_eq!(r.hidden_fraction, 0.0);
        assert_eq!(r.makespan, 5.0);
        // every resource accounts for the whole makespan
        for res in &r.resources {
            let sum: f64 = res.phases.iter().map(|(_, s)| s).sum();
            assert!((sum - t.makespan).abs() < 1e-12);
        }
    }

    #[test]
    fn waits_are_recorded() {
        let mut g = OpGraph::default();
        let a = g.resource("a", 0);
        let b = g.resource("b", 1);
        let w = g.add(b, Phase::Wire, 2.0, vec![]);
        g.add_waiting(a, Phase::Compute, 1.0, vec![(w, 0.0)]);
        let t = g.schedule();
        assert!(t.intervals.iter().any(|i| i.phase == Phase::Wait && i.end == 2.0));
    }
}
