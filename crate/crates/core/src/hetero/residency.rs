//! Which data generations live where.
//!
//! Every slice has a current generation, bumped by whichever side writes it.
//! A side may only read a slice it holds at the current generation; moving a
//! slice costs a transfer unless it is already resident.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SliceKind {
    /// Cell coordinates and spacing; written once.
    Geometry,
    /// Cells no neighbor reads.
    Core,
    /// The outer layers of the interior that neighbors read.
    Shell,
    /// Halo cells filled from other blocks.
    Halo,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SliceId {
    pub block: u32,
    pub kind: SliceKind,
    pub component: u8,
}

impl fmt::Display for SliceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "block {} {:?}[{}]", self.block, self.kind, self.component)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransferStats {
    pub hits: usize,
    pub to_device: usize,
    pub to_host: usize,
    pub bytes_to_device: usize,
    pub bytes_to_host: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
struct Gens {
    current: u64,
    host: u64,
    device: u64,
}

/// Residency of one device's slices.
#[derive(Debug, Clone, Default)]
pub struct ResidencyCache {
    device: String,
    slices: BTreeMap<SliceId, Gens>,
    pub stats: TransferStats,
}

impl ResidencyCache {
    pub fn new(device: impl Into<String>) -> Self {
        Self {
            device: device.into(),
            ..Self::default()
        }
    }

    fn gens(&mut self, s: SliceId) -> &mut Gens {
        self.slices.entry(s).or_default()
    }

    fn stale(&self, s: SliceId, side: &str) -> Error {
        Error::StaleRead {
            device: format!("{} ({side})", self.device),
            slice: s.to_string(),
        }
    }

    /// The host produced a new generation of `s`.
    pub fn host_write(&mut self, s: SliceId) {
        let g = self.gens(s);
        g.current += 1;
        g.host = g.current;
    }

    /// A kernel produced a new generation of `s` on the device.
    pub fn device_write(&mut self, s: SliceId) {
        let g = self.gens(s);
        g.current += 1;
        g.device = g.current;
    }

    /// Make `s` current on the device; returns the bytes moved.
    pub fn to_device(&mut self, s: SliceId, bytes: usize) -> Result<usize> {
        let g = *self.gens(s);
        if g.device == g.current {
            self.stats.hits += 1;
            return Ok(0);
        }
        if g.host != g.current {
            return Err(self.stale(s, "host copy"));
        }
        self.gens(s).device = g.current;
        self.stats.to_device += 1;
        self.stats.bytes_to_device += bytes;
        Ok(bytes)
    }

    /// Make `s` current on the host; returns the bytes moved.
    pub fn to_host(&mut self, s: SliceId, bytes: usize) -> Result<usize> {
        let g = *self.gens(s);
        if g.host == g.current {
            self.stats.hits += 1;
            return Ok(0);
        }
        if g.device != g.current {
            return Err(self.stale(s, "device copy"));
        }
        self.gens(s).host = g.current;
        self.stats.to_host += 1;
        self.stats.bytes_to_host += bytes;
        Ok(bytes)
    }

    pub fn check_device(&self, s: SliceId) -> Result<()> {
        match self.slices.get(&s) {
            Some(g) if g.device == g.current && g.current > 0 => Ok(()),
            _ => Err(self.stale(s, "device read")),
        }
    }

    pub fn check_host(&self, s: SliceId) -> Result<()> {
        match self.slices.get(&s) {
            Some(g) if g.host == g.current => Ok(()),
            None => Ok(()),
            _ => Err(self.stale(s, "host read")),
        }
    }
}

/// Recompute derived data on the device when that is cheaper than moving it.
pub fn prefer_recompute(recompute_seconds: f64, transfer_seconds: f64) -> bool {
    recompute_seconds < transfer_seconds
}

/// Persistent device allocations, made once during warm-up.
#[derive(Debug, Clone, Default)]
pub struct DeviceMemory {
    pub device: String,
    pub capacity: Option<usize>,
    pub used: usize,
    pub allocations: usize,
}

impl DeviceMemory {
    pub fn new(device: impl Into<String>, capacity: Option<usize>) -> Self {
        Self {
            device: device.into(),
            capacity,
            ..Self::default()
        }
    }

    pub fn allocate(&mut self, bytes: usize) -> Result<()> {
        if let Some(cap) = self.capacity {
            if self.used + bytes > cap {
                return Err(Error::DeviceBudget {
                    device: self.device.clone(),
                    required: self.used + bytes,
                    available: cap,
                });
            }
        }
        self.used += bytes;
        self.allocations += 1;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn slice(kind: SliceKind) -> SliceId {
        SliceId { block: 3, kind, component: 0 }
    }

    #[test]
    fn unchanged_slices_are_not_moved_twice() {
        let mut c = ResidencyCache::new("cop0");
        let g = slice(SliceKind::Geometry);
        c.host_write(g);
        assert_eq!(c.to_device(g, 1000).unwrap(), 1000);
        for _ in 0..3 {
            assert_eq!(c.to_device(g, 1000).unwrap(), 0);
        }
        assert_eq!(c.stats.hits, 3);
        assert_eq!(c.stats.bytes_to_device, 1000);
    }

    #[test]
    fn stale_reads_are_caught() {
        let mut c = ResidencyCache::new("cop0");
        let h = slice(SliceKind::Halo);
        c.host_write(h);
        assert!(c.check_device(h).is_err());
        c.to_device(h, 8).unwrap();
        c.check_device(h).unwrap();
        c.host_write(h);
        assert!(matches!(c.check_device(h), Err(Error::StaleRead { .. })));

        let s = slice(SliceKind::Shell);
        c.device_write(s);
        assert!(c.check_host(s).is_err());
        assert_eq!(c.to_host(s, 16).unwrap(), 16);
        c.check_host(s).unwrap();
        assert_eq!(c.to_host(s, 16).unwrap(), 0);
    }

    #[test]
    fn recompute_policy() {
        assert!(prefer_recompute(1e-6, 1e-5));
        assert!(!prefer_recompute(1e-4, 1e-5));
    }

    #[test]
    fn budget() {
        let mut m = DeviceMemory::new("cop1", Some(100));
        m.allocate(60).unwrap();
        let err = m.allocate(50).unwrap_err();
        assert!(matches!(err, Error::DeviceBudget { required: 110, available: 100, .. }));
    }
}
