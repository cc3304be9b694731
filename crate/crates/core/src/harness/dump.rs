//! Binary field dumps.
//!
//! Little-endian throughout: the magic `MBFD`, a `u32` version and a `u32`
//! block count, then for every block its `u32` id and `u32` extents
//! `nx, ny, nz` followed by the five conserved components, each a dense
//! x-fastest array of `f64`.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::gas::NVARS;
use crate::grid::BlockField;
use crate::partition::PartitionPlan;

pub const DUMP_MAGIC: [u8; 4] = *b"MBFD";
pub const DUMP_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct DumpBlock {
    pub id: u32,
    pub dims: [usize; 3],
    pub values: [Vec<f64>; NVARS],
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FieldDump {
    pub blocks: Vec<DumpBlock>,
}

impl FieldDump {
    /// One dump block per field, in id order.
    pub fn from_fields(fields: &BTreeMap<u32, BlockField>) -> Self {
        let blocks = fields
            .iter()
            .map(|(id, f)| DumpBlock {
                id: *id,
                dims: f.dims(),
                values: f.interior_values(),
            })
            .collect();
        Self { blocks }
    }

    /// The whole zone as a single block 0, whatever the partition. Dumps of
    /// one case under different plans compare byte for byte.
    pub fn merged(plan: &PartitionPlan, fields: &BTreeMap<u32, BlockField>) -> Result<Self> {
        let dims = plan.zone.cells;
        let n = dims.iter().product::<usize>();
        let mut values: [Vec<f64>; NVARS] = std::array::from_fn(|_| vec![0.0; n]);
        for b in &plan.blocks {
            let f = fields
                .get(&b.id)
                .ok_or_else(|| Error::Config(format!("no field for block {}", b.id)))?;
            for p in f.interior_box().iter() {
                let g: [usize; 3] = std::array::from_fn(|d| (p[d] + b.cells.lo[d]) as usize);
                let at = g[0] + dims[0] * (g[1] + dims[1] * g[2]);
                let q = f.state(p);
                for c in 0..NVARS {
                    values[c][at] = q[c];
                }
            }
        }
        Ok(Self {
            blocks: vec![DumpBlock { id: 0, dims, values }],
        })
    }

    pub fn write(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(&DUMP_MAGIC)?;
        w.write_all(&DUMP_VERSION.to_le_bytes())?;
        w.write_all(&(self.blocks.len() as u32).to_le_bytes())?;
        for b in &self.blocks {
            w.write_all(&b.id.to_le_bytes())?;
            for n in b.dims {
                w.write_all(&(n as u32).to_le_bytes())?;
            }
            for comp in &b.values {
                let mut buf = Vec::with_capacity(comp.len() * 8);
                for v in comp {
                    buf.extend_from_slice(&v.to_le_bytes());
                }
                w.write_all(&buf)?;
            }
        }
        Ok(())
    }

    pub fn read(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if magic != DUMP_MAGIC {
            return Err(Error::Parse(format!("not a field dump: magic {magic:?}")));
        }
        let version = read_u32(r)?;
        if version != DUMP_VERSION {
            return Err(Error::Parse(format!("field dump version {version} is not supported")));
        }
        let count = read_u32(r)?;
        let mut blocks = Vec::new();
        for _ in 0..count {
            let id = read_u32(r)?;
            let dims = [read_u32(r)? as usize, read_u32(r)? as usize, read_u32(r)? as usize];
            let n: usize = dims.iter().product();
            let mut values: [Vec<f64>; NVARS] = Default::default();
            for comp in values.iter_mut() {
                let mut buf = vec![0u8; n * 8];
                r.read_exact(&mut buf)?;
                *comp = buf
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                    .collect();
            }
            blocks.push(DumpBlock { id, dims, values });
        }
        Ok(Self { blocks })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write(&mut out).expect("writing to memory");
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read(&mut std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}
