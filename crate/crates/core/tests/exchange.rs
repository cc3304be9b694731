use std::collections::BTreeMap;
use std::time::Duration;

use mbflow::exchange::{
    build_halo_plan, in_process_network, ExchangeMode, ExchangeOptions, HaloExchanger, HaloPlan, LinkModel, Packing,
    RegionSource,
};
use mbflow::gas::{GasModel, PrimitiveState, NVARS};
use mbflow::grid::{BlockField, IndexBox};
use mbflow::partition::{
    regroup_blocks, round_robin_blocks, split_zone, AxisSource, Boundary, Faces, NodeTopology, PartitionPlan,
    SplitTarget, ZoneSpec,
};
use proptest::prelude::*;

/// Deterministic, non-symmetric interior values at zone cell `g`.
fn value(g: [i64; 3], c: usize) -> f64 {
    1.0 + (c as f64) * 0.5 + 0.013 * g[0] as f64 + 0.0071 * (g[1] * g[1]) as f64 + 0.0037 * (g[2] * (g[0] + 3)) as f64
}

fn init_fields(plan: &PartitionPlan, rank: usize) -> BTreeMap<u32, BlockField> {
    plan.blocks_of_rank(rank)
        .into_iter()
        .map(|id| {
            let b = &plan.blocks[id as usize];
            let mut f = BlockField::new(id, b.cells.dims(), plan.halo);
            f.fill([f64::NAN; NVARS]);
            for p in f.interior_box().iter() {
                let g = [p[0] + b.cells.lo[0], p[1] + b.cells.lo[1], p[2] + b.cells.lo[2]];
                f.set_state(p, std::array::from_fn(|c| value(g, c)));
            }
            (id, f)
        })
        .collect()
}

/// Run one exchange epoch on every rank; returns all blocks.
fn exchange_all(plan: &PartitionPlan, hp: &HaloPlan, opts: ExchangeOptions) -> BTreeMap<u32, BlockField> {
    let eps = in_process_network(plan.ranks, LinkModel::default(), plan.rank_nodes.clone(), Duration::from_secs(20));
    std::thread::scope(|s| {
        let handles: Vec<_> = eps
            .into_iter()
            .enumerate()
            .map(|(rank, mut ep)| {
                s.spawn(move || {
                    let mut fields = init_fields(plan, rank);
                    let mut ex = HaloExchanger::new(hp, rank);
                    let mut now = 0.0;
                    ex.exchange(&mut fields, &mut ep, opts, &mut now, |_| Ok(0.0)).unwrap();
                    (fields, ex.singular)
                })
            })
            .collect();
        let mut all = BTreeMap::new();
        for h in handles {
            let (f, _) = h.join().unwrap();
            all.extend(f);
        }
        all
    })
}

/// Expected value of any halo cell: the global ghost mapping applied to the
/// analytic interior.
fn expected(zone: &ZoneSpec, gas: &GasModel, g: [i64; 3]) -> [f64; NVARS] {
    if let Some(w) = (0..3)
        .any(|d| zone.axis_source(d, g[d]) == AxisSource::Inflow)
        .then(|| zone.inflow_state(g).unwrap())
    {
        return mbflow::gas::conserved_from_primitive(&w, gas).unwrap().to_array();
    }
    let mut src = [0; 3];
    let mut flip = [false; 3];
    for d in 0..3 {
        match zone.axis_source(d, g[d]) {
            AxisSource::Cell { src: s, flip: f } => {
                src[d] = s;
                flip[d] = f;
            }
            AxisSource::Inflow => unreachable!(),
        }
    }
    std::array::from_fn(|c| {
        let v = value(src, c);
        if (1..=3).contains(&c) && flip[c - 1] {
            -v
        } else {
            v
        }
    })
}

fn check_halos(plan: &PartitionPlan, gas: &GasModel, fields: &BTreeMap<u32, BlockField>) {
    for (id, f) in fields {
        let lo = plan.blocks[*id as usize].cells.lo;
        for p in f.padded_box().iter() {
            let g = [p[0] + lo[0], p[1] + lo[1], p[2] + lo[2]];
            assert_eq!(f.state(p), expected(&plan.zone, gas, g), "block {id} cell {p:?}");
        }
    }
}

fn boundary(kind: u8) -> Boundary {
    match kind {
        0 => Boundary::Extrapolation,
        1 => Boundary::SlipWall,
        _ => Boundary::SupersonicInflow { rho: 1.0, u: 2.0, v: 0.1, w: 0.0, p: 0.7 },
    }
}

fn zone_with(cells: [usize; 3], periodic: [bool; 3], kinds: [u8; 6]) -> ZoneSpec {
    let mut faces = Faces::all(Boundary::Periodic);
    for d in 0..3 {
        if !periodic[d] {
            faces.set(d, false, boundary(kinds[2 * d]));
            faces.set(d, true, boundary(kinds[2 * d + 1]));
        }
    }
    ZoneSpec {
        cells,
        origin: [0.0; 3],
        length: [1.0; 3],
        faces,
    }
}

#[test]
fn eight_blocks_match_one_block_after_exchange() {
    let gas = GasModel::default();
    let zone = ZoneSpec::periodic_cube(16, 1.0);
    let one = regroup_blocks(&zone, &split_zone(&zone, SplitTarget::Blocks(1)).unwrap(), 1, &NodeTopology::homogeneous(1, 1), 1.0).unwrap();
    let eight = regroup_blocks(&zone, &split_zone(&zone, SplitTarget::Blocks(8)).unwrap(), 8, &NodeTopology::homogeneous(1, 8), 1.0).unwrap();
    let single = exchange_all(&one, &build_halo_plan(&one, &gas).unwrap(), ExchangeOptions::tuned());
    let multi = exchange_all(&eight, &build_halo_plan(&eight, &gas).unwrap(), ExchangeOptions::tuned());
    let s = &single[&0];
    for (id, f) in &multi {
        let lo = eight.blocks[*id as usize].cells.lo;
        for p in f.padded_box().iter() {
            let g: [i64; 3] = std::array::from_fn(|d| (p[d] + lo[d]).rem_euclid(16));
            assert_eq!(f.state(p), s.state(g));
        }
    }
    check_halos(&eight, &gas, &multi);
}

#[test]
fn all_exchange_modes_agree_bitwise() {
    let gas = GasModel::default();
    let zone = zone_with([24, 20, 12], [true, false, false], [0, 0, 1, 2, 0, 1]);
    let dec = split_zone(&zone, SplitTarget::Blocks(12)).unwrap();
    let plan = regroup_blocks(&zone, &dec, 4, &NodeTopology::homogeneous(2, 2), 1.0).unwrap();
    let hp = build_halo_plan(&plan, &gas).unwrap();
    let reference = exchange_all(&plan, &hp, ExchangeOptions::tuned());
    check_halos(&plan, &gas, &reference);
    for mode in [ExchangeMode::Blocking, ExchangeMode::Nonblocking] {
        for packing in [Packing::Coalesced, Packing::PerRegion] {
            let got = exchange_all(&plan, &hp, ExchangeOptions { mode, packing });
            for (id, f) in &got {
                let a: Vec<u64> = f.components().iter().flatten().map(|x| x.to_bits()).collect();
                let b: Vec<u64> = reference[id].components().iter().flatten().map(|x| x.to_bits()).collect();
                assert!(a == b, "{mode:?}/{packing:?} block {id}");
            }
        }
    }
}

#[test]
fn uniform_fields_have_seamless_halos() {
    let gas = GasModel::default();
    let zone = zone_with([16, 16, 16], [false; 3], [0, 0, 0, 0, 0, 0]);
    let dec = split_zone(&zone, SplitTarget::Blocks(8)).unwrap();
    let plan = round_robin_blocks(&zone, &dec, 3, &NodeTopology::homogeneous(1, 3)).unwrap();
    let hp = build_halo_plan(&plan, &gas).unwrap();
    let eps = in_process_network(3, LinkModel::ideal(), vec![0; 3], Duration::from_secs(20));
    let q = [1.0, 0.3, -0.2, 0.1, 2.5];
    std::thread::scope(|s| {
        for (rank, mut ep) in eps.into_iter().enumerate() {
            let (plan, hp) = (&plan, &hp);
            s.spawn(move || {
                let mut fields: BTreeMap<u32, BlockField> = plan
                    .blocks_of_rank(rank)
                    .into_iter()
                    .map(|id| {
                        let mut f = BlockField::new(id, plan.blocks[id as usize].cells.dims(), plan.halo);
                        f.fill([f64::NAN; NVARS]);
                        for p in f.interior_box().iter() {
                            f.set_state(p, q);
                        }
                        (id, f)
                    })
                    .collect();
                HaloExchanger::new(hp, rank)
                    .exchange(&mut fields, &mut ep, ExchangeOptions::naive(), &mut 0.0, |_| Ok(0.0))
                    .unwrap();
                for f in fields.values() {
                    for p in f.padded_box().iter() {
                        assert_eq!(f.state(p), q);
                    }
                }
            });
        }
    });
}

#[test]
fn coalesced_message_count_is_the_neighbor_pair_count() {
    let gas = GasModel::default();
    let zone = zone_with([16, 16, 16], [false; 3], [0; 6]);
    let dec = split_zone(&zone, SplitTarget::Blocks(8)).unwrap();
    let plan = regroup_blocks(&zone, &dec, 8, &NodeTopology::homogeneous(1, 8), 1.0).unwrap();
    let hp = build_halo_plan(&plan, &gas).unwrap();
    // 2x2x2 without wrap: every block touches the 7 others
    assert_eq!(hp.neighbor_pairs(), 28);
    assert_eq!(hp.remote_pairs().count(), 2 * hp.neighbor_pairs());
    assert!(hp.remote_regions().count() > hp.remote_pairs().count());
}

#[test]
fn singular_values_agree_after_exchange() {
    let gas = GasModel::default();
    let zone = ZoneSpec::periodic_cube(12, 1.0);
    let dec = split_zone(&zone, SplitTarget::Blocks(8)).unwrap();
    let plan = regroup_blocks(&zone, &dec, 4, &NodeTopology::homogeneous(1, 4), 1.0).unwrap();
    let hp = build_halo_plan(&plan, &gas).unwrap();
    assert!(!hp.singular.is_empty());
    for opts in [ExchangeOptions::tuned(), ExchangeOptions::naive()] {
        let eps = in_process_network(4, LinkModel::ideal(), vec![0; 4], Duration::from_secs(20));
        let results: Vec<_> = std::thread::scope(|s| {
            let hs: Vec<_> = eps
                .into_iter()
                .enumerate()
                .map(|(rank, mut ep)| {
                    let (plan, hp) = (&plan, &hp);
                    s.spawn(move || {
                        let mut fields = init_fields(plan, rank);
                        let mut ex = HaloExchanger::new(hp, rank);
                        ex.exchange(&mut fields, &mut ep, opts, &mut 0.0, |_| Ok(0.0)).unwrap();
                        ex.singular
                    })
                })
                .collect();
            hs.into_iter().map(|h| h.join().unwrap()).collect()
        });
        let mut merged = mbflow::exchange::SingularValues::default();
        for r in results {
            merged.values.extend(r.values);
        }
        assert!(merged.consistent(&hp.singular));
        // every sharer of every point holds a value
        for (k, p) in hp.singular.iter().enumerate() {
            for s in &p.sharers {
                assert!(merged.values.contains_key(&(k, *s)));
            }
        }
    }
}

#[test]
fn overlap_hook_runs_before_receives_in_nonblocking_mode() {
    let gas = GasModel::default();
    let zone = ZoneSpec::periodic_cube(16, 1.0);
    let dec = split_zone(&zone, SplitTarget::Blocks(2)).unwrap();
    let plan = regroup_blocks(&zone, &dec, 2, &NodeTopology::homogeneous(1, 2), 1.0).unwrap();
    let hp = build_halo_plan(&plan, &gas).unwrap();
    let eps = in_process_network(2, LinkModel::ideal(), vec![0; 2], Duration::from_secs(20));
    std::thread::scope(|s| {
        for (rank, mut ep) in eps.into_iter().enumerate() {
            let (plan, hp) = (&plan, &hp);
            s.spawn(move || {
                let mut fields = init_fields(plan, rank);
                let mut ex = HaloExchanger::new(hp, rank);
                let opts = ExchangeOptions::tuned();
                ex.exchange(&mut fields, &mut ep, opts, &mut 0.0, |f| {
                    // the neighbor's face has not arrived yet
                    let b = &f[&(rank as u32)];
                    let n = b.dims()[0] as i64;
                    assert!(b.state([n, 0, 0])[0].is_nan());
                    Ok(0.0)
                })
                .unwrap();
            });
        }
    });
}

#[test]
fn lost_messages_surface_as_transport_errors() {
    let gas = GasModel::default();
    let zone = ZoneSpec::periodic_cube(16, 1.0);
    let dec = split_zone(&zone, SplitTarget::Blocks(2)).unwrap();
    let plan = regroup_blocks(&zone, &dec, 2, &NodeTopology::homogeneous(1, 2), 1.0).unwrap();
    let hp = build_halo_plan(&plan, &gas).unwrap();
    let mut eps = in_process_network(2, LinkModel::ideal(), vec![0; 2], Duration::from_millis(100));
    // rank 1 never runs
    let mut fields = init_fields(&plan, 0);
    let err = HaloExchanger::new(&hp, 0)
        .exchange(&mut fields, &mut eps[0], ExchangeOptions::tuned(), &mut 0.0, |_| Ok(0.0))
        .unwrap_err();
    assert!(matches!(err, mbflow::Error::Transport { .. }), "{err}");
}

fn covered_once(plan: &PartitionPlan, hp: &HaloPlan) -> Result<(), TestCaseError> {
    for b in &plan.blocks {
        let padded = IndexBox::from_dims(b.cells.dims()).grow(plan.halo as i64);
        let interior = IndexBox::from_dims(b.cells.dims());
        let mut count = vec![0u8; padded.volume()];
        let dims = padded.dims().map(|d| d as i64);
        let slot = |p: [i64; 3]| {
            let q: [i64; 3] = std::array::from_fn(|d| p[d] - padded.lo[d]);
            (q[0] + dims[0] * (q[1] + dims[1] * q[2])) as usize
        };
        for r in hp.regions.iter().filter(|r| r.dst_block == b.id) {
            for p in r.dst.iter() {
                count[slot(p)] += 1;
            }
        }
        for p in padded.iter() {
            let want = u8::from(!interior.contains(p));
            prop_assert_eq!(count[slot(p)], want, "block {} cell {:?}", b.id, p);
        }
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn regions_mirror_their_sources(
        nx in 1usize..24, ny in 1usize..16, nz in 1usize..12,
        periodic in proptest::array::uniform3(any::<bool>()),
        kinds in proptest::array::uniform6(0u8..3),
        blocks in 1usize..12,
        ranks in 1usize..4,
    ) {
        let gas = GasModel::default();
        let zone = zone_with([nx, ny, nz], periodic, kinds);
        let Ok(dec) = split_zone(&zone, SplitTarget::Blocks(blocks)) else { return Ok(()) };
        let ranks = ranks.min(dec.block_count());
        let plan = regroup_blocks(&zone, &dec, ranks, &NodeTopology::homogeneous(1, ranks), 1.0).unwrap();
        let hp = build_halo_plan(&plan, &gas).unwrap();
        covered_once(&plan, &hp)?;
        for r in &hp.regions {
            let dst_lo = plan.blocks[r.dst_block as usize].cells.lo;
            match &r.source {
                RegionSource::Copy { src_block, start, step, flip } => {
                    let (_, sbox) = r.source_box().unwrap();
                    let src = &plan.blocks[*src_block as usize];
                    prop_assert!(IndexBox::from_dims(src.cells.dims()).intersect(&sbox) == sbox);
                    prop_assert_eq!(sbox.volume(), r.dst.volume().max(1) / (0..3).map(|d| if step[d] == 0 { r.dst.dims()[d] } else { 1 }).product::<usize>());
                    for p in r.dst.iter() {
                        let g: [i64; 3] = std::array::from_fn(|d| p[d] + dst_lo[d]);
                        for d in 0..3 {
                            let s = start[d] + step[d] * (p[d] - r.dst.lo[d]) + src.cells.lo[d];
                            prop_assert_eq!(zone.axis_source(d, g[d]), AxisSource::Cell { src: s, flip: flip[d] });
                        }
                    }
                }
                RegionSource::Fixed(q) => {
                    let g: [i64; 3] = std::array::from_fn(|d| r.dst.lo[d] + dst_lo[d]);
                    let w = zone.inflow_state(g).unwrap();
                    prop_assert_eq!(*q, mbflow::gas::conserved_from_primitive(&w, &gas).unwrap().to_array());
                }
            }
        }
        for p in &hp.pairs {
            let sum: usize = p.regions.iter().map(|&r| hp.regions[r].cells()).sum();
            prop_assert_eq!(sum, p.cells);
        }
    }

    #[test]
    fn pack_then_unpack_is_identity(seed in any::<u64>()) {
        let gas = GasModel::default();
        let zone = ZoneSpec::periodic_cube(10, 1.0);
        let dec = split_zone(&zone, SplitTarget::Blocks(4)).unwrap();
        let plan = regroup_blocks(&zone, &dec, 1, &NodeTopology::homogeneous(1, 1), 1.0).unwrap();
        let hp = build_halo_plan(&plan, &gas).unwrap();
        let mut rng = seed | 1;
        let mut next = move || { rng ^= rng << 13; rng ^= rng >> 7; rng ^= rng << 17; (rng % 1000) as f64 / 7.0 };
        for r in &hp.regions {
            let RegionSource::Copy { src_block, .. } = r.source else { continue };
            let dims = plan.blocks[src_block as usize].cells.dims();
            let mut src = BlockField::new(src_block, dims, plan.halo);
            for c in 0..NVARS {
                for v in src.component_mut(c) { *v = next(); }
            }
            let mut buf = Vec::new();
            r.pack(&src, &mut buf);
            prop_assert_eq!(buf.len(), r.cells() * NVARS);
            let dst_dims = plan.blocks[r.dst_block as usize].cells.dims();
            let mut dst = BlockField::new(r.dst_block, dst_dims, plan.halo);
            prop_assert_eq!(r.unpack(&mut dst, &buf), buf.len());
            prop_assert_eq!(read_back(r, &dst), buf);
        }
    }
}

/// A region's destination cells in pack order.
fn read_back(r: &mbflow::exchange::Region, dst: &BlockField) -> Vec<f64> {
    (0..NVARS).flat_map(|c| r.dst.iter().map(move |p| dst.state(p)[c])).collect()
}

#[test]
fn inflow_corner_prefers_x_face() {
    let mut zone = zone_with([8, 8, 1], [false, false, true], [2, 0, 2, 0, 0, 0]);
    zone.faces.ylo = Boundary::SupersonicInflow { rho: 2.0, u: 0.0, v: 1.0, w: 0.0, p: 1.0 };
    let w = zone.inflow_state([-1, -1, 0]).unwrap();
    assert_eq!(w, PrimitiveState::new(1.0, 2.0, 0.1, 0.0, 0.7));
}
