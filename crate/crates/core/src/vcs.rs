//! One-dimensional virtual coordinates: hop ring plus a connectivity offset,
//! and the backoff mapping derived from the offset.
//!
//! A node's raw offset shrinks as the share of its neighbors lying one ring
//! closer to the sink grows. Raw offsets are then snapped onto the backoff
//! grid and made pairwise distinct inside every 2-hop neighborhood, which is
//! what makes channel contention and forwarder election collision-free.

use std::fmt::Write as _;

use crate::topology::{HopCounts, NeighborGraph, NodeId};

/// Backoff window and its quantization step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BackoffTiming {
    pub max_backoff_us: u64,
    pub slot_us: u64,
}

impl BackoffTiming {
    pub fn new(max_backoff_us: u64, slot_us: u64) -> Self {
        assert!(slot_us > 0 && max_backoff_us >= slot_us);
        BackoffTiming {
            max_backoff_us,
            slot_us,
        }
    }

    /// Number of distinct backoff values strictly below the window end.
    pub fn slots(&self) -> u64 {
        self.max_backoff_us / self.slot_us
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Coordinate {
    pub ring: u32,
    /// Connectivity offset in `[0, R)`.
    pub offset: f64,
    /// `(ring - 1) * R + offset`; 0 for the sink.
    pub coord: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ContentionPhase {
    /// Channel reservation.
    Backoff,
    /// Forwarder election.
    BackoffForward,
}

/// Per-node backoff durations, in microseconds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BackoffAssignment {
    pub b_backoff: Vec<u64>,
    pub bf_backoff: Vec<u64>,
}

#[derive(Debug, Clone)]
pub struct Coordinates {
    pub nodes: Vec<Coordinate>,
    pub range: f64,
    /// Nodes moved off their raw slot to keep 2-hop offsets distinct.
    pub ties_spaced: usize,
    /// Nodes for which no free slot existed in their 2-hop neighborhood.
    pub unresolved: usize,
}

impl Coordinates {
    pub fn get(&self, n: NodeId) -> &Coordinate {
        &self.nodes[n]
    }

    pub fn backoffs(&self, timing: BackoffTiming) -> BackoffAssignment {
        let map = |phase| {
            self.nodes
                .iter()
                .map(|c| backoff_of(c, phase, self.range, timing))
                .collect()
        };
        BackoffAssignment {
            b_backoff: map(ContentionPhase::Backoff),
            bf_backoff: map(ContentionPhase::BackoffForward),
        }
    }

    /// `id ring offset coord` per line.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (id, c) in self.nodes.iter().enumerate() {
            let _ = writeln!(out, "{id} {} {:.4} {:.4}", c.ring, c.offset, c.coord);
        }
        out
    }
}

/// Raw connectivity offset for a node in ring `n >= 1`.
pub fn raw_offset(lower: usize, degree: usize, range: f64) -> f64 {
    if degree == 0 {
        return 0.0;
    }
    let share = lower as f64 / degree as f64;
    range * (1.0 - share) * 0.9
}

pub fn coordinate_value(ring: u32, offset: f64, range: f64) -> f64 {
    if ring == 0 {
        0.0
    } else {
        (ring - 1) as f64 * range + offset
    }
}

/// Assign coordinates. Offsets land on the backoff grid of `timing` and no two
/// nodes within two hops share a grid slot (the sink reserves slot 0).
pub fn compute_coordinates(
    graph: &NeighborGraph,
    rings: &HopCounts,
    range: f64,
    timing: BackoffTiming,
) -> Coordinates {
    let n = graph.len();
    let slots = timing.slots() as usize;
    let step = range / slots as f64;

    let raw: Vec<f64> = (0..n)
        .map(|v| {
            let r = rings.ring(v);
            if r == 0 {
                return 0.0;
            }
            let nbrs = graph.neighbors(v);
            let lower = nbrs.iter().filter(|&&u| rings.ring(u) + 1 == r).count();
            raw_offset(lower, nbrs.len(), range)
        })
        .collect();
    let raw_slot =
        |v: NodeId| -> usize { ((raw[v] / range * slots as f64).round() as usize).min(slots - 1) };

    let mut slot_of: Vec<Option<usize>> = vec![None; n];
    for v in 0..n {
        if rings.ring(v) == 0 {
            slot_of[v] = Some(0);
        }
    }
    let mut order: Vec<NodeId> = (0..n).filter(|&v| rings.ring(v) != 0).collect();
    order.sort_by(|&a, &b| {
        raw_slot(a)
            .cmp(&raw_slot(b))
            .then(raw[a].total_cmp(&raw[b]))
            .then(a.cmp(&b))
    });

    let mut taken = vec![false; slots];
    let mut ties_spaced = 0;
    let mut unresolved = 0;
    for &v in &order {
        taken.iter_mut().for_each(|t| *t = false);
        for &u in &graph.two_hop[v] {
            if let Some(s) = slot_of[u] {
                taken[s] = true;
            }
        }
        let want = raw_slot(v);
        let chosen = (want..slots)
            .find(|&s| !taken[s])
            .or_else(|| (0..want).rev().find(|&s| !taken[s]));
        let s = match chosen {
            Some(s) => s,
            None => {
                unresolved += 1;
                want
            }
        };
        if s != want {
            ties_spaced += 1;
        }
        slot_of[v] = Some(s);
    }

    let nodes = (0..n)
        .map(|v| {
            let ring = rings.ring(v);
            let offset = if ring == 0 {
                0.0
            } else {
                slot_of[v].unwrap() as f64 * step
            };
            Coordinate {
                ring,
                offset,
                coord: coordinate_value(ring, offset, range),
            }
        })
        .collect();
    Coordinates {
        nodes,
        range,
        ties_spaced,
        unresolved,
    }
}

/// Backoff for a contention phase: the offset scaled linearly onto the
/// backoff window and rounded to the slot grid. Both phases use the same
/// strictly increasing mapping.
pub fn backoff_of(
    c: &Coordinate,
    _phase: ContentionPhase,
    range: f64,
    timing: BackoffTiming,
) -> u64 {
    let frac = (c.offset / range).clamp(0.0, 1.0);
    let slots = (frac * timing.max_backoff_us as f64 / timing.slot_us as f64).round() as u64;
    (slots * timing.slot_us).min(timing.max_backoff_us)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::des::{RngStream, StreamId};
    use crate::topology::{build_graphs, generate_uniform, hop_counts, SinkPlacement, Topology};

    const REFERENCE: BackoffTiming = BackoffTiming {
        max_backoff_us: 10_000,
        slot_us: 200,
    };

    fn coord(ring: u32, offset: f64) -> Coordinate {
        Coordinate {
            ring,
            offset,
            coord: coordinate_value(ring, offset, 10.0),
        }
    }

    #[test]
    fn coordinate_formula() {
        assert!((coordinate_value(3, 4.2, 10.0) - 24.2).abs() < 1e-12);
        assert_eq!(coordinate_value(0, 3.0, 10.0), 0.0);
    }

    #[test]
    fn better_connected_node_gets_smaller_offset() {
        assert!(raw_offset(3, 4, 10.0) < raw_offset(1, 4, 10.0));
    }

    #[test]
    fn zero_offset_is_earliest() {
        let c = coord(2, 0.0);
        assert_eq!(backoff_of(&c, ContentionPhase::Backoff, 10.0, REFERENCE), 0);
    }

    #[test]
    fn offset_near_range_fills_window() {
        let c = coord(2, 9.999_999);
        let b = backoff_of(&c, ContentionPhase::Backoff, 10.0, REFERENCE);
        assert_eq!(b, 10_000);
        // B phase = backoff window + one jamming code.
        assert_eq!(b + 200, 10_200);
    }

    #[test]
    fn linear_mapping_preserves_order() {
        let a = backoff_of(
            &coord(1, 2.0),
            ContentionPhase::BackoffForward,
            10.0,
            REFERENCE,
        );
        let b = backoff_of(
            &coord(1, 7.5),
            ContentionPhase::BackoffForward,
            10.0,
            REFERENCE,
        );
        assert_eq!((a, b), (2_000, 7_600));
        let fine = BackoffTiming::new(10_000, 10);
        let a = backoff_of(&coord(1, 2.0), ContentionPhase::BackoffForward, 10.0, fine);
        let b = backoff_of(&coord(1, 7.5), ContentionPhase::BackoffForward, 10.0, fine);
        assert_eq!((a, b), (2_000, 7_500));
    }

    fn build(seed: u64, n: usize) -> Option<(NeighborGraph, HopCounts)> {
        let mut rng = RngStream::new(seed, StreamId::Topology);
        let t = generate_uniform(n, (50.0, 50.0), 10.0, SinkPlacement::Corner, &mut rng).unwrap();
        let g = build_graphs(&t);
        let h = hop_counts(&g, t.sink).ok()?;
        Some((g, h))
    }

    #[test]
    fn two_same_ring_nodes_ordered_by_connectivity() {
        // Sink at 0; ring-1 nodes 1,2,3,4; node 5 sees three of them plus one ring-2 peer,
        // node 6 sees one ring-1 node and three ring-2 peers.
        let positions = vec![
            (0.0, 0.0),
            (9.0, 0.0),
            (0.0, 9.0),
            (6.0, 6.0),
            (9.5, 2.0),
            (12.0, 6.0),
            (3.0, 16.0),
            (10.0, 13.0),
            (0.0, 17.0),
            (6.0, 19.0),
        ];
        let t = Topology::new(positions, 0, 30.0, 30.0, 9.6).unwrap();
        let g = build_graphs(&t);
        let h = hop_counts(&g, 0).unwrap();
        let c = compute_coordinates(&g, &h, 9.6, BackoffTiming::new(10_000, 10));
        let share = |v: usize| {
            let lower = g
                .neighbors(v)
                .iter()
                .filter(|&&u| h.ring[u] + 1 == h.ring[v])
                .count();
            lower as f64 / g.neighbors(v).len() as f64
        };
        for a in 1..t.len() {
            for b in 1..t.len() {
                if h.ring[a] == h.ring[b] && share(a) > share(b) + 0.2 {
                    assert!(c.get(a).offset < c.get(b).offset, "{a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn offsets_unique_in_every_two_hop_neighborhood() {
        let timing = BackoffTiming::new(10_000, 10);
        let mut checked = 0;
        for seed in 0..10 {
            for n in [100, 300, 800] {
                let Some((g, h)) = build((seed << 8) | n as u64, n) else {
                    continue;
                };
                let c = compute_coordinates(&g, &h, 10.0, timing);
                assert_eq!(c.unresolved, 0);
                let b = c.backoffs(timing);
                for a in 0..g.len() {
                    assert!(c.get(a).offset < 10.0);
                    for &u in &g.two_hop[a] {
                        assert_ne!(c.get(a).offset, c.get(u).offset);
                        assert_ne!(b.b_backoff[a], b.b_backoff[u]);
                        assert_ne!(b.bf_backoff[a], b.bf_backoff[u]);
                    }
                }
                checked += 1;
            }
        }
        assert!(checked >= 20);
    }

    #[test]
    fn coarse_grid_reports_conflicts_in_dense_networks() {
        let Some((g, h)) = build(5, 800) else { return };
        let c = compute_coordinates(&g, &h, 10.0, REFERENCE);
        assert!(c.unresolved > 0);
    }

    #[test]
    fn deterministic() {
        let (g, h) = build(11, 200).unwrap();
        let t = BackoffTiming::new(10_000, 10);
        let a = compute_coordinates(&g, &h, 10.0, t);
        let b = compute_coordinates(&g, &h, 10.0, t);
        assert_eq!(a.nodes, b.nodes);
    }

    proptest::proptest! {
        #[test]
        fn coord_grows_with_ring_and_backoff_with_offset(
            ring in 1u32..10, o1 in 0.0f64..10.0, o2 in 0.0f64..10.0
        ) {
            let lo = coord(ring, o1.min(o2));
            let hi = coord(ring, o1.max(o2));
            let next = coord(ring + 1, 0.0);
            proptest::prop_assert!(lo.coord <= hi.coord);
            proptest::prop_assert!(hi.coord < next.coord);
            let t = BackoffTiming::new(10_000, 10);
            proptest::prop_assert!(
                backoff_of(&lo, ContentionPhase::BackoffForward, 10.0, t)
                    <= backoff_of(&hi, ContentionPhase::BackoffForward, 10.0, t)
            );
        }
    }
}
