//! Node deployments, disk-model neighbor graphs and hop-count rings.

use std::collections::VecDeque;
use std::fmt::Write as _;

use rand::Rng;

use crate::des::RngStream;
use crate::error::{Error, Result};

pub type NodeId = usize;

/// Where the sink (node 0) is placed by [`generate_uniform`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SinkPlacement {
    /// At the origin corner `(0, 0)`.
    #[default]
    Corner,
    /// At the centre of the area.
    Center,
    /// Drawn uniformly like every other node.
    Uniform,
}

impl std::str::FromStr for SinkPlacement {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "corner" => Ok(SinkPlacement::Corner),
            "center" => Ok(SinkPlacement::Center),
            "uniform" => Ok(SinkPlacement::Uniform),
            other => Err(Error::Config(format!("unknown sink placement `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    pub positions: Vec<(f64, f64)>,
    pub sink: NodeId,
    pub width: f64,
    pub height: f64,
    /// Radio range `R`, in the same units as the positions.
    pub range: f64,
}

impl Topology {
    pub fn new(
        positions: Vec<(f64, f64)>,
        sink: NodeId,
        width: f64,
        height: f64,
        range: f64,
    ) -> Result<Self> {
        let topo = Topology {
            positions,
            sink,
            width,
            height,
            range,
        };
        topo.validate()?;
        Ok(topo)
    }

    fn validate(&self) -> Result<()> {
        if self.positions.is_empty() {
            return Err(Error::InvalidTopology("no nodes".into()));
        }
        if self.sink >= self.positions.len() {
            return Err(Error::InvalidTopology(format!(
                "sink {} out of range for {} nodes",
                self.sink,
                self.positions.len()
            )));
        }
        if !(self.range > 0.0) {
            return Err(Error::InvalidTopology(
                "radio range must be positive".into(),
            ));
        }
        for (id, &(x, y)) in self.positions.iter().enumerate() {
            if !(0.0..=self.width).contains(&x) || !(0.0..=self.height).contains(&y) {
                return Err(Error::InvalidTopology(format!(
                    "node {id} at ({x}, {y}) lies outside {}x{}",
                    self.width, self.height
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn distance(&self, a: NodeId, b: NodeId) -> f64 {
        let (ax, ay) = self.positions[a];
        let (bx, by) = self.positions[b];
        (ax - bx).hypot(ay - by)
    }

    /// Plain-text export: a header `count width height range sink`, then one
    /// `id x y` line per node.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{} {} {} {} {}",
            self.len(),
            self.width,
            self.height,
            self.range,
            self.sink
        );
        for (id, (x, y)) in self.positions.iter().enumerate() {
            let _ = writeln!(out, "{id} {x} {y}");
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'));
        let (hline, header) = lines.next().ok_or(Error::Parse {
            line: 1,
            msg: "missing header".into(),
        })?;
        let h: Vec<&str> = header.split_whitespace().collect();
        if h.len() != 5 {
            return Err(Error::Parse {
                line: hline + 1,
                msg: "header must be `count width height range sink`".into(),
            });
        }
        let num = |s: &str, line: usize| -> Result<f64> {
            s.parse::<f64>().map_err(|e| Error::Parse {
                line,
                msg: format!("`{s}`: {e}"),
            })
        };
        let int = |s: &str, line: usize| -> Result<usize> {
            s.parse::<usize>().map_err(|e| Error::Parse {
                line,
                msg: format!("`{s}`: {e}"),
            })
        };
        let count = int(h[0], hline + 1)?;
        let width = num(h[1], hline + 1)?;
        let height = num(h[2], hline + 1)?;
        let range = num(h[3], hline + 1)?;
        let sink = int(h[4], hline + 1)?;
        let mut positions = vec![None; count];
        for (idx, line) in lines {
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 3 {
                return Err(Error::Parse {
                    line: idx + 1,
                    msg: "expected `id x y`".into(),
                });
            }
            let id = int(f[0], idx + 1)?;
            if id >= count {
                return Err(Error::Parse {
                    line: idx + 1,
                    msg: format!("node id {id} exceeds count {count}"),
                });
            }
            if positions[id].is_some() {
                return Err(Error::Parse {
                    line: idx + 1,
                    msg: format!("duplicate node id {id}"),
                });
            }
            positions[id] = Some((num(f[1], idx + 1)?, num(f[2], idx + 1)?));
        }
        let positions = positions
            .into_iter()
            .enumerate()
            .map(|(id, p)| {
                p.ok_or_else(|| Error::InvalidTopology(format!("node {id} has no position")))
            })
            .collect::<Result<Vec<_>>>()?;
        Topology::new(positions, sink, width, height, range)
    }
}

/// Uniform random deployment of `count` nodes. Node 0 is the sink.
pub fn generate_uniform(
    count: usize,
    area: (f64, f64),
    range: f64,
    placement: SinkPlacement,
    rng: &mut RngStream,
) -> Result<Topology> {
    if count < 2 {
        return Err(Error::InvalidTopology(format!(
            "need at least 2 nodes, got {count}"
        )));
    }
    let (w, h) = area;
    let r = rng.rng();
    let mut positions = Vec::with_capacity(count);
    for _ in 0..count {
        positions.push((r.random_range(0.0..=w), r.random_range(0.0..=h)));
    }
    match placement {
        SinkPlacement::Corner => positions[0] = (0.0, 0.0),
        SinkPlacement::Center => positions[0] = (w / 2.0, h / 2.0),
        SinkPlacement::Uniform => {}
    }
    Topology::new(positions, 0, w, h, range)
}

/// Symmetric disk-model connectivity.
#[derive(Debug, Clone)]
pub struct NeighborGraph {
    /// Sorted 1-hop neighbors per node.
    pub adjacency: Vec<Vec<NodeId>>,
    /// Sorted nodes at graph distance 1 or 2, self excluded.
    pub two_hop: Vec<Vec<NodeId>>,
}

impl NeighborGraph {
    pub fn len(&self) -> usize {
        self.adjacency.len()
    }

    pub fn is_empty(&self) -> bool {
        self.adjacency.is_empty()
    }

    pub fn neighbors(&self, n: NodeId) -> &[NodeId] {
        &self.adjacency[n]
    }

    pub fn are_neighbors(&self, a: NodeId, b: NodeId) -> bool {
        self.adjacency[a].binary_search(&b).is_ok()
    }

    /// True when `b` is within two hops of `a` (and `a != b`).
    pub fn within_two_hops(&self, a: NodeId, b: NodeId) -> bool {
        self.two_hop[a].binary_search(&b).is_ok()
    }

    pub fn average_degree(&self) -> f64 {
        if self.adjacency.is_empty() {
            return 0.0;
        }
        let total: usize = self.adjacency.iter().map(Vec::len).sum();
        total as f64 / self.adjacency.len() as f64
    }
}

/// Edges join nodes at euclidean distance `<= R`.
pub fn build_graphs(topo: &Topology) -> NeighborGraph {
    let n = topo.len();
    let mut adjacency = vec![Vec::new(); n];
    for a in 0..n {
        for b in (a + 1)..n {
            if topo.distance(a, b) <= topo.range {
                adjacency[a].push(b);
                adjacency[b].push(a);
            }
        }
    }
    let mut mark = vec![usize::MAX; n];
    let mut two_hop = Vec::with_capacity(n);
    for a in 0..n {
        let mut set = Vec::new();
        mark[a] = a;
        for &b in &adjacency[a] {
            if mark[b] != a {
                mark[b] = a;
                set.push(b);
            }
            for &c in &adjacency[b] {
                if mark[c] != a {
                    mark[c] = a;
                    set.push(c);
                }
            }
        }
        set.sort_unstable();
        two_hop.push(set);
    }
    NeighborGraph { adjacency, two_hop }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HopCounts {
    pub ring: Vec<u32>,
    pub max_ring: u32,
}

impl HopCounts {
    pub fn ring(&self, n: NodeId) -> u32 {
        self.ring[n]
    }
}

/// BFS hop distance from the sink. Fails on the first unreachable node.
pub fn hop_counts(graph: &NeighborGraph, sink: NodeId) -> Result<HopCounts> {
    let n = graph.len();
    let mut ring = vec![u32::MAX; n];
    ring[sink] = 0;
    let mut queue = VecDeque::from([sink]);
    while let Some(u) = queue.pop_front() {
        for &v in graph.neighbors(u) {
            if ring[v] == u32::MAX {
                ring[v] = ring[u] + 1;
                queue.push_back(v);
            }
        }
    }
    if let Some(bad) = ring.iter().position(|&r| r == u32::MAX) {
        return Err(Error::DisconnectedTopology(bad));
    }
    let max_ring = ring.iter().copied().max().unwrap_or(0);
    Ok(HopCounts { ring, max_ring })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::des::StreamId;

    fn line(xs: &[f64], range: f64) -> Topology {
        let positions = xs.iter().map(|&x| (x, 0.0)).collect();
        Topology::new(positions, 0, 100.0, 1.0, range).unwrap()
    }

    #[test]
    fn uniform_positions_respect_bounds() {
        let mut rng = RngStream::new(42, StreamId::Topology);
        let t = generate_uniform(100, (50.0, 50.0), 10.0, SinkPlacement::Corner, &mut rng).unwrap();
        assert_eq!(t.len(), 100);
        assert_eq!(t.sink, 0);
        assert_eq!(t.positions[0], (0.0, 0.0));
        for &(x, y) in &t.positions {
            assert!((0.0..=50.0).contains(&x) && (0.0..=50.0).contains(&y));
        }
    }

    #[test]
    fn two_nodes_is_the_minimum() {
        let mut rng = RngStream::new(7, StreamId::Topology);
        let t = generate_uniform(2, (50.0, 50.0), 10.0, SinkPlacement::Corner, &mut rng).unwrap();
        assert_eq!(t.len(), 2);
        assert!(generate_uniform(1, (50.0, 50.0), 10.0, SinkPlacement::Corner, &mut rng).is_err());
    }

    #[test]
    fn same_seed_same_topology() {
        let gen = || {
            let mut rng = RngStream::new(9, StreamId::Topology);
            generate_uniform(50, (50.0, 50.0), 10.0, SinkPlacement::Corner, &mut rng).unwrap()
        };
        assert_eq!(gen(), gen());
    }

    #[test]
    fn edge_at_just_under_range() {
        let g = build_graphs(&line(&[0.0, 9.9], 10.0));
        assert!(g.are_neighbors(0, 1));
        let g = build_graphs(&line(&[0.0, 10.1], 10.0));
        assert!(!g.are_neighbors(0, 1));
    }

    #[test]
    fn chain_two_hop_reach() {
        let g = build_graphs(&line(&[0.0, 8.0, 16.0], 10.0));
        assert!(!g.are_neighbors(0, 2));
        assert!(g.within_two_hops(0, 2));
        assert!(g.within_two_hops(2, 0));
        assert!(!g.within_two_hops(0, 0));
    }

    #[test]
    fn isolated_node_has_no_neighbors() {
        let g = build_graphs(&line(&[0.0, 5.0, 60.0], 10.0));
        assert!(g.neighbors(2).is_empty());
        assert!(g.two_hop[2].is_empty());
    }

    #[test]
    fn chain_rings() {
        let g = build_graphs(&line(&[0.0, 8.0, 16.0], 10.0));
        let h = hop_counts(&g, 0).unwrap();
        assert_eq!(h.ring, vec![0, 1, 2]);
        assert_eq!(h.max_ring, 2);
    }

    #[test]
    fn star_is_all_ring_one() {
        let positions = vec![
            (10.0, 10.0),
            (15.0, 10.0),
            (5.0, 10.0),
            (10.0, 15.0),
            (10.0, 5.0),
        ];
        let t = Topology::new(positions, 0, 20.0, 20.0, 6.0).unwrap();
        let h = hop_counts(&build_graphs(&t), 0).unwrap();
        assert_eq!(h.ring, vec![0, 1, 1, 1, 1]);
    }

    #[test]
    fn unreachable_node_is_reported() {
        let g = build_graphs(&line(&[0.0, 5.0, 60.0], 10.0));
        match hop_counts(&g, 0) {
            Err(Error::DisconnectedTopology(2)) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn text_round_trip() {
        let mut rng = RngStream::new(3, StreamId::Topology);
        let t = generate_uniform(30, (50.0, 50.0), 10.0, SinkPlacement::Corner, &mut rng).unwrap();
        assert_eq!(Topology::from_text(&t.to_text()).unwrap(), t);
    }

    #[test]
    fn malformed_text_is_rejected() {
        assert!(Topology::from_text("").is_err());
        assert!(Topology::from_text("2 50 50 10 0\n0 1 1\n").is_err());
        assert!(Topology::from_text("2 50 50 10 0\n0 1 1\n0 2 2\n").is_err());
        assert!(Topology::from_text("2 50 50 10 5\n0 1 1\n1 2 2\n").is_err());
        assert!(Topology::from_text("1 50 50 10 0\n0 70 1\n").is_err());
    }

    proptest::proptest! {
        #[test]
        fn graph_symmetric_and_rings_consistent(seed in 0u64..500) {
            let mut rng = RngStream::new(seed, StreamId::Topology);
            let t = generate_uniform(60, (30.0, 30.0), 10.0, SinkPlacement::Corner, &mut rng).unwrap();
            let g = build_graphs(&t);
            for a in 0..g.len() {
                for &b in g.neighbors(a) {
                    proptest::prop_assert!(g.are_neighbors(b, a));
                    proptest::prop_assert!(g.within_two_hops(a, b));
                }
            }
            if let Ok(h) = hop_counts(&g, t.sink) {
                for a in 0..g.len() {
                    for &b in g.neighbors(a) {
                        proptest::prop_assert!(h.ring[a].abs_diff(h.ring[b]) <= 1);
                    }
                    if a != t.sink {
                        proptest::prop_assert!(g.neighbors(a).iter().any(|&b| h.ring[b] + 1 == h.ring[a]));
                    }
                }
            }
        }
    }
}
