use crate::error::Result;
use crate::topology::{build_graphs, hop_counts, HopCounts, NeighborGraph, Topology};
use crate::vcs::{compute_coordinates, BackoffAssignment, BackoffTiming, Coordinates};

/// A deployment with every structure the protocols read: graphs, rings,
/// coordinates and backoffs. Immutable once built.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub topology: Topology,
    pub graph: NeighborGraph,
    pub hops: HopCounts,
    pub coords: Coordinates,
    pub backoffs: BackoffAssignment,
    pub timing: BackoffTiming,
}

impl Scenario {
    pub fn build(topology: Topology, timing: BackoffTiming) -> Result<Self> {
        let graph = build_graphs(&topology);
        let hops = hop_counts(&graph, topology.sink)?;
        let coords = compute_coordinates(&graph, &hops, topology.range, timing);
        let backoffs = coords.backoffs(timing);
        Ok(Scenario {
            topology,
            graph,
            hops,
            coords,
            backoffs,
            timing,
        })
    }

    pub fn len(&self) -> usize {
        self.topology.len()
    }

    pub fn is_empty(&self) -> bool {
        self.topology.is_empty()
    }

    pub fn sink(&self) -> usize {
        self.topology.sink
    }

    pub fn ring(&self, n: usize) -> u32 {
        self.hops.ring(n)
    }

    pub fn average_neighbors(&self) -> f64 {
        self.graph.average_degree()
    }
}
