use std::collections::{BTreeSet, HashMap};
use std::sync::Arc;

use rayon::prelude::*;

use super::{NodeId, RoadNetwork, ShortestPathTree};
use crate::Cost;

/// Source of point-to-point shortest costs. `None` means unreachable.
pub trait CostOracle: Sync {
    fn cost(&self, from: NodeId, to: NodeId) -> Option<Cost>;
}

impl CostOracle for RoadNetwork {
    fn cost(&self, from: NodeId, to: NodeId) -> Option<Cost> {
        self.shortest_cost(from, to).ok()
    }
}

/// Dense all-pairs table, mostly useful for small networks and tests.
impl CostOracle for Vec<Vec<Option<Cost>>> {
    fn cost(&self, from: NodeId, to: NodeId) -> Option<Cost> {
        self[from.index()][to.index()]
    }
}

/// Memoized shortest-path trees keyed by destination node.
///
/// One tree answers `cost(x, target)` for every `x`, which is the access
/// pattern of candidate routing: many vehicle positions against a few stops.
/// Trees are filled in parallel by [`TreeCache::ensure`] and dropped by
/// [`TreeCache::retain`] once their node is no longer a live stop.
#[derive(Debug)]
pub struct TreeCache<'n> {
    net: &'n RoadNetwork,
    trees: HashMap<NodeId, Arc<ShortestPathTree>>,
    computed: u64,
}

impl<'n> TreeCache<'n> {
    pub fn new(net: &'n RoadNetwork) -> Self {
        Self {
            net,
            trees: HashMap::new(),
            computed: 0,
        }
    }

    pub fn network(&self) -> &'n RoadNetwork {
        self.net
    }

    pub fn len(&self) -> usize {
        self.trees.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trees.is_empty()
    }

    /// Number of trees built since creation.
    pub fn computed(&self) -> u64 {
        self.computed
    }

    /// Builds any missing trees for `targets`.
    pub fn ensure(&mut self, targets: impl IntoIterator<Item = NodeId>) {
        let missing: BTreeSet<NodeId> = targets
            .into_iter()
            .filter(|t| !self.trees.contains_key(t))
            .collect();
        if missing.is_empty() {
            return;
        }
        let net = self.net;
        let built: Vec<_> = missing
            .into_par_iter()
            .map(|t| (t, Arc::new(net.tree_to(t))))
            .collect();
        self.computed += built.len() as u64;
        self.trees.extend(built);
    }

    pub fn tree(&mut self, target: NodeId) -> Arc<ShortestPathTree> {
        if let Some(t) = self.trees.get(&target) {
            return Arc::clone(t);
        }
        self.computed += 1;
        let t = Arc::new(self.net.tree_to(target));
        self.trees.insert(target, Arc::clone(&t));
        t
    }

    pub fn get(&self, target: NodeId) -> Option<&ShortestPathTree> {
        self.trees.get(&target).map(|t| t.as_ref())
    }

    /// Drops every tree whose target is not in `live`.
    pub fn retain(&mut self, live: &BTreeSet<NodeId>) {
        self.trees.retain(|k, _| live.contains(k));
    }

    pub fn clear(&mut self) {
        self.trees.clear();
    }
}

impl CostOracle for TreeCache<'_> {
    fn cost(&self, from: NodeId, to: NodeId) -> Option<Cost> {
        match self.trees.get(&to) {
            Some(t) => t.cost(from),
            None => {
                log::debug!("tree cache miss for {to:?}; answering uncached");
                self.net.shortest_cost(from, to).ok()
            }
        }
    }
}
