use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use poolsim::netgraph::synth;
use poolsim::{NodeId, RoadNetwork, WeightMode};

fn network(seed: u64, n: usize, time: bool) -> RoadNetwork {
    let mode = if time { WeightMode::TravelTime } else { WeightMode::Distance };
    synth::random_connected(n, 3, &mut ChaCha8Rng::seed_from_u64(seed), mode)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn triangle_inequality(seed in any::<u64>(), time in any::<bool>(), picks in prop::collection::vec((0u32..40, 0u32..40, 0u32..40), 20)) {
        let net = network(seed, 40, time);
        for (a, b, c) in picks {
            let (a, b, c) = (NodeId(a), NodeId(b), NodeId(c));
            let ac = net.shortest_cost(a, c).unwrap();
            let ab = net.shortest_cost(a, b).unwrap();
            let bc = net.shortest_cost(b, c).unwrap();
            prop_assert!(ac <= ab + bc);
        }
    }

    #[test]
    fn path_cost_is_its_edge_sum(seed in any::<u64>(), time in any::<bool>(), pairs in prop::collection::vec((0u32..40, 0u32..40), 20)) {
        let net = network(seed, 40, time);
        for (s, t) in pairs {
            let p = net.shortest_path(NodeId(s), NodeId(t)).unwrap();
            prop_assert_eq!(p.edges.iter().map(|&e| net.weight(e)).sum::<i64>(), p.cost);
            prop_assert_eq!(p.nodes.first(), Some(&NodeId(s)));
            prop_assert_eq!(p.nodes.last(), Some(&NodeId(t)));
            for (w, &e) in p.nodes.windows(2).zip(&p.edges) {
                prop_assert_eq!((net.edge(e).from, net.edge(e).to), (w[0], w[1]));
            }
        }
    }

    #[test]
    fn reverse_trees_agree_with_point_queries(seed in any::<u64>(), target in 0u32..30) {
        let net = network(seed, 30, false);
        let tree = net.tree_to(NodeId(target));
        for s in net.nodes() {
            prop_assert_eq!(tree.cost(s), Some(net.shortest_cost(s, NodeId(target)).unwrap()));
        }
    }
}
