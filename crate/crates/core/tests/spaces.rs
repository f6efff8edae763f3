use heatlab::mms::{build_circle, build_weighted_interval, shortest_paths, Density, DiscreteSpace, Edge};
use proptest::prelude::*;

/// Edge relaxation until nothing changes.
fn bellman_ford(n: usize, edges: &[Edge], source: usize) -> Vec<f64> {
    let mut d = vec![f64::INFINITY; n];
    d[source] = 0.0;
    loop {
        let mut changed = false;
        for e in edges {
            for (a, b) in [(e.i, e.j), (e.j, e.i)] {
                if d[a] + e.len < d[b] {
                    d[b] = d[a] + e.len;
                    changed = true;
                }
            }
        }
        if !changed {
            return d;
        }
    }
}

/// Connected graph: a path through every vertex plus random chords, all
/// lengths multiples of 1/8 so every path sum is exact.
fn dyadic_graph() -> impl Strategy<Value = (usize, Vec<Edge>)> {
    (3usize..24).prop_flat_map(|n| {
        let path = proptest::collection::vec(1u32..16, n - 1);
        let chords = proptest::collection::vec((0..n, 0..n, 1u32..16), 0..2 * n);
        (Just(n), path, chords).prop_map(|(n, path, chords)| {
            let mut edges: Vec<Edge> =
                path.iter().enumerate().map(|(i, &k)| Edge { i, j: i + 1, len: k as f64 / 8.0, weight: 1.0 }).collect();
            for (i, j, k) in chords {
                if i != j && !edges.iter().any(|e| (e.i, e.j) == (i.min(j), i.max(j))) {
                    edges.push(Edge { i: i.min(j), j: i.max(j), len: k as f64 / 8.0, weight: 1.0 });
                }
            }
            (n, edges)
        })
    })
}

proptest! {
    #[test]
    fn shortest_paths_match_bellman_ford_exactly((n, edges) in dyadic_graph()) {
        let d = shortest_paths(n, &edges).unwrap();
        for s in 0..n {
            let bf = bellman_ford(n, &edges, s);
            for t in 0..n {
                prop_assert_eq!(d[(s, t)], bf[t]);
            }
        }
    }
}

#[test]
fn json_round_trip_keeps_conductances() {
    let space = build_weighted_interval(17, 2.0, Density::Sine { amp: 0.4, period: 1.0 }).unwrap();
    let back = DiscreteSpace::from_json(&space.to_json().unwrap()).unwrap();
    assert_eq!(back.measure(), space.measure());
    assert_eq!(back.edges(), space.edges());
    assert_eq!(back.metadata(), space.metadata());
    assert_eq!(back.distance(), space.distance());
    assert_eq!(back.stiffness(), space.stiffness());
}

#[test]
fn missing_conductance_defaults_to_inverse_length() {
    let text = r#"{"vertices": 3, "measure": [0.5, 1.0, 0.5],
        "edges": [{"i": 0, "j": 1, "len": 0.25}, {"i": 1, "j": 2, "len": 0.5, "weight": 3.0}],
        "metadata": {"K": 0.0, "N": 1.0, "n": 1, "D": 0.0}}"#;
    let space = DiscreteSpace::from_json(text).unwrap();
    assert_eq!(space.edges()[0].weight, 4.0);
    assert_eq!(space.edges()[1].weight, 3.0);
    assert_eq!(space.diameter(), 0.75);
}

#[test]
fn malformed_files_are_refused() {
    let short = r#"{"vertices": 3, "measure": [1.0, 1.0], "edges": [], "metadata": {"K": 0.0, "N": 1.0, "n": 1, "D": 0.0}}"#;
    assert!(DiscreteSpace::from_json(short).is_err());
    assert!(DiscreteSpace::from_json("{").is_err());
}

#[test]
fn circle_round_trip_through_a_relabelling() {
    let space = build_circle(12, 1.0).unwrap();
    let perm: Vec<usize> = (0..12).map(|i| (5 * i + 3) % 12).collect();
    let copy = space.relabel(&perm).unwrap();
    for x in 0..12 {
        for y in 0..12 {
            assert_eq!(copy.dist(perm[x], perm[y]), space.dist(x, y));
        }
    }
}
