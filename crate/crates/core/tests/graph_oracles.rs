use std::collections::BTreeSet;

use neckcut::analysis::Digraph;
use proptest::prelude::*;

fn graph(max_nodes: usize) -> impl Strategy<Value = Digraph> {
    (1..=max_nodes).prop_flat_map(|n| {
        prop::collection::vec((0..n, 0..n), 0..n * 3)
            .prop_map(move |edges| Digraph::from_edges(n, &edges))
    })
}

fn reachable_without(g: &Digraph, removed: Option<usize>) -> Vec<bool> {
    let mut seen = vec![false; g.len()];
    if removed == Some(0) {
        return seen;
    }
    let mut stack = vec![0];
    seen[0] = true;
    while let Some(n) = stack.pop() {
        for &s in &g.succs[n] {
            if Some(s) != removed && !seen[s] {
                seen[s] = true;
                stack.push(s);
            }
        }
    }
    seen
}

/// `d` dominates `n` iff every entry path to `n` passes `d`.
fn brute_dominators(g: &Digraph) -> Vec<BTreeSet<usize>> {
    let reach = reachable_without(g, None);
    (0..g.len())
        .map(|n| {
            if !reach[n] {
                return BTreeSet::new();
            }
            (0..g.len())
                .filter(|&d| d == n || !reachable_without(g, Some(d))[n])
                .collect()
        })
        .collect()
}

fn undirected_components(g: &Digraph, nodes: &BTreeSet<usize>) -> usize {
    let mut seen = BTreeSet::new();
    let mut count = 0;
    for &start in nodes {
        if seen.contains(&start) {
            continue;
        }
        count += 1;
        let mut stack = vec![start];
        seen.insert(start);
        while let Some(v) = stack.pop() {
            for (a, b) in g.edges() {
                let other = if a == v { b } else if b == v { a } else { continue };
                if nodes.contains(&other) && seen.insert(other) {
                    stack.push(other);
                }
            }
        }
    }
    count
}

fn floyd_warshall(g: &Digraph) -> Vec<Vec<Option<u32>>> {
    let n = g.len();
    let mut d = vec![vec![None; n]; n];
    for (i, row) in d.iter_mut().enumerate() {
        row[i] = Some(0);
    }
    for (a, b) in g.edges() {
        if a != b {
            d[a][b] = Some(1);
        }
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                if let (Some(x), Some(y)) = (d[i][k], d[k][j]) {
                    if d[i][j].is_none_or(|cur| x + y < cur) {
                        d[i][j] = Some(x + y);
                    }
                }
            }
        }
    }
    d
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn dominators_match_path_oracle(g in graph(10)) {
        let dom = g.dominators();
        let oracle = brute_dominators(&g);
        for n in 0..g.len() {
            let got: BTreeSet<usize> = (0..g.len()).filter(|&d| dom.dominates(d, n)).collect();
            prop_assert_eq!(&got, &oracle[n], "node {}", n);
            // The immediate dominator is the closest strict dominator.
            if n != 0 && !oracle[n].is_empty() {
                let idom = dom.idom[n].unwrap();
                for &d in &oracle[n] {
                    if d != n {
                        prop_assert!(oracle[idom].contains(&d));
                    }
                }
            }
        }
    }

    #[test]
    fn articulation_matches_removal_oracle(g in graph(12)) {
        let reach = reachable_without(&g, None);
        let nodes: BTreeSet<usize> = (0..g.len()).filter(|&n| reach[n]).collect();
        let expected: BTreeSet<usize> = nodes
            .iter()
            .copied()
            .filter(|&v| {
                let mut rest = nodes.clone();
                rest.remove(&v);
                undirected_components(&g, &rest) > 1
            })
            .collect();
        prop_assert_eq!(g.articulation_points(), expected);
    }

    #[test]
    fn bfs_matches_floyd_warshall(g in graph(12), from in 0usize..12) {
        let from = from % g.len();
        let fw = floyd_warshall(&g);
        let bfs = g.bfs_distance(from);
        for (n, expected) in fw[from].iter().enumerate() {
            prop_assert_eq!(bfs.get(&n).copied(), *expected);
        }
        for (a, b) in g.edges() {
            if let Some(&da) = bfs.get(&a) {
                prop_assert!(bfs[&b] <= da + 1);
            }
        }
    }

    #[test]
    fn loop_members_are_dominated_by_header(g in graph(10)) {
        let dom = g.dominators();
        let loops = g.loops(&dom);
        for (&h, body) in &loops.loop_blocks {
            for &b in body {
                prop_assert!(dom.dominates(h, b));
            }
        }
        for &(t, h) in &loops.back_edges {
            prop_assert!(dom.dominates(h, t));
        }
    }
}
