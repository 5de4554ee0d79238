//! Index-based directed graphs and the classic analyses over them. Node 0
//! is the entry.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Digraph {
    pub succs: Vec<Vec<usize>>,
    pub preds: Vec<Vec<usize>>,
}

impl Digraph {
    /// Builds a graph from an edge list; duplicate edges are collapsed.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Digraph {
        let mut succs: Vec<Vec<usize>> = vec![Vec::new(); n];
        let mut preds: Vec<Vec<usize>> = vec![Vec::new(); n];
        for &(a, b) in edges {
            if !succs[a].contains(&b) {
                succs[a].push(b);
                preds[b].push(a);
            }
        }
        Digraph { succs, preds }
    }

    pub fn len(&self) -> usize {
        self.succs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.succs.is_empty()
    }

    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.succs
            .iter()
            .enumerate()
            .flat_map(|(a, ss)| ss.iter().map(move |&b| (a, b)))
            .collect()
    }

    /// Nodes reachable from `from` (including `from`).
    pub fn reachable_from(&self, from: usize) -> Vec<bool> {
        let mut seen = vec![false; self.len()];
        if from >= self.len() {
            return seen;
        }
        let mut stack = vec![from];
        seen[from] = true;
        while let Some(n) = stack.pop() {
            for &s in &self.succs[n] {
                if !seen[s] {
                    seen[s] = true;
                    stack.push(s);
                }
            }
        }
        seen
    }

    /// Reverse postorder of the nodes reachable from the entry.
    pub fn reverse_postorder(&self) -> Vec<usize> {
        let mut order = Vec::new();
        if self.is_empty() {
            return order;
        }
        let mut visited = vec![false; self.len()];
        let mut stack: Vec<(usize, usize)> = vec![(0, 0)];
        visited[0] = true;
        while let Some(&mut (node, ref mut next)) = stack.last_mut() {
            if let Some(&s) = self.succs[node].get(*next) {
                *next += 1;
                if !visited[s] {
                    visited[s] = true;
                    stack.push((s, 0));
                }
            } else {
                order.push(node);
                stack.pop();
            }
        }
        order.reverse();
        order
    }

    /// Unweighted shortest hop counts from `from`; unreachable nodes are absent.
    pub fn bfs_distance(&self, from: usize) -> BTreeMap<usize, u32> {
        let mut dist = BTreeMap::new();
        if from >= self.len() {
            return dist;
        }
        let mut queue = VecDeque::from([from]);
        dist.insert(from, 0);
        while let Some(n) = queue.pop_front() {
            let d = dist[&n];
            for &s in &self.succs[n] {
                if let std::collections::btree_map::Entry::Vacant(e) = dist.entry(s) {
                    e.insert(d + 1);
                    queue.push_back(s);
                }
            }
        }
        dist
    }

    /// Immediate dominators by iterative dataflow over reverse postorder.
    pub fn dominators(&self) -> DomTree {
        let n = self.len();
        let mut idom: Vec<Option<usize>> = vec![None; n];
        if n == 0 {
            return DomTree { idom };
        }
        let rpo = self.reverse_postorder();
        let mut rpo_index = vec![usize::MAX; n];
        for (i, &b) in rpo.iter().enumerate() {
            rpo_index[b] = i;
        }
        idom[0] = Some(0);
        let intersect = |idom: &[Option<usize>], mut a: usize, mut b: usize| {
            while a != b {
                while rpo_index[a] > rpo_index[b] {
                    a = idom[a].expect("processed node");
                }
                while rpo_index[b] > rpo_index[a] {
                    b = idom[b].expect("processed node");
                }
            }
            a
        };
        let mut changed = true;
        while changed {
            changed = false;
            for &b in rpo.iter().skip(1) {
                let mut new_idom: Option<usize> = None;
                for &p in &self.preds[b] {
                    if idom[p].is_none() {
                        continue;
                    }
                    new_idom = Some(match new_idom {
                        None => p,
                        Some(cur) => intersect(&idom, p, cur),
                    });
                }
                if new_idom.is_some() && idom[b] != new_idom {
                    idom[b] = new_idom;
                    changed = true;
                }
            }
        }
        DomTree { idom }
    }

    /// Cut vertices of the undirected view restricted to entry-reachable nodes.
    pub fn articulation_points(&self) -> BTreeSet<usize> {
        let n = self.len();
        let mut out = BTreeSet::new();
        if n == 0 {
            return out;
        }
        let reach = self.reachable_from(0);
        let mut adj: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
        for (a, b) in self.edges() {
            if a != b && reach[a] && reach[b] {
                adj[a].insert(b);
                adj[b].insert(a);
            }
        }
        let adj: Vec<Vec<usize>> = adj.into_iter().map(|s| s.into_iter().collect()).collect();

        const UNSEEN: usize = usize::MAX;
        let mut disc = vec![UNSEEN; n];
        let mut low = vec![0usize; n];
        let mut timer = 0;
        // (node, parent, next neighbour index)
        let mut stack: Vec<(usize, usize, usize)> = vec![(0, UNSEEN, 0)];
        disc[0] = 0;
        low[0] = 0;
        timer += 1;
        let mut root_children = 0;
        while let Some(&mut (v, parent, ref mut next)) = stack.last_mut() {
            if let Some(&w) = adj[v].get(*next) {
                *next += 1;
                if disc[w] == UNSEEN {
                    disc[w] = timer;
                    low[w] = timer;
                    timer += 1;
                    if v == 0 {
                        root_children += 1;
                    }
                    stack.push((w, v, 0));
                } else if w != parent {
                    low[v] = low[v].min(disc[w]);
                }
            } else {
                stack.pop();
                if parent != UNSEEN {
                    low[parent] = low[parent].min(low[v]);
                    if parent != 0 && low[v] >= disc[parent] {
                        out.insert(parent);
                    }
                }
            }
        }
        if root_children > 1 {
            out.insert(0);
        }
        out
    }

    /// Back edges and natural loops.
    pub fn loops(&self, dom: &DomTree) -> LoopInfo {
        let mut info = LoopInfo::default();
        for (t, h) in self.edges() {
            if dom.dominates(h, t) {
                info.back_edges.insert((t, h));
                let body = info.loop_blocks.entry(h).or_default();
                body.insert(h);
                let mut stack = vec![t];
                while let Some(n) = stack.pop() {
                    if body.insert(n) {
                        stack.extend(self.preds[n].iter().copied().filter(|&q| dom.idom[q].is_some()));
                    }
                }
            }
        }
        info
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DomTree {
    /// Immediate dominator per node; the entry maps to itself and
    /// unreachable nodes have no entry.
    pub idom: Vec<Option<usize>>,
}

impl DomTree {
    pub fn dominates(&self, a: usize, b: usize) -> bool {
        if self.idom.get(b).copied().flatten().is_none() {
            return false;
        }
        let mut cur = b;
        loop {
            if cur == a {
                return true;
            }
            match self.idom[cur] {
                Some(next) if next != cur => cur = next,
                _ => return false,
            }
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LoopInfo {
    /// `(tail, header)` pairs where the header dominates the tail.
    pub back_edges: BTreeSet<(usize, usize)>,
    /// Natural loop members per header (loops sharing a header are merged).
    pub loop_blocks: BTreeMap<usize, BTreeSet<usize>>,
}

impl LoopInfo {
    pub fn in_any_loop(&self, node: usize) -> bool {
        self.loop_blocks.values().any(|b| b.contains(&node))
    }

    pub fn headers_containing(&self, node: usize) -> Vec<usize> {
        self.loop_blocks
            .iter()
            .filter(|(_, b)| b.contains(&node))
            .map(|(&h, _)| h)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn diamond() -> Digraph {
        Digraph::from_edges(4, &[(0, 1), (0, 2), (1, 3), (2, 3)])
    }

    #[test]
    fn diamond_dominators() {
        let d = diamond().dominators();
        assert_eq!(d.idom, vec![Some(0), Some(0), Some(0), Some(0)]);
    }

    #[test]
    fn chain_dominators_and_distance() {
        let g = Digraph::from_edges(3, &[(0, 1), (1, 2)]);
        assert_eq!(g.dominators().idom[2], Some(1));
        let dist = g.bfs_distance(0);
        assert_eq!(dist[&0], 0);
        assert_eq!(dist[&2], 2);
    }

    #[test]
    fn unreachable_nodes_have_no_idom_or_distance() {
        let g = Digraph::from_edges(3, &[(0, 1)]);
        assert_eq!(g.dominators().idom[2], None);
        assert!(!g.bfs_distance(0).contains_key(&2));
    }

    #[test]
    fn path_articulation() {
        let g = Digraph::from_edges(3, &[(0, 1), (1, 2)]);
        assert_eq!(g.articulation_points(), BTreeSet::from([1]));
        // Direction does not matter in the undirected view.
        let g = Digraph::from_edges(3, &[(0, 1), (2, 1)]);
        assert_eq!(g.articulation_points(), BTreeSet::new());
    }

    #[test]
    fn diamond_articulation_depends_on_tails() {
        assert!(diamond().articulation_points().is_empty());
        // A tail after the join makes the join a cut vertex.
        let g = Digraph::from_edges(5, &[(0, 1), (0, 2), (1, 3), (2, 3), (3, 4)]);
        assert_eq!(g.articulation_points(), BTreeSet::from([3]));
    }

    #[test]
    fn self_loop_and_acyclic_loops() {
        let g = Digraph::from_edges(2, &[(0, 1), (1, 1)]);
        let l = g.loops(&g.dominators());
        assert_eq!(l.back_edges, BTreeSet::from([(1, 1)]));
        assert_eq!(l.loop_blocks[&1], BTreeSet::from([1]));
        let g = diamond();
        assert!(g.loops(&g.dominators()).back_edges.is_empty());
    }

    #[test]
    fn nested_loop_membership() {
        // 0 -> 1 -> 2 -> 3 -> 2, 3 -> 1, 1 -> 4
        let g = Digraph::from_edges(5, &[(0, 1), (1, 2), (2, 3), (3, 2), (3, 1), (1, 4)]);
        let l = g.loops(&g.dominators());
        assert_eq!(l.loop_blocks[&1], BTreeSet::from([1, 2, 3]));
        assert_eq!(l.loop_blocks[&2], BTreeSet::from([2, 3]));
        assert!(!l.in_any_loop(4));
    }
}
