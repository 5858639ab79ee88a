//! State transition tree: replay seeds, record (state, syscall, state)
//! edges and render them as DOT.

use std::fmt::Write as _;

use crate::minitee::ExecutionResult;
use crate::state::{state_hash_of, StateHash, StateVarRegion};
use crate::syscall::TemplateSet;

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Edge {
    pub from: usize,
    pub label: String,
    pub to: usize,
}

/// Nodes are numbered in first-seen order; node 0 is the root (no live
/// handles). Edges keep their first-seen order and are not repeated.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StateTransitionTree {
    pub nodes: Vec<StateHash>,
    pub edges: Vec<Edge>,
}

impl StateTransitionTree {
    pub fn new(regions: &[StateVarRegion]) -> Self {
        Self {
            nodes: vec![state_hash_of(regions, &[])],
            edges: Vec::new(),
        }
    }

    pub fn root(&self) -> StateHash {
        self.nodes[0]
    }

    fn node(&mut self, h: StateHash) -> usize {
        match self.nodes.iter().position(|&n| n == h) {
            Some(i) => i,
            None => {
                self.nodes.push(h);
                self.nodes.len() - 1
            }
        }
    }

    /// Adds the transitions of one replayed test case, starting at the root.
    pub fn add_execution(
        &mut self,
        result: &ExecutionResult,
        regions: &[StateVarRegion],
        templates: &TemplateSet,
    ) {
        let mut prev = 0;
        for rec in &result.per_syscall {
            let next = self.node(state_hash_of(regions, &rec.snapshots));
            let label = templates
                .get(rec.ordinal)
                .map_or_else(|| format!("syscall_{}", rec.ordinal), |t| t.name.clone());
            let edge = Edge {
                from: prev,
                label,
                to: next,
            };
            if !self.edges.contains(&edge) {
                self.edges.push(edge);
            }
            prev = next;
        }
    }

    /// Edges leaving `node`, self-loops included.
    pub fn out_edges(&self, node: usize) -> impl Iterator<Item = &Edge> {
        self.edges.iter().filter(move |e| e.from == node)
    }

    /// Follows the unique outgoing non-loop edge from the root while there is
    /// one, collecting labels of every edge passed (self-loops included).
    pub fn main_path_labels(&self) -> Vec<&str> {
        let mut labels = Vec::new();
        let mut at = 0;
        let mut visited = vec![false; self.nodes.len()];
        loop {
            visited[at] = true;
            let mut next = None;
            for e in self.out_edges(at) {
                labels.push(e.label.as_str());
                if e.to != at {
                    next = Some(e.to);
                }
            }
            match next {
                Some(n) if !visited[n] => at = n,
                _ => return labels,
            }
        }
    }

    /// True when, ignoring self-loops, every node has at most one
    /// predecessor and one successor and there is no cycle.
    pub fn is_path(&self) -> bool {
        let n = self.nodes.len();
        let (mut indeg, mut outdeg) = (vec![0usize; n], vec![0usize; n]);
        for e in self.edges.iter().filter(|e| e.from != e.to) {
            outdeg[e.from] += 1;
            indeg[e.to] += 1;
        }
        indeg[0] == 0 && indeg.iter().chain(&outdeg).all(|&d| d <= 1)
    }

    pub fn to_dot(&self) -> String {
        let mut s = String::from("digraph stt {\n    rankdir=TB;\n    node [shape=circle];\n");
        for (i, h) in self.nodes.iter().enumerate() {
            let _ = writeln!(s, "    n{i} [label=\"{i}\", tooltip=\"{h}\"];");
        }
        for e in &self.edges {
            let _ = writeln!(s, "    n{} -> n{} [label=\"{}\"];", e.from, e.to, e.label);
        }
        s.push_str("}\n");
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::probe::{Probe, SimProbe};
    use crate::state::ground_truth_regions;
    use crate::syscall::{parse_program, serialize_payload};

    fn tree(regions: &[StateVarRegion]) -> StateTransitionTree {
        let t = TemplateSet::bundled();
        let text = crate::bundled_corpus()[0].1;
        let p = serialize_payload(&parse_program(text, &t).unwrap()).unwrap();
        let res = SimProbe::new(0).submit(&p).unwrap();
        let mut stt = StateTransitionTree::new(regions);
        stt.add_execution(&res, regions, &t);
        stt
    }

    #[test]
    fn fig7_seed_gives_a_path() {
        let stt = tree(&ground_truth_regions());
        assert!(stt.is_path());
        assert!(stt.nodes.len() >= 5);
        assert_eq!(stt.main_path_labels().len(), 12);
        assert_eq!(stt.to_dot(), tree(&ground_truth_regions()).to_dot());
    }

    #[test]
    fn no_regions_collapse_to_one_node() {
        let stt = tree(&[]);
        assert_eq!(stt.nodes.len(), 1);
        assert!(stt.edges.iter().all(|e| e.from == 0 && e.to == 0));
    }
}
