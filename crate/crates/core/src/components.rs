//! Queen-contiguity connected components of a set of grid cells.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::geo::{CellIndex, GridSpec};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComponentLabeling {
    pub n_components: usize,
    /// Component ids are dense, numbered in order of each component's
    /// smallest cell.
    pub label: BTreeMap<CellIndex, usize>,
}

struct UnionFind {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
            rank: vec![0; n],
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        let mut root = x;
        while self.parent[root] != root {
            root = self.parent[root];
        }
        while self.parent[x] != root {
            let next = self.parent[x];
            self.parent[x] = root;
            x = next;
        }
        root
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        match self.rank[ra].cmp(&self.rank[rb]) {
            std::cmp::Ordering::Less => self.parent[ra] = rb,
            std::cmp::Ordering::Greater => self.parent[rb] = ra,
            std::cmp::Ordering::Equal => {
                self.parent[rb] = ra;
                self.rank[ra] += 1;
            }
        }
    }
}

/// Connected components under 8-neighbourhood adjacency restricted to
/// `cells`. Only member cells are touched; the full grid graph is never
/// built. Cells outside the grid are ignored.
pub fn connected_components<'a>(
    cells: impl IntoIterator<Item = &'a CellIndex>,
    grid: &GridSpec,
) -> ComponentLabeling {
    let mut members: Vec<CellIndex> = cells.into_iter().filter(|c| grid.contains(**c)).copied().collect();
    members.sort_unstable();
    members.dedup();
    let index: HashMap<CellIndex, usize> = members.iter().enumerate().map(|(i, c)| (*c, i)).collect();

    let mut uf = UnionFind::new(members.len());
    for (i, c) in members.iter().enumerate() {
        // the four neighbours that precede c in scan order suffice
        let (row, col) = (c.row as i64, c.col as i64);
        for (dr, dc) in [(0, -1), (-1, -1), (-1, 0), (-1, 1)] {
            let (r, k) = (row + dr, col + dc);
            if r < 0 || k < 0 {
                continue;
            }
            if let Some(&j) = index.get(&CellIndex::new(r as u32, k as u32)) {
                uf.union(i, j);
            }
        }
    }

    let mut ids: HashMap<usize, usize> = HashMap::new();
    let mut label = BTreeMap::new();
    for (i, c) in members.iter().enumerate() {
        let root = uf.find(i);
        let next = ids.len();
        let id = *ids.entry(root).or_insert(next);
        label.insert(*c, id);
    }
    ComponentLabeling {
        n_components: ids.len(),
        label,
    }
}
