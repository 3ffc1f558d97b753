//! Union-find over raw state-variable slots, with deterministic canonical
//! representatives: after all merges, each class is represented by its
//! smallest slot id, so canonical numbering is independent of merge order.

pub struct UnionFind {
    parent: Vec<u32>,
    size: Vec<u32>,
}

impl UnionFind {
    pub fn new(len: usize) -> Self {
        Self { parent: (0..len as u32).collect(), size: vec![1; len] }
    }

    pub fn len(&self) -> usize {
        self.parent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parent.is_empty()
    }

    pub fn find(&mut self, mut x: u32) -> u32 {
        while self.parent[x as usize] != x {
            let grandparent = self.parent[self.parent[x as usize] as usize];
            self.parent[x as usize] = grandparent;
            x = grandparent;
        }
        x
    }

    pub fn union(&mut self, a: u32, b: u32) {
        let mut ra = self.find(a);
        let mut rb = self.find(b);
        if ra == rb {
            return;
        }
        if self.size[ra as usize] < self.size[rb as usize] {
            std::mem::swap(&mut ra, &mut rb);
        }
        self.parent[rb as usize] = ra;
        self.size[ra as usize] += self.size[rb as usize];
    }

    /// Map every slot to the smallest slot id in its class.
    pub fn canonical_map(&mut self) -> Vec<u32> {
        let len = self.len();
        let mut min_of_root: Vec<u32> = (0..len as u32).collect();
        for i in 0..len as u32 {
            let root = self.find(i);
            if i < min_of_root[root as usize] {
                min_of_root[root as usize] = i;
            }
        }
        (0..len as u32).map(|i| min_of_root[self.find(i) as usize]).collect()
    }
}
