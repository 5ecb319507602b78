//! Fixed-depth sparse octree of voxel blocks with up-propagated summaries.
//!
//! Finest voxels live at level `depth`; the root covers the whole cube at
//! level 0. A leaf stored above the finest level represents a uniform block
//! (all finest voxels in its region carry the same data), which is how free
//! space stays cheap and how pruning works.

use super::VoxelData;

/// Up-propagated per-node statistic: max accumulated log-odds over observed
/// descendants plus the count of observed finest voxels in the subtree.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Summary {
    pub max_occupancy: f64,
    pub observed: u64,
}

impl Summary {
    fn empty() -> Self {
        Summary {
            max_occupancy: f64::NEG_INFINITY,
            observed: 0,
        }
    }

    fn merge(&mut self, other: &Summary) {
        self.max_occupancy = self.max_occupancy.max(other.max_occupancy);
        self.observed += other.observed;
    }
}

pub enum Node {
    Branch(Box<BranchNode>),
    /// Voxel payload; above the finest level this is a uniform block.
    Leaf(VoxelData),
}

pub struct BranchNode {
    pub children: [Option<Node>; 8],
    pub summary: Summary,
}

impl BranchNode {
    fn empty() -> Self {
        BranchNode {
            children: [None, None, None, None, None, None, None, None],
            summary: Summary::empty(),
        }
    }
}

/// Result of `audit_and_propagate`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct AuditReport {
    /// Allocated nodes after the pass (branches + leaves).
    pub nodes: usize,
    /// Stored summaries that disagreed with the bottom-up recomputation.
    pub violations: usize,
    /// Branches collapsed into uniform leaves.
    pub pruned: usize,
}

impl AuditReport {
    pub fn is_ok(&self) -> bool {
        self.violations == 0
    }
}

pub struct Octree {
    depth: u32,
    root: Option<Node>,
}

impl Octree {
    pub fn new(depth: u32) -> Self {
        assert!(depth >= 1 && depth <= 21, "octree depth out of range");
        Octree { depth, root: None }
    }

    pub fn depth(&self) -> u32 {
        self.depth
    }

    /// Edge length of a node region at `level`, in finest voxels.
    fn region_edge(&self, level: u32) -> u64 {
        1u64 << (self.depth - level)
    }

    fn region_volume(&self, level: u32) -> u64 {
        let e = self.region_edge(level);
        e * e * e
    }

    fn leaf_summary(&self, data: &VoxelData, level: u32) -> Summary {
        if data.weight == 0 {
            Summary::empty()
        } else {
            Summary {
                max_occupancy: data.accumulated(),
                observed: self.region_volume(level),
            }
        }
    }

    /// Child slot index for voxel `v` at a branch on `level`.
    fn child_index(&self, v: [u32; 3], level: u32) -> usize {
        let bit = self.depth - 1 - level;
        let x = ((v[0] >> bit) & 1) as usize;
        let y = ((v[1] >> bit) & 1) as usize;
        let z = ((v[2] >> bit) & 1) as usize;
        x | (y << 1) | (z << 2)
    }

    /// Voxel payload at finest coordinates, resolving uniform blocks.
    pub fn get(&self, v: [u32; 3]) -> Option<VoxelData> {
        let mut node = self.root.as_ref()?;
        let mut level = 0;
        loop {
            match node {
                Node::Leaf(data) => return Some(*data),
                Node::Branch(b) => {
                    let idx = self.child_index(v, level);
                    node = b.children[idx].as_ref()?;
                    level += 1;
                }
            }
        }
    }

    /// Applies one measurement `l` to the finest voxel `v`.
    pub fn update_voxel(&mut self, v: [u32; 3], l: f64, w_max: u32) {
        let depth = self.depth;
        let root = self.root.take();
        self.root = Some(self.update_rec(root, 0, depth, v, l, w_max));
    }

    fn update_rec(
        &self,
        node: Option<Node>,
        level: u32,
        target_level: u32,
        v: [u32; 3],
        l: f64,
        w_max: u32,
    ) -> Node {
        if level == target_level {
            // Arrived at the node that should absorb the update. A branch here
            // means finer detail already exists below: push the update down to
            // every finest voxel in the region.
            return match node {
                None => Node::Leaf(VoxelData::with_first(l)),
                Some(Node::Leaf(mut data)) => {
                    data.update(l, w_max);
                    Node::Leaf(data)
                }
                Some(Node::Branch(b)) => self.update_whole_branch(*b, level, l, w_max),
            };
        }
        let mut branch = match node {
            None => BranchNode::empty(),
            Some(Node::Branch(b)) => *b,
            Some(Node::Leaf(data)) => self.split_leaf(data, level),
        };
        let idx = self.child_index(v, level);
        let child = branch.children[idx].take();
        branch.children[idx] = Some(self.update_rec(child, level + 1, target_level, v, l, w_max));
        branch.summary = self.recompute_summary(&branch, level);
        Node::Branch(Box::new(branch))
    }

    /// Expands a uniform block one level so a descent can continue into it.
    fn split_leaf(&self, data: VoxelData, level: u32) -> BranchNode {
        debug_assert!(level < self.depth, "cannot split a finest-level leaf");
        let mut b = BranchNode::empty();
        for slot in b.children.iter_mut() {
            *slot = Some(Node::Leaf(data));
        }
        b.summary = self.recompute_summary(&b, level);
        b
    }

    /// Applies `l` once to every finest voxel in an existing branch's region.
    fn update_whole_branch(&self, mut branch: BranchNode, level: u32, l: f64, w_max: u32) -> Node {
        for slot in branch.children.iter_mut() {
            let updated = match slot.take() {
                None => Node::Leaf(VoxelData::with_first(l)),
                Some(Node::Leaf(mut data)) => {
                    data.update(l, w_max);
                    Node::Leaf(data)
                }
                Some(Node::Branch(b)) => self.update_whole_branch(*b, level + 1, l, w_max),
            };
            *slot = Some(updated);
        }
        branch.summary = self.recompute_summary(&branch, level);
        Node::Branch(Box::new(branch))
    }

    /// Applies one measurement `l` to every finest voxel in the region of the
    /// node addressed by (`level`, `v`), allocating a uniform block when the
    /// region has no finer detail.
    pub fn update_region(&mut self, v: [u32; 3], level: u32, l: f64, w_max: u32) {
        debug_assert!(level <= self.depth);
        let root = self.root.take();
        self.root = Some(self.update_rec(root, 0, level, v, l, w_max));
    }

    /// Overwrites the payload of the finest voxel `v`.
    pub fn set_voxel(&mut self, v: [u32; 3], data: VoxelData) {
        let root = self.root.take();
        self.root = Some(self.set_rec(root, 0, v, data));
    }

    fn set_rec(&self, node: Option<Node>, level: u32, v: [u32; 3], data: VoxelData) -> Node {
        if level == self.depth {
            return Node::Leaf(data);
        }
        let mut branch = match node {
            None => BranchNode::empty(),
            Some(Node::Branch(b)) => *b,
            Some(Node::Leaf(existing)) => self.split_leaf(existing, level),
        };
        let idx = self.child_index(v, level);
        let child = branch.children[idx].take();
        branch.children[idx] = Some(self.set_rec(child, level + 1, v, data));
        branch.summary = self.recompute_summary(&branch, level);
        Node::Branch(Box::new(branch))
    }

    fn recompute_summary(&self, branch: &BranchNode, level: u32) -> Summary {
        let mut s = Summary::empty();
        for child in branch.children.iter().flatten() {
            match child {
                Node::Leaf(data) => s.merge(&self.leaf_summary(data, level + 1)),
                Node::Branch(b) => s.merge(&b.summary),
            }
        }
        s
    }

    /// Recomputes all summaries bottom-up, prunes saturated-identical sibling
    /// leaves, and reports any stored summary that disagreed.
    pub fn audit_and_propagate(&mut self, w_max: u32) -> AuditReport {
        let mut report = AuditReport::default();
        if let Some(root) = self.root.take() {
            let (node, _) = self.audit_rec(root, 0, w_max, &mut report);
            self.root = Some(node);
        }
        report
    }

    fn audit_rec(
        &self,
        node: Node,
        level: u32,
        w_max: u32,
        report: &mut AuditReport,
    ) -> (Node, Summary) {
        match node {
            Node::Leaf(data) => {
                report.nodes += 1;
                (Node::Leaf(data), self.leaf_summary(&data, level))
            }
            Node::Branch(mut b) => {
                let mut summary = Summary::empty();
                for slot in b.children.iter_mut() {
                    if let Some(child) = slot.take() {
                        let (child, child_summary) = self.audit_rec(child, level + 1, w_max, report);
                        summary.merge(&child_summary);
                        *slot = Some(child);
                    }
                }
                if b.summary != summary {
                    report.violations += 1;
                    b.summary = summary;
                }
                if let Some(data) = saturated_identical(&b, w_max) {
                    report.pruned += 1;
                    // the collapsed leaf replaces 8 child leaves + this branch
                    report.nodes -= 8;
                    report.nodes += 1;
                    return (Node::Leaf(data), summary);
                }
                report.nodes += 1;
                (Node::Branch(b), summary)
            }
        }
    }

    /// Visits every stored leaf as `(level, min_voxel_coords, data)`.
    pub fn visit_leaves<F: FnMut(u32, [u32; 3], &VoxelData)>(&self, mut f: F) {
        if let Some(root) = self.root.as_ref() {
            self.visit_rec(root, 0, [0, 0, 0], &mut f);
        }
    }

    fn visit_rec<F: FnMut(u32, [u32; 3], &VoxelData)>(
        &self,
        node: &Node,
        level: u32,
        origin: [u32; 3],
        f: &mut F,
    ) {
        match node {
            Node::Leaf(data) => f(level, origin, data),
            Node::Branch(b) => {
                let half = (self.region_edge(level) / 2) as u32;
                for (idx, child) in b.children.iter().enumerate() {
                    if let Some(child) = child {
                        let o = [
                            origin[0] + ((idx & 1) as u32) * half,
                            origin[1] + (((idx >> 1) & 1) as u32) * half,
                            origin[2] + (((idx >> 2) & 1) as u32) * half,
                        ];
                        self.visit_rec(child, level + 1, o, f);
                    }
                }
            }
        }
    }

    pub fn node_count(&self) -> usize {
        fn count(node: &Node) -> usize {
            match node {
                Node::Leaf(_) => 1,
                Node::Branch(b) => 1 + b.children.iter().flatten().map(count).sum::<usize>(),
            }
        }
        self.root.as_ref().map_or(0, count)
    }

    pub fn observed_voxel_count(&self) -> u64 {
        match self.root.as_ref() {
            None => 0,
            Some(Node::Branch(b)) => b.summary.observed,
            Some(Node::Leaf(data)) => self.leaf_summary(data, 0).observed,
        }
    }
}

fn saturated_identical(branch: &BranchNode, w_max: u32) -> Option<VoxelData> {
    let mut first: Option<VoxelData> = None;
    for child in &branch.children {
        match child {
            Some(Node::Leaf(data)) if data.weight == w_max => match first {
                None => first = Some(*data),
                Some(f) if f.mean_log_odds.to_bits() == data.mean_log_odds.to_bits() => {}
                _ => return None,
            },
            _ => return None,
        }
    }
    first
}
