//! The partition tree: recursive latent-action splits, UCB descent and the
//! regions induced by root-to-leaf paths.

use std::collections::VecDeque;
use std::sync::Arc;

use crate::domain::{Bounds, Dataset};
use crate::error::{Error, Result};
use crate::partition::{learn_latent_action, KernelChoice, LatentAction, Side};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TreeConfig {
    /// A leaf with strictly more than `theta` samples is split.
    pub theta: usize,
    pub cp: f64,
    pub kernel: KernelChoice,
    pub svm_c: f64,
}

impl Default for TreeConfig {
    fn default() -> Self {
        Self {
            theta: 20,
            cp: 1.0,
            kernel: KernelChoice::Rbf,
            svm_c: 1.0,
        }
    }
}

pub type NodeId = usize;

#[derive(Debug, Clone)]
pub struct PartitionNode {
    pub id: NodeId,
    pub parent: Option<NodeId>,
    /// Good child.
    pub left: Option<NodeId>,
    /// Bad child.
    pub right: Option<NodeId>,
    pub action: Option<Arc<LatentAction>>,
    /// Dataset indices of the samples routed here.
    pub sample_ids: Vec<usize>,
    pub n: usize,
    /// Sum of sample rewards (not the mean).
    pub v: f64,
    pub depth: usize,
    /// Set when a split was attempted and produced an empty side.
    pub degenerate: bool,
}

impl PartitionNode {
    pub fn is_leaf(&self) -> bool {
        self.action.is_none()
    }

    /// Mean reward; `NaN` for an empty node.
    pub fn mean(&self) -> f64 {
        self.v / self.n as f64
    }
}

/// Box bounds intersected with `(classifier, side)` constraints.
#[derive(Debug, Clone)]
pub struct Region {
    pub constraints: Vec<(Arc<LatentAction>, Side)>,
    pub bounds: Bounds,
}

impl Region {
    pub fn unconstrained(bounds: Bounds) -> Self {
        Self {
            constraints: Vec::new(),
            bounds,
        }
    }

    pub fn dim(&self) -> usize {
        self.bounds.dim()
    }

    pub fn is_unconstrained(&self) -> bool {
        self.constraints.is_empty()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        self.bounds.contains(x)
            && self
                .constraints
                .iter()
                .all(|(action, side)| action.classify(x) == *side)
    }
}

impl Region {
    /// Membership of every point; agrees exactly with [`Region::contains`].
    pub fn contains_many<P: AsRef<[f64]>>(&self, points: &[P]) -> Vec<bool> {
        let mut inside: Vec<bool> = points
            .iter()
            .map(|p| self.bounds.contains(p.as_ref()))
            .collect();
        for (action, side) in &self.constraints {
            let alive: Vec<usize> = (0..points.len()).filter(|&i| inside[i]).collect();
            if alive.is_empty() {
                break;
            }
            let rows: Vec<&[f64]> = alive.iter().map(|&i| points[i].as_ref()).collect();
            for (&i, got) in alive.iter().zip(action.classify_many(&rows)) {
                inside[i] = got == *side;
            }
        }
        inside
    }
}

impl Region {
    /// Per-constraint balls around `center` from [`LatentAction::stable_ball`],
    /// for use with [`Region::contains_many_near`].
    pub(crate) fn stable_balls(&self, center: &[f64]) -> Vec<(Side, f64)> {
        self.constraints
            .iter()
            .map(|(action, _)| action.stable_ball(center))
            .collect()
    }

    /// Same as [`Region::contains_many`] for points lying within distance `r`
    /// of the center the balls were computed for. Constraints whose ball
    /// covers all the points are decided without evaluating the model.
    pub(crate) fn contains_many_near<P: AsRef<[f64]>>(
        &self,
        points: &[P],
        balls: &[(Side, f64)],
        r: f64,
    ) -> Vec<bool> {
        let mut inside: Vec<bool> = points
            .iter()
            .map(|p| self.bounds.contains(p.as_ref()))
            .collect();
        for ((action, side), &(ball_side, radius)) in self.constraints.iter().zip(balls) {
            if r < radius {
                if ball_side != *side {
                    inside.iter_mut().for_each(|k| *k = false);
                    break;
                }
                continue;
            }
            let alive: Vec<usize> = (0..points.len()).filter(|&i| inside[i]).collect();
            if alive.is_empty() {
                break;
            }
            let rows: Vec<&[f64]> = alive.iter().map(|&i| points[i].as_ref()).collect();
            for (&i, got) in alive.iter().zip(action.classify_many(&rows)) {
                inside[i] = got == *side;
            }
        }
        inside
    }
}

pub fn region_contains(region: &Region, x: &[f64]) -> bool {
    region.contains(x)
}

#[derive(Debug, Clone)]
pub struct PartitionTree {
    nodes: Vec<PartitionNode>,
    bounds: Bounds,
    pub config: TreeConfig,
}

/// The outcome of a UCB descent.
#[derive(Debug, Clone)]
pub struct Selection {
    pub leaf: NodeId,
    /// Node ids from the root to the leaf, inclusive.
    pub path: Vec<NodeId>,
    pub region: Region,
}

/// Rebuilds the tree from scratch over every sample in `dataset`.
pub fn build_tree(dataset: &Dataset, config: TreeConfig) -> Result<PartitionTree> {
    if dataset.is_empty() {
        return Err(Error::State(
            "cannot build a tree over an empty dataset".into(),
        ));
    }
    let evals = dataset.evals();
    let root = PartitionNode {
        id: 0,
        parent: None,
        left: None,
        right: None,
        action: None,
        sample_ids: (0..evals.len()).collect(),
        n: evals.len(),
        v: evals.iter().map(|e| e.reward).sum(),
        depth: 0,
        degenerate: false,
    };
    let mut nodes = vec![root];
    let mut queue = VecDeque::from([0]);
    while let Some(id) = queue.pop_front() {
        if nodes[id].n <= config.theta {
            continue;
        }
        let samples: Vec<_> = nodes[id].sample_ids.iter().map(|&i| &evals[i]).collect();
        match learn_latent_action(&samples, config.kernel, config.svm_c) {
            Ok(split) => {
                let depth = nodes[id].depth + 1;
                let child = |positions: &[usize], nodes: &mut Vec<PartitionNode>| {
                    let sample_ids: Vec<usize> =
                        positions.iter().map(|&p| nodes[id].sample_ids[p]).collect();
                    let v = sample_ids.iter().map(|&i| evals[i].reward).sum();
                    let cid = nodes.len();
                    nodes.push(PartitionNode {
                        id: cid,
                        parent: Some(id),
                        left: None,
                        right: None,
                        action: None,
                        n: sample_ids.len(),
                        sample_ids,
                        v,
                        depth,
                        degenerate: false,
                    });
                    cid
                };
                let left = child(&split.good, &mut nodes);
                let right = child(&split.bad, &mut nodes);
                let node = &mut nodes[id];
                node.left = Some(left);
                node.right = Some(right);
                node.action = Some(Arc::new(split.action));
                queue.push_back(left);
                queue.push_back(right);
            }
            Err(Error::SplitDegenerate(_)) => nodes[id].degenerate = true,
            Err(e) => return Err(e),
        }
    }
    Ok(PartitionTree {
        nodes,
        bounds: dataset.bounds().clone(),
        config,
    })
}

/// `mean + 2 cp sqrt(2 ln(parent_n) / n)`, with `node_v` the reward sum.
pub fn ucb_value(node_v: f64, node_n: usize, parent_n: usize, cp: f64) -> f64 {
    if node_n == 0 {
        return f64::INFINITY;
    }
    let n = node_n as f64;
    let mean = node_v / n;
    if cp == 0.0 {
        return mean;
    }
    mean + 2.0 * cp * (2.0 * (parent_n as f64).ln() / n).sqrt()
}

pub fn ucb_score(node: &PartitionNode, parent_n: usize, cp: f64) -> f64 {
    ucb_value(node.v, node.n, parent_n, cp)
}

impl PartitionTree {
    pub fn root(&self) -> NodeId {
        0
    }

    pub fn nodes(&self) -> &[PartitionNode] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> Option<&PartitionNode> {
        self.nodes.get(id)
    }

    pub fn bounds(&self) -> &Bounds {
        &self.bounds
    }

    pub fn leaves(&self) -> impl Iterator<Item = &PartitionNode> {
        self.nodes.iter().filter(|n| n.is_leaf())
    }

    /// Number of internal nodes.
    pub fn num_splits(&self) -> usize {
        self.nodes.iter().filter(|n| !n.is_leaf()).count()
    }

    /// Depth of the deepest leaf; a lone root has depth 0.
    pub fn depth(&self) -> usize {
        self.nodes.iter().map(|n| n.depth).max().unwrap_or(0)
    }

    pub fn sibling(&self, id: NodeId) -> Option<NodeId> {
        let parent = &self.nodes[self.nodes.get(id)?.parent?];
        if parent.left == Some(id) {
            parent.right
        } else {
            parent.left
        }
    }

    /// Node ids from the root down to `id`.
    pub fn path_to(&self, id: NodeId) -> Vec<NodeId> {
        let mut path = vec![id];
        let mut cur = id;
        while let Some(p) = self.nodes[cur].parent {
            path.push(p);
            cur = p;
        }
        path.reverse();
        path
    }

    /// Region of node `id`: the bounds plus one constraint per ancestor.
    pub fn region_of(&self, id: NodeId) -> Region {
        let path = self.path_to(id);
        let constraints = path
            .windows(2)
            .map(|w| {
                let parent = &self.nodes[w[0]];
                let side = if parent.left == Some(w[1]) {
                    Side::Good
                } else {
                    Side::Bad
                };
                (
                    Arc::clone(parent.action.as_ref().expect("internal node has an action")),
                    side,
                )
            })
            .collect();
        Region {
            constraints,
            bounds: self.bounds.clone(),
        }
    }

    /// Descends from the root by UCB score. Ties go to the good child.
    pub fn select_path(&self) -> Selection {
        let cp = self.config.cp;
        let mut cur = self.root();
        let mut path = vec![cur];
        while let (Some(l), Some(r)) = (self.nodes[cur].left, self.nodes[cur].right) {
            let parent_n = self.nodes[cur].n;
            let sl = ucb_score(&self.nodes[l], parent_n, cp);
            let sr = ucb_score(&self.nodes[r], parent_n, cp);
            cur = if sr > sl { r } else { l };
            path.push(cur);
        }
        Selection {
            leaf: cur,
            region: self.region_of(cur),
            path,
        }
    }

    /// Mean reward of the samples in leaf `id`.
    pub fn leaf_mean(&self, id: NodeId) -> Result<f64> {
        match self.nodes.get(id) {
            Some(n) if n.is_leaf() => Ok(n.mean()),
            Some(_) => Err(Error::State(format!("node {id} is not a leaf"))),
            None => Err(Error::State(format!("node {id} does not exist"))),
        }
    }

    /// The leaf that `x` is routed to by the classifiers.
    pub fn route(&self, x: &[f64]) -> NodeId {
        let mut cur = self.root();
        while let Some(action) = &self.nodes[cur].action {
            cur = match action.classify(x) {
                Side::Good => self.nodes[cur].left.expect("internal node has children"),
                Side::Bad => self.nodes[cur].right.expect("internal node has children"),
            };
        }
        cur
    }
}

pub fn select_path(tree: &PartitionTree) -> Selection {
    tree.select_path()
}

pub fn leaf_mean(tree: &PartitionTree, leaf: NodeId) -> Result<f64> {
    tree.leaf_mean(leaf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{Mode, Point};

    fn dataset(xs: &[f64], values: &[f64]) -> Dataset {
        let mut ds = Dataset::new(Bounds::uniform(1, -1.0, 6.0).unwrap(), Mode::Minimize);
        for (x, v) in xs.iter().zip(values) {
            ds.record(Point::new(vec![*x]).unwrap(), *v).unwrap();
        }
        ds
    }

    fn leaf(v: f64, n: usize) -> PartitionNode {
        PartitionNode {
            id: 0,
            parent: None,
            left: None,
            right: None,
            action: None,
            sample_ids: Vec::new(),
            n,
            v,
            depth: 0,
            degenerate: false,
        }
    }

    /// Root with two hand-made leaves and a dummy classifier.
    fn two_leaf_tree(left: (f64, usize), right: (f64, usize), cp: f64) -> PartitionTree {
        let mut root = leaf(
            left.0 * left.1 as f64 + right.0 * right.1 as f64,
            left.1 + right.1,
        );
        root.left = Some(1);
        root.right = Some(2);
        root.action = Some(Arc::new(LatentAction {
            model: crate::partition::SvmModel::linear(vec![1.0], 0.0),
            good_side: crate::partition::Sign::Positive,
        }));
        let mut l = leaf(left.0 * left.1 as f64, left.1);
        l.id = 1;
        l.parent = Some(0);
        l.depth = 1;
        let mut r = leaf(right.0 * right.1 as f64, right.1);
        r.id = 2;
        r.parent = Some(0);
        r.depth = 1;
        PartitionTree {
            nodes: vec![root, l, r],
            bounds: Bounds::uniform(1, -1.0, 1.0).unwrap(),
            config: TreeConfig {
                cp,
                ..TreeConfig::default()
            },
        }
    }

    #[test]
    fn below_threshold_is_single_leaf() {
        let ds = dataset(&[0.0, 1.0, 2.0, 3.0, 4.0], &[1.0, 2.0, 3.0, 4.0, 5.0]);
        let tree = build_tree(
            &ds,
            TreeConfig {
                theta: 10,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(tree.nodes().len(), 1);
        assert_eq!(tree.depth(), 0);
        let sel = tree.select_path();
        assert_eq!(sel.leaf, 0);
        assert!(sel.region.is_unconstrained());
    }

    #[test]
    fn four_sample_example_splits_once() {
        let ds = dataset(&[0.0, 0.1, 5.0, 5.1], &[0.0, 1.0, 10.0, 11.0]);
        let tree = build_tree(
            &ds,
            TreeConfig {
                theta: 3,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(tree.num_splits(), 1);
        let left = tree.node(tree.node(0).unwrap().left.unwrap()).unwrap();
        assert_eq!(left.sample_ids, vec![0, 1]);
        assert!(tree
            .leaf_mean(0)
            .unwrap_err()
            .to_string()
            .contains("not a leaf"));
        assert_eq!(tree.node(0).unwrap().mean(), -5.5);
    }

    #[test]
    fn identical_inputs_mark_root_degenerate() {
        let ds = dataset(&[2.0; 6], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let tree = build_tree(
            &ds,
            TreeConfig {
                theta: 2,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(tree.depth(), 0);
        assert!(tree.node(0).unwrap().degenerate);
    }

    #[test]
    fn empty_dataset_is_an_error() {
        let ds = dataset(&[], &[]);
        assert!(build_tree(&ds, TreeConfig::default()).is_err());
    }

    #[test]
    fn ucb_formula() {
        let s = ucb_score(&leaf(5.0, 5), 10, 1.0);
        let expected = 1.0 + 2.0 * (2.0 * 10f64.ln() / 5.0).sqrt();
        assert!((s - expected).abs() < 1e-12);
        assert!((s - 2.91938).abs() < 1e-4);
        assert_eq!(ucb_score(&leaf(7.5, 3), 10, 0.0), 2.5);
        assert!(ucb_score(&leaf(1.0, 1), 101, 1.0) > ucb_score(&leaf(100.0, 100), 101, 1.0));
        assert_eq!(ucb_score(&leaf(0.0, 0), 10, 1.0), f64::INFINITY);
    }

    #[test]
    fn greedy_and_exploring_selection() {
        let greedy = two_leaf_tree((2.0, 10), (1.0, 10), 0.0);
        assert_eq!(greedy.select_path().leaf, 1);

        let explore = two_leaf_tree((2.0, 100), (1.9, 1), 1.0);
        let r = 1.9 + 2.0 * (2.0 * 101f64.ln()).sqrt();
        let l = 2.0 + 2.0 * (2.0 * 101f64.ln() / 100.0).sqrt();
        assert!((r - 7.976).abs() < 1e-3 && (l - 2.607).abs() < 1e-3);
        let sel = explore.select_path();
        assert_eq!(sel.leaf, 2);
        assert_eq!(sel.path, vec![0, 2]);
        assert_eq!(sel.region.constraints.len(), 1);
        assert_eq!(sel.region.constraints[0].1, Side::Bad);
    }

    #[test]
    fn ties_prefer_good_child() {
        let tie = two_leaf_tree((1.0, 5), (1.0, 5), 1.0);
        assert_eq!(tie.select_path().leaf, 1);
    }

    #[test]
    fn region_membership() {
        let b = Bounds::uniform(1, -1.0, 1.0).unwrap();
        let open = Region::unconstrained(b);
        assert!(region_contains(&open, &[0.5]));
        assert!(!region_contains(&open, &[1.5]));
        let tree = two_leaf_tree((1.0, 5), (1.0, 5), 1.0);
        let good = tree.region_of(1);
        assert!(good.contains(&[0.5]));
        assert!(!good.contains(&[-0.5]));
        assert!(!good.contains(&[2.0]));
        assert_eq!(tree.sibling(1), Some(2));
    }

    #[test]
    fn leaf_mean_examples() {
        let ds = dataset(&[0.0, 1.0], &[1.0, 3.0]);
        let tree = build_tree(&ds, TreeConfig::default()).unwrap();
        assert_eq!(leaf_mean(&tree, 0).unwrap(), -2.0);
        assert!(leaf_mean(&tree, 5).is_err());
    }
    #[test]
    fn near_membership_matches_exact() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for kernel in [KernelChoice::Rbf, KernelChoice::Linear] {
            let b = Bounds::uniform(3, -2.0, 2.0).unwrap();
            let mut ds = Dataset::new(b.clone(), Mode::Minimize);
            for _ in 0..80 {
                let p = b.sample_uniform(&mut rng);
                let v = p.iter().map(|x| (x - 0.5) * (x - 0.5)).sum();
                ds.record(p, v).unwrap();
            }
            let tree = build_tree(
                &ds,
                TreeConfig {
                    theta: 10,
                    kernel,
                    ..Default::default()
                },
            )
            .unwrap();
            let mut skipped = 0;
            for node in tree.leaves() {
                let region = tree.region_of(node.id);
                for e in ds.iter().take(20) {
                    let balls = region.stable_balls(&e.point);
                    for r in [1e-4, 1e-2, 0.1, 0.5, 2.0] {
                        skipped += balls.iter().filter(|(_, rad)| r < *rad).count();
                        let pts: Vec<Vec<f64>> = (0..30)
                            .map(|_| {
                                let dir: Vec<f64> =
                                    (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
                                let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
                                let t = r * rng.random_range(0.0..1.0);
                                e.point
                                    .iter()
                                    .zip(&dir)
                                    .map(|(c, v)| c + t * v / norm)
                                    .collect()
                            })
                            .collect();
                        let exact: Vec<bool> = pts.iter().map(|p| region.contains(p)).collect();
                        assert_eq!(region.contains_many_near(&pts, &balls, r), exact);
                    }
                }
            }
            assert!(skipped > 0, "{kernel}: no constraint was ever skipped");
        }
    }
}
