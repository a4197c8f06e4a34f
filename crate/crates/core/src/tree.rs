//! The category tree: structure, validation, canonical comparison,
//! fingerprints, JSON files and DOT output.
//!
//! Node ids are paths: the root is `0`, its children `0.0`, `0.1`, and so on.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{fsx, Error, Result};
use crate::sim::canonical_partition;

pub const TREE_FORMAT: &str = "trunk-tree/1";
pub const ROOT_ID: &str = "0";

pub type NodeId = String;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Root,
    Supergroup,
    Leaf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    pub id: NodeId,
    pub depth: usize,
    pub kind: NodeKind,
    /// Dataset categories reaching this node.
    pub categories: BTreeSet<usize>,
    /// How this node splits its categories; empty for leaves.
    pub grouping: Vec<BTreeSet<usize>>,
    /// `children[i]` handles `grouping[i]`.
    pub children: Vec<NodeId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights_ref: Option<PathBuf>,
}

impl TreeNode {
    pub fn is_internal(&self) -> bool {
        !self.children.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trunk {
    pub format: String,
    pub dataset: String,
    pub category_names: Vec<String>,
    pub gv: f64,
    pub root_id: NodeId,
    pub nodes: BTreeMap<NodeId, TreeNode>,
    /// Digest of the config the tree was built with.
    pub created_with: String,
}

/// One broken structural rule.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub node: NodeId,
    pub rule: String,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "node {}: {}: {}", self.node, self.rule, self.detail)
    }
}

/// Outcome of [`compare`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub identical: bool,
    pub similarity: f64,
}

impl Trunk {
    /// A tree holding only the root over all `category_names`.
    pub fn new(
        dataset: impl Into<String>,
        category_names: Vec<String>,
        gv: f64,
        created_with: impl Into<String>,
    ) -> Self {
        let root = TreeNode {
            id: ROOT_ID.into(),
            depth: 0,
            kind: NodeKind::Root,
            categories: (0..category_names.len()).collect(),
            grouping: vec![],
            children: vec![],
            weights_ref: None,
        };
        Self {
            format: TREE_FORMAT.into(),
            dataset: dataset.into(),
            category_names,
            gv,
            root_id: ROOT_ID.into(),
            nodes: BTreeMap::from([(ROOT_ID.to_string(), root)]),
            created_with: created_with.into(),
        }
    }

    pub fn root(&self) -> &TreeNode {
        &self.nodes[&self.root_id]
    }

    pub fn node(&self, id: &str) -> Result<&TreeNode> {
        self.nodes.get(id).ok_or_else(|| Error::Tree(format!("no node `{id}`")))
    }

    pub fn num_categories(&self) -> usize {
        self.category_names.len()
    }

    /// Attach children for `grouping` below `parent`; returns their ids.
    /// Singleton sets become leaves.
    pub fn split(&mut self, parent: &str, grouping: Vec<BTreeSet<usize>>) -> Result<Vec<NodeId>> {
        let p = self.node(parent)?.clone();
        if p.is_internal() {
            return Err(Error::Tree(format!("node {parent} already has children")));
        }
        let union: BTreeSet<usize> = grouping.iter().flatten().copied().collect();
        let total: usize = grouping.iter().map(BTreeSet::len).sum();
        if union != p.categories || total != union.len() || grouping.iter().any(BTreeSet::is_empty) {
            return Err(Error::Tree(format!(
                "grouping {grouping:?} does not partition node {parent}"
            )));
        }
        let grouping = canonical_partition(grouping);
        let mut ids = Vec::new();
        for (i, set) in grouping.iter().enumerate() {
            let id = format!("{parent}.{i}");
            self.nodes.insert(
                id.clone(),
                TreeNode {
                    id: id.clone(),
                    depth: p.depth + 1,
                    kind: if set.len() == 1 {
                        NodeKind::Leaf
                    } else {
                        NodeKind::Supergroup
                    },
                    categories: set.clone(),
                    grouping: vec![],
                    children: vec![],
                    weights_ref: None,
                },
            );
            ids.push(id);
        }
        let node = self.nodes.get_mut(parent).unwrap();
        node.grouping = grouping;
        node.children = ids.clone();
        Ok(ids)
    }

    pub fn leaves(&self) -> impl Iterator<Item = &TreeNode> {
        self.nodes.values().filter(|n| n.children.is_empty())
    }

    pub fn internal_nodes(&self) -> impl Iterator<Item = &TreeNode> {
        self.nodes.values().filter(|n| n.is_internal())
    }

    /// Largest node depth: 0 for a lone root, 1 for a flat classifier.
    pub fn depth(&self) -> usize {
        self.nodes.values().map(|n| n.depth).max().unwrap_or(0)
    }

    /// Mean number of children per internal node (0 when there are none).
    pub fn mean_groups_per_node(&self) -> f64 {
        let (n, sum) = self
            .internal_nodes()
            .fold((0usize, 0usize), |(n, s), x| (n + 1, s + x.children.len()));
        if n == 0 {
            0.0
        } else {
            sum as f64 / n as f64
        }
    }

    /// Nodes from the root to the leaf of `category`.
    pub fn path_to(&self, category: usize) -> Result<Vec<NodeId>> {
        let mut path = vec![self.root_id.clone()];
        let mut cur = self.root();
        if !cur.categories.contains(&category) {
            return Err(Error::Tree(format!("category {category} is not in this tree")));
        }
        while cur.is_internal() {
            let g = cur
                .grouping
                .iter()
                .position(|s| s.contains(&category))
                .ok_or_else(|| Error::Tree(format!("node {} has no group for {category}", cur.id)))?;
            cur = self.node(&cur.children[g])?;
            path.push(cur.id.clone());
        }
        Ok(path)
    }

    /// The category of a leaf node.
    pub fn leaf_category(&self, id: &str) -> Result<usize> {
        let n = self.node(id)?;
        match (n.is_internal(), n.categories.len()) {
            (false, 1) => Ok(*n.categories.first().unwrap()),
            _ => Err(Error::Tree(format!("node {id} is not a leaf"))),
        }
    }

    pub fn category_label(&self, c: usize) -> String {
        self.category_names.get(c).cloned().unwrap_or_else(|| c.to_string())
    }
}

fn violation(node: &str, rule: &str, detail: impl Into<String>) -> Violation {
    Violation {
        node: node.into(),
        rule: rule.into(),
        detail: detail.into(),
    }
}

/// Every broken invariant; empty for a valid tree.
pub fn validate(tree: &Trunk) -> Vec<Violation> {
    let mut out = Vec::new();
    if tree.format != TREE_FORMAT {
        out.push(violation(
            "-",
            "format",
            format!("expected `{TREE_FORMAT}`, found `{}`", tree.format),
        ));
    }
    let Some(root) = tree.nodes.get(&tree.root_id) else {
        out.push(violation(&tree.root_id, "missing-root", "root id not present in nodes"));
        return out;
    };
    let k = tree.num_categories();
    let all: BTreeSet<usize> = (0..k).collect();
    if root.categories != all {
        out.push(violation(
            &root.id,
            "root-categories",
            format!("root covers {:?}, dataset has {k} categories", root.categories),
        ));
    }
    if root.depth != 0 {
        out.push(violation(&root.id, "depth", format!("root depth is {}", root.depth)));
    }

    let mut parents: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for (id, n) in &tree.nodes {
        if *id != n.id {
            out.push(violation(
                id,
                "id",
                format!("stored under `{id}` but names itself `{}`", n.id),
            ));
        }
        for c in &n.children {
            if !tree.nodes.contains_key(c) {
                out.push(violation(id, "dangling-child", format!("child `{c}` does not exist")));
            }
            parents.entry(c.as_str()).or_default().push(id.as_str());
        }
        let expected_kind = if *id == tree.root_id {
            NodeKind::Root
        } else if n.children.is_empty() {
            NodeKind::Leaf
        } else {
            NodeKind::Supergroup
        };
        if n.kind != expected_kind {
            out.push(violation(
                id,
                "kind",
                format!("marked {:?}, structure says {expected_kind:?}", n.kind),
            ));
        }
        if n.children.is_empty() != (n.categories.len() == 1) {
            out.push(violation(
                id,
                "leaf",
                format!("{} categories with {} children", n.categories.len(), n.children.len()),
            ));
        }
        if n.children.len() == 1 {
            out.push(violation(
                id,
                "single-child",
                "internal node with one child does not refine its categories",
            ));
        }
        if n.children.len() != n.grouping.len() {
            out.push(violation(
                id,
                "grouping",
                format!("{} children for {} groups", n.children.len(), n.grouping.len()),
            ));
        }
        let union: BTreeSet<usize> = n.grouping.iter().flatten().copied().collect();
        let total: usize = n.grouping.iter().map(BTreeSet::len).sum();
        if !n.grouping.is_empty()
            && (union != n.categories || total != union.len() || n.grouping.iter().any(BTreeSet::is_empty))
        {
            out.push(violation(
                id,
                "partition",
                "grouping is not a partition of the node's categories",
            ));
        }
        for (set, c) in n.grouping.iter().zip(&n.children) {
            if let Some(child) = tree.nodes.get(c) {
                if &child.categories != set {
                    out.push(violation(
                        c,
                        "child-categories",
                        format!("has {:?}, parent group is {set:?}", child.categories),
                    ));
                }
                if child.depth != n.depth + 1 {
                    out.push(violation(
                        c,
                        "depth",
                        format!("depth {} below parent depth {}", child.depth, n.depth),
                    ));
                }
            }
        }
    }
    for id in tree.nodes.keys() {
        let ps = parents.get(id.as_str()).map(Vec::len).unwrap_or(0);
        if *id == tree.root_id {
            if ps > 0 {
                out.push(violation(id, "cycle", "root has a parent"));
            }
        } else if ps == 0 {
            out.push(violation(id, "orphan", "no parent links to this node"));
        } else if ps > 1 {
            out.push(violation(id, "multiple-parents", format!("{ps} parents")));
        }
    }
    // Reachability and cycles.
    let mut seen = BTreeSet::new();
    let mut stack = vec![tree.root_id.as_str()];
    while let Some(id) = stack.pop() {
        if !seen.insert(id) {
            out.push(violation(id, "cycle", "reached twice from the root"));
            continue;
        }
        if let Some(n) = tree.nodes.get(id) {
            stack.extend(n.children.iter().map(String::as_str));
        }
    }
    // Leaf/category bijection over reachable leaves.
    let mut leaf_of: BTreeMap<usize, usize> = BTreeMap::new();
    for id in &seen {
        if let Some(n) = tree.nodes.get(*id) {
            if n.children.is_empty() {
                for &c in &n.categories {
                    *leaf_of.entry(c).or_insert(0) += 1;
                }
            }
        }
    }
    for c in 0..k {
        match leaf_of.get(&c).copied().unwrap_or(0) {
            0 => out.push(violation(
                &tree.root_id,
                "leaf-coverage",
                format!("missing leaf for category {}", tree.category_label(c)),
            )),
            1 => {}
            m => out.push(violation(
                &tree.root_id,
                "leaf-coverage",
                format!("category {} has {m} leaves", tree.category_label(c)),
            )),
        }
    }
    if let Some(c) = leaf_of.keys().find(|&&c| c >= k) {
        out.push(violation(
            &tree.root_id,
            "leaf-coverage",
            format!("leaf for unknown category {c}"),
        ));
    }
    out
}

fn ensure_valid(tree: &Trunk) -> Result<()> {
    let v = validate(tree);
    if v.is_empty() {
        Ok(())
    } else {
        Err(Error::InvalidTree(v))
    }
}

/// Children ordered by smallest category, ids renumbered in DFS order.
pub fn canonicalize(tree: &Trunk) -> Result<Trunk> {
    ensure_valid(tree)?;
    let mut out = Trunk {
        nodes: BTreeMap::new(),
        root_id: ROOT_ID.into(),
        ..tree.clone()
    };
    fn walk(src: &Trunk, old: &str, new: String, out: &mut Trunk) {
        let n = &src.nodes[old];
        let mut order: Vec<usize> = (0..n.children.len()).collect();
        order.sort_by_key(|&i| *n.grouping[i].first().unwrap());
        let children: Vec<NodeId> = (0..order.len()).map(|i| format!("{new}.{i}")).collect();
        out.nodes.insert(
            new.clone(),
            TreeNode {
                id: new.clone(),
                depth: n.depth,
                kind: n.kind,
                categories: n.categories.clone(),
                grouping: order.iter().map(|&i| n.grouping[i].clone()).collect(),
                children: children.clone(),
                weights_ref: n.weights_ref.clone(),
            },
        );
        for (&i, c) in order.iter().zip(children) {
            walk(src, &n.children[i], c, out);
        }
    }
    walk(tree, &tree.root_id, ROOT_ID.into(), &mut out);
    Ok(out)
}

fn structure(tree: &Trunk) -> Vec<(usize, Vec<usize>)> {
    let mut v: Vec<(usize, Vec<usize>)> = tree
        .nodes
        .values()
        .map(|n| (n.depth, n.categories.iter().copied().collect()))
        .collect();
    v.sort();
    v
}

/// SHA-256 of the sorted `(depth, categories)` multiset; ignores ids and weights.
pub fn fingerprint(tree: &Trunk) -> Result<String> {
    ensure_valid(tree)?;
    let mut h = Sha256::new();
    for (d, cats) in structure(tree) {
        let cats: Vec<String> = cats.iter().map(usize::to_string).collect();
        h.update(format!("{d}:{}\n", cats.join(",")));
    }
    Ok(hex::encode(h.finalize()))
}

fn internal_sets(tree: &Trunk) -> BTreeMap<Vec<usize>, usize> {
    let mut m = BTreeMap::new();
    for n in tree.internal_nodes() {
        *m.entry(n.categories.iter().copied().collect()).or_insert(0) += 1;
    }
    m
}

fn shape_only(t: &Trunk) -> Vec<(NodeId, usize, BTreeSet<usize>, Vec<NodeId>)> {
    t.nodes
        .values()
        .map(|n| (n.id.clone(), n.depth, n.categories.clone(), n.children.clone()))
        .collect()
}

/// Structural equality and multiset Jaccard similarity of internal-node category sets.
pub fn compare(a: &Trunk, b: &Trunk) -> Result<Comparison> {
    let (ca, cb) = (canonicalize(a)?, canonicalize(b)?);
    if ca.root().categories != cb.root().categories {
        return Err(Error::Tree(format!(
            "trees cover different category sets ({} vs {} categories)",
            ca.num_categories(),
            cb.num_categories()
        )));
    }
    let identical = shape_only(&ca) == shape_only(&cb);
    let (sa, sb) = (internal_sets(&ca), internal_sets(&cb));
    let keys: BTreeSet<&Vec<usize>> = sa.keys().chain(sb.keys()).collect();
    let (mut inter, mut union) = (0usize, 0usize);
    for k in keys {
        let (x, y) = (sa.get(k).copied().unwrap_or(0), sb.get(k).copied().unwrap_or(0));
        inter += x.min(y);
        union += x.max(y);
    }
    let similarity = if union == 0 { 1.0 } else { inter as f64 / union as f64 };
    Ok(Comparison { identical, similarity })
}

fn dot_escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

/// Graphviz text: root red, supergroups gray, leaves green labelled by category name.
pub fn to_dot(tree: &Trunk) -> Result<String> {
    ensure_valid(tree)?;
    let mut s = String::from("digraph trunk {\n  node [shape=box, style=filled, fontname=\"Helvetica\"];\n");
    let ids = dfs_order(tree);
    for id in &ids {
        let n = &tree.nodes[*id];
        let (colour, label) = if *id == tree.root_id {
            let names: Vec<String> = n.categories.iter().map(|&c| tree.category_label(c)).collect();
            if n.categories.len() == 1 {
                ("red", names[0].clone())
            } else {
                ("red", format!("root\\n{}", names.join(", ")))
            }
        } else if n.is_internal() {
            let names: Vec<String> = n.categories.iter().map(|&c| tree.category_label(c)).collect();
            ("gray", names.join(", "))
        } else {
            ("green", tree.category_label(*n.categories.first().unwrap()))
        };
        s.push_str(&format!(
            "  \"{}\" [label=\"{}\", fillcolor={colour}];\n",
            dot_escape(id),
            dot_escape(&label).replace("\\\\n", "\\n")
        ));
    }
    for id in &ids {
        for c in &tree.nodes[*id].children {
            s.push_str(&format!("  \"{}\" -> \"{}\";\n", dot_escape(id), dot_escape(c)));
        }
    }
    s.push_str("}\n");
    Ok(s)
}

fn dfs_order(tree: &Trunk) -> Vec<&str> {
    let mut out = Vec::new();
    let mut stack = vec![tree.root_id.as_str()];
    while let Some(id) = stack.pop() {
        out.push(id);
        stack.extend(tree.nodes[id].children.iter().rev().map(String::as_str));
    }
    out
}

pub fn save_tree(tree: &Trunk, path: &Path) -> Result<()> {
    ensure_valid(tree)?;
    fsx::write_atomic(path, serde_json::to_string_pretty(tree)? + "\n")
}

pub fn load_tree(path: &Path) -> Result<Trunk> {
    let text = fsx::read_to_string(path)?;
    let tree: Trunk = serde_json::from_str(&text)
        .map_err(|e| Error::Tree(format!("{}: malformed tree file: {e}", path.display())))?;
    ensure_valid(&tree)?;
    Ok(tree)
}

/// A random valid tree over `k` categories.
pub fn random_tree(k: usize, rng: &mut impl Rng) -> Trunk {
    let mut t = Trunk::new("random", (0..k).map(|c| format!("c{c}")).collect(), 1.0, "");
    let mut todo = vec![ROOT_ID.to_string()];
    while let Some(id) = todo.pop() {
        let cats: Vec<usize> = t.nodes[&id].categories.iter().copied().collect();
        if cats.len() < 2 {
            continue;
        }
        let groups = rng.gen_range(2..=cats.len());
        let mut shuffled = cats.clone();
        shuffled.shuffle(rng);
        let mut sets = vec![BTreeSet::new(); groups];
        for (i, c) in shuffled.into_iter().enumerate() {
            let g = if i < groups { i } else { rng.gen_range(0..groups) };
            sets[g].insert(c);
        }
        todo.extend(t.split(&id, sets).expect("partition by construction"));
    }
    t
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn names(k: usize) -> Vec<String> {
        (0..k).map(|c| c.to_string()).collect()
    }

    fn set(v: &[usize]) -> BTreeSet<usize> {
        v.iter().copied().collect()
    }

    fn pair_tree() -> Trunk {
        let mut t = Trunk::new("toy", names(4), 0.9, "d");
        let ids = t.split("0", vec![set(&[0, 1]), set(&[2, 3])]).unwrap();
        t.split(&ids[0], vec![set(&[0]), set(&[1])]).unwrap();
        t.split(&ids[1], vec![set(&[2]), set(&[3])]).unwrap();
        t
    }

    #[test]
    fn single_root_leaf_is_valid() {
        let t = Trunk::new("one", names(1), 1.0, "");
        assert!(validate(&t).is_empty());
        assert_eq!(t.depth(), 0);
        let dot = to_dot(&t).unwrap();
        assert_eq!(dot.matches("fillcolor=").count(), 1);
        assert!(dot.contains("fillcolor=red"));
    }

    #[test]
    fn missing_category_is_named() {
        let mut t = Trunk::new("ten", names(10), 1.0, "");
        let groups: Vec<BTreeSet<usize>> = (0..10).map(|c| set(&[c])).collect();
        t.split("0", groups).unwrap();
        assert!(validate(&t).is_empty());
        t.nodes.remove("0.9");
        t.nodes.get_mut("0").unwrap().children.pop();
        let v = validate(&t);
        assert!(v.iter().any(|v| v.detail == "missing leaf for category 9"), "{v:?}");
    }

    #[test]
    fn queries() {
        let t = pair_tree();
        assert!(validate(&t).is_empty());
        assert_eq!(t.depth(), 2);
        assert_eq!(t.mean_groups_per_node(), 2.0);
        assert_eq!(t.path_to(3).unwrap(), vec!["0", "0.1", "0.1.1"]);
        assert_eq!(t.leaf_category("0.1.0").unwrap(), 2);
        assert!(t.leaf_category("0.1").is_err());
        assert_eq!(t.nodes["0.1"].kind, NodeKind::Supergroup);
    }

    #[test]
    fn hand_jaccard_three_categories() {
        let mut a = Trunk::new("t", names(3), 1.0, "");
        a.split("0", vec![set(&[0, 1]), set(&[2])]).unwrap();
        a.split("0.0", vec![set(&[0]), set(&[1])]).unwrap();
        let mut b = Trunk::new("t", names(3), 1.0, "");
        b.split("0", vec![set(&[0]), set(&[1, 2])]).unwrap();
        b.split("0.1", vec![set(&[1]), set(&[2])]).unwrap();
        let c = compare(&a, &b).unwrap();
        assert!(!c.identical);
        assert!((c.similarity - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(
            compare(&a, &a).unwrap(),
            Comparison {
                identical: true,
                similarity: 1.0
            }
        );
        assert_ne!(fingerprint(&a).unwrap(), fingerprint(&b).unwrap());
    }

    #[test]
    fn deeper_and_shallower_trees_differ() {
        let deep = pair_tree();
        let mut flat = Trunk::new("toy", names(4), 0.9, "d");
        flat.split("0", (0..4).map(|c| set(&[c])).collect()).unwrap();
        assert_ne!(fingerprint(&deep).unwrap(), fingerprint(&flat).unwrap());
        assert!(compare(&deep, &flat).unwrap().similarity < 1.0);
    }

    #[test]
    fn different_universes_rejected() {
        assert!(compare(&pair_tree(), &Trunk::new("t", names(3), 1.0, "")).is_err());
    }

    #[test]
    fn fingerprint_ignores_weights_and_ids() {
        let a = pair_tree();
        let mut b = a.clone();
        b.nodes.get_mut("0").unwrap().weights_ref = Some("elsewhere/weights.bin".into());
        b.created_with = "other".into();
        assert_eq!(fingerprint(&a).unwrap(), fingerprint(&b).unwrap());
    }

    #[test]
    fn cycle_file_rejected() {
        let mut t = pair_tree();
        t.nodes.get_mut("0.1.1").unwrap().children.push("0".into());
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.json");
        std::fs::write(&p, serde_json::to_string(&t).unwrap()).unwrap();
        let err = load_tree(&p).unwrap_err();
        assert!(err.to_string().contains("cycle"), "{err}");
        std::fs::write(&p, "{ not json").unwrap();
        assert!(load_tree(&p).unwrap_err().to_string().contains("malformed"));
    }

    #[test]
    fn shipped_svhn_tree_has_ten_leaves() {
        let p = Path::new(env!("CARGO_MANIFEST_DIR")).join("reference/svhn_tree.json");
        let t = load_tree(&p).unwrap();
        assert_eq!(t.leaves().count(), 10);
        let dot = to_dot(&t).unwrap();
        assert_eq!(dot.matches("fillcolor=green").count(), 10);
        for d in 0..10 {
            assert!(dot.contains(&format!("[label=\"{d}\", fillcolor=green]")));
        }
    }

    fn shuffled(t: &Trunk, rng: &mut ChaCha8Rng) -> Trunk {
        let mut s = t.clone();
        for n in s.nodes.values_mut() {
            let mut pairs: Vec<(BTreeSet<usize>, NodeId)> =
                n.grouping.iter().cloned().zip(n.children.iter().cloned()).collect();
            pairs.shuffle(rng);
            n.grouping = pairs.iter().map(|p| p.0.clone()).collect();
            n.children = pairs.into_iter().map(|p| p.1).collect();
        }
        s
    }

    proptest! {
        #[test]
        fn canonical_form_properties(k in 1usize..9, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let t = random_tree(k, &mut rng);
            prop_assert!(validate(&t).is_empty());
            let c = canonicalize(&t).unwrap();
            prop_assert_eq!(&canonicalize(&c).unwrap(), &c);
            let s = shuffled(&t, &mut rng);
            prop_assert_eq!(&canonicalize(&s).unwrap(), &c);
            prop_assert_eq!(fingerprint(&s).unwrap(), fingerprint(&t).unwrap());
            let cmp = compare(&t, &s).unwrap();
            prop_assert!(cmp.identical && cmp.similarity == 1.0);
        }

        #[test]
        fn deleting_a_child_link_orphans_one_node(k in 2usize..9, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut t = random_tree(k, &mut rng);
            let internal: Vec<NodeId> = t.internal_nodes().map(|n| n.id.clone()).collect();
            let p = internal.choose(&mut rng).unwrap().clone();
            let node = t.nodes.get_mut(&p).unwrap();
            let i = rng.gen_range(0..node.children.len());
            node.children.remove(i);
            let v = validate(&t);
            prop_assert_eq!(v.iter().filter(|v| v.rule == "orphan").count(), 1);
        }

        #[test]
        fn compare_is_symmetric(k in 2usize..8, s1 in any::<u64>(), s2 in any::<u64>()) {
            let a = random_tree(k, &mut ChaCha8Rng::seed_from_u64(s1));
            let b = random_tree(k, &mut ChaCha8Rng::seed_from_u64(s2));
            let (x, y) = (compare(&a, &b).unwrap(), compare(&b, &a).unwrap());
            prop_assert_eq!(x, y);
            prop_assert!((0.0..=1.0).contains(&x.similarity));
            if x.identical {
                prop_assert_eq!(fingerprint(&a).unwrap(), fingerprint(&b).unwrap());
            }
        }

        #[test]
        fn json_round_trip_and_dot_counts(k in 1usize..9, seed in any::<u64>()) {
            let t = random_tree(k, &mut ChaCha8Rng::seed_from_u64(seed));
            let dir = tempfile::tempdir().unwrap();
            let p = dir.path().join("t.json");
            save_tree(&t, &p).unwrap();
            let back = load_tree(&p).unwrap();
            prop_assert_eq!(canonicalize(&back).unwrap(), canonicalize(&t).unwrap());
            let dot = to_dot(&t).unwrap();
            prop_assert_eq!(dot.matches("fillcolor=").count(), t.nodes.len());
            prop_assert_eq!(dot.matches(" -> ").count(), t.nodes.len() - 1);
        }
    }
}
