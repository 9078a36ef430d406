//! Item taxonomy: an immutable rooted tree whose leaves are purchasable items.
//!
//! Levels are counted bottom-up: every item sits at level 0 and the single
//! root sits at level `depth()`. Ragged input trees are padded with
//! pass-through nodes so that this holds for any input forest.

use std::collections::{HashMap, VecDeque};
use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use rand::Rng;
use thiserror::Error;

pub type NodeId = usize;

pub const UNCATEGORIZED_LABEL: &str = "UNCATEGORIZED";
const PAD_LABEL: &str = "<pad>";
const ROOT_LABEL: &str = "<root>";

#[derive(Debug, Error)]
pub enum TaxonomyError {
    #[error("node id {0} is out of range")]
    InvalidNode(NodeId),
    #[error("node {0} has no siblings")]
    NoSibling(NodeId),
    #[error("taxonomy update levels {levels} outside [1, {max}]")]
    LevelsOutOfRange { levels: usize, max: usize },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("duplicate node id {0}")]
    DuplicateId(u64),
    #[error("node {child} references unknown parent {parent}")]
    UnknownParent { child: u64, parent: u64 },
    #[error("no root declared (parent_id = -1)")]
    NoRoot,
    #[error("node {0} is not connected to the root (cycle)")]
    Cycle(u64),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeRecord {
    pub id: NodeId,
    pub parent: Option<NodeId>,
    pub level: usize,
    pub label: String,
    /// Id used in the source file; `None` for inserted pad/uncategorized nodes.
    pub external_id: Option<u64>,
}

/// One line of a taxonomy file before structural resolution.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SourceRecord {
    pub id: u64,
    pub parent: Option<u64>,
    pub label: String,
}

#[derive(Debug, Clone)]
pub struct Taxonomy {
    nodes: Vec<NodeRecord>,
    children: Vec<Vec<NodeId>>,
    levels: Vec<Vec<NodeId>>,
    depth: usize,
    root: NodeId,
    external: HashMap<u64, NodeId>,
    source: Vec<SourceRecord>,
    uncategorized: Vec<u64>,
}

impl Taxonomy {
    /// Builds a taxonomy from parsed records. Declared roots are merged into
    /// one root; leaves shallower than the deepest leaf are padded.
    pub fn from_records(records: Vec<SourceRecord>) -> Result<Self, TaxonomyError> {
        Self::build(records, Vec::new())
    }

    fn build(source: Vec<SourceRecord>, mut uncategorized: Vec<u64>) -> Result<Self, TaxonomyError> {
        let mut by_id: HashMap<u64, usize> = HashMap::with_capacity(source.len());
        for (idx, rec) in source.iter().enumerate() {
            if by_id.insert(rec.id, idx).is_some() {
                return Err(TaxonomyError::DuplicateId(rec.id));
            }
        }
        for rec in &source {
            if let Some(p) = rec.parent {
                if !by_id.contains_key(&p) {
                    return Err(TaxonomyError::UnknownParent { child: rec.id, parent: p });
                }
            }
        }
        let mut declared_roots: Vec<u64> =
            source.iter().filter(|r| r.parent.is_none()).map(|r| r.id).collect();
        declared_roots.sort_unstable();
        let Some(&root_ext) = declared_roots.first() else {
            return Err(TaxonomyError::NoRoot);
        };

        // Dense ids follow ascending external id; merged roots alias the first.
        let mut ext_sorted: Vec<u64> = source
            .iter()
            .map(|r| r.id)
            .filter(|id| is_kept_id(*id, &declared_roots, root_ext))
            .collect();
        ext_sorted.sort_unstable();
        let mut external: HashMap<u64, NodeId> = HashMap::with_capacity(source.len());
        for (dense, ext) in ext_sorted.iter().enumerate() {
            external.insert(*ext, dense);
        }
        let root = external[&root_ext];
        for alias in &declared_roots[1..] {
            external.insert(*alias, root);
        }

        let mut parent: Vec<Option<NodeId>> = vec![None; ext_sorted.len()];
        let mut label: Vec<String> = vec![String::new(); ext_sorted.len()];
        let mut ext_of: Vec<Option<u64>> = ext_sorted.iter().map(|e| Some(*e)).collect();
        for rec in &source {
            let id = external[&rec.id];
            if rec.parent.is_none() {
                if rec.id == root_ext {
                    label[id] = rec.label.clone();
                }
                continue;
            }
            parent[id] = rec.parent.map(|p| external[&p]);
            label[id] = rec.label.clone();
        }
        if declared_roots.len() > 1 {
            label[root] = ROOT_LABEL.to_string();
        }
        if label[root].is_empty() {
            label[root] = ROOT_LABEL.to_string();
        }

        let mut children = child_lists(&parent);
        let depth_from_root = bfs_depths(root, &children);
        if let Some(bad) = depth_from_root.iter().position(|d| d.is_none()) {
            return Err(TaxonomyError::Cycle(ext_sorted[bad]));
        }
        let mut depth_from_root: Vec<usize> = depth_from_root.into_iter().map(Option::unwrap).collect();
        let max_depth = (0..parent.len())
            .filter(|&n| children[n].is_empty())
            .map(|n| depth_from_root[n])
            .max()
            .unwrap_or(0);

        // Pass-through padding between shallow leaves and their parents.
        let shallow: Vec<NodeId> = (0..parent.len())
            .filter(|&n| children[n].is_empty() && n != root && depth_from_root[n] < max_depth)
            .collect();
        for leaf in shallow {
            let missing = max_depth - depth_from_root[leaf];
            let mut upper = parent[leaf].expect("non-root leaf has a parent");
            for step in 0..missing {
                let pad = parent.len();
                parent.push(Some(upper));
                label.push(PAD_LABEL.to_string());
                ext_of.push(None);
                depth_from_root.push(depth_from_root[leaf] + step);
                upper = pad;
            }
            parent[leaf] = Some(upper);
            depth_from_root[leaf] = max_depth;
        }

        // Items unknown to the taxonomy hang under a level-1 UNCATEGORIZED node.
        uncategorized.sort_unstable();
        uncategorized.dedup();
        uncategorized.retain(|e| !external.contains_key(e));
        let mut depth = max_depth;
        if !uncategorized.is_empty() {
            let mut attach = root;
            if max_depth >= 2 {
                for d in 1..max_depth - 1 {
                    let pad = parent.len();
                    parent.push(Some(attach));
                    label.push(PAD_LABEL.to_string());
                    ext_of.push(None);
                    depth_from_root.push(d);
                    attach = pad;
                }
                let cat = parent.len();
                parent.push(Some(attach));
                label.push(UNCATEGORIZED_LABEL.to_string());
                ext_of.push(None);
                depth_from_root.push(max_depth - 1);
                attach = cat;
            } else {
                depth = 1;
            }
            for ext in &uncategorized {
                let id = parent.len();
                parent.push(Some(attach));
                label.push(format!("{UNCATEGORIZED_LABEL}:{ext}"));
                ext_of.push(Some(*ext));
                depth_from_root.push(depth);
                external.insert(*ext, id);
            }
        }

        children = child_lists(&parent);
        let nodes: Vec<NodeRecord> = (0..parent.len())
            .map(|id| NodeRecord {
                id,
                parent: parent[id],
                level: depth - depth_from_root[id],
                label: std::mem::take(&mut label[id]),
                external_id: ext_of[id],
            })
            .collect();
        let mut levels = vec![Vec::new(); depth + 1];
        for n in &nodes {
            levels[n.level].push(n.id);
        }
        Ok(Taxonomy { nodes, children, levels, depth, root, external, source, uncategorized })
    }

    /// Returns a copy of this taxonomy with the given unknown item ids attached
    /// under the UNCATEGORIZED category. Existing node ids are unchanged.
    pub fn with_uncategorized(&self, items: &[u64]) -> Result<Self, TaxonomyError> {
        let mut all = self.uncategorized.clone();
        all.extend_from_slice(items);
        Self::build(self.source.clone(), all)
    }

    pub fn parse<R: Read>(reader: R) -> Result<Self, TaxonomyError> {
        let mut records = Vec::new();
        for (idx, line) in BufReader::new(reader).lines().enumerate() {
            let line = line?;
            let lineno = idx + 1;
            let trimmed = line.trim_end_matches(['\r', '\n']);
            if trimmed.trim().is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let mut fields = trimmed.splitn(3, '\t');
            let id = fields.next().unwrap_or("");
            let parent = fields.next().ok_or_else(|| TaxonomyError::Parse {
                line: lineno,
                msg: "expected `node_id<TAB>parent_id<TAB>label`".into(),
            })?;
            let label = fields.next().unwrap_or("").to_string();
            let id: u64 = id.trim().parse().map_err(|_| TaxonomyError::Parse {
                line: lineno,
                msg: format!("invalid node id {id:?}"),
            })?;
            let parent: i64 = parent.trim().parse().map_err(|_| TaxonomyError::Parse {
                line: lineno,
                msg: format!("invalid parent id {parent:?}"),
            })?;
            let parent = match parent {
                -1 => None,
                p if p >= 0 => Some(p as u64),
                p => {
                    return Err(TaxonomyError::Parse { line: lineno, msg: format!("invalid parent id {p}") })
                }
            };
            records.push(SourceRecord { id, parent, label });
        }
        Self::from_records(records)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, TaxonomyError> {
        Self::parse(std::fs::File::open(path)?)
    }

    /// Serializes the resolved tree with dense node ids. Reloading the output
    /// yields an identical structure.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("# node_id\tparent_id\tlabel\n");
        for n in &self.nodes {
            let parent = n.parent.map_or(-1, |p| p as i64);
            let _ = writeln!(out, "{}\t{}\t{}", n.id, parent, n.label);
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        std::fs::write(path, self.to_tsv())
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn root(&self) -> NodeId {
        self.root
    }

    pub fn node(&self, id: NodeId) -> Result<&NodeRecord, TaxonomyError> {
        self.nodes.get(id).ok_or(TaxonomyError::InvalidNode(id))
    }

    pub fn nodes(&self) -> &[NodeRecord] {
        &self.nodes
    }

    #[inline]
    pub fn level(&self, id: NodeId) -> usize {
        self.nodes[id].level
    }

    #[inline]
    pub fn parent(&self, id: NodeId) -> Option<NodeId> {
        self.nodes[id].parent
    }

    #[inline]
    pub fn children(&self, id: NodeId) -> &[NodeId] {
        &self.children[id]
    }

    /// Node ids at `level`, ascending.
    pub fn level_nodes(&self, level: usize) -> &[NodeId] {
        self.levels.get(level).map_or(&[], Vec::as_slice)
    }

    pub fn leaves(&self) -> &[NodeId] {
        self.level_nodes(0)
    }

    pub fn is_leaf(&self, id: NodeId) -> bool {
        self.nodes.get(id).is_some_and(|n| n.level == 0)
    }

    pub fn resolve_external(&self, ext: u64) -> Option<NodeId> {
        self.external.get(&ext).copied()
    }

    pub fn max_branching(&self) -> usize {
        self.children.iter().map(Vec::len).max().unwrap_or(0)
    }

    /// `[node, parent(node), ..., root]`.
    pub fn ancestor_path(&self, id: NodeId) -> Result<Vec<NodeId>, TaxonomyError> {
        self.node(id)?;
        Ok(self.path_iter(id).collect())
    }

    pub fn path_iter(&self, id: NodeId) -> impl Iterator<Item = NodeId> + '_ {
        std::iter::successors(Some(id), move |&n| self.nodes[n].parent)
    }

    /// Ancestor of `id` at exactly `level` (which must be ≥ the node's level).
    pub fn ancestor_at_level(&self, id: NodeId, level: usize) -> Option<NodeId> {
        self.path_iter(id).find(|&n| self.nodes[n].level == level)
    }

    /// Uniform draw over the other children of `id`'s parent.
    pub fn sample_sibling<R: Rng + ?Sized>(&self, id: NodeId, rng: &mut R) -> Result<NodeId, TaxonomyError> {
        let node = self.node(id)?;
        let parent = node.parent.ok_or(TaxonomyError::NoSibling(id))?;
        let siblings = &self.children[parent];
        if siblings.len() < 2 {
            return Err(TaxonomyError::NoSibling(id));
        }
        let pick = rng.random_range(0..siblings.len() - 1);
        let own = siblings.iter().position(|&s| s == id).expect("child listed under its parent");
        Ok(siblings[if pick >= own { pick + 1 } else { pick }])
    }

    /// View that only uses the bottom `levels` levels (leaf plus `levels - 1`
    /// ancestors). `levels = 1` is the flat model, `depth() + 1` the full tree.
    pub fn restrict_levels(&self, levels: usize) -> Result<LevelView<'_>, TaxonomyError> {
        if levels == 0 || levels > self.depth + 1 {
            return Err(TaxonomyError::LevelsOutOfRange { levels, max: self.depth + 1 });
        }
        Ok(LevelView { taxonomy: self, levels })
    }

    pub fn full_view(&self) -> LevelView<'_> {
        LevelView { taxonomy: self, levels: self.depth + 1 }
    }
}

fn is_kept_id(id: u64, roots: &[u64], keep: u64) -> bool {
    id == keep || !roots.contains(&id)
}

fn child_lists(parent: &[Option<NodeId>]) -> Vec<Vec<NodeId>> {
    let mut children = vec![Vec::new(); parent.len()];
    for (id, p) in parent.iter().enumerate() {
        if let Some(p) = p {
            children[*p].push(id);
        }
    }
    children
}

fn bfs_depths(root: NodeId, children: &[Vec<NodeId>]) -> Vec<Option<usize>> {
    let mut depth = vec![None; children.len()];
    depth[root] = Some(0);
    let mut queue = VecDeque::from([root]);
    while let Some(n) = queue.pop_front() {
        let d = depth[n].unwrap();
        for &c in &children[n] {
            if depth[c].is_none() {
                depth[c] = Some(d + 1);
                queue.push_back(c);
            }
        }
    }
    depth
}

/// Level-restricted view of a taxonomy. Only nodes with `level < levels`
/// take part in effective factors and updates.
#[derive(Debug, Clone, Copy)]
pub struct LevelView<'a> {
    taxonomy: &'a Taxonomy,
    levels: usize,
}

impl<'a> LevelView<'a> {
    pub fn taxonomy(&self) -> &'a Taxonomy {
        self.taxonomy
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    /// Truncated ancestor path: the nodes on `ancestor_path(id)` whose level
    /// is below the view's level count. Empty for nodes at or above it.
    pub fn path(&self, id: NodeId) -> impl Iterator<Item = NodeId> + 'a {
        let tax = self.taxonomy;
        let levels = self.levels;
        tax.path_iter(id).take_while(move |&n| tax.nodes[n].level < levels)
    }

    pub fn ancestor_path(&self, id: NodeId) -> Result<Vec<NodeId>, TaxonomyError> {
        self.taxonomy.node(id)?;
        Ok(self.path(id).collect())
    }
}
