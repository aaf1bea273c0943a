//! Class hierarchy, as distributed with ActivityNet (`nodeId`, `nodeName`, `parentId`).

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
pub struct TaxonomyNode {
    #[serde(rename = "nodeId")]
    pub node_id: i64,
    #[serde(rename = "nodeName")]
    pub name: String,
    #[serde(rename = "parentId")]
    pub parent_id: Option<i64>,
}

#[derive(Debug, Clone)]
pub struct Taxonomy {
    nodes: BTreeMap<i64, TaxonomyNode>,
    children: BTreeMap<i64, Vec<i64>>,
    root: i64,
    leaves_by_name: HashMap<String, i64>,
}

impl Taxonomy {
    pub fn new(nodes: Vec<TaxonomyNode>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for node in nodes {
            let id = node.node_id;
            if map.insert(id, node).is_some() {
                return Err(Error::Taxonomy(format!("duplicate node id {id}")));
            }
        }
        let roots: Vec<i64> =
            map.values().filter(|n| n.parent_id.is_none()).map(|n| n.node_id).collect();
        let root = match roots.as_slice() {
            [r] => *r,
            [] => return Err(Error::Taxonomy("no root node (every node has a parent: cycle)".into())),
            many => return Err(Error::Taxonomy(format!("multiple roots: {many:?}"))),
        };
        let mut children: BTreeMap<i64, Vec<i64>> = BTreeMap::new();
        for n in map.values() {
            if let Some(p) = n.parent_id {
                if p == n.node_id {
                    return Err(Error::Taxonomy(format!("cycle: node {p} is its own parent")));
                }
                if !map.contains_key(&p) {
                    return Err(Error::Taxonomy(format!(
                        "node {} references missing parent {p}",
                        n.node_id
                    )));
                }
                children.entry(p).or_default().push(n.node_id);
            }
        }
        // Every node must reach the root; anything else sits on a cycle.
        for &id in map.keys() {
            let mut cur = id;
            let mut steps = 0;
            while let Some(p) = map[&cur].parent_id {
                cur = p;
                steps += 1;
                if steps > map.len() {
                    return Err(Error::Taxonomy(format!("cycle through node {id}")));
                }
            }
        }
        let mut leaves_by_name = HashMap::new();
        for n in map.values() {
            if !children.contains_key(&n.node_id)
                && leaves_by_name.insert(n.name.clone(), n.node_id).is_some()
            {
                return Err(Error::Taxonomy(format!("duplicate leaf name {:?}", n.name)));
            }
        }
        Ok(Taxonomy { nodes: map, children, root, leaves_by_name })
    }

    pub fn root(&self) -> i64 {
        self.root
    }

    pub fn node(&self, id: i64) -> Option<&TaxonomyNode> {
        self.nodes.get(&id)
    }

    pub fn leaf(&self, name: &str) -> Option<&TaxonomyNode> {
        self.leaves_by_name.get(name).map(|id| &self.nodes[id])
    }

    pub fn leaf_count(&self) -> usize {
        self.leaves_by_name.len()
    }

    pub fn children(&self, id: i64) -> &[i64] {
        self.children.get(&id).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Leaf names that share `name`'s parent, excluding `name` itself.
    pub fn sibling_leaves(&self, name: &str) -> Vec<&str> {
        let Some(leaf) = self.leaf(name) else { return Vec::new() };
        let Some(parent) = leaf.parent_id else { return Vec::new() };
        self.children(parent)
            .iter()
            .filter(|&&c| c != leaf.node_id && !self.children.contains_key(&c))
            .map(|c| self.nodes[c].name.as_str())
            .collect()
    }

    fn ancestors(&self, id: i64) -> Vec<i64> {
        let mut out = vec![id];
        let mut cur = id;
        while let Some(p) = self.nodes[&cur].parent_id {
            out.push(p);
            cur = p;
        }
        out
    }

    /// Number of edges on the tree path between two nodes.
    pub fn distance(&self, a: i64, b: i64) -> usize {
        let pa = self.ancestors(a);
        let pb = self.ancestors(b);
        for (i, x) in pa.iter().enumerate() {
            if let Some(j) = pb.iter().position(|y| y == x) {
                return i + j;
            }
        }
        unreachable!("validated taxonomy has a single root")
    }

    /// Labels from `vocabulary` that are not leaves of this taxonomy.
    pub fn uncovered<'a>(&self, vocabulary: &'a [String]) -> Vec<&'a str> {
        vocabulary
            .iter()
            .filter(|l| !self.leaves_by_name.contains_key(l.as_str()))
            .map(String::as_str)
            .collect()
    }
}

pub fn load_taxonomy(path: impl AsRef<Path>) -> Result<Taxonomy> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_taxonomy(&text)
}

pub fn parse_taxonomy(text: &str) -> Result<Taxonomy> {
    let nodes: Vec<TaxonomyNode> =
        serde_json::from_str(text).map_err(|e| Error::json("taxonomy", e))?;
    Taxonomy::new(nodes)
}
