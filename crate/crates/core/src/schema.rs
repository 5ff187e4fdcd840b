//! Hierarchical extraction schemas.
//!
//! A schema document is a JSON object whose keys are type names and whose
//! values are either `null` (a leaf type) or another object of child types:
//!
//! ```json
//! {"person": {"work for ( organization )": null}, "organization": null}
//! ```
//!
//! Child order is the order of the source document. The same type name may
//! appear under several parents; a node is identified by its [`TypePath`].

use std::fmt;

use serde::de::{self, Deserializer, MapAccess, Visitor};
use serde::ser::{SerializeMap, Serializer};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SchemaNode {
    pub name: String,
    pub children: Vec<SchemaNode>,
}

impl SchemaNode {
    pub fn leaf(name: impl Into<String>) -> Self {
        Self { name: name.into(), children: Vec::new() }
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }

    fn depth(&self) -> usize {
        1 + self.children.iter().map(SchemaNode::depth).max().unwrap_or(0)
    }
}

/// A sequence of type names from a root type downward.
#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TypePath(pub Vec<String>);

impl TypePath {
    pub fn root() -> Self {
        Self(Vec::new())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn child(&self, name: impl Into<String>) -> Self {
        let mut elements = self.0.clone();
        elements.push(name.into());
        Self(elements)
    }

    pub fn elements(&self) -> &[String] {
        &self.0
    }
}

impl<S: Into<String>> FromIterator<S> for TypePath {
    fn from_iter<I: IntoIterator<Item = S>>(iter: I) -> Self {
        Self(iter.into_iter().map(Into::into).collect())
    }
}

impl fmt::Display for TypePath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0.join(" / "))
    }
}

/// A validated schema tree. Immutable after construction.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Schema {
    roots: Vec<SchemaNode>,
}

impl Schema {
    pub fn new(roots: Vec<SchemaNode>) -> Result<Self> {
        validate_siblings(&roots, &[])?;
        Ok(Self { roots })
    }

    pub fn from_json(doc: &str) -> Result<Self> {
        let raw: RawLevel =
            serde_json::from_str(doc).map_err(|e| Error::SchemaFormat(e.to_string()))?;
        Self::new(raw.into_nodes())
    }

    pub fn from_path(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&NodesRef(&self.roots)).expect("schema serialization is infallible")
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(&NodesRef(&self.roots))
            .expect("schema serialization is infallible")
    }

    pub fn roots(&self) -> &[SchemaNode] {
        &self.roots
    }

    pub fn is_empty(&self) -> bool {
        self.roots.is_empty()
    }

    /// Maximum root-to-leaf path length; 0 for the empty schema.
    pub fn depth(&self) -> usize {
        self.roots.iter().map(SchemaNode::depth).max().unwrap_or(0)
    }

    pub fn node(&self, path: &TypePath) -> Result<&SchemaNode> {
        let mut level = &self.roots;
        let mut found = None;
        for (i, name) in path.0.iter().enumerate() {
            let node = level.iter().find(|n| &n.name == name).ok_or_else(|| Error::Path {
                path: path.0.clone(),
                reason: format!("no type {name:?} at depth {}", i + 1),
            })?;
            level = &node.children;
            found = Some(node);
        }
        found.ok_or_else(|| Error::Path { path: Vec::new(), reason: "empty path names no node".into() })
    }

    pub fn children_of(&self, path: &TypePath) -> Result<Vec<&str>> {
        let level = if path.is_empty() { &self.roots } else { &self.node(path)?.children };
        Ok(level.iter().map(|n| n.name.as_str()).collect())
    }

    pub fn contains(&self, path: &TypePath) -> bool {
        !path.is_empty() && self.node(path).is_ok()
    }

    /// Every root-to-node path, pre-order in document order.
    pub fn enumerate_paths(&self) -> Vec<TypePath> {
        fn walk(nodes: &[SchemaNode], prefix: &TypePath, out: &mut Vec<TypePath>) {
            for node in nodes {
                let path = prefix.child(node.name.clone());
                out.push(path.clone());
                walk(&node.children, &path, out);
            }
        }
        let mut out = Vec::new();
        walk(&self.roots, &TypePath::root(), &mut out);
        out
    }

    pub fn node_count(&self) -> usize {
        self.enumerate_paths().len()
    }

    pub fn leaf_count(&self) -> usize {
        fn count(nodes: &[SchemaNode]) -> usize {
            nodes.iter().map(|n| if n.is_leaf() { 1 } else { count(&n.children) }).sum()
        }
        count(&self.roots)
    }
}

fn validate_siblings(nodes: &[SchemaNode], parent: &[String]) -> Result<()> {
    for (i, node) in nodes.iter().enumerate() {
        if node.name.trim().is_empty() {
            return Err(Error::Schema(format!("empty type name under {parent:?}")));
        }
        if nodes[..i].iter().any(|n| n.name == node.name) {
            return Err(Error::Schema(format!(
                "duplicate sibling type {:?} under {parent:?}",
                node.name
            )));
        }
        let mut path = parent.to_vec();
        path.push(node.name.clone());
        validate_siblings(&node.children, &path)?;
    }
    Ok(())
}

/// One level of a schema document, entries in source order, duplicates kept
/// so validation can reject them.
struct RawLevel(Vec<(String, Option<RawLevel>)>);

impl RawLevel {
    fn into_nodes(self) -> Vec<SchemaNode> {
        self.0
            .into_iter()
            .map(|(name, children)| SchemaNode {
                name,
                children: children.map(RawLevel::into_nodes).unwrap_or_default(),
            })
            .collect()
    }
}

impl<'de> Deserialize<'de> for RawLevel {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct LevelVisitor;

        impl<'de> Visitor<'de> for LevelVisitor {
            type Value = RawLevel;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a map of type names to null or nested maps")
            }

            fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> Result<RawLevel, A::Error> {
                let mut entries = Vec::new();
                while let Some(key) = map.next_key::<String>()? {
                    let value: Option<RawLevel> = map.next_value()?;
                    entries.push((key, value));
                }
                Ok(RawLevel(entries))
            }
        }

        deserializer.deserialize_map(LevelVisitor).map_err(de::Error::custom)
    }
}

struct NodesRef<'a>(&'a [SchemaNode]);

impl Serialize for NodesRef<'_> {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut map = serializer.serialize_map(Some(self.0.len()))?;
        for node in self.0 {
            if node.is_leaf() {
                map.serialize_entry(&node.name, &())?;
            } else {
                map.serialize_entry(&node.name, &NodesRef(&node.children))?;
            }
        }
        map.end()
    }
}

/// Schema documents used as fixtures throughout the test suites.
pub mod fixtures {
    pub const CONLL03: &str = include_str!("../fixtures/conll03.json");
    pub const CONLL04: &str = include_str!("../fixtures/conll04.json");
    pub const ACE05_EVT: &str = include_str!("../fixtures/ace05_evt.json");
    pub const RES16: &str = include_str!("../fixtures/res16.json");
    pub const COQE_CAMERA: &str = include_str!("../fixtures/coqe_camera.json");
    pub const TOY_RELATIONS: &str = include_str!("../fixtures/toy_relations.json");
    pub const EDUCATED_AT: &str = include_str!("../fixtures/educated_at.json");

    /// The five benchmark fixture schemas, by dataset name.
    pub const BENCHMARKS: [(&str, &str); 5] = [
        ("conll03", CONLL03),
        ("conll04", CONLL04),
        ("ace05-evt", ACE05_EVT),
        ("16-res", RES16),
        ("coqe-camera", COQE_CAMERA),
    ];
}
