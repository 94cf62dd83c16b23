//! Semantic class hierarchy as a rooted DAG.
//!
//! Class names are interned to dense [`ClassId`]s in declaration order. The
//! transitive ancestor and descendant closures are computed once at build time
//! and the hierarchy is immutable afterwards.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense class index into a [`ClassHierarchy`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ClassId(pub u32);

impl ClassId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for ClassId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Debug, Clone)]
pub struct ClassHierarchy {
    names: Vec<String>,
    index: HashMap<String, ClassId>,
    parents: Vec<Vec<ClassId>>,
    ancestors: Vec<Vec<ClassId>>,
    descendants: Vec<Vec<ClassId>>,
}

/// Fixed-width bitset used while computing closures.
#[derive(Clone)]
struct Bits(Vec<u64>);

impl Bits {
    fn new(n: usize) -> Self {
        Bits(vec![0; n.div_ceil(64)])
    }
    fn set(&mut self, i: usize) {
        self.0[i / 64] |= 1 << (i % 64);
    }
    fn union_with(&mut self, other: &Bits) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a |= b;
        }
    }
    fn ids(&self) -> Vec<ClassId> {
        let mut out = Vec::new();
        for (w, &word) in self.0.iter().enumerate() {
            let mut bits = word;
            while bits != 0 {
                let t = bits.trailing_zeros() as usize;
                out.push(ClassId((w * 64 + t) as u32));
                bits &= bits - 1;
            }
        }
        out
    }
}

impl ClassHierarchy {
    /// Validates the graph and precomputes closures.
    ///
    /// `edges` are `(child, parent)` pairs. Duplicate classes and duplicate
    /// edges are collapsed.
    pub fn build<S, E>(classes: impl IntoIterator<Item = S>, edges: E) -> Result<Self>
    where
        S: Into<String>,
        E: IntoIterator<Item = (S, S)>,
    {
        let mut names = Vec::new();
        let mut index = HashMap::new();
        for name in classes {
            let name = name.into();
            if !index.contains_key(&name) {
                index.insert(name.clone(), ClassId(names.len() as u32));
                names.push(name);
            }
        }
        let n = names.len();
        let mut parents: Vec<Vec<ClassId>> = vec![Vec::new(); n];
        let mut seen = HashSet::new();
        for (child, parent) in edges {
            let (child, parent) = (child.into(), parent.into());
            let c = *index
                .get(&child)
                .ok_or_else(|| Error::UnknownClass(child.clone()))?;
            let p = *index
                .get(&parent)
                .ok_or_else(|| Error::UnknownClass(parent.clone()))?;
            if c == p {
                return Err(Error::Cycle(child));
            }
            if seen.insert((c, p)) {
                parents[c.index()].push(p);
            }
        }

        // Kahn's algorithm over parent -> child edges; anything left over sits
        // on a cycle.
        let mut children: Vec<Vec<ClassId>> = vec![Vec::new(); n];
        let mut pending = vec![0usize; n];
        for (c, ps) in parents.iter().enumerate() {
            pending[c] = ps.len();
            for p in ps {
                children[p.index()].push(ClassId(c as u32));
            }
        }
        let mut order: Vec<usize> = (0..n).filter(|&c| pending[c] == 0).collect();
        let mut head = 0;
        while head < order.len() {
            let p = order[head];
            head += 1;
            for c in &children[p] {
                pending[c.index()] -= 1;
                if pending[c.index()] == 0 {
                    order.push(c.index());
                }
            }
        }
        if order.len() != n {
            let stuck = (0..n).find(|&c| pending[c] > 0).unwrap_or(0);
            return Err(Error::Cycle(names[stuck].clone()));
        }

        let mut anc = vec![Bits::new(n); n];
        for &c in &order {
            let mut acc = Bits::new(n);
            for p in &parents[c] {
                acc.set(p.index());
                acc.union_with(&anc[p.index()]);
            }
            anc[c] = acc;
        }
        let mut desc = vec![Bits::new(n); n];
        for &p in order.iter().rev() {
            let mut acc = Bits::new(n);
            for c in &children[p] {
                acc.set(c.index());
                acc.union_with(&desc[c.index()]);
            }
            desc[p] = acc;
        }

        Ok(ClassHierarchy {
            names,
            index,
            parents,
            ancestors: anc.iter().map(Bits::ids).collect(),
            descendants: desc.iter().map(Bits::ids).collect(),
        })
    }

    /// Flat hierarchy with no edges.
    pub fn flat<S: Into<String>>(classes: impl IntoIterator<Item = S>) -> Result<Self> {
        Self::build(classes, std::iter::empty::<(S, S)>())
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn ids(&self) -> impl ExactSizeIterator<Item = ClassId> + '_ {
        (0..self.names.len() as u32).map(ClassId)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn id(&self, name: &str) -> Result<ClassId> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| Error::UnknownClass(name.to_string()))
    }

    pub fn name(&self, id: ClassId) -> &str {
        &self.names[id.index()]
    }

    fn check(&self, c: ClassId) -> Result<usize> {
        let i = c.index();
        if i < self.names.len() {
            Ok(i)
        } else {
            Err(Error::UnknownClass(c.to_string()))
        }
    }

    /// Direct parents.
    pub fn parents(&self, c: ClassId) -> Result<&[ClassId]> {
        Ok(&self.parents[self.check(c)?])
    }

    /// All proper ancestors of `c`, sorted by id.
    pub fn ancestors(&self, c: ClassId) -> Result<&[ClassId]> {
        Ok(&self.ancestors[self.check(c)?])
    }

    /// All proper descendants of `c`, sorted by id.
    pub fn descendants(&self, c: ClassId) -> Result<&[ClassId]> {
        Ok(&self.descendants[self.check(c)?])
    }

    pub fn is_leaf(&self, c: ClassId) -> Result<bool> {
        Ok(self.descendants(c)?.is_empty())
    }

    /// `true` when `ancestor` is a proper ancestor of `c`.
    pub fn is_ancestor(&self, ancestor: ClassId, c: ClassId) -> bool {
        self.ancestors
            .get(c.index())
            .is_some_and(|a| a.binary_search(&ancestor).is_ok())
    }

    /// Closes a label set under the ancestor relation.
    pub fn expand_labels<I>(&self, labels: I) -> Result<BTreeSet<ClassId>>
    where
        I: IntoIterator<Item = ClassId>,
    {
        let mut out = BTreeSet::new();
        for c in labels {
            out.extend(self.ancestors(c)?.iter().copied());
            out.insert(c);
        }
        Ok(out)
    }

    /// Loads a hierarchy file: `.json` is read as the nested challenge
    /// layout, anything else as a `child,parent` edge list.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let is_json = path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("json"));
        if is_json {
            Self::from_oid_json(file)
        } else {
            Self::from_edge_csv(file, &path.display().to_string())
        }
    }

    /// Parses the nested `{"LabelName": .., "Subcategory": [..]}` layout.
    ///
    /// A label may appear under several parents; every occurrence adds an
    /// edge. `Part` lists are not is-a relations and are ignored.
    pub fn from_oid_json<R: Read>(reader: R) -> Result<Self> {
        #[derive(Deserialize)]
        struct Node {
            #[serde(rename = "LabelName")]
            label: String,
            #[serde(rename = "Subcategory", default)]
            children: Vec<Node>,
        }

        fn walk(node: &Node, classes: &mut Vec<String>, edges: &mut Vec<(String, String)>) {
            classes.push(node.label.clone());
            for child in &node.children {
                edges.push((child.label.clone(), node.label.clone()));
                walk(child, classes, edges);
            }
        }

        let root: Node = serde_json::from_reader(reader)?;
        let mut classes = Vec::new();
        let mut edges = Vec::new();
        walk(&root, &mut classes, &mut edges);
        Self::build(classes, edges)
    }

    /// Parses a headed two-column `child,parent` CSV. An empty parent
    /// declares a class without adding an edge.
    pub fn from_edge_csv<R: Read>(reader: R, source_name: &str) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .flexible(true)
            .from_reader(reader);
        let mut classes = Vec::new();
        let mut edges = Vec::new();
        for record in rdr.records() {
            let record = record?;
            let line = record.position().map_or(0, |p| p.line());
            let child = record.get(0).unwrap_or("");
            if child.is_empty() || record.len() > 2 {
                return Err(Error::parse(
                    source_name,
                    line,
                    "expected `child,parent` with a non-empty child",
                ));
            }
            classes.push(child.to_string());
            match record.get(1) {
                Some(parent) if !parent.is_empty() => {
                    classes.push(parent.to_string());
                    edges.push((child.to_string(), parent.to_string()));
                }
                _ => {}
            }
        }
        // Parents may be listed before their own row; declare in first-seen
        // order either way.
        Self::build(classes, edges)
    }

    /// Writes the `child,parent` edge list; classes without parents get an
    /// empty parent cell so they survive a reload.
    pub fn write_edge_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["ChildLabelName", "ParentLabelName"])?;
        for c in self.ids() {
            let ps = &self.parents[c.index()];
            if ps.is_empty() {
                w.write_record([self.name(c), ""])?;
            }
            for p in ps {
                w.write_record([self.name(c), self.name(*p)])?;
            }
        }
        w.flush().map_err(|e| Error::io("<edge csv>", e))?;
        Ok(())
    }
}
