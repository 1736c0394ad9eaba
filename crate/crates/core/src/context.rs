//! Formal contexts (bipartite networks), derivation primitives, ingestion,
//! train/target splitting, and test-set construction.
//!
//! A context is the triple (G, M, I): objects, attributes, and an incidence
//! relation. Incidence is materialized both as per-object attribute bitsets
//! and per-attribute object bitsets so that either derivation direction is a
//! plain AND-fold.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use rand::Rng;
use sha2::{Digest, Sha256};

use crate::bits::BitSet;
use crate::rng::{stream_rng, Stream};
use crate::{Error, Result};

/// Bipartite network / formal context with dual bitset storage.
///
/// Object and attribute identifiers live in separate namespaces: the same
/// string may appear on both sides of the input and never collides (exports
/// that need a single token space prefix them as `o:<id>` / `a:<id>`).
#[derive(Clone, Debug)]
pub struct FormalContext {
    objects: Vec<String>,
    attributes: Vec<String>,
    object_index: HashMap<String, usize>,
    attribute_index: HashMap<String, usize>,
    /// Sorted, deduplicated (object, attribute) index pairs.
    pairs: Vec<(u32, u32)>,
    /// Per-object attribute sets.
    rows: Vec<BitSet>,
    /// Per-attribute object sets.
    cols: Vec<BitSet>,
}

impl FormalContext {
    /// Build a context from identifier pairs, registering identifiers in
    /// first-appearance order and deduplicating repeated pairs.
    pub fn from_pairs<S: AsRef<str>>(pairs: &[(S, S)]) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::EmptyContext);
        }
        let mut objects = Vec::new();
        let mut attributes = Vec::new();
        let mut object_index = HashMap::new();
        let mut attribute_index = HashMap::new();
        let mut idx_pairs = Vec::with_capacity(pairs.len());
        for (g, m) in pairs {
            let gi = *object_index.entry(g.as_ref().to_string()).or_insert_with(|| {
                objects.push(g.as_ref().to_string());
                objects.len() - 1
            });
            let mi = *attribute_index
                .entry(m.as_ref().to_string())
                .or_insert_with(|| {
                    attributes.push(m.as_ref().to_string());
                    attributes.len() - 1
                });
            idx_pairs.push((gi as u32, mi as u32));
        }
        idx_pairs.sort_unstable();
        idx_pairs.dedup();
        Ok(Self::from_indexed(
            objects,
            attributes,
            object_index,
            attribute_index,
            idx_pairs,
        ))
    }

    fn from_indexed(
        objects: Vec<String>,
        attributes: Vec<String>,
        object_index: HashMap<String, usize>,
        attribute_index: HashMap<String, usize>,
        pairs: Vec<(u32, u32)>,
    ) -> Self {
        let mut rows = vec![BitSet::empty(attributes.len()); objects.len()];
        let mut cols = vec![BitSet::empty(objects.len()); attributes.len()];
        for &(g, m) in &pairs {
            rows[g as usize].insert(m as usize);
            cols[m as usize].insert(g as usize);
        }
        FormalContext {
            objects,
            attributes,
            object_index,
            attribute_index,
            pairs,
            rows,
            cols,
        }
    }

    /// Same registries, different incidence; used by the splitter so indices
    /// stay aligned between the original context and the reduced one.
    fn with_pairs(&self, pairs: Vec<(u32, u32)>) -> Self {
        Self::from_indexed(
            self.objects.clone(),
            self.attributes.clone(),
            self.object_index.clone(),
            self.attribute_index.clone(),
            pairs,
        )
    }

    /// Build from explicit registries and index pairs. Unlike [`from_pairs`]
    /// this admits isolated objects/attributes and even an empty incidence,
    /// which synthetic fixtures occasionally need.
    ///
    /// [`from_pairs`]: FormalContext::from_pairs
    pub fn from_parts(
        objects: Vec<String>,
        attributes: Vec<String>,
        pairs: &[(usize, usize)],
    ) -> Result<Self> {
        let mut object_index = HashMap::new();
        for (i, id) in objects.iter().enumerate() {
            if object_index.insert(id.clone(), i).is_some() {
                return Err(Error::BadConfig(format!("duplicate object id '{id}'")));
            }
        }
        let mut attribute_index = HashMap::new();
        for (j, id) in attributes.iter().enumerate() {
            if attribute_index.insert(id.clone(), j).is_some() {
                return Err(Error::BadConfig(format!("duplicate attribute id '{id}'")));
            }
        }
        let mut idx_pairs = Vec::with_capacity(pairs.len());
        for &(g, m) in pairs {
            if g >= objects.len() {
                return Err(Error::IndexOutOfRange {
                    kind: "object",
                    index: g,
                    size: objects.len(),
                });
            }
            if m >= attributes.len() {
                return Err(Error::IndexOutOfRange {
                    kind: "attribute",
                    index: m,
                    size: attributes.len(),
                });
            }
            idx_pairs.push((g as u32, m as u32));
        }
        idx_pairs.sort_unstable();
        idx_pairs.dedup();
        Ok(Self::from_indexed(
            objects,
            attributes,
            object_index,
            attribute_index,
            idx_pairs,
        ))
    }

    pub fn n_objects(&self) -> usize {
        self.objects.len()
    }

    pub fn n_attributes(&self) -> usize {
        self.attributes.len()
    }

    pub fn n_incidences(&self) -> usize {
        self.pairs.len()
    }

    /// Sorted (object, attribute) index pairs.
    pub fn pairs(&self) -> &[(u32, u32)] {
        &self.pairs
    }

    pub fn object_id(&self, i: usize) -> &str {
        &self.objects[i]
    }

    pub fn attribute_id(&self, j: usize) -> &str {
        &self.attributes[j]
    }

    pub fn object_ids(&self) -> &[String] {
        &self.objects
    }

    pub fn attribute_ids(&self) -> &[String] {
        &self.attributes
    }

    pub fn object_idx(&self, id: &str) -> Option<usize> {
        self.object_index.get(id).copied()
    }

    pub fn attribute_idx(&self, id: &str) -> Option<usize> {
        self.attribute_index.get(id).copied()
    }

    pub fn has(&self, g: usize, m: usize) -> bool {
        g < self.rows.len() && self.rows[g].contains(m)
    }

    /// Attribute set of one object.
    pub fn row(&self, g: usize) -> &BitSet {
        &self.rows[g]
    }

    /// Object set of one attribute.
    pub fn col(&self, m: usize) -> &BitSet {
        &self.cols[m]
    }

    /// Validated object bitset from indices.
    pub fn object_set(&self, indices: &[usize]) -> Result<BitSet> {
        let n = self.n_objects();
        for &i in indices {
            if i >= n {
                return Err(Error::IndexOutOfRange {
                    kind: "object",
                    index: i,
                    size: n,
                });
            }
        }
        Ok(BitSet::from_indices(n, indices))
    }

    /// Validated attribute bitset from indices.
    pub fn attribute_set(&self, indices: &[usize]) -> Result<BitSet> {
        let n = self.n_attributes();
        for &j in indices {
            if j >= n {
                return Err(Error::IndexOutOfRange {
                    kind: "attribute",
                    index: j,
                    size: n,
                });
            }
        }
        Ok(BitSet::from_indices(n, indices))
    }

    /// Attributes shared by every object of `a` (all attributes when `a` is empty).
    pub fn derive_intent(&self, a: &BitSet) -> Result<BitSet> {
        if a.universe() != self.n_objects() {
            return Err(Error::IndexOutOfRange {
                kind: "object",
                index: a.universe(),
                size: self.n_objects(),
            });
        }
        let mut out = BitSet::full(self.n_attributes());
        for g in a.iter() {
            out.intersect_assign(&self.rows[g]);
            if out.is_empty() {
                break;
            }
        }
        Ok(out)
    }

    /// Objects having every attribute of `b` (all objects when `b` is empty).
    pub fn derive_extent(&self, b: &BitSet) -> Result<BitSet> {
        if b.universe() != self.n_attributes() {
            return Err(Error::IndexOutOfRange {
                kind: "attribute",
                index: b.universe(),
                size: self.n_attributes(),
            });
        }
        let mut out = BitSet::full(self.n_objects());
        for m in b.iter() {
            out.intersect_assign(&self.cols[m]);
            if out.is_empty() {
                break;
            }
        }
        Ok(out)
    }

    /// Closure of an attribute set: (A1, B1) with A1 = extent(B), B1 = intent(A1).
    pub fn closure(&self, b: &BitSet) -> Result<FormalConcept> {
        let a1 = self.derive_extent(b)?;
        let b1 = self.derive_intent(&a1)?;
        Ok(FormalConcept {
            extent: a1.to_vec(),
            intent: b1.to_vec(),
        })
    }

    /// SHA-256 over the sorted identifier pairs; stable across registration
    /// order, so re-serialized contexts keep the same fingerprint.
    pub fn content_hash(&self) -> String {
        let mut lines: Vec<(&str, &str)> = self
            .pairs
            .iter()
            .map(|&(g, m)| (self.objects[g as usize].as_str(), self.attributes[m as usize].as_str()))
            .collect();
        lines.sort_unstable();
        let mut hasher = Sha256::new();
        for (g, m) in lines {
            hasher.update(g.as_bytes());
            hasher.update(b"\t");
            hasher.update(m.as_bytes());
            hasher.update(b"\n");
        }
        let digest = hasher.finalize();
        let mut hex = String::with_capacity(64);
        for byte in digest {
            let _ = write!(hex, "{byte:02x}");
        }
        hex
    }
}

/// An (extent, intent) pair in canonical sorted index order.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FormalConcept {
    pub extent: Vec<usize>,
    pub intent: Vec<usize>,
}

impl FormalConcept {
    pub fn new(mut extent: Vec<usize>, mut intent: Vec<usize>) -> Self {
        extent.sort_unstable();
        extent.dedup();
        intent.sort_unstable();
        intent.dedup();
        FormalConcept { extent, intent }
    }
}

// ---------------------------------------------------------------------------
// ingestion
// ---------------------------------------------------------------------------

/// Parse a context from "object<TAB>attribute" lines.
pub fn load_context<R: Read>(source: R) -> Result<FormalContext> {
    let reader = BufReader::new(source);
    let mut pairs: Vec<(String, String)> = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(format!("line {}", lineno + 1), e))?;
        let line = line.strip_suffix('\r').unwrap_or(&line);
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split('\t');
        let g = fields.next().unwrap_or("");
        let m = fields.next();
        let (g, m) = match (m, fields.next()) {
            (Some(m), None) => (g, m),
            _ => {
                return Err(Error::MalformedLine {
                    line: lineno + 1,
                    found: line.to_string(),
                })
            }
        };
        if g.is_empty() {
            return Err(Error::EmptyIdentifier {
                line: lineno + 1,
                side: "object",
            });
        }
        if m.is_empty() {
            return Err(Error::EmptyIdentifier {
                line: lineno + 1,
                side: "attribute",
            });
        }
        pairs.push((g.to_string(), m.to_string()));
    }
    FormalContext::from_pairs(&pairs)
}

/// Load a context file from disk.
pub fn load_context_path(path: &Path) -> Result<FormalContext> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    load_context(file)
}

/// Write a context as sorted "object<TAB>attribute" lines.
pub fn write_context(path: &Path, ctx: &FormalContext) -> Result<()> {
    let pairs: Vec<(usize, usize)> = ctx
        .pairs()
        .iter()
        .map(|&(g, m)| (g as usize, m as usize))
        .collect();
    write_pairs(path, ctx, &pairs)
}

/// Write (object, attribute) index pairs in the context file format.
pub fn write_pairs(path: &Path, ctx: &FormalContext, pairs: &[(usize, usize)]) -> Result<()> {
    let mut out = String::new();
    for &(g, m) in pairs {
        out.push_str(ctx.object_id(g));
        out.push('\t');
        out.push_str(ctx.attribute_id(m));
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}

// ---------------------------------------------------------------------------
// splitting and test sets
// ---------------------------------------------------------------------------

/// Outcome of removing a fraction of edges: the reduced context plus the
/// removed pairs (the prediction targets). Indices stay aligned with the
/// original context.
#[derive(Clone, Debug)]
pub struct SplitResult {
    pub input_context: FormalContext,
    pub removed_edges: Vec<(usize, usize)>,
    pub seed: u64,
}

/// Balanced positive/negative link pairs held out for evaluation.
#[derive(Clone, Debug)]
pub struct TestSet {
    pub positives: Vec<(usize, usize)>,
    pub negatives: Vec<(usize, usize)>,
    pub warnings: Vec<String>,
}

/// Remove `round(fraction·|I|)` uniformly chosen incidences (round-half-up).
pub fn split_input_target(ctx: &FormalContext, fraction: f64, seed: u64) -> Result<SplitResult> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::BadSplitFraction(fraction));
    }
    let total = ctx.n_incidences();
    let n_remove = (fraction * total as f64 + 0.5).floor() as usize;
    if n_remove == 0 {
        return Err(Error::ZeroRemoval {
            fraction,
            edges: total,
        });
    }
    if n_remove >= total {
        return Err(Error::TotalRemoval {
            fraction,
            edges: total,
        });
    }

    // partial Fisher-Yates over the sorted pair list
    let mut rng = stream_rng(seed, Stream::Split);
    let mut order: Vec<usize> = (0..total).collect();
    for i in 0..n_remove {
        let j = rng.random_range(i..total);
        order.swap(i, j);
    }
    let removed_set: HashSet<usize> = order[..n_remove].iter().copied().collect();

    let mut removed = Vec::with_capacity(n_remove);
    let mut kept = Vec::with_capacity(total - n_remove);
    for (idx, &pair) in ctx.pairs().iter().enumerate() {
        if removed_set.contains(&idx) {
            removed.push((pair.0 as usize, pair.1 as usize));
        } else {
            kept.push(pair);
        }
    }
    removed.sort_unstable();

    Ok(SplitResult {
        input_context: ctx.with_pairs(kept),
        removed_edges: removed,
        seed,
    })
}

/// Draw test negatives: uniform over G×M, rejecting incidences of the
/// *original* relation (input edges ∪ removed edges), the supplied
/// context-sample negatives `t_n`, and duplicates. If the rejection budget
/// (1000·target draws) runs out before the eligible pool does, the remainder
/// is filled deterministically from the sorted eligible pairs, so the
/// balance invariant holds exactly whenever enough non-edges exist.
pub fn generate_test_set(split: &SplitResult, t_n: &[(usize, usize)], seed: u64) -> TestSet {
    let ctx = &split.input_context;
    let n = ctx.n_objects();
    let m = ctx.n_attributes();
    let mut warnings = Vec::new();

    let mut excluded: HashSet<(usize, usize)> = ctx
        .pairs()
        .iter()
        .map(|&(g, a)| (g as usize, a as usize))
        .collect();
    excluded.extend(split.removed_edges.iter().copied());
    excluded.extend(t_n.iter().copied());

    let eligible = n * m - excluded.len();
    let wanted = split.removed_edges.len();
    let target = wanted.min(eligible);
    if target < wanted {
        warnings.push(format!(
            "only {eligible} eligible non-edges for {wanted} positives; negatives capped"
        ));
    }

    let mut rng = stream_rng(seed, Stream::TestNegatives);
    let mut chosen: HashSet<(usize, usize)> = HashSet::with_capacity(target);
    let mut negatives = Vec::with_capacity(target);
    let budget = 1000usize.saturating_mul(target);
    let mut draws = 0usize;
    while negatives.len() < target && draws < budget {
        draws += 1;
        let pair = (rng.random_range(0..n), rng.random_range(0..m));
        if excluded.contains(&pair) || chosen.contains(&pair) {
            continue;
        }
        chosen.insert(pair);
        negatives.push(pair);
    }
    if negatives.len() < target {
        // near-complete context: rejection stalled, finish deterministically
        'fill: for g in 0..n {
            for a in 0..m {
                let pair = (g, a);
                if !excluded.contains(&pair) && !chosen.contains(&pair) {
                    chosen.insert(pair);
                    negatives.push(pair);
                    if negatives.len() == target {
                        break 'fill;
                    }
                }
            }
        }
    }

    TestSet {
        positives: split.removed_edges.clone(),
        negatives,
        warnings,
    }
}

/// Write a test set as "object<TAB>attribute<TAB>label" rows (positives first).
pub fn write_test_set(path: &Path, ctx: &FormalContext, test: &TestSet) -> Result<()> {
    let mut out = String::new();
    for &(g, m) in &test.positives {
        let _ = writeln!(out, "{}\t{}\t1", ctx.object_id(g), ctx.attribute_id(m));
    }
    for &(g, m) in &test.negatives {
        let _ = writeln!(out, "{}\t{}\t0", ctx.object_id(g), ctx.attribute_id(m));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Read a test set back as (object id, attribute id, label) rows.
pub fn read_test_set(path: &Path) -> Result<Vec<(String, String, bool)>> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut rows = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::MalformedLine {
                line: lineno + 1,
                found: line.to_string(),
            });
        }
        let label = match fields[2] {
            "1" => true,
            "0" => false,
            other => {
                return Err(Error::MalformedLine {
                    line: lineno + 1,
                    found: format!("label '{other}' not 0/1"),
                })
            }
        };
        rows.push((fields[0].to_string(), fields[1].to_string(), label));
    }
    if rows.is_empty() {
        return Err(Error::EmptyContext);
    }
    Ok(rows)
}

/// Read an edge file back as (object id, attribute id) rows.
pub fn read_pairs(path: &Path) -> Result<Vec<(String, String)>> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut rows = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 2 {
            return Err(Error::MalformedLine {
                line: lineno + 1,
                found: line.to_string(),
            });
        }
        rows.push((fields[0].to_string(), fields[1].to_string()));
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------

#[cfg(test)]
pub(crate) fn k1_context() -> FormalContext {
    // six-incidence fixture used throughout the test suite
    FormalContext::from_pairs(&[
        ("g1", "m1"),
        ("g1", "m2"),
        ("g2", "m1"),
        ("g2", "m2"),
        ("g2", "m3"),
        ("g3", "m3"),
    ])
    .unwrap()
}
