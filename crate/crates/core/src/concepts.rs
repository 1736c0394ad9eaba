//! Mining the significant formal concepts of a context — the maximal
//! bi-cliques whose extent and intent sizes fall inside four bounds — plus a
//! brute-force oracle for correctness testing.
//!
//! The miner is a depth-first closed-set search using prefix-preserving
//! closure extensions: from a concept (A, B) it tries each attribute `j`
//! above the node's core attribute, forms the closure of B ∪ {j}, and
//! recurses only when the closure adds no attribute below `j`. Each closed
//! set is reached exactly once, so no dedup pass is needed. Bound pruning
//! rides on the recursion: extents only shrink and intents only grow on the
//! way down, so `|A| ≥ l1` and `|B| ≤ u2` are safe entry tests, while the
//! full four-bound check is applied at output.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bits::BitSet;
use crate::context::{FormalConcept, FormalContext};
use crate::{Error, Result};

/// Significance thresholds: l1 ≤ |extent| ≤ u1 and l2 ≤ |intent| ≤ u2.
/// `None` for an upper bound means unbounded.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SizeBounds {
    pub l1: usize,
    pub u1: Option<usize>,
    pub l2: usize,
    pub u2: Option<usize>,
}

impl SizeBounds {
    pub fn new(l1: usize, u1: Option<usize>, l2: usize, u2: Option<usize>) -> Result<Self> {
        let b = SizeBounds { l1, u1, l2, u2 };
        b.validate()?;
        Ok(b)
    }

    /// No restriction at all.
    pub fn unbounded() -> Self {
        SizeBounds {
            l1: 0,
            u1: None,
            l2: 0,
            u2: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(u1) = self.u1 {
            if self.l1 > u1 {
                return Err(Error::InvalidBounds(format!(
                    "l1={} exceeds u1={u1}",
                    self.l1
                )));
            }
        }
        if let Some(u2) = self.u2 {
            if self.l2 > u2 {
                return Err(Error::InvalidBounds(format!(
                    "l2={} exceeds u2={u2}",
                    self.l2
                )));
            }
        }
        Ok(())
    }

    /// Do the four bounds admit a concept with these set sizes?
    pub fn admits(&self, extent_size: usize, intent_size: usize) -> bool {
        extent_size >= self.l1
            && self.u1.is_none_or(|u| extent_size <= u)
            && intent_size >= self.l2
            && self.u2.is_none_or(|u| intent_size <= u)
    }
}

impl fmt::Display for SizeBounds {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn up(u: Option<usize>) -> String {
            u.map_or_else(|| "inf".to_string(), |v| v.to_string())
        }
        write!(
            f,
            "l1={} u1={} l2={} u2={}",
            self.l1,
            up(self.u1),
            self.l2,
            up(self.u2)
        )
    }
}

/// Concepts mined from one context, in canonical order (lexicographic by
/// sorted extent), together with the bounds used and the context fingerprint.
#[derive(Clone, Debug)]
pub struct ConceptSet {
    pub concepts: Vec<FormalConcept>,
    pub bounds: SizeBounds,
    pub context_hash: String,
}

impl ConceptSet {
    fn new(mut concepts: Vec<FormalConcept>, bounds: SizeBounds, ctx: &FormalContext) -> Self {
        concepts.sort_unstable();
        ConceptSet {
            concepts,
            bounds,
            context_hash: ctx.content_hash(),
        }
    }

    pub fn len(&self) -> usize {
        self.concepts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.concepts.is_empty()
    }
}

// ---------------------------------------------------------------------------
// mining
// ---------------------------------------------------------------------------

struct Frame {
    extent: BitSet,
    intent: BitSet,
    /// Next attribute index to try (descending); one past the candidate.
    next: usize,
    /// Candidates must be strictly above the attribute that created this node.
    floor: usize,
}

/// Mine exactly the concepts admitted by `bounds`.
pub fn mine_significant(ctx: &FormalContext, bounds: SizeBounds) -> Result<ConceptSet> {
    bounds.validate()?;
    let n_attrs = ctx.n_attributes();
    let mut found: Vec<FormalConcept> = Vec::new();

    let root_extent = ctx.derive_extent(&BitSet::empty(n_attrs))?;
    let root_intent = ctx.derive_intent(&root_extent)?;

    // The root may already violate the entry-style bounds; descendants only
    // shrink extents and grow intents, so prune the whole search if so.
    if root_extent.count() < bounds.l1 {
        return Ok(ConceptSet::new(found, bounds, ctx));
    }

    let mut stack = Vec::with_capacity(n_attrs + 1);
    if emit_ok(&bounds, &root_extent, &root_intent) {
        found.push(concept_of(&root_extent, &root_intent));
    }
    stack.push(Frame {
        extent: root_extent,
        intent: root_intent,
        next: n_attrs,
        floor: 0,
    });

    while let Some(frame) = stack.last_mut() {
        // scan candidates downward until one yields a child
        let mut child: Option<Frame> = None;
        while frame.next > frame.floor {
            frame.next -= 1;
            let j = frame.next;
            if frame.intent.contains(j) {
                continue;
            }
            // extent(B ∪ {j}) = extent(B) ∩ col(j)
            let mut a1 = frame.extent.clone();
            a1.intersect_assign(ctx.col(j));
            if a1.count() < bounds.l1 {
                continue;
            }
            let b1 = ctx.derive_intent(&a1)?;
            if let Some(u2) = bounds.u2 {
                if b1.count() > u2 {
                    continue;
                }
            }
            if !prefix_preserved(&frame.intent, &b1, j) {
                continue;
            }
            child = Some(Frame {
                extent: a1,
                intent: b1,
                next: n_attrs,
                floor: j + 1,
            });
            break;
        }
        match child {
            Some(c) => {
                if emit_ok(&bounds, &c.extent, &c.intent) {
                    found.push(concept_of(&c.extent, &c.intent));
                }
                stack.push(c);
            }
            None => {
                stack.pop();
            }
        }
    }

    Ok(ConceptSet::new(found, bounds, ctx))
}

fn emit_ok(bounds: &SizeBounds, extent: &BitSet, intent: &BitSet) -> bool {
    bounds.admits(extent.count(), intent.count())
}

fn concept_of(extent: &BitSet, intent: &BitSet) -> FormalConcept {
    FormalConcept {
        extent: extent.to_vec(),
        intent: intent.to_vec(),
    }
}

/// True when the closure `b1` of `old ∪ {j}` introduces no attribute with
/// index below `j` — the prefix-preservation test that makes each closed set
/// reachable along exactly one path.
fn prefix_preserved(old: &BitSet, b1: &BitSet, j: usize) -> bool {
    let (ow, nw) = (old.words(), b1.words());
    let full_words = j / 64;
    for w in 0..full_words {
        if nw[w] & !ow[w] != 0 {
            return false;
        }
    }
    let tail = j % 64;
    if tail != 0 {
        let mask = (1u64 << tail) - 1;
        if nw[full_words] & !ow[full_words] & mask != 0 {
            return false;
        }
    }
    true
}

// ---------------------------------------------------------------------------
// oracle and membership
// ---------------------------------------------------------------------------

/// Closure of every attribute subset, deduplicated: the complete concept set.
/// Exponential in |M|; guarded to ≤ 20 attributes.
pub fn enumerate_all_bruteforce(ctx: &FormalContext) -> Result<ConceptSet> {
    let m = ctx.n_attributes();
    if m > 20 {
        return Err(Error::TooManyAttributes(m));
    }
    let mut seen: HashSet<Vec<usize>> = HashSet::new();
    let mut found = Vec::new();
    for mask in 0u32..(1u32 << m) {
        let members: Vec<usize> = (0..m).filter(|&j| mask >> j & 1 == 1).collect();
        let b = ctx.attribute_set(&members)?;
        let c = ctx.closure(&b)?;
        if seen.insert(c.intent.clone()) {
            found.push(c);
        }
    }
    Ok(ConceptSet::new(found, SizeBounds::unbounded(), ctx))
}

/// Is (A, B) a formal concept: derive_intent(A) = B and derive_extent(B) = A?
pub fn is_concept(ctx: &FormalContext, a: &[usize], b: &[usize]) -> Result<bool> {
    let a_set = ctx.object_set(a)?;
    let b_set = ctx.attribute_set(b)?;
    Ok(ctx.derive_intent(&a_set)? == b_set && ctx.derive_extent(&b_set)? == a_set)
}

// ---------------------------------------------------------------------------
// serialization
// ---------------------------------------------------------------------------

/// Write concepts as "obj1,obj2,...<TAB>attr1,..." lines, members sorted
/// lexicographically, lines sorted, with a header recording bounds and the
/// context fingerprint.
pub fn write_concepts(path: &Path, ctx: &FormalContext, set: &ConceptSet) -> Result<()> {
    for id in ctx.object_ids().iter().chain(ctx.attribute_ids()) {
        if id.contains(',') {
            return Err(Error::CommaInIdentifier(id.clone()));
        }
    }
    let mut lines: Vec<String> = set
        .concepts
        .iter()
        .map(|c| {
            let mut objs: Vec<&str> = c.extent.iter().map(|&g| ctx.object_id(g)).collect();
            let mut attrs: Vec<&str> = c.intent.iter().map(|&m| ctx.attribute_id(m)).collect();
            objs.sort_unstable();
            attrs.sort_unstable();
            format!("{}\t{}", objs.join(","), attrs.join(","))
        })
        .collect();
    lines.sort_unstable();
    let mut out = format!(
        "# bounds {} context={}\n",
        set.bounds,
        set.context_hash
    );
    for line in lines {
        out.push_str(&line);
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Read a concepts file back, resolving identifiers against `ctx` and
/// verifying the context fingerprint from the header.
pub fn read_concepts(path: &Path, ctx: &FormalContext) -> Result<ConceptSet> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut lines = text.lines().enumerate();

    let (_, header) = lines.next().ok_or_else(|| Error::BadConceptLine {
        line: 1,
        reason: "missing header".to_string(),
    })?;
    let (bounds, hash) = parse_header(header)?;
    let expected = ctx.content_hash();
    if hash != expected {
        return Err(Error::ContextHashMismatch {
            found: hash,
            expected,
        });
    }

    let mut concepts = Vec::new();
    for (lineno, line) in lines {
        if line.is_empty() {
            continue;
        }
        let (obj_part, attr_part) = line.split_once('\t').ok_or_else(|| Error::BadConceptLine {
            line: lineno + 1,
            reason: "missing tab".to_string(),
        })?;
        let extent = resolve(split_ids(obj_part), ctx, true)?;
        let intent = resolve(split_ids(attr_part), ctx, false)?;
        concepts.push(FormalConcept::new(extent, intent));
    }
    let mut set = ConceptSet {
        concepts,
        bounds,
        context_hash: expected,
    };
    set.concepts.sort_unstable();
    Ok(set)
}

fn split_ids(part: &str) -> impl Iterator<Item = &str> {
    part.split(',').filter(|s| !s.is_empty())
}

fn resolve<'a>(
    ids: impl Iterator<Item = &'a str>,
    ctx: &FormalContext,
    objects: bool,
) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for id in ids {
        let idx = if objects {
            ctx.object_idx(id)
        } else {
            ctx.attribute_idx(id)
        };
        match idx {
            Some(i) => out.push(i),
            None => {
                return Err(Error::UnknownConceptMember {
                    side: if objects { "object" } else { "attribute" },
                    id: id.to_string(),
                })
            }
        }
    }
    Ok(out)
}

fn parse_header(header: &str) -> Result<(SizeBounds, String)> {
    let bad = |reason: &str| Error::BadConceptLine {
        line: 1,
        reason: reason.to_string(),
    };
    let rest = header
        .strip_prefix("# bounds ")
        .ok_or_else(|| bad("expected '# bounds ...'"))?;
    let mut l1 = None;
    let mut u1 = None;
    let mut l2 = None;
    let mut u2 = None;
    let mut hash = None;
    for token in rest.split_whitespace() {
        let (key, value) = token
            .split_once('=')
            .ok_or_else(|| bad("expected key=value tokens"))?;
        let upper = |v: &str| -> Result<Option<usize>> {
            if v == "inf" {
                Ok(None)
            } else {
                v.parse::<usize>()
                    .map(Some)
                    .map_err(|_| bad("bad bound value"))
            }
        };
        match key {
            "l1" => l1 = Some(value.parse().map_err(|_| bad("bad l1"))?),
            "u1" => u1 = Some(upper(value)?),
            "l2" => l2 = Some(value.parse().map_err(|_| bad("bad l2"))?),
            "u2" => u2 = Some(upper(value)?),
            "context" => hash = Some(value.to_string()),
            _ => return Err(bad(&format!("unknown header key '{key}'"))),
        }
    }
    match (l1, u1, l2, u2, hash) {
        (Some(l1), Some(u1), Some(l2), Some(u2), Some(hash)) => {
            Ok((SizeBounds::new(l1, u1, l2, u2)?, hash))
        }
        _ => Err(bad("header incomplete")),
    }
}

// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use crate::context::k1_context;
    use crate::testutil::random_context;
    use proptest::prelude::*;

    fn concept(ctx: &FormalContext, objs: &[&str], attrs: &[&str]) -> FormalConcept {
        FormalConcept::new(
            objs.iter().map(|o| ctx.object_idx(o).unwrap()).collect(),
            attrs.iter().map(|a| ctx.attribute_idx(a).unwrap()).collect(),
        )
    }

    fn as_set(set: &ConceptSet) -> HashSet<FormalConcept> {
        set.concepts.iter().cloned().collect()
    }

    #[test]
    fn k1_unbounded_matches_frozen_expectation() {
        let ctx = k1_context();
        let mined = mine_significant(&ctx, SizeBounds::unbounded()).unwrap();
        let expected: HashSet<FormalConcept> = [
            concept(&ctx, &["g1", "g2", "g3"], &[]),
            concept(&ctx, &["g1", "g2"], &["m1", "m2"]),
            concept(&ctx, &["g2", "g3"], &["m3"]),
            concept(&ctx, &["g2"], &["m1", "m2", "m3"]),
        ]
        .into_iter()
        .collect();
        assert_eq!(as_set(&mined), expected);
        assert_eq!(mined.len(), 4);
    }

    #[test]
    fn k1_bounded_filters_to_two() {
        let ctx = k1_context();
        let bounds = SizeBounds::new(2, Some(3), 1, Some(2)).unwrap();
        let mined = mine_significant(&ctx, bounds).unwrap();
        let expected: HashSet<FormalConcept> = [
            concept(&ctx, &["g1", "g2"], &["m1", "m2"]),
            concept(&ctx, &["g2", "g3"], &["m3"]),
        ]
        .into_iter()
        .collect();
        assert_eq!(as_set(&mined), expected);
    }

    #[test]
    fn complete_context_has_single_concept() {
        let mut pairs = Vec::new();
        for g in 0..3 {
            for m in 0..4 {
                pairs.push((format!("g{g}"), format!("m{m}")));
            }
        }
        let ctx = FormalContext::from_pairs(&pairs).unwrap();
        let all = mine_significant(&ctx, SizeBounds::unbounded()).unwrap();
        assert_eq!(all.len(), 1);
        assert_eq!(all.concepts[0].extent.len(), 3);
        assert_eq!(all.concepts[0].intent.len(), 4);
        // admitted iff the bounds allow (3, 4)
        let tight = SizeBounds::new(0, Some(2), 0, None).unwrap();
        assert!(mine_significant(&ctx, tight).unwrap().is_empty());
    }

    #[test]
    fn bruteforce_examples() {
        let ctx = k1_context();
        assert_eq!(enumerate_all_bruteforce(&ctx).unwrap().len(), 4);

        let empty = FormalContext::from_parts(
            vec!["g1".into(), "g2".into()],
            vec!["m1".into(), "m2".into()],
            &[],
        )
        .unwrap();
        let set = enumerate_all_bruteforce(&empty).unwrap();
        let expected: HashSet<FormalConcept> = [
            FormalConcept::new(vec![0, 1], vec![]),
            FormalConcept::new(vec![], vec![0, 1]),
        ]
        .into_iter()
        .collect();
        assert_eq!(as_set(&set), expected);

        let unit = FormalContext::from_pairs(&[("g1", "m1")]).unwrap();
        let set = enumerate_all_bruteforce(&unit).unwrap();
        assert_eq!(set.len(), 1);
        assert_eq!(set.concepts[0], FormalConcept::new(vec![0], vec![0]));
    }

    #[test]
    fn bruteforce_guard() {
        let pairs: Vec<(String, String)> =
            (0..21).map(|m| ("g0".to_string(), format!("m{m}"))).collect();
        let ctx = FormalContext::from_pairs(&pairs).unwrap();
        assert!(matches!(
            enumerate_all_bruteforce(&ctx),
            Err(Error::TooManyAttributes(21))
        ));
    }

    #[test]
    fn is_concept_examples() {
        let ctx = k1_context();
        let g12: Vec<usize> = ["g1", "g2"]
            .iter()
            .map(|o| ctx.object_idx(o).unwrap())
            .collect();
        let m12: Vec<usize> = ["m1", "m2"]
            .iter()
            .map(|a| ctx.attribute_idx(a).unwrap())
            .collect();
        assert!(is_concept(&ctx, &g12, &m12).unwrap());
        let g1 = vec![ctx.object_idx("g1").unwrap()];
        assert!(!is_concept(&ctx, &g1, &m12).unwrap());

        let empty = FormalContext::from_parts(
            vec!["g1".into()],
            vec!["m1".into()],
            &[],
        )
        .unwrap();
        assert!(is_concept(&empty, &[0], &[]).unwrap());
    }

    #[test]
    fn mined_concepts_pass_is_concept_and_are_unique() {
        let ctx = random_context(10, 9, 0.35, 99);
        let mined = mine_significant(&ctx, SizeBounds::unbounded()).unwrap();
        let mut seen = HashSet::new();
        for c in &mined.concepts {
            assert!(is_concept(&ctx, &c.extent, &c.intent).unwrap());
            assert!(seen.insert(c.clone()), "duplicate concept emitted");
        }
    }

    #[test]
    fn loosening_bounds_never_shrinks() {
        let ctx = random_context(8, 8, 0.4, 5);
        let tight = SizeBounds::new(2, Some(4), 1, Some(3)).unwrap();
        let base = as_set(&mine_significant(&ctx, tight).unwrap());
        let looser = [
            SizeBounds::new(1, Some(4), 1, Some(3)).unwrap(),
            SizeBounds::new(2, Some(8), 1, Some(3)).unwrap(),
            SizeBounds::new(2, Some(4), 0, Some(3)).unwrap(),
            SizeBounds::new(2, Some(4), 1, None).unwrap(),
        ];
        for b in looser {
            let bigger = as_set(&mine_significant(&ctx, b).unwrap());
            assert!(base.is_subset(&bigger), "loosening {b} shrank the set");
        }
    }

    #[test]
    fn bounds_validation() {
        assert!(SizeBounds::new(3, Some(2), 0, None).is_err());
        assert!(SizeBounds::new(0, None, 5, Some(4)).is_err());
        assert!(SizeBounds::new(2, Some(2), 2, Some(2)).is_ok());
    }

    #[test]
    fn concepts_file_roundtrip_and_hash_check() {
        let ctx = k1_context();
        let mined = mine_significant(&ctx, SizeBounds::new(2, Some(3), 1, Some(2)).unwrap())
            .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("concepts.tsv");
        write_concepts(&path, &ctx, &mined).unwrap();

        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("# bounds l1=2 u1=3 l2=1 u2=2 context="));
        assert_eq!(text.lines().count(), 3);

        let loaded = read_concepts(&path, &ctx).unwrap();
        assert_eq!(as_set(&loaded), as_set(&mined));
        assert_eq!(loaded.bounds, mined.bounds);

        // deterministic bytes on rewrite
        write_concepts(&path, &ctx, &mined).unwrap();
        assert_eq!(text, std::fs::read_to_string(&path).unwrap());

        // wrong context is rejected
        let other = FormalContext::from_pairs(&[("g1", "m1")]).unwrap();
        assert!(matches!(
            read_concepts(&path, &other),
            Err(Error::ContextHashMismatch { .. })
        ));
    }

    #[test]
    fn empty_intent_serializes_and_parses() {
        let ctx = k1_context();
        let mined = mine_significant(&ctx, SizeBounds::unbounded()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("concepts.tsv");
        write_concepts(&path, &ctx, &mined).unwrap();
        let loaded = read_concepts(&path, &ctx).unwrap();
        assert_eq!(as_set(&loaded), as_set(&mined));
        assert!(loaded.concepts.iter().any(|c| c.intent.is_empty()));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        // miner == oracle, unbounded
        #[test]
        fn oracle_equivalence(n in 2usize..9, m in 2usize..9,
                              density in 0.1f64..0.7, seed: u64) {
            let ctx = random_context(n, m, density, seed);
            let mined = as_set(&mine_significant(&ctx, SizeBounds::unbounded()).unwrap());
            let oracle = as_set(&enumerate_all_bruteforce(&ctx).unwrap());
            prop_assert_eq!(mined, oracle);
        }

        // miner == oracle filtered, random bounds
        #[test]
        fn filter_equivalence(n in 2usize..9, m in 2usize..9, density in 0.1f64..0.7,
                              seed: u64, l1 in 0usize..4, w1 in 0usize..6,
                              l2 in 0usize..4, w2 in 0usize..6) {
            let ctx = random_context(n, m, density, seed);
            let bounds = SizeBounds::new(l1, Some(l1 + w1), l2, Some(l2 + w2)).unwrap();
            let mined = as_set(&mine_significant(&ctx, bounds).unwrap());
            let filtered: HashSet<FormalConcept> = enumerate_all_bruteforce(&ctx)
                .unwrap()
                .concepts
                .into_iter()
                .filter(|c| bounds.admits(c.extent.len(), c.intent.len()))
                .collect();
            prop_assert_eq!(mined, filtered);
        }
    }
}
