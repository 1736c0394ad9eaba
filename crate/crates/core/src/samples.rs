//! Training-sample generation: distractor sets, concept samples, context
//! samples, padding, and tokenization.
//!
//! Concept samples pair extents with intents (cross-combinations included)
//! and label a pair positive exactly when it is fully connected (A×B ⊆ I).
//! Negatives come from distractors: copies of an extent/intent with a
//! fraction of members swapped for outsiders. Context samples are single
//! incidences ({g},{m}) against rejection-sampled non-incidences. Everything
//! is padded to fixed lengths and tokenized as
//! `[CLS] objects... [SEP] attributes...` — no positions, no order.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bits::BitSet;
use crate::concepts::{ConceptSet, SizeBounds};
use crate::context::FormalContext;
use crate::rng::{stream_rng, Stream};
use crate::{Error, Result};

/// Retry budget for one distractor and for one pair-local resample.
const RETRY_CAP: usize = 100;

/// Display forms of the special tokens in serialized samples.
pub const PAD_TOKEN: &str = "[PAD]";
pub const CLS_TOKEN: &str = "[CLS]";
pub const SEP_TOKEN: &str = "[SEP]";

// ---------------------------------------------------------------------------
// intermediate sets (distractors)
// ---------------------------------------------------------------------------

/// Projections of the mined concepts plus their corrupted twins.
///
/// `distractor_extents[i]` is the distractor of `extents[i]` (`None` when the
/// retry budget ran out), which makes the source↔distractor association
/// queryable in both directions by index.
#[derive(Clone, Debug)]
pub struct IntermediateSets {
    pub extents: Vec<BitSet>,
    pub intents: Vec<BitSet>,
    pub distractor_extents: Vec<Option<BitSet>>,
    pub distractor_intents: Vec<Option<BitSet>>,
    pub k: f64,
    pub seed: u64,
    pub warnings: Vec<String>,
}

/// Build distractors for every extent and intent: replace
/// `n1 = max(1, ⌊k·|set|⌋)` members with uniformly chosen outsiders, redraw
/// until the result collides with neither the sources nor the other
/// distractors, give up after a bounded number of attempts.
pub fn build_intermediate_sets(
    concepts: &ConceptSet,
    ctx: &FormalContext,
    k: f64,
    seed: u64,
) -> Result<IntermediateSets> {
    if !(k > 0.0 && k < 1.0) {
        return Err(Error::BadCorruptionRatio(k));
    }
    if concepts.is_empty() {
        return Err(Error::NoConcepts);
    }

    let extents: Vec<BitSet> = concepts
        .concepts
        .iter()
        .map(|c| BitSet::from_indices(ctx.n_objects(), &c.extent))
        .collect();
    let intents: Vec<BitSet> = concepts
        .concepts
        .iter()
        .map(|c| BitSet::from_indices(ctx.n_attributes(), &c.intent))
        .collect();

    let mut rng = stream_rng(seed, Stream::Distractor);
    let mut warnings = Vec::new();

    let mut forbidden_ext: HashSet<BitSet> = extents.iter().cloned().collect();
    let mut distractor_extents = Vec::with_capacity(extents.len());
    for (i, a) in extents.iter().enumerate() {
        match corrupt_until_fresh(a, k, &mut forbidden_ext, &mut rng) {
            Some(d) => distractor_extents.push(Some(d)),
            None => {
                warnings.push(format!("no distractor found for extent #{i}; skipped"));
                distractor_extents.push(None);
            }
        }
    }

    let mut forbidden_int: HashSet<BitSet> = intents.iter().cloned().collect();
    let mut distractor_intents = Vec::with_capacity(intents.len());
    for (j, b) in intents.iter().enumerate() {
        match corrupt_until_fresh(b, k, &mut forbidden_int, &mut rng) {
            Some(d) => distractor_intents.push(Some(d)),
            None => {
                warnings.push(format!("no distractor found for intent #{j}; skipped"));
                distractor_intents.push(None);
            }
        }
    }

    Ok(IntermediateSets {
        extents,
        intents,
        distractor_extents,
        distractor_intents,
        k,
        seed,
        warnings,
    })
}

/// One corruption attempt loop; on success the result is added to
/// `forbidden` so later distractors stay distinct from it.
fn corrupt_until_fresh(
    source: &BitSet,
    k: f64,
    forbidden: &mut HashSet<BitSet>,
    rng: &mut impl Rng,
) -> Option<BitSet> {
    for _ in 0..RETRY_CAP {
        let Some(candidate) = corrupt_once(source, k, rng) else {
            // structurally impossible (empty set or no outsiders); retrying
            // cannot help, but the cap also covers this path
            return None;
        };
        if !forbidden.contains(&candidate) {
            forbidden.insert(candidate.clone());
            return Some(candidate);
        }
    }
    None
}

/// Replace `max(1, ⌊k·|source|⌋)` members with outsiders, preserving
/// cardinality. `None` when the set is empty or the universe has no room.
fn corrupt_once(source: &BitSet, k: f64, rng: &mut impl Rng) -> Option<BitSet> {
    let members: Vec<usize> = source.iter().collect();
    if members.is_empty() {
        return None;
    }
    let n1 = ((k * members.len() as f64).floor() as usize).max(1);

    // pick n1 distinct victim positions via partial Fisher-Yates
    let mut order: Vec<usize> = (0..members.len()).collect();
    for i in 0..n1 {
        let j = rng.random_range(i..order.len());
        order.swap(i, j);
    }

    let mut out = source.clone();
    for &pos in &order[..n1] {
        // uniform choice among current outsiders keeps |out| = |source|
        let outsiders: Vec<usize> = (0..source.universe())
            .filter(|&x| !out.contains(x))
            .collect();
        if outsiders.is_empty() {
            return None;
        }
        let replacement = outsiders[rng.random_range(0..outsiders.len())];
        out.remove(members[pos]);
        out.insert(replacement);
    }
    Some(out)
}

// ---------------------------------------------------------------------------
// concept samples
// ---------------------------------------------------------------------------

/// Balanced positive/negative concept samples as sorted index-set pairs.
#[derive(Clone, Debug, Default)]
pub struct ConceptSamples {
    pub positives: Vec<(Vec<usize>, Vec<usize>)>,
    pub negatives: Vec<(Vec<usize>, Vec<usize>)>,
    pub warnings: Vec<String>,
}

/// Is every (object, attribute) pair of A×B incident? Vacuously true for
/// empty sides.
fn covers(ctx: &FormalContext, a: &BitSet, b: &BitSet) -> bool {
    a.iter().all(|g| b.is_subset(ctx.row(g)))
}

/// Pair every extent with every intent: fully connected pairs become
/// positives; their distractor pairs, when *not* fully connected, become
/// negatives. Positives whose distractor pair is missing or accidentally
/// connected get pair-local resampled distractors (bounded attempts) so the
/// sets balance whenever possible.
pub fn generate_concept_samples(sets: &IntermediateSets, ctx: &FormalContext) -> ConceptSamples {
    let mut out = ConceptSamples::default();
    let mut rng = stream_rng(sets.seed, Stream::Resample);

    let mut unresolved = 0usize;
    for (i, a) in sets.extents.iter().enumerate() {
        for (j, b) in sets.intents.iter().enumerate() {
            if !covers(ctx, a, b) {
                continue;
            }
            out.positives.push((a.to_vec(), b.to_vec()));

            let stored = match (&sets.distractor_extents[i], &sets.distractor_intents[j]) {
                (Some(da), Some(db)) if !covers(ctx, da, db) => Some((da.clone(), db.clone())),
                _ => None,
            };
            let negative = stored.or_else(|| {
                // pair-local retry: fresh corruptions of both sides until the
                // pair stops being fully connected. These stand outside the
                // shared distractor pool, so a non-covering pair is all that
                // is required — it can never coincide with a positive.
                for _ in 0..RETRY_CAP {
                    let (Some(da), Some(db)) = (
                        corrupt_once(a, sets.k, &mut rng),
                        corrupt_once(b, sets.k, &mut rng),
                    ) else {
                        return None;
                    };
                    if !covers(ctx, &da, &db) {
                        return Some((da, db));
                    }
                }
                None
            });
            match negative {
                Some((da, db)) => out.negatives.push((da.to_vec(), db.to_vec())),
                None => unresolved += 1,
            }
        }
    }
    if unresolved > 0 {
        out.warnings.push(format!(
            "{unresolved} positive pair(s) have no usable distractor pair; \
             negatives are short by that amount"
        ));
    }
    out
}

// ---------------------------------------------------------------------------
// context samples
// ---------------------------------------------------------------------------

/// Singleton samples: every incidence, against equally many non-incidences.
#[derive(Clone, Debug)]
pub struct ContextSamples {
    pub positives: Vec<(usize, usize)>,
    pub negatives: Vec<(usize, usize)>,
    pub warnings: Vec<String>,
}

/// T_p = all incidences; T_n = distinct uniformly drawn non-incidences until
/// balanced or exhausted (then all non-edges are used and a warning is
/// recorded).
pub fn generate_context_samples(ctx: &FormalContext, seed: u64) -> ContextSamples {
    let n = ctx.n_objects();
    let m = ctx.n_attributes();
    let positives: Vec<(usize, usize)> = ctx
        .pairs()
        .iter()
        .map(|&(g, a)| (g as usize, a as usize))
        .collect();
    let wanted = positives.len();
    let available = n * m - wanted;
    let mut warnings = Vec::new();

    let mut negatives = Vec::new();
    if available <= wanted {
        // scarcity: every non-edge is used, in sorted order
        for g in 0..n {
            for a in 0..m {
                if !ctx.has(g, a) {
                    negatives.push((g, a));
                }
            }
        }
        warnings.push(format!(
            "only {available} non-edges exist for {wanted} positives; using all of them"
        ));
    } else {
        let mut rng = stream_rng(seed, Stream::ContextNegatives);
        let mut chosen: HashSet<(usize, usize)> = HashSet::with_capacity(wanted);
        let budget = 1000usize.saturating_mul(wanted);
        let mut draws = 0usize;
        while negatives.len() < wanted && draws < budget {
            draws += 1;
            let pair = (rng.random_range(0..n), rng.random_range(0..m));
            if ctx.has(pair.0, pair.1) || chosen.contains(&pair) {
                continue;
            }
            chosen.insert(pair);
            negatives.push(pair);
        }
        // dense corner: finish deterministically instead of looping forever
        'fill: for g in 0..n {
            if negatives.len() == wanted {
                break;
            }
            for a in 0..m {
                let pair = (g, a);
                if !ctx.has(g, a) && !chosen.contains(&pair) {
                    chosen.insert(pair);
                    negatives.push(pair);
                    if negatives.len() == wanted {
                        break 'fill;
                    }
                }
            }
        }
    }

    ContextSamples {
        positives,
        negatives,
        warnings,
    }
}

// ---------------------------------------------------------------------------
// padding and the final sample set
// ---------------------------------------------------------------------------

/// Sample provenance: built from concept pairs or from single incidences.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Concept,
    Context,
}

/// One padded training sample; `None` entries are [PAD] slots.
#[derive(Clone, Debug, PartialEq)]
pub struct PaddedSample {
    pub objects: Vec<Option<usize>>,
    pub attributes: Vec<Option<usize>>,
    pub label: bool,
    pub kind: Kind,
}

/// The final training set T_F with its pad lengths.
#[derive(Clone, Debug)]
pub struct SampleSet {
    pub samples: Vec<PaddedSample>,
    pub l_ext: usize,
    pub l_int: usize,
    pub n_concept_pos: usize,
    pub n_concept_neg: usize,
    pub n_context_pos: usize,
    pub n_context_neg: usize,
}

/// Pad every sample to the longest object/attribute set over the concept
/// samples (at least 1 so singleton context samples always fit), members in
/// sorted order, [PAD] on the right; order: C_p, C_n, T_p, T_n.
pub fn pad_samples(concept: &ConceptSamples, context: &ContextSamples) -> SampleSet {
    let max_len = |iter: &mut dyn Iterator<Item = usize>| iter.max().unwrap_or(1).max(1);
    let l_ext = max_len(
        &mut concept
            .positives
            .iter()
            .chain(&concept.negatives)
            .map(|(a, _)| a.len()),
    );
    let l_int = max_len(
        &mut concept
            .positives
            .iter()
            .chain(&concept.negatives)
            .map(|(_, b)| b.len()),
    );

    let pad = |members: &[usize], width: usize| -> Vec<Option<usize>> {
        let mut seq: Vec<Option<usize>> = members.iter().map(|&x| Some(x)).collect();
        seq.resize(width, None);
        seq
    };

    let mut samples = Vec::new();
    for (label, pairs) in [(true, &concept.positives), (false, &concept.negatives)] {
        for (a, b) in pairs {
            samples.push(PaddedSample {
                objects: pad(a, l_ext),
                attributes: pad(b, l_int),
                label,
                kind: Kind::Concept,
            });
        }
    }
    for (label, pairs) in [(true, &context.positives), (false, &context.negatives)] {
        for &(g, m) in pairs {
            samples.push(PaddedSample {
                objects: pad(&[g], l_ext),
                attributes: pad(&[m], l_int),
                label,
                kind: Kind::Context,
            });
        }
    }

    SampleSet {
        samples,
        l_ext,
        l_int,
        n_concept_pos: concept.positives.len(),
        n_concept_neg: concept.negatives.len(),
        n_context_pos: context.positives.len(),
        n_context_neg: context.negatives.len(),
    }
}

// ---------------------------------------------------------------------------
// vocabulary and tokenization
// ---------------------------------------------------------------------------

/// Token id assignment: [PAD]=0, [CLS]=1, [SEP]=2, objects, then attributes.
pub const PAD_ID: usize = 0;
pub const CLS_ID: usize = 1;
pub const SEP_ID: usize = 2;

/// Closed vocabulary over one context's identifiers plus the three special
/// tokens. Objects and attributes keep disjoint id ranges, so an identifier
/// string appearing on both sides maps to two distinct tokens.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocabulary {
    objects: Vec<String>,
    attributes: Vec<String>,
    object_ids: HashMap<String, usize>,
    attribute_ids: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn from_context(ctx: &FormalContext) -> Result<Self> {
        Self::from_ids(ctx.object_ids().to_vec(), ctx.attribute_ids().to_vec())
    }

    pub fn from_ids(objects: Vec<String>, attributes: Vec<String>) -> Result<Self> {
        for id in objects.iter().chain(&attributes) {
            if id == PAD_TOKEN || id == CLS_TOKEN || id == SEP_TOKEN {
                return Err(Error::BadConfig(format!(
                    "identifier '{id}' collides with a special token"
                )));
            }
        }
        let object_ids = objects
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i))
            .collect();
        let attribute_ids = attributes
            .iter()
            .enumerate()
            .map(|(j, s)| (s.clone(), j))
            .collect();
        Ok(Vocabulary {
            objects,
            attributes,
            object_ids,
            attribute_ids,
        })
    }

    pub fn n_objects(&self) -> usize {
        self.objects.len()
    }

    pub fn n_attributes(&self) -> usize {
        self.attributes.len()
    }

    /// Total token count: objects + attributes + the three specials.
    pub fn size(&self) -> usize {
        self.objects.len() + self.attributes.len() + 3
    }

    pub fn object_token(&self, index: usize) -> Result<usize> {
        if index >= self.objects.len() {
            return Err(Error::IndexOutOfRange {
                kind: "object",
                index,
                size: self.objects.len(),
            });
        }
        Ok(3 + index)
    }

    pub fn attribute_token(&self, index: usize) -> Result<usize> {
        if index >= self.attributes.len() {
            return Err(Error::IndexOutOfRange {
                kind: "attribute",
                index,
                size: self.attributes.len(),
            });
        }
        Ok(3 + self.objects.len() + index)
    }

    pub fn object_index(&self, id: &str) -> Result<usize> {
        self.object_ids
            .get(id)
            .copied()
            .ok_or_else(|| Error::UnknownMember {
                side: "object",
                id: id.to_string(),
            })
    }

    pub fn attribute_index(&self, id: &str) -> Result<usize> {
        self.attribute_ids
            .get(id)
            .copied()
            .ok_or_else(|| Error::UnknownMember {
                side: "attribute",
                id: id.to_string(),
            })
    }

    pub fn object_id(&self, index: usize) -> &str {
        &self.objects[index]
    }

    pub fn attribute_id(&self, index: usize) -> &str {
        &self.attributes[index]
    }

    pub fn object_id_list(&self) -> &[String] {
        &self.objects
    }

    pub fn attribute_id_list(&self) -> &[String] {
        &self.attributes
    }

    /// Namespaced display form of a token id.
    pub fn display(&self, token: usize) -> String {
        match token {
            PAD_ID => PAD_TOKEN.to_string(),
            CLS_ID => CLS_TOKEN.to_string(),
            SEP_ID => SEP_TOKEN.to_string(),
            t if t < 3 + self.objects.len() => format!("o:{}", self.objects[t - 3]),
            t => format!("a:{}", self.attributes[t - 3 - self.objects.len()]),
        }
    }
}

/// `[CLS] x1..x_l_ext [SEP] y1..y_l_int` as token ids; total length
/// 2 + l_ext + l_int.
pub fn tokenize(sample: &PaddedSample, vocab: &Vocabulary) -> Result<Vec<usize>> {
    let mut tokens = Vec::with_capacity(2 + sample.objects.len() + sample.attributes.len());
    tokens.push(CLS_ID);
    for slot in &sample.objects {
        tokens.push(match slot {
            Some(i) => vocab.object_token(*i)?,
            None => PAD_ID,
        });
    }
    tokens.push(SEP_ID);
    for slot in &sample.attributes {
        tokens.push(match slot {
            Some(j) => vocab.attribute_token(*j)?,
            None => PAD_ID,
        });
    }
    Ok(tokens)
}

/// Key mask for a tokenized sample: true = attend, false = [PAD].
pub fn pad_mask(tokens: &[usize]) -> Vec<bool> {
    tokens.iter().map(|&t| t != PAD_ID).collect()
}

// ---------------------------------------------------------------------------
// serialization (JSON lines)
// ---------------------------------------------------------------------------

/// Header record of a samples file.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct SamplesMeta {
    #[serde(rename = "type")]
    pub record_type: String,
    pub l_ext: usize,
    pub l_int: usize,
    pub k: f64,
    pub seed: u64,
    pub bounds: SizeBounds,
}

#[derive(Serialize, Deserialize)]
struct SampleRecord {
    x: Vec<String>,
    y: Vec<String>,
    label: u8,
    kind: Kind,
}

/// Write T_F as JSON lines: one metadata header record, then one record per
/// sample with identifier members and [PAD] fillers.
pub fn write_samples(
    path: &Path,
    ctx: &FormalContext,
    set: &SampleSet,
    k: f64,
    seed: u64,
    bounds: SizeBounds,
) -> Result<()> {
    let as_path = || path.display().to_string();
    let meta = SamplesMeta {
        record_type: "meta".to_string(),
        l_ext: set.l_ext,
        l_int: set.l_int,
        k,
        seed,
        bounds,
    };
    let mut out = serde_json::to_string(&meta).map_err(|e| Error::json(as_path(), e))?;
    out.push('\n');
    for sample in &set.samples {
        let record = SampleRecord {
            x: sample
                .objects
                .iter()
                .map(|slot| match slot {
                    Some(i) => ctx.object_id(*i).to_string(),
                    None => PAD_TOKEN.to_string(),
                })
                .collect(),
            y: sample
                .attributes
                .iter()
                .map(|slot| match slot {
                    Some(j) => ctx.attribute_id(*j).to_string(),
                    None => PAD_TOKEN.to_string(),
                })
                .collect(),
            label: sample.label as u8,
            kind: sample.kind,
        };
        out.push_str(&serde_json::to_string(&record).map_err(|e| Error::json(as_path(), e))?);
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(as_path(), e))
}

/// Read a samples file back, resolving identifiers against `vocab`.
pub fn read_samples(path: &Path, vocab: &Vocabulary) -> Result<(SampleSet, SamplesMeta)> {
    let as_path = || path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(as_path(), e))?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::BadSamplesFile("empty file".to_string()))?;
    let meta: SamplesMeta =
        serde_json::from_str(header).map_err(|e| Error::json(as_path(), e))?;
    if meta.record_type != "meta" {
        return Err(Error::BadSamplesFile(
            "first record is not the metadata header".to_string(),
        ));
    }

    let parse_side = |fields: &[String],
                      expected: usize,
                      resolve: &dyn Fn(&str) -> Result<usize>|
     -> Result<Vec<Option<usize>>> {
        if fields.len() != expected {
            return Err(Error::BadSamplesFile(format!(
                "sequence length {} does not match header length {expected}",
                fields.len()
            )));
        }
        let mut out = Vec::with_capacity(fields.len());
        let mut seen_pad = false;
        for f in fields {
            if f == PAD_TOKEN {
                seen_pad = true;
                out.push(None);
            } else {
                if seen_pad {
                    return Err(Error::BadSamplesFile(
                        "real member after [PAD]".to_string(),
                    ));
                }
                out.push(Some(resolve(f)?));
            }
        }
        Ok(out)
    };

    let mut samples = Vec::new();
    let mut counts = [0usize; 4];
    for line in lines {
        if line.is_empty() {
            continue;
        }
        let record: SampleRecord =
            serde_json::from_str(line).map_err(|e| Error::json(as_path(), e))?;
        let label = match record.label {
            0 => false,
            1 => true,
            other => {
                return Err(Error::BadSamplesFile(format!("label {other} not 0/1")));
            }
        };
        let sample = PaddedSample {
            objects: parse_side(&record.x, meta.l_ext, &|id| vocab.object_index(id))?,
            attributes: parse_side(&record.y, meta.l_int, &|id| vocab.attribute_index(id))?,
            label,
            kind: record.kind,
        };
        let slot = match (record.kind, label) {
            (Kind::Concept, true) => 0,
            (Kind::Concept, false) => 1,
            (Kind::Context, true) => 2,
            (Kind::Context, false) => 3,
        };
        counts[slot] += 1;
        samples.push(sample);
    }

    Ok((
        SampleSet {
            samples,
            l_ext: meta.l_ext,
            l_int: meta.l_int,
            n_concept_pos: counts[0],
            n_concept_neg: counts[1],
            n_context_pos: counts[2],
            n_context_neg: counts[3],
        },
        meta,
    ))
}

// ---------------------------------------------------------------------------
