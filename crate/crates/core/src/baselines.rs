//! Reference link-prediction scorers: neighborhood heuristics and truncated
//! singular-value reconstruction.
//!
//! The heuristics adapt the classical unipartite similarity scores to a
//! bipartite graph: the score of a candidate link (u, v) sums the similarity
//! of u to every other object already linked to v, and similarity compares
//! attribute neighborhoods. Both sides are read straight off the incidence
//! rows and columns, so scorers are pure functions over the context.

use nalgebra::DMatrix;

use crate::bits::BitSet;
use crate::context::FormalContext;
use crate::{Error, Result};

/// The four neighborhood similarity kernels.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Heuristic {
    CommonNeighbors,
    Jaccard,
    AdamicAdar,
    ResourceAllocation,
}

impl Heuristic {
    /// Similarity of two objects from their attribute neighborhoods.
    /// `attr_degree` maps an attribute to its object count.
    fn sim(self, nu: &BitSet, nw: &BitSet, attr_degree: &dyn Fn(usize) -> usize) -> f64 {
        let mut inter = nu.clone();
        inter.intersect_assign(nw);
        match self {
            Heuristic::CommonNeighbors => inter.count() as f64,
            Heuristic::Jaccard => {
                let union = nu.count() + nw.count() - inter.count();
                if union == 0 {
                    0.0
                } else {
                    inter.count() as f64 / union as f64
                }
            }
            Heuristic::AdamicAdar => inter
                .iter()
                .map(attr_degree)
                .filter(|&d| d > 1)
                .map(|d| 1.0 / (d as f64).ln())
                .sum(),
            Heuristic::ResourceAllocation => inter
                .iter()
                .map(attr_degree)
                .map(|d| 1.0 / d as f64)
                .sum(),
        }
    }
}

/// Heuristic score by internal indices: sum of sim(u, w) over all objects w
/// linked to v other than u itself.
pub fn heuristic_score_idx(
    ctx: &FormalContext,
    u: usize,
    v: usize,
    kind: Heuristic,
) -> Result<f64> {
    if u >= ctx.n_objects() {
        return Err(Error::IndexOutOfRange {
            kind: "object",
            index: u,
            size: ctx.n_objects(),
        });
    }
    if v >= ctx.n_attributes() {
        return Err(Error::IndexOutOfRange {
            kind: "attribute",
            index: v,
            size: ctx.n_attributes(),
        });
    }
    let degree = |m: usize| ctx.col(m).count();
    let nu = ctx.row(u);
    let mut total = 0.0;
    for w in ctx.col(v).iter() {
        if w == u {
            continue;
        }
        total += kind.sim(nu, ctx.row(w), &degree);
    }
    Ok(total)
}

/// Heuristic score by identifier; unknown nodes are an error.
pub fn heuristic_score(
    ctx: &FormalContext,
    object: &str,
    attribute: &str,
    kind: Heuristic,
) -> Result<f64> {
    let u = ctx.object_idx(object).ok_or_else(|| Error::UnknownNode {
        side: "object",
        id: object.to_string(),
    })?;
    let v = ctx
        .attribute_idx(attribute)
        .ok_or_else(|| Error::UnknownNode {
            side: "attribute",
            id: attribute.to_string(),
        })?;
    heuristic_score_idx(ctx, u, v, kind)
}

// ---------------------------------------------------------------------------
// truncated SVD reconstruction
// ---------------------------------------------------------------------------

/// Rank-k reconstruction of the 0/1 incidence matrix; scores are its entries.
#[derive(Clone, Debug)]
pub struct SvdModel {
    reconstruction: DMatrix<f64>,
}

impl SvdModel {
    /// Decompose the incidence matrix and keep the top `rank` singular
    /// triples.
    pub fn fit(ctx: &FormalContext, rank: usize) -> Result<Self> {
        let n = ctx.n_objects();
        let m = ctx.n_attributes();
        let max = n.min(m);
        if rank == 0 || rank > max {
            return Err(Error::BadSvdRank { rank, max });
        }

        let mut incidence = DMatrix::<f64>::zeros(n, m);
        for &(g, a) in ctx.pairs() {
            incidence[(g as usize, a as usize)] = 1.0;
        }
        // nalgebra returns singular values in descending order
        let svd = incidence.svd(true, true);
        let u = svd.u.expect("left singular vectors requested");
        let vt = svd.v_t.expect("right singular vectors requested");

        let mut reconstruction = DMatrix::<f64>::zeros(n, m);
        for t in 0..rank {
            let sigma = svd.singular_values[t];
            let col = u.column(t);
            let row = vt.row(t);
            for i in 0..n {
                for j in 0..m {
                    reconstruction[(i, j)] += sigma * col[i] * row[j];
                }
            }
        }
        Ok(SvdModel { reconstruction })
    }

    /// Score by internal indices.
    pub fn score_idx(&self, u: usize, v: usize) -> Result<f64> {
        if u >= self.reconstruction.nrows() {
            return Err(Error::IndexOutOfRange {
                kind: "object",
                index: u,
                size: self.reconstruction.nrows(),
            });
        }
        if v >= self.reconstruction.ncols() {
            return Err(Error::IndexOutOfRange {
                kind: "attribute",
                index: v,
                size: self.reconstruction.ncols(),
            });
        }
        Ok(self.reconstruction[(u, v)])
    }

    /// Score by identifier, resolved against the context the model was fit
    /// on.
    pub fn score(&self, ctx: &FormalContext, object: &str, attribute: &str) -> Result<f64> {
        let u = ctx.object_idx(object).ok_or_else(|| Error::UnknownNode {
            side: "object",
            id: object.to_string(),
        })?;
        let v = ctx
            .attribute_idx(attribute)
            .ok_or_else(|| Error::UnknownNode {
                side: "attribute",
                id: attribute.to_string(),
            })?;
        self.score_idx(u, v)
    }
}

/// One-shot convenience: fit at `rank` and score a single pair.
pub fn svd_score(
    ctx: &FormalContext,
    rank: usize,
    object: &str,
    attribute: &str,
) -> Result<f64> {
    SvdModel::fit(ctx, rank)?.score(ctx, object, attribute)
}

// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use crate::context::k1_context;
    use crate::testutil::random_context;

    /// U = {u1, u2}, edges u1–v1, u1–v2, u2–v1, u2–v3.
    fn four_edge_graph() -> FormalContext {
        FormalContext::from_pairs(&[("u1", "v1"), ("u1", "v2"), ("u2", "v1"), ("u2", "v3")])
            .unwrap()
    }

    #[test]
    fn hand_scores_on_the_four_edge_graph() {
        let ctx = four_edge_graph();
        let cn = heuristic_score(&ctx, "u1", "v3", Heuristic::CommonNeighbors).unwrap();
        assert_eq!(cn, 1.0);
        let jc = heuristic_score(&ctx, "u1", "v3", Heuristic::Jaccard).unwrap();
        assert!((jc - 1.0 / 3.0).abs() < 1e-15);
        // sole common attribute v1 has degree 2
        let aa = heuristic_score(&ctx, "u1", "v3", Heuristic::AdamicAdar).unwrap();
        assert!((aa - 1.0 / 2.0f64.ln()).abs() < 1e-15);
        let ra = heuristic_score(&ctx, "u1", "v3", Heuristic::ResourceAllocation).unwrap();
        assert!((ra - 0.5).abs() < 1e-15);
        // scoring an existing edge must not sum u's similarity to itself
        let self_excluded =
            heuristic_score(&ctx, "u1", "v1", Heuristic::CommonNeighbors).unwrap();
        assert_eq!(self_excluded, 1.0);
    }

    #[test]
    fn isolated_object_scores_zero_everywhere() {
        let ctx = FormalContext::from_parts(
            vec!["u1".into(), "lone".into()],
            vec!["v1".into(), "v2".into()],
            &[(0, 0), (0, 1)],
        )
        .unwrap();
        for v in ["v1", "v2"] {
            for kind in [
                Heuristic::CommonNeighbors,
                Heuristic::Jaccard,
                Heuristic::AdamicAdar,
                Heuristic::ResourceAllocation,
            ] {
                assert_eq!(heuristic_score(&ctx, "lone", v, kind).unwrap(), 0.0);
            }
        }
    }

    #[test]
    fn unknown_nodes_error() {
        let ctx = four_edge_graph();
        assert!(matches!(
            heuristic_score(&ctx, "nope", "v1", Heuristic::CommonNeighbors),
            Err(Error::UnknownNode { side: "object", .. })
        ));
        assert!(matches!(
            heuristic_score(&ctx, "u1", "nope", Heuristic::Jaccard),
            Err(Error::UnknownNode {
                side: "attribute",
                ..
            })
        ));
        assert!(matches!(
            svd_score(&ctx, 1, "nope", "v1"),
            Err(Error::UnknownNode { .. })
        ));
    }

    #[test]
    fn heuristics_are_nonnegative_and_cn_dominates_scaled_jc() {
        for seed in 0..10u64 {
            let ctx = random_context(8, 8, 0.35, seed + 50);
            let degree = |m: usize| ctx.col(m).count();
            for u in 0..ctx.n_objects() {
                for v in 0..ctx.n_attributes() {
                    for kind in [
                        Heuristic::CommonNeighbors,
                        Heuristic::Jaccard,
                        Heuristic::AdamicAdar,
                        Heuristic::ResourceAllocation,
                    ] {
                        assert!(heuristic_score_idx(&ctx, u, v, kind).unwrap() >= 0.0);
                    }
                    // per-summand: |∩| = jc · |∪| exactly
                    for w in ctx.col(v).iter().filter(|&w| w != u) {
                        let nu = ctx.row(u);
                        let nw = ctx.row(w);
                        let cn = Heuristic::CommonNeighbors.sim(nu, nw, &degree);
                        let jc = Heuristic::Jaccard.sim(nu, nw, &degree);
                        let mut inter = nu.clone();
                        inter.intersect_assign(nw);
                        let union =
                            (nu.count() + nw.count() - inter.count()) as f64;
                        assert!(cn + 1e-12 >= jc * union);
                    }
                }
            }
        }
    }

    #[test]
    fn rank_one_all_ones_reconstructs_ones() {
        let ctx = FormalContext::from_pairs(&[
            ("a", "x"),
            ("a", "y"),
            ("b", "x"),
            ("b", "y"),
        ])
        .unwrap();
        let model = SvdModel::fit(&ctx, 1).unwrap();
        for u in ["a", "b"] {
            for v in ["x", "y"] {
                assert!((model.score(&ctx, u, v).unwrap() - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn full_rank_reproduces_incidence() {
        for seed in 0..5u64 {
            let ctx = random_context(7, 9, 0.4, seed + 100);
            let rank = ctx.n_objects().min(ctx.n_attributes());
            let model = SvdModel::fit(&ctx, rank).unwrap();
            for u in 0..ctx.n_objects() {
                for v in 0..ctx.n_attributes() {
                    let expected = if ctx.has(u, v) { 1.0 } else { 0.0 };
                    assert!(
                        (model.score_idx(u, v).unwrap() - expected).abs() < 1e-6,
                        "entry ({u},{v}) off at seed {seed}"
                    );
                }
            }
        }
    }

    #[test]
    fn k1_at_rank_three_is_exact() {
        let ctx = k1_context();
        let model = SvdModel::fit(&ctx, 3).unwrap();
        for u in 0..3 {
            for v in 0..3 {
                let expected = if ctx.has(u, v) { 1.0 } else { 0.0 };
                assert!((model.score_idx(u, v).unwrap() - expected).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn truncation_keeps_the_dominant_direction() {
        // block-diagonal: a 3×3 all-ones block dwarfs a single stray edge,
        // so the rank-1 reconstruction scores the block near 1 and the
        // stray near 0
        let mut pairs = Vec::new();
        for g in ["a", "b", "c"] {
            for m in ["x", "y", "z"] {
                pairs.push((g, m));
            }
        }
        pairs.push(("d", "w"));
        let ctx = FormalContext::from_pairs(&pairs).unwrap();
        let model = SvdModel::fit(&ctx, 1).unwrap();
        assert!(model.score(&ctx, "a", "x").unwrap() > 0.9);
        assert!(model.score(&ctx, "d", "w").unwrap() < 0.1);
    }

    #[test]
    fn bad_rank_is_rejected() {
        let ctx = k1_context();
        assert!(matches!(
            SvdModel::fit(&ctx, 0),
            Err(Error::BadSvdRank { rank: 0, max: 3 })
        ));
        assert!(matches!(
            SvdModel::fit(&ctx, 4),
            Err(Error::BadSvdRank { rank: 4, max: 3 })
        ));
    }
}
