//! Approximate nearest-neighbor search: a forest of random-projection
//! trees in the style of Annoy's angular mode, with exact cosine
//! re-ranking of the gathered candidates.
//!
//! Each internal node splits on the perpendicular bisector of two random
//! points of its item set; a query walks all trees through one global
//! priority queue keyed by hyperplane margins, so far-side subtrees are
//! visited only after every nearer region is exhausted. Whatever the
//! traversal misses only lowers recall — similarity numbers returned to
//! callers are always exact cosines.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::collections::BinaryHeap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::embed::{Components, DocVector};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Exact cosine similarity of two non-degenerate document vectors,
/// clamped into [-1, 1].
pub fn cosine<T: Scalar>(a: &DocVector<T>, b: &DocVector<T>) -> Result<T> {
    if a.is_degenerate || b.is_degenerate {
        return Err(Error::DegenerateVector(format!(
            "cosine over degenerate vector ({} vs {})",
            a.article_id, b.article_id
        )));
    }
    a.components.cosine(&b.components)
}

/// Forest construction parameters.
#[derive(Debug, Clone)]
pub struct RpForestParams {
    pub n_trees: usize,
    pub leaf_size: usize,
    pub seed: u64,
}

impl Default for RpForestParams {
    fn default() -> Self {
        RpForestParams {
            n_trees: 32,
            leaf_size: 30,
            seed: 42,
        }
    }
}

/// Default candidate budget for [`RpForest::query`].
pub fn default_search_k(n_trees: usize, k: usize) -> usize {
    n_trees * k * 32
}

#[derive(Debug, Clone, PartialEq)]
enum Node<T> {
    Internal {
        normal: Components<T>,
        offset: T,
        left: u32,
        right: u32,
    },
    Leaf(Vec<u32>),
}

#[derive(Debug, Clone, PartialEq)]
struct Tree<T> {
    nodes: Vec<Node<T>>,
    root: u32,
}

/// Immutable random-projection forest over a set of document vectors.
#[derive(Debug, Clone)]
pub struct RpForest<T> {
    params: RpForestParams,
    ids: Vec<String>,
    items: Vec<Components<T>>,
    trees: Vec<Tree<T>>,
    n_excluded_degenerate: usize,
}

/// `a - b` over mixed payloads; mixed dense/sparse densifies.
fn subtract<T: Scalar>(a: &Components<T>, b: &Components<T>) -> Components<T> {
    match (a, b) {
        (Components::Dense(x), Components::Dense(y)) => {
            Components::Dense(x.iter().zip(y).map(|(&p, &q)| p - q).collect())
        }
        (Components::Sparse(x), Components::Sparse(y)) => {
            let mut entries: Vec<_> = x.entries().to_vec();
            entries.extend(y.entries().iter().map(|&(id, w)| (id, -w)));
            Components::Sparse(crate::textproc::SparseVector::from_entries(
                entries,
                x.dim(),
            ))
        }
        (dense @ Components::Dense(_), Components::Sparse(y)) => {
            let mut out = match dense {
                Components::Dense(x) => x.clone(),
                Components::Sparse(_) => unreachable!(),
            };
            for &(id, w) in y.entries() {
                out[id.index()] -= w;
            }
            Components::Dense(out)
        }
        (Components::Sparse(x), Components::Dense(y)) => {
            let mut out: Vec<T> = y.iter().map(|&q| -q).collect();
            for &(id, w) in x.entries() {
                out[id.index()] += w;
            }
            Components::Dense(out)
        }
    }
}

struct TreeBuilder<'a, T> {
    items: &'a [Components<T>],
    leaf_size: usize,
    rng: ChaCha8Rng,
    nodes: Vec<Node<T>>,
}

impl<'a, T: Scalar> TreeBuilder<'a, T> {
    fn margin(normal: &Components<T>, offset: T, point: &Components<T>) -> T {
        normal.dot(point).expect("index invariant: equal dims") - offset
    }

    /// Bisector of two distinct random points of the node; the two chosen
    /// points always land on opposite sides, so the split cannot be empty.
    fn bisector_split(&mut self, indices: &[u32]) -> Option<(Components<T>, T)> {
        let a_pos = self.rng.random_range(0..indices.len());
        let b_pos = self.rng.random_range(0..indices.len());
        if a_pos == b_pos {
            return None;
        }
        let a = &self.items[indices[a_pos] as usize];
        let b = &self.items[indices[b_pos] as usize];
        let normal = subtract(a, b);
        if !(normal.norm() > T::zero()) {
            return None; // identical points
        }
        let na = a.norm();
        let nb = b.norm();
        let offset = (na * na - nb * nb) / T::from_f64_lossy(2.0);
        Some((normal, offset))
    }

    /// Fallback for duplicate-heavy nodes: a random direction, offset at
    /// the item mean, which separates any set with unequal projections.
    fn random_split(&mut self, indices: &[u32], dim: usize) -> (Components<T>, T) {
        let normal = Components::Dense(
            (0..dim)
                .map(|_| T::from_f64_lossy(self.rng.random_range(-1.0..1.0)))
                .collect(),
        );
        let mut sum = T::zero();
        for &idx in indices {
            sum += Self::margin(&normal, T::zero(), &self.items[idx as usize]);
        }
        let offset = sum / T::from_f64_lossy(indices.len() as f64);
        (normal, offset)
    }

    fn build(&mut self, indices: Vec<u32>, dim: usize) -> u32 {
        if indices.len() <= self.leaf_size {
            self.nodes.push(Node::Leaf(indices));
            return (self.nodes.len() - 1) as u32;
        }

        // Up to 3 bisector attempts, then up to 3 random-direction
        // attempts, then give up and accept an oversized leaf.
        let mut split = None;
        for _ in 0..3 {
            if let Some((normal, offset)) = self.bisector_split(&indices) {
                split = Some((normal, offset));
                break;
            }
        }
        let mut partition = None;
        let mut attempts = 0;
        loop {
            let (normal, offset) = match split.take() {
                Some(s) => s,
                None if attempts < 3 => {
                    attempts += 1;
                    self.random_split(&indices, dim)
                }
                None => break,
            };
            let (mut left, mut right) = (Vec::new(), Vec::new());
            for &idx in &indices {
                if Self::margin(&normal, offset, &self.items[idx as usize]) >= T::zero() {
                    left.push(idx);
                } else {
                    right.push(idx);
                }
            }
            if !left.is_empty() && !right.is_empty() {
                partition = Some((normal, offset, left, right));
                break;
            }
        }

        match partition {
            Some((normal, offset, left, right)) => {
                let left_id = self.build(left, dim);
                let right_id = self.build(right, dim);
                self.nodes.push(Node::Internal {
                    normal,
                    offset,
                    left: left_id,
                    right: right_id,
                });
                (self.nodes.len() - 1) as u32
            }
            None => {
                self.nodes.push(Node::Leaf(indices));
                (self.nodes.len() - 1) as u32
            }
        }
    }
}

/// Heap priority with a deterministic total order; margins are finite by
/// construction and roots enter at +infinity.
#[derive(PartialEq)]
struct Priority<T>(T);

impl<T: Scalar> Eq for Priority<T> {}

impl<T: Scalar> PartialOrd for Priority<T> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<T: Scalar> Ord for Priority<T> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0
            .partial_cmp(&other.0)
            .expect("priorities are never NaN")
    }
}

impl<T: Scalar> RpForest<T> {
    /// Indexes all non-degenerate vectors. Degenerate ones are skipped and
    /// counted (see [`RpForest::n_excluded_degenerate`]); an input with no
    /// usable vector is an error.
    ///
    /// Trees are independent — tree `i` is seeded with `seed + i` — so the
    /// parallel build below is bitwise-equal to a sequential one.
    pub fn build(
        vectors: &BTreeMap<String, DocVector<T>>,
        params: &RpForestParams,
    ) -> Result<RpForest<T>> {
        if params.n_trees == 0 || params.leaf_size == 0 {
            return Err(Error::Config(
                "n_trees and leaf_size must be positive".into(),
            ));
        }
        let mut ids = Vec::new();
        let mut items = Vec::new();
        let mut n_excluded = 0usize;
        for (id, vector) in vectors {
            if vector.is_degenerate {
                n_excluded += 1;
            } else {
                ids.push(id.clone());
                items.push(vector.components.clone());
            }
        }
        if items.is_empty() {
            return Err(Error::Data(
                "no non-degenerate vectors to index".into(),
            ));
        }
        let dim = items[0].dim();
        for item in &items {
            if item.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: item.dim(),
                });
            }
        }

        let all_indices: Vec<u32> = (0..items.len() as u32).collect();
        let trees: Vec<Tree<T>> = (0..params.n_trees)
            .into_par_iter()
            .map(|tree_idx| {
                let mut builder = TreeBuilder {
                    items: &items,
                    leaf_size: params.leaf_size,
                    rng: ChaCha8Rng::seed_from_u64(
                        params.seed.wrapping_add(tree_idx as u64),
                    ),
                    nodes: Vec::new(),
                };
                let root = builder.build(all_indices.clone(), dim);
                Tree {
                    nodes: builder.nodes,
                    root,
                }
            })
            .collect();

        Ok(RpForest {
            params: params.clone(),
            ids,
            items,
            trees,
            n_excluded_degenerate: n_excluded,
        })
    }

    pub fn n_items(&self) -> usize {
        self.items.len()
    }

    pub fn n_excluded_degenerate(&self) -> usize {
        self.n_excluded_degenerate
    }

    pub fn params(&self) -> &RpForestParams {
        &self.params
    }

    pub fn item_ids(&self) -> impl Iterator<Item = &str> + '_ {
        self.ids.iter().map(String::as_str)
    }

    /// Per-tree (leaf count, largest leaf) — diagnostics for split quality.
    pub fn leaf_stats(&self) -> Vec<(usize, usize)> {
        self.trees
            .iter()
            .map(|tree| {
                let leaves: Vec<usize> = tree
                    .nodes
                    .iter()
                    .filter_map(|node| match node {
                        Node::Leaf(items) => Some(items.len()),
                        Node::Internal { .. } => None,
                    })
                    .collect();
                (leaves.len(), leaves.iter().copied().max().unwrap_or(0))
            })
            .collect()
    }

    /// Top-`k` most cosine-similar indexed items, descending, ties broken
    /// by ascending id. Gathers at least `max(k, min(search_k, n_items))`
    /// distinct candidates (default budget [`default_search_k`]) via a
    /// best-first walk of all trees, then re-ranks them exactly.
    pub fn query(
        &self,
        q: &DocVector<T>,
        k: usize,
        search_k: Option<usize>,
    ) -> Result<Vec<(String, T)>> {
        if q.is_degenerate {
            return Err(Error::DegenerateVector(format!(
                "query vector {} is degenerate",
                q.article_id
            )));
        }
        if q.dim() != self.items[0].dim() {
            return Err(Error::DimensionMismatch {
                expected: self.items[0].dim(),
                found: q.dim(),
            });
        }
        if k == 0 {
            return Ok(Vec::new());
        }
        let budget = search_k.unwrap_or_else(|| default_search_k(self.params.n_trees, k));
        let target = budget.min(self.n_items()).max(k.min(self.n_items()));

        let mut heap: BinaryHeap<(Priority<T>, usize, u32)> = self
            .trees
            .iter()
            .enumerate()
            .map(|(tree_idx, tree)| (Priority(T::infinity()), tree_idx, tree.root))
            .collect();
        let mut seen = vec![false; self.items.len()];
        let mut candidates: Vec<u32> = Vec::with_capacity(target);

        while candidates.len() < target {
            let Some((Priority(priority), tree_idx, node_idx)) = heap.pop() else {
                break;
            };
            match &self.trees[tree_idx].nodes[node_idx as usize] {
                Node::Leaf(items) => {
                    for &item in items {
                        if !seen[item as usize] {
                            seen[item as usize] = true;
                            candidates.push(item);
                        }
                    }
                }
                Node::Internal {
                    normal,
                    offset,
                    left,
                    right,
                } => {
                    let margin = TreeBuilder::margin(normal, *offset, &q.components);
                    let (near, far) = if margin >= T::zero() {
                        (*left, *right)
                    } else {
                        (*right, *left)
                    };
                    let abs = margin.abs();
                    heap.push((Priority(priority.min(abs)), tree_idx, near));
                    heap.push((Priority(priority.min(-abs)), tree_idx, far));
                }
            }
        }

        let mut ranked: Vec<(u32, T)> = candidates
            .into_iter()
            .map(|item| {
                let cos = q
                    .components
                    .cosine(&self.items[item as usize])
                    .expect("indexed items are non-degenerate");
                (item, cos)
            })
            .collect();
        // Descending cosine; ids are stored sorted, so the item index is
        // the ascending-id tiebreak.
        ranked.sort_by(|a, b| {
            b.1.partial_cmp(&a.1)
                .expect("cosines are never NaN")
                .then_with(|| a.0.cmp(&b.0))
        });
        ranked.truncate(k);
        Ok(ranked
            .into_iter()
            .map(|(item, cos)| (self.ids[item as usize].clone(), cos))
            .collect())
    }
}

/// Exact top-`k` by brute force over every indexed vector — the oracle the
/// forest is measured against, and the semantics `query` must match once
/// `search_k` covers the whole item set.
pub fn brute_force_top_k<T: Scalar>(
    vectors: &BTreeMap<String, DocVector<T>>,
    q: &DocVector<T>,
    k: usize,
) -> Result<Vec<(String, T)>> {
    let mut scored: Vec<(String, T)> = Vec::new();
    for (id, vector) in vectors {
        if vector.is_degenerate {
            continue;
        }
        scored.push((id.clone(), cosine(q, vector)?));
    }
    scored.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .expect("cosines are never NaN")
            .then_with(|| a.0.cmp(&b.0))
    });
    scored.truncate(k);
    Ok(scored)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;

    fn unit(id: &str, components: Vec<f64>) -> DocVector<f64> {
        DocVector::from_components(id.to_string(), Components::Dense(components))
    }

    fn random_unit_vectors(n: usize, dim: usize, seed: u64) -> BTreeMap<String, DocVector<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let id = format!("v{i:05}");
                let row: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
                (id.clone(), unit(&id, row))
            })
            .collect()
    }

    #[test]
    fn cosine_axes() {
        let e1 = unit("e1", vec![1.0, 0.0, 0.0]);
        let e2 = unit("e2", vec![0.0, 1.0, 0.0]);
        let neg = unit("neg", vec![-1.0, 0.0, 0.0]);
        assert!((cosine(&e1, &e1).unwrap() - 1.0).abs() < 1e-12);
        assert!(cosine(&e1, &e2).unwrap().abs() < 1e-12);
        assert!((cosine(&e1, &neg).unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn cosine_rejects_degenerate() {
        let e1 = unit("e1", vec![1.0, 0.0]);
        let zero = DocVector::from_components("z".into(), Components::Dense(vec![0.0, 0.0]));
        assert!(matches!(
            cosine(&e1, &zero),
            Err(Error::DegenerateVector(_))
        ));
    }

    #[test]
    fn few_items_make_single_leaf_trees() {
        let vectors = random_unit_vectors(10, 8, 1);
        let forest = RpForest::build(&vectors, &RpForestParams::default()).unwrap();
        for (n_leaves, max_leaf) in forest.leaf_stats() {
            assert_eq!(n_leaves, 1);
            assert_eq!(max_leaf, 10);
        }
    }

    #[test]
    fn leaves_respect_leaf_size() {
        let vectors = random_unit_vectors(1000, 8, 2);
        let forest = RpForest::build(
            &vectors,
            &RpForestParams {
                n_trees: 8,
                leaf_size: 30,
                seed: 3,
            },
        )
        .unwrap();
        for (_, max_leaf) in forest.leaf_stats() {
            assert!(max_leaf <= 30, "leaf of {max_leaf} items exceeds leaf_size");
        }
    }

    #[test]
    fn duplicate_heavy_input_terminates() {
        // 200 copies of one point plus one outlier: bisector splits always
        // fail inside the duplicate block, forcing the oversized-leaf path.
        let mut vectors = BTreeMap::new();
        for i in 0..200 {
            vectors.insert(
                format!("dup{i:03}"),
                unit(&format!("dup{i:03}"), vec![1.0, 0.0]),
            );
        }
        vectors.insert("other".into(), unit("other", vec![0.0, 1.0]));
        let forest = RpForest::build(
            &vectors,
            &RpForestParams {
                n_trees: 4,
                leaf_size: 30,
                seed: 9,
            },
        )
        .unwrap();
        assert_eq!(forest.n_items(), 201);
        let got = forest.query(&unit("q", vec![1.0, 0.0]), 1, Some(201)).unwrap();
        assert_eq!(got[0].0, "dup000");
    }

    #[test]
    fn build_is_deterministic() {
        let vectors = random_unit_vectors(300, 16, 4);
        let params = RpForestParams {
            n_trees: 6,
            leaf_size: 10,
            seed: 77,
        };
        let a = RpForest::build(&vectors, &params).unwrap();
        let b = RpForest::build(&vectors, &params).unwrap();
        assert_eq!(a.trees, b.trees);
        let q = unit("q", vec![0.3; 16]);
        assert_eq!(
            a.query(&q, 7, None).unwrap(),
            b.query(&q, 7, None).unwrap()
        );
    }

    #[test]
    fn self_retrieval() {
        let vectors = random_unit_vectors(50, 8, 5);
        let forest = RpForest::build(&vectors, &RpForestParams::default()).unwrap();
        let probe = &vectors["v00017"];
        let got = forest.query(probe, 1, None).unwrap();
        assert_eq!(got[0].0, "v00017");
        assert!((got[0].1 - 1.0).abs() < 1e-9);
    }

    #[test]
    fn exhaustive_budget_equals_brute_force() {
        let vectors = random_unit_vectors(400, 12, 6);
        let forest = RpForest::build(
            &vectors,
            &RpForestParams {
                n_trees: 4,
                leaf_size: 20,
                seed: 8,
            },
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for qi in 0..20 {
            let row: Vec<f64> = (0..12).map(|_| rng.random_range(-1.0..1.0)).collect();
            let q = unit(&format!("q{qi}"), row);
            let exact = brute_force_top_k(&vectors, &q, 10).unwrap();
            let approx = forest.query(&q, 10, Some(vectors.len())).unwrap();
            assert_eq!(exact, approx);
        }
    }

    #[test]
    fn ties_break_by_ascending_id() {
        // Three identical vectors tie at cosine 1; order must be id order.
        let mut vectors = BTreeMap::new();
        for id in ["ccc", "aaa", "bbb", "zzz"] {
            let row = if id == "zzz" { vec![0.0, 1.0] } else { vec![1.0, 0.0] };
            vectors.insert(id.to_string(), unit(id, row));
        }
        let forest = RpForest::build(&vectors, &RpForestParams::default()).unwrap();
        let got = forest.query(&unit("q", vec![1.0, 0.0]), 3, Some(4)).unwrap();
        let ids: Vec<&str> = got.iter().map(|(id, _)| id.as_str()).collect();
        assert_eq!(ids, ["aaa", "bbb", "ccc"]);
    }

    fn mean_recall(
        forest: &RpForest<f64>,
        vectors: &BTreeMap<String, DocVector<f64>>,
        queries: &[DocVector<f64>],
        k: usize,
        search_k: Option<usize>,
    ) -> f64 {
        let mut total = 0.0;
        for q in queries {
            let exact: std::collections::HashSet<String> = brute_force_top_k(vectors, q, k)
                .unwrap()
                .into_iter()
                .map(|(id, _)| id)
                .collect();
            let got = forest.query(q, k, search_k).unwrap();
            let hit = got.iter().filter(|(id, _)| exact.contains(id)).count();
            total += hit as f64 / k as f64;
        }
        total / queries.len() as f64
    }

    #[test]
    fn recall_reasonable_at_default_budget() {
        let vectors = random_unit_vectors(200, 16, 7);
        let forest = RpForest::build(
            &vectors,
            &RpForestParams {
                n_trees: 16,
                leaf_size: 10,
                seed: 11,
            },
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(123);
        let queries: Vec<DocVector<f64>> = (0..40)
            .map(|i| {
                let row: Vec<f64> = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
                unit(&format!("q{i}"), row)
            })
            .collect();
        let recall = mean_recall(&forest, &vectors, &queries, 5, None);
        assert!(recall >= 0.9, "recall {recall} below bar");
    }

    #[test]
    fn recall_monotone_in_search_k() {
        let vectors = random_unit_vectors(300, 12, 8);
        let forest = RpForest::build(
            &vectors,
            &RpForestParams {
                n_trees: 8,
                leaf_size: 15,
                seed: 13,
            },
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(321);
        let queries: Vec<DocVector<f64>> = (0..100)
            .map(|i| {
                let row: Vec<f64> = (0..12).map(|_| rng.random_range(-1.0..1.0)).collect();
                unit(&format!("q{i}"), row)
            })
            .collect();
        let budgets = [10usize, 40, 120, 300];
        let recalls: Vec<f64> = budgets
            .iter()
            .map(|&b| mean_recall(&forest, &vectors, &queries, 10, Some(b)))
            .collect();
        for pair in recalls.windows(2) {
            assert!(
                pair[1] >= pair[0] - 0.02,
                "recall dropped with larger budget: {recalls:?}"
            );
        }
        assert!((recalls[recalls.len() - 1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_vectors_are_excluded() {
        let mut vectors = random_unit_vectors(20, 8, 9);
        vectors.insert(
            "zero".into(),
            DocVector::from_components("zero".into(), Components::Dense(vec![0.0; 8])),
        );
        let forest = RpForest::build(&vectors, &RpForestParams::default()).unwrap();
        assert_eq!(forest.n_items(), 20);
        assert_eq!(forest.n_excluded_degenerate(), 1);
    }

    #[test]
    fn empty_and_zero_k_cases() {
        let empty: BTreeMap<String, DocVector<f64>> = BTreeMap::new();
        assert!(RpForest::build(&empty, &RpForestParams::default()).is_err());
        let vectors = random_unit_vectors(5, 4, 10);
        let forest = RpForest::build(&vectors, &RpForestParams::default()).unwrap();
        assert!(forest
            .query(&unit("q", vec![1.0, 0.0, 0.0, 0.0]), 0, None)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn sparse_items_work_through_the_same_interface() {
        use crate::textproc::{SparseVector, TermId};
        let mut vectors = BTreeMap::new();
        for (i, id) in ["s0", "s1", "s2"].iter().enumerate() {
            let entries = vec![(TermId(i as u32), 1.0f64), (TermId(3), 0.5)];
            vectors.insert(
                id.to_string(),
                DocVector::from_components(
                    id.to_string(),
                    Components::Sparse(SparseVector::from_entries(entries, 4)),
                ),
            );
        }
        let forest = RpForest::build(&vectors, &RpForestParams::default()).unwrap();
        let got = forest.query(&vectors["s1"], 3, Some(3)).unwrap();
        assert_eq!(got[0].0, "s1");
        let exact = brute_force_top_k(&vectors, &vectors["s1"], 3).unwrap();
        assert_eq!(got, exact);
    }
}
