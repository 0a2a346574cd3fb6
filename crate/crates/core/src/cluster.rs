//! Topic clustering: thresholded cosine edges over ANN neighbor candidates,
//! then connected components. Also home of the dissimilarity predicate the
//! contradiction sampler re-checks per pair — cluster granularity therefore
//! only affects sampling efficiency, never pair correctness.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::annindex::{cosine, RpForest};
use crate::embed::DocVector;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Cosine threshold below which two articles count as topically dissimilar.
pub const DISSIMILARITY_THRESHOLD: f64 = 0.65;

/// Default neighbor-candidate cap per article during graph building.
pub const DEFAULT_K_NEIGHBORS: usize = 20;

/// One topic cluster. Ids are dense from 0 in order of each cluster's
/// smallest member id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cluster {
    pub cluster_id: u32,
    pub members: BTreeSet<String>,
}

/// The comparison at the heart of [`are_dissimilar`]: strictly below the
/// threshold is dissimilar, the boundary itself is similar.
pub fn is_dissimilar_cosine<T: Scalar>(cos: T, threshold: T) -> bool {
    cos < threshold
}

/// True iff the articles' cosine similarity is strictly less than
/// `threshold`. Degenerate vectors are an error — callers exclude them.
pub fn are_dissimilar<T: Scalar>(
    a: &DocVector<T>,
    b: &DocVector<T>,
    threshold: T,
) -> Result<bool> {
    Ok(is_dissimilar_cosine(cosine(a, b)?, threshold))
}

/// Builds the undirected similarity graph: for each indexed article, its
/// ANN candidates at or above `threshold` become edges. The edge list is
/// deduplicated and sorted by `(min_id, max_id)`.
///
/// Per-article queries run in parallel against the read-only forest; the
/// merge is order-independent (a sorted set), so results are deterministic.
pub fn build_similarity_graph<T: Scalar>(
    vectors: &BTreeMap<String, DocVector<T>>,
    forest: &RpForest<T>,
    k_neighbors: usize,
    threshold: T,
) -> Result<Vec<(String, String)>> {
    let ids: Vec<&str> = forest.item_ids().collect();
    let per_article: Vec<Vec<(String, String)>> = ids
        .par_iter()
        .map(|&id| -> Result<Vec<(String, String)>> {
            let vector = vectors
                .get(id)
                .ok_or_else(|| Error::Data(format!("forest item {id:?} missing from vectors")))?;
            // One extra neighbor because the article retrieves itself.
            let neighbors = forest.query(vector, k_neighbors + 1, None)?;
            let mut edges = Vec::new();
            for (other, cos) in neighbors {
                if other == id {
                    continue;
                }
                if !is_dissimilar_cosine(cos, threshold) {
                    let (lo, hi) = if id < other.as_str() {
                        (id.to_string(), other)
                    } else {
                        (other, id.to_string())
                    };
                    edges.push((lo, hi));
                }
            }
            Ok(edges)
        })
        .collect::<Result<_>>()?;

    let set: BTreeSet<(String, String)> = per_article.into_iter().flatten().collect();
    Ok(set.into_iter().collect())
}

struct UnionFind {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
            rank: vec![0; n],
        }
    }

    fn find(&mut self, x: usize) -> usize {
        let mut root = x;
        while self.parent[root] != root {
            root = self.parent[root];
        }
        let mut cur = x;
        while self.parent[cur] != root {
            let next = self.parent[cur];
            self.parent[cur] = root;
            cur = next;
        }
        root
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        match self.rank[ra].cmp(&self.rank[rb]) {
            std::cmp::Ordering::Less => self.parent[ra] = rb,
            std::cmp::Ordering::Greater => self.parent[rb] = ra,
            std::cmp::Ordering::Equal => {
                self.parent[rb] = ra;
                self.rank[ra] += 1;
            }
        }
    }
}

/// Connected components of the similarity graph. Isolated articles become
/// singleton clusters; an edge naming an unknown article is an error.
pub fn connected_components(
    article_ids: &[String],
    edges: &[(String, String)],
) -> Result<Vec<Cluster>> {
    let index: BTreeMap<&str, usize> = article_ids
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i))
        .collect();
    if index.len() != article_ids.len() {
        return Err(Error::Data("duplicate article id in cluster input".into()));
    }

    let mut uf = UnionFind::new(article_ids.len());
    for (a, b) in edges {
        let &ia = index
            .get(a.as_str())
            .ok_or_else(|| Error::Data(format!("edge references unknown article {a:?}")))?;
        let &ib = index
            .get(b.as_str())
            .ok_or_else(|| Error::Data(format!("edge references unknown article {b:?}")))?;
        uf.union(ia, ib);
    }

    let mut by_root: BTreeMap<usize, BTreeSet<String>> = BTreeMap::new();
    for (i, id) in article_ids.iter().enumerate() {
        by_root.entry(uf.find(i)).or_default().insert(id.clone());
    }

    // Dense ids in order of smallest member: BTreeSet keeps members sorted,
    // so each component's first element is its smallest id.
    let mut clusters: Vec<BTreeSet<String>> = by_root.into_values().collect();
    clusters.sort_by(|a, b| a.first().cmp(&b.first()));
    Ok(clusters
        .into_iter()
        .enumerate()
        .map(|(i, members)| Cluster {
            cluster_id: i as u32,
            members,
        })
        .collect())
}

/// One-call pipeline step: graph, then components over all indexed
/// articles.
pub fn cluster_articles<T: Scalar>(
    vectors: &BTreeMap<String, DocVector<T>>,
    forest: &RpForest<T>,
    k_neighbors: usize,
    threshold: T,
) -> Result<Vec<Cluster>> {
    let edges = build_similarity_graph(vectors, forest, k_neighbors, threshold)?;
    let ids: Vec<String> = forest.item_ids().map(str::to_string).collect();
    connected_components(&ids, &edges)
}

/// Writes `cluster_id<TAB>article_id` lines, sorted by cluster then member.
pub fn write_clusters(path: &Path, clusters: &[Cluster]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut writer = BufWriter::new(file);
    for cluster in clusters {
        for member in &cluster.members {
            writeln!(writer, "{}\t{}", cluster.cluster_id, member)
                .map_err(|e| Error::io(path, e))?;
        }
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

/// Reads a file written by [`write_clusters`].
pub fn load_clusters(path: &Path) -> Result<Vec<Cluster>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut by_id: BTreeMap<u32, BTreeSet<String>> = BTreeMap::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let (id_part, member) = line.split_once('\t').ok_or(Error::MalformedRecord {
            line: idx + 1,
            message: "expected cluster_id<TAB>article_id".into(),
        })?;
        let cluster_id: u32 = id_part.parse().map_err(|_| Error::MalformedRecord {
            line: idx + 1,
            message: format!("invalid cluster id {id_part:?}"),
        })?;
        if !by_id.entry(cluster_id).or_default().insert(member.to_string()) {
            return Err(Error::DuplicateId(member.to_string()));
        }
    }
    Ok(by_id
        .into_iter()
        .map(|(cluster_id, members)| Cluster {
            cluster_id,
            members,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annindex::RpForestParams;
    use crate::embed::Components;

    fn unit(id: &str, components: Vec<f64>) -> DocVector<f64> {
        DocVector::from_components(id.to_string(), Components::Dense(components))
    }

    #[test]
    fn dissimilarity_boundary_is_strict() {
        assert!(is_dissimilar_cosine(0.64, 0.65));
        assert!(!is_dissimilar_cosine(0.65, 0.65));
        assert!(!is_dissimilar_cosine(1.0, 0.65));
        assert!(is_dissimilar_cosine(-1.0, 0.65));
    }

    #[test]
    fn are_dissimilar_on_vectors() {
        let e1 = unit("a", vec![1.0, 0.0]);
        let e2 = unit("b", vec![0.0, 1.0]);
        assert!(are_dissimilar(&e1, &e2, 0.65).unwrap());
        assert!(!are_dissimilar(&e1, &e1, 0.65).unwrap());
        let zero = DocVector::from_components("z".into(), Components::Dense(vec![0.0, 0.0]));
        assert!(are_dissimilar(&e1, &zero, 0.65).is_err());
    }

    /// Four orthogonal topic directions, several articles each, with small
    /// deterministic within-topic jitter.
    fn planted_vectors(per_topic: usize) -> BTreeMap<String, DocVector<f64>> {
        let mut vectors = BTreeMap::new();
        for topic in 0..4usize {
            for i in 0..per_topic {
                let mut row = vec![0.0f64; 8];
                row[topic * 2] = 1.0;
                row[topic * 2 + 1] = 0.05 * (i as f64 + 1.0) / per_topic as f64;
                let id = format!("t{topic}-a{i:02}");
                vectors.insert(id.clone(), unit(&id, row));
            }
        }
        vectors
    }

    fn forest(vectors: &BTreeMap<String, DocVector<f64>>) -> RpForest<f64> {
        RpForest::build(
            vectors,
            &RpForestParams {
                n_trees: 8,
                leaf_size: 10,
                seed: 5,
            },
        )
        .unwrap()
    }

    #[test]
    fn orthogonal_groups_have_no_cross_edges() {
        let vectors = planted_vectors(6);
        let f = forest(&vectors);
        let edges = build_similarity_graph(&vectors, &f, 10, 0.65).unwrap();
        assert!(!edges.is_empty());
        for (a, b) in &edges {
            assert_eq!(a[..2], b[..2], "cross-topic edge {a} -- {b}");
            // Oracle: recompute the cosine directly.
            let cos = cosine(&vectors[a], &vectors[b]).unwrap();
            assert!(cos >= 0.65);
        }
    }

    #[test]
    fn identical_vectors_form_complete_candidate_graph() {
        let mut vectors = BTreeMap::new();
        for i in 0..5 {
            vectors.insert(format!("a{i}"), unit(&format!("a{i}"), vec![1.0, 0.0]));
        }
        let f = forest(&vectors);
        let edges = build_similarity_graph(&vectors, &f, 10, 0.65).unwrap();
        assert_eq!(edges.len(), 5 * 4 / 2);
    }

    #[test]
    fn edge_list_is_sorted_and_deduplicated() {
        let vectors = planted_vectors(5);
        let f = forest(&vectors);
        let edges = build_similarity_graph(&vectors, &f, 10, 0.65).unwrap();
        let mut sorted = edges.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(edges, sorted);
        for (a, b) in &edges {
            assert!(a < b);
        }
    }

    #[test]
    fn components_basic_shapes() {
        let ids: Vec<String> = ["a", "b", "c", "d", "e"].iter().map(|s| s.to_string()).collect();
        let clusters = connected_components(&ids, &[]).unwrap();
        assert_eq!(clusters.len(), 5);
        assert!(clusters.iter().all(|c| c.members.len() == 1));

        let edges = vec![("a".to_string(), "b".to_string()), ("b".to_string(), "c".to_string())];
        let clusters = connected_components(&ids, &edges).unwrap();
        assert_eq!(clusters.len(), 3);
        let abc: BTreeSet<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        assert_eq!(clusters[0].members, abc);
    }

    #[test]
    fn components_reject_unknown_ids() {
        let ids = vec!["a".to_string()];
        let edges = vec![("a".to_string(), "ghost".to_string())];
        assert!(connected_components(&ids, &edges).is_err());
    }

    #[test]
    fn cluster_numbering_follows_smallest_member() {
        let ids: Vec<String> = ["zed", "mid", "ant"].iter().map(|s| s.to_string()).collect();
        let clusters = connected_components(&ids, &[]).unwrap();
        assert_eq!(clusters[0].members.first().unwrap(), "ant");
        assert_eq!(clusters[1].members.first().unwrap(), "mid");
        assert_eq!(clusters[2].members.first().unwrap(), "zed");
        assert_eq!(
            clusters.iter().map(|c| c.cluster_id).collect::<Vec<_>>(),
            vec![0, 1, 2]
        );
    }

    #[test]
    fn planted_topics_cluster_exactly() {
        let vectors = planted_vectors(6);
        let f = forest(&vectors);
        let clusters = cluster_articles(&vectors, &f, 10, 0.65).unwrap();
        assert_eq!(clusters.len(), 4);
        // Partition: every article in exactly one cluster.
        let total: usize = clusters.iter().map(|c| c.members.len()).sum();
        assert_eq!(total, vectors.len());
        let mut seen = BTreeSet::new();
        for cluster in &clusters {
            for member in &cluster.members {
                assert!(seen.insert(member.clone()));
                assert_eq!(&member[..2], cluster.members.first().map(|m| &m[..2]).unwrap());
            }
        }
    }

    #[test]
    fn raising_threshold_never_merges_clusters() {
        let vectors = planted_vectors(8);
        let f = forest(&vectors);
        let mut previous = 0usize;
        for threshold in [0.3, 0.65, 0.9, 0.999] {
            let clusters = cluster_articles(&vectors, &f, 10, threshold).unwrap();
            assert!(
                clusters.len() >= previous,
                "cluster count dropped from {previous} at threshold {threshold}"
            );
            previous = clusters.len();
        }
    }

    #[test]
    fn clustering_is_deterministic() {
        let vectors = planted_vectors(7);
        let f = forest(&vectors);
        let a = cluster_articles(&vectors, &f, 10, 0.65).unwrap();
        let b = cluster_articles(&vectors, &f, 10, 0.65).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn cluster_file_roundtrip() {
        let vectors = planted_vectors(4);
        let f = forest(&vectors);
        let clusters = cluster_articles(&vectors, &f, 10, 0.65).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("clusters.tsv");
        write_clusters(&path, &clusters).unwrap();
        let back = load_clusters(&path).unwrap();
        assert_eq!(back, clusters);
    }
}
