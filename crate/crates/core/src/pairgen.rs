//! Pair generation and dataset assembly.
//!
//! Entailments come for free from news structure: each paragraph is
//! entailed by its successor, so consecutive paragraphs of one article form
//! a labeled pair. Contradictions are sampled across topic clusters and
//! re-verified against the dissimilarity predicate pair by pair, so the
//! guarantee holds regardless of clustering quality. Assembly balances the
//! two labels exactly, and splitting is seeded shuffle + contiguous
//! slicing, stratified by default.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cluster::{are_dissimilar, Cluster};
use crate::embed::DocVector;
use crate::error::{Error, Result};
use crate::ingest::Article;
use crate::scalar::Scalar;

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Entailment,
    Contradiction,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Entailment => "entailment",
            Label::Contradiction => "contradiction",
        }
    }
}

/// Where a pair's two sides came from; unique per dataset.
#[derive(
    Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub struct Provenance {
    pub premise_article_id: String,
    pub premise_para_idx: u32,
    pub hypothesis_article_id: String,
    pub hypothesis_para_idx: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NLIPair {
    pub premise: String,
    pub hypothesis: String,
    pub label: Label,
    #[serde(rename = "meta")]
    pub provenance: Provenance,
}

/// Split sizing: absolute counts or ratios of the input size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SplitSpec {
    Counts(usize, usize, usize),
    Ratios(f64, f64, f64),
}

impl SplitSpec {
    /// Resolves to absolute (train, validation, test) counts. Ratios use
    /// floor-then-largest-remainder so the total is the rounded sum and no
    /// pair is dropped to float noise; ties go to the earlier split.
    pub fn resolve(&self, n_pairs: usize) -> Result<(usize, usize, usize)> {
        let sizes = match *self {
            SplitSpec::Counts(t, v, e) => (t, v, e),
            SplitSpec::Ratios(rt, rv, re) => {
                for r in [rt, rv, re] {
                    if !(0.0..=1.0).contains(&r) || !r.is_finite() {
                        return Err(Error::Config(format!("split ratio {r} outside [0, 1]")));
                    }
                }
                if rt + rv + re > 1.0 + 1e-9 {
                    return Err(Error::Config(format!(
                        "split ratios sum to {} > 1",
                        rt + rv + re
                    )));
                }
                let targets = [rt, rv, re].map(|r| r * n_pairs as f64);
                let total = targets.iter().sum::<f64>().round() as usize;
                let mut counts = targets.map(|t| t.floor() as usize);
                let mut order: Vec<usize> = (0..3).collect();
                order.sort_by(|&a, &b| {
                    let fa = targets[a] - targets[a].floor();
                    let fb = targets[b] - targets[b].floor();
                    fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
                });
                let mut leftover = total.saturating_sub(counts.iter().sum::<usize>());
                for &i in &order {
                    if leftover == 0 {
                        break;
                    }
                    counts[i] += 1;
                    leftover -= 1;
                }
                (counts[0], counts[1], counts[2])
            }
        };
        if sizes.0 + sizes.1 + sizes.2 > n_pairs {
            return Err(Error::Data(format!(
                "split sizes {}+{}+{} exceed {} available pairs",
                sizes.0, sizes.1, sizes.2, n_pairs
            )));
        }
        Ok(sizes)
    }
}

/// Options for [`split_dataset`].
#[derive(Debug, Clone, PartialEq)]
pub struct SplitOptions {
    pub spec: SplitSpec,
    pub seed: u64,
    /// Interleave labels so each split is balanced within ±1.
    pub stratify: bool,
    /// Keep all pairs of an article in one split (approximate sizes).
    pub article_disjoint: bool,
}

impl Default for SplitOptions {
    fn default() -> Self {
        SplitOptions {
            spec: SplitSpec::Ratios(0.70, 0.15, 0.15),
            seed: 42,
            stratify: true,
            article_disjoint: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DatasetSplits {
    pub train: Vec<NLIPair>,
    pub validation: Vec<NLIPair>,
    pub test: Vec<NLIPair>,
    pub options: SplitOptions,
    pub resolved_sizes: (usize, usize, usize),
}

/// Consecutive-paragraph entailments of one article: pair `i` is
/// (paragraph i ⟶ paragraph i+1).
pub fn gen_entailments(article: &Article) -> Vec<NLIPair> {
    article
        .paragraphs
        .windows(2)
        .enumerate()
        .map(|(i, pair)| NLIPair {
            premise: pair[0].clone(),
            hypothesis: pair[1].clone(),
            label: Label::Entailment,
            provenance: Provenance {
                premise_article_id: article.id.clone(),
                premise_para_idx: i as u32,
                hypothesis_article_id: article.id.clone(),
                hypothesis_para_idx: (i + 1) as u32,
            },
        })
        .collect()
}

/// Every entailment from every article, in article order.
pub fn gen_entailment_pool(articles: &[Article]) -> Vec<NLIPair> {
    articles.iter().flat_map(gen_entailments).collect()
}

/// Samples `count` contradiction pairs: two distinct clusters, one usable
/// article from each, dissimilarity re-verified on the article vectors,
/// then one paragraph from each (first-sampled side is the premise).
///
/// A failed dissimilarity check or a repeated provenance tuple costs one
/// retry; each pair has its own `max_retries_per_pair` budget.
pub fn gen_contradictions<T: Scalar>(
    articles: &[Article],
    clusters: &[Cluster],
    vectors: &BTreeMap<String, DocVector<T>>,
    count: usize,
    threshold: T,
    seed: u64,
    max_retries_per_pair: usize,
) -> Result<Vec<NLIPair>> {
    let by_id: BTreeMap<&str, &Article> =
        articles.iter().map(|a| (a.id.as_str(), a)).collect();
    let usable = |id: &str| -> bool {
        by_id.get(id).is_some_and(|a| !a.paragraphs.is_empty())
            && vectors.get(id).is_some_and(|v| !v.is_degenerate)
    };
    let pools: Vec<Vec<&str>> = clusters
        .iter()
        .map(|cluster| {
            cluster
                .members
                .iter()
                .map(String::as_str)
                .filter(|id| usable(id))
                .collect::<Vec<&str>>()
        })
        .filter(|members| !members.is_empty())
        .collect();
    if pools.len() < 2 {
        return Err(Error::Data(format!(
            "need >= 2 clusters with usable articles, found {}",
            pools.len()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen: HashSet<Provenance> = HashSet::new();
    let mut pairs = Vec::with_capacity(count);

    for pair_index in 0..count {
        let mut attempts = 0usize;
        loop {
            attempts += 1;
            if attempts > max_retries_per_pair {
                return Err(Error::Data(format!(
                    "contradiction sampling for pair {pair_index} exhausted \
                     {max_retries_per_pair} attempts; clusters may be too similar or too small"
                )));
            }

            // Two distinct clusters, uniform over ordered pairs.
            let ci = rng.random_range(0..pools.len());
            let mut cj = rng.random_range(0..pools.len() - 1);
            if cj >= ci {
                cj += 1;
            }
            let a_id = pools[ci][rng.random_range(0..pools[ci].len())];
            let b_id = pools[cj][rng.random_range(0..pools[cj].len())];
            if !are_dissimilar(&vectors[a_id], &vectors[b_id], threshold)? {
                continue;
            }

            let a = by_id[a_id];
            let b = by_id[b_id];
            let pa = rng.random_range(0..a.paragraphs.len());
            let pb = rng.random_range(0..b.paragraphs.len());
            let provenance = Provenance {
                premise_article_id: a.id.clone(),
                premise_para_idx: pa as u32,
                hypothesis_article_id: b.id.clone(),
                hypothesis_para_idx: pb as u32,
            };
            if !seen.insert(provenance.clone()) {
                continue;
            }
            pairs.push(NLIPair {
                premise: a.paragraphs[pa].clone(),
                hypothesis: b.paragraphs[pb].clone(),
                label: Label::Contradiction,
                provenance,
            });
            break;
        }
    }
    Ok(pairs)
}

/// Samples `per_class` pairs without replacement from each pool and
/// shuffles the union with one seeded permutation.
pub fn assemble_dataset(
    entailment_pool: &[NLIPair],
    contradiction_pool: &[NLIPair],
    per_class: usize,
    seed: u64,
) -> Result<Vec<NLIPair>> {
    if entailment_pool.len() < per_class || contradiction_pool.len() < per_class {
        return Err(Error::Data(format!(
            "need {per_class} pairs per class, found {} entailments and {} contradictions",
            entailment_pool.len(),
            contradiction_pool.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sample = |pool: &[NLIPair], rng: &mut ChaCha8Rng| -> Vec<NLIPair> {
        let mut indices: Vec<usize> = (0..pool.len()).collect();
        indices.shuffle(rng);
        indices.truncate(per_class);
        indices.into_iter().map(|i| pool[i].clone()).collect()
    };
    let mut dataset = sample(entailment_pool, &mut rng);
    dataset.extend(sample(contradiction_pool, &mut rng));
    dataset.shuffle(&mut rng);
    Ok(dataset)
}

/// Label-alternating merge: position 0 takes an entailment when one is
/// available, so any contiguous window is balanced within ±1 while both
/// label streams last.
fn interleave_by_label(pairs: Vec<NLIPair>) -> Vec<NLIPair> {
    let (ent, con): (Vec<NLIPair>, Vec<NLIPair>) = pairs
        .into_iter()
        .partition(|p| p.label == Label::Entailment);
    let mut ent = ent.into_iter();
    let mut con = con.into_iter();
    let mut out = Vec::with_capacity(ent.len() + con.len());
    let mut take_ent = true;
    loop {
        let next = if take_ent {
            ent.next().or_else(|| con.next())
        } else {
            con.next().or_else(|| ent.next())
        };
        match next {
            Some(pair) => out.push(pair),
            None => break,
        }
        take_ent = !take_ent;
    }
    out
}

/// Groups pairs by connected articles (premise ~ hypothesis links) and
/// assigns whole groups to splits, largest group to the emptiest split
/// first. Sizes are approximate by necessity.
fn split_article_disjoint(
    pairs: Vec<NLIPair>,
    sizes: (usize, usize, usize),
) -> (Vec<NLIPair>, Vec<NLIPair>, Vec<NLIPair>) {
    let mut parent: BTreeMap<&str, &str> = BTreeMap::new();
    fn find<'a>(parent: &mut BTreeMap<&'a str, &'a str>, x: &'a str) -> &'a str {
        let p = *parent.entry(x).or_insert(x);
        if p == x {
            return x;
        }
        let root = find(parent, p);
        parent.insert(x, root);
        root
    }
    let ids: Vec<(String, String)> = pairs
        .iter()
        .map(|p| {
            (
                p.provenance.premise_article_id.clone(),
                p.provenance.hypothesis_article_id.clone(),
            )
        })
        .collect();
    for (a, b) in &ids {
        let ra = find(&mut parent, a);
        let rb = find(&mut parent, b);
        if ra != rb {
            parent.insert(rb, ra);
        }
    }

    // Pairs per component root, in first-appearance order inside each.
    let mut groups: BTreeMap<String, Vec<NLIPair>> = BTreeMap::new();
    for (pair, (a, _)) in pairs.into_iter().zip(&ids) {
        let root = find(&mut parent, a).to_string();
        groups.entry(root).or_default().push(pair);
    }
    let mut groups: Vec<Vec<NLIPair>> = groups.into_values().collect();
    groups.sort_by(|a, b| {
        b.len()
            .cmp(&a.len())
            .then_with(|| a[0].provenance.cmp(&b[0].provenance))
    });

    let targets = [sizes.0, sizes.1, sizes.2];
    let mut splits: [Vec<NLIPair>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    for group in groups {
        // Largest remaining deficit wins; earlier split breaks ties.
        let pick = (0..3)
            .max_by_key(|&i| (targets[i] as isize - splits[i].len() as isize, 2 - i))
            .unwrap();
        splits[pick].extend(group);
    }
    let [train, validation, test] = splits;
    (train, validation, test)
}

/// Seeded shuffle then contiguous slicing into train/validation/test.
/// With `stratify`, labels are interleaved after the shuffle so every split
/// is balanced within ±1 (given balanced input).
pub fn split_dataset(pairs: &[NLIPair], options: &SplitOptions) -> Result<DatasetSplits> {
    let sizes = options.spec.resolve(pairs.len())?;
    let mut shuffled: Vec<NLIPair> = pairs.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    shuffled.shuffle(&mut rng);
    if options.stratify && !options.article_disjoint {
        shuffled = interleave_by_label(shuffled);
    }

    let (train, validation, test) = if options.article_disjoint {
        split_article_disjoint(shuffled, sizes)
    } else {
        let rest = shuffled.split_off(sizes.0);
        let mut validation = rest;
        let tail = validation.split_off(sizes.1);
        let mut test = tail;
        test.truncate(sizes.2);
        (shuffled, validation, test)
    };

    Ok(DatasetSplits {
        train,
        validation,
        test,
        options: options.clone(),
        resolved_sizes: sizes,
    })
}

/// Writes pairs as line-delimited records with premise, hypothesis, label,
/// and provenance under "meta".
pub fn write_pairs_jsonl(path: &Path, pairs: &[NLIPair]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut writer = BufWriter::new(file);
    for pair in pairs {
        let line = serde_json::to_string(pair)
            .map_err(|e| Error::Data(format!("serializing pair: {e}")))?;
        writeln!(writer, "{line}").map_err(|e| Error::io(path, e))?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

/// Reads pairs written by [`write_pairs_jsonl`].
pub fn load_pairs_jsonl(path: &Path) -> Result<Vec<NLIPair>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut pairs = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        pairs.push(
            serde_json::from_str(&line).map_err(|e| Error::MalformedRecord {
                line: idx + 1,
                message: e.to_string(),
            })?,
        );
    }
    Ok(pairs)
}

fn escape_tsv(text: &str) -> String {
    text.replace('\\', "\\\\")
        .replace('\t', "\\t")
        .replace('\n', "\\n")
}

/// Three-column TSV export (premise, hypothesis, label); tabs, newlines,
/// and backslashes in text are escaped.
pub fn write_pairs_tsv(path: &Path, pairs: &[NLIPair]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut writer = BufWriter::new(file);
    for pair in pairs {
        writeln!(
            writer,
            "{}\t{}\t{}",
            escape_tsv(&pair.premise),
            escape_tsv(&pair.hypothesis),
            pair.label.as_str()
        )
        .map_err(|e| Error::io(path, e))?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}
