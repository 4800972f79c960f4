//! Retrieval metrics, classification accuracy, dataset splits and report
//! formatting.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use nalgebra::DVector;
use rand::seq::SliceRandom;
use tracing::warn;

use crate::error::{Error, Result};
use crate::rng;
use crate::shape_io::Split;

/// Cutoff of the E-measure.
pub const E_MEASURE_CUTOFF: usize = 32;

/// Gallery order for one query.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedList {
    /// Index of the query in the evaluated set.
    pub query: usize,
    /// Gallery indices by ascending distance.
    pub order: Vec<usize>,
    /// Whether each ranked item shares the query's label.
    pub relevant: Vec<bool>,
}

/// Gallery indices by ascending Euclidean distance; ties keep gallery order.
pub fn rank(query: &DVector<f64>, gallery: &[DVector<f64>]) -> Result<Vec<usize>> {
    if gallery.is_empty() {
        return Err(Error::invalid("empty gallery"));
    }
    if let Some(g) = gallery.iter().find(|g| g.len() != query.len()) {
        return Err(Error::DimensionMismatch { expected: query.len(), got: g.len() });
    }
    let dist: Vec<f64> = gallery.iter().map(|g| (g - query).norm()).collect();
    let mut order: Vec<usize> = (0..gallery.len()).collect();
    order.sort_by(|&a, &b| dist[a].total_cmp(&dist[b]));
    Ok(order)
}

/// Every shape queries all the others.
pub fn leave_one_out(embeddings: &[DVector<f64>], labels: &[usize]) -> Result<Vec<RankedList>> {
    if embeddings.len() != labels.len() {
        return Err(Error::DimensionMismatch { expected: labels.len(), got: embeddings.len() });
    }
    if embeddings.len() < 2 {
        return Err(Error::invalid("leave-one-out needs at least 2 shapes"));
    }
    (0..embeddings.len())
        .map(|q| {
            let others: Vec<usize> = (0..embeddings.len()).filter(|&i| i != q).collect();
            let gallery: Vec<DVector<f64>> = others.iter().map(|&i| embeddings[i].clone()).collect();
            let order: Vec<usize> = rank(&embeddings[q], &gallery)?.into_iter().map(|k| others[k]).collect();
            let relevant = order.iter().map(|&i| labels[i] == labels[q]).collect();
            Ok(RankedList { query: q, order, relevant })
        })
        .collect()
}

/// Metrics of a single query.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct QueryMetrics {
    pub nn: f64,
    pub tier1: f64,
    pub tier2: f64,
    pub e_measure: f64,
    pub dcg: f64,
    pub ap: f64,
}

/// Metrics for one relevance list; `class_size` counts the query itself, so
/// `class_size - 1` relevant items exist in the gallery.
pub fn query_metrics(relevant: &[bool], class_size: usize) -> Result<QueryMetrics> {
    if class_size < 2 {
        return Err(Error::invalid("class of size 1 has no relevant items"));
    }
    let c = class_size - 1;
    if relevant.iter().filter(|&&r| r).count() != c {
        return Err(Error::invalid(format!("ranked list holds a different number of relevant items than {c}")));
    }
    let hits = |k: usize| relevant.iter().take(k).filter(|&&r| r).count() as f64;
    let cutoff = E_MEASURE_CUTOFF.min(relevant.len());
    let in_cut = hits(cutoff);
    let e_measure = if in_cut > 0.0 {
        let (p, r) = (in_cut / cutoff as f64, in_cut / c as f64);
        2.0 * p * r / (p + r)
    } else {
        0.0
    };
    let discount = |k: usize| if k == 1 { 1.0 } else { 1.0 / (k as f64).log2() };
    let dcg: f64 = relevant.iter().enumerate().filter(|(_, &r)| r).map(|(i, _)| discount(i + 1)).sum();
    let ideal: f64 = (1..=c).map(discount).sum();
    let mut seen = 0.0;
    let mut ap = 0.0;
    for (i, &r) in relevant.iter().enumerate() {
        if r {
            seen += 1.0;
            ap += seen / (i + 1) as f64;
        }
    }
    Ok(QueryMetrics {
        nn: if relevant[0] { 1.0 } else { 0.0 },
        tier1: hits(c) / c as f64,
        tier2: hits(2 * c) / c as f64,
        e_measure,
        dcg: dcg / ideal,
        ap: ap / c as f64,
    })
}

/// Means over queries.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RetrievalReport {
    pub nn: f64,
    pub tier1: f64,
    pub tier2: f64,
    pub e_measure: f64,
    pub dcg: f64,
    pub map: f64,
    pub queries: usize,
}

impl RetrievalReport {
    pub const HEADER: &'static str = "method\tNN\t1-T\t2-T\tEM\tDCG\tmAP";

    /// One tab-separated row, metrics as percentages with two decimals.
    pub fn row(&self, method: &str) -> String {
        let p = |x: f64| format!("{:.2}", 100.0 * x);
        format!("{method}\t{}\t{}\t{}\t{}\t{}\t{}", p(self.nn), p(self.tier1), p(self.tier2), p(self.e_measure), p(self.dcg), p(self.map))
    }
}

/// Averages per-query metrics; `labels` are the labels of the evaluated set
/// and determine each query's class size. Queries from singleton classes
/// are skipped with a warning.
pub fn retrieval_metrics(lists: &[RankedList], labels: &[usize]) -> Result<RetrievalReport> {
    let mut sizes: BTreeMap<usize, usize> = BTreeMap::new();
    for &l in labels {
        *sizes.entry(l).or_default() += 1;
    }
    let mut sum = QueryMetrics::default();
    let mut n = 0usize;
    for list in lists {
        let label = *labels.get(list.query).ok_or_else(|| Error::invalid(format!("query {} has no label", list.query)))?;
        let size = sizes[&label];
        if size < 2 {
            warn!(query = list.query, "query class has a single member; skipped");
            continue;
        }
        let m = query_metrics(&list.relevant, size)?;
        sum.nn += m.nn;
        sum.tier1 += m.tier1;
        sum.tier2 += m.tier2;
        sum.e_measure += m.e_measure;
        sum.dcg += m.dcg;
        sum.ap += m.ap;
        n += 1;
    }
    if n == 0 {
        return Err(Error::invalid("no query has a relevant item"));
    }
    let k = n as f64;
    Ok(RetrievalReport {
        nn: sum.nn / k,
        tier1: sum.tier1 / k,
        tier2: sum.tier2 / k,
        e_measure: sum.e_measure / k,
        dcg: sum.dcg / k,
        map: sum.ap / k,
        queries: n,
    })
}

/// Leave-one-out retrieval report for a set of embeddings.
pub fn evaluate_retrieval(embeddings: &[DVector<f64>], labels: &[usize]) -> Result<RetrievalReport> {
    retrieval_metrics(&leave_one_out(embeddings, labels)?, labels)
}

/// Leave-one-out 1-nearest-neighbor classification accuracy, computed by a
/// direct scan independent of [`rank`].
pub fn loo_nn_accuracy(embeddings: &[DVector<f64>], labels: &[usize]) -> Result<f64> {
    let n = embeddings.len();
    if n < 2 || labels.len() != n {
        return Err(Error::invalid("1-NN accuracy needs at least 2 labeled embeddings"));
    }
    let mut correct = 0usize;
    for i in 0..n {
        let mut best = (f64::INFINITY, usize::MAX);
        for j in 0..n {
            if j == i {
                continue;
            }
            let d = (&embeddings[i] - &embeddings[j]).norm();
            if d < best.0 {
                best = (d, j);
            }
        }
        correct += usize::from(labels[best.1] == labels[i]);
    }
    Ok(correct as f64 / n as f64)
}

/// Fraction of matching entries.
pub fn accuracy(predictions: &[usize], labels: &[usize]) -> Result<f64> {
    if predictions.is_empty() {
        return Err(Error::invalid("accuracy of an empty prediction set"));
    }
    if predictions.len() != labels.len() {
        return Err(Error::DimensionMismatch { expected: labels.len(), got: predictions.len() });
    }
    Ok(predictions.iter().zip(labels).filter(|(p, l)| p == l).count() as f64 / labels.len() as f64)
}

/// Ranked lists as `query_id<TAB>id1,id2,...` lines.
pub fn ranked_lists_text(lists: &[RankedList], ids: &[String]) -> String {
    let mut s = String::new();
    for l in lists {
        let row: Vec<&str> = l.order.iter().map(|&i| ids[i].as_str()).collect();
        let _ = writeln!(s, "{}\t{}", ids[l.query], row.join(","));
    }
    s
}

fn members(labels: &[usize]) -> BTreeMap<usize, Vec<usize>> {
    let mut m: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        m.entry(l).or_default().push(i);
    }
    m
}

fn check_fraction(p: f64) -> Result<()> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::invalid(format!("split fraction must be in (0, 1), got {p}")));
    }
    Ok(())
}

/// Train/test split with `round(p * n)` training shapes, drawn per class
/// when `by_class` is set.
pub fn fraction_split(labels: &[usize], p: f64, by_class: bool, seed: u64) -> Result<Vec<Split>> {
    check_fraction(p)?;
    let mut r = rng::substream(seed, "split_fraction");
    let mut out = vec![Split::Test; labels.len()];
    let groups: Vec<Vec<usize>> = if by_class { members(labels).into_values().collect() } else { vec![(0..labels.len()).collect()] };
    for mut g in groups {
        g.shuffle(&mut r);
        let take = (p * g.len() as f64).round() as usize;
        for &i in &g[..take] {
            out[i] = Split::Train;
        }
    }
    Ok(out)
}

/// Train/test split by whole classes: `round(p * classes)` training classes.
pub fn disjoint_class_split(labels: &[usize], p: f64, seed: u64) -> Result<Vec<Split>> {
    check_fraction(p)?;
    let mut classes: Vec<usize> = members(labels).into_keys().collect();
    if classes.len() < 2 {
        return Err(Error::invalid("class-disjoint split needs at least 2 classes"));
    }
    classes.shuffle(&mut rng::substream(seed, "split_classes"));
    let take = ((p * classes.len() as f64).round() as usize).clamp(1, classes.len() - 1);
    let train: Vec<usize> = classes[..take].to_vec();
    Ok(labels.iter().map(|l| if train.contains(l) { Split::Train } else { Split::Test }).collect())
}

/// Stratified k-fold assignment: members of each class are shuffled, the
/// classes are listed in label order, and the list is dealt round-robin.
pub fn kfold(labels: &[usize], k: usize, seed: u64) -> Result<Vec<usize>> {
    let groups = members(labels);
    let smallest = groups.values().map(Vec::len).min().unwrap_or(0);
    if k < 2 || k > smallest {
        return Err(Error::invalid(format!("{k}-fold split needs 2 <= k <= smallest class size ({smallest})")));
    }
    let mut r = rng::substream(seed, "split_kfold");
    let mut fold = vec![0; labels.len()];
    let mut next = 0;
    for mut g in groups.into_values() {
        g.shuffle(&mut r);
        for i in g {
            fold[i] = next % k;
            next += 1;
        }
    }
    Ok(fold)
}
