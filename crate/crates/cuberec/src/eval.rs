//! Offline ranking evaluation: Recall@K and NDCG@K over held-out group-item
//! pairs, with a group-size breakdown and the ablation driver.
//!
//! Every item a group has not interacted with in the other splits is a
//! candidate; candidates are scored by the point-to-hypercube distance (or
//! the center-only distance under the point-distance ablation) and sorted
//! ascending, ties broken by item index.

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cube::distance_point_to_cube;
use crate::dataset::{Dataset, GroupId, ItemId, Split};
use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::tensor::squared_distance;
use crate::trainer::{train, TrainConfig};

/// Full candidate ordering for one group, best first. Scores are negated
/// distances so that higher is better.
#[derive(Clone, Debug, PartialEq)]
pub struct RankedList {
    pub group: GroupId,
    pub items: Vec<ItemId>,
    pub scores: Vec<f64>,
}

/// Rank every candidate item for `group` against the `target` split:
/// items observed in other splits are excluded from the candidate set.
pub fn rank_items(
    model: &ModelParams,
    group: GroupId,
    dataset: &Dataset,
    target: Split,
) -> Result<RankedList> {
    let cube = model.compose_group(dataset, group)?;
    let excluded: BTreeSet<ItemId> = dataset
        .group_item
        .iter()
        .filter(|p| p.group == group && p.split != target)
        .map(|p| p.item)
        .collect();

    let mut scored: Vec<(f64, ItemId)> = (0..dataset.n_items())
        .filter(|i| !excluded.contains(i))
        .map(|i| {
            let point = model.embeddings.item.row(i);
            let d = if model.config.point_distance {
                squared_distance(&cube.center, point)
            } else {
                distance_point_to_cube(&cube, point, model.config.gamma)
            };
            (d, i)
        })
        .collect();
    if scored.iter().any(|(d, _)| !d.is_finite()) {
        return Err(Error::Numerical(format!(
            "non-finite distance while ranking group {group}"
        )));
    }
    scored.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    Ok(RankedList {
        group,
        items: scored.iter().map(|&(_, i)| i).collect(),
        scores: scored.iter().map(|&(d, _)| -d).collect(),
    })
}

/// Fraction of ground-truth items present in the top K.
pub fn recall_at_k(ranked: &[ItemId], truth: &BTreeSet<ItemId>, k: usize) -> f64 {
    if truth.is_empty() {
        return 0.0;
    }
    let hits = ranked
        .iter()
        .take(k)
        .filter(|i| truth.contains(i))
        .count();
    hits as f64 / truth.len() as f64
}

/// Binary-relevance NDCG with a log2(rank + 1) discount, normalized by the
/// ideal ordering of min(|truth|, K) hits at the top.
pub fn ndcg_at_k(ranked: &[ItemId], truth: &BTreeSet<ItemId>, k: usize) -> f64 {
    if truth.is_empty() {
        return 0.0;
    }
    let dcg: f64 = ranked
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, i)| truth.contains(*i))
        .map(|(pos, _)| 1.0 / ((pos + 2) as f64).log2())
        .sum();
    let ideal: f64 = (0..truth.len().min(k))
        .map(|pos| 1.0 / ((pos + 2) as f64).log2())
        .sum();
    dcg / ideal
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricEntry {
    pub k: usize,
    pub recall: f64,
    pub ndcg: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BucketReport {
    pub label: String,
    pub n_groups: usize,
    pub per_k: Vec<MetricEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub n_groups: usize,
    pub overall: Vec<MetricEntry>,
    pub buckets: Vec<BucketReport>,
}

/// Group-size buckets. Size-1 groups go to a separate bucket kept out of
/// the five standard ones.
const BUCKET_LABELS: [&str; 6] = ["1", "2-3", "4-5", "6-7", "8-9", "10+"];

fn bucket_of(size: usize) -> usize {
    match size {
        0 | 1 => 0,
        2 | 3 => 1,
        4 | 5 => 2,
        6 | 7 => 3,
        8 | 9 => 4,
        _ => 5,
    }
}

/// Mean Recall@K / NDCG@K over all groups holding at least one pair in
/// `target`, for each K, with a per-size-bucket breakdown. Groups are
/// scored in parallel; assembly is in group-index order, so the report is
/// deterministic regardless of thread count.
pub fn evaluate(
    model: &ModelParams,
    dataset: &Dataset,
    ks: &[usize],
    target: Split,
) -> Result<MetricReport> {
    let mut test_groups: Vec<GroupId> = Vec::new();
    let mut seen = vec![false; dataset.n_groups()];
    for p in &dataset.group_item {
        if p.split == target && !seen[p.group] {
            seen[p.group] = true;
            test_groups.push(p.group);
        }
    }
    test_groups.sort_unstable();
    if test_groups.is_empty() {
        return Err(Error::Validation(format!(
            "no groups hold {} pairs",
            target.as_str()
        )));
    }

    let per_group: Vec<Vec<MetricEntry>> = test_groups
        .par_iter()
        .map(|&g| -> Result<Vec<MetricEntry>> {
            let ranked = rank_items(model, g, dataset, target)?;
            let truth = dataset.group_items_in(g, target);
            Ok(ks
                .iter()
                .map(|&k| MetricEntry {
                    k,
                    recall: recall_at_k(&ranked.items, &truth, k),
                    ndcg: ndcg_at_k(&ranked.items, &truth, k),
                })
                .collect())
        })
        .collect::<Result<_>>()?;

    let mean_over = |indices: &[usize]| -> Vec<MetricEntry> {
        ks.iter()
            .enumerate()
            .map(|(ki, &k)| {
                let n = indices.len().max(1) as f64;
                MetricEntry {
                    k,
                    recall: indices.iter().map(|&i| per_group[i][ki].recall).sum::<f64>() / n,
                    ndcg: indices.iter().map(|&i| per_group[i][ki].ndcg).sum::<f64>() / n,
                }
            })
            .collect()
    };

    let all: Vec<usize> = (0..test_groups.len()).collect();
    let mut bucket_members: Vec<Vec<usize>> = vec![Vec::new(); BUCKET_LABELS.len()];
    for (idx, &g) in test_groups.iter().enumerate() {
        bucket_members[bucket_of(dataset.groups[g].len())].push(idx);
    }
    let buckets = BUCKET_LABELS
        .iter()
        .zip(&bucket_members)
        .map(|(label, members)| BucketReport {
            label: label.to_string(),
            n_groups: members.len(),
            per_k: mean_over(members),
        })
        .collect();

    Ok(MetricReport {
        n_groups: test_groups.len(),
        overall: mean_over(&all),
        buckets,
    })
}

impl MetricReport {
    /// Machine-readable rows: `variant,k,metric,bucket,value,n_groups`.
    pub fn to_csv(&self, variant: &str, with_buckets: bool) -> String {
        let mut out = String::from("variant,k,metric,bucket,value,n_groups\n");
        for entry in &self.overall {
            out.push_str(&format!(
                "{variant},{},recall,all,{:.6},{}\n",
                entry.k, entry.recall, self.n_groups
            ));
            out.push_str(&format!(
                "{variant},{},ndcg,all,{:.6},{}\n",
                entry.k, entry.ndcg, self.n_groups
            ));
        }
        if with_buckets {
            for bucket in &self.buckets {
                for entry in &bucket.per_k {
                    out.push_str(&format!(
                        "{variant},{},recall,{},{:.6},{}\n",
                        entry.k, bucket.label, entry.recall, bucket.n_groups
                    ));
                    out.push_str(&format!(
                        "{variant},{},ndcg,{},{:.6},{}\n",
                        entry.k, bucket.label, entry.ndcg, bucket.n_groups
                    ));
                }
            }
        }
        out
    }

    /// Human-readable table.
    pub fn to_table(&self, variant: &str, with_buckets: bool) -> String {
        let mut out = format!(
            "variant {variant}: {} evaluated groups\n{:<10} {:>10} {:>10}\n",
            self.n_groups, "", "Recall", "NDCG"
        );
        for entry in &self.overall {
            out.push_str(&format!(
                "{:<10} {:>10.4} {:>10.4}\n",
                format!("@{}", entry.k),
                entry.recall,
                entry.ndcg
            ));
        }
        if with_buckets {
            for bucket in &self.buckets {
                if bucket.n_groups == 0 {
                    continue;
                }
                out.push_str(&format!(
                    "size {:<5} ({} groups)\n",
                    bucket.label, bucket.n_groups
                ));
                for entry in &bucket.per_k {
                    out.push_str(&format!(
                        "  @{:<8} {:>10.4} {:>10.4}\n",
                        entry.k, entry.recall, entry.ndcg
                    ));
                }
            }
        }
        out
    }
}

/// Model-architecture toggles mirroring the ablation table.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AblationToggle {
    /// Zero the social block of the adjacency.
    RemoveSr,
    /// Replace the cube distance with the center-only point distance, in
    /// both the group loss and the ranking scorer.
    PointDistance,
    /// Train with mu = 0 (no self-supervision).
    RemoveSsl,
}

impl AblationToggle {
    pub fn name(self) -> &'static str {
        match self {
            AblationToggle::RemoveSr => "remove_sr",
            AblationToggle::PointDistance => "point_distance",
            AblationToggle::RemoveSsl => "remove_ssl",
        }
    }

    pub fn parse(s: &str) -> Result<AblationToggle> {
        match s {
            "remove_sr" | "remove-sr" => Ok(AblationToggle::RemoveSr),
            "point_distance" | "point-distance" => Ok(AblationToggle::PointDistance),
            "remove_ssl" | "remove-ssl" => Ok(AblationToggle::RemoveSsl),
            other => Err(Error::Validation(format!("unknown ablation toggle {other:?}"))),
        }
    }

    pub fn apply(self, cfg: &mut TrainConfig) {
        match self {
            AblationToggle::RemoveSr => cfg.use_social = false,
            AblationToggle::PointDistance => cfg.point_distance = true,
            AblationToggle::RemoveSsl => cfg.mu = 0.0,
        }
    }
}

/// Train and evaluate the default configuration plus one variant per
/// toggle, all with the same seed. Returns `(variant name, report)` pairs,
/// default first.
pub fn run_ablation(
    dataset: &Dataset,
    config: &TrainConfig,
    toggles: &[AblationToggle],
    ks: &[usize],
) -> Result<Vec<(String, MetricReport)>> {
    let mut out = Vec::with_capacity(toggles.len() + 1);
    let (model, _) = train(dataset, config, None)?;
    out.push((
        "default".to_string(),
        evaluate(&model, dataset, ks, Split::Test)?,
    ));
    for &toggle in toggles {
        let mut cfg = config.clone();
        toggle.apply(&mut cfg);
        let (model, _) = train(dataset, &cfg, None)?;
        out.push((
            toggle.name().to_string(),
            evaluate(&model, dataset, ks, Split::Test)?,
        ));
    }
    Ok(out)
}
