//! Synthetic dataset with planted interest clusters.
//!
//! Users and items are partitioned into latent clusters; each cluster is
//! further divided into facets (sub-interests). Users interact mostly with
//! items of their own facet; groups draw members from two facets of one
//! cluster and interact with items drawn from those facets plus a few from
//! the rest of the cluster. The construction is the ground-truth oracle:
//! held-out group-item pairs always come from the group's planted cluster,
//! so recovering the cluster geometry is exactly what ranking metrics
//! measure.

use std::collections::BTreeSet;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::dataset::{Dataset, GroupItemPair, Split};
use crate::error::Result;

#[derive(Clone, Debug)]
pub struct SyntheticConfig {
    pub clusters: usize,
    pub users_per_cluster: usize,
    pub items_per_cluster: usize,
    /// Facets (sub-interests) per cluster.
    pub facets: usize,
    pub groups_per_cluster: usize,
    /// Inclusive group-size range; members split between two facets.
    pub group_size: (usize, usize),
    /// Group-item positives drawn from the group's two facets.
    pub facet_items_per_group: usize,
    /// Additional positives from the rest of the cluster.
    pub other_items_per_group: usize,
    /// Per-user interactions inside the own facet.
    pub own_facet_interactions: usize,
    /// Per-user interactions elsewhere in the cluster.
    pub other_interactions: usize,
    /// Social edges per user (within facet, plus one within cluster).
    pub social_per_user: usize,
}

impl Default for SyntheticConfig {
    /// The planted-recovery shape: 5 clusters, 200 users, 300 items, 60
    /// overlapping groups.
    fn default() -> Self {
        SyntheticConfig {
            clusters: 5,
            users_per_cluster: 40,
            items_per_cluster: 60,
            facets: 3,
            groups_per_cluster: 12,
            group_size: (4, 6),
            facet_items_per_group: 32,
            other_items_per_group: 4,
            own_facet_interactions: 9,
            other_interactions: 3,
            social_per_user: 3,
        }
    }
}

impl SyntheticConfig {
    pub fn n_users(&self) -> usize {
        self.clusters * self.users_per_cluster
    }

    pub fn n_items(&self) -> usize {
        self.clusters * self.items_per_cluster
    }

    pub fn n_groups(&self) -> usize {
        self.clusters * self.groups_per_cluster
    }

    pub fn user_cluster(&self, user: usize) -> usize {
        user / self.users_per_cluster
    }

    pub fn item_cluster(&self, item: usize) -> usize {
        item / self.items_per_cluster
    }

    pub fn group_cluster(&self, group: usize) -> usize {
        group / self.groups_per_cluster
    }

    fn user_facet(&self, user: usize) -> usize {
        (user % self.users_per_cluster) * self.facets / self.users_per_cluster
    }

    fn item_facet(&self, item: usize) -> usize {
        (item % self.items_per_cluster) * self.facets / self.items_per_cluster
    }

    fn cluster_users(&self, cluster: usize) -> Vec<usize> {
        (cluster * self.users_per_cluster..(cluster + 1) * self.users_per_cluster).collect()
    }

    fn cluster_items(&self, cluster: usize) -> Vec<usize> {
        (cluster * self.items_per_cluster..(cluster + 1) * self.items_per_cluster).collect()
    }
}

fn sample_distinct(pool: &[usize], count: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let count = count.min(pool.len());
    rand::seq::index::sample(rng, pool.len(), count)
        .into_iter()
        .map(|i| pool[i])
        .collect()
}

/// Generate the planted dataset. Group-item pairs start in the train split;
/// apply [`crate::dataset::split_group_interactions`] afterwards.
pub fn generate(cfg: &SyntheticConfig, seed: u64) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_users = cfg.n_users();

    // User-item interactions: own facet plus a few cluster strays.
    let mut user_items: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n_users];
    for user in 0..n_users {
        let cluster = cfg.user_cluster(user);
        let facet = cfg.user_facet(user);
        let facet_items: Vec<usize> = cfg
            .cluster_items(cluster)
            .into_iter()
            .filter(|&i| cfg.item_facet(i) == facet)
            .collect();
        let other_items: Vec<usize> = cfg
            .cluster_items(cluster)
            .into_iter()
            .filter(|&i| cfg.item_facet(i) != facet)
            .collect();
        for i in sample_distinct(&facet_items, cfg.own_facet_interactions, &mut rng) {
            user_items[user].insert(i);
        }
        for i in sample_distinct(&other_items, cfg.other_interactions, &mut rng) {
            user_items[user].insert(i);
        }
    }

    // Social ties: mostly facet peers, one wider cluster tie.
    let mut social: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n_users];
    for user in 0..n_users {
        let cluster = cfg.user_cluster(user);
        let facet = cfg.user_facet(user);
        let peers: Vec<usize> = cfg
            .cluster_users(cluster)
            .into_iter()
            .filter(|&u| u != user && cfg.user_facet(u) == facet)
            .collect();
        let wider: Vec<usize> = cfg
            .cluster_users(cluster)
            .into_iter()
            .filter(|&u| u != user)
            .collect();
        for v in sample_distinct(&peers, cfg.social_per_user.saturating_sub(1), &mut rng) {
            social[user].insert(v);
            social[v].insert(user);
        }
        for v in sample_distinct(&wider, 1, &mut rng) {
            social[user].insert(v);
            social[v].insert(user);
        }
    }

    // Groups: members from two facets of one cluster; item positives from
    // those facets plus a few cluster strays.
    let facet_pairs = [(0usize, 1usize), (1, 2), (0, 2)];
    let mut groups: Vec<Vec<usize>> = Vec::with_capacity(cfg.n_groups());
    let mut group_item: Vec<GroupItemPair> = Vec::new();
    for group in 0..cfg.n_groups() {
        let cluster = cfg.group_cluster(group);
        let (fa, fb) = facet_pairs[group % facet_pairs.len()];
        let (fa, fb) = (fa % cfg.facets, fb % cfg.facets);
        let pool_a: Vec<usize> = cfg
            .cluster_users(cluster)
            .into_iter()
            .filter(|&u| cfg.user_facet(u) == fa)
            .collect();
        let pool_b: Vec<usize> = cfg
            .cluster_users(cluster)
            .into_iter()
            .filter(|&u| cfg.user_facet(u) == fb)
            .collect();
        let size = rng.gen_range(cfg.group_size.0..=cfg.group_size.1);
        let from_a = size / 2 + size % 2;
        let from_b = size - from_a;
        let mut members = sample_distinct(&pool_a, from_a, &mut rng);
        for m in sample_distinct(&pool_b, from_b, &mut rng) {
            if !members.contains(&m) {
                members.push(m);
            }
        }
        groups.push(members);

        let facet_items: Vec<usize> = cfg
            .cluster_items(cluster)
            .into_iter()
            .filter(|&i| cfg.item_facet(i) == fa || cfg.item_facet(i) == fb)
            .collect();
        let stray_items: Vec<usize> = cfg
            .cluster_items(cluster)
            .into_iter()
            .filter(|&i| cfg.item_facet(i) != fa && cfg.item_facet(i) != fb)
            .collect();
        let mut items = sample_distinct(&facet_items, cfg.facet_items_per_group, &mut rng);
        items.extend(sample_distinct(&stray_items, cfg.other_items_per_group, &mut rng));
        for item in items {
            group_item.push(GroupItemPair {
                group,
                item,
                split: Split::Train,
            });
        }
    }

    Dataset::from_parts(
        (0..n_users).map(|u| format!("u{u}")).collect(),
        (0..cfg.n_items()).map(|i| format!("i{i}")).collect(),
        (0..cfg.n_groups()).map(|g| format!("g{g}")).collect(),
        groups,
        user_items,
        group_item,
        social,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_matches_config() {
        let cfg = SyntheticConfig::default();
        let ds = generate(&cfg, 1).unwrap();
        assert_eq!(ds.n_users(), 200);
        assert_eq!(ds.n_items(), 300);
        assert_eq!(ds.n_groups(), 60);
    }

    #[test]
    fn members_stay_within_their_cluster() {
        let cfg = SyntheticConfig::default();
        let ds = generate(&cfg, 2).unwrap();
        for (g, members) in ds.groups.iter().enumerate() {
            let cluster = cfg.group_cluster(g);
            for &m in members {
                assert_eq!(cfg.user_cluster(m), cluster);
            }
        }
    }

    #[test]
    fn positives_come_from_the_group_cluster() {
        let cfg = SyntheticConfig::default();
        let ds = generate(&cfg, 3).unwrap();
        for p in &ds.group_item {
            assert_eq!(cfg.item_cluster(p.item), cfg.group_cluster(p.group));
        }
    }

    #[test]
    fn groups_overlap() {
        let cfg = SyntheticConfig::default();
        let ds = generate(&cfg, 4).unwrap();
        let overlapping = (0..ds.n_groups())
            .filter(|&g| {
                ds.groups[g]
                    .iter()
                    .any(|&u| ds.user_groups[u].iter().any(|&o| o != g))
            })
            .count();
        // The pools are small relative to the number of groups, so almost
        // every group shares a member with another one.
        assert!(overlapping >= ds.n_groups() * 9 / 10);
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = SyntheticConfig::default();
        assert_eq!(generate(&cfg, 9).unwrap(), generate(&cfg, 9).unwrap());
    }
}
