//! Self-supervision via hypercube intersections.
//!
//! Every group in a batch is paired with an overlapping partner group; the
//! users shared between the two (relay users) are pushed inside the
//! intersection of the two group cubes by a hinge loss against sampled
//! negative users. Groups that overlap with no other group get a dummy
//! partner built by proportional swap (PS) or proportional imputation (PI),
//! chosen by coin flip.

use std::collections::BTreeSet;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::NodeId;
use crate::dataset::{Dataset, GroupId, UserId};
use crate::error::{Error, Result};
use crate::model::{BatchGraph, GradBuffers, ModelParams};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PairSource {
    Natural,
    Ps,
    Pi,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Partner {
    /// An existing group sharing at least one member.
    Natural(GroupId),
    /// A generated dummy member list.
    Dummy(Vec<UserId>),
}

/// A group paired with its (real or dummy) partner and their relay users.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GroupPair {
    pub group: GroupId,
    pub partner: Partner,
    /// Shared members of the two groups; never empty.
    pub relay: Vec<UserId>,
    pub source: PairSource,
}

impl GroupPair {
    pub fn partner_members<'a>(&'a self, dataset: &'a Dataset) -> &'a [UserId] {
        match &self.partner {
            Partner::Natural(g) => &dataset.groups[*g],
            Partner::Dummy(members) => members,
        }
    }
}

/// Uniformly sample a distinct group with a non-empty member intersection.
/// `None` iff the group is disjoint from all others.
pub fn find_partner(
    group: GroupId,
    dataset: &Dataset,
    rng: &mut ChaCha8Rng,
) -> Result<Option<GroupPair>> {
    let members = dataset
        .groups
        .get(group)
        .ok_or_else(|| Error::Validation(format!("unknown group index {group}")))?;
    let mut candidates = BTreeSet::new();
    for &m in members {
        for &other in &dataset.user_groups[m] {
            if other != group {
                candidates.insert(other);
            }
        }
    }
    if candidates.is_empty() {
        return Ok(None);
    }
    let candidates: Vec<GroupId> = candidates.into_iter().collect();
    let partner = candidates[rng.gen_range(0..candidates.len())];
    let partner_set: BTreeSet<UserId> = dataset.groups[partner].iter().copied().collect();
    let relay: Vec<UserId> = members
        .iter()
        .copied()
        .filter(|m| partner_set.contains(m))
        .collect();
    debug_assert!(!relay.is_empty());
    Ok(Some(GroupPair {
        group,
        partner: Partner::Natural(partner),
        relay,
        source: PairSource::Natural,
    }))
}

/// How many members PS replaces / PI injects: `floor(rho * |G|)`, at least
/// one.
fn proportional_count(rho: f64, size: usize) -> usize {
    ((rho * size as f64).floor() as usize).max(1)
}

/// Proportional swap: replace `floor(rho * |G|)` members (capped at |G|-1 so
/// at least one relay user remains) with users sampled uniformly from
/// outside the group, with replacement; duplicates collapse. Returns the
/// dummy member list; the retained original members are the relay users.
pub fn proportional_swap(
    group: GroupId,
    dataset: &Dataset,
    rho: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<UserId>> {
    validate_rho(rho)?;
    let members = &dataset.groups[group];
    if members.len() < 2 {
        return Err(Error::Validation(format!(
            "cannot swap members of group {} of size 1 and keep a relay user",
            dataset.group_ids[group]
        )));
    }
    let swaps = proportional_count(rho, members.len()).min(members.len() - 1);
    let replaced: BTreeSet<usize> = rand::seq::index::sample(rng, members.len(), swaps)
        .into_iter()
        .collect();
    let member_set: BTreeSet<UserId> = members.iter().copied().collect();
    let mut dummy: Vec<UserId> = members
        .iter()
        .enumerate()
        .filter(|(pos, _)| !replaced.contains(pos))
        .map(|(_, &u)| u)
        .collect();
    for _ in 0..swaps {
        let pick = sample_outside(&member_set, dataset.n_users(), rng)?;
        if !dummy.contains(&pick) {
            dummy.push(pick);
        }
    }
    Ok(dummy)
}

/// Proportional imputation: keep the whole group (these become the relay
/// users) and inject `floor(rho * |G|)`, at least one, outside users sampled
/// with replacement; duplicates collapse.
pub fn proportional_imputation(
    group: GroupId,
    dataset: &Dataset,
    rho: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<UserId>> {
    validate_rho(rho)?;
    let members = &dataset.groups[group];
    let member_set: BTreeSet<UserId> = members.iter().copied().collect();
    if member_set.len() >= dataset.n_users() {
        return Err(Error::Validation(format!(
            "group {} already contains every user; nothing to inject",
            dataset.group_ids[group]
        )));
    }
    let injections = proportional_count(rho, members.len());
    let mut dummy = members.clone();
    for _ in 0..injections {
        let pick = sample_outside(&member_set, dataset.n_users(), rng)?;
        if !dummy.contains(&pick) {
            dummy.push(pick);
        }
    }
    Ok(dummy)
}

fn validate_rho(rho: f64) -> Result<()> {
    if !(0.0 < rho && rho <= 1.0) {
        return Err(Error::Validation(format!("rho must be in (0, 1], got {rho}")));
    }
    Ok(())
}

fn sample_outside(
    exclude: &BTreeSet<UserId>,
    n_users: usize,
    rng: &mut ChaCha8Rng,
) -> Result<UserId> {
    if exclude.len() >= n_users {
        return Err(Error::Validation("no user left to sample from".into()));
    }
    loop {
        let cand = rng.gen_range(0..n_users);
        if !exclude.contains(&cand) {
            return Ok(cand);
        }
    }
}

/// Pair a group for self-supervision: a sampled natural partner when one
/// exists, otherwise a PS/PI dummy by unbiased coin flip (PS needs at least
/// two members; singleton groups always get PI).
pub fn make_pair(
    group: GroupId,
    dataset: &Dataset,
    rho: f64,
    rng: &mut ChaCha8Rng,
) -> Result<GroupPair> {
    if let Some(pair) = find_partner(group, dataset, rng)? {
        return Ok(pair);
    }
    let members = &dataset.groups[group];
    let use_swap = rng.gen_bool(0.5) && members.len() >= 2;
    if use_swap {
        let dummy = proportional_swap(group, dataset, rho, rng)?;
        let dummy_set: BTreeSet<UserId> = dummy.iter().copied().collect();
        let relay: Vec<UserId> = members
            .iter()
            .copied()
            .filter(|m| dummy_set.contains(m))
            .collect();
        Ok(GroupPair {
            group,
            partner: Partner::Dummy(dummy),
            relay,
            source: PairSource::Ps,
        })
    } else {
        let dummy = proportional_imputation(group, dataset, rho, rng)?;
        Ok(GroupPair {
            group,
            partner: Partner::Dummy(dummy),
            relay: members.clone(),
            source: PairSource::Pi,
        })
    }
}

/// One negative user per relay user, uniform over users outside the relay
/// set.
pub fn sample_relay_negatives(
    pair: &GroupPair,
    dataset: &Dataset,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<UserId>> {
    let relay_set: BTreeSet<UserId> = pair.relay.iter().copied().collect();
    pair.relay
        .iter()
        .map(|_| sample_outside(&relay_set, dataset.n_users(), rng))
        .collect()
}

/// Hinge terms pushing each relay user closer to the intersection cube than
/// its sampled negative: `max(0, margin + d(u+) - d(u-))` with the combined
/// outer/inner distance against `intersect(cube(G), cube(G'))`.
pub(crate) fn build_ssl_terms(
    graph: &mut BatchGraph,
    model: &ModelParams,
    pair: &GroupPair,
    negatives: &[UserId],
    dataset: &Dataset,
) -> Result<Vec<NodeId>> {
    if pair.relay.is_empty() {
        return Err(Error::Validation("group pair has no relay users".into()));
    }
    if negatives.len() != pair.relay.len() {
        return Err(Error::Dimension(format!(
            "{} relay users but {} negatives",
            pair.relay.len(),
            negatives.len()
        )));
    }
    let gamma = model.config.gamma;
    let margin = model.config.margin_ssl;
    let cube_a = graph.group_cube(dataset, pair.group)?;
    let cube_b = match &pair.partner {
        Partner::Natural(g) => graph.group_cube(dataset, *g)?,
        Partner::Dummy(members) => graph.compose_members(members)?,
    };
    let inter = graph.intersect(cube_a, cube_b);

    let mut terms = Vec::with_capacity(pair.relay.len());
    for (&positive, &negative) in pair.relay.iter().zip(negatives) {
        let pos_node = graph.user(positive)?;
        let neg_node = graph.user(negative)?;
        let d_pos = graph.distance(inter, pos_node, gamma);
        let d_neg = graph.distance(inter, neg_node, gamma);
        terms.push(graph.hinge(margin, d_pos, d_neg));
    }
    Ok(terms)
}

/// Self-supervision loss for one pair with exact gradients through
/// composition, intersection, and distance. Negatives are drawn here (one
/// per relay user); [`ssl_loss_with_negatives`] is the deterministic core.
pub fn ssl_loss(
    pair: &GroupPair,
    model: &ModelParams,
    dataset: &Dataset,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, GradBuffers)> {
    let negatives = sample_relay_negatives(pair, dataset, rng)?;
    ssl_loss_with_negatives(pair, &negatives, model, dataset)
}

/// [`ssl_loss`] with the negative users fixed by the caller.
pub fn ssl_loss_with_negatives(
    pair: &GroupPair,
    negatives: &[UserId],
    model: &ModelParams,
    dataset: &Dataset,
) -> Result<(f64, GradBuffers)> {
    let mut graph = BatchGraph::new(model);
    let terms = build_ssl_terms(&mut graph, model, pair, negatives, dataset)?;
    let root = graph.total(terms);
    let loss = graph.tape.scalar(root);
    if !loss.is_finite() {
        return Err(Error::Numerical("ssl loss is not finite".into()));
    }
    let grads = graph.scatter(root)?;
    Ok((loss, grads))
}

/// Distance of the SSL loss surface from its nearest non-differentiable
/// point at the current parameters; see
/// [`crate::trainer::group_loss_kink_margin`].
pub fn ssl_loss_kink_margin(
    pair: &GroupPair,
    negatives: &[UserId],
    model: &ModelParams,
    dataset: &Dataset,
) -> Result<f64> {
    let mut graph = BatchGraph::new(model);
    let terms = build_ssl_terms(&mut graph, model, pair, negatives, dataset)?;
    let _ = graph.total(terms);
    Ok(graph.min_kink_margin())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cube::{distance_point_to_cube, intersect, GeometricComposerParams, IntersectionParams};
    use crate::dataset::GroupItemPair;
    use crate::dataset::Split;
    use crate::graph::EmbeddingTable;
    use crate::model::Composer;
    use crate::trainer::TrainConfig;
    use approx::assert_relative_eq;
    use std::collections::BTreeSet;
    use std::collections::HashMap;

    fn dataset_with_groups(n_users: usize, groups: Vec<Vec<UserId>>) -> Dataset {
        let mut user_items = vec![BTreeSet::new(); n_users];
        for u in 0..n_users {
            user_items[u].insert(0);
        }
        Dataset::from_parts(
            (0..n_users).map(|u| format!("u{u}")).collect(),
            vec!["i0".into()],
            (0..groups.len()).map(|g| format!("g{g}")).collect(),
            groups,
            user_items,
            vec![GroupItemPair {
                group: 0,
                item: 0,
                split: Split::Train,
            }],
            vec![BTreeSet::new(); n_users],
        )
        .unwrap()
    }

    #[test]
    fn partner_with_shared_member() {
        let ds = dataset_with_groups(3, vec![vec![0, 1], vec![1, 2]]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pair = find_partner(0, &ds, &mut rng).unwrap().unwrap();
        assert_eq!(pair.partner, Partner::Natural(1));
        assert_eq!(pair.relay, vec![1]);
        assert_eq!(pair.source, PairSource::Natural);
    }

    #[test]
    fn lone_group_has_no_partner() {
        let ds = dataset_with_groups(2, vec![vec![0, 1]]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(find_partner(0, &ds, &mut rng).unwrap().is_none());
    }

    #[test]
    fn partner_sampling_is_roughly_uniform() {
        // Group 0 overlaps groups 1, 2, 3; chi-square over 1000 draws with
        // 2 degrees of freedom, critical value 9.21 at p = 0.01.
        let ds = dataset_with_groups(
            4,
            vec![vec![0, 1], vec![0, 2], vec![1, 3], vec![0, 1, 2, 3]],
        );
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut counts: HashMap<GroupId, usize> = HashMap::new();
        for _ in 0..1000 {
            let pair = find_partner(0, &ds, &mut rng).unwrap().unwrap();
            let Partner::Natural(g) = pair.partner else {
                unreachable!()
            };
            *counts.entry(g).or_default() += 1;
        }
        assert_eq!(counts.len(), 3);
        let expected = 1000.0 / 3.0;
        let chi2: f64 = counts
            .values()
            .map(|&c| (c as f64 - expected).powi(2) / expected)
            .sum();
        assert!(chi2 < 9.21, "chi-square {chi2} too large for uniformity");
    }

    #[test]
    fn swap_replaces_half_at_rho_half() {
        let ds = dataset_with_groups(20, vec![vec![0, 1, 2, 3]]);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let dummy = proportional_swap(0, &ds, 0.5, &mut rng).unwrap();
        let original: BTreeSet<UserId> = [0, 1, 2, 3].into();
        let retained: Vec<_> = dummy.iter().filter(|u| original.contains(u)).collect();
        let injected: Vec<_> = dummy.iter().filter(|u| !original.contains(u)).collect();
        assert_eq!(retained.len(), 2);
        assert!(!injected.is_empty() && injected.len() <= 2);
    }

    #[test]
    fn swap_always_replaces_at_least_one() {
        let ds = dataset_with_groups(20, vec![vec![0, 1, 2, 3]]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        // floor(0.01 * 4) = 0, bumped to the minimum of one.
        let dummy = proportional_swap(0, &ds, 0.01, &mut rng).unwrap();
        let original: BTreeSet<UserId> = [0, 1, 2, 3].into();
        let retained = dummy.iter().filter(|u| original.contains(u)).count();
        assert_eq!(retained, 3);
    }

    #[test]
    fn swap_never_draws_from_the_group() {
        let ds = dataset_with_groups(10, vec![vec![0, 1, 2, 3]]);
        for seed in 0..50 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let dummy = proportional_swap(0, &ds, 0.5, &mut rng).unwrap();
            let original: BTreeSet<UserId> = [0, 1, 2, 3].into();
            for u in dummy.iter().filter(|u| !original.contains(u)) {
                assert!(*u >= 4);
            }
        }
    }

    #[test]
    fn swap_of_singleton_is_an_error() {
        let ds = dataset_with_groups(5, vec![vec![0]]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(proportional_swap(0, &ds, 0.5, &mut rng).is_err());
    }

    #[test]
    fn imputation_injects_and_preserves() {
        let ds = dataset_with_groups(20, vec![vec![0, 1, 2, 3]]);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let dummy = proportional_imputation(0, &ds, 0.5, &mut rng).unwrap();
        for u in 0..4 {
            assert!(dummy.contains(&u));
        }
        assert!(dummy.len() > 4 && dummy.len() <= 6);
    }

    #[test]
    fn imputation_minimum_one_for_singleton() {
        let ds = dataset_with_groups(5, vec![vec![0]]);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let dummy = proportional_imputation(0, &ds, 0.5, &mut rng).unwrap();
        assert_eq!(dummy.len(), 2);
        assert_eq!(dummy[0], 0);
    }

    #[test]
    fn imputation_without_outside_users_is_an_error() {
        let ds = dataset_with_groups(2, vec![vec![0, 1]]);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        assert!(proportional_imputation(0, &ds, 0.5, &mut rng).is_err());
    }

    #[test]
    fn dummy_pairs_always_have_relay_users() {
        for seed in 0..100 {
            let ds = dataset_with_groups(12, vec![vec![0, 1, 2], vec![5, 6]]);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pair = make_pair(0, &ds, 0.5, &mut rng).unwrap();
            assert!(!pair.relay.is_empty());
            assert!(matches!(pair.source, PairSource::Ps | PairSource::Pi));
            let partner: BTreeSet<UserId> =
                pair.partner_members(&ds).iter().copied().collect();
            for r in &pair.relay {
                assert!(partner.contains(r));
                assert!(ds.groups[0].contains(r));
            }
        }
    }

    fn ssl_model(seed: u64, n_users: usize) -> ModelParams {
        let cfg = TrainConfig {
            dim: 2,
            seed,
            gamma: 0.3,
            dropout: 0.0,
            ..TrainConfig::default()
        };
        ModelParams::new(cfg, EmbeddingTable::init(n_users, 1, 2, seed))
    }

    /// Hand-set d=2 instance with identity projections and zeroed
    /// intersection nets, checked against a straight-line evaluation.
    #[test]
    fn ssl_loss_matches_hand_evaluation() {
        let ds = dataset_with_groups(5, vec![vec![0, 1], vec![1, 2]]);
        let mut model = ssl_model(0, 5);
        model.composer = Composer::Geometric(GeometricComposerParams::identity(2));
        model.intersection = IntersectionParams::zeroed(2);
        let rows = [
            [0.0, 0.0], // u0
            [2.0, 2.0], // u1 (relay)
            [4.0, 4.0], // u2
            [9.0, 9.0], // u3 (negative)
            [1.0, 1.0], // u4
        ];
        for (u, row) in rows.iter().enumerate() {
            model.embeddings.user.row_mut(u).copy_from_slice(row);
        }

        // Cubes: g0 center (1,1) offset (1,1); g1 center (3,3) offset (1,1).
        // Zeroed nets: gates are 0.5, so the intersection has center (2,2)
        // and offset (0.5, 0.5).
        let cube_a = model.compose_group(&ds, 0).unwrap();
        let cube_b = model.compose_group(&ds, 1).unwrap();
        let inter = intersect(&cube_a, &cube_b, &model.intersection).unwrap();
        assert_eq!(inter.center, vec![2.0, 2.0]);
        assert_eq!(inter.offset, vec![0.5, 0.5]);

        let pair = GroupPair {
            group: 0,
            partner: Partner::Natural(1),
            relay: vec![1],
            source: PairSource::Natural,
        };
        let d_pos = distance_point_to_cube(&inter, &rows[1], 0.3);
        let d_neg = distance_point_to_cube(&inter, &rows[3], 0.3);
        let want = (0.5 + d_pos - d_neg).max(0.0);
        let (loss, _) = ssl_loss_with_negatives(&pair, &[3], &model, &ds).unwrap();
        assert_relative_eq!(loss, want, max_relative = 1e-12);
        // The relay user sits at the intersection center and the negative is
        // far outside, so the margin is satisfied.
        assert_eq!(loss, 0.0);
    }

    #[test]
    fn ssl_equal_distances_contribute_margin() {
        let ds = dataset_with_groups(5, vec![vec![0, 1], vec![1, 2]]);
        let mut model = ssl_model(1, 5);
        model.composer = Composer::Geometric(GeometricComposerParams::identity(2));
        model.intersection = IntersectionParams::zeroed(2);
        // Identical positive and negative embeddings -> d+ = d-.
        let (loss, _) = ssl_loss_with_negatives(
            &GroupPair {
                group: 0,
                partner: Partner::Natural(1),
                relay: vec![1],
                source: PairSource::Natural,
            },
            &[1],
            &model,
            &ds,
        )
        .unwrap();
        assert_relative_eq!(loss, model.config.margin_ssl);
    }

    #[test]
    fn ssl_loss_is_non_negative() {
        let ds = dataset_with_groups(8, vec![vec![0, 1, 2], vec![2, 3, 4]]);
        for seed in 0..30 {
            let model = ssl_model(seed, 8);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pair = make_pair(0, &ds, 0.5, &mut rng).unwrap();
            let (loss, _) = ssl_loss(&pair, &model, &ds, &mut rng).unwrap();
            assert!(loss >= 0.0);
        }
    }

    /// Fifty full-batch steps on the SSL loss alone pull the relay users
    /// strictly closer to the intersection cube.
    #[test]
    fn ssl_training_pulls_relay_users_into_intersection() {
        let ds = dataset_with_groups(8, vec![vec![0, 1, 2], vec![1, 2, 3]]);
        let mut model = ssl_model(7, 8);
        // Violated margin by construction: the relay users u1, u2 sit on
        // cube corners outside the shrunk intersection while the negative
        // u0 sits at its center.
        model.embeddings.user.row_mut(0).copy_from_slice(&[2.0, 2.0]);
        model.embeddings.user.row_mut(1).copy_from_slice(&[0.0, 0.0]);
        model.embeddings.user.row_mut(2).copy_from_slice(&[4.0, 4.0]);
        model.embeddings.user.row_mut(3).copy_from_slice(&[2.0, 2.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pair = find_partner(0, &ds, &mut rng).unwrap().unwrap();
        let negatives = vec![0, 0];
        let (initial_loss, _) = ssl_loss_with_negatives(&pair, &negatives, &model, &ds).unwrap();
        assert!(initial_loss > 0.0, "fixture must start with an active margin");

        let mean_relay_distance = |m: &ModelParams| -> f64 {
            let a = m.compose_group(&ds, 0).unwrap();
            let b = m.compose_group(&ds, 1).unwrap();
            let inter = intersect(&a, &b, &m.intersection).unwrap();
            pair.relay
                .iter()
                .map(|&u| distance_point_to_cube(&inter, m.embeddings.user.row(u), 0.3))
                .sum::<f64>()
                / pair.relay.len() as f64
        };

        let before = mean_relay_distance(&model);
        let sizes: Vec<usize> = std::iter::once(model.embeddings.user.data.len())
            .chain(std::iter::once(model.embeddings.item.data.len()))
            .chain(model.shared_slices().iter().map(|(_, s)| s.len()))
            .collect();
        let mut adam = crate::trainer::AdamState::new(&sizes);
        for _ in 0..50 {
            let (_, grads) = ssl_loss_with_negatives(&pair, &negatives, &model, &ds).unwrap();
            let grad_refs: Vec<&Vec<f64>> = std::iter::once(&grads.user.data)
                .chain(std::iter::once(&grads.item.data))
                .chain(grads.shared.iter())
                .collect();
            let mut params = model.all_slices_mut();
            adam.step(&mut params, &grad_refs, 1e-2).unwrap();
        }
        let after = mean_relay_distance(&model);
        assert!(
            after < before,
            "mean relay distance did not shrink: {before} -> {after}"
        );
    }
}
