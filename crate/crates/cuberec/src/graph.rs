//! Socially-enhanced light graph convolution for pretraining user and item
//! point embeddings.
//!
//! The combined graph stacks users and items into one node space with the
//! block adjacency `[[S, R], [R^T, 0]]` (S social ties, R interactions; S is
//! zeroed for the remove-social ablation). Entries are normalized
//! symmetrically: edge (a, b) carries `(deg(a) * deg(b))^(-1/2)`; nodes of
//! degree zero keep all-zero rows. Propagation is linear with no per-layer
//! weights, and the final table is the mean over layers 0..=L. Embeddings
//! are optimized with a hinge ranking loss over (user, positive, negative)
//! triples using squared Euclidean distances.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{sample_triplets, Dataset, TripletBatch, TripletLevel};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::trainer::AdamState;

/// Symmetric sparse matrix over the stacked user+item node space, CSR
/// layout, with degree-normalized entries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizedAdjacency {
    pub n_users: usize,
    pub n_items: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl NormalizedAdjacency {
    pub fn n_nodes(&self) -> usize {
        self.n_users + self.n_items
    }

    pub fn nnz(&self) -> usize {
        self.col_idx.len()
    }

    pub fn entry(&self, row: usize, col: usize) -> f64 {
        let lo = self.row_ptr[row];
        let hi = self.row_ptr[row + 1];
        match self.col_idx[lo..hi].binary_search(&col) {
            Ok(pos) => self.values[lo + pos],
            Err(_) => 0.0,
        }
    }

    /// `self * x` for a dense `n_nodes x d` table.
    fn matmul(&self, x: &Tensor) -> Tensor {
        let d = x.cols;
        let mut out = Tensor::zeros(x.rows, d);
        for row in 0..x.rows {
            let acc = out.row_mut(row);
            for idx in self.row_ptr[row]..self.row_ptr[row + 1] {
                let col = self.col_idx[idx];
                let w = self.values[idx];
                for (a, b) in acc.iter_mut().zip(x.row(col)) {
                    *a += w * b;
                }
            }
        }
        out
    }
}

/// Build the normalized block adjacency. `use_social = false` zeroes the
/// user-user block (the remove-social ablation).
pub fn build_adjacency(dataset: &Dataset, use_social: bool) -> NormalizedAdjacency {
    let n_users = dataset.n_users();
    let n_items = dataset.n_items();
    let n = n_users + n_items;

    // Neighbor lists in the stacked node space; item j is node n_users + j.
    let mut neighbors: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (u, items) in dataset.user_items.iter().enumerate() {
        for &i in items {
            neighbors[u].push(n_users + i);
            neighbors[n_users + i].push(u);
        }
    }
    if use_social {
        for (u, friends) in dataset.social.iter().enumerate() {
            for &v in friends {
                neighbors[u].push(v);
            }
        }
    }
    for list in &mut neighbors {
        list.sort_unstable();
    }

    let degree: Vec<usize> = neighbors.iter().map(Vec::len).collect();
    let mut row_ptr = Vec::with_capacity(n + 1);
    let mut col_idx = Vec::new();
    let mut values = Vec::new();
    row_ptr.push(0);
    for (a, list) in neighbors.iter().enumerate() {
        for &b in list {
            col_idx.push(b);
            values.push(1.0 / ((degree[a] * degree[b]) as f64).sqrt());
        }
        row_ptr.push(col_idx.len());
    }
    NormalizedAdjacency {
        n_users,
        n_items,
        row_ptr,
        col_idx,
        values,
    }
}

/// Dense user and item point embeddings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingTable {
    pub user: Tensor,
    pub item: Tensor,
}

impl EmbeddingTable {
    pub fn dim(&self) -> usize {
        self.user.cols
    }

    /// Seeded uniform init in `[-0.1/sqrt(d), 0.1/sqrt(d)]`.
    pub fn init(n_users: usize, n_items: usize, d: usize, seed: u64) -> EmbeddingTable {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 0.1 / (d as f64).sqrt();
        EmbeddingTable {
            user: Tensor::uniform(n_users, d, scale, &mut rng),
            item: Tensor::uniform(n_items, d, scale, &mut rng),
        }
    }

    pub fn zeros_like(&self) -> EmbeddingTable {
        EmbeddingTable {
            user: Tensor::zeros(self.user.rows, self.user.cols),
            item: Tensor::zeros(self.item.rows, self.item.cols),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.user.is_finite() && self.item.is_finite()
    }

    fn stacked(&self) -> Tensor {
        let mut data = Vec::with_capacity((self.user.rows + self.item.rows) * self.dim());
        data.extend_from_slice(&self.user.data);
        data.extend_from_slice(&self.item.data);
        Tensor {
            rows: self.user.rows + self.item.rows,
            cols: self.dim(),
            data,
        }
    }

    fn from_stacked(stacked: Tensor, n_users: usize) -> EmbeddingTable {
        let d = stacked.cols;
        let (user_data, item_data) = stacked.data.split_at(n_users * d);
        EmbeddingTable {
            user: Tensor {
                rows: n_users,
                cols: d,
                data: user_data.to_vec(),
            },
            item: Tensor {
                rows: stacked.rows - n_users,
                cols: d,
                data: item_data.to_vec(),
            },
        }
    }
}

/// Run L propagation layers and mean-pool: `(1/(L+1)) * sum_l A^l E`.
///
/// The adjacency is symmetric, so this same function also back-propagates
/// table-shaped gradients through the pooled propagation.
pub fn propagate(
    table: &EmbeddingTable,
    adjacency: &NormalizedAdjacency,
    layers: usize,
) -> Result<EmbeddingTable> {
    if table.user.rows != adjacency.n_users || table.item.rows != adjacency.n_items {
        return Err(Error::Dimension(format!(
            "table is {}+{} rows but adjacency expects {}+{}",
            table.user.rows, table.item.rows, adjacency.n_users, adjacency.n_items
        )));
    }
    let mut acc = table.stacked();
    let mut current = acc.clone();
    for _ in 0..layers {
        current = adjacency.matmul(&current);
        acc.add_in_place(&current);
    }
    acc.scale_in_place(1.0 / (layers + 1) as f64);
    Ok(EmbeddingTable::from_stacked(acc, adjacency.n_users))
}

/// Hinge ranking loss over user-level triples with its exact gradient.
///
/// Each triple contributes `max(0, margin + d(u, v+) - d(u, v-))` with
/// squared Euclidean distances; clamped triples contribute zero gradient.
/// Returns the batch loss sum and a table-shaped gradient.
pub fn user_loss(
    table: &EmbeddingTable,
    batch: &TripletBatch,
    margin: f64,
) -> Result<(f64, EmbeddingTable)> {
    if batch.level != TripletLevel::User {
        return Err(Error::Validation("user_loss needs a user-level batch".into()));
    }
    let d = table.dim();
    let mut loss = 0.0;
    let mut grad = table.zeros_like();
    for &(u, pos, neg) in &batch.triples {
        let uv = table.user.row(u);
        let pv = table.item.row(pos);
        let nv = table.item.row(neg);
        let d_pos = crate::tensor::squared_distance(uv, pv);
        let d_neg = crate::tensor::squared_distance(uv, nv);
        let violation = margin + d_pos - d_neg;
        if violation > 0.0 {
            loss += violation;
            let gu = grad.user.row_mut(u);
            for k in 0..d {
                gu[k] += 2.0 * (nv[k] - pv[k]);
            }
            let gp = grad.item.row_mut(pos);
            for k in 0..d {
                gp[k] += 2.0 * (pv[k] - uv[k]);
            }
            let gn = grad.item.row_mut(neg);
            for k in 0..d {
                gn[k] += 2.0 * (uv[k] - nv[k]);
            }
        }
    }
    Ok((loss, grad))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub dim: usize,
    pub layers: usize,
    pub margin: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub negatives: usize,
    pub use_social: bool,
}

/// Per-epoch pretraining record: mean loss per triple.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainEpoch {
    pub epoch: usize,
    pub loss: f64,
}

/// Stage-one training: seeded init, then mini-batch Adam on the user-level
/// hinge loss over freshly propagated embeddings. Propagation is recomputed
/// on the current base table every optimization step; gradients flow back
/// through it (the pooled propagation operator is symmetric). Stops at the
/// epoch budget or when the relative epoch-loss improvement drops below
/// 1e-4. Returns the propagated, pooled table.
pub fn pretrain(
    dataset: &Dataset,
    config: &PretrainConfig,
    seed: u64,
) -> Result<(EmbeddingTable, Vec<PretrainEpoch>)> {
    let adjacency = build_adjacency(dataset, config.use_social);
    let mut base = EmbeddingTable::init(
        dataset.n_users(),
        dataset.n_items(),
        config.dim,
        seed,
    );
    let mut adam = AdamState::new(&[base.user.data.len(), base.item.data.len()]);
    let mut history = Vec::new();
    let mut prev_loss = f64::INFINITY;

    for epoch in 0..config.epochs {
        let epoch_seed = seed ^ (0x9e37_79b9_7f4a_7c15u64.wrapping_mul(epoch as u64 + 1));
        let batch = sample_triplets(dataset, TripletLevel::User, config.negatives, epoch_seed)?;
        let mut order: Vec<usize> = (0..batch.triples.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(epoch_seed ^ 0xabcd);
        order.shuffle(&mut rng);

        let mut epoch_loss = 0.0;
        for chunk in order.chunks(config.batch_size.max(1)) {
            let mini = TripletBatch {
                level: TripletLevel::User,
                triples: chunk.iter().map(|&i| batch.triples[i]).collect(),
            };
            let propagated = propagate(&base, &adjacency, config.layers)?;
            let (loss, grad_out) = user_loss(&propagated, &mini, config.margin)?;
            if !loss.is_finite() {
                return Err(Error::Numerical(format!(
                    "pretraining loss became non-finite at epoch {epoch}"
                )));
            }
            epoch_loss += loss;
            let grad_base = propagate(&grad_out, &adjacency, config.layers)?;
            adam.step(
                &mut [&mut base.user.data, &mut base.item.data],
                &[&grad_base.user.data, &grad_base.item.data],
                config.lr,
            )?;
        }

        let mean = epoch_loss / batch.triples.len().max(1) as f64;
        history.push(PretrainEpoch { epoch, loss: mean });
        let improvement = (prev_loss - mean) / prev_loss.abs().max(1e-12);
        if epoch > 0 && improvement < 1e-4 {
            break;
        }
        prev_loss = mean;
    }

    let pooled = propagate(&base, &adjacency, config.layers)?;
    Ok((pooled, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::collections::BTreeSet;

    use crate::dataset::{Dataset, GroupItemPair, Split};
    use crate::gradcheck;

    /// n_users users, n_items items, explicit interaction and social lists.
    fn make_dataset(
        n_users: usize,
        n_items: usize,
        interactions: &[(usize, usize)],
        social: &[(usize, usize)],
    ) -> Dataset {
        let mut user_items = vec![BTreeSet::new(); n_users];
        for &(u, i) in interactions {
            user_items[u].insert(i);
        }
        let mut social_sets = vec![BTreeSet::new(); n_users];
        for &(a, b) in social {
            social_sets[a].insert(b);
            social_sets[b].insert(a);
        }
        Dataset::from_parts(
            (0..n_users).map(|u| format!("u{u}")).collect(),
            (0..n_items).map(|i| format!("i{i}")).collect(),
            vec!["g0".into()],
            vec![vec![0]],
            user_items,
            vec![GroupItemPair {
                group: 0,
                item: 0,
                split: Split::Train,
            }],
            social_sets,
        )
        .unwrap()
    }

    #[test]
    fn degree_one_edge_normalizes_to_one() {
        let ds = make_dataset(1, 1, &[(0, 0)], &[]);
        let adj = build_adjacency(&ds, false);
        assert_eq!(adj.entry(0, 1), 1.0);
        assert_eq!(adj.entry(1, 0), 1.0);
    }

    #[test]
    fn four_one_degrees_normalize_to_half() {
        // User 0 has 4 neighbors; item 0 has only user 0.
        let ds = make_dataset(1, 4, &[(0, 0), (0, 1), (0, 2), (0, 3)], &[]);
        let adj = build_adjacency(&ds, false);
        assert_relative_eq!(adj.entry(0, 1), 0.5);
    }

    #[test]
    fn social_block_zeroed_when_disabled() {
        let ds = make_dataset(3, 2, &[(0, 0), (1, 1), (2, 0)], &[(0, 1), (1, 2)]);
        let with = build_adjacency(&ds, true);
        let without = build_adjacency(&ds, false);
        for a in 0..3 {
            for b in 0..3 {
                assert_eq!(without.entry(a, b), 0.0);
            }
        }
        assert!(with.entry(0, 1) > 0.0);
    }

    #[test]
    fn adjacency_is_symmetric() {
        let ds = make_dataset(3, 3, &[(0, 0), (0, 1), (1, 1), (2, 2)], &[(0, 2)]);
        let adj = build_adjacency(&ds, true);
        let n = adj.n_nodes();
        for a in 0..n {
            for b in 0..n {
                assert_eq!(adj.entry(a, b), adj.entry(b, a));
            }
        }
    }

    #[test]
    fn propagate_zero_layers_is_identity() {
        let ds = make_dataset(2, 2, &[(0, 0), (1, 1)], &[]);
        let adj = build_adjacency(&ds, false);
        let table = EmbeddingTable::init(2, 2, 4, 7);
        let out = propagate(&table, &adj, 0).unwrap();
        assert_eq!(out, table);
    }

    #[test]
    fn isolated_node_scales_by_one_over_l_plus_one() {
        // User 1 has no edges at all.
        let ds = make_dataset(2, 1, &[(0, 0)], &[]);
        let adj = build_adjacency(&ds, false);
        let table = EmbeddingTable::init(2, 1, 3, 9);
        for layers in [1, 2, 5] {
            let out = propagate(&table, &adj, layers).unwrap();
            for k in 0..3 {
                assert_relative_eq!(
                    out.user.get(1, k),
                    table.user.get(1, k) / (layers + 1) as f64,
                    max_relative = 1e-12
                );
            }
        }
    }

    #[test]
    fn one_edge_one_layer_averages_endpoints() {
        let ds = make_dataset(1, 1, &[(0, 0)], &[]);
        let adj = build_adjacency(&ds, false);
        let table = EmbeddingTable::init(1, 1, 4, 11);
        let out = propagate(&table, &adj, 1).unwrap();
        for k in 0..4 {
            let want = (table.user.get(0, k) + table.item.get(0, k)) / 2.0;
            assert_relative_eq!(out.user.get(0, k), want, max_relative = 1e-12);
        }
    }

    #[test]
    fn propagation_is_linear_in_the_table() {
        let ds = make_dataset(3, 3, &[(0, 0), (1, 1), (2, 2), (0, 2)], &[(0, 1)]);
        let adj = build_adjacency(&ds, true);
        let table = EmbeddingTable::init(3, 3, 4, 13);
        let mut scaled = table.clone();
        scaled.user.scale_in_place(2.5);
        scaled.item.scale_in_place(2.5);
        let a = propagate(&table, &adj, 3).unwrap();
        let b = propagate(&scaled, &adj, 3).unwrap();
        for (x, y) in a.user.data.iter().zip(&b.user.data) {
            assert_relative_eq!(2.5 * x, *y, max_relative = 1e-12);
        }
    }

    #[test]
    fn propagate_rejects_mismatched_table() {
        let ds = make_dataset(2, 2, &[(0, 0)], &[]);
        let adj = build_adjacency(&ds, false);
        let table = EmbeddingTable::init(3, 2, 4, 1);
        assert!(propagate(&table, &adj, 1).is_err());
    }

    fn triple_batch(triples: Vec<(usize, usize, usize)>) -> TripletBatch {
        TripletBatch {
            level: TripletLevel::User,
            triples,
        }
    }

    #[test]
    fn hinge_value_examples() {
        // margin 0.5 with d+ = 0.2, d- = 1.0 -> 0; d+ = 1.0, d- = 0.2 -> 1.3.
        let mut table = EmbeddingTable::init(1, 2, 1, 0);
        table.user.set(0, 0, 0.0);
        table.item.set(0, 0, (0.2f64).sqrt());
        table.item.set(1, 0, 1.0);
        let (loss, _) = user_loss(&table, &triple_batch(vec![(0, 0, 1)]), 0.5).unwrap();
        assert_relative_eq!(loss, 0.0);
        let (loss, _) = user_loss(&table, &triple_batch(vec![(0, 1, 0)]), 0.5).unwrap();
        assert_relative_eq!(loss, 1.3, max_relative = 1e-12);
    }

    #[test]
    fn identical_vectors_contribute_margin() {
        let mut table = EmbeddingTable::init(1, 2, 3, 0);
        let row = vec![0.5, -0.25, 1.0];
        table.user.row_mut(0).copy_from_slice(&row);
        table.item.row_mut(0).copy_from_slice(&row);
        table.item.row_mut(1).copy_from_slice(&row);
        let (loss, _) = user_loss(&table, &triple_batch(vec![(0, 0, 1)]), 0.5).unwrap();
        assert_relative_eq!(loss, 0.5);
    }

    #[test]
    fn user_loss_gradient_matches_finite_differences() {
        let table = EmbeddingTable::init(3, 4, 4, 21);
        let batch = triple_batch(vec![(0, 0, 1), (1, 2, 3), (2, 1, 0), (0, 3, 2)]);
        let (_, grad) = user_loss(&table, &batch, 0.5).unwrap();

        let flat: Vec<f64> = table
            .user
            .data
            .iter()
            .chain(&table.item.data)
            .cloned()
            .collect();
        let mut f = |x: &[f64]| {
            let mut t = table.clone();
            let nu = t.user.data.len();
            t.user.data.copy_from_slice(&x[..nu]);
            t.item.data.copy_from_slice(&x[nu..]);
            user_loss(&t, &batch, 0.5).unwrap().0
        };
        let numeric = gradcheck::central_diff(&mut f, &flat, 1e-5);
        let analytic: Vec<f64> = grad.user.data.iter().chain(&grad.item.data).cloned().collect();
        assert!(
            gradcheck::max_rel_err(&analytic, &numeric) < 1e-4,
            "max rel err {}",
            gradcheck::max_rel_err(&analytic, &numeric)
        );
    }

    /// Full-batch descent: loss is non-increasing over the first 10 steps.
    #[test]
    fn full_batch_steps_do_not_increase_loss() {
        let ds = make_dataset(2, 2, &[(0, 0), (1, 1)], &[]);
        let adj = build_adjacency(&ds, false);
        let mut base = EmbeddingTable::init(2, 2, 4, 3);
        let batch = triple_batch(vec![(0, 0, 1), (1, 1, 0)]);
        let mut adam = AdamState::new(&[base.user.data.len(), base.item.data.len()]);
        let mut prev = f64::INFINITY;
        for _ in 0..10 {
            let propagated = propagate(&base, &adj, 2).unwrap();
            let (loss, grad_out) = user_loss(&propagated, &batch, 0.5).unwrap();
            assert!(loss <= prev + 1e-9, "loss rose from {prev} to {loss}");
            prev = loss;
            let grad = propagate(&grad_out, &adj, 2).unwrap();
            adam.step(
                &mut [&mut base.user.data, &mut base.item.data],
                &[&grad.user.data, &grad.item.data],
                1e-4,
            )
            .unwrap();
        }
    }

    fn disjoint_pair_dataset() -> Dataset {
        make_dataset(2, 2, &[(0, 0), (1, 1)], &[])
    }

    fn pre_cfg(epochs: usize) -> PretrainConfig {
        PretrainConfig {
            dim: 4,
            layers: 2,
            margin: 0.5,
            lr: 5e-3,
            batch_size: 16,
            epochs,
            negatives: 2,
            use_social: false,
        }
    }

    #[test]
    fn pretraining_separates_disjoint_tastes() {
        let ds = disjoint_pair_dataset();
        let (table, _) = pretrain(&ds, &pre_cfg(50), 17).unwrap();
        for u in 0..2 {
            let own = crate::tensor::squared_distance(table.user.row(u), table.item.row(u));
            let other = crate::tensor::squared_distance(table.user.row(u), table.item.row(1 - u));
            assert!(own < other, "user {u}: {own} !< {other}");
        }
    }

    #[test]
    fn zero_epochs_returns_propagated_init() {
        let ds = disjoint_pair_dataset();
        let cfg = pre_cfg(0);
        let (table, history) = pretrain(&ds, &cfg, 5).unwrap();
        assert!(history.is_empty());
        let adj = build_adjacency(&ds, false);
        let init = EmbeddingTable::init(2, 2, 4, 5);
        let want = propagate(&init, &adj, 2).unwrap();
        assert_eq!(table, want);
    }

    #[test]
    fn pretraining_is_deterministic() {
        let ds = disjoint_pair_dataset();
        let (a, _) = pretrain(&ds, &pre_cfg(5), 23).unwrap();
        let (b, _) = pretrain(&ds, &pre_cfg(5), 23).unwrap();
        assert_eq!(a, b);
    }
}
