//! Trainable model state and the differentiable forward passes used by the
//! stage-two losses.
//!
//! [`ModelParams`] owns the fine-tuned embedding table, the active group
//! composer, and the intersection networks. [`BatchGraph`] assembles one
//! autodiff tape per mini-batch: parameter tensors enter the tape as shared
//! leaves (one per tensor per batch), embedding rows as per-row leaves, and
//! [`BatchGraph::scatter`] routes the backward pass into dense gradient
//! buffers shaped like the parameters.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{NodeId, Tape};
use crate::cube::{
    attentive_compose, geometric_compose, AttentiveComposerParams, GeometricComposerParams,
    Hypercube, IntersectionParams, Mlp,
};
use crate::dataset::{Dataset, GroupId, UserId};
use crate::error::{Error, Result};
use crate::graph::EmbeddingTable;
use crate::trainer::TrainConfig;

/// Which group composer a model variant uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ComposerKind {
    #[serde(rename = "cuberec-g")]
    Geometric,
    #[serde(rename = "cuberec-a")]
    Attentive,
}

impl fmt::Display for ComposerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ComposerKind::Geometric => write!(f, "cuberec-g"),
            ComposerKind::Attentive => write!(f, "cuberec-a"),
        }
    }
}

impl FromStr for ComposerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<ComposerKind> {
        match s {
            "cuberec-g" | "geometric" => Ok(ComposerKind::Geometric),
            "cuberec-a" | "attentive" => Ok(ComposerKind::Attentive),
            other => Err(Error::Validation(format!(
                "unknown variant {other:?}; expected cuberec-g or cuberec-a"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Composer {
    Geometric(GeometricComposerParams),
    Attentive(AttentiveComposerParams),
}

impl Composer {
    pub fn kind(&self) -> ComposerKind {
        match self {
            Composer::Geometric(_) => ComposerKind::Geometric,
            Composer::Attentive(_) => ComposerKind::Attentive,
        }
    }
}

/// All trainable state plus the hyperparameters it was built with.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub config: TrainConfig,
    pub embeddings: EmbeddingTable,
    pub composer: Composer,
    pub intersection: IntersectionParams,
}

impl ModelParams {
    /// Fresh composer and intersection parameters around a (typically
    /// pretrained) embedding table.
    pub fn new(config: TrainConfig, embeddings: EmbeddingTable) -> ModelParams {
        let d = config.dim;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x6d6f_64656c);
        let composer = match config.variant {
            ComposerKind::Geometric => Composer::Geometric(GeometricComposerParams::init(d, &mut rng)),
            ComposerKind::Attentive => Composer::Attentive(AttentiveComposerParams::init(d, &mut rng)),
        };
        let intersection = IntersectionParams::init(d, &mut rng);
        ModelParams {
            config,
            embeddings,
            composer,
            intersection,
        }
    }

    pub fn dim(&self) -> usize {
        self.config.dim
    }

    /// Compose one group's hypercube from the current member embeddings
    /// (pure forward, no tape).
    pub fn compose_group(&self, dataset: &Dataset, group: GroupId) -> Result<Hypercube> {
        let members = dataset
            .groups
            .get(group)
            .ok_or_else(|| Error::Validation(format!("unknown group index {group}")))?;
        self.compose_members(members)
    }

    /// Compose a hypercube for an explicit member list.
    pub fn compose_members(&self, members: &[UserId]) -> Result<Hypercube> {
        let rows: Vec<&[f64]> = members
            .iter()
            .map(|&u| {
                if u >= self.embeddings.user.rows {
                    return Err(Error::Validation(format!("unknown member index {u}")));
                }
                Ok(self.embeddings.user.row(u))
            })
            .collect::<Result<_>>()?;
        match &self.composer {
            Composer::Geometric(p) => geometric_compose(&rows, p),
            Composer::Attentive(p) => attentive_compose(&rows, p),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.embeddings.is_finite()
            && self
                .shared_slices()
                .iter()
                .all(|(_, s)| s.iter().all(|v| v.is_finite()))
    }

    /// Shared (non-embedding) parameter tensors in canonical slot order:
    /// composer tensors first, then the two intersection networks. The
    /// `(rows, cols)` shape is what [`BatchGraph`] feeds to `matvec`.
    pub(crate) fn shared_specs(&self) -> Vec<(&'static str, usize, usize)> {
        let d = self.dim();
        let mut specs: Vec<(&'static str, usize, usize)> = match &self.composer {
            Composer::Geometric(_) => vec![
                ("geo_w_center", d, d),
                ("geo_w_offset_raw", d, d),
            ],
            Composer::Attentive(_) => vec![
                ("attn_query", 1, d),
                ("attn_w_key", d, d),
                ("attn_w_value", d, d),
                ("attn_w_center", d, d),
                ("attn_w_offset", d, d),
                ("attn_b_offset", 1, d),
            ],
        };
        for (net, w_names, b_names) in [
            ("phi", PHI_W_NAMES, PHI_B_NAMES),
            ("psi", PSI_W_NAMES, PSI_B_NAMES),
        ] {
            let _ = net;
            for layer in 0..3 {
                specs.push((w_names[layer], d, d));
                specs.push((b_names[layer], 1, d));
            }
        }
        specs
    }

    pub(crate) fn shared_slices(&self) -> Vec<(&'static str, &[f64])> {
        let mut out: Vec<(&'static str, &[f64])> = match &self.composer {
            Composer::Geometric(p) => vec![
                ("geo_w_center", p.w_center.data.as_slice()),
                ("geo_w_offset_raw", p.w_offset_raw.data.as_slice()),
            ],
            Composer::Attentive(p) => vec![
                ("attn_query", p.query.as_slice()),
                ("attn_w_key", p.w_key.data.as_slice()),
                ("attn_w_value", p.w_value.data.as_slice()),
                ("attn_w_center", p.w_center.data.as_slice()),
                ("attn_w_offset", p.w_offset.data.as_slice()),
                ("attn_b_offset", p.b_offset.as_slice()),
            ],
        };
        for (mlp, w_names, b_names) in [
            (&self.intersection.center_net, PHI_W_NAMES, PHI_B_NAMES),
            (&self.intersection.offset_net, PSI_W_NAMES, PSI_B_NAMES),
        ] {
            for layer in 0..3 {
                out.push((w_names[layer], mlp.weights[layer].data.as_slice()));
                out.push((b_names[layer], mlp.biases[layer].as_slice()));
            }
        }
        out
    }

    /// Every trainable tensor as a flat mutable slice: user embeddings,
    /// item embeddings, then composer and intersection tensors in the
    /// canonical slot order. Matches the gradient layout of
    /// [`GradBuffers`].
    pub fn all_slices_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let ModelParams {
            embeddings,
            composer,
            intersection,
            ..
        } = self;
        let mut out = vec![&mut embeddings.user.data, &mut embeddings.item.data];
        out.extend(shared_parts_mut(composer, intersection));
        out
    }
}

fn shared_parts_mut<'a>(
    composer: &'a mut Composer,
    intersection: &'a mut IntersectionParams,
) -> Vec<&'a mut Vec<f64>> {
    fn mlp_slices(mlp: &mut Mlp) -> Vec<&mut Vec<f64>> {
        let [w0, w1, w2] = &mut mlp.weights;
        let [b0, b1, b2] = &mut mlp.biases;
        vec![&mut w0.data, b0, &mut w1.data, b1, &mut w2.data, b2]
    }
    let mut out: Vec<&mut Vec<f64>> = match composer {
        Composer::Geometric(p) => vec![&mut p.w_center.data, &mut p.w_offset_raw.data],
        Composer::Attentive(p) => vec![
            &mut p.query,
            &mut p.w_key.data,
            &mut p.w_value.data,
            &mut p.w_center.data,
            &mut p.w_offset.data,
            &mut p.b_offset,
        ],
    };
    out.extend(mlp_slices(&mut intersection.center_net));
    out.extend(mlp_slices(&mut intersection.offset_net));
    out
}

const PHI_W_NAMES: [&str; 3] = ["phi_w0", "phi_w1", "phi_w2"];
const PHI_B_NAMES: [&str; 3] = ["phi_b0", "phi_b1", "phi_b2"];
const PSI_W_NAMES: [&str; 3] = ["psi_w0", "psi_w1", "psi_w2"];
const PSI_B_NAMES: [&str; 3] = ["psi_b0", "psi_b1", "psi_b2"];

/// Gradient buffers shaped like the model parameters.
pub struct GradBuffers {
    pub user: crate::tensor::Tensor,
    pub item: crate::tensor::Tensor,
    /// One flat buffer per shared slot, in `shared_specs` order.
    pub shared: Vec<Vec<f64>>,
}

/// One autodiff tape for a mini-batch of loss terms.
pub(crate) struct BatchGraph<'p> {
    pub tape: Tape,
    params: &'p ModelParams,
    slot_index: HashMap<&'static str, usize>,
    slot_specs: Vec<(&'static str, usize, usize)>,
    slot_leaves: Vec<Option<NodeId>>,
    user_leaves: HashMap<UserId, NodeId>,
    item_leaves: HashMap<usize, NodeId>,
    cube_cache: HashMap<GroupId, (NodeId, NodeId)>,
    dropout: f64,
    dropout_rng: Option<ChaCha8Rng>,
}

impl<'p> BatchGraph<'p> {
    /// Evaluation-mode graph: no dropout.
    pub fn new(params: &'p ModelParams) -> BatchGraph<'p> {
        Self::with_dropout(params, 0.0, None)
    }

    /// Training-mode graph; `dropout > 0` requires a mask generator.
    pub fn with_dropout(
        params: &'p ModelParams,
        dropout: f64,
        dropout_rng: Option<ChaCha8Rng>,
    ) -> BatchGraph<'p> {
        let slot_specs = params.shared_specs();
        let slot_index = slot_specs
            .iter()
            .enumerate()
            .map(|(i, &(name, _, _))| (name, i))
            .collect();
        let n_slots = slot_specs.len();
        BatchGraph {
            tape: Tape::new(),
            params,
            slot_index,
            slot_specs,
            slot_leaves: vec![None; n_slots],
            user_leaves: HashMap::new(),
            item_leaves: HashMap::new(),
            cube_cache: HashMap::new(),
            dropout: if dropout_rng.is_some() { dropout } else { 0.0 },
            dropout_rng,
        }
    }

    pub fn user(&mut self, u: UserId) -> Result<NodeId> {
        if u >= self.params.embeddings.user.rows {
            return Err(Error::Validation(format!("unknown user index {u}")));
        }
        if let Some(&id) = self.user_leaves.get(&u) {
            return Ok(id);
        }
        let id = self.tape.leaf(self.params.embeddings.user.row(u).to_vec());
        self.user_leaves.insert(u, id);
        Ok(id)
    }

    pub fn item(&mut self, i: usize) -> Result<NodeId> {
        if i >= self.params.embeddings.item.rows {
            return Err(Error::Validation(format!("unknown item index {i}")));
        }
        if let Some(&id) = self.item_leaves.get(&i) {
            return Ok(id);
        }
        let id = self.tape.leaf(self.params.embeddings.item.row(i).to_vec());
        self.item_leaves.insert(i, id);
        Ok(id)
    }

    /// Leaf node plus (rows, cols) for a shared tensor, created on first use.
    fn shared(&mut self, name: &'static str) -> (NodeId, usize, usize) {
        let slot = self.slot_index[name];
        let (_, rows, cols) = self.slot_specs[slot];
        if let Some(id) = self.slot_leaves[slot] {
            return (id, rows, cols);
        }
        let values = self
            .params
            .shared_slices()
            .into_iter()
            .find(|(n, _)| *n == name)
            .expect("slot name out of sync")
            .1
            .to_vec();
        let id = self.tape.leaf(values);
        self.slot_leaves[slot] = Some(id);
        (id, rows, cols)
    }

    /// Inverted dropout on hidden activations; identity in eval mode.
    fn maybe_dropout(&mut self, x: NodeId) -> NodeId {
        let p = self.dropout;
        if p <= 0.0 {
            return x;
        }
        let rng = self.dropout_rng.as_mut().expect("dropout requires rng");
        let keep = 1.0 - p;
        let mask: Vec<f64> = (0..self.tape.value(x).len())
            .map(|_| if rng.gen::<f64>() < p { 0.0 } else { 1.0 / keep })
            .collect();
        self.tape.mul_mask(x, mask)
    }

    /// Compose a group hypercube from member embedding leaves; cached per
    /// group id within the batch.
    pub fn group_cube(&mut self, dataset: &Dataset, group: GroupId) -> Result<(NodeId, NodeId)> {
        if let Some(&cube) = self.cube_cache.get(&group) {
            return Ok(cube);
        }
        let members = dataset
            .groups
            .get(group)
            .ok_or_else(|| Error::Validation(format!("unknown group index {group}")))?
            .clone();
        let cube = self.compose_members(&members)?;
        self.cube_cache.insert(group, cube);
        Ok(cube)
    }

    /// Differentiable group composition for an explicit member list.
    pub fn compose_members(&mut self, members: &[UserId]) -> Result<(NodeId, NodeId)> {
        if members.is_empty() {
            return Err(Error::Validation("cannot compose an empty group".into()));
        }
        let d = self.params.dim();
        let member_nodes: Vec<NodeId> = members
            .iter()
            .map(|&u| self.user(u))
            .collect::<Result<_>>()?;
        match self.params.composer.kind() {
            ComposerKind::Geometric => {
                let hi = self.tape.elem_max(member_nodes.clone());
                let lo = self.tape.elem_min(member_nodes);
                let sum = self.tape.add(hi, lo);
                let center_tilde = self.tape.scale(sum, 0.5);
                let gap = self.tape.sub(hi, lo);
                let offset_tilde = self.tape.scale(gap, 0.5);
                let (w_center, rows, cols) = self.shared("geo_w_center");
                let center = self.tape.matvec(w_center, center_tilde, rows, cols);
                let (w_raw, rows, cols) = self.shared("geo_w_offset_raw");
                let w_eff = self.tape.softplus(w_raw);
                let offset = self.tape.matvec(w_eff, offset_tilde, rows, cols);
                Ok((center, offset))
            }
            ComposerKind::Attentive => {
                let (query, _, _) = self.shared("attn_query");
                let (w_key, rows, cols) = self.shared("attn_w_key");
                let keys: Vec<NodeId> = member_nodes
                    .iter()
                    .map(|&m| self.tape.matvec(w_key, m, rows, cols))
                    .collect();
                let scores = self.tape.dot_stack(keys.into_iter().map(|k| (k, query)).collect());
                let scaled = self.tape.scale(scores, 1.0 / (d as f64).sqrt());
                let attention = self.tape.softmax(scaled);
                let (w_value, rows, cols) = self.shared("attn_w_value");
                let values: Vec<NodeId> = member_nodes
                    .iter()
                    .map(|&m| self.tape.matvec(w_value, m, rows, cols))
                    .collect();
                let summary = self.tape.weighted_sum(attention, values);
                let summary = self.maybe_dropout(summary);
                let (w_center, rows, cols) = self.shared("attn_w_center");
                let center = self.tape.matvec(w_center, summary, rows, cols);
                let (w_offset, rows, cols) = self.shared("attn_w_offset");
                let projected = self.tape.matvec(w_offset, summary, rows, cols);
                let (b_offset, _, _) = self.shared("attn_b_offset");
                let shifted = self.tape.add(projected, b_offset);
                let offset = self.tape.relu(shifted);
                Ok((center, offset))
            }
        }
    }

    /// `f_out + gamma * f_in` between a cube and a point node.
    pub fn distance(&mut self, cube: (NodeId, NodeId), point: NodeId, gamma: f64) -> NodeId {
        let (center, offset) = cube;
        let lo = self.tape.sub(center, offset);
        let hi = self.tape.add(center, offset);
        let over = self.tape.sub(point, hi);
        let over = self.tape.relu(over);
        let under = self.tape.sub(lo, point);
        let under = self.tape.relu(under);
        let outside = self.tape.add(over, under);
        let f_out = self.tape.sum_sq(outside);
        let clamped_lo = self.tape.elem_max(vec![lo, point]);
        let anchor = self.tape.elem_min(vec![hi, clamped_lo]);
        let inner = self.tape.sub(center, anchor);
        let f_in = self.tape.sum_sq(inner);
        let weighted = self.tape.scale(f_in, gamma);
        self.tape.add(f_out, weighted)
    }

    /// Center-only squared distance (the point-distance ablation scorer).
    pub fn point_distance(&mut self, center: NodeId, point: NodeId) -> NodeId {
        let diff = self.tape.sub(center, point);
        self.tape.sum_sq(diff)
    }

    /// Cube-to-item distance honoring the model's point-distance flag.
    pub fn item_distance(&mut self, cube: (NodeId, NodeId), point: NodeId) -> NodeId {
        if self.params.config.point_distance {
            self.point_distance(cube.0, point)
        } else {
            self.distance(cube, point, self.params.config.gamma)
        }
    }

    /// Neural relaxed intersection of two cubes.
    pub fn intersect(
        &mut self,
        a: (NodeId, NodeId),
        b: (NodeId, NodeId),
    ) -> (NodeId, NodeId) {
        let score_a = self.mlp(PHI_W_NAMES, PHI_B_NAMES, a.0);
        let score_b = self.mlp(PHI_W_NAMES, PHI_B_NAMES, b.0);
        let diff = self.tape.sub(score_a, score_b);
        let gate = self.tape.sigmoid(diff);
        let ca = self.tape.hadamard(gate, a.0);
        let complement = self.tape.one_minus(gate);
        let cb = self.tape.hadamard(complement, b.0);
        let center = self.tape.add(ca, cb);

        let summed = self.tape.add(a.1, b.1);
        let shrink_raw = self.mlp(PSI_W_NAMES, PSI_B_NAMES, summed);
        let shrink = self.tape.sigmoid(shrink_raw);
        let min_offset = self.tape.elem_min(vec![a.1, b.1]);
        let offset = self.tape.hadamard(min_offset, shrink);
        (center, offset)
    }

    /// Three layers, relu after the first two, dropout on hidden
    /// activations in training mode.
    fn mlp(&mut self, w_names: [&'static str; 3], b_names: [&'static str; 3], x: NodeId) -> NodeId {
        let mut h = x;
        for layer in 0..3 {
            let (w, rows, cols) = self.shared(w_names[layer]);
            let (b, _, _) = self.shared(b_names[layer]);
            let wx = self.tape.matvec(w, h, rows, cols);
            h = self.tape.add(wx, b);
            if layer < 2 {
                h = self.tape.relu(h);
                h = self.maybe_dropout(h);
            }
        }
        h
    }

    /// `max(0, margin + d_pos - d_neg)`.
    pub fn hinge(&mut self, margin: f64, d_pos: NodeId, d_neg: NodeId) -> NodeId {
        let diff = self.tape.sub(d_pos, d_neg);
        let shifted = self.tape.add_const(diff, margin);
        self.tape.relu(shifted)
    }

    /// Sum a list of scalar terms; empty lists give a constant zero.
    pub fn total(&mut self, terms: Vec<NodeId>) -> NodeId {
        if terms.is_empty() {
            self.tape.leaf(vec![0.0])
        } else {
            self.tape.sum_list(terms)
        }
    }

    /// Backward pass from `root`, scattered into parameter-shaped buffers.
    pub fn scatter(&self, root: NodeId) -> Result<GradBuffers> {
        let grads = self.tape.backward(root);
        let emb = &self.params.embeddings;
        let mut out = GradBuffers {
            user: crate::tensor::Tensor::zeros(emb.user.rows, emb.user.cols),
            item: crate::tensor::Tensor::zeros(emb.item.rows, emb.item.cols),
            shared: self
                .slot_specs
                .iter()
                .map(|&(_, r, c)| vec![0.0; r * c])
                .collect(),
        };
        for (&u, &leaf) in &self.user_leaves {
            out.user.row_mut(u).copy_from_slice(grads.of(leaf));
        }
        for (&i, &leaf) in &self.item_leaves {
            out.item.row_mut(i).copy_from_slice(grads.of(leaf));
        }
        for (slot, leaf) in self.slot_leaves.iter().enumerate() {
            if let Some(id) = leaf {
                out.shared[slot].copy_from_slice(grads.of(*id));
            }
        }
        let finite = out.user.is_finite()
            && out.item.is_finite()
            && out.shared.iter().all(|s| s.iter().all(|v| v.is_finite()));
        if !finite {
            return Err(Error::Numerical("non-finite gradient".into()));
        }
        Ok(out)
    }

    pub fn min_kink_margin(&self) -> f64 {
        self.tape.min_kink_margin()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cube::distance_point_to_cube;
    use crate::cube::intersect;
    use crate::graph::EmbeddingTable;
    use approx::assert_relative_eq;

    fn test_params(kind: ComposerKind, seed: u64) -> ModelParams {
        let cfg = TrainConfig {
            variant: kind,
            dim: 3,
            seed,
            ..TrainConfig::default()
        };
        let embeddings = EmbeddingTable::init(6, 5, 3, seed);
        ModelParams::new(cfg, embeddings)
    }

    #[test]
    fn shared_slot_orders_agree() {
        for kind in [ComposerKind::Geometric, ComposerKind::Attentive] {
            let mut params = test_params(kind, 1);
            let specs = params.shared_specs();
            let slices = params.shared_slices();
            assert_eq!(specs.len(), slices.len());
            for ((name_a, rows, cols), (name_b, data)) in specs.iter().zip(&slices) {
                assert_eq!(name_a, name_b);
                assert_eq!(rows * cols, data.len(), "slot {name_a}");
            }
            // Embeddings first, then exactly one slice per shared slot.
            let n = params.all_slices_mut().len();
            assert_eq!(n, specs.len() + 2);
        }
    }

    #[test]
    fn tape_compose_matches_pure_compose() {
        for kind in [ComposerKind::Geometric, ComposerKind::Attentive] {
            let params = test_params(kind, 7);
            let members = vec![0usize, 2, 4];
            let pure = params.compose_members(&members).unwrap();
            let mut graph = BatchGraph::new(&params);
            let (c, o) = graph.compose_members(&members).unwrap();
            for k in 0..3 {
                assert_relative_eq!(graph.tape.value(c)[k], pure.center[k], max_relative = 1e-12);
                assert_relative_eq!(graph.tape.value(o)[k], pure.offset[k], max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn tape_distance_matches_pure_distance() {
        let params = test_params(ComposerKind::Geometric, 9);
        let members = vec![1usize, 3];
        let pure_cube = params.compose_members(&members).unwrap();
        let mut graph = BatchGraph::new(&params);
        let cube = graph.compose_members(&members).unwrap();
        for item in 0..5 {
            let point = graph.item(item).unwrap();
            let node = graph.distance(cube, point, 0.3);
            let want = distance_point_to_cube(&pure_cube, params.embeddings.item.row(item), 0.3);
            assert_relative_eq!(graph.tape.scalar(node), want, max_relative = 1e-12);
        }
    }

    #[test]
    fn tape_intersect_matches_pure_intersect() {
        let params = test_params(ComposerKind::Geometric, 11);
        let a_members = vec![0usize, 1];
        let b_members = vec![1usize, 2, 3];
        let pure = intersect(
            &params.compose_members(&a_members).unwrap(),
            &params.compose_members(&b_members).unwrap(),
            &params.intersection,
        )
        .unwrap();
        let mut graph = BatchGraph::new(&params);
        let a = graph.compose_members(&a_members).unwrap();
        let b = graph.compose_members(&b_members).unwrap();
        let (c, o) = graph.intersect(a, b);
        for k in 0..3 {
            assert_relative_eq!(graph.tape.value(c)[k], pure.center[k], max_relative = 1e-12);
            assert_relative_eq!(graph.tape.value(o)[k], pure.offset[k], max_relative = 1e-12);
        }
    }

    #[test]
    fn dropout_only_active_with_rng() {
        let params = test_params(ComposerKind::Attentive, 13);
        let members = vec![0usize, 1, 2];
        let mut eval_graph = BatchGraph::new(&params);
        let (c_eval, _) = eval_graph.compose_members(&members).unwrap();
        let mut train_graph = BatchGraph::with_dropout(
            &params,
            0.5,
            Some(ChaCha8Rng::seed_from_u64(3)),
        );
        let (c_train, _) = train_graph.compose_members(&members).unwrap();
        // With dropout the summary is masked, so centers generally differ.
        let differs = (0..3).any(|k| {
            (eval_graph.tape.value(c_eval)[k] - train_graph.tape.value(c_train)[k]).abs() > 1e-9
        });
        assert!(differs);
    }
}
