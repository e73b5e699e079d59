//! Hypercube group representations and the point-to-hypercube distance.
//!
//! A hypercube is a center vector `c` and a non-negative offset vector `o`;
//! it covers every point `g` with `c - o <= g <= c + o` element-wise. Groups
//! are composed from their members' point embeddings either by geometric
//! bounding plus projection, or by attentive fusion plus projection. Items
//! are ranked by
//!
//! ```text
//! d(G, v) = f_out(G, v) + gamma * f_in(G, v)
//! f_out   = || max(v - g_hi, 0) + max(g_lo - v, 0) ||^2
//! f_in    = || c - min(g_hi, max(g_lo, v)) ||^2
//! ```
//!
//! where `g_lo = c - o` and `g_hi = c + o` are the lower-left and
//! upper-right corners. `f_out` vanishes inside the cube, where `f_in`
//! reduces to the plain center distance.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{sigmoid, softplus, softplus_inverse, Tensor};

/// Axis-aligned hypercube in center/offset form. The offset is element-wise
/// non-negative on every construction path.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hypercube {
    pub center: Vec<f64>,
    pub offset: Vec<f64>,
}

impl Hypercube {
    pub fn new(center: Vec<f64>, offset: Vec<f64>) -> Result<Hypercube> {
        if center.len() != offset.len() {
            return Err(Error::Dimension(
                "hypercube center and offset lengths differ".into(),
            ));
        }
        if offset.iter().any(|&o| o < 0.0) {
            return Err(Error::Validation("hypercube offset must be >= 0".into()));
        }
        Ok(Hypercube { center, offset })
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    /// Lower-left and upper-right corners `(c - o, c + o)`.
    pub fn corners(&self) -> (Vec<f64>, Vec<f64>) {
        let lo = self
            .center
            .iter()
            .zip(&self.offset)
            .map(|(c, o)| c - o)
            .collect();
        let hi = self
            .center
            .iter()
            .zip(&self.offset)
            .map(|(c, o)| c + o)
            .collect();
        (lo, hi)
    }

    /// Membership test, boundary inclusive.
    pub fn contains(&self, point: &[f64]) -> bool {
        self.center
            .iter()
            .zip(&self.offset)
            .zip(point)
            .all(|((c, o), p)| (c - o) <= *p && *p <= (c + o))
    }
}

/// The smallest hypercube covering all member points: center is the midpoint
/// of the element-wise min/max, offset half their gap.
pub fn bound_members(members: &[&[f64]]) -> Result<Hypercube> {
    let Some(first) = members.first() else {
        return Err(Error::Validation(
            "cannot bound an empty set of members".into(),
        ));
    };
    let d = first.len();
    let mut lo = first.to_vec();
    let mut hi = first.to_vec();
    for m in &members[1..] {
        if m.len() != d {
            return Err(Error::Dimension("member dimensions differ".into()));
        }
        for k in 0..d {
            lo[k] = lo[k].min(m[k]);
            hi[k] = hi[k].max(m[k]);
        }
    }
    let center = lo.iter().zip(&hi).map(|(l, h)| (h + l) / 2.0).collect();
    let offset = lo.iter().zip(&hi).map(|(l, h)| (h - l) / 2.0).collect();
    Hypercube::new(center, offset)
}

/// Projection weights for the geometric composer. The offset projection is
/// stored as a free matrix and mapped through element-wise softplus at use
/// time, keeping the effective weights non-negative under unconstrained
/// gradient steps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeometricComposerParams {
    pub w_center: Tensor,
    pub w_offset_raw: Tensor,
}

impl GeometricComposerParams {
    /// Identity projections: composing reproduces the bounding cube.
    pub fn identity(d: usize) -> GeometricComposerParams {
        GeometricComposerParams {
            w_center: Tensor::identity(d),
            w_offset_raw: Tensor::diag_fill(d, softplus_inverse(1.0), RAW_NEAR_ZERO),
        }
    }

    pub fn init(d: usize, rng: &mut impl Rng) -> GeometricComposerParams {
        let mut p = GeometricComposerParams::identity(d);
        let scale = 0.05 / (d as f64).sqrt();
        for v in &mut p.w_center.data {
            *v += rng.gen_range(-scale..=scale);
        }
        for v in &mut p.w_offset_raw.data {
            *v += rng.gen_range(-scale..=scale);
        }
        p
    }

    /// `softplus(w_offset_raw)` element-wise; every entry is positive.
    pub fn effective_w_offset(&self) -> Tensor {
        let mut t = self.w_offset_raw.clone();
        for v in &mut t.data {
            *v = softplus(*v);
        }
        t
    }
}

/// Raw value whose softplus is negligible (~1e-18); used for off-diagonal
/// entries of the identity-like offset projection.
const RAW_NEAR_ZERO: f64 = -40.0;

/// Geometric bounding followed by projection: `(W_c c~, softplus(W_o) o~)`.
pub fn geometric_compose(
    members: &[&[f64]],
    params: &GeometricComposerParams,
) -> Result<Hypercube> {
    let bounded = bound_members(members)?;
    let center = params.w_center.matvec(&bounded.center)?;
    let offset = params.effective_w_offset().matvec(&bounded.offset)?;
    Hypercube::new(center, offset)
}

/// Parameters of the attentive composer: a learnable query with key/value
/// projections, followed by center and offset projections.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentiveComposerParams {
    pub query: Vec<f64>,
    pub w_key: Tensor,
    pub w_value: Tensor,
    pub w_center: Tensor,
    pub w_offset: Tensor,
    pub b_offset: Vec<f64>,
}

impl AttentiveComposerParams {
    pub fn init(d: usize, rng: &mut impl Rng) -> AttentiveComposerParams {
        let scale = 0.1 / (d as f64).sqrt();
        let noisy_identity = |rng: &mut dyn rand::RngCore| {
            let mut t = Tensor::identity(d);
            for v in &mut t.data {
                *v += rng.gen_range(-scale..=scale);
            }
            t
        };
        AttentiveComposerParams {
            query: (0..d).map(|_| rng.gen_range(-scale..=scale)).collect(),
            w_key: noisy_identity(rng),
            w_value: noisy_identity(rng),
            w_center: noisy_identity(rng),
            w_offset: Tensor::uniform(d, d, scale, rng),
            b_offset: vec![0.1; d],
        }
    }
}

/// Attentive fusion and projection: members are attended against a learned
/// query, the attended summary is projected into the center, and the offset
/// is recovered from the same summary through a rectified projection.
pub fn attentive_compose(
    members: &[&[f64]],
    params: &AttentiveComposerParams,
) -> Result<Hypercube> {
    if members.is_empty() {
        return Err(Error::Validation(
            "cannot compose an empty set of members".into(),
        ));
    }
    let d = members[0].len();
    let mut scores = Vec::with_capacity(members.len());
    for m in members {
        if m.len() != d {
            return Err(Error::Dimension("member dimensions differ".into()));
        }
        let key = params.w_key.matvec(m)?;
        let s: f64 = key.iter().zip(&params.query).map(|(k, q)| k * q).sum();
        scores.push(s / (d as f64).sqrt());
    }
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let z: f64 = exps.iter().sum();

    let mut summary = vec![0.0; d];
    for (m, e) in members.iter().zip(&exps) {
        let value = params.w_value.matvec(m)?;
        let w = e / z;
        for k in 0..d {
            summary[k] += w * value[k];
        }
    }
    let center = params.w_center.matvec(&summary)?;
    let mut offset = params.w_offset.matvec(&summary)?;
    for (o, b) in offset.iter_mut().zip(&params.b_offset) {
        *o = (*o + b).max(0.0);
    }
    Hypercube::new(center, offset)
}

/// Combined outer/inner item-to-group distance `f_out + gamma * f_in`.
pub fn distance_point_to_cube(cube: &Hypercube, point: &[f64], gamma: f64) -> f64 {
    debug_assert_eq!(cube.dim(), point.len());
    debug_assert!(gamma >= 0.0);
    let mut f_out = 0.0;
    let mut f_in = 0.0;
    for k in 0..cube.dim() {
        let lo = cube.center[k] - cube.offset[k];
        let hi = cube.center[k] + cube.offset[k];
        let outside = (point[k] - hi).max(0.0) + (lo - point[k]).max(0.0);
        f_out += outside * outside;
        let anchor = point[k].clamp(lo, hi);
        let inner = cube.center[k] - anchor;
        f_in += inner * inner;
    }
    f_out + gamma * f_in
}

/// A 3-layer d->d perceptron with rectified hidden activations and a linear
/// output layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub weights: [Tensor; 3],
    pub biases: [Vec<f64>; 3],
}

impl Mlp {
    pub fn init(d: usize, rng: &mut impl Rng) -> Mlp {
        let scale = (6.0 / (2 * d) as f64).sqrt();
        Mlp {
            weights: [
                Tensor::uniform(d, d, scale, rng),
                Tensor::uniform(d, d, scale, rng),
                Tensor::uniform(d, d, scale, rng),
            ],
            biases: [vec![0.0; d], vec![0.0; d], vec![0.0; d]],
        }
    }

    pub fn zeroed(d: usize) -> Mlp {
        Mlp {
            weights: [Tensor::zeros(d, d), Tensor::zeros(d, d), Tensor::zeros(d, d)],
            biases: [vec![0.0; d], vec![0.0; d], vec![0.0; d]],
        }
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut h = x.to_vec();
        for layer in 0..3 {
            let mut out = self.weights[layer].matvec(&h)?;
            for (o, b) in out.iter_mut().zip(&self.biases[layer]) {
                *o += b;
                if layer < 2 {
                    *o = o.max(0.0);
                }
            }
            h = out;
        }
        Ok(h)
    }
}

/// The two intersection networks: `center_net` scores the two centers for
/// the element-wise attention, `offset_net` drives the sigmoid shrink factor
/// applied to the element-wise minimum of the offsets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntersectionParams {
    pub center_net: Mlp,
    pub offset_net: Mlp,
}

impl IntersectionParams {
    pub fn init(d: usize, rng: &mut impl Rng) -> IntersectionParams {
        IntersectionParams {
            center_net: Mlp::init(d, rng),
            offset_net: Mlp::init(d, rng),
        }
    }

    /// All-zero networks: both gates become 1/2 everywhere. Handy in tests.
    pub fn zeroed(d: usize) -> IntersectionParams {
        IntersectionParams {
            center_net: Mlp::zeroed(d),
            offset_net: Mlp::zeroed(d),
        }
    }
}

/// Neural relaxed intersection of two hypercubes.
///
/// The center is an element-wise two-way softmax combination of the input
/// centers (computed as a sigmoid of the score difference, which is the same
/// value without overflow); the offset is `min(o_a, o_b)` scaled by a
/// sigmoid, hence strictly smaller wherever the minimum is positive.
pub fn intersect(a: &Hypercube, b: &Hypercube, params: &IntersectionParams) -> Result<Hypercube> {
    if a.dim() != b.dim() {
        return Err(Error::Dimension("intersecting cubes of different dims".into()));
    }
    let score_a = params.center_net.forward(&a.center)?;
    let score_b = params.center_net.forward(&b.center)?;
    let center: Vec<f64> = (0..a.dim())
        .map(|k| {
            let gate = sigmoid(score_a[k] - score_b[k]);
            gate * a.center[k] + (1.0 - gate) * b.center[k]
        })
        .collect();

    let summed: Vec<f64> = a.offset.iter().zip(&b.offset).map(|(x, y)| x + y).collect();
    let shrink = params.offset_net.forward(&summed)?;
    let offset: Vec<f64> = (0..a.dim())
        .map(|k| a.offset[k].min(b.offset[k]) * sigmoid(shrink[k]))
        .collect();
    Hypercube::new(center, offset)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn bound_two_points() {
        let cube = bound_members(&[&[0.0, 0.0], &[2.0, 4.0]]).unwrap();
        assert_eq!(cube.center, vec![1.0, 2.0]);
        assert_eq!(cube.offset, vec![1.0, 2.0]);
    }

    #[test]
    fn bound_single_member_is_a_point_cube() {
        let cube = bound_members(&[&[0.3, -1.0, 2.0]]).unwrap();
        assert_eq!(cube.center, vec![0.3, -1.0, 2.0]);
        assert_eq!(cube.offset, vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn bound_is_translation_equivariant() {
        let a = bound_members(&[&[0.0, 1.0], &[2.0, -1.0], &[1.0, 0.5]]).unwrap();
        let t = [10.0, -3.0];
        let shifted: Vec<Vec<f64>> = [[0.0, 1.0], [2.0, -1.0], [1.0, 0.5]]
            .iter()
            .map(|m| m.iter().zip(&t).map(|(x, dt)| x + dt).collect())
            .collect();
        let refs: Vec<&[f64]> = shifted.iter().map(|v| v.as_slice()).collect();
        let b = bound_members(&refs).unwrap();
        assert_eq!(b.offset, a.offset);
        for k in 0..2 {
            assert_relative_eq!(b.center[k], a.center[k] + t[k]);
        }
    }

    #[test]
    fn bound_empty_is_an_error() {
        assert!(bound_members(&[]).is_err());
    }

    #[test]
    fn geometric_identity_projection_reproduces_bound() {
        let params = GeometricComposerParams::identity(2);
        let members: [&[f64]; 2] = [&[0.0, 0.0], &[2.0, 4.0]];
        let composed = geometric_compose(&members, &params).unwrap();
        let bounded = bound_members(&members).unwrap();
        for k in 0..2 {
            assert_relative_eq!(composed.center[k], bounded.center[k], max_relative = 1e-12);
            assert_relative_eq!(composed.offset[k], bounded.offset[k], max_relative = 1e-12);
        }
    }

    #[test]
    fn geometric_scaled_center() {
        let mut params = GeometricComposerParams::identity(2);
        params.w_center.scale_in_place(2.0);
        let members: [&[f64]; 2] = [&[0.0, 0.0], &[2.0, 4.0]];
        let composed = geometric_compose(&members, &params).unwrap();
        for (got, want) in composed.center.iter().zip([2.0, 4.0]) {
            assert_relative_eq!(*got, want, max_relative = 1e-12);
        }
        for (got, want) in composed.offset.iter().zip([1.0, 2.0]) {
            assert_relative_eq!(*got, want, max_relative = 1e-12);
        }
    }

    #[test]
    fn geometric_single_member_has_zero_offset() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let params = GeometricComposerParams::init(3, &mut rng);
        let composed = geometric_compose(&[&[0.4, -0.2, 0.9]], &params).unwrap();
        for &o in &composed.offset {
            assert_eq!(o, 0.0);
        }
    }

    fn singleton_attentive_params(d: usize) -> AttentiveComposerParams {
        AttentiveComposerParams {
            query: vec![0.0; d],
            w_key: Tensor::identity(d),
            w_value: Tensor::identity(d),
            w_center: Tensor::identity(d),
            w_offset: Tensor::zeros(d, d),
            b_offset: vec![0.0; d],
        }
    }

    #[test]
    fn attentive_single_member_identity() {
        let params = singleton_attentive_params(2);
        let cube = attentive_compose(&[&[0.7, -0.4]], &params).unwrap();
        assert_eq!(cube.center, vec![0.7, -0.4]);
        assert_eq!(cube.offset, vec![0.0, 0.0]);
    }

    #[test]
    fn attentive_identical_members_match_singleton() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let params = AttentiveComposerParams::init(2, &mut rng);
        let single = attentive_compose(&[&[0.3, 0.8]], &params).unwrap();
        let double = attentive_compose(&[&[0.3, 0.8], &[0.3, 0.8]], &params).unwrap();
        for k in 0..2 {
            assert_relative_eq!(single.center[k], double.center[k], max_relative = 1e-12);
            assert_relative_eq!(single.offset[k], double.offset[k], max_relative = 1e-12);
        }
    }

    /// Straight-line re-evaluation of the attentive composer for two members
    /// in d=2 with hand-set parameters.
    #[test]
    fn attentive_matches_step_by_step_oracle() {
        let params = AttentiveComposerParams {
            query: vec![1.0, -0.5],
            w_key: Tensor::from_rows(vec![vec![0.5, 0.0], vec![0.2, 1.0]]),
            w_value: Tensor::from_rows(vec![vec![1.0, 0.5], vec![0.0, 1.0]]),
            w_center: Tensor::from_rows(vec![vec![2.0, 0.0], vec![0.0, 1.0]]),
            w_offset: Tensor::from_rows(vec![vec![1.0, 1.0], vec![-1.0, 0.5]]),
            b_offset: vec![0.1, -0.2],
        };
        let u1 = [0.6, -0.2];
        let u2 = [-0.3, 0.4];

        // Scores: (W_K u)^T q / sqrt(2).
        let k1 = [0.5 * 0.6, 0.2 * 0.6 + 1.0 * (-0.2)];
        let k2 = [0.5 * (-0.3), 0.2 * (-0.3) + 1.0 * 0.4];
        let s1 = (k1[0] * 1.0 + k1[1] * (-0.5)) / 2f64.sqrt();
        let s2 = (k2[0] * 1.0 + k2[1] * (-0.5)) / 2f64.sqrt();
        let z = s1.exp() + s2.exp();
        let (a1, a2) = (s1.exp() / z, s2.exp() / z);
        let v1 = [1.0 * 0.6 + 0.5 * (-0.2), -0.2];
        let v2 = [1.0 * (-0.3) + 0.5 * 0.4, 0.4];
        let summary = [a1 * v1[0] + a2 * v2[0], a1 * v1[1] + a2 * v2[1]];
        let want_center = [2.0 * summary[0], summary[1]];
        let raw_offset = [
            summary[0] + summary[1] + 0.1,
            -summary[0] + 0.5 * summary[1] - 0.2,
        ];
        let want_offset = [raw_offset[0].max(0.0), raw_offset[1].max(0.0)];

        let cube = attentive_compose(&[&u1, &u2], &params).unwrap();
        for k in 0..2 {
            assert_relative_eq!(cube.center[k], want_center[k], max_relative = 1e-12);
            assert_relative_eq!(cube.offset[k], want_offset[k], max_relative = 1e-12);
        }
    }

    #[test]
    fn corners_direct_arithmetic() {
        let cube = Hypercube::new(vec![1.0, 2.0], vec![1.0, 2.0]).unwrap();
        let (lo, hi) = cube.corners();
        assert_eq!(lo, vec![0.0, 0.0]);
        assert_eq!(hi, vec![2.0, 4.0]);
    }

    #[test]
    fn corners_of_point_cube_coincide() {
        let cube = Hypercube::new(vec![0.5, -0.5], vec![0.0, 0.0]).unwrap();
        let (lo, hi) = cube.corners();
        assert_eq!(lo, cube.center);
        assert_eq!(hi, cube.center);
    }

    #[test]
    fn bound_corners_are_elementwise_min_max() {
        let members: [&[f64]; 3] = [&[0.0, 5.0], &[2.0, 1.0], &[1.0, 3.0]];
        let cube = bound_members(&members).unwrap();
        let (lo, hi) = cube.corners();
        assert_eq!(lo, vec![0.0, 1.0]);
        assert_eq!(hi, vec![2.0, 5.0]);
    }

    #[test]
    fn distance_inside_reduces_to_center_distance() {
        let cube = Hypercube::new(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap();
        let gamma = 0.7;
        let d = distance_point_to_cube(&cube, &[0.5, 0.0], gamma);
        assert_relative_eq!(d, 0.25 * gamma, max_relative = 1e-12);
    }

    #[test]
    fn distance_outside_hand_worked() {
        let cube = Hypercube::new(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap();
        let d = distance_point_to_cube(&cube, &[3.0, 0.0], 0.3);
        // anchor (1, 0): f_out = 4, f_in = 1.
        assert_relative_eq!(d, 4.3, max_relative = 1e-12);
    }

    #[test]
    fn distance_at_center_is_zero() {
        let cube = Hypercube::new(vec![0.2, -0.8, 1.0], vec![0.5, 0.0, 2.0]).unwrap();
        assert_eq!(distance_point_to_cube(&cube, &[0.2, -0.8, 1.0], 0.9), 0.0);
    }

    #[test]
    fn intersect_equal_cubes_keeps_center() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let params = IntersectionParams::init(2, &mut rng);
        let cube = Hypercube::new(vec![0.5, -1.0], vec![0.3, 0.7]).unwrap();
        let inter = intersect(&cube, &cube, &params).unwrap();
        for k in 0..2 {
            assert_relative_eq!(inter.center[k], cube.center[k], max_relative = 1e-12);
            assert!(inter.offset[k] <= cube.offset[k]);
        }
    }

    #[test]
    fn intersect_center_is_a_convex_combination() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            let params = IntersectionParams::init(3, &mut rng);
            let a = Hypercube::new(
                (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect(),
                (0..3).map(|_| rng.gen_range(0.0..1.5)).collect(),
            )
            .unwrap();
            let b = Hypercube::new(
                (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect(),
                (0..3).map(|_| rng.gen_range(0.0..1.5)).collect(),
            )
            .unwrap();
            let inter = intersect(&a, &b, &params).unwrap();
            for k in 0..3 {
                let lo = a.center[k].min(b.center[k]);
                let hi = a.center[k].max(b.center[k]);
                assert!(inter.center[k] >= lo - 1e-12 && inter.center[k] <= hi + 1e-12);
                assert!(inter.offset[k] <= a.offset[k].min(b.offset[k]));
            }
        }
    }

    #[test]
    fn intersect_with_zero_nets_hand_worked() {
        let params = IntersectionParams::zeroed(2);
        let a = Hypercube::new(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap();
        let b = Hypercube::new(vec![2.0, 2.0], vec![3.0, 1.0]).unwrap();
        let inter = intersect(&a, &b, &params).unwrap();
        assert_eq!(inter.center, vec![1.0, 1.0]);
        assert_eq!(inter.offset, vec![0.5, 0.5]);
    }

    /// Shrinking any offset coordinate of the bounding cube excludes a
    /// member placed on that boundary.
    #[test]
    fn bound_is_minimal() {
        let members: [&[f64]; 2] = [&[-1.0, 0.0], &[1.0, 2.0]];
        let cube = bound_members(&members).unwrap();
        for k in 0..2 {
            for eps in [1e-9, 1e-3, 0.5] {
                let mut shrunk = cube.clone();
                shrunk.offset[k] -= eps;
                if shrunk.offset[k] < 0.0 {
                    continue;
                }
                assert!(
                    members.iter().any(|m| !shrunk.contains(m)),
                    "shrinking dim {k} by {eps} excluded nobody"
                );
            }
        }
    }

    proptest! {
        /// f_out = 0 exactly when the point is inside or on the surface.
        #[test]
        fn outer_distance_vanishes_iff_contained(
            center in proptest::collection::vec(-3.0f64..3.0, 1..8),
            offs in proptest::collection::vec(0.0f64..2.0, 1..8),
            point in proptest::collection::vec(-6.0f64..6.0, 1..8),
        ) {
            let d = center.len().min(offs.len()).min(point.len());
            let cube = Hypercube::new(center[..d].to_vec(), offs[..d].to_vec()).unwrap();
            let p = &point[..d];
            let f_out = distance_point_to_cube(&cube, p, 0.0);
            prop_assert_eq!(f_out == 0.0, cube.contains(p));
        }

        /// Every construction path yields a non-negative offset.
        #[test]
        fn offsets_stay_non_negative(seed in 0u64..5000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let d = 3;
            let members: Vec<Vec<f64>> = (0..rng.gen_range(1..5))
                .map(|_| (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect())
                .collect();
            let refs: Vec<&[f64]> = members.iter().map(|v| v.as_slice()).collect();
            let geo = GeometricComposerParams::init(d, &mut rng);
            let att = AttentiveComposerParams::init(d, &mut rng);
            let inter = IntersectionParams::init(d, &mut rng);
            let c1 = bound_members(&refs).unwrap();
            let c2 = geometric_compose(&refs, &geo).unwrap();
            let c3 = attentive_compose(&refs, &att).unwrap();
            let c4 = intersect(&c2, &c3, &inter).unwrap();
            for cube in [c1, c2, c3, c4] {
                prop_assert!(cube.offset.iter().all(|&o| o >= 0.0));
            }
        }
    }
}
