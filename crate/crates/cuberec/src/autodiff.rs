//! Minimal reverse-mode automatic differentiation over vector-valued nodes.
//!
//! Each node holds a flat `Vec<f64>`; scalars are length-1 nodes and d x d
//! matrices are length d*d nodes consumed by [`Tape::matvec`]. The op set is
//! exactly what the composers, the intersection networks, and the
//! point-to-hypercube distance need. Values are computed eagerly while the
//! graph is built; [`Tape::backward`] walks the nodes once in reverse.
//!
//! Subgradient convention at kinks (relu, element-wise min/max): the
//! gradient flows to the attaining argument, ties broken toward the first
//! operand, and `relu'(0) = 0`.

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct NodeId(usize);

enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Hadamard(NodeId, NodeId),
    Scale(NodeId, f64),
    AddConst(NodeId),
    Relu(NodeId),
    Softplus(NodeId),
    Sigmoid(NodeId),
    /// Element-wise minimum over >= 1 inputs of equal length.
    ElemMin(Vec<NodeId>),
    ElemMax(Vec<NodeId>),
    /// `w` is a flattened rows x cols matrix, `x` a length-cols vector.
    MatVec {
        w: NodeId,
        x: NodeId,
        rows: usize,
        cols: usize,
    },
    Dot(NodeId, NodeId),
    SumSq(NodeId),
    Softmax(NodeId),
    /// Scalar per pair: `out[k] = dot(a_k, b_k)`.
    DotStack(Vec<(NodeId, NodeId)>),
    /// `out = sum_k weights[k] * terms[k]`.
    WeightedSum {
        weights: NodeId,
        terms: Vec<NodeId>,
    },
    /// Element-wise product with a constant mask (dropout).
    MulMask(NodeId, Vec<f64>),
    /// Element-wise sum of equal-length nodes.
    SumList(Vec<NodeId>),
}

struct Node {
    value: Vec<f64>,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        &self.nodes[id.0].value
    }

    pub fn scalar(&self, id: NodeId) -> f64 {
        debug_assert_eq!(self.nodes[id.0].value.len(), 1);
        self.nodes[id.0].value[0]
    }

    fn push(&mut self, value: Vec<f64>, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Vec<f64>) -> NodeId {
        self.push(value, Op::Leaf)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = zip_with(self.value(a), self.value(b), |x, y| x + y);
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = zip_with(self.value(a), self.value(b), |x, y| x - y);
        self.push(v, Op::Sub(a, b))
    }

    pub fn hadamard(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = zip_with(self.value(a), self.value(b), |x, y| x * y);
        self.push(v, Op::Hadamard(a, b))
    }

    pub fn scale(&mut self, a: NodeId, k: f64) -> NodeId {
        let v = self.value(a).iter().map(|x| x * k).collect();
        self.push(v, Op::Scale(a, k))
    }

    pub fn add_const(&mut self, a: NodeId, k: f64) -> NodeId {
        let v = self.value(a).iter().map(|x| x + k).collect();
        self.push(v, Op::AddConst(a))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).iter().map(|x| x.max(0.0)).collect();
        self.push(v, Op::Relu(a))
    }

    pub fn softplus(&mut self, a: NodeId) -> NodeId {
        let v = self
            .value(a)
            .iter()
            .map(|&x| crate::tensor::softplus(x))
            .collect();
        self.push(v, Op::Softplus(a))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let v = self
            .value(a)
            .iter()
            .map(|&x| crate::tensor::sigmoid(x))
            .collect();
        self.push(v, Op::Sigmoid(a))
    }

    pub fn elem_min(&mut self, inputs: Vec<NodeId>) -> NodeId {
        let v = self.elem_extreme(&inputs, |a, b| a < b);
        self.push(v, Op::ElemMin(inputs))
    }

    pub fn elem_max(&mut self, inputs: Vec<NodeId>) -> NodeId {
        let v = self.elem_extreme(&inputs, |a, b| a > b);
        self.push(v, Op::ElemMax(inputs))
    }

    fn elem_extreme(&self, inputs: &[NodeId], better: fn(f64, f64) -> bool) -> Vec<f64> {
        assert!(!inputs.is_empty());
        let mut out = self.value(inputs[0]).to_vec();
        for &id in &inputs[1..] {
            for (o, &x) in out.iter_mut().zip(self.value(id)) {
                if better(x, *o) {
                    *o = x;
                }
            }
        }
        out
    }

    pub fn matvec(&mut self, w: NodeId, x: NodeId, rows: usize, cols: usize) -> NodeId {
        let wv = self.value(w);
        let xv = self.value(x);
        assert_eq!(wv.len(), rows * cols);
        assert_eq!(xv.len(), cols);
        let mut out = vec![0.0; rows];
        for r in 0..rows {
            let row = &wv[r * cols..(r + 1) * cols];
            out[r] = row.iter().zip(xv).map(|(a, b)| a * b).sum();
        }
        self.push(out, Op::MatVec { w, x, rows, cols })
    }

    pub fn dot(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v: f64 = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x * y).sum();
        self.push(vec![v], Op::Dot(a, b))
    }

    pub fn sum_sq(&mut self, a: NodeId) -> NodeId {
        let v: f64 = self.value(a).iter().map(|x| x * x).sum();
        self.push(vec![v], Op::SumSq(a))
    }

    pub fn softmax(&mut self, a: NodeId) -> NodeId {
        let xs = self.value(a);
        let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = xs.iter().map(|x| (x - m).exp()).collect();
        let z: f64 = exps.iter().sum();
        let v = exps.iter().map(|e| e / z).collect();
        self.push(v, Op::Softmax(a))
    }

    pub fn dot_stack(&mut self, pairs: Vec<(NodeId, NodeId)>) -> NodeId {
        let v = pairs
            .iter()
            .map(|&(a, b)| {
                self.value(a)
                    .iter()
                    .zip(self.value(b))
                    .map(|(x, y)| x * y)
                    .sum()
            })
            .collect();
        self.push(v, Op::DotStack(pairs))
    }

    pub fn weighted_sum(&mut self, weights: NodeId, terms: Vec<NodeId>) -> NodeId {
        let ws = self.value(weights);
        assert_eq!(ws.len(), terms.len());
        let dim = self.value(terms[0]).len();
        let mut out = vec![0.0; dim];
        for (k, &t) in terms.iter().enumerate() {
            let w = ws[k];
            for (o, &x) in out.iter_mut().zip(self.value(t)) {
                *o += w * x;
            }
        }
        self.push(out, Op::WeightedSum { weights, terms })
    }

    pub fn mul_mask(&mut self, a: NodeId, mask: Vec<f64>) -> NodeId {
        let v = zip_with(self.value(a), &mask, |x, m| x * m);
        self.push(v, Op::MulMask(a, mask))
    }

    pub fn sum_list(&mut self, terms: Vec<NodeId>) -> NodeId {
        assert!(!terms.is_empty());
        let mut out = self.value(terms[0]).to_vec();
        for &t in &terms[1..] {
            for (o, &x) in out.iter_mut().zip(self.value(t)) {
                *o += x;
            }
        }
        self.push(out, Op::SumList(terms))
    }

    /// Convenience: `1 - a` element-wise.
    pub fn one_minus(&mut self, a: NodeId) -> NodeId {
        let neg = self.scale(a, -1.0);
        self.add_const(neg, 1.0)
    }

    /// Reverse pass seeded with `d root / d root = 1`. The root must be a
    /// scalar node. Returns one gradient vector per node (zeros where a node
    /// does not influence the root).
    pub fn backward(&self, root: NodeId) -> Gradients {
        let mut grads: Vec<Vec<f64>> = self
            .nodes
            .iter()
            .map(|n| vec![0.0; n.value.len()])
            .collect();
        assert_eq!(self.nodes[root.0].value.len(), 1, "root must be scalar");
        grads[root.0][0] = 1.0;

        for i in (0..self.nodes.len()).rev() {
            if grads[i].iter().all(|&g| g == 0.0) {
                continue;
            }
            let g = std::mem::take(&mut grads[i]);
            match &self.nodes[i].op {
                Op::Leaf => {
                    grads[i] = g;
                    continue;
                }
                Op::Add(a, b) => {
                    axpy(&mut grads[a.0], &g, 1.0);
                    axpy(&mut grads[b.0], &g, 1.0);
                }
                Op::Sub(a, b) => {
                    axpy(&mut grads[a.0], &g, 1.0);
                    axpy(&mut grads[b.0], &g, -1.0);
                }
                Op::Hadamard(a, b) => {
                    for k in 0..g.len() {
                        grads[a.0][k] += g[k] * self.nodes[b.0].value[k];
                        grads[b.0][k] += g[k] * self.nodes[a.0].value[k];
                    }
                }
                Op::Scale(a, k) => axpy(&mut grads[a.0], &g, *k),
                Op::AddConst(a) => axpy(&mut grads[a.0], &g, 1.0),
                Op::Relu(a) => {
                    for k in 0..g.len() {
                        if self.nodes[a.0].value[k] > 0.0 {
                            grads[a.0][k] += g[k];
                        }
                    }
                }
                Op::Softplus(a) => {
                    for k in 0..g.len() {
                        grads[a.0][k] += g[k] * crate::tensor::sigmoid(self.nodes[a.0].value[k]);
                    }
                }
                Op::Sigmoid(a) => {
                    for k in 0..g.len() {
                        let s = self.nodes[i].value[k];
                        grads[a.0][k] += g[k] * s * (1.0 - s);
                    }
                }
                Op::ElemMin(inputs) => self.extreme_backward(inputs, i, &g, &mut grads, |a, b| a < b),
                Op::ElemMax(inputs) => self.extreme_backward(inputs, i, &g, &mut grads, |a, b| a > b),
                Op::MatVec { w, x, rows, cols } => {
                    let wv = &self.nodes[w.0].value;
                    let xv = &self.nodes[x.0].value;
                    for r in 0..*rows {
                        let gr = g[r];
                        if gr == 0.0 {
                            continue;
                        }
                        for c in 0..*cols {
                            grads[w.0][r * cols + c] += gr * xv[c];
                            grads[x.0][c] += gr * wv[r * cols + c];
                        }
                    }
                }
                Op::Dot(a, b) => {
                    let g0 = g[0];
                    for k in 0..self.nodes[a.0].value.len() {
                        grads[a.0][k] += g0 * self.nodes[b.0].value[k];
                        grads[b.0][k] += g0 * self.nodes[a.0].value[k];
                    }
                }
                Op::SumSq(a) => {
                    let g0 = g[0];
                    for k in 0..self.nodes[a.0].value.len() {
                        grads[a.0][k] += 2.0 * g0 * self.nodes[a.0].value[k];
                    }
                }
                Op::Softmax(a) => {
                    let y = &self.nodes[i].value;
                    let dot: f64 = g.iter().zip(y).map(|(gk, yk)| gk * yk).sum();
                    for k in 0..g.len() {
                        grads[a.0][k] += y[k] * (g[k] - dot);
                    }
                }
                Op::DotStack(pairs) => {
                    for (k, &(a, b)) in pairs.iter().enumerate() {
                        let gk = g[k];
                        if gk == 0.0 {
                            continue;
                        }
                        for j in 0..self.nodes[a.0].value.len() {
                            grads[a.0][j] += gk * self.nodes[b.0].value[j];
                            grads[b.0][j] += gk * self.nodes[a.0].value[j];
                        }
                    }
                }
                Op::WeightedSum { weights, terms } => {
                    let ws = self.nodes[weights.0].value.clone();
                    for (k, &t) in terms.iter().enumerate() {
                        let tv = &self.nodes[t.0].value;
                        let mut acc = 0.0;
                        for j in 0..g.len() {
                            acc += g[j] * tv[j];
                            grads[t.0][j] += ws[k] * g[j];
                        }
                        grads[weights.0][k] += acc;
                    }
                }
                Op::MulMask(a, mask) => {
                    for k in 0..g.len() {
                        grads[a.0][k] += g[k] * mask[k];
                    }
                }
                Op::SumList(terms) => {
                    for &t in terms {
                        axpy(&mut grads[t.0], &g, 1.0);
                    }
                }
            }
        }
        Gradients { grads }
    }

    fn extreme_backward(
        &self,
        inputs: &[NodeId],
        out: usize,
        g: &[f64],
        grads: &mut [Vec<f64>],
        better: fn(f64, f64) -> bool,
    ) {
        // Route each element's gradient to the first input attaining the
        // extreme value.
        for k in 0..g.len() {
            if g[k] == 0.0 {
                continue;
            }
            let mut best = inputs[0];
            let mut best_v = self.nodes[inputs[0].0].value[k];
            for &id in &inputs[1..] {
                let v = self.nodes[id.0].value[k];
                if better(v, best_v) {
                    best_v = v;
                    best = id;
                }
            }
            debug_assert_eq!(best_v, self.nodes[out].value[k]);
            grads[best.0][k] += g[k];
        }
    }

    /// Smallest distance to a non-differentiable point across the whole
    /// graph: |x| at relu inputs and the gap between the two closest inputs
    /// at element-wise min/max. Infinite when everything is smooth.
    pub fn min_kink_margin(&self) -> f64 {
        let mut margin = f64::INFINITY;
        for node in &self.nodes {
            match &node.op {
                Op::Relu(a) => {
                    for &x in &self.nodes[a.0].value {
                        margin = margin.min(x.abs());
                    }
                }
                Op::ElemMin(inputs) | Op::ElemMax(inputs) => {
                    if inputs.len() < 2 {
                        continue;
                    }
                    let len = node.value.len();
                    for k in 0..len {
                        let ext = node.value[k];
                        for &id in inputs {
                            let v = self.nodes[id.0].value[k];
                            if v != ext {
                                margin = margin.min((v - ext).abs());
                            }
                        }
                    }
                }
                _ => {}
            }
        }
        margin
    }
}

/// Per-node gradient buffers returned by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn of(&self, id: NodeId) -> &[f64] {
        &self.grads[id.0]
    }
}

fn zip_with(a: &[f64], b: &[f64], f: fn(f64, f64) -> f64) -> Vec<f64> {
    assert_eq!(a.len(), b.len(), "length mismatch in tape op");
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

fn axpy(dst: &mut [f64], src: &[f64], k: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += k * s;
    }
}
