//! Eager vector-level tape. Each builder method computes its output
//! immediately and records the op; `backward` replays the record in
//! reverse, accumulating adjoints. Both passes are generic over the
//! scalar type, so the same code path yields f64 gradients and, with
//! [`super::Dual`] inputs, directional second derivatives.

use super::{ssp, ssp_prime, Real};

pub type NodeId = usize;

/// Plain row-major f64 matrix, the storage type for parameters and
/// checkpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueBuffer {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl ValueBuffer {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "buffer shape mismatch");
        Self { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Named parameter tensors in deterministic (insertion) order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParameterSet {
    entries: Vec<(String, ValueBuffer)>,
}

impl ParameterSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: &str, buf: ValueBuffer) {
        assert!(
            self.get(name).is_none(),
            "duplicate parameter name '{name}'"
        );
        self.entries.push((name.to_string(), buf));
    }

    pub fn get(&self, name: &str) -> Option<&ValueBuffer> {
        self.entries
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, b)| b)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut ValueBuffer> {
        self.entries
            .iter_mut()
            .find(|(n, _)| n == name)
            .map(|(_, b)| b)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ValueBuffer)> {
        self.entries.iter().map(|(n, b)| (n.as_str(), b))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut ValueBuffer)> {
        self.entries.iter_mut().map(|(n, b)| (n.as_str(), &mut *b))
    }

    pub fn tensor_count(&self) -> usize {
        self.entries.len()
    }

    pub fn scalar_count(&self) -> usize {
        self.entries.iter().map(|(_, b)| b.len()).sum()
    }

    /// Same names and shapes, all-zero values.
    pub fn zeros_like(&self) -> Self {
        Self {
            entries: self
                .entries
                .iter()
                .map(|(n, b)| (n.clone(), ValueBuffer::zeros(b.rows, b.cols)))
                .collect(),
        }
    }
}

#[derive(Debug, Clone)]
enum Op {
    Input,
    Linear {
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
    },
    Ssp {
        x: NodeId,
    },
    Mul {
        a: NodeId,
        b: NodeId,
    },
    Add {
        a: NodeId,
        b: NodeId,
    },
    GatherRows {
        x: NodeId,
        idx: Vec<usize>,
    },
    ScatterAddRows {
        x: NodeId,
        idx: Vec<usize>,
    },
    EdgeLengths {
        pos: NodeId,
        edges: Vec<(usize, usize)>,
    },
    Rbf {
        d: NodeId,
        mu: NodeId,
        gamma: NodeId,
    },
    SumAll {
        x: NodeId,
    },
}

struct Node<S> {
    rows: usize,
    cols: usize,
    data: Vec<S>,
    op: Op,
}

/// Adjoints from one reverse pass, aligned with the graph's nodes.
pub struct Gradients<S> {
    adj: Vec<Vec<S>>,
}

impl<S: Real> Gradients<S> {
    pub fn wrt(&self, id: NodeId) -> &[S] {
        &self.adj[id]
    }
}

pub struct Graph<S: Real> {
    nodes: Vec<Node<S>>,
}

impl<S: Real> Default for Graph<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Real> Graph<S> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    fn push(&mut self, rows: usize, cols: usize, data: Vec<S>, op: Op) -> NodeId {
        assert_eq!(data.len(), rows * cols, "node shape mismatch");
        self.nodes.push(Node {
            rows,
            cols,
            data,
            op,
        });
        self.nodes.len() - 1
    }

    fn node(&self, id: NodeId) -> &Node<S> {
        &self.nodes[id]
    }

    pub fn shape(&self, id: NodeId) -> (usize, usize) {
        (self.node(id).rows, self.node(id).cols)
    }

    pub fn values(&self, id: NodeId) -> &[S] {
        &self.node(id).data
    }

    /// Scalar value of a 1x1 node.
    pub fn scalar(&self, id: NodeId) -> S {
        let n = self.node(id);
        assert_eq!(n.data.len(), 1, "scalar() on non-scalar node");
        n.data[0]
    }

    pub fn input(&mut self, rows: usize, cols: usize, data: Vec<S>) -> NodeId {
        self.push(rows, cols, data, Op::Input)
    }

    pub fn input_f64(&mut self, rows: usize, cols: usize, data: &[f64]) -> NodeId {
        let lifted = data.iter().map(|&v| S::from_f64(v)).collect();
        self.push(rows, cols, lifted, Op::Input)
    }

    pub fn input_buffer(&mut self, buf: &ValueBuffer) -> NodeId {
        self.input_f64(buf.rows, buf.cols, &buf.data)
    }

    /// y = x w (+ b broadcast over rows). x: [n, din], w: [din, dout], b: [1, dout].
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: Option<NodeId>) -> NodeId {
        let (n, din) = self.shape(x);
        let (wr, dout) = self.shape(w);
        assert_eq!(din, wr, "linear: inner dimensions disagree");
        if let Some(b) = b {
            assert_eq!(self.shape(b), (1, dout), "linear: bias shape");
        }
        let mut out = vec![S::zero(); n * dout];
        {
            let xv = &self.node(x).data;
            let wv = &self.node(w).data;
            for i in 0..n {
                for k in 0..din {
                    let xik = xv[i * din + k];
                    let wrow = &wv[k * dout..(k + 1) * dout];
                    let orow = &mut out[i * dout..(i + 1) * dout];
                    for j in 0..dout {
                        orow[j] = orow[j] + xik * wrow[j];
                    }
                }
            }
            if let Some(b) = b {
                let bv = &self.node(b).data;
                for i in 0..n {
                    for j in 0..dout {
                        out[i * dout + j] = out[i * dout + j] + bv[j];
                    }
                }
            }
        }
        self.push(n, dout, out, Op::Linear { x, w, b })
    }

    /// Elementwise shifted softplus.
    pub fn ssp(&mut self, x: NodeId) -> NodeId {
        let (r, c) = self.shape(x);
        let out = self.node(x).data.iter().map(|&v| ssp(v)).collect();
        self.push(r, c, out, Op::Ssp { x })
    }

    /// Elementwise product; shapes must match.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(self.shape(a), self.shape(b), "mul: shape mismatch");
        let (r, c) = self.shape(a);
        let out = self
            .node(a)
            .data
            .iter()
            .zip(&self.node(b).data)
            .map(|(&x, &y)| x * y)
            .collect();
        self.push(r, c, out, Op::Mul { a, b })
    }

    /// Elementwise sum; shapes must match.
    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(self.shape(a), self.shape(b), "add: shape mismatch");
        let (r, c) = self.shape(a);
        let out = self
            .node(a)
            .data
            .iter()
            .zip(&self.node(b).data)
            .map(|(&x, &y)| x + y)
            .collect();
        self.push(r, c, out, Op::Add { a, b })
    }

    /// out[i] = x[idx[i]] (rows).
    pub fn gather_rows(&mut self, x: NodeId, idx: &[usize]) -> NodeId {
        let (n, c) = self.shape(x);
        let mut out = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            assert!(i < n, "gather_rows: index out of range");
            out.extend_from_slice(&self.node(x).data[i * c..(i + 1) * c]);
        }
        self.push(
            idx.len(),
            c,
            out,
            Op::GatherRows {
                x,
                idx: idx.to_vec(),
            },
        )
    }

    /// out has `rows` rows; row idx[i] accumulates x[i]. Deterministic
    /// sequential accumulation in input order.
    pub fn scatter_add_rows(&mut self, x: NodeId, idx: &[usize], rows: usize) -> NodeId {
        let (n, c) = self.shape(x);
        assert_eq!(n, idx.len(), "scatter_add_rows: index count");
        let mut out = vec![S::zero(); rows * c];
        for (i, &dst) in idx.iter().enumerate() {
            assert!(dst < rows, "scatter_add_rows: index out of range");
            for j in 0..c {
                out[dst * c + j] = out[dst * c + j] + self.node(x).data[i * c + j];
            }
        }
        self.push(
            rows,
            c,
            out,
            Op::ScatterAddRows {
                x,
                idx: idx.to_vec(),
            },
        )
    }

    /// Euclidean length of pos[a] - pos[b] per edge; pos: [n, 3], out: [m, 1].
    pub fn edge_lengths(&mut self, pos: NodeId, edges: &[(usize, usize)]) -> NodeId {
        let (n, c) = self.shape(pos);
        assert_eq!(c, 3, "edge_lengths: positions must be [n, 3]");
        let mut out = Vec::with_capacity(edges.len());
        for &(a, b) in edges {
            assert!(a < n && b < n && a != b, "edge_lengths: bad edge ({a}, {b})");
            let p = &self.node(pos).data;
            let mut r2 = S::zero();
            for k in 0..3 {
                let d = p[a * 3 + k] - p[b * 3 + k];
                r2 = r2 + d * d;
            }
            assert!(r2.value() > 0.0, "edge_lengths: coincident atoms");
            out.push(r2.sqrt());
        }
        self.push(
            edges.len(),
            1,
            out,
            Op::EdgeLengths {
                pos,
                edges: edges.to_vec(),
            },
        )
    }

    /// Gaussian radial basis: out[i][k] = exp(-gamma[k] (d[i] - mu[k])^2).
    /// d: [m, 1], mu and gamma: [1, k].
    pub fn rbf(&mut self, d: NodeId, mu: NodeId, gamma: NodeId) -> NodeId {
        let (m, dc) = self.shape(d);
        assert_eq!(dc, 1, "rbf: distances must be [m, 1]");
        let (mr, k) = self.shape(mu);
        assert_eq!(mr, 1, "rbf: mu must be [1, k]");
        assert_eq!(self.shape(gamma), (1, k), "rbf: gamma shape");
        let mut out = Vec::with_capacity(m * k);
        for i in 0..m {
            let di = self.node(d).data[i];
            for j in 0..k {
                let mu_j = self.node(mu).data[j];
                let ga_j = self.node(gamma).data[j];
                let delta = di - mu_j;
                out.push((-(ga_j * delta * delta)).exp());
            }
        }
        self.push(m, k, out, Op::Rbf { d, mu, gamma })
    }

    /// Sum of all entries, [1, 1].
    pub fn sum_all(&mut self, x: NodeId) -> NodeId {
        let mut s = S::zero();
        for &v in &self.node(x).data {
            s = s + v;
        }
        self.push(1, 1, vec![s], Op::SumAll { x })
    }

    /// Reverse pass from a scalar output node.
    pub fn backward(&self, out: NodeId) -> Gradients<S> {
        assert_eq!(
            self.node(out).data.len(),
            1,
            "backward: output must be scalar"
        );
        let mut adj: Vec<Vec<S>> = self
            .nodes
            .iter()
            .map(|n| vec![S::zero(); n.data.len()])
            .collect();
        adj[out][0] = S::one();
        for id in (0..=out).rev() {
            // Take this node's adjoint out to appease the borrow checker;
            // nothing downstream of `id` writes to it again.
            let ybar = std::mem::take(&mut adj[id]);
            let node = self.node(id);
            match &node.op {
                Op::Input => {}
                Op::Linear { x, w, b } => {
                    let (n, din) = self.shape(*x);
                    let dout = node.cols;
                    {
                        let wv = &self.node(*w).data;
                        let xbar = &mut adj[*x];
                        for i in 0..n {
                            for k in 0..din {
                                let mut s = S::zero();
                                for j in 0..dout {
                                    s = s + ybar[i * dout + j] * wv[k * dout + j];
                                }
                                xbar[i * din + k] = xbar[i * din + k] + s;
                            }
                        }
                    }
                    {
                        let xv = &self.node(*x).data;
                        let wbar = &mut adj[*w];
                        for k in 0..din {
                            for j in 0..dout {
                                let mut s = S::zero();
                                for i in 0..n {
                                    s = s + xv[i * din + k] * ybar[i * dout + j];
                                }
                                wbar[k * dout + j] = wbar[k * dout + j] + s;
                            }
                        }
                    }
                    if let Some(b) = b {
                        let bbar = &mut adj[*b];
                        for j in 0..dout {
                            let mut s = S::zero();
                            for i in 0..n {
                                s = s + ybar[i * dout + j];
                            }
                            bbar[j] = bbar[j] + s;
                        }
                    }
                }
                Op::Ssp { x } => {
                    let xv = &self.node(*x).data;
                    let xbar = &mut adj[*x];
                    for i in 0..xv.len() {
                        xbar[i] = xbar[i] + ybar[i] * ssp_prime(xv[i]);
                    }
                }
                Op::Mul { a, b } => {
                    {
                        let bv = &self.node(*b).data;
                        let abar = &mut adj[*a];
                        for i in 0..bv.len() {
                            abar[i] = abar[i] + ybar[i] * bv[i];
                        }
                    }
                    {
                        let av = &self.node(*a).data;
                        let bbar = &mut adj[*b];
                        for i in 0..av.len() {
                            bbar[i] = bbar[i] + ybar[i] * av[i];
                        }
                    }
                }
                Op::Add { a, b } => {
                    for (target, _) in [(*a, 0), (*b, 1)] {
                        let tbar = &mut adj[target];
                        for i in 0..ybar.len() {
                            tbar[i] = tbar[i] + ybar[i];
                        }
                    }
                }
                Op::GatherRows { x, idx } => {
                    let c = node.cols;
                    let xbar = &mut adj[*x];
                    for (i, &src) in idx.iter().enumerate() {
                        for j in 0..c {
                            xbar[src * c + j] = xbar[src * c + j] + ybar[i * c + j];
                        }
                    }
                }
                Op::ScatterAddRows { x, idx } => {
                    let c = node.cols;
                    let xbar = &mut adj[*x];
                    for (i, &dst) in idx.iter().enumerate() {
                        for j in 0..c {
                            xbar[i * c + j] = xbar[i * c + j] + ybar[dst * c + j];
                        }
                    }
                }
                Op::EdgeLengths { pos, edges } => {
                    let pv = &self.node(*pos).data;
                    let pbar = &mut adj[*pos];
                    for (e, &(a, b)) in edges.iter().enumerate() {
                        let r = node.data[e];
                        let g = ybar[e] / r;
                        for k in 0..3 {
                            let d = pv[a * 3 + k] - pv[b * 3 + k];
                            pbar[a * 3 + k] = pbar[a * 3 + k] + g * d;
                            pbar[b * 3 + k] = pbar[b * 3 + k] - g * d;
                        }
                    }
                }
                Op::Rbf { d, mu, gamma } => {
                    let (m, _) = self.shape(*d);
                    let k = node.cols;
                    let dv = self.node(*d).data.clone();
                    let muv = self.node(*mu).data.clone();
                    let gav = self.node(*gamma).data.clone();
                    for i in 0..m {
                        for j in 0..k {
                            let e = node.data[i * k + j];
                            let delta = dv[i] - muv[j];
                            let yb = ybar[i * k + j];
                            let two = S::from_f64(2.0);
                            adj[*d][i] = adj[*d][i] - yb * two * gav[j] * delta * e;
                            adj[*mu][j] = adj[*mu][j] + yb * two * gav[j] * delta * e;
                            adj[*gamma][j] = adj[*gamma][j] - yb * delta * delta * e;
                        }
                    }
                }
                Op::SumAll { x } => {
                    let xbar = &mut adj[*x];
                    for g in xbar.iter_mut() {
                        *g = *g + ybar[0];
                    }
                }
            }
            adj[id] = ybar;
        }
        Gradients { adj }
    }
}
