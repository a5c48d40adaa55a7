//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! Nodes are appended in evaluation order, so the tape index is already a
//! topological order and [`Graph::backward`] is a single reverse sweep.

use crate::error::{Error, Result};
use crate::numeric::dist::LN_SQRT_2PI;
use crate::numeric::ops::{self, sigmoid, softplus};
use crate::numeric::Tensor;

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Softplus(Var),
    Exp(Var),
    Relu(Var),
    Sum(Var),
    Column(Var, usize),
    Conv1d(Var, Var, Var),
    AvgPool(Var),
    Dense(Var, Var, Var),
    GaussianLogProb { x: Var, mu: Var, sigma: Var },
    LaplaceLogProb { x: Var, loc: f64, scale: f64 },
}

/// One value on the tape together with its accumulated gradient.
#[derive(Debug, Clone)]
pub struct DiffNode {
    value: Tensor,
    grad: Option<Tensor>,
    op: Op,
    requires_grad: bool,
}

impl DiffNode {
    pub fn value(&self) -> &Tensor {
        &self.value
    }

    /// Accumulated gradient, zero when the node was not reached.
    pub fn grad(&self) -> Tensor {
        self.grad
            .clone()
            .unwrap_or_else(|| Tensor::zeros(self.value.shape()))
    }
}

#[derive(Debug, Default, Clone)]
pub struct Graph {
    nodes: Vec<DiffNode>,
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf excluded from differentiation (data, fixed noise).
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn node(&self, v: Var) -> &DiffNode {
        &self.nodes[v.0]
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn grad(&self, v: Var) -> Tensor {
        self.nodes[v.0].grad()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(DiffNode {
            value,
            grad: None,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(value, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let value = self.value(a).map(|x| x * factor);
        let rg = self.needs(&[a]);
        self.push(value, Op::Scale(a, factor), rg)
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let value = self.value(a).map(softplus);
        let rg = self.needs(&[a]);
        self.push(value, Op::Softplus(a), rg)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::exp);
        let rg = self.needs(&[a]);
        self.push(value, Op::Exp(a), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = ops::relu(self.value(a));
        let rg = self.needs(&[a]);
        self.push(value, Op::Relu(a), rg)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).sum());
        let rg = self.needs(&[a]);
        self.push(value, Op::Sum(a), rg)
    }

    /// Column `j` of a `[B, U]` matrix as a `[B]` vector.
    pub fn column(&mut self, a: Var, j: usize) -> Result<Var> {
        let t = self.value(a);
        let [rows, cols] = *t.shape() else {
            return Err(Error::Dimension(format!(
                "column() needs a matrix, got {:?}",
                t.shape()
            )));
        };
        if j >= cols {
            return Err(Error::Dimension(format!(
                "column {j} out of range for {:?}",
                t.shape()
            )));
        }
        let value = Tensor::from_parts(
            vec![rows],
            (0..rows).map(|r| t.values()[r * cols + j]).collect(),
        );
        let rg = self.needs(&[a]);
        Ok(self.push(value, Op::Column(a, j), rg))
    }

    /// `mu + softplus(rho) * noise`, built from primitive nodes.
    pub fn reparam(&mut self, mu: Var, rho: Var, noise: Var) -> Result<Var> {
        let spread = self.softplus(rho);
        let scaled = self.mul(spread, noise)?;
        self.add(mu, scaled)
    }

    pub fn conv1d(&mut self, input: Var, kernels: Var, bias: Var) -> Result<Var> {
        let value = ops::conv1d_forward(self.value(input), self.value(kernels), self.value(bias))?;
        let rg = self.needs(&[input, kernels, bias]);
        Ok(self.push(value, Op::Conv1d(input, kernels, bias), rg))
    }

    pub fn global_avg_pool(&mut self, input: Var) -> Result<Var> {
        let value = ops::global_avg_pool(self.value(input))?;
        let rg = self.needs(&[input]);
        Ok(self.push(value, Op::AvgPool(input), rg))
    }

    pub fn dense(&mut self, input: Var, weights: Var, bias: Var) -> Result<Var> {
        let value = ops::dense_forward(self.value(input), self.value(weights), self.value(bias))?;
        let rg = self.needs(&[input, weights, bias]);
        Ok(self.push(value, Op::Dense(input, weights, bias), rg))
    }

    /// `sum_i log N(x_i; mu_i, sigma_i^2)` as a scalar node.
    pub fn gaussian_log_prob(&mut self, x: Var, mu: Var, sigma: Var) -> Result<Var> {
        let (xv, mv, sv) = (self.value(x), self.value(mu), self.value(sigma));
        xv.expect_same_shape(mv)?;
        xv.expect_same_shape(sv)?;
        let mut total = 0.0;
        for ((&x, &m), &s) in xv.values().iter().zip(mv.values()).zip(sv.values()) {
            let z = (x - m) / s;
            total += -LN_SQRT_2PI - s.ln() - 0.5 * z * z;
        }
        let rg = self.needs(&[x, mu, sigma]);
        Ok(self.push(
            Tensor::scalar(total),
            Op::GaussianLogProb { x, mu, sigma },
            rg,
        ))
    }

    /// `sum_i log Laplace(x_i; loc, scale)` as a scalar node.
    pub fn laplace_log_prob(&mut self, x: Var, loc: f64, scale: f64) -> Result<Var> {
        if !(scale > 0.0) {
            return Err(Error::Domain(format!(
                "laplace scale must be > 0, got {scale}"
            )));
        }
        let xv = self.value(x);
        let norm = (2.0 * scale).ln();
        let total: f64 = xv
            .values()
            .iter()
            .map(|&v| -norm - (v - loc).abs() / scale)
            .sum();
        let rg = self.needs(&[x]);
        Ok(self.push(
            Tensor::scalar(total),
            Op::LaplaceLogProb { x, loc, scale },
            rg,
        ))
    }

    /// Clears gradients so the graph can be differentiated again.
    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    /// Reverse sweep from a scalar `root`, accumulating into every upstream node.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if !self.nodes[root.0].value.is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar root, got shape {:?}",
                self.nodes[root.0].value.shape()
            )));
        }
        self.nodes[root.0].grad = Some(Tensor::from_parts(
            self.nodes[root.0].value.shape().to_vec(),
            vec![1.0],
        ));
        for i in (0..=root.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(upstream) = self.nodes[i].grad.take() else {
                continue;
            };
            let op = self.nodes[i].op.clone();
            self.propagate(i, &op, &upstream);
            self.nodes[i].grad = Some(upstream);
        }
        Ok(())
    }

    fn accumulate(&mut self, v: Var, g: Tensor) {
        let node = &mut self.nodes[v.0];
        if !node.requires_grad {
            return;
        }
        match node.grad.as_mut() {
            Some(acc) => acc.add_assign(&g),
            None => node.grad = Some(g),
        }
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&mut self, i: usize, op: &Op, up: &Tensor) {
        match *op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(a, up.clone());
                self.accumulate(b, up.clone());
            }
            Op::Mul(a, b) => {
                if self.rg(a) {
                    let g = zip(up, self.value(b), |u, y| u * y);
                    self.accumulate(a, g);
                }
                if self.rg(b) {
                    let g = zip(up, self.value(a), |u, x| u * x);
                    self.accumulate(b, g);
                }
            }
            Op::Scale(a, f) => self.accumulate(a, up.map(|u| u * f)),
            Op::Softplus(a) => {
                let g = zip(up, self.value(a), |u, x| u * sigmoid(x));
                self.accumulate(a, g);
            }
            Op::Exp(a) => {
                let g = zip(up, &self.nodes[i].value, |u, y| u * y);
                self.accumulate(a, g);
            }
            Op::Relu(a) => {
                let g = zip(up, self.value(a), |u, x| if x > 0.0 { u } else { 0.0 });
                self.accumulate(a, g);
            }
            Op::Sum(a) => {
                let g = Tensor::filled(self.value(a).shape(), up.item());
                self.accumulate(a, g);
            }
            Op::Column(a, j) => {
                let shape = self.value(a).shape().to_vec();
                let cols = shape[1];
                let mut g = vec![0.0; shape[0] * cols];
                for (r, &u) in up.values().iter().enumerate() {
                    g[r * cols + j] = u;
                }
                self.accumulate(a, Tensor::from_parts(shape, g));
            }
            Op::Conv1d(x, k, b) => {
                let (gx, gk, gb) =
                    ops::conv1d_backward(self.value(x), self.value(k), up, self.rg(x));
                if let Some(gx) = gx {
                    self.accumulate(x, gx);
                }
                self.accumulate(k, gk);
                self.accumulate(b, gb);
            }
            Op::AvgPool(x) => {
                let g = ops::global_avg_pool_backward(self.value(x).shape(), up);
                self.accumulate(x, g);
            }
            Op::Dense(x, w, b) => {
                let (gx, gw, gb) =
                    ops::dense_backward(self.value(x), self.value(w), up, self.rg(x));
                if let Some(gx) = gx {
                    self.accumulate(x, gx);
                }
                self.accumulate(w, gw);
                self.accumulate(b, gb);
            }
            Op::GaussianLogProb { x, mu, sigma } => {
                let u = up.item();
                let (xv, mv, sv) = (self.value(x), self.value(mu), self.value(sigma));
                let n = xv.len();
                let mut gx = Vec::with_capacity(n);
                let mut gs = Vec::with_capacity(n);
                for ((&xi, &mi), &si) in xv.values().iter().zip(mv.values()).zip(sv.values()) {
                    let z = (xi - mi) / si;
                    gx.push(-u * z / si);
                    gs.push(u * (z * z - 1.0) / si);
                }
                let shape = xv.shape().to_vec();
                let gmu: Vec<f64> = gx.iter().map(|g| -g).collect();
                self.accumulate(x, Tensor::from_parts(shape.clone(), gx));
                self.accumulate(mu, Tensor::from_parts(shape.clone(), gmu));
                self.accumulate(sigma, Tensor::from_parts(shape, gs));
            }
            Op::LaplaceLogProb { x, loc, scale } => {
                let u = up.item();
                let g = self.value(x).map(|v| {
                    let d = v - loc;
                    if d > 0.0 {
                        -u / scale
                    } else if d < 0.0 {
                        u / scale
                    } else {
                        0.0
                    }
                });
                self.accumulate(x, g);
            }
        }
    }
}

fn zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    a.zip_map(b, f).expect("shapes checked at construction")
}
