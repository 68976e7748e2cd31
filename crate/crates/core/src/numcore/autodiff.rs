//! Tape-based reverse-mode differentiation over the classifier op set.
//!
//! Nodes are appended in evaluation order, so a reverse sweep over the node
//! list is a valid topological order. Every value is held as a [`Tensor`];
//! matrix ops read their operands as 2-D.

use super::params::ParameterVector;
use super::tensor::{matmul_a_bt_into, matmul_at_b_into, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Slice { src: usize, offset: usize },
    MatMul(usize, usize),
    AddRow(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    Relu(usize),
    Tanh(usize),
    Square(usize),
    Sum(usize),
    Mean(usize),
    SoftmaxXent { logits: usize, labels: Vec<usize> },
    /// Forward-only node; differentiating through it is a capability error.
    Opaque { name: String, inputs: Vec<usize> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn same_shape(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!(
            "{what}: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// Row-wise softmax of a 2-D tensor, shifted by the row max.
pub fn softmax_rows(logits: &Tensor) -> Tensor {
    let (n, k) = (logits.rows(), logits.cols());
    let mut out = logits.clone();
    for i in 0..n {
        let row = &mut out.values_mut()[i * k..(i + 1) * k];
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            s += *v;
        }
        for v in row.iter_mut() {
            *v /= s;
        }
    }
    out
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.values()[0]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    /// Contiguous window of `src`, reshaped.
    pub fn slice(&mut self, src: Var, offset: usize, shape: &[usize]) -> Result<Var> {
        let len: usize = shape.iter().product();
        let s = &self.nodes[src.0].value;
        if offset + len > s.len() {
            return Err(Error::Shape(format!(
                "slice {offset}..{} of a tensor with {} elements",
                offset + len,
                s.len()
            )));
        }
        let t = Tensor::new(shape.to_vec(), s.values()[offset..offset + len].to_vec())?;
        Ok(self.push(t, Op::Slice { src: src.0, offset }))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.value(a).matmul(self.value(b))?;
        Ok(self.push(t, Op::MatMul(a.0, b.0)))
    }

    /// Adds a length-`m` vector to every row of an `(n, m)` matrix.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(bias));
        let m = av.cols();
        if bv.len() != m {
            return Err(Error::Shape(format!("bias of length {} for width {m}", bv.len())));
        }
        let mut out = Tensor::new(vec![av.rows(), m], av.values().to_vec())?;
        for i in 0..av.rows() {
            for (o, b) in out.row_mut(i).iter_mut().zip(bv.values()) {
                *o += b;
            }
        }
        Ok(self.push(out, Op::AddRow(a.0, bias.0)))
    }

    fn zip_with(&mut self, a: Var, b: Var, what: &str, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        same_shape(av, bv, what)?;
        let vals = av.values().iter().zip(bv.values()).map(|(x, y)| f(*x, *y)).collect();
        let t = Tensor::new(av.shape().to_vec(), vals)?;
        Ok(self.push(t, op))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, "add", |x, y| x + y, Op::Add(a.0, b.0))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, "sub", |x, y| x - y, Op::Sub(a.0, b.0))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, "mul", |x, y| x * y, Op::Mul(a.0, b.0))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let t = self.value(a).map(|v| v * c);
        self.push(t, Op::Scale(a.0, c))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let t = self.value(a).map(|v| v.max(0.0));
        self.push(t, Op::Relu(a.0))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let t = self.value(a).map(f64::tanh);
        self.push(t, Op::Tanh(a.0))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let t = self.value(a).map(|v| v * v);
        self.push(t, Op::Square(a.0))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        self.push(Tensor::vector(vec![s]), Op::Sum(a.0))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.is_empty() {
            return Err(Error::Domain("mean of an empty tensor".into()));
        }
        let s = t.sum() / t.len() as f64;
        Ok(self.push(Tensor::vector(vec![s]), Op::Mean(a.0)))
    }

    /// Mean softmax cross-entropy of `(n, K)` logits against integer labels.
    pub fn softmax_xent(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let z = self.value(logits);
        let (n, k) = (z.rows(), z.cols());
        if labels.len() != n || n == 0 {
            return Err(Error::Shape(format!("{} labels for {n} rows", labels.len())));
        }
        let mut total = 0.0;
        for (i, &y) in labels.iter().enumerate() {
            if y >= k {
                return Err(Error::Domain(format!("label {y} >= {k} classes")));
            }
            let row = z.row(i);
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            total += lse - row[y];
        }
        let t = Tensor::vector(vec![total / n as f64]);
        Ok(self.push(
            t,
            Op::SoftmaxXent {
                logits: logits.0,
                labels: labels.to_vec(),
            },
        ))
    }

    /// Records a node whose value was computed outside the supported op set.
    pub fn opaque(&mut self, name: &str, inputs: &[Var], value: Tensor) -> Var {
        self.push(
            value,
            Op::Opaque {
                name: name.to_string(),
                inputs: inputs.iter().map(|v| v.0).collect(),
            },
        )
    }

    /// Reverse sweep from a scalar root.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        if self.nodes[root.0].value.len() != 1 {
            return Err(Error::Shape("backward needs a scalar root".into()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; root.0 + 1];
        grads[root.0] = Some(vec![1.0]);
        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::Slice { src, offset } => {
                    let acc = slot(&mut grads, *src, &self.nodes);
                    for (a, gv) in acc[*offset..*offset + g.len()].iter_mut().zip(&g) {
                        *a += gv;
                    }
                }
                Op::MatMul(a, b) => {
                    let (av, bv) = (&self.nodes[*a].value, &self.nodes[*b].value);
                    let (n, k, m) = (av.rows(), av.cols(), bv.cols());
                    matmul_a_bt_into(&g, bv.values(), slot(&mut grads, *a, &self.nodes), n, m, k);
                    matmul_at_b_into(av.values(), &g, slot(&mut grads, *b, &self.nodes), n, k, m);
                }
                Op::AddRow(a, b) => {
                    let m = self.nodes[*b].value.len();
                    add_into(slot(&mut grads, *a, &self.nodes), &g, 1.0);
                    let gb = slot(&mut grads, *b, &self.nodes);
                    for row in g.chunks(m) {
                        add_into(gb, row, 1.0);
                    }
                }
                Op::Add(a, b) => {
                    add_into(slot(&mut grads, *a, &self.nodes), &g, 1.0);
                    add_into(slot(&mut grads, *b, &self.nodes), &g, 1.0);
                }
                Op::Sub(a, b) => {
                    add_into(slot(&mut grads, *a, &self.nodes), &g, 1.0);
                    add_into(slot(&mut grads, *b, &self.nodes), &g, -1.0);
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.nodes[*a].value.values(), self.nodes[*b].value.values());
                    let ga = slot(&mut grads, *a, &self.nodes);
                    for ((o, gv), y) in ga.iter_mut().zip(&g).zip(bv) {
                        *o += gv * y;
                    }
                    let gb = slot(&mut grads, *b, &self.nodes);
                    for ((o, gv), x) in gb.iter_mut().zip(&g).zip(av) {
                        *o += gv * x;
                    }
                }
                Op::Scale(a, c) => add_into(slot(&mut grads, *a, &self.nodes), &g, *c),
                Op::Relu(a) => {
                    let x = self.nodes[*a].value.values();
                    let ga = slot(&mut grads, *a, &self.nodes);
                    for ((o, gv), xv) in ga.iter_mut().zip(&g).zip(x) {
                        if *xv > 0.0 {
                            *o += gv;
                        }
                    }
                }
                Op::Tanh(a) => {
                    let y = node.value.values();
                    let ga = slot(&mut grads, *a, &self.nodes);
                    for ((o, gv), yv) in ga.iter_mut().zip(&g).zip(y) {
                        *o += gv * (1.0 - yv * yv);
                    }
                }
                Op::Square(a) => {
                    let x = self.nodes[*a].value.values();
                    let ga = slot(&mut grads, *a, &self.nodes);
                    for ((o, gv), xv) in ga.iter_mut().zip(&g).zip(x) {
                        *o += 2.0 * gv * xv;
                    }
                }
                Op::Sum(a) => {
                    let ga = slot(&mut grads, *a, &self.nodes);
                    ga.iter_mut().for_each(|o| *o += g[0]);
                }
                Op::Mean(a) => {
                    let ga = slot(&mut grads, *a, &self.nodes);
                    let c = g[0] / ga.len() as f64;
                    ga.iter_mut().for_each(|o| *o += c);
                }
                Op::SoftmaxXent { logits, labels } => {
                    let z = &self.nodes[*logits].value;
                    let (n, k) = (z.rows(), z.cols());
                    let p = softmax_rows(z);
                    let c = g[0] / n as f64;
                    let gz = slot(&mut grads, *logits, &self.nodes);
                    for (i, &y) in labels.iter().enumerate() {
                        for j in 0..k {
                            let t = if j == y { 1.0 } else { 0.0 };
                            gz[i * k + j] += c * (p.values()[i * k + j] - t);
                        }
                    }
                }
                Op::Opaque { name, inputs } => {
                    if !inputs.is_empty() {
                        return Err(Error::Capability(format!(
                            "cannot differentiate through unsupported op `{name}`"
                        )));
                    }
                }
            }
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }
}

fn slot<'a>(grads: &'a mut [Option<Vec<f64>>], idx: usize, nodes: &[Node]) -> &'a mut Vec<f64> {
    grads[idx].get_or_insert_with(|| vec![0.0; nodes[idx].value.len()])
}

fn add_into(acc: &mut [f64], g: &[f64], c: f64) {
    for (a, v) in acc.iter_mut().zip(g) {
        *a += c * v;
    }
}

/// Adjoints produced by [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient with respect to `v`, zero if `v` does not reach the root.
    pub fn wrt(&self, graph: &Graph, v: Var) -> Tensor {
        let shape = graph.value(v).shape().to_vec();
        match self.grads.get(v.0).and_then(|g| g.as_ref()) {
            Some(g) => Tensor::new(shape, g.clone()).expect("gradient matches node"),
            None => Tensor::zeros(shape),
        }
    }
}

/// Reverse-mode gradient of a scalar function of the parameters.
///
/// `loss_fn` receives the graph and the parameter leaf (flat, shape `[P]`)
/// and returns the scalar loss node.
pub fn grad<F>(loss_fn: F, theta: &ParameterVector) -> Result<ParameterVector>
where
    F: FnOnce(&mut Graph, Var) -> Result<Var>,
{
    value_and_grad(loss_fn, theta).map(|(_, g)| g)
}

pub fn value_and_grad<F>(loss_fn: F, theta: &ParameterVector) -> Result<(f64, ParameterVector)>
where
    F: FnOnce(&mut Graph, Var) -> Result<Var>,
{
    let mut g = Graph::new();
    let leaf = g.leaf(Tensor::vector(theta.values().to_vec()));
    let out = loss_fn(&mut g, leaf)?;
    let value = g.scalar(out);
    let grads = g.backward(out)?;
    let gv = grads.wrt(&g, leaf).into_values();
    Ok((value, theta.with_values(gv)?))
}

/// Central finite-difference gradient of `f`, for checking analytic gradients.
pub fn finite_difference<F>(f: F, theta: &[f64], step: f64) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64,
{
    let mut x = theta.to_vec();
    (0..theta.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + step;
            let up = f(&x);
            x[i] = orig - step;
            let down = f(&x);
            x[i] = orig;
            (up - down) / (2.0 * step)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::rng::RngStream;

    #[test]
    fn half_squared_norm_has_identity_gradient() {
        let theta = ParameterVector::from_slice(&[1.0, -2.0, 0.5]);
        let g = grad(
            |g, t| {
                let s = g.square(t);
                let s = g.sum(s);
                Ok(g.scale(s, 0.5))
            },
            &theta,
        )
        .unwrap();
        assert_eq!(g.values(), theta.values());
    }

    #[test]
    fn constant_has_zero_gradient() {
        let theta = ParameterVector::from_slice(&[3.0, 4.0]);
        let g = grad(|g, _t| Ok(g.leaf(Tensor::vector(vec![7.0]))), &theta).unwrap();
        assert_eq!(g.values(), &[0.0, 0.0]);
    }

    #[test]
    fn opaque_node_on_the_path_is_a_capability_error() {
        let theta = ParameterVector::from_slice(&[1.0]);
        let err = grad(
            |g, t| {
                let v = g.value(t).map(f64::exp);
                let e = g.opaque("exp", &[t], v);
                Ok(g.sum(e))
            },
            &theta,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Capability(_)));
    }

    /// 2 inputs -> 2 hidden -> 2 classes without biases: 8 weights.
    fn two_layer(g: &mut Graph, t: Var, x: &Tensor, labels: &[usize], act_tanh: bool) -> Result<Var> {
        let xv = g.leaf(x.clone());
        let w1 = g.slice(t, 0, &[2, 2])?;
        let w2 = g.slice(t, 4, &[2, 2])?;
        let h = g.matmul(xv, w1)?;
        let h = if act_tanh { g.tanh(h) } else { g.relu(h) };
        let z = g.matmul(h, w2)?;
        g.softmax_xent(z, labels)
    }

    #[test]
    fn small_network_matches_finite_differences() {
        let mut rng = RngStream::new(11, 0);
        for probe in 0..5 {
            let theta: Vec<f64> = (0..8).map(|_| rng.normal(0.0, 1.0)).collect();
            let x = Tensor::matrix(3, 2, (0..6).map(|_| rng.normal(0.0, 1.0)).collect()).unwrap();
            let labels = [0usize, 1, 0];
            let tanh = probe % 2 == 0;
            let p = ParameterVector::from_slice(&theta);
            let g = grad(|g, t| two_layer(g, t, &x, &labels, tanh), &p).unwrap();
            let fd = finite_difference(
                |th| {
                    let mut gr = Graph::new();
                    let t = gr.leaf(Tensor::vector(th.to_vec()));
                    let out = two_layer(&mut gr, t, &x, &labels, tanh).unwrap();
                    gr.scalar(out)
                },
                &theta,
                1e-5,
            );
            for (a, b) in g.values().iter().zip(&fd) {
                let denom = a.abs().max(b.abs()).max(1e-7);
                assert!((a - b).abs() / denom < 1e-4 || (a - b).abs() < 1e-7, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn softmax_xent_gradient_matches_finite_differences() {
        let mut rng = RngStream::new(5, 1);
        let z: Vec<f64> = (0..12).map(|_| rng.normal(0.0, 2.0)).collect();
        let labels = [2usize, 0, 3];
        let p = ParameterVector::from_slice(&z);
        let loss = |g: &mut Graph, t: Var| -> Result<Var> {
            let m = g.slice(t, 0, &[3, 4])?;
            g.softmax_xent(m, &labels)
        };
        let an = grad(loss, &p).unwrap();
        let fd = finite_difference(
            |th| {
                let mut gr = Graph::new();
                let t = gr.leaf(Tensor::vector(th.to_vec()));
                let out = loss(&mut gr, t).unwrap();
                gr.scalar(out)
            },
            &z,
            1e-5,
        );
        for (a, b) in an.values().iter().zip(&fd) {
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
    }
}
