//! The classifier family: softmax-linear and one-hidden-layer MLP.
//!
//! Forward passes used for evaluation run directly on tensors; anything that
//! needs a gradient goes through the autodiff [`Graph`].

pub mod checkpoint;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::numcore::autodiff::softmax_rows;
use crate::numcore::{Graph, Layout, ParameterVector, RngStream, Segment, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Arch {
    Linear,
    Mlp { hidden: usize, activation: Activation },
}

impl Arch {
    pub fn layout(&self, d: usize, k: usize) -> Layout {
        match *self {
            Arch::Linear => Layout(vec![Segment::new("w", &[d, k]), Segment::new("b", &[k])]),
            Arch::Mlp { hidden, .. } => Layout(vec![
                Segment::new("w1", &[d, hidden]),
                Segment::new("b1", &[hidden]),
                Segment::new("w2", &[hidden, k]),
                Segment::new("b2", &[k]),
            ]),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LossKind {
    CrossEntropy,
    /// Half squared error of the logits against one-hot targets plus
    /// `(lambda / 2) ||theta||^2`.
    RidgeQuadratic { lambda: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    pub kind: LossKind,
    pub weight_decay: f64,
}

impl LossSpec {
    pub fn cross_entropy(weight_decay: f64) -> Self {
        Self {
            kind: LossKind::CrossEntropy,
            weight_decay,
        }
    }

    pub fn ridge(lambda: f64) -> Self {
        Self {
            kind: LossKind::RidgeQuadratic { lambda },
            weight_decay: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Config(format!("weight decay {} < 0", self.weight_decay)));
        }
        if let LossKind::RidgeQuadratic { lambda } = self.kind {
            if !(lambda > 0.0) {
                return Err(Error::Config(format!("ridge lambda must be > 0, got {lambda}")));
            }
        }
        Ok(())
    }

    /// Coefficient `c` of the `(c / 2) ||theta||^2` term.
    pub fn l2_coefficient(&self) -> f64 {
        match self.kind {
            LossKind::CrossEntropy => self.weight_decay,
            LossKind::RidgeQuadratic { lambda } => lambda + self.weight_decay,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classifier {
    pub arch: Arch,
    pub input_dim: usize,
    pub num_classes: usize,
    pub params: ParameterVector,
}

fn dense(x: &Tensor, w: &[f64], b: &[f64], out_dim: usize) -> Tensor {
    let n = x.rows();
    let mut vals = Vec::with_capacity(n * out_dim);
    for _ in 0..n {
        vals.extend_from_slice(b);
    }
    crate::numcore::tensor::matmul_into(x.values(), w, &mut vals, n, x.cols(), out_dim);
    Tensor::matrix(n, out_dim, vals).expect("dense output shape")
}

impl Classifier {
    /// Weights `N(0, 2 / fan_in)`, biases zero.
    pub fn init(arch: Arch, input_dim: usize, num_classes: usize, rng: &RngStream) -> Result<Self> {
        if input_dim == 0 || num_classes < 2 {
            return Err(Error::Config("classifier needs d >= 1 and K >= 2".into()));
        }
        if let Arch::Mlp { hidden: 0, .. } = arch {
            return Err(Error::Config("hidden width must be >= 1".into()));
        }
        let layout = arch.layout(input_dim, num_classes);
        let mut r = rng.child("init");
        let mut values = Vec::with_capacity(layout.total_len());
        for seg in &layout.0 {
            if seg.shape.len() == 2 {
                let std = (2.0 / seg.shape[0] as f64).sqrt();
                values.extend((0..seg.len()).map(|_| std * r.standard_normal()));
            } else {
                values.extend(std::iter::repeat_n(0.0, seg.len()));
            }
        }
        Ok(Self {
            arch,
            input_dim,
            num_classes,
            params: ParameterVector::new(values, layout)?,
        })
    }

    /// All-zero parameters.
    pub fn zeros(arch: Arch, input_dim: usize, num_classes: usize) -> Self {
        Self {
            arch,
            input_dim,
            num_classes,
            params: ParameterVector::zeros(arch.layout(input_dim, num_classes)),
        }
    }

    pub fn with_params(&self, params: ParameterVector) -> Result<Self> {
        if params.layout() != self.params.layout() {
            return Err(Error::Shape("parameter layout does not match the architecture".into()));
        }
        Ok(Self {
            params,
            ..self.clone()
        })
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.cols() != self.input_dim {
            return Err(Error::Shape(format!(
                "input width {} for a model expecting {}",
                x.cols(),
                self.input_dim
            )));
        }
        Ok(())
    }

    fn seg(&self, name: &str) -> &[f64] {
        self.params.segment(name).expect("layout segment")
    }

    /// Penultimate activations (MLP) or the input itself (linear).
    pub fn feature_map(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        Ok(match self.arch {
            Arch::Linear => Tensor::matrix(x.rows(), x.cols(), x.values().to_vec())?,
            Arch::Mlp { hidden, activation } => {
                let h = dense(x, self.seg("w1"), self.seg("b1"), hidden);
                match activation {
                    Activation::Relu => h.map(|v| v.max(0.0)),
                    Activation::Tanh => h.map(f64::tanh),
                }
            }
        })
    }

    pub fn logits(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        Ok(match self.arch {
            Arch::Linear => dense(x, self.seg("w"), self.seg("b"), self.num_classes),
            Arch::Mlp { .. } => {
                let h = self.feature_map(x)?;
                dense(&h, self.seg("w2"), self.seg("b2"), self.num_classes)
            }
        })
    }

    /// Class probabilities, shape `(n, K)`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(softmax_rows(&self.logits(x)?))
    }

    /// Argmax class per row; ties go to the lowest index.
    pub fn predict(&self, x: &Tensor) -> Result<Vec<usize>> {
        let z = self.logits(x)?;
        Ok((0..z.rows())
            .map(|i| {
                let row = z.row(i);
                let mut best = 0;
                for (j, v) in row.iter().enumerate() {
                    if *v > row[best] {
                        best = j;
                    }
                }
                best
            })
            .collect())
    }

    /// Feature and logit nodes for `x` under parameters `theta`.
    pub fn build_graph(&self, g: &mut Graph, theta: Var, x: Var) -> Result<(Var, Var)> {
        let layout = self.params.layout();
        let slice = |g: &mut Graph, name: &str| -> Result<Var> {
            let (off, s) = layout.find(name).expect("layout segment");
            g.slice(theta, off, &s.shape)
        };
        match self.arch {
            Arch::Linear => {
                let w = slice(g, "w")?;
                let b = slice(g, "b")?;
                let z = g.matmul(x, w)?;
                let z = g.add_row(z, b)?;
                Ok((x, z))
            }
            Arch::Mlp { activation, .. } => {
                let w1 = slice(g, "w1")?;
                let b1 = slice(g, "b1")?;
                let w2 = slice(g, "w2")?;
                let b2 = slice(g, "b2")?;
                let h = g.matmul(x, w1)?;
                let h = g.add_row(h, b1)?;
                let h = match activation {
                    Activation::Relu => g.relu(h),
                    Activation::Tanh => g.tanh(h),
                };
                let z = g.matmul(h, w2)?;
                let z = g.add_row(z, b2)?;
                Ok((h, z))
            }
        }
    }

    /// Mean data loss over the rows (no regularizer).
    pub fn build_data_loss(&self, g: &mut Graph, logits: Var, labels: &[usize], kind: LossKind) -> Result<Var> {
        match kind {
            LossKind::CrossEntropy => g.softmax_xent(logits, labels),
            LossKind::RidgeQuadratic { .. } => {
                let n = labels.len();
                if n == 0 {
                    return Err(Error::Domain("empty batch".into()));
                }
                let k = self.num_classes;
                let mut y = vec![0.0; n * k];
                for (i, &l) in labels.iter().enumerate() {
                    if l >= k {
                        return Err(Error::Domain(format!("label {l} >= {k} classes")));
                    }
                    y[i * k + l] = 1.0;
                }
                let yv = g.leaf(Tensor::matrix(n, k, y)?);
                let diff = g.sub(logits, yv)?;
                let sq = g.square(diff);
                let s = g.sum(sq);
                Ok(g.scale(s, 0.5 / n as f64))
            }
        }
    }

    fn build_loss(&self, g: &mut Graph, theta: Var, x: &Tensor, labels: &[usize], spec: &LossSpec) -> Result<Var> {
        let xv = g.leaf(x.clone());
        let (_, z) = self.build_graph(g, theta, xv)?;
        let data = self.build_data_loss(g, z, labels, spec.kind)?;
        let c = spec.l2_coefficient();
        if c == 0.0 {
            return Ok(data);
        }
        let sq = g.square(theta);
        let s = g.sum(sq);
        let reg = g.scale(s, 0.5 * c);
        g.add(data, reg)
    }

    /// Mean loss plus regularizer, and its gradient, on raw rows.
    pub fn loss_and_grad_xy(&self, x: &Tensor, labels: &[usize], spec: &LossSpec) -> Result<(f64, ParameterVector)> {
        self.check_input(x)?;
        if labels.is_empty() {
            return Err(Error::Domain("loss on an empty batch".into()));
        }
        crate::numcore::value_and_grad(|g, t| self.build_loss(g, t, x, labels, spec), &self.params)
    }

    pub fn loss_and_grad(&self, batch: &Dataset, spec: &LossSpec) -> Result<(f64, ParameterVector)> {
        self.loss_and_grad_xy(batch.features(), batch.labels(), spec)
    }

    /// Objective value without building a gradient.
    pub fn loss(&self, batch: &Dataset, spec: &LossSpec) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::Domain("loss on an empty batch".into()));
        }
        let z = self.logits(batch.features())?;
        let n = batch.len();
        let k = self.num_classes;
        let mut total = 0.0;
        for (i, &y) in batch.labels().iter().enumerate() {
            let row = z.row(i);
            total += match spec.kind {
                LossKind::CrossEntropy => {
                    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln() - row[y]
                }
                LossKind::RidgeQuadratic { .. } => {
                    0.5 * (0..k)
                        .map(|j| {
                            let t = if j == y { 1.0 } else { 0.0 };
                            (row[j] - t).powi(2)
                        })
                        .sum::<f64>()
                }
            };
        }
        let c = spec.l2_coefficient();
        Ok(total / n as f64 + 0.5 * c * self.params.values().iter().map(|v| v * v).sum::<f64>())
    }

    /// One gradient per row; their mean is the batch gradient.
    pub fn per_sample_grads(&self, batch: &Dataset, spec: &LossSpec, exec: Exec) -> Result<Vec<ParameterVector>> {
        if batch.is_empty() {
            return Err(Error::Domain("per-sample gradients of an empty batch".into()));
        }
        exec.try_map(batch.len(), |i| {
            let x = Tensor::matrix(1, batch.dim(), batch.row(i).to_vec())?;
            self.loss_and_grad_xy(&x, &batch.labels()[i..i + 1], spec)
                .map(|(_, g)| g)
        })
    }

    /// Gradient of the summed per-row data loss with respect to the inputs.
    /// Row `i` of the result is `d loss_i / d x_i`.
    pub fn input_grad(&self, x: &Tensor, labels: &[usize], kind: LossKind) -> Result<(f64, Tensor)> {
        self.check_input(x)?;
        let mut g = Graph::new();
        let theta = g.leaf(Tensor::vector(self.params.values().to_vec()));
        let xv = g.leaf(x.clone());
        let (_, z) = self.build_graph(&mut g, theta, xv)?;
        let mean = self.build_data_loss(&mut g, z, labels, kind)?;
        let total = g.scale(mean, labels.len() as f64);
        let grads = g.backward(total)?;
        Ok((g.scalar(total), grads.wrt(&g, xv)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::make_blobs;
    use crate::numcore::finite_difference;

    fn mlp(act: Activation) -> Arch {
        Arch::Mlp {
            hidden: 5,
            activation: act,
        }
    }

    #[test]
    fn zero_linear_model_is_uniform() {
        let clf = Classifier::zeros(Arch::Linear, 3, 4);
        let x = Tensor::matrix(2, 3, vec![1.0, 2.0, 3.0, -1.0, 0.0, 4.0]).unwrap();
        let p = clf.forward(&x).unwrap();
        assert!(p.values().iter().all(|v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn symmetric_binary_point_is_a_coin_flip() {
        let mut clf = Classifier::zeros(Arch::Linear, 2, 2);
        clf.params.values_mut()[..4].copy_from_slice(&[1.0, -1.0, 1.0, -1.0]);
        let x = Tensor::matrix(1, 2, vec![1.0, -1.0]).unwrap();
        assert_eq!(clf.forward(&x).unwrap().values(), &[0.5, 0.5]);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let r = RngStream::new(3, 0);
        let clf = Classifier::init(mlp(Activation::Tanh), 6, 5, &r).unwrap();
        let mut xr = r.child("x");
        let x = Tensor::matrix(1000, 6, (0..6000).map(|_| 3.0 * xr.standard_normal()).collect()).unwrap();
        let p = clf.forward(&x).unwrap();
        for i in 0..1000 {
            let s: f64 = p.row(i).iter().sum();
            assert!((s - 1.0).abs() < 1e-9);
            assert!(p.row(i).iter().all(|&v| v > 0.0 && v < 1.0));
        }
    }

    #[test]
    fn dimension_mismatch_is_a_shape_error() {
        let clf = Classifier::zeros(Arch::Linear, 3, 2);
        let x = Tensor::matrix(1, 2, vec![0.0, 0.0]).unwrap();
        assert!(matches!(clf.forward(&x), Err(Error::Shape(_))));
    }

    #[test]
    fn uniform_prediction_costs_ln_k() {
        let ds = make_blobs(3, 10, 4, 1.0, &RngStream::new(0, 0)).unwrap();
        let clf = Classifier::zeros(Arch::Linear, 4, 10);
        let (l, _) = clf.loss_and_grad(&ds, &LossSpec::cross_entropy(0.0)).unwrap();
        assert!((l - 10f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn confident_correct_predictions_drive_xent_to_zero() {
        let mut clf = Classifier::zeros(Arch::Linear, 2, 2);
        clf.params.values_mut()[4..].copy_from_slice(&[60.0, 0.0]);
        let ds = Dataset::new(
            Tensor::matrix(1, 2, vec![0.0, 0.0]).unwrap(),
            vec![0],
            vec![0],
            crate::data::DatasetMeta {
                num_classes: 2,
                image_side: None,
                range: None,
            },
        )
        .unwrap();
        let (l, _) = clf.loss_and_grad(&ds, &LossSpec::cross_entropy(0.0)).unwrap();
        assert!(l < 1e-25);
    }

    #[test]
    fn duplicating_rows_keeps_mean_loss() {
        let ds = make_blobs(4, 3, 3, 2.0, &RngStream::new(5, 0)).unwrap();
        let twice = Dataset::concat(&[&ds, &ds.with_features(ds.features().clone()).unwrap()]);
        // ids collide, so build the duplicate with shifted ids.
        assert!(twice.is_err());
        let shifted = Dataset::new(
            ds.features().clone(),
            ds.labels().to_vec(),
            ds.ids().iter().map(|i| i + 1000).collect(),
            ds.meta(),
        )
        .unwrap();
        let both = Dataset::concat(&[&ds, &shifted]).unwrap();
        let clf = Classifier::init(mlp(Activation::Relu), 3, 3, &RngStream::new(1, 1)).unwrap();
        let spec = LossSpec::cross_entropy(1e-3);
        let (a, _) = clf.loss_and_grad(&ds, &spec).unwrap();
        let (b, _) = clf.loss_and_grad(&both, &spec).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn gradients_match_finite_differences_for_both_archs_and_losses() {
        let ds = make_blobs(3, 3, 4, 2.0, &RngStream::new(9, 0)).unwrap();
        let specs = [LossSpec::cross_entropy(1e-2), LossSpec::ridge(0.1)];
        let archs = [Arch::Linear, mlp(Activation::Tanh), mlp(Activation::Relu)];
        for (ai, arch) in archs.iter().enumerate() {
            for spec in &specs {
                let clf = Classifier::init(*arch, 4, 3, &RngStream::new(ai as u64, 7)).unwrap();
                let (l, g) = clf.loss_and_grad(&ds, spec).unwrap();
                assert!((l - clf.loss(&ds, spec).unwrap()).abs() < 1e-12);
                let fd = finite_difference(
                    |th| {
                        clf.with_params(clf.params.with_values(th.to_vec()).unwrap())
                            .unwrap()
                            .loss(&ds, spec)
                            .unwrap()
                    },
                    clf.params.values(),
                    1e-5,
                );
                for (a, b) in g.values().iter().zip(&fd) {
                    let rel = (a - b).abs() / a.abs().max(b.abs()).max(1e-7);
                    assert!(rel < 1e-4 || (a - b).abs() < 1e-7, "{arch:?} {spec:?}: {a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn per_sample_gradients_average_to_the_batch_gradient() {
        let ds = make_blobs(8, 2, 3, 2.0, &RngStream::new(2, 0)).unwrap();
        assert_eq!(ds.len(), 16);
        let clf = Classifier::init(mlp(Activation::Relu), 3, 2, &RngStream::new(2, 1)).unwrap();
        let spec = LossSpec::cross_entropy(5e-4);
        let (_, g) = clf.loss_and_grad(&ds, &spec).unwrap();
        let per = clf.per_sample_grads(&ds, &spec, Exec::Parallel { jobs: 2 }).unwrap();
        assert_eq!(per.len(), 16);
        for j in 0..g.len() {
            let m: f64 = per.iter().map(|p| p.values()[j]).sum::<f64>() / 16.0;
            assert!((m - g.values()[j]).abs() < 1e-10);
        }
        let one = ds.select(&[3]);
        let single = clf.per_sample_grads(&one, &spec, Exec::Sequential).unwrap();
        assert_eq!(single[0], clf.loss_and_grad(&one, &spec).unwrap().1);
        let dup = ds.select(&[3]).with_features(ds.select(&[3]).features().clone()).unwrap();
        assert_eq!(clf.per_sample_grads(&dup, &spec, Exec::Sequential).unwrap()[0], single[0]);
    }

    #[test]
    fn empty_batch_is_a_domain_error() {
        let ds = make_blobs(2, 2, 2, 1.0, &RngStream::new(0, 0)).unwrap();
        let empty = ds.select(&[]);
        let clf = Classifier::zeros(Arch::Linear, 2, 2);
        let spec = LossSpec::cross_entropy(0.0);
        assert!(matches!(clf.loss_and_grad(&empty, &spec), Err(Error::Domain(_))));
        assert!(matches!(clf.per_sample_grads(&empty, &spec, Exec::Sequential), Err(Error::Domain(_))));
    }

    #[test]
    fn feature_map_contracts() {
        let r = RngStream::new(4, 0);
        let x = Tensor::matrix(3, 2, vec![0.5, -1.0, 2.0, 0.0, -3.0, 1.0]).unwrap();
        let lin = Classifier::init(Arch::Linear, 2, 2, &r).unwrap();
        assert_eq!(lin.feature_map(&x).unwrap().values(), x.values());
        let m = Classifier::init(mlp(Activation::Relu), 2, 2, &r).unwrap();
        let f = m.feature_map(&x).unwrap();
        assert_eq!(f.shape(), &[3, 5]);
        assert!(f.values().iter().all(|&v| v >= 0.0));
        assert_eq!(f, m.feature_map(&x).unwrap());
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let r = RngStream::new(6, 0);
        let clf = Classifier::init(mlp(Activation::Tanh), 3, 3, &r).unwrap();
        let x = Tensor::matrix(2, 3, vec![0.1, 0.4, -0.2, 1.0, 0.3, 0.7]).unwrap();
        let labels = [2usize, 0];
        let (_, g) = clf.input_grad(&x, &labels, LossKind::CrossEntropy).unwrap();
        let fd = finite_difference(
            |xv| {
                let xt = Tensor::matrix(2, 3, xv.to_vec()).unwrap();
                clf.input_grad(&xt, &labels, LossKind::CrossEntropy).unwrap().0
            },
            x.values(),
            1e-6,
        );
        for (a, b) in g.values().iter().zip(&fd) {
            assert!((a - b).abs() < 1e-7);
        }
    }
}
