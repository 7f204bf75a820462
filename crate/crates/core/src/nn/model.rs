//! Stackable MLP around one prunable submodule, with exact reverse-mode
//! gradients and softmax cross-entropy loss.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::catalyst::ExtendedSubmodule;
use crate::error::{Error, Result};

use super::{Activation, Forward, Submodule};

/// A dense affine layer followed by an element-wise activation.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    /// Row-major weight, `out × in`.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub act: Activation,
}

impl DenseLayer {
    pub fn new(weight: Array2<f64>, bias: Array1<f64>, act: Activation) -> Result<Self> {
        if weight.nrows() != bias.len() {
            return Err(Error::Shape(format!(
                "dense layer: weight has {} rows but bias has {} entries",
                weight.nrows(),
                bias.len()
            )));
        }
        Ok(Self { weight, bias, act })
    }

    pub fn input_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.nrows()
    }
}

/// The submodule position of a model: plain `σ`, or extended with the
/// learnable activation `ψ_{D,D̄}`.
#[derive(Debug, Clone, PartialEq)]
pub enum SubmoduleSlot {
    Plain(Submodule),
    Extended(ExtendedSubmodule),
}

impl SubmoduleSlot {
    pub fn submodule(&self) -> &Submodule {
        match self {
            SubmoduleSlot::Plain(s) => s,
            SubmoduleSlot::Extended(e) => &e.sub,
        }
    }

    pub fn submodule_mut(&mut self) -> &mut Submodule {
        match self {
            SubmoduleSlot::Plain(s) => s,
            SubmoduleSlot::Extended(e) => &mut e.sub,
        }
    }

    pub fn is_extended(&self) -> bool {
        matches!(self, SubmoduleSlot::Extended(_))
    }
}

/// A dense MLP split around the pruning target: `pre` layers, the submodule
/// `(W, b_W, A, b_A, σ/ψ)`, then `post` layers. Parameters outside the
/// submodule are the task-specific remainder of the network.
///
/// `junction` is the activation applied to the submodule output before the
/// post stack; it is `Identity` when the submodule's second layer already is
/// the network output.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub pre: Vec<DenseLayer>,
    pub slot: SubmoduleSlot,
    pub junction: Activation,
    pub post: Vec<DenseLayer>,
}

/// Gradients for every parameter of a [`Model`], in model layout.
#[derive(Debug, Clone)]
pub struct ModelGrads {
    pub pre: Vec<(Array2<f64>, Array1<f64>)>,
    pub w: Array2<f64>,
    pub b_w: Array1<f64>,
    pub a: Array2<f64>,
    pub b_a: Array1<f64>,
    /// Present iff the slot is extended.
    pub d: Option<Array1<f64>>,
    pub dbar: Option<Array1<f64>>,
    pub post: Vec<(Array2<f64>, Array1<f64>)>,
}

impl ModelGrads {
    pub fn zeros_like(model: &Model) -> Self {
        let sub = model.slot.submodule();
        let layer_zeros = |l: &DenseLayer| {
            (
                Array2::zeros(l.weight.raw_dim()),
                Array1::zeros(l.bias.raw_dim()),
            )
        };
        let (d, dbar) = match &model.slot {
            SubmoduleSlot::Plain(_) => (None, None),
            SubmoduleSlot::Extended(e) => (
                Some(Array1::zeros(e.d.delta.raw_dim())),
                Some(Array1::zeros(e.dbar.delta.raw_dim())),
            ),
        };
        Self {
            pre: model.pre.iter().map(layer_zeros).collect(),
            w: Array2::zeros(sub.w.raw_dim()),
            b_w: Array1::zeros(sub.b_w.raw_dim()),
            a: Array2::zeros(sub.a.raw_dim()),
            b_a: Array1::zeros(sub.b_a.raw_dim()),
            d,
            dbar,
            post: model.post.iter().map(layer_zeros).collect(),
        }
    }

    /// Flattened gradient vector in the same order as [`Model::param_vec`].
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::new();
        for (w, b) in &self.pre {
            v.extend(w.iter());
            v.extend(b.iter());
        }
        v.extend(self.w.iter());
        v.extend(self.b_w.iter());
        v.extend(self.a.iter());
        v.extend(self.b_a.iter());
        if let Some(d) = &self.d {
            v.extend(d.iter());
        }
        if let Some(dbar) = &self.dbar {
            v.extend(dbar.iter());
        }
        for (w, b) in &self.post {
            v.extend(w.iter());
            v.extend(b.iter());
        }
        v
    }
}

struct ForwardCache {
    /// Per pre layer: (input, pre-activation).
    pre: Vec<(Array2<f64>, Array2<f64>)>,
    sub_input: Array2<f64>,
    /// `b_W + X·Wᵀ`, batch × n_w.
    sub_h: Array2<f64>,
    /// `σ(H)` or `ψ_{D,D̄}(H)`.
    sub_s: Array2<f64>,
    /// `b_A + S·Aᵀ`, pre-junction.
    sub_o: Array2<f64>,
    post: Vec<(Array2<f64>, Array2<f64>)>,
    logits: Array2<f64>,
}

fn layer_forward(layer: &DenseLayer, x: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
    let z = x.dot(&layer.weight.t()) + &layer.bias;
    let y = z.mapv(|v| layer.act.apply(v));
    (z, y)
}

impl Model {
    pub fn input_dim(&self) -> usize {
        self.pre
            .first()
            .map(|l| l.input_dim())
            .unwrap_or_else(|| self.slot.submodule().input_dim())
    }

    pub fn output_dim(&self) -> usize {
        self.post
            .last()
            .map(|l| l.output_dim())
            .unwrap_or_else(|| self.slot.submodule().output_dim())
    }

    /// Checks that adjacent layer dimensions chain end to end.
    pub fn validate(&self) -> Result<()> {
        let sub = self.slot.submodule();
        let mut dim = self.input_dim();
        for (i, l) in self.pre.iter().enumerate() {
            if l.input_dim() != dim {
                return Err(Error::Shape(format!(
                    "pre layer {i} expects input {}, previous layer outputs {dim}",
                    l.input_dim()
                )));
            }
            dim = l.output_dim();
        }
        if sub.input_dim() != dim {
            return Err(Error::Shape(format!(
                "submodule expects input {}, previous layer outputs {dim}",
                sub.input_dim()
            )));
        }
        dim = sub.output_dim();
        for (i, l) in self.post.iter().enumerate() {
            if l.input_dim() != dim {
                return Err(Error::Shape(format!(
                    "post layer {i} expects input {}, previous layer outputs {dim}",
                    l.input_dim()
                )));
            }
            dim = l.output_dim();
        }
        Ok(())
    }

    fn forward_cached(&self, x: ArrayView2<f64>) -> Result<ForwardCache> {
        if x.ncols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "model expects {} input features, got {}",
                self.input_dim(),
                x.ncols()
            )));
        }
        let mut cur = x.to_owned();
        let mut pre = Vec::with_capacity(self.pre.len());
        for layer in &self.pre {
            let (z, y) = layer_forward(layer, &cur);
            pre.push((cur, z));
            cur = y;
        }

        let sub = self.slot.submodule();
        let sub_input = cur;
        let sub_h = sub_input.dot(&sub.w.t()) + &sub.b_w;
        let sub_s = match &self.slot {
            SubmoduleSlot::Plain(s) => sub_h.mapv(|v| s.sigma.apply(v)),
            SubmoduleSlot::Extended(e) => {
                let mut s = sub_h.clone();
                for (i, mut col) in s.columns_mut().into_iter().enumerate() {
                    let gain = e.d.delta[i] - e.dbar.delta[i];
                    col.mapv_inplace(|v| gain * v + e.sub.sigma.apply(v));
                }
                s
            }
        };
        let sub_o = sub_s.dot(&sub.a.t()) + &sub.b_a;
        let mut cur = sub_o.mapv(|v| self.junction.apply(v));

        let mut post = Vec::with_capacity(self.post.len());
        for layer in &self.post {
            let (z, y) = layer_forward(layer, &cur);
            post.push((cur, z));
            cur = y;
        }
        Ok(ForwardCache {
            pre,
            sub_input,
            sub_h,
            sub_s,
            sub_o,
            post,
            logits: cur,
        })
    }

    /// Batch forward pass; rows of `x` are samples, output rows are logits.
    pub fn forward_batch(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        Ok(self.forward_cached(x)?.logits)
    }

    /// Mean softmax cross-entropy over the batch.
    pub fn loss(&self, x: ArrayView2<f64>, labels: &[usize]) -> Result<f64> {
        let logits = self.forward_batch(x)?;
        Ok(softmax_cross_entropy(&logits, labels)?.0)
    }

    /// Mean batch loss plus exact gradients for every parameter, including
    /// the catalyst diagonals when the slot is extended.
    pub fn loss_and_grads(
        &self,
        x: ArrayView2<f64>,
        labels: &[usize],
    ) -> Result<(f64, ModelGrads)> {
        let cache = self.forward_cached(x)?;
        let (loss, mut delta) = softmax_cross_entropy(&cache.logits, labels)?;
        if !loss.is_finite() {
            return Err(Error::Numerical {
                step: 0,
                message: format!("loss is not finite ({loss})"),
            });
        }
        let mut grads = ModelGrads::zeros_like(self);

        // Post stack, reverse order. `delta` enters as dLoss/dY of the layer.
        for (layer, (input, z), slot) in itertools_rev(&self.post, &cache.post, &mut grads.post) {
            let dz = &delta * &z.mapv(|v| layer.act.deriv(v));
            slot.0 = dz.t().dot(input);
            slot.1 = dz.sum_axis(Axis(0));
            delta = dz.dot(&layer.weight);
        }

        // Junction activation into the submodule's affine output.
        let d_o = &delta * &cache.sub_o.mapv(|v| self.junction.deriv(v));

        let sub = self.slot.submodule();
        grads.a = d_o.t().dot(&cache.sub_s);
        grads.b_a = d_o.sum_axis(Axis(0));
        let d_s = d_o.dot(&sub.a);

        // Through σ or ψ. For ψ the per-channel derivative in x is
        // (D_ii − D̄_ii) + σ'(x), and ∂ψ/∂D_ii = x = −∂ψ/∂D̄_ii.
        let d_h = match &self.slot {
            SubmoduleSlot::Plain(s) => &d_s * &cache.sub_h.mapv(|v| s.sigma.deriv(v)),
            SubmoduleSlot::Extended(e) => {
                let mut d_h = d_s.clone();
                let g_d = grads.d.as_mut().expect("extended slot has d grads");
                for (i, mut col) in d_h.columns_mut().into_iter().enumerate() {
                    let gain = e.d.delta[i] - e.dbar.delta[i];
                    let h_col = cache.sub_h.column(i);
                    let s_col = d_s.column(i);
                    g_d[i] = s_col.dot(&h_col);
                    for (dv, &hv) in col.iter_mut().zip(h_col.iter()) {
                        *dv *= gain + e.sub.sigma.deriv(hv);
                    }
                }
                *grads.dbar.as_mut().expect("extended slot has dbar grads") = g_d.mapv(|v| -v);
                d_h
            }
        };
        grads.w = d_h.t().dot(&cache.sub_input);
        grads.b_w = d_h.sum_axis(Axis(0));
        delta = d_h.dot(&sub.w);

        for (layer, (input, z), slot) in itertools_rev(&self.pre, &cache.pre, &mut grads.pre) {
            let dz = &delta * &z.mapv(|v| layer.act.deriv(v));
            slot.0 = dz.t().dot(input);
            slot.1 = dz.sum_axis(Axis(0));
            delta = dz.dot(&layer.weight);
        }

        Ok((loss, grads))
    }

    /// All parameters flattened to one vector; layout matches
    /// [`ModelGrads::to_vec`]. Intended for finite-difference checks.
    pub fn param_vec(&self) -> Vec<f64> {
        let mut v = Vec::new();
        for l in &self.pre {
            v.extend(l.weight.iter());
            v.extend(l.bias.iter());
        }
        let sub = self.slot.submodule();
        v.extend(sub.w.iter());
        v.extend(sub.b_w.iter());
        v.extend(sub.a.iter());
        v.extend(sub.b_a.iter());
        if let SubmoduleSlot::Extended(e) = &self.slot {
            v.extend(e.d.delta.iter());
            v.extend(e.dbar.delta.iter());
        }
        for l in &self.post {
            v.extend(l.weight.iter());
            v.extend(l.bias.iter());
        }
        v
    }

    /// Writes a flattened parameter vector back; inverse of [`Model::param_vec`].
    pub fn set_param_vec(&mut self, values: &[f64]) {
        let mut it = values.iter().copied();
        let fill1 = |arr: &mut Array1<f64>, it: &mut dyn Iterator<Item = f64>| {
            for v in arr.iter_mut() {
                *v = it.next().expect("param vector too short");
            }
        };
        fn fill2(arr: &mut Array2<f64>, it: &mut dyn Iterator<Item = f64>) {
            for v in arr.iter_mut() {
                *v = it.next().expect("param vector too short");
            }
        }
        for l in &mut self.pre {
            fill2(&mut l.weight, &mut it);
            fill1(&mut l.bias, &mut it);
        }
        {
            let sub = self.slot.submodule_mut();
            fill2(&mut sub.w, &mut it);
            fill1(&mut sub.b_w, &mut it);
            fill2(&mut sub.a, &mut it);
            fill1(&mut sub.b_a, &mut it);
        }
        if let SubmoduleSlot::Extended(e) = &mut self.slot {
            fill1(&mut e.d.delta, &mut it);
            fill1(&mut e.dbar.delta, &mut it);
        }
        for l in &mut self.post {
            fill2(&mut l.weight, &mut it);
            fill1(&mut l.bias, &mut it);
        }
        assert!(it.next().is_none(), "param vector too long");
    }
}

impl Forward for Model {
    fn input_dim(&self) -> usize {
        Model::input_dim(self)
    }
    fn output_dim(&self) -> usize {
        Model::output_dim(self)
    }
    fn forward(&self, x: ArrayView1<f64>) -> Result<Array1<f64>> {
        let row = x.insert_axis(Axis(0));
        let out = self.forward_batch(row)?;
        Ok(out.index_axis(Axis(0), 0).to_owned())
    }
}

/// Reverse zip of layers, caches and gradient slots for the backward walks.
fn itertools_rev<'a>(
    layers: &'a [DenseLayer],
    caches: &'a [(Array2<f64>, Array2<f64>)],
    grads: &'a mut [(Array2<f64>, Array1<f64>)],
) -> impl Iterator<
    Item = (
        &'a DenseLayer,
        &'a (Array2<f64>, Array2<f64>),
        &'a mut (Array2<f64>, Array1<f64>),
    ),
> {
    layers
        .iter()
        .rev()
        .zip(caches.iter().rev())
        .zip(grads.iter_mut().rev())
        .map(|((l, c), g)| (l, c, g))
}

/// Numerically stable mean softmax cross-entropy and its logit gradient.
pub fn softmax_cross_entropy(
    logits: &Array2<f64>,
    labels: &[usize],
) -> Result<(f64, Array2<f64>)> {
    let n = logits.nrows();
    if n != labels.len() {
        return Err(Error::Shape(format!(
            "{} logit rows but {} labels",
            n,
            labels.len()
        )));
    }
    if n == 0 {
        return Err(Error::Shape("empty batch".into()));
    }
    let k = logits.ncols();
    let mut grad = Array2::zeros((n, k));
    let mut total = 0.0;
    for (row, (&label, mut grow)) in logits
        .rows()
        .into_iter()
        .zip(labels.iter().zip(grad.rows_mut()))
    {
        if label >= k {
            return Err(Error::Shape(format!(
                "label {label} out of range for {k} classes"
            )));
        }
        let m = row.fold(f64::NEG_INFINITY, |acc, &v| acc.max(v));
        let mut sum = 0.0;
        for &v in row {
            sum += (v - m).exp();
        }
        let lse = m + sum.ln();
        total += lse - row[label];
        for (j, g) in grow.iter_mut().enumerate() {
            let p = (row[j] - lse).exp();
            *g = (p - if j == label { 1.0 } else { 0.0 }) / n as f64;
        }
    }
    Ok((total / n as f64, grad))
}

/// Fraction of correct argmax predictions, in percent.
pub fn accuracy_percent(logits: &Array2<f64>, labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let correct = logits
        .rows()
        .into_iter()
        .zip(labels)
        .filter(|(row, &label)| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best == label
        })
        .count();
    100.0 * correct as f64 / labels.len() as f64
}
