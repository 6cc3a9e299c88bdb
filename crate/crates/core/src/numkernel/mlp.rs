use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::rng_from;
use crate::scalar::Scalar;

use super::loss::softmax_rows;
use super::matrix::{dot, Matrix};

/// Hidden widths used when a caller does not pick its own.
pub const DEFAULT_HIDDEN: [usize; 2] = [32, 16];

/// Dense feed-forward classifier: rectifier hidden layers, softmax output.
///
/// Layer `l` maps `layer_dims[l]` inputs to `layer_dims[l + 1]` outputs with a
/// weight matrix stored `(out, in)`. The last hidden activation is exposed as
/// the penultimate feature vector (the input itself when there are no hidden
/// layers).
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp<T> {
    layer_dims: Vec<usize>,
    weights: Vec<Matrix<T>>,
    biases: Vec<Vec<T>>,
}

/// Output of a forward pass.
#[derive(Clone, Debug)]
pub struct Forward<T> {
    pub probs: Matrix<T>,
    pub penultimate: Matrix<T>,
}

/// Everything the backward pass needs: the input and every post-activation.
#[derive(Clone, Debug)]
pub struct Trace<T> {
    /// `activations[0]` is the input; `activations[l]` the rectified output of layer `l - 1`.
    activations: Vec<Matrix<T>>,
    pub probs: Matrix<T>,
}

impl<T: Scalar> Trace<T> {
    pub fn penultimate(&self) -> &Matrix<T> {
        self.activations.last().expect("trace holds the input")
    }
}

/// Parameter-shaped gradient buffers.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<T> {
    pub weights: Vec<Matrix<T>>,
    pub biases: Vec<Vec<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn zeros_like(model: &Mlp<T>) -> Self {
        Self {
            weights: model
                .weights
                .iter()
                .map(|w| Matrix::zeros(w.rows(), w.cols()))
                .collect(),
            biases: model.biases.iter().map(|b| vec![T::zero(); b.len()]).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients<T>) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            for (x, y) in a.values_mut().iter_mut().zip(b.values()) {
                *x += *y;
            }
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += *y;
            }
        }
    }

    pub fn scale(&mut self, s: T) {
        for w in &mut self.weights {
            w.values_mut().iter_mut().for_each(|v| *v *= s);
        }
        for b in &mut self.biases {
            b.iter_mut().for_each(|v| *v *= s);
        }
    }

    /// Fails with the index of the first layer holding a NaN or infinity.
    pub fn check_finite(&self) -> Result<()> {
        for (layer, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            if !w.is_finite() || b.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteGradient { layer });
            }
        }
        Ok(())
    }

    /// Flattened in the same order as [`Mlp::param`].
    pub fn flatten(&self) -> Vec<T> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w.values());
            out.extend_from_slice(b);
        }
        out
    }
}

impl<T: Scalar> Mlp<T> {
    /// Uniform ±sqrt(6 / (fan_in + fan_out)) weights, zero biases.
    pub fn new_seeded(layer_dims: &[usize], seed: u64) -> Result<Self> {
        validate_dims(layer_dims)?;
        let mut rng = rng_from(seed);
        let mut weights = Vec::with_capacity(layer_dims.len() - 1);
        let mut biases = Vec::with_capacity(layer_dims.len() - 1);
        for pair in layer_dims.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let values = (0..fan_in * fan_out)
                .map(|_| T::lit(rng.random_range(-bound..bound)))
                .collect();
            weights.push(Matrix::from_vec(fan_out, fan_in, values)?);
            biases.push(vec![T::zero(); fan_out]);
        }
        Ok(Self {
            layer_dims: layer_dims.to_vec(),
            weights,
            biases,
        })
    }

    pub fn zeros(layer_dims: &[usize]) -> Result<Self> {
        validate_dims(layer_dims)?;
        Ok(Self {
            layer_dims: layer_dims.to_vec(),
            weights: layer_dims
                .windows(2)
                .map(|p| Matrix::zeros(p[1], p[0]))
                .collect(),
            biases: layer_dims.windows(2).map(|p| vec![T::zero(); p[1]]).collect(),
        })
    }

    pub fn from_parts(
        layer_dims: Vec<usize>,
        weights: Vec<Matrix<T>>,
        biases: Vec<Vec<T>>,
    ) -> Result<Self> {
        validate_dims(&layer_dims)?;
        let layers = layer_dims.len() - 1;
        if weights.len() != layers || biases.len() != layers {
            return Err(Error::Shape(format!(
                "{layers} layers but {} weight matrices and {} bias vectors",
                weights.len(),
                biases.len()
            )));
        }
        for (l, (w, b)) in weights.iter().zip(&biases).enumerate() {
            let (fan_in, fan_out) = (layer_dims[l], layer_dims[l + 1]);
            if w.rows() != fan_out || w.cols() != fan_in || b.len() != fan_out {
                return Err(Error::Shape(format!(
                    "layer {l}: weight {}x{}, bias {}, expected {fan_out}x{fan_in}, {fan_out}",
                    w.rows(),
                    w.cols(),
                    b.len()
                )));
            }
        }
        Ok(Self {
            layer_dims,
            weights,
            biases,
        })
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn weights(&self) -> &[Matrix<T>] {
        &self.weights
    }

    pub fn biases(&self) -> &[Vec<T>] {
        &self.biases
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn num_classes(&self) -> usize {
        *self.layer_dims.last().expect("validated dims")
    }

    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn forward(&self, batch: &Matrix<T>) -> Result<Forward<T>> {
        let mut trace = self.forward_trace(batch)?;
        Ok(Forward {
            penultimate: trace.activations.pop().expect("trace holds the input"),
            probs: trace.probs,
        })
    }

    pub fn forward_trace(&self, batch: &Matrix<T>) -> Result<Trace<T>> {
        if batch.cols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "batch has {} columns, model expects {}",
                batch.cols(),
                self.input_dim()
            )));
        }
        let last = self.num_layers() - 1;
        let mut activations = Vec::with_capacity(self.num_layers());
        let mut current = batch.clone();
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = current.matmul_transposed(w)?;
            for r in 0..z.rows() {
                for (v, &bias) in z.row_mut(r).iter_mut().zip(b) {
                    *v += bias;
                    if l != last && *v < T::zero() {
                        *v = T::zero();
                    }
                }
            }
            activations.push(std::mem::replace(&mut current, z));
        }
        softmax_rows(&mut current);
        Ok(Trace {
            activations,
            probs: current,
        })
    }

    /// Backpropagates `dlogits` (gradient of the loss with respect to the
    /// pre-softmax outputs, one row per sample). Gradients are summed over rows.
    pub fn backward(&self, trace: &Trace<T>, dlogits: &Matrix<T>) -> Result<Gradients<T>> {
        let n = trace.probs.rows();
        if dlogits.rows() != n || dlogits.cols() != self.num_classes() {
            return Err(Error::Shape(format!(
                "dlogits {}x{}, expected {n}x{}",
                dlogits.rows(),
                dlogits.cols(),
                self.num_classes()
            )));
        }
        let mut grads = Gradients::zeros_like(self);
        let mut delta = dlogits.clone();
        for l in (0..self.num_layers()).rev() {
            let input = &trace.activations[l];
            let w = &self.weights[l];
            let gw = &mut grads.weights[l];
            let gb = &mut grads.biases[l];
            for r in 0..n {
                let d = delta.row(r);
                let a = input.row(r);
                for (o, &dv) in d.iter().enumerate() {
                    if dv == T::zero() {
                        continue;
                    }
                    gb[o] += dv;
                    for (g, &av) in gw.row_mut(o).iter_mut().zip(a) {
                        *g += dv * av;
                    }
                }
            }
            if l > 0 {
                let mut prev = Matrix::zeros(n, w.cols());
                for r in 0..n {
                    let d = delta.row(r);
                    let a = input.row(r);
                    let dst = prev.row_mut(r);
                    for (i, p) in dst.iter_mut().enumerate() {
                        if a[i] > T::zero() {
                            let mut acc = T::zero();
                            for (o, &dv) in d.iter().enumerate() {
                                acc += dv * w.get(o, i);
                            }
                            *p = acc;
                        }
                    }
                }
                delta = prev;
            }
        }
        Ok(grads)
    }

    /// `θ ← θ − lr · g`.
    pub fn apply_gradients(&mut self, grads: &Gradients<T>, lr: T) {
        for (w, g) in self.weights.iter_mut().zip(&grads.weights) {
            for (p, &gv) in w.values_mut().iter_mut().zip(g.values()) {
                *p -= lr * gv;
            }
        }
        for (b, g) in self.biases.iter_mut().zip(&grads.biases) {
            for (p, &gv) in b.iter_mut().zip(g) {
                *p -= lr * gv;
            }
        }
    }

    pub fn num_params(&self) -> usize {
        self.weights
            .iter()
            .zip(&self.biases)
            .map(|(w, b)| w.values().len() + b.len())
            .sum()
    }

    /// Parameter by flat index: per layer, weights row-major, then biases.
    pub fn param(&self, idx: usize) -> T {
        let (l, off) = self.locate(idx);
        let w = &self.weights[l];
        if off < w.values().len() {
            w.values()[off]
        } else {
            self.biases[l][off - w.values().len()]
        }
    }

    pub fn set_param(&mut self, idx: usize, v: T) {
        let (l, off) = self.locate(idx);
        let wlen = self.weights[l].values().len();
        if off < wlen {
            self.weights[l].values_mut()[off] = v;
        } else {
            self.biases[l][off - wlen] = v;
        }
    }

    fn locate(&self, mut idx: usize) -> (usize, usize) {
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let len = w.values().len() + b.len();
            if idx < len {
                return (l, idx);
            }
            idx -= len;
        }
        panic!("parameter index out of range");
    }

    /// Logits for a single row; used where a full trace would be wasteful.
    pub fn logits_row(&self, x: &[T]) -> Vec<T> {
        let last = self.num_layers() - 1;
        let mut current = x.to_vec();
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            current = (0..w.rows())
                .map(|o| {
                    let v = dot(w.row(o), &current) + b[o];
                    if l != last && v < T::zero() {
                        T::zero()
                    } else {
                        v
                    }
                })
                .collect();
        }
        current
    }
}

fn validate_dims(dims: &[usize]) -> Result<()> {
    if dims.len() < 2 {
        return Err(Error::Shape(format!(
            "need at least input and output dims, got {dims:?}"
        )));
    }
    if dims.contains(&0) {
        return Err(Error::Shape(format!("zero-width layer in {dims:?}")));
    }
    Ok(())
}
