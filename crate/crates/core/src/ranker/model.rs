use std::fmt::Debug;
use std::iter::Sum;

use num_traits::Float;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

pub trait Scalar: Float + Sum + Debug + Send + Sync + 'static {}
impl Scalar for f32 {}
impl Scalar for f64 {}

/// Hidden widths of the scoring branch; input is the multi-scale feature and
/// the head is a single score.
pub const DEFAULT_HIDDEN: [usize; 5] = [1024, 2048, 2048, 1024, 1024];

/// Layer widths `input -> hidden... -> 1`.
pub fn branch_dims(input_dim: usize, hidden: &[usize]) -> Vec<usize> {
    let mut dims = Vec::with_capacity(hidden.len() + 2);
    dims.push(input_dim);
    dims.extend_from_slice(hidden);
    dims.push(1);
    dims
}

/// Fully connected layer; `weights` is row-major `outputs x inputs`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> Dense<T> {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Dense {
            inputs,
            outputs,
            weights: vec![T::zero(); inputs * outputs],
            bias: vec![T::zero(); outputs],
        }
    }

    fn apply(&self, x: &[T], out: &mut Vec<T>) {
        out.clear();
        out.extend(
            self.weights
                .chunks_exact(self.inputs)
                .zip(&self.bias)
                .map(|(row, &b)| dot(row, x) + b),
        );
    }
}

#[inline]
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter()
        .zip(b)
        .fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

/// The shared scoring branch: ReLU between hidden layers, identity head.
///
/// Both members of a pair go through the same instance, so the two siamese
/// branches share every parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<T> {
    layers: Vec<Dense<T>>,
}

impl<T: Scalar> Mlp<T> {
    pub fn zeros(dims: &[usize]) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::Config(format!(
                "layer dims {dims:?} need at least two positive entries"
            )));
        }
        if *dims.last().unwrap() != 1 {
            return Err(Error::Config(format!(
                "score head must be 1-dimensional, got dims {dims:?}"
            )));
        }
        Ok(Mlp {
            layers: dims.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect(),
        })
    }

    /// Fan-in scaled normal init: `N(0, scale^2 * 2 / fan_in)`, zero biases.
    pub fn init(dims: &[usize], seed: u64, scale: f64) -> Result<Self> {
        let mut model = Self::zeros(dims)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in &mut model.layers {
            let std = scale * (2.0 / layer.inputs as f64).sqrt();
            let normal = Normal::new(0.0, std).map_err(|e| Error::Config(e.to_string()))?;
            for w in &mut layer.weights {
                *w = T::from(normal.sample(&mut rng)).unwrap();
            }
        }
        Ok(model)
    }

    pub fn from_layers(layers: Vec<Dense<T>>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Invalid("model needs at least one layer".into()));
        }
        for (k, pair) in layers.windows(2).enumerate() {
            if pair[0].outputs != pair[1].inputs {
                return Err(Error::Invalid(format!(
                    "layer chain broken between layers {k} and {}: {} outputs feed {} inputs",
                    k + 1,
                    pair[0].outputs,
                    pair[1].inputs
                )));
            }
        }
        for (k, l) in layers.iter().enumerate() {
            if l.weights.len() != l.inputs * l.outputs || l.bias.len() != l.outputs {
                return Err(Error::Invalid(format!("layer {k} has inconsistent block sizes")));
            }
        }
        if layers.last().unwrap().outputs != 1 {
            return Err(Error::Invalid("score head must have one output".into()));
        }
        Ok(Mlp { layers })
    }

    pub fn layers(&self) -> &[Dense<T>] {
        &self.layers
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut dims = vec![self.layers[0].inputs];
        dims.extend(self.layers.iter().map(|l| l.outputs));
        dims
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.bias).all(|v| v.is_finite()))
    }

    pub fn forward(&self, x: &[T]) -> Result<T> {
        if x.len() != self.input_dim() {
            return Err(Error::dim("ranker input", self.input_dim(), x.len()));
        }
        let mut cur = x.to_vec();
        let mut next = Vec::new();
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            layer.apply(&cur, &mut next);
            if k < last {
                relu_in_place(&mut next);
            }
            std::mem::swap(&mut cur, &mut next);
        }
        Ok(cur[0])
    }

    /// Forward pass keeping every post-activation vector (input included).
    pub(crate) fn trace(&self, x: &[T]) -> Vec<Vec<T>> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_vec());
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            let mut out = Vec::with_capacity(layer.outputs);
            layer.apply(acts.last().unwrap(), &mut out);
            if k < last {
                relu_in_place(&mut out);
            }
            acts.push(out);
        }
        acts
    }

    /// Accumulates `upstream * d(score)/d(theta)` into `grad`.
    pub(crate) fn backward(&self, acts: &[Vec<T>], upstream: T, grad: &mut Gradient<T>) {
        let mut delta = vec![upstream];
        for k in (0..self.layers.len()).rev() {
            let layer = &self.layers[k];
            let input = &acts[k];
            let (gw, gb) = &mut grad.layers[k];
            let mut prev = if k > 0 {
                vec![T::zero(); layer.inputs]
            } else {
                Vec::new()
            };
            for (o, &d) in delta.iter().enumerate() {
                if d == T::zero() {
                    continue;
                }
                gb[o] = gb[o] + d;
                let row = o * layer.inputs;
                for (g, &a) in gw[row..row + layer.inputs].iter_mut().zip(input) {
                    *g = *g + d * a;
                }
                if k > 0 {
                    for (p, &w) in prev
                        .iter_mut()
                        .zip(&layer.weights[row..row + layer.inputs])
                    {
                        *p = *p + d * w;
                    }
                }
            }
            if k > 0 {
                // ReLU derivative: the hidden activation is positive iff its
                // pre-activation was.
                for (p, &a) in prev.iter_mut().zip(input) {
                    if a <= T::zero() {
                        *p = T::zero();
                    }
                }
            }
            delta = prev;
        }
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    /// Flat parameter access: per layer, weights then biases.
    pub fn param(&self, mut i: usize) -> T {
        for l in &self.layers {
            if i < l.weights.len() {
                return l.weights[i];
            }
            i -= l.weights.len();
            if i < l.bias.len() {
                return l.bias[i];
            }
            i -= l.bias.len();
        }
        panic!("parameter index out of range");
    }

    pub fn set_param(&mut self, mut i: usize, v: T) {
        for l in &mut self.layers {
            if i < l.weights.len() {
                l.weights[i] = v;
                return;
            }
            i -= l.weights.len();
            if i < l.bias.len() {
                l.bias[i] = v;
                return;
            }
            i -= l.bias.len();
        }
        panic!("parameter index out of range");
    }

    pub fn cast<U: Scalar>(&self) -> Mlp<U> {
        let conv = |v: &[T]| v.iter().map(|&x| U::from(x).unwrap()).collect();
        Mlp {
            layers: self
                .layers
                .iter()
                .map(|l| Dense {
                    inputs: l.inputs,
                    outputs: l.outputs,
                    weights: conv(&l.weights),
                    bias: conv(&l.bias),
                })
                .collect(),
        }
    }

    /// `theta <- theta + step`, layer by layer.
    pub(crate) fn apply_step(&mut self, step: &Gradient<T>) {
        for (l, (sw, sb)) in self.layers.iter_mut().zip(&step.layers) {
            for (w, &s) in l.weights.iter_mut().zip(sw) {
                *w = *w + s;
            }
            for (b, &s) in l.bias.iter_mut().zip(sb) {
                *b = *b + s;
            }
        }
    }
}

fn relu_in_place<T: Scalar>(v: &mut [T]) {
    for x in v {
        if *x < T::zero() {
            *x = T::zero();
        }
    }
}

/// Parameter-shaped buffer (gradients, momentum).
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient<T> {
    pub(crate) layers: Vec<(Vec<T>, Vec<T>)>,
}

impl<T: Scalar> Gradient<T> {
    pub fn zeros_like(model: &Mlp<T>) -> Self {
        Gradient {
            layers: model
                .layers
                .iter()
                .map(|l| (vec![T::zero(); l.weights.len()], vec![T::zero(); l.bias.len()]))
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.layers.iter().map(|(w, b)| w.len() + b.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = T> + '_ {
        self.layers
            .iter()
            .flat_map(|(w, b)| w.iter().chain(b.iter()).copied())
    }

    pub fn is_zero(&self) -> bool {
        self.iter().all(|v| v == T::zero())
    }

    pub fn add_assign(&mut self, other: &Gradient<T>) {
        for ((aw, ab), (bw, bb)) in self.layers.iter_mut().zip(&other.layers) {
            for (a, &b) in aw.iter_mut().zip(bw) {
                *a = *a + b;
            }
            for (a, &b) in ab.iter_mut().zip(bb) {
                *a = *a + b;
            }
        }
    }

    pub fn scale(&mut self, c: T) {
        for (w, b) in &mut self.layers {
            for v in w.iter_mut().chain(b.iter_mut()) {
                *v = *v * c;
            }
        }
    }

    /// `self <- momentum * self - lr * grad`
    pub(crate) fn momentum_update(&mut self, grad: &Gradient<T>, momentum: T, lr: T) {
        for ((vw, vb), (gw, gb)) in self.layers.iter_mut().zip(&grad.layers) {
            for (v, &g) in vw.iter_mut().zip(gw) {
                *v = momentum * *v - lr * g;
            }
            for (v, &g) in vb.iter_mut().zip(gb) {
                *v = momentum * *v - lr * g;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_model_scores_zero() {
        let m = Mlp::<f32>::zeros(&[6, 4, 3, 1]).unwrap();
        assert_eq!(m.forward(&[1.0, -2.0, 3.0, 0.5, 9.0, 1.0]).unwrap(), 0.0);
    }

    #[test]
    fn full_size_zero_branch() {
        let dims = branch_dims(8192, &DEFAULT_HIDDEN);
        assert_eq!(dims, vec![8192, 1024, 2048, 2048, 1024, 1024, 1]);
        let m = Mlp::<f32>::zeros(&dims).unwrap();
        let x: Vec<f32> = (0..8192).map(|i| (i as f32).sin()).collect();
        assert_eq!(m.forward(&x).unwrap(), 0.0);
    }

    #[test]
    fn hand_set_two_two_one() {
        // h = relu(W1 x + b1), s = w2 . h + b2
        // W1 = [[1, -1], [0.5, 2]], b1 = [0, -1]; w2 = [2, -3], b2 = 0.5
        // x = [3, 1]: z1 = [2, 2.5], h = [2, 2.5]; s = 4 - 7.5 + 0.5 = -3
        // x = [1, 3]: z1 = [-2, 5.5], h = [0, 5.5]; s = -16.5 + 0.5 = -16
        let m = Mlp::from_layers(vec![
            Dense {
                inputs: 2,
                outputs: 2,
                weights: vec![1.0, -1.0, 0.5, 2.0],
                bias: vec![0.0, -1.0],
            },
            Dense {
                inputs: 2,
                outputs: 1,
                weights: vec![2.0, -3.0],
                bias: vec![0.5],
            },
        ])
        .unwrap();
        assert_eq!(m.forward(&[3.0f64, 1.0]).unwrap(), -3.0);
        assert_eq!(m.forward(&[1.0f64, 3.0]).unwrap(), -16.0);
    }

    #[test]
    fn dim_mismatch_is_error() {
        let m = Mlp::<f32>::zeros(&[4, 2, 1]).unwrap();
        assert!(matches!(
            m.forward(&[1.0; 3]),
            Err(Error::DimMismatch { expected: 4, actual: 3, .. })
        ));
    }

    #[test]
    fn rejects_vector_head() {
        assert!(Mlp::<f32>::zeros(&[8, 4, 2]).is_err());
    }

    #[test]
    fn broken_chain_rejected() {
        let l1 = Dense::<f32>::zeros(4, 3);
        let l2 = Dense::<f32>::zeros(2, 1);
        assert!(Mlp::from_layers(vec![l1, l2]).is_err());
    }

    #[test]
    fn init_is_seeded() {
        let a = Mlp::<f32>::init(&[8, 4, 1], 7, 1.0).unwrap();
        let b = Mlp::<f32>::init(&[8, 4, 1], 7, 1.0).unwrap();
        let c = Mlp::<f32>::init(&[8, 4, 1], 8, 1.0).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.is_finite());
    }

    #[test]
    fn flat_param_indexing() {
        let mut m = Mlp::<f64>::zeros(&[3, 2, 1]).unwrap();
        assert_eq!(m.param_count(), 3 * 2 + 2 + 2 + 1);
        m.set_param(7, 4.0); // second hidden bias
        assert_eq!(m.layers()[0].bias[1], 4.0);
        m.set_param(10, -1.0); // head bias
        assert_eq!(m.layers()[1].bias[0], -1.0);
        assert_eq!(m.param(10), -1.0);
    }
}
