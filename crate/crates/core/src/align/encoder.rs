use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::loss::Embedding;
use super::AlignError;
use crate::seeding::stream_rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum EncoderKind {
    Linear,
    /// One tanh hidden layer.
    Mlp { hidden: usize },
}

#[derive(Debug, Clone, PartialEq)]
struct Layer {
    /// `out x in`.
    weight: Array2<f64>,
    bias: Array1<f64>,
}

/// Affine (or one-hidden-layer tanh) map from `d_in` to `d_out`.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    kind: EncoderKind,
    d_in: usize,
    d_out: usize,
    layers: Vec<Layer>,
    pub trainable: bool,
}

/// Parameter gradients, flattened in [`EncoderParams::to_flat`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderGrads(pub Vec<f64>);

/// Activations kept for the backward pass.
pub struct ForwardCache {
    input: Array2<f64>,
    hidden: Option<Array2<f64>>,
}

fn layer_shapes(kind: EncoderKind, d_in: usize, d_out: usize) -> Vec<(usize, usize)> {
    match kind {
        EncoderKind::Linear => vec![(d_out, d_in)],
        EncoderKind::Mlp { hidden } => vec![(hidden, d_in), (d_out, hidden)],
    }
}

impl EncoderParams {
    /// Weights and biases drawn uniformly from `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn init(kind: EncoderKind, d_in: usize, d_out: usize, seed: u64) -> Self {
        let mut rng = stream_rng(seed, "encoder-init", 0);
        let layers = layer_shapes(kind, d_in, d_out)
            .into_iter()
            .map(|(rows, cols)| {
                let bound = 1.0 / (cols as f64).sqrt();
                Layer {
                    weight: Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-bound..=bound)),
                    bias: Array1::from_shape_simple_fn(rows, || rng.random_range(-bound..=bound)),
                }
            })
            .collect();
        Self {
            kind,
            d_in,
            d_out,
            layers,
            trainable: true,
        }
    }

    pub fn identity(d: usize) -> Self {
        Self {
            kind: EncoderKind::Linear,
            d_in: d,
            d_out: d,
            layers: vec![Layer {
                weight: Array2::eye(d),
                bias: Array1::zeros(d),
            }],
            trainable: true,
        }
    }

    pub fn zeros(kind: EncoderKind, d_in: usize, d_out: usize) -> Self {
        Self {
            kind,
            d_in,
            d_out,
            layers: layer_shapes(kind, d_in, d_out)
                .into_iter()
                .map(|(r, c)| Layer {
                    weight: Array2::zeros((r, c)),
                    bias: Array1::zeros(r),
                })
                .collect(),
            trainable: true,
        }
    }

    /// Builds a linear encoder from an explicit `d_out x d_in` weight and bias.
    pub fn linear(weight: Array2<f64>, bias: Array1<f64>) -> Result<Self, AlignError> {
        if weight.nrows() != bias.len() {
            return Err(AlignError::ShapeMismatch(format!(
                "weight has {} rows, bias has {} entries",
                weight.nrows(),
                bias.len()
            )));
        }
        let (d_out, d_in) = weight.dim();
        Ok(Self {
            kind: EncoderKind::Linear,
            d_in,
            d_out,
            layers: vec![Layer { weight, bias }],
            trainable: true,
        })
    }

    pub fn kind(&self) -> EncoderKind {
        self.kind
    }
    pub fn input_dim(&self) -> usize {
        self.d_in
    }
    pub fn output_dim(&self) -> usize {
        self.d_out
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// Weights (row-major) then bias, layer by layer.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend(l.weight.iter());
            out.extend(l.bias.iter());
        }
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<(), AlignError> {
        if flat.len() != self.num_params() {
            return Err(AlignError::ShapeMismatch(format!(
                "expected {} parameters, got {}",
                self.num_params(),
                flat.len()
            )));
        }
        if flat.iter().any(|v| !v.is_finite()) {
            return Err(AlignError::NonFinite("encoder parameters"));
        }
        let mut rest = flat;
        for l in &mut self.layers {
            let (w, tail) = rest.split_at(l.weight.len());
            l.weight.iter_mut().zip(w).for_each(|(d, s)| *d = *s);
            let (b, tail) = tail.split_at(l.bias.len());
            l.bias.iter_mut().zip(b).for_each(|(d, s)| *d = *s);
            rest = tail;
        }
        Ok(())
    }

    pub fn from_flat(kind: EncoderKind, d_in: usize, d_out: usize, flat: &[f64]) -> Result<Self, AlignError> {
        let mut p = Self::zeros(kind, d_in, d_out);
        p.set_flat(flat)?;
        Ok(p)
    }

    pub fn encode(&self, input: &[f64]) -> Result<Embedding, AlignError> {
        if input.len() != self.d_in {
            return Err(AlignError::DimensionMismatch {
                expected: self.d_in,
                got: input.len(),
            });
        }
        let x = Array2::from_shape_vec((1, self.d_in), input.to_vec()).expect("shape checked");
        let y = self.encode_batch(&x)?;
        Embedding::new(y.row(0).to_vec())
    }

    /// Encodes each row of `inputs` (`batch x d_in`).
    pub fn encode_batch(&self, inputs: &Array2<f64>) -> Result<Array2<f64>, AlignError> {
        Ok(self.forward(inputs)?.0)
    }

    pub fn forward(&self, inputs: &Array2<f64>) -> Result<(Array2<f64>, ForwardCache), AlignError> {
        if inputs.ncols() != self.d_in {
            return Err(AlignError::DimensionMismatch {
                expected: self.d_in,
                got: inputs.ncols(),
            });
        }
        let affine = |l: &Layer, x: &Array2<f64>| x.dot(&l.weight.t()) + &l.bias;
        match self.kind {
            EncoderKind::Linear => Ok((
                affine(&self.layers[0], inputs),
                ForwardCache {
                    input: inputs.clone(),
                    hidden: None,
                },
            )),
            EncoderKind::Mlp { .. } => {
                let hidden = affine(&self.layers[0], inputs).mapv(f64::tanh);
                let out = affine(&self.layers[1], &hidden);
                Ok((
                    out,
                    ForwardCache {
                        input: inputs.clone(),
                        hidden: Some(hidden),
                    },
                ))
            }
        }
    }

    /// Parameter gradients given `dL/d output` (`batch x d_out`).
    pub fn backward(&self, cache: &ForwardCache, grad_out: &Array2<f64>) -> EncoderGrads {
        let layer_grad = |g: &Array2<f64>, x: &Array2<f64>| -> (Array2<f64>, Array1<f64>) {
            (g.t().dot(x), g.sum_axis(Axis(0)))
        };
        let mut flat = Vec::with_capacity(self.num_params());
        match (&self.kind, &cache.hidden) {
            (EncoderKind::Mlp { .. }, Some(hidden)) => {
                let (w2, b2) = layer_grad(grad_out, hidden);
                let d_hidden = grad_out.dot(&self.layers[1].weight) * hidden.mapv(|h| 1.0 - h * h);
                let (w1, b1) = layer_grad(&d_hidden, &cache.input);
                flat.extend(w1.iter());
                flat.extend(b1.iter());
                flat.extend(w2.iter());
                flat.extend(b2.iter());
            }
            _ => {
                let (w, b) = layer_grad(grad_out, &cache.input);
                flat.extend(w.iter());
                flat.extend(b.iter());
            }
        }
        EncoderGrads(flat)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::align::gradcheck::finite_diff_gradcheck;

    #[test]
    fn identity_and_zero() {
        let x = [0.5, -1.0, 2.0];
        assert_eq!(EncoderParams::identity(3).encode(&x).unwrap().as_slice(), &x);
        let z = EncoderParams::zeros(EncoderKind::Linear, 3, 4).encode(&x).unwrap();
        assert_eq!(z.as_slice(), &[0.0; 4]);
        assert!(EncoderParams::identity(3).encode(&[1.0]).is_err());
    }

    #[test]
    fn matches_triple_loop_oracle() {
        let p = EncoderParams::init(EncoderKind::Linear, 5, 3, 11);
        let x = [0.3, -0.2, 0.9, 1.1, -0.7];
        let y = p.encode(&x).unwrap();
        let flat = p.to_flat();
        for o in 0..3 {
            let mut acc = flat[15 + o];
            for i in 0..5 {
                acc += flat[o * 5 + i] * x[i];
            }
            assert!((acc - y.as_slice()[o]).abs() < 1e-12);
        }
    }

    #[test]
    fn flat_round_trip() {
        let p = EncoderParams::init(EncoderKind::Mlp { hidden: 4 }, 3, 2, 5);
        let q = EncoderParams::from_flat(p.kind(), 3, 2, &p.to_flat()).unwrap();
        assert_eq!(p, q);
        assert!(EncoderParams::zeros(EncoderKind::Linear, 2, 2).set_flat(&[1.0]).is_err());
    }

    #[test]
    fn backward_matches_finite_differences() {
        for kind in [EncoderKind::Linear, EncoderKind::Mlp { hidden: 5 }] {
            let p = EncoderParams::init(kind, 4, 3, 2);
            let x = Array2::from_shape_fn((3, 4), |(i, j)| ((i * 7 + j * 3) as f64).sin());
            let target = Array2::from_shape_fn((3, 3), |(i, j)| ((i + 2 * j) as f64).cos());
            // L = 0.5 * |f(x) - target|^2
            let loss = |flat: &[f64]| {
                let q = EncoderParams::from_flat(kind, 4, 3, flat).unwrap();
                let y = q.encode_batch(&x).unwrap();
                0.5 * (&y - &target).mapv(|v| v * v).sum()
            };
            let (y, cache) = p.forward(&x).unwrap();
            let g = p.backward(&cache, &(&y - &target));
            let check = finite_diff_gradcheck(loss, &p.to_flat(), &g.0, 1e-5).unwrap();
            assert!(check.max_rel_error < 1e-7, "{kind:?}: {check:?}");
        }
    }
}
