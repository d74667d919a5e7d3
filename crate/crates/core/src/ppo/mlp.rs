use std::fmt;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Sigmoid,
    Relu,
    Tanh,
}

impl Activation {
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `a`.
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Sigmoid => a * (1.0 - a),
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
        }
    }

    fn hidden_gain(self) -> f64 {
        match self {
            Activation::Relu => std::f64::consts::SQRT_2,
            Activation::Tanh => 5.0 / 3.0,
            Activation::Sigmoid => 1.0,
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Sigmoid => "sigmoid",
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        })
    }
}

impl std::str::FromStr for Activation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "sigmoid" => Ok(Activation::Sigmoid),
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            other => Err(format!("unknown activation `{other}`")),
        }
    }
}

/// Fully connected network: activation on every hidden layer, linear output.
///
/// Parameters live in one flat vector; layer `l` stores its `out × in` weights
/// row-major followed by its `out` biases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    sizes: Vec<usize>,
    activation: Activation,
    params: Vec<f64>,
}

/// Intermediate values kept from a forward pass for backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input to each layer, plus the final output.
    inputs: Vec<Vec<f64>>,
    /// Pre-activations of each layer.
    pre: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        self.inputs.last().expect("cache holds the output")
    }

    pub fn pre_activations(&self) -> &[Vec<f64>] {
        &self.pre
    }
}

fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl Mlp {
    pub fn zeros(sizes: &[usize], activation: Activation) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs input and output sizes");
        assert!(sizes.iter().all(|s| *s > 0), "layer sizes must be positive");
        Self {
            sizes: sizes.to_vec(),
            activation,
            params: vec![0.0; param_count(sizes)],
        }
    }

    /// Orthogonal weights (gain per activation on hidden layers, `output_gain` on the
    /// last layer) and zero biases.
    pub fn orthogonal<R: Rng + ?Sized>(
        sizes: &[usize],
        activation: Activation,
        output_gain: f64,
        rng: &mut R,
    ) -> Self {
        let mut net = Self::zeros(sizes, activation);
        let n_layers = sizes.len() - 1;
        let mut offset = 0;
        for l in 0..n_layers {
            let (fan_in, fan_out) = (sizes[l], sizes[l + 1]);
            let gain = if l + 1 == n_layers {
                output_gain
            } else {
                activation.hidden_gain()
            };
            let w = orthogonal_matrix(fan_out, fan_in, rng);
            for (dst, src) in net.params[offset..offset + fan_in * fan_out]
                .iter_mut()
                .zip(w)
            {
                *dst = gain * src;
            }
            offset += fan_in * fan_out + fan_out;
        }
        net
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_len(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_len(&self) -> usize {
        *self.sizes.last().expect("sizes checked at construction")
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.forward_cached(x).inputs.pop().expect("output present")
    }

    pub fn forward_cached(&self, x: &[f64]) -> ForwardCache {
        assert_eq!(
            x.len(),
            self.input_len(),
            "input has {} entries, network expects {}",
            x.len(),
            self.input_len()
        );
        let n_layers = self.sizes.len() - 1;
        let mut inputs = Vec::with_capacity(n_layers + 1);
        let mut pre = Vec::with_capacity(n_layers);
        inputs.push(x.to_vec());
        let mut offset = 0;
        for l in 0..n_layers {
            let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
            let w = &self.params[offset..offset + fan_in * fan_out];
            let b = &self.params[offset + fan_in * fan_out..offset + fan_in * fan_out + fan_out];
            let a = &inputs[l];
            let z: Vec<f64> = (0..fan_out)
                .map(|o| {
                    let row = &w[o * fan_in..(o + 1) * fan_in];
                    b[o] + row.iter().zip(a).map(|(wi, ai)| wi * ai).sum::<f64>()
                })
                .collect();
            let out = if l + 1 == n_layers {
                z.clone()
            } else {
                z.iter().map(|v| self.activation.apply(*v)).collect()
            };
            pre.push(z);
            inputs.push(out);
            offset += fan_in * fan_out + fan_out;
        }
        ForwardCache { inputs, pre }
    }

    /// Accumulates `∂(d_out · output)/∂params` into `grad`.
    pub fn backward(&self, cache: &ForwardCache, d_out: &[f64], grad: &mut [f64]) {
        assert_eq!(d_out.len(), self.output_len());
        assert_eq!(grad.len(), self.params.len());
        let n_layers = self.sizes.len() - 1;
        let mut offsets = Vec::with_capacity(n_layers);
        let mut offset = 0;
        for l in 0..n_layers {
            offsets.push(offset);
            offset += self.sizes[l] * self.sizes[l + 1] + self.sizes[l + 1];
        }
        let mut delta = d_out.to_vec();
        for l in (0..n_layers).rev() {
            let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
            let off = offsets[l];
            let a = &cache.inputs[l];
            for o in 0..fan_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                let row = &mut grad[off + o * fan_in..off + (o + 1) * fan_in];
                for (g, ai) in row.iter_mut().zip(a) {
                    *g += d * ai;
                }
                grad[off + fan_in * fan_out + o] += d;
            }
            if l == 0 {
                break;
            }
            let w = &self.params[off..off + fan_in * fan_out];
            let mut prev = vec![0.0; fan_in];
            for o in 0..fan_out {
                let d = delta[o];
                for (p, wi) in prev.iter_mut().zip(&w[o * fan_in..(o + 1) * fan_in]) {
                    *p += wi * d;
                }
            }
            let (z, act) = (&cache.pre[l - 1], &cache.inputs[l]);
            for i in 0..fan_in {
                prev[i] *= self.activation.derivative(z[i], act[i]);
            }
            delta = prev;
        }
    }
}

/// `rows × cols` matrix (row-major) with orthonormal rows or columns, whichever is fewer.
fn orthogonal_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Vec<f64> {
    let (long, short) = (rows.max(cols), rows.min(cols));
    // `short` Gram-Schmidt vectors of length `long`
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(short);
    while basis.len() < short {
        let mut v: Vec<f64> = (0..long).map(|_| rng.sample(StandardNormal)).collect();
        for b in &basis {
            let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            for (x, y) in v.iter_mut().zip(b) {
                *x -= dot * y;
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            v.iter_mut().for_each(|x| *x /= norm);
            basis.push(v);
        }
    }
    let mut m = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            m[r * cols + c] = if rows <= cols {
                basis[r][c]
            } else {
                basis[c][r]
            };
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_network_gives_zero_logits() {
        let net = Mlp::zeros(&[13, 6, 4, 3], Activation::Sigmoid);
        assert_eq!(net.forward(&[1.5; 13]), vec![0.0; 3]);
        assert_eq!(net.num_params(), 13 * 6 + 6 + 6 * 4 + 4 + 4 * 3 + 3);
    }

    #[test]
    fn relu_blocks_negative_inputs() {
        let mut net = Mlp::zeros(&[3, 3, 3], Activation::Relu);
        let p = net.params_mut();
        for i in 0..3 {
            p[i * 3 + i] = 1.0; // identity hidden layer
            p[12 + i * 3 + i] = 1.0; // identity output layer
        }
        assert_eq!(net.forward(&[-1.0, -2.0, -0.5]), vec![0.0; 3]);
        assert_eq!(net.forward(&[1.0, -2.0, 0.5]), vec![1.0, 0.0, 0.5]);
    }

    #[test]
    fn forward_matches_naive_matrix_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for act in [Activation::Sigmoid, Activation::Relu, Activation::Tanh] {
            let net = Mlp::orthogonal(&[5, 4, 3, 2], act, 1.0, &mut rng);
            let mut net = net;
            for p in net.params_mut() {
                *p += rng.gen_range(-0.5..0.5);
            }
            let x: Vec<f64> = (0..5).map(|_| rng.gen_range(-2.0..2.0)).collect();

            // explicit matrices
            let p = net.params();
            let w1: Vec<Vec<f64>> = (0..4).map(|o| p[o * 5..o * 5 + 5].to_vec()).collect();
            let b1 = &p[20..24];
            let w2: Vec<Vec<f64>> = (0..3)
                .map(|o| p[24 + o * 4..24 + o * 4 + 4].to_vec())
                .collect();
            let b2 = &p[36..39];
            let w3: Vec<Vec<f64>> = (0..2)
                .map(|o| p[39 + o * 3..39 + o * 3 + 3].to_vec())
                .collect();
            let b3 = &p[45..47];
            let mv = |w: &Vec<Vec<f64>>, b: &[f64], v: &[f64]| -> Vec<f64> {
                w.iter()
                    .zip(b)
                    .map(|(row, bi)| row.iter().zip(v).fold(*bi, |s, (a, c)| s + a * c))
                    .collect()
            };
            let h1: Vec<f64> = mv(&w1, b1, &x).into_iter().map(|z| act.apply(z)).collect();
            let h2: Vec<f64> = mv(&w2, b2, &h1).into_iter().map(|z| act.apply(z)).collect();
            let out = mv(&w3, b3, &h2);
            for (a, b) in net.forward(&x).iter().zip(&out) {
                assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
            }
        }
    }

    #[test]
    fn orthogonal_init_has_orthonormal_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = orthogonal_matrix(3, 7, &mut rng);
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..7).map(|k| m[i * 7 + k] * m[j * 7 + k]).sum();
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((dot - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    #[should_panic(expected = "network expects")]
    fn shape_mismatch_panics() {
        Mlp::zeros(&[3, 2], Activation::Tanh).forward(&[1.0]);
    }
}
