use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Fully connected layer, `weight` row-major `outputs × inputs`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense<T> {
    pub inputs: usize,
    pub outputs: usize,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Real> Dense<T> {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self { inputs, outputs, weight: vec![T::zero(); inputs * outputs], bias: vec![T::zero(); outputs] }
    }

    fn forward_into(&self, x: &[T], y: &mut [T]) {
        for (o, out) in y.iter_mut().enumerate() {
            let row = &self.weight[o * self.inputs..(o + 1) * self.inputs];
            let mut s = self.bias[o];
            for (w, v) in row.iter().zip(x) {
                s = s + *w * *v;
            }
            *out = s;
        }
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MlpShape<'a> {
    pub input: usize,
    pub hidden: &'a [usize],
    pub output: usize,
}

/// ReLU on hidden layers, linear output.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp<T> {
    pub layers: Vec<Dense<T>>,
}

/// Layer inputs saved by the forward pass; `inputs[0]` is the network input.
#[derive(Clone, Debug, Default)]
pub struct MlpCache<T> {
    inputs: Vec<Vec<T>>,
}

impl<T: Real> Mlp<T> {
    pub fn zeros(shape: MlpShape<'_>) -> Self {
        let mut dims = vec![shape.input];
        dims.extend_from_slice(shape.hidden);
        dims.push(shape.output);
        Self { layers: dims.windows(2).map(|d| Dense::zeros(d[0], d[1])).collect() }
    }

    /// He-uniform hidden layers and an all-zero output layer.
    pub fn init<R: Rng>(shape: MlpShape<'_>, rng: &mut R) -> Self {
        let mut mlp = Self::zeros(shape);
        let n = mlp.layers.len();
        for layer in mlp.layers.iter_mut().take(n - 1) {
            let bound = (6.0 / layer.inputs as f64).sqrt();
            for w in layer.weight.iter_mut() {
                *w = T::lit(rng.gen_range(-bound..bound));
            }
        }
        mlp
    }

    pub fn from_layers(layers: Vec<Dense<T>>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidConfig("MLP needs at least one layer".into()));
        }
        for pair in layers.windows(2) {
            if pair[0].outputs != pair[1].inputs {
                return Err(Error::DimensionMismatch { what: "MLP layer chain", expected: pair[0].outputs, got: pair[1].inputs });
            }
        }
        for l in &layers {
            if l.weight.len() != l.inputs * l.outputs || l.bias.len() != l.outputs {
                return Err(Error::DimensionMismatch { what: "MLP layer parameters", expected: l.inputs * l.outputs, got: l.weight.len() });
            }
        }
        Ok(Self { layers })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().outputs
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Dense::param_count).sum()
    }

    pub fn forward(&self, x: &[T]) -> Result<(Vec<T>, MlpCache<T>)> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch { what: "MLP input", expected: self.input_dim(), got: x.len() });
        }
        let mut cache = MlpCache { inputs: Vec::with_capacity(self.layers.len()) };
        let mut cur = x.to_vec();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut next = vec![T::zero(); layer.outputs];
            layer.forward_into(&cur, &mut next);
            if i < last {
                next.iter_mut().for_each(|v| *v = v.max(T::zero()));
            }
            cache.inputs.push(cur);
            cur = next;
        }
        Ok((cur, cache))
    }

    /// Reverse pass: adds parameter gradients into `grad` (laid out as
    /// [`Mlp::flatten_into`]) and returns the gradient with respect to the input.
    pub fn backward_accumulate(&self, cache: &MlpCache<T>, upstream: &[T], grad: &mut [T]) -> Vec<T> {
        let mut offsets = Vec::with_capacity(self.layers.len());
        let mut off = 0;
        for l in &self.layers {
            offsets.push(off);
            off += l.param_count();
        }
        let mut d_out = upstream.to_vec();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let x = &cache.inputs[i];
            let (gw, gb) = grad[offsets[i]..offsets[i] + layer.param_count()].split_at_mut(layer.weight.len());
            let mut d_in = vec![T::zero(); layer.inputs];
            for (o, &g) in d_out.iter().enumerate() {
                if g == T::zero() {
                    continue;
                }
                gb[o] = gb[o] + g;
                let row = &layer.weight[o * layer.inputs..(o + 1) * layer.inputs];
                let grow = &mut gw[o * layer.inputs..(o + 1) * layer.inputs];
                for k in 0..layer.inputs {
                    grow[k] = grow[k] + g * x[k];
                    d_in[k] = d_in[k] + g * row[k];
                }
            }
            if i > 0 {
                // x is the ReLU output of the previous layer
                for (d, v) in d_in.iter_mut().zip(x) {
                    if *v <= T::zero() {
                        *d = T::zero();
                    }
                }
            }
            d_out = d_in;
        }
        d_out
    }

    /// Reverse pass returning `(parameter gradient, input gradient)`.
    pub fn backward(&self, cache: &MlpCache<T>, upstream: &[T]) -> (Vec<T>, Vec<T>) {
        let mut grad = vec![T::zero(); self.param_count()];
        let dx = self.backward_accumulate(cache, upstream, &mut grad);
        (grad, dx)
    }

    /// Weights then bias, layer by layer.
    pub fn flatten_into(&self, out: &mut Vec<T>) {
        for l in &self.layers {
            out.extend_from_slice(&l.weight);
            out.extend_from_slice(&l.bias);
        }
    }

    pub fn load_flat(&mut self, flat: &[T]) {
        let mut off = 0;
        for l in self.layers.iter_mut() {
            let nw = l.weight.len();
            l.weight.copy_from_slice(&flat[off..off + nw]);
            off += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&flat[off..off + nb]);
            off += nb;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_mlp(rng: &mut ChaCha8Rng) -> Mlp<f64> {
        let mut m = Mlp::init(MlpShape { input: 5, hidden: &[7, 6], output: 4 }, rng);
        for l in m.layers.iter_mut() {
            for v in l.weight.iter_mut().chain(l.bias.iter_mut()) {
                *v = rng.gen_range(-1.0..1.0);
            }
        }
        m
    }

    /// Straightforward matrix-vector reference.
    fn reference(m: &Mlp<f64>, x: &[f64]) -> Vec<f64> {
        let mut cur = x.to_vec();
        for (i, l) in m.layers.iter().enumerate() {
            let mut next: Vec<f64> = (0..l.outputs)
                .map(|o| l.bias[o] + (0..l.inputs).map(|k| l.weight[o * l.inputs + k] * cur[k]).sum::<f64>())
                .collect();
            if i + 1 < m.layers.len() {
                next.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            cur = next;
        }
        cur
    }

    #[test]
    fn zero_weights_output_bias() {
        let mut m = Mlp::<f64>::zeros(MlpShape { input: 3, hidden: &[4], output: 2 });
        m.layers[1].bias = vec![0.5, -2.0];
        let (y, _) = m.forward(&[1.0, -7.0, 3.0]).unwrap();
        assert_eq!(y, vec![0.5, -2.0]);
    }

    #[test]
    fn single_linear_layer() {
        let m = Mlp::from_layers(vec![Dense { inputs: 2, outputs: 2, weight: vec![1.0, 2.0, 3.0, 4.0], bias: vec![0.5, -0.5] }]).unwrap();
        let (y, _) = m.forward(&[1.0, -1.0]).unwrap();
        assert_eq!(y, vec![-0.5, -1.5]);
    }

    #[test]
    fn matches_reference_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let m = random_mlp(&mut rng);
        let x: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (y, _) = m.forward(&x).unwrap();
        let r = reference(&m, &x);
        for (a, b) in y.iter().zip(&r) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn input_dimension_checked() {
        let m = Mlp::<f64>::zeros(MlpShape { input: 3, hidden: &[], output: 1 });
        assert!(matches!(m.forward(&[1.0]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = random_mlp(&mut rng);
        let (_, cache) = m.forward(&[0.1, 0.2, 0.3, 0.4, 0.5]).unwrap();
        let (g, dx) = m.backward(&cache, &[0.0; 4]);
        assert!(g.iter().chain(&dx).all(|&v| v == 0.0));
    }

    #[test]
    fn identity_net_passes_gradient_through() {
        let m = Mlp::from_layers(vec![Dense { inputs: 3, outputs: 3, weight: vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0], bias: vec![0.0; 3] }]).unwrap();
        let (_, cache) = m.forward(&[0.3, -0.2, 0.9]).unwrap();
        let (_, dx) = m.backward(&cache, &[1.5, -2.0, 0.25]);
        assert_eq!(dx, vec![1.5, -2.0, 0.25]);
    }

    #[test]
    fn flat_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = random_mlp(&mut rng);
        let mut flat = Vec::new();
        m.flatten_into(&mut flat);
        assert_eq!(flat.len(), m.param_count());
        let mut z = Mlp::zeros(MlpShape { input: 5, hidden: &[7, 6], output: 4 });
        z.load_flat(&flat);
        assert_eq!(z, m);
    }
}
