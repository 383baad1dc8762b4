use rand::Rng as _;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::{Graph, NodeId, Tensor};
use crate::rng::Rng;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
}

/// Layer widths of a fully connected network.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub output_dim: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
}

impl MlpSpec {
    pub fn new(input_dim: usize, hidden: &[usize], output_dim: usize) -> Result<Self> {
        if input_dim == 0 || output_dim == 0 || hidden.contains(&0) {
            return Err(Error::Shape(format!(
                "all layer widths must be >= 1: {input_dim}, {hidden:?}, {output_dim}"
            )));
        }
        Ok(Self { input_dim, output_dim, hidden: hidden.to_vec(), activation: Activation::Relu })
    }

    /// `(fan_in, fan_out)` of each linear layer.
    pub fn layers(&self) -> Vec<(usize, usize)> {
        let mut dims = vec![self.input_dim];
        dims.extend(&self.hidden);
        dims.push(self.output_dim);
        dims.windows(2).map(|w| (w[0], w[1])).collect()
    }

    pub fn num_params(&self) -> usize {
        self.layers().iter().map(|(i, o)| i * o + o).sum()
    }

    /// Canonical text form, e.g. `mlp:4-256-256-20:relu`.
    pub fn describe(&self) -> String {
        let mut dims = vec![self.input_dim.to_string()];
        dims.extend(self.hidden.iter().map(usize::to_string));
        dims.push(self.output_dim.to_string());
        format!("mlp:{}:relu", dims.join("-"))
    }

    pub fn hash(&self) -> u64 {
        let digest = Sha256::digest(self.describe().as_bytes());
        u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
    }
}

/// Parameters are stored as `[W₀, b₀, W₁, b₁, …]`, `Wᵢ` of shape `fan_in×fan_out`
/// and `bᵢ` of shape `1×fan_out`. Hidden layers use ReLU; the output is linear.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    spec: MlpSpec,
    params: Vec<Tensor>,
}

impl Mlp {
    /// Weights and biases uniform in `±1/√fan_in`.
    pub fn new(spec: MlpSpec, rng: &mut Rng) -> Self {
        let params = spec
            .layers()
            .into_iter()
            .flat_map(|(fan_in, fan_out)| {
                let bound = 1.0 / (fan_in as f64).sqrt();
                let mut draw = |n: usize| -> Vec<f64> {
                    (0..n).map(|_| rng.gen_range(-bound..bound)).collect()
                };
                let w = Tensor::from_vec(fan_in, fan_out, draw(fan_in * fan_out)).expect("shape");
                let b = Tensor::from_vec(1, fan_out, draw(fan_out)).expect("shape");
                [w, b]
            })
            .collect();
        Self { spec, params }
    }

    pub fn zeros(spec: MlpSpec) -> Self {
        let params = spec
            .layers()
            .into_iter()
            .flat_map(|(i, o)| [Tensor::zeros(i, o), Tensor::zeros(1, o)])
            .collect();
        Self { spec, params }
    }

    pub fn from_params(spec: MlpSpec, params: Vec<Tensor>) -> Result<Self> {
        let expected: Vec<(usize, usize)> =
            spec.layers().into_iter().flat_map(|(i, o)| [(i, o), (1, o)]).collect();
        let got: Vec<(usize, usize)> = params.iter().map(Tensor::shape).collect();
        if expected != got {
            return Err(Error::Shape(format!("parameter shapes {got:?}, expected {expected:?}")));
        }
        Ok(Self { spec, params })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    /// Inference without recording a graph.
    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        if input.cols() != self.spec.input_dim {
            return Err(Error::Shape(format!(
                "input has {} features, network expects {}",
                input.cols(),
                self.spec.input_dim
            )));
        }
        let n_layers = self.params.len() / 2;
        let mut h = input.clone();
        for l in 0..n_layers {
            let (w, b) = (&self.params[2 * l], &self.params[2 * l + 1]);
            let mut out = Tensor::zeros(h.rows(), w.cols());
            let cols = w.cols();
            for r in 0..h.rows() {
                out.data_mut()[r * cols..(r + 1) * cols].copy_from_slice(b.data());
            }
            crate::autodiff::gemm(&h, false, w, false, &mut out, 1.0);
            if l + 1 < n_layers {
                out.data_mut().iter_mut().for_each(|x| *x = x.max(0.0));
            }
            h = out;
        }
        Ok(h)
    }

    /// Records the forward pass on `graph`. Returns the output node and the
    /// parameter leaves (trainable when `trainable` is set, constant otherwise).
    pub fn forward_graph(&self, graph: &mut Graph, input: NodeId, trainable: bool) -> (NodeId, Vec<NodeId>) {
        let leaves: Vec<NodeId> = self
            .params
            .iter()
            .map(|p| if trainable { graph.param(p.clone()) } else { graph.constant(p.clone()) })
            .collect();
        let n_layers = leaves.len() / 2;
        let mut h = input;
        for l in 0..n_layers {
            h = graph.linear(h, leaves[2 * l], leaves[2 * l + 1]);
            if l + 1 < n_layers {
                h = graph.relu(h);
            }
        }
        (h, leaves)
    }

    pub fn flat(&self) -> Vec<f64> {
        self.params.iter().flat_map(|p| p.data().iter().copied()).collect()
    }

    pub fn set_flat(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.spec.num_params() {
            return Err(Error::Shape(format!(
                "{} values for {} parameters",
                values.len(),
                self.spec.num_params()
            )));
        }
        let mut offset = 0;
        for p in &mut self.params {
            let n = p.len();
            p.data_mut().copy_from_slice(&values[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    /// SHA-256 fingerprint of the exact parameter bits.
    pub fn param_hash(&self) -> u64 {
        let mut hasher = Sha256::new();
        for p in &self.params {
            for x in p.data() {
                hasher.update(x.to_le_bytes());
            }
        }
        u64::from_le_bytes(hasher.finalize()[..8].try_into().expect("8 bytes"))
    }

    /// `self ← beta·online + (1 − beta)·self`.
    pub fn polyak_from(&mut self, online: &Mlp, beta: f64) {
        for (t, o) in self.params.iter_mut().zip(&online.params) {
            t.data_mut().iter_mut().zip(o.data()).for_each(|(t, o)| *t = beta * o + (1.0 - beta) * *t);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn zero_network_outputs_zero() {
        let net = Mlp::zeros(MlpSpec::new(3, &[4, 5], 2).unwrap());
        let out = net.forward(&Tensor::filled(7, 3, 1.5)).unwrap();
        assert!(out.data().iter().all(|x| *x == 0.0));
        assert_eq!(out.shape(), (7, 2));
    }

    #[test]
    fn identity_linear_layer() {
        let spec = MlpSpec::new(3, &[], 3).unwrap();
        let mut eye = Tensor::zeros(3, 3);
        (0..3).for_each(|i| eye.set(i, i, 1.0));
        let net = Mlp::from_params(spec, vec![eye, Tensor::zeros(1, 3)]).unwrap();
        let x = Tensor::from_rows(&[[1.0, -2.0, 3.5], [0.0, 4.0, -1.0]]).unwrap();
        assert_eq!(net.forward(&x).unwrap(), x);
    }

    #[test]
    fn input_width_checked() {
        let net = Mlp::new(MlpSpec::new(3, &[4], 1).unwrap(), &mut seeded(0));
        assert!(net.forward(&Tensor::zeros(1, 2)).is_err());
        assert!(MlpSpec::new(3, &[0], 1).is_err());
    }

    #[test]
    fn graph_and_plain_forward_agree() {
        let net = Mlp::new(MlpSpec::new(4, &[8, 6], 3).unwrap(), &mut seeded(9));
        let x = Tensor::from_rows(&[[0.1, -0.3, 0.7, 1.2], [2.0, 0.0, -1.0, 0.5]]).unwrap();
        let mut g = Graph::new();
        let xi = g.constant(x.clone());
        let (out, _) = net.forward_graph(&mut g, xi, true);
        assert_eq!(g.value(out), &net.forward(&x).unwrap());
    }

    #[test]
    fn flat_roundtrip_and_hash() {
        let spec = MlpSpec::new(2, &[3], 1).unwrap();
        let a = Mlp::new(spec.clone(), &mut seeded(1));
        let mut b = Mlp::zeros(spec.clone());
        assert_ne!(a.param_hash(), b.param_hash());
        b.set_flat(&a.flat()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.param_hash(), b.param_hash());
        assert_eq!(spec.describe(), "mlp:2-3-1:relu");
        assert_eq!(spec.num_params(), 2 * 3 + 3 + 3 + 1);
    }

    #[test]
    fn polyak_endpoints() {
        let spec = MlpSpec::new(1, &[], 1).unwrap();
        let online = Mlp::from_params(spec.clone(), vec![Tensor::scalar(1.0), Tensor::scalar(1.0)]).unwrap();
        let mut target = Mlp::zeros(spec);
        target.polyak_from(&online, 0.0);
        assert_eq!(target.flat(), vec![0.0, 0.0]);
        target.polyak_from(&online, 0.005);
        assert_eq!(target.flat(), vec![0.005, 0.005]);
        target.polyak_from(&online, 1.0);
        assert_eq!(target.flat(), online.flat());
    }
}
