//! Probabilistic multilayer perceptron.
//!
//! Every layer holds a factorized posterior over its weights and biases plus
//! the prior snapshot taken at initialization. A forward pass draws one
//! weight sample for the whole minibatch, keeps the noise in a
//! [`ForwardTrace`], and `backward` pushes the loss gradient through the
//! reparameterization to every `mu` and `rho`.

use crate::distributions::{self, CoordDistribution, Family, PriorSnapshot};
use crate::error::{Error, Result};
use crate::linalg::{self, sigmoid, softplus_inverse, RealMatrix};
use crate::rng::RngStream;

#[derive(Clone, Debug, PartialEq)]
pub struct ProbLayer {
    in_dim: usize,
    out_dim: usize,
    /// `out_dim × in_dim` coordinates, row-major.
    pub weights: CoordDistribution,
    pub biases: CoordDistribution,
    prior_weights: PriorSnapshot,
    prior_biases: PriorSnapshot,
}

impl ProbLayer {
    pub fn from_parts(
        in_dim: usize,
        out_dim: usize,
        weights: CoordDistribution,
        biases: CoordDistribution,
        prior_weights: PriorSnapshot,
        prior_biases: PriorSnapshot,
    ) -> Result<Self> {
        let expect = |what: &str, got: usize, want: usize| {
            if got == want {
                Ok(())
            } else {
                Err(Error::DimensionMismatch {
                    op: "ProbLayer::from_parts",
                    left: format!("{what}: {got} coordinates"),
                    right: format!("{want} expected for {out_dim}x{in_dim}"),
                })
            }
        };
        expect("weights", weights.len(), in_dim * out_dim)?;
        expect("prior weights", prior_weights.len(), in_dim * out_dim)?;
        expect("biases", biases.len(), out_dim)?;
        expect("prior biases", prior_biases.len(), out_dim)?;
        let family = weights.family;
        if [biases.family, prior_weights.family(), prior_biases.family()]
            .iter()
            .any(|&f| f != family)
        {
            return Err(Error::invalid("all blocks of a layer must share one family"));
        }
        Ok(ProbLayer {
            in_dim,
            out_dim,
            weights,
            biases,
            prior_weights,
            prior_biases,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn prior_weights(&self) -> &PriorSnapshot {
        &self.prior_weights
    }

    pub fn prior_biases(&self) -> &PriorSnapshot {
        &self.prior_biases
    }

    pub fn kl(&self) -> Result<f64> {
        Ok(distributions::kl_total(&self.weights, &self.prior_weights)?
            + distributions::kl_total(&self.biases, &self.prior_biases)?)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ForwardMode {
    /// Fresh weights drawn from the posterior.
    Sampled,
    /// Posterior means, no noise.
    MeanOnly,
}

/// Raw noise for one layer.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerNoise {
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

/// One concrete draw of every weight matrix and bias vector.
#[derive(Clone, Debug, PartialEq)]
pub struct SampledNetwork {
    /// Per layer `(W: out × in, b)`.
    pub layers: Vec<(RealMatrix, Vec<f64>)>,
}

impl SampledNetwork {
    /// Class probabilities for every row of `x`.
    pub fn probs(&self, x: &RealMatrix) -> Result<RealMatrix> {
        let mut h = x.clone();
        let last = self.layers.len() - 1;
        for (l, (w, b)) in self.layers.iter().enumerate() {
            let mut z = affine(&h, w, b)?;
            if l < last {
                relu_in_place(&mut z);
            }
            h = z;
        }
        softmax_rows(&h)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ForwardTrace {
    /// Input to each layer (batch × in_dim).
    pub inputs: Vec<RealMatrix>,
    /// Affine output of each layer before ReLU; the last entry holds the scores.
    pub pre_activations: Vec<RealMatrix>,
    pub sampled: SampledNetwork,
    pub noise: Vec<LayerNoise>,
    pub probs: RealMatrix,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerGradients {
    pub weights_mu: Vec<f64>,
    pub weights_rho: Vec<f64>,
    pub biases_mu: Vec<f64>,
    pub biases_rho: Vec<f64>,
}

impl LayerGradients {
    fn zeros(layer: &ProbLayer) -> Self {
        LayerGradients {
            weights_mu: vec![0.0; layer.weights.len()],
            weights_rho: vec![0.0; layer.weights.len()],
            biases_mu: vec![0.0; layer.biases.len()],
            biases_rho: vec![0.0; layer.biases.len()],
        }
    }

    pub fn blocks(&self) -> [(&'static str, &[f64]); 4] {
        [
            ("weights.mu", &self.weights_mu),
            ("weights.rho", &self.weights_rho),
            ("biases.mu", &self.biases_mu),
            ("biases.rho", &self.biases_rho),
        ]
    }

    fn blocks_mut(&mut self) -> [&mut Vec<f64>; 4] {
        [
            &mut self.weights_mu,
            &mut self.weights_rho,
            &mut self.biases_mu,
            &mut self.biases_rho,
        ]
    }
}

/// Gradient (or any per-parameter quantity) shaped like a network's `(mu, rho)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGradients>,
}

impl Gradients {
    pub fn zeros_like(net: &ProbNetwork) -> Self {
        Gradients {
            layers: net.layers.iter().map(LayerGradients::zeros).collect(),
        }
    }

    /// `self = a * self + b * other`.
    pub fn combine(&mut self, a: f64, other: &Gradients, b: f64) {
        for (l, o) in self.layers.iter_mut().zip(&other.layers) {
            for (dst, src) in l.blocks_mut().into_iter().zip(o.blocks()) {
                for (d, s) in dst.iter_mut().zip(src.1) {
                    *d = a * *d + b * s;
                }
            }
        }
    }

    pub fn norm(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|l| l.blocks())
            .flat_map(|(_, v)| v.iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    /// Name of the first block holding a non-finite entry, if any.
    pub fn first_non_finite(&self) -> Option<String> {
        for (i, l) in self.layers.iter().enumerate() {
            for (name, v) in l.blocks() {
                if v.iter().any(|g| !g.is_finite()) {
                    return Some(format!("layer {i} {name}"));
                }
            }
        }
        None
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProbNetwork {
    layers: Vec<ProbLayer>,
    family: Family,
    p_min: f64,
}

impl ProbNetwork {
    /// Builds a network for `arch = [input, hidden..., classes]`.
    ///
    /// Weight means come from a Gaussian with std `1/√n_in` truncated at two
    /// standard deviations, bias means are zero, every scale starts at
    /// `prior_scale`, and the prior is a frozen copy of this starting point.
    pub fn init(
        arch: &[usize],
        family: Family,
        prior_scale: f64,
        p_min: f64,
        rng: &mut RngStream,
    ) -> Result<Self> {
        if arch.len() < 2 {
            return Err(Error::invalid(format!(
                "architecture needs at least input and output sizes, got {arch:?}"
            )));
        }
        if arch.contains(&0) {
            return Err(Error::invalid(format!("layer sizes must be positive: {arch:?}")));
        }
        if !(prior_scale > 0.0 && prior_scale.is_finite()) {
            return Err(Error::invalid(format!("prior scale must be positive, got {prior_scale}")));
        }
        check_p_min(p_min)?;
        let rho0 = softplus_inverse(prior_scale);
        let mut layers = Vec::with_capacity(arch.len() - 1);
        for pair in arch.windows(2) {
            let (n_in, n_out) = (pair[0], pair[1]);
            let std = 1.0 / (n_in as f64).sqrt();
            let mu: Vec<f64> = (0..n_in * n_out)
                .map(|_| std * truncated_std_normal(rng, 2.0))
                .collect();
            let weights = CoordDistribution::new(family, mu, vec![rho0; n_in * n_out])?;
            let biases = CoordDistribution::new(family, vec![0.0; n_out], vec![rho0; n_out])?;
            layers.push(ProbLayer {
                in_dim: n_in,
                out_dim: n_out,
                prior_weights: PriorSnapshot::from_posterior(&weights),
                prior_biases: PriorSnapshot::from_posterior(&biases),
                weights,
                biases,
            });
        }
        Ok(ProbNetwork {
            layers,
            family,
            p_min,
        })
    }

    pub fn from_layers(layers: Vec<ProbLayer>, p_min: f64) -> Result<Self> {
        check_p_min(p_min)?;
        let first = layers
            .first()
            .ok_or_else(|| Error::invalid("network needs at least one layer"))?;
        let family = first.weights.family;
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim != pair[1].in_dim {
                return Err(Error::DimensionMismatch {
                    op: "ProbNetwork::from_layers",
                    left: format!("layer {i} outputs {}", pair[0].out_dim),
                    right: format!("layer {} takes {}", i + 1, pair[1].in_dim),
                });
            }
        }
        if layers.iter().any(|l| l.weights.family != family) {
            return Err(Error::invalid("all layers must share one family"));
        }
        Ok(ProbNetwork {
            layers,
            family,
            p_min,
        })
    }

    pub fn layers(&self) -> &[ProbLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [ProbLayer] {
        &mut self.layers
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn p_min(&self) -> f64 {
        self.p_min
    }

    pub fn arch(&self) -> Vec<usize> {
        let mut a = vec![self.layers[0].in_dim];
        a.extend(self.layers.iter().map(|l| l.out_dim));
        a
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn num_classes(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    /// Number of random coordinates (weights and biases).
    pub fn num_coordinates(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.biases.len())
            .sum()
    }

    pub fn draw_noise(&self, rng: &mut RngStream) -> Vec<LayerNoise> {
        self.layers
            .iter()
            .map(|l| LayerNoise {
                weights: self.family.draw_noise(rng, l.weights.len()),
                biases: self.family.draw_noise(rng, l.biases.len()),
            })
            .collect()
    }

    pub fn zero_noise(&self) -> Vec<LayerNoise> {
        self.layers
            .iter()
            .map(|l| LayerNoise {
                weights: vec![0.0; l.weights.len()],
                biases: vec![0.0; l.biases.len()],
            })
            .collect()
    }

    pub fn sample_with_noise(&self, noise: &[LayerNoise]) -> Result<SampledNetwork> {
        if noise.len() != self.layers.len() {
            return Err(Error::DimensionMismatch {
                op: "sample_with_noise",
                left: format!("{} layers", self.layers.len()),
                right: format!("noise for {} layers", noise.len()),
            });
        }
        let layers = self
            .layers
            .iter()
            .zip(noise)
            .map(|(l, n)| {
                let w = distributions::sample_with_noise(&l.weights, &n.weights)?;
                let b = distributions::sample_with_noise(&l.biases, &n.biases)?;
                Ok((RealMatrix::from_vec(l.out_dim, l.in_dim, w)?, b))
            })
            .collect::<Result<_>>()?;
        Ok(SampledNetwork { layers })
    }

    pub fn sample(&self, rng: &mut RngStream) -> Result<SampledNetwork> {
        let noise = self.draw_noise(rng);
        self.sample_with_noise(&noise)
    }

    pub fn mean_network(&self) -> Result<SampledNetwork> {
        self.sample_with_noise(&self.zero_noise())
    }

    /// Softmax probabilities for every row of `x` (no clamping) and the
    /// trace needed by [`ProbNetwork::backward`].
    pub fn forward(
        &self,
        x: &RealMatrix,
        rng: &mut RngStream,
        mode: ForwardMode,
    ) -> Result<(RealMatrix, ForwardTrace)> {
        let noise = match mode {
            ForwardMode::Sampled => self.draw_noise(rng),
            ForwardMode::MeanOnly => self.zero_noise(),
        };
        self.forward_with_noise(x, noise)
    }

    pub fn forward_with_noise(
        &self,
        x: &RealMatrix,
        noise: Vec<LayerNoise>,
    ) -> Result<(RealMatrix, ForwardTrace)> {
        if x.cols() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                op: "forward",
                left: format!("input with {} features", x.cols()),
                right: format!("network expecting {}", self.input_dim()),
            });
        }
        let sampled = self.sample_with_noise(&noise)?;
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre_activations = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for (l, (w, b)) in sampled.layers.iter().enumerate() {
            let z = affine(&h, w, b)?;
            inputs.push(h);
            h = if l < last {
                let mut a = z.clone();
                relu_in_place(&mut a);
                a
            } else {
                z.clone()
            };
            pre_activations.push(z);
        }
        let probs = softmax_rows(&h)?;
        let trace = ForwardTrace {
            inputs,
            pre_activations,
            sampled,
            noise,
            probs: probs.clone(),
        };
        Ok((probs, trace))
    }

    /// Pathwise gradients of a loss with respect to every `mu` and `rho`,
    /// given `∂loss/∂scores` for each batch row.
    pub fn backward(&self, trace: &ForwardTrace, d_scores: &RealMatrix) -> Result<Gradients> {
        let depth = self.layers.len();
        if trace.pre_activations.len() != depth || trace.noise.len() != depth {
            return Err(Error::DimensionMismatch {
                op: "backward",
                left: format!("network with {depth} layers"),
                right: format!("trace with {} layers", trace.pre_activations.len()),
            });
        }
        let scores = &trace.pre_activations[depth - 1];
        if d_scores.shape() != scores.shape() {
            return Err(Error::DimensionMismatch {
                op: "backward",
                left: format!("scores {}x{}", scores.rows(), scores.cols()),
                right: format!("upstream gradient {}x{}", d_scores.rows(), d_scores.cols()),
            });
        }
        for (l, layer) in self.layers.iter().enumerate() {
            if trace.inputs[l].cols() != layer.in_dim
                || trace.noise[l].weights.len() != layer.weights.len()
            {
                return Err(Error::DimensionMismatch {
                    op: "backward",
                    left: format!("layer {l} of shape {}x{}", layer.out_dim, layer.in_dim),
                    right: format!("trace input width {}", trace.inputs[l].cols()),
                });
            }
        }

        let mut grads = Vec::with_capacity(depth);
        let mut delta = d_scores.clone();
        for l in (0..depth).rev() {
            let layer = &self.layers[l];
            let noise = &trace.noise[l];
            // dW = deltaᵀ · input, db = column sums of delta
            let d_w = linalg::matmul_tn(&delta, &trace.inputs[l])?;
            let mut d_b = vec![0.0; layer.out_dim];
            for r in 0..delta.rows() {
                linalg::axpy(1.0, delta.row(r), &mut d_b);
            }
            let d_w = d_w.into_vec();
            let weights_rho = reparam_rho_grad(&d_w, &layer.weights, &noise.weights);
            let biases_rho = reparam_rho_grad(&d_b, &layer.biases, &noise.biases);
            if l > 0 {
                let (w, _) = &trace.sampled.layers[l];
                let mut d_in = linalg::matmul(&delta, w)?;
                mask_relu(&mut d_in, &trace.pre_activations[l - 1]);
                delta = d_in;
            }
            grads.push(LayerGradients {
                weights_mu: d_w,
                weights_rho,
                biases_mu: d_b,
                biases_rho,
            });
        }
        grads.reverse();
        Ok(Gradients { layers: grads })
    }

    pub fn kl_total(&self) -> Result<f64> {
        self.layers.iter().map(ProbLayer::kl).sum()
    }

    pub fn kl_gradients(&self) -> Result<Gradients> {
        let layers = self
            .layers
            .iter()
            .map(|l| {
                let (weights_mu, weights_rho) =
                    distributions::kl_gradients(&l.weights, &l.prior_weights)?;
                let (biases_mu, biases_rho) =
                    distributions::kl_gradients(&l.biases, &l.prior_biases)?;
                Ok(LayerGradients {
                    weights_mu,
                    weights_rho,
                    biases_mu,
                    biases_rho,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Gradients { layers })
    }

    /// Applies `mu += step.mu`, `rho += step.rho` for every block.
    pub fn apply_update(&mut self, step: &Gradients) {
        for (layer, s) in self.layers.iter_mut().zip(&step.layers) {
            let targets = [
                (&mut layer.weights.mu, &s.weights_mu),
                (&mut layer.weights.rho, &s.weights_rho),
                (&mut layer.biases.mu, &s.biases_mu),
                (&mut layer.biases.rho, &s.biases_rho),
            ];
            for (dst, src) in targets {
                for (d, v) in dst.iter_mut().zip(src) {
                    *d += v;
                }
            }
        }
    }
}

fn check_p_min(p_min: f64) -> Result<()> {
    if p_min > 0.0 && p_min < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("p_min must lie in (0,1), got {p_min}")))
    }
}

/// `∂L/∂rho = ∂L/∂w · m(noise) · sigmoid(rho)`.
fn reparam_rho_grad(d_w: &[f64], d: &CoordDistribution, noise: &[f64]) -> Vec<f64> {
    d_w.iter()
        .zip(noise)
        .zip(&d.rho)
        .map(|((&g, &e), &r)| {
            let k = d.family.noise_multiplier(e);
            if k == 0.0 || g == 0.0 {
                0.0
            } else {
                g * k * sigmoid(r)
            }
        })
        .collect()
}

/// Standard normal conditioned on `|z| <= bound`, by rejection.
fn truncated_std_normal(rng: &mut RngStream, bound: f64) -> f64 {
    loop {
        let z = rng.std_normal();
        if z.abs() <= bound {
            return z;
        }
    }
}

fn affine(h: &RealMatrix, w: &RealMatrix, b: &[f64]) -> Result<RealMatrix> {
    let z = linalg::matmul_nt(h, w)?;
    let cols = z.cols();
    let mut data = z.into_vec();
    for row in data.chunks_exact_mut(cols) {
        for (v, bias) in row.iter_mut().zip(b) {
            *v += bias;
        }
    }
    RealMatrix::from_vec(h.rows(), cols, data)
}

fn relu_in_place(z: &mut RealMatrix) {
    let (r, c) = z.shape();
    let data: Vec<f64> = z.as_slice().iter().map(|&v| v.max(0.0)).collect();
    *z = RealMatrix::from_vec(r, c, data).expect("relu keeps shape and finiteness");
}

fn mask_relu(grad: &mut RealMatrix, pre: &RealMatrix) {
    let (r, c) = grad.shape();
    let data: Vec<f64> = grad
        .as_slice()
        .iter()
        .zip(pre.as_slice())
        .map(|(&g, &z)| if z > 0.0 { g } else { 0.0 })
        .collect();
    *grad = RealMatrix::from_vec(r, c, data).expect("mask keeps shape and finiteness");
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(scores: &RealMatrix) -> Result<RealMatrix> {
    let cols = scores.cols();
    let mut out = Vec::with_capacity(scores.rows() * cols);
    for i in 0..scores.rows() {
        let row = scores.row(i);
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let start = out.len();
        let mut z = 0.0;
        for &s in row {
            let e = (s - m).exp();
            z += e;
            out.push(e);
        }
        for v in &mut out[start..] {
            *v /= z;
        }
    }
    RealMatrix::from_vec(scores.rows(), cols, out)
}
