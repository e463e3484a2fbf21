use rand::Rng;

use super::{Architecture, CovarianceMode};
use crate::numerics::{
    conv2d, conv2d_backward, dense, dense_backward, glorot_uniform, leaky_relu_backward, leaky_relu_inplace,
    pointwise_conv, pointwise_conv_backward, tconv2d, tconv2d_backward, Real, Tensor,
};
use crate::{rng, Error, Result};

/// Weights and bias of one affine layer.
#[derive(Clone, Debug, PartialEq)]
pub struct Affine<T> {
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Real> Affine<T> {
    fn zeros_like(&self) -> Self {
        Affine {
            weights: Tensor::zeros(self.weights.shape()),
            bias: Tensor::zeros(self.bias.shape()),
        }
    }

    fn glorot<R: Rng + ?Sized>(shape: &[usize], fan_in: usize, fan_out: usize, bias: usize, rng: &mut R) -> Self {
        Affine {
            weights: glorot_uniform(shape, fan_in, fan_out, rng),
            bias: Tensor::zeros(&[bias]),
        }
    }

    fn accumulate(&mut self, weights: &Tensor<T>, bias: &Tensor<T>) {
        self.weights.axpy(T::one(), weights);
        self.bias.axpy(T::one(), bias);
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum VarianceHead<T> {
    /// Pre-activation of the single shared variance, shape `[1]`.
    Scalar(Tensor<T>),
    /// 1x1 convolution from the last decoder features.
    PerPixel(Affine<T>),
}

/// Every learnable tensor of a VAE. Also used for gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct VaeParams<T> {
    pub enc_conv: Vec<Affine<T>>,
    pub enc_mean: Affine<T>,
    pub enc_logvar: Affine<T>,
    pub dec_dense: Affine<T>,
    pub dec_tconv: Vec<Affine<T>>,
    pub dec_mean: Affine<T>,
    pub dec_var: VarianceHead<T>,
}

impl<T: Real> VaeParams<T> {
    pub fn init<R: Rng + ?Sized>(arch: &Architecture, rng: &mut R) -> Self {
        let k2 = 16;
        let mut enc_conv = Vec::new();
        let mut c_in = 1;
        for &c in &arch.encoder_channels {
            enc_conv.push(Affine::glorot(&[c, c_in, 4, 4], c_in * k2, c * k2, c, rng));
            c_in = c;
        }
        let f = arch.flat_features();
        let l = arch.latent_dim;
        let enc_mean = Affine::glorot(&[l, f], f, l, l, rng);
        let enc_logvar = Affine::glorot(&[l, f], f, l, l, rng);
        let seed: usize = arch.decoder_seed_shape().iter().product();
        let dec_dense = Affine::glorot(&[seed, l], l, seed, seed, rng);
        let mut dec_tconv = Vec::new();
        let mut c_in = arch.decoder_channels[0];
        for &c in &arch.decoder_channels {
            dec_tconv.push(Affine::glorot(&[c_in, c, 4, 4], c_in * k2, c * k2, c, rng));
            c_in = c;
        }
        let dec_mean = Affine::glorot(&[1, c_in], c_in, 1, 1, rng);
        let dec_var = match arch.covariance {
            CovarianceMode::Scalar => VarianceHead::Scalar(Tensor::zeros(&[1])),
            CovarianceMode::PerPixel => VarianceHead::PerPixel(Affine::glorot(&[1, c_in], c_in, 1, 1, rng)),
        };
        VaeParams {
            enc_conv,
            enc_mean,
            enc_logvar,
            dec_dense,
            dec_tconv,
            dec_mean,
            dec_var,
        }
    }

    pub fn zeros_like(&self) -> Self {
        VaeParams {
            enc_conv: self.enc_conv.iter().map(Affine::zeros_like).collect(),
            enc_mean: self.enc_mean.zeros_like(),
            enc_logvar: self.enc_logvar.zeros_like(),
            dec_dense: self.dec_dense.zeros_like(),
            dec_tconv: self.dec_tconv.iter().map(Affine::zeros_like).collect(),
            dec_mean: self.dec_mean.zeros_like(),
            dec_var: match &self.dec_var {
                VarianceHead::Scalar(t) => VarianceHead::Scalar(Tensor::zeros(t.shape())),
                VarianceHead::PerPixel(a) => VarianceHead::PerPixel(a.zeros_like()),
            },
        }
    }

    /// Block names in canonical (serialization) order.
    pub fn block_names(&self) -> Vec<String> {
        let mut layers: Vec<String> = (0..self.enc_conv.len()).map(|i| format!("enc.conv{i}")).collect();
        layers.extend(["enc.mean", "enc.logvar", "dec.dense"].map(String::from));
        layers.extend((0..self.dec_tconv.len()).map(|i| format!("dec.tconv{i}")));
        layers.push("dec.mean".into());
        let mut names: Vec<String> = layers.iter().flat_map(|l| [format!("{l}.w"), format!("{l}.b")]).collect();
        match self.dec_var {
            VarianceHead::Scalar(_) => names.push("dec.var.b".into()),
            VarianceHead::PerPixel(_) => names.extend(["dec.var.w".into(), "dec.var.b".into()]),
        }
        names
    }

    /// Named parameter blocks in canonical (serialization) order.
    pub fn blocks(&self) -> Vec<(String, &Tensor<T>)> {
        let mut tensors: Vec<&Tensor<T>> = Vec::new();
        let affines = self
            .enc_conv
            .iter()
            .chain([&self.enc_mean, &self.enc_logvar, &self.dec_dense])
            .chain(&self.dec_tconv)
            .chain([&self.dec_mean]);
        for a in affines {
            tensors.push(&a.weights);
            tensors.push(&a.bias);
        }
        match &self.dec_var {
            VarianceHead::Scalar(t) => tensors.push(t),
            VarianceHead::PerPixel(a) => {
                tensors.push(&a.weights);
                tensors.push(&a.bias);
            }
        }
        self.block_names().into_iter().zip(tensors).collect()
    }

    pub fn blocks_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out: Vec<&mut Tensor<T>> = Vec::new();
        for a in &mut self.enc_conv {
            out.push(&mut a.weights);
            out.push(&mut a.bias);
        }
        for a in [&mut self.enc_mean, &mut self.enc_logvar, &mut self.dec_dense] {
            out.push(&mut a.weights);
            out.push(&mut a.bias);
        }
        for a in &mut self.dec_tconv {
            out.push(&mut a.weights);
            out.push(&mut a.bias);
        }
        out.push(&mut self.dec_mean.weights);
        out.push(&mut self.dec_mean.bias);
        match &mut self.dec_var {
            VarianceHead::Scalar(t) => out.push(t),
            VarianceHead::PerPixel(a) => {
                out.push(&mut a.weights);
                out.push(&mut a.bias);
            }
        }
        out
    }

    pub fn num_scalars(&self) -> usize {
        self.blocks().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn to_flat(&self) -> Vec<T> {
        self.blocks().iter().flat_map(|(_, t)| t.data().iter().copied()).collect()
    }

    pub fn set_flat(&mut self, flat: &[T]) -> Result<()> {
        if flat.len() != self.num_scalars() {
            return Err(Error::shape("VaeParams::set_flat", self.num_scalars(), flat.len()));
        }
        let mut offset = 0;
        for t in self.blocks_mut() {
            let n = t.len();
            t.data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> VaeParams<U> {
        let c = |a: &Affine<T>| Affine {
            weights: a.weights.cast(),
            bias: a.bias.cast(),
        };
        VaeParams {
            enc_conv: self.enc_conv.iter().map(c).collect(),
            enc_mean: c(&self.enc_mean),
            enc_logvar: c(&self.enc_logvar),
            dec_dense: c(&self.dec_dense),
            dec_tconv: self.dec_tconv.iter().map(c).collect(),
            dec_mean: c(&self.dec_mean),
            dec_var: match &self.dec_var {
                VarianceHead::Scalar(t) => VarianceHead::Scalar(t.cast()),
                VarianceHead::PerPixel(a) => VarianceHead::PerPixel(c(a)),
            },
        }
    }

    pub fn is_finite(&self) -> bool {
        self.blocks().iter().all(|(_, t)| t.is_finite())
    }
}

/// Intermediate activations of an encoder pass.
pub struct EncoderTrace<T> {
    /// `layers[i]` is the input of convolution `i`; the last entry is the
    /// output of the final convolution (after activation).
    layers: Vec<Tensor<T>>,
    flat: Tensor<T>,
}

pub struct DecoderTrace<T> {
    z: Tensor<T>,
    /// Dense output reshaped to a feature map, then each tconv output.
    hidden: Vec<Tensor<T>>,
    mean_pre: Tensor<T>,
    var_pre: Tensor<T>,
}

/// Decoder output for a batch of `M` latents.
#[derive(Clone, Debug)]
pub struct DecodedBatch<T> {
    /// `[M, H*W]`, in `[clip, 1 - clip]`.
    pub mean_unit: Tensor<T>,
    /// `[M, H*W]`, logit of the clipped mean.
    pub mean_logit: Tensor<T>,
    /// `[1]` in scalar mode, `[M, H*W]` in per-pixel mode; `>= floor`.
    pub variance: Tensor<T>,
}

fn softplus<T: Real>(x: T) -> T {
    // ln(1 + e^x) without overflow
    if x > T::zero() {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// A variational autoencoder with a Gaussian encoder and a logit-normal
/// decoder.
#[derive(Clone, Debug, PartialEq)]
pub struct VaeModel<T = f32> {
    pub arch: Architecture,
    pub params: VaeParams<T>,
}

impl<T: Real> VaeModel<T> {
    pub fn new(arch: Architecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut r = rng::stream(seed, &[rng::tag::INIT]);
        let params = VaeParams::init(&arch, &mut r);
        Ok(VaeModel { arch, params })
    }

    pub fn cast<U: Real>(&self) -> VaeModel<U> {
        VaeModel {
            arch: self.arch.clone(),
            params: self.params.cast(),
        }
    }

    /// Bounds of the mean logit implied by the clip value.
    fn logit_bound(&self) -> T {
        let c = self.arch.clip;
        T::lit(((1.0 - c) / c).ln())
    }

    pub(crate) fn check_input(&self, x: &Tensor<T>) -> Result<usize> {
        match *x.shape() {
            [n, 1, h, w] if h == self.arch.height && w == self.arch.width => Ok(n),
            _ => Err(Error::shape(
                "encode",
                format!("[N, 1, {}, {}]", self.arch.height, self.arch.width),
                format!("{:?}", x.shape()),
            )),
        }
    }

    /// Posterior means and log-variances `[N, L]` for a batch `[N, 1, H, W]`.
    pub fn encode_batch(&self, x: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>, EncoderTrace<T>)> {
        let n = self.check_input(x)?;
        let mut layers = vec![x.clone()];
        for layer in &self.params.enc_conv {
            let mut y = conv2d(layers.last().expect("nonempty"), &layer.weights, &layer.bias)?;
            leaky_relu_inplace(&mut y);
            layers.push(y);
        }
        let last = layers.last().expect("nonempty");
        let flat = last.clone().reshape(&[n, self.arch.flat_features()])?;
        let mean = dense(&flat, &self.params.enc_mean.weights, &self.params.enc_mean.bias)?;
        let logvar = dense(&flat, &self.params.enc_logvar.weights, &self.params.enc_logvar.bias)?;
        Ok((mean, logvar, EncoderTrace { layers, flat }))
    }

    /// Accumulates parameter gradients into `grads` and returns the gradient
    /// with respect to the encoder input.
    pub fn encoder_backward(
        &self,
        trace: &EncoderTrace<T>,
        d_mean: &Tensor<T>,
        d_logvar: &Tensor<T>,
        grads: &mut VaeParams<T>,
    ) -> Result<Tensor<T>> {
        let gm = dense_backward(&trace.flat, &self.params.enc_mean.weights, d_mean)?;
        let gl = dense_backward(&trace.flat, &self.params.enc_logvar.weights, d_logvar)?;
        grads.enc_mean.accumulate(&gm.weights, &gm.bias);
        grads.enc_logvar.accumulate(&gl.weights, &gl.bias);
        let mut d_flat = gm.input;
        d_flat.axpy(T::one(), &gl.input);

        let depth = self.params.enc_conv.len();
        let mut upstream = d_flat.reshape(trace.layers[depth].shape())?;
        for i in (0..depth).rev() {
            let d_pre = leaky_relu_backward(&trace.layers[i + 1], &upstream);
            let g = conv2d_backward(&trace.layers[i], &self.params.enc_conv[i].weights, &d_pre)?;
            grads.enc_conv[i].accumulate(&g.weights, &g.bias);
            upstream = g.input;
        }
        Ok(upstream)
    }

    /// Decodes a batch of latents `[M, L]`.
    pub fn decode_batch(&self, z: &Tensor<T>) -> Result<(DecodedBatch<T>, DecoderTrace<T>)> {
        let l = self.arch.latent_dim;
        let m = match *z.shape() {
            [m, d] if d == l => m,
            _ => return Err(Error::shape("decode", format!("[M, {l}]"), format!("{:?}", z.shape()))),
        };
        let seed = self.arch.decoder_seed_shape();
        let mut h = dense(z, &self.params.dec_dense.weights, &self.params.dec_dense.bias)?;
        leaky_relu_inplace(&mut h);
        let mut hidden = vec![h.reshape(&[m, seed[0], seed[1], seed[2]])?];
        for layer in &self.params.dec_tconv {
            let mut y = tconv2d(hidden.last().expect("nonempty"), &layer.weights, &layer.bias)?;
            leaky_relu_inplace(&mut y);
            hidden.push(y);
        }
        let feat = hidden.last().expect("nonempty");
        let mean_pre = pointwise_conv(feat, &self.params.dec_mean.weights, &self.params.dec_mean.bias)?;
        let var_pre = match &self.params.dec_var {
            VarianceHead::Scalar(b) => b.clone(),
            VarianceHead::PerPixel(a) => pointwise_conv(feat, &a.weights, &a.bias)?,
        };

        let bound = self.logit_bound();
        let clip = T::lit(self.arch.clip);
        let hi = T::one() - clip;
        let floor = T::lit(self.arch.variance_floor);
        let p = self.arch.pixels();
        let mean_logit = mean_pre.map(|a| a.max(-bound).min(bound)).reshape(&[m, p])?;
        let mean_unit = mean_pre.map(|a| sigmoid(a).max(clip).min(hi)).reshape(&[m, p])?;
        let variance = var_pre.map(|b| softplus(b).max(floor));
        let variance = if variance.len() == 1 {
            variance
        } else {
            variance.reshape(&[m, p])?
        };
        Ok((
            DecodedBatch {
                mean_unit,
                mean_logit,
                variance,
            },
            DecoderTrace {
                z: z.clone(),
                hidden,
                mean_pre,
                var_pre,
            },
        ))
    }

    /// Backward pass of [`decode_batch`](Self::decode_batch). `d_mean_logit`
    /// is `[M, H*W]`, `d_variance` has the shape of the decoded variance.
    /// Clipped means and floored variances pass no gradient.
    pub fn decoder_backward(
        &self,
        trace: &DecoderTrace<T>,
        d_mean_logit: &Tensor<T>,
        d_variance: &Tensor<T>,
        grads: &mut VaeParams<T>,
    ) -> Result<Tensor<T>> {
        let bound = self.logit_bound();
        let floor = T::lit(self.arch.variance_floor);
        let d_mean_pre: Vec<T> = trace
            .mean_pre
            .data()
            .iter()
            .zip(d_mean_logit.data())
            .map(|(&a, &g)| if a > -bound && a < bound { g } else { T::zero() })
            .collect();
        let d_mean_pre = Tensor::from_vec(trace.mean_pre.shape(), d_mean_pre)?;
        let d_var_pre: Vec<T> = if trace.var_pre.len() == 1 {
            let b = trace.var_pre.data()[0];
            let total = d_variance.data().iter().fold(T::zero(), |acc, &g| acc + g);
            vec![if softplus(b) > floor { total * sigmoid(b) } else { T::zero() }]
        } else {
            trace
                .var_pre
                .data()
                .iter()
                .zip(d_variance.data())
                .map(|(&b, &g)| if softplus(b) > floor { g * sigmoid(b) } else { T::zero() })
                .collect()
        };
        let d_var_pre = Tensor::from_vec(trace.var_pre.shape(), d_var_pre)?;

        let feat = trace.hidden.last().expect("nonempty");
        let gm = pointwise_conv_backward(feat, &self.params.dec_mean.weights, &d_mean_pre)?;
        grads.dec_mean.accumulate(&gm.weights, &gm.bias);
        let mut upstream = gm.input;
        match (&self.params.dec_var, &mut grads.dec_var) {
            (VarianceHead::Scalar(_), VarianceHead::Scalar(g)) => g.axpy(T::one(), &d_var_pre),
            (VarianceHead::PerPixel(a), VarianceHead::PerPixel(g)) => {
                let gv = pointwise_conv_backward(feat, &a.weights, &d_var_pre)?;
                g.accumulate(&gv.weights, &gv.bias);
                upstream.axpy(T::one(), &gv.input);
            }
            _ => return Err(Error::shape("decoder_backward", "matching variance heads", "mixed")),
        }

        for i in (0..self.params.dec_tconv.len()).rev() {
            let d_pre = leaky_relu_backward(&trace.hidden[i + 1], &upstream);
            let g = tconv2d_backward(&trace.hidden[i], &self.params.dec_tconv[i].weights, &d_pre)?;
            grads.dec_tconv[i].accumulate(&g.weights, &g.bias);
            upstream = g.input;
        }
        let m = trace.z.dim(0);
        let d_h = leaky_relu_backward(&trace.hidden[0], &upstream).reshape(&[m, self.arch.flat_seed()])?;
        let g = dense_backward(&trace.z, &self.params.dec_dense.weights, &d_h)?;
        grads.dec_dense.accumulate(&g.weights, &g.bias);
        Ok(g.input)
    }
}

impl Architecture {
    fn flat_seed(&self) -> usize {
        self.decoder_seed_shape().iter().product()
    }
}
