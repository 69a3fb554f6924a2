//! The five training objectives, their analytic gradients and a
//! central-difference oracle.
//!
//! All objectives act on column-stacked samples: `U` is `m x n_t`, `Y` is
//! `n x n_t`. Norms are Frobenius unless a precision weight is attached.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::ensure_finite;
use crate::model::{ForwardOperator, GaussianPrior, NoiseModel, TrainingSet};
use crate::network::{Architecture, DenseNetwork};
use crate::rng::StreamRng;
use crate::solvers::{check_weight, Hyperparameters};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    /// `½‖U - Ψ(Y)‖² + α1/2 ‖W‖² + α2/2 ‖b‖²`
    Ndnn,
    /// `½‖U - Ψ(Y)‖²_{Γ⁻¹} + α/2 ‖Y - 𝒢(Ψ(Y))‖²_{Λ⁻¹}`
    Mcdnn,
    /// `α/2 ‖Y - Ψe(U)‖² + ½‖U - Ψd(Ψe(U))‖² + β/2 ‖Y - 𝒢(Ψd(Ψe(U)))‖²`
    McDecoder,
    /// `½‖U - Ψd(Ψe(U))‖² + β/2 ‖Ψe(U) - 𝒢(Ψd(Ψe(U)))‖²`
    McDecoderVar,
    /// `α/2 ‖U - Ψe(Y)‖² + ½‖Y - Ψd(Ψe(Y))‖² + β/2 ‖Y - 𝒢(Ψe(Y))‖²`
    McEncoder,
}

impl LossKind {
    pub const ALL: [LossKind; 5] = [
        LossKind::Ndnn,
        LossKind::Mcdnn,
        LossKind::McDecoder,
        LossKind::McDecoderVar,
        LossKind::McEncoder,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            LossKind::Ndnn => "ndnn",
            LossKind::Mcdnn => "mcdnn",
            LossKind::McDecoder => "mcdecoder",
            LossKind::McDecoderVar => "mcdecodervar",
            LossKind::McEncoder => "mcencoder",
        }
    }

    pub fn uses_autoencoder(self) -> bool {
        matches!(self, LossKind::McDecoder | LossKind::McDecoderVar | LossKind::McEncoder)
    }
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LossKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown loss kind '{s}'")))
    }
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Encoder/decoder pair. Parameters flatten encoder first.
#[derive(Debug, Clone, PartialEq)]
pub struct AutoencoderParams {
    pub encoder: DenseNetwork,
    pub decoder: DenseNetwork,
}

impl AutoencoderParams {
    pub fn new(encoder: DenseNetwork, decoder: DenseNetwork) -> Result<Self> {
        if encoder.output_dim() != decoder.input_dim() {
            return Err(Error::invalid(format!(
                "encoder output {} does not feed decoder input {}",
                encoder.output_dim(),
                decoder.input_dim()
            )));
        }
        Ok(AutoencoderParams { encoder, decoder })
    }

    /// One linear layer on each side.
    pub fn linear(
        enc_weight: DMatrix<f64>,
        enc_bias: DVector<f64>,
        dec_weight: DMatrix<f64>,
        dec_bias: DVector<f64>,
    ) -> Result<Self> {
        Self::new(
            DenseNetwork::affine(enc_weight, enc_bias)?,
            DenseNetwork::affine(dec_weight, dec_bias)?,
        )
    }

    pub fn num_params(&self) -> usize {
        self.encoder.num_params() + self.decoder.num_params()
    }

    pub fn flatten(&self) -> DVector<f64> {
        let e = self.encoder.flatten();
        let d = self.decoder.flatten();
        DVector::from_iterator(e.len() + d.len(), e.iter().chain(d.iter()).copied())
    }

    pub fn with_params(&self, theta: &[f64]) -> Result<Self> {
        if theta.len() != self.num_params() {
            return Err(Error::invalid(format!(
                "expected {} parameters, got {}",
                self.num_params(),
                theta.len()
            )));
        }
        let (e, d) = theta.split_at(self.encoder.num_params());
        Ok(AutoencoderParams {
            encoder: self.encoder.with_params(e)?,
            decoder: self.decoder.with_params(d)?,
        })
    }
}

/// Trainable parameters of any objective.
#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Network(DenseNetwork),
    Autoencoder(AutoencoderParams),
}

impl Model {
    pub fn num_params(&self) -> usize {
        match self {
            Model::Network(n) => n.num_params(),
            Model::Autoencoder(a) => a.num_params(),
        }
    }

    pub fn flatten(&self) -> DVector<f64> {
        match self {
            Model::Network(n) => n.flatten(),
            Model::Autoencoder(a) => a.flatten(),
        }
    }

    pub fn with_params(&self, theta: &[f64]) -> Result<Self> {
        Ok(match self {
            Model::Network(n) => Model::Network(n.with_params(theta)?),
            Model::Autoencoder(a) => Model::Autoencoder(a.with_params(theta)?),
        })
    }
}

impl Model {
    /// Fresh parameters for `kind` with `arch` on every network. The naive
    /// and model-constrained maps take data to parameters; the autoencoders
    /// get an encoder and a decoder of the same architecture.
    pub fn init(kind: LossKind, arch: &Architecture, param_dim: usize, data_dim: usize, rng: &mut StreamRng) -> Result<Self> {
        Ok(match kind {
            LossKind::Ndnn | LossKind::Mcdnn => Model::Network(arch.init(data_dim, param_dim, rng)),
            LossKind::McDecoder | LossKind::McDecoderVar => {
                let encoder = arch.init(param_dim, data_dim, rng);
                Model::Autoencoder(AutoencoderParams::new(encoder, arch.init(data_dim, param_dim, rng))?)
            }
            LossKind::McEncoder => {
                let encoder = arch.init(data_dim, param_dim, rng);
                Model::Autoencoder(AutoencoderParams::new(encoder, arch.init(param_dim, data_dim, rng))?)
            }
        })
    }

    /// The learned inverse map applied to observation columns: the network
    /// itself, the decoder of the decoder objectives, or the encoder of the
    /// encoder objective.
    pub fn invert(&self, kind: LossKind, y: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        match (self, kind) {
            (Model::Network(n), LossKind::Ndnn | LossKind::Mcdnn) => n.forward(y),
            (Model::Autoencoder(a), LossKind::McDecoder | LossKind::McDecoderVar) => a.decoder.forward(y),
            (Model::Autoencoder(a), LossKind::McEncoder) => a.encoder.forward(y),
            _ => Err(Error::invalid(format!("model does not match loss kind {kind}"))),
        }
    }
}

/// Everything an objective needs besides the trainable parameters.
///
/// Missing precisions mean identity weighting.
#[derive(Debug, Clone, Copy)]
pub struct Problem<'a> {
    pub data: &'a TrainingSet,
    pub forward: &'a ForwardOperator,
    pub prior_precision: Option<&'a DMatrix<f64>>,
    pub noise_precision: Option<&'a DMatrix<f64>>,
    pub hyper: Hyperparameters,
}

impl<'a> Problem<'a> {
    pub fn new(data: &'a TrainingSet, forward: &'a ForwardOperator, hyper: Hyperparameters) -> Self {
        Problem {
            data,
            forward,
            prior_precision: None,
            noise_precision: None,
            hyper,
        }
    }

    pub fn weighted(mut self, prior: &'a GaussianPrior, noise: &'a NoiseModel) -> Self {
        self.prior_precision = Some(prior.precision());
        self.noise_precision = Some(noise.precision());
        self
    }
}

/// A loss kind bound to its problem data.
#[derive(Debug, Clone, Copy)]
pub struct Objective<'a> {
    pub kind: LossKind,
    pub problem: Problem<'a>,
}

impl<'a> Objective<'a> {
    pub fn new(kind: LossKind, problem: Problem<'a>) -> Result<Self> {
        problem.hyper.validate()?;
        let (m, n) = (problem.forward.param_dim(), problem.forward.data_dim());
        if problem.data.param_dim() != m || problem.data.data_dim() != n {
            return Err(Error::invalid(format!(
                "training set ({}x{} / {}x{}) does not match forward operator {n}x{m}",
                problem.data.param_dim(),
                problem.data.len(),
                problem.data.data_dim(),
                problem.data.len()
            )));
        }
        if let Some(p) = problem.prior_precision {
            if p.shape() != (m, m) {
                return Err(Error::invalid("prior precision has the wrong shape"));
            }
        }
        if let Some(p) = problem.noise_precision {
            if p.shape() != (n, n) {
                return Err(Error::invalid("noise precision has the wrong shape"));
            }
        }
        Ok(Objective { kind, problem })
    }

    pub fn loss(&self, model: &Model) -> Result<f64> {
        Ok(self.evaluate(model, false)?.0)
    }

    pub fn loss_and_gradient(&self, model: &Model) -> Result<(f64, DVector<f64>)> {
        let (loss, grad) = self.evaluate(model, true)?;
        Ok((loss, grad.expect("gradient requested")))
    }

    /// Loss at `theta` interpreted with the layout of `template`.
    pub fn loss_at(&self, template: &Model, theta: &[f64]) -> Result<f64> {
        self.loss(&template.with_params(theta)?)
    }

    fn check_model(&self, model: &Model) -> Result<()> {
        let (m, n) = (self.problem.forward.param_dim(), self.problem.forward.data_dim());
        let ok = match (self.kind, model) {
            (LossKind::Ndnn | LossKind::Mcdnn, Model::Network(net)) => net.input_dim() == n && net.output_dim() == m,
            (LossKind::McDecoder | LossKind::McDecoderVar, Model::Autoencoder(ae)) => {
                ae.encoder.input_dim() == m && ae.encoder.output_dim() == n && ae.decoder.output_dim() == m
            }
            (LossKind::McEncoder, Model::Autoencoder(ae)) => {
                ae.encoder.input_dim() == n && ae.encoder.output_dim() == m && ae.decoder.output_dim() == n
            }
            _ => false,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "model does not fit the {} objective with m={m}, n={n}",
                self.kind
            )))
        }
    }

    fn evaluate(&self, model: &Model, want_grad: bool) -> Result<(f64, Option<DVector<f64>>)> {
        self.check_model(model)?;
        let p = &self.problem;
        let h = p.hyper;
        let u = p.data.params();
        let y = p.data.data();
        let fwd = p.forward;

        let (loss, grad) = match (self.kind, model) {
            (LossKind::Ndnn, Model::Network(net)) => {
                let cache = net.forward_cached(y)?;
                let r = u - &cache.output;
                let loss = 0.5 * r.norm_squared()
                    + 0.5 * h.alpha1 * net.weight_norm_sq()
                    + 0.5 * h.alpha2 * net.bias_norm_sq();
                let grad = want_grad.then(|| {
                    let (g, _) = net.backward(&cache, &(-r));
                    g + net.penalty_gradient(h.alpha1, h.alpha2)
                });
                (loss, grad)
            }
            (LossKind::Mcdnn, Model::Network(net)) => {
                let cache = net.forward_cached(y)?;
                let r_param = u - &cache.output;
                let w_param = weigh(p.prior_precision, &r_param);
                let r_model = y - fwd.apply_columns(&cache.output)?;
                let w_model = weigh(p.noise_precision, &r_model);
                let loss = 0.5 * r_param.dot(&w_param) + 0.5 * h.alpha * r_model.dot(&w_model);
                let grad = if want_grad {
                    let d_out = -w_param - fwd.vjp_columns(&cache.output, &w_model)? * h.alpha;
                    Some(net.backward(&cache, &d_out).0)
                } else {
                    None
                };
                (loss, grad)
            }
            (LossKind::McDecoder, Model::Autoencoder(ae)) => {
                let enc = ae.encoder.forward_cached(u)?;
                let dec = ae.decoder.forward_cached(&enc.output)?;
                let r_enc = y - &enc.output;
                let r_dec = u - &dec.output;
                let r_model = y - fwd.apply_columns(&dec.output)?;
                let loss = 0.5 * h.alpha * r_enc.norm_squared()
                    + 0.5 * r_dec.norm_squared()
                    + 0.5 * h.beta * r_model.norm_squared();
                let grad = if want_grad {
                    let d_dec = -r_dec - fwd.vjp_columns(&dec.output, &r_model)? * h.beta;
                    let (g_dec, d_latent) = ae.decoder.backward(&dec, &d_dec);
                    let d_enc = d_latent - r_enc * h.alpha;
                    let (g_enc, _) = ae.encoder.backward(&enc, &d_enc);
                    Some(concat(&g_enc, &g_dec))
                } else {
                    None
                };
                (loss, grad)
            }
            (LossKind::McDecoderVar, Model::Autoencoder(ae)) => {
                let enc = ae.encoder.forward_cached(u)?;
                let dec = ae.decoder.forward_cached(&enc.output)?;
                let r_dec = u - &dec.output;
                let r_model = &enc.output - fwd.apply_columns(&dec.output)?;
                let loss = 0.5 * r_dec.norm_squared() + 0.5 * h.beta * r_model.norm_squared();
                let grad = if want_grad {
                    let d_dec = -r_dec - fwd.vjp_columns(&dec.output, &r_model)? * h.beta;
                    let (g_dec, d_latent) = ae.decoder.backward(&dec, &d_dec);
                    let d_enc = d_latent + r_model * h.beta;
                    let (g_enc, _) = ae.encoder.backward(&enc, &d_enc);
                    Some(concat(&g_enc, &g_dec))
                } else {
                    None
                };
                (loss, grad)
            }
            (LossKind::McEncoder, Model::Autoencoder(ae)) => {
                let enc = ae.encoder.forward_cached(y)?;
                let dec = ae.decoder.forward_cached(&enc.output)?;
                let r_enc = u - &enc.output;
                let r_dec = y - &dec.output;
                let r_model = y - fwd.apply_columns(&enc.output)?;
                let loss = 0.5 * h.alpha * r_enc.norm_squared()
                    + 0.5 * r_dec.norm_squared()
                    + 0.5 * h.beta * r_model.norm_squared();
                let grad = if want_grad {
                    let (g_dec, d_latent) = ae.decoder.backward(&dec, &(-r_dec));
                    let d_enc = d_latent - r_enc * h.alpha - fwd.vjp_columns(&enc.output, &r_model)? * h.beta;
                    let (g_enc, _) = ae.encoder.backward(&enc, &d_enc);
                    Some(concat(&g_enc, &g_dec))
                } else {
                    None
                };
                (loss, grad)
            }
            _ => unreachable!("checked by check_model"),
        };

        if !loss.is_finite() {
            return Err(Error::Numeric {
                location: format!("{} loss value", self.kind),
            });
        }
        if let Some(g) = &grad {
            ensure_finite(g.iter(), &format!("{} gradient", self.kind))?;
        }
        Ok((loss, grad))
    }
}

fn weigh(precision: Option<&DMatrix<f64>>, r: &DMatrix<f64>) -> DMatrix<f64> {
    match precision {
        Some(p) => p * r,
        None => r.clone(),
    }
}

fn concat(a: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
    DVector::from_iterator(a.len() + b.len(), a.iter().chain(b.iter()).copied())
}

fn identity_forward(ts: &TrainingSet) -> Result<ForwardOperator> {
    // Placeholder operator for the naive loss, which never evaluates it.
    ForwardOperator::linear(DMatrix::zeros(ts.data_dim(), ts.param_dim()))
}

pub fn loss_ndnn(net: &DenseNetwork, ts: &TrainingSet, alpha1: f64, alpha2: f64) -> Result<f64> {
    check_weight("alpha1", alpha1)?;
    check_weight("alpha2", alpha2)?;
    let fwd = identity_forward(ts)?;
    let hyper = Hyperparameters {
        alpha1,
        alpha2,
        ..Default::default()
    };
    Objective::new(LossKind::Ndnn, Problem::new(ts, &fwd, hyper))?.loss(&Model::Network(net.clone()))
}

pub fn loss_mcdnn(
    net: &DenseNetwork,
    ts: &TrainingSet,
    fwd: &ForwardOperator,
    prior: &GaussianPrior,
    noise: &NoiseModel,
    alpha: f64,
) -> Result<f64> {
    let hyper = Hyperparameters {
        alpha,
        ..Default::default()
    };
    Objective::new(LossKind::Mcdnn, Problem::new(ts, fwd, hyper).weighted(prior, noise))?
        .loss(&Model::Network(net.clone()))
}

pub fn loss_mc_decoder(ae: &AutoencoderParams, ts: &TrainingSet, fwd: &ForwardOperator, alpha: f64, beta: f64) -> Result<f64> {
    let hyper = Hyperparameters {
        alpha,
        beta,
        ..Default::default()
    };
    Objective::new(LossKind::McDecoder, Problem::new(ts, fwd, hyper))?.loss(&Model::Autoencoder(ae.clone()))
}

pub fn loss_mc_decoder_var(ae: &AutoencoderParams, ts: &TrainingSet, fwd: &ForwardOperator, beta: f64) -> Result<f64> {
    let hyper = Hyperparameters {
        beta,
        ..Default::default()
    };
    Objective::new(LossKind::McDecoderVar, Problem::new(ts, fwd, hyper))?.loss(&Model::Autoencoder(ae.clone()))
}

pub fn loss_mc_encoder(ae: &AutoencoderParams, ts: &TrainingSet, fwd: &ForwardOperator, alpha: f64, beta: f64) -> Result<f64> {
    let hyper = Hyperparameters {
        alpha,
        beta,
        ..Default::default()
    };
    Objective::new(LossKind::McEncoder, Problem::new(ts, fwd, hyper))?.loss(&Model::Autoencoder(ae.clone()))
}

/// Analytic gradient of `objective` at `model`, flattened like the model.
pub fn gradient(objective: &Objective<'_>, model: &Model) -> Result<DVector<f64>> {
    Ok(objective.loss_and_gradient(model)?.1)
}

/// Central differences `(f(θ + h eᵢ) - f(θ - h eᵢ)) / 2h`.
pub fn finite_difference_gradient<F>(f: F, theta: &[f64], h: f64) -> Result<DVector<f64>>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    if !(h > 0.0) {
        return Err(Error::invalid(format!("finite-difference step must be positive, got {h}")));
    }
    let mut work = theta.to_vec();
    let mut out = DVector::zeros(theta.len());
    for i in 0..theta.len() {
        let orig = work[i];
        work[i] = orig + h;
        let plus = f(&work)?;
        work[i] = orig - h;
        let minus = f(&work)?;
        work[i] = orig;
        out[i] = (plus - minus) / (2.0 * h);
    }
    Ok(out)
}

/// [`finite_difference_gradient`] of an objective around `model`.
pub fn objective_fd_gradient(objective: &Objective<'_>, model: &Model, h: f64) -> Result<DVector<f64>> {
    finite_difference_gradient(|t| objective.loss_at(model, t), model.flatten().as_slice(), h)
}
