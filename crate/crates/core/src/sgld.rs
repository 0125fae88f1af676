//! Stochastic Gradient Langevin Dynamics.
//!
//! One step moves the parameters by
//!
//! ```text
//! Δθ = (η/2)·(∇log p(θ|λ) + (N/M)·Σ_{i∈S} ∇log p(yᵢ|xᵢ,θ)) + z,   z ~ N(0, η·I)
//! ```
//!
//! with a spherical Gaussian prior of precision λ, so `∇log p(θ|λ) = −λθ`.
//! [`Chain`] drives repeated steps with burn-in/thinning bookkeeping and
//! [`PredictiveAccumulator`] keeps the running Monte Carlo average of the
//! softmax outputs of retained samples.

use rand_chacha::ChaCha8Rng;

use crate::data::LabeledBatch;
use crate::nn::{backward, forward, forward_trace, nll_loss, softmax, ForwardMode, NetworkSpec, NnError, ParamVector};
use crate::real::Real;
use crate::rng::RngState;
use crate::tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum SgldError {
    #[error("invalid teacher config: {0}")]
    Config(String),
    #[error("minibatch has {found} examples, config says M = {expected}")]
    BatchSize { expected: usize, found: usize },
    #[error("non-finite log-likelihood gradient at iteration {iteration}")]
    NonFinite { iteration: u64 },
    #[error(transparent)]
    Network(#[from] NnError),
}

/// How the Langevin noise scale is read from η.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseScale {
    /// z ~ N(0, η·I): per-coordinate standard deviation √η.
    #[default]
    Variance,
    /// Per-coordinate standard deviation η. Only for sensitivity studies.
    StdDev,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TeacherConfig {
    /// Fixed step size η.
    pub eta: f64,
    /// Prior precision λ.
    pub lambda: f64,
    /// Labeled training-set size N.
    pub n_total: usize,
    /// Minibatch size M.
    pub batch_size: usize,
    pub burn_in: u64,
    pub thinning: u64,
    pub total_iters: u64,
    pub seed: u64,
    pub noise: NoiseScale,
}

impl Default for TeacherConfig {
    fn default() -> Self {
        Self {
            eta: 4e-6,
            lambda: 10.0,
            n_total: 60_000,
            batch_size: 100,
            burn_in: 1000,
            thinning: 100,
            total_iters: 1_000_000,
            seed: 0,
            noise: NoiseScale::Variance,
        }
    }
}

impl TeacherConfig {
    pub fn validate(&self) -> Result<(), SgldError> {
        let fail = |m: &str| Err(SgldError::Config(m.into()));
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return fail("eta must be a finite non-negative number");
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return fail("lambda must be finite and non-negative");
        }
        if self.batch_size == 0 || self.batch_size > self.n_total {
            return fail("need 0 < M <= N");
        }
        if self.thinning == 0 {
            return fail("thinning interval must be at least 1");
        }
        if self.burn_in >= self.total_iters {
            return fail("burn-in must be shorter than the chain");
        }
        Ok(())
    }

    /// Iteration `t` (1-based) counts toward the predictive average.
    pub fn is_retained(&self, t: u64) -> bool {
        t > self.burn_in && (t - self.burn_in).is_multiple_of(self.thinning)
    }

    pub fn retained_count(&self) -> u64 {
        self.total_iters.saturating_sub(self.burn_in) / self.thinning
    }

    fn noise_std(&self) -> f64 {
        match self.noise {
            NoiseScale::Variance => self.eta.sqrt(),
            NoiseScale::StdDev => self.eta,
        }
    }
}

/// Source of standard-normal draws for the Langevin term.
pub trait NoiseSource<T> {
    fn fill_standard_normal(&mut self, out: &mut [T]);
}

/// Seeded Gaussian noise.
#[derive(Clone, Debug)]
pub struct GaussianNoise {
    rng: ChaCha8Rng,
}

impl GaussianNoise {
    pub fn new(rng: ChaCha8Rng) -> Self {
        Self { rng }
    }

    pub fn state(&self) -> RngState {
        RngState::capture(&self.rng)
    }

    pub fn restore(state: &RngState) -> Self {
        Self { rng: state.restore() }
    }
}

impl<T: Real> NoiseSource<T> for GaussianNoise {
    fn fill_standard_normal(&mut self, out: &mut [T]) {
        for v in out {
            *v = T::sample_standard_normal(&mut self.rng);
        }
    }
}

/// Noise stubbed to zero, turning SGLD into scaled gradient ascent.
#[derive(Clone, Copy, Debug, Default)]
pub struct NoNoise;

impl<T: Real> NoiseSource<T> for NoNoise {
    fn fill_standard_normal(&mut self, out: &mut [T]) {
        out.fill(T::zero());
    }
}

/// A model whose log-likelihood gradient SGLD can follow.
pub trait LogLikelihood<T: Real> {
    type Params: Clone + AsRef<[T]> + AsMut<[T]>;
    type Batch;

    fn batch_len(&self, batch: &Self::Batch) -> usize;

    /// `Σ_{i∈batch} ∇_θ log p(yᵢ | xᵢ, θ)`.
    fn grad_log_lik(&self, theta: &Self::Params, batch: &Self::Batch) -> Result<Vec<T>, SgldError>;
}

/// Softmax classifier with categorical likelihood on the true labels.
pub struct Classifier<'a> {
    pub spec: &'a NetworkSpec,
}

impl<T: Real> LogLikelihood<T> for Classifier<'_> {
    type Params = ParamVector<T>;
    type Batch = LabeledBatch<T>;

    fn batch_len(&self, batch: &Self::Batch) -> usize {
        batch.labels.len()
    }

    fn grad_log_lik(&self, theta: &ParamVector<T>, batch: &LabeledBatch<T>) -> Result<Vec<T>, SgldError> {
        let trace = forward_trace(self.spec, theta, &batch.inputs, ForwardMode::Eval)?;
        let (_, mut grad_nll) = nll_loss(trace.logits(), &batch.labels);
        for v in grad_nll.data_mut() {
            *v = -*v;
        }
        Ok(backward(self.spec, theta, &trace, &grad_nll)?.into_values())
    }
}

/// yᵢ ~ N(θ, 1) with a single location parameter; the conjugate test model.
#[derive(Clone, Copy, Debug, Default)]
pub struct GaussianLocation;

impl<T: Real> LogLikelihood<T> for GaussianLocation {
    type Params = Vec<T>;
    type Batch = Vec<T>;

    fn batch_len(&self, batch: &Vec<T>) -> usize {
        batch.len()
    }

    fn grad_log_lik(&self, theta: &Vec<T>, batch: &Vec<T>) -> Result<Vec<T>, SgldError> {
        Ok(vec![batch.iter().map(|&y| y - theta[0]).sum()])
    }
}

/// Gradient of the log of a zero-mean spherical Gaussian prior with precision λ: −λθ.
pub fn log_prior_grad<T: Real>(theta: &[T], lambda: f64) -> Vec<T> {
    let l = T::from_f64_lossy(lambda);
    theta.iter().map(|&v| -l * v).collect()
}

fn sgld_update<T, M, N>(
    theta: &mut M::Params,
    model: &M,
    batch: &M::Batch,
    cfg: &TeacherConfig,
    noise: &mut N,
) -> Result<(), SgldError>
where
    T: Real,
    M: LogLikelihood<T>,
    N: NoiseSource<T>,
{
    let found = model.batch_len(batch);
    if found != cfg.batch_size {
        return Err(SgldError::BatchSize { expected: cfg.batch_size, found });
    }
    let grad = model.grad_log_lik(theta, batch)?;
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(SgldError::NonFinite { iteration: 0 });
    }
    let values = theta.as_mut();
    let mut z = vec![T::zero(); values.len()];
    noise.fill_standard_normal(&mut z);
    let half_eta = T::from_f64_lossy(cfg.eta / 2.0);
    let lambda = T::from_f64_lossy(cfg.lambda);
    let scale = T::from_f64_lossy(cfg.n_total as f64 / cfg.batch_size as f64);
    let std = T::from_f64_lossy(cfg.noise_std());
    for ((v, &g), &e) in values.iter_mut().zip(&grad).zip(&z) {
        *v += half_eta * (scale * g - lambda * *v) + std * e;
    }
    Ok(())
}

/// One SGLD update; returns θ_{t+1}.
pub fn sgld_step<T, M, N>(
    theta: &M::Params,
    model: &M,
    batch: &M::Batch,
    cfg: &TeacherConfig,
    noise: &mut N,
) -> Result<M::Params, SgldError>
where
    T: Real,
    M: LogLikelihood<T>,
    N: NoiseSource<T>,
{
    let mut next = theta.clone();
    sgld_update(&mut next, model, batch, cfg, noise)?;
    Ok(next)
}

/// What a chain reports after each step.
pub struct SampleEvent<'a, P, B> {
    /// 1-based iteration index of the sample θ_t.
    pub iteration: u64,
    pub theta: &'a P,
    /// The minibatch this step consumed.
    pub batch: &'a B,
    /// Whether θ_t enters the predictive average.
    pub retained: bool,
}

/// Stepwise SGLD driver; owns θ, the noise stream and the iteration counter.
pub struct Chain<'m, T: Real, M: LogLikelihood<T>, N> {
    model: &'m M,
    cfg: TeacherConfig,
    theta: M::Params,
    iteration: u64,
    noise: N,
}

impl<'m, T: Real, M: LogLikelihood<T>, N: NoiseSource<T>> Chain<'m, T, M, N> {
    pub fn new(model: &'m M, init: M::Params, cfg: TeacherConfig, noise: N) -> Result<Self, SgldError> {
        cfg.validate()?;
        Ok(Self { model, cfg, theta: init, iteration: 0, noise })
    }

    /// Rebuilds a chain at a checkpointed position.
    pub fn resume(
        model: &'m M,
        theta: M::Params,
        iteration: u64,
        cfg: TeacherConfig,
        noise: N,
    ) -> Result<Self, SgldError> {
        let mut chain = Self::new(model, theta, cfg, noise)?;
        chain.iteration = iteration;
        Ok(chain)
    }

    pub fn theta(&self) -> &M::Params {
        &self.theta
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn config(&self) -> &TeacherConfig {
        &self.cfg
    }

    pub fn noise(&self) -> &N {
        &self.noise
    }

    pub fn is_done(&self) -> bool {
        self.iteration >= self.cfg.total_iters
    }

    /// Advances one iteration; returns the new index and whether it is retained.
    pub fn step(&mut self, batch: &M::Batch) -> Result<(u64, bool), SgldError> {
        let t = self.iteration + 1;
        sgld_update(&mut self.theta, self.model, batch, &self.cfg, &mut self.noise).map_err(|e| match e {
            SgldError::NonFinite { .. } => SgldError::NonFinite { iteration: t },
            other => other,
        })?;
        if self.theta.as_ref().iter().any(|v| !v.is_finite()) {
            return Err(SgldError::NonFinite { iteration: t });
        }
        self.iteration = t;
        Ok((t, self.cfg.is_retained(t)))
    }
}

/// Runs `cfg.total_iters` steps, reporting every sample to `on_sample`.
pub fn run_chain<T, M, N, I, F, E>(
    model: &M,
    init: M::Params,
    batches: I,
    cfg: &TeacherConfig,
    noise: N,
    mut on_sample: F,
) -> Result<M::Params, E>
where
    T: Real,
    M: LogLikelihood<T>,
    N: NoiseSource<T>,
    I: IntoIterator<Item = M::Batch>,
    F: FnMut(SampleEvent<'_, M::Params, M::Batch>) -> Result<(), E>,
    E: From<SgldError>,
{
    let mut chain = Chain::new(model, init, cfg.clone(), noise)?;
    let mut batches = batches.into_iter();
    while !chain.is_done() {
        let batch = batches.next().ok_or_else(|| SgldError::Config("minibatch stream ended early".into()))?;
        let (iteration, retained) = chain.step(&batch)?;
        on_sample(SampleEvent { iteration, theta: chain.theta(), batch: &batch, retained })?;
    }
    Ok(chain.theta)
}

/// Running sum of softmax outputs over retained samples, kept in f64.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictiveAccumulator {
    prob_sum: Vec<f64>,
    rows: usize,
    classes: usize,
    count: u64,
}

const EVAL_CHUNK: usize = 500;

impl PredictiveAccumulator {
    pub fn new(rows: usize, classes: usize) -> Self {
        Self { prob_sum: vec![0.0; rows * classes], rows, classes, count: 0 }
    }

    pub fn from_parts(prob_sum: Vec<f64>, rows: usize, classes: usize, count: u64) -> Self {
        assert_eq!(prob_sum.len(), rows * classes);
        Self { prob_sum, rows, classes, count }
    }

    pub fn sample_count(&self) -> u64 {
        self.count
    }

    pub fn prob_sum(&self) -> &[f64] {
        &self.prob_sum
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    /// Adds one sample's probability table.
    pub fn add_probs<T: Real>(&mut self, probs: &Tensor<T>) {
        assert_eq!(probs.shape(), &[self.rows, self.classes], "probability table shape");
        for (acc, &p) in self.prob_sum.iter_mut().zip(probs.data()) {
            *acc += p.as_f64();
        }
        self.count += 1;
    }

    /// Evaluates θ on `inputs` in Eval mode and adds its softmax outputs.
    pub fn accumulate<T: Real>(
        &mut self,
        spec: &NetworkSpec,
        theta: &ParamVector<T>,
        inputs: &Tensor<T>,
    ) -> Result<(), NnError> {
        let probs = predict_probs(spec, theta, inputs)?;
        self.add_probs(&probs);
        Ok(())
    }

    /// Monte Carlo estimate of the posterior predictive distribution.
    pub fn mean(&self) -> Option<Tensor<f64>> {
        if self.count == 0 {
            return None;
        }
        let inv = 1.0 / self.count as f64;
        let data = self.prob_sum.iter().map(|v| v * inv).collect();
        Some(Tensor::new(vec![self.rows, self.classes], data).expect("accumulator shape"))
    }
}

/// Eval-mode softmax outputs, computed in chunks to bound memory.
pub fn predict_probs<T: Real>(
    spec: &NetworkSpec,
    params: &ParamVector<T>,
    inputs: &Tensor<T>,
) -> Result<Tensor<T>, NnError> {
    let n = inputs.batch_size();
    let mut data = Vec::with_capacity(n * spec.classes());
    let mut start = 0;
    while start < n {
        let end = (start + EVAL_CHUNK).min(n);
        let logits = forward(spec, params, &inputs.slice_batch(start, end), ForwardMode::Eval)?;
        data.extend_from_slice(softmax(&logits).data());
        start = end;
    }
    Tensor::new(vec![n, spec.classes()], data)
}
