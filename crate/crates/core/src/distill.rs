//! Online distillation of the teacher's predictive distribution into a student.
//!
//! Every teacher sample θ_{t+1} drives one Adam step on the student: draw inputs
//! from the unlabeled pool, perturb them with small Gaussian noise, take the
//! teacher's softmax outputs on the perturbed inputs as soft targets, and descend
//! the summed KL divergence between teacher and student predictions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{BatchSampler, DataError, UnlabeledPool};
use crate::nn::{backward, forward, forward_trace, softmax, ForwardMode, NetworkSpec, NnError, ParamVector};
use crate::real::Real;
use crate::rng::RngState;
use crate::tensor::Tensor;

/// Floor applied to probabilities inside logarithms.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, thiserror::Error)]
pub enum DistillError {
    #[error("invalid student config: {0}")]
    Config(String),
    #[error("non-finite distillation loss at iteration {iteration}")]
    NonFinite { iteration: u64 },
    #[error(transparent)]
    Network(#[from] NnError),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// Direction of the distillation KL.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Divergence {
    /// KL(teacher ‖ student), i.e. cross-entropy against soft targets up to a constant.
    #[default]
    ForwardKl,
    /// KL(student ‖ teacher).
    ReverseKl,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StudentConfig {
    /// Initial learning rate ρ₀.
    pub rho0: f64,
    pub dropout_rate: f64,
    /// Standard deviation of the Gaussian input perturbation.
    pub perturb_sigma: f64,
    pub divergence: Divergence,
    pub halving_period_epochs: u64,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for StudentConfig {
    fn default() -> Self {
        Self {
            rho0: 1e-3,
            dropout_rate: 0.5,
            perturb_sigma: 1e-3,
            divergence: Divergence::ForwardKl,
            halving_period_epochs: 100,
            adam: AdamConfig::default(),
            seed: 0,
        }
    }
}

impl StudentConfig {
    pub fn validate(&self) -> Result<(), DistillError> {
        let fail = |m: &str| Err(DistillError::Config(m.into()));
        if !(self.rho0 > 0.0 && self.rho0.is_finite()) {
            return fail("rho0 must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return fail("dropout rate must lie in [0, 1)");
        }
        if !(self.perturb_sigma >= 0.0 && self.perturb_sigma.is_finite()) {
            return fail("perturbation sigma must be non-negative");
        }
        if self.halving_period_epochs == 0 {
            return fail("halving period must be at least one epoch");
        }
        let AdamConfig { beta1, beta2, eps } = self.adam;
        if !(beta1 > 0.0 && beta1 < 1.0 && beta2 > 0.0 && beta2 < 1.0 && eps > 0.0) {
            return fail("Adam needs beta1, beta2 in (0, 1) and eps > 0");
        }
        Ok(())
    }
}

/// S′: inputs plus i.i.d. N(0, σ²) noise.
pub fn perturb_batch<T: Real, R: Rng + ?Sized>(inputs: &Tensor<T>, sigma: f64, rng: &mut R) -> Tensor<T> {
    let mut out = inputs.clone();
    if sigma == 0.0 {
        return out;
    }
    let s = T::from_f64_lossy(sigma);
    for v in out.data_mut() {
        *v += s * T::sample_standard_normal(rng);
    }
    out
}

/// Σ_k p_k ln(p_k / q_k) with 0·ln 0 = 0 and q floored at 1e−12.
pub fn kl_categorical(p: &[f64], q: &[f64]) -> f64 {
    assert_eq!(p.len(), q.len(), "distributions over different supports");
    p.iter()
        .zip(q)
        .filter(|(&pk, _)| pk > 0.0)
        .map(|(&pk, &qk)| pk * (pk.ln() - qk.max(PROB_FLOOR).ln()))
        .sum::<f64>()
        .max(0.0)
}

/// Summed per-row KL and its gradient with respect to the student logits.
pub fn distill_loss<T: Real>(
    student_probs: &Tensor<T>,
    teacher_probs: &Tensor<T>,
    mode: Divergence,
) -> Result<(f64, Tensor<T>), NnError> {
    if student_probs.shape() != teacher_probs.shape() || student_probs.shape().len() != 2 {
        return Err(NnError::Shape(format!(
            "student probabilities {:?} vs teacher probabilities {:?}",
            student_probs.shape(),
            teacher_probs.shape()
        )));
    }
    let width = student_probs.row_len();
    let mut grad = Tensor::zeros(student_probs.shape().to_vec());
    let mut total = 0.0;
    let mut s = vec![0.0; width];
    let mut t = vec![0.0; width];
    for ((srow, trow), grow) in
        student_probs.rows().zip(teacher_probs.rows()).zip(grad.data_mut().chunks_exact_mut(width))
    {
        for k in 0..width {
            s[k] = srow[k].as_f64();
            t[k] = trow[k].as_f64();
        }
        match mode {
            Divergence::ForwardKl => {
                total += kl_categorical(&t, &s);
                for k in 0..width {
                    grow[k] = T::from_f64_lossy(s[k] - t[k]);
                }
            }
            Divergence::ReverseKl => {
                let log_ratio: Vec<f64> =
                    (0..width).map(|k| if s[k] > 0.0 { s[k].ln() - t[k].max(PROB_FLOOR).ln() } else { 0.0 }).collect();
                let row_kl: f64 = (0..width).map(|k| s[k] * log_ratio[k]).sum();
                total += row_kl.max(0.0);
                for k in 0..width {
                    grow[k] = T::from_f64_lossy(s[k] * (log_ratio[k] - row_kl));
                }
            }
        }
    }
    Ok((total, grad))
}

/// First and second moment estimates for Adam.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub first_moment: Vec<T>,
    pub second_moment: Vec<T>,
    pub step_count: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new(len: usize) -> Self {
        Self { first_moment: vec![T::zero(); len], second_moment: vec![T::zero(); len], step_count: 0 }
    }
}

/// Bias-corrected Adam update, in place.
pub fn adam_step<T: Real>(omega: &mut [T], grad: &[T], state: &mut AdamState<T>, lr: f64, cfg: &AdamConfig) {
    assert_eq!(omega.len(), grad.len(), "gradient length");
    assert_eq!(omega.len(), state.first_moment.len(), "Adam state length");
    state.step_count += 1;
    let t = state.step_count as i32;
    let (b1, b2) = (T::from_f64_lossy(cfg.beta1), T::from_f64_lossy(cfg.beta2));
    let (one_b1, one_b2) = (T::one() - b1, T::one() - b2);
    let c1 = T::from_f64_lossy(1.0 / (1.0 - cfg.beta1.powi(t)));
    let c2 = T::from_f64_lossy(1.0 / (1.0 - cfg.beta2.powi(t)));
    let lr = T::from_f64_lossy(lr);
    let eps = T::from_f64_lossy(cfg.eps);
    for (((w, &g), m), v) in omega.iter_mut().zip(grad).zip(&mut state.first_moment).zip(&mut state.second_moment) {
        *m = b1 * *m + one_b1 * g;
        *v = b2 * *v + one_b2 * g * g;
        let m_hat = *m * c1;
        let v_hat = *v * c2;
        *w -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}

/// ρ₀ · 2^(−⌊epoch / period⌋) with epoch = ⌊iteration / iters_per_epoch⌋.
pub fn student_lr(iteration: u64, iters_per_epoch: u64, cfg: &StudentConfig) -> f64 {
    let epoch = iteration / iters_per_epoch.max(1);
    let halvings = (epoch / cfg.halving_period_epochs) as i32;
    cfg.rho0 * 0.5f64.powi(halvings)
}

/// Student network, optimizer state and the random streams it consumes.
#[derive(Clone, Debug)]
pub struct Distiller<T> {
    spec: NetworkSpec,
    omega: ParamVector<T>,
    adam: AdamState<T>,
    cfg: StudentConfig,
    iters_per_epoch: u64,
    iteration: u64,
    perturb_rng: ChaCha8Rng,
    dropout_rng: ChaCha8Rng,
}

/// Checkpointable student state.
#[derive(Clone, Debug, PartialEq)]
pub struct DistillerState<T> {
    pub omega: Vec<T>,
    pub adam: AdamState<T>,
    pub iteration: u64,
    pub perturb_rng: RngState,
    pub dropout_rng: RngState,
}

impl<T: Real> Distiller<T> {
    pub fn new(
        spec: NetworkSpec,
        omega: ParamVector<T>,
        cfg: StudentConfig,
        iters_per_epoch: u64,
        perturb_rng: ChaCha8Rng,
        dropout_rng: ChaCha8Rng,
    ) -> Result<Self, DistillError> {
        cfg.validate()?;
        if !omega.matches(&spec) {
            return Err(NnError::Shape("student parameters do not match the student spec".into()).into());
        }
        let adam = AdamState::new(omega.len());
        Ok(Self {
            spec,
            omega,
            adam,
            cfg,
            iters_per_epoch: iters_per_epoch.max(1),
            iteration: 0,
            perturb_rng,
            dropout_rng,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamVector<T> {
        &self.omega
    }

    pub fn into_params(self) -> ParamVector<T> {
        self.omega
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn current_lr(&self) -> f64 {
        student_lr(self.iteration, self.iters_per_epoch, &self.cfg)
    }

    /// One optimization step on perturbed `inputs` against teacher sample `theta`.
    /// Returns the distillation loss before the update.
    pub fn step(
        &mut self,
        teacher_spec: &NetworkSpec,
        theta: &ParamVector<T>,
        inputs: &Tensor<T>,
    ) -> Result<f64, DistillError> {
        let perturbed = perturb_batch(inputs, self.cfg.perturb_sigma, &mut self.perturb_rng);
        let teacher_probs = softmax(&forward(teacher_spec, theta, &perturbed, ForwardMode::Eval)?);
        let mode = ForwardMode::Train(self.dropout_rng.gen());
        let trace = forward_trace(&self.spec, &self.omega, &perturbed, mode)?;
        let student_probs = softmax(trace.logits());
        let (loss, grad_logits) = distill_loss(&student_probs, &teacher_probs, self.cfg.divergence)?;
        if !loss.is_finite() {
            return Err(DistillError::NonFinite { iteration: self.iteration + 1 });
        }
        let grad = backward(&self.spec, &self.omega, &trace, &grad_logits)?;
        let lr = self.current_lr();
        adam_step(self.omega.values_mut(), grad.values(), &mut self.adam, lr, &self.cfg.adam);
        self.iteration += 1;
        Ok(loss)
    }

    pub fn state(&self) -> DistillerState<T> {
        DistillerState {
            omega: self.omega.values().to_vec(),
            adam: self.adam.clone(),
            iteration: self.iteration,
            perturb_rng: RngState::capture(&self.perturb_rng),
            dropout_rng: RngState::capture(&self.dropout_rng),
        }
    }

    pub fn restore(
        spec: NetworkSpec,
        cfg: StudentConfig,
        iters_per_epoch: u64,
        state: DistillerState<T>,
    ) -> Result<Self, DistillError> {
        let omega = ParamVector::from_values(&spec, state.omega)?;
        if state.adam.first_moment.len() != omega.len() || state.adam.second_moment.len() != omega.len() {
            return Err(NnError::Shape("Adam state does not match the student parameters".into()).into());
        }
        let mut d =
            Self::new(spec, omega, cfg, iters_per_epoch, state.perturb_rng.restore(), state.dropout_rng.restore())?;
        d.adam = state.adam;
        d.iteration = state.iteration;
        Ok(d)
    }
}

/// Student loss on a fixed input batch against fixed teacher parameters, dropout off.
pub fn eval_distill_loss<T: Real>(
    student_spec: &NetworkSpec,
    omega: &ParamVector<T>,
    teacher_spec: &NetworkSpec,
    theta: &ParamVector<T>,
    inputs: &Tensor<T>,
    mode: Divergence,
) -> Result<f64, NnError> {
    let s = softmax(&forward(student_spec, omega, inputs, ForwardMode::Eval)?);
    let t = softmax(&forward(teacher_spec, theta, inputs, ForwardMode::Eval)?);
    Ok(distill_loss(&s, &t, mode)?.0)
}

/// Trains the student against a stream of teacher samples, one step per sample,
/// drawing minibatches of `batch_size` from the unlabeled pool.
pub fn distill_online<T, I>(
    teacher_spec: &NetworkSpec,
    teacher_samples: I,
    student_spec: &NetworkSpec,
    student_params: ParamVector<T>,
    pool: &UnlabeledPool<T>,
    batch_size: usize,
    cfg: &StudentConfig,
) -> Result<ParamVector<T>, DistillError>
where
    T: Real,
    I: IntoIterator<Item = ParamVector<T>>,
{
    use crate::rng::{substream, Stream};
    let iters_per_epoch = (pool.len() / batch_size.max(1)) as u64;
    let mut sampler = BatchSampler::new(pool.len(), batch_size, substream(cfg.seed, Stream::StudentBatches))?;
    let mut distiller = Distiller::new(
        student_spec.clone(),
        student_params,
        cfg.clone(),
        iters_per_epoch,
        substream(cfg.seed, Stream::Perturb),
        substream(cfg.seed, Stream::Dropout),
    )?;
    for theta in teacher_samples {
        let inputs = pool.batch(&sampler.next_indices());
        distiller.step(teacher_spec, &theta, &inputs)?;
    }
    Ok(distiller.into_params())
}

/// Builds a deterministic RNG for ad hoc perturbation calls.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn probs(rows: &[&[f64]]) -> Tensor<f64> {
        Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn kl_values() {
        assert_eq!(kl_categorical(&[0.3, 0.7], &[0.3, 0.7]), 0.0);
        let pq = kl_categorical(&[0.5, 0.5], &[0.9, 0.1]);
        let expect = 0.5 * (0.5f64 / 0.9).ln() + 0.5 * (0.5f64 / 0.1).ln();
        assert!((pq - expect).abs() < 1e-15);
        assert!((pq - 0.5108).abs() < 1e-4);
        let qp = kl_categorical(&[0.9, 0.1], &[0.5, 0.5]);
        assert!((qp - 0.3681).abs() < 1e-4);
        assert!(kl_categorical(&[1.0, 0.0], &[0.0, 1.0]).is_finite());
    }

    #[test]
    fn equal_distributions_give_zero_loss_and_gradient() {
        let p = probs(&[&[0.2, 0.3, 0.5], &[0.9, 0.05, 0.05]]);
        for mode in [Divergence::ForwardKl, Divergence::ReverseKl] {
            let (loss, grad) = distill_loss(&p, &p, mode).unwrap();
            assert!(loss.abs() < 1e-15);
            assert!(grad.data().iter().all(|g| g.abs() < 1e-15));
        }
    }

    #[test]
    fn forward_kl_gradient_example() {
        let (_, grad) = distill_loss(&probs(&[&[0.25, 0.75]]), &probs(&[&[0.5, 0.5]]), Divergence::ForwardKl).unwrap();
        assert!((grad.data()[0] + 0.25).abs() < 1e-15);
        assert!((grad.data()[1] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn forward_kl_is_cross_entropy_minus_entropy() {
        let s = probs(&[&[0.1, 0.6, 0.3], &[0.25, 0.25, 0.5]]);
        let t = probs(&[&[0.3, 0.3, 0.4], &[0.7, 0.2, 0.1]]);
        let (loss, _) = distill_loss(&s, &t, Divergence::ForwardKl).unwrap();
        let mut ce = 0.0;
        let mut h = 0.0;
        for (sr, tr) in s.rows().zip(t.rows()) {
            for (sk, tk) in sr.iter().zip(tr) {
                ce -= tk * sk.ln();
                h -= tk * tk.ln();
            }
        }
        assert!((loss - (ce - h)).abs() < 1e-10);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        assert!(distill_loss(&probs(&[&[0.5, 0.5]]), &probs(&[&[0.2, 0.3, 0.5]]), Divergence::ForwardKl).is_err());
    }

    #[test]
    fn adam_first_steps() {
        let cfg = AdamConfig::default();
        let mut w = vec![1.0f64, -2.0];
        let mut st = AdamState::new(2);
        adam_step(&mut w, &[0.0, 0.0], &mut st, 0.1, &cfg);
        assert_eq!(w, vec![1.0, -2.0]);

        let g = [0.3f64, -4.0];
        let mut w = vec![1.0f64, -2.0];
        let mut st = AdamState::new(2);
        adam_step(&mut w, &g, &mut st, 0.01, &cfg);
        for (i, (&wi, &gi)) in w.iter().zip(&g).enumerate() {
            let expect = [1.0, -2.0][i] - 0.01 * gi / (gi.abs() + 1e-8);
            assert!((wi - expect).abs() < 1e-12);
        }
        assert!(st.second_moment.iter().all(|&v| v >= 0.0));

        let mut w2 = vec![1.0f64, -2.0];
        let mut st2 = AdamState::new(2);
        adam_step(&mut w2, &g, &mut st2, 0.01, &cfg);
        assert_eq!(w, w2);
        assert_eq!(st, st2);
    }

    #[test]
    fn learning_rate_halves_every_period() {
        let cfg = StudentConfig::default();
        let ipe = 600;
        assert_eq!(student_lr(0, ipe, &cfg), 1e-3);
        assert_eq!(student_lr(99 * ipe + ipe - 1, ipe, &cfg), 1e-3);
        assert_eq!(student_lr(100 * ipe, ipe, &cfg), 5e-4);
        assert_eq!(student_lr(250 * ipe, ipe, &cfg), 2.5e-4);
    }

    #[test]
    fn zero_sigma_is_identity() {
        let x = Tensor::new(vec![2, 3], vec![0.1f64, 0.2, 0.3, 0.4, 0.5, 0.6]).unwrap();
        assert_eq!(perturb_batch(&x, 0.0, &mut seeded_rng(1)), x);
    }

    #[test]
    fn perturbation_matches_half_normal_mean() {
        let n = 200_000;
        let sigma = 1e-3;
        let x = Tensor::<f64>::zeros(vec![n, 1]);
        let a = perturb_batch(&x, sigma, &mut seeded_rng(42));
        assert_eq!(a, perturb_batch(&x, sigma, &mut seeded_rng(42)));
        let mean_abs = a.data().iter().map(|v| v.abs()).sum::<f64>() / n as f64;
        let expect = sigma * (2.0 / std::f64::consts::PI).sqrt();
        assert!((mean_abs - expect).abs() < 0.01 * expect, "{mean_abs} vs {expect}");
        let mean = a.data().iter().sum::<f64>() / n as f64;
        assert!(mean.abs() < 3.0 * sigma / (n as f64).sqrt());
    }

    #[test]
    fn config_validation() {
        assert!(StudentConfig::default().validate().is_ok());
        assert!(StudentConfig { dropout_rate: 1.0, ..Default::default() }.validate().is_err());
        assert!(StudentConfig { rho0: 0.0, ..Default::default() }.validate().is_err());
        let adam = AdamConfig { beta1: 1.0, ..Default::default() };
        assert!(StudentConfig { adam, ..Default::default() }.validate().is_err());
    }

    fn simplex_row(raw: Vec<f64>) -> Vec<f64> {
        let total: f64 = raw.iter().sum();
        raw.iter().map(|v| v / total).collect()
    }

    proptest! {
        #[test]
        fn losses_are_nonnegative(
            a in prop::collection::vec(0.001f64..1.0, 5),
            b in prop::collection::vec(0.001f64..1.0, 5),
        ) {
            let s = Tensor::new(vec![1, 5], simplex_row(a)).unwrap();
            let t = Tensor::new(vec![1, 5], simplex_row(b)).unwrap();
            for mode in [Divergence::ForwardKl, Divergence::ReverseKl] {
                let (loss, _) = distill_loss(&s, &t, mode).unwrap();
                prop_assert!(loss >= 0.0);
            }
        }
    }
}
