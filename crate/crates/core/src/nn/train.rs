use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{normalise_eta, Architecture, Block, BlockMask, Cache, NetworkModel};
use crate::error::{Error, Result};

/// Which loss is minimised. Monolithic architectures use `Joint`; staggered
/// ones run `First` (autoencoder) then `Second` (feed-forward block).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Joint,
    First,
    Second,
}

impl Stage {
    pub fn label(self) -> &'static str {
        match self {
            Stage::Joint => "joint",
            Stage::First => "stage1",
            Stage::Second => "stage2",
        }
    }

    pub fn stages_for(arch: Architecture) -> &'static [Stage] {
        if arch.is_staggered() {
            &[Stage::First, Stage::Second]
        } else {
            &[Stage::Joint]
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub omega_alpha: f64,
    pub omega_r: f64,
    pub omega_r_i: f64,
    pub omega_r_ii: f64,
    pub early_stop_tol: f64,
    pub early_stop_patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 5000,
            batch_size: 600,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            omega_alpha: 0.0,
            omega_r: 0.0,
            omega_r_i: 0.0,
            omega_r_ii: 0.0,
            early_stop_tol: 1e-3,
            early_stop_patience: 1000,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Default schedule with the regularisation weights of each architecture.
    pub fn for_architecture(arch: Architecture) -> Self {
        let base = Self::default();
        match arch {
            Architecture::Ffd | Architecture::Ae => Self { omega_r: 1e-4, ..base },
            Architecture::Effd => Self { omega_alpha: 1e-3, omega_r: 1e-4, ..base },
            Architecture::Saeffd => Self { omega_r_i: 1e-4, omega_r_ii: 1e-4, ..base },
            Architecture::Saeff => Self { omega_r_i: 1e-4, omega_r_ii: 10.0, ..base },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.early_stop_patience == 0 {
            return Err(Error::invalid("epochs, batch size and patience must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        let weights = [self.omega_alpha, self.omega_r, self.omega_r_i, self.omega_r_ii, self.early_stop_tol];
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::invalid("regularisation weights and tolerance must be non-negative"));
        }
        Ok(())
    }
}

/// Samples addressed by position: raw parameters and quad densities.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainingSet {
    pub etas: Vec<[f64; 2]>,
    pub thetas: Vec<Vec<f64>>,
}

impl TrainingSet {
    pub fn len(&self) -> usize {
        self.etas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.etas.is_empty()
    }
}

/// Indices into a [`TrainingSet`].
pub type Batch<'a> = &'a [usize];

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossTerms {
    /// Reconstruction error of the autoencoder path.
    pub ae: f64,
    /// Reconstruction error of the parameter path.
    pub eta: f64,
    /// Latent mismatch between the two codes.
    pub alpha: f64,
    /// Weighted LASSO contribution.
    pub regularisation: f64,
    pub total: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Gradients {
    pub encoder: Option<Vec<f64>>,
    pub ff: Option<Vec<f64>>,
    pub decoder: Option<Vec<f64>>,
}

/// What a given architecture and stage evaluates and trains.
struct Plan {
    trains: BlockMask,
    ae_term: bool,
    eta_term: bool,
    /// Weight of the latent mismatch; zero disables it.
    alpha_weight: f64,
    reg_coef: f64,
}

impl Plan {
    fn new(model: &NetworkModel, stage: Stage, cfg: &TrainConfig) -> Result<Self> {
        use Architecture::*;
        let arch = model.architecture;
        let n_t = model.n_t() as f64;
        let n_a = model.latent_dim_max as f64;
        let none = BlockMask { encoder: false, ff: false, decoder: false };
        let (trains, ae_term, eta_term, alpha_weight, omega, scale) = match (arch, stage) {
            (Ffd, Stage::Joint) => (BlockMask { ff: true, decoder: true, ..none }, false, true, 0.0, cfg.omega_r, n_t),
            (Effd, Stage::Joint) => (BlockMask::ALL, true, true, cfg.omega_alpha * n_t / n_a, cfg.omega_r, n_t),
            (Ae, Stage::Joint) => (BlockMask { encoder: true, decoder: true, ..none }, true, false, 0.0, cfg.omega_r, n_t),
            (Saeffd | Saeff, Stage::First) => {
                (BlockMask { encoder: true, decoder: true, ..none }, true, false, 0.0, cfg.omega_r_i, n_t)
            }
            (Saeffd, Stage::Second) => (BlockMask { ff: true, ..none }, false, true, 0.0, cfg.omega_r_ii, n_a),
            (Saeff, Stage::Second) => (BlockMask { ff: true, ..none }, false, false, 1.0, cfg.omega_r_ii, n_a),
            _ => return Err(Error::invalid(format!("stage {stage:?} does not apply to {arch}"))),
        };
        let trains = BlockMask {
            encoder: trains.encoder && model.trainable.encoder && model.encoder.is_some(),
            ff: trains.ff && model.trainable.ff && model.ff.is_some(),
            decoder: trains.decoder && model.trainable.decoder,
        };
        let n_w = [
            (trains.encoder, model.encoder.as_ref()),
            (trains.ff, model.ff.as_ref()),
            (trains.decoder, Some(&model.decoder)),
        ]
        .iter()
        .filter(|(t, _)| *t)
        .map(|(_, b)| b.map_or(0, Block::parameter_count))
        .sum::<usize>();
        let reg_coef = if n_w == 0 { 0.0 } else { omega * scale / n_w as f64 };
        Ok(Self { trains, ae_term, eta_term, alpha_weight, reg_coef })
    }

    fn needs_encoder(&self) -> bool {
        self.ae_term || self.alpha_weight > 0.0
    }

    fn needs_ff(&self) -> bool {
        self.eta_term || self.alpha_weight > 0.0
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn evaluate(
    model: &NetworkModel,
    data: &TrainingSet,
    batch: Batch,
    cfg: &TrainConfig,
    stage: Stage,
    want_grad: bool,
) -> Result<(LossTerms, Gradients)> {
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let plan = Plan::new(model, stage, cfg)?;
    let nb = batch.len() as f64;
    let n_t = model.n_t() as f64;
    let n_a = model.latent_dim_max as f64;
    let zeros = |on: bool, b: Option<&Block>| b.filter(|_| on && want_grad).map(|b| vec![0.0; b.parameter_count()]);
    let mut grads = Gradients {
        encoder: zeros(plan.trains.encoder, model.encoder.as_ref()),
        ff: zeros(plan.trains.ff, model.ff.as_ref()),
        decoder: zeros(plan.trains.decoder, Some(&model.decoder)),
    };

    let mut terms = LossTerms::default();
    let (mut c_enc, mut c_ff, mut c_dae, mut c_deta) = (Cache::default(), Cache::default(), Cache::default(), Cache::default());
    for &i in batch {
        let theta_in = data.thetas.get(i).ok_or_else(|| Error::invalid(format!("sample {i} out of range")))?;
        if theta_in.len() != model.n_t() {
            return Err(Error::DimensionMismatch { expected: model.n_t(), actual: theta_in.len() });
        }
        let mut d_alpha_ae: Option<Vec<f64>> = None;
        let mut d_alpha_eta: Option<Vec<f64>> = None;

        if plan.needs_encoder() {
            let enc = model.encoder.as_ref().ok_or(Error::invalid("plan needs an encoder"))?;
            enc.forward_cached(theta_in, &mut c_enc);
        }
        if plan.needs_ff() {
            let ff = model.ff.as_ref().ok_or(Error::invalid("plan needs a feed-forward block"))?;
            let eta = data.etas[i];
            ff.forward_cached(&normalise_eta(eta[0], eta[1]), &mut c_ff);
        }
        if plan.ae_term {
            model.decoder.forward_cached(c_enc.output(), &mut c_dae);
            let out = c_dae.output();
            terms.ae += sq_dist(out, theta_in) / (nb * n_t);
            if want_grad && (plan.trains.decoder || plan.trains.encoder) {
                let g: Vec<f64> = out.iter().zip(theta_in).map(|(p, t)| 2.0 * (p - t) / (nb * n_t)).collect();
                d_alpha_ae = Some(model.decoder.backward(&c_dae, &g, grads.decoder.as_deref_mut()));
            }
        }
        if plan.eta_term {
            model.decoder.forward_cached(c_ff.output(), &mut c_deta);
            let out = c_deta.output();
            terms.eta += sq_dist(out, theta_in) / (nb * n_t);
            if want_grad && (plan.trains.decoder || plan.trains.ff) {
                let g: Vec<f64> = out.iter().zip(theta_in).map(|(p, t)| 2.0 * (p - t) / (nb * n_t)).collect();
                d_alpha_eta = Some(model.decoder.backward(&c_deta, &g, grads.decoder.as_deref_mut()));
            }
        }
        if plan.alpha_weight > 0.0 {
            let (a_eta, a_ae) = (c_ff.output(), c_enc.output());
            terms.alpha += sq_dist(a_eta, a_ae) / (nb * n_a);
            if want_grad {
                let g: Vec<f64> =
                    a_eta.iter().zip(a_ae).map(|(e, a)| plan.alpha_weight * 2.0 * (e - a) / (nb * n_a)).collect();
                let de = d_alpha_eta.get_or_insert_with(|| vec![0.0; g.len()]);
                de.iter_mut().zip(&g).for_each(|(d, gi)| *d += gi);
                if plan.trains.encoder {
                    let da = d_alpha_ae.get_or_insert_with(|| vec![0.0; g.len()]);
                    da.iter_mut().zip(&g).for_each(|(d, gi)| *d -= gi);
                }
            }
        }
        if let (Some(d), Some(g)) = (&d_alpha_ae, grads.encoder.as_deref_mut()) {
            model.encoder.as_ref().unwrap().backward(&c_enc, d, Some(g));
        }
        if let (Some(d), Some(g)) = (&d_alpha_eta, grads.ff.as_deref_mut()) {
            model.ff.as_ref().unwrap().backward(&c_ff, d, Some(g));
        }
    }

    if plan.reg_coef > 0.0 {
        let blocks = [
            (plan.trains.encoder, model.encoder.as_ref(), grads.encoder.as_mut()),
            (plan.trains.ff, model.ff.as_ref(), grads.ff.as_mut()),
            (plan.trains.decoder, Some(&model.decoder), grads.decoder.as_mut()),
        ];
        let mut raw = 0.0;
        for (on, block, grad) in blocks {
            let (true, Some(block)) = (on, block) else { continue };
            raw += block.params.iter().map(|p| p.abs()).sum::<f64>();
            if let Some(g) = grad {
                for (gi, &p) in g.iter_mut().zip(&block.params) {
                    // Subgradient 0 at p = 0.
                    if p > 0.0 {
                        *gi += plan.reg_coef;
                    } else if p < 0.0 {
                        *gi -= plan.reg_coef;
                    }
                }
            }
        }
        terms.regularisation = plan.reg_coef * raw;
    }
    terms.total = terms.ae + terms.eta + plan.alpha_weight * terms.alpha + terms.regularisation;
    Ok((terms, grads))
}

/// Loss of `stage` on `batch` and its gradient with respect to every block
/// the stage trains (blocks that are frozen or untrained are `None`).
pub fn loss_and_gradient(
    model: &NetworkModel,
    data: &TrainingSet,
    batch: Batch,
    cfg: &TrainConfig,
    stage: Stage,
) -> Result<(LossTerms, Gradients)> {
    evaluate(model, data, batch, cfg, stage, true)
}

/// Loss only.
pub fn loss(model: &NetworkModel, data: &TrainingSet, batch: Batch, cfg: &TrainConfig, stage: Stage) -> Result<LossTerms> {
    evaluate(model, data, batch, cfg, stage, false).map(|r| r.0)
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    fn new(n: usize) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n] }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], t: i32, cfg: &TrainConfig) {
        let c1 = 1.0 - cfg.beta1.powi(t);
        let c2 = 1.0 - cfg.beta2.powi(t);
        for (((p, g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            *p -= cfg.learning_rate * (*m / c1) / ((*v / c2).sqrt() + cfg.adam_eps);
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HistoryRecord {
    pub stage: Stage,
    pub epoch: usize,
    pub train_loss: f64,
    pub validation_loss: f64,
    /// Breakdown of the validation loss (training loss when there is no
    /// validation set).
    pub terms: LossTerms,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct History {
    pub records: Vec<HistoryRecord>,
    /// Epoch of the restored parameters, per stage.
    pub best_epochs: Vec<(Stage, usize)>,
}

impl History {
    pub fn final_record(&self, stage: Stage) -> Option<&HistoryRecord> {
        let best = self.best_epochs.iter().find(|(s, _)| *s == stage)?.1;
        self.records.iter().find(|r| r.stage == stage && r.epoch == best)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "stage,epoch,train_loss,validation_loss,l_ae,l_eta,l_alpha,regularisation")?;
        for r in &self.records {
            writeln!(
                w,
                "{},{},{:.10e},{:.10e},{:.10e},{:.10e},{:.10e},{:.10e}",
                r.stage.label(),
                r.epoch,
                r.train_loss,
                r.validation_loss,
                r.terms.ae,
                r.terms.eta,
                r.terms.alpha,
                r.terms.regularisation
            )?;
        }
        Ok(())
    }
}

/// Trains `model` in place: every stage of its architecture in turn, with
/// Adam, shuffled mini-batches, and early stopping on the validation loss.
/// Each stage ends with its best-validation parameters restored.
pub fn train(
    model: &mut NetworkModel,
    data: &TrainingSet,
    train_idx: &[usize],
    val_idx: &[usize],
    cfg: &TrainConfig,
) -> Result<History> {
    cfg.validate()?;
    if train_idx.is_empty() {
        return Err(Error::DatasetTooSmall("no training samples".into()));
    }
    let mut history = History::default();
    for &stage in Stage::stages_for(model.architecture) {
        model.trainable = match stage {
            Stage::Joint => BlockMask::ALL,
            Stage::First => BlockMask { encoder: true, ff: false, decoder: true },
            Stage::Second => BlockMask { encoder: false, ff: true, decoder: false },
        };
        run_stage(model, data, train_idx, val_idx, cfg, stage, &mut history)?;
    }
    Ok(history)
}

fn run_stage(
    model: &mut NetworkModel,
    data: &TrainingSet,
    train_idx: &[usize],
    val_idx: &[usize],
    cfg: &TrainConfig,
    stage: Stage,
    history: &mut History,
) -> Result<()> {
    let salt = match stage {
        Stage::Joint | Stage::First => 0,
        Stage::Second => 0x9E37_79B9_7F4A_7C15,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ salt);
    let size = |b: Option<&Block>| b.map_or(0, Block::parameter_count);
    let mut adam_enc = Adam::new(size(model.encoder.as_ref()));
    let mut adam_ff = Adam::new(size(model.ff.as_ref()));
    let mut adam_dec = Adam::new(model.decoder.parameter_count());

    let mut order = train_idx.to_vec();
    let mut best = f64::INFINITY;
    let mut reference = f64::INFINITY;
    let mut best_model = model.clone();
    let mut best_epoch = 0;
    let mut wait = 0;
    let mut t = 0i32;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        let mut last_terms = LossTerms::default();
        for chunk in order.chunks(cfg.batch_size) {
            let (terms, grads) = loss_and_gradient(model, data, chunk, cfg, stage)?;
            if !terms.total.is_finite() {
                return Err(Error::Divergence { epoch });
            }
            sum += terms.total * chunk.len() as f64;
            last_terms = terms;
            t = t.saturating_add(1);
            if let (Some(g), Some(b)) = (&grads.encoder, model.encoder.as_mut()) {
                adam_enc.step(&mut b.params, g, t, cfg);
            }
            if let (Some(g), Some(b)) = (&grads.ff, model.ff.as_mut()) {
                adam_ff.step(&mut b.params, g, t, cfg);
            }
            if let Some(g) = &grads.decoder {
                adam_dec.step(&mut model.decoder.params, g, t, cfg);
            }
        }
        let train_loss = sum / order.len() as f64;
        let (val_loss, terms) = if val_idx.is_empty() {
            (train_loss, last_terms)
        } else {
            let terms = loss(model, data, val_idx, cfg, stage)?;
            (terms.total, terms)
        };
        if !val_loss.is_finite() || !train_loss.is_finite() {
            return Err(Error::Divergence { epoch });
        }
        history.records.push(HistoryRecord { stage, epoch, train_loss, validation_loss: val_loss, terms });

        if val_loss < best {
            best = val_loss;
            best_model.clone_from(model);
            best_epoch = epoch;
        }
        if val_loss < reference * (1.0 - cfg.early_stop_tol) {
            reference = val_loss;
            wait = 0;
        } else {
            wait += 1;
            if wait >= cfg.early_stop_patience {
                break;
            }
        }
    }
    let trainable = model.trainable;
    *model = best_model;
    model.trainable = trainable;
    history.best_epochs.push((stage, best_epoch));
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::NetworkDims;

    fn tiny(arch: Architecture, seed: u64) -> NetworkModel {
        let dims = NetworkDims { n_t: 4, hidden: vec![3], ff_hidden: vec![3], latent: 2 };
        let mut m = NetworkModel::new(arch, &dims).unwrap();
        m.init_kaiming_uniform(&mut ChaCha8Rng::seed_from_u64(seed));
        m
    }

    fn toy_data(n: usize, n_t: usize) -> TrainingSet {
        let etas = (0..n).map(|i| [0.1 + 0.2 * i as f64, 3.0 + 5.0 * i as f64]).collect();
        let thetas = (0..n).map(|i| (0..n_t).map(|k| ((i * 7 + k * 3) % 10) as f64 / 10.0 + 0.05).collect()).collect();
        TrainingSet { etas, thetas }
    }

    #[test]
    fn constant_half_vs_binary_mse_is_quarter() {
        let dims = NetworkDims { n_t: 4, hidden: vec![3], ff_hidden: vec![3], latent: 2 };
        let m = NetworkModel::new(Architecture::Ffd, &dims).unwrap();
        let data = TrainingSet { etas: vec![[0.2, 1.0], [0.5, 2.0]], thetas: vec![vec![0.0, 1.0, 1.0, 0.0], vec![1.0; 4]] };
        let terms = loss(&m, &data, &[0, 1], &TrainConfig::default(), Stage::Joint).unwrap();
        assert!((terms.eta - 0.25).abs() < 1e-15);
        assert_eq!(terms.total, terms.eta);
    }

    #[test]
    fn frozen_blocks_get_no_gradient() {
        let data = toy_data(3, 4);
        let cfg = TrainConfig::for_architecture(Architecture::Saeffd);
        let mut m = tiny(Architecture::Saeffd, 3);
        m.trainable = BlockMask { encoder: false, ff: true, decoder: false };
        let (_, g) = loss_and_gradient(&m, &data, &[0, 1, 2], &cfg, Stage::Second).unwrap();
        assert!(g.encoder.is_none() && g.decoder.is_none() && g.ff.is_some());
    }

    #[test]
    fn stage_mismatch_rejected() {
        let data = toy_data(2, 4);
        let m = tiny(Architecture::Ffd, 1);
        assert!(loss(&m, &data, &[0], &TrainConfig::default(), Stage::Second).is_err());
    }

    #[test]
    fn early_stopping_restores_best() {
        let data = toy_data(6, 4);
        let mut m = tiny(Architecture::Ffd, 5);
        let cfg = TrainConfig { epochs: 300, early_stop_patience: 20, learning_rate: 5e-2, ..TrainConfig::for_architecture(Architecture::Ffd) };
        let h = train(&mut m, &data, &[0, 1, 2, 3], &[4, 5], &cfg).unwrap();
        let best = h.final_record(Stage::Joint).unwrap();
        let min = h.records.iter().map(|r| r.validation_loss).fold(f64::INFINITY, f64::min);
        assert_eq!(best.validation_loss, min);
        let now = loss(&m, &data, &[4, 5], &cfg, Stage::Joint).unwrap().total;
        assert!((now - min).abs() <= 1e-15 * min.max(1.0));
    }
}
