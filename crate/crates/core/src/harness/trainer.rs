use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::losses::{
    bidefuse_terms, fnc_calibrate, single_head_terms, z1, z2, z_oracle, AuxValues, BiDefuseTerms,
    LogLossTerms, LossKind, ZEstimate, ZSource,
};
use crate::model::{Adam, AdamConfig, Architecture, BiDefuseArch, BiDefuseNet, Checkpoint, Mlp, PredictionBundle};
use crate::pipelines::{build_observed_stream, Mechanism};
use crate::synthgen::GroundTruthModel;
use crate::types::{ClickEvent, Features, ObservedSample, SampleKind, Seconds, WindowConfig};

/// The conversion model of an arm.
#[derive(Debug, Clone, PartialEq)]
pub enum CvrModel {
    Single(Mlp),
    TwoHead(BiDefuseNet),
}

impl CvrModel {
    fn params_mut(&mut self) -> &mut Vec<f64> {
        match self {
            CvrModel::Single(m) => &mut m.params,
            CvrModel::TwoHead(n) => &mut n.params,
        }
    }

    fn n_params(&self) -> usize {
        match self {
            CvrModel::Single(m) => m.params.len(),
            CvrModel::TwoHead(n) => n.params.len(),
        }
    }

    pub fn checkpoint(&self) -> Checkpoint {
        match self {
            CvrModel::Single(m) => Checkpoint::mlp(m),
            CvrModel::TwoHead(n) => Checkpoint::bidefuse(n),
        }
    }
}

/// The conversion model plus the two auxiliary classifiers. `f_dp` predicts
/// the share of stream ingestions that are delayed-positive replays and
/// `f_rn` the share of non-immediate ingestions that are negatives; both are
/// mapped back to click-level quantities through the pipeline's duplication
/// rates.
#[derive(Debug, Clone, PartialEq)]
pub struct Models {
    pub f_theta: CvrModel,
    pub f_dp: Mlp,
    pub f_rn: Mlp,
}

/// Per-kind ingestion counts of one training slice, with the sizes of the
/// auxiliary training sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct IngestionCounts {
    pub total: usize,
    pub ip: usize,
    pub fn_: usize,
    pub rn: usize,
    pub dp: usize,
    pub duplicates: usize,
    pub dp_model_positives: usize,
    pub rn_model_samples: usize,
}

impl IngestionCounts {
    fn add(&mut self, s: &ObservedSample) {
        self.total += 1;
        match s.kind {
            SampleKind::IP => self.ip += 1,
            SampleKind::FN => self.fn_ += 1,
            SampleKind::RN => self.rn += 1,
            SampleKind::DP => self.dp += 1,
        }
        self.duplicates += s.duplicate as usize;
    }
}

/// Single-writer training state of one experiment arm.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub models: Models,
    loss: LossKind,
    z_source: ZSource,
    pipeline: Mechanism,
    windows: WindowConfig,
    truth: Option<GroundTruthModel>,
    batch: usize,
    epochs: usize,
    seed: u64,
    need_dp: bool,
    need_rn: bool,
    opt_theta: Adam,
    opt_dp: Adam,
    opt_rn: Adam,
}

impl Trainer {
    pub fn new(config: &ExperimentConfig, input_dim: usize, truth: Option<GroundTruthModel>) -> Result<Self> {
        config.validate()?;
        let arch = Architecture { input_dim, hidden: config.hidden.clone() };
        let f_theta = match config.loss {
            LossKind::BiDefuse => CvrModel::TwoHead(BiDefuseNet::init(
                BiDefuseArch { input_dim, expert_dim: config.expert_dim },
                config.model_seed,
            )),
            _ => CvrModel::Single(Mlp::init(arch.clone(), config.model_seed)),
        };
        let f_dp = Mlp::init(arch.clone(), config.model_seed.wrapping_add(1));
        let f_rn = Mlp::init(arch, config.model_seed.wrapping_add(2));
        let oracle_z = config.loss.uses_z() && config.z == ZSource::Oracle;
        if oracle_z && truth.is_none() {
            return Err(Error::Config("oracle fake-negative probability needs ground truth".into()));
        }
        let need_dp = !oracle_z && (config.loss.uses_dp_model() || (config.loss.uses_z() && config.z == ZSource::Z2));
        let need_rn = config.loss.uses_z() && config.z == ZSource::Z1 && config.loss != LossKind::BiDefuse;
        let adam = |n| Adam::new(AdamConfig::new(config.lr, config.l2), n);
        Ok(Trainer {
            opt_theta: adam(f_theta.n_params()),
            opt_dp: adam(f_dp.params.len()),
            opt_rn: adam(f_rn.params.len()),
            models: Models { f_theta, f_dp, f_rn },
            loss: config.loss,
            z_source: config.z,
            pipeline: config.pipeline,
            windows: config.pipeline.effective_windows(&config.windows),
            truth: if oracle_z { truth } else { None },
            batch: config.batch,
            epochs: config.pretrain_epochs,
            seed: config.model_seed,
            need_dp,
            need_rn,
        })
    }

    /// Raw output of the conversion model (the two-head model reports its
    /// clamped head sum).
    fn theta_raw(&self, x: &Features) -> Result<f64> {
        match &self.models.f_theta {
            CvrModel::Single(m) => m.forward(x),
            CvrModel::TwoHead(n) => n.cvr(x),
        }
    }

    /// Conversion rate served for evaluation.
    pub fn served(&self, x: &Features) -> Result<f64> {
        let raw = self.theta_raw(x)?;
        Ok(if self.loss == LossKind::Fnc { fnc_calibrate(raw) } else { raw })
    }

    fn dp_mass(&self, x: &Features) -> Result<f64> {
        Ok(self.pipeline.dp_rate_to_mass(self.models.f_dp.forward(x)?))
    }

    fn rn_prob(&self, x: &Features) -> Result<f64> {
        let u = 1.0 - self.models.f_rn.forward(x)?;
        Ok(1.0 - self.pipeline.fake_negative_from_stream(u))
    }

    pub fn predict(&self, x: &Features) -> Result<PredictionBundle> {
        let f_theta = self.served(x)?;
        let mut b = PredictionBundle::new(f_theta, self.dp_mass(x)?, self.rn_prob(x)?);
        if let CvrModel::TwoHead(n) = &self.models.f_theta {
            let (ip, dp) = n.forward(x)?;
            b.f_ip = Some(ip);
            b.f_dp_head = Some(dp);
        }
        Ok(b)
    }

    /// Detached auxiliary values for one ingestion.
    fn aux(&self, x: &Features) -> Result<AuxValues> {
        let f_theta = self.theta_raw(x)?;
        if let Some(truth) = &self.truth {
            let t = truth.truth(x, &self.windows)?;
            return Ok(AuxValues { f_theta, f_dp: t.f_dp, z: z_oracle(t.f_dp, t.p0())? });
        }
        let f_dp = if self.need_dp { self.dp_mass(x)? } else { 0.0 };
        let z = match self.z_source {
            _ if !self.loss.uses_z() || self.loss == LossKind::BiDefuse => ZEstimate { z: f_dp, source: self.z_source },
            ZSource::Z1 => z1(self.rn_prob(x)?),
            ZSource::Z2 => z2(f_dp, f_theta),
            ZSource::Oracle => return Err(Error::Config("oracle fake-negative probability needs ground truth".into())),
        };
        Ok(AuxValues { f_theta, f_dp, z })
    }

    fn step_theta_single(&mut self, batch: &[(u64, &Features, LogLossTerms)]) -> Result<()> {
        let CvrModel::Single(m) = &self.models.f_theta else {
            return Err(Error::Config("single-head step on a two-head model".into()));
        };
        let (_, g) = m.batch_gradient(batch.iter().map(|&(id, x, t)| (id, x, t)))?;
        self.opt_theta.step(self.models.f_theta.params_mut(), &g)
    }

    fn step_theta_two_head(&mut self, batch: &[(u64, &Features, BiDefuseTerms)]) -> Result<()> {
        let CvrModel::TwoHead(n) = &self.models.f_theta else {
            return Err(Error::Config("two-head step on a single-head model".into()));
        };
        let (_, g) = n.batch_gradient(batch.iter().map(|&(id, x, t)| (id, x, t)))?;
        self.opt_theta.step(self.models.f_theta.params_mut(), &g)
    }

    fn step_mlp(model: &mut Mlp, opt: &mut Adam, batch: &[(u64, &Features, LogLossTerms)]) -> Result<()> {
        if batch.is_empty() {
            return Ok(());
        }
        let (_, g) = model.batch_gradient(batch.iter().map(|&(id, x, t)| (id, x, t)))?;
        opt.step(&mut model.params, &g)
    }

    /// One optimizer step of every active model on a slice of the observed stream.
    pub fn train_batch(&mut self, batch: &[ObservedSample], counts: &mut IngestionCounts) -> Result<()> {
        let mut single = Vec::new();
        let mut two_head = Vec::new();
        for s in batch {
            let obs = s.observation()?;
            let aux = self.aux(&s.features)?;
            match self.models.f_theta {
                CvrModel::Single(_) => single.push((s.click_id, &s.features, single_head_terms(self.loss, obs, &aux)?)),
                CvrModel::TwoHead(_) => {
                    // Among the out-window head's negatives (every first
                    // ingestion of a click) the fake-negative share is f_dp.
                    let z_prime = ZEstimate { z: aux.f_dp, source: aux.z.source };
                    two_head.push((s.click_id, &s.features, bidefuse_terms(obs, aux.f_dp, z_prime)))
                }
            }
            counts.add(s);
        }
        if !single.is_empty() {
            self.step_theta_single(&single)?;
        }
        if !two_head.is_empty() {
            self.step_theta_two_head(&two_head)?;
        }
        if self.need_dp {
            let dp: Vec<_> = batch
                .iter()
                .map(|s| (s.click_id, &s.features, LogLossTerms::label(s.kind == SampleKind::DP)))
                .collect();
            counts.dp_model_positives += dp.iter().filter(|t| t.2.pos > 0.0).count();
            Self::step_mlp(&mut self.models.f_dp, &mut self.opt_dp, &dp)?;
        }
        if self.need_rn {
            let rn: Vec<_> = batch
                .iter()
                .filter(|s| s.kind != SampleKind::IP)
                .map(|s| (s.click_id, &s.features, LogLossTerms::label(!s.label)))
                .collect();
            counts.rn_model_samples += rn.len();
            Self::step_mlp(&mut self.models.f_rn, &mut self.opt_rn, &rn)?;
        }
        Ok(())
    }

    /// Trains on an ingestion-ordered slice in consecutive minibatches.
    pub fn train_slice(&mut self, samples: &[ObservedSample]) -> Result<IngestionCounts> {
        let mut counts = IngestionCounts::default();
        for chunk in samples.chunks(self.batch) {
            self.train_batch(chunk, &mut counts)?;
        }
        if self.need_dp && counts.dp_model_positives != counts.dp {
            return Err(Error::Fault(format!(
                "delay model saw {} positives for {} delayed-positive ingestions",
                counts.dp_model_positives, counts.dp
            )));
        }
        if self.need_rn && counts.rn_model_samples != counts.total - counts.ip {
            return Err(Error::Fault(format!(
                "real-negative model saw {} samples for {} non-immediate ingestions",
                counts.rn_model_samples,
                counts.total - counts.ip
            )));
        }
        Ok(counts)
    }

    fn pretrain_pass(
        &self,
        n: usize,
        rng: &mut ChaCha8Rng,
        mut step: impl FnMut(&[usize]) -> Result<()>,
    ) -> Result<()> {
        let mut order: Vec<usize> = (0..n).collect();
        for _ in 0..self.epochs {
            order.shuffle(rng);
            for chunk in order.chunks(self.batch) {
                step(chunk)?;
            }
        }
        Ok(())
    }

    /// Fits every model on the pretraining clicks. Conversions at or after
    /// `t_split` are unknown at that time, so those clicks count as negatives.
    pub fn pretrain(&mut self, clicks: &[ClickEvent], t_split: Seconds) -> Result<()> {
        if clicks.is_empty() {
            return Err(Error::Config("empty pretraining split".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let visible: Vec<ClickEvent> = clicks.iter().map(|c| leak_adjusted(c, t_split)).collect();
        let w = self.windows;
        let loss = self.loss;

        match &self.models.f_theta {
            CvrModel::Single(_) => {
                let terms: Vec<LogLossTerms> = visible
                    .iter()
                    .map(|c| match (loss, c.converts()) {
                        // The FNW stream sends every converter twice.
                        (LossKind::Fnc, true) => LogLossTerms { pos: 1.0, neg: 1.0 },
                        (_, y) => LogLossTerms::label(y),
                    })
                    .collect();
                let mut model = self.models.f_theta.clone();
                let mut opt = self.opt_theta.clone();
                self.pretrain_pass(visible.len(), &mut rng, |idx| {
                    let CvrModel::Single(m) = &mut model else { unreachable!() };
                    let batch: Vec<_> = idx.iter().map(|&i| (visible[i].click_id, &visible[i].features, terms[i])).collect();
                    let (_, g) = m.batch_gradient(batch)?;
                    opt.step(&mut m.params, &g)
                })?;
                self.models.f_theta = model;
                self.opt_theta = opt;
            }
            CvrModel::TwoHead(_) => {
                let terms: Vec<BiDefuseTerms> = visible
                    .iter()
                    .map(|c| BiDefuseTerms {
                        ip: Some(LogLossTerms::label(c.in_window(&w))),
                        dp: LogLossTerms::label(c.out_window(&w)),
                    })
                    .collect();
                let mut model = self.models.f_theta.clone();
                let mut opt = self.opt_theta.clone();
                self.pretrain_pass(visible.len(), &mut rng, |idx| {
                    let CvrModel::TwoHead(n) = &mut model else { unreachable!() };
                    let batch: Vec<_> = idx.iter().map(|&i| (visible[i].click_id, &visible[i].features, terms[i])).collect();
                    let (_, g) = n.batch_gradient(batch)?;
                    opt.step(&mut n.params, &g)
                })?;
                self.models.f_theta = model;
                self.opt_theta = opt;
            }
        }

        if !(self.need_dp || self.need_rn) {
            return Ok(());
        }
        let mut stream = build_observed_stream(&visible, self.pipeline, &w)?;
        stream.retain(|s| s.ingestion_time < t_split);
        if self.need_dp {
            let mut model = self.models.f_dp.clone();
            let mut opt = self.opt_dp.clone();
            self.pretrain_pass(stream.len(), &mut rng, |idx| {
                let batch: Vec<_> = idx
                    .iter()
                    .map(|&i| (stream[i].click_id, &stream[i].features, LogLossTerms::label(stream[i].kind == SampleKind::DP)))
                    .collect();
                Self::step_mlp(&mut model, &mut opt, &batch)
            })?;
            self.models.f_dp = model;
            self.opt_dp = opt;
        }
        if self.need_rn {
            let non_ip: Vec<&ObservedSample> = stream.iter().filter(|s| s.kind != SampleKind::IP).collect();
            let mut model = self.models.f_rn.clone();
            let mut opt = self.opt_rn.clone();
            self.pretrain_pass(non_ip.len(), &mut rng, |idx| {
                let batch: Vec<_> = idx
                    .iter()
                    .map(|&i| (non_ip[i].click_id, &non_ip[i].features, LogLossTerms::label(!non_ip[i].label)))
                    .collect();
                Self::step_mlp(&mut model, &mut opt, &batch)
            })?;
            self.models.f_rn = model;
            self.opt_rn = opt;
        }
        Ok(())
    }
}

/// The click as known at `t_split`: a conversion at or after it has not
/// happened yet.
pub fn leak_adjusted(click: &ClickEvent, t_split: Seconds) -> ClickEvent {
    let mut c = click.clone();
    if c.conversion_time().is_some_and(|t| t >= t_split) {
        c.conversion_delay = None;
    }
    c
}

/// Label used for pretraining under the leak rule.
pub fn pretrain_label(click: &ClickEvent, t_split: Seconds) -> bool {
    leak_adjusted(click, t_split).converts()
}
