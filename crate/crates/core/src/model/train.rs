use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autodiff::{rmsprop_step, Graph, OptimizerState, Tensor};
use crate::captcha_check::DEFAULT_TAU_REG;
use crate::error::{Error, Result};
use crate::normalcue::build_cue_sequence;
use crate::photometry::{LightCaptcha, ReflectionFrame, CHANNELS};
use crate::pipeline::{validation_eer, LabeledVideo};
use crate::rng::{derive_seed, rng_from};

use super::arch::{ArchConfig, ModelParams, RESIDUAL_DIM};
use super::forward::{cue_input, pair_input};
use super::losses::{light_residual, LossWeights};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Videos per optimizer step.
    pub batch_size: usize,
    pub learning_rate: f64,
    /// After this many epochs the learning rate is multiplied by
    /// `lr_drop_factor`. 0 keeps it constant.
    pub lr_drop_epoch: usize,
    pub lr_drop_factor: f64,
    pub seed: u64,
    pub weights: LossWeights,
    pub arch: ArchConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 40,
            batch_size: 4,
            learning_rate: OptimizerState::DEFAULT_LR,
            lr_drop_epoch: 24,
            lr_drop_factor: 0.1,
            seed: 0,
            weights: LossWeights::default(),
            arch: ArchConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::validation("epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::validation("batch size must be at least 1"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::validation("learning rate must be positive"));
        }
        if !(self.lr_drop_factor.is_finite() && self.lr_drop_factor > 0.0) {
            return Err(Error::validation(
                "learning rate drop factor must be positive",
            ));
        }
        self.weights.validate()?;
        self.arch.validate()
    }
}

/// Majority vote over `factor × factor` blocks; ties go to the lowest label.
pub fn downsample_labels(
    labels: &[u8],
    height: usize,
    width: usize,
    factor: usize,
) -> Result<Vec<u8>> {
    if factor == 0
        || !height.is_multiple_of(factor)
        || !width.is_multiple_of(factor)
        || labels.len() != height * width
    {
        return Err(Error::validation(format!(
            "cannot downsample a {height}x{width} map ({} labels) by {factor}",
            labels.len()
        )));
    }
    let (oh, ow) = (height / factor, width / factor);
    let mut out = Vec::with_capacity(oh * ow);
    let mut counts = [0u16; 256];
    for by in 0..oh {
        for bx in 0..ow {
            counts.fill(0);
            for y in by * factor..(by + 1) * factor {
                for x in bx * factor..(bx + 1) * factor {
                    counts[labels[y * width + x] as usize] += 1;
                }
            }
            let mut best = 0;
            for (l, &c) in counts.iter().enumerate() {
                if c > counts[best] {
                    best = l;
                }
            }
            out.push(best as u8);
        }
    }
    Ok(out)
}

/// Network-ready tensors for one training video.
#[derive(Debug, Clone)]
pub struct TrainingVideo {
    /// One preprocessed cue per frame pair, `S × S` each.
    pub cues: Vec<Vec<f64>>,
    /// Regressor inputs, `6 × S × S` each, for every ordered pair of frames
    /// lit by different light types.
    pub pairs: Vec<Vec<f64>>,
    /// Light residual of each entry of `pairs`.
    pub residuals: Vec<[f64; RESIDUAL_DIM]>,
    /// 0-based depth bins at label resolution.
    pub depth_labels: Vec<u8>,
    /// 0-based material classes at label resolution.
    pub material_labels: Vec<u8>,
    pub live: bool,
}

impl TrainingVideo {
    /// `depth_labels` and `material_labels` are 1-based maps at frame
    /// resolution.
    pub fn prepare(
        frames: &[ReflectionFrame],
        captcha: &LightCaptcha,
        depth_labels: &[u8],
        material_labels: &[u8],
        live: bool,
        arch: &ArchConfig,
    ) -> Result<Self> {
        let s = arch.input_size;
        if frames.iter().any(|f| (f.height, f.width) != (s, s)) {
            return Err(Error::validation(format!("frames must be {s}x{s}")));
        }
        let cues = build_cue_sequence(frames, captcha)?
            .iter()
            .map(cue_input)
            .collect();
        if frames.len() != captcha.len() {
            return Err(Error::validation(format!(
                "{} frames for a challenge of {}",
                frames.len(),
                captcha.len()
            )));
        }
        let lights = &captcha.sequence;
        let mut pairs = Vec::new();
        let mut residuals = Vec::new();
        for i in 0..frames.len() {
            for j in 0..frames.len() {
                if lights[i].alpha != lights[j].alpha {
                    pairs.push(pair_input(&frames[i], &frames[j])?);
                    residuals.push(light_residual(lights[i], lights[j]));
                }
            }
        }
        let factor = s / arch.label_size();
        let zero_based = |labels: &[u8]| -> Result<Vec<u8>> {
            downsample_labels(labels, s, s, factor)?
                .into_iter()
                .map(|l| {
                    l.checked_sub(1)
                        .ok_or_else(|| Error::validation("label maps are 1-based"))
                })
                .collect()
        };
        Ok(TrainingVideo {
            cues,
            pairs,
            residuals,
            depth_labels: zero_based(depth_labels)?,
            material_labels: zero_based(material_labels)?,
            live,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean per-video reconstruction loss, weights included.
    pub l_rec: f64,
    pub l_cls: f64,
    pub l_reg: f64,
    /// The full objective over the training set.
    pub total: f64,
    pub val_eer: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub params: ModelParams,
    pub log: Vec<EpochRecord>,
}

/// Loss terms summed over a minibatch, and the weighted objective.
struct StepLoss {
    rec: f64,
    cls: f64,
    reg: f64,
    total: f64,
}

/// Records the objective for `batch` on `g` and returns the root and term
/// values.
pub fn build_objective<T: crate::autodiff::Scalar>(
    g: &mut Graph<T>,
    params: &ModelParams,
    bound: &super::forward::Bound,
    batch: &[&TrainingVideo],
    weights: &LossWeights,
) -> Result<(crate::autodiff::Var, [f64; 3])> {
    let s = params.arch.input_size;
    let mut cue_data = Vec::new();
    let mut pair_data = Vec::new();
    let mut dep_labels = Vec::new();
    let mut mat_labels = Vec::new();
    let mut per_cue = Vec::new();
    let mut per_pair = Vec::new();
    let mut targets = Vec::new();
    let mut residuals = Vec::new();
    for video in batch {
        let (m, p) = (video.cues.len(), video.pairs.len());
        if m == 0 || p == 0 || video.residuals.len() != p {
            return Err(Error::validation(
                "training video without consistent cues and pairs",
            ));
        }
        for cue in &video.cues {
            cue_data.extend(cue.iter().map(|&v| T::cast_from(v)));
            dep_labels.extend_from_slice(&video.depth_labels);
            mat_labels.extend_from_slice(&video.material_labels);
            per_cue.push(1.0 / m as f64);
            targets.push(if video.live { 1.0 } else { 0.0 });
        }
        for (pair, r) in video.pairs.iter().zip(&video.residuals) {
            pair_data.extend(pair.iter().map(|&v| T::cast_from(v)));
            per_pair.push(1.0 / p as f64);
            residuals.extend_from_slice(r);
        }
    }
    let n = per_cue.len();
    let x = g.input(Tensor::new(vec![n, 1, s, s], cue_data)?);
    let heads = params.cue_heads(g, bound, x)?;
    let pairs = g.input(Tensor::new(
        vec![per_pair.len(), 2 * CHANNELS, s, s],
        pair_data,
    )?);
    let reg_out = params.regressor(g, bound, pairs)?;

    let scaled = |w: f64| per_cue.iter().map(|c| c * w).collect::<Vec<_>>();
    let rec_dep =
        g.softmax_cross_entropy(heads.depth_logits, &dep_labels, &scaled(weights.lambda_dep))?;
    let rec_mat = g.softmax_cross_entropy(
        heads.material_logits,
        &mat_labels,
        &scaled(weights.lambda_mat),
    )?;
    let rec = g.add(rec_dep, rec_mat)?;
    let cls = g.bce_with_logits(heads.cls_logit, &targets, &per_cue)?;
    let reg = g.squared_error(reg_out, &residuals, &per_pair)?;
    let values = [g.scalar(rec), g.scalar(cls), g.scalar(reg)];

    let cls_w = g.scale(cls, weights.lambda_cls);
    let reg_w = g.scale(reg, weights.lambda_reg);
    let sum = g.add(rec, cls_w)?;
    let sum = g.add(sum, reg_w)?;
    let total = g.scale(sum, 1.0 / (2.0 * batch.len() as f64));
    Ok((total, values))
}

fn step(
    params: &mut ModelParams,
    state: &mut OptimizerState,
    batch: &[&TrainingVideo],
    weights: &LossWeights,
) -> Result<StepLoss> {
    let mut g = Graph::<f32>::new();
    let bound = params.bind(&mut g, true);
    let (root, [rec, cls, reg]) = build_objective(&mut g, params, &bound, batch, weights)?;
    let total = g.scalar(root);
    let grads = g.backward(root)?;
    let grads: Vec<Vec<f32>> = bound
        .vars()
        .iter()
        .zip(&params.tensors)
        .map(|(&v, t)| {
            grads
                .get(v)
                .map(|s| s.to_vec())
                .unwrap_or_else(|| vec![0.0; t.len()])
        })
        .collect();
    rmsprop_step(&mut params.tensors, &grads, state)?;
    Ok(StepLoss {
        rec,
        cls,
        reg,
        total,
    })
}

/// Minibatch RMSprop on the weighted multi-task objective. The training
/// order is reshuffled every epoch from `config.seed`. When `validation`
/// is non-empty its EER is logged after each epoch.
pub fn train(
    config: &TrainConfig,
    train_set: &[TrainingVideo],
    validation: &[LabeledVideo],
) -> Result<TrainOutput> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::validation("empty training set"));
    }
    let mut params = ModelParams::init(config.arch, derive_seed(config.seed, 0x1417))?;
    let mut state = OptimizerState::with_lr(&params.tensors, config.learning_rate);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut log = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        if config.lr_drop_epoch > 0 && epoch == config.lr_drop_epoch + 1 {
            state.lr *= config.lr_drop_factor;
        }
        order.shuffle(&mut rng_from(derive_seed(
            config.seed,
            0x5f00 + epoch as u64,
        )));
        let (mut rec, mut cls, mut reg, mut total) = (0.0, 0.0, 0.0, 0.0);
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&TrainingVideo> = chunk.iter().map(|&i| &train_set[i]).collect();
            let l = step(&mut params, &mut state, &batch, &config.weights)?;
            if !l.total.is_finite() {
                return Err(Error::Diverged { epoch });
            }
            rec += l.rec;
            cls += l.cls;
            reg += l.reg;
            total += l.total * 2.0 * batch.len() as f64;
        }
        if params
            .tensors
            .iter()
            .any(|t| t.data.iter().any(|v| !v.is_finite()))
        {
            return Err(Error::Diverged { epoch });
        }
        let v = train_set.len() as f64;
        let val_eer = if validation.is_empty() {
            None
        } else {
            Some(validation_eer(&params, validation, DEFAULT_TAU_REG)?.0)
        };
        log.push(EpochRecord {
            epoch,
            l_rec: rec / v,
            l_cls: cls / v,
            l_reg: reg / v,
            total: total / (2.0 * v),
            val_eer,
        });
    }
    Ok(TrainOutput { params, log })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn majority_vote_downsampling() {
        let labels = [1, 1, 2, 3, 2, 3, 3, 3, 4, 4, 1, 1, 4, 2, 1, 2];
        let out = downsample_labels(&labels, 4, 4, 2).unwrap();
        // Blocks: {1,1,2,3} → 1, {2,3,3,3} → 3, {4,4,4,2} → 4, {1,1,1,2} → 1.
        assert_eq!(out, vec![1, 3, 4, 1]);
        // Two-two tie goes to the lower label.
        assert_eq!(downsample_labels(&[5, 2, 2, 5], 2, 2, 2).unwrap(), vec![2]);
        assert!(downsample_labels(&labels, 4, 4, 3).is_err());
    }

    #[test]
    fn config_validation() {
        let mut c = TrainConfig::default();
        assert!(c.validate().is_ok());
        c.epochs = 0;
        assert!(c.validate().is_err());
    }

    fn small_set() -> (Vec<TrainingVideo>, Vec<LabeledVideo>) {
        use crate::io::{Dataset, DatasetConfig, Split};
        let data = Dataset::generate(&DatasetConfig {
            per_kind: 4,
            val_per_kind: 1,
            test_per_kind: 0,
            ..DatasetConfig::default()
        })
        .unwrap();
        let train = data
            .training_videos(Split::Train, &ArchConfig::default())
            .unwrap();
        (train, data.labeled(Split::Val))
    }

    #[test]
    fn loss_trace_is_finite_and_falls() {
        let (train_set, val) = small_set();
        let config = TrainConfig {
            epochs: 12,
            ..TrainConfig::default()
        };
        let out = train(&config, &train_set, &val).unwrap();
        assert_eq!(out.log.len(), 12);
        for e in &out.log {
            assert!([e.l_rec, e.l_cls, e.l_reg, e.total]
                .iter()
                .all(|v| v.is_finite()));
            assert!(e.val_eer.is_some_and(|v| (0.0..=1.0).contains(&v)));
        }
        let (first, last) = (out.log[0].total, out.log[11].total);
        assert!(last <= 0.7 * first, "{first} -> {last}");
    }

    #[test]
    fn fixed_seed_reproduces_the_run() {
        let (train_set, _) = small_set();
        let config = TrainConfig {
            epochs: 2,
            ..TrainConfig::default()
        };
        let a = train(&config, &train_set, &[]).unwrap();
        let b = train(&config, &train_set, &[]).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.log, b.log);
        let c = train(&TrainConfig { seed: 1, ..config }, &train_set, &[]).unwrap();
        assert_ne!(a.params, c.params);
    }

    #[test]
    fn runaway_learning_rate_reports_divergence() {
        let (train_set, _) = small_set();
        let config = TrainConfig {
            epochs: 30,
            learning_rate: 1e12,
            lr_drop_epoch: 0,
            ..TrainConfig::default()
        };
        match train(&config, &train_set, &[]) {
            Err(Error::Diverged { .. }) => {}
            other => panic!("expected divergence, got {:?}", other.map(|o| o.log.len())),
        }
    }
}
