use image::RgbImage;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::nn::{relu_flat, relu_flat_backward, Param, Tensor};
use super::{images_to_tensor, DeepError, DeepModel, TrainableMask};
use crate::preprocess::{augment_frame, derive_seed, frame_rng, AugmentationSpec};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSchedule {
    pub phase1_epochs: u32,
    pub phase2_epochs: u32,
    pub batch_size: usize,
    pub base_lr: f64,
    pub lr_decay_factor: f64,
    pub lr_decay_every: u32,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Weight the loss by inverse class frequency. Off by default.
    pub class_weighting: bool,
    /// Images pushed through the network at once; gradients still
    /// accumulate over the whole batch.
    pub micro_batch: usize,
    pub seed: u64,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        Self {
            phase1_epochs: 18,
            phase2_epochs: 2,
            batch_size: 128,
            base_lr: 0.005,
            lr_decay_factor: 0.1,
            lr_decay_every: 10,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            class_weighting: false,
            micro_batch: 32,
            seed: 0,
        }
    }
}

impl TrainSchedule {
    pub fn total_epochs(&self) -> u32 {
        self.phase1_epochs + self.phase2_epochs
    }

    pub fn validate(&self) -> Result<(), DeepError> {
        let bad = |m: &str| Err(DeepError::InvalidSpec(m.to_string()));
        if self.total_epochs() == 0 {
            return bad("schedule has no epochs");
        }
        if self.batch_size == 0 || self.micro_batch == 0 {
            return bad("batch sizes must be positive");
        }
        if !(self.base_lr > 0.0) || !(self.lr_decay_factor > 0.0) || self.lr_decay_every == 0 {
            return bad("learning rate, decay factor and decay period must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.adam_eps > 0.0) {
            return bad("Adam betas must lie in [0,1) and eps must be positive");
        }
        Ok(())
    }
}

/// Step decay: `base_lr * factor^floor((epoch - 1) / every)`.
pub fn lr_at_epoch(schedule: &TrainSchedule, epoch: u32) -> Result<f64, DeepError> {
    let total = schedule.total_epochs();
    if epoch == 0 || epoch > total {
        return Err(DeepError::Range { epoch, total });
    }
    let k = (epoch - 1) / schedule.lr_decay_every;
    Ok(schedule.base_lr * schedule.lr_decay_factor.powi(k as i32))
}

/// One labeled training crop. Excluded frames never become samples.
#[derive(Debug, Clone, Copy)]
pub struct TrainSample<'a> {
    pub image: &'a RgbImage,
    pub pain: bool,
    pub participant_id: &'a str,
    pub frame_index: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: u32,
    pub phase: u8,
    pub lr: f64,
    pub mean_loss: f64,
    pub trainable_params: usize,
}

struct Adam {
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
    t: i32,
}

impl Adam {
    fn new(params: &[&mut Param]) -> Self {
        Self {
            m: params.iter().map(|p| vec![0.0; p.data.len()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.data.len()]).collect(),
            t: 0,
        }
    }

    fn step(&mut self, params: Vec<&mut Param>, grads: Vec<&mut Param>, lr: f64, s: &TrainSchedule) {
        self.t += 1;
        let (b1, b2) = (s.beta1 as f32, s.beta2 as f32);
        let c1 = 1.0 - s.beta1.powi(self.t);
        let c2 = 1.0 - s.beta2.powi(self.t);
        let step = (lr * c2.sqrt() / c1) as f32;
        let eps = (s.adam_eps * c2.sqrt()) as f32;
        for (k, (p, g)) in params.into_iter().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for i in 0..p.data.len() {
                let gi = g.data[i];
                m[i] = b1 * m[i] + (1.0 - b1) * gi;
                v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
                p.data[i] -= step * m[i] / (v[i].sqrt() + eps);
            }
        }
    }
}

/// Two-class cross-entropy on `[no_pain, pain]` logits; returns the loss and
/// the gradient with respect to the logits.
fn cross_entropy(z: &[f32], pain: bool) -> (f64, [f32; 2]) {
    let (a, b) = (z[0] as f64, z[1] as f64);
    let m = a.max(b);
    let lse = m + ((a - m).exp() + (b - m).exp()).ln();
    let p_pain = (b - lse).exp();
    let y = if pain { 1.0 } else { 0.0 };
    let loss = lse - if pain { b } else { a };
    (loss, [(y - p_pain) as f32, (p_pain - y) as f32])
}

/// Runs the two-phase schedule: epochs `1..=phase1_epochs` update only the
/// head; the remaining epochs also update the last backbone stage. Each
/// sample is augmented with a generator keyed by participant, frame and
/// epoch, and batches are reshuffled per epoch, so a fixed seed gives a
/// fixed trace.
pub fn train_two_phase(
    mut model: DeepModel,
    samples: &[TrainSample<'_>],
    schedule: &TrainSchedule,
    augment: &AugmentationSpec,
) -> Result<(DeepModel, Vec<EpochLog>), DeepError> {
    schedule.validate()?;
    let n_pain = samples.iter().filter(|s| s.pain).count();
    if n_pain == 0 || n_pain == samples.len() {
        return Err(DeepError::DegenerateLabels);
    }
    let class_weight = |pain: bool| -> f64 {
        if !schedule.class_weighting {
            return 1.0;
        }
        let count = if pain { n_pain } else { samples.len() - n_pain };
        samples.len() as f64 / (2.0 * count as f64)
    };

    let last = model.backbone.last_stage();
    let min_size = model.min_input_size();
    let mut head_grad = model.head.zeros_like();
    let mut head_adam = Adam::new(&{
        let mut v = Vec::new();
        model.head.trainable_mut(&mut v);
        v
    });
    let mut stage_state = None;
    let frozen = if augment.is_identity() {
        FrozenCache::build(&model, samples, schedule.micro_batch, min_size)?
    } else {
        None
    };
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut log = Vec::new();

    for epoch in 1..=schedule.total_epochs() {
        let phase = if epoch <= schedule.phase1_epochs { 1 } else { 2 };
        if phase == 2 && model.mask == TrainableMask::HeadOnly {
            model.mask = TrainableMask::HeadAndLastStage;
            let grad = model.backbone.stages[last].zeros_like();
            let mut v = Vec::new();
            model.backbone.stages[last].trainable_mut(&mut v);
            stage_state = Some((grad, Adam::new(&v)));
        }
        let lr = lr_at_epoch(schedule, epoch)?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[
            b"shuffle",
            &schedule.seed.to_le_bytes(),
            &epoch.to_le_bytes(),
        ]));
        order.shuffle(&mut rng);

        let (mut loss_sum, mut weight_sum) = (0f64, 0f64);
        for (batch_no, batch) in order.chunks(schedule.batch_size).enumerate() {
            zero(&mut head_grad.fc1.weight);
            zero(&mut head_grad.fc1.bias);
            zero(&mut head_grad.fc2.weight);
            zero(&mut head_grad.fc2.bias);
            if let Some((g, _)) = stage_state.as_mut() {
                let mut v = Vec::new();
                g.trainable_mut(&mut v);
                v.into_iter().for_each(zero);
            }
            let batch_weight: f64 = batch.iter().map(|&i| class_weight(samples[i].pain)).sum();
            let mut batch_loss = 0f64;

            for micro in batch.chunks(schedule.micro_batch) {
                let n = micro.len();
                let (feats, stage_pass) = match &frozen {
                    Some(c) if phase == 1 => (c.gather_feats(micro), None),
                    _ => {
                        let pre = match &frozen {
                            Some(c) => c.gather_pre(micro),
                            None => {
                                let images: Vec<RgbImage> = micro
                                    .iter()
                                    .map(|&i| {
                                        let s = &samples[i];
                                        let mut r = frame_rng(augment.seed, s.participant_id, s.frame_index, epoch);
                                        augment_frame(s.image, augment, &mut r)
                                    })
                                    .collect();
                                let refs: Vec<&RgbImage> = images.iter().collect();
                                model.backbone.forward_frozen(images_to_tensor(&refs, min_size)?, last)
                            }
                        };
                        let (fmap, caches) = model.backbone.stages[last].forward(pre, phase == 2);
                        let fshape = (fmap.n, fmap.c, fmap.h, fmap.w);
                        (model.backbone.pool.forward(&fmap), Some((fshape, caches)))
                    }
                };
                let mut h = model.head.fc1.forward(&feats, n);
                relu_flat(&mut h);
                let z = model.head.fc2.forward(&h, n);

                let mut dz = vec![0f32; 2 * n];
                for (k, &i) in micro.iter().enumerate() {
                    let w = class_weight(samples[i].pain);
                    let (l, g) = cross_entropy(&z[2 * k..2 * k + 2], samples[i].pain);
                    batch_loss += w * l;
                    let scale = (w / batch_weight) as f32;
                    dz[2 * k] = g[0] * scale;
                    dz[2 * k + 1] = g[1] * scale;
                }
                let mut dh = model.head.fc2.backward(&h, &dz, n, &mut head_grad.fc2);
                relu_flat_backward(&h, &mut dh);
                let dfeat = model.head.fc1.backward(&feats, &dh, n, &mut head_grad.fc1);
                if let (Some((g, _)), Some((fshape, caches))) = (stage_state.as_mut(), stage_pass) {
                    let dmap = model.backbone.pool.backward(fshape, &dfeat);
                    model.backbone.stages[last].backward(caches, dmap, g);
                }
            }
            if !batch_loss.is_finite() {
                return Err(DeepError::NonFiniteLoss {
                    epoch,
                    batch: batch_no,
                    lr,
                });
            }
            loss_sum += batch_loss;
            weight_sum += batch_weight;

            let mut params = Vec::new();
            model.head.trainable_mut(&mut params);
            let mut grads = Vec::new();
            head_grad.trainable_mut(&mut grads);
            head_adam.step(params, grads, lr, schedule);
            if let Some((g, adam)) = stage_state.as_mut() {
                let mut params = Vec::new();
                model.backbone.stages[last].trainable_mut(&mut params);
                let mut grads = Vec::new();
                g.trainable_mut(&mut grads);
                adam.step(params, grads, lr, schedule);
            }
        }
        let mut count = 0;
        model.head.visit(&mut |_, p, _| count += p.data.len());
        if phase == 2 {
            model.backbone.stages[last].visit(&mut |_, p, t| {
                if t {
                    count += p.data.len()
                }
            });
        }
        let entry = EpochLog {
            epoch,
            phase,
            lr,
            mean_loss: loss_sum / weight_sum,
            trainable_params: count,
        };
        log::info!(
            "epoch {:>2} phase {} lr {:.2e} loss {:.5}",
            entry.epoch,
            entry.phase,
            entry.lr,
            entry.mean_loss
        );
        log.push(entry);
    }
    model.trained = true;
    model.schedule = Some(*schedule);
    Ok((model, log))
}

/// Cap on cached activations, in f32 values (1 GiB).
const FROZEN_CACHE_LIMIT: usize = 1 << 28;

/// Without augmentation every epoch sees the same inputs, so the frozen
/// part of the backbone only needs to run once. `pre` holds the input of
/// the last stage; `feats` the pooled features, valid while that stage is
/// frozen too.
struct FrozenCache {
    pre: Vec<f32>,
    pre_shape: (usize, usize, usize),
    feats: Vec<f32>,
    dim: usize,
}

impl FrozenCache {
    fn build(model: &DeepModel, samples: &[TrainSample<'_>], micro: usize, min_size: u32) -> Result<Option<Self>, DeepError> {
        let last = model.backbone.last_stage();
        let mut cache: Option<Self> = None;
        for chunk in samples.chunks(micro) {
            let refs: Vec<&RgbImage> = chunk.iter().map(|s| s.image).collect();
            let pre = model.backbone.forward_frozen(images_to_tensor(&refs, min_size)?, last);
            let fmap = model.backbone.stages[last].forward(pre.clone(), false).0;
            let feats = model.backbone.pool.forward(&fmap);
            let c = cache.get_or_insert_with(|| Self {
                pre: Vec::new(),
                pre_shape: (pre.c, pre.h, pre.w),
                feats: Vec::new(),
                dim: feats.len() / chunk.len(),
            });
            if c.pre.is_empty() && (pre.c * pre.h * pre.w + c.dim) * samples.len() > FROZEN_CACHE_LIMIT {
                return Ok(None);
            }
            c.pre.extend_from_slice(&pre.data);
            c.feats.extend_from_slice(&feats);
        }
        Ok(cache)
    }

    fn gather_pre(&self, idx: &[usize]) -> Tensor {
        let (c, h, w) = self.pre_shape;
        let len = c * h * w;
        let mut t = Tensor::zeros(idx.len(), c, h, w);
        for (k, &i) in idx.iter().enumerate() {
            t.data[k * len..(k + 1) * len].copy_from_slice(&self.pre[i * len..(i + 1) * len]);
        }
        t
    }

    fn gather_feats(&self, idx: &[usize]) -> Vec<f32> {
        idx.iter().flat_map(|&i| self.feats[i * self.dim..(i + 1) * self.dim].iter().copied()).collect()
    }
}

fn zero(p: &mut Param) {
    p.data.iter_mut().for_each(|v| *v = 0.0);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::deep::{build_model, score_frames_deep, BackboneProfile, HeadSpec};
    use crate::eval::compute_roc_auc;
    use image::Rgb;
    use rand::Rng;

    #[test]
    fn lr_schedule_values() {
        let s = TrainSchedule::default();
        assert_eq!(lr_at_epoch(&s, 1).unwrap(), 0.005);
        assert!((lr_at_epoch(&s, 11).unwrap() - 0.0005).abs() < 1e-15);
        assert!((lr_at_epoch(&s, 20).unwrap() - 0.0005).abs() < 1e-15);
        assert!(matches!(lr_at_epoch(&s, 0), Err(DeepError::Range { .. })));
        assert!(matches!(lr_at_epoch(&s, 21), Err(DeepError::Range { .. })));
        for e in 1..=20u32 {
            let want = 0.005 * 0.1f64.powi(((e - 1) / 10) as i32);
            assert_eq!(lr_at_epoch(&s, e).unwrap(), want);
        }
    }

    #[test]
    fn cross_entropy_gradient_is_softmax_minus_target() {
        let (l, g) = cross_entropy(&[0.0, 0.0], true);
        assert!((l - 2f64.ln()).abs() < 1e-12);
        assert!((g[0] - 0.5).abs() < 1e-7 && (g[1] + 0.5).abs() < 1e-7);
        let (l, _) = cross_entropy(&[500.0, -500.0], true);
        assert!(l.is_finite() && l > 900.0);
    }

    /// Bright vertical bar in pain crops, none otherwise, under mild noise.
    pub(crate) fn bar_crops(n: usize, size: u32, seed: u64) -> Vec<(RgbImage, bool)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let pain = i % 2 == 0;
                let img = RgbImage::from_fn(size, size, |x, _| {
                    let base = 110.0 + rng.gen_range(-20.0..20.0);
                    let v = if pain && (size / 2 - 2..size / 2 + 2).contains(&x) { base - 70.0 } else { base };
                    Rgb([v as u8, v as u8, v as u8])
                });
                (img, pain)
            })
            .collect()
    }

    fn small_schedule(p1: u32, p2: u32) -> TrainSchedule {
        TrainSchedule {
            phase1_epochs: p1,
            phase2_epochs: p2,
            batch_size: 16,
            base_lr: 0.005,
            seed: 3,
            ..Default::default()
        }
    }

    fn samples(data: &[(RgbImage, bool)]) -> Vec<TrainSample<'_>> {
        data.iter()
            .enumerate()
            .map(|(i, (img, pain))| TrainSample {
                image: img,
                pain: *pain,
                participant_id: "p",
                frame_index: i as u32,
            })
            .collect()
    }

    #[test]
    fn loss_decreases_and_phases_switch() {
        let data = bar_crops(64, 32, 1);
        let model = build_model(&HeadSpec::default(), BackboneProfile::Smoke, None, 2).unwrap();
        let (trained, log) = train_two_phase(model, &samples(&data), &small_schedule(4, 2), &AugmentationSpec::identity()).unwrap();
        let phases: Vec<u8> = log.iter().map(|e| e.phase).collect();
        assert_eq!(phases, vec![1, 1, 1, 1, 2, 2]);
        assert!(log[5].mean_loss < log[0].mean_loss, "{log:?}");
        assert!(log[4].trainable_params > log[3].trainable_params);
        let imgs: Vec<RgbImage> = data.iter().map(|d| d.0.clone()).collect();
        let labels: Vec<bool> = data.iter().map(|d| d.1).collect();
        let scores = score_frames_deep(&trained, &imgs).unwrap();
        assert!(compute_roc_auc(&scores, &labels).unwrap() > 0.9);
    }

    #[test]
    fn default_schedule_phase_log() {
        // tiny data, full 18 + 2 schedule
        let data = bar_crops(4, 16, 2);
        let model = build_model(&HeadSpec { hidden_width: 4, output_classes: 2 }, BackboneProfile::Smoke, None, 0).unwrap();
        let (_, log) = train_two_phase(model, &samples(&data), &TrainSchedule::default(), &AugmentationSpec::identity()).unwrap();
        assert_eq!(log.len(), 20);
        assert!(log[..18].iter().all(|e| e.phase == 1));
        assert!(log[18..].iter().all(|e| e.phase == 2));
        assert_eq!(log.iter().map(|e| e.epoch).collect::<Vec<_>>(), (1..=20).collect::<Vec<_>>());
    }

    #[test]
    fn frozen_parameters_stay_bit_identical() {
        let data = bar_crops(32, 32, 4);
        let model = build_model(&HeadSpec::default(), BackboneProfile::Smoke, None, 9).unwrap();
        let before = model.clone();
        let (after, _) = train_two_phase(model, &samples(&data), &small_schedule(2, 1), &AugmentationSpec::identity()).unwrap();
        let mut old = std::collections::BTreeMap::new();
        before.visit(&mut |n, p, _| {
            old.insert(n.to_string(), p.data.clone());
        });
        let mut changed = Vec::new();
        after.visit(&mut |n, p, _| {
            if old[n] != p.data {
                changed.push(n.to_string())
            }
        });
        assert!(changed.iter().all(|n| n.starts_with("head.") || n.starts_with("stage3.")), "{changed:?}");
        assert!(changed.iter().any(|n| n.starts_with("stage3.")));
        assert!(before.backbone.stages[..2] == after.backbone.stages[..2]);
    }

    #[test]
    fn phase_one_only_touches_head() {
        let data = bar_crops(16, 16, 4);
        let model = build_model(&HeadSpec::default(), BackboneProfile::Smoke, None, 9).unwrap();
        let before = model.backbone.clone();
        let (after, _) = train_two_phase(model, &samples(&data), &small_schedule(2, 0), &AugmentationSpec::identity()).unwrap();
        assert_eq!(before, after.backbone);
    }

    #[test]
    fn fixed_seed_gives_identical_trace() {
        let data = bar_crops(32, 24, 5);
        let run = || {
            let model = build_model(&HeadSpec::default(), BackboneProfile::Smoke, None, 1).unwrap();
            let aug = AugmentationSpec { seed: 4, ..Default::default() };
            train_two_phase(model, &samples(&data), &small_schedule(2, 1), &aug).unwrap().1
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn single_class_rejected() {
        let data: Vec<(RgbImage, bool)> = bar_crops(4, 16, 0).into_iter().map(|(i, _)| (i, false)).collect();
        let model = build_model(&HeadSpec::default(), BackboneProfile::Smoke, None, 1).unwrap();
        let r = train_two_phase(model, &samples(&data), &small_schedule(1, 0), &AugmentationSpec::identity());
        assert!(matches!(r, Err(DeepError::DegenerateLabels)));
    }

    #[test]
    fn exploding_learning_rate_aborts() {
        let data = bar_crops(16, 16, 0);
        let model = build_model(&HeadSpec::default(), BackboneProfile::Smoke, None, 1).unwrap();
        let s = TrainSchedule {
            base_lr: 1e38,
            ..small_schedule(6, 0)
        };
        let r = train_two_phase(model, &samples(&data), &s, &AugmentationSpec::identity());
        assert!(matches!(r, Err(DeepError::NonFiniteLoss { .. })), "{r:?}");
    }
}
