use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::nn::{AdaptiveAvgPool, BatchNorm, Bottleneck, Cache, Conv2d, Layer, MaxPool, Param, Tensor, Visitor};
use crate::preprocess::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackboneProfile {
    /// ResNeXt-50 (32x4d) loaded from converted ImageNet weights.
    Paper,
    /// Three small conv stages, randomly initialized, for fast runs.
    Smoke,
}

impl BackboneProfile {
    pub fn backbone_id(self) -> &'static str {
        match self {
            BackboneProfile::Paper => "resnext50_32x4d",
            BackboneProfile::Smoke => "smoke_cnn",
        }
    }

    pub fn from_backbone_id(id: &str) -> Option<Self> {
        match id {
            "resnext50_32x4d" => Some(BackboneProfile::Paper),
            "smoke_cnn" => Some(BackboneProfile::Smoke),
            _ => None,
        }
    }
}

/// A run of layers trained or frozen together.
#[derive(Debug, Clone, PartialEq)]
pub struct Stage {
    pub name: String,
    pub layers: Vec<(String, Layer)>,
}

impl Stage {
    pub fn forward(&self, mut x: Tensor, keep: bool) -> (Tensor, Vec<Cache>) {
        let mut caches = Vec::new();
        for (_, layer) in &self.layers {
            let (y, cache) = layer.forward(x, keep);
            caches.extend(cache);
            x = y;
        }
        (x, caches)
    }

    /// Backpropagates through the whole stage, accumulating into `grad`.
    /// The gradient with respect to the stage input is not formed.
    pub fn backward(&self, caches: Vec<Cache>, mut dy: Tensor, grad: &mut Stage) {
        debug_assert_eq!(caches.len(), self.layers.len());
        let n = self.layers.len();
        for (i, cache) in caches.into_iter().enumerate().rev() {
            let need_dx = i > 0;
            let out = self.layers[i].1.backward(cache, dy, &mut grad.layers[i].1, need_dx);
            match out {
                Some(d) => dy = d,
                None => {
                    debug_assert!(i == 0 || n == 0);
                    return;
                }
            }
        }
    }

    pub fn visit(&self, f: &mut Visitor<'_>) {
        for (name, layer) in &self.layers {
            layer.visit(name, f);
        }
    }

    pub fn trainable_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Param>) {
        for (_, layer) in &mut self.layers {
            layer.trainable_mut(out);
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            name: self.name.clone(),
            layers: self.layers.iter().map(|(n, l)| (n.clone(), l.zeros_like())).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Backbone {
    pub profile: BackboneProfile,
    pub stages: Vec<Stage>,
    pub pool: AdaptiveAvgPool,
    pub out_channels: usize,
}

fn init_rng(seed: u64, name: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(&[b"init", &seed.to_le_bytes(), name.as_bytes()]))
}

fn conv_layer(name: &str, mut conv: Conv2d, seed: u64) -> (String, Layer) {
    conv.init_he(&mut init_rng(seed, name));
    (name.to_string(), Layer::Conv(conv))
}

impl Backbone {
    /// Accepts any square input of at least 16 pixels.
    pub fn smoke(seed: u64) -> Self {
        let stage = |name: &str, conv: Conv2d| Stage {
            name: name.to_string(),
            layers: vec![conv_layer(&format!("{name}.conv"), conv, seed), (format!("{name}.relu"), Layer::Relu)],
        };
        Self {
            profile: BackboneProfile::Smoke,
            stages: vec![
                stage("stem", Conv2d::new(3, 16, 4, 4, 0, 1, true)),
                stage("stage2", Conv2d::new(16, 32, 3, 2, 1, 1, true)),
                stage("stage3", Conv2d::new(32, 64, 3, 2, 1, 1, true)),
            ],
            pool: AdaptiveAvgPool { out_h: 2, out_w: 2 },
            out_channels: 64,
        }
    }

    /// ResNeXt-50 (32x4d) topology with torchvision parameter names.
    /// Weights are He-initialized and the last norm of every residual
    /// branch starts at zero; real use overwrites them from a weight file.
    pub fn resnext50_32x4d(seed: u64) -> Self {
        let mut stages = vec![Stage {
            name: "stem".into(),
            layers: vec![
                conv_layer("conv1", Conv2d::new(3, 64, 7, 2, 3, 1, false), seed),
                ("bn1".into(), Layer::Norm(BatchNorm::new(64))),
                ("relu".into(), Layer::Relu),
                ("maxpool".into(), Layer::MaxPool(MaxPool { kernel: 3, stride: 2, padding: 1 })),
            ],
        }];
        let mut in_ch = 64;
        for (i, (blocks, planes, stride)) in [(3, 64, 1), (4, 128, 2), (6, 256, 2), (3, 512, 2)].into_iter().enumerate() {
            let stage_name = format!("layer{}", i + 1);
            let width = planes * 2;
            let out_ch = planes * 4;
            let mut layers = Vec::new();
            for b in 0..blocks {
                let name = format!("{stage_name}.{b}");
                let mut block = Bottleneck::new(in_ch, width, out_ch, if b == 0 { stride } else { 1 }, 32);
                let mut rng = init_rng(seed, &name);
                block.conv1.init_he(&mut rng);
                block.conv2.init_he(&mut rng);
                block.conv3.init_he(&mut rng);
                if let Some((c, _)) = block.downsample.as_mut() {
                    c.init_he(&mut rng);
                }
                block.bn3.weight.data.iter_mut().for_each(|g| *g = 0.0);
                layers.push((name, Layer::Bottleneck(Box::new(block))));
                in_ch = out_ch;
            }
            stages.push(Stage { name: stage_name, layers });
        }
        Self {
            profile: BackboneProfile::Paper,
            stages,
            pool: AdaptiveAvgPool { out_h: 1, out_w: 1 },
            out_channels: 2048,
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.pool.features(self.out_channels)
    }

    pub fn last_stage(&self) -> usize {
        self.stages.len() - 1
    }

    /// Runs stages `0..upto` without caching.
    pub fn forward_frozen(&self, mut x: Tensor, upto: usize) -> Tensor {
        for stage in &self.stages[..upto] {
            x = stage.forward(x, false).0;
        }
        x
    }

    pub fn visit(&self, f: &mut Visitor<'_>) {
        for s in &self.stages {
            s.visit(f);
        }
    }

    /// Looks up a parameter by its full dotted name.
    pub fn param_mut(&mut self, name: &str) -> Option<&mut Param> {
        for stage in &mut self.stages {
            for (lname, layer) in &mut stage.layers {
                if let Some(rest) = name.strip_prefix(lname.as_str()).and_then(|r| r.strip_prefix('.')) {
                    if let Some(p) = layer.param_mut(rest) {
                        return Some(p);
                    }
                }
            }
        }
        None
    }

    pub fn count_trainable(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_, p, t| {
            if t {
                n += p.data.len()
            }
        });
        n
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resnext_parameter_count_matches_reference() {
        // 25,028,904 parameters with the 1000-way classifier attached
        let b = Backbone::resnext50_32x4d(0);
        assert_eq!(b.count_trainable() + 2048 * 1000 + 1000, 25_028_904);
        assert_eq!(b.feature_dim(), 2048);
    }

    #[test]
    fn torchvision_names_resolve() {
        let mut b = Backbone::resnext50_32x4d(0);
        for name in [
            "conv1.weight",
            "bn1.running_var",
            "layer1.0.conv2.weight",
            "layer1.0.downsample.0.weight",
            "layer2.3.bn3.bias",
            "layer4.2.conv3.weight",
        ] {
            assert!(b.param_mut(name).is_some(), "{name}");
        }
        assert_eq!(b.param_mut("layer1.0.conv2.weight").unwrap().shape, vec![128, 4, 3, 3]);
        assert!(b.param_mut("layer1.1.downsample.0.weight").is_none());
        assert!(b.param_mut("fc.weight").is_none());
    }

    #[test]
    fn smoke_is_small() {
        let b = Backbone::smoke(0);
        assert!(b.count_trainable() < 30_000);
        assert_eq!(b.feature_dim(), 256);
    }
}
