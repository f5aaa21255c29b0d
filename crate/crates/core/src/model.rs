//! Stem + single hourglass network producing one heatmap per action unit.
//!
//! The stem is a stride-2 7×7 convolution followed by three bottleneck blocks
//! with a max pool between the first and second, which brings the input down
//! by a factor of four. The hourglass recurses `hourglass_depth` times; each
//! level keeps a full-resolution skip branch and adds it to the upsampled
//! low-resolution branch. The head is batch norm, ReLU and a 1×1 convolution
//! with no output nonlinearity.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{BatchNormMode, BatchStats, Graph, Scalar, Tensor, Var, BN_MOMENTUM};

/// Architecture hyper-parameters.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub input_size: usize,
    pub heatmap_size: usize,
    pub n_aus: usize,
    pub base_channels: usize,
    pub mid_channels: usize,
    pub hourglass_depth: usize,
}

impl Default for ModelConfig {
    /// Full-size network: 256×256 in, 64×64 heatmaps, five AUs.
    fn default() -> Self {
        Self {
            input_size: 256,
            heatmap_size: 64,
            n_aus: 5,
            base_channels: 256,
            mid_channels: 128,
            hourglass_depth: 4,
        }
    }
}

impl ModelConfig {
    /// Desk-scale preset: 64×64 in, 16×16 heatmaps.
    pub fn toy() -> Self {
        Self {
            input_size: 64,
            heatmap_size: 16,
            n_aus: 5,
            base_channels: 32,
            mid_channels: 16,
            hourglass_depth: 3,
        }
    }

    pub fn with_n_aus(mut self, n: usize) -> Self {
        self.n_aus = n;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let mut violated = Vec::new();
        if self.heatmap_size == 0 || self.input_size != 4 * self.heatmap_size {
            violated.push(format!(
                "input_size ({}) must equal 4 × heatmap_size ({})",
                self.input_size, self.heatmap_size
            ));
        }
        if self.hourglass_depth == 0 {
            violated.push("hourglass_depth must be at least 1".to_string());
        } else if self.hourglass_depth >= usize::BITS as usize
            || self.heatmap_size % (1usize << self.hourglass_depth) != 0
        {
            violated.push(format!(
                "heatmap_size ({}) must be divisible by 2^hourglass_depth ({})",
                self.heatmap_size,
                1u128 << self.hourglass_depth.min(127)
            ));
        }
        if self.n_aus == 0 {
            violated.push("n_aus must be at least 1".to_string());
        }
        if self.base_channels < 4 || self.base_channels % 4 != 0 {
            violated.push(format!(
                "base_channels ({}) must be a positive multiple of 4",
                self.base_channels
            ));
        }
        if self.mid_channels == 0 {
            violated.push("mid_channels must be at least 1".to_string());
        }
        if violated.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(violated.join("; ")))
        }
    }

    fn stem_channels(&self) -> (usize, usize) {
        (self.base_channels / 4, self.base_channels / 2)
    }
}

#[derive(Clone, Copy, Debug)]
struct Conv {
    weight: usize,
    bias: usize,
    stride: usize,
    padding: usize,
}

#[derive(Clone, Copy, Debug)]
struct Norm {
    gamma: usize,
    beta: usize,
    stats: usize,
}

/// Pre-activation bottleneck: (BN, ReLU, 1×1) → (BN, ReLU, 3×3) → (BN, ReLU, 1×1)
/// plus an identity or 1×1 projection skip.
#[derive(Clone, Copy, Debug)]
struct Bottleneck {
    bn1: Norm,
    conv1: Conv,
    bn2: Norm,
    conv2: Conv,
    bn3: Norm,
    conv3: Conv,
    skip: Option<Conv>,
}

#[derive(Clone, Copy, Debug)]
struct Level {
    skip: Bottleneck,
    down: Bottleneck,
    up: Bottleneck,
}

#[derive(Clone, Debug)]
struct Layout {
    stem_conv: Conv,
    stem_bn: Norm,
    stem_blocks: [Bottleneck; 3],
    levels: Vec<Level>,
    inner: Bottleneck,
    head_bn: Norm,
    head: Conv,
}

/// Batch-norm running estimates.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats<T: Scalar = f32> {
    pub name: String,
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

struct Builder<T: Scalar> {
    names: Vec<String>,
    params: Vec<Tensor<T>>,
    stats: Vec<RunningStats<T>>,
    rng: ChaCha8Rng,
}

impl<T: Scalar> Builder<T> {
    fn param(&mut self, name: String, tensor: Tensor<T>) -> usize {
        self.names.push(name);
        self.params.push(tensor.with_grad());
        self.params.len() - 1
    }

    fn conv(&mut self, name: &str, cin: usize, cout: usize, k: usize, stride: usize) -> Conv {
        let fan_in = (cin * k * k) as f64;
        let std = (2.0 / fan_in).sqrt();
        let data = (0..cout * cin * k * k)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut self.rng);
                T::of(z * std)
            })
            .collect();
        let weight = self.param(
            format!("{name}.weight"),
            Tensor::new(&[cout, cin, k, k], data).expect("consistent shape"),
        );
        let bias = self.param(format!("{name}.bias"), Tensor::zeros(&[cout]));
        Conv {
            weight,
            bias,
            stride,
            padding: k / 2,
        }
    }

    fn norm(&mut self, name: &str, channels: usize) -> Norm {
        let gamma = self.param(format!("{name}.gamma"), Tensor::full(&[channels], T::one()));
        let beta = self.param(format!("{name}.beta"), Tensor::zeros(&[channels]));
        self.stats.push(RunningStats {
            name: name.to_string(),
            mean: vec![T::zero(); channels],
            var: vec![T::one(); channels],
        });
        Norm {
            gamma,
            beta,
            stats: self.stats.len() - 1,
        }
    }

    fn bottleneck(&mut self, name: &str, cin: usize, cout: usize, mid: usize) -> Bottleneck {
        Bottleneck {
            bn1: self.norm(&format!("{name}.bn1"), cin),
            conv1: self.conv(&format!("{name}.conv1"), cin, mid, 1, 1),
            bn2: self.norm(&format!("{name}.bn2"), mid),
            conv2: self.conv(&format!("{name}.conv2"), mid, mid, 3, 1),
            bn3: self.norm(&format!("{name}.bn3"), mid),
            conv3: self.conv(&format!("{name}.conv3"), mid, cout, 1, 1),
            skip: (cin != cout).then(|| self.conv(&format!("{name}.skip"), cin, cout, 1, 1)),
        }
    }
}

/// Result of a training-mode forward pass.
pub struct Bound {
    pub output: Var,
    /// Graph leaves holding each parameter, in parameter order.
    pub params: Vec<Var>,
}

/// The hourglass network.
#[derive(Clone, Debug)]
pub struct Model<T: Scalar = f32> {
    config: ModelConfig,
    names: Vec<String>,
    params: Vec<Tensor<T>>,
    stats: Vec<RunningStats<T>>,
    layout: Layout,
}

/// Number of scalar parameters across a set of tensors.
pub fn param_count<T: Scalar>(params: &[Tensor<T>]) -> usize {
    params.iter().map(Tensor::numel).sum()
}

impl<T: Scalar> Model<T> {
    /// Deterministic He-initialised network.
    pub fn build(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut b = Builder {
            names: Vec::new(),
            params: Vec::new(),
            stats: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        let (c1, c2) = config.stem_channels();
        let (base, mid) = (config.base_channels, config.mid_channels);
        let stem_conv = b.conv("stem.conv", 3, c1, 7, 2);
        let stem_bn = b.norm("stem.bn", c1);
        let stem_blocks = [
            b.bottleneck("stem.block1", c1, c2, mid),
            b.bottleneck("stem.block2", c2, c2, mid),
            b.bottleneck("stem.block3", c2, base, mid),
        ];
        let levels = (0..config.hourglass_depth)
            .map(|d| Level {
                skip: b.bottleneck(&format!("hg.level{d}.skip"), base, base, mid),
                down: b.bottleneck(&format!("hg.level{d}.down"), base, base, mid),
                up: b.bottleneck(&format!("hg.level{d}.up"), base, base, mid),
            })
            .collect();
        let inner = b.bottleneck("hg.inner", base, base, mid);
        let head_bn = b.norm("head.bn", base);
        let head = b.conv("head.conv", base, config.n_aus, 1, 1);
        Ok(Self {
            config: config.clone(),
            names: b.names,
            params: b.params,
            stats: b.stats,
            layout: Layout {
                stem_conv,
                stem_bn,
                stem_blocks,
                levels,
                inner,
                head_bn,
                head,
            },
        })
    }

    /// Rebuilds a model from stored tensors. Every parameter and statistics
    /// entry of the architecture must be present with the right shape.
    pub fn from_parts(
        config: &ModelConfig,
        params: Vec<(String, Tensor<T>)>,
        stats: Vec<RunningStats<T>>,
    ) -> Result<Self> {
        let mut model = Self::build(config, 0)?;
        let mut by_name: std::collections::HashMap<String, Tensor<T>> = params.into_iter().collect();
        for (name, slot) in model.names.iter().zip(model.params.iter_mut()) {
            let t = by_name
                .remove(name)
                .ok_or_else(|| Error::Format(format!("missing parameter `{name}`")))?;
            if t.shape() != slot.shape() {
                return Err(Error::Format(format!(
                    "parameter `{name}` has shape {:?}, expected {:?}",
                    t.shape(),
                    slot.shape()
                )));
            }
            *slot = t.with_grad();
            slot.clear_grad();
        }
        if let Some(extra) = by_name.keys().next() {
            return Err(Error::Format(format!("unexpected parameter `{extra}`")));
        }
        let mut stats_by_name: std::collections::HashMap<String, RunningStats<T>> =
            stats.into_iter().map(|s| (s.name.clone(), s)).collect();
        for slot in model.stats.iter_mut() {
            let s = stats_by_name
                .remove(&slot.name)
                .ok_or_else(|| Error::Format(format!("missing statistics `{}`", slot.name)))?;
            if s.mean.len() != slot.mean.len() || s.var.len() != slot.var.len() {
                return Err(Error::Format(format!("statistics `{}` have the wrong length", slot.name)));
            }
            *slot = s;
        }
        if let Some(extra) = stats_by_name.keys().next() {
            return Err(Error::Format(format!("unexpected statistics `{extra}`")));
        }
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn param_count(&self) -> usize {
        param_count(&self.params)
    }

    pub fn params(&self) -> &[Tensor<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.params
    }

    pub fn named_params(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(self.params.iter())
    }

    pub fn running_stats(&self) -> &[RunningStats<T>] {
        &self.stats
    }

    pub fn zero_grad(&mut self) {
        self.params.iter_mut().for_each(Tensor::zero_grad);
    }

    /// Converts every parameter and statistic to another precision.
    pub fn cast<U: Scalar>(&self) -> Model<U> {
        let conv = |v: &[T]| v.iter().map(|x| U::from_f64(x.to_f64().unwrap()).unwrap()).collect();
        Model {
            config: self.config.clone(),
            names: self.names.clone(),
            params: self.params.iter().map(Tensor::cast).collect(),
            stats: self
                .stats
                .iter()
                .map(|s| RunningStats {
                    name: s.name.clone(),
                    mean: conv(&s.mean),
                    var: conv(&s.var),
                })
                .collect(),
            layout: self.layout.clone(),
        }
    }

    fn check_input(&self, input: &Tensor<T>) -> Result<()> {
        let [_, c, h, w] = input.dims4("model_forward")?;
        let s = self.config.input_size;
        if c != 3 {
            return Err(Error::Dimension {
                op: "model_forward",
                axis: "C",
                expected: 3,
                got: c,
            });
        }
        for (axis, got) in [("H", h), ("W", w)] {
            if got != s {
                return Err(Error::Dimension {
                    op: "model_forward",
                    axis,
                    expected: s,
                    got,
                });
            }
        }
        Ok(())
    }

    /// Training-mode forward: batch statistics normalise activations and are
    /// folded into the running estimates.
    pub fn forward_train(&mut self, g: &mut Graph<T>, images: Var) -> Result<Bound> {
        self.check_input(g.value(images))?;
        let params: Vec<Var> = self.params.iter().map(|p| g.input(detached(p))).collect();
        let mut run = Run {
            g,
            params: &params,
            stats: &self.stats,
            training: true,
            observed: Vec::new(),
        };
        let output = run.network(&self.layout, images)?;
        let observed = std::mem::take(&mut run.observed);
        let m = T::of(BN_MOMENTUM);
        for (idx, batch) in observed {
            let s = &mut self.stats[idx];
            for (r, b) in s.mean.iter_mut().zip(&batch.mean) {
                *r = (T::one() - m) * *r + m * *b;
            }
            for (r, b) in s.var.iter_mut().zip(&batch.var) {
                *r = (T::one() - m) * *r + m * *b;
            }
        }
        Ok(Bound { output, params })
    }

    /// Inference forward using running statistics. Parameters are recorded
    /// as constants.
    pub fn forward_eval(&self, g: &mut Graph<T>, images: Var) -> Result<Var> {
        self.check_input(g.value(images))?;
        let params: Vec<Var> = self
            .params
            .iter()
            .map(|p| {
                let mut t = detached(p);
                t.set_requires_grad(false);
                g.input(t)
            })
            .collect();
        let mut run = Run {
            g,
            params: &params,
            stats: &self.stats,
            training: false,
            observed: Vec::new(),
        };
        run.network(&self.layout, images)
    }

    /// Eval-mode heatmaps for a `[B,3,S,S]` batch.
    pub fn predict(&self, images: Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let x = g.input(images);
        let y = self.forward_eval(&mut g, x)?;
        Ok(g.value(y).clone())
    }

    /// Adds the gradients a backward pass left on the bound parameter leaves.
    pub fn accumulate_grads(&mut self, g: &Graph<T>, bound: &Bound) {
        for (param, &var) in self.params.iter_mut().zip(&bound.params) {
            match g.grad(var) {
                Some(d) => param.accumulate_grad(d),
                None => param.accumulate_grad(&vec![T::zero(); param.numel()]),
            }
        }
    }
}

fn detached<T: Scalar>(t: &Tensor<T>) -> Tensor<T> {
    let mut copy = Tensor::new(t.shape(), t.data().to_vec()).expect("valid tensor");
    copy.set_requires_grad(t.requires_grad());
    copy
}

struct Run<'a, T: Scalar> {
    g: &'a mut Graph<T>,
    params: &'a [Var],
    stats: &'a [RunningStats<T>],
    training: bool,
    observed: Vec<(usize, BatchStats<T>)>,
}

impl<T: Scalar> Run<'_, T> {
    fn conv(&mut self, c: &Conv, x: Var) -> Result<Var> {
        self.g.conv2d(
            x,
            self.params[c.weight],
            Some(self.params[c.bias]),
            c.stride,
            c.padding,
        )
    }

    fn norm_relu(&mut self, n: &Norm, x: Var) -> Result<Var> {
        let mode = if self.training {
            BatchNormMode::Train
        } else {
            let s = &self.stats[n.stats];
            BatchNormMode::Eval {
                mean: &s.mean,
                var: &s.var,
            }
        };
        let (y, batch) = self
            .g
            .batchnorm2d(x, self.params[n.gamma], self.params[n.beta], mode)?;
        if let Some(batch) = batch {
            self.observed.push((n.stats, batch));
        }
        Ok(self.g.relu(y))
    }

    fn bottleneck(&mut self, b: &Bottleneck, x: Var) -> Result<Var> {
        let h = self.norm_relu(&b.bn1, x)?;
        let h = self.conv(&b.conv1, h)?;
        let h = self.norm_relu(&b.bn2, h)?;
        let h = self.conv(&b.conv2, h)?;
        let h = self.norm_relu(&b.bn3, h)?;
        let h = self.conv(&b.conv3, h)?;
        let skip = match &b.skip {
            Some(proj) => self.conv(proj, x)?,
            None => x,
        };
        self.g.add(h, skip)
    }

    fn hourglass(&mut self, levels: &[Level], inner: &Bottleneck, x: Var) -> Result<Var> {
        let Some((level, deeper)) = levels.split_first() else {
            return self.bottleneck(inner, x);
        };
        let skip = self.bottleneck(&level.skip, x)?;
        let low = self.g.maxpool2(x)?;
        let low = self.bottleneck(&level.down, low)?;
        let low = self.hourglass(deeper, inner, low)?;
        let low = self.bottleneck(&level.up, low)?;
        let up = self.g.upsample_nearest2(low)?;
        self.g.add(skip, up)
    }

    fn network(&mut self, layout: &Layout, x: Var) -> Result<Var> {
        let h = self.conv(&layout.stem_conv, x)?;
        let h = self.norm_relu(&layout.stem_bn, h)?;
        let h = self.bottleneck(&layout.stem_blocks[0], h)?;
        let h = self.g.maxpool2(h)?;
        let h = self.bottleneck(&layout.stem_blocks[1], h)?;
        let h = self.bottleneck(&layout.stem_blocks[2], h)?;
        let h = self.hourglass(&layout.levels, &layout.inner, h)?;
        let h = self.norm_relu(&layout.head_bn, h)?;
        self.conv(&layout.head, h)
    }
}
