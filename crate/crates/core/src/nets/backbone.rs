use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Mode, ParamId, ParamStore, Real, RunningStats, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Dense layers per dense stage.
pub const DENSE_LAYERS_PER_STAGE: usize = 4;
/// Basic blocks per residual stage.
pub const RESIDUAL_BLOCKS_PER_STAGE: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackboneKind {
    /// Concatenative connectivity.
    Dense,
    /// Additive (identity-skip) connectivity.
    Residual,
    /// Stacked conv/pool without skips.
    Plain,
}

impl BackboneKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BackboneKind::Dense => "dense",
            BackboneKind::Residual => "residual",
            BackboneKind::Plain => "plain",
        }
    }
}

impl std::str::FromStr for BackboneKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "dense" => Ok(BackboneKind::Dense),
            "residual" => Ok(BackboneKind::Residual),
            "plain" => Ok(BackboneKind::Plain),
            other => Err(Error::InvalidInput(format!(
                "unknown backbone {other:?} (expected dense, residual or plain)"
            ))),
        }
    }
}

/// Topology of one convolutional backbone.
///
/// Every kind starts with the same stem (3x3 stride-2 conv, batch norm,
/// ReLU, 2x2 max pool), so stage 0 runs at a quarter of the input side.
/// Each later stage halves the resolution again.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BackboneSpec {
    pub kind: BackboneKind,
    pub input_side: usize,
    pub stem_channels: usize,
    pub stages: usize,
    /// Growth rate for dense backbones, first-stage width otherwise.
    pub growth_or_width: usize,
}

impl BackboneSpec {
    pub fn new(kind: BackboneKind, input_side: usize) -> Self {
        BackboneSpec {
            kind,
            input_side,
            stem_channels: 16,
            stages: 3,
            growth_or_width: match kind {
                BackboneKind::Dense => 12,
                BackboneKind::Residual | BackboneKind::Plain => 16,
            },
        }
    }

    /// Small configuration sized for single-core CPU training on 64x64
    /// patches.
    pub fn desk(kind: BackboneKind, input_side: usize) -> Self {
        let (stages, growth_or_width) = match kind {
            BackboneKind::Dense => (3, 4),
            BackboneKind::Residual | BackboneKind::Plain => (2, 8),
        };
        BackboneSpec {
            kind,
            input_side,
            stem_channels: 8,
            stages,
            growth_or_width,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages == 0 || self.stem_channels == 0 || self.growth_or_width == 0 {
            return Err(Error::InvalidInput(format!(
                "backbone needs positive stages and channel counts: {self:?}"
            )));
        }
        let reduction = 4usize << (self.stages - 1);
        if self.input_side < reduction || self.input_side % reduction != 0 {
            return Err(Error::InvalidInput(format!(
                "input side {} must be a positive multiple of {reduction} for {} stages",
                self.input_side, self.stages
            )));
        }
        Ok(())
    }

    /// Width of stage `s` for residual and plain kinds (doubles per stage).
    pub fn stage_width(&self, stage: usize) -> usize {
        self.growth_or_width << stage
    }

    /// Channels entering the classifier head.
    pub fn feature_dim(&self) -> usize {
        match self.kind {
            BackboneKind::Dense => {
                self.stem_channels + self.stages * DENSE_LAYERS_PER_STAGE * self.growth_or_width
            }
            BackboneKind::Residual | BackboneKind::Plain => self.stage_width(self.stages - 1),
        }
    }

    /// Canonical one-line descriptor, e.g. `dense:side=64,stem=8,stages=2,growth=4`.
    pub fn descriptor(&self) -> String {
        let last = match self.kind {
            BackboneKind::Dense => "growth",
            _ => "width",
        };
        format!(
            "{}:side={},stem={},stages={},{}={}",
            self.kind.as_str(),
            self.input_side,
            self.stem_channels,
            self.stages,
            last,
            self.growth_or_width
        )
    }

    pub fn parse_descriptor(s: &str) -> Result<Self> {
        let bad = || Error::Format(format!("bad backbone descriptor {s:?}"));
        let (kind, rest) = s.split_once(':').ok_or_else(bad)?;
        let kind: BackboneKind = kind.parse()?;
        let mut spec = BackboneSpec::new(kind, 0);
        let mut seen = 0;
        for field in rest.split(',') {
            let (k, v) = field.split_once('=').ok_or_else(bad)?;
            let v: usize = v.parse().map_err(|_| bad())?;
            match k {
                "side" => spec.input_side = v,
                "stem" => spec.stem_channels = v,
                "stages" => spec.stages = v,
                "growth" | "width" => spec.growth_or_width = v,
                _ => return Err(bad()),
            }
            seen += 1;
        }
        if seen != 4 {
            return Err(bad());
        }
        spec.validate()?;
        Ok(spec)
    }
}

/// Layer graph of a backbone. Parameters live in the owning [`ParamStore`];
/// modules refer to them by id.
#[derive(Clone, Debug, PartialEq)]
pub(crate) enum Module {
    Conv {
        weight: ParamId,
        stride: usize,
        pad: usize,
    },
    BatchNorm {
        gamma: ParamId,
        beta: ParamId,
        stats: usize,
    },
    Relu,
    MaxPool(usize),
    AvgPool(usize),
    GlobalAvgPool,
    Seq(Vec<Module>),
    /// Each layer sees the concatenation of the block input and all earlier
    /// layer outputs; the block output is the full concatenation.
    DenseBlock(Vec<Module>),
    /// `relu(branch(x) + shortcut(x))`, identity shortcut when `None`.
    Residual {
        branch: Box<Module>,
        shortcut: Option<Box<Module>>,
    },
}

pub(crate) struct Context<'a, T> {
    pub tape: &'a mut Tape<T>,
    pub vars: &'a [Var],
    pub stats: &'a mut [RunningStats<T>],
    pub mode: Mode,
}

impl Module {
    pub(crate) fn forward<T: Real>(&self, cx: &mut Context<'_, T>, x: Var) -> Result<Var> {
        match self {
            Module::Conv { weight, stride, pad } => {
                cx.tape.conv2d(x, cx.vars[weight.0], None, *stride, *pad)
            }
            Module::BatchNorm { gamma, beta, stats } => cx.tape.batch_norm(
                x,
                cx.vars[gamma.0],
                cx.vars[beta.0],
                &mut cx.stats[*stats],
                cx.mode,
            ),
            Module::Relu => Ok(cx.tape.relu(x)),
            Module::MaxPool(k) => cx.tape.max_pool2d(x, *k, *k),
            Module::AvgPool(k) => cx.tape.avg_pool2d(x, *k, *k),
            Module::GlobalAvgPool => cx.tape.global_avg_pool(x),
            Module::Seq(mods) => mods.iter().try_fold(x, |h, m| m.forward(cx, h)),
            Module::DenseBlock(layers) => {
                let mut features = vec![x];
                for layer in layers {
                    let input = if features.len() == 1 {
                        x
                    } else {
                        cx.tape.concat(&features)?
                    };
                    let new = layer.forward(cx, input)?;
                    features.push(new);
                }
                cx.tape.concat(&features)
            }
            Module::Residual { branch, shortcut } => {
                let b = branch.forward(cx, x)?;
                let s = match shortcut {
                    Some(m) => m.forward(cx, x)?,
                    None => x,
                };
                let sum = cx.tape.add(b, s)?;
                Ok(cx.tape.relu(sum))
            }
        }
    }
}

/// Creates parameters in forward order while the module tree is assembled.
pub(crate) struct Builder<'a, T, R> {
    pub params: &'a mut ParamStore<T>,
    pub stat_names: &'a mut Vec<String>,
    pub stats: &'a mut Vec<RunningStats<T>>,
    pub rng: &'a mut R,
}

impl<T: Real, R: Rng> Builder<'_, T, R> {
    /// He-uniform: U(-b, b) with b = sqrt(6 / fan_in).
    pub(crate) fn he_uniform(&mut self, shape: &[usize], fan_in: usize) -> Tensor<T> {
        let bound = (6.0 / fan_in as f64).sqrt();
        let rng = &mut *self.rng;
        Tensor::from_fn(shape, |_| T::lit(rng.random_range(-bound..bound)))
    }

    fn conv(&mut self, name: &str, cin: usize, cout: usize, k: usize, stride: usize) -> Module {
        let w = self.he_uniform(&[cout, cin, k, k], cin * k * k);
        let weight = self.params.insert(format!("{name}.weight"), w);
        Module::Conv {
            weight,
            stride,
            pad: k / 2,
        }
    }

    fn bn(&mut self, name: &str, channels: usize) -> Module {
        let gamma = self
            .params
            .insert(format!("{name}.gamma"), Tensor::full(&[channels], T::one()));
        let beta = self
            .params
            .insert(format!("{name}.beta"), Tensor::zeros(&[channels]));
        self.stats.push(RunningStats::new(channels));
        self.stat_names.push(name.to_string());
        Module::BatchNorm {
            gamma,
            beta,
            stats: self.stats.len() - 1,
        }
    }

    fn stem(&mut self, spec: &BackboneSpec) -> Module {
        Module::Seq(vec![
            self.conv("stem.conv", 1, spec.stem_channels, 3, 2),
            self.bn("stem.bn", spec.stem_channels),
            Module::Relu,
            Module::MaxPool(2),
        ])
    }

    pub(crate) fn backbone(&mut self, spec: &BackboneSpec) -> Module {
        let mut mods = vec![self.stem(spec)];
        match spec.kind {
            BackboneKind::Dense => {
                let g = spec.growth_or_width;
                let mut c = spec.stem_channels;
                for s in 0..spec.stages {
                    if s > 0 {
                        mods.push(Module::AvgPool(2));
                    }
                    let mut layers = Vec::with_capacity(DENSE_LAYERS_PER_STAGE);
                    for l in 0..DENSE_LAYERS_PER_STAGE {
                        let name = format!("stage{s}.layer{l}");
                        layers.push(Module::Seq(vec![
                            self.bn(&format!("{name}.bn"), c),
                            Module::Relu,
                            self.conv(&format!("{name}.conv"), c, g, 3, 1),
                        ]));
                        c += g;
                    }
                    mods.push(Module::DenseBlock(layers));
                }
                mods.push(self.bn("final.bn", c));
                mods.push(Module::Relu);
            }
            BackboneKind::Residual => {
                let mut c = spec.stem_channels;
                for s in 0..spec.stages {
                    let w = spec.stage_width(s);
                    for b in 0..RESIDUAL_BLOCKS_PER_STAGE {
                        let stride = if s > 0 && b == 0 { 2 } else { 1 };
                        let name = format!("stage{s}.block{b}");
                        let branch = Module::Seq(vec![
                            self.conv(&format!("{name}.conv1"), c, w, 3, stride),
                            self.bn(&format!("{name}.bn1"), w),
                            Module::Relu,
                            self.conv(&format!("{name}.conv2"), w, w, 3, 1),
                            self.bn(&format!("{name}.bn2"), w),
                        ]);
                        let shortcut = (stride != 1 || c != w).then(|| {
                            Box::new(Module::Seq(vec![
                                self.conv(&format!("{name}.proj"), c, w, 1, stride),
                                self.bn(&format!("{name}.proj_bn"), w),
                            ]))
                        });
                        mods.push(Module::Residual {
                            branch: Box::new(branch),
                            shortcut,
                        });
                        c = w;
                    }
                }
            }
            BackboneKind::Plain => {
                let mut c = spec.stem_channels;
                for s in 0..spec.stages {
                    if s > 0 {
                        mods.push(Module::MaxPool(2));
                    }
                    let w = spec.stage_width(s);
                    let name = format!("stage{s}");
                    mods.push(self.conv(&format!("{name}.conv"), c, w, 3, 1));
                    mods.push(self.bn(&format!("{name}.bn"), w));
                    mods.push(Module::Relu);
                    c = w;
                }
            }
        }
        mods.push(Module::GlobalAvgPool);
        Module::Seq(mods)
    }
}
