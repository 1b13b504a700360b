use std::collections::HashMap;
use std::rc::Rc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Mode;
use crate::corpus::Pixels;
use crate::error::{Error, Result};
use crate::nn::{he_normal, ConvGeom, Graph, Linear, MapShape, Mat, ParamId, ParamSet, Var};

const BN_EPS: f64 = 1e-5;
const BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ImageEncoderConfig {
    /// Residual network depth: 18, 34, 50, 101 or 152.
    pub depth: usize,
    /// Channels of the first stage; later stages double it.
    pub base_width: usize,
    /// Images are resized to `input_size × input_size` before encoding.
    pub input_size: usize,
    pub output_dim: usize,
}

impl Default for ImageEncoderConfig {
    fn default() -> Self {
        Self {
            depth: 18,
            base_width: 64,
            input_size: 224,
            output_dim: 512,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum BlockKind {
    Basic,
    Bottleneck,
}

fn layout(depth: usize) -> Result<(BlockKind, [usize; 4])> {
    Ok(match depth {
        18 => (BlockKind::Basic, [2, 2, 2, 2]),
        34 => (BlockKind::Basic, [3, 4, 6, 3]),
        50 => (BlockKind::Bottleneck, [3, 4, 6, 3]),
        101 => (BlockKind::Bottleneck, [3, 4, 23, 3]),
        152 => (BlockKind::Bottleneck, [3, 8, 36, 3]),
        d => return Err(Error::Parameter(format!("unsupported encoder depth {d}"))),
    })
}

/// Running-statistic updates produced by a training-mode pass.
pub type BufferUpdates = Vec<(ParamId, Mat)>;

/// Feature maps as rows `(image, y, x)` × channels.
#[derive(Clone, Copy, Debug)]
struct Maps {
    var: Var,
    batch: usize,
    side: usize,
}

#[derive(Clone, Debug)]
struct Conv {
    weight: ParamId,
    in_ch: usize,
    out_ch: usize,
    kernel: usize,
    stride: usize,
}

impl Conv {
    fn new(p: &mut ParamSet, rng: &mut impl Rng, name: &str, in_ch: usize, out_ch: usize, kernel: usize, stride: usize) -> Self {
        let fan_in = kernel * kernel * in_ch;
        let weight = p.add(format!("{name}.weight"), he_normal(rng, fan_in, out_ch, fan_in));
        Self {
            weight,
            in_ch,
            out_ch,
            kernel,
            stride,
        }
    }

    fn forward(&self, g: &mut Graph, p: &ParamSet, x: Maps) -> Maps {
        let geom = ConvGeom {
            batch: x.batch,
            height: x.side,
            width: x.side,
            in_ch: self.in_ch,
            out_ch: self.out_ch,
            kernel: self.kernel,
            stride: self.stride,
            pad: self.kernel / 2,
        };
        let w = g.param(p, self.weight);
        let var = g.conv2d(x.var, w, geom);
        Maps {
            var,
            batch: x.batch,
            side: geom.out_height(),
        }
    }
}

#[derive(Clone, Debug)]
struct BatchNorm {
    gamma: ParamId,
    beta: ParamId,
    mean: ParamId,
    var: ParamId,
}

impl BatchNorm {
    fn new(p: &mut ParamSet, name: &str, ch: usize, zero_gamma: bool) -> Self {
        let g0 = if zero_gamma { 0.0 } else { 1.0 };
        Self {
            gamma: p.add(format!("{name}.gamma"), Mat::from_elem((1, ch), g0)),
            beta: p.add(format!("{name}.beta"), Mat::zeros((1, ch))),
            mean: p.add_buffer(format!("{name}.running_mean"), Mat::zeros((1, ch))),
            var: p.add_buffer(format!("{name}.running_var"), Mat::ones((1, ch))),
        }
    }

    fn forward(&self, g: &mut Graph, p: &ParamSet, x: Maps, mode: Mode, updates: &mut BufferUpdates) -> Maps {
        let (centered, inv) = match mode {
            Mode::Train => {
                let mean = g.col_mean(x.var);
                let centered = g.sub_row(x.var, mean);
                let sq = g.mul(centered, centered);
                let var = g.col_mean(sq);
                let inv = g.rsqrt(var, BN_EPS);
                let n = g.shape(x.var).0 as f64;
                let unbiased = if n > 1.0 { n / (n - 1.0) } else { 1.0 };
                updates.push((self.mean, g.value(mean).clone()));
                updates.push((self.var, g.value(var) * unbiased));
                (centered, inv)
            }
            Mode::Eval => {
                let mean = g.constant(p.get(self.mean).clone());
                let inv = g.constant(p.get(self.var).mapv(|v| 1.0 / (v + BN_EPS).sqrt()));
                (g.sub_row(x.var, mean), inv)
            }
        };
        let normed = g.mul_row(centered, inv);
        let gamma = g.param(p, self.gamma);
        let beta = g.param(p, self.beta);
        let scaled = g.mul_row(normed, gamma);
        Maps {
            var: g.add_row(scaled, beta),
            ..x
        }
    }
}

#[derive(Clone, Debug)]
struct ConvBn {
    conv: Conv,
    bn: BatchNorm,
}

impl ConvBn {
    #[allow(clippy::too_many_arguments)]
    fn new(
        p: &mut ParamSet,
        rng: &mut impl Rng,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        zero_gamma: bool,
    ) -> Self {
        Self {
            conv: Conv::new(p, rng, &format!("{name}.conv"), in_ch, out_ch, kernel, stride),
            bn: BatchNorm::new(p, &format!("{name}.bn"), out_ch, zero_gamma),
        }
    }

    fn forward(&self, g: &mut Graph, p: &ParamSet, x: Maps, mode: Mode, up: &mut BufferUpdates) -> Maps {
        let y = self.conv.forward(g, p, x);
        self.bn.forward(g, p, y, mode, up)
    }
}

fn relu(g: &mut Graph, x: Maps) -> Maps {
    Maps { var: g.relu(x.var), ..x }
}

#[derive(Clone, Debug)]
struct Residual {
    path: Vec<ConvBn>,
    shortcut: Option<ConvBn>,
}

impl Residual {
    fn new(p: &mut ParamSet, rng: &mut impl Rng, name: &str, kind: BlockKind, in_ch: usize, width: usize, stride: usize) -> Self {
        let (path, out_ch) = match kind {
            BlockKind::Basic => (
                vec![
                    ConvBn::new(p, rng, &format!("{name}.a"), in_ch, width, 3, stride, false),
                    ConvBn::new(p, rng, &format!("{name}.b"), width, width, 3, 1, true),
                ],
                width,
            ),
            BlockKind::Bottleneck => (
                vec![
                    ConvBn::new(p, rng, &format!("{name}.a"), in_ch, width, 1, 1, false),
                    ConvBn::new(p, rng, &format!("{name}.b"), width, width, 3, stride, false),
                    ConvBn::new(p, rng, &format!("{name}.c"), width, 4 * width, 1, 1, true),
                ],
                4 * width,
            ),
        };
        let shortcut = (stride != 1 || in_ch != out_ch)
            .then(|| ConvBn::new(p, rng, &format!("{name}.down"), in_ch, out_ch, 1, stride, false));
        Self { path, shortcut }
    }

    fn out_ch(&self) -> usize {
        self.path.last().unwrap().conv.out_ch
    }

    fn forward(&self, g: &mut Graph, p: &ParamSet, x: Maps, mode: Mode, up: &mut BufferUpdates) -> Maps {
        let mut y = x;
        for (i, layer) in self.path.iter().enumerate() {
            y = layer.forward(g, p, y, mode, up);
            if i + 1 < self.path.len() {
                y = relu(g, y);
            }
        }
        let skip = match &self.shortcut {
            Some(s) => s.forward(g, p, x, mode, up),
            None => x,
        };
        let sum = Maps {
            var: g.add(y.var, skip.var),
            ..y
        };
        relu(g, sum)
    }
}

/// Residual convolutional encoder: strided stem, average pool, four stages,
/// global average pool and a linear head to `output_dim`.
#[derive(Clone, Debug)]
pub struct ImageEncoder {
    config: ImageEncoderConfig,
    stem: ConvBn,
    blocks: Vec<Residual>,
    head: Linear,
}

impl ImageEncoder {
    pub fn new(p: &mut ParamSet, rng: &mut impl Rng, name: &str, config: &ImageEncoderConfig) -> Result<Self> {
        let (kind, counts) = layout(config.depth)?;
        if config.input_size < 16 || config.base_width == 0 || config.output_dim == 0 {
            return Err(Error::Parameter(format!("invalid image encoder config {config:?}")));
        }
        let w = config.base_width;
        let stem = ConvBn::new(p, rng, &format!("{name}.stem"), 3, w, 3, 2, false);
        let mut blocks = Vec::new();
        let mut ch = w;
        for (stage, &count) in counts.iter().enumerate() {
            let width = w << stage;
            for b in 0..count {
                let stride = if stage > 0 && b == 0 { 2 } else { 1 };
                let block = Residual::new(p, rng, &format!("{name}.s{stage}.b{b}"), kind, ch, width, stride);
                ch = block.out_ch();
                blocks.push(block);
            }
        }
        let head = Linear::new(p, rng, &format!("{name}.head"), ch, config.output_dim);
        Ok(Self {
            config: config.clone(),
            stem,
            blocks,
            head,
        })
    }

    pub fn config(&self) -> &ImageEncoderConfig {
        &self.config
    }

    pub fn output_dim(&self) -> usize {
        self.config.output_dim
    }

    /// Resizes and scales one image into the `(side·side) × 3` input layout.
    pub fn prepare(&self, img: &Pixels) -> Mat {
        super::augment::resize_square(img, self.config.input_size).to_matrix()
    }

    /// Encodes `count` images stacked as rows of `input`. Training mode uses
    /// batch statistics and appends running-statistic updates to `updates`.
    pub fn forward(&self, g: &mut Graph, p: &ParamSet, input: Var, count: usize, mode: Mode, updates: &mut BufferUpdates) -> Result<Var> {
        let side = self.config.input_size;
        let (rows, cols) = g.shape(input);
        if cols != 3 {
            return Err(Error::Dimension(format!("expected 3 input channels, got {cols}")));
        }
        if rows != count * side * side {
            return Err(Error::Dimension(format!(
                "expected {count} images of {side}x{side}, got {rows} rows"
            )));
        }
        let x = Maps {
            var: input,
            batch: count,
            side,
        };
        let x = self.stem.forward(g, p, x, mode, updates);
        let x = relu(g, x);
        let mut x = Maps {
            var: g.avg_pool2(
                x.var,
                MapShape {
                    batch: x.batch,
                    height: x.side,
                    width: x.side,
                },
            ),
            side: x.side / 2,
            ..x
        };
        for block in &self.blocks {
            x = block.forward(g, p, x, mode, updates);
        }
        let area = x.side * x.side;
        let offsets: Vec<usize> = (0..=count).map(|i| i * area).collect();
        let pooled = g.segment_mean(x.var, Rc::new(offsets));
        Ok(self.head.forward(g, p, pooled))
    }

    /// Eval-mode embedding of a single image.
    pub fn encode(&self, p: &ParamSet, img: &Pixels) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let x = g.constant(self.prepare(img));
        let out = self.forward(&mut g, p, x, 1, Mode::Eval, &mut Vec::new())?;
        Ok(g.value(out).iter().copied().collect())
    }
}

/// Folds one batch's statistics into the running buffers.
pub fn apply_updates(p: &mut ParamSet, updates: BufferUpdates) {
    for (id, value) in updates {
        let slot = p.get_mut(id);
        *slot = &*slot * (1.0 - BN_MOMENTUM) + value * BN_MOMENTUM;
    }
}

/// Replaces running buffers with the plain average of several batches'
/// statistics.
pub fn recalibrate_stats(p: &mut ParamSet, batches: Vec<BufferUpdates>) {
    let n = batches.len();
    let mut sums: HashMap<ParamId, Mat> = HashMap::new();
    for (id, value) in batches.into_iter().flatten() {
        match sums.get_mut(&id) {
            Some(acc) => *acc += &value,
            None => {
                sums.insert(id, value);
            }
        }
    }
    for (id, sum) in sums {
        *p.get_mut(id) = sum / n as f64;
    }
}
