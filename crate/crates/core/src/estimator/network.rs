use rayon::prelude::*;

use super::{
    EstimatorError, LogCosh, ModelConfig, ParamSet, Result, FUSED_CHANNELS,
};
use crate::patch::PatchTensor;
use crate::raster::N_BANDS;
use crate::rng::Xoshiro256StarStar;
use crate::Scalar;

const K: usize = 3;

/// Reference convnet: configuration plus parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Network<T> {
    config: ModelConfig,
    params: ParamSet<T>,
}

/// How a forward pass runs.
pub enum ForwardMode<'a> {
    /// Deterministic, dropout off, nothing cached for backward.
    Inference,
    /// Caches activations; dropout masks are drawn from the stream.
    Train(&'a mut Xoshiro256StarStar),
    /// Caches activations with dropout disabled.
    TrainNoDropout,
}

struct BlockCache<T> {
    /// Pre-activation of the conv, `[c][s][s]`.
    pre: Vec<T>,
    /// Pooled output, input of the next stage.
    pooled: Vec<T>,
}

struct SampleCache<T> {
    fused: Vec<T>,
    blocks: Vec<BlockCache<T>>,
    /// Features after dropout (what the head saw).
    features: Vec<T>,
    /// Per-feature multiplier: 0 or 1/keep when dropout ran, otherwise 1.
    mask: Vec<T>,
}

/// Result of [`Network::forward`].
pub struct ForwardPass<T> {
    pub outputs: Vec<T>,
    caches: Option<Vec<SampleCache<T>>>,
    cells: Vec<(usize, usize)>,
}

impl<T> ForwardPass<T> {
    pub fn has_cache(&self) -> bool {
        self.caches.is_some()
    }
}

fn conv3x3_forward<T: Scalar>(
    input: &[T],
    in_c: usize,
    s: usize,
    weight: &[T],
    bias: &[T],
    out_c: usize,
) -> Vec<T> {
    let plane = s * s;
    let mut out = vec![T::zero(); out_c * plane];
    for o in 0..out_c {
        let dst = &mut out[o * plane..(o + 1) * plane];
        dst.iter_mut().for_each(|v| *v = bias[o]);
        for i in 0..in_c {
            let src = &input[i * plane..(i + 1) * plane];
            for ky in 0..K {
                for kx in 0..K {
                    let w = weight[((o * in_c + i) * K + ky) * K + kx];
                    let (y_lo, y_hi) = valid_range(ky, s);
                    let (x_lo, x_hi) = valid_range(kx, s);
                    for y in y_lo..y_hi {
                        let sy = y + ky - 1;
                        let d = &mut dst[y * s + x_lo..y * s + x_hi];
                        let r = &src[sy * s + x_lo + kx - 1..sy * s + x_hi + kx - 1];
                        for (a, &b) in d.iter_mut().zip(r) {
                            *a += w * b;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Output rows/cols `y` for which `y + k − 1` is inside `0..s`.
#[inline]
fn valid_range(k: usize, s: usize) -> (usize, usize) {
    let lo = if k == 0 { 1 } else { 0 };
    let hi = (s + 1).saturating_sub(k).min(s);
    (lo.min(hi), hi)
}

#[allow(clippy::too_many_arguments)]
fn conv3x3_backward<T: Scalar>(
    input: &[T],
    in_c: usize,
    s: usize,
    weight: &[T],
    d_out: &[T],
    out_c: usize,
    d_weight: &mut [T],
    d_bias: &mut [T],
    d_input: &mut [T],
) {
    let plane = s * s;
    for o in 0..out_c {
        let g = &d_out[o * plane..(o + 1) * plane];
        d_bias[o] += g.iter().copied().sum::<T>();
        for i in 0..in_c {
            let src = &input[i * plane..(i + 1) * plane];
            let d_src = &mut d_input[i * plane..(i + 1) * plane];
            for ky in 0..K {
                for kx in 0..K {
                    let widx = ((o * in_c + i) * K + ky) * K + kx;
                    let w = weight[widx];
                    let (y_lo, y_hi) = valid_range(ky, s);
                    let (x_lo, x_hi) = valid_range(kx, s);
                    let mut acc = T::zero();
                    for y in y_lo..y_hi {
                        let sy = y + ky - 1;
                        let gr = &g[y * s + x_lo..y * s + x_hi];
                        let sr = sy * s + x_lo + kx - 1..sy * s + x_hi + kx - 1;
                        for (&gv, &iv) in gr.iter().zip(&src[sr.clone()]) {
                            acc += gv * iv;
                        }
                        for (dv, &gv) in d_src[sr].iter_mut().zip(gr) {
                            *dv += w * gv;
                        }
                    }
                    d_weight[widx] += acc;
                }
            }
        }
    }
}

/// ReLU then 2×2 average pooling (odd trailing row/col dropped).
fn relu_pool<T: Scalar>(pre: &[T], c: usize, s: usize) -> Vec<T> {
    let h = s / 2;
    let quarter = T::of(0.25);
    let mut out = Vec::with_capacity(c * h * h);
    for ch in 0..c {
        let p = &pre[ch * s * s..(ch + 1) * s * s];
        for y in 0..h {
            for x in 0..h {
                let a = p[2 * y * s + 2 * x].max(T::zero())
                    + p[2 * y * s + 2 * x + 1].max(T::zero())
                    + p[(2 * y + 1) * s + 2 * x].max(T::zero())
                    + p[(2 * y + 1) * s + 2 * x + 1].max(T::zero());
                out.push(a * quarter);
            }
        }
    }
    out
}

/// Gradient through pooling and ReLU back to the conv pre-activation.
fn relu_pool_backward<T: Scalar>(pre: &[T], d_pooled: &[T], c: usize, s: usize) -> Vec<T> {
    let h = s / 2;
    let quarter = T::of(0.25);
    let mut d_pre = vec![T::zero(); c * s * s];
    for ch in 0..c {
        for y in 0..h {
            for x in 0..h {
                let g = d_pooled[(ch * h + y) * h + x] * quarter;
                for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                    let idx = ch * s * s + (2 * y + dy) * s + 2 * x + dx;
                    if pre[idx] > T::zero() {
                        d_pre[idx] = g;
                    }
                }
            }
        }
    }
    d_pre
}

impl<T: Scalar> Network<T> {
    /// Fresh network with fan-in scaled uniform weights (bound `√(6/fan_in)`)
    /// drawn from `rng`, zero biases.
    pub fn new(config: ModelConfig, rng: &mut Xoshiro256StarStar) -> Result<Self> {
        let mut net = Self::zeroed(config)?;
        let slots = net.params.slots().to_vec();
        for slot in slots.iter().filter(|s| s.name.ends_with(".weight")) {
            let fan_in: usize = slot.shape[1..].iter().product();
            let bound = (6.0 / fan_in as f64).sqrt();
            for v in &mut net.params.values[slot.range()] {
                *v = T::of(rng.uniform(-bound, bound));
            }
        }
        Ok(net)
    }

    /// All parameters zero.
    pub fn zeroed(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut arrays = vec![
            ("fusion.weight".to_string(), vec![FUSED_CHANNELS, N_BANDS]),
            ("fusion.bias".to_string(), vec![FUSED_CHANNELS]),
        ];
        let mut in_c = FUSED_CHANNELS;
        for (b, &out_c) in config.conv_channels.iter().enumerate() {
            arrays.push((format!("conv{b}.weight"), vec![out_c, in_c, K, K]));
            arrays.push((format!("conv{b}.bias"), vec![out_c]));
            in_c = out_c;
        }
        arrays.push(("head.weight".to_string(), vec![1, in_c]));
        arrays.push(("head.bias".to_string(), vec![1]));
        Ok(Self {
            params: ParamSet::new(arrays),
            config,
        })
    }

    pub fn from_parts(config: ModelConfig, values: Vec<T>) -> Result<Self> {
        let mut net = Self::zeroed(config)?;
        net.params.load(values)?;
        Ok(net)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    fn check_input(&self, patch: &PatchTensor<T>) -> Result<()> {
        let s = self.config.input_size;
        if patch.height() != s || patch.width() != s {
            return Err(EstimatorError::Shape(format!(
                "patch for cell {:?} is {}x{}, model expects {s}x{s}",
                patch.cell(),
                patch.height(),
                patch.width()
            )));
        }
        Ok(())
    }

    /// Runs one sample. `mask` multiplies the pooled features.
    fn forward_one(&self, x: &PatchTensor<T>, mask: &[T]) -> (T, SampleCache<T>) {
        let s0 = self.config.input_size;
        let plane = s0 * s0;
        let fw = self.params.get("fusion.weight");
        let fb = self.params.get("fusion.bias");
        let mut fused = vec![T::zero(); FUSED_CHANNELS * plane];
        for o in 0..FUSED_CHANNELS {
            let dst = &mut fused[o * plane..(o + 1) * plane];
            dst.iter_mut().for_each(|v| *v = fb[o]);
            for c in 0..N_BANDS {
                let w = fw[o * N_BANDS + c];
                for (d, &v) in dst.iter_mut().zip(x.channel(c)) {
                    *d += w * v;
                }
            }
        }

        let mut blocks: Vec<BlockCache<T>> = Vec::with_capacity(self.config.conv_channels.len());
        let mut s = s0;
        let mut in_c = FUSED_CHANNELS;
        for (b, &out_c) in self.config.conv_channels.iter().enumerate() {
            let input = blocks.last().map_or(&fused, |bc| &bc.pooled);
            let pre = conv3x3_forward(
                input,
                in_c,
                s,
                self.params.get(&format!("conv{b}.weight")),
                self.params.get(&format!("conv{b}.bias")),
                out_c,
            );
            let pooled = relu_pool(&pre, out_c, s);
            blocks.push(BlockCache { pre, pooled });
            s /= 2;
            in_c = out_c;
        }

        let last = &blocks.last().expect("at least one block").pooled;
        let area = T::of_usize(s * s);
        let features: Vec<T> = (0..in_c)
            .map(|c| last[c * s * s..(c + 1) * s * s].iter().copied().sum::<T>() / area * mask[c])
            .collect();
        let hw = self.params.get("head.weight");
        let y = self.params.get("head.bias")[0]
            + features.iter().zip(hw).map(|(&f, &w)| f * w).sum::<T>();
        (
            y,
            SampleCache {
                fused,
                blocks,
                features,
                mask: mask.to_vec(),
            },
        )
    }

    pub fn forward(&self, batch: &[PatchTensor<T>], mode: ForwardMode<'_>) -> Result<ForwardPass<T>> {
        for p in batch {
            self.check_input(p)?;
        }
        let width = self.config.feature_width();
        let keep = 1.0 - self.config.dropout;
        let cache = !matches!(mode, ForwardMode::Inference);
        let masks: Vec<Vec<T>> = match mode {
            ForwardMode::Train(rng) if self.config.dropout > 0.0 => batch
                .iter()
                .map(|_| {
                    (0..width)
                        .map(|_| {
                            if rng.next_f64() < keep {
                                T::of(1.0 / keep)
                            } else {
                                T::zero()
                            }
                        })
                        .collect()
                })
                .collect(),
            _ => vec![vec![T::one(); width]; batch.len()],
        };
        let results: Vec<(T, SampleCache<T>)> = batch
            .par_iter()
            .zip(masks.par_iter())
            .map(|(x, mask)| self.forward_one(x, mask))
            .collect();
        let (outputs, caches): (Vec<T>, Vec<SampleCache<T>>) = results.into_iter().unzip();
        Ok(ForwardPass {
            outputs,
            caches: cache.then_some(caches),
            cells: batch.iter().map(|p| p.cell()).collect(),
        })
    }

    /// Convenience: deterministic predictions.
    pub fn predict_batch(&self, batch: &[PatchTensor<T>]) -> Result<Vec<T>> {
        Ok(self.forward(batch, ForwardMode::Inference)?.outputs)
    }

    /// Gradient of one sample's output `y` scaled by `dy`.
    fn backward_one(&self, x: &PatchTensor<T>, cache: &SampleCache<T>, dy: T) -> Vec<T> {
        let p = &self.params;
        let mut grad = p.zeros_like();
        let n_blocks = self.config.conv_channels.len();
        let width = self.config.feature_width();

        let hw_slot = p.slot("head.weight").expect("head").range();
        for (c, &f) in cache.features.iter().enumerate() {
            grad[hw_slot.start + c] = dy * f;
        }
        grad[p.slot("head.bias").expect("head").offset] = dy;

        let s_last = self.config.input_size >> n_blocks;
        let hw = p.get("head.weight");
        let area = T::of_usize(s_last * s_last);
        let mut d_pooled: Vec<T> = Vec::with_capacity(width * s_last * s_last);
        for c in 0..width {
            let g = dy * hw[c] * cache.mask[c] / area;
            d_pooled.extend(std::iter::repeat_n(g, s_last * s_last));
        }

        for b in (0..n_blocks).rev() {
            let s = self.config.input_size >> b;
            let out_c = self.config.conv_channels[b];
            let in_c = if b == 0 {
                FUSED_CHANNELS
            } else {
                self.config.conv_channels[b - 1]
            };
            let d_pre = relu_pool_backward(&cache.blocks[b].pre, &d_pooled, out_c, s);
            let input = if b == 0 {
                &cache.fused
            } else {
                &cache.blocks[b - 1].pooled
            };
            let w_range = p.slot(&format!("conv{b}.weight")).expect("conv").range();
            let b_range = p.slot(&format!("conv{b}.bias")).expect("conv").range();
            let mut d_input = vec![T::zero(); in_c * s * s];
            let (lo, hi) = grad.split_at_mut(b_range.start);
            conv3x3_backward(
                input,
                in_c,
                s,
                &p.values[w_range.clone()],
                &d_pre,
                out_c,
                &mut lo[w_range],
                &mut hi[..b_range.len()],
                &mut d_input,
            );
            d_pooled = d_input;
        }

        let plane = self.config.input_size * self.config.input_size;
        let fw = p.slot("fusion.weight").expect("fusion").offset;
        let fb = p.slot("fusion.bias").expect("fusion").offset;
        for o in 0..FUSED_CHANNELS {
            let g = &d_pooled[o * plane..(o + 1) * plane];
            grad[fb + o] = g.iter().copied().sum();
            for c in 0..N_BANDS {
                grad[fw + o * N_BANDS + c] =
                    g.iter().zip(x.channel(c)).map(|(&a, &b)| a * b).sum();
            }
        }
        grad
    }

    /// Exact gradient of `loss(outputs, truth)` with respect to every
    /// parameter. Per-sample gradients are summed in batch order.
    pub fn backward(
        &self,
        batch: &[PatchTensor<T>],
        pass: &ForwardPass<T>,
        truth: &[T],
        loss: &LogCosh,
    ) -> Result<Vec<T>> {
        let caches = pass.caches.as_ref().ok_or(EstimatorError::Protocol)?;
        if caches.len() != batch.len()
            || pass.cells.iter().zip(batch).any(|(c, p)| *c != p.cell())
        {
            return Err(EstimatorError::Protocol);
        }
        let d_out = loss.gradient(&pass.outputs, truth)?;
        let per_sample: Vec<Vec<T>> = batch
            .par_iter()
            .zip(caches.par_iter())
            .zip(d_out.par_iter())
            .map(|((x, cache), &dy)| self.backward_one(x, cache, dy))
            .collect();
        let mut total = self.params.zeros_like();
        for g in &per_sample {
            for (t, &v) in total.iter_mut().zip(g) {
                *t += v;
            }
        }
        Ok(total)
    }
}
