use crate::autodiff::{Graph, Scalar, Tensor, Var};
use crate::error::{Error, Result};
use crate::normalcue::NormalCue;
use crate::photometry::{ReflectionFrame, CHANNELS};

use super::arch::{ModelParams, RESIDUAL_DIM};

/// Parameters placed on a tape.
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

/// Graph nodes produced by the cue branch.
#[derive(Debug, Clone, Copy)]
pub struct CueHeads {
    /// `[N, F, s, s]` encoder output.
    pub features: Var,
    /// `[N, 16, 4s, 4s]`.
    pub depth_logits: Var,
    /// `[N, 4, 4s, 4s]`.
    pub material_logits: Var,
    /// `[N, 1]` classifier logit.
    pub cls_logit: Var,
}

/// Outputs for a single cue.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    pub features: Tensor<f32>,
    pub depth_logits: Tensor<f32>,
    pub material_logits: Tensor<f32>,
    pub cls_score: f64,
}

/// Network input for a cue: the `[0, 1]`-rescaled map divided by its mean.
/// This removes the global scale, which depends on how well the light
/// intensities are known.
pub fn cue_input(cue: &NormalCue) -> Vec<f64> {
    let r = cue.rescaled();
    let mean = r.iter().sum::<f64>() / r.len().max(1) as f64;
    let denom = mean.max(1e-3);
    r.into_iter().map(|v| (v / denom).min(10.0)).collect()
}

/// A frame pair as regressor input, `[6, H, W]` channel-first: the
/// difference `b − a` divided by its mean absolute value, then the sum
/// `a + b` divided by its mean. Both halves are free of the subject's
/// overall brightness, so the light change shows as a fixed pattern across
/// channels.
pub fn pair_input(a: &ReflectionFrame, b: &ReflectionFrame) -> Result<Vec<f64>> {
    if (a.height, a.width) != (b.height, b.width) || a.pixels.len() != b.pixels.len() {
        return Err(Error::validation("frames differ in size"));
    }
    let hw = a.height * a.width;
    let len = a.pixels.len().max(1) as f64;
    let diff_scale = a
        .pixels
        .iter()
        .zip(&b.pixels)
        .map(|(x, y)| (y - x).abs())
        .sum::<f64>()
        / len;
    let sum_scale = a
        .pixels
        .iter()
        .zip(&b.pixels)
        .map(|(x, y)| x + y)
        .sum::<f64>()
        / len;
    let (dk, sk) = (1.0 / diff_scale.max(1e-4), 1.0 / sum_scale.max(1e-4));
    let mut out = vec![0.0; 2 * CHANNELS * hw];
    for p in 0..hw {
        for c in 0..CHANNELS {
            let (x, y) = (a.pixels[p * CHANNELS + c], b.pixels[p * CHANNELS + c]);
            out[c * hw + p] = (y - x) * dk;
            out[(CHANNELS + c) * hw + p] = (x + y) * sk;
        }
    }
    Ok(out)
}

impl ModelParams {
    /// Places every tensor on the tape, as trainable leaves or constants.
    pub fn bind<T: Scalar>(&self, g: &mut Graph<T>, trainable: bool) -> Bound {
        let values: Vec<Tensor<T>> = self.tensors.iter().map(|t| t.cast::<T>()).collect();
        self.bind_values(g, &values, trainable)
            .expect("own tensors match the layout")
    }

    /// Like `bind`, but with replacement values of the same shapes, e.g.
    /// full-precision weights for a finite-difference check.
    pub fn bind_values<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        values: &[Tensor<T>],
        trainable: bool,
    ) -> Result<Bound> {
        if values.len() != self.tensors.len()
            || values
                .iter()
                .zip(&self.tensors)
                .any(|(v, t)| v.shape != t.shape)
        {
            return Err(Error::validation(
                "replacement tensors do not match the layout",
            ));
        }
        let vars = values
            .iter()
            .map(|t| {
                if trainable {
                    g.param(t.clone())
                } else {
                    g.input(t.clone())
                }
            })
            .collect();
        Ok(Bound { vars })
    }

    fn var(&self, bound: &Bound, name: &str) -> Var {
        bound.vars[self.index(name)]
    }

    fn conv<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        b: &Bound,
        x: Var,
        name: &str,
        stride: usize,
    ) -> Result<Var> {
        let w = self.var(b, &format!("{name}.w"));
        let bias = self.var(b, &format!("{name}.b"));
        let k = g.shape(w)[2];
        g.conv2d(x, w, Some(bias), stride, k / 2)
    }

    fn dense<T: Scalar>(&self, g: &mut Graph<T>, b: &Bound, x: Var, name: &str) -> Result<Var> {
        let w = self.var(b, &format!("{name}.w"));
        let bias = self.var(b, &format!("{name}.b"));
        let y = g.matmul(x, w)?;
        g.add_bias(y, bias)
    }

    fn decoder<T: Scalar>(&self, g: &mut Graph<T>, b: &Bound, x: Var, prefix: &str) -> Result<Var> {
        let u = g.upsample2(x)?;
        let h = self.conv(g, b, u, &format!("{prefix}.conv"), 1)?;
        let h = g.relu(h);
        let u = g.upsample2(h)?;
        self.conv(g, b, u, &format!("{prefix}.out"), 1)
    }

    /// Encoder, the two decoders on the bisected features, and the
    /// classifier on the full features. `x: [N, 1, S, S]`.
    pub fn cue_heads<T: Scalar>(&self, g: &mut Graph<T>, b: &Bound, x: Var) -> Result<CueHeads> {
        let s = self.arch.input_size;
        if g.shape(x)[1..] != [1, s, s] {
            return Err(Error::validation(format!(
                "cue batch {:?} does not match input size {s}",
                g.shape(x)
            )));
        }
        let h = self.conv(g, b, x, "enc.stem", 1)?;
        let h = g.relu(h);
        let h = self.conv(g, b, h, "enc.down1", 2)?;
        let h = g.relu(h);
        let h = self.conv(g, b, h, "enc.down2", 2)?;
        let skip = g.relu(h);
        let r = self.conv(g, b, skip, "enc.res1", 1)?;
        let r = g.relu(r);
        let r = self.conv(g, b, r, "enc.res2", 1)?;
        let h = g.add(skip, r)?;
        let h = g.relu(h);
        let h = self.conv(g, b, h, "enc.down3", 2)?;
        let features = g.relu(h);

        let half = self.arch.features / 2;
        let depth_part = g.slice_channels(features, 0, half)?;
        let material_part = g.slice_channels(features, half, self.arch.features)?;
        let depth_logits = self.decoder(g, b, depth_part, "dep")?;
        let material_logits = self.decoder(g, b, material_part, "mat")?;

        let flat = g.flatten(features);
        let c = self.dense(g, b, flat, "cls.fc1")?;
        let c = g.relu(c);
        let cls_logit = self.dense(g, b, c, "cls.fc2")?;
        Ok(CueHeads {
            features,
            depth_logits,
            material_logits,
            cls_logit,
        })
    }

    /// Residual estimate `[N, 5]` from stacked frame pairs `[N, 6, S, S]`.
    pub fn regressor<T: Scalar>(&self, g: &mut Graph<T>, b: &Bound, x: Var) -> Result<Var> {
        if g.shape(x).len() != 4 || g.shape(x)[1] != 2 * CHANNELS {
            return Err(Error::validation(format!("pair batch {:?}", g.shape(x))));
        }
        let h = self.conv(g, b, x, "reg.conv1", 2)?;
        let h = g.relu(h);
        let h = self.conv(g, b, h, "reg.conv2", 2)?;
        let h = g.relu(h);
        let h = g.spatial_mean(h)?;
        let h = self.dense(g, b, h, "reg.fc1")?;
        let h = g.relu(h);
        self.dense(g, b, h, "reg.fc2")
    }

    fn cue_batch(&self, cues: &[&NormalCue]) -> Result<Tensor<f32>> {
        let s = self.arch.input_size;
        let mut data = Vec::with_capacity(cues.len() * s * s);
        for cue in cues {
            if (cue.height, cue.width) != (s, s) {
                return Err(Error::validation(format!(
                    "cue is {}x{}, model expects {s}x{s}",
                    cue.height, cue.width
                )));
            }
            data.extend(cue_input(cue).into_iter().map(|v| v as f32));
        }
        Tensor::new(vec![cues.len(), 1, s, s], data)
    }

    /// All heads for one cue.
    pub fn forward(&self, cue: &NormalCue) -> Result<ForwardOutput> {
        let mut g = Graph::<f32>::new();
        let b = self.bind(&mut g, false);
        let x = g.input(self.cue_batch(&[cue])?);
        let heads = self.cue_heads(&mut g, &b, x)?;
        let score = sigmoid(g.scalar(heads.cls_logit));
        Ok(ForwardOutput {
            features: g.value(heads.features).clone(),
            depth_logits: g.value(heads.depth_logits).clone(),
            material_logits: g.value(heads.material_logits).clone(),
            cls_score: score,
        })
    }

    /// Classifier scores in `(0, 1)`, one per cue.
    pub fn classify(&self, cues: &[NormalCue]) -> Result<Vec<f64>> {
        if cues.is_empty() {
            return Ok(Vec::new());
        }
        let refs: Vec<&NormalCue> = cues.iter().collect();
        let mut g = Graph::<f32>::new();
        let b = self.bind(&mut g, false);
        let x = g.input(self.cue_batch(&refs)?);
        let heads = self.cue_heads(&mut g, &b, x)?;
        Ok(g.value(heads.cls_logit)
            .data
            .iter()
            .map(|&z| sigmoid(z as f64))
            .collect())
    }

    /// Depth-bin argmax per label pixel (0-based), one map per cue.
    pub fn predict_depth(&self, cues: &[NormalCue]) -> Result<Vec<Vec<u8>>> {
        let refs: Vec<&NormalCue> = cues.iter().collect();
        let mut g = Graph::<f32>::new();
        let b = self.bind(&mut g, false);
        let x = g.input(self.cue_batch(&refs)?);
        let heads = self.cue_heads(&mut g, &b, x)?;
        let logits = g.value(heads.depth_logits);
        let (c, hw) = (logits.shape[1], logits.shape[2] * logits.shape[3]);
        Ok((0..cues.len())
            .map(|n| {
                (0..hw)
                    .map(|p| {
                        (0..c)
                            .max_by(|&i, &j| {
                                let li = logits.data[(n * c + i) * hw + p];
                                let lj = logits.data[(n * c + j) * hw + p];
                                li.total_cmp(&lj).then(j.cmp(&i))
                            })
                            .unwrap_or(0) as u8
                    })
                    .collect()
            })
            .collect())
    }

    /// Raw regressor output for each contiguous frame pair.
    pub fn regress(&self, frames: &[ReflectionFrame]) -> Result<Vec<[f64; RESIDUAL_DIM]>> {
        if frames.len() < 2 {
            return Err(Error::validation("need at least 2 frames"));
        }
        let s = self.arch.input_size;
        let mut data = Vec::new();
        for pair in frames.windows(2) {
            if (pair[0].height, pair[0].width) != (s, s) {
                return Err(Error::validation(format!(
                    "frame is {}x{}, model expects {s}x{s}",
                    pair[0].height, pair[0].width
                )));
            }
            data.extend(
                pair_input(&pair[0], &pair[1])?
                    .into_iter()
                    .map(|v| v as f32),
            );
        }
        let m = frames.len() - 1;
        let mut g = Graph::<f32>::new();
        let b = self.bind(&mut g, false);
        let x = g.input(Tensor::new(vec![m, 2 * CHANNELS, s, s], data)?);
        let y = self.regressor(&mut g, &b, x)?;
        let out = &g.value(y).data;
        Ok((0..m)
            .map(|i| {
                let mut r = [0.0; RESIDUAL_DIM];
                for (j, v) in r.iter_mut().enumerate() {
                    *v = out[i * RESIDUAL_DIM + j] as f64;
                }
                r
            })
            .collect())
    }
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}
