use crate::autodiff::{cst, Float, Graph, ParamStore, Tensor, Var};
use crate::corpus::GrayImage;
use crate::{Error, Result};

use super::{linear, EncoderInput, Model};

/// Graph handles for one encoded image pair.
#[derive(Debug, Clone, Copy)]
pub struct VisualFeatures {
    /// Transformer memory input, `[memory_len, d_model]`.
    pub patch_seq: Var,
    /// `V_avg`: both per-image pooled vectors side by side, `[1, 2·d_visual]`.
    pub pooled_pair: Var,
}

impl Model {
    /// An image as a `[1, S, S]` tensor with values in [0, 1].
    pub fn image_tensor<T: Float>(&self, image: &GrayImage) -> Result<Tensor<T>> {
        let s = self.config.image_size;
        if image.width != s || image.height != s {
            return Err(Error::shape(format!(
                "image is {}x{}, model expects {s}x{s}",
                image.width, image.height
            )));
        }
        let data = image.pixels.iter().map(|&p| cst::<T>(p as f64 / 255.0)).collect();
        Tensor::new(&[1, s, s], data)
    }

    /// Runs one image through the conv stack; returns the `[P, d_visual]`
    /// patch rows and the `[d_visual]` pooled vector.
    fn encode_one<T: Float>(&self, g: &mut Graph<T>, s: &ParamStore<T>, image: Var) -> Result<(Var, Var)> {
        let mut x = image;
        for &(w, b) in &self.conv {
            let (w, b) = (g.param(s, w), g.param(s, b));
            let y = g.conv2d(x, w, Some(b), 2, 1)?;
            x = g.relu(y);
        }
        let (dv, p) = (self.config.d_visual, self.config.patches());
        let flat = g.reshape(x, &[dv, p])?;
        let patches = g.transpose(flat)?;
        let summed = g.sum_axis(flat, 1)?;
        let pooled = g.scale(summed, 1.0 / p as f64);
        Ok((patches, pooled))
    }

    /// Encodes an image pair through the shared conv stack. Both images pass
    /// through the same parameter nodes.
    pub fn encode_images<T: Float>(
        &self,
        g: &mut Graph<T>,
        s: &ParamStore<T>,
        pair: &[GrayImage; 2],
    ) -> Result<VisualFeatures> {
        if pair[0].width != pair[1].width || pair[0].height != pair[1].height {
            return Err(Error::shape("image pair sizes differ"));
        }
        let a = self.image_tensor(&pair[0])?;
        let b = self.image_tensor(&pair[1])?;
        let (a, b) = (g.constant(a), g.constant(b));
        self.encode_tensors(g, s, a, b)
    }

    pub(crate) fn encode_tensors<T: Float>(
        &self,
        g: &mut Graph<T>,
        s: &ParamStore<T>,
        a: Var,
        b: Var,
    ) -> Result<VisualFeatures> {
        let (pa, va) = self.encode_one(g, s, a)?;
        let (pb, vb) = self.encode_one(g, s, b)?;
        let pooled = g.concat(&[va, vb], 0)?;
        let pooled_pair = g.reshape(pooled, &[1, 2 * self.config.d_visual])?;
        let mem_in = match self.config.encoder_input {
            EncoderInput::Patches => g.concat(&[pa, pb], 0)?,
            EncoderInput::Pooled => pooled_pair,
        };
        let patch_seq = linear(g, s, mem_in, self.memory_proj)?;
        Ok(VisualFeatures { patch_seq, pooled_pair })
    }

    /// Topic logits `[1, K]` from `V_avg`.
    pub fn kmve_logits<T: Float>(&self, g: &mut Graph<T>, s: &ParamStore<T>, pooled_pair: Var) -> Result<Var> {
        linear(g, s, pooled_pair, self.kmve)
    }

    /// Cross-entropy of the topic prediction against the one-hot pseudo-label.
    pub fn kmve_loss<T: Float>(
        &self,
        g: &mut Graph<T>,
        s: &ParamStore<T>,
        pooled_pair: Var,
        topic: usize,
    ) -> Result<Var> {
        let k = self.config.k_topics;
        if topic >= k {
            return Err(Error::Label { label: topic, k });
        }
        let logits = self.kmve_logits(g, s, pooled_pair)?;
        g.cross_entropy(logits, &[topic])
    }
}
