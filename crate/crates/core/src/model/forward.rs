use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{Dense, DropoutScope, MissingImage, Model, Parameters};
use crate::corpus::{CleanItem, ImageTensor};
use crate::error::{Error, Result};
use crate::loss::{weighted_batch_loss, Huber};

pub fn silu(z: f64) -> f64 {
    z / (1.0 + (-z).exp())
}

pub fn silu_grad(z: f64) -> f64 {
    let s = 1.0 / (1.0 + (-z).exp());
    s * (1.0 + z * (1.0 - s))
}

struct TextTrace {
    pooled: Vec<f64>,
    pre: Vec<f64>,
    out: Vec<f64>,
}

struct ImageTrace {
    input: Vec<f64>,
    pres: Vec<Vec<f64>>,
    acts: Vec<Vec<f64>>,
}

struct HeadTrace {
    fused: Vec<f64>,
    fused_mask: Option<Vec<f64>>,
    pres: Vec<Vec<f64>>,
    acts: Vec<Vec<f64>>,
    masks: Vec<Option<Vec<f64>>>,
    output: f64,
}

struct SampleTrace {
    text: TextTrace,
    image: Option<ImageTrace>,
    head: HeadTrace,
}

/// Result of one forward/backward pass over a batch.
#[derive(Debug, Clone)]
pub struct BatchGradient {
    pub loss: f64,
    pub preds: Vec<f64>,
    pub grads: Parameters,
}

fn dropout_mask(len: usize, p: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let keep = 1.0 / (1.0 - p);
    (0..len)
        .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
        .collect()
}

/// `grad.weight += g (x) x`, `grad.bias += g`.
fn accumulate_dense(grad: &mut Dense, g: &[f64], x: &[f64]) {
    for ((row, b), &gi) in grad.weight.chunks_exact_mut(grad.inputs).zip(&mut grad.bias).zip(g) {
        *b += gi;
        if gi != 0.0 {
            row.iter_mut().zip(x).for_each(|(w, &xi)| *w += gi * xi);
        }
    }
}

/// `W^T g`.
fn backprop_input(layer: &Dense, g: &[f64]) -> Vec<f64> {
    let mut dx = vec![0.0; layer.inputs];
    for (row, &gi) in layer.weight.chunks_exact(layer.inputs).zip(g) {
        dx.iter_mut().zip(row).for_each(|(d, &w)| *d += w * gi);
    }
    dx
}

impl Model {
    fn check_tokens(&self, ids: &[u32]) -> Result<()> {
        match ids.iter().find(|&&id| id as usize >= self.config.vocab_size) {
            Some(&id) => Err(Error::TokenOutOfRange {
                id,
                vocab_size: self.config.vocab_size,
            }),
            None => Ok(()),
        }
    }

    fn check_image(&self, image: &ImageTensor) -> Result<()> {
        let [c, h, w] = self.config.image_input;
        if image.shape() != (c, h, w) || image.data.len() != c * h * w {
            return Err(Error::Shape {
                expected: format!("{c}x{h}x{w}"),
                actual: format!(
                    "{}x{}x{} ({} values)",
                    image.channels,
                    image.height,
                    image.width,
                    image.data.len()
                ),
            });
        }
        Ok(())
    }

    fn text_forward(&self, ids: &[u32]) -> Result<TextTrace> {
        self.check_tokens(ids)?;
        let d = self.config.text_embed_dim;
        let mut pooled = vec![0.0; d];
        let proj = &self.params.text_proj;
        let mut pre = Vec::with_capacity(d);
        if ids.is_empty() {
            // zero pool: the projection reduces to its bias
            pre.extend_from_slice(&proj.bias);
        } else {
            for &id in ids {
                let row = &self.params.embedding[id as usize * d..(id as usize + 1) * d];
                pooled.iter_mut().zip(row).for_each(|(p, v)| *p += v);
            }
            let inv = 1.0 / ids.len() as f64;
            pooled.iter_mut().for_each(|p| *p *= inv);
            proj.forward(&pooled, &mut pre);
        }
        let out = pre.iter().map(|&z| silu(z)).collect();
        Ok(TextTrace { pooled, pre, out })
    }

    fn image_forward(&self, image: &ImageTensor) -> Result<ImageTrace> {
        self.check_image(image)?;
        let input: Vec<f64> = image.data.iter().map(|&v| f64::from(v)).collect();
        let mut pres = Vec::with_capacity(self.params.image_layers.len());
        let mut acts: Vec<Vec<f64>> = Vec::with_capacity(self.params.image_layers.len());
        for layer in &self.params.image_layers {
            let mut z = Vec::new();
            layer.forward(acts.last().unwrap_or(&input), &mut z);
            acts.push(z.iter().map(|&v| silu(v)).collect());
            pres.push(z);
        }
        Ok(ImageTrace { input, pres, acts })
    }

    fn missing_image_embedding(&self) -> Vec<f64> {
        match self.config.missing_image {
            MissingImage::Learned => self.params.placeholder.clone(),
            MissingImage::Zero => vec![0.0; self.config.image_embed_dim],
        }
    }

    fn head_forward(&self, text: &[f64], image: &[f64], mut dropout: Option<&mut ChaCha8Rng>) -> HeadTrace {
        let p = self.config.dropout;
        let active = p > 0.0 && dropout.is_some();
        let mut fused: Vec<f64> = text.iter().chain(image).copied().collect();
        let mut fused_mask = None;
        if active && self.config.dropout_scope == DropoutScope::HeadAndFusion {
            let mask = dropout_mask(fused.len(), p, dropout.as_deref_mut().expect("active"));
            fused.iter_mut().zip(&mask).for_each(|(v, m)| *v *= m);
            fused_mask = Some(mask);
        }

        let n_hidden = self.params.head.len() - 1;
        let mut pres = Vec::with_capacity(n_hidden);
        let mut acts: Vec<Vec<f64>> = Vec::with_capacity(n_hidden);
        let mut masks = Vec::with_capacity(n_hidden);
        let mut z = Vec::new();
        for layer in &self.params.head[..n_hidden] {
            layer.forward(acts.last().unwrap_or(&fused), &mut z);
            let mut a: Vec<f64> = z.iter().map(|&v| silu(v)).collect();
            let mask = if active {
                let m = dropout_mask(a.len(), p, dropout.as_deref_mut().expect("active"));
                a.iter_mut().zip(&m).for_each(|(v, mv)| *v *= mv);
                Some(m)
            } else {
                None
            };
            pres.push(std::mem::take(&mut z));
            acts.push(a);
            masks.push(mask);
        }
        self.params.head[n_hidden].forward(acts.last().unwrap_or(&fused), &mut z);
        HeadTrace {
            fused,
            fused_mask,
            pres,
            acts,
            masks,
            output: z[0],
        }
    }

    fn sample_forward(&self, item: &CleanItem, dropout: Option<&mut ChaCha8Rng>) -> Result<SampleTrace> {
        let text = self.text_forward(&item.token_ids)?;
        let image = item.image.as_ref().map(|img| self.image_forward(img)).transpose()?;
        let image_vec = match &image {
            Some(trace) => trace.acts.last().expect("image encoder has layers").clone(),
            None => self.missing_image_embedding(),
        };
        let head = self.head_forward(&text.out, &image_vec, dropout);
        Ok(SampleTrace { text, image, head })
    }

    /// Text embedding (length `text_embed_dim`).
    pub fn encode_text(&self, token_ids: &[u32]) -> Result<Vec<f64>> {
        Ok(self.text_forward(token_ids)?.out)
    }

    /// Image embedding (length `image_embed_dim`).
    pub fn encode_image(&self, image: &ImageTensor) -> Result<Vec<f64>> {
        Ok(self.image_forward(image)?.acts.pop().expect("image encoder has layers"))
    }

    /// Head output for precomputed embeddings. A missing image embedding is
    /// replaced by the placeholder. Dropout is applied only when an RNG is
    /// supplied.
    pub fn predict(&self, text: &[f64], image: Option<&[f64]>, dropout: Option<&mut ChaCha8Rng>) -> Result<f64> {
        let (d, e) = (self.config.text_embed_dim, self.config.image_embed_dim);
        if text.len() != d {
            return Err(Error::Shape {
                expected: format!("text embedding of {d}"),
                actual: text.len().to_string(),
            });
        }
        let missing;
        let image = match image {
            Some(v) if v.len() != e => {
                return Err(Error::Shape {
                    expected: format!("image embedding of {e}"),
                    actual: v.len().to_string(),
                })
            }
            Some(v) => v,
            None => {
                missing = self.missing_image_embedding();
                &missing
            }
        };
        Ok(self.head_forward(text, image, dropout).output)
    }

    /// Deterministic prediction for one item (dropout off).
    pub fn predict_item(&self, item: &CleanItem) -> Result<f64> {
        let out = self.sample_forward(item, None)?.head.output;
        if !out.is_finite() {
            return Err(Error::NonFinite {
                context: format!("prediction for item {}", item.item_id),
            });
        }
        Ok(out)
    }

    /// Weighted Huber batch loss and its gradient with respect to every
    /// parameter. Dropout masks are drawn from `dropout` when given.
    pub fn loss_and_grad(
        &self,
        batch: &[&CleanItem],
        weights: &[f64],
        huber: &Huber,
        mut dropout: Option<&mut ChaCha8Rng>,
    ) -> Result<BatchGradient> {
        if batch.is_empty() {
            return Err(Error::Empty("batch"));
        }
        if weights.len() != batch.len() {
            return Err(Error::LengthMismatch(format!(
                "{} items vs {} weights",
                batch.len(),
                weights.len()
            )));
        }
        let traces = batch
            .iter()
            .map(|item| self.sample_forward(item, dropout.as_deref_mut()))
            .collect::<Result<Vec<_>>>()?;
        let preds: Vec<f64> = traces.iter().map(|t| t.head.output).collect();
        let targets: Vec<f64> = batch.iter().map(|i| i.average_rating).collect();
        let loss = weighted_batch_loss(&preds, &targets, weights, huber)?;
        if !loss.is_finite() {
            let ids: Vec<&str> = batch.iter().map(|i| i.item_id.as_str()).collect();
            return Err(Error::NonFinite {
                context: format!("batch loss (preds {preds:?}, items {ids:?})"),
            });
        }

        let mut grads = Parameters::zeros(&self.config);
        let scale = 1.0 / batch.len() as f64;
        for ((trace, item), (&w, (&pred, &target))) in traces
            .iter()
            .zip(batch)
            .zip(weights.iter().zip(preds.iter().zip(&targets)))
        {
            let d_out = w * huber.grad(pred, target) * scale;
            if d_out != 0.0 {
                self.backward_sample(trace, item, d_out, &mut grads);
            }
        }
        if !grads.all_finite() {
            return Err(Error::NonFinite {
                context: "parameter gradients".into(),
            });
        }
        Ok(BatchGradient { loss, preds, grads })
    }

    fn backward_sample(&self, trace: &SampleTrace, item: &CleanItem, d_out: f64, grads: &mut Parameters) {
        let params = &self.params;
        let head = &trace.head;
        let n_hidden = params.head.len() - 1;

        let mut g = vec![d_out];
        for k in (0..=n_hidden).rev() {
            let input = if k == 0 { &head.fused } else { &head.acts[k - 1] };
            accumulate_dense(&mut grads.head[k], &g, input);
            let mut dx = backprop_input(&params.head[k], &g);
            if k > 0 {
                if let Some(mask) = &head.masks[k - 1] {
                    dx.iter_mut().zip(mask).for_each(|(d, m)| *d *= m);
                }
                dx.iter_mut()
                    .zip(&head.pres[k - 1])
                    .for_each(|(d, &z)| *d *= silu_grad(z));
            } else if let Some(mask) = &head.fused_mask {
                dx.iter_mut().zip(mask).for_each(|(d, m)| *d *= m);
            }
            g = dx;
        }
        let (d_text, d_image) = g.split_at(self.config.text_embed_dim);

        match &trace.image {
            Some(img) => {
                let last = params.image_layers.len() - 1;
                let mut g: Vec<f64> = d_image
                    .iter()
                    .zip(&img.pres[last])
                    .map(|(d, &z)| d * silu_grad(z))
                    .collect();
                for k in (0..=last).rev() {
                    let input = if k == 0 { &img.input } else { &img.acts[k - 1] };
                    accumulate_dense(&mut grads.image_layers[k], &g, input);
                    if k > 0 {
                        g = backprop_input(&params.image_layers[k], &g);
                        g.iter_mut()
                            .zip(&img.pres[k - 1])
                            .for_each(|(d, &z)| *d *= silu_grad(z));
                    }
                }
            }
            None if self.config.missing_image == MissingImage::Learned => {
                grads.placeholder.iter_mut().zip(d_image).for_each(|(p, d)| *p += d);
            }
            None => {}
        }

        let text = &trace.text;
        let g: Vec<f64> = d_text.iter().zip(&text.pre).map(|(d, &z)| d * silu_grad(z)).collect();
        accumulate_dense(&mut grads.text_proj, &g, &text.pooled);
        if !item.token_ids.is_empty() {
            let d_pooled = backprop_input(&params.text_proj, &g);
            let d = self.config.text_embed_dim;
            let inv = 1.0 / item.token_ids.len() as f64;
            for &id in &item.token_ids {
                let row = &mut grads.embedding[id as usize * d..(id as usize + 1) * d];
                row.iter_mut().zip(&d_pooled).for_each(|(r, g)| *r += g * inv);
            }
        }
    }
}
