use log::debug;
use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use super::{corrupt_in_place, rng_for, LayerParams, Network, TrainConfig};
use crate::error::{Error, Result};

/// Gradient of a loss with respect to one dense layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Output of one denoising auto-encoder.
#[derive(Debug, Clone)]
pub struct PretrainedLayer {
    pub encoder: LayerParams,
    pub decoder: LayerParams,
    /// Mean per-row reconstruction loss for each epoch.
    pub losses: Vec<f64>,
}

/// Loss `J = (1/n) Σ_rows ½‖σ(W'σ(W x̃ + b) + b') − x‖²` and its gradients
/// for encoder and decoder.
pub fn reconstruction_loss_and_grads(
    encoder: &LayerParams,
    decoder: &LayerParams,
    clean: &Array2<f64>,
    corrupted: &Array2<f64>,
) -> (f64, Gradients, Gradients) {
    let n = clean.nrows() as f64;
    let hidden = encoder.forward_sigmoid(corrupted);
    let recon = decoder.forward_sigmoid(&hidden);
    let diff = &recon - clean;
    let loss = 0.5 * diff.iter().map(|d| d * d).sum::<f64>() / n;

    let d_out = &diff * &recon.mapv(|g| g * (1.0 - g)) / n;
    let dec = Gradients {
        weights: d_out.t().dot(&hidden),
        bias: d_out.sum_axis(Axis(0)),
    };
    let d_hidden = d_out.dot(&decoder.weights) * hidden.mapv(|h| h * (1.0 - h));
    let enc = Gradients {
        weights: d_hidden.t().dot(corrupted),
        bias: d_hidden.sum_axis(Axis(0)),
    };
    (loss, enc, dec)
}

/// Mean cross-entropy of the softmax network and gradients for every layer
/// (encoders first, softmax last).
pub fn classification_loss_and_grads(
    net: &Network,
    inputs: &Array2<f64>,
    labels: &[u8],
) -> (f64, Vec<Gradients>) {
    let n = inputs.nrows() as f64;
    let mut activations = Vec::with_capacity(net.encoders.len() + 1);
    activations.push(inputs.clone());
    for layer in &net.encoders {
        let a = layer.forward_sigmoid(activations.last().expect("input present"));
        activations.push(a);
    }
    let top = activations.last().expect("input present");
    let logits = net.softmax.affine(top);

    let mut loss = 0.0;
    let mut delta = Array2::<f64>::zeros(logits.raw_dim());
    for (r, (z, &y)) in logits.rows().into_iter().zip(labels).enumerate() {
        let p = super::softmax2([z[0], z[1]]);
        let y = usize::from(y);
        // log-sum-exp form keeps the loss finite for saturated logits
        let m = z[0].max(z[1]);
        let lse = m + ((z[0] - m).exp() + (z[1] - m).exp()).ln();
        loss += lse - z[y];
        delta[[r, 0]] = (p[0] - f64::from((y == 0) as u8)) / n;
        delta[[r, 1]] = (p[1] - f64::from((y == 1) as u8)) / n;
    }
    loss /= n;

    let mut grads = Vec::with_capacity(net.encoders.len() + 1);
    grads.push(Gradients {
        weights: delta.t().dot(top),
        bias: delta.sum_axis(Axis(0)),
    });
    let mut upstream = delta.dot(&net.softmax.weights);
    for (k, layer) in net.encoders.iter().enumerate().rev() {
        let a = &activations[k + 1];
        let dz = upstream * a.mapv(|h| h * (1.0 - h));
        grads.push(Gradients {
            weights: dz.t().dot(&activations[k]),
            bias: dz.sum_axis(Axis(0)),
        });
        upstream = dz.dot(&layer.weights);
    }
    grads.reverse();
    (loss, grads)
}

fn step(layer: &mut LayerParams, g: &Gradients, lr: f64) {
    layer.weights.scaled_add(-lr, &g.weights);
    layer.bias.scaled_add(-lr, &g.bias);
}

fn batch(rows: &Array2<f64>, order: &[usize]) -> Array2<f64> {
    rows.select(Axis(0), order)
}

/// Losses above this are treated as divergence even when finite.
const MAX_LOSS: f64 = 1e6;

fn check_loss(loss: f64, what: impl FnOnce() -> String) -> Result<()> {
    if loss.is_finite() && loss < MAX_LOSS {
        Ok(())
    } else {
        Err(Error::Divergence(format!("{} produced loss {loss}", what())))
    }
}

/// Train one denoising auto-encoder with `d_hidden` units.
pub fn dae_pretrain_layer(
    inputs: &Array2<f64>,
    d_hidden: usize,
    cfg: &TrainConfig,
) -> Result<PretrainedLayer> {
    cfg.validate()?;
    let mut rng = rng_for(cfg.seed, 0);
    train_dae(inputs, d_hidden, cfg, &mut rng, 0)
}

fn train_dae(
    inputs: &Array2<f64>,
    d_hidden: usize,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
    layer_no: usize,
) -> Result<PretrainedLayer> {
    if inputs.nrows() == 0 {
        return Err(Error::Empty("no rows to pre-train on".into()));
    }
    let d_in = inputs.ncols();
    let mut encoder = LayerParams::glorot(d_in, d_hidden, rng);
    let mut decoder = LayerParams::glorot(d_hidden, d_in, rng);
    let mut order: Vec<usize> = (0..inputs.nrows()).collect();
    let mut losses = Vec::with_capacity(cfg.pretrain_epochs);
    for epoch in 0..cfg.pretrain_epochs {
        order.shuffle(rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let clean = batch(inputs, chunk);
            let mut noisy = clean.clone();
            corrupt_in_place(
                noisy.as_slice_mut().expect("selected rows are contiguous"),
                cfg.corruption,
                rng,
            );
            let (loss, g_enc, g_dec) =
                reconstruction_loss_and_grads(&encoder, &decoder, &clean, &noisy);
            check_loss(loss, || format!("pre-training layer {layer_no} epoch {epoch}"))?;
            total += loss * chunk.len() as f64;
            step(&mut encoder, &g_enc, cfg.pretrain_lr);
            step(&mut decoder, &g_dec, cfg.pretrain_lr);
        }
        let mean = total / inputs.nrows() as f64;
        debug!("dae layer {layer_no} epoch {epoch}: loss {mean:.6}");
        losses.push(mean);
    }
    if !(encoder.is_finite() && decoder.is_finite()) {
        return Err(Error::Divergence(format!(
            "layer {layer_no} parameters became non-finite"
        )));
    }
    Ok(PretrainedLayer {
        encoder,
        decoder,
        losses,
    })
}

/// Greedy layer-wise pre-training. Layer `k` sees the clean hidden
/// representation of layers `0..k`; decoders are kept only in the returned
/// records so callers can inspect them.
pub fn pretrain_stack(
    inputs: &Array2<f64>,
    sizes: &[usize],
    cfg: &TrainConfig,
) -> Result<Vec<PretrainedLayer>> {
    cfg.validate()?;
    if sizes.is_empty() {
        return Err(Error::InvalidArgument("empty layer size list".into()));
    }
    let mut layers = Vec::with_capacity(sizes.len());
    let mut current = inputs.clone();
    for (k, &size) in sizes.iter().enumerate() {
        let mut rng = rng_for(cfg.seed, k as u64);
        let layer = train_dae(&current, size, cfg, &mut rng, k)?;
        if k + 1 < sizes.len() {
            current = layer.encoder.forward_sigmoid(&current);
        }
        layers.push(layer);
    }
    Ok(layers)
}

/// Add a softmax layer on top of `encoders` and train everything jointly
/// on cross-entropy. Returns the network and the per-epoch mean loss.
pub fn finetune(
    encoders: Vec<LayerParams>,
    inputs: &Array2<f64>,
    labels: &[u8],
    cfg: &TrainConfig,
) -> Result<(Network, Vec<f64>)> {
    cfg.validate()?;
    if labels.len() != inputs.nrows() {
        return Err(Error::InvalidArgument(format!(
            "{} labels for {} rows",
            labels.len(),
            inputs.nrows()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y > 1) {
        return Err(Error::InvalidArgument(format!("label {bad} is not 0 or 1")));
    }
    let positives = labels.iter().filter(|&&y| y == 1).count();
    if positives == 0 || positives == labels.len() {
        return Err(Error::DegenerateLabels(format!(
            "all {} rows belong to one class",
            labels.len()
        )));
    }
    let top = encoders.last().map_or(inputs.ncols(), LayerParams::d_out);
    if let Some(first) = encoders.first() {
        if first.d_in() != inputs.ncols() {
            return Err(Error::WidthMismatch {
                expected: first.d_in(),
                found: inputs.ncols(),
            });
        }
    }
    let mut rng = rng_for(cfg.seed, 0x5EED_F17E);
    let mut net = Network {
        encoders,
        softmax: LayerParams::glorot(top, 2, &mut rng),
    };
    let mut order: Vec<usize> = (0..inputs.nrows()).collect();
    let mut losses = Vec::with_capacity(cfg.finetune_epochs);
    let mut lr = cfg.finetune_lr;
    for epoch in 0..cfg.finetune_epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let x = batch(inputs, chunk);
            let y: Vec<u8> = chunk.iter().map(|&i| labels[i]).collect();
            let (loss, grads) = classification_loss_and_grads(&net, &x, &y);
            check_loss(loss, || format!("fine-tuning epoch {epoch}"))?;
            total += loss * chunk.len() as f64;
            let (last, rest) = grads.split_last().expect("softmax gradient present");
            for (layer, g) in net.encoders.iter_mut().zip(rest) {
                step(layer, g, lr);
            }
            step(&mut net.softmax, last, lr);
        }
        let mean = total / inputs.nrows() as f64;
        debug!("fine-tune epoch {epoch}: loss {mean:.6} lr {lr:.5}");
        losses.push(mean);
        lr *= cfg.finetune_lr_decay;
    }
    Ok((net, losses))
}
