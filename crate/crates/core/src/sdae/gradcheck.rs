//! Finite-difference verification of the back-propagated gradients.

use ndarray::Array2;
use rand::Rng;

use super::train::{classification_loss_and_grads, reconstruction_loss_and_grads, Gradients};
use super::{corrupt_in_place, rng_for, LayerParams, Network};

#[derive(Debug, Clone, PartialEq)]
pub struct GradFailure {
    pub loss: &'static str,
    /// Layer number and whether the entry is a weight or a bias.
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub reconstruction_max_rel_err: f64,
    pub cross_entropy_max_rel_err: f64,
    pub n_checked: usize,
    pub failures: Vec<GradFailure>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Gradients below this magnitude are compared absolutely.
const REL_FLOOR: f64 = 1e-6;

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(REL_FLOOR)
}

/// Compare analytic and central-difference gradients on a random network.
///
/// `sizes = [d_in, h_1, ..., h_k, 2]`. The reconstruction loss is checked on
/// a DAE over the first hidden layer, the cross-entropy loss on the whole
/// softmax network. Weights are uniform in ±1 so gradients are not tiny.
pub fn gradient_check(
    sizes: &[usize],
    n_samples: usize,
    step: f64,
    tolerance: f64,
    seed: u64,
) -> GradCheckReport {
    assert!(sizes.len() >= 3, "need input, at least one hidden layer, and output");
    assert_eq!(*sizes.last().unwrap(), 2, "output layer must have 2 units");
    let mut rng = rng_for(seed, 0x6AD);
    let mut rand_layer = |d_in: usize, d_out: usize| {
        let mut l = LayerParams::zeros(d_in, d_out);
        l.weights.mapv_inplace(|_| rng.random_range(-1.0..1.0));
        l.bias.mapv_inplace(|_| rng.random_range(-0.5..0.5));
        l
    };
    let hidden = &sizes[1..sizes.len() - 1];
    let encoders: Vec<LayerParams> = std::iter::once(sizes[0])
        .chain(hidden.iter().copied())
        .collect::<Vec<_>>()
        .windows(2)
        .map(|w| rand_layer(w[0], w[1]))
        .collect();
    let softmax = rand_layer(*hidden.last().unwrap(), 2);
    let decoder = rand_layer(hidden[0], sizes[0]);
    let net = Network { encoders, softmax };

    let mut rng = rng_for(seed, 0xDA7A);
    let x = Array2::from_shape_fn((n_samples, sizes[0]), |_| rng.random::<f64>());
    let labels: Vec<u8> = (0..n_samples).map(|i| (i % 2) as u8).collect();
    let mut noisy = x.clone();
    corrupt_in_place(noisy.as_slice_mut().unwrap(), 0.3, &mut rng);

    let mut failures = Vec::new();
    let mut n_checked = 0;

    // reconstruction: encoder 0 and its decoder
    let dae = [net.encoders[0].clone(), decoder];
    let names = ["encoder", "decoder"];
    let (_, g_enc, g_dec) = reconstruction_loss_and_grads(&dae[0], &dae[1], &x, &noisy);
    let analytic = [g_enc, g_dec];
    let mut recon_max = 0.0f64;
    for which in 0..2 {
        let count = dae[which].weights.len() + dae[which].bias.len();
        for flat in 0..count {
            let numeric = central_difference(step, |delta| {
                let mut probe = dae.clone();
                nudge(&mut probe[which], flat, delta);
                reconstruction_loss_and_grads(&probe[0], &probe[1], &x, &noisy).0
            });
            let a = param_at(&analytic[which], flat);
            let e = rel_err(a, numeric);
            recon_max = recon_max.max(e);
            n_checked += 1;
            if e >= tolerance {
                failures.push(failure("reconstruction", names[which], &dae[which], flat, a, numeric, e));
            }
        }
    }

    // cross-entropy: every layer of the network
    let (_, grads) = classification_loss_and_grads(&net, &x, &labels);
    let mut ce_max = 0.0f64;
    let n_layers = net.encoders.len() + 1;
    for k in 0..n_layers {
        let count = layer_ref(&net, k).weights.len() + layer_ref(&net, k).bias.len();
        for flat in 0..count {
            let numeric = central_difference(step, |delta| {
                let mut probe = net.clone();
                nudge(layer_mut(&mut probe, k), flat, delta);
                classification_loss_and_grads(&probe, &x, &labels).0
            });
            let a = param_at(&grads[k], flat);
            let e = rel_err(a, numeric);
            ce_max = ce_max.max(e);
            n_checked += 1;
            if e >= tolerance {
                let name = format!("layer{k}");
                failures.push(failure("cross-entropy", &name, layer_ref(&net, k), flat, a, numeric, e));
            }
        }
    }

    GradCheckReport {
        reconstruction_max_rel_err: recon_max,
        cross_entropy_max_rel_err: ce_max,
        n_checked,
        failures,
    }
}

fn layer_ref(net: &Network, k: usize) -> &LayerParams {
    net.encoders.get(k).unwrap_or(&net.softmax)
}

fn layer_mut(net: &mut Network, k: usize) -> &mut LayerParams {
    if k < net.encoders.len() {
        &mut net.encoders[k]
    } else {
        &mut net.softmax
    }
}

fn central_difference(h: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
    let plus = f(h);
    let minus = f(-h);
    (plus - minus) / (2.0 * h)
}

/// Flat parameter order: weights row-major, then biases.
fn nudge(layer: &mut LayerParams, flat: usize, delta: f64) {
    let nw = layer.weights.len();
    if flat < nw {
        let cols = layer.weights.ncols();
        layer.weights[[flat / cols, flat % cols]] += delta;
    } else {
        layer.bias[flat - nw] += delta;
    }
}

fn param_at(g: &Gradients, flat: usize) -> f64 {
    let nw = g.weights.len();
    if flat < nw {
        let cols = g.weights.ncols();
        g.weights[[flat / cols, flat % cols]]
    } else {
        g.bias[flat - nw]
    }
}

fn failure(
    loss: &'static str,
    name: &str,
    layer: &LayerParams,
    flat: usize,
    analytic: f64,
    numeric: f64,
    rel_err: f64,
) -> GradFailure {
    let nw = layer.weights.len();
    let param = if flat < nw {
        format!("{name}.weights")
    } else {
        format!("{name}.bias")
    };
    GradFailure {
        loss,
        param,
        index: if flat < nw { flat } else { flat - nw },
        analytic,
        numeric,
        rel_err,
    }
}
