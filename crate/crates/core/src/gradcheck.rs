//! Central finite-difference checks of the reverse-mode graph in `f64`.
//!
//! A scalar probe loss `Σ out ⊙ P` with a fixed random `P` turns any
//! operation into a scalar function, so every output element contributes a
//! distinct weight to the checked gradient.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::model::Model;
use crate::tensor::{Graph, Tensor, Var};

pub const STEP: f64 = 1e-5;
/// Denominator floor so near-zero gradients are judged on absolute error.
pub const REL_FLOOR: f64 = 1e-3;

/// `|a − n| / max(|a|, |n|, REL_FLOOR)`.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

#[derive(Clone, Debug)]
pub struct GradReport {
    pub checked: usize,
    pub max_rel_err: f64,
    /// Where the worst error occurred, e.g. `input 1 [17]`.
    pub worst: String,
}

impl GradReport {
    fn new() -> Self {
        Self {
            checked: 0,
            max_rel_err: 0.0,
            worst: String::new(),
        }
    }

    fn record(&mut self, analytic: f64, numeric: f64, at: impl FnOnce() -> String) {
        self.checked += 1;
        let e = rel_err(analytic, numeric);
        if e > self.max_rel_err || self.checked == 1 {
            self.max_rel_err = self.max_rel_err.max(e);
            self.worst = format!("{} (analytic {analytic:e}, numeric {numeric:e})", at());
        }
    }
}

/// Uniform random tensor in `[lo, hi)`.
pub fn random_tensor(shape: &[usize], lo: f64, hi: f64, seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).expect("shape matches")
}

fn probe_loss(g: &mut Graph<f64>, out: Var, probe_seed: u64) -> Result<Var> {
    let shape = g.value(out).shape().to_vec();
    if shape.is_empty() {
        return Ok(out);
    }
    let p = g.input(random_tensor(&shape, -1.0, 1.0, probe_seed));
    let prod = g.mul(out, p)?;
    Ok(g.sum(prod))
}

/// Checks d(probe loss)/d(input) for every element of every input.
pub fn check_op(
    inputs: &[Tensor<f64>],
    build: impl Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
) -> Result<GradReport> {
    let eval = |inputs: &[Tensor<f64>], track: bool| -> Result<(f64, Vec<Vec<f64>>)> {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs
            .iter()
            .map(|t| {
                let mut t = t.clone();
                t.set_requires_grad(track);
                g.input(t)
            })
            .collect();
        let out = build(&mut g, &vars)?;
        let loss = probe_loss(&mut g, out, 0x5EED)?;
        let value = g.value(loss).item();
        if !track {
            return Ok((value, Vec::new()));
        }
        g.backward(loss)?;
        let grads = vars
            .iter()
            .zip(inputs)
            .map(|(&v, t)| g.grad(v).map_or_else(|| vec![0.0; t.numel()], <[f64]>::to_vec))
            .collect();
        Ok((value, grads))
    };

    let (_, analytic) = eval(inputs, true)?;
    let mut report = GradReport::new();
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for k in 0..inputs.len() {
        for i in 0..inputs[k].numel() {
            let orig = work[k].data()[i];
            work[k].data_mut()[i] = orig + STEP;
            let (up, _) = eval(&work, false)?;
            work[k].data_mut()[i] = orig - STEP;
            let (down, _) = eval(&work, false)?;
            work[k].data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * STEP);
            report.record(analytic[k][i], numeric, || format!("input {k} [{i}]"));
        }
    }
    Ok(report)
}

/// Checks a whole network in training mode: the input image gradient and
/// every `stride`-th entry of every parameter tensor. Works on a copy, so the
/// caller's running statistics are untouched.
pub fn check_model(model: &Model<f64>, images: &Tensor<f64>, stride: usize) -> Result<GradReport> {
    let stride = stride.max(1);
    let mut model = model.clone();
    let loss_at = |model: &mut Model<f64>, x: &Tensor<f64>| -> Result<f64> {
        let mut g = Graph::new();
        let xv = g.input(x.clone());
        let bound = model.forward_train(&mut g, xv)?;
        let loss = probe_loss(&mut g, bound.output, 0xB0B)?;
        Ok(g.value(loss).item())
    };

    let mut g = Graph::new();
    let xv = g.input(images.clone().with_grad());
    let bound = model.forward_train(&mut g, xv)?;
    let loss = probe_loss(&mut g, bound.output, 0xB0B)?;
    g.backward(loss)?;
    let gx = g.grad(xv).map_or_else(|| vec![0.0; images.numel()], <[f64]>::to_vec);
    model.zero_grad();
    model.accumulate_grads(&g, &bound);
    let analytic: Vec<Vec<f64>> = model
        .params()
        .iter()
        .map(|p| p.grad().map_or_else(|| vec![0.0; p.numel()], <[f64]>::to_vec))
        .collect();
    let names: Vec<String> = model.named_params().map(|(n, _)| n.to_string()).collect();

    let mut report = GradReport::new();
    for (k, name) in names.iter().enumerate() {
        for i in (0..analytic[k].len()).step_by(stride) {
            let orig = model.params()[k].data()[i];
            model.params_mut()[k].data_mut()[i] = orig + STEP;
            let up = loss_at(&mut model, images)?;
            model.params_mut()[k].data_mut()[i] = orig - STEP;
            let down = loss_at(&mut model, images)?;
            model.params_mut()[k].data_mut()[i] = orig;
            report.record(analytic[k][i], (up - down) / (2.0 * STEP), || format!("{name} [{i}]"));
        }
    }
    let mut x = images.clone();
    for i in (0..images.numel()).step_by(stride) {
        let orig = x.data()[i];
        x.data_mut()[i] = orig + STEP;
        let up = loss_at(&mut model, &x)?;
        x.data_mut()[i] = orig - STEP;
        let down = loss_at(&mut model, &x)?;
        x.data_mut()[i] = orig;
        report.record(gx[i], (up - down) / (2.0 * STEP), || format!("image [{i}]"));
    }
    Ok(report)
}
