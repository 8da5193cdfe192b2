#![allow(dead_code)]

use mitl::tensor::{Graph, Tensor, Var};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(r: &mut impl Rng, shape: &[usize], scale: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| r.random_range(-scale..scale))
}

/// Norm-wise relative error `|a - n| / max(|a|, |n|)`, zero when both vanish.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic.iter().zip(numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
    let na: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn: f64 = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
    let denom = na.max(nn);
    if denom < 1e-12 {
        diff
    } else {
        diff / denom
    }
}

/// Gradient norm below which central differences with a 1e-5 step are
/// dominated by round-off. Batch norm in train mode makes some gradients
/// vanish exactly (a shift before a normalized layer cancels), so the
/// denominator never drops below it.
pub const MODEL_GRAD_FLOOR: f64 = 1e-7;

/// `relative_error` with the denominator clamped from below.
pub fn relative_error_floored(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    let diff: f64 = analytic.iter().zip(numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
    let na: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn: f64 = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
    diff / na.max(nn).max(floor)
}

/// Central finite differences of a scalar function of several tensors.
pub fn numeric_gradients(inputs: &[Tensor<f64>], eps: f64, loss: &dyn Fn(&[Tensor<f64>]) -> f64) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(inputs.len());
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for t in 0..inputs.len() {
        let mut g = vec![0.0; inputs[t].numel()];
        for i in 0..inputs[t].numel() {
            let orig = work[t].data()[i];
            work[t].data_mut()[i] = orig + eps;
            let up = loss(&work);
            work[t].data_mut()[i] = orig - eps;
            let down = loss(&work);
            work[t].data_mut()[i] = orig;
            g[i] = (up - down) / (2.0 * eps);
        }
        out.push(g);
    }
    out
}

/// Build the graph with every input as a parameter, run backward and return
/// the analytic gradient of each input.
pub fn analytic_gradients(inputs: &[Tensor<f64>], build: &dyn Fn(&mut Graph<f64>, &[Var]) -> Var) -> Vec<Vec<f64>> {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let loss = build(&mut g, &vars);
    g.backward(loss).unwrap();
    vars.iter().map(|&v| g.grad(v).unwrap().to_vec()).collect()
}

/// Worst norm-wise relative error over all inputs.
pub fn gradient_check(inputs: &[Tensor<f64>], eps: f64, build: &dyn Fn(&mut Graph<f64>, &[Var]) -> Var) -> f64 {
    let analytic = analytic_gradients(inputs, build);
    let numeric = numeric_gradients(inputs, eps, &|ts| {
        let mut g = Graph::new();
        let vars: Vec<Var> = ts.iter().map(|t| g.constant(t.clone())).collect();
        let l = build(&mut g, &vars);
        g.value(l).data()[0]
    });
    analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| relative_error(a, n))
        .fold(0.0, f64::max)
}

/// `sum(out * weights)`: a scalar projection that exercises every output.
pub fn project(g: &mut Graph<f64>, out: Var, seed: u64) -> Var {
    let mut r = rng(seed);
    let shape = g.value(out).shape().to_vec();
    let w = g.constant(random_tensor(&mut r, &shape, 1.0));
    let prod = g.mul(out, w).unwrap();
    g.sum(prod)
}

/// A network small enough for finite differences over every parameter.
pub fn tiny_spec(n_classes: usize) -> mitl::model::ArchitectureSpec {
    let mut s = mitl::model::ArchitectureSpec::eegnet(3, 16, n_classes, 16.0);
    s.f1 = 2;
    s.depth_multiplier = 2;
    s.f2 = 3;
    s.temporal_kernel_len = 3;
    s.separable_kernel_len = 3;
    s.pool1 = 2;
    s.pool2 = 2;
    s.dropout_rate = 0.0;
    s
}

fn model_loss(
    model: &mitl::model::Eegnet,
    params: &mitl::tensor::ParamStore<f64>,
    x: &Tensor<f64>,
    labels: &[usize],
    train: bool,
) -> f64 {
    let mut g = Graph::new();
    let fwd = model.forward(&mut g, params, x.clone(), train, &mut rng(0)).unwrap();
    let l = g.softmax_cross_entropy(fwd.logits, labels).unwrap();
    g.value(l).data()[0]
}

/// Worst relative error between backprop and central differences of the
/// cross-entropy loss over every trainable parameter of a fresh network.
pub fn model_gradient_error(seed: u64, train: bool) -> f64 {
    let spec = tiny_spec(3);
    let mut r = rng(seed);
    let (p32, model) = mitl::model::build_model(&spec, &mut r).unwrap();
    let mut params = p32.cast::<f64>();
    // Perturb the batch-norm affine terms and running statistics away from
    // their identity initialization.
    let names: Vec<String> = params.names().map(str::to_string).collect();
    for n in &names {
        if n.contains(".bn") {
            let var = n.ends_with("running_var");
            for v in params.get_mut(n).unwrap().data_mut() {
                *v += r.random_range(-0.3..0.3);
                if var {
                    *v = v.abs() + 0.2;
                }
            }
        }
    }
    let x = random_tensor(&mut r, &[4, 1, spec.n_channels, spec.n_samples], 1.0);
    let labels: Vec<usize> = (0..4).map(|i| (i + seed as usize) % 3).collect();

    let mut g = Graph::new();
    let fwd = model.forward(&mut g, &params, x.clone(), train, &mut rng(0)).unwrap();
    let loss = g.softmax_cross_entropy(fwd.logits, &labels).unwrap();
    g.backward(loss).unwrap();

    let eps = 1e-5;
    let mut worst: f64 = 0.0;
    for (name, var) in &fwd.bound {
        let analytic = g.grad(*var).unwrap().to_vec();
        let mut numeric = vec![0.0; analytic.len()];
        for (i, slot) in numeric.iter_mut().enumerate() {
            let orig = params.get(name).unwrap().data()[i];
            params.get_mut(name).unwrap().data_mut()[i] = orig + eps;
            let up = model_loss(&model, &params, &x, &labels, train);
            params.get_mut(name).unwrap().data_mut()[i] = orig - eps;
            let down = model_loss(&model, &params, &x, &labels, train);
            params.get_mut(name).unwrap().data_mut()[i] = orig;
            *slot = (up - down) / (2.0 * eps);
        }
        let e = relative_error_floored(&analytic, &numeric, MODEL_GRAD_FLOOR);
        assert!(e.is_finite(), "{name}");
        worst = worst.max(e);
    }
    assert_eq!(fwd.bound.len(), params.trainable_names().len());
    worst
}

/// Chance-corrected agreement by direct tallying: observed agreement over
/// the share of the most frequent true class.
pub fn kappa_tally(pred: &[usize], truth: &[usize]) -> f64 {
    let mut tally = std::collections::HashMap::new();
    let mut agree = 0usize;
    for (p, t) in pred.iter().zip(truth) {
        *tally.entry(*t).or_insert(0usize) += 1;
        if p == t {
            agree += 1;
        }
    }
    let n = truth.len() as f64;
    let p0 = agree as f64 / n;
    let pe = *tally.values().max().unwrap() as f64 / n;
    (p0 - pe) / (1.0 - pe)
}

/// Random labels over `k` classes with at least two distinct true classes.
pub fn random_labels(r: &mut impl Rng, n: usize, k: usize) -> (Vec<usize>, Vec<usize>) {
    loop {
        let truth: Vec<usize> = (0..n).map(|_| r.random_range(0..k)).collect();
        if truth.iter().any(|&t| t != truth[0]) {
            let pred = (0..n).map(|_| r.random_range(0..k)).collect();
            return (pred, truth);
        }
    }
}

/// Small synthetic inventory for exercising the strategy runners quickly.
pub fn tiny_datasets(seed: u64, n_subjects: usize, n_classes: usize) -> mitl::data::Datasets {
    let mut cfg = mitl::data::SynthConfig::new(n_subjects, 5 * n_classes, 3, 32, n_classes);
    cfg.sample_rate_hz = 64.0;
    cfg.difficulty = 0.3;
    cfg.seed = seed;
    mitl::data::synth_generate(&cfg).unwrap()
}

pub fn tiny_plan(strategy: mitl::strategies::Strategy, seed: u64) -> mitl::strategies::TrainingPlan {
    let mut plan = mitl::strategies::TrainingPlan::new(strategy);
    plan.epochs = 2;
    plan.batch_size = 4;
    plan.seed = seed;
    plan.architecture.f1 = Some(2);
    plan.architecture.depth_multiplier = Some(1);
    plan.architecture.temporal_kernel_len = Some(5);
    plan.architecture.separable_kernel_len = Some(3);
    plan.architecture.pool1 = Some(2);
    plan.architecture.pool2 = Some(4);
    if strategy == mitl::strategies::Strategy::Frozen || strategy.is_transfer() {
        plan.freeze_depth = mitl::model::FreezeDepth::Block1;
    }
    plan
}

/// Freshly initialized checkpoint shaped like `datasets` for `n_classes`.
pub fn source_checkpoint(
    datasets: &mitl::data::Datasets,
    plan: &mitl::strategies::TrainingPlan,
    n_classes: usize,
    seed: u64,
) -> mitl::model::ModelCheckpoint {
    let first = datasets.values().next().unwrap();
    let spec = plan
        .architecture
        .resolve(first.n_channels(), first.n_samples(), n_classes, first.sample_rate_hz);
    let (params, _) = mitl::model::build_model(&spec, &mut rng(seed)).unwrap();
    let mut ckpt = mitl::model::ModelCheckpoint::new(spec, params, Default::default()).unwrap();
    ckpt.channel_names = first.channel_names().to_vec();
    ckpt
}
