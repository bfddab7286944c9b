//! Central finite-difference verification of graph gradients at f64.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::metrics::{pipeline_loss, sum_terms};
use crate::tensor::{LabelMap, Tensor};
use crate::translation::{make_translated_graph, pipeline_forward_graph, SigmoidOn};
use crate::unet::{build_unet, BoundParams, UNetConfig};

/// Absolute floor on the relative-error denominator.
pub const ABS_FLOOR: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckReport {
    pub max_rel_err: f64,
    /// (input index, flat coordinate) of the worst coordinate.
    pub worst: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
    /// Difference step used at the worst coordinate.
    pub step: f64,
    pub checked: usize,
}

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(ABS_FLOOR)
}

fn eval<F>(f: &F, inputs: &[Tensor<f64>], grad: bool) -> Result<(Graph<f64>, Vec<Var>, Var)>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|t| {
            let mut t = t.clone();
            t.requires_grad = grad;
            t.grad = None;
            g.leaf(t)
        })
        .collect();
    let out = f(&mut g, &vars)?;
    if !g.value(out).is_scalar() {
        return Err(Error::NotScalar(g.value(out).shape().to_vec()));
    }
    Ok((g, vars, out))
}

/// Compares reverse-mode gradients of the scalar `f` against
/// `(f(x+eps) - f(x-eps)) / 2eps` for every coordinate of every input.
pub fn gradcheck<F>(f: F, inputs: &[Tensor<f64>], eps: f64) -> Result<GradcheckReport>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "gradcheck eps must be > 0, got {eps}"
        )));
    }
    let (mut g, vars, out) = eval(&f, inputs, true)?;
    g.backward(out)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(v, t)| {
            g.grad(*v)
                .map(<[f64]>::to_vec)
                .unwrap_or_else(|| vec![0.0; t.numel()])
        })
        .collect();
    drop(g);

    let mut report = GradcheckReport {
        max_rel_err: 0.0,
        worst: (0, 0),
        analytic: 0.0,
        numeric: 0.0,
        step: eps,
        checked: 0,
    };
    let mut probe = inputs.to_vec();
    for (ii, grads) in analytic.iter().enumerate() {
        for (j, &a) in grads.iter().enumerate() {
            let orig = probe[ii].data()[j];
            probe[ii].data_mut()[j] = orig + eps;
            let plus = eval(&f, &probe, false).map(|(g, _, o)| g.value(o).item())?;
            probe[ii].data_mut()[j] = orig - eps;
            let minus = eval(&f, &probe, false).map(|(g, _, o)| g.value(o).item())?;
            probe[ii].data_mut()[j] = orig;
            let n = (plus - minus) / (2.0 * eps);
            let e = rel_err(a, n);
            report.checked += 1;
            if e > report.max_rel_err || report.checked == 1 {
                report.max_rel_err = e;
                report.worst = (ii, j);
                report.analytic = a;
                report.numeric = n;
            }
        }
    }
    Ok(report)
}

/// Per-coordinate step rule for [`gradcheck_scaled`]. The first step is
/// `h = clamp(change / |g|, min, max)` with `g` the analytic gradient, so the
/// difference moves `f` by roughly `change` and round-off stays far below
/// the signal. If the error at `h` is not below `accept`, steps of `h/10`,
/// `h/100`, ... (not below `min`) are tried and the smallest error is kept.
/// A wrong gradient disagrees at every step; a ReLU kink or pooling switch
/// inside the stencil only at the larger ones.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRule {
    pub change: f64,
    pub min: f64,
    pub max: f64,
    pub accept: f64,
}

impl StepRule {
    pub fn step(&self, grad: f64) -> f64 {
        (self.change / grad.abs().max(f64::MIN_POSITIVE)).clamp(self.min, self.max)
    }
}

/// [`gradcheck`] with the step chosen per coordinate by `rule`.
pub fn gradcheck_scaled<F>(f: F, inputs: &[Tensor<f64>], rule: StepRule) -> Result<GradcheckReport>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    if !(rule.min > 0.0 && rule.min <= rule.max && rule.change > 0.0 && rule.accept > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "bad gradcheck step rule {rule:?}"
        )));
    }
    let (mut g, vars, out) = eval(&f, inputs, true)?;
    g.backward(out)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(v, t)| {
            g.grad(*v)
                .map(<[f64]>::to_vec)
                .unwrap_or_else(|| vec![0.0; t.numel()])
        })
        .collect();
    drop(g);

    let mut report = GradcheckReport {
        max_rel_err: 0.0,
        worst: (0, 0),
        analytic: 0.0,
        numeric: 0.0,
        step: rule.max,
        checked: 0,
    };
    let mut probe = inputs.to_vec();
    for (ii, grads) in analytic.iter().enumerate() {
        for (j, &a) in grads.iter().enumerate() {
            let orig = probe[ii].data()[j];
            let mut h = rule.step(a);
            let (mut e, mut n, mut used) = (f64::INFINITY, 0.0, h);
            loop {
                probe[ii].data_mut()[j] = orig + h;
                let plus = eval(&f, &probe, false).map(|(g, _, o)| g.value(o).item())?;
                probe[ii].data_mut()[j] = orig - h;
                let minus = eval(&f, &probe, false).map(|(g, _, o)| g.value(o).item())?;
                probe[ii].data_mut()[j] = orig;
                let nh = (plus - minus) / (2.0 * h);
                let eh = rel_err(a, nh);
                if eh < e {
                    (e, n, used) = (eh, nh, h);
                }
                h /= 10.0;
                if e < rule.accept || h < rule.min {
                    break;
                }
            }
            let h = used;
            report.checked += 1;
            if e > report.max_rel_err || report.checked == 1 {
                report.max_rel_err = e;
                report.worst = (ii, j);
                report.analytic = a;
                report.numeric = n;
                report.step = h;
            }
        }
    }
    Ok(report)
}

/// Per-op tolerance of the suite.
pub const OP_TOL: f64 = 1e-4;
/// Tolerance for the whole two-network objective.
pub const PIPELINE_TOL: f64 = 1e-3;
/// Step used for single-op checks.
pub const OP_EPS: f64 = 1e-3;
/// Step rule for the pipeline check.
pub const PIPELINE_STEPS: StepRule = StepRule {
    change: 1e-9,
    min: 1e-7,
    max: 1e-3,
    accept: 1e-4,
};

#[derive(Clone, Debug)]
pub struct CheckResult {
    pub name: &'static str,
    pub report: GradcheckReport,
    pub tolerance: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.report.max_rel_err < self.tolerance
    }
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.gen_range(lo..hi)).collect(),
    )
    .expect("shape")
}

/// Uniform in ±[0.1, 1]: keeps ReLU inputs off the kink.
fn off_kink(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let mut t = uniform(rng, shape, 0.1, 1.0);
    for v in t.data_mut() {
        if rng.gen_bool(0.5) {
            *v = -*v;
        }
    }
    t
}

/// Contracts `out` with a fixed random tensor so every output coordinate
/// gets a distinct upstream gradient.
fn project(g: &mut Graph<f64>, out: Var, probe: &Tensor<f64>) -> Result<Var> {
    let p = g.leaf(probe.clone());
    let m = g.mul(out, p)?;
    Ok(g.sum(m))
}

fn check<F>(
    name: &'static str,
    f: F,
    inputs: &[Tensor<f64>],
    probe_shape: &[usize],
    rng: &mut ChaCha8Rng,
) -> Result<CheckResult>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let probe = uniform(rng, probe_shape, -1.0, 1.0);
    let report = gradcheck(
        |g, v| {
            let out = f(g, v)?;
            project(g, out, &probe)
        },
        inputs,
        OP_EPS,
    )?;
    Ok(CheckResult {
        name,
        report,
        tolerance: OP_TOL,
    })
}

/// Finite-difference checks of every differentiable op on random inputs.
pub fn op_suite(seed: u64) -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();

    let x = uniform(&mut rng, &[2, 3, 4, 4], -1.0, 1.0);
    let w = uniform(&mut rng, &[2, 3, 3, 3], -1.0, 1.0);
    let b = uniform(&mut rng, &[2], -1.0, 1.0);
    out.push(check(
        "conv2d_3x3",
        |g, v| g.conv2d(v[0], v[1], v[2], 1),
        &[x, w, b],
        &[2, 2, 4, 4],
        &mut rng,
    )?);

    let x = uniform(&mut rng, &[2, 3, 4, 4], -1.0, 1.0);
    let w = uniform(&mut rng, &[4, 3, 1, 1], -1.0, 1.0);
    let b = uniform(&mut rng, &[4], -1.0, 1.0);
    out.push(check(
        "conv2d_1x1",
        |g, v| g.conv2d(v[0], v[1], v[2], 0),
        &[x, w, b],
        &[2, 4, 4, 4],
        &mut rng,
    )?);

    // distinct values spaced well beyond the stencil width, so no window
    // changes its argmax under perturbation
    let mut vals: Vec<f64> = (0..128).map(|i| i as f64 * 0.01 - 0.64).collect();
    vals.shuffle(&mut rng);
    let x = Tensor::new([1, 2, 8, 8], vals)?;
    out.push(check(
        "maxpool2",
        |g, v| g.maxpool2(v[0]),
        &[x],
        &[1, 2, 4, 4],
        &mut rng,
    )?);

    let x = uniform(&mut rng, &[1, 1, 3, 3], -1.0, 1.0);
    out.push(check(
        "upsample2",
        |g, v| g.upsample2(v[0]),
        &[x],
        &[1, 1, 6, 6],
        &mut rng,
    )?);

    let x = off_kink(&mut rng, &[2, 3, 3]);
    out.push(check(
        "relu",
        |g, v| Ok(g.relu(v[0])),
        &[x],
        &[2, 3, 3],
        &mut rng,
    )?);

    let x = uniform(&mut rng, &[2, 3, 3], -4.0, 4.0);
    out.push(check(
        "sigmoid",
        |g, v| Ok(g.sigmoid(v[0])),
        &[x],
        &[2, 3, 3],
        &mut rng,
    )?);

    let a = uniform(&mut rng, &[2, 2, 3], -1.0, 1.0);
    let bb = uniform(&mut rng, &[2, 2, 3], -1.0, 1.0);
    out.push(check(
        "add",
        |g, v| g.add(v[0], v[1]),
        &[a, bb],
        &[2, 2, 3],
        &mut rng,
    )?);

    let a = uniform(&mut rng, &[2, 3, 2, 2], -1.0, 1.0);
    let bb = uniform(&mut rng, &[2, 2, 2, 2], -1.0, 1.0);
    out.push(check(
        "concat_channels",
        |g, v| g.concat_channels(v[0], v[1]),
        &[a, bb],
        &[2, 5, 2, 2],
        &mut rng,
    )?);

    let a = uniform(&mut rng, &[2, 2, 3, 3], -1.0, 1.0);
    let bb = uniform(&mut rng, &[1, 2, 3, 3], -1.0, 1.0);
    out.push(check(
        "cat_batch",
        |g, v| g.cat_batch(&[v[0], v[1]]),
        &[a, bb],
        &[3, 2, 3, 3],
        &mut rng,
    )?);

    let a = uniform(&mut rng, &[4, 2, 3, 3], -1.0, 1.0);
    out.push(check(
        "slice_batch",
        |g, v| g.slice_batch(v[0], 1, 2),
        &[a],
        &[2, 2, 3, 3],
        &mut rng,
    )?);

    let logits = uniform(&mut rng, &[1, 3, 4, 4], -2.0, 2.0);
    let labels: Vec<u8> = (0..16).map(|_| rng.gen_range(0..3u8)).collect();
    let target = LabelMap::new(1, 4, 4, labels)?;
    let report = gradcheck(|g, v| g.softmax_ce(v[0], &target), &[logits], OP_EPS)?;
    out.push(CheckResult {
        name: "softmax_ce",
        report,
        tolerance: OP_TOL,
    });

    let input = uniform(&mut rng, &[1, 1, 4, 4], 0.0, 1.0);
    let filt = uniform(&mut rng, &[1, 3, 4, 4], 0.05, 2.0);
    let probes: Vec<Tensor<f64>> = (0..3)
        .map(|_| uniform(&mut rng, &[1, 1, 4, 4], -1.0, 1.0))
        .collect();
    let report = gradcheck(
        |g, v| {
            let ts = make_translated_graph(g, v[0], v[1], SigmoidOn::Sum)?;
            let mut parts = Vec::new();
            for (t, p) in ts.iter().zip(&probes) {
                parts.push(project(g, *t, p)?);
            }
            Ok(sum_terms(g, parts)?.total)
        },
        &[input, filt],
        OP_EPS,
    )?;
    out.push(CheckResult {
        name: "make_translated",
        report,
        tolerance: OP_TOL,
    });

    let s = rng.gen_range(2..=6);
    let parts: Vec<Tensor<f64>> = (0..s)
        .map(|_| uniform(&mut rng, &[2, 3, 2, 2], -1.0, 1.0))
        .collect();
    let mut inputs = parts.clone();
    inputs.push(uniform(&mut rng, &[s], -1.0, 1.0));
    inputs.push(uniform(&mut rng, &[1], -1.0, 1.0));
    out.push(check(
        "ensemble_mix",
        |g, v| {
            let st = g.stack(&v[..s])?;
            g.ensemble_mix(st, v[s], v[s + 1])
        },
        &inputs,
        &[2, 3, 2, 2],
        &mut rng,
    )?);
    Ok(out)
}

/// Small network shape used for the whole-pipeline check.
pub fn pipeline_check_config() -> UNetConfig {
    UNetConfig {
        in_channels: 1,
        num_classes: 3,
        depth: 2,
        base_width: 2,
    }
}

/// Finite-difference check of the summed objective with respect to every
/// parameter of both networks and the ensemble, on a 1×1×16×16 input.
pub fn pipeline_check(seed: u64, cfg: UNetConfig) -> Result<CheckResult> {
    pipeline_check_steps(seed, cfg, PIPELINE_STEPS)
}

pub fn pipeline_check_steps(seed: u64, cfg: UNetConfig, steps: StepRule) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut net1 = build_unet::<f64>(cfg, seed)?;
    let mut net2 = build_unet::<f64>(cfg, seed.wrapping_add(1))?;
    // Zero biases put units fed only by dead ReLUs exactly on a kink.
    for (name, t) in net1.params.iter_mut().chain(net2.params.iter_mut()) {
        if name.ends_with(".bias") {
            t.data_mut()
                .iter_mut()
                .for_each(|b| *b = rng.gen_range(-0.2..0.2));
        }
    }
    let s = cfg.num_classes + 1;
    let w: Vec<f64> = (0..s).map(|_| rng.gen_range(0.1..1.0)).collect();
    let bias = rng.gen_range(-0.5..0.5);
    let x = uniform(&mut rng, &[1, 1, 16, 16], 0.0, 1.0);
    let labels: Vec<u8> = (0..256)
        .map(|_| rng.gen_range(0..cfg.num_classes as u8))
        .collect();
    let target = LabelMap::new(1, 16, 16, labels)?;

    let names1: Vec<String> = net1.params.iter().map(|(n, _)| n.to_string()).collect();
    let names2: Vec<String> = net2.params.iter().map(|(n, _)| n.to_string()).collect();
    let mut inputs: Vec<Tensor<f64>> = net1.params.iter().map(|(_, t)| t.clone()).collect();
    inputs.extend(net2.params.iter().map(|(_, t)| t.clone()));
    inputs.push(Tensor::new([s], w)?);
    inputs.push(Tensor::scalar(bias));
    let (n1, n2) = (names1.len(), names2.len());

    let report = gradcheck_scaled(
        |g, v| {
            let b1 = BoundParams::from_vars(names1.iter().cloned().zip(v[..n1].iter().copied()));
            let b2 =
                BoundParams::from_vars(names2.iter().cloned().zip(v[n1..n1 + n2].iter().copied()));
            let xv = g.leaf(x.clone());
            let vars = pipeline_forward_graph(
                g,
                &cfg,
                &b1,
                &cfg,
                &b2,
                (v[n1 + n2], v[n1 + n2 + 1]),
                xv,
                SigmoidOn::Sum,
            )?;
            Ok(pipeline_loss(g, &vars, &target, true)?.total)
        },
        &inputs,
        steps,
    )?;
    Ok(CheckResult {
        name: "pipeline_total_loss",
        report,
        tolerance: PIPELINE_TOL,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares_is_exact() {
        let x = Tensor::new([2, 3], vec![0.3, -1.2, 2.5, 0.0, 7.0, -0.01]).unwrap();
        let r = gradcheck(
            |g, v| {
                let sq = g.mul(v[0], v[0])?;
                Ok(g.sum(sq))
            },
            &[x],
            1e-3,
        )
        .unwrap();
        assert!(r.max_rel_err < 1e-8, "{r:?}");
        assert_eq!(r.checked, 6);
    }

    #[test]
    fn rejects_nonpositive_eps() {
        let x = Tensor::<f64>::zeros([1]);
        for eps in [0.0, -1e-3, f64::NAN] {
            assert!(gradcheck(|g, v| Ok(g.sum(v[0])), &[x.clone()], eps).is_err());
        }
    }

    #[test]
    fn rejects_non_scalar_output() {
        let x = Tensor::<f64>::zeros([3]);
        assert!(matches!(
            gradcheck(|_, v| Ok(v[0]), &[x], 1e-3),
            Err(Error::NotScalar(_))
        ));
    }

    #[test]
    fn detects_a_wrong_gradient() {
        // relu at a kink: analytic 0 (by convention) vs numeric 0.5
        let x = Tensor::new([1], vec![0.0]).unwrap();
        let r = gradcheck(
            |g, v| {
                let r = g.relu(v[0]);
                Ok(g.sum(r))
            },
            &[x],
            1e-3,
        )
        .unwrap();
        assert!(r.max_rel_err > 0.5);
    }

    const RULE: StepRule = StepRule {
        change: 1e-9,
        min: 1e-7,
        max: 1e-3,
        accept: 1e-6,
    };

    #[test]
    fn scaled_steps_follow_gradient_size() {
        assert_eq!(RULE.step(0.0), 1e-3);
        assert_eq!(RULE.step(1e9), 1e-7);
        assert!((RULE.step(1e-4) - 1e-5).abs() < 1e-18);
    }

    #[test]
    fn scaled_check_passes_smooth_function() {
        let x = Tensor::new([4], vec![0.3, -1.2, 2.5, 1e-4]).unwrap();
        let r = gradcheck_scaled(
            |g, v| {
                let s = g.sigmoid(v[0]);
                let sq = g.mul(s, v[0])?;
                Ok(g.sum(sq))
            },
            &[x],
            RULE,
        )
        .unwrap();
        assert!(r.max_rel_err < 1e-6, "{r:?}");
    }

    #[test]
    fn scaled_check_still_catches_missing_gradient_path() {
        // x * const(x): the constant copy hides half the derivative of x²
        let x = Tensor::new([3], vec![0.5, -2.0, 1.5]).unwrap();
        let r = gradcheck_scaled(
            |g, v| {
                let c = g.leaf(g.value(v[0]).clone());
                let p = g.mul(v[0], c)?;
                Ok(g.sum(p))
            },
            &[x],
            RULE,
        )
        .unwrap();
        assert!((r.max_rel_err - 0.5).abs() < 1e-6, "{r:?}");
    }

    #[test]
    fn scaled_check_rejects_bad_rule() {
        let x = Tensor::<f64>::zeros([1]);
        let bad = StepRule { min: 1e-2, ..RULE };
        assert!(gradcheck_scaled(|g, v| Ok(g.sum(v[0])), &[x], bad).is_err());
    }
}
