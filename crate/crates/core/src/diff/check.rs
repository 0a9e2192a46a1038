//! Finite-difference verification of reverse-mode gradients.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Outcome of a gradient check.
#[derive(Debug, Clone, Serialize)]
pub struct GradCheck {
    /// max over checked coordinates of `|a − n| / max(|a|, |n|, 1e-8)`.
    pub max_rel_error: f64,
    pub worst_input: usize,
    pub worst_coord: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

/// Restricts a check to a seeded random subset of coordinates per input.
#[derive(Debug, Clone, Copy)]
pub struct CoordSample {
    pub per_input: usize,
    pub seed: u64,
}

/// Agreement at which a step ladder stops trying further steps.
const LADDER_STOP: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares the backward pass of a scalar function of one array against
/// central differences at `point`.
pub fn check_gradients<F>(f: F, point: &Tensor, epsilon: f64) -> Result<GradCheck>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    check_gradients_multi(|g, v| f(g, v[0]), std::slice::from_ref(point), epsilon, None)
}

/// Multi-input variant of [`check_gradients`]; every input is a leaf that
/// receives gradients.
pub fn check_gradients_multi<F>(
    f: F,
    points: &[Tensor],
    epsilon: f64,
    sample: Option<CoordSample>,
) -> Result<GradCheck>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    check_inner(f, points, &[epsilon], false, sample)
}

/// Like [`check_gradients_multi`], but each coordinate is compared with
/// central differences at every step in `steps` and with their Richardson
/// extrapolations, keeping the closest estimate. Small steps resolve
/// piecewise-linear kinks and large steps resolve tiny gradients near the
/// rounding floor; an incorrect gradient disagrees with all of them.
pub fn check_gradients_ladder<F>(
    f: F,
    points: &[Tensor],
    steps: &[f64],
    sample: Option<CoordSample>,
) -> Result<GradCheck>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    check_inner(f, points, steps, true, sample)
}

fn check_inner<F>(f: F, points: &[Tensor], steps: &[f64], richardson: bool, sample: Option<CoordSample>) -> Result<GradCheck>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    if steps.is_empty() || steps.iter().any(|e| !(*e > 0.0)) {
        return Err(Error::Contract(format!("finite-difference steps must be positive, got {steps:?}")));
    }
    // Inputs are moved into each graph and back out rather than cloned.
    let evaluate = |inputs: &mut [Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs
            .iter_mut()
            .map(|t| g.constant(std::mem::replace(t, Tensor::scalar(0.0))))
            .collect();
        let value = f(&mut g, &vars).and_then(|root| g.value(root).item());
        for (t, v) in inputs.iter_mut().zip(&vars) {
            *t = g.take_value(*v);
        }
        let v = value?;
        if !v.is_finite() {
            return Err(Error::Numeric(format!("function value {v} is not finite")));
        }
        Ok(v)
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = points.iter().map(|t| g.param(t.clone())).collect();
    let root = f(&mut g, &vars)?;
    if !g.value(root).item()?.is_finite() {
        return Err(Error::Numeric("function value is not finite".into()));
    }
    g.backward(root)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(points)
        .map(|(v, p)| match g.grad(*v) {
            Some(t) => t.data().to_vec(),
            None => vec![0.0; p.len()],
        })
        .collect();

    let mut rng = sample.map(|s| ChaCha8Rng::seed_from_u64(s.seed));
    let mut report = GradCheck {
        max_rel_error: 0.0,
        worst_input: 0,
        worst_coord: 0,
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
    };
    let mut work: Vec<Tensor> = points.to_vec();
    for (input, point) in points.iter().enumerate() {
        let coords: Vec<usize> = match (&mut rng, sample) {
            (Some(r), Some(s)) if s.per_input < point.len() => {
                let mut c = index::sample(r, point.len(), s.per_input).into_vec();
                c.sort_unstable();
                c
            }
            _ => (0..point.len()).collect(),
        };
        for coord in coords {
            let orig = point.data()[coord];
            let mut central = |h: f64| -> Result<f64> {
                work[input].data_mut()[coord] = orig + h;
                let up = evaluate(&mut work)?;
                work[input].data_mut()[coord] = orig - h;
                let down = evaluate(&mut work)?;
                work[input].data_mut()[coord] = orig;
                Ok((up - down) / (2.0 * h))
            };
            let a = analytic[input][coord];
            if !a.is_finite() {
                return Err(Error::Numeric(format!("analytic gradient {a} is not finite")));
            }
            let mut estimates = Vec::new();
            for &h in steps {
                let d = central(h)?;
                estimates.push(d);
                if richardson {
                    if relative_error(a, d) <= LADDER_STOP {
                        break;
                    }
                    let half = central(h / 2.0)?;
                    estimates.push(half);
                    estimates.push((4.0 * half - d) / 3.0);
                    if estimates.iter().any(|&n| relative_error(a, n) <= LADDER_STOP) {
                        break;
                    }
                }
            }
            let (err, numeric) = estimates
                .iter()
                .map(|&n| (relative_error(a, n), n))
                .min_by(|x, y| x.0.total_cmp(&y.0))
                .expect("at least one step");
            report.checked += 1;
            if err > report.max_rel_error || report.checked == 1 {
                report.max_rel_error = err;
                report.worst_input = input;
                report.worst_coord = coord;
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_tensor(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn quadratic_is_exact() {
        let p = random_tensor(&[7], 3);
        let r = check_gradients(
            |g, x| {
                let xx = g.reshape(x, &[1, 7])?;
                let xt = g.transpose(xx)?;
                g.matmul(xx, xt)
            },
            &p,
            1e-4,
        )
        .unwrap();
        assert!(r.max_rel_error < 1e-6, "{r:?}");
        assert_eq!(r.checked, 7);
    }

    #[test]
    fn rejects_non_finite_values() {
        let p = Tensor::vector(vec![1.0]);
        let r = check_gradients(
            |g, x| {
                let y = g.scale(x, f64::INFINITY);
                Ok(g.sum(y))
            },
            &p,
            1e-4,
        );
        assert!(matches!(r, Err(Error::Numeric(_))));
    }

    /// Every smooth primitive against central differences on random points.
    #[test]
    fn primitives_match_finite_differences() {
        type Build = fn(&mut Graph, Var) -> Result<Var>;
        let cases: Vec<(&str, Vec<usize>, Build)> = vec![
            ("sigmoid", vec![3, 4], |g, x| {
                let y = g.sigmoid(x);
                Ok(g.sum(y))
            }),
            ("exp", vec![5], |g, x| {
                let y = g.exp(x);
                Ok(g.mean(y))
            }),
            ("log", vec![5], |g, x| {
                let e = g.exp(x);
                let y = g.log(e)?;
                let z = g.scale(y, 0.3);
                let w = g.exp(z);
                Ok(g.sum(w))
            }),
            ("l2_normalize", vec![3, 4], |g, x| {
                let y = g.l2_normalize(x, 1e-12);
                let w = g.exp(y);
                Ok(g.sum(w))
            }),
            ("log_sum_exp", vec![3, 5], |g, x| {
                let y = g.log_sum_exp(x)?;
                let w = g.exp(y);
                Ok(g.sum(w))
            }),
            ("softmax", vec![2, 5], |g, x| {
                let s = g.softmax(x);
                let w = g.exp(s);
                let w = g.scale(w, 1.7);
                let s2 = g.softmax(w);
                let idx = g.gather(s2, &[0, 3, 7])?;
                Ok(g.sum(idx))
            }),
            ("matmul+transpose", vec![3, 4], |g, x| {
                let t = g.transpose(x)?;
                let m = g.matmul(x, t)?;
                let e = g.exp(m);
                let e = g.scale(e, 0.1);
                Ok(g.mean(e))
            }),
            ("off_diagonal", vec![4, 4], |g, x| {
                let o = g.off_diagonal(x)?;
                let l = g.log_sum_exp(o)?;
                Ok(g.sum(l))
            }),
            ("mean_axis+concat+slice", vec![4, 3], |g, x| {
                let a = g.slice_rows(x, 1, 3)?;
                let c = g.concat(&[x, a], 0)?;
                let c2 = g.concat(&[c, c], 1)?;
                let m = g.mean_axis(c2, 1)?;
                let e = g.exp(m);
                Ok(g.sum(e))
            }),
            ("bce", vec![6], |g, x| g.bce_with_logits(x, &[1.0, 0.0, 1.0, 1.0, 0.0, 0.0])),
        ];
        for (name, shape, build) in cases {
            for seed in 0..100 {
                let p = random_tensor(&shape, seed);
                let r = check_gradients(build, &p, 1e-5).unwrap();
                assert!(r.max_rel_error < 1e-4, "{name} seed {seed}: {r:?}");
            }
        }
    }

    #[test]
    fn conv_primitives_match_finite_differences() {
        let adj = std::sync::Arc::new(random_tensor(&[3, 3], 99));
        for seed in 0..20 {
            let x = random_tensor(&[2, 2, 5, 3], seed);
            let w1 = random_tensor(&[3, 2], seed + 100);
            let w2 = random_tensor(&[2, 3, 3], seed + 200);
            let b = random_tensor(&[2], seed + 300);
            let adj = adj.clone();
            let r = check_gradients_multi(
                move |g, v| {
                    let m = g.graph_mix(v[0], &adj)?;
                    let c = g.channel_map(m, v[1])?;
                    let t = g.temporal_conv(c, v[2], 2)?;
                    let t = g.add_bias(t, v[3], 1)?;
                    let e = g.scale(t, 0.3);
                    let e = g.exp(e);
                    Ok(g.mean(e))
                },
                &[x, w1, w2, b],
                1e-5,
                None,
            )
            .unwrap();
            assert!(r.max_rel_error < 1e-4, "seed {seed}: {r:?}");
        }
    }

    #[test]
    fn linearity_of_backward() {
        let p = random_tensor(&[6], 11);
        let grad_of = |a: f64, b: f64| {
            let mut g = Graph::new();
            let x = g.param(p.clone());
            let f1 = g.exp(x);
            let f1 = g.sum(f1);
            let s = g.sigmoid(x);
            let f2 = g.mean(s);
            let f1 = g.scale(f1, a);
            let f2 = g.scale(f2, b);
            let t = g.add(f1, f2).unwrap();
            g.backward(t).unwrap();
            g.grad(x).unwrap().data().to_vec()
        };
        let (a, b) = (0.7, -2.3);
        let combined = grad_of(a, b);
        let gf = grad_of(1.0, 0.0);
        let gg = grad_of(0.0, 1.0);
        for i in 0..6 {
            assert!((combined[i] - (a * gf[i] + b * gg[i])).abs() < 1e-10);
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let p = random_tensor(&[2, 3, 9, 4], 5);
        let w = random_tensor(&[4, 3, 5], 6);
        let run = || {
            let mut g = Graph::new();
            let x = g.constant(p.clone());
            let wv = g.constant(w.clone());
            let y = g.temporal_conv(x, wv, 1).unwrap();
            g.value(y).clone()
        };
        assert_eq!(run().data(), run().data());
    }
}
