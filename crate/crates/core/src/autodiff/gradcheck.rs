use std::collections::HashMap;

use super::{Feed, Graph, GraphError, NodeId, Result};
use crate::tensor::Tensor;

/// `|a - b| / max(|a|, |b|, 1e-8)`
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_error: f64,
    pub components: usize,
    /// Components sitting on a ReLU kink at every step tried.
    pub on_kink: usize,
}

/// Compares the analytic gradient of `sum(upstream ⊙ output)` with a
/// seven-point central difference for every component of the leaves named in
/// `wrt`. Returns the largest component-wise relative error.
///
/// When the stencil changes the sign of any ReLU input the step is shrunk
/// tenfold (up to twice); components still straddling a kink are not compared.
pub fn grad_check(
    graph: &mut Graph,
    output: NodeId,
    values: &HashMap<String, Tensor>,
    wrt: &[&str],
    upstream: &Tensor,
    h: f64,
) -> Result<f64> {
    grad_check_report(graph, output, values, wrt, upstream, h).map(|r| r.max_error)
}

pub fn grad_check_report(
    graph: &mut Graph,
    output: NodeId,
    values: &HashMap<String, Tensor>,
    wrt: &[&str],
    upstream: &Tensor,
    h: f64,
) -> Result<GradCheckReport> {
    assert!((1e-8..=1e-2).contains(&h), "finite-difference step {h} outside [1e-8, 1e-2]");
    assert!(values.values().all(Tensor::all_finite), "grad_check probe must be finite");

    let objective = |graph: &mut Graph, values: &HashMap<String, Tensor>| -> Result<f64> {
        let feed: Feed<'_> = values.iter().map(|(k, v)| (k.as_str(), v)).collect();
        graph.forward(&feed)?;
        let out = graph.value(output).ok_or(GraphError::NotEvaluated)?;
        Ok(out.data().iter().zip(upstream.data()).map(|(a, b)| a * b).sum())
    };

    objective(graph, values)?;
    let analytic = graph.backward(output, upstream)?;
    let kinks = graph.relu_pattern();

    let mut probe = values.clone();
    let mut report = GradCheckReport { max_error: 0.0, components: 0, on_kink: 0 };
    for &name in wrt {
        let base = values.get(name).ok_or_else(|| GraphError::MissingInput(name.to_string()))?;
        let zero = Tensor::zeros(base.rows(), base.cols());
        let grad = analytic.get(name).unwrap_or(&zero);
        for i in 0..base.len() {
            let x0 = base.data()[i];
            let mut numeric = None;
            let mut step = h;
            for _ in 0..3 {
                let mut f = [0.0; 6];
                let mut smooth = true;
                for (slot, k) in f.iter_mut().zip([1.0, -1.0, 2.0, -2.0, 3.0, -3.0]) {
                    probe.get_mut(name).unwrap().data_mut()[i] = x0 + k * step;
                    *slot = objective(graph, &probe)?;
                    smooth &= graph.relu_pattern() == kinks;
                }
                if smooth {
                    numeric = Some((45.0 * (f[0] - f[1]) - 9.0 * (f[2] - f[3]) + (f[4] - f[5])) / (60.0 * step));
                    break;
                }
                step /= 10.0;
            }
            probe.get_mut(name).unwrap().data_mut()[i] = x0;
            match numeric {
                Some(n) => {
                    report.components += 1;
                    report.max_error = report.max_error.max(relative_error(grad.data()[i], n));
                }
                None => report.on_kink += 1,
            }
        }
    }
    objective(graph, values)?;
    Ok(report)
}

/// A small graph exercising one primitive (or a short composite) with
/// randomly drawn leaves.
pub struct GradCase {
    pub name: &'static str,
    pub graph: Graph,
    pub output: NodeId,
}

impl GradCase {
    pub fn new(name: &'static str, build: impl FnOnce(&mut Graph) -> NodeId) -> Self {
        let mut graph = Graph::new();
        let output = build(&mut graph);
        Self { name, graph, output }
    }
}

/// One case per primitive.
pub fn primitive_cases() -> Vec<GradCase> {
    let unary = |name, f: fn(&mut Graph, NodeId) -> NodeId| {
        GradCase::new(name, move |g| {
            let x = g.input("x", 3, 4);
            f(g, x)
        })
    };
    let binary = |name, f: fn(&mut Graph, NodeId, NodeId) -> NodeId| {
        GradCase::new(name, move |g| {
            let a = g.input("a", 3, 4);
            let b = g.input("b", 3, 4);
            f(g, a, b)
        })
    };
    vec![
        GradCase::new("matmul", |g| {
            let a = g.input("a", 3, 4);
            let b = g.input("b", 4, 2);
            g.matmul(a, b)
        }),
        binary("add", Graph::add),
        binary("sub", Graph::sub),
        binary("mul", Graph::mul),
        GradCase::new("add_row", |g| {
            let a = g.input("a", 3, 4);
            let b = g.input("b", 1, 4);
            g.add_row(a, b)
        }),
        unary("scale", |g, x| g.scale(x, -1.7)),
        unary("sigmoid", Graph::sigmoid),
        unary("tanh", Graph::tanh),
        unary("relu", Graph::relu),
        unary("softmax", Graph::softmax),
        unary("log_softmax", Graph::log_softmax),
        unary("transpose", Graph::transpose),
        unary("slice_cols", |g, x| g.slice_cols(x, 1, 2)),
        unary("slice_rows", |g, x| g.slice_rows(x, 1, 2)),
        GradCase::new("embedding", |g| {
            let t = g.input("table", 6, 3);
            g.embedding(t, vec![4, 0, 4, 5, 2])
        }),
        binary("concat_cols", |g, a, b| g.concat_cols(vec![a, b])),
        binary("concat_rows", |g, a, b| g.concat_rows(vec![a, b])),
        GradCase::new("masked_fill", |g| {
            let x = g.input("x", 3, 3);
            let m = g.masked_fill(x, vec![false, true, false, false, false, true, true, false, false]);
            g.softmax(m)
        }),
        GradCase::new("causal_mask", |g| {
            let x = g.input("x", 4, 4);
            let m = g.causal_mask(x, 4);
            g.softmax(m)
        }),
        unary("layer_norm", |g, x| g.layer_norm(x, None, None)),
        GradCase::new("layer_norm_affine", |g| {
            let x = g.input("x", 3, 5);
            let gain = g.input("gain", 1, 5);
            let bias = g.input("bias", 1, 5);
            g.layer_norm(x, Some(gain), Some(bias))
        }),
        GradCase::new("cross_entropy", |g| {
            let x = g.input("x", 4, 5);
            let lp = g.log_softmax(x);
            g.cross_entropy(lp, vec![1, 4, 0, 2], vec![true, true, false, true])
        }),
    ]
}

/// Runs every case on `probes` random points (leaves and upstream drawn
/// uniformly from `[-1, 1)`) and reports the worst error per case.
pub fn check_cases(cases: Vec<GradCase>, probes: usize, seed: u64, h: f64) -> Result<Vec<(&'static str, GradCheckReport)>> {
    use rand::Rng;
    let mut rng = crate::seeded_rng(seed, 0);
    let mut out = Vec::with_capacity(cases.len());
    for mut case in cases {
        let leaves: Vec<(String, [usize; 2])> =
            case.graph.leaves().into_iter().map(|(n, s)| (n.to_string(), s)).collect();
        let mut total = GradCheckReport { max_error: 0.0, components: 0, on_kink: 0 };
        for _ in 0..probes {
            let values: HashMap<String, Tensor> = leaves
                .iter()
                .map(|(n, [r, c])| (n.clone(), Tensor::from_fn(*r, *c, |_, _| rng.random_range(-1.0..1.0))))
                .collect();
            let feed: Feed<'_> = values.iter().map(|(k, v)| (k.as_str(), v)).collect();
            let [r, c] = case.graph.forward(&feed)?.shape();
            let upstream = Tensor::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0));
            let names: Vec<&str> = leaves.iter().map(|(n, _)| n.as_str()).collect();
            let rep = grad_check_report(&mut case.graph, case.output, &values, &names, &upstream, h)?;
            total.max_error = total.max_error.max(rep.max_error);
            total.components += rep.components;
            total.on_kink += rep.on_kink;
        }
        out.push((case.name, total));
    }
    Ok(out)
}
