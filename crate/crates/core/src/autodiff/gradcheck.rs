//! Central finite-difference gradient verification.
//!
//! The numeric side only ever calls the loss forward, so it stays
//! independent of the backward rules it is checking.

use std::collections::BTreeMap;

use super::store::ParameterStore;
use super::tensor::Tensor;

/// Central-difference gradient of `loss` with respect to every coordinate
/// of parameter `name`.
pub fn numeric_gradient(
    store: &ParameterStore,
    name: &str,
    epsilon: f64,
    mut loss: impl FnMut(&ParameterStore) -> f64,
) -> Tensor {
    let mut probe = store.clone();
    let n = store.get(name).expect("parameter exists").len();
    let mut grad = Vec::with_capacity(n);
    for i in 0..n {
        let original = probe.get(name).unwrap().data()[i];
        probe.get_mut(name).unwrap().data_mut()[i] = original + epsilon;
        let plus = loss(&probe);
        probe.get_mut(name).unwrap().data_mut()[i] = original - epsilon;
        let minus = loss(&probe);
        probe.get_mut(name).unwrap().data_mut()[i] = original;
        grad.push((plus - minus) / (2.0 * epsilon));
    }
    Tensor::new(store.get(name).unwrap().shape().to_vec(), grad)
}

/// Comparison outcome for one parameter block.
#[derive(Debug, Clone)]
pub struct GradEntry {
    pub name: String,
    pub max_rel_error: f64,
    pub worst_coordinate: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub passed: bool,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub entries: Vec<GradEntry>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.passed)
    }
}

/// Relative error with a floor: coordinates where both sides are below
/// `1e-10` in magnitude count as exact.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs());
    if denom < 1e-10 {
        0.0
    } else {
        (analytic - numeric).abs() / denom
    }
}

/// Compare analytic gradients against central finite differences for every
/// listed parameter, at `tolerance` relative error.
pub fn check_gradients(
    store: &ParameterStore,
    analytic: &BTreeMap<String, Tensor>,
    names: &[&str],
    epsilon: f64,
    tolerance: f64,
    mut loss: impl FnMut(&ParameterStore) -> f64,
) -> GradCheckReport {
    let mut entries = Vec::new();
    for &name in names {
        let numeric = numeric_gradient(store, name, epsilon, &mut loss);
        let zero;
        let analytic_t = match analytic.get(name) {
            Some(t) => t,
            None => {
                zero = Tensor::zeros(numeric.shape().to_vec());
                &zero
            }
        };
        let mut worst = 0.0;
        let mut worst_i = 0;
        for i in 0..numeric.len() {
            let rel = relative_error(analytic_t.data()[i], numeric.data()[i]);
            if rel > worst {
                worst = rel;
                worst_i = i;
            }
        }
        entries.push(GradEntry {
            name: name.to_string(),
            max_rel_error: worst,
            worst_coordinate: worst_i,
            analytic: analytic_t.data().get(worst_i).copied().unwrap_or(0.0),
            numeric: numeric.data().get(worst_i).copied().unwrap_or(0.0),
            passed: worst < tolerance,
        });
    }
    GradCheckReport { entries, tolerance }
}

/// Finite-difference check of every tape primitive on small random inputs,
/// at `tolerance` relative error (central differences, the given epsilon).
///
/// Each primitive is wrapped in a scalar objective; the analytic side runs
/// the tape backward, the numeric side only re-runs forwards.
pub fn primitive_checks(seed: u64, epsilon: f64, tolerance: f64) -> GradCheckReport {
    use crate::autodiff::Tape;
    use rand::Rng;

    // Deterministic, kink-free inputs: magnitudes in [0.2, 1.0) with random
    // signs keep relu/max away from 0 under the probe epsilon.
    let mut stream = crate::rng::rng(seed);
    let mut values = |n: usize| -> Vec<f64> {
        (0..n)
            .map(|_| {
                let mag: f64 = stream.gen_range(0.2..1.0);
                if stream.gen_bool(0.5) {
                    mag
                } else {
                    -mag
                }
            })
            .collect()
    };

    type Build = Box<dyn Fn(&mut Tape, &[Tensor]) -> NodeIdPair>;
    struct NodeIdPair {
        inputs: Vec<crate::autodiff::NodeId>,
        loss: crate::autodiff::NodeId,
    }
    // Scalar objective from any output shape.
    fn sq_loss(tape: &mut Tape, x: crate::autodiff::NodeId) -> crate::autodiff::NodeId {
        let sq = tape.mul(x, x).unwrap();
        tape.sum(sq)
    }
    // (name, input shapes, graph builder)
    let cases: Vec<(&str, Vec<Vec<usize>>, Build)> = vec![
        (
            "gather",
            vec![vec![4, 3]],
            Box::new(|tape, t| {
                let table = tape.leaf(t[0].clone());
                let picked = tape.gather(table, &[0, 2, 2, 3]).unwrap();
                let loss = sq_loss(tape, picked);
                NodeIdPair { inputs: vec![table], loss }
            }),
        ),
        (
            "scatter_add",
            vec![vec![3, 2]],
            Box::new(|tape, t| {
                let values = tape.leaf(t[0].clone());
                let spread = tape.scatter_add(values, &[1, 0, 1], 2).unwrap();
                let loss = sq_loss(tape, spread);
                NodeIdPair { inputs: vec![values], loss }
            }),
        ),
        (
            "add",
            vec![vec![5], vec![5]],
            Box::new(|tape, t| {
                let a = tape.leaf(t[0].clone());
                let b = tape.leaf(t[1].clone());
                let s = tape.add(a, b).unwrap();
                let loss = sq_loss(tape, s);
                NodeIdPair { inputs: vec![a, b], loss }
            }),
        ),
        (
            "sub",
            vec![vec![5], vec![5]],
            Box::new(|tape, t| {
                let a = tape.leaf(t[0].clone());
                let b = tape.leaf(t[1].clone());
                let s = tape.sub(a, b).unwrap();
                let loss = sq_loss(tape, s);
                NodeIdPair { inputs: vec![a, b], loss }
            }),
        ),
        (
            "mul",
            vec![vec![5], vec![5]],
            Box::new(|tape, t| {
                let a = tape.leaf(t[0].clone());
                let b = tape.leaf(t[1].clone());
                let s = tape.mul(a, b).unwrap();
                let loss = tape.sum(s);
                NodeIdPair { inputs: vec![a, b], loss }
            }),
        ),
        (
            "div",
            vec![vec![5], vec![5]],
            Box::new(|tape, t| {
                let a = tape.leaf(t[0].clone());
                let b = tape.leaf(t[1].clone());
                let s = tape.div(a, b).unwrap();
                let loss = tape.sum(s);
                NodeIdPair { inputs: vec![a, b], loss }
            }),
        ),
        (
            "relu",
            vec![vec![6]],
            Box::new(|tape, t| {
                let a = tape.leaf(t[0].clone());
                let s = tape.relu(a);
                let loss = sq_loss(tape, s);
                NodeIdPair { inputs: vec![a], loss }
            }),
        ),
        (
            "sigmoid",
            vec![vec![6]],
            Box::new(|tape, t| {
                let a = tape.leaf(t[0].clone());
                let s = tape.sigmoid(a);
                let loss = tape.sum(s);
                NodeIdPair { inputs: vec![a], loss }
            }),
        ),
        (
            "exp",
            vec![vec![6]],
            Box::new(|tape, t| {
                let a = tape.leaf(t[0].clone());
                let s = tape.exp(a);
                let loss = tape.sum(s);
                NodeIdPair { inputs: vec![a], loss }
            }),
        ),
        (
            "sum",
            vec![vec![6]],
            Box::new(|tape, t| {
                let a = tape.leaf(t[0].clone());
                let s = tape.mul(a, a).unwrap();
                let loss = tape.sum(s);
                NodeIdPair { inputs: vec![a], loss }
            }),
        ),
        (
            "mean",
            vec![vec![6]],
            Box::new(|tape, t| {
                let a = tape.leaf(t[0].clone());
                let s = tape.mul(a, a).unwrap();
                let loss = tape.mean(s).unwrap();
                NodeIdPair { inputs: vec![a], loss }
            }),
        ),
        (
            "l2_normalize",
            vec![vec![5]],
            Box::new(|tape, t| {
                let a = tape.leaf(t[0].clone());
                let n = tape.l2_normalize(a).unwrap();
                let weights = tape.constant(Tensor::vector(vec![0.9, -0.3, 0.4, 1.2, -0.7]));
                let w = tape.mul(n, weights).unwrap();
                let loss = tape.sum(w);
                NodeIdPair { inputs: vec![a], loss }
            }),
        ),
        (
            "l2_normalize_rows",
            vec![vec![3, 4]],
            Box::new(|tape, t| {
                let a = tape.leaf(t[0].clone());
                let n = tape.l2_normalize_rows(a).unwrap();
                let loss = sq_loss(tape, n);
                NodeIdPair { inputs: vec![a], loss }
            }),
        ),
        (
            "dot",
            vec![vec![5], vec![5]],
            Box::new(|tape, t| {
                let a = tape.leaf(t[0].clone());
                let b = tape.leaf(t[1].clone());
                let loss = tape.dot(a, b).unwrap();
                NodeIdPair { inputs: vec![a, b], loss }
            }),
        ),
        (
            "cosine",
            vec![vec![5], vec![5]],
            Box::new(|tape, t| {
                let a = tape.leaf(t[0].clone());
                let b = tape.leaf(t[1].clone());
                let loss = tape.cosine(a, b).unwrap();
                NodeIdPair { inputs: vec![a, b], loss }
            }),
        ),
        (
            "matvec",
            vec![vec![4, 3], vec![3]],
            Box::new(|tape, t| {
                let m = tape.leaf(t[0].clone());
                let v = tape.leaf(t[1].clone());
                let out = tape.matvec(m, v).unwrap();
                let loss = sq_loss(tape, out);
                NodeIdPair { inputs: vec![m, v], loss }
            }),
        ),
        (
            "vecmat",
            vec![vec![4], vec![4, 3]],
            Box::new(|tape, t| {
                let v = tape.leaf(t[0].clone());
                let m = tape.leaf(t[1].clone());
                let out = tape.vecmat(v, m).unwrap();
                let loss = sq_loss(tape, out);
                NodeIdPair { inputs: vec![v, m], loss }
            }),
        ),
        (
            "linear",
            vec![vec![4, 3], vec![2, 3]],
            Box::new(|tape, t| {
                let x = tape.leaf(t[0].clone());
                let w = tape.leaf(t[1].clone());
                let out = tape.linear(x, w).unwrap();
                let loss = sq_loss(tape, out);
                NodeIdPair { inputs: vec![x, w], loss }
            }),
        ),
        (
            "max_with_zero",
            vec![vec![6]],
            Box::new(|tape, t| {
                let a = tape.leaf(t[0].clone());
                let s = tape.max_with_zero(a);
                let loss = sq_loss(tape, s);
                NodeIdPair { inputs: vec![a], loss }
            }),
        ),
    ];

    let mut entries = Vec::new();
    for (name, shapes, build) in &cases {
        let tensors: Vec<Tensor> = shapes
            .iter()
            .map(|s| Tensor::new(s.clone(), values(s.iter().product())))
            .collect();

        // Analytic gradients through the tape.
        let mut tape = Tape::new();
        let pair = build(&mut tape, &tensors);
        let mut grads = tape.backward(pair.loss).expect("scalar loss");
        let analytic: Vec<Tensor> = pair
            .inputs
            .iter()
            .map(|&id| {
                grads.take(id).unwrap_or_else(|| Tensor::zeros(tape.value(id).shape().to_vec()))
            })
            .collect();

        // Numeric gradients by re-running the forward with one coordinate
        // nudged at a time.
        let mut worst = 0.0f64;
        let mut worst_pair = (0.0, 0.0);
        let mut worst_i = 0;
        for (input_idx, tensor) in tensors.iter().enumerate() {
            for coord in 0..tensor.len() {
                let eval = |delta: f64| -> f64 {
                    let mut probe: Vec<Tensor> = tensors.clone();
                    probe[input_idx].data_mut()[coord] += delta;
                    let mut t = Tape::new();
                    let p = build(&mut t, &probe);
                    t.value(p.loss).item()
                };
                let numeric = (eval(epsilon) - eval(-epsilon)) / (2.0 * epsilon);
                let a = analytic[input_idx].data()[coord];
                let rel = relative_error(a, numeric);
                if rel > worst {
                    worst = rel;
                    worst_pair = (a, numeric);
                    worst_i = coord;
                }
            }
        }
        entries.push(GradEntry {
            name: name.to_string(),
            max_rel_error: worst,
            worst_coordinate: worst_i,
            analytic: worst_pair.0,
            numeric: worst_pair.1,
            passed: worst < tolerance,
        });
    }
    GradCheckReport { entries, tolerance }
}
