//! Randomized finite-difference checks of every primitive's gradient rule.

use fable_core::autodiff::{finite_difference_check, AutodiffError, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;

#[derive(Debug)]
pub struct PrimitiveResult {
    pub name: &'static str,
    pub instances: usize,
    pub worst: f64,
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.gen_range(lo..hi)).collect(),
    )
    .unwrap()
}

fn dim(rng: &mut ChaCha8Rng) -> usize {
    rng.gen_range(1..=5)
}

fn random_matrix(rng: &mut ChaCha8Rng, extra_cols: usize, lo: f64, hi: f64) -> Tensor {
    let shape = [dim(rng), dim(rng) + extra_cols];
    rand_tensor(rng, &shape, lo, hi)
}

/// `sum(out * w)` for a fixed random `w`, so every output entry matters.
fn project(tape: &Tape, out: Var, w: &Tensor) -> Result<Var, AutodiffError> {
    let wv = tape.constant(w.clone());
    tape.sum(tape.mul(out, wv)?)
}

fn check<F>(f: F, x: &Tensor) -> f64
where
    F: Fn(&Tape, Var) -> Result<Var, AutodiffError>,
{
    finite_difference_check(f, x, STEP).expect("gradient check runs")
}

fn instance(rng: &mut ChaCha8Rng, name: &str) -> f64 {
    match name {
        "matmul" => {
            let (m, k, n) = (dim(rng), dim(rng), dim(rng));
            let (ta, tb) = (rng.gen_bool(0.5), rng.gen_bool(0.5));
            let a = rand_tensor(rng, &if ta { [k, m] } else { [m, k] }, -1.0, 1.0);
            let b = rand_tensor(rng, &if tb { [n, k] } else { [k, n] }, -1.0, 1.0);
            let w = rand_tensor(rng, &[m, n], -1.0, 1.0);
            let op = |t: &Tape, a: Var, b: Var| match (ta, tb) {
                (false, false) => t.matmul(a, b),
                (false, true) => t.matmul_nt(a, b),
                _ => t.apply(
                    fable_core::autodiff::Primitive::MatMul {
                        trans_a: ta,
                        trans_b: tb,
                    },
                    &[a, b],
                ),
            };
            let ea = check(|t, x| project(t, op(t, x, t.constant(b.clone()))?, &w), &a);
            let eb = check(|t, x| project(t, op(t, t.constant(a.clone()), x)?, &w), &b);
            ea.max(eb)
        }
        "add" | "mul" => {
            let (r, c) = (dim(rng), dim(rng));
            let a = rand_tensor(rng, &[r, c], -2.0, 2.0);
            let b = if name == "add" && rng.gen_bool(0.5) {
                rand_tensor(rng, &[c], -2.0, 2.0)
            } else {
                rand_tensor(rng, &[r, c], -2.0, 2.0)
            };
            let w = rand_tensor(rng, &[r, c], -1.0, 1.0);
            let add = name == "add";
            let op = move |t: &Tape, a: Var, b: Var| if add { t.add(a, b) } else { t.mul(a, b) };
            let ea = check(|t, x| project(t, op(t, x, t.constant(b.clone()))?, &w), &a);
            let eb = check(|t, x| project(t, op(t, t.constant(a.clone()), x)?, &w), &b);
            ea.max(eb)
        }
        "scale" => {
            let a = random_matrix(rng, 0, -2.0, 2.0);
            let c = rng.gen_range(-3.0..3.0);
            let w = rand_tensor(rng, a.shape(), -1.0, 1.0);
            check(|t, x| project(t, t.scale(x, c)?, &w), &a)
        }
        "softmax" => {
            let a = random_matrix(rng, 1, -3.0, 3.0);
            let w = rand_tensor(rng, a.shape(), -1.0, 1.0);
            check(|t, x| project(t, t.softmax(x)?, &w), &a)
        }
        "layer_norm" => {
            let (r, d) = (dim(rng), dim(rng) + 1);
            let x = rand_tensor(rng, &[r, d], -2.0, 2.0);
            let g = rand_tensor(rng, &[d], 0.5, 1.5);
            let b = rand_tensor(rng, &[d], -0.5, 0.5);
            let w = rand_tensor(rng, &[r, d], -1.0, 1.0);
            let eps = 1e-5;
            let ex = check(
                |t, v| {
                    project(
                        t,
                        t.layer_norm(v, t.constant(g.clone()), t.constant(b.clone()), eps)?,
                        &w,
                    )
                },
                &x,
            );
            let eg = check(
                |t, v| {
                    project(
                        t,
                        t.layer_norm(t.constant(x.clone()), v, t.constant(b.clone()), eps)?,
                        &w,
                    )
                },
                &g,
            );
            let eb = check(
                |t, v| {
                    project(
                        t,
                        t.layer_norm(t.constant(x.clone()), t.constant(g.clone()), v, eps)?,
                        &w,
                    )
                },
                &b,
            );
            ex.max(eg).max(eb)
        }
        "gelu" => {
            let a = random_matrix(rng, 0, -4.0, 4.0);
            let w = rand_tensor(rng, a.shape(), -1.0, 1.0);
            check(|t, x| project(t, t.gelu(x)?, &w), &a)
        }
        "embedding" => {
            let (v, d) = (dim(rng) + 1, dim(rng));
            let table = rand_tensor(rng, &[v, d], -1.0, 1.0);
            let ids: Vec<usize> = (0..dim(rng) + 1).map(|_| rng.gen_range(0..v)).collect();
            let w = rand_tensor(rng, &[ids.len(), d], -1.0, 1.0);
            check(|t, x| project(t, t.embedding(x, &ids)?, &w), &table)
        }
        "concat" => {
            let axis = rng.gen_range(0..2);
            let (r, c) = (dim(rng), dim(rng));
            let a = rand_tensor(rng, &[r, c], -1.0, 1.0);
            let other_shape = if axis == 0 {
                [dim(rng), c]
            } else {
                [r, dim(rng)]
            };
            let b = rand_tensor(rng, &other_shape, -1.0, 1.0);
            let out_shape = if axis == 0 {
                [r + other_shape[0], c]
            } else {
                [r, c + other_shape[1]]
            };
            let w = rand_tensor(rng, &out_shape, -1.0, 1.0);
            let ea = check(
                |t, x| project(t, t.concat(&[x, t.constant(b.clone())], axis)?, &w),
                &a,
            );
            let eb = check(
                |t, x| project(t, t.concat(&[t.constant(a.clone()), x], axis)?, &w),
                &b,
            );
            ea.max(eb)
        }
        "slice" => {
            let axis = rng.gen_range(0..2);
            let shape = [dim(rng) + 1, dim(rng) + 1];
            let a = rand_tensor(rng, &shape, -1.0, 1.0);
            let start = rng.gen_range(0..shape[axis]);
            let len = rng.gen_range(1..=shape[axis] - start);
            let mut out = shape;
            out[axis] = len;
            let w = rand_tensor(rng, &out, -1.0, 1.0);
            check(|t, x| project(t, t.slice(x, axis, start, len)?, &w), &a)
        }
        "sum" => {
            let a = random_matrix(rng, 0, -1.0, 1.0);
            let c = rng.gen_range(0.5..2.0);
            check(|t, x| t.scale(t.sum(x)?, c), &a)
        }
        "mean" => {
            let a = random_matrix(rng, 0, -1.0, 1.0);
            let c = rng.gen_range(0.5..2.0);
            check(|t, x| t.scale(t.mean(x)?, c), &a)
        }
        "squared_norm" => {
            let a = random_matrix(rng, 0, -2.0, 2.0);
            check(|t, x| t.squared_norm(x), &a)
        }
        "nll" => {
            let (r, c) = (dim(rng), dim(rng) + 1);
            let p = rand_tensor(rng, &[r, c], 0.05, 1.0);
            let targets: Vec<(usize, usize)> = (0..dim(rng))
                .map(|_| (rng.gen_range(0..r), rng.gen_range(0..c)))
                .collect();
            check(|t, x| t.nll(x, targets.clone()), &p)
        }
        other => panic!("no generator for {other}"),
    }
}

pub const PRIMITIVES: [&str; 14] = [
    "matmul",
    "add",
    "mul",
    "scale",
    "softmax",
    "layer_norm",
    "gelu",
    "embedding",
    "concat",
    "slice",
    "sum",
    "mean",
    "squared_norm",
    "nll",
];

pub fn run(instances: usize, seed: u64) -> Vec<PrimitiveResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    PRIMITIVES
        .iter()
        .map(|&name| {
            let worst = (0..instances)
                .map(|_| instance(&mut rng, name))
                .fold(0.0, f64::max);
            PrimitiveResult {
                name,
                instances,
                worst,
            }
        })
        .collect()
}

/// Gradient of a random two-layer perceptron loss with respect to every
/// weight.
pub fn mlp_worst(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = rand_tensor(&mut rng, &[4, 3], -1.0, 1.0);
    let w1 = rand_tensor(&mut rng, &[3, 6], -1.0, 1.0);
    let b1 = rand_tensor(&mut rng, &[6], -0.5, 0.5);
    let w2 = rand_tensor(&mut rng, &[6, 5], -1.0, 1.0);
    let targets = vec![(0, 1), (1, 4), (2, 0), (3, 2)];
    let f = |which: usize| {
        let (x, w1, b1, w2, targets) = (
            x.clone(),
            w1.clone(),
            b1.clone(),
            w2.clone(),
            targets.clone(),
        );
        move |t: &Tape, v: Var| {
            let pick = |i: usize, val: &Tensor| {
                if i == which {
                    v
                } else {
                    t.constant(val.clone())
                }
            };
            let h = t.gelu(t.add(t.matmul(t.constant(x.clone()), pick(0, &w1))?, pick(1, &b1))?)?;
            let p = t.softmax(t.matmul(h, pick(2, &w2))?)?;
            t.nll(p, targets.clone())
        }
    };
    [check(f(0), &w1), check(f(1), &b1), check(f(2), &w2)]
        .into_iter()
        .fold(0.0, f64::max)
}
