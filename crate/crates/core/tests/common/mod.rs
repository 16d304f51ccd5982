#![allow(dead_code)]

pub mod suites;

use dmgcrn::dmgcn::GraphSet;
use dmgcrn::graph::GraphKind;
use dmgcrn::params::{Bindings, ParamStore};
use dmgcrn::region::{partition_by_quadrant, PositionTable};
use dmgcrn::tape::{Tape, Var};
use dmgcrn::{Result, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-6;
pub const GRAD_TOL: f64 = 1e-4;

/// `|a - n| / max(|a|, |n|, 1e-3)`; the floor keeps near-zero entries from
/// turning finite-difference noise into large ratios.
pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

/// Scalar `Σ w ⊙ out` with fixed pseudo-random weights, so every output entry matters.
pub fn project(tape: &mut Tape, out: Var, seed: u64) -> Result<Var> {
    let shape = tape.shape(out).to_vec();
    let w = random_tensor(&shape, -1.0, 1.0, &mut rng(seed ^ 0x5eed));
    let w = tape.leaf(&w)?;
    let prod = tape.mul(out, w)?;
    tape.sum(prod)
}

/// Largest relative error between backward and central differences over
/// every entry of every input.
pub fn gradcheck(inputs: &[Tensor], f: impl Fn(&mut Tape, &[Var]) -> Result<Var>) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.shape(), t.data().to_vec()).unwrap()).collect();
    let loss = f(&mut tape, &vars).unwrap();
    let grads = tape.backward(loss).unwrap();
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| grads.get(v).map_or_else(|| vec![0.0; t.numel()], <[f64]>::to_vec))
        .collect();
    let eval = |xs: &[Tensor]| {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|t| tape.constant(t.shape(), t.data().to_vec()).unwrap()).collect();
        let loss = f(&mut tape, &vars).unwrap();
        tape.scalar_value(loss).unwrap()
    };
    let mut worst: f64 = 0.0;
    for (i, t) in inputs.iter().enumerate() {
        for (k, &a) in analytic[i].iter().enumerate() {
            let mut xs = inputs.to_vec();
            xs[i].data_mut()[k] = t.data()[k] + FD_STEP;
            let up = eval(&xs);
            xs[i].data_mut()[k] = t.data()[k] - FD_STEP;
            let down = eval(&xs);
            worst = worst.max(rel_error(a, (up - down) / (2.0 * FD_STEP)));
        }
    }
    worst
}

/// Like [`gradcheck`] but over the named tensors of a parameter store, probing
/// at most `per_tensor` entries of each.
pub fn param_gradcheck(
    store: &ParamStore,
    per_tensor: usize,
    f: impl Fn(&mut Tape, &ParamStore) -> Result<(Var, Bindings)>,
) -> (f64, usize) {
    let mut tape = Tape::new();
    let (loss, bindings) = f(&mut tape, store).unwrap();
    let grads = tape.backward(loss).unwrap();
    let eval = |s: &ParamStore| {
        let mut tape = Tape::new();
        let (loss, _) = f(&mut tape, s).unwrap();
        tape.scalar_value(loss).unwrap()
    };
    let mut worst: f64 = 0.0;
    let mut probed = 0;
    for (name, t) in store.iter() {
        let analytic = grads
            .get(bindings.get(name).unwrap())
            .map_or_else(|| vec![0.0; t.numel()], <[f64]>::to_vec);
        let stride = (t.numel() / per_tensor).max(1);
        for k in (0..t.numel()).step_by(stride).take(per_tensor) {
            let mut s = store.clone();
            s.get_mut(name).unwrap().data_mut()[k] += FD_STEP;
            let up = eval(&s);
            s.get_mut(name).unwrap().data_mut()[k] -= 2.0 * FD_STEP;
            let down = eval(&s);
            worst = worst.max(rel_error(analytic[k], (up - down) / (2.0 * FD_STEP)));
            probed += 1;
        }
    }
    (worst, probed)
}

pub fn random_adjacency(n: usize, p: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n * n)
        .map(|i| if i / n != i % n && rng.gen_bool(p) { 1.0 } else { 0.0 })
        .collect()
}

pub fn random_positions(n: usize, rng: &mut ChaCha8Rng) -> PositionTable {
    PositionTable::new(2, (0..2 * n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Random distance and latent graphs split by quadrant.
pub fn random_graphs(n: usize, seed: u64) -> GraphSet {
    let mut r = rng(seed);
    let (ad, al) = (random_adjacency(n, 0.4, &mut r), random_adjacency(n, 0.4, &mut r));
    let (pd, pl) = (random_positions(n, &mut r), random_positions(n, &mut r));
    GraphSet {
        distance: partition_by_quadrant(&ad, n, &pd, GraphKind::Distance).unwrap(),
        latent: Some(partition_by_quadrant(&al, n, &pl, GraphKind::Latent).unwrap()),
    }
}

/// Moves every mask entry away from one so mask gradients are exercised.
pub fn jitter_masks(store: &mut ParamStore, seed: u64) {
    let mut r = rng(seed);
    for (name, t) in store.iter_mut() {
        if name.ends_with(".mask") {
            t.data_mut().iter_mut().for_each(|v| *v = r.gen_range(0.6..1.4));
        }
    }
}
