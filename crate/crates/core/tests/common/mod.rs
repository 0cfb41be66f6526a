//! Helpers shared by the integration tests.
#![allow(dead_code)]

use lowlight::tensor::{Tape, Tensor, Var};
use lowlight::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub mod grad;
pub mod oracle;

pub const FD_STEP: f64 = 1e-5;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut impl Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
}

/// Relative error `|a - n| / max(|a|, |n|)` between analytic and central
/// finite-difference gradients of `f` at `x`, measured as vector norms over
/// `probes` random coordinates (all coordinates when `probes` is `None`).
pub fn grad_error(
    x: &Tensor,
    probes: Option<usize>,
    rng: &mut impl Rng,
    f: impl for<'t> Fn(&'t Tape, Var<'t>) -> Result<Var<'t>>,
) -> f64 {
    let tape = Tape::new();
    let xv = tape.param(x);
    let out = f(&tape, xv).expect("forward");
    let analytic = tape.backward(out).expect("backward").get(xv).expect("gradient").clone();

    let coords: Vec<usize> = match probes {
        Some(k) if k < x.len() => (0..k).map(|_| rng.random_range(0..x.len())).collect(),
        _ => (0..x.len()).collect(),
    };
    let eval = |t: &Tensor| {
        let tape = Tape::new();
        let v = tape.constant(t);
        f(&tape, v).expect("forward").value().item().expect("scalar")
    };
    let (mut diff, mut na, mut nn) = (0.0f64, 0.0f64, 0.0f64);
    for &i in &coords {
        let mut plus = x.clone();
        plus.data_mut()[i] += FD_STEP;
        let mut minus = x.clone();
        minus.data_mut()[i] -= FD_STEP;
        let numeric = (eval(&plus) - eval(&minus)) / (2.0 * FD_STEP);
        let a = analytic.data()[i];
        diff += (a - numeric).powi(2);
        na += a * a;
        nn += numeric * numeric;
    }
    let scale = na.sqrt().max(nn.sqrt());
    if scale == 0.0 {
        0.0
    } else {
        diff.sqrt() / scale
    }
}

/// Contracts `v` with a fixed random tensor so any op becomes a scalar.
pub fn project<'t>(v: Var<'t>, seed: u64) -> Result<Var<'t>> {
    let shape = v.shape();
    let mut r = rng(seed);
    let w = uniform(&mut r, &shape, -1.0, 1.0);
    Ok(v.mul(v.tape().constant(&w))?.sum())
}
