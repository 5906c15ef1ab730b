//! Central finite-difference gradient verification.
//!
//! The numerical side only ever evaluates forward passes; it shares no code
//! with the backward rules it checks.

use crate::error::Result;
use crate::param::ParamStore;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct CheckConfig {
    pub step: f64,
    /// Coordinates sampled per checked tensor (all when the tensor is
    /// smaller).
    pub coords: usize,
    /// Denominator floor for the relative error, so that vanishing
    /// gradients are compared absolutely.
    pub floor: f64,
    pub seed: u64,
}

impl Default for CheckConfig {
    fn default() -> Self {
        CheckConfig { step: 1e-4, coords: 20, floor: 1e-6, seed: 0x5eed }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mismatch {
    pub tensor: String,
    pub coord: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Debug, Clone, Default)]
pub struct CheckReport {
    pub checked: usize,
    pub worst: Option<Mismatch>,
    /// Largest |analytic| seen, to tell an all-zero gradient from a real one.
    pub max_abs_grad: f64,
}

impl CheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.worst.as_ref().map_or(0.0, |m| m.rel_err)
    }

    fn record(&mut self, tensor: &str, coord: usize, analytic: f64, numeric: f64, floor: f64) {
        self.checked += 1;
        self.max_abs_grad = self.max_abs_grad.max(analytic.abs());
        let rel_err = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor);
        if self.worst.as_ref().is_none_or(|w| rel_err > w.rel_err) {
            self.worst = Some(Mismatch { tensor: tensor.to_string(), coord, analytic, numeric, rel_err });
        }
    }
}

fn splitmix(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Distinct coordinates in `0..len`, at most `count` of them.
pub fn sample_coords(len: usize, count: usize, seed: u64) -> Vec<usize> {
    if len <= count {
        return (0..len).collect();
    }
    let mut state = seed;
    let mut picked = Vec::with_capacity(count);
    while picked.len() < count {
        let c = (splitmix(&mut state) % len as u64) as usize;
        if !picked.contains(&c) {
            picked.push(c);
        }
    }
    picked
}

fn scalar(tape: &Tape<f64>, v: Var) -> f64 {
    tape.data(v)[0]
}

/// Checks d(loss)/d(input) for every input tensor of `f`.
pub fn check_inputs<F>(inputs: &[Tensor<f64>], cfg: &CheckConfig, f: F) -> Result<CheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.input(t.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    tape.backward(loss)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .map(|&v| tape.grad(v).map_or_else(|| vec![0.0; tape.value(v).len()], <[f64]>::to_vec))
        .collect();

    let eval = |perturbed: &[Tensor<f64>]| -> Result<f64> {
        let mut t = Tape::new();
        let vs: Vec<Var> = perturbed.iter().map(|x| t.input(x.clone())).collect();
        let l = f(&mut t, &vs)?;
        Ok(scalar(&t, l))
    };

    let mut report = CheckReport::default();
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        for c in sample_coords(input.len(), cfg.coords, cfg.seed.wrapping_add(i as u64)) {
            let x0 = input.data()[c];
            work[i].data_mut()[c] = x0 + cfg.step;
            let up = eval(&work)?;
            work[i].data_mut()[c] = x0 - cfg.step;
            let down = eval(&work)?;
            work[i].data_mut()[c] = x0;
            let numeric = (up - down) / (2.0 * cfg.step);
            report.record(&format!("input{i}"), c, analytic[i][c], numeric, cfg.floor);
        }
    }
    Ok(report)
}

/// Checks d(loss)/d(param) for the named parameters of `store`.
pub fn check_params<F>(store: &ParamStore<f64>, names: &[&str], cfg: &CheckConfig, f: F) -> Result<CheckReport>
where
    F: Fn(&mut Tape<f64>, &ParamStore<f64>) -> Result<Var>,
{
    let mut with_grads = store.clone();
    with_grads.zero_grads();
    let mut tape = Tape::new();
    let loss = f(&mut tape, &with_grads)?;
    tape.backward_into(loss, &mut with_grads)?;

    let eval = |s: &ParamStore<f64>| -> Result<f64> {
        let mut t = Tape::new();
        let l = f(&mut t, s)?;
        Ok(scalar(&t, l))
    };

    let mut report = CheckReport::default();
    let mut work = store.clone();
    for (k, name) in names.iter().enumerate() {
        let id = store.id(name)?;
        let len = store.get(id).len();
        let grad = with_grads.get(id).grad().map_or_else(|| vec![0.0; len], <[f64]>::to_vec);
        for c in sample_coords(len, cfg.coords, cfg.seed.wrapping_add(k as u64)) {
            let x0 = store.get(id).data()[c];
            work.get_mut(id).data_mut()[c] = x0 + cfg.step;
            let up = eval(&work)?;
            work.get_mut(id).data_mut()[c] = x0 - cfg.step;
            let down = eval(&work)?;
            work.get_mut(id).data_mut()[c] = x0;
            report.record(name, c, grad[c], (up - down) / (2.0 * cfg.step), cfg.floor);
        }
    }
    Ok(report)
}
