//! Independent oracles shared by the integration and acceptance tests.
#![allow(dead_code)]

pub mod criteria;
pub mod gradcases;

use smiles_diffusion::model::{ModelConfig, Parameters};
use smiles_diffusion::tensor::{Graph, Tensor, Var};

/// Every string of length `0..=max_len` over `alphabet`, shortest first.
pub fn all_strings(alphabet: &[char], max_len: usize) -> Vec<String> {
    let mut out = vec![String::new()];
    let mut layer = vec![String::new()];
    for _ in 0..max_len {
        let mut next = Vec::with_capacity(layer.len() * alphabet.len());
        for s in &layer {
            for &c in alphabet {
                let mut t = s.clone();
                t.push(c);
                next.push(t);
            }
        }
        out.extend(next.iter().cloned());
        layer = next;
    }
    out
}

/// Recursive-descent validity check for strings over `C O N ( ) 1 =`.
///
/// Grammar: `chain := atom (bond? atom | bond? ring | '(' bond? chain ')')*`,
/// where a ring digit may not directly follow a closed branch. Digit `1`
/// alternately opens and closes a ring bond; closing onto the opening atom
/// or onto an existing bond is rejected. An atom is valid when its bond
/// order sum does not exceed its largest permitted valence.
pub fn validator_oracle(s: &str) -> bool {
    let mut o = Oracle {
        s: s.chars().collect(),
        pos: 0,
        max_valence: Vec::new(),
        bonds: Vec::new(),
        ring: None,
    };
    if o.chain(None, 1).is_none() || o.pos != o.s.len() || o.ring.is_some() {
        return false;
    }
    let mut used = vec![0u32; o.max_valence.len()];
    for &(a, b, order) in &o.bonds {
        used[a] += order;
        used[b] += order;
    }
    used.iter().zip(&o.max_valence).all(|(u, m)| u <= m)
}

struct Oracle {
    s: Vec<char>,
    pos: usize,
    max_valence: Vec<u32>,
    bonds: Vec<(usize, usize, u32)>,
    ring: Option<(usize, Option<u32>)>,
}

impl Oracle {
    fn peek(&self) -> Option<char> {
        self.s.get(self.pos).copied()
    }

    fn take_atom(&mut self) -> Option<usize> {
        let v = match self.peek()? {
            'C' => 4,
            'N' => 3,
            'O' => 2,
            _ => return None,
        };
        self.pos += 1;
        self.max_valence.push(v);
        Some(self.max_valence.len() - 1)
    }

    fn ring_bond(&mut self, atom: usize, order: Option<u32>) -> Option<()> {
        match self.ring.take() {
            None => self.ring = Some((atom, order)),
            Some((other, first)) => {
                if other == atom
                    || self
                        .bonds
                        .iter()
                        .any(|&(a, b, _)| (a, b) == (other, atom) || (b, a) == (other, atom))
                {
                    return None;
                }
                let order = match (first, order) {
                    (Some(a), Some(b)) if a != b => return None,
                    (Some(a), _) | (None, Some(a)) => a,
                    (None, None) => 1,
                };
                self.bonds.push((other, atom, order));
            }
        }
        Some(())
    }

    fn chain(&mut self, parent: Option<usize>, order: u32) -> Option<()> {
        let mut cur = self.take_atom()?;
        if let Some(p) = parent {
            self.bonds.push((p, cur, order));
        }
        let mut after_branch = false;
        loop {
            match self.peek() {
                None | Some(')') => return Some(()),
                Some('(') => {
                    self.pos += 1;
                    let order = if self.peek() == Some('=') {
                        self.pos += 1;
                        2
                    } else {
                        1
                    };
                    self.chain(Some(cur), order)?;
                    if self.peek() != Some(')') {
                        return None;
                    }
                    self.pos += 1;
                    after_branch = true;
                }
                Some('1') => {
                    if after_branch {
                        return None;
                    }
                    self.pos += 1;
                    self.ring_bond(cur, None)?;
                }
                Some('=') => {
                    self.pos += 1;
                    if self.peek() == Some('1') {
                        if after_branch {
                            return None;
                        }
                        self.pos += 1;
                        self.ring_bond(cur, Some(2))?;
                    } else {
                        let next = self.take_atom()?;
                        self.bonds.push((cur, next, 2));
                        cur = next;
                        after_branch = false;
                    }
                }
                Some(_) => {
                    let next = self.take_atom()?;
                    self.bonds.push((cur, next, 1));
                    cur = next;
                    after_branch = false;
                }
            }
        }
    }
}

/// Posterior `q(x_{t-1} | x_t, x_0)` coefficients by completing the square
/// of `N(x_{t-1}; √ᾱ_{t-1} x_0, 1-ᾱ_{t-1}) · N(x_t; √α_t x_{t-1}, 1-α_t)`.
pub fn bayes_posterior(ab_prev: f64, ab: f64) -> (f64, f64, f64) {
    if ab_prev == 1.0 {
        return (1.0, 0.0, 0.0);
    }
    let alpha = ab / ab_prev;
    let beta = 1.0 - alpha;
    let prior_var = 1.0 - ab_prev;
    let precision = 1.0 / prior_var + alpha / beta;
    let var = 1.0 / precision;
    let c0 = var * ab_prev.sqrt() / prior_var;
    let ct = var * alpha.sqrt() / beta;
    (c0, ct, var)
}

pub fn rel_err(got: f64, want: f64) -> f64 {
    if got == want {
        0.0
    } else {
        (got - want).abs() / want.abs().max(got.abs())
    }
}

pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        vocab_size: 8,
        text_vocab_size: 9,
        seq_len: 5,
        emb_dim: 4,
        hidden: 8,
        layers: 2,
        heads: 2,
        text_dim: 6,
        text_len: 7,
        total_steps: 50,
    }
}

/// Worst relative error between analytic and central-difference gradients.
#[derive(Debug, Clone, Copy)]
pub struct GradCheck {
    pub max_rel: f64,
    pub checked: usize,
}

/// Relative error with a small absolute floor, so entries whose true
/// gradient is zero compare on absolute error.
pub fn grad_rel(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Compares gradients of the scalar built by `f` with respect to every
/// entry (up to `per_tensor` evenly spaced entries) of the named
/// parameters. `None` for `names` means every parameter.
pub fn check_params(
    params: &Parameters<f64>,
    names: Option<&[&str]>,
    per_tensor: usize,
    h: f64,
    f: &dyn Fn(&mut Graph<f64>, &Parameters<f64>) -> Var,
) -> GradCheck {
    let mut g = Graph::new();
    let loss = f(&mut g, params);
    let grads = g.backward(loss).expect("backward");
    let eval = |p: &Parameters<f64>| {
        let mut g = Graph::new();
        let l = f(&mut g, p);
        g.value(l).item()
    };
    let mut work = params.clone();
    let mut out = GradCheck {
        max_rel: 0.0,
        checked: 0,
    };
    let all: Vec<String> = params.names().to_vec();
    for name in &all {
        if let Some(list) = names {
            if !list.contains(&name.as_str()) {
                continue;
            }
        }
        let id = params.id(name);
        let n = params.get(name).numel();
        let stride = (n / per_tensor.max(1)).max(1);
        for k in (0..n).step_by(stride).take(per_tensor) {
            let orig = work.get(name).data()[k];
            work.get_mut(name).data_mut()[k] = orig + h;
            let up = eval(&work);
            work.get_mut(name).data_mut()[k] = orig - h;
            let down = eval(&work);
            work.get_mut(name).data_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * h);
            let analytic = grads.param(id).map(|t| t.data()[k]).unwrap_or(0.0);
            out.max_rel = out.max_rel.max(grad_rel(analytic, numeric));
            out.checked += 1;
        }
    }
    out
}

/// Gradient check with respect to a differentiable input tensor.
pub fn check_input(
    x: &Tensor<f64>,
    h: f64,
    f: &dyn Fn(&mut Graph<f64>, Var) -> Var,
) -> GradCheck {
    let mut g = Graph::new();
    let xv = g.input(x.clone());
    let loss = f(&mut g, xv);
    let grads = g.backward(loss).expect("backward");
    let analytic = grads.wrt(xv).expect("input gradient").clone();
    let eval = |t: &Tensor<f64>| {
        let mut g = Graph::new();
        let xv = g.input(t.clone());
        let l = f(&mut g, xv);
        g.value(l).item()
    };
    let mut work = x.clone();
    let mut out = GradCheck {
        max_rel: 0.0,
        checked: 0,
    };
    for k in 0..x.numel() {
        let orig = work.data()[k];
        work.data_mut()[k] = orig + h;
        let up = eval(&work);
        work.data_mut()[k] = orig - h;
        let down = eval(&work);
        work.data_mut()[k] = orig;
        let numeric = (up - down) / (2.0 * h);
        out.max_rel = out.max_rel.max(grad_rel(analytic.data()[k], numeric));
        out.checked += 1;
    }
    out
}
