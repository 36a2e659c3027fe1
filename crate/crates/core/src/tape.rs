//! Scalar reverse-mode differentiation.
//!
//! Model and logic code is written once against [`Ops`]. Running it with
//! [`Plain`] computes values only; running it with a [`GradTape`] records a
//! Wengert list whose leaves are the model parameters, so that
//! [`GradTape::gradient`] returns d(output)/d(theta).

use std::sync::atomic::{AtomicU32, Ordering};

use crate::error::{Error, Result};

pub trait Ops {
    type V: Copy + std::fmt::Debug;

    fn constant(&mut self, c: f64) -> Self::V;
    /// The j-th model parameter.
    fn param(&mut self, j: usize) -> Self::V;
    fn value(&self, v: Self::V) -> f64;

    fn add(&mut self, a: Self::V, b: Self::V) -> Self::V;
    fn sub(&mut self, a: Self::V, b: Self::V) -> Self::V;
    fn mul(&mut self, a: Self::V, b: Self::V) -> Self::V;
    fn div(&mut self, a: Self::V, b: Self::V) -> Self::V;
    /// `k * a + c` for constants `k` and `c`.
    fn lin(&mut self, a: Self::V, k: f64, c: f64) -> Self::V;
    fn exp(&mut self, a: Self::V) -> Self::V;
    fn ln(&mut self, a: Self::V) -> Self::V;
    fn tanh(&mut self, a: Self::V) -> Self::V;
    fn sigmoid(&mut self, a: Self::V) -> Self::V;
    /// Identity on `[lo, hi]`; outside it, the clamped constant.
    fn clamp(&mut self, a: Self::V, lo: f64, hi: f64) -> Self::V;
    fn sum(&mut self, xs: &[Self::V]) -> Self::V;

    /// `sum_i theta[w + i] * xs[i] + theta[bias]`, with constant inputs.
    fn affine_const(&mut self, w: usize, xs: &[f64], bias: usize) -> Self::V;
    /// `sum_i theta[w + i] * xs[i] + theta[bias]`.
    fn affine(&mut self, w: usize, xs: &[Self::V], bias: usize) -> Self::V;

    fn one_minus(&mut self, a: Self::V) -> Self::V {
        self.lin(a, -1.0, 1.0)
    }

    /// A constant carrying the current value of `a`; no gradient flows back.
    fn detach(&mut self, a: Self::V) -> Self::V {
        let v = self.value(a);
        self.constant(v)
    }

    fn softmax(&mut self, zs: &[Self::V]) -> Vec<Self::V> {
        // Shifting by a constant leaves both the value and the Jacobian
        // unchanged.
        let shift = zs
            .iter()
            .map(|&z| self.value(z))
            .fold(f64::NEG_INFINITY, f64::max);
        let es: Vec<_> = zs
            .iter()
            .map(|&z| {
                let s = self.lin(z, 1.0, -shift);
                self.exp(s)
            })
            .collect();
        let total = self.sum(&es);
        es.into_iter().map(|e| self.div(e, total)).collect()
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Value-only evaluation against a parameter slice.
#[derive(Debug, Clone, Copy)]
pub struct Plain<'a> {
    theta: &'a [f64],
}

impl<'a> Plain<'a> {
    pub fn new(theta: &'a [f64]) -> Self {
        Plain { theta }
    }
}

impl Ops for Plain<'_> {
    type V = f64;

    fn constant(&mut self, c: f64) -> f64 {
        c
    }
    fn param(&mut self, j: usize) -> f64 {
        self.theta[j]
    }
    fn value(&self, v: f64) -> f64 {
        v
    }
    fn add(&mut self, a: f64, b: f64) -> f64 {
        a + b
    }
    fn sub(&mut self, a: f64, b: f64) -> f64 {
        a - b
    }
    fn mul(&mut self, a: f64, b: f64) -> f64 {
        a * b
    }
    fn div(&mut self, a: f64, b: f64) -> f64 {
        a / b
    }
    fn lin(&mut self, a: f64, k: f64, c: f64) -> f64 {
        k * a + c
    }
    fn exp(&mut self, a: f64) -> f64 {
        a.exp()
    }
    fn ln(&mut self, a: f64) -> f64 {
        a.ln()
    }
    fn tanh(&mut self, a: f64) -> f64 {
        a.tanh()
    }
    fn sigmoid(&mut self, a: f64) -> f64 {
        sigmoid(a)
    }
    fn clamp(&mut self, a: f64, lo: f64, hi: f64) -> f64 {
        a.clamp(lo, hi)
    }
    fn sum(&mut self, xs: &[f64]) -> f64 {
        xs.iter().sum()
    }
    fn affine_const(&mut self, w: usize, xs: &[f64], bias: usize) -> f64 {
        dot(&self.theta[w..w + xs.len()], xs) + self.theta[bias]
    }
    fn affine(&mut self, w: usize, xs: &[f64], bias: usize) -> f64 {
        dot(&self.theta[w..w + xs.len()], xs) + self.theta[bias]
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

static NEXT_TAPE: AtomicU32 = AtomicU32::new(1);

/// A value recorded on a [`GradTape`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Var {
    tape: u32,
    index: u32,
    value: f64,
}

impl Var {
    pub fn value(&self) -> f64 {
        self.value
    }
}

/// Recorded computation graph. Nodes `0..n_params` are the parameters.
#[derive(Debug)]
pub struct GradTape {
    id: u32,
    n_params: usize,
    values: Vec<f64>,
    // Per node: range into `edges`.
    spans: Vec<(u32, u32)>,
    edges: Vec<(u32, f64)>,
}

impl GradTape {
    pub fn new(theta: &[f64]) -> Self {
        let n = theta.len();
        GradTape {
            id: NEXT_TAPE.fetch_add(1, Ordering::Relaxed),
            n_params: n,
            values: theta.to_vec(),
            spans: vec![(0, 0); n],
            edges: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn n_params(&self) -> usize {
        self.n_params
    }

    fn push(&mut self, value: f64, edges: &[(Var, f64)]) -> Var {
        let start = self.edges.len() as u32;
        for &(v, d) in edges {
            debug_assert_eq!(v.tape, self.id);
            self.edges.push((v.index, d));
        }
        self.spans.push((start, edges.len() as u32));
        self.values.push(value);
        Var {
            tape: self.id,
            index: (self.values.len() - 1) as u32,
            value,
        }
    }

    fn leaf(&self, j: usize) -> Var {
        Var {
            tape: self.id,
            index: j as u32,
            value: self.values[j],
        }
    }

    /// d(output)/d(theta) by reverse accumulation.
    pub fn gradient(&self, output: Var) -> Result<Vec<f64>> {
        if output.tape != self.id || output.index as usize >= self.values.len() {
            return Err(Error::NotOnTape);
        }
        let top = output.index as usize;
        let mut adjoint = vec![0.0; top + 1];
        adjoint[top] = 1.0;
        for node in (self.n_params..=top).rev() {
            let a = adjoint[node];
            if a == 0.0 {
                continue;
            }
            let (start, len) = self.spans[node];
            for &(parent, d) in &self.edges[start as usize..(start + len) as usize] {
                adjoint[parent as usize] += a * d;
            }
        }
        adjoint.resize(self.n_params.max(top + 1), 0.0);
        adjoint.truncate(self.n_params);
        Ok(adjoint)
    }
}

impl Ops for GradTape {
    type V = Var;

    fn constant(&mut self, c: f64) -> Var {
        self.push(c, &[])
    }
    fn param(&mut self, j: usize) -> Var {
        self.leaf(j)
    }
    fn value(&self, v: Var) -> f64 {
        v.value
    }
    fn add(&mut self, a: Var, b: Var) -> Var {
        self.push(a.value + b.value, &[(a, 1.0), (b, 1.0)])
    }
    fn sub(&mut self, a: Var, b: Var) -> Var {
        self.push(a.value - b.value, &[(a, 1.0), (b, -1.0)])
    }
    fn mul(&mut self, a: Var, b: Var) -> Var {
        self.push(a.value * b.value, &[(a, b.value), (b, a.value)])
    }
    fn div(&mut self, a: Var, b: Var) -> Var {
        let q = a.value / b.value;
        self.push(q, &[(a, 1.0 / b.value), (b, -q / b.value)])
    }
    fn lin(&mut self, a: Var, k: f64, c: f64) -> Var {
        self.push(k * a.value + c, &[(a, k)])
    }
    fn exp(&mut self, a: Var) -> Var {
        let e = a.value.exp();
        self.push(e, &[(a, e)])
    }
    fn ln(&mut self, a: Var) -> Var {
        self.push(a.value.ln(), &[(a, 1.0 / a.value)])
    }
    fn tanh(&mut self, a: Var) -> Var {
        let t = a.value.tanh();
        self.push(t, &[(a, 1.0 - t * t)])
    }
    fn sigmoid(&mut self, a: Var) -> Var {
        let s = sigmoid(a.value);
        self.push(s, &[(a, s * (1.0 - s))])
    }
    fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        if a.value < lo {
            self.constant(lo)
        } else if a.value > hi {
            self.constant(hi)
        } else {
            a
        }
    }
    fn sum(&mut self, xs: &[Var]) -> Var {
        let total = xs.iter().map(|x| x.value).sum();
        let edges: Vec<_> = xs.iter().map(|&x| (x, 1.0)).collect();
        self.push(total, &edges)
    }
    fn affine_const(&mut self, w: usize, xs: &[f64], bias: usize) -> Var {
        let mut edges = Vec::with_capacity(xs.len() + 1);
        let mut total = self.values[bias];
        for (i, &x) in xs.iter().enumerate() {
            total += self.values[w + i] * x;
            edges.push((self.leaf(w + i), x));
        }
        edges.push((self.leaf(bias), 1.0));
        self.push(total, &edges)
    }
    fn affine(&mut self, w: usize, xs: &[Var], bias: usize) -> Var {
        let mut edges = Vec::with_capacity(2 * xs.len() + 1);
        let mut total = self.values[bias];
        for (i, &x) in xs.iter().enumerate() {
            let wi = self.values[w + i];
            total += wi * x.value;
            edges.push((self.leaf(w + i), x.value));
            edges.push((x, wi));
        }
        edges.push((self.leaf(bias), 1.0));
        self.push(total, &edges)
    }
}
