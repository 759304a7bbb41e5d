//! Scalar reverse-mode differentiation for small per-element kernels.
//!
//! The spline and mixture transforms are written once, generic over [`Real`],
//! and evaluated either on plain `f64` or on [`Ad`] values recorded to a
//! thread-local tape. [`jacobian`] runs a kernel on `Ad` inputs and returns the
//! dense Jacobian of its outputs, which the tensor [`Graph`](super::Graph)
//! consumes through its row-map node.

use std::cell::RefCell;
use std::ops::{Add, Div, Mul, Neg, Sub};

/// Arithmetic needed by the transform kernels.
pub trait Real:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    fn cst(v: f64) -> Self;
    fn val(self) -> f64;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sqrt(self) -> Self;
    fn sigmoid(self) -> Self;
    /// `log σ(x)`, stable for large `|x|`.
    fn ln_sigmoid(self) -> Self;

    fn max_val(self, other: Self) -> Self {
        if self.val() >= other.val() {
            self
        } else {
            other
        }
    }
}

pub(crate) fn sigmoid_f64(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn ln_sigmoid_f64(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

impl Real for f64 {
    fn cst(v: f64) -> Self {
        v
    }
    fn val(self) -> f64 {
        self
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn ln(self) -> Self {
        f64::ln(self)
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn sigmoid(self) -> Self {
        sigmoid_f64(self)
    }
    fn ln_sigmoid(self) -> Self {
        ln_sigmoid_f64(self)
    }
}

const NONE: u32 = u32::MAX;

#[derive(Clone, Copy)]
struct Node {
    a: u32,
    da: f64,
    b: u32,
    db: f64,
}

thread_local! {
    static TAPE: RefCell<Vec<Node>> = const { RefCell::new(Vec::new()) };
}

/// A scalar recorded on the thread-local tape. Constants carry no node.
#[derive(Clone, Copy, Debug)]
pub struct Ad {
    idx: u32,
    v: f64,
}

fn push(a: u32, da: f64, b: u32, db: f64, v: f64) -> Ad {
    if a == NONE && b == NONE {
        return Ad { idx: NONE, v };
    }
    TAPE.with(|t| {
        let mut t = t.borrow_mut();
        t.push(Node { a, da, b, db });
        Ad { idx: (t.len() - 1) as u32, v }
    })
}

impl Ad {
    fn unary(self, v: f64, d: f64) -> Ad {
        push(self.idx, d, NONE, 0.0, v)
    }
}

impl Add for Ad {
    type Output = Ad;
    fn add(self, o: Ad) -> Ad {
        push(self.idx, 1.0, o.idx, 1.0, self.v + o.v)
    }
}

impl Sub for Ad {
    type Output = Ad;
    fn sub(self, o: Ad) -> Ad {
        push(self.idx, 1.0, o.idx, -1.0, self.v - o.v)
    }
}

impl Mul for Ad {
    type Output = Ad;
    fn mul(self, o: Ad) -> Ad {
        push(self.idx, o.v, o.idx, self.v, self.v * o.v)
    }
}

impl Div for Ad {
    type Output = Ad;
    fn div(self, o: Ad) -> Ad {
        let q = self.v / o.v;
        push(self.idx, 1.0 / o.v, o.idx, -q / o.v, q)
    }
}

impl Neg for Ad {
    type Output = Ad;
    fn neg(self) -> Ad {
        self.unary(-self.v, -1.0)
    }
}

impl Real for Ad {
    fn cst(v: f64) -> Self {
        Ad { idx: NONE, v }
    }
    fn val(self) -> f64 {
        self.v
    }
    fn exp(self) -> Self {
        let e = self.v.exp();
        self.unary(e, e)
    }
    fn ln(self) -> Self {
        self.unary(self.v.ln(), 1.0 / self.v)
    }
    fn sqrt(self) -> Self {
        let s = self.v.sqrt();
        self.unary(s, 0.5 / s)
    }
    fn sigmoid(self) -> Self {
        let s = sigmoid_f64(self.v);
        self.unary(s, s * (1.0 - s))
    }
    fn ln_sigmoid(self) -> Self {
        self.unary(ln_sigmoid_f64(self.v), sigmoid_f64(-self.v))
    }
}

/// Evaluate `f` at `inputs` and return `(outputs, jacobian)`; the Jacobian is
/// row-major `outputs.len() × inputs.len()`.
///
/// Kernels must not call `jacobian` recursively.
pub fn jacobian<F>(inputs: &[f64], f: F) -> (Vec<f64>, Vec<f64>)
where
    F: FnOnce(&[Ad]) -> Vec<Ad>,
{
    let n_in = inputs.len();
    TAPE.with(|t| {
        let mut t = t.borrow_mut();
        t.clear();
        t.extend((0..n_in).map(|_| Node { a: NONE, da: 0.0, b: NONE, db: 0.0 }));
    });
    let vars: Vec<Ad> = inputs.iter().enumerate().map(|(i, &v)| Ad { idx: i as u32, v }).collect();
    let outs = f(&vars);
    let values: Vec<f64> = outs.iter().map(|o| o.v).collect();
    let mut jac = vec![0.0; outs.len() * n_in];
    TAPE.with(|t| {
        let t = t.borrow();
        let mut adj = vec![0.0; t.len()];
        for (r, out) in outs.iter().enumerate() {
            if out.idx == NONE {
                continue;
            }
            let top = out.idx as usize;
            adj[..=top].iter_mut().for_each(|a| *a = 0.0);
            adj[top] = 1.0;
            for i in (n_in..=top).rev() {
                let g = adj[i];
                if g == 0.0 {
                    continue;
                }
                let n = t[i];
                if n.a != NONE {
                    adj[n.a as usize] += g * n.da;
                }
                if n.b != NONE {
                    adj[n.b as usize] += g * n.db;
                }
            }
            jac[r * n_in..(r + 1) * n_in].copy_from_slice(&adj[..n_in]);
        }
    });
    TAPE.with(|t| t.borrow_mut().clear());
    (values, jac)
}

/// Derivative of a scalar kernel, `(f(x), f'(x))`.
pub fn derivative<F>(x: f64, f: F) -> (f64, f64)
where
    F: FnOnce(Ad) -> Ad,
{
    let (v, j) = jacobian(&[x], |xs| vec![f(xs[0])]);
    (v[0], j[0])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_derivative() {
        let (v, d) = derivative(3.0, |x| x * x);
        assert_eq!(v, 9.0);
        assert_eq!(d, 6.0);
    }

    #[test]
    fn jacobian_of_two_outputs() {
        let (v, j) = jacobian(&[2.0, 5.0], |x| vec![x[0] * x[1], x[0] / x[1] + Ad::cst(1.0)]);
        assert_eq!(v, vec![10.0, 1.4]);
        assert_eq!(j[0], 5.0);
        assert_eq!(j[1], 2.0);
        assert!((j[2] - 0.2).abs() < 1e-15);
        assert!((j[3] + 2.0 / 25.0).abs() < 1e-15);
    }

    #[test]
    fn ln_sigmoid_is_stable() {
        assert!((ln_sigmoid_f64(-800.0) + 800.0).abs() < 1e-12);
        assert!(ln_sigmoid_f64(800.0).abs() < 1e-300);
        let (_, d) = derivative(0.3, |x| x.ln_sigmoid());
        assert!((d - sigmoid_f64(-0.3)).abs() < 1e-15);
    }

    #[test]
    fn constant_output_has_zero_row() {
        let (v, j) = jacobian(&[1.0], |_| vec![Ad::cst(4.0)]);
        assert_eq!(v, vec![4.0]);
        assert_eq!(j, vec![0.0]);
    }
}
