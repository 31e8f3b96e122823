//! Reverse-mode automatic differentiation over flat parameter vectors.
//!
//! A [`Graph`] is an append-only list of nodes in topological order. Building
//! the graph records operations only; [`Graph::forward`] binds a parameter
//! vector and fills the cached node values, and [`Graph::gradient`] runs the
//! reverse sweep. The same topology can be re-evaluated with fresh parameters.

mod fd;

pub use fd::{finite_difference_check, finite_difference_check_fn};

use crate::error::AdError;
use crate::scalar::{sigmoid, softplus, Scalar};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Op<S> {
    Constant(S),
    Param(usize),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Neg(Var),
    Exp(Var),
    Log(Var),
    Tanh(Var),
    Relu(Var),
    Abs(Var),
    Softplus(Var),
    Erfc(Var),
    Recip(Var),
    Sqrt(Var),
    /// One element of a matrix product: `Σ a_i b_i`.
    Dot(Vec<Var>, Vec<Var>),
    Sum(Vec<Var>),
    LogSumExp(Vec<Var>),
}

#[derive(Clone, Debug)]
pub struct CompNode<S> {
    pub op: Op<S>,
    pub value: S,
}

/// Computation graph over `n_params` bound parameters.
#[derive(Clone, Debug)]
pub struct Graph<S> {
    nodes: Vec<CompNode<S>>,
    n_params: usize,
    evaluated: bool,
}

impl<S: Scalar> Graph<S> {
    pub fn new(n_params: usize) -> Self {
        Self {
            nodes: Vec::new(),
            n_params,
            evaluated: false,
        }
    }

    pub fn n_params(&self) -> usize {
        self.n_params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[CompNode<S>] {
        &self.nodes
    }

    /// Final node, whose value is the graph output.
    pub fn output(&self) -> Option<Var> {
        self.nodes.len().checked_sub(1).map(Var)
    }

    /// Cached forward value of `v`. Meaningful after [`Graph::forward`].
    pub fn value(&self, v: Var) -> S {
        self.nodes[v.0].value
    }

    fn push(&mut self, op: Op<S>) -> Var {
        let idx = self.nodes.len();
        let check = |v: &Var| assert!(v.0 < idx, "operand {} does not precede node {idx}", v.0);
        match &op {
            Op::Constant(_) => {}
            Op::Param(i) => assert!(*i < self.n_params, "parameter {i} out of range"),
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => {
                check(a);
                check(b);
            }
            Op::Neg(a)
            | Op::Exp(a)
            | Op::Log(a)
            | Op::Tanh(a)
            | Op::Relu(a)
            | Op::Abs(a)
            | Op::Softplus(a)
            | Op::Erfc(a)
            | Op::Recip(a)
            | Op::Sqrt(a) => check(a),
            Op::Dot(a, b) => {
                assert_eq!(a.len(), b.len(), "dot operands differ in length");
                a.iter().chain(b).for_each(check);
            }
            Op::Sum(xs) | Op::LogSumExp(xs) => xs.iter().for_each(check),
        }
        self.evaluated = false;
        self.nodes.push(CompNode { op, value: S::zero() });
        Var(idx)
    }

    pub fn constant(&mut self, c: S) -> Var {
        self.push(Op::Constant(c))
    }

    pub fn param(&mut self, i: usize) -> Var {
        self.push(Op::Param(i))
    }

    /// One node per parameter, in order.
    pub fn params(&mut self) -> Vec<Var> {
        (0..self.n_params).map(|i| self.param(i)).collect()
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.push(Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.push(Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.push(Op::Mul(a, b))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.push(Op::Neg(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.push(Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.push(Op::Log(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.push(Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.push(Op::Relu(a))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.push(Op::Abs(a))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.push(Op::Softplus(a))
    }

    pub fn erfc(&mut self, a: Var) -> Var {
        self.push(Op::Erfc(a))
    }

    pub fn recip(&mut self, a: Var) -> Var {
        self.push(Op::Recip(a))
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        self.push(Op::Sqrt(a))
    }

    pub fn dot(&mut self, a: &[Var], b: &[Var]) -> Var {
        self.push(Op::Dot(a.to_vec(), b.to_vec()))
    }

    pub fn sum(&mut self, xs: &[Var]) -> Var {
        self.push(Op::Sum(xs.to_vec()))
    }

    pub fn log_sum_exp(&mut self, xs: &[Var]) -> Var {
        self.push(Op::LogSumExp(xs.to_vec()))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.mul(a, a)
    }

    pub fn scale(&mut self, a: Var, c: S) -> Var {
        let c = self.constant(c);
        self.mul(a, c)
    }

    pub fn add_const(&mut self, a: Var, c: S) -> Var {
        let c = self.constant(c);
        self.add(a, c)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        let r = self.recip(b);
        self.mul(a, r)
    }

    /// `log σ(x) = -softplus(-x)`.
    pub fn log_sigmoid(&mut self, a: Var) -> Var {
        let na = self.neg(a);
        let sp = self.softplus(na);
        self.neg(sp)
    }

    /// Binds `params` and evaluates every node; returns the final node value.
    pub fn forward(&mut self, params: &[S]) -> Result<S, AdError> {
        if params.len() != self.n_params {
            return Err(AdError::ParamLength {
                expected: self.n_params,
                got: params.len(),
            });
        }
        if let Some(index) = params.iter().position(|p| !p.is_finite()) {
            return Err(AdError::NonFiniteParam { index });
        }
        for idx in 0..self.nodes.len() {
            let value = self.eval_node(idx, params);
            if !value.is_finite() {
                self.evaluated = false;
                return Err(AdError::NumericOverflow { node: idx });
            }
            self.nodes[idx].value = value;
        }
        self.evaluated = true;
        Ok(self.nodes.last().map_or(S::zero(), |n| n.value))
    }

    fn eval_node(&self, idx: usize, params: &[S]) -> S {
        let v = |x: &Var| self.nodes[x.0].value;
        match &self.nodes[idx].op {
            Op::Constant(c) => *c,
            Op::Param(i) => params[*i],
            Op::Add(a, b) => v(a) + v(b),
            Op::Sub(a, b) => v(a) - v(b),
            Op::Mul(a, b) => v(a) * v(b),
            Op::Neg(a) => -v(a),
            Op::Exp(a) => v(a).exp(),
            Op::Log(a) => v(a).ln(),
            Op::Tanh(a) => v(a).tanh(),
            Op::Relu(a) => v(a).max(S::zero()),
            Op::Abs(a) => v(a).abs(),
            Op::Softplus(a) => softplus(v(a)),
            Op::Erfc(a) => v(a).erfc(),
            Op::Recip(a) => v(a).recip(),
            Op::Sqrt(a) => v(a).sqrt(),
            Op::Dot(a, b) => a.iter().zip(b).map(|(x, y)| v(x) * v(y)).sum(),
            Op::Sum(xs) => xs.iter().map(v).sum(),
            Op::LogSumExp(xs) => {
                let vals: Vec<S> = xs.iter().map(v).collect();
                crate::scalar::log_sum_exp(&vals)
            }
        }
    }

    /// Gradient of the final node with respect to every parameter.
    /// Requires a successful [`Graph::forward`] since the last modification.
    pub fn gradient(&self) -> Result<Vec<S>, AdError> {
        match self.output() {
            Some(out) => self.vjp(&[(out, S::one())]),
            None => Ok(vec![S::zero(); self.n_params]),
        }
    }

    /// Forward pass followed by the reverse sweep.
    pub fn value_and_gradient(&mut self, params: &[S]) -> Result<(S, Vec<S>), AdError> {
        let value = self.forward(params)?;
        Ok((value, self.gradient()?))
    }

    /// Vector-Jacobian product: `Σ_k seed_k · ∂node_k/∂params`.
    pub fn vjp(&self, seeds: &[(Var, S)]) -> Result<Vec<S>, AdError> {
        assert!(self.evaluated, "forward must run before the reverse sweep");
        let mut adj = vec![S::zero(); self.nodes.len()];
        for &(v, s) in seeds {
            adj[v.0] = adj[v.0] + s;
        }
        let mut grad = vec![S::zero(); self.n_params];
        let two = S::lit(2.0);
        for idx in (0..self.nodes.len()).rev() {
            let g = adj[idx];
            if g == S::zero() {
                continue;
            }
            if !g.is_finite() {
                return Err(AdError::NumericOverflow { node: idx });
            }
            let y = self.nodes[idx].value;
            let val = |x: &Var| self.nodes[x.0].value;
            match &self.nodes[idx].op {
                Op::Constant(_) => {}
                Op::Param(i) => grad[*i] = grad[*i] + g,
                Op::Add(a, b) => {
                    adj[a.0] = adj[a.0] + g;
                    adj[b.0] = adj[b.0] + g;
                }
                Op::Sub(a, b) => {
                    adj[a.0] = adj[a.0] + g;
                    adj[b.0] = adj[b.0] - g;
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (val(a), val(b));
                    adj[a.0] = adj[a.0] + g * vb;
                    adj[b.0] = adj[b.0] + g * va;
                }
                Op::Neg(a) => adj[a.0] = adj[a.0] - g,
                Op::Exp(a) => adj[a.0] = adj[a.0] + g * y,
                Op::Log(a) => adj[a.0] = adj[a.0] + g / val(a),
                Op::Tanh(a) => adj[a.0] = adj[a.0] + g * (S::one() - y * y),
                Op::Relu(a) => {
                    if val(a) > S::zero() {
                        adj[a.0] = adj[a.0] + g;
                    }
                }
                Op::Abs(a) => {
                    let x = val(a);
                    if x > S::zero() {
                        adj[a.0] = adj[a.0] + g;
                    } else if x < S::zero() {
                        adj[a.0] = adj[a.0] - g;
                    }
                }
                Op::Softplus(a) => adj[a.0] = adj[a.0] + g * sigmoid(val(a)),
                Op::Erfc(a) => {
                    let x = val(a);
                    let d = -two * (-x * x).exp() / S::PI().sqrt();
                    adj[a.0] = adj[a.0] + g * d;
                }
                Op::Recip(a) => adj[a.0] = adj[a.0] - g * y * y,
                Op::Sqrt(a) => adj[a.0] = adj[a.0] + g / (two * y),
                Op::Dot(a, b) => {
                    for (x, z) in a.iter().zip(b) {
                        let (vx, vz) = (val(x), val(z));
                        adj[x.0] = adj[x.0] + g * vz;
                        adj[z.0] = adj[z.0] + g * vx;
                    }
                }
                Op::Sum(xs) => {
                    for x in xs {
                        adj[x.0] = adj[x.0] + g;
                    }
                }
                Op::LogSumExp(xs) => {
                    for x in xs {
                        adj[x.0] = adj[x.0] + g * (val(x) - y).exp();
                    }
                }
            }
        }
        if let Some(index) = grad.iter().position(|x| !x.is_finite()) {
            // Report the parameter node feeding the bad entry.
            let node = self.nodes.iter().position(|n| n.op == Op::Param(index)).unwrap_or(0);
            return Err(AdError::NumericOverflow { node });
        }
        Ok(grad)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_value_and_slope() {
        let mut g = Graph::new(1);
        let x = g.param(0);
        g.square(x);
        let (v, d) = g.value_and_gradient(&[3.0]).unwrap();
        assert_eq!(v, 9.0);
        assert_eq!(d, vec![6.0]);
    }

    #[test]
    fn log_exp_identity() {
        let mut g = Graph::new(1);
        let x = g.param(0);
        let e = g.exp(x);
        g.log(e);
        let v = g.forward(&[1.7]).unwrap();
        assert!((v - 1.7_f64).abs() < 1e-15);
    }

    #[test]
    fn product_plus_term() {
        let mut g = Graph::new(2);
        let x = g.param(0);
        let y = g.param(1);
        let xy = g.mul(x, y);
        g.add(xy, y);
        let (v, d) = g.value_and_gradient(&[2.0, 5.0]).unwrap();
        assert_eq!(v, 15.0);
        assert_eq!(d, vec![5.0, 3.0]);

        let mut g = Graph::new(2);
        let x = g.param(0);
        let y = g.param(1);
        g.mul(x, y);
        assert_eq!(g.value_and_gradient(&[2.0, 5.0]).unwrap().1, vec![5.0, 2.0]);
    }

    #[test]
    fn standard_normal_log_density_slope() {
        let mut g = Graph::new(1);
        let x = g.param(0);
        let sq = g.square(x);
        let half = g.scale(sq, -0.5);
        g.add_const(half, -0.5 * (2.0 * std::f64::consts::PI).ln());
        let (_, d) = g.value_and_gradient(&[1.3]).unwrap();
        assert!((d[0] + 1.3).abs() < 1e-15);
    }

    #[test]
    fn overflow_reports_node() {
        let mut g = Graph::new(1);
        let x = g.param(0);
        let e = g.exp(x);
        g.exp(e);
        assert_eq!(g.forward(&[10.0]), Err(AdError::NumericOverflow { node: 2 }));
        let mut g = Graph::new(1);
        let x = g.param(0);
        g.log(x);
        assert_eq!(g.forward(&[-1.0]), Err(AdError::NumericOverflow { node: 1 }));
    }

    #[test]
    fn rejects_bad_params() {
        let mut g: Graph<f64> = Graph::new(2);
        g.param(0);
        assert!(matches!(g.forward(&[1.0]), Err(AdError::ParamLength { .. })));
        assert_eq!(g.forward(&[f64::NAN, 0.0]), Err(AdError::NonFiniteParam { index: 0 }));
    }

    #[test]
    fn sqrt_at_zero_has_infinite_slope() {
        let mut g = Graph::new(1);
        let x = g.param(0);
        g.sqrt(x);
        g.forward(&[0.0]).unwrap();
        assert!(matches!(g.gradient(), Err(AdError::NumericOverflow { .. })));
    }

    #[test]
    fn erfc_slope() {
        let mut g = Graph::new(1);
        let x = g.param(0);
        g.erfc(x);
        let (_, d) = g.value_and_gradient(&[0.4]).unwrap();
        let expect = -2.0 * (-0.16_f64).exp() / std::f64::consts::PI.sqrt();
        assert!((d[0] - expect).abs() < 1e-15);
    }

    #[test]
    fn reverse_pass_leaves_values_untouched() {
        let mut g = Graph::new(2);
        let p = g.params();
        let t = g.tanh(p[0]);
        let l = g.log_sum_exp(&[t, p[1]]);
        g.softplus(l);
        g.forward(&[0.3, -1.2]).unwrap();
        let before: Vec<f64> = g.nodes().iter().map(|n| n.value).collect();
        g.gradient().unwrap();
        g.gradient().unwrap();
        let after: Vec<f64> = g.nodes().iter().map(|n| n.value).collect();
        assert_eq!(before, after);
    }

    #[test]
    #[should_panic(expected = "out of range")]
    fn param_index_checked() {
        let mut g: Graph<f64> = Graph::new(1);
        g.param(1);
    }

    #[test]
    fn works_in_single_precision() {
        let mut g = Graph::<f32>::new(1);
        let x = g.param(0);
        g.square(x);
        assert_eq!(g.value_and_gradient(&[3.0]).unwrap(), (9.0, vec![6.0]));
    }
}
