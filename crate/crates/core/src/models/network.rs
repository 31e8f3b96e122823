use crate::autodiff::{Graph, Var};
use crate::error::ModelError;
use crate::linalg::Matrix;
use crate::models::heads::LikelihoodHead;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Relu,
    Identity,
}

impl Activation {
    fn apply<S: Scalar>(self, x: S) -> S {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(S::zero()),
            Activation::Identity => x,
        }
    }

    pub(crate) fn apply_node<S: Scalar>(self, g: &mut Graph<S>, x: Var) -> Var {
        match self {
            Activation::Tanh => g.tanh(x),
            Activation::Relu => g.relu(x),
            Activation::Identity => x,
        }
    }
}

/// Fully connected network with a linear output layer feeding a likelihood head.
///
/// `widths = [d_in, h_1, ..., h_k, d_out]`; `activations` has one entry per
/// hidden layer. Parameters are laid out layer by layer, each layer as its
/// `out × in` weight matrix (row-major) followed by `out` biases.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkSpec {
    pub widths: Vec<usize>,
    pub activations: Vec<Activation>,
    pub head: LikelihoodHead,
}

/// Per-unit multiplier applied to hidden activations (dropout masks).
/// Arguments are the hidden layer index and the unit index.
pub type UnitMask<'a, S> = &'a mut dyn FnMut(usize, usize) -> S;

impl NetworkSpec {
    pub fn new(widths: Vec<usize>, activations: Vec<Activation>, head: LikelihoodHead) -> Result<Self, ModelError> {
        let spec = Self {
            widths,
            activations,
            head,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.widths.len() < 2 {
            return Err(ModelError::Config("network needs an input and an output width".into()));
        }
        if self.widths.contains(&0) {
            return Err(ModelError::Config("layer widths must be at least 1".into()));
        }
        if self.activations.len() != self.widths.len() - 2 {
            return Err(ModelError::Config(format!(
                "{} hidden layers but {} activations",
                self.widths.len() - 2,
                self.activations.len()
            )));
        }
        self.head.validate()?;
        if !self.head.accepts_output_width(self.output_width()) {
            return Err(ModelError::Config(format!(
                "output width {} does not fit the {} head",
                self.output_width(),
                self.head.name()
            )));
        }
        Ok(())
    }

    pub fn input_width(&self) -> usize {
        self.widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.widths.last().expect("validated")
    }

    pub fn n_layers(&self) -> usize {
        self.widths.len() - 1
    }

    /// `n_w = Σ (in + 1) · out`.
    pub fn param_count(&self) -> usize {
        self.widths.windows(2).map(|w| (w[0] + 1) * w[1]).sum()
    }

    /// Offset of layer `l`'s weight block; biases follow at `+ out·in`.
    pub fn layer_offset(&self, l: usize) -> usize {
        self.widths.windows(2).take(l).map(|w| (w[0] + 1) * w[1]).sum()
    }

    fn check_params(&self, n: usize) -> Result<(), ModelError> {
        if n != self.param_count() {
            return Err(ModelError::Config(format!(
                "parameter vector has length {n}, network needs {}",
                self.param_count()
            )));
        }
        Ok(())
    }

    /// Records the forward pass for one input row on `g` and returns the
    /// output nodes. `params` are the graph nodes holding the weights.
    pub fn build<S: Scalar>(
        &self,
        g: &mut Graph<S>,
        params: &[Var],
        input: &[S],
        mut mask: Option<UnitMask<'_, S>>,
    ) -> Result<Vec<Var>, ModelError> {
        self.check_params(params.len())?;
        if input.len() != self.input_width() {
            return Err(ModelError::Config(format!(
                "input has {} columns, network expects {}",
                input.len(),
                self.input_width()
            )));
        }
        let mut act: Vec<Var> = input.iter().map(|&x| g.constant(x)).collect();
        for l in 0..self.n_layers() {
            let (n_in, n_out) = (self.widths[l], self.widths[l + 1]);
            let off = self.layer_offset(l);
            let hidden = l + 1 < self.n_layers();
            let mut next = Vec::with_capacity(n_out);
            for j in 0..n_out {
                let row = &params[off + j * n_in..off + (j + 1) * n_in];
                let pre = g.dot(row, &act);
                let mut a = g.add(pre, params[off + n_out * n_in + j]);
                if hidden {
                    a = self.activations[l].apply_node(g, a);
                    if let Some(m) = mask.as_mut() {
                        let factor = m(l, j);
                        if factor != S::one() {
                            a = g.scale(a, factor);
                        }
                    }
                }
                next.push(a);
            }
            act = next;
        }
        Ok(act)
    }

    /// Plain numeric forward pass for one row.
    pub fn forward_row<S: Scalar>(
        &self,
        params: &[S],
        input: &[S],
        mut mask: Option<UnitMask<'_, S>>,
    ) -> Result<Vec<S>, ModelError> {
        self.check_params(params.len())?;
        if input.len() != self.input_width() {
            return Err(ModelError::Config(format!(
                "input has {} columns, network expects {}",
                input.len(),
                self.input_width()
            )));
        }
        let mut act = input.to_vec();
        for l in 0..self.n_layers() {
            let (n_in, n_out) = (self.widths[l], self.widths[l + 1]);
            let off = self.layer_offset(l);
            let hidden = l + 1 < self.n_layers();
            let mut next = Vec::with_capacity(n_out);
            for j in 0..n_out {
                let row = &params[off + j * n_in..off + (j + 1) * n_in];
                let mut a = crate::linalg::dot(row, &act) + params[off + n_out * n_in + j];
                if hidden {
                    a = self.activations[l].apply(a);
                    if let Some(m) = mask.as_mut() {
                        a = a * m(l, j);
                    }
                }
                next.push(a);
            }
            act = next;
        }
        Ok(act)
    }
}

/// Network outputs `r` for every input row.
pub fn mlp_forward<S: Scalar>(spec: &NetworkSpec, params: &[S], inputs: &Matrix<S>) -> Result<Matrix<S>, ModelError> {
    let mut out = Matrix::zeros(inputs.rows(), spec.output_width());
    for (i, row) in inputs.iter_rows().enumerate() {
        let r = spec.forward_row(params, row, None)?;
        out.row_mut(i).copy_from_slice(&r);
    }
    Ok(out)
}
