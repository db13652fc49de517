//! Recurrent cells: the standard LSTM and the entity-aware variant whose
//! input gate is a function of static attributes only, computed once per
//! sequence and held fixed across time steps.
//!
//! Both cells run in sequence-to-value mode: a window of `T` daily input
//! vectors produces one scalar prediction from a linear head on `h[T]`.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellVariant {
    /// Standard LSTM. When the input carries static attributes they are
    /// concatenated to the dynamic vector at every time step.
    Lstm,
    /// Entity-aware LSTM: input gate `i = sigmoid(W_i x_s + b_i)` from the
    /// static vector alone, no recurrent term, constant over the sequence.
    Ealstm,
}

impl CellVariant {
    pub fn as_str(&self) -> &'static str {
        match self {
            CellVariant::Lstm => "lstm",
            CellVariant::Ealstm => "ealstm",
        }
    }
}

/// Architecture dimensions. `static_dim == 0` means the model consumes no
/// static attributes (only meaningful for the standard LSTM).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchDims {
    pub variant: CellVariant,
    pub hidden_size: usize,
    pub dynamic_dim: usize,
    pub static_dim: usize,
}

impl ArchDims {
    /// Width of the per-step input consumed by the f/g/o gates
    /// (and the i gate of the standard LSTM).
    pub fn step_input_dim(&self) -> usize {
        match self.variant {
            CellVariant::Lstm => self.dynamic_dim + self.static_dim,
            CellVariant::Ealstm => self.dynamic_dim,
        }
    }

    /// Width of the input-gate weight matrix.
    pub fn input_gate_dim(&self) -> usize {
        match self.variant {
            CellVariant::Lstm => self.step_input_dim(),
            CellVariant::Ealstm => self.static_dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_size == 0 {
            return Err(Error::Config("hidden_size must be positive".into()));
        }
        if self.dynamic_dim == 0 {
            return Err(Error::Config("dynamic_dim must be positive".into()));
        }
        if self.variant == CellVariant::Ealstm && self.static_dim == 0 {
            return Err(Error::Config(
                "static_dim must be positive for the ealstm variant".into(),
            ));
        }
        Ok(())
    }
}

/// All learnable arrays of one cell plus the linear prediction head.
///
/// Canonical array order (used by initialization, the optimizer and the
/// checkpoint container): w_i, u_i (standard LSTM only), b_i, w_f, u_f,
/// b_f, w_g, u_g, b_g, w_o, u_o, b_o, head_w, head_b.
#[derive(Debug, Clone, PartialEq)]
pub struct CellParameters {
    pub dims: ArchDims,
    pub w_i: Array2<f64>,
    /// Recurrent input-gate weights; absent for the entity-aware variant,
    /// whose input gate has no recurrent term.
    pub u_i: Option<Array2<f64>>,
    pub b_i: Array1<f64>,
    pub w_f: Array2<f64>,
    pub u_f: Array2<f64>,
    pub b_f: Array1<f64>,
    pub w_g: Array2<f64>,
    pub u_g: Array2<f64>,
    pub b_g: Array1<f64>,
    pub w_o: Array2<f64>,
    pub u_o: Array2<f64>,
    pub b_o: Array1<f64>,
    pub head_w: Array1<f64>,
    pub head_b: f64,
}

/// Hidden and cell state at one time step. Zero-initialized at t=0.
#[derive(Debug, Clone)]
pub struct CellState {
    pub hidden: Array1<f64>,
    pub cell: Array1<f64>,
}

impl CellState {
    pub fn zeros(hidden_size: usize) -> Self {
        CellState {
            hidden: Array1::zeros(hidden_size),
            cell: Array1::zeros(hidden_size),
        }
    }
}

/// One input window: `T x dynamic_dim` standardized forcings plus an
/// optional standardized static attribute vector.
#[derive(Debug, Clone)]
pub struct SequenceInput {
    pub dynamic: Array2<f64>,
    pub static_attrs: Option<Array1<f64>>,
}

impl SequenceInput {
    pub fn len(&self) -> usize {
        self.dynamic.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.dynamic.nrows() == 0
    }
}

/// Gate and state values of a single step, kept for the backward pass and
/// for tests.
#[derive(Debug, Clone)]
pub struct StepRecord {
    pub i: Array1<f64>,
    pub f: Array1<f64>,
    pub g: Array1<f64>,
    pub o: Array1<f64>,
    pub c: Array1<f64>,
    pub h: Array1<f64>,
    pub tanh_c: Array1<f64>,
}

/// Full forward record: every step plus the head output. For the
/// entity-aware variant `input_gate` holds the one fixed gate vector
/// (duplicated into each step record for a uniform per-step view).
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub steps: Vec<StepRecord>,
    pub input_gate: Option<Array1<f64>>,
    pub prediction: f64,
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

// Tight slice kernels for the per-step gate algebra. The matrices here are
// small (hidden x input width), where explicit loops beat generic dot
// dispatch and avoid per-step temporaries.
pub(crate) mod linops {
    use ndarray::Array2;

    /// dst = W x
    pub fn matvec_into(dst: &mut [f64], w: &Array2<f64>, x: &[f64]) {
        let cols = x.len();
        debug_assert_eq!(w.ncols(), cols);
        debug_assert_eq!(w.nrows(), dst.len());
        let ws = w.as_slice().expect("standard layout");
        for (r, out) in dst.iter_mut().enumerate() {
            let row = &ws[r * cols..(r + 1) * cols];
            let mut acc = 0.0;
            for (a, b) in row.iter().zip(x) {
                acc += a * b;
            }
            *out = acc;
        }
    }

    /// dst += W x
    pub fn matvec_acc(dst: &mut [f64], w: &Array2<f64>, x: &[f64]) {
        let cols = x.len();
        debug_assert_eq!(w.ncols(), cols);
        debug_assert_eq!(w.nrows(), dst.len());
        let ws = w.as_slice().expect("standard layout");
        for (r, out) in dst.iter_mut().enumerate() {
            let row = &ws[r * cols..(r + 1) * cols];
            let mut acc = 0.0;
            for (a, b) in row.iter().zip(x) {
                acc += a * b;
            }
            *out += acc;
        }
    }

    /// dst += W^T x, walking W row-major.
    pub fn matvec_t_acc(dst: &mut [f64], w: &Array2<f64>, x: &[f64]) {
        let cols = dst.len();
        debug_assert_eq!(w.ncols(), cols);
        debug_assert_eq!(w.nrows(), x.len());
        let ws = w.as_slice().expect("standard layout");
        for (r, xr) in x.iter().enumerate() {
            let row = &ws[r * cols..(r + 1) * cols];
            for (out, a) in dst.iter_mut().zip(row) {
                *out += a * xr;
            }
        }
    }

    /// acc += u (outer) v
    pub fn outer_acc(acc: &mut Array2<f64>, u: &[f64], v: &[f64]) {
        let cols = v.len();
        debug_assert_eq!(acc.nrows(), u.len());
        debug_assert_eq!(acc.ncols(), cols);
        let accs = acc.as_slice_mut().expect("standard layout");
        for (r, uv) in u.iter().enumerate() {
            let row = &mut accs[r * cols..(r + 1) * cols];
            for (dst, vv) in row.iter_mut().zip(v) {
                *dst += uv * vv;
            }
        }
    }
}

impl CellParameters {
    /// Shape-check every array against `dims`, naming the first offending
    /// array and dimension.
    pub fn validate_shapes(&self) -> Result<()> {
        self.dims.validate()?;
        let h = self.dims.hidden_size;
        let gate_in = self.dims.input_gate_dim();
        let step_in = self.dims.step_input_dim();

        let check2 = |name: &str, a: &Array2<f64>, rows: usize, cols: usize| -> Result<()> {
            if a.nrows() != rows || a.ncols() != cols {
                return Err(Error::Config(format!(
                    "{} has shape {}x{}, expected {}x{}",
                    name,
                    a.nrows(),
                    a.ncols(),
                    rows,
                    cols
                )));
            }
            Ok(())
        };
        let check1 = |name: &str, a: &Array1<f64>, len: usize| -> Result<()> {
            if a.len() != len {
                return Err(Error::Config(format!(
                    "{} has length {}, expected {}",
                    name,
                    a.len(),
                    len
                )));
            }
            Ok(())
        };

        check2("w_i", &self.w_i, h, gate_in)?;
        match (self.dims.variant, &self.u_i) {
            (CellVariant::Lstm, Some(u_i)) => check2("u_i", u_i, h, h)?,
            (CellVariant::Lstm, None) => {
                return Err(Error::Config("u_i missing for the lstm variant".into()))
            }
            (CellVariant::Ealstm, Some(_)) => {
                return Err(Error::Config(
                    "u_i present for the ealstm variant, whose input gate has no recurrence".into(),
                ))
            }
            (CellVariant::Ealstm, None) => {}
        }
        check1("b_i", &self.b_i, h)?;
        check2("w_f", &self.w_f, h, step_in)?;
        check2("u_f", &self.u_f, h, h)?;
        check1("b_f", &self.b_f, h)?;
        check2("w_g", &self.w_g, h, step_in)?;
        check2("u_g", &self.u_g, h, h)?;
        check1("b_g", &self.b_g, h)?;
        check2("w_o", &self.w_o, h, step_in)?;
        check2("u_o", &self.u_o, h, h)?;
        check1("b_o", &self.b_o, h)?;
        check1("head_w", &self.head_w, h)?;
        Ok(())
    }

    /// Total number of scalar parameters.
    pub fn parameter_count(&self) -> usize {
        self.param_slices().iter().map(|s| s.len()).sum()
    }

    /// All parameter arrays as flat slices, in canonical order.
    pub(crate) fn param_slices(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::with_capacity(14);
        out.push(self.w_i.as_slice().expect("standard layout"));
        if let Some(u_i) = &self.u_i {
            out.push(u_i.as_slice().expect("standard layout"));
        }
        out.push(self.b_i.as_slice().expect("standard layout"));
        out.push(self.w_f.as_slice().expect("standard layout"));
        out.push(self.u_f.as_slice().expect("standard layout"));
        out.push(self.b_f.as_slice().expect("standard layout"));
        out.push(self.w_g.as_slice().expect("standard layout"));
        out.push(self.u_g.as_slice().expect("standard layout"));
        out.push(self.b_g.as_slice().expect("standard layout"));
        out.push(self.w_o.as_slice().expect("standard layout"));
        out.push(self.u_o.as_slice().expect("standard layout"));
        out.push(self.b_o.as_slice().expect("standard layout"));
        out.push(self.head_w.as_slice().expect("standard layout"));
        out.push(std::slice::from_ref(&self.head_b));
        out
    }

    pub(crate) fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::with_capacity(14);
        out.push(self.w_i.as_slice_mut().expect("standard layout"));
        if let Some(u_i) = &mut self.u_i {
            out.push(u_i.as_slice_mut().expect("standard layout"));
        }
        out.push(self.b_i.as_slice_mut().expect("standard layout"));
        out.push(self.w_f.as_slice_mut().expect("standard layout"));
        out.push(self.u_f.as_slice_mut().expect("standard layout"));
        out.push(self.b_f.as_slice_mut().expect("standard layout"));
        out.push(self.w_g.as_slice_mut().expect("standard layout"));
        out.push(self.u_g.as_slice_mut().expect("standard layout"));
        out.push(self.b_g.as_slice_mut().expect("standard layout"));
        out.push(self.w_o.as_slice_mut().expect("standard layout"));
        out.push(self.u_o.as_slice_mut().expect("standard layout"));
        out.push(self.b_o.as_slice_mut().expect("standard layout"));
        out.push(self.head_w.as_slice_mut().expect("standard layout"));
        out.push(std::slice::from_mut(&mut self.head_b));
        out
    }

    /// Array names in canonical order, matching `param_slices`.
    pub(crate) fn param_names(&self) -> Vec<&'static str> {
        let mut names = vec!["w_i"];
        if self.u_i.is_some() {
            names.push("u_i");
        }
        names.extend([
            "b_i", "w_f", "u_f", "b_f", "w_g", "u_g", "b_g", "w_o", "u_o", "b_o", "head_w",
            "head_b",
        ]);
        names
    }
}

/// Deterministic parameter initialization: weights uniform in
/// `+-1/sqrt(hidden_size)`, forget-gate bias +3 so early training keeps
/// long memory, all other biases zero.
pub fn init_parameters(dims: ArchDims, seed: u64) -> Result<CellParameters> {
    dims.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = dims.hidden_size;
    let bound = 1.0 / (h as f64).sqrt();
    // Draw order is part of the determinism contract: weight matrices in
    // canonical order, row-major, then the head.
    let mut mat = |rows: usize, cols: usize| -> Array2<f64> {
        Array2::from_shape_fn((rows, cols), |_| rng.random_range(-bound..bound))
    };

    let w_i = mat(h, dims.input_gate_dim());
    let u_i = match dims.variant {
        CellVariant::Lstm => Some(mat(h, h)),
        CellVariant::Ealstm => None,
    };
    let step_in = dims.step_input_dim();
    let w_f = mat(h, step_in);
    let u_f = mat(h, h);
    let w_g = mat(h, step_in);
    let u_g = mat(h, h);
    let w_o = mat(h, step_in);
    let u_o = mat(h, h);
    let head_w = Array1::from_shape_fn(h, |_| rng.random_range(-bound..bound));

    Ok(CellParameters {
        dims,
        w_i,
        u_i,
        b_i: Array1::zeros(h),
        w_f,
        u_f,
        b_f: Array1::from_elem(h, 3.0),
        w_g,
        u_g,
        b_g: Array1::zeros(h),
        w_o,
        u_o,
        b_o: Array1::zeros(h),
        head_w,
        head_b: 0.0,
    })
}

fn check_input(params: &CellParameters, input: &SequenceInput) -> Result<()> {
    if input.dynamic.nrows() == 0 {
        return Err(Error::Config("sequence length T must be >= 1".into()));
    }
    let dims = &params.dims;
    match dims.variant {
        CellVariant::Lstm => {
            if input.dynamic.ncols() != dims.dynamic_dim {
                return Err(Error::Config(format!(
                    "dynamic input has {} columns, expected dynamic_dim {}",
                    input.dynamic.ncols(),
                    dims.dynamic_dim
                )));
            }
            match (&input.static_attrs, dims.static_dim) {
                (None, 0) => {}
                (Some(xs), n) if xs.len() == n && n > 0 => {}
                (Some(xs), n) => {
                    return Err(Error::Config(format!(
                        "static vector has length {}, expected static_dim {}",
                        xs.len(),
                        n
                    )))
                }
                (None, n) => {
                    return Err(Error::Data(format!(
                        "input error: static vector absent but static_dim is {}",
                        n
                    )))
                }
            }
        }
        CellVariant::Ealstm => {
            if input.dynamic.ncols() != dims.dynamic_dim {
                return Err(Error::Config(format!(
                    "dynamic input has {} columns, expected dynamic_dim {}",
                    input.dynamic.ncols(),
                    dims.dynamic_dim
                )));
            }
            match &input.static_attrs {
                Some(xs) if xs.len() == dims.static_dim => {}
                Some(xs) => {
                    return Err(Error::Config(format!(
                        "static vector has length {}, expected static_dim {}",
                        xs.len(),
                        dims.static_dim
                    )))
                }
                None => {
                    return Err(Error::Data(
                        "input error: static vector absent for ealstm forward".into(),
                    ))
                }
            }
        }
    }
    Ok(())
}

/// Shared forward pass. `dropout_mask`, when given, is an inverted-dropout
/// mask (entries 0 or 1/keep) applied to `h[T]` before the head; inference
/// passes `None`.
pub(crate) fn forward_inner(
    params: &CellParameters,
    input: &SequenceInput,
    dropout_mask: Option<&Array1<f64>>,
) -> Result<ForwardTrace> {
    check_input(params, input)?;
    let h_size = params.dims.hidden_size;
    let t_len = input.dynamic.nrows();

    // Entity-aware input gate: one sigmoid of the static vector, reused at
    // every step.
    let fixed_gate: Option<Array1<f64>> = match params.dims.variant {
        CellVariant::Ealstm => {
            let xs = input.static_attrs.as_ref().expect("checked above");
            let mut a = params.w_i.dot(xs);
            a += &params.b_i;
            Some(a.mapv(sigmoid))
        }
        CellVariant::Lstm => None,
    };

    let mut state = CellState::zeros(h_size);
    let mut steps: Vec<StepRecord> = Vec::with_capacity(t_len);

    // Step input for the standard LSTM: dynamic row, with the static
    // vector concatenated when present.
    let concat_static =
        matches!(params.dims.variant, CellVariant::Lstm) && params.dims.static_dim > 0;
    let mut x_buf = vec![0.0; params.dims.step_input_dim()];
    if concat_static {
        let xs = input.static_attrs.as_ref().expect("checked above");
        for (j, v) in xs.iter().enumerate() {
            x_buf[params.dims.dynamic_dim + j] = *v;
        }
    }
    let dyn_dim = params.dims.dynamic_dim;
    let dyn_rows: Option<&[f64]> = input.dynamic.as_slice();

    for t in 0..t_len {
        match dyn_rows {
            Some(rows) => x_buf[..dyn_dim].copy_from_slice(&rows[t * dyn_dim..(t + 1) * dyn_dim]),
            None => {
                for (j, v) in input.dynamic.row(t).iter().enumerate() {
                    x_buf[j] = *v;
                }
            }
        }
        let x_step: &[f64] = &x_buf;
        let h_prev = state.hidden.as_slice().expect("standard layout");

        let i: Array1<f64> = match &fixed_gate {
            Some(gate) => gate.clone(),
            None => {
                let mut a = vec![0.0; h_size];
                linops::matvec_into(&mut a, &params.w_i, x_step);
                linops::matvec_acc(&mut a, params.u_i.as_ref().expect("lstm has u_i"), h_prev);
                for (v, b) in a.iter_mut().zip(params.b_i.iter()) {
                    *v = sigmoid(*v + b);
                }
                Array1::from_vec(a)
            }
        };
        let mut f = vec![0.0; h_size];
        linops::matvec_into(&mut f, &params.w_f, x_step);
        linops::matvec_acc(&mut f, &params.u_f, h_prev);
        for (v, b) in f.iter_mut().zip(params.b_f.iter()) {
            *v = sigmoid(*v + b);
        }
        let mut g = vec![0.0; h_size];
        linops::matvec_into(&mut g, &params.w_g, x_step);
        linops::matvec_acc(&mut g, &params.u_g, h_prev);
        for (v, b) in g.iter_mut().zip(params.b_g.iter()) {
            *v = (*v + b).tanh();
        }
        let mut o = vec![0.0; h_size];
        linops::matvec_into(&mut o, &params.w_o, x_step);
        linops::matvec_acc(&mut o, &params.u_o, h_prev);
        for (v, b) in o.iter_mut().zip(params.b_o.iter()) {
            *v = sigmoid(*v + b);
        }

        let mut c = vec![0.0; h_size];
        let mut tanh_c = vec![0.0; h_size];
        let mut h = vec![0.0; h_size];
        let c_prev = state.cell.as_slice().expect("standard layout");
        let mut finite = true;
        for j in 0..h_size {
            c[j] = f[j] * c_prev[j] + i[j] * g[j];
            tanh_c[j] = c[j].tanh();
            h[j] = o[j] * tanh_c[j];
            finite &= c[j].is_finite() && h[j].is_finite();
        }
        if !finite {
            return Err(Error::Numeric(format!(
                "non-finite state at step {}",
                t + 1
            )));
        }

        let c = Array1::from_vec(c);
        let h = Array1::from_vec(h);
        state.cell = c.clone();
        state.hidden = h.clone();
        steps.push(StepRecord {
            i,
            f: Array1::from_vec(f),
            g: Array1::from_vec(g),
            o: Array1::from_vec(o),
            c,
            h,
            tanh_c: Array1::from_vec(tanh_c),
        });
    }

    let head_in: Array1<f64> = match dropout_mask {
        Some(mask) => &state.hidden * mask,
        None => state.hidden.clone(),
    };
    let prediction = params.head_w.dot(&head_in) + params.head_b;
    if !prediction.is_finite() {
        return Err(Error::Numeric("non-finite head output".into()));
    }

    Ok(ForwardTrace {
        steps,
        input_gate: fixed_gate,
        prediction,
    })
}

/// Forward pass of the standard LSTM. Static attributes, when present in
/// the input, are concatenated to the dynamic vector at every step.
/// Returns the head output from `h[T]` plus the full per-step trace.
pub fn lstm_forward(params: &CellParameters, input: &SequenceInput) -> Result<(f64, ForwardTrace)> {
    if params.dims.variant != CellVariant::Lstm {
        return Err(Error::Config(
            "lstm_forward called with ealstm parameters".into(),
        ));
    }
    let trace = forward_inner(params, input, None)?;
    Ok((trace.prediction, trace))
}

/// Forward pass of the entity-aware LSTM. Also returns the fixed input
/// gate vector, the model's embedding of the static attributes.
pub fn ealstm_forward(
    params: &CellParameters,
    input: &SequenceInput,
) -> Result<(f64, ForwardTrace, Array1<f64>)> {
    if params.dims.variant != CellVariant::Ealstm {
        return Err(Error::Config(
            "ealstm_forward called with lstm parameters".into(),
        ));
    }
    let trace = forward_inner(params, input, None)?;
    let gate = trace.input_gate.clone().expect("ealstm trace has a gate");
    Ok((trace.prediction, trace, gate))
}

/// Variant-dispatching forward, returning only the prediction.
pub fn predict(params: &CellParameters, input: &SequenceInput) -> Result<f64> {
    Ok(forward_inner(params, input, None)?.prediction)
}
