//! Exact backpropagation through time for both cell variants, including
//! gradients with respect to the static attribute vector (used by the
//! analytic sensitivity method) and the dynamic inputs.

use ndarray::{Array1, Array2};

use crate::cell::{forward_inner, CellParameters, CellVariant, SequenceInput};
use crate::error::{Error, Result};

/// Gradients of a scalar objective with respect to every parameter array
/// (shapes mirror `CellParameters`) plus the input gradients of the
/// evaluated window.
#[derive(Debug, Clone)]
pub struct GradientSet {
    pub w_i: Array2<f64>,
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
    /// Gradient w.r.t. the static vector; empty when the model has none.
    pub d_static: Array1<f64>,
    /// Gradient w.r.t. the dynamic inputs, T x dynamic_dim.
    pub d_dynamic: Array2<f64>,
}

impl GradientSet {
    pub fn zeros(params: &CellParameters, t_len: usize) -> Self {
        let dims = &params.dims;
        let h = dims.hidden_size;
        let step_in = dims.step_input_dim();
        GradientSet {
            w_i: Array2::zeros((h, dims.input_gate_dim())),
            u_i: params.u_i.as_ref().map(|_| Array2::zeros((h, h))),
            b_i: Array1::zeros(h),
            w_f: Array2::zeros((h, step_in)),
            u_f: Array2::zeros((h, h)),
            b_f: Array1::zeros(h),
            w_g: Array2::zeros((h, step_in)),
            u_g: Array2::zeros((h, h)),
            b_g: Array1::zeros(h),
            w_o: Array2::zeros((h, step_in)),
            u_o: Array2::zeros((h, h)),
            b_o: Array1::zeros(h),
            head_w: Array1::zeros(h),
            head_b: 0.0,
            d_static: Array1::zeros(dims.static_dim),
            d_dynamic: Array2::zeros((t_len, dims.dynamic_dim)),
        }
    }

    /// Parameter gradients as flat slices, in the canonical array order of
    /// `CellParameters::param_slices`.
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

    fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
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

    /// Add `other` into `self`, element by element (parameter and input
    /// gradients alike). Shapes must match.
    pub fn accumulate(&mut self, other: &GradientSet) {
        for (dst, src) in self
            .param_slices_mut()
            .into_iter()
            .zip(other.param_slices())
        {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += *s;
            }
        }
        self.d_static += &other.d_static;
        self.d_dynamic += &other.d_dynamic;
    }

    /// Multiply every entry by `factor`.
    pub fn scale(&mut self, factor: f64) {
        for slice in self.param_slices_mut() {
            for v in slice {
                *v *= factor;
            }
        }
        self.d_static *= factor;
        self.d_dynamic *= factor;
    }

    /// L2 norm over the parameter gradients (input gradients excluded).
    pub fn param_norm(&self) -> f64 {
        self.param_slices()
            .iter()
            .flat_map(|s| s.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    /// Clip the parameter gradients to a global L2 norm of `max_norm`.
    /// Returns the pre-clip norm.
    pub fn clip_global_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.param_norm();
        if norm > max_norm && norm > 0.0 {
            let factor = max_norm / norm;
            for slice in self.param_slices_mut() {
                for v in slice {
                    *v *= factor;
                }
            }
        }
        norm
    }

    /// Parameter gradients flattened into one vector, canonical order.
    pub fn flat_params(&self) -> Vec<f64> {
        self.param_slices()
            .iter()
            .flat_map(|s| s.iter().copied())
            .collect()
    }

    pub fn all_finite(&self) -> bool {
        self.param_slices()
            .iter()
            .all(|s| s.iter().all(|v| v.is_finite()))
            && self.d_static.iter().all(|v| v.is_finite())
            && self.d_dynamic.iter().all(|v| v.is_finite())
    }
}

/// Reverse pass from a seed gradient `upstream = dL/dprediction`, reusing
/// the recorded forward trace. `dropout_mask` must be the same mask used
/// in the forward pass that produced the trace.
fn bptt(
    params: &CellParameters,
    input: &SequenceInput,
    trace: &crate::cell::ForwardTrace,
    upstream: f64,
    dropout_mask: Option<&Array1<f64>>,
) -> Result<GradientSet> {
    use crate::cell::linops::{matvec_t_acc, outer_acc};

    let dims = &params.dims;
    let h_size = dims.hidden_size;
    let t_len = trace.steps.len();
    let step_in = dims.step_input_dim();
    let mut grads = GradientSet::zeros(params, t_len);

    // Per-step inputs as seen by the f/g/o (and standard-LSTM i) gates:
    // the dynamic row with the static vector appended when concatenated.
    let concat_static = matches!(dims.variant, CellVariant::Lstm) && dims.static_dim > 0;
    let mut x_buf = vec![0.0; step_in];
    if concat_static {
        let xs = input.static_attrs.as_ref().expect("validated in forward");
        for (j, v) in xs.iter().enumerate() {
            x_buf[dims.dynamic_dim + j] = *v;
        }
    }

    let last_h = &trace.steps[t_len - 1].h;
    let head_in: Array1<f64> = match dropout_mask {
        Some(mask) => last_h * mask,
        None => last_h.clone(),
    };
    grads.head_b = upstream;
    grads.head_w = upstream * &head_in;
    let mut dh: Vec<f64> = match dropout_mask {
        Some(mask) => params
            .head_w
            .iter()
            .zip(mask.iter())
            .map(|(w, m)| upstream * w * m)
            .collect(),
        None => params.head_w.iter().map(|w| upstream * w).collect(),
    };

    let mut dc = vec![0.0; h_size];
    // For the entity-aware gate, the incoming gradient accumulates over
    // every step and is pushed through the (single) sigmoid at the end.
    let mut di_fixed = vec![0.0; h_size];
    let zeros = vec![0.0; h_size];

    // Reused work buffers.
    let mut da_f = vec![0.0; h_size];
    let mut da_g = vec![0.0; h_size];
    let mut da_o = vec![0.0; h_size];
    let mut da_i = vec![0.0; h_size];
    let mut dx = vec![0.0; step_in];
    let mut dh_prev = vec![0.0; h_size];

    for t in (0..t_len).rev() {
        let rec = &trace.steps[t];
        let (c_prev, h_prev): (&[f64], &[f64]) = if t == 0 {
            (&zeros, &zeros)
        } else {
            (
                trace.steps[t - 1].c.as_slice().expect("standard layout"),
                trace.steps[t - 1].h.as_slice().expect("standard layout"),
            )
        };
        match input.dynamic.as_slice() {
            Some(rows) => x_buf[..dims.dynamic_dim]
                .copy_from_slice(&rows[t * dims.dynamic_dim..(t + 1) * dims.dynamic_dim]),
            None => {
                for (j, v) in input.dynamic.row(t).iter().enumerate() {
                    x_buf[j] = *v;
                }
            }
        }

        let i = rec.i.as_slice().expect("standard layout");
        let f = rec.f.as_slice().expect("standard layout");
        let g = rec.g.as_slice().expect("standard layout");
        let o = rec.o.as_slice().expect("standard layout");
        let tanh_c = rec.tanh_c.as_slice().expect("standard layout");

        let mut finite = true;
        for j in 0..h_size {
            let dh_j = dh[j];
            dc[j] += dh_j * o[j] * (1.0 - tanh_c[j] * tanh_c[j]);
            let d_o = dh_j * tanh_c[j];
            let d_f = dc[j] * c_prev[j];
            let d_i = dc[j] * g[j];
            let d_g = dc[j] * i[j];
            da_o[j] = d_o * o[j] * (1.0 - o[j]);
            da_f[j] = d_f * f[j] * (1.0 - f[j]);
            da_g[j] = d_g * (1.0 - g[j] * g[j]);
            match dims.variant {
                CellVariant::Lstm => da_i[j] = d_i * i[j] * (1.0 - i[j]),
                CellVariant::Ealstm => di_fixed[j] += d_i,
            }
            finite &= dc[j].is_finite() && dh_j.is_finite();
        }
        if !finite {
            return Err(Error::Numeric(format!(
                "non-finite gradient at step {}",
                t + 1
            )));
        }

        outer_acc(&mut grads.w_f, &da_f, &x_buf);
        outer_acc(&mut grads.u_f, &da_f, h_prev);
        outer_acc(&mut grads.w_g, &da_g, &x_buf);
        outer_acc(&mut grads.u_g, &da_g, h_prev);
        outer_acc(&mut grads.w_o, &da_o, &x_buf);
        outer_acc(&mut grads.u_o, &da_o, h_prev);
        {
            let b_f = grads.b_f.as_slice_mut().expect("standard layout");
            let b_g = grads.b_g.as_slice_mut().expect("standard layout");
            let b_o = grads.b_o.as_slice_mut().expect("standard layout");
            for j in 0..h_size {
                b_f[j] += da_f[j];
                b_g[j] += da_g[j];
                b_o[j] += da_o[j];
            }
        }

        dx.fill(0.0);
        matvec_t_acc(&mut dx, &params.w_f, &da_f);
        matvec_t_acc(&mut dx, &params.w_g, &da_g);
        matvec_t_acc(&mut dx, &params.w_o, &da_o);
        dh_prev.fill(0.0);
        matvec_t_acc(&mut dh_prev, &params.u_f, &da_f);
        matvec_t_acc(&mut dh_prev, &params.u_g, &da_g);
        matvec_t_acc(&mut dh_prev, &params.u_o, &da_o);

        if dims.variant == CellVariant::Lstm {
            outer_acc(&mut grads.w_i, &da_i, &x_buf);
            let u_i = params.u_i.as_ref().expect("lstm has u_i");
            outer_acc(
                grads.u_i.as_mut().expect("lstm grads have u_i"),
                &da_i,
                h_prev,
            );
            let b_i = grads.b_i.as_slice_mut().expect("standard layout");
            for j in 0..h_size {
                b_i[j] += da_i[j];
            }
            matvec_t_acc(&mut dx, &params.w_i, &da_i);
            matvec_t_acc(&mut dh_prev, u_i, &da_i);
        }

        for (j, v) in dx.iter().take(dims.dynamic_dim).enumerate() {
            grads.d_dynamic[[t, j]] = *v;
        }
        if concat_static {
            for j in 0..dims.static_dim {
                grads.d_static[j] += dx[dims.dynamic_dim + j];
            }
        }

        for j in 0..h_size {
            dc[j] *= f[j];
        }
        std::mem::swap(&mut dh, &mut dh_prev);
    }

    if dims.variant == CellVariant::Ealstm {
        let gate = trace.input_gate.as_ref().expect("ealstm trace has a gate");
        let gate = gate.as_slice().expect("standard layout");
        for j in 0..h_size {
            da_i[j] = di_fixed[j] * gate[j] * (1.0 - gate[j]);
        }
        let xs = input.static_attrs.as_ref().expect("validated in forward");
        outer_acc(
            &mut grads.w_i,
            &da_i,
            xs.as_slice().expect("standard layout"),
        );
        let b_i = grads.b_i.as_slice_mut().expect("standard layout");
        for j in 0..h_size {
            b_i[j] += da_i[j];
        }
        let d_static = grads.d_static.as_slice_mut().expect("standard layout");
        matvec_t_acc(d_static, &params.w_i, &da_i);
    }

    Ok(grads)
}

/// Gradient of the weighted squared error `weight * (prediction - target)^2`
/// for one window, together with that loss value. `weight` is 1 for the
/// plain MSE objective and `1/(s(b)+eps)^2` for the basin-averaged one.
pub fn backward(
    params: &CellParameters,
    input: &SequenceInput,
    target: f64,
    weight: f64,
    dropout_mask: Option<&Array1<f64>>,
) -> Result<(GradientSet, f64)> {
    if !target.is_finite() {
        return Err(Error::Numeric("non-finite target".into()));
    }
    let trace = forward_inner(params, input, dropout_mask)?;
    let residual = trace.prediction - target;
    let loss = weight * residual * residual;
    let upstream = 2.0 * weight * residual;
    let grads = bptt(params, input, &trace, upstream, dropout_mask)?;
    Ok((grads, loss))
}

/// Gradient of the raw prediction (upstream seed 1), used by the analytic
/// sensitivity method; returns the prediction as well.
pub fn prediction_gradient(
    params: &CellParameters,
    input: &SequenceInput,
) -> Result<(GradientSet, f64)> {
    let trace = forward_inner(params, input, None)?;
    let grads = bptt(params, input, &trace, 1.0, None)?;
    Ok((grads, trace.prediction))
}
