//! The forecaster network: a stacked graph-convolutional GRU encoder over
//! an input window, two MLP heads emitting per-region bivariate Gaussian
//! parameters, the Gaussian likelihood, and density rasterization at
//! arbitrary resolution.

use std::f64::consts::PI;
use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numerics::{CsrMatrix, ParamStore, Prim, Tape, TensorId, Tensor};
use crate::subdivision::Partition;

/// Sigmoid variance outputs are floored by this to keep the covariance
/// non-singular.
pub const VARIANCE_FLOOR: f64 = 1e-4;

/// Rasterized likelihoods are clamped into [CLAMP, 1 - CLAMP] so the
/// cross-entropy stays finite.
pub const RASTER_CLAMP: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// Hidden width of each recurrent layer, input to output.
    pub layer_widths: Vec<usize>,
    /// Chebyshev polynomial order K.
    pub k_order: usize,
    /// Node feature width (categories + 2 location + 6 calendar).
    pub input_dim: usize,
    /// Hidden width of the two head MLPs.
    pub mlp_hidden: usize,
    /// Input sequence length.
    pub window: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            layer_widths: vec![50, 20, 10],
            k_order: 3,
            input_dim: 16,
            mlp_hidden: 64,
            window: 10,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layer_widths.is_empty() || self.layer_widths.iter().any(|&w| w == 0) {
            return Err(Error::Config(format!(
                "layer widths must be positive: {:?}",
                self.layer_widths
            )));
        }
        if self.k_order == 0 {
            return Err(Error::Config("Chebyshev order K must be at least 1".into()));
        }
        if self.input_dim == 0 || self.mlp_hidden == 0 || self.window == 0 {
            return Err(Error::Config(
                "input_dim, mlp_hidden and window must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn top_width(&self) -> usize {
        *self.layer_widths.last().unwrap()
    }

    fn gate_names() -> [&'static str; 6] {
        ["xz", "hz", "xr", "hr", "xh", "hh"]
    }

    /// (name, shape) of every parameter, in deterministic registration
    /// order. The count is independent of the number of graph nodes.
    pub fn parameter_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        let mut d_in = self.input_dim;
        for (l, &d_out) in self.layer_widths.iter().enumerate() {
            for gate in Self::gate_names() {
                let in_dim = if gate.starts_with('x') { d_in } else { d_out };
                out.push((
                    format!("gcgru{l}.w_{gate}"),
                    vec![self.k_order, in_dim, d_out],
                ));
                out.push((format!("gcgru{l}.b_{gate}"), vec![d_out]));
            }
            d_in = d_out;
        }
        let d_h = self.top_width();
        for head in ["head_mu", "head_v"] {
            out.push((format!("{head}.w1"), vec![d_h, self.mlp_hidden]));
            out.push((format!("{head}.b1"), vec![self.mlp_hidden]));
            out.push((format!("{head}.w2"), vec![self.mlp_hidden, 2]));
            out.push((format!("{head}.b2"), vec![2]));
        }
        out
    }
}

/// Glorot-uniform weights, zero biases, deterministic under `seed`.
pub fn init_params(cfg: &ModelConfig, seed: u64) -> Result<ParamStore> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    for (name, shape) in cfg.parameter_shapes() {
        let tensor = if shape.len() == 1 {
            Tensor::zeros(&shape)
        } else {
            // weights: fan_in counts every input the output unit sums over
            let (fan_in, fan_out) = if shape.len() == 3 {
                (shape[0] * shape[1], shape[2])
            } else {
                (shape[0], shape[1])
            };
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let numel: usize = shape.iter().product();
            let data = (0..numel).map(|_| rng.gen_range(-a..a)).collect();
            Tensor::new(shape, data)?
        };
        store.insert(name, tensor)?;
    }
    Ok(store)
}

/// Graph convolution on the tape: Chebyshev recurrence over the scaled
/// Laplacian, coefficient projection, plus a learned per-feature bias.
fn graph_conv(
    tape: &mut Tape,
    store: &ParamStore,
    scaled: &Rc<CsrMatrix>,
    x: TensorId,
    w_name: &str,
    b_name: &str,
) -> Result<TensorId> {
    let w_shape = store
        .get(w_name)
        .ok_or_else(|| Error::InvalidArgument(format!("unknown parameter `{w_name}`")))?
        .value
        .shape()
        .to_vec();
    let (k_order, d_in, d_out) = (w_shape[0], w_shape[1], w_shape[2]);
    let n = tape.value(x).shape()[0];

    let mut terms = vec![x];
    if k_order >= 2 {
        let t1 = tape.spmm(scaled, x)?;
        terms.push(t1);
        for k in 2..k_order {
            let prop = tape.spmm(scaled, terms[k - 1])?;
            let doubled = tape.smul(2.0, prop)?;
            let next = tape.sub(doubled, terms[k - 2])?;
            terms.push(next);
        }
    }
    let stacked = if terms.len() == 1 {
        terms[0]
    } else {
        tape.concat(&terms)?
    };
    // theta is stored (K, d_in, d_out); its row-major layout doubles as the
    // stacked (K * d_in, d_out) projection matrix
    let w = tape.param_view(store, w_name, &[k_order * d_in, d_out])?;
    let y = tape.matmul(stacked, w)?;
    bias_rows(tape, store, y, b_name, n, d_out)
}

/// Add a bias vector to every row: y + ones(n, 1) * b(1, d).
fn bias_rows(
    tape: &mut Tape,
    store: &ParamStore,
    y: TensorId,
    b_name: &str,
    n: usize,
    d: usize,
) -> Result<TensorId> {
    let b = tape.param_view(store, b_name, &[1, d])?;
    let ones = tape.constant(Tensor::ones(&[n, 1]));
    let rows = tape.matmul(ones, b)?;
    tape.add(y, rows)
}

/// One recurrent cell step: update and reset gates, candidate state, and
/// the gated blend of previous and candidate hidden state.
pub fn gcgru_cell(
    tape: &mut Tape,
    store: &ParamStore,
    scaled: &Rc<CsrMatrix>,
    layer: usize,
    x: TensorId,
    h_prev: TensorId,
) -> Result<TensorId> {
    let conv = |tape: &mut Tape, sig: TensorId, gate: &str| -> Result<TensorId> {
        graph_conv(
            tape,
            store,
            scaled,
            sig,
            &format!("gcgru{layer}.w_{gate}"),
            &format!("gcgru{layer}.b_{gate}"),
        )
    };

    let zx = conv(tape, x, "xz")?;
    let zh = conv(tape, h_prev, "hz")?;
    let z_pre = tape.add(zx, zh)?;
    let z = tape.sigmoid(z_pre)?;

    let rx = conv(tape, x, "xr")?;
    let rh = conv(tape, h_prev, "hr")?;
    let r_pre = tape.add(rx, rh)?;
    let r = tape.sigmoid(r_pre)?;

    let gated = tape.mul(r, h_prev)?;
    let cx = conv(tape, x, "xh")?;
    let ch = conv(tape, gated, "hh")?;
    let cand_pre = tape.add(cx, ch)?;
    let cand = tape.tanh(cand_pre)?;

    let keep = tape.mul(z, h_prev)?;
    let ones = tape.constant(Tensor::ones(tape.value(z).shape()));
    let one_minus_z = tape.sub(ones, z)?;
    let take = tape.mul(one_minus_z, cand)?;
    tape.add(keep, take)
}

/// Run the stacked encoder over a full window from zero initial state and
/// return the final top-layer hidden matrix (N, top width).
pub fn encode_sequence(
    tape: &mut Tape,
    store: &ParamStore,
    cfg: &ModelConfig,
    scaled: &Rc<CsrMatrix>,
    window: &[Tensor],
) -> Result<TensorId> {
    if window.len() != cfg.window {
        return Err(Error::InvalidArgument(format!(
            "window has {} slots, config expects {}",
            window.len(),
            cfg.window
        )));
    }
    let n = scaled.n_rows();
    for x in window {
        if x.rank() != 2 || x.shape() != [n, cfg.input_dim] {
            return Err(Error::InvalidArgument(format!(
                "node features must be ({n}, {}), got {:?}",
                cfg.input_dim,
                x.shape()
            )));
        }
    }
    let mut hidden: Vec<TensorId> = cfg
        .layer_widths
        .iter()
        .map(|&w| tape.constant(Tensor::zeros(&[n, w])))
        .collect();
    for x in window {
        let mut signal = tape.constant(x.clone());
        for layer in 0..cfg.layer_widths.len() {
            hidden[layer] = gcgru_cell(tape, store, scaled, layer, signal, hidden[layer])?;
            signal = hidden[layer];
        }
    }
    Ok(*hidden.last().unwrap())
}

fn head_mlp(
    tape: &mut Tape,
    store: &ParamStore,
    h: TensorId,
    head: &str,
) -> Result<TensorId> {
    let n = tape.value(h).shape()[0];
    let w1 = tape.param(store, &format!("{head}.w1"))?;
    let hidden_w = store.get(&format!("{head}.b1")).unwrap().value.numel();
    let z1 = tape.matmul(h, w1)?;
    let z1 = bias_rows(tape, store, z1, &format!("{head}.b1"), n, hidden_w)?;
    let a1 = tape.tanh(z1)?;
    let w2 = tape.param(store, &format!("{head}.w2"))?;
    let z2 = tape.matmul(a1, w2)?;
    bias_rows(tape, store, z2, &format!("{head}.b2"), n, 2)
}

/// The two density heads, shared across nodes: mu in (0,1)^2 via sigmoid,
/// v in (floor, 1 + floor) via sigmoid plus the variance floor. Returns
/// (mu, v), each (N, 2).
pub fn mlp_heads(
    tape: &mut Tape,
    store: &ParamStore,
    h: TensorId,
) -> Result<(TensorId, TensorId)> {
    let n = tape.value(h).shape()[0];
    let mu_pre = head_mlp(tape, store, h, "head_mu")?;
    let mu = tape.sigmoid(mu_pre)?;
    let v_pre = head_mlp(tape, store, h, "head_v")?;
    let v_sig = tape.sigmoid(v_pre)?;
    let floor = tape.constant(Tensor::full(&[n, 2], VARIANCE_FLOOR));
    let v = tape.add(v_sig, floor)?;
    Ok((mu, v))
}

/// Per-node density parameters as plain values (inputs to the pure
/// rasterization path).
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianParams {
    /// (mu_x, mu_y) per node in normalized coordinates.
    pub mu: Vec<(f64, f64)>,
    /// Diagonal variances (v_x, v_y) per node.
    pub v: Vec<(f64, f64)>,
}

impl GaussianParams {
    pub fn from_tape(tape: &Tape, mu: TensorId, v: TensorId) -> Self {
        let m = tape.value(mu);
        let s = tape.value(v);
        let n = m.shape()[0];
        GaussianParams {
            mu: (0..n).map(|i| (m.at(i, 0), m.at(i, 1))).collect(),
            v: (0..n).map(|i| (s.at(i, 0), s.at(i, 1))).collect(),
        }
    }

    pub fn n(&self) -> usize {
        self.mu.len()
    }
}

/// Uncorrelated bivariate Gaussian density at (x, y); `v` entries are
/// variances.
pub fn gaussian_pdf(x: f64, y: f64, mu: (f64, f64), v: (f64, f64)) -> Result<f64> {
    if v.0 <= 0.0 || v.1 <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "variances must be positive, got ({}, {})",
            v.0, v.1
        )));
    }
    let quad = (x - mu.0).powi(2) / v.0 + (y - mu.1).powi(2) / v.1;
    Ok((-0.5 * quad).exp() / (2.0 * PI * (v.0 * v.1).sqrt()))
}

/// Evaluate each output cell center under the Gaussian of the region that
/// contains it, clamped into the cross-entropy band. Resolution is
/// independent of the partition's source grid.
pub fn rasterize_density(
    params: &GaussianParams,
    partition: &Partition,
    rows: usize,
    cols: usize,
) -> Result<Tensor> {
    if rows == 0 || cols == 0 {
        return Err(Error::InvalidArgument("resolution must be at least 1x1".into()));
    }
    if params.n() != partition.len() {
        return Err(Error::InvalidArgument(format!(
            "{} parameter sets for {} regions",
            params.n(),
            partition.len()
        )));
    }
    let mut out = Tensor::zeros(&[rows, cols]);
    for i in 0..rows {
        for j in 0..cols {
            let x = (j as f64 + 0.5) / cols as f64;
            let y = (i as f64 + 0.5) / rows as f64;
            let region = partition.region_at(x, y)?;
            let l = gaussian_pdf(x, y, params.mu[region], params.v[region])?;
            out.set(i, j, l.clamp(RASTER_CLAMP, 1.0 - RASTER_CLAMP));
        }
    }
    Ok(out)
}

/// Precomputed structure for rasterizing on the tape: the cell-to-region
/// selection operator and the cell-center coordinate columns.
#[derive(Clone, Debug)]
pub struct RasterPlan {
    pub rows: usize,
    pub cols: usize,
    pub selection: Rc<CsrMatrix>,
    pub centers_x: Tensor,
    pub centers_y: Tensor,
}

impl RasterPlan {
    pub fn new(partition: &Partition, rows: usize, cols: usize) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidArgument("resolution must be at least 1x1".into()));
        }
        let n_cells = rows * cols;
        let mut triplets = Vec::with_capacity(n_cells);
        let mut xs = Vec::with_capacity(n_cells);
        let mut ys = Vec::with_capacity(n_cells);
        for i in 0..rows {
            for j in 0..cols {
                let x = (j as f64 + 0.5) / cols as f64;
                let y = (i as f64 + 0.5) / rows as f64;
                let region = partition.region_at(x, y)?;
                triplets.push((i * cols + j, region, 1.0));
                xs.push(x);
                ys.push(y);
            }
        }
        Ok(RasterPlan {
            rows,
            cols,
            selection: Rc::new(CsrMatrix::from_triplets(n_cells, partition.len(), &triplets)?),
            centers_x: Tensor::new(vec![n_cells, 1], xs)?,
            centers_y: Tensor::new(vec![n_cells, 1], ys)?,
        })
    }

    pub fn n_cells(&self) -> usize {
        self.rows * self.cols
    }
}

/// Log-density of each query point under its owning region's Gaussian,
/// built from tape primitives. `selection` maps points to regions, `xs` and
/// `ys` are (P, 1) coordinate columns; the result is (P, 1).
pub fn log_density_at_points(
    tape: &mut Tape,
    selection: &Rc<CsrMatrix>,
    xs: &Tensor,
    ys: &Tensor,
    mu: TensorId,
    v: TensorId,
) -> Result<TensorId> {
    let mu1 = tape.slice(mu, 1, 0, 1)?;
    let mu2 = tape.slice(mu, 1, 1, 2)?;
    let v1 = tape.slice(v, 1, 0, 1)?;
    let v2 = tape.slice(v, 1, 1, 2)?;

    let mu1c = tape.spmm(selection, mu1)?;
    let mu2c = tape.spmm(selection, mu2)?;
    let v1c = tape.spmm(selection, v1)?;
    let v2c = tape.spmm(selection, v2)?;

    let xc = tape.constant(xs.clone());
    let yc = tape.constant(ys.clone());

    let dx = tape.sub(xc, mu1c)?;
    let dy = tape.sub(yc, mu2c)?;
    let dx2 = tape.square(dx)?;
    let dy2 = tape.square(dy)?;

    // 1/v = exp(-log v); the log terms also build the normalizer
    let log_v1 = tape.log(v1c)?;
    let log_v2 = tape.log(v2c)?;
    let neg_log_v1 = tape.smul(-1.0, log_v1)?;
    let neg_log_v2 = tape.smul(-1.0, log_v2)?;
    let inv_v1 = tape.exp(neg_log_v1)?;
    let inv_v2 = tape.exp(neg_log_v2)?;

    let qx = tape.mul(dx2, inv_v1)?;
    let qy = tape.mul(dy2, inv_v2)?;
    let quad = tape.add(qx, qy)?;
    let log_det = tape.add(log_v1, log_v2)?;
    let arg = tape.add(quad, log_det)?;
    let half = tape.smul(-0.5, arg)?;
    // log l = -(quad + log v1 + log v2)/2 - log(2 pi)
    let shape = tape.value(half).shape().to_vec();
    let shift = tape.constant(Tensor::full(&shape, -(2.0 * PI).ln()));
    tape.add(half, shift)
}

/// Differentiable raster: per-cell clamped likelihoods (cells x 1) under
/// the owning region's Gaussian.
pub fn raster_likelihood(
    tape: &mut Tape,
    plan: &RasterPlan,
    mu: TensorId,
    v: TensorId,
) -> Result<TensorId> {
    let log_l = log_density_at_points(
        tape,
        &plan.selection,
        &plan.centers_x,
        &plan.centers_y,
        mu,
        v,
    )?;
    let lik = tape.exp(log_l)?;
    tape.clamp(lik, RASTER_CLAMP, 1.0 - RASTER_CLAMP)
}

/// Per-slot node features: log1p-scaled category counts, the node centers,
/// and the slot's calendar vector replicated across nodes.
pub fn node_features(
    counts: &Tensor,
    centers: &[(f64, f64)],
    calendar: &[f64; 6],
) -> Result<Tensor> {
    let n = centers.len();
    if counts.rank() != 2 || counts.shape()[0] != n {
        return Err(Error::InvalidArgument(format!(
            "counts must be ({n}, L), got {:?}",
            counts.shape()
        )));
    }
    let scaled = counts.map(f64::ln_1p);
    let mut center_cols = Vec::with_capacity(n * 2);
    for &(x, y) in centers {
        center_cols.push(x);
        center_cols.push(y);
    }
    let centers_t = Tensor::new(vec![n, 2], center_cols)?;
    let mut cal = Vec::with_capacity(n * 6);
    for _ in 0..n {
        cal.extend_from_slice(calendar);
    }
    let calendar_t = Tensor::new(vec![n, 6], cal)?;
    Prim::ConcatLastAxis.eval(&[&scaled, &centers_t, &calendar_t])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::LaplacianBundle;

    fn tiny_cfg() -> ModelConfig {
        ModelConfig {
            layer_widths: vec![5, 4],
            k_order: 2,
            input_dim: 3,
            mlp_hidden: 6,
            window: 2,
        }
    }

    fn path_bundle(n: usize) -> LaplacianBundle {
        let mut weights = Tensor::zeros(&[n, n]);
        for i in 0..n - 1 {
            weights.set(i, i + 1, 0.5);
            weights.set(i + 1, i, 0.5);
        }
        LaplacianBundle::from_weights(&weights).unwrap()
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let cfg = ModelConfig::default();
        let a = init_params(&cfg, 9).unwrap();
        let b = init_params(&cfg, 9).unwrap();
        assert_eq!(a.len(), b.len());
        for (pa, pb) in a.iter().zip(b.iter()) {
            assert_eq!(pa.name, pb.name);
            assert_eq!(pa.value, pb.value);
        }
        // every sampled weight within its (-a, a) bound
        let w = a.get("gcgru0.w_xz").unwrap();
        let bound = (6.0 / (3.0 * 16.0 + 50.0) as f64).sqrt();
        assert!(w.value.data().iter().all(|&v| v.abs() < bound));
        // bias is zero
        assert!(a.get("gcgru0.b_xz").unwrap().value.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn parameter_count_is_node_independent() {
        let cfg = ModelConfig::default();
        let store = init_params(&cfg, 0).unwrap();
        let total = store.num_scalars();
        // 3 layers of 6 convolutions (+bias) plus two 2-layer heads
        let expect_layer = |d_in: usize, d_out: usize| {
            3 * (3 * d_in * d_out) + 3 * (3 * d_out * d_out) + 6 * d_out
        };
        let heads = 2 * (10 * 64 + 64 + 64 * 2 + 2);
        let want = expect_layer(16, 50) + expect_layer(50, 20) + expect_layer(20, 10) + heads;
        assert_eq!(total, want);
    }

    #[test]
    fn zero_weights_give_half_gates() {
        // all-zero parameters: z = r = 0.5, candidate = 0, h = 0.5 h_prev
        let cfg = tiny_cfg();
        let mut store = ParamStore::new();
        for (name, shape) in cfg.parameter_shapes() {
            store.insert(name, Tensor::zeros(&shape)).unwrap();
        }
        let bundle = path_bundle(3);
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::ones(&[3, 3]));
        let h_prev = tape.constant(Tensor::full(&[3, 5], 0.8));
        let h = gcgru_cell(&mut tape, &store, &bundle.scaled, 0, x, h_prev).unwrap();
        for &v in tape.value(h).data() {
            assert!((v - 0.4).abs() < 1e-12); // 0.5 * 0.8
        }
    }

    #[test]
    fn zero_hidden_state_keeps_pure_candidate() {
        let cfg = tiny_cfg();
        let store = init_params(&cfg, 3).unwrap();
        let bundle = path_bundle(3);
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::ones(&[3, 3]));
        let h_prev = tape.constant(Tensor::zeros(&[3, 5]));
        let h = gcgru_cell(&mut tape, &store, &bundle.scaled, 0, x, h_prev).unwrap();
        // with h_prev = 0 the update-gate term vanishes; output is
        // (1 - z) * tanh(conv_x(x) + bias) which is nonzero for random init
        assert!(tape.value(h).data().iter().any(|&v| v != 0.0));
    }

    #[test]
    fn encoder_output_shape_and_zero_case() {
        let cfg = tiny_cfg();
        let bundle = path_bundle(4);
        let window: Vec<Tensor> = (0..2).map(|_| Tensor::ones(&[4, 3])).collect();

        let store = init_params(&cfg, 1).unwrap();
        let mut tape = Tape::new();
        let h = encode_sequence(&mut tape, &store, &cfg, &bundle.scaled, &window).unwrap();
        assert_eq!(tape.value(h).shape(), &[4, 4]);

        // all-zero weights keep the state at zero for any input
        let mut zero_store = ParamStore::new();
        for (name, shape) in cfg.parameter_shapes() {
            zero_store.insert(name, Tensor::zeros(&shape)).unwrap();
        }
        let mut tape = Tape::new();
        let h = encode_sequence(&mut tape, &zero_store, &cfg, &bundle.scaled, &window).unwrap();
        assert!(tape.value(h).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn encoder_rejects_wrong_feature_width() {
        let cfg = tiny_cfg();
        let bundle = path_bundle(4);
        let store = init_params(&cfg, 1).unwrap();
        let window: Vec<Tensor> = (0..2).map(|_| Tensor::ones(&[4, 7])).collect();
        let mut tape = Tape::new();
        assert!(encode_sequence(&mut tape, &store, &cfg, &bundle.scaled, &window).is_err());
    }

    #[test]
    fn zero_heads_give_centered_gaussians() {
        let cfg = tiny_cfg();
        let mut store = ParamStore::new();
        for (name, shape) in cfg.parameter_shapes() {
            store.insert(name, Tensor::zeros(&shape)).unwrap();
        }
        let mut tape = Tape::new();
        let h = tape.constant(Tensor::zeros(&[3, 4]));
        let (mu, v) = mlp_heads(&mut tape, &store, h).unwrap();
        for &m in tape.value(mu).data() {
            assert_eq!(m, 0.5);
        }
        for &s in tape.value(v).data() {
            assert_eq!(s, 0.5 + VARIANCE_FLOOR);
        }
    }

    #[test]
    fn head_outputs_stay_in_range_and_are_row_equivariant() {
        let cfg = tiny_cfg();
        let store = init_params(&cfg, 11).unwrap();
        let mut tape = Tape::new();
        let h_vals = Tensor::new(
            vec![3, 4],
            vec![5.0, -3.0, 2.0, 0.1, -9.0, 4.0, 0.0, 1.0, 2.0, 2.0, -2.0, 3.0],
        )
        .unwrap();
        let h = tape.constant(h_vals.clone());
        let (mu, v) = mlp_heads(&mut tape, &store, h).unwrap();
        for &m in tape.value(mu).data() {
            assert!(m > 0.0 && m < 1.0);
        }
        for &s in tape.value(v).data() {
            assert!(s > VARIANCE_FLOOR && s < 1.0 + VARIANCE_FLOOR);
        }

        // permuting rows of h permutes outputs identically
        let perm = [2usize, 0, 1];
        let permuted = Tensor::new(
            vec![3, 4],
            perm.iter()
                .flat_map(|&i| h_vals.data()[i * 4..(i + 1) * 4].to_vec())
                .collect(),
        )
        .unwrap();
        let mut tape2 = Tape::new();
        let hp = tape2.constant(permuted);
        let (mu2, _) = mlp_heads(&mut tape2, &store, hp).unwrap();
        for (new_row, &old_row) in perm.iter().enumerate() {
            for c in 0..2 {
                assert!(
                    (tape2.value(mu2).at(new_row, c) - tape.value(mu).at(old_row, c)).abs()
                        < 1e-12
                );
            }
        }
    }

    #[test]
    fn pdf_peak_and_symmetry() {
        // peak value 1 / (2 pi sqrt(v1 v2))
        let peak = gaussian_pdf(0.3, 0.7, (0.3, 0.7), (0.1, 0.1)).unwrap();
        assert!((peak - 1.0 / (2.0 * PI * 0.1)).abs() < 1e-12);
        assert!((peak - 1.5915494309189535).abs() < 1e-10);

        let a = gaussian_pdf(0.3 + 0.05, 0.7, (0.3, 0.7), (0.02, 0.05)).unwrap();
        let b = gaussian_pdf(0.3 - 0.05, 0.7, (0.3, 0.7), (0.02, 0.05)).unwrap();
        assert!((a - b).abs() < 1e-15);

        assert!(gaussian_pdf(0.0, 0.0, (0.0, 0.0), (0.0, 0.1)).is_err());
    }

    #[test]
    fn raster_single_region_single_cell() {
        let q = Tensor::zeros(&[2, 2]);
        let partition = crate::subdivision::divide_regions(&q, 1.0, 0..2, 0..2).unwrap();
        let params = GaussianParams {
            mu: vec![(0.5, 0.5)],
            v: vec![(0.01, 0.01)],
        };
        let raster = rasterize_density(&params, &partition, 1, 1).unwrap();
        // pdf at the grid center is 1/(2 pi 0.01) ~ 15.9 -> clamped
        assert_eq!(raster.at(0, 0), 1.0 - RASTER_CLAMP);

        // far-off mean drives the value to the lower clamp
        let params = GaussianParams {
            mu: vec![(0.0, 0.0)],
            v: vec![(VARIANCE_FLOOR, VARIANCE_FLOOR)],
        };
        let raster = rasterize_density(&params, &partition, 1, 1).unwrap();
        assert_eq!(raster.at(0, 0), RASTER_CLAMP);
    }

    #[test]
    fn tape_raster_matches_pure_raster() {
        let mut q = Tensor::zeros(&[4, 4]);
        q.set(0, 0, 5.0);
        q.set(3, 3, 5.0);
        let partition = crate::subdivision::divide_regions(&q, 6.0, 0..4, 0..4).unwrap();
        assert_eq!(partition.len(), 4);
        let params = GaussianParams {
            mu: vec![(0.2, 0.3), (0.8, 0.2), (0.3, 0.9), (0.6, 0.6)],
            v: vec![(0.05, 0.02), (0.3, 0.4), (0.01, 0.02), (0.9, 0.8)],
        };
        let pure = rasterize_density(&params, &partition, 4, 4).unwrap();

        let plan = RasterPlan::new(&partition, 4, 4).unwrap();
        let mut tape = Tape::new();
        let mu_t = tape.constant(Tensor::new(
            vec![4, 2],
            params.mu.iter().flat_map(|&(a, b)| [a, b]).collect(),
        ).unwrap());
        let v_t = tape.constant(Tensor::new(
            vec![4, 2],
            params.v.iter().flat_map(|&(a, b)| [a, b]).collect(),
        ).unwrap());
        let lik = raster_likelihood(&mut tape, &plan, mu_t, v_t).unwrap();
        let lik_vals = tape.value(lik);
        for i in 0..4 {
            for j in 0..4 {
                assert!(
                    (lik_vals.data()[i * 4 + j] - pure.at(i, j)).abs() < 1e-12,
                    "cell ({i},{j})"
                );
            }
        }
    }

    #[test]
    fn features_concat_counts_centers_calendar() {
        let counts = Tensor::new(vec![2, 3], vec![0.0, 1.0, 7.0, 2.0, 0.0, 0.0]).unwrap();
        let centers = vec![(0.25, 0.75), (0.5, 0.5)];
        let calendar = [1.0, 0.0, 0.3, 0.4, 0.5, 0.6];
        let f = node_features(&counts, &centers, &calendar).unwrap();
        assert_eq!(f.shape(), &[2, 11]);
        assert!((f.at(0, 1) - 2.0f64.ln()).abs() < 1e-12); // log1p(1)
        assert_eq!(f.at(0, 3), 0.25);
        assert_eq!(f.at(1, 4), 0.5);
        assert_eq!(f.at(1, 5), 1.0);
        assert_eq!(f.at(0, 10), 0.6);
    }
}
