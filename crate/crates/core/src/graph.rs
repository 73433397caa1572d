//! The region graph and its spectral machinery: distance-weighted adjacency,
//! normalized and scaled Laplacians, a power-iteration largest-eigenvalue
//! estimate, Chebyshev polynomial filtering over edge lists, and a dense
//! eigendecomposition oracle for testing the filter.

use std::rc::Rc;

use crate::error::{Error, Result};
use crate::numerics::{CsrMatrix, Tensor};
use crate::subdivision::Partition;

/// How adjacency weights are derived from inter-center distances.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum EdgeWeighting {
    /// Raw Euclidean distance between region centers.
    Distance,
    /// Gaussian kernel exp(-d^2 / sigma^2) of the distance.
    GaussianKernel { sigma: f64 },
}

/// Weighted undirected graph on region centers.
#[derive(Clone, Debug)]
pub struct RegionGraph {
    pub n: usize,
    /// Normalized (x, y) center per node.
    pub centers: Vec<(f64, f64)>,
    /// Symmetric weight matrix with zero diagonal.
    pub weights: Tensor,
}

impl RegionGraph {
    pub fn edges(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::new();
        for i in 0..self.n {
            for j in (i + 1)..self.n {
                let w = self.weights.at(i, j);
                if w != 0.0 {
                    out.push((i, j, w));
                }
            }
        }
        out
    }

    /// Edge-list text: `i j weight` lines, then `node i x y` lines.
    pub fn export_text(&self) -> String {
        use std::fmt::Write as _;
        let mut out = String::new();
        for (i, j, w) in self.edges() {
            writeln!(out, "{i} {j} {w}").unwrap();
        }
        for (i, (x, y)) in self.centers.iter().enumerate() {
            writeln!(out, "node {i} {x} {y}").unwrap();
        }
        out
    }
}

/// Build the region graph from a partition and its adjacency pairs; weights
/// are center distances (or a kernel of them).
pub fn build_graph(
    partition: &Partition,
    adjacency: &[(usize, usize)],
    weighting: EdgeWeighting,
) -> Result<RegionGraph> {
    let n = partition.len();
    let centers: Vec<(f64, f64)> = partition.regions.iter().map(|r| r.center).collect();
    let mut weights = Tensor::zeros(&[n, n]);
    for &(a, b) in adjacency {
        if a >= n || b >= n || a == b {
            return Err(Error::InvalidArgument(format!(
                "bad adjacency pair ({a}, {b}) for {n} regions"
            )));
        }
        let (xa, ya) = centers[a];
        let (xb, yb) = centers[b];
        let d = ((xa - xb).powi(2) + (ya - yb).powi(2)).sqrt();
        let w = match weighting {
            EdgeWeighting::Distance => d,
            EdgeWeighting::GaussianKernel { sigma } => (-d * d / (sigma * sigma)).exp(),
        };
        weights.set(a, b, w);
        weights.set(b, a, w);
    }
    Ok(RegionGraph {
        n,
        centers,
        weights,
    })
}

/// Symmetric normalized Laplacian `L = I - D^{-1/2} A D^{-1/2}`. Rows of
/// isolated (zero-degree) nodes become identity rows.
pub fn normalized_laplacian(weights: &Tensor) -> Result<Tensor> {
    if weights.rank() != 2 || weights.shape()[0] != weights.shape()[1] {
        return Err(Error::InvalidArgument(format!(
            "adjacency must be square, got {:?}",
            weights.shape()
        )));
    }
    let n = weights.shape()[0];
    let mut inv_sqrt_deg = vec![0.0; n];
    for i in 0..n {
        let deg: f64 = (0..n).map(|j| weights.at(i, j)).sum();
        if deg > 0.0 {
            inv_sqrt_deg[i] = 1.0 / deg.sqrt();
        }
    }
    let mut lap = Tensor::zeros(&[n, n]);
    for i in 0..n {
        for j in 0..n {
            let off = -inv_sqrt_deg[i] * weights.at(i, j) * inv_sqrt_deg[j];
            lap.set(i, j, if i == j { 1.0 + off } else { off });
        }
    }
    Ok(lap)
}

/// Result of the largest-eigenvalue estimate.
#[derive(Clone, Copy, Debug)]
pub struct LambdaMax {
    pub value: f64,
    /// True when power iteration hit the cap and the 2.0 upper bound was
    /// used instead.
    pub fell_back: bool,
}

const POWER_TOL: f64 = 1e-8;
const POWER_CAP: usize = 10_000;

/// Largest eigenvalue of a symmetric PSD matrix by power iteration, seeded
/// with an all-ones vector plus a small per-index perturbation.
pub fn estimate_lambda_max(lap: &Tensor) -> Result<LambdaMax> {
    if lap.rank() != 2 || lap.shape()[0] != lap.shape()[1] {
        return Err(Error::InvalidArgument(format!(
            "expected square matrix, got {:?}",
            lap.shape()
        )));
    }
    let n = lap.shape()[0];
    let mut v: Vec<f64> = (0..n).map(|i| 1.0 + 1e-3 * (i + 1) as f64).collect();
    normalize(&mut v);
    let mut prev = f64::NAN;
    for _ in 0..POWER_CAP {
        let mut next = vec![0.0; n];
        for i in 0..n {
            let mut acc = 0.0;
            for j in 0..n {
                acc += lap.at(i, j) * v[j];
            }
            next[i] = acc;
        }
        // Rayleigh quotient with the unit-norm previous iterate
        let lambda: f64 = v.iter().zip(&next).map(|(a, b)| a * b).sum();
        let norm = normalize(&mut next);
        if norm == 0.0 {
            // the matrix annihilated the iterate; spectrum reachable from
            // the seed is exactly zero
            return Ok(LambdaMax {
                value: 0.0,
                fell_back: false,
            });
        }
        v = next;
        if (lambda - prev).abs() <= POWER_TOL {
            return Ok(LambdaMax {
                value: lambda,
                fell_back: false,
            });
        }
        prev = lambda;
    }
    Ok(LambdaMax {
        value: 2.0,
        fell_back: true,
    })
}

fn normalize(v: &mut [f64]) -> f64 {
    let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    norm
}

/// Laplacian plus its spectral scaling: `L~ = 2L/lambda_max - I`, kept in
/// sparse form for edge-list filtering.
#[derive(Clone, Debug)]
pub struct LaplacianBundle {
    pub lap: Tensor,
    pub lambda_max: f64,
    pub lambda_fell_back: bool,
    pub scaled: Rc<CsrMatrix>,
}

impl LaplacianBundle {
    pub fn from_weights(weights: &Tensor) -> Result<Self> {
        let lap = normalized_laplacian(weights)?;
        let est = estimate_lambda_max(&lap)?;
        // guard the division for the degenerate all-zero spectrum
        let lambda = if est.value <= 0.0 { 2.0 } else { est.value };
        let n = lap.shape()[0];
        let mut scaled = Tensor::zeros(&[n, n]);
        for i in 0..n {
            for j in 0..n {
                let v = 2.0 * lap.at(i, j) / lambda - if i == j { 1.0 } else { 0.0 };
                scaled.set(i, j, v);
            }
        }
        Ok(LaplacianBundle {
            lap,
            lambda_max: lambda,
            lambda_fell_back: est.fell_back,
            scaled: Rc::new(CsrMatrix::from_dense(&scaled)?),
        })
    }

    pub fn n(&self) -> usize {
        self.lap.shape()[0]
    }
}

/// Multiplications performed inside a filter evaluation, split by stage.
#[derive(Clone, Copy, Debug, Default)]
pub struct FilterOpCount {
    /// Scalar multiplies inside sparse operator applications.
    pub spmv_mults: u64,
    /// Scalar multiplies inside the coefficient projection.
    pub coeff_mults: u64,
}

/// Chebyshev filter `y = sum_k T_k(L~) x theta_k` with the recurrence
/// `T_0 = I`, `T_1 = L~`, `T_k = 2 L~ T_{k-1} - T_{k-2}`, computed as
/// repeated sparse matrix-signal products; the dense `T_k` matrices are
/// never materialized.
///
/// `theta` has shape (K, F_in, F_out).
pub fn chebyshev_filter(scaled: &CsrMatrix, x: &Tensor, theta: &Tensor) -> Result<Tensor> {
    chebyshev_filter_counted(scaled, x, theta).map(|(y, _)| y)
}

/// Same computation with an operation-count probe.
pub fn chebyshev_filter_counted(
    scaled: &CsrMatrix,
    x: &Tensor,
    theta: &Tensor,
) -> Result<(Tensor, FilterOpCount)> {
    if theta.rank() != 3 {
        return Err(Error::ShapeMismatch {
            prim: "chebyshev-filter",
            detail: format!("theta must be (K, F_in, F_out), got {:?}", theta.shape()),
        });
    }
    let (k_order, f_in, f_out) = (theta.shape()[0], theta.shape()[1], theta.shape()[2]);
    if k_order < 1 {
        return Err(Error::ShapeMismatch {
            prim: "chebyshev-filter",
            detail: "K must be at least 1".into(),
        });
    }
    if x.rank() != 2 || x.shape()[1] != f_in || x.shape()[0] != scaled.n_rows() {
        return Err(Error::ShapeMismatch {
            prim: "chebyshev-filter",
            detail: format!(
                "signal {:?} vs operator {}x{} and theta {:?}",
                x.shape(),
                scaled.n_rows(),
                scaled.n_cols(),
                theta.shape()
            ),
        });
    }
    let n = x.shape()[0];
    let mut count = FilterOpCount::default();
    let mut out = Tensor::zeros(&[n, f_out]);

    let mut t_prev: Option<Tensor> = None; // T_{k-1} x
    let mut t_curr = x.clone(); // T_0 x
    for k in 0..k_order {
        if k > 0 {
            let mut next = scaled.matmul_dense_counted(&t_curr, &mut count.spmv_mults)?;
            if k == 1 {
                // T_1 = L~
            } else {
                // T_k = 2 L~ T_{k-1} - T_{k-2}
                let prev = t_prev.as_ref().expect("k >= 2 implies a stored T_{k-2}");
                for (nv, pv) in next.data_mut().iter_mut().zip(prev.data()) {
                    *nv = 2.0 * *nv - pv;
                }
            }
            t_prev = Some(std::mem::replace(&mut t_curr, next));
        }
        // project through theta_k: out += (T_k x) theta_k
        let theta_k = &theta.data()[k * f_in * f_out..(k + 1) * f_in * f_out];
        for row in 0..n {
            let xrow = &t_curr.data()[row * f_in..(row + 1) * f_in];
            let orow = &mut out.data_mut()[row * f_out..(row + 1) * f_out];
            for (i, &xv) in xrow.iter().enumerate() {
                let trow = &theta_k[i * f_out..(i + 1) * f_out];
                for (o, &tv) in orow.iter_mut().zip(trow) {
                    *o += xv * tv;
                }
            }
        }
        count.coeff_mults += (n * f_in * f_out) as u64;
    }
    Ok((out, count))
}

/// Eigendecomposition of a small symmetric matrix by the cyclic Jacobi
/// method. Returns (eigenvalues, eigenvectors-as-columns), unordered.
pub fn jacobi_eigh(m: &Tensor) -> Result<(Vec<f64>, Tensor)> {
    if m.rank() != 2 || m.shape()[0] != m.shape()[1] {
        return Err(Error::InvalidArgument(format!(
            "expected square matrix, got {:?}",
            m.shape()
        )));
    }
    let n = m.shape()[0];
    if n > 32 {
        return Err(Error::InvalidArgument(format!(
            "dense eigensolver is limited to n <= 32, got {n}"
        )));
    }
    let mut a = m.clone();
    let mut vecs = Tensor::zeros(&[n, n]);
    for i in 0..n {
        vecs.set(i, i, 1.0);
    }
    for _sweep in 0..100 {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += a.at(p, q) * a.at(p, q);
            }
        }
        if off <= 1e-24 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a.at(p, q);
                if apq.abs() < 1e-300 {
                    continue;
                }
                let app = a.at(p, p);
                let aqq = a.at(q, q);
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a.at(k, p);
                    let akq = a.at(k, q);
                    a.set(k, p, c * akp - s * akq);
                    a.set(k, q, s * akp + c * akq);
                }
                for k in 0..n {
                    let apk = a.at(p, k);
                    let aqk = a.at(q, k);
                    a.set(p, k, c * apk - s * aqk);
                    a.set(q, k, s * apk + c * aqk);
                }
                for k in 0..n {
                    let vkp = vecs.at(k, p);
                    let vkq = vecs.at(k, q);
                    vecs.set(k, p, c * vkp - s * vkq);
                    vecs.set(k, q, s * vkp + c * vkq);
                }
            }
        }
    }
    let values = (0..n).map(|i| a.at(i, i)).collect();
    Ok((values, vecs))
}

/// Dense spectral route for the same polynomial filter: decompose `L`,
/// evaluate `T_k` at the scaled eigenvalues, and project in the eigenbasis.
/// Test-only companion to [`chebyshev_filter`]; limited to small graphs.
pub fn spectral_filter_oracle(
    lap: &Tensor,
    lambda_max: f64,
    x: &Tensor,
    theta: &Tensor,
) -> Result<Tensor> {
    let n = lap.shape()[0];
    if n > 32 {
        return Err(Error::InvalidArgument(format!(
            "spectral oracle is limited to n <= 32, got {n}"
        )));
    }
    if theta.rank() != 3 || x.rank() != 2 {
        return Err(Error::ShapeMismatch {
            prim: "spectral-filter-oracle",
            detail: format!("x {:?}, theta {:?}", x.shape(), theta.shape()),
        });
    }
    let (k_order, f_in, f_out) = (theta.shape()[0], theta.shape()[1], theta.shape()[2]);
    let (values, vecs) = jacobi_eigh(lap)?;

    // x projected into the eigenbasis: (n, f_in)
    let xt = crate::numerics::tensor::matmul_tn(&vecs, x)?;

    let mut out = Tensor::zeros(&[n, f_out]);
    for k in 0..k_order {
        // T_k at each scaled eigenvalue
        let tk: Vec<f64> = values
            .iter()
            .map(|&l| chebyshev_scalar(k, 2.0 * l / lambda_max - 1.0))
            .collect();
        // U diag(tk) U^T x theta_k
        let mut scaled_xt = xt.clone();
        for i in 0..n {
            for f in 0..f_in {
                let v = scaled_xt.at(i, f) * tk[i];
                scaled_xt.set(i, f, v);
            }
        }
        let back = crate::numerics::tensor::matmul(&vecs, &scaled_xt)?;
        let theta_k = Tensor::new(
            vec![f_in, f_out],
            theta.data()[k * f_in * f_out..(k + 1) * f_in * f_out].to_vec(),
        )?;
        out.add_assign(&crate::numerics::tensor::matmul(&back, &theta_k)?);
    }
    Ok(out)
}

fn chebyshev_scalar(k: usize, x: f64) -> f64 {
    match k {
        0 => 1.0,
        1 => x,
        _ => {
            let (mut prev, mut curr) = (1.0, x);
            for _ in 2..=k {
                let next = 2.0 * x * curr - prev;
                prev = curr;
                curr = next;
            }
            curr
        }
    }
}
