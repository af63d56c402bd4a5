//! The Frobenius–Perron operator of a [`PiecewiseMap`]: its pointwise action on
//! grid functions, the Ulam discretization, invariant densities and spectra.

use std::fmt::Write as _;

use nalgebra::{Complex, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::gridfn::{cell_index, variation_default, GridError, GridFunction};
use crate::map_model::{MapError, PiecewiseMap, INVERSE_TOL};

/// Largest matrix handed to the dense eigensolver.
pub const DENSE_CUTOFF: usize = 4096;
/// Distance from the unit circle below which an eigenvalue counts as unimodular.
pub const UNIT_TOL: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum TransferError {
    #[error("assembly failed for branch {branch}, bin {bin}: {source}")]
    Assembly {
        branch: usize,
        bin: usize,
        #[source]
        source: MapError,
    },
    #[error("grid needs at least 2 cells, got {0}")]
    TooSmall(usize),
    #[error(
        "power iteration did not converge after {iterations} iterations (last L1 residual {residual:e}); \
         the unit eigenvalue may be multiple or peripheral, inspect the spectrum"
    )]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("{0}")]
    Parameters(String),
    #[error("eigensolver failed: {0}")]
    Spectral(String),
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// One preimage contribution to `P f` at a cell midpoint.
#[derive(Debug, Clone, Copy)]
struct Tap {
    source: usize,
    weight: f64,
}

/// `P_τ` on an `n`-cell grid, evaluated at cell midpoints with `f` looked up
/// by cell. The preimage stencil depends only on the map and `n`, so it is
/// built once and reused across iterates.
#[derive(Debug, Clone)]
pub struct FpOperator {
    n: usize,
    offsets: Vec<usize>,
    taps: Vec<Tap>,
}

impl FpOperator {
    pub fn new(map: &PiecewiseMap, n: usize) -> Result<Self, TransferError> {
        if n < 2 {
            return Err(TransferError::TooSmall(n));
        }
        let rows: Vec<Vec<Tap>> = (0..n)
            .into_par_iter()
            .map(|k| {
                let x = (k as f64 + 0.5) / n as f64;
                let mut taps = Vec::with_capacity(map.branch_count());
                for (b, branch) in map.branches.iter().enumerate() {
                    let img = branch.image;
                    // Half-open images, closed at 1, so shared image endpoints count once.
                    let inside = (img.lo <= x && x < img.hi) || (x == img.hi && img.hi >= 1.0 - 1e-12);
                    if !inside {
                        continue;
                    }
                    let y = branch
                        .inverse(x, INVERSE_TOL)
                        .map_err(|source| TransferError::Assembly { branch: b, bin: k, source })?;
                    let (_, d) = branch.value_and_slope(y).map_err(|source| TransferError::Assembly {
                        branch: b,
                        bin: k,
                        source: MapError::Eval { branch: b, x: y, source },
                    })?;
                    // The preimage lies in the branch domain; keep its cell there.
                    let y_cell = y.clamp(branch.domain.lo, branch.domain.hi);
                    let mut source = cell_index(y_cell, n);
                    let cell_lo = source as f64 / n as f64;
                    if source > 0 && cell_lo >= branch.domain.hi && y_cell <= branch.domain.hi {
                        source -= 1;
                    }
                    taps.push(Tap { source, weight: 1.0 / d.abs() });
                }
                Ok(taps)
            })
            .collect::<Result<_, TransferError>>()?;
        let mut offsets = Vec::with_capacity(n + 1);
        let mut taps = Vec::new();
        offsets.push(0);
        for row in rows {
            taps.extend(row);
            offsets.push(taps.len());
        }
        Ok(FpOperator { n, offsets, taps })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn apply(&self, f: &GridFunction) -> GridFunction {
        assert_eq!(f.n(), self.n, "grid size mismatch");
        let v = f.values();
        let out: Vec<f64> = (0..self.n)
            .map(|k| self.taps[self.offsets[k]..self.offsets[k + 1]].iter().map(|t| t.weight * v[t.source]).sum())
            .collect();
        GridFunction::new(out).expect("finite weights preserve finiteness")
    }

    pub fn iterate(&self, f: &GridFunction, times: usize) -> GridFunction {
        let mut g = f.clone();
        for _ in 0..times {
            g = self.apply(&g);
        }
        g
    }
}

/// `P_τ f` on the grid of `f`.
pub fn apply_fp(map: &PiecewiseMap, f: &GridFunction) -> Result<GridFunction, TransferError> {
    Ok(FpOperator::new(map, f.n())?.apply(f))
}

/// Compressed sparse rows.
#[derive(Debug, Clone, PartialEq)]
struct Csr {
    offsets: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl Csr {
    fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.offsets[i]..self.offsets[i + 1];
        self.cols[r.clone()].iter().copied().zip(self.vals[r].iter().copied())
    }

    fn transpose(&self, n: usize) -> Csr {
        let mut counts = vec![0usize; n + 1];
        for &c in &self.cols {
            counts[c + 1] += 1;
        }
        for j in 0..n {
            counts[j + 1] += counts[j];
        }
        let mut next = counts.clone();
        let mut cols = vec![0; self.cols.len()];
        let mut vals = vec![0.0; self.vals.len()];
        for i in 0..n {
            for (j, v) in self.row(i) {
                cols[next[j]] = i;
                vals[next[j]] = v;
                next[j] += 1;
            }
        }
        Csr { offsets: counts, cols, vals }
    }
}

/// Ulam matrix: entry `(i, j)` is the fraction of bin `B_i` that the map sends
/// into bin `B_j`.
#[derive(Debug, Clone)]
pub struct UlamOperator {
    n: usize,
    rows: Csr,
    cols: Csr,
}

/// Preimage of one target bin under one branch, as an interval of the domain.
#[derive(Debug, Clone, Copy)]
struct Segment {
    x0: f64,
    x1: f64,
    bin: usize,
}

fn snap(y: f64, n: usize) -> f64 {
    let t = y * n as f64;
    let r = t.round();
    if (t - r).abs() < 1e-9 {
        r / n as f64
    } else {
        y
    }
}

fn branch_segments(map: &PiecewiseMap, b: usize, n: usize) -> Result<Vec<Segment>, TransferError> {
    let branch = &map.branches[b];
    let ylo = snap(branch.image.lo.max(0.0), n);
    let yhi = snap(branch.image.hi.min(1.0), n);
    let first_bin = cell_index(ylo, n);
    let jlo = (ylo * n as f64).floor() as usize + 1;
    let jhi = ((yhi * n as f64).ceil() as usize).saturating_sub(1);
    let increasing = branch.monotone_sign > 0;
    let (x_at_lo, x_at_hi) =
        if increasing { (branch.domain.lo, branch.domain.hi) } else { (branch.domain.hi, branch.domain.lo) };
    // Preimages of the bin edges strictly inside the image, in image order.
    let mut xs = Vec::with_capacity(jhi.saturating_sub(jlo) + 3);
    xs.push(x_at_lo);
    for j in jlo..=jhi {
        if j == 0 || j >= n {
            continue;
        }
        let y = j as f64 / n as f64;
        let x = branch.inverse(y, INVERSE_TOL).map_err(|source| TransferError::Assembly { branch: b, bin: j, source })?;
        xs.push(x);
    }
    xs.push(x_at_hi);
    let mut segs: Vec<Segment> = xs
        .windows(2)
        .enumerate()
        .map(|(m, w)| {
            let (x0, x1) = if increasing { (w[0], w[1]) } else { (w[1], w[0]) };
            Segment { x0, x1, bin: (first_bin + m).min(n - 1) }
        })
        .collect();
    if !increasing {
        segs.reverse();
    }
    Ok(segs)
}

impl UlamOperator {
    pub fn new(map: &PiecewiseMap, n: usize) -> Result<Self, TransferError> {
        if n < 2 {
            return Err(TransferError::TooSmall(n));
        }
        let segments: Vec<Vec<Segment>> =
            (0..map.branch_count()).map(|b| branch_segments(map, b, n)).collect::<Result<_, _>>()?;
        let nf = n as f64;
        let rows: Vec<Vec<(usize, f64)>> = (0..n)
            .into_par_iter()
            .map(|i| {
                let (a, c) = (i as f64 / nf, (i + 1) as f64 / nf);
                let mut entries: Vec<(usize, f64)> = Vec::new();
                for segs in &segments {
                    let start = segs.partition_point(|s| s.x1 <= a);
                    for s in &segs[start..] {
                        if s.x0 >= c {
                            break;
                        }
                        let overlap = s.x1.min(c) - s.x0.max(a);
                        if overlap > 0.0 {
                            entries.push((s.bin, overlap * nf));
                        }
                    }
                }
                entries.sort_by_key(|e| e.0);
                let mut merged: Vec<(usize, f64)> = Vec::with_capacity(entries.len());
                for (j, v) in entries {
                    match merged.last_mut() {
                        Some(last) if last.0 == j => last.1 += v,
                        _ => merged.push((j, v)),
                    }
                }
                merged
            })
            .collect();
        let mut offsets = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        offsets.push(0);
        for row in rows {
            for (j, v) in row {
                cols.push(j);
                vals.push(v);
            }
            offsets.push(cols.len());
        }
        let rows = Csr { offsets, cols, vals };
        let cols = rows.transpose(n);
        Ok(UlamOperator { n, rows, cols })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.rows.vals.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.rows.row(i)
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.row(i).map(|(_, v)| v).sum()).collect()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.row(i).find(|e| e.0 == j).map_or(0.0, |e| e.1)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                m[(i, j)] = v;
            }
        }
        m
    }

    /// Density update `v ↦ vM`, summed in a fixed order per output cell.
    pub fn push_forward(&self, v: &[f64]) -> Vec<f64> {
        (0..self.n).into_par_iter().map(|j| self.cols.row(j).map(|(i, m)| v[i] * m).sum()).collect()
    }

    /// `v ↦ Mv`: the conditional-expectation action on observables.
    pub fn pull_back(&self, v: &[f64]) -> Vec<f64> {
        (0..self.n).into_par_iter().map(|i| self.row(i).map(|(j, m)| m * v[j]).sum()).collect()
    }

    /// Number of closed communicating classes of the transition graph, an
    /// upper bound for the number of ergodic components seen by the chain.
    pub fn closed_class_count(&self) -> usize {
        use petgraph::algo::condensation;
        use petgraph::graph::DiGraph;
        let mut g: DiGraph<(), ()> = DiGraph::with_capacity(self.n, self.nnz());
        let nodes: Vec<_> = (0..self.n).map(|_| g.add_node(())).collect();
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                if v > 0.0 {
                    g.add_edge(nodes[i], nodes[j], ());
                }
            }
        }
        let dag = condensation(g, true);
        dag.node_indices().filter(|&c| dag.neighbors(c).next().is_none()).count()
    }

    /// Sparse triplet CSV with header `row,col,value`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("row,col,value\n");
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                let _ = writeln!(out, "{i},{j},{}", crate::fmt17(v));
            }
        }
        out
    }
}

pub fn ulam_matrix(map: &PiecewiseMap, n: usize) -> Result<UlamOperator, TransferError> {
    UlamOperator::new(map, n)
}

fn l1_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64
}

fn normalize_density(mut v: Vec<f64>) -> Vec<f64> {
    for x in v.iter_mut() {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
    let mass = v.iter().sum::<f64>() / v.len() as f64;
    if mass > 0.0 {
        for x in v.iter_mut() {
            *x /= mass;
        }
    }
    v
}

fn power_iterate(op: &UlamOperator, tol: f64, max_iters: usize, lazy: bool) -> Result<Vec<f64>, TransferError> {
    let mut v = vec![1.0; op.n];
    let mut residual = f64::INFINITY;
    for _ in 0..max_iters {
        let mut next = op.push_forward(&v);
        if lazy {
            for (x, y) in next.iter_mut().zip(&v) {
                *x = 0.5 * (*x + y);
            }
        }
        residual = l1_distance(&next, &v);
        v = next;
        if residual < tol {
            return Ok(normalize_density(v));
        }
    }
    Err(TransferError::NoConvergence { iterations: max_iters, residual })
}

/// Fixed point of the density update by power iteration from the uniform
/// density, normalized to integral 1.
pub fn invariant_density(op: &UlamOperator, tol: f64, max_iters: usize) -> Result<GridFunction, TransferError> {
    Ok(GridFunction::new(power_iterate(op, tol, max_iters, false)?)?)
}

#[derive(Debug, Clone, Serialize)]
pub struct SpectralReport {
    /// Leading eigenvalues as `(re, im)`, by decreasing modulus.
    pub eigenvalues: Vec<(f64, f64)>,
    pub unit_multiplicity: usize,
    /// `1 - |λ|` for the largest non-unimodular eigenvalue among those computed.
    pub spectral_gap: Option<f64>,
    #[serde(skip)]
    pub invariant_density: GridFunction,
    pub dense: bool,
}

impl SpectralReport {
    pub fn moduli(&self) -> Vec<f64> {
        self.eigenvalues.iter().map(|&(re, im)| re.hypot(im)).collect()
    }

    pub fn second_modulus(&self) -> Option<f64> {
        self.spectral_gap.map(|g| 1.0 - g)
    }

    /// CSV with header `re,im,modulus`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("re,im,modulus\n");
        for &(re, im) in &self.eigenvalues {
            let _ = writeln!(out, "{},{},{}", crate::fmt17(re), crate::fmt17(im), crate::fmt17(re.hypot(im)));
        }
        out
    }
}

fn sort_by_modulus(mut eig: Vec<Complex<f64>>) -> Vec<Complex<f64>> {
    eig.sort_by(|a, b| b.norm().total_cmp(&a.norm()).then(b.re.total_cmp(&a.re)).then(b.im.total_cmp(&a.im)));
    eig
}

/// All eigenvalues of the dense Ulam matrix, by decreasing modulus.
pub fn dense_eigenvalues(op: &UlamOperator) -> Result<Vec<Complex<f64>>, TransferError> {
    let m = op.to_dense();
    let schur = m
        .try_schur(f64::EPSILON, 0)
        .ok_or_else(|| TransferError::Spectral("Schur decomposition did not converge".into()))?;
    Ok(sort_by_modulus(schur.complex_eigenvalues().iter().copied().collect()))
}

/// Ritz values of an Arnoldi factorization of the density update.
fn arnoldi_eigenvalues(op: &UlamOperator, k: usize) -> Result<Vec<Complex<f64>>, TransferError> {
    let n = op.n;
    let m = n.min((4 * k + 40).max(160));
    let mut rng = ChaCha8Rng::seed_from_u64(0x0a11_0c47);
    let mut q: Vec<DVector<f64>> = Vec::with_capacity(m + 1);
    let v0 = DVector::from_fn(n, |_, _| rng.random::<f64>() - 0.5);
    q.push(&v0 / v0.norm());
    let mut h = DMatrix::<f64>::zeros(m + 1, m);
    let mut dim = m;
    for j in 0..m {
        let mut w = DVector::from_vec(op.push_forward(q[j].as_slice()));
        // two passes of Gram–Schmidt keep the basis orthogonal to working precision
        for _ in 0..2 {
            for (i, qi) in q.iter().enumerate() {
                let c = qi.dot(&w);
                h[(i, j)] += c;
                w -= qi * c;
            }
        }
        let beta = w.norm();
        h[(j + 1, j)] = beta;
        if beta < 1e-12 {
            dim = j + 1;
            break;
        }
        q.push(w / beta);
    }
    let hm = h.view((0, 0), (dim, dim)).into_owned();
    let schur = hm
        .try_schur(f64::EPSILON, 0)
        .ok_or_else(|| TransferError::Spectral("Hessenberg eigensolve did not converge".into()))?;
    Ok(sort_by_modulus(schur.complex_eigenvalues().iter().copied().collect()))
}

/// Leading `k` eigenvalues of the Ulam matrix with unimodular count and gap.
///
/// Dense Schur up to [`DENSE_CUTOFF`] bins, an Arnoldi factorization above.
pub fn spectrum(op: &UlamOperator, k: usize) -> Result<SpectralReport, TransferError> {
    let k = k.max(2);
    let dense = op.n <= DENSE_CUTOFF;
    let all = if dense { dense_eigenvalues(op)? } else { arnoldi_eigenvalues(op, k)? };
    let top: Vec<Complex<f64>> = all.iter().copied().take(k).collect();
    let unit_multiplicity = all.iter().filter(|z| (z.norm() - 1.0).abs() < UNIT_TOL).count();
    let spectral_gap = top.iter().map(|z| z.norm()).find(|&r| (r - 1.0).abs() >= UNIT_TOL).map(|r| 1.0 - r);
    let density = match power_iterate(op, 1e-13, 20_000, false) {
        Ok(v) => v,
        // a peripheral eigenvalue other than 1 makes the plain iteration cycle
        Err(TransferError::NoConvergence { .. }) => power_iterate(op, 1e-13, 200_000, true)?,
        Err(e) => return Err(e),
    };
    Ok(SpectralReport {
        eigenvalues: top.iter().map(|z| (z.re, z.im)).collect(),
        unit_multiplicity,
        spectral_gap,
        invariant_density: GridFunction::new(density)?,
        dense,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct NormSeries {
    pub p: f64,
    pub a: f64,
    /// `‖P^k f‖_{1,1/p}` for `k = 0..=n_max`.
    pub norms: Vec<f64>,
    pub f_l1: f64,
    /// `C·‖f‖_1` when the constants are admissible.
    pub bound: Option<f64>,
    pub within_bound: Vec<bool>,
    /// First iterate from which every later norm respects the bound.
    pub n0: Option<usize>,
}

/// BV norms of the iterates `P^k f`, compared against the uniform bound
/// `C·‖f‖_1` built from the Lasota–Yorke constants at `(p, A)`.
pub fn iterate_norm_series(
    map: &PiecewiseMap,
    f: &GridFunction,
    p: f64,
    a: f64,
    n_max: usize,
) -> Result<NormSeries, TransferError> {
    let op = FpOperator::new(map, f.n())?;
    let constants = crate::analysis::ly_constants_for_map(map, p, 1.0, a, None)
        .map_err(|e| TransferError::Parameters(e.to_string()))?;
    let f_l1 = f.lq_norm(1.0);
    let bound = constants.c.map(|c| c * f_l1);
    let mut norms = Vec::with_capacity(n_max + 1);
    let mut g = f.clone();
    for k in 0..=n_max {
        if k > 0 {
            g = op.apply(&g);
        }
        norms.push(variation_default(&g, 1.0, p, a).bv_norm);
    }
    let within_bound: Vec<bool> = norms.iter().map(|&v| bound.is_some_and(|b| v <= b)).collect();
    let n0 = bound.and_then(|_| {
        let bad = within_bound.iter().rposition(|&ok| !ok);
        match bad {
            None => Some(0),
            Some(k) if k < n_max => Some(k + 1),
            Some(_) => None,
        }
    });
    Ok(NormSeries { p, a, norms, f_l1, bound, within_bound, n0 })
}
