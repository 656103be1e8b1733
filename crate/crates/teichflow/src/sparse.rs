//! Minimal symmetric sparse matrix support: CSR storage, matrix-vector
//! products, and a Jacobi-preconditioned conjugate gradient solver. Used by
//! the uniformization Newton step and the ∂̄ eigensolver.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SparseError {
    #[error("conjugate gradient failed to converge in {0} iterations (residual {1:.3e})")]
    CgNonConvergence(usize, f64),
}

/// Triplet accumulator for building a CSR matrix.
#[derive(Default)]
pub struct Triplets {
    pub n: usize,
    entries: Vec<(u32, u32, f64)>,
}

impl Triplets {
    pub fn new(n: usize) -> Self {
        Triplets {
            n,
            entries: Vec::new(),
        }
    }

    pub fn push(&mut self, i: usize, j: usize, v: f64) {
        if v != 0.0 {
            self.entries.push((i as u32, j as u32, v));
        }
    }

    pub fn to_csr(mut self) -> Csr {
        self.entries.sort_unstable_by_key(|&(i, j, _)| (i, j));
        let mut row_ptr = vec![0usize; self.n + 1];
        let mut col: Vec<u32> = Vec::new();
        let mut val: Vec<f64> = Vec::new();
        let mut prev: Option<(u32, u32)> = None;
        for &(i, j, v) in &self.entries {
            if prev == Some((i, j)) {
                *val.last_mut().unwrap() += v;
            } else {
                col.push(j);
                val.push(v);
                row_ptr[i as usize + 1] = col.len();
                prev = Some((i, j));
            }
        }
        for i in 1..=self.n {
            if row_ptr[i] < row_ptr[i - 1] {
                row_ptr[i] = row_ptr[i - 1];
            }
        }
        Csr { row_ptr, col, val }
    }
}

#[derive(Clone, Debug)]
pub struct Csr {
    pub row_ptr: Vec<usize>,
    pub col: Vec<u32>,
    pub val: Vec<f64>,
}

impl Csr {
    pub fn n(&self) -> usize {
        self.row_ptr.len() - 1
    }

    pub fn mul_vec(&self, x: &[f64], y: &mut [f64]) {
        for i in 0..self.n() {
            let mut s = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                s += self.val[k] * x[self.col[k] as usize];
            }
            y[i] = s;
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.n()];
        for i in 0..self.n() {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                if self.col[k] as usize == i {
                    d[i] += self.val[k];
                }
            }
        }
        d
    }
}

/// Jacobi-preconditioned CG for SPD systems. `x` holds the initial guess on
/// entry and the solution on exit. Tolerance is relative to ‖b‖.
pub fn cg_solve(
    a: &Csr,
    b: &[f64],
    x: &mut [f64],
    rel_tol: f64,
    max_iter: usize,
) -> Result<usize, SparseError> {
    let n = a.n();
    let mut diag = a.diagonal();
    for d in diag.iter_mut() {
        if *d <= 0.0 {
            *d = 1.0;
        }
    }
    let bnorm = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if bnorm == 0.0 {
        x.fill(0.0);
        return Ok(0);
    }
    let mut r = vec![0.0; n];
    a.mul_vec(x, &mut r);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    let mut z: Vec<f64> = (0..n).map(|i| r[i] / diag[i]).collect();
    let mut p = z.clone();
    let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
    let mut ap = vec![0.0; n];
    for it in 0..max_iter {
        let rnorm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        if rnorm <= rel_tol * bnorm {
            return Ok(it);
        }
        a.mul_vec(&p, &mut ap);
        let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        for i in 0..n {
            z[i] = r[i] / diag[i];
        }
        let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    let rnorm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
    if rnorm <= rel_tol * bnorm {
        Ok(max_iter)
    } else {
        Err(SparseError::CgNonConvergence(max_iter, rnorm / bnorm))
    }
}

/// Lowest-`k` eigenpairs of the generalized symmetric problem A v = λ M v
/// with diagonal positive mass `m`, by block LOBPCG (Jacobi-preconditioned,
/// Rayleigh–Ritz over [X, preconditioned residuals, previous directions]).
/// Deterministic for a fixed seed. Returns eigenvalues ascending with
/// M-orthonormal eigenvectors.
pub fn lowest_eigenpairs(
    a: &Csr,
    m: &[f64],
    k: usize,
    rel_tol: f64,
    max_iter: usize,
    seed: u64,
) -> Result<(Vec<f64>, Vec<Vec<f64>>), SparseError> {
    use nalgebra::DMatrix;
    use rand::Rng;
    use rand::SeedableRng;
    let n = a.n();
    let nb = (k + 4).min(n);
    // Gershgorin bound for the pencil, used to scale residual tolerances
    let mut scale = 0.0f64;
    for i in 0..n {
        let row: f64 = (a.row_ptr[i]..a.row_ptr[i + 1]).map(|j| a.val[j].abs()).sum();
        scale = scale.max(row / m[i]);
    }
    let scale = scale.max(1e-300);
    let mdot = |x: &[f64], y: &[f64]| -> f64 {
        x.iter().zip(y).zip(m).map(|((a, b), w)| a * b * w).sum()
    };
    // modified Gram–Schmidt in the M inner product; drops near-dependent
    // columns (returns the surviving ones)
    let orthonormalize = |cols: Vec<Vec<f64>>| -> Vec<Vec<f64>> {
        let mut out: Vec<Vec<f64>> = Vec::new();
        for mut v in cols {
            for _pass in 0..2 {
                for q in &out {
                    let c = mdot(&v, q);
                    for i in 0..n {
                        v[i] -= c * q[i];
                    }
                }
            }
            let norm = mdot(&v, &v).sqrt();
            if norm > 1e-10 {
                for x in v.iter_mut() {
                    *x /= norm;
                }
                out.push(v);
            }
        }
        out
    };
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut x: Vec<Vec<f64>> = (0..nb)
        .map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    x = orthonormalize(x);
    let mut p: Vec<Vec<f64>> = Vec::new();
    // positions of the diagonal entries, for building A + σM in place
    let diag_pos: Vec<usize> = (0..n)
        .map(|i| {
            (a.row_ptr[i]..a.row_ptr[i + 1])
                .find(|&j| a.col[j] as usize == i)
                .expect("assembled quadratic form has a full diagonal")
        })
        .collect();
    let mut shifted = a.clone();
    let mut lam = vec![0.0; nb];
    let mut sigma = f64::NAN;
    let mut worst_res = f64::INFINITY;
    for _it in 0..max_iter {
        // residuals of the current Ritz block
        let ax: Vec<Vec<f64>> = x
            .iter()
            .map(|v| {
                let mut y = vec![0.0; n];
                a.mul_vec(v, &mut y);
                y
            })
            .collect();
        for (j, v) in x.iter().enumerate() {
            lam[j] = v.iter().zip(&ax[j]).map(|(a, b)| a * b).sum();
        }
        // inexact shift-invert preconditioner: loose CG solves of (A + σM),
        // with σ tracking the top Ritz value so the wanted cluster is
        // strongly amplified
        let new_sigma = (lam[x.len() - 1] * 1e-2).max(scale * 1e-13);
        if !(sigma.is_finite() && (new_sigma / sigma).ln().abs() < 1.0) {
            sigma = new_sigma;
            shifted.val.copy_from_slice(&a.val);
            for i in 0..n {
                shifted.val[diag_pos[i]] += sigma * m[i];
            }
        }
        let mut w: Vec<Vec<f64>> = Vec::new();
        worst_res = 0.0;
        for j in 0..x.len() {
            let r: Vec<f64> = (0..n).map(|i| ax[j][i] - lam[j] * m[i] * x[j][i]).collect();
            if j < k {
                let rn = r.iter().zip(m).map(|(v, w)| v * v / w).sum::<f64>().sqrt();
                worst_res = worst_res.max(rn / scale);
            }
            let mut wj = vec![0.0; n];
            // an approximate solve is enough for a search direction
            let _ = cg_solve(&shifted, &r, &mut wj, 1e-3, 300);
            w.push(wj);
        }
        if worst_res <= rel_tol {
            break;
        }
        // Rayleigh–Ritz over the combined subspace
        let mut s: Vec<Vec<f64>> = x.clone();
        s.extend(w);
        s.extend(p.iter().cloned());
        let s = orthonormalize(s);
        let ns = s.len();
        let as_: Vec<Vec<f64>> = s
            .iter()
            .map(|v| {
                let mut y = vec![0.0; n];
                a.mul_vec(v, &mut y);
                y
            })
            .collect();
        let mut proj = DMatrix::zeros(ns, ns);
        for i in 0..ns {
            for j in i..ns {
                let v: f64 = s[i].iter().zip(&as_[j]).map(|(a, b)| a * b).sum();
                proj[(i, j)] = v;
                proj[(j, i)] = v;
            }
        }
        let eig = proj.symmetric_eigen();
        let mut order: Vec<usize> = (0..ns).collect();
        order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
        let nkeep = nb.min(ns);
        let mut xnew: Vec<Vec<f64>> = Vec::with_capacity(nkeep);
        let mut pnew: Vec<Vec<f64>> = Vec::with_capacity(nkeep);
        for &col in order.iter().take(nkeep) {
            let mut xi = vec![0.0; n];
            let mut pi = vec![0.0; n];
            for j in 0..ns {
                let c = eig.eigenvectors[(j, col)];
                for i in 0..n {
                    xi[i] += c * s[j][i];
                }
                // direction component outside the previous X block
                if j >= x.len() {
                    for i in 0..n {
                        pi[i] += c * s[j][i];
                    }
                }
            }
            xnew.push(xi);
            pnew.push(pi);
        }
        x = orthonormalize(xnew);
        p = orthonormalize(pnew);
        p.truncate(nb);
    }
    if worst_res > rel_tol {
        return Err(SparseError::CgNonConvergence(max_iter, worst_res));
    }
    // final Rayleigh quotients, sorted
    let mut pairs: Vec<(f64, Vec<f64>)> = x
        .into_iter()
        .map(|v| {
            let mut y = vec![0.0; n];
            a.mul_vec(&v, &mut y);
            let l: f64 = v.iter().zip(&y).map(|(a, b)| a * b).sum();
            (l, v)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.truncate(k);
    let (vals, vecs) = pairs.into_iter().unzip();
    Ok((vals, vecs))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csr_assembly_merges_duplicates() {
        let mut t = Triplets::new(3);
        t.push(0, 0, 2.0);
        t.push(0, 0, 1.0);
        t.push(1, 1, 4.0);
        t.push(2, 2, 5.0);
        t.push(0, 2, -1.0);
        t.push(2, 0, -1.0);
        let m = t.to_csr();
        let x = [1.0, 2.0, 3.0];
        let mut y = [0.0; 3];
        m.mul_vec(&x, &mut y);
        assert_eq!(y, [3.0 * 1.0 - 3.0, 8.0, -1.0 + 15.0]);
    }

    #[test]
    fn lobpcg_finds_laplacian_modes() {
        // 1D Dirichlet Laplacian: eigenvalues 2 − 2cos(πj/(n+1))
        let n = 120;
        let mut t = Triplets::new(n);
        for i in 0..n {
            t.push(i, i, 2.0);
            if i + 1 < n {
                t.push(i, i + 1, -1.0);
                t.push(i + 1, i, -1.0);
            }
        }
        let a = t.to_csr();
        let m = vec![1.0; n];
        let (vals, vecs) = lowest_eigenpairs(&a, &m, 5, 1e-10, 2000, 7).unwrap();
        for (j, &l) in vals.iter().enumerate() {
            let exact =
                2.0 - 2.0 * (std::f64::consts::PI * (j as f64 + 1.0) / (n as f64 + 1.0)).cos();
            assert!((l - exact).abs() < 1e-9, "mode {j}: {l} vs {exact}");
        }
        // M-orthonormality
        for i in 0..5 {
            for j in 0..5 {
                let d: f64 = vecs[i].iter().zip(&vecs[j]).map(|(a, b)| a * b).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((d - want).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn cg_solves_spd_system() {
        // 1D Laplacian + identity
        let n = 50;
        let mut t = Triplets::new(n);
        for i in 0..n {
            t.push(i, i, 3.0);
            if i + 1 < n {
                t.push(i, i + 1, -1.0);
                t.push(i + 1, i, -1.0);
            }
        }
        let a = t.to_csr();
        let b: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let mut x = vec![0.0; n];
        cg_solve(&a, &b, &mut x, 1e-12, 1000).unwrap();
        let mut ax = vec![0.0; n];
        a.mul_vec(&x, &mut ax);
        let err: f64 = ax
            .iter()
            .zip(&b)
            .map(|(u, v)| (u - v) * (u - v))
            .sum::<f64>()
            .sqrt();
        assert!(err < 1e-10, "residual {err}");
    }
}
