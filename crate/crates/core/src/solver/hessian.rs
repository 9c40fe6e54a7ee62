//! Compressed finite-difference Hessians of `y^T c(z)` for fixed weights.
//!
//! Two columns can share one gradient difference when no gradient entry
//! depends on both, i.e. they are at distance > 2 in the row-sharing graph.
//! Columns coupled to almost everything (a free final time, say) would
//! serialise the colouring, so they are differenced alone and their rows are
//! recovered by symmetry.

use nalgebra::DMatrix;

use crate::sparse::Triplets;

/// Columns sharing one color, and the `(row, column)` entries they recover.
type ColorGroup = (Vec<usize>, Vec<(usize, usize)>);

#[derive(Debug, Clone)]
pub struct HessianPattern {
    n: usize,
    /// Columns differenced one at a time.
    dense: Vec<usize>,
    /// Column groups plus, per group, the `(row, column)` pairs it yields.
    groups: Vec<ColorGroup>,
}

impl HessianPattern {
    /// Builds the colouring from `(equality, inequality)` Jacobian samples;
    /// their union is used so accidental zeros do not hide a dependency.
    /// Columns with `fixed[j]` are skipped entirely.
    pub fn from_jacobians(n: usize, samples: &[(&Triplets, &Triplets)], fixed: &[bool]) -> Self {
        let mut by_row: std::collections::HashMap<(bool, usize), Vec<usize>> = Default::default();
        for (je, ji) in samples {
            for (tag, t) in [(false, je), (true, ji)] {
                for k in 0..t.len() {
                    by_row.entry((tag, t.rows[k])).or_default().push(t.cols[k]);
                }
            }
        }
        let mut adj: Vec<Vec<usize>> = (0..n).map(|j| vec![j]).collect();
        for cols in by_row.values_mut() {
            cols.sort_unstable();
            cols.dedup();
            for &a in cols.iter() {
                adj[a].extend(cols.iter().copied());
            }
        }
        for a in adj.iter_mut() {
            a.sort_unstable();
            a.dedup();
        }
        let threshold = (4.0 * (n as f64).sqrt()).max(40.0) as usize;
        let is_dense: Vec<bool> = (0..n)
            .map(|j| !fixed[j] && adj[j].len() > threshold)
            .collect();
        let dense: Vec<usize> = (0..n).filter(|&j| is_dense[j]).collect();

        let mut color = vec![usize::MAX; n];
        let mut n_colors = 0;
        let mut mark = Vec::new();
        for j in 0..n {
            if fixed[j] || is_dense[j] {
                continue;
            }
            mark.clear();
            for &i in &adj[j] {
                if is_dense[i] {
                    continue;
                }
                for &k in &adj[i] {
                    if color[k] != usize::MAX {
                        mark.push(color[k]);
                    }
                }
            }
            mark.sort_unstable();
            mark.dedup();
            let c = (0..).find(|c| mark.binary_search(c).is_err()).unwrap_or(0);
            color[j] = c;
            n_colors = n_colors.max(c + 1);
        }
        let mut groups: Vec<ColorGroup> = vec![(Vec::new(), Vec::new()); n_colors];
        for j in 0..n {
            if color[j] != usize::MAX {
                groups[color[j]].0.push(j);
                for &i in &adj[j] {
                    if !is_dense[i] {
                        groups[color[j]].1.push((i, j));
                    }
                }
            }
        }
        HessianPattern { n, dense, groups }
    }

    /// Number of gradient differences one Hessian costs.
    pub fn evaluations(&self) -> usize {
        self.dense.len() + self.groups.len()
    }

    /// Forward-difference Hessian of a gradient map `grad(z, out)`; the
    /// result is symmetrised.
    pub fn assemble<F>(
        &self,
        z: &[f64],
        g0: &[f64],
        step: f64,
        mut grad: F,
    ) -> Result<DMatrix<f64>, String>
    where
        F: FnMut(&[f64], &mut [f64]) -> Result<(), String>,
    {
        let n = self.n;
        let mut h = DMatrix::zeros(n, n);
        let mut zp = z.to_vec();
        let mut gp = vec![0.0; n];
        let steps: Vec<f64> = z.iter().map(|v| step * v.abs().max(1.0)).collect();
        for &j in &self.dense {
            zp[j] = z[j] + steps[j];
            grad(&zp, &mut gp)?;
            zp[j] = z[j];
            for i in 0..n {
                h[(i, j)] = (gp[i] - g0[i]) / steps[j];
            }
        }
        for (cols, entries) in &self.groups {
            for &j in cols {
                zp[j] = z[j] + steps[j];
            }
            grad(&zp, &mut gp)?;
            for &j in cols {
                zp[j] = z[j];
            }
            for &(i, j) in entries {
                h[(i, j)] = (gp[i] - g0[i]) / steps[j];
            }
        }
        // dense rows come from dense columns
        for &d in &self.dense {
            for j in 0..n {
                h[(d, j)] = h[(j, d)];
            }
        }
        let ht = h.transpose();
        h += ht;
        h *= 0.5;
        Ok(h)
    }
}
