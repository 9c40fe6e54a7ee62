//! Central finite-difference audit of objective gradients and constraint
//! Jacobians.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::Problem;
use crate::error::{Error, Result};
use crate::sparse::Triplets;

/// Worst mismatch seen for one constraint family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyDeviation {
    pub max_deviation: f64,
    /// Row name and column of the worst entry.
    pub worst_row: String,
    pub worst_col: usize,
    pub analytic: f64,
    pub finite_difference: f64,
}

/// Per-family maximum relative deviation `|an - fd| / max(1, |an|, |fd|)`.
/// A family is the row name up to its first `[`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DerivReport {
    pub families: BTreeMap<String, FamilyDeviation>,
}

impl DerivReport {
    pub fn max_deviation(&self) -> f64 {
        self.families
            .values()
            .fold(0.0, |m, d| m.max(d.max_deviation))
    }

    /// Folds another report in, keeping the worst entry per family.
    pub fn merge(&mut self, other: DerivReport) {
        for (k, v) in other.families {
            match self.families.get(&k) {
                Some(old) if old.max_deviation >= v.max_deviation => {}
                _ => {
                    self.families.insert(k, v);
                }
            }
        }
    }

    pub(crate) fn record(&mut self, row: String, col: usize, an: f64, fd: f64) {
        let dev = (an - fd).abs() / 1f64.max(an.abs()).max(fd.abs());
        let family = family_of(&row).to_string();
        let entry = self
            .families
            .entry(family)
            .or_insert_with(|| FamilyDeviation {
                max_deviation: -1.0,
                worst_row: String::new(),
                worst_col: 0,
                analytic: 0.0,
                finite_difference: 0.0,
            });
        if dev > entry.max_deviation {
            *entry = FamilyDeviation {
                max_deviation: dev,
                worst_row: row,
                worst_col: col,
                analytic: an,
                finite_difference: fd,
            };
        }
    }
}

pub fn family_of(name: &str) -> &str {
    name.split('[').next().unwrap_or(name)
}

/// Compares analytic derivatives against central differences with step
/// `h * max(1, |z_j|)` in every coordinate.
pub fn check_derivatives<P: Problem + ?Sized>(p: &P, z: &[f64], h: f64) -> Result<DerivReport> {
    let n = p.n_vars();
    if z.len() != n {
        return Err(Error::dim("derivative check point", n, z.len()));
    }
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(
            "finite-difference step must be positive".into(),
        ));
    }
    let (me, mi) = (p.n_eq(), p.n_ineq());
    let mut grad = vec![0.0; n];
    p.objective(z, Some(&mut grad))?;
    let (mut eq, mut ineq) = (vec![0.0; me], vec![0.0; mi]);
    let (mut je, mut ji) = (Triplets::new(me, n), Triplets::new(mi, n));
    p.constraints(z, &mut eq, &mut ineq, Some((&mut je, &mut ji)))?;
    let (de, di) = (je.to_dense(), ji.to_dense());
    let eq_names: Vec<String> = (0..me).map(|i| p.eq_name(i)).collect();
    let in_names: Vec<String> = (0..mi).map(|i| p.ineq_name(i)).collect();

    let mut report = DerivReport::default();
    let mut zp = z.to_vec();
    let (mut ep, mut ip) = (vec![0.0; me], vec![0.0; mi]);
    let (mut em, mut im) = (vec![0.0; me], vec![0.0; mi]);
    for j in 0..n {
        let step = h * 1f64.max(z[j].abs());
        zp[j] = z[j] + step;
        let fp = p.objective(&zp, None)?;
        p.constraints(&zp, &mut ep, &mut ip, None)?;
        zp[j] = z[j] - step;
        let fm = p.objective(&zp, None)?;
        p.constraints(&zp, &mut em, &mut im, None)?;
        zp[j] = z[j];
        let inv = 0.5 / step;
        report.record("objective".into(), j, grad[j], (fp - fm) * inv);
        for i in 0..me {
            let fd = (ep[i] - em[i]) * inv;
            let an = de[(i, j)];
            if an != 0.0 || fd != 0.0 {
                report.record(eq_names[i].clone(), j, an, fd);
            }
        }
        for i in 0..mi {
            let fd = (ip[i] - im[i]) * inv;
            let an = di[(i, j)];
            if an != 0.0 || fd != 0.0 {
                report.record(in_names[i].clone(), j, an, fd);
            }
        }
    }
    for d in report.families.values_mut() {
        d.max_deviation = d.max_deviation.max(0.0);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Linear row, a quadratic row and a deliberately wrong one.
    struct Toy {
        wrong: bool,
    }

    impl Problem for Toy {
        fn n_vars(&self) -> usize {
            2
        }
        fn n_eq(&self) -> usize {
            1
        }
        fn n_ineq(&self) -> usize {
            1
        }
        fn lower(&self) -> &[f64] {
            &[-10.0, -10.0]
        }
        fn upper(&self) -> &[f64] {
            &[10.0, 10.0]
        }
        fn objective(&self, z: &[f64], grad: Option<&mut [f64]>) -> Result<f64> {
            if let Some(g) = grad {
                g[0] = 2.0 * z[0];
                g[1] = 1.0;
            }
            Ok(z[0] * z[0] + z[1])
        }
        fn constraints(
            &self,
            z: &[f64],
            eq: &mut [f64],
            ineq: &mut [f64],
            jac: Option<(&mut Triplets, &mut Triplets)>,
        ) -> Result<()> {
            eq[0] = 3.0 * z[0] - z[1];
            ineq[0] = z[0] * z[1] - 1.0;
            if let Some((je, ji)) = jac {
                je.push(0, 0, 3.0);
                je.push(0, 1, -1.0);
                ji.push(0, 0, z[1]);
                ji.push(0, 1, if self.wrong { 2.0 * z[0] } else { z[0] });
            }
            Ok(())
        }
        fn eq_name(&self, i: usize) -> String {
            format!("lin[{i}]")
        }
        fn ineq_name(&self, i: usize) -> String {
            format!("prod[{i}]")
        }
    }

    #[test]
    fn exact_derivatives_pass() {
        let r = check_derivatives(&Toy { wrong: false }, &[1.5, -0.5], 1e-6).unwrap();
        assert!(r.max_deviation() < 1e-8, "{r:?}");
        assert_eq!(r.families.len(), 3);
        assert!(r.families["lin"].max_deviation < 1e-9);
    }

    #[test]
    fn wrong_entry_is_reported_by_family() {
        let r = check_derivatives(&Toy { wrong: true }, &[1.5, -0.5], 1e-6).unwrap();
        let d = &r.families["prod"];
        assert!(d.max_deviation > 0.1);
        assert_eq!(d.worst_col, 1);
        assert_eq!(d.worst_row, "prod[0]");
        assert!(r.families["lin"].max_deviation < 1e-9);
    }
}
