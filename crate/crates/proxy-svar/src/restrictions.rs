//! Linear restriction machinery: `vec(M) = S * param + shift` for a
//! structural matrix `M`, built either from per-entry patterns or from
//! general linear constraints.

use nalgebra::{DMatrix, DVector};
use serde_json::Value;

use crate::error::{Error, Result};

/// One entry of a restriction pattern.
#[derive(Debug, Clone, PartialEq)]
pub enum Entry {
    Fixed(f64),
    /// Named free parameter with a sign multiplier (+1 or -1); entries that
    /// share a name share the parameter.
    Free { name: String, sign: f64 },
}

impl Entry {
    pub fn free(name: &str) -> Entry {
        Entry::Free {
            name: name.to_string(),
            sign: 1.0,
        }
    }
}

/// Which structural matrix a restriction set constrains.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    /// Target rows of `A = B^-1` (k x n).
    A1,
    /// Impact columns of the target shocks (n x k).
    B1,
    /// Proxy relevance matrix (s x s).
    Lambda,
    /// Impact columns of the instrumented non-target shocks (n x s).
    B2,
}

/// Affine parameterization `vec(M) = S * param + shift` with `S` of full
/// column rank.
#[derive(Debug, Clone)]
pub struct RestrictionSet {
    pub rows: usize,
    pub cols: usize,
    pub s_mat: DMatrix<f64>,
    pub shift: DVector<f64>,
    /// Parameter labels, one per column of `s_mat`.
    pub names: Vec<String>,
    pub target: Target,
}

impl RestrictionSet {
    /// Build from a per-entry pattern given in row-major order.
    ///
    /// Parameters are ordered by first appearance in `vec` (column-major)
    /// order, so a fully free square pattern with distinct names yields the
    /// identity selection.
    pub fn from_pattern(rows: usize, cols: usize, entries: &[Entry], target: Target) -> Result<Self> {
        if entries.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "pattern has {} entries, expected {}",
                entries.len(),
                rows * cols
            )));
        }
        let mut names: Vec<String> = Vec::new();
        // scan in vec order: entry (r, c) sits at row-major index r*cols + c
        for c in 0..cols {
            for r in 0..rows {
                if let Entry::Free { name, .. } = &entries[r * cols + c] {
                    if !names.contains(name) {
                        names.push(name.clone());
                    }
                }
            }
        }
        if names.is_empty() {
            return Err(Error::Invalid("pattern has no free parameters".into()));
        }
        let a = names.len();
        let mut s_mat = DMatrix::zeros(rows * cols, a);
        let mut shift = DVector::zeros(rows * cols);
        for c in 0..cols {
            for r in 0..rows {
                let vec_pos = c * rows + r;
                match &entries[r * cols + c] {
                    Entry::Fixed(v) => shift[vec_pos] = *v,
                    Entry::Free { name, sign } => {
                        let col = names.iter().position(|n| n == name).unwrap();
                        s_mat[(vec_pos, col)] = *sign;
                    }
                }
            }
        }
        let set = RestrictionSet {
            rows,
            cols,
            s_mat,
            shift,
            names,
            target,
        };
        set.check_rank()?;
        Ok(set)
    }

    /// Fully free matrix: identity selection, zero shift.
    pub fn all_free(rows: usize, cols: usize, target: Target) -> Self {
        let entries: Vec<Entry> = (0..rows)
            .flat_map(|r| (0..cols).map(move |c| Entry::free(&format!("p{}_{}", r + 1, c + 1))))
            .collect();
        RestrictionSet::from_pattern(rows, cols, &entries, target).unwrap()
    }

    /// Build from general linear constraints `R vec(M) = r`.
    ///
    /// The free directions span the null space of `R`; the shift is the
    /// minimum-norm solution. Parameters get synthetic names.
    pub fn from_linear_constraints(
        rows: usize,
        cols: usize,
        r_mat: &DMatrix<f64>,
        r_vec: &DVector<f64>,
        target: Target,
    ) -> Result<Self> {
        let dim = rows * cols;
        if r_mat.ncols() != dim || r_mat.nrows() != r_vec.len() {
            return Err(Error::Dimension("constraint system shape mismatch".into()));
        }
        // null space of R from the eigendecomposition of R'R (the thin SVD
        // does not expose the trailing right-singular vectors)
        let rtr = r_mat.transpose() * r_mat;
        let eig = rtr.symmetric_eigen();
        let emax = eig.eigenvalues.max().max(1.0);
        let tol = emax * 1e-24_f64.max(f64::EPSILON * dim as f64);
        let null_idx: Vec<usize> = (0..dim).filter(|&i| eig.eigenvalues[i] <= tol).collect();
        let a = null_idx.len();
        if a == 0 {
            return Err(Error::Invalid("constraints leave no free parameters".into()));
        }
        let mut s_mat = DMatrix::zeros(dim, a);
        for (j, &col) in null_idx.iter().enumerate() {
            for i in 0..dim {
                s_mat[(i, j)] = eig.eigenvectors[(i, col)];
            }
        }
        // minimum-norm particular solution via the pseudo-inverse
        let svd = r_mat.clone().svd(true, true);
        let sv_tol = svd.singular_values.max().max(1.0) * 1e-12;
        let shift = svd
            .solve(r_vec, sv_tol)
            .map_err(|e| Error::Numerical(format!("constraint solve failed: {e}")))?;
        // consistency: R * shift must reproduce r
        let gap = (r_mat * &shift - r_vec).amax();
        if gap > 1e-8 * (1.0 + r_vec.amax()) {
            return Err(Error::Invalid(
                "constraints are contradictory (no exact solution)".into(),
            ));
        }
        Ok(RestrictionSet {
            rows,
            cols,
            s_mat,
            shift,
            names: (0..a).map(|i| format!("q{}", i + 1)).collect(),
            target,
        })
    }

    fn check_rank(&self) -> Result<()> {
        let svd = self.s_mat.clone().svd(false, false);
        let smax = svd.singular_values.max();
        let smin = svd.singular_values.min();
        if !(smin > smax * 1e-10) {
            return Err(Error::Invalid(
                "selection matrix is rank deficient (duplicate or contradictory parameters)".into(),
            ));
        }
        Ok(())
    }

    /// Number of free parameters.
    pub fn n_free(&self) -> usize {
        self.s_mat.ncols()
    }

    /// Materialize the matrix for a parameter vector.
    pub fn realize(&self, param: &DVector<f64>) -> Result<DMatrix<f64>> {
        if param.len() != self.n_free() {
            return Err(Error::Dimension(format!(
                "parameter vector has length {}, expected {}",
                param.len(),
                self.n_free()
            )));
        }
        let v = &self.s_mat * param + &self.shift;
        Ok(DMatrix::from_column_slice(self.rows, self.cols, v.as_slice()))
    }

    /// Least-squares parameter vector reproducing `m` as closely as the
    /// restriction allows.
    pub fn project(&self, m: &DMatrix<f64>) -> Result<DVector<f64>> {
        if m.nrows() != self.rows || m.ncols() != self.cols {
            return Err(Error::Dimension("matrix shape does not match pattern".into()));
        }
        let v = DVector::from_column_slice(m.as_slice()) - &self.shift;
        let sts = self.s_mat.transpose() * &self.s_mat;
        let rhs = self.s_mat.transpose() * v;
        sts.lu()
            .solve(&rhs)
            .ok_or_else(|| Error::Singular("selection normal equations are singular".into()))
    }
}

/// Parse one pattern from its JSON form: a row-major array of entries, each
/// a number (fixed) or a parameter-name string ("-name" flips the sign).
pub fn parse_pattern_json(value: &Value) -> Result<Vec<Entry>> {
    let arr = value
        .as_array()
        .ok_or_else(|| Error::Config("restriction pattern must be a JSON array".into()))?;
    arr.iter()
        .map(|item| match item {
            Value::Number(x) => x
                .as_f64()
                .map(Entry::Fixed)
                .ok_or_else(|| Error::Config("non-finite fixed entry".into())),
            Value::String(s) => {
                let (sign, name) = match s.strip_prefix('-') {
                    Some(rest) => (-1.0, rest),
                    None => (1.0, s.as_str()),
                };
                if name.is_empty() {
                    return Err(Error::Config("empty parameter name".into()));
                }
                Ok(Entry::Free {
                    name: name.to_string(),
                    sign,
                })
            }
            other => Err(Error::Config(format!(
                "pattern entries must be numbers or strings, got {other}"
            ))),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn all_free_is_identity() {
        let set = RestrictionSet::all_free(2, 3, Target::A1);
        assert_eq!(set.n_free(), 6);
        assert!((&set.s_mat - DMatrix::<f64>::identity(6, 6)).amax() < 1e-15);
        assert!(set.shift.amax() < 1e-15);
    }

    #[test]
    fn mc_design_alpha12_zero() {
        // 1 x 3 target row with the middle coefficient pinned to zero
        let entries = vec![Entry::free("a11"), Entry::Fixed(0.0), Entry::free("a13")];
        let set = RestrictionSet::from_pattern(1, 3, &entries, Target::A1).unwrap();
        assert_eq!(set.n_free(), 2);
        assert_eq!(set.s_mat[(0, 0)], 1.0);
        assert_eq!(set.s_mat[(2, 1)], 1.0);
        assert_eq!(set.s_mat[(1, 0)], 0.0);
        assert_eq!(set.s_mat[(1, 1)], 0.0);
    }

    #[test]
    fn upper_triangular_lambda() {
        let entries = vec![
            Entry::free("l11"),
            Entry::free("l12"),
            Entry::Fixed(0.0),
            Entry::free("l22"),
        ];
        let set = RestrictionSet::from_pattern(2, 2, &entries, Target::Lambda).unwrap();
        assert_eq!(set.n_free(), 3);
        let m = set
            .realize(&DVector::from_vec(vec![1.0, 2.0, 3.0]))
            .unwrap();
        assert_eq!(m[(1, 0)], 0.0);
    }

    #[test]
    fn shared_sign_flipped_parameter() {
        let entries = vec![
            Entry::free("a"),
            Entry::Free {
                name: "a".into(),
                sign: -1.0,
            },
        ];
        let set = RestrictionSet::from_pattern(1, 2, &entries, Target::A1).unwrap();
        assert_eq!(set.n_free(), 1);
        let m = set.realize(&DVector::from_vec(vec![3.0])).unwrap();
        assert_eq!(m[(0, 0)], 3.0);
        assert_eq!(m[(0, 1)], -3.0);
    }

    #[test]
    fn linear_constraints_reproduce_pattern() {
        // constraint: first entry of a 1x3 row is zero
        let mut r = DMatrix::zeros(1, 3);
        r[(0, 0)] = 1.0;
        let set = RestrictionSet::from_linear_constraints(
            1,
            3,
            &r,
            &DVector::zeros(1),
            Target::A1,
        )
        .unwrap();
        assert_eq!(set.n_free(), 2);
        let p = DVector::from_vec(vec![1.0, -2.0]);
        let m = set.realize(&p).unwrap();
        assert!(m[(0, 0)].abs() < 1e-12);
    }

    #[test]
    fn contradictory_constraints_rejected() {
        let mut r = DMatrix::zeros(2, 2);
        r[(0, 0)] = 1.0;
        r[(1, 0)] = 1.0;
        let rhs = DVector::from_vec(vec![0.0, 1.0]);
        assert!(RestrictionSet::from_linear_constraints(1, 2, &r, &rhs, Target::A1).is_err());
    }

    #[test]
    fn pattern_json_parses() {
        let v: Value = serde_json::from_str(r#"[1.0, "a", "-a", 0]"#).unwrap();
        let entries = parse_pattern_json(&v).unwrap();
        assert_eq!(entries[0], Entry::Fixed(1.0));
        assert_eq!(
            entries[2],
            Entry::Free {
                name: "a".into(),
                sign: -1.0
            }
        );
    }

    proptest! {
        #[test]
        fn realize_project_roundtrip(vals in proptest::collection::vec(-5f64..5.0, 3)) {
            let entries = vec![
                Entry::free("a"),
                Entry::Fixed(1.5),
                Entry::free("b"),
                Entry::free("c"),
            ];
            let set = RestrictionSet::from_pattern(2, 2, &entries, Target::Lambda).unwrap();
            let p = DVector::from_vec(vals.clone());
            let m = set.realize(&p).unwrap();
            let back = set.project(&m).unwrap();
            prop_assert!((back - p).amax() < 1e-10);
        }
    }

    #[test]
    fn random_linear_restrictions_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(51);
        for _ in 0..20 {
            let r = DMatrix::from_fn(2, 6, |_, _| StandardNormal.sample(&mut rng));
            let rhs = DVector::from_fn(2, |_, _| StandardNormal.sample(&mut rng));
            let set =
                RestrictionSet::from_linear_constraints(2, 3, &r, &rhs, Target::A1).unwrap();
            let p = DVector::from_fn(set.n_free(), |_, _| StandardNormal.sample(&mut rng));
            let m = set.realize(&p).unwrap();
            let v = DVector::from_column_slice(m.as_slice());
            // the realized matrix satisfies the constraints
            assert!((&r * v - &rhs).amax() < 1e-9);
            // projection inverts realization
            let back = set.project(&m).unwrap();
            assert!((back - p).amax() < 1e-9);
        }
    }
}
