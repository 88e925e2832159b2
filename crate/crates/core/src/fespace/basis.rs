//! Equispaced Lagrange basis of degree k on a tetrahedron, in barycentric
//! coordinates.

/// Barycentric multi-indices `alpha` with `|alpha| = k`, in local dof order.
pub fn multi_indices(k: usize) -> Vec<[usize; 4]> {
    let mut out = Vec::new();
    for a0 in (0..=k).rev() {
        for a1 in (0..=k - a0).rev() {
            for a2 in (0..=k - a0 - a1).rev() {
                out.push([a0, a1, a2, k - a0 - a1 - a2]);
            }
        }
    }
    out
}

pub fn n_local(k: usize) -> usize {
    (k + 1) * (k + 2) * (k + 3) / 6
}

/// `prod_{j<m} (k s - j) / (j + 1)` and its derivative in `s`.
fn lattice_factor(k: usize, m: usize, s: f64) -> (f64, f64) {
    let kf = k as f64;
    let mut val = 1.0;
    let mut der = 0.0;
    for j in 0..m {
        let c = 1.0 / (j as f64 + 1.0);
        let f = (kf * s - j as f64) * c;
        der = der * f + val * kf * c;
        val *= f;
    }
    (val, der)
}

/// Values and barycentric partial derivatives of every basis function.
#[derive(Clone, Debug)]
pub struct LagrangeBasis {
    pub degree: usize,
    pub alphas: Vec<[usize; 4]>,
}

impl LagrangeBasis {
    pub fn new(degree: usize) -> Self {
        assert!(degree >= 1, "polynomial degree must be at least 1");
        Self {
            degree,
            alphas: multi_indices(degree),
        }
    }

    pub fn len(&self) -> usize {
        self.alphas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alphas.is_empty()
    }

    /// Evaluates at barycentric `lambda`: values and `d phi / d lambda_i`.
    pub fn eval(&self, lambda: &[f64; 4]) -> (Vec<f64>, Vec<[f64; 4]>) {
        let k = self.degree;
        let mut vals = Vec::with_capacity(self.len());
        let mut ders = Vec::with_capacity(self.len());
        for alpha in &self.alphas {
            let f: [(f64, f64); 4] = [0, 1, 2, 3].map(|i| lattice_factor(k, alpha[i], lambda[i]));
            let v = f.iter().map(|p| p.0).product();
            let mut d = [0.0; 4];
            for i in 0..4 {
                d[i] = f[i].1 * (0..4).filter(|&j| j != i).map(|j| f[j].0).product::<f64>();
            }
            vals.push(v);
            ders.push(d);
        }
        (vals, ders)
    }

    /// Reference coordinates of local node `i`.
    pub fn node_barycentric(&self, i: usize) -> [f64; 4] {
        self.alphas[i].map(|a| a as f64 / self.degree as f64)
    }
}

pub fn reference_to_barycentric(xi: &[f64; 3]) -> [f64; 4] {
    [1.0 - xi[0] - xi[1] - xi[2], xi[0], xi[1], xi[2]]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts() {
        for k in 1..=4 {
            assert_eq!(multi_indices(k).len(), n_local(k));
        }
    }

    #[test]
    fn kronecker_property_and_partition_of_unity() {
        for k in 1..=4 {
            let b = LagrangeBasis::new(k);
            for i in 0..b.len() {
                let (v, _) = b.eval(&b.node_barycentric(i));
                for (j, vj) in v.iter().enumerate() {
                    let expect = if i == j { 1.0 } else { 0.0 };
                    assert!((vj - expect).abs() < 1e-13);
                }
            }
            let lam = [0.1, 0.2, 0.3, 0.4];
            let (v, d) = b.eval(&lam);
            assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-13);
            // derivative along a direction tangent to the simplex sums to zero
            let dir = [1.0, -0.5, -0.25, -0.25];
            let s: f64 = d
                .iter()
                .map(|di| (0..4).map(|j| di[j] * dir[j]).sum::<f64>())
                .sum();
            assert!(s.abs() < 1e-12);
        }
    }

    #[test]
    fn derivative_matches_finite_difference() {
        let b = LagrangeBasis::new(3);
        let lam = [0.15, 0.25, 0.35, 0.25];
        let (_, d) = b.eval(&lam);
        let h = 1e-6;
        for j in 0..4 {
            let mut lp = lam;
            let mut lm = lam;
            lp[j] += h;
            lm[j] -= h;
            let (vp, _) = b.eval(&lp);
            let (vm, _) = b.eval(&lm);
            for i in 0..b.len() {
                let fd = (vp[i] - vm[i]) / (2.0 * h);
                assert!((fd - d[i][j]).abs() < 1e-7);
            }
        }
    }
}
