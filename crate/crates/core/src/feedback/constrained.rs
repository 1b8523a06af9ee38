use crate::feedback::FeedbackError;

/// `k̃(x) = −min(a, γ(x)·∇V(x)·g(x))` for `ẋ = f(x) + g(x)u`, `u ≥ −a`.
/// The drift does not enter the law.
pub fn constrained_quadratic_feedback(
    g: impl Fn(&[f64], &mut [f64]),
    grad_v: impl Fn(&[f64], &mut [f64]),
    gamma: impl Fn(&[f64]) -> f64,
    a_limit: f64,
    x: &[f64],
) -> Result<f64, FeedbackError> {
    if !(a_limit > 0.0) || !a_limit.is_finite() {
        return Err(FeedbackError::InvalidParameter {
            name: "a_limit",
            value: a_limit,
        });
    }
    let n = x.len();
    let (mut gv, mut dv) = (vec![0.0; n], vec![0.0; n]);
    g(x, &mut gv);
    grad_v(x, &mut dv);
    let lg_v: f64 = gv.iter().zip(&dv).map(|(a, b)| a * b).sum();
    Ok(-(gamma(x) * lg_v).min(a_limit))
}

/// `ẋ1 = −x1 + x2`, `ẋ2 = u`, `u ≥ −1`, with `V = W = ½|x|²`, `γ ≡ 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanarExample {
    pub a_limit: f64,
    pub eps: f64,
    pub delta: f64,
    pub k: f64,
}

impl Default for PlanarExample {
    fn default() -> Self {
        Self {
            a_limit: 1.0,
            eps: 0.5,
            delta: 0.5,
            k: 1.0,
        }
    }
}

impl PlanarExample {
    pub fn drift(&self, x: &[f64]) -> [f64; 2] {
        [-x[0] + x[1], 0.0]
    }

    pub fn input_field(&self, _x: &[f64]) -> [f64; 2] {
        [0.0, 1.0]
    }

    pub fn v(&self, x: &[f64]) -> f64 {
        0.5 * (x[0] * x[0] + x[1] * x[1])
    }

    pub fn grad_v(&self, x: &[f64]) -> [f64; 2] {
        [x[0], x[1]]
    }

    /// `γ∇V·g` with `γ ≡ 1`.
    pub fn lg_v(&self, x: &[f64]) -> f64 {
        x[1]
    }

    /// `h(x) = γ∇V·g − a + ε`.
    pub fn h(&self, x: &[f64]) -> f64 {
        self.lg_v(x) - self.a_limit + self.eps
    }

    pub fn grad_h(&self, _x: &[f64]) -> [f64; 2] {
        [0.0, 1.0]
    }

    pub fn law(&self, x: &[f64]) -> f64 {
        -self.lg_v(x).min(self.a_limit)
    }

    pub fn rhs(&self, x: &[f64], u: f64, out: &mut [f64]) {
        out[0] = -x[0] + x[1];
        out[1] = u;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn planar_law_matches_generic_formula() {
        let ex = PlanarExample::default();
        for x in [[0.0, 0.0], [1.0, 0.5], [-3.0, 2.0], [4.0, -4.0], [0.0, 1.0]] {
            let generic = constrained_quadratic_feedback(
                |_, g| g.copy_from_slice(&[0.0, 1.0]),
                |x, dv| dv.copy_from_slice(x),
                |_| 1.0,
                1.0,
                &x,
            )
            .unwrap();
            assert_eq!(generic, ex.law(&x));
            assert_eq!(generic, -x[1].min(1.0));
        }
    }

    #[test]
    fn unsaturated_and_saturated_branches() {
        let ex = PlanarExample::default();
        assert_eq!(ex.law(&[0.0, 0.5]), -0.5);
        assert_eq!(ex.law(&[0.0, -2.0]), 2.0);
        assert_eq!(ex.law(&[0.0, 7.0]), -1.0);
    }

    #[test]
    fn rejects_nonpositive_limit() {
        let r = constrained_quadratic_feedback(|_, _| {}, |_, _| {}, |_| 1.0, 0.0, &[1.0]);
        assert!(r.is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn respects_input_bound(x1 in -1e3f64..1e3, x2 in -1e3f64..1e3) {
                let ex = PlanarExample::default();
                prop_assert!(ex.law(&[x1, x2]) >= -ex.a_limit);
            }
        }
    }
}
