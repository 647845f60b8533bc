//! Exponential polynomials `Σ P_r(τ)·e^{r·τ}`.
//!
//! Every signal in the model is of this form on each piece: waveform segments
//! are degree-one polynomials, and the response of an affine relaxation
//! `y' = λ·(y − g)` to such a forcing `g` is again one. Solving piece by piece
//! in this algebra gives exact trajectories up to floating-point rounding.

/// Two exponents closer than this (relative) are treated as the same mode.
const RATE_MERGE_REL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct ExpTerm {
    pub rate: f64,
    /// Polynomial coefficients in ascending powers of τ.
    pub coeffs: Vec<f64>,
}

impl ExpTerm {
    fn poly_at(&self, tau: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, &c| acc * tau + c)
    }

    fn is_zero(&self) -> bool {
        self.coeffs.iter().all(|&c| c == 0.0)
    }
}

fn same_rate(a: f64, b: f64) -> bool {
    a == b || (a - b).abs() <= RATE_MERGE_REL * a.abs().max(b.abs())
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct QuasiPoly {
    terms: Vec<ExpTerm>,
}

impl QuasiPoly {
    pub fn zero() -> QuasiPoly {
        QuasiPoly::default()
    }

    pub fn constant(c: f64) -> QuasiPoly {
        QuasiPoly::linear(c, 0.0)
    }

    pub fn linear(c0: f64, c1: f64) -> QuasiPoly {
        let mut q = QuasiPoly::zero();
        q.add_term(0.0, &[c0, c1]);
        q
    }

    pub fn exponential(rate: f64, c: f64) -> QuasiPoly {
        let mut q = QuasiPoly::zero();
        q.add_term(rate, &[c]);
        q
    }

    pub fn terms(&self) -> &[ExpTerm] {
        &self.terms
    }

    /// Polynomial part (the rate-zero term), if any.
    pub fn polynomial(&self) -> Option<&[f64]> {
        self.terms.iter().find(|t| t.rate == 0.0).map(|t| t.coeffs.as_slice())
    }

    pub fn add_term(&mut self, rate: f64, coeffs: &[f64]) {
        if coeffs.iter().all(|&c| c == 0.0) {
            return;
        }
        match self.terms.iter_mut().find(|t| same_rate(t.rate, rate)) {
            Some(t) => {
                if t.coeffs.len() < coeffs.len() {
                    t.coeffs.resize(coeffs.len(), 0.0);
                }
                for (a, &b) in t.coeffs.iter_mut().zip(coeffs) {
                    *a += b;
                }
            }
            None => self.terms.push(ExpTerm {
                rate,
                coeffs: coeffs.to_vec(),
            }),
        }
    }

    pub fn eval(&self, tau: f64) -> f64 {
        self.terms
            .iter()
            .map(|t| {
                let p = t.poly_at(tau);
                if t.rate == 0.0 {
                    p
                } else {
                    p * (t.rate * tau).exp()
                }
            })
            .sum()
    }

    pub fn derivative(&self) -> QuasiPoly {
        let mut out = QuasiPoly::zero();
        for t in &self.terms {
            let n = t.coeffs.len();
            let mut d = vec![0.0; n];
            for (j, slot) in d.iter_mut().enumerate() {
                let from_power = if j + 1 < n {
                    (j + 1) as f64 * t.coeffs[j + 1]
                } else {
                    0.0
                };
                *slot = from_power + t.rate * t.coeffs[j];
            }
            out.add_term(t.rate, &d);
        }
        out
    }

    /// `a + b·self`.
    pub fn affine(&self, a: f64, b: f64) -> QuasiPoly {
        let mut out = QuasiPoly::zero();
        for t in &self.terms {
            let c: Vec<f64> = t.coeffs.iter().map(|&x| b * x).collect();
            out.add_term(t.rate, &c);
        }
        out.add_term(0.0, &[a]);
        out
    }

    pub fn add_scaled(&mut self, other: &QuasiPoly, scale: f64) {
        for t in &other.terms {
            let c: Vec<f64> = t.coeffs.iter().map(|&x| scale * x).collect();
            self.add_term(t.rate, &c);
        }
    }

    /// Re-expand around a later origin: returns `q` with `q(τ) = self(τ + d)`.
    pub fn shifted(&self, d: f64) -> QuasiPoly {
        if d == 0.0 {
            return self.clone();
        }
        let mut out = QuasiPoly::zero();
        for t in &self.terms {
            let n = t.coeffs.len();
            let mut c = vec![0.0; n];
            // Taylor expansion of P(τ + d) about τ.
            let mut binom = vec![1.0f64; n];
            for i in 0..n {
                // binom[j] holds C(i, j) after this update
                if i > 0 {
                    for j in (1..i).rev() {
                        binom[j] += binom[j - 1];
                    }
                }
                let mut dpow = 1.0;
                for j in (0..=i).rev() {
                    c[j] += t.coeffs[i] * binom[j] * dpow;
                    dpow *= d;
                }
            }
            let scale = if t.rate == 0.0 { 1.0 } else { (t.rate * d).exp() };
            for x in &mut c {
                *x *= scale;
            }
            out.add_term(t.rate, &c);
        }
        out
    }

    /// Solution of `y' = λ·(y − rest(τ))` with `y(0) = y0`.
    ///
    /// When `rest` is a constant and `y0` equals it bit for bit the result is
    /// that constant with no homogeneous term.
    pub fn relax(lambda: f64, rest: &QuasiPoly, y0: f64) -> QuasiPoly {
        let mut out = QuasiPoly::zero();
        let mut resonant: Vec<f64> = Vec::new();
        for t in &rest.terms {
            let n = t.coeffs.len();
            if same_rate(t.rate, lambda) {
                // Q' = −λ·P, Q(0) = 0
                let mut q = vec![0.0; n + 1];
                for j in 0..n {
                    q[j + 1] = -lambda * t.coeffs[j] / (j + 1) as f64;
                }
                if resonant.len() < q.len() {
                    resonant.resize(q.len(), 0.0);
                }
                for (a, b) in resonant.iter_mut().zip(q) {
                    *a += b;
                }
            } else {
                // Q' + (μ − λ)·Q = −λ·P, solved from the top coefficient down.
                let gap = lambda - t.rate;
                let ratio = lambda / gap;
                let mut q = vec![0.0; n];
                for j in (0..n).rev() {
                    let carry = if j + 1 < n {
                        (j + 1) as f64 * q[j + 1] / gap
                    } else {
                        0.0
                    };
                    q[j] = ratio * t.coeffs[j] + carry;
                }
                out.add_term(t.rate, &q);
            }
        }
        let particular_at_zero: f64 = out.terms.iter().map(|t| t.coeffs[0]).sum();
        let homogeneous = y0 - particular_at_zero;
        if resonant.is_empty() {
            resonant.push(0.0);
        }
        resonant[0] += homogeneous;
        out.add_term(lambda, &resonant);
        out.terms.retain(|t| !t.is_zero());
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn relax_to_constant_is_textbook_rc() {
        let tau0 = 1e-9;
        let q = QuasiPoly::relax(-1.0 / tau0, &QuasiPoly::constant(1.0), 0.0);
        for k in 0..10 {
            let t = k as f64 * 0.3e-9;
            assert_relative_eq!(q.eval(t), 1.0 - (-t / tau0).exp(), max_relative = 1e-14);
        }
    }

    #[test]
    fn exact_rest_has_no_homogeneous_term() {
        let g = 0.2004008016032064;
        let q = QuasiPoly::relax(4.99e11, &QuasiPoly::constant(g), g);
        assert_eq!(q.terms().len(), 1);
        assert_eq!(q.eval(1e-9), g);
    }

    #[test]
    fn linear_forcing_matches_closed_form() {
        // y' = λ(y − (a + bτ)), closed form y = a + bτ + b/λ + (y0 − a − b/λ) e^{λτ}
        let (lambda, a, b, y0) = (-2.0, 0.3, 1.5, -0.7);
        let q = QuasiPoly::relax(lambda, &QuasiPoly::linear(a, b), y0);
        for k in 0..20 {
            let t = k as f64 * 0.1;
            let exact = a + b * t + b / lambda + (y0 - a - b / lambda) * (lambda * t).exp();
            assert_relative_eq!(q.eval(t), exact, max_relative = 1e-13, epsilon = 1e-14);
        }
    }

    #[test]
    fn resonant_forcing_produces_secular_term() {
        // y' = λ(y − c e^{λτ}) → y = (y0 − λ c τ) e^{λτ}
        let (lambda, c, y0) = (0.5, 2.0, 1.0);
        let q = QuasiPoly::relax(lambda, &QuasiPoly::exponential(lambda, c), y0);
        for k in 0..10 {
            let t = k as f64 * 0.4;
            let exact = (y0 - lambda * c * t) * (lambda * t).exp();
            assert_relative_eq!(q.eval(t), exact, max_relative = 1e-13);
        }
    }

    #[test]
    fn derivative_matches_finite_difference() {
        let mut q = QuasiPoly::linear(0.1, -0.3);
        q.add_term(-1.3, &[0.5, 0.2, 0.05]);
        q.add_term(0.7, &[-0.25]);
        let dq = q.derivative();
        for k in 0..10 {
            let t = 0.1 + k as f64 * 0.2;
            let h = 1e-6;
            let fd = (q.eval(t + h) - q.eval(t - h)) / (2.0 * h);
            assert_relative_eq!(dq.eval(t), fd, max_relative = 1e-7);
        }
    }

    #[test]
    fn shift_matches_direct_evaluation() {
        let mut q = QuasiPoly::linear(0.1, -0.3);
        q.add_term(-1.3, &[0.5, 0.2, 0.05]);
        q.add_term(0.7, &[-0.25, 0.0, 0.0, 0.01]);
        let d = 0.37;
        let s = q.shifted(d);
        for k in 0..10 {
            let t = k as f64 * 0.15;
            assert_relative_eq!(s.eval(t), q.eval(t + d), max_relative = 1e-13);
        }
    }
}
