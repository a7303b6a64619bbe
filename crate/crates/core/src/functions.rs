//! Test functions integrated against measures and random fields.

/// A `C¹` function on `(0, ∞)` together with its derivative.
pub trait TestFunction: Sync {
    fn value(&self, x: f64) -> f64;
    fn derivative(&self, x: f64) -> f64;

    /// `lim_{x→∞} f(x)/x` when it exists.
    fn slope_at_infinity(&self) -> Option<f64> {
        None
    }

    /// Polynomials let integrals of `(f(x)/x)'` be taken in closed form.
    fn is_polynomial(&self) -> bool {
        false
    }
}

/// `f(x) = Σ coeffs[k] x^k`.
#[derive(Debug, Clone, PartialEq)]
pub struct Polynomial {
    pub coeffs: Vec<f64>,
}

impl Polynomial {
    pub fn new(coeffs: Vec<f64>) -> Self {
        Self { coeffs }
    }

    pub fn degree(&self) -> usize {
        self.coeffs
            .iter()
            .rposition(|c| *c != 0.0)
            .unwrap_or(0)
    }
}

impl TestFunction for Polynomial {
    fn value(&self, x: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, c| acc * x + c)
    }

    fn derivative(&self, x: f64) -> f64 {
        self.coeffs
            .iter()
            .enumerate()
            .skip(1)
            .rev()
            .fold(0.0, |acc, (k, c)| acc * x + k as f64 * c)
    }

    fn slope_at_infinity(&self) -> Option<f64> {
        match self.degree() {
            0 => Some(0.0),
            1 => Some(self.coeffs[1]),
            _ => None,
        }
    }

    fn is_polynomial(&self) -> bool {
        true
    }
}

/// `χ(x) = x`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Identity;

impl TestFunction for Identity {
    fn value(&self, x: f64) -> f64 {
        x
    }
    fn derivative(&self, _x: f64) -> f64 {
        1.0
    }
    fn slope_at_infinity(&self) -> Option<f64> {
        Some(1.0)
    }
    fn is_polynomial(&self) -> bool {
        true
    }
}

/// `1(x) = 1`.
#[derive(Debug, Clone, Copy, Default)]
pub struct One;

impl TestFunction for One {
    fn value(&self, _x: f64) -> f64 {
        1.0
    }
    fn derivative(&self, _x: f64) -> f64 {
        0.0
    }
    fn slope_at_infinity(&self) -> Option<f64> {
        Some(0.0)
    }
    fn is_polynomial(&self) -> bool {
        true
    }
}

/// Closure-backed test function.
pub struct FnPair<F, D> {
    pub f: F,
    pub df: D,
    pub slope: Option<f64>,
}

impl<F, D> TestFunction for FnPair<F, D>
where
    F: Fn(f64) -> f64 + Sync,
    D: Fn(f64) -> f64 + Sync,
{
    fn value(&self, x: f64) -> f64 {
        (self.f)(x)
    }
    fn derivative(&self, x: f64) -> f64 {
        (self.df)(x)
    }
    fn slope_at_infinity(&self) -> Option<f64> {
        self.slope
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_evaluation() {
        let p = Polynomial::new(vec![1.0, -2.0, 0.5]);
        assert_eq!(p.value(2.0), 1.0 - 4.0 + 2.0);
        assert_eq!(p.derivative(2.0), -2.0 + 2.0);
        assert_eq!(p.degree(), 2);
        assert_eq!(p.slope_at_infinity(), None);
        assert_eq!(Polynomial::new(vec![3.0, 4.0]).slope_at_infinity(), Some(4.0));
    }
}
