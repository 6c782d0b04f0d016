//! Phase-one simplex for `A x = b, x >= 0` feasibility, generic over exact
//! rationals and tolerance-based floats.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

/// Arithmetic needed by the tableau. Sign tests are exact for rationals and
/// use a tolerance for floats.
pub trait LpScalar: Clone + std::fmt::Debug {
    fn zero() -> Self;
    fn one() -> Self;
    fn add(&self, other: &Self) -> Self;
    fn sub(&self, other: &Self) -> Self;
    fn mul(&self, other: &Self) -> Self;
    fn div(&self, other: &Self) -> Self;
    fn neg(&self) -> Self;
    fn is_pos(&self) -> bool;
    fn is_neg(&self) -> bool;
    fn is_zero_ish(&self) -> bool {
        !self.is_pos() && !self.is_neg()
    }
    /// Strict `self < other` after the sign convention above.
    fn lt(&self, other: &Self) -> bool {
        other.sub(self).is_pos()
    }
    fn is_exact_zero(&self) -> bool;
    fn to_f64(&self) -> f64;
}

/// Float tolerance for pivot and feasibility decisions.
pub const FLOAT_TOL: f64 = 1e-9;

impl LpScalar for f64 {
    fn zero() -> Self {
        0.0
    }
    fn one() -> Self {
        1.0
    }
    fn add(&self, o: &Self) -> Self {
        self + o
    }
    fn sub(&self, o: &Self) -> Self {
        self - o
    }
    fn mul(&self, o: &Self) -> Self {
        self * o
    }
    fn div(&self, o: &Self) -> Self {
        self / o
    }
    fn neg(&self) -> Self {
        -self
    }
    fn is_pos(&self) -> bool {
        *self > FLOAT_TOL
    }
    fn is_neg(&self) -> bool {
        *self < -FLOAT_TOL
    }
    fn is_exact_zero(&self) -> bool {
        *self == 0.0
    }
    fn to_f64(&self) -> f64 {
        *self
    }
}

impl LpScalar for BigRational {
    fn zero() -> Self {
        Zero::zero()
    }
    fn one() -> Self {
        One::one()
    }
    fn add(&self, o: &Self) -> Self {
        self + o
    }
    fn sub(&self, o: &Self) -> Self {
        self - o
    }
    fn mul(&self, o: &Self) -> Self {
        self * o
    }
    fn div(&self, o: &Self) -> Self {
        self / o
    }
    fn neg(&self) -> Self {
        -self
    }
    fn is_pos(&self) -> bool {
        self.is_positive()
    }
    fn is_neg(&self) -> bool {
        self.is_negative()
    }
    fn is_exact_zero(&self) -> bool {
        self.is_zero()
    }
    fn to_f64(&self) -> f64 {
        ToPrimitive::to_f64(self).unwrap_or(f64::NAN)
    }
}

pub fn decimal(numer: i64, denom: i64) -> BigRational {
    BigRational::new(BigInt::from(numer), BigInt::from(denom))
}

/// Finds `x >= 0` with `a x = b` (`a` is `rows x cols`, row-major), or `None`
/// when the system is infeasible. Uses artificial variables and Bland's rule,
/// so it terminates for exact arithmetic.
pub fn find_feasible<T: LpScalar>(a: &[T], b: &[T], rows: usize, cols: usize) -> Option<Vec<T>> {
    assert_eq!(a.len(), rows * cols);
    assert_eq!(b.len(), rows);
    let width = cols + rows + 1;
    let mut tab: Vec<T> = Vec::with_capacity(rows * width);
    for r in 0..rows {
        let flip = b[r].is_neg();
        for c in 0..cols {
            let v = &a[r * cols + c];
            tab.push(if flip { v.neg() } else { v.clone() });
        }
        for art in 0..rows {
            tab.push(if art == r { T::one() } else { T::zero() });
        }
        tab.push(if flip { b[r].neg() } else { b[r].clone() });
    }
    let mut basis: Vec<usize> = (cols..cols + rows).collect();

    // Reduced costs of the phase-one objective (sum of artificials).
    let mut cost = vec![T::zero(); width];
    for r in 0..rows {
        for c in 0..cols {
            cost[c] = cost[c].sub(&tab[r * width + c]);
        }
        cost[width - 1] = cost[width - 1].sub(&tab[r * width + width - 1]);
    }

    loop {
        let Some(enter) = (0..cols + rows).find(|&c| cost[c].is_neg()) else {
            break;
        };
        let mut leave: Option<usize> = None;
        let mut best_ratio = T::zero();
        for r in 0..rows {
            let coef = &tab[r * width + enter];
            if !coef.is_pos() {
                continue;
            }
            let ratio = tab[r * width + width - 1].div(coef);
            let take = match leave {
                None => true,
                Some(l) => ratio.lt(&best_ratio) || (!best_ratio.lt(&ratio) && basis[r] < basis[l]),
            };
            if take {
                leave = Some(r);
                best_ratio = ratio;
            }
        }
        // Phase-one objective is bounded below by zero, so a pivot row exists.
        let pr = leave?;
        pivot(&mut tab, &mut cost, width, rows, pr, enter);
        basis[pr] = enter;
    }

    if !cost[width - 1].is_zero_ish() {
        return None;
    }
    let mut x = vec![T::zero(); cols];
    for (r, &var) in basis.iter().enumerate() {
        if var < cols {
            x[var] = tab[r * width + width - 1].clone();
        }
    }
    Some(x)
}

fn pivot<T: LpScalar>(tab: &mut [T], cost: &mut [T], width: usize, rows: usize, pr: usize, pc: usize) {
    let p = tab[pr * width + pc].clone();
    for c in 0..width {
        tab[pr * width + c] = tab[pr * width + c].div(&p);
    }
    let pivot_row: Vec<T> = tab[pr * width..(pr + 1) * width].to_vec();
    for r in 0..rows {
        if r == pr {
            continue;
        }
        let f = tab[r * width + pc].clone();
        if f.is_exact_zero() {
            continue;
        }
        for c in 0..width {
            let v = tab[r * width + c].sub(&f.mul(&pivot_row[c]));
            tab[r * width + c] = v;
        }
    }
    let f = cost[pc].clone();
    for c in 0..width {
        cost[c] = cost[c].sub(&f.mul(&pivot_row[c]));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simple_feasible_system() {
        // x + y = 1, x = 0.25
        let a = [1.0, 1.0, 1.0, 0.0];
        let x = find_feasible(&a, &[1.0, 0.25], 2, 2).unwrap();
        assert!((x[0] - 0.25).abs() < 1e-12 && (x[1] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn infeasible_system() {
        // x + y = 1, x + y = 0.9
        let a = [1.0, 1.0, 1.0, 1.0];
        assert!(find_feasible(&a, &[1.0, 0.9], 2, 2).is_none());
        let q: Vec<BigRational> = a.iter().map(|_| decimal(1, 1)).collect();
        assert!(find_feasible(&q, &[decimal(1, 1), decimal(9, 10)], 2, 2).is_none());
    }

    #[test]
    fn exact_redundant_rows() {
        // x + y = 1/3 twice, y = 1/6
        let one = decimal(1, 1);
        let zero = decimal(0, 1);
        let a = vec![one.clone(), one.clone(), one.clone(), one.clone(), zero, one];
        let b = vec![decimal(1, 3), decimal(1, 3), decimal(1, 6)];
        let x = find_feasible(&a, &b, 3, 2).unwrap();
        assert_eq!(x, vec![decimal(1, 6), decimal(1, 6)]);
    }

    #[test]
    fn negative_rhs_is_flipped() {
        let a = [-1.0, 0.0, 0.0, 1.0];
        let x = find_feasible(&a, &[-0.5, 0.5], 2, 2).unwrap();
        assert!((x[0] - 0.5).abs() < 1e-12);
    }
}
