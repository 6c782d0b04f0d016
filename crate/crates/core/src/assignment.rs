//! Slot-to-bundle assignment maximizing `sum_k ctr_k * e_{winner(k)}`.

use std::cmp::Ordering;

use crate::{Error, Result};

/// Largest injective-assignment count solved by brute force.
pub const EXHAUSTIVE_LIMIT: u128 = 1_000_000;

/// `c! / (c - k)!`, saturating at `u128::MAX`.
pub fn falling_factorial(c: usize, k: usize) -> u128 {
    if k > c {
        return 0;
    }
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc.saturating_mul((c - i) as u128);
    }
    acc
}

/// Preference between two bundles at equal weighted value: larger bid, then
/// lower canonical index. `Less` means `a` is preferred.
pub fn tie_order(e: &[f64], a: usize, b: usize) -> Ordering {
    e[b].total_cmp(&e[a]).then(a.cmp(&b))
}

pub fn assignment_value(e: &[f64], ctrs: &[f64], winners: &[usize]) -> f64 {
    winners.iter().zip(ctrs).map(|(&c, a)| a * e[c]).sum()
}

fn check(e: &[f64], ctrs: &[f64]) -> Result<()> {
    if ctrs.len() > e.len() {
        return Err(Error::InvalidInstance(format!(
            "{} slots but only {} bundles",
            ctrs.len(),
            e.len()
        )));
    }
    if e.iter().chain(ctrs).any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite assignment weights".into()));
    }
    Ok(())
}

/// Brute force over all injective maps, in lexicographic order. Among equal
/// values the assignment preferred slot by slot under [`tie_order`] wins.
pub fn exhaustive_assignment(e: &[f64], ctrs: &[f64]) -> Result<Vec<usize>> {
    check(e, ctrs)?;
    let count = falling_factorial(e.len(), ctrs.len());
    if count > EXHAUSTIVE_LIMIT {
        return Err(Error::SizeLimit {
            count,
            limit: EXHAUSTIVE_LIMIT,
        });
    }
    let mut best: Option<(f64, Vec<usize>)> = None;
    let mut current = Vec::with_capacity(ctrs.len());
    let mut used = vec![false; e.len()];
    search(e, ctrs, &mut current, &mut used, &mut best);
    Ok(best.map(|(_, w)| w).unwrap_or_default())
}

fn search(e: &[f64], ctrs: &[f64], current: &mut Vec<usize>, used: &mut [bool], best: &mut Option<(f64, Vec<usize>)>) {
    if current.len() == ctrs.len() {
        let value = assignment_value(e, ctrs, current);
        let better = match best {
            None => true,
            Some((v, w)) => match value.total_cmp(v) {
                Ordering::Greater => true,
                Ordering::Less => false,
                Ordering::Equal => prefer(e, current, w),
            },
        };
        if better {
            *best = Some((value, current.clone()));
        }
        return;
    }
    for c in 0..e.len() {
        if !used[c] {
            used[c] = true;
            current.push(c);
            search(e, ctrs, current, used, best);
            current.pop();
            used[c] = false;
        }
    }
}

fn prefer(e: &[f64], a: &[usize], b: &[usize]) -> bool {
    for (&x, &y) in a.iter().zip(b) {
        match tie_order(e, x, y) {
            Ordering::Less => return true,
            Ordering::Greater => return false,
            Ordering::Equal => {}
        }
    }
    false
}

/// Maximum-weight assignment of every row to a distinct column of a
/// `rows x cols` matrix (`rows <= cols`), by the shortest augmenting path
/// Hungarian method. Returns the column of each row.
pub fn hungarian(weights: &[f64], rows: usize, cols: usize) -> Result<Vec<usize>> {
    if rows > cols || weights.len() != rows * cols {
        return Err(Error::Shape(format!(
            "assignment matrix {rows}x{cols} with {} entries",
            weights.len()
        )));
    }
    if rows == 0 {
        return Ok(Vec::new());
    }
    // Minimization on negated weights; arrays are 1-based with index 0 as the
    // virtual source.
    let cost = |r: usize, c: usize| -weights[(r - 1) * cols + (c - 1)];
    let mut u = vec![0.0; rows + 1];
    let mut v = vec![0.0; cols + 1];
    let mut owner = vec![0usize; cols + 1];
    let mut way = vec![0usize; cols + 1];
    for r in 1..=rows {
        owner[0] = r;
        let mut col0 = 0;
        let mut minv = vec![f64::INFINITY; cols + 1];
        let mut used = vec![false; cols + 1];
        loop {
            used[col0] = true;
            let r0 = owner[col0];
            let mut delta = f64::INFINITY;
            let mut col1 = 0;
            for c in 1..=cols {
                if !used[c] {
                    let cur = cost(r0, c) - u[r0] - v[c];
                    if cur < minv[c] {
                        minv[c] = cur;
                        way[c] = col0;
                    }
                    if minv[c] < delta {
                        delta = minv[c];
                        col1 = c;
                    }
                }
            }
            if col1 == 0 {
                return Err(Error::Numeric("assignment search failed to augment".into()));
            }
            for c in 0..=cols {
                if used[c] {
                    u[owner[c]] += delta;
                    v[c] -= delta;
                } else {
                    minv[c] -= delta;
                }
            }
            col0 = col1;
            if owner[col0] == 0 {
                break;
            }
        }
        loop {
            let col1 = way[col0];
            owner[col0] = owner[col1];
            col0 = col1;
            if col0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; rows];
    for c in 1..=cols {
        if owner[c] != 0 {
            assignment[owner[c] - 1] = c - 1;
        }
    }
    Ok(assignment)
}

/// Slot assignment through the Hungarian method, canonicalized so that equal
/// bids resolve the same way as [`exhaustive_assignment`].
pub fn hungarian_assignment(e: &[f64], ctrs: &[f64]) -> Result<Vec<usize>> {
    check(e, ctrs)?;
    let (k, c) = (ctrs.len(), e.len());
    let weights: Vec<f64> = (0..k)
        .flat_map(|slot| e.iter().map(move |&bid| ctrs[slot] * bid))
        .collect();
    let mut winners = hungarian(&weights, k, c)?;
    // Swap in lower-indexed losers carrying exactly the same bid.
    let mut chosen = vec![false; c];
    for &w in &winners {
        chosen[w] = true;
    }
    for w in winners.iter_mut() {
        if let Some(alt) = (0..*w).find(|&x| !chosen[x] && e[x] == e[*w]) {
            chosen[*w] = false;
            chosen[alt] = true;
            *w = alt;
        }
    }
    // Within the chosen set, descending slot weights pair with descending bids.
    winners.sort_by(|&a, &b| tie_order(e, a, b));
    Ok(winners)
}

/// Exact optimum: exhaustive when the assignment count is at most
/// [`EXHAUSTIVE_LIMIT`], otherwise the Hungarian method.
pub fn optimal_assignment(e: &[f64], ctrs: &[f64]) -> Result<Vec<usize>> {
    if falling_factorial(e.len(), ctrs.len()) <= EXHAUSTIVE_LIMIT {
        exhaustive_assignment(e, ctrs)
    } else {
        hungarian_assignment(e, ctrs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_slot_argmax() {
        assert_eq!(optimal_assignment(&[0.8, 0.5], &[0.6]).unwrap(), vec![0]);
        assert_eq!(hungarian_assignment(&[0.8, 0.5], &[0.6]).unwrap(), vec![0]);
    }

    #[test]
    fn higher_bids_take_earlier_slots() {
        let e = [0.1, 0.9, 0.4, 0.7];
        let ctrs = [0.6, 0.2, 0.06];
        assert_eq!(exhaustive_assignment(&e, &ctrs).unwrap(), vec![1, 3, 2]);
        assert_eq!(hungarian_assignment(&e, &ctrs).unwrap(), vec![1, 3, 2]);
    }

    #[test]
    fn ties_prefer_lower_index() {
        let e = [0.5, 0.5, 0.5];
        assert_eq!(exhaustive_assignment(&e, &[0.6, 0.2]).unwrap(), vec![0, 1]);
        assert_eq!(hungarian_assignment(&e, &[0.6, 0.2]).unwrap(), vec![0, 1]);
    }

    #[test]
    fn counts() {
        assert_eq!(falling_factorial(3, 2), 6);
        assert_eq!(falling_factorial(4, 2), 12);
        assert_eq!(falling_factorial(1, 1), 1);
        assert_eq!(falling_factorial(2, 3), 0);
    }

    #[test]
    fn hungarian_general_matrix() {
        // rows x cols = 2 x 3; brute-force optimum is row0 -> 2, row1 -> 0 (value 9+6).
        let w = [1.0, 2.0, 9.0, 6.0, 1.0, 8.0];
        assert_eq!(hungarian(&w, 2, 3).unwrap(), vec![2, 0]);
    }

    #[test]
    fn too_few_bundles() {
        assert!(exhaustive_assignment(&[1.0], &[0.5, 0.2]).is_err());
    }
}
