use crate::{AutodiffError, Graph, Result, Tensor, Var};

/// Outcome of a central finite-difference gradient comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    /// Largest `|autodiff - central| / max(1, |central|)` over checked coordinates.
    pub max_rel_error: f64,
    /// `(parameter, flat index)` where the largest error occurred.
    pub worst: Option<(usize, usize)>,
    pub checked: usize,
}

fn evaluate<F>(f: &F, params: &[Tensor], track: bool) -> Result<(Graph, Vec<Var>, Var)>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = if track { Graph::new() } else { Graph::inference() };
    let vars: Vec<Var> = params.iter().map(|p| g.leaf(p.clone())).collect();
    let out = f(&mut g, &vars)?;
    let (rows, cols) = g.shape(out);
    if (rows, cols) != (1, 1) {
        return Err(AutodiffError::NotScalar { rows, cols });
    }
    Ok((g, vars, out))
}

/// Compares reverse-mode gradients of the scalar function `f` against central
/// differences with the given `step`.
///
/// `f` receives a fresh graph and one leaf per entry of `params`. With
/// `max_coords = Some(n)` only `n` coordinates, evenly strided over the
/// flattened parameters, are perturbed.
pub fn finite_diff_check<F>(f: F, params: &[Tensor], step: f64, max_coords: Option<usize>) -> Result<GradCheck>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let (mut g, vars, out) = evaluate(&f, params, true)?;
    g.backward(out)?;
    let analytic: Vec<Tensor> = vars.iter().map(|&v| g.grad(v)).collect::<Result<_>>()?;
    drop(g);

    let coords: Vec<(usize, usize)> = params
        .iter()
        .enumerate()
        .flat_map(|(p, t)| (0..t.len()).map(move |i| (p, i)))
        .collect();
    let stride = match max_coords {
        Some(n) if n > 0 && n < coords.len() => coords.len().div_ceil(n),
        _ => 1,
    };

    let mut report = GradCheck {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
    };
    let mut shifted = params.to_vec();
    for &(p, i) in coords.iter().step_by(stride) {
        let orig = params[p].data()[i];
        shifted[p].data_mut()[i] = orig + step;
        let (gp, _, op) = evaluate(&f, &shifted, false)?;
        let up = gp.value(op).data()[0];
        shifted[p].data_mut()[i] = orig - step;
        let (gm, _, om) = evaluate(&f, &shifted, false)?;
        let down = gm.value(om).data()[0];
        shifted[p].data_mut()[i] = orig;

        let central = (up - down) / (2.0 * step);
        let err = (analytic[p].data()[i] - central).abs() / central.abs().max(1.0);
        report.checked += 1;
        if err > report.max_rel_error || report.worst.is_none() {
            report.max_rel_error = report.max_rel_error.max(err);
            report.worst = Some((p, i));
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact() {
        let check = finite_diff_check(
            |g, v| {
                let sq = g.mul(v[0], v[0])?;
                g.sum_all(sq)
            },
            &[Tensor::scalar(3.0)],
            1e-5,
            None,
        )
        .unwrap();
        assert!(check.max_rel_error < 1e-8, "{check:?}");
    }

    #[test]
    fn constant_function_has_zero_gradient() {
        let check = finite_diff_check(
            |g, _| Ok(g.constant(Tensor::scalar(7.0))),
            &[Tensor::row(vec![1.0, 2.0])],
            1e-5,
            None,
        )
        .unwrap();
        assert_eq!(check.max_rel_error, 0.0);
        assert_eq!(check.checked, 2);
    }

    #[test]
    fn strided_sampling_limits_work() {
        let check = finite_diff_check(|g, v| g.sum_all(v[0]), &[Tensor::zeros(10, 10)], 1e-5, Some(20)).unwrap();
        assert_eq!(check.checked, 20);
    }
}
