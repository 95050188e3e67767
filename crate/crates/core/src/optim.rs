//! Nelder–Mead downhill simplex minimization.

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NelderMeadOptions {
    pub reflection: f64,
    pub expansion: f64,
    pub contraction: f64,
    pub shrink: f64,
    /// Stop once `f(worst) − f(best)` over the simplex falls below this.
    pub f_tol: f64,
    /// Evaluation budget per unit of dimension.
    pub evals_per_dim: usize,
    /// Fresh-simplex restarts from the current best point after convergence.
    pub restarts: usize,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        Self {
            reflection: 1.0,
            expansion: 2.0,
            contraction: 0.5,
            shrink: 0.5,
            f_tol: 1e-9,
            evals_per_dim: 500,
            restarts: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NelderMeadResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub evals: usize,
    pub converged: bool,
}

fn sanitize(v: f64) -> f64 {
    if v.is_nan() {
        f64::INFINITY
    } else {
        v
    }
}

/// Minimizes `f` from `x0`, with the initial simplex spanned by
/// `x0 + step_i · e_i`. The starting point is always a vertex, so the result
/// is never worse than `f(x0)`.
pub fn nelder_mead<F>(mut f: F, x0: &[f64], steps: &[f64], opts: &NelderMeadOptions) -> NelderMeadResult
where
    F: FnMut(&[f64]) -> f64,
{
    let dim = x0.len();
    assert_eq!(dim, steps.len(), "one step size per coordinate");
    let budget = opts.evals_per_dim * dim.max(1);
    let mut total_evals = 0;
    let mut start = x0.to_vec();
    let mut best: Option<NelderMeadResult> = None;

    for _ in 0..=opts.restarts {
        let remaining = budget.saturating_sub(total_evals);
        if remaining == 0 {
            break;
        }
        let run = simplex_run(&mut f, &start, steps, opts, remaining);
        total_evals += run.evals;
        let improved = best.as_ref().is_none_or(|b| run.f < b.f - opts.f_tol);
        let converged = run.converged;
        start.clone_from(&run.x);
        if best.as_ref().is_none_or(|b| run.f <= b.f) {
            best = Some(run);
        }
        if !improved || !converged {
            break;
        }
    }
    let mut out = best.expect("at least one simplex run");
    out.evals = total_evals;
    out
}

fn simplex_run<F>(f: &mut F, x0: &[f64], steps: &[f64], opts: &NelderMeadOptions, budget: usize) -> NelderMeadResult
where
    F: FnMut(&[f64]) -> f64,
{
    let dim = x0.len();
    let mut evals = 0usize;
    let mut eval = |x: &[f64], evals: &mut usize| {
        *evals += 1;
        sanitize(f(x))
    };

    let mut verts: Vec<Vec<f64>> = Vec::with_capacity(dim + 1);
    verts.push(x0.to_vec());
    for i in 0..dim {
        let mut v = x0.to_vec();
        v[i] += if steps[i] != 0.0 { steps[i] } else { 1e-3 };
        verts.push(v);
    }
    let mut vals: Vec<f64> = verts.iter().map(|v| eval(v, &mut evals)).collect();
    if dim == 0 {
        return NelderMeadResult {
            x: x0.to_vec(),
            f: vals[0],
            evals,
            converged: true,
        };
    }

    let mut order: Vec<usize> = (0..=dim).collect();
    let mut converged = false;
    let mut centroid = vec![0.0; dim];
    let point = |c: &[f64], toward: &[f64], coef: f64| -> Vec<f64> {
        c.iter().zip(toward).map(|(ci, ti)| ci + coef * (ti - ci)).collect()
    };

    loop {
        // stable sort keeps the earlier vertex first among equal values
        order.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
        let best = order[0];
        let worst = order[dim];
        let second = order[dim - 1];
        if vals[worst] - vals[best] < opts.f_tol || (vals[worst].is_infinite() && vals[best].is_infinite()) {
            converged = vals[best].is_finite();
            break;
        }
        if evals >= budget {
            break;
        }

        centroid.iter_mut().for_each(|c| *c = 0.0);
        for &i in &order[..dim] {
            for (c, x) in centroid.iter_mut().zip(&verts[i]) {
                *c += x / dim as f64;
            }
        }

        let reflected = point(&centroid, &verts[worst], -opts.reflection);
        let fr = eval(&reflected, &mut evals);
        if fr < vals[best] {
            let expanded = point(&centroid, &reflected, opts.expansion);
            let fe = eval(&expanded, &mut evals);
            if fe < fr {
                verts[worst] = expanded;
                vals[worst] = fe;
            } else {
                verts[worst] = reflected;
                vals[worst] = fr;
            }
            continue;
        }
        if fr < vals[second] {
            verts[worst] = reflected;
            vals[worst] = fr;
            continue;
        }
        let (contracted, fc, accept) = if fr < vals[worst] {
            let c = point(&centroid, &reflected, opts.contraction);
            let fc = eval(&c, &mut evals);
            let ok = fc <= fr;
            (c, fc, ok)
        } else {
            let c = point(&centroid, &verts[worst], opts.contraction);
            let fc = eval(&c, &mut evals);
            let ok = fc < vals[worst];
            (c, fc, ok)
        };
        if accept {
            verts[worst] = contracted;
            vals[worst] = fc;
            continue;
        }
        let anchor = verts[best].clone();
        for &i in &order[1..] {
            verts[i] = point(&anchor, &verts[i], opts.shrink);
            vals[i] = eval(&verts[i], &mut evals);
        }
    }

    let best = (0..=dim).min_by(|&a, &b| vals[a].total_cmp(&vals[b]).then(a.cmp(&b))).unwrap();
    NelderMeadResult {
        x: verts[best].clone(),
        f: vals[best],
        evals,
        converged,
    }
}
