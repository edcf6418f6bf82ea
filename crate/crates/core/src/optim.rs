//! Bounded Nelder–Mead simplex minimization.
//!
//! Bounds are enforced by clipping every trial point coordinate-wise, so
//! the objective is never called outside the box. Non-finite objective
//! values rank as worse than any finite value.

/// Reflection, expansion, contraction and shrink coefficients.
const REFLECT: f64 = 1.0;
const EXPAND: f64 = 2.0;
const CONTRACT: f64 = 0.5;
const SHRINK: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NelderMead {
    pub max_evals: usize,
    /// Convergence when the spread of simplex values is below
    /// `ftol * (1 + |f_best|)` ...
    pub ftol: f64,
    /// ... and every vertex is within `xtol * (1 + |x|)` of the best one.
    pub xtol: f64,
    /// Initial simplex edge relative to `max(|x_i|, min_step)`.
    pub rel_step: f64,
    pub min_step: f64,
}

impl Default for NelderMead {
    fn default() -> Self {
        Self { max_evals: 1000, ftol: 1e-10, xtol: 1e-7, rel_step: 0.1, min_step: 0.05 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub x: Vec<f64>,
    pub fx: f64,
    pub n_evals: usize,
    pub converged: bool,
    /// Best objective value seen after each evaluation.
    pub trace: Vec<f64>,
}

pub fn clip(x: &mut [f64], lower: &[f64], upper: &[f64]) {
    for ((v, &lo), &hi) in x.iter_mut().zip(lower).zip(upper) {
        *v = v.clamp(lo, hi);
    }
}

fn rank(f: f64) -> f64 {
    if f.is_nan() {
        f64::INFINITY
    } else {
        f
    }
}

struct Counted<F> {
    f: F,
    n: usize,
    best: f64,
    trace: Vec<f64>,
}

impl<F: FnMut(&[f64]) -> f64> Counted<F> {
    fn call(&mut self, x: &[f64]) -> f64 {
        let v = rank((self.f)(x));
        self.n += 1;
        if v < self.best {
            self.best = v;
        }
        self.trace.push(self.best);
        v
    }
}

impl NelderMead {
    pub fn minimize(
        &self,
        f: impl FnMut(&[f64]) -> f64,
        x0: &[f64],
        lower: &[f64],
        upper: &[f64],
    ) -> Outcome {
        let n = x0.len();
        assert_eq!(lower.len(), n);
        assert_eq!(upper.len(), n);
        let mut obj = Counted { f, n: 0, best: f64::INFINITY, trace: Vec::new() };

        let mut start = x0.to_vec();
        clip(&mut start, lower, upper);
        let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
        let f0 = obj.call(&start);
        simplex.push((start.clone(), f0));
        for i in 0..n {
            if obj.n >= self.max_evals {
                break;
            }
            let step = self.rel_step * start[i].abs().max(self.min_step);
            let mut v = start.clone();
            v[i] += step;
            clip(&mut v, lower, upper);
            if v[i] == start[i] {
                v[i] -= step;
                clip(&mut v, lower, upper);
            }
            let fv = obj.call(&v);
            simplex.push((v, fv));
        }
        if simplex.len() < n + 1 {
            return finish(simplex, obj, false);
        }

        let mut converged = false;
        while obj.n < self.max_evals {
            simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
            if self.has_converged(&simplex) {
                converged = true;
                break;
            }
            let worst = simplex[n].clone();
            let centroid: Vec<f64> = (0..n)
                .map(|j| simplex[..n].iter().map(|(x, _)| x[j]).sum::<f64>() / n as f64)
                .collect();
            let toward = |coef: f64| {
                let mut p: Vec<f64> = centroid
                    .iter()
                    .zip(&worst.0)
                    .map(|(c, w)| c + coef * (c - w))
                    .collect();
                clip(&mut p, lower, upper);
                p
            };

            let xr = toward(REFLECT);
            let fr = obj.call(&xr);
            if fr < simplex[0].1 {
                if obj.n >= self.max_evals {
                    simplex[n] = (xr, fr);
                    break;
                }
                let xe = toward(REFLECT * EXPAND);
                let fe = obj.call(&xe);
                simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
                continue;
            }
            if fr < simplex[n - 1].1 {
                simplex[n] = (xr, fr);
                continue;
            }
            if obj.n >= self.max_evals {
                break;
            }
            let (xc, fc) = if fr < worst.1 {
                let xc = toward(REFLECT * CONTRACT);
                let fc = obj.call(&xc);
                (xc, fc)
            } else {
                let xc = toward(-CONTRACT);
                let fc = obj.call(&xc);
                (xc, fc)
            };
            if fc < worst.1.min(fr) {
                simplex[n] = (xc, fc);
                continue;
            }
            let best = simplex[0].0.clone();
            for vertex in simplex.iter_mut().skip(1) {
                if obj.n >= self.max_evals {
                    break;
                }
                let mut p: Vec<f64> = best
                    .iter()
                    .zip(&vertex.0)
                    .map(|(b, v)| b + SHRINK * (v - b))
                    .collect();
                clip(&mut p, lower, upper);
                let fp = obj.call(&p);
                *vertex = (p, fp);
            }
        }
        finish(simplex, obj, converged)
    }

    fn has_converged(&self, sorted: &[(Vec<f64>, f64)]) -> bool {
        let (best, fbest) = (&sorted[0].0, sorted[0].1);
        let fworst = sorted[sorted.len() - 1].1;
        if !fbest.is_finite() || !fworst.is_finite() {
            return false;
        }
        let fspread = fworst - fbest <= self.ftol * (1.0 + fbest.abs());
        let xspread = sorted.iter().skip(1).all(|(x, _)| {
            x.iter()
                .zip(best)
                .all(|(a, b)| (a - b).abs() <= self.xtol * (1.0 + b.abs()))
        });
        fspread && xspread
    }
}

fn finish<F>(mut simplex: Vec<(Vec<f64>, f64)>, obj: Counted<F>, converged: bool) -> Outcome {
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (x, fx) = simplex.swap_remove(0);
    Outcome { x, fx, n_evals: obj.n, converged, trace: obj.trace }
}

/// Evaluates every point of the Cartesian product of `axes` (at most
/// `max_evals` of them, in lexicographic order) and returns the best.
pub fn grid_search(
    mut f: impl FnMut(&[f64]) -> f64,
    axes: &[Vec<f64>],
    max_evals: usize,
) -> Outcome {
    let mut idx = vec![0usize; axes.len()];
    let mut best = (Vec::new(), f64::INFINITY);
    let mut trace = Vec::new();
    let mut n = 0;
    if axes.iter().any(|a| a.is_empty()) {
        return Outcome { x: best.0, fx: best.1, n_evals: 0, converged: false, trace };
    }
    loop {
        if n >= max_evals {
            break;
        }
        let x: Vec<f64> = idx.iter().zip(axes).map(|(&i, a)| a[i]).collect();
        let v = rank(f(&x));
        n += 1;
        if v < best.1 || best.0.is_empty() {
            best = (x, v);
        }
        trace.push(best.1);
        // odometer increment
        let mut d = axes.len();
        loop {
            if d == 0 {
                let converged = best.1.is_finite();
                return Outcome { x: best.0, fx: best.1, n_evals: n, converged, trace };
            }
            d -= 1;
            idx[d] += 1;
            if idx[d] < axes[d].len() {
                break;
            }
            idx[d] = 0;
        }
    }
    let converged = best.1.is_finite();
    Outcome { x: best.0, fx: best.1, n_evals: n, converged, trace }
}
