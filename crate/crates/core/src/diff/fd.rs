//! Finite-difference oracle helpers used by the test suites.

/// Outcome of comparing an analytic gradient against central differences
/// over a step schedule. `max_rel_error` is the smallest worst-coordinate
/// relative error across the schedule.
#[derive(Debug, Clone, Copy)]
pub struct FdReport {
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub best_step: f64,
}

/// Central-difference gradient of a scalar function.
pub fn fd_gradient<F: FnMut(&[f64]) -> f64>(mut f: F, x: &[f64], step: f64) -> Vec<f64> {
    let mut grad = vec![0.0; x.len()];
    let mut p = x.to_vec();
    for i in 0..x.len() {
        p[i] = x[i] + step;
        let fp = f(&p);
        p[i] = x[i] - step;
        let fm = f(&p);
        p[i] = x[i];
        grad[i] = (fp - fm) / (2.0 * step);
    }
    grad
}

/// Compare `analytic` against central differences of `f` at `x` for every
/// step in `steps`; keep the best (smallest) worst-case relative error.
/// Entries below `1e-10` in both gradients compare with that floor.
pub fn fd_check<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    x: &[f64],
    analytic: &[f64],
    steps: &[f64],
) -> FdReport {
    assert_eq!(x.len(), analytic.len(), "fd_check: length mismatch");
    assert!(!steps.is_empty(), "fd_check: empty step schedule");
    let mut best = FdReport {
        max_rel_error: f64::INFINITY,
        worst_index: 0,
        best_step: steps[0],
    };
    for &step in steps {
        let fd = fd_gradient(&mut f, x, step);
        let mut worst = 0.0;
        let mut worst_index = 0;
        for i in 0..x.len() {
            let scale = analytic[i].abs().max(fd[i].abs()).max(1e-10);
            let rel = (analytic[i] - fd[i]).abs() / scale;
            if rel > worst {
                worst = rel;
                worst_index = i;
            }
        }
        if worst < best.max_rel_error {
            best = FdReport {
                max_rel_error: worst,
                worst_index,
                best_step: step,
            };
        }
    }
    best
}
