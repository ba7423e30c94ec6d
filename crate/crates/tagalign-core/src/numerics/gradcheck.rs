//! Finite-difference gradient checking against the tape's analytic gradients.
//!
//! Runs in f64: central differences `(f(x+h) - f(x-h)) / 2h` over a sampled
//! subset of coordinates per parameter, compared by relative error
//! `|a - n| / max(1, |a|, |n|)`.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::numerics::graph::{Graph, TensorId};

/// One checked coordinate that exceeded the tolerance (or the worst overall).
#[derive(Clone, Debug)]
pub struct GradCheckSample {
    pub param: String,
    pub coord: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub checked: usize,
    pub tol: f64,
    pub max_rel_err: f64,
    /// Worst coordinate seen, with its analytic/numeric values.
    pub worst: Option<GradCheckSample>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= self.tol
    }
}

impl std::fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "gradcheck: {} coords, max rel err {:.3e} (tol {:.1e})",
            self.checked, self.max_rel_err, self.tol
        )?;
        if let Some(w) = &self.worst {
            write!(
                f,
                "; worst {}[{}] analytic={:.6e} numeric={:.6e}",
                w.param, w.coord, w.analytic, w.numeric
            )?;
        }
        Ok(())
    }
}

/// Named parameter blob fed to a gradcheck closure.
pub type GradCheckParam = (String, Vec<f64>, Vec<usize>);

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / 1.0f64.max(a.abs()).max(n.abs())
}

/// Check the analytic gradient of the scalar function `f` over `params`.
///
/// `f` receives a fresh graph plus leaf ids in the same order as `params` and
/// must return the scalar loss id. At most `max_coords` coordinates per
/// parameter are sampled (all of them when the parameter is small enough).
pub fn gradcheck<F>(
    f: F,
    params: &[GradCheckParam],
    h: f64,
    tol: f64,
    max_coords: usize,
    seed: u64,
) -> GradCheckReport
where
    F: Fn(&mut Graph<f64>, &[TensorId]) -> TensorId,
{
    // Analytic pass.
    let mut g: Graph<f64> = Graph::new();
    let ids: Vec<TensorId> = params
        .iter()
        .map(|(_, data, shape)| g.leaf(data.clone(), shape.clone(), true))
        .collect();
    let loss = f(&mut g, &ids);
    g.backward(loss);
    let analytic: Vec<Vec<f64>> =
        ids.iter().map(|&id| g.grad(id).map(|s| s.to_vec()).unwrap_or_default()).collect();

    let eval = |data: &[Vec<f64>]| -> f64 {
        let mut g: Graph<f64> = Graph::new();
        let ids: Vec<TensorId> = data
            .iter()
            .zip(params)
            .map(|(d, (_, _, shape))| g.leaf(d.clone(), shape.clone(), false))
            .collect();
        let loss = f(&mut g, &ids);
        g.value(loss)
    };

    let base: Vec<Vec<f64>> = params.iter().map(|(_, d, _)| d.clone()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradCheckReport { checked: 0, tol, max_rel_err: 0.0, worst: None };

    for (pi, (name, data, _)) in params.iter().enumerate() {
        let mut coords: Vec<usize> = (0..data.len()).collect();
        if coords.len() > max_coords {
            coords.shuffle(&mut rng);
            coords.truncate(max_coords);
        }
        for &ci in &coords {
            let mut plus = base.clone();
            plus[pi][ci] += h;
            let mut minus = base.clone();
            minus[pi][ci] -= h;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * h);
            let ana = if analytic[pi].is_empty() { 0.0 } else { analytic[pi][ci] };
            let e = rel_err(ana, numeric);
            report.checked += 1;
            if e > report.max_rel_err {
                report.max_rel_err = e;
                report.worst = Some(GradCheckSample {
                    param: name.clone(),
                    coord: ci,
                    analytic: ana,
                    numeric,
                    rel_err: e,
                });
            }
        }
    }
    report
}
