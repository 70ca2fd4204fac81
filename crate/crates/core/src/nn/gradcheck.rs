//! Central finite-difference gradient checking in 64-bit mode.

use rand::Rng;

use super::graph::{Graph, Var};
use super::params::ParamStore;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    /// `(parameter name, element, analytic, numeric)` of the worst entry.
    pub worst: Option<(String, usize, f64, f64)>,
}

/// Relative error with a small absolute floor so that gradients which are
/// zero up to rounding compare as equal.
pub fn rel_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

/// Compares reverse-mode gradients of `loss` with central differences of
/// step `h` on `samples` randomly chosen scalar parameters.
pub fn check_gradients<R, F>(store: &mut ParamStore<f64>, loss: F, samples: usize, h: f64, rng: &mut R) -> GradCheckReport
where
    R: Rng + ?Sized,
    F: Fn(&mut Graph<f64>, &ParamStore<f64>) -> Var,
{
    store.zero_grad();
    let mut g = Graph::new();
    let l = loss(&mut g, store);
    g.backward(l).accumulate_into(&g, store);
    let eval = |s: &ParamStore<f64>| {
        let mut g = Graph::new();
        let l = loss(&mut g, s);
        g.value(l).data[0]
    };
    let total = store.num_scalars();
    let mut report = GradCheckReport {
        checked: 0,
        max_rel_error: 0.0,
        worst: None,
    };
    let picks: Vec<usize> = if samples >= total {
        (0..total).collect()
    } else {
        rand::seq::index::sample(rng, total, samples).into_vec()
    };
    for flat in picks {
        let (mut id, mut k) = (0, flat);
        while k >= store.value(id).len() {
            k -= store.value(id).len();
            id += 1;
        }
        let orig = store.value(id).data[k];
        store.value_mut(id).data[k] = orig + h;
        let up = eval(store);
        store.value_mut(id).data[k] = orig - h;
        let down = eval(store);
        store.value_mut(id).data[k] = orig;
        let numeric = (up - down) / (2.0 * h);
        let analytic = store.grad(id).data[k];
        let e = rel_error(analytic, numeric);
        report.checked += 1;
        if e >= report.max_rel_error {
            report.max_rel_error = e;
            report.worst = Some((store.name(id).to_string(), k, analytic, numeric));
        }
    }
    report
}
