//! Central finite-difference gradient checking.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, Var};
use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::Result;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// Largest `|analytic − numeric| / max(|analytic|, |numeric|, floor)`.
    pub max_rel_err: f64,
    /// Where the largest error occurred.
    pub worst: String,
    pub checked: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheckOptions {
    pub step: f64,
    /// Denominator floor so exactly-zero gradients compare absolutely.
    pub floor: f64,
    /// Check at most this many entries per tensor (sampled), `None` for all.
    pub max_per_tensor: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: 1e-4,
            floor: 1e-6,
            max_per_tensor: None,
            seed: 0,
        }
    }
}

/// Compare analytic and numeric gradients of `f` with respect to every
/// input tensor and every parameter in `store`.
///
/// The output of `f` is reduced to a scalar by a fixed random projection,
/// so every output element contributes to the checked gradient.
pub fn gradcheck<F>(inputs: &[Tensor], store: &ParamStore, f: F, opts: GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &ParamStore, &[Var]) -> Result<Var>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let run = |inputs: &[Tensor], store: &ParamStore, proj: Option<&Tensor>| -> Result<(Graph, Vec<Var>, Var)> {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
        let y = f(&mut g, store, &vars)?;
        let out = match proj {
            Some(p) => g.dot(y, p)?,
            None => y,
        };
        Ok((g, vars, out))
    };
    let (g0, _, y0) = run(inputs, store, None)?;
    let proj = Tensor::uniform(g0.shape(y0), 1.0, &mut rng);
    let (g, vars, loss) = run(inputs, store, Some(&proj))?;
    let grads = g.backward(loss);
    let loss_at = |inputs: &[Tensor], store: &ParamStore| -> Result<f64> {
        let (g, _, l) = run(inputs, store, Some(&proj))?;
        Ok(g.value(l).data()[0])
    };

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: String::new(),
        checked: 0,
    };
    let pick = |len: usize, rng: &mut ChaCha8Rng| -> Vec<usize> {
        match opts.max_per_tensor {
            Some(k) if k < len => {
                let mut v = sample(rng, len, k).into_vec();
                v.sort_unstable();
                v
            }
            _ => (0..len).collect(),
        }
    };
    let note = |report: &mut GradCheckReport, a: f64, n: f64, what: String| {
        let err = (a - n).abs() / a.abs().max(n.abs()).max(opts.floor);
        report.checked += 1;
        if err >= report.max_rel_err {
            report.max_rel_err = err;
            report.worst = format!("{what}: analytic {a:e}, numeric {n:e}");
        }
    };

    let mut work = inputs.to_vec();
    for (k, var) in vars.iter().enumerate() {
        let zero = Tensor::zeros(inputs[k].shape());
        let analytic = grads.get(*var).unwrap_or(&zero).clone();
        for i in pick(inputs[k].len(), &mut rng) {
            let orig = work[k].data()[i];
            work[k].data_mut()[i] = orig + opts.step;
            let lp = loss_at(&work, store)?;
            work[k].data_mut()[i] = orig - opts.step;
            let lm = loss_at(&work, store)?;
            work[k].data_mut()[i] = orig;
            note(&mut report, analytic.data()[i], (lp - lm) / (2.0 * opts.step), format!("input {k}[{i}]"));
        }
    }

    let pgrads = g.param_grads(&grads);
    let mut pstore = store.clone();
    for id in store.ids() {
        let zero = Tensor::zeros(store.get(id).shape());
        let analytic = pgrads.iter().find(|(p, _)| *p == id).map_or(&zero, |(_, t)| *t).clone();
        for i in pick(store.get(id).len(), &mut rng) {
            let orig = pstore.get(id).data()[i];
            pstore.get_mut(id).data_mut()[i] = orig + opts.step;
            let lp = loss_at(inputs, &pstore)?;
            pstore.get_mut(id).data_mut()[i] = orig - opts.step;
            let lm = loss_at(inputs, &pstore)?;
            pstore.get_mut(id).data_mut()[i] = orig;
            let name = store.name(id).to_string();
            note(&mut report, analytic.data()[i], (lp - lm) / (2.0 * opts.step), format!("{name}[{i}]"));
        }
    }
    Ok(report)
}
