use super::{Graph, NnError, NodeId, ParamId, ParamStore};

/// Worst disagreement found by [`fd_check`].
#[derive(Debug, Clone, PartialEq)]
pub struct FdReport {
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub entries_checked: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FdOptions {
    pub step: f64,
    /// Checks at most this many evenly spaced entries of each tensor.
    pub max_entries_per_param: Option<usize>,
}

impl Default for FdOptions {
    fn default() -> Self {
        Self { step: 1e-5, max_entries_per_param: None }
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Compares tape gradients of the scalar built by `build` against central
/// differences over every parameter entry in `store`.
pub fn fd_check<F>(store: &mut ParamStore, opts: FdOptions, build: F) -> Result<FdReport, NnError>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<NodeId, NnError>,
{
    let mut g = Graph::new();
    let root = build(&mut g, store)?;
    let grads = g.backward(root)?;
    let analytic: Vec<(ParamId, Vec<f64>)> = grads.params().iter().map(|(id, m)| (*id, m.data().to_vec())).collect();
    let lookup = |id: ParamId| analytic.iter().find(|(p, _)| *p == id).map(|(_, v)| v.as_slice());

    let eval = |store: &ParamStore| -> Result<f64, NnError> {
        let mut g = Graph::new();
        let r = build(&mut g, store)?;
        Ok(g.value(r).item())
    };

    let mut report = FdReport {
        max_rel_error: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        entries_checked: 0,
    };
    let ids: Vec<ParamId> = store.iter().map(|(id, _)| id).collect();
    for id in ids {
        let n = store.get(id).numel();
        let stride = match opts.max_entries_per_param {
            Some(m) if m > 0 && n > m => n.div_ceil(m),
            _ => 1,
        };
        for i in (0..n).step_by(stride) {
            let orig = store.get(id).values[i];
            store.get_mut(id).values[i] = orig + opts.step;
            let up = eval(store)?;
            store.get_mut(id).values[i] = orig - opts.step;
            let down = eval(store)?;
            store.get_mut(id).values[i] = orig;
            let numeric = (up - down) / (2.0 * opts.step);
            let a = lookup(id).map_or(0.0, |v| v[i]);
            let err = relative_error(a, numeric);
            report.entries_checked += 1;
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst_param = store.get(id).name.clone();
                report.worst_index = i;
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}
