use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use super::graph::Op;
use super::{DiffError, Graph, NodeId, ParamId};

/// Outcome of comparing analytic gradients with central differences.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// `max |analytic - numeric| / max(1, |analytic|)` over checked coordinates.
    pub max_rel_error: f64,
    /// Worst error per parameter tensor, in graph order.
    pub per_param: Vec<(ParamId, f64)>,
    pub checked: usize,
    /// Coordinates whose perturbation crossed a kink (ReLU/abs sign change,
    /// a different max-pool winner, or a clamp boundary).
    pub excluded: usize,
}

/// Central-difference check of every trainable leaf feeding `loss`.
///
/// Requires one forward re-evaluation pair per scalar parameter, so only
/// suitable for tiny models. Leaf values are restored before returning.
pub fn gradient_check(
    graph: &mut Graph,
    loss: NodeId,
    step: f64,
) -> Result<GradCheckReport, DiffError> {
    let node_grads = graph.node_gradients(loss)?;
    let base_signature = kink_signature(graph);
    let leaves: Vec<_> = graph.trainable_leaves().collect();

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        per_param: Vec::new(),
        checked: 0,
        excluded: 0,
    };
    for (node, param) in leaves {
        let analytic = match node_grads.get(node.index()).and_then(|g| g.clone()) {
            Some(g) => g,
            None => continue,
        };
        let mut worst: f64 = 0.0;
        for i in 0..analytic.len() {
            let original = graph.value(node).data()[i];

            graph.leaf_value_mut(node).data_mut()[i] = original + step;
            graph.recompute()?;
            let plus = scalar(graph, loss);
            let plus_sig = kink_signature(graph);

            graph.leaf_value_mut(node).data_mut()[i] = original - step;
            graph.recompute()?;
            let minus = scalar(graph, loss);
            let minus_sig = kink_signature(graph);

            graph.leaf_value_mut(node).data_mut()[i] = original;

            if plus_sig != base_signature || minus_sig != base_signature {
                report.excluded += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * step);
            let a = analytic.data()[i];
            let err = (a - numeric).abs() / a.abs().max(1.0);
            worst = worst.max(err);
            report.checked += 1;
        }
        report.max_rel_error = report.max_rel_error.max(worst);
        report.per_param.push((param, worst));
    }
    graph.recompute()?;
    Ok(report)
}

fn scalar(graph: &Graph, id: NodeId) -> f64 {
    graph.value(id).data()[0]
}

/// Hash of every discrete branch taken during the forward pass.
fn kink_signature(graph: &Graph) -> u64 {
    let mut h = DefaultHasher::new();
    for i in 0..graph.len() {
        let id = NodeId(i);
        match graph.op(id) {
            Op::Relu(x) => graph
                .value(*x)
                .data()
                .iter()
                .for_each(|v| (*v > 0.0).hash(&mut h)),
            Op::Abs(x) => graph
                .value(*x)
                .data()
                .iter()
                .for_each(|v| (v.partial_cmp(&0.0)).hash(&mut h)),
            Op::Clamp(x, lo, hi) => graph
                .value(*x)
                .data()
                .iter()
                .for_each(|v| ((v < lo) as u8 + 2 * (v > hi) as u8).hash(&mut h)),
            Op::MaxPool { .. } => graph.argmax(id).hash(&mut h),
            _ => {}
        }
    }
    h.finish()
}
