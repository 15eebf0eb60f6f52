use super::tape::{Bindings, Tape};
use super::{AutodiffError, Graph, NodeId};
use crate::tensor::Tensor;
use std::collections::HashMap;

/// Largest relative disagreement between the reverse-mode gradient of `root`
/// with respect to `leaf` and a central finite difference with step `epsilon`.
///
/// The relative error per entry is
/// `|analytic - numeric| / max(|analytic|, |numeric|, 1e-12)`.
pub fn finite_difference_check(
    graph: &Graph,
    values: &HashMap<String, Tensor<f64>>,
    root: NodeId,
    leaf: &str,
    epsilon: f64,
) -> Result<f64, AutodiffError> {
    finite_difference_check_entries(graph, values, root, leaf, epsilon, None)
}

/// Like [`finite_difference_check`], restricted to the given flat indices of
/// `leaf` (all entries when `None`).
pub fn finite_difference_check_entries(
    graph: &Graph,
    values: &HashMap<String, Tensor<f64>>,
    root: NodeId,
    leaf: &str,
    epsilon: f64,
    entries: Option<&[usize]>,
) -> Result<f64, AutodiffError> {
    if !(epsilon > 0.0 && epsilon <= 1e-2) {
        return Err(AutodiffError::InvalidArgument(format!(
            "epsilon {epsilon} outside (0, 1e-2]"
        )));
    }
    let base = values
        .get(leaf)
        .ok_or_else(|| AutodiffError::UnboundLeaf(leaf.to_string()))?;

    let analytic = {
        let bindings: Bindings<f64> = values.iter().map(|(k, v)| (k.as_str(), v)).collect();
        let mut tape = Tape::new(graph);
        tape.forward(&bindings)?;
        tape.backward_wrt(root, &[leaf])?
            .take(leaf)
            .expect("requested leaf present")
    };

    let eval_at = |perturbed: &Tensor<f64>| -> Result<f64, AutodiffError> {
        let bindings: Bindings<f64> = values
            .iter()
            .map(|(k, v)| (k.as_str(), if k == leaf { perturbed } else { v }))
            .collect();
        let mut tape = Tape::new(graph);
        tape.forward(&bindings)?;
        tape.scalar(root)
    };

    let all: Vec<usize>;
    let indices = match entries {
        Some(e) => e,
        None => {
            all = (0..base.len()).collect();
            &all
        }
    };

    let mut work = base.clone();
    let mut worst = 0.0f64;
    for &i in indices {
        let orig = base.data()[i];
        work.data_mut()[i] = orig + epsilon;
        let plus = eval_at(&work)?;
        work.data_mut()[i] = orig - epsilon;
        let minus = eval_at(&work)?;
        work.data_mut()[i] = orig;
        let numeric = (plus - minus) / (2.0 * epsilon);
        let a = analytic.data()[i];
        let denom = a.abs().max(numeric.abs()).max(1e-12);
        worst = worst.max((a - numeric).abs() / denom);
    }
    Ok(worst)
}
