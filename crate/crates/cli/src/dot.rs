//! Graphviz export of coefficient trees.

use std::fmt::Write;

use tsvc_core::model::PredictorInfo;
use tsvc_core::{CoefficientTree, TreeNode};

/// DOT graph of one tree: split nodes name the modifier, edges carry the
/// threshold, leaves show the coefficient to three decimals.
pub fn tree_to_dot(tree: &CoefficientTree, predictors: &[PredictorInfo]) -> String {
    let name = |j: usize| predictors.get(j).map_or_else(|| format!("x{}", j + 1), |p| p.name.clone());
    let mut out = String::new();
    let _ = writeln!(out, "digraph \"{}\" {{", escape(&name(tree.predictor())));
    let _ = writeln!(out, "  label=\"coefficient of {}\";", escape(&name(tree.predictor())));
    out.push_str("  node [fontname=\"Helvetica\"];\n");
    for (id, node) in tree.nodes().iter().enumerate() {
        match *node {
            TreeNode::Leaf { coefficient } => {
                let _ = writeln!(out, "  n{id} [shape=box, label=\"{coefficient:.3}\"];");
            }
            TreeNode::Split { modifier, .. } => {
                let _ = writeln!(out, "  n{id} [shape=ellipse, label=\"{}\"];", escape(&name(modifier)));
            }
        }
    }
    for (id, node) in tree.nodes().iter().enumerate() {
        if let TreeNode::Split {
            modifier,
            split_point,
            left,
            right,
        } = *node
        {
            let m = escape(&name(modifier));
            let c = format_threshold(split_point);
            let _ = writeln!(out, "  n{id} -> n{left} [label=\"{m} \u{2264} {c}\"];");
            let _ = writeln!(out, "  n{id} -> n{right} [label=\"{m} > {c}\"];");
        }
    }
    out.push_str("}\n");
    out
}

fn format_threshold(c: f64) -> String {
    let s = format!("{c:.3}");
    if s == "-0.000" {
        "0.000".into()
    } else {
        s
    }
}

fn escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}
