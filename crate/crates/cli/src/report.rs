//! Plain-text summary of a fit.

use std::fmt::Write;

use tsvc_core::{FitConfig, TsvcModel};

pub fn render(model: &TsvcModel, config: &FitConfig, n: usize) -> String {
    let name = |j: usize| model.predictors[j].name.as_str();
    let d = &model.diagnostics;
    let mut out = String::new();
    let _ = writeln!(out, "TSVC fit: {} family, {} link", model.family.distribution(), model.family.link());
    let _ = writeln!(out, "observations: {n}, predictors: {}", model.p());
    let _ = writeln!(
        out,
        "alpha: {}, permutations: {}, min node size: {}, seed: {}",
        config.alpha, config.n_perm, config.min_node_size, config.seed
    );
    out.push('\n');
    let _ = writeln!(out, "deviance: {:.2}", d.deviance);
    let _ = writeln!(out, "AIC: {:.2}", d.aic);
    let _ = writeln!(out, "coefficients: {}", d.n_coefficients);
    if !d.converged {
        out.push_str("warning: final fit did not converge\n");
    }
    if d.ridged {
        out.push_str("warning: final fit needed a ridge penalty (rank deficient design)\n");
    }
    if d.max_splits_reached {
        let _ = writeln!(out, "warning: stopped at the cap of {} splits", config.max_splits);
    }
    out.push('\n');
    let _ = writeln!(out, "{:<20}{:>10}", "intercept", format!("{:.3}", model.intercept));
    out.push_str("\nvarying coefficients:\n");
    if model.trees.is_empty() {
        out.push_str("  (none)\n");
    }
    for t in &model.trees {
        let mods: Vec<&str> = t.modifiers().into_iter().map(name).collect();
        let _ = writeln!(out, "  {:<18}tr({}), {} leaves", name(t.predictor()), mods.join(", "), t.n_leaves());
        for leaf in t.leaves() {
            let cond: Vec<String> = leaf
                .region
                .branches()
                .iter()
                .map(|b| {
                    let op = match b.side {
                        tsvc_core::Side::Le => "<=",
                        tsvc_core::Side::Gt => ">",
                    };
                    format!("{} {op} {:.3}", name(b.modifier), b.split_point)
                })
                .collect();
            let _ = writeln!(out, "    {:>10}  {}", format!("{:.3}", leaf.coefficient), cond.join(" & "));
        }
    }
    out.push_str("\nlinear effects:\n");
    if model.linear.is_empty() {
        out.push_str("  (none)\n");
    }
    for l in &model.linear {
        let _ = writeln!(out, "  {:<18}{:>10}", name(l.predictor), format!("{:.3}", l.coefficient));
    }
    out.push_str("\nexcluded:\n");
    if model.excluded.is_empty() {
        out.push_str("  (none)\n");
    }
    for &j in &model.excluded {
        let _ = writeln!(out, "  {}", name(j));
    }
    out.push_str("\nsplit history:\n");
    let _ = writeln!(out, "  {:>4}  {:<14}{:>5}  {:<14}{:>10}{:>10}{:>9}{:>7}  accepted", "iter", "predictor", "node", "modifier", "split", "T", "p", "perms");
    for r in &d.split_history {
        let _ = writeln!(
            out,
            "  {:>4}  {:<14}{:>5}  {:<14}{:>10.3}{:>10.3}{:>9.4}{:>7}  {}",
            r.iteration,
            name(r.predictor),
            r.node,
            name(r.modifier),
            r.split_point,
            r.t_obs,
            r.p_value,
            r.n_perm,
            if r.accepted { "yes" } else { "no" }
        );
    }
    out.push_str("\nlinear term screen:\n");
    if d.screen.is_empty() {
        out.push_str("  (nothing tested)\n");
    }
    for s in &d.screen {
        let _ = writeln!(
            out,
            "  {:<18}T = {:>8.3}  p = {:.4}  ({} permutations)  {}",
            name(s.predictor),
            s.t_obs,
            s.p_value,
            s.n_perm,
            if s.retained { "kept" } else { "dropped" }
        );
    }
    out
}
