//! Structural invariants, each checked on a seeded random instance.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tsvc_core::data::region_indicator;
use tsvc_core::model::{fit_structure, ColumnSource};
use tsvc_core::{
    build_design, candidate_split_points, fit_tsvc, replay, Column, Dataset, FitConfig, GlmOptions, ModelStructure, Scale, SplitSearch, TreeNode, ROOT,
};

use super::{close, combinations, family_of, random_columns, random_instance, random_response};

type Check = Result<(), String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Check {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

/// Admissible split points are increasing and leave enough rows per side.
pub fn split_points(seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..80);
    let cols = random_columns(&mut rng, n, 1);
    let mask: Vec<bool> = (0..n).map(|_| rng.random_bool(0.8)).collect();
    let min = rng.random_range(1..10);
    let x = &cols[0].values;
    let points = candidate_split_points(x, cols[0].scale, &mask, min);
    ensure(points.windows(2).all(|w| w[0] < w[1]), || format!("not increasing: {points:?}"))?;
    for &c in &points {
        let left = (0..n).filter(|&i| mask[i] && x[i] <= c).count();
        let right = (0..n).filter(|&i| mask[i] && x[i] > c).count();
        ensure(left >= min && right >= min, || format!("split {c} leaves {left}/{right} rows, minimum {min}"))?;
    }
    Ok(())
}

/// Leaves of a randomly grown tree partition the rows, and the leaf columns
/// of the design add up to the predictor.
pub fn leaf_partition(seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(10..80);
    let p = rng.random_range(2..5);
    let cols = random_columns(&mut rng, n, p);
    let y = vec![0.0; n];
    let data = Dataset::new(cols, y).map_err(|e| e.to_string())?;
    let mut structure = ModelStructure::linear(0..p);
    let j = rng.random_range(0..p);
    for _ in 0..rng.random_range(0..6) {
        let leaves: Vec<usize> = match structure.tree(j) {
            Some(t) => t.leaves().iter().map(|l| l.id).collect(),
            None => vec![ROOT],
        };
        let node = *leaves.choose(&mut rng).unwrap();
        let m = (j + rng.random_range(1..p)) % p;
        let mask = match structure.tree(j) {
            Some(t) => region_indicator(&t.region_of(node).unwrap(), &data).unwrap(),
            None => vec![true; n],
        };
        let points = candidate_split_points(data.values(m), data.scale(m), &mask, 1);
        if let Some(&c) = points.choose(&mut rng) {
            structure.split(j, node, m, c).map_err(|e| e.to_string())?;
        }
    }
    let Some(tree) = structure.tree(j) else { return Ok(()) };
    let leaves = tree.leaves();
    let members: Vec<Vec<bool>> = leaves.iter().map(|l| region_indicator(&l.region, &data).unwrap()).collect();
    for i in 0..n {
        let hits: Vec<usize> = leaves.iter().zip(&members).filter(|(_, m)| m[i]).map(|(l, _)| l.id).collect();
        ensure(hits.len() == 1, || format!("row {i} lies in leaves {hits:?}"))?;
        let walked = tree.leaf_for(|m| data.values(m)[i]);
        ensure(hits[0] == walked, || format!("row {i}: region says {}, walk says {walked}", hits[0]))?;
    }
    let design = build_design(&structure, &data).map_err(|e| e.to_string())?;
    let x = data.values(j);
    for i in 0..n {
        let sum: f64 = design
            .sources
            .iter()
            .enumerate()
            .filter(|(_, s)| matches!(s, ColumnSource::Leaf { predictor, .. } if *predictor == j))
            .map(|(k, _)| design.matrix.get(i, k))
            .sum();
        ensure(sum == x[i], || format!("row {i}: leaf columns sum to {sum}, predictor is {}", x[i]))?;
    }
    Ok(())
}

/// Statistics are non-negative and the maximally selected one is the
/// largest valid statistic of its combination.
pub fn statistics(seed: u64) -> Check {
    let inst = random_instance(seed);
    let search = SplitSearch::new(&inst.structure, &inst.data, inst.family, inst.min_node_size).map_err(|e| e.to_string())?;
    for (j, node, m) in combinations(&inst) {
        let scan = search.scan(j, node, m).map_err(|e| e.to_string())?;
        let valid: Vec<(f64, f64)> = scan.iter().filter_map(|&(c, t)| t.map(|t| (c, t))).collect();
        for &(c, t) in &valid {
            ensure(t >= -1e-6, || format!("({j},{node},{m}) at {c}: T = {t}"))?;
            let single = search.score_split(j, node, m, c).map_err(|e| e.to_string())?;
            ensure(close(single.lr_statistic, t, 1e-6), || format!("({j},{node},{m}) at {c}: scored {} in isolation, {t} in sweep", single.lr_statistic))?;
        }
        match search.max_selected(j, node, m) {
            Ok(best) => {
                let top = valid.iter().map(|v| v.1).fold(f64::NEG_INFINITY, f64::max);
                ensure(best.t_max == top, || format!("({j},{node},{m}): t_max {} but largest {top}", best.t_max))?;
                ensure(best.n_scored == valid.len(), || "n_scored disagrees with scan".into())?;
            }
            Err(_) => ensure(valid.is_empty(), || format!("({j},{node},{m}): no maximum despite valid splits"))?,
        }
    }
    Ok(())
}

/// Reordering rows leaves every maximally selected statistic unchanged.
pub fn row_permutation(seed: u64) -> Check {
    let inst = random_instance(seed);
    let mut order: Vec<usize> = (0..inst.data.n()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x5eed));
    let shuffled = inst.data.select_rows(&order).map_err(|e| e.to_string())?;
    let a = SplitSearch::new(&inst.structure, &inst.data, inst.family, inst.min_node_size).map_err(|e| e.to_string())?;
    let b = SplitSearch::new(&inst.structure, &shuffled, inst.family, inst.min_node_size).map_err(|e| e.to_string())?;
    for (j, node, m) in combinations(&inst) {
        match (a.max_selected(j, node, m), b.max_selected(j, node, m)) {
            (Ok(x), Ok(y)) => ensure(close(x.t_max, y.t_max, 1e-6) && x.split_point == y.split_point, || format!("({j},{node},{m}): {x:?} vs {y:?}"))?,
            (Err(_), Err(_)) => {}
            (x, y) => return Err(format!("({j},{node},{m}): {x:?} vs {y:?}")),
        }
    }
    Ok(())
}

/// A strictly increasing transform of the modifier's values moves split
/// points but changes neither the statistics nor the partitions.
pub fn monotone_transform(seed: u64) -> Check {
    let inst = random_instance(seed);
    let data = &inst.data;
    let search = SplitSearch::new(&inst.structure, data, inst.family, inst.min_node_size).map_err(|e| e.to_string())?;
    for (j, node, m) in combinations(&inst).into_iter().filter(|c| data.scale(c.2) != Scale::Binary) {
        let transformed: Vec<f64> = data.values(m).iter().map(|&v| (0.7 * v).exp() + v * v * v).collect();
        let mask = search.node_rows(j, node).map_err(|e| e.to_string())?;
        match (search.max_selected(j, node, m), search.max_selected_on(j, node, m, &mask, &transformed)) {
            (Ok(x), Ok(y)) => {
                ensure(close(x.t_max, y.t_max, 1e-6), || format!("({j},{node},{m}): {} vs {}", x.t_max, y.t_max))?;
                let a: Vec<bool> = data.values(m).iter().zip(&mask).map(|(&v, &k)| k && v <= x.split_point).collect();
                let b: Vec<bool> = transformed.iter().zip(&mask).map(|(&v, &k)| k && v <= y.split_point).collect();
                ensure(a == b, || format!("({j},{node},{m}): partitions differ"))?;
            }
            (Err(_), Err(_)) => {}
            (x, y) => return Err(format!("({j},{node},{m}): {x:?} vs {y:?}")),
        }
    }
    Ok(())
}

fn fit_config(seed: u64, min_node_size: usize) -> FitConfig {
    FitConfig {
        alpha: 0.9,
        n_perm: 19,
        min_node_size,
        max_splits: 4,
        seed,
        ..FitConfig::default()
    }
}

/// Invariants of a complete fit with a permissive level, so that splits
/// are actually accepted: deviance decreases along the split history, the
/// history replays to the fitted structure, the tree form and the design
/// form of the linear predictor agree, p-values are valid, and the fit is
/// reproducible from its seed.
pub fn fitted_model(seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let family = family_of(rng.random_range(0..3));
    let n = rng.random_range(60..120);
    let p = rng.random_range(2..5);
    let mut cols: Vec<Column> = random_columns(&mut rng, n, p);
    for c in &mut cols {
        if c.values.iter().all(|&v| v == c.values[0]) {
            c.values[0] += 1.0;
            c.scale = Scale::Continuous;
        }
    }
    let y = random_response(&mut rng, &cols, family);
    let data = Dataset::new(cols, y).map_err(|e| e.to_string())?;
    let config = fit_config(seed, 8);
    let model = fit_tsvc(&data, family, &config).map_err(|e| format!("fit: {e}"))?;
    let again = fit_tsvc(&data, family, &config).map_err(|e| format!("refit: {e}"))?;
    ensure(model == again, || "same seed gave different fits".into())?;
    model.check_invariants().map_err(|e| e.to_string())?;

    let history = &model.diagnostics.split_history;
    for w in history.windows(2) {
        ensure(w[0].accepted, || "history continues after a rejected split".into())?;
        let tol = 1e-9 * (1.0 + w[0].parent_deviance.abs());
        ensure(w[1].parent_deviance <= w[0].parent_deviance + tol, || format!("deviance rose from {} to {}", w[0].parent_deviance, w[1].parent_deviance))?;
        if family.is_gaussian() {
            let drop = w[0].parent_deviance - w[1].parent_deviance;
            ensure(close(drop, w[0].t_obs, 1e-8), || format!("deviance drop {drop} but statistic {}", w[0].t_obs))?;
        }
    }
    for r in history {
        ensure(r.p_value > 0.0 && r.p_value <= 1.0 && r.p_value >= 1.0 / (r.n_perm + 1) as f64, || format!("p-value {}", r.p_value))?;
    }
    for s in &model.diagnostics.screen {
        ensure(s.p_value > 0.0 && s.p_value <= 1.0, || format!("screen p-value {}", s.p_value))?;
    }

    let mut replayed = replay(history, p).map_err(|e| e.to_string())?;
    for s in model.diagnostics.screen.iter().filter(|s| !s.retained) {
        replayed = replayed.without_linear(s.predictor);
    }
    let fitted = model.structure();
    ensure(replayed.linear_terms() == fitted.linear_terms(), || "replayed linear terms differ".into())?;
    for (a, b) in replayed.trees().iter().zip(fitted.trees()) {
        let shape = |t: &tsvc_core::CoefficientTree| -> Vec<Option<(usize, f64, usize, usize)>> {
            t.nodes()
                .iter()
                .map(|n| match *n {
                    TreeNode::Split { modifier, split_point, left, right } => Some((modifier, split_point, left, right)),
                    TreeNode::Leaf { .. } => None,
                })
                .collect()
        };
        ensure(a.predictor() == b.predictor() && shape(a) == shape(b), || "replayed trees differ".into())?;
    }
    ensure(replayed.trees().len() == fitted.trees().len(), || "replayed tree count differs".into())?;
    let opts = GlmOptions::default().with_ridge(tsvc_core::algorithm::FINAL_RIDGE);
    let (_, refit) = fit_structure(&replayed, &data, family, &opts).map_err(|e| e.to_string())?;
    ensure(close(refit.deviance, model.diagnostics.deviance, 1e-8), || format!("replayed deviance {} vs {}", refit.deviance, model.diagnostics.deviance))?;

    let design = build_design(&fitted, &data).map_err(|e| e.to_string())?;
    let eta = design.matrix.mul_vec(&model.coefficient_vector());
    for (i, &e) in eta.iter().enumerate() {
        let walked = model.eta_row(|k| data.values(k)[i]);
        ensure((walked - e).abs() <= 1e-12 * (1.0 + e.abs()), || format!("row {i}: tree form {walked}, design form {e}"))?;
    }
    Ok(())
}

/// Every check, by name.
pub const ALL: [(&str, fn(u64) -> Check); 6] = [
    ("split points", split_points),
    ("leaf partition", leaf_partition),
    ("statistics", statistics),
    ("row permutation", row_permutation),
    ("monotone transform", monotone_transform),
    ("fitted model", fitted_model),
];
