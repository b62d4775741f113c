//! Random small instances and an exhaustive reference split search.
//!
//! The reference refits the explicit design for every partition induced by
//! an observed modifier value. It shares nothing with the library's scoring
//! path beyond `fit_glm`.

#![allow(dead_code)]

pub mod invariants;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tsvc_core::data::region_indicator;
use tsvc_core::linalg::Matrix;
use tsvc_core::{candidate_split_points, fit_glm, Column, Dataset, Family, GlmOptions, ModelStructure, NodeId, Scale, ROOT};

pub struct Instance {
    pub data: Dataset,
    pub family: Family,
    pub structure: ModelStructure,
    pub min_node_size: usize,
}

pub fn family_of(k: usize) -> Family {
    match k % 3 {
        0 => Family::gaussian(),
        1 => Family::binomial(),
        _ => Family::poisson(),
    }
}

/// Covariates of mixed scales; continuous ones are rounded so ties occur.
pub fn random_columns(rng: &mut ChaCha8Rng, n: usize, p: usize) -> Vec<Column> {
    (0..p)
        .map(|j| {
            let name = format!("v{j}");
            match rng.random_range(0..4) {
                0 => Column::binary(name, (0..n).map(|_| f64::from(rng.random_bool(0.5))).collect()),
                1 => Column::new(name, (0..n).map(|_| rng.random_range(0..5) as f64).collect(), Scale::Ordinal),
                2 => Column::continuous(name, (0..n).map(|_| (rng.random::<f64>() * 40.0).round() / 10.0 - 2.0).collect()),
                _ => Column::continuous(name, (0..n).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect()),
            }
        })
        .collect()
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    let u: f64 = rng.random::<f64>().max(1e-300);
    let v: f64 = rng.random();
    (-2.0 * u.ln()).sqrt() * (2.0 * std::f64::consts::PI * v).cos()
}

/// Response with a threshold interaction between the first two covariates.
pub fn random_response(rng: &mut ChaCha8Rng, columns: &[Column], family: Family) -> Vec<f64> {
    let n = columns[0].values.len();
    let x = |j: usize, i: usize| columns[j % columns.len()].values[i];
    (0..n)
        .map(|i| {
            let eta = 0.2 + 0.4 * x(0, i) + 0.3 * x(1, i) * f64::from(x(0, i) > 0.5);
            match family.distribution() {
                tsvc_core::Distribution::Gaussian => eta + normal(rng),
                tsvc_core::Distribution::Binomial => f64::from(rng.random::<f64>() < 1.0 / (1.0 + (-0.5 * eta).exp())),
                tsvc_core::Distribution::Poisson => {
                    let mu = (0.3 * eta).exp();
                    let mut k = 0.0;
                    let mut t = rng.random::<f64>().max(1e-300).ln() / -mu;
                    while t < 1.0 {
                        k += 1.0;
                        t += rng.random::<f64>().max(1e-300).ln() / -mu;
                    }
                    k
                }
            }
        })
        .collect()
}

/// Instance with `n <= 60`, `p <= 4`, and at most one split already made.
pub fn random_instance(seed: u64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let family = family_of(rng.random_range(0..3));
    let n = if family.is_gaussian() { rng.random_range(20..=60) } else { rng.random_range(40..=60) };
    let p = rng.random_range(2..=4);
    let min_node_size = if family.is_gaussian() { rng.random_range(2..=8) } else { rng.random_range(5..=8) };
    let mut columns = random_columns(&mut rng, n, p);
    // every covariate must vary
    for c in &mut columns {
        if c.values.iter().all(|&v| v == c.values[0]) {
            c.values[0] = c.values[0] + 1.0;
            c.scale = Scale::Continuous;
        }
    }
    let y = random_response(&mut rng, &columns, family);
    let data = Dataset::new(columns, y).expect("valid data");
    let mut structure = ModelStructure::linear(0..p);
    if rng.random_bool(0.5) {
        let j = rng.random_range(0..p);
        let m = (j + rng.random_range(1..p)) % p;
        let points = candidate_split_points(data.values(m), data.scale(m), &vec![true; n], 2 * min_node_size);
        if !points.is_empty() {
            let mut split = structure.clone();
            split.split(j, ROOT, m, points[points.len() / 2]).expect("split");
            // a separated base fit has no maximum-likelihood estimate to compare against
            if let Some((_, false)) = deviance_of(&explicit_columns(&split, &data, None), &data, family) {
                structure = split;
            }
        }
    }
    Instance { data, family, structure, min_node_size }
}

/// Rows of the node (a leaf of `j`'s tree, or all rows for a linear term).
pub fn node_mask(structure: &ModelStructure, data: &Dataset, j: usize, node: NodeId) -> Vec<bool> {
    match structure.tree(j) {
        Some(tree) => {
            let region = tree.region_of(node).expect("node exists");
            region_indicator(&region, data).expect("valid region")
        }
        None => vec![true; data.n()],
    }
}

/// Explicit design columns of `structure`, with `replace` substituted for
/// the column of `(j, node)` when given.
pub fn explicit_columns(structure: &ModelStructure, data: &Dataset, replace: Option<(usize, NodeId, &[Vec<f64>])>) -> Vec<Vec<f64>> {
    let n = data.n();
    let mut cols = vec![vec![1.0; n]];
    for j in 0..data.p() {
        let x = data.values(j);
        let nodes: Vec<NodeId> = match structure.tree(j) {
            Some(t) => t.leaves().iter().map(|l| l.id).collect(),
            None if structure.has_linear(j) => vec![ROOT],
            None => continue,
        };
        for node in nodes {
            match replace {
                Some((rj, rn, new)) if rj == j && rn == node => cols.extend(new.iter().cloned()),
                _ => {
                    let mask = node_mask(structure, data, j, node);
                    cols.push((0..n).map(|i| if mask[i] { x[i] } else { 0.0 }).collect());
                }
            }
        }
    }
    cols
}

pub fn tight() -> GlmOptions {
    GlmOptions {
        max_iter: 200,
        tol: 1e-13,
        ..GlmOptions::default()
    }
}

/// Deviance of the explicit fit and whether the fit is (quasi-)separated:
/// at the binomial clamp, or still creeping after many IRLS steps because a
/// coefficient diverges.
pub fn deviance_of(columns: &[Vec<f64>], data: &Dataset, family: Family) -> Option<(f64, bool)> {
    let m = Matrix::from_columns(data.n(), columns);
    match fit_glm(&m, data.response(), family, &tight()) {
        Ok(f) => Some((f.deviance, f.boundary || !f.converged || f.n_iter > 15)),
        // pushing a diverging coefficient further can underflow the weights
        Err(_) => fit_glm(&m, data.response(), family, &GlmOptions::default()).ok().map(|f| (f.deviance, f.n_iter > 10)),
    }
}

/// One brute-force candidate: the left child holds node rows with
/// modifier value `<= left_max`.
#[derive(Debug, Clone, Copy)]
pub struct Reference {
    pub predictor: usize,
    pub node: NodeId,
    pub modifier: usize,
    pub left_max: f64,
    pub t: f64,
    /// Separated fit: the deviance is an infimum approached linearly, so
    /// only a loose comparison is meaningful.
    pub boundary: bool,
}

/// Every admissible partition of `(j, node)` by `m`, scored by refitting.
pub fn brute_force(inst: &Instance, j: usize, node: NodeId, m: usize) -> Vec<Reference> {
    let data = &inst.data;
    let n = data.n();
    let mask = node_mask(&inst.structure, data, j, node);
    let base = explicit_columns(&inst.structure, data, None);
    let Some((dev0, _)) = deviance_of(&base, data, inst.family) else {
        return Vec::new();
    };
    let xm = data.values(m);
    let xj = data.values(j);
    let mut values: Vec<f64> = (0..n).filter(|&i| mask[i]).map(|i| xm[i]).collect();
    values.sort_by(f64::total_cmp);
    values.dedup();
    if data.scale(m) == Scale::Binary {
        values.retain(|&v| v == 0.0);
    }
    let mut out = Vec::new();
    for &v in &values {
        let left: Vec<bool> = (0..n).map(|i| mask[i] && xm[i] <= v).collect();
        let n_left = left.iter().filter(|&&b| b).count();
        let n_right = mask.iter().filter(|&&b| b).count() - n_left;
        if n_left < inst.min_node_size.max(1) || n_right < inst.min_node_size.max(1) {
            continue;
        }
        let children = vec![
            (0..n).map(|i| if left[i] { xj[i] } else { 0.0 }).collect::<Vec<_>>(),
            (0..n).map(|i| if mask[i] && !left[i] { xj[i] } else { 0.0 }).collect::<Vec<_>>(),
        ];
        let cols = explicit_columns(&inst.structure, data, Some((j, node, &children)));
        if let Some((dev1, boundary)) = deviance_of(&cols, data, inst.family) {
            out.push(Reference {
                predictor: j,
                node,
                modifier: m,
                left_max: v,
                t: (dev0 - dev1).max(0.0),
                boundary,
            });
        }
    }
    out
}

/// All `(j, node, m)` combinations of the instance.
pub fn combinations(inst: &Instance) -> Vec<(usize, NodeId, usize)> {
    let p = inst.data.p();
    let mut out = Vec::new();
    for j in 0..p {
        let nodes: Vec<NodeId> = match inst.structure.tree(j) {
            Some(t) => t.leaves().iter().map(|l| l.id).collect(),
            None => vec![ROOT],
        };
        for node in nodes {
            for m in (0..p).filter(|&m| m != j) {
                out.push((j, node, m));
            }
        }
    }
    out
}

/// Largest observed modifier value in the node that does not exceed `c`.
pub fn left_max(data: &Dataset, mask: &[bool], m: usize, c: f64) -> f64 {
    data.values(m)
        .iter()
        .zip(mask)
        .filter(|(&x, &k)| k && x <= c)
        .map(|(&x, _)| x)
        .fold(f64::NEG_INFINITY, f64::max)
}

pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}

/// Agreement required for statistics; separated fits get [`LOOSE`].
pub const TOL: f64 = 1e-8;
pub const LOOSE: f64 = 1e-3;

fn gap_ok(best: f64, second: f64, tol: f64) -> bool {
    best - second > 100.0 * tol * (1.0 + best.abs())
}

/// Outcome of [`check_instance`]: combinations compared, and how many of
/// them involved a separated fit.
#[derive(Debug, Default, Clone, Copy)]
pub struct CheckStats {
    pub combinations: usize,
    pub boundary: usize,
}

/// Compare the library's split search on `inst` with the brute-force
/// reference: per combination, and for the overall winner at the root.
pub fn check_instance(inst: &Instance) -> Result<CheckStats, String> {
    let mut stats = CheckStats::default();
    let search = tsvc_core::SplitSearch::new(&inst.structure, &inst.data, inst.family, inst.min_node_size).map_err(|e| format!("search: {e}"))?;
    let mut all: Vec<Reference> = Vec::new();
    for (j, node, m) in combinations(inst) {
        let refs = brute_force(inst, j, node, m);
        let lib = search.max_selected(j, node, m);
        let Some(best) = refs.iter().copied().reduce(|a, b| if b.t > a.t { b } else { a }) else {
            if lib.is_ok() {
                return Err(format!("({j},{node},{m}): library found a split, reference none"));
            }
            continue;
        };
        all.extend(&refs);
        stats.combinations += 1;
        let tol = if refs.iter().any(|r| r.boundary) {
            stats.boundary += 1;
            LOOSE
        } else {
            TOL
        };
        let lib = lib.map_err(|e| format!("({j},{node},{m}): {e}"))?;
        if !close(lib.t_max, best.t, tol) {
            return Err(format!("({j},{node},{m}): t_max {} vs reference {}", lib.t_max, best.t));
        }
        let mask = node_mask(&inst.structure, &inst.data, j, node);
        let chosen = left_max(&inst.data, &mask, m, lib.split_point);
        let hit = refs.iter().find(|r| r.left_max == chosen).ok_or(format!("({j},{node},{m}): chosen partition not admissible"))?;
        if !close(hit.t, best.t, tol) {
            return Err(format!("({j},{node},{m}): chosen partition scores {} < {}", hit.t, best.t));
        }
        let second = refs.iter().filter(|r| r.left_max != best.left_max).map(|r| r.t).fold(f64::NEG_INFINITY, f64::max);
        if gap_ok(best.t, second, tol) && chosen != best.left_max {
            return Err(format!("({j},{node},{m}): argmax {} vs reference {}", chosen, best.left_max));
        }
    }

    // overall winner as chosen by the fitting loop (root structures only)
    if inst.structure.trees().is_empty() && !all.is_empty() {
        let config = tsvc_core::FitConfig {
            n_perm: 1,
            min_node_size: inst.min_node_size,
            curtail: false,
            ..tsvc_core::FitConfig::default()
        };
        let model = tsvc_core::fit_tsvc(&inst.data, inst.family, &config).map_err(|e| format!("fit: {e}"))?;
        let rec = model.diagnostics.split_history.first().ok_or("no split tested")?;
        let best = all.iter().copied().reduce(|a, b| if b.t > a.t { b } else { a }).unwrap();
        let tol = if all.iter().any(|r| r.boundary) { LOOSE } else { TOL };
        if !close(rec.t_obs, best.t, tol) {
            return Err(format!("winner statistic {} vs reference {}", rec.t_obs, best.t));
        }
        let mask = node_mask(&inst.structure, &inst.data, rec.predictor, rec.node);
        let chosen = (rec.predictor, rec.modifier, left_max(&inst.data, &mask, rec.modifier, rec.split_point));
        let second = all
            .iter()
            .filter(|r| (r.predictor, r.modifier, r.left_max) != (best.predictor, best.modifier, best.left_max))
            .map(|r| r.t)
            .fold(f64::NEG_INFINITY, f64::max);
        if gap_ok(best.t, second, tol) && chosen != (best.predictor, best.modifier, best.left_max) {
            return Err(format!("winner {chosen:?} vs reference {:?}", (best.predictor, best.modifier, best.left_max)));
        }
    }
    Ok(stats)
}
