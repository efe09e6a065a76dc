//! Seeds for homoclinic orbits by shooting along invariant manifolds.
//!
//! For a planar saddle the one-dimensional stable and unstable manifolds
//! are grown from fundamental domains along the eigenvectors (forward map
//! for the unstable one, inverse map for the stable one), refined
//! adaptively, and intersected as polylines. Each crossing is filled into
//! an orbit segment and refined by a damped Newton solve.

use nalgebra::DVector;
use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::map::ParameterizedMap;
use crate::orbit::{
    amplitude, min_distance_upto_shift, newton_solve, BoundaryKind, NewtonSettings, OrbitSegment,
};

#[derive(Debug, Clone, Copy)]
pub struct SeedSettings {
    /// Offset of the fundamental domain from the fixed point.
    pub delta: f64,
    /// Maximal polyline segment length before subdivision.
    pub max_segment: f64,
    /// Points further than this (sup norm) from the origin are dropped.
    pub box_radius: f64,
    /// Refinement floor for the fundamental-domain parameter.
    pub param_tol: f64,
    /// Hard cap on polyline points per manifold (arclength budget).
    pub max_points: usize,
    /// Displacement defining a hump when counting excursions.
    pub hump_threshold: f64,
    /// Accepted homoclinic orbits must return this close to the fixed point.
    pub tail_threshold: f64,
}

impl Default for SeedSettings {
    fn default() -> Self {
        SeedSettings {
            delta: 1e-3,
            max_segment: 0.02,
            box_radius: 8.0,
            param_tol: 1e-13,
            max_points: 400_000,
            hump_threshold: 0.5,
            tail_threshold: 1e-2,
        }
    }
}

struct Polyline {
    /// Chains of consecutive points; separate chains are not connected.
    chains: Vec<Vec<DVector<f64>>>,
}

/// Grows a one-dimensional invariant manifold of `step` (the map itself
/// for the unstable manifold, its inverse for the stable one) starting
/// along `direction` with linear rate `rate` (|rate| > 1).
fn grow_manifold(
    step: &dyn Fn(&DVector<f64>) -> Option<DVector<f64>>,
    xi: &DVector<f64>,
    direction: &DVector<f64>,
    rate: f64,
    settings: &SeedSettings,
) -> Polyline {
    let levels = {
        let target = 2.0 * settings.box_radius / settings.delta;
        (target.ln() / rate.abs().ln()).ceil() as usize + 3
    };
    let mut chains = Vec::new();
    let mut total_points = 0usize;

    for side in [1.0, -1.0] {
        // Fundamental domain of the squared map: t ∈ [δ, rate²·δ].
        let t0 = settings.delta * side;
        let t1 = settings.delta * rate * rate * side;
        for level in 0..levels {
            if total_points >= settings.max_points {
                break;
            }
            let eval = |t: f64| -> Option<DVector<f64>> {
                let mut p = xi + direction * t;
                for _ in 0..level {
                    p = step(&p)?;
                    if p.amax() > settings.box_radius || !p.iter().all(|v| v.is_finite()) {
                        return None;
                    }
                }
                Some(p)
            };
            // Adaptive subdivision of the parameter interval.
            let mut stack = vec![(t0, eval(t0), t1, eval(t1))];
            let mut pts: Vec<(f64, Option<DVector<f64>>)> = vec![(t0, eval(t0))];
            while let Some((ta, pa, tb, pb)) = stack.pop() {
                let split = match (&pa, &pb) {
                    (Some(a), Some(b)) => (a - b).norm() > settings.max_segment,
                    // One endpoint escaped: refine down to the boundary.
                    _ => pa.is_some() || pb.is_some(),
                };
                if split && (tb - ta).abs() > settings.param_tol * rate * rate
                    && pts.len() + stack.len() < settings.max_points
                {
                    let tm = 0.5 * (ta + tb);
                    let pm = eval(tm);
                    stack.push((tm, pm.clone(), tb, pb));
                    stack.push((ta, pa, tm, pm));
                } else {
                    pts.push((tb, pb));
                }
            }
            pts.sort_by(|x, y| {
                let (a, b) = (x.0 * side, y.0 * side);
                a.partial_cmp(&b).unwrap()
            });
            // Break into chains at escaped points.
            let mut chain = Vec::new();
            for (_, p) in pts {
                match p {
                    Some(p) => {
                        total_points += 1;
                        chain.push(p);
                    }
                    None => {
                        if chain.len() > 1 {
                            chains.push(std::mem::take(&mut chain));
                        } else {
                            chain.clear();
                        }
                    }
                }
            }
            if chain.len() > 1 {
                chains.push(chain);
            }
        }
    }
    Polyline { chains }
}

fn segment_intersection(
    a0: &DVector<f64>,
    a1: &DVector<f64>,
    b0: &DVector<f64>,
    b1: &DVector<f64>,
) -> Option<DVector<f64>> {
    let d1 = a1 - a0;
    let d2 = b1 - b0;
    let denom = d1[0] * d2[1] - d1[1] * d2[0];
    if denom.abs() < 1e-300 {
        return None;
    }
    let rhs = b0 - a0;
    let s = (rhs[0] * d2[1] - rhs[1] * d2[0]) / denom;
    let t = (rhs[0] * d1[1] - rhs[1] * d1[0]) / denom;
    if (0.0..=1.0).contains(&s) && (0.0..=1.0).contains(&t) {
        Some(a0 + d1 * s)
    } else {
        None
    }
}

/// All crossings between two polylines, via a uniform grid hash.
fn polyline_intersections(u: &Polyline, s: &Polyline, cell: f64) -> Vec<DVector<f64>> {
    type Seg = (usize, usize, usize); // chain, index, marker
    let mut grid: HashMap<(i64, i64), Vec<Seg>> = HashMap::new();
    let key = |x: f64, y: f64| ((x / cell).floor() as i64, (y / cell).floor() as i64);
    for (ci, chain) in u.chains.iter().enumerate() {
        for i in 0..chain.len() - 1 {
            let (a, b) = (&chain[i], &chain[i + 1]);
            let (k0, k1) = (key(a[0], a[1]), key(b[0], b[1]));
            for gx in k0.0.min(k1.0)..=k0.0.max(k1.0) {
                for gy in k0.1.min(k1.1)..=k0.1.max(k1.1) {
                    grid.entry((gx, gy)).or_default().push((ci, i, 0));
                }
            }
        }
    }
    let mut found = Vec::new();
    for (ci, chain) in s.chains.iter().enumerate() {
        for i in 0..chain.len() - 1 {
            let (b0, b1) = (&chain[i], &chain[i + 1]);
            let (k0, k1) = (key(b0[0], b0[1]), key(b1[0], b1[1]));
            let mut seen: Vec<Seg> = Vec::new();
            for gx in k0.0.min(k1.0) - 1..=k0.0.max(k1.0) + 1 {
                for gy in k0.1.min(k1.1) - 1..=k0.1.max(k1.1) + 1 {
                    if let Some(list) = grid.get(&(gx, gy)) {
                        for seg in list {
                            if seen.contains(seg) {
                                continue;
                            }
                            seen.push(*seg);
                            let (uc, ui, _) = *seg;
                            let a0 = &u.chains[uc][ui];
                            let a1 = &u.chains[uc][ui + 1];
                            if let Some(p) = segment_intersection(a0, a1, b0, b1) {
                                found.push(p);
                            }
                        }
                    }
                }
            }
            let _ = (ci, i);
        }
    }
    found
}

/// Fills an orbit segment by iterating a crossing point both ways,
/// clamping to the fixed point once the trajectory stops approaching it.
fn fill_segment<M: ParameterizedMap + ?Sized>(
    map: &M,
    z: &DVector<f64>,
    xi: &DVector<f64>,
    lambda: f64,
    n_minus: i64,
    n_plus: i64,
    box_radius: f64,
) -> OrbitSegment {
    let m = (n_plus - n_minus + 1) as usize;
    let mut points = vec![xi.clone(); m];
    let origin = (-n_minus) as usize;
    points[origin] = z.clone();
    let mut p = z.clone();
    let mut best = (p.clone() - xi).norm();
    for i in origin + 1..m {
        p = map.eval(&p, lambda);
        let d = (&p - xi).norm();
        if !d.is_finite() || p.amax() > box_radius || d > 3.0 * best.max(1e-6) {
            break;
        }
        best = best.min(d);
        points[i] = p.clone();
    }
    p = z.clone();
    best = (p.clone() - xi).norm();
    for i in (0..origin).rev() {
        match map.inverse(&p, lambda) {
            Some(q) => {
                let d = (&q - xi).norm();
                if !d.is_finite() || q.amax() > box_radius || d > 3.0 * best.max(1e-6) {
                    break;
                }
                best = best.min(d);
                points[i] = q.clone();
                p = q;
            }
            None => break,
        }
    }
    OrbitSegment::new(n_minus, n_plus, lambda, points, BoundaryKind::Projection)
}

/// Number of excursions: maximal runs of points displaced from the fixed
/// point by more than the hump threshold.
pub fn hump_count(seg: &OrbitSegment, xi: &DVector<f64>, threshold: f64) -> usize {
    let mut count = 0;
    let mut inside = false;
    for p in &seg.points {
        let far = (p - xi).norm() > threshold;
        if far && !inside {
            count += 1;
        }
        inside = far;
    }
    count
}

/// Seeds up to `max_count` distinct one-humped homoclinic orbits at the
/// given parameter, sorted by amplitude.
pub fn seed_homoclinics<M: ParameterizedMap + ?Sized>(
    map: &M,
    lambda: f64,
    j: (i64, i64),
    max_count: usize,
    settings: &SeedSettings,
) -> Result<Vec<OrbitSegment>> {
    if map.dim() != 2 {
        return Err(Error::InvalidInput("manifold shooting requires a planar map".into()));
    }
    let fp = map.reference_fixed_point(lambda)?;
    fp.require_hyperbolic(crate::map::HYPERBOLICITY_MARGIN)?;
    let xi = fp.location.clone();
    let stable_idx = *fp
        .stable_indices()
        .first()
        .ok_or_else(|| Error::Degenerate("no stable eigenvalue".into()))?;
    let unstable_idx = *fp
        .unstable_indices()
        .first()
        .ok_or_else(|| Error::Degenerate("no unstable eigenvalue".into()))?;
    let mu_s = fp.eigen.values[stable_idx];
    let mu_u = fp.eigen.values[unstable_idx];
    let v_s = fp.eigen.right[stable_idx].clone();
    let v_u = fp.eigen.right[unstable_idx].clone();

    let forward = |p: &DVector<f64>| -> Option<DVector<f64>> { Some(map.eval(p, lambda)) };
    let backward = |p: &DVector<f64>| -> Option<DVector<f64>> { map.inverse(p, lambda) };
    if map.inverse(&xi, lambda).is_none() {
        return Err(Error::InvalidInput("seeding requires a closed-form inverse".into()));
    }

    let unstable = grow_manifold(&forward, &xi, &v_u, mu_u, settings);
    let stable = grow_manifold(&backward, &xi, &v_s, 1.0 / mu_s, settings);
    let crossings = polyline_intersections(&unstable, &stable, settings.max_segment.max(1e-3));
    if crossings.is_empty() {
        return Err(Error::NoIntersectionFound);
    }

    let newton = NewtonSettings::damped();
    let mut orbits: Vec<OrbitSegment> = Vec::new();
    for z in &crossings {
        // Crossings on the local eigenline through the fixed point are the
        // trivial intersection at ξ itself.
        if (z - &xi).norm() < 10.0 * settings.delta {
            continue;
        }
        let seed = fill_segment(map, z, &xi, lambda, j.0, j.1, settings.box_radius);
        let Ok((orbit, _)) = newton_solve(map, &seed, &newton) else { continue };
        if orbit.endpoint_distance(&xi) > settings.tail_threshold {
            continue;
        }
        if hump_count(&orbit, &xi, settings.hump_threshold) != 1 {
            continue;
        }
        let max_shift = orbit.len() as i64;
        let duplicate = orbits
            .iter()
            .any(|o| min_distance_upto_shift(o, &orbit, &xi, max_shift).0 < 1e-3);
        if !duplicate {
            orbits.push(orbit);
        }
    }
    if orbits.is_empty() {
        return Err(Error::NoIntersectionFound);
    }
    let mut with_amp: Vec<(f64, OrbitSegment)> =
        orbits.into_iter().map(|o| (amplitude(map, &o).unwrap(), o)).collect();
    with_amp.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    Ok(with_amp.into_iter().take(max_count).map(|(_, o)| o).collect())
}

/// First (smallest-amplitude) homoclinic seed.
pub fn seed_homoclinic<M: ParameterizedMap + ?Sized>(
    map: &M,
    lambda: f64,
    j: (i64, i64),
    settings: &SeedSettings,
) -> Result<OrbitSegment> {
    Ok(seed_homoclinics(map, lambda, j, 1, settings)?.into_iter().next().unwrap())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::map::HenonMap;
    use crate::orbit::gamma_residual;

    #[test]
    fn seeds_four_distinct_primary_orbits() {
        let map = HenonMap::default();
        let settings = SeedSettings::default();
        let orbits = seed_homoclinics(&map, 0.35, (-20, 21), 4, &settings).unwrap();
        assert_eq!(orbits.len(), 4, "expected 4 distinct one-hump orbits");
        let xi = map.reference_fixed_point(0.35).unwrap().location;
        for (i, a) in orbits.iter().enumerate() {
            assert!(gamma_residual(&map, a).unwrap().amax() <= 1e-12);
            for b in orbits.iter().skip(i + 1) {
                let (d, _) = min_distance_upto_shift(a, b, &xi, a.len() as i64);
                assert!(d >= 1e-3, "orbits {i} too close: {d}");
            }
        }
        // Amplitudes are pairwise distinct.
        let amps: Vec<f64> = orbits.iter().map(|o| amplitude(&map, o).unwrap()).collect();
        for i in 0..amps.len() {
            for j in i + 1..amps.len() {
                assert!((amps[i] - amps[j]).abs() >= 1e-3, "amplitudes {amps:?}");
            }
        }
    }

    #[test]
    fn no_intersection_far_below_tangencies() {
        let map = HenonMap::default();
        let settings = SeedSettings::default();
        let out = seed_homoclinics(&map, 0.05, (-20, 21), 4, &settings);
        assert!(
            matches!(out, Err(Error::NoIntersectionFound)),
            "expected no homoclinic orbit at λ = 0.05, got {out:?}"
        );
    }
}

/// Development probe: prints polyline statistics for both manifolds.
#[doc(hidden)]
pub fn debug_polylines<M: ParameterizedMap + ?Sized>(map: &M, lambda: f64) {
    let settings = SeedSettings::default();
    let fp = map.reference_fixed_point(lambda).unwrap();
    let xi = fp.location.clone();
    let mu_s = fp.eigen.values[fp.stable_indices()[0]];
    let mu_u = fp.eigen.values[fp.unstable_indices()[0]];
    let v_s = fp.eigen.right[fp.stable_indices()[0]].clone();
    let v_u = fp.eigen.right[fp.unstable_indices()[0]].clone();
    let forward = |p: &DVector<f64>| -> Option<DVector<f64>> { Some(map.eval(p, lambda)) };
    let backward = |p: &DVector<f64>| -> Option<DVector<f64>> { map.inverse(p, lambda) };
    let unstable = grow_manifold(&forward, &xi, &v_u, mu_u, &settings);
    let stable = grow_manifold(&backward, &xi, &v_s, 1.0 / mu_s, &settings);
    for (name, p) in [("unstable", &unstable), ("stable", &stable)] {
        let pts: usize = p.chains.iter().map(|c| c.len()).sum();
        let len: f64 = p
            .chains
            .iter()
            .map(|c| c.windows(2).map(|w| (&w[1] - &w[0]).norm()).sum::<f64>())
            .sum();
        let mut bb = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
        for c in &p.chains {
            for q in c {
                bb.0 = bb.0.min(q[0]);
                bb.1 = bb.1.max(q[0]);
                bb.2 = bb.2.min(q[1]);
                bb.3 = bb.3.max(q[1]);
            }
        }
        println!(
            "{name}: {} chains, {pts} points, arclength {len:.2}, bbox x [{:.2},{:.2}] y [{:.2},{:.2}]",
            p.chains.len(),
            bb.0, bb.1, bb.2, bb.3
        );
    }
    let crossings = polyline_intersections(&unstable, &stable, settings.max_segment.max(1e-3));
    println!("crossings: {}", crossings.len());
    for z in crossings.iter().take(8) {
        println!("  z = ({:.6}, {:.6})", z[0], z[1]);
    }
}

/// Development probe: brute-force intersection count (no grid).
#[doc(hidden)]
pub fn debug_brute_crossings<M: ParameterizedMap + ?Sized>(map: &M, lambda: f64) -> usize {
    let settings = SeedSettings::default();
    let fp = map.reference_fixed_point(lambda).unwrap();
    let xi = fp.location.clone();
    let mu_s = fp.eigen.values[fp.stable_indices()[0]];
    let mu_u = fp.eigen.values[fp.unstable_indices()[0]];
    let v_s = fp.eigen.right[fp.stable_indices()[0]].clone();
    let v_u = fp.eigen.right[fp.unstable_indices()[0]].clone();
    let forward = |p: &DVector<f64>| -> Option<DVector<f64>> { Some(map.eval(p, lambda)) };
    let backward = |p: &DVector<f64>| -> Option<DVector<f64>> { map.inverse(p, lambda) };
    let unstable = grow_manifold(&forward, &xi, &v_u, mu_u, &settings);
    let stable = grow_manifold(&backward, &xi, &v_s, 1.0 / mu_s, &settings);
    let mut count = 0;
    for uc in &unstable.chains {
        for i in 0..uc.len() - 1 {
            for sc in &stable.chains {
                for j in 0..sc.len() - 1 {
                    if let Some(z) = segment_intersection(&uc[i], &uc[i + 1], &sc[j], &sc[j + 1]) {
                        if count < 5 {
                            println!("brute: ({:.5}, {:.5})", z[0], z[1]);
                        }
                        count += 1;
                    }
                }
            }
        }
    }
    count
}

/// Development probe: writes polyline chains as CSV (chain, x, y).
#[doc(hidden)]
pub fn debug_dump_csv<M: ParameterizedMap + ?Sized>(map: &M, lambda: f64, dir: &str) {
    let settings = SeedSettings::default();
    let fp = map.reference_fixed_point(lambda).unwrap();
    let xi = fp.location.clone();
    let mu_s = fp.eigen.values[fp.stable_indices()[0]];
    let mu_u = fp.eigen.values[fp.unstable_indices()[0]];
    let v_s = fp.eigen.right[fp.stable_indices()[0]].clone();
    let v_u = fp.eigen.right[fp.unstable_indices()[0]].clone();
    let forward = |p: &DVector<f64>| -> Option<DVector<f64>> { Some(map.eval(p, lambda)) };
    let backward = |p: &DVector<f64>| -> Option<DVector<f64>> { map.inverse(p, lambda) };
    for (name, poly) in [
        ("unstable", grow_manifold(&forward, &xi, &v_u, mu_u, &settings)),
        ("stable", grow_manifold(&backward, &xi, &v_s, 1.0 / mu_s, &settings)),
    ] {
        let mut out = String::new();
        for (ci, chain) in poly.chains.iter().enumerate() {
            for p in chain {
                out.push_str(&format!("{ci},{},{}\n", p[0], p[1]));
            }
        }
        std::fs::write(format!("{dir}/{name}.csv"), out).unwrap();
    }
}
