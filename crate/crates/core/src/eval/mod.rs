//! Test-set metrics (MARE, angular error, per-DOF ARE, species breakdowns)
//! and condensed-Hessian distance profiles with tail decay-exponent fits
//! for the analytical engine, the pairwise baseline, and the surrogate.

use std::collections::BTreeMap;

use crate::geometry::{norm, sub, Cluster, Species, SpeciesTable};
use crate::mbd::{mbd_forces, pw_energy_forces, Damping, DispersionParams, ForceTarget};
use crate::surrogate::{self, ModelConfig, ModelParams, TrimmedGraph};
use crate::{Error, Result};

/// Mean absolute relative error, percent. The normalizer F~ is the mean
/// absolute reference component over the filtered samples; per-species
/// filtering recomputes it over that species only.
pub fn mare(
    predictions: &[[f64; 3]],
    references: &[[f64; 3]],
    species: &[Species],
    filter: Option<Species>,
) -> Result<f64> {
    assert_eq!(predictions.len(), references.len(), "sample count mismatch");
    assert_eq!(predictions.len(), species.len(), "species count mismatch");
    let selected: Vec<usize> = (0..predictions.len())
        .filter(|&i| filter.is_none_or(|f| species[i] == f))
        .collect();
    if selected.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let n_dof = (selected.len() * 3) as f64;
    let normalizer: f64 = selected
        .iter()
        .flat_map(|&i| references[i].iter())
        .map(|v| v.abs())
        .sum::<f64>()
        / n_dof;
    if normalizer == 0.0 {
        return Err(Error::ZeroNormalizer);
    }
    let mean_abs_err: f64 = selected
        .iter()
        .map(|&i| {
            (0..3)
                .map(|k| (predictions[i][k] - references[i][k]).abs())
                .sum::<f64>()
        })
        .sum::<f64>()
        / n_dof;
    Ok(mean_abs_err / normalizer * 100.0)
}

/// Angle between prediction and reference in degrees; `None` marks an
/// excluded sample (either vector is zero).
pub fn angular_error(pred: [f64; 3], reference: [f64; 3]) -> Option<f64> {
    let np = norm(pred);
    let nr = norm(reference);
    if np == 0.0 || nr == 0.0 {
        return None;
    }
    let cosine = (crate::geometry::dot(pred, reference) / (np * nr)).clamp(-1.0, 1.0);
    Some(cosine.acos().to_degrees())
}

/// Per-DOF absolute relative error, percent.
pub fn are(pred: [f64; 3], reference: [f64; 3], normalizer: f64) -> [f64; 3] {
    assert!(normalizer > 0.0, "are: normalizer must be positive");
    [
        (pred[0] - reference[0]).abs() / normalizer * 100.0,
        (pred[1] - reference[1]).abs() / normalizer * 100.0,
        (pred[2] - reference[2]).abs() / normalizer * 100.0,
    ]
}

/// Log-spaced angle bins in degrees; the last bin is open-ended.
pub const ANGLE_BIN_EDGES: [f64; 5] = [0.0, 0.1, 1.0, 5.0, 25.0];

#[derive(Debug, Clone)]
pub struct MetricReport {
    pub mare_overall: f64,
    /// Standard deviation of the per-sample MARE values.
    pub mare_std: f64,
    pub mare_per_species: BTreeMap<String, f64>,
    pub counts_per_species: BTreeMap<String, usize>,
    /// Counts per ANGLE_BIN_EDGES bin (last bin open-ended).
    pub angle_histogram: [usize; 5],
    pub angle_excluded: usize,
    pub sample_count: usize,
}

pub fn metric_report(
    predictions: &[[f64; 3]],
    references: &[[f64; 3]],
    species: &[Species],
    table: &SpeciesTable,
) -> Result<MetricReport> {
    let mare_overall = mare(predictions, references, species, None)?;
    let n_dof = (predictions.len() * 3) as f64;
    let normalizer = references
        .iter()
        .flat_map(|r| r.iter())
        .map(|v| v.abs())
        .sum::<f64>()
        / n_dof;
    // Per-sample MARE for the spread statistic.
    let per_sample: Vec<f64> = predictions
        .iter()
        .zip(references)
        .map(|(p, r)| {
            (0..3).map(|k| (p[k] - r[k]).abs()).sum::<f64>() / 3.0 / normalizer * 100.0
        })
        .collect();
    let mean = per_sample.iter().sum::<f64>() / per_sample.len() as f64;
    let mare_std = (per_sample.iter().map(|v| (v - mean).powi(2)).sum::<f64>()
        / per_sample.len() as f64)
        .sqrt();

    let mut mare_per_species = BTreeMap::new();
    let mut counts_per_species = BTreeMap::new();
    let mut present: Vec<Species> = species.to_vec();
    present.sort_by_key(|s| s.0);
    present.dedup();
    for sp in present {
        let symbol = table.symbol(sp).to_string();
        let count = species.iter().filter(|&&s| s == sp).count();
        mare_per_species.insert(symbol.clone(), mare(predictions, references, species, Some(sp))?);
        counts_per_species.insert(symbol, count);
    }

    let mut angle_histogram = [0usize; 5];
    let mut angle_excluded = 0;
    for (p, r) in predictions.iter().zip(references) {
        match angular_error(*p, *r) {
            None => angle_excluded += 1,
            Some(angle) => {
                let bin = ANGLE_BIN_EDGES
                    .iter()
                    .rposition(|&edge| angle >= edge)
                    .unwrap_or(0);
                angle_histogram[bin] += 1;
            }
        }
    }

    Ok(MetricReport {
        mare_overall,
        mare_std,
        mare_per_species,
        counts_per_species,
        angle_histogram,
        angle_excluded,
        sample_count: predictions.len(),
    })
}

/// Plain-text table of overall and per-species performance
/// summary.
pub fn format_metric_report(report: &MetricReport) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "samples: {}\nMARE overall: {:.3} % (std {:.3})\n",
        report.sample_count, report.mare_overall, report.mare_std
    ));
    out.push_str("species   count   MARE%\n");
    for (symbol, value) in &report.mare_per_species {
        out.push_str(&format!(
            "{:<9} {:>5}   {:.3}\n",
            symbol, report.counts_per_species[symbol], value
        ));
    }
    out.push_str("angle histogram (degrees):\n");
    let labels = ["[0,0.1)", "[0.1,1)", "[1,5)", "[5,25)", "[25,inf)"];
    for (label, count) in labels.iter().zip(&report.angle_histogram) {
        out.push_str(&format!("  {:<9} {}\n", label, count));
    }
    out.push_str(&format!("  excluded  {}\n", report.angle_excluded));
    out
}

/// Condensed-Hessian profile: per neighbor the distance to the center and
/// the Frobenius norm of H_1j, plus a power-law fit over the tail window.
#[derive(Debug, Clone)]
pub struct HessianProfile {
    /// (distance d_1j, ||H_1j||_F), sorted by distance, center excluded.
    pub points: Vec<(f64, f64)>,
    /// Decay exponent n in ||H|| ~ d^-n over the tail window.
    pub tail_exponent: f64,
    pub tail_window: (f64, f64),
    pub tail_point_count: usize,
}

/// Tail window: upper half of the cluster radius, excluding the outermost
/// 5% (boundary truncation artifacts).
pub fn default_tail_window(points: &[(f64, f64)]) -> (f64, f64) {
    let radius = points.iter().map(|p| p.0).fold(0.0f64, f64::max);
    (0.5 * radius, 0.95 * radius)
}

/// Least-squares slope of log ||H|| against log d inside the window;
/// non-positive condensed values are skipped (log-undefined).
pub fn fit_tail_exponent(points: &[(f64, f64)], window: (f64, f64)) -> Result<(f64, usize)> {
    let selected: Vec<(f64, f64)> = points
        .iter()
        .filter(|p| p.0 >= window.0 && p.0 <= window.1 && p.1 > 0.0)
        .map(|&(d, c)| (d.ln(), c.ln()))
        .collect();
    if selected.len() < 5 {
        return Err(Error::FitWindowTooSmall(selected.len()));
    }
    let n = selected.len() as f64;
    let sx: f64 = selected.iter().map(|p| p.0).sum();
    let sy: f64 = selected.iter().map(|p| p.1).sum();
    let sxx: f64 = selected.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = selected.iter().map(|p| p.0 * p.1).sum();
    let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    Ok((-slope, selected.len()))
}

fn profile_from_rows(cluster: &Cluster, rows: &[[[f64; 3]; 3]]) -> Vec<(f64, f64)> {
    let center = cluster.positions[0];
    let mut points: Vec<(f64, f64)> = (1..cluster.len())
        .map(|j| {
            (
                norm(sub(cluster.positions[j], center)),
                surrogate::condensed(&rows[j]),
            )
        })
        .collect();
    points.sort_by(|a, b| a.0.total_cmp(&b.0));
    points
}

fn finish_profile(cluster: &Cluster, rows: Vec<[[f64; 3]; 3]>) -> Result<HessianProfile> {
    let points = profile_from_rows(cluster, &rows);
    let window = default_tail_window(&points);
    let (tail_exponent, tail_point_count) = fit_tail_exponent(&points, window)?;
    Ok(HessianProfile {
        points,
        tail_exponent,
        tail_window: window,
        tail_point_count,
    })
}

/// Step for the central differences of the analytical force fields.
const HESSIAN_FD_STEP: f64 = 1e-3;

/// All rows H_1j of the analytical MBD engine from six full-force
/// evaluations: H_1j^{ab} = dF_j^b / dr_1^a by symmetry of the energy
/// Hessian, so displacing the center alone resolves every neighbor.
pub fn mbd_hessian_rows(
    cluster: &Cluster,
    table: &SpeciesTable,
    params: &DispersionParams,
) -> Result<Vec<[[f64; 3]; 3]>> {
    let n = cluster.len();
    let mut rows = vec![[[0.0; 3]; 3]; n];
    for a in 0..3 {
        let force_at = |s: f64| -> Result<Vec<[f64; 3]>> {
            let mut cl = cluster.clone();
            cl.positions[0][a] += s;
            Ok(mbd_forces(&cl, table, params, ForceTarget::All)?.forces)
        };
        let fp = force_at(HESSIAN_FD_STEP)?;
        let fm = force_at(-HESSIAN_FD_STEP)?;
        for (j, row) in rows.iter_mut().enumerate() {
            for b in 0..3 {
                row[a][b] = (fp[j][b] - fm[j][b]) / (2.0 * HESSIAN_FD_STEP);
            }
        }
    }
    Ok(rows)
}

/// Same construction for the pairwise baseline.
pub fn pw_hessian_rows(
    cluster: &Cluster,
    table: &SpeciesTable,
    params: &DispersionParams,
    damping: Damping,
) -> Result<Vec<[[f64; 3]; 3]>> {
    let n = cluster.len();
    let mut rows = vec![[[0.0; 3]; 3]; n];
    for a in 0..3 {
        let force_at = |s: f64| -> Result<Vec<[f64; 3]>> {
            let mut cl = cluster.clone();
            cl.positions[0][a] += s;
            Ok(pw_energy_forces(&cl, table, params, damping)?.1)
        };
        let fp = force_at(HESSIAN_FD_STEP)?;
        let fm = force_at(-HESSIAN_FD_STEP)?;
        for (j, row) in rows.iter_mut().enumerate() {
            for b in 0..3 {
                row[a][b] = (fp[j][b] - fm[j][b]) / (2.0 * HESSIAN_FD_STEP);
            }
        }
    }
    Ok(rows)
}

pub fn hessian_profile_mbd(
    cluster: &Cluster,
    table: &SpeciesTable,
    params: &DispersionParams,
) -> Result<HessianProfile> {
    finish_profile(cluster, mbd_hessian_rows(cluster, table, params)?)
}

pub fn hessian_profile_pw(
    cluster: &Cluster,
    table: &SpeciesTable,
    params: &DispersionParams,
    damping: Damping,
) -> Result<HessianProfile> {
    finish_profile(cluster, pw_hessian_rows(cluster, table, params, damping)?)
}

pub fn hessian_profile_surrogate(
    cluster: &Cluster,
    params: &ModelParams,
    config: &ModelConfig,
    trimmed: &TrimmedGraph,
) -> Result<HessianProfile> {
    finish_profile(
        cluster,
        surrogate::hessian_rows_from_center(cluster, params, config, trimmed)?,
    )
}

/// Two-column text dump plus the fitted exponent footer.
pub fn format_profile(profile: &HessianProfile) -> String {
    let mut out = String::from("# distance_bohr condensed_hessian\n");
    for (d, c) in &profile.points {
        out.push_str(&format!("{d:.8e} {c:.8e}\n"));
    }
    out.push_str(&format!(
        "# tail fit: exponent {:.4} over [{:.4}, {:.4}] Bohr ({} points)\n",
        profile.tail_exponent,
        profile.tail_window.0,
        profile.tail_window.1,
        profile.tail_point_count
    ));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn mare_hand_examples() {
        let refs = [[1.0, 0.0, 0.0]];
        let preds = [[1.1, 0.0, 0.0]];
        let sp = [Species(0)];
        assert!((mare(&preds, &refs, &sp, None).unwrap() - 10.0).abs() < 1e-12);
        assert_eq!(mare(&refs, &refs, &sp, None).unwrap(), 0.0);
        // Homogeneity under common scaling.
        let scaled_p = [[5.5, 0.0, 0.0]];
        let scaled_r = [[5.0, 0.0, 0.0]];
        assert!(
            (mare(&scaled_p, &scaled_r, &sp, None).unwrap()
                - mare(&preds, &refs, &sp, None).unwrap())
            .abs()
                < 1e-12
        );
        assert!(matches!(
            mare(&preds, &[[0.0; 3]], &sp, None),
            Err(Error::ZeroNormalizer)
        ));
    }

    #[test]
    fn mare_species_filter_recomputes_normalizer() {
        let refs = [[1.0, 0.0, 0.0], [10.0, 0.0, 0.0]];
        let preds = [[1.1, 0.0, 0.0], [10.0, 0.0, 0.0]];
        let sp = [Species(0), Species(1)];
        // Species 0 alone: F~ = 1/3, error 0.1/3 -> 10%.
        let m0 = mare(&preds, &refs, &sp, Some(Species(0))).unwrap();
        assert!((m0 - 10.0).abs() < 1e-12);
        let m1 = mare(&preds, &refs, &sp, Some(Species(1))).unwrap();
        assert_eq!(m1, 0.0);
        // Overall normalizer includes the large reference: smaller MARE.
        let all = mare(&preds, &refs, &sp, None).unwrap();
        assert!(all < m0);
    }

    #[test]
    fn angular_error_examples() {
        assert_eq!(angular_error([1.0, 2.0, 3.0], [1.0, 2.0, 3.0]).unwrap(), 0.0);
        assert!((angular_error([1.0, 0.0, 0.0], [0.0, 1.0, 0.0]).unwrap() - 90.0).abs() < 1e-12);
        assert!((angular_error([1.0, 1.0, 0.0], [1.0, 0.0, 0.0]).unwrap() - 45.0).abs() < 1e-12);
        assert!(angular_error([0.0; 3], [1.0, 0.0, 0.0]).is_none());
        // Near-parallel vectors with rounding above |cos| = 1 must clamp.
        let v = [1.0 / 3.0, 1.0 / 7.0, 1.0 / 11.0];
        let w = [2.0 / 3.0, 2.0 / 7.0, 2.0 / 11.0];
        let angle = angular_error(v, w).unwrap();
        assert!(angle.is_finite() && angle < 1e-6);
    }

    #[test]
    fn are_examples_and_mare_consistency() {
        assert_eq!(are([1.0, 2.0, 3.0], [1.0, 2.0, 3.0], 1.0), [0.0; 3]);
        let a = are([0.1, 0.0, 0.0], [0.0; 3], 1.0);
        assert!((a[0] - 10.0).abs() < 1e-12 && a[1] == 0.0 && a[2] == 0.0);
        // Mean of ARE over samples and DOFs equals MARE.
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let refs: Vec<[f64; 3]> = (0..20)
            .map(|_| [rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5])
            .collect();
        let preds: Vec<[f64; 3]> = refs
            .iter()
            .map(|r| [r[0] + 0.05 * rng.gen::<f64>(), r[1], r[2] - 0.02])
            .collect();
        let sp = vec![Species(0); refs.len()];
        let normalizer = refs.iter().flat_map(|r| r.iter()).map(|v| v.abs()).sum::<f64>()
            / (refs.len() * 3) as f64;
        let mean_are: f64 = preds
            .iter()
            .zip(&refs)
            .flat_map(|(p, r)| are(*p, *r, normalizer))
            .sum::<f64>()
            / (refs.len() * 3) as f64;
        let m = mare(&preds, &refs, &sp, None).unwrap();
        assert!((mean_are - m).abs() < 1e-10);
    }

    #[test]
    fn metrics_invariant_under_common_rotation() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let refs: Vec<[f64; 3]> = (0..10)
            .map(|_| [rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5])
            .collect();
        let preds: Vec<[f64; 3]> = refs
            .iter()
            .map(|r| [r[0] * 1.1, r[1] * 0.9, r[2] + 0.01])
            .collect();
        let sp = vec![Species(0); refs.len()];
        // Rotation by 90 degrees about z maps (x, y, z) -> (-y, x, z);
        // component sums of absolute values are permuted, means unchanged.
        let rot = |v: &[f64; 3]| [-v[1], v[0], v[2]];
        let rp: Vec<[f64; 3]> = preds.iter().map(rot).collect();
        let rr: Vec<[f64; 3]> = refs.iter().map(rot).collect();
        let m0 = mare(&preds, &refs, &sp, None).unwrap();
        let m1 = mare(&rp, &rr, &sp, None).unwrap();
        assert!((m0 - m1).abs() < 1e-10);
        for i in 0..refs.len() {
            let a0 = angular_error(preds[i], refs[i]).unwrap();
            let a1 = angular_error(rp[i], rr[i]).unwrap();
            assert!((a0 - a1).abs() < 1e-9);
        }
    }

    #[test]
    fn report_histogram_accounts_for_every_sample() {
        let table = SpeciesTable::default_organic();
        let refs = vec![[1.0, 0.0, 0.0]; 6];
        let preds = vec![
            [1.0, 0.0, 0.0],           // 0 deg
            [1.0, 0.005, 0.0],         // ~0.29 deg
            [1.0, 0.05, 0.0],          // ~2.9 deg
            [1.0, 0.2, 0.0],           // ~11 deg
            [0.0, 1.0, 0.0],           // 90 deg
            [0.0, 0.0, 0.0],           // excluded
        ];
        let sp = vec![Species(0), Species(0), Species(1), Species(1), Species(2), Species(2)];
        let report = metric_report(&preds, &refs, &sp, &table).unwrap();
        let binned: usize = report.angle_histogram.iter().sum();
        assert_eq!(binned + report.angle_excluded, report.sample_count);
        assert_eq!(report.angle_excluded, 1);
        assert_eq!(report.angle_histogram, [1, 1, 1, 1, 1]);
        assert_eq!(report.counts_per_species["H"], 2);
        let text = format_metric_report(&report);
        assert!(text.contains("MARE overall") && text.contains("Cl"));
    }

    /// 1D chain of identical atoms, no damping: the pairwise condensed
    /// Hessian decays as r^-8.
    #[test]
    fn pairwise_chain_tail_exponent_is_eight() {
        let table = SpeciesTable::default_organic();
        let params = DispersionParams::synthetic(2.56);
        let spacing = 4.0;
        let half = 40;
        let mut positions = vec![[0.0; 3]];
        for i in 1..=half {
            positions.push([spacing * i as f64, 0.0, 0.0]);
            positions.push([-spacing * i as f64, 0.0, 0.0]);
        }
        let n = positions.len();
        let cluster = Cluster {
            positions,
            species: vec![Species(0); n],
            center_source_index: 0,
        };
        let profile = hessian_profile_pw(&cluster, &table, &params, Damping::None).unwrap();
        assert!(
            (7.5..=8.5).contains(&profile.tail_exponent),
            "exponent {}",
            profile.tail_exponent
        );
    }

    #[test]
    fn mbd_center_displacement_rows_match_direct_fd() {
        let table = SpeciesTable::default_organic();
        let params = DispersionParams::synthetic(2.56);
        let cluster = crate::mbd::test_cluster(7, 3, 4.0);
        let rows = mbd_hessian_rows(&cluster, &table, &params).unwrap();
        // Direct oracle: displace atom j, read the center force.
        for j in [1usize, 3, 6] {
            for c in 0..3 {
                let f_at = |s: f64| {
                    let mut cl = cluster.clone();
                    cl.positions[j][c] += s;
                    mbd_forces(&cl, &table, &params, ForceTarget::CenterOnly)
                        .unwrap()
                        .forces[0]
                };
                let fp = f_at(1e-3);
                let fm = f_at(-1e-3);
                for a in 0..3 {
                    let direct = (fp[a] - fm[a]) / 2e-3;
                    let scale = rows[j][a][c].abs().max(1e-8);
                    assert!(
                        (rows[j][a][c] - direct).abs() / scale < 1e-4,
                        "atom {j} [{a}][{c}]: {} vs {}",
                        rows[j][a][c],
                        direct
                    );
                }
            }
        }
    }

    #[test]
    fn mbd_condensed_values_rotation_invariant() {
        let table = SpeciesTable::default_organic();
        let params = DispersionParams::synthetic(2.56);
        let cluster = crate::mbd::test_cluster(8, 11, 4.5);
        let rows = mbd_hessian_rows(&cluster, &table, &params).unwrap();
        let base: Vec<f64> = rows.iter().map(surrogate::condensed).collect();
        // 90-degree rotation about z keeps coordinates exact.
        let mut rotated = cluster.clone();
        for p in rotated.positions.iter_mut() {
            *p = [-p[1], p[0], p[2]];
        }
        let rows_r = mbd_hessian_rows(&rotated, &table, &params).unwrap();
        for (j, c) in rows_r.iter().map(surrogate::condensed).enumerate() {
            assert!((c - base[j]).abs() < 1e-8, "atom {j}: {c} vs {}", base[j]);
        }
    }

    #[test]
    fn tail_fit_needs_five_points() {
        let points: Vec<(f64, f64)> = (1..=4).map(|i| (i as f64, 1.0 / i as f64)).collect();
        assert!(matches!(
            fit_tail_exponent(&points, (0.0, 10.0)),
            Err(Error::FitWindowTooSmall(4))
        ));
        // Exact power law recovered.
        let points: Vec<(f64, f64)> = (1..=20)
            .map(|i| {
                let d = 1.0 + i as f64;
                (d, d.powi(-8))
            })
            .collect();
        let (exp, _) = fit_tail_exponent(&points, (0.0, 100.0)).unwrap();
        assert!((exp - 8.0).abs() < 1e-10);
    }

    #[test]
    fn profile_text_round_trips_the_exponent() {
        let points: Vec<(f64, f64)> = (1..=10).map(|i| (i as f64, (i as f64).powi(-8))).collect();
        let window = (1.0, 10.0);
        let (tail_exponent, tail_point_count) = fit_tail_exponent(&points, window).unwrap();
        let profile = HessianProfile {
            points,
            tail_exponent,
            tail_window: window,
            tail_point_count,
        };
        let text = format_profile(&profile);
        assert_eq!(text.lines().count(), 12);
        assert!(text.contains("exponent 8.0000"));
    }
}
