//! Force-matching training: MSE force loss, AdamW with decoupled decay,
//! two-stage learning-rate schedule, normal and unit-specific batching,
//! stratified validation split. Per-record gradients may run in parallel;
//! the reduction and the optimizer step are sequential in record order so
//! results are bit-identical across thread counts.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use std::time::Instant;

use crate::diff::{Dual, ParameterSet};
use crate::geometry::Cluster;
use crate::parallel::par_map;
use crate::surrogate::{build_energy_graph, ModelConfig, ModelParams, TrimmedGraph};
use crate::{Error, Result};

/// One training sample: a cluster and the reference center-atom force.
#[derive(Debug, Clone)]
pub struct DatasetRecord {
    pub cluster: Cluster,
    /// Hartree/Bohr, unscaled.
    pub target_force: [f64; 3],
    pub unit_id: u32,
    /// Provenance tag; distinguishes polymers in mixed datasets.
    pub source: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BatchingMode {
    Normal,
    UnitSpecific,
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_initial: f64,
    pub lr_final: f64,
    /// Hard switch from lr_initial to lr_final at this epoch (0-based).
    pub lr_switch_epoch: usize,
    pub weight_decay: f64,
    /// Targets are multiplied by this before entering the loss.
    pub force_scale: f64,
    pub val_fraction: f64,
    pub seed: u64,
    pub batching_mode: BatchingMode,
}

impl Default for TrainConfig {
    /// Reference protocol: 100 epochs, batch 36, 10^-3 -> 10^-4 at epoch 50,
    /// weight decay 0.004, 10% validation.
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 36,
            lr_initial: 1e-3,
            lr_final: 1e-4,
            lr_switch_epoch: 50,
            weight_decay: 0.004,
            force_scale: 1e3,
            val_fraction: 0.1,
            seed: 0,
            batching_mode: BatchingMode::Normal,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lr_initial", self.lr_initial),
            ("lr_final", self.lr_final),
            ("force_scale", self.force_scale),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParam {
                    name: name.into(),
                    reason: format!("must be positive, got {v}"),
                });
            }
        }
        if self.weight_decay < 0.0 || !self.weight_decay.is_finite() {
            return Err(Error::InvalidParam {
                name: "weight_decay".into(),
                reason: format!("must be non-negative, got {}", self.weight_decay),
            });
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::InvalidParam {
                name: "val_fraction".into(),
                reason: format!("must be in [0, 1), got {}", self.val_fraction),
            });
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidParam {
                name: "batch_size".into(),
                reason: "must be positive".into(),
            });
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        if epoch < self.lr_switch_epoch {
            self.lr_initial
        } else {
            self.lr_final
        }
    }
}

/// Mean over the batch of the squared Euclidean force error.
pub fn force_loss(predictions: &[[f64; 3]], targets: &[[f64; 3]]) -> Result<f64> {
    if predictions.is_empty() {
        return Err(Error::EmptyBatch);
    }
    assert_eq!(predictions.len(), targets.len(), "batch length mismatch");
    let sse: f64 = predictions
        .iter()
        .zip(targets)
        .map(|(p, t)| (0..3).map(|k| (p[k] - t[k]).powi(2)).sum::<f64>())
        .sum();
    Ok(sse / predictions.len() as f64)
}

fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Shuffled index batches, last batch possibly short.
pub fn normal_batches(count: usize, batch_size: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..count).collect();
    idx.shuffle(&mut epoch_rng(seed, epoch));
    idx.chunks(batch_size).map(|c| c.to_vec()).collect()
}

/// Batches built from whole monomer units: unit order is shuffled per
/// epoch, records inside a unit stay in input order. Falls back to normal
/// batching (second return value true) when the units are uneven or the
/// batch size is not a multiple of the unit size.
pub fn unit_specific_batches(
    records: &[DatasetRecord],
    batch_size: usize,
    seed: u64,
    epoch: usize,
) -> (Vec<Vec<usize>>, bool) {
    let mut units: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        units.entry(r.unit_id).or_default().push(i);
    }
    let sizes: Vec<usize> = units.values().map(|v| v.len()).collect();
    let uniform = sizes.windows(2).all(|w| w[0] == w[1]);
    let unit_size = sizes.first().copied().unwrap_or(0);
    if !uniform || unit_size == 0 || batch_size % unit_size != 0 {
        return (normal_batches(records.len(), batch_size, seed, epoch), true);
    }
    let mut keys: Vec<u32> = units.keys().copied().collect();
    keys.shuffle(&mut epoch_rng(seed, epoch));
    let units_per_batch = batch_size / unit_size;
    let mut batches = Vec::new();
    for chunk in keys.chunks(units_per_batch) {
        let mut batch = Vec::with_capacity(chunk.len() * unit_size);
        for key in chunk {
            batch.extend_from_slice(&units[key]);
        }
        batches.push(batch);
    }
    (batches, false)
}

/// AdamW moment buffers mirroring the parameter shapes.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub m: ParameterSet,
    pub v: ParameterSet,
    pub step: u64,
}

impl OptimizerState {
    pub fn new(params: &ModelParams) -> Self {
        Self {
            m: params.set.zeros_like(),
            v: params.set.zeros_like(),
            step: 0,
        }
    }
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// One AdamW update with decoupled weight decay over the named tensors:
/// w <- w - lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * w).
pub fn adamw_step(
    params: &mut ModelParams,
    grads: &ParameterSet,
    state: &mut OptimizerState,
    lr: f64,
    weight_decay: f64,
    trainable: &[&str],
) -> Result<()> {
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - ADAM_BETA1.powi(t);
    let bc2 = 1.0 - ADAM_BETA2.powi(t);
    for &name in trainable {
        let g = grads.get(name).expect("gradient tensor present");
        if g.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(name.to_string()));
        }
        let m = state.m.get_mut(name).expect("moment tensor present");
        for (mi, &gi) in m.data.iter_mut().zip(&g.data) {
            *mi = ADAM_BETA1 * *mi + (1.0 - ADAM_BETA1) * gi;
        }
        let v = state.v.get_mut(name).expect("moment tensor present");
        for (vi, &gi) in v.data.iter_mut().zip(&g.data) {
            *vi = ADAM_BETA2 * *vi + (1.0 - ADAM_BETA2) * gi * gi;
        }
        let m = state.m.get(name).unwrap();
        let v = state.v.get(name).unwrap();
        let w = params.set.get_mut(name).expect("parameter tensor present");
        for i in 0..w.data.len() {
            let m_hat = m.data[i] / bc1;
            let v_hat = v.data[i] / bc2;
            w.data[i] -=
                lr * (m_hat / (v_hat.sqrt() + ADAM_EPS) + weight_decay * w.data[i]);
        }
    }
    Ok(())
}

/// Loss and parameter gradient of one batch. Per record: an f64 pass for
/// the predicted force, then a dual pass whose center-position tangent is
/// seeded with -2/B * (F_pred - F_target); the tangent components of the
/// parameter adjoints are exactly dL/dtheta for that record.
pub fn batch_gradient(
    records: &[&DatasetRecord],
    params: &ModelParams,
    model: &ModelConfig,
    trimmed: &TrimmedGraph,
    force_scale: f64,
) -> Result<(f64, ParameterSet)> {
    if records.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let b = records.len() as f64;
    let per_record: Vec<Result<(f64, Vec<(&'static str, Vec<f64>)>)>> =
        par_map(records, |record| {
            let positions: Vec<f64> =
                record.cluster.positions.iter().flat_map(|p| *p).collect();
            let codes: Vec<usize> =
                record.cluster.species.iter().map(|s| s.0 as usize).collect();
            let eg = build_energy_graph(positions.clone(), &codes, params, model, trimmed);
            let grads = eg.graph.backward(eg.energy);
            let gp = grads.wrt(eg.pos);
            let mut residual = [0.0; 3];
            let mut sq = 0.0;
            for k in 0..3 {
                let pred = -gp[k];
                residual[k] = pred - record.target_force[k] * force_scale;
                sq += residual[k] * residual[k];
            }
            // Dual pass: d(loss)/d(theta) for this record's 1/B share.
            let dual_positions: Vec<Dual> = positions
                .iter()
                .enumerate()
                .map(|(i, &v)| {
                    let t = if i < 3 { -2.0 / b * residual[i] } else { 0.0 };
                    Dual::new(v, t)
                })
                .collect();
            let eg = build_energy_graph(dual_positions, &codes, params, model, trimmed);
            let grads = eg.graph.backward(eg.energy);
            let tensor_grads = eg
                .param_nodes
                .iter()
                .map(|&(name, id)| {
                    (name, grads.wrt(id).iter().map(|d| d.t).collect::<Vec<f64>>())
                })
                .collect();
            Ok((sq, tensor_grads))
        });

    let mut total = params.set.zeros_like();
    let mut sse = 0.0;
    // Fixed-order sequential reduction keeps the sum deterministic.
    for item in per_record {
        let (sq, tensor_grads) = item?;
        sse += sq;
        for (name, g) in tensor_grads {
            let acc = total.get_mut(name).expect("tensor present");
            for (a, v) in acc.data.iter_mut().zip(g) {
                *a += v;
            }
        }
    }
    Ok((sse / b, total))
}

/// Forward-only mean loss over a record set.
pub fn evaluate_loss(
    records: &[&DatasetRecord],
    params: &ModelParams,
    model: &ModelConfig,
    trimmed: &TrimmedGraph,
    force_scale: f64,
) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let sq: Vec<Result<f64>> = par_map(records, |record| {
        let f = crate::surrogate::predict_force(&record.cluster, params, model, trimmed)?;
        Ok((0..3)
            .map(|k| (f[k] - record.target_force[k] * force_scale).powi(2))
            .sum())
    });
    let mut sse = 0.0;
    for s in sq {
        sse += s?;
    }
    Ok(sse / records.len() as f64)
}

/// Deterministic validation split, stratified by source tag: within each
/// source the records are shuffled by seed and the tail fraction reserved.
/// When every stratum is too small to contribute (e.g. one record per
/// source), falls back to a single global split so validation is not empty.
pub fn split_validation(
    records: &[DatasetRecord],
    val_fraction: f64,
    seed: u64,
) -> (Vec<usize>, Vec<usize>) {
    let mut by_source: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        by_source.entry(r.source).or_default().push(i);
    }
    let strata_too_small = by_source
        .values()
        .all(|idx| (idx.len() as f64 * val_fraction).floor() as usize == 0);
    if strata_too_small {
        by_source.clear();
        by_source.insert(0, (0..records.len()).collect());
    }
    let mut train = Vec::new();
    let mut val = Vec::new();
    for (source, mut idx) in by_source {
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ u64::from(source)));
        let n_val = (idx.len() as f64 * val_fraction).floor() as usize;
        let split = idx.len() - n_val;
        train.extend_from_slice(&idx[..split]);
        val.extend_from_slice(&idx[split..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    (train, val)
}

#[derive(Debug, Clone, Copy)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub final_params: ModelParams,
    pub best_params: ModelParams,
    pub best_val_loss: f64,
    pub history: Vec<EpochStats>,
    /// Set when a non-finite loss aborted training; params hold the last
    /// finite state.
    pub diverged_at: Option<usize>,
    /// Unit-specific batching fell back to normal batching.
    pub batching_fallback: bool,
}

/// Full training loop. `on_epoch` receives each epoch's stats as they are
/// produced (the CLI streams them to the history log).
pub fn train(
    records: &[DatasetRecord],
    initial: ModelParams,
    model: &ModelConfig,
    trimmed: &TrimmedGraph,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<TrainOutcome> {
    config.validate()?;
    if records.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let (train_idx, val_idx) = split_validation(records, config.val_fraction, config.seed);
    let val_refs: Vec<&DatasetRecord> = val_idx.iter().map(|&i| &records[i]).collect();
    let train_records: Vec<&DatasetRecord> =
        train_idx.iter().map(|&i| &records[i]).collect();

    let trainable = ModelParams::trainable_names(model);
    let mut params = initial;
    let mut state = OptimizerState::new(&params);
    let mut best_params = params.clone();
    let mut best_val_loss = f64::INFINITY;
    let mut history = Vec::new();
    let mut diverged_at = None;
    let mut batching_fallback = false;

    'epochs: for epoch in 0..config.epochs {
        let start = Instant::now();
        let lr = config.lr_at(epoch);
        let batches = match config.batching_mode {
            BatchingMode::Normal => {
                normal_batches(train_records.len(), config.batch_size, config.seed, epoch)
            }
            BatchingMode::UnitSpecific => {
                // Index into train_records; unit structure comes from the
                // records themselves.
                let owned: Vec<DatasetRecord> =
                    train_records.iter().map(|r| (*r).clone()).collect();
                let (b, fell_back) =
                    unit_specific_batches(&owned, config.batch_size, config.seed, epoch);
                batching_fallback |= fell_back;
                b
            }
        };
        let mut sse = 0.0;
        let mut count = 0usize;
        let mut last_good = params.clone();
        for batch in &batches {
            let refs: Vec<&DatasetRecord> =
                batch.iter().map(|&i| train_records[i]).collect();
            let (loss, grads) =
                batch_gradient(&refs, &params, model, trimmed, config.force_scale)?;
            if !loss.is_finite() {
                diverged_at = Some(epoch);
                params = last_good;
                break 'epochs;
            }
            sse += loss * refs.len() as f64;
            count += refs.len();
            last_good = params.clone();
            adamw_step(
                &mut params,
                &grads,
                &mut state,
                lr,
                config.weight_decay,
                &trainable,
            )?;
        }
        let train_loss = sse / count as f64;
        let val_loss = if val_refs.is_empty() {
            train_loss
        } else {
            evaluate_loss(&val_refs, &params, model, trimmed, config.force_scale)?
        };
        if !val_loss.is_finite() {
            diverged_at = Some(epoch);
            params = last_good;
            break;
        }
        if val_loss < best_val_loss {
            best_val_loss = val_loss;
            best_params = params.clone();
        }
        let stats = EpochStats {
            epoch,
            train_loss,
            val_loss,
            lr,
            wall_seconds: start.elapsed().as_secs_f64(),
        };
        on_epoch(&stats);
        history.push(stats);
    }

    Ok(TrainOutcome {
        final_params: params,
        best_params,
        best_val_loss,
        history,
        diverged_at,
        batching_fallback,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::surrogate::build_trimmed_graph;

    fn tiny_model() -> (ModelConfig, TrimmedGraph) {
        let config = ModelConfig {
            embed_width: 4,
            n_rbf: 4,
            n_extra: 2,
            ..ModelConfig::small(6)
        };
        let trimmed = build_trimmed_graph(&config).unwrap();
        (config, trimmed)
    }

    fn synthetic_records(n: usize, model: &ModelConfig, unit_size: usize) -> Vec<DatasetRecord> {
        (0..n)
            .map(|i| DatasetRecord {
                cluster: crate::mbd::test_cluster(model.n_cut, 100 + i as u64, 4.0),
                target_force: [
                    1e-4 * (i as f64 + 1.0),
                    -2e-4 * (i as f64),
                    3e-5 * (i as f64),
                ],
                unit_id: (i / unit_size) as u32,
                source: (i % 2) as u32,
            })
            .collect()
    }

    #[test]
    fn force_loss_examples() {
        let t = [[0.0; 3]];
        assert_eq!(force_loss(&t, &t).unwrap(), 0.0);
        assert_eq!(force_loss(&[[1.0, 0.0, 0.0]], &t).unwrap(), 1.0);
        let p1 = [[1.0, 2.0, -1.0], [0.5, 0.0, 0.0]];
        let tg = [[0.0; 3], [0.0; 3]];
        let p2 = [[2.0, 4.0, -2.0], [1.0, 0.0, 0.0]];
        assert!(
            (force_loss(&p2, &tg).unwrap() - 4.0 * force_loss(&p1, &tg).unwrap()).abs() < 1e-12
        );
        assert!(matches!(force_loss(&[], &[]), Err(Error::EmptyBatch)));
    }

    #[test]
    fn unit_batches_keep_units_whole() {
        let (model, _) = tiny_model();
        // 36 PE records: 12 units of 3 atoms, batch 36 -> one batch of 12 units.
        let records = synthetic_records(36, &model, 3);
        let (batches, fell_back) = unit_specific_batches(&records, 9, 1, 0);
        assert!(!fell_back);
        assert_eq!(batches.len(), 4);
        let mut seen = vec![false; records.len()];
        for batch in &batches {
            assert_eq!(batch.len(), 9);
            // Units unbroken: each batch's unit_id multiset has 3 of each.
            let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
            for &i in batch {
                assert!(!std::mem::replace(&mut seen[i], true), "duplicate record");
                *counts.entry(records[i].unit_id).or_default() += 1;
            }
            assert!(counts.values().all(|&c| c == 3));
        }
        assert!(seen.iter().all(|&s| s), "partition covers every record");
    }

    #[test]
    fn unit_batches_fall_back_on_indivisible_size() {
        let (model, _) = tiny_model();
        let records = synthetic_records(12, &model, 3);
        let (batches, fell_back) = unit_specific_batches(&records, 4, 1, 0);
        assert!(fell_back);
        let total: usize = batches.iter().map(|b| b.len()).sum();
        assert_eq!(total, 12);
    }

    #[test]
    fn both_modes_cover_the_same_multiset() {
        let (model, _) = tiny_model();
        let records = synthetic_records(18, &model, 3);
        let normal: Vec<usize> = normal_batches(18, 6, 5, 2).into_iter().flatten().collect();
        let (unit, _) = unit_specific_batches(&records, 6, 5, 2);
        let unit: Vec<usize> = unit.into_iter().flatten().collect();
        let mut a = normal;
        let mut b = unit;
        a.sort_unstable();
        b.sort_unstable();
        assert_eq!(a, b);
    }

    #[test]
    fn adamw_update_rules() {
        let (model, _) = tiny_model();
        let mut params = ModelParams::init(&model, 3).unwrap();
        let reference = params.clone();
        let trainable = ModelParams::trainable_names(&model);
        let zero = params.set.zeros_like();
        let mut state = OptimizerState::new(&params);
        // Zero gradient, zero decay: unchanged.
        adamw_step(&mut params, &zero, &mut state, 0.1, 0.0, &trainable).unwrap();
        assert_eq!(params, reference);
        // Zero gradient, decay: w * (1 - lr * wd). The eps term adds a
        // negligible m_hat / eps = 0 contribution.
        let mut state = OptimizerState::new(&params);
        adamw_step(&mut params, &zero, &mut state, 0.1, 0.5, &trainable).unwrap();
        for (name, buf) in reference.set.iter() {
            if !trainable.contains(&name) {
                continue;
            }
            for (after, before) in params.set.get(name).unwrap().data.iter().zip(&buf.data) {
                assert!((after - before * (1.0 - 0.1 * 0.5)).abs() < 1e-14);
            }
        }
        // First step with a gradient moves each coordinate by about
        // -lr * sign(g).
        let mut params = ModelParams::init(&model, 3).unwrap();
        let before = params.set.get("proj_w2").unwrap().data.clone();
        let mut grads = params.set.zeros_like();
        for (i, g) in grads.get_mut("proj_w2").unwrap().data.iter_mut().enumerate() {
            *g = if i % 2 == 0 { 0.3 } else { -0.7 };
        }
        let mut state = OptimizerState::new(&params);
        adamw_step(&mut params, &grads, &mut state, 0.01, 0.0, &trainable).unwrap();
        for (i, (after, before)) in params
            .set
            .get("proj_w2")
            .unwrap()
            .data
            .iter()
            .zip(&before)
            .enumerate()
        {
            let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
            assert!((after - (before - 0.01 * sign)).abs() < 1e-6, "index {i}");
        }
        // Non-finite gradient names the offending tensor.
        let mut grads = params.set.zeros_like();
        grads.get_mut("filter_w1").unwrap().data[0] = f64::NAN;
        let err = adamw_step(&mut params, &grads, &mut state, 0.01, 0.0, &trainable);
        assert!(matches!(err, Err(Error::NonFinite(name)) if name == "filter_w1"));
    }

    /// The reverse-over-forward batch gradient against finite differences
    /// of the batch loss, every tensor.
    #[test]
    fn batch_gradient_matches_fd() {
        let (model, trimmed) = tiny_model();
        let mut params = ModelParams::init(&model, 11).unwrap();
        // Fresh initializations give forces (and hence gradients) far below
        // what FD of the loss can resolve; inflate the weights so every
        // tensor's gradient clears the FD noise floor.
        for (_, buf) in params.set.iter_mut() {
            if buf.rows > 1 {
                for v in buf.data.iter_mut() {
                    *v *= 3.0;
                }
            }
        }
        let records = synthetic_records(3, &model, 3);
        let refs: Vec<&DatasetRecord> = records.iter().collect();
        let scale = 1e3;
        let (_, grads) = batch_gradient(&refs, &params, &model, &trimmed, scale).unwrap();
        // FD of the loss resolves components down to about 1e-3 of the
        // dominant gradient scale; smaller tensors are covered by the
        // force-FD oracle in small_tensor_gradients_match_force_fd.
        let global_max = grads
            .iter()
            .flat_map(|(_, b)| b.data.iter())
            .fold(0.0f64, |m, v| m.max(v.abs()));
        let names: Vec<String> = params.set.iter().map(|(n, _)| n.to_string()).collect();
        for name in names {
            let base = params.set.get(&name).unwrap().data.clone();
            let loss_at = |data: &[f64]| {
                let mut p = params.clone();
                p.set.get_mut(&name).unwrap().data = data.to_vec();
                let mut preds = Vec::new();
                let mut targets = Vec::new();
                for r in &records {
                    preds.push(
                        crate::surrogate::predict_force(&r.cluster, &p, &model, &trimmed)
                            .unwrap(),
                    );
                    targets.push([
                        r.target_force[0] * scale,
                        r.target_force[1] * scale,
                        r.target_force[2] * scale,
                    ]);
                }
                force_loss(&preds, &targets).unwrap()
            };
            let analytic = &grads.get(&name).unwrap().data;
            let floor = 1e-3 * global_max;
            let mut best = f64::INFINITY;
            for step in [2e-3, 1e-3] {
                // Richardson pair removes the leading step^2 truncation.
                let fd_h = crate::diff::fd_gradient(&mut |p: &[f64]| loss_at(p), &base, step);
                let fd_h2 =
                    crate::diff::fd_gradient(&mut |p: &[f64]| loss_at(p), &base, step / 2.0);
                let worst = analytic
                    .iter()
                    .zip(fd_h.iter().zip(&fd_h2))
                    .map(|(a, (f1, f2))| {
                        let f = (4.0 * f2 - f1) / 3.0;
                        (a - f).abs() / a.abs().max(f.abs()).max(floor)
                    })
                    .fold(0.0f64, f64::max);
                best = best.min(worst);
            }
            assert!(
                best < 1e-4,
                "tensor '{name}': rel {best}, tensor max {}, global max {global_max}",
                analytic.iter().fold(0.0f64, |m, v| m.max(v.abs()))
            );
        }
    }

    #[test]
    fn zero_lr_zero_decay_is_identity() {
        let (model, trimmed) = tiny_model();
        let params = ModelParams::init(&model, 7).unwrap();
        let records = synthetic_records(8, &model, 2);
        let config = TrainConfig {
            epochs: 1,
            batch_size: 4,
            lr_initial: 1e-30,
            lr_final: 1e-30,
            weight_decay: 0.0,
            val_fraction: 0.0,
            ..TrainConfig::default()
        };
        let out = train(&records, params.clone(), &model, &trimmed, &config, |_| {}).unwrap();
        // lr cannot be exactly zero (validated positive); at 1e-30 the
        // update is below f64 resolution of the parameters.
        for (name, buf) in params.set.iter() {
            let after = out.final_params.set.get(name).unwrap();
            for (a, b) in after.data.iter().zip(&buf.data) {
                assert!((a - b).abs() <= 1e-25, "{name}");
            }
        }
    }

    #[test]
    fn training_is_deterministic_and_learns() {
        let (model, trimmed) = tiny_model();
        let params = ModelParams::init(&model, 7).unwrap();
        let records = synthetic_records(12, &model, 3);
        let config = TrainConfig {
            epochs: 8,
            batch_size: 6,
            lr_initial: 1e-3,
            lr_final: 5e-4,
            lr_switch_epoch: 4,
            weight_decay: 0.0,
            val_fraction: 0.25,
            seed: 9,
            batching_mode: BatchingMode::UnitSpecific,
            ..TrainConfig::default()
        };
        let run = || {
            train(&records, params.clone(), &model, &trimmed, &config, |_| {}).unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a.final_params, b.final_params, "bit-identical per seed");
        assert_eq!(a.history.len(), 8);
        assert!(a.history[0].lr == 1e-3 && a.history[7].lr == 5e-4);
        let first = a.history.first().unwrap().train_loss;
        let last = a.history.last().unwrap().train_loss;
        assert!(last < first, "loss should drop: {first} -> {last}");
        assert!(a.diverged_at.is_none());
    }

    #[test]
    fn divergence_aborts_with_last_good_params() {
        let (model, trimmed) = tiny_model();
        let params = ModelParams::init(&model, 7).unwrap();
        let mut records = synthetic_records(6, &model, 3);
        // An absurd target with an absurd learning rate blows the loss up
        // within a few steps.
        for r in records.iter_mut() {
            r.target_force = [1e150, 0.0, 0.0];
        }
        let config = TrainConfig {
            epochs: 20,
            batch_size: 3,
            lr_initial: 1e10,
            val_fraction: 0.0,
            weight_decay: 0.0,
            ..TrainConfig::default()
        };
        let out = train(&records, params, &model, &trimmed, &config, |_| {}).unwrap();
        assert!(out.diverged_at.is_some());
        for (_, buf) in out.final_params.set.iter() {
            assert!(buf.data.iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn validation_split_is_stratified_and_reproducible() {
        let (model, _) = tiny_model();
        let records = synthetic_records(20, &model, 2);
        let (t1, v1) = split_validation(&records, 0.2, 3);
        let (t2, v2) = split_validation(&records, 0.2, 3);
        assert_eq!((&t1, &v1), (&t2, &v2));
        assert_eq!(t1.len() + v1.len(), 20);
        // Sources are split evenly: 10 records each, 2 reserved per source.
        for source in [0u32, 1] {
            let n = v1.iter().filter(|&&i| records[i].source == source).count();
            assert_eq!(n, 2);
        }
        let (_, v3) = split_validation(&records, 0.2, 4);
        assert_ne!(v1, v3, "different seed, different split");
    }
    #[test]
    fn small_tensor_gradients_match_force_fd() {
        // Tensors whose gradients sit far below the global scale (the
        // filter biases at this initialization) get a tighter oracle:
        // dL/dtheta assembled from central FD of the force itself.
        let (model, trimmed) = tiny_model();
        let params = ModelParams::init(&model, 11).unwrap();
        let records = synthetic_records(3, &model, 3);
        let refs: Vec<&DatasetRecord> = records.iter().collect();
        let scale = 1e3;
        let (_, grads) = batch_gradient(&refs, &params, &model, &trimmed, scale).unwrap();
        let b = refs.len() as f64;
        for name in ["filter_b2", "filter_b1"] {
            let analytic = &grads.get(name).unwrap().data;
            for i in 0..analytic.len() {
                let mut dl = 0.0;
                for r in &records {
                    let h = 1e-6;
                    let mut pp = params.clone();
                    pp.set.get_mut(name).unwrap().data[i] += h;
                    let fp =
                        crate::surrogate::predict_force(&r.cluster, &pp, &model, &trimmed)
                            .unwrap();
                    pp.set.get_mut(name).unwrap().data[i] -= 2.0 * h;
                    let fm =
                        crate::surrogate::predict_force(&r.cluster, &pp, &model, &trimmed)
                            .unwrap();
                    let f0 =
                        crate::surrogate::predict_force(&r.cluster, &params, &model, &trimmed)
                            .unwrap();
                    for k in 0..3 {
                        let df = (fp[k] - fm[k]) / (2.0 * h);
                        let resid = f0[k] - r.target_force[k] * scale;
                        dl += 2.0 / b * resid * df;
                    }
                }
                let rel = (analytic[i] - dl).abs() / analytic[i].abs().max(dl.abs()).max(1e-12);
                assert!(rel < 1e-6, "{name}[{i}]: {} vs {dl}, rel {rel}", analytic[i]);
            }
        }
    }

}
