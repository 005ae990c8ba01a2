//! Trimmed graph-convolutional surrogate for the center-atom dispersion
//! force: species embeddings, trainable Gaussian distance encoding, one
//! continuous-filter interaction block over a trimmed edge set, and a
//! per-atom projection summed to an energy-like latent scalar. The force
//! is the negative input gradient of that scalar; Hessian rows come from
//! a dual-number pass over the same tape.

mod checkpoint;

pub use checkpoint::{load_checkpoint, save_checkpoint};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::diff::{Dual, Graph, NodeId, ParameterSet, Real, ValueBuffer};
use crate::geometry::Cluster;
use crate::{Error, Result, BOHR_PER_ANGSTROM};

/// Hyperparameters fixed at model creation.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// Embedding width P.
    pub embed_width: usize,
    pub n_rbf: usize,
    /// Nearest-neighbor count carrying extra connections.
    pub p: usize,
    /// Extra-connection window per near neighbor.
    pub n_extra: usize,
    /// Cluster size; atom 0 is the center.
    pub n_cut: usize,
    pub rbf_trainable: bool,
    /// Initial Gaussian coefficient, Bohr^-2.
    pub rbf_gamma_init: f64,
    /// RBF centers initialized uniformly spaced on [0, rbf_mu_max], Bohr.
    pub rbf_mu_max: f64,
    /// Hidden width of the output projection (the final width is 1).
    pub proj_hidden: usize,
    /// Targets are multiplied by this during training; model output lives
    /// in the scaled domain.
    pub force_scale: f64,
    pub n_species: usize,
}

impl ModelConfig {
    /// Full-scale defaults: P = 32, 100 RBFs, p = 2, n_extra = 50,
    /// n_cut = 1000, gamma = 10 / A^2, mu on [0, 15 A], scale 10^3.
    pub fn reference_default() -> Self {
        Self {
            embed_width: 32,
            n_rbf: 100,
            p: 2,
            n_extra: 50,
            n_cut: 1000,
            rbf_trainable: true,
            rbf_gamma_init: 10.0 / (BOHR_PER_ANGSTROM * BOHR_PER_ANGSTROM),
            rbf_mu_max: 15.0 * BOHR_PER_ANGSTROM,
            proj_hidden: 16,
            force_scale: 1e3,
            n_species: 3,
        }
    }

    /// Same shape at test-friendly sizes.
    pub fn small(n_cut: usize) -> Self {
        Self {
            embed_width: 16,
            n_rbf: 16,
            p: 2,
            n_extra: 3,
            n_cut,
            ..Self::reference_default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("embed_width", self.embed_width),
            ("n_rbf", self.n_rbf),
            ("n_cut", self.n_cut),
            ("proj_hidden", self.proj_hidden),
            ("n_species", self.n_species),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::InvalidParam {
                    name: name.into(),
                    reason: "must be positive".into(),
                });
            }
        }
        if self.p + 1 + self.n_extra > self.n_cut {
            return Err(Error::InvalidParam {
                name: "n_extra".into(),
                reason: format!(
                    "p + 1 + n_extra = {} exceeds n_cut = {}",
                    self.p + 1 + self.n_extra,
                    self.n_cut
                ),
            });
        }
        for (name, v) in [
            ("rbf_gamma_init", self.rbf_gamma_init),
            ("rbf_mu_max", self.rbf_mu_max),
            ("force_scale", self.force_scale),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParam {
                    name: name.into(),
                    reason: format!("must be positive and finite, got {v}"),
                });
            }
        }
        Ok(())
    }
}

/// Undirected edge set of the trimmed connection graph, 0-based with the
/// center at index 0, each pair stored as (low, high), sorted.
#[derive(Debug, Clone, PartialEq)]
pub struct TrimmedGraph {
    pub edges: Vec<(usize, usize)>,
}

/// Center-to-all edges plus, for the p nearest neighbors i, edges to the
/// neighbors within a window of n_extra atoms past i in distance order.
pub fn build_trimmed_graph(config: &ModelConfig) -> Result<TrimmedGraph> {
    config.validate()?;
    let n = config.n_cut;
    let mut set = std::collections::BTreeSet::new();
    for j in 1..n {
        set.insert((0usize, j));
    }
    // 0-based translation of the 1-based window {i in 2..=p+1, j in
    // 2..=min(i + n_extra, n_cut)}.
    for i in 1..=config.p {
        let hi = (i + 1 + config.n_extra).min(n);
        for j in 1..hi {
            if j != i {
                set.insert((i.min(j), i.max(j)));
            }
        }
    }
    Ok(TrimmedGraph {
        edges: set.into_iter().collect(),
    })
}

/// Canonical tensor order; the checkpoint format and the optimizer state
/// both follow it.
fn tensor_specs(c: &ModelConfig) -> Vec<(&'static str, usize, usize)> {
    let p = c.embed_width;
    let h = c.proj_hidden;
    vec![
        ("embedding", c.n_species, p),
        ("rbf_mu", 1, c.n_rbf),
        ("rbf_gamma", 1, c.n_rbf),
        ("filter_w1", c.n_rbf, p),
        ("filter_b1", 1, p),
        ("filter_w2", p, p),
        ("filter_b2", 1, p),
        ("atomwise_pre_w", p, p),
        ("post_w1", p, p),
        ("post_b1", 1, p),
        ("post_w2", p, p),
        ("post_b2", 1, p),
        ("proj_w1", p, h),
        ("proj_b1", 1, h),
        ("proj_w2", h, 1),
        ("proj_b2", 1, 1),
    ]
}

/// All trainable tensors of the surrogate.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub set: ParameterSet,
}

impl ModelParams {
    /// Deterministic initialization: embeddings uniform in [-1/sqrt(P),
    /// 1/sqrt(P)], dense weights uniform fan-in scaled, biases zero, RBF
    /// centers uniformly spaced with constant gamma.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut set = ParameterSet::new();
        for (name, rows, cols) in tensor_specs(config) {
            let data = match name {
                "embedding" => {
                    let bound = 1.0 / (config.embed_width as f64).sqrt();
                    uniform(&mut rng, rows * cols, bound)
                }
                "rbf_mu" => (0..cols)
                    .map(|k| config.rbf_mu_max * k as f64 / (cols - 1).max(1) as f64)
                    .collect(),
                "rbf_gamma" => vec![config.rbf_gamma_init; cols],
                _ if rows == 1 => vec![0.0; cols], // biases
                _ => {
                    let bound = (1.0 / rows as f64).sqrt();
                    uniform(&mut rng, rows * cols, bound)
                }
            };
            set.push(name, ValueBuffer::new(rows, cols, data));
        }
        Ok(Self { set })
    }

    /// Tensors updated by the optimizer; excludes the RBF basis when it is
    /// frozen.
    pub fn trainable_names(config: &ModelConfig) -> Vec<&'static str> {
        tensor_specs(config)
            .iter()
            .map(|&(n, _, _)| n)
            .filter(|&n| config.rbf_trainable || (n != "rbf_mu" && n != "rbf_gamma"))
            .collect()
    }

    /// Shape check against a config; used after checkpoint load.
    pub fn validate_shapes(&self, config: &ModelConfig) -> Result<()> {
        for (name, rows, cols) in tensor_specs(config) {
            let buf = self.set.get(name).ok_or_else(|| Error::ShapeMismatch {
                context: format!("missing tensor '{name}'"),
                expected: vec![rows, cols],
                got: vec![],
            })?;
            if (buf.rows, buf.cols) != (rows, cols) {
                return Err(Error::ShapeMismatch {
                    context: format!("tensor '{name}'"),
                    expected: vec![rows, cols],
                    got: vec![buf.rows, buf.cols],
                });
            }
            if buf.data.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(name.to_string()));
            }
        }
        Ok(())
    }
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, bound: f64) -> Vec<f64> {
    (0..n).map(|_| (rng.gen::<f64>() * 2.0 - 1.0) * bound).collect()
}

/// Tape for one cluster with handles to the nodes gradients are read from.
pub(crate) struct EnergyGraph<S: Real> {
    pub graph: Graph<S>,
    pub pos: NodeId,
    pub param_nodes: Vec<(&'static str, NodeId)>,
    pub energy: NodeId,
}

fn check_cluster(cluster: &Cluster, config: &ModelConfig) -> Result<()> {
    if cluster.len() != config.n_cut {
        return Err(Error::ShapeMismatch {
            context: "cluster size".into(),
            expected: vec![config.n_cut],
            got: vec![cluster.len()],
        });
    }
    for &sp in &cluster.species {
        if sp.0 as usize >= config.n_species {
            return Err(Error::UnknownSymbol(format!("species code {}", sp.0)));
        }
    }
    Ok(())
}

/// Build and run the forward tape. `positions` is the flattened [n, 3]
/// coordinate block, already lifted to S (dual callers seed tangents here).
pub(crate) fn build_energy_graph<S: Real>(
    positions: Vec<S>,
    species_codes: &[usize],
    params: &ModelParams,
    config: &ModelConfig,
    trimmed: &TrimmedGraph,
) -> EnergyGraph<S> {
    let n = config.n_cut;
    debug_assert_eq!(positions.len(), n * 3);
    let mut g: Graph<S> = Graph::new();
    let pos = g.input(n, 3, positions);
    let mut param_nodes = Vec::new();
    let mut node = |g: &mut Graph<S>, name: &'static str| -> NodeId {
        let id = g.input_buffer(params.set.get(name).expect("tensor present"));
        param_nodes.push((name, id));
        id
    };
    let embedding = node(&mut g, "embedding");
    let rbf_mu = node(&mut g, "rbf_mu");
    let rbf_gamma = node(&mut g, "rbf_gamma");
    let filter_w1 = node(&mut g, "filter_w1");
    let filter_b1 = node(&mut g, "filter_b1");
    let filter_w2 = node(&mut g, "filter_w2");
    let filter_b2 = node(&mut g, "filter_b2");
    let pre_w = node(&mut g, "atomwise_pre_w");
    let post_w1 = node(&mut g, "post_w1");
    let post_b1 = node(&mut g, "post_b1");
    let post_w2 = node(&mut g, "post_w2");
    let post_b2 = node(&mut g, "post_b2");
    let proj_w1 = node(&mut g, "proj_w1");
    let proj_b1 = node(&mut g, "proj_b1");
    let proj_w2 = node(&mut g, "proj_w2");
    let proj_b2 = node(&mut g, "proj_b2");

    // Atom features from the species embedding.
    let x0 = g.gather_rows(embedding, species_codes);

    // One filter evaluation per undirected edge.
    let d = g.edge_lengths(pos, &trimmed.edges);
    let e = g.rbf(d, rbf_mu, rbf_gamma);
    let w = g.linear(e, filter_w1, Some(filter_b1));
    let w = g.ssp(w);
    let w = g.linear(w, filter_w2, Some(filter_b2));

    // Messages flow both ways across each edge with the same filter value.
    let m = trimmed.edges.len();
    let mut recv = Vec::with_capacity(2 * m);
    let mut send = Vec::with_capacity(2 * m);
    let mut wdup_idx = Vec::with_capacity(2 * m);
    for (ei, &(a, b)) in trimmed.edges.iter().enumerate() {
        recv.push(a);
        send.push(b);
        wdup_idx.push(ei);
        recv.push(b);
        send.push(a);
        wdup_idx.push(ei);
    }
    let h = g.linear(x0, pre_w, None);
    let h_send = g.gather_rows(h, &send);
    let w_dup = g.gather_rows(w, &wdup_idx);
    let msg = g.mul(w_dup, h_send);
    let agg = g.scatter_add_rows(msg, &recv, n);

    // x1 = x0 + conv; x2 = x1 + Dense(ssp(Dense(x1))).
    let x1 = g.add(x0, agg);
    let t = g.linear(x1, post_w1, Some(post_b1));
    let t = g.ssp(t);
    let t = g.linear(t, post_w2, Some(post_b2));
    let x2 = g.add(x1, t);

    // Projection to one scalar per atom, summed.
    let pr = g.linear(x2, proj_w1, Some(proj_b1));
    let pr = g.ssp(pr);
    let pr = g.linear(pr, proj_w2, Some(proj_b2));
    let energy = g.sum_all(pr);

    EnergyGraph {
        graph: g,
        pos,
        param_nodes,
        energy,
    }
}

fn species_codes(cluster: &Cluster) -> Vec<usize> {
    cluster.species.iter().map(|sp| sp.0 as usize).collect()
}

fn flat_positions(cluster: &Cluster) -> Vec<f64> {
    cluster.positions.iter().flat_map(|p| *p).collect()
}

/// Energy-like latent scalar; not a physical observable, exposed for
/// testing and as the quantity the force differentiates.
pub fn forward_energy(
    cluster: &Cluster,
    params: &ModelParams,
    config: &ModelConfig,
    trimmed: &TrimmedGraph,
) -> Result<f64> {
    check_cluster(cluster, config)?;
    let eg = build_energy_graph(
        flat_positions(cluster),
        &species_codes(cluster),
        params,
        config,
        trimmed,
    );
    Ok(eg.graph.scalar(eg.energy))
}

/// Predicted force on the center atom in the scaled training domain:
/// F = -dE/dr_0. Divide by `config.force_scale` for Hartree/Bohr.
pub fn predict_force(
    cluster: &Cluster,
    params: &ModelParams,
    config: &ModelConfig,
    trimmed: &TrimmedGraph,
) -> Result<[f64; 3]> {
    check_cluster(cluster, config)?;
    let eg = build_energy_graph(
        flat_positions(cluster),
        &species_codes(cluster),
        params,
        config,
        trimmed,
    );
    let grads = eg.graph.backward(eg.energy);
    let gp = grads.wrt(eg.pos);
    Ok([-gp[0], -gp[1], -gp[2]])
}

/// H_1j = dF_center / dr_j, one dual-number pass per displacement
/// component of atom j. `row[a][c]` = dF^a / dr_j^c.
pub fn predict_hessian_row(
    cluster: &Cluster,
    params: &ModelParams,
    config: &ModelConfig,
    trimmed: &TrimmedGraph,
    j: usize,
) -> Result<[[f64; 3]; 3]> {
    check_cluster(cluster, config)?;
    if j >= cluster.len() {
        return Err(Error::AtomIndex {
            index: j,
            len: cluster.len(),
        });
    }
    let base = flat_positions(cluster);
    let codes = species_codes(cluster);
    let mut row = [[0.0; 3]; 3];
    for c in 0..3 {
        let positions: Vec<Dual> = base
            .iter()
            .enumerate()
            .map(|(i, &v)| Dual::new(v, if i == j * 3 + c { 1.0 } else { 0.0 }))
            .collect();
        let eg = build_energy_graph(positions, &codes, params, config, trimmed);
        let grads = eg.graph.backward(eg.energy);
        let gp = grads.wrt(eg.pos);
        for a in 0..3 {
            row[a][c] = -gp[a].t;
        }
    }
    Ok(row)
}

/// All rows H_1j at once via the symmetry H_1j = d^2 E / dr_0 dr_j: three
/// dual passes seeded on the center instead of three per atom.
pub fn hessian_rows_from_center(
    cluster: &Cluster,
    params: &ModelParams,
    config: &ModelConfig,
    trimmed: &TrimmedGraph,
) -> Result<Vec<[[f64; 3]; 3]>> {
    check_cluster(cluster, config)?;
    let base = flat_positions(cluster);
    let codes = species_codes(cluster);
    let n = cluster.len();
    let mut rows = vec![[[0.0; 3]; 3]; n];
    for a in 0..3 {
        let positions: Vec<Dual> = base
            .iter()
            .enumerate()
            .map(|(i, &v)| Dual::new(v, if i == a { 1.0 } else { 0.0 }))
            .collect();
        let eg = build_energy_graph(positions, &codes, params, config, trimmed);
        let grads = eg.graph.backward(eg.energy);
        let gp = grads.wrt(eg.pos);
        // row[a][c] of H_1j equals -d(dE/dr_j^c)/dr_0^a by symmetry of
        // second derivatives, with the force sign folded in.
        for (j, row) in rows.iter_mut().enumerate() {
            for c in 0..3 {
                row[a][c] = -gp[j * 3 + c].t;
            }
        }
    }
    Ok(rows)
}

/// Frobenius norm, the condensed scalar per Hessian block.
pub fn condensed(h: &[[f64; 3]; 3]) -> f64 {
    h.iter()
        .flat_map(|r| r.iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt()
}
