//! Layer-wise neuron alignment and weight-space fusion.
//!
//! Hidden layers are visited from the input side. For each one, the source
//! model's incoming-weight vectors (already expressed in the target's ordering
//! of the previous layer) are matched to the target's by an optimal coupling,
//! the coupling is turned into a permutation, and the permutation is applied
//! to the source without changing its function. The output layer keeps its
//! order; only its incoming columns follow the last hidden permutation.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matrix::Matrix;
use crate::model::{Mlp, ModelError};
use crate::ot::{
    cost_matrix, coupling_to_permutation, coupling_to_permutation_repaired, emd, solve_exact,
    solve_sinkhorn, solve_sinkhorn_log, Coupling, DiscreteDistribution, GroundMetric, OtError,
    Permutation, SinkhornParams,
};

#[derive(Debug, Error)]
pub enum FusionError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("hidden layer {layer}: {source}")]
    Ot {
        layer: usize,
        #[source]
        source: OtError,
    },
    #[error("average_weight must lie in [0, 1], got {0}")]
    InvalidWeight(f64),
    #[error("fusing needs at least two models, got {0}")]
    TooFewModels(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum AlignmentSolver {
    Exact,
    /// Entropic coupling; the scaling domain is tried first and the log domain
    /// takes over if the kernel underflows.
    Sinkhorn(SinkhornParams),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionConfig {
    pub metric: GroundMetric,
    pub solver: AlignmentSolver,
    /// Append each neuron's bias to its incoming-weight vector before costing.
    pub include_bias_in_cost: bool,
    /// Fraction of the fused parameters taken from the target model.
    pub average_weight: f64,
    /// Replace the source layer by the barycentric projection `N * P^T * S`
    /// instead of permuting it. Not function-preserving.
    pub soft_alignment: bool,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            metric: GroundMetric::Euclidean,
            solver: AlignmentSolver::Exact,
            include_bias_in_cost: true,
            average_weight: 0.5,
            soft_alignment: false,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<(), FusionError> {
        if !(0.0..=1.0).contains(&self.average_weight) {
            return Err(FusionError::InvalidWeight(self.average_weight));
        }
        Ok(())
    }
}

/// The source model re-expressed in the target's neuron order.
#[derive(Debug, Clone)]
pub struct AlignmentResult {
    pub aligned_source: Mlp,
    /// One per hidden layer, `mapping[j]` = source neuron placed at target position `j`.
    pub permutations: Vec<Permutation>,
    /// EMD of the optimal coupling, one per hidden layer.
    pub layer_emds: Vec<f64>,
    pub couplings: Vec<Coupling>,
}

fn solve_layer(
    config: &FusionConfig,
    cost: &crate::ot::CostMatrix,
    n: usize,
) -> Result<Coupling, OtError> {
    let mu = DiscreteDistribution::uniform(n);
    match config.solver {
        AlignmentSolver::Exact => solve_exact(cost, &mu, &mu),
        AlignmentSolver::Sinkhorn(params) => match solve_sinkhorn(cost, &mu, &mu, params) {
            Ok(sol) => Ok(sol.coupling),
            Err(OtError::SinkhornUnderflow { .. }) => {
                Ok(solve_sinkhorn_log(cost, &mu, &mu, params)?.coupling)
            }
            Err(e) => Err(e),
        },
    }
}

/// Barycentric projection of hidden layer `layer_index` with transport map `t`
/// (`n x n`, rows indexed by target position).
fn project_layer(model: &Mlp, layer_index: usize, t: &Matrix) -> Mlp {
    let mut out = model.clone();
    let incoming = &model.layers()[layer_index - 1];
    let outgoing = &model.layers()[layer_index];
    let layers = out.layers_mut();
    layers[layer_index - 1].weights = t.matmul(incoming.weights());
    layers[layer_index - 1].biases = (0..t.rows())
        .map(|j| {
            t.row(j)
                .iter()
                .zip(incoming.biases())
                .map(|(a, b)| a * b)
                .sum()
        })
        .collect();
    layers[layer_index].weights = outgoing.weights().matmul(&t.transpose());
    out
}

/// Align `source` to `target` hidden layer by hidden layer.
pub fn align_neurons(
    target: &Mlp,
    source: &Mlp,
    config: &FusionConfig,
) -> Result<AlignmentResult, FusionError> {
    config.validate()?;
    target.same_architecture(source)?;
    let hidden = target.hidden_layer_count();
    let mut aligned = source.clone();
    let mut permutations = Vec::with_capacity(hidden);
    let mut layer_emds = Vec::with_capacity(hidden);
    let mut couplings = Vec::with_capacity(hidden);

    for layer in 1..=hidden {
        let ot_err = |source| FusionError::Ot { layer, source };
        let s_rows = aligned.layers()[layer - 1].incoming_vectors(config.include_bias_in_cost);
        let t_rows = target.layers()[layer - 1].incoming_vectors(config.include_bias_in_cost);
        let cost = cost_matrix(&s_rows, &t_rows, config.metric).map_err(ot_err)?;
        let n = s_rows.len();
        let coupling = solve_layer(config, &cost, n).map_err(ot_err)?;
        layer_emds.push(emd(&coupling, &cost).map_err(ot_err)?);

        let perm = match config.solver {
            AlignmentSolver::Exact => coupling_to_permutation(&coupling),
            AlignmentSolver::Sinkhorn(_) => coupling_to_permutation_repaired(&coupling),
        }
        .map_err(ot_err)?;

        aligned = if config.soft_alignment {
            let t = coupling.plan().transpose().map(|p| p * n as f64);
            project_layer(&aligned, layer, &t)
        } else {
            aligned.apply_hidden_permutation(layer, &perm)?
        };
        permutations.push(perm);
        couplings.push(coupling);
    }

    Ok(AlignmentResult {
        aligned_source: aligned,
        permutations,
        layer_emds,
        couplings,
    })
}

/// `w * target + (1 - w) * aligned_source`, with `w = config.average_weight`.
pub fn fuse_ot(target: &Mlp, source: &Mlp, config: &FusionConfig) -> Result<Mlp, FusionError> {
    let alignment = align_neurons(target, source, config)?;
    Ok(target.convex_combination(&alignment.aligned_source, config.average_weight)?)
}

/// Parameter-wise `w * a + (1 - w) * b` with no alignment.
pub fn fuse_naive(a: &Mlp, b: &Mlp, average_weight: f64) -> Result<Mlp, FusionError> {
    if !(0.0..=1.0).contains(&average_weight) {
        return Err(FusionError::InvalidWeight(average_weight));
    }
    Ok(a.convex_combination(b, average_weight)?)
}

/// Left fold of [`fuse_ot`]; step `k` (1-based) keeps weight `k / (k + 1)` on the
/// running fusion so every model contributes equally. `config.average_weight`
/// is ignored.
pub fn fuse_many(models: &[Mlp], config: &FusionConfig) -> Result<Mlp, FusionError> {
    if models.len() < 2 {
        return Err(FusionError::TooFewModels(models.len()));
    }
    let mut fused = models[0].clone();
    for (k, next) in models.iter().enumerate().skip(1) {
        let step = FusionConfig {
            average_weight: k as f64 / (k + 1) as f64,
            ..*config
        };
        fused = fuse_ot(&fused, next, &step)?;
    }
    Ok(fused)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{functional_distance, HiddenActivation, OutputActivation, ProbeSet};
    use crate::rng::seeded;
    use rand::Rng;

    fn net(sizes: &[usize], seed: u64) -> Mlp {
        let m = Mlp::glorot_seeded(
            sizes,
            HiddenActivation::Tanh,
            OutputActivation::Softmax,
            seed,
        )
        .unwrap();
        let mut rng = seeded(seed.wrapping_add(1000));
        let params: Vec<f64> = m
            .params()
            .iter()
            .map(|p| p + rng.gen_range(-0.05..0.05))
            .collect();
        m.with_params(&params).unwrap()
    }

    fn permute_all(m: &Mlp, seed: u64) -> (Mlp, Vec<Permutation>) {
        let mut rng = seeded(seed);
        let mut out = m.clone();
        let mut perms = Vec::new();
        for layer in 1..=m.hidden_layer_count() {
            let p = Permutation::random(m.layer_sizes()[layer], &mut rng);
            out = out.apply_hidden_permutation(layer, &p).unwrap();
            perms.push(p);
        }
        (out, perms)
    }

    #[test]
    fn self_alignment_is_trivial() {
        let m = net(&[5, 8, 6, 3], 1);
        let r = align_neurons(&m, &m, &FusionConfig::default()).unwrap();
        assert!(r.permutations.iter().all(Permutation::is_identity));
        assert!(r.layer_emds.iter().all(|&e| e == 0.0));
        assert_eq!(fuse_ot(&m, &m, &FusionConfig::default()).unwrap(), m);
    }

    #[test]
    fn recovers_inverse_permutations() {
        let m = net(&[5, 8, 6, 3], 2);
        let (permuted, perms) = permute_all(&m, 3);
        let r = align_neurons(&m, &permuted, &FusionConfig::default()).unwrap();
        for (found, applied) in r.permutations.iter().zip(&perms) {
            assert_eq!(found, &applied.inverse());
        }
        let diff = r
            .aligned_source
            .params()
            .iter()
            .zip(m.params())
            .fold(0.0f64, |acc, (a, b)| acc.max((a - b).abs()));
        assert!(diff <= 1e-12);
    }

    #[test]
    fn alignment_preserves_function() {
        let a = net(&[9, 64, 64, 2], 10);
        let b = net(&[9, 64, 64, 2], 11);
        let r = align_neurons(&a, &b, &FusionConfig::default()).unwrap();
        assert_eq!(r.permutations.len(), 2);
        assert!(r.layer_emds.iter().all(|&e| e >= 0.0));
        let probes = ProbeSet::standard(9, 5);
        assert!(functional_distance(&b, &r.aligned_source, &probes).unwrap() <= 1e-12);
    }

    #[test]
    fn ot_beats_naive_on_permuted_copy() {
        let m = net(&[4, 8, 2], 4);
        let (permuted, _) = permute_all(&m, 5);
        let probes = ProbeSet::standard(4, 6);
        let ot = fuse_ot(&m, &permuted, &FusionConfig::default()).unwrap();
        let naive = fuse_naive(&m, &permuted, 0.5).unwrap();
        assert!(functional_distance(&ot, &m, &probes).unwrap() <= 1e-12);
        assert!(functional_distance(&naive, &m, &probes).unwrap() > 0.0);
    }

    #[test]
    fn degenerate_weights() {
        let a = net(&[4, 8, 2], 7);
        let b = net(&[4, 8, 2], 8);
        let cfg = FusionConfig {
            average_weight: 1.0,
            ..Default::default()
        };
        assert_eq!(fuse_ot(&a, &b, &cfg).unwrap(), a);
        assert_eq!(fuse_naive(&a, &b, 0.0).unwrap(), b);
        assert_eq!(fuse_naive(&a, &a, 0.5).unwrap(), a);
        assert!(matches!(
            fuse_naive(&a, &b, 1.5),
            Err(FusionError::InvalidWeight(_))
        ));
    }

    #[test]
    fn architecture_mismatch_is_rejected() {
        let a = net(&[4, 8, 2], 1);
        let b = net(&[4, 7, 2], 1);
        assert!(matches!(
            align_neurons(&a, &b, &FusionConfig::default()),
            Err(FusionError::Model(ModelError::ArchitectureMismatch { .. }))
        ));
    }

    #[test]
    fn fuse_many_cases() {
        let m = net(&[4, 8, 6, 2], 12);
        let cfg = FusionConfig::default();
        assert!(matches!(
            fuse_many(std::slice::from_ref(&m), &cfg),
            Err(FusionError::TooFewModels(1))
        ));
        assert_eq!(
            fuse_many(&[m.clone(), m.clone(), m.clone()], &cfg).unwrap(),
            m
        );
        let other = net(&[4, 8, 6, 2], 13);
        assert_eq!(
            fuse_many(&[m.clone(), other.clone()], &cfg).unwrap(),
            fuse_ot(&m, &other, &cfg).unwrap()
        );
        let (p1, _) = permute_all(&m, 20);
        let (p2, _) = permute_all(&m, 21);
        let fused = fuse_many(&[m.clone(), p1, p2], &cfg).unwrap();
        assert!(functional_distance(&fused, &m, &ProbeSet::standard(4, 0)).unwrap() <= 1e-9);
    }

    #[test]
    fn sinkhorn_solver_recovers_permutation() {
        let m = net(&[4, 8, 2], 30);
        let (permuted, perms) = permute_all(&m, 31);
        let cfg = FusionConfig {
            solver: AlignmentSolver::Sinkhorn(SinkhornParams::default()),
            ..Default::default()
        };
        let r = align_neurons(&m, &permuted, &cfg).unwrap();
        assert_eq!(r.permutations[0], perms[0].inverse());
    }

    #[test]
    fn soft_alignment_matches_hard_on_vertices() {
        let m = net(&[4, 8, 6, 2], 40);
        let (permuted, _) = permute_all(&m, 41);
        let hard = align_neurons(&m, &permuted, &FusionConfig::default()).unwrap();
        let soft = align_neurons(
            &m,
            &permuted,
            &FusionConfig {
                soft_alignment: true,
                ..Default::default()
            },
        )
        .unwrap();
        let probes = ProbeSet::standard(4, 2);
        assert!(
            functional_distance(&hard.aligned_source, &soft.aligned_source, &probes).unwrap()
                <= 1e-12
        );
    }

    #[test]
    fn emds_invariant_under_common_permutation() {
        let a = net(&[4, 8, 2], 50);
        let b = net(&[4, 8, 2], 51);
        let p = Permutation::random(8, &mut seeded(52));
        let before = align_neurons(&a, &b, &FusionConfig::default())
            .unwrap()
            .layer_emds;
        let after = align_neurons(
            &a.apply_hidden_permutation(1, &p).unwrap(),
            &b.apply_hidden_permutation(1, &p).unwrap(),
            &FusionConfig::default(),
        )
        .unwrap()
        .layer_emds;
        assert!((before[0] - after[0]).abs() <= 1e-12);
    }
}
