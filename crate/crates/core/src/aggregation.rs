//! Model-averaging strategies: quality-aware weighting plus the naive,
//! sample-count (FedAVG), and server-momentum (FedAVG-M) baselines.
//!
//! The quality-aware path turns each client's per-sample loss spread into an
//! upper loss bound `b = μ + 2σ`, scores reliability as `q = softmax(1/b)`,
//! and averages models with `r = q ⊙ d / (qᵀ d)` where `d` holds the
//! clients' data shares. A high loss bound — noisy labels, bad local fit —
//! pushes a client's weight toward zero while the remaining weights
//! renormalize.
//!
//! Every strategy funnels through one weight-normalization helper built on
//! the compensated reductions in [`crate::numerics`], which keeps two
//! properties exact at the bit level: permuting clients never changes the
//! averaged model, and degenerate inputs collapse onto each other (equal
//! bounds reduce quality weighting to its data scores, equal counts reduce
//! sample-count weighting to the naive mean). The softmax normalization
//! itself cancels in `r`, so `exp(1/b - max)` feeds the helper directly;
//! with equal bounds every factor is exactly 1.0 and the reduction holds
//! without rounding slack.

use std::fmt;
use std::str::FromStr;

use crate::error::{Result, SplitFedError};
use crate::numerics::{compensated_ratio, compensated_sum, stable_mean, stable_sum};
use crate::params::ParamVector;

/// Smallest loss bound fed to `1/b`; a perfectly fit client (all losses
/// zero) must rank most reliable instead of dividing by zero.
pub const MIN_LOSS_BOUND: f64 = 1e-8;

/// Aggregation strategy, selected by name in the run configuration.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Strategy {
    Naive,
    FedAvg,
    FedAvgM,
    QaSplitFed,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [
        Strategy::Naive,
        Strategy::FedAvg,
        Strategy::FedAvgM,
        Strategy::QaSplitFed,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Naive => "naive",
            Strategy::FedAvg => "fedavg",
            Strategy::FedAvgM => "fedavg-m",
            Strategy::QaSplitFed => "qa-splitfed",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = SplitFedError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "naive" => Ok(Strategy::Naive),
            "fedavg" => Ok(Strategy::FedAvg),
            "fedavg-m" => Ok(Strategy::FedAvgM),
            "qa-splitfed" => Ok(Strategy::QaSplitFed),
            other => Err(SplitFedError::Config(format!(
                "unknown strategy {other:?}; expected naive | fedavg | fedavg-m | qa-splitfed"
            ))),
        }
    }
}

/// One client's model as frozen at its best local epoch: the client-side
/// parameters (front-end and back-end merged) and the server trunk as it
/// stood after that client's turn.
#[derive(Clone, Debug)]
pub struct ClientSnapshot {
    pub client_id: usize,
    pub client_params: ParamVector,
    pub server_params: ParamVector,
}

/// Which standard deviation the loss bound uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StdConvention {
    /// Divide by n — the epoch's losses are the whole population.
    Population,
    /// Divide by n－1; needs at least two samples.
    Sample,
}

impl Default for StdConvention {
    fn default() -> Self {
        StdConvention::Population
    }
}

/// Summary of one client's per-sample losses: mean, standard deviation, and
/// the upper bound `b = μ + 2σ` that drives quality weighting.
#[derive(Clone, Copy, Debug)]
pub struct LossStats {
    pub mean: f64,
    pub std: f64,
    pub bound: f64,
    pub sample_count: usize,
}

/// Computes the loss bound `μ + 2σ` over one client's per-sample losses.
pub fn loss_bound(losses: &[f64], convention: StdConvention) -> Result<LossStats> {
    if losses.is_empty() {
        return Err(SplitFedError::Data(
            "loss bound needs at least one sample loss".into(),
        ));
    }
    if let Some(&bad) = losses.iter().find(|v| !v.is_finite() || **v < 0.0) {
        return Err(SplitFedError::Data(format!(
            "loss bound needs finite nonnegative losses, got {bad}"
        )));
    }
    let n = losses.len();
    let mean = stable_mean(&mut losses.to_vec());
    let mut sq: Vec<f64> = losses.iter().map(|&v| (v - mean) * (v - mean)).collect();
    let ss = stable_sum(&mut sq);
    let std = match convention {
        StdConvention::Population => (ss / n as f64).sqrt(),
        StdConvention::Sample => {
            if n < 2 {
                return Err(SplitFedError::Data(
                    "sample standard deviation needs at least two losses".into(),
                ));
            }
            (ss / (n - 1) as f64).sqrt()
        }
    };
    Ok(LossStats { mean, std, bound: mean + 2.0 * std, sample_count: n })
}

/// Where a data-share vector comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScoreSource {
    /// Training sample counts per client.
    Training,
    /// Validation sample counts per client.
    Validation,
}

/// Per-client data shares `d_i = m_i / Σm`, summing to 1.
#[derive(Clone, Debug)]
pub struct DataScores {
    pub scores: Vec<f64>,
    pub source: ScoreSource,
}

/// Builds data shares from per-client sample counts.
pub fn data_scores(counts: &[usize], source: ScoreSource) -> Result<DataScores> {
    if counts.is_empty() {
        return Err(SplitFedError::Data("data scores need at least one client".into()));
    }
    if counts.iter().any(|&c| c == 0) {
        return Err(SplitFedError::Data(
            "every client must contribute at least one sample".into(),
        ));
    }
    let raw: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
    Ok(DataScores { scores: normalized_weights(&raw)?, source })
}

/// Per-client averaging weights; nonnegative and summing to 1.
#[derive(Clone, Debug)]
pub struct AveragingWeights {
    pub r: Vec<f64>,
}

/// Normalizes nonnegative raw weights to sum 1, each quotient taken against
/// the compensated total. Every weight vector is either this function's
/// output or (for uniform q) a data-score vector that already was, so
/// algebraically equal inputs give bit-identical weights no matter which
/// strategy produced them.
fn normalized_weights(raw: &[f64]) -> Result<Vec<f64>> {
    if let Some(&bad) = raw.iter().find(|v| !v.is_finite() || **v < 0.0) {
        return Err(SplitFedError::Numerics(format!(
            "averaging weights need finite nonnegative inputs, got {bad}"
        )));
    }
    let den = compensated_sum(&mut raw.to_vec());
    if den.0 <= 0.0 {
        return Err(SplitFedError::Numerics(
            "averaging weights sum to zero; no client carries any weight".into(),
        ));
    }
    Ok(raw.iter().map(|&w| compensated_ratio(w, den)).collect())
}

/// Quality-aware averaging weights `r = q ⊙ d / (qᵀ d)` with
/// `q = softmax(1/max(b, MIN_LOSS_BOUND))`, max-subtracted before
/// exponentiation. The softmax denominator cancels in `r` and is never
/// materialized.
pub fn averaging_weights(bounds: &[f64], d: &DataScores) -> Result<AveragingWeights> {
    if bounds.is_empty() || bounds.len() != d.scores.len() {
        return Err(SplitFedError::Config(format!(
            "{} loss bounds for {} data scores",
            bounds.len(),
            d.scores.len()
        )));
    }
    if let Some(&bad) = bounds.iter().find(|v| !v.is_finite()) {
        return Err(SplitFedError::Data(format!(
            "loss bounds must be finite, got {bad}"
        )));
    }
    let inv: Vec<f64> = bounds.iter().map(|&b| 1.0 / b.max(MIN_LOSS_BOUND)).collect();
    let peak = inv.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let raw: Vec<f64> = inv
        .iter()
        .zip(&d.scores)
        .map(|(&x, &share)| (x - peak).exp() * share)
        .collect();
    // A uniform q (every exp exactly 1) leaves raw == d, and d is already
    // normalized; renormalizing would only re-round the shares. Skipping
    // it makes the equal-bounds collapse r == d exact, bit for bit.
    if raw == d.scores {
        return Ok(AveragingWeights { r: raw });
    }
    Ok(AveragingWeights { r: normalized_weights(&raw)? })
}

fn check_snapshots(snapshots: &[ClientSnapshot]) -> Result<()> {
    if snapshots.is_empty() {
        return Err(SplitFedError::Config(
            "aggregation needs at least one client snapshot".into(),
        ));
    }
    let first = &snapshots[0];
    for s in &snapshots[1..] {
        if !first.client_params.compatible(&s.client_params)
            || !first.server_params.compatible(&s.server_params)
        {
            return Err(SplitFedError::Config(format!(
                "snapshot of client {} is incompatible with client {}",
                s.client_id, first.client_id
            )));
        }
    }
    Ok(())
}

/// Averages the snapshots under the given weights; the workhorse behind
/// every strategy. Returns (global client model, global server model).
fn weighted_models(
    snapshots: &[ClientSnapshot],
    weights: &AveragingWeights,
) -> Result<(ParamVector, ParamVector)> {
    let client_terms: Vec<(f64, &ParamVector)> = weights
        .r
        .iter()
        .zip(snapshots)
        .map(|(&w, s)| (w, &s.client_params))
        .collect();
    let server_terms: Vec<(f64, &ParamVector)> = weights
        .r
        .iter()
        .zip(snapshots)
        .map(|(&w, s)| (w, &s.server_params))
        .collect();
    Ok((
        ParamVector::linear_combination(&client_terms)?,
        ParamVector::linear_combination(&server_terms)?,
    ))
}

/// Quality-aware model averaging: weights from loss bounds and data shares,
/// then an r-weighted sum of the snapshots.
pub fn model_updates(
    snapshots: &[ClientSnapshot],
    bounds: &[f64],
    d: &DataScores,
) -> Result<(ParamVector, ParamVector, AveragingWeights)> {
    check_snapshots(snapshots)?;
    if snapshots.len() != bounds.len() {
        return Err(SplitFedError::Config(format!(
            "{} snapshots but {} loss bounds",
            snapshots.len(),
            bounds.len()
        )));
    }
    let weights = averaging_weights(bounds, d)?;
    let (client, server) = weighted_models(snapshots, &weights)?;
    Ok((client, server, weights))
}

/// Unweighted mean of the snapshots: `r_i = 1/N`.
pub fn naive_average(
    snapshots: &[ClientSnapshot],
) -> Result<(ParamVector, ParamVector, AveragingWeights)> {
    check_snapshots(snapshots)?;
    let weights = AveragingWeights {
        r: normalized_weights(&vec![1.0; snapshots.len()])?,
    };
    let (client, server) = weighted_models(snapshots, &weights)?;
    Ok((client, server, weights))
}

/// Sample-count weighting: `r_i = m_i / Σm`.
pub fn fedavg(
    snapshots: &[ClientSnapshot],
    sample_counts: &[usize],
) -> Result<(ParamVector, ParamVector, AveragingWeights)> {
    check_snapshots(snapshots)?;
    if snapshots.len() != sample_counts.len() {
        return Err(SplitFedError::Config(format!(
            "{} snapshots but {} sample counts",
            snapshots.len(),
            sample_counts.len()
        )));
    }
    if sample_counts.iter().any(|&c| c == 0) {
        return Err(SplitFedError::Data(
            "sample-count weighting needs at least one sample per client".into(),
        ));
    }
    let raw: Vec<f64> = sample_counts.iter().map(|&c| c as f64).collect();
    let weights = AveragingWeights { r: normalized_weights(&raw)? };
    let (client, server) = weighted_models(snapshots, &weights)?;
    Ok((client, server, weights))
}

/// Server-side momentum state carried across global epochs.
#[derive(Clone, Debug, Default)]
pub struct MomentumState {
    velocity: Option<(ParamVector, ParamVector)>,
}

impl MomentumState {
    pub fn new() -> Self {
        MomentumState { velocity: None }
    }

    /// The standing velocity, if any round has run yet.
    pub fn velocity(&self) -> Option<(&ParamVector, &ParamVector)> {
        self.velocity.as_ref().map(|(c, s)| (c, s))
    }
}

/// Sample-count averaging with server momentum over the pseudo-gradient
/// `Δ = previous_global − average`: `v ← momentum·v + Δ` and
/// `global ← previous_global − v`, which this computes in the algebraically
/// equal form `global = average − momentum·v_old` so that momentum 0
/// reproduces plain sample-count averaging bit-for-bit. With no previous
/// global model the round falls back to the plain average and the velocity
/// starts at zero.
pub fn fedavg_m(
    snapshots: &[ClientSnapshot],
    sample_counts: &[usize],
    momentum: f64,
    previous_global: Option<(&ParamVector, &ParamVector)>,
    state: &mut MomentumState,
) -> Result<(ParamVector, ParamVector, AveragingWeights)> {
    if !(0.0..1.0).contains(&momentum) {
        return Err(SplitFedError::Config(format!(
            "momentum must lie in [0, 1), got {momentum}"
        )));
    }
    let (avg_client, avg_server, weights) = fedavg(snapshots, sample_counts)?;
    let Some((prev_client, prev_server)) = previous_global else {
        state.velocity = Some((avg_client.zeros_like(), avg_server.zeros_like()));
        return Ok((avg_client, avg_server, weights));
    };
    let (vel_client, vel_server) = match state.velocity.take() {
        Some(v) => v,
        None => (avg_client.zeros_like(), avg_server.zeros_like()),
    };
    let step = |avg: &ParamVector, prev: &ParamVector, vel: &ParamVector| -> Result<_> {
        let global = if momentum == 0.0 {
            avg.clone()
        } else {
            ParamVector::affine(avg, 1.0, vel, -momentum)?
        };
        let delta = ParamVector::affine(prev, 1.0, avg, -1.0)?;
        let new_vel = ParamVector::affine(vel, momentum, &delta, 1.0)?;
        Ok((global, new_vel))
    };
    let (global_client, new_vel_client) = step(&avg_client, prev_client, &vel_client)?;
    let (global_server, new_vel_server) = step(&avg_server, prev_server, &vel_server)?;
    state.velocity = Some((new_vel_client, new_vel_server));
    Ok((global_client, global_server, weights))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::Segment;

    fn scalar_pv(name: &str, v: f64) -> ParamVector {
        let mut pv = ParamVector::new();
        pv.push(Segment::new(name, vec![1], vec![v]).unwrap()).unwrap();
        pv
    }

    /// Snapshot whose client and server models are single scalars.
    fn scalar_snapshot(id: usize, client: f64, server: f64) -> ClientSnapshot {
        ClientSnapshot {
            client_id: id,
            client_params: scalar_pv("w", client),
            server_params: scalar_pv("s", server),
        }
    }

    fn scalar_of(pv: &ParamVector) -> f64 {
        pv.segments()[0].data[0]
    }

    fn uniform_scores(n: usize) -> DataScores {
        data_scores(&vec![3; n], ScoreSource::Training).unwrap()
    }

    #[test]
    fn strategy_names_round_trip() {
        for s in Strategy::ALL {
            assert_eq!(s.name().parse::<Strategy>().unwrap(), s);
        }
        assert!(matches!(
            "fedprox".parse::<Strategy>(),
            Err(SplitFedError::Config(_))
        ));
    }

    #[test]
    fn loss_bound_matches_hand_arithmetic() {
        let stats = loss_bound(&[0.1, 0.2, 0.3], StdConvention::Population).unwrap();
        assert!((stats.mean - 0.2).abs() < 1e-12);
        // Population std of {0.1, 0.2, 0.3} is sqrt(0.02/3).
        assert!((stats.std - 0.081_649_658_092_772_6).abs() < 1e-12);
        assert!((stats.bound - 0.363_299_316_185_545_2).abs() < 1e-12);
        assert_eq!(stats.sample_count, 3);
        // The bound is definitionally mean + 2 std, bit for bit.
        assert_eq!(stats.bound.to_bits(), (stats.mean + 2.0 * stats.std).to_bits());
    }

    #[test]
    fn equal_losses_collapse_the_bound_onto_the_mean() {
        let stats = loss_bound(&[0.75; 9], StdConvention::Population).unwrap();
        assert_eq!(stats.std, 0.0);
        assert_eq!(stats.bound, 0.75);
    }

    #[test]
    fn single_loss_degenerates_cleanly() {
        let stats = loss_bound(&[0.5], StdConvention::Population).unwrap();
        assert_eq!(stats.mean, 0.5);
        assert_eq!(stats.std, 0.0);
        assert_eq!(stats.bound, 0.5);
        assert!(loss_bound(&[0.5], StdConvention::Sample).is_err());
    }

    #[test]
    fn sample_convention_divides_by_n_minus_one() {
        let stats = loss_bound(&[0.1, 0.3], StdConvention::Sample).unwrap();
        // Sample std of {0.1, 0.3} is sqrt(0.02/1).
        assert!((stats.std - 0.141_421_356_237_309_5).abs() < 1e-12);
    }

    #[test]
    fn loss_bound_rejects_bad_input() {
        assert!(loss_bound(&[], StdConvention::Population).is_err());
        assert!(loss_bound(&[0.1, -0.2], StdConvention::Population).is_err());
        assert!(loss_bound(&[f64::NAN], StdConvention::Population).is_err());
    }

    #[test]
    fn data_scores_match_the_reference_counts() {
        let d = data_scores(&[210, 120, 85, 180, 120], ScoreSource::Training).unwrap();
        let expect = [0.29371, 0.16783, 0.11888, 0.25175, 0.16783];
        for (got, want) in d.scores.iter().zip(expect) {
            assert!((got - want).abs() < 1e-5, "{got} vs {want}");
        }
        let total = d.scores.iter().sum::<f64>();
        assert!((total - 1.0).abs() < 1e-12);
        assert!(data_scores(&[3, 0], ScoreSource::Training).is_err());
    }

    #[test]
    fn equal_bounds_reduce_weights_to_data_scores_bitwise() {
        let d = data_scores(&[42, 24, 17, 36, 24], ScoreSource::Training).unwrap();
        let w = averaging_weights(&[0.4; 5], &d).unwrap();
        for (r, s) in w.r.iter().zip(&d.scores) {
            // exp(0) = 1 exactly, so the raw weights equal the scores and
            // renormalizing reproduces them bit for bit.
            assert_eq!(r.to_bits(), s.to_bits());
        }
    }

    #[test]
    fn corrupted_client_is_nearly_excluded() {
        let d = DataScores { scores: vec![0.5, 0.5], source: ScoreSource::Training };
        let w = averaging_weights(&[0.1, 10.0], &d).unwrap();
        // 1/b = [10, 0.1]; q1 = e^10/(e^10 + e^0.1) ~ 0.99995.
        assert!((w.r[0] - 0.99995).abs() < 1e-5, "r = {:?}", w.r);
        assert!((w.r[1] - 5.0e-5).abs() < 1e-6);
        let total = w.r.iter().sum::<f64>();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn lower_bound_means_strictly_higher_weight() {
        let d = uniform_scores(4);
        let w = averaging_weights(&[0.3, 0.2, 0.9, 0.20000001], &d).unwrap();
        assert!(w.r[1] > w.r[3]);
        assert!(w.r[3] > w.r[0]);
        assert!(w.r[0] > w.r[2]);
    }

    #[test]
    fn huge_bound_drives_the_weight_to_zero() {
        let d = uniform_scores(3);
        let w = averaging_weights(&[0.2, 0.2, 1e6], &d).unwrap();
        assert!(w.r[2] < 0.01, "r = {:?}", w.r);
        assert!(w.r[2] < w.r[0] && w.r[2] < w.r[1]);
    }

    #[test]
    fn zero_bound_is_clamped_not_divided() {
        let d = uniform_scores(2);
        let w = averaging_weights(&[0.0, 0.5], &d).unwrap();
        assert!(w.r.iter().all(|r| r.is_finite()));
        // The perfectly fit client takes essentially all the weight.
        assert!(w.r[0] > 0.999_999);
    }

    #[test]
    fn single_client_gets_weight_one_and_its_own_model() {
        let snaps = [scalar_snapshot(0, 1.25, -2.5)];
        let d = uniform_scores(1);
        let (client, server, w) = model_updates(&snaps, &[0.3], &d).unwrap();
        assert_eq!(w.r, vec![1.0]);
        assert_eq!(scalar_of(&client).to_bits(), 1.25f64.to_bits());
        assert_eq!(scalar_of(&server).to_bits(), (-2.5f64).to_bits());
    }

    #[test]
    fn naive_average_of_scalar_standins() {
        let snaps = [
            scalar_snapshot(0, 1.0, 10.0),
            scalar_snapshot(1, 2.0, 20.0),
            scalar_snapshot(2, 3.0, 30.0),
        ];
        let (client, server, w) = naive_average(&snaps).unwrap();
        assert!((scalar_of(&client) - 2.0).abs() < 1e-12);
        assert!((scalar_of(&server) - 20.0).abs() < 1e-12);
        assert!(w.r.iter().all(|&r| (r - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn fedavg_matches_hand_weighted_mean() {
        let snaps: Vec<ClientSnapshot> = (0..5)
            .map(|i| scalar_snapshot(i, (i + 1) as f64, 0.5))
            .collect();
        let counts = [210, 120, 85, 180, 120];
        let (client, _, w) = fedavg(&snaps, &counts).unwrap();
        // (1*210 + 2*120 + 3*85 + 4*180 + 5*120) / 715 = 2025/715.
        assert!((scalar_of(&client) - 2025.0 / 715.0).abs() < 1e-12);
        let total = w.r.iter().sum::<f64>();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fedavg_with_equal_counts_is_naive_bitwise() {
        let snaps = [
            scalar_snapshot(0, 0.1, -0.7),
            scalar_snapshot(1, 2.4, 0.3),
            scalar_snapshot(2, -1.1, 5.0),
        ];
        let (nc, ns, _) = naive_average(&snaps).unwrap();
        let (fc, fs, _) = fedavg(&snaps, &[7, 7, 7]).unwrap();
        assert_eq!(nc.to_bytes(), fc.to_bytes());
        assert_eq!(ns.to_bytes(), fs.to_bytes());
    }

    #[test]
    fn model_updates_with_flat_bounds_and_uniform_scores_is_naive_bitwise() {
        // Six clients: with plain normalization the uniform weights would
        // miss 1/6 by an ulp and the two paths would diverge.
        let snaps: Vec<ClientSnapshot> = (0..6)
            .map(|i| scalar_snapshot(i, (i as f64).sin(), (i as f64).cos()))
            .collect();
        let d = uniform_scores(6);
        let (qc, qs, qw) = model_updates(&snaps, &[0.25; 6], &d).unwrap();
        let (nc, ns, nw) = naive_average(&snaps).unwrap();
        assert_eq!(qw.r, nw.r);
        assert_eq!(qc.to_bytes(), nc.to_bytes());
        assert_eq!(qs.to_bytes(), ns.to_bytes());
    }

    #[test]
    fn permuting_clients_permutes_weights_and_fixes_the_model() {
        let snaps = [
            scalar_snapshot(0, 0.3, 1.0),
            scalar_snapshot(1, -2.0, 0.25),
            scalar_snapshot(2, 11.5, -3.75),
        ];
        let bounds = [0.21, 0.47, 0.093];
        let d = data_scores(&[5, 9, 2], ScoreSource::Training).unwrap();
        let (c0, s0, w0) = model_updates(&snaps, &bounds, &d).unwrap();

        let perm = [2usize, 0, 1];
        let psnaps: Vec<ClientSnapshot> = perm.iter().map(|&i| snaps[i].clone()).collect();
        let pbounds: Vec<f64> = perm.iter().map(|&i| bounds[i]).collect();
        let pcounts: Vec<usize> = perm.iter().map(|&i| [5, 9, 2][i]).collect();
        let pd = data_scores(&pcounts, ScoreSource::Training).unwrap();
        let (c1, s1, w1) = model_updates(&psnaps, &pbounds, &pd).unwrap();

        for (k, &i) in perm.iter().enumerate() {
            assert_eq!(w1.r[k].to_bits(), w0.r[i].to_bits());
        }
        assert_eq!(c1.to_bytes(), c0.to_bytes());
        assert_eq!(s1.to_bytes(), s0.to_bytes());
    }

    #[test]
    fn averaged_scalars_stay_in_the_convex_hull() {
        let snaps = [
            scalar_snapshot(0, -1.5, 3.0),
            scalar_snapshot(1, 0.25, -0.5),
            scalar_snapshot(2, 2.0, 1.0),
        ];
        let d = data_scores(&[4, 11, 3], ScoreSource::Training).unwrap();
        let (client, server, _) = model_updates(&snaps, &[0.9, 0.1, 0.4], &d).unwrap();
        assert!((-1.5..=2.0).contains(&scalar_of(&client)));
        assert!((-0.5..=3.0).contains(&scalar_of(&server)));
    }

    #[test]
    fn incompatible_snapshots_are_a_config_error() {
        let mut other = scalar_snapshot(1, 2.0, 0.0);
        other.client_params = scalar_pv("different", 2.0);
        let snaps = [scalar_snapshot(0, 1.0, 0.0), other];
        let err = naive_average(&snaps).unwrap_err();
        assert!(matches!(err, SplitFedError::Config(_)));
        assert!(naive_average(&[]).is_err());
    }

    #[test]
    fn momentum_zero_is_fedavg_bitwise() {
        let snaps = [
            scalar_snapshot(0, 0.4, 2.0),
            scalar_snapshot(1, -1.2, 0.1),
        ];
        let counts = [8, 3];
        let prev = (scalar_pv("w", 100.0), scalar_pv("s", -100.0));
        let mut state = MomentumState::new();
        for _ in 0..3 {
            let (fc, fs, _) = fedavg(&snaps, &counts).unwrap();
            let (mc, ms, _) = fedavg_m(
                &snaps,
                &counts,
                0.0,
                Some((&prev.0, &prev.1)),
                &mut state,
            )
            .unwrap();
            assert_eq!(mc.to_bytes(), fc.to_bytes());
            assert_eq!(ms.to_bytes(), fs.to_bytes());
        }
    }

    #[test]
    fn constant_unit_delta_accumulates_momentum_steps() {
        // Arrange prev - avg = 1 every round; the velocity then unrolls to
        // 1, 1.9, 2.71 with momentum 0.9.
        let mut state = MomentumState::new();
        let mut prev_c = 1.0;
        let mut expect_v = 0.0;
        for _ in 0..3 {
            let avg = prev_c - 1.0;
            let snaps = [scalar_snapshot(0, avg, avg)];
            let prev = (scalar_pv("w", prev_c), scalar_pv("s", prev_c));
            let (gc, _, _) =
                fedavg_m(&snaps, &[1], 0.9, Some((&prev.0, &prev.1)), &mut state).unwrap();
            expect_v = 0.9 * expect_v + 1.0;
            let (vc, _) = state.velocity().unwrap();
            assert!((scalar_of(vc) - expect_v).abs() < 1e-12);
            assert!((scalar_of(&gc) - (prev_c - expect_v)).abs() < 1e-12);
            prev_c = scalar_of(&gc);
        }
        assert!((expect_v - 2.71).abs() < 1e-12);
    }

    #[test]
    fn zero_velocity_and_zero_delta_leave_the_model_fixed() {
        let snaps = [scalar_snapshot(0, 5.0, -5.0)];
        let prev = (scalar_pv("w", 5.0), scalar_pv("s", -5.0));
        let mut state = MomentumState::new();
        let (gc, gs, _) =
            fedavg_m(&snaps, &[4], 0.9, Some((&prev.0, &prev.1)), &mut state).unwrap();
        assert_eq!(scalar_of(&gc).to_bits(), 5.0f64.to_bits());
        assert_eq!(scalar_of(&gs).to_bits(), (-5.0f64).to_bits());
    }

    #[test]
    fn first_round_without_previous_global_is_plain_fedavg() {
        let snaps = [scalar_snapshot(0, 2.0, 1.0), scalar_snapshot(1, 4.0, 3.0)];
        let mut state = MomentumState::new();
        let (mc, ms, _) = fedavg_m(&snaps, &[1, 1], 0.9, None, &mut state).unwrap();
        let (fc, fs, _) = fedavg(&snaps, &[1, 1]).unwrap();
        assert_eq!(mc.to_bytes(), fc.to_bytes());
        assert_eq!(ms.to_bytes(), fs.to_bytes());
        let (vc, vs) = state.velocity().unwrap();
        assert!(scalar_of(vc) == 0.0 && scalar_of(vs) == 0.0);
    }

    #[test]
    fn momentum_outside_unit_interval_is_rejected() {
        let snaps = [scalar_snapshot(0, 1.0, 1.0)];
        let mut state = MomentumState::new();
        assert!(fedavg_m(&snaps, &[1], 1.0, None, &mut state).is_err());
        assert!(fedavg_m(&snaps, &[1], -0.1, None, &mut state).is_err());
    }
}
