//! Linear-Gaussian conditional transition model `p(S' | S, A; θ)`.
//!
//! The next-state mean is `W · φ(s, a)` for a feature expansion `φ` and
//! the noise is diagonal Gaussian with per-dimension scale `σ`. Fitting is
//! closed-form least squares (ridge-stabilized) per output dimension, with
//! `σ` the RMS residual floored at [`SIGMA_FLOOR`]. Evaluation sums the
//! Gaussian log density over any subjects × window rectangle of a panel.

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::{Panel, SubjectSet, Window};

/// Lower bound on fitted noise scales; prevents degenerate likelihoods on
/// deterministic data.
pub const SIGMA_FLOOR: f64 = 1e-6;

/// Relative ridge weight: `λ = RIDGE_REL · trace(Gram) / q`.
pub const RIDGE_REL: f64 = 1e-8;

const LN_2PI: f64 = 1.8378770664093453;

/// Feature expansion terms. The intercept is always first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureTerm {
    Intercept,
    State,
    Action,
    StateAction,
}

/// Deterministic mapping `(s, a) ↦ φ(s, a) ∈ ℝ^q`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureMap {
    terms: Vec<FeatureTerm>,
    state_dim: usize,
}

impl FeatureMap {
    pub fn new(terms: Vec<FeatureTerm>, state_dim: usize) -> Result<Self> {
        if terms.first() != Some(&FeatureTerm::Intercept) {
            return Err(Error::config("feature map must start with the intercept"));
        }
        if state_dim == 0 {
            return Err(Error::config("state dimension must be positive"));
        }
        let mut seen = terms.clone();
        seen.dedup();
        if seen.len() != terms.len() {
            return Err(Error::config("duplicate feature terms"));
        }
        Ok(FeatureMap { terms, state_dim })
    }

    /// The default expansion `[1, s, a, a·s]` with `q = 2d + 2`.
    pub fn default_for(state_dim: usize) -> Self {
        FeatureMap::new(
            vec![
                FeatureTerm::Intercept,
                FeatureTerm::State,
                FeatureTerm::Action,
                FeatureTerm::StateAction,
            ],
            state_dim,
        )
        .expect("default map is valid")
    }

    /// Intercept-only map, useful for pure mean-shift problems.
    pub fn intercept_only(state_dim: usize) -> Self {
        FeatureMap::new(vec![FeatureTerm::Intercept], state_dim).expect("valid")
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    /// Number of expanded features `q`.
    pub fn output_dim(&self) -> usize {
        self.terms
            .iter()
            .map(|t| match t {
                FeatureTerm::Intercept | FeatureTerm::Action => 1,
                FeatureTerm::State | FeatureTerm::StateAction => self.state_dim,
            })
            .sum()
    }

    /// Evaluate `φ(s, a)` into `out` (length `q`). The optional `shift` is
    /// subtracted from the state coordinates before expansion; windowed
    /// centering keeps likelihood-ratio arithmetic well conditioned and, with
    /// an intercept present, leaves fitted residuals unchanged.
    pub fn eval_shifted(&self, state: &[f64], action_code: i64, shift: Option<&[f64]>, out: &mut [f64]) {
        debug_assert_eq!(state.len(), self.state_dim);
        debug_assert_eq!(out.len(), self.output_dim());
        let a = action_code as f64;
        let mut k = 0;
        for term in &self.terms {
            match term {
                FeatureTerm::Intercept => {
                    out[k] = 1.0;
                    k += 1;
                }
                FeatureTerm::Action => {
                    out[k] = a;
                    k += 1;
                }
                FeatureTerm::State => {
                    for (j, &v) in state.iter().enumerate() {
                        out[k] = v - shift.map_or(0.0, |c| c[j]);
                        k += 1;
                    }
                }
                FeatureTerm::StateAction => {
                    for (j, &v) in state.iter().enumerate() {
                        out[k] = a * (v - shift.map_or(0.0, |c| c[j]));
                        k += 1;
                    }
                }
            }
        }
    }

    pub fn eval(&self, state: &[f64], action_code: i64, out: &mut [f64]) {
        self.eval_shifted(state, action_code, None, out)
    }
}

/// Fitted linear-Gaussian transition model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionModel {
    /// Row-major `d × q` coefficient matrix; next-state mean is `W · φ(s, a)`.
    pub coef: Vec<f64>,
    /// Per-dimension noise standard deviations, each `≥ SIGMA_FLOOR`.
    pub noise_scale: Vec<f64>,
    pub feature_map: FeatureMap,
    /// Set when the fit saw fewer transitions than features and fell back to
    /// the ridge solution.
    #[serde(default)]
    pub low_rank: bool,
}

impl TransitionModel {
    pub fn output_dim(&self) -> usize {
        self.noise_scale.len()
    }

    pub fn coef_at(&self, dim: usize, feature: usize) -> f64 {
        self.coef[dim * self.feature_map.output_dim() + feature]
    }

    /// Predicted next-state mean.
    pub fn mean_into(&self, state: &[f64], action_code: i64, features: &mut [f64], out: &mut [f64]) {
        let q = self.feature_map.output_dim();
        self.feature_map.eval(state, action_code, features);
        for (j, o) in out.iter_mut().enumerate() {
            let row = &self.coef[j * q..(j + 1) * q];
            *o = row.iter().zip(features.iter()).map(|(w, f)| w * f).sum();
        }
    }

    /// Log density of one transition.
    pub fn log_density(&self, state: &[f64], action_code: i64, next_state: &[f64]) -> f64 {
        let d = self.output_dim();
        let q = self.feature_map.output_dim();
        let mut features = vec![0.0; q];
        let mut mean = vec![0.0; d];
        self.mean_into(state, action_code, &mut features, &mut mean);
        let mut ll = 0.0;
        for j in 0..d {
            let sigma = self.noise_scale[j];
            let z = (next_state[j] - mean[j]) / sigma;
            ll += -0.5 * LN_2PI - sigma.ln() - 0.5 * z * z;
        }
        ll
    }
}

// ---------------------------------------------------------------------------
// Sufficient statistics
// ---------------------------------------------------------------------------

/// Accumulated weighted least-squares statistics for a set of transitions:
/// `gram = Σ w φφᵀ`, `cross = Σ w φ s'ᵀ`, `resp_sq = Σ w s'²` per dimension.
///
/// Statistics are additive, so window and cluster aggregates are formed by
/// summing per-piece accumulators. Responses and state features may be
/// pre-shifted by a common constant (see [`FeatureMap::eval_shifted`]).
#[derive(Debug, Clone)]
pub struct SuffStats {
    pub q: usize,
    pub d: usize,
    pub gram: DMatrix<f64>,
    pub cross: DMatrix<f64>,
    pub resp_sq: Vec<f64>,
    pub weight_sum: f64,
    pub count: usize,
}

impl SuffStats {
    pub fn zeros(q: usize, d: usize) -> Self {
        SuffStats {
            q,
            d,
            gram: DMatrix::zeros(q, q),
            cross: DMatrix::zeros(q, d),
            resp_sq: vec![0.0; d],
            weight_sum: 0.0,
            count: 0,
        }
    }

    pub fn add(&mut self, features: &[f64], response: &[f64], weight: f64) {
        for r in 0..self.q {
            let wf = weight * features[r];
            for c in r..self.q {
                let v = wf * features[c];
                self.gram[(r, c)] += v;
                if c != r {
                    self.gram[(c, r)] += v;
                }
            }
            for j in 0..self.d {
                self.cross[(r, j)] += wf * response[j];
            }
        }
        for j in 0..self.d {
            self.resp_sq[j] += weight * response[j] * response[j];
        }
        self.weight_sum += weight;
        self.count += 1;
    }

    pub fn add_scaled(&mut self, other: &SuffStats, sign: f64) {
        self.gram += other.gram.clone() * sign;
        self.cross += other.cross.clone() * sign;
        for j in 0..self.d {
            self.resp_sq[j] += sign * other.resp_sq[j];
        }
        self.weight_sum += sign * other.weight_sum;
        if sign >= 0.0 {
            self.count += other.count;
        } else {
            self.count -= other.count;
        }
    }

    pub fn difference(&self, earlier: &SuffStats) -> SuffStats {
        let mut out = self.clone();
        out.add_scaled(earlier, -1.0);
        out
    }

    /// Ridge-stabilized least-squares solve. Returns the `q × d` coefficient
    /// matrix (one column per output dimension) and per-dimension residual
    /// sums of squares evaluated without the ridge term.
    pub fn solve(&self) -> (DMatrix<f64>, Vec<f64>) {
        let trace: f64 = (0..self.q).map(|r| self.gram[(r, r)]).sum();
        let lambda = RIDGE_REL * trace.max(f64::MIN_POSITIVE) / self.q as f64;
        let mut reg = self.gram.clone();
        for r in 0..self.q {
            reg[(r, r)] += lambda;
        }
        let coef = match Cholesky::new(reg.clone()) {
            Some(chol) => chol.solve(&self.cross),
            None => reg
                .lu()
                .solve(&self.cross)
                .unwrap_or_else(|| DMatrix::zeros(self.q, self.d)),
        };
        let mut rss = vec![0.0; self.d];
        for j in 0..self.d {
            let x = coef.column(j);
            let gx = &self.gram * x;
            let quad = x.dot(&DVector::from_column_slice(gx.as_slice()));
            let lin = x.dot(&DVector::from_column_slice(self.cross.column(j).as_slice()));
            rss[j] = (self.resp_sq[j] - 2.0 * lin + quad).max(0.0);
        }
        (coef, rss)
    }

    /// Fit a full model: coefficients plus floored RMS noise scales.
    pub fn fit(&self, feature_map: &FeatureMap) -> TransitionModel {
        let (coef_cols, rss) = self.solve();
        let mut coef = vec![0.0; self.d * self.q];
        for j in 0..self.d {
            for r in 0..self.q {
                coef[j * self.q + r] = coef_cols[(r, j)];
            }
        }
        let noise_scale = rss
            .iter()
            .map(|&v| (v / self.weight_sum.max(f64::MIN_POSITIVE)).sqrt().max(SIGMA_FLOOR))
            .collect();
        TransitionModel {
            coef,
            noise_scale,
            feature_map: feature_map.clone(),
            low_rank: self.count < self.q,
        }
    }

    /// Unnormalized Gaussian log likelihood of the accumulated transitions
    /// under coefficients `coef_cols` (`q × d`) and noise scales `sigma`.
    ///
    /// Weighted transitions contribute proportionally to their weight.
    pub fn log_likelihood_under(&self, coef_cols: &DMatrix<f64>, sigma: &[f64]) -> f64 {
        let mut ll = 0.0;
        for j in 0..self.d {
            let x = coef_cols.column(j);
            let gx = &self.gram * x;
            let quad = x.dot(&DVector::from_column_slice(gx.as_slice()));
            let lin = x.dot(&DVector::from_column_slice(self.cross.column(j).as_slice()));
            let rss = self.resp_sq[j] - 2.0 * lin + quad;
            let s = sigma[j];
            ll += self.weight_sum * (-0.5 * LN_2PI - s.ln()) - 0.5 * rss / (s * s);
        }
        ll
    }
}

/// Accumulate statistics for all transitions of `subjects` within `window`,
/// optionally weighting each subject's transitions and shifting states and
/// responses by `shift`.
pub fn accumulate_stats(
    panel: &Panel,
    subjects: &SubjectSet,
    window: Window,
    feature_map: &FeatureMap,
    shift: Option<&[f64]>,
    weight_of: impl Fn(usize) -> f64,
) -> Result<SuffStats> {
    let q = feature_map.output_dim();
    let d = panel.state_dim();
    let mut stats = SuffStats::zeros(q, d);
    let mut features = vec![0.0; q];
    let mut response = vec![0.0; d];
    for tr in panel.transitions(subjects, window)? {
        feature_map.eval_shifted(tr.state, tr.action, shift, &mut features);
        for j in 0..d {
            response[j] = tr.next_state[j] - shift.map_or(0.0, |c| c[j]);
        }
        stats.add(&features, &response, weight_of(tr.subject));
    }
    Ok(stats)
}

// ---------------------------------------------------------------------------
// Public operations
// ---------------------------------------------------------------------------

/// Maximum-likelihood fit of the transition model on a data rectangle.
///
/// Coefficients solve the ridge-stabilized normal equations per output
/// dimension; noise scales are floored RMS residuals. With fewer transitions
/// than features the ridge solution is returned and `low_rank` is set.
pub fn fit_mle(
    panel: &Panel,
    subjects: &SubjectSet,
    window: Window,
    feature_map: &FeatureMap,
) -> Result<TransitionModel> {
    let stats = accumulate_stats(panel, subjects, window, feature_map, None, |_| 1.0)?;
    Ok(stats.fit(feature_map))
}

/// Gaussian log likelihood of a data rectangle under `model`; the sum over
/// transitions, or the average when `normalized` is set.
pub fn log_likelihood(
    model: &TransitionModel,
    panel: &Panel,
    subjects: &SubjectSet,
    window: Window,
    normalized: bool,
) -> Result<f64> {
    if model.feature_map.state_dim() != panel.state_dim() {
        return Err(Error::shape(format!(
            "model expects state dimension {}, panel has {}",
            model.feature_map.state_dim(),
            panel.state_dim()
        )));
    }
    let transitions = panel.transitions(subjects, window)?;
    let mut total = 0.0;
    for tr in &transitions {
        total += model.log_density(tr.state, tr.action, tr.next_state);
    }
    if normalized {
        total /= transitions.len() as f64;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::ActionSpace;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn panel_from_values(values: &[Vec<f64>], actions: &[Vec<i64>]) -> Panel {
        let states = values
            .iter()
            .map(|traj| traj.iter().map(|&v| vec![v]).collect())
            .collect();
        let rewards = values.iter().map(|traj| vec![0.0; traj.len()]).collect();
        Panel::from_trajectories(states, actions.to_vec(), rewards, ActionSpace::binary()).unwrap()
    }

    fn random_panel(seed: u64, n: usize, steps: usize) -> Panel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..steps).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
            .collect();
        let actions: Vec<Vec<i64>> = (0..n)
            .map(|_| (0..steps).map(|_| if rng.gen_bool(0.5) { 1 } else { -1 }).collect())
            .collect();
        panel_from_values(&values, &actions)
    }

    #[test]
    fn default_map_dimension() {
        assert_eq!(FeatureMap::default_for(1).output_dim(), 4);
        assert_eq!(FeatureMap::default_for(3).output_dim(), 8);
    }

    #[test]
    fn standard_normal_log_density_at_mean() {
        let fm = FeatureMap::intercept_only(1);
        let model = TransitionModel {
            coef: vec![0.0],
            noise_scale: vec![1.0],
            feature_map: fm,
            low_rank: false,
        };
        let ll = model.log_density(&[0.3], 1, &[0.0]);
        assert!((ll - (-0.9189385332046727)).abs() < 1e-12);
    }

    #[test]
    fn log_likelihood_matches_naive_density_sum() {
        let panel = random_panel(11, 1, 6);
        let fm = FeatureMap::default_for(1);
        let set = SubjectSet::all(1);
        let w = Window::new(0, 5).unwrap();
        let model = fit_mle(&panel, &set, w, &fm).unwrap();

        // Independent oracle: per-point Gaussian density formula.
        let mut expected = 0.0;
        for tr in panel.transitions(&set, w).unwrap() {
            let a = tr.action as f64;
            let s = tr.state[0];
            let mean = model.coef[0] + model.coef[1] * s + model.coef[2] * a + model.coef[3] * a * s;
            let sigma = model.noise_scale[0];
            let z = (tr.next_state[0] - mean) / sigma;
            expected += -0.5 * (2.0 * std::f64::consts::PI).ln() - sigma.ln() - 0.5 * z * z;
        }
        let got = log_likelihood(&model, &panel, &set, w, false).unwrap();
        assert!((got - expected).abs() < 1e-10);

        let avg = log_likelihood(&model, &panel, &set, w, true).unwrap();
        assert!((avg - expected / 5.0).abs() < 1e-10);
    }

    #[test]
    fn intercept_only_fit_recovers_mean_and_rms() {
        let panel = panel_from_values(&[vec![0.0, 1.0, 3.0]], &[vec![1, 1, 1]]);
        let fm = FeatureMap::intercept_only(1);
        let set = SubjectSet::all(1);
        let model = fit_mle(&panel, &set, Window::new(0, 2).unwrap(), &fm).unwrap();
        assert!((model.coef[0] - 2.0).abs() < 1e-6);
        assert!((model.noise_scale[0] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn fit_matches_explicit_normal_equations() {
        let panel = random_panel(5, 3, 8);
        let fm = FeatureMap::default_for(1);
        let set = SubjectSet::all(3);
        let w = Window::new(1, 7).unwrap();
        let model = fit_mle(&panel, &set, w, &fm).unwrap();

        // Oracle: explicit Gram-matrix construction and inversion.
        let trs = panel.transitions(&set, w).unwrap();
        let n = trs.len();
        let q = 4;
        let mut xtx = DMatrix::<f64>::zeros(q, q);
        let mut xty = DVector::<f64>::zeros(q);
        for tr in &trs {
            let a = tr.action as f64;
            let s = tr.state[0];
            let phi = [1.0, s, a, a * s];
            for r in 0..q {
                for c in 0..q {
                    xtx[(r, c)] += phi[r] * phi[c];
                }
                xty[r] += phi[r] * tr.next_state[0];
            }
        }
        let trace: f64 = (0..q).map(|r| xtx[(r, r)]).sum();
        for r in 0..q {
            xtx[(r, r)] += RIDGE_REL * trace / q as f64;
        }
        let beta = xtx.lu().solve(&xty).unwrap();
        for r in 0..q {
            assert!(
                (model.coef[r] - beta[r]).abs() < 1e-8,
                "coef {r}: {} vs {}",
                model.coef[r],
                beta[r]
            );
        }
        let _ = n;
    }

    #[test]
    fn interaction_coefficient_recovered_on_simulated_dynamics() {
        // 50 subjects, 15 transitions each from s' = 0.5·s·a + 0.25ε.
        let fm = FeatureMap::default_for(1);
        let mut hits = 0;
        for seed in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(900 + seed);
            let mut states = Vec::new();
            let mut actions = Vec::new();
            for _ in 0..50 {
                let mut s = rng.sample::<f64, _>(StandardNormal) * 0.5f64.sqrt();
                let mut traj = vec![vec![s]];
                let mut acts = Vec::new();
                for _ in 0..15 {
                    let a: i64 = if rng.gen_bool(0.5) { 1 } else { -1 };
                    acts.push(a);
                    let eps: f64 = rng.sample(StandardNormal);
                    s = 0.5 * s * a as f64 + 0.25 * eps;
                    traj.push(vec![s]);
                }
                acts.push(1);
                states.push(traj);
                actions.push(acts);
            }
            let rewards = vec![vec![0.0; 16]; 50];
            let panel =
                Panel::from_trajectories(states, actions, rewards, ActionSpace::binary()).unwrap();
            let model = fit_mle(
                &panel,
                &SubjectSet::all(50),
                Window::new(0, 15).unwrap(),
                &fm,
            )
            .unwrap();
            if (model.coef[3] - 0.5).abs() < 0.05 {
                hits += 1;
            }
        }
        assert!(hits >= 18, "interaction coefficient recovered in {hits}/20 runs");
    }

    #[test]
    fn fitted_coefficients_are_local_maximum() {
        let panel = random_panel(21, 2, 10);
        let fm = FeatureMap::default_for(1);
        let set = SubjectSet::all(2);
        let w = Window::new(0, 9).unwrap();
        let model = fit_mle(&panel, &set, w, &fm).unwrap();
        let base = log_likelihood(&model, &panel, &set, w, false).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..50 {
            let mut perturbed = model.clone();
            let mut dir: Vec<f64> = (0..4).map(|_| rng.sample(StandardNormal)).collect();
            let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
            for (c, d) in perturbed.coef.iter_mut().zip(dir.iter_mut()) {
                *c += 1e-2 * *d / norm;
            }
            let ll = log_likelihood(&perturbed, &panel, &set, w, false).unwrap();
            assert!(ll <= base + 1e-9, "perturbation increased likelihood");
        }
    }

    #[test]
    fn log_likelihood_additive_over_disjoint_windows() {
        let panel = random_panel(31, 2, 12);
        let fm = FeatureMap::default_for(1);
        let set = SubjectSet::all(2);
        let model = fit_mle(&panel, &set, Window::new(0, 11).unwrap(), &fm).unwrap();
        let full = log_likelihood(&model, &panel, &set, Window::new(0, 11).unwrap(), false).unwrap();
        let left = log_likelihood(&model, &panel, &set, Window::new(0, 4).unwrap(), false).unwrap();
        let right = log_likelihood(&model, &panel, &set, Window::new(4, 11).unwrap(), false).unwrap();
        assert!((full - left - right).abs() < 1e-9);
    }

    #[test]
    fn rewards_do_not_affect_fit() {
        let panel = random_panel(41, 2, 8);
        let fm = FeatureMap::default_for(1);
        let set = SubjectSet::all(2);
        let w = Window::new(0, 7).unwrap();
        let m1 = fit_mle(&panel, &set, w, &fm).unwrap();

        let states = (0..2)
            .map(|i| (0..=7).map(|t| panel.state(i, t).to_vec()).collect())
            .collect();
        let actions = (0..2)
            .map(|i| (0..=7).map(|t| panel.action(i, t)).collect())
            .collect();
        let rewards = (0..2)
            .map(|i| (0..=7).map(|t| panel.reward(i, t) * 1000.0 + 7.0).collect())
            .collect();
        let scaled =
            Panel::from_trajectories(states, actions, rewards, ActionSpace::binary()).unwrap();
        let m2 = fit_mle(&scaled, &set, w, &fm).unwrap();
        assert_eq!(m1.coef, m2.coef);
        assert_eq!(m1.noise_scale, m2.noise_scale);
    }

    #[test]
    fn low_rank_flag_set_when_underdetermined() {
        let panel = random_panel(51, 1, 3);
        let fm = FeatureMap::default_for(1);
        let model = fit_mle(&panel, &SubjectSet::all(1), Window::new(0, 2).unwrap(), &fm).unwrap();
        assert!(model.low_rank);
    }

    #[test]
    fn model_json_round_trip() {
        let panel = random_panel(61, 2, 8);
        let fm = FeatureMap::default_for(1);
        let model = fit_mle(&panel, &SubjectSet::all(2), Window::new(0, 7).unwrap(), &fm).unwrap();
        let text = serde_json::to_string(&model).unwrap();
        let back: TransitionModel = serde_json::from_str(&text).unwrap();
        assert_eq!(model, back);
    }
}
