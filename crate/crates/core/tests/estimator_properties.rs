//! Estimator invariants on randomized instances: agreement of the gain-form
//! and explicit-inverse updates, information monotonicity, and convergence
//! of the final-compliance estimate as measurements accumulate.

use nalgebra::DMatrix;

use layerbeam_core::estimator::EstimatorState;
use layerbeam_core::sim::{NoiseStream, PrintState};
use layerbeam_core::ModelParams;

/// Small deterministic generator for test instances.
struct TestRng(NoiseStream, u64);

impl TestRng {
    fn new(seed: u64) -> Self {
        TestRng(NoiseStream::new(seed), 0)
    }
    fn normal(&mut self) -> f64 {
        self.1 += 1;
        self.0.unit_normal_at(self.1, 0)
    }
    fn uniform(&mut self) -> f64 {
        // Probability integral transform is overkill; fold a normal into
        // (0, 1) with enough spread for instance generation.
        let z = self.normal();
        1.0 / (1.0 + (-z).exp())
    }
    fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }
    fn int(&mut self, lo: usize, hi: usize) -> usize {
        lo + (self.range(0.0, (hi - lo + 1) as f64).floor() as usize).min(hi - lo)
    }
}

/// Builds a measurement-ready state with a correlated covariance, using only
/// the public update API.
fn random_state(rng: &mut TestRng, n: usize) -> EstimatorState {
    let params = ModelParams {
        alpha: rng.range(0.5, 2.0),
        gamma: rng.range(4.0, 10.0),
        sigma_p: rng.range(0.3, 2.0),
        sigma_o: 1.0, // replaced below once the scale is known
    };
    let mut state = EstimatorState::new(params).unwrap();
    let mut widths = Vec::new();
    for _ in 0..n {
        let u = rng.range(6.0, 20.0);
        widths.push(u);
        state = state.process_update(u).unwrap();
    }
    // Scale sigma_o so the update is neither vacuous nor degenerate: the
    // measurement variance lands within a couple orders of the projected
    // prior variance.
    let coeffs = layerbeam_core::beam::coeff_vector(n).unwrap();
    let c = nalgebra::DVector::from_column_slice(coeffs.values());
    let proj = (state.covariance() * &c).dot(&c).sqrt();
    let ctmu = c.dot(state.mean());
    let sigma_o = rng.range(0.3, 3.0) * proj / (params.alpha * ctmu * ctmu);
    let params = ModelParams { sigma_o, ..params };
    let mut state = EstimatorState::new(params).unwrap();
    for &u in &widths {
        state = state.process_update(u).unwrap();
    }
    // A couple of correlating measurement updates.
    for shift in [0.97, 1.05] {
        let o = state.predicted_compliance().unwrap() * shift;
        state = state.measurement_update(o).unwrap();
    }
    state
}

#[test]
fn gain_and_information_forms_agree() {
    let mut rng = TestRng::new(0xE57);
    for case in 0..60 {
        let n = rng.int(2, 50);
        let state = random_state(&mut rng, n);
        let o = state.predicted_compliance().unwrap() * rng.range(0.8, 1.25);
        let gain = state.measurement_update(o).unwrap();
        let info = state.measurement_update_information_form(o).unwrap();

        let mean_scale = gain.mean().amax();
        let mean_err = (gain.mean() - info.mean()).amax();
        assert!(
            mean_err <= 1e-8 * mean_scale,
            "case {case} (n={n}): mean mismatch {mean_err:e} vs scale {mean_scale:e}"
        );
        let cov_scale = gain.covariance().amax();
        let cov_err = (gain.covariance() - info.covariance()).amax();
        assert!(
            cov_err <= 1e-8 * cov_scale,
            "case {case} (n={n}): covariance mismatch {cov_err:e} vs scale {cov_scale:e}"
        );
    }
}

#[test]
fn measurement_never_inflates_covariance() {
    let mut rng = TestRng::new(0xBEE);
    for _ in 0..40 {
        let n = rng.int(2, 30);
        let state = random_state(&mut rng, n);
        let o = state.predicted_compliance().unwrap() * rng.range(0.7, 1.4);
        let updated = state.measurement_update(o).unwrap();
        let shrink: DMatrix<f64> = state.covariance() - updated.covariance();
        let sym = (&shrink + shrink.transpose()) * 0.5;
        let min_eig = sym
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min);
        assert!(
            min_eig >= -1e-9 * state.covariance_trace(),
            "posterior exceeded prior: min eig {min_eig:e}"
        );
    }
}

/// With matched parameters, more measurement stops can only help the final
/// compliance estimate: RMS error over trials is non-increasing in the stop
/// count (one adjacent inversion tolerated, the curve is a noisy average).
#[test]
fn estimate_improves_with_measurement_stops() {
    let params = ModelParams {
        alpha: 1.035e-8,
        gamma: 7.326,
        sigma_p: 1.0,
        sigma_o: 2000.0,
    };
    let total = 30usize;
    let trials = 100usize;
    let stop_counts = [0usize, 1, 2, 4, 8];
    let mut rms = Vec::new();
    for &stops in &stop_counts {
        let mut sq = 0.0;
        for trial in 0..trials {
            let root = NoiseStream::new(9000 + trial as u64);
            let process = root.substream(0);
            let mut observe = root.substream(1);
            let mut sim = PrintState::new(params).unwrap();
            let mut est = EstimatorState::new(params).unwrap();
            let stop_at: Vec<usize> = (1..=stops).map(|i| i * total / stops.max(1)).collect();
            for layer in 1..=total {
                let u = 8.0 + (layer % 7) as f64;
                sim.deposit_layer(u, &process).unwrap();
                est = est.process_update(u).unwrap();
                if stop_at.contains(&layer) {
                    if let Some(o) = sim
                        .measure_stiffness(&mut observe)
                        .unwrap()
                        .observed_compliance
                    {
                        est = est.measurement_update(o).unwrap();
                    }
                }
            }
            let truth = sim.true_compliance().unwrap();
            let err = est.predicted_compliance().unwrap() - truth;
            sq += (err / truth).powi(2);
        }
        rms.push((sq / trials as f64).sqrt());
    }
    let inversions = rms
        .windows(2)
        .filter(|w| w[1] > w[0] * (1.0 + 1e-12))
        .count();
    assert!(
        inversions <= 1,
        "RMS curve not (almost) monotone: {rms:?} over stops {stop_counts:?}"
    );
    assert!(
        rms.last().unwrap() < rms.first().unwrap(),
        "measurements did not reduce final estimate RMS: {rms:?}"
    );
}
