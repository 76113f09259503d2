//! Planner cross-checks against the exhaustive grid oracle and the
//! active-constraint (lossless relaxation) property on randomized instances.

use layerbeam_core::planner::{Bounds, PlanProblem, PlanWeights, SolverOptions};
use layerbeam_core::sim::NoiseStream;
use layerbeam_core::ModelParams;

struct TestRng(NoiseStream, u64);

impl TestRng {
    fn new(seed: u64) -> Self {
        TestRng(NoiseStream::new(seed), 0)
    }
    fn uniform(&mut self) -> f64 {
        self.1 += 1;
        let z = self.0.unit_normal_at(self.1, 0);
        1.0 / (1.0 + (-z).exp())
    }
    fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }
    fn int(&mut self, lo: usize, hi: usize) -> usize {
        lo + (self.range(0.0, (hi - lo + 1) as f64).floor() as usize).min(hi - lo)
    }
}

/// Random instance with a feasible target; `target_frac` places the target
/// within [stiffest, floppiest] (values > 1 leave the bound inactive).
fn random_problem(rng: &mut TestRng, horizon: usize, target_frac: f64) -> PlanProblem {
    let total = horizon + rng.int(3, 20);
    let stage = total - horizon + 1;
    let params = ModelParams {
        alpha: 10f64.powf(rng.range(-9.0, -6.5)),
        gamma: rng.range(4.0, 10.0),
        sigma_p: rng.range(0.5, 15.0),
        sigma_o: 1.0,
    };
    let bounds = Bounds {
        min_width_mm: rng.range(3.0, 7.0),
        max_width_mm: rng.range(14.0, 22.0),
    };
    let prev_width = rng.range(bounds.min_width_mm + 1.0, bounds.max_width_mm + 2.0);
    let prefix_mean: Vec<f64> = (0..stage - 1)
        .map(|_| 1.0 / (rng.range(bounds.min_width_mm, bounds.max_width_mm) + params.gamma))
        .collect();
    let mut problem = PlanProblem {
        stage,
        horizon_end: total,
        prefix_mean,
        prev_width,
        params,
        bounds,
        target_compliance: 1.0,
        weights: PlanWeights {
            material: 1.0,
            smoothness: 1.0,
            variance: 1.0,
        },
        options: SolverOptions::default(),
    };
    let base = problem.normalized_weights().unwrap();
    problem.weights = PlanWeights {
        material: base.material * rng.range(0.3, 3.0),
        smoothness: base.smoothness * rng.range(0.3, 3.0),
        variance: base.variance * rng.range(0.3, 3.0),
    };
    let report = problem.check_feasibility().unwrap();
    problem.target_compliance = report.stiffest_compliance
        + target_frac * (report.floppiest_compliance - report.stiffest_compliance);
    problem
}

/// Worst-case cost change when every coordinate moves by at most `spacing`:
/// sum over coordinates of a gradient bound over the box.
fn grid_resolution_bound(problem: &PlanProblem, grid_points: usize) -> f64 {
    let ub = problem.prev_width.min(problem.bounds.max_width_mm);
    let lb = problem.bounds.min_width_mm;
    let span0 = (ub - lb).max(problem.prev_width - lb);
    let spacing = (ub - lb) / (grid_points - 1) as f64;
    let total = problem.horizon_end;
    let mut acc = 0.0;
    for k in problem.stage..=total {
        let c = layerbeam_core::beam::coeff_sixths(total, k) as f64 / 6.0;
        let l3 = 4.0
            * problem.weights.variance
            * problem.params.alpha.powi(2)
            * problem.params.sigma_p.powi(2)
            * c
            * c
            / (lb + problem.params.gamma).powi(5);
        acc += problem.weights.material + 6.0 * problem.weights.smoothness * span0 + l3;
    }
    acc * spacing
}

#[test]
fn solver_matches_grid_oracle_on_random_instances() {
    let mut rng = TestRng::new(0x0D15EA5E);
    let grid = 60usize;
    for case in 0..40 {
        let horizon = 1 + case % 4;
        let frac = rng.range(0.1, 1.3);
        let problem = random_problem(&mut rng, horizon, frac);
        let plan = problem.solve().unwrap();
        let brute = problem.brute_force_solve(grid).unwrap();
        let viol = problem.constraint_violation(&plan.widths).unwrap();
        assert!(viol.bounds_mm <= 1e-9, "case {case}: {viol:?}");
        assert!(viol.compliance_rel <= 1e-6, "case {case}: {viol:?}");

        let gap = plan.stats.final_gap_bound;
        assert!(
            plan.achieved_cost
                <= brute.achieved_cost + gap + 1e-9 * (1.0 + brute.achieved_cost.abs()),
            "case {case}: solver above grid optimum: {} vs {}",
            plan.achieved_cost,
            brute.achieved_cost
        );
        let bound = grid_resolution_bound(&problem, grid);
        assert!(
            plan.achieved_cost >= brute.achieved_cost - bound,
            "case {case}: solver beats grid by more than the resolution bound: {} vs {} (bound {bound})",
            plan.achieved_cost,
            brute.achieved_cost
        );
    }
}

#[test]
fn compliance_bound_activates_when_binding() {
    // Whenever the target lies below the unconstrained minimizer's
    // compliance, the relaxed inequality must come out active.
    let mut rng = TestRng::new(0xAC71);
    let mut checked = 0;
    for case in 0..30 {
        let horizon = rng.int(2, 12);
        let mut problem = random_problem(&mut rng, horizon, 0.5);
        let unconstrained = {
            let mut q = problem.clone();
            q.target_compliance *= 1e6;
            q.solve().unwrap().predicted_final_compliance
        };
        let rep = problem.check_feasibility().unwrap();
        if unconstrained <= rep.stiffest_compliance * 1.01 {
            continue; // cannot place a binding target for this draw
        }
        problem.target_compliance = 0.5 * (rep.stiffest_compliance + unconstrained);
        let plan = problem.solve().unwrap();
        let rel = (plan.predicted_final_compliance - problem.target_compliance).abs()
            / problem.target_compliance;
        assert!(
            rel <= 1e-5,
            "case {case}: bound should be active, |g-target|/target = {rel:e}"
        );
        checked += 1;
    }
    assert!(
        checked >= 20,
        "too few binding instances generated: {checked}"
    );
}

#[test]
fn infeasible_instances_agree_between_routes() {
    let mut rng = TestRng::new(0xDEAD);
    for _ in 0..10 {
        let mut problem = random_problem(&mut rng, 3, 0.5);
        let rep = problem.check_feasibility().unwrap();
        problem.target_compliance = rep.stiffest_compliance * 0.8;
        assert!(problem.solve().is_err());
        assert!(problem.brute_force_solve(30).is_err());
        assert!(!problem.check_feasibility().unwrap().feasible);
    }
}
