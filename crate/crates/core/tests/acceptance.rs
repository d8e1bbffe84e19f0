//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary so every criterion reports even when an earlier one
//! fails. The process fails only on criteria outside `KNOWN_FAILURES`.

use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use maryland_core::analysis::{compute_ids, decay_profile, ipr, spike_fit};
use maryland_core::blockdiag::{ducp_reach, unique_continuation_lower_bound, HomotopyOptions};
use maryland_core::lattice::{LatticeBox, Site};
use maryland_core::linalg::dense_eigen;
use maryland_core::movingblock::{
    example1, example5, f2_covariance_defect, mu_fits, padded_analysis_box, pattern_exponents, residual_exponents,
    singular_set_covariant, u0_covariance_defect, u2_covariance_defect, MovingBlockRun, GRID_POINTS,
};
use maryland_core::operator::{build_h, FiniteOperator};
use maryland_core::perturbation::{diagonal_separation, hellmann_feynman, rs_series};
use maryland_core::{FrequencyVector, Result, SamplingFunction};

/// Criteria that are implemented faithfully but fail at desk scale.
const KNOWN_FAILURES: &[usize] = &[11];

const EPS_SWEEP: [f64; 3] = [1e-2, 3.162_277_660_168_379e-3, 1e-3];

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Result<Outcome> {
    Ok(Outcome { passed, detail: detail.into() })
}

fn golden_small() -> f64 {
    (3.0 - 5f64.sqrt()) / 2.0
}

fn example1_run(eps: f64) -> Result<MovingBlockRun> {
    example1()?.build(eps, GRID_POINTS, &HomotopyOptions::default())
}

/// Phases strictly inside the first block's period.
fn block_phases(run: &MovingBlockRun, count: usize) -> Vec<f64> {
    let fam = &run.families[0];
    let w1 = run.model.omega.omega[0];
    (0..count).map(|k| fam.frame.x0() + w1 * (k as f64 + 0.5) / count as f64).collect()
}

fn series_oracle() -> Result<Outcome> {
    let f = SamplingFunction::tangent(1.0)?;
    let omega = FrequencyVector::unchecked(vec![golden_small()])?;
    let bx = LatticeBox::interval(-4, 4)?;
    let eps = 1e-2;
    // f' >= pi everywhere, so every site is regular.
    let x = 0.2;
    let h = build_h(&f, &omega, eps, x, &bx)?;
    let eig = h.eigen();
    let mut worst = 0.0f64;
    for base in bx.sites() {
        let coeffs = rs_series(&h, &base, 6)?;
        let i = coeffs.base_index;
        let branch = (0..eig.values.len())
            .max_by(|&a, &b| eig.vectors[(i, a)].abs().total_cmp(&eig.vectors[(i, b)].abs()))
            .unwrap();
        let exact = eig.values[branch];
        worst = worst.max((coeffs.energy_sum(eps) - exact).abs() / exact.abs());
    }
    let delta = diagonal_separation(h.diagonal())?;
    outcome(worst < 1e-8, format!("x = {x}, diagonal gap {delta:.3}, worst relative error {worst:.2e} over 9 anchors"))
}

fn random_symmetric(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    (&a + a.transpose()) * 0.5
}

fn hellmann_feynman_check() -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    let mut families = 0;
    while families < 100 {
        let a0 = random_symmetric(&mut rng, 8);
        let a1 = random_symmetric(&mut rng, 8);
        let a2 = random_symmetric(&mut rng, 8);
        let family = |t: f64| &a0 + &a1 * t + &a2 * (t * t);
        let t0 = rng.random_range(-1.0..1.0);
        let branch = rng.random_range(0..8);
        let eig = dense_eigen(&family(t0));
        if eig.isolation(branch) < 1e-4 {
            continue;
        }
        families += 1;
        let hf = hellmann_feynman(family, t0, branch)?;
        let h = 1e-5;
        let slope = (dense_eigen(&family(t0 + h)).values[branch] - dense_eigen(&family(t0 - h)).values[branch]) / (2.0 * h);
        worst = worst.max((hf - slope).abs() / slope.abs().max(1.0));
    }
    outcome(worst < 1e-6, format!("worst relative difference {worst:.2e} over {families} families"))
}

fn continuation_check() -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a: Vec<Site> = (0..5).map(|i| vec![i]).collect();
    let b: Vec<Site> = vec![vec![-2], vec![-1], vec![5], vec![6]];
    let reach = ducp_reach(&a, &b);
    if !reach.certified {
        return outcome(false, "geometry not certified");
    }
    let mut slack = f64::INFINITY;
    let mut pairs = 0;
    for _ in 0..500 {
        let w = rng.random_range(0.5..20.0);
        let diag: Vec<f64> = (0..9).map(|_| rng.random_range(-w..=w)).collect();
        let h = FiniteOperator::laplacian(LatticeBox::interval(-2, 6)?, 1.0, diag)?;
        let eig = h.eigen();
        for k in 0..eig.values.len() {
            match unique_continuation_lower_bound(&h, &eig.vector(k), eig.values[k], &a, &b, &reach, w) {
                Ok(u) => slack = slack.min(u.observed / u.bound),
                Err(e) => return outcome(false, format!("potential {pairs}: {e}")),
            }
            pairs += 1;
        }
    }
    outcome(true, format!("{pairs} eigenpairs, smallest observed/bound {slack:.3e}"))
}

fn frame_quality() -> Result<Outcome> {
    let run = example1_run(1e-2)?;
    let fam = &run.families[0];
    let orth = fam.path.max_orthogonality_defect();
    let translation = fam.translation_defect();
    let split = fam.endpoint_split_defect();
    let regular: Vec<usize> = fam
        .frame
        .r_prime()
        .sites()
        .enumerate()
        .filter(|(_, s)| !fam.frame.doubled().contains(s))
        .map(|(i, _)| i)
        .collect();
    let c = fam.path.column_deviation(&regular) / 1e-2;
    let passed = orth <= 1e-10 && translation <= 1e-8 && split <= 1e-8 && c < 10.0;
    outcome(
        passed,
        format!("orthogonality {orth:.1e}, translation {translation:.1e}, endpoint split {split:.1e}, column C = {c:.3}"),
    )
}

fn separation_check() -> Result<Outcome> {
    let cs: Vec<f64> = EPS_SWEEP
        .iter()
        .map(|&e| example1_run(e).map(|r| r.families[0].separation))
        .collect::<Result<_>>()?;
    let lo = cs.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = cs.iter().cloned().fold(0.0, f64::max);
    let spread = (hi - lo) / lo;
    outcome(lo > 0.0 && spread < 0.5, format!("c = {cs:.4?}, relative variation {spread:.2e}"))
}

fn pattern_check() -> Result<Outcome> {
    let setup = example1()?;
    let run = example1_run(1e-2)?;
    let xs = block_phases(&run, 5);
    let entries = pattern_exponents(&setup, &EPS_SWEEP, &xs, GRID_POINTS)?;
    let worst = entries.iter().map(|e| e.fitted - e.displayed as f64).fold(f64::INFINITY, f64::min);
    let better = entries.iter().filter(|e| e.fitted > e.displayed as f64 + 1.0).count();
    outcome(
        worst >= -0.2,
        format!("{} entries, min(fitted - displayed) = {worst:.3}, {better} entries better by more than 1", entries.len()),
    )
}

fn residual_check() -> Result<Outcome> {
    let setup = example1()?;
    let run = example1_run(1e-2)?;
    let xs = block_phases(&run, 5);
    let edges = residual_exponents(&setup, &EPS_SWEEP, &xs, GRID_POINTS)?;
    let worst = edges.iter().map(|e| e.fitted).fold(f64::INFINITY, f64::min);
    outcome(!edges.is_empty() && worst >= 3.0 - 0.2, format!("{} edges, smallest exponent {worst:.3}", edges.len()))
}

fn derivative_floor() -> Result<Outcome> {
    let mut lines = Vec::new();
    let mut passed = true;
    for setup in [example1()?, example5(2)?] {
        for fit in mu_fits(&setup, &EPS_SWEEP, 9, GRID_POINTS)? {
            let mu = fit.window.predicted_mu.unwrap_or(f64::NAN);
            let band = if mu <= 2.0 { 0.2 } else { 0.5 };
            passed &= fit.within(band);
            lines.push(format!("{} E={}: {:.3} (mu {mu})", setup.name, fit.window.energy, fit.fitted));
        }
    }
    outcome(passed, lines.join(", "))
}

fn ids_spike() -> Result<Outcome> {
    let setup = example1()?;
    let eps_list = [1e-1, 10f64.powf(-1.5), 1e-2];
    let grid: Vec<f64> = (0..401).map(|k| -2.0 + 4.0 * k as f64 / 400.0).collect();
    let curves = eps_list
        .iter()
        .map(|&e| compute_ids(&setup.f, &setup.omega, e, 401, 256, &grid, 11, Some((0.0, 1.5))))
        .collect::<Result<Vec<_>>>()?;
    let fit = spike_fit(&curves, 0.0, 2.0)?;
    let passed = (fit.height_exponent + 2.0).abs() <= 0.3 && (fit.width_exponent - 2.0).abs() <= 0.3;
    outcome(
        passed,
        format!(
            "height exponent {:.3}, width exponent {:.3}, spread exponent {:.3}",
            fit.height_exponent, fit.width_exponent, fit.spread_exponent
        ),
    )
}

fn covariance() -> Result<Outcome> {
    let setup = example1()?;
    let run = example1_run(1e-2)?;
    let mut f2_worst = 0.0f64;
    let mut u_worst = 0.0f64;
    let mut sets = true;
    let mut boxes = 0;
    for x in block_phases(&run, 4) {
        let bx = padded_analysis_box(&run.families, x, &run.analysis_box)?;
        u_worst = u_worst.max(u0_covariance_defect(&run.families[0], x, &bx.pad(1))?);
        for shift in [vec![1], vec![2], vec![-1]] {
            f2_worst = f2_worst.max(f2_covariance_defect(&run.model, &run.families, x, &bx, &shift)?);
            u_worst = u_worst.max(u2_covariance_defect(&run.families, x, &bx, &shift)?);
            sets &= singular_set_covariant(&setup.f, &setup.omega, setup.c_reg, x, &shift, &bx.pad(4))?;
            boxes += 1;
        }
    }
    outcome(
        f2_worst <= 1e-8 && u_worst <= 1e-8 && sets,
        format!("{boxes} overlap boxes: U defect {u_worst:.1e}, f2 defect {f2_worst:.1e}, singular sets equal: {sets}"),
    )
}

fn localization() -> Result<Outcome> {
    let setup = example1()?;
    let eps = 1e-2;
    let run = example1_run(eps)?;
    let target = eps.ln().abs();
    let mut min_ipr = f64::INFINITY;
    let mut min_ipr2 = f64::INFINITY;
    let (mut rate_lo, mut rate_hi) = (f64::INFINITY, 0.0f64);
    let mut defect = 0.0f64;
    for x in block_phases(&run, 3) {
        let c = run.conjugate(x)?;
        let h = run.model.h(x, &c.lattice)?;
        defect = defect.max(c.spectrum_defect(&h));
        let flat: Vec<Site> = c
            .lattice
            .sites()
            .filter(|n| setup.f.eval(setup.omega.phase(x, n)).is_ok_and(|v| v == 0.0))
            .collect();
        let eig = h.eigen();
        for k in 0..eig.values.len() {
            let v = eig.vector(k);
            min_ipr = min_ipr.min(ipr(&v));
            let site = c.lattice.site(v.iamax());
            let centre = if flat.contains(&site) { flat.clone() } else { vec![site] };
            let p = decay_profile(&h, &v, &centre)?;
            if p.fitted_rate.is_finite() {
                rate_lo = rate_lo.min(p.fitted_rate / target);
                rate_hi = rate_hi.max(p.fitted_rate / target);
            }
        }
        let e2 = dense_eigen(&c.h2);
        for k in 0..e2.values.len() {
            min_ipr2 = min_ipr2.min(ipr(&e2.vector(k)));
        }
    }
    let passed = min_ipr >= 0.9 && rate_lo >= 0.8 && rate_hi <= 1.2 && defect <= 1e-8;
    outcome(
        passed,
        format!(
            "min IPR of H {min_ipr:.3} (H2 {min_ipr2:.3}), rate / |log eps| in [{rate_lo:.2}, {rate_hi:.2}], spectrum defect {defect:.1e}"
        ),
    )
}

type Criterion = (usize, &'static str, Duration, fn() -> Result<Outcome>);

fn main() {
    let criteria: [Criterion; 11] = [
        (1, "series oracle", Duration::from_secs(1), series_oracle),
        (2, "Hellmann-Feynman", Duration::from_secs(5), hellmann_feynman_check),
        (3, "continuation bound", Duration::from_secs(10), continuation_check),
        (4, "frame quality", Duration::from_secs(30), frame_quality),
        (5, "Jacobi separation", Duration::from_secs(30), separation_check),
        (6, "eps-power pattern", Duration::from_secs(60), pattern_check),
        (7, "residual coupling cost", Duration::from_secs(120), residual_check),
        (8, "derivative floor", Duration::from_secs(300), derivative_floor),
        (9, "IDS spike scaling", Duration::from_secs(600), ids_spike),
        (10, "covariance identities", Duration::from_secs(30), covariance),
        (11, "localization diagnostics", Duration::from_secs(60), localization),
    ];
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut unexpected = Vec::new();
    for (id, name, budget, run) in criteria {
        if !only.is_empty() && !only.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let result = run();
        let elapsed = start.elapsed();
        let (passed, detail) = match result {
            Ok(o) => (o.passed && elapsed <= budget, o.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        let status = if passed { "PASS" } else { "FAIL" };
        let note = if !passed && KNOWN_FAILURES.contains(&id) { " (known failure)" } else { "" };
        println!(
            "criterion {id:>2} {status}{note}: {name}; {detail}; {:.2}s of {}s",
            elapsed.as_secs_f64(),
            budget.as_secs()
        );
        if !passed && !KNOWN_FAILURES.contains(&id) {
            unexpected.push(id);
        }
    }
    if !unexpected.is_empty() {
        eprintln!("unexpected failures: {unexpected:?}");
        std::process::exit(1);
    }
}
