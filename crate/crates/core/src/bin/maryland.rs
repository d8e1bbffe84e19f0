//! Manifest-driven experiment runner.
//!
//! Exit status: 0 when every asserted check passes, 1 when a check fails,
//! 2 when the manifest cannot be loaded or validated.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};

use maryland_core::analysis::{compute_ids, decay_profile, ipr, spike_fit, IdsCurve};
use maryland_core::blockdiag::HomotopyOptions;
use maryland_core::lattice::LatticeBox;
use maryland_core::linalg::dense_eigen;
use maryland_core::manifest::{load_manifest, LoadedManifest, ResolvedExperiment};
use maryland_core::movingblock::{mu_fits, residual_exponents, verify_setup, CheckItem, ExampleSetup, HypothesisReport};
use maryland_core::operator::build_h;
use maryland_core::perturbation::{convergence_report, diagonal_separation, rs_series};
use maryland_core::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "maryland", version, about = "Moving-block experiments for Maryland-type operators with flat pieces")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment manifest (TOML).
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
    /// Output directory; overrides the manifest's `output`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Treat warnings as failures.
    #[arg(long, global = true)]
    strict: bool,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
enum Command {
    /// Hypothesis checklist for the manifest's example.
    Verify,
    /// Eigenpairs of H(x) on the analysis box with decay profiles and IPR.
    Spectrum,
    /// Rayleigh-Schrödinger coefficients and convergence diagnostics.
    Series,
    /// Homotopy frames of every block and their quality checks.
    Block,
    /// Covariant conjugation: f2' fits and residual coupling exponents.
    MovingBlock,
    /// Integrated density of states and spike fits.
    Ids,
    /// H(x) on the analysis box as an entry list.
    DumpOperator,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Verify => "verify",
            Command::Spectrum => "spectrum",
            Command::Series => "series",
            Command::Block => "block",
            Command::MovingBlock => "moving-block",
            Command::Ids => "ids",
            Command::DumpOperator => "dump-operator",
        }
    }
}

/// Output directory plus the reproducibility header shared by all artifacts.
struct Outputs {
    dir: PathBuf,
    header: String,
    started: Instant,
}

impl Outputs {
    fn write(&self, name: &str, body: &str) -> Result<()> {
        let mut text = self.header.clone();
        // Only this line varies between identical runs.
        let _ = writeln!(text, "# wall-time-s: {:.3}", self.started.elapsed().as_secs_f64());
        text.push_str(body);
        std::fs::write(self.dir.join(name), text)?;
        Ok(())
    }
}

/// Accumulates pass/fail checks and warnings of one run.
#[derive(Default)]
struct Checks {
    items: Vec<CheckItem>,
    warnings: Vec<String>,
}

impl Checks {
    fn check(&mut self, name: &str, passed: bool, witness: impl Into<String>) {
        self.items.push(CheckItem { name: name.to_string(), passed, witness: witness.into() });
    }

    fn warn(&mut self, msg: impl Into<String>) {
        self.warnings.push(msg.into());
    }

    fn extend(&mut self, report: &HypothesisReport) {
        self.items.extend(report.items.iter().cloned());
    }

    fn text(&self) -> String {
        let r = HypothesisReport { items: self.items.clone(), recommendation: None };
        let mut s = r.to_text();
        for w in &self.warnings {
            let _ = writeln!(s, "warning = {w}");
        }
        s
    }

    fn status(&self, strict: bool) -> ExitCode {
        if let Some(f) = self.items.iter().find(|i| !i.passed) {
            eprintln!("{} fails: {}", f.name, f.witness);
            return ExitCode::from(1);
        }
        if strict {
            if let Some(w) = self.warnings.first() {
                eprintln!("warning treated as failure: {w}");
                return ExitCode::from(1);
            }
        }
        ExitCode::SUCCESS
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            eprintln!("cannot configure {n} threads: {e}");
            return ExitCode::from(2);
        }
    }
    let Some(path) = cli.manifest.as_deref() else {
        eprintln!("manifest error: --manifest is required");
        return ExitCode::from(2);
    };
    let loaded = match load_manifest(path) {
        Ok(m) => m,
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::from(2);
        }
    };
    let resolved = match loaded.manifest.resolve() {
        Ok(r) => r,
        Err(e) => {
            eprintln!("manifest error: {e}");
            return ExitCode::from(2);
        }
    };
    let dir = cli
        .out
        .clone()
        .or_else(|| loaded.manifest.output.clone())
        .unwrap_or_else(|| PathBuf::from("out").join(&loaded.manifest.name));
    if let Err(e) = std::fs::create_dir_all(&dir) {
        eprintln!("cannot create {}: {e}", dir.display());
        return ExitCode::from(2);
    }
    let outputs = Outputs { header: header(&loaded, cli.command), dir, started: Instant::now() };
    let result = match cli.command {
        Command::Verify => run_verify(&loaded, &resolved, &outputs),
        Command::Spectrum => run_spectrum(&loaded, &resolved, &outputs),
        Command::Series => run_series(&loaded, &resolved, &outputs),
        Command::Block => run_block(&loaded, &resolved, &outputs),
        Command::MovingBlock => run_moving_block(&loaded, &resolved, &outputs),
        Command::Ids => run_ids(&loaded, &resolved, &outputs),
        Command::DumpOperator => run_dump(&loaded, &resolved, &outputs),
    };
    match result {
        Ok(checks) => {
            print!("{}", checks.text());
            if let Err(e) = outputs.write("checks.txt", &checks.text()) {
                eprintln!("{e}");
                return ExitCode::from(1);
            }
            checks.status(cli.strict)
        }
        Err(e @ Error::Manifest(_)) => {
            eprintln!("{e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("{} failed: {e}", cli.command.name());
            ExitCode::from(1)
        }
    }
}

fn header(loaded: &LoadedManifest, command: Command) -> String {
    format!(
        "# maryland {} ({})\n# manifest: {} sha256 {}\n# name: {}, seed: {}\n",
        env!("CARGO_PKG_VERSION"),
        command.name(),
        file_name(&loaded.path),
        loaded.sha256,
        loaded.manifest.name,
        loaded.manifest.seed
    )
}

fn file_name(p: &Path) -> String {
    p.file_name().map_or_else(|| p.display().to_string(), |n| n.to_string_lossy().into_owned())
}

fn primary_eps(loaded: &LoadedManifest) -> f64 {
    loaded.manifest.eps[0]
}

fn homotopy(loaded: &LoadedManifest) -> HomotopyOptions {
    HomotopyOptions { steps: loaded.manifest.grids.t_steps, ..HomotopyOptions::default() }
}

fn spectrum_box(loaded: &LoadedManifest, setup: &ExampleSetup) -> Result<(f64, LatticeBox)> {
    let sec = loaded.manifest.spectrum.as_ref();
    let x = sec.map_or_else(|| setup.blocks.first().map_or(0.0, |b| b.x0 + 0.5 * setup.omega.omega[0]), |s| s.x);
    let bx = match sec.and_then(|s| s.box_lo.clone().zip(s.box_hi.clone())) {
        Some((lo, hi)) => LatticeBox::new(lo, hi)?,
        None => setup.analysis_box.clone(),
    };
    Ok((x, bx))
}

fn run_verify(loaded: &LoadedManifest, resolved: &ResolvedExperiment, out: &Outputs) -> Result<Checks> {
    let mut checks = Checks::default();
    let mut recommendation = None;
    if let Some(cfg) = &resolved.single_flat {
        let r = cfg.verify();
        checks.extend(&r);
        if !r.all_passed() {
            out.write("checklist.txt", &checks.text())?;
            return Ok(checks);
        }
    }
    if !resolved.setup.blocks.is_empty() {
        let r = verify_setup(&resolved.setup, primary_eps(loaded), loaded.manifest.grids.x_points, true);
        recommendation = r.recommendation.clone();
        checks.extend(&r);
    } else {
        checks.warn("no blocks declared; only exponents were predicted");
        for w in &resolved.setup.windows {
            checks.check(
                "window",
                true,
                format!(
                    "[{:.6}, {:.6}] at E = {}, predicted mu = {}",
                    w.left,
                    w.right,
                    w.energy,
                    w.predicted_mu.map_or("none".into(), |m| m.to_string())
                ),
            );
        }
    }
    if let Some(r) = recommendation {
        checks.warn(format!("recommendation: {r}"));
    }
    out.write("checklist.txt", &checks.text())?;
    Ok(checks)
}

fn run_spectrum(loaded: &LoadedManifest, resolved: &ResolvedExperiment, out: &Outputs) -> Result<Checks> {
    let setup = &resolved.setup;
    let eps = primary_eps(loaded);
    let (x, bx) = spectrum_box(loaded, setup)?;
    let h = build_h(&setup.f, &setup.omega, eps, x, &bx)?;
    let eig = h.eigen();
    let flat: Vec<_> = bx
        .sites()
        .filter(|n| setup.f.eval(setup.omega.phase(x, n)).is_ok_and(|v| setup.f.flat_pieces().iter().any(|p| p.2 == v)))
        .collect();
    let mut table = String::from("index,energy,ipr,rate,rate_over_log_eps,centre\n");
    let mut decay = String::from("index,dist,amp\n");
    let mut checks = Checks::default();
    let target = if eps > 0.0 { eps.ln().abs() } else { f64::INFINITY };
    let mut min_ipr = f64::INFINITY;
    for k in 0..eig.values.len() {
        let v = eig.vector(k);
        let site = bx.site(v.iamax());
        let centre = if flat.contains(&site) { flat.clone() } else { vec![site] };
        let p = decay_profile(&h, &v, &centre)?;
        let q = ipr(&v);
        min_ipr = min_ipr.min(q);
        let _ = writeln!(
            table,
            "{k},{:.12e},{q:.6},{:.6},{:.6},\"{:?}\"",
            eig.values[k],
            p.fitted_rate,
            p.fitted_rate / target,
            centre
        );
        for (d, a) in &p.samples {
            let _ = writeln!(decay, "{k},{d},{a:.6e}");
        }
    }
    out.write("spectrum.csv", &table)?;
    out.write("decay.csv", &decay)?;
    checks.check("eigenvalues finite", eig.values.iter().all(|v| v.is_finite()), format!("{} eigenvalues at x = {x}", eig.values.len()));
    if min_ipr < 0.9 {
        checks.warn(format!("smallest IPR of H is {min_ipr:.3}"));
    }
    if !setup.blocks.is_empty() && eps > 0.0 {
        let run = setup.build(eps, loaded.manifest.grids.x_points, &homotopy(loaded))?;
        let c = run.conjugate(x)?;
        let hh = run.model.h(x, &c.lattice)?;
        let defect = c.spectrum_defect(&hh);
        checks.check("spectrum of H2", defect <= 1e-8, format!("max sorted difference {defect:.3e}"));
        let e2 = dense_eigen(&c.h2);
        let ipr2 = (0..e2.values.len()).map(|k| ipr(&e2.vector(k))).fold(f64::INFINITY, f64::min);
        checks.check("IPR of H2", ipr2 >= 0.9, format!("smallest {ipr2:.6}"));
    }
    Ok(checks)
}

fn run_series(loaded: &LoadedManifest, resolved: &ResolvedExperiment, out: &Outputs) -> Result<Checks> {
    let sec = loaded.manifest.series.as_ref().ok_or_else(|| Error::Manifest("`series` needs a [series] section".into()))?;
    let setup = &resolved.setup;
    let eps = primary_eps(loaded);
    let bx = LatticeBox::new(sec.box_lo.clone(), sec.box_hi.clone())?;
    let h = build_h(&setup.f, &setup.omega, eps, sec.x, &bx)?;
    let coeffs = rs_series(&h, &sec.base, sec.order)?;
    let delta = diagonal_separation(h.diagonal())?;
    let phi_norm = h.hopping_dense().row_iter().map(|r| r.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max);
    let mut csv = Vec::new();
    coeffs.write_csv(&mut csv)?;
    out.write("series.csv", &String::from_utf8_lossy(&csv))?;
    let mut checks = Checks::default();
    let eig = h.eigen();
    let n = coeffs.base_index;
    let branch = (0..eig.values.len()).max_by(|&a, &b| eig.vectors[(n, a)].abs().total_cmp(&eig.vectors[(n, b)].abs())).unwrap();
    let exact = eig.values[branch];
    let partial = coeffs.energy_sum(eps);
    let rel = (partial - exact).abs() / exact.abs().max(f64::MIN_POSITIVE);
    let mut report = format!("exact,{exact:.15e}\npartial_sum,{partial:.15e}\nrelative_error,{rel:.3e}\ndelta,{delta:.6e}\n");
    if sec.order >= 3 {
        let c = convergence_report(&coeffs, delta, phi_norm, eps)?;
        let _ = writeln!(report, "bound_constant,{:.6e}\ndiverging,{}", c.bound_constant, c.diverging);
        if c.diverging {
            checks.warn("coefficient growth exceeds 1/eps");
        }
    }
    out.write("convergence.csv", &format!("quantity,value\n{report}"))?;
    // Truncation error of an order-k sum is about (eps phi / delta)^(k+1).
    let expected = (eps * phi_norm / delta).powi(sec.order as i32 + 1) * 10.0 + 1e-13;
    checks.check("series matches eigensolver", rel <= expected.max(1e-8), format!("relative error {rel:.3e}"));
    Ok(checks)
}

fn run_block(loaded: &LoadedManifest, resolved: &ResolvedExperiment, out: &Outputs) -> Result<Checks> {
    let setup = &resolved.setup;
    if setup.blocks.is_empty() {
        return Err(Error::Manifest("`block` needs at least one block".into()));
    }
    let eps = primary_eps(loaded);
    let run = setup.build(eps, loaded.manifest.grids.x_points, &homotopy(loaded))?;
    let mut checks = Checks::default();
    let mut csv = String::from("block,x,kappa_min_gap,orthogonality\n");
    for (j, fam) in run.families.iter().enumerate() {
        let p = &fam.path;
        for (k, x) in p.x_grid.iter().enumerate() {
            let u = &p.frames[k];
            let gap = p.eigenvalues[k].windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
            let orth = maryland_core::linalg::orthogonality_defect(u);
            let _ = writeln!(csv, "{j},{x:.12e},{gap:.6e},{orth:.3e}");
        }
        let orth = p.max_orthogonality_defect();
        checks.check(&format!("orthogonality block {j}"), orth <= 1e-10, format!("{orth:.3e}"));
        let tr = fam.translation_defect();
        checks.check(&format!("translation block {j}"), tr <= 1e-8, format!("{tr:.3e}"));
        let sp = fam.endpoint_split_defect();
        checks.check(&format!("endpoint split block {j}"), sp <= 1e-8, format!("{sp:.3e}"));
        checks.check(&format!("separation block {j}"), fam.separation >= setup.c_sep, format!("min gap / eps = {:.4}", fam.separation));
        let regular: Vec<usize> = fam
            .frame
            .r_prime()
            .sites()
            .enumerate()
            .filter(|(_, s)| !fam.frame.doubled().contains(s))
            .map(|(i, _)| i)
            .collect();
        let dev = p.column_deviation(&regular);
        let c = if eps > 0.0 { dev / eps } else { 0.0 };
        checks.check(&format!("regular columns block {j}"), c < 10.0, format!("|psi_j - e_j| <= {c:.3} eps"));
    }
    out.write("block.csv", &csv)?;
    Ok(checks)
}

fn mu_band(mu: f64) -> f64 {
    if mu <= 2.0 {
        0.2
    } else {
        0.5
    }
}

fn run_moving_block(loaded: &LoadedManifest, resolved: &ResolvedExperiment, out: &Outputs) -> Result<Checks> {
    let setup = &resolved.setup;
    if setup.blocks.is_empty() {
        return Err(Error::Manifest("`moving-block` needs at least one block".into()));
    }
    let g = &loaded.manifest.grids;
    let eps = &loaded.manifest.eps;
    let mut checks = Checks::default();
    let fits = mu_fits(setup, eps, g.window_samples, g.x_points)?;
    let mut csv = String::from("window,left,right,energy,predicted_mu,fitted_mu,residual\n");
    let mut floors = String::from("window,eps,floor,median\n");
    for (k, f) in fits.iter().enumerate() {
        let w = &f.window;
        let _ = writeln!(
            csv,
            "{k},{:.12e},{:.12e},{},{},{:.6},{:.3e}",
            w.left,
            w.right,
            w.energy,
            w.predicted_mu.map_or("".into(), |m| m.to_string()),
            f.fitted,
            f.residual
        );
        for (j, e) in f.eps.iter().enumerate() {
            let _ = writeln!(floors, "{k},{e:.6e},{:.12e},{:.12e}", f.floor[j], f.median[j]);
        }
        match w.predicted_mu {
            Some(mu) => {
                let band = mu_band(mu);
                checks.check(&format!("mu window {k}"), f.within(band), format!("fitted {:.3}, predicted {mu} +- {band}", f.fitted))
            }
            None => checks.warn(format!("window {k} has no prediction")),
        }
    }
    out.write("mu_fit.csv", &csv)?;
    out.write("f2_floor.csv", &floors)?;
    if eps.len() >= 2 {
        let w1 = setup.omega.omega[0];
        let x0 = setup.blocks[0].x0;
        let xs: Vec<f64> = (0..5).map(|k| x0 + w1 * (k as f64 + 0.5) / 5.0).collect();
        let edges = residual_exponents(setup, eps, &xs, g.x_points)?;
        let mut csv = String::from("x,from,to,fitted\n");
        for e in &edges {
            let _ = writeln!(csv, "{:.12e},\"{:?}\",\"{:?}\",{:.6}", e.x, e.from, e.to, e.fitted);
        }
        out.write("residual.csv", &csv)?;
        let worst = edges.iter().map(|e| e.fitted).fold(f64::INFINITY, f64::min);
        checks.check("residual couplings", worst >= 3.0 - 0.2, format!("smallest exponent {worst:.3} over {} edges", edges.len()));
    } else {
        checks.warn("a single eps value cannot fit exponents");
    }
    Ok(checks)
}

fn run_ids(loaded: &LoadedManifest, resolved: &ResolvedExperiment, out: &Outputs) -> Result<Checks> {
    let sec = loaded.manifest.ids.as_ref().ok_or_else(|| Error::Manifest("`ids` needs an [ids] section".into()))?;
    let setup = &resolved.setup;
    let g = &loaded.manifest.grids;
    let lo = sec.grid_lo.unwrap_or(sec.energy - 2.0);
    let hi = sec.grid_hi.unwrap_or(sec.energy + 2.0);
    let grid: Vec<f64> = (0..sec.grid_points).map(|k| lo + (hi - lo) * k as f64 / (sec.grid_points - 1) as f64).collect();
    let size = g.box_sizes[0];
    let curves: Vec<IdsCurve> = loaded
        .manifest
        .eps
        .iter()
        .map(|&e| compute_ids(&setup.f, &setup.omega, e, size, g.x_samples, &grid, loaded.manifest.seed, Some((sec.energy, sec.half_width))))
        .collect::<Result<_>>()?;
    let mut ids = String::from("eps,energy,value\n");
    let mut der = String::from("eps,energy,density\n");
    for c in &curves {
        for (e, v) in c.energy_grid.iter().zip(&c.counts) {
            let _ = writeln!(ids, "{:.6e},{e:.12e},{v:.12e}", c.eps);
        }
        for (e, v) in c.derivative() {
            let _ = writeln!(der, "{:.6e},{e:.12e},{v:.12e}", c.eps);
        }
    }
    out.write("ids.csv", &ids)?;
    out.write("ids_derivative.csv", &der)?;
    let mut checks = Checks::default();
    match spike_fit(&curves, sec.energy, sec.mu) {
        Ok(fit) => {
            let mut csv = Vec::new();
            fit.write_csv(&mut csv)?;
            out.write("spike_fit.csv", &String::from_utf8_lossy(&csv))?;
            let band = if sec.mu <= 2.0 { 0.3 } else { 0.5 };
            checks.check(
                "spike height",
                (fit.height_exponent + sec.mu).abs() <= band,
                format!("exponent {:.3}, predicted {} +- {band}", fit.height_exponent, -sec.mu),
            );
            checks.check(
                "spike width",
                (fit.width_exponent - sec.mu).abs() <= band,
                format!("exponent {:.3}, predicted {} +- {band}", fit.width_exponent, sec.mu),
            );
        }
        Err(e @ Error::PeakNotFound(_)) => checks.check("spike", false, e.to_string()),
        Err(e) => return Err(e),
    }
    Ok(checks)
}

fn run_dump(loaded: &LoadedManifest, resolved: &ResolvedExperiment, out: &Outputs) -> Result<Checks> {
    let setup = &resolved.setup;
    let (x, bx) = spectrum_box(loaded, setup)?;
    let h = build_h(&setup.f, &setup.omega, primary_eps(loaded), x, &bx)?;
    let mut buf = Vec::new();
    h.write_dump(&mut buf)?;
    out.write("operator.txt", &String::from_utf8_lossy(&buf))?;
    let mut checks = Checks::default();
    checks.check("operator", true, format!("{} sites at x = {x}", h.dim()));
    Ok(checks)
}
