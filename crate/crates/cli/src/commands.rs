use std::f64::consts::PI;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use steklov_core::annulus_oracle::{annulus_eigenpair, annulus_radial_eigenvalues, Branch};
use steklov_core::dtn_solver::{
    assemble_eigensystem, comparison_sequence, solve_system, spectrum_gap_report, GapReport, SolveDiagnostics,
    SteklovSpectrum,
};
use steklov_core::nodal::{decay_profile, nodal_report_with, DecayProfile, InteriorField, NodalReport};
use steklov_core::quasimode::{
    cluster_computed_spectrum, coefficient_matrix, decompose_eigenfunction, default_collar_width, defect_scan,
    near_orthogonality_report, rate_constants, residual_decay, NearOrthogonalityReport, RateConstants,
    ResidualDecay,
};
use steklov_core::rates::{fit_exponential_outcome, FitOutcome};
use steklov_core::{Error, KoebeDomain, ScalarField, ValidDomain};

use crate::config::RunConfig;
use crate::output::{num, Sink};

/// How a command finished when it did not fail outright.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Ok,
    /// Eigenpairs were flagged or dropped by the solver.
    Spurious,
    /// An oracle cross-check missed its tolerance.
    CheckFailed,
}

pub struct Run {
    pub cfg: RunConfig,
    pub domain: ValidDomain,
    pub out: PathBuf,
}

impl Run {
    pub fn new(cfg: RunConfig) -> Result<Self> {
        let domain = cfg.validated_domain()?;
        let out = cfg.out.clone();
        Ok(Self { cfg, domain, out })
    }

    fn sink(&self, command: &str) -> Result<Sink> {
        Sink::new(&self.out, command, self.domain.hash(), self.cfg.hash())
    }

    fn solve(&self) -> Result<SteklovSpectrum> {
        let sys = assemble_eigensystem(&self.domain, self.cfg.m_max)?;
        Ok(solve_system(&self.domain, &sys, self.cfg.n_max)?)
    }

    fn collar_width(&self) -> f64 {
        self.cfg.collar_width.unwrap_or_else(|| default_collar_width(&self.domain))
    }

    fn rates(&self) -> Result<RateConstants> {
        Ok(rate_constants(&self.domain, self.collar_width())?)
    }

    fn delta(&self) -> Result<f64> {
        match self.cfg.delta {
            Some(d) => Ok(d),
            None => Ok(self.rates()?.delta),
        }
    }

    fn indices(&self, s: &SteklovSpectrum, n: Option<usize>, all: bool) -> Result<Vec<usize>> {
        match (n, all) {
            (_, true) => Ok((0..s.len()).collect()),
            (Some(n), false) if n < s.len() => Ok(vec![n]),
            (Some(n), false) => bail!("eigen index {n} is outside 0..{}", s.len()),
            (None, false) => bail!("pass --n INDEX or --all"),
        }
    }
}

#[derive(Serialize)]
struct SpectrumDump<'a> {
    eigenvalues: &'a [f64],
    residuals: &'a [f64],
    multiplicity: Vec<String>,
    m_max: usize,
    radii: &'a [f64],
    lengths: &'a [f64],
    diagnostics: &'a SolveDiagnostics,
    gap_report: Option<GapReport>,
}

fn gap_rows(s: &SteklovSpectrum) -> Result<(Vec<Vec<String>>, Option<GapReport>)> {
    let comparison = comparison_sequence(&s.lengths, s.len())?;
    let tags = s.multiplicity_tags();
    let rows = (0..s.len())
        .map(|n| {
            let mu = comparison.entries[n].value;
            vec![
                n.to_string(),
                num(s.eigenvalues[n]),
                num(mu),
                num((s.eigenvalues[n] - mu).abs()),
                num(s.residuals[n]),
                tags[n].clone(),
            ]
        })
        .collect();
    let report = if s.len() >= 21 { Some(spectrum_gap_report(s, &comparison)?) } else { None };
    Ok((rows, report))
}

pub fn spectrum(run: &Run) -> Result<Status> {
    let s = run.solve()?;
    let sink = run.sink("spectrum")?;
    let (rows, gap_report) = gap_rows(&s)?;
    sink.csv("spectrum.csv", &["n", "lambda", "mu", "gap", "residual", "multiplicity"], &rows)?;
    sink.json(
        "spectrum.json",
        &SpectrumDump {
            eigenvalues: &s.eigenvalues,
            residuals: &s.residuals,
            multiplicity: s.multiplicity_tags(),
            m_max: s.m_max,
            radii: &s.radii,
            lengths: &s.lengths,
            diagnostics: &s.diagnostics,
            gap_report,
        },
    )?;
    for n in &s.diagnostics.flagged {
        eprintln!("warning: eigenpair {n} has residual {:e}", s.residuals[*n]);
    }
    if s.diagnostics.truncated > 0 {
        eprintln!(
            "warning: {} eigenpairs above the reliable limit {} were dropped",
            s.diagnostics.truncated, s.diagnostics.reliable_limit
        );
    }
    Ok(if s.has_spurious() { Status::Spurious } else { Status::Ok })
}

#[derive(Serialize)]
struct DefectFit {
    component: usize,
    fit: FitOutcome,
}

#[derive(Serialize)]
struct QuasimodeSummary {
    cluster_eps: f64,
    clusters: usize,
    rate_constants: RateConstants,
    defect_fits: Vec<DefectFit>,
    near_orthogonality: NearOrthogonalityReport,
    residual_decay: ResidualDecay,
    max_row_tail: f64,
    max_basis_truncation: f64,
}

struct QuasimodeRun {
    summary: QuasimodeSummary,
    defects: Vec<Vec<String>>,
    decomposition: Vec<Vec<String>>,
    clusters: Vec<Vec<String>>,
}

fn quasimode_run(run: &Run, s: &SteklovSpectrum) -> Result<QuasimodeRun> {
    let domain = &run.domain;
    let (partition, _) = cluster_computed_spectrum(s, run.cfg.cluster_eps).map_err(|e| match e {
        Error::InvalidParameter(m) => anyhow::anyhow!("configuration error: {m}"),
        e => anyhow::Error::from(e).context("clustering the spectrum; a larger n_max may be needed"),
    })?;
    let coeffs = coefficient_matrix(s, domain)?;

    let sys = assemble_eigensystem(domain, run.cfg.m_max)?;
    let modes: Vec<usize> = (0..=(run.cfg.m_max / 2).min(64)).collect();
    let floor = 100.0 * s.residuals.iter().cloned().fold(0.0, f64::max);
    let mut defects = Vec::new();
    let mut defect_fits = Vec::new();
    for j in 0..domain.num_components() {
        let scan = defect_scan(&sys, domain, j, &modes)?;
        for &(m, d) in &scan {
            defects.push(vec![j.to_string(), m.to_string(), num(d)]);
        }
        let (xs, ys): (Vec<f64>, Vec<f64>) = scan.iter().filter(|p| p.0 > 0).map(|&(m, d)| (m as f64, d)).unzip();
        defect_fits.push(DefectFit { component: j, fit: fit_exponential_outcome(&xs, &ys, floor) });
    }

    let mut decomposition = Vec::new();
    for n in 0..partition.lambda_cluster.len() {
        let d = decompose_eigenfunction(s, domain, &partition, &coeffs, n)?;
        for (j, terms) in d.terms.iter().enumerate() {
            for t in terms {
                decomposition.push(vec![
                    n.to_string(),
                    j.to_string(),
                    t.mode.to_string(),
                    num(t.b_plus),
                    num(t.b_minus),
                    num(d.residual_norm),
                ]);
            }
        }
    }
    let clusters = (0..partition.len())
        .map(|i| {
            let join = |v: Vec<usize>| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ");
            vec![
                i.to_string(),
                num(partition.intervals[i].lo),
                num(partition.intervals[i].hi),
                join(partition.lambda_members(i)),
                join(partition.mu_members(i)),
            ]
        })
        .collect();

    let residual = residual_decay(s, domain, &partition, &coeffs)?;
    let mut rates = run.rates()?;
    rates.fitted_residual_rate = residual.envelope.fitted().map(|f| -f.slope);
    let summary = QuasimodeSummary {
        cluster_eps: partition.eps,
        clusters: partition.len(),
        rate_constants: rates,
        defect_fits,
        near_orthogonality: near_orthogonality_report(&coeffs, &partition),
        residual_decay: residual,
        max_row_tail: coeffs.tails.iter().map(|t| t.abs()).fold(0.0, f64::max),
        max_basis_truncation: coeffs.basis_truncation.iter().cloned().fold(0.0, f64::max),
    };
    Ok(QuasimodeRun { summary, defects, decomposition, clusters })
}

pub fn quasimode(run: &Run) -> Result<Status> {
    let s = run.solve()?;
    let q = quasimode_run(run, &s)?;
    let sink = run.sink("quasimode")?;
    sink.csv("defects.csv", &["component", "m", "defect"], &q.defects)?;
    sink.csv("decomposition.csv", &["n", "component", "m", "b_plus", "b_minus", "f_norm"], &q.decomposition)?;
    sink.csv("clusters.csv", &["i", "A", "B", "lambda_members", "mu_members"], &q.clusters)?;
    sink.json("quasimode.json", &q.summary)?;
    Ok(Status::Ok)
}

fn ratio_row(r: &NodalReport) -> Vec<String> {
    vec![
        r.n.to_string(),
        num(r.lambda),
        num(r.length),
        r.ratio.map(num).unwrap_or_default(),
        num(r.bulk_length),
        r.converged.to_string(),
    ]
}

const RATIO_HEADER: [&str; 6] = ["n", "lambda", "length", "ratio", "bulk_length", "converged"];

pub fn nodal(run: &Run, n: Option<usize>, all: bool) -> Result<Status> {
    let s = run.solve()?;
    let delta = run.delta()?;
    let sink = run.sink("nodal")?;
    let mut rows = Vec::new();
    for n in run.indices(&s, n, all)? {
        let field = InteriorField::new(&run.domain, &s, n)?;
        let r = nodal_report_with(&field, &s, delta, run.cfg.grid_refinements)?;
        sink.json(&format!("nodal_{n:04}.json"), &r)?;
        sink.svg(&format!("nodal_{n:04}.svg"), &run.domain, &r)?;
        if !r.converged {
            eprintln!("warning: nodal length of eigenfunction {n} moved by more than 1% under refinement");
        }
        rows.push(ratio_row(&r));
    }
    if all {
        sink.csv("nodal_ratios.csv", &RATIO_HEADER, &rows)?;
    }
    Ok(Status::Ok)
}

pub fn decay(run: &Run, n: Option<usize>, all: bool) -> Result<Status> {
    let s = run.solve()?;
    let w = run.collar_width();
    let depths: Vec<f64> = (1..=8).map(|i| w * i as f64 / 8.0).collect();
    let sink = run.sink("decay")?;
    let mut rows = Vec::new();
    let mut profiles: Vec<(usize, DecayProfile)> = Vec::new();
    for n in run.indices(&s, n, all)? {
        let field = InteriorField::new(&run.domain, &s, n)?;
        for j in 0..run.domain.num_components() {
            let p = decay_profile(&field, &run.domain, j, s.eigenvalues[n], &depths, run.cfg.decay_angles)?;
            for (d, v) in p.depths.iter().zip(&p.sup) {
                rows.push(vec![n.to_string(), j.to_string(), num(*d), num(*v)]);
            }
            profiles.push((n, p));
        }
    }
    sink.csv("decay.csv", &["n", "component", "depth", "sup"], &rows)?;
    #[derive(Serialize)]
    struct Entry<'a> {
        n: usize,
        profile: &'a DecayProfile,
    }
    let entries: Vec<Entry> = profiles.iter().map(|(n, p)| Entry { n: *n, profile: p }).collect();
    sink.json("decay.json", &entries)?;
    Ok(Status::Ok)
}

#[derive(Serialize)]
struct OracleRow {
    k: usize,
    branch: Branch,
    sigma: f64,
    computed: f64,
    relative_error: f64,
    field_residual: f64,
    pass: bool,
}

/// Relative error tolerance on eigenvalues.
const ORACLE_EIGEN_TOL: f64 = 1e-7;
/// Relative least-squares residual tolerance on sampled eigenfunctions.
const ORACLE_FIELD_TOL: f64 = 1e-6;

pub fn oracle(base: &RunConfig, eps: f64, k_max: usize) -> Result<Status> {
    if !(eps > 0.0 && eps < 1.0) {
        bail!("--eps must lie in (0, 1)");
    }
    if k_max == 0 {
        bail!("--k-max must be positive");
    }
    let mut cfg = base.clone();
    cfg.domain = KoebeDomain::annulus(eps);
    let top = annulus_eigenpair(eps, k_max, Branch::Plus)?.sigma;
    // every eigenvalue up to the largest root, both progressions, with multiplicity
    let needed = 2 * top.floor() as usize + 1 + 2 * (top * eps).floor() as usize + 1 + 4;
    let limit = 2 * (2 * cfg.m_max + 1) / 4 - 1;
    if needed > limit {
        bail!("k_max = {k_max} needs {needed} eigenpairs; raise m_max above {}", cfg.m_max);
    }
    cfg.n_max = needed;
    let run = Run::new(cfg)?;
    let s = run.solve()?;
    let mut rng = ChaCha8Rng::seed_from_u64(run.cfg.seed);
    let mut rows = Vec::new();
    let by_distance = |x: f64| {
        let mut idx: Vec<usize> = (0..s.len()).collect();
        idx.sort_by(|&a, &b| (s.eigenvalues[a] - x).abs().total_cmp(&(s.eigenvalues[b] - x).abs()));
        idx
    };
    for k in 1..=k_max {
        for branch in [Branch::Minus, Branch::Plus] {
            let p = annulus_eigenpair(eps, k, branch)?;
            let idx = by_distance(p.sigma);
            let relative_error = idx[..2]
                .iter()
                .map(|&n| (s.eigenvalues[n] - p.sigma).abs() / p.sigma)
                .fold(0.0, f64::max);
            // near-coincident roots of different modes can mix, so fit over up to four vectors
            let basis: Vec<usize> = idx
                .iter()
                .take(4)
                .enumerate()
                .filter(|&(i, &n)| i < 2 || (s.eigenvalues[n] - p.sigma).abs() <= 1e-6 * (1.0 + p.sigma))
                .map(|(_, &n)| n)
                .collect();
            let phase = rng.random_range(0.0..2.0 * PI);
            let truth = p.field(phase);
            let fields: Vec<InteriorField> =
                basis.iter().map(|&n| InteriorField::new(&run.domain, &s, n)).collect::<steklov_core::Result<_>>()?;
            let pts: Vec<[f64; 2]> = (0..24)
                .map(|_| {
                    let r = rng.random_range(eps + 0.1 * (1.0 - eps)..1.0 - 0.1 * (1.0 - eps));
                    let t = rng.random_range(0.0..2.0 * PI);
                    [r * t.cos(), r * t.sin()]
                })
                .collect();
            let a = DMatrix::from_fn(pts.len(), fields.len(), |i, c| fields[c].value(pts[i]).unwrap_or(f64::NAN));
            let b = DVector::from_iterator(pts.len(), pts.iter().map(|&q| truth.value(q).unwrap_or(f64::NAN)));
            let field_residual = match a.clone().svd(true, true).solve(&b, 1e-14) {
                Ok(c) => (&a * c - &b).norm() / b.norm(),
                Err(_) => f64::INFINITY,
            };
            let pass = relative_error <= ORACLE_EIGEN_TOL && field_residual <= ORACLE_FIELD_TOL;
            rows.push(OracleRow {
                k,
                branch,
                sigma: p.sigma,
                computed: s.eigenvalues[idx[0]],
                relative_error,
                field_residual,
                pass,
            });
        }
    }
    let radial = annulus_radial_eigenvalues(eps)?[1];
    let radial_err = (s.eigenvalues[by_distance(radial)[0]] - radial).abs() / radial;

    let sink = run.sink("oracle")?;
    let csv_rows: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.k.to_string(),
                format!("{:?}", r.branch).to_lowercase(),
                num(r.sigma),
                num(r.computed),
                num(r.relative_error),
                num(r.field_residual),
                r.pass.to_string(),
            ]
        })
        .collect();
    sink.csv(
        "oracle.csv",
        &["k", "branch", "sigma", "computed", "relative_error", "field_residual", "pass"],
        &csv_rows,
    )?;
    #[derive(Serialize)]
    struct Dump<'a> {
        eps: f64,
        k_max: usize,
        seed: u64,
        radial_eigenvalue: f64,
        radial_relative_error: f64,
        rows: &'a [OracleRow],
    }
    sink.json(
        "oracle.json",
        &Dump { eps, k_max, seed: run.cfg.seed, radial_eigenvalue: radial, radial_relative_error: radial_err, rows: &rows },
    )?;
    let failed = rows.iter().filter(|r| !r.pass).count() + usize::from(radial_err > ORACLE_EIGEN_TOL);
    if failed > 0 {
        eprintln!("oracle: {failed} cross-checks failed");
        return Ok(Status::CheckFailed);
    }
    Ok(Status::Ok)
}

#[derive(Serialize)]
struct Report {
    eigenpairs: usize,
    lambda_max: f64,
    spurious: bool,
    gap_report: Option<GapReport>,
    quasimode: QuasimodeSummary,
    nodal_ratio_min: Option<f64>,
    nodal_ratio_max: Option<f64>,
    nodal_unconverged: Vec<usize>,
}

pub fn report(run: &Run) -> Result<Status> {
    let s = run.solve()?;
    let (_, gap_report) = gap_rows(&s)?;
    let q = quasimode_run(run, &s).context("quasimode stage")?;
    let delta = run.delta()?;
    let mut rows = Vec::new();
    let mut ratios = Vec::new();
    let mut unconverged = Vec::new();
    for n in 0..s.len() {
        let field = InteriorField::new(&run.domain, &s, n)?;
        let r = nodal_report_with(&field, &s, delta, run.cfg.grid_refinements)?;
        if let Some(x) = r.ratio {
            ratios.push(x);
        }
        if !r.converged {
            unconverged.push(n);
        }
        rows.push(ratio_row(&r));
    }
    let sink = run.sink("report")?;
    sink.csv("nodal_ratios.csv", &RATIO_HEADER, &rows)?;
    let spurious = s.has_spurious();
    sink.json(
        "report.json",
        &Report {
            eigenpairs: s.len(),
            lambda_max: s.eigenvalues.last().copied().unwrap_or(0.0),
            spurious,
            gap_report,
            quasimode: q.summary,
            nodal_ratio_min: ratios.iter().cloned().reduce(f64::min),
            nodal_ratio_max: ratios.iter().cloned().reduce(f64::max),
            nodal_unconverged: unconverged,
        },
    )?;
    Ok(if spurious { Status::Spurious } else { Status::Ok })
}
