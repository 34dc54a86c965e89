use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DVector;
use serde_json::{json, Value};

use sipdg::assembly::{Discretization, GlobalSystem, NuPolicy};
use sipdg::fourier::{spectral_radius, symbol_blocks};
use sipdg::mesh::{generate, parse_family, BoundarySpec, Mesh, MeshFamily};
use sipdg::stability::{
    lambda_bound, lambda_exact_dense, penalties, penalty_mulder, time_step, EigenSolver, PenaltyReport,
    StabilityOptions, TimeStepReport, Variant,
};
use sipdg::tables::{compute_table, TableFilter};
use sipdg::timeloop::{random_state, stability_probe, write_energy_csv, LeapFrog, Verdict};
use sipdg::Error;

#[derive(Parser, Debug)]
#[command(
    name = "sipdg",
    version,
    about = "Interior-penalty parameters and explicit time steps for SIPDG"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Output format.
    #[arg(long, value_enum, default_value_t = Format::Csv, global = true)]
    format: Format,
    /// Output file; standard output when omitted.
    #[arg(long, short, global = true)]
    output: Option<PathBuf>,
    /// Relative rank threshold of the congruence decompositions.
    #[arg(long, default_value_t = 1e-10, global = true)]
    tol_rank: f64,
    /// Relative slack of positive semidefiniteness checks.
    #[arg(long, default_value_t = 1e-9, global = true)]
    tol_psd: f64,
    /// Relative stopping tolerance of power iterations.
    #[arg(long, default_value_t = 1e-12, global = true)]
    power_tol: f64,
    /// Seed of the power-iteration start vectors.
    #[arg(long, default_value_t = 0x5eed, global = true)]
    power_seed: u64,
    /// Eigenvalue solver for penalties and submesh bounds.
    #[arg(long, value_enum, default_value_t = Solver::Power, global = true)]
    solver: Solver,
    /// Constant of the time-step condition `Δt = c / √λ`.
    #[arg(long, default_value_t = 2.0, global = true)]
    c_method: f64,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Element penalty constants and penalties.
    Penalty {
        #[command(flatten)]
        mesh: MeshArgs,
        #[command(flatten)]
        penalty: PenaltyArgs,
    },
    /// Time-step estimate from a weighted mesh decomposition.
    Timestep {
        #[command(flatten)]
        mesh: MeshArgs,
        #[command(flatten)]
        penalty: PenaltyArgs,
        #[arg(long, value_enum, default_value_t = DecompositionKind::Vertex)]
        decomposition: DecompositionKind,
        /// Also compute the exact largest eigenvalue.
        #[arg(long)]
        exact: bool,
    },
    /// Recompute one of the sharpness tables.
    Table {
        /// Table number, 1 to 6.
        id: usize,
        /// Only these polynomial degrees.
        #[arg(long = "p")]
        degrees: Vec<usize>,
        /// Only meshes whose name starts with one of these.
        #[arg(long)]
        only: Vec<String>,
    },
    /// Leap-frog run at a multiple of a reference time step.
    Simulate {
        #[command(flatten)]
        mesh: MeshArgs,
        #[command(flatten)]
        penalty: PenaltyArgs,
        #[arg(long, default_value_t = 1.0)]
        dt_scale: f64,
        #[arg(long, value_enum, default_value_t = DtRef::Est)]
        dt_ref: DtRef,
        #[arg(long, default_value_t = 2000)]
        steps: usize,
        /// Seed of the random initial state.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write the energy trace as CSV to this file.
        #[arg(long)]
        energy: Option<PathBuf>,
    },
    /// Mesh utilities.
    Mesh {
        #[command(subcommand)]
        command: MeshCommand,
    },
}

#[derive(Subcommand, Debug)]
enum MeshCommand {
    /// Write a generated mesh as JSON.
    Export {
        #[command(flatten)]
        mesh: MeshArgs,
    },
}

#[derive(Args, Debug, Clone)]
struct MeshArgs {
    /// Mesh family, e.g. `square`, `hexahedral[0.6]` or `triPL[1,10]`.
    #[arg(long, default_value = "square")]
    mesh: String,
    /// Family parameters, in order.
    #[arg(long = "param", allow_negative_numbers = true)]
    params: Vec<f64>,
    /// Polynomial degree.
    #[arg(long, default_value_t = 1)]
    p: usize,
    /// Unit cells per direction.
    #[arg(long, default_value_t = 2)]
    n: usize,
    #[arg(long, value_enum, default_value_t = Boundary::Periodic)]
    boundary: Boundary,
    /// Load the mesh from a JSON file instead of generating it.
    #[arg(long, conflicts_with_all = ["mesh", "params", "p", "n", "boundary"])]
    mesh_file: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
struct PenaltyArgs {
    #[arg(long, value_enum, default_value_t = VariantArg::Star2)]
    variant: VariantArg,
    /// Safety factor `c_κ ≥ 1` of `η = c_κ κ`.
    #[arg(long, default_value_t = 1.0)]
    c_kappa: f64,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum Format {
    Csv,
    Json,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum Solver {
    Power,
    Lanczos,
    Dense,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum VariantArg {
    Star,
    Star2,
    Mulder,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum DecompositionKind {
    Vertex,
    Trivial,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum DtRef {
    Est,
    Exact,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum Boundary {
    Periodic,
    Dirichlet,
    Neumann,
}

impl From<Boundary> for BoundarySpec {
    fn from(b: Boundary) -> Self {
        match b {
            Boundary::Periodic => BoundarySpec::Periodic,
            Boundary::Dirichlet => BoundarySpec::Dirichlet,
            Boundary::Neumann => BoundarySpec::Neumann,
        }
    }
}

impl VariantArg {
    fn name(self) -> &'static str {
        match self {
            VariantArg::Star => "star",
            VariantArg::Star2 => "star2",
            VariantArg::Mulder => "mulder",
        }
    }
}

fn options(c: &Common) -> sipdg::Result<StabilityOptions> {
    let mut opts = StabilityOptions::default();
    opts.tol.tol_rank = c.tol_rank;
    opts.tol.tol_psd = c.tol_psd;
    opts.tol.power_tol = c.power_tol;
    opts.tol.power_seed = c.power_seed;
    opts.c_method = c.c_method;
    let solver = match c.solver {
        Solver::Power => EigenSolver::Power,
        Solver::Lanczos => EigenSolver::Lanczos,
        Solver::Dense => EigenSolver::Dense,
    };
    opts.kappa_solver = solver;
    opts.lambda_solver = solver;
    opts.assembly.tol = opts.tol;
    opts.validate()?;
    Ok(opts)
}

/// A mesh and, when generated, its family and cell count.
struct MeshInput {
    mesh: Mesh,
    label: String,
    generated: Option<(MeshFamily, usize, usize, BoundarySpec)>,
}

fn load_mesh(a: &MeshArgs) -> sipdg::Result<MeshInput> {
    if let Some(path) = &a.mesh_file {
        let mesh = Mesh::load(path)?;
        return Ok(MeshInput {
            mesh,
            label: path.display().to_string(),
            generated: None,
        });
    }
    let family = parse_family(&a.mesh, &a.params)?;
    let boundary = a.boundary.into();
    let mesh = generate(family, a.p, a.n, boundary)?;
    mesh.validate()?;
    Ok(MeshInput {
        mesh,
        label: family.to_string(),
        generated: Some((family, a.p, a.n, boundary)),
    })
}

/// Discretization and penalties of a mesh for the chosen variant.
struct Setup {
    opts: StabilityOptions,
    disc: Discretization,
    eta: Vec<f64>,
    report: Option<PenaltyReport>,
}

fn setup(mesh: &Mesh, pen: &PenaltyArgs, opts: &StabilityOptions) -> sipdg::Result<Setup> {
    let mut opts = *opts;
    if pen.variant == VariantArg::Mulder {
        opts.assembly.nu = NuPolicy::InscribedDiameter;
    }
    let disc = Discretization::new(mesh, opts.assembly)?;
    let (eta, report) = match pen.variant {
        VariantArg::Mulder => {
            let eta = mesh
                .elements
                .iter()
                .map(|el| penalty_mulder(el.shape, el.degree).map(|v| pen.c_kappa * v))
                .collect::<sipdg::Result<Vec<_>>>()?;
            (eta, None)
        }
        v => {
            let variant = if v == VariantArg::Star {
                Variant::Star
            } else {
                Variant::Star2
            };
            let r = penalties(&disc, variant, pen.c_kappa, &opts)?;
            (r.eta(), Some(r))
        }
    };
    Ok(Setup {
        opts,
        disc,
        eta,
        report,
    })
}

/// Exact `λ_max(M⁻¹A)`: dense when small enough, otherwise by the Fourier
/// symbol of a generated periodic mesh.
fn exact_lambda(input: &MeshInput, s: &Setup, sys: &GlobalSystem, pen: &PenaltyArgs) -> sipdg::Result<f64> {
    if sys.size() <= s.opts.tol.dense_limit {
        return lambda_exact_dense(sys, &s.opts.tol);
    }
    match input.generated {
        Some((family, p, n, BoundarySpec::Periodic)) => {
            let cell = generate(family, p, 1, BoundarySpec::Periodic)?;
            let cs = setup(&cell, pen, &s.opts)?;
            let blocks = symbol_blocks(&cell, &cs.eta, cs.opts.assembly)?;
            Ok(spectral_radius(&blocks, n))
        }
        _ => Err(Error::SizeGuard {
            size: sys.size(),
            limit: s.opts.tol.dense_limit,
        }),
    }
}

fn emit(out: &Option<PathBuf>, text: &str) -> sipdg::Result<()> {
    match out {
        Some(path) => std::fs::write(path, text)?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn json_text(v: &Value) -> sipdg::Result<String> {
    Ok(serde_json::to_string_pretty(v)? + "\n")
}

fn opt_num(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn cmd_penalty(c: &Common, mesh: &MeshArgs, pen: &PenaltyArgs) -> sipdg::Result<String> {
    let opts = options(c)?;
    let input = load_mesh(mesh)?;
    let s = setup(&input.mesh, pen, &opts)?;
    let rows: Vec<(usize, &'static str, Option<f64>, Option<usize>, f64)> = input
        .mesh
        .elements
        .iter()
        .enumerate()
        .map(|(e, el)| {
            let k = s.report.as_ref().map(|r| &r.elements[e]);
            (e, el.shape.name(), k.map(|k| k.kappa), k.map(|k| k.rank), s.eta[e])
        })
        .collect();
    match c.format {
        Format::Csv => {
            let mut t = String::from("element,shape,kappa,rank,eta\n");
            for (e, shape, kappa, rank, eta) in rows {
                t += &format!(
                    "{e},{shape},{},{},{eta}\n",
                    opt_num(kappa),
                    rank.map(|r| r.to_string()).unwrap_or_default()
                );
            }
            Ok(t)
        }
        Format::Json => json_text(&json!({
            "mesh": input.label,
            "variant": pen.variant.name(),
            "c_kappa": pen.c_kappa,
            "elements": rows.iter().map(|(e, shape, kappa, rank, eta)| json!({
                "element": e, "shape": shape, "kappa": kappa, "rank": rank, "eta": eta
            })).collect::<Vec<_>>(),
        })),
    }
}

fn cmd_timestep(
    c: &Common,
    mesh: &MeshArgs,
    pen: &PenaltyArgs,
    kind: DecompositionKind,
    exact: bool,
) -> sipdg::Result<String> {
    let opts = options(c)?;
    let input = load_mesh(mesh)?;
    let s = setup(&input.mesh, pen, &opts)?;
    let decomposition = match kind {
        DecompositionKind::Vertex => input.mesh.vertex_decomposition(),
        DecompositionKind::Trivial => input.mesh.trivial_decomposition(),
    };
    let mut report: TimeStepReport = lambda_bound(&input.mesh, &s.disc, &decomposition, &s.eta, &s.opts)?;
    if exact {
        let sys = s.disc.system(&input.mesh, &s.eta)?;
        report = report.with_exact(exact_lambda(&input, &s, &sys, pen)?)?;
    }
    let kind_name = match kind {
        DecompositionKind::Vertex => "vertex",
        DecompositionKind::Trivial => "trivial",
    };
    match c.format {
        Format::Csv => Ok(format!(
            "mesh,variant,decomposition,submeshes,lambda_bar,dt_est,lambda_exact,dt_exact\n{},{},{},{},{},{},{},{}\n",
            input.label,
            pen.variant.name(),
            kind_name,
            report.submeshes.len(),
            report.lambda_bar,
            report.dt_est,
            opt_num(report.lambda_exact),
            opt_num(report.dt_exact),
        )),
        Format::Json => json_text(&json!({
            "mesh": input.label,
            "variant": pen.variant.name(),
            "decomposition": kind_name,
            "report": serde_json::to_value(&report)?,
        })),
    }
}

fn cmd_table(c: &Common, id: usize, degrees: &[usize], only: &[String]) -> sipdg::Result<String> {
    let opts = options(c)?;
    let filter = TableFilter {
        degrees: degrees.to_vec(),
        meshes: only.to_vec(),
    };
    let out = compute_table(id, &filter, &opts)?;
    match c.format {
        Format::Csv => {
            let mut buf = Vec::new();
            out.write_csv(&mut buf)?;
            Ok(String::from_utf8_lossy(&buf).into_owned())
        }
        Format::Json => json_text(&json!({ "table": id, "rows": serde_json::to_value(&out)? })),
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_simulate(
    c: &Common,
    mesh: &MeshArgs,
    pen: &PenaltyArgs,
    dt_scale: f64,
    dt_ref: DtRef,
    steps: usize,
    seed: u64,
    energy: &Option<PathBuf>,
) -> sipdg::Result<String> {
    if !(dt_scale > 0.0) || !dt_scale.is_finite() {
        return Err(Error::InvalidInput(format!(
            "dt-scale must be positive, got {dt_scale}"
        )));
    }
    let opts = options(c)?;
    let input = load_mesh(mesh)?;
    let s = setup(&input.mesh, pen, &opts)?;
    let sys = s.disc.system(&input.mesh, &s.eta)?;
    let reference = match dt_ref {
        DtRef::Est => {
            lambda_bound(
                &input.mesh,
                &s.disc,
                &input.mesh.vertex_decomposition(),
                &s.eta,
                &s.opts,
            )?
            .dt_est
        }
        DtRef::Exact => time_step(s.opts.c_method, exact_lambda(&input, &s, &sys, pen)?),
    };
    if !reference.is_finite() {
        return Err(Error::InvalidInput(
            "reference time step is unbounded (zero stiffness)".into(),
        ));
    }
    let dt = dt_scale * reference;
    let lf = LeapFrog::new(&sys);
    let u0 = random_state(sys.size(), seed);
    let v0 = DVector::zeros(sys.size());
    let probe = stability_probe(&lf, dt, steps, &u0, &v0)?;
    if let Some(path) = energy {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        write_energy_csv(&probe.energy, dt, &mut f)?;
        f.flush()?;
    }
    let (verdict, step) = match probe.verdict {
        Verdict::Stable => ("stable", None),
        Verdict::Unstable { step } => ("unstable", Some(step)),
    };
    let drift = probe.energy_drift();
    let dt_ref_name = if dt_ref == DtRef::Est { "est" } else { "exact" };
    match c.format {
        Format::Csv => Ok(format!(
            "mesh,variant,dt_ref,dt,steps,verdict,unstable_step,energy_drift\n{},{},{},{},{},{},{},{:e}\n",
            input.label,
            pen.variant.name(),
            dt_ref_name,
            dt,
            steps,
            verdict,
            step.map(|s| s.to_string()).unwrap_or_default(),
            drift
        )),
        Format::Json => json_text(&json!({
            "mesh": input.label,
            "variant": pen.variant.name(),
            "dt_ref": dt_ref_name,
            "dt_reference": reference,
            "dt": dt,
            "steps": steps,
            "verdict": verdict,
            "unstable_step": step,
            "energy_drift": drift,
        })),
    }
}

fn cmd_mesh_export(mesh: &MeshArgs) -> sipdg::Result<String> {
    Ok(load_mesh(mesh)?.mesh.to_json()? + "\n")
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidInput(_) | Error::DimensionMismatch { .. } | Error::Io(_) | Error::Json(_) => 2,
        Error::NonConvergence { .. }
        | Error::NotPsd { .. }
        | Error::SizeGuard { .. }
        | Error::EstimateViolated(_)
        | Error::Unstable { .. } => 3,
        Error::InvalidMapping { .. } | Error::InvalidMesh(_) | Error::InadmissibleDecomposition(_) => 4,
    }
}

fn configure_threads() -> Result<(), String> {
    let Ok(v) = std::env::var("SIPDG_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .map_err(|_| format!("SIPDG_THREADS must be a positive integer, got `{v}`"))?;
    if n == 0 {
        return Err("SIPDG_THREADS must be a positive integer, got `0`".into());
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| e.to_string())
}

fn run(cli: &Cli) -> sipdg::Result<()> {
    let c = &cli.common;
    let text = match &cli.command {
        Command::Penalty { mesh, penalty } => cmd_penalty(c, mesh, penalty)?,
        Command::Timestep {
            mesh,
            penalty,
            decomposition,
            exact,
        } => cmd_timestep(c, mesh, penalty, *decomposition, *exact)?,
        Command::Table { id, degrees, only } => cmd_table(c, *id, degrees, only)?,
        Command::Simulate {
            mesh,
            penalty,
            dt_scale,
            dt_ref,
            steps,
            seed,
            energy,
        } => cmd_simulate(c, mesh, penalty, *dt_scale, *dt_ref, *steps, *seed, energy)?,
        Command::Mesh {
            command: MeshCommand::Export { mesh },
        } => cmd_mesh_export(mesh)?,
    };
    emit(&c.output, &text)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Err(msg) = configure_threads() {
        eprintln!("error: {msg}");
        return ExitCode::from(2);
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
