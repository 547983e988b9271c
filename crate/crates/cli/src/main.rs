//! Command-line front end for the spin-adapted unitary toolchain.
//!
//! Subcommands: `closure` (Lie-algebra closure report), `decompose`
//! (Wei–Norman parameter tables), `circuit` (gate emission with counts and
//! optional dense verification), `adapt` (ADAPT-VQE run on an FCIDUMP).
//!
//! Exit codes: 0 success, 2 closure cap exceeded, 3 singular decomposition
//! point (truncated output is still written), 4 verification failure,
//! 5 input error.

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use sauc_core::algebra::Family;
use sauc_core::circuit::{
    catalog_generator, count_report, emit_feb, emit_qeb_double, emit_wn_circuit, simulate,
    Circuit, QubitLayout,
};
use sauc_core::fock::{expm_antihermitian, to_matrix};
use sauc_core::lie::{canonicalize, lie_closure, structure_constants, LieError, DEFAULT_CLOSURE_CAP};
use sauc_core::ode::OdeOptions;
use sauc_core::vqe::{
    adapt_vqe, build_pool, exact_ground_state, parse_fcidump, AdaptOptions, PoolKind,
};
use sauc_core::wn::{
    frobenius_fit, integrate, tilde_parameter_table, uniform_grid, FitOptions, ParameterTable,
    WnSystem,
};
use sauc_core::{algebra, par};

const EXIT_CLOSURE_CAP: u8 = 2;
const EXIT_SINGULARITY: u8 = 3;
const EXIT_VERIFICATION: u8 = 4;
const EXIT_INPUT: u8 = 5;

#[derive(Parser)]
#[command(name = "sauc", version, about = "Spin-adapted unitary toolchain")]
struct Cli {
    /// Worker-thread cap for the parallel backend (0 = automatic).
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
    /// Seed recorded in output metadata; all pipelines are deterministic.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Output file; stdout when omitted.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Dynamical Lie algebra closure of a generator family (JSON report).
    Closure(ClosureArgs),
    /// Wei–Norman parameter table over a θ grid (CSV).
    Decompose(DecomposeArgs),
    /// Emit a gate-level circuit with exact counts (JSON report).
    Circuit(CircuitArgs),
    /// ADAPT-VQE on an FCIDUMP Hamiltonian (CSV run log + ansatz JSON).
    Adapt(AdaptArgs),
}

#[derive(Args)]
struct ClosureArgs {
    /// Generator family: sags | ppd | ppqr | int0 | int1.
    #[arg(long)]
    family: String,
    /// Spatial orbitals seeding the closure (defaults to 0..arity).
    #[arg(long)]
    indices: Option<String>,
    /// Abort (exit 2) when the closure exceeds this many elements.
    #[arg(long, default_value_t = DEFAULT_CLOSURE_CAP)]
    cap: usize,
}

#[derive(Args)]
struct DecomposeArgs {
    /// Generator family: ppqr | int0 | int1.
    #[arg(long)]
    family: String,
    /// Spatial orbitals (defaults to 0..arity).
    #[arg(long)]
    indices: Option<String>,
    /// Solution method: ode | closed-form | fit.
    #[arg(long, default_value = "ode")]
    method: String,
    /// θ grid as start:stop:points.
    #[arg(long, default_value = "0:1:101", allow_hyphen_values = true)]
    range: String,
    /// Exponent ordering as a comma-separated permutation of basis indices.
    #[arg(long)]
    ordering: Option<String>,
    /// Fail (exit 4) unless every tabulated residual stays below 1e-8.
    #[arg(long)]
    verify: bool,
}

#[derive(Args)]
struct CircuitArgs {
    /// ppqr | int0 | int1 (Wei–Norman product), feb-row1..feb-row11
    /// (single catalog exponential), or qeb (strings-free double).
    #[arg(long)]
    family: String,
    /// feb-rowN/qeb: four spinorbital indices. Families: spatial orbitals.
    #[arg(long)]
    indices: Option<String>,
    /// Rotation angle of the target exponential.
    #[arg(long, default_value_t = 0.5, allow_negative_numbers = true)]
    theta: f64,
    /// Check the simulated unitary against the dense exponential (exit 4 on
    /// mismatch).
    #[arg(long)]
    verify: bool,
}

#[derive(Args)]
struct AdaptArgs {
    /// FCIDUMP file with the molecular Hamiltonian.
    #[arg(long)]
    fcidump: PathBuf,
    /// Operator pool: GSD | saGSD | saGSpD | saGSD0 | pDint0.
    #[arg(long, default_value = "saGSD")]
    pool: String,
    /// Parameter-count stopping cap.
    #[arg(long, default_value_t = 30)]
    max_params: usize,
    /// Gradient-norm stopping threshold.
    #[arg(long, default_value_t = 1e-7)]
    grad_ceiling: f64,
    /// Check pool symmetries (anti-Hermiticity, N, Sz, and S² where claimed)
    /// before running; exit 4 on violation.
    #[arg(long)]
    verify: bool,
}

/// A failure that maps onto the process exit-code taxonomy.
struct Failure {
    code: u8,
    msg: String,
}

impl Failure {
    fn input(msg: impl Into<String>) -> Failure {
        Failure { code: EXIT_INPUT, msg: msg.into() }
    }
    fn verification(msg: impl Into<String>) -> Failure {
        Failure { code: EXIT_VERIFICATION, msg: msg.into() }
    }
}

impl<E: std::fmt::Display> From<E> for Failure {
    fn from(e: E) -> Failure {
        Failure { code: 1, msg: e.to_string() }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    par::limit_jobs(cli.jobs);
    let result = match &cli.cmd {
        Cmd::Closure(args) => run_closure(&cli, args),
        Cmd::Decompose(args) => run_decompose(&cli, args),
        Cmd::Circuit(args) => run_circuit(&cli, args),
        Cmd::Adapt(args) => run_adapt(&cli, args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}

/// FNV-1a hash of the resolved run configuration, for reproducibility stamps.
fn config_hash(parts: &[String]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for p in parts {
        for b in p.as_bytes() {
            h ^= u64::from(*b);
            h = h.wrapping_mul(0x100000001b3);
        }
        h ^= 0x1f;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

fn metadata(cli: &Cli, parts: &[String]) -> String {
    format!(
        "sauc v{} config={:016x} seed={} {}",
        env!("CARGO_PKG_VERSION"),
        config_hash(parts),
        cli.seed,
        parts.join(" ")
    )
}

fn write_output(cli: &Cli, content: &str) -> Result<(), Failure> {
    match &cli.out {
        Some(path) => std::fs::write(path, content)
            .map_err(|e| Failure::input(format!("cannot write {}: {e}", path.display()))),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(content.as_bytes())
                .and_then(|()| stdout.flush())
                .map_err(|e| Failure::input(format!("cannot write stdout: {e}")))
        }
    }
}

fn parse_family(name: &str) -> Result<Family, Failure> {
    match name.to_ascii_lowercase().as_str() {
        "sags" => Ok(Family::SaGS),
        "ppd" => Ok(Family::PpD),
        "ppqr" | "ppqrd" => Ok(Family::PpQrD),
        "int0" | "int0d" => Ok(Family::Int0D),
        "int1" | "int1d" => Ok(Family::Int1D),
        _ => Err(Failure::input(format!(
            "unknown family '{name}' (expected sags, ppd, ppqr, int0, or int1)"
        ))),
    }
}

fn parse_index_list(spec: &str) -> Result<Vec<usize>, Failure> {
    spec.split(',')
        .map(|t| {
            t.trim()
                .parse::<usize>()
                .map_err(|_| Failure::input(format!("bad index '{t}' in '{spec}'")))
        })
        .collect()
}

fn resolve_orbitals(family: Family, indices: &Option<String>) -> Result<Vec<usize>, Failure> {
    let orbs = match indices {
        Some(spec) => parse_index_list(spec)?,
        None => (0..family.arity()).collect(),
    };
    if orbs.len() != family.arity() {
        return Err(Failure::input(format!(
            "family {} takes {} spatial orbitals, got {}",
            family.name(),
            family.arity(),
            orbs.len()
        )));
    }
    Ok(orbs)
}

/// Parses "start:stop:points" into a uniform θ grid.
fn parse_range(spec: &str) -> Result<Vec<f64>, Failure> {
    let parts: Vec<&str> = spec.split(':').collect();
    let bad = || Failure::input(format!("bad range '{spec}' (expected start:stop:points)"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let a: f64 = parts[0].parse().map_err(|_| bad())?;
    let b: f64 = parts[1].parse().map_err(|_| bad())?;
    let n: usize = parts[2].parse().map_err(|_| bad())?;
    if n < 2 || !a.is_finite() || !b.is_finite() || b <= a {
        return Err(bad());
    }
    Ok(uniform_grid(a, b, n))
}

fn run_closure(cli: &Cli, args: &ClosureArgs) -> Result<(), Failure> {
    let family = parse_family(&args.family)?;
    let orbs = resolve_orbitals(family, &args.indices)?;
    let seeds = algebra::closure_seeds(family, &orbs)
        .map_err(|e| Failure::input(e.to_string()))?;
    let closure = lie_closure(&seeds, args.cap).map_err(|e| match e {
        LieError::DimensionExplosion(cap) => Failure {
            code: EXIT_CLOSURE_CAP,
            msg: format!("closure exceeded the cap of {cap} elements"),
        },
        other => other.into(),
    })?;
    let basis = canonicalize(&closure)?;
    // Full structure-constant triplet dumps scale as dim³; keep them to the
    // sizes where the output is still human-surveyable.
    let sc = if basis.dim() <= 32 {
        Some(structure_constants(&basis)?)
    } else {
        None
    };
    let parts = vec![
        format!("cmd=closure"),
        format!("family={}", family.name()),
        format!("orbitals={orbs:?}"),
    ];
    let mut report = basis.to_json(sc.as_ref());
    report["family"] = family.name().into();
    report["orbitals"] = orbs.clone().into();
    report["metadata"] = metadata(cli, &parts).into();
    write_output(cli, &format!("{:#}\n", report))
}

fn build_table(
    sys: &WnSystem,
    method: &str,
    grid: &[f64],
) -> Result<ParameterTable, Failure> {
    use sauc_core::wn::WnError;
    // Grid and ordering problems are caller mistakes, not pipeline failures.
    let as_input = |e: WnError| match e {
        WnError::GridMustStartAtZero | WnError::BadOrdering(_) | WnError::BadDimension { .. } => {
            Failure::input(e.to_string())
        }
        other => other.into(),
    };
    match method {
        "ode" => integrate(sys, grid, &OdeOptions::default()).map_err(as_input),
        "closed-form" => {
            if sys.dim() != 5 {
                return Err(Failure::input(format!(
                    "closed-form tables exist for the 5-dimensional algebra only \
                     (this family closes at {})",
                    sys.dim()
                )));
            }
            tilde_parameter_table(&sys.basis, &sys.target(), grid).map_err(as_input)
        }
        "fit" => frobenius_fit(sys, grid, &FitOptions::default()).map_err(as_input),
        _ => Err(Failure::input(format!(
            "unknown method '{method}' (expected ode, closed-form, or fit)"
        ))),
    }
}

fn run_decompose(cli: &Cli, args: &DecomposeArgs) -> Result<(), Failure> {
    let family = parse_family(&args.family)?;
    let orbs = resolve_orbitals(family, &args.indices)?;
    let grid = parse_range(&args.range)?;
    let mut sys = WnSystem::for_family(family, &orbs)?;
    if let Some(spec) = &args.ordering {
        sys = sys.with_ordering(parse_index_list(spec)?)
            .map_err(|e| Failure::input(e.to_string()))?;
    }
    sys.certify(1e-10)?;
    let table = build_table(&sys, &args.method, &grid)?;
    let parts = vec![
        format!("cmd=decompose"),
        format!("family={}", family.name()),
        format!("orbitals={orbs:?}"),
        format!("method={}", args.method),
        format!("range={}", args.range),
        format!("ordering={:?}", sys.ordering),
        format!("dim={}", sys.dim()),
    ];
    let mut csv = Vec::new();
    table.write_csv(&mut csv, &metadata(cli, &parts))?;
    write_output(cli, std::str::from_utf8(&csv).expect("csv is utf-8"))?;
    if let Some(at) = table.aborted_at {
        return Err(Failure {
            code: EXIT_SINGULARITY,
            msg: format!(
                "decomposition singular near θ = {at:.6}; table truncated to {} points",
                table.len()
            ),
        });
    }
    if args.verify && table.max_residual() > 1e-8 {
        return Err(Failure::verification(format!(
            "max tabulated residual {:.3e} exceeds 1e-8",
            table.max_residual()
        )));
    }
    if args.verify && table.converged.iter().any(|c| !c) {
        return Err(Failure::verification("fit failed to converge at some grid points"));
    }
    Ok(())
}

/// Dense-unitary check of an emitted circuit against exp(θ·generator).
fn verify_against_exponential(
    c: &Circuit,
    generator: &algebra::OperatorExpr,
    theta: f64,
) -> Result<f64, Failure> {
    let register = c.width;
    let target = to_matrix(generator, register)
        .map_err(|e| Failure::verification(e.to_string()))?;
    let oracle = expm_antihermitian(&target, theta)
        .map_err(|e| Failure::verification(e.to_string()))?;
    let dim = 1usize << register;
    let mut dev: f64 = 0.0;
    for col in 0..dim {
        let mut state = vec![num_complex::Complex64::new(0.0, 0.0); dim];
        state[col] = 1.0.into();
        simulate(c, &mut state)?;
        for row in 0..dim {
            dev = dev.max((state[row].re - oracle.data[(row, col)]).abs());
            dev = dev.max(state[row].im.abs());
        }
    }
    if dev > 1e-10 {
        return Err(Failure::verification(format!(
            "circuit deviates from the dense exponential by {dev:.3e}"
        )));
    }
    Ok(dev)
}

fn circuit_report(
    cli: &Cli,
    parts: &[String],
    c: &Circuit,
    extra: serde_json::Value,
) -> Result<(), Failure> {
    let counts = c.counts();
    let mut report = serde_json::json!({
        "metadata": metadata(cli, parts),
        "width": c.width,
        "counts": counts,
        "circuit": c.to_json_ir(),
        "qasm": c.to_qasm(),
    });
    if let serde_json::Value::Object(map) = extra {
        for (k, v) in map {
            report[k] = v;
        }
    }
    write_output(cli, &format!("{:#}\n", report))
}

fn require_indices(args: &CircuitArgs, what: &str) -> Result<[usize; 4], Failure> {
    let spec = args
        .indices
        .as_ref()
        .ok_or_else(|| Failure::input(format!("--indices is required for {what}")))?;
    let v = parse_index_list(spec)?;
    <[usize; 4]>::try_from(v)
        .map_err(|v| Failure::input(format!("{what} takes 4 indices, got {}", v.len())))
}

/// Spinorbitals (P↑, Q↓, R↑, S↓) → spatial orbitals (P, Q, R, S).
fn spatial_from_spinorbitals(so: [usize; 4]) -> Result<[usize; 4], Failure> {
    let want_even = [true, false, true, false];
    for (i, &x) in so.iter().enumerate() {
        if (x % 2 == 0) != want_even[i] {
            return Err(Failure::input(format!(
                "index {x} at position {i} has the wrong spin: expected the \
                 pattern P-up, Q-down, R-up, S-down (even, odd, even, odd)"
            )));
        }
    }
    Ok([so[0] / 2, (so[1] - 1) / 2, so[2] / 2, (so[3] - 1) / 2])
}

fn run_circuit(cli: &Cli, args: &CircuitArgs) -> Result<(), Failure> {
    let name = args.family.to_ascii_lowercase();
    let theta = args.theta;
    if !theta.is_finite() {
        return Err(Failure::input("theta must be finite"));
    }

    if let Some(row) = name.strip_prefix("feb-row") {
        let row: usize = row
            .parse()
            .map_err(|_| Failure::input(format!("bad catalog row in '{}'", args.family)))?;
        let so = require_indices(args, "feb-row circuits")?;
        let spatial = spatial_from_spinorbitals(so)?;
        let spec = catalog_generator(row, spatial)
            .map_err(|e| Failure::input(e.to_string()))?;
        let width = 2 * (spatial.iter().max().unwrap() + 1);
        let c = emit_feb(&spec, theta, &QubitLayout::identity(width))?;
        let mut extra = serde_json::json!({ "generator": spec.label });
        if args.verify {
            let dev = verify_against_exponential(&c, &spec.expr(), theta)?;
            extra["verification_deviation"] = dev.into();
        }
        let parts = vec![
            format!("cmd=circuit"),
            format!("family={name}"),
            format!("indices={so:?}"),
            format!("theta={theta}"),
        ];
        return circuit_report(cli, &parts, &c, extra);
    }

    if name == "qeb" {
        let so = require_indices(args, "qeb circuits")?;
        let width = so.iter().max().unwrap() + 1;
        let c = emit_qeb_double(so, theta, width)?;
        // The strings-free rotation is not a Jordan-Wigner exponential, so
        // verification checks unitarity of the simulated map instead.
        if args.verify {
            let u = c.unitary()?;
            let dim = u.nrows();
            let dev = (u.adjoint() * &u - nalgebra::DMatrix::identity(dim, dim))
                .iter()
                .fold(0.0f64, |m, z| m.max(z.norm()));
            if dev > 1e-10 {
                return Err(Failure::verification(format!(
                    "qeb circuit is not unitary (deviation {dev:.3e})"
                )));
            }
        }
        let parts = vec![
            format!("cmd=circuit"),
            format!("family=qeb"),
            format!("indices={so:?}"),
            format!("theta={theta}"),
        ];
        return circuit_report(cli, &parts, &c, serde_json::json!({}));
    }

    // Wei–Norman product circuit for a whole generator family.
    let family = parse_family(&args.family)?;
    let orbs = resolve_orbitals(family, &args.indices)?;
    let width = 2 * (orbs.iter().max().unwrap() + 1);
    let layout = QubitLayout::identity(width);
    let mut sys = WnSystem::for_family(family, &orbs)?;
    sys.certify(1e-10)?;
    // Tabulate α(θ) from 0 out to the requested angle with a step small
    // enough that linear interpolation is never needed at the endpoint.
    let span = theta.abs().max(1e-3);
    let n = (span / 0.005).ceil() as usize + 1;
    let grid = uniform_grid(0.0, span, n.max(2));
    let table = integrate(&sys, &grid, &OdeOptions::default())?;
    if let Some(at) = table.aborted_at {
        return Err(Failure {
            code: EXIT_SINGULARITY,
            msg: format!("decomposition singular near θ = {at:.6}; no circuit emitted"),
        });
    }
    let c = emit_wn_circuit(&table, &sys.basis.elements, theta.abs(), &layout)?;
    // Negative angles reuse the |θ| table with every exponent negated.
    let c = if theta < 0.0 {
        let mut flipped = Circuit::new(width);
        for g in c.gates.iter().rev() {
            flipped.push(match g.clone() {
                sauc_core::circuit::Gate::Ry { q, angle } => {
                    sauc_core::circuit::Gate::Ry { q, angle: -angle }
                }
                sauc_core::circuit::Gate::Rz { q, angle } => {
                    sauc_core::circuit::Gate::Rz { q, angle: -angle }
                }
                sauc_core::circuit::Gate::S(q) => sauc_core::circuit::Gate::Sdg(q),
                sauc_core::circuit::Gate::Sdg(q) => sauc_core::circuit::Gate::S(q),
                other => other,
            });
        }
        flipped
    } else {
        c
    };
    let mut extra = serde_json::json!({
        "dimension": sys.dim(),
        "count_report": count_report(family, &orbs, &layout)?,
    });
    if args.verify {
        let dev = verify_against_exponential(&c, &sys.target(), theta)?;
        extra["verification_deviation"] = dev.into();
    }
    let parts = vec![
        format!("cmd=circuit"),
        format!("family={}", family.name()),
        format!("orbitals={orbs:?}"),
        format!("theta={theta}"),
    ];
    circuit_report(cli, &parts, &c, extra)
}

fn run_adapt(cli: &Cli, args: &AdaptArgs) -> Result<(), Failure> {
    let source = std::fs::read_to_string(&args.fcidump).map_err(|e| {
        Failure::input(format!("cannot read {}: {e}", args.fcidump.display()))
    })?;
    let h = parse_fcidump(&source).map_err(|e| Failure::input(e.to_string()))?;
    let kind = PoolKind::parse(&args.pool).ok_or_else(|| {
        Failure::input(format!(
            "unknown pool '{}' (expected GSD, saGSD, saGSpD, saGSD0, or pDint0)",
            args.pool
        ))
    })?;
    let pool = build_pool(kind, h.n_spatial, h.irreps.as_deref())
        .map_err(|e| Failure::input(e.to_string()))?;
    if args.verify {
        pool.verify(h.register())
            .map_err(|e| Failure::verification(e.to_string()))?;
    }
    let opts = AdaptOptions {
        max_params: args.max_params,
        grad_ceiling: args.grad_ceiling,
        ..AdaptOptions::default()
    };
    let state = adapt_vqe(&h, &pool, &opts).map_err(|e| Failure::input(e.to_string()))?;
    let exact = exact_ground_state(&h, (h.n_elec, h.ms2))
        .map(|(e, _)| e)
        .unwrap_or(state.exact_energy);
    let parts = vec![
        format!("cmd=adapt"),
        format!("fcidump={}", args.fcidump.display()),
        format!("pool={}", kind.name()),
        format!("max_params={}", args.max_params),
        format!("grad_ceiling={:e}", args.grad_ceiling),
        format!("exact_energy={exact:.12e}"),
    ];
    let mut csv = Vec::new();
    state.write_log_csv(&mut csv, &metadata(cli, &parts))?;
    let ansatz = format!("{:#}\n", state.ansatz_json());
    match &cli.out {
        Some(path) => {
            write_output(cli, std::str::from_utf8(&csv).expect("csv is utf-8"))?;
            let json_path = path.with_extension("ansatz.json");
            std::fs::write(&json_path, ansatz).map_err(|e| {
                Failure::input(format!("cannot write {}: {e}", json_path.display()))
            })?;
        }
        None => {
            write_output(cli, std::str::from_utf8(&csv).expect("csv is utf-8"))?;
            write_output(cli, &ansatz)?;
        }
    }
    Ok(())
}
