//! Experiment drivers behind the `pglod` binary: configuration parsing,
//! command dispatch, CSV output and the run manifest.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::Parser;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::analysis::{convergence_study, decay_profile, interior_hat_sum, line_cut, localization_errors, ConvergenceStudy};
use crate::error::{Error, Result};
use crate::fem::{solve_reference, FeFunction};
use crate::mesh::{MeshHierarchy, TriMesh};
use crate::multiscale::{coarse_hat, estimate_interp_constant, prolongate, CorrectorProblem, Ell, SparseVector};
use crate::solvers::{
    solve_classical_coarse, solve_supg, solve_vms, suggested_ell, Method, MethodConfig,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    Solve,
    Table1,
    Table2,
    Decay,
    Convergence,
    Compare,
    Correctors,
}

impl std::str::FromStr for Command {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        serde_json::from_value(Value::String(s.to_string())).map_err(|_| {
            format!("unknown command `{s}`; expected one of solve, table1, table2, decay, convergence, compare, correctors")
        })
    }
}

fn parse_method(s: &str) -> std::result::Result<Method, String> {
    serde_json::from_value(Value::String(s.to_string()))
        .map_err(|_| format!("unknown method `{s}`; expected one of reference, fem, supg, vms, ideal"))
}

/// Full description of one invocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunSpec {
    #[serde(flatten)]
    pub config: MethodConfig,
    pub command: Command,
    pub output_dir: PathBuf,
    /// Worker threads; 0 uses all cores.
    pub threads: usize,
    pub seed: u64,
    /// Coarse resolutions of the table and convergence sweeps.
    pub sweep_coarse_n: Vec<usize>,
    /// Localization levels of the table and convergence sweeps.
    pub sweep_ell: Vec<Ell>,
    /// Largest level of the decay profile.
    pub decay_ell_max: u32,
}

impl Default for RunSpec {
    fn default() -> Self {
        Self {
            config: MethodConfig::default(),
            command: Command::Solve,
            output_dir: PathBuf::from("out"),
            threads: 1,
            seed: 1,
            sweep_coarse_n: vec![8, 16, 32, 64],
            sweep_ell: (1..=6).map(Ell::Finite).collect(),
            decay_ell_max: 5,
        }
    }
}

const KNOWN_KEYS: &[&str] = &[
    "epsilon",
    "b_angle",
    "coarse_n",
    "fine_n",
    "ell",
    "f",
    "solver_tol",
    "method",
    "command",
    "output_dir",
    "threads",
    "seed",
    "sweep_coarse_n",
    "sweep_ell",
    "decay_ell_max",
];

fn invalid(field: &str, reason: impl Into<String>) -> Error {
    Error::InvalidConfig {
        field: field.to_string(),
        reason: reason.into(),
    }
}

impl RunSpec {
    /// Parses a JSON config, naming the offending key on failure.
    pub fn from_json(text: &str) -> Result<Self> {
        let value: Value = serde_json::from_str(text)?;
        let obj = value
            .as_object()
            .ok_or_else(|| invalid("<root>", "configuration must be a JSON object"))?;
        for key in obj.keys() {
            if !KNOWN_KEYS.contains(&key.as_str()) {
                return Err(invalid(key, "unknown key"));
            }
        }
        // deserialize key by key so type errors name their field
        let defaults = serde_json::to_value(RunSpec::default())?;
        let mut merged = defaults.as_object().cloned().unwrap_or_default();
        for (key, v) in obj {
            let mut probe = merged.clone();
            probe.insert(key.clone(), v.clone());
            serde_json::from_value::<RunSpec>(Value::Object(probe)).map_err(|e| invalid(key, e.to_string()))?;
            merged.insert(key.clone(), v.clone());
        }
        let spec: RunSpec = serde_json::from_value(Value::Object(merged))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        if self.sweep_coarse_n.is_empty() || self.sweep_coarse_n.contains(&0) {
            return Err(invalid("sweep_coarse_n", "must be a non-empty list of positive integers"));
        }
        let sweeps = matches!(self.command, Command::Table1 | Command::Table2 | Command::Convergence);
        if let Some(&n) = self.sweep_coarse_n.iter().find(|&&n| sweeps && !self.config.fine_n.is_multiple_of(n)) {
            return Err(invalid(
                "sweep_coarse_n",
                format!("{n} does not divide fine_n = {}", self.config.fine_n),
            ));
        }
        if self.sweep_ell.is_empty() {
            return Err(invalid("sweep_ell", "must not be empty"));
        }
        if self.decay_ell_max == 0 {
            return Err(invalid("decay_ell_max", "must be at least 1"));
        }
        Ok(())
    }
}

/// Command-line flags; each overrides the config file.
#[derive(Debug, Parser)]
#[command(name = "pglod", version, about = "Multiscale Petrov-Galerkin solver for convection-dominated diffusion")]
pub struct Cli {
    /// JSON configuration file
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// solve, table1, table2, decay, convergence, compare or correctors
    #[arg(long)]
    pub command: Option<Command>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Velocity angle in radians
    #[arg(long = "b-angle", allow_hyphen_values = true)]
    pub b_angle: Option<f64>,
    #[arg(long = "coarse-n")]
    pub coarse_n: Option<usize>,
    #[arg(long = "fine-n")]
    pub fine_n: Option<usize>,
    /// Localization level: a positive integer or `inf`
    #[arg(long)]
    pub ell: Option<Ell>,
    /// reference, fem, supg, vms or ideal
    #[arg(long, value_parser = parse_method)]
    pub method: Option<Method>,
    /// Output directory
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

impl Cli {
    pub fn into_spec(self) -> Result<RunSpec> {
        let mut spec = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path)
                    .map_err(|e| invalid("config", format!("cannot read {}: {e}", path.display())))?;
                RunSpec::from_json(&text)?
            }
            None => RunSpec::default(),
        };
        let c = &mut spec.config;
        if let Some(v) = self.epsilon {
            c.epsilon = v;
        }
        if let Some(v) = self.b_angle {
            c.b_angle = v;
        }
        if let Some(v) = self.coarse_n {
            c.coarse_n = v;
        }
        if let Some(v) = self.fine_n {
            c.fine_n = v;
        }
        if let Some(v) = self.ell {
            c.ell = v;
        }
        if let Some(v) = self.method {
            c.method = v;
        }
        if let Some(v) = self.command {
            spec.command = v;
        }
        if let Some(v) = self.output {
            spec.output_dir = v;
        }
        if let Some(v) = self.threads {
            spec.threads = v;
        }
        if let Some(v) = self.seed {
            spec.seed = v;
        }
        spec.validate()?;
        Ok(spec)
    }
}

/// Scientific notation with six significant digits and a two-digit
/// exponent, e.g. `5.14000e-02`.
pub fn sci(v: f64) -> String {
    if !v.is_finite() {
        return format!("{v}");
    }
    let s = format!("{v:.5e}");
    let (mantissa, exp) = s.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("integer exponent");
    let sign = if exp < 0 { '-' } else { '+' };
    format!("{mantissa}e{sign}{:02}", exp.abs())
}

/// Writes a CSV file with one header row and LF line endings.
fn write_csv(path: &Path, header: &str, rows: impl IntoIterator<Item = String>) -> Result<()> {
    let mut out = String::with_capacity(1 << 16);
    out.push_str(header);
    out.push('\n');
    for row in rows {
        out.push_str(&row);
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

fn field_rows(v: &FeFunction) -> impl Iterator<Item = String> + '_ {
    v.mesh
        .nodes
        .iter()
        .zip(&v.coeffs)
        .enumerate()
        .map(|(i, (p, c))| format!("{i},{},{},{}", sci(p[0]), sci(p[1]), sci(*c)))
}

fn sparse_rows<'a>(mesh: &'a TriMesh, v: &'a SparseVector) -> impl Iterator<Item = String> + 'a {
    v.iter()
        .map(move |(i, c)| format!("{i},{},{},{}", sci(mesh.nodes[i][0]), sci(mesh.nodes[i][1]), sci(c)))
}

/// Files written and extra scalar results of one run.
#[derive(Debug, Default, Clone, Serialize, Deserialize)]
pub struct RunOutcome {
    pub files: Vec<PathBuf>,
    pub results: BTreeMap<String, Value>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub config: RunSpec,
    pub version: String,
    pub wall_time_s: f64,
    pub files: Vec<String>,
    pub results: BTreeMap<String, Value>,
}

/// Coarse element in the middle of the domain: the lower triangle of the
/// square whose lower-left corner is closest to `(0.5, 0.5)`.
pub fn central_element(mesh: &TriMesh) -> usize {
    let i = (mesh.n / 2).min(mesh.n - 1);
    2 * (i * mesh.n + i)
}

/// Interior coarse node closest to `(0.5, 0.5)` (first index on ties).
pub fn central_node(mesh: &TriMesh) -> Option<usize> {
    mesh.interior_nodes().into_iter().min_by(|&a, &b| {
        let d = |k: usize| (mesh.nodes[k][0] - 0.5).hypot(mesh.nodes[k][1] - 0.5);
        d(a).total_cmp(&d(b))
    })
}

fn solve_field(h: &MeshHierarchy, cfg: &MethodConfig) -> Result<FeFunction> {
    match cfg.method {
        Method::Reference => solve_reference(h, cfg.epsilon, cfg.b(), |p| cfg.f.eval(p), cfg.solver_tol),
        Method::Fem => solve_classical_coarse(h, cfg),
        Method::Supg => solve_supg(h, cfg),
        Method::Vms | Method::Ideal => Ok(solve_vms(h, cfg)?.u),
    }
}

fn sweep(spec: &RunSpec) -> Result<ConvergenceStudy> {
    let study = convergence_study(&spec.config, &spec.sweep_coarse_n, &spec.sweep_ell)?;
    if study.reports.is_empty() {
        let reason = study.failures.first().map(|f| f.2.clone()).unwrap_or_default();
        return Err(Error::Residual {
            context: format!("every sweep run failed: {reason}"),
            residual: f64::NAN,
            tol: spec.config.solver_tol,
        });
    }
    Ok(study)
}

fn study_results(study: &ConvergenceStudy, out: &mut RunOutcome) {
    let ell = study.reports[0].ell;
    out.results.insert("h1_slope".into(), study.h1_slope(ell).into());
    out.results.insert("l2_slope_last3".into(), study.l2_slope(ell, 3).into());
    let failures: Vec<String> = study
        .failures
        .iter()
        .map(|(n, l, why)| format!("coarse_n={n} ell={l}: {why}"))
        .collect();
    out.results.insert("failures".into(), failures.into());
}

/// Runs one command and writes its files into `spec.output_dir`.
pub fn run(spec: &RunSpec) -> Result<RunOutcome> {
    spec.validate()?;
    fs::create_dir_all(&spec.output_dir)?;
    let dir = &spec.output_dir;
    let cfg = &spec.config;
    let mut out = RunOutcome::default();
    let emit = |out: &mut RunOutcome, name: &str| out.files.push(dir.join(name));
    match spec.command {
        Command::Solve => {
            let h = cfg.hierarchy()?;
            let u = solve_field(&h, cfg)?;
            write_csv(&dir.join("field.csv"), "node,x,y,value", field_rows(&u))?;
            emit(&mut out, "field.csv");
        }
        Command::Table1 | Command::Table2 | Command::Convergence => {
            let study = sweep(spec)?;
            let rows = study.reports.iter();
            match spec.command {
                Command::Table1 => {
                    write_csv(
                        &dir.join("table1.csv"),
                        "H,ell,h1_local_err",
                        rows.map(|r| format!("{},{},{}", sci(r.h), r.ell, sci(r.h1_local))),
                    )?;
                    emit(&mut out, "table1.csv");
                }
                Command::Table2 => {
                    write_csv(
                        &dir.join("table2.csv"),
                        "H,ell,l2_global_err",
                        rows.map(|r| format!("{},{},{}", sci(r.h), r.ell, sci(r.l2_global))),
                    )?;
                    emit(&mut out, "table2.csv");
                }
                _ => {
                    write_csv(
                        &dir.join("convergence.csv"),
                        "H,ell,h1_local_err,l2_global_err,l2_interp_err",
                        rows.map(|r| {
                            format!(
                                "{},{},{},{},{}",
                                sci(r.h),
                                r.ell,
                                sci(r.h1_local),
                                sci(r.l2_global),
                                sci(r.l2_interp)
                            )
                        }),
                    )?;
                    emit(&mut out, "convergence.csv");
                }
            }
            study_results(&study, &mut out);
        }
        Command::Decay => {
            let h = cfg.hierarchy()?;
            let prob = CorrectorProblem::new(&h, cfg.epsilon, cfg.b())?;
            let t = central_element(&h.coarse);
            let z = h.coarse.triangles[t]
                .iter()
                .copied()
                .find(|&z| !h.coarse.boundary_node[z])
                .ok_or_else(|| invalid("coarse_n", "the central element has no interior vertex"))?;
            let profile = decay_profile(&prob, t, &coarse_hat(&h, z), spec.decay_ell_max)?;
            write_csv(
                &dir.join("decay.csv"),
                "ell,seminorm_outside",
                profile.iter().map(|(l, v)| format!("{l},{}", sci(*v))),
            )?;
            emit(&mut out, "decay.csv");
            let ells: Vec<Ell> = (1..=spec.decay_ell_max).map(Ell::Finite).collect();
            let errs = localization_errors(&prob, &interior_hat_sum(&h), &ells)?;
            write_csv(
                &dir.join("localization.csv"),
                "ell,localization_err",
                ells.iter().zip(&errs).map(|(l, e)| format!("{l},{}", sci(*e))),
            )?;
            emit(&mut out, "localization.csv");
            let c_ih = estimate_interp_constant(&h, 20, spec.seed);
            out.results.insert("interp_constant_estimate".into(), c_ih.into());
            out.results.insert("suggested_ell".into(), suggested_ell(cfg, c_ih)?.into());
            out.results.insert("coarse_peclet".into(), cfg.peclet().into());
        }
        Command::Compare => {
            let h = cfg.hierarchy()?;
            let reference = solve_reference(&h, cfg.epsilon, cfg.b(), |p| cfg.f.eval(p), cfg.solver_tol)?;
            let fem = prolongate(&h, &solve_classical_coarse(&h, cfg)?);
            let supg = prolongate(&h, &solve_supg(&h, cfg)?);
            let vms = prolongate(&h, &solve_vms(&h, cfg)?.u);
            let y = 0.75;
            let cuts = [&reference, &fem, &supg, &vms]
                .iter()
                .map(|v| line_cut(v, y))
                .collect::<Result<Vec<_>>>()?;
            write_csv(
                &dir.join("linecut.csv"),
                "x,u_ref,u_fem,u_supg,u_vms",
                (0..cuts[0].len()).map(|i| {
                    let mut row = sci(cuts[0][i].0);
                    for c in &cuts {
                        let _ = write!(row, ",{}", sci(c[i].1));
                    }
                    row
                }),
            )?;
            emit(&mut out, "linecut.csv");
        }
        Command::Correctors => {
            let h = cfg.hierarchy()?;
            let prob = CorrectorProblem::new(&h, cfg.epsilon, cfg.b())?;
            let set = prob.build_corrector_set(cfg.effective_ell())?;
            let z = central_node(&h.coarse).ok_or_else(|| invalid("coarse_n", "no interior coarse node"))?;
            let k = set.nodes.iter().position(|&n| n == z).expect("interior node has a corrector");
            write_csv(&dir.join("corrector.csv"), "node,x,y,value", sparse_rows(&h.fine, &set.correctors[k]))?;
            emit(&mut out, "corrector.csv");
            let w = set.test_function(k);
            write_csv(&dir.join("test_function.csv"), "node,x,y,value", sparse_rows(&h.fine, &w))?;
            emit(&mut out, "test_function.csv");
            out.results.insert("node".into(), z.into());
        }
    }
    Ok(out)
}

/// Runs `spec` on a pool of `spec.threads` workers and writes the manifest.
pub fn run_with_manifest(spec: &RunSpec) -> Result<RunOutcome> {
    let start = Instant::now();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(spec.threads)
        .build()
        .map_err(|e| invalid("threads", e.to_string()))?;
    let mut outcome = pool.install(|| run(spec))?;
    let manifest = Manifest {
        config: spec.clone(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        wall_time_s: start.elapsed().as_secs_f64(),
        files: outcome
            .files
            .iter()
            .filter_map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
            .collect(),
        results: outcome.results.clone(),
    };
    let path = spec.output_dir.join("manifest.json");
    fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n")?;
    outcome.files.push(path);
    Ok(outcome)
}

/// Process exit code for an error: 2 for configuration and I/O problems,
/// 3 for solver failures.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidConfig { .. }
        | Error::NonNestedMeshes { .. }
        | Error::InvalidMesh(_)
        | Error::NotGridLine { .. }
        | Error::Json(_)
        | Error::Io(_) => 2,
        Error::Singular { .. } | Error::Residual { .. } | Error::NearSingular { .. } | Error::Corrector { .. } => 3,
    }
}

/// Entry point shared by the binary and the tests.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
        }
    };
    let result = cli.into_spec().and_then(|spec| run_with_manifest(&spec));
    match result {
        Ok(outcome) => {
            for f in &outcome.files {
                println!("{}", f.display());
            }
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scientific_format() {
        assert_eq!(sci(5.14e-2), "5.14000e-02");
        assert_eq!(sci(0.0), "0.00000e+00");
        assert_eq!(sci(-123456.789), "-1.23457e+05");
        assert_eq!(sci(1e-100), "1.00000e-100");
    }

    #[test]
    fn json_parsing() {
        let spec = RunSpec::from_json(
            r#"{"epsilon": 0.25, "ell": "inf", "command": "table2", "f": {"poly": [[1.0, 1, 0]]}, "sweep_coarse_n": [8]}"#,
        )
        .unwrap();
        assert_eq!(spec.config.epsilon, 0.25);
        assert_eq!(spec.config.ell, Ell::Global);
        assert_eq!(spec.command, Command::Table2);
        assert_eq!(spec.sweep_coarse_n, vec![8]);
        assert_eq!(spec.config.fine_n, 256);
        let field = |text: &str| match RunSpec::from_json(text) {
            Err(Error::InvalidConfig { field, .. }) => field,
            other => panic!("{other:?}"),
        };
        assert_eq!(field(r#"{"epsilon": 2.0}"#), "epsilon");
        assert_eq!(field(r#"{"epsilon": "small"}"#), "epsilon");
        assert_eq!(field(r#"{"coarse_n": 7}"#), "fine_n");
        assert_eq!(field(r#"{"colour": 1}"#), "colour");
        assert_eq!(field(r#"{"ell": 0}"#), "ell");
        assert_eq!(field(r#"{"command": "table1", "sweep_coarse_n": [8, 12]}"#), "sweep_coarse_n");
        assert!(matches!(RunSpec::from_json("{"), Err(Error::Json(_))));
    }

    #[test]
    fn spec_round_trip() {
        let spec = RunSpec {
            threads: 3,
            seed: 9,
            sweep_ell: vec![Ell::Finite(2), Ell::Global],
            ..RunSpec::default()
        };
        let text = serde_json::to_string(&spec).unwrap();
        assert_eq!(RunSpec::from_json(&text).unwrap(), spec);
    }

    #[test]
    fn flags_override_config() {
        let cli = Cli::try_parse_from([
            "pglod", "--epsilon", "0.5", "--ell", "inf", "--method", "supg", "--coarse-n", "4", "--fine-n", "8",
            "--b-angle", "-0.3", "--command", "decay",
        ])
        .unwrap();
        let spec = cli.into_spec().unwrap();
        assert_eq!(spec.config.epsilon, 0.5);
        assert_eq!(spec.config.ell, Ell::Global);
        assert_eq!(spec.config.method, Method::Supg);
        assert_eq!(spec.config.b_angle, -0.3);
        assert_eq!(spec.command, Command::Decay);
        assert!(Cli::try_parse_from(["pglod", "--method", "gls"]).is_err());
    }

    #[test]
    fn central_indices() {
        let m = crate::mesh::build_uniform_tri_mesh(16).unwrap();
        assert_eq!(m.barycenter(central_element(&m)), [0.5 + 2.0 / 48.0, 0.5 + 1.0 / 48.0]);
        assert_eq!(m.nodes[central_node(&m).unwrap()], [0.5, 0.5]);
    }
}
