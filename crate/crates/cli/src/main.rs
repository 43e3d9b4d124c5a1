//! `weightlab` command-line front end.
//!
//! Exit codes: 0 when every hard check passes, 1 when one fails, 2 on usage
//! or IO errors. `WEIGHTLAB_THREADS` sets the size of the worker pool.

use std::error::Error as StdError;
use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use weightlab::bounds::{bound_report, check_bridge, reciprocal_epsilon, BoundInputs, EpsilonPolicy};
use weightlab::characteristics::characteristic_report;
use weightlab::corpus::{canonical_instance, trace_canonical};
use weightlab::gehring::SharpReverseHolder;
use weightlab::operators::{default_corpus, empirical_weak_operator_norm};
use weightlab::sparse::{
    build_sparse_cz, build_sparse_random, sparse_form, verify_sparsity, ExponentProfile, SparseFamily,
};
use weightlab::tracer::{trace_proof, TRACE_CSV_HEADER};
use weightlab::{DyadicGrid, Weight};

type AnyResult<T> = std::result::Result<T, Box<dyn StdError>>;

const CSV_VERSION: &str = "# weightlab-csv v1";

#[derive(Parser)]
#[command(name = "weightlab", version, about = "Dyadic weighted-inequality laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// A_p, RH_q and A_infty characteristics.
    Char {
        #[command(flatten)]
        weight: WeightArgs,
        #[command(flatten)]
        grid: GridArgs,
        /// A_p indices, comma separated.
        #[arg(short = 'p', value_delimiter = ',', default_value = "2")]
        p: Vec<f64>,
        /// RH_q indices, comma separated.
        #[arg(short = 'q', value_delimiter = ',', default_value = "2")]
        q: Vec<f64>,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Sharp reverse Hölder and subset-bound scans.
    VerifyGehring {
        #[command(flatten)]
        weight: WeightArgs,
        #[command(flatten)]
        grid: GridArgs,
        #[command(flatten)]
        profile: ProfileArgs,
        /// Reverse Hölder exponent; defaults to (q0/2)'.
        #[arg(long = "q-star")]
        q_star: Option<f64>,
        /// Number of ε values in (0, ε_max].
        #[arg(long = "eps-grid", default_value_t = 10)]
        eps_grid: usize,
        /// Random subsets per ε.
        #[arg(long, default_value_t = 1000)]
        subsets: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Evaluates a sparse form.
    SparseForm {
        #[command(flatten)]
        weight: WeightArgs,
        #[command(flatten)]
        grid: GridArgs,
        #[command(flatten)]
        profile: ProfileArgs,
        /// Family JSON; a seeded random family is built otherwise.
        #[arg(long)]
        family: Option<PathBuf>,
        /// Build the Calderón–Zygmund family of f with this ratio instead.
        #[arg(long = "cz-ratio", conflicts_with = "family")]
        cz_ratio: Option<f64>,
        #[arg(long, default_value_t = 0.3)]
        density: f64,
        #[arg(long = "max-level")]
        max_level: Option<u32>,
        /// Values of f, one per line; seeded uniform [0, 1) otherwise.
        #[arg(long = "f-file")]
        f_file: Option<PathBuf>,
        #[arg(long = "g-file")]
        g_file: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Weak-type norm of the square function over the function corpus.
    WeakNorm {
        #[command(flatten)]
        weight: WeightArgs,
        #[command(flatten)]
        grid: GridArgs,
        #[arg(short = 'p', default_value_t = 2.0)]
        p: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Traces the pigeonhole argument on one instance.
    TraceProof {
        #[command(flatten)]
        weight: WeightArgs,
        #[command(flatten)]
        grid: GridArgs,
        #[command(flatten)]
        profile: ProfileArgs,
        #[command(flatten)]
        eps: EpsilonArgs,
        /// Sparse family JSON; the Calderón–Zygmund family of fσ otherwise.
        #[arg(long)]
        family: Option<PathBuf>,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Bound formulas from a weight or from supplied characteristics.
    Bounds {
        #[command(flatten)]
        weight: WeightArgs,
        #[command(flatten)]
        grid: GridArgs,
        #[command(flatten)]
        profile: ProfileArgs,
        #[command(flatten)]
        eps: EpsilonArgs,
        /// JSON with fields ap, rh, a_infty, a_infty_pow.
        #[arg(long, conflicts_with_all = ["power", "weight_file", "unit_weight"])]
        inputs: Option<PathBuf>,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Power-weight sweep of characteristics, bounds, weak norm and C0.
    Sweep {
        #[command(flatten)]
        grid: GridArgs,
        #[command(flatten)]
        profile: ProfileArgs,
        #[arg(long = "alpha-min", default_value_t = -0.375, allow_hyphen_values = true)]
        alpha_min: f64,
        #[arg(long = "alpha-max", default_value_t = 0.375, allow_hyphen_values = true)]
        alpha_max: f64,
        #[arg(long = "alpha-steps", default_value_t = 7)]
        alpha_steps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        out: OutArgs,
    },
}

#[derive(Args)]
struct WeightArgs {
    /// Power weight x^alpha.
    #[arg(long, allow_hyphen_values = true, group = "weight_source")]
    power: Option<f64>,
    /// Tabulated weight file: one positive value per line, 2^k lines.
    #[arg(long = "weight-file", group = "weight_source")]
    weight_file: Option<PathBuf>,
    #[arg(long = "unit-weight", group = "weight_source")]
    unit_weight: bool,
}

impl WeightArgs {
    fn given(&self) -> bool {
        self.power.is_some() || self.weight_file.is_some() || self.unit_weight
    }

    /// Unit weight when nothing is given.
    fn load(&self, grid: DyadicGrid) -> AnyResult<Weight> {
        if let Some(a) = self.power {
            return Ok(Weight::power(a)?);
        }
        if let Some(path) = &self.weight_file {
            let w = Weight::from_text(&fs::read_to_string(path)?, None)?;
            if w.native_depth().is_some_and(|d| d > grid.depth()) {
                return Err(format!("weight file is finer than --L {}", grid.depth()).into());
            }
            return Ok(w);
        }
        Ok(Weight::unit())
    }
}

#[derive(Args)]
struct GridArgs {
    /// Grid depth; the grid has 2^L cells.
    #[arg(long = "L", default_value_t = 10)]
    depth: u32,
}

impl GridArgs {
    fn grid(&self) -> AnyResult<DyadicGrid> {
        Ok(DyadicGrid::new(self.depth)?)
    }
}

#[derive(Args)]
struct ProfileArgs {
    #[arg(long, default_value_t = 1.0)]
    p0: f64,
    /// Upper exponent; `inf` allowed.
    #[arg(long, default_value = "4", value_parser = parse_extended)]
    q0: f64,
    /// Target exponent.
    #[arg(long = "target", default_value_t = 2.0)]
    target: f64,
}

impl ProfileArgs {
    fn profile(&self) -> AnyResult<ExponentProfile> {
        Ok(ExponentProfile::with_target(self.p0, self.q0, self.target)?)
    }
}

fn parse_extended(s: &str) -> std::result::Result<f64, String> {
    match s {
        "inf" | "infinity" | "Inf" => Ok(f64::INFINITY),
        _ => s.parse().map_err(|e| format!("{e}")),
    }
}

#[derive(Args)]
struct EpsilonArgs {
    #[arg(long)]
    epsilon: Option<f64>,
    /// Use ε = 1/(4 [w^{q0*}]_{A_∞}).
    #[arg(long, conflicts_with = "epsilon")]
    reciprocal: bool,
}

impl EpsilonArgs {
    fn policy(&self) -> EpsilonPolicy {
        match (self.epsilon, self.reciprocal) {
            (Some(e), _) => EpsilonPolicy::Explicit(e),
            (None, true) => EpsilonPolicy::Reciprocal,
            (None, false) => EpsilonPolicy::Max,
        }
    }
}

#[derive(Args)]
struct OutArgs {
    /// JSON output path.
    #[arg(long)]
    json: Option<PathBuf>,
    /// CSV output path.
    #[arg(long)]
    csv: Option<PathBuf>,
}

impl OutArgs {
    /// The JSON document goes to `--json`, or stdout when the command's main
    /// artifact is JSON.
    fn emit_json(&self, v: &Value, primary: bool) -> AnyResult<()> {
        let text = format!("{}\n", serde_json::to_string_pretty(v)?);
        match &self.json {
            Some(p) => fs::write(p, text)?,
            None if primary => print!("{text}"),
            None => {}
        }
        Ok(())
    }

    fn emit_csv(&self, header: &str, rows: &[String], primary: bool) -> AnyResult<()> {
        let mut text = format!("{CSV_VERSION}\n{header}\n");
        for r in rows {
            writeln!(text, "{r}")?;
        }
        match &self.csv {
            Some(p) => fs::write(p, text)?,
            None if primary => print!("{text}"),
            None => {}
        }
        Ok(())
    }
}

fn read_values(path: &PathBuf, n: usize) -> AnyResult<Vec<f64>> {
    let v: Vec<f64> = fs::read_to_string(path)?
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::parse)
        .collect::<std::result::Result<_, _>>()?;
    if v.len() != n {
        return Err(format!("{}: expected {n} values, found {}", path.display(), v.len()).into());
    }
    Ok(v)
}

fn seeded_uniform(n: usize, seed: u64) -> Vec<f64> {
    // SplitMix64
    let mut state = seed;
    (0..n)
        .map(|_| {
            state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
            let mut z = state;
            z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
            z = (z ^ (z >> 27)).wrapping_mul(0x94d1_049b_b133_111b);
            z ^= z >> 31;
            (z >> 11) as f64 / (1u64 << 53) as f64
        })
        .collect()
}

fn run(cli: Cli) -> AnyResult<bool> {
    match cli.command {
        Command::Char { weight, grid, p, q, out } => {
            let g = grid.grid()?;
            let report = characteristic_report(&weight.load(g)?, g, &p, &q)?;
            out.emit_json(&serde_json::to_value(report)?, true)?;
            Ok(true)
        }
        Command::VerifyGehring {
            weight,
            grid,
            profile,
            q_star,
            eps_grid,
            subsets,
            seed,
            out,
        } => {
            let g = grid.grid()?;
            let q = q_star.unwrap_or(profile.profile()?.q0_star());
            let s = SharpReverseHolder::new(&weight.load(g)?, q, g)?;
            let mut rows = Vec::new();
            let mut violations = 0usize;
            let mut worst = 0f64;
            for eps in s.epsilon_grid(eps_grid) {
                let scan = s.scan_sharp_rh(eps)?;
                let sub = s.random_subset_checks(eps, subsets, seed)?;
                for (kind, checks) in [("rh", scan), ("subset", sub)] {
                    for (cube, c) in checks {
                        violations += usize::from(!c.passes());
                        worst = worst.max(c.ratio);
                        rows.push(format!(
                            "{kind},{},{},{eps:e},{:e},{:e},{:e}",
                            cube.level, cube.index, c.lhs, c.rhs, c.ratio
                        ));
                    }
                }
            }
            out.emit_csv("kind,level,index,epsilon,lhs,rhs,ratio", &rows, true)?;
            let summary = json!({
                "q_star": q,
                "rh": s.rh(),
                "a_infty_pow": s.a_infty_pow(),
                "epsilon_max": s.epsilon_max(),
                "checks": rows.len(),
                "violations": violations,
                "max_ratio": worst,
            });
            out.emit_json(&summary, false)?;
            Ok(violations == 0)
        }
        Command::SparseForm {
            weight,
            grid,
            profile,
            family,
            cz_ratio,
            density,
            max_level,
            f_file,
            g_file,
            seed,
            out,
        } => {
            let g = grid.grid()?;
            let prof = profile.profile()?;
            let n = g.cells();
            let f = match &f_file {
                Some(p) => read_values(p, n)?,
                None => seeded_uniform(n, seed),
            };
            let gv = match &g_file {
                Some(p) => read_values(p, n)?,
                None => seeded_uniform(n, seed.wrapping_add(1)),
            };
            let fam = match (&family, cz_ratio) {
                (Some(p), _) => SparseFamily::from_json(&fs::read_to_string(p)?, g)?,
                (None, Some(r)) => build_sparse_cz(&f, g, r)?,
                (None, None) => build_sparse_random(g, max_level.unwrap_or(g.depth()), density, seed)?,
            };
            let verdict = verify_sparsity(&fam);
            let w = if weight.given() { Some(weight.load(g)?) } else { None };
            let value = sparse_form(&f, &gv, &prof, fam.cubes(), w.as_ref())?;
            let doc = json!({
                "L": g.depth(),
                "profile": prof,
                "family_size": fam.len(),
                "sparsity": verdict,
                "value": value,
            });
            out.emit_json(&doc, true)?;
            Ok(verdict.passes())
        }
        Command::WeakNorm { weight, grid, p, seed, out } => {
            let g = grid.grid()?;
            let w = weight.load(g)?;
            let corpus = default_corpus(g, seed);
            let (best, rows) = empirical_weak_operator_norm(&w, p, &corpus)?;
            let lines: Vec<String> = rows
                .iter()
                .map(|r| format!("{},{:e},{:e},{:e}", r.id, r.strong, r.weak, r.ratio))
                .collect();
            out.emit_csv("id,strong,weak,ratio", &lines, true)?;
            out.emit_json(&json!({ "L": g.depth(), "p": p, "functions": rows.len(), "max_ratio": best }), false)?;
            Ok(true)
        }
        Command::TraceProof {
            weight,
            grid,
            profile,
            eps,
            family,
            out,
        } => {
            let g = grid.grid()?;
            let w = weight.load(g)?;
            let prof = profile.profile()?;
            let epsilon = match eps.policy() {
                EpsilonPolicy::Max => None,
                EpsilonPolicy::Explicit(e) => Some(e),
                EpsilonPolicy::Reciprocal => Some(reciprocal_epsilon(BoundInputs::from_weight(&w, &prof, g)?.a_infty_pow)),
            };
            let trace = match &family {
                None => trace_canonical(&w, prof, g, epsilon)?,
                Some(p) => {
                    let fam = SparseFamily::from_json(&fs::read_to_string(p)?, g)?;
                    let (ctx, _, gset) = canonical_instance(&w, prof, g)?;
                    trace_proof(&ctx, &fam, &gset, epsilon)?
                }
            };
            out.emit_json(&serde_json::to_value(&trace)?, true)?;
            out.emit_csv(TRACE_CSV_HEADER, &trace.csv_rows(), false)?;
            Ok(trace.passes(1e-12))
        }
        Command::Bounds {
            weight,
            grid,
            profile,
            eps,
            inputs,
            out,
        } => {
            let g = grid.grid()?;
            let prof = profile.profile()?;
            let (bi, provenance, w) = match &inputs {
                Some(p) => (serde_json::from_str::<BoundInputs>(&fs::read_to_string(p)?)?, "supplied", None),
                None => {
                    let w = weight.load(g)?;
                    (BoundInputs::from_weight(&w, &prof, g)?, "computed", Some(w))
                }
            };
            let report = bound_report(bi, provenance, &prof, eps.policy())?;
            let mut doc = serde_json::to_value(&report)?;
            let mut ok = true;
            if let Some(w) = w {
                let bridge = check_bridge(&w, &prof, prof.p, g)?;
                ok = bridge.passes_within(1e-12);
                doc["bridge"] = serde_json::to_value(bridge)?;
            }
            out.emit_json(&doc, true)?;
            Ok(ok)
        }
        Command::Sweep {
            grid,
            profile,
            alpha_min,
            alpha_max,
            alpha_steps,
            seed,
            out,
        } => {
            let g = grid.grid()?;
            let prof = profile.profile()?;
            let corpus = default_corpus(g, seed);
            let steps = alpha_steps.max(1);
            let mut rows = Vec::with_capacity(steps);
            for k in 0..steps {
                let alpha = if steps == 1 {
                    alpha_min
                } else {
                    alpha_min + (alpha_max - alpha_min) * k as f64 / (steps - 1) as f64
                };
                rows.push(sweep_row(alpha, &prof, g, &corpus).unwrap_or_else(|e| {
                    eprintln!("alpha {alpha}: {e}");
                    format!("{alpha},NA,NA,NA,NA,NA,NA,NA,NA,NA")
                }));
            }
            out.emit_csv(
                "alpha,ap,rh,a_infty,a_infty_pow,eps_bound,explicit_bound,strong,weak_norm,c0",
                &rows,
                true,
            )?;
            Ok(true)
        }
    }
}

fn sweep_row(
    alpha: f64,
    prof: &ExponentProfile,
    g: DyadicGrid,
    corpus: &[weightlab::operators::TestFunction],
) -> AnyResult<String> {
    let w = Weight::power(alpha)?;
    let bi = BoundInputs::from_weight(&w, prof, g)?;
    let r = bound_report(bi, "computed", prof, EpsilonPolicy::Max)?;
    let weak = empirical_weak_operator_norm(&w, 2.0, corpus)?.0;
    let c0 = trace_canonical(&w, *prof, g, None)?.main.c0;
    Ok(format!(
        "{alpha},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e}",
        bi.ap, bi.rh, bi.a_infty, bi.a_infty_pow, r.eps_bound, r.explicit_bound, r.strong_bound, weak, c0
    ))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = std::env::var("WEIGHTLAB_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            eprintln!("weightlab: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("weightlab: {e}");
            ExitCode::from(2)
        }
    }
}
