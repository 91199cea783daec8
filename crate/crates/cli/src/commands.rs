use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;

use blockjacobi::bounds::{
    corollary_delta, corollary_params, gamma_rate, scalar_envelope, simplified_rate, BoundParams,
};
use blockjacobi::example_st::{
    asymptotic_error, jc_family, jc_lower_bound, levinson_profile, phase_class, transfer_eigenvalues,
    transfer_matrix, StParams,
};
use blockjacobi::green::{
    eigenpairs_below, green_column, perturbed_truncation, verify_commuting_decay,
    verify_eigenvector_decay, verify_green_decay, DecayReport, EigenSelector, CSV_HEADER,
};
use blockjacobi::linalg::CMatrix;
use blockjacobi::operator::{assemble_truncation, OperatorFamily, Truncation};
use blockjacobi::Complex64;
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::family::{parse_family, FamilySpec};
use crate::grid::{parse_calib, parse_lambda};
use crate::{CliError, Command, Format, Mode, Opts, Table};

/// Smallest truncation accepted by `verify`.
pub const MIN_VERIFY_BLOCKS: usize = 20;

/// Default truncation for the `jc` table.
const JC_DEFAULT_BLOCKS: usize = 400;

type CliResult<T> = Result<T, CliError>;

/// One output file (or stdout section).
struct Artifact {
    suffix: String,
    body: String,
}

pub fn run(command: &Command, opts: &Opts) -> CliResult<()> {
    let pool = thread_pool()?;
    let (artifacts, failure) = pool.install(|| match command {
        Command::Bounds => bounds(opts).map(|a| (a, None)),
        Command::Green => green(opts).map(|a| (a, None)),
        Command::Eigs => eigs(opts).map(|a| (a, None)),
        Command::Example { table, n0 } => example(opts, *table, *n0).map(|a| (a, None)),
        Command::Verify {
            mode,
            eig_index,
            corollary,
        } => verify(opts, *mode, *eig_index, *corollary),
    })?;
    emit(opts, &artifacts)?;
    match failure {
        Some(msg) => Err(CliError::Verification(msg)),
        None => Ok(()),
    }
}

fn thread_pool() -> CliResult<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var("BJB_THREADS") {
        let n: usize = v
            .trim()
            .parse()
            .map_err(|_| format!("BJB_THREADS must be a nonnegative integer (got `{v}`)"))?;
        builder = builder.num_threads(n);
    }
    builder
        .build()
        .map_err(|e| CliError::Input(format!("cannot start thread pool: {e}")))
}

fn emit(opts: &Opts, artifacts: &[Artifact]) -> CliResult<()> {
    match &opts.out {
        Some(prefix) => {
            for a in artifacts {
                let mut path = prefix.clone().into_os_string();
                path.push(&a.suffix);
                let path = PathBuf::from(path);
                fs::write(&path, &a.body)
                    .map_err(|e| format!("cannot write {}: {e}", path.display()))?;
            }
        }
        None => {
            let mut first = true;
            for a in artifacts {
                if !first {
                    println!();
                }
                first = false;
                print!("{}", a.body);
            }
        }
    }
    Ok(())
}

fn ext(opts: &Opts) -> &'static str {
    match opts.format {
        Format::Csv => "csv",
        Format::Json => "json",
    }
}

fn json_artifact(suffix: &str, value: &Value) -> Artifact {
    let mut body = serde_json::to_string_pretty(value).expect("json values serialize");
    body.push('\n');
    Artifact {
        suffix: format!("{suffix}.json"),
        body,
    }
}

fn csv_start(columns: &str) -> String {
    format!("{CSV_HEADER}\n{columns}\n")
}

fn family(opts: &Opts) -> CliResult<FamilySpec> {
    match &opts.family {
        Some(s) => Ok(parse_family(s)?),
        None => Err(CliError::Input("--family is required for this command".into())),
    }
}

fn lambdas(opts: &Opts) -> CliResult<Vec<Complex64>> {
    let Some(s) = &opts.lambda else {
        return Err(CliError::Input("--lambda is required for this command".into()));
    };
    if !opts.imag.is_finite() {
        return Err(CliError::Input("--imag must be finite".into()));
    }
    Ok(parse_lambda(s)?
        .into_iter()
        .map(|re| Complex64::new(re, opts.imag))
        .collect())
}

fn blocks(opts: &Opts) -> CliResult<usize> {
    match opts.n {
        Some(0) => Err(CliError::Input("--N must be at least 1".into())),
        Some(n) => Ok(n),
        None => Err(CliError::Input("--N is required for this command".into())),
    }
}

fn edge(opts: &Opts, fam: Option<&OperatorFamily>) -> CliResult<f64> {
    opts.b
        .or_else(|| fam.and_then(|f| f.edge_b()))
        .ok_or_else(|| CliError::Input("--b is required (the family has no known spectral edge)".into()))
}

/// Validates every grid point before any work starts.
fn bound_params(opts: &Opts, b: f64) -> CliResult<Vec<BoundParams>> {
    lambdas(opts)?
        .into_iter()
        .map(|l| {
            BoundParams::new(l, b, opts.delta, opts.eps)
                .map_err(|e| CliError::Input(format!("λ = {}: {e}", fmt_c(l))))
        })
        .collect()
}

/// Evaluates `f` on every grid point in parallel, keeping input order; the
/// first failure in input order is reported.
fn par_map<T, U, F>(items: &[T], f: F) -> CliResult<Vec<U>>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> CliResult<U> + Sync + Send,
{
    items.par_iter().map(f).collect::<Vec<_>>().into_iter().collect()
}

fn fmt_c(z: Complex64) -> String {
    if z.im == 0.0 {
        format!("{}", z.re)
    } else {
        format!("{}{:+}i", z.re, z.im)
    }
}

fn bounds(opts: &Opts) -> CliResult<Vec<Artifact>> {
    let spec = opts.family.as_deref().map(parse_family).transpose()?;
    let fam = spec.as_ref().map(|s| &s.family);
    let b = edge(opts, fam)?;
    let params = bound_params(opts, b)?;
    let envelopes = match (fam, opts.n) {
        (Some(f), Some(n)) if n > 0 => Some(par_map(&params, |p| Ok(scalar_envelope(f, p, n)?))?),
        (Some(_), Some(_)) => return Err(CliError::Input("--N must be at least 1".into())),
        _ => None,
    };

    let rates: Vec<(f64, f64, f64)> = params
        .iter()
        .map(|p| (gamma_rate(p), simplified_rate(p), corollary_delta(p)))
        .collect();

    if opts.format == Format::Json {
        let items: Vec<Value> = params
            .iter()
            .zip(&rates)
            .enumerate()
            .map(|(i, (p, &(g, s, cd)))| {
                let mut v = json!({
                    "lambda": [p.lambda().re, p.lambda().im],
                    "b": p.b(),
                    "delta": p.delta(),
                    "epsilon": p.epsilon(),
                    "gamma": g,
                    "simplified_rate": s,
                    "corollary_delta": cd,
                });
                if let Some(envs) = &envelopes {
                    let env = &envs[i];
                    v["cumulative"] = json!(env.cumulative());
                    v["envelope"] =
                        json!((1..=env.nblocks()).map(|m| env.from_start(m)).collect::<Vec<_>>());
                }
                v
            })
            .collect();
        return Ok(vec![json_artifact("", &Value::Array(items))]);
    }

    let mut out = csv_start("lambda_re,lambda_im,b,delta,epsilon,gamma,simplified_rate,corollary_delta");
    for (p, (g, s, cd)) in params.iter().zip(&rates) {
        let l = p.lambda();
        let _ = writeln!(
            out,
            "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{g:.16e},{s:.16e},{cd:.16e}",
            l.re,
            l.im,
            p.b(),
            p.delta(),
            p.epsilon()
        );
    }
    let mut artifacts = vec![Artifact {
        suffix: ".csv".into(),
        body: out,
    }];
    if let Some(envs) = envelopes {
        let mut t = csv_start("lambda_index,index,cumulative,envelope");
        for (i, env) in envs.iter().enumerate() {
            for m in 1..=env.nblocks() {
                let _ = writeln!(t, "{i},{m},{:.16e},{:.16e}", env.sum_at(m), env.from_start(m));
            }
        }
        artifacts.push(Artifact {
            suffix: "-envelope.csv".into(),
            body: t,
        });
    }
    Ok(artifacts)
}

fn green(opts: &Opts) -> CliResult<Vec<Artifact>> {
    let spec = family(opts)?;
    let n = blocks(opts)?;
    if opts.k == 0 || opts.k > n {
        return Err(CliError::Input(format!("--k must lie in 1..={n} (got {})", opts.k)));
    }
    let lams = lambdas(opts)?;
    let trunc = assemble_truncation(&spec.family, n)?;
    let columns = par_map(&lams, |&l| {
        let col = green_column(&trunc, l, opts.k)
            .map_err(|e| CliError::Input(format!("λ = {}: {e}", fmt_c(l))))?;
        Ok(col.norms()?)
    })?;

    if opts.format == Format::Json {
        let items: Vec<Value> = lams
            .iter()
            .zip(&columns)
            .map(|(l, norms)| json!({ "lambda": [l.re, l.im], "k": opts.k, "norms": norms }))
            .collect();
        return Ok(vec![json_artifact("", &Value::Array(items))]);
    }
    let mut out = csv_start("lambda_index,lambda_re,lambda_im,index,norm");
    for (i, (l, norms)) in lams.iter().zip(&columns).enumerate() {
        for (j, v) in norms.iter().enumerate() {
            let _ = writeln!(out, "{i},{:.16e},{:.16e},{},{v:.16e}", l.re, l.im, j + 1);
        }
    }
    Ok(vec![Artifact {
        suffix: ".csv".into(),
        body: out,
    }])
}

fn eigs(opts: &Opts) -> CliResult<Vec<Artifact>> {
    let spec = family(opts)?;
    let n = blocks(opts)?;
    let b = edge(opts, Some(&spec.family))?;
    let trunc = assemble_truncation(&spec.family, n)?;
    let pairs = eigenpairs_below(&trunc, b)?;
    let perturbed = match opts.tau {
        Some(tau) => {
            let id = CMatrix::identity(trunc.dim());
            Some(perturbed_truncation(&trunc, tau, &id)?)
        }
        None => None,
    };
    let dists = match &perturbed {
        Some(pt) => Some(par_map(&pairs, |p| {
            Ok(pt.distance_to_spectrum(Complex64::new(p.value, 0.0))?)
        })?),
        None => None,
    };
    for (i, p) in pairs.iter().enumerate() {
        if p.boundary_suspect {
            eprintln!(
                "warning: eigenpair {i} has tail norm {:.3e}; increase --N",
                p.tail_norm
            );
        }
    }

    if opts.format == Format::Json {
        let items: Vec<Value> = pairs
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let mut v = json!({
                    "index": i,
                    "eigenvalue": p.value,
                    "tail_norm": p.tail_norm,
                    "boundary_suspect": p.boundary_suspect,
                    "block_norms": p.block_norms(trunc.dim()),
                });
                if let Some(d) = &dists {
                    v["dist_perturbed"] = json!(d[i]);
                }
                v
            })
            .collect();
        return Ok(vec![json_artifact(
            "",
            &json!({ "b": b, "N": n, "tau": opts.tau, "eigenpairs": items }),
        )]);
    }
    let mut out = csv_start(if dists.is_some() {
        "index,eigenvalue,tail_norm,boundary_suspect,dist_perturbed"
    } else {
        "index,eigenvalue,tail_norm,boundary_suspect"
    });
    for (i, p) in pairs.iter().enumerate() {
        let _ = write!(out, "{i},{:.16e},{:.16e},{}", p.value, p.tail_norm, p.boundary_suspect);
        if let Some(d) = &dists {
            let _ = write!(out, ",{:.16e}", d[i]);
        }
        out.push('\n');
    }
    Ok(vec![Artifact {
        suffix: ".csv".into(),
        body: out,
    }])
}

fn st_params(spec: &FamilySpec) -> CliResult<StParams> {
    spec.st
        .ok_or_else(|| CliError::Input("this table needs an st:s=..,t=.. family".into()))
}

fn st_pair(spec: &FamilySpec) -> CliResult<(f64, f64)> {
    spec.st_pair
        .ok_or_else(|| CliError::Input("this table needs an st:... or jc:... family".into()))
}

fn example(opts: &Opts, table: Table, n0: usize) -> CliResult<Vec<Artifact>> {
    let spec = family(opts)?;
    match table {
        Table::Phase => {
            let (s, t) = st_pair(&spec)?;
            let class = phase_class(s, t)?;
            if opts.format == Format::Json {
                return Ok(vec![json_artifact(
                    "",
                    &json!({ "s": s, "t": t, "st": s * t, "class": class.to_string() }),
                )]);
            }
            let mut out = csv_start("s,t,st,class");
            let _ = writeln!(out, "{s:.16e},{t:.16e},{:.16e},{class}", s * t);
            Ok(vec![Artifact {
                suffix: ".csv".into(),
                body: out,
            }])
        }
        Table::Transfer => transfer_table(opts, st_params(&spec)?),
        Table::Levinson => levinson_table(opts, st_params(&spec)?, n0),
        Table::Jc => {
            let (s, t) = st_pair(&spec)?;
            let n = opts.n.unwrap_or(JC_DEFAULT_BLOCKS);
            if n == 0 {
                return Err(CliError::Input("--N must be at least 1".into()));
            }
            let trunc: Truncation = assemble_truncation(&jc_family(s, t)?, n)?;
            let min = trunc.min_eigenvalue()?;
            let bound = jc_lower_bound(s, t);
            if opts.format == Format::Json {
                return Ok(vec![json_artifact(
                    "",
                    &json!({ "s": s, "t": t, "N": n, "lower_bound": bound, "min_eigenvalue": min, "margin": min - bound }),
                )]);
            }
            let mut out = csv_start("s,t,N,lower_bound,min_eigenvalue,margin");
            let _ = writeln!(out, "{s:.16e},{t:.16e},{n},{bound:.16e},{min:.16e},{:.16e}", min - bound);
            Ok(vec![Artifact {
                suffix: ".csv".into(),
                body: out,
            }])
        }
    }
}

fn real_lambdas(opts: &Opts) -> CliResult<Vec<f64>> {
    let l = lambdas(opts)?;
    if opts.imag != 0.0 {
        return Err(CliError::Input("this table needs real λ (drop --imag)".into()));
    }
    Ok(l.into_iter().map(|z| z.re).collect())
}

fn transfer_table(opts: &Opts, p: StParams) -> CliResult<Vec<Artifact>> {
    let n = opts
        .n
        .ok_or_else(|| CliError::Input("--N (the index n) is required for the transfer table".into()))?;
    if n < 2 {
        return Err(CliError::Input("--N must be at least 2 for the transfer table".into()));
    }
    let lams = real_lambdas(opts)?;
    let det_expected = ((n as f64 - 1.0) / n as f64).powf(2.0 * p.alpha());
    let rows = par_map(&lams, |&l| {
        let roots = transfer_eigenvalues(p, l, n)?;
        let det = transfer_matrix(p, l, n)?.determinant();
        let asym = if p.is_threshold() && l < 0.0 {
            Some(asymptotic_error(p, l, n)?)
        } else {
            None
        };
        Ok((roots, det, asym))
    })?;

    if opts.format == Format::Json {
        let items: Vec<Value> = lams
            .iter()
            .zip(&rows)
            .map(|(l, (roots, det, asym))| {
                json!({
                    "lambda": l,
                    "n": n,
                    "roots": roots.iter().map(|z| [z.re, z.im]).collect::<Vec<_>>(),
                    "det": det,
                    "det_expected": det_expected,
                    "asymptotic_error": asym,
                })
            })
            .collect();
        return Ok(vec![json_artifact("", &Value::Array(items))]);
    }
    let mut out = csv_start(
        "lambda,n,mu1_re,mu1_im,mu2_re,mu2_im,mu3_re,mu3_im,mu4_re,mu4_im,det,det_expected,asymptotic_error",
    );
    for (l, (roots, det, asym)) in lams.iter().zip(&rows) {
        let _ = write!(out, "{l:.16e},{n}");
        for z in roots {
            let _ = write!(out, ",{:.16e},{:.16e}", z.re, z.im);
        }
        let _ = write!(out, ",{det:.16e},{det_expected:.16e},");
        if let Some(a) = asym {
            let _ = write!(out, "{a:.16e}");
        }
        out.push('\n');
    }
    Ok(vec![Artifact {
        suffix: ".csv".into(),
        body: out,
    }])
}

/// Profile rows are sampled at about 100 evenly spaced n in `n0..=N`.
fn levinson_table(opts: &Opts, p: StParams, n0: usize) -> CliResult<Vec<Artifact>> {
    let n = opts
        .n
        .ok_or_else(|| CliError::Input("--N (the last index) is required for the Levinson table".into()))?;
    if n0 < 2 || n < n0 {
        return Err(CliError::Input(format!("need N >= n0 >= 2 (got n0={n0}, N={n})")));
    }
    let lams = real_lambdas(opts)?;
    let stride = ((n - n0) / 100).max(1);
    let mut ns: Vec<usize> = (n0..=n).step_by(stride).collect();
    if *ns.last().unwrap() != n {
        ns.push(n);
    }
    let work: Vec<(usize, usize)> = (0..lams.len())
        .flat_map(|i| ns.iter().map(move |&m| (i, m)))
        .collect();
    let profiles = par_map(&work, |&(i, m)| Ok(levinson_profile(p, lams[i], n0, m)?))?;

    if opts.format == Format::Json {
        let items: Vec<Value> = work
            .iter()
            .zip(&profiles)
            .map(|(&(i, _), pr)| {
                json!({
                    "lambda": lams[i],
                    "n0": pr.n0,
                    "n": pr.n,
                    "log_product": pr.log_product,
                    "log_closed_form": pr.log_closed_form,
                    "ties": pr.ties.len(),
                })
            })
            .collect();
        return Ok(vec![json_artifact("", &Value::Array(items))]);
    }
    let mut out = csv_start("lambda,n0,n,log_product,log_closed_form,ties");
    for (&(i, _), pr) in work.iter().zip(&profiles) {
        let _ = writeln!(
            out,
            "{:.16e},{},{},{:.16e},{:.16e},{}",
            lams[i],
            pr.n0,
            pr.n,
            pr.log_product,
            pr.log_closed_form,
            pr.ties.len()
        );
    }
    Ok(vec![Artifact {
        suffix: ".csv".into(),
        body: out,
    }])
}

fn verify(
    opts: &Opts,
    mode: Mode,
    eig_index: Option<usize>,
    corollary: bool,
) -> CliResult<(Vec<Artifact>, Option<String>)> {
    let spec = family(opts)?;
    let fam = &spec.family;
    let n = blocks(opts)?;
    if n < MIN_VERIFY_BLOCKS {
        return Err(CliError::Input(format!(
            "--N must be at least {MIN_VERIFY_BLOCKS} for verification (got {n})"
        )));
    }
    let calib = opts.calib.as_deref().map(parse_calib).transpose()?;
    let b = edge(opts, Some(fam))?;

    // Eigenvector mode may run without --lambda; the λ is replaced by the
    // selected eigenvalue anyway.
    let params = if mode == Mode::Eigenvector && opts.lambda.is_none() {
        vec![BoundParams::new(Complex64::new(b - 1.0, 0.0), b, opts.delta, opts.eps)?]
    } else {
        bound_params(opts, b)?
    };
    let params: Vec<BoundParams> = if corollary {
        params.iter().map(corollary_params).collect()
    } else {
        params
    };
    let selector = |p: &BoundParams| match (eig_index, &opts.lambda) {
        (Some(i), _) => EigenSelector::ByIndex(i),
        (None, Some(_)) => EigenSelector::Nearest(p.lambda().re),
        (None, None) => EigenSelector::ByIndex(0),
    };

    let reports: Vec<DecayReport> = par_map(&params, |p| {
        let r = match mode {
            Mode::Green => verify_green_decay(fam, p, n, opts.k, calib),
            Mode::Eigenvector => verify_eigenvector_decay(fam, p, n, selector(p), calib),
            Mode::Commuting => verify_commuting_decay(fam, p, n, opts.k, calib),
        };
        r.map_err(|e| CliError::Input(format!("λ = {}: {e}", fmt_c(p.lambda()))))
    })?;

    let mut failed = Vec::new();
    for r in &reports {
        let l = fmt_c(r.params.lambda());
        for w in &r.warnings {
            eprintln!("warning: λ = {l}: {w}");
        }
        eprintln!(
            "λ = {l}: {} (pass fraction {}, fitted C {:.6e})",
            if r.all_pass() { "pass" } else { "FAIL" },
            r.pass_fraction(),
            r.fitted_c
        );
        if !r.all_pass() {
            failed.push(l);
        }
    }
    let failure = if failed.is_empty() {
        None
    } else {
        Some(format!("{} of {} λ values failed: {}", failed.len(), reports.len(), failed.join(", ")))
    };

    let artifacts = if opts.format == Format::Json {
        let items: Vec<Value> = reports
            .iter()
            .map(|r| {
                let mut v = r.summary_json();
                v["rows"] = json!(r
                    .rows
                    .iter()
                    .map(|row| json!([row.index, row.measured, row.envelope, row.verdict.as_str()]))
                    .collect::<Vec<_>>());
                v
            })
            .collect();
        let value = if items.len() == 1 {
            items.into_iter().next().unwrap()
        } else {
            Value::Array(items)
        };
        vec![json_artifact("", &value)]
    } else if reports.len() == 1 {
        vec![Artifact {
            suffix: format!(".{}", ext(opts)),
            body: reports[0].to_csv(),
        }]
    } else {
        reports
            .iter()
            .enumerate()
            .map(|(i, r)| Artifact {
                suffix: format!("-{i}.csv"),
                body: r.to_csv(),
            })
            .collect()
    };
    Ok((artifacts, failure))
}
