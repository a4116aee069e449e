use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use crl::graph::{self, SimilarityGraph};
use crl::io::{self, ModelFile};
use crl::losses::NoiseScale;
use crl::metrics;
use crl::model::Dataset;
use crl::protocols::{self, median, ValidationGrid};
use crl::selection::{self, PicVariant};
use crl::sim::{self, CentroidSpec, PlantedSpec, RegressionSpec, Scenario};
use crl::solver::{self, FitConfig, FitResult, Variant};
use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::{BenchArgs, ClusterArgs, DataArgs, Failure, FitArgs, GraphKindArg, Pic, ScenarioArg, SegmentArgs, SimulateArgs, Suite, TuneArgs};

type Outcome = Result<(), Failure>;

pub struct Context {
    pub seed: u64,
    pub verbose: bool,
}

fn require_file(path: &Path) -> Outcome {
    if path.is_file() {
        Ok(())
    } else {
        Err(Failure { code: 3, kind: "io", message: format!("input file not found: {}", path.display()) })
    }
}

fn require_parent(path: &Path) -> Outcome {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() && !dir.is_dir() => {
            Err(Failure { code: 3, kind: "io", message: format!("output directory does not exist: {}", dir.display()) })
        }
        _ => Ok(()),
    }
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = OsString::from(prefix.as_os_str());
    s.push(suffix);
    PathBuf::from(s)
}

/// `a:b` (inclusive) or `a,b,c`.
fn parse_grid(spec: &str) -> Result<Vec<usize>, Failure> {
    let bad = || Failure::usage(format!("grid `{spec}` must be `a:b` or a comma list of positive integers"));
    let values: Vec<usize> = if let Some((a, b)) = spec.split_once(':') {
        let (a, b): (usize, usize) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
        if a > b {
            return Err(bad());
        }
        (a..=b).collect()
    } else {
        spec.split(',').map(|t| t.trim().parse().map_err(|_| bad())).collect::<Result<_, _>>()?
    };
    if values.is_empty() || values.contains(&0) {
        return Err(bad());
    }
    Ok(values)
}

fn emit(out: Option<&Path>, bytes: &[u8]) -> Outcome {
    match out {
        Some(p) => std::fs::write(p, bytes)?,
        None => std::io::stdout().write_all(bytes)?,
    }
    Ok(())
}

fn json_bytes<T: serde::Serialize>(v: &T) -> Result<Vec<u8>, Failure> {
    let mut b = serde_json::to_vec_pretty(v).map_err(|e| Failure::from(crl::error::CrlError::from(e)))?;
    b.push(b'\n');
    Ok(b)
}

fn load_dataset(a: &DataArgs) -> Result<Dataset, Failure> {
    let x = io::read_matrix(&a.x)?;
    let y = io::read_matrix(&a.y)?;
    Ok(Dataset::new(y, x, a.loss.into())?)
}

fn base_config(a: &DataArgs, q: usize, r: usize, seed: u64) -> FitConfig {
    let variant = if a.rankwise { Variant::RankWise } else { Variant::RowWise };
    FitConfig::new(q, r, seed).with_variant(variant).with_intercept(a.intercept)
}

fn trace(ctx: &Context, res: &FitResult) {
    if !ctx.verbose {
        return;
    }
    for (k, v) in res.objective_trace.iter().enumerate() {
        match k.checked_sub(1).and_then(|i| res.diagnostics.rho_trace.get(i)) {
            Some(rho) => eprintln!("iter {k} objective {v:.12e} rho {rho:.6e}"),
            None => eprintln!("iter {k} objective {v:.12e}"),
        }
    }
    if !res.converged {
        eprintln!("warning: stopped at the outer iteration limit before converging");
    }
}

pub fn fit(ctx: &Context, a: FitArgs) -> Outcome {
    require_file(&a.data.x)?;
    require_file(&a.data.y)?;
    for p in [&a.data.weighted, &a.init].into_iter().flatten() {
        require_file(p)?;
    }
    if let Some(out) = &a.out {
        require_parent(out)?;
    }
    if a.data.weighted.is_some() && a.init.is_some() {
        return Err(Failure::usage("--weighted and --init cannot be combined"));
    }
    let d = load_dataset(&a.data)?;
    let cfg = base_config(&a.data, a.q, a.r, ctx.seed);
    let mut original = None;
    let res = if let Some(gp) = &a.data.weighted {
        let gamma = io::read_matrix(gp)?;
        let wf = solver::fit_weighted(&d, &gamma, &cfg)?;
        original = Some(wf.b_original);
        wf.result
    } else {
        let init = match &a.init {
            Some(p) => Some(io::load_json::<ModelFile>(p)?.factorization()?),
            None => None,
        };
        solver::fit(&d, &cfg, init.as_ref())?
    };
    trace(ctx, &res);
    let model = ModelFile::from_fit(&res, &cfg);
    emit(a.out.as_deref(), &json_bytes(&model)?)?;
    if let (Some(b), Some(out)) = (original, &a.out) {
        io::save_matrix(&with_suffix(out, ".original.csv"), &b, None)?;
    }
    Ok(())
}

pub fn tune(ctx: &Context, a: TuneArgs) -> Outcome {
    require_file(&a.data.x)?;
    require_file(&a.data.y)?;
    if let Some(p) = &a.out_prefix {
        require_parent(p)?;
    }
    if a.data.weighted.is_some() {
        return Err(Failure::usage("--weighted is not supported by tune"));
    }
    let q_grid = parse_grid(&a.q_grid)?;
    let r_grid = parse_grid(&a.r_grid)?;
    let variant = match (a.pic, a.sigma2) {
        (Pic::Plugin, Some(s)) => PicVariant::PlugIn { sigma2: NoiseScale::known(s)?, a: 2.0 },
        (Pic::Plugin, None) => PicVariant::plug_in(),
        (_, Some(_)) => return Err(Failure::usage("--sigma2 applies to --pic plugin only")),
        (Pic::Sf, None) => PicVariant::fractional(),
        (Pic::Log, None) => PicVariant::log_form(),
    };
    let d = load_dataset(&a.data)?;
    let cfg = base_config(&a.data, 1, 1, ctx.seed);
    let out = selection::select_over_grid(&d, &q_grid, &r_grid, &cfg, &variant)?;
    trace(ctx, &out.best);
    let json = json_bytes(&out.report)?;
    match &a.out_prefix {
        Some(prefix) => {
            std::fs::write(with_suffix(prefix, ".json"), &json)?;
            let mut csv = Vec::new();
            io::write_report_csv(&mut csv, &out.report)?;
            std::fs::write(with_suffix(prefix, ".csv"), csv)?;
            let (q, r) = out.report.winner;
            let model = ModelFile::from_fit(&out.best, &FitConfig { q, r, ..cfg });
            std::fs::write(with_suffix(prefix, ".model.json"), json_bytes(&model)?)?;
        }
        None => emit(None, &json)?,
    }
    Ok(())
}

pub fn cluster(ctx: &Context, a: ClusterArgs) -> Outcome {
    for p in [&a.data, &a.edges, &a.truth].into_iter().flatten() {
        require_file(p)?;
    }
    if let Some(out) = &a.out {
        require_parent(out)?;
    }
    if a.graph.is_none() && (a.bandwidth.is_some() || a.k.is_some()) {
        return Err(Failure::usage("--bandwidth and --k need --graph"));
    }
    let graph = match (&a.data, &a.edges) {
        (Some(dp), None) => {
            let data = io::read_matrix(dp)?;
            match a.graph {
                None => None,
                Some(GraphKindArg::Gaussian) => {
                    let bw = a.bandwidth.unwrap_or_else(|| graph::default_bandwidth(&data, ctx.seed));
                    Some(graph::gaussian_similarity(&data, bw)?)
                }
                Some(GraphKindArg::Mknn) => Some(graph::mutual_knn_similarity(&data, a.k.unwrap_or(10))?),
            }
            .map_or_else(|| Ok::<_, Failure>(Err(data)), |g| Ok(Ok(g)))?
        }
        (None, Some(ep)) => Ok(graph::read_edge_list(ep, a.n, !a.zero_based)?),
        _ => return Err(Failure::usage("give exactly one of --data and --edges")),
    };
    let res = match graph {
        Ok(g) => kernel_fit(ctx, &g, &a)?,
        Err(data) => {
            let r = a.r.unwrap_or(a.q.min(data.ncols()));
            solver::fit_unsupervised(&data, &FitConfig::new(a.q, r, ctx.seed))?
        }
    };
    trace(ctx, &res);
    let labels = &res.clusters.labels;
    if let Some(tp) = &a.truth {
        let truth = io::read_labels(tp)?;
        let scores = serde_json::json!({
            "ca": metrics::clustering_accuracy(&truth, labels)?,
            "nmi": metrics::nmi(&truth, labels)?,
            "rand": metrics::rand_index(&truth, labels)?,
        });
        eprintln!("{scores}");
    }
    let mut buf = Vec::new();
    io::write_labels(&mut buf, labels)?;
    emit(a.out.as_deref(), &buf)
}

fn kernel_fit(ctx: &Context, g: &SimilarityGraph, a: &ClusterArgs) -> Result<FitResult, Failure> {
    let m_bar = a.mbar.unwrap_or(2 * a.q).min(g.n());
    let r = a.r.unwrap_or(a.q).min(m_bar);
    Ok(graph::kernel_crl(g, !a.unnormalized, m_bar, a.whiten, &FitConfig::new(a.q, r, ctx.seed))?)
}

pub fn simulate(ctx: &Context, a: SimulateArgs) -> Outcome {
    require_parent(&a.out_prefix)?;
    let centroid = |base: CentroidSpec| CentroidSpec {
        q: a.q.unwrap_or(base.q),
        ambient_m: a.m.unwrap_or(base.ambient_m),
        centroid_dim: if base.centroid_dim == base.ambient_m { a.m.unwrap_or(base.centroid_dim) } else { base.centroid_dim },
        per_cluster: a.per_cluster.unwrap_or(base.per_cluster),
        sigma2: a.sigma2.unwrap_or(base.sigma2),
        ..base
    };
    let scenario = match a.scenario {
        ScenarioArg::Setting1 => Scenario::CentroidClusters(centroid(CentroidSpec::setting1())),
        ScenarioArg::Setting2 => Scenario::CentroidClusters(centroid(CentroidSpec::setting2())),
        ScenarioArg::Regression => {
            let b = RegressionSpec::default();
            Scenario::RegressionSuite(RegressionSpec {
                n: a.n.unwrap_or(b.n),
                p: a.p.unwrap_or(b.p),
                m: a.m.unwrap_or(b.m),
                q: a.q.unwrap_or(b.q),
                r: a.r.unwrap_or(b.r),
                tau: a.tau.unwrap_or(b.tau),
                sigma_b: a.sigma_b.unwrap_or(b.sigma_b),
            })
        }
        ScenarioArg::Planted => {
            let b = PlantedSpec::gn();
            Scenario::PlantedPartition(PlantedSpec {
                n: a.n.unwrap_or(b.n),
                q: a.q.unwrap_or(b.q),
                z_in: a.z_in.unwrap_or(b.z_in),
                z_out: a.z_out.unwrap_or(b.z_out),
            })
        }
        ScenarioArg::Moons => Scenario::DoubleMoon { per_cluster: a.per_cluster.unwrap_or(150), noise: a.noise.unwrap_or(0.05) },
        ScenarioArg::Rings => Scenario::ClusterInCluster { per_cluster: a.per_cluster.unwrap_or(150), noise: a.noise.unwrap_or(0.05) },
    };
    let g = sim::generate(&scenario, ctx.seed)?;
    let mut written = Vec::new();
    let mut path = |suffix: &str| {
        let p = with_suffix(&a.out_prefix, suffix);
        written.push(p.display().to_string());
        p
    };
    match (&scenario, &g.x) {
        (Scenario::RegressionSuite(_), Some(x)) => {
            io::save_matrix(&path("_x.csv"), x, None)?;
            io::save_matrix(&path("_y.csv"), &g.y, None)?;
        }
        (Scenario::PlantedPartition(_), _) => {
            let mut text = String::new();
            for i in 0..g.y.nrows() {
                for j in i + 1..g.y.ncols() {
                    if g.y[(i, j)] > 0.0 {
                        text.push_str(&format!("{} {}\n", i + 1, j + 1));
                    }
                }
            }
            std::fs::write(path("_edges.txt"), text)?;
        }
        _ => io::save_matrix(&path("_data.csv"), &g.y, None)?,
    }
    io::save_labels(&path("_labels.csv"), &g.truth.labels)?;
    io::save_truth(&path("_truth.json"), &g.truth)?;
    emit(None, &json_bytes(&serde_json::json!({ "scenario": scenario, "seed": ctx.seed, "files": written }))?)
}

/// Runs `reps` replicates in parallel, seeded `seed + replicate`.
fn replicates<T: Send>(ctx: &Context, reps: u64, f: impl Fn(u64, u64) -> Result<T, Failure> + Sync) -> Result<Vec<T>, Failure> {
    (0..reps).into_par_iter().map(|i| f(i, ctx.seed + i)).collect()
}

fn fmt_cell(v: f64) -> String {
    if v.is_finite() { format!("{v:.4}") } else { "NA".into() }
}

pub fn bench(ctx: &Context, a: BenchArgs) -> Outcome {
    if let Some(out) = &a.out {
        require_parent(out)?;
    }
    if a.reps == 0 {
        return Err(Failure::usage("--reps must be positive"));
    }
    let mut csv = String::new();
    match a.suite {
        Suite::B2 => {
            csv.push_str("suite,setting,sigma2,r,replicate,seed,ca,nmi,mse\n");
            let mut header = vec!["method".to_string()];
            let mut table: Vec<Vec<String>> = vec![vec!["CRL (r=q)".into()], vec!["CRL (r=0.5q)".into()]];
            for (setting, base) in [(1, CentroidSpec::setting1()), (2, CentroidSpec::setting2())] {
                for sigma2 in [1.0, 1e4] {
                    let spec = CentroidSpec { sigma2, ..base.clone() };
                    header.push(format!("S{setting} s2={sigma2} CA"));
                    header.push(format!("S{setting} s2={sigma2} MSE"));
                    for (row, r) in [spec.q, spec.q / 2].into_iter().enumerate() {
                        let scores = replicates(ctx, a.reps, |i, seed| Ok((i, seed, protocols::centroid_replicate(&spec, r, seed)?)))?;
                        for (i, seed, s) in &scores {
                            csv.push_str(&format!("b2,{setting},{sigma2},{r},{i},{seed},{},{},{}\n", s.ca, s.nmi, s.mse));
                        }
                        let ca: Vec<f64> = scores.iter().map(|s| s.2.ca).collect();
                        let mse: Vec<f64> = scores.iter().map(|s| s.2.mse).collect();
                        table[row].push(fmt_cell(median(&ca)));
                        table[row].push(fmt_cell(median(&mse)));
                    }
                }
            }
            eprintln!("{}", header.join("\t"));
            for row in table {
                eprintln!("{}", row.join("\t"));
            }
        }
        Suite::B4 => {
            csv.push_str("suite,sigma_b,replicate,seed,method,q,r,err_e,err_p\n");
            let mut header = vec!["method".to_string()];
            let mut table: Vec<Vec<String>> = vec![vec!["RRR".into()], vec!["CRL".into()]];
            for sigma_b in [0.0, 0.04, 0.08, 0.12, 0.16] {
                let spec = RegressionSpec { sigma_b, ..RegressionSpec::default() };
                let scores = replicates(ctx, a.reps, |i, seed| Ok((i, seed, protocols::misspec_replicate(&spec, &ValidationGrid::default(), 10_000, seed)?)))?;
                header.push(format!("sB={sigma_b} Err(e)"));
                header.push(format!("sB={sigma_b} Err(p)"));
                let mut cols = [(Vec::new(), Vec::new()), (Vec::new(), Vec::new())];
                for (i, seed, s) in &scores {
                    let err_e = |e: &metrics::PredictionError| e.err_e.unwrap_or(f64::NAN);
                    csv.push_str(&format!("b4,{sigma_b},{i},{seed},rrr,,{},{},{}\n", s.rrr_r, err_e(&s.rrr), s.rrr.err_p));
                    csv.push_str(&format!("b4,{sigma_b},{i},{seed},crl,{},{},{},{}\n", s.crl_q, s.crl_r, err_e(&s.crl), s.crl.err_p));
                    for (k, e) in [&s.rrr, &s.crl].into_iter().enumerate() {
                        cols[k].0.push(err_e(e));
                        cols[k].1.push(e.err_p);
                    }
                }
                for (k, (e, p)) in cols.iter().enumerate() {
                    table[k].push(fmt_cell(median(e)));
                    table[k].push(fmt_cell(median(p)));
                }
            }
            eprintln!("{}", header.join("\t"));
            for row in table {
                eprintln!("{}", row.join("\t"));
            }
        }
        Suite::Gn => {
            csv.push_str("suite,replicate,seed,ca,nmi\n");
            let spec = PlantedSpec::gn();
            let scores = replicates(ctx, a.reps, |i, seed| Ok((i, seed, protocols::planted_replicate(&spec, &Default::default(), seed)?)))?;
            for (i, seed, s) in &scores {
                csv.push_str(&format!("gn,{i},{seed},{},{}\n", s.ca, s.nmi));
            }
            let ca: Vec<f64> = scores.iter().map(|s| s.2.ca).collect();
            let nmi: Vec<f64> = scores.iter().map(|s| s.2.nmi).collect();
            eprintln!("method\tCA\tNMI");
            eprintln!("CRL\t{}\t{}", fmt_cell(median(&ca)), fmt_cell(median(&nmi)));
        }
    }
    emit(a.out.as_deref(), csv.as_bytes())
}

pub fn segment(ctx: &Context, a: SegmentArgs) -> Outcome {
    require_file(&a.x)?;
    require_file(&a.y)?;
    if let Some(p) = &a.out_prefix {
        require_parent(p)?;
    }
    let q_grid = parse_grid(&a.q_grid)?;
    let x = io::read_matrix(&a.x)?;
    let y: DMatrix<f64> = io::read_matrix(&a.y)?;
    if y.ncols() != 1 {
        return Err(Failure::from(crl::error::CrlError::Structural(format!("--y must have one column, found {}", y.ncols()))));
    }
    let seg = protocols::segment(&x, y.as_slice(), &q_grid, ctx.seed)?;
    if ctx.verbose {
        for c in &seg.report.candidates {
            eprintln!("q {} score {:?}", c.q, c.score);
        }
    }
    match &a.out_prefix {
        Some(prefix) => {
            io::save_labels(&with_suffix(prefix, "_labels.csv"), &seg.labels)?;
            io::save_matrix(&with_suffix(prefix, "_coef.csv"), &seg.coefficients, None)?;
            std::fs::write(with_suffix(prefix, "_report.json"), json_bytes(&seg.report)?)?;
            Ok(())
        }
        None => {
            let mut buf = Vec::new();
            io::write_labels(&mut buf, &seg.labels)?;
            emit(None, &buf)
        }
    }
}
