//! Subcommand implementations. Each returns the rendered report.

use std::fs;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use serde::Serialize;

use hssrand::bounds::{mc_tail_probability, Spectrum, Tail};
use hssrand::cost::{
    cost_doubling_comm, cost_doubling_comm_legacy, cost_incrementing_comm, cost_redistribution,
    cost_redistribution_legacy, flops_doubling, flops_incrementing, MachineParams,
};
use hssrand::operators::ToeplitzKernel;
use hssrand::{
    compress, compress_known_rank, ClusterTree, CompressionConfig, CompressionReport, Criterion, ExplicitDense,
    HssMatrix, MatrixSource, ParamKernel, PhaseFlops, RngStream, Strategy,
};

use crate::output::{render, Table};
use crate::{
    AdaptCompareArgs, BoundsArgs, Cli, Command, CompressArgs, CostArgs, Failure, KernelArgs, KernelSpec, SamplingArgs,
    StoppingGridArgs, StrategyArg, VerifyArgs,
};

/// Dense verification is skipped above this order unless forced.
pub const VERIFY_LIMIT: usize = 4096;

pub fn run(cli: &Cli) -> Result<String, Failure> {
    let parallel = cli.threads.is_some_and(|t| t > 1);
    match &cli.cmd {
        Command::Compress(a) => cmd_compress(cli, a, parallel),
        Command::AdaptCompare(a) => cmd_adapt_compare(cli, a, parallel),
        Command::StoppingGrid(a) => cmd_stopping_grid(cli, a, parallel),
        Command::Bounds(a) => Ok(cmd_bounds(cli, a)?),
        Command::Cost(a) => Ok(cmd_cost(cli, a)?),
    }
}

fn build_source(k: &KernelArgs) -> Result<Box<dyn MatrixSource>> {
    Ok(match &k.kernel {
        KernelSpec::Param => Box::new(ParamKernel::new(k.n, k.rank, k.alpha, k.beta, k.decay, k.matrix_seed)?),
        KernelSpec::Toeplitz => Box::new(ToeplitzKernel::harmonic(k.n)),
        KernelSpec::Dense(p) => {
            Box::new(ExplicitDense::load(p).with_context(|| format!("loading dense matrix from {}", p.display()))?)
        }
    })
}

fn kernel_name(k: &KernelSpec) -> String {
    match k {
        KernelSpec::Param => "param".into(),
        KernelSpec::Toeplitz => "toeplitz".into(),
        KernelSpec::Dense(p) => format!("dense:{}", p.display()),
    }
}

fn config(s: &SamplingArgs, rtol: f64, atol: f64, strategy: Strategy, criterion: Criterion, parallel: bool) -> CompressionConfig {
    CompressionConfig {
        eps_rel: rtol,
        eps_abs: atol,
        d0: s.d0,
        delta_d: s.dd,
        d_max: s.dmax,
        strategy,
        p: s.p,
        seed: s.seed,
        criterion,
        parallel,
        keep_scratch: false,
    }
}

/// Dense oracle, built once per command when verification applies.
struct Oracle {
    a: hssrand::DenseMatrix,
    fro: f64,
}

impl Oracle {
    fn new(src: &dyn MatrixSource, v: &VerifyArgs) -> Result<Option<Self>> {
        if v.no_verify || (src.n() > VERIFY_LIMIT && !v.force_verify) {
            return Ok(None);
        }
        let a = src.to_dense()?;
        let fro = a.fro_norm();
        Ok(Some(Oracle { a, fro }))
    }

    fn rel_error(&self, h: &HssMatrix) -> Result<f64> {
        let diff = h.reconstruct_dense()?.sub(&self.a).fro_norm();
        Ok(if self.fro > 0.0 { diff / self.fro } else { diff })
    }

    /// `100 · max(rtol, atol / ‖A‖_F)`.
    fn threshold(&self, rtol: f64, atol: f64) -> f64 {
        let abs = if self.fro > 0.0 { atol / self.fro } else { atol };
        100.0 * rtol.max(abs)
    }
}

#[derive(Serialize)]
struct ConfigEcho {
    kernel: String,
    n: usize,
    rank: usize,
    alpha: f64,
    beta: f64,
    decay: bool,
    matrix_seed: u64,
    leaf: usize,
    d0: usize,
    dd: usize,
    p: usize,
    dmax: Option<usize>,
    seed: u64,
    rtol: f64,
    atol: f64,
    strategy: Strategy,
    criterion: Criterion,
}

#[derive(Serialize)]
struct FlopReport {
    #[serde(flatten)]
    phases: PhaseFlops,
    total: u64,
}

impl From<PhaseFlops> for FlopReport {
    fn from(p: PhaseFlops) -> Self {
        FlopReport { total: p.total(), phases: p }
    }
}

#[derive(Serialize)]
struct WallTimes {
    compress_ms: f64,
    verify_ms: f64,
}

#[derive(Serialize)]
struct RunReport {
    config: ConfigEcho,
    hss_rank: usize,
    mem_bytes: usize,
    per_level_ranks: Vec<usize>,
    rel_error: Option<f64>,
    error_threshold: Option<f64>,
    final_d: usize,
    adapt_steps: usize,
    restarts: usize,
    sampled_columns: usize,
    flops: FlopReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    wall_ms: Option<WallTimes>,
}

fn cmd_compress(cli: &Cli, a: &CompressArgs, parallel: bool) -> Result<String, Failure> {
    let src = build_source(&a.kernel)?;
    let n = src.n();
    let tree = ClusterTree::build_balanced(n, a.kernel.leaf)?;
    if let Some(p) = &a.dump_tree {
        fs::write(p, tree.to_json()).with_context(|| format!("writing {}", p.display()))?;
    }
    let criterion = match a.hmt_alpha {
        Some(alpha) => Criterion::Hmt { alpha },
        None => Criterion::Standard,
    };
    let cfg = config(&a.sampling, a.rtol, a.atol, a.strategy.into(), criterion, parallel);

    let t0 = Instant::now();
    let (h, rep) = compress(src.as_ref(), &tree, &cfg)?;
    let compress_ms = t0.elapsed().as_secs_f64() * 1e3;
    if let Some(p) = &a.dump_hss {
        fs::write(p, h.to_json()).with_context(|| format!("writing {}", p.display()))?;
    }

    let t1 = Instant::now();
    let oracle = Oracle::new(src.as_ref(), &a.verify)?;
    let rel_error = oracle.as_ref().map(|o| o.rel_error(&h)).transpose()?;
    let threshold = oracle.as_ref().map(|o| o.threshold(a.rtol, a.atol));
    let verify_ms = t1.elapsed().as_secs_f64() * 1e3;

    let stats = h.stats();
    let k = &a.kernel;
    let report = RunReport {
        config: ConfigEcho {
            kernel: kernel_name(&k.kernel),
            n,
            rank: k.rank,
            alpha: k.alpha,
            beta: k.beta,
            decay: k.decay,
            matrix_seed: k.matrix_seed,
            leaf: k.leaf,
            d0: cfg.d0,
            dd: cfg.delta_d,
            p: cfg.p,
            dmax: cfg.d_max,
            seed: cfg.seed,
            rtol: cfg.eps_rel,
            atol: cfg.eps_abs,
            strategy: cfg.strategy,
            criterion,
        },
        hss_rank: stats.hss_rank,
        mem_bytes: stats.mem_bytes,
        per_level_ranks: stats.per_level_ranks,
        rel_error,
        error_threshold: threshold,
        final_d: rep.final_d,
        adapt_steps: rep.adapt_steps,
        restarts: rep.restarts,
        sampled_columns: rep.sampled_columns,
        flops: rep.flops.into(),
        wall_ms: cli.timings.then_some(WallTimes { compress_ms, verify_ms }),
    };
    let text = render(&report, cli.out)?;
    if let (Some(e), Some(t)) = (rel_error, threshold) {
        if !(e <= t) {
            return Err(Failure::Verify(format!("relative error {e:.3e} exceeds {t:.3e}"), text));
        }
    }
    Ok(text)
}

#[derive(Serialize)]
struct ModeRow {
    mode: Strategy,
    d: usize,
    hss_rank: usize,
    adapt_steps: usize,
    restarts: usize,
    sampled_columns: usize,
    sampling_flops: u64,
    total_flops: u64,
    rel_error: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    wall_ms: Option<f64>,
}

#[derive(Serialize)]
struct AdaptCompare {
    command: &'static str,
    /// Sampling flops ordered known-rank ≤ incrementing ≤ hard-restart.
    ordering_ok: bool,
    rows: Vec<ModeRow>,
}

fn cmd_adapt_compare(cli: &Cli, a: &AdaptCompareArgs, parallel: bool) -> Result<String, Failure> {
    let src = build_source(&a.kernel)?;
    let tree = ClusterTree::build_balanced(src.n(), a.kernel.leaf)?;
    let oracle = Oracle::new(src.as_ref(), &a.verify)?;
    let mut modes: Vec<StrategyArg> = Vec::new();
    for m in &a.modes {
        if !modes.contains(m) {
            modes.push(*m);
        }
    }
    // Adaptive modes first so known-rank can reuse their rank.
    let mut order: Vec<usize> = (0..modes.len()).collect();
    order.sort_by_key(|&i| modes[i] == StrategyArg::KnownRank);
    let mut results: Vec<Option<(HssMatrix, CompressionReport, f64)>> = (0..modes.len()).map(|_| None).collect();
    let mut best_rank: Option<usize> = None;
    for i in order {
        let strategy: Strategy = modes[i].into();
        let cfg = config(&a.sampling, a.rtol, a.atol, strategy, Criterion::Standard, parallel);
        let t0 = Instant::now();
        let (h, rep) = if strategy == Strategy::KnownRank {
            let d = match (a.known_d, best_rank) {
                (Some(d), _) => d,
                (None, Some(r)) => r + a.sampling.p,
                (None, None) => {
                    return Err(Failure::Other(anyhow::anyhow!(
                        "known-rank alone needs --known-d (or an adaptive mode to measure the rank)"
                    )))
                }
            };
            compress_known_rank(src.as_ref(), &tree, d, &CompressionConfig { d0: d, ..cfg })?
        } else {
            compress(src.as_ref(), &tree, &cfg)?
        };
        let ms = t0.elapsed().as_secs_f64() * 1e3;
        let r = h.stats().hss_rank;
        best_rank = Some(best_rank.map_or(r, |b| b.max(r)));
        results[i] = Some((h, rep, ms));
    }

    let mut rows = Vec::new();
    for (m, res) in modes.iter().zip(results) {
        let (h, rep, ms) = res.expect("every mode ran");
        rows.push(ModeRow {
            mode: (*m).into(),
            d: rep.final_d,
            hss_rank: h.stats().hss_rank,
            adapt_steps: rep.adapt_steps,
            restarts: rep.restarts,
            sampled_columns: rep.sampled_columns,
            sampling_flops: rep.flops.sampling,
            total_flops: rep.flops.total(),
            rel_error: oracle.as_ref().map(|o| o.rel_error(&h)).transpose()?,
            wall_ms: cli.timings.then_some(ms),
        });
    }
    let flops = |s: Strategy| rows.iter().find(|r| r.mode == s).map(|r| r.sampling_flops);
    let chain: Vec<u64> = [Strategy::KnownRank, Strategy::Incrementing, Strategy::HardRestart]
        .into_iter()
        .filter_map(flops)
        .collect();
    let ordering_ok = chain.windows(2).all(|w| w[0] <= w[1]);
    let report = AdaptCompare {
        command: "adapt-compare",
        ordering_ok,
        rows,
    };
    let text = render(&report, cli.out)?;
    if !ordering_ok {
        return Err(Failure::Verify("sampling flops are not ordered known-rank <= incrementing <= hard-restart".into(), text));
    }
    Ok(text)
}

#[derive(Serialize)]
struct GridRow {
    criterion: &'static str,
    rtol: Option<f64>,
    atol: f64,
    hss_rank: usize,
    rel_error: Option<f64>,
    adapt_steps: usize,
    final_d: usize,
}

#[derive(Serialize)]
struct StoppingGrid {
    command: &'static str,
    /// Every `rtol = atol = t` cell has relative error at most `100 t`.
    diagonal_ok: bool,
    rows: Vec<GridRow>,
}

fn cmd_stopping_grid(cli: &Cli, a: &StoppingGridArgs, parallel: bool) -> Result<String, Failure> {
    let src = build_source(&a.kernel)?;
    let tree = ClusterTree::build_balanced(src.n(), a.kernel.leaf)?;
    let oracle = Oracle::new(src.as_ref(), &a.verify)?;
    let mut rows = Vec::new();
    let mut diagonal_ok = true;
    let mut cells: Vec<(Option<f64>, f64)> = Vec::new();
    for &r in &a.rtols {
        for &t in &a.atols {
            cells.push((Some(r), t));
        }
    }
    if a.hmt {
        cells.extend(a.atols.iter().map(|&t| (None, t)));
    }
    for (rtol, atol) in cells {
        let criterion = match rtol {
            Some(_) => Criterion::Standard,
            None => Criterion::Hmt { alpha: a.hmt_alpha },
        };
        let cfg = config(&a.sampling, rtol.unwrap_or(0.0), atol, Strategy::Incrementing, criterion, parallel);
        let (h, rep) = compress(src.as_ref(), &tree, &cfg)?;
        let rel_error = oracle.as_ref().map(|o| o.rel_error(&h)).transpose()?;
        if let (Some(r), Some(e)) = (rtol, rel_error) {
            if r == atol && !(e <= 100.0 * r) {
                diagonal_ok = false;
            }
        }
        rows.push(GridRow {
            criterion: if rtol.is_some() { "standard" } else { "hmt" },
            rtol,
            atol,
            hss_rank: h.stats().hss_rank,
            rel_error,
            adapt_steps: rep.adapt_steps,
            final_d: rep.final_d,
        });
    }
    let report = StoppingGrid {
        command: "stopping-grid",
        diagonal_ok,
        rows,
    };
    let text = render(&report, cli.out)?;
    if !diagonal_ok {
        return Err(Failure::Verify("a diagonal cell exceeds 100 x tolerance".into(), text));
    }
    Ok(text)
}

#[derive(Serialize)]
struct BoundRow {
    tau: f64,
    d: usize,
    side: &'static str,
    /// Clamped to `[0, 1]`.
    bound: f64,
    log_bound: f64,
    empirical: f64,
    empirical_std_err: f64,
}

fn parse_spectrum(a: &BoundsArgs) -> Result<Spectrum> {
    let sigmas = match &a.spectrum_file {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            text.split(|c: char| c.is_whitespace() || c == ',')
                .filter(|t| !t.is_empty())
                .map(|t| t.parse::<f64>().with_context(|| format!("bad singular value '{t}'")))
                .collect::<Result<Vec<_>>>()?
        }
        None => a.sigmas.clone(),
    };
    Ok(Spectrum::new(sigmas)?)
}

fn cmd_bounds(cli: &Cli, a: &BoundsArgs) -> Result<String> {
    let spec = parse_spectrum(a)?;
    let rng = RngStream::new(a.seed);
    let mut rows = Vec::new();
    let mut cell = 0u64;
    for &d in &a.d {
        for &tau in &a.tau {
            let side = if tau > 1.0 {
                Tail::Upper
            } else if (0.0..1.0).contains(&tau) {
                Tail::Lower
            } else {
                bail!("tau = {tau} is neither above 1 (upper tail) nor in [0, 1) (lower tail)");
            };
            let raw = side.bound(&spec, d, tau)?;
            let log_bound = match side {
                Tail::Upper => hssrand::bounds::upper_tail_log_bound(&spec, d, tau)?,
                Tail::Lower => hssrand::bounds::lower_tail_log_bound(&spec, d, tau)?,
            };
            let mc = mc_tail_probability(&spec, d, tau, side, a.trials, &rng.substream(cell));
            cell += 1;
            rows.push(BoundRow {
                tau,
                d,
                side: side.name(),
                bound: raw.clamp(0.0, 1.0),
                log_bound,
                empirical: mc.probability,
                empirical_std_err: mc.prob_std_err(a.trials),
            });
        }
    }
    render(&Table { command: "bounds", rows }, cli.out)
}

#[derive(Serialize)]
struct LegacyCols {
    id_messages: f64,
    id_words: f64,
    redistribution_messages: f64,
    redistribution_words: f64,
}

#[derive(Serialize)]
struct CostRow {
    #[serde(rename = "P")]
    p: usize,
    doubling_messages: f64,
    doubling_words: f64,
    incrementing_messages: f64,
    incrementing_words: f64,
    message_ratio: f64,
    gs_messages: f64,
    gs_words: f64,
    redistribution_messages: Option<f64>,
    redistribution_words: Option<f64>,
    doubling_flops: f64,
    incrementing_flops: f64,
    flop_leading_ratio: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    legacy: Option<LegacyCols>,
}

fn cmd_cost(cli: &Cli, a: &CostArgs) -> Result<String> {
    let fd = flops_doubling(a.m, a.r, a.d0, a.p);
    let fi = flops_incrementing(a.m, a.r, a.d0, a.dd);
    let mut rows = Vec::new();
    for &p in &a.procs {
        if p == 0 {
            bail!("process counts must be positive");
        }
        let levels = a.levels.unwrap_or(p.ilog2() as usize);
        let dbl = cost_doubling_comm(a.r, a.d0, a.m, p);
        let inc = cost_incrementing_comm(a.r, a.dd, a.m, p);
        let red = (p >= 2).then(|| cost_redistribution(a.m, a.dd, a.r, p, levels)).transpose()?;
        let legacy = if a.legacy {
            let mp = MachineParams::new(p, a.nb, levels)?;
            let id = cost_doubling_comm_legacy(a.r, a.m, &mp);
            let rd = cost_redistribution_legacy(a.m, a.r, a.d0, &mp);
            Some(LegacyCols {
                id_messages: id.messages,
                id_words: id.words,
                redistribution_messages: rd.messages,
                redistribution_words: rd.words,
            })
        } else {
            None
        };
        rows.push(CostRow {
            p,
            doubling_messages: dbl.closed_form.messages,
            doubling_words: dbl.closed_form.words,
            incrementing_messages: inc.total.messages,
            incrementing_words: inc.total.words,
            message_ratio: inc.total.messages / dbl.closed_form.messages,
            gs_messages: inc.gs.messages,
            gs_words: inc.gs.words,
            redistribution_messages: red.map(|r| r.all_restarts.messages),
            redistribution_words: red.map(|r| r.all_restarts.words),
            doubling_flops: fd.total,
            incrementing_flops: fi.total,
            flop_leading_ratio: fi.leading / fd.leading,
            legacy,
        });
    }
    render(&Table { command: "cost", rows }, cli.out)
}
