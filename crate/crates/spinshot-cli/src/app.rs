//! Subcommands. Each writes its report to `out`; diagnostics go to stderr.

use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;
use spinshot::fidelity::{self, ElectricalWindow};
use spinshot::initfid;
use spinshot::model::{FidelityReport, ReadoutPlan};
use spinshot::montecarlo::{self, MaximaSource, RawSidecar, SimOptions, SpinState, RAW_FORMAT};
use spinshot::sequencer::{self, Objective};
use spinshot::stc;

use crate::error::{CliError, CliResult};
use crate::format::{round_json, sig, sig_opt};
use crate::qubits::parse_qubits;
use crate::records::{self, load_experiments, ExperimentRecord};
use crate::sidecar;

pub const BUNDLED_EXPERIMENTS: &str = include_str!("../../../data/experiments.txt");

#[derive(Debug, Parser)]
#[command(name = "spinshot", version, about = "Single-shot spin readout fidelity")]
pub struct Cli {
    /// Experiment records file; defaults to $SPINSHOT_DATA, then the bundled fixtures.
    #[arg(long, global = true)]
    pub data: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct ExperimentArg {
    #[arg(long)]
    pub experiment: String,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ObjectiveArg {
    Mean,
    Weighted,
    Min,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SourceArg {
    Analytic,
    Traces,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fidelity report at a readout time and threshold (JSON).
    Evaluate {
        #[command(flatten)]
        exp: ExperimentArg,
        /// Readout time in s; defaults to the reported one.
        #[arg(long)]
        t: Option<f64>,
        /// Threshold in detector units; defaults to the reported one, else the optimum.
        #[arg(long)]
        x: Option<f64>,
    },
    /// Optimised readout time and threshold (CSV row).
    Optimize {
        #[command(flatten)]
        exp: ExperimentArg,
        /// Also search t within +-20% of the STC optimum.
        #[arg(long)]
        refine: bool,
    },
    /// Fidelities at the reported settings for every record (CSV).
    Table2,
    /// Optimised fidelities and gains for every record (CSV).
    Table3,
    /// F_M over a sample-rate by cut-off grid (CSV).
    PhaseDiagram {
        #[command(flatten)]
        exp: ExperimentArg,
        /// LO:HI in Hz.
        #[arg(long, default_value = "2000:8000")]
        gs_range: String,
        /// LO:HI in Hz.
        #[arg(long, default_value = "500:2500")]
        fc_range: String,
        #[arg(long, default_value_t = 16)]
        resolution: usize,
    },
    /// Minimum t_out1*f_c against D' for a fidelity target (CSV).
    DesignCurve {
        #[arg(long)]
        ez_ratio: f64,
        #[arg(long, default_value_t = 0.99)]
        target: f64,
        /// LO:HI:STEP.
        #[arg(long, default_value = "3:10:0.25")]
        d_prime: String,
    },
    /// Initialisation time and fidelity (JSON).
    Init {
        #[command(flatten)]
        exp: ExperimentArg,
        /// Extra load times in s, comma separated.
        #[arg(long, value_delimiter = ',')]
        times: Vec<f64>,
    },
    /// Best measurement order for qubits sharing a detector (CSV).
    Sequence {
        #[arg(long)]
        file: PathBuf,
        #[arg(long, value_enum, default_value = "mean")]
        objective: ObjectiveArg,
    },
    /// Monte-Carlo traces against the analytic model (JSON).
    Simulate {
        #[command(flatten)]
        exp: ExperimentArg,
        #[arg(long, default_value_t = 100_000)]
        n: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Window in s; defaults to the STC optimum.
        #[arg(long)]
        t: Option<f64>,
        /// Raw dump prefix: writes PREFIX.state{0,1}.bin and .json sidecars.
        #[arg(long)]
        dump: Option<PathBuf>,
        /// Traces per state in the dump.
        #[arg(long, default_value_t = 100)]
        dump_traces: usize,
    },
    /// Spread of the histogram visibility estimator against run count (CSV).
    Convergence {
        #[command(flatten)]
        exp: ExperimentArg,
        #[arg(long, value_delimiter = ',', default_value = "1000,10000,100000,500000")]
        counts: Vec<usize>,
        #[arg(long, default_value_t = 100)]
        repeats: usize,
        #[arg(long, default_value_t = 1000)]
        bins: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, value_enum, default_value = "analytic")]
        source: SourceArg,
    },
}

fn load(cli: &Cli) -> CliResult<Vec<ExperimentRecord>> {
    let (text, name) = match cli.data.clone().or_else(|| std::env::var_os("SPINSHOT_DATA").map(PathBuf::from)) {
        Some(p) => (std::fs::read_to_string(&p)?, p.display().to_string()),
        None => (BUNDLED_EXPERIMENTS.to_string(), "bundled experiments".to_string()),
    };
    let l = load_experiments(&text, &name)?;
    for w in &l.warnings {
        eprintln!("warning: {w}");
    }
    Ok(l.records)
}

fn range(s: &str, parts: usize) -> CliResult<Vec<f64>> {
    let v: Vec<f64> = s
        .split(':')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| CliError::Validation(format!("bad range '{s}'")))?;
    if v.len() != parts || v.iter().any(|x| !x.is_finite()) || v[1] <= v[0] {
        return Err(CliError::Validation(format!("range '{s}' must be {parts} numbers with LO < HI")));
    }
    Ok(v)
}

fn json_out(out: &mut dyn Write, v: impl Serialize) -> CliResult<()> {
    let mut v = serde_json::to_value(v).map_err(|e| CliError::Validation(e.to_string()))?;
    round_json(&mut v);
    writeln!(out, "{}", serde_json::to_string_pretty(&v).expect("value serialises"))?;
    Ok(())
}

fn pct(x: f64) -> String {
    sig(100.0 * x)
}

pub struct Table2Row {
    pub report: Option<FidelityReport>,
    pub v_stc: f64,
    pub f_m_err: Option<f64>,
}

/// Reported-settings evaluation. Without a threshold only V_STC is defined.
pub fn table2_row(r: &ExperimentRecord) -> CliResult<Option<Table2Row>> {
    let (tm, det) = (r.tunnel_model()?, r.detector_model()?);
    let Some(t) = r.get("t_rep") else { return Ok(None) };
    let v_stc = stc::v_stc(t, &tm)?;
    let Some(plan) = r.reported_plan()? else {
        return Ok(Some(Table2Row {
            report: None,
            v_stc,
            f_m_err: None,
        }));
    };
    let report = fidelity::evaluate(&tm, &det, &plan)?;
    let sig = r.input_sigmas();
    let any = sig != fidelity::InputSigmas::default();
    let f_m_err = if any {
        Some(fidelity::fm_uncertainty(&tm, &det, &plan, &sig, ElectricalWindow::StcOptimum)?)
    } else {
        None
    };
    Ok(Some(Table2Row {
        report: Some(report),
        v_stc,
        f_m_err,
    }))
}

pub fn table2_csv(records: &[ExperimentRecord]) -> CliResult<String> {
    let mut s = String::from("experiment,label,unit,t_rep_s,x_rep,v_stc_pct,v_e_pct,f_m_pct,f_m_err_pct\n");
    for r in records {
        let row = table2_row(r)?;
        let (v_stc, v_e, f_m, err) = match &row {
            Some(Table2Row { report: Some(p), f_m_err, .. }) => {
                (pct(p.v_stc), pct(p.v_e), pct(p.f_m), f_m_err.map(pct).unwrap_or("NA".into()))
            }
            Some(row) => (pct(row.v_stc), "NA".into(), "NA".into(), "NA".into()),
            None => ("NA".into(), "NA".into(), "NA".into(), "NA".into()),
        };
        s += &format!(
            "{},{},{},{},{},{v_stc},{v_e},{f_m},{err}\n",
            r.name,
            csv_text(r.display_name()),
            csv_text(r.unit.as_deref().unwrap_or("")),
            sig_opt(r.get("t_rep")),
            sig_opt(r.get("x_rep")),
        );
    }
    Ok(s)
}

fn csv_text(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub const TABLE3_HEADER: &str = "experiment,label,unit,t_opt_s,x_opt,v_stc_pct,v_e_pct,f_m_pct,gain_pct";

pub fn table3_line(r: &ExperimentRecord, refine: bool) -> CliResult<String> {
    let (tm, det) = (r.tunnel_model()?, r.detector_model()?);
    let o = fidelity::optimize(&tm, &det, refine)?;
    let base = table2_row(r)?.and_then(|row| row.report).map(|p| p.f_m);
    let p = &o.report;
    Ok(format!(
        "{},{},{},{},{},{},{},{},{}",
        r.name,
        csv_text(r.display_name()),
        csv_text(r.unit.as_deref().unwrap_or("")),
        sig(o.t_opt),
        sig(o.x_opt),
        pct(p.v_stc),
        pct(p.v_e),
        pct(p.f_m),
        base.map(|b| pct(p.f_m - b)).unwrap_or("NA".into())
    ))
}

pub fn table3_csv(records: &[ExperimentRecord]) -> CliResult<String> {
    let mut s = format!("{TABLE3_HEADER}\n");
    for r in records {
        s += &table3_line(r, false)?;
        s.push('\n');
    }
    Ok(s)
}

pub fn run(cli: &Cli, out: &mut dyn Write) -> CliResult<()> {
    match &cli.command {
        Command::Evaluate { exp, t, x } => {
            let recs = load(cli)?;
            let r = records::find(&recs, &exp.experiment)?;
            let (tm, det) = (r.tunnel_model()?, r.detector_model()?);
            let t = t.or(r.get("t_rep")).map_or_else(|| stc::t_opt(&tm), Ok)?;
            let (x, source) = match x.or(r.get("x_rep")) {
                Some(x) => (x, "given"),
                None => {
                    let w = stc::t_opt(&tm).unwrap_or(t);
                    (spinshot::electrical::Electrical::new(&det, &tm, w)?.x_opt()?.0, "x_opt")
                }
            };
            let plan = ReadoutPlan::new(t, x)?;
            let mut report = fidelity::evaluate(&tm, &det, &plan)?;
            let sig = r.input_sigmas();
            if sig != fidelity::InputSigmas::default() {
                report.error_fm = Some(fidelity::fm_uncertainty(&tm, &det, &plan, &sig, ElectricalWindow::StcOptimum)?);
            }
            json_out(
                out,
                json!({
                    "experiment": r.name,
                    "unit": r.unit,
                    "readout_time_s": t,
                    "threshold": x,
                    "threshold_source": source,
                    "report": report,
                }),
            )
        }
        Command::Optimize { exp, refine } => {
            let recs = load(cli)?;
            let r = records::find(&recs, &exp.experiment)?;
            writeln!(out, "{TABLE3_HEADER}")?;
            writeln!(out, "{}", table3_line(r, *refine)?)?;
            Ok(())
        }
        Command::Table2 => {
            let recs = load(cli)?;
            write!(out, "{}", table2_csv(&recs)?)?;
            Ok(())
        }
        Command::Table3 => {
            let recs = load(cli)?;
            write!(out, "{}", table3_csv(&recs)?)?;
            Ok(())
        }
        Command::PhaseDiagram {
            exp,
            gs_range,
            fc_range,
            resolution,
        } => {
            let recs = load(cli)?;
            let r = records::find(&recs, &exp.experiment)?;
            let (g, f) = (range(gs_range, 2)?, range(fc_range, 2)?);
            if *resolution < 8 {
                return Err(CliError::Validation("resolution must be >= 8".into()));
            }
            let gs = fidelity::linspace(g[0], g[1], *resolution);
            let fc = fidelity::linspace(f[0], f[1], *resolution);
            let grid = fidelity::phase_diagram(&r.tunnel_model()?, &r.detector_model()?, &gs, &fc)?;
            writeln!(out, "gamma_s_hz,f_c_hz,f_m")?;
            for (i, g) in grid.gamma_s.iter().enumerate() {
                for (j, f) in grid.f_c.iter().enumerate() {
                    writeln!(out, "{},{},{}", sig(*g), sig(*f), sig_opt(grid.get(i, j)))?;
                }
            }
            if let Some((i, j)) = grid.argmax {
                eprintln!(
                    "max F_M {} at gamma_s {} Hz, f_c {} Hz",
                    sig_opt(grid.max()),
                    sig(grid.gamma_s[i]),
                    sig(grid.f_c[j])
                );
            }
            Ok(())
        }
        Command::DesignCurve {
            ez_ratio,
            target,
            d_prime,
        } => {
            let v = range(d_prime, 3)?;
            if !(v[2] > 0.0) {
                return Err(CliError::Validation("D' step must be > 0".into()));
            }
            let n = ((v[1] - v[0]) / v[2] + 1e-9).floor() as usize + 1;
            let ds: Vec<f64> = (0..n).map(|i| v[0] + v[2] * i as f64).collect();
            let c = fidelity::design_curve(*ez_ratio, *target, &ds)?;
            writeln!(out, "d_prime,min_t_out1_times_fc,normalized_rate")?;
            for ((d, b), r) in ds.iter().zip(&c.min_t_out1_fc).zip(&c.normalized_rate) {
                writeln!(out, "{},{},{}", sig(*d), sig_opt(*b), sig_opt(*r))?;
            }
            if let Some(p) = c.plateau_from {
                eprintln!("boundary flat from D' = {}", sig(p));
            }
            Ok(())
        }
        Command::Init { exp, times } => {
            let recs = load(cli)?;
            let r = records::find(&recs, &exp.experiment)?;
            let tm = r.tunnel_model()?;
            let (t_i, t_c) = initfid::t_init(&tm)?;
            let mut rows = Vec::new();
            for &t in [t_i, t_c].iter().chain(times) {
                rows.push(json!({
                    "t_s": t,
                    "f_i_closed_form": initfid::init_state(&tm, t)?.psi_0,
                    "f_i_full": initfid::init_state_full(&tm, t)?.psi_0,
                }));
            }
            json_out(
                out,
                json!({
                    "experiment": r.name,
                    "t_i_s": t_i,
                    "t_i_conservative_s": t_c,
                    "t_in1_s": tm.t_in1,
                    "points": rows,
                }),
            )
        }
        Command::Sequence { file, objective } => {
            let text = std::fs::read_to_string(file)?;
            let rows = parse_qubits(&text).map_err(|err| CliError::Parse {
                source_name: file.display().to_string(),
                err,
            })?;
            let qubits: Vec<_> = rows.iter().map(|r| r.qubit).collect();
            let obj = match objective {
                ObjectiveArg::Mean => Objective::Mean,
                ObjectiveArg::Min => Objective::MinQubit,
                ObjectiveArg::Weighted => Objective::Weighted(
                    rows.iter()
                        .map(|r| r.weight)
                        .collect::<Option<Vec<_>>>()
                        .ok_or_else(|| CliError::Validation("weighted objective needs a weight for every qubit".into()))?,
                ),
            };
            let b = sequencer::best_order(&qubits, &obj)?;
            let n = qubits.len();
            let mut head = String::from("order,score,best");
            for i in 1..=n {
                head += &format!(",lambda_{i}");
            }
            writeln!(out, "{head}")?;
            let list = b.all.clone().unwrap_or_else(|| vec![b.best.clone()]);
            for s in &list {
                let names: Vec<&str> = s.order.iter().map(|&i| rows[i].name.as_str()).collect();
                let mut line = format!("{},{},{}", csv_text(&names.join(" ")), sig(s.score), (s.order == b.best.order) as u8);
                for l in &s.lambdas {
                    line += &format!(",{}", sig(*l));
                }
                writeln!(out, "{line}")?;
            }
            if !b.exhaustive {
                eprintln!("{n} qubits: heuristic search, optimum not guaranteed");
            }
            Ok(())
        }
        Command::Simulate {
            exp,
            n,
            seed,
            t,
            dump,
            dump_traces,
        } => {
            let recs = load(cli)?;
            let r = records::find(&recs, &exp.experiment)?;
            let (tm, det) = (r.tunnel_model()?, r.detector_model()?);
            let t = t.map_or_else(|| stc::t_opt(&tm), Ok)?;
            let plan = ReadoutPlan::new(t, det.mu0)?;
            let opt = SimOptions::default();
            let (c, _, _) = montecarlo::compare(&tm, &det, &plan, *n, *seed, &opt)?;
            if let Some(prefix) = dump {
                let k = (*dump_traces).min(*n).max(1);
                for (state, s, tag) in [(SpinState::Zero, *seed, "state0"), (SpinState::One, seed.wrapping_add(1), "state1")] {
                    let traces = montecarlo::simulate_raw(&tm, &det, &plan, state, k, s, &opt)?;
                    let bin = prefix.with_extension(format!("{tag}.bin"));
                    montecarlo::write_raw(std::io::BufWriter::new(std::fs::File::create(&bin)?), &traces)?;
                    let car = RawSidecar {
                        format: RAW_FORMAT.into(),
                        n_traces: k,
                        samples_per_trace: traces.first().map_or(0, Vec::len),
                        state,
                        seed: s,
                        tunnel: tm,
                        detector: det,
                        plan,
                        options: opt,
                    };
                    std::fs::write(prefix.with_extension(format!("{tag}.json")), sidecar::to_json(&car))?;
                }
            }
            json_out(out, json!({"experiment": r.name, "readout_time_s": t, "comparison": c}))
        }
        Command::Convergence {
            exp,
            counts,
            repeats,
            bins,
            seed,
            source,
        } => {
            let recs = load(cli)?;
            let r = records::find(&recs, &exp.experiment)?;
            let (tm, det) = (r.tunnel_model()?, r.detector_model()?);
            let plan = ReadoutPlan::new(stc::t_opt(&tm)?, det.mu0)?;
            let params = montecarlo::ConvergenceParams {
                counts: counts.clone(),
                repeats: *repeats,
                bins: *bins,
                seed: *seed,
                source: match source {
                    SourceArg::Analytic => MaximaSource::Analytic,
                    SourceArg::Traces => MaximaSource::Traces,
                },
            };
            let s = montecarlo::convergence_study(&tm, &det, &plan, &params)?;
            writeln!(out, "count,mean_v_e,std_v_e,analytic_v_e")?;
            for p in &s.points {
                writeln!(out, "{},{},{},{}", p.count, sig(p.mean_v_e), sig(p.std_v_e), sig(s.analytic_v_e))?;
            }
            Ok(())
        }
    }
}
