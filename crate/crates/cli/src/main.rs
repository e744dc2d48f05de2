use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

use lindlearn::pipeline::{learn_with_plan, preprocess, validate_holdout, LearnConfig, LearnResult, Mode};
use lindlearn::probes::probe_table;
use lindlearn::shadows::{acquire, ShadowBatch};
use lindlearn::sim::{PauliGenerator, Rk45Options};
use lindlearn::{Error, PauliString, Result};

#[derive(Parser)]
#[command(name = "lindlearn", version, about = "Learn time-dependent local Lindbladians from process shadows")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Print the plan: probes, nodes, precisions and budgets.
    Preprocess {
        config: PathBuf,
        /// Emit the full plan as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Simulate snapshots at every planned time and write them to a file.
    Acquire {
        config: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        /// Snapshots per time.
        #[arg(long, default_value_t = 1000)]
        count: usize,
    },
    /// Run the learner and print the result as JSON.
    Learn {
        config: PathBuf,
        #[arg(long)]
        snapshots: Option<PathBuf>,
        /// Force oracle mode.
        #[arg(long)]
        oracle: bool,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Holdout certificate of a stored result against the config's truth.
    Validate {
        config: PathBuf,
        #[arg(long)]
        result: PathBuf,
        /// Target sup error; defaults to the config's eps.
        #[arg(long)]
        eps_inf: Option<f64>,
    },
    /// Heisenberg-evolve a Pauli observable under the truth ansatz.
    Simulate {
        config: PathBuf,
        #[arg(long)]
        observable: String,
        #[arg(long, num_args = 1.., required = true)]
        times: Vec<f64>,
        #[arg(long, default_value_t = 1e-12)]
        cutoff: f64,
    },
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

fn load_config(path: &Path) -> Result<LearnConfig> {
    LearnConfig::from_json(&read(path)?).map_err(|e| e.context(path.display().to_string()))
}

fn need_truth(cfg: &LearnConfig) -> Result<lindlearn::LindbladAnsatz> {
    cfg.truth_ansatz()?.ok_or_else(|| Error::Invalid("config has no truth ansatz".into()))
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Preprocess { config, json } => {
            let cfg = load_config(&config)?;
            let plan = preprocess(&cfg)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&plan).expect("plan serializes"));
                return Ok(());
            }
            print!("{}", probe_table(&plan.probes));
            let d = &plan.derivative;
            let summary = json!({
                "n": plan.n,
                "s": plan.s,
                "eps_sdp": plan.eps_sdp,
                "primary_nodes": plan.primary.len(),
                "c_int_final": plan.c_int_final,
                "max_region": plan.max_region(),
                "clamped_regions": plan.clamped_regions,
                "dyson_order": d.dyson_order,
                "fit_degree": d.fit_degree,
                "aux_nodes": d.aux_nodes.len(),
                "eps_f": d.eps_f,
                "eps_1": d.eps_1,
                "groups": plan.groups,
                "budget_per_time": plan.budget_per_time.to_string(),
                "total_samples": plan.total_samples.to_string(),
                "t_min": plan.t_min,
                "t_tot": plan.t_tot,
            });
            println!("{}", serde_json::to_string_pretty(&summary).expect("summary serializes"));
        }
        Cmd::Acquire { config, output, count } => {
            let cfg = load_config(&config)?;
            let truth = need_truth(&cfg)?;
            let plan = preprocess(&cfg)?;
            if (count as u128) < plan.budget_per_time {
                eprintln!("warning: {count} snapshots per time is below the planned {}", plan.budget_per_time);
            }
            let batch = acquire(&truth, &plan.all_times(), count, cfg.seed)?;
            write(&output, &batch.serialize())?;
            eprintln!("wrote {} snapshots at {} times", batch.len(), plan.all_times().len());
        }
        Cmd::Learn { config, snapshots, oracle, output } => {
            let mut cfg = load_config(&config)?;
            if oracle {
                cfg.mode = Mode::Oracle;
            }
            let path = snapshots.or_else(|| cfg.snapshots.as_ref().map(PathBuf::from));
            let batch = match (cfg.mode, path) {
                (Mode::Sampled, Some(p)) => Some(ShadowBatch::parse(&read(&p)?).map_err(|e| e.context(p.display().to_string()))?),
                _ => None,
            };
            let plan = preprocess(&cfg)?;
            let res = learn_with_plan(&cfg, &plan, batch)?;
            let text = res.to_json();
            match output {
                Some(p) => write(&p, &text)?,
                None => println!("{text}"),
            }
            if let Some(e) = res.max_error() {
                eprintln!("max sup error vs truth: {e:.3e}");
            }
        }
        Cmd::Validate { config, result, eps_inf } => {
            let cfg = load_config(&config)?;
            let truth = need_truth(&cfg)?;
            let res = LearnResult::from_json(&read(&result)?)?;
            let eval = |idx: &lindlearn::CoeffIndex, t: f64| truth.schedule(idx).map_or(0.0, |s| s.eval(t));
            let report = validate_holdout(&res, &eval, eps_inf.unwrap_or(cfg.eps), cfg.delta, cfg.seed);
            println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
            if !report.pass {
                return Err(Error::Invalid("holdout deviation exceeds eps_inf".into()));
            }
        }
        Cmd::Simulate { config, observable, times, cutoff } => {
            let cfg = load_config(&config)?;
            let truth = need_truth(&cfg)?;
            let p: PauliString = observable.parse()?;
            if p.n() != truth.n() {
                return Err(Error::Dimension { expected: truth.n(), got: p.n() });
            }
            let mut sorted = times.clone();
            sorted.sort_by(f64::total_cmp);
            let gen = PauliGenerator::new(&truth)?;
            let mut v = vec![0.0; gen.dim()];
            v[p.index() as usize] = 1.0;
            let outs = gen.evolve(v, 0.0, &sorted, &Rk45Options::with_tol(cfg.ode_tol))?;
            let rows: Vec<_> = sorted
                .iter()
                .zip(&outs)
                .map(|(t, v)| {
                    let terms: Vec<_> = v
                        .iter()
                        .enumerate()
                        .filter(|(_, c)| c.abs() > cutoff)
                        .map(|(i, c)| json!([PauliString::from_index(truth.n(), i as u64).to_string(), c]))
                        .collect();
                    json!({ "t": t, "terms": terms })
                })
                .collect();
            println!("{}", serde_json::to_string_pretty(&json!({ "observable": observable, "evolved": rows })).expect("json"));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
