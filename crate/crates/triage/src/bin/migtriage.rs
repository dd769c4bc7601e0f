use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use migtriage::error::{Error, InStage, StageError};
use migtriage::experiment::{self, provenance, OutputLayout};
use migtriage::files;
use migtriage::service::{self, ServiceConfig};
use migtriage::{default_experiment_config, load_experiment, ExperimentConfig};
use migtriage_core::metrics::{render_table, DEFAULT_BUDGET};
use migtriage_core::{mdi_feature_importance, ModelKind, ThresholdPolicy};

#[derive(Parser)]
#[command(name = "migtriage", version, about = "Migrant vulnerability triage: experiment pipeline and service")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate, train all five kinds, evaluate and write every report.
    Run(Common),
    /// Write the synthetic dataset to `<out>/dataset.csv`.
    Generate(Common),
    /// Train models on `<out>/dataset.csv` and write `<out>/models/`.
    Train(WithKinds),
    /// Evaluate saved models on the test split and write their reports.
    Evaluate(WithKinds),
    /// Print feature-importance rankings of saved models.
    Importance {
        #[command(flatten)]
        args: WithKinds,
        #[arg(long, value_enum, default_value_t = ImportanceMode::All)]
        mode: ImportanceMode,
    },
    /// Run the permutation significance test on saved models.
    Significance(WithKinds),
    /// Start the HTTP service.
    Serve {
        /// Service settings file.
        #[arg(long, default_value = "service.toml")]
        config: PathBuf,
    },
}

#[derive(Args)]
struct Common {
    /// Experiment file; the built-in default experiment when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; `output_dir` from the config, else `out`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// `fn_min_under_budget[:<budget>]` or `max_f1`.
    #[arg(long, value_parser = parse_policy)]
    policy: Option<ThresholdPolicy>,
    #[arg(long)]
    alpha: Option<f64>,
}

#[derive(Args)]
struct WithKinds {
    #[command(flatten)]
    common: Common,
    /// Model kind; repeat or separate with commas. All five when omitted.
    #[arg(long, value_delimiter = ',', value_parser = parse_kind)]
    kind: Vec<ModelKind>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ImportanceMode {
    Mdi,
    Permutation,
    All,
}

fn parse_policy(s: &str) -> Result<ThresholdPolicy, String> {
    let (mode, budget) = match s.split_once(':') {
        Some((m, b)) => (m, Some(b.parse::<u64>().map_err(|_| format!("invalid budget \"{b}\""))?)),
        None => (s, None),
    };
    match (mode, budget) {
        ("fn_min_under_budget", b) => Ok(ThresholdPolicy::FnMinUnderBudget {
            budget: b.unwrap_or(DEFAULT_BUDGET),
        }),
        ("max_f1", None) => Ok(ThresholdPolicy::MaxF1),
        _ => Err(format!("unknown policy \"{s}\"")),
    }
}

fn parse_kind(s: &str) -> Result<ModelKind, String> {
    ModelKind::parse(s).ok_or_else(|| {
        let names: Vec<&str> = ModelKind::ALL.iter().map(|k| k.as_str()).collect();
        format!("unknown kind \"{s}\"; expected one of {}", names.join(", "))
    })
}

impl Common {
    fn load(&self) -> Result<(ExperimentConfig, OutputLayout), StageError> {
        let mut config = match &self.config {
            Some(p) => load_experiment(p).stage("config")?,
            None => default_experiment_config(),
        };
        if let Some(seed) = self.seed {
            config = config.with_seed(seed);
        }
        if let Some(p) = self.policy {
            config.policy = p;
        }
        if let Some(a) = self.alpha {
            config.alpha = a;
        }
        config.validate().stage("config")?;
        let out = self
            .out
            .clone()
            .or_else(|| config.output_dir.clone())
            .unwrap_or_else(|| PathBuf::from("out"));
        Ok((config, OutputLayout::new(out)))
    }
}

impl WithKinds {
    fn kinds(&self) -> Vec<ModelKind> {
        if self.kind.is_empty() {
            ModelKind::ALL.to_vec()
        } else {
            ModelKind::ALL.into_iter().filter(|k| self.kind.contains(k)).collect()
        }
    }
}

fn load_dataset(config: &ExperimentConfig, out: &OutputLayout, stage: &'static str) -> Result<migtriage_core::LabeledDataset, StageError> {
    let ds = files::read_dataset(&out.dataset()).stage(stage)?;
    if ds.metadata.seed != config.seed() {
        return Err(Error::Invalid(format!(
            "{} was generated with seed {}, not {}",
            out.dataset().display(),
            ds.metadata.seed,
            config.seed()
        )))
        .stage(stage);
    }
    Ok(ds)
}

fn load_model(config: &ExperimentConfig, out: &OutputLayout, kind: ModelKind, stage: &'static str) -> Result<migtriage_core::TrainedModel, StageError> {
    experiment::load_model(&out.model(kind), config).stage(stage)
}

fn print(text: &str) {
    let mut stdout = std::io::stdout().lock();
    let _ = stdout.write_all(text.as_bytes());
}

fn run(cli: Cli) -> Result<(), StageError> {
    match cli.command {
        Command::Run(c) => {
            let (config, out) = c.load()?;
            let outcome = experiment::run_full_experiment(&config, &out.root)?;
            print(&files::fixed_width_table(&outcome.reports(), &provenance(&config)));
        }
        Command::Generate(c) => {
            let (config, out) = c.load()?;
            let ds = experiment::generate(&config)?;
            files::write_dataset(&out.dataset(), &ds, &provenance(&config)).stage("generate")?;
            print(&format!(
                "{}: {} rows (train {}, validation {}, test {})\n",
                out.dataset().display(),
                ds.rows.len(),
                ds.split_len(migtriage_core::Split::Train),
                ds.split_len(migtriage_core::Split::Validation),
                ds.split_len(migtriage_core::Split::Test),
            ));
        }
        Command::Train(args) => {
            let (config, out) = args.common.load()?;
            let ds = load_dataset(&config, &out, "train")?;
            for kind in args.kinds() {
                let model = experiment::train_model(&config, &ds, kind)?;
                experiment::write_model(&out, &config, &model).stage("train")?;
                print(&format!("{}: threshold {}\n", out.model(kind).display(), model.threshold));
            }
        }
        Command::Evaluate(args) => {
            let (config, out) = args.common.load()?;
            let ds = load_dataset(&config, &out, "evaluate")?;
            let prov = provenance(&config);
            let mut reports = Vec::new();
            for kind in args.kinds() {
                let model = load_model(&config, &out, kind, "evaluate")?;
                let (report, importance) = experiment::evaluate(&config, &ds, &model)?;
                let significance = experiment::significance(&config, &ds, &model)?;
                experiment::write_report(&out, &prov, &report).stage("evaluate")?;
                experiment::write_importance(&out, &prov, &importance).stage("evaluate")?;
                experiment::write_significance(&out, &prov, kind, &significance).stage("evaluate")?;
                reports.push(report);
            }
            experiment::write_summaries(&out, &prov).stage("evaluate")?;
            print(&render_table(&reports));
        }
        Command::Importance { args, mode } => {
            let (config, out) = args.common.load()?;
            let ds = load_dataset(&config, &out, "importance")?;
            for kind in args.kinds() {
                let model = load_model(&config, &out, kind, "importance")?;
                if mode != ImportanceMode::Permutation {
                    let mdi = mdi_feature_importance(&model).stage("importance");
                    match (mdi, mode) {
                        (Ok(mdi), _) => {
                            print(&format!("{kind} mdi\n"));
                            for (i, r) in mdi.fields.iter().enumerate() {
                                print(&format!("{:>3} {:<24} {:.6}\n", i + 1, r.key, r.importance));
                            }
                        }
                        (Err(e), ImportanceMode::Mdi) => return Err(e),
                        (Err(_), _) => {}
                    }
                }
                if mode != ImportanceMode::Mdi {
                    let imp = experiment::importance(&config, &ds, &model, config.importance_repeats)?;
                    print(&format!("{kind} permutation (recall drop, {} repeats)\n", imp.n_repeats));
                    for (i, r) in imp.permutation.iter().enumerate() {
                        print(&format!("{:>3} {:<24} {:.6}\n", i + 1, r.field, r.importance));
                    }
                    if mode == ImportanceMode::All {
                        experiment::write_importance(&out, &provenance(&config), &imp).stage("importance")?;
                    }
                }
            }
        }
        Command::Significance(args) => {
            let (config, out) = args.common.load()?;
            let ds = load_dataset(&config, &out, "significance")?;
            for kind in args.kinds() {
                let model = load_model(&config, &out, kind, "significance")?;
                let s = experiment::significance(&config, &ds, &model)?;
                experiment::write_significance(&out, &provenance(&config), kind, &s).stage("significance")?;
                print(&format!(
                    "{kind}: observed {:.4} p = {:.4} ({} permutations) {}\n",
                    s.observed,
                    s.p_value,
                    s.n_permutations,
                    if s.significant { "significant" } else { "not significant" }
                ));
            }
        }
        Command::Serve { config } => {
            let settings = ServiceConfig::load(Path::new(&config), |k| std::env::var(k).ok()).stage("config")?;
            let rt = tokio::runtime::Runtime::new()
                .map_err(|e| Error::io(Path::new("."), e))
                .stage("serve")?;
            rt.block_on(service::serve(settings))
                .map_err(|e| Error::Invalid(format!("{e:#}")))
                .stage("serve")?;
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
