use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand, ValueEnum};

use coresets::io::InputFormat;
use coresets::subspace::ReductionVariant;
use coresets_cli::{
    apply_threads, error_doc, failure_doc, run_command, usage_doc, CommandName, RunConfig,
    SuiteName,
};

#[derive(Parser)]
#[command(
    name = "coresets",
    version,
    about = "Build, evaluate, and verify coresets for clustering and subspace costs"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,

    /// Number of centers, or the target subspace rank
    #[arg(long, global = true, env = "CORESETS_K")]
    k: Option<usize>,

    /// Accuracy target, in (0, 1]
    #[arg(long, global = true, env = "CORESETS_EPSILON")]
    epsilon: Option<f64>,

    /// Cost exponent, >= 1
    #[arg(long, global = true, env = "CORESETS_P")]
    p: Option<f64>,

    /// Reduction route: exact iterative augmentation, or the faster
    /// sampled-dimension one
    #[arg(long, global = true, env = "CORESETS_VARIANT", value_enum, default_value_t = VariantArg::Exact)]
    variant: VariantArg,

    /// Root seed; every random draw in a run derives from it
    #[arg(long, global = true, env = "CORESETS_SEED", default_value_t = 0)]
    seed: u64,

    /// Dataset file, or an artifact container for eval
    #[arg(long, global = true, env = "CORESETS_INPUT")]
    input: Option<PathBuf>,

    /// Dataset layout
    #[arg(long, global = true, env = "CORESETS_FORMAT", value_enum, default_value_t = FormatArg::DenseCsv)]
    format: FormatArg,

    /// Destination path; .txt or .text selects the textual container
    #[arg(long, global = true, env = "CORESETS_OUTPUT")]
    output: Option<PathBuf>,

    /// Query file for eval: one query per line, k*d decimals
    #[arg(long, global = true, env = "CORESETS_QUERIES")]
    queries: Option<PathBuf>,

    /// Verification suite
    #[arg(long, global = true, env = "CORESETS_SUITE", value_enum)]
    suite: Option<SuiteArg>,

    /// Tuples per claim, queries per distortion run, or bench rows
    #[arg(long, global = true, env = "CORESETS_SAMPLES")]
    samples: Option<usize>,

    /// Worker threads; defaults to all cores
    #[arg(long, global = true, env = "CORESETS_THREADS")]
    threads: Option<usize>,

    /// JSON file of partial constant overrides
    #[arg(long, global = true, env = "CORESETS_CONSTANTS")]
    constants: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Reduce a dataset to a low-dimensional representation with a
    /// residual coordinate
    Reduce,
    /// Build a weighted coreset for subspace costs
    CoresetSubspace,
    /// Build a weighted coreset for k-median
    CoresetKmedian,
    /// Evaluate a coreset container on a file of queries
    Eval,
    /// Run a verification suite and report the outcome
    Verify,
    /// Reproduce the projection counterexample experiment
    Counterexample,
    /// Time the pipeline stages on a synthetic instance
    Bench,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum VariantArg {
    Exact,
    Fast,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FormatArg {
    DenseCsv,
    SparseTriplets,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SuiteArg {
    Claims,
    Distortion,
}

impl Cli {
    fn into_run_config(self) -> RunConfig {
        RunConfig {
            command: match self.command {
                Cmd::Reduce => CommandName::Reduce,
                Cmd::CoresetSubspace => CommandName::CoresetSubspace,
                Cmd::CoresetKmedian => CommandName::CoresetKmedian,
                Cmd::Eval => CommandName::Eval,
                Cmd::Verify => CommandName::Verify,
                Cmd::Counterexample => CommandName::Counterexample,
                Cmd::Bench => CommandName::Bench,
            },
            k: self.k,
            epsilon: self.epsilon,
            p: self.p,
            variant: match self.variant {
                VariantArg::Exact => ReductionVariant::Exact,
                VariantArg::Fast => ReductionVariant::Fast,
            },
            seed: self.seed,
            input: self.input,
            format: match self.format {
                FormatArg::DenseCsv => InputFormat::DenseCsv,
                FormatArg::SparseTriplets => InputFormat::SparseTriplets,
            },
            output: self.output,
            queries: self.queries,
            suite: self.suite.map(|s| match s {
                SuiteArg::Claims => SuiteName::Claims,
                SuiteArg::Distortion => SuiteName::Distortion,
            }),
            samples: self.samples,
            threads: self.threads,
            constants: self.constants,
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version are not errors; everything else becomes a
            // machine-readable usage document.
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            eprintln!("{}", usage_doc(&e.to_string()));
            return ExitCode::from(2);
        }
    };
    let cfg = cli.into_run_config();
    if let Err(e) = apply_threads(cfg.threads) {
        eprintln!("{}", error_doc(&e));
        return ExitCode::FAILURE;
    }
    match run_command(&cfg) {
        Ok(outcome) => {
            if let Some(report) = &outcome.report {
                print!("{report}");
            }
            if let Some(detail) = &outcome.failure {
                eprintln!("{}", failure_doc(detail));
                return ExitCode::FAILURE;
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", error_doc(&e));
            ExitCode::FAILURE
        }
    }
}
