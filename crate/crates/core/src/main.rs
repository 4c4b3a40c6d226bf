use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use dcnn::cli::{self, RunOverrides};
use dcnn::data::{Split, CLASS_NAMES, PREPROCESS_SIZE};
use dcnn::Result;

#[derive(Parser)]
#[command(name = "dcnn", version, about = "CNN toolkit for 3-class chest CT classification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Crop and resize images listed in a metadata CSV into a class tree.
    Preprocess {
        #[arg(long)]
        metadata: PathBuf,
        /// Directory the metadata filenames are relative to.
        #[arg(long)]
        images: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = PREPROCESS_SIZE)]
        size: u32,
        /// Seed for class balancing.
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Keep every record instead of equalizing classes per split.
        #[arg(long)]
        no_balance: bool,
    },
    /// Class and demographic distribution tables of a metadata CSV.
    Stats {
        #[arg(long)]
        metadata: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the reference network.
    Train(TrainArgs),
    /// Evaluate a checkpoint on one split of a class tree.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data_dir: PathBuf,
        #[arg(long, default_value = "test")]
        split: Split,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 128)]
        batch_size: usize,
    },
    /// Grad-CAM overlay and heatmap for one image.
    Gradcam {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        image: PathBuf,
        /// Class to explain; the predicted class by default.
        #[arg(long)]
        class: Option<usize>,
        #[arg(long, default_value_t = 0.4)]
        alpha: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-layer activation grids for one image.
    Activations {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        image: PathBuf,
        /// Layer indices; every conv and pool layer by default.
        #[arg(long = "layer")]
        layers: Vec<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Learning-rate range test on a fresh network.
    LrRange {
        #[command(flatten)]
        run: TrainArgs,
        #[arg(long, default_value_t = 1e-6)]
        low: f64,
        #[arg(long, default_value_t = 1.0)]
        high: f64,
        #[arg(long, default_value_t = 100)]
        steps: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct TrainArgs {
    /// TOML file with run settings; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    overrides: RunOverrides,
}

impl TrainArgs {
    fn resolve(self, placeholder_run_dir: bool) -> Result<cli::RunConfig> {
        let file = match &self.config {
            Some(p) => RunOverrides::from_file(p)?,
            None => RunOverrides::default(),
        };
        let mut merged = file.overlay(self.overrides);
        if placeholder_run_dir {
            merged.run_dir.get_or_insert_with(PathBuf::new);
            merged.epochs.get_or_insert(1);
        }
        merged.finish()
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Preprocess {
            metadata,
            images,
            out,
            size,
            seed,
            no_balance,
        } => {
            let s = cli::cmd_preprocess(&metadata, &images, &out, size, (!no_balance).then_some(seed))?;
            for ((split, class), n) in &s.counts {
                println!("{split}\t{}\t{n}", CLASS_NAMES[*class]);
            }
            println!("{} written, {} rejected", s.written(), s.rejected.len());
            println!("{}", s.rejection_report.display());
        }
        Command::Stats { metadata, out } => {
            for r in cli::cmd_stats(&metadata, &out)?.iter().filter(|r| r.section == "class") {
                println!("{}\t{}\t{:.1}%", r.class, r.count, r.percent);
            }
            println!("{}", out.display());
        }
        Command::Train(args) => {
            let cfg = args.resolve(false)?;
            println!("{}", cli::LOG_HEADER.join("\t"));
            let summary = cli::train(&cfg, &mut |row| {
                println!(
                    "{}\t{:.3e}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{:.1}",
                    row.epoch,
                    row.lr,
                    row.train_loss,
                    row.train_acc,
                    row.train_kappa,
                    row.val_loss,
                    row.val_acc,
                    row.val_kappa,
                    row.seconds
                )
            })?;
            println!("{}", summary.run_dir.display());
        }
        Command::Eval {
            checkpoint,
            data_dir,
            split,
            out,
            batch_size,
        } => {
            let e = cli::cmd_eval(&checkpoint, &data_dir, split, &out, batch_size)?;
            print!("{}", dcnn::metrics::format_report(&e.report));
            for f in &e.files {
                println!("{}", f.display());
            }
        }
        Command::Gradcam {
            checkpoint,
            image,
            class,
            alpha,
            out,
        } => {
            let g = cli::cmd_gradcam(&checkpoint, &image, class, alpha, &out)?;
            println!("class {} ({})", g.class_index, CLASS_NAMES[g.class_index]);
            println!("{}\n{}", g.overlay.display(), g.heatmap.display());
        }
        Command::Activations {
            checkpoint,
            image,
            layers,
            out,
        } => {
            for p in cli::cmd_activations(&checkpoint, &image, &layers, &out)? {
                println!("{}", p.display());
            }
        }
        Command::LrRange {
            run,
            low,
            high,
            steps,
            out,
        } => {
            let cfg = run.resolve(true)?;
            let r = cli::cmd_lr_range(&cfg, low, high, steps, &out)?;
            if let Some(step) = r.diverged_at {
                println!("diverged at step {step} (lr {:.3e})", r.points[step].lr);
            }
            println!("{}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match std::panic::catch_unwind(|| run(cli.command)) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
        // a panic is an internal error
        Err(_) => ExitCode::from(3),
    }
}
