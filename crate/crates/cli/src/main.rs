use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use duet_core::config::PipelineConfig;
use duet_core::describer::{default_rules, describe_window};
use duet_core::diffusion::{refine_sequence, Denoiser};
use duet_core::duet::{read_duet, write_duet};
use duet_core::pipeline::{compare_runs, Pipeline, StageName};
use duet_core::window::motion_windows;
use duet_core::Skeleton;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::path::{Path, PathBuf};

/// Leader-to-follower duet generation pipeline.
#[derive(Parser, Debug)]
#[command(name = "duet", version)]
struct Cli {
    /// TOML configuration file (defaults to the run directory's config.toml, then the preset).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Built-in configuration when no file is given: reference, desk or smoke.
    #[arg(long, global = true, default_value = "desk")]
    preset: String,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    no_audio: bool,
    #[arg(long, global = true)]
    no_captions: bool,
    #[arg(long, global = true)]
    no_relation: bool,
    #[arg(long, global = true)]
    no_refine: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Io {
    /// Run directory to read shared artifacts (data, tokenizers, tokens,
    /// captions, denoiser) from; they are linked into --out.
    #[arg(long = "in")]
    input: Option<PathBuf>,
    /// Run directory receiving this command's outputs.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Clone)]
struct RefineArgs {
    #[command(flatten)]
    io: Io,
    /// Duet file supplying the leader track (file mode).
    #[arg(long, requires = "follower")]
    duet: Option<PathBuf>,
    /// Duet file whose follower track is refined (file mode).
    #[arg(long, requires = "duet")]
    follower: Option<PathBuf>,
    /// Denoiser checkpoint (file mode); defaults to diffusion/denoiser.ckpt under --in.
    #[arg(long)]
    model: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the synthetic duet corpus and its beat tracks.
    GenData(Io),
    /// Train the motion and relation tokenizers.
    TrainVq(Io),
    /// Tokenize every sequence and write the vocabulary.
    Tokenize(Io),
    /// Train the token language model (all stages).
    TrainLm(Io),
    /// Generate followers for the test split.
    Generate(Io),
    /// Train the diffusion refiner.
    TrainDiffusion(Io),
    /// Refine generated followers of a run, or one file with --duet and --follower.
    Refine(RefineArgs),
    /// Score ground truth, raw and refined followers.
    Evaluate(Io),
    /// Caption a duet file (--in FILE) or build the caption corpus of a run (--out DIR).
    Describe {
        #[arg(long = "in")]
        input: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render the metric table of one run, or compare several runs given with --in.
    Report {
        #[arg(long = "in")]
        input: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every stage.
    Run(Io),
    /// Print the resolved configuration as TOML.
    PrintConfig,
}

impl Cli {
    fn resolve_config(&self, run: Option<&Path>) -> Result<PipelineConfig> {
        let mut cfg = match (&self.config, run.map(|r| r.join("config.toml"))) {
            (Some(p), _) => PipelineConfig::load(p).with_context(|| format!("reading {}", p.display()))?,
            (None, Some(p)) if p.exists() => PipelineConfig::load(&p)?,
            _ => PipelineConfig::preset(&self.preset)?,
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        let a = &mut cfg.ablations;
        a.no_audio |= self.no_audio;
        a.no_captions |= self.no_captions;
        a.no_relation |= self.no_relation;
        a.no_refine |= self.no_refine;
        cfg.validate()?;
        Ok(cfg)
    }

    fn pipeline(&self, io: &Io) -> Result<Pipeline> {
        let p = Pipeline::new(self.resolve_config(Some(&io.out))?, &io.out)?;
        p.init()?;
        if let Some(src) = &io.input {
            let manifest = Pipeline::open(src.clone())?.manifest()?;
            let shared: Vec<StageName> = StageName::ALL
                .into_iter()
                .filter(|s| s.is_shared() && manifest.stages.contains_key(s.as_str()))
                .collect();
            p.adopt(src, &shared)?;
        }
        Ok(p)
    }
}

fn stage_of(c: &Command) -> Option<(StageName, &Io)> {
    Some(match c {
        Command::GenData(io) => (StageName::GenData, io),
        Command::TrainVq(io) => (StageName::TrainVq, io),
        Command::Tokenize(io) => (StageName::Tokenize, io),
        Command::TrainLm(io) => (StageName::TrainLm, io),
        Command::Generate(io) => (StageName::Generate, io),
        Command::TrainDiffusion(io) => (StageName::TrainDiffusion, io),
        Command::Refine(r) if r.duet.is_none() => (StageName::Refine, &r.io),
        Command::Evaluate(io) => (StageName::Evaluate, io),
        _ => return None,
    })
}

fn describe_file(path: &Path) -> Result<()> {
    let skel = Skeleton::smpl22();
    let duet = read_duet(path, &skel)?;
    let rules = default_rules();
    for (role, track) in [("leader", &duet.leader), ("follower", &duet.follower)] {
        for (i, w) in motion_windows(track, duet_core::window::WINDOW_LEN)?.iter().enumerate() {
            println!("{role}\t{i}\t{}", describe_window(w, &skel, &rules, i).text());
        }
    }
    Ok(())
}

/// Refines the follower of `follower` against the leader of `duet` and writes
/// the leader with the refined follower to `out`.
fn refine_file(r: &RefineArgs, seed: u64) -> Result<()> {
    let (Some(duet), Some(follower)) = (&r.duet, &r.follower) else {
        bail!("file mode needs --duet and --follower");
    };
    let model_path = match (&r.model, &r.io.input) {
        (Some(m), _) => m.clone(),
        (None, Some(run)) => run.join("diffusion/denoiser.ckpt"),
        (None, None) => bail!("file mode needs --model <ckpt> or --in <run dir>"),
    };
    let skel = Skeleton::smpl22();
    let base = read_duet(duet, &skel)?;
    let gen = read_duet(follower, &skel)?;
    let model = Denoiser::load(&model_path).with_context(|| format!("loading {}", model_path.display()))?;
    let style = model.config.style_index(base.style.as_deref());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let refined = refine_sequence(&model, &model.norm, &base.leader, &gen.follower, style, &skel, base.fps, &mut rng)?;
    write_duet(&r.io.out, &base.with_follower(refined)?, &skel, true)?;
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Some((stage, io)) = stage_of(&cli.command) {
        cli.pipeline(io)?.run_stage(stage)?;
        return Ok(());
    }
    match &cli.command {
        Command::Refine(r) => {
            let seed = cli.seed.unwrap_or(cli.resolve_config(None)?.seed);
            refine_file(r, seed)?;
        }
        Command::Describe { input, out } => match (input, out) {
            (Some(file), _) if file.is_file() => describe_file(file)?,
            (input, Some(out)) => {
                let io = Io { input: input.clone(), out: out.clone() };
                cli.pipeline(&io)?.run_stage(StageName::Describe)?;
            }
            _ => bail!("describe needs --in <file.duet> or --out <run dir>"),
        },
        Command::Report { input, out } => {
            let (table, csv) = match (input.as_slice(), out) {
                ([], Some(out)) => Pipeline::open(out.clone())?.report()?,
                ([], None) => bail!("report needs --out <run dir> or one or more --in <run dir>"),
                (runs, out) => {
                    let (table, csv) = compare_runs(runs)?;
                    if let Some(out) = out {
                        std::fs::create_dir_all(out)?;
                        std::fs::write(out.join("report.txt"), &table)?;
                        std::fs::write(out.join("report.csv"), &csv)?;
                    }
                    (table, csv)
                }
            };
            print!("{table}");
            log::debug!("{csv}");
        }
        Command::Run(io) => {
            let p = cli.pipeline(io)?;
            let skip: Vec<StageName> = match p.manifest() {
                Ok(m) if io.input.is_some() => StageName::ALL
                    .into_iter()
                    .filter(|s| s.is_shared() && m.stages.contains_key(s.as_str()))
                    .collect(),
                _ => Vec::new(),
            };
            p.run_all(&skip)?;
            print!("{}", p.report()?.0);
        }
        Command::PrintConfig => print!("{}", cli.resolve_config(None)?.to_toml()?),
        _ => unreachable!("stage commands are handled above"),
    }
    Ok(())
}
