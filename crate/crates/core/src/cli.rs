//! Command-line front end.
//!
//! Settings for `synth`, `train` and `eval` are layered: built-in defaults
//! (or a preset), then the matching table of the `--config` TOML file, then
//! flags given on the command line.
//!
//! Exit codes: 0 success, 2 configuration error, 3 I/O or file-format error,
//! 4 numeric failure.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::parser::ValueSource;
use clap::{ArgMatches, Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::dataio::{self, ChannelKind, Dataset, DatasetConfig};
use crate::error::{Error, Result};
use crate::eval::{self, Method, PipelineConfig, Restorer};
use crate::fieldsynth::SceneProfile;
use crate::losses::{Objective, PhaseVariant};
use crate::neuralnet::{self, TrainConfig, UNetConfig};
use crate::nf2ff::{self, CutPlane, PatternCut, Polarization};

#[derive(Parser, Debug)]
#[command(
    name = "nfsnet",
    version,
    about = "Restore decimated planar near-field scans and transform them to far-field patterns"
)]
pub struct Cli {
    /// TOML file with [synth], [train] and [eval] tables; flags override it
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Worker threads for matrix products
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    /// Log filter (error, warn, info, debug)
    #[arg(long, global = true, default_value = "warn")]
    log_level: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Synthesize a dataset bundle of decimated/full-grid map pairs
    Synth(SynthArgs),
    /// Train the magnitude or phase network on a dataset
    Train(TrainArgs),
    /// Restore a decimated field-map bundle to the full grid
    Restore(RestoreArgs),
    /// Transform a field-map bundle and write one principal-plane cut
    Nf2ff(Nf2ffArgs),
    /// Run an evaluation study on the held-out scenes of a dataset
    Eval(EvalArgs),
    /// Overlay pattern-cut CSV files in one SVG plot
    Plot(PlotArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Preset {
    /// Defaults as documented per flag
    Full,
    /// 48-sample grid for synth; 16 base channels, 30 epochs decaying every 20 and a residual magnitude net for train
    Toy,
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Number of random antenna scenes
    #[arg(long, default_value_t = DatasetConfig::default().n_scenes)]
    scenes: usize,
    /// Full-grid samples per side
    #[arg(long, default_value_t = DatasetConfig::default().grid_n)]
    grid: usize,
    /// Sample spacing in wavelengths
    #[arg(long, default_value_t = DatasetConfig::default().spacing_lambda)]
    spacing_lambda: f64,
    /// Scan-plane distance in wavelengths
    #[arg(long, default_value_t = DatasetConfig::default().z_lambda)]
    z_lambda: f64,
    /// Decimation factor per axis (2 or 3)
    #[arg(long, default_value_t = DatasetConfig::default().factor)]
    factor: usize,
    /// Fraction of scenes in the training split
    #[arg(long, default_value_t = DatasetConfig::default().split_ratio)]
    split: f64,
    /// Scene families to draw from
    #[arg(long, value_delimiter = ',', default_values_t = SceneProfile::ALL.to_vec())]
    profiles: Vec<SceneProfile>,
    /// Parameter preset applied before the config file
    #[arg(long, value_enum, default_value_t = Preset::Full)]
    preset: Preset,
    /// Dataset seed
    #[arg(long)]
    seed: u64,
    /// Output bundle directory
    #[arg(long)]
    out: PathBuf,
    /// Also write full-grid and decimated field-map bundles of held-out scenes here
    #[arg(long, value_name = "DIR")]
    field_maps: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SynthSettings {
    scenes: usize,
    grid: usize,
    spacing_lambda: f64,
    z_lambda: f64,
    factor: usize,
    split: f64,
    profiles: Vec<SceneProfile>,
}

impl SynthSettings {
    fn preset(p: Preset) -> Self {
        let d = DatasetConfig::default();
        SynthSettings {
            scenes: d.n_scenes,
            grid: if p == Preset::Toy { 48 } else { d.grid_n },
            spacing_lambda: d.spacing_lambda,
            z_lambda: d.z_lambda,
            factor: d.factor,
            split: d.split_ratio,
            profiles: d.profiles,
        }
    }
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Dataset bundle directory
    #[arg(long)]
    data: PathBuf,
    /// Which network to train (mag or phase)
    #[arg(long)]
    channel: ChannelKind,
    /// Initialization and shuffling seed
    #[arg(long)]
    seed: u64,
    /// Output parameter bundle directory
    #[arg(long)]
    out: PathBuf,
    /// Loss history CSV [default: <out>/loss.csv]
    #[arg(long, value_name = "FILE")]
    loss_csv: Option<PathBuf>,
    /// Continue from this parameter bundle; its architecture replaces the
    /// network flags
    #[arg(long, value_name = "DIR")]
    init: Option<PathBuf>,
    /// Parameter preset applied before the config file
    #[arg(long, value_enum, default_value_t = Preset::Full)]
    preset: Preset,
    /// Training epochs [default: 200 for mag, 300 for phase]
    #[arg(long)]
    epochs: Option<usize>,
    /// Epochs between learning-rate decays [default: 50 for mag, 75 for phase]
    #[arg(long)]
    decay_every: Option<usize>,
    /// Mini-batch size
    #[arg(long, default_value_t = TrainConfig::full(ChannelKind::Magnitude).batch_size)]
    batch_size: usize,
    /// Initial ADAM learning rate
    #[arg(long, default_value_t = TrainConfig::full(ChannelKind::Magnitude).lr0)]
    lr: f64,
    /// Learning-rate divisor applied at each decay
    #[arg(long, default_value_t = TrainConfig::full(ChannelKind::Magnitude).lr_decay_factor)]
    lr_decay_factor: f64,
    /// Channels of the first encoder stage
    #[arg(long, default_value_t = UNetConfig::default().base_channels)]
    base_channels: usize,
    /// Encoder/decoder stages
    #[arg(long, default_value_t = UNetConfig::default().stages)]
    stages: usize,
    /// Predict a correction to the upsampled input instead of the map itself
    /// [default: true for mag under the toy preset, false otherwise]
    #[arg(long, value_name = "BOOL", num_args = 0..=1, default_missing_value = "true")]
    residual: Option<bool>,
    /// Periodic phase loss form (symmetric or literal)
    #[arg(long, default_value_t = PhaseVariant::default())]
    phase_variant: PhaseVariant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainSettings {
    epochs: Option<usize>,
    decay_every: Option<usize>,
    batch_size: usize,
    lr: f64,
    lr_decay_factor: f64,
    base_channels: usize,
    stages: usize,
    residual: Option<bool>,
    phase_variant: PhaseVariant,
}

impl TrainSettings {
    fn preset(p: Preset) -> Self {
        let t = TrainConfig::full(ChannelKind::Magnitude);
        let u = UNetConfig::default();
        let toy = p == Preset::Toy;
        TrainSettings {
            epochs: toy.then_some(30),
            decay_every: toy.then_some(20),
            batch_size: t.batch_size,
            lr: t.lr0,
            lr_decay_factor: t.lr_decay_factor,
            base_channels: if toy { 16 } else { u.base_channels },
            stages: u.stages,
            residual: None,
            phase_variant: PhaseVariant::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Study {
    /// Every method at one factor
    Compare,
    /// Every method at factors 2 and 3
    Factor,
    /// Ground-truth/restored magnitude and phase combinations
    Attribution,
    /// Pattern error against measurement SNR
    Snr,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Dataset bundle directory
    #[arg(long)]
    data: PathBuf,
    /// Study to run
    #[arg(long, value_enum, default_value_t = Study::Compare)]
    study: Study,
    /// Output directory for CSV tables and plots
    #[arg(long)]
    out: PathBuf,
    /// Magnitude network parameter bundle
    #[arg(long, value_name = "DIR")]
    mag_model: Option<PathBuf>,
    /// Phase network parameter bundle
    #[arg(long, value_name = "DIR")]
    phase_model: Option<PathBuf>,
    /// Noise seed (required by the snr study)
    #[arg(long)]
    seed: Option<u64>,
    /// Evaluate only the first N held-out scenes
    #[arg(long, value_name = "N")]
    limit: Option<usize>,
    /// Write SVG overlays of every scene's cuts
    #[arg(long)]
    plots: bool,
    /// Decimation factor for compare, attribution and snr
    #[arg(long, default_value_t = PipelineConfig::default().factor)]
    factor: usize,
    /// Zero-padding factor of the spectrum transform
    #[arg(long, default_value_t = PipelineConfig::default().pad_factor)]
    pad_factor: usize,
    /// Pattern-error floor in dB
    #[arg(long, allow_negative_numbers = true, default_value_t = PipelineConfig::default().floor_db)]
    floor_db: f64,
    /// Second floor reported for sensitivity
    #[arg(long, allow_negative_numbers = true, default_value_t = PipelineConfig::default().alt_floor_db)]
    alt_floor_db: f64,
    /// Methods to run [default: nfsnet when both models are given, then bicubic, kriging, cs, identity]
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<Method>>,
    /// SNR levels in dB for the snr study
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true, default_values_t = vec![10.0, 15.0, 20.0, 25.0, 30.0, 40.0])]
    snr: Vec<f64>,
    /// Weight of the l1 penalty in CS reconstruction
    #[arg(long, default_value_t = crate::baselines::CsConfig::default().lambda)]
    cs_lambda: f64,
    /// Iteration cap of CS reconstruction
    #[arg(long, default_value_t = crate::baselines::CsConfig::default().iters)]
    cs_iters: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EvalSettings {
    factor: usize,
    pad_factor: usize,
    floor_db: f64,
    alt_floor_db: f64,
    methods: Option<Vec<Method>>,
    snr: Vec<f64>,
    cs_lambda: f64,
    cs_iters: usize,
}

impl Default for EvalSettings {
    fn default() -> Self {
        let p = PipelineConfig::default();
        let cs = crate::baselines::CsConfig::default();
        EvalSettings {
            factor: p.factor,
            pad_factor: p.pad_factor,
            floor_db: p.floor_db,
            alt_floor_db: p.alt_floor_db,
            methods: None,
            snr: vec![10.0, 15.0, 20.0, 25.0, 30.0, 40.0],
            cs_lambda: cs.lambda,
            cs_iters: cs.iters,
        }
    }
}

#[derive(Args, Debug)]
struct RestoreArgs {
    /// Decimated field-map bundle
    #[arg(long = "in", value_name = "DIR")]
    input: PathBuf,
    /// Output field-map bundle
    #[arg(long)]
    out: PathBuf,
    /// Restoration method
    #[arg(long, default_value_t = Method::NfsNet)]
    method: Method,
    /// Decimation factor of the input
    #[arg(long, default_value_t = 3)]
    factor: usize,
    /// Restored samples per side [default: the network input size, else factor·(n−1)+1]
    #[arg(long)]
    size: Option<usize>,
    #[arg(long, value_name = "DIR")]
    mag_model: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    phase_model: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct Nf2ffArgs {
    /// Field-map bundle
    #[arg(long = "in", value_name = "DIR")]
    input: PathBuf,
    /// Principal plane (E or H)
    #[arg(long)]
    cut: CutPlane,
    /// Co-polarized axis (x or y) [default: the stronger component]
    #[arg(long)]
    pol: Option<Polarization>,
    /// Zero-padding factor of the spectrum transform
    #[arg(long, default_value_t = nf2ff::DEFAULT_PAD_FACTOR)]
    pad: usize,
    /// Output CSV
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct PlotArgs {
    /// Comma-separated cut CSV files; the first is drawn solid
    #[arg(long, value_delimiter = ',', required = true)]
    overlay: Vec<PathBuf>,
    /// Legend labels [default: file stems]
    #[arg(long, value_delimiter = ',')]
    labels: Option<Vec<String>>,
    /// Plot title
    #[arg(long, default_value = "pattern cut")]
    title: String,
    /// Output SVG
    #[arg(long)]
    out: PathBuf,
}

/// Process exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e.root() {
        Error::Config(_) | Error::Shape(_) | Error::Domain(_) | Error::NyquistViolation { .. } => 2,
        Error::Io { .. } | Error::Manifest { .. } | Error::Version { .. } => 3,
        _ => 4,
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    synth: Option<toml::Table>,
    train: Option<toml::Table>,
    eval: Option<toml::Table>,
}

fn read_config(path: Option<&Path>) -> Result<FileConfig> {
    let Some(path) = path else {
        return Ok(FileConfig::default());
    };
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

/// Overlays the keys of `table` on `base`; unknown keys are rejected.
fn layer_file<S: Serialize + DeserializeOwned>(base: S, table: Option<&toml::Table>, section: &str) -> Result<S> {
    let Some(table) = table else {
        return Ok(base);
    };
    let mut merged = toml::Table::try_from(&base).map_err(|e| Error::Config(e.to_string()))?;
    for (k, v) in table {
        merged.insert(k.clone(), v.clone());
    }
    merged
        .try_into()
        .map_err(|e| Error::Config(format!("[{section}]: {e}")))
}

fn explicit(m: &ArgMatches, id: &str) -> bool {
    m.value_source(id) == Some(ValueSource::CommandLine)
}

/// Copies every flag given on the command line into the settings.
macro_rules! layer_flags {
    ($m:expr, $settings:expr, $args:expr, $($field:ident),+) => {
        $( if explicit($m, stringify!($field)) { $settings.$field = $args.$field.clone(); } )+
    };
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = match Cli::command().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let _ = env_logger::Builder::new()
        .parse_filters(&cli.log_level)
        .format_timestamp(None)
        .try_init();
    if cli.threads == 0 {
        eprintln!("error: --threads must be at least 1");
        return 2;
    }
    std::env::set_var("MATMUL_NUM_THREADS", cli.threads.to_string());
    let sub = matches.subcommand().map(|(_, m)| m).expect("subcommand is required");
    match dispatch(&cli, sub) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn main() -> i32 {
    run(std::env::args_os())
}

fn dispatch(cli: &Cli, m: &ArgMatches) -> Result<()> {
    let file = read_config(cli.config.as_deref())?;
    match &cli.command {
        Command::Synth(a) => cmd_synth(a, m, &file),
        Command::Train(a) => cmd_train(a, m, &file),
        Command::Restore(a) => cmd_restore(a),
        Command::Nf2ff(a) => cmd_nf2ff(a),
        Command::Eval(a) => cmd_eval(a, m, &file),
        Command::Plot(a) => cmd_plot(a),
    }
}

fn cmd_synth(a: &SynthArgs, m: &ArgMatches, file: &FileConfig) -> Result<()> {
    let mut s = layer_file(SynthSettings::preset(a.preset), file.synth.as_ref(), "synth")?;
    layer_flags!(m, s, a, scenes, grid, spacing_lambda, z_lambda, factor, split, profiles);
    let config = DatasetConfig {
        n_scenes: s.scenes,
        grid_n: s.grid,
        spacing_lambda: s.spacing_lambda,
        z_lambda: s.z_lambda,
        profiles: s.profiles,
        split_ratio: s.split,
        factor: s.factor,
        seed: a.seed,
    };
    let ds = dataio::build_dataset(&config)?;
    ds.save(&a.out)?;
    println!(
        "dataset {}: {} scenes ({} train / {} test), {} pairs, grid {}, factor {}, seed {}",
        a.out.display(),
        ds.scenes.len(),
        ds.split.train_scenes.len(),
        ds.split.test_scenes.len(),
        ds.pairs.len(),
        config.grid_n,
        config.factor,
        config.seed
    );
    if let Some(dir) = &a.field_maps {
        for &s in &ds.split.test_scenes {
            let (_, near) = ds.scene_field(s)?;
            dataio::save_field_map(&near, &dir.join(format!("scene_{s:04}")))?;
            dataio::save_field_map(&near.decimate(config.factor), &dir.join(format!("scene_{s:04}_x{}", config.factor)))?;
        }
        println!("field maps of {} held-out scenes in {}", ds.split.test_scenes.len(), dir.display());
    }
    Ok(())
}

fn cmd_train(a: &TrainArgs, m: &ArgMatches, file: &FileConfig) -> Result<()> {
    let mut s = layer_file(TrainSettings::preset(a.preset), file.train.as_ref(), "train")?;
    layer_flags!(
        m,
        s,
        a,
        epochs,
        decay_every,
        batch_size,
        lr,
        lr_decay_factor,
        base_channels,
        stages,
        residual,
        phase_variant
    );
    let kind = a.channel;
    let full = TrainConfig::full(kind);
    let tc = TrainConfig {
        batch_size: s.batch_size,
        lr0: s.lr,
        lr_decay_factor: s.lr_decay_factor,
        decay_every: s.decay_every.unwrap_or(full.decay_every),
        total_epochs: s.epochs.unwrap_or(full.total_epochs),
        seed: a.seed,
        ..full
    };
    tc.validate()?;
    let ds = Dataset::load(&a.data)?;
    let n = ds.config.grid_n;
    let unet = UNetConfig {
        base_channels: s.base_channels,
        stages: s.stages,
        in_size: n,
        pad_to: UNetConfig::pad_for(n, s.stages),
        residual: s
            .residual
            .unwrap_or(a.preset == Preset::Toy && kind == ChannelKind::Magnitude),
        ..UNetConfig::default()
    };
    let mut objective = Objective::new(kind);
    objective.phase_variant = s.phase_variant;
    let loss_csv = a.loss_csv.clone().unwrap_or_else(|| a.out.join("loss.csv"));
    let trained = match &a.init {
        Some(dir) => {
            let (net, stored) = neuralnet::load_params(dir, None)?;
            if stored.is_some_and(|k| k != kind) {
                return Err(Error::Config(format!("{} holds a {stored:?} network", dir.display())));
            }
            neuralnet::train_from(&ds, &tc, net, &objective)
        }
        None => neuralnet::train(&ds, &tc, &unet, &objective),
    };
    match trained {
        Ok(out) => {
            neuralnet::save_params(&out.params, Some(kind), &a.out)?;
            eval::write_text(&loss_csv, &out.history.to_csv())?;
            println!(
                "{kind} network {}: {} epochs, validation loss {:.5} -> {:.5}",
                a.out.display(),
                out.history.epochs.len(),
                out.history.initial_val,
                out.history.final_val().unwrap_or(f64::NAN)
            );
            Ok(())
        }
        Err(Error::Diverged { epoch, history }) => {
            eval::write_text(&loss_csv, &history.to_csv())?;
            Err(Error::Diverged { epoch, history })
        }
        Err(e) => Err(e),
    }
}

fn restorer_from(mag: Option<&Path>, phase: Option<&Path>) -> Result<Restorer> {
    match (mag, phase) {
        (Some(m), Some(p)) => Restorer::with_networks(m, p),
        (None, None) => Ok(Restorer::default()),
        _ => Err(Error::Config("--mag-model and --phase-model must be given together".into())),
    }
}

fn cmd_restore(a: &RestoreArgs) -> Result<()> {
    let restorer = restorer_from(a.mag_model.as_deref(), a.phase_model.as_deref())?;
    if a.method == Method::NfsNet && restorer.magnitude_net.is_none() {
        return Err(Error::Config("nfsnet needs --mag-model and --phase-model".into()));
    }
    let low = dataio::load_field_map(&a.input)?;
    let size = match (a.size, &restorer.magnitude_net) {
        (Some(n), _) => n,
        (None, Some(net)) if a.method == Method::NfsNet => net.config.in_size,
        _ => a.factor * (low.grid.nx - 1) + 1,
    };
    let full = eval::restore_field(&low, a.factor, size, a.method, &restorer)?;
    dataio::save_field_map(&full, &a.out)?;
    println!(
        "restored {}x{} -> {size}x{size} with {} into {}",
        low.grid.nx,
        low.grid.ny,
        a.method,
        a.out.display()
    );
    Ok(())
}

fn cmd_nf2ff(a: &Nf2ffArgs) -> Result<()> {
    let map = dataio::load_field_map(&a.input)?;
    let pol = a.pol.unwrap_or_else(|| nf2ff::dominant_polarization(&map));
    let (e, h) = nf2ff::principal_cuts(&map, a.pad, pol)?;
    let cut = match a.cut {
        CutPlane::E => e,
        CutPlane::H => h,
    };
    cut.write_csv(&a.out)?;
    println!("{:?}-plane cut ({pol:?}-polarized) written to {}", a.cut, a.out.display());
    Ok(())
}

fn cmd_eval(a: &EvalArgs, m: &ArgMatches, file: &FileConfig) -> Result<()> {
    let mut s = layer_file(EvalSettings::default(), file.eval.as_ref(), "eval")?;
    layer_flags!(m, s, a, factor, pad_factor, floor_db, alt_floor_db, methods, snr, cs_lambda, cs_iters);
    let cfg = PipelineConfig {
        factor: s.factor,
        pad_factor: s.pad_factor,
        floor_db: s.floor_db,
        alt_floor_db: s.alt_floor_db,
    };
    cfg.validate()?;
    if a.study == Study::Snr && a.seed.is_none() {
        return Err(Error::Config("the snr study needs --seed".into()));
    }
    let mut restorer = restorer_from(a.mag_model.as_deref(), a.phase_model.as_deref())?;
    restorer.cs.lambda = s.cs_lambda;
    restorer.cs.iters = s.cs_iters;
    let have_nets = restorer.magnitude_net.is_some();
    let methods = s.methods.clone().unwrap_or_else(|| {
        let mut v = vec![Method::Bicubic, Method::Kriging, Method::Cs, Method::Identity];
        if have_nets {
            v.insert(0, Method::NfsNet);
        }
        v
    });
    if methods.is_empty() {
        return Err(Error::Config("no methods selected".into()));
    }
    if methods.contains(&Method::NfsNet) && !have_nets {
        return Err(Error::Config("nfsnet needs --mag-model and --phase-model".into()));
    }
    let ds = Dataset::load(&a.data)?;
    let mut scenes = ds.split.test_scenes.clone();
    if scenes.is_empty() {
        return Err(Error::Config("the dataset has no held-out scenes".into()));
    }
    if let Some(n) = a.limit {
        scenes.truncate(n.max(1));
    }
    std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    match a.study {
        Study::Compare | Study::Factor => {
            let factors = if a.study == Study::Factor { vec![2, 3] } else { vec![cfg.factor] };
            let mut plots = Vec::new();
            let report = eval::compare_with(&ds, &scenes, &methods, &factors, &restorer, &cfg, |scene, factor, r| {
                if a.plots {
                    plots.push(PlotEntry {
                        scene,
                        factor,
                        method: r.method,
                        cuts: r.cuts.clone(),
                        reference: r.reference.clone(),
                    });
                }
            })?;
            eval::write_text(&a.out.join("report.csv"), &report.to_csv())?;
            let summary = report.summary_csv();
            eval::write_text(&a.out.join("summary.csv"), &summary)?;
            if a.plots {
                write_plots(&a.out.join("plots"), &plots)?;
            }
            print!("{summary}");
        }
        Study::Attribution => {
            let method = methods[0];
            let rows = eval::attribution_study(&ds, &scenes, method, &restorer, &cfg)?;
            let csv = eval::attribution_csv(&rows);
            eval::write_text(&a.out.join("attribution.csv"), &csv)?;
            print!("{csv}");
        }
        Study::Snr => {
            let method = methods[0];
            let seed = a.seed.expect("checked above");
            let rows = eval::snr_study(&ds, &scenes, method, &restorer, &cfg, &s.snr, seed)?;
            let csv = eval::snr_csv(&rows);
            eval::write_text(&a.out.join("snr.csv"), &csv)?;
            print!("{csv}");
        }
    }
    Ok(())
}

struct PlotEntry {
    scene: usize,
    factor: usize,
    method: Method,
    cuts: (PatternCut, PatternCut),
    reference: (PatternCut, PatternCut),
}

fn write_plots(dir: &Path, entries: &[PlotEntry]) -> Result<()> {
    let mut keys: Vec<(usize, usize)> = entries.iter().map(|e| (e.scene, e.factor)).collect();
    keys.dedup();
    for (s, f) in keys {
        let runs: Vec<&PlotEntry> = entries.iter().filter(|e| e.scene == s && e.factor == f).collect();
        for plane in [CutPlane::E, CutPlane::H] {
            let pick = |c: &(PatternCut, PatternCut)| match plane {
                CutPlane::E => c.0.clone(),
                CutPlane::H => c.1.clone(),
            };
            let reference = pick(&runs[0].reference);
            let restored: Vec<(String, PatternCut)> = runs.iter().map(|e| (e.method.to_string(), pick(&e.cuts))).collect();
            let mut series: Vec<(&str, &PatternCut)> = vec![("analytic", &reference)];
            series.extend(restored.iter().map(|(l, c)| (l.as_str(), c)));
            let svg = eval::overlay_svg(&format!("scene {s}, factor {f}, {plane:?}-plane"), &series);
            eval::write_text(&dir.join(format!("scene_{s:04}_x{f}_{plane:?}.svg")), &svg)?;
        }
    }
    Ok(())
}

fn cmd_plot(a: &PlotArgs) -> Result<()> {
    let cuts = a
        .overlay
        .iter()
        .map(|p| PatternCut::read_csv(p, CutPlane::E))
        .collect::<Result<Vec<_>>>()?;
    let labels: Vec<String> = match &a.labels {
        Some(l) if l.len() == cuts.len() => l.clone(),
        Some(l) => {
            return Err(Error::Config(format!(
                "{} labels for {} overlay files",
                l.len(),
                cuts.len()
            )))
        }
        None => a
            .overlay
            .iter()
            .map(|p| p.file_stem().map_or_else(String::new, |s| s.to_string_lossy().into_owned()))
            .collect(),
    };
    let series: Vec<(&str, &PatternCut)> = labels.iter().map(String::as_str).zip(&cuts).collect();
    eval::write_text(&a.out, &eval::overlay_svg(&a.title, &series))?;
    println!("{} cuts plotted to {}", cuts.len(), a.out.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn command_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn file_layer_rejects_unknown_keys() {
        let table: toml::Table = toml::from_str("grid = 32\nscenes = 5").unwrap();
        let s = layer_file(SynthSettings::preset(Preset::Full), Some(&table), "synth").unwrap();
        assert_eq!((s.grid, s.scenes), (32, 5));
        let bad: toml::Table = toml::from_str("gird = 32").unwrap();
        assert!(matches!(
            layer_file(SynthSettings::preset(Preset::Full), Some(&bad), "synth"),
            Err(Error::Config(_))
        ));
        let t: toml::Table = toml::from_str("epochs = 3").unwrap();
        let s = layer_file(TrainSettings::preset(Preset::Toy), Some(&t), "train").unwrap();
        assert_eq!((s.epochs, s.decay_every, s.base_channels), (Some(3), Some(20), 16));
    }

    #[test]
    fn exit_codes_follow_error_class() {
        assert_eq!(exit_code(&Error::Config("x".into())), 2);
        assert_eq!(exit_code(&Error::io("p", std::io::Error::other("x")).in_stage("load")), 3);
        assert_eq!(exit_code(&Error::NonFinite { layer: "x".into() }), 4);
    }
}
