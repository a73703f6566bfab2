//! maskfit: build statistical shape models of face landmarks, fit them to
//! new observations, and composite mask templates onto face images.
//!
//! Exit codes: 0 success, 1 usage, 2 parse/validation failure,
//! 3 numerical failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use maskfit_core::formats::{
    corpus_hash, load_model, load_template_registry, write_corpus_dir, write_template_registry,
    Convention, LandmarkEntry, LandmarkFile, ModelFile, Provenance,
};
use maskfit_core::metrics::chinline_deviation_from_raster;
use maskfit_core::model::build_model;
use maskfit_core::overlay::{
    overlay_pipeline, ClassLabel, FaceAnnotation, MaskMethod, MaskTemplate, OverlayJob,
    PipelineOptions,
};
use maskfit_core::shape::Shape;
use maskfit_core::synth::{generate_cases, make_template_registry, SynthConfig};

/// Environment fallback for `--seed`.
const SEED_ENV: &str = "SHAPEFIT_SEED";

const EXIT_USAGE: u8 = 1;
const EXIT_INPUT: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

#[derive(Parser)]
#[command(
    name = "maskfit",
    version,
    about = "Face shape models and mask-template overlay"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a PCA shape model from a landmark corpus.
    BuildModel(BuildModelArgs),
    /// Overlay a mask template onto one annotated face image.
    Overlay(OverlayArgs),
    /// Compare alignment methods over a case directory.
    Eval(EvalArgs),
    /// Generate a reproducible synthetic corpus with rendered faces.
    GenSynthetic(GenSyntheticArgs),
}

#[derive(Args)]
struct BuildModelArgs {
    /// Landmark corpus (JSON).
    #[arg(long)]
    landmarks: PathBuf,
    /// Fraction of total variance the retained modes must explain.
    #[arg(long, default_value_t = 0.98)]
    variance: f64,
    /// Output model file.
    #[arg(long)]
    out: PathBuf,
    /// Reduce a 68-point corpus to a named subset before building.
    #[arg(long, value_enum)]
    subset: Option<SubsetArg>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SubsetArg {
    Mask17,
}

#[derive(Args)]
struct OverlayArgs {
    /// Input face image (PNG).
    #[arg(long)]
    image: PathBuf,
    /// Landmark file containing this image's 68-point annotation.
    #[arg(long)]
    landmarks: PathBuf,
    /// Shape model file.
    #[arg(long)]
    model: PathBuf,
    /// Template manifest.
    #[arg(long)]
    templates: PathBuf,
    #[arg(long, value_enum)]
    method: MethodArg,
    /// Classification label for this face.
    #[arg(long, value_enum)]
    label: LabelArg,
    /// Output image (PNG).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Sla,
    Dla,
    DlaSsa,
}

impl From<MethodArg> for MaskMethod {
    fn from(value: MethodArg) -> Self {
        match value {
            MethodArg::Sla => MaskMethod::Sla,
            MethodArg::Dla => MaskMethod::Dla,
            MethodArg::DlaSsa => MaskMethod::DlaSsa,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum LabelArg {
    None,
    Incorrect,
    Correct,
}

impl From<LabelArg> for ClassLabel {
    fn from(value: LabelArg) -> Self {
        match value {
            LabelArg::None => ClassLabel::None,
            LabelArg::Incorrect => ClassLabel::Incorrect,
            LabelArg::Correct => ClassLabel::Correct,
        }
    }
}

#[derive(Args)]
struct EvalArgs {
    /// Case directory holding landmarks.json, truth.json, and images/.
    #[arg(long)]
    cases: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    templates: PathBuf,
    /// Output report: CSV rows plus a '#'-prefixed summary.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GenSyntheticArgs {
    /// Number of cases to generate.
    #[arg(long)]
    n: usize,
    /// Number of active shape modes (0..=3).
    #[arg(long, default_value_t = 3)]
    modes: usize,
    /// Landmark noise standard deviation in pixels.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    /// Yaw drawn uniformly from [-R, R].
    #[arg(long = "yaw-range", default_value_t = 0.0)]
    yaw_range: f64,
    /// RNG seed; falls back to the SHAPEFIT_SEED environment variable.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Rendered image side length.
    #[arg(long = "image-size", default_value_t = 256)]
    image_size: u32,
}

enum CliError {
    Usage(String),
    Core(maskfit_core::Error),
}

impl From<maskfit_core::Error> for CliError {
    fn from(e: maskfit_core::Error) -> Self {
        CliError::Core(e)
    }
}

type CliResult<T> = Result<T, CliError>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap already formats usage/help nicely; normalize the exit
            // code to the documented contract.
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::BuildModel(args) => cmd_build_model(args),
        Command::Overlay(args) => cmd_overlay(args),
        Command::Eval(args) => cmd_eval(args),
        Command::GenSynthetic(args) => cmd_gen_synthetic(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(CliError::Core(e)) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            if e.is_input_error() {
                ExitCode::from(EXIT_INPUT)
            } else {
                ExitCode::from(EXIT_NUMERICAL)
            }
        }
    }
}

fn cmd_build_model(args: BuildModelArgs) -> CliResult<()> {
    let file = LandmarkFile::load(&args.landmarks)?;
    let subset = matches!(args.subset, Some(SubsetArg::Mask17));
    let shapes = file.shapes(subset)?;
    let build = build_model(&shapes, args.variance)?;

    let provenance = Provenance {
        corpus_hash: corpus_hash(&shapes),
        variance_fraction: args.variance,
    };
    ModelFile::from_model(&build.model, provenance).save(&args.out)?;

    println!(
        "built model: {} shapes, {} points, t = {}",
        shapes.len(),
        build.model.n_points(),
        build.model.mode_count()
    );
    println!(
        "eigenvalue spectrum: {}",
        build
            .model
            .eigenvalues()
            .iter()
            .map(|l| format!("{l:.6e}"))
            .collect::<Vec<_>>()
            .join(", ")
    );
    println!(
        "procrustes iterations: {}{}",
        build.gpa_iterations,
        if build.gpa_converged {
            ""
        } else {
            " (not converged)"
        }
    );
    println!("wrote {}", args.out.display());
    Ok(())
}

/// Finds the landmark entry for an image: by file-name match when the file
/// holds several entries, or the sole entry otherwise.
fn entry_for_image<'a>(
    file: &'a LandmarkFile,
    landmarks_path: &Path,
    image: &Path,
) -> CliResult<&'a LandmarkEntry> {
    let target = image.file_name();
    if let Some(entry) = file
        .entries
        .iter()
        .find(|e| Path::new(&e.image_path).file_name() == target)
    {
        return Ok(entry);
    }
    if file.entries.len() == 1 {
        return Ok(&file.entries[0]);
    }
    Err(CliError::Core(maskfit_core::Error::FileValidation {
        path: landmarks_path.display().to_string(),
        reason: format!(
            "no entry matches image `{}` ({} entries present)",
            image.display(),
            file.entries.len()
        ),
    }))
}

fn annotation_from_entry(entry: &LandmarkEntry, label: ClassLabel) -> CliResult<FaceAnnotation> {
    let shape = Shape::new(entry.points.iter().map(|&p| p.into()).collect())
        .map_err(CliError::Core)?;
    FaceAnnotation::new(shape, label).map_err(CliError::Core)
}

fn cmd_overlay(args: OverlayArgs) -> CliResult<()> {
    let file = LandmarkFile::load(&args.landmarks)?;
    if file.convention != Convention::Ibug68 {
        return Err(CliError::Core(maskfit_core::Error::FileValidation {
            path: args.landmarks.display().to_string(),
            reason: "overlay requires the ibug68-1based convention".into(),
        }));
    }
    let entry = entry_for_image(&file, &args.landmarks, &args.image)?;
    let face = annotation_from_entry(entry, args.label.into())?;
    let image = maskfit_core::formats::read_image(&args.image)?;
    let model = load_model(&args.model)?;
    let registry = load_template_registry(&args.templates)?;

    let job = OverlayJob { image, face };
    let result = overlay_pipeline(
        &job,
        &model,
        &registry,
        args.method.into(),
        &PipelineOptions::default(),
    )?;

    match &result.method {
        None => eprintln!("warning: bypass (label `correct`); writing the input unchanged"),
        Some(method) => {
            println!(
                "method {method}, template {}",
                result.template_used.as_deref().unwrap_or("-")
            );
            if let Some(residual) = result.fit_residual {
                println!("fit residual: {residual:.6e}");
            }
            if let Some(b) = &result.fit_weights {
                println!(
                    "b: [{}]",
                    b.iter()
                        .map(|v| format!("{v:.6}"))
                        .collect::<Vec<_>>()
                        .join(", ")
                );
            }
        }
    }

    maskfit_core::formats::save_image(&result.image, &args.out)?;
    println!("wrote {}", args.out.display());
    Ok(())
}

/// Methods in canonical report order.
const EVAL_METHODS: [MaskMethod; 3] = [MaskMethod::Sla, MaskMethod::Dla, MaskMethod::DlaSsa];

fn cmd_eval(args: EvalArgs) -> CliResult<()> {
    let noisy = LandmarkFile::load(&args.cases.join("landmarks.json"))?;
    let truth = LandmarkFile::load(&args.cases.join("truth.json"))?;
    if noisy.entries.is_empty() {
        return Err(CliError::Core(maskfit_core::Error::FileValidation {
            path: args.cases.display().to_string(),
            reason: "case directory has no entries".into(),
        }));
    }
    let model = load_model(&args.model)?;
    let registry = load_template_registry(&args.templates)?;

    // Canonical order: by case image path.
    let mut order: Vec<usize> = (0..noisy.entries.len()).collect();
    order.sort_by(|&a, &b| noisy.entries[a].image_path.cmp(&noisy.entries[b].image_path));

    let mut rows = Vec::new();
    let mut sums = [0.0f64; 3];
    let mut counts = [0usize; 3];
    let mut bypassed = 0usize;

    for &idx in &order {
        let entry = &noisy.entries[idx];
        let truth_entry = truth
            .entries
            .iter()
            .find(|t| t.image_path == entry.image_path)
            .ok_or_else(|| {
                CliError::Core(maskfit_core::Error::FileValidation {
                    path: args.cases.join("truth.json").display().to_string(),
                    reason: format!("no ground truth for `{}`", entry.image_path),
                })
            })?;
        let case_name = Path::new(&entry.image_path)
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| entry.image_path.clone());

        let label = entry.class_label.unwrap_or(ClassLabel::None);
        if label == ClassLabel::Correct {
            bypassed += 1;
            continue;
        }
        let face = annotation_from_entry(entry, label)?;
        let image = maskfit_core::formats::read_image(&args.cases.join(&entry.image_path))?;
        // Ground-truth jaw: face landmarks 2..16 (the mask jaw chain).
        let truth_jaw = Shape::new(
            truth_entry.points[1..16].iter().map(|&p| p.into()).collect(),
        )
        .map_err(CliError::Core)?;

        let job = OverlayJob {
            image,
            face: face.clone(),
        };
        for (m, method) in EVAL_METHODS.iter().enumerate() {
            let result =
                overlay_pipeline(&job, &model, &registry, *method, &PipelineOptions::default())?;
            let fragment = result.fragment.as_ref().expect("non-bypass produces a fragment");
            let deviation =
                chinline_deviation_from_raster(&fragment.image, fragment.offset, &truth_jaw)?;
            rows.push(format!("{case_name},{method},{deviation:.6}"));
            sums[m] += deviation;
            counts[m] += 1;
        }
    }

    let mut report = String::from("case,method,chinline_deviation_px\n");
    for row in &rows {
        report.push_str(row);
        report.push('\n');
    }
    let mut summary = String::new();
    summary.push_str("# summary: mean chin-line deviation (px)\n");
    for (m, method) in EVAL_METHODS.iter().enumerate() {
        if counts[m] > 0 {
            summary.push_str(&format!(
                "# {method}: {:.6} over {} cases\n",
                sums[m] / counts[m] as f64,
                counts[m]
            ));
        }
    }
    if bypassed > 0 {
        summary.push_str(&format!("# bypassed (label `correct`): {bypassed}\n"));
    }
    report.push_str(&summary);

    std::fs::write(&args.out, &report).map_err(|e| {
        CliError::Core(maskfit_core::Error::Io {
            path: args.out.display().to_string(),
            source: e,
        })
    })?;
    print!("{summary}");
    println!("wrote {}", args.out.display());
    Ok(())
}

fn cmd_gen_synthetic(args: GenSyntheticArgs) -> CliResult<()> {
    let seed = match args.seed {
        Some(s) => s,
        None => match std::env::var(SEED_ENV) {
            Ok(v) => v.parse::<u64>().map_err(|_| {
                CliError::Usage(format!("{SEED_ENV} must be an unsigned integer, got `{v}`"))
            })?,
            Err(_) => {
                return Err(CliError::Usage(format!(
                    "no seed given: pass --seed or set {SEED_ENV}"
                )))
            }
        },
    };
    let cfg = SynthConfig {
        count: args.n,
        modes: args.modes,
        noise_sigma: args.noise,
        yaw_range: args.yaw_range,
        seed,
        image_size: args.image_size,
    };
    let cases = generate_cases(&cfg)?;
    let layout = write_corpus_dir(&args.out, &cases, cfg.image_size)?;
    let templates: Vec<MaskTemplate> = make_template_registry(cfg.image_size);
    let manifest = write_template_registry(&args.out.join("templates"), &templates)?;

    println!(
        "generated {} cases (seed {seed}, {} modes, noise {}, yaw range {})",
        cases.len(),
        cfg.modes,
        cfg.noise_sigma,
        cfg.yaw_range
    );
    println!("landmarks: {}", layout.landmarks.display());
    println!("truth:     {}", layout.truth.display());
    println!("templates: {}", manifest.display());
    Ok(())
}
