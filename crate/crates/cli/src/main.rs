use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use obia::assessment::{accuracy_table, class_stats, confusion, metrics, stratified_mask};
use obia::classes::LandClass;
use obia::classifiers::{cart_predict, cart_train, mlp_predict, mlp_train, CartTree, Mlp, MlpConfig};
use obia::features::{compute_features, features_csv};
use obia::pipeline::{majority_labels, object_samples, pixel_samples, run_paper, PaperConfig};
use obia::raster::{read_labels, read_raster, write_labels, write_raster, LabelRaster, MultibandRaster};
use obia::render::{render_class_map, Palette};
use obia::ruleset::{builtin_qinhuai_ruleset, classify, parse_ruleset, rasterize_labels, trace_csv, RuleSet};
use obia::scene::{generate_scene, SceneSpec};
use obia::segmentation::{esp_scan, segment, SegParams, Segmentation};

#[derive(Parser)]
#[command(name = "obia", version, about = "Object-based land-cover classification of four-band imagery")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct SegArgs {
    #[arg(long, default_value_t = 100.0)]
    scale: f64,
    #[arg(long, default_value_t = 0.2)]
    shape: f64,
    #[arg(long, default_value_t = 0.6)]
    compactness: f64,
    /// Comma-separated band weights; one per band, default 1 each.
    #[arg(long, value_delimiter = ',')]
    weights: Option<Vec<f64>>,
}

impl SegArgs {
    fn params(&self, bands: usize) -> SegParams {
        SegParams {
            scale: self.scale,
            shape_weight: self.shape,
            compactness_weight: self.compactness,
            band_weights: self.weights.clone().unwrap_or_else(|| vec![1.0; bands]),
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelKind {
    Mlp,
    Cart,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scene with ground truth.
    GenScene {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 512)]
        width: usize,
        #[arg(long, default_value_t = 512)]
        height: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Multiplier on the class noise; 0 for a noise-free scene.
        #[arg(long, default_value_t = 1.0)]
        noise: f64,
    },
    /// Multiresolution segmentation; writes a segment id raster.
    Segment {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        seg: SegArgs,
        /// Also write the merge log as CSV.
        #[arg(long)]
        merge_log: Option<PathBuf>,
    },
    /// Segment at several scales and report local variance and its rate of change.
    Esp {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        scales: Vec<f64>,
        #[arg(long, default_value_t = 0.2)]
        shape: f64,
        #[arg(long, default_value_t = 0.6)]
        compactness: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-object feature table.
    Features {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        segments: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Apply a rule set to segmented objects.
    Classify {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        segments: PathBuf,
        /// `builtin` or a rule-set file.
        #[arg(long, default_value = "builtin")]
        rules: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Train a CART tree on objects labelled by majority ground truth.
    TrainCart {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        segments: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 8)]
        max_depth: usize,
        #[arg(long, default_value_t = 1)]
        min_leaf: usize,
        #[arg(long, default_value_t = 40)]
        per_class: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train the pixel MLP on stratified ground-truth pixels.
    TrainMlp {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 16)]
        hidden: usize,
        #[arg(long, default_value_t = 0.5)]
        lr: f64,
        #[arg(long, default_value_t = 300)]
        epochs: usize,
        #[arg(long, default_value_t = 32)]
        batch: usize,
        #[arg(long, default_value_t = 300)]
        per_class: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write the training curve as CSV.
        #[arg(long)]
        curve: Option<PathBuf>,
    },
    /// Label a raster with a trained model.
    Predict {
        #[arg(long, value_enum)]
        kind: ModelKind,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        /// Segment id raster; required for CART.
        #[arg(long)]
        segments: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Confusion matrix, producer/user/overall accuracy and kappa.
    Assess {
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        pred: PathBuf,
        /// Reference pixels drawn per class; ignored with --all-pixels.
        #[arg(long, default_value_t = 200)]
        per_class: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        all_pixels: bool,
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long)]
        confusion: Option<PathBuf>,
    },
    /// Per-class perimeter, area and area ratio.
    Stats {
        #[arg(long)]
        labels: PathBuf,
        /// Defaults to 1 m.
        #[arg(long, default_value_t = 1.0)]
        pixel_size: f64,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Render a label raster as a PNG.
    Render {
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the full comparison on a synthetic scene and write a report bundle.
    RunPaper {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 42, conflicts_with = "config")]
        seed: u64,
        #[arg(long, default_value_t = 512, conflicts_with = "config")]
        size: usize,
        /// Replay a bundle's manifest.txt.
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn load_raster(path: &Path) -> Result<MultibandRaster> {
    read_raster(path).with_context(|| format!("reading raster {}", path.display()))
}

fn load_labels(path: &Path) -> Result<LabelRaster> {
    read_labels(path).with_context(|| format!("reading labels {}", path.display()))
}

fn load_segmentation(segments: &Path, raster: &MultibandRaster) -> Result<Segmentation> {
    let ids = load_raster(segments)?;
    Segmentation::from_id_raster(&ids, raster).with_context(|| format!("rebuilding segments from {}", segments.display()))
}

fn write_text(path: &Path, body: &str) -> Result<()> {
    fs::write(path, body).with_context(|| format!("writing {}", path.display()))
}

/// Land-cover ids when every name is a known class, otherwise 1..=n in order.
fn legend_for(names: &[String]) -> BTreeMap<u32, String> {
    let known: Option<Vec<u32>> = names.iter().map(|n| LandClass::from_name(n).map(LandClass::id)).collect();
    match known {
        Some(ids) => ids.into_iter().zip(names.iter().cloned()).collect(),
        None => names.iter().cloned().enumerate().map(|(i, n)| (i as u32 + 1, n)).collect(),
    }
}

fn id_of(legend: &BTreeMap<u32, String>, name: &str) -> Result<u32> {
    legend
        .iter()
        .find(|(_, n)| *n == name)
        .map(|(id, _)| *id)
        .with_context(|| format!("class `{name}` has no id"))
}

const FALLBACK_COLORS: [[u8; 3]; 8] = [
    [228, 26, 28],
    [55, 126, 184],
    [77, 175, 74],
    [152, 78, 163],
    [255, 127, 0],
    [255, 255, 51],
    [166, 86, 40],
    [247, 129, 191],
];

fn palette_for(legend: &BTreeMap<u32, String>) -> Palette {
    legend
        .iter()
        .enumerate()
        .map(|(i, (&id, name))| {
            let color = LandClass::from_name(name)
                .map(LandClass::color)
                .unwrap_or(FALLBACK_COLORS[i % FALLBACK_COLORS.len()]);
            (id, color)
        })
        .collect()
}

fn load_rules(spec: &str) -> Result<RuleSet> {
    if spec == "builtin" {
        return Ok(builtin_qinhuai_ruleset());
    }
    let text = fs::read_to_string(spec).with_context(|| format!("reading rule set {spec}"))?;
    parse_ruleset(&text).with_context(|| format!("parsing rule set {spec}"))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenScene {
            out,
            width,
            height,
            seed,
            noise,
        } => {
            let mut spec = SceneSpec::standard(width, height, seed);
            spec.noise_level = noise;
            let (raster, truth) = generate_scene(&spec).context("generating scene")?;
            fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            write_raster(&raster, out.join("scene"))?;
            write_labels(&truth, out.join("truth"))?;
            fs::write(out.join("truth.png"), render_class_map(&truth, &LandClass::palette())?)?;
            println!("wrote {}x{} scene to {}", width, height, out.display());
        }
        Command::Segment {
            input,
            out,
            seg,
            merge_log,
        } => {
            let raster = load_raster(&input)?;
            let params = seg.params(raster.band_count());
            let s = segment(&raster, &params).context("segmenting")?;
            write_raster(&s.id_raster()?, &out)?;
            if let Some(path) = merge_log {
                write_text(&path, &s.merge_log_csv())?;
            }
            println!("{} segments", s.segment_count());
        }
        Command::Esp {
            input,
            scales,
            shape,
            compactness,
            out,
        } => {
            let raster = load_raster(&input)?;
            let template = SegParams {
                scale: 1.0,
                shape_weight: shape,
                compactness_weight: compactness,
                band_weights: vec![1.0; raster.band_count()],
            };
            let rows = esp_scan(&raster, &scales, &template)?;
            let mut csv = String::from("scale,segments,local_variance,rate_of_change\n");
            for r in rows {
                csv.push_str(&format!("{},{},{},{}\n", r.scale, r.segments, r.local_variance, r.rate_of_change));
            }
            match out {
                Some(path) => write_text(&path, &csv)?,
                None => print!("{csv}"),
            }
        }
        Command::Features { input, segments, out } => {
            let raster = load_raster(&input)?;
            let seg = load_segmentation(&segments, &raster)?;
            let objects = compute_features(&raster, &seg)?;
            write_text(&out, &features_csv(&objects))?;
            println!("{} objects", objects.len());
        }
        Command::Classify {
            input,
            segments,
            rules,
            out,
            trace,
        } => {
            let raster = load_raster(&input)?;
            let seg = load_segmentation(&segments, &raster)?;
            let rules = load_rules(&rules)?;
            let objects = compute_features(&raster, &seg)?;
            let decisions = classify(&objects, &rules);
            let legend = legend_for(&rules.classes);
            let labels = decisions
                .iter()
                .map(|d| Ok((d.segment_id, id_of(&legend, &d.class)?)))
                .collect::<Result<BTreeMap<_, _>>>()?;
            write_labels(&rasterize_labels(&seg, &labels, &legend)?, &out)?;
            if let Some(path) = trace {
                write_text(&path, &trace_csv(&decisions))?;
            }
            println!("classified {} objects", decisions.len());
        }
        Command::TrainCart {
            input,
            segments,
            truth,
            out,
            max_depth,
            min_leaf,
            per_class,
            seed,
        } => {
            let raster = load_raster(&input)?;
            let truth = load_labels(&truth)?;
            let seg = load_segmentation(&segments, &raster)?;
            let objects = compute_features(&raster, &seg)?;
            let majority = majority_labels(&seg, &truth);
            let samples = object_samples(&objects, &majority, truth.legend(), per_class, seed)?;
            let tree = cart_train(&samples, max_depth, min_leaf)?;
            write_text(&out, &tree.to_toml()?)?;
            println!(
                "trained on {} objects: depth {}, {} leaves",
                samples.len(),
                tree.depth(),
                tree.leaf_count()
            );
        }
        Command::TrainMlp {
            input,
            truth,
            out,
            hidden,
            lr,
            epochs,
            batch,
            per_class,
            seed,
            curve,
        } => {
            let raster = load_raster(&input)?;
            let truth = load_labels(&truth)?;
            let samples = pixel_samples(&raster, &truth, per_class, seed)?;
            let config = MlpConfig {
                hidden,
                learning_rate: lr,
                epochs,
                batch,
                seed,
            };
            let model = mlp_train(&samples, &config)?;
            write_text(&out, &model.to_toml()?)?;
            if let Some(path) = curve {
                write_text(&path, &model.training_curve_csv())?;
            }
            if let Some(last) = model.history.last() {
                println!("epoch {}: loss {:.4}, train accuracy {:.4}", last.epoch, last.loss, last.train_acc);
            }
        }
        Command::Predict {
            kind,
            model,
            input,
            segments,
            out,
        } => {
            let raster = load_raster(&input)?;
            let text = fs::read_to_string(&model).with_context(|| format!("reading {}", model.display()))?;
            let labels = match kind {
                ModelKind::Mlp => {
                    let m = Mlp::from_toml(&text).context("parsing MLP model")?;
                    mlp_predict(&m, &raster, &legend_for(&m.classes))?
                }
                ModelKind::Cart => {
                    let Some(segments) = segments else {
                        bail!("--segments is required for CART prediction");
                    };
                    let tree = CartTree::from_toml(&text).context("parsing CART model")?;
                    let legend = legend_for(&tree.classes);
                    let seg = load_segmentation(&segments, &raster)?;
                    let objects = compute_features(&raster, &seg)?;
                    let by_segment = objects
                        .iter()
                        .map(|o| Ok((o.segment_id, id_of(&legend, cart_predict(&tree, &o.feature_vector())?)?)))
                        .collect::<Result<BTreeMap<_, _>>>()?;
                    rasterize_labels(&seg, &by_segment, &legend)?
                }
            };
            write_labels(&labels, &out)?;
        }
        Command::Assess {
            truth,
            pred,
            per_class,
            seed,
            all_pixels,
            csv,
            confusion: confusion_out,
        } => {
            let truth = load_labels(&truth)?;
            let pred = load_labels(&pred)?;
            let mask = (!all_pixels).then(|| stratified_mask(&truth, per_class, seed));
            let cm = confusion(&truth, &pred, mask.as_deref())?;
            let m = metrics(&cm)?;
            print!("{}", accuracy_table(&[("Accuracy", &m)])?);
            if let Some(path) = csv {
                write_text(&path, &m.to_csv())?;
            }
            if let Some(path) = confusion_out {
                write_text(&path, &cm.to_csv())?;
            }
        }
        Command::Stats { labels, pixel_size, csv } => {
            let labels = load_labels(&labels)?;
            let stats = class_stats(&labels, pixel_size)?;
            print!("{}", stats.to_text());
            if let Some(path) = csv {
                write_text(&path, &stats.to_csv())?;
            }
        }
        Command::Render { labels, out } => {
            let labels = load_labels(&labels)?;
            let png = render_class_map(&labels, &palette_for(labels.legend()))?;
            fs::write(&out, png).with_context(|| format!("writing {}", out.display()))?;
        }
        Command::RunPaper { out, seed, size, config } => {
            let config = match config {
                Some(path) => {
                    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
                    PaperConfig::from_toml(&text).with_context(|| format!("parsing manifest {}", path.display()))?
                }
                None => PaperConfig::for_scene(SceneSpec::standard(size, size, seed), seed),
            };
            let run = run_paper(&config)?;
            let files = run.write_bundle(&out)?;
            print!("{}", run.table3()?);
            println!("wrote {} files to {}", files.len(), out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
