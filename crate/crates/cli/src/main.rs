use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use amralign::extract::{read_alignments, write_alignments, AlignmentSet, ExtractConfig, Standard};
use amralign::graph::{linearize, read_amr_corpus};
use amralign::loss::{fit_mix, grad_check, mean_loss};
use amralign::matrix::{load_matrix_dir, AttentionBundle, MixWeights};
use amralign::metrics::{evaluate, per_sentence_series, wilcoxon_signed_rank, SeriesStat, Significance};
use amralign::pipeline::{self, parse_layer_range, Reduction, Sentence};
use amralign::rules::RuleSet;
use amralign::segment::MweLexicon;
use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "amralign", version, about = "Span/unit alignments for AMR graphs from attention matrices")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Extract alignments from attention matrices.
    Align(AlignArgs),
    /// Score predicted alignments against gold.
    Eval(EvalArgs),
    /// Layer x head correlation of attention with gold alignments.
    Correlate(CorrelateArgs),
    /// Evaluate the guided loss and check its gradients; optionally fit head weights.
    LossCheck(LossArgs),
    /// Print the pointer-token linearization of every graph.
    Linearize {
        #[arg(long)]
        amr: PathBuf,
    },
}

#[derive(Args)]
struct CorpusArgs {
    /// AMR graphs in Penman notation.
    #[arg(long)]
    amr: PathBuf,
    /// One sentence per line, in graph order (default: `# ::snt` metadata).
    #[arg(long)]
    sents: Option<PathBuf>,
    /// Span segmentation, one line per sentence, spans separated by `|`.
    #[arg(long)]
    spans: Option<PathBuf>,
    /// Multiword expressions, one per line, for span segmentation.
    #[arg(long)]
    lexicon: Option<PathBuf>,
    /// Directory of AAM1 bundles.
    #[arg(long)]
    matrices: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum StandardArg {
    Isi,
    Leamr,
}

impl From<StandardArg> for Standard {
    fn from(s: StandardArg) -> Self {
        match s {
            StandardArg::Isi => Standard::Isi,
            StandardArg::Leamr => Standard::Leamr,
        }
    }
}

#[derive(Args)]
struct AlignArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    /// Layers to sum, `lo:hi` (half-open) or a single layer.
    #[arg(long, default_value = "0:4")]
    layers: String,
    /// Comma-separated heads to keep.
    #[arg(long, value_delimiter = ',')]
    heads: Option<Vec<usize>>,
    /// Learned head weights (JSON); replaces the layer sum.
    #[arg(long)]
    mix_weights: Option<PathBuf>,
    /// Disable the structural rules.
    #[arg(long, conflicts_with = "rules")]
    no_rules: bool,
    /// Enabled rules, e.g. `r1,r2,r6`.
    #[arg(long)]
    rules: Option<String>,
    #[arg(long, value_enum, default_value = "leamr")]
    standard: StandardArg,
    /// Output file (default: stdout).
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ReportArg {
    Text,
    Json,
}

#[derive(Clone, Copy, ValueEnum)]
enum SeriesArg {
    Matches,
    F1,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gold: PathBuf,
    #[arg(long, value_enum, default_value = "leamr")]
    standard: StandardArg,
    #[arg(long, value_enum, default_value = "text")]
    report: ReportArg,
    /// Other predictions to compare against with the signed-rank test.
    #[arg(long)]
    compare: Vec<PathBuf>,
    /// Per-sentence statistic for the signed-rank test.
    #[arg(long, value_enum, default_value = "matches")]
    series: SeriesArg,
}

#[derive(Args)]
struct CorrelateArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    #[arg(long)]
    gold: PathBuf,
    #[arg(long, value_enum, default_value = "leamr")]
    standard: StandardArg,
    /// SVG heatmap.
    #[arg(short, long, default_value = "heatmap.svg")]
    output: PathBuf,
    /// CSV grid.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct LossArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    #[arg(long)]
    gold: PathBuf,
    #[arg(long, value_enum, default_value = "leamr")]
    standard: StandardArg,
    #[arg(long, default_value_t = 3)]
    layer: usize,
    /// Heads under supervision (default: all).
    #[arg(long, value_delimiter = ',')]
    heads: Option<Vec<usize>>,
    /// Fit the head weights by gradient descent.
    #[arg(long)]
    fit: bool,
    #[arg(long, default_value_t = 500)]
    steps: usize,
    #[arg(long, default_value_t = 0.1)]
    lr: f64,
    /// Finite-difference step.
    #[arg(long, default_value_t = 1e-5)]
    eps: f64,
    /// Write the (fitted) head weights here as JSON.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn write_out(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn lines(path: &Path) -> Result<Vec<String>> {
    Ok(read(path)?.lines().map(str::to_string).collect())
}

fn load_corpus(c: &CorpusArgs) -> Result<(Vec<Sentence>, BTreeMap<String, AttentionBundle>)> {
    let entries = read_amr_corpus(&read(&c.amr)?).with_context(|| format!("parsing {}", c.amr.display()))?;
    let sents = c.sents.as_deref().map(lines).transpose()?;
    let spans = c.spans.as_deref().map(lines).transpose()?;
    let lexicon = match &c.lexicon {
        Some(p) => MweLexicon::parse(&read(p)?),
        None => MweLexicon::default(),
    };
    let sentences = pipeline::build_sentences(entries, sents.as_deref(), spans.as_deref(), &lexicon)?;
    let bundles = load_matrix_dir(&c.matrices)?;
    Ok((sentences, bundles))
}

fn load_alignments(path: &Path, standard: Standard) -> Result<Vec<AlignmentSet>> {
    read_alignments(&read(path)?, standard).with_context(|| format!("parsing {}", path.display()))
}

fn align(a: AlignArgs) -> Result<()> {
    let (sentences, bundles) = load_corpus(&a.corpus)?;
    let layers = parse_layer_range(&a.layers).map_err(anyhow::Error::msg)?;
    let reduction = match &a.mix_weights {
        Some(p) => {
            let weights: MixWeights =
                serde_json::from_str(&read(p)?).with_context(|| format!("parsing {}", p.display()))?;
            let layer = match weights.layer {
                Some(l) => l,
                None if layers.len() == 1 => layers.start,
                None => bail!("mix weights name no layer; pass a single layer with --layers"),
            };
            Reduction::Mix { layer, weights }
        }
        None => Reduction::LayerSum { layers, heads: a.heads.clone() },
    };
    let rules = if a.no_rules {
        RuleSet::none()
    } else {
        match &a.rules {
            Some(r) => r.parse().map_err(anyhow::Error::msg)?,
            None => RuleSet::all(),
        }
    };
    let cfg = ExtractConfig { standard: a.standard.into(), rules };
    let sets = pipeline::align_corpus(&sentences, &bundles, &reduction, &cfg)?;
    log::info!("aligned {} sentences", sets.len());
    write_out(a.output.as_deref(), &write_alignments(&sets, cfg.standard))
}

fn eval(a: EvalArgs) -> Result<()> {
    let standard = a.standard.into();
    let pred = load_alignments(&a.pred, standard)?;
    let gold = load_alignments(&a.gold, standard)?;
    let mut report = evaluate(&pred, &gold)?;
    let stat = match a.series {
        SeriesArg::Matches => SeriesStat::Matches,
        SeriesArg::F1 => SeriesStat::F1,
    };
    for other in &a.compare {
        let alt = load_alignments(other, standard)?;
        let x = per_sentence_series(&pred, &gold, stat)?;
        let y = per_sentence_series(&alt, &gold, stat)?;
        let w = wilcoxon_signed_rank(&x, &y)?;
        report.significance.push(Significance {
            against: other.display().to_string(),
            statistic: w.statistic,
            p: w.p,
            n: w.n,
        });
    }
    match a.report {
        ReportArg::Text => print!("{}", report.to_text()),
        ReportArg::Json => println!("{}", serde_json::to_string_pretty(&report)?),
    }
    Ok(())
}

fn correlate(a: CorrelateArgs) -> Result<()> {
    let (sentences, bundles) = load_corpus(&a.corpus)?;
    let gold = load_alignments(&a.gold, a.standard.into())?;
    let hm = pipeline::correlate_corpus(&sentences, &bundles, &gold)?;
    write_out(Some(&a.output), &hm.to_svg())?;
    if let Some(csv) = &a.csv {
        write_out(Some(csv), &hm.to_csv())?;
    }
    if let Some((l, h, r)) = hm.best() {
        println!("best head: layer {l} head {h}, r = {r:.4}");
    }
    Ok(())
}

fn loss_check(a: LossArgs) -> Result<()> {
    let (sentences, bundles) = load_corpus(&a.corpus)?;
    let gold = load_alignments(&a.gold, a.standard.into())?;
    let n_heads = bundles
        .values()
        .next()
        .map(|b| b.n_heads)
        .context("no attention bundles found")?;
    let subset = a.heads.clone().unwrap_or_else(|| (0..n_heads).collect());
    let mut weights = MixWeights::uniform(n_heads, &subset)?;
    weights.layer = Some(a.layer);
    let data = pipeline::loss_dataset(&sentences, &bundles, &gold, a.layer, &weights)?;
    if data.is_empty() {
        bail!("no sentence has supervised decoder positions");
    }
    println!("sentences: {}", data.len());
    println!("mean loss: {:.6}", mean_loss(&data, &weights)?);
    let mut worst = 0.0f64;
    for inp in &data {
        worst = worst.max(grad_check(inp, a.eps)?);
    }
    println!("max gradient relative error: {worst:.3e}");
    if a.fit {
        weights = fit_mix(&data, &weights, a.steps, a.lr)?;
        println!("mean loss after {} steps: {:.6}", a.steps, mean_loss(&data, &weights)?);
        let s = weights.softmax();
        let shown: Vec<String> = subset.iter().map(|&h| format!("{h}:{:.3}", s[h])).collect();
        println!("head weights: {}", shown.join(" "));
        println!("gamma: {:.4}", weights.gamma);
    }
    if let Some(p) = &a.output {
        write_out(Some(p), &format!("{}\n", serde_json::to_string_pretty(&weights)?))?;
    }
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Align(a) => align(a),
        Command::Eval(a) => eval(a),
        Command::Correlate(a) => correlate(a),
        Command::LossCheck(a) => loss_check(a),
        Command::Linearize { amr } => {
            let entries = read_amr_corpus(&read(&amr)?).with_context(|| format!("parsing {}", amr.display()))?;
            for (i, e) in entries.iter().enumerate() {
                let id = e.id().map_or_else(|| format!("s{i}"), str::to_string);
                println!("{id}\t{}", linearize(&e.graph).text());
            }
            Ok(())
        }
    }
}
