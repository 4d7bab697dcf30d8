//! One function per subcommand. Each writes its artifacts and a manifest
//! under `out_dir`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use modflow::chem::{parse_smiles, profile, write_smiles, ExternalScorer, Scorer};
use modflow::data::{gen_community_small, load_edge_list_file, load_smiles_file};
use modflow::eval::{
    canonical_set, histograms, mmd_histograms, molecule_metrics, node_distribution_match, reconstruction_rate, Metric,
    MetricReport, Statistic,
};
use modflow::graph::{read_edge_lists, write_edge_list};
use modflow::nn::Checkpoint;
use modflow::rl::{finetune_constrained, finetune_property, IterationRecord, ResultRow};
use modflow::sampler::generate_batch;
use modflow::train::train_with;
use modflow::{Alphabet, DiscreteFlowModel, LabeledGraph};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

const CHECKPOINT_FILE: &str = "model.ckpt";
/// Largest node count of the training data, kept so generic-graph sampling
/// can default its node cap from the checkpoint alone.
const MAX_NODES_KEY: &str = "data.max_nodes";

/// Hex SHA-256 of `bytes` framed as a git blob object.
pub fn content_hash(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(format!("blob {}\0", bytes.len()).as_bytes());
    hasher.update(bytes);
    hasher.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

struct Run<'a> {
    command: &'static str,
    config: &'a RunConfig,
    out_dir: PathBuf,
}

impl<'a> Run<'a> {
    fn new(command: &'static str, config: &'a RunConfig) -> CliResult<Self> {
        let out_dir = PathBuf::from(config.get("out_dir"));
        fs::create_dir_all(&out_dir)?;
        Ok(Self { command, config, out_dir })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    fn write(&self, name: &str, contents: impl AsRef<[u8]>) -> CliResult<PathBuf> {
        let path = self.path(name);
        fs::write(&path, contents)?;
        Ok(path)
    }

    /// The manifest is itself a config file: the command and checkpoint hash
    /// sit in comments, followed by every key with its effective value.
    fn manifest(&self, checkpoint: Option<&Path>) -> CliResult<()> {
        let mut text = format!("# modflow run manifest\n# command={}\n", self.command);
        if let Some(path) = checkpoint {
            let _ = writeln!(text, "# checkpoint={}", path.display());
            let _ = writeln!(text, "# checkpoint.sha256={}", content_hash(&fs::read(path)?));
        }
        text.push_str(&self.config.render());
        self.write("manifest.txt", text)?;
        Ok(())
    }
}

/// Writes through a temporary file so an interrupted save keeps the previous
/// checkpoint.
fn save_checkpoint(model: &DiscreteFlowModel, max_nodes: Option<usize>, path: &Path) -> CliResult<()> {
    let mut ckpt = model.to_checkpoint(true);
    if let Some(n) = max_nodes {
        ckpt.metadata.insert(MAX_NODES_KEY.into(), n.to_string());
    }
    let tmp = path.with_extension("ckpt.tmp");
    ckpt.save(&tmp)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn load_checkpoint(config: &RunConfig) -> CliResult<(DiscreteFlowModel, Option<usize>)> {
    let path = config.required("checkpoint")?;
    let ckpt = Checkpoint::load(path)?;
    let max_nodes = ckpt.metadata.get(MAX_NODES_KEY).and_then(|v| v.parse().ok());
    Ok((DiscreteFlowModel::from_checkpoint(&ckpt)?, max_nodes))
}

fn is_edge_list(config: &RunConfig, path: &str) -> bool {
    match config.get("data.format") {
        "edges" => true,
        "smiles" => false,
        _ => !path.ends_with(".smi") && !path.ends_with(".smiles"),
    }
}

/// The configured dataset with its alphabet: SMILES use the configured
/// profile, edge lists the generic alphabet their header names.
fn load_dataset(config: &RunConfig) -> CliResult<(Vec<LabeledGraph>, Alphabet)> {
    let path = config.required("data")?;
    let (graphs, alphabet) = if is_edge_list(config, path) {
        load_edge_list_file(path)?
    } else {
        let alphabet = profile(config.get("alphabet"))?;
        (load_smiles_file(path, &alphabet)?, alphabet)
    };
    if graphs.is_empty() {
        return Err(CliError::Data(format!("{path} contains no graphs")));
    }
    Ok((graphs, alphabet))
}

fn same_alphabet(model: &Alphabet, data: &Alphabet) -> CliResult<()> {
    if model.node_symbols() != data.node_symbols() || model.edge_symbols() != data.edge_symbols() {
        return Err(CliError::Data(format!(
            "checkpoint alphabet `{}` does not match the data alphabet `{}`",
            model.name(),
            data.name()
        )));
    }
    Ok(())
}

fn render_graphs(graphs: &[LabeledGraph], alphabet: &Alphabet) -> String {
    if alphabet.is_molecular() {
        graphs.iter().map(|g| write_smiles(g, alphabet) + "\n").collect()
    } else {
        let (k, c) = (alphabet.num_node_types(), alphabet.num_edge_types());
        graphs.iter().map(|g| write_edge_list(g, k, c)).collect::<Vec<_>>().join("\n")
    }
}

fn samples_file(alphabet: &Alphabet) -> &'static str {
    if alphabet.is_molecular() {
        "samples.smi"
    } else {
        "samples.edges"
    }
}

fn iteration_log(records: &[IterationRecord]) -> String {
    let mut out = String::from("iteration,mean_score,mean_reward,loss\n");
    for r in records {
        let _ = writeln!(out, "{},{},{},{}", r.iteration, r.mean_score, r.mean_reward, r.loss);
    }
    out
}

fn build_scorer(config: &RunConfig) -> CliResult<Scorer> {
    match config.get("reward.scorer") {
        "external" => {
            let command = config.get("reward.command");
            if command.is_empty() {
                return Err(CliError::Usage("reward.scorer=external needs --scorer-cmd or reward.command".into()));
            }
            Ok(Scorer::External(ExternalScorer::spawn(command, config.get("reward.verb"), config.scorer_timeout()?)?))
        }
        name => Ok(Scorer::builtin(name)?),
    }
}

pub fn train(config: &RunConfig) -> CliResult<()> {
    let run = Run::new("train", config)?;
    let (data, alphabet) = load_dataset(config)?;
    let train_config = config.train(alphabet.is_molecular())?;
    let max_nodes = data.iter().map(LabeledGraph::num_nodes).max();
    let mut model = DiscreteFlowModel::new(alphabet, config.flow()?, config.seed())?;
    let ckpt_path = run.path(CHECKPOINT_FILE);
    let every = config.checkpoint_every();
    info!("training on {} graphs for {} epochs", data.len(), train_config.epochs);
    let result = train_with(&mut model, &data, &train_config, |m, record| {
        info!(
            "epoch {}: train nll {:.4}, held-out nll {}",
            record.epoch,
            record.train_nll,
            record.heldout_nll.map_or("n/a".into(), |v| format!("{v:.4}"))
        );
        if every > 0 && record.epoch % every == 0 {
            save_checkpoint(m, max_nodes, &ckpt_path).map_err(|e| modflow::Error::Checkpoint(e.to_string()))?;
        }
        Ok(())
    });
    let report = match result {
        Ok(report) => report,
        Err(e) => {
            if ckpt_path.exists() {
                log::error!("training stopped; the last good checkpoint is {}", ckpt_path.display());
            }
            return Err(e.into());
        }
    };
    save_checkpoint(&model, max_nodes, &ckpt_path)?;
    run.write("loss_curve.csv", report.loss_curve_csv())?;
    let mut summary = format!("train_size={}\nheldout_size={}\n", report.train_size, report.heldout_size);
    if let Some(v) = report.initial_heldout_nll {
        let _ = writeln!(summary, "initial_heldout_nll={v}");
    }
    for e in &report.epochs {
        let _ = writeln!(summary, "epoch.{}.train_nll={}", e.epoch, e.train_nll);
        if let Some(v) = e.heldout_nll {
            let _ = writeln!(summary, "epoch.{}.heldout_nll={v}", e.epoch);
        }
    }
    run.write("train_summary.txt", &summary)?;
    run.manifest(Some(&ckpt_path))?;
    println!("wrote {}", ckpt_path.display());
    Ok(())
}

pub fn sample(config: &RunConfig) -> CliResult<()> {
    let run = Run::new("sample", config)?;
    let (model, max_nodes) = load_checkpoint(config)?;
    let sample = config.sample(model.alphabet(), max_nodes)?;
    let episodes = generate_batch(&model, &sample, config.sample_count())?;
    let graphs: Vec<LabeledGraph> = episodes.into_iter().map(|e| e.graph).collect();
    let path = run.write(samples_file(model.alphabet()), render_graphs(&graphs, model.alphabet()))?;
    run.manifest(Some(Path::new(config.get("checkpoint"))))?;
    println!("wrote {} graphs to {}", graphs.len(), path.display());
    Ok(())
}

/// Reads graphs to evaluate. SMILES lines that do not parse into one
/// connected molecule stay in the set as empty graphs, which count as
/// invalid.
fn load_samples(path: &str, config: &RunConfig, alphabet: &Alphabet) -> CliResult<Vec<LabeledGraph>> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Data(format!("{path}: {e}")))?;
    if is_edge_list(config, path) {
        return Ok(read_edge_lists(&text)?.0);
    }
    Ok(text
        .lines()
        .filter_map(|l| l.split_whitespace().next())
        .filter(|t| !t.starts_with('#') && !t.eq_ignore_ascii_case("smiles"))
        .map(|t| parse_smiles(t, alphabet).ok().filter(LabeledGraph::is_connected).unwrap_or_default())
        .collect())
}

pub fn eval(config: &RunConfig) -> CliResult<()> {
    let run = Run::new("eval", config)?;
    let (reference, data_alphabet) = load_dataset(config)?;
    let model = match config.get("checkpoint") {
        "" => None,
        _ => Some(load_checkpoint(config)?),
    };
    let alphabet = match &model {
        Some((m, _)) => {
            same_alphabet(m.alphabet(), &data_alphabet)?;
            m.alphabet().clone()
        }
        None => data_alphabet,
    };
    let samples = match (config.get("eval.samples"), &model) {
        ("", Some((m, max_nodes))) => {
            let sample = config.sample(&alphabet, max_nodes.or(reference.iter().map(LabeledGraph::num_nodes).max()))?;
            generate_batch(m, &sample, config.sample_count())?.into_iter().map(|e| e.graph).collect()
        }
        ("", None) => return Err(CliError::Usage("eval needs eval.samples or a checkpoint to sample from".into())),
        (path, _) => load_samples(path, config, &alphabet)?,
    };
    if samples.is_empty() {
        return Err(CliError::Data("no samples to evaluate".into()));
    }

    let mut report = if alphabet.is_molecular() {
        molecule_metrics(&samples, &canonical_set(&reference, &alphabet), &alphabet)?
    } else {
        let mut report = MetricReport::default();
        let compared: Vec<LabeledGraph> = if config.eval_match_nodes() {
            let sizes: Vec<usize> = samples.iter().map(LabeledGraph::num_nodes).collect();
            let ref_sizes: Vec<usize> = reference.iter().map(LabeledGraph::num_nodes).collect();
            node_distribution_match(&sizes, reference.len().min(samples.len()), &ref_sizes)?
                .into_iter()
                .map(|i| samples[i].clone())
                .collect()
        } else {
            samples.clone()
        };
        for stat in Statistic::ALL {
            let value = mmd_histograms(&histograms(&compared, stat)?, &histograms(&reference, stat)?, 1.0)?;
            report.metrics.push(Metric {
                name: format!("mmd.{}", stat.name()),
                value,
                numerator: compared.len(),
                denominator: reference.len(),
            });
        }
        report
    };
    if let (Some((m, _)), true) = (&model, config.eval_reconstruct()) {
        report.metrics.push(reconstruction_rate(m, &reference)?);
    }
    report.metadata.insert("samples".into(), samples.len().to_string());
    report.metadata.insert("reference".into(), reference.len().to_string());
    report.metadata.insert("seed".into(), config.seed().to_string());
    run.write("metrics.txt", report.to_key_values())?;
    let checkpoint = model.is_some().then(|| PathBuf::from(config.get("checkpoint")));
    run.manifest(checkpoint.as_deref())?;
    print!("{}", report.to_table());
    Ok(())
}

pub fn opt_property(config: &RunConfig) -> CliResult<()> {
    let run = Run::new("opt-property", config)?;
    let (mut model, max_nodes) = load_checkpoint(config)?;
    let sample = config.sample(model.alphabet(), max_nodes)?;
    let mut scorer = build_scorer(config)?;
    let report =
        finetune_property(&mut model, &mut scorer, &config.reward()?, &config.ppo(false)?, &sample, config.top_k())?;
    let ckpt_path = run.path(CHECKPOINT_FILE);
    save_checkpoint(&model, max_nodes, &ckpt_path)?;
    run.write("rl_log.csv", iteration_log(&report.iterations))?;
    let top: String = report.top.iter().map(|(s, smiles)| format!("{s}\t{smiles}\n")).collect();
    run.write("top.txt", &top)?;
    run.manifest(Some(&ckpt_path))?;
    print!("{top}");
    Ok(())
}

pub fn opt_constrained(config: &RunConfig) -> CliResult<()> {
    let run = Run::new("opt-constrained", config)?;
    let (mut model, max_nodes) = load_checkpoint(config)?;
    let inputs_path = config.required("constrained.inputs")?;
    let inputs = load_smiles_file(inputs_path, model.alphabet())?;
    let sample = config.sample(model.alphabet(), max_nodes)?;
    let mut scorer = build_scorer(config)?;
    let report = finetune_constrained(
        &mut model,
        &inputs,
        &mut scorer,
        &config.reward()?,
        &config.ppo(true)?,
        &sample,
        &config.constrained()?,
    )?;
    let ckpt_path = run.path(CHECKPOINT_FILE);
    save_checkpoint(&model, max_nodes, &ckpt_path)?;
    run.write("rl_log.csv", iteration_log(&report.iterations))?;
    let rows: String = std::iter::once(ResultRow::HEADER.to_string())
        .chain(report.rows.iter().map(ResultRow::to_csv))
        .map(|l| l + "\n")
        .collect();
    run.write("results.csv", rows)?;
    let mut summary = String::from("delta,inputs,successes,success_rate,improvement_mean,improvement_std,similarity_mean,similarity_std\n");
    for s in &report.summaries {
        let _ = writeln!(
            summary,
            "{},{},{},{:.2},{:.4},{:.4},{:.4},{:.4}",
            s.delta,
            s.inputs,
            s.successes,
            s.success_rate(),
            s.improvement_mean,
            s.improvement_std,
            s.similarity_mean,
            s.similarity_std
        );
    }
    run.write("summary.csv", &summary)?;
    run.manifest(Some(&ckpt_path))?;
    print!("{summary}");
    Ok(())
}

pub fn gen_community(config: &RunConfig) -> CliResult<()> {
    let run = Run::new("gen-community", config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed());
    let graphs = gen_community_small(config.community_count(), &config.community(), &mut rng)?;
    let path = run.write("community.edges", render_graphs(&graphs, &Alphabet::generic(1, 1)?))?;
    run.manifest(None)?;
    println!("wrote {} graphs to {}", graphs.len(), path.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn content_hash_uses_blob_framing() {
        // `printf 'hello\n' | git hash-object --object-format=sha256 --stdin`
        assert_eq!(content_hash(b"hello\n"), "2cf8d83d9ee29543b34a87727421fdecb7e3f3a183d337639025de576db9ebb4");
    }
}
