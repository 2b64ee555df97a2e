use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::Context;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use stp_relex::corpus::{generate_synthetic, load_instances, write_instances, Instance, SyntheticConfig, TypeMapping};
use stp_relex::deptree::{read_conllu, write_conllu, ParsedSentence, PruneMode};
use stp_relex::encoder::{read_text_embeddings, EmbeddingTables, WordVocab};
use stp_relex::eval::{length_stats, p_at_n, write_pr_csv, LengthStats, PAtNReport};
use stp_relex::model::{transfer_init, train, EncodedBag, EpochMetrics, Extractor, ModelDims, Stage, StagePlan, Task, TrainPlan};
use stp_relex::numerics::{load_checkpoint, save_checkpoint};
use stp_relex::pipeline::{build_vocab, encode_test_bags, encode_training_bags, evaluate, prune_instances, score_bags};
use stp_relex::Extractor64;

use crate::config::{require, RunConfig};

/// Stored with every checkpoint so a model can be used on its own.
#[derive(Debug, Serialize, Deserialize)]
pub struct ModelMeta {
    pub stage: Stage,
    pub mode: PruneMode,
    pub dims: ModelDims,
    pub words: WordVocab,
    pub types_tsv: String,
}

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        }
    }
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn open(path: &Path) -> anyhow::Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path).with_context(|| format!("opening {}", path.display()))?))
}

/// One JSON line on stdout.
fn emit(value: &serde_json::Value) -> anyhow::Result<()> {
    let mut out = std::io::stdout().lock();
    writeln!(out, "{value}")?;
    Ok(())
}

fn read_mapping(path: &Path) -> anyhow::Result<TypeMapping> {
    Ok(TypeMapping::read_tsv(open(path)?, &path.display().to_string())?)
}

fn read_parses(path: &Path) -> anyhow::Result<BTreeMap<String, ParsedSentence>> {
    Ok(read_conllu(open(path)?, &path.display().to_string())?)
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> anyhow::Result<()> {
    let mut out = create(path)?;
    for r in rows {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn generate(config: &RunConfig, out: &Path) -> anyhow::Result<()> {
    let train = generate_synthetic(&config.synthetic);
    let test = generate_synthetic(&SyntheticConfig {
        seed: config.synthetic.seed.wrapping_add(1000),
        prefix: format!("{}x", config.synthetic.prefix),
        ..config.synthetic.clone()
    });
    for (split, corpus) in [("train", &train), ("test", &test)] {
        let mut w = create(&out.join(format!("{split}.jsonl")))?;
        write_instances(&mut w, &corpus.instances)?;
        w.flush()?;
        let mut w = create(&out.join(format!("{split}.conllu")))?;
        write_conllu(&mut w, &corpus.parses)?;
        w.flush()?;
    }
    let mut w = create(&out.join("types.tsv"))?;
    train.mapping.write_tsv(&mut w)?;
    w.flush()?;

    let run = RunConfig {
        seed: config.seed,
        synthetic: config.synthetic.clone(),
        ..RunConfig::desk()
    };
    std::fs::write(out.join("run.toml"), toml::to_string(&run)?)?;
    emit(&serde_json::json!({
            "out": out.display().to_string(),
            "train_instances": train.instances.len(),
            "test_instances": test.instances.len(),
            "relations": train.mapping.relations().len(),
        }))?;
    Ok(())
}

struct Split {
    name: &'static str,
    instances: PathBuf,
    parses: PathBuf,
}

fn splits(config: &RunConfig) -> [Split; 2] {
    [
        Split {
            name: "train",
            instances: config.paths.train.clone(),
            parses: config.paths.train_parses.clone(),
        },
        Split {
            name: "test",
            instances: config.paths.test.clone(),
            parses: config.paths.test_parses.clone(),
        },
    ]
}

fn prune_split(config: &RunConfig, split: &Split, mapping: &TypeMapping) -> anyhow::Result<(Vec<Instance>, Vec<Instance>)> {
    let original = load_instances(&split.instances, mapping.relations())?;
    let parses = if config.mode == PruneMode::None {
        BTreeMap::new()
    } else {
        read_parses(&split.parses)?
    };
    let pruned = prune_instances(&original, &parses, config.mode)?;
    Ok((original, pruned))
}

fn summary(s: &LengthStats) -> serde_json::Value {
    serde_json::json!({"count": s.count, "mean": s.mean, "median": s.median, "over_40": s.over_40})
}

pub fn prune(config: &RunConfig) -> anyhow::Result<()> {
    let all = splits(config);
    let mut inputs = vec![config.paths.types.as_path()];
    inputs.extend(all.iter().map(|s| s.instances.as_path()));
    require(&inputs)?;
    let mapping = read_mapping(&config.paths.types)?;
    for split in all {
        if config.mode != PruneMode::None {
            require(&[&split.parses])?;
        }
        let (original, pruned) = prune_split(config, &split, &mapping)?;
        let path = config.pruned_path(split.name);
        let mut w = create(&path)?;
        write_instances(&mut w, &pruned)?;
        w.flush()?;
        let (a, b) = length_stats(&original, &pruned)?;
        emit(&serde_json::json!({
                "split": split.name,
                "mode": config.mode.to_string(),
                "out": path.display().to_string(),
                "original": summary(&a),
                "pruned": summary(&b),
            }))?;
    }
    Ok(())
}

pub fn stats(config: &RunConfig) -> anyhow::Result<()> {
    require(&[&config.paths.types])?;
    let mapping = read_mapping(&config.paths.types)?;
    for split in splits(config) {
        if !split.instances.exists() {
            continue;
        }
        let (original, pruned) = prune_split(config, &split, &mapping)?;
        let (a, b) = length_stats(&original, &pruned)?;
        emit(&serde_json::json!({
                "split": split.name,
                "mode": config.mode.to_string(),
                "original": a,
                "pruned": b,
            }))?;
    }
    Ok(())
}

struct TrainingData {
    mapping: TypeMapping,
    vocab: WordVocab,
    bags: Vec<EncodedBag>,
}

fn training_data(config: &RunConfig, vocab: Option<WordVocab>) -> anyhow::Result<TrainingData> {
    let pruned = config.pruned_path("train");
    require(&[&config.paths.types, &pruned])
        .context("run `prune` first to produce the pruned training corpus")?;
    let mapping = read_mapping(&config.paths.types)?;
    let instances = load_instances(&pruned, mapping.relations())?;
    let vocab = vocab.unwrap_or_else(|| build_vocab(&instances));
    let bags = encode_training_bags(&instances, &mapping, &vocab, config.train.clip)?;
    Ok(TrainingData { mapping, vocab, bags })
}

fn fresh_model(config: &RunConfig, data: &TrainingData, tasks: &[Task], rng: &mut ChaCha8Rng) -> anyhow::Result<Extractor64> {
    let mut dims = ModelDims::from_config(
        &config.train,
        data.vocab.len(),
        data.mapping.head_types().len(),
        data.mapping.tail_types().len(),
        data.mapping.relations().len(),
    );
    dims.query_mode = config.query_mode;
    let embeddings = match &config.paths.embeddings {
        Some(p) => {
            require(&[p])?;
            Some(read_text_embeddings(open(p)?, &p.display().to_string())?)
        }
        None => None,
    };
    let tables = EmbeddingTables::init(
        &data.vocab,
        dims.word_dim,
        dims.pos_dim,
        dims.clip,
        embeddings.as_ref(),
        rng,
    )?;
    Ok(Extractor::new(dims, tables, tasks, rng)?)
}

fn plan(config: &RunConfig, stage: Stage, epochs: usize) -> TrainPlan {
    TrainPlan {
        stages: vec![StagePlan { stage, epochs }],
        config: config.train.clone(),
        na_ratio: config.na_ratio,
        val_fraction: config.val_fraction,
    }
}

fn save(path: &Path, model: &Extractor64, meta: &ModelMeta) -> anyhow::Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    save_checkpoint(path, &model.store, &serde_json::to_string(meta)?)?;
    Ok(())
}

fn types_tsv(mapping: &TypeMapping) -> anyhow::Result<String> {
    let mut buf = Vec::new();
    mapping.write_tsv(&mut buf)?;
    Ok(String::from_utf8(buf)?)
}

fn report(metrics: &[EpochMetrics]) {
    if let Some(m) = metrics.last() {
        eprintln!(
            "{} epoch {}: loss {:.4}, train_acc {:.3}{}",
            m.stage,
            m.epoch,
            m.loss,
            m.train_acc,
            m.val_loss.map(|v| format!(", val_loss {v:.4}")).unwrap_or_default()
        );
    }
}

pub fn pretrain(config: &RunConfig) -> anyhow::Result<()> {
    let data = training_data(config, None)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let model = fresh_model(config, &data, &[Task::Head, Task::Tail], &mut rng)?;
    let outcome = train(&plan(config, Stage::PretrainEntity, config.pretrain_epochs), &data.bags, model)?;
    let best = outcome.pretrained.unwrap_or(outcome.model);
    let meta = ModelMeta {
        stage: Stage::PretrainEntity,
        mode: config.mode,
        dims: best.dims.clone(),
        words: data.vocab.clone(),
        types_tsv: types_tsv(&data.mapping)?,
    };
    let out = config.paths.out.join("pretrain.ckpt");
    save(&out, &best, &meta)?;
    write_jsonl(&config.paths.out.join("pretrain.metrics.jsonl"), &outcome.metrics)?;
    report(&outcome.metrics);
    emit(&serde_json::json!({"checkpoint": out.display().to_string(), "epochs": outcome.metrics.len()}))?;
    Ok(())
}

fn load_model(path: &Path) -> anyhow::Result<(Extractor64, ModelMeta)> {
    require(&[path])?;
    let (store, meta) = load_checkpoint::<f64>(path)?;
    let meta: ModelMeta = serde_json::from_str(&meta).with_context(|| format!("metadata of {}", path.display()))?;
    Ok((
        Extractor {
            dims: meta.dims.clone(),
            store,
        },
        meta,
    ))
}

pub fn train_relation(config: &RunConfig, transfer: Option<&Path>) -> anyhow::Result<()> {
    let pretrained = transfer.map(load_model).transpose()?;
    let data = training_data(config, pretrained.as_ref().map(|(_, m)| m.words.clone()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = fresh_model(config, &data, &[Task::Relation], &mut rng)?;
    if let Some((pre, meta)) = &pretrained {
        if meta.mode != config.mode {
            eprintln!("warning: pretrained on {} corpus, training on {}", meta.mode, config.mode);
        }
        model = transfer_init(pre, &model)?;
    }
    let outcome = train(&plan(config, Stage::TrainRelation, config.train.epochs), &data.bags, model)?;
    let meta = ModelMeta {
        stage: Stage::TrainRelation,
        mode: config.mode,
        dims: outcome.model.dims.clone(),
        words: data.vocab.clone(),
        types_tsv: types_tsv(&data.mapping)?,
    };
    let out = config.paths.out.join("model.ckpt");
    save(&out, &outcome.model, &meta)?;
    write_jsonl(&config.paths.out.join("train.metrics.jsonl"), &outcome.metrics)?;
    report(&outcome.metrics);
    emit(&serde_json::json!({
            "checkpoint": out.display().to_string(),
            "transfer": transfer.map(|p| p.display().to_string()),
            "epochs": outcome.metrics.len(),
        }))?;
    Ok(())
}

fn test_bags(config: &RunConfig, meta: &ModelMeta) -> anyhow::Result<Vec<EncodedBag>> {
    let pruned = config.pruned_path("test");
    require(&[&pruned]).context("run `prune` first to produce the pruned test corpus")?;
    let mapping = TypeMapping::read_tsv(meta.types_tsv.as_bytes(), "checkpoint metadata")?;
    let instances = load_instances(&pruned, mapping.relations())?;
    Ok(encode_test_bags(&instances, mapping.relations(), &meta.words, meta.dims.clip))
}

pub fn eval(config: &RunConfig) -> anyhow::Result<()> {
    let (model, meta) = load_model(&config.paths.out.join("model.ckpt"))?;
    let bags = test_bags(config, &meta)?;
    let result = evaluate(&model, &bags, config.setting, config.seed)?;
    let tag = format!("{}.{}", config.mode, config.setting);
    let csv = config.paths.out.join(format!("pr.{tag}.csv"));
    let mut w = create(&csv)?;
    write_pr_csv(&mut w, &result.ranking, &result.curve)?;
    w.flush()?;
    let p = p_at_n(&result.ranking, &config.p_at_n)?;
    let report = PAtNReport::new(config.setting, p);
    let json = config.paths.out.join(format!("p_at_n.{tag}.json"));
    std::fs::write(&json, serde_json::to_string_pretty(&report)? + "\n")?;
    emit(&serde_json::json!({
            "mode": config.mode.to_string(),
            "setting": config.setting.to_string(),
            "pr_area": result.curve.area,
            "total_gold": result.curve.total_gold,
            "p_at_n": report,
            "pr_csv": csv.display().to_string(),
        }))?;
    Ok(())
}

pub fn predict(config: &RunConfig) -> anyhow::Result<()> {
    let (model, meta) = load_model(&config.paths.out.join("model.ckpt"))?;
    let bags = test_bags(config, &meta)?;
    let mapping = TypeMapping::read_tsv(meta.types_tsv.as_bytes(), "checkpoint metadata")?;
    let scored = score_bags(&model, &bags)?;
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    for b in scored {
        let best = (0..b.scores.len())
            .max_by(|&i, &j| b.scores[i].total_cmp(&b.scores[j]).then(j.cmp(&i)))
            .unwrap_or(0);
        let row = serde_json::json!({
            "head": b.head,
            "tail": b.tail,
            "relation": mapping.relations().label(best),
            "score": b.scores[best],
        });
        writeln!(out, "{row}")?;
    }
    Ok(())
}
