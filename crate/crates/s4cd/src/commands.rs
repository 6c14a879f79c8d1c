//! Subcommand implementations. Results go to stdout, diagnostics to the
//! logger (stderr); every file written is logged with its path.

use std::io::Write as _;
use std::path::{Path, PathBuf};

use s4convd::dataio::{
    assemble_windows, clean, format_timestamp, load_csv, synth_dataset, temporal_split,
    write_dataset_csvs, JoinedRecord, WindowedDataset, DEFAULT_SPLIT_RATIOS,
};
use s4convd::model::{load_checkpoint, materialize_kernels, predict, save_checkpoint, ModelParams};
use s4convd::perf::{bench_tiling, occupancy, write_bench_csv, GpuSpec, KernelResourceUsage};
use s4convd::training::{evaluate, train, write_history_csv};
use s4convd::{Error, Result};

use crate::config::RunConfig;
use crate::SplitChoice;

const METER_CSV: &str = "meter.csv";
const WEATHER_CSV: &str = "weather.csv";
const METADATA_CSV: &str = "metadata.csv";
const CHECKPOINT_FILE: &str = "model.s4cd";

/// Loads and cleans the configured data source: either the deterministic
/// synthetic generator (`data = synth`) or a directory of CSVs.
fn load_records(config: &RunConfig) -> Result<Vec<JoinedRecord>> {
    let mut records = if config.data == "synth" {
        log::info!(
            "generating synthetic data: {} buildings x {} weeks (noise {}, seed {})",
            config.synth_buildings,
            config.synth_weeks,
            config.synth_noise,
            config.seed
        );
        synth_dataset(
            config.seed,
            config.synth_buildings,
            config.synth_weeks * 168,
            config.synth_noise,
        )
    } else {
        let dir = Path::new(&config.data);
        let report = load_csv(
            &dir.join(METER_CSV),
            &dir.join(WEATHER_CSV),
            &dir.join(METADATA_CSV),
        )?;
        report.records
    };
    clean(&mut records);
    Ok(records)
}

fn check_features(config: &RunConfig, input_dim: usize) -> Result<()> {
    if config.feature_set.dim() != input_dim {
        return Err(Error::InvalidArgument(format!(
            "feature set {} produces {} features but the model takes {}; \
             set feature_set / input_dim consistently",
            config.feature_set,
            config.feature_set.dim(),
            input_dim
        )));
    }
    Ok(())
}

pub fn default_checkpoint(config: &RunConfig) -> PathBuf {
    config.output_dir.join(CHECKPOINT_FILE)
}

pub fn cmd_train(config: &RunConfig) -> Result<()> {
    check_features(config, config.input_dim)?;
    let records = load_records(config)?;
    let split = temporal_split(&records, DEFAULT_SPLIT_RATIOS)?;
    let train_set = assemble_windows(&split.train, config.feature_set, config.seq_len, config.stride)?;
    let val_set = assemble_windows(&split.val, config.feature_set, config.seq_len, config.seq_len)?;
    log::info!(
        "training on {} windows, validating on {}",
        train_set.windows,
        val_set.windows
    );

    let (params, history) = train(
        &config.model_config(),
        &config.train_config(),
        &train_set,
        &val_set,
    )?;

    std::fs::create_dir_all(&config.output_dir)?;
    let checkpoint = default_checkpoint(config);
    save_checkpoint(&params, &checkpoint)?;
    log::info!("wrote checkpoint {}", checkpoint.display());
    let history_path = config.output_dir.join("history.csv");
    write_history_csv(&history, &history_path)?;
    log::info!("wrote history {}", history_path.display());

    let last = history.last().expect("training always runs at least one epoch");
    println!("final val RMSLE {:.6}", last.val_rmsle);
    Ok(())
}

/// Windows one split (or the whole dataset) back-to-back, without overlap.
fn eval_windows(
    config: &RunConfig,
    records: &[JoinedRecord],
    split: Option<SplitChoice>,
) -> Result<WindowedDataset> {
    let part_storage;
    let part = match split {
        None => records,
        Some(choice) => {
            part_storage = temporal_split(records, DEFAULT_SPLIT_RATIOS)?;
            match choice {
                SplitChoice::Train => &part_storage.train[..],
                SplitChoice::Val => &part_storage.val[..],
                SplitChoice::Test => &part_storage.test[..],
            }
        }
    };
    assemble_windows(part, config.feature_set, config.seq_len, config.seq_len)
}

fn load_model(config: &RunConfig, checkpoint: &Path) -> Result<(ModelParams, s4convd::model::ModelConfig)> {
    let params = load_checkpoint(checkpoint)?;
    let mut model_config = config.model_config();
    // Shape lives in the checkpoint; the config supplies everything else.
    model_config.input_dim = params.input_dim();
    model_config.measurement_dim = params.measurement_dim();
    model_config.state_dim = params.state_dim();
    model_config.output_dim = params.output_dim();
    params.validate(&model_config)?;
    Ok((params, model_config))
}

fn write_predictions_csv(
    path: &Path,
    data: &WindowedDataset,
    output_dim: usize,
    predictions: &[f64],
) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(file, "building_id,meter,timestamp,prediction")?;
    for (w, meta) in data.meta.iter().enumerate() {
        for j in 0..data.seq_len {
            // Inputs at hour `t` predict the reading at `t + 1`.
            let timestamp = format_timestamp(meta.start_epoch_hour + j as i64 + 1);
            let value = predictions[(w * data.seq_len + j) * output_dim];
            writeln!(
                file,
                "{},{},{},{}",
                meta.building_id, meta.meter, timestamp, value
            )?;
        }
    }
    file.flush()?;
    Ok(())
}

pub fn cmd_eval(config: &RunConfig, checkpoint: &Path, split: SplitChoice) -> Result<()> {
    let (params, model_config) = load_model(config, checkpoint)?;
    check_features(config, model_config.input_dim)?;
    let records = load_records(config)?;
    let data = eval_windows(config, &records, Some(split))?;
    log::info!("evaluating {} windows from the {split:?} split", data.windows);

    let outcome = evaluate(&params, &model_config, &data, config.batch_size)?;

    std::fs::create_dir_all(&config.output_dir)?;
    let path = config.output_dir.join("predictions.csv");
    write_predictions_csv(&path, &data, model_config.output_dim, &outcome.predictions)?;
    log::info!("wrote predictions {}", path.display());

    let split_name = match split {
        SplitChoice::Train => "train",
        SplitChoice::Val => "val",
        SplitChoice::Test => "test",
    };
    println!("{split_name} RMSLE {:.6}", outcome.rmsle);
    Ok(())
}

pub fn cmd_predict(config: &RunConfig, checkpoint: &Path) -> Result<()> {
    let (params, model_config) = load_model(config, checkpoint)?;
    check_features(config, model_config.input_dim)?;
    let records = load_records(config)?;
    let data = eval_windows(config, &records, None)?;
    data.validate_for(&model_config)?;
    if data.is_empty() {
        return Err(Error::Data("no complete windows to predict on".into()));
    }

    let mut predictions = Vec::with_capacity(data.windows * data.seq_len * data.output_dim);
    let indices: Vec<usize> = (0..data.windows).collect();
    for chunk in indices.chunks(config.batch_size.max(1)) {
        let (batch, _, _) = data.gather(chunk)?;
        predictions.extend(predict(&params, &model_config, &batch)?);
    }

    std::fs::create_dir_all(&config.output_dir)?;
    let path = config.output_dir.join("predictions.csv");
    write_predictions_csv(&path, &data, model_config.output_dim, &predictions)?;
    log::info!(
        "wrote {} predictions to {}",
        data.windows * data.seq_len,
        path.display()
    );
    Ok(())
}

pub fn cmd_kernel_dump(config: &RunConfig, checkpoint: &Path, out: &Path) -> Result<()> {
    let (params, model_config) = load_model(config, checkpoint)?;
    let kernels = materialize_kernels(&params, &model_config)?;

    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let mut file = std::io::BufWriter::new(std::fs::File::create(out)?);
    for h in 0..kernels.channels {
        let row = &kernels.values[h * kernels.len..(h + 1) * kernels.len];
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(file, "{}", line.join(","))?;
    }
    file.flush()?;
    log::info!(
        "wrote {} x {} kernel matrix to {}",
        kernels.channels,
        kernels.len,
        out.display()
    );
    Ok(())
}

pub fn cmd_bench_tiling(
    n: usize,
    l: usize,
    tiles: &[usize],
    repeats: usize,
    out: Option<&Path>,
) -> Result<()> {
    let rows = bench_tiling(n, l, tiles, repeats)?;
    println!("{:<8}{:>6}{:>8}{:>8}{:>14}{:>9}", "variant", "tile", "n", "l", "median_ns", "speedup");
    for row in &rows {
        let tile = row.tile.map(|t| t.to_string()).unwrap_or_else(|| "-".into());
        println!(
            "{:<8}{:>6}{:>8}{:>8}{:>14}{:>9.2}",
            row.variant, tile, row.n, row.l, row.median_ns, row.speedup
        );
    }
    if let Some(path) = out {
        write_bench_csv(&rows, path)?;
        log::info!("wrote benchmark results to {}", path.display());
    }
    Ok(())
}

pub fn cmd_occupancy(spec: &GpuSpec, usage: &KernelResourceUsage, json: bool) -> Result<()> {
    let report = occupancy(spec, usage)?;
    if json {
        println!("{}", report.render_json());
    } else {
        print!("{}", report.render_text());
    }
    Ok(())
}

pub fn cmd_make_synth(config: &RunConfig, out_dir: &Path) -> Result<()> {
    let records = synth_dataset(
        config.seed,
        config.synth_buildings,
        config.synth_weeks * 168,
        config.synth_noise,
    );
    std::fs::create_dir_all(out_dir)?;
    let meter = out_dir.join(METER_CSV);
    let weather = out_dir.join(WEATHER_CSV);
    let metadata = out_dir.join(METADATA_CSV);
    write_dataset_csvs(&records, &meter, &weather, &metadata)?;
    log::info!(
        "wrote {} records for {} buildings to {}, {} and {}",
        records.len(),
        config.synth_buildings,
        meter.display(),
        weather.display(),
        metadata.display()
    );
    Ok(())
}
