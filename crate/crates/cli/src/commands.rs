//! One function per CLI command. Each writes its artifacts under the run's
//! output directory and prints a short human summary to stdout.

use std::path::Path;

use bnb_core::balance::balance_dataset;
use bnb_core::error::{Error, Result};
use bnb_core::features::{
    correlation_matrix, encode, filter_outliers, fit_encoding, weekend_median_comparison,
    EncodingSpec, FeatureMatrix,
};
use bnb_core::ingest::{
    load_calendar, load_listings, load_listings_with, write_listings, DropReport, ListingRecord,
    LoadOptions,
};
use bnb_core::learners::HyperParams;
use bnb_core::pipelines::{
    baseline_stage, hypothesis1_run, hypothesis2_run, label_easy_hard, predict_price,
    search_stage, train_gate, PricePipelineModel,
};
use bnb_core::report::{
    emit_report, error_buckets, heatmap_grid, histogram, write_trees_curve_csv,
    BalanceSection, BaselineSection, Bins, CorrelationTable, EdaSection,
    GateSection, RunReport, SearchSection, WeekendTable, DEFAULT_BUCKET_THRESHOLDS,
};
use bnb_core::select::{format_top_trials, trees_curve};

use crate::config::RunConfig;

fn ensure_out(config: &RunConfig) -> Result<()> {
    std::fs::create_dir_all(&config.out).map_err(|e| Error::io(&config.out, e))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let json = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Schema(format!("serialization failed: {e}")))?;
    std::fs::write(path, json).map_err(|e| Error::io(path, e))
}

fn load_records(config: &RunConfig) -> Result<(Vec<ListingRecord>, DropReport)> {
    let path = config.listings_path()?;
    load_listings(path, &config.schema).map_err(|e| e.in_stage("ingest"))
}

/// Clean + outlier-filter + encode, the shared front of several commands.
fn prepare_matrix(
    config: &RunConfig,
) -> Result<(Vec<ListingRecord>, EncodingSpec, FeatureMatrix)> {
    let (records, _) = load_records(config)?;
    let (filtered, _) = filter_outliers(&records, &config.price.outlier_rules)
        .map_err(|e| e.in_stage("outlier_filter"))?;
    if filtered.is_empty() {
        return Err(
            Error::Domain("no records survive the outlier filter".into())
                .in_stage("outlier_filter"),
        );
    }
    let mut encoding = fit_encoding(&filtered);
    encoding.outlier_rules = config.price.outlier_rules;
    let matrix = encode(&filtered, &encoding).map_err(|e| e.in_stage("encode"))?;
    Ok((filtered, encoding, matrix))
}

fn new_report(config: &RunConfig, records: &[ListingRecord]) -> RunReport {
    let fingerprint = {
        let bytes = serde_json::to_vec(records).unwrap_or_default();
        format!("{:016x}", fnv_hex(&bytes))
    };
    RunReport::new(
        config.seed,
        fingerprint,
        serde_json::json!({
            "seed": config.seed,
            "n_iter": config.price.n_iter,
            "folds": config.price.k_folds,
            "fold_mode": config.price.fold_mode.to_string(),
            "target_per_listing": config.price.balance.target_per_listing,
            "gate_threshold_usd": config.price.gate_threshold_usd,
            "window": config.availability.window,
        }),
    )
}

fn fnv_hex(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

pub fn cmd_ingest(config: &RunConfig) -> Result<()> {
    ensure_out(config)?;
    let (records, report) = load_records(config)?;
    let cleaned_path = config.out.join("cleaned_listings.csv");
    write_listings(&cleaned_path, &records)?;
    write_json(&config.out.join("drop_report.json"), &report)?;
    println!(
        "ingest: {} records kept, {} dropped -> {}",
        records.len(),
        report.total(),
        cleaned_path.display()
    );

    if let Some(calendar_path) = &config.calendar {
        let (entries, cal_report) = load_calendar(calendar_path)?;
        write_json(&config.out.join("calendar_drop_report.json"), &cal_report)?;
        println!(
            "ingest: {} calendar entries kept, {} dropped",
            entries.len(),
            cal_report.total()
        );
    }
    Ok(())
}

pub fn cmd_eda(config: &RunConfig) -> Result<()> {
    ensure_out(config)?;
    let (records, _) = load_records(config)?;
    if records.is_empty() {
        return Err(Error::Domain("no records to explore".into()).in_stage("eda"));
    }
    let mut report = new_report(config, &records);

    let prices: Vec<f64> = records.iter().map(|r| r.price).collect();
    let log_prices: Vec<f64> = prices.iter().map(|p| p.ln_1p()).collect();
    let bedrooms: Vec<f64> = records.iter().map(|r| r.bedrooms as f64).collect();
    let max_bedrooms = bedrooms.iter().copied().fold(0.0, f64::max);
    let bedroom_edges: Vec<f64> = (0..=(max_bedrooms as usize + 1)).map(|v| v as f64).collect();

    // correlations over the encoded dense columns plus the log price
    let encoding = fit_encoding(&records);
    let matrix = encode(&records, &encoding).map_err(|e| e.in_stage("eda"))?;
    let mut columns: Vec<(String, Vec<f64>)> = encoding
        .dense_column_range()
        .map(|j| {
            (
                matrix.column_names[j].clone(),
                (0..matrix.n_rows()).map(|i| matrix.row(i)[j]).collect(),
            )
        })
        .collect();
    columns.push(("log_price".to_string(), matrix.target.clone()));
    let correlations = CorrelationTable {
        columns: columns.iter().map(|(n, _)| n.clone()).collect(),
        matrix: correlation_matrix(&columns),
    };

    let weekday_weekend = match &config.calendar {
        Some(path) => {
            let (entries, _) = load_calendar(path)?;
            let (imb_wd, imb_we) = weekend_median_comparison(&entries, false, config.seed)
                .map_err(|e| e.in_stage("eda"))?;
            let (bal_wd, bal_we) = weekend_median_comparison(&entries, true, config.seed)
                .map_err(|e| e.in_stage("eda"))?;
            Some(WeekendTable {
                imbalanced_weekday_median: imb_wd,
                imbalanced_weekend_median: imb_we,
                balanced_weekday_median: bal_wd,
                balanced_weekend_median: bal_we,
            })
        }
        None => None,
    };

    let lat: Vec<f64> = records.iter().map(|r| r.latitude).collect();
    let lon: Vec<f64> = records.iter().map(|r| r.longitude).collect();
    let mut listings: Vec<u64> = records.iter().map(|r| r.listing_id).collect();
    listings.sort_unstable();
    listings.dedup();

    report.eda = Some(EdaSection {
        rows: records.len(),
        listings: listings.len(),
        price_histogram: histogram(&prices, Bins::Count(30)).map_err(|e| e.in_stage("eda"))?,
        log_price_histogram: histogram(&log_prices, Bins::Count(30))
            .map_err(|e| e.in_stage("eda"))?,
        bedrooms_histogram: histogram(&bedrooms, Bins::Edges(bedroom_edges))
            .map_err(|e| e.in_stage("eda"))?,
        weekday_weekend,
        correlations,
        heatmap: heatmap_grid(&lat, &lon, &prices, 50).map_err(|e| e.in_stage("eda"))?,
    });

    let written = emit_report(&report, &config.out)?;
    println!(
        "eda: {} rows over {} listings; wrote {} files to {}",
        records.len(),
        listings.len(),
        written.len(),
        config.out.display()
    );
    if let Some(table) = &report.eda.as_ref().unwrap().weekday_weekend {
        println!(
            "eda: weekday/weekend medians imbalanced ({:.0}, {:.0}) balanced ({:.0}, {:.0})",
            table.imbalanced_weekday_median,
            table.imbalanced_weekend_median,
            table.balanced_weekday_median,
            table.balanced_weekend_median
        );
    }
    Ok(())
}

pub fn cmd_baseline(config: &RunConfig) -> Result<()> {
    ensure_out(config)?;
    let (records, _, matrix) = prepare_matrix(config)?;
    let outcome = baseline_stage(&matrix, config.price.k_folds, config.seed)
        .map_err(|e| e.in_stage("baseline"))?;
    let mut report = new_report(config, &records);
    report.baseline = Some(BaselineSection {
        rmse_usd: outcome.rmse_usd,
        mape_percent: outcome.mape_percent,
        error_buckets: error_buckets(&outcome.oof_errors_usd, &DEFAULT_BUCKET_THRESHOLDS),
        error_histogram: histogram(&outcome.oof_errors_usd, Bins::Count(20))
            .map_err(|e| e.in_stage("baseline"))?,
        design_columns: outcome.design_columns,
    });
    emit_report(&report, &config.out)?;
    println!(
        "baseline: RMSE {:.2} USD, MAPE {:.2}%",
        outcome.rmse_usd, outcome.mape_percent
    );
    let table = &report.baseline.as_ref().unwrap().error_buckets;
    for (t, p) in table.thresholds.iter().zip(&table.cumulative_percentages) {
        println!("baseline: <= {t:.0} USD | {p:.2}%");
    }
    Ok(())
}

pub fn cmd_gate(config: &RunConfig) -> Result<()> {
    ensure_out(config)?;
    let (records, _, matrix) = prepare_matrix(config)?;
    let outcome = baseline_stage(&matrix, config.price.k_folds, config.seed)
        .map_err(|e| e.in_stage("baseline"))?;
    let labels = label_easy_hard(
        &matrix.listing_ids,
        &outcome.oof_errors_usd,
        config.price.gate_threshold_usd,
    );
    let gate = train_gate(&matrix, &labels, &config.price.gate_params, config.seed)
        .map_err(|e| e.in_stage("gate"))?;
    let mut report = new_report(config, &records);
    report.gate = Some(GateSection {
        threshold_usd: config.price.gate_threshold_usd,
        easy_listings: gate.easy_listings,
        hard_listings: gate.hard_listings,
        holdout_accuracy: gate.holdout_accuracy,
        feature_distributions: gate.feature_distributions,
    });
    write_json(&config.out.join("gate_labels.json"), &labels)?;
    emit_report(&report, &config.out)?;
    println!(
        "gate: {} easy / {} hard listings at threshold {:.0} USD; holdout accuracy {:.3}",
        gate.easy_listings,
        gate.hard_listings,
        config.price.gate_threshold_usd,
        gate.holdout_accuracy
    );
    Ok(())
}

fn write_balanced_csv(path: &Path, matrix: &FeatureMatrix) -> Result<()> {
    let mut writer = csv_writer(path)?;
    let err = |e: csv::Error| Error::Csv {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let mut header = vec!["listing_id".to_string(), "log_price".to_string()];
    header.extend(matrix.column_names.iter().cloned());
    writer.write_record(&header).map_err(err)?;
    for i in 0..matrix.n_rows() {
        let mut row = vec![
            matrix.listing_ids[i].to_string(),
            matrix.target[i].to_string(),
        ];
        row.extend(matrix.row(i).iter().map(|v| v.to_string()));
        writer.write_record(&row).map_err(err)?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    csv::Writer::from_path(path).map_err(|e| Error::Csv {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

pub fn cmd_balance(config: &RunConfig) -> Result<()> {
    ensure_out(config)?;
    let (records, _, matrix) = prepare_matrix(config)?;
    let (balanced, summary) =
        balance_dataset(&matrix, &config.price.balance).map_err(|e| e.in_stage("balance"))?;
    let mut report = new_report(config, &records);
    report.balance = Some(BalanceSection {
        target_per_listing: config.price.balance.target_per_listing,
        summary: summary.clone(),
    });
    let csv_path = config.out.join("balanced.csv");
    write_balanced_csv(&csv_path, &balanced)?;
    emit_report(&report, &config.out)?;
    println!(
        "balance: {} listings -> {} rows ({} upsampled, {} downsampled, {} unchanged) -> {}",
        summary.listings,
        summary.rows_out,
        summary.groups_upsampled,
        summary.groups_downsampled,
        summary.groups_unchanged,
        csv_path.display()
    );
    Ok(())
}

pub fn cmd_tune(config: &RunConfig) -> Result<()> {
    ensure_out(config)?;
    let (records, _, matrix) = prepare_matrix(config)?;
    let (balanced, _) =
        balance_dataset(&matrix, &config.price.balance).map_err(|e| e.in_stage("balance"))?;
    let outcome =
        search_stage(&balanced, &config.price).map_err(|e| e.in_stage("search"))?;

    let mut report = new_report(config, &records);
    report.search = Some(SearchSection {
        n_iter: config.price.n_iter,
        k_folds: config.price.k_folds,
        fold_mode: config.price.fold_mode.to_string(),
        trials: outcome.trials.clone(),
        failed: outcome.failed.clone(),
    });
    emit_report(&report, &config.out)?;
    write_json(&config.out.join("search_ranked.json"), &outcome.trials)?;
    print!("{}", format_top_trials(&outcome, 3));
    Ok(())
}

pub fn cmd_train(config: &RunConfig) -> Result<()> {
    ensure_out(config)?;
    let (records, _) = load_records(config)?;
    let (model, report) = hypothesis1_run(&records, &config.price)?;
    let model_path = config.out.join("price_model.json");
    model.save(&model_path)?;
    emit_report(&report, &config.out)?;

    let final_stage = report.final_stage.as_ref().expect("train fills final");
    println!("train: chosen params {}", model.chosen_params.python_dict());
    println!(
        "train: group-cv RMSE {:.2} USD, MAPE {:.2}% | row-cv RMSE {:.2} USD",
        final_stage.group_cv.rmse_usd,
        final_stage.group_cv.mape_percent,
        final_stage.row_cv.rmse_usd
    );
    if let Some(search) = &report.search {
        let outcome = bnb_core::select::SearchOutcome {
            trials: search.trials.clone(),
            failed: search.failed.clone(),
        };
        print!("{}", format_top_trials(&outcome, 3));
    }
    println!("train: model -> {}", model_path.display());
    Ok(())
}

pub fn cmd_predict(config: &RunConfig, model_path: &Path, input: &Path) -> Result<()> {
    ensure_out(config)?;
    let model = PricePipelineModel::load(model_path)?;
    let (records, drops) = load_listings_with(
        input,
        &config.schema,
        LoadOptions {
            price_required: false,
        },
    )?;
    if drops.total() > 0 {
        let reasons: Vec<String> = drops
            .counts()
            .iter()
            .map(|(reason, count)| {
                format!(
                    "{reason} x{count} ({})",
                    drops.first_example(reason).unwrap_or("")
                )
            })
            .collect();
        return Err(Error::Domain(format!(
            "{} input rows are invalid and predictions must stay row-aligned: {}",
            drops.total(),
            reasons.join("; ")
        )));
    }
    let predictions = predict_price(&model, &records)?;

    let out_path = config.out.join("predictions.csv");
    let mut writer = csv_writer(&out_path)?;
    let err = |e: csv::Error| Error::Csv {
        path: out_path.clone(),
        message: e.to_string(),
    };
    writer
        .write_record(["listing_id", "price_usd", "gate_verdict", "note"])
        .map_err(err)?;
    for p in &predictions {
        writer
            .write_record([
                p.listing_id.to_string(),
                format!("{:.2}", p.price_usd),
                if p.easy { "easy" } else { "hard" }.to_string(),
                p.note.clone(),
            ])
            .map_err(err)?;
    }
    writer.flush().map_err(|e| Error::io(&out_path, e))?;
    println!(
        "predict: {} rows -> {}",
        predictions.len(),
        out_path.display()
    );
    Ok(())
}

pub fn cmd_availability(config: &RunConfig) -> Result<()> {
    ensure_out(config)?;
    let (records, _) = load_records(config)?;
    let (model, report) = hypothesis2_run(&records, &config.availability)?;
    let model_path = config.out.join("availability_model.json");
    model.save(&model_path)?;
    emit_report(&report, &config.out)?;

    // likelihood table over every (zipcode, room_type) pair seen in the data
    let mut pairs: Vec<(String, String)> = records
        .iter()
        .map(|r| (r.zipcode.clone(), r.room_type.clone()))
        .collect();
    pairs.sort();
    pairs.dedup();
    let table_path = config.out.join("availability_likelihoods.csv");
    let mut writer = csv_writer(&table_path)?;
    let err = |e: csv::Error| Error::Csv {
        path: table_path.clone(),
        message: e.to_string(),
    };
    writer
        .write_record(["zipcode", "room_type", "p_high_availability"])
        .map_err(err)?;
    for (zipcode, room_type) in &pairs {
        let p = model.likelihood(zipcode, room_type)?;
        writer
            .write_record([zipcode.clone(), room_type.clone(), p.to_string()])
            .map_err(err)?;
    }
    writer.flush().map_err(|e| Error::io(&table_path, e))?;

    let section = report.availability.as_ref().expect("availability section");
    println!(
        "availability: window {}d, NB accuracy {:.3} vs majority {:.3} ({})",
        section.label_window,
        section.nb_accuracy,
        section.majority_accuracy,
        section.majority_label
    );
    println!(
        "availability: model -> {}, likelihood table -> {}",
        model_path.display(),
        table_path.display()
    );
    Ok(())
}

pub fn cmd_trees_curve(config: &RunConfig) -> Result<()> {
    ensure_out(config)?;
    let (_, _, matrix) = prepare_matrix(config)?;
    let (balanced, _) =
        balance_dataset(&matrix, &config.price.balance).map_err(|e| e.in_stage("balance"))?;
    let params = HyperParams::default();
    let points = trees_curve(
        balanced.view(),
        &balanced.target,
        &params,
        &config.trees_list,
        config.price.k_folds,
        config.seed,
    )
    .map_err(|e| e.in_stage("trees_curve"))?;
    let path = config.out.join("trees_curve.csv");
    write_trees_curve_csv(&path, &points)?;
    for p in &points {
        println!(
            "trees-curve: n={} train RMSE {:.4}, test RMSE {:.4} (log-price units)",
            p.n_trees, p.train_rmse, p.test_rmse
        );
    }
    println!("trees-curve: -> {}", path.display());
    Ok(())
}
