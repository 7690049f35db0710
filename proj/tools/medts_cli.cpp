// medts: train, evaluate and sweep reprogrammed-backbone models; convert and synthesize records.

#include "medts/ingest/record_io.hpp"
#include "medts/ingest/resample.hpp"
#include "medts/ingest/synth.hpp"
#include "medts/runner/config.hpp"
#include "medts/runner/experiment.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

namespace {

using namespace medts;

runner::ExperimentConfig load(const std::string& path, const std::string& output_dir) {
  auto c = runner::load_config(path);
  if (!output_dir.empty()) c.output_dir = output_dir;
  return c;
}

void print_report(const metrics::MetricReport& r) { std::cout << r.to_kv(); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"medts: frozen-backbone time series segmentation, boundary and anomaly detection"};
  app.require_subcommand(1);
  bool quiet = false;
  app.add_flag("-q,--quiet", quiet, "Do not mirror the run log to stderr");

  std::string config, output_dir, checkpoint, axis, arms_csv;

  auto* train = app.add_subcommand("train", "Train the heads and evaluate the test split");
  train->add_option("-c,--config", config, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
  train->add_option("-o,--output", output_dir, "Output directory (overrides output_dir)");

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on the test split");
  eval->add_option("-c,--config", config, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
  eval->add_option("-k,--checkpoint", checkpoint, "Checkpoint file (default <output_dir>/checkpoint.bin)");
  eval->add_option("-o,--output", output_dir, "Output directory (overrides output_dir)");

  auto* sweep = app.add_subcommand("sweep", "Run one training per arm of an ablation axis");
  sweep->add_option("-c,--config", config, "Base experiment config (JSON)")->required()->check(CLI::ExistingFile);
  sweep->add_option("-a,--axis", axis, "covariate_strategy, prompt_flags or backbone")
      ->required()
      ->check(CLI::IsMember(runner::sweep_axes()));
  sweep->add_option("--arms", arms_csv, "Comma-separated arm names (default: every arm of the axis)");
  sweep->add_option("-o,--output", output_dir, "Output directory (overrides output_dir)");

  std::string input, annotations, kind = "boundary_points", out_stem;
  double fs_hint = 0, target_fs = 0;
  auto* convert = app.add_subcommand("convert", "Convert a PhysioNet text export to a CSV record");
  convert->add_option("-i,--input", input, "Samples table written by rdsamp -c -v")->required()->check(CLI::ExistingFile);
  convert->add_option("-a,--annotations", annotations, "rdann listing (default <stem>.txt next to the input)");
  convert->add_option("--kind", kind, "Annotation kind")
      ->check(CLI::IsMember({"point_labels", "boundary_points", "anomaly_points"}));
  convert->add_option("--fs", fs_hint, "Sampling rate for sample-numbered exports");
  convert->add_option("--target-fs", target_fs, "Downsample to this rate");
  convert->add_option("-o,--output", out_stem, "Output stem (writes <stem>.csv, .ann, .json)")->required();

  ingest::SynthConfig synth_cfg;
  std::string synth_task = "semseg", synth_dir;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset directory");
  synth->add_option("-t,--task", synth_task, "Task")->check(CLI::IsMember({"semseg", "boundary", "anomaly"}));
  synth->add_option("-o,--output", synth_dir, "Output directory")->required();
  synth->add_option("--records", synth_cfg.n_records, "Number of records");
  synth->add_option("--length", synth_cfg.T, "Points per record");
  synth->add_option("--fs", synth_cfg.fs, "Sampling rate (Hz)");
  synth->add_option("--channels", synth_cfg.n_cov, "Channel count");
  synth->add_option("--noise", synth_cfg.noise_sd, "Gaussian noise sd");
  synth->add_option("--seed", synth_cfg.seed, "Seed");
  synth->add_option("--period", synth_cfg.period, "Cycle length (points)");
  synth->add_option("--jitter", synth_cfg.period_jitter, "Cycle length jitter (points)");
  synth->add_option("--phase", synth_cfg.phase_offset, "First cycle start (boundary)");
  synth->add_option("--anomalies", synth_cfg.anomalies_per_record, "Events per anomalous record");
  synth->add_option("--clean", synth_cfg.n_clean, "Anomaly-free records (-1: 80%)");

  CLI11_PARSE(app, argc, argv);

  try {
    runner::RunOptions opts;
    if (!quiet) opts.echo = &std::cerr;
    if (*train) {
      const auto c = load(config, output_dir);
      const auto a = runner::train(c, opts);
      print_report(a.report());
    } else if (*eval) {
      const auto c = load(config, output_dir);
      const std::filesystem::path ck =
          checkpoint.empty() ? std::filesystem::path(c.output_dir) / "checkpoint.bin" : std::filesystem::path(checkpoint);
      print_report(runner::evaluate(c, ck, opts).report);
    } else if (*sweep) {
      const auto c = load(config, output_dir);
      std::vector<std::string> arms;
      if (!arms_csv.empty()) arms = ingest::detail::split(arms_csv, ',');
      try {
        const auto res = runner::sweep(c, axis, arms, opts);
        std::cout << runner::sweep_table(res);
        std::cerr << "table: " << res.table_path.string() << "\n";
      } catch (const runner::SweepFailure& f) {
        std::cout << runner::sweep_table(f.partial());
        throw;
      }
    } else if (*convert) {
      std::optional<double> hint;
      if (fs_hint > 0) hint = fs_hint;
      auto w = ingest::read_wfdb_samples(input, hint);
      ingest::Record r;
      r.id = ingest::stem_path(input).filename().string();
      r.series = std::make_shared<MultivariateSeries>(std::move(w.values), w.fs, w.channel_names, r.id);
      const auto ann = annotations.empty() ? ingest::stem_path(input).string() + ".txt" : annotations;
      const auto k = ingest::parse_annotation_kind(kind);
      std::vector<ingest::WfdbAnnotation> listing;
      if (std::filesystem::exists(ann)) listing = ingest::read_wfdb_annotations(ann);
      r.annotations = ingest::annotations_from_wfdb(listing, k, r.series->length());
      r.annotations.validate(r.series->length());
      if (target_fs > 0) r = ingest::downsample(r, target_fs);
      ingest::save_record(out_stem, r);
      std::cout << "wrote " << out_stem << ".csv (" << r.series->length() << " x " << r.series->channels() << ", fs "
                << r.series->fs() << ")\n";
    } else if (*synth) {
      synth_cfg.task = parse_task(synth_task);
      const auto records = ingest::synth_dataset(synth_cfg);
      for (const auto& r : records) ingest::save_record(std::filesystem::path(synth_dir) / r.id, r);
      std::cout << "wrote " << records.size() << " records to " << synth_dir << "\n";
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
