#include "myo/myo.hpp"

#include <CLI11.hpp>

#include <iostream>

namespace {

using namespace myo;

int report(const std::exception& e, int code) {
  std::cerr << "error: " << e.what() << "\n";
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Time2Vec transformer for two-channel sEMG gesture recognition"};
  app.require_subcommand(1);

  std::string spec_file, out_dir, csv_root, config_file, manifest_file, schema_name, checkpoint_file, run_dir,
      pretrained, stage;
  std::optional<std::uint64_t> seed_override;
  std::optional<int> adapt_epochs;
  std::vector<int> dims;
  int rate = kDefaultSampleRate, runs = 100, warmup = 10;
  bool all_folds = false;

  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  synth->add_option("--spec", spec_file, "synthetic spec file (defaults apply when omitted)");
  synth->add_option("--out", out_dir, "output directory (must be empty or absent)")->required();
  synth->add_option("--seed", seed_override, "override master_seed");

  auto* ingest = app.add_subcommand("ingest", "convert a CSV tree {root}/S{n}/{GESTURE}_{k}.csv");
  ingest->add_option("--csv-root", csv_root, "CSV root directory")->required();
  ingest->add_option("--out", out_dir, "output directory")->required();
  ingest->add_option("--rate", rate, "sampling rate in Hz");

  auto* validate = app.add_subcommand("validate", "check a config, spec or manifest; or print a schema");
  validate->add_option("--config", config_file, "experiment config file");
  validate->add_option("--spec", spec_file, "synthetic spec file");
  validate->add_option("--manifest", manifest_file, "dataset manifest");
  validate->add_option("--schema", schema_name, "print the schema: experiment | spec")
      ->check(CLI::IsMember({"experiment", "spec"}));

  auto* train = app.add_subcommand("train", "two-stage training per fold");
  train->add_option("--config", config_file)->required();
  train->add_option("--stage", stage, "'1-only' stops after stage 1")->check(CLI::IsMember({"1-only", "both"}));
  train->add_flag("--all-folds", all_folds, "run every fold and write the fold aggregate");

  auto* sweep = app.add_subcommand("ablate-dt2v", "d_t2v sweep under concat fusion");
  sweep->add_option("--config", config_file)->required();
  sweep->add_option("--dims", dims, "override ablate.dims")->delimiter(',');
  sweep->add_flag("--all-folds", all_folds);

  auto* variants = app.add_subcommand("ablate-variants", "Time2Vec vs standard PE vs no PE with Wilcoxon tests");
  variants->add_option("--config", config_file)->required();
  variants->add_flag("--all-folds", all_folds);

  auto* adapt = app.add_subcommand("adapt", "fine-tune stage-2 checkpoints on the held-out subject");
  adapt->add_option("--config", config_file)->required();
  adapt->add_option("--pretrained", pretrained, "run directory holding the stage-2 checkpoints");
  adapt->add_option("--adapt-epochs", adapt_epochs, "override train.adapt.epochs_max");
  adapt->add_flag("--all-folds", all_folds);

  auto* profile = app.add_subcommand("profile", "single-window forward latency");
  profile->add_option("--checkpoint", checkpoint_file)->required();
  profile->add_option("--runs", runs, "timed forwards")->check(CLI::PositiveNumber);
  profile->add_option("--warmup", warmup, "untimed warmup forwards")->check(CLI::NonNegativeNumber);
  profile->add_option("--out", out_dir, "also write the report to this JSON file");

  auto* exporter = app.add_subcommand("export", "write plot-ready CSVs from a run directory");
  exporter->add_option("--run-dir", run_dir)->required();
  exporter->add_option("--out", out_dir, "destination (defaults to the run directory)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    auto load_cfg = [&] {
      ExperimentConfig cfg = load_experiment(config_file);
      if (all_folds) cfg.folds = "all";
      return cfg;
    };

    if (synth->parsed()) {
      SyntheticSpec spec = spec_file.empty() ? SyntheticSpec{} : synthetic_spec_from_kv(read_kv(spec_file));
      if (seed_override) spec.master_seed = *seed_override;
      const DatasetManifest m = generate_synthetic(spec, out_dir);
      std::cout << "wrote " << m.trial_count() << " trials to " << out_dir << "\n";
    } else if (ingest->parsed()) {
      const DatasetManifest m = ingest_csv_tree(csv_root, out_dir, rate);
      std::cout << "ingested " << m.trial_count() << " trials into " << out_dir << "\n";
    } else if (validate->parsed()) {
      if (!schema_name.empty())
        std::cout << render_schema(schema_name == "spec" ? synthetic_schema() : experiment_schema());
      if (!config_file.empty()) {
        load_experiment(config_file);
        std::cout << config_file << ": ok\n";
      }
      if (!spec_file.empty()) {
        synthetic_spec_from_kv(read_kv(spec_file));
        std::cout << spec_file << ": ok\n";
      }
      if (!manifest_file.empty()) {
        const DatasetManifest m = load_dataset(manifest_file);
        std::cout << manifest_file << ": ok, " << m.trial_count() << " trials\n";
      }
      if (schema_name.empty() && config_file.empty() && spec_file.empty() && manifest_file.empty())
        throw ConfigError("validate needs --config, --spec, --manifest or --schema");
    } else if (train->parsed()) {
      const ExperimentConfig cfg = load_cfg();
      const TrainSummary s = run_train(cfg, output_root(cfg), {stage == "1-only"});
      for (const auto& m : s.fold_metrics) {
        const char* key = m.contains("stage2") ? "stage2" : "stage1";
        std::cout << "fold " << m["fold"]["fold"] << " " << key << " ms_test macro-F1 "
                  << m[key]["ms_test"]["macro_f1"].get<double>() << "\n";
      }
      if (s.aggregate)
        std::cout << "aggregate macro-F1 " << s.aggregate->macro.mean << " +/- " << s.aggregate->macro.se << "\n";
      std::cout << "artifacts in " << s.run_dir.string() << "\n";
    } else if (sweep->parsed()) {
      ExperimentConfig cfg = load_cfg();
      if (!dims.empty()) cfg.ablate_dims = dims;
      const auto out = run_ablate_dt2v(cfg, output_root(cfg));
      for (const auto& r : out["rows"])
        std::cout << "d_t2v " << r["d_t2v"] << " macro-F1 " << r["mean_f1"] << " +/- " << r["se"] << "\n";
    } else if (variants->parsed()) {
      const ExperimentConfig cfg = load_cfg();
      const auto out = run_ablate_variants(cfg, output_root(cfg));
      for (const auto& r : out["rows"])
        std::cout << r["variant"].get<std::string>() << " params " << r["params"] << " stage2 macro-F1 "
                  << r["stage2"]["macro"]["mean"] << " +/- " << r["stage2"]["macro"]["se"] << "\n";
      std::cout << out["wilcoxon"].dump() << "\n";
    } else if (adapt->parsed()) {
      const ExperimentConfig cfg = load_cfg();
      AdaptOptions opt;
      opt.pretrained_run = pretrained;
      opt.epochs_override = adapt_epochs;
      const auto out = run_adapt(cfg, output_root(cfg), opt);
      for (const auto& f : out["folds"])
        std::cout << "fold " << f["fold"] << " macro-F1 pre " << f["pre"]["macro_f1"] << " post "
                  << f["post"]["macro_f1"] << "\n";
    } else if (profile->parsed()) {
      if (!fs::exists(checkpoint_file)) throw ConfigError("checkpoint " + checkpoint_file + " does not exist");
      const Checkpoint ck = load_checkpoint(checkpoint_file);
      const LatencyReport r = profile_latency(ck.params, ck.config, runs, warmup);
      nlohmann::json j = r.to_json();
      j["config"] = ck.config.to_json();
      std::cout << j.dump(2) << "\n";
      if (!out_dir.empty()) write_json(out_dir, j);
    } else if (exporter->parsed()) {
      const ExportResult r = run_export(run_dir, out_dir.empty() ? fs::path(run_dir) : fs::path(out_dir));
      for (const auto& p : r.written) std::cout << "wrote " << p.string() << "\n";
    }
  } catch (const Error& e) {
    return report(e, static_cast<int>(e.category()));
  } catch (const fs::filesystem_error& e) {
    return report(e, static_cast<int>(ErrorCategory::data));
  } catch (const std::exception& e) {
    return report(e, static_cast<int>(ErrorCategory::config));
  }
  return 0;
}
