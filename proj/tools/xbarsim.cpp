#include <iostream>

#include <CLI11.hpp>

#include "xbarsim/xbarsim.hpp"

namespace {

void add_common(CLI::App* cmd, xbarsim::RunConfig& cfg, std::string& bounds) {
  cmd->add_option("--model", cfg.model, "model directory (manifest.json + tensors)");
  cmd->add_option("--dataset", cfg.dataset, "mnist:IMAGES,LABELS or cifar10:BATCH[,BATCH...]");
  cmd->add_option("--bits", cfg.bits, "requantize the model to this width")->check(CLI::IsMember({8, 16}));
  cmd->add_option("--out", cfg.out, "output directory");
  cmd->add_option("--seed", cfg.seed, "seed for calibration sampling");
  cmd->add_option("--threads", cfg.threads, "worker threads")->check(CLI::PositiveNumber);
  cmd->add_option("--hw-config", cfg.hw_config, "hardware constants (JSON)");
  cmd->add_option("--bounds", bounds, "bounds for the estimate table")->check(CLI::IsMember({"worst", "stat"}));
  cmd->add_option("--lut", cfg.lut, "look-up table file (default <out>/lut_<bounds>.json)");
  cmd->add_option("--mode", cfg.mode, "termination policy")
      ->check(CLI::IsMember({"exact", "relu", "approx", "combined", "oracle"}));
  cmd->add_option("--threshold", cfg.threshold, "approximation threshold T")->check(CLI::NonNegativeNumber);
  cmd->add_option("--images-n", cfg.images_n, "evaluate the first n images (0 = all)");
  cmd->add_flag("--approx-fc", cfg.approx_fc, "also terminate early in FC layers");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bit-serial crossbar inference simulator with early termination"};
  app.set_config("--config", "", "TOML/INI file with option defaults; flags override it");
  app.require_subcommand(1);
  app.fallthrough();
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);

  xbarsim::RunConfig cfg;
  std::string bounds = "worst";
  std::vector<double> thresholds;
  std::vector<std::string> sweep_bounds;

  auto* stats = app.add_subcommand("stats", "calibrate bit probabilities and build look-up tables");
  add_common(stats, cfg, bounds);
  stats->add_option("--calib-n", cfg.calib_n, "calibration images");
  stats->add_option("--calib-dataset", cfg.calib_dataset, "calibration dataset (default --dataset)");

  auto* run = app.add_subcommand("run", "exact and reduced inference with hardware comparison");
  add_common(run, cfg, bounds);

  auto* sweep = app.add_subcommand("sweep", "threshold sweep per bounds mode");
  add_common(sweep, cfg, bounds);
  sweep->add_option("--thresholds", thresholds, "threshold list")
      ->delimiter(',')
      ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
  sweep->add_option("--sweep-bounds", sweep_bounds, "bounds modes to sweep")
      ->delimiter(',')
      ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll)
      ->check(CLI::IsMember({"worst", "stat", "oracle"}));

  auto* report = app.add_subcommand("report", "model-level ratios for given computation reductions");
  report->add_option("--benchmark", cfg.benchmark, "lenet5, cifarquick or all")
      ->check(CLI::IsMember({"lenet5", "cifarquick", "all"}));
  report->add_option("--bits", cfg.bits, "weight and activation width")->check(CLI::IsMember({8, 16}));
  report->add_option("--reduction", cfg.reduction, "CONV computation reduction in [0, 1)");
  report->add_option("--hw-config", cfg.hw_config, "hardware constants (JSON)");
  report->add_option("--out", cfg.out, "output directory");

  CLI11_PARSE(app, argc, argv);

  try {
    cfg.bounds = xbarsim::parse_bounds_mode(bounds);
    if (!thresholds.empty()) cfg.thresholds = thresholds;
    if (!sweep_bounds.empty()) {
      cfg.sweep_bounds.clear();
      for (const auto& b : sweep_bounds) cfg.sweep_bounds.push_back(xbarsim::parse_bounds_mode(b));
    }
    if (stats->parsed()) {
      const auto out = xbarsim::cmd_stats(cfg);
      std::cout << "calibrated on " << out.probabilities.calibration_images << " images; tables written to "
                << cfg.out.string() << "\n";
    } else if (run->parsed()) {
      const auto doc = xbarsim::cmd_run(cfg);
      std::cout << "accuracy exact " << doc["accuracy"]["exact"].get<double>() << ", reduced "
                << doc["accuracy"]["reduced"].get<double>() << "; CONV reduction "
                << doc["reduction"]["reduction_overall"].get<double>() << "; energy efficiency x"
                << doc["hardware"]["ratios"]["energy_efficiency"].get<double>() << ", throughput x"
                << doc["hardware"]["ratios"]["throughput"].get<double>() << "\n";
    } else if (sweep->parsed()) {
      const auto rows = xbarsim::cmd_sweep(cfg);
      for (const auto& r : rows)
        std::cout << xbarsim::to_string(r.bounds) << " T=" << r.threshold << " reduction " << r.reduction
                  << " accuracy " << r.accuracy << "\n";
    } else if (report->parsed()) {
      for (const auto& r : xbarsim::cmd_report(cfg))
        std::cout << r.benchmark << "-" << r.bits << " reduction " << r.reduction << ": energy efficiency x"
                  << r.comparison.energy_efficiency_ratio() << ", throughput x" << r.comparison.throughput_ratio()
                  << ", overhead " << 100.0 * r.comparison.reduced.overhead_share() << "%\n";
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
