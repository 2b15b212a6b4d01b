#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "gdc/experiment.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Distributional control of sequence models on enumerable spaces"};
  app.fallthrough();
  app.require_subcommand(0, 1);

  std::string config_path;
  std::string output;
  std::optional<std::uint64_t> seed_override;
  std::string subcommand;
  app.add_option("--config", config_path, "Experiment JSON file")->required()->check(CLI::ExistingFile);
  app.add_option("--output", output, "Output directory (overrides the config and $GDC_OUTPUT_ROOT)");
  app.add_option("--seed-override", seed_override, "Replace the configured seed");
  app.add_option("--subcommand", subcommand, "Subcommand when not given positionally")
      ->check(CLI::IsMember({"fit", "train", "ablation", "oracle", "eval"}));

  app.add_subcommand("fit", "Fit lambda and write the EBM report");
  app.add_subcommand("train", "Fit, train the configured method and evaluate");
  app.add_subcommand("ablation", "Compare adaptivity variants across seeds");
  app.add_subcommand("oracle", "Exact Z, moments, KL and Pythagorean residuals by enumeration");
  app.add_subcommand("eval", "Metrics of a persisted model");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  std::string command = subcommand;
  for (const auto* sub : app.get_subcommands()) {
    if (!command.empty() && command != sub->get_name()) {
      std::cerr << "error: conflicting subcommands '" << command << "' and '" << sub->get_name() << "'\n";
      return 2;
    }
    command = sub->get_name();
  }
  if (command.empty()) {
    std::cerr << "error: a subcommand is required (fit, train, ablation, oracle, eval)\n";
    return 2;
  }

  try {
    auto config = gdc::load_config(config_path);
    if (seed_override) config.seed = *seed_override;
    const auto out =
        gdc::resolve_output(config, output.empty() ? std::nullopt : std::optional<std::filesystem::path>(output));
    gdc::RunManifest manifest;
    if (command == "fit") {
      manifest = gdc::run_fit(config, out);
    } else if (command == "train") {
      manifest = gdc::run_train(config, out);
    } else if (command == "ablation") {
      manifest = gdc::run_ablation(config, out);
    } else if (command == "oracle") {
      manifest = gdc::run_oracle(config, out);
    } else {
      manifest = gdc::run_eval(config, out);
    }
    std::cout << manifest.artifacts.at("manifest.json").string() << "\n";
    return 0;
  } catch (const gdc::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return gdc::exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
