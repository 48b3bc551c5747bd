#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "cli/commands.hpp"

namespace {

struct Common {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::string weights;
  std::string manifest;
  std::string perturb;
};

epistemic::cli::RunConfig resolve(const Common& c) {
  auto cfg = epistemic::cli::load_config(c.config);
  if (c.seed) {
    cfg.seed = *c.seed;
    cfg.overrides["seed"] = *c.seed;
  }
  if (!c.out.empty()) {
    cfg.out = c.out;
    cfg.overrides["out"] = c.out;
  }
  return cfg;
}

std::filesystem::path or_default(const std::string& given, const std::filesystem::path& fallback) {
  return given.empty() ? fallback : std::filesystem::path(given);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Epistemic classifier toolkit"};
  app.require_subcommand(1);
  Common c;

  auto add_common = [&c](CLI::App* sub) {
    sub->add_option("--config", c.config, "Run configuration (JSON)")->required()->check(CLI::ExistingFile);
    sub->add_option("--out", c.out, "Output directory (overrides config)");
    sub->add_option("--seed", c.seed, "Seed (overrides config)");
  };
  auto add_weights = [&c](CLI::App* sub) {
    sub->add_option("--weights", c.weights, "Weights file (default <out>/weights.json)");
  };
  auto add_manifest = [&c](CLI::App* sub) {
    sub->add_option("--manifest", c.manifest, "Manifest file (default <out>/manifest.json)");
  };

  auto* train = app.add_subcommand("train", "Train the base network");
  add_common(train);
  auto* build = app.add_subcommand("build", "Index training activations and select parameters");
  add_common(build);
  add_weights(build);
  auto* infer = app.add_subcommand("infer", "Classify CSV rows read from stdin");
  add_common(infer);
  add_weights(infer);
  add_manifest(infer);
  auto* eval = app.add_subcommand("eval", "Evaluate against the softmax baseline");
  add_common(eval);
  add_weights(eval);
  add_manifest(eval);
  eval->add_option("--perturb", c.perturb, "Perturbation kind:magnitude, e.g. gaussian:0.5");
  auto* sweep = app.add_subcommand("sweep", "Sweep the radius on the test split");
  add_common(sweep);
  add_weights(sweep);

  CLI11_PARSE(app, argc, argv);

  try {
    auto cfg = resolve(c);
    const auto weights = or_default(c.weights, cfg.out / "weights.json");
    const auto manifest = or_default(c.manifest, cfg.out / "manifest.json");
    if (train->parsed()) {
      epistemic::cli::run_train(cfg);
    } else if (build->parsed()) {
      epistemic::cli::run_build(cfg, weights);
    } else if (infer->parsed()) {
      epistemic::cli::run_infer(cfg, weights, manifest, std::cin, std::cout);
    } else if (eval->parsed()) {
      std::optional<epistemic::PerturbationSpec> p;
      if (!c.perturb.empty()) {
        p = epistemic::parse_perturbation(c.perturb);
        cfg.overrides["perturb"] = c.perturb;
      }
      epistemic::cli::run_eval(cfg, weights, manifest, p);
    } else if (sweep->parsed()) {
      epistemic::cli::run_sweep(cfg, weights);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
