#include <CLI11.hpp>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "flowmix/cli.hpp"

namespace {

struct CommonArgs {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
};

int dispatch(const std::string& command, const CommonArgs& args) {
  std::ifstream is(args.config_path);
  if (!is) {
    std::cerr << "i/o error: cannot open config " << args.config_path << "\n";
    return flowmix::cli::kExitIo;
  }
  std::ostringstream buf;
  buf << is.rdbuf();
  nlohmann::json config = nlohmann::json::parse(buf.str(), nullptr, false);
  if (config.is_discarded()) {
    std::cerr << "config error: " << args.config_path << " is not valid JSON\n";
    return flowmix::cli::kExitConfig;
  }
  flowmix::cli::apply_overrides(config, args.seed, args.out);
  return flowmix::cli::run_command(command, std::move(config));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Flow-Mixup multi-label classification kit"};
  app.require_subcommand(1);

  static const std::pair<const char*, const char*> commands[] = {
      {"generate", "generate a synthetic correlated multi-label dataset"},
      {"corrupt", "apply label corruption to a dataset file"},
      {"train", "train a classifier with the configured regularizer"},
      {"eval", "evaluate a checkpoint: per-class AUC/F1 and macro scores"},
      {"diagnose", "k-means R2 feature-distribution probe per hidden state"},
      {"compare", "performance-ratio vs independent-ratio tables"},
  };

  std::vector<std::pair<std::string, std::shared_ptr<CommonArgs>>> parsed;
  for (const auto& [name, desc] : commands) {
    auto args = std::make_shared<CommonArgs>();
    CLI::App* sub = app.add_subcommand(name, desc);
    sub->add_option("--config", args->config_path, "JSON config file")->required();
    sub->add_option("--seed", [args](const CLI::results_t& r) {
      args->seed = std::stoull(r[0]);
      return true;
    }, "override the config seed");
    sub->add_option("--out", [args](const CLI::results_t& r) {
      args->out = r[0];
      return true;
    }, "override the output path");
    parsed.emplace_back(name, args);
  }

  CLI11_PARSE(app, argc, argv);

  for (const auto& [name, args] : parsed) {
    if (app.get_subcommand(name)->parsed()) return dispatch(name, *args);
  }
  std::cerr << "config error: no subcommand\n";
  return flowmix::cli::kExitConfig;
}
