#include "flowmix/cli.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <iostream>

#include "flowmix/checkpoint.hpp"
#include "flowmix/data.hpp"
#include "flowmix/gradcheck.hpp"
#include "flowmix/metrics.hpp"
#include "flowmix/network.hpp"
#include "flowmix/report.hpp"
#include "flowmix/rng.hpp"
#include "flowmix/training.hpp"

namespace flowmix::cli {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

// ---------------------------------------------------------------------------
// Strict config access
// ---------------------------------------------------------------------------

void require_keys(const json& obj, const std::string& context, std::initializer_list<const char*> allowed) {
  if (!obj.is_object()) throw ConfigError("config: " + context + " must be an object");
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    bool known = false;
    for (const char* k : allowed) {
      if (it.key() == k) {
        known = true;
        break;
      }
    }
    if (!known) throw ConfigError("config: unknown key '" + it.key() + "' in " + context);
  }
}

const json* find(const json& obj, const std::string& key) {
  auto it = obj.find(key);
  return it == obj.end() || it->is_null() ? nullptr : &*it;
}

double get_double(const json& obj, const std::string& key, double fallback) {
  const json* v = find(obj, key);
  if (!v) return fallback;
  if (!v->is_number()) throw ConfigError("config: " + key + " must be a number");
  return v->get<double>();
}

std::int64_t get_int(const json& obj, const std::string& key, std::int64_t fallback) {
  const json* v = find(obj, key);
  if (!v) return fallback;
  if (!v->is_number_integer()) throw ConfigError("config: " + key + " must be an integer");
  return v->get<std::int64_t>();
}

bool get_bool(const json& obj, const std::string& key, bool fallback) {
  const json* v = find(obj, key);
  if (!v) return fallback;
  if (!v->is_boolean()) throw ConfigError("config: " + key + " must be a boolean");
  return v->get<bool>();
}

std::string get_string(const json& obj, const std::string& key, const std::string& fallback) {
  const json* v = find(obj, key);
  if (!v) return fallback;
  if (!v->is_string()) throw ConfigError("config: " + key + " must be a string");
  return v->get<std::string>();
}

std::string need_string(const json& obj, const std::string& key, const std::string& context) {
  const json* v = find(obj, key);
  if (!v || !v->is_string()) throw ConfigError("config: " + context + " requires string key '" + key + "'");
  return v->get<std::string>();
}

std::uint64_t get_seed(const json& obj) {
  const json* v = find(obj, "seed");
  if (!v) return 0;
  if (!v->is_number_integer()) throw ConfigError("config: seed must be an integer");
  return v->get<std::uint64_t>();
}

void make_out_dir(const std::string& out) {
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw IoError("cannot create output directory " + out + ": " + ec.message());
}

void echo_config(const std::string& path, const json& resolved) { write_text_file(path, resolved.dump(2) + "\n"); }

// ---------------------------------------------------------------------------
// data / model / regularizer / train sections
// ---------------------------------------------------------------------------

struct DataSection {
  std::string path;
  bool do_split = false;
  SplitRatios ratios;
  std::uint64_t split_seed = 0;
  std::string part = "all";
  json resolved;
};

DataSection parse_data(const json& j, std::uint64_t default_seed, bool split_by_default) {
  require_keys(j, "data", {"path", "split"});
  DataSection out;
  out.path = need_string(j, "path", "data");
  out.resolved["path"] = out.path;
  const json* sp = find(j, "split");
  out.do_split = split_by_default || sp != nullptr;
  if (out.do_split) {
    json split_obj = sp ? *sp : json::object();
    require_keys(split_obj, "data.split", {"ratios", "seed", "part"});
    if (const json* r = find(split_obj, "ratios")) {
      if (!r->is_array() || r->size() != 3) throw ConfigError("config: data.split.ratios must be [train,valid,test]");
      out.ratios.train = (*r)[0].get<double>();
      out.ratios.valid = (*r)[1].get<double>();
      out.ratios.test = (*r)[2].get<double>();
    }
    out.split_seed = split_obj.contains("seed") ? split_obj["seed"].get<std::uint64_t>() : default_seed;
    out.part = get_string(split_obj, "part", out.part);
    if (out.part != "all" && out.part != "train" && out.part != "valid" && out.part != "test") {
      throw ConfigError("config: data.split.part must be one of all/train/valid/test");
    }
    out.resolved["split"] = {{"ratios", {out.ratios.train, out.ratios.valid, out.ratios.test}},
                             {"seed", out.split_seed},
                             {"part", out.part}};
  }
  return out;
}

struct LoadedData {
  Dataset full;
  std::optional<SplitResult> splits;

  const Dataset& part(const std::string& name) const {
    if (name == "all" || !splits) return full;
    if (name == "train") return splits->train;
    if (name == "valid") return splits->valid;
    return splits->test;
  }
};

LoadedData load_data(const DataSection& sec) {
  LoadedData out;
  out.full = load_dataset(sec.path);
  if (sec.do_split) out.splits = split(out.full, sec.ratios, sec.split_seed);
  return out;
}

std::vector<BlockSpec> parse_blocks(const json& model) {
  const json* blocks = find(model, "blocks");
  if (!blocks || !blocks->is_array() || blocks->empty()) {
    throw ConfigError("config: model.blocks must be a non-empty array");
  }
  std::vector<BlockSpec> out;
  for (const json& b : *blocks) {
    require_keys(b, "model.blocks[]", {"out", "kernel", "stride"});
    BlockSpec spec;
    spec.out = get_int(b, "out", 8);
    spec.kernel = get_int(b, "kernel", 3);
    spec.stride = get_int(b, "stride", 1);
    out.push_back(spec);
  }
  return out;
}

json blocks_to_json(const std::vector<BlockSpec>& blocks) {
  json arr = json::array();
  for (const auto& b : blocks) arr.push_back({{"out", b.out}, {"kernel", b.kernel}, {"stride", b.stride}});
  return arr;
}

NetworkPlan parse_plan(const json& model, const json* regularizer, const Dataset& data, json& resolved) {
  require_keys(model, "model", {"blocks"});
  NetworkPlan plan;
  plan.blocks = parse_blocks(model);
  plan.input_shape = data.feature_shape;
  plan.num_classes = data.num_classes();
  resolved["model"] = {{"blocks", blocks_to_json(plan.blocks)}};

  json reg = regularizer ? *regularizer : json::object();
  require_keys(reg, "regularizer", {"mode", "alpha", "op_forward", "mix_points", "manifold_include_input"});
  plan.mode = regularizer_from_name(get_string(reg, "mode", "erm"));
  plan.alpha = get_double(reg, "alpha", 3.0);
  plan.op_flag = get_bool(reg, "op_forward", true);
  plan.manifold_include_input = get_bool(reg, "manifold_include_input", false);
  if (const json* mp = find(reg, "mix_points")) {
    if (!mp->is_array()) throw ConfigError("config: regularizer.mix_points must be an array");
    for (const json& v : *mp) plan.mix_points.push_back(v.get<Index>());
  } else {
    switch (plan.mode) {
      case Regularizer::erm: break;
      case Regularizer::mixup: plan.mix_points = {0}; break;
      default:
        // Default insertion points: the third and fifth block inputs.
        if (plan.num_blocks() < 5) {
          throw ConfigError("config: regularizer.mix_points required for plans with fewer than 5 blocks");
        }
        plan.mix_points = {2, 4};
        break;
    }
  }
  plan.validate();
  resolved["regularizer"] = {{"mode", regularizer_name(plan.mode)},
                             {"alpha", plan.alpha},
                             {"op_forward", plan.op_flag},
                             {"mix_points", plan.mix_points},
                             {"manifold_include_input", plan.manifold_include_input}};
  return plan;
}

TrainConfig parse_train(const json* j, std::uint64_t seed, json& resolved) {
  json t = j ? *j : json::object();
  require_keys(t, "train", {"batch_size", "lr0", "beta1", "beta2", "eps", "plateau_patience", "plateau_factor",
                            "plateau_threshold", "epochs", "class_weights", "indicator"});
  TrainConfig cfg;
  cfg.batch_size = get_int(t, "batch_size", 32);
  cfg.lr0 = get_double(t, "lr0", 1e-4);
  cfg.beta1 = get_double(t, "beta1", 0.9);
  cfg.beta2 = get_double(t, "beta2", 0.999);
  cfg.eps = get_double(t, "eps", 1e-8);
  cfg.plateau_patience = static_cast<int>(get_int(t, "plateau_patience", 3));
  cfg.plateau_factor = get_double(t, "plateau_factor", 0.1);
  cfg.plateau_threshold = get_double(t, "plateau_threshold", 1e-4);
  cfg.epochs = static_cast<int>(get_int(t, "epochs", 0));
  cfg.class_weights = weight_mode_from_name(get_string(t, "class_weights", "inverse_proportion"));
  cfg.indicator = get_string(t, "indicator", "macro_f1");
  cfg.seed = seed;
  cfg.validate();
  resolved["train"] = {{"batch_size", cfg.batch_size},
                       {"lr0", cfg.lr0},
                       {"beta1", cfg.beta1},
                       {"beta2", cfg.beta2},
                       {"eps", cfg.eps},
                       {"plateau_patience", cfg.plateau_patience},
                       {"plateau_factor", cfg.plateau_factor},
                       {"plateau_threshold", cfg.plateau_threshold},
                       {"epochs", cfg.epochs},
                       {"class_weights", weight_mode_name(cfg.class_weights)},
                       {"indicator", cfg.indicator}};
  return cfg;
}

CorruptionSpec parse_corruption(const json& j, std::uint64_t seed, json& resolved) {
  require_keys(j, "corruption", {"rate", "scheme", "seed"});
  CorruptionSpec spec;
  spec.rate = get_double(j, "rate", 0.0);
  spec.scheme = corruption_scheme_from_name(get_string(j, "scheme", "per_sample_resample"));
  spec.seed = j.contains("seed") ? j["seed"].get<std::uint64_t>() : seed;
  spec.validate();
  resolved["corruption"] = {{"rate", spec.rate}, {"scheme", corruption_scheme_name(spec.scheme)}, {"seed", spec.seed}};
  return spec;
}

Eigen::MatrixXd parse_correlation(const json& gen, Index num_classes) {
  const json* corr = find(gen, "correlation");
  if (!corr) return Eigen::MatrixXd();
  Eigen::MatrixXd m = Eigen::MatrixXd::Identity(num_classes, num_classes);
  if (corr->is_array()) {
    if (static_cast<Index>(corr->size()) != num_classes) {
      throw ConfigError("config: generator.correlation matrix must have num_classes rows");
    }
    for (Index i = 0; i < num_classes; ++i) {
      const json& row = (*corr)[static_cast<std::size_t>(i)];
      if (!row.is_array() || static_cast<Index>(row.size()) != num_classes) {
        throw ConfigError("config: generator.correlation row " + std::to_string(i) + " malformed");
      }
      for (Index j = 0; j < num_classes; ++j) m(i, j) = row[static_cast<std::size_t>(j)].get<double>();
    }
    return m;
  }
  require_keys(*corr, "generator.correlation", {"base", "pairs"});
  const double base = get_double(*corr, "base", 0.0);
  for (Index i = 0; i < num_classes; ++i) {
    for (Index j = 0; j < num_classes; ++j) {
      if (i != j) m(i, j) = base;
    }
  }
  if (const json* pairs = find(*corr, "pairs")) {
    for (const json& p : *pairs) {
      if (!p.is_array() || p.size() != 3) throw ConfigError("config: correlation.pairs entries must be [a,b,rho]");
      const Index a = p[0].get<Index>(), b = p[1].get<Index>();
      if (a < 0 || b < 0 || a >= num_classes || b >= num_classes || a == b) {
        throw ConfigError("config: correlation pair (" + std::to_string(a) + "," + std::to_string(b) + ") out of range");
      }
      m(a, b) = m(b, a) = p[2].get<double>();
    }
  }
  return m;
}

std::string summarize_vector(const Eigen::VectorXd& v) {
  std::string s;
  for (Index i = 0; i < v.size(); ++i) {
    if (i) s += " ";
    s += fmt_double(v[i]);
  }
  return s;
}

Network restore_network(const json& model, const Dataset& data, const std::string& checkpoint_path,
                        std::uint64_t seed, json& resolved) {
  NetworkPlan plan = parse_plan(model, nullptr, data, resolved);
  std::mt19937_64 init_rng = substream(seed, "init");
  Network net = Network::build(plan, init_rng);
  net.load_params(load_checkpoint(checkpoint_path));
  return net;
}

json cluster_stats_json(const ClusterStats& s, const std::string& state_name) {
  json j;
  j["state"] = state_name;
  j["sst"] = s.sst;
  j["ssi"] = s.ssi;
  j["r2"] = s.r_squared;
  j["clusters"] = s.clusters;
  j["cluster_sizes"] = s.cluster_sizes;
  j["feature_size"] = s.feature_size;
  j["degenerate"] = s.degenerate;
  return j;
}

// Per-state features over a whole dataset, in eval mode: one [N x V_i]
// matrix per block output plus the model output probabilities.
std::vector<MatRM> collect_state_features(Network& net, const Dataset& data, std::vector<std::string>& state_names) {
  const Index n = data.size();
  const Index batch = 64;
  std::vector<MatRM> states;
  LabelMatrix probs(n, data.num_classes());
  std::vector<Index> idx;
  for (Index start = 0; start < n; start += batch) {
    const Index stop = std::min(start + batch, n);
    idx.clear();
    for (Index i = start; i < stop; ++i) idx.push_back(i);
    std::vector<MatRM> part;
    LabelMatrix p = net.forward_eval(data.batch_features(idx), &part);
    if (states.empty()) {
      for (const auto& m : part) states.emplace_back(n, m.cols());
    }
    for (std::size_t s = 0; s < part.size(); ++s) states[s].middleRows(start, stop - start) = part[s];
    probs.middleRows(start, stop - start) = p;
  }
  states.push_back(probs);
  state_names.clear();
  for (std::size_t s = 0; s + 1 < states.size(); ++s) state_names.push_back("block" + std::to_string(s) + "_out");
  state_names.push_back("output");
  return states;
}

}  // namespace

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

void cmd_generate(const json& config) {
  require_keys(config, "generate", {"seed", "out", "generator"});
  const std::uint64_t seed = get_seed(config);
  const std::string out = need_string(config, "out", "generate");
  json gen = config.contains("generator") ? config["generator"] : json::object();
  require_keys(gen, "generator",
               {"num_samples", "num_classes", "feature_shape", "correlation", "marginals", "crosstalk", "noise_sigma"});

  GeneratorConfig g;
  g.num_samples = get_int(gen, "num_samples", 5000);
  g.num_classes = get_int(gen, "num_classes", 12);
  if (const json* fs_ = find(gen, "feature_shape")) {
    g.feature_shape.clear();
    for (const json& d : *fs_) g.feature_shape.push_back(d.get<Index>());
  }
  g.correlation = parse_correlation(gen, g.num_classes);
  if (const json* m = find(gen, "marginals")) {
    g.marginals.resize(static_cast<Index>(m->size()));
    for (Index i = 0; i < g.marginals.size(); ++i) g.marginals[i] = (*m)[static_cast<std::size_t>(i)].get<double>();
  }
  g.crosstalk = get_double(gen, "crosstalk", 0.2);
  g.noise_sigma = get_double(gen, "noise_sigma", 0.3);

  Dataset data = generate_synthetic(g, seed);
  if (!out.empty() && out.find('/') != std::string::npos) {
    std::error_code ec;
    fs::create_directories(fs::path(out).parent_path(), ec);
  }
  save_dataset(data, out);

  json resolved = config;
  resolved["seed"] = seed;
  echo_config(out + ".config.json", resolved);

  std::cout << "generated " << data.size() << " samples, " << data.num_classes() << " classes -> " << out << "\n";
  std::cout << "class marginals: " << summarize_vector(data.class_marginals()) << "\n";
  std::cout << "independent ratios: " << summarize_vector(data.independent_ratios()) << "\n";
}

void cmd_corrupt(const json& config) {
  require_keys(config, "corrupt", {"seed", "input", "out", "corruption"});
  const std::uint64_t seed = get_seed(config);
  const std::string in_path = need_string(config, "input", "corrupt");
  const std::string out = need_string(config, "out", "corrupt");

  json resolved = config;
  resolved["seed"] = seed;
  const json corr_section = config.contains("corruption") ? config["corruption"] : json::object();
  CorruptionSpec spec = parse_corruption(corr_section, seed, resolved);

  Dataset data = load_dataset(in_path);
  Dataset corrupted = corrupt_labels(data, spec);
  save_dataset(corrupted, out);
  echo_config(out + ".config.json", resolved);

  std::size_t touched = 0;
  for (auto b : corrupted.corruption_mask) touched += b;
  std::cout << "corrupted " << touched << "/" << corrupted.size() << " samples (rate " << fmt_double(spec.rate)
            << ", scheme " << corruption_scheme_name(spec.scheme) << ") -> " << out << "\n";
}

void cmd_train(const json& config) {
  require_keys(config, "train", {"seed", "out", "data", "corruption", "model", "regularizer", "train"});
  const std::uint64_t seed = get_seed(config);
  const std::string out = need_string(config, "out", "train");
  if (!config.contains("data")) throw ConfigError("config: train requires a data section");
  if (!config.contains("model")) throw ConfigError("config: train requires a model section");

  json resolved;
  resolved["seed"] = seed;
  resolved["out"] = out;

  DataSection data_sec = parse_data(config["data"], seed, /*split_by_default=*/true);
  resolved["data"] = data_sec.resolved;
  LoadedData data = load_data(data_sec);
  Dataset train_split = std::move(data.splits->train);
  const Dataset& valid_split = data.splits->valid;
  const Dataset& test_split = data.splits->test;

  if (config.contains("corruption")) {
    CorruptionSpec spec = parse_corruption(config["corruption"], seed, resolved);
    train_split = corrupt_labels(train_split, spec);  // training split only
  }

  NetworkPlan plan = parse_plan(config["model"], find(config, "regularizer"), train_split, resolved);
  TrainConfig cfg = parse_train(find(config, "train"), seed, resolved);

  std::mt19937_64 init_rng = substream(seed, "init");
  Network net = Network::build(plan, init_rng);

  TrainResult result = train(net, train_split, valid_split, test_split, cfg);

  make_out_dir(out);
  echo_config(out + "/config.json", resolved);
  write_epoch_csv(out + "/epochs.csv", result.records);
  write_timing_log(out + "/timing.log", result.records);
  write_mix_log_csv(out + "/mix_log.csv", result.mix_log);
  save_checkpoint(out + "/best.flxw", result.best_params);
  save_checkpoint(out + "/last.flxw", result.last_params);

  json run;
  run["best_epoch"] = result.best_epoch;
  run["flow_sizes_first_batch"] = result.first_flow_sizes;
  run["class_weights"] = {{"positive", std::vector<double>(result.weights.positive.data(),
                                                           result.weights.positive.data() + result.weights.positive.size())},
                          {"negative", std::vector<double>(result.weights.negative.data(),
                                                           result.weights.negative.data() + result.weights.negative.size())},
                          {"warnings", result.weights.warnings}};
  run["plateau"] = {{"patience", cfg.plateau_patience}, {"factor", cfg.plateau_factor},
                    {"threshold", cfg.plateau_threshold}};
  write_text_file(out + "/run.json", run.dump(2) + "\n");

  std::cout << "trained " << cfg.epochs << " epochs (" << regularizer_name(plan.mode) << ") -> " << out << "\n";
  if (!result.records.empty()) {
    std::cout << "best epoch " << result.best_epoch << " valid " << fmt_double(result.records.back().valid_indicator)
              << " test " << fmt_double(result.records.back().test_indicator) << " (last epoch)\n";
  }
}

void cmd_eval(const json& config) {
  require_keys(config, "eval", {"seed", "checkpoint", "out", "data", "model", "threshold"});
  const std::uint64_t seed = get_seed(config);
  const std::string out = need_string(config, "out", "eval");
  const std::string checkpoint = need_string(config, "checkpoint", "eval");
  if (!config.contains("data")) throw ConfigError("config: eval requires a data section");
  if (!config.contains("model")) throw ConfigError("config: eval requires a model section");

  json resolved;
  resolved["seed"] = seed;
  resolved["out"] = out;
  resolved["checkpoint"] = checkpoint;

  DataSection data_sec = parse_data(config["data"], seed, /*split_by_default=*/false);
  resolved["data"] = data_sec.resolved;
  LoadedData data = load_data(data_sec);
  const Dataset& eval_set = data.part(data_sec.part);

  const double threshold = get_double(config, "threshold", 0.5);
  resolved["threshold"] = threshold;

  Network net = restore_network(config["model"], eval_set, checkpoint, seed, resolved);
  const LabelMatrix probs = predict_all(net, eval_set);
  MetricsReport report = evaluate_metrics(probs, eval_set.labels, eval_set.class_names, threshold);

  make_out_dir(out);
  echo_config(out + "/config.json", resolved);
  write_text_file(out + "/metrics.json", metrics_report_to_json(report));
  write_metrics_csv(out + "/per_class.csv", report);

  std::cout << "eval " << checkpoint << " on " << eval_set.size() << " samples: mean AUC " << fmt_double(report.mean_auc)
            << ", Macro-F1 " << fmt_double(report.macro) << " -> " << out << "\n";
}

void cmd_diagnose(const json& config) {
  require_keys(config, "diagnose", {"seed", "checkpoint", "mixed_checkpoint", "out", "data", "model", "kmeans"});
  const std::uint64_t seed = get_seed(config);
  const std::string out = need_string(config, "out", "diagnose");
  const std::string checkpoint = need_string(config, "checkpoint", "diagnose");
  if (!config.contains("data")) throw ConfigError("config: diagnose requires a data section");
  if (!config.contains("model")) throw ConfigError("config: diagnose requires a model section");

  json resolved;
  resolved["seed"] = seed;
  resolved["out"] = out;
  resolved["checkpoint"] = checkpoint;

  json km = config.contains("kmeans") ? config["kmeans"] : json::object();
  require_keys(km, "kmeans", {"k", "max_iters", "restarts", "seed"});
  const Index k = get_int(km, "k", 10);
  const int max_iters = static_cast<int>(get_int(km, "max_iters", 100));
  const int restarts = static_cast<int>(get_int(km, "restarts", 1));
  const std::uint64_t km_seed = km.contains("seed") ? km["seed"].get<std::uint64_t>() : seed;
  resolved["kmeans"] = {{"k", k}, {"max_iters", max_iters}, {"restarts", restarts}, {"seed", km_seed}};

  DataSection data_sec = parse_data(config["data"], seed, /*split_by_default=*/false);
  resolved["data"] = data_sec.resolved;
  LoadedData data = load_data(data_sec);
  const Dataset& probe_set = data.part(data_sec.part);

  make_out_dir(out);
  Network net = restore_network(config["model"], probe_set, checkpoint, seed, resolved);
  std::vector<std::string> state_names;
  std::vector<MatRM> states = collect_state_features(net, probe_set, state_names);

  // Cluster once on the primary model's features; both models' per-state
  // statistics then use the same data points per state.
  std::vector<ClusterStats> primary;
  json stats_json = json::array();
  for (std::size_t s = 0; s < states.size(); ++s) {
    KMeansResult kmr = kmeans(states[s], k, km_seed, max_iters, restarts);
    ClusterStats st = r_squared(states[s], kmr.assignments);
    stats_json.push_back(cluster_stats_json(st, state_names[s]));
    primary.push_back(st);
  }

  json output;
  output["states"] = state_names;
  output["primary"] = stats_json;

  std::vector<SvgSeries> series;
  SvgSeries primary_series{"checkpoint", {}};
  for (const auto& s : primary) primary_series.values.push_back(s.r_squared);
  series.push_back(primary_series);

  if (config.contains("mixed_checkpoint")) {
    const std::string mixed_path = need_string(config, "mixed_checkpoint", "diagnose");
    resolved["mixed_checkpoint"] = mixed_path;
    json resolved_scratch;
    Network mixed = restore_network(config["model"], probe_set, mixed_path, seed, resolved_scratch);
    std::vector<std::string> names2;
    std::vector<MatRM> states2 = collect_state_features(mixed, probe_set, names2);
    std::vector<ClusterStats> secondary;
    json stats2 = json::array();
    for (std::size_t s = 0; s < states2.size(); ++s) {
      KMeansResult kmr = kmeans(states2[s], k, km_seed, max_iters, restarts);
      ClusterStats st = r_squared(states2[s], kmr.assignments);
      stats2.push_back(cluster_stats_json(st, names2[s]));
      secondary.push_back(st);
    }
    output["mixed"] = stats2;

    const auto ratios = r2_ratio(primary, secondary);
    json rj = json::array();
    SvgSeries ratio_series{"r2_ratio", {}};
    for (const auto& r : ratios) {
      rj.push_back(r ? json(*r) : json(nullptr));
      ratio_series.values.push_back(r ? *r : std::numeric_limits<double>::quiet_NaN());
    }
    output["r2_ratio"] = rj;

    SvgSeries mixed_series{"mixed_checkpoint", {}};
    for (const auto& s : secondary) mixed_series.values.push_back(s.r_squared);
    series.push_back(mixed_series);
    write_svg_line_chart(out + "/r2_ratio.svg", "R2 ratio per state", state_names, {ratio_series});
  }

  echo_config(out + "/config.json", resolved);
  write_text_file(out + "/diagnostics.json", output.dump(2) + "\n");
  write_svg_line_chart(out + "/r2.svg", "R2 per state", state_names, series);

  std::cout << "diagnose " << checkpoint << ": " << states.size() << " states -> " << out << "\n";
}

void cmd_compare(const json& config) {
  require_keys(config, "compare", {"seed", "out", "metrics_a", "metrics_b", "metric", "exponent", "data"});
  const std::uint64_t seed = get_seed(config);
  const std::string out = need_string(config, "out", "compare");
  std::string path_a = need_string(config, "metrics_a", "compare");
  std::string path_b = need_string(config, "metrics_b", "compare");
  if (fs::is_directory(path_a)) path_a += "/metrics.json";
  if (fs::is_directory(path_b)) path_b += "/metrics.json";
  const std::string metric = get_string(config, "metric", "f1");
  if (metric != "f1" && metric != "auc") throw ConfigError("config: compare.metric must be f1 or auc");
  const double exponent = get_double(config, "exponent", metric == "auc" ? 10.0 : 1.0);
  if (!config.contains("data")) throw ConfigError("config: compare requires a data section for independent ratios");

  json resolved;
  resolved["seed"] = seed;
  resolved["out"] = out;
  resolved["metrics_a"] = path_a;
  resolved["metrics_b"] = path_b;
  resolved["metric"] = metric;
  resolved["exponent"] = exponent;

  auto load_per_class = [&](const std::string& path, std::vector<std::string>& names) {
    json j = json::parse(read_text_file(path), nullptr, false);
    if (j.is_discarded() || !j.contains("classes")) throw ParseError("compare: " + path + " is not a metrics report");
    std::vector<double> values;
    for (const json& row : j["classes"]) {
      names.push_back(row["name"].get<std::string>());
      if (metric == "f1") {
        values.push_back(row["f1"].get<double>());
      } else {
        values.push_back(row["auc"].is_null() ? std::numeric_limits<double>::quiet_NaN() : row["auc"].get<double>());
      }
    }
    return values;
  };

  std::vector<std::string> names_a, names_b;
  const std::vector<double> perf_a = load_per_class(path_a, names_a);
  const std::vector<double> perf_b = load_per_class(path_b, names_b);
  if (perf_a.size() != perf_b.size()) {
    throw ConfigError("compare: reports have " + std::to_string(perf_a.size()) + " vs " + std::to_string(perf_b.size()) +
                      " classes");
  }

  DataSection data_sec = parse_data(config["data"], seed, /*split_by_default=*/false);
  resolved["data"] = data_sec.resolved;
  LoadedData data = load_data(data_sec);
  const Dataset& ref_set = data.part(data_sec.part);
  if (ref_set.num_classes() != static_cast<Index>(perf_a.size())) {
    throw ConfigError("compare: dataset has " + std::to_string(ref_set.num_classes()) + " classes, reports have " +
                      std::to_string(perf_a.size()));
  }
  const Eigen::VectorXd indep = ref_set.independent_ratios();

  // Classes where either side is undefined are skipped with a marker.
  std::vector<std::size_t> kept;
  for (std::size_t c = 0; c < perf_a.size(); ++c) {
    if (std::isfinite(perf_a[c]) && std::isfinite(perf_b[c]) && std::isfinite(indep[static_cast<Index>(c)])) {
      kept.push_back(c);
    }
  }
  Eigen::VectorXd va(static_cast<Index>(kept.size())), vb(static_cast<Index>(kept.size()));
  for (std::size_t i = 0; i < kept.size(); ++i) {
    va[static_cast<Index>(i)] = perf_a[kept[i]];
    vb[static_cast<Index>(i)] = perf_b[kept[i]];
  }
  const Eigen::VectorXd ratio = performance_ratio(va, vb, exponent);

  std::vector<double> ratio_curve, indep_curve;
  for (std::size_t i = 0; i < kept.size(); ++i) {
    ratio_curve.push_back(ratio[static_cast<Index>(i)]);
    indep_curve.push_back(indep[static_cast<Index>(kept[i])]);
  }
  const std::optional<double> rho = spearman(ratio_curve, indep_curve);

  make_out_dir(out);
  echo_config(out + "/config.json", resolved);

  std::ostringstream csv;
  csv << "class,perf_a,perf_b,performance_ratio,independent_ratio\n";
  json cmp;
  cmp["metric"] = metric;
  cmp["exponent"] = exponent;
  cmp["spearman"] = rho ? json(*rho) : json(nullptr);
  cmp["classes"] = json::array();
  std::size_t ki = 0;
  for (std::size_t c = 0; c < perf_a.size(); ++c) {
    const bool in = ki < kept.size() && kept[ki] == c;
    json row;
    row["name"] = names_a[c];
    if (in) {
      row["perf_a"] = perf_a[c];
      row["perf_b"] = perf_b[c];
      row["performance_ratio"] = ratio[static_cast<Index>(ki)];
      row["independent_ratio"] = indep[static_cast<Index>(c)];
      csv << names_a[c] << "," << fmt_double(perf_a[c]) << "," << fmt_double(perf_b[c]) << ","
          << fmt_double(ratio[static_cast<Index>(ki)]) << "," << fmt_double(indep[static_cast<Index>(c)]) << "\n";
      ++ki;
    } else {
      row["skipped"] = true;
      csv << names_a[c] << ",undefined,undefined,undefined,undefined\n";
    }
    cmp["classes"].push_back(row);
  }
  write_text_file(out + "/compare.json", cmp.dump(2) + "\n");
  write_text_file(out + "/compare.csv", csv.str());

  std::vector<std::string> kept_names;
  for (std::size_t i : kept) kept_names.push_back(names_a[i]);
  write_svg_line_chart(out + "/ratio_curves.svg", "Performance ratio vs independent ratio", kept_names,
                       {{"performance_ratio", ratio_curve}, {"independent_ratio", indep_curve}});

  if (rho) {
    std::cout << "spearman " << fmt_double(*rho) << " over " << kept.size() << " classes -> " << out << "\n";
  } else {
    std::cout << "spearman undefined (constant vector) over " << kept.size() << " classes -> " << out << "\n";
  }
}

int run_command(const std::string& command, json config) {
  try {
    if (command == "generate") cmd_generate(config);
    else if (command == "corrupt") cmd_corrupt(config);
    else if (command == "train") cmd_train(config);
    else if (command == "eval") cmd_eval(config);
    else if (command == "diagnose") cmd_diagnose(config);
    else if (command == "compare") cmd_compare(config);
    else throw ConfigError("unknown command: " + command);
    return kExitOk;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const DimensionError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const GenerationError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const IoError& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return kExitIo;
  } catch (const ParseError& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return kExitIo;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const StateError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNumeric;
  }
}

void apply_overrides(json& config, const std::optional<std::uint64_t>& seed, const std::optional<std::string>& out) {
  if (seed) config["seed"] = *seed;
  if (out) config["out"] = *out;
}

}  // namespace flowmix::cli
