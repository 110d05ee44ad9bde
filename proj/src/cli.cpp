#include "td3net/cli.hpp"

#include <charconv>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "td3net/analysis.hpp"
#include "td3net/checkpoint.hpp"
#include "td3net/training.hpp"

namespace td3 {

namespace fs = std::filesystem;

namespace {

std::string fmt(double v) {
  char tmp[64];
  auto [end, ec] = std::to_chars(tmp, tmp + sizeof(tmp), v);
  (void)ec;
  return std::string(tmp, end);
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc | std::ios::binary);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << text;
  if (!out) throw IoError("failed writing " + path);
}

std::pair<std::int64_t, std::int64_t> parse_shape_arg(const std::string& s) {
  const std::size_t x = s.find('x');
  std::int64_t channels = 0, t_len = 0;
  auto parse_int = [](const std::string& part, std::int64_t& out) {
    const auto [p, ec] = std::from_chars(part.data(), part.data() + part.size(), out);
    return ec == std::errc() && p == part.data() + part.size() && out > 0;
  };
  if (x == std::string::npos || !parse_int(s.substr(0, x), channels) ||
      !parse_int(s.substr(x + 1), t_len))
    throw UsageError("malformed shape '" + s + "', expected CHANNELSxFRAMES like 512x29");
  return {channels, t_len};
}

std::string resolved_config_json(const ModelConfig& model, const TrainConfig& train,
                                 std::uint64_t seed) {
  nlohmann::json j;
  j["model"] = nlohmann::json::parse(model_config_json(model));
  j["train"] = nlohmann::json::parse(train_config_json(train));
  j["seed"] = seed;
  return j.dump(2) + "\n";
}

int cmd_train(const std::string& model_path, const std::string& train_path,
              const std::string& out_dir, std::int64_t seed_arg) {
  const ModelConfig model_cfg = load_model_config(model_path);
  const TrainConfig train_cfg = load_train_config(train_path);
  const std::uint64_t master =
      seed_arg >= 0 ? static_cast<std::uint64_t>(seed_arg) : train_cfg.seed;

  fs::create_directories(out_dir);
  auto result = train<float>(model_cfg, train_cfg, master, &std::cout);

  std::ostringstream log;
  log << "epoch,lr,train_loss,train_acc,val_loss,val_acc\n";
  for (const EpochRow& r : result.log)
    log << r.epoch << ',' << fmt(r.lr) << ',' << fmt(r.train_loss) << ',' << fmt(r.train_acc)
        << ',' << fmt(r.val_loss) << ',' << fmt(r.val_acc) << '\n';
  write_text(out_dir + "/log.csv", log.str());

  CheckpointMeta meta;
  meta.model = result.resolved_model;
  meta.rng_data = result.rng_data;
  meta.rng_mixup = result.rng_mixup;
  meta.rng_dropout = result.rng_dropout;
  meta.steps = result.steps;
  meta.epoch = result.best_epoch;
  save_checkpoint(out_dir + "/best.ckpt", result.best_net, &result.best_opt, meta);
  meta.epoch = train_cfg.epochs;
  save_checkpoint(out_dir + "/final.ckpt", result.net, &result.opt, meta);
  write_text(out_dir + "/config.json",
             resolved_config_json(result.resolved_model, train_cfg, master));
  std::cout << "wrote " << out_dir << "/{log.csv,best.ckpt,final.ckpt,config.json}\n";
  return 0;
}

int cmd_analyze(const std::string& model_path, const std::string& mode, const std::string& layer,
                std::int64_t time_arg, const std::string& out_path) {
  const ModelConfig cfg = load_model_config(model_path);
  const GraphSpec spec = plan_network(cfg);
  const std::int64_t t_len = cfg.seq_len;
  const auto rfs = receptive_fields(spec, t_len);

  if (!layer.empty()) {
    bool found = false;
    for (const auto& a : rfs) found = found || a.path == layer;
    if (!found) throw UsageError("unknown layer path '" + layer + "'");
  }

  std::ostringstream csv;
  if (mode == "rf") {
    csv << "layer,time,rf_min,rf_max,rf_size,contiguous\n";
  } else {
    csv << "layer,time,rf_min,rf_max,blind_spots\n";
  }
  for (const auto& a : rfs) {
    if (!layer.empty() && a.path != layer) continue;
    for (std::int64_t t = 0; t < t_len; ++t) {
      if (time_arg >= 0 && t != time_arg) continue;
      const auto idx = a.per_time[static_cast<std::size_t>(t)].indices();
      const auto gaps = detect_blind_spots(a.per_time[static_cast<std::size_t>(t)]);
      if (mode == "rf") {
        csv << a.path << ',' << t << ',' << idx.front() << ',' << idx.back() << ',' << idx.size()
            << ',' << (gaps.empty() ? 1 : 0) << '\n';
      } else if (!gaps.empty()) {
        csv << a.path << ',' << t << ',' << idx.front() << ',' << idx.back() << ',';
        for (std::size_t gi = 0; gi < gaps.size(); ++gi) {
          if (gi) csv << ';';
          csv << gaps[gi].lo << '-' << gaps[gi].hi;
        }
        csv << '\n';
      }
    }
  }
  write_text(out_path, csv.str());
  std::cout << "wrote " << out_path << "\n";
  return 0;
}

int cmd_count(const std::string& model_path, const std::string& flops_input,
              const std::string& format) {
  const ModelConfig cfg = load_model_config(model_path);
  const GraphSpec spec = plan_network(cfg);
  std::int64_t channels = cfg.in_channels, t_len = cfg.seq_len;
  if (!flops_input.empty()) std::tie(channels, t_len) = parse_shape_arg(flops_input);
  const CostReport report = count_cost(spec, channels, t_len);

  if (format == "csv") {
    std::ostringstream csv;
    csv << "layer,kind,in_channels,out_channels,params,buffers,mac_flops,pointwise_flops\n";
    for (const CostRow& r : report.rows)
      csv << r.path << ',' << r.kind << ',' << r.in_channels << ',' << r.out_channels << ','
          << r.params << ',' << r.buffers << ',' << r.mac_flops << ',' << r.pointwise_flops
          << '\n';
    csv << "total,backend,,," << report.backend_params << ',' << report.backend_buffers << ','
        << report.backend_mac_flops << ",\n";
    csv << "total,classifier,,," << report.classifier_params << ",0,"
        << report.classifier_mac_flops << ",\n";
    csv << "total,with_classifier,,," << report.total_params() << ',' << report.backend_buffers
        << ',' << report.total_mac_flops() << ',' << report.pointwise_flops << '\n';
    std::cout << csv.str();
    return 0;
  }

  std::cout << "input " << channels << "x" << t_len << "\n";
  std::cout << "backend parameters:        " << report.backend_params << " ("
            << fmt(report.backend_params / 1e6) << " M)\n";
  std::cout << "classifier parameters:     " << report.classifier_params << "\n";
  std::cout << "total parameters:          " << report.total_params() << " ("
            << fmt(report.total_params() / 1e6) << " M)\n";
  std::cout << "bn running-stat buffers:   " << report.backend_buffers << "\n";
  std::cout << "backend conv GFLOPs:       " << fmt(report.backend_mac_flops / 1e9) << "\n";
  std::cout << "conv+linear GFLOPs:        " << fmt(report.total_mac_flops() / 1e9) << "\n";
  std::cout << "pointwise GFLOPs (excl.):  " << fmt(report.pointwise_flops / 1e9) << "\n";
  return 0;
}

template <typename S>
Tensor<S> stack_features(const FeatureSet& fsn) {
  Tensor<S> out = Tensor<S>::zeros({fsn.size(), fsn.channels, fsn.t_len});
  const std::int64_t item = fsn.channels * fsn.t_len;
  for (std::int64_t i = 0; i < fsn.size(); ++i)
    for (std::int64_t j = 0; j < item; ++j)
      out.data[static_cast<std::size_t>(i * item + j)] =
          static_cast<S>(fsn.x[static_cast<std::size_t>(i)].data[static_cast<std::size_t>(j)]);
  return out;
}

void check_feature_shape(const FeatureSet& fsn, const ModelConfig& cfg) {
  if (fsn.channels != cfg.in_channels || fsn.t_len != cfg.seq_len)
    throw ConfigError("feature shape " + std::to_string(fsn.channels) + "x" +
                      std::to_string(fsn.t_len) + " does not match the checkpoint's expected " +
                      std::to_string(cfg.in_channels) + "x" + std::to_string(cfg.seq_len));
}

template <typename S>
int amap_with(const std::string& ckpt, const FeatureSet& fsn, const std::string& out_path) {
  Network<S> net = load_checkpoint<S>(ckpt, static_cast<AdamWState<S>*>(nullptr), nullptr);
  check_feature_shape(fsn, net.spec.config);
  Tensor<S> batch = stack_features<S>(fsn);
  Tensor<S> map = activation_map(net, batch);
  std::ostringstream csv;
  for (std::int64_t t = 0; t < fsn.t_len; ++t) csv << (t ? "," : "") << 't' << t;
  csv << '\n';
  for (std::int64_t i = 0; i < fsn.size(); ++i) {
    for (std::int64_t t = 0; t < fsn.t_len; ++t)
      csv << (t ? "," : "") << fmt(static_cast<double>(map.at2(i, t)));
    csv << '\n';
  }
  write_text(out_path, csv.str());
  std::cout << "wrote " << out_path << " (" << fsn.size() << " rows x " << fsn.t_len
            << " columns)\n";
  return 0;
}

template <typename S>
int eval_with(const std::string& ckpt, const FeatureSet& fsn, const std::string& out_path) {
  Network<S> net = load_checkpoint<S>(ckpt, static_cast<AdamWState<S>*>(nullptr), nullptr);
  check_feature_shape(fsn, net.spec.config);
  std::vector<Tensor<S>> xs;
  for (const auto& x : fsn.x) xs.push_back(x.template cast<S>());
  EvalResult res = evaluate(net, xs, fsn.labels, 32, net.spec.config.num_classes);
  std::cout << "accuracy " << fmt(res.accuracy) << "\n";
  std::cout << "mean_loss " << fmt(res.mean_loss) << "\n";
  if (!out_path.empty()) {
    std::ostringstream csv;
    csv << "true_class";
    for (std::int64_t c = 0; c < res.classes; ++c) csv << ",pred_" << c;
    csv << '\n';
    for (std::int64_t i = 0; i < res.classes; ++i) {
      csv << i;
      for (std::int64_t c = 0; c < res.classes; ++c)
        csv << ',' << res.confusion[static_cast<std::size_t>(i * res.classes + c)];
      csv << '\n';
    }
    write_text(out_path, csv.str());
    std::cout << "wrote " << out_path << "\n";
  }
  return 0;
}

int cmd_gen_data(const std::string& train_path, const std::string& split,
                 const std::string& out_path) {
  const TrainConfig cfg = load_train_config(train_path);
  if (split != "train" && split != "val")
    throw UsageError("--split must be train or val, got '" + split + "'");
  write_features(out_path, synth_features(cfg.dataset, split == "val"));
  std::cout << "wrote " << out_path << "\n";
  return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
  CLI::App app{"densely connected multi-dilated temporal convolution toolkit"};
  app.require_subcommand(1);

  std::string model_path, train_path, out_dir, out_path, layer, mode = "rf";
  std::string flops_input, format = "table", ckpt, features, split = "train";
  std::int64_t seed_arg = -1, time_arg = -1;

  auto* train_cmd = app.add_subcommand("train", "train on the synthetic task");
  train_cmd->add_option("--model-config", model_path)->required();
  train_cmd->add_option("--train-config", train_path)->required();
  train_cmd->add_option("--out", out_dir)->required();
  train_cmd->add_option("--seed", seed_arg);

  auto* analyze_cmd = app.add_subcommand("analyze", "receptive-field and blind-spot reports");
  analyze_cmd->add_option("--model-config", model_path)->required();
  analyze_cmd->add_option("--mode", mode)->check(CLI::IsMember({"rf", "blindspots"}));
  analyze_cmd->add_option("--layer", layer);
  analyze_cmd->add_option("--time", time_arg);
  analyze_cmd->add_option("--out", out_path)->required();

  auto* count_cmd = app.add_subcommand("count", "parameter and FLOP accounting");
  count_cmd->add_option("--model-config", model_path)->required();
  count_cmd->add_option("--flops-input", flops_input);
  count_cmd->add_option("--format", format)->check(CLI::IsMember({"table", "csv"}));

  auto* amap_cmd = app.add_subcommand("amap", "temporal activation-map L2 norms");
  amap_cmd->add_option("--ckpt", ckpt)->required();
  amap_cmd->add_option("--features", features)->required();
  amap_cmd->add_option("--out", out_path)->required();

  auto* eval_cmd = app.add_subcommand("eval", "accuracy and confusion matrix");
  eval_cmd->add_option("--ckpt", ckpt)->required();
  eval_cmd->add_option("--features", features)->required();
  eval_cmd->add_option("--out", out_path);

  auto* gen_cmd = app.add_subcommand("gen-data", "materialize a synthetic feature file");
  gen_cmd->add_option("--train-config", train_path)->required();
  gen_cmd->add_option("--split", split)->check(CLI::IsMember({"train", "val"}));
  gen_cmd->add_option("--out", out_path)->required();

  std::vector<const char*> argv{"td3net"};
  for (const auto& a : args) argv.push_back(a.c_str());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
    if (train_cmd->parsed()) return cmd_train(model_path, train_path, out_dir, seed_arg);
    if (analyze_cmd->parsed()) return cmd_analyze(model_path, mode, layer, time_arg, out_path);
    if (count_cmd->parsed()) return cmd_count(model_path, flops_input, format);
    if (amap_cmd->parsed()) {
      const FeatureSet fsn = read_features(features);
      return peek_checkpoint_meta(ckpt).dtype == kDtypeF64 ? amap_with<double>(ckpt, fsn, out_path)
                                                           : amap_with<float>(ckpt, fsn, out_path);
    }
    if (eval_cmd->parsed()) {
      const FeatureSet fsn = read_features(features);
      return peek_checkpoint_meta(ckpt).dtype == kDtypeF64 ? eval_with<double>(ckpt, fsn, out_path)
                                                           : eval_with<float>(ckpt, fsn, out_path);
    }
    if (gen_cmd->parsed()) return cmd_gen_data(train_path, split, out_path);
    return 2;
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace td3
