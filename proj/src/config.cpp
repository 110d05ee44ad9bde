#include "td3net/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace td3 {

using nlohmann::json;

const char* variant_name(Variant v) {
  switch (v) {
    case Variant::kTd3Net: return "td3net";
    case Variant::kTd2Net: return "td2net";
    case Variant::kDenseTcn: return "dense_tcn";
    case Variant::kNoDilation: return "no_dilation";
    case Variant::kStandardDilation: return "standard_dilation";
  }
  return "?";
}

Variant variant_from_string(const std::string& s) {
  if (s == "td3net") return Variant::kTd3Net;
  if (s == "td2net") return Variant::kTd2Net;
  if (s == "dense_tcn") return Variant::kDenseTcn;
  if (s == "no_dilation") return Variant::kNoDilation;
  if (s == "standard_dilation") return Variant::kStandardDilation;
  throw ConfigError("unknown variant '" + s +
                    "' (expected td3net, td2net, dense_tcn, no_dilation, standard_dilation)");
}

DilationPattern pattern_from_string(const std::string& s) {
  if (s == "exponential") return DilationPattern::kExponential;
  if (s == "linear") return DilationPattern::kLinear;
  throw ConfigError("unknown dilation pattern '" + s + "' (expected exponential or linear)");
}

PadMode pad_from_string(const std::string& s) {
  if (s == "same") return PadMode::kSame;
  if (s == "causal") return PadMode::kCausal;
  throw ConfigError("unknown padding mode '" + s + "' (expected same or causal)");
}

void ModelConfig::validate() const {
  if (b < 1 || n < 1 || l < 1) throw ConfigError("b, n and l must all be >= 1");
  if (k < 1) throw ConfigError("growth rate k must be >= 1");
  if (!(c > 0.0 && c <= 1.0)) throw ConfigError("compression ratio c must be in (0,1]");
  if (!(t > 0.0 && t <= 1.0)) throw ConfigError("transition ratio t must be in (0,1]");
  if (bc < 0) throw ConfigError("bc must be positive (or omitted for the default 4*k)");
  if (in_channels < 1) throw ConfigError("in_channels must be >= 1");
  if (num_classes < 1) throw ConfigError("num_classes must be >= 1");
  if (seq_len < 1) throw ConfigError("seq_len must be >= 1");
  if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout must be in [0,1)");
  if ((variant == Variant::kDenseTcn || variant == Variant::kTd2Net) && b > 4)
    throw ConfigError(std::string(variant_name(variant)) + " supports at most 4 blocks");
}

void DatasetSpec::validate() const {
  if (classes < 2) throw ConfigError("dataset.classes must be >= 2");
  if (train_size < 1 || val_size < 1) throw ConfigError("dataset sizes must be >= 1");
  if (channels < 4) throw ConfigError("dataset.channels must be >= 4");
  if (seq_len < 8) throw ConfigError("dataset.seq_len must be >= 8");
  if (noise < 0.0) throw ConfigError("dataset.noise must be >= 0");
  if (jitter < 0) throw ConfigError("dataset.jitter must be >= 0");
}

void TrainConfig::validate() const {
  if (epochs < 0) throw ConfigError("epochs must be >= 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(lr_init > 0.0) || !(lr_final > 0.0)) throw ConfigError("learning rates must be positive");
  if (!(lr_final < lr_init)) throw ConfigError("lr_final must be < lr_init");
  if (weight_decay < 0.0) throw ConfigError("weight_decay must be >= 0");
  if (mixup_alpha < 0.0) throw ConfigError("mixup_alpha must be >= 0");
  if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout must be in [0,1)");
  if (grad_clip < 0.0) throw ConfigError("grad_clip must be >= 0");
  dataset.validate();
}

namespace {

json parse_json(const std::string& text, const std::string& what) {
  json j = json::parse(text, nullptr, false);
  if (j.is_discarded()) throw ConfigError(what + ": not valid JSON");
  if (!j.is_object()) throw ConfigError(what + ": expected a JSON object");
  return j;
}

void check_keys(const json& j, const std::set<std::string>& required,
                const std::set<std::string>& optional, const std::string& what) {
  for (const auto& key : required)
    if (!j.contains(key)) throw ConfigError(what + ": missing required key `" + key + "`");
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!required.count(it.key()) && !optional.count(it.key()))
      throw ConfigError(what + ": unknown key `" + it.key() + "`");
}

std::int64_t get_int(const json& j, const std::string& key, const std::string& what) {
  const auto& v = j.at(key);
  if (!v.is_number_integer())
    throw ConfigError(what + ": key `" + key + "` must be an integer");
  return v.get<std::int64_t>();
}

double get_num(const json& j, const std::string& key, const std::string& what) {
  const auto& v = j.at(key);
  if (!v.is_number()) throw ConfigError(what + ": key `" + key + "` must be a number");
  return v.get<double>();
}

std::string get_str(const json& j, const std::string& key, const std::string& what) {
  const auto& v = j.at(key);
  if (!v.is_string()) throw ConfigError(what + ": key `" + key + "` must be a string");
  return v.get<std::string>();
}

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

DatasetSpec parse_dataset(const json& j) {
  const std::string what = "dataset spec";
  check_keys(j,
             {"classes", "train_size", "val_size", "channels", "seq_len", "noise", "jitter"},
             {"seed"}, what);
  DatasetSpec d;
  d.classes = get_int(j, "classes", what);
  d.train_size = get_int(j, "train_size", what);
  d.val_size = get_int(j, "val_size", what);
  d.channels = get_int(j, "channels", what);
  d.seq_len = get_int(j, "seq_len", what);
  d.noise = get_num(j, "noise", what);
  d.jitter = get_int(j, "jitter", what);
  if (j.contains("seed")) d.seed = static_cast<std::uint64_t>(get_int(j, "seed", what));
  d.validate();
  return d;
}

}  // namespace

ModelConfig parse_model_config(const std::string& text) {
  const std::string what = "model config";
  json j = parse_json(text, what);
  check_keys(j,
             {"b", "n", "l", "k", "c", "t", "pattern", "variant", "in_channels", "num_classes",
              "seq_len", "padding", "dropout"},
             {"bc", "seed"}, what);
  ModelConfig cfg;
  cfg.b = get_int(j, "b", what);
  cfg.n = get_int(j, "n", what);
  cfg.l = get_int(j, "l", what);
  cfg.k = get_int(j, "k", what);
  cfg.c = get_num(j, "c", what);
  cfg.t = get_num(j, "t", what);
  cfg.bc = j.contains("bc") ? get_int(j, "bc", what) : 0;
  cfg.pattern = pattern_from_string(get_str(j, "pattern", what));
  cfg.variant = variant_from_string(get_str(j, "variant", what));
  cfg.in_channels = get_int(j, "in_channels", what);
  cfg.num_classes = get_int(j, "num_classes", what);
  cfg.seq_len = get_int(j, "seq_len", what);
  cfg.padding = pad_from_string(get_str(j, "padding", what));
  cfg.dropout = get_num(j, "dropout", what);
  if (j.contains("seed")) cfg.seed = static_cast<std::uint64_t>(get_int(j, "seed", what));
  cfg.validate();
  return cfg;
}

ModelConfig load_model_config(const std::string& path) {
  return parse_model_config(slurp(path));
}

TrainConfig parse_train_config(const std::string& text) {
  const std::string what = "train config";
  json j = parse_json(text, what);
  check_keys(j,
             {"epochs", "batch_size", "lr_init", "lr_final", "weight_decay", "mixup_alpha",
              "dropout", "dataset"},
             {"seed", "grad_clip"}, what);
  TrainConfig cfg;
  cfg.epochs = get_int(j, "epochs", what);
  cfg.batch_size = get_int(j, "batch_size", what);
  cfg.lr_init = get_num(j, "lr_init", what);
  cfg.lr_final = get_num(j, "lr_final", what);
  cfg.weight_decay = get_num(j, "weight_decay", what);
  cfg.mixup_alpha = get_num(j, "mixup_alpha", what);
  cfg.dropout = get_num(j, "dropout", what);
  if (j.contains("seed")) cfg.seed = static_cast<std::uint64_t>(get_int(j, "seed", what));
  if (j.contains("grad_clip")) cfg.grad_clip = get_num(j, "grad_clip", what);
  if (!j.at("dataset").is_object()) throw ConfigError(what + ": key `dataset` must be an object");
  cfg.dataset = parse_dataset(j.at("dataset"));
  cfg.validate();
  return cfg;
}

TrainConfig load_train_config(const std::string& path) {
  return parse_train_config(slurp(path));
}

std::string model_config_json(const ModelConfig& cfg) {
  json j;
  j["b"] = cfg.b;
  j["n"] = cfg.n;
  j["l"] = cfg.l;
  j["k"] = cfg.k;
  j["c"] = cfg.c;
  j["t"] = cfg.t;
  j["bc"] = cfg.bottleneck_width();
  j["pattern"] = cfg.pattern == DilationPattern::kLinear ? "linear" : "exponential";
  j["variant"] = variant_name(cfg.variant);
  j["in_channels"] = cfg.in_channels;
  j["num_classes"] = cfg.num_classes;
  j["seq_len"] = cfg.seq_len;
  j["padding"] = pad_mode_name(cfg.padding);
  j["dropout"] = cfg.dropout;
  j["seed"] = cfg.seed;
  return j.dump(2);
}

std::string train_config_json(const TrainConfig& cfg) {
  json d;
  d["classes"] = cfg.dataset.classes;
  d["train_size"] = cfg.dataset.train_size;
  d["val_size"] = cfg.dataset.val_size;
  d["channels"] = cfg.dataset.channels;
  d["seq_len"] = cfg.dataset.seq_len;
  d["noise"] = cfg.dataset.noise;
  d["jitter"] = cfg.dataset.jitter;
  d["seed"] = cfg.dataset.seed;
  json j;
  j["epochs"] = cfg.epochs;
  j["batch_size"] = cfg.batch_size;
  j["lr_init"] = cfg.lr_init;
  j["lr_final"] = cfg.lr_final;
  j["weight_decay"] = cfg.weight_decay;
  j["mixup_alpha"] = cfg.mixup_alpha;
  j["dropout"] = cfg.dropout;
  j["seed"] = cfg.seed;
  j["grad_clip"] = cfg.grad_clip;
  j["dataset"] = d;
  return j.dump(2);
}

}  // namespace td3
