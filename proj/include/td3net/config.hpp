#pragma once

#include <cstdint>
#include <string>

#include "td3net/layers.hpp"

namespace td3 {

enum class Variant { kTd3Net, kTd2Net, kDenseTcn, kNoDilation, kStandardDilation };

const char* variant_name(Variant v);
Variant variant_from_string(const std::string& s);
DilationPattern pattern_from_string(const std::string& s);
PadMode pad_from_string(const std::string& s);

// Complete architectural description; a network is built deterministically
// from (config, seed).
struct ModelConfig {
  std::int64_t b = 1;            // TD3 blocks
  std::int64_t n = 1;            // TD2 blocks per TD3 block
  std::int64_t l = 1;            // multi-dilated layers per TD2 block
  std::int64_t k = 1;            // growth rate
  double c = 0.5;                // TD3 compression ratio
  double t = 0.5;                // TD2 transition ratio
  std::int64_t bc = 0;           // TD2 bottleneck width; 0 means 4*k
  DilationPattern pattern = DilationPattern::kExponential;
  Variant variant = Variant::kTd3Net;
  std::int64_t in_channels = 512;
  std::int64_t num_classes = 500;
  std::int64_t seq_len = 29;
  PadMode padding = PadMode::kSame;
  double dropout = 0.0;
  std::uint64_t seed = 0;
  bool per_sub_bn = false;       // not part of the file schema

  std::int64_t bottleneck_width() const { return bc > 0 ? bc : 4 * k; }
  void validate() const;
};

struct DatasetSpec {
  std::int64_t classes = 10;
  std::int64_t train_size = 1000;
  std::int64_t val_size = 200;
  std::int64_t channels = 4;
  std::int64_t seq_len = 29;
  double noise = 0.3;
  std::int64_t jitter = 2;
  std::uint64_t seed = 0;

  void validate() const;
};

struct TrainConfig {
  std::int64_t epochs = 0;
  std::int64_t batch_size = 32;
  double lr_init = 3e-4;
  double lr_final = 5e-8;
  double weight_decay = 1e-2;
  double mixup_alpha = 0.4;
  double dropout = 0.2;
  std::uint64_t seed = 0;
  double grad_clip = 0.0;  // 0 disables
  DatasetSpec dataset;

  void validate() const;
};

ModelConfig parse_model_config(const std::string& json_text);
ModelConfig load_model_config(const std::string& path);
TrainConfig parse_train_config(const std::string& json_text);
TrainConfig load_train_config(const std::string& path);

std::string model_config_json(const ModelConfig& cfg);
std::string train_config_json(const TrainConfig& cfg);

}  // namespace td3
