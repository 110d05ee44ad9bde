#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "td3net/config.hpp"
#include "td3net/dataset.hpp"
#include "td3net/network.hpp"
#include "td3net/training.hpp"

namespace td3 {

constexpr std::uint8_t kDtypeF32 = 1;
constexpr std::uint8_t kDtypeF64 = 2;

// Type-erased tensor for the binary container.
struct RawTensor {
  std::string name;
  std::uint8_t dtype = kDtypeF32;
  Shape shape;
  std::vector<float> f32;
  std::vector<double> f64;

  std::int64_t numel() const { return numel_of(shape); }
};

// Binary tensor container:
//   "TD3N" | u32 version | u64 meta_len | meta (UTF-8 JSON)
//   | u64 tensor_count | per tensor: u64 name_len, name, u8 dtype, u8 rank,
//     rank x u64 extents, little-endian payload
//   | trailing CRC-32 of all preceding bytes.
struct Container {
  std::string meta;
  std::vector<RawTensor> tensors;
};

void write_container(const std::string& path, const Container& c);
Container read_container(const std::string& path);

template <typename S>
RawTensor raw_from(const std::string& name, const Tensor<S>& t) {
  RawTensor r;
  r.name = name;
  r.shape = t.shape;
  if constexpr (std::is_same_v<S, float>) {
    r.dtype = kDtypeF32;
    r.f32 = t.data;
  } else {
    r.dtype = kDtypeF64;
    r.f64 = t.data;
  }
  return r;
}

template <typename S>
Tensor<S> raw_to(const RawTensor& r) {
  if (r.dtype == kDtypeF32) {
    Tensor<float> t(r.shape, r.f32);
    return t.template cast<S>();
  }
  Tensor<double> t(r.shape, r.f64);
  return t.template cast<S>();
}

struct CheckpointMeta {
  ModelConfig model;
  std::int64_t epoch = 0;
  std::int64_t steps = 0;
  std::uint8_t dtype = kDtypeF32;
  std::string rng_data;
  std::string rng_mixup;
  std::string rng_dropout;
};

std::string checkpoint_meta_json(const CheckpointMeta& meta);
CheckpointMeta parse_checkpoint_meta(const std::string& json_text);
CheckpointMeta peek_checkpoint_meta(const std::string& path);

template <typename S>
void save_checkpoint(const std::string& path, Network<S>& net, const AdamWState<S>* opt,
                     CheckpointMeta meta) {
  meta.dtype = std::is_same_v<S, float> ? kDtypeF32 : kDtypeF64;
  Container c;
  c.meta = checkpoint_meta_json(meta);
  for (auto& ref : net.param_registry()) c.tensors.push_back(raw_from("param/" + ref.name, *ref.tensor));
  for (auto& ref : net.buffer_registry())
    c.tensors.push_back(raw_from("buffer/" + ref.name, *ref.tensor));
  if (opt) {
    for (std::size_t i = 0; i < opt->names.size(); ++i) {
      c.tensors.push_back(raw_from("opt.m/" + opt->names[i], opt->m[i]));
      c.tensors.push_back(raw_from("opt.v/" + opt->names[i], opt->v[i]));
    }
  }
  write_container(path, c);
}

template <typename S>
Network<S> load_checkpoint(const std::string& path, AdamWState<S>* opt, CheckpointMeta* meta_out) {
  Container c = read_container(path);
  CheckpointMeta meta = parse_checkpoint_meta(c.meta);
  Network<S> net(plan_network(meta.model));

  auto find = [&c](const std::string& name) -> const RawTensor* {
    for (const auto& t : c.tensors)
      if (t.name == name) return &t;
    return nullptr;
  };
  for (auto& ref : net.param_registry()) {
    const RawTensor* r = find("param/" + ref.name);
    if (!r) throw IoError(path + ": checkpoint is missing parameter " + ref.name);
    if (r->shape != ref.tensor->shape)
      throw IoError(path + ": parameter " + ref.name + " has shape " + shape_str(r->shape) +
                    ", expected " + shape_str(ref.tensor->shape));
    *ref.tensor = raw_to<S>(*r);
  }
  for (auto& ref : net.buffer_registry()) {
    const RawTensor* r = find("buffer/" + ref.name);
    if (!r) throw IoError(path + ": checkpoint is missing buffer " + ref.name);
    *ref.tensor = raw_to<S>(*r);
  }
  if (opt) {
    opt->names.clear();
    opt->m.clear();
    opt->v.clear();
    opt->step = meta.steps;
    for (auto& ref : net.param_registry()) {
      const RawTensor* m = find("opt.m/" + ref.name);
      const RawTensor* v = find("opt.v/" + ref.name);
      if (!m || !v) {
        opt->names.clear();
        opt->m.clear();
        opt->v.clear();
        break;  // checkpoint without optimizer state
      }
      opt->names.push_back(ref.name);
      opt->m.push_back(raw_to<S>(*m));
      opt->v.push_back(raw_to<S>(*v));
    }
  }
  if (meta_out) *meta_out = meta;
  return net;
}

// Binary container or CSV, chosen by the .csv extension.
void write_features(const std::string& path, const FeatureSet& fs);
FeatureSet read_features(const std::string& path);

}  // namespace td3
