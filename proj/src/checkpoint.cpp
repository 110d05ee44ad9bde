#include "td3net/checkpoint.hpp"

#include <zlib.h>

#include <charconv>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace td3 {

using nlohmann::json;

namespace {

constexpr char kMagic[4] = {'T', 'D', '3', 'N'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::string& buf, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_u64(std::string& buf, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

struct Reader {
  const std::string& buf;
  std::size_t at = 0;

  void need(std::size_t n) const {
    if (at + n > buf.size()) throw IoError("container truncated");
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[at + i])) << (8 * i);
    at += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[at + i])) << (8 * i);
    at += 8;
    return v;
  }
  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(buf[at++]);
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s = buf.substr(at, n);
    at += n;
    return s;
  }
};

std::uint32_t crc_of(const std::string& buf, std::size_t len) {
  return static_cast<std::uint32_t>(
      crc32(0L, reinterpret_cast<const Bytef*>(buf.data()), static_cast<uInt>(len)));
}

std::string format_double(double v) {
  char tmp[64];
  auto [end, ec] = std::to_chars(tmp, tmp + sizeof(tmp), v);
  (void)ec;
  return std::string(tmp, end);
}

}  // namespace

void write_container(const std::string& path, const Container& c) {
  std::string buf;
  buf.append(kMagic, 4);
  put_u32(buf, kVersion);
  put_u64(buf, c.meta.size());
  buf += c.meta;
  put_u64(buf, c.tensors.size());
  for (const RawTensor& t : c.tensors) {
    put_u64(buf, t.name.size());
    buf += t.name;
    buf.push_back(static_cast<char>(t.dtype));
    buf.push_back(static_cast<char>(t.shape.size()));
    for (auto e : t.shape) put_u64(buf, static_cast<std::uint64_t>(e));
    if (t.dtype == kDtypeF32) {
      if (static_cast<std::int64_t>(t.f32.size()) != t.numel())
        throw IoError("tensor " + t.name + ": payload does not match shape");
      buf.append(reinterpret_cast<const char*>(t.f32.data()), t.f32.size() * sizeof(float));
    } else if (t.dtype == kDtypeF64) {
      if (static_cast<std::int64_t>(t.f64.size()) != t.numel())
        throw IoError("tensor " + t.name + ": payload does not match shape");
      buf.append(reinterpret_cast<const char*>(t.f64.data()), t.f64.size() * sizeof(double));
    } else {
      throw IoError("tensor " + t.name + ": unknown dtype tag " + std::to_string(t.dtype));
    }
  }
  put_u32(buf, crc_of(buf, buf.size()));

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw IoError("failed writing " + path);
}

Container read_container(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::ostringstream os;
  os << in.rdbuf();
  const std::string buf = os.str();
  if (buf.size() < 12 || std::memcmp(buf.data(), kMagic, 4) != 0)
    throw IoError(path + ": not a tensor container");
  const std::uint32_t stored_crc = [&] {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[buf.size() - 4 + i])) << (8 * i);
    return v;
  }();
  if (crc_of(buf, buf.size() - 4) != stored_crc)
    throw IoError(path + ": CRC mismatch, file is corrupt");

  Reader r{buf, 4};
  const std::uint32_t version = r.u32();
  if (version != kVersion)
    throw IoError(path + ": unsupported container version " + std::to_string(version));
  Container c;
  c.meta = r.bytes(r.u64());
  const std::uint64_t count = r.u64();
  for (std::uint64_t i = 0; i < count; ++i) {
    RawTensor t;
    t.name = r.bytes(r.u64());
    t.dtype = r.u8();
    const std::uint8_t rank = r.u8();
    for (std::uint8_t d = 0; d < rank; ++d) t.shape.push_back(static_cast<std::int64_t>(r.u64()));
    const std::uint64_t n = static_cast<std::uint64_t>(numel_of(t.shape));
    if (t.dtype == kDtypeF32) {
      const std::string payload = r.bytes(n * sizeof(float));
      t.f32.resize(n);
      std::memcpy(t.f32.data(), payload.data(), payload.size());
    } else if (t.dtype == kDtypeF64) {
      const std::string payload = r.bytes(n * sizeof(double));
      t.f64.resize(n);
      std::memcpy(t.f64.data(), payload.data(), payload.size());
    } else {
      throw IoError(path + ": tensor " + t.name + " has unknown dtype tag " +
                    std::to_string(t.dtype));
    }
    c.tensors.push_back(std::move(t));
  }
  return c;
}

std::string checkpoint_meta_json(const CheckpointMeta& meta) {
  json j;
  j["kind"] = "checkpoint";
  j["model"] = json::parse(model_config_json(meta.model));
  j["epoch"] = meta.epoch;
  j["steps"] = meta.steps;
  j["dtype"] = meta.dtype;
  json rng;
  rng["data"] = meta.rng_data;
  rng["mixup"] = meta.rng_mixup;
  rng["dropout"] = meta.rng_dropout;
  j["rng"] = rng;
  return j.dump();
}

CheckpointMeta parse_checkpoint_meta(const std::string& text) {
  json j = json::parse(text, nullptr, false);
  if (j.is_discarded() || !j.is_object() || j.value("kind", "") != "checkpoint")
    throw IoError("not a checkpoint container");
  CheckpointMeta meta;
  meta.model = parse_model_config(j.at("model").dump());
  meta.epoch = j.value("epoch", std::int64_t(0));
  meta.steps = j.value("steps", std::int64_t(0));
  meta.dtype = static_cast<std::uint8_t>(j.value("dtype", 1));
  if (j.contains("rng")) {
    meta.rng_data = j["rng"].value("data", "");
    meta.rng_mixup = j["rng"].value("mixup", "");
    meta.rng_dropout = j["rng"].value("dropout", "");
  }
  return meta;
}

CheckpointMeta peek_checkpoint_meta(const std::string& path) {
  return parse_checkpoint_meta(read_container(path).meta);
}

namespace {

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

void write_features_csv(const std::string& path, const FeatureSet& fs) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << "label";
  for (std::int64_t c = 0; c < fs.channels; ++c)
    for (std::int64_t t = 0; t < fs.t_len; ++t) out << ",c" << c << "_t" << t;
  out << "\n";
  for (std::int64_t i = 0; i < fs.size(); ++i) {
    out << fs.labels[static_cast<std::size_t>(i)];
    for (double v : fs.x[static_cast<std::size_t>(i)].data) out << ',' << format_double(v);
    out << "\n";
  }
  if (!out) throw IoError("failed writing " + path);
}

FeatureSet read_features_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::string header;
  if (!std::getline(in, header)) throw IoError(path + ": empty feature file");
  // header cells look like c<channel>_t<time>; the last one fixes both extents
  const std::size_t last_comma = header.rfind(',');
  if (last_comma == std::string::npos || header.substr(0, 5) != "label")
    throw IoError(path + ": malformed feature CSV header");
  const std::string last = header.substr(last_comma + 1);
  std::int64_t channels = 0, t_len = 0;
  if (std::sscanf(last.c_str(), "c%lld_t%lld", reinterpret_cast<long long*>(&channels),
                  reinterpret_cast<long long*>(&t_len)) != 2)
    throw IoError(path + ": malformed feature CSV header cell '" + last + "'");
  ++channels;
  ++t_len;

  FeatureSet fs;
  fs.channels = channels;
  fs.t_len = t_len;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string cell;
    if (!std::getline(ls, cell, ',')) throw IoError(path + ": short row");
    fs.labels.push_back(std::stoll(cell));
    Tensor<double> x = Tensor<double>::zeros({channels, t_len});
    for (std::int64_t i = 0; i < channels * t_len; ++i) {
      if (!std::getline(ls, cell, ',')) throw IoError(path + ": short row");
      x.data[static_cast<std::size_t>(i)] = std::stod(cell);
    }
    fs.x.push_back(std::move(x));
  }
  if (fs.x.empty()) throw IoError(path + ": no samples");
  return fs;
}

}  // namespace

void write_features(const std::string& path, const FeatureSet& fs) {
  if (fs.x.empty()) throw UsageError("write_features: empty feature set");
  if (ends_with(path, ".csv")) {
    write_features_csv(path, fs);
    return;
  }
  Container c;
  json j;
  j["kind"] = "features";
  j["channels"] = fs.channels;
  j["t"] = fs.t_len;
  j["count"] = fs.size();
  c.meta = j.dump();

  RawTensor feat;
  feat.name = "features";
  feat.dtype = kDtypeF64;
  feat.shape = {fs.size(), fs.channels, fs.t_len};
  feat.f64.reserve(static_cast<std::size_t>(feat.numel()));
  for (const auto& x : fs.x) feat.f64.insert(feat.f64.end(), x.data.begin(), x.data.end());
  c.tensors.push_back(std::move(feat));

  RawTensor labels;
  labels.name = "labels";
  labels.dtype = kDtypeF64;
  labels.shape = {fs.size()};
  for (auto l : fs.labels) labels.f64.push_back(static_cast<double>(l));
  c.tensors.push_back(std::move(labels));
  write_container(path, c);
}

FeatureSet read_features(const std::string& path) {
  if (ends_with(path, ".csv")) return read_features_csv(path);
  Container c = read_container(path);
  json j = json::parse(c.meta, nullptr, false);
  if (j.is_discarded() || j.value("kind", "") != "features")
    throw IoError(path + ": not a feature container");
  const RawTensor* feat = nullptr;
  const RawTensor* labels = nullptr;
  for (const auto& t : c.tensors) {
    if (t.name == "features") feat = &t;
    if (t.name == "labels") labels = &t;
  }
  if (!feat || !labels || feat->shape.size() != 3)
    throw IoError(path + ": malformed feature container");
  FeatureSet fs;
  fs.channels = feat->shape[1];
  fs.t_len = feat->shape[2];
  const std::int64_t n = feat->shape[0];
  const std::int64_t item = fs.channels * fs.t_len;
  for (std::int64_t i = 0; i < n; ++i) {
    Tensor<double> x = Tensor<double>::zeros({fs.channels, fs.t_len});
    if (feat->dtype == kDtypeF64)
      std::copy(feat->f64.begin() + i * item, feat->f64.begin() + (i + 1) * item, x.data.begin());
    else
      std::copy(feat->f32.begin() + i * item, feat->f32.begin() + (i + 1) * item, x.data.begin());
    fs.x.push_back(std::move(x));
    fs.labels.push_back(static_cast<std::int64_t>(
        labels->dtype == kDtypeF64 ? labels->f64[static_cast<std::size_t>(i)]
                                   : labels->f32[static_cast<std::size_t>(i)]));
  }
  return fs;
}

}  // namespace td3
