#pragma once

#include <cstring>
#include <fstream>

#include "mvps/nn.hpp"

namespace mvps::ad {

// Versioned binary model container: architecture spec + named parameter
// segments. Shared by the normal regressor and the distance-field MLP.
inline constexpr char kModelMagic[8] = {'M', 'V', 'P', 'S', 'M', 'D', 'L', '1'};

namespace model_detail {

inline void write_str(std::ofstream& f, const std::string& s) {
  uint32_t n = uint32_t(s.size());
  f.write(reinterpret_cast<const char*>(&n), 4);
  f.write(s.data(), std::streamsize(s.size()));
}
inline std::string read_str(std::ifstream& f) {
  uint32_t n = 0;
  f.read(reinterpret_cast<char*>(&n), 4);
  if (!f || n > (1u << 20)) throw IoError("model: corrupt string field");
  std::string s(n, '\0');
  f.read(s.data(), std::streamsize(n));
  return s;
}
template <typename T>
inline void write_pod(std::ofstream& f, T v) {
  f.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <typename T>
inline T read_pod(std::ifstream& f) {
  T v{};
  f.read(reinterpret_cast<char*>(&v), sizeof(T));
  return v;
}

}  // namespace model_detail

inline void save_model(const std::string& path, const MlpSpec& spec,
                       const ParamVector& params) {
  using namespace model_detail;
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("save_model: cannot open " + path);
  f.write(kModelMagic, 8);
  write_pod<int32_t>(f, spec.in_dim);
  write_pod<int32_t>(f, int32_t(spec.hidden.size()));
  for (int h : spec.hidden) write_pod<int32_t>(f, h);
  write_pod<int32_t>(f, spec.out_dim);
  write_pod<int32_t>(f, spec.activation == Activation::kSoftplus ? 0 : 1);
  write_pod<double>(f, spec.softplus_beta);
  write_pod<int32_t>(f, spec.skip_at);
  write_pod<double>(f, spec.dropout_q);
  write_str(f, spec.prefix);
  write_pod<int32_t>(f, int32_t(params.items.size()));
  for (const auto& [name, t] : params.items) {
    write_str(f, name);
    write_pod<int32_t>(f, int32_t(t.shape.size()));
    for (int64_t e : t.shape) write_pod<int64_t>(f, e);
    f.write(reinterpret_cast<const char*>(t.data.data()),
            std::streamsize(t.data.size() * sizeof(double)));
  }
  if (!f) throw IoError("save_model: short write to " + path);
}

struct LoadedModel {
  MlpSpec spec;
  ParamVector params;
};

inline LoadedModel load_model(const std::string& path) {
  using namespace model_detail;
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("load_model: cannot open " + path);
  char magic[8];
  f.read(magic, 8);
  if (!f || std::memcmp(magic, kModelMagic, 8) != 0)
    throw IoError("load_model: " + path + " is not a model file (bad magic)");
  LoadedModel m;
  m.spec.in_dim = read_pod<int32_t>(f);
  int32_t nh = read_pod<int32_t>(f);
  if (nh < 0 || nh > 64) throw IoError("load_model: corrupt layer count in " + path);
  m.spec.hidden.resize(size_t(nh));
  for (int32_t i = 0; i < nh; ++i) m.spec.hidden[size_t(i)] = read_pod<int32_t>(f);
  m.spec.out_dim = read_pod<int32_t>(f);
  m.spec.activation = read_pod<int32_t>(f) == 0 ? Activation::kSoftplus : Activation::kTanh;
  m.spec.softplus_beta = read_pod<double>(f);
  m.spec.skip_at = read_pod<int32_t>(f);
  m.spec.dropout_q = read_pod<double>(f);
  m.spec.prefix = read_str(f);
  int32_t nseg = read_pod<int32_t>(f);
  for (int32_t s = 0; s < nseg; ++s) {
    std::string name = read_str(f);
    int32_t rank = read_pod<int32_t>(f);
    if (rank < 0 || rank > 4) throw IoError("load_model: corrupt tensor rank in " + path);
    Shape shape(static_cast<size_t>(rank));
    for (int32_t i = 0; i < rank; ++i) shape[size_t(i)] = read_pod<int64_t>(f);
    Tensor t(shape);
    f.read(reinterpret_cast<char*>(t.data.data()),
           std::streamsize(t.data.size() * sizeof(double)));
    m.params.add(name, std::move(t));
  }
  if (!f) throw IoError("load_model: truncated data in " + path);
  return m;
}

}  // namespace mvps::ad
