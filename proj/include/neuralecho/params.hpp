// SPDX-License-Identifier: Apache-2.0
#ifndef NEURALECHO_PARAMS_HPP
#define NEURALECHO_PARAMS_HPP

#include <cstdint>
#include <deque>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "neuralecho/tensor.hpp"

namespace neuralecho {

// Named parameter set with gradients and Adam moments. Entry order is the
// model construction order and is part of the determinism contract (gradient
// clipping, Adam and checkpoints all iterate it).
template <typename Real>
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Tensor<Real> value;
    Tensor<Real> grad;
    Tensor<Real> m, v;  // Adam moments, allocated on first step
  };

  Tensor<Real>& add(const std::string& name, std::vector<std::size_t> shape) {
    check(index_.find(name) == index_.end(), "ParamStore: duplicate parameter ", name);
    Entry e;
    e.name = name;
    e.value = Tensor<Real>(shape);
    e.grad = Tensor<Real>(shape);
    index_[name] = entries_.size();
    entries_.push_back(std::move(e));
    return entries_.back().value;
  }

  bool has(const std::string& name) const { return index_.count(name) != 0; }

  Entry& at(const std::string& name) {
    auto it = index_.find(name);
    check(it != index_.end(), "ParamStore: unknown parameter ", name);
    return entries_[it->second];
  }
  const Entry& at(const std::string& name) const {
    auto it = index_.find(name);
    check(it != index_.end(), "ParamStore: unknown parameter ", name);
    return entries_[it->second];
  }

  std::deque<Entry>& entries() { return entries_; }
  const std::deque<Entry>& entries() const { return entries_; }

  std::size_t total_params() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.value.numel();
    return n;
  }

  void zero_grads() {
    for (auto& e : entries_) e.grad.fill(Real(0));
  }

  double grad_norm() const {
    double acc = 0.0;
    for (const auto& e : entries_)
      for (Real g : e.grad.data) acc += static_cast<double>(g) * static_cast<double>(g);
    return std::sqrt(acc);
  }

  // Global L2 clipping; returns the pre-clip norm.
  double clip_grad_norm(double max_norm) {
    const double norm = grad_norm();
    if (norm > max_norm && norm > 0.0) {
      const Real s = static_cast<Real>(max_norm / norm);
      for (auto& e : entries_)
        for (Real& g : e.grad.data) g *= s;
    }
    return norm;
  }

  std::int64_t step_count = 0;

  template <typename Other>
  ParamStore<Other> cast() const {
    ParamStore<Other> out;
    for (const auto& e : entries_) {
      out.add(e.name, e.value.shape);
      out.at(e.name).value = e.value.template cast<Other>();
    }
    out.step_count = step_count;
    return out;
  }

 private:
  // deque keeps references from add() stable across later insertions
  std::deque<Entry> entries_;
  std::map<std::string, std::size_t> index_;
};

// Standard Adam with bias correction. Gradients are expected to be populated
// (and optionally clipped) by the caller.
template <typename Real>
void adam_step(ParamStore<Real>& params, double lr, double beta1 = 0.9, double beta2 = 0.999,
               double eps = 1e-8) {
  params.step_count += 1;
  const double t = static_cast<double>(params.step_count);
  const double bc1 = 1.0 - std::pow(beta1, t);
  const double bc2 = 1.0 - std::pow(beta2, t);
  for (auto& e : params.entries()) {
    if (e.m.data.empty()) {
      e.m = Tensor<Real>(e.value.shape);
      e.v = Tensor<Real>(e.value.shape);
    }
    for (std::size_t i = 0; i < e.value.numel(); ++i) {
      const double g = static_cast<double>(e.grad[i]);
      const double m = beta1 * static_cast<double>(e.m[i]) + (1.0 - beta1) * g;
      const double v = beta2 * static_cast<double>(e.v[i]) + (1.0 - beta2) * g * g;
      e.m[i] = static_cast<Real>(m);
      e.v[i] = static_cast<Real>(v);
      e.value[i] -= static_cast<Real>(lr * (m / bc1) / (std::sqrt(v / bc2) + eps));
    }
  }
}

// ---------------------------------------------------------------------------
// Checkpoint format "NEC1": magic, format version, a JSON model-config blob,
// then a table of (name, dtype, shape, offset) entries followed by raw
// little-endian float32 tensor data. Optimizer state is stored under the
// reserved "__opt." prefix.
// ---------------------------------------------------------------------------

namespace checkpoint_detail {

inline void write_u32(std::ostream& out, std::uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), 4);
}
inline void write_u64(std::ostream& out, std::uint64_t v) {
  out.write(reinterpret_cast<const char*>(&v), 8);
}
inline std::uint32_t read_u32(std::istream& in) {
  std::uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), 4);
  return v;
}
inline std::uint64_t read_u64(std::istream& in) {
  std::uint64_t v = 0;
  in.read(reinterpret_cast<char*>(&v), 8);
  return v;
}
inline void write_str(std::ostream& out, const std::string& s) {
  write_u32(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}
inline std::string read_str(std::istream& in) {
  const std::uint32_t n = read_u32(in);
  std::string s(n, '\0');
  in.read(s.data(), n);
  return s;
}

}  // namespace checkpoint_detail

template <typename Real>
void save_checkpoint(const ParamStore<Real>& params, const std::string& config_json,
                     const std::string& path, bool include_optimizer_state = true) {
  using namespace checkpoint_detail;
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  check(out.good(), "save_checkpoint: cannot open ", path);

  struct Item {
    std::string name;
    const Tensor<Real>* tensor;
  };
  std::vector<Item> items;
  for (const auto& e : params.entries()) items.push_back({e.name, &e.value});
  Tensor<Real> step_tensor({1});
  step_tensor[0] = static_cast<Real>(params.step_count);
  if (include_optimizer_state) {
    for (const auto& e : params.entries()) {
      if (e.m.data.empty()) continue;
      items.push_back({"__opt.m." + e.name, &e.m});
      items.push_back({"__opt.v." + e.name, &e.v});
    }
    items.push_back({"__opt.step", &step_tensor});
  }

  out.write("NEC1", 4);
  write_u32(out, 1);  // format version
  write_str(out, config_json);
  write_u64(out, items.size());

  std::uint64_t offset = 0;
  for (const auto& item : items) {
    write_str(out, item.name);
    out.put(0);  // dtype: float32
    out.put(static_cast<char>(item.tensor->rank()));
    for (std::size_t d : item.tensor->shape) write_u64(out, d);
    write_u64(out, offset);
    offset += item.tensor->numel() * 4;
  }
  for (const auto& item : items)
    for (Real v : item.tensor->data) {
      const float f = static_cast<float>(v);
      out.write(reinterpret_cast<const char*>(&f), 4);
    }
  check(out.good(), "save_checkpoint: write failed for ", path);
}

struct CheckpointData {
  std::string config_json;
  std::vector<std::pair<std::string, Tensor<float>>> tensors;

  const Tensor<float>* find(const std::string& name) const {
    for (const auto& [n, t] : tensors)
      if (n == name) return &t;
    return nullptr;
  }
};

inline CheckpointData load_checkpoint(const std::string& path) {
  using namespace checkpoint_detail;
  std::ifstream in(path, std::ios::binary);
  check(in.good(), "load_checkpoint: cannot open ", path);
  char magic[4];
  in.read(magic, 4);
  check(in.good() && std::string(magic, 4) == "NEC1", "load_checkpoint: bad magic in ", path);
  const std::uint32_t version = read_u32(in);
  check(version == 1, "load_checkpoint: unsupported format version ", version);

  CheckpointData data;
  data.config_json = read_str(in);
  const std::uint64_t count = read_u64(in);
  struct Meta {
    std::string name;
    std::vector<std::size_t> shape;
    std::uint64_t offset;
  };
  std::vector<Meta> metas;
  for (std::uint64_t i = 0; i < count; ++i) {
    Meta m;
    m.name = read_str(in);
    const int dtype = in.get();
    check(dtype == 0, "load_checkpoint: unsupported dtype for ", m.name);
    const int rank = in.get();
    for (int d = 0; d < rank; ++d) m.shape.push_back(static_cast<std::size_t>(read_u64(in)));
    m.offset = read_u64(in);
    metas.push_back(std::move(m));
  }
  const std::streampos data_start = in.tellg();
  for (const auto& m : metas) {
    Tensor<float> t(m.shape);
    in.seekg(data_start + static_cast<std::streamoff>(m.offset));
    in.read(reinterpret_cast<char*>(t.data.data()),
            static_cast<std::streamsize>(t.numel() * 4));
    check(in.good(), "load_checkpoint: truncated tensor ", m.name, " in ", path);
    data.tensors.emplace_back(m.name, std::move(t));
  }
  return data;
}

// Restores values (and optimizer moments when present) into an existing store
// whose layout was built from the checkpoint's config.
template <typename Real>
void restore_params(ParamStore<Real>& params, const CheckpointData& data) {
  for (auto& e : params.entries()) {
    const Tensor<float>* t = data.find(e.name);
    check(t != nullptr, "checkpoint: missing parameter ", e.name);
    check(t->shape == e.value.shape, "checkpoint: shape mismatch for ", e.name);
    e.value = t->template cast<Real>();
    if (const Tensor<float>* m = data.find("__opt.m." + e.name)) {
      e.m = m->template cast<Real>();
      const Tensor<float>* v = data.find("__opt.v." + e.name);
      check(v && v->shape == e.value.shape, "checkpoint: missing Adam v for ", e.name);
      e.v = v->template cast<Real>();
    }
  }
  if (const Tensor<float>* s = data.find("__opt.step"))
    params.step_count = static_cast<std::int64_t>((*s)[0]);
}

}  // namespace neuralecho

#endif  // NEURALECHO_PARAMS_HPP
