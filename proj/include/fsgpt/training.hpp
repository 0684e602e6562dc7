#pragma once

// Parameter bookkeeping and optimization shared by pretraining and
// fine-tuning: a named parameter store with deterministic iteration order,
// freeze plans, and Adam.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "fsgpt/common.hpp"
#include "fsgpt/rng.hpp"
#include "fsgpt/tensor.hpp"

namespace fsgpt {

template <typename T>
class ParameterStore {
 public:
  Tensor<T> add(const std::string& name, Tensor<T> t) {
    if (index_.count(name)) throw ContractError("ParameterStore: duplicate name " + name);
    t.set_requires_grad(true);
    index_[name] = names_.size();
    names_.push_back(name);
    tensors_.push_back(t);
    return t;
  }

  Tensor<T> add_gaussian(const std::string& name, Shape shape, double stddev, Rng& rng) {
    size_t n = shape_numel(shape);
    std::vector<T> data(n);
    for (auto& v : data) v = static_cast<T>(rng.normal(0.0, stddev));
    return add(name, Tensor<T>::from(std::move(shape), std::move(data)));
  }

  Tensor<T> add_zeros(const std::string& name, Shape shape) {
    return add(name, Tensor<T>::zeros(std::move(shape)));
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  Tensor<T>& get(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw ContractError("ParameterStore: no parameter named " + name);
    return tensors_[it->second];
  }
  const Tensor<T>& get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ContractError("ParameterStore: no parameter named " + name);
    return tensors_[it->second];
  }

  // Insertion order; stable across runs for a fixed construction sequence.
  const std::vector<std::string>& names() const { return names_; }
  size_t size() const { return names_.size(); }

  Tensor<T>& at(size_t i) { return tensors_.at(i); }
  const Tensor<T>& at(size_t i) const { return tensors_.at(i); }

  void zero_grads() {
    for (auto& t : tensors_) t.zero_grad();
  }

  // Zero-fill gradients of trainable tensors the last graph never touched,
  // so the optimizer's populated-grad contract holds for every batch.
  void fill_missing_grads() {
    for (auto& t : tensors_) {
      if (t.requires_grad()) t.ensure_grad();
    }
  }

 private:
  std::vector<std::string> names_;
  std::vector<Tensor<T>> tensors_;
  std::unordered_map<std::string, size_t> index_;
};

// Sum of element counts over parameters whose name starts with `prefix`
// (empty prefix matches everything).
template <typename T>
size_t count_params(const ParameterStore<T>& store, const std::string& prefix = "") {
  size_t total = 0;
  for (size_t i = 0; i < store.size(); ++i) {
    const std::string& name = store.names()[i];
    if (name.rfind(prefix, 0) == 0) total += store.at(i).numel();
  }
  return total;
}

// Marks which parameters stay trainable; everything else is frozen.
// Matching is by name prefix so "head.bp" covers "head.bp.w" and "head.bp.b".
struct FreezePlan {
  std::vector<std::string> trainable_prefixes;

  bool trainable(const std::string& name) const {
    for (const auto& p : trainable_prefixes) {
      if (name.rfind(p, 0) == 0) return true;
    }
    return false;
  }

  template <typename T>
  void apply(ParameterStore<T>& store) const {
    for (size_t i = 0; i < store.size(); ++i) {
      store.at(i).set_requires_grad(trainable(store.names()[i]));
    }
  }

  template <typename T>
  double trainable_ratio(const ParameterStore<T>& store) const {
    size_t total = 0, train = 0;
    for (size_t i = 0; i < store.size(); ++i) {
      const size_t n = store.at(i).numel();
      total += n;
      if (trainable(store.names()[i])) train += n;
    }
    if (total == 0) return 0.0;
    return static_cast<double>(train) / static_cast<double>(total);
  }
};

inline FreezePlan freeze_all_except(std::vector<std::string> prefixes) {
  FreezePlan plan;
  plan.trainable_prefixes = std::move(prefixes);
  return plan;
}

struct AdamConfig {
  double lr = 3.00e-7;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename T>
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  const AdamConfig& config() const { return cfg_; }
  void set_lr(double lr) { cfg_.lr = lr; }
  uint64_t steps() const { return step_; }

  // One bias-corrected update over all trainable parameters. Frozen
  // parameters are untouched; their stale moments (if any) are kept.
  void step(ParameterStore<T>& store) {
    ++step_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
    for (size_t i = 0; i < store.size(); ++i) {
      Tensor<T>& p = store.at(i);
      if (!p.requires_grad()) continue;
      const std::string& name = store.names()[i];
      if (!p.has_grad()) {
        throw ContractError("Adam: trainable parameter " + name + " has no gradient");
      }
      auto& m = m_[name];
      auto& v = v_[name];
      if (m.size() != p.numel()) m.assign(p.numel(), T{0});
      if (v.size() != p.numel()) v.assign(p.numel(), T{0});
      const T* g = p.grad().data();
      T* w = p.value().data();
      for (size_t j = 0; j < p.numel(); ++j) {
        const double gj = g[j];
        const double mj = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * gj;
        const double vj = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * gj * gj;
        m[j] = static_cast<T>(mj);
        v[j] = static_cast<T>(vj);
        const double mhat = mj / bc1;
        const double vhat = vj / bc2;
        w[j] = static_cast<T>(w[j] - cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps));
      }
    }
    store.zero_grads();
  }

  // Checkpoint access. Moments are keyed by parameter name.
  std::vector<std::string> state_names() const {
    std::vector<std::string> out;
    out.reserve(m_.size());
    for (const auto& [name, _] : m_) out.push_back(name);
    std::sort(out.begin(), out.end());
    return out;
  }
  const std::vector<T>* moment1(const std::string& name) const {
    auto it = m_.find(name);
    return it == m_.end() ? nullptr : &it->second;
  }
  const std::vector<T>* moment2(const std::string& name) const {
    auto it = v_.find(name);
    return it == v_.end() ? nullptr : &it->second;
  }
  void restore(const std::string& name, std::vector<T> m, std::vector<T> v) {
    m_[name] = std::move(m);
    v_[name] = std::move(v);
  }
  void set_steps(uint64_t s) { step_ = s; }

 private:
  AdamConfig cfg_;
  uint64_t step_ = 0;
  std::unordered_map<std::string, std::vector<T>> m_, v_;
};

}  // namespace fsgpt
