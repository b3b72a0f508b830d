#pragma once

#include <functional>
#include <string>
#include <string_view>
#include <unordered_set>
#include <utility>
#include <vector>

#include "tripletforge/diff/tensor.hpp"

namespace tforge::diff {

namespace testing {

// Name of a primitive whose backward rule is sign-flipped. Mutation-testing hook
// for the gradient checker; empty in normal operation.
inline std::string& backward_fault() {
  static std::string op;
  return op;
}

}  // namespace testing

/// Tape of primitive operations recorded during a forward pass.
///
/// Records are appended in execution order, so every record's inputs were
/// produced by an earlier record (or are leaves). backprop() replays the
/// backward rules in reverse.
class Graph {
 public:
  struct Record {
    std::string op;
    std::vector<Tensor> outputs;
    std::function<void()> backward;
  };

  explicit Graph(bool recording = true) : recording_(recording) {}

  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;
  Graph(Graph&&) = default;
  Graph& operator=(Graph&&) = default;

  bool recording() const { return recording_; }
  std::size_t size() const { return tape_.size(); }
  const std::vector<Record>& records() const { return tape_; }
  void clear() { tape_.clear(); }

  /// True when an op over `inputs` must be taped.
  bool tracks(std::initializer_list<const Tensor*> inputs) const {
    if (!recording_) return false;
    for (const auto* t : inputs) {
      if (t && t->defined() && t->requires_grad()) return true;
    }
    return false;
  }

  void record(std::string op, std::vector<Tensor> outputs, std::function<void()> backward) {
    for (auto& out : outputs) out.set_requires_grad(true);
    tape_.push_back({std::move(op), std::move(outputs), std::move(backward)});
  }

  /// Accumulates d(loss)/d(leaf) into every reachable requires_grad leaf.
  /// Intermediate gradients are reset first, so calling twice doubles leaf grads.
  void backprop(const Tensor& loss) {
    if (!loss.defined() || loss.size() != 1) {
      throw ShapeError("backprop: loss must be a scalar, got " +
                       (loss.defined() ? to_string(loss.shape()) : std::string("undefined")));
    }
    bool found = false;
    for (auto& rec : tape_) {
      for (auto& out : rec.outputs) {
        out.storage().ensure_grad();
        out.zero_grad();
        if (out.same_storage(loss)) found = true;
      }
    }
    if (!found) throw Error("backprop: loss was not produced by this graph");
    loss.grad()[0] = 1.0;

    const auto& fault = testing::backward_fault();
    for (auto it = tape_.rbegin(); it != tape_.rend(); ++it) {
      bool flip = !fault.empty() && it->op == fault;
      if (flip) negate_output_grads(*it);
      it->backward();
      if (flip) negate_output_grads(*it);
    }
  }

 private:
  static void negate_output_grads(Record& rec) {
    for (auto& out : rec.outputs) {
      for (auto& g : out.grad()) g = -g;
    }
  }

  bool recording_;
  std::vector<Record> tape_;
};

}  // namespace tforge::diff
