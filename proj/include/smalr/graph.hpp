#ifndef SMALR_GRAPH_HPP_
#define SMALR_GRAPH_HPP_

#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "smalr/tensor.hpp"

namespace smalr {

/// A named leaf tensor with an accumulated gradient.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  bool trainable = true;
};

/// Owns parameters in insertion order. Pointers returned by add() stay valid
/// for the lifetime of the store.
class ParameterStore {
 public:
  ParameterStore() = default;
  ParameterStore(const ParameterStore&) = delete;
  ParameterStore& operator=(const ParameterStore&) = delete;
  ParameterStore(ParameterStore&&) = default;
  ParameterStore& operator=(ParameterStore&&) = default;

  Parameter& add(std::string name, Tensor value, bool trainable = true);
  Parameter* find(const std::string& name);
  const Parameter* find(const std::string& name) const;
  Parameter& at(const std::string& name);
  const Parameter& at(const std::string& name) const;

  std::size_t size() const { return params_.size(); }
  Parameter& operator[](std::size_t i) { return *params_[i]; }
  const Parameter& operator[](std::size_t i) const { return *params_[i]; }

  void zero_grad();
  /// Total count of trainable scalars.
  std::size_t trainable_count() const;
  /// FNV-1a over names, shapes and raw value bytes.
  std::uint64_t checksum() const;

  std::vector<Tensor> snapshot() const;
  void restore(const std::vector<Tensor>& values);

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Handle to a node in a Graph.
struct Var {
  std::size_t id = static_cast<std::size_t>(-1);
  bool valid() const { return id != static_cast<std::size_t>(-1); }
};

/// Eager reverse-mode tape. Every op computes its value immediately and
/// records a backward closure; backward() walks the tape in reverse.
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Tensor value, const char* label = "const");
  /// Leaf bound to a parameter; repeated calls for the same parameter return
  /// the same node.
  Var param(Parameter& p);

  const Tensor& value(Var v) const;
  double scalar(Var v) const { return value(v).item(); }
  /// Gradient of the last backward() for a non-parameter node.
  const Tensor& grad(Var v) const;
  std::size_t size() const { return nodes_.size(); }

  Var matmul(Var a, Var b);
  /// a + b; b may be a 1 x cols row broadcast over the rows of a.
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var a, double s);
  Var add_scalar(Var a, double s);
  Var concat_cols(std::span<const Var> parts);
  Var concat_rows(std::span<const Var> parts);
  Var slice_cols(Var a, std::size_t begin, std::size_t count);
  Var slice_rows(Var a, std::size_t begin, std::size_t count);
  /// axis 0: mean over rows -> 1 x cols. axis 1: mean over cols -> rows x 1.
  Var mean(Var a, int axis);
  Var sum(Var a);
  Var tanh(Var a);
  Var sigmoid(Var a);
  Var relu(Var a);
  Var gather_rows(Var table, std::span<const std::size_t> rows);
  /// Row-wise unit normalisation. Zero rows are an error.
  Var l2_normalize(Var a);
  /// 1 - cos(a, b) for two 1 x n rows.
  Var cosine_distance(Var a, Var b);
  /// Per-row cosine distance of two equally shaped matrices, as a column.
  Var row_cosine_distance(Var a, Var b);
  Var dot(Var a, Var b);
  /// Mean softmax cross-entropy of each row of `logits` against `labels`.
  Var softmax_cross_entropy(Var logits, std::span<const std::size_t> labels);
  /// sqrt of the sum of squares of all entries.
  Var euclidean_norm(Var a);
  /// Euclidean norm of every row, as a column (subgradient 0 at zero rows).
  Var row_norms(Var a);
  /// Identity forward, negated gradient backward.
  Var grad_reverse(Var a);
  /// With reversal off, grad_reverse passes gradients through unchanged,
  /// so backward() yields the true derivative of the loss.
  void set_gradient_reversal(bool on) { reverse_ = on; }

  /// Accumulates d(loss)/d(param) into every reachable Parameter::grad.
  void backward(Var loss);

 private:
  using BackFn = std::function<void(Graph&, std::size_t)>;
  struct Node {
    const char* op = "";
    Tensor value;
    Tensor grad;
    std::vector<std::size_t> inputs;
    BackFn back;
    Parameter* param = nullptr;
    bool touched = false;
    bool live = false;
  };

  Var push(const char* op, Tensor value, std::vector<std::size_t> inputs, BackFn back);
  const Node& node(Var v) const;
  const Tensor& val(std::size_t id) const;
  Tensor& grad_ref(std::size_t id);
  void accumulate(std::size_t id, const Tensor& g);
  bool live(std::size_t id) const { return nodes_[id].live; }
  const Tensor& out_grad(std::size_t id) const { return nodes_[id].grad; }

  std::vector<Node> nodes_;
  std::map<const Parameter*, std::size_t> param_nodes_;
  bool reverse_ = true;
  std::deque<Tensor> scratch_;  // sink for gradients of nodes that need none
};

/// Weights of one gated recurrent cell. Input projections are packed as
/// [update | reset | candidate] along the columns.
struct GruWeights {
  Parameter* input = nullptr;      // in x 3h
  Parameter* gates = nullptr;      // h x 2h, recurrent [update | reset]
  Parameter* candidate = nullptr;  // h x h, recurrent candidate
  Parameter* bias = nullptr;       // 1 x 3h
};

/// One GRU step: z = s(xWz + hUz + bz), r = s(xWr + hUr + br),
/// n = tanh(xWn + (r*h)Un + bn), h' = (1 - z)*n + z*h.
Var gru_step(Graph& g, const GruWeights& w, Var x, Var h);

/// Central-difference gradient check. `build` must construct the scalar loss
/// on a fresh graph from the current parameter values; gradient reversal is
/// switched off on that graph. Returns the maximum of
/// |g_ad - g_fd| / max(1e-8, |g_ad| + |g_fd|) over every trainable entry.
double fd_check(const std::function<Var(Graph&)>& build, std::span<Parameter* const> params,
                double eps);

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

class Adam {
 public:
  explicit Adam(AdamConfig config = {}) : config_(config) {}

  /// Applies one update to every trainable parameter from its grad.
  void step(std::span<Parameter* const> params);
  void step(ParameterStore& store);
  std::size_t steps() const { return step_; }
  const AdamConfig& config() const { return config_; }

 private:
  struct Moments {
    Tensor m;
    Tensor v;
  };
  AdamConfig config_;
  std::size_t step_ = 0;
  std::map<const Parameter*, Moments> moments_;
};

/// Binary checkpoint: magic, version, then per tensor name, shape, trainable
/// flag and raw float64 values. Round trips bit-exactly.
void save_checkpoint(const ParameterStore& store, const std::string& path);
/// Loads into an existing store; every stored name must exist with the same
/// shape, and every store entry must be present in the file.
void load_checkpoint(ParameterStore& store, const std::string& path);
/// Reads a checkpoint as a name -> tensor map without a target store.
std::map<std::string, Tensor> read_checkpoint(const std::string& path);

struct CheckpointEntry {
  std::string name;
  Tensor value;
  bool trainable = true;
};

/// Entries in file order.
std::vector<CheckpointEntry> read_checkpoint_entries(const std::string& path);
/// A fresh store holding every checkpoint entry, in file order.
ParameterStore load_store(const std::string& path);

std::uint64_t fnv1a(std::span<const unsigned char> bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::uint64_t fnv1a(const std::string& s);
std::string hex64(std::uint64_t v);

}  // namespace smalr

#endif  // SMALR_GRAPH_HPP_
