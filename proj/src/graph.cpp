#include "smalr/graph.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

namespace smalr {

// ---------------------------------------------------------------------------
// ParameterStore

Parameter& ParameterStore::add(std::string name, Tensor value, bool trainable) {
  if (index_.count(name) != 0) throw Error("duplicate parameter name: " + name);
  auto p = std::make_unique<Parameter>();
  p->name = name;
  p->grad = Tensor(value.rows(), value.cols());
  p->value = std::move(value);
  p->trainable = trainable;
  index_.emplace(std::move(name), params_.size());
  params_.push_back(std::move(p));
  return *params_.back();
}

Parameter* ParameterStore::find(const std::string& name) {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : params_[it->second].get();
}

const Parameter* ParameterStore::find(const std::string& name) const {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : params_[it->second].get();
}

Parameter& ParameterStore::at(const std::string& name) {
  Parameter* p = find(name);
  if (p == nullptr) throw Error("unknown parameter: " + name);
  return *p;
}

const Parameter& ParameterStore::at(const std::string& name) const {
  const Parameter* p = find(name);
  if (p == nullptr) throw Error("unknown parameter: " + name);
  return *p;
}

void ParameterStore::zero_grad() {
  for (auto& p : params_) p->grad.fill(0.0);
}

std::size_t ParameterStore::trainable_count() const {
  std::size_t n = 0;
  for (const auto& p : params_)
    if (p->trainable) n += p->value.size();
  return n;
}

std::uint64_t ParameterStore::checksum() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& p : params_) {
    h = fnv1a({reinterpret_cast<const unsigned char*>(p->name.data()), p->name.size()}, h);
    const std::uint64_t dims[2] = {p->value.rows(), p->value.cols()};
    h = fnv1a({reinterpret_cast<const unsigned char*>(dims), sizeof(dims)}, h);
    auto d = p->value.data();
    h = fnv1a({reinterpret_cast<const unsigned char*>(d.data()), d.size_bytes()}, h);
  }
  return h;
}

std::vector<Tensor> ParameterStore::snapshot() const {
  std::vector<Tensor> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(p->value);
  return out;
}

void ParameterStore::restore(const std::vector<Tensor>& values) {
  if (values.size() != params_.size()) throw ShapeError("restore: parameter count mismatch");
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (!values[i].same_shape(params_[i]->value)) {
      throw ShapeError("restore: shape mismatch for " + params_[i]->name);
    }
    params_[i]->value = values[i];
  }
}

// ---------------------------------------------------------------------------
// Graph plumbing

Var Graph::push(const char* op, Tensor value, std::vector<std::size_t> inputs, BackFn back) {
  const std::size_t id = nodes_.size();
  if (!value.all_finite()) {
    throw NumericError(std::string("non-finite value produced by '") + op + "' at node " +
                       std::to_string(id));
  }
  Node n;
  n.op = op;
  n.value = std::move(value);
  n.inputs = std::move(inputs);
  n.back = std::move(back);
  for (std::size_t i : n.inputs) n.live = n.live || nodes_[i].live;
  nodes_.push_back(std::move(n));
  return Var{id};
}

const Graph::Node& Graph::node(Var v) const {
  if (!v.valid() || v.id >= nodes_.size()) throw Error("invalid graph variable");
  return nodes_[v.id];
}

const Tensor& Graph::val(std::size_t id) const {
  const Node& n = nodes_[id];
  return n.param != nullptr ? n.param->value : n.value;
}

const Tensor& Graph::value(Var v) const {
  node(v);
  return val(v.id);
}

const Tensor& Graph::grad(Var v) const { return node(v).grad; }

Tensor& Graph::grad_ref(std::size_t id) {
  Node& n = nodes_[id];
  if (!n.live) {
    const Tensor& shape = n.param != nullptr ? n.param->value : n.value;
    return scratch_.emplace_back(shape.rows(), shape.cols());
  }
  if (n.param != nullptr) {
    if (!n.param->grad.same_shape(n.param->value)) {
      n.param->grad = Tensor(n.param->value.rows(), n.param->value.cols());
    }
    return n.param->grad;
  }
  if (!n.touched) {
    n.grad = Tensor(n.value.rows(), n.value.cols());
    n.touched = true;
  }
  return n.grad;
}

void Graph::accumulate(std::size_t id, const Tensor& g) {
  if (nodes_[id].live) grad_ref(id) += g;
}

Var Graph::constant(Tensor value, const char* label) {
  return push(label, std::move(value), {}, nullptr);
}

Var Graph::param(Parameter& p) {
  auto it = param_nodes_.find(&p);
  if (it != param_nodes_.end()) return Var{it->second};
  if (!p.value.all_finite()) throw NumericError("non-finite value in parameter " + p.name);
  const std::size_t id = nodes_.size();
  Node n;
  n.op = "param";
  n.param = &p;
  n.live = p.trainable;
  nodes_.push_back(std::move(n));
  param_nodes_.emplace(&p, id);
  return Var{id};
}

void Graph::backward(Var loss) {
  if (!loss.valid() || loss.id >= nodes_.size()) {
    throw Error("backward called before forward: loss node does not exist");
  }
  const Tensor& lv = val(loss.id);
  if (lv.rows() != 1 || lv.cols() != 1) {
    throw ShapeError("backward requires a scalar loss, got " + lv.shape_string());
  }
  for (Node& n : nodes_) {
    n.touched = false;
    n.grad = Tensor();
  }
  scratch_.clear();
  if (nodes_[loss.id].param != nullptr) {
    nodes_[loss.id].param->grad[0] += 1.0;
    return;
  }
  grad_ref(loss.id)[0] = 1.0;
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.touched || !n.back || !n.live) continue;
    n.back(*this, i);
  }
}

// ---------------------------------------------------------------------------
// Ops

namespace {

void require_same(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(op) + ": shape mismatch " + a.shape_string() + " vs " +
                     b.shape_string());
  }
}

void require_row(const Tensor& a, const char* op) {
  if (a.rows() != 1) throw ShapeError(std::string(op) + ": expected a row vector, got " + a.shape_string());
}

}  // namespace

Var Graph::matmul(Var a, Var b) {
  const Tensor& av = value(a);
  const Tensor& bv = value(b);
  Tensor out = smalr::matmul(av, bv);
  return push("matmul", std::move(out), {a.id, b.id}, [](Graph& g, std::size_t self) {
    const Node& n = g.nodes_[self];
    const std::size_t ai = n.inputs[0], bi = n.inputs[1];
    const Tensor& gout = n.grad;
    if (g.live(ai)) g.accumulate(ai, matmul_nt(gout, g.val(bi)));
    if (g.live(bi)) g.accumulate(bi, matmul_tn(g.val(ai), gout));
  });
}

Var Graph::add(Var a, Var b) {
  const Tensor& av = value(a);
  const Tensor& bv = value(b);
  const bool broadcast = bv.rows() == 1 && av.rows() != 1 && bv.cols() == av.cols();
  if (!broadcast) require_same(av, bv, "add");
  Tensor out = av;
  for (std::size_t r = 0; r < av.rows(); ++r)
    for (std::size_t c = 0; c < av.cols(); ++c) out(r, c) += broadcast ? bv(0, c) : bv(r, c);
  return push("add", std::move(out), {a.id, b.id}, [broadcast](Graph& g, std::size_t self) {
    const Node& n = g.nodes_[self];
    const Tensor& gout = n.grad;
    g.accumulate(n.inputs[0], gout);
    if (!broadcast) {
      g.accumulate(n.inputs[1], gout);
      return;
    }
    Tensor& gb = g.grad_ref(n.inputs[1]);
    for (std::size_t r = 0; r < gout.rows(); ++r)
      for (std::size_t c = 0; c < gout.cols(); ++c) gb(0, c) += gout(r, c);
  });
}

Var Graph::sub(Var a, Var b) {
  const Tensor& av = value(a);
  const Tensor& bv = value(b);
  require_same(av, bv, "sub");
  Tensor out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return push("sub", std::move(out), {a.id, b.id}, [](Graph& g, std::size_t self) {
    const Node& n = g.nodes_[self];
    g.accumulate(n.inputs[0], n.grad);
    Tensor& gb = g.grad_ref(n.inputs[1]);
    for (std::size_t i = 0; i < n.grad.size(); ++i) gb[i] -= n.grad[i];
  });
}

Var Graph::mul(Var a, Var b) {
  const Tensor& av = value(a);
  const Tensor& bv = value(b);
  require_same(av, bv, "mul");
  Tensor out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return push("mul", std::move(out), {a.id, b.id}, [](Graph& g, std::size_t self) {
    const Node& n = g.nodes_[self];
    const std::size_t ai = n.inputs[0], bi = n.inputs[1];
    {
      Tensor& ga = g.grad_ref(ai);
      const Tensor& bv2 = g.val(bi);
      for (std::size_t i = 0; i < n.grad.size(); ++i) ga[i] += n.grad[i] * bv2[i];
    }
    {
      Tensor& gb = g.grad_ref(bi);
      const Tensor& av2 = g.val(ai);
      for (std::size_t i = 0; i < n.grad.size(); ++i) gb[i] += n.grad[i] * av2[i];
    }
  });
}

Var Graph::scale(Var a, double s) {
  Tensor out = value(a);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= s;
  return push("scale", std::move(out), {a.id}, [s](Graph& g, std::size_t self) {
    const Node& n = g.nodes_[self];
    Tensor& ga = g.grad_ref(n.inputs[0]);
    for (std::size_t i = 0; i < n.grad.size(); ++i) ga[i] += s * n.grad[i];
  });
}

Var Graph::add_scalar(Var a, double s) {
  Tensor out = value(a);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += s;
  return push("add_scalar", std::move(out), {a.id}, [](Graph& g, std::size_t self) {
    const Node& n = g.nodes_[self];
    g.accumulate(n.inputs[0], n.grad);
  });
}

Var Graph::concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const std::size_t rows = value(parts[0]).rows();
  std::size_t cols = 0;
  std::vector<std::size_t> ids;
  for (Var p : parts) {
    if (value(p).rows() != rows) throw ShapeError("concat_cols: row count mismatch");
    cols += value(p).cols();
    ids.push_back(p.id);
  }
  Tensor out(rows, cols);
  std::size_t off = 0;
  for (Var p : parts) {
    const Tensor& v = value(p);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < v.cols(); ++c) out(r, off + c) = v(r, c);
    off += v.cols();
  }
  return push("concat_cols", std::move(out), std::move(ids), [](Graph& g, std::size_t self) {
    const Node& n = g.nodes_[self];
    std::size_t offset = 0;
    for (std::size_t in : n.inputs) {
      const std::size_t w = g.val(in).cols();
      Tensor& gi = g.grad_ref(in);
      for (std::size_t r = 0; r < n.grad.rows(); ++r)
        for (std::size_t c = 0; c < w; ++c) gi(r, c) += n.grad(r, offset + c);
      offset += w;
    }
  });
}

Var Graph::concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const std::size_t cols = value(parts[0]).cols();
  std::vector<double> data;
  std::vector<std::size_t> ids;
  std::size_t rows = 0;
  for (Var p : parts) {
    const Tensor& v = value(p);
    if (v.cols() != cols) throw ShapeError("concat_rows: column count mismatch");
    data.insert(data.end(), v.data().begin(), v.data().end());
    rows += v.rows();
    ids.push_back(p.id);
  }
  return push("concat_rows", Tensor(rows, cols, std::move(data)), std::move(ids),
              [](Graph& g, std::size_t self) {
                const Node& n = g.nodes_[self];
                std::size_t offset = 0;
                for (std::size_t in : n.inputs) {
                  Tensor& gi = g.grad_ref(in);
                  for (std::size_t i = 0; i < gi.size(); ++i) gi[i] += n.grad[offset + i];
                  offset += gi.size();
                }
              });
}

Var Graph::slice_cols(Var a, std::size_t begin, std::size_t count) {
  const Tensor& av = value(a);
  if (begin + count > av.cols()) throw ShapeError("slice_cols out of range");
  Tensor out(av.rows(), count);
  for (std::size_t r = 0; r < av.rows(); ++r)
    for (std::size_t c = 0; c < count; ++c) out(r, c) = av(r, begin + c);
  return push("slice_cols", std::move(out), {a.id}, [begin](Graph& g, std::size_t self) {
    const Node& n = g.nodes_[self];
    Tensor& ga = g.grad_ref(n.inputs[0]);
    for (std::size_t r = 0; r < n.grad.rows(); ++r)
      for (std::size_t c = 0; c < n.grad.cols(); ++c) ga(r, begin + c) += n.grad(r, c);
  });
}

Var Graph::slice_rows(Var a, std::size_t begin, std::size_t count) {
  const Tensor& av = value(a);
  if (begin + count > av.rows()) throw ShapeError("slice_rows out of range");
  std::vector<double> data(av.data().begin() + begin * av.cols(),
                           av.data().begin() + (begin + count) * av.cols());
  return push("slice_rows", Tensor(count, av.cols(), std::move(data)), {a.id},
              [begin](Graph& g, std::size_t self) {
                const Node& n = g.nodes_[self];
                Tensor& ga = g.grad_ref(n.inputs[0]);
                const std::size_t off = begin * ga.cols();
                for (std::size_t i = 0; i < n.grad.size(); ++i) ga[off + i] += n.grad[i];
              });
}

Var Graph::mean(Var a, int axis) {
  const Tensor& av = value(a);
  if (axis != 0 && axis != 1) throw ShapeError("mean: axis must be 0 or 1");
  if (av.empty()) throw ShapeError("mean of an empty tensor");
  Tensor out = axis == 0 ? Tensor(1, av.cols()) : Tensor(av.rows(), 1);
  for (std::size_t r = 0; r < av.rows(); ++r)
    for (std::size_t c = 0; c < av.cols(); ++c) {
      if (axis == 0) out(0, c) += av(r, c);
      else out(r, 0) += av(r, c);
    }
  const double inv = 1.0 / static_cast<double>(axis == 0 ? av.rows() : av.cols());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= inv;
  return push("mean", std::move(out), {a.id}, [axis, inv](Graph& g, std::size_t self) {
    const Node& n = g.nodes_[self];
    Tensor& ga = g.grad_ref(n.inputs[0]);
    for (std::size_t r = 0; r < ga.rows(); ++r)
      for (std::size_t c = 0; c < ga.cols(); ++c)
        ga(r, c) += inv * (axis == 0 ? n.grad(0, c) : n.grad(r, 0));
  });
}

Var Graph::sum(Var a) {
  double s = 0.0;
  for (double v : value(a).data()) s += v;
  return push("sum", Tensor::scalar(s), {a.id}, [](Graph& g, std::size_t self) {
    const Node& n = g.nodes_[self];
    Tensor& ga = g.grad_ref(n.inputs[0]);
    const double gv = n.grad[0];
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += gv;
  });
}

Var Graph::tanh(Var a) {
  Tensor out = value(a);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(out[i]);
  return push("tanh", std::move(out), {a.id}, [](Graph& g, std::size_t self) {
    const Node& n = g.nodes_[self];
    Tensor& ga = g.grad_ref(n.inputs[0]);
    for (std::size_t i = 0; i < ga.size(); ++i)
      ga[i] += n.grad[i] * (1.0 - n.value[i] * n.value[i]);
  });
}

Var Graph::sigmoid(Var a) {
  Tensor out = value(a);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-out[i]));
  return push("sigmoid", std::move(out), {a.id}, [](Graph& g, std::size_t self) {
    const Node& n = g.nodes_[self];
    Tensor& ga = g.grad_ref(n.inputs[0]);
    for (std::size_t i = 0; i < ga.size(); ++i)
      ga[i] += n.grad[i] * n.value[i] * (1.0 - n.value[i]);
  });
}

Var Graph::relu(Var a) {
  Tensor out = value(a);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = out[i] > 0.0 ? out[i] : 0.0;
  return push("relu", std::move(out), {a.id}, [](Graph& g, std::size_t self) {
    const Node& n = g.nodes_[self];
    Tensor& ga = g.grad_ref(n.inputs[0]);
    const Tensor& in = g.val(n.inputs[0]);
    for (std::size_t i = 0; i < ga.size(); ++i)
      if (in[i] > 0.0) ga[i] += n.grad[i];
  });
}

Var Graph::gather_rows(Var table, std::span<const std::size_t> rows) {
  const Tensor& tv = value(table);
  std::vector<double> data;
  data.reserve(rows.size() * tv.cols());
  for (std::size_t r : rows) {
    if (r >= tv.rows()) throw ShapeError("gather_rows: index " + std::to_string(r) + " out of range");
    auto s = tv.row_span(r);
    data.insert(data.end(), s.begin(), s.end());
  }
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  Tensor out(idx.size(), tv.cols(), std::move(data));
  return push("gather_rows", std::move(out), {table.id},
              [idx = std::move(idx)](Graph& g, std::size_t self) {
                const Node& n = g.nodes_[self];
                Tensor& gt = g.grad_ref(n.inputs[0]);
                for (std::size_t k = 0; k < idx.size(); ++k)
                  for (std::size_t c = 0; c < gt.cols(); ++c) gt(idx[k], c) += n.grad(k, c);
              });
}

Var Graph::l2_normalize(Var a) {
  const Tensor& av = value(a);
  Tensor out = av;
  std::vector<double> norms(av.rows());
  for (std::size_t r = 0; r < av.rows(); ++r) {
    norms[r] = norm2(av.row_span(r));
    if (norms[r] == 0.0) {
      throw NumericError("l2_normalize of a zero vector (row " + std::to_string(r) + ")");
    }
    for (double& v : out.row_span(r)) v /= norms[r];
  }
  return push("l2_normalize", std::move(out), {a.id},
              [norms = std::move(norms)](Graph& g, std::size_t self) {
                const Node& n = g.nodes_[self];
                Tensor& ga = g.grad_ref(n.inputs[0]);
                for (std::size_t r = 0; r < ga.rows(); ++r) {
                  auto y = n.value.row_span(r);
                  auto gr = n.grad.row_span(r);
                  const double yg = smalr::dot(y, gr);
                  for (std::size_t c = 0; c < ga.cols(); ++c)
                    ga(r, c) += (gr[c] - y[c] * yg) / norms[r];
                }
              });
}

Var Graph::cosine_distance(Var a, Var b) {
  const Tensor& av = value(a);
  const Tensor& bv = value(b);
  require_row(av, "cosine_distance");
  require_same(av, bv, "cosine_distance");
  const double d = smalr::cosine_distance(av.data(), bv.data());
  return push("cosine_distance", Tensor::scalar(d), {a.id, b.id}, [](Graph& g, std::size_t self) {
    const Node& n = g.nodes_[self];
    const std::size_t ai = n.inputs[0], bi = n.inputs[1];
    const Tensor& x = g.val(ai);
    const Tensor& y = g.val(bi);
    const double nx = norm2(x.data());
    const double ny = norm2(y.data());
    const double cos = smalr::dot(x.data(), y.data()) / (nx * ny);
    const double gout = n.grad[0];
    {
      Tensor& gx = g.grad_ref(ai);
      for (std::size_t i = 0; i < x.size(); ++i)
        gx[i] -= gout * (y[i] / (nx * ny) - cos * x[i] / (nx * nx));
    }
    {
      Tensor& gy = g.grad_ref(bi);
      for (std::size_t i = 0; i < y.size(); ++i)
        gy[i] -= gout * (x[i] / (nx * ny) - cos * y[i] / (ny * ny));
    }
  });
}

Var Graph::row_cosine_distance(Var a, Var b) {
  const Tensor& av = value(a);
  const Tensor& bv = value(b);
  require_same(av, bv, "row_cosine_distance");
  Tensor out(av.rows(), 1);
  for (std::size_t r = 0; r < av.rows(); ++r) {
    try {
      out(r, 0) = smalr::cosine_distance(av.row_span(r), bv.row_span(r));
    } catch (const NumericError&) {
      throw NumericError("row_cosine_distance: zero vector in row " + std::to_string(r));
    }
  }
  return push("row_cosine_distance", std::move(out), {a.id, b.id}, [](Graph& g, std::size_t self) {
    const Node& n = g.nodes_[self];
    const std::size_t ai = n.inputs[0], bi = n.inputs[1];
    const Tensor& x = g.val(ai);
    const Tensor& y = g.val(bi);
    Tensor& gx = g.grad_ref(ai);
    Tensor& gy = g.grad_ref(bi);
    for (std::size_t r = 0; r < x.rows(); ++r) {
      const auto xr = x.row_span(r), yr = y.row_span(r);
      const double nx = norm2(xr), ny = norm2(yr);
      const double cos = smalr::dot(xr, yr) / (nx * ny);
      const double gout = n.grad(r, 0);
      for (std::size_t c = 0; c < xr.size(); ++c) {
        gx(r, c) -= gout * (yr[c] / (nx * ny) - cos * xr[c] / (nx * nx));
        gy(r, c) -= gout * (xr[c] / (nx * ny) - cos * yr[c] / (ny * ny));
      }
    }
  });
}

Var Graph::row_norms(Var a) {
  const Tensor& av = value(a);
  Tensor out(av.rows(), 1);
  for (std::size_t r = 0; r < av.rows(); ++r) out(r, 0) = norm2(av.row_span(r));
  return push("row_norms", std::move(out), {a.id}, [](Graph& g, std::size_t self) {
    const Node& n = g.nodes_[self];
    const Tensor& x = g.val(n.inputs[0]);
    Tensor& ga = g.grad_ref(n.inputs[0]);
    for (std::size_t r = 0; r < x.rows(); ++r) {
      const double nrm = n.value(r, 0);
      if (nrm == 0.0) continue;
      const double gout = n.grad(r, 0) / nrm;
      for (std::size_t c = 0; c < x.cols(); ++c) ga(r, c) += gout * x(r, c);
    }
  });
}

Var Graph::dot(Var a, Var b) {
  const Tensor& av = value(a);
  const Tensor& bv = value(b);
  require_same(av, bv, "dot");
  return push("dot", Tensor::scalar(smalr::dot(av.data(), bv.data())), {a.id, b.id},
              [](Graph& g, std::size_t self) {
                const Node& n = g.nodes_[self];
                const double gout = n.grad[0];
                const std::size_t ai = n.inputs[0], bi = n.inputs[1];
                {
                  Tensor& ga = g.grad_ref(ai);
                  const Tensor& bv2 = g.val(bi);
                  for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += gout * bv2[i];
                }
                {
                  Tensor& gb = g.grad_ref(bi);
                  const Tensor& av2 = g.val(ai);
                  for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += gout * av2[i];
                }
              });
}

Var Graph::softmax_cross_entropy(Var logits, std::span<const std::size_t> labels) {
  const Tensor& lv = value(logits);
  if (labels.size() != lv.rows()) throw ShapeError("softmax_cross_entropy: label count mismatch");
  Tensor probs(lv.rows(), lv.cols());
  double loss = 0.0;
  for (std::size_t r = 0; r < lv.rows(); ++r) {
    if (labels[r] >= lv.cols()) throw ShapeError("softmax_cross_entropy: label out of range");
    auto row = lv.row_span(r);
    double mx = row[0];
    for (double v : row) mx = std::max(mx, v);
    double z = 0.0;
    for (std::size_t c = 0; c < row.size(); ++c) {
      probs(r, c) = std::exp(row[c] - mx);
      z += probs(r, c);
    }
    for (std::size_t c = 0; c < row.size(); ++c) probs(r, c) /= z;
    loss += -(row[labels[r]] - mx - std::log(z));
  }
  const double inv = 1.0 / static_cast<double>(lv.rows());
  std::vector<std::size_t> lab(labels.begin(), labels.end());
  return push("softmax_cross_entropy", Tensor::scalar(loss * inv), {logits.id},
              [probs = std::move(probs), lab = std::move(lab), inv](Graph& g, std::size_t self) {
                const Node& n = g.nodes_[self];
                Tensor& gl = g.grad_ref(n.inputs[0]);
                const double gout = n.grad[0] * inv;
                for (std::size_t r = 0; r < probs.rows(); ++r)
                  for (std::size_t c = 0; c < probs.cols(); ++c)
                    gl(r, c) += gout * (probs(r, c) - (c == lab[r] ? 1.0 : 0.0));
              });
}

Var Graph::euclidean_norm(Var a) {
  const double nrm = norm2(value(a).data());
  return push("euclidean_norm", Tensor::scalar(nrm), {a.id}, [nrm](Graph& g, std::size_t self) {
    if (nrm == 0.0) return;  // subgradient 0 at the origin
    const Node& n = g.nodes_[self];
    Tensor& ga = g.grad_ref(n.inputs[0]);
    const Tensor& x = g.val(n.inputs[0]);
    const double gout = n.grad[0] / nrm;
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += gout * x[i];
  });
}

Var Graph::grad_reverse(Var a) {
  return push("grad_reverse", value(a), {a.id}, [](Graph& g, std::size_t self) {
    const Node& n = g.nodes_[self];
    if (!g.reverse_) {
      g.accumulate(n.inputs[0], n.grad);
      return;
    }
    Tensor& ga = g.grad_ref(n.inputs[0]);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] -= n.grad[i];
  });
}

// ---------------------------------------------------------------------------

Var gru_step(Graph& g, const GruWeights& w, Var x, Var h) {
  const std::size_t hd = g.value(h).cols();
  Var xw = g.add(g.matmul(x, g.param(*w.input)), g.param(*w.bias));
  Var u_n = g.param(*w.candidate);
  Var hu = g.matmul(h, g.param(*w.gates));
  Var z = g.sigmoid(g.add(g.slice_cols(xw, 0, hd), g.slice_cols(hu, 0, hd)));
  Var r = g.sigmoid(g.add(g.slice_cols(xw, hd, hd), g.slice_cols(hu, hd, hd)));
  Var cand = g.tanh(g.add(g.slice_cols(xw, 2 * hd, hd), g.matmul(g.mul(r, h), u_n)));
  Var keep_new = g.add_scalar(g.scale(z, -1.0), 1.0);
  return g.add(g.mul(keep_new, cand), g.mul(z, h));
}

double fd_check(const std::function<Var(Graph&)>& build, std::span<Parameter* const> params,
                double eps) {
  if (!(eps > 0.0)) throw Error("fd_check: eps must be positive");
  for (Parameter* p : params) p->grad.fill(0.0);
  {
    Graph g;
    g.set_gradient_reversal(false);
    Var loss = build(g);
    g.backward(loss);
  }
  auto eval = [&] {
    Graph g;
    return g.scalar(build(g));
  };
  double worst = 0.0;
  for (Parameter* p : params) {
    if (!p->trainable) continue;
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double orig = p->value[i];
      p->value[i] = orig + eps;
      const double up = eval();
      p->value[i] = orig - eps;
      const double down = eval();
      p->value[i] = orig;
      const double fd = (up - down) / (2.0 * eps);
      const double ad = p->grad[i];
      const double rel = std::abs(ad - fd) / std::max(1e-8, std::abs(ad) + std::abs(fd));
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

// ---------------------------------------------------------------------------
// Adam

void Adam::step(std::span<Parameter* const> params) {
  ++step_;
  const double t = static_cast<double>(step_);
  const double c1 = 1.0 - std::pow(config_.beta1, t);
  const double c2 = 1.0 - std::pow(config_.beta2, t);
  for (Parameter* p : params) {
    if (!p->trainable) continue;
    if (!p->grad.same_shape(p->value)) {
      throw ShapeError("adam: gradient shape mismatch for " + p->name);
    }
    auto [it, inserted] = moments_.try_emplace(p);
    Moments& mo = it->second;
    if (inserted) {
      mo.m = Tensor(p->value.rows(), p->value.cols());
      mo.v = Tensor(p->value.rows(), p->value.cols());
    }
    if (!mo.m.same_shape(p->value)) throw ShapeError("adam: moment shape mismatch for " + p->name);
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double gi = p->grad[i];
      mo.m[i] = config_.beta1 * mo.m[i] + (1.0 - config_.beta1) * gi;
      mo.v[i] = config_.beta2 * mo.v[i] + (1.0 - config_.beta2) * gi * gi;
      const double mhat = mo.m[i] / c1;
      const double vhat = mo.v[i] / c2;
      p->value[i] -= config_.learning_rate * mhat / (std::sqrt(vhat) + config_.epsilon);
    }
  }
}

void Adam::step(ParameterStore& store) {
  std::vector<Parameter*> ps;
  ps.reserve(store.size());
  for (std::size_t i = 0; i < store.size(); ++i) ps.push_back(&store[i]);
  step(ps);
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr char kMagic[8] = {'S', 'M', 'A', 'L', 'R', 'C', 'K', 'P'};
constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
void put(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is, const std::string& path) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw Error("truncated checkpoint: " + path);
  return v;
}

}  // namespace

void save_checkpoint(const ParameterStore& store, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot write checkpoint: " + path);
  os.write(kMagic, sizeof(kMagic));
  put(os, kCheckpointVersion);
  put(os, static_cast<std::uint64_t>(store.size()));
  for (std::size_t i = 0; i < store.size(); ++i) {
    const Parameter& p = store[i];
    put(os, static_cast<std::uint64_t>(p.name.size()));
    os.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    put(os, static_cast<std::uint64_t>(p.value.rows()));
    put(os, static_cast<std::uint64_t>(p.value.cols()));
    put(os, static_cast<std::uint8_t>(p.trainable ? 1 : 0));
    auto d = p.value.data();
    os.write(reinterpret_cast<const char*>(d.data()), static_cast<std::streamsize>(d.size_bytes()));
  }
  if (!os) throw Error("failed writing checkpoint: " + path);
}

std::vector<CheckpointEntry> read_checkpoint_entries(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot read checkpoint: " + path);
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw Error("not a checkpoint file: " + path);
  }
  const auto version = get<std::uint32_t>(is, path);
  if (version != kCheckpointVersion) {
    throw Error("unsupported checkpoint version " + std::to_string(version));
  }
  const auto count = get<std::uint64_t>(is, path);
  std::vector<CheckpointEntry> out;
  for (std::uint64_t k = 0; k < count; ++k) {
    const auto len = get<std::uint64_t>(is, path);
    if (len > (1u << 20)) throw Error("corrupt checkpoint name length: " + path);
    std::string name(len, '\0');
    is.read(name.data(), static_cast<std::streamsize>(len));
    const auto rows = get<std::uint64_t>(is, path);
    const auto cols = get<std::uint64_t>(is, path);
    const bool trainable = get<std::uint8_t>(is, path) != 0;
    std::vector<double> data(rows * cols);
    is.read(reinterpret_cast<char*>(data.data()),
            static_cast<std::streamsize>(data.size() * sizeof(double)));
    if (!is) throw Error("truncated checkpoint: " + path);
    out.push_back({std::move(name), Tensor(rows, cols, std::move(data)), trainable});
  }
  return out;
}

std::map<std::string, Tensor> read_checkpoint(const std::string& path) {
  std::map<std::string, Tensor> out;
  for (auto& e : read_checkpoint_entries(path)) out.emplace(std::move(e.name), std::move(e.value));
  return out;
}

ParameterStore load_store(const std::string& path) {
  ParameterStore store;
  for (auto& e : read_checkpoint_entries(path)) store.add(std::move(e.name), std::move(e.value), e.trainable);
  return store;
}

void load_checkpoint(ParameterStore& store, const std::string& path) {
  auto tensors = read_checkpoint(path);
  for (std::size_t i = 0; i < store.size(); ++i) {
    Parameter& p = store[i];
    auto it = tensors.find(p.name);
    if (it == tensors.end()) throw Error("checkpoint " + path + " lacks parameter " + p.name);
    if (!it->second.same_shape(p.value)) {
      throw ShapeError("checkpoint shape mismatch for " + p.name + ": " +
                       it->second.shape_string() + " vs " + p.value.shape_string());
    }
    p.value = std::move(it->second);
    tensors.erase(it);
  }
  if (!tensors.empty()) {
    throw Error("checkpoint " + path + " has unknown parameter " + tensors.begin()->first);
  }
}

std::uint64_t fnv1a(std::span<const unsigned char> bytes, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (unsigned char b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t fnv1a(const std::string& s) {
  return fnv1a({reinterpret_cast<const unsigned char*>(s.data()), s.size()});
}

std::string hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = digits[v & 0xf];
    v >>= 4;
  }
  return out;
}

}  // namespace smalr
