// Copyright 2026 The spaprune Authors
// SPDX-License-Identifier: Apache-2.0

// Straightforward CPU kernels. Every reduction accumulates in double in a fixed
// order so two runs on the same input agree to the bit.

#include "spa/interpreter.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include "ops_util.h"
#include "spa/error.h"

namespace spa {

namespace {

[[noreturn]] void fault(const OperatorSpec& op, const std::string& msg) {
  throw ShapeError(op.op_type + " node '" + op.name + "': " + msg);
}

Tensor conv(const OperatorSpec& op, const Tensor& x, const Tensor& w, const Tensor* b) {
  if (x.rank() != 4 || w.rank() != 4) fault(op, "expects 4-D input and weight");
  const ConvParams p = conv_params(op, w.shape());
  const int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const int64_t o = w.dim(0), cg = w.dim(1), kh = w.dim(2), kw = w.dim(3);
  if (c != cg * p.group || o % p.group != 0) fault(op, "channel counts do not match the group count");
  const int64_t mg = o / p.group;
  const int64_t ho = (h + p.pads[0] + p.pads[2] - (p.dilations[0] * (kh - 1) + 1)) / p.strides[0] + 1;
  const int64_t wo = (wd + p.pads[1] + p.pads[3] - (p.dilations[1] * (kw - 1) + 1)) / p.strides[1] + 1;
  Tensor y({n, o, ho, wo});
  for (int64_t s = 0; s < n; ++s)
    for (int64_t oc = 0; oc < o; ++oc) {
      const int64_t base = (oc / mg) * cg;
      for (int64_t oh = 0; oh < ho; ++oh)
        for (int64_t ow = 0; ow < wo; ++ow) {
          double acc = 0.0;
          for (int64_t ic = 0; ic < cg; ++ic)
            for (int64_t i = 0; i < kh; ++i) {
              const int64_t ih = oh * p.strides[0] - p.pads[0] + i * p.dilations[0];
              if (ih < 0 || ih >= h) continue;
              for (int64_t j = 0; j < kw; ++j) {
                const int64_t iw = ow * p.strides[1] - p.pads[1] + j * p.dilations[1];
                if (iw < 0 || iw >= wd) continue;
                acc += static_cast<double>(x[((s * c + base + ic) * h + ih) * wd + iw]) *
                       w[((oc * cg + ic) * kh + i) * kw + j];
              }
            }
          if (b) acc += (*b)[oc];
          y[((s * o + oc) * ho + oh) * wo + ow] = static_cast<float>(acc);
        }
    }
  return y;
}

Tensor gemm(const OperatorSpec& op, const Tensor& a, const Tensor& w, const Tensor* c) {
  const bool tb = op.int_attr("transB", 0) != 0;
  if (a.rank() != 2 || w.rank() != 2) fault(op, "expects 2-D operands");
  const int64_t m = a.dim(0), k = a.dim(1), n = tb ? w.dim(0) : w.dim(1);
  if ((tb ? w.dim(1) : w.dim(0)) != k) fault(op, "inner dimensions differ");
  Tensor y({m, n});
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (int64_t p = 0; p < k; ++p) acc += static_cast<double>(a(i, p)) * (tb ? w(j, p) : w(p, j));
      if (c) {
        const Shape& cs = c->shape();
        int64_t idx = 0;
        if (cs.size() == 1) idx = cs[0] == 1 ? 0 : j;
        if (cs.size() == 2) idx = (cs[0] == 1 ? 0 : i) * cs[1] + (cs[1] == 1 ? 0 : j);
        acc += (*c)[idx];
      }
      y(i, j) = static_cast<float>(acc);
    }
  return y;
}

Tensor matmul_nd(const OperatorSpec& op, const Tensor& a, const Tensor& w) {
  if (a.rank() < 2 || w.rank() != 2 || a.shape().back() != w.dim(0)) fault(op, "operands do not line up");
  const int64_t k = w.dim(0), n = w.dim(1), rows = a.size() / k;
  Shape out = a.shape();
  out.back() = n;
  Tensor y(out);
  for (int64_t r = 0; r < rows; ++r)
    for (int64_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (int64_t p = 0; p < k; ++p) acc += static_cast<double>(a[r * k + p]) * w(p, j);
      y[r * n + j] = static_cast<float>(acc);
    }
  return y;
}

Tensor batchnorm(const OperatorSpec& op, const Tensor& x, const Tensor& scale, const Tensor& bias,
                 const Tensor& mean, const Tensor& var) {
  const double eps = op.float_attr("epsilon", 1e-5f);
  const int64_t n = x.dim(0), c = x.dim(1), inner = x.size() / (n * c);
  if (scale.size() != c || bias.size() != c || mean.size() != c || var.size() != c) fault(op, "parameter length mismatch");
  Tensor y(x.shape());
  for (int64_t ch = 0; ch < c; ++ch) {
    const double k = scale[ch] / std::sqrt(static_cast<double>(var[ch]) + eps);
    const double m = mean[ch], b = bias[ch];
    for (int64_t s = 0; s < n; ++s) {
      const int64_t off = (s * c + ch) * inner;
      for (int64_t i = 0; i < inner; ++i) y[off + i] = static_cast<float>((x[off + i] - m) * k + b);
    }
  }
  return y;
}

Tensor add(const OperatorSpec& op, const Tensor& a, const Tensor& b) {
  const size_t rank = std::max(a.shape().size(), b.shape().size());
  Shape out(rank);
  std::vector<int64_t> sa(rank, 0), sb(rank, 0);
  int64_t stride_a = 1, stride_b = 1;
  for (size_t r = rank; r-- > 0;) {
    const size_t ia = r + a.shape().size(), ib = r + b.shape().size();
    const int64_t da = ia >= rank ? a.shape()[ia - rank] : 1;
    const int64_t db = ib >= rank ? b.shape()[ib - rank] : 1;
    if (da != db && da != 1 && db != 1) fault(op, "operands are not broadcastable");
    out[r] = std::max(da, db);
    sa[r] = da == 1 ? 0 : stride_a;
    sb[r] = db == 1 ? 0 : stride_b;
    stride_a *= da;
    stride_b *= db;
  }
  Tensor y(out);
  std::vector<int64_t> coord(rank, 0);
  int64_t pa = 0, pb = 0;
  for (int64_t f = 0; f < y.size(); ++f) {
    y[f] = a[pa] + b[pb];
    for (size_t r = rank; r-- > 0;) {
      ++coord[r];
      pa += sa[r];
      pb += sb[r];
      if (coord[r] < out[r]) break;
      pa -= sa[r] * out[r];
      pb -= sb[r] * out[r];
      coord[r] = 0;
    }
  }
  return y;
}

Tensor softmax(const OperatorSpec& op, const Tensor& x, int64_t opset) {
  const int64_t rank = x.rank();
  const int64_t axis = normalize_axis(op.int_attr("axis", opset >= 13 ? -1 : 1), rank, op);
  int64_t outer = 1, inner = 1;
  for (int64_t i = 0; i < rank; ++i) {
    if (i < axis) outer *= x.dim(i);
    if (i > axis) inner *= x.dim(i);
  }
  const int64_t ext = x.dim(axis);
  Tensor y(x.shape());
  for (int64_t o = 0; o < outer; ++o)
    for (int64_t i = 0; i < inner; ++i) {
      auto at = [&](int64_t e) { return (o * ext + e) * inner + i; };
      double mx = -std::numeric_limits<double>::infinity();
      for (int64_t e = 0; e < ext; ++e) mx = std::max(mx, static_cast<double>(x[at(e)]));
      double sum = 0.0;
      for (int64_t e = 0; e < ext; ++e) sum += std::exp(x[at(e)] - mx);
      for (int64_t e = 0; e < ext; ++e) y[at(e)] = static_cast<float>(std::exp(x[at(e)] - mx) / sum);
    }
  return y;
}

Tensor pool(const OperatorSpec& op, const Tensor& x) {
  if (x.rank() != 4) fault(op, "expects a 4-D input");
  const PoolParams p = pool_params(op);
  const bool is_max = op.op_type == "MaxPool";
  const int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int64_t ho = pooled_extent(h, p.kernel[0], p.strides[0], p.pads[0], p.pads[2], p.dilations[0], p.ceil_mode);
  const int64_t wo = pooled_extent(w, p.kernel[1], p.strides[1], p.pads[1], p.pads[3], p.dilations[1], p.ceil_mode);
  Tensor y({n, c, ho, wo});
  for (int64_t s = 0; s < n * c; ++s)
    for (int64_t oh = 0; oh < ho; ++oh)
      for (int64_t ow = 0; ow < wo; ++ow) {
        double acc = is_max ? -std::numeric_limits<double>::infinity() : 0.0;
        int64_t count = 0;
        for (int64_t i = 0; i < p.kernel[0]; ++i) {
          const int64_t ih = oh * p.strides[0] - p.pads[0] + i * p.dilations[0];
          for (int64_t j = 0; j < p.kernel[1]; ++j) {
            const int64_t iw = ow * p.strides[1] - p.pads[1] + j * p.dilations[1];
            const bool inside = ih >= 0 && ih < h && iw >= 0 && iw < w;
            const bool in_pad = ih >= -p.pads[0] && ih < h + p.pads[2] && iw >= -p.pads[1] && iw < w + p.pads[3];
            if (inside) {
              const double v = x[(s * h + ih) * w + iw];
              acc = is_max ? std::max(acc, v) : acc + v;
            }
            if (inside || (p.count_include_pad && in_pad)) ++count;
          }
        }
        y[(s * ho + oh) * wo + ow] = static_cast<float>(is_max ? acc : (count ? acc / static_cast<double>(count) : 0.0));
      }
  return y;
}

Tensor global_average_pool(const Tensor& x) {
  Shape out = x.shape();
  const int64_t nc = out[0] * out[1], inner = x.size() / nc;
  std::fill(out.begin() + 2, out.end(), 1);
  Tensor y(out);
  for (int64_t s = 0; s < nc; ++s) {
    double acc = 0.0;
    for (int64_t i = 0; i < inner; ++i) acc += x[s * inner + i];
    y[s] = static_cast<float>(acc / static_cast<double>(inner));
  }
  return y;
}

Tensor flatten(const OperatorSpec& op, const Tensor& x) {
  int64_t axis = op.int_attr("axis", 1);
  if (axis < 0) axis += x.rank();
  if (axis < 0 || axis > x.rank()) fault(op, "axis out of range");
  int64_t outer = 1;
  for (int64_t i = 0; i < axis; ++i) outer *= x.dim(i);
  return x.reshaped({outer, x.size() / std::max<int64_t>(outer, 1)});
}

Tensor concat(const OperatorSpec& op, std::span<const Tensor* const> parts) {
  Shape out = parts[0]->shape();
  const auto rank = static_cast<int64_t>(out.size());
  const int64_t axis = normalize_axis(op.int_attr("axis", 1), rank, op);
  out[static_cast<size_t>(axis)] = 0;
  for (const Tensor* t : parts) {
    if (t->rank() != rank) fault(op, "inputs differ in rank");
    out[static_cast<size_t>(axis)] += t->dim(axis);
  }
  int64_t outer = 1, inner = 1;
  for (int64_t i = 0; i < rank; ++i) {
    if (i < axis) outer *= out[static_cast<size_t>(i)];
    if (i > axis) inner *= out[static_cast<size_t>(i)];
  }
  Tensor y(out);
  int64_t dst = 0;
  for (int64_t o = 0; o < outer; ++o)
    for (const Tensor* t : parts) {
      const int64_t chunk = t->dim(axis) * inner;
      std::copy_n(t->data().begin() + o * chunk, chunk, y.data().begin() + dst);
      dst += chunk;
    }
  return y;
}

Tensor execute(const ModelIR& ir, const OperatorSpec& op, std::span<const Tensor* const> in) {
  const std::string& t = op.op_type;
  auto need = [&](size_t i) -> const Tensor& {
    if (i >= in.size() || !in[i]) fault(op, "missing input " + std::to_string(i));
    return *in[i];
  };
  auto opt = [&](size_t i) -> const Tensor* { return i < in.size() ? in[i] : nullptr; };
  if (t == "Conv") return conv(op, need(0), need(1), opt(2));
  if (t == "Gemm") return gemm(op, need(0), need(1), opt(2));
  if (t == "MatMul") return matmul_nd(op, need(0), need(1));
  if (t == "BatchNormalization") return batchnorm(op, need(0), need(1), need(2), need(3), need(4));
  if (t == "Add") return add(op, need(0), need(1));
  if (t == "Relu") {
    Tensor y = need(0);
    for (auto& v : y.data()) v = v > 0.0f ? v : 0.0f;
    return y;
  }
  if (t == "Sigmoid") {
    Tensor y = need(0);
    for (auto& v : y.data()) v = static_cast<float>(1.0 / (1.0 + std::exp(-static_cast<double>(v))));
    return y;
  }
  if (t == "Identity") return need(0);
  if (t == "Softmax") return softmax(op, need(0), ir.opset_version);
  if (t == "MaxPool" || t == "AveragePool") return pool(op, need(0));
  if (t == "GlobalAveragePool") return global_average_pool(need(0));
  if (t == "Flatten") return flatten(op, need(0));
  if (t == "Concat") return concat(op, in);
  throw UnsupportedOperatorError(t, "node '" + op.name + "'");
}

void check_input(const ValueInfo& v, const Tensor& t) {
  bool ok = t.rank() == static_cast<int64_t>(v.shape.size());
  for (size_t i = 0; ok && i < v.shape.size(); ++i) {
    const bool symbolic = i < v.symbolic.size() && !v.symbolic[i].empty();
    ok = symbolic || t.shape()[i] == v.shape[i];
  }
  if (!ok) {
    throw ShapeError("input '" + v.name + "' expects " + shape_string(v.shape) + ", got " + shape_string(t.shape()));
  }
}

const std::string& only_input(const ModelIR& ir) {
  if (ir.graph_inputs.size() != 1) throw InputError("calibration needs a model with exactly one graph input");
  return ir.graph_inputs[0].name;
}

}  // namespace

TensorMap run_forward(const ModelIR& ir, const TensorMap& inputs, const ForwardOptions& opts) {
  TensorMap env;
  for (const auto& v : ir.graph_inputs) {
    auto it = inputs.find(v.name);
    if (it == inputs.end()) throw InputError("missing value for graph input '" + v.name + "'");
    check_input(v, it->second);
    env.emplace(v.name, it->second);
  }
  std::set<std::string> keep(opts.keep.begin(), opts.keep.end());
  for (const auto& o : ir.graph_outputs) keep.insert(o.name);
  std::map<std::string, size_t> last_use;
  for (size_t i = 0; i < ir.nodes.size(); ++i)
    for (const auto& name : ir.nodes[i].inputs) last_use[name] = i;

  std::vector<const Tensor*> args;
  for (size_t i = 0; i < ir.nodes.size(); ++i) {
    const OperatorSpec& op = ir.nodes[i];
    args.clear();
    for (size_t s = 0; s < op.inputs.size(); ++s) {
      if (!op.has_input(s)) {
        args.push_back(nullptr);
        continue;
      }
      const std::string& name = op.inputs[s];
      if (auto e = env.find(name); e != env.end()) {
        args.push_back(&e->second);
      } else if (auto p = ir.initializers.find(name); p != ir.initializers.end()) {
        args.push_back(&p->second);
      } else {
        throw ModelError(op.op_type + " node '" + op.name + "' reads undefined value '" + name + "'");
      }
    }
    if (opts.before_node) opts.before_node(i, args);
    Tensor y = execute(ir, op, args);
    check_finite(y.data(), op.op_type + " node '" + op.name + "'");
    env.insert_or_assign(op.outputs[0], std::move(y));
    for (const auto& name : op.inputs) {
      auto lu = last_use.find(name);
      if (lu != last_use.end() && lu->second == i && !keep.contains(name)) env.erase(name);
    }
  }
  TensorMap out;
  for (const auto& name : keep) {
    auto it = env.find(name);
    if (it == env.end()) throw InputError("value '" + name + "' was not computed");
    out.emplace(name, std::move(it->second));
  }
  return out;
}

Tensor run_forward(const ModelIR& ir, const Tensor& input) {
  if (ir.graph_outputs.size() != 1) throw InputError("model has more than one output");
  TensorMap out = run_forward(ir, TensorMap{{only_input(ir), input}});
  return std::move(out.at(ir.graph_outputs[0].name));
}

bool is_hessian_layer(const ModelIR& ir, const OperatorSpec& op) {
  if (!op.has_input(1) || !ir.is_initializer(op.inputs[1])) return false;
  if (op.op_type == "Conv") return op.int_attr("group", 1) == 1;
  if (op.op_type == "Gemm") return true;
  if (op.op_type == "MatMul") return ir.shape_of(op.inputs[1]).size() == 2;
  return false;
}

Tensor im2col(const Tensor& x, const OperatorSpec& op, const Shape& w_shape) {
  if (x.rank() != 4 || w_shape.size() != 4) fault(op, "im2col expects 4-D input and weight");
  const ConvParams p = conv_params(op, w_shape);
  if (p.group != 1) fault(op, "im2col is defined for group 1");
  const int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3), kh = w_shape[2], kw = w_shape[3];
  const int64_t ho = (h + p.pads[0] + p.pads[2] - (p.dilations[0] * (kh - 1) + 1)) / p.strides[0] + 1;
  const int64_t wo = (w + p.pads[1] + p.pads[3] - (p.dilations[1] * (kw - 1) + 1)) / p.strides[1] + 1;
  const int64_t cols = n * ho * wo;
  Tensor out({c * kh * kw, cols});
  for (int64_t ch = 0; ch < c; ++ch)
    for (int64_t i = 0; i < kh; ++i)
      for (int64_t j = 0; j < kw; ++j) {
        const int64_t row = (ch * kh + i) * kw + j;
        for (int64_t s = 0; s < n; ++s)
          for (int64_t oh = 0; oh < ho; ++oh) {
            const int64_t ih = oh * p.strides[0] - p.pads[0] + i * p.dilations[0];
            for (int64_t ow = 0; ow < wo; ++ow) {
              const int64_t iw = ow * p.strides[1] - p.pads[1] + j * p.dilations[1];
              const bool inside = ih >= 0 && ih < h && iw >= 0 && iw < w;
              out[row * cols + (s * ho + oh) * wo + ow] = inside ? x[((s * c + ch) * h + ih) * w + iw] : 0.0f;
            }
          }
      }
  return out;
}

Tensor layer_input_matrix(const ModelIR& ir, const OperatorSpec& op, const Tensor& x) {
  if (op.op_type == "Conv") return im2col(x, op, ir.shape_of(op.inputs[1]));
  if (op.op_type == "Gemm" || op.op_type == "MatMul") {
    const int64_t k = x.shape().back();
    return transpose(x.reshaped({x.size() / k, k}));
  }
  throw UnsupportedOperatorError(op.op_type, "no layer input matrix for node '" + op.name + "'");
}

void stream_layer_inputs(const ModelIR& ir, std::span<const Tensor> batches, const CaptureSink& sink) {
  const std::string& input = only_input(ir);
  ForwardOptions fo;
  fo.before_node = [&](size_t i, std::span<const Tensor* const> args) {
    const OperatorSpec& op = ir.nodes[i];
    if (is_hessian_layer(ir, op)) sink(i, layer_input_matrix(ir, op, *args[0]));
  };
  for (const Tensor& b : batches) run_forward(ir, TensorMap{{input, b}}, fo);
}

std::map<std::string, LayerCapture> capture_layer_inputs(const ModelIR& ir, std::span<const Tensor> batches) {
  std::map<size_t, std::vector<Tensor>> parts;
  stream_layer_inputs(ir, batches, [&parts](size_t node, const Tensor& x) { parts[node].push_back(x); });
  std::map<std::string, LayerCapture> out;
  for (auto& [node, list] : parts) {
    const int64_t d = list[0].dim(0);
    int64_t cols = 0;
    for (const auto& t : list) cols += t.dim(1);
    Tensor x({d, cols});
    int64_t at = 0;
    for (const auto& t : list) {
      for (int64_t r = 0; r < d; ++r)
        std::copy_n(t.data().begin() + r * t.dim(1), t.dim(1), x.data().begin() + r * cols + at);
      at += t.dim(1);
    }
    const std::string& name = ir.nodes[node].name;
    out.emplace(name, LayerCapture{name, std::move(x)});
  }
  return out;
}

ModelIR recalibrate_bn(const ModelIR& ir, std::span<const Tensor> batches, double var_floor) {
  if (batches.empty()) throw InputError("BN recalibration needs at least one batch");
  ModelIR out = ir;
  const Tensor all = batches.size() == 1 ? batches[0] : concat_rows(batches);
  const std::string& input = only_input(out);
  ForwardOptions fo;
  fo.keep = {};
  fo.before_node = [&out, var_floor](size_t i, std::span<const Tensor* const> args) {
    const OperatorSpec& op = out.nodes[i];
    if (op.op_type != "BatchNormalization") return;
    const Tensor& x = *args[0];
    const int64_t n = x.dim(0), c = x.dim(1), inner = x.size() / (n * c);
    const double count = static_cast<double>(n * inner);
    Tensor mean({c}), var({c});
    for (int64_t ch = 0; ch < c; ++ch) {
      double sum = 0.0;
      for (int64_t s = 0; s < n; ++s)
        for (int64_t k = 0; k < inner; ++k) sum += x[(s * c + ch) * inner + k];
      const double mu = sum / count;
      double sq = 0.0;
      for (int64_t s = 0; s < n; ++s)
        for (int64_t k = 0; k < inner; ++k) {
          const double d = x[(s * c + ch) * inner + k] - mu;
          sq += d * d;
        }
      mean[ch] = static_cast<float>(mu);
      var[ch] = static_cast<float>(std::max(sq / count, var_floor));
    }
    // the BN reads these through the aliased pointers in `args`
    out.initializers.at(op.inputs[3]) = std::move(mean);
    out.initializers.at(op.inputs[4]) = std::move(var);
  };
  for (int sweep = 0; sweep < 2; ++sweep) run_forward(out, TensorMap{{input, all}}, fo);
  return out;
}

}  // namespace spa
