// Copyright 2026 The spaprune Authors
// SPDX-License-Identifier: Apache-2.0

#include "spa/onnx_model.h"

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include "onnx.pb.h"
#include "spa/error.h"

static_assert(std::endian::native == std::endian::little,
              "raw ONNX tensor payloads are little-endian; big-endian hosts are not supported");

namespace spa {

namespace {

constexpr std::array<std::string_view, 15> kSupportedOps = {
    "Conv",    "Gemm",     "MatMul",            "BatchNormalization", "Add",
    "Relu",    "Sigmoid",  "MaxPool",           "AveragePool",        "GlobalAveragePool",
    "Flatten", "Concat",   "Softmax",           "Identity",           "Constant"};

bool is_default_domain(const std::string& domain) { return domain.empty() || domain == "ai.onnx"; }

Tensor float_tensor_from_proto(const onnx::TensorProto& t) {
  if (t.data_location() == onnx::TensorProto::EXTERNAL) {
    throw ModelError("tensor '" + t.name() + "' uses external data, which is not supported");
  }
  Shape shape(t.dims().begin(), t.dims().end());
  const int64_t n = element_count(shape);
  std::vector<float> values(static_cast<size_t>(n));
  if (t.has_raw_data()) {
    if (t.raw_data().size() != static_cast<size_t>(n) * sizeof(float)) {
      throw ModelError("tensor '" + t.name() + "' raw payload size does not match its shape");
    }
    std::memcpy(values.data(), t.raw_data().data(), t.raw_data().size());
  } else {
    if (t.float_data_size() != n) {
      throw ModelError("tensor '" + t.name() + "' has " + std::to_string(t.float_data_size()) +
                       " values for shape " + shape_string(shape));
    }
    std::copy(t.float_data().begin(), t.float_data().end(), values.begin());
  }
  return Tensor(std::move(shape), std::move(values));
}

IntTensor int_tensor_from_proto(const onnx::TensorProto& t) {
  IntTensor out;
  out.shape.assign(t.dims().begin(), t.dims().end());
  const int64_t n = element_count(out.shape);
  out.values.resize(static_cast<size_t>(n));
  if (t.has_raw_data()) {
    if (t.raw_data().size() != static_cast<size_t>(n) * sizeof(int64_t)) {
      throw ModelError("tensor '" + t.name() + "' raw payload size does not match its shape");
    }
    std::memcpy(out.values.data(), t.raw_data().data(), t.raw_data().size());
  } else {
    if (t.int64_data_size() != n) throw ModelError("tensor '" + t.name() + "' payload size mismatch");
    std::copy(t.int64_data().begin(), t.int64_data().end(), out.values.begin());
  }
  return out;
}

ValueInfo value_info_from_proto(const onnx::ValueInfoProto& v, bool require_shape) {
  ValueInfo info;
  info.name = v.name();
  if (!v.type().has_tensor_type()) {
    if (require_shape) throw ModelError("graph input '" + v.name() + "' is not a tensor");
    return info;
  }
  const auto& tt = v.type().tensor_type();
  if (tt.elem_type() != onnx::TensorProto::FLOAT && require_shape) {
    throw ModelError("graph input '" + v.name() + "' must be float32");
  }
  if (!tt.has_shape()) {
    if (require_shape) throw ModelError("graph input '" + v.name() + "' has no shape");
    return info;
  }
  int unknown = 0;
  for (const auto& d : tt.shape().dim()) {
    if (d.has_dim_value()) {
      info.shape.push_back(d.dim_value());
      info.symbolic.emplace_back();
    } else {
      info.shape.push_back(1);
      info.symbolic.push_back(d.has_dim_param() && !d.dim_param().empty()
                                  ? d.dim_param()
                                  : "unk__" + std::to_string(unknown++));
    }
  }
  return info;
}

AttributeValue attribute_from_proto(const onnx::AttributeProto& a, const std::string& node) {
  switch (a.type()) {
    case onnx::AttributeProto::INT:
      return static_cast<int64_t>(a.i());
    case onnx::AttributeProto::FLOAT:
      return a.f();
    case onnx::AttributeProto::STRING:
      return a.s();
    case onnx::AttributeProto::INTS:
      return std::vector<int64_t>(a.ints().begin(), a.ints().end());
    case onnx::AttributeProto::FLOATS:
      return std::vector<float>(a.floats().begin(), a.floats().end());
    default:
      throw ModelError("node '" + node + "': attribute '" + a.name() + "' has an unsupported type");
  }
}

void fold_constant(const onnx::NodeProto& n, ModelIR& ir) {
  if (n.output_size() != 1) throw ModelError("Constant node '" + n.name() + "' must have one output");
  const std::string& out = n.output(0);
  for (const auto& a : n.attribute()) {
    if (a.name() == "value") {
      const auto& t = a.t();
      if (t.data_type() == onnx::TensorProto::FLOAT) {
        ir.initializers.emplace(out, float_tensor_from_proto(t));
      } else if (t.data_type() == onnx::TensorProto::INT64) {
        ir.int_initializers.emplace(out, int_tensor_from_proto(t));
      } else {
        throw ModelError("Constant '" + n.name() + "' has a non-float payload");
      }
      return;
    }
    if (a.name() == "value_float") {
      ir.initializers.emplace(out, Tensor({}, {a.f()}));
      return;
    }
    if (a.name() == "value_floats") {
      std::vector<float> v(a.floats().begin(), a.floats().end());
      const auto n_values = static_cast<int64_t>(v.size());
      ir.initializers.emplace(out, Tensor({n_values}, std::move(v)));
      return;
    }
    if (a.name() == "value_int") {
      ir.int_initializers.emplace(out, IntTensor{{}, {a.i()}});
      return;
    }
    if (a.name() == "value_ints") {
      std::vector<int64_t> v(a.ints().begin(), a.ints().end());
      const auto n_values = static_cast<int64_t>(v.size());
      ir.int_initializers.emplace(out, IntTensor{{n_values}, std::move(v)});
      return;
    }
  }
  throw ModelError("Constant node '" + n.name() + "' has no supported value attribute");
}

// Folds alpha/beta into the parameters so every Gemm is plain Y = X·W + B.
void normalize_gemm(OperatorSpec& op, ModelIR& ir, const std::map<std::string, int>& use_count) {
  if (op.int_attr("transA", 0) != 0) {
    throw UnsupportedOperatorError("Gemm", "node '" + op.name + "' uses transA=1");
  }
  const float alpha = op.float_attr("alpha", 1.0f);
  const float beta = op.float_attr("beta", 1.0f);
  auto scale_param = [&](size_t slot, float factor, const char* what) {
    if (factor == 1.0f || !op.has_input(slot)) return;
    const std::string& name = op.inputs[slot];
    auto it = ir.initializers.find(name);
    if (it == ir.initializers.end() || use_count.at(name) != 1) {
      throw ModelError("Gemm '" + op.name + "': " + what +
                       " != 1 requires an unshared initializer operand");
    }
    for (float& v : it->second.data()) v *= factor;
  };
  scale_param(1, alpha, "alpha");
  scale_param(2, beta, "beta");
  op.attributes.erase("alpha");
  op.attributes.erase("beta");
  op.attributes.erase("transA");
}

void normalize_batchnorm(OperatorSpec& op, const std::map<std::string, int>& use_count) {
  if (op.int_attr("spatial", 1) != 1) {
    throw UnsupportedOperatorError("BatchNormalization", "node '" + op.name + "' has spatial=0");
  }
  if (op.int_attr("training_mode", 0) != 0) {
    throw UnsupportedOperatorError("BatchNormalization",
                                   "node '" + op.name + "' is in training mode");
  }
  for (size_t i = 1; i < op.outputs.size(); ++i) {
    if (!op.outputs[i].empty() && use_count.contains(op.outputs[i])) {
      throw ModelError("BatchNormalization '" + op.name + "' training outputs are consumed");
    }
  }
  op.outputs.resize(1);
  op.attributes.erase("spatial");
  op.attributes.erase("momentum");
  op.attributes.erase("training_mode");
  op.attributes.erase("is_test");
  op.attributes.erase("consumed_inputs");
}

std::vector<OperatorSpec> topological_order(std::vector<OperatorSpec> nodes,
                                            const std::set<std::string>& sources) {
  std::map<std::string, size_t> producer;
  for (size_t i = 0; i < nodes.size(); ++i)
    for (const auto& o : nodes[i].outputs) {
      if (o.empty()) continue;
      if (sources.contains(o) || !producer.emplace(o, i).second) {
        throw ModelError("value '" + o + "' is defined more than once");
      }
    }
  std::vector<int> pending(nodes.size(), 0);
  std::vector<std::vector<size_t>> dependents(nodes.size());
  for (size_t i = 0; i < nodes.size(); ++i) {
    for (const auto& in : nodes[i].inputs) {
      if (in.empty() || sources.contains(in)) continue;
      auto it = producer.find(in);
      if (it == producer.end()) {
        throw ModelError("node '" + nodes[i].name + "' input '" + in + "' is never defined");
      }
      ++pending[i];
      dependents[it->second].push_back(i);
    }
  }
  // Kahn with a min-index frontier keeps the original order whenever it is valid.
  std::set<size_t> ready;
  for (size_t i = 0; i < nodes.size(); ++i)
    if (pending[i] == 0) ready.insert(i);
  std::vector<OperatorSpec> ordered;
  ordered.reserve(nodes.size());
  while (!ready.empty()) {
    const size_t i = *ready.begin();
    ready.erase(ready.begin());
    for (size_t d : dependents[i])
      if (--pending[d] == 0) ready.insert(d);
    ordered.push_back(std::move(nodes[i]));
  }
  if (ordered.size() != nodes.size()) throw ModelError("graph contains a cycle");
  return ordered;
}

void fill_shape(onnx::TensorShapeProto* shape, const Shape& dims,
                const std::vector<std::string>& symbolic) {
  for (size_t i = 0; i < dims.size(); ++i) {
    auto* d = shape->add_dim();
    if (i < symbolic.size() && !symbolic[i].empty()) {
      d->set_dim_param(symbolic[i]);
    } else {
      d->set_dim_value(dims[i]);
    }
  }
}

void fill_value_info(onnx::ValueInfoProto* v, const std::string& name, const Shape& dims,
                     const std::vector<std::string>& symbolic) {
  v->set_name(name);
  auto* tt = v->mutable_type()->mutable_tensor_type();
  tt->set_elem_type(onnx::TensorProto::FLOAT);
  fill_shape(tt->mutable_shape(), dims, symbolic);
}

void fill_attribute(onnx::AttributeProto* a, const std::string& key, const AttributeValue& value) {
  a->set_name(key);
  std::visit(
      [a](const auto& v) {
        using V = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<V, int64_t>) {
          a->set_type(onnx::AttributeProto::INT);
          a->set_i(v);
        } else if constexpr (std::is_same_v<V, float>) {
          a->set_type(onnx::AttributeProto::FLOAT);
          a->set_f(v);
        } else if constexpr (std::is_same_v<V, std::string>) {
          a->set_type(onnx::AttributeProto::STRING);
          a->set_s(v);
        } else if constexpr (std::is_same_v<V, std::vector<int64_t>>) {
          a->set_type(onnx::AttributeProto::INTS);
          for (int64_t x : v) a->add_ints(x);
        } else {
          a->set_type(onnx::AttributeProto::FLOATS);
          for (float x : v) a->add_floats(x);
        }
      },
      value);
}

}  // namespace

int64_t OperatorSpec::int_attr(const std::string& key, int64_t fallback) const {
  auto it = attributes.find(key);
  if (it == attributes.end()) return fallback;
  if (const auto* v = std::get_if<int64_t>(&it->second)) return *v;
  throw ModelError("node '" + name + "': attribute '" + key + "' is not an integer");
}

float OperatorSpec::float_attr(const std::string& key, float fallback) const {
  auto it = attributes.find(key);
  if (it == attributes.end()) return fallback;
  if (const auto* v = std::get_if<float>(&it->second)) return *v;
  if (const auto* v = std::get_if<int64_t>(&it->second)) return static_cast<float>(*v);
  throw ModelError("node '" + name + "': attribute '" + key + "' is not a float");
}

std::vector<int64_t> OperatorSpec::ints_attr(const std::string& key,
                                             std::vector<int64_t> fallback) const {
  auto it = attributes.find(key);
  if (it == attributes.end()) return fallback;
  if (const auto* v = std::get_if<std::vector<int64_t>>(&it->second)) return *v;
  throw ModelError("node '" + name + "': attribute '" + key + "' is not an integer list");
}

std::string OperatorSpec::string_attr(const std::string& key, std::string fallback) const {
  auto it = attributes.find(key);
  if (it == attributes.end()) return fallback;
  if (const auto* v = std::get_if<std::string>(&it->second)) return *v;
  throw ModelError("node '" + name + "': attribute '" + key + "' is not a string");
}

const Shape& ModelIR::shape_of(const std::string& name) const {
  auto it = value_shapes.find(name);
  if (it == value_shapes.end()) throw ShapeError("no inferred shape for value '" + name + "'");
  return it->second;
}

const OperatorSpec* ModelIR::producer_of(const std::string& value) const {
  for (const auto& n : nodes)
    if (std::find(n.outputs.begin(), n.outputs.end(), value) != n.outputs.end()) return &n;
  return nullptr;
}

std::span<const std::string_view> supported_operators() { return kSupportedOps; }

bool is_supported_operator(std::string_view op_type) {
  return std::find(kSupportedOps.begin(), kSupportedOps.end(), op_type) != kSupportedOps.end();
}

ModelIR load_model(std::string_view bytes) {
  onnx::ModelProto proto;
  if (bytes.empty() || !proto.ParseFromArray(bytes.data(), static_cast<int>(bytes.size()))) {
    throw ModelError("malformed ONNX protocol-buffer encoding");
  }
  ModelIR ir;
  ir.ir_version = std::max<int64_t>(proto.ir_version(), 4);
  ir.producer_name = proto.producer_name().empty() ? "spaprune" : proto.producer_name();
  int64_t opset = -1;
  for (const auto& o : proto.opset_import())
    if (is_default_domain(o.domain())) opset = o.version();
  if (opset < 0) throw ModelError("model does not import the default ONNX operator set");
  if (opset < 11) throw ModelError("opset " + std::to_string(opset) + " is older than 11");
  ir.opset_version = opset;

  const auto& g = proto.graph();
  ir.graph_name = g.name().empty() ? "graph" : g.name();
  if (g.node_size() == 0) throw ModelError("graph has no nodes");

  for (const auto& t : g.initializer()) {
    if (t.data_type() == onnx::TensorProto::FLOAT) {
      ir.initializers.emplace(t.name(), float_tensor_from_proto(t));
    } else if (t.data_type() == onnx::TensorProto::INT64) {
      ir.int_initializers.emplace(t.name(), int_tensor_from_proto(t));
    } else {
      throw ModelError("initializer '" + t.name() + "' has data type " +
                       std::to_string(t.data_type()) + "; only float32 parameters are supported");
    }
  }

  std::map<std::string, int> use_count;
  for (const auto& n : g.node())
    for (const auto& in : n.input())
      if (!in.empty()) ++use_count[in];

  std::vector<OperatorSpec> nodes;
  int unnamed = 0;
  for (const auto& n : g.node()) {
    if (!is_default_domain(n.domain()) || !is_supported_operator(n.op_type())) {
      throw UnsupportedOperatorError(n.op_type(), n.name().empty() ? "" : "node '" + n.name() + "'");
    }
    if (n.op_type() == "Constant") {
      fold_constant(n, ir);
      continue;
    }
    OperatorSpec op;
    op.name = n.name().empty() ? n.op_type() + "_" + std::to_string(unnamed++) : n.name();
    op.op_type = n.op_type();
    op.inputs.assign(n.input().begin(), n.input().end());
    op.outputs.assign(n.output().begin(), n.output().end());
    while (!op.inputs.empty() && op.inputs.back().empty()) op.inputs.pop_back();
    while (!op.outputs.empty() && op.outputs.back().empty()) op.outputs.pop_back();
    for (const auto& a : n.attribute()) op.attributes[a.name()] = attribute_from_proto(a, op.name);
    nodes.push_back(std::move(op));
  }
  if (nodes.empty()) throw ModelError("graph has no nodes");

  for (auto& op : nodes) {
    if (op.op_type == "Gemm") normalize_gemm(op, ir, use_count);
    if (op.op_type == "BatchNormalization") normalize_batchnorm(op, use_count);
  }

  for (const auto& v : g.input()) {
    if (ir.initializers.contains(v.name()) || ir.int_initializers.contains(v.name())) continue;
    ir.graph_inputs.push_back(value_info_from_proto(v, true));
  }
  for (const auto& v : g.output()) ir.graph_outputs.push_back(value_info_from_proto(v, false));
  if (ir.graph_outputs.empty()) throw ModelError("graph has no outputs");

  std::set<std::string> sources;
  for (const auto& v : ir.graph_inputs) sources.insert(v.name);
  for (const auto& [name, _] : ir.initializers) sources.insert(name);
  for (const auto& [name, _] : ir.int_initializers) sources.insert(name);
  ir.nodes = topological_order(std::move(nodes), sources);
  check_connectivity(ir);
  return infer_shapes(std::move(ir));
}

ModelIR load_model_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open model file '" + path.string() + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return load_model(buf.str());
}

void check_connectivity(const ModelIR& ir) {
  std::set<std::string> defined;
  for (const auto& v : ir.graph_inputs) defined.insert(v.name);
  for (const auto& [name, _] : ir.initializers) defined.insert(name);
  for (const auto& [name, _] : ir.int_initializers) defined.insert(name);
  for (const auto& n : ir.nodes) {
    for (const auto& in : n.inputs)
      if (!in.empty() && !defined.contains(in)) {
        throw ModelError("node '" + n.name + "' input '" + in + "' is dangling");
      }
    for (const auto& o : n.outputs) defined.insert(o);
  }
  for (const auto& o : ir.graph_outputs)
    if (!defined.contains(o.name)) throw ModelError("graph output '" + o.name + "' is never produced");
}

std::string save_model(const ModelIR& model) {
  check_connectivity(model);
  const ModelIR ir = infer_shapes(model);

  onnx::ModelProto proto;
  proto.set_ir_version(ir.ir_version);
  proto.set_producer_name(ir.producer_name);
  auto* opset = proto.add_opset_import();
  opset->set_domain("");
  opset->set_version(ir.opset_version);

  auto* g = proto.mutable_graph();
  g->set_name(ir.graph_name);
  for (const auto& op : ir.nodes) {
    auto* n = g->add_node();
    n->set_name(op.name);
    n->set_op_type(op.op_type);
    for (const auto& in : op.inputs) n->add_input(in);
    for (const auto& out : op.outputs) n->add_output(out);
    for (const auto& [key, value] : op.attributes) fill_attribute(n->add_attribute(), key, value);
  }
  for (const auto& [name, t] : ir.initializers) {
    auto* p = g->add_initializer();
    p->set_name(name);
    p->set_data_type(onnx::TensorProto::FLOAT);
    for (int64_t d : t.shape()) p->add_dims(d);
    p->set_raw_data(t.data().data(), t.data().size() * sizeof(float));
  }
  for (const auto& [name, t] : ir.int_initializers) {
    auto* p = g->add_initializer();
    p->set_name(name);
    p->set_data_type(onnx::TensorProto::INT64);
    for (int64_t d : t.shape) p->add_dims(d);
    p->set_raw_data(t.values.data(), t.values.size() * sizeof(int64_t));
  }
  for (const auto& v : ir.graph_inputs) fill_value_info(g->add_input(), v.name, v.shape, v.symbolic);
  for (const auto& v : ir.graph_outputs) {
    // Output extents follow surgery; keep the symbolic batch names of the input model.
    fill_value_info(g->add_output(), v.name, ir.shape_of(v.name), v.symbolic);
  }
  std::string bytes;
  if (!proto.SerializeToString(&bytes)) throw ModelError("failed to serialize model");
  return bytes;
}

void save_model_file(const ModelIR& ir, const std::filesystem::path& path) {
  const std::string bytes = save_model(ir);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError("cannot write model file '" + path.string() + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw InputError("failed writing model file '" + path.string() + "'");
}

bool structurally_equal(const ModelIR& a, const ModelIR& b, std::string* why) {
  auto fail = [why](std::string msg) {
    if (why) *why = std::move(msg);
    return false;
  };
  if (a.opset_version != b.opset_version) return fail("opset differs");
  if (a.graph_inputs.size() != b.graph_inputs.size()) return fail("graph input count differs");
  for (size_t i = 0; i < a.graph_inputs.size(); ++i)
    if (a.graph_inputs[i] != b.graph_inputs[i]) return fail("graph input '" + a.graph_inputs[i].name + "' differs");
  if (a.graph_outputs.size() != b.graph_outputs.size()) return fail("graph output count differs");
  for (size_t i = 0; i < a.graph_outputs.size(); ++i)
    if (a.graph_outputs[i].name != b.graph_outputs[i].name) return fail("graph output names differ");
  if (a.nodes.size() != b.nodes.size()) return fail("node count differs");
  for (size_t i = 0; i < a.nodes.size(); ++i)
    if (a.nodes[i] != b.nodes[i]) return fail("node '" + a.nodes[i].name + "' differs");
  if (a.initializers.size() != b.initializers.size()) return fail("initializer count differs");
  for (const auto& [name, t] : a.initializers) {
    auto it = b.initializers.find(name);
    if (it == b.initializers.end()) return fail("initializer '" + name + "' missing");
    if (t.shape() != it->second.shape()) return fail("initializer '" + name + "' shape differs");
    if (std::memcmp(t.data().data(), it->second.data().data(), t.data().size() * sizeof(float)) != 0) {
      return fail("initializer '" + name + "' values differ");
    }
  }
  if (a.int_initializers != b.int_initializers) return fail("integer initializers differ");
  return true;
}

}  // namespace spa
