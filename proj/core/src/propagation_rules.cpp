// Copyright 2026 The spaprune Authors
// SPDX-License-Identifier: Apache-2.0

// Per-operator coupling rules, kept as data so new operators only need a port
// layout and a few table rows.

#include <sstream>

#include "rule_binding.h"
#include "spa/error.h"

namespace spa {

namespace {

using M = IndexMap;
using P = MapParam;

// clang-format off
const std::vector<PropagationRule>& table() {
  static const std::vector<PropagationRule> rules = {
    // Gemm in the layout Y = X·W + B with X (M,K), W (K,N), B (M,N), Y (M,N).
    // Y:M maps to X:M only; the shared K axis of W is not tied to the batch.
    {"Gemm", "", "X", "M", {{"B", "M"}, {"Y", "M"}}},
    {"Gemm", "", "X", "K", {{"W", "K"}}},
    {"Gemm", "", "W", "K", {{"X", "K"}}},
    {"Gemm", "", "W", "N", {{"B", "N"}, {"Y", "N"}}},
    {"Gemm", "", "B", "M", {{"X", "M"}, {"Y", "M"}}},
    {"Gemm", "", "B", "N", {{"W", "N"}, {"Y", "N"}}},
    {"Gemm", "", "Y", "M", {{"X", "M"}}},
    {"Gemm", "", "Y", "N", {{"W", "N"}, {"B", "N"}}},

    {"MatMul", "", "X", "L*", {{"Y", "L*"}}},
    {"MatMul", "", "Y", "L*", {{"X", "L*"}}},
    {"MatMul", "", "X", "M", {{"Y", "M"}}},
    {"MatMul", "", "Y", "M", {{"X", "M"}}},
    {"MatMul", "", "X", "K", {{"W", "K"}}},
    {"MatMul", "", "W", "K", {{"X", "K"}}},
    {"MatMul", "", "W", "N", {{"Y", "N"}}},
    {"MatMul", "", "Y", "N", {{"W", "N"}}},

    {"Conv", "dense", "X", "N", {{"Y", "N"}}},
    {"Conv", "dense", "Y", "N", {{"X", "N"}}},
    {"Conv", "dense", "X", "C", {{"W", "I"}}},
    {"Conv", "dense", "W", "I", {{"X", "C"}}},
    {"Conv", "dense", "W", "O", {{"B", "O"}, {"Y", "C"}}},
    {"Conv", "dense", "B", "O", {{"W", "O"}, {"Y", "C"}}},
    {"Conv", "dense", "Y", "C", {{"W", "O"}, {"B", "O"}}},

    // Every group must keep the same width, so a channel drags its
    // counterparts in the other groups along.
    {"Conv", "grouped", "X", "N", {{"Y", "N"}}},
    {"Conv", "grouped", "Y", "N", {{"X", "N"}}},
    {"Conv", "grouped", "X", "C", {{"W", "I", M::kModulo, P::kGroupInputs}}},
    {"Conv", "grouped", "W", "I", {{"X", "C", M::kResidues, P::kGroupInputs}}},
    {"Conv", "grouped", "W", "O", {{"W", "O", M::kResidues, P::kGroupOutputs}, {"B", "O"}, {"Y", "C"}}},
    {"Conv", "grouped", "B", "O", {{"W", "O"}, {"Y", "C"}}},
    {"Conv", "grouped", "Y", "C", {{"W", "O"}, {"B", "O"}}},

    // One input channel per group: the channel and its filters leave together
    // and the group count shrinks.
    {"Conv", "depthwise", "X", "N", {{"Y", "N"}}},
    {"Conv", "depthwise", "Y", "N", {{"X", "N"}}},
    {"Conv", "depthwise", "X", "C", {{"W", "O", M::kBlock, P::kGroupOutputs}}},
    {"Conv", "depthwise", "W", "O", {{"X", "C", M::kDivide, P::kGroupOutputs}, {"B", "O"}, {"Y", "C"}}},
    {"Conv", "depthwise", "B", "O", {{"W", "O"}, {"Y", "C"}}},
    {"Conv", "depthwise", "Y", "C", {{"W", "O"}, {"B", "O"}}},

    {"BatchNormalization", "", "X", "N", {{"Y", "N"}}},
    {"BatchNormalization", "", "Y", "N", {{"X", "N"}}},
    {"BatchNormalization", "", "X", "D*", {{"Y", "D*"}}},
    {"BatchNormalization", "", "Y", "D*", {{"X", "D*"}}},
    {"BatchNormalization", "", "X", "C", {{"scale", "C"}, {"B", "C"}, {"mean", "C"}, {"var", "C"}, {"Y", "C"}}},
    {"BatchNormalization", "", "scale", "C", {{"X", "C"}, {"B", "C"}, {"mean", "C"}, {"var", "C"}, {"Y", "C"}}},
    {"BatchNormalization", "", "B", "C", {{"X", "C"}, {"scale", "C"}, {"mean", "C"}, {"var", "C"}, {"Y", "C"}}},
    {"BatchNormalization", "", "mean", "C", {{"X", "C"}, {"scale", "C"}, {"B", "C"}, {"var", "C"}, {"Y", "C"}}},
    {"BatchNormalization", "", "var", "C", {{"X", "C"}, {"scale", "C"}, {"B", "C"}, {"mean", "C"}, {"Y", "C"}}},
    {"BatchNormalization", "", "Y", "C", {{"X", "C"}, {"scale", "C"}, {"B", "C"}, {"mean", "C"}, {"var", "C"}}},

    {"Add", "", "A", "D*", {{"B", "D*"}, {"Y", "D*"}}},
    {"Add", "", "B", "D*", {{"A", "D*"}, {"Y", "D*"}}},
    {"Add", "", "Y", "D*", {{"A", "D*"}, {"B", "D*"}}},

    {"Relu", "", "X", "D*", {{"Y", "D*"}}},
    {"Relu", "", "Y", "D*", {{"X", "D*"}}},
    {"Sigmoid", "", "X", "D*", {{"Y", "D*"}}},
    {"Sigmoid", "", "Y", "D*", {{"X", "D*"}}},
    {"Identity", "", "X", "D*", {{"Y", "D*"}}},
    {"Identity", "", "Y", "D*", {{"X", "D*"}}},
    {"Softmax", "", "X", "D*", {{"Y", "D*"}}},
    {"Softmax", "", "Y", "D*", {{"X", "D*"}}},

    {"MaxPool", "", "X", "N", {{"Y", "N"}}},
    {"MaxPool", "", "Y", "N", {{"X", "N"}}},
    {"MaxPool", "", "X", "C", {{"Y", "C"}}},
    {"MaxPool", "", "Y", "C", {{"X", "C"}}},
    {"AveragePool", "", "X", "N", {{"Y", "N"}}},
    {"AveragePool", "", "Y", "N", {{"X", "N"}}},
    {"AveragePool", "", "X", "C", {{"Y", "C"}}},
    {"AveragePool", "", "Y", "C", {{"X", "C"}}},
    {"GlobalAveragePool", "", "X", "N", {{"Y", "N"}}},
    {"GlobalAveragePool", "", "Y", "N", {{"X", "N"}}},
    {"GlobalAveragePool", "", "X", "C", {{"Y", "C"}}},
    {"GlobalAveragePool", "", "Y", "C", {{"X", "C"}}},

    {"Flatten", "", "X", "B", {{"Y", "B"}}},
    {"Flatten", "", "Y", "B", {{"X", "B"}}},
    {"Flatten", "", "X", "F", {{"Y", "Z", M::kBlock, P::kInnerSize}}},
    {"Flatten", "", "Y", "Z", {{"X", "F", M::kDivide, P::kInnerSize}}},

    {"Concat", "", "X*", "D*", {{"Y", "D*"}}},
    {"Concat", "", "Y", "D*", {{"X*", "D*"}}},
    {"Concat", "", "X*", "A", {{"Y", "A", M::kShift}}},
    {"Concat", "", "Y", "A", {{"X*", "A", M::kUnshift}}},
  };
  return rules;
}

const std::vector<PortLayout>& layouts() {
  static const std::vector<PortLayout> l = {
    {"Gemm", "X=A (M,K); W=B (K,N), or (N,K) with transB; B=C broadcast against (M,N); Y (M,N)"},
    {"MatMul", "X (L0..,M,K); W (K,N); Y (L0..,M,N)"},
    {"Conv", "X (N,C,H,W); W (O,I,KH,KW); B (O); Y (N,C,H,W). Variant dense when group=1, depthwise when I=1, grouped otherwise"},
    {"BatchNormalization", "X (N,C,D2..); scale, B, mean, var (C); Y like X"},
    {"Add", "A, B broadcast right-aligned against Y (D0..); size-1 broadcast axes are unbound"},
    {"Relu / Sigmoid / Identity / Softmax", "X (D0..); Y (D0..)"},
    {"MaxPool / AveragePool / GlobalAveragePool", "X (N,C,·,·); Y (N,C,·,·); spatial axes unbound"},
    {"Flatten", "X: axis before `axis` is B when axis=1, axis `axis` is F; Y (B,Z); Z blocks are the product of X's extents after F"},
    {"Concat", "inputs X0..Xk and Y; the concat axis is A, others D0..; Xk carries the running offset along A"},
  };
  return l;
}
// clang-format on

std::vector<std::string> numbered(const char* prefix, size_t n, size_t first = 0) {
  std::vector<std::string> out;
  for (size_t i = 0; i < n; ++i) out.push_back(prefix + std::to_string(first + i));
  return out;
}

// Right-aligned broadcast binding of `shape` against `out` carrying `names`.
std::vector<std::string> broadcast_symbols(const Shape& shape, const Shape& out,
                                           const std::vector<std::string>& names) {
  std::vector<std::string> sym(shape.size());
  for (size_t i = 0; i < shape.size(); ++i) {
    const size_t j = i + out.size() - shape.size();
    if (shape[i] == out[j]) sym[i] = names[j];
  }
  return sym;
}

}  // namespace

const char* to_string(IndexMap m) {
  switch (m) {
    case IndexMap::kIdentity: return "identity";
    case IndexMap::kModulo: return "modulo";
    case IndexMap::kResidues: return "residues";
    case IndexMap::kBlock: return "block";
    case IndexMap::kDivide: return "divide";
    case IndexMap::kShift: return "shift";
    case IndexMap::kUnshift: return "unshift";
  }
  return "?";
}

const char* to_string(MapParam p) {
  switch (p) {
    case MapParam::kNone: return "";
    case MapParam::kGroupInputs: return "Cg";
    case MapParam::kGroupOutputs: return "Mg";
    case MapParam::kInnerSize: return "inner";
  }
  return "?";
}

std::span<const PropagationRule> rule_table() { return table(); }
std::span<const PortLayout> port_layouts() { return layouts(); }

std::string rule_table_markdown() {
  std::ostringstream os;
  os << "# Operator reference\n\n"
     << "Generated by `spa-prune rules`. Each row says which axes a mask on one\n"
     << "operator port forces onto the operator's other ports. `*` in a port\n"
     << "matches every variadic input; `*` in an axis matches the whole family\n"
     << "and keeps the same symbol on the target.\n\n"
     << "Index maps: `identity` i; `modulo` i mod p; `residues` every i' with\n"
     << "i' mod p = i mod p; `block` [i·p, (i+1)·p); `divide` i / p; `shift` i plus\n"
     << "the source input's offset; `unshift` i minus the target input's offset.\n\n"
     << "## Supported operators\n\n";
  for (auto op : supported_operators()) os << "- " << op << (op == "Constant" ? " (folded into initializers on load)" : "") << "\n";
  os << "\n## Port layouts\n\n| Operator | Ports and axis symbols |\n|---|---|\n";
  for (const auto& l : layouts()) os << "| " << l.op_type << " | " << l.layout << " |\n";
  os << "\n## Rules\n\n| Operator | Variant | Mask on | Induces |\n|---|---|---|---|\n";
  for (const auto& r : table()) {
    os << "| " << r.op_type << " | " << (r.variant.empty() ? "-" : r.variant) << " | " << r.port << ":" << r.axis << " | ";
    for (size_t i = 0; i < r.targets.size(); ++i) {
      const auto& t = r.targets[i];
      if (i) os << ", ";
      os << t.port << ":" << t.axis;
      if (t.map != IndexMap::kIdentity) {
        os << " (" << to_string(t.map);
        if (t.param != MapParam::kNone) os << " " << to_string(t.param);
        os << ")";
      }
    }
    os << " |\n";
  }
  return os.str();
}

namespace detail {

bool pattern_matches(std::string_view pattern, std::string_view name) {
  if (!pattern.empty() && pattern.back() == '*') {
    pattern.remove_suffix(1);
    return name.size() > pattern.size() && name.starts_with(pattern);
  }
  return pattern == name;
}

std::vector<const PropagationRule*> rules_for(std::string_view op_type, std::string_view variant) {
  std::vector<const PropagationRule*> out;
  for (const auto& r : table())
    if (r.op_type == op_type && r.variant == variant) out.push_back(&r);
  return out;
}

OpBinding bind_operator(const ComputationalGraph& cg, NodeId op) {
  const OperatorSpec& spec = cg.op_spec(op);
  const auto ins = cg.op_inputs(op);
  const auto outs = cg.op_outputs(op);
  const std::string& t = spec.op_type;
  auto shape = [&cg](NodeId v) -> const Shape& { return cg.node(v).shape; };
  OpBinding b;
  auto add = [&b](std::string port, NodeId v, std::vector<std::string> sym) {
    if (v != kNoNode) b.ports.push_back(PortBinding{std::move(port), v, std::move(sym), 0});
  };
  auto slot = [&ins](size_t i) { return i < ins.size() ? ins[i] : kNoNode; };
  const NodeId y = outs.empty() ? kNoNode : outs[0];
  const Shape& ys = shape(y);

  if (t == "Gemm") {
    const bool trans_b = spec.int_attr("transB", 0) != 0;
    add("X", slot(0), {"M", "K"});
    add("W", slot(1), trans_b ? std::vector<std::string>{"N", "K"} : std::vector<std::string>{"K", "N"});
    if (slot(2) != kNoNode) add("B", slot(2), broadcast_symbols(shape(slot(2)), ys, {"M", "N"}));
    add("Y", y, {"M", "N"});
  } else if (t == "MatMul") {
    const size_t lead = shape(slot(0)).size() - 2;
    auto xs = numbered("L", lead);
    auto yl = xs;
    xs.insert(xs.end(), {"M", "K"});
    yl.insert(yl.end(), {"M", "N"});
    add("X", slot(0), xs);
    add("W", slot(1), {"K", "N"});
    add("Y", y, yl);
  } else if (t == "Conv") {
    const Shape& w = shape(slot(1));
    const int64_t group = spec.int_attr("group", 1);
    b.group_inputs = w[1];
    b.group_outputs = w[0] / group;
    b.variant = group == 1 ? "dense" : (w[1] == 1 ? "depthwise" : "grouped");
    add("X", slot(0), {"N", "C", "", ""});
    add("W", slot(1), {"O", "I", "", ""});
    add("B", slot(2), {"O"});
    add("Y", y, {"N", "C", "", ""});
  } else if (t == "BatchNormalization") {
    auto xs = numbered("D", ys.size() - 2, 2);
    xs.insert(xs.begin(), {"N", "C"});
    add("X", slot(0), xs);
    add("scale", slot(1), {"C"});
    add("B", slot(2), {"C"});
    add("mean", slot(3), {"C"});
    add("var", slot(4), {"C"});
    add("Y", y, xs);
  } else if (t == "Add") {
    const auto names = numbered("D", ys.size());
    add("A", slot(0), broadcast_symbols(shape(slot(0)), ys, names));
    add("B", slot(1), broadcast_symbols(shape(slot(1)), ys, names));
    add("Y", y, names);
  } else if (t == "Relu" || t == "Sigmoid" || t == "Identity" || t == "Softmax") {
    add("X", slot(0), numbered("D", ys.size()));
    add("Y", y, numbered("D", ys.size()));
  } else if (t == "MaxPool" || t == "AveragePool" || t == "GlobalAveragePool") {
    std::vector<std::string> s(ys.size());
    s[0] = "N";
    s[1] = "C";
    add("X", slot(0), s);
    add("Y", y, s);
  } else if (t == "Flatten") {
    const Shape& xs = shape(slot(0));
    const auto rank = static_cast<int64_t>(xs.size());
    int64_t axis = spec.int_attr("axis", 1);
    if (axis < 0) axis += rank;
    std::vector<std::string> xsym(xs.size());
    std::vector<std::string> ysym(2);
    if (axis == 1) xsym[0] = ysym[0] = "B";
    if (axis < rank) {
      xsym[static_cast<size_t>(axis)] = "F";
      ysym[1] = "Z";
      for (int64_t i = axis + 1; i < rank; ++i) b.inner *= xs[static_cast<size_t>(i)];
    }
    add("X", slot(0), xsym);
    add("Y", y, ysym);
  } else if (t == "Concat") {
    const auto rank = static_cast<int64_t>(ys.size());
    int64_t axis = spec.int_attr("axis", 1);
    if (axis < 0) axis += rank;
    auto sym = numbered("D", ys.size());
    sym[static_cast<size_t>(axis)] = "A";
    int64_t offset = 0;
    for (size_t i = 0; i < ins.size(); ++i) {
      b.ports.push_back(PortBinding{"X" + std::to_string(i), ins[i], sym, offset});
      offset += shape(ins[i])[static_cast<size_t>(axis)];
    }
    add("Y", y, sym);
  } else {
    throw UnsupportedOperatorError(t, "no propagation rules for node '" + spec.name + "'");
  }
  return b;
}

}  // namespace detail

}  // namespace spa
