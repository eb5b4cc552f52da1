// Copyright 2026 The spaprune Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "spa/compute_graph.h"
#include "spa/mask_propagation.h"

namespace spa::detail {

struct PortBinding {
  std::string port;
  NodeId value = kNoNode;
  std::vector<std::string> symbols;  // per concrete axis; empty string = unbound
  int64_t offset = 0;                // Concat inputs only
};

struct OpBinding {
  std::string variant;
  std::vector<PortBinding> ports;
  int64_t group_inputs = 1;
  int64_t group_outputs = 1;
  int64_t inner = 1;
};

/// Names the operator's ports and the symbol of every axis they carry.
OpBinding bind_operator(const ComputationalGraph& cg, NodeId op);

/// Rules of one operator type and variant.
std::vector<const PropagationRule*> rules_for(std::string_view op_type, std::string_view variant);

bool pattern_matches(std::string_view pattern, std::string_view name);

}  // namespace spa::detail
