// Copyright 2026 The spaprune Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace spa {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operand shapes do not line up for a kernel.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// A kernel produced NaN/Inf or hit an unrecoverable numeric condition.
class NumericError : public Error {
 public:
  using Error::Error;
};

class SingularMatrixError : public NumericError {
 public:
  using NumericError::NumericError;
};

// The input model or a companion file is malformed or not representable.
class ModelError : public Error {
 public:
  using Error::Error;
};

class UnsupportedOperatorError : public ModelError {
 public:
  explicit UnsupportedOperatorError(std::string op_type, const std::string& where = {})
      : ModelError("unsupported operator '" + op_type + "'" +
                   (where.empty() ? std::string() : " (" + where + ")")),
        op_type_(std::move(op_type)) {}
  const std::string& op_type() const noexcept { return op_type_; }

 private:
  std::string op_type_;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

// Mask propagation reached an (operator, slot, axis) for which no rule exists.
class PropagationError : public Error {
 public:
  using Error::Error;
};

class TargetUnreachableError : public Error {
 public:
  TargetUnreachableError(double requested, double max_achievable)
      : Error("target reduction factor " + std::to_string(requested) +
              " is unreachable; maximum achievable is " + std::to_string(max_achievable)),
        requested_(requested),
        max_achievable_(max_achievable) {}
  double requested() const noexcept { return requested_; }
  double max_achievable() const noexcept { return max_achievable_; }

 private:
  double requested_;
  double max_achievable_;
};

class SolverError : public Error {
 public:
  SolverError(std::string layer, const std::string& what)
      : Error("layer '" + layer + "': " + what), layer_(std::move(layer)) {}
  const std::string& layer() const noexcept { return layer_; }

 private:
  std::string layer_;
};

// Structural surgery produced a model that contradicts the grouping. Always a bug
// upstream (or a hand-edited mask), never emitted silently.
class ConsistencyError : public Error {
 public:
  using Error::Error;
};

// Bad user input that is not a model: flags, manifests, score files, sidecars.
class InputError : public Error {
 public:
  using Error::Error;
};

}  // namespace spa
