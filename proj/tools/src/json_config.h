// Copyright 2026 The spaprune Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <CLI11.hpp>

namespace spa::cli {

// CLI11 config reader for a JSON object whose keys are long flag names
// without dashes: {"target-rf": 2.0, "criterion": "l1"}. Top-level keys apply
// to whichever subcommand is running; an object under a subcommand's name
// applies to that subcommand only. Booleans map to "true"/"false", arrays to
// repeated values.
class JsonConfig : public CLI::Config {
 public:
  explicit JsonConfig(const CLI::App* app) : app_(app) {}

  std::string to_config(const CLI::App* app, bool default_also, bool write_description,
                        std::string prefix) const override;
  std::vector<CLI::ConfigItem> from_config(std::istream& input) const override;

 private:
  const CLI::App* app_;
};

}  // namespace spa::cli
