// Copyright 2026 The spaprune Authors
// SPDX-License-Identifier: Apache-2.0

#include "json_config.h"

#include <nlohmann/json.hpp>

namespace spa::cli {

namespace {

std::string scalar(const nlohmann::json& v, const std::string& key) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
  if (v.is_number()) return v.dump();
  throw CLI::ConversionError(key, "config values must be strings, numbers, booleans or arrays of those");
}

}  // namespace

std::string JsonConfig::to_config(const CLI::App* app, bool default_also, bool, std::string) const {
  nlohmann::json j = nlohmann::json::object();
  for (const CLI::Option* opt : app->get_options()) {
    if (opt->get_lnames().empty() || !opt->get_configurable()) continue;
    const std::string& name = opt->get_lnames().front();
    if (opt->count() > 0) {
      const auto& res = opt->results();
      j[name] = res.size() == 1 ? nlohmann::json(res.front()) : nlohmann::json(res);
    } else if (default_also && !opt->get_default_str().empty()) {
      j[name] = opt->get_default_str();
    }
  }
  return j.dump(2) + "\n";
}

std::vector<CLI::ConfigItem> JsonConfig::from_config(std::istream& input) const {
  nlohmann::json j;
  try {
    input >> j;
  } catch (const nlohmann::json::exception& e) {
    throw CLI::ConversionError("config", std::string("invalid JSON: ") + e.what());
  }
  if (!j.is_object()) throw CLI::ConversionError("config", "the config file must hold a JSON object");
  // config files are read after the command line, so the subcommand is known
  std::string active;
  for (const CLI::App* sub : app_->get_subcommands()) active = sub->get_name();
  std::vector<CLI::ConfigItem> items;
  auto add = [&items](std::vector<std::string> parents, const std::string& key, const nlohmann::json& value) {
    CLI::ConfigItem item;
    item.parents = std::move(parents);
    item.name = key;
    if (value.is_array()) {
      for (const auto& v : value) item.inputs.push_back(scalar(v, key));
    } else {
      item.inputs.push_back(scalar(value, key));
    }
    items.push_back(std::move(item));
  };
  for (const auto& [key, value] : j.items()) {
    if (value.is_object()) {
      if (app_->get_subcommand_no_throw(key) == nullptr) {
        throw CLI::ConversionError(key, "section does not name a subcommand");
      }
      if (key != active) continue;
      for (const auto& [k, v] : value.items()) add({key}, k, v);
    } else {
      add(active.empty() ? std::vector<std::string>{} : std::vector<std::string>{active}, key, value);
    }
  }
  return items;
}

}  // namespace spa::cli
