// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <string_view>

namespace smtpo {

using PromptVars = std::map<std::string, std::string, std::less<>>;

// Named prompt templates: the set compiled in from prompts/*.txt, optionally
// overridden file-by-file from a directory.
class PromptLibrary {
 public:
  static PromptLibrary embedded();
  // <dir>/<name>.txt replaces the embedded template of that name.
  static PromptLibrary with_overrides(const std::filesystem::path& dir);

  // ConfigError when the template is unknown.
  const std::string& get(std::string_view name) const;
  std::string render(std::string_view name, const PromptVars& vars) const;
  // Content hash over every template, recorded in run manifests.
  std::string version() const;
  const std::map<std::string, std::string, std::less<>>& templates() const { return templates_; }

 private:
  std::map<std::string, std::string, std::less<>> templates_;
};

// Replaces {name} placeholders. A placeholder without a value is a
// ConfigError; braces not forming a placeholder are copied through.
std::string render_template(std::string_view tmpl, const PromptVars& vars);

}  // namespace smtpo
