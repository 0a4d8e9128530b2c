// SPDX-License-Identifier: Apache-2.0
#include "smtpo/prompts.hpp"

#include <cctype>
#include <fstream>
#include <sstream>
#include <vector>

#include "smtpo/text.hpp"
#include "smtpo/types.hpp"

namespace smtpo {

namespace detail {
const std::vector<std::pair<std::string_view, std::string_view>>& embedded_prompts();
}

PromptLibrary PromptLibrary::embedded() {
  PromptLibrary lib;
  for (const auto& [name, body] : detail::embedded_prompts())
    lib.templates_.emplace(std::string(name), std::string(body));
  return lib;
}

PromptLibrary PromptLibrary::with_overrides(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir))
    throw ConfigError("prompt directory " + dir.string() + " does not exist");
  PromptLibrary lib = embedded();
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.path().extension() != ".txt") continue;
    std::ifstream in(entry.path());
    std::stringstream ss;
    ss << in.rdbuf();
    lib.templates_[entry.path().stem().string()] = ss.str();
  }
  return lib;
}

const std::string& PromptLibrary::get(std::string_view name) const {
  auto it = templates_.find(name);
  if (it == templates_.end()) throw ConfigError("unknown prompt template '" + std::string(name) + "'");
  return it->second;
}

std::string PromptLibrary::render(std::string_view name, const PromptVars& vars) const {
  return render_template(get(name), vars);
}

std::string PromptLibrary::version() const {
  std::string all;
  for (const auto& [name, body] : templates_) all += name + '\0' + body + '\0';
  return content_key(all);
}

std::string render_template(std::string_view tmpl, const PromptVars& vars) {
  std::string out;
  out.reserve(tmpl.size());
  std::size_t i = 0;
  while (i < tmpl.size()) {
    if (tmpl[i] == '{') {
      std::size_t j = i + 1;
      while (j < tmpl.size() &&
             (std::isalnum(static_cast<unsigned char>(tmpl[j])) || tmpl[j] == '_'))
        ++j;
      if (j < tmpl.size() && tmpl[j] == '}' && j > i + 1) {
        const std::string_view key = tmpl.substr(i + 1, j - i - 1);
        auto it = vars.find(key);
        if (it == vars.end())
          throw ConfigError("prompt placeholder {" + std::string(key) + "} has no value");
        out += it->second;
        i = j + 1;
        continue;
      }
    }
    out += tmpl[i++];
  }
  return out;
}

}  // namespace smtpo
