// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace smtpo {

// Lowercase, drop a trailing "(YYYY)" year, strip punctuation, collapse
// whitespace. Used for every title comparison in the engine.
std::string normalize_title(std::string_view raw);

// Lowercase alphanumeric tokens; everything else separates.
std::vector<std::string> tokenize(std::string_view text);

// Tokens re-joined by single spaces; phrase matching runs on this form.
std::string normalize_text(std::string_view text);

// Whole-token phrase containment on normalized forms.
bool contains_phrase(std::string_view normalized_haystack,
                     std::string_view normalized_phrase);

std::uint64_t fnv1a64(std::string_view data);
std::string content_key(std::string_view text);

std::string join(const std::vector<std::string>& parts, std::string_view sep);

std::string trim(std::string_view s);

}  // namespace smtpo
