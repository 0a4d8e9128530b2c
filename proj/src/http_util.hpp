// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <chrono>
#include <string>

namespace smtpo::detail {

// POSTs a JSON body to base_url + path and returns the response body.
// Throws BackendError: retriable for transport failures, timeouts, 429 and
// 5xx; non-retriable for other statuses. Adds a bearer token from
// SMTPO_API_KEY when set.
std::string post_json(const std::string& base_url, const std::string& path,
                      const std::string& body, std::chrono::milliseconds timeout);

}  // namespace smtpo::detail
