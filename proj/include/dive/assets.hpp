#pragma once

#include <map>
#include <string>
#include <string_view>

namespace dive::assets {

/// Repo data files compiled into the library, keyed by repo-relative path
/// ("data/elements.csv", "prompts/triage.user.txt", ...).
const std::map<std::string, std::string_view, std::less<>>& embedded();

}  // namespace dive::assets
