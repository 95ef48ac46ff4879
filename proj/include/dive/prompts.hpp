#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>

namespace dive {

struct PromptTemplate {
  std::string name;
  std::string system;
  std::string user;
};

/// Prompt templates live in prompts/<name>.system.txt and <name>.user.txt.
/// The built-in copies are compiled in; an override directory, when given,
/// takes precedence file by file.
class PromptLibrary {
 public:
  explicit PromptLibrary(std::optional<std::filesystem::path> override_dir = std::nullopt);

  PromptTemplate get(std::string_view name) const;  // TemplateError if absent
  const std::optional<std::filesystem::path>& override_dir() const { return dir_; }

 private:
  std::optional<std::string> load(const std::string& file) const;
  std::optional<std::filesystem::path> dir_;
};

using PromptVars = std::map<std::string, std::string, std::less<>>;

/// Substitutes {{name}} placeholders. Unknown placeholders and unclosed
/// braces are TemplateError; unused variables are fine.
std::string render(std::string_view tmpl, const PromptVars& vars);

}  // namespace dive
