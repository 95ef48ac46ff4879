#include "dive/prompts.hpp"

#include "dive/assets.hpp"
#include "dive/error.hpp"
#include "dive/util.hpp"

namespace dive {

PromptLibrary::PromptLibrary(std::optional<std::filesystem::path> override_dir) : dir_(std::move(override_dir)) {}

std::optional<std::string> PromptLibrary::load(const std::string& file) const {
  if (dir_) {
    auto p = *dir_ / file;
    if (std::filesystem::exists(p)) return read_text_file(p);
  }
  const auto& assets = assets::embedded();
  if (auto it = assets.find("prompts/" + file); it != assets.end()) return std::string(it->second);
  return std::nullopt;
}

PromptTemplate PromptLibrary::get(std::string_view name) const {
  PromptTemplate t{std::string(name), {}, {}};
  auto sys = load(t.name + ".system.txt");
  auto user = load(t.name + ".user.txt");
  if (!sys || !user) {
    throw Error(ErrorCode::TemplateError, "no prompt template named '" + t.name + "'", {{"template", t.name}});
  }
  t.system = std::move(*sys);
  t.user = std::move(*user);
  return t;
}

std::string render(std::string_view tmpl, const PromptVars& vars) {
  std::string out;
  out.reserve(tmpl.size());
  std::size_t pos = 0;
  while (true) {
    auto open = tmpl.find("{{", pos);
    if (open == std::string_view::npos) break;
    auto close = tmpl.find("}}", open + 2);
    if (close == std::string_view::npos) {
      throw Error(ErrorCode::TemplateError, "unclosed placeholder", {{"offset", open}});
    }
    out.append(tmpl.substr(pos, open - pos));
    auto key = trim(tmpl.substr(open + 2, close - open - 2));
    auto it = vars.find(key);
    if (it == vars.end()) {
      throw Error(ErrorCode::TemplateError, "no value for placeholder '" + std::string(key) + "'",
                  {{"placeholder", key}});
    }
    out += it->second;
    pos = close + 2;
  }
  out.append(tmpl.substr(pos));
  return out;
}

}  // namespace dive
