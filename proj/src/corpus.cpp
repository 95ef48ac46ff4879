#include "dive/corpus.hpp"

#include <set>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "dive/error.hpp"

namespace dive {

namespace fs = std::filesystem;
using nlohmann::json;

const FigureAsset* PaperBundle::find_figure(std::string_view id) const {
  for (const auto& f : figures) {
    if (f.id == id) return &f;
  }
  return nullptr;
}

const FigureAsset& PaperBundle::figure(std::string_view id) const {
  if (const auto* f = find_figure(id)) return *f;
  throw Error(ErrorCode::UnknownFigureId, fmt::format("no figure '{}' in {}", id, doi), {{"figure_id", id}});
}

namespace {

bool looks_like_image(const Bytes& b) {
  static constexpr std::uint8_t png[] = {0x89, 'P', 'N', 'G', 0x0D, 0x0A, 0x1A, 0x0A};
  if (b.size() >= 8 && std::equal(std::begin(png), std::end(png), b.begin())) return true;
  return b.size() >= 3 && b[0] == 0xFF && b[1] == 0xD8 && b[2] == 0xFF;
}

std::size_t count_occurrences(std::string_view hay, std::string_view needle) {
  std::size_t n = 0;
  for (auto p = hay.find(needle); p != std::string_view::npos; p = hay.find(needle, p + 1)) ++n;
  return n;
}

[[noreturn]] void malformed(const fs::path& manifest, const std::string& what) {
  throw Error(ErrorCode::MalformedManifest, fmt::format("{}: {}", manifest.string(), what),
              {{"path", manifest.string()}});
}

}  // namespace

PaperBundle load_bundle(const fs::path& dir) {
  const auto paper_md = dir / "paper.md";
  const auto manifest_path = dir / "figures.json";
  for (const auto& required : {paper_md, manifest_path, dir / "figures"}) {
    if (!fs::exists(required)) {
      throw Error(ErrorCode::MissingFile, "bundle is missing " + required.string(), {{"path", required.string()}});
    }
  }

  PaperBundle b;
  b.root = dir;
  b.body = read_text_file(paper_md);

  json m;
  try {
    m = json::parse(read_text_file(manifest_path));
  } catch (const json::parse_error& e) {
    malformed(manifest_path, e.what());
  }
  if (!m.is_object()) malformed(manifest_path, "top level must be an object");
  if (!m.contains("doi") || !m["doi"].is_string() || m["doi"].get<std::string>().empty()) {
    malformed(manifest_path, "\"doi\" must be a non-empty string");
  }
  b.doi = m["doi"].get<std::string>();
  if (auto it = m.find("title"); it != m.end() && !it->is_null()) {
    if (!it->is_string()) malformed(manifest_path, "\"title\" must be a string");
    b.title = it->get<std::string>();
  }
  if (auto it = m.find("year"); it != m.end() && !it->is_null()) {
    if (!it->is_number_integer()) malformed(manifest_path, "\"year\" must be an integer or null");
    b.year = it->get<int>();
  }
  auto figs = m.find("figures");
  if (figs == m.end() || !figs->is_array()) malformed(manifest_path, "\"figures\" must be an array");

  std::set<std::string> ids;
  for (const auto& f : *figs) {
    if (!f.is_object()) malformed(manifest_path, "figure entries must be objects");
    FigureAsset fig;
    for (auto [key, target] : {std::pair{"id", &fig.id}, std::pair{"image", &fig.image_ref},
                               std::pair{"caption", &fig.caption}, std::pair{"anchor", &fig.anchor}}) {
      auto it = f.find(key);
      if (it == f.end() || !it->is_string() || it->get<std::string>().empty()) {
        malformed(manifest_path, fmt::format("figure field \"{}\" must be a non-empty string", key));
      }
      *target = it->get<std::string>();
    }
    if (!ids.insert(fig.id).second) malformed(manifest_path, "duplicate figure id '" + fig.id + "'");

    auto n = count_occurrences(b.body, fig.anchor);
    if (n == 0) {
      throw Error(ErrorCode::AnchorNotFound, fmt::format("anchor of figure '{}' not found in paper.md", fig.id),
                  {{"figure_id", fig.id}, {"anchor", fig.anchor}});
    }
    if (n > 1) malformed(manifest_path, fmt::format("anchor of figure '{}' occurs {} times", fig.id, n));

    const auto image_path = dir / fig.image_ref;
    Bytes bytes;
    try {
      bytes = read_binary_file(image_path);
    } catch (const Error&) {
      throw Error(ErrorCode::UnreadableImage, "cannot read image " + image_path.string(),
                  {{"figure_id", fig.id}, {"path", image_path.string()}});
    }
    if (!looks_like_image(bytes)) {
      throw Error(ErrorCode::UnreadableImage, "not a PNG or JPEG image: " + image_path.string(),
                  {{"figure_id", fig.id}, {"path", image_path.string()}});
    }
    b.figures.push_back(std::move(fig));
  }
  return b;
}

Bytes read_figure_image(const PaperBundle& bundle, const FigureAsset& figure) {
  const auto path = bundle.root / figure.image_ref;
  try {
    auto bytes = read_binary_file(path);
    if (bytes.empty()) throw Error(ErrorCode::ImageLoadError, "empty image");
    return bytes;
  } catch (const Error&) {
    throw Error(ErrorCode::ImageLoadError, "cannot load image " + path.string(),
                {{"path", path.string()}, {"figure_id", figure.id}});
  }
}

namespace {

// Byte offset reached by stepping `count` code points backwards from `pos`.
std::size_t step_back(std::string_view s, std::size_t pos, std::size_t count) {
  while (count > 0 && pos > 0) {
    pos = utf8_floor(s, pos - 1);
    --count;
  }
  return pos;
}

std::size_t step_forward(std::string_view s, std::size_t pos, std::size_t count) {
  while (count > 0 && pos < s.size()) {
    ++pos;
    while (pos < s.size() && (static_cast<unsigned char>(s[pos]) & 0xC0) == 0x80) ++pos;
    --count;
  }
  return pos;
}

}  // namespace

std::string context_window(const PaperBundle& bundle, std::string_view figure_id, std::size_t radius) {
  const auto& fig = bundle.figure(figure_id);
  if (radius == 0) throw Error(ErrorCode::InvalidArgument, "context radius must be positive");
  std::string_view body = bundle.body;
  const auto at = body.find(fig.anchor);
  if (at == std::string_view::npos) {
    throw Error(ErrorCode::AnchorNotFound, "anchor missing for " + fig.id, {{"figure_id", fig.id}});
  }
  const auto after = at + fig.anchor.size();
  const auto lo = step_back(body, at, radius);
  const auto hi = step_forward(body, after, radius);
  std::string out(body.substr(lo, at - lo));
  out.append(body.substr(after, hi - after));
  return out;
}

}  // namespace dive
