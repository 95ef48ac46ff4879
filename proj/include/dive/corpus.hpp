#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "dive/util.hpp"

namespace dive {

struct FigureAsset {
  std::string id;
  std::string image_ref;  // relative to the bundle directory
  std::string caption;
  std::string anchor;     // exact token marking the figure's position in body

  friend bool operator==(const FigureAsset&, const FigureAsset&) = default;
};

/// One converted publication.
///
/// On disk a bundle is a directory holding `paper.md`, `figures.json` and a
/// `figures/` directory:
///
///     { "doi": "...", "title": "...", "year": 2021,
///       "figures": [ { "id": "fig1", "image": "figures/fig1.png",
///                      "caption": "...", "anchor": "![](figures/fig1.png)" } ] }
struct PaperBundle {
  std::filesystem::path root;
  std::string doi;
  std::string title;
  std::string body;
  std::vector<FigureAsset> figures;
  std::optional<int> year;

  const FigureAsset* find_figure(std::string_view id) const;
  const FigureAsset& figure(std::string_view id) const;  // throws UnknownFigureId

  friend bool operator==(const PaperBundle&, const PaperBundle&) = default;
};

inline constexpr std::size_t kDefaultContextRadius = 1500;

/// Loads and validates a bundle directory. Errors: MissingFile,
/// MalformedManifest, AnchorNotFound (details.figure_id), UnreadableImage.
PaperBundle load_bundle(const std::filesystem::path& dir);

/// Reads a figure's image bytes; throws ImageLoadError naming the path.
Bytes read_figure_image(const PaperBundle& bundle, const FigureAsset& figure);

/// Body text within `radius` characters (code points) on either side of the
/// figure's anchor, clipped to the body, with the anchor removed.
std::string context_window(const PaperBundle& bundle, std::string_view figure_id,
                           std::size_t radius = kDefaultContextRadius);

}  // namespace dive
