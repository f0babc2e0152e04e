#ifndef PATCHRL_PNG_IO_HPP
#define PATCHRL_PNG_IO_HPP

#include <string>
#include <vector>

#include "patchrl/image.hpp"

namespace patchrl::io {

/// 8-bit PNG, gray or RGB depending on channel count; values scaled from
/// [0,1] by round(v * 255).
void save_png(const std::string& path, const img::Image& image);
img::Image load_png(const std::string& path);

/// Exclusion-zone sidecar: JSON list of {row, col, h, w}.
void save_exclusions(const std::string& path, const std::vector<img::Rect>& rects);
std::vector<img::Rect> load_exclusions(const std::string& path);

}  // namespace patchrl::io

#endif  // PATCHRL_PNG_IO_HPP
